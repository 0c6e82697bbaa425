use super::{
    assemble_terms, log_likelihood, Arch, ForwardConfig, GaussianLinear, Masks, Model,
    Prediction, TaskTerms, Variant,
};
use crate::data::{LabelKind, TaskData};
use crate::gaussian::DiagGaussian;
use crate::nn::{Bound, Linear, Mlp, ParamStore};
use crate::rng::{NoiseSource, RngStream};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::Result;

#[derive(Debug, Clone)]
pub enum Head {
    Point(Linear),
    Gaussian(GaussianLinear),
}

/// Feature-extractor trunks plus per-task linear heads.
///
/// Single-task variants own one trunk per task; multi-task variants share a
/// single trunk. Variational variants keep Gaussian head weights with a
/// standard-normal prior.
#[derive(Debug, Clone)]
pub struct BaselineNets {
    pub trunks: Vec<Mlp>,
    pub heads: Vec<Head>,
}

impl BaselineNets {
    pub(super) fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        variant: Variant,
        arch: &Arch,
        kind: LabelKind,
        input_dim: usize,
        tasks: usize,
        rng: &mut RngStream,
    ) -> Self {
        let shared = matches!(variant, Variant::Bmtl | Variant::Vbmtl);
        let variational = matches!(variant, Variant::Vstl | Variant::Vbmtl);
        let h = arch.trunk_hidden;
        let n_trunks = if shared { 1 } else { tasks };
        let trunks = (0..n_trunks)
            .map(|k| Mlp::new(store, &format!("trunk{k}"), &[input_dim, h, h], true, rng))
            .collect();
        let heads = (0..tasks)
            .map(|l| {
                let name = format!("head{l}");
                if variational {
                    Head::Gaussian(GaussianLinear::new(store, &name, h, kind.outputs(), rng))
                } else {
                    Head::Point(Linear::new(store, &name, h, kind.outputs(), rng))
                }
            })
            .collect();
        Self { trunks, heads }
    }

    pub fn trunk(&self, task: usize) -> &Mlp {
        if self.trunks.len() == 1 {
            &self.trunks[0]
        } else {
            &self.trunks[task]
        }
    }

    /// Output of task `task` for one draw of its head. Point heads draw no
    /// noise; Gaussian heads draw a weight tensor then a bias tensor.
    /// Also returns the head KL against `N(0, 1)`.
    #[allow(clippy::too_many_arguments)]
    fn output<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        task: usize,
        x: &Tensor<S>,
        mask: Option<&Tensor<S>>,
        noise: &mut dyn NoiseSource<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let x = match mask {
            Some(m) => tape.dropout(x, m)?,
            None => x.clone(),
        };
        let feats = self.trunk(task).forward(tape, p, &x)?;
        match &self.heads[task] {
            Head::Point(lin) => Ok((lin.forward(tape, p, &feats)?, Tensor::scalar(S::zero()))),
            Head::Gaussian(g) => {
                let w = DiagGaussian::new(p.get(g.w_mean).clone(), p.get(g.w_logvar).clone())?;
                let b = DiagGaussian::new(p.get(g.b_mean).clone(), p.get(g.b_logvar).clone())?;
                let kl = tape.add(
                    &w.kl(tape, &DiagGaussian::standard(w.shape().to_vec()))?,
                    &b.kl(tape, &DiagGaussian::standard(b.shape().to_vec()))?,
                )?;
                let ws = w.reparameterize(tape, &noise.standard_normal(w.shape().to_vec()))?;
                let bs = b.reparameterize(tape, &noise.standard_normal(b.shape().to_vec()))?;
                let out = tape.add(
                    &tape.matmul(&feats, &ws)?,
                    &tape.broadcast_rows(&bs, feats.rows())?,
                )?;
                Ok((out, kl))
            }
        }
    }

    fn variational(&self) -> bool {
        matches!(self.heads.first(), Some(Head::Gaussian(_)))
    }

    /// Trains on the target set; a single head draw per task.
    #[allow(clippy::too_many_arguments)]
    pub(super) fn train<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        masks: &Masks<S>,
        cfg: &ForwardConfig,
    ) -> Result<Vec<TaskTerms<S>>> {
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let (pred, kl) =
                self.output(tape, p, l, &task.target_x, masks.target[l].as_ref(), noise)?;
            let ll = log_likelihood(tape, &pred, &task.target_y, model.kind, cfg.sigma2)?;
            let zero = Tensor::scalar(S::zero());
            out.push(assemble_terms(tape, l, vec![vec![ll]], vec![kl], zero, cfg)?);
        }
        Ok(out)
    }

    /// Context sets are ignored; Gaussian heads average `n_a · n_f` draws.
    pub(super) fn predict<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        cfg: &ForwardConfig,
    ) -> Result<Vec<Prediction<S>>> {
        let draws_per_task = if self.variational() { cfg.n_a * cfg.n_f } else { 1 };
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let mut draws = Vec::with_capacity(draws_per_task);
            for _ in 0..draws_per_task {
                let (o, _) = self.output(tape, p, l, &task.target_x, None, noise)?;
                draws.push(match model.kind {
                    LabelKind::OneHot { .. } => tape.log_softmax(&o)?,
                    LabelKind::Real => o,
                });
            }
            out.push(Prediction {
                task: l,
                kind: model.kind,
                draws,
            });
        }
        Ok(out)
    }
}
