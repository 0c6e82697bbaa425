use super::{
    assemble_terms, log_likelihood, predict_linear, FeatureMap, ForwardConfig, Masks, Model,
    Prediction, TaskTerms,
};
use crate::context::{
    build_global_context, ContextMode, GlobalContext, HierarchyNets, SummaryRole,
};
use crate::data::{LabelKind, Set, TaskData};
use crate::nn::Bound;
use crate::rng::NoiseSource;
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tape, Tensor};
use crate::Result;

#[derive(Debug, Clone)]
pub struct MtnpNets {
    pub features: FeatureMap,
    pub hierarchy: HierarchyNets,
}

impl MtnpNets {
    fn mode(kind: LabelKind) -> ContextMode {
        match kind {
            LabelKind::OneHot { classes } => ContextMode::Classification { classes },
            LabelKind::Real => ContextMode::Regression,
        }
    }

    /// Features of every task's context set and `M` built from them.
    pub fn global_context<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        cfg: &ForwardConfig,
    ) -> Result<(Vec<Tensor<S>>, GlobalContext<S>)> {
        let ctx: Vec<Tensor<S>> = episode
            .iter()
            .map(|t| self.features.apply(tape, p, &t.context_x))
            .collect::<Result<_, _>>()?;
        let labels: Vec<Vec<usize>> = if model.kind.is_classification() {
            episode.iter().map(|t| t.labels(Set::Context)).collect()
        } else {
            Vec::new()
        };
        let m = build_global_context(tape, &ctx, &labels, Self::mode(model.kind), cfg.missing_class)?;
        Ok((ctx, m))
    }

    /// Adapted knowledge `C × d` for task `task` given a summary draw.
    pub fn adapted<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        alpha: &Tensor<S>,
        m: &GlobalContext<S>,
        task: usize,
    ) -> Result<Tensor<S>> {
        if model.arch.adapter_bypass {
            let row = tape.slice(&m.values, Axis::Rows, task, task + 1)?;
            Ok(tape.reshape(&row, vec![m.classes(), m.dim])?)
        } else {
            self.hierarchy.adapter.adapt_all(tape, p, alpha, m)
        }
    }

    /// Noise order per task: for each of `n_a` summary draws, one `1 × d_α`
    /// tensor followed by `n_f` tensors of shape `C × d`.
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
    ) -> Result<(Vec<TaskTerms<S>>, Vec<(usize, usize)>)> {
        let (ctx, m) = self.global_context(model, tape, p, episode, cfg)?;
        let h = &self.hierarchy;
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let tgt = self.features.apply(tape, p, &task.target_x)?;
            let mask_t = masks.target[l].as_ref();
            let mask_c = masks.context[l].as_ref();
            let q_alpha =
                h.encode_summary(tape, p, &tgt, &task.target_y, SummaryRole::Posterior, mask_t)?;
            let p_alpha =
                h.encode_summary(tape, p, &ctx[l], &task.context_y, SummaryRole::Prior, mask_c)?;
            let kl_a = q_alpha.kl(tape, &p_alpha)?;
            let q_psi = h.encode_function_posterior(
                tape,
                p,
                &tgt,
                &task.target_y,
                &task.rows_by_class(Set::Target),
                mask_t,
            )?;
            let mut lls = Vec::with_capacity(cfg.n_a);
            let mut kls = Vec::with_capacity(cfg.n_a);
            for _ in 0..cfg.n_a {
                let eps = noise.standard_normal(q_alpha.shape().to_vec());
                let alpha = q_alpha.reparameterize(tape, &eps)?;
                let adapted = self.adapted(model, tape, p, &alpha, &m, l)?;
                let p_psi = h.function_prior(tape, p, &adapted)?;
                kls.push(q_psi.kl(tape, &p_psi)?);
                let mut inner = Vec::with_capacity(cfg.n_f);
                for _ in 0..cfg.n_f {
                    let eps = noise.standard_normal(q_psi.shape().to_vec());
                    let psi = q_psi.reparameterize(tape, &eps)?;
                    let logits = predict_linear(tape, &psi, &tgt)?;
                    inner.push(log_likelihood(tape, &logits, &task.target_y, model.kind, cfg.sigma2)?);
                }
                lls.push(inner);
            }
            out.push(assemble_terms(tape, l, lls, kls, kl_a, cfg)?);
        }
        Ok((out, m.backfilled))
    }

    /// Noise order per task matches [`Self::train`]: a summary draw from the
    /// context prior, then `n_f` function draws from the function prior.
    pub(super) fn predict<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        cfg: &ForwardConfig,
    ) -> Result<Vec<Prediction<S>>> {
        let (ctx, m) = self.global_context(model, tape, p, episode, cfg)?;
        let h = &self.hierarchy;
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let tgt = self.features.apply(tape, p, &task.target_x)?;
            let p_alpha =
                h.encode_summary(tape, p, &ctx[l], &task.context_y, SummaryRole::Prior, None)?;
            let mut draws = Vec::with_capacity(cfg.n_a * cfg.n_f);
            for _ in 0..cfg.n_a {
                let eps = noise.standard_normal(p_alpha.shape().to_vec());
                let alpha = p_alpha.reparameterize(tape, &eps)?;
                let adapted = self.adapted(model, tape, p, &alpha, &m, l)?;
                let p_psi = h.function_prior(tape, p, &adapted)?;
                for _ in 0..cfg.n_f {
                    let eps = noise.standard_normal(p_psi.shape().to_vec());
                    let psi = p_psi.reparameterize(tape, &eps)?;
                    let out = predict_linear(tape, &psi, &tgt)?;
                    draws.push(match model.kind {
                        LabelKind::OneHot { .. } => tape.log_softmax(&out)?,
                        LabelKind::Real => out,
                    });
                }
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
