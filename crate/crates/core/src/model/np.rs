use super::{
    assemble_terms, log_likelihood, FeatureMap, ForwardConfig, Masks, Model, Prediction,
    TaskTerms,
};
use crate::context::{Pooling, SetEncoder};
use crate::data::{LabelKind, TaskData};
use crate::gaussian::DiagGaussian;
use crate::nn::{Bound, Mlp};
use crate::rng::NoiseSource;
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tape, Tensor};
use crate::Result;

/// Vanilla neural process: one latent `z` per task, a mean-pooling encoder
/// over `[feature ; label]` rows and a decoder `g([feature ; z])`.
#[derive(Debug, Clone)]
pub struct NpNets {
    pub features: FeatureMap,
    pub encoder: SetEncoder,
    pub decoder: Mlp,
    /// Condition on the union of every task's context set.
    pub all_context: bool,
}

fn masked<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor<S>,
    mask: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    Ok(match mask {
        Some(m) => tape.dropout(&x, m)?,
        None => x,
    })
}

fn stack<S: Scalar>(tape: &Tape<S>, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    Ok(tape.concat(parts, Axis::Rows)?)
}

impl NpNets {
    pub fn encode<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        features: &Tensor<S>,
        labels: &Tensor<S>,
    ) -> Result<DiagGaussian<S>> {
        self.encoder.encode(
            tape,
            p,
            features,
            Some(labels),
            None,
            Pooling::All,
            model.arch.logvar_clamp,
        )
    }

    /// Decoder output for every row of `features` given one `1 × d_z` draw.
    pub fn decode<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        features: &Tensor<S>,
        z: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let zb = tape.broadcast_rows(z, features.rows())?;
        Ok(self.decoder.forward(tape, p, &tape.concat(&[features, &zb], Axis::Cols)?)?)
    }

    /// Prior (context) and posterior (target) latent distributions of task
    /// `l`. With `all_context` the prior reads every context set and the
    /// posterior reads the task's target set plus the other tasks' contexts.
    #[allow(clippy::too_many_arguments)]
    fn latents<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        ctx: &[Tensor<S>],
        l: usize,
        tgt: Option<&Tensor<S>>,
    ) -> Result<(DiagGaussian<S>, Option<DiagGaussian<S>>)> {
        let task = &episode[l];
        if !self.all_context {
            let prior = self.encode(model, tape, p, &ctx[l], &task.context_y)?;
            let post = match tgt {
                Some(t) => Some(self.encode(model, tape, p, t, &task.target_y)?),
                None => None,
            };
            return Ok((prior, post));
        }
        let xs: Vec<&Tensor<S>> = ctx.iter().collect();
        let ys: Vec<&Tensor<S>> = episode.iter().map(|t| &t.context_y).collect();
        let prior = self.encode(model, tape, p, &stack(tape, &xs)?, &stack(tape, &ys)?)?;
        let post = match tgt {
            Some(t) => {
                let mut xs = vec![t];
                let mut ys = vec![&task.target_y];
                for k in (0..episode.len()).filter(|&k| k != l) {
                    xs.push(&ctx[k]);
                    ys.push(&episode[k].context_y);
                }
                Some(self.encode(model, tape, p, &stack(tape, &xs)?, &stack(tape, &ys)?)?)
            }
            None => None,
        };
        Ok((prior, post))
    }

    /// Noise order per task: `n_a · n_f` tensors of shape `1 × d_z`.
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
        let ctx: Vec<Tensor<S>> = episode
            .iter()
            .enumerate()
            .map(|(l, t)| {
                let f = self.features.apply(tape, p, &t.context_x)?;
                masked(tape, f, masks.context[l].as_ref())
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let tgt = self.features.apply(tape, p, &task.target_x)?;
            let tgt_in = masked(tape, tgt.clone(), masks.target[l].as_ref())?;
            let (prior, post) = self.latents(model, tape, p, episode, &ctx, l, Some(&tgt_in))?;
            let post = post.expect("posterior requested");
            let kl = post.kl(tape, &prior)?;
            let mut lls = Vec::with_capacity(cfg.n_a * cfg.n_f);
            for _ in 0..cfg.n_a * cfg.n_f {
                let eps = noise.standard_normal(post.shape().to_vec());
                let z = post.reparameterize(tape, &eps)?;
                let out = self.decode(tape, p, &tgt, &z)?;
                lls.push(log_likelihood(tape, &out, &task.target_y, model.kind, cfg.sigma2)?);
            }
            let zero = Tensor::scalar(S::zero());
            out.push(assemble_terms(tape, l, vec![lls], vec![kl], zero, cfg)?);
        }
        Ok(out)
    }

    pub(super) fn predict<S: Scalar>(
        &self,
        model: &Model<S>,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        cfg: &ForwardConfig,
    ) -> Result<Vec<Prediction<S>>> {
        let ctx: Vec<Tensor<S>> = episode
            .iter()
            .map(|t| self.features.apply(tape, p, &t.context_x))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(episode.len());
        for (l, task) in episode.iter().enumerate() {
            let tgt = self.features.apply(tape, p, &task.target_x)?;
            let (prior, _) = self.latents(model, tape, p, episode, &ctx, l, None)?;
            let mut draws = Vec::with_capacity(cfg.n_a * cfg.n_f);
            for _ in 0..cfg.n_a * cfg.n_f {
                let eps = noise.standard_normal(prior.shape().to_vec());
                let z = prior.reparameterize(tape, &eps)?;
                let out = self.decode(tape, p, &tgt, &z)?;
                draws.push(match model.kind {
                    LabelKind::OneHot { .. } => tape.log_softmax(&out)?,
                    LabelKind::Real => out,
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
