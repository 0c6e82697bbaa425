use std::io::Write;

use super::{anneal, learning_rate, make_episode, Adam, TrainConfig};
use crate::data::{Dataset, TaskData};
use crate::model::{Masks, Model, TrainOutput};
use crate::nn::Bound;
use crate::rng::{NoiseSource, RngStream};
use crate::scalar::Scalar;
use crate::tensor::Tape;
use crate::{Error, Result};

const EPISODE_STREAM: u64 = 0xE915;
const NOISE_STREAM: u64 = 0x4015;
const MASK_STREAM: u64 = 0x3A5C;

pub const LOG_HEADER: &str = "step\tloss\tnll\tkl_f\tkl_a\tlambda_f\tlambda_a\tlr";

/// The objective at `step`: per-task negative ELBO terms summed over tasks,
/// with annealed KL weights. A non-finite loss is an error listing every
/// term.
#[allow(clippy::too_many_arguments)]
pub fn episode_loss<S: Scalar>(
    model: &Model<S>,
    tape: &Tape<S>,
    p: &Bound<S>,
    batch: &[TaskData<S>],
    cfg: &TrainConfig,
    step: u64,
    noise: &mut dyn NoiseSource<S>,
    masks: &Masks<S>,
) -> Result<TrainOutput<S>> {
    let out = model.train_forward(tape, p, batch, noise, masks, &cfg.forward(step))?;
    if !out.loss.item().is_finite() {
        let detail = out
            .tasks
            .iter()
            .map(|t| {
                format!(
                    "task {}: nll={} kl_f={} kl_a={}",
                    t.task,
                    t.nll.item(),
                    t.kl_f.item(),
                    t.kl_a.item()
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::NonFinite {
            what: format!("loss at step {step}"),
            detail,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub nll: f64,
    pub kl_f: f64,
    pub kl_a: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub lr: f64,
}

impl LogRow {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.loss,
            self.nll,
            self.kl_f,
            self.kl_a,
            self.lambda_f,
            self.lambda_a,
            self.lr
        )
    }
}

/// Sequential training loop. Episodes, reparameterization noise and dropout
/// masks come from three streams of the run seed, so the episode sequence
/// depends only on the seed and the data, never on the model variant.
pub struct Trainer<S> {
    pub model: Model<S>,
    pub cfg: TrainConfig,
    adam: Adam<S>,
    step: u64,
    episodes: RngStream,
    noise: RngStream,
    masks: RngStream,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: Model<S>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&model.store);
        Ok(Self {
            adam,
            step: 0,
            episodes: RngStream::with_stream(cfg.seed, EPISODE_STREAM),
            noise: RngStream::with_stream(cfg.seed, NOISE_STREAM),
            masks: RngStream::with_stream(cfg.seed, MASK_STREAM),
            model,
            cfg,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Draw the next episode without training on it.
    pub fn next_episode(&mut self, pool: &Dataset<S>) -> Result<Vec<TaskData<S>>> {
        make_episode(pool, &self.cfg, &mut self.episodes)
    }

    /// One optimisation step on a fresh episode from `pool`.
    pub fn train_step(&mut self, pool: &Dataset<S>) -> Result<LogRow> {
        let batch = self.next_episode(pool)?;
        let tape = Tape::new();
        let p = self.model.store.bind(&tape);
        let masks = self.model.sample_masks(&batch, &mut self.masks);
        let out = episode_loss(
            &self.model,
            &tape,
            &p,
            &batch,
            &self.cfg,
            self.step,
            &mut self.noise,
            &masks,
        )?;
        let grads = p.grads(&tape.backward(&out.loss)?);
        self.adam.step(&mut self.model.store, &grads, self.step, &self.cfg)?;
        let (lambda_f, lambda_a) = anneal(self.step, &self.cfg);
        let row = LogRow {
            step: self.step,
            loss: out.loss.item().as_f64(),
            nll: out.nll(),
            kl_f: out.kl_f(),
            kl_a: out.kl_a(),
            lambda_f,
            lambda_a,
            lr: learning_rate(self.step, &self.cfg),
        };
        self.step += 1;
        Ok(row)
    }

    /// Train until `cfg.iterations`, writing one log line per step to `log`
    /// when given.
    pub fn run(&mut self, pool: &Dataset<S>, mut log: Option<&mut dyn Write>) -> Result<Vec<LogRow>> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        let mut rows = Vec::new();
        while self.step < self.cfg.iterations {
            let row = self.train_step(pool)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", row.tsv())?;
            }
            rows.push(row);
        }
        Ok(rows)
    }
}
