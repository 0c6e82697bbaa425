//! Episode sampling, the Monte-Carlo training objective, KL annealing,
//! Adam with a step-decay learning rate, and evaluation metrics.

mod adam;
mod episode;
mod metrics;
mod trainer;

pub use adam::Adam;
pub use episode::make_episode;
pub use metrics::{accuracy, evaluate, nmse, Metric, Scores};
pub use trainer::{episode_loss, LogRow, Trainer, LOG_HEADER};

use crate::context::MissingClassPolicy;
use crate::model::ForwardConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub n_f: usize,
    pub n_a: usize,
    pub lambda_f_max: f64,
    pub lambda_a_max: f64,
    pub anneal_steps: u64,
    pub lr0: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub iterations: u64,
    /// Target rows drawn per task and class for each episode.
    pub per_class: usize,
    /// Context size as a fraction of each task's target set.
    pub context_fraction: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub missing_class: MissingClassPolicy,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            n_f: 10,
            n_a: 5,
            lambda_f_max: 1.0,
            lambda_a_max: 1.0,
            anneal_steps: 1000,
            lr0: 1e-4,
            lr_decay_every: 3000,
            lr_decay_factor: 0.5,
            iterations: 15_000,
            per_class: 8,
            context_fraction: 0.5,
            sigma2: 0.01,
            seed: 0,
            missing_class: MissingClassPolicy::Backfill,
        }
    }

    pub fn desk() -> Self {
        Self {
            iterations: 2000,
            lr0: 1e-3,
            lr_decay_every: 1000,
            anneal_steps: 500,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("train.{key}: {why}")));
        if self.n_f == 0 {
            return bad("n_f", "must be at least 1");
        }
        if self.n_a == 0 {
            return bad("n_a", "must be at least 1");
        }
        if self.per_class == 0 {
            return bad("per_class", "must be at least 1");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every", "must be at least 1");
        }
        if !(self.lr0 > 0.0) {
            return bad("lr0", "must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor", "must lie in (0, 1]");
        }
        if !(self.sigma2 > 0.0) {
            return bad("sigma2", "must be positive");
        }
        if !(self.context_fraction > 0.0 && self.context_fraction <= 1.0) {
            return bad("context_fraction", "must lie in (0, 1]");
        }
        if !(self.lambda_f_max >= 0.0 && self.lambda_a_max >= 0.0) {
            return bad("lambda_max", "must be non-negative");
        }
        Ok(())
    }

    /// Forward settings at `step`, with annealed KL weights.
    pub fn forward(&self, step: u64) -> ForwardConfig {
        let (lambda_f, lambda_a) = anneal(step, self);
        ForwardConfig {
            n_f: self.n_f,
            n_a: self.n_a,
            sigma2: self.sigma2,
            lambda_f,
            lambda_a,
            missing_class: self.missing_class,
        }
    }
}

/// Linear KL-weight ramp `λ_max · min(1, step / anneal_steps)`.
pub fn anneal(step: u64, cfg: &TrainConfig) -> (f64, f64) {
    if cfg.anneal_steps == 0 || step >= cfg.anneal_steps {
        return (cfg.lambda_f_max, cfg.lambda_a_max);
    }
    let r = step as f64 / cfg.anneal_steps as f64;
    (cfg.lambda_f_max * r, cfg.lambda_a_max * r)
}

/// `lr0 · factor^⌊step / every⌋`.
pub fn learning_rate(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.lr_decay_every) as i32;
    cfg.lr0 * cfg.lr_decay_factor.powi(k)
}
