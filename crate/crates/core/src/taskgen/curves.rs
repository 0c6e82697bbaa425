use std::f64::consts::PI;

use crate::data::{LabelKind, TaskData};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    Sin,
    Cos,
}

/// One term `amplitude · wave(frequency · x)` of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub amplitude: f64,
    pub frequency: f64,
    pub wave: Wave,
}

/// Multi-task 1-D regression: each task draws inputs from its own interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve1DSpec {
    /// Half-open `[lo, hi)` input interval per task.
    pub intervals: Vec<(f64, f64)>,
    pub noise_std: f64,
    pub terms: Vec<Term>,
    /// Every task follows the same ground truth. Otherwise task `l` scales
    /// the ground truth by `1 + l / L`.
    pub shared_function: bool,
}

impl Default for Curve1DSpec {
    /// `sin x + sin 2x − cos 0.5x` on `[−2π, −π), [−π, 0), [0, π), [π, 2π)`.
    fn default() -> Self {
        Self {
            intervals: vec![(-2.0 * PI, -PI), (-PI, 0.0), (0.0, PI), (PI, 2.0 * PI)],
            noise_std: 0.0003,
            terms: vec![
                Term {
                    amplitude: 1.0,
                    frequency: 1.0,
                    wave: Wave::Sin,
                },
                Term {
                    amplitude: 1.0,
                    frequency: 2.0,
                    wave: Wave::Sin,
                },
                Term {
                    amplitude: -1.0,
                    frequency: 0.5,
                    wave: Wave::Cos,
                },
            ],
            shared_function: true,
        }
    }
}

impl Curve1DSpec {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::Config("at least one interval required".into()));
        }
        for (l, &(lo, hi)) in self.intervals.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("interval {l} [{lo}, {hi}) is empty")));
            }
        }
        let mut sorted = self.intervals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::Config("intervals overlap".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free ground truth of task `task` at `x`.
    pub fn ground_truth(&self, task: usize, x: f64) -> f64 {
        let base: f64 = self
            .terms
            .iter()
            .map(|t| {
                t.amplitude
                    * match t.wave {
                        Wave::Sin => (t.frequency * x).sin(),
                        Wave::Cos => (t.frequency * x).cos(),
                    }
            })
            .sum();
        if self.shared_function {
            base
        } else {
            base * (1.0 + task as f64 / self.intervals.len() as f64)
        }
    }
}

/// `n_target` noisy samples per task, drawn uniformly from the task's
/// interval; the context set is the first `n_context` of them.
pub fn gen_1d_tasks<S: Scalar>(
    spec: &Curve1DSpec,
    n_context: usize,
    n_target: usize,
    rng: &mut RngStream,
) -> Result<Vec<TaskData<S>>> {
    spec.validate()?;
    if n_context == 0 || n_target < n_context {
        return Err(Error::Config(format!(
            "need n_target >= n_context >= 1, got {n_target} and {n_context}"
        )));
    }
    spec.intervals
        .iter()
        .enumerate()
        .map(|(l, &(lo, hi))| {
            let xs: Vec<f64> = (0..n_target).map(|_| rng.uniform(lo, hi)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| spec.ground_truth(l, x) + spec.noise_std * rng.normal())
                .collect();
            let col = |v: &[f64]| Tensor::new(vec![v.len(), 1], v.iter().map(|&a| S::of(a)).collect());
            TaskData::new(
                l,
                col(&xs[..n_context])?,
                col(&ys[..n_context])?,
                col(&xs)?,
                col(&ys)?,
                LabelKind::Real,
            )
        })
        .collect()
}
