use std::str::FromStr;

use crate::data::{LabelKind, Set, TaskData};
use crate::model::{ForwardConfig, Model, Prediction};
use crate::rng::NoiseSource;
use crate::scalar::{exact_sum, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Nmse,
    Mse,
}

impl Metric {
    pub fn for_kind(kind: LabelKind) -> Self {
        if kind.is_classification() {
            Metric::Accuracy
        } else {
            Metric::Nmse
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Nmse => "nmse",
            Metric::Mse => "mse",
        }
    }

    /// Whether larger scores are better.
    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "nmse" => Ok(Metric::Nmse),
            "mse" => Ok(Metric::Mse),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Per-task scores and their unweighted average.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub metric: Metric,
    pub per_task: Vec<f64>,
    pub average: f64,
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Empty {
            what: "evaluation set".into(),
        });
    }
    if predicted.len() != labels.len() {
        return Err(Error::InvalidData("prediction and label counts differ".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

pub fn mse(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty {
            what: "evaluation set".into(),
        });
    }
    if predicted.len() != targets.len() {
        return Err(Error::InvalidData("prediction and target counts differ".into()));
    }
    let n = targets.len() as f64;
    Ok(exact_sum(predicted.iter().zip(targets).map(|(p, t)| (p - t) * (p - t))) / n)
}

/// Mean squared error divided by the (population) variance of the targets.
pub fn nmse(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty {
            what: "evaluation set".into(),
        });
    }
    if predicted.len() != targets.len() {
        return Err(Error::InvalidData("prediction and target counts differ".into()));
    }
    let n = targets.len() as f64;
    let mean = exact_sum(targets.iter().copied()) / n;
    let var = exact_sum(targets.iter().map(|t| (t - mean) * (t - mean))) / n;
    if var == 0.0 {
        return Err(Error::InvalidData("targets have zero variance".into()));
    }
    Ok(mse(predicted, targets)? / var)
}

/// Score one task's prediction against its target labels.
pub fn score<S: Scalar>(pred: &Prediction<S>, task: &TaskData<S>, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Accuracy => {
            if !task.kind.is_classification() {
                return Err(Error::Config("metric `accuracy` needs class labels".into()));
            }
            accuracy(&pred.argmax(), &task.labels(Set::Target))
        }
        Metric::Nmse | Metric::Mse => {
            if task.kind.is_classification() {
                return Err(Error::Config(format!("metric `{}` needs real-valued labels", metric.name())));
            }
            let m = pred.mean().to_f64_vec();
            let t = task.target_y.to_f64_vec();
            if metric == Metric::Mse {
                mse(&m, &t)
            } else {
                nmse(&m, &t)
            }
        }
    }
}

/// Predict every task of `episode` and score it.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    episode: &[TaskData<S>],
    noise: &mut dyn NoiseSource<S>,
    cfg: &ForwardConfig,
    metric: Metric,
) -> Result<Scores> {
    let preds = model.predict(episode, noise, cfg)?;
    let per_task = preds
        .iter()
        .zip(episode)
        .map(|(p, t)| score(p, t, metric))
        .collect::<Result<Vec<_>>>()?;
    let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(Scores {
        metric,
        per_task,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 2, 1], &[0, 2, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 2, 1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn nmse_cases() {
        assert_eq!(nmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        let t = [0.3, -1.2, 4.0, 2.5];
        let mean = t.iter().sum::<f64>() / 4.0;
        assert!((nmse(&[mean; 4], &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&[1.0, 1.0], &[3.0, 3.0]).is_err());
        assert!(nmse(&[], &[]).is_err());
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 3.0]).unwrap(), 2.5);
    }
}
