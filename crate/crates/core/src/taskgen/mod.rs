//! Synthetic benchmarks, feature-table ingestion and input corruption.

mod clusters;
mod curves;
mod table;

pub use clusters::{gen_cluster_tasks, ClusterSpec};
pub use curves::{gen_1d_tasks, Curve1DSpec, Term, Wave};
pub use table::{
    format_feature_table, load_feature_table, parse_feature_table, write_feature_table, FeatureSchema,
};

use crate::data::{Dataset, TaskData};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

fn check_eta(eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("noise level must be finite and >= 0, got {eta}")))
    }
}

fn perturb<S: Scalar>(x: &Tensor<S>, eta: f64, rng: &mut RngStream) -> Tensor<S> {
    if eta == 0.0 {
        return x.clone();
    }
    let e = S::of(eta);
    let data = x.data().iter().map(|&v| v + e * S::of(rng.sign())).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `x + eta · sign(u)` on every input row of every task; labels untouched.
pub fn corrupt<S: Scalar>(ds: &Dataset<S>, eta: f64, rng: &mut RngStream) -> Result<Dataset<S>> {
    check_eta(eta)?;
    let mut out = ds.clone();
    for t in &mut out.tasks {
        t.x = perturb(&t.x, eta, rng);
    }
    Ok(out)
}

/// [`corrupt`] applied to both the context and target inputs of each task.
pub fn corrupt_tasks<S: Scalar>(
    tasks: &[TaskData<S>],
    eta: f64,
    rng: &mut RngStream,
) -> Result<Vec<TaskData<S>>> {
    check_eta(eta)?;
    Ok(tasks
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.context_x = perturb(&t.context_x, eta, rng);
            t.target_x = perturb(&t.target_x, eta, rng);
            t
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds() -> Dataset<f64> {
        let spec = ClusterSpec {
            samples_per_cell: 3,
            dim: 6,
            ..Default::default()
        };
        gen_cluster_tasks(&spec, &mut RngStream::new(4)).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = ds();
        assert!(corrupt(&d, 0.0, &mut RngStream::new(1)).unwrap().bit_eq(&d));
    }

    #[test]
    fn sup_norm_equals_eta() {
        let d = ds();
        for eta in [0.5, 1.0, 0.125] {
            let c = corrupt(&d, eta, &mut RngStream::new(2)).unwrap();
            for (a, b) in d.tasks.iter().zip(&c.tasks) {
                assert!(a.y.bit_eq(&b.y));
                for (u, v) in a.x.data().iter().zip(b.x.data()) {
                    assert!(((v - u).abs() - eta).abs() < 1e-12);
                }
            }
        }
        assert!(corrupt(&d, -0.1, &mut RngStream::new(2)).is_err());
    }

    #[test]
    fn task_corruption_touches_inputs_only() {
        let tasks = gen_1d_tasks::<f64>(&Curve1DSpec::default(), 2, 5, &mut RngStream::new(3)).unwrap();
        let c = corrupt_tasks(&tasks, 0.25, &mut RngStream::new(3)).unwrap();
        for (a, b) in tasks.iter().zip(&c) {
            assert!(a.target_y.bit_eq(&b.target_y));
            assert!(a.context_y.bit_eq(&b.context_y));
            assert!((a.target_x.max_abs_diff(&b.target_x) - 0.25).abs() < 1e-12);
        }
    }
}
