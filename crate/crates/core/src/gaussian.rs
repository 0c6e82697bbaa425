//! Diagonal Gaussians: reparameterized sampling, log-density and closed-form KL.

use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian over a tensor of any shape, parameterized by mean and
/// log-variance.
#[derive(Debug, Clone)]
pub struct DiagGaussian<S> {
    pub mean: Tensor<S>,
    pub log_var: Tensor<S>,
}

impl<S: Scalar> DiagGaussian<S> {
    pub fn new(mean: Tensor<S>, log_var: Tensor<S>) -> Result<Self, TensorError> {
        if mean.shape() != log_var.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "diag_gaussian",
                lhs: mean.shape().to_vec(),
                rhs: log_var.shape().to_vec(),
            });
        }
        Ok(Self { mean, log_var })
    }

    /// Standard normal of the given shape.
    pub fn standard(shape: Vec<usize>) -> Self {
        Self {
            mean: Tensor::zeros(shape.clone()),
            log_var: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    pub fn variance(&self) -> Tensor<S> {
        self.log_var.map(S::exp)
    }

    /// Detached copy.
    pub fn detach(&self) -> Self {
        Self {
            mean: self.mean.detach(),
            log_var: self.log_var.detach(),
        }
    }

    /// `mean + exp(0.5 · log_var) ⊙ eps`.
    pub fn reparameterize(&self, tape: &Tape<S>, eps: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if eps.shape() != self.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "reparameterize",
                lhs: self.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            });
        }
        let std = tape.exp(&tape.scale(&self.log_var, S::of(0.5))?)?;
        tape.add(&self.mean, &tape.mul(&std, eps)?)
    }

    /// Log-density summed over coordinates.
    pub fn log_prob(&self, tape: &Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if x.shape() != self.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "log_prob",
                lhs: self.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let diff = tape.sub(x, &self.mean)?;
        let inv_var = tape.exp(&tape.scale(&self.log_var, -S::one())?)?;
        let quad = tape.mul(&tape.mul(&diff, &diff)?, &inv_var)?;
        let inner = tape.sum_all(&tape.add(&quad, &self.log_var)?)?;
        let k = S::of(self.mean.len() as f64);
        let constant = Tensor::scalar(k * S::of(LN_2PI));
        tape.scale(&tape.add(&inner, &constant)?, S::of(-0.5))
    }

    /// `KL(self ‖ other)` summed over coordinates.
    pub fn kl(&self, tape: &Tape<S>, other: &DiagGaussian<S>) -> Result<Tensor<S>, TensorError> {
        kl(tape, self, other)
    }
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians of equal shape.
pub fn kl<S: Scalar>(
    tape: &Tape<S>,
    q: &DiagGaussian<S>,
    p: &DiagGaussian<S>,
) -> Result<Tensor<S>, TensorError> {
    if q.shape() != p.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "kl",
            lhs: q.shape().to_vec(),
            rhs: p.shape().to_vec(),
        });
    }
    let ratio = tape.exp(&tape.sub(&q.log_var, &p.log_var)?)?;
    let d = tape.sub(&q.mean, &p.mean)?;
    let inv_p = tape.exp(&tape.scale(&p.log_var, -S::one())?)?;
    let maha = tape.mul(&tape.mul(&d, &d)?, &inv_p)?;
    let logdet = tape.sub(&p.log_var, &q.log_var)?;
    let total = tape.sum_all(&tape.add(&tape.add(&ratio, &maha)?, &logdet)?)?;
    let k = Tensor::scalar(-S::of(q.mean.len() as f64));
    tape.scale(&tape.add(&total, &k)?, S::of(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn g1(mean: f64, var: f64) -> DiagGaussian<f64> {
        DiagGaussian::new(
            Tensor::from_f64(vec![1], &[mean]).unwrap(),
            Tensor::from_f64(vec![1], &[var.ln()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reparameterize_trivial_cases() {
        let tape = Tape::new();
        let d = g1(0.7, 3.0);
        let z = d.reparameterize(&tape, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(z.item(), 0.7);
        let d = g1(0.0, 1.0);
        let z = d
            .reparameterize(&tape, &Tensor::from_f64(vec![1], &[1.5]).unwrap())
            .unwrap();
        assert_eq!(z.item(), 1.5);
        assert!(d.reparameterize(&tape, &Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn reparameterized_variance_statistic() {
        let tape = Tape::new();
        let n = 100_000;
        let d = DiagGaussian::new(
            Tensor::zeros(vec![n]),
            Tensor::full(vec![n], 4.0f64.ln()),
        )
        .unwrap();
        let eps = RngStream::new(11).normal_tensor::<f64>(vec![n]);
        let z = d.reparameterize(&tape, &eps).unwrap();
        let mean = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 4.0).abs() / 4.0 < 0.05, "{var}");
    }

    #[test]
    fn log_prob_closed_forms() {
        let tape = Tape::new();
        let lp = g1(0.0, 1.0)
            .log_prob(&tape, &Tensor::from_f64(vec![1], &[0.0]).unwrap())
            .unwrap();
        assert!((lp.item() + 0.918_938_533_204_672_7).abs() < 1e-15);
        let k = 5;
        let d = DiagGaussian::<f64>::standard(vec![k]);
        let lp = d.log_prob(&tape, &Tensor::zeros(vec![k])).unwrap();
        assert!((lp.item() + k as f64 * 0.918_938_533_204_672_7).abs() < 1e-13);
    }

    #[test]
    fn log_prob_matches_trapezoid_normalized_density() {
        // N(0, 4) at x = 1: normalize exp(-x^2/8) numerically.
        let (lo, hi, n) = (-60.0f64, 60.0f64, 600_000);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (-x * x / 8.0).exp();
        let mut z = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            z += f(lo + i as f64 * h);
        }
        z *= h;
        let oracle = f(1.0).ln() - z.ln();
        let tape = Tape::new();
        let lp = g1(0.0, 4.0)
            .log_prob(&tape, &Tensor::from_f64(vec![1], &[1.0]).unwrap())
            .unwrap();
        assert!((lp.item() - oracle).abs() < 1e-10, "{} vs {oracle}", lp.item());
    }

    #[test]
    fn kl_closed_forms() {
        let tape = Tape::new();
        let q = g1(0.3, 2.0);
        assert_eq!(kl(&tape, &q, &q).unwrap().item(), 0.0);
        let v = kl(&tape, &g1(1.0, 1.0), &g1(0.0, 1.0)).unwrap().item();
        assert!((v - 0.5).abs() < 1e-15);
        let v = kl(&tape, &g1(0.0, 4.0), &g1(0.0, 1.0)).unwrap().item();
        assert!((v - 0.806_853).abs() < 1e-6, "{v}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::new();
        let a = DiagGaussian::<f64>::standard(vec![2]);
        let b = DiagGaussian::<f64>::standard(vec![3]);
        assert!(kl(&tape, &a, &b).is_err());
        assert!(DiagGaussian::new(Tensor::<f64>::zeros(vec![2]), Tensor::zeros(vec![3])).is_err());
    }
}
