//! Central finite-difference oracle for tape gradients.

use thiserror::Error;

use super::{Tape, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error("step size must be positive")]
    BadStep,
    #[error("non-finite value at input {input}, coordinate {coord}")]
    NonFinite { input: usize, coord: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`
/// for the scalar function `f` at `x`.
pub fn finite_difference_check<S, F>(f: F, x: &Tensor<S>, eps: S) -> Result<S, GradCheckError>
where
    S: Scalar,
    F: Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>, TensorError>,
{
    finite_difference_check_many(
        |tape, xs: &[Tensor<S>]| f(tape, &xs[0]),
        std::slice::from_ref(x),
        eps,
    )
}

/// [`finite_difference_check`] over several inputs at once.
pub fn finite_difference_check_many<S, F>(
    f: F,
    xs: &[Tensor<S>],
    eps: S,
) -> Result<S, GradCheckError>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Tensor<S>]) -> Result<Tensor<S>, TensorError>,
{
    if !(eps > S::zero()) {
        return Err(GradCheckError::BadStep);
    }
    let tape = Tape::new();
    let leaves: Vec<_> = xs.iter().map(|x| tape.leaf(x)).collect();
    let root = f(&tape, &leaves)?;
    let grads = tape.backward(&root)?;

    let eval = |inputs: &[Tensor<S>]| -> Result<S, TensorError> {
        let t = Tape::new();
        Ok(f(&t, inputs)?.item())
    };
    let two = S::of(2.0);
    let mut worst = S::zero();
    for (k, x) in xs.iter().enumerate() {
        let analytic = grads.wrt(&leaves[k]);
        for coord in 0..x.len() {
            let mut shifted: Vec<Tensor<S>> = xs.iter().map(Tensor::detach).collect();
            let mut plus = x.to_vec();
            plus[coord] = plus[coord] + eps;
            shifted[k] = Tensor::new(x.shape().to_vec(), plus)?;
            let fp = eval(&shifted)?;
            let mut minus = x.to_vec();
            minus[coord] = minus[coord] - eps;
            shifted[k] = Tensor::new(x.shape().to_vec(), minus)?;
            let fm = eval(&shifted)?;
            let a = analytic.data()[coord];
            if !(fp.is_finite() && fm.is_finite() && a.is_finite()) {
                return Err(GradCheckError::NonFinite { input: k, coord });
            }
            let numeric = (fp - fm) / (two * eps);
            let err = (a - numeric).abs() / S::one().max(a.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::scalar(3.0f64);
        let err = finite_difference_check(|t, x| t.mul(x, x), &x, 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_has_zero_error() {
        let x = Tensor::scalar(3.0f64);
        let err =
            finite_difference_check(|_t, _x| Ok(Tensor::scalar(5.0)), &x, 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn gaussian_log_density_in_mean() {
        // -0.5 (x - mu)^2 / 4 - const, checked in mu
        let mu = Tensor::from_f64(vec![1, 3], &[0.2, -1.0, 2.5]).unwrap();
        let x = Tensor::from_f64(vec![1, 3], &[1.0, 0.5, -0.3]).unwrap();
        let err = finite_difference_check(
            |t, mu| {
                let r = t.sub(&x, mu)?;
                let sq = t.mul(&r, &r)?;
                t.scale(&t.sum_all(&sq)?, -0.125)
            },
            &mu,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn reports_non_finite_coordinate() {
        let x = Tensor::from_f64(vec![2], &[1.0, 0.0]).unwrap();
        let err = finite_difference_check(|t, x| t.sum_all(&t.ln(x)?), &x, 1e-4).unwrap_err();
        assert_eq!(err, GradCheckError::NonFinite { input: 0, coord: 0 });
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::scalar(1.0f64);
        assert_eq!(
            finite_difference_check(|t, x| t.mul(x, x), &x, 0.0).unwrap_err(),
            GradCheckError::BadStep
        );
    }
}
