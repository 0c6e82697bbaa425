use super::{learning_rate, TrainConfig};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Adam with bias correction and the step-decay learning rate.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = store.iter().map(|(_, t)| vec![S::zero(); t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Apply one update using `lr(step)`. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        grads: &[Tensor<S>],
        step: u64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if grads.len() != ids.len() {
            return Err(Error::InvalidData(format!(
                "{} gradients for {} parameters",
                grads.len(),
                ids.len()
            )));
        }
        for (&id, g) in ids.iter().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::InvalidData(format!(
                    "gradient shape mismatch for `{}`",
                    store.name(id)
                )));
            }
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of `{}`", store.name(id)),
                    detail: format!("entry {k} = {}", g.data()[k]),
                });
            }
        }
        self.t += 1;
        let lr = learning_rate(step, cfg);
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
            let w = store.get(id);
            let mut next = w.to_vec();
            for (i, gi) in g.data().iter().enumerate() {
                let gi = gi.as_f64();
                let m = b1 * self.m[k][i].as_f64() + (1.0 - b1) * gi;
                let v = b2 * self.v[k][i].as_f64() + (1.0 - b2) * gi * gi;
                self.m[k][i] = S::of(m);
                self.v[k][i] = S::of(v);
                let update = lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                next[i] = S::of(next[i].as_f64() - update);
            }
            let shape = w.shape().to_vec();
            store.set(id, Tensor::new(shape, next)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::Tape;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(vec![1, 3], &[1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(&store);
        for step in 0..5 {
            adam.step(&mut store, &[Tensor::zeros(vec![1, 3])], step, &TrainConfig::paper())
                .unwrap();
        }
        assert!(store.get(id).bit_eq(before.get(id)));
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut rng = RngStream::new(4);
        let target: Tensor<f64> = rng.normal_tensor(vec![1, 5]);
        let mut store = ParamStore::new();
        let id = store.add("w", rng.normal_tensor(vec![1, 5]));
        let cfg = TrainConfig {
            lr0: 0.05,
            lr_decay_every: 100,
            lr_decay_factor: 0.5,
            ..TrainConfig::paper()
        };
        let mut adam = Adam::new(&store);
        let loss = |store: &ParamStore<f64>, tape: &Tape<f64>| {
            let p = store.bind(tape);
            let d = tape.sub(p.get(id), &target).unwrap();
            (p, tape.sum_all(&tape.mul(&d, &d).unwrap()).unwrap())
        };
        for step in 0..500 {
            let tape = Tape::new();
            let (p, l) = loss(&store, &tape);
            let g = p.grads(&tape.backward(&l).unwrap());
            adam.step(&mut store, &g, step, &cfg).unwrap();
        }
        let (_, l) = loss(&store, &Tape::new());
        assert!(l.item() < 1e-6, "{}", l.item());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.add("enc.weight", Tensor::zeros(vec![1, 2]));
        let before = store.clone();
        let mut adam = Adam::new(&store);
        let g = Tensor::from_f64(vec![1, 2], &[0.0, f64::NAN]).unwrap();
        let err = adam.step(&mut store, &[g], 0, &TrainConfig::paper()).unwrap_err();
        assert!(err.to_string().contains("enc.weight"));
        assert!(store.bit_eq(&before));
    }
}
