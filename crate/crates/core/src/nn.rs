//! Named parameter storage and the small fully connected building blocks
//! every encoder is assembled from.

use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered name → tensor map holding every learnable weight of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.values.push(value.detach());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<S>) {
        assert_eq!(value.shape(), self.values[id.0].shape());
        self.values[id.0] = value.detach();
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Register every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape<S>) -> Bound<S> {
        Bound {
            tensors: self.values.iter().map(|v| tape.leaf(v)).collect(),
        }
    }

    /// Untracked view, for forward passes that need no gradients.
    pub fn constants(&self) -> Bound<S> {
        Bound {
            tensors: self.values.iter().map(Tensor::detach).collect(),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Parameters as seen by one forward pass.
#[derive(Debug, Clone)]
pub struct Bound<S> {
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Bound<S> {
    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    /// Per-parameter gradients in store order.
    pub fn grads(&self, g: &Gradients<S>) -> Vec<Tensor<S>> {
        self.tensors.iter().map(|t| g.wrt(t)).collect()
    }

    /// Replace one parameter by an arbitrary (possibly tracked) tensor.
    pub fn with(mut self, id: ParamId, value: Tensor<S>) -> Self {
        self.tensors[id.0] = value;
        self
    }
}

/// Affine map `x W + b` over the rows of `x`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut RngStream,
    ) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| S::of(rng.uniform(-a, a)))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(fan_in, fan_out, w).expect("weight shape"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        x: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        let xw = tape.matmul(x, p.get(self.weight))?;
        let b = tape.broadcast_rows(p.get(self.bias), x.rows())?;
        tape.add(&xw, &b)
    }
}

/// Stack of [`Linear`] layers with ELU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ELU after the last layer too.
    pub act_last: bool,
}

impl Mlp {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dims: &[usize],
        act_last: bool,
        rng: &mut RngStream,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, act_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        x: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, &h)?;
            if i + 1 < n || self.act_last {
                h = tape.elu(&h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check_many;

    #[test]
    fn mlp_weight_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngStream::new(5);
        let mlp = Mlp::new(&mut store, "net", &[3, 4, 4, 1], false, &mut rng);
        // non-zero biases so every path is exercised
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with("bias") {
                let shape = store.get(id).shape().to_vec();
                let v = rng.normal_tensor(shape);
                store.set(id, v);
            }
        }
        let x = rng.normal_tensor::<f64>(vec![5, 3]);
        let ids: Vec<_> = store.ids().collect();
        let values: Vec<_> = ids.iter().map(|&id| store.get(id).clone()).collect();
        let err = finite_difference_check_many(
            |tape, ws| {
                let mut bound = store.constants();
                for (&id, w) in ids.iter().zip(ws) {
                    bound = bound.with(id, w.clone());
                }
                tape.sum_all(&mlp.forward(tape, &bound, &x)?)
            },
            &values,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn store_lookup_and_bind() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("a", Tensor::ones(vec![2, 2]));
        assert_eq!(store.id("a"), Some(id));
        assert_eq!(store.numel(), 4);
        let tape = Tape::new();
        let b = store.bind(&tape);
        assert!(b.get(id).is_tracked());
        assert!(!store.constants().get(id).is_tracked());
    }
}
