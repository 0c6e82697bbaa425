//! Hierarchical context modeling: the global container `M`, the amortized
//! set encoders for the task-summary latent `α` and the function latent `ψ`,
//! the adapter `h(α, M)` and the function prior.
//!
//! Pooling inside every encoder is an arithmetic mean computed with correctly
//! rounded summation, so outputs are bitwise invariant to the order of the
//! samples in a set (and to duplicating every sample).

use crate::gaussian::DiagGaussian;
use crate::nn::{Bound, Linear, Mlp, ParamStore};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tape, Tensor, TensorError};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    Regression,
    Classification { classes: usize },
}

impl ContextMode {
    pub fn classes(self) -> usize {
        match self {
            ContextMode::Regression => 1,
            ContextMode::Classification { classes } => classes,
        }
    }
}

/// What to do when a task's context has no sample of some class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum MissingClassPolicy {
    Strict,
    /// Use the class mean pooled over every task's context.
    #[default]
    Backfill,
}

/// The container `M`: per-task mean features (regression) or per-task,
/// per-class mean features (classification).
///
/// Values are stored as an `L × (C·d)` matrix; cell `(l, c)` occupies
/// columns `c·d .. (c+1)·d` of row `l`.
#[derive(Debug, Clone)]
pub struct GlobalContext<S> {
    pub mode: ContextMode,
    pub values: Tensor<S>,
    pub tasks: usize,
    pub dim: usize,
    /// `(task, class)` cells filled from the cross-task class mean.
    pub backfilled: Vec<(usize, usize)>,
}

impl<S: Scalar> GlobalContext<S> {
    pub fn classes(&self) -> usize {
        self.mode.classes()
    }

    /// Logical shape: `[L, d]` or `[L, C, d]`.
    pub fn logical_shape(&self) -> Vec<usize> {
        match self.mode {
            ContextMode::Regression => vec![self.tasks, self.dim],
            ContextMode::Classification { classes } => vec![self.tasks, classes, self.dim],
        }
    }

    /// Mean feature of `(task, class)` as plain values.
    pub fn cell(&self, task: usize, class: usize) -> Vec<S> {
        let w = self.classes() * self.dim;
        let start = task * w + class * self.dim;
        self.values.data()[start..start + self.dim].to_vec()
    }

    /// `L × d` slice `M[:, c, :]`.
    pub fn class_slice(&self, tape: &Tape<S>, class: usize) -> Result<Tensor<S>> {
        if class >= self.classes() {
            return Err(Error::InvalidData(format!(
                "class index {class} out of range for {} classes",
                self.classes()
            )));
        }
        Ok(tape.slice(
            &self.values,
            Axis::Cols,
            class * self.dim,
            (class + 1) * self.dim,
        )?)
    }
}

/// Build `M` from every task's context features.
///
/// `labels[l]` lists the class of each context row of task `l`; it is ignored
/// in regression mode.
pub fn build_global_context<S: Scalar>(
    tape: &Tape<S>,
    features: &[Tensor<S>],
    labels: &[Vec<usize>],
    mode: ContextMode,
    policy: MissingClassPolicy,
) -> Result<GlobalContext<S>> {
    if features.is_empty() {
        return Err(Error::Empty {
            what: "task list".into(),
        });
    }
    let dim = features[0].cols();
    for (l, f) in features.iter().enumerate() {
        if f.rows() == 0 {
            return Err(Error::Empty {
                what: format!("context set of task {l}"),
            });
        }
        if f.cols() != dim {
            return Err(TensorError::ShapeMismatch {
                op: "build_global_context",
                lhs: features[0].shape().to_vec(),
                rhs: f.shape().to_vec(),
            }
            .into());
        }
    }
    let tasks = features.len();
    let mut backfilled = Vec::new();
    let rows: Vec<Tensor<S>> = match mode {
        ContextMode::Regression => features
            .iter()
            .map(|f| tape.mean(f, Axis::Rows))
            .collect::<Result<_, _>>()?,
        ContextMode::Classification { classes } => {
            if labels.len() != tasks {
                return Err(Error::InvalidData("one label list per task required".into()));
            }
            let by_class: Vec<Vec<Vec<usize>>> = labels
                .iter()
                .zip(features)
                .map(|(ls, f)| {
                    if ls.len() != f.rows() {
                        return Err(Error::InvalidData("label count != context rows".into()));
                    }
                    let mut groups = vec![Vec::new(); classes];
                    for (i, &c) in ls.iter().enumerate() {
                        if c >= classes {
                            return Err(Error::InvalidData(format!("label {c} >= {classes}")));
                        }
                        groups[c].push(i);
                    }
                    Ok(groups)
                })
                .collect::<Result<_>>()?;
            let mut rows = Vec::with_capacity(tasks);
            for l in 0..tasks {
                let mut cells = Vec::with_capacity(classes);
                for c in 0..classes {
                    let idx = &by_class[l][c];
                    let cell = if !idx.is_empty() {
                        tape.mean(&tape.select_rows(&features[l], idx)?, Axis::Rows)?
                    } else {
                        if policy == MissingClassPolicy::Strict {
                            return Err(Error::MissingClass { task: l, class: c });
                        }
                        let pooled: Vec<Tensor<S>> = (0..tasks)
                            .filter(|&k| !by_class[k][c].is_empty())
                            .map(|k| tape.select_rows(&features[k], &by_class[k][c]))
                            .collect::<Result<_, _>>()?;
                        if pooled.is_empty() {
                            return Err(Error::MissingClass { task: l, class: c });
                        }
                        backfilled.push((l, c));
                        let refs: Vec<&Tensor<S>> = pooled.iter().collect();
                        tape.mean(&tape.concat(&refs, Axis::Rows)?, Axis::Rows)?
                    };
                    cells.push(cell);
                }
                let refs: Vec<&Tensor<S>> = cells.iter().collect();
                rows.push(tape.concat(&refs, Axis::Cols)?);
            }
            rows
        }
    };
    let refs: Vec<&Tensor<S>> = rows.iter().collect();
    Ok(GlobalContext {
        mode,
        values: tape.concat(&refs, Axis::Rows)?,
        tasks,
        dim,
        backfilled,
    })
}

/// How a set encoder aggregates its per-sample embeddings.
#[derive(Debug, Clone, Copy)]
pub enum Pooling<'a> {
    /// Mean over all rows: one output row.
    All,
    /// Mean over the listed rows of each class: one output row per class.
    ByClass(&'a [Vec<usize>]),
    /// No aggregation: one output row per input row.
    None,
}

/// Per-sample embedding MLP, mean pooling, then a linear map to the mean and
/// log-variance of a diagonal Gaussian.
#[derive(Debug, Clone)]
pub struct SetEncoder {
    pub embed: Mlp,
    pub head: Linear,
    pub out_dim: usize,
}

impl SetEncoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        logvar_init: f64,
        rng: &mut RngStream,
    ) -> Self {
        let embed = Mlp::new(store, &format!("{name}.embed"), &[in_dim, hidden, hidden], true, rng);
        let head = Linear::new(store, &format!("{name}.head"), hidden, 2 * out_dim, rng);
        let bias = (0..2 * out_dim)
            .map(|j| S::of(if j < out_dim { 0.0 } else { logvar_init }))
            .collect();
        store.set(head.bias, Tensor::matrix(1, 2 * out_dim, bias).expect("bias shape"));
        Self {
            embed,
            head,
            out_dim,
        }
    }

    /// Encode a set. `features` (`n × d`) pass through the dropout `mask`
    /// when one is given; `extra` columns (labels) are appended unmasked.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        features: &Tensor<S>,
        extra: Option<&Tensor<S>>,
        mask: Option<&Tensor<S>>,
        pooling: Pooling<'_>,
        clamp: Option<(f64, f64)>,
    ) -> Result<DiagGaussian<S>> {
        if features.rows() == 0 {
            return Err(Error::Empty {
                what: "encoder input set".into(),
            });
        }
        let mut x = match mask {
            Some(m) => tape.dropout(features, m)?,
            None => features.clone(),
        };
        if let Some(e) = extra {
            x = tape.concat(&[&x, e], Axis::Cols)?;
        }
        let h = self.embed.forward(tape, p, &x)?;
        let pooled = match pooling {
            Pooling::All => tape.mean(&h, Axis::Rows)?,
            Pooling::None => h,
            Pooling::ByClass(groups) => {
                let mut rows = Vec::with_capacity(groups.len());
                for (c, idx) in groups.iter().enumerate() {
                    if idx.is_empty() {
                        return Err(Error::Empty {
                            what: format!("pool of class {c}"),
                        });
                    }
                    rows.push(tape.mean(&tape.select_rows(&h, idx)?, Axis::Rows)?);
                }
                let refs: Vec<&Tensor<S>> = rows.iter().collect();
                tape.concat(&refs, Axis::Rows)?
            }
        };
        let out = self.head.forward(tape, p, &pooled)?;
        split_gaussian(tape, &out, self.out_dim, clamp)
    }
}

/// Split `n × 2k` network output into a Gaussian with `n × k` mean and
/// (optionally clamped) log-variance.
pub fn split_gaussian<S: Scalar>(
    tape: &Tape<S>,
    out: &Tensor<S>,
    k: usize,
    clamp: Option<(f64, f64)>,
) -> Result<DiagGaussian<S>> {
    let mean = tape.slice(out, Axis::Cols, 0, k)?;
    let mut log_var = tape.slice(out, Axis::Cols, k, 2 * k)?;
    if let Some((lo, hi)) = clamp {
        log_var = tape.clamp(&log_var, S::of(lo), S::of(hi))?;
    }
    Ok(DiagGaussian::new(mean, log_var)?)
}

/// `h(α, M)`: an MLP maps `α` to one logit per task, softmax turns the
/// logits into convex weights, and the output is the weighted combination of
/// the rows of `M`.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub net: Mlp,
    pub tasks: usize,
}

impl Adapter {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        alpha_dim: usize,
        hidden: &[usize],
        tasks: usize,
        rng: &mut RngStream,
    ) -> Self {
        let mut dims = vec![alpha_dim];
        dims.extend_from_slice(hidden);
        dims.push(tasks);
        Self {
            net: Mlp::new(store, name, &dims, false, rng),
            tasks,
        }
    }

    /// Convex task weights `1 × L` for one `α` sample (`1 × d_α`).
    pub fn weights<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        alpha: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        if alpha.shape() != [1, self.net.in_dim()] {
            return Err(TensorError::ShapeMismatch {
                op: "adapt",
                lhs: vec![1, self.net.in_dim()],
                rhs: alpha.shape().to_vec(),
            }
            .into());
        }
        let logits = self.net.forward(tape, p, alpha)?;
        Ok(tape.exp(&tape.log_softmax(&logits)?)?)
    }

    /// Adapted knowledge `m` for one class (`1 × d`), or for the regression
    /// container when `class_index` is `None`.
    pub fn adapt<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        alpha: &Tensor<S>,
        m: &GlobalContext<S>,
        class_index: Option<usize>,
    ) -> Result<Tensor<S>> {
        self.check_tasks(m)?;
        let w = self.weights(tape, p, alpha)?;
        match (m.mode, class_index) {
            (ContextMode::Regression, None) => Ok(tape.matmul(&w, &m.values)?),
            (ContextMode::Classification { .. }, Some(c)) => {
                Ok(tape.matmul(&w, &m.class_slice(tape, c)?)?)
            }
            (ContextMode::Regression, Some(_)) => Err(Error::InvalidData(
                "class index given for a regression container".into(),
            )),
            (ContextMode::Classification { .. }, None) => Err(Error::InvalidData(
                "class index required for a classification container".into(),
            )),
        }
    }

    /// Adapted knowledge for every class at once: `C × d` (`1 × d` in
    /// regression). Row `c` equals `adapt(.., Some(c))`.
    pub fn adapt_all<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        alpha: &Tensor<S>,
        m: &GlobalContext<S>,
    ) -> Result<Tensor<S>> {
        self.check_tasks(m)?;
        let w = self.weights(tape, p, alpha)?;
        let flat = tape.matmul(&w, &m.values)?;
        Ok(tape.reshape(&flat, vec![m.classes(), m.dim])?)
    }

    fn check_tasks<S: Scalar>(&self, m: &GlobalContext<S>) -> Result<()> {
        if m.tasks != self.tasks {
            return Err(Error::InvalidData(format!(
                "adapter built for {} tasks, container has {}",
                self.tasks, m.tasks
            )));
        }
        Ok(())
    }
}

/// Architecture widths of the hierarchical context networks.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyDims {
    /// Feature dimension `d` (width of `M` rows and of each `ψ` column).
    pub feature_dim: usize,
    /// Label columns fed to the `α` encoders (and to `φ₁` in regression).
    pub label_dim: usize,
    pub classification: bool,
    pub psi_hidden: usize,
    pub alpha_dim: usize,
    pub alpha_hidden: usize,
    pub adapter_hidden: Vec<usize>,
    pub tasks: usize,
    /// Initial log-variance bias of every Gaussian head.
    pub logvar_init: f64,
}

/// Which network encodes the task summary `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryRole {
    /// `θ₂`, reads the context set.
    Prior,
    /// `φ₂`, reads the target set.
    Posterior,
}

/// The four amortized networks `φ₁, φ₂, θ₁, θ₂` and the adapter `h`.
#[derive(Debug, Clone)]
pub struct HierarchyNets {
    pub dims: HierarchyDims,
    pub psi_posterior: SetEncoder,
    pub psi_prior: SetEncoder,
    pub alpha_posterior: SetEncoder,
    pub alpha_prior: SetEncoder,
    pub adapter: Adapter,
    pub logvar_clamp: Option<(f64, f64)>,
}

impl HierarchyNets {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        dims: HierarchyDims,
        logvar_clamp: Option<(f64, f64)>,
        rng: &mut RngStream,
    ) -> Self {
        let d = dims.feature_dim;
        let psi_in = if dims.classification { d } else { d + dims.label_dim };
        let alpha_in = d + dims.label_dim;
        let lv = dims.logvar_init;
        let psi_posterior = SetEncoder::new(store, "phi1", psi_in, dims.psi_hidden, d, lv, rng);
        let psi_prior = SetEncoder::new(store, "theta1", d, dims.psi_hidden, d, lv, rng);
        let alpha_posterior =
            SetEncoder::new(store, "phi2", alpha_in, dims.alpha_hidden, dims.alpha_dim, lv, rng);
        let alpha_prior =
            SetEncoder::new(store, "theta2", alpha_in, dims.alpha_hidden, dims.alpha_dim, lv, rng);
        let adapter = Adapter::new(
            store,
            "adapter",
            dims.alpha_dim,
            &dims.adapter_hidden,
            dims.tasks,
            rng,
        );
        Self {
            dims,
            psi_posterior,
            psi_prior,
            alpha_posterior,
            alpha_prior,
            adapter,
            logvar_clamp,
        }
    }

    /// `p_θ₂(α | D)` or `q_φ₂(α | D*)` from a set of features and labels.
    pub fn encode_summary<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        features: &Tensor<S>,
        labels: &Tensor<S>,
        role: SummaryRole,
        mask: Option<&Tensor<S>>,
    ) -> Result<DiagGaussian<S>> {
        let enc = match role {
            SummaryRole::Prior => &self.alpha_prior,
            SummaryRole::Posterior => &self.alpha_posterior,
        };
        enc.encode(tape, p, features, Some(labels), mask, Pooling::All, self.logvar_clamp)
    }

    pub fn adapt<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        alpha: &Tensor<S>,
        m: &GlobalContext<S>,
        class_index: Option<usize>,
    ) -> Result<Tensor<S>> {
        self.adapter.adapt(tape, p, alpha, m, class_index)
    }

    /// `p_θ₁(ψ | α, M)`: one Gaussian row per row of `m` (`C × d`), each
    /// computed independently.
    pub fn function_prior<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        m: &Tensor<S>,
    ) -> Result<DiagGaussian<S>> {
        if m.cols() != self.dims.feature_dim {
            return Err(TensorError::ShapeMismatch {
                op: "function_prior",
                lhs: vec![m.rows(), self.dims.feature_dim],
                rhs: m.shape().to_vec(),
            }
            .into());
        }
        self.psi_prior
            .encode(tape, p, m, None, None, Pooling::None, self.logvar_clamp)
    }

    /// `q_φ₁(ψ | D*)`: per-class pooling of target features in
    /// classification (`C × d`), pooling of `[feature ; y]` in regression
    /// (`1 × d`).
    #[allow(clippy::too_many_arguments)]
    pub fn encode_function_posterior<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        features: &Tensor<S>,
        labels: &Tensor<S>,
        class_rows: &[Vec<usize>],
        mask: Option<&Tensor<S>>,
    ) -> Result<DiagGaussian<S>> {
        if self.dims.classification {
            self.psi_posterior.encode(
                tape,
                p,
                features,
                None,
                mask,
                Pooling::ByClass(class_rows),
                self.logvar_clamp,
            )
        } else {
            self.psi_posterior.encode(
                tape,
                p,
                features,
                Some(labels),
                mask,
                Pooling::All,
                self.logvar_clamp,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn regression_container_is_row_mean() {
        let tape = Tape::new();
        let m = build_global_context(
            &tape,
            &[t(1, 2, &[5.0, -1.0]), t(2, 2, &[1.0, 2.0, 3.0, 4.0])],
            &[],
            ContextMode::Regression,
            MissingClassPolicy::Strict,
        )
        .unwrap();
        assert_eq!(m.values.data(), &[5.0, -1.0, 2.0, 3.0]);
        assert_eq!(m.logical_shape(), vec![2, 2]);
    }

    #[test]
    fn classification_container_and_missing_class() {
        let tape = Tape::new();
        let f0 = t(3, 1, &[1.0, 3.0, 10.0]);
        let f1 = t(1, 1, &[7.0]);
        let labels = vec![vec![0, 0, 1], vec![0]];
        let err = build_global_context(
            &tape,
            &[f0.clone(), f1.clone()],
            &labels,
            ContextMode::Classification { classes: 2 },
            MissingClassPolicy::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingClass { task: 1, class: 1 }));
        let m = build_global_context(
            &tape,
            &[f0, f1],
            &labels,
            ContextMode::Classification { classes: 2 },
            MissingClassPolicy::Backfill,
        )
        .unwrap();
        assert_eq!(m.cell(0, 0), vec![2.0]);
        assert_eq!(m.cell(0, 1), vec![10.0]);
        assert_eq!(m.cell(1, 0), vec![7.0]);
        assert_eq!(m.cell(1, 1), vec![10.0]);
        assert_eq!(m.backfilled, vec![(1, 1)]);
    }

    #[test]
    fn single_class_matches_regression_bitwise() {
        let tape = Tape::new();
        let mut rng = RngStream::new(3);
        let fs: Vec<Tensor<f64>> = (0..3).map(|k| rng.normal_tensor(vec![4 + k, 5])).collect();
        let labels: Vec<Vec<usize>> = fs.iter().map(|f| vec![0; f.rows()]).collect();
        let r = build_global_context(&tape, &fs, &[], ContextMode::Regression, MissingClassPolicy::Strict)
            .unwrap();
        let c = build_global_context(
            &tape,
            &fs,
            &labels,
            ContextMode::Classification { classes: 1 },
            MissingClassPolicy::Strict,
        )
        .unwrap();
        assert!(r.values.bit_eq(&c.values));
    }

    #[test]
    fn empty_context_is_an_error() {
        let tape = Tape::<f64>::new();
        let err = build_global_context(
            &tape,
            &[Tensor::zeros(vec![0, 2])],
            &[],
            ContextMode::Regression,
            MissingClassPolicy::Backfill,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Empty { .. }));
    }

    fn nets(classification: bool, tasks: usize) -> (ParamStore<f64>, HierarchyNets) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(17);
        let dims = HierarchyDims {
            feature_dim: 4,
            label_dim: if classification { 3 } else { 1 },
            classification,
            psi_hidden: 6,
            alpha_dim: 2,
            alpha_hidden: 5,
            adapter_hidden: vec![4, 3],
            tasks,
            logvar_init: 0.0,
        };
        let n = HierarchyNets::new(&mut store, dims, Some((-10.0, 10.0)), &mut rng);
        (store, n)
    }

    #[test]
    fn summary_shapes_and_set_symmetries() {
        let (store, nets) = nets(true, 2);
        let p = store.constants();
        let tape = Tape::new();
        let mut rng = RngStream::new(1);
        for n in [1usize, 3, 8] {
            let x = rng.normal_tensor::<f64>(vec![n, 4]);
            let y = one_hot(&(0..n).map(|i| i % 3).collect::<Vec<_>>(), 3);
            let s = nets
                .encode_summary(&tape, &p, &x, &y, SummaryRole::Prior, None)
                .unwrap();
            assert_eq!(s.mean.shape(), &[1, 2]);
            assert_eq!(s.log_var.shape(), &[1, 2]);
        }
        let x = rng.normal_tensor::<f64>(vec![6, 4]);
        let y = one_hot(&[0, 1, 2, 0, 1, 2], 3);
        let base = nets
            .encode_summary(&tape, &p, &x, &y, SummaryRole::Posterior, None)
            .unwrap();
        let perm = [4, 2, 5, 0, 3, 1];
        let xp = crate::data::permute_rows(&x, &perm);
        let yp = crate::data::permute_rows(&y, &perm);
        let permuted = nets
            .encode_summary(&tape, &p, &xp, &yp, SummaryRole::Posterior, None)
            .unwrap();
        assert!(base.mean.bit_eq(&permuted.mean));
        assert!(base.log_var.bit_eq(&permuted.log_var));
        let dup: Vec<usize> = (0..6).chain(0..6).collect();
        let xd = crate::data::permute_rows(&x, &dup);
        let yd = crate::data::permute_rows(&y, &dup);
        let doubled = nets
            .encode_summary(&tape, &p, &xd, &yd, SummaryRole::Posterior, None)
            .unwrap();
        assert!(base.mean.bit_eq(&doubled.mean));
        assert!(base.log_var.bit_eq(&doubled.log_var));
    }

    #[test]
    fn adapter_single_task_returns_the_row() {
        let (store, nets) = nets(false, 1);
        let p = store.constants();
        let tape = Tape::new();
        let m = build_global_context(
            &tape,
            &[t(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.25, 8.0])],
            &[],
            ContextMode::Regression,
            MissingClassPolicy::Strict,
        )
        .unwrap();
        let mut rng = RngStream::new(9);
        for _ in 0..5 {
            let a = rng.normal_tensor::<f64>(vec![1, 2]);
            let out = nets.adapt(&tape, &p, &a, &m, None).unwrap();
            assert!(out.bit_eq(&m.values));
        }
    }

    #[test]
    fn adapter_output_is_convex_combination() {
        let (store, nets) = nets(true, 3);
        let p = store.constants();
        let tape = Tape::new();
        let mut rng = RngStream::new(4);
        let feats: Vec<Tensor<f64>> = (0..3).map(|_| rng.normal_tensor(vec![6, 4])).collect();
        let labels = vec![vec![0, 1, 2, 0, 1, 2]; 3];
        let m = build_global_context(
            &tape,
            &feats,
            &labels,
            ContextMode::Classification { classes: 3 },
            MissingClassPolicy::Strict,
        )
        .unwrap();
        for _ in 0..20 {
            let a = rng.normal_tensor::<f64>(vec![1, 2]);
            let w = nets.adapter.weights(&tape, &p, &a).unwrap();
            assert!(w.data().iter().all(|&v| v >= 0.0));
            assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let all = nets.adapter.adapt_all(&tape, &p, &a, &m).unwrap();
            assert_eq!(all.shape(), &[3, 4]);
            for c in 0..3 {
                let mc = nets.adapt(&tape, &p, &a, &m, Some(c)).unwrap();
                assert!(mc.max_abs_diff(&tape.slice(&all, Axis::Rows, c, c + 1).unwrap()) < 1e-14);
                for k in 0..4 {
                    let col: Vec<f64> = (0..3).map(|l| m.cell(l, c)[k]).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = mc.data()[k];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    // oracle: recompute the convex combination directly
                    let direct: f64 = (0..3).map(|l| w.data()[l] * col[l]).sum();
                    assert!((direct - v).abs() < 1e-12);
                }
            }
        }
        assert!(nets.adapt(&tape, &p, &rng.normal_tensor(vec![1, 2]), &m, Some(3)).is_err());
        assert!(nets.adapt(&tape, &p, &rng.normal_tensor(vec![1, 2]), &m, None).is_err());
        assert!(nets.adapt(&tape, &p, &rng.normal_tensor(vec![1, 3]), &m, Some(0)).is_err());
    }

    #[test]
    fn adapter_equal_rows_give_that_row() {
        let (store, nets) = nets(false, 3);
        let p = store.constants();
        let tape = Tape::new();
        let v = [0.3, -2.0, 7.5, 1e-3];
        let f = t(1, 4, &v);
        let m = build_global_context(
            &tape,
            &[f.clone(), f.clone(), f],
            &[],
            ContextMode::Regression,
            MissingClassPolicy::Strict,
        )
        .unwrap();
        let mut rng = RngStream::new(8);
        for _ in 0..10 {
            let out = nets
                .adapt(&tape, &p, &rng.normal_tensor(vec![1, 2]), &m, None)
                .unwrap();
            for (a, b) in out.data().iter().zip(v) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn function_prior_per_class_is_independent() {
        let (store, nets) = nets(true, 2);
        let p = store.constants();
        let tape = Tape::new();
        let row = [0.5, -1.0, 2.0, 0.1];
        let m = t(2, 4, &[row, row].concat());
        let prior = nets.function_prior(&tape, &p, &m).unwrap();
        assert_eq!(prior.mean.shape(), &[2, 4]);
        assert_eq!(prior.mean.data()[..4], prior.mean.data()[4..]);
        assert_eq!(prior.log_var.data()[..4], prior.log_var.data()[4..]);
        assert!(prior.variance().data().iter().all(|&v| v > 0.0));
        assert!(nets.function_prior(&tape, &p, &t(1, 3, &[0.0; 3])).is_err());
    }

    #[test]
    fn function_posterior_shape_and_symmetry() {
        let (store, nets) = nets(true, 2);
        let p = store.constants();
        let tape = Tape::new();
        let mut rng = RngStream::new(2);
        let x = rng.normal_tensor::<f64>(vec![7, 4]);
        let labels = [0, 2, 1, 1, 0, 2, 2];
        let y = one_hot(&labels, 3);
        let groups = |ls: &[usize]| {
            let mut g = vec![Vec::new(); 3];
            for (i, &c) in ls.iter().enumerate() {
                g[c].push(i);
            }
            g
        };
        let q = nets
            .encode_function_posterior(&tape, &p, &x, &y, &groups(&labels), None)
            .unwrap();
        assert_eq!(q.mean.shape(), &[3, 4]);
        let perm = [6, 5, 4, 3, 2, 1, 0];
        let xp = crate::data::permute_rows(&x, &perm);
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let yp = one_hot(&lp, 3);
        let qp = nets
            .encode_function_posterior(&tape, &p, &xp, &yp, &groups(&lp), None)
            .unwrap();
        assert!(q.mean.bit_eq(&qp.mean) && q.log_var.bit_eq(&qp.log_var));

        // singleton pool equals the sample's own path
        let single = nets
            .encode_function_posterior(&tape, &p, &x, &y, &[vec![0], vec![2], vec![1]], None)
            .unwrap();
        let h = nets.psi_posterior.embed.forward(&tape, &p, &x).unwrap();
        let direct = nets
            .psi_posterior
            .head
            .forward(&tape, &p, &tape.select_rows(&h, &[0, 2, 1]).unwrap())
            .unwrap();
        let direct = split_gaussian(&tape, &direct, 4, Some((-10.0, 10.0))).unwrap();
        assert!(single.mean.bit_eq(&direct.mean));
    }
}
