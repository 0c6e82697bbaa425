//! Full models: the multi-task neural process, vanilla neural processes
//! and the single-/multi-task baselines, behind one training and one
//! prediction entry point.

mod baseline;
mod mtnp;
mod np;

use std::fmt;
use std::str::FromStr;

use crate::context::{HierarchyDims, HierarchyNets, MissingClassPolicy, SetEncoder};
use crate::data::{LabelKind, TaskData};
use crate::nn::{Bound, Linear, Mlp, ParamId, ParamStore};
use crate::rng::{NoiseSource, RngStream};
use crate::scalar::{exact_sum, Scalar};
use crate::tensor::{Axis, Tape, Tensor, TensorError};
use crate::{Error, Result};

pub use baseline::BaselineNets;
pub use mtnp::MtnpNets;
pub use np::NpNets;

/// Stream label used to initialise parameters from a model seed.
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Mtnp,
    Np,
    NpAll,
    Stl,
    Vstl,
    Bmtl,
    Vbmtl,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Stl,
        Variant::Vstl,
        Variant::Bmtl,
        Variant::Vbmtl,
        Variant::Np,
        Variant::NpAll,
        Variant::Mtnp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mtnp => "mtnp",
            Variant::Np => "np",
            Variant::NpAll => "np-all",
            Variant::Stl => "stl",
            Variant::Vstl => "vstl",
            Variant::Bmtl => "bmtl",
            Variant::Vbmtl => "vbmtl",
        }
    }

    /// Whether predictions condition on the context set.
    pub fn uses_context(self) -> bool {
        matches!(self, Variant::Mtnp | Variant::Np | Variant::NpAll)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// Starting log-variance of latent heads; also the fixed start of the
/// variational baselines' weight posteriors.
pub const LOGVAR_INIT: f64 = -6.0;

/// Layer widths and regularisation of every network.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct Arch {
    /// Width `d` of the features the linear head reads.
    pub feature_dim: usize,
    /// Hidden width of the learned feature extractor; `None` uses the raw
    /// inputs as features.
    pub extractor_hidden: Option<usize>,
    pub psi_hidden: usize,
    pub alpha_dim: usize,
    pub alpha_hidden: usize,
    pub adapter_hidden: Vec<usize>,
    pub z_dim: usize,
    pub np_hidden: usize,
    pub decoder_hidden: usize,
    pub trunk_hidden: usize,
    /// Keep probability of the dropout on encoder inputs.
    pub keep_prob: f64,
    pub logvar_clamp: Option<(f64, f64)>,
    /// Initial log-variance bias of the latent-variable heads.
    pub logvar_init: f64,
    /// Feed `M`'s own row to the function prior instead of `h(α, M)`.
    pub adapter_bypass: bool,
}

impl Arch {
    /// Paper-scale widths.
    pub fn paper() -> Self {
        Self {
            feature_dim: 4096,
            extractor_hidden: None,
            psi_hidden: 4096,
            alpha_dim: 2048,
            alpha_hidden: 2048,
            adapter_hidden: vec![1024, 512],
            z_dim: 2048,
            np_hidden: 4096,
            decoder_hidden: 4096,
            trunk_hidden: 4096,
            keep_prob: 0.7,
            logvar_clamp: Some((-10.0, 10.0)),
            logvar_init: LOGVAR_INIT,
            adapter_bypass: false,
        }
    }

    /// Paper widths scaled to `d = 32`, `d_α = 16`.
    pub fn desk() -> Self {
        Self {
            feature_dim: 32,
            extractor_hidden: None,
            psi_hidden: 32,
            alpha_dim: 16,
            alpha_hidden: 16,
            adapter_hidden: vec![8, 4],
            z_dim: 16,
            np_hidden: 32,
            decoder_hidden: 32,
            trunk_hidden: 32,
            keep_prob: 1.0,
            logvar_clamp: Some((-10.0, 10.0)),
            logvar_init: LOGVAR_INIT,
            adapter_bypass: false,
        }
    }

    /// Tiny widths for gradient and quadrature checks.
    pub fn toy() -> Self {
        Self {
            feature_dim: 2,
            extractor_hidden: None,
            psi_hidden: 3,
            alpha_dim: 1,
            alpha_hidden: 3,
            adapter_hidden: vec![3],
            z_dim: 1,
            np_hidden: 3,
            decoder_hidden: 3,
            trunk_hidden: 3,
            keep_prob: 1.0,
            logvar_clamp: Some((-10.0, 10.0)),
            logvar_init: 0.0,
            adapter_bypass: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("feature_dim", self.feature_dim),
            ("psi_hidden", self.psi_hidden),
            ("alpha_dim", self.alpha_dim),
            ("alpha_hidden", self.alpha_hidden),
            ("z_dim", self.z_dim),
            ("np_hidden", self.np_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("trunk_hidden", self.trunk_hidden),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("arch.{name} must be positive")));
            }
        }
        if self.extractor_hidden.is_some() && self.feature_dim < 2 {
            return Err(Error::Config(
                "arch.feature_dim must be at least 2 with a feature extractor".into(),
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config("arch.keep_prob must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Maps raw inputs to the `d`-dimensional features every head reads.
///
/// The learned variant is an MLP to `d − 1` units followed by a constant-1
/// column, which acts as the bias of the linear head.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub mlp: Option<Mlp>,
}

impl FeatureMap {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        arch: &Arch,
        rng: &mut RngStream,
    ) -> Result<Self> {
        match arch.extractor_hidden {
            None => {
                if input_dim != arch.feature_dim {
                    return Err(Error::Config(format!(
                        "input width {input_dim} must equal arch.feature_dim {} without a feature extractor",
                        arch.feature_dim
                    )));
                }
                Ok(Self { mlp: None })
            }
            Some(h) => Ok(Self {
                mlp: Some(Mlp::new(
                    store,
                    name,
                    &[input_dim, h, arch.feature_dim - 1],
                    true,
                    rng,
                )),
            }),
        }
    }

    pub fn apply<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        x: &Tensor<S>,
    ) -> Result<Tensor<S>, TensorError> {
        match &self.mlp {
            None => Ok(x.clone()),
            Some(mlp) => {
                let h = mlp.forward(tape, p, x)?;
                tape.concat(&[&h, &Tensor::ones(vec![x.rows(), 1])], Axis::Cols)
            }
        }
    }
}

/// Monte-Carlo sizes and loss weights of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig {
    pub n_f: usize,
    pub n_a: usize,
    /// Regression observation-noise variance.
    pub sigma2: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub missing_class: MissingClassPolicy,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            n_f: 10,
            n_a: 5,
            sigma2: 0.01,
            lambda_f: 1.0,
            lambda_a: 1.0,
            missing_class: MissingClassPolicy::Backfill,
        }
    }
}

impl ForwardConfig {
    fn check(&self) -> Result<()> {
        if self.n_f == 0 || self.n_a == 0 {
            return Err(Error::Config("n_f and n_a must be at least 1".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        Ok(())
    }
}

/// Dropout masks on the encoder inputs, one per task and set, each shaped
/// like that set's features.
#[derive(Debug, Clone)]
pub struct Masks<S> {
    pub context: Vec<Option<Tensor<S>>>,
    pub target: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Masks<S> {
    pub fn none(tasks: usize) -> Self {
        Self {
            context: vec![None; tasks],
            target: vec![None; tasks],
        }
    }
}

/// Loss pieces of one task.
#[derive(Debug, Clone)]
pub struct TaskTerms<S> {
    pub task: usize,
    /// Monte-Carlo average of `−log p(Y* | X*, ·)`.
    pub nll: Tensor<S>,
    /// KL of the function latent (`ψ`, `z`, or head weights), averaged over
    /// summary draws.
    pub kl_f: Tensor<S>,
    /// KL of the task summary `α`; zero for other models.
    pub kl_a: Tensor<S>,
    pub loss: Tensor<S>,
    /// `log p(Y* | X*, draw)` for every function draw, in draw order.
    pub sample_log_lik: Vec<S>,
    /// Per summary draw: mean log-likelihood of its function draws minus
    /// `λ_f` times its KL. The loss is `−mean(these) + λ_a · kl_a`.
    pub summary_terms: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<S> {
    pub tasks: Vec<TaskTerms<S>>,
    /// Sum of the per-task losses.
    pub loss: Tensor<S>,
    /// `(task, class)` cells of `M` filled by backfill.
    pub backfilled: Vec<(usize, usize)>,
}

impl<S: Scalar> TrainOutput<S> {
    pub fn nll(&self) -> f64 {
        self.tasks.iter().map(|t| t.nll.item().as_f64()).sum()
    }

    pub fn kl_f(&self) -> f64 {
        self.tasks.iter().map(|t| t.kl_f.item().as_f64()).sum()
    }

    pub fn kl_a(&self) -> f64 {
        self.tasks.iter().map(|t| t.kl_a.item().as_f64()).sum()
    }
}

/// Monte-Carlo predictive of one task.
///
/// Per draw, `draws[s]` holds log-probabilities (`n × C`, classification)
/// or predicted means (`n × 1`, regression) for every target row.
#[derive(Debug, Clone)]
pub struct Prediction<S> {
    pub task: usize,
    pub kind: LabelKind,
    pub draws: Vec<Tensor<S>>,
}

impl<S: Scalar> Prediction<S> {
    pub fn rows(&self) -> usize {
        self.draws[0].rows()
    }

    /// Predictive mean: class probabilities or regression mean, `n × C`.
    pub fn mean(&self) -> Tensor<S> {
        let first = &self.draws[0];
        let n = self.draws.len() as f64;
        let data = (0..first.len())
            .map(|k| {
                let vals: Vec<S> = self
                    .draws
                    .iter()
                    .map(|d| match self.kind {
                        LabelKind::OneHot { .. } => d.data()[k].exp(),
                        LabelKind::Real => d.data()[k],
                    })
                    .collect();
                S::of(exact_sum(vals).as_f64() / n)
            })
            .collect();
        Tensor::new(first.shape().to_vec(), data).expect("same shape")
    }

    /// Arg-max class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        let m = self.mean();
        let c = m.cols();
        (0..m.rows())
            .map(|r| {
                let row = &m.data()[r * c..(r + 1) * c];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// `log p(y_i | x_i, draw)` for the listed rows.
    fn row_log_lik(&self, draw: usize, rows: &[usize], y: &Tensor<S>, sigma2: f64) -> Vec<f64> {
        let d = &self.draws[draw];
        let c = d.cols();
        rows.iter()
            .map(|&r| match self.kind {
                LabelKind::OneHot { .. } => {
                    let hot = (0..c).find(|&j| y.at(r, j) == S::one()).unwrap_or(0);
                    d.at(r, hot).as_f64()
                }
                LabelKind::Real => {
                    let e = y.at(r, 0).as_f64() - d.at(r, 0).as_f64();
                    -0.5 * (crate::gaussian::LN_2PI + sigma2.ln() + e * e / sigma2)
                }
            })
            .collect()
    }

    /// `log (1/S) Σ_s Π_{i ∈ rows} p(y_i | x_i, draw s)`, with `y` holding
    /// one label row per target row.
    pub fn joint_log_density(&self, rows: &[usize], y: &Tensor<S>, sigma2: f64) -> f64 {
        let per_draw: Vec<f64> = (0..self.draws.len())
            .map(|s| exact_sum(self.row_log_lik(s, rows, y, sigma2)))
            .collect();
        log_mean_exp(&per_draw)
    }
}

/// `log (1/n) Σ exp(v)`, stable.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s = exact_sum(v.iter().map(|x| (x - m).exp()));
    m + (s / v.len() as f64).ln()
}

/// Linear function head `X ψᵀ`: `n × d` inputs, `C × d` weights.
pub fn predict_linear<S: Scalar>(
    tape: &Tape<S>,
    psi: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if psi.shape().len() != 2 || x.shape().len() != 2 || psi.cols() != x.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "predict_linear",
            lhs: x.shape().to_vec(),
            rhs: psi.shape().to_vec(),
        });
    }
    tape.matmul(x, &tape.transpose(psi)?)
}

/// `log p(Y | pred)`: categorical over logits for one-hot labels, Gaussian
/// with variance `sigma2` for real labels. Summed over rows.
pub fn log_likelihood<S: Scalar>(
    tape: &Tape<S>,
    pred: &Tensor<S>,
    y: &Tensor<S>,
    kind: LabelKind,
    sigma2: f64,
) -> Result<Tensor<S>> {
    if pred.shape() != y.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "log_likelihood",
            lhs: pred.shape().to_vec(),
            rhs: y.shape().to_vec(),
        }
        .into());
    }
    match kind {
        LabelKind::OneHot { .. } => {
            let c = y.cols();
            for r in 0..y.rows() {
                let row = &y.data()[r * c..(r + 1) * c];
                let ones = row.iter().filter(|&&v| v == S::one()).count();
                let zeros = row.iter().filter(|&&v| v == S::zero()).count();
                if ones != 1 || ones + zeros != c {
                    return Err(Error::InvalidData(format!("label row {r} is not one-hot")));
                }
            }
            let lp = tape.log_softmax(pred)?;
            Ok(tape.sum_all(&tape.mul(&lp, &y.detach())?)?)
        }
        LabelKind::Real => {
            if !(sigma2 > 0.0) {
                return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
            }
            let r = tape.sub(&y.detach(), pred)?;
            let sq = tape.sum_all(&tape.mul(&r, &r)?)?;
            let n = S::of(y.len() as f64);
            let constant = Tensor::scalar(n * S::of(crate::gaussian::LN_2PI + sigma2.ln()));
            let inner = tape.add(&tape.scale(&sq, S::of(1.0 / sigma2))?, &constant)?;
            Ok(tape.scale(&inner, S::of(-0.5))?)
        }
    }
}

/// Gaussian weights of a linear head, `N(0, 1)` prior.
#[derive(Debug, Clone)]
pub struct GaussianLinear {
    pub w_mean: ParamId,
    pub w_logvar: ParamId,
    pub b_mean: ParamId,
    pub b_logvar: ParamId,
}

impl GaussianLinear {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut RngStream,
    ) -> Self {
        let lin = Linear::new(store, &format!("{name}.mean"), fan_in, fan_out, rng);
        let w_logvar = store.add(
            format!("{name}.logvar.weight"),
            Tensor::full(vec![fan_in, fan_out], S::of(LOGVAR_INIT)),
        );
        let b_logvar = store.add(
            format!("{name}.logvar.bias"),
            Tensor::full(vec![1, fan_out], S::of(LOGVAR_INIT)),
        );
        Self {
            w_mean: lin.weight,
            w_logvar,
            b_mean: lin.bias,
            b_logvar,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Nets {
    Mtnp(MtnpNets),
    Np(NpNets),
    Baseline(BaselineNets),
}

/// A model variant with its parameters.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub variant: Variant,
    pub arch: Arch,
    pub kind: LabelKind,
    pub input_dim: usize,
    pub tasks: usize,
    pub store: ParamStore<S>,
    pub nets: Nets,
}

impl<S: Scalar> Model<S> {
    pub fn new(
        variant: Variant,
        arch: Arch,
        kind: LabelKind,
        input_dim: usize,
        tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if tasks == 0 || input_dim == 0 {
            return Err(Error::Config("tasks and input width must be positive".into()));
        }
        let mut rng = RngStream::with_stream(seed, INIT_STREAM);
        let mut store = ParamStore::new();
        let nets = match variant {
            Variant::Mtnp => {
                let features = FeatureMap::new(&mut store, "features", input_dim, &arch, &mut rng)?;
                let dims = HierarchyDims {
                    feature_dim: arch.feature_dim,
                    label_dim: kind.width(),
                    classification: kind.is_classification(),
                    psi_hidden: arch.psi_hidden,
                    alpha_dim: arch.alpha_dim,
                    alpha_hidden: arch.alpha_hidden,
                    adapter_hidden: arch.adapter_hidden.clone(),
                    tasks,
                    logvar_init: arch.logvar_init,
                };
                let hierarchy = HierarchyNets::new(&mut store, dims, arch.logvar_clamp, &mut rng);
                Nets::Mtnp(MtnpNets {
                    features,
                    hierarchy,
                })
            }
            Variant::Np | Variant::NpAll => {
                let features = FeatureMap::new(&mut store, "features", input_dim, &arch, &mut rng)?;
                let encoder = SetEncoder::new(
                    &mut store,
                    "z_encoder",
                    arch.feature_dim + kind.width(),
                    arch.np_hidden,
                    arch.z_dim,
                    arch.logvar_init,
                    &mut rng,
                );
                let decoder = Mlp::new(
                    &mut store,
                    "decoder",
                    &[arch.feature_dim + arch.z_dim, arch.decoder_hidden, kind.outputs()],
                    false,
                    &mut rng,
                );
                Nets::Np(NpNets {
                    features,
                    encoder,
                    decoder,
                    all_context: variant == Variant::NpAll,
                })
            }
            Variant::Stl | Variant::Vstl | Variant::Bmtl | Variant::Vbmtl => Nets::Baseline(
                BaselineNets::new(&mut store, variant, &arch, kind, input_dim, tasks, &mut rng),
            ),
        };
        Ok(Self {
            variant,
            arch,
            kind,
            input_dim,
            tasks,
            store,
            nets,
        })
    }

    /// Draw fresh encoder-input dropout masks for `episode`.
    pub fn sample_masks(&self, episode: &[TaskData<S>], rng: &mut RngStream) -> Masks<S> {
        let drop = 1.0 - self.arch.keep_prob;
        if drop <= 0.0 {
            return Masks::none(episode.len());
        }
        let d = self.encoder_width();
        Masks {
            context: episode
                .iter()
                .map(|t| Some(rng.dropout_mask(vec![t.context_x.rows(), d], drop)))
                .collect(),
            target: episode
                .iter()
                .map(|t| Some(rng.dropout_mask(vec![t.target_x.rows(), d], drop)))
                .collect(),
        }
    }

    /// Width of the features the masks apply to.
    pub fn encoder_width(&self) -> usize {
        match &self.nets {
            Nets::Baseline(_) => self.input_dim,
            _ => self.arch.feature_dim,
        }
    }

    fn check_episode(&self, episode: &[TaskData<S>]) -> Result<()> {
        if episode.len() != self.tasks {
            return Err(Error::InvalidData(format!(
                "model has {} tasks, episode has {}",
                self.tasks,
                episode.len()
            )));
        }
        for (l, t) in episode.iter().enumerate() {
            if t.kind != self.kind {
                return Err(Error::InvalidData(format!("task {l}: label kind mismatch")));
            }
            if t.context_x.cols() != self.input_dim || t.target_x.cols() != self.input_dim {
                return Err(Error::InvalidData(format!(
                    "task {l}: input width != {}",
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Loss terms on a training episode. Parameters come from `p` (bound to
    /// `tape` for gradients, or constants). Noise is consumed in a fixed,
    /// documented order per model family.
    pub fn train_forward(
        &self,
        tape: &Tape<S>,
        p: &Bound<S>,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        masks: &Masks<S>,
        cfg: &ForwardConfig,
    ) -> Result<TrainOutput<S>> {
        cfg.check()?;
        self.check_episode(episode)?;
        let (tasks, backfilled) = match &self.nets {
            Nets::Mtnp(n) => n.train(self, tape, p, episode, noise, masks, cfg)?,
            Nets::Np(n) => (n.train(self, tape, p, episode, noise, masks, cfg)?, Vec::new()),
            Nets::Baseline(n) => (n.train(self, tape, p, episode, noise, masks, cfg)?, Vec::new()),
        };
        let losses: Vec<Tensor<S>> = tasks.iter().map(|t| t.loss.clone()).collect();
        let loss = tape.sum_all(&stack_scalars(tape, &losses)?)?;
        Ok(TrainOutput {
            tasks,
            loss,
            backfilled,
        })
    }

    /// Predictive distribution on every task's target inputs, conditioned
    /// on the context sets only. Target labels are never read.
    pub fn predict(
        &self,
        episode: &[TaskData<S>],
        noise: &mut dyn NoiseSource<S>,
        cfg: &ForwardConfig,
    ) -> Result<Vec<Prediction<S>>> {
        cfg.check()?;
        self.check_episode(episode)?;
        let tape = Tape::new();
        let p = self.store.constants();
        match &self.nets {
            Nets::Mtnp(n) => n.predict(self, &tape, &p, episode, noise, cfg),
            Nets::Np(n) => n.predict(self, &tape, &p, episode, noise, cfg),
            Nets::Baseline(n) => n.predict(self, &tape, &p, episode, noise, cfg),
        }
    }
}

/// Scalar tensor holding a mean of scalar tensors.
fn mean_scalars<S: Scalar>(tape: &Tape<S>, xs: &[Tensor<S>]) -> Result<Tensor<S>, TensorError> {
    tape.reshape(&tape.mean(&stack_scalars(tape, xs)?, Axis::Rows)?, vec![])
}

/// `n × 1` column of scalar tensors.
fn stack_scalars<S: Scalar>(tape: &Tape<S>, xs: &[Tensor<S>]) -> Result<Tensor<S>, TensorError> {
    let cols: Vec<Tensor<S>> = xs
        .iter()
        .map(|x| tape.reshape(x, vec![1, 1]))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Tensor<S>> = cols.iter().collect();
    tape.concat(&refs, Axis::Rows)
}

/// Assemble one task's loss from its per-summary-draw pieces.
///
/// `lls[i]` holds the function-draw log-likelihoods of summary draw `i`,
/// `kls[i]` its function KL.
fn assemble_terms<S: Scalar>(
    tape: &Tape<S>,
    task: usize,
    lls: Vec<Vec<Tensor<S>>>,
    kls: Vec<Tensor<S>>,
    kl_a: Tensor<S>,
    cfg: &ForwardConfig,
) -> Result<TaskTerms<S>, TensorError> {
    let lf = S::of(cfg.lambda_f);
    let mut inner = Vec::with_capacity(lls.len());
    let mut nlls = Vec::with_capacity(lls.len());
    let mut summary_terms = Vec::with_capacity(lls.len());
    let mut sample_log_lik = Vec::new();
    for (ll, kl) in lls.iter().zip(&kls) {
        sample_log_lik.extend(ll.iter().map(Tensor::item));
        let mean_ll = mean_scalars(tape, ll)?;
        let term = tape.sub(&mean_ll, &tape.scale(kl, lf)?)?;
        summary_terms.push(term.item());
        nlls.push(tape.scale(&mean_ll, -S::one())?);
        inner.push(term);
    }
    let nll = mean_scalars(tape, &nlls)?;
    let kl_f = mean_scalars(tape, &kls)?;
    let elbo_part = mean_scalars(tape, &inner)?;
    let loss = tape.sub(&tape.scale(&kl_a, S::of(cfg.lambda_a))?, &elbo_part)?;
    Ok(TaskTerms {
        task,
        nll,
        kl_f,
        kl_a,
        loss,
        sample_log_lik,
        summary_terms,
    })
}
