//! The invariant suite behind `mtnp verify`.
//!
//! Each check reports a measured value against a threshold. The listing is
//! tab-separated: `check, status, value, threshold, seconds, detail`.

use std::fmt::Write as _;
use std::time::Instant;

use mtnp_core::context::SummaryRole;
use mtnp_core::data::{one_hot, permute_rows, Dataset, LabelKind, Set, TaskData};
use mtnp_core::gaussian::{kl, DiagGaussian};
use mtnp_core::model::{Arch, ForwardConfig, Masks, Model, Nets, Variant};
use mtnp_core::rng::{Recorded, ZeroNoise};
use mtnp_core::taskgen::{
    format_feature_table, gen_1d_tasks, gen_cluster_tasks, parse_feature_table, ClusterSpec,
    Curve1DSpec, FeatureSchema,
};
use mtnp_core::tensor::{finite_difference_check_many, Axis, GradCheckError, Tape, Tensor, TensorError};
use mtnp_core::train::{anneal, learning_rate, TrainConfig, Trainer};
use mtnp_core::RngStream;

use crate::config::{resolve, Overrides};
use crate::oracle::{hierarchy_elbo_quadrature, kl_1d_quadrature};
use crate::runner::compare;
use crate::RunError;

type T = Tensor<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(RunError::Config(format!("unknown level `{other}` (fast, full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub seconds: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{:e}\t{:e}\t{:.3}\t{}",
            self.name,
            if self.passed { "pass" } else { "fail" },
            self.value,
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

pub const LISTING_HEADER: &str = "check\tstatus\tvalue\tthreshold\tseconds\tdetail";

pub fn listing(results: &[CheckResult]) -> String {
    let mut s = String::from(LISTING_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(s, "{}", r.line());
    }
    s
}

fn timed(
    name: &str,
    threshold: f64,
    f: impl FnOnce() -> Result<(f64, String), RunError>,
) -> CheckResult {
    let start = Instant::now();
    let (value, detail, passed) = match f() {
        Ok((v, d)) => (v, d, v < threshold),
        Err(e) => (f64::NAN, format!("error: {e}"), false),
    };
    CheckResult {
        name: name.into(),
        passed,
        value,
        threshold,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    }
}

fn core_err(e: mtnp_core::Error) -> TensorError {
    match e {
        mtnp_core::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            msg: other.to_string(),
        },
    }
}

fn grad_err(e: GradCheckError) -> RunError {
    RunError::Failed(e.to_string())
}

// ---------------------------------------------------------------- gradients

type OpFn = Box<dyn Fn(&Tape<f64>, &[T]) -> Result<T, TensorError>>;

fn dim(rng: &mut RngStream) -> usize {
    1 + rng.below(5)
}

/// Values bounded away from `points` by at least `gap`.
fn away_from(rng: &mut RngStream, shape: Vec<usize>, points: &[f64], gap: f64) -> T {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = 2.0 * rng.normal();
            if points.iter().all(|p| (v - p).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// One random instance of `op`: inputs and a scalar function of them that
/// weights every output entry by a fixed random coefficient.
fn op_case(op: &str, rng: &mut RngStream) -> (Vec<T>, OpFn) {
    let (r, c, k) = (dim(rng), dim(rng), dim(rng));
    let normal = |rng: &mut RngStream, s: Vec<usize>| rng.normal_tensor::<f64>(s);
    let weight = |rng: &mut RngStream, shape: Vec<usize>| rng.normal_tensor::<f64>(shape);
    let weighted = |w: T, f: OpFn| -> OpFn {
        Box::new(move |tape: &Tape<f64>, xs: &[T]| {
            let y = f(tape, xs)?;
            tape.sum_all(&tape.mul(&y, &w)?)
        })
    };
    match op {
        "matmul" => {
            let xs = vec![normal(rng, vec![r, k]), normal(rng, vec![k, c])];
            (xs, weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.matmul(&x[0], &x[1]))))
        }
        "transpose" => (
            vec![normal(rng, vec![r, c])],
            weighted(weight(rng, vec![c, r]), Box::new(|t, x| t.transpose(&x[0]))),
        ),
        "add" | "sub" | "mul" => {
            let xs = vec![normal(rng, vec![r, c]), normal(rng, vec![r, c])];
            let f: OpFn = match op {
                "add" => Box::new(|t, x| t.add(&x[0], &x[1])),
                "sub" => Box::new(|t, x| t.sub(&x[0], &x[1])),
                _ => Box::new(|t, x| t.mul(&x[0], &x[1])),
            };
            (xs, weighted(weight(rng, vec![r, c]), f))
        }
        "scale" => {
            let s = rng.normal();
            (
                vec![normal(rng, vec![r, c])],
                weighted(weight(rng, vec![r, c]), Box::new(move |t, x| t.scale(&x[0], s))),
            )
        }
        "exp" => (
            vec![normal(rng, vec![r, c])],
            weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.exp(&x[0]))),
        ),
        "ln" => {
            let x = normal(rng, vec![r, c]).map(|v| v.abs() + 0.5);
            (vec![x], weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.ln(&x[0]))))
        }
        "elu" => (
            vec![away_from(rng, vec![r, c], &[0.0], 1e-3)],
            weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.elu(&x[0]))),
        ),
        "sum_rows" | "sum_cols" | "mean_rows" | "mean_cols" => {
            let axis = if op.ends_with("rows") { Axis::Rows } else { Axis::Cols };
            let out = if axis == Axis::Rows { vec![1, c] } else { vec![r, 1] };
            let f: OpFn = if op.starts_with("sum") {
                Box::new(move |t, x| t.sum(&x[0], axis))
            } else {
                Box::new(move |t, x| t.mean(&x[0], axis))
            };
            (vec![normal(rng, vec![r, c])], weighted(weight(rng, out), f))
        }
        "sum_all" => (
            vec![normal(rng, vec![r, c])],
            Box::new(|t: &Tape<f64>, x: &[T]| {
                let s = t.sum_all(&x[0])?;
                t.mul(&s, &s)
            }),
        ),
        "concat_rows" => {
            let xs = vec![normal(rng, vec![r, c]), normal(rng, vec![k, c])];
            (
                xs,
                weighted(weight(rng, vec![r + k, c]), Box::new(|t, x| t.concat(&[&x[0], &x[1]], Axis::Rows))),
            )
        }
        "concat_cols" => {
            let xs = vec![normal(rng, vec![r, c]), normal(rng, vec![r, k])];
            (
                xs,
                weighted(weight(rng, vec![r, c + k]), Box::new(|t, x| t.concat(&[&x[0], &x[1]], Axis::Cols))),
            )
        }
        "slice_rows" | "slice_cols" => {
            let axis = if op == "slice_rows" { Axis::Rows } else { Axis::Cols };
            let n = if axis == Axis::Rows { r } else { c };
            let start = rng.below(n);
            let end = start + 1 + rng.below(n - start);
            let out = if axis == Axis::Rows { vec![end - start, c] } else { vec![r, end - start] };
            (
                vec![normal(rng, vec![r, c])],
                weighted(weight(rng, out), Box::new(move |t, x| t.slice(&x[0], axis, start, end))),
            )
        }
        "select_rows" => {
            let idx: Vec<usize> = (0..k + 1).map(|_| rng.below(r)).collect();
            let n = idx.len();
            (
                vec![normal(rng, vec![r, c])],
                weighted(weight(rng, vec![n, c]), Box::new(move |t, x| t.select_rows(&x[0], &idx))),
            )
        }
        "log_softmax" => (
            vec![normal(rng, vec![r, c])],
            weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.log_softmax(&x[0]))),
        ),
        "broadcast_rows" => (
            vec![normal(rng, vec![1, c])],
            weighted(weight(rng, vec![r, c]), Box::new(move |t, x| t.broadcast_rows(&x[0], r))),
        ),
        "dropout" => {
            let mask: T = rng.dropout_mask(vec![r, c], 0.3);
            (
                vec![normal(rng, vec![r, c])],
                weighted(weight(rng, vec![r, c]), Box::new(move |t, x| t.dropout(&x[0], &mask))),
            )
        }
        "reshape" => (
            vec![normal(rng, vec![r, c])],
            weighted(weight(rng, vec![c, r]), Box::new(move |t, x| t.reshape(&x[0], vec![c, r]))),
        ),
        "clamp" => (
            vec![away_from(rng, vec![r, c], &[-0.5, 0.5], 1e-3)],
            weighted(weight(rng, vec![r, c]), Box::new(|t, x| t.clamp(&x[0], -0.5, 0.5))),
        ),
        other => unreachable!("unknown op case {other}"),
    }
}

pub const OP_CASES: [&str; 24] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "exp",
    "ln",
    "elu",
    "sum_rows",
    "sum_cols",
    "mean_rows",
    "mean_cols",
    "sum_all",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "select_rows",
    "log_softmax",
    "broadcast_rows",
    "dropout",
    "reshape",
    "clamp",
];

/// Worst relative finite-difference error of every op over `shapes` random
/// shapes each.
pub fn op_gradient_errors(shapes: usize, seed: u64) -> Result<Vec<(String, f64)>, RunError> {
    let mut rng = RngStream::new(seed);
    let mut out: Vec<(String, f64)> = Vec::new();
    for op in OP_CASES {
        let mut worst = 0.0f64;
        for _ in 0..shapes {
            let (xs, f) = op_case(op, &mut rng);
            worst = worst.max(finite_difference_check_many(|t, x| f(t, x), &xs, 1e-6).map_err(grad_err)?);
        }
        out.push((op.to_string(), worst));
    }
    Ok(out)
}

/// Random episode; classification episodes put every class in every context.
pub fn random_episode(
    rng: &mut RngStream,
    kind: LabelKind,
    tasks: usize,
    d: usize,
    n_ctx: usize,
    n_tgt: usize,
) -> Vec<TaskData<f64>> {
    (0..tasks)
        .map(|l| {
            let x: T = rng.normal_tensor(vec![n_tgt, d]);
            let y: T = match kind {
                LabelKind::OneHot { classes } => {
                    let labels: Vec<usize> = (0..n_tgt)
                        .map(|i| if i < classes { i } else { rng.below(classes) })
                        .collect();
                    one_hot(&labels, classes)
                }
                LabelKind::Real => rng.normal_tensor(vec![n_tgt, 1]),
            };
            let ctx: Vec<usize> = (0..n_ctx).collect();
            TaskData::new(l, permute_rows(&x, &ctx), permute_rows(&y, &ctx), x, y, kind)
                .expect("consistent episode")
        })
        .collect()
}

/// End-to-end loss gradient of the toy preset against central differences,
/// with the reparameterization noise recorded once and replayed.
pub fn loss_gradient_error(variant: Variant, kind: LabelKind, seed: u64) -> Result<f64, RunError> {
    let mut rng = RngStream::new(seed);
    let arch = Arch::toy();
    let ep = random_episode(&mut rng, kind, 2, arch.feature_dim, 3, 5);
    let model = Model::<f64>::new(variant, arch, kind, 2, 2, seed)?;
    let cfg = ForwardConfig {
        n_f: 2,
        n_a: 2,
        sigma2: 0.5,
        ..Default::default()
    };
    let masks = Masks::none(2);
    let mut rec = Recorded::new(RngStream::new(seed ^ 1));
    let tape = Tape::new();
    model.train_forward(&tape, &model.store.constants(), &ep, &mut rec, &masks, &cfg)?;
    let noise = rec.into_log();
    let ids: Vec<_> = model.store.ids().collect();
    let xs: Vec<T> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
    let f = |tape: &Tape<f64>, leaves: &[T]| -> Result<T, TensorError> {
        let mut p = model.store.constants();
        for (&id, x) in ids.iter().zip(leaves) {
            p = p.with(id, x.clone());
        }
        let mut replay = Recorded::replay(noise.clone(), ZeroNoise);
        Ok(model
            .train_forward(tape, &p, &ep, &mut replay, &masks, &cfg)
            .map_err(core_err)?
            .loss)
    };
    finite_difference_check_many(f, &xs, 1e-5).map_err(grad_err)
}

// ----------------------------------------------------------------------- KL

/// Worst `|closed form − quadrature|` over `pairs` random one-dimensional
/// pairs, for a KL implementation given as `(mq, vq, mp, vp) ↦ KL`.
pub fn kl_quadrature_error(pairs: usize, seed: u64, kl_fn: impl Fn(f64, f64, f64, f64) -> f64) -> f64 {
    let mut rng = RngStream::new(seed);
    (0..pairs)
        .map(|_| {
            let (mq, mp) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
            let (vq, vp) = (rng.uniform(-2.0, 2.0).exp(), rng.uniform(-2.0, 2.0).exp());
            (kl_fn(mq, vq, mp, vp) - kl_1d_quadrature(mq, vq, mp, vp)).abs()
        })
        .fold(0.0, f64::max)
}

/// The library's closed-form KL between one-dimensional Gaussians.
pub fn closed_form_kl(mq: f64, vq: f64, mp: f64, vp: f64) -> f64 {
    let g = |m: f64, v: f64| {
        DiagGaussian::new(Tensor::scalar(m), Tensor::scalar(v.ln())).expect("scalar gaussian")
    };
    kl(&Tape::new(), &g(mq, vq), &g(mp, vp)).expect("kl").item()
}

// -------------------------------------------------------------------- ELBO

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboCheck {
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub quadrature: f64,
    pub log_marginal: f64,
}

/// Monte-Carlo ELBO (`n_a` summary draws, one function draw each) of a frozen
/// toy hierarchy with scalar summaries and two-dimensional function
/// latents, next to its quadrature value and log marginal likelihood.
pub fn elbo_check(n_a: usize, seed: u64) -> Result<ElboCheck, RunError> {
    let mut rng = RngStream::new(seed);
    let arch = Arch::toy();
    let ep = random_episode(&mut rng, LabelKind::Real, 2, 2, 3, 4);
    let model = Model::<f64>::new(Variant::Mtnp, arch, LabelKind::Real, 2, 2, seed)?;
    let cfg = ForwardConfig {
        n_a,
        n_f: 1,
        sigma2: 1.0,
        lambda_f: 1.0,
        lambda_a: 1.0,
        ..Default::default()
    };
    let tape = Tape::new();
    let out = model.train_forward(
        &tape,
        &model.store.constants(),
        &ep,
        &mut RngStream::new(seed ^ 0xE1B0),
        &Masks::none(2),
        &cfg,
    )?;
    let mut var = 0.0;
    for t in &out.tasks {
        let s = &t.summary_terms;
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        var += s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n;
    }
    let oracle = hierarchy_elbo_quadrature(&model, &ep, &cfg)?;
    Ok(ElboCheck {
        monte_carlo: -out.loss.item(),
        standard_error: var.sqrt(),
        quadrature: oracle.iter().map(|o| o.elbo).sum(),
        log_marginal: oracle.iter().map(|o| o.log_marginal).sum(),
    })
}

// ------------------------------------------------------- process invariants

fn rand_perm(rng: &mut RngStream, n: usize) -> Vec<usize> {
    rng.choose(n, n)
}

const PROCESS_VARIANTS: [Variant; 3] = [Variant::Mtnp, Variant::NpAll, Variant::Np];

fn process_arch() -> Arch {
    Arch {
        feature_dim: 4,
        psi_hidden: 5,
        alpha_dim: 2,
        alpha_hidden: 4,
        adapter_hidden: vec![4],
        z_dim: 3,
        np_hidden: 5,
        decoder_hidden: 5,
        keep_prob: 0.7,
        ..Arch::toy()
    }
}

/// Exchangeability over `episodes` random episodes: the largest change of
/// the training log-likelihood draws, the loss and the predictive joint
/// target log-density under simultaneous reordering of every context and
/// target set (noise and dropout masks permuted consistently), and whether
/// every set encoding stayed bitwise identical.
pub fn exchangeability(episodes: usize, seed: u64) -> Result<(f64, bool), RunError> {
    let mut rng = RngStream::new(seed);
    let arch = process_arch();
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for e in 0..episodes {
        let kind = if e % 2 == 0 { LabelKind::OneHot { classes: 3 } } else { LabelKind::Real };
        let variant = PROCESS_VARIANTS[e % 3];
        let tasks = 2 + rng.below(2);
        let (n_ctx, n_tgt) = (3 + rng.below(3), 6 + rng.below(4));
        let ep = random_episode(&mut rng, kind, tasks, 4, n_ctx, n_tgt);
        let model = Model::<f64>::new(variant, arch.clone(), kind, 4, tasks, seed + e as u64)?;
        let masks = model.sample_masks(&ep, &mut rng);
        let cfg = ForwardConfig {
            n_f: 2,
            n_a: 2,
            sigma2: 0.5,
            ..Default::default()
        };
        let mut permuted = ep.clone();
        let mut pmasks = masks.clone();
        for l in 0..tasks {
            let pt = rand_perm(&mut rng, n_tgt);
            let pc = rand_perm(&mut rng, n_ctx);
            permuted[l] = ep[l].permute_target(&pt).permute_context(&pc);
            pmasks.target[l] = masks.target[l].as_ref().map(|m| permute_rows(m, &pt));
            pmasks.context[l] = masks.context[l].as_ref().map(|m| permute_rows(m, &pc));
        }
        let tape = Tape::new();
        let p = model.store.constants();
        let mut rec = Recorded::new(RngStream::new(seed ^ e as u64));
        let a = model.train_forward(&tape, &p, &ep, &mut rec, &masks, &cfg)?;
        let mut replay = Recorded::replay(rec.into_log(), ZeroNoise);
        let b = model.train_forward(&tape, &p, &permuted, &mut replay, &pmasks, &cfg)?;
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            for (u, v) in x.sample_log_lik.iter().zip(&y.sample_log_lik) {
                worst = worst.max((u - v).abs());
            }
            worst = worst.max((x.loss.item() - y.loss.item()).abs());
            bitwise &= x.kl_a.item().to_bits() == y.kl_a.item().to_bits();
        }
        let pa = model.predict(&ep, &mut RngStream::new(seed + 7), &cfg)?;
        let pb = model.predict(&permuted, &mut RngStream::new(seed + 7), &cfg)?;
        for l in 0..tasks {
            let all: Vec<usize> = (0..n_tgt).collect();
            let da = pa[l].joint_log_density(&all, &ep[l].target_y, cfg.sigma2);
            let db = pb[l].joint_log_density(&all, &permuted[l].target_y, cfg.sigma2);
            worst = worst.max((da - db).abs());
        }
        bitwise &= encodings_match(&model, &ep, &permuted, &cfg)?;
    }
    Ok((worst, bitwise))
}

fn same(a: &DiagGaussian<f64>, b: &DiagGaussian<f64>) -> bool {
    a.mean.bit_eq(&b.mean) && a.log_var.bit_eq(&b.log_var)
}

/// Set encodings of `a` and `b` (equal up to row order) are bitwise equal.
fn encodings_match(
    model: &Model<f64>,
    a: &[TaskData<f64>],
    b: &[TaskData<f64>],
    cfg: &ForwardConfig,
) -> Result<bool, RunError> {
    let tape = Tape::new();
    let p = model.store.constants();
    let mut ok = true;
    match &model.nets {
        Nets::Mtnp(n) => {
            let (ca, ma) = n.global_context(model, &tape, &p, a, cfg)?;
            let (cb, mb) = n.global_context(model, &tape, &p, b, cfg)?;
            ok &= ma.values.bit_eq(&mb.values);
            let h = &n.hierarchy;
            for l in 0..a.len() {
                let ta = n.features.apply(&tape, &p, &a[l].target_x)?;
                let tb = n.features.apply(&tape, &p, &b[l].target_x)?;
                for (fa, ya, fb, yb, role) in [
                    (&ca[l], &a[l].context_y, &cb[l], &b[l].context_y, SummaryRole::Prior),
                    (&ta, &a[l].target_y, &tb, &b[l].target_y, SummaryRole::Posterior),
                ] {
                    ok &= same(
                        &h.encode_summary(&tape, &p, fa, ya, role, None)?,
                        &h.encode_summary(&tape, &p, fb, yb, role, None)?,
                    );
                }
                ok &= same(
                    &h.encode_function_posterior(&tape, &p, &ta, &a[l].target_y, &a[l].rows_by_class(Set::Target), None)?,
                    &h.encode_function_posterior(&tape, &p, &tb, &b[l].target_y, &b[l].rows_by_class(Set::Target), None)?,
                );
            }
        }
        Nets::Np(n) => {
            for l in 0..a.len() {
                for (xa, ya, xb, yb) in [
                    (&a[l].context_x, &a[l].context_y, &b[l].context_x, &b[l].context_y),
                    (&a[l].target_x, &a[l].target_y, &b[l].target_x, &b[l].target_y),
                ] {
                    ok &= same(
                        &n.encode(model, &tape, &p, xa, ya)?,
                        &n.encode(model, &tape, &p, xb, yb)?,
                    );
                }
            }
        }
        Nets::Baseline(_) => {}
    }
    Ok(ok)
}

/// Consistency over `episodes` random episodes: the largest gap between the
/// predictive joint density of a random target subset and the marginal of
/// the full-target predictive on that subset, under shared noise.
pub fn consistency(episodes: usize, seed: u64) -> Result<f64, RunError> {
    let mut rng = RngStream::new(seed);
    let arch = process_arch();
    let mut worst = 0.0f64;
    for e in 0..episodes {
        let kind = if e % 2 == 0 { LabelKind::OneHot { classes: 3 } } else { LabelKind::Real };
        let variant = Variant::ALL[e % Variant::ALL.len()];
        let tasks = 2 + rng.below(2);
        let n_tgt = 6 + rng.below(4);
        let ep = random_episode(&mut rng, kind, tasks, 4, 3, n_tgt);
        let model = Model::<f64>::new(variant, arch.clone(), kind, 4, tasks, seed + e as u64)?;
        let cfg = ForwardConfig {
            n_f: 3,
            n_a: 3,
            sigma2: 0.5,
            ..Default::default()
        };
        let subsets: Vec<Vec<usize>> = (0..tasks)
            .map(|_| {
                let k = 1 + rng.below(n_tgt);
                let mut s = rng.choose(n_tgt, k);
                s.sort_unstable();
                s
            })
            .collect();
        let sub: Vec<TaskData<f64>> = ep.iter().zip(&subsets).map(|(t, s)| t.target_subset(s)).collect();
        let full = model.predict(&ep, &mut RngStream::new(seed + e as u64), &cfg)?;
        let part = model.predict(&sub, &mut RngStream::new(seed + e as u64), &cfg)?;
        for l in 0..tasks {
            let all: Vec<usize> = (0..subsets[l].len()).collect();
            let a = part[l].joint_log_density(&all, &sub[l].target_y, cfg.sigma2);
            let b = full[l].joint_log_density(&subsets[l], &ep[l].target_y, cfg.sigma2);
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------- plumbing

/// Largest deviation of the paper-preset schedule from its fixed values.
pub fn schedule_error() -> f64 {
    let c = TrainConfig::paper();
    let mut worst = 0.0f64;
    for (step, want) in [(0, 1e-4), (2999, 1e-4), (3000, 5e-5), (6000, 2.5e-5)] {
        worst = worst.max((learning_rate(step, &c) - want).abs());
    }
    let exact = anneal(0, &c) == (0.0, 0.0)
        && anneal(c.anneal_steps, &c) == (c.lambda_f_max, c.lambda_a_max)
        && anneal(c.anneal_steps + 10, &c) == (c.lambda_f_max, c.lambda_a_max);
    if exact {
        worst
    } else {
        f64::INFINITY
    }
}

/// Two identical short training runs and 1-vs-4-worker comparisons agree
/// bitwise.
pub fn determinism() -> Result<bool, RunError> {
    let mut rng = RngStream::new(11);
    let ds = Dataset::from_targets(&random_episode(&mut rng, LabelKind::OneHot { classes: 3 }, 2, 4, 3, 12))?;
    let run = || -> Result<mtnp_core::nn::ParamStore<f64>, RunError> {
        let model = Model::new(Variant::Mtnp, process_arch(), ds.kind, 4, 2, 3)?;
        let cfg = TrainConfig {
            iterations: 15,
            n_f: 2,
            n_a: 2,
            per_class: 3,
            seed: 3,
            ..TrainConfig::desk()
        };
        let mut t = Trainer::new(model, cfg)?;
        t.run(&ds, None)?;
        Ok(t.model.store)
    };
    let same_training = run()?.bit_eq(&run()?);
    let text = "variants = [\"mtnp\", \"np\", \"stl\"]\nseeds = [1, 2]\n\
                [dataset.clusters]\ntasks = 2\nclasses = 3\ndim = 4\nsamples_per_cell = 5\ntrain_per_class = 2\n\
                [arch]\nfeature_dim = 4\nalpha_dim = 2\nz_dim = 2\npsi_hidden = 4\nalpha_hidden = 4\n\
                adapter_hidden = [3]\nnp_hidden = 4\ndecoder_hidden = 4\ntrunk_hidden = 4\n\
                [train]\niterations = 5\nn_a = 2\nn_f = 2\n";
    let cfg = |w| resolve(text, Vec::new(), &Overrides { workers: Some(w), ..Default::default() });
    let one = compare(&cfg(1)?)?.to_csv()?;
    let four = compare(&cfg(4)?)?.to_csv()?;
    Ok(same_training && one == four)
}

/// Generate, format and re-parse `specs` random benchmarks.
pub fn format_round_trip(specs: usize, seed: u64) -> Result<usize, RunError> {
    let mut rng = RngStream::new(seed);
    let mut failures = 0;
    for i in 0..specs {
        let ds: Dataset<f64> = if i % 4 == 3 {
            let spec = Curve1DSpec {
                noise_std: rng.uniform(0.0, 0.5),
                shared_function: rng.bernoulli(0.5),
                ..Default::default()
            };
            let n = 1 + rng.below(20);
            Dataset::from_targets(&gen_1d_tasks(&spec, 1, n, &mut rng)?)?
        } else {
            let spec = ClusterSpec {
                tasks: 1 + rng.below(4),
                classes: 1 + rng.below(6),
                dim: 1 + rng.below(8),
                samples_per_cell: 1 + rng.below(5),
                spread: rng.uniform(0.0, 3.0),
                prototype_scale: rng.uniform(0.1, 3.0),
                offset_scale: rng.uniform(0.0, 5.0),
                rotation: rng.uniform(0.0, 1.0),
                prototype_seed: rng.below(1 << 20) as u64,
                shift_seed: rng.below(1 << 20) as u64,
            };
            gen_cluster_tasks(&spec, &mut rng)?
        };
        let back: Dataset<f64> = parse_feature_table(&format_feature_table(&ds), FeatureSchema::default())?;
        if !back.bit_eq(&ds) {
            failures += 1;
        }
    }
    Ok(failures)
}

// ------------------------------------------------------------------ suite

pub fn run_suite(level: Level) -> Vec<CheckResult> {
    let (shapes, episodes, n_a) = match level {
        Level::Fast => (10, 100, 10_000),
        Level::Full => (50, 500, 40_000),
    };
    let mut out = Vec::new();
    out.push(timed("op_gradients", 1e-5, || {
        let errs = op_gradient_errors(shapes, 1)?;
        let (op, worst) = errs
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .cloned()
            .expect("ops");
        Ok((worst, format!("{} ops x {shapes} shapes, worst {op}", errs.len())))
    }));
    out.push(timed("loss_gradient", 1e-4, || {
        let mut worst = 0.0f64;
        for kind in [LabelKind::OneHot { classes: 3 }, LabelKind::Real] {
            for variant in Variant::ALL {
                worst = worst.max(loss_gradient_error(variant, kind, 5)?);
            }
        }
        Ok((worst, "toy preset, every variant, both label kinds".into()))
    }));
    out.push(timed("kl_quadrature", 1e-8, || {
        let err = kl_quadrature_error(100, 2, closed_form_kl);
        let worked = closed_form_kl(0.0, 4.0, 0.0, 1.0);
        let off = (worked - 0.806853).abs();
        if off > 1e-6 {
            return Ok((f64::INFINITY, format!("KL(N(0,4)||N(0,1)) = {worked}")));
        }
        Ok((err, format!("100 pairs; KL(N(0,4)||N(0,1)) = {worked:.9}")))
    }));
    out.push(timed("elbo_vs_quadrature", 3.0, || {
        let c = elbo_check(n_a, 3)?;
        let z = (c.monte_carlo - c.quadrature).abs() / c.standard_error;
        Ok((
            z,
            format!(
                "|mc - quad| / se; mc {:.6} se {:.2e} quad {:.6}",
                c.monte_carlo, c.standard_error, c.quadrature
            ),
        ))
    }));
    out.push(timed("elbo_below_log_marginal", 1e-9, || {
        let c = elbo_check(2, 3)?;
        Ok((
            c.quadrature - c.log_marginal,
            format!("elbo {:.6} log p(Y) {:.6}", c.quadrature, c.log_marginal),
        ))
    }));
    out.push(timed("exchangeability", 1e-10, || {
        let (worst, bitwise) = exchangeability(episodes, 4)?;
        if !bitwise {
            return Ok((f64::INFINITY, "set encodings changed under reordering".into()));
        }
        Ok((worst, format!("{episodes} episodes; encodings bitwise invariant")))
    }));
    out.push(timed("consistency", 1e-10, || {
        Ok((consistency(episodes, 5)?, format!("{episodes} episodes, every variant")))
    }));
    out.push(timed("schedule", 1e-18, || Ok((schedule_error(), "lr(0, 3000, 6000); anneal endpoints".into()))));
    out.push(timed("determinism", 0.5, || {
        let ok = determinism()?;
        Ok((if ok { 0.0 } else { 1.0 }, "repeat training; 1 vs 4 compare workers".into()))
    }));
    out.push(timed("format_round_trip", 0.5, || {
        let f = format_round_trip(20, 6)?;
        Ok((f as f64, "20 random specs, failures".into()))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_mutation_is_caught() {
        let good = kl_quadrature_error(100, 2, closed_form_kl);
        let bad = kl_quadrature_error(100, 2, |a, b, c, d| closed_form_kl(a, b, c, d) + 1e-3);
        assert!(good < 1e-8, "{good}");
        assert!(bad >= 1e-8, "{bad}");
    }

    #[test]
    fn op_gradients_small() {
        for (op, err) in op_gradient_errors(3, 9).unwrap() {
            assert!(err < 1e-5, "{op}: {err}");
        }
    }
}
