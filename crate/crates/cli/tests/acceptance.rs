//! Acceptance suite. Every test writes one `criterion N: PASS|FAIL ...`
//! line to stderr, uncaptured, and then asserts the same condition.
//!
//! Criteria 6 and 7 train full desk-preset comparisons over five seeds and
//! take several minutes each on one core.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mtnp_cli::config::{resolve, DatasetSource, Overrides, RunConfig};
use mtnp_cli::report::Report;
use mtnp_cli::runner::{compare, generate};
use mtnp_cli::verify::{
    closed_form_kl, consistency, elbo_check, exchangeability, kl_quadrature_error,
    loss_gradient_error, op_gradient_errors, OP_CASES,
};
use mtnp_core::data::{Dataset, LabelKind};
use mtnp_core::model::Variant;
use mtnp_core::taskgen::{load_feature_table, FeatureSchema};
use mtnp_core::train::{anneal, learning_rate, Metric, TrainConfig};
use mtnp_core::RngStream;

fn report(n: u32, passed: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {n} failed: {detail}");
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(file: &str, env: &[(&str, &str)]) -> RunConfig {
    let text = std::fs::read_to_string(workspace_root().join("configs").join(file)).unwrap();
    let env = env.iter().map(|(k, v)| (k.to_string(), v.to_string()));
    resolve(&text, env, &Overrides::default()).unwrap()
}

#[test]
fn criterion_01_gradients() {
    let start = Instant::now();
    let ops = op_gradient_errors(50, 101).unwrap();
    assert_eq!(ops.len(), OP_CASES.len());
    let (op, op_worst) = ops.iter().cloned().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let mut loss_worst = 0.0f64;
    for kind in [LabelKind::OneHot { classes: 3 }, LabelKind::Real] {
        for variant in Variant::ALL {
            for seed in 0..3 {
                loss_worst = loss_worst.max(loss_gradient_error(variant, kind, seed).unwrap());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        op_worst < 1e-5 && loss_worst < 1e-4 && secs < 30.0,
        &format!(
            "op rel err {op_worst:.2e} (worst {op}) < 1e-5; toy loss rel err {loss_worst:.2e} < 1e-4; {secs:.1}s < 30s"
        ),
    );
}

#[test]
fn criterion_02_kl_quadrature() {
    let err = kl_quadrature_error(100, 202, closed_form_kl);
    let worked = closed_form_kl(0.0, 4.0, 0.0, 1.0);
    let off = (worked - 0.806853).abs();
    report(
        2,
        err < 1e-8 && off < 1e-6,
        &format!("max |closed - quad| {err:.2e} < 1e-8; KL(N(0,4)||N(0,1)) = {worked:.7}"),
    );
}

#[test]
fn criterion_03_elbo_quadrature() {
    let start = Instant::now();
    let c = elbo_check(10_000, 303).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let z = (c.monte_carlo - c.quadrature).abs() / c.standard_error;
    let slack = c.log_marginal - c.quadrature;
    report(
        3,
        z < 3.0 && slack >= -1e-9 && secs < 120.0,
        &format!(
            "mc {:.6} vs quad {:.6}: {z:.2} se < 3; log p(Y) - elbo = {slack:.4} >= -1e-9; {secs:.1}s < 120s",
            c.monte_carlo, c.quadrature
        ),
    );
}

#[test]
fn criterion_04_exchangeability() {
    let (worst, bitwise) = exchangeability(100, 404).unwrap();
    report(
        4,
        worst < 1e-10 && bitwise,
        &format!("max deviation {worst:.2e} < 1e-10 over 100 episodes; encoders bitwise invariant: {bitwise}"),
    );
}

#[test]
fn criterion_05_consistency() {
    let worst = consistency(100, 505).unwrap();
    report(
        5,
        worst < 1e-10,
        &format!("max subset vs marginal gap {worst:.2e} < 1e-10 over 100 episodes"),
    );
}

fn mean_mse(cfg: &RunConfig) -> (f64, f64) {
    let r = compare(cfg).unwrap();
    assert_eq!(r.metric, Metric::Mse);
    (r.mean_of("mtnp", 0.0).unwrap(), r.mean_of("np", 0.0).unwrap())
}

#[test]
fn criterion_06_fewer_context_points() {
    let start = Instant::now();
    let few = config("curves.toml", &[("MTNP_DATASET__CURVES__N_CONTEXT", "4")]);
    let many = config("curves.toml", &[("MTNP_DATASET__CURVES__N_CONTEXT", "12")]);
    assert_eq!(few.preset, "desk");
    assert_eq!(few.train.iterations, 2000);
    assert_eq!(few.seeds.len(), 5);
    let DatasetSource::Curves(src) = &few.dataset else {
        panic!("curves config expected")
    };
    assert_eq!(src.intervals.len(), 4);
    let (mtnp4, np4) = mean_mse(&few);
    let (mtnp12, np12) = mean_mse(&many);
    let secs = start.elapsed().as_secs_f64();
    let (gain4, gain12) = (np4 - mtnp4, np12 - mtnp12);
    report(
        6,
        mtnp4 < np4 && gain4 > gain12 && secs < 1800.0,
        &format!(
            "4 ctx: mtnp {mtnp4:.4} vs np {np4:.4}; 12 ctx: mtnp {mtnp12:.4} vs np {np12:.4}; \
             gain {gain4:.4} (4) vs {gain12:.4} (12); {secs:.0}s < 1800s"
        ),
    );
}

#[test]
fn criterion_07_cluster_ordering() {
    let start = Instant::now();
    let cfg = config("clusters.toml", &[]);
    let DatasetSource::Clusters(src) = &cfg.dataset else {
        panic!("clusters config expected")
    };
    assert_eq!((src.tasks, src.classes, src.dim, src.train_per_class), (4, 10, 32, 3));
    assert_eq!(cfg.seeds.len(), 5);
    let r = compare(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(r.metric, Metric::Accuracy);
    let acc = |v: &str| 100.0 * r.mean_of(v, 0.0).unwrap();
    let (mtnp, all, np) = (acc("mtnp"), acc("np-all"), acc("np"));
    report(
        7,
        mtnp > all && all > np && mtnp - np >= 1.0 && secs < 1800.0,
        &format!("accuracy mtnp {mtnp:.2}, np-all {all:.2}, np {np:.2} (need mtnp > np-all > np); mtnp - np {:.2} (need >= 1); {secs:.0}s (limit 1800s)", mtnp - np),
    );
}

#[test]
fn criterion_08_schedule() {
    let c = TrainConfig::paper();
    let lr_exact = learning_rate(0, &c) == 1e-4 && learning_rate(3000, &c) == 5e-5 && learning_rate(6000, &c) == 2.5e-5;
    let anneal_exact =
        anneal(0, &c) == (0.0, 0.0) && anneal(c.anneal_steps, &c) == (c.lambda_f_max, c.lambda_a_max);
    report(
        8,
        lr_exact && anneal_exact,
        &format!(
            "lr(0, 3000, 6000) = ({}, {}, {}); anneal(0) = {:?}, anneal({}) = {:?}",
            learning_rate(0, &c),
            learning_rate(3000, &c),
            learning_rate(6000, &c),
            anneal(0, &c),
            c.anneal_steps,
            anneal(c.anneal_steps, &c)
        ),
    );
}

fn mtnp(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_mtnp")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "mtnp {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_RUN: &str = r#"
variant = "mtnp"
variants = ["mtnp", "np-all", "np", "vbmtl"]
seeds = [3, 4]

[dataset.clusters]
tasks = 3
classes = 4
dim = 8
samples_per_cell = 8

[arch]
feature_dim = 8
alpha_dim = 4
z_dim = 4
psi_hidden = 8
alpha_hidden = 8
adapter_hidden = [4]
np_hidden = 8
decoder_hidden = 8
trunk_hidden = 8

[train]
iterations = 40
"#;

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = |name: &str| dir.path().join(name);
    let a = out("a");
    let b = out("b");
    mtnp(&["train", "--config", cfg, "--seed", "3", "--out", a.to_str().unwrap()]);
    mtnp(&["train", "--config", cfg, "--seed", "3", "--out", b.to_str().unwrap()]);
    let ckpt = |d: &Path| std::fs::read(d.join("seed-3/checkpoint.txt")).unwrap();
    let same_ckpt = ckpt(&a) == ckpt(&b);
    let one = out("one");
    let four = out("four");
    mtnp(&["compare", "--config", cfg, "--workers", "1", "--out", one.to_str().unwrap()]);
    mtnp(&["compare", "--config", cfg, "--workers", "4", "--out", four.to_str().unwrap()]);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let same_report = read(&one, "report.csv") == read(&four, "report.csv")
        && read(&one, "summary.csv") == read(&four, "summary.csv");
    let rows = Report::from_csv(&String::from_utf8(read(&one, "report.csv")).unwrap())
        .unwrap()
        .rows
        .len();
    report(
        9,
        same_ckpt && same_report && rows == 8,
        &format!("train checkpoints identical: {same_ckpt}; 1- vs 4-worker reports identical: {same_report} ({rows} rows)"),
    );
}

fn random_gen_config(rng: &mut RngStream) -> String {
    if rng.below(4) == 0 {
        format!(
            "[dataset.curves]\nn_context = {}\nn_eval = {}\nnoise_std = {}\nshared_function = {}\n",
            1 + rng.below(5),
            1 + rng.below(30),
            rng.uniform(0.0, 0.3),
            rng.below(2) == 0
        )
    } else {
        format!(
            "[dataset.clusters]\ntasks = {}\nclasses = {}\ndim = {}\nsamples_per_cell = {}\n\
             spread = {}\nprototype_scale = {}\noffset_scale = {}\nrotation = {}\n",
            1 + rng.below(5),
            1 + rng.below(8),
            1 + rng.below(12),
            4 + rng.below(6),
            rng.uniform(0.01, 3.0),
            rng.uniform(0.1, 2.0),
            rng.uniform(0.0, 4.0),
            rng.uniform(0.0, 1.0)
        )
    }
}

#[test]
fn criterion_10_format_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(1010);
    let mut equal = 0;
    for i in 0..20 {
        let text = random_gen_config(&mut rng);
        let seed = rng.below(1000) as u64;
        let path = dir.path().join(format!("gen-{i}.toml"));
        std::fs::write(&path, &text).unwrap();
        let out = dir.path().join(format!("out-{i}"));
        mtnp(&[
            "gen-data",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let loaded: Dataset<f64> =
            load_feature_table(&out.join(format!("data-seed-{seed}.tsv")), FeatureSchema::default()).unwrap();
        let cfg = resolve(&text, Vec::new(), &Overrides::default()).unwrap();
        if loaded.bit_eq(&generate(&cfg, seed).unwrap()) {
            equal += 1;
        }
    }
    report(10, equal == 20, &format!("{equal}/20 generated datasets reload bitwise equal"));
}
