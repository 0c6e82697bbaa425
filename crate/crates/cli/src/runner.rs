//! `train`, `eval`, `compare` and `gen-data`.
//!
//! Everything a run produces is a function of the resolved configuration and
//! the seed. Data, evaluation noise and corruption each draw from their own
//! stream of the seed; training draws from the trainer's streams. Variants
//! compared under one seed therefore see the same data and the same episode
//! sequence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mtnp_core::checkpoint::{load_checkpoint, restore, save_checkpoint};
use mtnp_core::data::{Dataset, LabelKind, TaskData, TaskPool};
use mtnp_core::model::{Model, Variant};
use mtnp_core::taskgen::{
    corrupt_tasks, gen_1d_tasks, gen_cluster_tasks, load_feature_table, write_feature_table,
    FeatureSchema,
};
use mtnp_core::train::{evaluate, LogRow, Metric, Scores, TrainConfig, Trainer};
use mtnp_core::RngStream;
use rayon::prelude::*;
use toml::{Table, Value};

use crate::config::{DatasetSource, RunConfig};
use crate::report::{Report, ReportRow};
use crate::RunError;

const DATA_STREAM: u64 = 0xDA7A;
const SPLIT_STREAM: u64 = 0x5B17;
const EVAL_STREAM: u64 = 0xE7A1;
const CORRUPT_STREAM: u64 = 0xC022;

/// Training pool and evaluation tasks of one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset<f64>,
    pub eval: Vec<TaskData<f64>>,
}

impl Prepared {
    pub fn kind(&self) -> LabelKind {
        self.train.kind
    }

    pub fn input_dim(&self) -> usize {
        self.train.dim
    }

    pub fn tasks(&self) -> usize {
        self.train.num_tasks()
    }
}

/// The full generated dataset of `seed` (before any train/eval split).
pub fn generate(cfg: &RunConfig, seed: u64) -> Result<Dataset<f64>, RunError> {
    let mut rng = RngStream::with_stream(seed, DATA_STREAM);
    match &cfg.dataset {
        DatasetSource::Curves(c) => {
            let tasks = gen_1d_tasks(&c.spec(), c.n_context, c.n_context + c.n_eval, &mut rng)?;
            Ok(Dataset::from_targets(&tasks)?)
        }
        DatasetSource::Clusters(c) => Ok(gen_cluster_tasks(&c.spec(seed), &mut rng)?),
        DatasetSource::Table(t) => Ok(load_feature_table(&t.path, FeatureSchema::default())?),
    }
}

pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared, RunError> {
    match &cfg.dataset {
        DatasetSource::Curves(c) => {
            let mut rng = RngStream::with_stream(seed, DATA_STREAM);
            let tasks = gen_1d_tasks(&c.spec(), c.n_context, c.n_context + c.n_eval, &mut rng)?;
            let fresh: Vec<usize> = (c.n_context..c.n_context + c.n_eval).collect();
            let pools = tasks
                .iter()
                .map(|t| TaskPool {
                    task_id: t.task_id,
                    x: t.context_x.clone(),
                    y: t.context_y.clone(),
                })
                .collect();
            Ok(Prepared {
                train: Dataset::new(LabelKind::Real, 1, pools)?,
                eval: tasks.iter().map(|t| t.target_subset(&fresh)).collect(),
            })
        }
        DatasetSource::Clusters(c) => split(generate(cfg, seed)?, c.train_per_class, seed),
        DatasetSource::Table(t) => split(generate(cfg, seed)?, t.train_per_class, seed),
    }
}

fn split(ds: Dataset<f64>, per_class: usize, seed: u64) -> Result<Prepared, RunError> {
    let (train, test) = ds.split_per_class(per_class, &mut RngStream::with_stream(seed, SPLIT_STREAM));
    if test.tasks.iter().any(|t| t.rows() == 0) {
        return Err(RunError::Config(format!(
            "train_per_class = {per_class} leaves a task without evaluation rows"
        )));
    }
    let eval = train.conditioned_on(&test)?;
    Ok(Prepared { train, eval })
}

pub fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

pub fn build_model(cfg: &RunConfig, variant: Variant, data: &Prepared, seed: u64) -> Result<Model<f64>, RunError> {
    Ok(Model::new(
        variant,
        cfg.arch.clone(),
        data.kind(),
        data.input_dim(),
        data.tasks(),
        seed,
    )?)
}

/// Train `variant` under `seed`, streaming the log to `log` when given.
pub fn train_model(
    cfg: &RunConfig,
    variant: Variant,
    seed: u64,
    data: &Prepared,
    log: Option<&mut dyn Write>,
) -> Result<(Model<f64>, Vec<LogRow>), RunError> {
    let model = build_model(cfg, variant, data, seed)?;
    let mut trainer = Trainer::new(model, train_config(cfg, seed))?;
    let rows = trainer.run(&data.train, log)?;
    Ok((trainer.model, rows))
}

pub fn metric_for(cfg: &RunConfig, data: &Prepared) -> Result<Metric, RunError> {
    Ok(cfg.metric()?.unwrap_or_else(|| Metric::for_kind(data.kind())))
}

/// Score `model` on the evaluation tasks with inputs corrupted at `eta`.
pub fn evaluate_model(
    cfg: &RunConfig,
    model: &Model<f64>,
    data: &Prepared,
    seed: u64,
    eta: f64,
) -> Result<Scores, RunError> {
    let tasks = corrupt_tasks(&data.eval, eta, &mut RngStream::with_stream(seed, CORRUPT_STREAM))?;
    let fwd = train_config(cfg, seed).forward(cfg.train.iterations);
    let mut noise = RngStream::with_stream(seed, EVAL_STREAM);
    Ok(evaluate(model, &tasks, &mut noise, &fwd, metric_for(cfg, data)?)?)
}

pub fn seed_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out.join(format!("seed-{seed}"))
}

fn manifest(cfg: &RunConfig, command: &str, seed: u64, extra: Table) -> String {
    let mut run = Table::new();
    run.insert("command".into(), Value::String(command.into()));
    run.insert("seed".into(), Value::Integer(seed as i64));
    run.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    run.extend(extra);
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    c.run = Some(run);
    c.to_toml()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub final_loss: f64,
    pub seconds: f64,
}

/// Train `cfg.variant` for every seed. Each seed writes `checkpoint.txt`,
/// `train.log` and `manifest.toml` under `<out>/seed-<seed>/`.
pub fn run_train(cfg: &RunConfig) -> Result<Vec<TrainSummary>, RunError> {
    let variant = cfg.variant()?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(cfg, seed);
        std::fs::create_dir_all(&dir)?;
        let data = prepare(cfg, seed)?;
        let mut log = BufWriter::new(File::create(dir.join("train.log"))?);
        let start = Instant::now();
        let (model, rows) = train_model(cfg, variant, seed, &data, Some(&mut log))?;
        let seconds = start.elapsed().as_secs_f64();
        log.flush()?;
        save_checkpoint(&model.store, &dir.join("checkpoint.txt"))?;
        let final_loss = rows.last().map_or(f64::NAN, |r| r.loss);
        let mut extra = Table::new();
        extra.insert("steps".into(), Value::Integer(rows.len() as i64));
        extra.insert("elapsed_seconds".into(), Value::Float(seconds));
        extra.insert("final_loss".into(), Value::Float(final_loss));
        std::fs::write(dir.join("manifest.toml"), manifest(cfg, "train", seed, extra))?;
        out.push(TrainSummary {
            seed,
            dir,
            final_loss,
            seconds,
        });
    }
    Ok(out)
}

/// Reload each seed's checkpoint and score it at every configured noise
/// level. Writes `<out>/eval.csv`.
pub fn run_eval(cfg: &RunConfig) -> Result<Report, RunError> {
    let variant = cfg.variant()?;
    let mut rows = Vec::new();
    let mut metric = None;
    for &seed in &cfg.seeds {
        let data = prepare(cfg, seed)?;
        let mut model = build_model(cfg, variant, &data, seed)?;
        let path = seed_dir(cfg, seed).join("checkpoint.txt");
        let saved = load_checkpoint(&path).map_err(|e| match e {
            mtnp_core::Error::Io(io) => RunError::Io(format!("{}: {io}", path.display())),
            other => other.into(),
        })?;
        restore(&mut model.store, &saved)?;
        metric = Some(metric_for(cfg, &data)?);
        for &eta in &cfg.eval.eta {
            let s = evaluate_model(cfg, &model, &data, seed, eta)?;
            rows.push(ReportRow {
                variant: variant.name().into(),
                seed,
                eta,
                per_task: s.per_task,
                average: s.average,
            });
        }
    }
    let report = Report {
        metric: metric.expect("at least one seed"),
        rows,
    };
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("eval.csv"), report.to_csv()?)?;
    Ok(report)
}

/// Train and score every (seed, variant) pair on `cfg.workers` threads.
/// Rows are ordered by seed, then variant in configuration order, then
/// noise level, whatever the worker count.
pub fn compare(cfg: &RunConfig) -> Result<Report, RunError> {
    let variants = cfg.variant_list()?;
    let jobs: Vec<(u64, Variant)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| variants.iter().map(move |&v| (s, v)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Failed(e.to_string()))?;
    let results: Vec<Result<(Metric, Vec<ReportRow>), RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, variant)| {
                let data = prepare(cfg, seed)?;
                let (model, _) = train_model(cfg, variant, seed, &data, None)?;
                let mut rows = Vec::new();
                for &eta in &cfg.eval.eta {
                    let s = evaluate_model(cfg, &model, &data, seed, eta)?;
                    rows.push(ReportRow {
                        variant: variant.name().into(),
                        seed,
                        eta,
                        per_task: s.per_task,
                        average: s.average,
                    });
                }
                Ok((metric_for(cfg, &data)?, rows))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut metric = None;
    for r in results {
        let (m, rs) = r?;
        metric = Some(m);
        rows.extend(rs);
    }
    Ok(Report {
        metric: metric.expect("at least one job"),
        rows,
    })
}

/// [`compare`], then write `report.csv`, `summary.csv` and `manifest.toml`
/// to `<out>`.
pub fn run_compare(cfg: &RunConfig) -> Result<Report, RunError> {
    let start = Instant::now();
    let report = compare(cfg)?;
    report.write(&cfg.out)?;
    let mut run = Table::new();
    run.insert("command".into(), Value::String("compare".into()));
    run.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    run.insert("elapsed_seconds".into(), Value::Float(start.elapsed().as_secs_f64()));
    let mut c = cfg.clone();
    c.run = Some(run);
    std::fs::write(cfg.out.join("manifest.toml"), c.to_toml())?;
    Ok(report)
}

/// Write each seed's generated dataset to `<out>/data-seed-<seed>.tsv`.
pub fn run_gen_data(cfg: &RunConfig) -> Result<Vec<(PathBuf, Dataset<f64>)>, RunError> {
    if let DatasetSource::Table(_) = cfg.dataset {
        return Err(RunError::Config("gen-data needs a generator source, not `dataset.table`".into()));
    }
    std::fs::create_dir_all(&cfg.out)?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let ds = generate(cfg, seed)?;
            let path = cfg.out.join(format!("data-seed-{seed}.tsv"));
            write_feature_table(&ds, &path)?;
            Ok((path, ds))
        })
        .collect()
}

/// Bitwise file comparison helper for reproducibility checks.
pub fn same_bytes(a: &Path, b: &Path) -> Result<bool, RunError> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}
