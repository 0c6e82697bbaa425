//! Per-seed scores and their confidence summaries.
//!
//! `report.csv` holds one row per (seed, variant, noise level):
//!
//! ```text
//! variant,seed,eta,metric,task_0,...,task_{L-1},average
//! ```
//!
//! Numbers use shortest round-trip formatting, so [`Report::from_csv`]
//! restores a written report exactly.

use std::fmt::Write as _;
use std::path::Path;

use mtnp_core::train::Metric;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::RunError;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub variant: String,
    pub seed: u64,
    pub eta: f64,
    pub per_task: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metric: Metric,
    pub rows: Vec<ReportRow>,
}

/// Mean and 95% half-width over seeds of one (variant, noise level).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub variant: String,
    pub eta: f64,
    pub seeds: usize,
    pub per_task: Vec<(f64, f64)>,
    pub average: (f64, f64),
}

/// Sample mean and the half-width of a two-sided 95% Student-t interval with
/// `n − 1` degrees of freedom. The half-width is NaN for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

impl Report {
    pub fn tasks(&self) -> usize {
        self.rows.first().map_or(0, |r| r.per_task.len())
    }

    /// Variants in first-appearance order.
    pub fn variants(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.variant) {
                v.push(r.variant.clone());
            }
        }
        v
    }

    fn etas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !v.iter().any(|e| e.to_bits() == r.eta.to_bits()) {
                v.push(r.eta);
            }
        }
        v
    }

    pub fn summaries(&self) -> Vec<Summary> {
        let mut out = Vec::new();
        for eta in self.etas() {
            for variant in self.variants() {
                let rows: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == variant && r.eta.to_bits() == eta.to_bits())
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let per_task = (0..self.tasks())
                    .map(|k| mean_ci95(&rows.iter().map(|r| r.per_task[k]).collect::<Vec<_>>()))
                    .collect();
                let average = mean_ci95(&rows.iter().map(|r| r.average).collect::<Vec<_>>());
                out.push(Summary {
                    variant,
                    eta,
                    seeds: rows.len(),
                    per_task,
                    average,
                });
            }
        }
        out
    }

    /// Mean average score of `variant` at noise level `eta`.
    pub fn mean_of(&self, variant: &str, eta: f64) -> Option<f64> {
        self.summaries()
            .into_iter()
            .find(|s| s.variant == variant && s.eta.to_bits() == eta.to_bits())
            .map(|s| s.average.0)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["variant", "seed", "eta", "metric"].map(String::from).to_vec();
        h.extend((0..self.tasks()).map(|k| format!("task_{k}")));
        h.push("average".into());
        h
    }

    pub fn to_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.variant.clone(),
                r.seed.to_string(),
                r.eta.to_string(),
                self.metric.name().to_string(),
            ];
            rec.extend(r.per_task.iter().map(f64::to_string));
            rec.push(r.average.to_string());
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self, RunError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let tasks = header.len().checked_sub(5).ok_or_else(|| RunError::Io("report header too short".into()))?;
        let bad = |line: usize, what: &str| RunError::Io(format!("report row {line}: bad {what}"));
        let mut metric = None;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let num = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(line, what));
            let m: Metric = rec[3].parse().map_err(|_| bad(line, "metric"))?;
            if metric.is_some_and(|x| x != m) {
                return Err(bad(line, "metric (mixed metrics)"));
            }
            metric = Some(m);
            rows.push(ReportRow {
                variant: rec[0].to_string(),
                seed: rec[1].parse().map_err(|_| bad(line, "seed"))?,
                eta: num(2, "eta")?,
                per_task: (0..tasks).map(|k| num(4 + k, "score")).collect::<Result<_, _>>()?,
                average: num(4 + tasks, "average")?,
            });
        }
        Ok(Self {
            metric: metric.ok_or_else(|| RunError::Io("report has no rows".into()))?,
            rows,
        })
    }

    /// `variant,eta,seeds,task_k_mean,task_k_ci95,...,average_mean,average_ci95`
    pub fn summary_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut h: Vec<String> = ["variant", "eta", "seeds"].map(String::from).to_vec();
        for k in 0..self.tasks() {
            h.push(format!("task_{k}_mean"));
            h.push(format!("task_{k}_ci95"));
        }
        h.push("average_mean".into());
        h.push("average_ci95".into());
        w.write_record(h)?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        for s in self.summaries() {
            let mut rec = vec![s.variant.clone(), s.eta.to_string(), s.seeds.to_string()];
            for &(m, h) in &s.per_task {
                rec.push(fmt(m));
                rec.push(fmt(h));
            }
            rec.push(fmt(s.average.0));
            rec.push(fmt(s.average.1));
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Human-readable table: one row per variant, `mean ± half-width` per
    /// task and on average, scaled to percent for accuracy.
    pub fn table(&self) -> String {
        let scale = if self.metric == Metric::Accuracy { 100.0 } else { 1.0 };
        let cell = |(m, h): (f64, f64)| {
            if h.is_nan() {
                format!("{:.4}", m * scale)
            } else {
                format!("{:.4}±{:.4}", m * scale, h * scale)
            }
        };
        let mut out = String::new();
        let _ = write!(out, "{:<8} {:>6}", "variant", "eta");
        for k in 0..self.tasks() {
            let _ = write!(out, " {:>18}", format!("task_{k}"));
        }
        let _ = writeln!(out, " {:>18}", format!("average {}", self.metric.name()));
        for s in self.summaries() {
            let _ = write!(out, "{:<8} {:>6}", s.variant, s.eta);
            for &c in &s.per_task {
                let _ = write!(out, " {:>18}", cell(c));
            }
            let _ = writeln!(out, " {:>18}", cell(s.average));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        Ok(())
    }
}
