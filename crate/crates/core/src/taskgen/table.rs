//! Tab-separated feature tables.
//!
//! ```text
//! #mtnp-features v1 d=<int> C=<int> L=<int>
//! task_id<TAB>label<TAB>f_1<TAB>...<TAB>f_d
//! ```
//!
//! `C=0` marks real-valued labels; otherwise the label column is a class
//! index below `C`. Numbers are written in shortest round-trip form, so a
//! written table reloads bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{one_hot, Dataset, LabelKind, TaskPool};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "#mtnp-features";
const VERSION: &str = "v1";

/// Expected shape of a table. `None` accepts whatever the header declares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureSchema {
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub tasks: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    dim: usize,
    classes: usize,
    tasks: usize,
}

pub fn format_feature_table<S: Scalar>(ds: &Dataset<S>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} d={} C={} L={}",
        ds.dim,
        ds.classes(),
        ds.num_tasks()
    );
    for t in &ds.tasks {
        let labels = ds.kind.is_classification().then(|| t.labels());
        for r in 0..t.rows() {
            let _ = write!(out, "{}\t", t.task_id);
            match &labels {
                Some(l) => {
                    let _ = write!(out, "{}", l[r]);
                }
                None => {
                    let _ = write!(out, "{}", t.y.at(r, 0).as_f64());
                }
            }
            for v in &t.x.data()[r * ds.dim..(r + 1) * ds.dim] {
                let _ = write!(out, "\t{}", v.as_f64());
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_feature_table<S: Scalar>(ds: &Dataset<S>, path: &Path) -> Result<()> {
    std::fs::write(path, format_feature_table(ds))?;
    Ok(())
}

pub fn load_feature_table<S: Scalar>(path: &Path, schema: FeatureSchema) -> Result<Dataset<S>> {
    parse_feature_table(&std::fs::read_to_string(path)?, schema)
}

fn parse_header(line: &str, n: usize) -> Result<Header> {
    let err = |msg: String| Error::Parse { line: n, msg };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(err(format!("expected `{MAGIC}` header")));
    }
    match parts.next() {
        Some(VERSION) => {}
        other => return Err(err(format!("unsupported version {other:?}"))),
    }
    let (mut dim, mut classes, mut tasks) = (None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(format!("bad header field `{kv}`")))?;
        let v: usize = v
            .parse()
            .map_err(|_| err(format!("header field `{k}` is not an integer")))?;
        match k {
            "d" => dim = Some(v),
            "C" => classes = Some(v),
            "L" => tasks = Some(v),
            _ => return Err(err(format!("unknown header field `{k}`"))),
        }
    }
    match (dim, classes, tasks) {
        (Some(dim), Some(classes), Some(tasks)) if dim > 0 && tasks > 0 => Ok(Header {
            dim,
            classes,
            tasks,
        }),
        _ => Err(err("header needs d>=1, C and L>=1".into())),
    }
}

pub fn parse_feature_table<S: Scalar>(text: &str, schema: FeatureSchema) -> Result<Dataset<S>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let h = parse_header(first, n)?;
    for (want, got, key) in [
        (schema.dim, h.dim, "d"),
        (schema.classes, h.classes, "C"),
        (schema.tasks, h.tasks, "L"),
    ] {
        if let Some(w) = want {
            if w != got {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("header {key}={got}, expected {w}"),
                });
            }
        }
    }

    let mut xs: Vec<Vec<S>> = vec![Vec::new(); h.tasks];
    let mut ys: Vec<Vec<S>> = vec![Vec::new(); h.tasks];
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); h.tasks];
    for (n, line) in lines {
        let err = |msg: String| Error::Parse { line: n, msg };
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(MAGIC) {
            return Err(err("duplicate header; the header is on line 1".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != h.dim + 2 {
            return Err(err(format!(
                "expected {} features, found {}",
                h.dim,
                fields.len().saturating_sub(2)
            )));
        }
        let task: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad task id `{}`", fields[0])))?;
        if task >= h.tasks {
            return Err(err(format!("task id {task} not below L={}", h.tasks)));
        }
        if h.classes == 0 {
            let y: f64 = fields[1]
                .parse()
                .map_err(|_| err(format!("bad label `{}`", fields[1])))?;
            ys[task].push(S::of(y));
        } else {
            let c: usize = fields[1]
                .parse()
                .map_err(|_| err(format!("unknown label `{}`", fields[1])))?;
            if c >= h.classes {
                return Err(err(format!("unknown label {c} (C={})", h.classes)));
            }
            labels[task].push(c);
        }
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
            xs[task].push(S::of(v));
        }
    }

    let kind = if h.classes == 0 {
        LabelKind::Real
    } else {
        LabelKind::OneHot { classes: h.classes }
    };
    let tasks = xs
        .into_iter()
        .enumerate()
        .map(|(l, x)| {
            let rows = x.len() / h.dim;
            if rows == 0 {
                return Err(Error::Empty {
                    what: format!("rows of task {l}"),
                });
            }
            let y = match kind {
                LabelKind::Real => Tensor::matrix(rows, 1, std::mem::take(&mut ys[l]))?,
                LabelKind::OneHot { classes } => one_hot(&labels[l], classes),
            };
            Ok(TaskPool {
                task_id: l,
                x: Tensor::matrix(rows, h.dim, x)?,
                y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(kind, h.dim, tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::taskgen::{gen_1d_tasks, gen_cluster_tasks, ClusterSpec, Curve1DSpec};

    fn any() -> FeatureSchema {
        FeatureSchema::default()
    }

    fn parse_err(text: &str) -> (usize, String) {
        match parse_feature_table::<f64>(text, any()) {
            Err(Error::Parse { line, msg }) => (line, msg),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file() {
        let ds: Dataset<f64> =
            parse_feature_table("#mtnp-features v1 d=2 C=3 L=1\n0\t2\t0.5\t-1\n0\t0\t1e-3\t4\n", any())
                .unwrap();
        assert_eq!(ds.num_tasks(), 1);
        assert_eq!(ds.tasks[0].rows(), 2);
        assert_eq!(ds.tasks[0].labels(), vec![2, 0]);
        assert_eq!(ds.tasks[0].x.data(), &[0.5, -1.0, 1e-3, 4.0]);
    }

    #[test]
    fn error_lines() {
        let h = "#mtnp-features v1 d=2 C=3 L=1\n";
        let (line, msg) = parse_err(&format!("{h}{h}0\t1\t0\t0\n"));
        assert_eq!(line, 2);
        assert!(msg.contains("line 1"), "{msg}");
        assert_eq!(parse_err(&format!("{h}0\t1\t0\t0\n0\t1\t0\n")).0, 3);
        let (line, msg) = parse_err(&format!("{h}0\t3\t0\t0\n"));
        assert_eq!(line, 2);
        assert!(msg.contains("unknown label"));
        assert_eq!(parse_err(&format!("{h}0\t1\tx\t0\n")).0, 2);
        assert_eq!(parse_err(&format!("{h}1\t1\t0\t0\n")).0, 2);
        assert_eq!(parse_err("0\t1\t0\t0\n").0, 1);
        let r = parse_feature_table::<f64>(
            &format!("{h}0\t1\t0\t0\n"),
            FeatureSchema {
                dim: Some(3),
                ..any()
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn cluster_round_trip_is_bitwise() {
        let spec = ClusterSpec {
            samples_per_cell: 4,
            ..Default::default()
        };
        let ds = gen_cluster_tasks::<f64>(&spec, &mut RngStream::new(9)).unwrap();
        let path = std::env::temp_dir().join(format!("mtnp-table-{}.tsv", std::process::id()));
        write_feature_table(&ds, &path).unwrap();
        let back: Dataset<f64> = load_feature_table(&path, any()).unwrap();
        std::fs::remove_file(&path).ok();
        assert!(back.bit_eq(&ds));
    }

    #[test]
    fn regression_round_trip_is_bitwise() {
        let tasks = gen_1d_tasks::<f64>(&Curve1DSpec::default(), 3, 17, &mut RngStream::new(2)).unwrap();
        let ds = Dataset::from_targets(&tasks).unwrap();
        let text = format_feature_table(&ds);
        assert!(text.starts_with("#mtnp-features v1 d=1 C=0 L=4\n"));
        let back: Dataset<f64> = parse_feature_table(&text, any()).unwrap();
        assert!(back.bit_eq(&ds));
    }
}
