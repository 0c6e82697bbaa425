use crate::data::{one_hot, Dataset, LabelKind, TaskPool};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Gaussian-cluster classification with a per-task affine domain shift.
///
/// Class prototypes are shared by all tasks. Task `l` maps every sample
/// `p_c + spread · ε` through its own rotation `R_l` and offset `o_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub tasks: usize,
    pub classes: usize,
    pub dim: usize,
    pub samples_per_cell: usize,
    pub spread: f64,
    /// Prototype coordinates are `N(0, prototype_scale²)`.
    pub prototype_scale: f64,
    /// Task offsets are `N(0, offset_scale²)` per coordinate.
    pub offset_scale: f64,
    /// `0` keeps `R_l = I`; larger values mix coordinates more.
    pub rotation: f64,
    pub prototype_seed: u64,
    pub shift_seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            tasks: 4,
            classes: 10,
            dim: 32,
            samples_per_cell: 23,
            spread: 1.0,
            prototype_scale: 0.5,
            offset_scale: 1.0,
            rotation: 0.5,
            prototype_seed: 1,
            shift_seed: 2,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.classes == 0 || self.dim == 0 || self.samples_per_cell == 0 {
            return Err(Error::Config("tasks, classes, dim and samples_per_cell must be >= 1".into()));
        }
        if !(self.spread >= 0.0 && self.offset_scale >= 0.0 && self.rotation >= 0.0) {
            return Err(Error::Config("spread, offset_scale and rotation must be >= 0".into()));
        }
        Ok(())
    }

    /// Class prototypes, `classes × dim`.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(self.prototype_seed);
        (0..self.classes)
            .map(|_| (0..self.dim).map(|_| self.prototype_scale * rng.normal()).collect())
            .collect()
    }

    /// Rotation matrix (row-major, `dim × dim`) and offset of every task.
    pub fn shifts(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = RngStream::new(self.shift_seed);
        let d = self.dim;
        (0..self.tasks)
            .map(|_| {
                let mut m: Vec<f64> = (0..d * d)
                    .map(|k| {
                        let eye = if k / d == k % d { 1.0 } else { 0.0 };
                        eye + self.rotation * rng.normal()
                    })
                    .collect();
                if self.rotation > 0.0 {
                    orthonormalize_rows(&mut m, d);
                }
                let offset = (0..d).map(|_| self.offset_scale * rng.normal()).collect();
                (m, offset)
            })
            .collect()
    }
}

/// Modified Gram–Schmidt over the rows of a square matrix.
fn orthonormalize_rows(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum();
            for k in 0..d {
                m[i * d + k] -= dot * m[j * d + k];
            }
        }
        let norm = (0..d).map(|k| m[i * d + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..d {
            m[i * d + k] /= norm;
        }
    }
}

/// Generate `samples_per_cell` rows for every (task, class), ordered by
/// class then sample. `rng` drives only the within-cluster noise.
pub fn gen_cluster_tasks<S: Scalar>(spec: &ClusterSpec, rng: &mut RngStream) -> Result<Dataset<S>> {
    spec.validate()?;
    let protos = spec.prototypes();
    let d = spec.dim;
    let mut tasks = Vec::with_capacity(spec.tasks);
    for (l, (rot, offset)) in spec.shifts().into_iter().enumerate() {
        let mut x = Vec::with_capacity(spec.classes * spec.samples_per_cell * d);
        let mut labels = Vec::with_capacity(spec.classes * spec.samples_per_cell);
        for (c, proto) in protos.iter().enumerate() {
            for _ in 0..spec.samples_per_cell {
                let raw: Vec<f64> = proto.iter().map(|&p| p + spec.spread * rng.normal()).collect();
                for i in 0..d {
                    let v: f64 = (0..d).map(|k| rot[i * d + k] * raw[k]).sum::<f64>() + offset[i];
                    x.push(S::of(v));
                }
                labels.push(c);
            }
        }
        tasks.push(TaskPool {
            task_id: l,
            x: Tensor::matrix(labels.len(), d, x)?,
            y: one_hot(&labels, spec.classes),
        });
    }
    Dataset::new(LabelKind::OneHot { classes: spec.classes }, d, tasks)
}
