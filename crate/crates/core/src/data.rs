//! Per-task context and target sets.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// One-hot rows over `classes` categories.
    OneHot { classes: usize },
    /// One real-valued output per row.
    Real,
}

impl LabelKind {
    /// Width of a label row.
    pub fn width(self) -> usize {
        match self {
            LabelKind::OneHot { classes } => classes,
            LabelKind::Real => 1,
        }
    }

    /// Number of output columns of the prediction head.
    pub fn outputs(self) -> usize {
        self.width()
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LabelKind::OneHot { .. })
    }
}

/// Which half of a task's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Set {
    Context,
    Target,
}

/// One task's context set `(X, Y)` and target set `(X*, Y*)`.
#[derive(Debug, Clone)]
pub struct TaskData<S> {
    pub task_id: usize,
    pub context_x: Tensor<S>,
    pub context_y: Tensor<S>,
    pub target_x: Tensor<S>,
    pub target_y: Tensor<S>,
    pub kind: LabelKind,
}

impl<S: Scalar> TaskData<S> {
    pub fn new(
        task_id: usize,
        context_x: Tensor<S>,
        context_y: Tensor<S>,
        target_x: Tensor<S>,
        target_y: Tensor<S>,
        kind: LabelKind,
    ) -> Result<Self, Error> {
        let t = Self {
            task_id,
            context_x,
            context_y,
            target_x,
            target_y,
            kind,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidData(format!("task {}: {msg}", self.task_id)));
        for (set, x, y) in [
            ("context", &self.context_x, &self.context_y),
            ("target", &self.target_x, &self.target_y),
        ] {
            if x.shape().len() != 2 || y.shape().len() != 2 {
                return bad(format!("{set} tensors must be rank 2"));
            }
            if x.rows() == 0 {
                return bad(format!("empty {set} set"));
            }
            if x.rows() != y.rows() {
                return bad(format!("{set} has {} inputs but {} labels", x.rows(), y.rows()));
            }
            if y.cols() != self.kind.width() {
                return bad(format!("{set} label width {} != {}", y.cols(), self.kind.width()));
            }
            if self.kind.is_classification() {
                for r in 0..y.rows() {
                    one_hot_index(&y.data()[r * y.cols()..(r + 1) * y.cols()])
                        .ok_or_else(|| {
                            Error::InvalidData(format!(
                                "task {}: {set} row {r} is not one-hot",
                                self.task_id
                            ))
                        })?;
                }
            }
        }
        if self.context_x.cols() != self.target_x.cols() {
            return bad("context and target feature widths differ".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.target_x.cols()
    }

    pub fn x(&self, set: Set) -> &Tensor<S> {
        match set {
            Set::Context => &self.context_x,
            Set::Target => &self.target_x,
        }
    }

    pub fn y(&self, set: Set) -> &Tensor<S> {
        match set {
            Set::Context => &self.context_y,
            Set::Target => &self.target_y,
        }
    }

    /// Class index of each row of `set` (classification only).
    pub fn labels(&self, set: Set) -> Vec<usize> {
        let y = self.y(set);
        let c = y.cols();
        (0..y.rows())
            .map(|r| one_hot_index(&y.data()[r * c..(r + 1) * c]).unwrap_or(0))
            .collect()
    }

    /// Row indices of `set` grouped by class, in data order.
    pub fn rows_by_class(&self, set: Set) -> Vec<Vec<usize>> {
        let classes = self.kind.width();
        let mut out = vec![Vec::new(); classes];
        for (i, c) in self.labels(set).into_iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Copy with target rows (and labels) reordered by `perm`.
    pub fn permute_target(&self, perm: &[usize]) -> Self {
        Self {
            target_x: permute_rows(&self.target_x, perm),
            target_y: permute_rows(&self.target_y, perm),
            ..self.clone()
        }
    }

    /// Copy with context rows reordered by `perm`.
    pub fn permute_context(&self, perm: &[usize]) -> Self {
        Self {
            context_x: permute_rows(&self.context_x, perm),
            context_y: permute_rows(&self.context_y, perm),
            ..self.clone()
        }
    }

    /// Copy keeping only the listed target rows.
    pub fn target_subset(&self, rows: &[usize]) -> Self {
        self.permute_target(rows)
    }
}

/// Labeled rows of one task, before any context/target split.
#[derive(Debug, Clone)]
pub struct TaskPool<S> {
    pub task_id: usize,
    pub x: Tensor<S>,
    pub y: Tensor<S>,
}

impl<S: Scalar> TaskPool<S> {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    /// Class index per row (one-hot labels only).
    pub fn labels(&self) -> Vec<usize> {
        let c = self.y.cols();
        (0..self.y.rows())
            .map(|r| one_hot_index(&self.y.data()[r * c..(r + 1) * c]).unwrap_or(0))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            task_id: self.task_id,
            x: permute_rows(&self.x, rows),
            y: permute_rows(&self.y, rows),
        }
    }
}

/// Every task's labeled rows with a shared feature width and label kind.
#[derive(Debug, Clone)]
pub struct Dataset<S> {
    pub kind: LabelKind,
    pub dim: usize,
    pub tasks: Vec<TaskPool<S>>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(kind: LabelKind, dim: usize, tasks: Vec<TaskPool<S>>) -> Result<Self, Error> {
        let d = Self { kind, dim, tasks };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.tasks.is_empty() {
            return Err(Error::Empty {
                what: "dataset".into(),
            });
        }
        for (l, t) in self.tasks.iter().enumerate() {
            if t.task_id != l {
                return Err(Error::InvalidData(format!("task {l} carries id {}", t.task_id)));
            }
            if t.x.rows() == 0 {
                return Err(Error::Empty {
                    what: format!("pool of task {l}"),
                });
            }
            if t.x.cols() != self.dim || t.y.cols() != self.kind.width() || t.y.rows() != t.x.rows() {
                return Err(Error::InvalidData(format!("task {l}: inconsistent shapes")));
            }
            if self.kind.is_classification() {
                let c = t.y.cols();
                for r in 0..t.y.rows() {
                    if one_hot_index(&t.y.data()[r * c..(r + 1) * c]).is_none() {
                        return Err(Error::InvalidData(format!("task {l}: row {r} is not one-hot")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            LabelKind::OneHot { classes } => classes,
            LabelKind::Real => 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.tasks.iter().map(TaskPool::rows).sum()
    }

    /// Target rows of each task as a pool.
    pub fn from_targets(tasks: &[TaskData<S>]) -> Result<Self, Error> {
        let first = tasks.first().ok_or_else(|| Error::Empty {
            what: "task list".into(),
        })?;
        Self::new(
            first.kind,
            first.input_dim(),
            tasks
                .iter()
                .enumerate()
                .map(|(l, t)| TaskPool {
                    task_id: l,
                    x: t.target_x.clone(),
                    y: t.target_y.clone(),
                })
                .collect(),
        )
    }

    /// Per task, `train_per_class` random rows of every class (all rows of a
    /// class with fewer) go to the first part, the rest to the second.
    /// Regression pools treat all rows as one class.
    pub fn split_per_class(
        &self,
        train_per_class: usize,
        rng: &mut crate::rng::RngStream,
    ) -> (Self, Self) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for t in &self.tasks {
            let groups = self.class_rows(t);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for rows in groups {
                let order = rng.choose(rows.len(), rows.len());
                for (k, &i) in order.iter().enumerate() {
                    if k < train_per_class {
                        a.push(rows[i]);
                    } else {
                        b.push(rows[i]);
                    }
                }
            }
            a.sort_unstable();
            b.sort_unstable();
            train.push(t.subset(&a));
            test.push(t.subset(&b));
        }
        (
            Self {
                tasks: train,
                ..self.clone_empty()
            },
            Self {
                tasks: test,
                ..self.clone_empty()
            },
        )
    }

    fn clone_empty(&self) -> Self {
        Self {
            kind: self.kind,
            dim: self.dim,
            tasks: Vec::new(),
        }
    }

    /// Row indices of `pool` grouped by class (one group in regression).
    pub fn class_rows(&self, pool: &TaskPool<S>) -> Vec<Vec<usize>> {
        match self.kind {
            LabelKind::Real => vec![(0..pool.rows()).collect()],
            LabelKind::OneHot { classes } => {
                let mut g = vec![Vec::new(); classes];
                for (i, c) in pool.labels().into_iter().enumerate() {
                    g[c].push(i);
                }
                g
            }
        }
    }

    /// Context = all rows of `self`, target = all rows of `test`, per task.
    pub fn conditioned_on(&self, test: &Self) -> Result<Vec<TaskData<S>>, Error> {
        if self.tasks.len() != test.tasks.len() {
            return Err(Error::InvalidData("task counts differ".into()));
        }
        self.tasks
            .iter()
            .zip(&test.tasks)
            .map(|(c, t)| {
                TaskData::new(
                    c.task_id,
                    c.x.clone(),
                    c.y.clone(),
                    t.x.clone(),
                    t.y.clone(),
                    self.kind,
                )
            })
            .collect()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.dim == other.dim
            && self.tasks.len() == other.tasks.len()
            && self.tasks.iter().zip(&other.tasks).all(|(a, b)| {
                a.task_id == b.task_id && a.x.bit_eq(&b.x) && a.y.bit_eq(&b.y)
            })
    }
}

/// New tensor whose row `i` is row `perm[i]` of `t`.
pub fn permute_rows<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let c = t.cols();
    let mut data = Vec::with_capacity(perm.len() * c);
    for &i in perm {
        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
    }
    Tensor::matrix(perm.len(), c, data).expect("row permutation keeps shape")
}

/// One-hot encoding of class indices.
pub fn one_hot<S: Scalar>(labels: &[usize], classes: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); labels.len() * classes];
    for (i, &c) in labels.iter().enumerate() {
        data[i * classes + c] = S::one();
    }
    Tensor::matrix(labels.len(), classes, data).expect("one-hot shape")
}

fn one_hot_index<S: Scalar>(row: &[S]) -> Option<usize> {
    let mut hot = None;
    for (j, &v) in row.iter().enumerate() {
        if v == S::one() {
            if hot.is_some() {
                return None;
            }
            hot = Some(j);
        } else if v != S::zero() {
            return None;
        }
    }
    hot
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(labels: &[usize]) -> TaskData<f64> {
        let n = labels.len();
        let x = Tensor::from_f64(vec![n, 2], &(0..2 * n).map(|v| v as f64).collect::<Vec<_>>())
            .unwrap();
        let y = one_hot(labels, 3);
        TaskData::new(0, x.clone(), y.clone(), x, y, LabelKind::OneHot { classes: 3 }).unwrap()
    }

    #[test]
    fn groups_rows_by_class() {
        let t = task(&[2, 0, 2, 1]);
        assert_eq!(t.rows_by_class(Set::Target), vec![vec![1], vec![3], vec![0, 2]]);
    }

    #[test]
    fn rejects_non_one_hot_and_empty_sets() {
        let x = Tensor::<f64>::zeros(vec![1, 2]);
        let y = Tensor::from_f64(vec![1, 3], &[0.5, 0.5, 0.0]).unwrap();
        assert!(TaskData::new(0, x.clone(), y.clone(), x.clone(), y, LabelKind::OneHot { classes: 3 })
            .is_err());
        let empty = Tensor::<f64>::zeros(vec![0, 2]);
        let ey = Tensor::<f64>::zeros(vec![0, 1]);
        let y1 = Tensor::<f64>::zeros(vec![1, 1]);
        assert!(TaskData::new(0, empty, ey, x, y1, LabelKind::Real).is_err());
    }

    #[test]
    fn permutation_moves_labels_with_rows() {
        let t = task(&[2, 0, 1]).permute_target(&[2, 0, 1]);
        assert_eq!(t.labels(Set::Target), vec![1, 2, 0]);
        assert_eq!(t.target_x.data()[..2], [4.0, 5.0]);
    }
}
