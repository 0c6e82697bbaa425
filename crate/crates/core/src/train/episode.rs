use super::TrainConfig;
use crate::context::MissingClassPolicy;
use crate::data::{Dataset, TaskData};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Sample one training episode from `pool`.
///
/// Per task, up to `per_class` rows of every class form the target set, in
/// random order. The context set takes `max(1, round(context_fraction · k))`
/// of the `k` target rows of each class, so every class present in the
/// target set is also present in the context set. Under the strict
/// missing-class policy every (task, class) cell must hold `per_class` rows;
/// otherwise smaller cells are used whole.
pub fn make_episode<S: Scalar>(
    pool: &Dataset<S>,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<TaskData<S>>> {
    let mut out = Vec::with_capacity(pool.tasks.len());
    for (l, task) in pool.tasks.iter().enumerate() {
        let mut target = Vec::new();
        let mut ctx = Vec::new();
        for (c, rows) in pool.class_rows(task).into_iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::MissingClass { task: l, class: c });
            }
            if rows.len() < cfg.per_class && cfg.missing_class == MissingClassPolicy::Strict {
                return Err(Error::InvalidData(format!(
                    "task {l} class {c}: {} rows, {} required",
                    rows.len(),
                    cfg.per_class
                )));
            }
            let k = cfg.per_class.min(rows.len());
            let picked: Vec<usize> = rng.choose(rows.len(), k).into_iter().map(|i| rows[i]).collect();
            let n_ctx = ((cfg.context_fraction * k as f64).round() as usize).clamp(1, k);
            ctx.extend(rng.choose(k, n_ctx).into_iter().map(|i| picked[i]));
            target.extend(picked);
        }
        rng.shuffle(&mut target);
        rng.shuffle(&mut ctx);
        let t = task.subset(&target);
        let c = task.subset(&ctx);
        out.push(TaskData::new(l, c.x, c.y, t.x, t.y, pool.kind)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{one_hot, LabelKind, TaskPool};
    use crate::tensor::Tensor;

    fn pool(tasks: usize, classes: usize, per: usize) -> Dataset<f64> {
        let mut rng = RngStream::new(1);
        Dataset::new(
            LabelKind::OneHot { classes },
            3,
            (0..tasks)
                .map(|l| {
                    let labels: Vec<usize> = (0..classes * per).map(|i| i % classes).collect();
                    TaskPool {
                        task_id: l,
                        x: rng.normal_tensor(vec![labels.len(), 3]),
                        y: one_hot(&labels, classes),
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn rows_of(x: &Tensor<f64>) -> Vec<Vec<u64>> {
        let c = x.cols();
        let mut r: Vec<Vec<u64>> = (0..x.rows())
            .map(|i| x.data()[i * c..(i + 1) * c].iter().map(|v| v.to_bits()).collect())
            .collect();
        r.sort();
        r
    }

    #[test]
    fn batch_rule_counts() {
        let p = pool(4, 65, 9);
        let ep = make_episode(&p, &TrainConfig::paper(), &mut RngStream::new(2)).unwrap();
        let total: usize = ep.iter().map(|t| t.target_x.rows()).sum();
        assert_eq!(total, 8 * 65 * 4);
    }

    #[test]
    fn context_is_subset_and_full_fraction_is_target() {
        let p = pool(2, 3, 10);
        let mut cfg = TrainConfig::desk();
        let ep = make_episode(&p, &cfg, &mut RngStream::new(3)).unwrap();
        for t in &ep {
            assert_eq!(t.context_x.rows(), 12);
            let target = rows_of(&t.target_x);
            for r in rows_of(&t.context_x) {
                assert!(target.contains(&r));
            }
        }
        cfg.context_fraction = 1.0;
        let ep = make_episode(&p, &cfg, &mut RngStream::new(3)).unwrap();
        for t in &ep {
            assert_eq!(rows_of(&t.context_x), rows_of(&t.target_x));
        }
    }

    #[test]
    fn every_class_reaches_the_context() {
        let p = pool(4, 10, 3);
        let cfg = TrainConfig::desk();
        let mut rng = RngStream::new(5);
        for _ in 0..200 {
            for t in make_episode(&p, &cfg, &mut rng).unwrap() {
                assert_eq!(t.context_x.rows(), 20);
                assert!(t.rows_by_class(crate::data::Set::Context).iter().all(|r| !r.is_empty()));
            }
        }
    }

    #[test]
    fn equal_seeds_equal_batches() {
        let p = pool(3, 4, 10);
        let cfg = TrainConfig::desk();
        let a = make_episode(&p, &cfg, &mut RngStream::new(9)).unwrap();
        let b = make_episode(&p, &cfg, &mut RngStream::new(9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.context_x.bit_eq(&y.context_x) && x.target_y.bit_eq(&y.target_y));
        }
    }

    #[test]
    fn strict_policy_requires_full_cells() {
        let p = pool(2, 3, 3);
        let mut cfg = TrainConfig::desk();
        assert!(make_episode(&p, &cfg, &mut RngStream::new(1)).is_ok());
        cfg.missing_class = MissingClassPolicy::Strict;
        assert!(make_episode(&p, &cfg, &mut RngStream::new(1)).is_err());
    }
}
