use mtnp_core::data::{one_hot, Dataset, LabelKind, Set, TaskData, TaskPool};
use mtnp_core::gaussian::{kl, DiagGaussian};
use mtnp_core::model::{Arch, ForwardConfig, Masks, Model, Variant};
use mtnp_core::scalar::exact_sum;
use mtnp_core::taskgen::{
    corrupt, format_feature_table, gen_cluster_tasks, parse_feature_table, ClusterSpec,
    FeatureSchema,
};
use mtnp_core::tensor::{finite_difference_check_many, Axis, Tape, Tensor};
use mtnp_core::train::{anneal, learning_rate, make_episode, TrainConfig};
use mtnp_core::RngStream;
use proptest::prelude::*;

fn gaussian(mean: &[f64], log_var: &[f64]) -> DiagGaussian<f64> {
    let n = mean.len();
    DiagGaussian::new(
        Tensor::from_f64(vec![1, n], mean).unwrap(),
        Tensor::from_f64(vec![1, n], log_var).unwrap(),
    )
    .unwrap()
}

fn pairs(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|k| {
        (
            prop::collection::vec(-5.0..5.0f64, k),
            prop::collection::vec(-4.0..4.0f64, k),
            prop::collection::vec(-5.0..5.0f64, k),
            prop::collection::vec(-4.0..4.0f64, k),
        )
    })
}

fn cluster_pool(tasks: usize, classes: usize, per: usize, seed: u64) -> Dataset<f64> {
    let mut rng = RngStream::new(seed);
    let pools = (0..tasks)
        .map(|l| {
            let labels: Vec<usize> = (0..classes * per).map(|i| i % classes).collect();
            TaskPool {
                task_id: l,
                x: rng.normal_tensor(vec![labels.len(), 3]),
                y: one_hot(&labels, classes),
            }
        })
        .collect();
    Dataset::new(LabelKind::OneHot { classes }, 3, pools).unwrap()
}

fn row_bits(x: &Tensor<f64>, i: usize) -> Vec<u64> {
    (0..x.cols()).map(|j| x.at(i, j).to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself((mq, lq, mp, lp) in pairs(1..6)) {
        let tape = Tape::new();
        let q = gaussian(&mq, &lq);
        let p = gaussian(&mp, &lp);
        prop_assert!(kl(&tape, &q, &p).unwrap().item() >= 0.0);
        prop_assert_eq!(kl(&tape, &q, &q).unwrap().item(), 0.0);
    }

    #[test]
    fn kl_is_additive_over_dimensions((mq, lq, mp, lp) in pairs(2..6)) {
        let tape = Tape::new();
        let whole = kl(&tape, &gaussian(&mq, &lq), &gaussian(&mp, &lp)).unwrap().item();
        let parts: f64 = (0..mq.len())
            .map(|i| {
                kl(&tape, &gaussian(&mq[i..=i], &lq[i..=i]), &gaussian(&mp[i..=i], &lp[i..=i]))
                    .unwrap()
                    .item()
            })
            .sum();
        prop_assert!((whole - parts).abs() < 1e-10 * (1.0 + whole.abs()));
    }

    #[test]
    fn exact_sum_ignores_order(v in prop::collection::vec(-1e12..1e12f64, 0..40), seed in any::<u64>()) {
        let mut w = v.clone();
        RngStream::new(seed).shuffle(&mut w);
        prop_assert_eq!(exact_sum(v).to_bits(), exact_sum(w).to_bits());
    }

    #[test]
    fn log_softmax_rows_normalise(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
        let x: Tensor<f64> = RngStream::new(seed).normal_tensor(vec![rows, cols]).map(|v| 10.0 * v);
        let y = Tape::new().log_softmax(&x).unwrap();
        for i in 0..rows {
            let total: f64 = (0..cols).map(|j| y.at(i, j).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_gradient_matches_differences(r in 1usize..5, k in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let a: Tensor<f64> = rng.normal_tensor(vec![r, k]);
        let b: Tensor<f64> = rng.normal_tensor(vec![k, c]);
        let err = finite_difference_check_many(
            |t: &Tape<f64>, x: &[Tensor<f64>]| {
                let h = t.elu(&t.matmul(&x[0], &x[1])?)?;
                let s = t.log_softmax(&h)?;
                t.sum_all(&t.mean(&s, Axis::Rows)?)
            },
            &[a, b],
            1e-6,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn episodes_keep_every_class_in_the_context(
        tasks in 1usize..4,
        classes in 1usize..5,
        per in 1usize..6,
        fraction in 0.05..1.0f64,
        seed in any::<u64>(),
    ) {
        let pool = cluster_pool(tasks, classes, per, seed);
        let cfg = TrainConfig { per_class: 4, context_fraction: fraction, ..TrainConfig::desk() };
        let ep = make_episode(&pool, &cfg, &mut RngStream::new(seed ^ 1)).unwrap();
        prop_assert_eq!(ep.len(), tasks);
        let k = per.min(4);
        for t in &ep {
            prop_assert_eq!(t.target_x.rows(), classes * k);
            for rows in t.rows_by_class(Set::Context) {
                prop_assert!(!rows.is_empty());
            }
            let target: Vec<Vec<u64>> = (0..t.target_x.rows()).map(|i| row_bits(&t.target_x, i)).collect();
            for i in 0..t.context_x.rows() {
                prop_assert!(target.contains(&row_bits(&t.context_x, i)));
            }
        }
    }

    #[test]
    fn feature_table_round_trips(
        tasks in 1usize..4,
        classes in 1usize..5,
        dim in 1usize..6,
        cells in 1usize..4,
        rotation in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let spec = ClusterSpec {
            tasks,
            classes,
            dim,
            samples_per_cell: cells,
            rotation,
            prototype_seed: seed,
            shift_seed: seed.wrapping_add(1),
            ..Default::default()
        };
        let ds: Dataset<f64> = gen_cluster_tasks(&spec, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(ds.rows(), tasks * classes * cells);
        let text = format_feature_table(&ds);
        let back: Dataset<f64> = parse_feature_table(&text, FeatureSchema::default()).unwrap();
        prop_assert!(back.bit_eq(&ds));
    }

    #[test]
    fn corruption_moves_every_feature_by_eta(eta in 0.0..2.0f64, seed in any::<u64>()) {
        let ds = cluster_pool(2, 3, 2, seed);
        let noisy = corrupt(&ds, eta, &mut RngStream::new(seed)).unwrap();
        for (a, b) in ds.tasks.iter().zip(&noisy.tasks) {
            for (u, v) in a.x.data().iter().zip(b.x.data()) {
                prop_assert!(((u - v).abs() - eta).abs() < 1e-12);
            }
            prop_assert!(a.y.bit_eq(&b.y));
        }
    }

    #[test]
    fn schedules_are_monotone(step in 0u64..20_000) {
        let c = TrainConfig::paper();
        let (f0, a0) = anneal(step, &c);
        let (f1, a1) = anneal(step + 1, &c);
        prop_assert!(f0 <= f1 && a0 <= a1);
        prop_assert!(f1 <= c.lambda_f_max && a1 <= c.lambda_a_max);
        prop_assert!(learning_rate(step + 1, &c) <= learning_rate(step, &c));
        let expected = c.lr0 * c.lr_decay_factor.powi((step / c.lr_decay_every) as i32);
        prop_assert_eq!(learning_rate(step, &c), expected);
    }
}

fn real_episode(rng: &mut RngStream, tasks: usize, n_ctx: usize, n_tgt: usize) -> Vec<TaskData<f64>> {
    (0..tasks)
        .map(|l| {
            let x: Tensor<f64> = rng.normal_tensor(vec![n_tgt, 2]);
            let y: Tensor<f64> = rng.normal_tensor(vec![n_tgt, 1]);
            let ctx: Vec<usize> = (0..n_ctx).collect();
            let t = TaskData::new(l, x.clone(), y.clone(), x, y, LabelKind::Real).unwrap();
            let sub = t.target_subset(&ctx);
            TaskData::new(l, sub.target_x, sub.target_y, t.target_x, t.target_y, LabelKind::Real).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_invariant_to_target_order(seed in any::<u64>(), variant in prop::sample::select(Variant::ALL.to_vec())) {
        let mut rng = RngStream::new(seed);
        let ep = real_episode(&mut rng, 3, 2, 5);
        let model = Model::<f64>::new(variant, Arch::toy(), LabelKind::Real, 2, 3, seed).unwrap();
        let cfg = ForwardConfig { n_a: 2, n_f: 2, sigma2: 0.3, ..Default::default() };
        let permuted: Vec<TaskData<f64>> = ep
            .iter()
            .map(|t| {
                let perm = rng.choose(5, 5);
                t.permute_target(&perm)
            })
            .collect();
        let tape = Tape::new();
        let p = model.store.constants();
        let masks = Masks::none(3);
        let a = model.train_forward(&tape, &p, &ep, &mut RngStream::new(7), &masks, &cfg).unwrap();
        let b = model.train_forward(&tape, &p, &permuted, &mut RngStream::new(7), &masks, &cfg).unwrap();
        prop_assert_eq!(a.loss.item().to_bits(), b.loss.item().to_bits());
    }
}
