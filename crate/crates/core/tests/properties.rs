//! Invariants that hold for every input, checked with proptest.

use proptest::prelude::*;

use superpos::autodiff::{cross_entropy, layer_norm, softmax_columns, Tensor};
use superpos::backbone::{init_backbone, BackboneConfig, FrozenBackbone};
use superpos::harness::{steps_to_fraction, EpochRecord};
use superpos::metrics::{average_ranks, compute_metric, standardized_overall_scores, MetricKind};
use superpos::optim::{AdamW, AdamWConfig, ParamGroup};
use superpos::reparam::{
    init_residual, init_simple, init_superpos, materialize_superpos, residual_count, sample_token_indices,
    simple_count, superpos_count, PromptParams, SuperPosParams,
};
use superpos::tasks::{evaluate_rule, generate_task, Generator, Prediction, SplitSizes, Target, TaskSpec};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-20.0f64..20.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn small_frozen(e: usize) -> FrozenBackbone {
    init_backbone(BackboneConfig {
        vocab_size: 64,
        model_dim: e,
        num_layers: 1,
        num_heads: 1,
        ffn_dim: 8,
        max_seq_len: 16,
        ..BackboneConfig::default()
    })
    .unwrap()
    .freeze()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_columns_are_distributions(t in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = softmax_columns(&t);
        let (rows, cols) = s.dims();
        for c in 0..cols {
            let col = s.column(c);
            prop_assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // shift invariance
            let shifted: Vec<f64> = t.column(c).iter().map(|v| v + 7.0).collect();
            let again = softmax_columns(&Tensor::matrix(rows, 1, shifted).unwrap());
            for (a, b) in again.data().iter().zip(&col) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_is_log_sum_exp_minus_target(
        logits in prop::collection::vec(-30.0f64..30.0, 2..12),
        pick in any::<prop::sample::Index>(),
    ) {
        let target = pick.index(logits.len());
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let got = cross_entropy(&Tensor::matrix(1, logits.len(), logits.clone()).unwrap(), target).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - (lse - logits[target])).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_centers_and_scales(x in prop::collection::vec(-50.0f64..50.0, 2..20)) {
        let n = x.len();
        let spread = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - x.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        prop_assume!(spread > 1e-3);
        let y = layer_norm(&Tensor::vector(x), &Tensor::filled(&[n], 1.0), &Tensor::zeros(&[n]), 1e-12).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn superposition_is_linear_in_coefficients(
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        c1 in prop::collection::vec(-1.0f64..1.0, 6),
        c2 in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let frozen = small_frozen(4);
        let base = init_superpos(&frozen, 2, 3, seed).unwrap();
        let with = |c: &[f64]| {
            let mut p = base.clone();
            p.coefs = c.chunks(3).map(|ch| Tensor::vector(ch.to_vec()).with_grad()).collect();
            materialize_superpos(&p).unwrap()
        };
        let mixed: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let (p1, p2, pm) = (with(&c1), with(&c2), with(&mixed));
        for ((u, v), w) in p1.data().iter().zip(p2.data()).zip(pm.data()) {
            prop_assert!((a * u + b * v - w).abs() < 1e-12);
        }
    }

    #[test]
    fn trainable_counts_follow_closed_forms(
        e in prop::sample::select(vec![2usize, 4, 6]),
        n in 1usize..6,
        m in 1usize..9,
        b in 1usize..9,
    ) {
        let frozen = small_frozen(e);
        let simple = PromptParams::Simple(init_simple(&frozen, n, 0).unwrap());
        let superpos = PromptParams::Superpos(init_superpos(&frozen, n, m, 0).unwrap());
        let residual = PromptParams::Residual(init_residual(&frozen, n, b, 0).unwrap());
        prop_assert_eq!(simple.trainable_count(), simple_count(e, n));
        prop_assert_eq!(simple_count(e, n), e * n);
        prop_assert_eq!(superpos.trainable_count(), superpos_count(e, n, m));
        prop_assert_eq!(superpos_count(e, n, m), n * (e * m + m));
        prop_assert_eq!(residual.trainable_count(), residual_count(e, n, b));
        prop_assert_eq!(residual_count(e, n, b), e * n + 2 * e * b + 2 * e);
    }

    #[test]
    fn token_sampling_is_distinct_and_prefix_stable(seed in any::<u64>(), k in 1usize..56) {
        let long = sample_token_indices(64, 56, seed).unwrap();
        let short = sample_token_indices(64, k, seed).unwrap();
        prop_assert_eq!(&long[..k], &short[..]);
        let mut sorted = long.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), 56);
        prop_assert!(long.iter().all(|&t| (8..64).contains(&t)));
    }

    #[test]
    fn metrics_ignore_example_order(
        pairs in prop::collection::vec((0usize..3, 0usize..2), 3..40),
        rotate in 0usize..40,
    ) {
        let to_pred = |p: usize| if p == 2 { Prediction::Invalid } else { Prediction::Class(p) };
        let preds: Vec<Prediction> = pairs.iter().map(|&(p, _)| to_pred(p)).collect();
        let targets: Vec<Target> = pairs.iter().map(|&(_, t)| Target::Class(t)).collect();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rotate % pairs.len());
        shuffled.reverse();
        let preds2: Vec<Prediction> = shuffled.iter().map(|&(p, _)| to_pred(p)).collect();
        let targets2: Vec<Target> = shuffled.iter().map(|&(_, t)| Target::Class(t)).collect();
        for kind in [MetricKind::Accuracy, MetricKind::F1, MetricKind::Mcc, MetricKind::Pearson, MetricKind::Spearman] {
            let a = compute_metric(kind, &preds, &targets).unwrap();
            let b = compute_metric(kind, &preds2, &targets2).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12, "{:?}", kind);
            prop_assert_eq!(a.undefined, b.undefined);
        }
    }

    #[test]
    fn correlations_stay_in_range(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..40)) {
        let preds: Vec<Prediction> = pairs.iter().map(|&(p, _)| Prediction::Value(p)).collect();
        let targets: Vec<Target> = pairs.iter().map(|&(_, t)| Target::Value(t)).collect();
        for kind in [MetricKind::Pearson, MetricKind::Spearman] {
            let s = compute_metric(kind, &preds, &targets).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s.value));
        }
    }

    #[test]
    fn ranks_sum_to_triangular_number(values in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, 3.5]), 1..30)) {
        let n = values.len() as f64;
        let ranks = average_ranks(&values);
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn standardized_scores_ignore_affine_rescaling_per_task(
        cells in prop::collection::vec(0.0f64..100.0, 12),
        scale in prop::collection::vec(0.1f64..10.0, 4),
        shift in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        // 3 methods x 4 tasks
        let table: Vec<Vec<Option<f64>>> = cells.chunks(4).map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        let moved: Vec<Vec<Option<f64>>> = table
            .iter()
            .map(|r| r.iter().enumerate().map(|(t, v)| v.map(|v| v * scale[t] + shift[t])).collect())
            .collect();
        let a = standardized_overall_scores(&table).unwrap();
        let b = standardized_overall_scores(&moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.mean - y.mean).abs() < 1e-8);
            prop_assert!((x.std - y.std).abs() < 1e-8);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&x.mean));
        }
    }

    #[test]
    fn zero_gradients_without_decay_leave_parameters_alone(
        data in prop::collection::vec(-5.0f64..5.0, 1..20),
        lr in 1e-4f64..1.0,
        steps in 1usize..5,
    ) {
        let mut t = Tensor::vector(data.clone()).with_grad();
        let mut opt = AdamW::new(AdamWConfig { lr, ..AdamWConfig::default() }).unwrap();
        for _ in 0..steps {
            t.zero_grad();
            t.accumulate_grad(&vec![0.0; data.len()]);
            opt.step(&mut [ParamGroup::new(vec![("t".into(), &mut t)], lr, 0.0)]).unwrap();
        }
        prop_assert_eq!(t.data(), &data[..]);
    }

    #[test]
    fn steps_to_fraction_finds_the_first_qualifying_epoch(
        scores in prop::collection::vec(0.0f64..100.0, 1..30),
        fraction in 0.1f64..1.0,
    ) {
        let curve: Vec<EpochRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| EpochRecord { epoch: i + 1, train_loss: 0.0, val_score: s, invalid_frac: 0.0 })
            .collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = steps_to_fraction(&curve, fraction);
        prop_assert!(k >= 1 && k <= curve.len());
        if best > 0.0 {
            prop_assert!(scores[k - 1] >= fraction * best);
            prop_assert!(scores[..k - 1].iter().all(|&s| s < fraction * best));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_targets_follow_their_rule(seed in any::<u64>(), which in 0usize..5) {
        let mut spec = TaskSpec::builtin(Generator::ALL[which], seed);
        spec.sizes = SplitSizes { train: 40, val: 20, test: 20 };
        let data = generate_task(&spec).unwrap();
        for ex in data.train.iter().chain(&data.val).chain(&data.test) {
            prop_assert_eq!(evaluate_rule(spec.generator, &ex.tokens), ex.target);
            prop_assert!(ex.tokens.len() + 10 <= BackboneConfig::default().max_seq_len);
        }
    }

    #[test]
    fn one_hot_init_reproduces_sampled_embeddings(seed in any::<u64>(), n in 1usize..8, m in 1usize..12) {
        let frozen = small_frozen(4);
        let params: SuperPosParams = init_superpos(&frozen, n, m, seed).unwrap();
        let p = materialize_superpos(&params).unwrap();
        for i in 0..n {
            let col = p.column(i);
            let want = frozen.embedding_row(params.sampled[i % m]);
            prop_assert!(col.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
