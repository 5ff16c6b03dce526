//! Property tests for the numeric core: taxonomy bijection, softmax
//! identities, metric agreement with a brute-force oracle, and encoder
//! robustness across random initializations.

use proptest::prelude::*;

use cer_core::batch::{augment, ImageBatch};
use cer_core::encoders::{ManetEncoder, ResnetEncoder, ViTEncoder};
use cer_core::fusion::{predict_labels, softmax};
use cer_core::metrics::ConfusionMatrix;
use cer_core::presets::{manet_toy, resnet_toy, vit_toy};
use cer_core::{Ctx, LabelSpace, ParamStore, Rng, Tensor};

// ---------------------------------------------------------------------------
// Brute-force metric oracle, written independently of the library code.
// ---------------------------------------------------------------------------

struct OracleMetrics {
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    accuracy: f64,
    macro_f1: f64,
}

fn oracle(y_true: &[usize], y_pred: &[usize], c: usize) -> OracleMetrics {
    let mut precision = vec![0.0; c];
    let mut recall = vec![0.0; c];
    let mut f1 = vec![0.0; c];
    for class in 0..c {
        let tp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == class && p == class)
            .count() as f64;
        let pred_count = y_pred.iter().filter(|&&p| p == class).count() as f64;
        let true_count = y_true.iter().filter(|&&t| t == class).count() as f64;
        precision[class] = if pred_count > 0.0 { 100.0 * tp / pred_count } else { 0.0 };
        recall[class] = if true_count > 0.0 { 100.0 * tp / true_count } else { 0.0 };
        f1[class] = if precision[class] + recall[class] > 0.0 {
            2.0 * precision[class] * recall[class] / (precision[class] + recall[class])
        } else {
            0.0
        };
    }
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64;
    let accuracy = if y_true.is_empty() {
        0.0
    } else {
        100.0 * correct / y_true.len() as f64
    };
    let macro_f1 = f1.iter().sum::<f64>() / c as f64;
    OracleMetrics {
        precision,
        recall,
        f1,
        accuracy,
        macro_f1,
    }
}

proptest! {
    #[test]
    fn metrics_match_brute_force_oracle(
        pairs in prop::collection::vec((0usize..7, 0usize..7), 1..200)
    ) {
        let space = LabelSpace::compound();
        let y_true: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let report = ConfusionMatrix::from_predictions(&y_true, &y_pred, &space)
            .unwrap()
            .report();
        let want = oracle(&y_true, &y_pred, 7);
        for i in 0..7 {
            prop_assert!((report.per_class_precision[i] - want.precision[i]).abs() < 1e-9);
            prop_assert!((report.per_class_recall[i] - want.recall[i]).abs() < 1e-9);
            prop_assert!((report.per_class_f1[i] - want.f1[i]).abs() < 1e-9);
        }
        prop_assert!((report.accuracy - want.accuracy).abs() < 1e-9);
        prop_assert!((report.macro_f1 - want.macro_f1).abs() < 1e-9);
    }

    #[test]
    fn metrics_invariant_under_joint_permutation(
        pairs in prop::collection::vec((0usize..7, 0usize..7), 1..100),
        seed in 0u64..1000
    ) {
        let space = LabelSpace::compound();
        let mut shuffled = pairs.clone();
        let mut rng = Rng::seed_from_u64(seed);
        rng.shuffle(&mut shuffled);
        let report = |ps: &[(usize, usize)]| {
            let t: Vec<usize> = ps.iter().map(|p| p.0).collect();
            let p: Vec<usize> = ps.iter().map(|p| p.1).collect();
            ConfusionMatrix::from_predictions(&t, &p, &space).unwrap().report()
        };
        let a = report(&pairs);
        let b = report(&shuffled);
        prop_assert_eq!(a.confusion.counts(), b.confusion.counts());
        prop_assert_eq!(a.macro_f1, b.macro_f1);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn macro_f1_bounded_and_maximal_iff_diagonal(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)
    ) {
        let space = LabelSpace::from_names(&["a", "b", "c", "d"]).unwrap();
        let y_true: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(&y_true, &y_pred, &space).unwrap();
        let report = cm.report();
        prop_assert!(report.macro_f1 >= 0.0 && report.macro_f1 <= 100.0);
        let diagonal_with_full_support = (0..4).all(|i| cm.row_sum(i) > 0 && cm.row_sum(i) == cm.count(i, i));
        prop_assert_eq!(report.macro_f1 == 100.0, diagonal_with_full_support);
    }

    #[test]
    fn recall_times_support_recovers_diagonal(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80)
    ) {
        let space = LabelSpace::from_names(&["a", "b", "c", "d", "e"]).unwrap();
        let y_true: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(&y_true, &y_pred, &space).unwrap();
        let report = cm.report();
        for i in 0..5 {
            let recovered = report.per_class_recall[i] * cm.row_sum(i) as f64 / 100.0;
            prop_assert!((recovered - cm.count(i, i) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariance(
        row in prop::collection::vec(-20.0f64..20.0, 7),
        c in -100.0f64..100.0
    ) {
        let logits = Tensor::new(&[1, 7], row).unwrap();
        let base = softmax(&logits).unwrap();
        let shifted = softmax(&logits.map(|v| v + c)).unwrap();
        for (a, b) in base.values().data().iter().zip(shifted.values().data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_of_softmax_is_argmax_of_logits(
        row in prop::collection::vec(-30.0f64..30.0, 7)
    ) {
        let space = LabelSpace::compound();
        let mut argmax = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[argmax] {
                argmax = j;
            }
        }
        let logits = Tensor::new(&[1, 7], row).unwrap();
        let probs = softmax(&logits).unwrap();
        let pred = predict_labels(&probs, &space).unwrap()[0].0;
        prop_assert_eq!(pred, argmax);
    }

    #[test]
    fn label_space_bijection(names in prop::collection::hash_set("[a-z]{1,8}", 1..10)) {
        let names: Vec<String> = names.into_iter().collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let space = LabelSpace::from_names(&refs).unwrap();
        for i in 0..space.len() {
            prop_assert_eq!(space.index_of(space.name(i).unwrap()), Some(i));
        }
    }

    #[test]
    fn augmentation_never_touches_labels(
        seed in 0u64..500,
        flip in 0.0f64..1.0
    ) {
        let mut rng = Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let batch = ImageBatch::new(
            Tensor::from_fn(&[6, 3, 4, 4], |i| (i % 17) as f64 / 17.0),
            Some(labels.clone()),
        )
        .unwrap();
        let out = augment(batch, &mut rng, flip);
        prop_assert_eq!(out.labels, Some(labels));
        prop_assert_eq!(out.pixels.shape(), &[6, 3, 4, 4]);
    }
}

/// Random init + random input stays finite across 100 seeds per backbone.
#[test]
fn forwards_finite_over_100_seeds() {
    for seed in 0..100u64 {
        let mut rng = Rng::seed_from_u64(seed);
        let mut input_rng = Rng::seed_from_u64(seed ^ 0xFFFF);

        let mut ps = ParamStore::new();
        let vit = ViTEncoder::new(&mut ps, &mut rng, vit_toy(), 64).unwrap();
        let batch = ImageBatch::new(
            Tensor::from_fn(&[1, 3, 64, 64], |_| input_rng.next_f64()),
            None,
        )
        .unwrap();
        let mut ctx = Ctx::Eval { ps: &ps };
        let (out, _) = vit.forward(&mut ctx, &batch).unwrap();
        assert!(out.features.all_finite());

        let mut ps = ParamStore::new();
        let manet = ManetEncoder::new(&mut ps, &mut rng, manet_toy(), 64).unwrap();
        let mut ctx = Ctx::Eval { ps: &ps };
        let (out, _) = manet.forward(&mut ctx, &batch).unwrap();
        assert!(out.features.all_finite());

        let mut ps = ParamStore::new();
        let resnet = ResnetEncoder::new(&mut ps, &mut rng, resnet_toy(), 64).unwrap();
        let mut ctx = Ctx::Eval { ps: &ps };
        let (out, _) = resnet.forward(&mut ctx, &batch).unwrap();
        assert!(out.features.all_finite());
    }
}
