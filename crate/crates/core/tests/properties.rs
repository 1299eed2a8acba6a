use std::collections::BTreeSet;

use proptest::prelude::*;

use woundaug::augment::{augment_dataset, AugmentationPolicy, FillMode};
use woundaug::backbone::{build_backbone, BackboneSpec};
use woundaug::classifier::softmax_rows;
use woundaug::dataset::{self, ClassLabel, ImageSample, LabeledDataset, Origin, SplitSpec};
use woundaug::eval::{self, Condition};
use woundaug::image::{Image, Shape};
use woundaug::nn::Tensor;
use woundaug::seed;

fn label() -> impl Strategy<Value = ClassLabel> {
    (0usize..6).prop_map(|i| ClassLabel::ALL[i])
}

fn shape() -> impl Strategy<Value = Shape> {
    (2usize..10, 2usize..10, prop_oneof![Just(1usize), Just(3usize)]).prop_map(|(h, w, c)| Shape::new(h, w, c))
}

fn dataset_of(shape: Shape, items: Vec<(ClassLabel, u32)>) -> LabeledDataset {
    let samples = items
        .into_iter()
        .enumerate()
        .map(|(i, (l, s))| {
            let img = Image::from_fn(shape, |y, x, c| ((s as usize * 31 + y * 7 + x * 3 + c) % 97) as f32 / 96.0);
            ImageSample::new(img, l, format!("p/{i}"), Origin::Real)
        })
        .collect();
    LabeledDataset::new(shape, samples).unwrap()
}

fn arb_dataset() -> impl Strategy<Value = LabeledDataset> {
    shape().prop_flat_map(|s| {
        prop::collection::vec((label(), any::<u32>()), 1..25).prop_map(move |items| dataset_of(s, items))
    })
}

fn arb_policy() -> impl Strategy<Value = AugmentationPolicy> {
    (0.0f64..90.0, 0.0f64..0.5, any::<bool>(), any::<u64>(), any::<bool>(), any::<bool>()).prop_map(
        |(rot, bright, black, seed, both, signed)| AugmentationPolicy {
            rotation_max_deg: rot,
            brightness_max_delta: bright,
            fill_mode: if black { FillMode::ConstantBlack } else { FillMode::NearestEdge },
            seed,
            compose_both: both,
            signed_brightness: signed,
        },
    )
}

/// Per-class counts with every present class holding at least two samples.
fn arb_counts() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(prop_oneof![Just(0usize), 2usize..30], 6).prop_filter("non-empty", |c| c.iter().sum::<usize>() > 0)
}

fn counted(counts: &[usize]) -> LabeledDataset {
    let items = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..n).map(move |k| (ClassLabel::ALL[i], k as u32)))
        .collect();
    dataset_of(Shape::new(2, 2, 1), items)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_keeps_cardinality_labels_and_range(ds in arb_dataset(), policy in arb_policy()) {
        let out = augment_dataset(&ds, &policy).unwrap();
        prop_assert_eq!(out.len(), ds.len());
        for (a, b) in out.samples().iter().zip(ds.samples()) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.origin, Origin::GeometricAug);
            prop_assert!(a.pixels.in_unit_range());
        }
        let again = augment_dataset(&ds, &policy).unwrap();
        prop_assert_eq!(again.content_hash(), out.content_hash());
    }

    #[test]
    fn zero_policy_is_identity(ds in arb_dataset(), policy in arb_policy()) {
        let identity = AugmentationPolicy { rotation_max_deg: 0.0, brightness_max_delta: 0.0, ..policy };
        let out = augment_dataset(&ds, &identity).unwrap();
        for (a, b) in out.samples().iter().zip(ds.samples()) {
            prop_assert!(a.pixels.max_abs_diff(&b.pixels) <= 1e-6);
        }
    }

    #[test]
    fn split_partitions_and_stratifies(counts in arb_counts(), seed in any::<u64>(), frac in 0.5f64..0.95) {
        let ds = counted(&counts);
        let spec = SplitSpec { train_fraction: frac, seed, stratified: true };
        let (train, test) = dataset::split(&ds, &spec).unwrap();
        let tr: BTreeSet<&str> = train.source_ids().into_iter().collect();
        let te: BTreeSet<&str> = test.source_ids().into_iter().collect();
        prop_assert!(tr.is_disjoint(&te));
        prop_assert_eq!(tr.len() + te.len(), ds.len());
        for l in ClassLabel::ALL {
            let n = ds.count(l) as f64;
            prop_assert!((train.count(l) as f64 - frac * n).abs() <= 1.0);
        }
        let (t2, _) = dataset::split(&ds, &spec).unwrap();
        prop_assert_eq!(t2.source_ids(), train.source_ids());
    }

    #[test]
    fn balance_caps_each_class(counts in arb_counts(), per_class in 1usize..10, seed in any::<u64>()) {
        let ds = counted(&counts);
        let out = dataset::balance(&ds, per_class, seed, false).unwrap();
        let ids: BTreeSet<&str> = ds.source_ids().into_iter().collect();
        prop_assert!(out.source_ids().iter().all(|id| ids.contains(id)));
        for l in ClassLabel::ALL {
            prop_assert_eq!(out.count(l), ds.count(l).min(per_class));
        }
        let strict = dataset::balance(&ds, per_class, seed, true);
        let enough = ClassLabel::ALL.iter().all(|&l| ds.count(l) >= per_class);
        prop_assert_eq!(strict.is_ok(), enough);
    }

    #[test]
    fn merge_adds_counts(a in arb_counts(), b in arb_counts()) {
        let (da, db) = (counted(&a), counted(&b));
        let renamed = LabeledDataset::new(
            db.shape(),
            db.samples().iter().map(|s| ImageSample { source_id: format!("b/{}", s.source_id), ..s.clone() }).collect(),
        ).unwrap();
        let m = dataset::merge(&da, &renamed).unwrap();
        for l in ClassLabel::ALL {
            prop_assert_eq!(m.count(l), da.count(l) + db.count(l));
        }
    }

    #[test]
    fn metrics_are_bounded(pairs in prop::collection::vec((label(), label()), 1..200)) {
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let report = eval::EvaluationReport::from_predictions(Condition::XferOnly, &truth, &pred, &ClassLabel::ALL).unwrap();
        prop_assert_eq!(report.matrix.total(), truth.len() as u64);
        prop_assert!((0.0..=1.0).contains(&report.accuracy));
        for m in report.per_class.values() {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.f1 + 1e-12 >= m.precision.min(m.recall));
            }
        }
        let support: u64 = report.support.values().sum();
        prop_assert_eq!(support, truth.len() as u64);
    }

    #[test]
    fn self_comparison_has_zero_deltas(pairs in prop::collection::vec((label(), label()), 1..100)) {
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let a = eval::EvaluationReport::from_predictions(Condition::XferOnly, &truth, &pred, &ClassLabel::ALL).unwrap();
        let b = eval::EvaluationReport { condition: Condition::GeometricAug, ..a.clone() };
        let table = eval::compare(&[a, b]).unwrap();
        for l in ClassLabel::ALL {
            prop_assert_eq!(eval::display_delta(table.f1_delta(l, 1)), "+0.00");
        }
    }

    #[test]
    fn delta_display_is_signed_and_never_negative_zero(d in -1.0f64..1.0) {
        let s = eval::display_delta(d);
        prop_assert!(s.starts_with('+') || s.starts_with('-'));
        prop_assert_ne!(s.as_str(), "-0.00");
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - d).abs() <= 0.005 + 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let p = softmax_rows(&Tensor::new(vec![3, 4], v));
        for r in 0..3 {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_labels_are_deterministic(s in any::<u64>(), a in "[a-z/]{1,12}", b in "[a-z/]{1,12}") {
        prop_assert_eq!(seed::derive(s, &a), seed::derive(s, &a));
        if a != b {
            prop_assert_ne!(seed::derive(s, &a), seed::derive(s, &b));
        }
    }

    #[test]
    fn shape_text_round_trips(s in shape()) {
        let back: Shape = s.to_string().parse().unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn content_hash_tracks_pixels(ds in arb_dataset(), idx in any::<prop::sample::Index>()) {
        let i = idx.index(ds.len());
        let mut samples = ds.samples().to_vec();
        let mut img = (*samples[i].pixels).clone();
        let v = img.data()[0];
        img.data_mut()[0] = if v > 0.5 { v - 0.25 } else { v + 0.25 };
        samples[i] = ImageSample::new(img, samples[i].label, samples[i].source_id.clone(), Origin::Real);
        let changed = LabeledDataset::new(ds.shape(), samples).unwrap();
        prop_assert_eq!(ds.clone().content_hash(), ds.content_hash());
        prop_assert_ne!(changed.content_hash(), ds.content_hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn features_do_not_depend_on_batch_company(n in 2usize..6, seed in any::<u64>()) {
        let shape = Shape::new(8, 8, 3);
        let fe = build_backbone(&BackboneSpec { init_seed: seed, ..BackboneSpec::tiny(shape, 8) }).unwrap();
        let imgs: Vec<Image> = (0..n)
            .map(|k| Image::from_fn(shape, |y, x, c| ((k * 13 + y * 5 + x * 3 + c) % 11) as f32 / 10.0))
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let all = fe.extract(&refs).unwrap();
        for (k, img) in imgs.iter().enumerate() {
            let one = fe.extract(&[img]).unwrap();
            prop_assert_eq!(one.row(0), all.row(k));
        }
    }
}
