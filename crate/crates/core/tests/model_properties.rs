mod common;

use geofuse::manifest::{class_counts, stratified_split, test_count, Manifest, SampleRecord};
use geofuse::mask::{MaskSource, SpatialMask};
use geofuse::metrics::{compare, ClassMetrics, EvalReport};
use geofuse::model::{fuse, FusionConfig, Mode, ModelConfig};
use geofuse::preprocess::{standardize, unstandardize, ChannelStats};
use geofuse::tensor::ImageTensor;
use geofuse::{ClassLabel, FusionModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{grad_config, randn};

fn image(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(
        32,
        32,
        3,
        (0..32 * 32 * 3).map(|_| randn(&mut rng)).collect(),
    )
    .unwrap()
}

fn config(mode: Mode) -> ModelConfig {
    grad_config(mode)
}

#[test]
fn vit_branch_is_identical_across_modes() {
    let base = FusionModel::new(config(Mode::Baseline), 9).unwrap();
    let kgml = FusionModel::new(config(Mode::Kgml), 9).unwrap();
    assert_eq!(base.vit, kgml.vit);
    let img = image(1);
    let zero = SpatialMask::zeros(32, 32, MaskSource::Synthetic);
    let a = base.forward(&img, None).unwrap();
    let b = kgml.forward(&img, Some(&zero)).unwrap();
    assert_eq!(a.features.h_vit, b.features.h_vit);
}

#[test]
fn baseline_ignores_masks() {
    let model = FusionModel::new(config(Mode::Baseline), 4).unwrap();
    let img = image(2);
    let mut mask = SpatialMask::zeros(32, 32, MaskSource::Synthetic);
    for i in 0..16 {
        mask.set(i, i, true);
    }
    let plain = model.logits(&img, None).unwrap();
    assert_eq!(model.logits(&img, Some(&mask)).unwrap(), plain);
}

#[test]
fn kgml_requires_a_mask_and_uses_it() {
    let model = FusionModel::new(config(Mode::Kgml), 4).unwrap();
    let img = image(3);
    assert!(model.logits(&img, None).is_err());
    let empty = SpatialMask::zeros(32, 32, MaskSource::Synthetic);
    let mut full = empty.clone();
    for y in 0..32 {
        for x in 0..32 {
            full.set(y, x, (x + y) % 3 == 0);
        }
    }
    assert_ne!(
        model.logits(&img, Some(&empty)).unwrap(),
        model.logits(&img, Some(&full)).unwrap()
    );
}

#[test]
fn same_seed_same_model() {
    let a = FusionModel::new(config(Mode::Kgml), 5).unwrap();
    let b = FusionModel::new(config(Mode::Kgml), 5).unwrap();
    assert_eq!(a, b);
    let c = FusionModel::new(config(Mode::Kgml), 6).unwrap();
    assert_ne!(a, c);
}

fn manifest(counts: &[usize]) -> Manifest {
    let mut records = Vec::new();
    for (ci, &n) in counts.iter().enumerate() {
        let label = ClassLabel::from_index(ci).unwrap();
        for k in 0..n {
            records.push(SampleRecord {
                image_path: format!("{}_{k}.png", label.code()).into(),
                mask_path: None,
                label,
                split: None,
            });
        }
    }
    Manifest::new(records, "prop").unwrap()
}

fn report(rows: &[(f64, f64, f64)], supports: &[u64]) -> EvalReport {
    EvalReport::from_rows(
        rows.iter()
            .zip(supports)
            .enumerate()
            .map(|(i, (&(precision, recall, f1), &support))| ClassMetrics {
                label: ClassLabel::from_index(i).unwrap(),
                precision,
                recall,
                f1,
                support,
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_keeps_both_branches(
        hv in prop::collection::vec(-10.0f64..10.0, 1..300),
        hc in prop::collection::vec(-10.0f64..10.0, 1..200),
    ) {
        let cfg = FusionConfig { vit_dim: hv.len(), cnn_dim: hc.len(), reduced_dim: 4, n_classes: 5 };
        let z = fuse(&cfg, &hv, &hc).unwrap();
        prop_assert_eq!(z.len(), hv.len() + hc.len());
        prop_assert_eq!(&z[..hv.len()], &hv[..]);
        prop_assert_eq!(&z[hv.len()..], &hc[..]);
    }

    #[test]
    fn split_partitions_each_class(
        counts in prop::collection::vec(0usize..40, 5),
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let m = manifest(&counts);
        let (train, test) = stratified_split(&m, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), m.len());
        let tr = class_counts(&train);
        let te = class_counts(&test);
        for c in 0..5 {
            prop_assert_eq!(te[c], test_count(fraction, counts[c]));
            prop_assert_eq!(tr[c] + te[c], counts[c]);
        }
        let mut all: Vec<_> = train.records.iter().chain(&test.records).map(|r| r.image_path.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), m.len());
    }

    #[test]
    fn unstandardize_inverts_standardize(
        data in prop::collection::vec(0.0f64..1.0, 3 * 16),
        mean in prop::collection::vec(-1.0f64..1.0, 3),
        std in prop::collection::vec(0.05f64..2.0, 3),
    ) {
        let img = ImageTensor::new(4, 4, 3, data).unwrap();
        let stats = ChannelStats { mean, std };
        let back = unstandardize(&standardize(&img, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data.iter().zip(&img.data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compare_is_antisymmetric(
        a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 5),
        b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 5),
        supports in prop::collection::vec(1u64..500, 5),
    ) {
        let (ra, rb) = (report(&a, &supports), report(&b, &supports));
        let ab = compare(&ra, &rb).unwrap();
        let ba = compare(&rb, &ra).unwrap();
        for (x, y) in ab.per_class.iter().zip(&ba.per_class) {
            prop_assert_eq!(x.delta_f1, -y.delta_f1);
            prop_assert_eq!(x.delta_precision, -y.delta_precision);
            prop_assert_eq!(x.delta_recall, -y.delta_recall);
        }
        prop_assert_eq!(ab.delta_macro_f1, -ba.delta_macro_f1);
    }
}
