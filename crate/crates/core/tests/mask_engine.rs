use std::collections::{BTreeMap, BTreeSet};

use geofuse::label::ClassLabel;
use geofuse::mask::{
    component_count, load_mask, mask_coverage, rasterize_landcover, synth_mask, LandCoverGrid,
};
use geofuse::rng;
use proptest::prelude::*;

const DRAWS_PER_CLASS: usize = 100;
const NEIGHBOURS: usize = 5;
const MIN_ACCURACY: f64 = 0.9;

fn features(size: usize, seed: u64) -> Vec<([f64; 2], usize)> {
    let mut out = Vec::new();
    for label in ClassLabel::ALL {
        for k in 0..DRAWS_PER_CLASS {
            let mut r = rng::stream(seed, &[label.index() as u64, k as u64]);
            let m = synth_mask(label, &mut r, (size, size));
            out.push((
                [mask_coverage(&m), component_count(&m) as f64],
                label.index(),
            ));
        }
    }
    out
}

/// Leave-one-out k-NN on z-scored (coverage, component count).
fn knn_accuracy(data: &[([f64; 2], usize)]) -> f64 {
    let n = data.len() as f64;
    let mut scale = [0.0; 2];
    let mut mean = [0.0; 2];
    for d in 0..2 {
        mean[d] = data.iter().map(|(f, _)| f[d]).sum::<f64>() / n;
        let var = data
            .iter()
            .map(|(f, _)| (f[d] - mean[d]).powi(2))
            .sum::<f64>()
            / n;
        scale[d] = var.sqrt().max(1e-12);
    }
    let z: Vec<[f64; 2]> = data
        .iter()
        .map(|(f, _)| [(f[0] - mean[0]) / scale[0], (f[1] - mean[1]) / scale[1]])
        .collect();
    let mut correct = 0;
    for i in 0..data.len() {
        let mut dists: Vec<(f64, usize)> = (0..data.len())
            .filter(|&j| j != i)
            .map(|j| {
                let d = (z[i][0] - z[j][0]).powi(2) + (z[i][1] - z[j][1]).powi(2);
                (d, data[j].1)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = [0usize; 5];
        for (_, c) in &dists[..NEIGHBOURS] {
            votes[*c] += 1;
        }
        let best = (0..5)
            .max_by_key(|&c| (votes[c], std::cmp::Reverse(c)))
            .unwrap();
        correct += usize::from(best == data[i].1);
    }
    correct as f64 / n
}

#[test]
fn synthetic_mask_families_are_separable_at_corpus_size() {
    let acc = knn_accuracy(&features(32, 1));
    assert!(acc > MIN_ACCURACY, "5-NN accuracy {acc:.3}");
}

#[test]
fn synthetic_mask_families_are_separable_at_full_size() {
    let acc = knn_accuracy(&features(224, 2));
    assert!(acc > MIN_ACCURACY, "5-NN accuracy {acc:.3}");
}

#[test]
fn synthetic_masks_survive_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for label in ClassLabel::ALL {
        let mut r = rng::stream(3, &[label.index() as u64]);
        let m = synth_mask(label, &mut r, (40, 40));
        let p = dir.path().join(format!("{}.png", label.code()));
        m.save(&p).unwrap();
        let back = load_mask(&p, (40, 40)).unwrap();
        assert_eq!(back.grid, m.grid);
    }
}

fn book() -> BTreeMap<u16, String> {
    (0..8u16).map(|c| (c, format!("class {c}"))).collect()
}

proptest! {
    #[test]
    fn rasterization_is_monotone_in_the_code_set(
        codes in prop::collection::vec(0u16..8, 64),
        set in prop::collection::btree_set(0u16..8, 1..8),
        extra in 0u16..8,
    ) {
        let lc = LandCoverGrid::new(8, 8, codes.clone(), book()).unwrap();
        let small = rasterize_landcover(&lc, &set, (8, 8)).unwrap();
        let mut bigger: BTreeSet<u16> = set.clone();
        bigger.insert(extra);
        let large = rasterize_landcover(&lc, &bigger, (8, 8)).unwrap();
        for ((s, l), code) in small.grid.iter().zip(&large.grid).zip(&codes) {
            prop_assert!(s <= l);
            prop_assert_eq!(*s == 1, set.contains(code));
        }
    }
}
