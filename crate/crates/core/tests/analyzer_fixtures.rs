//! Analyzer outputs against brute-force recomputation.

use std::path::PathBuf;

use rankdistill::analyzer::{
    curve_agreement, dominant_channel_histogram, normalize_map, DominantChannelCurve,
};
use rankdistill::{skdt, FeatureMap, SeededRng};

fn fixture(name: &str) -> FeatureMap {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/normalization")
        .join(name);
    FeatureMap::new(skdt::read_tensor(path).unwrap()).unwrap()
}

fn curve(counts: &[u64]) -> DominantChannelCurve {
    DominantChannelCurve {
        counts: counts.to_vec(),
        level: 0,
        source: String::new(),
    }
}

fn brute_argmax_counts(f: &FeatureMap) -> Vec<u64> {
    let [b, c, h, w] = f.dims();
    let at = |bi: usize, ch: usize, p: usize| f.data()[((bi * c + ch) * h * w) + p];
    let mut counts = vec![0u64; c];
    for bi in 0..b {
        for p in 0..h * w {
            // first channel whose value no other channel exceeds
            let best = (0..c)
                .find(|&ch| (0..c).all(|o| at(bi, o, p) <= at(bi, ch, p)))
                .unwrap();
            counts[best] += 1;
        }
    }
    counts
}

/// Rank with ties averaged, by counting smaller and equal entries.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|u| *u < v).count() as f64;
            let equal = x.iter().filter(|u| *u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn three_channel_argmax_fixture() {
    // channel planes over a 2×2 grid; pixel winners are 2, 0, 1, 0
    let data = [
        0.1, 0.9, 0.3, 0.8, // c0
        0.2, 0.5, 0.7, 0.8, // c1 (ties c0 at the last pixel)
        0.6, 0.4, 0.1, 0.2, // c2
    ];
    let f = FeatureMap::from_fn([1, 3, 2, 2], |i| data[i]).unwrap();
    let got = dominant_channel_histogram(&f).counts;
    assert_eq!(got, brute_argmax_counts(&f));
    assert_eq!(got, vec![2, 1, 1]);
}

#[test]
fn random_maps_match_brute_force_argmax() {
    let mut rng = SeededRng::new(1);
    for _ in 0..20 {
        let f = FeatureMap::new(rng.normal_tensor(&[2, 5, 3, 4]).unwrap()).unwrap();
        assert_eq!(dominant_channel_histogram(&f).counts, brute_argmax_counts(&f));
    }
}

#[test]
fn standardized_slices() {
    let mut rng = SeededRng::new(2);
    let f = FeatureMap::new(rng.uniform_tensor(&[2, 3, 5, 5], -4.0, 9.0).unwrap()).unwrap();
    let n = normalize_map(&f);
    for plane in n.data().chunks_exact(25) {
        let m = plane.iter().sum::<f64>() / 25.0;
        let v = plane.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 25.0;
        assert!(m.abs() <= 1e-12);
        assert!((v - 1.0).abs() <= 1e-9);
    }
    let again = normalize_map(&n);
    for (a, b) in again.data().iter().zip(n.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn agreement_matches_rank_then_pearson() {
    let pairs: [(&[u64], &[u64]); 3] = [
        (&[5, 1, 9, 3, 3, 0], &[4, 2, 8, 8, 1, 0]),
        (&[10, 20, 30, 40], &[1, 0, 3, 2]),
        (&[7, 7, 1, 2, 9], &[0, 5, 5, 5, 6]),
    ];
    for (a, b) in pairs {
        let got = curve_agreement(&curve(a), &curve(b)).unwrap();
        let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        assert!((got.pearson - brute_pearson(&x, &y)).abs() <= 1e-12);
        let sp = brute_pearson(&brute_ranks(&x), &brute_ranks(&y));
        assert!((got.spearman - sp).abs() <= 1e-12);
    }
}

#[test]
fn normalization_fixture_destroys_rank_agreement() {
    let teacher = fixture("teacher.skdt");
    let student = fixture("student.skdt");
    let raw_t = dominant_channel_histogram(&teacher);
    let raw_s = dominant_channel_histogram(&student);
    assert_eq!(raw_t.counts, vec![2, 2, 3, 9]);
    assert_eq!(raw_t.counts, brute_argmax_counts(&teacher));
    assert_eq!(raw_s.counts, brute_argmax_counts(&student));
    let raw = curve_agreement(&raw_t, &raw_s).unwrap();
    assert!((raw.pearson - 1.0).abs() <= 1e-12 && (raw.spearman - 1.0).abs() <= 1e-12);

    let norm_t = dominant_channel_histogram(&normalize_map(&teacher));
    let norm_s = dominant_channel_histogram(&normalize_map(&student));
    assert_ne!(norm_t.counts, raw_t.counts);
    assert_eq!(norm_t.counts, vec![4, 5, 4, 3]);
    assert_eq!(norm_s.counts, vec![5, 4, 3, 4]);
    let norm = curve_agreement(&norm_t, &norm_s).unwrap();
    assert!(norm.spearman < raw.spearman);
    assert!(norm.spearman.abs() <= 1e-12 && norm.pearson.abs() <= 1e-12);
}
