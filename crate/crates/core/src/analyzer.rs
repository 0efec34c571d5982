//! Feature-statistics diagnostics: dominant-channel histograms, per-channel
//! standardization and agreement between histogram curves.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::FeatureMap;
use crate::stats;
use crate::tensor::{mean, Tensor};

/// How often each channel is the per-pixel argmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominantChannelCurve {
    pub counts: Vec<u64>,
    pub level: usize,
    pub source: String,
}

impl DominantChannelCurve {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `channel,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,count\n");
        for (c, n) in self.counts.iter().enumerate() {
            writeln!(out, "{c},{n}").unwrap();
        }
        out
    }
}

/// Counts, for every `(b, u, v)`, which channel holds the largest value.
/// Ties go to the lowest channel index.
pub fn dominant_channel_histogram(f: &FeatureMap) -> DominantChannelCurve {
    dominant_channel_histogram_labeled(f, 0, "")
}

pub fn dominant_channel_histogram_labeled(
    f: &FeatureMap,
    level: usize,
    source: &str,
) -> DominantChannelCurve {
    let [b, c, h, w] = f.dims();
    let hw = h * w;
    let mut counts = vec![0u64; c];
    for bi in 0..b {
        let sample = f.sample(bi);
        for p in 0..hw {
            let mut best = 0;
            for ch in 1..c {
                if sample[ch * hw + p] > sample[best * hw + p] {
                    best = ch;
                }
            }
            counts[best] += 1;
        }
    }
    DominantChannelCurve {
        counts,
        level,
        source: source.to_string(),
    }
}

/// Standardizes every `(b, c)` spatial slice to mean 0 and variance 1.
/// Constant slices become all zeros.
pub fn normalize_map(f: &FeatureMap) -> FeatureMap {
    let [b, c, h, w] = f.dims();
    let hw = h * w;
    let mut out = Vec::with_capacity(f.data().len());
    for plane in f.data().chunks_exact(hw) {
        let m = mean(plane);
        let centered: Vec<f64> = plane.iter().map(|v| v - m).collect();
        let var = mean(&centered.iter().map(|v| v * v).collect::<Vec<_>>());
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            out.extend(centered.iter().map(|v| v / sd));
        } else {
            out.extend(std::iter::repeat_n(0.0, hw));
        }
    }
    FeatureMap::new(Tensor::new(vec![b, c, h, w], out).expect("same shape"))
        .expect("standardized values are finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveAgreement {
    pub pearson: f64,
    pub spearman: f64,
}

impl CurveAgreement {
    /// `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\npearson,{}\nspearman,{}\n",
            self.pearson, self.spearman
        )
    }
}

/// Pearson and tie-averaged Spearman correlation of two count curves.
pub fn curve_agreement(
    a: &DominantChannelCurve,
    b: &DominantChannelCurve,
) -> Result<CurveAgreement> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "curves have {} and {} channels",
            a.counts.len(),
            b.counts.len()
        )));
    }
    if a.counts.len() < 2 {
        return Err(Error::Degenerate(
            "curve agreement needs at least two channels".into(),
        ));
    }
    let x: Vec<f64> = a.counts.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.counts.iter().map(|&v| v as f64).collect();
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(&x) || constant(&y) {
        return Err(Error::Degenerate("constant dominant-channel curve".into()));
    }
    Ok(CurveAgreement {
        pearson: stats::pearson(&x, &y)?,
        spearman: stats::spearman(&x, &y)?,
    })
}
