use super::FeatureMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial output size of [`pool_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolTarget {
    pub h: usize,
    pub w: usize,
}

impl PoolTarget {
    pub const DEFAULT: PoolTarget = PoolTarget { h: 16, w: 16 };

    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    /// This target shrunk to fit inside an `h × w` map.
    pub fn clamp_to(self, h: usize, w: usize) -> Self {
        Self {
            h: self.h.min(h),
            w: self.w.min(w),
        }
    }
}

impl Default for PoolTarget {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Sparse 1-D averaging weights: for each output cell, `(input index, weight)`.
///
/// Output cell `i` covers `[i·n/p, (i+1)·n/p)` of the input axis and each input
/// cell contributes its overlap length divided by the window length. Working
/// in units of `1/p` keeps the overlaps integral.
fn axis_weights(n: usize, p: usize) -> Vec<Vec<(usize, f64)>> {
    (0..p)
        .map(|i| {
            let lo = i * n;
            let hi = (i + 1) * n;
            let first = lo / p;
            let last = (hi - 1) / p;
            (first..=last)
                .filter_map(|j| {
                    let overlap = hi.min((j + 1) * p) - lo.max(j * p);
                    (overlap > 0).then(|| (j, overlap as f64 / n as f64))
                })
                .collect()
        })
        .collect()
}

/// Average pooling to `target`, area-weighted when the size does not divide.
pub fn pool_features(f: &FeatureMap, target: PoolTarget) -> Result<FeatureMap> {
    let [b, c, h, w] = f.dims();
    check_target(h, w, target)?;
    if (target.h, target.w) == (h, w) {
        return Ok(f.clone());
    }
    let rows = axis_weights(h, target.h);
    let cols = axis_weights(w, target.w);
    let src = f.data();
    let mut out = vec![0.0; b * c * target.h * target.w];
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let o = &mut out[plane * target.h * target.w..(plane + 1) * target.h * target.w];
        for (i, rw) in rows.iter().enumerate() {
            for (j, cw) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for &(r, wr) in rw {
                    for &(q, wc) in cw {
                        acc += wr * wc * s[r * w + q];
                    }
                }
                o[i * target.w + j] = acc;
            }
        }
    }
    FeatureMap::new(Tensor::new(vec![b, c, target.h, target.w], out)?)
}

/// Adjoint of [`pool_features`]: spreads `grad` (shaped like the pooled
/// output) back onto a `source` sized map.
pub fn pool_features_adjoint(grad: &Tensor, source: [usize; 4]) -> Result<Tensor> {
    let [b, c, h, w] = source;
    let [gb, gc, ph, pw] = grad.dims4()?;
    if (gb, gc) != (b, c) {
        return Err(Error::ShapeMismatch(format!(
            "pool adjoint: gradient {:?} does not match source {:?}",
            grad.shape(),
            source
        )));
    }
    let target = PoolTarget::new(ph, pw);
    check_target(h, w, target)?;
    if (ph, pw) == (h, w) {
        return Ok(grad.clone());
    }
    let rows = axis_weights(h, ph);
    let cols = axis_weights(w, pw);
    let g = grad.data();
    let mut out = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        let gp = &g[plane * ph * pw..(plane + 1) * ph * pw];
        let o = &mut out[plane * h * w..(plane + 1) * h * w];
        for (i, rw) in rows.iter().enumerate() {
            for (j, cw) in cols.iter().enumerate() {
                let v = gp[i * pw + j];
                for &(r, wr) in rw {
                    for &(q, wc) in cw {
                        o[r * w + q] += wr * wc * v;
                    }
                }
            }
        }
    }
    Tensor::new(source.to_vec(), out)
}

fn check_target(h: usize, w: usize, target: PoolTarget) -> Result<()> {
    if target.h == 0 || target.w == 0 || target.h > h || target.w > w {
        return Err(Error::InvalidArgument(format!(
            "pool target {}×{} must be nonzero and no larger than the source {h}×{w}",
            target.h, target.w
        )));
    }
    Ok(())
}
