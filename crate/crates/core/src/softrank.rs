//! Differentiable ranking.
//!
//! [`isotonic_l2`] solves L2 isotonic regression exactly with a single
//! pool-adjacent-violators pass. [`soft_rank`] projects `x / ε` onto the
//! permutahedron spanned by `(1, …, n)`; after one sort that projection reduces
//! to an isotonic regression, and its Jacobian is block-constant, so both the
//! forward value and the vector-Jacobian product cost `O(n log n)`.
//!
//! Ranks are ascending: the smallest input receives the smallest rank. The
//! descending convention is `soft_rank(-x, ε)`.

use std::ops::Range;

use crate::error::{Error, Result};

/// Solution of `min Σ (vᵢ − yᵢ)²` over nondecreasing `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicSolution {
    pub values: Vec<f64>,
    /// Contiguous index ranges sharing one value, in order.
    pub blocks: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy)]
struct Pool {
    start: usize,
    len: usize,
    sum: f64,
}

impl Pool {
    fn mean(&self) -> f64 {
        self.sum / self.len as f64
    }
}

/// Left-to-right PAV. Adjacent pools are merged while the left mean is
/// greater than *or equal to* the right one, so ties end up in one block.
fn pav_blocks(y: &[f64]) -> Vec<Range<usize>> {
    let mut pools: Vec<Pool> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        pools.push(Pool {
            start: i,
            len: 1,
            sum: v,
        });
        while pools.len() >= 2 {
            let last = pools[pools.len() - 1];
            let prev = pools[pools.len() - 2];
            if prev.mean() < last.mean() {
                break;
            }
            pools.pop();
            let merged = pools.last_mut().unwrap();
            merged.len += last.len;
            merged.sum += last.sum;
        }
    }
    pools.iter().map(|p| p.start..p.start + p.len).collect()
}

fn block_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn isotonic_l2(y: &[f64]) -> Result<IsotonicSolution> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(y)?;
    let blocks = pav_blocks(y);
    let mut values = vec![0.0; y.len()];
    for b in &blocks {
        let m = block_mean(&y[b.clone()]);
        values[b.clone()].fill(m);
    }
    Ok(IsotonicSolution { values, blocks })
}

/// `Jᵀ · upstream` for the Jacobian of [`isotonic_l2`] at `y`.
///
/// The Jacobian is block diagonal with `1/|B|` in every entry of block `B`,
/// so the product averages `upstream` within each block.
pub fn isotonic_l2_vjp(y: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if y.len() != upstream.len() {
        return Err(Error::ShapeMismatch(format!(
            "isotonic_l2_vjp: input has {} entries, upstream has {}",
            y.len(),
            upstream.len()
        )));
    }
    let sol = isotonic_l2(y)?;
    let mut out = vec![0.0; y.len()];
    for b in &sol.blocks {
        let m = block_mean(&upstream[b.clone()]);
        out[b.clone()].fill(m);
    }
    Ok(out)
}

/// A soft-rank vector together with the state needed for its VJP.
#[derive(Debug, Clone)]
pub struct RankVector {
    pub ranks: Vec<f64>,
    pub epsilon: f64,
    /// `order[i]` is the index of the i-th smallest input.
    order: Vec<usize>,
    /// PAV blocks over sorted positions.
    blocks: Vec<Range<usize>>,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Gradient of `⟨upstream, ranks⟩` with respect to the input `x`.
    pub fn vjp(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.ranks.len() {
            return Err(Error::ShapeMismatch(format!(
                "soft_rank_vjp: input has {} entries, upstream has {}",
                self.ranks.len(),
                upstream.len()
            )));
        }
        let sorted_up: Vec<f64> = self.order.iter().map(|&i| upstream[i]).collect();
        let mut grad = vec![0.0; self.ranks.len()];
        for b in &self.blocks {
            if b.len() == 1 {
                continue;
            }
            let m = block_mean(&sorted_up[b.clone()]);
            for pos in b.clone() {
                grad[self.order[pos]] = (sorted_up[pos] - m) / self.epsilon;
            }
        }
        Ok(grad)
    }
}

pub fn soft_rank(x: &[f64], epsilon: f64) -> Result<RankVector> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    check_finite(x)?;

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let scaled: Vec<f64> = order.iter().map(|&i| x[i] / epsilon).collect();
    // Sorted input minus the ascending target (1, …, n).
    let shifted: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(i, &a)| a - (i + 1) as f64)
        .collect();
    let blocks = pav_blocks(&shifted);

    let mut ranks = vec![0.0; x.len()];
    for b in &blocks {
        if b.len() == 1 {
            // a − (a − w) = w; write it directly so hard ranks come out exact.
            ranks[order[b.start]] = (b.start + 1) as f64;
            continue;
        }
        let m = block_mean(&shifted[b.clone()]);
        for pos in b.clone() {
            ranks[order[pos]] = scaled[pos] - m;
        }
    }
    Ok(RankVector {
        ranks,
        epsilon,
        order,
        blocks,
    })
}

pub fn soft_rank_vjp(x: &[f64], epsilon: f64, upstream: &[f64]) -> Result<Vec<f64>> {
    soft_rank(x, epsilon)?.vjp(upstream)
}
