//! Correlation helpers shared by the losses, the analyzer and the harness.

use crate::error::{Error, Result};
use crate::tensor::{mean, pairwise_sum};

fn centered(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn norm(x: &[f64]) -> f64 {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    pairwise_sum(&sq).sqrt()
}

/// Centered norm small enough to call the vector constant.
fn is_degenerate(x: &[f64], centered_norm: f64) -> bool {
    let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    centered_norm <= 1e-12 * scale * (x.len() as f64).sqrt()
}

/// Pearson correlation and its gradient with respect to `a`.
///
/// Fails with [`Error::Degenerate`] when either input is (numerically)
/// constant.
pub fn pearson_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(
            "correlation needs at least two entries".into(),
        ));
    }
    let ac = centered(a);
    let bc = centered(b);
    let na = norm(&ac);
    let nb = norm(&bc);
    if is_degenerate(a, na) {
        return Err(Error::Degenerate("first input has zero variance".into()));
    }
    if is_degenerate(b, nb) {
        return Err(Error::Degenerate("second input has zero variance".into()));
    }
    let prod: Vec<f64> = ac.iter().zip(&bc).map(|(x, y)| x * y).collect();
    let r = (pairwise_sum(&prod) / (na * nb)).clamp(-1.0, 1.0);
    // ∂r/∂a = b̃/(‖ã‖‖b̃‖) − r ã/‖ã‖²; both terms are already mean-free, so the
    // centering Jacobian leaves them unchanged.
    let grad = ac
        .iter()
        .zip(&bc)
        .map(|(x, y)| y / (na * nb) - r * x / (na * na))
        .collect();
    Ok((r, grad))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson_with_grad(a, b).map(|(r, _)| r)
}

/// Hard ascending ranks starting at 1; tied values share their average rank.
pub fn hard_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) hold ranks i+1..=j; their mean is (i+j+1)/2.
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&hard_ranks(a), &hard_ranks(b))
}
