use super::{pool_features, pool_features_adjoint, FeaturePyramid, LossResult, PoolTarget};
use crate::error::{Error, Result};
use crate::softrank::soft_rank;
use crate::stats::pearson_with_grad;
use crate::tensor::{mean, Tensor};

/// Regularization strength of the soft-rank operator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Epsilon {
    /// Used as is.
    Fixed(f64),
    /// `ε = k · σ / n`, recomputed per level, where `σ` is the population
    /// standard deviation of the pooled student and teacher values of the
    /// level and `n` the length of each ranked vector.
    ///
    /// Sorted data of `n` points are spaced roughly `σ / n` apart while ranks
    /// are spaced 1 apart, so `k` is the smoothing measured in typical gaps:
    /// `k ≪ 1` gives hard ranks, `k ≫ n` collapses the operator to an affine
    /// map (and the loss to a Pearson loss). The dependence of `ε` on the
    /// student is differentiated through.
    Relative(f64),
}

impl Epsilon {
    pub const DEFAULT_RELATIVE: f64 = 4.0;

    pub fn validate(self) -> Result<Self> {
        let v = match self {
            Epsilon::Fixed(v) | Epsilon::Relative(v) => v,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveEpsilon(v));
        }
        Ok(self)
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Relative(Self::DEFAULT_RELATIVE)
    }
}

/// Soft Spearman correlation and its gradient with respect to the student.
#[derive(Debug, Clone)]
pub struct SpearmanCorr {
    pub r: f64,
    pub grad: Vec<f64>,
}

struct CorrParts {
    r: f64,
    grad_s: Vec<f64>,
    /// ∂r/∂ε
    grad_eps: f64,
}

fn corr_parts(s: &[f64], t: &[f64], epsilon: f64) -> Result<CorrParts> {
    if s.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "spearman: student has {} entries, teacher has {}",
            s.len(),
            t.len()
        )));
    }
    if s.len() < 2 {
        return Err(Error::InvalidArgument(
            "spearman correlation needs at least two entries".into(),
        ));
    }
    let rs = soft_rank(s, epsilon)?;
    let rt = soft_rank(t, epsilon)?;
    let (r, dr_drs) = pearson_with_grad(&rs.ranks, &rt.ranks)
        .map_err(|e| Error::DegenerateRanks(e.to_string()))?;
    let (_, dr_drt) = pearson_with_grad(&rt.ranks, &rs.ranks)
        .map_err(|e| Error::DegenerateRanks(e.to_string()))?;
    let grad_s = rs.vjp(&dr_drs)?;
    let grad_t = rt.vjp(&dr_drt)?;
    // rank(x/ε): ∂/∂ε = −(∂/∂x · x) / ε
    let dot = |g: &[f64], x: &[f64]| g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let grad_eps = -(dot(&grad_s, s) + dot(&grad_t, t)) / epsilon;
    Ok(CorrParts { r, grad_s, grad_eps })
}

/// Pearson correlation of `soft_rank(s, ε)` and `soft_rank(t, ε)`.
///
/// `t` is a constant; the gradient flows through the student ranks only.
pub fn spearman_corr(s: &[f64], t: &[f64], epsilon: f64) -> Result<SpearmanCorr> {
    let parts = corr_parts(s, t, epsilon)?;
    Ok(SpearmanCorr {
        r: parts.r,
        grad: parts.grad_s,
    })
}

/// `(1/L) Σ_l (1 − r_l)` where `r_l` is the soft Spearman correlation of the
/// pooled level, computed per sample over all channels and pixels jointly and
/// averaged over the batch.
///
/// Levels smaller than `pool` are used at their own size.
pub fn spearman_loss(
    student: &FeaturePyramid,
    teacher: &FeaturePyramid,
    epsilon: Epsilon,
    pool: PoolTarget,
) -> Result<LossResult> {
    student.check_congruent(teacher)?;
    let epsilon = epsilon.validate()?;
    let n_levels = student.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());

    for (level, (s, t)) in student.levels().iter().zip(teacher.levels()).enumerate() {
        let [b, c, h, w] = s.dims();
        let target = pool.clamp_to(h, w);
        let ps = pool_features(s, target)?;
        let pt = pool_features(t, target)?;
        let n = c * target.h * target.w;

        let (eps, sigma) = match epsilon {
            Epsilon::Fixed(e) => (e, None),
            Epsilon::Relative(k) => {
                let all: Vec<f64> = ps.data().iter().chain(pt.data()).copied().collect();
                let mu = mean(&all);
                let var = all.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / all.len() as f64;
                let sigma = var.sqrt();
                if !(sigma > 0.0) {
                    return Err(Error::DegenerateRanks(format!(
                        "level {level}: all values equal, relative epsilon undefined"
                    )));
                }
                (k * sigma / n as f64, Some((k, mu, sigma, all.len())))
            }
        };

        let weight = 1.0 / (b as f64 * n_levels);
        let mut level_value = 0.0;
        let mut gpooled = vec![0.0; b * n];
        let mut grad_eps = 0.0;
        for bi in 0..b {
            let parts = corr_parts(ps.sample(bi), pt.sample(bi), eps).map_err(|e| match e {
                Error::DegenerateRanks(msg) => {
                    Error::DegenerateRanks(format!("level {level}, sample {bi}: {msg}"))
                }
                other => other,
            })?;
            level_value += 1.0 - parts.r;
            for (g, v) in gpooled[bi * n..(bi + 1) * n].iter_mut().zip(&parts.grad_s) {
                *g = -weight * v;
            }
            grad_eps += -weight * parts.grad_eps;
        }
        if let Some((k, mu, sigma, count)) = sigma {
            // ε = kσ/n, ∂σ/∂x_j = (x_j − μ)/(count·σ) for each student entry.
            let scale = grad_eps * k / n as f64 / (count as f64 * sigma);
            for (g, &x) in gpooled.iter_mut().zip(ps.data()) {
                *g += scale * (x - mu);
            }
        }
        value += level_value / (b as f64 * n_levels);
        let gpooled = Tensor::new(vec![b, c, target.h, target.w], gpooled)?;
        grads.push(pool_features_adjoint(&gpooled, s.dims())?);
    }
    Ok(LossResult { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::FeatureMap;

    fn level(values: &[f64]) -> FeaturePyramid {
        let t = Tensor::new(vec![1, 1, 1, values.len()], values.to_vec()).unwrap();
        FeaturePyramid::single(FeatureMap::new(t).unwrap())
    }

    #[test]
    fn identical_inputs_correlate_perfectly() {
        let s = [0.3, -1.0, 2.5, 0.9];
        let c = spearman_corr(&s, &s, 1e-3).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_value() {
        // Hard ranks [3,1,2] vs [1,2,3]; centered (1,−1,0)·(−1,0,1) = −1, norms √2·√2.
        let c = spearman_corr(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 0.5).unwrap();
        assert!((c.r + 0.5).abs() < 1e-12);
        let l = spearman_loss(
            &level(&[3.0, 1.0, 2.0]),
            &level(&[1.0, 2.0, 3.0]),
            Epsilon::Fixed(0.5),
            PoolTarget::DEFAULT,
        )
        .unwrap();
        assert!((l.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn monotone_map_of_teacher_has_zero_loss() {
        let t = [0.1, 0.5, -0.3, 2.0, 1.1];
        let s: Vec<f64> = t.iter().map(|&v: &f64| (3.0 * v).exp() + v).collect();
        let c = spearman_corr(&s, &t, 1e-3).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_student_is_degenerate() {
        let err = spearman_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::DegenerateRanks(_)));
    }

    #[test]
    fn degenerate_error_names_level() {
        let s = FeaturePyramid::new(vec![
            FeatureMap::from_fn([1, 1, 2, 2], |i| i as f64).unwrap(),
            FeatureMap::from_fn([1, 1, 2, 2], |_| 3.0).unwrap(),
        ])
        .unwrap();
        let t = FeaturePyramid::new(vec![
            FeatureMap::from_fn([1, 1, 2, 2], |i| i as f64).unwrap(),
            FeatureMap::from_fn([1, 1, 2, 2], |i| i as f64).unwrap(),
        ])
        .unwrap();
        let err = spearman_loss(&s, &t, Epsilon::Fixed(0.1), PoolTarget::DEFAULT).unwrap_err();
        assert!(err.to_string().contains("level 1"), "{err}");
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let p = level(&[1.0, 2.0]);
        assert!(spearman_loss(&p, &p, Epsilon::Fixed(0.0), PoolTarget::DEFAULT).is_err());
        assert!(spearman_loss(&p, &p, Epsilon::Relative(-1.0), PoolTarget::DEFAULT).is_err());
    }
}
