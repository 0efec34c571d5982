use super::{FeaturePyramid, LossResult};
use crate::error::{Error, Result};
use crate::stats::pearson_with_grad;
use crate::tensor::Tensor;

/// `(1/L) Σ_l (1 − PCC_l)`, the correlation taken per sample over the whole
/// flattened level and averaged over the batch.
///
/// Equivalent to an L2 loss between standardized maps; invariant to any
/// positive affine transform of the student.
pub fn pearson_loss(student: &FeaturePyramid, teacher: &FeaturePyramid) -> Result<LossResult> {
    student.check_congruent(teacher)?;
    let n_levels = student.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for (level, (s, t)) in student.levels().iter().zip(teacher.levels()).enumerate() {
        let [b, ..] = s.dims();
        let weight = 1.0 / (b as f64 * n_levels);
        let mut grad = Vec::with_capacity(s.data().len());
        for bi in 0..b {
            let (r, g) = pearson_with_grad(s.sample(bi), t.sample(bi)).map_err(|e| match e {
                Error::Degenerate(msg) => {
                    Error::Degenerate(format!("level {level}, sample {bi}: {msg}"))
                }
                other => other,
            })?;
            value += weight * (1.0 - r);
            grad.extend(g.into_iter().map(|v| -weight * v));
        }
        grads.push(Tensor::new(s.dims().to_vec(), grad)?);
    }
    Ok(LossResult { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::FeatureMap;

    fn pyr(dims: [usize; 4], f: impl FnMut(usize) -> f64) -> FeaturePyramid {
        FeaturePyramid::single(FeatureMap::from_fn(dims, f).unwrap())
    }

    #[test]
    fn affine_student_has_zero_loss() {
        let t = pyr([2, 2, 3, 3], |i| ((i * 7919) % 31) as f64 * 0.1);
        let s = t.map(|v| 2.5 * v - 4.0).unwrap();
        assert!(pearson_loss(&s, &t).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn negated_student_has_loss_two() {
        let t = pyr([1, 3, 2, 2], |i| (i as f64).sin());
        let s = t.map(|v| -v).unwrap();
        assert!((pearson_loss(&s, &t).unwrap().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_level_is_degenerate() {
        let t = pyr([1, 1, 2, 2], |i| i as f64);
        let s = pyr([1, 1, 2, 2], |_| 1.0);
        assert!(matches!(pearson_loss(&s, &t), Err(Error::Degenerate(_))));
    }
}
