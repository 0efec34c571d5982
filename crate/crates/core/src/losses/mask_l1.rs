use super::response::masked_l1;
use super::{FeaturePyramid, LossResult, SpatialMask};
use crate::error::{Error, Result};

/// Foreground-masked L1 feature imitation, summed over levels.
///
/// Level `l` contributes `Σ m_l ⊙ |s_l − t_l| / (C_l · Σ m_l)`, with the mask
/// broadcast over channels (and over the batch for `H × W` masks). A level
/// whose mask is all zeros contributes nothing.
pub fn mask_l1_loss(
    student: &FeaturePyramid,
    teacher: &FeaturePyramid,
    masks: &[SpatialMask],
) -> Result<LossResult> {
    student.check_congruent(teacher)?;
    if masks.len() != student.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} levels",
            masks.len(),
            student.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for ((s, t), m) in student.levels().iter().zip(teacher.levels()).zip(masks) {
        let (v, g) = masked_l1(s, t, m, 1.0)?;
        value += v;
        grads.push(g);
    }
    Ok(LossResult { value, grads })
}
