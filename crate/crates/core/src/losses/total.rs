use super::{
    response_loss, scene_relation_loss, spearman_loss, Epsilon, FeaturePyramid,
    HeadPredictionSet, PoolTarget, SpatialMask,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which distillation terms are active (scene relation, Spearman, object response).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LossSelection {
    pub sd: bool,
    pub scc: bool,
    pub od: bool,
}

impl LossSelection {
    pub const ALL: LossSelection = LossSelection {
        sd: true,
        scc: true,
        od: true,
    };
    pub const NONE: LossSelection = LossSelection {
        sd: false,
        scc: false,
        od: false,
    };

    pub fn any(&self) -> bool {
        self.sd || self.scc || self.od
    }
}

impl Default for LossSelection {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub epsilon: Epsilon,
    pub pool: PoolTarget,
    pub selection: LossSelection,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            pool: PoolTarget::DEFAULT,
            selection: LossSelection::ALL,
        }
    }
}

/// Combined distillation loss with its components.
///
/// Disabled components are `None` and contribute nothing.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub od: Option<f64>,
    pub sd: Option<f64>,
    pub scc: Option<f64>,
    /// One gradient per student pyramid level.
    pub pyramid_grads: Vec<Tensor>,
    /// One gradient per student head.
    pub head_grads: Vec<Tensor>,
}

/// `L_od + L_sd + α·L_scc`.
///
/// The detection task terms are not included; callers add their own task loss.
pub fn total_distill_loss(
    student: &FeaturePyramid,
    teacher: &FeaturePyramid,
    student_heads: &HeadPredictionSet,
    teacher_heads: &HeadPredictionSet,
    mask: &SpatialMask,
    alpha: f64,
    config: &DistillConfig,
) -> Result<TotalLoss> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be a nonnegative finite number, got {alpha}"
        )));
    }
    student.check_congruent(teacher)?;
    student_heads.check_congruent(teacher_heads)?;

    let mut pyramid_grads: Vec<Tensor> = student
        .levels()
        .iter()
        .map(|l| Tensor::zeros(&l.dims()))
        .collect::<Result<_>>()?;
    let mut head_grads: Vec<Tensor> = student_heads
        .heads()
        .iter()
        .map(|h| Tensor::zeros(&h.dims()))
        .collect::<Result<_>>()?;

    let sel = config.selection;
    let od = if sel.od {
        let r = response_loss(student_heads, teacher_heads, mask)?;
        for (acc, g) in head_grads.iter_mut().zip(&r.grads) {
            acc.add_scaled(g, 1.0)?;
        }
        Some(r.value)
    } else {
        None
    };
    let sd = if sel.sd {
        let r = scene_relation_loss(student, teacher, config.pool)?;
        for (acc, g) in pyramid_grads.iter_mut().zip(&r.grads) {
            acc.add_scaled(g, 1.0)?;
        }
        Some(r.value)
    } else {
        None
    };
    let scc = if sel.scc {
        let r = spearman_loss(student, teacher, config.epsilon, config.pool)?;
        for (acc, g) in pyramid_grads.iter_mut().zip(&r.grads) {
            acc.add_scaled(g, alpha)?;
        }
        Some(r.value)
    } else {
        None
    };

    let value = od.unwrap_or(0.0) + sd.unwrap_or(0.0) + alpha * scc.unwrap_or(0.0);
    Ok(TotalLoss {
        value,
        od,
        sd,
        scc,
        pyramid_grads,
        head_grads,
    })
}
