use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::{student_backward, student_forward, StudentModel, REGRESSION_HEAD};
use super::rank_agreement;
use super::scene::{generate_scene, teacher_features, GapKind, ModalityGap, SceneDims, SyntheticScene};
use crate::error::{Error, Result};
use crate::losses::{
    mask_l1_loss, total_distill_loss, DistillConfig, Epsilon, FeatureMap, FeaturePyramid,
    HeadPredictionSet, LossSelection, PoolTarget, SpatialMask,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    /// Learning rate of the pyramid channel maps.
    pub lr: f64,
    /// Head parameters use `lr · head_lr_scale`.
    pub head_lr_scale: f64,
    pub selection: LossSelection,
    pub alpha: f64,
    pub epsilon: Epsilon,
    pub pool: PoolTarget,
    /// Adds a foreground-masked L1 feature imitation term on every level.
    pub mask_l1: bool,
    pub task_weight: f64,
    pub gap: GapKind,
    pub dims: SceneDims,
    pub levels: usize,
    pub n_objects: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 200,
            lr: 2.0,
            head_lr_scale: 0.005,
            selection: LossSelection::ALL,
            alpha: 1.0,
            epsilon: Epsilon::default(),
            pool: PoolTarget::DEFAULT,
            mask_l1: false,
            task_weight: 0.1,
            gap: GapKind::Default,
            dims: SceneDims::default(),
            levels: 3,
            n_objects: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be a nonnegative finite number, got {}",
                self.lr
            )));
        }
        if !(self.head_lr_scale >= 0.0) || !self.head_lr_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "head learning-rate scale must be a nonnegative finite number, got {}",
                self.head_lr_scale
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be a nonnegative finite number, got {}",
                self.alpha
            )));
        }
        if !(self.task_weight >= 0.0) || !self.task_weight.is_finite() {
            return Err(Error::InvalidArgument("task weight must be nonnegative".into()));
        }
        if self.levels == 0 {
            return Err(Error::InvalidArgument("at least one level is required".into()));
        }
        if self.pool.h == 0 || self.pool.w == 0 {
            return Err(Error::InvalidArgument("pool target must be nonzero".into()));
        }
        self.epsilon.validate()?;
        Ok(())
    }

    fn distill(&self) -> DistillConfig {
        DistillConfig {
            epsilon: self.epsilon,
            pool: self.pool,
            selection: self.selection,
        }
    }
}

/// Losses and metrics of the student at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_scc: Option<f64>,
    pub loss_sd: Option<f64>,
    pub loss_od: Option<f64>,
    pub loss_mask_l1: Option<f64>,
    pub task_loss: f64,
    /// Rank agreement on the training scene.
    pub rank_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rank agreement with the teacher on a held-out scene.
    pub rank_agreement: f64,
    pub train_rank_agreement: f64,
    pub task_loss: f64,
    pub loss_scc: Option<f64>,
    pub loss_sd: Option<f64>,
    pub loss_od: Option<f64>,
    pub loss_mask_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: TrainConfig,
    /// False when no distillation term was active; the distillation loss
    /// fields are then null.
    pub distillation: bool,
    pub initial: Metrics,
    #[serde(rename = "final")]
    pub final_metrics: Metrics,
    pub trace: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "step,loss_total,loss_scc,loss_sd,loss_od,task_loss,rank_agreement";

impl TrainReport {
    /// Per-step CSV trace; absent losses are empty fields.
    pub fn trace_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.trace {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.loss_total,
                opt(r.loss_scc),
                opt(r.loss_sd),
                opt(r.loss_od),
                r.task_loss,
                r.rank_agreement
            )
            .unwrap();
        }
        out
    }

    /// Pretty-printed JSON. Key order follows the struct definitions and
    /// floats print as shortest round-trip strings, so equal reports give
    /// equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything about one scene that stays fixed during training.
struct SceneData {
    inputs: Vec<FeatureMap>,
    teacher: FeaturePyramid,
    teacher_heads: HeadPredictionSet,
    head_mask: SpatialMask,
    level_masks: Vec<SpatialMask>,
    /// `(batch, row, col, label)` for the probe task.
    targets: Vec<(usize, usize, usize, f64)>,
}

impl SceneData {
    fn new(scene: &SyntheticScene, gap: &ModalityGap, levels: usize) -> Result<Self> {
        let (teacher, teacher_heads) = teacher_features(scene, gap, levels)?;
        let level_masks = (0..levels)
            .map(|l| scene.spatial_mask(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs: scene.pooled_levels(levels)?,
            teacher,
            teacher_heads,
            head_mask: level_masks[0].clone(),
            level_masks,
            targets: scene
                .objects
                .iter()
                .zip(&scene.labels)
                .map(|(o, &y)| (o.batch, o.row, o.col, y))
                .collect(),
        })
    }
}

struct Evaluation {
    metrics: Metrics,
    loss_total: f64,
    grad: StudentModel,
}

fn task_loss(heads: &HeadPredictionSet, targets: &[(usize, usize, usize, f64)]) -> Result<(f64, Tensor)> {
    let reg = &heads.heads()[REGRESSION_HEAD];
    let [_, _, h, w] = reg.dims();
    let mut grad = Tensor::zeros(&reg.dims())?;
    if targets.is_empty() {
        return Ok((0.0, grad));
    }
    let n = targets.len() as f64;
    let mut value = 0.0;
    for &(b, row, col, y) in targets {
        let i = (b * h + row) * w + col;
        let d = reg.data()[i] - y;
        value += d * d / n;
        grad.data_mut()[i] += 2.0 * d / n;
    }
    Ok((value, grad))
}

fn evaluate(model: &StudentModel, data: &SceneData, cfg: &TrainConfig, with_grad: bool) -> Result<Evaluation> {
    let out = student_forward(model, &data.inputs)?;
    let total = total_distill_loss(
        &out.pyramid,
        &data.teacher,
        &out.heads,
        &data.teacher_heads,
        &data.head_mask,
        cfg.alpha,
        &cfg.distill(),
    )?;
    let (task, task_grad) = task_loss(&out.heads, &data.targets)?;
    let mut pyramid_grads = total.pyramid_grads;
    let mut head_grads = total.head_grads;
    head_grads[REGRESSION_HEAD].add_scaled(&task_grad, cfg.task_weight)?;
    let mask_l1 = if cfg.mask_l1 {
        let r = mask_l1_loss(&out.pyramid, &data.teacher, &data.level_masks)?;
        for (acc, g) in pyramid_grads.iter_mut().zip(&r.grads) {
            acc.add_scaled(g, 1.0)?;
        }
        Some(r.value)
    } else {
        None
    };
    let loss_total = total.value + cfg.task_weight * task + mask_l1.unwrap_or(0.0);
    let agreement = if loss_total.is_finite() {
        rank_agreement(&out.pyramid, &data.teacher)?
    } else {
        f64::NAN
    };
    let grad = if with_grad && loss_total.is_finite() {
        student_backward(model, &data.inputs, &out, &pyramid_grads, &head_grads)?
    } else {
        StudentModel::zeros(model.channels(), model.levels.len())
    };
    Ok(Evaluation {
        metrics: Metrics {
            rank_agreement: agreement,
            train_rank_agreement: agreement,
            task_loss: task,
            loss_scc: total.scc,
            loss_sd: total.sd,
            loss_od: total.od,
            loss_mask_l1: mask_l1,
        },
        loss_total,
        grad,
    })
}

/// Trains a freshly initialized student with plain SGD.
///
/// The seed fixes the training scene, a held-out evaluation scene, the
/// modality gap and the initial weights. Trace rows are recorded before each
/// update.
pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let root = SeededRng::new(config.seed);
    let scene_seed = root.split(0).next_u64();
    let eval_seed = root.split(1).next_u64();
    let train_scene = generate_scene(scene_seed, config.dims, config.n_objects)?;
    let eval_scene = generate_scene(eval_seed, config.dims, config.n_objects)?;
    let gap = ModalityGap::sample(config.gap, config.dims.channels, &mut root.split(2));
    let mut model = StudentModel::random(config.dims.channels, config.levels, &mut root.split(3));

    let train_data = SceneData::new(&train_scene, &gap, config.levels)?;
    let eval_data = SceneData::new(&eval_scene, &gap, config.levels)?;

    let snapshot = |model: &StudentModel| -> Result<Metrics> {
        let train = evaluate(model, &train_data, config, false)?.metrics;
        let held_out = evaluate(model, &eval_data, config, false)?.metrics;
        Ok(Metrics {
            rank_agreement: held_out.rank_agreement,
            ..train
        })
    };
    let initial = snapshot(&model)?;

    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let e = evaluate(&model, &train_data, config, true).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { step },
            Error::DegenerateRanks(_) | Error::Degenerate(_) if step > 0 => Error::Diverged { step },
            other => other,
        })?;
        if !e.loss_total.is_finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(TraceRow {
            step,
            loss_total: e.loss_total,
            loss_scc: e.metrics.loss_scc,
            loss_sd: e.metrics.loss_sd,
            loss_od: e.metrics.loss_od,
            loss_mask_l1: e.metrics.loss_mask_l1,
            task_loss: e.metrics.task_loss,
            rank_agreement: e.metrics.rank_agreement,
        });
        model.sgd_step(&e.grad, config.lr, config.lr * config.head_lr_scale)?;
        if !model.is_finite() {
            return Err(Error::Diverged { step });
        }
    }
    let final_metrics = snapshot(&model).map_err(|e| match e {
        Error::DegenerateRanks(_) | Error::Degenerate(_) | Error::NonFinite(_) => {
            Error::Diverged { step: config.steps }
        }
        other => other,
    })?;
    if !final_metrics.task_loss.is_finite() {
        return Err(Error::Diverged { step: config.steps });
    }

    Ok(TrainReport {
        seed: config.seed,
        config: config.clone(),
        distillation: config.selection.any() || config.mask_l1,
        initial,
        final_metrics,
        trace,
    })
}
