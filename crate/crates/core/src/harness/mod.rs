//! Synthetic cross-modal distillation experiments.
//!
//! A generated teacher sees a latent scene through a [`ModalityGap`]; a linear
//! student sees the same latent without it and is trained with a chosen
//! combination of distillation losses plus a small probe task.

mod model;
mod scene;
mod train;

pub use model::{
    student_backward, student_forward, ChannelMap, StudentModel, StudentOutput, HEATMAP_HEAD,
    N_HEADS, REGRESSION_HEAD,
};
pub use scene::{
    generate_scene, level_size, teacher_features, Distortion, GapKind, ModalityGap, SceneDims,
    SceneObject, SyntheticScene, AMPLITUDE_RANGE, RADIUS_RANGE,
};
pub use train::{train, Metrics, TraceRow, TrainConfig, TrainReport, TRACE_HEADER};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::losses::{FeaturePyramid, LossSelection};
use crate::stats;

/// Mean over levels and samples of the hard-rank Spearman correlation
/// between flattened student and teacher samples.
pub fn rank_agreement(student: &FeaturePyramid, teacher: &FeaturePyramid) -> Result<f64> {
    student.check_congruent(teacher)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (l, (s, t)) in student.levels().iter().zip(teacher.levels()).enumerate() {
        for b in 0..s.dims()[0] {
            let r = stats::spearman(s.sample(b), t.sample(b)).map_err(|e| {
                Error::Degenerate(format!("rank agreement, level {l}, sample {b}: {e}"))
            })?;
            total += r;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// The eight loss combinations of the ablation table, rows `a` to `h`.
pub const TABLE2_ROWS: [(&str, LossSelection); 8] = [
    ("a", sel(false, false, false)),
    ("b", sel(true, false, false)),
    ("c", sel(false, true, false)),
    ("d", sel(false, false, true)),
    ("e", sel(true, true, false)),
    ("f", sel(true, false, true)),
    ("g", sel(false, true, true)),
    ("h", sel(true, true, true)),
];

const fn sel(sd: bool, scc: bool, od: bool) -> LossSelection {
    LossSelection { sd, scc, od }
}

pub const ALPHA_SWEEP: [f64; 3] = [0.5, 1.0, 2.0];

/// `base` with each ablation row's loss selection.
pub fn table2_preset(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    TABLE2_ROWS
        .iter()
        .map(|&(name, selection)| {
            (
                name.to_string(),
                TrainConfig {
                    selection,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// `base` with each α of [`ALPHA_SWEEP`].
pub fn alpha_preset(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    ALPHA_SWEEP
        .iter()
        .map(|&alpha| {
            (
                format!("alpha_{alpha}"),
                TrainConfig {
                    alpha,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Number of worker threads from `SKD_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("SKD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Trains every config, using up to `threads` threads. Results keep the
/// input order, and each run is independent of scheduling.
pub fn run_many(configs: &[TrainConfig], threads: usize) -> Vec<Result<TrainReport>> {
    let threads = threads.clamp(1, configs.len().max(1));
    if threads == 1 {
        return configs.iter().map(train).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainReport>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let r = train(cfg);
                results.lock().expect("no poisoned lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every run finished"))
        .collect()
}
