use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    gaussian_mask, pool_features, FeatureMap, FeaturePyramid, GaussianCenter, GaussianMask,
    HeadPredictionSet, PoolTarget, SpatialMask,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SceneDims {
    fn default() -> Self {
        Self {
            batch: 2,
            channels: 8,
            height: 32,
            width: 32,
        }
    }
}

impl SceneDims {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height < 2 || self.width < 2 {
            return Err(Error::InvalidArgument(format!(
                "invalid scene dimensions {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub batch: usize,
    pub row: usize,
    pub col: usize,
    pub radius: f64,
}

/// Latent signal shared by both modalities, with blob objects on top.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub latent: FeatureMap,
    /// The smooth field before any blob was added.
    pub background: FeatureMap,
    pub objects: Vec<SceneObject>,
    /// Blob amplitude of each object; the probe task regresses these.
    pub labels: Vec<f64>,
}

pub const FIELD_WAVES: usize = 4;
pub const AMPLITUDE_RANGE: (f64, f64) = (2.0, 4.0);
pub const RADIUS_RANGE: (f64, f64) = (1.5, 3.0);
const WHITE_NOISE: f64 = 0.05;

/// Smooth random field (a few low-frequency plane waves per channel plus a
/// little white noise) with `n_objects` Gaussian blobs spread round-robin
/// over the batch.
pub fn generate_scene(seed: u64, dims: SceneDims, n_objects: usize) -> Result<SyntheticScene> {
    dims.validate()?;
    let SceneDims {
        batch: b,
        channels: c,
        height: h,
        width: w,
    } = dims;
    let mut rng = SeededRng::new(seed);
    let mut field = vec![0.0; b * c * h * w];
    let norm = (2.0 / FIELD_WAVES as f64).sqrt();
    for plane in field.chunks_exact_mut(h * w) {
        let waves: Vec<(f64, f64, f64, f64)> = (0..FIELD_WAVES)
            .map(|_| {
                let fu = rng.uniform_range(-2.0, 2.0);
                let fv = rng.uniform_range(-2.0, 2.0);
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                let amp = norm * rng.uniform_range(0.5, 1.5);
                (fu, fv, phase, amp)
            })
            .collect();
        for (p, v) in plane.iter_mut().enumerate() {
            let (u, x) = ((p / w) as f64 / h as f64, (p % w) as f64 / w as f64);
            *v = waves
                .iter()
                .map(|&(fu, fv, ph, a)| a * (std::f64::consts::TAU * (fu * u + fv * x) + ph).cos())
                .sum::<f64>()
                + WHITE_NOISE * rng.normal();
        }
    }
    let background = FeatureMap::new(Tensor::new(vec![b, c, h, w], field.clone())?)?;

    let mut objects = Vec::with_capacity(n_objects);
    let mut labels = Vec::with_capacity(n_objects);
    for k in 0..n_objects {
        let obj = SceneObject {
            batch: k % b,
            row: 1 + rng.below(h - 2).min(h - 2),
            col: 1 + rng.below(w - 2).min(w - 2),
            radius: rng.uniform_range(RADIUS_RANGE.0, RADIUS_RANGE.1),
        };
        let amp = rng.uniform_range(AMPLITUDE_RANGE.0, AMPLITUDE_RANGE.1);
        let loadings: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.5, 1.5)).collect();
        for (ch, load) in loadings.iter().enumerate() {
            let base = (obj.batch * c + ch) * h * w;
            for p in 0..h * w {
                let du = (p / w) as f64 - obj.row as f64;
                let dv = (p % w) as f64 - obj.col as f64;
                let g = (-(du * du + dv * dv) / (2.0 * obj.radius * obj.radius)).exp();
                field[base + p] += amp * load * g;
            }
        }
        objects.push(obj);
        labels.push(amp);
    }
    Ok(SyntheticScene {
        latent: FeatureMap::new(Tensor::new(vec![b, c, h, w], field)?)?,
        background,
        objects,
        labels,
    })
}

impl SyntheticScene {
    pub fn dims(&self) -> [usize; 4] {
        self.latent.dims()
    }

    /// Average-pooled latent for `levels` levels, halving the size each time.
    pub fn pooled_levels(&self, levels: usize) -> Result<Vec<FeatureMap>> {
        let [_, _, h, w] = self.dims();
        (0..levels)
            .map(|l| {
                let target = level_size(h, w, l)?;
                pool_features(&self.latent, target)
            })
            .collect()
    }

    /// Per-sample Gaussian masks at level `l`, centers and radii scaled down.
    pub fn masks_at_level(&self, level: usize) -> Result<Vec<GaussianMask>> {
        let [b, _, h, w] = self.dims();
        let size = level_size(h, w, level)?;
        let scale_h = size.h as f64 / h as f64;
        let scale_w = size.w as f64 / w as f64;
        (0..b)
            .map(|bi| {
                let centers: Vec<GaussianCenter> = self
                    .objects
                    .iter()
                    .filter(|o| o.batch == bi)
                    .map(|o| GaussianCenter {
                        row: ((o.row as f64 + 0.5) * scale_h - 0.5).clamp(0.0, size.h as f64 - 1.0),
                        col: ((o.col as f64 + 0.5) * scale_w - 0.5).clamp(0.0, size.w as f64 - 1.0),
                        sigma: (o.radius * scale_h.max(scale_w)).max(0.5),
                    })
                    .collect();
                gaussian_mask((size.h, size.w), &centers)
            })
            .collect()
    }

    pub fn spatial_mask(&self, level: usize) -> Result<SpatialMask> {
        SpatialMask::stack(&self.masks_at_level(level)?)
    }
}

pub fn level_size(h: usize, w: usize, level: usize) -> Result<PoolTarget> {
    let f = 1usize << level;
    if h / f == 0 || w / f == 0 {
        return Err(Error::InvalidArgument(format!(
            "level {level} of a {h}×{w} map would be empty"
        )));
    }
    Ok(PoolTarget::new(h / f, w / f))
}

/// Strictly increasing, saturating per-channel map `v ↦ gain·tanh(κv)/κ + offset`
/// (`gain·v + offset` when `κ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub gain: f64,
    pub curvature: f64,
    pub offset: f64,
}

impl Distortion {
    pub const IDENTITY: Distortion = Distortion {
        gain: 1.0,
        curvature: 0.0,
        offset: 0.0,
    };

    pub fn apply(&self, v: f64) -> f64 {
        if self.curvature == 0.0 {
            self.gain * v + self.offset
        } else {
            self.gain * (self.curvature * v).tanh() / self.curvature + self.offset
        }
    }
}

/// Transformation separating the teacher's view of the latent from the
/// student's: teacher channel `c` is `distortion[c](latent[permutation[c]])`
/// plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityGap {
    pub permutation: Vec<usize>,
    pub distortions: Vec<Distortion>,
    pub noise: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapKind {
    /// Channel permutation, nonlinear distortion and noise.
    Default,
    /// Nonlinear distortion only.
    Monotone,
    Identity,
}

impl ModalityGap {
    pub fn identity(channels: usize) -> Self {
        Self {
            permutation: (0..channels).collect(),
            distortions: vec![Distortion::IDENTITY; channels],
            noise: 0.0,
            noise_seed: 0,
        }
    }

    pub fn sample(kind: GapKind, channels: usize, rng: &mut SeededRng) -> Self {
        match kind {
            GapKind::Identity => Self::identity(channels),
            GapKind::Monotone | GapKind::Default => {
                let permutation = if kind == GapKind::Default {
                    rng.permutation(channels)
                } else {
                    (0..channels).collect()
                };
                let distortions = (0..channels)
                    .map(|_| Distortion {
                        gain: rng.uniform_range(0.5, 2.0),
                        curvature: rng.uniform_range(0.5, 1.0),
                        offset: rng.uniform_range(-1.0, 1.0),
                    })
                    .collect();
                let noise = if kind == GapKind::Default { 0.05 } else { 0.0 };
                Self {
                    permutation,
                    distortions,
                    noise,
                    noise_seed: rng.next_u64(),
                }
            }
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let mut seen = vec![false; channels];
        if self.permutation.len() != channels || self.distortions.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "modality gap built for {} channels, scene has {channels}",
                self.permutation.len()
            )));
        }
        for &p in &self.permutation {
            if p >= channels || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("gap permutation is not valid".into()));
            }
        }
        if self.distortions.iter().any(|d| !(d.gain > 0.0)) {
            return Err(Error::InvalidArgument("distortion gains must be positive".into()));
        }
        Ok(())
    }

    fn apply(&self, f: &FeatureMap, rng: &mut SeededRng) -> Result<FeatureMap> {
        let [b, c, h, w] = f.dims();
        let hw = h * w;
        let src = f.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ch in 0..c {
                let from = (bi * c + self.permutation[ch]) * hw;
                let to = (bi * c + ch) * hw;
                let d = self.distortions[ch];
                for p in 0..hw {
                    out[to + p] = d.apply(src[from + p]);
                    if self.noise > 0.0 {
                        out[to + p] += self.noise * rng.normal();
                    }
                }
            }
        }
        FeatureMap::new(Tensor::new(vec![b, c, h, w], out)?)
    }
}

/// Frozen teacher outputs: gapped multi-scale features plus heatmap and
/// amplitude-regression heads at full resolution.
pub fn teacher_features(
    scene: &SyntheticScene,
    gap: &ModalityGap,
    levels: usize,
) -> Result<(FeaturePyramid, HeadPredictionSet)> {
    let [b, c, h, w] = scene.dims();
    gap.validate(c)?;
    let mut rng = SeededRng::new(gap.noise_seed);
    let pyramid = FeaturePyramid::new(
        scene
            .pooled_levels(levels)?
            .iter()
            .map(|l| gap.apply(l, &mut rng))
            .collect::<Result<Vec<_>>>()?,
    )?;

    let mut heat = vec![0.0f64; b * h * w];
    let mut reg = vec![0.0f64; b * h * w];
    for (o, &amp) in scene.objects.iter().zip(&scene.labels) {
        for p in 0..h * w {
            let du = (p / w) as f64 - o.row as f64;
            let dv = (p % w) as f64 - o.col as f64;
            let g = (-(du * du + dv * dv) / (2.0 * o.radius * o.radius)).exp();
            let i = o.batch * h * w + p;
            heat[i] = heat[i].max(g);
            reg[i] = reg[i].max(amp * g);
        }
    }
    let heads = HeadPredictionSet::new(vec![
        FeatureMap::new(Tensor::new(vec![b, 1, h, w], heat)?)?,
        FeatureMap::new(Tensor::new(vec![b, 1, h, w], reg)?)?,
    ])?;
    Ok((pyramid, heads))
}
