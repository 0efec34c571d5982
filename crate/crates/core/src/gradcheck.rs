//! Finite-difference verification of every analytic gradient in the crate.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{student_backward, student_forward, StudentModel};
use crate::losses::{
    mask_l1_loss, pearson_loss, pool_features, pool_features_adjoint, response_loss,
    scene_relation_loss, spearman_loss, total_distill_loss, DistillConfig, Epsilon, FeatureMap,
    FeaturePyramid, HeadPredictionSet, LossSelection, PoolTarget, SpatialMask,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradCheckKind {
    Spearman,
    Pearson,
    MaskL1,
    Scene,
    Response,
    Pool,
    Student,
    Total,
}

impl GradCheckKind {
    pub const ALL: [GradCheckKind; 8] = [
        GradCheckKind::Spearman,
        GradCheckKind::Pearson,
        GradCheckKind::MaskL1,
        GradCheckKind::Scene,
        GradCheckKind::Response,
        GradCheckKind::Pool,
        GradCheckKind::Student,
        GradCheckKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheckKind::Spearman => "spearman",
            GradCheckKind::Pearson => "pearson",
            GradCheckKind::MaskL1 => "mask-l1",
            GradCheckKind::Scene => "scene",
            GradCheckKind::Response => "response",
            GradCheckKind::Pool => "pool",
            GradCheckKind::Student => "student",
            GradCheckKind::Total => "total",
        }
    }
}

impl fmt::Display for GradCheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradCheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        GradCheckKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = GradCheckKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown gradient check kind {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub cases: usize,
    /// Upper bound on channels, height and width (at least 2); the batch is
    /// at most 4.
    pub size: usize,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates compared per case (all of them if the input is smaller).
    pub coords_per_case: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            size: 8,
            step: 1e-6,
            coords_per_case: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub kind: GradCheckKind,
    pub cases: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_case: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// A scalar function of a flat parameter vector with its analytic gradient.
struct Case {
    x: Vec<f64>,
    grad: Vec<f64>,
    f: Box<dyn Fn(&[f64]) -> f64>,
}

/// Compares analytic gradients against central differences on `cases` seeded
/// random inputs.
///
/// Each case's error is `max_i |g_i − d_i| / max(‖g‖∞, max_i |d_i|)` over the
/// sampled coordinates `i`, where `g` is the analytic gradient and `d` the
/// finite difference; the report holds the worst case.
pub fn gradcheck(kind: GradCheckKind, config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.size < 2 || config.cases == 0 || !(config.step > 0.0) {
        return Err(Error::InvalidArgument(
            "gradient check needs size ≥ 2, at least one case and a positive step".into(),
        ));
    }
    let root = SeededRng::new(config.seed);
    let mut worst = (0.0f64, 0usize);
    let mut coords_checked = 0;
    for i in 0..config.cases {
        let mut rng = root.split(i as u64);
        let case = build_case(kind, config.size, &mut rng)?;
        let n = case.x.len();
        let coords: Vec<usize> = if n <= config.coords_per_case {
            (0..n).collect()
        } else {
            rng.permutation(n)[..config.coords_per_case].to_vec()
        };
        let mut x = case.x.clone();
        let mut diff: f64 = 0.0;
        let mut scale = case.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for &j in &coords {
            let orig = x[j];
            x[j] = orig + config.step;
            let fp = (case.f)(&x);
            x[j] = orig - config.step;
            let fm = (case.f)(&x);
            x[j] = orig;
            let fd = (fp - fm) / (2.0 * config.step);
            diff = diff.max((fd - case.grad[j]).abs());
            scale = scale.max(fd.abs());
        }
        coords_checked += coords.len();
        let err = if scale > 0.0 { diff / scale } else { diff };
        if !err.is_finite() || err > worst.0 || i == 0 {
            worst = (if err.is_finite() { err } else { f64::INFINITY }, i);
        }
    }
    Ok(GradCheckReport {
        kind,
        cases: config.cases,
        coords_checked,
        max_rel_error: worst.0,
        worst_case: worst.1,
    })
}

struct Dims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
}

fn random_dims(size: usize, rng: &mut SeededRng) -> Dims {
    let mut pick = |hi: usize, lo: usize| lo.min(hi) + rng.below(hi.saturating_sub(lo.min(hi)) + 1);
    Dims {
        b: pick(4, 1),
        c: pick(size, 1),
        h: pick(size, 2),
        w: pick(size, 2),
    }
}

fn random_map(dims: [usize; 4], rng: &mut SeededRng) -> Result<FeatureMap> {
    FeatureMap::new(rng.normal_tensor(&dims)?)
}

/// One or two levels, the second at half resolution when possible.
fn random_pyramid_dims(size: usize, rng: &mut SeededRng) -> Vec<[usize; 4]> {
    let d = random_dims(size, rng);
    let mut levels = vec![[d.b, d.c, d.h, d.w]];
    if rng.below(2) == 1 {
        levels.push([d.b, d.c, (d.h / 2).max(2), (d.w / 2).max(2)]);
    }
    levels
}

fn random_pyramid(dims: &[[usize; 4]], rng: &mut SeededRng) -> Result<FeaturePyramid> {
    FeaturePyramid::new(dims.iter().map(|&d| random_map(d, rng)).collect::<Result<_>>()?)
}

/// At least 2×2 so every pooled sample has more than one entry.
fn random_pool(h: usize, w: usize, rng: &mut SeededRng) -> PoolTarget {
    PoolTarget::new(2 + rng.below(h - 1), 2 + rng.below(w - 1))
}

fn random_mask(b: usize, h: usize, w: usize, rng: &mut SeededRng) -> Result<SpatialMask> {
    let batched = rng.below(2) == 1;
    let shape = if batched { vec![b, h, w] } else { vec![h, w] };
    let t = Tensor::from_fn(&shape, |_| {
        let u = rng.uniform();
        if u < 0.2 {
            0.0
        } else {
            u
        }
    })?;
    // keep at least one positive weight so the loss is not identically zero
    let mut data = t.into_data();
    data[0] = 1.0;
    SpatialMask::new(Tensor::new(shape, data)?)
}

fn flatten(maps: &[FeatureMap]) -> Vec<f64> {
    maps.iter().flat_map(|m| m.data().iter().copied()).collect()
}

fn flatten_tensors(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(x: &[f64], dims: &[[usize; 4]]) -> Vec<FeatureMap> {
    let mut off = 0;
    dims.iter()
        .map(|d| {
            let n: usize = d.iter().product();
            let t = Tensor::new(d.to_vec(), x[off..off + n].to_vec()).expect("sizes agree");
            off += n;
            FeatureMap::new(t).expect("finite perturbation")
        })
        .collect()
}

fn pyramid_case(
    student: FeaturePyramid,
    loss: impl Fn(&FeaturePyramid) -> Result<(f64, Vec<Tensor>)> + 'static,
) -> Result<Case> {
    let dims: Vec<[usize; 4]> = student.levels().iter().map(|l| l.dims()).collect();
    let (_, grads) = loss(&student)?;
    Ok(Case {
        x: flatten(student.levels()),
        grad: flatten_tensors(&grads),
        f: Box::new(move |x| {
            let p = FeaturePyramid::new(unflatten(x, &dims)).expect("same structure");
            loss(&p).expect("loss defined near the base point").0
        }),
    })
}

fn build_case(kind: GradCheckKind, size: usize, rng: &mut SeededRng) -> Result<Case> {
    match kind {
        GradCheckKind::Spearman => {
            let dims = random_pyramid_dims(size, rng);
            let s = random_pyramid(&dims, rng)?;
            let t = random_pyramid(&dims, rng)?;
            let eps = if rng.below(2) == 0 {
                Epsilon::Relative(rng.uniform_range(0.5, 8.0))
            } else {
                Epsilon::Fixed(rng.uniform_range(0.05, 1.0))
            };
            let pool = random_pool(dims[0][2], dims[0][3], rng);
            pyramid_case(s, move |p| {
                let r = spearman_loss(p, &t, eps, pool)?;
                Ok((r.value, r.grads))
            })
        }
        GradCheckKind::Pearson => {
            let dims = random_pyramid_dims(size, rng);
            let s = random_pyramid(&dims, rng)?;
            let t = random_pyramid(&dims, rng)?;
            pyramid_case(s, move |p| {
                let r = pearson_loss(p, &t)?;
                Ok((r.value, r.grads))
            })
        }
        GradCheckKind::MaskL1 => {
            let dims = random_pyramid_dims(size, rng);
            let s = random_pyramid(&dims, rng)?;
            let t = random_pyramid(&dims, rng)?;
            let masks = dims
                .iter()
                .map(|d| random_mask(d[0], d[2], d[3], rng))
                .collect::<Result<Vec<_>>>()?;
            pyramid_case(s, move |p| {
                let r = mask_l1_loss(p, &t, &masks)?;
                Ok((r.value, r.grads))
            })
        }
        GradCheckKind::Scene => {
            let dims = random_pyramid_dims(size, rng);
            let s = random_pyramid(&dims, rng)?;
            let t = random_pyramid(&dims, rng)?;
            let pool = random_pool(dims[0][2], dims[0][3], rng);
            pyramid_case(s, move |p| {
                let r = scene_relation_loss(p, &t, pool)?;
                Ok((r.value, r.grads))
            })
        }
        GradCheckKind::Response => {
            let d = random_dims(size, rng);
            let n_heads = 1 + rng.below(3);
            let head_dims: Vec<[usize; 4]> =
                (0..n_heads).map(|_| [d.b, 1 + rng.below(3), d.h, d.w]).collect();
            let s = head_dims.iter().map(|&hd| random_map(hd, rng)).collect::<Result<Vec<_>>>()?;
            let t = HeadPredictionSet::new(
                head_dims.iter().map(|&hd| random_map(hd, rng)).collect::<Result<_>>()?,
            )?;
            let mask = random_mask(d.b, d.h, d.w, rng)?;
            let (_, grads) = {
                let r = response_loss(&HeadPredictionSet::new(s.clone())?, &t, &mask)?;
                (r.value, r.grads)
            };
            Ok(Case {
                x: flatten(&s),
                grad: flatten_tensors(&grads),
                f: Box::new(move |x| {
                    let heads = HeadPredictionSet::new(unflatten(x, &head_dims)).expect("heads");
                    response_loss(&heads, &t, &mask).expect("response loss").value
                }),
            })
        }
        GradCheckKind::Pool => {
            let d = random_dims(size, rng);
            let dims = [d.b, d.c, d.h, d.w];
            let target = random_pool(d.h, d.w, rng);
            let f = random_map(dims, rng)?;
            let up = rng.normal_tensor(&[d.b, d.c, target.h, target.w])?;
            let grad = pool_features_adjoint(&up, dims)?;
            Ok(Case {
                x: f.data().to_vec(),
                grad: grad.into_data(),
                f: Box::new(move |x| {
                    let m = FeatureMap::new(Tensor::new(dims.to_vec(), x.to_vec()).expect("dims"))
                        .expect("finite");
                    pool_features(&m, target).expect("pool").tensor().dot(&up).expect("dot")
                }),
            })
        }
        GradCheckKind::Student => {
            let levels = 1 + rng.below(3);
            let d = random_dims(size, rng);
            let inputs: Vec<FeatureMap> = (0..levels)
                .map(|l| random_map([d.b, d.c, (d.h >> l).max(1), (d.w >> l).max(1)], rng))
                .collect::<Result<_>>()?;
            let mut model = StudentModel::zeros(d.c, levels);
            model.set_params(&rng.normal_vec(model.n_params()))?;
            let out = student_forward(&model, &inputs)?;
            let up_levels: Vec<Tensor> = out
                .pyramid
                .levels()
                .iter()
                .map(|l| rng.normal_tensor(&l.dims()))
                .collect::<Result<_>>()?;
            let up_heads: Vec<Tensor> = out
                .heads
                .heads()
                .iter()
                .map(|h| rng.normal_tensor(&h.dims()))
                .collect::<Result<_>>()?;
            let grad = student_backward(&model, &inputs, &out, &up_levels, &up_heads)?.params();
            Ok(Case {
                x: model.params(),
                grad,
                f: Box::new(move |x| {
                    let mut m = model.clone();
                    m.set_params(x).expect("parameter count");
                    let o = student_forward(&m, &inputs).expect("forward");
                    let a: f64 = o
                        .pyramid
                        .levels()
                        .iter()
                        .zip(&up_levels)
                        .map(|(l, u)| l.tensor().dot(u).expect("dot"))
                        .sum();
                    let b: f64 = o
                        .heads
                        .heads()
                        .iter()
                        .zip(&up_heads)
                        .map(|(h, u)| h.tensor().dot(u).expect("dot"))
                        .sum();
                    a + b
                }),
            })
        }
        GradCheckKind::Total => {
            let dims = random_pyramid_dims(size, rng);
            let [b, _, h, w] = dims[0];
            let s = random_pyramid(&dims, rng)?;
            let t = random_pyramid(&dims, rng)?;
            let head_dims = vec![[b, 1, h, w], [b, 1, h, w]];
            let sh: Vec<FeatureMap> =
                head_dims.iter().map(|&d| random_map(d, rng)).collect::<Result<_>>()?;
            let th = HeadPredictionSet::new(
                head_dims.iter().map(|&d| random_map(d, rng)).collect::<Result<_>>()?,
            )?;
            let mask = random_mask(b, h, w, rng)?;
            let alpha = rng.uniform_range(0.0, 2.0);
            let config = DistillConfig {
                epsilon: Epsilon::Relative(rng.uniform_range(0.5, 8.0)),
                pool: random_pool(h, w, rng),
                selection: LossSelection::ALL,
            };
            let n_pyr: usize = dims.iter().map(|d| d.iter().product::<usize>()).sum();
            let total = total_distill_loss(
                &s,
                &t,
                &HeadPredictionSet::new(sh.clone())?,
                &th,
                &mask,
                alpha,
                &config,
            )?;
            let mut x = flatten(s.levels());
            x.extend(flatten(&sh));
            let mut grad = flatten_tensors(&total.pyramid_grads);
            grad.extend(flatten_tensors(&total.head_grads));
            Ok(Case {
                x,
                grad,
                f: Box::new(move |x| {
                    let p = FeaturePyramid::new(unflatten(&x[..n_pyr], &dims)).expect("pyramid");
                    let heads =
                        HeadPredictionSet::new(unflatten(&x[n_pyr..], &head_dims)).expect("heads");
                    total_distill_loss(&p, &t, &heads, &th, &mask, alpha, &config)
                        .expect("total loss")
                        .value
                }),
            })
        }
    }
}
