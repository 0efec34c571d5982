use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FeatureMap, FeaturePyramid, HeadPredictionSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Per-pixel linear channel map `y = W x + b` (a 1×1 convolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub c_out: usize,
    pub c_in: usize,
    /// Row-major `c_out × c_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ChannelMap {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            weight: vec![0.0; c_out * c_in],
            bias: vec![0.0; c_out],
        }
    }

    pub fn identity(c: usize) -> Self {
        let mut m = Self::zeros(c, c);
        for i in 0..c {
            m.weight[i * c + i] = 1.0;
        }
        m
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let [b, c, h, w] = x.dims();
        if c != self.c_in {
            return Err(Error::ShapeMismatch(format!(
                "channel map expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let hw = h * w;
        let mut out = vec![0.0; b * self.c_out * hw];
        for bi in 0..b {
            let xs = x.sample(bi);
            let ys = &mut out[bi * self.c_out * hw..(bi + 1) * self.c_out * hw];
            for o in 0..self.c_out {
                let y = &mut ys[o * hw..(o + 1) * hw];
                y.fill(self.bias[o]);
                for i in 0..c {
                    let wt = self.weight[o * c + i];
                    for (yv, xv) in y.iter_mut().zip(&xs[i * hw..(i + 1) * hw]) {
                        *yv += wt * xv;
                    }
                }
            }
        }
        FeatureMap::new(Tensor::new(vec![b, self.c_out, h, w], out)?)
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    fn backward(&self, x: &FeatureMap, gy: &[f64], grad: &mut ChannelMap) -> Vec<f64> {
        let [b, c, h, w] = x.dims();
        let hw = h * w;
        let mut gx = vec![0.0; x.data().len()];
        for bi in 0..b {
            let xs = x.sample(bi);
            let gys = &gy[bi * self.c_out * hw..(bi + 1) * self.c_out * hw];
            let gxs = &mut gx[bi * c * hw..(bi + 1) * c * hw];
            for o in 0..self.c_out {
                let g = &gys[o * hw..(o + 1) * hw];
                grad.bias[o] += g.iter().sum::<f64>();
                for i in 0..c {
                    let xi = &xs[i * hw..(i + 1) * hw];
                    grad.weight[o * c + i] += g.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                    let wt = self.weight[o * c + i];
                    for (gv, &gyv) in gxs[i * hw..(i + 1) * hw].iter_mut().zip(g) {
                        *gv += wt * gyv;
                    }
                }
            }
        }
        gx
    }
}

/// Trainable student: one channel map per pyramid level, applied to the
/// pooled latent, and 1-channel linear heads read from the first level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub levels: Vec<ChannelMap>,
    pub heads: Vec<ChannelMap>,
}

/// Index of the heatmap head.
pub const HEATMAP_HEAD: usize = 0;
/// Index of the amplitude-regression (probe) head.
pub const REGRESSION_HEAD: usize = 1;
pub const N_HEADS: usize = 2;

impl StudentModel {
    pub fn zeros(channels: usize, levels: usize) -> Self {
        Self {
            levels: vec![ChannelMap::zeros(channels, channels); levels],
            heads: vec![ChannelMap::zeros(1, channels); N_HEADS],
        }
    }

    /// Identity level maps, zero heads.
    pub fn identity(channels: usize, levels: usize) -> Self {
        Self {
            levels: vec![ChannelMap::identity(channels); levels],
            ..Self::zeros(channels, levels)
        }
    }

    /// Gaussian level weights with variance `1/C`; zero biases and heads.
    pub fn random(channels: usize, levels: usize, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(channels, levels);
        let sd = 1.0 / (channels as f64).sqrt();
        for map in m.levels.iter_mut() {
            for w in &mut map.weight {
                *w = sd * rng.normal();
            }
        }
        m
    }

    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |l| l.c_in)
    }

    pub fn n_params(&self) -> usize {
        self.maps().map(ChannelMap::n_params).sum()
    }

    fn maps(&self) -> impl Iterator<Item = &ChannelMap> {
        self.levels.iter().chain(&self.heads)
    }

    fn maps_mut(&mut self) -> impl Iterator<Item = &mut ChannelMap> {
        self.levels.iter_mut().chain(&mut self.heads)
    }

    /// All parameters in a fixed order (levels then heads; weights then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for m in self.maps() {
            out.extend_from_slice(&m.weight);
            out.extend_from_slice(&m.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DataLength {
                shape: vec![self.n_params()],
                expected: self.n_params(),
                found: params.len(),
            });
        }
        let mut rest = params;
        for m in self.maps_mut() {
            let (w, r) = rest.split_at(m.weight.len());
            m.weight.copy_from_slice(w);
            let (b, r) = r.split_at(m.bias.len());
            m.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &StudentModel, k: f64) -> Result<()> {
        let delta = other.params();
        let mut p = self.params();
        if p.len() != delta.len() {
            return Err(Error::ShapeMismatch("student models differ in shape".into()));
        }
        for (a, d) in p.iter_mut().zip(&delta) {
            *a += k * d;
        }
        self.set_params(&p)
    }

    /// Plain SGD: levels move by `-lr · grad`, heads by `-head_lr · grad`.
    pub fn sgd_step(&mut self, grad: &StudentModel, lr: f64, head_lr: f64) -> Result<()> {
        if grad.levels.len() != self.levels.len() || grad.heads.len() != self.heads.len() {
            return Err(Error::ShapeMismatch("student models differ in shape".into()));
        }
        let groups = self
            .levels
            .iter_mut()
            .zip(&grad.levels)
            .map(|p| (p, lr))
            .chain(self.heads.iter_mut().zip(&grad.heads).map(|p| (p, head_lr)));
        for ((m, g), rate) in groups {
            if m.weight.len() != g.weight.len() || m.bias.len() != g.bias.len() {
                return Err(Error::ShapeMismatch("student models differ in shape".into()));
            }
            for (p, d) in m.weight.iter_mut().chain(&mut m.bias).zip(g.weight.iter().chain(&g.bias)) {
                *p -= rate * d;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.maps()
            .all(|m| m.weight.iter().chain(&m.bias).all(|v| v.is_finite()))
    }

    fn check_inputs(&self, inputs: &[FeatureMap]) -> Result<()> {
        if inputs.len() != self.levels.len() {
            return Err(Error::ShapeMismatch(format!(
                "student has {} levels, input pyramid has {}",
                self.levels.len(),
                inputs.len()
            )));
        }
        Ok(())
    }
}

/// Student outputs together with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct StudentOutput {
    pub pyramid: FeaturePyramid,
    pub heads: HeadPredictionSet,
}

/// Runs the student on the (gap-free) pooled latent levels.
pub fn student_forward(model: &StudentModel, inputs: &[FeatureMap]) -> Result<StudentOutput> {
    model.check_inputs(inputs)?;
    let levels = model
        .levels
        .iter()
        .zip(inputs)
        .map(|(m, x)| m.apply(x))
        .collect::<Result<Vec<_>>>()?;
    let heads = model
        .heads
        .iter()
        .map(|h| h.apply(&levels[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudentOutput {
        pyramid: FeaturePyramid::new(levels)?,
        heads: HeadPredictionSet::new(heads)?,
    })
}

/// Parameter gradient given upstream gradients on every pyramid level and head.
pub fn student_backward(
    model: &StudentModel,
    inputs: &[FeatureMap],
    output: &StudentOutput,
    pyramid_grads: &[Tensor],
    head_grads: &[Tensor],
) -> Result<StudentModel> {
    model.check_inputs(inputs)?;
    if pyramid_grads.len() != model.levels.len() || head_grads.len() != model.heads.len() {
        return Err(Error::ShapeMismatch(
            "gradient count does not match the student".into(),
        ));
    }
    for (g, f) in pyramid_grads.iter().zip(output.pyramid.levels()) {
        g.expect_same_shape(f.tensor())?;
    }
    for (g, f) in head_grads.iter().zip(output.heads.heads()) {
        g.expect_same_shape(f.tensor())?;
    }
    let c = model.channels();
    let mut grad = StudentModel::zeros(c, model.levels.len());
    let first = &output.pyramid.levels()[0];
    let mut g0 = pyramid_grads[0].data().to_vec();
    for ((h, gh), acc) in model.heads.iter().zip(head_grads).zip(grad.heads.iter_mut()) {
        for (gv, d) in g0.iter_mut().zip(h.backward(first, gh.data(), acc)) {
            *gv += d;
        }
    }
    for (l, (m, x)) in model.levels.iter().zip(inputs).enumerate() {
        let gy = if l == 0 { &g0[..] } else { pyramid_grads[l].data() };
        m.backward(x, gy, &mut grad.levels[l]);
    }
    Ok(grad)
}
