//! Feature- and response-level distillation objectives.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the student tensors. Teacher tensors are treated as constants.

mod mask_l1;
mod pearson;
mod pool;
mod response;
mod scene;
mod spearman;
mod total;

pub use mask_l1::mask_l1_loss;
pub use pearson::pearson_loss;
pub use pool::{pool_features, pool_features_adjoint, PoolTarget};
pub use response::{gaussian_mask, response_loss, GaussianCenter, GaussianMask, SpatialMask};
pub use scene::{scene_relation_loss, similarity_map, SimilarityMap};
pub use spearman::{spearman_corr, spearman_loss, Epsilon, SpearmanCorr};
pub use total::{total_distill_loss, DistillConfig, LossSelection, TotalLoss};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `B × C × H × W` feature tensor with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        tensor.dims4()?;
        if !tensor.is_finite() {
            let i = tensor.data().iter().position(|v| !v.is_finite()).unwrap();
            return Err(Error::NonFinite(i));
        }
        Ok(Self(tensor))
    }

    pub fn from_fn(dims: [usize; 4], f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new(Tensor::from_fn(&dims, f)?)
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::new(Tensor::zeros(&dims)?)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0.dims4().expect("validated at construction")
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Values of sample `b`, laid out `C × H × W`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let [_, c, h, w] = self.dims();
        let n = c * h * w;
        &self.0.data()[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.0.map(f))
    }
}

/// Ordered feature maps, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument(
                "a pyramid needs at least one level".into(),
            ));
        }
        let batch = levels[0].dims()[0];
        if levels.iter().any(|l| l.dims()[0] != batch) {
            return Err(Error::ShapeMismatch(
                "pyramid levels disagree on batch size".into(),
            ));
        }
        Ok(Self { levels })
    }

    pub fn single(level: FeatureMap) -> Self {
        Self {
            levels: vec![level],
        }
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Result<Self> {
        Self::new(
            self.levels
                .iter()
                .map(|l| l.map(f))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Fails unless `other` has the same level count and per-level shapes.
    pub fn check_congruent(&self, other: &FeaturePyramid) -> Result<()> {
        check_congruent(&self.levels, &other.levels, "pyramid level")
    }
}

/// Detection-head outputs; head `k` is `B × C_k × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPredictionSet {
    heads: Vec<FeatureMap>,
}

impl HeadPredictionSet {
    pub fn new(heads: Vec<FeatureMap>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidArgument(
                "a head set needs at least one head".into(),
            ));
        }
        let [b, _, h, w] = heads[0].dims();
        if heads.iter().any(|p| {
            let [b2, _, h2, w2] = p.dims();
            (b2, h2, w2) != (b, h, w)
        }) {
            return Err(Error::ShapeMismatch(
                "heads must share batch and spatial dimensions".into(),
            ));
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[FeatureMap] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn check_congruent(&self, other: &HeadPredictionSet) -> Result<()> {
        check_congruent(&self.heads, &other.heads, "head")
    }
}

fn check_congruent(a: &[FeatureMap], b: &[FeatureMap], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what} count differs: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.dims() != y.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{what} {i}: {:?} vs {:?}",
                x.dims(),
                y.dims()
            )));
        }
    }
    Ok(())
}

/// Loss value and its gradient, one tensor per student input tensor.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

impl LossResult {
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
