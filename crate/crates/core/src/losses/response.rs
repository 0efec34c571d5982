use super::{sign, FeatureMap, HeadPredictionSet, LossResult};
use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianCenter {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
}

/// Max-combined isotropic Gaussians on an `H × W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMask {
    pub mask: Tensor,
    pub centers: Vec<GaussianCenter>,
}

/// `mask(u, v) = max_k exp(−((u − u_k)² + (v − v_k)²) / (2σ_k²))`.
///
/// An empty center list yields an all-zero mask.
pub fn gaussian_mask(shape: (usize, usize), centers: &[GaussianCenter]) -> Result<GaussianMask> {
    let (h, w) = shape;
    for (k, c) in centers.iter().enumerate() {
        let in_rows = c.row >= 0.0 && c.row <= (h as f64 - 1.0);
        let in_cols = c.col >= 0.0 && c.col <= (w as f64 - 1.0);
        if !in_rows || !in_cols {
            return Err(Error::InvalidArgument(format!(
                "center {k} at ({}, {}) lies outside the {h}×{w} grid",
                c.row, c.col
            )));
        }
        if !(c.sigma > 0.0) || !c.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "center {k} has non-positive sigma {}",
                c.sigma
            )));
        }
    }
    let mask = Tensor::from_fn(&[h, w], |i| {
        let (u, v) = ((i / w) as f64, (i % w) as f64);
        centers
            .iter()
            .map(|c| {
                let d2 = (u - c.row).powi(2) + (v - c.col).powi(2);
                (-d2 / (2.0 * c.sigma * c.sigma)).exp()
            })
            .fold(0.0, f64::max)
    })?;
    Ok(GaussianMask {
        mask,
        centers: centers.to_vec(),
    })
}

/// Nonnegative spatial weights, either shared across the batch (`H × W`) or
/// per sample (`B × H × W`). Always broadcast over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMask {
    weights: Tensor,
}

impl SpatialMask {
    pub fn new(weights: Tensor) -> Result<Self> {
        if !matches!(weights.ndim(), 2 | 3) {
            return Err(Error::ShapeMismatch(format!(
                "mask must be H×W or B×H×W, got {:?}",
                weights.shape()
            )));
        }
        if weights.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "mask weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn ones(h: usize, w: usize) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], 1.0)?)
    }

    /// Stacks per-sample masks into a `B × H × W` mask.
    pub fn stack(masks: &[GaussianMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidArgument("no masks to stack".into()))?;
        let shape = first.mask.shape().to_vec();
        let mut data = Vec::with_capacity(masks.len() * first.mask.len());
        for m in masks {
            if m.mask.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch("masks differ in shape".into()));
            }
            data.extend_from_slice(m.mask.data());
        }
        Self::new(Tensor::new(vec![masks.len(), shape[0], shape[1]], data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.weights
    }

    pub fn spatial(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    fn plane(&self, b: usize) -> &[f64] {
        let (h, w) = self.spatial();
        match self.weights.ndim() {
            2 => self.weights.data(),
            _ => &self.weights.data()[b * h * w..(b + 1) * h * w],
        }
    }

    fn check(&self, dims: [usize; 4]) -> Result<()> {
        let [b, _, h, w] = dims;
        let ok = match self.weights.shape() {
            &[mh, mw] => (mh, mw) == (h, w),
            &[mb, mh, mw] => (mb, mh, mw) == (b, h, w),
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} does not broadcast over {:?}",
                self.weights.shape(),
                dims
            )));
        }
        Ok(())
    }

    /// Total weight after broadcasting over a batch of `b`.
    fn mass(&self, b: usize) -> f64 {
        match self.weights.ndim() {
            2 => b as f64 * self.weights.sum(),
            _ => self.weights.sum(),
        }
    }
}

impl From<GaussianMask> for SpatialMask {
    fn from(m: GaussianMask) -> Self {
        SpatialMask { weights: m.mask }
    }
}

/// `Σ m·|s − t| / (C · Σ m)` with subgradient 0 at equality; zero mask mass
/// gives value 0 and a zero gradient.
pub(crate) fn masked_l1(
    s: &FeatureMap,
    t: &FeatureMap,
    mask: &SpatialMask,
    scale: f64,
) -> Result<(f64, Tensor)> {
    let dims = s.dims();
    if dims != t.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{dims:?} vs {:?}",
            t.dims()
        )));
    }
    mask.check(dims)?;
    let [b, c, h, w] = dims;
    let mass = mask.mass(b);
    let mut grad = vec![0.0; s.data().len()];
    if mass == 0.0 {
        return Ok((0.0, Tensor::new(dims.to_vec(), grad)?));
    }
    let norm = scale / (c as f64 * mass);
    let (sd, td) = (s.data(), t.data());
    let mut terms = Vec::with_capacity(sd.len());
    for bi in 0..b {
        let m = mask.plane(bi);
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for (p, &mp) in m.iter().enumerate() {
                let d = sd[base + p] - td[base + p];
                terms.push(mp * d.abs());
                grad[base + p] = norm * mp * sign(d);
            }
        }
    }
    Ok((norm * pairwise_sum(&terms), Tensor::new(dims.to_vec(), grad)?))
}

/// `(1/N) Σ_k Σ M⊙|p_k^s − p_k^t| / (C_k · Σ M)` over the `N` heads.
pub fn response_loss(
    student: &HeadPredictionSet,
    teacher: &HeadPredictionSet,
    mask: &SpatialMask,
) -> Result<LossResult> {
    student.check_congruent(teacher)?;
    let scale = 1.0 / student.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for (s, t) in student.heads().iter().zip(teacher.heads()) {
        let (v, g) = masked_l1(s, t, mask, scale)?;
        value += v;
        grads.push(g);
    }
    Ok(LossResult { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center(row: f64, col: f64, sigma: f64) -> GaussianCenter {
        GaussianCenter { row, col, sigma }
    }

    #[test]
    fn mask_is_one_at_center() {
        let m = gaussian_mask((7, 9), &[center(3.0, 4.0, 1.5)]).unwrap();
        assert_eq!(m.mask.data()[3 * 9 + 4], 1.0);
        assert!(m.mask.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn half_maximum_distance() {
        // exp(−d²/2σ²) = 1/2 at d = σ√(2 ln 2); pick σ so that d = 3 exactly.
        let sigma = 3.0 / (2.0 * std::f64::consts::LN_2).sqrt();
        let m = gaussian_mask((1, 10), &[center(0.0, 0.0, sigma)]).unwrap();
        assert!((m.mask.data()[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_centers_give_zero_mask() {
        let m = gaussian_mask((3, 4), &[]).unwrap();
        assert!(m.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_or_bad_sigma_rejected() {
        assert!(gaussian_mask((3, 3), &[center(3.0, 0.0, 1.0)]).is_err());
        assert!(gaussian_mask((3, 3), &[center(-0.5, 0.0, 1.0)]).is_err());
        assert!(gaussian_mask((3, 3), &[center(1.0, 1.0, 0.0)]).is_err());
    }

    fn heads(dims: [usize; 4], f: impl FnMut(usize) -> f64) -> HeadPredictionSet {
        HeadPredictionSet::new(vec![FeatureMap::from_fn(dims, f).unwrap()]).unwrap()
    }

    #[test]
    fn single_pixel_head() {
        let s = heads([1, 1, 1, 1], |_| 3.0);
        let t = heads([1, 1, 1, 1], |_| 1.0);
        let l = response_loss(&s, &t, &SpatialMask::ones(1, 1).unwrap()).unwrap();
        assert_eq!(l.value, 2.0);
        assert_eq!(l.grads[0].data(), &[1.0]);
    }

    #[test]
    fn zero_mask_gives_zero_loss_and_gradient() {
        let s = heads([2, 3, 4, 4], |i| i as f64);
        let t = heads([2, 3, 4, 4], |_| 0.5);
        let mask = SpatialMask::new(Tensor::zeros(&[4, 4]).unwrap()).unwrap();
        let l = response_loss(&s, &t, &mask).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let s = heads([1, 1, 4, 4], |_| 0.0);
        let mask = SpatialMask::ones(3, 4).unwrap();
        assert!(matches!(
            response_loss(&s, &s, &mask),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
