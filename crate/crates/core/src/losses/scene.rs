use super::{pool_features, pool_features_adjoint, sign, FeatureMap, FeaturePyramid, LossResult, PoolTarget};
use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Tensor};

/// `K × K` cosine similarities between feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    k: usize,
    matrix: Vec<f64>,
}

impl SimilarityMap {
    /// Builds the map from explicit vectors; a zero vector has similarity 0
    /// with everything, itself included.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let c = vectors.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if vectors.iter().any(|v| v.len() != c) {
            return Err(Error::ShapeMismatch("vectors differ in length".into()));
        }
        // channel-major C × K, as stored in a feature map
        let k = vectors.len();
        let mut cm = vec![0.0; c * k];
        for (i, v) in vectors.iter().enumerate() {
            for (ch, &x) in v.iter().enumerate() {
                cm[ch * k + i] = x;
            }
        }
        Ok(Self::from_channel_major(&cm, c, k).0)
    }

    fn from_channel_major(data: &[f64], c: usize, k: usize) -> (Self, Unit) {
        let unit = Unit::new(data, c, k);
        let mut matrix = vec![0.0; k * k];
        for i in 0..k {
            let ui = unit.row(i);
            for j in i..k {
                let s = dot(ui, unit.row(j));
                matrix[i * k + j] = s;
                matrix[j * k + i] = s;
            }
        }
        (Self { k, matrix }, unit)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.k + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }
}

/// Unit-normalized feature vectors, pixel-major (`K × C`), with their norms.
struct Unit {
    c: usize,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl Unit {
    fn new(data: &[f64], c: usize, k: usize) -> Self {
        let mut vectors = vec![0.0; k * c];
        let mut norms = vec![0.0; k];
        for i in 0..k {
            let n = (0..c).map(|ch| data[ch * k + i].powi(2)).sum::<f64>().sqrt();
            norms[i] = n;
            if n > 0.0 {
                for ch in 0..c {
                    vectors[i * c + ch] = data[ch * k + i] / n;
                }
            }
        }
        Self { c, vectors, norms }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.c..(i + 1) * self.c]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample similarity maps of the pooled level; `K = P_h · P_w` and the
/// feature vector of pixel `i` is its `C`-dimensional channel column.
pub fn similarity_map(f: &FeatureMap, pool: PoolTarget) -> Result<Vec<SimilarityMap>> {
    let [b, c, h, w] = f.dims();
    let target = pool.clamp_to(h, w);
    let pooled = pool_features(f, target)?;
    let k = target.h * target.w;
    Ok((0..b)
        .map(|bi| SimilarityMap::from_channel_major(pooled.sample(bi), c, k).0)
        .collect())
}

/// Mean over levels and samples of `(1/K²) Σ_ij |S^t_ij − S^s_ij|`.
pub fn scene_relation_loss(
    student: &FeaturePyramid,
    teacher: &FeaturePyramid,
    pool: PoolTarget,
) -> Result<LossResult> {
    student.check_congruent(teacher)?;
    let n_levels = student.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for (s, t) in student.levels().iter().zip(teacher.levels()) {
        let [b, c, h, w] = s.dims();
        let target = pool.clamp_to(h, w);
        let ps = pool_features(s, target)?;
        let pt = pool_features(t, target)?;
        let k = target.h * target.w;
        let weight = 1.0 / (b as f64 * n_levels * (k * k) as f64);
        let mut gpooled = vec![0.0; b * c * k];
        for bi in 0..b {
            let (ss, unit) = SimilarityMap::from_channel_major(ps.sample(bi), c, k);
            let (st, _) = SimilarityMap::from_channel_major(pt.sample(bi), c, k);
            let diffs: Vec<f64> = st
                .matrix
                .iter()
                .zip(&ss.matrix)
                .map(|(a, b)| (a - b).abs())
                .collect();
            value += weight * pairwise_sum(&diffs);

            // ∂L/∂S^s_ij = −w·sign(S^t_ij − S^s_ij); S is symmetric so the
            // gradient on u_i is 2 Σ_j G_ij u_j.
            let g = &mut gpooled[bi * c * k..(bi + 1) * c * k];
            let mut du = vec![0.0; c];
            for i in 0..k {
                if unit.norms[i] == 0.0 {
                    continue;
                }
                du.fill(0.0);
                for j in 0..k {
                    let gij = -weight * sign(st.get(i, j) - ss.get(i, j));
                    if gij != 0.0 {
                        for (d, &u) in du.iter_mut().zip(unit.row(j)) {
                            *d += 2.0 * gij * u;
                        }
                    }
                }
                let ui = unit.row(i);
                let along = dot(ui, &du);
                for ch in 0..c {
                    g[ch * k + i] = (du[ch] - along * ui[ch]) / unit.norms[i];
                }
            }
        }
        let gpooled = Tensor::new(vec![b, c, target.h, target.w], gpooled)?;
        grads.push(pool_features_adjoint(&gpooled, s.dims())?);
    }
    Ok(LossResult { value, grads })
}
