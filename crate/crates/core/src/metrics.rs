//! Alignment/uniformity diagnostics of an embedding space.
//!
//! Alignment is the mean cosine similarity over positive pairs, uniformity the
//! mean cosine similarity over pairs from different samples, and the combined
//! score is `align - |uniform|`. Intermodal versions average the three
//! pairwise cosines of each cross-modal triplet.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TriBatch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maximum deviation of a row norm from one.
pub const UNIT_TOL: f64 = 1e-6;

/// Above this many rows `intra_uniformity_sampled` is the intended entry point.
pub const EXHAUSTIVE_ROW_LIMIT: usize = 1 << 12;

/// Alignment, uniformity and combined score for one space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignUniform {
    pub align: f64,
    pub uniform: f64,
    pub combined: f64,
}

impl AlignUniform {
    pub fn new(align: f64, uniform: f64) -> Self {
        Self {
            align,
            uniform,
            combined: combined(align, uniform),
        }
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceMetrics {
    /// Intramodal metrics per modality (main, aux1, aux2).
    pub intra: [AlignUniform; 3],
    pub inter: AlignUniform,
    pub batch_id: u64,
    pub epoch: usize,
}

impl SpaceMetrics {
    pub fn evaluate<T: Scalar>(batch: &TriBatch<T>, batch_id: u64, epoch: usize) -> Result<Self> {
        let mut intra = [AlignUniform::new(0.0, 0.0); 3];
        for (slot, z) in intra.iter_mut().zip(&batch.z) {
            *slot = AlignUniform::new(intra_alignment(z)?, intra_uniformity(z)?);
        }
        Ok(Self {
            intra,
            inter: AlignUniform::new(inter_alignment(batch)?, inter_uniformity(batch)?),
            batch_id,
            epoch,
        })
    }

    pub fn main(&self) -> &AlignUniform {
        &self.intra[0]
    }
}

/// `align - |uniform|`.
pub fn combined(align: f64, uniform: f64) -> f64 {
    align - uniform.abs()
}

struct Rows<'a, T> {
    data: &'a [T],
    d: usize,
    n: usize,
}

impl<'a, T: Scalar> Rows<'a, T> {
    fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn dot(&self, i: usize, other: &Rows<'_, T>, j: usize) -> f64 {
        dot(self.row(i), other.row(j))
    }

    fn column_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for i in 0..self.n {
            for (acc, &x) in s.iter_mut().zip(self.row(i)) {
                *acc += x.as_f64();
            }
        }
        s
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.as_f64() * y.as_f64())
        .sum()
}

fn unit_rows<T: Scalar>(z: &Tensor<T>) -> Result<Rows<'_, T>> {
    let [n, d] = *z.shape() else {
        return Err(Error::InvalidShape {
            op: "metrics",
            shape: z.shape().to_vec(),
            reason: "expected a 2B x d matrix",
        });
    };
    if n % 2 != 0 || n == 0 {
        return Err(Error::InvalidShape {
            op: "metrics",
            shape: z.shape().to_vec(),
            reason: "row count must be a positive even number",
        });
    }
    let rows = Rows {
        data: z.data(),
        d,
        n,
    };
    for i in 0..n {
        let norm = dot(rows.row(i), rows.row(i)).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Invalid(format!(
                "row {i} has norm {norm}; metrics need unit-norm embeddings"
            )));
        }
    }
    Ok(rows)
}

/// Mean cosine similarity between the two augmentations of each sample.
pub fn intra_alignment<T: Scalar>(z: &Tensor<T>) -> Result<f64> {
    let r = unit_rows(z)?;
    let b = r.n / 2;
    Ok((0..b).map(|k| r.dot(2 * k, &r, 2 * k + 1)).sum::<f64>() / b as f64)
}

/// Mean cosine similarity over every unordered pair of rows that belong to
/// different samples.
pub fn intra_uniformity<T: Scalar>(z: &Tensor<T>) -> Result<f64> {
    let r = unit_rows(z)?;
    let b = r.n / 2;
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let s = r.column_sum();
    let total_sq: f64 = s.iter().map(|x| x * x).sum();
    let self_sq: f64 = (0..r.n).map(|i| r.dot(i, &r, i)).sum();
    let same_sample: f64 = (0..b).map(|k| r.dot(2 * k, &r, 2 * k + 1)).sum();
    let cross = 0.5 * (total_sq - self_sq) - same_sample;
    let pairs = r.n * (r.n - 1) / 2 - b;
    Ok(cross / pairs as f64)
}

/// Monte Carlo estimate of [`intra_uniformity`] from `pairs` random
/// cross-sample pairs; deterministic in `seed`.
pub fn intra_uniformity_sampled<T: Scalar>(z: &Tensor<T>, pairs: usize, seed: u64) -> Result<f64> {
    let r = unit_rows(z)?;
    if r.n / 2 < 2 {
        return Err(Error::BatchTooSmall(r.n / 2));
    }
    if pairs == 0 {
        return Err(Error::Invalid(
            "sampled uniformity needs at least one pair".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..pairs {
        let picked = sample(&mut rng, r.n, 2);
        let (i, j) = (picked.index(0), picked.index(1));
        if i / 2 == j / 2 {
            // redraw the partner from another sample
            let mut k = rng.random_range(0..r.n - 2);
            if k >= 2 * (i / 2) {
                k += 2;
            }
            acc += r.dot(i, &r, k);
        } else {
            acc += r.dot(i, &r, j);
        }
    }
    Ok(acc / pairs as f64)
}

fn tri_rows<T: Scalar>(batch: &TriBatch<T>) -> Result<[Rows<'_, T>; 3]> {
    Ok([
        unit_rows(&batch.z[0])?,
        unit_rows(&batch.z[1])?,
        unit_rows(&batch.z[2])?,
    ])
}

/// Sum over the `8B` positive triplets of the three pairwise cosines.
fn positive_pair_sum<T: Scalar>(r: &[Rows<'_, T>; 3]) -> f64 {
    let b = r[0].n / 2;
    let mut acc = 0.0;
    for s in 0..b {
        for x in 0..2 {
            for y in 0..2 {
                for w in 0..2 {
                    let (i, j, k) = (2 * s + x, 2 * s + y, 2 * s + w);
                    acc += r[0].dot(i, &r[1], j) + r[0].dot(i, &r[2], k) + r[1].dot(j, &r[2], k);
                }
            }
        }
    }
    acc
}

/// Mean pairwise cosine of the positive cross-modal triplets.
pub fn inter_alignment<T: Scalar>(batch: &TriBatch<T>) -> Result<f64> {
    let r = tri_rows(batch)?;
    let b = r[0].n / 2;
    Ok(positive_pair_sum(&r) / (3.0 * 8.0 * b as f64))
}

/// Mean pairwise cosine of the negative cross-modal triplets, from column sums:
/// summed over all `(2B)^3` triplets, pair `(m, m')` contributes
/// `2B * (sum z^m) . (sum z^m')`.
pub fn inter_uniformity<T: Scalar>(batch: &TriBatch<T>) -> Result<f64> {
    let r = tri_rows(batch)?;
    let n = r[0].n;
    let b = n / 2;
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let s: Vec<Vec<f64>> = r.iter().map(Rows::column_sum).collect();
    let sdot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let all = n as f64 * (sdot(&s[0], &s[1]) + sdot(&s[0], &s[2]) + sdot(&s[1], &s[2]));
    let negatives = 8.0 * ((b * b * b - b) as f64);
    Ok((all - positive_pair_sum(&r)) / (3.0 * negatives))
}
