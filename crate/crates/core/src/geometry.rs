//! Squared triangle areas in `d` dimensions and the batched positive/negative
//! triplet sums behind the triangular area loss.
//!
//! Rows `2s` and `2s + 1` of each modality matrix are the two augmentations of
//! sample `s`. A triplet `(i, j, k)` takes row `i` of the main modality, row `j`
//! of the first auxiliary and row `k` of the second; it is positive when all
//! three rows come from the same sample. With `B` samples there are `8B`
//! positive and `8(B^3 - B)` negative triplets.
//!
//! Two evaluation routes exist. [`triplet_area_sums_naive`] enumerates all
//! `(2B)^3` triangles and is the reference. [`triplet_area_sums_fast`] sums
//! over the inner two indices in closed form from per-modality moments:
//!
//! ```text
//! sum_{j,k} Area^2(a, b_j, c_k) = 1/4 [ S_u S_v - tr(U V) ]
//! S_u = sum_j |b_j - a|^2,   U = sum_j (b_j - a)(b_j - a)^T   (same for v, c)
//! ```
//!
//! `U`, `V`, `S_u`, `S_v` expand into the moments of the auxiliary matrices and
//! `a`, so every anchor costs `O(d^2)`. The negative sum is the total minus the
//! directly computed positive sum.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative squared areas down to this value are floating-point noise and are
/// clamped to zero; anything lower is reported as an error.
pub const AREA_CLAMP: f64 = 1e-15;

/// Squared area from edge vectors `u = b - a`, `v = c - a`, without clamping.
pub fn area_sq_raw<T: Scalar>(a: &[T], b: &[T], c: &[T]) -> T {
    let (mut uu, mut vv, mut uv) = (T::zero(), T::zero(), T::zero());
    for ((&ai, &bi), &ci) in a.iter().zip(b).zip(c) {
        let u = bi - ai;
        let v = ci - ai;
        uu += u * u;
        vv += v * v;
        uv += u * v;
    }
    T::lit(0.25) * (uu * vv - uv * uv)
}

fn clamp_area<T: Scalar>(raw: T) -> Result<T> {
    if raw >= T::zero() {
        Ok(raw)
    } else if raw >= -T::lit(AREA_CLAMP) {
        Ok(T::zero())
    } else {
        Err(Error::Domain {
            op: "triangle_area_sq",
            detail: format!("squared area {raw} is negative beyond rounding"),
        })
    }
}

/// `Area^2(a, b, c) = 1/4 (|u|^2 |v|^2 - (u.v)^2)` on plain slices.
pub fn triangle_area_sq_values<T: Scalar>(a: &[T], b: &[T], c: &[T]) -> Result<T> {
    check_vertices(a.len(), b.len(), c.len())?;
    clamp_area(area_sq_raw(a, b, c))
}

fn check_vertices(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::ShapeMismatch {
            op: "triangle_area_sq",
            lhs: vec![a],
            rhs: vec![b, c],
        });
    }
    if a < 2 {
        return Err(Error::InvalidShape {
            op: "triangle_area_sq",
            shape: vec![a],
            reason: "vertices need at least two dimensions",
        });
    }
    Ok(())
}

/// Differentiable squared area of the triangle with vertices `a`, `b`, `c`.
pub fn triangle_area_sq<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
) -> Result<Tensor<T>> {
    for t in [a, b, c] {
        if t.shape().len() != 1 {
            return Err(Error::InvalidShape {
                op: "triangle_area_sq",
                shape: t.shape().to_vec(),
                reason: "vertices must be vectors",
            });
        }
    }
    check_vertices(a.numel(), b.numel(), c.numel())?;
    let u = b.sub(a)?;
    let v = c.sub(a)?;
    let uu = u.pow2()?.sum()?;
    let vv = v.pow2()?.sum()?;
    let uv = u.mul(&v)?.sum()?;
    let raw = uu.mul(&vv)?.sub(&uv.pow2()?)?.mul_scalar(T::lit(0.25))?;
    let v = raw.item()?;
    if v < T::zero() {
        clamp_area(v)?;
        return raw.mul_scalar(T::zero());
    }
    Ok(raw)
}

/// Signed triplet weight for 1-based sample indices: `1/(8B)` on the
/// diagonal, `-1/(8(B^3 - B))` elsewhere.
pub fn alpha<T: Scalar>(i: usize, j: usize, k: usize, batch: usize) -> Result<T> {
    if batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    for idx in [i, j, k] {
        if idx == 0 || idx > batch {
            return Err(Error::Invalid(format!(
                "sample index {idx} outside 1..={batch}"
            )));
        }
    }
    let b = T::from_count(batch);
    let eight = T::lit(8.0);
    if i == j && j == k {
        Ok(T::one() / (eight * b))
    } else {
        Ok(-T::one() / (eight * (b * b * b - b)))
    }
}

/// Number of positive and negative triplets for `batch` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletCounts {
    pub positive: u64,
    pub negative: u64,
}

impl TripletCounts {
    pub fn for_batch(batch: usize) -> Self {
        let b = batch as u64;
        Self {
            positive: 8 * b,
            negative: 8 * (b * b * b - b),
        }
    }
}

/// Result of the naive enumeration.
#[derive(Debug, Clone, Copy)]
pub struct AreaSums<T> {
    pub pos_mean: T,
    pub neg_mean: T,
    /// Counts observed during enumeration.
    pub counts: TripletCounts,
}

impl<T: Scalar> AreaSums<T> {
    pub fn loss(&self) -> T {
        self.pos_mean - self.neg_mean
    }
}

fn batch_dims<T: Scalar>(z1: &Tensor<T>, z2: &Tensor<T>, z3: &Tensor<T>) -> Result<(usize, usize)> {
    let dims = |t: &Tensor<T>| match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::InvalidShape {
            op: "triplet_area_sums",
            shape: t.shape().to_vec(),
            reason: "expected a 2B x d matrix",
        }),
    };
    let (r1, c1) = dims(z1)?;
    for t in [z2, z3] {
        if dims(t)? != (r1, c1) {
            return Err(Error::ShapeMismatch {
                op: "triplet_area_sums",
                lhs: z1.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    if r1 % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "triplet_area_sums",
            shape: z1.shape().to_vec(),
            reason: "row count must be 2B",
        });
    }
    let batch = r1 / 2;
    if batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    Ok((batch, c1))
}

/// Reference evaluation over all `(2B)^3` triplets.
pub fn triplet_area_sums_naive<T: Scalar>(
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    z3: &Tensor<T>,
) -> Result<AreaSums<T>> {
    let (batch, d) = batch_dims(z1, z2, z3)?;
    let n = 2 * batch;
    let (a, b, c) = (z1.data(), z2.data(), z3.data());
    let (mut pos, mut neg) = (T::zero(), T::zero());
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    for i in 0..n {
        let ai = &a[i * d..(i + 1) * d];
        for j in 0..n {
            let bj = &b[j * d..(j + 1) * d];
            for k in 0..n {
                let ck = &c[k * d..(k + 1) * d];
                let area = clamp_area(area_sq_raw(ai, bj, ck))?;
                if i / 2 == j / 2 && j / 2 == k / 2 {
                    pos += area;
                    n_pos += 1;
                } else {
                    neg += area;
                    n_neg += 1;
                }
            }
        }
    }
    let counts = TripletCounts {
        positive: n_pos,
        negative: n_neg,
    };
    Ok(AreaSums {
        pos_mean: pos / T::from_count(n_pos as usize),
        neg_mean: neg / T::from_count(n_neg as usize),
        counts,
    })
}

/// Value and gradient of `pos_mean - neg_mean` by naive enumeration with the
/// hand-derived adjoint of each triangle:
/// `dA/du = 1/2 (|v|^2 u - (u.v) v)`, `dA/dv = 1/2 (|u|^2 v - (u.v) u)`.
///
/// Independent of the autodiff engine; used to cross-check the fast path.
pub fn triplet_area_loss_naive_grad<T: Scalar>(
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    z3: &Tensor<T>,
) -> Result<(T, [Vec<T>; 3])> {
    let (batch, d) = batch_dims(z1, z2, z3)?;
    let n = 2 * batch;
    let counts = TripletCounts::for_batch(batch);
    let w_pos = T::one() / T::from_count(counts.positive as usize);
    let w_neg = -T::one() / T::from_count(counts.negative as usize);
    let (a, b, c) = (z1.data(), z2.data(), z3.data());
    let mut ga = vec![T::zero(); n * d];
    let mut gb = vec![T::zero(); n * d];
    let mut gc = vec![T::zero(); n * d];
    let mut loss = T::zero();
    let half = T::lit(0.5);
    let mut u = vec![T::zero(); d];
    let mut v = vec![T::zero(); d];
    for i in 0..n {
        let ai = &a[i * d..(i + 1) * d];
        for j in 0..n {
            let bj = &b[j * d..(j + 1) * d];
            for k in 0..n {
                let ck = &c[k * d..(k + 1) * d];
                let w = if i / 2 == j / 2 && j / 2 == k / 2 {
                    w_pos
                } else {
                    w_neg
                };
                let (mut uu, mut vv, mut uv) = (T::zero(), T::zero(), T::zero());
                for t in 0..d {
                    u[t] = bj[t] - ai[t];
                    v[t] = ck[t] - ai[t];
                    uu += u[t] * u[t];
                    vv += v[t] * v[t];
                    uv += u[t] * v[t];
                }
                loss += w * T::lit(0.25) * (uu * vv - uv * uv);
                for t in 0..d {
                    let du = w * half * (vv * u[t] - uv * v[t]);
                    let dv = w * half * (uu * v[t] - uv * u[t]);
                    gb[j * d + t] += du;
                    gc[k * d + t] += dv;
                    ga[i * d + t] -= du + dv;
                }
            }
        }
    }
    Ok((loss, [ga, gb, gc]))
}

/// Sufficient statistics of one modality matrix for the fast path.
#[derive(Debug, Clone)]
pub struct ModalityMoments<T> {
    pub count: usize,
    /// `sum_r z_r`, shape `[d]`.
    pub vec_sum: Tensor<T>,
    /// `sum_r z_r z_r^T`, shape `[d, d]`.
    pub gram_sum: Tensor<T>,
    /// `sum_r |z_r|^2`, scalar.
    pub sqnorm_sum: Tensor<T>,
}

impl<T: Scalar> ModalityMoments<T> {
    pub fn from_rows(z: &Tensor<T>) -> Result<Self> {
        let count = match *z.shape() {
            [r, _] => r,
            _ => {
                return Err(Error::InvalidShape {
                    op: "moments",
                    shape: z.shape().to_vec(),
                    reason: "expected a matrix",
                })
            }
        };
        Ok(Self {
            count,
            vec_sum: z.sum_axis(0)?,
            gram_sum: z.transpose()?.matmul(z)?,
            sqnorm_sum: z.pow2()?.sum()?,
        })
    }
}

/// Differentiable positive/negative mean squared areas.
#[derive(Debug, Clone)]
pub struct FastAreaSums<T> {
    pub pos_mean: Tensor<T>,
    pub neg_mean: Tensor<T>,
}

impl<T: Scalar> FastAreaSums<T> {
    /// `pos_mean - neg_mean`.
    pub fn loss(&self) -> Result<Tensor<T>> {
        self.pos_mean.sub(&self.neg_mean)
    }
}

fn row_dot<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    x.mul(y)?.sum_axis(1)
}

fn as_column<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    v.reshape(vec![v.numel(), 1])
}

fn flat<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    v.reshape(vec![v.numel()])
}

/// Moment-factorized evaluation; same contract as the naive route.
pub fn triplet_area_sums_fast<T: Scalar>(
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    z3: &Tensor<T>,
) -> Result<FastAreaSums<T>> {
    let (batch, d) = batch_dims(z1, z2, z3)?;
    let n = 2 * batch;
    let g = z1.graph();

    // Areas are translation invariant; centering on the common centroid
    // shrinks the terms that cancel below. The centroid is a constant so the
    // gradient is unchanged.
    let mut centroid = vec![T::zero(); d];
    for z in [z1, z2, z3] {
        for row in z.data().chunks(d) {
            for (c, &x) in centroid.iter_mut().zip(row) {
                *c += x;
            }
        }
    }
    let inv = T::one() / T::from_count(3 * n);
    let shift: Vec<T> = (0..n)
        .flat_map(|_| centroid.iter().map(move |&c| c * inv))
        .collect();
    let shift = g.constant(vec![n, d], shift)?;
    let a = z1.sub(&shift)?;
    let b = z2.sub(&shift)?;
    let c = z3.sub(&shift)?;

    let mb = ModalityMoments::from_rows(&b)?;
    let mc = ModalityMoments::from_rows(&c)?;
    let nf = T::from_count(n);
    let (p, q) = (&mb.vec_sum, &mc.vec_sum);
    let (pm, qm) = (&mb.gram_sum, &mc.gram_sum);

    let a_sq = a.pow2()?.sum_axis(1)?;
    let a_p = flat(&a.matmul(&as_column(p)?)?)?;
    let a_q = flat(&a.matmul(&as_column(q)?)?)?;
    let a_pq = flat(&a.matmul(&pm.matmul(&as_column(q)?)?)?)?;
    let a_qp = flat(&a.matmul(&qm.matmul(&as_column(p)?)?)?)?;
    let a_pa = row_dot(&a.matmul(pm)?, &a)?;
    let a_qa = row_dot(&a.matmul(qm)?, &a)?;
    let tr_pq = pm.mul(qm)?.sum()?;
    let p_dot_q = p.mul(q)?.sum()?;

    let na_sq = a_sq.mul_scalar(nf)?;
    let s_u = a_p
        .mul_scalar(T::lit(-2.0))?
        .add(&na_sq)?
        .add(&mb.sqnorm_sum)?;
    let s_v = a_q
        .mul_scalar(T::lit(-2.0))?
        .add(&na_sq)?
        .add(&mc.sqnorm_sum)?;

    // tr(UV) per anchor.
    let cross = a_pq.add(&a_qp)?.mul_scalar(T::lit(-2.0))?;
    let quad = a_pa.add(&a_qa)?.mul_scalar(nf)?;
    let pq_terms = a_p
        .mul(&a_q)?
        .add(&a_sq.mul(&p_dot_q)?)?
        .mul_scalar(T::lit(2.0))?;
    let quartic_cross = a_sq.mul(&a_p.add(&a_q)?)?.mul_scalar(T::lit(-2.0) * nf)?;
    let quartic = a_sq.pow2()?.mul_scalar(nf * nf)?;
    let tr_uv = cross
        .add(&quad)?
        .add(&pq_terms)?
        .add(&quartic_cross)?
        .add(&quartic)?
        .add(&tr_pq)?;

    let total = s_u
        .mul(&s_v)?
        .sub(&tr_uv)?
        .sum()?
        .mul_scalar(T::lit(0.25))?;

    let mut ia = Vec::with_capacity(8 * batch);
    let mut ib = Vec::with_capacity(8 * batch);
    let mut ic = Vec::with_capacity(8 * batch);
    for s in 0..batch {
        for x in 0..2 {
            for y in 0..2 {
                for w in 0..2 {
                    ia.push(2 * s + x);
                    ib.push(2 * s + y);
                    ic.push(2 * s + w);
                }
            }
        }
    }
    let pa = a.select_rows(&ia)?;
    let u = b.select_rows(&ib)?.sub(&pa)?;
    let v = c.select_rows(&ic)?.sub(&pa)?;
    let uu = u.pow2()?.sum_axis(1)?;
    let vv = v.pow2()?.sum_axis(1)?;
    let uv = row_dot(&u, &v)?;
    let pos_sum = uu
        .mul(&vv)?
        .sub(&uv.pow2()?)?
        .sum()?
        .mul_scalar(T::lit(0.25))?;
    let neg_sum = total.sub(&pos_sum)?;

    let counts = TripletCounts::for_batch(batch);
    Ok(FastAreaSums {
        pos_mean: pos_sum.div_scalar(T::from_count(counts.positive as usize))?,
        neg_mean: neg_sum.div_scalar(T::from_count(counts.negative as usize))?,
    })
}
