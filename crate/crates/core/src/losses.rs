//! Contrastive objectives: intramodal NT-Xent, the intermodal baselines
//! (pairwise NT-Xent and triplet margin) and the triangular area loss, plus
//! the weighted total objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of each encoder within a [`TriBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Main,
    Aux1,
    Aux2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Main, Modality::Aux1, Modality::Aux2];

    pub fn index(self) -> usize {
        match self {
            Modality::Main => 0,
            Modality::Aux1 => 1,
            Modality::Aux2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Main => "main",
            Modality::Aux1 => "aux1",
            Modality::Aux2 => "aux2",
        }
    }
}

/// Intermodal objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterLoss {
    None,
    NtXentPairwise,
    TripletMargin,
    TriangularArea,
}

impl InterLoss {
    pub const ALL: [InterLoss; 4] = [
        InterLoss::None,
        InterLoss::NtXentPairwise,
        InterLoss::TripletMargin,
        InterLoss::TriangularArea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterLoss::None => "none",
            InterLoss::NtXentPairwise => "nt_xent_pairwise",
            InterLoss::TripletMargin => "triplet_margin",
            InterLoss::TriangularArea => "triangular_area",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_inter: f64,
    pub lambda_main: f64,
    pub margin: f64,
    pub inter_variant: InterLoss,
    /// Intramodal NT-Xent switch per modality, in `Modality::ALL` order.
    pub intra_enabled: [bool; 3],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda_inter: 1.0,
            lambda_main: 1.0,
            margin: 1.0,
            inter_variant: InterLoss::TriangularArea,
            intra_enabled: [true; 3],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("lambda_inter", self.lambda_inter),
            ("lambda_main", self.lambda_main),
            ("margin", self.margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !self.intra_enabled.iter().any(|&e| e) && self.inter_variant == InterLoss::None {
            return Err(Error::Config("every loss term is disabled".into()));
        }
        Ok(())
    }
}

/// Joint embeddings of one augmented batch: three `2B x d` matrices whose rows
/// `2s`, `2s + 1` are the two augmentations of sample `s`.
#[derive(Debug, Clone)]
pub struct TriBatch<T> {
    pub z: [Tensor<T>; 3],
    pub batch: usize,
}

impl<T: Scalar> TriBatch<T> {
    pub fn new(main: Tensor<T>, aux1: Tensor<T>, aux2: Tensor<T>) -> Result<Self> {
        let shape = main.shape().to_vec();
        let [rows, _] = shape[..] else {
            return Err(Error::InvalidShape {
                op: "tri_batch",
                shape,
                reason: "expected a 2B x d matrix",
            });
        };
        for t in [&aux1, &aux2] {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "tri_batch",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if rows % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "tri_batch",
                shape,
                reason: "row count must be even",
            });
        }
        Ok(Self {
            z: [main, aux1, aux2],
            batch: rows / 2,
        })
    }

    pub fn get(&self, m: Modality) -> &Tensor<T> {
        &self.z[m.index()]
    }

    pub fn dim(&self) -> usize {
        self.z[0].shape()[1]
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must be positive, got {tau}")))
    }
}

fn rows_of<T: Scalar>(z: &Tensor<T>, op: &'static str) -> Result<usize> {
    match *z.shape() {
        [r, _] => Ok(r),
        _ => Err(Error::InvalidShape {
            op,
            shape: z.shape().to_vec(),
            reason: "expected a matrix",
        }),
    }
}

/// Scaled cosine similarities `cos(x_i, y_k) / tau - 1 / tau`.
///
/// The constant shift keeps every exponent non-positive and cancels between
/// the positive logit and the log-denominator.
fn shifted_logits<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    let xn = x.l2_normalize()?;
    let yn = y.l2_normalize()?;
    let inv = T::one() / tau;
    xn.matmul(&yn.transpose()?)?
        .mul_scalar(inv)?
        .sub_scalar(inv)
}

/// Mean over anchors of `-logit[i, pos(i)] + log sum_k mask[i, k] exp(logit[i, k])`.
fn cross_entropy_rows<T: Scalar>(
    logits: &Tensor<T>,
    positive: &[usize],
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let n = logits.shape()[1];
    let mut e = logits.exp()?;
    if let Some(mask) = mask {
        e = e.mul(mask)?;
    }
    let log_denom = e.sum_axis(1)?.log()?;
    let flat_index: Vec<usize> = positive
        .iter()
        .enumerate()
        .map(|(i, &p)| i * n + p)
        .collect();
    let pos = logits
        .reshape(vec![logits.numel()])?
        .select_rows(&flat_index)?;
    log_denom.sub(&pos)?.mean()
}

/// Intramodal NT-Xent with cosine similarity.
///
/// For anchor `i` with positive `j` (the other augmentation of the same
/// sample), `l(i, j) = -log( exp(sim_ij / tau) / sum_{m != i} exp(sim_im / tau) )`;
/// the loss averages `l` over all `2B` anchors.
pub fn nt_xent_intra<T: Scalar>(z: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    check_tau(tau)?;
    let n = rows_of(z, "nt_xent_intra")?;
    if n < 4 || n % 2 != 0 {
        return Err(Error::Invalid(format!(
            "nt_xent_intra needs 2B >= 4 rows, got {n}"
        )));
    }
    let logits = shifted_logits(z, z, tau)?;
    let mut mask = vec![T::one(); n * n];
    for i in 0..n {
        mask[i * n + i] = T::zero();
    }
    let mask = z.graph().constant(vec![n, n], mask)?;
    let positive: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
    cross_entropy_rows(&logits, &positive, Some(&mask))
}

/// NT-Xent across one ordered modality pair: row `i` of `x` is positive with
/// row `i` of `y`, every other row of `y` is a negative. Symmetrized.
fn nt_xent_cross<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    let n = rows_of(x, "nt_xent_inter_pairwise")?;
    let logits = shifted_logits(x, y, tau)?;
    let diag: Vec<usize> = (0..n).collect();
    let forward = cross_entropy_rows(&logits, &diag, None)?;
    let backward = cross_entropy_rows(&logits.transpose()?, &diag, None)?;
    forward.add(&backward)?.mul_scalar(T::lit(0.5))
}

/// Mean of symmetric NT-Xent over the pairs (main, aux1), (main, aux2),
/// (aux1, aux2).
pub fn nt_xent_inter_pairwise<T: Scalar>(batch: &TriBatch<T>, tau: T) -> Result<Tensor<T>> {
    check_tau(tau)?;
    if batch.batch < 2 {
        return Err(Error::BatchTooSmall(batch.batch));
    }
    let [m, a1, a2] = &batch.z;
    let l01 = nt_xent_cross(m, a1, tau)?;
    let l02 = nt_xent_cross(m, a2, tau)?;
    let l12 = nt_xent_cross(a1, a2, tau)?;
    l01.add(&l02)?.add(&l12)?.div_scalar(T::lit(3.0))
}

/// Row of the cyclic negative for row `row`: same augmentation slot of the
/// next sample.
pub fn cyclic_negative(row: usize, batch: usize) -> usize {
    ((row / 2 + 1) % batch) * 2 + row % 2
}

fn row_distance<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    x.sub(y)?.pow2()?.sum_axis(1)?.sqrt()
}

/// Triplet margin with the main modality as anchor. For each auxiliary
/// modality the positive is the matching row and the negative the cyclic
/// next-sample row; `mean max(0, |a - p| - |a - n| + margin)`, averaged over
/// both auxiliary modalities.
pub fn triplet_margin_inter<T: Scalar>(batch: &TriBatch<T>, margin: T) -> Result<Tensor<T>> {
    if batch.batch < 2 {
        return Err(Error::BatchTooSmall(batch.batch));
    }
    if margin < T::zero() {
        return Err(Error::Config(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    let n = 2 * batch.batch;
    let neg_index: Vec<usize> = (0..n).map(|r| cyclic_negative(r, batch.batch)).collect();
    let anchor = batch.get(Modality::Main);
    let mut parts = Vec::with_capacity(2);
    for aux in [Modality::Aux1, Modality::Aux2] {
        let pos = batch.get(aux);
        let neg = pos.select_rows(&neg_index)?;
        let hinge = row_distance(anchor, pos)?
            .sub(&row_distance(anchor, &neg)?)?
            .add_scalar(margin)?
            .relu()?
            .mean()?;
        parts.push(hinge);
    }
    parts[0].add(&parts[1])?.mul_scalar(T::lit(0.5))
}

/// `E[Area^2 | positive] - E[Area^2 | negative]` over main/aux1/aux2 triplets.
pub fn triangular_area_loss<T: Scalar>(batch: &TriBatch<T>) -> Result<Tensor<T>> {
    let [m, a1, a2] = &batch.z;
    geometry::triplet_area_sums_fast(m, a1, a2)?.loss()
}

/// Intermodal term selected by `variant`; `None` for [`InterLoss::None`].
pub fn inter_loss<T: Scalar>(
    batch: &TriBatch<T>,
    variant: InterLoss,
    cfg: &LossConfig,
) -> Result<Option<Tensor<T>>> {
    Ok(match variant {
        InterLoss::None => None,
        InterLoss::NtXentPairwise => Some(nt_xent_inter_pairwise(batch, T::lit(cfg.tau))?),
        InterLoss::TripletMargin => Some(triplet_margin_inter(batch, T::lit(cfg.margin))?),
        InterLoss::TriangularArea => Some(triangular_area_loss(batch)?),
    })
}

/// One labeled component of the total objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTerm {
    pub name: String,
    /// Term value before weighting.
    pub raw: f64,
    /// Contribution to the total.
    pub weighted: f64,
}

#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub total: Tensor<T>,
    pub terms: Vec<LossTerm>,
}

/// Column names of every possible loss term, in accumulation order.
pub const TERM_NAMES: [&str; 4] = ["intra_main", "intra_aux1", "intra_aux2", "inter"];

/// `lambda_main L_main + L_aux1 + L_aux2 + lambda_inter L_inter` with disabled
/// terms left out entirely (no value, no gradient path).
pub fn total_objective<T: Scalar>(batch: &TriBatch<T>, cfg: &LossConfig) -> Result<Objective<T>> {
    cfg.validate()?;
    let tau = T::lit(cfg.tau);
    let mut total: Option<Tensor<T>> = None;
    let mut terms = Vec::new();
    let mut accumulate = |name: &str, raw: Tensor<T>, weight: f64| -> Result<()> {
        let weighted = if weight == 1.0 {
            raw.clone()
        } else {
            raw.mul_scalar(T::lit(weight))?
        };
        terms.push(LossTerm {
            name: name.to_string(),
            raw: raw.item()?.as_f64(),
            weighted: weighted.item()?.as_f64(),
        });
        total = Some(match total.take() {
            None => weighted,
            Some(acc) => acc.add(&weighted)?,
        });
        Ok(())
    };
    for m in Modality::ALL {
        if !cfg.intra_enabled[m.index()] {
            continue;
        }
        let weight = if m == Modality::Main {
            cfg.lambda_main
        } else {
            1.0
        };
        if weight == 0.0 {
            continue;
        }
        let raw = nt_xent_intra(batch.get(m), tau)?;
        accumulate(TERM_NAMES[m.index()], raw, weight)?;
    }
    if cfg.lambda_inter != 0.0 {
        if let Some(raw) = inter_loss(batch, cfg.inter_variant, cfg)? {
            accumulate(TERM_NAMES[3], raw, cfg.lambda_inter)?;
        }
    }
    let total = total.ok_or_else(|| Error::Config("every loss term is disabled".into()))?;
    Ok(Objective { total, terms })
}
