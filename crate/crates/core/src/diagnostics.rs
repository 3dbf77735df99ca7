//! Finite-difference sweep over every loss and encoder path, and timing of
//! the two triangular-area routes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::encoders::{embed, init_params, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::{triplet_area_sums_fast, triplet_area_sums_naive};
use crate::gradcheck::{check_gradient, FD_STEP, GRAD_TOL};
use crate::losses::{
    nt_xent_inter_pairwise, nt_xent_intra, total_objective, triangular_area_loss,
    triplet_margin_inter, InterLoss, LossConfig, Modality, TriBatch,
};
use crate::tensor::{Graph, Tensor};
use crate::trainer::{DataConfig, Source};

/// Settings of [`gradient_suite`]. Instance `i` uses batch
/// `batches[i % nb]` and dimension `dims[(i / nb) % nd]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub batches: Vec<usize>,
    pub dims: Vec<usize>,
    /// Instances per operation.
    pub instances: usize,
    /// Report the negative control as an ordinary operation.
    pub inject_fault: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            batches: vec![2, 3, 4],
            dims: vec![4, 8],
            instances: 50,
            inject_fault: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches.is_empty() || self.dims.is_empty() || self.instances == 0 {
            return Err(Error::Config(
                "gradient suite needs batch sizes, dims and instances".into(),
            ));
        }
        if let Some(b) = self.batches.iter().find(|&&b| b < 2) {
            return Err(Error::BatchTooSmall(*b));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config("embedding dims must be positive".into()));
        }
        Ok(())
    }

    fn shape_of(&self, i: usize) -> (usize, usize) {
        let nb = self.batches.len();
        (self.batches[i % nb], self.dims[(i / nb) % self.dims.len()])
    }
}

/// Name of the deliberately wrong backward rule used as a negative control.
pub const FAULT_FIXTURE: &str = "fixture/corrupted_cube";

#[derive(Debug, Clone, Serialize)]
pub struct GradRow {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub worst_batch: usize,
    pub worst_dim: usize,
    /// Whether a large error is the expected outcome.
    pub expect_failure: bool,
}

impl GradRow {
    pub fn passes(&self, tol: f64) -> bool {
        (self.max_rel_err <= tol) != self.expect_failure
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub seed: u64,
    pub tol: f64,
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.passes(self.tol))
    }

    pub fn instances(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !r.expect_failure)
            .map(|r| r.instances)
            .sum()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn split_normalized(x: &Tensor<f64>, batch: usize) -> Result<TriBatch<f64>> {
    let n = 2 * batch;
    let part = |m: usize| -> Result<Tensor<f64>> {
        let idx: Vec<usize> = (m * n..(m + 1) * n).collect();
        x.select_rows(&idx)?.l2_normalize()
    };
    TriBatch::new(part(0)?, part(1)?, part(2)?)
}

fn objective_with(inter: InterLoss) -> impl Fn(&TriBatch<f64>) -> Result<Tensor<f64>> {
    move |b| {
        let cfg = LossConfig {
            inter_variant: inter,
            ..LossConfig::default()
        };
        Ok(total_objective(b, &cfg)?.total)
    }
}

type LossOp = Box<dyn Fn(&TriBatch<f64>) -> Result<Tensor<f64>>>;

fn loss_ops() -> Vec<(String, LossOp)> {
    let tau = LossConfig::default().tau;
    let margin = LossConfig::default().margin;
    let mut ops: Vec<(String, LossOp)> = vec![
        (
            "nt_xent_intra".into(),
            Box::new(move |b| nt_xent_intra(&b.z[Modality::Main.index()], tau)),
        ),
        (
            "nt_xent_inter_pairwise".into(),
            Box::new(move |b| nt_xent_inter_pairwise(b, tau)),
        ),
        (
            "triplet_margin_inter".into(),
            Box::new(move |b| triplet_margin_inter(b, margin)),
        ),
        (
            "triangular_area_loss".into(),
            Box::new(triangular_area_loss),
        ),
    ];
    for inter in [
        InterLoss::None,
        InterLoss::NtXentPairwise,
        InterLoss::TripletMargin,
        InterLoss::TriangularArea,
    ] {
        ops.push((
            format!("total_objective/{}", inter.name()),
            Box::new(objective_with(inter)),
        ));
    }
    ops
}

struct Worst {
    err: f64,
    batch: usize,
    dim: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            err: 0.0,
            batch: 0,
            dim: 0,
        }
    }

    fn record(&mut self, err: f64, batch: usize, dim: usize) {
        if err > self.err || err.is_nan() {
            *self = Self { err, batch, dim };
        }
    }

    fn row(self, op: String, instances: usize, expect_failure: bool) -> GradRow {
        GradRow {
            op,
            instances,
            max_rel_err: self.err,
            worst_batch: self.batch,
            worst_dim: self.dim,
            expect_failure,
        }
    }
}

/// Checks each loss on `instances` random stacked inputs `[3 * 2B, d]`
/// that are split per modality and row-normalized before scoring.
fn loss_rows(cfg: &SuiteConfig) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    for (k, (name, op)) in loss_ops().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(10 + k as u64);
        let mut worst = Worst::new();
        for i in 0..cfg.instances {
            let (batch, dim) = cfg.shape_of(i);
            let x = gaussian(&mut rng, 6 * batch * dim);
            let chk = check_gradient(
                |t: &Tensor<f64>| op(&split_normalized(t, batch)?),
                &x,
                &[6 * batch, dim],
                FD_STEP,
            )?;
            worst.record(chk.max_rel_err, batch, dim);
        }
        rows.push(worst.row(name, cfg.instances, false));
    }
    Ok(rows)
}

fn encoder_path_name(dims: &EncoderDims, m: Modality) -> &'static str {
    use crate::encoders::EncoderKind;
    match dims.kinds[m.index()] {
        EncoderKind::Graph => "encoder/graph",
        EncoderKind::Tokens => "encoder/tokens",
        EncoderKind::Voxels => "encoder/voxels",
        EncoderKind::Continuous { .. } => "encoder/continuous",
    }
}

/// Checks the composite `augment -> encode -> project -> objective` against
/// one parameter tensor per instance, cycling through every tensor of the
/// modality so each appears at least once.
fn encoder_rows(cfg: &SuiteConfig) -> Result<Vec<GradRow>> {
    let families = [
        DataConfig::Molecule {
            min_nodes: 4,
            max_nodes: 7,
            policy: crate::modalities::AugmentPolicy::standard(),
        },
        DataConfig::Latent {
            k: 3,
            view_dims: [6, 5, 4],
            noise_sigma: 0.05,
            augment: crate::modalities::FeatureAugment {
                mask_ratio: 0.2,
                jitter: 0.05,
            },
        },
    ];
    let loss = LossConfig {
        inter_variant: InterLoss::TriangularArea,
        ..LossConfig::default()
    };
    let mut rows = Vec::new();
    for (f, family) in families.iter().enumerate() {
        let source = Source::new(family, cfg.seed)?;
        let modalities: &[Modality] = match family {
            DataConfig::Molecule { .. } => &Modality::ALL,
            DataConfig::Latent { .. } => &[Modality::Main],
        };
        for &m in modalities {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(100 + 10 * f as u64 + m.index() as u64);
            let mut worst = Worst::new();
            let mut path = "";
            for i in 0..cfg.instances {
                let (batch, dim) = cfg.shape_of(i);
                let dims = family.encoder_dims(6, dim);
                path = encoder_path_name(&dims, m);
                let params: EncoderParams<f64> = init_params(rng.random(), dims)?;
                let mut data_rng = ChaCha8Rng::seed_from_u64(rng.random());
                let data = source.draw(batch, &mut data_rng, &mut rng)?;
                let names: Vec<String> = params.names_for(m).map(str::to_string).collect();
                let name = &names[i % names.len()];
                let p = params
                    .get(name)
                    .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
                // Glorot-scale weights keep everything well inside tanh's
                // linear range, so nudge them to exercise curvature too.
                let x: Vec<f64> = p
                    .data
                    .iter()
                    .map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let chk = check_gradient(
                    |t: &Tensor<f64>| {
                        let bound = params.bind_with(t.graph(), name, t)?;
                        let [a, b, c] = Modality::ALL
                            .map(|mm| embed(&bound, mm, data.data[mm.index()].as_input()));
                        Ok(total_objective(&TriBatch::new(a?, b?, c?)?, &loss)?.total)
                    },
                    &x,
                    &p.shape,
                    FD_STEP,
                )?;
                worst.record(chk.max_rel_err, batch, dim);
            }
            rows.push(worst.row(path.to_string(), cfg.instances, false));
        }
    }
    Ok(rows)
}

fn cube(x: f64) -> f64 {
    x * x * x
}

fn wrong_cube_slope(x: f64) -> f64 {
    3.3 * x * x
}

fn fault_row(seed: u64) -> Result<GradRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(999);
    let x = gaussian(&mut rng, 8);
    let chk = check_gradient(
        |t: &Tensor<f64>| t.map(cube, wrong_cube_slope)?.sum(),
        &x,
        &[8],
        FD_STEP,
    )?;
    let mut w = Worst::new();
    w.record(chk.max_rel_err, 0, 8);
    Ok(w.row(FAULT_FIXTURE.to_string(), 1, true))
}

/// Runs the whole sweep, ending with the negative control.
pub fn gradient_suite(cfg: &SuiteConfig) -> Result<GradReport> {
    cfg.validate()?;
    let mut rows = loss_rows(cfg)?;
    rows.extend(encoder_rows(cfg)?);
    let mut control = fault_row(cfg.seed)?;
    control.expect_failure = !cfg.inject_fault;
    rows.push(control);
    Ok(GradReport {
        seed: cfg.seed,
        tol: GRAD_TOL,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub batch: usize,
    pub dim: usize,
    pub reps: usize,
    pub naive_secs: f64,
    pub fast_secs: f64,
    /// Largest relative disagreement of the two loss values over the reps.
    pub max_rel_diff: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.naive_secs / self.fast_secs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub naive_exponent: f64,
    pub fast_exponent: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f64> {
    let mut x = gaussian(rng, rows * dim);
    for r in x.chunks_mut(dim) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    x
}

/// Median wall time of one loss evaluation by each route.
pub fn bench_area(batches: &[usize], dim: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    if batches.len() < 2 || reps == 0 || dim == 0 {
        return Err(Error::Config(
            "bench needs at least two batch sizes, reps >= 1 and d >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &batch in batches {
        if batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let n = 2 * batch;
        let (mut naive, mut fast, mut diff) = (Vec::new(), Vec::new(), 0.0f64);
        for _ in 0..reps {
            let zs = [0, 1, 2].map(|_| unit_rows(&mut rng, n, dim));
            let g = Graph::new();
            let [a, b, c] = zs.map(|z| g.constant(vec![n, dim], z));
            let (a, b, c) = (a?, b?, c?);

            let t0 = Instant::now();
            let slow = triplet_area_sums_naive(&a, &b, &c)?.loss();
            naive.push(t0.elapsed().as_secs_f64());

            let t0 = Instant::now();
            let g = Graph::new();
            let [fa, fb, fc] = [&a, &b, &c].map(|t| g.constant(vec![n, dim], t.data().to_vec()));
            let quick = triplet_area_sums_fast(&fa?, &fb?, &fc?)?.loss()?.item()?;
            fast.push(t0.elapsed().as_secs_f64());

            diff = diff.max((slow - quick).abs() / slow.abs().max(quick.abs()).max(1e-300));
        }
        rows.push(BenchRow {
            batch,
            dim,
            reps,
            naive_secs: median(&mut naive),
            fast_secs: median(&mut fast),
            max_rel_diff: diff,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.batch as f64).collect();
    let naive: Vec<f64> = rows.iter().map(|r| r.naive_secs).collect();
    let fast: Vec<f64> = rows.iter().map(|r| r.fast_secs).collect();
    Ok(BenchReport {
        naive_exponent: loglog_slope(&xs, &naive),
        fast_exponent: loglog_slope(&xs, &fast),
        rows,
    })
}
