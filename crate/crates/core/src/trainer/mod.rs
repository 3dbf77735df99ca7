//! Training loop: augment, encode, score, update.

pub mod data;
pub mod optim;
pub mod presets;
pub mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{embed, init_params, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{total_objective, LossConfig, Modality, TriBatch, TERM_NAMES};
use crate::metrics::SpaceMetrics;
use crate::tensor::Graph;

pub use data::{AugmentedBatch, DataConfig, ModalData, Source};
pub use optim::{adam_step, lr_schedule, AdamState};
pub use presets::{preset_config, run_preset, MetricsRow, PresetReport, PRESETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub params: u64,
    pub data: u64,
    pub aug: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// The intermodal term is left out of the objective before this epoch.
    pub inter_gate_epochs: usize,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub hidden: usize,
    pub joint: usize,
    pub seeds: Seeds,
    pub eval_every: usize,
    pub eval_batch: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            steps_per_epoch: 20,
            lr_init: 5e-4,
            weight_decay: 1e-5,
            warmup_epochs: 10,
            inter_gate_epochs: 5,
            loss: LossConfig::default(),
            data: DataConfig::latent_default(),
            hidden: 32,
            joint: 32,
            seeds: Seeds {
                params: 0,
                data: 1,
                aug: 2,
            },
            eval_every: 10,
            eval_batch: 256,
            eval_seed: 7919,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return fail("epochs and steps_per_epoch must be positive".into());
        }
        if self.inter_gate_epochs > self.epochs || self.warmup_epochs > self.epochs {
            return fail(format!(
                "inter_gate_epochs ({}) and warmup_epochs ({}) must not exceed epochs ({})",
                self.inter_gate_epochs, self.warmup_epochs, self.epochs
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return fail(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.eval_every == 0 || self.eval_batch < 2 {
            return fail("eval_every must be positive and eval_batch >= 2".into());
        }
        self.loss.validate()?;
        self.data.validate()?;
        self.data.encoder_dims(self.hidden, self.joint).validate()?;
        let intra_active = self
            .loss
            .intra_enabled
            .iter()
            .enumerate()
            .any(|(i, &on)| on && (i != 0 || self.loss.lambda_main != 0.0));
        if !intra_active && self.inter_gate_epochs > 0 {
            return fail("inter_gate_epochs must be 0 when no intramodal term is active".into());
        }
        Ok(())
    }
}

/// Loss values recorded for one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    /// Weighted contribution of each term in `TERM_NAMES` order; `None` when
    /// the term was not part of the objective.
    pub terms: [Option<f64>; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<SpaceMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams<f64>,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> Option<&SpaceMetrics> {
        self.log.evals.last()
    }
}

/// The fixed evaluation batch for `cfg`.
pub fn eval_batch(cfg: &TrainConfig) -> Result<AugmentedBatch> {
    let source = Source::new(&cfg.data, cfg.seeds.data)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    aug_rng.set_stream(1);
    source.draw(cfg.eval_batch, &mut data_rng, &mut aug_rng)
}

/// Joint embeddings of an augmented batch on graph `g`.
pub fn embed_batch(
    params: &EncoderParams<f64>,
    g: &Graph<f64>,
    batch: &AugmentedBatch,
) -> Result<TriBatch<f64>> {
    let bound = params.bind(g)?;
    let [a, b, c] = Modality::ALL.map(|m| embed(&bound, m, batch.data[m.index()].as_input()));
    TriBatch::new(a?, b?, c?)
}

pub fn evaluate(
    params: &EncoderParams<f64>,
    batch: &AugmentedBatch,
    batch_id: u64,
    epoch: usize,
) -> Result<SpaceMetrics> {
    let g = Graph::new();
    SpaceMetrics::evaluate(&embed_batch(params, &g, batch)?, batch_id, epoch)
}

fn is_eval_epoch(cfg: &TrainConfig, epoch: usize) -> bool {
    (epoch + 1).is_multiple_of(cfg.eval_every) || epoch + 1 == cfg.epochs
}

/// Runs `epochs * steps_per_epoch` Adam steps and evaluates on the fixed
/// batch every `eval_every` epochs and after the last one.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init_params::<f64>(
        cfg.seeds.params,
        cfg.data.encoder_dims(cfg.hidden, cfg.joint),
    )?;
    let source = Source::new(&cfg.data, cfg.seeds.data)?;
    let eval = eval_batch(cfg)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.data);
    data_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.aug);
    let mut adam = AdamState::new();
    let mut log = TrainLog::default();
    let gated_loss = LossConfig {
        lambda_inter: 0.0,
        ..cfg.loss.clone()
    };
    let mut global = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.epochs, cfg.warmup_epochs, cfg.lr_init);
        let loss_cfg = if epoch < cfg.inter_gate_epochs {
            &gated_loss
        } else {
            &cfg.loss
        };
        for _ in 0..cfg.steps_per_epoch {
            let abort = |e: Error| Error::TrainingAbort {
                epoch,
                step: global,
                detail: e.to_string(),
            };
            let batch = source
                .draw(cfg.batch_size, &mut data_rng, &mut aug_rng)
                .map_err(abort)?;
            let record = train_step(
                &mut params,
                &mut adam,
                &batch,
                loss_cfg,
                lr,
                cfg.weight_decay,
            )
            .map_err(abort)?;
            log.steps.push(StepRecord {
                epoch,
                step: global,
                lr,
                ..record
            });
            global += 1;
        }
        if is_eval_epoch(cfg, epoch) {
            let m = evaluate(&params, &eval, cfg.eval_seed, epoch).map_err(|e| {
                Error::TrainingAbort {
                    epoch,
                    step: global,
                    detail: format!("evaluation failed: {e}"),
                }
            })?;
            log.evals.push(m);
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Forward, backward and one optimizer update. The returned record has
/// `epoch`, `step` and `lr` unset.
pub fn train_step(
    params: &mut EncoderParams<f64>,
    adam: &mut AdamState,
    batch: &AugmentedBatch,
    loss: &LossConfig,
    lr: f64,
    weight_decay: f64,
) -> Result<StepRecord> {
    let g = Graph::new();
    let bound = params.bind(&g)?;
    let [a, b, c] = Modality::ALL.map(|m| embed(&bound, m, batch.data[m.index()].as_input()));
    let tri = TriBatch::new(a?, b?, c?)?;
    let obj = total_objective(&tri, loss)?;
    let total = obj.total.item()?;
    let mut terms = [None; 4];
    for t in &obj.terms {
        let slot = TERM_NAMES
            .iter()
            .position(|n| *n == t.name)
            .ok_or_else(|| Error::Invalid(format!("unexpected loss term {}", t.name)))?;
        terms[slot] = Some(t.weighted);
    }
    if !total.is_finite() {
        return Err(Error::Invalid(format!(
            "non-finite objective, terms {:?}",
            obj.terms
        )));
    }
    let grads = bound.named_grads(&obj.total.backward()?);
    adam_step(params, &grads, adam, lr, weight_decay)
        .map_err(|e| Error::Invalid(format!("{e}; loss terms {:?}", obj.terms)))?;
    Ok(StepRecord {
        epoch: 0,
        step: 0,
        lr: 0.0,
        total,
        terms,
    })
}
