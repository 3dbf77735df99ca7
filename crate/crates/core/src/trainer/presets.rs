//! Named experiment configurations.

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::losses::{InterLoss, LossConfig};
use crate::metrics::AlignUniform;

pub const PRESETS: [&str; 6] = [
    "intra_only",
    "inter_ntxent",
    "inter_triangular",
    "joint_ntxent",
    "joint_triangular",
    "ablate_3a",
];

/// Presets making up the five-row metrics table, in row order.
pub const TABLE1_PRESETS: [(&str, &str); 5] = [
    ("intra_only", "intra/nt_xent"),
    ("inter_ntxent", "inter/nt_xent"),
    ("inter_triangular", "inter/triangular"),
    ("joint_ntxent", "joint/nt_xent"),
    ("joint_triangular", "joint/triangular"),
];

/// Base configuration with seeds offset by `seed_group`.
pub fn base_config(seed_group: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seeds.params = 100 + seed_group;
    cfg.seeds.data = 200 + seed_group;
    cfg.seeds.aug = 300 + seed_group;
    cfg.eval_seed = 900 + seed_group;
    cfg
}

fn loss(intra: bool, inter: InterLoss) -> LossConfig {
    LossConfig {
        intra_enabled: [intra; 3],
        inter_variant: inter,
        ..LossConfig::default()
    }
}

fn with_loss(seed_group: u64, intra: bool, inter: InterLoss) -> TrainConfig {
    let mut cfg = base_config(seed_group);
    cfg.loss = loss(intra, inter);
    if !intra {
        cfg.inter_gate_epochs = 0;
    }
    cfg
}

pub fn preset_config(name: &str, seed_group: u64) -> Result<TrainConfig> {
    Ok(match name {
        "intra_only" => with_loss(seed_group, true, InterLoss::None),
        "inter_ntxent" => with_loss(seed_group, false, InterLoss::NtXentPairwise),
        "inter_triangular" => with_loss(seed_group, false, InterLoss::TriangularArea),
        "joint_ntxent" => with_loss(seed_group, true, InterLoss::NtXentPairwise),
        "joint_triangular" => with_loss(seed_group, true, InterLoss::TriangularArea),
        "ablate_3a" => base_config(seed_group),
        _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
    })
}

/// Rows of the objective ablation grid: (intra on, inter variant).
pub const ABLATION_GRID: [(bool, InterLoss); 7] = [
    (true, InterLoss::None),
    (false, InterLoss::NtXentPairwise),
    (false, InterLoss::TripletMargin),
    (false, InterLoss::TriangularArea),
    (true, InterLoss::NtXentPairwise),
    (true, InterLoss::TripletMargin),
    (true, InterLoss::TriangularArea),
];

pub fn ablation_configs(seed_group: u64) -> Vec<(String, TrainConfig)> {
    ABLATION_GRID
        .iter()
        .map(|&(intra, inter)| {
            let label = format!(
                "{}/{}",
                if intra { "nt_xent" } else { "none" },
                inter.name()
            );
            (label, with_loss(seed_group, intra, inter))
        })
        .collect()
}

/// Final main-encoder and intermodal metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub setting: String,
    pub intra: AlignUniform,
    pub inter: AlignUniform,
    pub final_loss: f64,
}

impl MetricsRow {
    pub fn from_outcome(setting: &str, out: &TrainOutcome) -> Result<Self> {
        let m = out
            .final_metrics()
            .ok_or_else(|| Error::Invalid("run produced no evaluation".into()))?;
        Ok(Self {
            setting: setting.to_string(),
            intra: *m.main(),
            inter: m.inter,
            final_loss: out.log.steps.last().map_or(f64::NAN, |r| r.total),
        })
    }
}

#[derive(Debug, Clone)]
pub enum PresetReport {
    Single {
        config: TrainConfig,
        outcome: Box<TrainOutcome>,
        row: MetricsRow,
    },
    Grid(Vec<MetricsRow>),
}

pub fn run_preset(name: &str, seed_group: u64) -> Result<PresetReport> {
    let cfg = preset_config(name, seed_group)?;
    if name == "ablate_3a" {
        let rows = ablation_configs(seed_group)
            .into_iter()
            .map(|(label, cfg)| MetricsRow::from_outcome(&label, &train(&cfg)?))
            .collect::<Result<Vec<_>>>()?;
        return Ok(PresetReport::Grid(rows));
    }
    let outcome = train(&cfg)?;
    let row = MetricsRow::from_outcome(name, &outcome)?;
    Ok(PresetReport::Single {
        config: cfg,
        outcome: Box::new(outcome),
        row,
    })
}
