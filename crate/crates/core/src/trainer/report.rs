//! CSV and JSON renderings of training logs.

use std::fmt::Write as _;

use serde::Serialize;

use super::{TrainConfig, TrainLog};
use crate::error::Result;
use crate::losses::TERM_NAMES;
use crate::metrics::{AlignUniform, SpaceMetrics};

/// Decimal rendering with 12 significant digits, in the style of `%.12g`.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

const SPACES: [&str; 4] = ["main", "aux1", "aux2", "inter"];

pub fn csv_header() -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "step".into(),
        "lr".into(),
        "total".into(),
    ];
    cols.extend(TERM_NAMES.iter().map(|s| s.to_string()));
    for s in SPACES {
        for f in ["align", "uniform", "combined"] {
            cols.push(format!("{s}_{f}"));
        }
    }
    cols.join(",")
}

fn spaces(m: &SpaceMetrics) -> [&AlignUniform; 4] {
    [&m.intra[0], &m.intra[1], &m.intra[2], &m.inter]
}

/// One row per optimizer step; metric columns are filled on the last step
/// of each evaluated epoch and left empty elsewhere.
pub fn metrics_csv(log: &TrainLog) -> String {
    let mut out = csv_header();
    out.push('\n');
    for (i, r) in log.steps.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.step,
            fmt_g12(r.lr),
            fmt_g12(r.total)
        );
        for t in r.terms {
            out.push(',');
            if let Some(v) = t {
                out.push_str(&fmt_g12(v));
            }
        }
        let last_of_epoch = log.steps.get(i + 1).is_none_or(|n| n.epoch != r.epoch);
        let eval = last_of_epoch
            .then(|| log.evals.iter().find(|m| m.epoch == r.epoch))
            .flatten();
        match eval {
            Some(m) => {
                for s in spaces(m) {
                    let _ = write!(
                        out,
                        ",{},{},{}",
                        fmt_g12(s.align),
                        fmt_g12(s.uniform),
                        fmt_g12(s.combined)
                    );
                }
            }
            None => out.push_str(&",".repeat(3 * SPACES.len())),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub schema_version: u32,
    pub preset: Option<&'a str>,
    pub intra_align: f64,
    pub intra_uniform: f64,
    pub intra_combined: f64,
    pub inter_align: f64,
    pub inter_uniform: f64,
    pub inter_combined: f64,
    pub final_total_loss: f64,
    pub steps: usize,
    pub metrics: &'a SpaceMetrics,
    pub config: &'a TrainConfig,
}

/// JSON summary built from the last evaluation in `log`.
pub fn summary_json(cfg: &TrainConfig, preset: Option<&str>, log: &TrainLog) -> Result<String> {
    let m = log
        .evals
        .last()
        .ok_or_else(|| crate::Error::Invalid("training log has no evaluation".into()))?;
    let s = Summary {
        schema_version: 1,
        preset,
        intra_align: m.main().align,
        intra_uniform: m.main().uniform,
        intra_combined: m.main().combined,
        inter_align: m.inter.align,
        inter_uniform: m.inter.uniform,
        inter_combined: m.inter.combined,
        final_total_loss: log.steps.last().map_or(f64::NAN, |r| r.total),
        steps: log.steps.len(),
        metrics: m,
        config: cfg,
    };
    Ok(serde_json::to_string_pretty(&s)?)
}
