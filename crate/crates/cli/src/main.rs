mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use trimodal_core::diagnostics::{bench_area, gradient_suite, SuiteConfig};
use trimodal_core::trainer::presets::{MetricsRow, TABLE1_PRESETS};
use trimodal_core::trainer::report::{fmt_g12, metrics_csv, summary_json};
use trimodal_core::trainer::{run_preset, train, PresetReport};
use trimodal_core::{Error, Result};

use config::{resolve_out, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "trimodal",
    version,
    about = "Trimodal contrastive learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics.csv, summary.json and checkpoint.json.
    Train {
        /// Experiment JSON file.
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed_group: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Batch sizes to cycle through.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Time naive and moment-factorized triangular-area evaluation.
    Bench {
        #[arg(long = "B", value_delimiter = ',', default_value = "8,16,32,64")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the five loss settings and write the metrics table.
    Table1 {
        #[arg(long, default_value = "table1")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed_group: u64,
    },
}

enum Outcome {
    Ok,
    AssertionFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Train {
            config,
            preset,
            seed_group,
            out,
        } => cmd_train(config, preset, seed_group, out),
        Command::Gradcheck {
            seed,
            sizes,
            dims,
            instances,
            out,
            inject_fault,
        } => cmd_gradcheck(
            SuiteConfig {
                seed,
                batches: sizes,
                dims,
                instances,
                inject_fault,
            },
            out,
        ),
        Command::Bench {
            batches,
            d,
            reps,
            seed,
            out,
        } => cmd_bench(&batches, d, reps, seed, out),
        Command::Table1 { out, seed_group } => cmd_table1(&out, seed_group),
    };
    match res {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => ExitCode::from(EXIT_ASSERT),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::BatchTooSmall(_) => EXIT_CONFIG,
        Error::TrainingAbort { .. } | Error::NonFinite { .. } | Error::DegenerateNorm { .. } => {
            EXIT_NUMERIC
        }
        _ => 1,
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn cmd_train(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed_group: u64,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let exp = match (config, preset) {
        (Some(path), _) => ExperimentConfig::load(&path)?,
        (None, Some(p)) => ExperimentConfig::from_preset(&p, seed_group),
        (None, None) => return Err(Error::Config("give a config file or --preset".into())),
    };
    let dir = out
        .or_else(|| exp.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(exp.label()));
    let dir = resolve_out(&dir);
    let started = Instant::now();

    if exp.train.is_none() && exp.preset.as_deref() == Some("ablate_3a") {
        let PresetReport::Grid(rows) = run_preset("ablate_3a", exp.seed_group)? else {
            unreachable!("ablation preset yields a grid");
        };
        fs::create_dir_all(&dir)?;
        write(&dir, "ablation.csv", &rows_csv(&rows))?;
        write(
            &dir,
            "timing.log",
            &format!("elapsed_secs {:.3}\n", started.elapsed().as_secs_f64()),
        )?;
        print!("{}", rows_csv(&rows));
        return Ok(Outcome::Ok);
    }

    let cfg = exp.resolve()?;
    let outcome = train(&cfg)?;
    fs::create_dir_all(&dir)?;
    write(&dir, "metrics.csv", &metrics_csv(&outcome.log))?;
    write(
        &dir,
        "summary.json",
        &summary_json(&cfg, exp.preset.as_deref(), &outcome.log)?,
    )?;
    outcome.params.save(&dir.join("checkpoint.json"))?;
    let resolved = ExperimentConfig {
        output_dir: Some(dir.clone()),
        train: Some(cfg),
        ..exp.clone()
    };
    write(
        &dir,
        "config.json",
        &serde_json::to_string_pretty(&resolved)?,
    )?;
    write(
        &dir,
        "timing.log",
        &format!("elapsed_secs {:.3}\n", started.elapsed().as_secs_f64()),
    )?;
    if let Some(m) = outcome.final_metrics() {
        println!(
            "{}: intra align {:.3} uniform {:.3} | inter align {:.3} uniform {:.3} combined {:.3}",
            exp.label(),
            m.main().align,
            m.main().uniform,
            m.inter.align,
            m.inter.uniform,
            m.inter.combined
        );
    }
    println!("wrote {}", dir.display());
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(cfg: SuiteConfig, out: Option<PathBuf>) -> Result<Outcome> {
    let report = gradient_suite(&cfg)?;
    let mut csv = String::from("op,instances,max_rel_err,worst_batch,worst_dim,status\n");
    for r in &report.rows {
        let status = match (r.passes(report.tol), r.expect_failure) {
            (true, false) => "ok",
            (true, true) => "detected",
            (false, false) => "FAIL",
            (false, true) => "UNDETECTED",
        };
        let _ = writeln!(
            csv,
            "{},{},{:.3e},{},{},{status}",
            r.op, r.instances, r.max_rel_err, r.worst_batch, r.worst_dim
        );
    }
    print!("{csv}");
    if let Some(path) = out {
        fs::write(resolve_out(&path), &csv)?;
    }
    Ok(if report.passes() {
        Outcome::Ok
    } else {
        Outcome::AssertionFailed
    })
}

/// Largest naive/fast disagreement tolerated while benchmarking.
const BENCH_AGREEMENT: f64 = 1e-9;

fn cmd_bench(
    batches: &[usize],
    d: usize,
    reps: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let report = bench_area(batches, d, reps, seed)?;
    let mut csv = String::from("batch,d,reps,naive_secs,fast_secs,speedup,max_rel_diff\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.batch,
            r.dim,
            r.reps,
            fmt_g12(r.naive_secs),
            fmt_g12(r.fast_secs),
            fmt_g12(r.speedup()),
            fmt_g12(r.max_rel_diff)
        );
    }
    print!("{csv}");
    println!(
        "fitted exponent in B: naive {:.3}, fast {:.3}",
        report.naive_exponent, report.fast_exponent
    );
    if let Some(path) = out {
        fs::write(resolve_out(&path), &csv)?;
    }
    Ok(
        if report
            .rows
            .iter()
            .all(|r| r.max_rel_diff <= BENCH_AGREEMENT)
        {
            Outcome::Ok
        } else {
            eprintln!("naive and fast paths disagree beyond {BENCH_AGREEMENT:e}");
            Outcome::AssertionFailed
        },
    )
}

fn rows_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(
        "setting,intra_align,intra_uniform,intra_combined,inter_align,inter_uniform,inter_combined\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.setting,
            fmt_g12(r.intra.align),
            fmt_g12(r.intra.uniform),
            fmt_g12(r.intra.combined),
            fmt_g12(r.inter.align),
            fmt_g12(r.inter.uniform),
            fmt_g12(r.inter.combined)
        );
    }
    s
}

/// Ordering checks on the five-row table; each is `(description, holds)`.
fn table1_checks(rows: &[MetricsRow]) -> Vec<(String, bool)> {
    let find = |label: &str| rows.iter().find(|r| r.setting == label);
    let mut checks = vec![(
        format!("table has 5 rows (got {})", rows.len()),
        rows.len() == 5,
    )];
    if let Some(r) = find("inter/nt_xent") {
        checks.push((
            format!("inter/nt_xent intra_align {:.3} >= 0.95", r.intra.align),
            r.intra.align >= 0.95,
        ));
    }
    if let Some(best) = find("joint/triangular") {
        let top = rows
            .iter()
            .max_by(|a, b| a.inter.combined.total_cmp(&b.inter.combined))
            .map_or("", |r| r.setting.as_str());
        checks.push((
            format!(
                "joint/triangular has the largest inter_combined ({:.3}; largest is {top})",
                best.inter.combined
            ),
            top == "joint/triangular",
        ));
    }
    checks
}

fn cmd_table1(out: &Path, seed_group: u64) -> Result<Outcome> {
    let dir = resolve_out(out);
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for (preset, label) in TABLE1_PRESETS {
        let PresetReport::Single {
            config,
            outcome,
            row,
        } = run_preset(preset, seed_group)?
        else {
            unreachable!("table presets are single runs");
        };
        let sub = dir.join(preset);
        fs::create_dir_all(&sub)?;
        write(&sub, "metrics.csv", &metrics_csv(&outcome.log))?;
        write(
            &sub,
            "summary.json",
            &summary_json(&config, Some(preset), &outcome.log)?,
        )?;
        eprintln!("{label}: done");
        rows.push(MetricsRow {
            setting: label.to_string(),
            ..row
        });
    }
    let csv = rows_csv(&rows);
    write(&dir, "table1.csv", &csv)?;
    print!("{csv}");
    let checks = table1_checks(&rows);
    for (what, ok) in &checks {
        println!("{} {what}", if *ok { "PASS" } else { "FAIL" });
    }
    Ok(if checks.iter().all(|c| c.1) {
        Outcome::Ok
    } else {
        Outcome::AssertionFailed
    })
}
