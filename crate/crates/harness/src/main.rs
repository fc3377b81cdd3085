use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use cellshape_core::propagation::{AnalyticModel, GainMap};
use cellshape_core::scenario::{generate_synthetic_scenario, ConfigVector};
use cellshape_harness::config::{check_fraction, ExperimentConfig, ProviderConfig, TransferConfig};
use cellshape_harness::experiment::{final_drop_seeds, kpi_gains, run_baseline, run_optimization, write_run_outputs, Experiment, ReportSummary};
use cellshape_harness::output::{write_atomic, write_json, write_with};
use cellshape_harness::transfer::{run_transfer_study, target_experiment, write_transfer_outputs};
use cellshape_harness::{Case, Error, Result};
use cellshape_turbo::Dataset;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Joint antenna tilt and vertical beamwidth optimization.
#[derive(Parser)]
#[command(name = "cellshape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    case: Option<Case>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario as JSON.
    GenerateScenario {
        #[arg(long, default_value_t = 16)]
        n_sites: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_corridors: bool,
        /// Corridor altitude band, e.g. `140,160`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        corridor_heights: Option<Vec<f64>>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Evaluate the uniform baseline configuration.
    Baseline(Common),
    /// Optimize tilts and HPBWs, one run per seed.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Total evaluation budget, initial design included.
        #[arg(long)]
        max_evals: Option<usize>,
    },
    /// Transfer study from the configured scenario to remapped corridor heights.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Evaluations after the initial dataset.
        #[arg(long)]
        max_evals: Option<usize>,
        #[arg(long)]
        target_fraction: Option<f64>,
    },
    /// Evaluate a configuration file (`best_config.json` or a flat vector).
    EvaluateConfig {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: PathBuf,
    },
    /// Sample the analytic propagation model onto a gain map file.
    ExportGainmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10.0)]
        cell_size: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.5, 50.0, 100.0, 150.0])]
        heights: Vec<f64>,
        /// Output file; defaults to `<out-dir>/gainmap.cgm`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &common.out_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(c) = common.case {
        cfg.case = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed_{seed}"))
}

fn optimize(exp: &Experiment) -> Result<()> {
    for &seed in &exp.config.seeds {
        eprintln!("optimize: seed {seed}, {} dims, budget {}", exp.dim(), exp.config.turbo.max_evals);
        let outcome = run_optimization(exp, seed)?;
        let dir = seed_dir(&exp.config.output_dir, seed);
        write_run_outputs(exp, &outcome, &dir)?;
        eprintln!(
            "  best f {:.3} vs baseline {:.3}; outputs in {}",
            outcome.best.objective,
            outcome.baseline.objective,
            dir.display()
        );
    }
    Ok(())
}

fn transfer(exp: &Experiment, budget: Option<usize>, fraction: Option<f64>) -> Result<()> {
    let mut tcfg = exp.config.transfer.clone().unwrap_or_default();
    if let Some(b) = budget {
        tcfg.budget_after_init = b;
    }
    if let Some(f) = fraction {
        check_fraction(f)?;
        tcfg.target_fraction = Some(f);
    }
    let out = &exp.config.output_dir;
    let sources: Vec<(u64, Dataset)> = match &tcfg.source {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            let ds: Dataset = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            ds.validate()?;
            exp.config.seeds.iter().map(|s| (*s, ds.clone())).collect()
        }
        None => exp
            .config
            .seeds
            .iter()
            .map(|&seed| {
                eprintln!("transfer: source run, seed {seed}");
                let outcome = run_optimization(exp, seed)?;
                write_run_outputs(exp, &outcome, &seed_dir(&out.join("source"), seed))?;
                Ok((seed, outcome.target_archive()?))
            })
            .collect::<Result<_>>()?,
    };
    let target = target_experiment(exp, &tcfg)?;
    eprintln!("transfer: target runs for fractions {:?}", tcfg.fractions());
    let study = run_transfer_study(&target, &sources, &tcfg.fractions(), tcfg.budget_after_init, Some(out))?;
    write_transfer_outputs(&study, out)?;
    for r in &study.rows {
        eprintln!(
            "  fraction {:.1} seed {}: final R {:.4e} bps, ratio {}",
            r.target_fraction,
            r.seed,
            r.final_best_rbar_bps,
            r.ratio_to_full.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Split { tilts_deg: Vec<f64>, v_hpbws_deg: Vec<f64> },
    Flat(Vec<f64>),
}

fn evaluate_config(exp: &Experiment, x_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(x_path).map_err(|e| Error::config(format!("{}: {e}", x_path.display())))?;
    let parsed: ConfigFile = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", x_path.display())))?;
    let x = match parsed {
        ConfigFile::Split { mut tilts_deg, v_hpbws_deg } => {
            tilts_deg.extend(v_hpbws_deg);
            ConfigVector(tilts_deg)
        }
        ConfigFile::Flat(v) => ConfigVector(v),
    };
    let evaluator = exp.evaluator()?;
    let seeds = if exp.config.seeds.len() > 1 { exp.config.seeds.clone() } else { final_drop_seeds(exp.config.seeds[0], exp.config.final_drops) };
    let report = evaluator.evaluate_seeds(&x, &seeds)?;
    let baseline = evaluator.evaluate_seeds(&exp.baseline(), &seeds)?;
    let dir = &exp.config.output_dir;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "config": ReportSummary::from(&report),
            "baseline": ReportSummary::from(&baseline),
            "kpi_gains": kpi_gains(&report, &baseline),
        }),
    )?;
    write_with(&dir.join("users.csv"), |w| report.write_csv(w).map_err(std::io::Error::other))?;
    eprintln!("objective {:.3} (baseline {:.3})", report.objective, baseline.objective);
    Ok(())
}

fn export_gainmap(exp: &Experiment, cell_size: f64, heights: Vec<f64>, out: Option<PathBuf>) -> Result<()> {
    let ProviderConfig::Analytic { params } = &exp.config.provider else {
        return Err(Error::config("export-gainmap needs the analytic provider"));
    };
    let model = Arc::new(AnalyticModel::new(&exp.scenario, params.clone())?);
    let map = GainMap::from_provider(model.as_ref(), &exp.scenario, cell_size, heights)?;
    let path = out.unwrap_or_else(|| exp.config.output_dir.join("gainmap.cgm"));
    let mut buf = Vec::new();
    map.write_to(&mut buf)?;
    write_atomic(&path, &buf)?;
    eprintln!("wrote {} ({} antennas, {}x{} cells, {} layers)", path.display(), map.antenna_ids.len(), map.nx, map.ny, map.heights.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateScenario { n_sites, seed, no_corridors, corridor_heights, out_dir } => {
            let mut s = generate_synthetic_scenario(n_sites, seed, !no_corridors)?;
            if let Some(h) = corridor_heights {
                s = s.with_corridor_heights(h[0], h[1])?;
            }
            let path = out_dir.join("scenario.json");
            write_atomic(&path, s.to_json_string()?.as_bytes())?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Baseline(common) => {
            let exp = Experiment::new(load(&common)?)?;
            let report = run_baseline(&exp)?;
            let dir = &exp.config.output_dir;
            write_json(&dir.join("report.json"), &ReportSummary::from(&report))?;
            write_with(&dir.join("users.csv"), |w| report.write_csv(w).map_err(std::io::Error::other))?;
            eprintln!("baseline objective {:.3}, R {:.4e} bps", report.objective, report.geo_mean_rate_bps);
            Ok(())
        }
        Command::Optimize { common, max_evals } => {
            let mut cfg = load(&common)?;
            if let Some(m) = max_evals {
                cfg.turbo.max_evals = m;
            }
            optimize(&Experiment::new(cfg)?)
        }
        Command::Transfer { common, max_evals, target_fraction } => {
            let mut cfg = load(&common)?;
            cfg.transfer.get_or_insert_with(TransferConfig::default);
            transfer(&Experiment::new(cfg)?, max_evals, target_fraction)
        }
        Command::EvaluateConfig { common, x } => evaluate_config(&Experiment::new(load(&common)?)?, &x),
        Command::ExportGainmap { common, cell_size, heights, out } => {
            export_gainmap(&Experiment::new(load(&common)?)?, cell_size, heights, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
