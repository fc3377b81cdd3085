//! Source-to-target transfer study: identical BO budgets started from
//! initial datasets with different shares of copied source observations.

use std::io::Write as _;
use std::path::Path;

use cellshape_turbo::Dataset;
use serde::{Deserialize, Serialize};

use crate::config::{check_fraction, TransferConfig};
use crate::error::Result;
use crate::experiment::{run_with, write_run_outputs, CurvePoint, Experiment, RunOptions, RunOutcome};
use crate::output::{write_json, write_with};

/// Target experiment: the source scenario with corridor altitudes remapped.
pub fn target_experiment(source: &Experiment, tcfg: &TransferConfig) -> Result<Experiment> {
    let [lo, hi] = tcfg.target_corridor_heights;
    source.with_scenario(source.scenario.with_corridor_heights(lo, hi)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub target_fraction: f64,
    pub seed: u64,
    pub n_target_initial: usize,
    pub final_best_objective: f64,
    pub final_best_rbar_bps: f64,
    /// Final R of this mix over that of the all-target mix for the same seed.
    pub ratio_to_full: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferStudy {
    pub rows: Vec<TransferRow>,
}

impl TransferStudy {
    pub fn rows_for(&self, fraction: f64) -> impl Iterator<Item = &TransferRow> {
        self.rows.iter().filter(move |r| r.target_fraction == fraction)
    }

    pub fn row(&self, fraction: f64, seed: u64) -> Option<&TransferRow> {
        self.rows.iter().find(|r| r.target_fraction == fraction && r.seed == seed)
    }

    fn fill_ratios(&mut self) {
        let full: Vec<(u64, f64)> =
            self.rows.iter().filter(|r| r.target_fraction == 1.0).map(|r| (r.seed, r.final_best_rbar_bps)).collect();
        for r in &mut self.rows {
            r.ratio_to_full = full.iter().find(|(s, _)| *s == r.seed).map(|(_, f)| r.final_best_rbar_bps / f);
        }
    }
}

/// First iteration whose best-so-far R reaches `level`.
pub fn iterations_to_reach(curve: &[CurvePoint], level: f64) -> Option<usize> {
    curve.iter().find(|p| p.best_rbar_bps.is_some_and(|r| r >= level)).map(|p| p.iteration)
}

pub fn row_from_outcome(outcome: &RunOutcome) -> TransferRow {
    TransferRow {
        target_fraction: outcome.target_fraction,
        seed: outcome.seed,
        n_target_initial: outcome.n_target_initial,
        final_best_objective: outcome.best.objective,
        final_best_rbar_bps: outcome.best.geo_mean_rate_bps,
        ratio_to_full: None,
        curve: outcome.convergence(),
    }
}

/// Runs every `(fraction, seed)` pair on `target`, seeding each run's
/// initial dataset from the source archive paired with its seed.
/// Per-run artifacts go to `out_dir/fraction_<f>/seed_<s>` when given.
pub fn run_transfer_study(
    target: &Experiment,
    sources: &[(u64, Dataset)],
    fractions: &[f64],
    budget_after_init: usize,
    out_dir: Option<&Path>,
) -> Result<TransferStudy> {
    let mut study = TransferStudy::default();
    let n_initial = target.config.turbo.n_initial;
    for &fraction in fractions {
        check_fraction(fraction)?;
        for (seed, source) in sources {
            let opts = RunOptions {
                seed: *seed,
                target_fraction: fraction,
                source: Some(source),
                max_evals: n_initial + budget_after_init,
            };
            let outcome = run_with(target, &opts)?;
            if let Some(dir) = out_dir {
                write_run_outputs(target, &outcome, &dir.join(format!("fraction_{fraction:.1}/seed_{seed}")))?;
            }
            study.rows.push(row_from_outcome(&outcome));
        }
    }
    study.fill_ratios();
    Ok(study)
}

/// Writes `convergence_<fraction>.csv` per mix and `transfer_summary.json`.
pub fn write_transfer_outputs(study: &TransferStudy, dir: &Path) -> Result<()> {
    let mut fractions: Vec<f64> = study.rows.iter().map(|r| r.target_fraction).collect();
    fractions.dedup();
    for f in fractions {
        write_with(&dir.join(format!("convergence_{f:.1}.csv")), |w| {
            writeln!(w, "seed,iteration,target_evaluations,best_objective,best_rbar_bps")?;
            for r in study.rows_for(f) {
                for p in &r.curve {
                    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        r.seed,
                        p.iteration,
                        p.target_evaluations,
                        opt(p.best_objective),
                        opt(p.best_rbar_bps)
                    )?;
                }
            }
            Ok(())
        })?;
    }
    write_json(&dir.join("transfer_summary.json"), study)
}
