//! Experiment configuration, loaded from TOML or JSON.

use std::path::{Path, PathBuf};

use cellshape_core::propagation::AnalyticParams;
use cellshape_core::simulator::{SimParams, UserSet};
use cellshape_turbo::TurboConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed initial-dataset mixes for transfer runs.
pub const TARGET_FRACTIONS: [f64; 3] = [1.0, 0.5, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSource {
    File {
        path: PathBuf,
    },
    Synthetic {
        n_sites: usize,
        seed: u64,
        #[serde(default = "yes")]
        corridors: bool,
        /// Overrides the generated corridor altitude band `[hmin, hmax]`.
        #[serde(default)]
        corridor_heights: Option<[f64; 2]>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    Analytic {
        #[serde(default)]
        params: AnalyticParams,
    },
    GainMap {
        path: PathBuf,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Analytic { params: AnalyticParams::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Objective over ground users only.
    GueOnly,
    /// Objective over ground users and UAVs.
    #[default]
    GueAndUav,
}

impl Case {
    pub fn population(self) -> UserSet {
        match self {
            Case::GueOnly => UserSet::GueOnly,
            Case::GueAndUav => UserSet::All,
        }
    }
}

/// How user drops are chosen for each objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    /// Every evaluation in a run uses the same `drops_per_eval` drops.
    #[default]
    Common,
    /// Drops are re-seeded per evaluation from the run seed and the point.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Archive of a completed source run (`archive.json`). When absent the
    /// source run is performed first.
    pub source: Option<PathBuf>,
    /// Restricts the study to one mix; all three otherwise.
    pub target_fraction: Option<f64>,
    pub target_corridor_heights: [f64; 2],
    /// Evaluations after the initial dataset, identical for every mix.
    pub budget_after_init: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { source: None, target_fraction: None, target_corridor_heights: [40.0, 60.0], budget_after_init: 600 }
    }
}

impl TransferConfig {
    pub fn fractions(&self) -> Vec<f64> {
        match self.target_fraction {
            Some(f) => vec![f],
            None => TARGET_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub turbo: TurboConfig,
    #[serde(default)]
    pub case: Case,
    #[serde(default)]
    pub drops: DropPolicy,
    #[serde(default)]
    pub transfer: Option<TransferConfig>,
    /// Run seeds for `optimize`/`transfer`; drop seeds for `baseline`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fresh drops used for the final report of every run.
    #[serde(default = "default_final_drops")]
    pub final_drops: usize,
    /// Adds the baseline configuration to every freshly evaluated initial
    /// design.
    #[serde(default = "yes")]
    pub inject_baseline: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_final_drops() -> usize {
    20
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn synthetic(n_sites: usize, scenario_seed: u64, corridors: bool) -> Self {
        Self {
            scenario: ScenarioSource::Synthetic { n_sites, seed: scenario_seed, corridors, corridor_heights: None },
            provider: ProviderConfig::default(),
            sim: SimParams::default(),
            turbo: TurboConfig::default(),
            case: Case::default(),
            drops: DropPolicy::default(),
            transfer: None,
            seeds: default_seeds(),
            final_drops: default_final_drops(),
            inject_baseline: true,
            output_dir: default_output_dir(),
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let ScenarioSource::File { path } = &mut self.scenario {
            fix(path);
        }
        if let ProviderConfig::GainMap { path } = &mut self.provider {
            fix(path);
        }
        if let Some(src) = self.transfer.as_mut().and_then(|t| t.source.as_mut()) {
            fix(src);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate().map_err(|e| Error::config(e.to_string()))?;
        self.turbo.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.final_drops == 0 {
            return Err(Error::config("final_drops must be at least 1"));
        }
        if let ScenarioSource::Synthetic { n_sites, corridor_heights, .. } = &self.scenario {
            if *n_sites == 0 {
                return Err(Error::config("n_sites must be at least 1"));
            }
            if let Some([lo, hi]) = corridor_heights {
                if !(lo < hi) {
                    return Err(Error::config("corridor_heights must be increasing"));
                }
            }
        }
        if let Some(t) = &self.transfer {
            if let Some(f) = t.target_fraction {
                check_fraction(f)?;
            }
            let [lo, hi] = t.target_corridor_heights;
            if !(lo < hi) {
                return Err(Error::config("target_corridor_heights must be increasing"));
            }
        }
        Ok(())
    }
}

pub fn check_fraction(f: f64) -> Result<()> {
    if TARGET_FRACTIONS.contains(&f) {
        Ok(())
    } else {
        Err(Error::config(format!("target_fraction must be one of 1.0, 0.5, 0.0, got {f}")))
    }
}
