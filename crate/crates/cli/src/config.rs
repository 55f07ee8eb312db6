//! Run configuration: command-line flags over a JSON config file over
//! defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use subsysfit::mcmc::ChainConfig;
use subsysfit::orchestrator::{EstimationConfig, LikelihoodData};

/// Every field optional; the same names as the long flags, with `_` for `-`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub rounds: Option<usize>,
    pub tol: Option<f64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
    pub proposal_fraction: Option<f64>,
    pub grid_factor: Option<usize>,
    pub gp_restarts: Option<usize>,
    pub credible_mass: Option<f64>,
    pub noise: Option<f64>,
    pub points: Option<usize>,
    pub data: Option<PathBuf>,
    pub whole_system: Option<bool>,
    pub raw_data_likelihood: Option<bool>,
    pub budget: Option<u64>,
    pub grouping: Option<Vec<Vec<String>>>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            seed,
            workers,
            rounds,
            tol,
            iterations,
            burn_in,
            thinning,
            proposal_fraction,
            grid_factor,
            gp_restarts,
            credible_mass,
            noise,
            points,
            data,
            whole_system,
            raw_data_likelihood,
            budget,
            grouping,
            out
        )
    }
}

/// A fully resolved estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub estimation: EstimationConfig,
    pub workers: usize,
    pub noise: Option<f64>,
    pub points: Option<usize>,
    pub data: Option<PathBuf>,
    pub whole_system: bool,
    pub budget: Option<u64>,
    pub grouping: Option<Vec<Vec<String>>>,
    pub out: Option<PathBuf>,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    pub fn resolve(c: FileConfig) -> Result<Self, String> {
        let base = EstimationConfig::default();
        let chain = ChainConfig {
            iterations: c.iterations.unwrap_or(base.chain.iterations),
            burn_in: c.burn_in.unwrap_or(base.chain.burn_in),
            thinning: c.thinning.unwrap_or(base.chain.thinning),
            proposal_fraction: c.proposal_fraction.unwrap_or(base.chain.proposal_fraction),
            seed: c.seed.unwrap_or(base.chain.seed),
        };
        let estimation = EstimationConfig {
            chain,
            max_rounds: c.rounds.unwrap_or(base.max_rounds),
            tolerance: c.tol.unwrap_or(base.tolerance),
            grid_factor: c.grid_factor.unwrap_or(base.grid_factor),
            gp_restarts: c.gp_restarts.unwrap_or(base.gp_restarts),
            credible_mass: c.credible_mass.unwrap_or(base.credible_mass),
            likelihood: if c.raw_data_likelihood.unwrap_or(false) {
                LikelihoodData::Raw
            } else {
                LikelihoodData::Interpolated
            },
            integrator: base.integrator,
        };
        let workers = c.workers.unwrap_or_else(default_workers);
        if workers == 0 {
            return Err("--workers must be at least 1".into());
        }
        if c.data.is_some() && (c.noise.is_some() || c.points.is_some()) {
            return Err("give either --data or generation settings (--noise/--points), not both".into());
        }
        Ok(Self {
            estimation,
            workers,
            noise: c.noise,
            points: c.points,
            data: c.data,
            whole_system: c.whole_system.unwrap_or(false),
            budget: c.budget,
            grouping: c.grouping,
            out: c.out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: FileConfig = serde_json::from_str(r#"{"seed": 3, "rounds": 2, "iterations": 100}"#).unwrap();
        let flags = FileConfig {
            seed: Some(9),
            ..Default::default()
        };
        let rc = RunConfig::resolve(file.overlay(flags)).unwrap();
        assert_eq!(rc.estimation.chain.seed, 9);
        assert_eq!(rc.estimation.max_rounds, 2);
        assert_eq!(rc.estimation.chain.iterations, 100);
        assert_eq!(rc.estimation.chain.burn_in, ChainConfig::default().burn_in);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn two_data_sources_conflict() {
        let c = FileConfig {
            data: Some("d".into()),
            noise: Some(0.5),
            ..Default::default()
        };
        assert!(RunConfig::resolve(c).is_err());
    }

    #[test]
    fn zero_workers_rejected() {
        let c = FileConfig {
            workers: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(c).is_err());
    }
}
