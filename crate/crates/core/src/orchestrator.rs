//! The interpolate, estimate, simulate, feed-back loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::gp::{interpolate_series, FitOptions, GpError, GpHyperparams};
use crate::graph::{decompose, DecomposeError, SubsystemSpec};
use crate::mcmc::{chain_stream, run_chain, ChainConfig, ChainError, ParameterPosterior, SubsystemTarget};
use crate::model::OdeModel;
use crate::sim::{linspace, simulate_subsystem, IntegratorConfig, InputSignal, SimError, Trajectory};
use crate::summary::{credible_interval, map_estimate, sharpness};

/// A GP noise estimate below `max(MIN_NOISE_STD, NOISELESS_FRACTION * range)`
/// counts as noise-free, and the likelihood scale falls back to
/// `FALLBACK_NOISE_FRACTION * range`. The GP's own noise floor sits far
/// above 1e-8, so the relative test is the one that fires in practice.
pub const MIN_NOISE_STD: f64 = 1e-8;
pub const NOISELESS_FRACTION: f64 = 1e-3;
pub const FALLBACK_NOISE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodData {
    /// GP means on the shared dense grid.
    Interpolated,
    /// Raw observations on their own grid.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Also the master seed: GP restarts and every chain stream derive from
    /// `chain.seed`.
    pub chain: ChainConfig,
    pub max_rounds: usize,
    pub tolerance: f64,
    /// Dense grid size as a multiple of the longest observation series.
    pub grid_factor: usize,
    pub gp_restarts: usize,
    pub credible_mass: f64,
    pub likelihood: LikelihoodData,
    pub integrator: IntegratorConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            max_rounds: 5,
            tolerance: 1e-3,
            grid_factor: 10,
            gp_restarts: 10,
            credible_mass: 0.9,
            likelihood: LikelihoodData::Interpolated,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EstimateError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no observations for species {0}")]
    MissingSeries(String),
    #[error("species {species}: {message}")]
    BadSeries { species: String, message: String },
    #[error("interpolation failed for species {species}: {source}")]
    Interpolation {
        species: String,
        #[source]
        source: GpError,
    },
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("subsystem {subsystem}: {source}")]
    Chain {
        subsystem: usize,
        #[source]
        source: ChainError,
    },
    #[error("subsystem {subsystem}: simulation at the MAP estimate failed: {source}")]
    MapSimulation {
        subsystem: usize,
        #[source]
        source: SimError,
    },
    #[error("raw-data likelihood needs a shared time grid within subsystem {0}")]
    RawGrid(usize),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesInterpolation {
    pub species: String,
    pub hyperparams: GpHyperparams,
    pub noise_std: f64,
    /// Noise std used in the likelihood.
    pub likelihood_std: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub subsystem: usize,
    pub map: f64,
    pub interval: (f64, f64),
    /// Peak over interquartile width of the box-normalized posterior.
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimates {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub truth: Option<f64>,
    pub estimates: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemResult {
    pub spec: SubsystemSpec,
    pub map: Vec<f64>,
    pub acceptance_rate: f64,
    pub warning: Option<String>,
    /// Round whose chain produced this result.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Max over species of sup-distance to the previous round's inputs,
    /// divided by the species range.
    pub metric: f64,
    /// Subsystems whose inputs were unchanged and whose result was reused.
    pub reused: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Decomposed,
    WholeSystem,
}

/// Everything a run produced except wall-clock times, so that equal inputs
/// give byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub model: String,
    pub mode: Mode,
    pub config: EstimationConfig,
    pub converged: bool,
    pub rounds: Vec<RoundSummary>,
    /// Likelihood evaluations spent by chains, excluding start draws.
    pub likelihood_evaluations: u64,
    pub interpolations: Vec<SpeciesInterpolation>,
    pub subsystems: Vec<SubsystemResult>,
    pub parameters: Vec<ParameterEstimates>,
    /// MAP simulations of the last round on the dense grid.
    pub final_trajectory: Trajectory,
    /// GP means the run started from.
    pub interpolated: Trajectory,
}

impl EstimationReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterEstimates> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// A report plus the bulky and non-reproducible parts of a run.
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub report: EstimationReport,
    /// Posterior of each subsystem from the round that produced its result.
    pub posteriors: Vec<ParameterPosterior>,
    pub round_seconds: Vec<f64>,
}

/// Per-parameter MAP multisets in model order, grouped by name without
/// reconciliation.
pub fn gather_estimates(report: &EstimationReport) -> Vec<(String, Vec<f64>)> {
    report
        .parameters
        .iter()
        .map(|p| (p.name.clone(), p.estimates.iter().map(|e| e.map).collect()))
        .collect()
}

struct Prepared {
    grid: Vec<f64>,
    interpolated: Trajectory,
    interpolations: Vec<SpeciesInterpolation>,
    sigma: Vec<f64>,
    ranges: Vec<f64>,
}

fn prepare(model: &OdeModel, obs: &ObservationSet, cfg: &EstimationConfig) -> Result<Prepared, EstimateError> {
    if cfg.max_rounds == 0 {
        return Err(EstimateError::Config("max_rounds must be at least 1".into()));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(EstimateError::Config("tolerance must be non-negative".into()));
    }
    if cfg.grid_factor == 0 || cfg.gp_restarts == 0 {
        return Err(EstimateError::Config("grid factor and GP restarts must be positive".into()));
    }
    if !(cfg.credible_mass > 0.0 && cfg.credible_mass < 1.0) {
        return Err(EstimateError::Config("credible mass must lie in (0,1)".into()));
    }
    cfg.chain.validate().map_err(|e| EstimateError::Config(e.to_string()))?;
    cfg.integrator.validate().map_err(|e| EstimateError::Config(e.to_string()))?;

    let species = model.species_names();
    let mut series = Vec::with_capacity(species.len());
    for name in &species {
        let s = obs.get(name).ok_or_else(|| EstimateError::MissingSeries(name.clone()))?;
        let bad = |message: &str| EstimateError::BadSeries {
            species: name.clone(),
            message: message.into(),
        };
        if s.times.len() != s.values.len() {
            return Err(bad("times and values differ in length"));
        }
        if s.times.len() < 3 {
            return Err(bad("fewer than 3 observations"));
        }
        if s.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("times are not strictly increasing"));
        }
        if s.times.iter().chain(&s.values).any(|v| !v.is_finite()) {
            return Err(bad("non-finite value"));
        }
        series.push(s);
    }
    let t0 = series.iter().map(|s| s.times[0]).fold(f64::INFINITY, f64::min);
    let t1 = series.iter().map(|s| s.times[s.times.len() - 1]).fold(f64::NEG_INFINITY, f64::max);
    let n = series.iter().map(|s| s.times.len()).max().unwrap_or(0);
    let grid = linspace(t0, t1, cfg.grid_factor * n);

    let gp_opts = FitOptions {
        restarts: cfg.gp_restarts,
        seed: cfg.chain.seed,
        ..FitOptions::default()
    };
    let fits: Vec<_> = series
        .iter()
        .map(|s| {
            interpolate_series(&s.times, &s.values, &grid, &gp_opts).map_err(|source| EstimateError::Interpolation {
                species: s.species.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut interpolations = Vec::with_capacity(fits.len());
    let mut sigma = Vec::with_capacity(fits.len());
    let mut ranges = Vec::with_capacity(fits.len());
    for (s, f) in series.iter().zip(&fits) {
        let lo = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let fallback = if range > 0.0 { FALLBACK_NOISE_FRACTION * range } else { FALLBACK_NOISE_FRACTION };
        let floor = MIN_NOISE_STD.max(NOISELESS_FRACTION * range);
        let sd = if f.noise_std >= floor { f.noise_std } else { fallback };
        interpolations.push(SpeciesInterpolation {
            species: s.species.clone(),
            hyperparams: f.hyperparams,
            noise_std: f.noise_std,
            likelihood_std: sd,
            log_likelihood: f.log_likelihood,
        });
        sigma.push(sd);
        ranges.push(if range > 0.0 { range } else { 1.0 });
    }
    let columns: Vec<Vec<f64>> = fits.into_iter().map(|f| f.mean).collect();
    let interpolated = Trajectory::from_columns(grid.clone(), species, &columns).map_err(|e| {
        EstimateError::Config(format!("interpolation grid: {e}"))
    })?;
    Ok(Prepared {
        grid,
        interpolated,
        interpolations,
        sigma,
        ranges,
    })
}

/// Likelihood targets for one subsystem.
fn targets(
    sub: &SubsystemSpec,
    index: usize,
    prep: &Prepared,
    obs: &ObservationSet,
    mode: LikelihoodData,
) -> Result<Trajectory, EstimateError> {
    match mode {
        LikelihoodData::Interpolated => Ok(prep
            .interpolated
            .select(&sub.owned_species)
            .expect("owned species are interpolated")),
        LikelihoodData::Raw => {
            let first = obs.get(&sub.owned_species[0]).expect("checked in prepare");
            let mut cols = Vec::new();
            for name in &sub.owned_species {
                let s = obs.get(name).expect("checked in prepare");
                if s.times != first.times {
                    return Err(EstimateError::RawGrid(index));
                }
                cols.push(s.values.clone());
            }
            Trajectory::from_columns(first.times.clone(), sub.owned_species.clone(), &cols)
                .map_err(|_| EstimateError::RawGrid(index))
        }
    }
}

struct ChainJob<'a> {
    index: usize,
    sub: &'a SubsystemSpec,
    data: Trajectory,
    inputs: Vec<InputSignal>,
    sigma: Vec<f64>,
}

struct ChainResult {
    posterior: ParameterPosterior,
    map: Vec<f64>,
    trajectory: Trajectory,
}

fn run_job(
    model: &OdeModel,
    job: &ChainJob,
    cfg: &EstimationConfig,
    grid: &[f64],
    round: usize,
) -> Result<ChainResult, EstimateError> {
    let mut target = SubsystemTarget::new(model, job.sub, &job.inputs, &job.data, job.sigma.clone(), cfg.integrator);
    let posterior = run_chain(
        &mut target,
        job.sub.local_parameters.clone(),
        &cfg.chain,
        chain_stream(job.index, round),
    )
    .map_err(|source| EstimateError::Chain {
        subsystem: job.index,
        source,
    })?;
    let map: Vec<f64> = (0..job.sub.local_parameters.len())
        .map(|j| map_estimate(&posterior.column(j)))
        .collect();
    let mut params = vec![f64::NAN; model.parameters().len()];
    for (k, &i) in job.sub.parameter_indices().iter().enumerate() {
        params[i] = map[k];
    }
    let state = model.initial_state();
    let init: Vec<f64> = job.sub.owned_indices().iter().map(|&i| state[i]).collect();
    let trajectory = simulate_subsystem(model, job.sub, &params, &init, &job.inputs, grid, &cfg.integrator)
        .map_err(|source| EstimateError::MapSimulation {
            subsystem: job.index,
            source,
        })?;
    Ok(ChainResult {
        posterior,
        map,
        trajectory,
    })
}

fn input_signals(sub: &SubsystemSpec, current: &Trajectory) -> Vec<InputSignal> {
    sub.input_species
        .iter()
        .map(|name| {
            let col = current.column_by_name(name).expect("every species has a trajectory");
            InputSignal::new(name.clone(), current.times().to_vec(), col).expect("dense grid is valid")
        })
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, EstimateError> {
    if workers == 0 {
        return Err(EstimateError::Config("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EstimateError::Pool(e.to_string()))
}

fn sigma_for(sub: &SubsystemSpec, sigma: &[f64]) -> Vec<f64> {
    sub.owned_indices().iter().map(|&i| sigma[i]).collect()
}

fn build_parameters(
    model: &OdeModel,
    subs: &[SubsystemSpec],
    maps: &[Vec<f64>],
    posteriors: &[ParameterPosterior],
    mass: f64,
) -> Vec<ParameterEstimates> {
    model
        .parameters()
        .iter()
        .enumerate()
        .map(|(pi, decl)| {
            let mut estimates = Vec::new();
            for (si, sub) in subs.iter().enumerate() {
                if let Some(k) = sub.parameter_indices().iter().position(|&i| i == pi) {
                    let col = posteriors[si].column(k);
                    estimates.push(Estimate {
                        subsystem: si,
                        map: maps[si][k],
                        interval: credible_interval(&col, mass),
                        sharpness: sharpness(&col, decl.lower, decl.upper),
                    });
                }
            }
            ParameterEstimates {
                name: decl.name.clone(),
                lower: decl.lower,
                upper: decl.upper,
                truth: decl.true_value,
                estimates,
            }
        })
        .collect()
}

/// Normalized sup-distance between two trajectories on the same grid.
fn distance(a: &Trajectory, b: &Trajectory, ranges: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.rows().zip(b.rows()) {
        for (j, (x, y)) in ra.iter().zip(rb).enumerate() {
            worst = worst.max((x - y).abs() / ranges[j]);
        }
    }
    worst
}

/// Decomposed estimation. `grouping` of `None` puts each species in its own
/// subsystem. The report does not depend on `workers`.
pub fn run_estimation(
    model: &OdeModel,
    obs: &ObservationSet,
    grouping: Option<&[Vec<String>]>,
    cfg: &EstimationConfig,
    workers: usize,
) -> Result<EstimationRun, EstimateError> {
    let subs = decompose(model, grouping)?;
    let prep = prepare(model, obs, cfg)?;
    let pool = pool(workers)?;
    let sigma_all = &prep.sigma;

    let data: Vec<Trajectory> = subs
        .iter()
        .enumerate()
        .map(|(i, s)| targets(s, i, &prep, obs, cfg.likelihood))
        .collect::<Result<_, _>>()?;

    let mut current = prep.interpolated.clone();
    let mut previous_inputs: Vec<Option<Vec<InputSignal>>> = vec![None; subs.len()];
    let mut results: Vec<Option<(SubsystemResult, ParameterPosterior, Trajectory)>> = vec![None; subs.len()];
    let mut rounds = Vec::new();
    let mut round_seconds = Vec::new();
    let mut evaluations = 0u64;
    let mut converged = false;

    for round in 0..cfg.max_rounds {
        let started = std::time::Instant::now();
        let mut jobs = Vec::new();
        let mut reused = Vec::new();
        let mut inputs_now = Vec::with_capacity(subs.len());
        for (i, sub) in subs.iter().enumerate() {
            let inputs = input_signals(sub, &current);
            if previous_inputs[i].as_ref() == Some(&inputs) && results[i].is_some() {
                reused.push(i);
            } else {
                jobs.push(ChainJob {
                    index: i,
                    sub,
                    data: data[i].clone(),
                    inputs: inputs.clone(),
                    sigma: sigma_for(sub, sigma_all),
                });
            }
            inputs_now.push(inputs);
        }
        let outcomes: Vec<Result<ChainResult, EstimateError>> = pool.install(|| {
            jobs.par_iter()
                .map(|job| run_job(model, job, cfg, &prep.grid, round))
                .collect()
        });
        for (job, outcome) in jobs.iter().zip(outcomes) {
            let r = outcome?;
            evaluations += cfg.chain.iterations as u64;
            results[job.index] = Some((
                SubsystemResult {
                    spec: job.sub.clone(),
                    map: r.map,
                    acceptance_rate: r.posterior.acceptance_rate,
                    warning: r.posterior.warning.clone(),
                    round,
                },
                r.posterior,
                r.trajectory,
            ));
        }
        previous_inputs = inputs_now.into_iter().map(Some).collect();

        // barrier: assemble the next inputs only from this round's results
        let mut columns: Vec<Vec<f64>> = (0..current.width()).map(|j| current.column(j)).collect();
        for (_, _, traj) in results.iter().flatten() {
            for (k, name) in traj.species().iter().enumerate() {
                let j = current.species_index(name).expect("owned species exist");
                columns[j] = traj.column(k);
            }
        }
        let next = Trajectory::from_columns(prep.grid.clone(), current.species().to_vec(), &columns)
            .expect("grid and species unchanged");
        let metric = distance(&next, &current, &prep.ranges);
        current = next;
        rounds.push(RoundSummary { round, metric, reused });
        round_seconds.push(started.elapsed().as_secs_f64());
        if metric < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let (sub_results, posteriors): (Vec<_>, Vec<_>) = results
        .into_iter()
        .map(|r| {
            let (s, p, _) = r.expect("every subsystem ran at least once");
            (s, p)
        })
        .unzip();
    let maps: Vec<Vec<f64>> = sub_results.iter().map(|s| s.map.clone()).collect();
    let parameters = build_parameters(model, &subs, &maps, &posteriors, cfg.credible_mass);
    Ok(EstimationRun {
        report: EstimationReport {
            model: model.name().to_string(),
            mode: Mode::Decomposed,
            config: cfg.clone(),
            converged,
            rounds,
            likelihood_evaluations: evaluations,
            interpolations: prep.interpolations,
            subsystems: sub_results,
            parameters,
            final_trajectory: current,
            interpolated: prep.interpolated,
        },
        posteriors,
        round_seconds,
    })
}

/// One chain over every parameter with the summed SSE of all species.
/// Rounds and tolerance in `cfg` are ignored.
pub fn whole_system_baseline(
    model: &OdeModel,
    obs: &ObservationSet,
    cfg: &EstimationConfig,
) -> Result<EstimationRun, EstimateError> {
    let prep = prepare(model, obs, cfg)?;
    let whole = SubsystemSpec::whole(model);
    let data = targets(&whole, 0, &prep, obs, cfg.likelihood)?;
    let started = std::time::Instant::now();
    let job = ChainJob {
        index: 0,
        sub: &whole,
        data,
        inputs: Vec::new(),
        sigma: prep.sigma.clone(),
    };
    let r = run_job(model, &job, cfg, &prep.grid, 0)?;
    let metric = distance(&r.trajectory, &prep.interpolated, &prep.ranges);
    let subs = [whole.clone()];
    let parameters = build_parameters(model, &subs, &[r.map.clone()], &[r.posterior.clone()], cfg.credible_mass);
    Ok(EstimationRun {
        report: EstimationReport {
            model: model.name().to_string(),
            mode: Mode::WholeSystem,
            config: cfg.clone(),
            converged: true,
            rounds: vec![RoundSummary {
                round: 0,
                metric,
                reused: Vec::new(),
            }],
            likelihood_evaluations: cfg.chain.iterations as u64,
            interpolations: prep.interpolations,
            subsystems: vec![SubsystemResult {
                spec: whole,
                map: r.map,
                acceptance_rate: r.posterior.acceptance_rate,
                warning: r.posterior.warning.clone(),
                round: 0,
            }],
            parameters,
            final_trajectory: r.trajectory,
            interpolated: prep.interpolated,
        },
        posteriors: vec![r.posterior],
        round_seconds: vec![started.elapsed().as_secs_f64()],
    })
}

/// Chain settings spending `evaluations` likelihood evaluations in one
/// chain, with burn-in and thinning scaled so the retained sample count
/// stays that of `base`.
pub fn matched_budget(base: &ChainConfig, evaluations: u64) -> ChainConfig {
    let factor = (evaluations as f64 / base.iterations as f64).max(1.0);
    let iterations = evaluations.max(base.iterations as u64) as usize;
    let burn_in = ((base.burn_in as f64 * factor).round() as usize).min(iterations - 1);
    let thinning = ((base.thinning as f64 * factor).round() as usize).max(1);
    ChainConfig {
        iterations,
        burn_in,
        thinning,
        ..base.clone()
    }
}

/// Median over every subsystem estimate of `|map - truth| / |truth|`.
/// `None` when the model carries no true values.
pub fn median_relative_error(report: &EstimationReport) -> Option<f64> {
    let mut errs = Vec::new();
    for p in &report.parameters {
        let t = p.truth?;
        for e in &p.estimates {
            errs.push(crate::summary::relative_error(e.map, t));
        }
    }
    (!errs.is_empty()).then(|| crate::summary::median(&errs))
}
