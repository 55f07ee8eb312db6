//! Random-walk Metropolis-Hastings under a box-uniform prior.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::SubsystemSpec;
use crate::model::OdeModel;
use crate::sim::{simulate_subsystem, sum_squared_error, InputSignal, IntegratorConfig, Trajectory};

/// Below this post-burn-in acceptance rate a chain carries a warning.
pub const LOW_ACCEPTANCE: f64 = 0.001;
const MAX_START_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Proposal std per dimension as a fraction of the box width.
    pub proposal_fraction: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            thinning: 10,
            proposal_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error("no starting point with finite log-posterior after {0} draws")]
    NoValidStart(usize),
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.burn_in >= self.iterations {
            return Err(ChainError::Config("burn_in must be below iterations".into()));
        }
        if self.thinning == 0 {
            return Err(ChainError::Config("thinning must be at least 1".into()));
        }
        if !(self.proposal_fraction > 0.0 && self.proposal_fraction.is_finite()) {
            return Err(ChainError::Config("proposal scale must be positive".into()));
        }
        Ok(())
    }

    /// Number of samples a chain retains.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// Unnormalized log-posterior over a box.
pub trait LogTarget {
    fn bounds(&self) -> &[(f64, f64)];

    /// Log density for an in-box point; `-inf` where it vanishes.
    fn log_density(&mut self, p: &[f64]) -> f64;
}

fn in_box(p: &[f64], bounds: &[(f64, f64)]) -> bool {
    p.iter().zip(bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub p: Vec<f64>,
    pub log_p: f64,
    pub accepted: u64,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

/// `min(exp(log_new - log_old), 1)`, with `-inf` proposals never accepted.
pub fn acceptance_probability(log_old: f64, log_new: f64) -> f64 {
    if log_new == f64::NEG_INFINITY || log_new.is_nan() {
        return 0.0;
    }
    if log_new >= log_old {
        return 1.0;
    }
    (log_new - log_old).exp()
}

/// One Metropolis-Hastings transition. Returns whether the proposal was
/// accepted.
pub fn mh_step<T: LogTarget + ?Sized>(state: &mut ChainState, target: &mut T, scales: &[f64]) -> bool {
    let proposal: Vec<f64> = state
        .p
        .iter()
        .zip(scales)
        .map(|(v, s)| v + s * state.rng.sample::<f64, _>(StandardNormal))
        .collect();
    let u: f64 = state.rng.random();
    let log_new = if in_box(&proposal, target.bounds()) {
        target.log_density(&proposal)
    } else {
        f64::NEG_INFINITY
    };
    state.iteration += 1;
    if u < acceptance_probability(state.log_p, log_new) {
        state.p = proposal;
        state.log_p = log_new;
        state.accepted += 1;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPosterior {
    pub parameter_names: Vec<String>,
    /// Retained samples, one row per sample.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub stream: u64,
    pub warning: Option<String>,
}

impl ParameterPosterior {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    /// CSV with a header of parameter names and one sample per row.
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.parameter_names)?;
        for row in &self.samples {
            wr.write_record(row.iter().map(|v| crate::sim::format_f64(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_samples_csv<R: std::io::Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>), csv::Error> {
        let mut rd = csv::Reader::from_reader(r);
        let names = rd.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|f| f.parse::<f64>().unwrap_or(f64::NAN)).collect());
        }
        Ok((names, rows))
    }
}

/// Sidecar written next to a sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub seed: u64,
    pub stream: u64,
    pub config: ChainConfig,
    pub acceptance_rate: f64,
    pub samples: usize,
    pub warning: Option<String>,
}

impl SampleMetadata {
    pub fn new(post: &ParameterPosterior, config: &ChainConfig) -> Self {
        Self {
            seed: post.seed,
            stream: post.stream,
            config: config.clone(),
            acceptance_rate: post.acceptance_rate,
            samples: post.samples.len(),
            warning: post.warning.clone(),
        }
    }
}

/// Random-number stream for one chain: subsystem index in the high half,
/// round index in the low half.
pub fn chain_stream(subsystem: usize, round: usize) -> u64 {
    ((subsystem as u64) << 32) | round as u64
}

/// Run a chain from a uniform draw in the box. Iteration `i` (0-based) is
/// kept when it lies past burn-in and `(i - burn_in + 1)` is a multiple of
/// the thinning interval.
pub fn run_chain<T: LogTarget + ?Sized>(
    target: &mut T,
    names: Vec<String>,
    cfg: &ChainConfig,
    stream: u64,
) -> Result<ParameterPosterior, ChainError> {
    cfg.validate()?;
    let bounds = target.bounds().to_vec();
    if names.len() != bounds.len() {
        return Err(ChainError::Config("one name per dimension required".into()));
    }
    let scales: Vec<f64> = bounds
        .iter()
        .map(|(lo, hi)| cfg.proposal_fraction * (hi - lo))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let mut start = None;
    for _ in 0..MAX_START_DRAWS {
        let p: Vec<f64> = bounds.iter().map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        let lp = target.log_density(&p);
        if lp.is_finite() {
            start = Some((p, lp));
            break;
        }
    }
    let (p, log_p) = start.ok_or(ChainError::NoValidStart(MAX_START_DRAWS))?;
    let mut state = ChainState {
        p,
        log_p,
        accepted: 0,
        iteration: 0,
        rng,
    };

    let mut samples = Vec::with_capacity(cfg.retained());
    let mut accepted_after = 0u64;
    for i in 0..cfg.iterations {
        let acc = mh_step(&mut state, target, &scales);
        if i >= cfg.burn_in {
            accepted_after += acc as u64;
            if (i - cfg.burn_in + 1) % cfg.thinning == 0 {
                samples.push(state.p.clone());
            }
        }
    }
    let acceptance_rate = accepted_after as f64 / (cfg.iterations - cfg.burn_in) as f64;
    let warning = (acceptance_rate < LOW_ACCEPTANCE)
        .then(|| format!("acceptance rate {acceptance_rate:.2e} after burn-in; chain is likely stuck"));
    Ok(ParameterPosterior {
        parameter_names: names,
        samples,
        acceptance_rate,
        seed: cfg.seed,
        stream,
        warning,
    })
}

/// Log-posterior of a subsystem's local parameters: box-uniform prior and
/// `-Σ_s SSE_s / (2 σ_s²)` over the owned species.
pub struct SubsystemTarget<'a> {
    model: &'a OdeModel,
    sub: &'a SubsystemSpec,
    bounds: Vec<(f64, f64)>,
    params: Vec<f64>,
    init: Vec<f64>,
    inputs: &'a [InputSignal],
    data: &'a Trajectory,
    sigma: Vec<f64>,
    cfg: IntegratorConfig,
    failures: u64,
}

impl<'a> SubsystemTarget<'a> {
    /// `data` must hold every owned species on the simulation grid; `sigma`
    /// has one noise std per owned species.
    pub fn new(
        model: &'a OdeModel,
        sub: &'a SubsystemSpec,
        inputs: &'a [InputSignal],
        data: &'a Trajectory,
        sigma: Vec<f64>,
        cfg: IntegratorConfig,
    ) -> Self {
        let decls = model.parameters();
        let bounds = sub
            .parameter_indices()
            .iter()
            .map(|&i| (decls[i].lower, decls[i].upper))
            .collect();
        let state = model.initial_state();
        let init = sub.owned_indices().iter().map(|&i| state[i]).collect();
        Self {
            model,
            sub,
            bounds,
            params: vec![f64::NAN; decls.len()],
            init,
            inputs,
            data,
            sigma,
            cfg,
            failures: 0,
        }
    }

    /// Number of proposals whose integration failed.
    pub fn failures(&self) -> u64 {
        self.failures
    }

    /// Simulate the owned species at local parameter vector `p`.
    pub fn simulate(&mut self, p: &[f64]) -> Result<Trajectory, crate::sim::SimError> {
        for (k, &i) in self.sub.parameter_indices().iter().enumerate() {
            self.params[i] = p[k];
        }
        simulate_subsystem(
            self.model,
            self.sub,
            &self.params,
            &self.init,
            self.inputs,
            self.data.times(),
            &self.cfg,
        )
    }
}

impl LogTarget for SubsystemTarget<'_> {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn log_density(&mut self, p: &[f64]) -> f64 {
        if !in_box(p, &self.bounds) {
            return f64::NEG_INFINITY;
        }
        let sim = match self.simulate(p) {
            Ok(s) => s,
            Err(_) => {
                self.failures += 1;
                return f64::NEG_INFINITY;
            }
        };
        let mut lp = 0.0;
        for (k, name) in self.sub.owned_species.iter().enumerate() {
            match sum_squared_error(&sim, self.data, name) {
                Ok(sse) => lp -= sse / (2.0 * self.sigma[k] * self.sigma[k]),
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }
}
