//! Numerical integration of full models and input-driven subsystems.

mod dopri;
mod signal;
mod trajectory;

use serde::{Deserialize, Serialize};

pub use dopri::StepObserver;
pub use signal::InputSignal;
pub use trajectory::{format_f64, sum_squared_error, Trajectory};

use crate::graph::SubsystemSpec;
use crate::model::{ModelError, OdeModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("integration failed: step limit reached at t = {t_last}")]
    StepLimit { t_last: f64 },
    #[error("integration failed: step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("evaluation error: {0}")]
    Eval(#[from] ModelError),
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("no input signal for species `{0}`")]
    MissingInput(String),
    #[error("expected {expected} parameter values, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Interpolate grid outputs (cubic Hermite) from free-running steps
    /// instead of clipping steps to land on every grid point. The
    /// interpolant is one order less accurate than the step solution.
    pub dense_output: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            max_steps: 1_000_000,
            dense_output: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(SimError::Shape("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// A first-order system `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError>;
}

impl<F> OdeSystem for F
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        self(t, y, dy);
        Ok(())
    }
}

/// Integrate `sys` from `init` at `grid[0]`, returning the states on `grid`
/// (row-major).
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &mut S,
    init: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, SimError> {
    cfg.validate()?;
    trajectory::check_grid(grid)?;
    dopri::solve(sys, init, grid, cfg, None)
}

/// As [`integrate`], also reporting every accepted step endpoint.
pub fn integrate_observed<S: OdeSystem + ?Sized>(
    sys: &mut S,
    init: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
    observer: StepObserver<'_>,
) -> Result<Vec<f64>, SimError> {
    cfg.validate()?;
    trajectory::check_grid(grid)?;
    dopri::solve(sys, init, grid, cfg, Some(observer))
}

/// A model (or a subset of its species) bound to parameter values and input
/// signals, ready for integration.
pub struct BoundSystem<'a> {
    model: &'a OdeModel,
    owned: &'a [usize],
    inputs: Vec<(usize, &'a InputSignal)>,
    slots: Vec<f64>,
}

impl<'a> BoundSystem<'a> {
    /// `params` holds one value per model parameter; entries the owned
    /// equations never read may be NaN.
    pub fn new(
        model: &'a OdeModel,
        sub: &'a SubsystemSpec,
        params: &[f64],
        inputs: &'a [InputSignal],
    ) -> Result<Self, SimError> {
        if params.len() != model.parameters().len() {
            return Err(SimError::ParameterCount {
                expected: model.parameters().len(),
                got: params.len(),
            });
        }
        let mut bound = Vec::with_capacity(sub.input_idx.len());
        for &i in &sub.input_idx {
            let name = &model.species()[i].name;
            let sig = inputs
                .iter()
                .find(|s| s.species() == name)
                .ok_or_else(|| SimError::MissingInput(name.clone()))?;
            bound.push((i, sig));
        }
        let mut slots = vec![f64::NAN; model.slot_count()];
        for (i, v) in params.iter().enumerate() {
            slots[model.param_slot(i)] = *v;
        }
        Ok(Self {
            model,
            owned: &sub.owned_idx,
            inputs: bound,
            slots,
        })
    }
}

impl OdeSystem for BoundSystem<'_> {
    #[inline]
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        for (k, &i) in self.owned.iter().enumerate() {
            self.slots[i] = y[k];
        }
        for &(i, sig) in &self.inputs {
            self.slots[i] = sig.value(t);
        }
        let ts = self.model.time_slot();
        self.slots[ts] = t;
        for (k, &i) in self.owned.iter().enumerate() {
            dy[k] = self.model.eval_species(i, &self.slots)?;
        }
        Ok(())
    }
}

/// Integrate the owned species of `sub` on `grid`, starting from `init`
/// (one value per owned species) and reading other species from `inputs`.
pub fn simulate_subsystem(
    model: &OdeModel,
    sub: &SubsystemSpec,
    params: &[f64],
    init: &[f64],
    inputs: &[InputSignal],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    if init.len() != sub.owned_idx.len() {
        return Err(SimError::Shape(format!(
            "{} initial values for {} owned species",
            init.len(),
            sub.owned_idx.len()
        )));
    }
    let mut sys = BoundSystem::new(model, sub, params, inputs)?;
    let values = integrate(&mut sys, init, grid, cfg)?;
    Trajectory::new(grid.to_vec(), sub.owned_species.clone(), values)
}

/// Integrate the whole model from its declared initial state.
pub fn simulate_model(
    model: &OdeModel,
    params: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    let whole = SubsystemSpec::whole(model);
    simulate_subsystem(model, &whole, params, &model.initial_state(), &[], grid, cfg)
}

/// One input signal per species column of `traj`.
pub fn signals_from(traj: &Trajectory) -> Result<Vec<InputSignal>, SimError> {
    (0..traj.width())
        .map(|j| InputSignal::new(traj.species()[j].clone(), traj.times().to_vec(), traj.column(j)))
        .collect()
}

/// Uniform grid of `n` points on `[a, b]`, with both ends exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    #[test]
    fn exponential_decay_closed_form() {
        let m = parse_model("species X = 1; param k in [0,2]; d(X) = -k*X;").unwrap();
        let tr = simulate_model(&m, &[1.0], &[0.0, 1.0], &IntegratorConfig::default()).unwrap();
        assert!((tr.value(1, 0) - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn clipped_stepping_matches_dense_output() {
        let m = parse_model("species X = 1; param k in [0,2]; d(X) = -k*X + t;").unwrap();
        let grid = linspace(0.0, 3.0, 31);
        let clipped = simulate_model(&m, &[0.7], &grid, &IntegratorConfig::default()).unwrap();
        let cfg = IntegratorConfig {
            dense_output: true,
            ..Default::default()
        };
        let dense = simulate_model(&m, &[0.7], &grid, &cfg).unwrap();
        for i in 0..grid.len() {
            let d = (dense.value(i, 0) - clipped.value(i, 0)).abs();
            assert!(d < 1e-4, "i={i} d={d}");
        }
    }

    #[test]
    fn step_limit_reports_last_time() {
        let m = parse_model("species X = 1; param k in [0,2]; d(X) = -k*X;").unwrap();
        let cfg = IntegratorConfig {
            max_steps: 3,
            ..Default::default()
        };
        let err = simulate_model(&m, &[1.0], &[0.0, 100.0], &cfg).unwrap_err();
        assert!(matches!(err, SimError::StepLimit { t_last } if t_last > 0.0 && t_last < 100.0));
    }

    #[test]
    fn blow_up_is_an_error() {
        let m = parse_model("species X = 1; param k in [0,2]; d(X) = k*X^2;").unwrap();
        let err = simulate_model(&m, &[1.0], &[0.0, 2.0], &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            SimError::StepLimit { .. } | SimError::StepUnderflow { .. } | SimError::NonFinite { .. }
        ));
    }

    #[test]
    fn division_by_zero_surfaces_as_eval_error() {
        let m = parse_model("species X = 0; param k in [0,2]; d(X) = k/X;").unwrap();
        let err = simulate_model(&m, &[1.0], &[0.0, 1.0], &IntegratorConfig::default()).unwrap_err();
        assert_eq!(err, SimError::Eval(ModelError::DivisionByZero("X".into())));
    }

    #[test]
    fn missing_input_signal() {
        let m = parse_model(
            "species A = 1; species B = 0; param k in [0,1]; d(A) = -k*A; d(B) = k*A;",
        )
        .unwrap();
        let subs = crate::graph::decompose(&m, None).unwrap();
        let err = simulate_subsystem(&m, &subs[1], &[0.5], &[0.0], &[], &[0.0, 1.0], &Default::default())
            .unwrap_err();
        assert_eq!(err, SimError::MissingInput("A".into()));
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let m = parse_model(
            "species A = 1; species B = 0; param k in [0,1]; param v in [0,1];\
             d(A) = -k*A + v*B/(0.3 + B); d(B) = k*A - v*B/(0.3 + B);",
        )
        .unwrap();
        let grid = linspace(0.0, 50.0, 77);
        let a = simulate_model(&m, &[0.3, 0.2], &grid, &Default::default()).unwrap();
        let b = simulate_model(&m, &[0.3, 0.2], &grid, &Default::default()).unwrap();
        let bits = |t: &Trajectory| t.rows().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
