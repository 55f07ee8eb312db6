//! Zero-mean Gaussian-process regression with the MLP covariance.
//!
//! Times are mapped affinely onto `[0, 1]` (first training time to last)
//! before the kernel sees them; fitted hyperparameters live in that domain.

mod kernel;
mod optim;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kernel::{gram_matrix, mlp_kernel, GpHyperparams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },
    #[error("need at least {need} observations, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite training data")]
    NonFinite,
    #[error("hyperparameter fit failed from every restart")]
    FitFailed,
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Affine map from raw time to the kernel's input domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub origin: f64,
    pub span: f64,
}

impl TimeScale {
    pub fn fit(times: &[f64]) -> Self {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if times.is_empty() || !(hi > lo) {
            let origin = if times.is_empty() { 0.0 } else { lo };
            return Self { origin, span: 1.0 };
        }
        Self {
            origin: lo,
            span: hi - lo,
        }
    }

    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        (t - self.origin) / self.span
    }
}

struct Factor {
    l: DMatrix<f64>,
    jitter: f64,
}

/// Cholesky of `k`, escalating diagonal jitter when the plain matrix fails.
fn factorize(k: &DMatrix<f64>) -> Result<Factor, GpError> {
    let n = k.nrows();
    let mean_diag = if n == 0 { 0.0 } else { k.diagonal().mean().abs().max(f64::MIN_POSITIVE) };
    let ok = |l: &DMatrix<f64>| (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0);
    if let Some(c) = k.clone().cholesky() {
        let l = c.unpack();
        if ok(&l) {
            return Ok(Factor { l, jitter: 0.0 });
        }
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            let l = c.unpack();
            if ok(&l) {
                return Ok(Factor { l, jitter });
            }
        }
        rel *= 10.0;
    }
    Err(GpError::IllConditioned {
        max_jitter: JITTER_MAX * mean_diag,
    })
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let z = self
            .l
            .solve_lower_triangular(b)
            .expect("positive pivots");
        self.l
            .tr_solve_lower_triangular(&z)
            .expect("positive pivots")
    }

    fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let linv = self
            .l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("positive pivots");
        linv.transpose() * linv
    }
}

fn covariance(x: &[f64], h: &GpHyperparams, extra_noise: Option<&[f64]>) -> DMatrix<f64> {
    let mut k = gram_matrix(x, h);
    for i in 0..x.len() {
        k[(i, i)] += h.noise_variance + extra_noise.map_or(0.0, |v| v[i]);
    }
    k
}

fn check_training(x: &[f64], y: &[f64], extra_noise: Option<&[f64]>) -> Result<(), GpError> {
    if x.len() != y.len() || extra_noise.is_some_and(|v| v.len() != x.len()) {
        return Err(GpError::Shape("inputs, targets and noise differ in length".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite())
        || extra_noise.is_some_and(|v| v.iter().any(|s| !(s.is_finite() && *s >= 0.0)))
    {
        return Err(GpError::NonFinite);
    }
    Ok(())
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln σf², ln w, ln b, ln σn²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lml {
    pub value: f64,
    pub gradient: [f64; 4],
}

/// Marginal likelihood of `y` at inputs `x` (used as given, no rescaling).
/// `extra_noise` adds a fixed per-point variance on top of `σn²`.
pub fn log_marginal_likelihood(
    x: &[f64],
    y: &[f64],
    h: &GpHyperparams,
    extra_noise: Option<&[f64]>,
) -> Result<Lml, GpError> {
    check_training(x, y, extra_noise)?;
    let n = x.len();
    let k = covariance(x, h, extra_noise);
    let fac = factorize(&k)?;
    let yv = DVector::from_column_slice(y);
    let alpha = fac.solve(&yv);
    let value = -0.5 * yv.dot(&alpha) - 0.5 * fac.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // 1/2 tr((αα' - K⁻¹) dK/dθ)
    let kinv = fac.inverse();
    let mut grad = [0.0; 4];
    for i in 0..n {
        for j in i..n {
            let mult = if i == j { 1.0 } else { 2.0 };
            let w = mult * (alpha[i] * alpha[j] - kinv[(i, j)]);
            let (_, d) = kernel::mlp_kernel_grad(x[i], x[j], h);
            grad[0] += w * d[0];
            grad[1] += w * d[1];
            grad[2] += w * d[2];
        }
        grad[3] += (alpha[i] * alpha[i] - kinv[(i, i)]) * h.noise_variance;
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok(Lml {
        value,
        gradient: grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Fixed per-point noise variances. When set, `σn²` is pinned at zero.
    pub point_noise: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            max_iter: 500,
            grad_tol: 1e-6,
            point_noise: None,
        }
    }
}

const LOG_INIT: f64 = 4.0;
// Search box for the log-hyperparameters, in units where the targets have
// unit mean square. Beyond it the kernel degenerates: large weight variance
// turns the MLP covariance into a Brownian kernel in 1/t, and the noise
// floor keeps the covariance matrix well conditioned.
const LOG_KERNEL_LIMIT: f64 = 10.0;
const LOG_NOISE_MIN: f64 = -18.420680743952367; // ln 1e-8
const LOG_NOISE_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub hyperparams: GpHyperparams,
    pub log_likelihood: f64,
    /// LML at each restart's starting point (`-inf` where it failed).
    pub initial_log_likelihoods: Vec<f64>,
}

/// Type-II maximum likelihood by multi-restart BFGS on the log-hyperparameters.
/// Targets are divided by their root mean square during the search; the
/// returned variances are in the original units.
pub fn fit_hyperparams(times: &[f64], y: &[f64], opts: &FitOptions) -> Result<FitOutcome, GpError> {
    if times.len() < 3 {
        return Err(GpError::TooFewPoints {
            need: 3,
            got: times.len(),
        });
    }
    let extra = opts.point_noise.as_deref();
    check_training(times, y, extra)?;
    let scale = TimeScale::fit(times);
    let x: Vec<f64> = times.iter().map(|&t| scale.apply(t)).collect();
    let free = if extra.is_some() { 3 } else { 4 };
    let n = y.len() as f64;
    let ms = y.iter().map(|v| v * v).sum::<f64>() / n;
    let ys = if ms > 0.0 { ms.sqrt() } else { 1.0 };
    let y_unit: Vec<f64> = y.iter().map(|v| v / ys).collect();
    let extra_unit: Option<Vec<f64>> = extra.map(|v| v.iter().map(|e| e / (ys * ys)).collect());
    let extra_unit = extra_unit.as_deref();
    // LML of the original targets from that of the rescaled ones
    let unscale_lml = |l: f64| l - n * ys.ln();

    let to_hp = |z: &[f64]| {
        let mut full = [0.0; 4];
        full[..free].copy_from_slice(&z[..free]);
        let mut h = GpHyperparams::from_log(&full);
        if free == 3 {
            h.noise_variance = 0.0;
        }
        h
    };
    // The box is imposed smoothly: z = lo + (hi - lo) * logistic(u), and
    // BFGS runs unconstrained in u.
    let bounds = |i: usize| {
        if i < 3 {
            (-LOG_KERNEL_LIMIT, LOG_KERNEL_LIMIT)
        } else {
            (LOG_NOISE_MIN, LOG_NOISE_MAX)
        }
    };
    let to_z = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| {
                let (lo, hi) = bounds(i);
                lo + (hi - lo) / (1.0 + (-ui).exp())
            })
            .collect()
    };
    let to_u = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| {
                let (lo, hi) = bounds(i);
                let p = (zi - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            })
            .collect()
    };
    let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
        let z = to_z(u);
        let l = log_marginal_likelihood(&x, &y_unit, &to_hp(&z), extra_unit).ok()?;
        if !l.value.is_finite() || l.gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let grad = (0..free)
            .map(|i| {
                let (lo, hi) = bounds(i);
                let p = (z[i] - lo) / (hi - lo);
                -l.gradient[i] * (hi - lo) * p * (1.0 - p)
            })
            .collect();
        Some((-l.value, grad))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut initial = Vec::with_capacity(opts.restarts.max(1));
    for _ in 0..opts.restarts.max(1) {
        let z0: Vec<f64> = (0..free).map(|_| rng.random_range(-LOG_INIT..=LOG_INIT)).collect();
        let u0 = to_u(&z0);
        match objective(&u0) {
            Some((f0, _)) => initial.push(unscale_lml(-f0)),
            None => {
                initial.push(f64::NEG_INFINITY);
                continue;
            }
        }
        if let Some(m) = optim::bfgs(objective, &u0, opts.max_iter, opts.grad_tol) {
            let lml = -m.value;
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, to_z(&m.z)));
            }
        }
    }
    let (log_likelihood, z) = best.ok_or(GpError::FitFailed)?;
    let mut hyperparams = to_hp(&z);
    hyperparams.signal_variance *= ys * ys;
    hyperparams.noise_variance *= ys * ys;
    Ok(FitOutcome {
        hyperparams,
        log_likelihood: unscale_lml(log_likelihood),
        initial_log_likelihoods: initial,
    })
}

/// A conditioned GP. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    scale: TimeScale,
    x: Vec<f64>,
    y: Vec<f64>,
    hyperparams: GpHyperparams,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    pub fn new(
        times: &[f64],
        y: &[f64],
        hyperparams: GpHyperparams,
        point_noise: Option<&[f64]>,
    ) -> Result<Self, GpError> {
        check_training(times, y, point_noise)?;
        let scale = TimeScale::fit(times);
        let x: Vec<f64> = times.iter().map(|&t| scale.apply(t)).collect();
        let k = covariance(&x, &hyperparams, point_noise);
        let fac = factorize(&k)?;
        let alpha = fac.solve(&DVector::from_column_slice(y));
        Ok(Self {
            scale,
            x,
            y: y.to_vec(),
            hyperparams,
            l: fac.l,
            alpha,
            jitter: fac.jitter,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn time_scale(&self) -> TimeScale {
        self.scale
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// Predictive mean and variance of the latent function at raw time `t`.
    pub fn predict(&self, t: f64) -> (f64, f64) {
        let xs = self.scale.apply(t);
        let prior = mlp_kernel(xs, xs, &self.hyperparams);
        if self.x.is_empty() {
            return (0.0, prior);
        }
        let kstar = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|&xi| mlp_kernel(xs, xi, &self.hyperparams)),
        );
        let mean = kstar.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&kstar)
            .expect("positive pivots");
        let var = (prior - v.dot(&v)).max(0.0);
        (mean, var)
    }
}

/// `factor × n` uniform points over the span of `times`.
pub fn dense_grid(times: &[f64], factor: usize) -> Vec<f64> {
    let lo = times.first().copied().unwrap_or(0.0);
    let hi = times.last().copied().unwrap_or(0.0);
    crate::sim::linspace(lo, hi, (factor * times.len()).max(2))
}

/// Fitted GP evaluated on a dense grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub hyperparams: GpHyperparams,
    pub noise_std: f64,
    pub log_likelihood: f64,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn interpolate_series(
    times: &[f64],
    observations: &[f64],
    grid: &[f64],
    opts: &FitOptions,
) -> Result<Interpolation, GpError> {
    let fit = fit_hyperparams(times, observations, opts)?;
    let post = GpPosterior::new(times, observations, fit.hyperparams, opts.point_noise.as_deref())?;
    let (mean, variance) = grid.iter().map(|&t| post.predict(t)).unzip();
    let noise_std = match &opts.point_noise {
        Some(v) => (v.iter().sum::<f64>() / v.len() as f64).sqrt(),
        None => fit.hyperparams.noise_variance.sqrt(),
    };
    Ok(Interpolation {
        hyperparams: fit.hyperparams,
        noise_std,
        log_likelihood: fit.log_likelihood,
        grid: grid.to_vec(),
        mean,
        variance,
    })
}
