//! Dormand-Prince 5(4) with cubic Hermite dense output.

use super::{IntegratorConfig, OdeSystem, SimError};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th-order weights minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Accepted step endpoint, reported to an optional observer.
pub type StepObserver<'a> = &'a mut dyn FnMut(f64, &[f64]);

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

fn eval<S: OdeSystem + ?Sized>(sys: &mut S, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
    sys.rhs(t, y, dy)?;
    if dy.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t });
    }
    Ok(())
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &mut S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    cfg: &IntegratorConfig,
    work: &mut Work,
) -> Result<f64, SimError> {
    let n = y0.len();
    let sc = |i: usize| cfg.atol + cfg.rtol * y0[i].abs();
    let d0 = (0..n).map(|i| (y0[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let d1 = (0..n).map(|i| (f0[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    for i in 0..n {
        work.tmp[i] = y0[i] + h0 * f0[i];
    }
    let (tmp, k1) = (&work.tmp, &mut work.k[1]);
    eval(sys, t0 + h0, tmp, k1)?;
    let d2 = (0..n)
        .map(|i| ((work.k[1][i] - f0[i]) / sc(i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (n as f64).sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrate `sys` from `y0` at `grid[0]` and return the state at every grid
/// point, row-major. `observer` sees every accepted step endpoint.
pub fn solve<S: OdeSystem + ?Sized>(
    sys: &mut S,
    y0: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Vec<f64>, SimError> {
    let n = y0.len();
    let mut out = Vec::with_capacity(grid.len() * n);
    if grid.is_empty() {
        return Ok(out);
    }
    out.extend_from_slice(y0);
    if grid.len() == 1 {
        return Ok(out);
    }
    if n == 0 {
        for _ in 1..grid.len() {
            out.extend_from_slice(y0);
        }
        return Ok(out);
    }

    let t_end = *grid.last().expect("non-empty");
    let mut work = Work {
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
        y_new: vec![0.0; n],
        err: vec![0.0; n],
    };
    let mut t = grid[0];
    let mut y = y0.to_vec();
    eval(sys, t, &y, &mut work.k[0])?;
    let mut h = initial_step(sys, t, &y, &work.k[0].clone(), t_end - t, cfg, &mut work)?;
    let mut next_grid = 1usize;
    let mut steps = 0usize;
    let mut rejected_last = false;

    while next_grid < grid.len() {
        if steps >= cfg.max_steps {
            return Err(SimError::StepLimit { t_last: t });
        }
        steps += 1;

        let stop = if cfg.dense_output { t_end } else { grid[next_grid] };
        let mut clipped = false;
        let h_free = h;
        if t + h >= stop || (stop - (t + h)) < 1e-12 * stop.abs().max(1.0) {
            h = stop - t;
            clipped = true;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) * 4.0 {
            return Err(SimError::StepUnderflow { t });
        }

        match take_step(sys, t, &y, h, &mut work) {
            Ok(()) => {}
            Err(SimError::NonFinite { .. }) => {
                // Trial point left the finite region; retry with a smaller step.
                h *= MIN_FACTOR;
                rejected_last = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        let err_norm = {
            let mut acc = 0.0;
            for i in 0..n {
                let sc = cfg.atol + cfg.rtol * y[i].abs().max(work.y_new[i].abs());
                acc += (work.err[i] / sc).powi(2);
            }
            (acc / n as f64).sqrt()
        };
        if !err_norm.is_finite() {
            h *= MIN_FACTOR;
            rejected_last = true;
            continue;
        }

        if err_norm <= 1.0 {
            let t_new = if clipped { stop } else { t + h };
            // k[6] holds f(t_new, y_new) (first-same-as-last).
            while next_grid < grid.len() && grid[next_grid] <= t_new {
                let g = grid[next_grid];
                if g == t_new {
                    out.extend_from_slice(&work.y_new);
                } else {
                    let theta = (g - t) / h;
                    for i in 0..n {
                        out.push(hermite(
                            theta,
                            h,
                            y[i],
                            work.y_new[i],
                            work.k[0][i],
                            work.k[6][i],
                        ));
                    }
                }
                next_grid += 1;
            }
            t = t_new;
            y.copy_from_slice(&work.y_new);
            if let Some(obs) = observer.as_mut() {
                obs(t, &y);
            }
            let (k0, rest) = work.k.split_at_mut(1);
            k0[0].copy_from_slice(&rest[5]);

            let mut factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            h *= factor;
            if clipped && stop < t_end {
                // A grid stop shortened this step; don't let that shrink the next one.
                h = h.max(h_free.min(h / factor * MAX_FACTOR));
            }
        } else {
            h *= (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            rejected_last = true;
        }
    }
    Ok(out)
}

#[inline]
fn hermite(theta: f64, h: f64, y0: f64, y1: f64, f0: f64, f1: f64) -> f64 {
    let dy = y1 - y0;
    (1.0 - theta) * y0
        + theta * y1
        + theta * (theta - 1.0) * ((1.0 - 2.0 * theta) * dy + (theta - 1.0) * h * f0 + theta * h * f1)
}

/// One trial step. Leaves the 5th-order solution in `work.y_new`,
/// `f(t+h, y_new)` in `work.k[6]` and the local error estimate in `work.err`.
fn take_step<S: OdeSystem + ?Sized>(
    sys: &mut S,
    t: f64,
    y: &[f64],
    h: f64,
    work: &mut Work,
) -> Result<(), SimError> {
    let n = y.len();
    let Work { k, tmp, y_new, err } = work;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k[0][i];
    }
    eval(sys, t + C2 * h, tmp, &mut k[1])?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    eval(sys, t + C3 * h, tmp, &mut k[2])?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    eval(sys, t + C4 * h, tmp, &mut k[3])?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    eval(sys, t + C5 * h, tmp, &mut k[4])?;
    for i in 0..n {
        tmp[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    eval(sys, t + h, tmp, &mut k[5])?;
    for i in 0..n {
        y_new[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    eval(sys, t + h, y_new, &mut k[6])?;
    for i in 0..n {
        err[i] = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                + E7 * k[6][i]);
    }
    Ok(())
}
