use super::trajectory::check_grid;
use super::SimError;

/// An exogenous species trajectory fed into a subsystem.
///
/// Interpolates a C2 cubic spline through the backing points. End slopes are
/// taken from the derivative of the interpolating cubic through the four
/// outermost points, which keeps the spline fourth-order accurate up to the
/// boundary. Queries outside the backing span return the boundary value.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    species: String,
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl InputSignal {
    pub fn new(species: impl Into<String>, knots: Vec<f64>, values: Vec<f64>) -> Result<Self, SimError> {
        check_grid(&knots)?;
        if knots.is_empty() || knots.len() != values.len() {
            return Err(SimError::Shape(
                "input signal needs matching, non-empty knots and values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: knots[0] });
        }
        let slopes = spline_slopes(&knots, &values);
        Ok(Self {
            species: species.into(),
            knots,
            values,
            slopes,
        })
    }

    pub fn species(&self) -> &str {
        &self.species
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().expect("non-empty"))
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 || t <= self.knots[0] {
            return self.values[0];
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        // knots[i] <= t < knots[i+1]
        let i = self.knots.partition_point(|&k| k <= t) - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let s = (t - self.knots[i]) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}

/// Derivative at `x[at]` of the polynomial interpolating all given points.
fn lagrange_derivative(x: &[f64], y: &[f64], at: usize) -> f64 {
    let x0 = x[at];
    let mut d = 0.0;
    for j in 0..x.len() {
        let lj = if j == at {
            y[j] * x
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != at)
                .map(|(_, xk)| 1.0 / (x0 - xk))
                .sum::<f64>()
        } else {
            let num: f64 = x
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j && k != at)
                .map(|(_, xk)| x0 - xk)
                .product();
            let den: f64 = x
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, xk)| x[j] - xk)
                .product();
            y[j] * num / den
        };
        d += lj;
    }
    d
}

fn spline_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    match n {
        1 => return vec![0.0],
        2 => {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            return vec![s, s];
        }
        _ => {}
    }
    let m = n.min(4);
    let first = lagrange_derivative(&x[..m], &y[..m], 0);
    let last = lagrange_derivative(&x[n - m..], &y[n - m..], m - 1);

    // Interior C2 conditions in slope form:
    // h_i m_{i-1} + 2(h_{i-1}+h_i) m_i + h_{i-1} m_{i+1}
    //     = 3 (h_i d_{i-1} + h_{i-1} d_i)
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut lower = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for r in 0..k {
        let i = r + 1;
        lower[r] = h[i];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        upper[r] = h[i - 1];
        rhs[r] = 3.0 * (h[i] * d[i - 1] + h[i - 1] * d[i]);
    }
    rhs[0] -= lower[0] * first;
    rhs[k - 1] -= upper[k - 1] * last;
    // Thomas algorithm; the system is strictly diagonally dominant.
    for r in 1..k {
        let w = lower[r] / diag[r - 1];
        diag[r] -= w * upper[r - 1];
        rhs[r] -= w * rhs[r - 1];
    }
    let mut inner = vec![0.0; k];
    inner[k - 1] = rhs[k - 1] / diag[k - 1];
    for r in (0..k - 1).rev() {
        inner[r] = (rhs[r] - upper[r] * inner[r + 1]) / diag[r];
    }
    let mut out = Vec::with_capacity(n);
    out.push(first);
    out.extend(inner);
    out.push(last);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics_exactly() {
        let f = |t: f64| 0.5 * t * t * t - t * t + 3.0 * t - 1.0;
        let knots: Vec<f64> = vec![0.0, 0.3, 1.0, 1.2, 2.0, 3.5, 4.0];
        let s = InputSignal::new("X", knots.clone(), knots.iter().map(|&t| f(t)).collect()).unwrap();
        for i in 0..=400 {
            let t = 4.0 * i as f64 / 400.0;
            assert!((s.value(t) - f(t)).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn passes_through_knots_and_clamps() {
        let s = InputSignal::new("X", vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.value(0.0), 1.0);
        assert_eq!(s.value(1.0), 3.0);
        assert_eq!(s.value(2.0), 2.0);
        assert_eq!(s.value(-5.0), 1.0);
        assert_eq!(s.value(7.0), 2.0);
    }

    #[test]
    fn fourth_order_convergence_on_exponential() {
        let err = |n: usize| {
            let knots: Vec<f64> = (0..n).map(|i| 5.0 * i as f64 / (n - 1) as f64).collect();
            let s = InputSignal::new("X", knots.clone(), knots.iter().map(|t| (-t).exp()).collect())
                .unwrap();
            (0..1000)
                .map(|i| {
                    let t = 5.0 * i as f64 / 999.0;
                    (s.value(t) - (-t).exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(21) / err(41);
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn degenerate_sizes() {
        let one = InputSignal::new("X", vec![1.0], vec![4.0]).unwrap();
        assert_eq!(one.value(0.0), 4.0);
        assert_eq!(one.value(3.0), 4.0);
        let two = InputSignal::new("X", vec![0.0, 2.0], vec![0.0, 4.0]).unwrap();
        assert!((two.value(0.5) - 1.0).abs() < 1e-14);
    }
}
