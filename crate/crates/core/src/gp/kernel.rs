use std::f64::consts::FRAC_2_PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// MLP (arcsine) covariance hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    pub weight_variance: f64,
    pub bias_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn is_valid(&self) -> bool {
        self.signal_variance > 0.0
            && self.weight_variance > 0.0
            && self.bias_variance >= 0.0
            && self.noise_variance >= 0.0
            && [
                self.signal_variance,
                self.weight_variance,
                self.bias_variance,
                self.noise_variance,
            ]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `[ln σf², ln w, ln b, ln σn²]`
    pub fn to_log(&self) -> [f64; 4] {
        [
            self.signal_variance.ln(),
            self.weight_variance.ln(),
            self.bias_variance.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(z: &[f64; 4]) -> Self {
        Self {
            signal_variance: z[0].exp(),
            weight_variance: z[1].exp(),
            bias_variance: z[2].exp(),
            noise_variance: z[3].exp(),
        }
    }
}

#[inline]
fn ratio(x: f64, xp: f64, w: f64, b: f64) -> (f64, f64, f64) {
    let bx = w * x * x + b + 1.0;
    let bxp = w * xp * xp + b + 1.0;
    let r = ((w * (x * xp) + b) / (bx * bxp).sqrt()).clamp(-1.0, 1.0);
    (r, bx, bxp)
}

/// `σf² (2/π) asin((w x x' + b) / sqrt((w x² + b + 1)(w x'² + b + 1)))`
#[inline]
pub fn mlp_kernel(x: f64, xp: f64, h: &GpHyperparams) -> f64 {
    let (r, _, _) = ratio(x, xp, h.weight_variance, h.bias_variance);
    h.signal_variance * FRAC_2_PI * r.asin()
}

/// Kernel value and its derivatives with respect to `ln σf²`, `ln w`, `ln b`.
#[inline]
pub(crate) fn mlp_kernel_grad(x: f64, xp: f64, h: &GpHyperparams) -> (f64, [f64; 3]) {
    let (w, b) = (h.weight_variance, h.bias_variance);
    let (r, bx, bxp) = ratio(x, xp, w, b);
    let k = h.signal_variance * FRAC_2_PI * r.asin();
    let dk_dr = h.signal_variance * FRAC_2_PI / (1.0 - r * r).max(1e-300).sqrt();
    let s = (bx * bxp).sqrt();
    let dr_dw = x * xp / s - 0.5 * r * (x * x / bx + xp * xp / bxp);
    let dr_db = 1.0 / s - 0.5 * r * (1.0 / bx + 1.0 / bxp);
    (k, [k, dk_dr * dr_dw * w, dk_dr * dr_db * b])
}

/// Pairwise kernel matrix, filled from the upper triangle.
pub fn gram_matrix(xs: &[f64], h: &GpHyperparams) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = mlp_kernel(xs[i], xs[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
