//! Posterior summaries: KDE curves, MAP, credible intervals and error tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Points in the grid used for MAP search and density output.
pub const MAP_GRID: usize = 512;
/// Histogram bin width for relative-error distributions.
pub const BIN_WIDTH: f64 = 0.5;
pub const DEFAULT_EXCLUSION: f64 = 10.0;

/// Published relative errors for the gene network: parameter, true value,
/// MCMC error, simulated-annealing error.
pub const REFERENCE_ERRORS: &str = include_str!("../fixtures/reference_errors.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Grid point of highest density (first one on ties).
    pub fn argmax(&self) -> f64 {
        let mut best = 0;
        for (i, d) in self.density.iter().enumerate() {
            if *d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    pub fn peak(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "density"])?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            wr.write_record([crate::sim::format_f64(*x), crate::sim::format_f64(*d)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data, `q` in [0,1].
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn quantile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of an empty sample");
    quantile_sorted(&sorted(samples), q)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the n-1 denominator.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Silverman's rule `1.06 min(sd, IQR/1.34) n^(-1/5)`. Falls back to the
/// standard deviation when the IQR is zero, and to `1e-6 |value|` (or
/// `1e-6`) when every sample is equal.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "bandwidth of an empty sample");
    let v = sorted(samples);
    let sd = std_dev(&v);
    if sd == 0.0 || v[0] == v[v.len() - 1] {
        let c = v[0].abs();
        return if c > 0.0 { 1e-6 * c } else { 1e-6 };
    }
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * (v.len() as f64).powf(-0.2)
}

/// Gaussian-kernel density of `samples` evaluated on `grid`.
///
/// # Panics
/// On an empty sample set.
pub fn kde(samples: &[f64], grid: &[f64]) -> DensityEstimate {
    let h = silverman_bandwidth(samples);
    kde_with_bandwidth(samples, grid, h)
}

pub fn kde_with_bandwidth(samples: &[f64], grid: &[f64], h: f64) -> DensityEstimate {
    assert!(!samples.is_empty(), "density of an empty sample");
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|x| {
            norm * samples
                .iter()
                .map(|s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    DensityEstimate {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
    }
}

/// KDE on `MAP_GRID` points spanning the sample range padded by three
/// bandwidths.
pub fn density(samples: &[f64]) -> DensityEstimate {
    let h = silverman_bandwidth(samples);
    let v = sorted(samples);
    let grid = crate::sim::linspace(v[0] - 3.0 * h, v[v.len() - 1] + 3.0 * h, MAP_GRID);
    kde_with_bandwidth(samples, &grid, h)
}

/// Argmax of the KDE over the padded sample range.
pub fn map_estimate(samples: &[f64]) -> f64 {
    density(samples).argmax()
}

/// Equal-tailed interval holding `mass` of the samples.
pub fn credible_interval(samples: &[f64], mass: f64) -> (f64, f64) {
    assert!(mass > 0.0 && mass < 1.0, "mass must lie in (0,1)");
    let v = sorted(samples);
    (
        quantile_sorted(&v, (1.0 - mass) / 2.0),
        quantile_sorted(&v, (1.0 + mass) / 2.0),
    )
}

/// Peak density over interquartile width, both measured after mapping the
/// samples onto [0,1] by the prior box. Zero-width posteriors give infinity.
pub fn sharpness(samples: &[f64], lower: f64, upper: f64) -> f64 {
    let w = upper - lower;
    let scaled: Vec<f64> = samples.iter().map(|s| (s - lower) / w).collect();
    let v = sorted(&scaled);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    density(&scaled).peak() / iqr
}

/// `|estimate - truth| / |truth|`.
///
/// # Panics
/// When `truth` is zero.
pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    assert!(truth != 0.0, "relative error against a zero truth");
    (estimate - truth).abs() / truth.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub parameter: String,
    pub truth: f64,
    pub estimates: Vec<f64>,
    pub relative_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStatistics {
    pub mean: f64,
    pub median: f64,
    /// Counts per `BIN_WIDTH` bin on [0, threshold]; the last bin is closed.
    pub histogram: Vec<usize>,
    pub threshold: f64,
    pub excluded: usize,
}

impl ErrorTable {
    pub fn push(&mut self, parameter: impl Into<String>, truth: f64, estimates: Vec<f64>) {
        let relative_errors = estimates.iter().map(|e| relative_error(*e, truth)).collect();
        self.rows.push(ErrorRow {
            parameter: parameter.into(),
            truth,
            estimates,
            relative_errors,
        });
    }

    /// Every relative error in row order.
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.relative_errors.iter().copied()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["parameter", "truth", "estimate", "relative_error"])?;
        for r in &self.rows {
            for (e, re) in r.estimates.iter().zip(&r.relative_errors) {
                wr.write_record([
                    r.parameter.clone(),
                    crate::sim::format_f64(r.truth),
                    crate::sim::format_f64(*e),
                    crate::sim::format_f64(*re),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Aligned text: parameter, value, estimates, relative errors.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.parameter.len()).max().unwrap_or(9).max(9);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:<30}  Rel. error", "Parameter", "Value", "Estimate(s)");
        for r in &self.rows {
            let est = r.estimates.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", ");
            let err = r
                .relative_errors
                .iter()
                .map(|e| format!("{e:.3}"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(out, "{:<width$}  {:>8.3}  {:<30}  {}", r.parameter, r.truth, est, err);
        }
        out
    }
}

/// Mean and median over all errors; histogram over errors not above
/// `threshold` (default 10).
///
/// # Panics
/// On an empty error list.
pub fn error_statistics(errors: &[f64], threshold: Option<f64>) -> ErrorStatistics {
    assert!(!errors.is_empty(), "statistics of an empty error list");
    let threshold = threshold.unwrap_or(DEFAULT_EXCLUSION);
    let bins = ((threshold / BIN_WIDTH).ceil() as usize).max(1);
    let mut histogram = vec![0; bins];
    let mut excluded = 0;
    for &e in errors {
        if e > threshold {
            excluded += 1;
        } else {
            let b = ((e / BIN_WIDTH) as usize).min(bins - 1);
            histogram[b] += 1;
        }
    }
    ErrorStatistics {
        mean: mean(errors),
        median: median(errors),
        histogram,
        threshold,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceRow {
    pub parameter: String,
    pub value: f64,
    pub mcmc: f64,
    pub copasi: f64,
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    csv::Reader::from_reader(REFERENCE_ERRORS.as_bytes())
        .deserialize()
        .map(|r| r.expect("bundled reference table is well formed"))
        .collect()
}
