use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SimError;

/// Concentration values on a strictly increasing time grid, one column per
/// species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    times: Vec<f64>,
    species: Vec<String>,
    // row-major, `times.len() * species.len()`
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    species: Vec<String>,
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = SimError;

    fn try_from(r: TrajectoryRepr) -> Result<Self, SimError> {
        let width = r.species.len();
        if r.rows.iter().any(|row| row.len() != width) {
            return Err(SimError::Shape("row width differs from species count".into()));
        }
        Trajectory::new(r.times, r.species, r.rows.concat())
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> Self {
        let rows = t.rows().map(<[f64]>::to_vec).collect();
        TrajectoryRepr {
            species: t.species,
            times: t.times,
            rows,
        }
    }
}

pub(crate) fn check_grid(times: &[f64]) -> Result<(), SimError> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(SimError::Grid("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::Grid("times must be strictly increasing".into()));
    }
    Ok(())
}

impl Trajectory {
    pub fn new(times: Vec<f64>, species: Vec<String>, values: Vec<f64>) -> Result<Self, SimError> {
        check_grid(&times)?;
        if values.len() != times.len() * species.len() {
            return Err(SimError::Shape(format!(
                "{} values for {} times x {} species",
                values.len(),
                times.len(),
                species.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                t: times[i / species.len().max(1)],
            });
        }
        Ok(Self {
            times,
            species,
            values,
        })
    }

    /// Build from per-species columns.
    pub fn from_columns(
        times: Vec<f64>,
        species: Vec<String>,
        columns: &[Vec<f64>],
    ) -> Result<Self, SimError> {
        if columns.len() != species.len() || columns.iter().any(|c| c.len() != times.len()) {
            return Err(SimError::Shape("column lengths differ from grid".into()));
        }
        let mut values = Vec::with_capacity(times.len() * species.len());
        for i in 0..times.len() {
            values.extend(columns.iter().map(|c| c[i]));
        }
        Self::new(times, species, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> usize {
        self.species.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.species.len() + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.species.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.times.len()).map(move |i| self.row(i))
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.species_index(name).map(|j| self.column(j))
    }

    /// Restrict to the named species, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Trajectory, SimError> {
        let cols = names
            .iter()
            .map(|n| {
                self.column_by_name(n)
                    .ok_or_else(|| SimError::UnknownSpecies(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::from_columns(self.times.clone(), names.to_vec(), &cols)
    }

    /// Write as CSV with header `t,<species...>` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.species.iter().cloned());
        wr.write_record(&header).map_err(csv_err)?;
        for (t, row) in self.times.iter().zip(self.rows()) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(format_f64(*t));
            rec.extend(row.iter().map(|v| format_f64(*v)));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.get(0).map(str::trim) != Some("t") {
            return Err(SimError::Io("first CSV column must be `t`".into()));
        }
        let species: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != species.len() + 1 {
                return Err(SimError::Io(format!(
                    "row with {} fields, expected {}",
                    rec.len(),
                    species.len() + 1
                )));
            }
            let mut fields = rec.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| SimError::Io(format!("bad number `{f}`")))
            });
            times.push(fields.next().expect("non-empty record")?);
            for v in fields {
                values.push(v?);
            }
        }
        Trajectory::new(times, species, values)
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(e.to_string())
}

/// Sum of squared differences over one species column. Both trajectories
/// must share the time grid exactly.
pub fn sum_squared_error(sim: &Trajectory, data: &Trajectory, species: &str) -> Result<f64, SimError> {
    if sim.times() != data.times() {
        return Err(SimError::Grid("time grids differ".into()));
    }
    let a = sim
        .species_index(species)
        .ok_or_else(|| SimError::UnknownSpecies(species.to_string()))?;
    let b = data
        .species_index(species)
        .ok_or_else(|| SimError::UnknownSpecies(species.to_string()))?;
    Ok(sim
        .rows()
        .zip(data.rows())
        .map(|(x, y)| {
            let d = y[b] - x[a];
            d * d
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(values: &[f64]) -> Trajectory {
        let times = (0..values.len()).map(|i| i as f64).collect();
        Trajectory::new(times, vec!["X".into()], values.to_vec()).unwrap()
    }

    #[test]
    fn sse_identical_is_zero() {
        let a = traj(&[1.0, 2.0, 3.0]);
        assert_eq!(sum_squared_error(&a, &a, "X").unwrap(), 0.0);
    }

    #[test]
    fn sse_constant_offset() {
        let a = traj(&[1.0, 2.0, 3.0, 4.0]);
        let b = traj(&[1.5, 2.5, 3.5, 4.5]);
        assert_eq!(sum_squared_error(&a, &b, "X").unwrap(), 4.0 * 0.25);
    }

    #[test]
    fn sse_grid_mismatch() {
        let a = traj(&[1.0, 2.0]);
        let b = Trajectory::new(vec![0.0, 2.0], vec!["X".into()], vec![1.0, 2.0]).unwrap();
        assert!(matches!(sum_squared_error(&a, &b, "X"), Err(SimError::Grid(_))));
    }

    #[test]
    fn rejects_non_increasing_grid() {
        assert!(Trajectory::new(vec![0.0, 0.0], vec!["X".into()], vec![1.0, 1.0]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], vec!["X".into()], vec![1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let t = traj(&vals);
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            let back = Trajectory::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn sse_matches_naive_loop(pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 10)) {
            let a = traj(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = traj(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let mut naive = 0.0;
            for i in 0..pairs.len() {
                naive += (pairs[i].1 - pairs[i].0).powi(2);
            }
            let got = sum_squared_error(&a, &b, "X").unwrap();
            prop_assert!((got - naive).abs() <= 1e-12 * naive.max(1.0));
        }
    }
}
