//! Observed time series and their on-disk layout.
//!
//! A data directory holds one `<species>.csv` per observed species (header
//! `t,<species>`), an optional `truth.csv` trajectory and an optional
//! `generation.json` sidecar.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{SimError, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    pub species: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSet {
    pub series: Vec<ObservedSeries>,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: SimError,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("no observation files in {0}")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Metadata written next to generated observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub benchmark: String,
    pub seed: u64,
    pub noise_std: f64,
    pub times: Vec<f64>,
}

pub const TRUTH_FILE: &str = "truth.csv";
pub const GENERATION_FILE: &str = "generation.json";

impl ObservationSet {
    pub fn get(&self, species: &str) -> Option<&ObservedSeries> {
        self.series.iter().find(|s| s.species == species)
    }

    pub fn species(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.species.as_str()).collect()
    }

    /// Write one CSV per series into `dir` (created if missing).
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for s in &self.series {
            let path = dir.join(format!("{}.csv", s.species));
            let tr = Trajectory::new(s.times.clone(), vec![s.species.clone()], s.values.clone())
                .map_err(|source| DataError::Format {
                    path: path.display().to_string(),
                    source,
                })?;
            write_trajectory(&path, &tr)?;
        }
        Ok(())
    }

    /// Read every single-species CSV in `dir`, skipping `truth.csv`.
    /// Series are ordered by species name.
    pub fn read_dir(dir: &Path) -> Result<Self, DataError> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "csv")
                    && p.file_name().is_some_and(|n| n != TRUTH_FILE)
            })
            .collect();
        paths.sort();
        let mut series = Vec::with_capacity(paths.len());
        for path in paths {
            let tr = read_trajectory(&path)?;
            if tr.width() != 1 {
                return Err(DataError::Invalid {
                    path: path.display().to_string(),
                    message: format!("expected one species column, found {}", tr.width()),
                });
            }
            series.push(ObservedSeries {
                species: tr.species()[0].clone(),
                times: tr.times().to_vec(),
                values: tr.column(0),
            });
        }
        if series.is_empty() {
            return Err(DataError::Empty(dir.display().to_string()));
        }
        Ok(Self { series })
    }
}

pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<(), DataError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    tr.write_csv(BufWriter::new(f)).map_err(|source| DataError::Format {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Trajectory::read_csv(f).map_err(|source| DataError::Format {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::Invalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Invalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
