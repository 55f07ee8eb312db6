//! Bundled test systems and the synthetic observation generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationSet, ObservedSeries};
use crate::model::OdeModel;
use crate::parse::parse_model;
use crate::sim::{linspace, simulate_model, IntegratorConfig, SimError, Trajectory};

pub const CASCADE_SOURCE: &str = include_str!("../models/cascade.model");
pub const GRN_SOURCE: &str = include_str!("../models/grn.model");

pub const BENCHMARK_NAMES: [&str; 2] = ["cascade", "grn"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub name: String,
    pub model: OdeModel,
    pub observation_times: Vec<f64>,
    pub noise_levels: Vec<f64>,
    /// `None` means one species per subsystem.
    pub grouping: Option<Vec<Vec<String>>>,
    pub seed: u64,
}

pub fn cascade_model() -> BenchmarkSpec {
    cascade_with_points(15)
}

pub fn cascade_with_points(n: usize) -> BenchmarkSpec {
    BenchmarkSpec {
        name: "cascade".into(),
        model: parse_model(CASCADE_SOURCE).expect("bundled cascade model parses"),
        observation_times: linspace(0.0, 100.0, n),
        noise_levels: vec![0.0, 0.5, 1.0],
        grouping: None,
        seed: 0,
    }
}

pub fn grn_model() -> BenchmarkSpec {
    grn_with_points(21)
}

pub fn grn_with_points(n: usize) -> BenchmarkSpec {
    let grouping = (1..=7)
        .map(|i| vec![format!("pp{i}_mrna"), format!("p{i}")])
        .collect();
    BenchmarkSpec {
        name: "grn".into(),
        model: parse_model(GRN_SOURCE).expect("bundled gene network model parses"),
        observation_times: linspace(0.0, 10.0, n),
        noise_levels: vec![0.0, 0.01, 0.05],
        grouping: Some(grouping),
        seed: 0,
    }
}

/// Look up a bundled benchmark by name, with an optional observation count.
pub fn by_name(name: &str, points: Option<usize>) -> Option<BenchmarkSpec> {
    match name {
        "cascade" => Some(points.map_or_else(cascade_model, cascade_with_points)),
        "grn" => Some(points.map_or_else(grn_model, grn_with_points)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedData {
    pub observations: ObservationSet,
    /// Noise-free trajectory on a grid 20 times finer than the observations.
    pub truth: Trajectory,
    /// Noise-free values at the observation times.
    pub truth_at_observations: Trajectory,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("benchmark model has no true parameter values")]
    NoTruth,
    #[error("noise std must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Simulate the true model and add i.i.d. Gaussian noise at the observation
/// times. Species are processed in declaration order, times in order.
pub fn generate_observations(
    spec: &BenchmarkSpec,
    noise_std: f64,
    seed: u64,
) -> Result<GeneratedData, GenerateError> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(GenerateError::Noise(noise_std));
    }
    let truth_params = spec.model.true_parameters().ok_or(GenerateError::NoTruth)?;
    let cfg = IntegratorConfig::default();
    let obs = &spec.observation_times;
    let at_obs = simulate_model(&spec.model, &truth_params, obs, &cfg)?;
    let t0 = obs[0];
    let t1 = *obs.last().expect("non-empty observation grid");
    let fine_grid = linspace(t0, t1, (obs.len() - 1).max(1) * 20 + 1);
    let truth = simulate_model(&spec.model, &truth_params, &fine_grid, &cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).expect("valid std");
    let series = at_obs
        .species()
        .iter()
        .enumerate()
        .map(|(j, name)| ObservedSeries {
            species: name.clone(),
            times: obs.clone(),
            values: at_obs
                .column(j)
                .into_iter()
                .map(|v| if noise_std > 0.0 { v + normal.sample(&mut rng) } else { v })
                .collect(),
        })
        .collect();
    Ok(GeneratedData {
        observations: ObservationSet { series },
        truth,
        truth_at_observations: at_obs,
        noise_std,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{decompose, DependencyGraph};

    #[test]
    fn cascade_shape() {
        let b = cascade_model();
        assert_eq!(b.model.species().len(), 5);
        assert_eq!(b.model.parameter_names(), vec!["k1", "k2", "k3", "k4", "V", "Km"]);
        assert_eq!(decompose(&b.model, None).unwrap().len(), 5);
        assert_eq!(b.noise_levels, vec![0.0, 0.5, 1.0]);
        assert_eq!(b.observation_times.len(), 15);
        for p in b.model.parameters() {
            let t = p.true_value.unwrap();
            assert_eq!(p.lower, 0.0);
            assert!((p.upper - 10.0 * t).abs() < 1e-12);
        }
        assert!(DependencyGraph::of(&b.model).is_weakly_connected());
    }

    #[test]
    fn grn_shape() {
        let b = grn_model();
        assert_eq!(b.model.species().len(), 14);
        assert_eq!(b.model.parameters().len(), 48);
        let subs = decompose(&b.model, b.grouping.as_deref()).unwrap();
        assert_eq!(subs.len(), 7);
        assert!(DependencyGraph::of(&b.model).is_weakly_connected());
        let get = |n: &str| b.model.parameters()[b.model.parameter_index(n).unwrap()].true_value.unwrap();
        assert_eq!(get("pp7_mrna_degradation_rate"), 0.217);
        assert_eq!(get("v6_Kd"), 9.322);
        for p in b.model.parameters() {
            assert_eq!((p.lower, p.upper), (0.0, 12.0));
        }
    }

    #[test]
    fn noiseless_observations_equal_truth() {
        let b = cascade_model();
        let g = generate_observations(&b, 0.0, 3).unwrap();
        for (j, s) in g.observations.series.iter().enumerate() {
            assert_eq!(s.values, g.truth_at_observations.column(j));
        }
    }

    #[test]
    fn seeds_change_noise_not_truth() {
        let b = cascade_model();
        let a = generate_observations(&b, 0.5, 1).unwrap();
        let c = generate_observations(&b, 0.5, 2).unwrap();
        assert_eq!(a.truth, c.truth);
        assert_ne!(a.observations, c.observations);
        assert_eq!(a, generate_observations(&b, 0.5, 1).unwrap());
    }

    #[test]
    fn truth_is_finite_and_non_negative() {
        for b in [cascade_model(), grn_model()] {
            let g = generate_observations(&b, 0.0, 0).unwrap();
            for row in g.truth.rows() {
                assert!(row.iter().all(|v| v.is_finite() && *v >= -1e-9), "{}", b.name);
            }
        }
    }
}
