use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use subsysfit::benchmarks::{self, generate_observations, BenchmarkSpec, BENCHMARK_NAMES};
use subsysfit::data::{self, GenerationInfo, ObservationSet, GENERATION_FILE, TRUTH_FILE};
use subsysfit::gp::{interpolate_series, FitOptions, GpHyperparams};
use subsysfit::mcmc::{ParameterPosterior, SampleMetadata};
use subsysfit::orchestrator::{self, EstimationReport, Mode};
use subsysfit::sim::{linspace, Trajectory};
use subsysfit::summary::{self, ErrorTable, BIN_WIDTH};
use subsysfit::{decompose, parse_model, OdeModel};

use crate::config::RunConfig;
use crate::svg::{histogram_svg, Chart, Mark, Series};
use crate::{Failure, Outcome};

pub const OUT_ENV: &str = "SUBFIT_OUT";
pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_DIR: &str = "samples";

fn out_dir(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
        root.join(default_name)
    })
}

fn create(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn benchmark(name: &str, points: Option<usize>) -> Result<BenchmarkSpec, Failure> {
    if points.is_some_and(|p| p < 3) {
        return Err(Failure::Usage("--points must be at least 3".into()));
    }
    benchmarks::by_name(name, points).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown benchmark `{name}` (expected one of: {})",
            BENCHMARK_NAMES.join(", ")
        ))
    })
}

fn series_points(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    times.iter().copied().zip(values.iter().copied()).collect()
}

pub fn generate(
    name: &str,
    noise: f64,
    seed: u64,
    points: Option<usize>,
    out: Option<PathBuf>,
) -> Result<Outcome, Failure> {
    let spec = benchmark(name, points)?;
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Failure::Usage(format!("--noise must be a non-negative number, got {noise}")));
    }
    let dir = out_dir(out, &format!("{name}-noise{noise}-seed{seed}"));
    let g = generate_observations(&spec, noise, seed)?;
    write_data(&dir, &spec, &g)?;
    println!("wrote {} series to {}", g.observations.series.len(), dir.display());
    Ok(Outcome::Done)
}

fn write_data(dir: &Path, spec: &BenchmarkSpec, g: &benchmarks::GeneratedData) -> anyhow::Result<()> {
    g.observations.write_dir(dir)?;
    data::write_trajectory(&dir.join(TRUTH_FILE), &g.truth)?;
    data::write_json(
        &dir.join(GENERATION_FILE),
        &GenerationInfo {
            benchmark: spec.name.clone(),
            seed: g.seed,
            noise_std: g.noise_std,
            times: spec.observation_times.clone(),
        },
    )?;
    Ok(())
}

#[derive(serde::Serialize)]
struct SeriesFit {
    species: String,
    hyperparams: GpHyperparams,
    noise_std: f64,
    log_likelihood: f64,
    /// Range-normalized RMSE against `truth.csv` on the dense grid, when present.
    truth_rmse: Option<f64>,
}

/// The dense grid the estimator interpolates onto.
fn shared_grid(obs: &ObservationSet, factor: usize) -> Vec<f64> {
    let t0 = obs.series.iter().map(|s| s.times[0]).fold(f64::INFINITY, f64::min);
    let t1 = obs
        .series
        .iter()
        .map(|s| s.times[s.times.len() - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let n = obs.series.iter().map(|s| s.times.len()).max().unwrap_or(0);
    linspace(t0, t1, factor * n)
}

fn truth_column(truth: &Trajectory, species: &str, grid: &[f64]) -> Option<Vec<f64>> {
    let col = truth.column_by_name(species)?;
    let sig = subsysfit::InputSignal::new(species, truth.times().to_vec(), col).ok()?;
    Some(grid.iter().map(|&t| sig.value(t)).collect())
}

pub fn interpolate(
    data_dir: &Path,
    seed: u64,
    restarts: usize,
    grid_factor: usize,
    out: Option<PathBuf>,
) -> Result<Outcome, Failure> {
    if restarts == 0 || grid_factor == 0 {
        return Err(Failure::Usage("--restarts and --grid-factor must be positive".into()));
    }
    let obs = ObservationSet::read_dir(data_dir)?;
    let truth = data_dir.join(TRUTH_FILE);
    let truth = truth.exists().then(|| data::read_trajectory(&truth)).transpose()?;
    let dir = out_dir(out, "interpolation");
    create(&dir)?;
    let grid = shared_grid(&obs, grid_factor);
    let opts = FitOptions {
        restarts,
        seed,
        ..FitOptions::default()
    };
    let mut fits = Vec::new();
    let mut columns = Vec::new();
    let mut names = Vec::new();
    for s in &obs.series {
        let it = interpolate_series(&s.times, &s.values, &grid, &opts)
            .with_context(|| format!("interpolating {}", s.species))?;
        let reference = truth.as_ref().and_then(|t| truth_column(t, &s.species, &grid));
        let truth_rmse = reference.as_ref().map(|r| {
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            let mse = it.mean.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r.len() as f64;
            mse.sqrt() / range
        });
        let mut chart = Chart::new(format!("{} interpolation", s.species), "t", &s.species)
            .with(Series::new("GP mean", series_points(&grid, &it.mean), Mark::Line))
            .with(Series::new("observed", series_points(&s.times, &s.values), Mark::Cross));
        if let Some(at_obs) = truth.as_ref().and_then(|t| truth_column(t, &s.species, &s.times)) {
            chart = chart.with(Series::new("truth", series_points(&s.times, &at_obs), Mark::Circle));
        }
        write_text(&dir.join(format!("{}.svg", s.species)), &chart.to_svg())?;
        fits.push(SeriesFit {
            species: s.species.clone(),
            hyperparams: it.hyperparams,
            noise_std: it.noise_std,
            log_likelihood: it.log_likelihood,
            truth_rmse,
        });
        names.push(s.species.clone());
        columns.push(it.mean);
    }
    let dense = Trajectory::from_columns(grid, names, &columns)?;
    data::write_trajectory(&dir.join("interpolated.csv"), &dense)?;
    data::write_json(&dir.join("interpolation.json"), &fits)?;
    for f in &fits {
        match f.truth_rmse {
            Some(r) => println!("{:<28} noise std {:.4}  range-RMSE vs truth {:.4}", f.species, f.noise_std, r),
            None => println!("{:<28} noise std {:.4}", f.species, f.noise_std),
        }
    }
    println!("wrote {} interpolations to {}", fits.len(), dir.display());
    Ok(Outcome::Done)
}

struct Loaded {
    model: OdeModel,
    grouping: Option<Vec<Vec<String>>>,
    obs: ObservationSet,
    generated: Option<(BenchmarkSpec, benchmarks::GeneratedData)>,
}

fn load_inputs(model_arg: &str, rc: &RunConfig) -> Result<Loaded, Failure> {
    let path = Path::new(model_arg);
    let (model, spec) = if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let model = parse_model(&text).with_context(|| format!("parsing {}", path.display()))?;
        (model, None)
    } else {
        let spec = benchmark(model_arg, rc.points)?;
        (spec.model.clone(), Some(spec))
    };
    let grouping = rc
        .grouping
        .clone()
        .or_else(|| spec.as_ref().and_then(|s| s.grouping.clone()));
    match (&rc.data, spec) {
        (Some(dir), _) => Ok(Loaded {
            model,
            grouping,
            obs: ObservationSet::read_dir(dir)?,
            generated: None,
        }),
        (None, Some(spec)) => {
            let noise = rc.noise.unwrap_or(0.0);
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Failure::Usage(format!("--noise must be a non-negative number, got {noise}")));
            }
            let g = generate_observations(&spec, noise, rc.estimation.chain.seed)?;
            Ok(Loaded {
                model,
                grouping,
                obs: g.observations.clone(),
                generated: Some((spec, g)),
            })
        }
        (None, None) => Err(Failure::Usage("a model file needs --data".into())),
    }
}

pub fn estimate(model_arg: &str, flags: crate::config::FileConfig) -> Result<Outcome, Failure> {
    let rc = RunConfig::resolve(flags).map_err(Failure::Usage)?;
    let loaded = load_inputs(model_arg, &rc)?;
    let model = &loaded.model;
    let mode = if rc.whole_system { "whole" } else { "decomposed" };
    let dir = out_dir(
        rc.out.clone(),
        &format!("estimate-{}-{mode}-seed{}", model.name(), rc.estimation.chain.seed),
    );
    create(&dir)?;
    if let Some((spec, g)) = &loaded.generated {
        write_data(&dir.join("data"), spec, g)?;
    }

    let run = if rc.whole_system {
        let mut cfg = rc.estimation.clone();
        let subsystems = decompose(model, loaded.grouping.as_deref())
            .map_err(|e| Failure::Usage(e.to_string()))?
            .len();
        let budget = rc
            .budget
            .unwrap_or((subsystems * cfg.chain.iterations) as u64);
        cfg.chain = orchestrator::matched_budget(&cfg.chain, budget);
        orchestrator::whole_system_baseline(model, &loaded.obs, &cfg)?
    } else {
        if let Some(g) = &rc.grouping {
            decompose(model, Some(g)).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        orchestrator::run_estimation(model, &loaded.obs, loaded.grouping.as_deref(), &rc.estimation, rc.workers)?
    };
    let report = &run.report;

    write_text(&dir.join(REPORT_FILE), &report.to_json())?;
    data::write_trajectory(&dir.join("final_trajectory.csv"), &report.final_trajectory)?;
    data::write_trajectory(&dir.join("interpolated.csv"), &report.interpolated)?;
    let samples = dir.join(SAMPLES_DIR);
    create(&samples)?;
    for (i, post) in run.posteriors.iter().enumerate() {
        let path = samples.join(format!("sub{i}.csv"));
        let f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        post.write_samples_csv(std::io::BufWriter::new(f))?;
        data::write_json(
            &samples.join(format!("sub{i}.json")),
            &SampleMetadata::new(post, &report.config.chain),
        )?;
    }
    write_fit_plots(&dir, report, &loaded.obs)?;
    write_text(
        &dir.join("timings.json"),
        &serde_json::to_string_pretty(&run.round_seconds)?,
    )?;

    for r in &report.rounds {
        println!(
            "round {}: metric {:.3e}, {} reused ({:.1}s)",
            r.round,
            r.metric,
            r.reused.len(),
            run.round_seconds.get(r.round).copied().unwrap_or(0.0)
        );
    }
    for s in &report.subsystems {
        if let Some(w) = &s.warning {
            println!("warning: subsystem {:?}: {w}", s.spec.owned_species);
        }
    }
    if let Some(m) = orchestrator::median_relative_error(report) {
        println!("median relative error {m:.4}");
    }
    println!("likelihood evaluations {}", report.likelihood_evaluations);
    println!("wrote {}", dir.join(REPORT_FILE).display());
    if report.mode == Mode::Decomposed && !report.converged {
        println!("not converged after {} rounds", report.rounds.len());
        return Ok(Outcome::NotConverged);
    }
    Ok(Outcome::Done)
}

/// Predictions at the final estimates against the data, one plot per species.
fn write_fit_plots(dir: &Path, report: &EstimationReport, obs: &ObservationSet) -> anyhow::Result<()> {
    let tr = &report.final_trajectory;
    for (j, name) in tr.species().iter().enumerate() {
        let mut chart = Chart::new(format!("{name} fit"), "t", name.as_str()).with(Series::new(
            "prediction",
            series_points(tr.times(), &tr.column(j)),
            Mark::Line,
        ));
        if let Some(s) = obs.get(name) {
            chart = chart.with(Series::new("data", series_points(&s.times, &s.values), Mark::Cross));
        }
        write_text(&dir.join(format!("fit_{name}.svg")), &chart.to_svg())?;
    }
    Ok(())
}

fn read_report(path: &Path) -> anyhow::Result<EstimationReport> {
    data::read_json(path).with_context(|| format!("reading report {}", path.display()))
}

fn print_statistics(label: &str, errors: &[f64], threshold: f64) -> summary::ErrorStatistics {
    let st = summary::error_statistics(errors, Some(threshold));
    println!(
        "{label}: {} errors, mean {:.3}, median {:.3}, {} excluded above {}",
        errors.len(),
        st.mean,
        st.median,
        st.excluded,
        st.threshold
    );
    st
}

pub fn report(
    path: &Path,
    samples: Option<PathBuf>,
    threshold: f64,
    out: Option<PathBuf>,
) -> Result<Outcome, Failure> {
    if !(threshold > 0.0) {
        return Err(Failure::Usage("--threshold must be positive".into()));
    }
    let rep = read_report(path)?;
    let dir = out_dir(out, "report");
    create(&dir)?;

    let mut table = ErrorTable::default();
    let mut text = String::new();
    for p in &rep.parameters {
        if let Some(t) = p.truth.filter(|t| *t != 0.0) {
            table.push(p.name.clone(), t, p.estimates.iter().map(|e| e.map).collect());
        }
    }
    if table.rows.is_empty() {
        for p in &rep.parameters {
            let est: Vec<String> = p.estimates.iter().map(|e| format!("{:.4}", e.map)).collect();
            text.push_str(&format!("{:<28} {}\n", p.name, est.join(", ")));
        }
    } else {
        text = table.to_text();
        let errors = table.errors();
        let st = print_statistics("relative error", &errors, threshold);
        text.push_str(&format!(
            "\nmean {:.4}  median {:.4}  excluded above {}: {}\n",
            st.mean, st.median, st.threshold, st.excluded
        ));
        let f = fs::File::create(dir.join("errors.csv")).context("writing errors.csv")?;
        table.write_csv(f)?;
        data::write_json(&dir.join("error_statistics.json"), &st)?;
        write_text(
            &dir.join("errors.svg"),
            &histogram_svg("Relative error of estimates", "relative error", 0.0, BIN_WIDTH, &st.histogram),
        )?;
    }
    write_text(&dir.join("estimates.txt"), &text)?;
    print!("{text}");

    let samples = samples.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join(SAMPLES_DIR));
    let kde_dir = dir.join("kde");
    let mut plots = 0;
    if samples.is_dir() {
        create(&kde_dir)?;
        for (i, sub) in rep.subsystems.iter().enumerate() {
            let file = samples.join(format!("sub{i}.csv"));
            let f = fs::File::open(&file).with_context(|| format!("reading {}", file.display()))?;
            let (names, rows) = ParameterPosterior::read_samples_csv(f)?;
            for (j, name) in names.iter().enumerate() {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                if col.is_empty() {
                    continue;
                }
                let d = summary::density(&col);
                let peak = d.peak();
                let mut chart = Chart::new(
                    format!("{name}, subsystem {i} ({})", sub.spec.owned_species.join(", ")),
                    name.as_str(),
                    "density",
                )
                .with(Series::new("KDE", series_points(&d.grid, &d.density), Mark::Line));
                let map = d.argmax();
                chart = chart.with(Series::new("MAP", vec![(map, 0.0), (map, peak)], Mark::Line));
                if let Some(t) = rep.parameter(name).and_then(|p| p.truth) {
                    chart = chart.with(Series::new("truth", vec![(t, 0.0), (t, peak)], Mark::Line));
                }
                write_text(&kde_dir.join(format!("{name}_sub{i}.svg")), &chart.to_svg())?;
                let f = fs::File::create(kde_dir.join(format!("{name}_sub{i}.csv")))?;
                d.write_csv(f)?;
                plots += 1;
            }
        }
    }
    println!("wrote {plots} density plots and tables to {}", dir.display());
    Ok(Outcome::Done)
}

pub fn reference(threshold: f64) -> Result<Outcome, Failure> {
    if !(threshold > 0.0) {
        return Err(Failure::Usage("--threshold must be positive".into()));
    }
    let rows = summary::reference_rows();
    let mcmc: Vec<f64> = rows.iter().map(|r| r.mcmc).collect();
    let copasi: Vec<f64> = rows.iter().map(|r| r.copasi).collect();
    print_statistics("published MCMC", &mcmc, threshold);
    print_statistics("published COPASI", &copasi, threshold);
    Ok(Outcome::Done)
}
