//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (visible without `--nocapture`) and then asserts.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use subsysfit::benchmarks::{cascade_model, generate_observations, grn_model, grn_with_points, BenchmarkSpec};
use subsysfit::gp::{
    dense_grid, interpolate_series, log_marginal_likelihood, mlp_kernel, FitOptions, GpHyperparams, GpPosterior,
};
use subsysfit::mcmc::{run_chain, ChainConfig, LogTarget, SubsystemTarget};
use subsysfit::orchestrator::{
    matched_budget, median_relative_error, run_estimation, whole_system_baseline, EstimationConfig,
    EstimationReport, LikelihoodData,
};
use subsysfit::sim::{linspace, IntegratorConfig, Trajectory};
use subsysfit::summary::{error_statistics, reference_rows, relative_error};
use subsysfit::{parse_model, SubsystemSpec};

const SEEDS: [u64; 3] = [0, 1, 2];

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {tag} {name}: {detail}");
}

fn column(tr: &Trajectory, species: &str) -> Vec<f64> {
    let j = tr.species().iter().position(|s| s == species).unwrap();
    tr.column(j)
}

fn range(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

#[test]
fn published_error_aggregates() {
    let t = Instant::now();
    let rows = reference_rows();
    let mcmc = error_statistics(&rows.iter().map(|r| r.mcmc).collect::<Vec<_>>(), None);
    let copasi = error_statistics(&rows.iter().map(|r| r.copasi).collect::<Vec<_>>(), None);
    let secs = t.elapsed().as_secs_f64();
    let pass = (mcmc.mean - 1.521).abs() <= 0.01
        && (mcmc.median - 0.448).abs() <= 0.01
        && (copasi.mean - 1.862).abs() <= 0.01
        && (copasi.median - 0.503).abs() <= 0.01
        && secs < 1.0;
    verdict(
        "published error aggregates",
        pass,
        &format!(
            "MCMC mean {:.4} median {:.4}, COPASI mean {:.4} median {:.4}, {secs:.3} s",
            mcmc.mean, mcmc.median, copasi.mean, copasi.median
        ),
    );
    assert!(pass);
}

/// Relative error 0.5, or within a factor of five for the Michaelis-Menten
/// constants.
fn recovered(name: &str, map: f64, truth: f64) -> bool {
    if relative_error(map, truth) <= 0.5 {
        return true;
    }
    matches!(name, "V" | "Km") && map > 0.0 && map / truth <= 5.0 && truth / map <= 5.0
}

#[test]
fn cascade_noiseless_recovery() {
    let b = cascade_model();
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let g = generate_observations(&b, 0.0, seed).unwrap();
        let mut cfg = EstimationConfig::default();
        cfg.chain.seed = seed;
        let run = run_estimation(&b.model, &g.observations, b.grouping.as_deref(), &cfg, 4).unwrap();
        let hits = run
            .report
            .parameters
            .iter()
            .filter(|p| {
                let truth = p.truth.unwrap();
                p.estimates.iter().any(|e| recovered(&p.name, e.map, truth))
            })
            .count();
        pass &= hits >= 4;
        lines.push(format!("seed {seed}: {hits}/{}", run.report.parameters.len()));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict("cascade noiseless recovery", pass, &format!("{} ({secs:.0} s)", lines.join(", ")));
    assert!(pass);
}

#[test]
fn decomposition_beats_whole_system() {
    let b = cascade_model();
    let t = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let g = generate_observations(&b, 0.5, seed).unwrap();
        let mut cfg = EstimationConfig::default();
        cfg.chain.seed = seed;
        cfg.likelihood = LikelihoodData::Raw;
        let dec = run_estimation(&b.model, &g.observations, b.grouping.as_deref(), &cfg, 4).unwrap();
        let mut wcfg = cfg.clone();
        wcfg.chain = matched_budget(&cfg.chain, dec.report.likelihood_evaluations);
        let whole = whole_system_baseline(&b.model, &g.observations, &wcfg).unwrap();
        let d = median_relative_error(&dec.report).unwrap();
        let w = median_relative_error(&whole.report).unwrap();
        if d < w {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {d:.3} vs {w:.3}"));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = wins >= 2;
    verdict(
        "decomposition beats whole-system at matched budget",
        pass,
        &format!("{wins}/3 seeds, median rel. error decomposed vs whole: {} ({secs:.0} s)", lines.join("; ")),
    );
    assert!(pass);
}

/// Range-normalized RMSE of each species' interpolant against the noise-free
/// trajectory on the fine truth grid.
fn interpolation_rmse(b: &BenchmarkSpec, noise: f64, seed: u64) -> Vec<(String, f64, f64)> {
    let g = generate_observations(b, noise, seed).unwrap();
    let opts = FitOptions {
        seed,
        ..Default::default()
    };
    g.observations
        .series
        .iter()
        .map(|s| {
            let truth = column(&g.truth, &s.species);
            let it = interpolate_series(&s.times, &s.values, g.truth.times(), &opts).unwrap();
            let mse = it.mean.iter().zip(&truth).map(|(m, t)| (m - t).powi(2)).sum::<f64>() / truth.len() as f64;
            (s.species.clone(), mse.sqrt() / range(&truth), it.noise_std)
        })
        .collect()
}

#[test]
fn gp_interpolation_quality() {
    let b = cascade_model();
    let t = Instant::now();
    let levels: Vec<Vec<(String, f64, f64)>> = [0.0, 0.5, 1.0].iter().map(|&n| interpolation_rmse(&b, n, 0)).collect();
    let secs = t.elapsed().as_secs_f64();
    let noiseless_ok = levels[0].iter().all(|(_, r, _)| *r <= 0.02);
    let increasing = (0..levels[0].len())
        .filter(|&i| levels[0][i].1 < levels[1][i].1 && levels[1][i].1 < levels[2][i].1)
        .count();
    let pass = noiseless_ok && increasing >= 4 && secs < 60.0;
    let detail = (0..levels[0].len())
        .map(|i| {
            format!(
                "{} {:.4}/{:.3}/{:.3}",
                levels[0][i].0, levels[0][i].1, levels[1][i].1, levels[2][i].1
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        "GP interpolation quality",
        pass,
        &format!("RMSE/range at noise 0/0.5/1: {detail}; {increasing}/5 increasing ({secs:.1} s)"),
    );
    assert!(pass);
}

#[test]
fn gp_noise_self_estimation() {
    let b = cascade_model();
    let mut pass = true;
    let mut lines = Vec::new();
    for (noise, lo, hi) in [(0.5, 0.3, 0.7), (1.0, 0.6, 1.4)] {
        let g = generate_observations(&b, noise, 0).unwrap();
        let opts = FitOptions::default();
        let mut parts = Vec::new();
        for s in &g.observations.series {
            assert_eq!(s.times.len(), 15);
            let grid = dense_grid(&s.times, 1);
            let sd = interpolate_series(&s.times, &s.values, &grid, &opts).unwrap().noise_std;
            pass &= (lo..=hi).contains(&sd);
            parts.push(format!("{} {sd:.3}", s.species));
        }
        lines.push(format!("std {noise} in [{lo}, {hi}]: {}", parts.join(", ")));
    }
    verdict("GP noise self-estimation", pass, &lines.join("; "));
    assert!(pass);
}

const RAMP: &str = "model ramp;\nspecies X = 0;\nparam k in [0, 10] = 2;\nd(X) = k;\n";

fn batch_mcse(x: &[f64]) -> f64 {
    let b = (x.len() as f64).sqrt() as usize;
    let nb = x.len() / b;
    let means: Vec<f64> = (0..nb).map(|i| x[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

struct Steps {
    bounds: Vec<(f64, f64)>,
    log_w: Vec<f64>,
}

impl LogTarget for Steps {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
    fn log_density(&mut self, p: &[f64]) -> f64 {
        self.log_w[(p[0].floor() as usize).min(self.log_w.len() - 1)]
    }
}

#[test]
fn mcmc_statistical_correctness() {
    // X(t) = k t with Gaussian noise: the posterior in k is Gaussian
    let model = parse_model(RAMP).unwrap();
    let sub = SubsystemSpec::whole(&model);
    let times = linspace(0.0, 10.0, 11);
    let sigma = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, sigma).unwrap();
    let y: Vec<f64> = times.iter().map(|t| 2.0 * t + noise.sample(&mut rng)).collect();
    let data = Trajectory::new(times.clone(), vec!["X".into()], y.clone()).unwrap();
    let stt: f64 = times.iter().map(|t| t * t).sum();
    let post_mean = times.iter().zip(&y).map(|(t, v)| t * v).sum::<f64>() / stt;
    let post_var = sigma * sigma / stt;
    let mut target = SubsystemTarget::new(&model, &sub, &[], &data, vec![sigma], IntegratorConfig::default());
    let cfg = ChainConfig {
        iterations: 200_000,
        burn_in: 10_000,
        thinning: 1,
        seed: 5,
        ..Default::default()
    };
    let k = run_chain(&mut target, vec!["k".into()], &cfg, 0).unwrap().column(0);
    let m = k.iter().sum::<f64>() / k.len() as f64;
    let v = k.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k.len() - 1) as f64;
    let se = batch_mcse(&k);
    let conj_ok = (m - post_mean).abs() < 3.0 * se && (v / post_var - 1.0).abs() < 0.2;

    let w = [1.0, 3.0, 5.0, 2.0, 8.0, 4.0, 1.0, 6.0, 2.0, 3.0];
    let z: f64 = w.iter().sum();
    let mut steps = Steps {
        bounds: vec![(0.0, 10.0)],
        log_w: w.iter().map(|v| f64::ln(*v)).collect(),
    };
    let cfg = ChainConfig {
        iterations: 1_000_000,
        burn_in: 1_000,
        thinning: 1,
        seed: 3,
        ..Default::default()
    };
    let post = run_chain(&mut steps, vec!["x".into()], &cfg, 0).unwrap();
    let mut hist = [0usize; 10];
    for s in &post.samples {
        hist[(s[0].floor() as usize).min(9)] += 1;
    }
    let n = post.samples.len() as f64;
    let tv = 0.5 * hist.iter().zip(&w).map(|(h, wi)| (*h as f64 / n - wi / z).abs()).sum::<f64>();

    let pass = conj_ok && tv < 0.05;
    verdict(
        "MCMC statistical correctness",
        pass,
        &format!(
            "mean {m:.5} vs {post_mean:.5} (3 mcse {:.5}), var ratio {:.3}, TV {tv:.4}",
            3.0 * se,
            v / post_var
        ),
    );
    assert!(pass);
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in &mut m[c] {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for k in 0..2 * n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn random_hyper(rng: &mut ChaCha8Rng) -> GpHyperparams {
    let mut z = [0.0; 4];
    for v in &mut z {
        *v = rng.random_range(-2.0..2.0);
    }
    GpHyperparams::from_log(&z)
}

#[test]
fn gp_numerical_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_grad = 0.0f64;
    for n in [3, 10, 30] {
        for _ in 0..20 {
            let h = random_hyper(&mut rng);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            x.sort_by(f64::total_cmp);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lml = log_marginal_likelihood(&x, &y, &h, None).unwrap();
            let z = h.to_log();
            for k in 0..4 {
                let step = 1e-5;
                let at = |d: f64| {
                    let mut zz = z;
                    zz[k] += d;
                    log_marginal_likelihood(&x, &y, &GpHyperparams::from_log(&zz), None)
                        .unwrap()
                        .value
                };
                let fd = (at(step) - at(-step)) / (2.0 * step);
                worst_grad = worst_grad.max((lml.gradient[k] - fd).abs() / fd.abs().max(1e-2));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_pred = 0.0f64;
    for n in [3, 10, 30] {
        for _ in 0..10 {
            let mut h = random_hyper(&mut rng);
            h.noise_variance = h.signal_variance * rng.random_range(0.05..0.5);
            let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
            times.sort_by(f64::total_cmp);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let post = GpPosterior::new(&times, &y, h, None).unwrap();
            let sc = post.time_scale();
            let x: Vec<f64> = times.iter().map(|&t| sc.apply(t)).collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| mlp_kernel(x[i], x[j], &h) + if i == j { h.noise_variance } else { 0.0 })
                        .collect()
                })
                .collect();
            let ainv = invert(&a);
            for _ in 0..5 {
                let t = rng.random_range(-10.0..60.0);
                let xs = sc.apply(t);
                let ks: Vec<f64> = x.iter().map(|&xi| mlp_kernel(xs, xi, &h)).collect();
                let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ainv[i][j] * ks[j]).sum()).collect();
                let mean: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
                let var = mlp_kernel(xs, xs, &h) - w.iter().zip(&ks).map(|(a, b)| a * b).sum::<f64>();
                let (m, v) = post.predict(t);
                worst_pred = worst_pred
                    .max((m - mean).abs() / mean.abs().max(1e-3))
                    .max((v - var).abs() / var.abs().max(1e-3));
            }
        }
    }
    let pass = worst_grad <= 1e-4 && worst_pred <= 1e-8;
    verdict(
        "GP numerical correctness",
        pass,
        &format!("worst gradient rel. error {worst_grad:.2e}, worst predict rel. error {worst_pred:.2e}"),
    );
    assert!(pass);
}

fn small_config(seed: u64, iterations: usize, rounds: usize) -> EstimationConfig {
    let mut cfg = EstimationConfig::default();
    cfg.chain.iterations = iterations;
    cfg.chain.burn_in = iterations / 5;
    cfg.chain.thinning = 5;
    cfg.chain.seed = seed;
    cfg.max_rounds = rounds;
    cfg
}

fn report_bytes(b: &BenchmarkSpec, cfg: &EstimationConfig, workers: usize) -> String {
    let g = generate_observations(b, 0.1, cfg.chain.seed).unwrap();
    let run = run_estimation(&b.model, &g.observations, b.grouping.as_deref(), cfg, workers).unwrap();
    run.report.to_json()
}

#[test]
fn determinism_across_worker_counts() {
    let t = Instant::now();
    let cases = [
        ("cascade", cascade_model(), EstimationConfig { gp_restarts: 3, ..small_config(4, 2_000, 2) }),
        ("grn", grn_with_points(8), EstimationConfig { gp_restarts: 3, ..small_config(4, 500, 1) }),
    ];
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, b, cfg) in &cases {
        let reference = report_bytes(b, cfg, 1);
        let same = [4, 8].iter().all(|&w| report_bytes(b, cfg, w) == reference);
        pass &= same;
        lines.push(format!("{name} {}", if same { "identical" } else { "differs" }));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    verdict(
        "determinism across 1/4/8 workers",
        pass,
        &format!("{} ({secs:.0} s)", lines.join(", ")),
    );
    assert!(pass);
}

/// Sharpest estimate of a parameter across the subsystems that own it.
fn sharpest(report: &EstimationReport, name: &str) -> f64 {
    report
        .parameter(name)
        .unwrap()
        .estimates
        .iter()
        .map(|e| e.sharpness)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn kde_contrast_k3_versus_v() {
    let b = cascade_model();
    let t = Instant::now();
    let mut hits = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let g = generate_observations(&b, 0.5, seed).unwrap();
        let mut cfg = EstimationConfig::default();
        cfg.chain.seed = seed;
        let run = run_estimation(&b.model, &g.observations, b.grouping.as_deref(), &cfg, 4).unwrap();
        let k3 = sharpest(&run.report, "k3");
        let v = sharpest(&run.report, "V");
        if k3 >= 3.0 * v {
            hits += 1;
        }
        lines.push(format!("seed {seed}: k3 {k3:.2} V {v:.2}"));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = hits >= 2;
    verdict(
        "KDE contrast k3 vs V",
        pass,
        &format!("{hits}/3 seeds with ratio >= 3: {} ({secs:.0} s)", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn grn_unidentifiable_mrna_degradation() {
    let b = grn_model();
    let t = Instant::now();
    let g = generate_observations(&b, 0.01, 0).unwrap();
    let cfg = small_config(0, 20_000, 2);
    let run = run_estimation(&b.model, &g.observations, b.grouping.as_deref(), &cfg, 4).unwrap();
    let width = |p: &subsysfit::orchestrator::ParameterEstimates| {
        let e = &p.estimates[0];
        (e.interval.1 - e.interval.0) / (p.upper - p.lower)
    };
    let target = width(run.report.parameter("pp7_mrna_degradation_rate").unwrap());
    let mut widths: Vec<f64> = run.report.parameters.iter().map(width).collect();
    widths.sort_by(f64::total_cmp);
    let median = subsysfit::summary::median(&widths);
    let secs = t.elapsed().as_secs_f64();
    let pass = target >= 0.5 && median < 0.25 && secs < 1800.0;
    verdict(
        "GRN unidentifiable mRNA degradation",
        pass,
        &format!("pp7 mRNA degradation 90% interval {target:.3} of box, median parameter {median:.3} ({secs:.0} s)"),
    );
    assert!(pass);
}
