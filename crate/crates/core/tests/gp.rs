use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use subsysfit::gp::*;

fn random_hyper(rng: &mut ChaCha8Rng) -> GpHyperparams {
    let mut z = [0.0; 4];
    for v in &mut z {
        *v = rng.random_range(-2.0..2.0);
    }
    GpHyperparams::from_log(&z)
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    x.sort_by(f64::total_cmp);
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (x, y)
}

#[test]
fn lml_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [3, 10, 30] {
        for _ in 0..20 {
            let h = random_hyper(&mut rng);
            let (x, y) = random_inputs(&mut rng, n);
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
                let g = lml.gradient[k];
                assert!(
                    (g - fd).abs() <= 1e-4 * fd.abs().max(1e-2),
                    "n={n} k={k}: analytic {g}, fd {fd}"
                );
            }
        }
    }
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
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

#[test]
fn predict_matches_naive_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [3, 10, 30] {
        for _ in 0..10 {
            let mut h = random_hyper(&mut rng);
            h.noise_variance = h.signal_variance * rng.random_range(0.05..0.5);
            let times: Vec<f64> = {
                let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
                t.sort_by(f64::total_cmp);
                t
            };
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let post = GpPosterior::new(&times, &y, h, None).unwrap();
            assert_eq!(post.jitter(), 0.0);
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
                assert!((m - mean).abs() <= 1e-8 * mean.abs().max(1e-3), "mean {m} vs {mean}");
                assert!((v - var).abs() <= 1e-8 * var.abs().max(1e-3), "var {v} vs {var}");
            }
        }
    }
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn white_noise_is_attributed_to_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = Normal::new(0.0, 0.3).unwrap();
    let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = times.iter().map(|_| d.sample(&mut rng)).collect();
    let fit = fit_hyperparams(&times, &y, &FitOptions::default()).unwrap();
    let s2 = variance(&y);
    let r = fit.hyperparams.noise_variance / s2;
    assert!((0.5..=2.0).contains(&r), "noise {} vs sample {s2}", fit.hyperparams.noise_variance);
}

#[test]
fn noiseless_saturating_series_has_negligible_noise() {
    let times: Vec<f64> = (0..15).map(|i| i as f64 * 20.0 / 14.0).collect();
    let y: Vec<f64> = times.iter().map(|t| 1.0 - (-t / 3.0).exp()).collect();
    let fit = fit_hyperparams(&times, &y, &FitOptions::default()).unwrap();
    assert!(fit.hyperparams.noise_variance <= 1e-4 * variance(&y));
}

#[test]
fn constant_series_is_within_predictive_band() {
    let times: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let y = vec![2.0; times.len()];
    let opts = FitOptions {
        point_noise: Some(vec![1e-10; times.len()]),
        ..Default::default()
    };
    let fit = fit_hyperparams(&times, &y, &opts).unwrap();
    let post = GpPosterior::new(&times, &y, fit.hyperparams, opts.point_noise.as_deref()).unwrap();
    for t in dense_grid(&times, 10) {
        let (m, v) = post.predict(t);
        assert!((m - 2.0).abs() <= v.sqrt() + 1e-9, "t={t}: mean {m}, sd {}", v.sqrt());
    }
}

#[test]
fn interpolation_report_round_trips_as_json() {
    let times: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let y: Vec<f64> = times.iter().map(|t| (t / 4.0).tanh()).collect();
    let grid = dense_grid(&times, 4);
    let it = interpolate_series(&times, &y, &grid, &FitOptions::default()).unwrap();
    let back: Interpolation = serde_json::from_str(&serde_json::to_string(&it).unwrap()).unwrap();
    assert_eq!(back, it);
    assert_eq!(it.grid.len(), 32);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_never_exceeds_prior(seed in 0u64..10_000, n in 2usize..20, t in -5.0f64..15.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hyper(&mut rng);
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = GpPosterior::new(&times, &y, h, None).unwrap();
        let (_, v) = post.predict(t);
        let xs = post.time_scale().apply(t);
        prop_assert!(v >= 0.0);
        prop_assert!(v <= mlp_kernel(xs, xs, &h) + 1e-9);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(x in -3.0f64..3.0, y in -3.0f64..3.0, z in proptest::array::uniform4(-3.0f64..3.0)) {
        let h = GpHyperparams::from_log(&z);
        let a = mlp_kernel(x, y, &h);
        prop_assert_eq!(a, mlp_kernel(y, x, &h));
        // |arcsin| ≤ π/2 bounds the kernel by σf²
        prop_assert!(a.abs() <= h.signal_variance * (1.0 + 1e-12));
        // Cauchy-Schwarz
        prop_assert!(a * a <= mlp_kernel(x, x, &h) * mlp_kernel(y, y, &h) * (1.0 + 1e-9) + 1e-300);
    }
}
