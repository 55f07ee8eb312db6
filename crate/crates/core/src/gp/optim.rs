//! Small dense BFGS minimizer with Armijo backtracking.

pub(crate) struct Minimum {
    pub z: Vec<f64>,
    pub value: f64,
}

/// Minimize `f` from `z0`. `f` returns `None` where the objective is
/// undefined; the line search backs away from such points.
pub(crate) fn bfgs<F>(mut f: F, z0: &[f64], max_iter: usize, gtol: f64) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = z0.len();
    let (mut fx, mut g) = f(z0)?;
    let mut z = z0.to_vec();
    let mut hinv = identity(n);
    let mut fresh = true;

    for _ in 0..max_iter {
        if inf_norm(&g) < gtol {
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            hinv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        // keep the first trial step bounded in log-space
        let mut step = (4.0 / inf_norm(&d)).min(1.0);
        let mut next = None;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft <= fx + 1e-4 * step * slope {
                    next = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((zn, fnew, gn)) = next else {
            if fresh {
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
            fresh = false;
        }
        let done = (fx - fnew).abs() <= 1e-14 * fx.abs().max(1.0) && inf_norm(&s) < 1e-12;
        z = zn;
        fx = fnew;
        g = gn;
        if done {
            break;
        }
    }
    Some(Minimum { z, value: fx })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
