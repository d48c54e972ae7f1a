//! Small dense quasi-Newton minimiser used by the likelihood fits.

/// Outcome of a minimisation run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop when the relative change of the objective falls below this.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            rel_tol: 1e-8,
            max_iter: 200,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking. `fg(x, grad)` returns the objective and
/// writes its gradient.
pub fn bfgs(x0: Vec<f64>, mut fg: impl FnMut(&[f64], &mut [f64]) -> f64, opts: BfgsOptions) -> Minimum {
    let k = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; k];
    let mut f = fg(&x, &mut g);
    let f_initial = f;
    if !f.is_finite() || k == 0 {
        return Minimum {
            x,
            f,
            f_initial,
            iterations: 0,
            converged: f.is_finite(),
        };
    }
    let mut h = identity(k);
    let mut scaled = false;
    let mut g_new = vec![0.0; k];
    let mut x_new = vec![0.0; k];
    let mut d = vec![0.0; k];
    for it in 1..=opts.max_iter {
        for i in 0..k {
            d[i] = -dot(&h[i * k..(i + 1) * k], &g);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(k);
            for i in 0..k {
                d[i] = -g[i];
            }
            slope = -dot(&g, &g);
            if slope == 0.0 {
                return Minimum { x, f, f_initial, iterations: it, converged: true };
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for i in 0..k {
                x_new[i] = x[i] + t * d[i];
            }
            let fv = fg(&x_new, &mut g_new);
            if fv.is_finite() && fv <= f + 1e-4 * t * slope {
                accepted = Some(fv);
                break;
            }
            t *= 0.5;
        }
        let Some(f_new) = accepted else {
            // No descent possible at working precision.
            let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Minimum {
                x,
                f,
                f_initial,
                iterations: it,
                converged: gnorm <= 1e-4 * f.abs().max(1.0),
            };
        };
        let s: Vec<f64> = (0..k).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..k).map(|i| g_new[i] - g[i]).collect();
        let rel = (f - f_new).abs() / f.abs().max(1e-300);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if rel < opts.rel_tol {
            return Minimum { x, f, f_initial, iterations: it, converged: true };
        }
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
        }
    }
    Minimum {
        x,
        f,
        f_initial,
        iterations: opts.max_iter,
        converged: false,
    }
}

fn identity(k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        h[i * k + i] = 1.0;
    }
    h
}

/// H <- (I - rho s y') H (I - rho y s') + rho s s'
fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| dot(&h[i * k..(i + 1) * k], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let m = bfgs(
            vec![0.0, 0.0],
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 20.0 * (x[1] + 1.0);
                (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + 1.0
            },
            BfgsOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-4 && (m.x[1] + 1.0).abs() < 1e-4);
        assert!(m.f <= m.f_initial);
    }

    #[test]
    fn rosenbrock() {
        let m = bfgs(
            vec![-1.2, 1.0],
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2) + 1.0
            },
            BfgsOptions {
                rel_tol: 1e-14,
                max_iter: 500,
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn non_finite_start_reports_failure() {
        let m = bfgs(vec![0.0], |_, _| f64::NAN, BfgsOptions::default());
        assert!(!m.converged);
    }
}
