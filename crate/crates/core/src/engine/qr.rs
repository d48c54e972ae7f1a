//! Linear quantile regression with a primal-dual interior-point LP solver
//! (bounded-variable Frisch-Newton form with a Mehrotra corrector), plus
//! stepwise selection on the level-averaged AIC.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::seed;
use super::stepwise::{stepwise_aic, StepRecord};
use crate::domain::{sanitize_quantiles, QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use crate::features::PredictorMatrix;
use crate::verify::pinball_unchecked;

/// Variance of the noise added to every predictor cell before fitting.
pub const NOISE_VARIANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            gap_tol: 1e-8,
            max_iter: 100,
            step_fraction: 0.99995,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RqSolution {
    /// Intercept-first coefficients when the design starts with a ones column.
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Minimises `sum rho_tau(y - X b)` for design columns `x` (n each).
///
/// The LP is `min c'a  s.t.  X'a = (1-tau) X'1, 0 <= a <= 1` with `c = -y`;
/// the coefficients are minus the equality multipliers.
pub fn rq_fit(x: &[&[f64]], y: &[f64], tau: f64, opts: IpmOptions) -> Result<RqSolution> {
    let n = y.len();
    let p = x.len();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("quantile level {tau} outside (0, 1)")));
    }
    if n <= p || x.iter().any(|c| c.len() != n) {
        return Err(Error::fit("QR", format!("need more cases than coefficients (n={n}, p={p})")));
    }
    let at = |v: &[f64]| -> DVector<f64> { DVector::from_iterator(p, x.iter().map(|c| dot(c, v))) };
    let a_t_y = |yd: &DVector<f64>, out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..p).map(|j| x[j][i] * yd[j]).sum();
        }
    };

    // Least-squares start for the multipliers.
    let gram = DMatrix::from_fn(p, p, |j, k| dot(x[j], x[k]));
    let xty = at(y);
    let ols = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .or_else(|| gram.clone().pseudo_inverse(1e-12).ok().map(|pi| pi * &xty))
        .ok_or_else(|| Error::fit("QR", "singular design"))?;
    let mut yd = -ols;
    let mut xa = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let mut atyd = vec![0.0; n];
    a_t_y(&yd, &mut atyd);
    let r: Vec<f64> = (0..n).map(|i| -y[i] - atyd[i]).collect();
    let delta = 0.5 * r.iter().map(|v| v.abs()).sum::<f64>() / n as f64 + 1e-8;
    let mut z: Vec<f64> = r.iter().map(|v| v.max(0.0) + delta).collect();
    let mut w: Vec<f64> = r.iter().map(|v| (-v).max(0.0) + delta).collect();
    let b = at(&vec![1.0 - tau; n]);
    let scale = 1.0 + y.iter().map(|v| v.abs()).sum::<f64>();

    let mut q = vec![0.0; n];
    let mut rc = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut rxz = vec![0.0; n];
    let mut rsw = vec![0.0; n];
    let mut rt = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a_t_y(&yd, &mut atyd);
        for i in 0..n {
            rc[i] = -y[i] - atyd[i] - z[i] + w[i];
        }
        let gap: f64 = (0..n).map(|i| xa[i] * z[i] + s[i] * w[i]).sum();
        let rc_norm = rc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gap <= opts.gap_tol * scale && rc_norm <= 1e-9 * scale {
            return Ok(finish(x, y, tau, &yd, it));
        }
        let rb = &b - at(&xa);
        for i in 0..n {
            q[i] = 1.0 / (z[i] / xa[i] + w[i] / s[i]);
        }
        let m = DMatrix::from_fn(p, p, |j, k| (0..n).map(|i| x[j][i] * q[i] * x[k][i]).sum::<f64>());
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::fit("QR", format!("normal equations not positive definite at iteration {it}")))?;

        let mut solve = |rxz: &[f64], rsw: &[f64], dx: &mut [f64], dz: &mut [f64], dw: &mut [f64]| -> DVector<f64> {
            for i in 0..n {
                rt[i] = rc[i] - rxz[i] / xa[i] + rsw[i] / s[i];
            }
            let qr: Vec<f64> = (0..n).map(|i| q[i] * rt[i]).collect();
            let rhs = &rb + at(&qr);
            let dy = chol.solve(&rhs);
            let mut atdy = vec![0.0; n];
            a_t_y(&dy, &mut atdy);
            for i in 0..n {
                dx[i] = q[i] * (atdy[i] - rt[i]);
                dz[i] = (rxz[i] - z[i] * dx[i]) / xa[i];
                dw[i] = (rsw[i] + w[i] * dx[i]) / s[i];
            }
            dy
        };

        // predictor
        for i in 0..n {
            rxz[i] = -xa[i] * z[i];
            rsw[i] = -s[i] * w[i];
        }
        solve(&rxz, &rsw, &mut dx, &mut dz, &mut dw);
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = max_step(&xa, &dx).min(max_step(&s, &ds)).min(1.0);
        let ad = max_step(&z, &dz).min(max_step(&w, &dw)).min(1.0);
        let mu_aff: f64 = (0..n)
            .map(|i| (xa[i] + ap * dx[i]) * (z[i] + ad * dz[i]) + (s[i] + ap * ds[i]) * (w[i] + ad * dw[i]))
            .sum();
        let sigma = (mu_aff / gap).powi(3);
        let target = sigma * gap / (2 * n) as f64;

        // corrector
        for i in 0..n {
            rxz[i] = target - xa[i] * z[i] - dx[i] * dz[i];
            rsw[i] = target - s[i] * w[i] - ds[i] * dw[i];
        }
        let dy = solve(&rxz, &rsw, &mut dx, &mut dz, &mut dw);
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = (opts.step_fraction * max_step(&xa, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (opts.step_fraction * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        for i in 0..n {
            xa[i] += ap * dx[i];
            s[i] += ap * ds[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        yd += ad * dy;
    }
    Err(Error::fit(
        "QR",
        format!("interior point did not reach the duality-gap tolerance in {} iterations", opts.max_iter),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn finish(x: &[&[f64]], y: &[f64], tau: f64, yd: &DVector<f64>, iterations: usize) -> RqSolution {
    let coefficients: Vec<f64> = yd.iter().map(|v| -v).collect();
    let objective = (0..y.len())
        .map(|i| {
            let f: f64 = x.iter().zip(&coefficients).map(|(c, b)| c[i] * b).sum();
            pinball_unchecked(tau, y[i], f)
        })
        .sum();
    RqSolution {
        coefficients,
        objective,
        iterations,
    }
}

/// Adds i.i.d. N(0, 0.001) noise to every cell; a pure function of `seed`.
pub fn inject_noise(matrix: &PredictorMatrix, seed: u64) -> PredictorMatrix {
    let mut rng = seed::stream(seed, &[seed::tag("qr-noise")]);
    let normal = Normal::new(0.0, NOISE_VARIANCE.sqrt()).expect("valid normal");
    matrix.map_cells(|_, _, v| v + normal.sample(&mut rng))
}

/// Asymmetric-Laplace AIC of a level-`tau` fit: `2k + 2n log(mean pinball)`.
pub fn quantile_aic(k: usize, n: usize, total_pinball: f64) -> f64 {
    let mean = (total_pinball / n as f64).max(1e-300);
    2.0 * k as f64 + 2.0 * n as f64 * mean.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantileModel {
    pub levels: QuantileLevels,
    pub predictors: Vec<String>,
    /// One intercept-first coefficient vector per level.
    pub coefficients: Vec<Vec<f64>>,
    pub aic: f64,
    pub steps: Vec<StepRecord>,
}

impl LinearQuantileModel {
    /// Raw (unsanitized) quantile values for one row.
    fn raw_row(&self, row: &[f64], cols: &[usize]) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|b| b[0] + cols.iter().zip(&b[1..]).map(|(&j, c)| c * row[j]).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, matrix: &PredictorMatrix) -> Result<Vec<QuantileForecast>> {
        let cols = resolve(&self.predictors, matrix)?;
        matrix
            .rows()
            .map(|row| sanitize_quantiles(&self.levels, &self.raw_row(row, &cols)))
            .collect()
    }
}

pub(crate) fn resolve(names: &[String], matrix: &PredictorMatrix) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|p| {
            matrix
                .column_index(p)
                .ok_or_else(|| Error::Structural(format!("unknown predictor `{p}`")))
        })
        .collect()
}

/// Fits every level on the columns `set` of `cols`; returns coefficient
/// vectors and the level-averaged AIC.
fn fit_levels(cols: &[Vec<f64>], set: &[usize], y: &[f64], levels: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    let ones = vec![1.0; y.len()];
    let mut design: Vec<&[f64]> = vec![&ones];
    design.extend(set.iter().map(|&j| cols[j].as_slice()));
    let fits: Vec<RqSolution> = levels
        .par_iter()
        .map(|&tau| rq_fit(&design, y, tau, IpmOptions::default()))
        .collect::<Result<_>>()?;
    let k = set.len() + 1;
    let aic = fits.iter().map(|f| quantile_aic(k, y.len(), f.objective)).sum::<f64>() / levels.len() as f64;
    Ok((fits.into_iter().map(|f| f.coefficients).collect(), aic))
}

/// Noise-injected stepwise linear quantile regression. All levels share one
/// predictor set.
pub fn fit_qr(
    matrix: &PredictorMatrix,
    y: &[f64],
    levels: &QuantileLevels,
    steps: usize,
    seed: u64,
) -> Result<LinearQuantileModel> {
    if y.len() != matrix.n_rows() {
        return Err(Error::Structural("observation count differs from matrix rows".into()));
    }
    if matrix.n_rows() == 0 {
        return Err(Error::EmptyMatrix { dropped: matrix.dropped() });
    }
    if y.iter().all(|v| *v == y[0]) {
        return Ok(LinearQuantileModel {
            levels: levels.clone(),
            predictors: vec![],
            coefficients: vec![vec![y[0]]; levels.len()],
            aic: f64::NEG_INFINITY,
            steps: vec![],
        });
    }
    let noisy = inject_noise(matrix, seed);
    let cols: Vec<Vec<f64>> = (0..noisy.n_cols()).map(|j| noisy.column(j)).collect();
    fit_qr_columns(&cols, matrix.names(), y, levels, steps)
}

/// Stepwise fit on already prepared columns (no noise added).
pub fn fit_qr_columns(
    cols: &[Vec<f64>],
    names: &[String],
    y: &[f64],
    levels: &QuantileLevels,
    steps: usize,
) -> Result<LinearQuantileModel> {
    let lv = levels.as_slice();
    let (coef0, aic0) = fit_levels(cols, &[], y, lv)?;
    let candidates: Vec<usize> = (0..cols.len()).collect();
    let sw = stepwise_aic(&candidates, (vec![], aic0, coef0), steps, |set, _| match fit_levels(cols, set, y, lv) {
        Ok((c, a)) => Some((a, c)),
        Err(e) => {
            log::debug!("skipping QR candidate {set:?}: {e}");
            None
        }
    });
    Ok(LinearQuantileModel {
        levels: levels.clone(),
        predictors: sw.selected.iter().map(|&j| names[j].clone()).collect(),
        coefficients: sw.model,
        aic: sw.aic,
        steps: sw.history,
    })
}
