//! Monotone composite quantile regression neural network: one sigmoid hidden
//! layer fed by the standardized predictors and the quantile level, with the
//! level-to-hidden and hidden-to-output weights kept nonnegative (exponential
//! reparameterization) so the output never decreases in the level.
//!
//! Training minimises the composite pinball loss stacked over all levels. The
//! loss is Huber-smoothed with a width that shrinks every epoch; each epoch
//! runs a quasi-Newton pass, and an epoch is kept only if the exact composite
//! pinball loss does not increase.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{bfgs, BfgsOptions};
use super::seed;
use super::stepwise::{stepwise_aic, StepRecord};
use crate::domain::{QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use crate::features::PredictorMatrix;
use crate::verify::pinball_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McqrnnHyper {
    /// Stepwise moves.
    pub steps: usize,
    pub hidden_layers: usize,
    /// Training epochs (outer passes with a shrinking smoothing width).
    pub iterations: usize,
    /// Quasi-Newton steps per epoch.
    pub inner_steps: usize,
    pub penalty: f64,
    pub max_hidden: usize,
    /// Levels used while scoring stepwise candidates.
    pub selection_levels: usize,
    /// Epochs used while scoring stepwise candidates.
    pub selection_iterations: usize,
}

impl Default for McqrnnHyper {
    fn default() -> Self {
        McqrnnHyper {
            steps: 5,
            hidden_layers: 1,
            iterations: 10,
            inner_steps: 50,
            penalty: 0.0,
            max_hidden: 16,
            selection_levels: 9,
            selection_iterations: 3,
        }
    }
}

impl McqrnnHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers != 1 {
            return Err(Error::Config("mcqrnn.hidden_layers must be 1".into()));
        }
        if self.penalty != 0.0 {
            return Err(Error::Config("mcqrnn.penalty other than 0 is not supported".into()));
        }
        if self.iterations == 0 || self.inner_steps == 0 || self.max_hidden == 0 {
            return Err(Error::Config("mcqrnn iteration counts and width must be positive".into()));
        }
        if self.selection_levels == 0 || self.selection_iterations == 0 {
            return Err(Error::Config("mcqrnn selection settings must be positive".into()));
        }
        Ok(())
    }
}

/// Trained network. Weights are stored after the nonnegativity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneQuantileNet {
    pub predictors: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_sd: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// Hidden x predictors, row-major.
    pub input_weights: Vec<f64>,
    /// Nonnegative level-input weights.
    pub level_weights: Vec<f64>,
    /// Nonnegative output weights.
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub monotone: bool,
    pub seed: u64,
    pub loss: f64,
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MonotoneQuantileNet {
    pub fn hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn n_weights(&self) -> usize {
        let h = self.hidden();
        h * (self.predictors.len() + 3) + 1
    }

    /// Output for standardized inputs `z` at level `tau`.
    fn eval_std(&self, z: &[f64], tau: f64) -> f64 {
        let p = z.len();
        let mut f = self.output_bias;
        for j in 0..self.hidden() {
            let w = &self.input_weights[j * p..(j + 1) * p];
            let a = self.hidden_bias[j] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.level_weights[j] * tau;
            f += self.output_weights[j] * sigmoid(a);
        }
        f
    }

    /// Raw network outputs for one row (non-decreasing in the level).
    pub fn raw_outputs(&self, row: &[f64], cols: &[usize], levels: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(t, &j)| (row[j] - self.input_mean[t]) / self.input_sd[t])
            .collect();
        levels.iter().map(|&tau| self.eval_std(&z, tau)).collect()
    }

    pub fn predict(&self, matrix: &PredictorMatrix, levels: &QuantileLevels) -> Result<Vec<QuantileForecast>> {
        let cols = super::qr::resolve(&self.predictors, matrix)?;
        matrix
            .rows()
            .map(|row| {
                let v: Vec<f64> = self
                    .raw_outputs(row, &cols, levels.as_slice())
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Prediction("non-finite network output".into()));
                }
                QuantileForecast::from_raw(levels.clone(), v)
            })
            .collect()
    }
}

/// Training data: standardized selected columns.
struct Data<'a> {
    z: Vec<&'a [f64]>,
    y: &'a [f64],
    levels: &'a [f64],
}

/// Raw parameter layout: [bias(h), W(h*p), v_raw(h), u_raw(h), b].
struct Layout {
    h: usize,
    p: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.h * (self.p + 3) + 1
    }
    fn w(&self) -> usize {
        self.h
    }
    fn v(&self) -> usize {
        self.h + self.h * self.p
    }
    fn u(&self) -> usize {
        self.v() + self.h
    }
    fn b(&self) -> usize {
        self.u() + self.h
    }
}

/// Smoothed (eps > 0) or exact (eps == 0) composite pinball loss, mean over
/// cases and levels, with gradient when `grad` is given.
fn composite_loss(d: &Data, lay: &Layout, theta: &[f64], eps: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let (h, p) = (lay.h, lay.p);
    let n = d.y.len();
    let norm = 1.0 / (n * d.levels.len()) as f64;
    let v: Vec<f64> = (0..h).map(|j| theta[lay.v() + j].exp()).collect();
    let u: Vec<f64> = (0..h).map(|j| theta[lay.u() + j].exp()).collect();
    let b = theta[lay.b()];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut base = vec![0.0; h];
    let mut act = vec![0.0; h];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..h {
            let w = &theta[lay.w() + j * p..lay.w() + (j + 1) * p];
            base[j] = theta[j] + (0..p).map(|k| w[k] * d.z[k][i]).sum::<f64>();
        }
        for &tau in d.levels {
            let mut f = b;
            for j in 0..h {
                act[j] = sigmoid(base[j] + v[j] * tau);
                f += u[j] * act[j];
            }
            let r = d.y[i] - f;
            let (loss, dr) = if eps > 0.0 {
                let (hub, dh) = if r.abs() <= eps { (r * r / (2.0 * eps), r / eps) } else { (r.abs() - eps / 2.0, r.signum()) };
                let wgt = if r >= 0.0 { tau } else { 1.0 - tau };
                (wgt * hub, wgt * dh)
            } else {
                (pinball_unchecked(tau, d.y[i], f), 0.0)
            };
            total += loss;
            if let Some(g) = grad.as_deref_mut() {
                let df = -dr * norm;
                g[lay.b()] += df;
                for j in 0..h {
                    g[lay.u() + j] += df * act[j] * u[j];
                    let delta = df * u[j] * act[j] * (1.0 - act[j]);
                    g[j] += delta;
                    for k in 0..p {
                        g[lay.w() + j * p + k] += delta * d.z[k][i];
                    }
                    g[lay.v() + j] += delta * tau * v[j];
                }
            }
        }
    }
    total * norm
}

struct Trained {
    theta: Vec<f64>,
    loss: f64,
    history: Vec<f64>,
}

fn init_theta(lay: &Layout, y: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, &[seed::tag("mcqrnn-init"), lay.p as u64]);
    let mut theta: Vec<f64> = (0..lay.len()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = crate::verify::sample_quantile_sorted(&sorted, 0.05);
    let hi = crate::verify::sample_quantile_sorted(&sorted, 0.95);
    for j in 0..lay.h {
        theta[lay.v() + j] = (4.0f64).ln() + 0.1 * theta[lay.v() + j];
        theta[lay.u() + j] = ((hi - lo).max(1e-3) / lay.h as f64).ln();
    }
    theta[lay.b()] = lo;
    theta
}

fn train(d: &Data, lay: &Layout, mut theta: Vec<f64>, epochs: usize, inner: usize) -> Result<Trained> {
    let mut loss = composite_loss(d, lay, &theta, 0.0, None);
    if !loss.is_finite() {
        return Err(Error::fit("MCQRNN", "non-finite initial loss"));
    }
    let mut history = vec![loss];
    for e in 0..epochs {
        let eps = 2f64.powi(-6 - 2 * e as i32);
        let res = bfgs(
            theta.clone(),
            |t, g| composite_loss(d, lay, t, eps, Some(g)),
            BfgsOptions {
                rel_tol: 1e-10,
                max_iter: inner,
            },
        );
        if !res.f.is_finite() {
            return Err(Error::fit("MCQRNN", format!("non-finite loss in epoch {e}")));
        }
        let exact = composite_loss(d, lay, &res.x, 0.0, None);
        if !exact.is_finite() {
            return Err(Error::fit("MCQRNN", format!("non-finite loss in epoch {e}")));
        }
        if exact <= loss {
            loss = exact;
            theta = res.x;
            history.push(loss);
        }
    }
    Ok(Trained { theta, loss, history })
}

/// Standardization of the selected columns.
fn standardize(cols: &[Vec<f64>], set: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut zs = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for &j in set {
        let c = &cols[j];
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let s = if s > 0.0 { s } else { 1.0 };
        zs.push(c.iter().map(|v| (v - m) / s).collect());
        means.push(m);
        sds.push(s);
    }
    (zs, means, sds)
}

fn width(p: usize, cap: usize) -> usize {
    p.clamp(1, cap)
}

struct Fitted {
    set: Vec<usize>,
    theta: Vec<f64>,
    loss: f64,
    history: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

/// Trains on the column set; `warm` carries the weights of a related model
/// (shared predictors keep their input weights, new ones start at zero).
fn fit_set(
    cols: &[Vec<f64>],
    set: &[usize],
    y: &[f64],
    levels: &[f64],
    hyper: &McqrnnHyper,
    epochs: usize,
    seed: u64,
    warm: Option<&Fitted>,
) -> Result<Fitted> {
    let (zs, means, sds) = standardize(cols, set);
    let lay = Layout {
        h: width(set.len(), hyper.max_hidden),
        p: set.len(),
    };
    let mut theta = init_theta(&lay, y, seed);
    if let Some(prev) = warm {
        let pl = Layout {
            h: width(prev.set.len(), hyper.max_hidden),
            p: prev.set.len(),
        };
        for j in 0..lay.h.min(pl.h) {
            theta[j] = prev.theta[j];
            for (k, c) in set.iter().enumerate() {
                theta[lay.w() + j * lay.p + k] = prev
                    .set
                    .iter()
                    .position(|q| q == c)
                    .map_or(0.0, |t| prev.theta[pl.w() + j * pl.p + t]);
            }
            theta[lay.v() + j] = prev.theta[pl.v() + j];
            theta[lay.u() + j] = prev.theta[pl.u() + j];
        }
        // extra hidden units start switched off
        for j in pl.h..lay.h {
            theta[lay.u() + j] = -12.0;
        }
        theta[lay.b()] = prev.theta[pl.b()];
    }
    let d = Data {
        z: zs.iter().map(Vec::as_slice).collect(),
        y,
        levels,
    };
    let t = train(&d, &lay, theta, epochs, hyper.inner_steps)?;
    Ok(Fitted {
        set: set.to_vec(),
        theta: t.theta,
        loss: t.loss,
        history: t.history,
        means,
        sds,
    })
}

/// Level-averaged asymmetric-Laplace AIC with the network weight count as k.
fn aic(fitted: &Fitted, d_levels: &[f64], cols: &[Vec<f64>], y: &[f64], hyper: &McqrnnHyper) -> f64 {
    let lay = Layout {
        h: width(fitted.set.len(), hyper.max_hidden),
        p: fitted.set.len(),
    };
    let (zs, _, _) = standardize(cols, &fitted.set);
    let n = y.len();
    let mut per_level = Vec::with_capacity(d_levels.len());
    for &tau in d_levels {
        let d = Data {
            z: zs.iter().map(Vec::as_slice).collect(),
            y,
            levels: std::slice::from_ref(&tau),
        };
        let mean = composite_loss(&d, &lay, &fitted.theta, 0.0, None);
        per_level.push(2.0 * lay.len() as f64 + 2.0 * n as f64 * mean.max(1e-300).ln());
    }
    per_level.iter().sum::<f64>() / per_level.len() as f64
}

fn to_net(f: Fitted, names: &[String], hyper: &McqrnnHyper, seed: u64) -> MonotoneQuantileNet {
    let lay = Layout {
        h: width(f.set.len(), hyper.max_hidden),
        p: f.set.len(),
    };
    let th = &f.theta;
    MonotoneQuantileNet {
        predictors: f.set.iter().map(|&j| names[j].clone()).collect(),
        input_mean: f.means,
        input_sd: f.sds,
        hidden_bias: th[..lay.h].to_vec(),
        input_weights: th[lay.w()..lay.v()].to_vec(),
        level_weights: th[lay.v()..lay.u()].iter().map(|v| v.exp()).collect(),
        output_weights: th[lay.u()..lay.b()].iter().map(|v| v.exp()).collect(),
        output_bias: th[lay.b()],
        monotone: true,
        seed,
        loss: f.loss,
        loss_history: f.history,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqrnnFit {
    pub net: MonotoneQuantileNet,
    pub steps: Vec<StepRecord>,
}

/// Stepwise-selected network. Candidates are scored with a short warm-started
/// training run on a reduced level set; the selected set is then trained with
/// the full budget on all levels.
pub fn fit_mcqrnn(
    matrix: &PredictorMatrix,
    y: &[f64],
    levels: &QuantileLevels,
    hyper: &McqrnnHyper,
    seed: u64,
) -> Result<McqrnnFit> {
    hyper.validate()?;
    if y.len() != matrix.n_rows() {
        return Err(Error::Structural("observation count differs from matrix rows".into()));
    }
    if matrix.n_rows() == 0 {
        return Err(Error::EmptyMatrix { dropped: matrix.dropped() });
    }
    let cols: Vec<Vec<f64>> = (0..matrix.n_cols()).map(|j| matrix.column(j)).collect();
    let sel_levels: Vec<f64> = QuantileLevels::evenly_spaced(hyper.selection_levels).as_slice().to_vec();
    let candidates: Vec<usize> = (0..cols.len())
        .filter(|&j| cols[j].iter().any(|v| *v != cols[j][0]))
        .collect();
    let base = fit_set(&cols, &[], y, &sel_levels, hyper, hyper.selection_iterations, seed, None)?;
    let a0 = aic(&base, &sel_levels, &cols, y, hyper);
    let sw = stepwise_aic(&candidates, (vec![], a0, base), hyper.steps, |set, cur| {
        match fit_set(&cols, set, y, &sel_levels, hyper, hyper.selection_iterations, seed, Some(cur)) {
            Ok(f) => {
                let a = aic(&f, &sel_levels, &cols, y, hyper);
                Some((a, f))
            }
            Err(e) => {
                log::debug!("skipping MCQRNN candidate {set:?}: {e}");
                None
            }
        }
    });
    let fin = fit_set(&cols, &sw.selected, y, levels.as_slice(), hyper, hyper.iterations, seed, Some(&sw.model))?;
    Ok(McqrnnFit {
        net: to_net(fin, matrix.names(), hyper, seed),
        steps: sw.history,
    })
}

/// Trains a network on a fixed predictor set (no selection).
pub fn fit_mcqrnn_fixed(
    matrix: &PredictorMatrix,
    y: &[f64],
    levels: &QuantileLevels,
    hyper: &McqrnnHyper,
    seed: u64,
) -> Result<MonotoneQuantileNet> {
    hyper.validate()?;
    let cols: Vec<Vec<f64>> = (0..matrix.n_cols()).map(|j| matrix.column(j)).collect();
    let set: Vec<usize> = (0..cols.len()).collect();
    let f = fit_set(&cols, &set, y, levels.as_slice(), hyper, hyper.iterations, seed, None)?;
    Ok(to_net(f, matrix.names(), hyper, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn data(n: usize, seed: u64) -> (PredictorMatrix, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = a.iter().map(|v| 0.2 + v * v + 0.2 * v * rng.random::<f64>()).collect();
        (PredictorMatrix::from_columns(vec!["A".into(), "B".into()], &[a, b]).unwrap(), y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, y) = data(30, 1);
        let cols: Vec<Vec<f64>> = (0..2).map(|j| m.column(j)).collect();
        let (zs, _, _) = standardize(&cols, &[0, 1]);
        let levels = [0.1, 0.5, 0.9];
        let d = Data {
            z: zs.iter().map(Vec::as_slice).collect(),
            y: &y,
            levels: &levels,
        };
        let lay = Layout { h: 2, p: 2 };
        let theta = init_theta(&lay, &y, 3);
        let mut g = vec![0.0; lay.len()];
        composite_loss(&d, &lay, &theta, 0.01, Some(&mut g));
        for k in 0..lay.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += 1e-6;
            tm[k] -= 1e-6;
            let fd = (composite_loss(&d, &lay, &tp, 0.01, None) - composite_loss(&d, &lay, &tm, 0.01, None)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn monotone_in_level_and_deterministic() {
        let (m, y) = data(300, 2);
        let hyper = McqrnnHyper {
            steps: 2,
            ..McqrnnHyper::default()
        };
        let lv = QuantileLevels::default();
        let a = fit_mcqrnn(&m, &y, &lv, &hyper, 9).unwrap();
        let b = fit_mcqrnn(&m, &y, &lv, &hyper, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.net.predictors[0], "A");
        assert!(a.net.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let cols = qr_cols(&a.net, &m);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let row = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let out = a.net.raw_outputs(&row, &cols, &[0.1, 0.5, 0.9]);
            assert!(out.windows(2).all(|w| w[0] <= w[1]), "{out:?}");
        }
    }

    fn qr_cols(net: &MonotoneQuantileNet, m: &PredictorMatrix) -> Vec<usize> {
        crate::engine::qr::resolve(&net.predictors, m).unwrap()
    }

    #[test]
    fn constant_target() {
        let (m, _) = data(1000, 3);
        let y = vec![0.6; 1000];
        let lv = QuantileLevels::default();
        let net = fit_mcqrnn(&m, &y, &lv, &McqrnnHyper::default(), 1).unwrap().net;
        for f in net.predict(&m.select_rows(&[0, 10, 500]), &lv).unwrap() {
            assert!(f.values().iter().all(|v| (v - 0.6).abs() < 0.05), "{:?}", f.values());
        }
    }

    #[test]
    fn zero_level_path_gives_identical_levels() {
        let (m, y) = data(200, 4);
        let lv = QuantileLevels::default();
        let mut net = fit_mcqrnn_fixed(&m, &y, &lv, &McqrnnHyper::default(), 2).unwrap();
        net.level_weights.iter_mut().for_each(|v| *v = 0.0);
        let out = net.raw_outputs(m.row(0), &[0, 1], lv.as_slice());
        assert!(out.iter().all(|v| *v == out[0]));
    }

    #[test]
    fn rejects_unsupported_hyper() {
        let (m, y) = data(50, 5);
        let hyper = McqrnnHyper {
            hidden_layers: 2,
            ..McqrnnHyper::default()
        };
        assert!(matches!(
            fit_mcqrnn(&m, &y, &QuantileLevels::default(), &hyper, 1),
            Err(Error::Config(_))
        ));
    }
}
