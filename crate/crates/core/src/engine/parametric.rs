//! Parametric distributional regression: gamma (GA) and zero-truncated
//! normal (NOTR) with linear predictors on link scales, fitted sequentially
//! (mu first, then sigma with mu held fixed) with stepwise AIC selection.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{digamma, ln_gamma};

use super::optim::{bfgs, BfgsOptions};
use super::stepwise::{stepwise_aic, StepRecord};
use super::Standardized;
use crate::domain::{QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use crate::features::PredictorMatrix;

/// Value substituted for zero observations under the gamma family.
pub const GAMMA_ZERO_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "GA")]
    Gamma,
    #[serde(rename = "NOTR")]
    TruncatedNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Mu,
    Sigma,
    Nu,
    Tau,
}

/// ln Phi(a), stable far into the lower tail.
fn ln_ndtr(a: f64) -> f64 {
    if a > -30.0 {
        (0.5 * erfc(-a / SQRT_2)).ln()
    } else {
        let a2 = a * a;
        -0.5 * a2 - (-a).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / a2 + 3.0 / (a2 * a2)).ln()
    }
}

fn ln_npdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

fn ndtr(a: f64) -> f64 {
    0.5 * erfc(-a / SQRT_2)
}

fn ndtri(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gamma => "GA",
            Family::TruncatedNormal => "NOTR",
        }
    }

    pub fn mu_link(self) -> Link {
        match self {
            Family::Gamma => Link::Log,
            Family::TruncatedNormal => Link::Identity,
        }
    }

    pub fn sigma_link(self) -> Link {
        Link::Log
    }

    /// Gamma: mean mu, shape 1/sigma^2, scale mu*sigma^2. NOTR: mu and sigma
    /// of the normal before truncation at zero.
    fn params_valid(self, mu: f64, sigma: f64) -> bool {
        let sigma_ok = sigma > 0.0 && sigma.is_finite();
        match self {
            Family::Gamma => sigma_ok && mu > 0.0 && mu.is_finite(),
            Family::TruncatedNormal => sigma_ok && mu.is_finite(),
        }
    }

    /// `-log pdf` at `y` and its derivatives with respect to both linear
    /// predictors.
    fn case_nll(self, y: f64, eta_mu: f64, eta_sigma: f64) -> (f64, f64, f64) {
        match self {
            Family::Gamma => {
                let mu = eta_mu.exp();
                let k = (-2.0 * eta_sigma).exp();
                let r = y / mu;
                let ll = k * (k / mu).ln() - ln_gamma(k) + (k - 1.0) * y.ln() - k * r;
                let d_mu = k * (r - 1.0);
                let d_sigma = -2.0 * k * ((k * r).ln() + 1.0 - digamma(k) - r);
                (-ll, -d_mu, -d_sigma)
            }
            Family::TruncatedNormal => {
                let mu = eta_mu;
                let sigma = eta_sigma.exp();
                let z = (y - mu) / sigma;
                let a = mu / sigma;
                let lp = ln_ndtr(a);
                let ll = -eta_sigma + ln_npdf(z) - lp;
                let lambda = (ln_npdf(a) - lp).exp();
                let d_mu = (z - lambda) / sigma;
                let d_sigma = -1.0 + z * z + lambda * a;
                (-ll, -d_mu, -d_sigma)
            }
        }
    }

    /// Inverse CDF at probability `p` in (0, 1).
    pub fn quantile(self, mu: f64, sigma: f64, p: f64) -> f64 {
        match self {
            Family::Gamma => {
                let k = 1.0 / (sigma * sigma);
                let rate = 1.0 / (mu * sigma * sigma);
                Gamma::new(k, rate).map_or(f64::NAN, |g| g.inverse_cdf(p))
            }
            Family::TruncatedNormal => {
                let a = mu / sigma;
                if a >= 0.0 {
                    let lower = ndtr(-a);
                    mu + sigma * ndtri(lower + p * (1.0 - lower))
                } else {
                    mu - sigma * ndtri((1.0 - p) * ndtr(a))
                }
            }
        }
    }

    fn prepare_y(self, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!("observation {y} outside the {} support", self.name())));
        }
        Ok(match self {
            Family::Gamma if y == 0.0 => GAMMA_ZERO_SHIFT,
            _ => y,
        })
    }

    /// Method-of-moments intercepts on the link scales.
    fn moment_intercepts(self, y: &[f64]) -> (f64, f64) {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-12);
        match self {
            Family::Gamma => (mean.ln(), 0.5 * (var / (mean * mean)).ln()),
            Family::TruncatedNormal => (mean, 0.5 * var.ln()),
        }
    }
}

/// Sum of `-log pdf` over cases with per-case `(mu, sigma)`.
pub fn negloglik(family: Family, params: &[(f64, f64)], observations: &[f64]) -> Result<f64> {
    if params.len() != observations.len() {
        return Err(Error::Structural("parameter and observation counts differ".into()));
    }
    let mut total = 0.0;
    for (&(mu, sigma), &y) in params.iter().zip(observations) {
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("observation {y} outside the {} support", family.name())));
        }
        if !family.params_valid(mu, sigma) {
            return Err(Error::Domain(format!("invalid {} parameters mu={mu} sigma={sigma}", family.name())));
        }
        let eta_mu = match family.mu_link() {
            Link::Log => mu.ln(),
            Link::Identity => mu,
        };
        total += family.case_nll(y, eta_mu, sigma.ln()).0;
    }
    Ok(total)
}

/// Linear predictor of one distribution parameter on its link scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamModel {
    pub parameter: Parameter,
    pub link: Link,
    pub intercept: f64,
    pub predictors: Vec<String>,
    pub coefficients: Vec<f64>,
}

impl ParamModel {
    fn resolve(&self, matrix: &PredictorMatrix) -> Result<Vec<usize>> {
        self.predictors
            .iter()
            .map(|p| {
                matrix
                    .column_index(p)
                    .ok_or_else(|| Error::Structural(format!("predictor `{p}` missing from the matrix")))
            })
            .collect()
    }

    fn eta(&self, row: &[f64], cols: &[usize]) -> f64 {
        self.intercept + self.coefficients.iter().zip(cols).map(|(b, &j)| b * row[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricModel {
    pub family: Family,
    pub mu: ParamModel,
    pub sigma: ParamModel,
    /// Training negative log-likelihood and AIC of the final model.
    pub nll: f64,
    pub aic: f64,
    /// NLL of the intercept-only model on the same data.
    pub nll_intercept_only: f64,
    pub mu_steps: Vec<StepRecord>,
    pub sigma_steps: Vec<StepRecord>,
}

impl ParametricModel {
    /// Predictors chosen by the selection procedure (mu, then sigma).
    pub fn selected_predictors(&self) -> impl Iterator<Item = &str> {
        self.mu.predictors.iter().chain(&self.sigma.predictors).map(String::as_str)
    }

    pub fn predict(&self, matrix: &PredictorMatrix, levels: &QuantileLevels) -> Result<Vec<QuantileForecast>> {
        let mu_cols = self.mu.resolve(matrix)?;
        let sigma_cols = self.sigma.resolve(matrix)?;
        matrix
            .rows()
            .map(|row| {
                let mu = self.mu.link.inverse(self.mu.eta(row, &mu_cols));
                let sigma = self.sigma.link.inverse(self.sigma.eta(row, &sigma_cols));
                predict_quantiles_parametric(self.family, mu, sigma, levels)
            })
            .collect()
    }
}

/// Quantiles of the family at the given parameters.
pub fn predict_quantiles_parametric(
    family: Family,
    mu: f64,
    sigma: f64,
    levels: &QuantileLevels,
) -> Result<QuantileForecast> {
    if !family.params_valid(mu, sigma) {
        return Err(Error::Prediction(format!(
            "{} parameters out of domain: mu={mu}, sigma={sigma}",
            family.name()
        )));
    }
    let values: Vec<f64> = levels.iter().map(|p| family.quantile(mu, sigma, p)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Prediction(format!(
            "non-finite {} quantile at mu={mu}, sigma={sigma}",
            family.name()
        )));
    }
    QuantileForecast::from_raw(levels.clone(), values)
}

/// Fit state on the standardized scale.
#[derive(Debug, Clone)]
struct Stage {
    mu_set: Vec<usize>,
    sigma_set: Vec<usize>,
    /// mu coefficients (intercept first) then sigma coefficients.
    mu_coef: Vec<f64>,
    sigma_coef: Vec<f64>,
    nll: f64,
}

impl Stage {
    fn k(&self) -> usize {
        self.mu_coef.len() + self.sigma_coef.len()
    }

    fn aic(&self) -> f64 {
        2.0 * self.k() as f64 + 2.0 * self.nll
    }
}

struct Problem<'a> {
    family: Family,
    y: Vec<f64>,
    x: &'a Standardized,
    opts: BfgsOptions,
}

impl Problem<'_> {
    fn linear(&self, set: &[usize], coef: &[f64], i: usize) -> f64 {
        coef[0] + set.iter().zip(&coef[1..]).map(|(&j, b)| b * self.x.z[j][i]).sum::<f64>()
    }

    /// Optimises the mu and sigma coefficients jointly (mu stage, where the
    /// sigma set is empty) or only sigma with mu held at `fixed_mu`.
    fn optimise(&self, init: &Stage, fixed_mu: bool) -> Result<Stage> {
        let m = init.mu_coef.len();
        let eta_mu_fixed: Vec<f64> = if fixed_mu {
            (0..self.y.len()).map(|i| self.linear(&init.mu_set, &init.mu_coef, i)).collect()
        } else {
            Vec::new()
        };
        let mut x0 = if fixed_mu { Vec::new() } else { init.mu_coef.clone() };
        x0.extend_from_slice(&init.sigma_coef);
        let mu_set = &init.mu_set;
        let sigma_set = &init.sigma_set;
        let z = &self.x.z;
        let fg = |theta: &[f64], g: &mut [f64]| -> f64 {
            g.iter_mut().for_each(|v| *v = 0.0);
            let (mu_part, sig_part) = if fixed_mu { (&theta[..0], theta) } else { theta.split_at(m) };
            let off = mu_part.len();
            let mut total = 0.0;
            for (i, &y) in self.y.iter().enumerate() {
                let em = if fixed_mu { eta_mu_fixed[i] } else { self.linear(mu_set, mu_part, i) };
                let es = self.linear(sigma_set, sig_part, i);
                let (nll, dm, ds) = self.family.case_nll(y, em, es);
                total += nll;
                if !fixed_mu {
                    g[0] += dm;
                    for (t, &j) in mu_set.iter().enumerate() {
                        g[1 + t] += dm * z[j][i];
                    }
                }
                g[off] += ds;
                for (t, &j) in sigma_set.iter().enumerate() {
                    g[off + 1 + t] += ds * z[j][i];
                }
            }
            total
        };
        let res = bfgs(x0, fg, self.opts);
        if !res.converged || !res.f.is_finite() {
            return Err(Error::fit(
                self.family.name(),
                format!(
                    "optimizer did not converge after {} iterations (nll {} from {})",
                    res.iterations, res.f, res.f_initial
                ),
            ));
        }
        let mut out = init.clone();
        if fixed_mu {
            out.sigma_coef = res.x;
        } else {
            out.sigma_coef = res.x[m..].to_vec();
            out.mu_coef = res.x[..m].to_vec();
        }
        out.nll = res.f;
        Ok(out)
    }

    /// Warm start for a new predictor set: shared coefficients carried over,
    /// new ones at zero.
    fn warm(set: &[usize], prev_set: &[usize], prev: &[f64]) -> Vec<f64> {
        let mut c = vec![prev[0]];
        c.extend(set.iter().map(|j| prev_set.iter().position(|p| p == j).map_or(0.0, |t| prev[1 + t])));
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParametricHyper {
    pub steps_mu: usize,
    pub steps_sigma: usize,
}

impl Default for ParametricHyper {
    fn default() -> Self {
        ParametricHyper {
            steps_mu: 5,
            steps_sigma: 1,
        }
    }
}

/// Sequential fit: stepwise mu model (sigma intercept-only), then stepwise
/// sigma model with mu fixed. Candidate pools for mu and sigma are
/// independent.
pub fn fit_sequential(
    family: Family,
    matrix: &PredictorMatrix,
    y: &[f64],
    steps_mu: usize,
    steps_sigma: usize,
) -> Result<ParametricModel> {
    if matrix.n_rows() == 0 {
        return Err(Error::EmptyMatrix { dropped: matrix.dropped() });
    }
    if y.len() != matrix.n_rows() {
        return Err(Error::Structural("observation count differs from matrix rows".into()));
    }
    let y: Vec<f64> = y.iter().map(|&v| family.prepare_y(v)).collect::<Result<_>>()?;
    let x = Standardized::new(matrix);
    let problem = Problem {
        family,
        y,
        x: &x,
        opts: BfgsOptions::default(),
    };
    let (m0, s0) = family.moment_intercepts(&problem.y);
    let start = Stage {
        mu_set: vec![],
        sigma_set: vec![],
        mu_coef: vec![m0],
        sigma_coef: vec![s0],
        nll: f64::NAN,
    };
    let base = problem.optimise(&start, false)?;
    let nll_intercept_only = base.nll;
    let candidates = x.usable();

    let mu_sw = stepwise_aic(&candidates, (vec![], base.aic(), base), steps_mu, |set, cur| {
        let mut s = cur.clone();
        s.mu_coef = Problem::warm(set, &cur.mu_set, &cur.mu_coef);
        s.mu_set = set.to_vec();
        match problem.optimise(&s, false) {
            Ok(f) => Some((f.aic(), f)),
            Err(e) => {
                log::debug!("skipping mu candidate {set:?}: {e}");
                None
            }
        }
    });
    let mu_stage = mu_sw.model;
    let sig_sw = stepwise_aic(&candidates, (vec![], mu_stage.aic(), mu_stage), steps_sigma, |set, cur| {
        let mut s = cur.clone();
        s.sigma_coef = Problem::warm(set, &cur.sigma_set, &cur.sigma_coef);
        s.sigma_set = set.to_vec();
        match problem.optimise(&s, true) {
            Ok(f) => Some((f.aic(), f)),
            Err(e) => {
                log::debug!("skipping sigma candidate {set:?}: {e}");
                None
            }
        }
    });
    let fin = sig_sw.model;
    let names = matrix.names();
    let to_model = |parameter, link, set: &[usize], coef: &[f64]| {
        let (intercept, coefficients) = x.unstandardize(set, coef);
        ParamModel {
            parameter,
            link,
            intercept,
            predictors: set.iter().map(|&j| names[j].clone()).collect(),
            coefficients,
        }
    };
    Ok(ParametricModel {
        family,
        mu: to_model(Parameter::Mu, family.mu_link(), &fin.mu_set, &fin.mu_coef),
        sigma: to_model(Parameter::Sigma, family.sigma_link(), &fin.sigma_set, &fin.sigma_coef),
        nll: fin.nll,
        aic: fin.aic(),
        nll_intercept_only,
        mu_steps: mu_sw.history,
        sigma_steps: sig_sw.history,
    })
}

/// Median of the exponential distribution with mean `mu`.
pub fn exponential_median(mu: f64) -> f64 {
    mu * LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn nll1(f: Family, y: f64, mu: f64, sigma: f64) -> f64 {
        negloglik(f, &[(mu, sigma)], &[y]).unwrap()
    }

    #[test]
    fn likelihood_ordering() {
        assert!(nll1(Family::Gamma, 0.8, 0.8, 0.1) < nll1(Family::Gamma, 0.8, 3.0, 0.1));
        assert!(nll1(Family::TruncatedNormal, 0.8, 0.8, 0.1) < nll1(Family::TruncatedNormal, 0.8, 3.0, 0.1));
    }

    #[test]
    fn exponential_closed_form() {
        for (y, mu) in [(0.3, 0.7), (1.2, 0.5), (2.0, 2.0)] {
            let expected = f64::ln(mu) + y / mu;
            assert!((nll1(Family::Gamma, y, mu, 1.0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_observation_is_domain_error() {
        assert!(matches!(negloglik(Family::Gamma, &[(1.0, 1.0)], &[-0.1]), Err(Error::Domain(_))));
        assert!(matches!(negloglik(Family::TruncatedNormal, &[(1.0, 0.0)], &[0.1]), Err(Error::Domain(_))));
    }

    /// Composite Simpson rule.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn truncated_normal_pdf_integrates_to_one() {
        for (mu, sigma) in [(0.0, 1.0), (0.5, 0.3), (-1.0, 0.5), (-3.0, 0.4)] {
            let pdf = |y: f64| (-nll1(Family::TruncatedNormal, y, mu, sigma)).exp();
            let upper = mu.max(0.0) + 40.0 * sigma;
            let total = simpson(pdf, 0.0, upper, 200_000);
            assert!((total - 1.0).abs() < 1e-6, "mu={mu} sigma={sigma}: {total}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for fam in [Family::Gamma, Family::TruncatedNormal] {
            for (y, em, es) in [(0.7, -0.2, -1.0), (1.1, 0.3, -0.5), (0.05, 0.1, 0.2), (0.4, -2.0, -0.3)] {
                let (_, dm, ds) = fam.case_nll(y, em, es);
                let h = 1e-6;
                let fm = (fam.case_nll(y, em + h, es).0 - fam.case_nll(y, em - h, es).0) / (2.0 * h);
                let fs = (fam.case_nll(y, em, es + h).0 - fam.case_nll(y, em, es - h).0) / (2.0 * h);
                assert!((dm - fm).abs() < 1e-5 * (1.0 + fm.abs()), "{fam:?} mu {dm} vs {fm}");
                assert!((ds - fs).abs() < 1e-5 * (1.0 + fs.abs()), "{fam:?} sigma {ds} vs {fs}");
            }
        }
    }

    #[test]
    fn ln_ndtr_tail_is_continuous() {
        let below = ln_ndtr(-30.0 - 1e-9);
        let above = ln_ndtr(-30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn closed_form_quantiles() {
        let lv = QuantileLevels::new(vec![0.5]).unwrap();
        let q = predict_quantiles_parametric(Family::Gamma, 2.0, 1.0, &lv).unwrap();
        assert!((q.values()[0] - exponential_median(2.0)).abs() < 1e-9);
        let q = predict_quantiles_parametric(Family::TruncatedNormal, 0.0, 1.0, &lv).unwrap();
        assert!((q.values()[0] - 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn negligible_truncation_matches_normal() {
        let lv = QuantileLevels::default();
        let q = predict_quantiles_parametric(Family::TruncatedNormal, 10.0, 0.1, &lv).unwrap();
        for (p, v) in lv.iter().zip(q.values()) {
            assert!((v - (10.0 + 0.1 * ndtri(p))).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_parameters_are_prediction_errors() {
        let lv = QuantileLevels::default();
        assert!(matches!(
            predict_quantiles_parametric(Family::Gamma, f64::INFINITY, 0.3, &lv),
            Err(Error::Prediction(_))
        ));
        assert!(matches!(
            predict_quantiles_parametric(Family::TruncatedNormal, 0.3, 0.0, &lv),
            Err(Error::Prediction(_))
        ));
    }

    proptest! {
        #[test]
        fn quantiles_strictly_increasing_and_positive(
            fam in prop_oneof![Just(Family::Gamma), Just(Family::TruncatedNormal)],
            mu in 0.05f64..1.5, sigma in 0.05f64..1.0,
        ) {
            let q = predict_quantiles_parametric(fam, mu, sigma, &QuantileLevels::default()).unwrap();
            let v = q.values();
            prop_assert!(v[0] > 0.0);
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn interval_widens_with_sigma(
            fam in prop_oneof![Just(Family::Gamma), Just(Family::TruncatedNormal)],
            mu in 0.1f64..1.5, s1 in 0.05f64..0.8, ds in 0.01f64..0.5,
        ) {
            let lv = QuantileLevels::new(vec![0.02, 0.98]).unwrap();
            let a = predict_quantiles_parametric(fam, mu, s1, &lv).unwrap();
            let b = predict_quantiles_parametric(fam, mu, s1 + ds, &lv).unwrap();
            prop_assert!(b.values()[1] - b.values()[0] > a.values()[1] - a.values()[0]);
        }
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("X{j:03}")).collect()
    }

    fn gamma_sample(n: usize, noise: usize, seed: u64) -> (PredictorMatrix, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..=noise).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let sigma: f64 = 0.3;
        let k = 1.0 / (sigma * sigma);
        let y = (0..n)
            .map(|i| {
                let mu = (0.1 + 0.9 * cols[0][i]).exp();
                rand_distr::Gamma::new(k, mu / k).unwrap().sample(&mut rng)
            })
            .collect();
        (PredictorMatrix::from_columns(names(noise + 1), &cols).unwrap(), y)
    }

    #[test]
    fn gamma_recovery_among_many_noise_predictors() {
        let (m, y) = gamma_sample(5000, 200, 11);
        let fit = fit_sequential(Family::Gamma, &m, &y, 5, 1).unwrap();
        assert_eq!(fit.mu_steps[0].step, super::super::stepwise::Move::Add(0));
        let j = fit.mu.predictors.iter().position(|p| p == "X000").unwrap();
        assert!((fit.mu.coefficients[j] - 0.9).abs() < 0.1, "{:?}", fit.mu);
        assert!((fit.mu.intercept - 0.1).abs() < 0.1, "{:?}", fit.mu);
        assert!(fit.nll <= fit.nll_intercept_only);
        assert!(fit.mu_steps.windows(2).all(|w| w[1].aic < w[0].aic));
    }

    #[test]
    fn truncated_normal_recovery() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 5000;
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let mu = 0.3 + 0.6 * cols[2][i];
                loop {
                    let v = mu + 0.2 * nrm.sample(&mut rng);
                    if v > 0.0 {
                        break v;
                    }
                }
            })
            .collect();
        let m = PredictorMatrix::from_columns(names(4), &cols).unwrap();
        let fit = fit_sequential(Family::TruncatedNormal, &m, &y, 5, 1).unwrap();
        assert_eq!(fit.mu.predictors[0], "X002");
        assert!((fit.mu.coefficients[0] - 0.6).abs() < 0.1);
        assert!((fit.mu.intercept - 0.3).abs() < 0.1);
    }

    #[test]
    fn zero_budget_is_intercept_only() {
        let (m, y) = gamma_sample(300, 3, 2);
        let fit = fit_sequential(Family::Gamma, &m, &y, 0, 0).unwrap();
        assert!(fit.mu.predictors.is_empty() && fit.sigma.predictors.is_empty());
        assert!((fit.nll - fit.nll_intercept_only).abs() < 1e-9);
        let p = fit.predict(&m, &QuantileLevels::default()).unwrap();
        assert!(p.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn null_data_rarely_admits_a_predictor() {
        // 2 - LR >= -2 holds for a single pure-noise column with probability
        // P(chi2_1 <= 4) = 0.954
        let mut ok = 0;
        let trials = 40;
        for seed in 0..trials {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 400;
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..n)
                .map(|_| rand_distr::Gamma::new(4.0, 0.25).unwrap().sample(&mut rng))
                .collect();
            let m = PredictorMatrix::from_columns(names(1), &[x]).unwrap();
            let base = fit_sequential(Family::Gamma, &m, &y, 0, 0).unwrap();
            let one = fit_sequential(Family::Gamma, &m, &y, 1, 0).unwrap();
            let ext = if one.mu.predictors.is_empty() { base.aic + 2.0 } else { one.aic };
            if ext >= base.aic - 2.0 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.85 * trials as f64, "{ok}/{trials}");
    }

    #[test]
    fn zero_observations_are_shifted_for_gamma() {
        let (m, mut y) = gamma_sample(300, 1, 3);
        y[0] = 0.0;
        let fit = fit_sequential(Family::Gamma, &m, &y, 1, 0).unwrap();
        assert!(fit.nll.is_finite());
        y[1] = -0.5;
        assert!(matches!(fit_sequential(Family::Gamma, &m, &y, 1, 0), Err(Error::Domain(_))));
    }
}
