//! Verification metrics: RMSE skill of the median, CRPS/CRPSS, Brier score and
//! skill, reliability diagrams and potential economic value.
//!
//! Skill scores are `Option<f64>`; `None` marks an undefined skill (zero
//! reference score, or degenerate event frequencies) and is never replaced by
//! 0 or infinity.
//!
//! [`SliceScores`] keeps every metric as additive sums so scores from several
//! verification slices can be pooled exactly with [`SliceScores::merge`]; the
//! climatological reference of each slice is always its own sample.

use serde::{Deserialize, Serialize};

use crate::domain::QuantileForecast;
use crate::error::{Error, Result};

pub type Skill = Option<f64>;

fn skill(score: f64, reference: f64) -> Skill {
    if reference > 0.0 && reference.is_finite() && score.is_finite() {
        Some(1.0 - score / reference)
    } else {
        None
    }
}

/// CRPS of one quantile forecast against one observation:
/// `(1/Q) sum |f_k - y| - (1/(2Q^2)) sum_k sum_l |f_k - f_l|`.
pub fn crps(forecast: &[f64], y: f64) -> f64 {
    let q = forecast.len() as f64;
    let spread_to_obs: f64 = forecast.iter().map(|f| (f - y).abs()).sum::<f64>() / q;
    // sum_k sum_l |f_k - f_l| = 2 sum_i (2i - Q + 1) f_(i) over the sorted values (0-based i)
    let mut sorted = forecast.to_vec();
    if !sorted.windows(2).all(|w| w[0] <= w[1]) {
        sorted.sort_by(f64::total_cmp);
    }
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, f)| (2.0 * i as f64 - q + 1.0) * f)
        .sum::<f64>()
        * 2.0;
    (spread_to_obs - pair_sum / (2.0 * q * q)).max(0.0)
}

/// Pinball (quantile) loss of forecast `f` at level `q` for observation `y`.
pub fn pinball_loss(q: f64, y: f64, f: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(pinball_unchecked(q, y, f))
}

#[inline]
pub(crate) fn pinball_unchecked(q: f64, y: f64, f: f64) -> f64 {
    let r = y - f;
    if r >= 0.0 {
        q * r
    } else {
        (q - 1.0) * r
    }
}

/// Linear-interpolation sample quantile (R's default, type 7) of sorted data.
pub fn sample_quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Sample-climatology quantile vector of the observations at `levels`.
pub fn climatology_quantiles(observations: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut sorted = observations.to_vec();
    sorted.sort_by(f64::total_cmp);
    levels.iter().map(|&q| sample_quantile_sorted(&sorted, q)).collect()
}

fn check_lengths(forecasts: &[QuantileForecast], observations: &[f64]) -> Result<()> {
    if forecasts.len() != observations.len() {
        return Err(Error::Structural(format!(
            "{} forecasts but {} observations",
            forecasts.len(),
            observations.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::Structural("empty verification sample".into()));
    }
    Ok(())
}

/// Root mean squared error of the forecast medians.
pub fn rmse(forecasts: &[QuantileForecast], observations: &[f64]) -> Result<f64> {
    check_lengths(forecasts, observations)?;
    let sse: f64 = forecasts
        .iter()
        .zip(observations)
        .map(|(f, y)| (y - f.median()).powi(2))
        .sum();
    Ok((sse / observations.len() as f64).sqrt())
}

/// Skill of the median against the sample-mean climatology.
pub fn rmse_ss(forecasts: &[QuantileForecast], observations: &[f64]) -> Result<Skill> {
    let r = rmse(forecasts, observations)?;
    let mean = observations.iter().sum::<f64>() / observations.len() as f64;
    let r_clim =
        (observations.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / observations.len() as f64).sqrt();
    Ok(skill(r, r_clim))
}

/// Mean CRPS of the forecasts, the mean CRPS of the sample-climatology
/// quantile forecast, and the resulting skill.
pub fn crpss(forecasts: &[QuantileForecast], observations: &[f64]) -> Result<(f64, f64, Skill)> {
    check_lengths(forecasts, observations)?;
    let n = observations.len() as f64;
    let levels = forecasts[0].levels().as_slice();
    if observations.len() < levels.len() {
        log::warn!(
            "climatology from {} observations for {} quantile levels",
            observations.len(),
            levels.len()
        );
    }
    let clim = climatology_quantiles(observations, levels);
    let mean: f64 = forecasts.iter().zip(observations).map(|(f, y)| crps(f.values(), *y)).sum::<f64>() / n;
    let mean_clim: f64 = observations.iter().map(|y| crps(&clim, *y)).sum::<f64>() / n;
    Ok((mean, mean_clim, skill(mean, mean_clim)))
}

/// Binary event "CSI does not exceed `threshold`".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryEventSpec {
    pub threshold: f64,
}

impl BinaryEventSpec {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("event threshold {threshold} must be positive")));
        }
        Ok(BinaryEventSpec { threshold })
    }

    pub fn occurred(&self, y: f64) -> bool {
        y <= self.threshold
    }

    pub fn probability(&self, forecast: &QuantileForecast) -> f64 {
        forecast.probability_not_exceeding(self.threshold)
    }
}

/// Forecast probabilities and binary outcomes for an event.
pub fn event_probabilities(
    forecasts: &[QuantileForecast],
    observations: &[f64],
    event: &BinaryEventSpec,
) -> (Vec<f64>, Vec<bool>) {
    forecasts
        .iter()
        .zip(observations)
        .map(|(f, y)| (event.probability(f), event.occurred(*y)))
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierScore {
    pub bs: f64,
    /// Score of the constant observed-relative-frequency forecast.
    pub bs_clim: f64,
    pub bss: Skill,
    pub orf: f64,
}

pub fn brier_from_probabilities(probs: &[f64], outcomes: &[bool]) -> Result<BrierScore> {
    if probs.len() != outcomes.len() || probs.is_empty() {
        return Err(Error::Structural("probability and outcome lengths differ or are empty".into()));
    }
    let n = probs.len() as f64;
    let orf = outcomes.iter().filter(|&&o| o).count() as f64 / n;
    let bs = probs
        .iter()
        .zip(outcomes)
        .map(|(p, &o)| (f64::from(u8::from(o)) - p).powi(2))
        .sum::<f64>()
        / n;
    let bs_clim = orf * (1.0 - orf);
    Ok(BrierScore {
        bs,
        bs_clim,
        bss: skill(bs, bs_clim),
        orf,
    })
}

pub fn brier(forecasts: &[QuantileForecast], observations: &[f64], event: &BinaryEventSpec) -> Result<BrierScore> {
    check_lengths(forecasts, observations)?;
    let (p, o) = event_probabilities(forecasts, observations, event);
    brier_from_probabilities(&p, &o)
}

/// One reliability-diagram bin over forecast probability `(lower, upper]`
/// (the first bin also holds probability 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub sum_forecast: f64,
    pub sum_observed: f64,
}

impl ReliabilityBin {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mean_forecast(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_forecast / self.count as f64)
    }

    pub fn observed_frequency(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_observed / self.count as f64)
    }

    /// Binomial standard error of the observed frequency under perfect
    /// reliability at the bin's mean forecast probability.
    pub fn standard_error(&self) -> Option<f64> {
        let p = self.mean_forecast()?;
        Some((p * (1.0 - p) / self.count as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityDiagram {
    pub fn empty(n_bins: usize) -> Self {
        let w = 1.0 / n_bins as f64;
        ReliabilityDiagram {
            bins: (0..n_bins)
                .map(|b| ReliabilityBin {
                    lower: b as f64 * w,
                    upper: if b + 1 == n_bins { 1.0 } else { (b + 1) as f64 * w },
                    count: 0,
                    sum_forecast: 0.0,
                    sum_observed: 0.0,
                })
                .collect(),
        }
    }

    fn bin_index(&self, p: f64) -> usize {
        let n = self.bins.len();
        ((p * n as f64).ceil() as usize).saturating_sub(1).min(n - 1)
    }

    pub fn add(&mut self, p: f64, outcome: bool) {
        let b = self.bin_index(p);
        let bin = &mut self.bins[b];
        bin.count += 1;
        bin.sum_forecast += p;
        bin.sum_observed += f64::from(u8::from(outcome));
    }

    pub fn merge(&mut self, other: &ReliabilityDiagram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
            a.sum_forecast += b.sum_forecast;
            a.sum_observed += b.sum_observed;
        }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Murphy decomposition `(reliability, resolution, uncertainty)`; exact
    /// when all forecasts within a bin share one probability.
    pub fn brier_decomposition(&self) -> Option<(f64, f64, f64)> {
        let n = self.total() as f64;
        if n == 0.0 {
            return None;
        }
        let obar = self.bins.iter().map(|b| b.sum_observed).sum::<f64>() / n;
        let mut rel = 0.0;
        let mut res = 0.0;
        for b in self.bins.iter().filter(|b| b.count > 0) {
            let nk = b.count as f64;
            let fk = b.sum_forecast / nk;
            let ok = b.sum_observed / nk;
            rel += nk * (fk - ok).powi(2);
            res += nk * (ok - obar).powi(2);
        }
        Some((rel / n, res / n, obar * (1.0 - obar)))
    }
}

pub fn reliability_from_probabilities(probs: &[f64], outcomes: &[bool], n_bins: usize) -> Result<ReliabilityDiagram> {
    if n_bins < 2 {
        return Err(Error::Config(format!("reliability diagrams need at least 2 bins, got {n_bins}")));
    }
    let mut d = ReliabilityDiagram::empty(n_bins);
    for (p, o) in probs.iter().zip(outcomes) {
        d.add(*p, *o);
    }
    Ok(d)
}

pub fn reliability(
    forecasts: &[QuantileForecast],
    observations: &[f64],
    event: &BinaryEventSpec,
    n_bins: usize,
) -> Result<ReliabilityDiagram> {
    let (p, o) = event_probabilities(forecasts, observations, event);
    reliability_from_probabilities(&p, &o, n_bins)
}

/// 2x2 contingency table of a probability trigger for an event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub hits: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub correct_rejections: u64,
}

impl ContingencyCounts {
    /// The event is forecast when the probability reaches `trigger`.
    pub fn from_trigger(probs: &[f64], outcomes: &[bool], trigger: f64) -> Self {
        let mut c = ContingencyCounts::default();
        for (&p, &o) in probs.iter().zip(outcomes) {
            match (p >= trigger, o) {
                (true, true) => c.hits += 1,
                (true, false) => c.false_alarms += 1,
                (false, true) => c.misses += 1,
                (false, false) => c.correct_rejections += 1,
            }
        }
        c
    }

    pub fn n(&self) -> u64 {
        self.hits + self.false_alarms + self.misses + self.correct_rejections
    }

    fn freq(&self, k: u64) -> f64 {
        k as f64 / self.n() as f64
    }

    pub fn hit_frequency(&self) -> f64 {
        self.freq(self.hits)
    }

    pub fn false_alarm_frequency(&self) -> f64 {
        self.freq(self.false_alarms)
    }

    pub fn miss_frequency(&self) -> f64 {
        self.freq(self.misses)
    }

    /// Observed relative frequency of the event.
    pub fn orf(&self) -> f64 {
        self.freq(self.hits + self.misses)
    }

    pub fn add(&mut self, other: &ContingencyCounts) {
        self.hits += other.hits;
        self.false_alarms += other.false_alarms;
        self.misses += other.misses;
        self.correct_rejections += other.correct_rejections;
    }
}

/// Economic value of one contingency table at cost/loss ratio `cl`.
/// Undefined when the event never or always occurs. At `cl == orf` the
/// second branch is used.
pub fn economic_value(counts: &ContingencyCounts, cl: f64) -> Option<f64> {
    if counts.n() == 0 {
        return None;
    }
    let h = counts.hit_frequency();
    let fa = counts.false_alarm_frequency();
    let m = counts.miss_frequency();
    let orf = counts.orf();
    if orf <= 0.0 || orf >= 1.0 {
        return None;
    }
    let v = if cl < orf {
        (cl * (h + fa - 1.0) + m) / (cl * (orf - 1.0))
    } else {
        (cl * (h + fa) + m - orf) / ((cl - 1.0) * orf)
    };
    Some(v)
}

/// Default probability triggers for a `q`-member quantile forecast: always,
/// each attainable probability k/q, and never.
pub fn default_triggers(q: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..=q).map(|k| k as f64 / q as f64).collect();
    t.push(f64::INFINITY);
    t
}

/// Evenly spaced cost/loss ratios 1/(n+1), ..., n/(n+1).
pub fn cost_loss_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PevPoint {
    pub cost_loss: f64,
    pub pev: Option<f64>,
    pub best_trigger: Option<f64>,
}

/// Potential economic value: for each cost/loss ratio, the best value over all
/// trigger contingency tables.
pub fn pev_from_tables(tables: &[(f64, ContingencyCounts)], cost_loss: &[f64]) -> Result<Vec<PevPoint>> {
    if let Some(bad) = cost_loss.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
        return Err(Error::Config(format!("cost/loss ratio {bad} outside (0, 1)")));
    }
    Ok(cost_loss
        .iter()
        .map(|&cl| {
            let mut best: Option<(f64, f64)> = None;
            for (trigger, counts) in tables {
                if let Some(v) = economic_value(counts, cl) {
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, *trigger));
                    }
                }
            }
            PevPoint {
                cost_loss: cl,
                pev: best.map(|b| b.0),
                best_trigger: best.map(|b| b.1),
            }
        })
        .collect())
}

pub fn pev_curve(
    probs: &[f64],
    outcomes: &[bool],
    triggers: &[f64],
    cost_loss: &[f64],
) -> Result<Vec<PevPoint>> {
    let tables: Vec<(f64, ContingencyCounts)> = triggers
        .iter()
        .map(|&t| (t, ContingencyCounts::from_trigger(probs, outcomes, t)))
        .collect();
    pev_from_tables(&tables, cost_loss)
}

/// Settings shared by every verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// CSI thresholds for the binary "not exceeding" events.
    pub thresholds: Vec<f64>,
    pub reliability_bins: usize,
    /// Number of evenly spaced cost/loss ratios.
    pub cost_loss_points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            thresholds: vec![0.2, 0.5, 0.9],
            reliability_bins: 10,
            cost_loss_points: 99,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        for t in &self.thresholds {
            BinaryEventSpec::new(*t)?;
        }
        if self.reliability_bins < 2 {
            return Err(Error::Config("verify.reliability_bins must be at least 2".into()));
        }
        if self.cost_loss_points == 0 {
            return Err(Error::Config("verify.cost_loss_points must be positive".into()));
        }
        Ok(())
    }
}

/// Additive score components for one binary event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScores {
    pub threshold: f64,
    pub n: usize,
    pub bs_sum: f64,
    /// Sum of squared deviations of outcomes from the slice's own frequency.
    pub bs_clim_sum: f64,
    pub reliability: ReliabilityDiagram,
    pub tables: Vec<(f64, ContingencyCounts)>,
}

impl EventScores {
    pub fn bs(&self) -> f64 {
        self.bs_sum / self.n as f64
    }

    pub fn bss(&self) -> Skill {
        skill(self.bs_sum, self.bs_clim_sum)
    }

    pub fn pev(&self, cost_loss: &[f64]) -> Result<Vec<PevPoint>> {
        pev_from_tables(&self.tables, cost_loss)
    }
}

/// Additive verification components of one forecast set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub n: usize,
    pub sse: f64,
    pub sse_clim: f64,
    pub crps_sum: f64,
    pub crps_clim_sum: f64,
    pub events: Vec<EventScores>,
}

impl SliceScores {
    /// Scores a forecast set against its own sample climatology.
    pub fn compute(forecasts: &[QuantileForecast], observations: &[f64], cfg: &VerifyConfig) -> Result<Self> {
        check_lengths(forecasts, observations)?;
        let n = observations.len();
        let mean = observations.iter().sum::<f64>() / n as f64;
        let levels = forecasts[0].levels().as_slice();
        let clim = climatology_quantiles(observations, levels);
        let mut s = SliceScores {
            n,
            sse: 0.0,
            sse_clim: 0.0,
            crps_sum: 0.0,
            crps_clim_sum: 0.0,
            events: Vec::new(),
        };
        for (f, &y) in forecasts.iter().zip(observations) {
            s.sse += (y - f.median()).powi(2);
            s.sse_clim += (y - mean).powi(2);
            s.crps_sum += crps(f.values(), y);
            s.crps_clim_sum += crps(&clim, y);
        }
        let triggers = default_triggers(levels.len());
        for &t in &cfg.thresholds {
            let event = BinaryEventSpec::new(t)?;
            let (p, o) = event_probabilities(forecasts, observations, &event);
            let orf = o.iter().filter(|&&x| x).count() as f64 / n as f64;
            let bs_sum = p.iter().zip(&o).map(|(p, &o)| (f64::from(u8::from(o)) - p).powi(2)).sum();
            let bs_clim_sum = o.iter().map(|&o| (f64::from(u8::from(o)) - orf).powi(2)).sum();
            s.events.push(EventScores {
                threshold: t,
                n,
                bs_sum,
                bs_clim_sum,
                reliability: reliability_from_probabilities(&p, &o, cfg.reliability_bins)?,
                tables: triggers
                    .iter()
                    .map(|&tr| (tr, ContingencyCounts::from_trigger(&p, &o, tr)))
                    .collect(),
            });
        }
        Ok(s)
    }

    /// Pools another slice into this one. Both must use the same thresholds,
    /// bins and triggers.
    pub fn merge(&mut self, other: &SliceScores) {
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        self.n += other.n;
        self.sse += other.sse;
        self.sse_clim += other.sse_clim;
        self.crps_sum += other.crps_sum;
        self.crps_clim_sum += other.crps_clim_sum;
        for (a, b) in self.events.iter_mut().zip(&other.events) {
            a.n += b.n;
            a.bs_sum += b.bs_sum;
            a.bs_clim_sum += b.bs_clim_sum;
            a.reliability.merge(&b.reliability);
            for ((_, ca), (_, cb)) in a.tables.iter_mut().zip(&b.tables) {
                ca.add(cb);
            }
        }
    }

    pub fn empty() -> Self {
        SliceScores {
            n: 0,
            sse: 0.0,
            sse_clim: 0.0,
            crps_sum: 0.0,
            crps_clim_sum: 0.0,
            events: Vec::new(),
        }
    }

    pub fn rmse(&self) -> f64 {
        (self.sse / self.n as f64).sqrt()
    }

    pub fn rmse_ss(&self) -> Skill {
        skill(self.sse.sqrt(), self.sse_clim.sqrt())
    }

    pub fn crps(&self) -> f64 {
        self.crps_sum / self.n as f64
    }

    pub fn crpss(&self) -> Skill {
        skill(self.crps_sum, self.crps_clim_sum)
    }

    pub fn event(&self, threshold: f64) -> Option<&EventScores> {
        self.events.iter().find(|e| (e.threshold - threshold).abs() < 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::QuantileLevels;
    use proptest::prelude::*;

    fn fc(levels: &QuantileLevels, v: &[f64]) -> QuantileForecast {
        QuantileForecast::from_raw(levels.clone(), v.to_vec()).unwrap()
    }

    /// Direct double-sum evaluation.
    fn crps_brute(f: &[f64], y: f64) -> f64 {
        let q = f.len() as f64;
        let a: f64 = f.iter().map(|v| (v - y).abs()).sum::<f64>() / q;
        let mut b = 0.0;
        for x in f {
            for z in f {
                b += (x - z).abs();
            }
        }
        a - b / (2.0 * q * q)
    }

    #[test]
    fn crps_examples() {
        assert!((crps(&[0.7], 0.2) - 0.5).abs() < 1e-15);
        assert!((crps(&[0.0, 1.0], 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(crps(&[0.4, 0.4, 0.4], 0.4), 0.0);
    }

    #[test]
    fn pinball_examples() {
        assert!((pinball_loss(0.9, 1.0, 0.5).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(pinball_loss(0.3, 0.7, 0.7).unwrap(), 0.0);
        assert_eq!(pinball_loss(0.5, 0.0, 2.0).unwrap(), 1.0);
        assert!(pinball_loss(1.0, 0.0, 1.0).is_err());
        assert!(pinball_loss(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn rmse_ss_examples() {
        let lv = QuantileLevels::new(vec![0.5]).unwrap();
        let obs = [0.2, 0.9, 0.5];
        let perfect: Vec<_> = obs.iter().map(|y| fc(&lv, &[*y])).collect();
        assert_eq!(rmse_ss(&perfect, &obs).unwrap(), Some(1.0));
        let mean = obs.iter().sum::<f64>() / 3.0;
        let clim: Vec<_> = obs.iter().map(|_| fc(&lv, &[mean])).collect();
        assert!(rmse_ss(&clim, &obs).unwrap().unwrap().abs() < 1e-12);
        let f = vec![fc(&lv, &[0.5]), fc(&lv, &[0.5])];
        assert!(rmse_ss(&f, &[0.0, 1.0]).unwrap().unwrap().abs() < 1e-12);
        // constant observations: undefined
        let f = vec![fc(&lv, &[0.3]), fc(&lv, &[0.3])];
        assert_eq!(rmse_ss(&f, &[0.3, 0.3]).unwrap(), None);
    }

    #[test]
    fn crpss_examples() {
        let lv = QuantileLevels::new(vec![0.25, 0.5, 0.75]).unwrap();
        let obs = [0.1, 0.4, 0.45, 0.8, 1.0, 0.3];
        let clim = climatology_quantiles(&obs, lv.as_slice());
        let same: Vec<_> = obs.iter().map(|_| fc(&lv, &clim)).collect();
        let (_, _, s) = crpss(&same, &obs).unwrap();
        assert!(s.unwrap().abs() < 1e-12);
        let perfect: Vec<_> = obs.iter().map(|y| fc(&lv, &[*y; 3])).collect();
        assert_eq!(crpss(&perfect, &obs).unwrap().2, Some(1.0));
        let constant = [0.5; 4];
        let f: Vec<_> = constant.iter().map(|y| fc(&lv, &[*y; 3])).collect();
        assert_eq!(crpss(&f, &constant).unwrap().2, None);
    }

    #[test]
    fn brier_examples() {
        let b = brier_from_probabilities(&[1.0, 0.0], &[true, false]).unwrap();
        assert_eq!(b.bs, 0.0);
        assert_eq!(b.bss, Some(1.0));
        let b = brier_from_probabilities(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(b.bs, 0.25);
        let o = [true, false, false, true, false];
        let b = brier_from_probabilities(&[0.4; 5], &o).unwrap();
        assert!(b.bss.unwrap().abs() < 1e-12);
        let b = brier_from_probabilities(&[0.4, 0.2], &[true, true]).unwrap();
        assert_eq!(b.bss, None);
    }

    #[test]
    fn reliability_binning() {
        let d = reliability_from_probabilities(&[0.0, 0.1, 0.15, 1.0], &[true, false, true, true], 10).unwrap();
        assert_eq!(d.bins[0].count, 2); // 0 and 0.1 (right-closed)
        assert_eq!(d.bins[1].count, 1);
        assert_eq!(d.bins[9].count, 1);
        assert!(d.bins[5].is_empty());
        assert_eq!(d.bins[5].observed_frequency(), None);
        assert_eq!(d.total(), 4);
        assert!(reliability_from_probabilities(&[0.5], &[true], 1).is_err());
    }

    #[test]
    fn always_zero_probability_single_bin() {
        let o = [true, false, false, false];
        let d = reliability_from_probabilities(&[0.0; 4], &o, 10).unwrap();
        let populated: Vec<_> = d.bins.iter().filter(|b| !b.is_empty()).collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].lower, 0.0);
        assert_eq!(populated[0].observed_frequency(), Some(0.25));
    }

    #[test]
    fn calibrated_forecasts_sit_on_the_diagonal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let p: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let o: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
        let d = reliability_from_probabilities(&p, &o, 10).unwrap();
        for b in d.bins.iter().filter(|b| b.count > 0) {
            let diff = (b.observed_frequency().unwrap() - b.mean_forecast().unwrap()).abs();
            assert!(diff <= 3.0 * b.standard_error().unwrap() + 1e-9, "{b:?}");
        }
    }

    #[test]
    fn brier_decomposition_exact_at_bin_centres() {
        let centres: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
        let mut p = Vec::new();
        let mut o = Vec::new();
        for (k, c) in centres.iter().enumerate() {
            for j in 0..(k + 3) {
                p.push(*c);
                o.push((j * 7 + k) % 3 == 0);
            }
        }
        let d = reliability_from_probabilities(&p, &o, 10).unwrap();
        let (rel, res, unc) = d.brier_decomposition().unwrap();
        let bs = brier_from_probabilities(&p, &o).unwrap().bs;
        assert!((rel - res + unc - bs).abs() < 1e-12);
    }

    #[test]
    fn pev_perfect_forecast_is_one() {
        let o = [true, false, false, true, false, false, false];
        let p: Vec<f64> = o.iter().map(|&x| f64::from(u8::from(x))).collect();
        let c = ContingencyCounts::from_trigger(&p, &o, 0.5);
        assert_eq!(c.false_alarms, 0);
        assert_eq!(c.misses, 0);
        for cl in cost_loss_grid(99) {
            assert!((economic_value(&c, cl).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pev_always_protect_below_orf_is_zero() {
        let o = [true, false, true, true, false];
        let c = ContingencyCounts::from_trigger(&[0.3; 5], &o, 0.0);
        assert_eq!(c.misses, 0);
        let orf = c.orf();
        for cl in cost_loss_grid(99).into_iter().filter(|&cl| cl < orf) {
            assert!(economic_value(&c, cl).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn pev_undefined_for_degenerate_events() {
        let c = ContingencyCounts::from_trigger(&[0.3, 0.6], &[false, false], 0.5);
        assert_eq!(economic_value(&c, 0.3), None);
        let curve = pev_curve(&[0.3, 0.6], &[true, true], &default_triggers(4), &[0.5]).unwrap();
        assert_eq!(curve[0].pev, None);
        assert!(pev_curve(&[0.3], &[true], &[0.5], &[1.0]).is_err());
    }

    #[test]
    fn probabilistic_pev_dominates_single_trigger() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..500).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
        let o: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
        let grid = cost_loss_grid(19);
        let best = pev_curve(&p, &o, &default_triggers(10), &grid).unwrap();
        let single = pev_curve(&p, &o, &[0.5], &grid).unwrap();
        for (b, s) in best.iter().zip(&single) {
            assert!(b.pev.unwrap() >= s.pev.unwrap() - 1e-15);
            assert!(b.pev.unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pooled_scores_match_direct_single_slice() {
        let lv = QuantileLevels::new(vec![0.2, 0.5, 0.8]).unwrap();
        let obs = [0.1, 0.5, 0.9, 0.7, 0.3];
        let f: Vec<_> = obs.iter().map(|y| fc(&lv, &[y * 0.8, *y, y * 1.1 + 0.05])).collect();
        let s = SliceScores::compute(&f, &obs, &VerifyConfig::default()).unwrap();
        let (c, cc, sk) = crpss(&f, &obs).unwrap();
        assert!((s.crps() - c).abs() < 1e-12);
        assert!((s.crps_clim_sum / 5.0 - cc).abs() < 1e-12);
        assert!((s.crpss().unwrap() - sk.unwrap()).abs() < 1e-12);
        assert!((s.rmse_ss().unwrap() - rmse_ss(&f, &obs).unwrap().unwrap()).abs() < 1e-12);
        let e = s.event(0.5).unwrap();
        let b = brier(&f, &obs, &BinaryEventSpec::new(0.5).unwrap()).unwrap();
        assert!((e.bs() - b.bs).abs() < 1e-12);
        assert!((e.bss().unwrap() - b.bss.unwrap()).abs() < 1e-12);

        let mut pooled = SliceScores::empty();
        pooled.merge(&s);
        pooled.merge(&s);
        assert_eq!(pooled.n, 10);
        assert!((pooled.crpss().unwrap() - s.crpss().unwrap()).abs() < 1e-12);
    }

    /// Mean CRPS of a constant Q-vector over a sample, evaluated directly.
    fn mean_crps_constant(f: &[f64], ys: &[f64]) -> f64 {
        ys.iter().map(|y| crps_brute(f, *y)).sum::<f64>() / ys.len() as f64
    }

    #[test]
    fn empirical_quantiles_minimise_mean_crps_over_constants() {
        // Stationarity puts member k at sample level (k - 1/2) / Q; with these
        // sample sizes the level never falls on a jump of the ECDF.
        let samples: [&[f64]; 3] = [
            &[0.1, 0.7, 0.3, 0.9, 0.45],
            &[0.2, 0.25, 0.8, 1.1, 0.05, 0.6, 0.66],
            &[0.0, 0.5, 1.0],
        ];
        for ys in samples {
            let mut sorted = ys.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = 2;
            let levels: Vec<f64> = (1..=q).map(|k| (k as f64 - 0.5) / q as f64).collect();
            // inverse-ECDF quantile
            let opt: Vec<f64> = levels
                .iter()
                .map(|&l| sorted[((l * ys.len() as f64).ceil() as usize).max(1) - 1])
                .collect();
            let best = mean_crps_constant(&opt, ys);
            let grid: Vec<f64> = (0..=120).map(|i| i as f64 * 0.01).collect();
            for a in &grid {
                for b in grid.iter().filter(|b| *b >= a) {
                    assert!(mean_crps_constant(&[*a, *b], ys) >= best - 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn crps_matches_double_sum(f in prop::collection::vec(0.0f64..1.5, 1..6), y in 0.0f64..1.5) {
            let a = crps(&f, y);
            let b = crps_brute(&f, y);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }

        #[test]
        fn crps_degenerate_is_absolute_error(f in -2.0f64..2.0, y in -2.0f64..2.0) {
            prop_assert!((crps(&[f], y) - (f - y).abs()).abs() < 1e-15);
        }
    }
}
