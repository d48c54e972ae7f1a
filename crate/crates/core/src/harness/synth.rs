//! Synthetic stand-in for an NWP/observation archive.
//!
//! Each station carries a latent sky state (clear, broken, overcast) that
//! evolves hourly as a persistent Markov chain whose climatological state
//! probabilities vary with season, hour and distance to the coast. The
//! observed clear-sky index is drawn from a state-conditional distribution.
//! The "model" sees a forecast state that equals the truth with probability
//! `forecast_skill`, and every model field is a noisy function of that
//! forecast state: G and DIR are strongly informative, cloud cover, cloud
//! water and humidity moderately, AOD weakly (it shifts clear-sky CSI), and
//! T, ANG, OZ carry no information beyond the season.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use super::Dataset;
use crate::domain::StationMeta;
use crate::engine::seed;
use crate::error::{Error, Result};
use crate::features::{hour_start, Observation, RawFieldRow};
use crate::solar::{self, ClearSkyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkyState {
    Clear,
    Broken,
    Overcast,
}

impl SkyState {
    pub const ALL: [SkyState; 3] = [SkyState::Clear, SkyState::Broken, SkyState::Overcast];

    fn index(self) -> usize {
        self as usize
    }

    fn from_probabilities(p: [f64; 3], u: f64) -> SkyState {
        if u < p[0] {
            SkyState::Clear
        } else if u < p[0] + p[1] {
            SkyState::Broken
        } else {
            SkyState::Overcast
        }
    }
}

const CLEAR_BASE: f64 = 0.97;
const CLEAR_AOD_SLOPE: f64 = 0.4;
const CLEAR_SD: f64 = 0.03;
const AOD_MEDIAN: f64 = 0.15;
const BROKEN_RANGE: (f64, f64) = (0.25, 0.65);
const OVERCAST_RANGE: (f64, f64) = (0.03, 0.32);
const OVERCAST_SHAPE: (f64, f64) = (2.0, 4.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub stations: Vec<StationMeta>,
    pub start_date: NaiveDate,
    pub days: u32,
    /// Hourly probability that the latent state persists.
    pub persistence: f64,
    /// Probability that the model's forecast state equals the latent state.
    pub forecast_skill: f64,
    /// Fixed (clear, broken, overcast) probabilities replacing the seasonal
    /// climatology; the forecast state is then always correct.
    pub state_probabilities: Option<[f64; 3]>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let st = |id: &str, lat, lon, coast, water, inland| StationMeta {
            station_id: id.to_string(),
            latitude: lat,
            longitude: lon,
            dist_coast_km: coast,
            dist_water_km: water,
            dist_inland_km: inland,
        };
        SynthSpec {
            stations: vec![
                st("coast", 52.93, 4.78, 1.0, 1.0, 110.0),
                st("central", 52.10, 5.18, 55.0, 8.0, 50.0),
                st("inland", 52.27, 6.89, 165.0, 25.0, 0.0),
            ],
            start_date: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            days: 730,
            persistence: 0.9,
            forecast_skill: 0.75,
            state_probabilities: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stations.is_empty() {
            return Err(Error::Config("synth.stations must not be empty".into()));
        }
        for s in &self.stations {
            s.validate()?;
        }
        if self.days == 0 {
            return Err(Error::Config("synth.days must be at least 1".into()));
        }
        for (name, v) in [("persistence", self.persistence), ("forecast_skill", self.forecast_skill)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("synth.{name} = {v} must lie in [0, 1]")));
            }
        }
        if let Some(p) = self.state_probabilities {
            if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "synth.state_probabilities = {p:?} must be nonnegative and sum to 1"
                )));
            }
        }
        Ok(())
    }

    /// Climatological state probabilities at a station and time.
    pub fn climatology(&self, station: &StationMeta, time: DateTime<Utc>) -> [f64; 3] {
        if let Some(p) = self.state_probabilities {
            return p;
        }
        // +1 at midsummer, -1 at midwinter
        let season = (2.0 * PI * (f64::from(time.ordinal()) - 172.0) / 365.25).cos();
        let coast = (-station.dist_coast_km / 20.0).exp();
        let summer = season.max(0.0);
        // Sea-breeze clearing at the coast in spring/summer, afternoon
        // convection inland.
        let hour = f64::from(time.hour());
        let afternoon = (-((hour - 13.0) / 3.0).powi(2)).exp();
        let mut clear = 0.30 + 0.10 * season + 0.12 * coast * summer - 0.05 * coast * (-season).max(0.0);
        let overcast = 0.33 - 0.12 * season;
        let shift = 0.12 * (1.0 - coast) * summer * afternoon;
        clear -= shift;
        [clear, 1.0 - clear - overcast, overcast]
    }

    /// Quantile of the clear-sky index given the latent state and the true
    /// aerosol optical depth.
    pub fn state_quantile(state: SkyState, aod: f64, p: f64) -> f64 {
        match state {
            SkyState::Clear => {
                let z = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
                (CLEAR_BASE - CLEAR_AOD_SLOPE * (aod - AOD_MEDIAN) + CLEAR_SD * z).max(0.0)
            }
            SkyState::Broken => {
                let b = BetaDist::new(2.0, 2.0).expect("valid beta");
                BROKEN_RANGE.0 + BROKEN_RANGE.1 * b.inverse_cdf(p)
            }
            SkyState::Overcast => {
                let b = BetaDist::new(OVERCAST_SHAPE.0, OVERCAST_SHAPE.1).expect("valid beta");
                OVERCAST_RANGE.0 + OVERCAST_RANGE.1 * b.inverse_cdf(p)
            }
        }
    }

    /// CDF of the clear-sky index under a state mixture.
    pub fn mixture_cdf(weights: [f64; 3], aod: f64, x: f64) -> f64 {
        let clear = {
            let m = CLEAR_BASE - CLEAR_AOD_SLOPE * (aod - AOD_MEDIAN);
            if x < 0.0 {
                0.0
            } else {
                0.5 * statrs::function::erf::erfc(-(x - m) / (CLEAR_SD * std::f64::consts::SQRT_2))
            }
        };
        let scaled = |range: (f64, f64), a: f64, b: f64| {
            let t = ((x - range.0) / range.1).clamp(0.0, 1.0);
            BetaDist::new(a, b).expect("valid beta").cdf(t)
        };
        weights[0] * clear + weights[1] * scaled(BROKEN_RANGE, 2.0, 2.0) + weights[2] * scaled(OVERCAST_RANGE, OVERCAST_SHAPE.0, OVERCAST_SHAPE.1)
    }

    /// Quantiles of the clear-sky index under a state mixture, by bisection
    /// on the mixture CDF.
    pub fn mixture_quantiles(weights: [f64; 3], aod: f64, levels: &[f64]) -> Vec<f64> {
        levels
            .iter()
            .map(|&p| {
                let (mut lo, mut hi) = (0.0, 2.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if Self::mixture_cdf(weights, aod, mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    /// Posterior state probabilities given the forecast state, assuming the
    /// latent state follows the climatology `prior`.
    pub fn state_posterior(&self, prior: [f64; 3], forecast: SkyState) -> [f64; 3] {
        if self.state_probabilities.is_some() {
            let mut w = [0.0; 3];
            w[forecast.index()] = 1.0;
            return w;
        }
        let s = self.forecast_skill;
        let mut w = [0.0; 3];
        for (k, wk) in w.iter_mut().enumerate() {
            let lik = if k == forecast.index() { s + (1.0 - s) * prior[k] } else { (1.0 - s) * prior[forecast.index()] };
            *wk = prior[k] * lik;
        }
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    }
}

/// Per-hour generative truth behind the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub state: SkyState,
    pub forecast_state: SkyState,
    pub aod: f64,
    pub csi: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: Vec<TruthRow>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_csi(state: SkyState, aod: f64, rng: &mut ChaCha8Rng) -> f64 {
    match state {
        SkyState::Clear => (CLEAR_BASE - CLEAR_AOD_SLOPE * (aod - AOD_MEDIAN) + CLEAR_SD * normal(rng)).max(0.0),
        SkyState::Broken => {
            let b: f64 = Beta::new(2.0, 2.0).expect("valid beta").sample(rng);
            BROKEN_RANGE.0 + BROKEN_RANGE.1 * b
        }
        SkyState::Overcast => {
            let b: f64 = Beta::new(OVERCAST_SHAPE.0, OVERCAST_SHAPE.1).expect("valid beta").sample(rng);
            OVERCAST_RANGE.0 + OVERCAST_RANGE.1 * b
        }
    }
}

/// Model fields (predictor names, radiation in W/m2) for one forecast state.
fn model_fields(
    f: SkyState,
    aod_true: f64,
    season: f64,
    cs: f64,
    three_hourly: bool,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, f64> {
    let k = f.index();
    let mut out = BTreeMap::new();
    let mut put = |name: &str, v: f64| {
        out.insert(name.to_string(), v);
    };
    let g = ([0.95, 0.6, 0.2][k] + 0.08 * normal(rng)).clamp(0.0, 1.2);
    let dir = ([0.8, 0.35, 0.03][k] + 0.15 * normal(rng)).clamp(0.0, 1.1);
    put("G", g * cs);
    put("DIR_surf", dir * cs);
    put("DIR_toa", (dir + 0.1 * normal(rng)).clamp(0.0, 1.1) * cs);
    put("NCS_surf", (1.0 + 0.02 * normal(rng)) * cs);
    put("NCS_toa", (1.0 + 0.02 * normal(rng)) * cs);

    let cover = [0.05, 0.5, 0.95][k];
    let mut layers = [0.0; 3];
    for (i, layer) in ["low", "middle", "high"].iter().enumerate() {
        layers[i] = (cover + 0.25 * normal(rng)).clamp(0.0, 1.0);
        put(&format!("CC_{layer}"), layers[i]);
    }
    put("CC_total", (cover + 0.15 * normal(rng)).clamp(0.0, 1.0));
    let water = [0.0, 0.05, 0.2][k];
    let mut cw_total = 0.0;
    for layer in ["low", "middle", "high"] {
        let v = water * (0.5 * normal(rng)).exp() / 3.0;
        cw_total += v;
        put(&format!("CW_{layer}"), v);
    }
    put("CW_total", cw_total);
    for layer in ["low", "middle", "high"] {
        put(&format!("RH_{layer}"), ([60.0, 75.0, 90.0][k] + 10.0 * normal(rng)).clamp(0.0, 100.0));
    }
    let pw_base = 12.0 + 6.0 * season + [0.0, 2.0, 4.0][k];
    let mut pw_total = 0.0;
    for (layer, share) in [("low", 0.6), ("middle", 0.3), ("high", 0.1)] {
        let v = (share * pw_base + share * 3.0 * normal(rng)).max(0.0);
        pw_total += v;
        put(&format!("PW_{layer}"), v);
    }
    put("PW_total", pw_total);
    let rain_prob = [0.0, 0.1, 0.4][k];
    let rain = if rng.random::<f64>() < rain_prob {
        Exp::new(2.0).expect("valid rate").sample(rng)
    } else {
        0.0
    };
    put("RAIN", rain);
    let t_low = 283.0 + 8.0 * season + 3.0 * normal(rng);
    put("T_low", t_low);
    put("T_middle", t_low - 15.0 + 2.0 * normal(rng));
    put("T_high", t_low - 45.0 + 2.0 * normal(rng));
    if three_hourly {
        put("AOD", aod_true * (0.2 * normal(rng)).exp());
        put("ANG", 1.3 + 0.3 * normal(rng));
        put("OZ", 330.0 + 20.0 * normal(rng));
    }
    out
}

/// Generates hourly observations and one 00 UTC model run per day with lead
/// times 1..=24 for every station.
pub fn synth_generate(spec: &SynthSpec, clearsky: &ClearSkyConfig, root_seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    clearsky.validate()?;
    let mut fields = Vec::new();
    let mut observations = Vec::new();
    let mut truth = Vec::new();
    let start = spec.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    for station in &spec.stations {
        let mut rng = seed::stream(root_seed, &[seed::tag("synth"), seed::tag(&station.station_id)]);
        let mut state = SkyState::from_probabilities(spec.climatology(station, start), rng.random());
        let mut aod = AOD_MEDIAN;
        for day in 0..spec.days {
            let init = start + Duration::days(i64::from(day));
            for lead in 1..=24u32 {
                let valid = init + Duration::hours(i64::from(lead));
                let clim = spec.climatology(station, valid);
                if rng.random::<f64>() >= spec.persistence {
                    state = SkyState::from_probabilities(clim, rng.random());
                }
                if lead % 3 == 0 || lead == 1 {
                    aod = AOD_MEDIAN * (0.4 * normal(&mut rng)).exp();
                }
                let forecast_state = if spec.state_probabilities.is_some() || rng.random::<f64>() < spec.forecast_skill {
                    state
                } else {
                    SkyState::from_probabilities(clim, rng.random())
                };
                let csi = draw_csi(state, aod, &mut rng);
                let cs = solar::hourly_clearsky(station.latitude, station.longitude, hour_start(valid), clearsky)?;
                let season = (2.0 * PI * (f64::from(valid.ordinal()) - 172.0) / 365.25).cos();
                let mut f = model_fields(forecast_state, aod, season, cs, lead % 3 == 0, &mut rng);
                if cs <= 0.0 {
                    for name in crate::features::RADIATION_FIELDS {
                        f.insert(name.to_string(), 0.0);
                    }
                }
                fields.push(RawFieldRow {
                    station_id: station.station_id.clone(),
                    valid_time: valid,
                    lead_time: lead,
                    dx: 0,
                    dy: 0,
                    fields: f,
                });
                observations.push(Observation {
                    station_id: station.station_id.clone(),
                    valid_time: valid,
                    ghi_wm2: solar::from_csi(csi, cs),
                });
                truth.push(TruthRow {
                    station_id: station.station_id.clone(),
                    valid_time: valid,
                    state,
                    forecast_state,
                    aod,
                    csi,
                });
            }
        }
    }
    let stations = spec.stations.iter().map(|s| (s.station_id.clone(), s.clone())).collect();
    Ok(SynthOutput {
        dataset: Dataset {
            stations,
            fields,
            observations,
        },
        truth,
    })
}
