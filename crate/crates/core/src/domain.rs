//! Core data types shared by the feature builder, the engines, the verification
//! metrics and the experiment harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing probability levels in (0, 1), shared by every forecast
/// produced under one configuration.
#[derive(Clone, PartialEq)]
pub struct QuantileLevels(Arc<[f64]>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("quantile levels must not be empty".into()));
        }
        if let Some(bad) = levels.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::Config(format!(
                "quantile level {bad} outside the open interval (0, 1)"
            )));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(QuantileLevels(levels.into()))
    }

    /// `count` levels evenly spaced as k / (count + 1).
    pub fn evenly_spaced(count: usize) -> Self {
        let step = (count + 1) as f64;
        QuantileLevels((1..=count).map(|k| k as f64 / step).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    /// Index of the level equal to 0.5, if the grid contains it.
    pub fn median_index(&self) -> Option<usize> {
        self.0.iter().position(|&q| (q - 0.5).abs() < 1e-12)
    }

    /// Column labels such as `q0.02`.
    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(|q| format!("q{}", format_level(*q))).collect()
    }
}

/// The 49-level grid 0.02, 0.04, ..., 0.98.
impl Default for QuantileLevels {
    fn default() -> Self {
        QuantileLevels::evenly_spaced(49)
    }
}

impl fmt::Debug for QuantileLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Serialize for QuantileLevels {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_ref().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuantileLevels {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        QuantileLevels::new(v).map_err(serde::de::Error::custom)
    }
}

fn format_level(q: f64) -> String {
    let pct = q * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{q:.2}")
    } else {
        format!("{q}")
    }
}

/// A case's predictive distribution of clear-sky index, one value per level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    levels: QuantileLevels,
    values: Vec<f64>,
}

impl QuantileForecast {
    /// Wraps values without sanitation; the length must match the grid.
    pub fn from_raw(levels: QuantileLevels, values: Vec<f64>) -> Result<Self> {
        if values.len() != levels.len() {
            return Err(Error::Structural(format!(
                "forecast has {} values but {} quantile levels are configured",
                values.len(),
                levels.len()
            )));
        }
        Ok(QuantileForecast { levels, values })
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at level 0.5, interpolated linearly between the bracketing
    /// levels when the grid does not contain 0.5 itself.
    pub fn median(&self) -> f64 {
        if let Some(i) = self.levels.median_index() {
            return self.values[i];
        }
        let lv = self.levels.as_slice();
        match lv.iter().position(|&q| q > 0.5) {
            Some(0) => self.values[0],
            None => self.values[self.values.len() - 1],
            Some(i) => {
                let w = (0.5 - lv[i - 1]) / (lv[i] - lv[i - 1]);
                self.values[i - 1] + w * (self.values[i] - self.values[i - 1])
            }
        }
    }

    /// Fraction of quantile values at or below `threshold`.
    pub fn probability_not_exceeding(&self, threshold: f64) -> f64 {
        let below = self.values.iter().filter(|&&v| v <= threshold).count();
        below as f64 / self.values.len() as f64
    }
}

/// Sorts the raw quantile vector ascending and clamps negative values to zero.
pub fn sanitize_quantiles(levels: &QuantileLevels, raw: &[f64]) -> Result<QuantileForecast> {
    if raw.len() != levels.len() {
        return Err(Error::Structural(format!(
            "raw quantile vector has length {}, expected {}",
            raw.len(),
            levels.len()
        )));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Prediction(format!("non-finite quantile value {bad}")));
    }
    let mut values = raw.to_vec();
    values.sort_by(f64::total_cmp);
    for v in &mut values {
        // also folds -0.0 into +0.0
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    Ok(QuantileForecast {
        levels: levels.clone(),
        values,
    })
}

/// Meteorological season.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    /// Season of a calendar month (1 = January).
    pub fn from_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Autumn,
            _ => panic!("month {month} out of range"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "winter" | "djf" => Ok(Season::Winter),
            "spring" | "mam" => Ok(Season::Spring),
            "summer" | "jja" => Ok(Season::Summer),
            "autumn" | "fall" | "son" => Ok(Season::Autumn),
            "all" | "year" => Err(Error::Config(
                "whole-year fitting is selected with `whole_year = true`, not as a season".into(),
            )),
            other => Err(Error::Config(format!("unknown season `{other}`"))),
        }
    }
}

pub fn season_of(time: DateTime<Utc>) -> Season {
    Season::from_month(time.month())
}

/// Station location and distance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub dist_coast_km: f64,
    pub dist_water_km: f64,
    pub dist_inland_km: f64,
}

impl StationMeta {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Domain(format!(
                "station {}: latitude {} outside [-90, 90]",
                self.station_id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Domain(format!(
                "station {}: longitude {} outside [-180, 180]",
                self.station_id, self.longitude
            )));
        }
        for (name, d) in [
            ("dist_coast_km", self.dist_coast_km),
            ("dist_water_km", self.dist_water_km),
            ("dist_inland_km", self.dist_inland_km),
        ] {
            if !(d >= 0.0) {
                return Err(Error::Domain(format!(
                    "station {}: {name} = {d} must be non-negative",
                    self.station_id
                )));
            }
        }
        Ok(())
    }
}

/// One (station, valid time, lead time) row: predictor values plus the
/// clear-sky-index observation when available.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub lead_time: u32,
    /// Predictor name to value. Missing predictors are simply absent.
    pub predictors: BTreeMap<String, f64>,
    pub observation: Option<f64>,
    pub clearsky_wm2: f64,
}

impl ForecastCase {
    pub fn new(
        station_id: impl Into<String>,
        valid_time: DateTime<Utc>,
        lead_time: u32,
        predictors: BTreeMap<String, f64>,
        observation: Option<f64>,
        clearsky_wm2: f64,
    ) -> Result<Self> {
        let station_id = station_id.into();
        if let Some(y) = observation {
            if !(y >= 0.0) || !y.is_finite() {
                return Err(Error::Domain(format!(
                    "station {station_id} at {valid_time}: observed CSI {y} must be finite and >= 0"
                )));
            }
        }
        if !(clearsky_wm2 >= 0.0) {
            return Err(Error::Domain(format!(
                "station {station_id} at {valid_time}: clear-sky radiation {clearsky_wm2} must be >= 0"
            )));
        }
        Ok(ForecastCase {
            station_id,
            valid_time,
            lead_time,
            predictors,
            observation,
            clearsky_wm2,
        })
    }

    /// True when every name in `names` has a finite value.
    pub fn is_complete(&self, names: &[String]) -> bool {
        names
            .iter()
            .all(|n| self.predictors.get(n).is_some_and(|v| v.is_finite()))
    }

    pub fn season(&self) -> Season {
        season_of(self.valid_time)
    }
}
