//! Predictor engineering: layer aggregation of model profiles, precipitable
//! water, temporal and spatial smoothing, time/place predictors and the
//! assembly of the rectangular predictor matrix.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ForecastCase, StationMeta};
use crate::error::{Error, Result};
use crate::solar::{self, ClearSkyConfig, SolarPosition};

/// Version of the predictor naming scheme; bump when names or semantics change.
pub const REGISTRY_VERSION: u32 = 1;

/// The 34 potential predictors, in canonical column order.
pub const PREDICTOR_NAMES: [&str; 34] = [
    "T_low", "T_middle", "T_high",
    "RH_low", "RH_middle", "RH_high",
    "G", "DIR_surf", "DIR_toa", "NCS_surf", "NCS_toa",
    "RAIN",
    "CC_low", "CC_middle", "CC_high", "CC_total",
    "CW_low", "CW_middle", "CW_high", "CW_total",
    "PW_low", "PW_middle", "PW_high", "PW_total",
    "AOD", "ANG", "OZ",
    "LAT", "LON", "DOY", "COSZ", "DIST_coast", "DIST_water", "DIST_inland",
];

/// Radiation fields, converted to clear-sky index.
pub const RADIATION_FIELDS: [&str; 5] = ["G", "DIR_surf", "DIR_toa", "NCS_surf", "NCS_toa"];
/// Three-hourly atmospheric-composition fields, matched to the nearest lead time.
pub const COMPOSITION_FIELDS: [&str; 3] = ["AOD", "ANG", "OZ"];
pub const TIME_PLACE_FIELDS: [&str; 7] =
    ["LAT", "LON", "DOY", "COSZ", "DIST_coast", "DIST_water", "DIST_inland"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ModelField,
    Composition,
    TimePlace,
}

pub fn provenance_of(name: &str) -> Provenance {
    if COMPOSITION_FIELDS.contains(&name) {
        Provenance::Composition
    } else if TIME_PLACE_FIELDS.contains(&name) {
        Provenance::TimePlace
    } else {
        Provenance::ModelField
    }
}

/// The fixed, versioned set of predictor names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRegistry {
    pub version: u32,
    pub names: Vec<String>,
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        PredictorRegistry {
            version: REGISTRY_VERSION,
            names: PREDICTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PredictorRegistry {
    /// Registry restricted to a subset of the canonical names.
    pub fn subset(names: &[String]) -> Result<Self> {
        for n in names {
            if !PREDICTOR_NAMES.contains(&n.as_str()) {
                return Err(Error::Structural(format!("unknown predictor `{n}`")));
            }
        }
        Ok(PredictorRegistry {
            version: REGISTRY_VERSION,
            names: PREDICTOR_NAMES
                .iter()
                .filter(|p| names.iter().any(|n| n == *p))
                .map(|s| s.to_string())
                .collect(),
        })
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.to_le_bytes());
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

// ---------------------------------------------------------------------------
// Layers and profiles

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Low,
    Middle,
    High,
    Total,
}

impl Layer {
    pub const PARTITION: [Layer; 3] = [Layer::Low, Layer::Middle, Layer::High];
    pub const ALL: [Layer; 4] = [Layer::Low, Layer::Middle, Layer::High, Layer::Total];

    pub fn suffix(self) -> &'static str {
        match self {
            Layer::Low => "low",
            Layer::Middle => "middle",
            Layer::High => "high",
            Layer::Total => "total",
        }
    }

    /// Height bounds in metres; the top of the column is the highest profile level.
    pub fn bounds(self, top: f64) -> (f64, f64) {
        match self {
            Layer::Low => (0.0, 2000.0),
            Layer::Middle => (2000.0, 6000.0),
            Layer::High => (6000.0, top),
            Layer::Total => (0.0, top),
        }
    }

    fn contains(self, h: f64, top: f64) -> bool {
        let (lo, hi) = self.bounds(top);
        match self {
            Layer::High | Layer::Total => h >= lo && h <= hi,
            _ => h >= lo && h < hi,
        }
    }
}

/// Field values on model levels, ordered by ascending height above ground (m).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProfile {
    heights: Vec<f64>,
    values: Vec<f64>,
}

impl LevelProfile {
    /// Accepts strictly increasing or strictly decreasing heights.
    pub fn new(mut heights: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        if heights.len() != values.len() {
            return Err(Error::Structural(format!(
                "profile has {} heights but {} values",
                heights.len(),
                values.len()
            )));
        }
        if heights.len() < 2 {
            return Err(Error::Structural("profile needs at least two levels".into()));
        }
        if heights.windows(2).all(|w| w[1] < w[0]) {
            heights.reverse();
            values.reverse();
        }
        if !heights.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Structural("profile heights must be strictly monotone".into()));
        }
        Ok(LevelProfile { heights, values })
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn top(&self) -> f64 {
        self.heights[self.heights.len() - 1]
    }

    /// Piecewise-linear value at height `h`, held constant beyond the ends.
    fn interpolate(&self, h: f64) -> f64 {
        let hs = &self.heights;
        if h <= hs[0] {
            return self.values[0];
        }
        if h >= hs[hs.len() - 1] {
            return self.values[hs.len() - 1];
        }
        let i = hs.partition_point(|&x| x <= h);
        let w = (h - hs[i - 1]) / (hs[i] - hs[i - 1]);
        self.values[i - 1] + w * (self.values[i] - self.values[i - 1])
    }
}

/// Distance-weighted mean of a single partition layer: each level inside the
/// layer is weighted by the thickness of its cell, with cells split halfway
/// between neighbouring levels and closed by the layer bounds.
fn partition_aggregate(profile: &LevelProfile, layer: Layer) -> Option<(f64, f64)> {
    let top = profile.top();
    let (lo, hi) = layer.bounds(top);
    let inside: Vec<(f64, f64)> = profile
        .heights
        .iter()
        .zip(&profile.values)
        .filter(|(h, _)| layer.contains(**h, top))
        .map(|(h, v)| (*h, *v))
        .collect();
    if inside.is_empty() {
        return None;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &(h, v)) in inside.iter().enumerate() {
        let lower = if i == 0 { lo } else { 0.5 * (inside[i - 1].0 + h) };
        let upper = if i + 1 == inside.len() { hi } else { 0.5 * (h + inside[i + 1].0) };
        let w = (upper - lower).max(0.0);
        num += w * v;
        den += w;
    }
    if den > 0.0 {
        Some((num / den, den))
    } else {
        // degenerate zero-thickness layer: plain mean
        let mean = inside.iter().map(|p| p.1).sum::<f64>() / inside.len() as f64;
        Some((mean, 0.0))
    }
}

/// Distance-weighted layer mean. The total-column value is the
/// thickness-weighted mean of the non-empty partition layers.
pub fn layer_aggregate(profile: &LevelProfile, layer: Layer) -> Result<f64> {
    if layer != Layer::Total {
        return partition_aggregate(profile, layer)
            .map(|(v, _)| v)
            .ok_or_else(|| Error::Aggregation(format!("no profile level inside the {} layer", layer.suffix())));
    }
    let parts: Vec<(f64, f64)> = Layer::PARTITION
        .iter()
        .filter_map(|&l| partition_aggregate(profile, l))
        .collect();
    let den: f64 = parts.iter().map(|p| p.1).sum();
    if den > 0.0 {
        Ok(parts.iter().map(|p| p.0 * p.1).sum::<f64>() / den)
    } else {
        Ok(parts.iter().map(|p| p.0).sum::<f64>() / parts.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Precipitable water

const GRAVITY: f64 = 9.80665;

/// Standard-atmosphere pressure (Pa) at geometric height `z` metres.
pub fn standard_pressure(z: f64) -> f64 {
    if z <= 11_000.0 {
        101_325.0 * (1.0 - 2.255_77e-5 * z).powf(5.255_88)
    } else {
        22_632.1 * (-(z - 11_000.0) / 6341.62).exp()
    }
}

/// Saturation vapour pressure over water (Pa), Bolton's formula.
pub fn saturation_vapour_pressure(temp_k: f64) -> f64 {
    611.2 * (17.67 * (temp_k - 273.15) / (temp_k - 29.65)).exp()
}

fn specific_humidity(temp_k: f64, rh_pct: f64, pressure: f64) -> f64 {
    let e = (rh_pct / 100.0) * saturation_vapour_pressure(temp_k);
    // keep e below p at absurdly high levels
    let e = e.min(0.5 * pressure);
    0.622 * e / (pressure - 0.378 * e)
}

/// Precipitable water (kg/m2, equal to mm) within a layer: the trapezoidal
/// integral of specific humidity over standard-atmosphere pressure, with T and
/// RH interpolated linearly in height.
pub fn precipitable_water(temperature: &LevelProfile, humidity: &LevelProfile, layer: Layer) -> Result<f64> {
    if temperature.heights != humidity.heights {
        return Err(Error::Structural(
            "temperature and humidity profiles must share their levels".into(),
        ));
    }
    if let Some(rh) = humidity.values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(Error::Domain(format!("relative humidity {rh}% outside [0, 100]")));
    }
    if let Some(t) = temperature.values.iter().find(|v| !(150.0..=350.0).contains(*v)) {
        return Err(Error::Domain(format!("temperature {t} K outside the plausible range")));
    }
    if layer == Layer::Total {
        // sum of the partition layers, so the parts add up exactly
        return Ok(Layer::PARTITION
            .iter()
            .filter_map(|&l| precipitable_water(temperature, humidity, l).ok())
            .sum());
    }
    let top = temperature.top();
    let (lo, hi) = layer.bounds(top);
    let hi = hi.min(top);
    if hi <= lo {
        return Err(Error::Aggregation(format!(
            "{} layer lies above the top of the profile",
            layer.suffix()
        )));
    }
    let mut nodes = vec![lo];
    nodes.extend(temperature.heights.iter().copied().filter(|&h| h > lo && h < hi));
    nodes.push(hi);

    let q_at = |z: f64| {
        let p = standard_pressure(z);
        (p, specific_humidity(temperature.interpolate(z), humidity.interpolate(z), p))
    };
    let mut total = 0.0;
    let (mut p0, mut q0) = q_at(nodes[0]);
    for &z in &nodes[1..] {
        let (p1, q1) = q_at(z);
        total += 0.5 * (q0 + q1) * (p0 - p1);
        p0 = p1;
        q0 = q1;
    }
    Ok((total / GRAVITY).max(0.0))
}

// ---------------------------------------------------------------------------
// Smoothing

/// Mean of the values available at leads `t - 1`, `t` and `t + 1`. The centre
/// value must be present.
pub fn temporal_smooth(series: &BTreeMap<u32, f64>, t: u32) -> Option<f64> {
    let centre = *series.get(&t).filter(|v| v.is_finite())?;
    let mut sum = centre;
    let mut n = 1.0;
    for lead in [t.checked_sub(1), t.checked_add(1)].into_iter().flatten() {
        if let Some(v) = series.get(&lead).filter(|v| v.is_finite()) {
            sum += v;
            n += 1.0;
        }
    }
    Some(sum / n)
}

/// A 2-D field on a regular grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Grid2 {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || data.len() != nx * ny {
            return Err(Error::Structural(format!(
                "grid {nx}x{ny} does not match {} values",
                data.len()
            )));
        }
        Ok(Grid2 { nx, ny, data })
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }
}

/// Mean over the `(2 * half_width + 1)`-square block centred on `(ix, iy)`,
/// intersected with the grid. Non-finite cells are skipped.
pub fn spatial_smooth_block(grid: &Grid2, ix: usize, iy: usize, half_width: usize) -> f64 {
    let x0 = ix.saturating_sub(half_width);
    let x1 = (ix + half_width).min(grid.nx - 1);
    let y0 = iy.saturating_sub(half_width);
    let y1 = (iy + half_width).min(grid.ny - 1);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let v = grid.get(x, y);
            if v.is_finite() {
                sum += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// 9x9 block mean.
pub fn spatial_smooth(grid: &Grid2, ix: usize, iy: usize) -> f64 {
    spatial_smooth_block(grid, ix, iy, 4)
}

// ---------------------------------------------------------------------------
// Time/place predictors

pub fn time_place_predictors(
    meta: &StationMeta,
    valid_time: DateTime<Utc>,
    pos: &SolarPosition,
) -> Vec<(&'static str, f64)> {
    vec![
        ("LAT", meta.latitude),
        ("LON", meta.longitude),
        ("DOY", f64::from(valid_time.ordinal())),
        ("COSZ", pos.cos_zenith),
        ("DIST_coast", meta.dist_coast_km),
        ("DIST_water", meta.dist_water_km),
        ("DIST_inland", meta.dist_inland_km),
    ]
}

// ---------------------------------------------------------------------------
// Raw inputs and matrix assembly

/// One row of hourly model output at a station (or a grid point offset from
/// the station's nearest point by `dx`, `dy`).
///
/// Field names are either final predictor names (`T_low`, `G`, `AOD`, ...) or
/// level fields `VAR@HEIGHT` for `VAR` in T, RH, CC, CW with the height in
/// metres; level fields are reduced to layers by the builder.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFieldRow {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub lead_time: u32,
    pub dx: i32,
    pub dy: i32,
    pub fields: BTreeMap<String, f64>,
}

impl RawFieldRow {
    pub fn init_time(&self) -> DateTime<Utc> {
        self.valid_time - Duration::hours(i64::from(self.lead_time))
    }
}

/// Hourly mean observed global radiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub ghi_wm2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureOptions {
    pub temporal_smoothing: bool,
    pub spatial_smoothing: bool,
    /// Half-width of the spatial block; 4 gives 9x9.
    pub spatial_half_width: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            temporal_smoothing: true,
            spatial_smoothing: true,
            spatial_half_width: 4,
        }
    }
}

/// Start of the averaging hour that ends at `valid_time`.
pub fn hour_start(valid_time: DateTime<Utc>) -> DateTime<Utc> {
    valid_time - Duration::hours(1)
}

/// Midpoint of the averaging hour, used for the zenith-angle predictor.
pub fn hour_mid(valid_time: DateTime<Utc>) -> DateTime<Utc> {
    valid_time - Duration::minutes(30)
}

/// Caches hourly clear-sky means per (station, valid time).
struct ClearSkyCache<'a> {
    cfg: &'a ClearSkyConfig,
    stations: &'a BTreeMap<String, StationMeta>,
    values: BTreeMap<(String, DateTime<Utc>), f64>,
}

impl<'a> ClearSkyCache<'a> {
    fn get(&mut self, station: &str, valid_time: DateTime<Utc>) -> Result<f64> {
        let key = (station.to_string(), valid_time);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let meta = self
            .stations
            .get(station)
            .ok_or_else(|| Error::Structural(format!("no metadata for station `{station}`")))?;
        let v = solar::hourly_clearsky(meta.latitude, meta.longitude, hour_start(valid_time), self.cfg)?;
        self.values.insert(key, v);
        Ok(v)
    }
}

fn split_level_field(name: &str) -> Option<(&str, f64)> {
    let (var, h) = name.split_once('@')?;
    Some((var, h.parse().ok()?))
}

/// Derives layer predictors from `VAR@HEIGHT` level fields.
fn layer_predictors(fields: &BTreeMap<String, f64>, out: &mut BTreeMap<String, f64>) {
    let mut profiles: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (name, v) in fields {
        if let Some((var, h)) = split_level_field(name) {
            if v.is_finite() {
                profiles.entry(var).or_default().push((h, *v));
            }
        }
    }
    let build = |pts: &Vec<(f64, f64)>| {
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        LevelProfile::new(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect()).ok()
    };
    let mut built: BTreeMap<&str, LevelProfile> = BTreeMap::new();
    for (var, pts) in &profiles {
        if let Some(p) = build(pts) {
            built.insert(var, p);
        }
    }
    for (var, layers) in [
        ("T", &Layer::PARTITION[..]),
        ("RH", &Layer::PARTITION[..]),
        ("CC", &Layer::ALL[..]),
        ("CW", &Layer::ALL[..]),
    ] {
        if let Some(p) = built.get(var) {
            for &l in layers {
                if let Ok(v) = layer_aggregate(p, l) {
                    out.insert(format!("{var}_{}", l.suffix()), v);
                }
            }
        }
    }
    if let (Some(t), Some(rh)) = (built.get("T"), built.get("RH")) {
        for l in Layer::ALL {
            if let Ok(v) = precipitable_water(t, rh, l) {
                out.insert(format!("PW_{}", l.suffix()), v);
            }
        }
    }
}

/// Lead time closest to `lead` among those with a value; ties go to the
/// earlier lead.
pub fn nearest_lead(available: &BTreeMap<u32, f64>, lead: u32) -> Option<f64> {
    available
        .iter()
        .filter(|(_, v)| v.is_finite())
        .min_by_key(|(l, _)| (l.abs_diff(lead), **l))
        .map(|(_, v)| *v)
}

/// Turns raw model rows, observations and station metadata into forecast cases
/// carrying the full predictor set. Cases are returned sorted by
/// (station, valid time, lead time); incomplete cases are kept so the caller
/// can count what the matrix builder drops.
pub fn build_cases(
    rows: &[RawFieldRow],
    observations: &[Observation],
    stations: &BTreeMap<String, StationMeta>,
    clearsky: &ClearSkyConfig,
    options: &FeatureOptions,
) -> Result<Vec<ForecastCase>> {
    // (station, init) -> lead -> offset -> fields
    type Run<'r> = BTreeMap<u32, BTreeMap<(i32, i32), &'r RawFieldRow>>;
    let mut runs: BTreeMap<(String, DateTime<Utc>), Run> = BTreeMap::new();
    for r in rows {
        runs.entry((r.station_id.clone(), r.init_time()))
            .or_default()
            .entry(r.lead_time)
            .or_default()
            .insert((r.dx, r.dy), r);
    }
    let obs: BTreeMap<(&str, DateTime<Utc>), f64> = observations
        .iter()
        .map(|o| ((o.station_id.as_str(), o.valid_time), o.ghi_wm2))
        .collect();
    let mut cache = ClearSkyCache {
        cfg: clearsky,
        stations,
        values: BTreeMap::new(),
    };

    let mut cases = Vec::new();
    for ((station, init), run) in &runs {
        let meta = stations
            .get(station)
            .ok_or_else(|| Error::Structural(format!("no metadata for station `{station}`")))?;

        // Per lead: centre fields, spatially smoothed when a block is present.
        let mut per_lead: BTreeMap<u32, BTreeMap<String, f64>> = BTreeMap::new();
        for (&lead, offsets) in run {
            let fields = merge_offsets(offsets, options)?;
            let valid = *init + Duration::hours(i64::from(lead));
            let cs = cache.get(station, valid)?;
            let mut derived = BTreeMap::new();
            layer_predictors(&fields, &mut derived);
            for (name, v) in &fields {
                if split_level_field(name).is_some() || !v.is_finite() {
                    continue;
                }
                if RADIATION_FIELDS.contains(&name.as_str()) {
                    if cs > 0.0 && *v >= 0.0 {
                        derived.insert(name.clone(), v / cs);
                    }
                } else {
                    derived.entry(name.clone()).or_insert(*v);
                }
            }
            per_lead.insert(lead, derived);
        }

        // Series per predictor name across leads.
        let mut series: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
        for (&lead, fields) in &per_lead {
            for (name, v) in fields {
                series.entry(name.clone()).or_default().insert(lead, *v);
            }
        }

        for &lead in per_lead.keys() {
            let valid = *init + Duration::hours(i64::from(lead));
            let cs = cache.get(station, valid)?;
            let mut predictors = BTreeMap::new();
            for (name, s) in &series {
                if !PREDICTOR_NAMES.contains(&name.as_str()) {
                    continue;
                }
                let value = match provenance_of(name) {
                    Provenance::Composition => nearest_lead(s, lead),
                    _ if options.temporal_smoothing => temporal_smooth(s, lead),
                    _ => s.get(&lead).copied().filter(|v| v.is_finite()),
                };
                if let Some(v) = value {
                    predictors.insert(name.clone(), v);
                }
            }
            let pos = solar::solar_position(meta.latitude, meta.longitude, hour_mid(valid));
            for (name, v) in time_place_predictors(meta, valid, &pos) {
                predictors.insert(name.to_string(), v);
            }
            let observation = match obs.get(&(station.as_str(), valid)) {
                Some(&ghi) if cs > 0.0 && ghi.is_finite() => Some(solar::to_csi(ghi.max(0.0), cs)?),
                _ => None,
            };
            cases.push(ForecastCase::new(station.clone(), valid, lead, predictors, observation, cs)?);
        }
    }
    cases.sort_by(|a, b| {
        (&a.station_id, a.valid_time, a.lead_time).cmp(&(&b.station_id, b.valid_time, b.lead_time))
    });
    Ok(cases)
}

fn merge_offsets(
    offsets: &BTreeMap<(i32, i32), &RawFieldRow>,
    options: &FeatureOptions,
) -> Result<BTreeMap<String, f64>> {
    let centre = offsets.get(&(0, 0)).ok_or_else(|| {
        let r = offsets.values().next().expect("non-empty offset map");
        Error::Structural(format!(
            "station {} lead {} at {}: no row at grid offset (0, 0)",
            r.station_id, r.lead_time, r.valid_time
        ))
    })?;
    if !options.spatial_smoothing || offsets.len() == 1 {
        return Ok(centre.fields.clone());
    }
    let hw = options.spatial_half_width as i32;
    let side = (2 * hw + 1) as usize;
    let mut out = BTreeMap::new();
    for name in centre.fields.keys() {
        let mut data = vec![f64::NAN; side * side];
        for (&(dx, dy), row) in offsets {
            if dx.abs() > hw || dy.abs() > hw {
                continue;
            }
            if let Some(v) = row.fields.get(name) {
                data[((dy + hw) as usize) * side + (dx + hw) as usize] = *v;
            }
        }
        let grid = Grid2::new(side, side, data)?;
        out.insert(name.clone(), spatial_smooth_block(&grid, hw as usize, hw as usize, options.spatial_half_width));
    }
    Ok(out)
}

/// Identifies a matrix row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseKey {
    pub station_id: String,
    pub valid_time: DateTime<Utc>,
    pub lead_time: u32,
}

/// Rectangular, complete predictor matrix (row-major) with row keys.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    keys: Vec<CaseKey>,
    dropped: usize,
}

impl PredictorMatrix {
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>, keys: Vec<CaseKey>) -> Result<Self> {
        let p = names.len();
        if rows.len() != keys.len() {
            return Err(Error::Structural("row and key counts differ".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Structural(format!(
                "row has {} values for {p} predictor columns",
                r.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Structural(format!("duplicate predictor column `{dup}`")));
        }
        Ok(PredictorMatrix {
            names,
            data: rows.into_iter().flatten().collect(),
            keys,
            dropped: 0,
        })
    }

    /// Matrix without row keys, mostly for tests and synthetic studies.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        if columns.len() != names.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Structural("ragged column set".into()));
        }
        let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let keys = (0..n)
            .map(|i| CaseKey {
                station_id: String::new(),
                valid_time: DateTime::<Utc>::UNIX_EPOCH + Duration::hours(i as i64),
                lead_time: 0,
            })
            .collect();
        Self::from_rows(names, rows, keys)
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn keys(&self) -> &[CaseKey] {
        &self.keys
    }

    /// Rows dropped for missing values when the matrix was built.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols().max(1)).take(self.n_rows())
    }

    pub fn select_rows(&self, idx: &[usize]) -> PredictorMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        PredictorMatrix {
            names: self.names.clone(),
            data,
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            dropped: 0,
        }
    }

    /// Values of the named columns for row `i`.
    pub fn row_values(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        cols.iter().map(|&j| self.get(i, j)).collect()
    }

    /// Applies `f` to every cell.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> PredictorMatrix {
        let p = self.n_cols();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k / p, k % p, v))
            .collect();
        PredictorMatrix {
            names: self.names.clone(),
            data,
            keys: self.keys.clone(),
            dropped: self.dropped,
        }
    }

    /// Content hash over names, keys and values; equal matrices hash equal.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for k in &self.keys {
            h.update(k.station_id.as_bytes());
            h.update(k.valid_time.timestamp().to_le_bytes());
            h.update(k.lead_time.to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }
}

/// Assembles the predictor matrix for the registry's columns, dropping (and
/// counting) cases with any missing predictor. Returns the matrix together
/// with the retained cases in row order.
pub fn build_predictor_matrix(
    cases: &[ForecastCase],
    registry: &PredictorRegistry,
) -> Result<(PredictorMatrix, Vec<ForecastCase>)> {
    let mut rows = Vec::new();
    let mut keys = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = 0;
    for c in cases {
        if !c.is_complete(&registry.names) {
            dropped += 1;
            continue;
        }
        rows.push(registry.names.iter().map(|n| c.predictors[n]).collect());
        keys.push(CaseKey {
            station_id: c.station_id.clone(),
            valid_time: c.valid_time,
            lead_time: c.lead_time,
        });
        kept.push(c.clone());
    }
    if rows.is_empty() {
        return Err(Error::EmptyMatrix { dropped });
    }
    let mut m = PredictorMatrix::from_rows(registry.names.clone(), rows, keys)?;
    m.dropped = dropped;
    Ok((m, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn profile(h: &[f64], v: &[f64]) -> LevelProfile {
        LevelProfile::new(h.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn registry_matches_predictor_table() {
        let r = PredictorRegistry::default();
        assert_eq!(r.names.len(), 34);
        for var in ["T", "RH"] {
            assert!(!r.names.contains(&format!("{var}_total")));
            assert_eq!(r.names.iter().filter(|n| n.starts_with(&format!("{var}_"))).count(), 3);
        }
        for var in ["CC", "CW", "PW"] {
            assert_eq!(r.names.iter().filter(|n| n.starts_with(&format!("{var}_"))).count(), 4);
        }
        let mut uniq = r.names.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 34);
        assert_eq!(r.hash(), PredictorRegistry::default().hash());
        assert_ne!(r.hash(), PredictorRegistry::subset(&["G".into()]).unwrap().hash());
    }

    #[test]
    fn layer_aggregate_examples() {
        let p = profile(&[100.0, 900.0, 3000.0, 7000.0, 12000.0], &[5.0; 5]);
        for l in Layer::ALL {
            assert!((layer_aggregate(&p, l).unwrap() - 5.0).abs() < 1e-12);
        }
        // equal cells
        let p = profile(&[500.0, 1500.0, 3000.0, 8000.0], &[0.0, 10.0, 1.0, 1.0]);
        assert!((layer_aggregate(&p, Layer::Low).unwrap() - 5.0).abs() < 1e-12);
        // cells of 500 m and 1500 m
        let p = profile(&[0.0, 1000.0, 3000.0, 8000.0], &[0.0, 4.0, 1.0, 1.0]);
        assert!((layer_aggregate(&p, Layer::Low).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_layer_is_an_error() {
        let p = profile(&[100.0, 900.0, 1500.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(layer_aggregate(&p, Layer::Middle), Err(Error::Aggregation(_))));
        assert!(layer_aggregate(&p, Layer::Total).is_ok());
    }

    #[test]
    fn descending_profiles_are_reordered() {
        let p = profile(&[8000.0, 3000.0, 1000.0, 0.0], &[1.0, 1.0, 4.0, 0.0]);
        assert!((layer_aggregate(&p, Layer::Low).unwrap() - 3.0).abs() < 1e-12);
        assert!(LevelProfile::new(vec![0.0, 10.0, 5.0], vec![1.0; 3]).is_err());
    }

    fn std_profiles(levels: &[f64], rh: f64) -> (LevelProfile, LevelProfile) {
        let t: Vec<f64> = levels
            .iter()
            .map(|&z| if z <= 11_000.0 { 288.15 - 0.0065 * z } else { 216.65 })
            .collect();
        (profile(levels, &t), profile(levels, &vec![rh; levels.len()]))
    }

    const STD_LEVELS: [f64; 11] = [
        0.0, 110.0, 760.0, 1460.0, 3010.0, 5570.0, 7190.0, 9160.0, 10360.0, 11790.0, 13610.0,
    ];

    #[test]
    fn dry_column_has_no_water() {
        let (t, rh) = std_profiles(&STD_LEVELS, 0.0);
        for l in Layer::ALL {
            assert_eq!(precipitable_water(&t, &rh, l).unwrap(), 0.0);
        }
    }

    /// Column water vapour density integrated in height: rho_v = e / (R_v T),
    /// 1 m steps. Independent of the pressure-coordinate route.
    fn vapour_density_column(top: f64, rh: f64) -> f64 {
        const R_V: f64 = 461.5;
        let mut total = 0.0;
        let mut z = 0.5;
        while z < top {
            let t = if z <= 11_000.0 { 288.15 - 0.0065 * z } else { 216.65 };
            let e = rh / 100.0 * 611.2 * (17.67 * (t - 273.15) / (t - 29.65)).exp();
            total += e / (R_V * t);
            z += 1.0;
        }
        total
    }

    #[test]
    fn standard_atmosphere_half_humidity() {
        let oracle = vapour_density_column(13_610.0, 50.0);
        // frozen from the oracle above
        assert!((oracle - 14.420).abs() < 0.005, "oracle {oracle}");
        assert!(oracle > 2.0 && oracle < 40.0);
        let (t, rh) = std_profiles(&STD_LEVELS, 50.0);
        let pw = precipitable_water(&t, &rh, Layer::Total).unwrap();
        assert!((pw - oracle).abs() / oracle < 0.03, "pw {pw} vs oracle {oracle}");
        let parts: f64 = Layer::PARTITION
            .iter()
            .map(|&l| precipitable_water(&t, &rh, l).unwrap())
            .sum();
        assert!((parts - pw).abs() < 1e-9);
    }

    #[test]
    fn precipitable_water_rejects_mismatched_levels() {
        let (t, _) = std_profiles(&STD_LEVELS, 50.0);
        let rh = profile(&[0.0, 1000.0], &[50.0, 50.0]);
        assert!(matches!(precipitable_water(&t, &rh, Layer::Low), Err(Error::Structural(_))));
    }

    proptest! {
        #[test]
        fn precipitable_water_monotone_in_rh(level in 0usize..11, base in 0.0f64..90.0, bump in 0.0f64..10.0) {
            let (t, rh) = std_profiles(&STD_LEVELS, base);
            let mut v = rh.values().to_vec();
            v[level] += bump;
            let rh2 = profile(&STD_LEVELS, &v);
            for l in Layer::ALL {
                let a = precipitable_water(&t, &rh, l).unwrap();
                let b = precipitable_water(&t, &rh2, l).unwrap();
                prop_assert!(b >= a - 1e-12);
            }
        }

        #[test]
        fn total_between_layer_extremes(vals in prop::collection::vec(-10.0f64..10.0, 8)) {
            let p = profile(&[10.0, 400.0, 1800.0, 2500.0, 4000.0, 6500.0, 9000.0, 15000.0], &vals);
            let parts: Vec<f64> = Layer::PARTITION.iter().map(|&l| layer_aggregate(&p, l).unwrap()).collect();
            let total = layer_aggregate(&p, Layer::Total).unwrap();
            let lo = parts.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = parts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(total >= lo - 1e-12 && total <= hi + 1e-12);
        }

        #[test]
        fn smoothing_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                               x in prop::collection::vec(-5.0f64..5.0, 81),
                               y in prop::collection::vec(-5.0f64..5.0, 81),
                               ix in 0usize..9, iy in 0usize..9) {
            let gx = Grid2::new(9, 9, x.clone()).unwrap();
            let gy = Grid2::new(9, 9, y.clone()).unwrap();
            let gz = Grid2::new(9, 9, x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = spatial_smooth(&gz, ix, iy);
            let rhs = a * spatial_smooth(&gx, ix, iy) + b * spatial_smooth(&gy, ix, iy);
            prop_assert!((lhs - rhs).abs() < 1e-9);

            let sx: BTreeMap<u32, f64> = x[..3].iter().enumerate().map(|(i, v)| (i as u32, *v)).collect();
            let sy: BTreeMap<u32, f64> = y[..3].iter().enumerate().map(|(i, v)| (i as u32, *v)).collect();
            let sz: BTreeMap<u32, f64> = (0..3u32).map(|i| (i, a * sx[&i] + b * sy[&i])).collect();
            for t in 0..3 {
                let lhs = temporal_smooth(&sz, t).unwrap();
                let rhs = a * temporal_smooth(&sx, t).unwrap() + b * temporal_smooth(&sy, t).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn temporal_smooth_examples() {
        let s: BTreeMap<u32, f64> = [(4, 7.0), (5, 7.0), (6, 7.0)].into();
        assert_eq!(temporal_smooth(&s, 5), Some(7.0));
        let s: BTreeMap<u32, f64> = [(4, 1.0), (5, 2.0), (6, 3.0)].into();
        assert_eq!(temporal_smooth(&s, 5), Some(2.0));
        let s: BTreeMap<u32, f64> = [(0, 2.0), (1, 3.0)].into();
        assert_eq!(temporal_smooth(&s, 0), Some(2.5));
        assert_eq!(temporal_smooth(&s, 7), None);
    }

    #[test]
    fn spatial_smooth_examples() {
        let g = Grid2::new(12, 10, vec![3.5; 120]).unwrap();
        assert_eq!(spatial_smooth(&g, 5, 5), 3.5);
        let mut d = vec![0.0; 81];
        d[40] = 81.0;
        let g = Grid2::new(9, 9, d).unwrap();
        assert!((spatial_smooth(&g, 4, 4) - 1.0).abs() < 1e-12);
        // corner: 5x5 block
        let mut d = vec![0.0; 81];
        d[0] = 25.0;
        let g = Grid2::new(9, 9, d).unwrap();
        assert!((spatial_smooth(&g, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_lead_ties_go_earlier() {
        let s: BTreeMap<u32, f64> = [(3, 1.0), (6, 2.0), (9, 3.0)].into();
        assert_eq!(nearest_lead(&s, 4), Some(1.0));
        assert_eq!(nearest_lead(&s, 5), Some(2.0));
        assert_eq!(nearest_lead(&s, 6), Some(2.0));
        // 7.5 does not exist; lead 7 is closer to 6, lead 8 closer to 9
        assert_eq!(nearest_lead(&s, 7), Some(2.0));
        assert_eq!(nearest_lead(&s, 8), Some(3.0));
        let s: BTreeMap<u32, f64> = [(4, 1.0), (6, 2.0)].into();
        assert_eq!(nearest_lead(&s, 5), Some(1.0));
    }

    fn station() -> StationMeta {
        StationMeta {
            station_id: "260".into(),
            latitude: 52.1,
            longitude: 5.18,
            dist_coast_km: 48.0,
            dist_water_km: 5.0,
            dist_inland_km: 120.0,
        }
    }

    #[test]
    fn time_place_examples() {
        let meta = station();
        let t = Utc.with_ymd_and_hms(2017, 1, 1, 12, 0, 0).unwrap();
        let tp: BTreeMap<_, _> = time_place_predictors(&meta, t, &SolarPosition::from_zenith(0.0))
            .into_iter()
            .collect();
        assert_eq!(tp["DOY"], 1.0);
        assert!((tp["COSZ"] - 1.0).abs() < 1e-12);
        assert_eq!(tp["DIST_coast"], 48.0);
        assert_eq!(tp["DIST_water"], 5.0);
        assert_eq!(tp["DIST_inland"], 120.0);
        assert_eq!(tp.len(), 7);
    }

    fn full_row(valid: DateTime<Utc>, lead: u32, g_wm2: f64, with_aod: bool) -> RawFieldRow {
        let mut f = BTreeMap::new();
        for h in [10.0, 500.0, 1500.0, 3000.0, 5000.0, 7000.0, 10000.0] {
            f.insert(format!("T@{h}"), 288.0 - 0.0065 * h);
            f.insert(format!("RH@{h}"), 60.0);
            f.insert(format!("CC@{h}"), 0.3);
            f.insert(format!("CW@{h}"), 0.01);
        }
        f.insert("G".into(), g_wm2);
        for n in ["DIR_surf", "DIR_toa", "NCS_surf", "NCS_toa"] {
            f.insert(n.into(), 0.5 * g_wm2);
        }
        f.insert("RAIN".into(), 0.0);
        if with_aod {
            f.insert("AOD".into(), 0.2);
            f.insert("ANG".into(), 1.3);
            f.insert("OZ".into(), 300.0);
        }
        RawFieldRow {
            station_id: "260".into(),
            valid_time: valid,
            lead_time: lead,
            dx: 0,
            dy: 0,
            fields: f,
        }
    }

    #[test]
    fn build_full_case_and_drop_incomplete() {
        let stations: BTreeMap<_, _> = [("260".to_string(), station())].into();
        let init = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
        let rows = vec![
            full_row(init + Duration::hours(12), 12, 400.0, true),
            // no composition fields anywhere in this run -> dropped
            {
                let mut r = full_row(init + Duration::hours(36), 12, 400.0, false);
                r.lead_time = 12;
                r.valid_time = init + Duration::days(1) + Duration::hours(12);
                r
            },
        ];
        let obs = vec![Observation {
            station_id: "260".into(),
            valid_time: init + Duration::hours(12),
            ghi_wm2: 300.0,
        }];
        let opts = FeatureOptions {
            temporal_smoothing: false,
            ..Default::default()
        };
        let cfg = ClearSkyConfig::default();
        let cases = build_cases(&rows, &obs, &stations, &cfg, &opts).unwrap();
        assert_eq!(cases.len(), 2);
        let c = &cases[0];
        let cs = solar::hourly_clearsky(52.1, 5.18, init + Duration::hours(11), &cfg).unwrap();
        assert!((c.clearsky_wm2 - cs).abs() < 1e-9);
        assert!((c.predictors["G"] - 400.0 / cs).abs() < 1e-12);
        assert!((c.observation.unwrap() - 300.0 / cs).abs() < 1e-12);

        let (m, kept) = build_predictor_matrix(&cases, &PredictorRegistry::default()).unwrap();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(m.n_cols(), 34);
        assert_eq!(m.dropped(), 1);
        assert_eq!(kept.len(), 1);
        assert_eq!(m.names(), PredictorRegistry::default().names.as_slice());
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let err = build_predictor_matrix(&[], &PredictorRegistry::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyMatrix { dropped: 0 }));
    }

    #[test]
    fn composition_fields_use_nearest_lead_and_smoothing_uses_neighbours() {
        let stations: BTreeMap<_, _> = [("260".to_string(), station())].into();
        let init = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
        let mut rows = Vec::new();
        for lead in 11..=13u32 {
            let mut r = full_row(init + Duration::hours(i64::from(lead)), lead, 100.0 * f64::from(lead - 10), lead == 12);
            r.fields.insert("RAIN".into(), f64::from(lead));
            if lead != 12 {
                r.fields.remove("AOD");
            }
            rows.push(r);
        }
        let cfg = ClearSkyConfig::default();
        let cases = build_cases(&rows, &[], &stations, &cfg, &FeatureOptions::default()).unwrap();
        assert_eq!(cases.len(), 3);
        // AOD present only at lead 12 -> nearest for 11 and 13
        assert!(cases.iter().all(|c| c.predictors["AOD"] == 0.2));
        // RAIN smoothed: lead 11 has neighbours 12 only -> (11 + 12) / 2
        assert_eq!(cases[0].predictors["RAIN"], 11.5);
        assert_eq!(cases[1].predictors["RAIN"], 12.0);
    }

    #[test]
    fn spatial_block_rows_are_averaged() {
        let stations: BTreeMap<_, _> = [("260".to_string(), station())].into();
        let valid = Utc.with_ymd_and_hms(2017, 6, 1, 12, 0, 0).unwrap();
        let mut rows = Vec::new();
        for dx in -4..=4 {
            for dy in -4..=4 {
                let mut r = full_row(valid, 12, 400.0, true);
                r.dx = dx;
                r.dy = dy;
                r.fields.insert("RAIN".into(), if dx == 0 && dy == 0 { 81.0 } else { 0.0 });
                rows.push(r);
            }
        }
        let cfg = ClearSkyConfig::default();
        let cases = build_cases(&rows, &[], &stations, &cfg, &FeatureOptions::default()).unwrap();
        assert_eq!(cases.len(), 1);
        assert!((cases[0].predictors["RAIN"] - 1.0).abs() < 1e-12);
        let off = FeatureOptions {
            spatial_smoothing: false,
            ..Default::default()
        };
        let cases = build_cases(&rows, &[], &stations, &cfg, &off).unwrap();
        assert_eq!(cases[0].predictors["RAIN"], 81.0);
    }
}
