//! Solar geometry, ESRA clear-sky irradiance and the irradiance / clear-sky
//! index transformation.

use chrono::{DateTime, Datelike, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SOLAR_CONSTANT_WM2: f64 = 1367.0;
const UNIX_EPOCH_JD: f64 = 2_440_587.5;
const J2000_JD: f64 = 2_451_545.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition {
    /// Geometric zenith angle, degrees in [0, 180].
    pub zenith: f64,
    pub cos_zenith: f64,
}

impl SolarPosition {
    pub fn from_zenith(zenith_deg: f64) -> Self {
        SolarPosition {
            zenith: zenith_deg,
            cos_zenith: zenith_deg.to_radians().cos(),
        }
    }

    /// Solar elevation above the horizon in radians.
    pub fn elevation_rad(&self) -> f64 {
        (90.0 - self.zenith).to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClearSkyConfig {
    /// Air-mass-2 Linke turbidity factor, January through December.
    pub monthly_linke: [f64; 12],
    pub site_elevation_m: f64,
    /// Sub-sampling step used for hourly means.
    pub sample_minutes: u32,
}

impl Default for ClearSkyConfig {
    fn default() -> Self {
        ClearSkyConfig {
            monthly_linke: [3.0; 12],
            site_elevation_m: 0.0,
            sample_minutes: 1,
        }
    }
}

impl ClearSkyConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some((m, t)) = self
            .monthly_linke
            .iter()
            .enumerate()
            .find(|(_, t)| !(**t > 0.0) || !t.is_finite())
        {
            return Err(Error::Config(format!(
                "clearsky.monthly_linke[{m}] = {t}: Linke turbidity must be positive"
            )));
        }
        if !(self.site_elevation_m >= -430.0) {
            return Err(Error::Config(format!(
                "clearsky.site_elevation_m = {} is below -430 m",
                self.site_elevation_m
            )));
        }
        if self.sample_minutes == 0 || 60 % self.sample_minutes != 0 {
            return Err(Error::Config(format!(
                "clearsky.sample_minutes = {} must divide 60",
                self.sample_minutes
            )));
        }
        Ok(())
    }

    /// Linke turbidity for a calendar month (1 = January).
    pub fn linke_for_month(&self, month: u32) -> f64 {
        self.monthly_linke[(month as usize - 1) % 12]
    }

    fn linke_for_doy(&self, day_of_year: u32) -> f64 {
        // Non-leap calendar is close enough for a monthly table.
        const MONTH_END: [u32; 12] = [31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334, 366];
        let month = MONTH_END.iter().position(|&e| day_of_year <= e).unwrap_or(11);
        self.monthly_linke[month]
    }
}

fn julian_day(time: DateTime<Utc>) -> f64 {
    let secs = time.timestamp() as f64 + f64::from(time.timestamp_subsec_nanos()) * 1e-9;
    secs / 86_400.0 + UNIX_EPOCH_JD
}

/// Geometric (unrefracted) solar zenith angle after Michalsky's almanac
/// algorithm; accurate to about 0.01 degree between 1950 and 2050.
pub fn solar_position(lat_deg: f64, lon_deg: f64, time: DateTime<Utc>) -> SolarPosition {
    let jd = julian_day(time);
    let n = jd - J2000_JD;

    let mean_lon = (280.460 + 0.985_647_4 * n).rem_euclid(360.0);
    let mean_anom = (357.528 + 0.985_600_3 * n).rem_euclid(360.0).to_radians();
    let ecl_lon =
        (mean_lon + 1.915 * mean_anom.sin() + 0.020 * (2.0 * mean_anom).sin()).to_radians();
    let obliquity = (23.439 - 0.000_000_4 * n).to_radians();

    let ra = (obliquity.cos() * ecl_lon.sin()).atan2(ecl_lon.cos());
    let dec = (obliquity.sin() * ecl_lon.sin()).asin();

    let hour_utc = (jd + 0.5).fract() * 24.0;
    let gmst = (6.697_375 + 0.065_709_824_2 * n + hour_utc).rem_euclid(24.0);
    let lmst_deg = (gmst + lon_deg / 15.0).rem_euclid(24.0) * 15.0;
    let hour_angle = (lmst_deg.to_radians() - ra).rem_euclid(std::f64::consts::TAU);

    let lat = lat_deg.to_radians();
    let cos_z = (lat.sin() * dec.sin() + lat.cos() * dec.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let zenith = cos_z.acos().to_degrees();
    SolarPosition {
        zenith,
        cos_zenith: cos_z,
    }
}

/// Kasten-Young type air mass with the ESRA refraction correction and a
/// station-elevation pressure factor.
fn relative_air_mass(elevation_rad: f64, site_elevation_m: f64) -> f64 {
    let h = elevation_rad;
    let refraction = 0.061_359 * (0.1594 + 1.1230 * h + 0.065_656 * h * h)
        / (1.0 + 28.9344 * h + 277.3971 * h * h);
    let h_ref = h + refraction;
    let pressure_ratio = (-site_elevation_m / 8434.5).exp();
    pressure_ratio / (h_ref.sin() + 0.505_72 * (h_ref.to_degrees() + 6.079_95).powf(-1.6364))
}

fn rayleigh_optical_thickness(m: f64) -> f64 {
    if m <= 20.0 {
        1.0 / (6.6296 + 1.7513 * m - 0.1202 * m.powi(2) + 0.0065 * m.powi(3)
            - 0.000_13 * m.powi(4))
    } else {
        1.0 / (10.4 + 0.718 * m)
    }
}

fn eccentricity_correction(day_of_year: u32) -> f64 {
    let day_angle = std::f64::consts::TAU * f64::from(day_of_year) / 365.25;
    1.0 + 0.033_44 * (day_angle - 0.048_869).cos()
}

/// ESRA global horizontal clear-sky irradiance for an explicit turbidity.
pub fn esra_ghi(pos: &SolarPosition, day_of_year: u32, linke: f64, site_elevation_m: f64) -> Result<f64> {
    if !(linke > 0.0) {
        return Err(Error::Config(format!("Linke turbidity {linke} must be positive")));
    }
    if !(1..=366).contains(&day_of_year) {
        return Err(Error::Domain(format!("day of year {day_of_year} outside [1, 366]")));
    }
    if pos.zenith >= 90.0 {
        return Ok(0.0);
    }
    let h = pos.elevation_rad();
    let sin_h = h.sin();
    let extraterrestrial = SOLAR_CONSTANT_WM2 * eccentricity_correction(day_of_year);

    let m = relative_air_mass(h, site_elevation_m);
    let beam_normal = extraterrestrial * (-0.8662 * linke * m * rayleigh_optical_thickness(m)).exp();
    let beam = beam_normal * sin_h;

    let t = linke;
    let trd = -1.5843e-2 + 3.0543e-2 * t + 3.797e-4 * t * t;
    let mut a0 = 2.6463e-1 - 6.1581e-2 * t + 3.1408e-3 * t * t;
    if a0 * trd < 2e-3 {
        a0 = 2e-3 / trd;
    }
    let a1 = 2.0402 + 1.8945e-2 * t - 1.1161e-2 * t * t;
    let a2 = -1.3025 + 3.9231e-2 * t + 8.5079e-3 * t * t;
    // Linear ramp over the first degree of elevation so the total goes to
    // zero continuously at the horizon.
    let horizon_ramp = (h.to_degrees()).clamp(0.0, 1.0);
    let diffuse = extraterrestrial * trd * (a0 + a1 * sin_h + a2 * sin_h * sin_h) * horizon_ramp;

    Ok((beam + diffuse).max(0.0))
}

/// ESRA clear-sky GHI using the configured monthly turbidity.
pub fn clearsky_ghi(pos: &SolarPosition, day_of_year: u32, cfg: &ClearSkyConfig) -> Result<f64> {
    esra_ghi(pos, day_of_year, cfg.linke_for_doy(day_of_year), cfg.site_elevation_m)
}

/// Mean clear-sky GHI over `[hour_start, hour_start + 1h)`, sampled at the
/// midpoints of `cfg.sample_minutes`-long sub-intervals.
pub fn hourly_clearsky(lat: f64, lon: f64, hour_start: DateTime<Utc>, cfg: &ClearSkyConfig) -> Result<f64> {
    let step = i64::from(cfg.sample_minutes.max(1));
    let samples = 60 / step;
    let mut sum = 0.0;
    for i in 0..samples {
        let t = hour_start + Duration::seconds(i * step * 60 + step * 30);
        let pos = solar_position(lat, lon, t);
        let linke = cfg.linke_for_month(t.month());
        sum += esra_ghi(&pos, t.ordinal(), linke, cfg.site_elevation_m)?;
    }
    Ok(sum / samples as f64)
}

/// Clear-sky index of an irradiance value.
pub fn to_csi(ghi: f64, clearsky: f64) -> Result<f64> {
    if !(clearsky > 0.0) {
        return Err(Error::Domain(format!(
            "clear-sky radiation {clearsky} W/m2 must be positive to form a clear-sky index"
        )));
    }
    if !(ghi >= 0.0) {
        return Err(Error::Domain(format!("irradiance {ghi} W/m2 must be non-negative")));
    }
    Ok(ghi / clearsky)
}

/// Irradiance corresponding to a clear-sky index.
pub fn from_csi(csi: f64, clearsky: f64) -> f64 {
    csi * clearsky
}
