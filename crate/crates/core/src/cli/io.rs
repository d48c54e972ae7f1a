//! CSV and JSON file formats: input tables, model files, forecasts and
//! verification reports.
//!
//! Timestamps are ISO-8601 UTC (`2017-06-01T12:00:00Z`), numbers use `.` as
//! decimal separator and are written in shortest round-trip form, and empty
//! cells mean "missing".

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{QuantileForecast, QuantileLevels, StationMeta};
use crate::engine::{EngineKind, FittedModel};
use crate::error::{Error, Result};
use crate::features::{CaseKey, Observation, RawFieldRow};
use crate::harness::synth::TruthRow;
use crate::harness::{Dataset, ForecastRow, Period, Report, ReportKey, SliceKey};
use crate::verify::{cost_loss_grid, VerifyConfig};

pub const STATIONS_FILE: &str = "stations.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const FIELDS_FILE: &str = "fields.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub fn format_time(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let t = DateTime::parse_from_rfc3339(s.trim()).map_err(|e| format!("timestamp `{s}`: {e}"))?;
    if t.offset().local_minus_utc() != 0 {
        return Err(format!("timestamp `{s}` is not UTC"));
    }
    Ok(t.with_timezone(&Utc))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Data {
            file: path.display().to_string(),
            row,
            message: format!("{kind:?}"),
        },
    }
}

fn data_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Data {
        file: path.display().to_string(),
        row: Some(line as usize),
        message: message.into(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn parse_num(path: &Path, line: u64, column: &str, s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(data_err(path, line, format!("column `{column}`: `{s}` is not a finite number"))),
    }
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Data {
        file: path.display().to_string(),
        row: Some(1),
        message: format!("required column `{name}` missing"),
    })
}

fn cell<'r>(rec: &'r csv::StringRecord, idx: usize) -> &'r str {
    rec.get(idx).unwrap_or("")
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

// ---------------------------------------------------------------------------
// Input tables

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetCounts {
    pub stations: usize,
    pub observations: usize,
    pub fields: usize,
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<DatasetCounts> {
    let path = dir.join(STATIONS_FILE);
    let mut w = writer(&path)?;
    for s in data.stations.values() {
        w.serialize(s).map_err(|e| csv_err(&path, e))?;
    }
    finish(w, &path)?;

    let path = dir.join(OBSERVATIONS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["station_id", "valid_time", "ghi_wm2"]).map_err(|e| csv_err(&path, e))?;
    for o in &data.observations {
        w.write_record([o.station_id.clone(), format_time(o.valid_time), num(o.ghi_wm2)])
            .map_err(|e| csv_err(&path, e))?;
    }
    finish(w, &path)?;

    let path = dir.join(FIELDS_FILE);
    let names: BTreeSet<&str> = data.fields.iter().flat_map(|r| r.fields.keys().map(String::as_str)).collect();
    let mut w = writer(&path)?;
    let mut header = vec!["station_id", "valid_time", "lead_time", "dx", "dy"];
    header.extend(names.iter().copied());
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for r in &data.fields {
        let mut rec = vec![
            r.station_id.clone(),
            format_time(r.valid_time),
            r.lead_time.to_string(),
            r.dx.to_string(),
            r.dy.to_string(),
        ];
        rec.extend(names.iter().map(|n| r.fields.get(*n).map(|v| num(*v)).unwrap_or_default()));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    finish(w, &path)?;
    Ok(DatasetCounts {
        stations: data.stations.len(),
        observations: data.observations.len(),
        fields: data.fields.len(),
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(STATIONS_FILE);
    let mut stations = BTreeMap::new();
    for rec in reader(&path)?.deserialize::<StationMeta>() {
        let s = rec.map_err(|e| csv_err(&path, e))?;
        s.validate().map_err(|e| Error::Data {
            file: path.display().to_string(),
            row: None,
            message: e.to_string(),
        })?;
        stations.insert(s.station_id.clone(), s);
    }

    let path = dir.join(OBSERVATIONS_FILE);
    let mut r = reader(&path)?;
    let h = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    let (cs, ct, cg) = (column(&path, &h, "station_id")?, column(&path, &h, "valid_time")?, column(&path, &h, "ghi_wm2")?);
    let mut observations = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = line_of(&rec);
        let valid_time = parse_time(cell(&rec, ct)).map_err(|m| data_err(&path, line, m))?;
        if let Some(ghi) = parse_num(&path, line, "ghi_wm2", cell(&rec, cg))? {
            observations.push(Observation {
                station_id: cell(&rec, cs).to_string(),
                valid_time,
                ghi_wm2: ghi,
            });
        }
    }

    let path = dir.join(FIELDS_FILE);
    let mut r = reader(&path)?;
    let h = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    let (cs, ct, cl) = (column(&path, &h, "station_id")?, column(&path, &h, "valid_time")?, column(&path, &h, "lead_time")?);
    let cdx = h.iter().position(|x| x == "dx");
    let cdy = h.iter().position(|x| x == "dy");
    let reserved = ["station_id", "valid_time", "lead_time", "dx", "dy"];
    let field_cols: Vec<(usize, String)> = h
        .iter()
        .enumerate()
        .filter(|(_, n)| !reserved.contains(n))
        .map(|(i, n)| (i, n.to_string()))
        .collect();
    let mut fields = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = line_of(&rec);
        let valid_time = parse_time(cell(&rec, ct)).map_err(|m| data_err(&path, line, m))?;
        let int = |idx: Option<usize>, name: &str| -> Result<i64> {
            match idx.map(|i| cell(&rec, i).trim()).filter(|s| !s.is_empty()) {
                None => Ok(0),
                Some(s) => s.parse().map_err(|_| data_err(&path, line, format!("column `{name}`: `{s}` is not an integer"))),
            }
        };
        let lead = int(Some(cl), "lead_time")?;
        let lead_time = u32::try_from(lead).map_err(|_| data_err(&path, line, format!("lead_time {lead} is negative")))?;
        let mut values = BTreeMap::new();
        for (i, name) in &field_cols {
            if let Some(v) = parse_num(&path, line, name, cell(&rec, *i))? {
                values.insert(name.clone(), v);
            }
        }
        if !stations.contains_key(cell(&rec, cs)) {
            return Err(data_err(&path, line, format!("station `{}` has no metadata", cell(&rec, cs))));
        }
        fields.push(RawFieldRow {
            station_id: cell(&rec, cs).to_string(),
            valid_time,
            lead_time,
            dx: int(cdx, "dx")? as i32,
            dy: int(cdy, "dy")? as i32,
            fields: values,
        });
    }
    Ok(Dataset {
        stations,
        fields,
        observations,
    })
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    station_id: &'a str,
    valid_time: String,
    state: crate::harness::synth::SkyState,
    forecast_state: crate::harness::synth::SkyState,
    aod: f64,
    csi: f64,
}

pub fn write_truth(dir: &Path, truth: &[TruthRow]) -> Result<()> {
    let path = dir.join(TRUTH_FILE);
    let mut w = writer(&path)?;
    for t in truth {
        w.serialize(TruthRecord {
            station_id: &t.station_id,
            valid_time: format_time(t.valid_time),
            state: t.state,
            forecast_state: t.forecast_state,
            aod: t.aod,
            csi: t.csi,
        })
        .map_err(|e| csv_err(&path, e))?;
    }
    finish(w, &path)
}

// ---------------------------------------------------------------------------
// Model files

/// A fitted model with everything needed to check it against the data and
/// configuration it is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub engine_version: String,
    pub engine: EngineKind,
    pub slice: SliceKey,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub registry_hash: String,
    pub train_hash: String,
    pub model: FittedModel,
}

pub fn model_file_name(engine: EngineKind, slice: &SliceKey) -> String {
    format!("{engine}_{slice}.json")
}

pub fn write_model(dir: &Path, m: &ModelFile) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(model_file_name(m.engine, &m.slice));
    let json = serde_json::to_vec(m).map_err(|e| Error::Structural(format!("cannot serialize model: {e}")))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let m: ModelFile = serde_json::from_slice(&bytes).map_err(|e| Error::Data {
        file: path.display().to_string(),
        row: None,
        message: e.to_string(),
    })?;
    if m.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Mismatch {
            what: format!("model file format of {}", path.display()),
            model: m.format_version.to_string(),
            current: MODEL_FORMAT_VERSION.to_string(),
        });
    }
    Ok(m)
}

/// Paths of all `*.json` files in `dir`, sorted by name.
pub fn model_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Forecasts

const FORECAST_KEYS: [&str; 8] =
    ["engine", "period", "lead_time", "fold", "station_id", "valid_time", "valid_hour", "observation"];

/// One row per case: slice keys, the observation, one column per quantile
/// level (`q0.02` ...) and the median.
pub fn write_forecasts<'a>(path: &Path, levels: &QuantileLevels, rows: impl IntoIterator<Item = &'a ForecastRow>) -> Result<usize> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = FORECAST_KEYS.iter().map(|s| s.to_string()).collect();
    header.extend(levels.labels());
    header.push("median".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut n = 0;
    for r in rows {
        if r.forecast.levels() != levels {
            return Err(Error::Structural("forecast rows use different quantile levels".into()));
        }
        let mut rec = vec![
            r.engine.to_string(),
            r.slice.period.to_string(),
            r.slice.lead_time.to_string(),
            r.slice.fold.to_string(),
            r.key.station_id.clone(),
            format_time(r.key.valid_time),
            r.key.valid_time.hour().to_string(),
            num(r.observation),
        ];
        rec.extend(r.forecast.values().iter().map(|v| num(*v)));
        rec.push(num(r.forecast.median()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        n += 1;
    }
    finish(w, path)?;
    Ok(n)
}

pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut r = reader(path)?;
    let h = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let idx: Vec<usize> = FORECAST_KEYS.iter().map(|k| column(path, &h, k)).collect::<Result<_>>()?;
    let qcols: Vec<(usize, f64)> = h
        .iter()
        .enumerate()
        .filter_map(|(i, name)| name.strip_prefix('q').and_then(|q| q.parse::<f64>().ok()).map(|q| (i, q)))
        .collect();
    let levels = QuantileLevels::new(qcols.iter().map(|c| c.1).collect()).map_err(|e| Error::Data {
        file: path.display().to_string(),
        row: Some(1),
        message: format!("quantile columns: {e}"),
    })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let field = |k: usize| cell(&rec, idx[k]);
        let bad = |what: &str, s: &str| data_err(path, line, format!("{what} `{s}` is invalid"));
        let engine: EngineKind = field(0).parse().map_err(|e: Error| data_err(path, line, e.to_string()))?;
        let period: Period = field(1).parse().map_err(|_| bad("period", field(1)))?;
        let lead_time: u32 = field(2).parse().map_err(|_| bad("lead_time", field(2)))?;
        let fold: usize = field(3).parse().map_err(|_| bad("fold", field(3)))?;
        let valid_time = parse_time(field(5)).map_err(|m| data_err(path, line, m))?;
        let observation = parse_num(path, line, "observation", field(7))?
            .ok_or_else(|| data_err(path, line, "observation missing"))?;
        let values = qcols
            .iter()
            .map(|(i, q)| {
                parse_num(path, line, &format!("q{q}"), cell(&rec, *i))?
                    .ok_or_else(|| data_err(path, line, format!("quantile q{q} missing")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(ForecastRow {
            engine,
            slice: SliceKey {
                period,
                lead_time,
                fold,
            },
            key: CaseKey {
                station_id: field(4).to_string(),
                valid_time,
                lead_time,
            },
            observation,
            forecast: QuantileForecast::from_raw(levels.clone(), values)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports

fn scope<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "all".to_string(), |v| v.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub engine: String,
    pub period: String,
    pub lead_time: String,
    pub fold: String,
    pub threshold: Option<f64>,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub engine: String,
    pub period: String,
    pub lead_time: String,
    pub threshold: f64,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_forecast: Option<f64>,
    pub observed_frequency: Option<f64>,
    pub standard_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PevRow {
    pub engine: String,
    pub period: String,
    pub lead_time: String,
    pub threshold: f64,
    pub cost_loss: f64,
    pub pev: Option<f64>,
    pub best_trigger: Option<f64>,
}

/// Finite values only; skills that are undefined stay empty.
fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTables {
    pub metrics: Vec<MetricRow>,
    pub reliability: Vec<ReliabilityRow>,
    pub pev: Vec<PevRow>,
}

impl ReportTables {
    /// Long-format tables of a report. Reliability and PEV are emitted for
    /// fold-pooled entries only.
    pub fn from_report(report: &Report, cfg: &VerifyConfig) -> Result<Self> {
        let grid = cost_loss_grid(cfg.cost_loss_points);
        let mut t = ReportTables::default();
        for (key, s) in &report.entries {
            let ReportKey {
                engine,
                period,
                lead_time,
                fold,
            } = *key;
            let base = |threshold: Option<f64>, metric: &str, value: Option<f64>| MetricRow {
                engine: engine.to_string(),
                period: scope(period),
                lead_time: scope(lead_time),
                fold: scope(fold),
                threshold,
                metric: metric.to_string(),
                value: finite(value),
            };
            t.metrics.push(base(None, "n", Some(s.n as f64)));
            t.metrics.push(base(None, "rmse", Some(s.rmse())));
            t.metrics.push(base(None, "rmse_ss", s.rmse_ss()));
            t.metrics.push(base(None, "crps", Some(s.crps())));
            t.metrics.push(base(None, "crps_clim", Some(s.crps_clim_sum / s.n as f64)));
            t.metrics.push(base(None, "crpss", s.crpss()));
            for e in &s.events {
                t.metrics.push(base(Some(e.threshold), "bs", Some(e.bs())));
                t.metrics.push(base(Some(e.threshold), "bs_clim", Some(e.bs_clim_sum / e.n as f64)));
                t.metrics.push(base(Some(e.threshold), "bss", e.bss()));
            }
            if fold.is_some() {
                continue;
            }
            for e in &s.events {
                for (i, b) in e.reliability.bins.iter().enumerate() {
                    t.reliability.push(ReliabilityRow {
                        engine: engine.to_string(),
                        period: scope(period),
                        lead_time: scope(lead_time),
                        threshold: e.threshold,
                        bin: i,
                        lower: b.lower,
                        upper: b.upper,
                        count: b.count,
                        mean_forecast: finite(b.mean_forecast()),
                        observed_frequency: finite(b.observed_frequency()),
                        standard_error: finite(b.standard_error()),
                    });
                }
                for p in e.pev(&grid)? {
                    t.pev.push(PevRow {
                        engine: engine.to_string(),
                        period: scope(period),
                        lead_time: scope(lead_time),
                        threshold: e.threshold,
                        cost_loss: p.cost_loss,
                        pev: finite(p.pev),
                        best_trigger: finite(p.best_trigger),
                    });
                }
            }
        }
        Ok(t)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const PEV_FILE: &str = "pev.csv";

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = if rows.is_empty() {
        let mut w = writer(path)?;
        w.write_record(header).map_err(|e| csv_err(path, e))?;
        w
    } else {
        writer(path)?
    };
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    reader(path)?
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_report_tables(dir: &Path, t: &ReportTables) -> Result<()> {
    write_rows(
        &dir.join(METRICS_FILE),
        &t.metrics,
        &["engine", "period", "lead_time", "fold", "threshold", "metric", "value"],
    )?;
    write_rows(
        &dir.join(RELIABILITY_FILE),
        &t.reliability,
        &[
            "engine", "period", "lead_time", "threshold", "bin", "lower", "upper", "count", "mean_forecast",
            "observed_frequency", "standard_error",
        ],
    )?;
    write_rows(
        &dir.join(PEV_FILE),
        &t.pev,
        &["engine", "period", "lead_time", "threshold", "cost_loss", "pev", "best_trigger"],
    )
}

pub fn read_report_tables(dir: &Path) -> Result<ReportTables> {
    Ok(ReportTables {
        metrics: read_rows(&dir.join(METRICS_FILE))?,
        reliability: read_rows(&dir.join(RELIABILITY_FILE))?,
        pev: read_rows(&dir.join(PEV_FILE))?,
    })
}

/// Writes a wide table: key columns followed by one column per method.
pub fn write_wide(path: &Path, keys: &[&str], methods: &[String], rows: &[(Vec<String>, Vec<Option<f64>>)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
    header.extend(methods.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (k, vals) in rows {
        let mut rec = k.clone();
        rec.extend(vals.iter().map(|v| opt_num(*v)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synth_generate, SynthSpec};
    use crate::solar::ClearSkyConfig;
    use chrono::TimeZone;

    #[test]
    fn time_format_round_trip() {
        let t = Utc.with_ymd_and_hms(2017, 6, 1, 12, 0, 0).unwrap();
        assert_eq!(format_time(t), "2017-06-01T12:00:00Z");
        assert_eq!(parse_time("2017-06-01T12:00:00Z").unwrap(), t);
        assert_eq!(parse_time("2017-06-01T12:00:00+00:00").unwrap(), t);
        assert!(parse_time("2017-06-01T12:00:00+01:00").is_err());
        assert!(parse_time("2017-06-01 12:00").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let spec = SynthSpec {
            days: 3,
            ..SynthSpec::default()
        };
        let data = synth_generate(&spec, &ClearSkyConfig::default(), 4).unwrap().dataset;
        let dir = tempfile::tempdir().unwrap();
        let counts = write_dataset(dir.path(), &data).unwrap();
        assert_eq!(counts.observations, 3 * 3 * 24);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.content_hash(), data.content_hash());
    }

    #[test]
    fn schema_violations_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_generate(
            &SynthSpec {
                days: 1,
                ..SynthSpec::default()
            },
            &ClearSkyConfig::default(),
            1,
        )
        .unwrap()
        .dataset;
        write_dataset(dir.path(), &data).unwrap();
        fs::write(
            dir.path().join(OBSERVATIONS_FILE),
            "station_id,valid_time,ghi_wm2\ncoast,2017-01-01T01:00:00Z,0\ncoast,2017-01-01T02:00:00Z,abc\n",
        )
        .unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("ghi_wm2"), "{err}");
        fs::write(dir.path().join(OBSERVATIONS_FILE), "station_id,ghi_wm2\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("valid_time"), "{err}");
    }

    #[test]
    fn forecasts_round_trip() {
        let levels = QuantileLevels::default();
        let t = Utc.with_ymd_and_hms(2017, 6, 1, 12, 0, 0).unwrap();
        let rows: Vec<ForecastRow> = (0..3)
            .map(|i| ForecastRow {
                engine: EngineKind::QRF,
                slice: SliceKey {
                    period: Period::Season(crate::domain::Season::Summer),
                    lead_time: 12,
                    fold: 1,
                },
                key: CaseKey {
                    station_id: "coast".into(),
                    valid_time: t + chrono::Duration::days(i),
                    lead_time: 12,
                },
                observation: 0.1 * i as f64 + 1.0 / 3.0,
                forecast: QuantileForecast::from_raw(levels.clone(), levels.iter().map(|q| q / 7.0 + i as f64).collect()).unwrap(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_forecasts(&path, &levels, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("engine,period,lead_time,fold,station_id,valid_time,valid_hour,observation,q0.02,q0.04"));
        assert!(text.lines().next().unwrap().ends_with("q0.98,median"));
        assert_eq!(read_forecasts(&path).unwrap(), rows);
    }

    #[test]
    fn report_tables_round_trip() {
        let t = ReportTables {
            metrics: vec![MetricRow {
                engine: "GA".into(),
                period: "all".into(),
                lead_time: "all".into(),
                fold: "all".into(),
                threshold: None,
                metric: "crpss".into(),
                value: Some(0.123456789),
            }],
            reliability: vec![ReliabilityRow {
                engine: "GA".into(),
                period: "summer".into(),
                lead_time: "12".into(),
                threshold: 0.5,
                bin: 0,
                lower: 0.0,
                upper: 0.1,
                count: 0,
                mean_forecast: None,
                observed_frequency: None,
                standard_error: None,
            }],
            pev: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        write_report_tables(dir.path(), &t).unwrap();
        assert_eq!(read_report_tables(dir.path()).unwrap(), t);
    }
}
