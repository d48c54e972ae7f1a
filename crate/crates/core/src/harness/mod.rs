//! Experiment orchestration: daylight filtering, seasonal and per-lead-time
//! slicing with consecutive-date cross-validation folds, engine dispatch over
//! a bounded worker pool, verification and importance aggregation.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ForecastCase, QuantileForecast, QuantileLevels, Season, StationMeta};
use crate::engine::importance::{improvement_ranking, selection_counts};
use crate::engine::{fit_engine, seed, EngineHyper, EngineKind, FittedModel};
use crate::error::{Error, Result};
use crate::features::{
    build_cases, build_predictor_matrix, CaseKey, FeatureOptions, Observation, PredictorMatrix, PredictorRegistry,
    RawFieldRow,
};
use crate::solar::ClearSkyConfig;
use crate::verify::{SliceScores, VerifyConfig};
use synth::SynthSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Raw inputs of an experiment: station metadata, hourly model output and
/// hourly observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub stations: BTreeMap<String, StationMeta>,
    pub fields: Vec<RawFieldRow>,
    pub observations: Vec<Observation>,
}

impl Dataset {
    /// Hash of the dataset content, independent of row order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in self.stations.values() {
            h.update(s.station_id.as_bytes());
            for v in [s.latitude, s.longitude, s.dist_coast_km, s.dist_water_km, s.dist_inland_km] {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let mut obs: Vec<&Observation> = self.observations.iter().collect();
        obs.sort_by(|a, b| (&a.station_id, a.valid_time).cmp(&(&b.station_id, b.valid_time)));
        for o in obs {
            h.update(o.station_id.as_bytes());
            h.update(o.valid_time.timestamp().to_le_bytes());
            h.update(o.ghi_wm2.to_bits().to_le_bytes());
        }
        let mut rows: Vec<&RawFieldRow> = self.fields.iter().collect();
        rows.sort_by(|a, b| {
            (&a.station_id, a.valid_time, a.lead_time, a.dx, a.dy).cmp(&(&b.station_id, b.valid_time, b.lead_time, b.dx, b.dy))
        });
        for r in rows {
            h.update(r.station_id.as_bytes());
            h.update(r.valid_time.timestamp().to_le_bytes());
            h.update(r.lead_time.to_le_bytes());
            h.update(r.dx.to_le_bytes());
            h.update(r.dy.to_le_bytes());
            for (k, v) in &r.fields {
                h.update(k.as_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub engines: Vec<EngineKind>,
    pub levels: QuantileLevels,
    pub seasons: Vec<Season>,
    /// Fit the whole year at once instead of per season.
    pub whole_year: bool,
    pub lead_times: Vec<u32>,
    pub folds: usize,
    pub daylight_threshold_wm2: f64,
    pub min_cases: usize,
    pub seed: u64,
    pub predictors: Vec<String>,
    pub features: FeatureOptions,
    pub clearsky: ClearSkyConfig,
    pub verify: VerifyConfig,
    pub engine: EngineHyper,
    pub synth: SynthSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            engines: EngineKind::ALL.to_vec(),
            levels: QuantileLevels::default(),
            seasons: Season::ALL.to_vec(),
            whole_year: false,
            lead_times: (1..=24).collect(),
            folds: 3,
            daylight_threshold_wm2: 20.0,
            min_cases: 50,
            seed: 20_170_101,
            predictors: PredictorRegistry::default().names,
            features: FeatureOptions::default(),
            clearsky: ClearSkyConfig::default(),
            verify: VerifyConfig::default(),
            engine: EngineHyper::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.engines.is_empty() {
            return Err(Error::Config("engines must not be empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} must be at least 2", self.folds)));
        }
        if !(self.daylight_threshold_wm2 > 0.0) {
            return Err(Error::Config(format!(
                "daylight_threshold_wm2 = {} must be positive",
                self.daylight_threshold_wm2
            )));
        }
        if self.min_cases == 0 {
            return Err(Error::Config("min_cases must be positive".into()));
        }
        if self.lead_times.is_empty() {
            return Err(Error::Config("lead_times must not be empty".into()));
        }
        if !self.whole_year && self.seasons.is_empty() {
            return Err(Error::Config("seasons must not be empty unless whole_year = true".into()));
        }
        self.registry()?;
        self.clearsky.validate()?;
        self.verify.validate()?;
        self.engine.validate()?;
        self.synth.validate()
    }

    pub fn registry(&self) -> Result<PredictorRegistry> {
        PredictorRegistry::subset(&self.predictors)
    }

    /// Hash of everything that affects fitted models. The engine list is
    /// excluded so a subset of engines can be predicted or re-run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.engines.clear();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..16])
    }
}

/// Keeps cases whose hourly clear-sky radiation is strictly above the
/// threshold.
pub fn daylight_filter(cases: Vec<ForecastCase>, threshold_wm2: f64) -> Vec<ForecastCase> {
    cases.into_iter().filter(|c| c.clearsky_wm2 > threshold_wm2).collect()
}

/// Fitting period: a meteorological season or the whole year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    Season(Season),
    Year,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Season(s) => f.write_str(s.name()),
            Period::Year => f.write_str("year"),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "year" {
            Ok(Period::Year)
        } else {
            s.parse().map(Period::Season)
        }
    }
}

impl Serialize for Period {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub period: Period,
    pub lead_time: u32,
    pub fold: usize,
}

impl SliceKey {
    /// Seed shared by every engine fitted on this slice.
    pub fn seed(&self, root: u64) -> u64 {
        seed::derive(root, &[seed::tag(&self.period.to_string()), u64::from(self.lead_time), self.fold as u64])
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_lt{:02}_f{}", self.period, self.lead_time, self.fold)
    }
}

/// One cross-validation fit: indices into the prepared case list.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSlice {
    pub key: SliceKey,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSlice {
    pub key: SliceKey,
    pub train_cases: usize,
    pub test_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlicePlan {
    pub slices: Vec<FitSlice>,
    pub skipped: Vec<SkippedSlice>,
    pub warnings: Vec<String>,
}

/// Model run date of a case; folds are cut on whole run dates.
fn run_date(c: &ForecastCase) -> NaiveDate {
    (c.valid_time - Duration::hours(i64::from(c.lead_time))).date_naive()
}

fn period_of(c: &ForecastCase, cfg: &ExperimentConfig) -> Option<Period> {
    if cfg.whole_year {
        Some(Period::Year)
    } else {
        let s = c.season();
        cfg.seasons.contains(&s).then_some(Period::Season(s))
    }
}

/// Splits each period's distinct run dates into `folds` consecutive blocks;
/// block `k` tests, the rest trains, separately for every lead time.
pub fn make_slices(cases: &[ForecastCase], cfg: &ExperimentConfig) -> SlicePlan {
    let mut dates: BTreeMap<Period, BTreeSet<NaiveDate>> = BTreeMap::new();
    let mut groups: BTreeMap<(Period, u32), Vec<usize>> = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        if !cfg.lead_times.contains(&c.lead_time) {
            continue;
        }
        if let Some(p) = period_of(c, cfg) {
            dates.entry(p).or_default().insert(run_date(c));
            groups.entry((p, c.lead_time)).or_default().push(i);
        }
    }
    let mut plan = SlicePlan::default();
    let periods: Vec<Period> = if cfg.whole_year {
        vec![Period::Year]
    } else {
        cfg.seasons.iter().map(|&s| Period::Season(s)).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let mut leads = cfg.lead_times.clone();
    leads.sort_unstable();
    leads.dedup();
    for period in periods {
        let Some(date_set) = dates.get(&period) else {
            plan.warnings.push(format!("{period}: no eligible cases"));
            continue;
        };
        let ordered: Vec<NaiveDate> = date_set.iter().copied().collect();
        let n = ordered.len();
        let fold_of: BTreeMap<NaiveDate, usize> = ordered
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, (0..cfg.folds).find(|&k| i < (k + 1) * n / cfg.folds).unwrap_or(cfg.folds - 1)))
            .collect();
        let before = plan.slices.len();
        for &lead in &leads {
            let members = groups.get(&(period, lead)).map(Vec::as_slice).unwrap_or(&[]);
            for fold in 0..cfg.folds {
                let (test, train): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&i| fold_of[&run_date(&cases[i])] == fold);
                let key = SliceKey {
                    period,
                    lead_time: lead,
                    fold,
                };
                if train.len() >= cfg.min_cases && test.len() >= cfg.min_cases {
                    plan.slices.push(FitSlice { key, train, test });
                } else {
                    plan.skipped.push(SkippedSlice {
                        key,
                        train_cases: train.len(),
                        test_cases: test.len(),
                    });
                }
            }
        }
        if plan.slices.len() == before {
            plan.warnings.push(format!("{period}: no slice reaches {} training and test cases", cfg.min_cases));
        }
    }
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    plan
}

/// Daylight cases with observations and a complete predictor row.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cases: Vec<ForecastCase>,
    pub matrix: PredictorMatrix,
    pub y: Vec<f64>,
    pub data_hash: String,
    pub registry: PredictorRegistry,
}

pub fn prepare(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let registry = cfg.registry()?;
    let cases = build_cases(&dataset.fields, &dataset.observations, &dataset.stations, &cfg.clearsky, &cfg.features)?;
    let cases: Vec<ForecastCase> = cases
        .into_iter()
        .filter(|c| cfg.lead_times.contains(&c.lead_time) && c.observation.is_some())
        .collect();
    let cases = daylight_filter(cases, cfg.daylight_threshold_wm2);
    let (matrix, cases) = build_predictor_matrix(&cases, &registry)?;
    if matrix.dropped() > 0 {
        log::warn!("{} cases dropped for missing predictors", matrix.dropped());
    }
    let y = cases.iter().map(|c| c.observation.expect("filtered")).collect();
    Ok(Prepared {
        cases,
        matrix,
        y,
        data_hash: dataset.content_hash(),
        registry,
    })
}

/// One test case's quantile forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub engine: EngineKind,
    pub slice: SliceKey,
    pub key: CaseKey,
    pub observation: f64,
    pub forecast: QuantileForecast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFit {
    pub model: FittedModel,
    pub forecasts: Vec<ForecastRow>,
}

/// Result of one (slice, engine) job. Failures are kept as data.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub slice: SliceKey,
    pub engine: EngineKind,
    pub seed: u64,
    pub train_hash: String,
    pub outcome: std::result::Result<CellFit, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub cells: Vec<Cell>,
}

impl Experiment {
    pub fn forecasts(&self) -> impl Iterator<Item = &ForecastRow> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok()).flat_map(|f| &f.forecasts)
    }

    pub fn models(&self) -> impl Iterator<Item = (&Cell, &FittedModel)> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok().map(|f| (c, &f.model)))
    }

    pub fn failures(&self) -> impl Iterator<Item = (&Cell, &str)> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| (c, e.as_str())))
    }
}

/// Fits one engine on a slice and predicts its test cases.
pub fn run_cell(
    prepared: &Prepared,
    slice: &FitSlice,
    train: &PredictorMatrix,
    test: &PredictorMatrix,
    engine: EngineKind,
    cfg: &ExperimentConfig,
) -> Cell {
    let seed = slice.key.seed(cfg.seed);
    let y: Vec<f64> = slice.train.iter().map(|&i| prepared.y[i]).collect();
    let outcome = fit_engine(engine, train, &y, &cfg.levels, &cfg.engine, seed).and_then(|model| {
        let preds = model.predict(test, &cfg.levels)?;
        let forecasts = slice
            .test
            .iter()
            .zip(preds)
            .zip(test.keys())
            .map(|((&i, forecast), key)| ForecastRow {
                engine,
                slice: slice.key,
                key: key.clone(),
                observation: prepared.y[i],
                forecast,
            })
            .collect();
        Ok(CellFit { model, forecasts })
    });
    Cell {
        slice: slice.key,
        engine,
        seed,
        train_hash: train.content_hash(),
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

/// Runs every slice x engine cell on a pool of `jobs` workers. Cells are
/// returned in (slice, engine) order whatever the execution order.
pub fn run_experiment(
    prepared: &Prepared,
    plan: &SlicePlan,
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Experiment> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let matrices: Vec<(PredictorMatrix, PredictorMatrix)> = plan
        .slices
        .iter()
        .map(|s| (prepared.matrix.select_rows(&s.train), prepared.matrix.select_rows(&s.test)))
        .collect();
    let jobs_list: Vec<(usize, EngineKind)> = (0..plan.slices.len())
        .flat_map(|s| cfg.engines.iter().map(move |&e| (s, e)))
        .collect();
    let total = jobs_list.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let cells: Vec<Cell> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(s, engine)| {
                let slice = &plan.slices[s];
                let start = std::time::Instant::now();
                let cell = run_cell(prepared, slice, &matrices[s].0, &matrices[s].1, engine, cfg);
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                let status = match &cell.outcome {
                    Ok(_) => "ok".to_string(),
                    Err(e) => format!("failed: {e}"),
                };
                log::info!(
                    "[{k}/{total}] {engine} {} {status} ({:.1}s)",
                    slice.key,
                    start.elapsed().as_secs_f64()
                );
                cell
            })
            .collect()
    });
    for pair in cells.windows(2) {
        if pair[0].slice == pair[1].slice && pair[0].train_hash != pair[1].train_hash {
            return Err(Error::Structural(format!(
                "engines received different predictor matrices for slice {}",
                pair[0].slice
            )));
        }
    }
    Ok(Experiment { cells })
}

/// Report row key; `None` marks a level pooled over that dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReportKey {
    pub engine: EngineKind,
    pub period: Option<Period>,
    pub lead_time: Option<u32>,
    pub fold: Option<usize>,
}

/// Verification scores per fold, pooled over folds per (period, lead time),
/// and pooled over everything per engine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: BTreeMap<ReportKey, SliceScores>,
}

impl Report {
    pub fn overall(&self, engine: EngineKind) -> Option<&SliceScores> {
        self.entries.get(&ReportKey {
            engine,
            period: None,
            lead_time: None,
            fold: None,
        })
    }
}

/// Scores forecast rows. Each fold is scored against its own sample
/// climatology; pooled entries sum the per-fold components.
pub fn score_forecasts<'a>(rows: impl IntoIterator<Item = &'a ForecastRow>, cfg: &VerifyConfig) -> Result<Report> {
    let mut groups: BTreeMap<(EngineKind, SliceKey), (Vec<QuantileForecast>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.engine, r.slice)).or_default();
        g.0.push(r.forecast.clone());
        g.1.push(r.observation);
    }
    let mut report = Report::default();
    for ((engine, slice), (f, y)) in groups {
        let s = SliceScores::compute(&f, &y, cfg)?;
        for key in [
            ReportKey {
                engine,
                period: Some(slice.period),
                lead_time: Some(slice.lead_time),
                fold: Some(slice.fold),
            },
            ReportKey {
                engine,
                period: Some(slice.period),
                lead_time: Some(slice.lead_time),
                fold: None,
            },
            ReportKey {
                engine,
                period: None,
                lead_time: None,
                fold: None,
            },
        ] {
            report.entries.entry(key).or_insert_with(SliceScores::empty).merge(&s);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceFamily {
    Stepwise,
    Trees,
}

/// A ranked predictor table; `method` is `None` for the whole family.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub family: ImportanceFamily,
    pub method: Option<EngineKind>,
    pub fits: usize,
    pub ranking: Vec<(String, f64)>,
}

/// Merges selection counts (stepwise engines) and split improvements (tree
/// engines) over all fits. Per-method tree rankings average the raw
/// improvements; the family ranking first scales each fit to sum 1 because
/// the engines' criteria have different units.
pub fn aggregate_importance<'a>(
    models: impl IntoIterator<Item = (EngineKind, &'a FittedModel)>,
    universe: &[String],
) -> Vec<ImportanceTable> {
    let mut selections: BTreeMap<EngineKind, Vec<Vec<String>>> = BTreeMap::new();
    let mut improvements: BTreeMap<EngineKind, Vec<BTreeMap<String, f64>>> = BTreeMap::new();
    for (engine, model) in models {
        if let Some(s) = model.selections() {
            selections.entry(engine).or_default().push(s);
        } else if let Some(i) = model.tree_importance() {
            improvements.entry(engine).or_default().push(i);
        }
    }
    let counts = |fits: &[&Vec<String>]| -> Vec<(String, f64)> {
        selection_counts(fits.iter().map(|f| f.iter().map(String::as_str)), universe)
            .into_iter()
            .map(|(k, c)| (k, c as f64))
            .collect()
    };
    let mut out = Vec::new();
    if !selections.is_empty() {
        let all: Vec<&Vec<String>> = selections.values().flatten().collect();
        out.push(ImportanceTable {
            family: ImportanceFamily::Stepwise,
            method: None,
            fits: all.len(),
            ranking: counts(&all),
        });
        for (engine, fits) in &selections {
            let refs: Vec<&Vec<String>> = fits.iter().collect();
            out.push(ImportanceTable {
                family: ImportanceFamily::Stepwise,
                method: Some(*engine),
                fits: fits.len(),
                ranking: counts(&refs),
            });
        }
    }
    if !improvements.is_empty() {
        let all: Vec<&BTreeMap<String, f64>> = improvements.values().flatten().collect();
        out.push(ImportanceTable {
            family: ImportanceFamily::Trees,
            method: None,
            fits: all.len(),
            ranking: improvement_ranking(all, universe, true),
        });
        for (engine, fits) in &improvements {
            out.push(ImportanceTable {
                family: ImportanceFamily::Trees,
                method: Some(*engine),
                fits: fits.len(),
                ranking: improvement_ranking(fits, universe, false),
            });
        }
    }
    out
}
