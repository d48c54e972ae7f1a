//! Command implementations behind the `csi-mos` binary: `synth`, `fit`,
//! `predict`, `verify` and `report`.
//!
//! Directory layout of a run (`--out`):
//!
//! ```text
//! config.toml            effective configuration
//! models/*.json          one model file per (engine, period, lead time, fold)
//! fit_errors.csv         cells whose fit failed
//! forecasts/<ENGINE>.csv quantile forecasts of the test folds
//! reports/*.csv          metrics, reliability and PEV in long format
//! ```

pub mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::engine::EngineKind;
use crate::error::{Error, Result};
use crate::harness::synth::synth_generate;
use crate::harness::{
    aggregate_importance, make_slices, prepare, run_experiment, score_forecasts, ExperimentConfig, ForecastRow,
    ImportanceFamily,
};
use io::{DatasetCounts, ModelFile, ReportTables, ENGINE_VERSION, MODEL_FORMAT_VERSION};

pub const MODELS_DIR: &str = "models";
pub const FORECASTS_DIR: &str = "forecasts";
pub const REPORTS_DIR: &str = "reports";
pub const CONFIG_FILE: &str = "config.toml";
pub const FIT_ERRORS_FILE: &str = "fit_errors.csv";

impl Error {
    /// Process exit code: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data { .. }
            | Error::Domain(_)
            | Error::Structural(_)
            | Error::EmptyMatrix { .. }
            | Error::Mismatch { .. }
            | Error::Aggregation(_)
            | Error::Io { .. } => 2,
            Error::Fit { .. } | Error::Prediction(_) => 3,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub engines: Option<Vec<EngineKind>>,
    pub seed: Option<u64>,
}

/// Parses a comma-separated engine list.
pub fn parse_engines(list: &str) -> Result<Vec<EngineKind>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Reads and validates a config file (defaults when `path` is `None`).
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(e) = &overrides.engines {
        cfg.engines = e.clone();
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    io::ensure_dir(out)?;
    let path = out.join(CONFIG_FILE);
    let text = toml::to_string(cfg).map_err(|e| Error::Structural(format!("cannot serialize config: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes the synthetic dataset (plus its generative truth) to `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetCounts> {
    let synth = synth_generate(&cfg.synth, &cfg.clearsky, cfg.seed)?;
    let counts = io::write_dataset(out, &synth.dataset)?;
    io::write_truth(out, &synth.truth)?;
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitSummary {
    pub slices: usize,
    pub skipped: usize,
    pub models: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
}

/// Fits every (slice, engine) cell and writes one model file per success.
pub fn cmd_fit(cfg: &ExperimentConfig, data: &Path, out: &Path, jobs: usize) -> Result<FitSummary> {
    let dataset = io::read_dataset(data)?;
    let prepared = prepare(&dataset, cfg)?;
    let plan = make_slices(&prepared.cases, cfg);
    let exp = run_experiment(&prepared, &plan, cfg, jobs)?;
    write_config(out, cfg)?;
    let models_dir = out.join(MODELS_DIR);
    io::ensure_dir(&models_dir)?;
    for stale in io::model_paths(&models_dir)? {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let registry_hash = prepared.registry.hash();
    let config_hash = cfg.hash();
    let mut models = 0;
    for (cell, model) in exp.models() {
        io::write_model(
            &models_dir,
            &ModelFile {
                format_version: MODEL_FORMAT_VERSION,
                engine_version: ENGINE_VERSION.to_string(),
                engine: cell.engine,
                slice: cell.slice,
                seed: cell.seed,
                config_hash: config_hash.clone(),
                data_hash: prepared.data_hash.clone(),
                registry_hash: registry_hash.clone(),
                train_hash: cell.train_hash.clone(),
                model: model.clone(),
            },
        )?;
        models += 1;
    }
    let failures: Vec<Vec<String>> = exp
        .failures()
        .map(|(c, e)| {
            vec![
                c.engine.to_string(),
                c.slice.period.to_string(),
                c.slice.lead_time.to_string(),
                c.slice.fold.to_string(),
                e.to_string(),
            ]
        })
        .collect();
    io::write_records(&out.join(FIT_ERRORS_FILE), &["engine", "period", "lead_time", "fold", "error"], &failures)?;
    Ok(FitSummary {
        slices: plan.slices.len(),
        skipped: plan.skipped.len(),
        models,
        failures: failures.len(),
        warnings: plan.warnings,
    })
}

fn check(what: &str, model: &str, current: &str) -> Result<()> {
    if model != current {
        return Err(Error::Mismatch {
            what: what.to_string(),
            model: model.to_string(),
            current: current.to_string(),
        });
    }
    Ok(())
}

/// Applies the saved models to the test folds they were held out from and
/// writes one forecast CSV per engine.
pub fn cmd_predict(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<BTreeMap<EngineKind, usize>> {
    let dataset = io::read_dataset(data)?;
    let prepared = prepare(&dataset, cfg)?;
    let plan = make_slices(&prepared.cases, cfg);
    let slices: BTreeMap<_, _> = plan.slices.iter().map(|s| (s.key, s)).collect();
    let registry_hash = prepared.registry.hash();
    let config_hash = cfg.hash();
    let mut rows: BTreeMap<EngineKind, Vec<ForecastRow>> = BTreeMap::new();
    for path in io::model_paths(&out.join(MODELS_DIR))? {
        let m = io::read_model(&path)?;
        if !cfg.engines.contains(&m.engine) {
            continue;
        }
        check(&format!("predictor registry hash of {}", path.display()), &m.registry_hash, &registry_hash)?;
        check(&format!("config hash of {}", path.display()), &m.config_hash, &config_hash)?;
        check(&format!("data hash of {}", path.display()), &m.data_hash, &prepared.data_hash)?;
        let slice = slices.get(&m.slice).ok_or_else(|| Error::Mismatch {
            what: format!("slice of {}", path.display()),
            model: m.slice.to_string(),
            current: "no such slice in the current data".into(),
        })?;
        let test = prepared.matrix.select_rows(&slice.test);
        let preds = m.model.predict(&test, &cfg.levels)?;
        let target = rows.entry(m.engine).or_default();
        for ((&i, forecast), key) in slice.test.iter().zip(preds).zip(test.keys()) {
            target.push(ForecastRow {
                engine: m.engine,
                slice: m.slice,
                key: key.clone(),
                observation: prepared.y[i],
                forecast,
            });
        }
    }
    write_config(out, cfg)?;
    let dir = out.join(FORECASTS_DIR);
    io::ensure_dir(&dir)?;
    let mut counts = BTreeMap::new();
    for (engine, mut r) in rows {
        r.sort_by(|a, b| (a.slice, &a.key).cmp(&(b.slice, &b.key)));
        let n = io::write_forecasts(&dir.join(format!("{engine}.csv")), &cfg.levels, &r)?;
        counts.insert(engine, n);
    }
    Ok(counts)
}

fn forecast_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Scores every forecast file under `<out>/forecasts` and writes the report
/// tables. Returns the number of scored rows; zero rows give empty tables.
pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let mut rows = Vec::new();
    for path in forecast_paths(&out.join(FORECASTS_DIR))? {
        rows.extend(io::read_forecasts(&path)?);
    }
    if rows.is_empty() {
        log::warn!("no forecast rows to verify; writing empty reports");
    }
    let report = score_forecasts(&rows, &cfg.verify)?;
    let tables = ReportTables::from_report(&report, &cfg.verify)?;
    io::write_report_tables(&out.join(REPORTS_DIR), &tables)?;
    Ok(rows.len())
}

/// Files written by [`cmd_report`].
pub const REPORT_FILES: [&str; 6] = [
    "skill_vs_lead.csv",
    "bss_vs_threshold.csv",
    "reliability.csv",
    "pev_vs_cost_loss.csv",
    "importance.csv",
    "importance_top10.csv",
];

/// Turns the reports and models of a run directory into comparison tables
/// with one column per method.
pub fn cmd_report(run: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let t = io::read_report_tables(&run.join(REPORTS_DIR))?;
    io::ensure_dir(out)?;
    let engines: BTreeSet<EngineKind> = t.metrics.iter().filter_map(|m| m.engine.parse().ok()).collect();
    let methods: Vec<String> = engines.iter().map(|e| e.to_string()).collect();
    let mut written = Vec::new();

    // Skill versus lead time, per period.
    let mut skill: BTreeMap<(String, String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut bss: BTreeMap<(String, String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for m in t.metrics.iter().filter(|m| m.fold == "all") {
        let Some(v) = m.value else { continue };
        match (m.metric.as_str(), m.threshold) {
            ("rmse_ss" | "crpss", None) => {
                skill
                    .entry((m.period.clone(), m.lead_time.clone(), m.metric.clone()))
                    .or_default()
                    .insert(m.engine.clone(), v);
            }
            ("bss", Some(th)) => {
                bss.entry((m.period.clone(), m.lead_time.clone(), format!("{th}")))
                    .or_default()
                    .insert(m.engine.clone(), v);
            }
            _ => {}
        }
    }
    let wide = |map: &BTreeMap<(String, String, String), BTreeMap<String, f64>>| -> Vec<(Vec<String>, Vec<Option<f64>>)> {
        map.iter()
            .map(|((a, b, c), vals)| {
                (vec![a.clone(), b.clone(), c.clone()], methods.iter().map(|m| vals.get(m).copied()).collect())
            })
            .collect()
    };
    let path = out.join(REPORT_FILES[0]);
    io::write_wide(&path, &["period", "lead_time", "metric"], &methods, &wide(&skill))?;
    written.push(path);
    let path = out.join(REPORT_FILES[1]);
    io::write_wide(&path, &["period", "lead_time", "threshold"], &methods, &wide(&bss))?;
    written.push(path);

    // Reliability and PEV pooled over the whole experiment.
    let rel: Vec<Vec<String>> = t
        .reliability
        .iter()
        .filter(|r| r.period == "all")
        .map(|r| {
            vec![
                r.engine.clone(),
                format!("{}", r.threshold),
                r.bin.to_string(),
                format!("{}", r.lower),
                format!("{}", r.upper),
                r.count.to_string(),
                r.mean_forecast.map(|v| v.to_string()).unwrap_or_default(),
                r.observed_frequency.map(|v| v.to_string()).unwrap_or_default(),
                r.standard_error.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let path = out.join(REPORT_FILES[2]);
    io::write_records(
        &path,
        &["engine", "threshold", "bin", "lower", "upper", "count", "mean_forecast", "observed_frequency", "standard_error"],
        &rel,
    )?;
    written.push(path);
    let mut pev: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut pev_order: Vec<(String, String)> = Vec::new();
    for p in t.pev.iter().filter(|p| p.period == "all") {
        let key = (format!("{}", p.threshold), format!("{}", p.cost_loss));
        if !pev.contains_key(&key) {
            pev_order.push(key.clone());
        }
        let e = pev.entry(key).or_default();
        if let Some(v) = p.pev {
            e.insert(p.engine.clone(), v);
        }
    }
    let pev_rows: Vec<(Vec<String>, Vec<Option<f64>>)> = pev_order
        .iter()
        .map(|k| (vec![k.0.clone(), k.1.clone()], methods.iter().map(|m| pev[k].get(m).copied()).collect()))
        .collect();
    let path = out.join(REPORT_FILES[3]);
    io::write_wide(&path, &["threshold", "cost_loss"], &methods, &pev_rows)?;
    written.push(path);

    // Importance from the model files.
    let mut models = Vec::new();
    let mut universe: Option<Vec<String>> = None;
    for path in io::model_paths(&run.join(MODELS_DIR))? {
        let m = io::read_model(&path)?;
        if universe.is_none() {
            let cfg_path = run.join(CONFIG_FILE);
            let cfg = load_config(cfg_path.exists().then_some(cfg_path.as_path()), &Overrides::default())?;
            universe = Some(cfg.predictors);
        }
        models.push(m);
    }
    let universe = universe.unwrap_or_default();
    let tables = aggregate_importance(models.iter().map(|m| (m.engine, &m.model)), &universe);
    let mut long = Vec::new();
    for t in &tables {
        let family = match t.family {
            ImportanceFamily::Stepwise => "stepwise",
            ImportanceFamily::Trees => "trees",
        };
        let method = t.method.map_or("all".to_string(), |m| m.to_string());
        for (rank, (name, score)) in t.ranking.iter().enumerate() {
            long.push(vec![
                family.to_string(),
                method.clone(),
                t.fits.to_string(),
                (rank + 1).to_string(),
                name.clone(),
                format!("{score}"),
            ]);
        }
    }
    let path = out.join(REPORT_FILES[4]);
    io::write_records(&path, &["family", "method", "fits", "rank", "predictor", "score"], &long)?;
    written.push(path);
    let mut header = vec!["rank".to_string()];
    let mut columns: Vec<Vec<String>> = Vec::new();
    for t in &tables {
        let family = match t.family {
            ImportanceFamily::Stepwise => "stepwise",
            ImportanceFamily::Trees => "trees",
        };
        header.push(format!("{family}:{}", t.method.map_or("all".to_string(), |m| m.to_string())));
        columns.push(t.ranking.iter().take(10).map(|(n, s)| format!("{n} ({})", round4(*s))).collect());
    }
    let top: Vec<Vec<String>> = (0..10)
        .map(|r| {
            let mut row = vec![(r + 1).to_string()];
            row.extend(columns.iter().map(|c| c.get(r).cloned().unwrap_or_default()));
            row
        })
        .collect();
    let path = out.join(REPORT_FILES[5]);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_records(&path, &header_refs, &top)?;
    written.push(path);
    Ok(written)
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
engines = ["GA", "QRF"]
seasons = ["summer"]
lead_times = [12]
min_cases = 10
[synth]
days = 60
start_date = "2017-06-01"
[engine.qrf]
trees = 20
"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(
            Error::Data {
                file: "f".into(),
                row: Some(2),
                message: "m".into()
            }
            .exit_code(),
            2
        );
        assert_eq!(Error::fit("GA", "m").exit_code(), 3);
    }

    #[test]
    fn engine_list_parsing() {
        assert_eq!(parse_engines("GA,qrf").unwrap(), vec![EngineKind::GA, EngineKind::QRF]);
        let err = parse_engines("GA,XGB").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("GA, NOTR, QR, MCQRNN, QRF, GRF, GBDT"));
    }

    #[test]
    fn invalid_key_names_key_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "seed = 3\n\n[synth]\ndayz = 4\n").unwrap();
        let err = load_config(Some(&p), &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dayz") && msg.contains("line 4"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn pipeline_end_to_end() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        let counts = cmd_synth(&cfg, &data).unwrap();
        assert_eq!(counts.observations, 3 * 60 * 24);
        let fit = cmd_fit(&cfg, &data, &run, 1).unwrap();
        assert_eq!(fit.slices, 3);
        assert_eq!(fit.models, 6);
        assert_eq!(fit.failures, 0);
        let pred = cmd_predict(&cfg, &data, &run).unwrap();
        assert_eq!(pred.len(), 2);
        assert!(cmd_verify(&cfg, &run).unwrap() > 0);
        let files = cmd_report(&run, &run.join("tables")).unwrap();
        assert_eq!(files.len(), REPORT_FILES.len());
        let skill = fs::read_to_string(run.join("tables").join("skill_vs_lead.csv")).unwrap();
        assert!(skill.starts_with("period,lead_time,metric,GA,QRF\n"), "{skill}");

        // Forecasts from saved models equal those of the in-memory run.
        let dataset = io::read_dataset(&data).unwrap();
        let prepared = prepare(&dataset, &cfg).unwrap();
        let plan = make_slices(&prepared.cases, &cfg);
        let exp = run_experiment(&prepared, &plan, &cfg, 1).unwrap();
        let mut mem: Vec<&ForecastRow> = exp.forecasts().filter(|r| r.engine == EngineKind::QRF).collect();
        mem.sort_by(|a, b| (a.slice, &a.key).cmp(&(b.slice, &b.key)));
        let disk = io::read_forecasts(&run.join(FORECASTS_DIR).join("QRF.csv")).unwrap();
        assert_eq!(disk.len(), mem.len());
        assert!(disk.iter().zip(mem).all(|(a, b)| a == b));
    }

    #[test]
    fn predict_refuses_mismatched_registry() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        cmd_synth(&cfg, &data).unwrap();
        cmd_fit(&cfg, &data, &run, 1).unwrap();
        let mut other = cfg.clone();
        other.predictors.retain(|p| p != "AOD");
        let err = cmd_predict(&other, &data, &run).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("registry"), "{msg}");
        let model_hash = cfg.registry().unwrap().hash();
        let current = other.registry().unwrap().hash();
        assert!(msg.contains(&model_hash) && msg.contains(&current), "{msg}");
    }

    #[test]
    fn verify_without_forecasts_is_empty_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(cmd_verify(&tiny_config(), dir.path()).unwrap(), 0);
        let metrics = fs::read_to_string(dir.path().join(REPORTS_DIR).join(io::METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 1);
    }
}
