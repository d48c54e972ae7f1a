//! Runs the seven engines on a synthetic archive and prints skill scores,
//! calibration at the 0.5 threshold and the top predictors.
//!
//! `cargo run --release --example compare_engines -- [lead_time ...]`

use csi_mos::engine::EngineKind;
use csi_mos::harness::synth::synth_generate;
use csi_mos::harness::{
    aggregate_importance, make_slices, prepare, run_experiment, score_forecasts, ExperimentConfig,
};

fn main() -> csi_mos::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let leads: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = ExperimentConfig {
        lead_times: if leads.is_empty() { vec![12] } else { leads },
        ..ExperimentConfig::default()
    };
    let data = synth_generate(&cfg.synth, &cfg.clearsky, cfg.seed)?;
    let prepared = prepare(&data.dataset, &cfg)?;
    let plan = make_slices(&prepared.cases, &cfg);
    println!("{} cases, {} slices", prepared.cases.len(), plan.slices.len());
    let exp = run_experiment(&prepared, &plan, &cfg, 1)?;
    for (cell, err) in exp.failures() {
        println!("{} {} failed: {err}", cell.engine, cell.slice);
    }
    let report = score_forecasts(exp.forecasts(), &cfg.verify)?;
    println!("{:<7} {:>8} {:>8} {:>8} {:>8}", "engine", "CRPS", "CRPSS", "RMSE_SS", "BSS0.5");
    for e in EngineKind::ALL {
        if let Some(s) = report.overall(e) {
            let ev = s.event(0.5).expect("threshold 0.5 scored");
            println!(
                "{:<7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                e.name(),
                s.crps(),
                s.crpss().unwrap_or(f64::NAN),
                s.rmse_ss().unwrap_or(f64::NAN),
                ev.bss().unwrap_or(f64::NAN)
            );
            let worst = ev
                .reliability
                .bins
                .iter()
                .filter(|b| b.count >= 50)
                .map(|b| {
                    let se = b.standard_error().unwrap_or(0.0).max(1e-12);
                    (b.observed_frequency().unwrap() - b.mean_forecast().unwrap()).abs() / se
                })
                .fold(0.0, f64::max);
            println!("        reliability at 0.5: worst bin {worst:.2} standard errors");
        }
    }
    let models = exp.models().map(|(c, m)| (c.engine, m));
    for t in aggregate_importance(models, &prepared.registry.names) {
        let method = t.method.map_or("all".to_string(), |m| m.to_string());
        let top: Vec<String> = t.ranking.iter().take(5).map(|(n, v)| format!("{n}={v:.3}")).collect();
        println!("{:?} {method}: {}", t.family, top.join(" "));
    }
    Ok(())
}
