//! Predictor importance: stepwise selection counts for GA and QR and split
//! improvements for QRF and GBDT over the cross-validation slices of one
//! season and lead time.
//!
//! `cargo run --release --example importance`

use csi_mos::engine::EngineKind;
use csi_mos::harness::synth::synth_generate;
use csi_mos::harness::{aggregate_importance, make_slices, prepare, run_experiment, ExperimentConfig};

fn main() -> csi_mos::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.engines = vec![EngineKind::GA, EngineKind::QR, EngineKind::QRF, EngineKind::GBDT];
    cfg.lead_times = vec![12];
    cfg.seasons = vec!["summer".parse()?];
    cfg.engine.qrf.trees = 100;
    let data = synth_generate(&cfg.synth, &cfg.clearsky, cfg.seed)?;
    let prepared = prepare(&data.dataset, &cfg)?;
    let plan = make_slices(&prepared.cases, &cfg);
    let exp = run_experiment(&prepared, &plan, &cfg, 1)?;
    for t in aggregate_importance(exp.models().map(|(c, m)| (c.engine, m)), &prepared.registry.names) {
        let method = t.method.map_or("all".to_string(), |m| m.to_string());
        println!("{:?} / {method} ({} fits)", t.family, t.fits);
        for (rank, (name, score)) in t.ranking.iter().take(5).enumerate() {
            println!("  {}. {name:<12} {score:.3}", rank + 1);
        }
    }
    Ok(())
}
