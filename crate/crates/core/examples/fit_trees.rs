//! Quantile regression forest, generalized random forest and boosted stumps, trained on
//! eight months of a synthetic archive and scored on the following four.
//!
//! `cargo run --release --example fit_trees`

use csi_mos::engine::{fit_engine, EngineHyper, EngineKind};
use csi_mos::harness::synth::synth_generate;
use csi_mos::harness::{prepare, ExperimentConfig};
use csi_mos::verify::{crpss, rmse_ss};

fn main() -> csi_mos::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.synth.days = 365;
    cfg.lead_times = vec![12];
    let data = synth_generate(&cfg.synth, &cfg.clearsky, cfg.seed)?;
    let p = prepare(&data.dataset, &cfg)?;
    let cutoff = cfg.synth.start_date.and_hms_opt(0, 0, 0).unwrap().and_utc() + chrono::Duration::days(243);
    let (train, test): (Vec<usize>, Vec<usize>) = (0..p.cases.len()).partition(|&i| p.cases[i].valid_time < cutoff);
    let (xtr, xte) = (p.matrix.select_rows(&train), p.matrix.select_rows(&test));
    let ytr: Vec<f64> = train.iter().map(|&i| p.y[i]).collect();
    let yte: Vec<f64> = test.iter().map(|&i| p.y[i]).collect();
    let levels = cfg.levels.clone();
    let hyper = EngineHyper::default();
    println!("{} training cases, {} test cases", ytr.len(), yte.len());

    for kind in [EngineKind::QRF, EngineKind::GRF, EngineKind::GBDT, ] {
        let model = fit_engine(kind, &xtr, &ytr, &levels, &hyper, cfg.seed)?;
        let fc = model.predict(&xte, &levels)?;
        let (_, _, skill) = crpss(&fc, &yte)?;
        println!(
            "{kind:<6} CRPSS {:.3}  RMSE_SS {:.3}",
            skill.unwrap_or(f64::NAN),
            rmse_ss(&fc, &yte)?.unwrap_or(f64::NAN)
        );
        if let Some(sel) = model.selections() {
            println!("       selected: {}", sel.join(", "));
        }
        let q = fc[0].values();
        println!("       first test case: q0.02 {:.3}  median {:.3}  q0.98 {:.3}  (observed {:.3})", q[0], q[q.len() / 2], q[q.len() - 1], yte[0]);
    }
    Ok(())
}
