//! Predictor derivation: layer aggregates, precipitable water, smoothing
//! and the assembled predictor matrix for a small synthetic archive.
//!
//! `cargo run --example derive_features`

use std::collections::BTreeMap;

use csi_mos::features::{
    layer_aggregate, precipitable_water, spatial_smooth, temporal_smooth, Grid2, Layer, LevelProfile,
};
use csi_mos::harness::synth::synth_generate;
use csi_mos::harness::{prepare, ExperimentConfig};

fn main() -> csi_mos::Result<()> {
    let heights = vec![10.0, 500.0, 1500.0, 3000.0, 5000.0, 8000.0, 11000.0];
    let temp = LevelProfile::new(heights.clone(), vec![291.0, 288.0, 281.0, 272.0, 259.0, 238.0, 218.0])?;
    let rh = LevelProfile::new(heights.clone(), vec![75.0, 70.0, 80.0, 60.0, 40.0, 30.0, 20.0])?;
    let cloud = LevelProfile::new(heights, vec![0.0, 0.1, 0.8, 0.4, 0.0, 0.3, 0.0])?;
    for layer in Layer::ALL {
        println!(
            "{:<7} CC {:.3}  PW {:6.2} mm",
            layer.suffix(),
            layer_aggregate(&cloud, layer)?,
            precipitable_water(&temp, &rh, layer)?
        );
    }

    let series: BTreeMap<u32, f64> = [(11, 410.0), (12, 520.0), (13, 380.0)].into();
    println!("\ntemporally smoothed G at lead 12: {:.1}", temporal_smooth(&series, 12).unwrap());
    let grid = Grid2::new(9, 9, (0..81).map(|k| (k % 9) as f64 * 10.0).collect())?;
    println!("9x9 block mean around the centre: {:.1}", spatial_smooth(&grid, 4, 4));

    let mut cfg = ExperimentConfig::default();
    cfg.synth.days = 14;
    cfg.lead_times = vec![12];
    let data = synth_generate(&cfg.synth, &cfg.clearsky, cfg.seed)?;
    let prepared = prepare(&data.dataset, &cfg)?;
    let m = &prepared.matrix;
    println!("\nmatrix: {} cases x {} predictors", m.n_rows(), m.n_cols());
    for (name, v) in m.names().iter().zip(m.row(0)) {
        println!("  {name:<12} {v:10.4}");
    }
    println!("observed CSI of the first case: {:.3}", prepared.y[0]);
    Ok(())
}
