//! Writes a synthetic station archive (stations, model fields, observations
//! and the latent truth) as CSV.
//!
//! `cargo run --example synthetic_archive -- <out_dir> [days]`

use std::path::PathBuf;

use csi_mos::cli::cmd_synth;
use csi_mos::harness::ExperimentConfig;

fn main() -> csi_mos::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let mut cfg = ExperimentConfig::default();
    if let Some(days) = args.next() {
        cfg.synth.days = days.parse().expect("days must be an integer");
    }
    let counts = cmd_synth(&cfg, &out)?;
    println!(
        "{}: {} stations, {} field rows, {} observations",
        out.display(),
        counts.stations,
        counts.fields,
        counts.observations
    );
    Ok(())
}
