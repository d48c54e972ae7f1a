//! Verification of quantile forecasts: CRPS, RMSE, Brier score, reliability
//! bins and potential economic value, against sample climatology.
//!
//! `cargo run --example verify_scores`

use csi_mos::domain::{QuantileForecast, QuantileLevels};
use csi_mos::verify::{
    brier, cost_loss_grid, crps, crpss, default_triggers, event_probabilities, pev_curve, reliability, rmse_ss,
    BinaryEventSpec,
};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn main() -> csi_mos::Result<()> {
    let levels = QuantileLevels::evenly_spaced(19);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.12).unwrap();

    // A calibrated forecaster: the truth is centre + noise and the forecast
    // quantiles are those of that distribution.
    let mut forecasts = Vec::new();
    let mut obs = Vec::new();
    for _ in 0..2000 {
        let centre: f64 = rng.random_range(0.2..1.0);
        let q: Vec<f64> = levels
            .iter()
            .map(|p| (centre + 0.12 * statrs::function::erf::erf_inv(2.0 * p - 1.0) * std::f64::consts::SQRT_2).max(0.0))
            .collect();
        forecasts.push(QuantileForecast::from_raw(levels.clone(), q)?);
        obs.push((centre + noise.sample(&mut rng)).max(0.0));
    }

    println!("CRPS of the first case: {:.4}", crps(forecasts[0].values(), obs[0]));
    let (score, clim, skill) = crpss(&forecasts, &obs)?;
    println!("CRPS {score:.4} vs climatology {clim:.4}: CRPSS {:.3}", skill.unwrap());
    println!("RMSE_SS {:.3}", rmse_ss(&forecasts, &obs)?.unwrap());

    let event = BinaryEventSpec::new(0.5)?;
    let bs = brier(&forecasts, &obs, &event)?;
    println!("\nCSI <= 0.5: BS {:.4}, BSS {:.3}, frequency {:.3}", bs.bs, bs.bss.unwrap(), bs.orf);
    println!("reliability:");
    for b in reliability(&forecasts, &obs, &event, 10)?.bins.iter().filter(|b| b.count > 0) {
        println!(
            "  ({:.1}, {:.1}]  n {:4}  forecast {:.3}  observed {:.3}",
            b.lower,
            b.upper,
            b.count,
            b.mean_forecast().unwrap(),
            b.observed_frequency().unwrap()
        );
    }

    let (p, o) = event_probabilities(&forecasts, &obs, &event);
    println!("potential economic value:");
    for pt in pev_curve(&p, &o, &default_triggers(levels.len()), &cost_loss_grid(9))? {
        println!("  C/L {:.1}: {:.3}", pt.cost_loss, pt.pev.unwrap_or(f64::NAN));
    }
    Ok(())
}
