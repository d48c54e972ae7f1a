//! Solar geometry and ESRA clear-sky radiation through one summer day at
//! De Bilt, and the clear-sky index of a measured hour.
//!
//! `cargo run --example clear_sky`

use chrono::{Duration, TimeZone, Utc};
use csi_mos::solar::{esra_ghi, hourly_clearsky, solar_position, to_csi, ClearSkyConfig, SolarPosition};

fn main() -> csi_mos::Result<()> {
    let (lat, lon) = (52.10, 5.18);
    let cfg = ClearSkyConfig::default();
    let day = Utc.with_ymd_and_hms(2017, 6, 21, 0, 0, 0).unwrap();

    println!("hour(UTC)  zenith   hourly clear-sky W/m2");
    for h in 3..21 {
        let start = day + Duration::hours(h);
        let mid = solar_position(lat, lon, start + Duration::minutes(30));
        let cs = hourly_clearsky(lat, lon, start, &cfg)?;
        println!("{:02}-{:02}     {:6.2}  {:8.1}", h, h + 1, mid.zenith, cs);
    }

    println!("\nturbidity sensitivity at zenith 40 deg:");
    let pos = SolarPosition::from_zenith(40.0);
    for tl in [2.0, 3.0, 4.0, 6.0] {
        println!("  T_L {tl}: {:.1} W/m2", esra_ghi(&pos, 172, tl, 0.0)?);
    }

    let noon = day + Duration::hours(11);
    let cs = hourly_clearsky(lat, lon, noon, &cfg)?;
    let measured = 612.0;
    println!("\n{measured} W/m2 measured over 11-12 UTC -> CSI {:.3}", to_csi(measured, cs)?);
    Ok(())
}
