//! Synthetic SCADA with planted operational zones, for demos and tests.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layout::{FarmLayout, TurbineId};
use crate::scada::{wrap_degrees, Bounds, ScadaRecord, SCADA_HEADER};

pub const SYNTH_START: i64 = 1_388_306_100;

/// Normalized (power, rotor) centre of each planted zone, upstream first.
/// Zones alternate between losing power at rated rotor speed and losing
/// rotor speed, a staircase down the power curve.
pub const ZONE_CENTRES: [(f64, f64); 4] = [(0.85, 0.92), (0.60, 0.92), (0.60, 0.66), (0.35, 0.66)];

/// Spread of turbine operating points around their zone centre.
pub const TURBINE_SPREAD: f64 = 0.03;

/// Rows are split into four contiguous bands, upstream rows producing most.
pub fn planted_zone(layout: &FarmLayout, id: TurbineId) -> usize {
    ((id.row - 1) as usize * ZONE_CENTRES.len() / layout.rows as usize).min(ZONE_CENTRES.len() - 1)
}

/// `seconds` of 1 Hz records for every active turbine under a steady
/// 8.2 m/s, 235.4° wind. Returns the records (time-major) and the planted
/// zone of every turbine.
pub fn four_zone_scada(
    layout: &FarmLayout,
    power: Bounds,
    rotor: Bounds,
    seconds: i64,
    seed: u64,
) -> (Vec<ScadaRecord>, BTreeMap<TurbineId, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = move || -> f64 { rng.sample(StandardNormal) };
    let turbines: Vec<TurbineId> = layout.active_turbines().collect();
    let truth: BTreeMap<TurbineId, usize> = turbines.iter().map(|&t| (t, planted_zone(layout, t))).collect();
    let centres: Vec<(f64, f64)> = turbines
        .iter()
        .map(|t| {
            let (p, r) = ZONE_CENTRES[truth[t]];
            (p + TURBINE_SPREAD * z(), r + TURBINE_SPREAD * z())
        })
        .collect();
    let denorm = |b: Bounds, v: f64| b.min + v.clamp(0.0, 1.0) * (b.max - b.min);
    let mut records = Vec::with_capacity(turbines.len() * seconds.max(0) as usize);
    for s in 0..seconds {
        for (t, &(p, r)) in turbines.iter().zip(&centres) {
            records.push(ScadaRecord {
                timestamp: SYNTH_START + s,
                turbine: *t,
                power: denorm(power, p + 0.03 * z()),
                rotor_speed: denorm(rotor, r + 0.02 * z()),
                wind_speed: (8.2 + 0.1 * z()).max(0.0),
                wind_direction: wrap_degrees(235.4 + 0.3 * z()),
            });
        }
    }
    (records, truth)
}

pub fn write_scada_csv<W: Write>(records: &[ScadaRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCADA_HEADER)?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.turbine.to_string(),
            format!("{:.3}", r.power),
            format!("{:.3}", r.rotor_speed),
            format!("{:.3}", r.wind_speed),
            // Round before wrapping so 359.9996 cannot print as 360.000.
            format!("{:.3}", wrap_degrees((r.wind_direction * 1000.0).round() / 1000.0)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("scada csv", e))?;
    Ok(())
}
