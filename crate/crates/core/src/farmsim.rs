//! Seeded storm simulator: a planar front sweeps the farm row by row,
//! turbines raise high-wind alarms and shut down either on the alarm
//! (baseline) or ahead of it under a row shutdown policy.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign, fit_dpgmm, smooth_labels, DpgmmConfig, LabelGrid};
use crate::controller::{detect_event, DetectionRule, ShutdownPolicy};
use crate::error::{Error, Result};
use crate::layout::{FarmGrid, FarmLayout, TurbineId};

/// Wind speed ahead of the front.
pub const CALM_WIND: f64 = 12.0;
/// Storm wind sits this far above the alarm threshold.
pub const STORM_EXCESS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StormScenario {
    /// Degrees the storm comes from. The front is taken as orthogonal to
    /// the rows, so this is carried as metadata only.
    pub direction: f64,
    /// m/s.
    pub front_speed: f64,
    /// Seconds into the log at which row 1 would be hit without the lead.
    pub onset: f64,
    /// m/s.
    pub alarm_threshold: f64,
    pub row_jitter_std: f64,
    pub gust_noise_std: f64,
    /// Log length in seconds.
    pub horizon: i64,
    /// How much earlier rows 1 and 2 are hit than the linear trend.
    pub beacon_lead: f64,
}

impl Default for StormScenario {
    fn default() -> Self {
        StormScenario {
            direction: 265.4,
            front_speed: 20.0,
            onset: 900.0,
            alarm_threshold: 25.0,
            row_jitter_std: 10.0,
            gust_noise_std: 0.5,
            horizon: 3600,
            beacon_lead: 300.0,
        }
    }
}

impl StormScenario {
    /// Noise-free scenario with a fixed number of seconds between rows.
    pub fn deterministic(layout: &FarmLayout, row_interval_s: f64) -> Self {
        StormScenario {
            front_speed: layout.spacing_m / row_interval_s,
            row_jitter_std: 0.0,
            gust_noise_std: 0.0,
            ..Default::default()
        }
    }

    /// A horizon of 0 is accepted and simulates to an empty log.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.direction,
            self.front_speed,
            self.onset,
            self.alarm_threshold,
            self.row_jitter_std,
            self.gust_noise_std,
            self.beacon_lead,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("scenario contains non-finite values"));
        }
        if self.front_speed <= 0.0 {
            return Err(Error::config("front_speed must be positive"));
        }
        if self.alarm_threshold <= 0.0 {
            return Err(Error::config("alarm_threshold must be positive"));
        }
        if self.row_jitter_std < 0.0 || self.gust_noise_std < 0.0 {
            return Err(Error::config("noise standard deviations must be non-negative"));
        }
        if self.horizon < 0 {
            return Err(Error::config("horizon must be non-negative"));
        }
        Ok(())
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream 0 holds row jitter; each turbine's gust noise has its own stream.
fn turbine_stream(layout: &FarmLayout, id: TurbineId) -> u64 {
    1 + ((id.row - 1) * layout.columns + (id.column - 1)) as u64
}

/// Front arrival time of every row, index 0 = row 1.
pub fn row_arrivals(scenario: &StormScenario, layout: &FarmLayout, seed: u64) -> Vec<f64> {
    let mut rng = rng_stream(seed, 0);
    let interval = layout.spacing_m / scenario.front_speed;
    (1..=layout.rows)
        .map(|row| {
            let z: f64 = rng.sample(StandardNormal);
            let lead = if row <= 2 { scenario.beacon_lead } else { 0.0 };
            scenario.onset - lead + (row - 1) as f64 * interval + z * scenario.row_jitter_std
        })
        .collect()
}

pub fn storm_arrival(scenario: &StormScenario, layout: &FarmLayout, row: u32, seed: u64) -> Result<f64> {
    if row == 0 || row > layout.rows {
        return Err(Error::domain(format!("row {row} outside 1..={}", layout.rows)));
    }
    Ok(row_arrivals(scenario, layout, seed)[row as usize - 1])
}

/// Streams 1 Hz wind speeds for one turbine; stops when `visit` returns false.
fn wind_trace(
    scenario: &StormScenario,
    arrival: f64,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(i64, f64) -> bool,
) {
    let storm = scenario.alarm_threshold + STORM_EXCESS;
    for t in 0..scenario.horizon {
        let base = if t as f64 >= arrival { storm } else { CALM_WIND };
        let noise = if scenario.gust_noise_std > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * scenario.gust_noise_std
        } else {
            0.0
        };
        if !visit(t, base + noise) {
            break;
        }
    }
}

/// First alarm second of every active turbine (row-major), without
/// materialising full traces. Matches the alarms of [`simulate`].
pub fn first_alarms(layout: &FarmLayout, scenario: &StormScenario, seed: u64) -> Vec<(TurbineId, Option<i64>)> {
    let arrivals = row_arrivals(scenario, layout, seed);
    layout
        .active_turbines()
        .map(|id| {
            let mut rng = rng_stream(seed, turbine_stream(layout, id));
            let mut alarm = None;
            wind_trace(scenario, arrivals[id.row as usize - 1], &mut rng, |t, w| {
                if w > scenario.alarm_threshold {
                    alarm = Some(t);
                    false
                } else {
                    true
                }
            });
            (id, alarm)
        })
        .collect()
}

/// Alarms sorted by (timestamp, turbine).
pub fn alarm_list(first: &[(TurbineId, Option<i64>)]) -> Vec<(i64, TurbineId)> {
    let mut alarms: Vec<(i64, TurbineId)> = first.iter().filter_map(|(id, a)| a.map(|t| (t, *id))).collect();
    alarms.sort();
    alarms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShutdownKind {
    Planned,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Shutdown {
    pub timestamp: i64,
    pub turbine: TurbineId,
    pub kind: ShutdownKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub alarms: Vec<(i64, TurbineId)>,
    pub shutdowns: Vec<Shutdown>,
}

impl EventLog {
    /// `timestamp,turbine,event`, time-ordered; alarms precede shutdowns
    /// within the same second.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut rows: Vec<(i64, u8, TurbineId, &str)> = self
            .alarms
            .iter()
            .map(|&(t, id)| (t, 0, id, "ALARM_HIGH_WIND"))
            .collect();
        rows.extend(self.shutdowns.iter().map(|s| {
            let event = match s.kind {
                ShutdownKind::Planned => "SHUTDOWN_PLANNED",
                ShutdownKind::Emergency => "SHUTDOWN_EMERGENCY",
            };
            (s.timestamp, 1, s.turbine, event)
        }));
        rows.sort();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "turbine", "event"])?;
        for (t, _, id, event) in rows {
            w.write_record([t.to_string(), id.to_string(), event.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("event log", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub log: EventLog,
    /// 1 Hz wind speed per active turbine.
    pub traces: BTreeMap<TurbineId, Vec<f64>>,
    pub arrivals: Vec<f64>,
    /// Detection time from the beacon alarms, with or without a policy.
    pub detection: Option<i64>,
}

impl Simulation {
    /// Long format `timestamp,turbine,wind_speed`.
    pub fn write_traces_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "turbine", "wind_speed"])?;
        for (id, trace) in &self.traces {
            let name = id.to_string();
            for (t, v) in trace.iter().enumerate() {
                w.write_record([t.to_string(), name.clone(), format!("{v:.3}")])?;
            }
        }
        w.flush().map_err(|e| Error::io("wind traces", e))?;
        Ok(())
    }
}

pub fn simulate(
    layout: &FarmLayout,
    scenario: &StormScenario,
    policy: Option<&ShutdownPolicy>,
    seed: u64,
) -> Result<Simulation> {
    simulate_with_rule(layout, scenario, policy, &DetectionRule::default(), seed)
}

/// Without a policy every alarm triggers an emergency stop. With one, rows
/// the policy covers shut down at `T_detect + Σ θ` and stop in an emergency
/// only if their alarm comes first; other rows keep the baseline.
pub fn simulate_with_rule(
    layout: &FarmLayout,
    scenario: &StormScenario,
    policy: Option<&ShutdownPolicy>,
    rule: &DetectionRule,
    seed: u64,
) -> Result<Simulation> {
    layout.validate()?;
    scenario.validate()?;
    let arrivals = row_arrivals(scenario, layout, seed);
    let mut traces = BTreeMap::new();
    let mut first = Vec::new();
    for id in layout.active_turbines() {
        let mut rng = rng_stream(seed, turbine_stream(layout, id));
        let mut trace = Vec::with_capacity(scenario.horizon.max(0) as usize);
        let mut alarm = None;
        wind_trace(scenario, arrivals[id.row as usize - 1], &mut rng, |t, w| {
            if alarm.is_none() && w > scenario.alarm_threshold {
                alarm = Some(t);
            }
            trace.push(w);
            true
        });
        traces.insert(id, trace);
        first.push((id, alarm));
    }
    let alarms = alarm_list(&first);
    let detection = detect_event(&alarms, rule);
    let cumulative = policy.map(|p| p.cumulative_delays()).unwrap_or_default();

    let mut shutdowns = Vec::new();
    for &(id, alarm) in &first {
        let planned = match (detection, cumulative.get(&id.row)) {
            (Some(t0), Some(&cum)) => Some((t0 as f64 + cum).floor() as i64),
            _ => None,
        };
        let event = match (alarm, planned) {
            (Some(a), Some(s)) if a <= s => Some((a, ShutdownKind::Emergency)),
            (_, Some(s)) if s < scenario.horizon => Some((s, ShutdownKind::Planned)),
            (Some(a), None) => Some((a, ShutdownKind::Emergency)),
            _ => None,
        };
        if let Some((timestamp, kind)) = event {
            shutdowns.push(Shutdown {
                timestamp,
                turbine: id,
                kind,
            });
        }
    }
    shutdowns.sort();
    Ok(Simulation {
        log: EventLog { alarms, shutdowns },
        traces,
        arrivals,
        detection,
    })
}

/// Emergency stops per row, index 0 = row 1.
pub fn count_emergency_stops(log: &EventLog, layout: &FarmLayout) -> Vec<usize> {
    let mut counts = vec![0; layout.rows as usize];
    for s in &log.shutdowns {
        if s.kind == ShutdownKind::Emergency && (1..=layout.rows).contains(&s.turbine.row) {
            counts[s.turbine.row as usize - 1] += 1;
        }
    }
    counts
}

pub fn alarm_timestamp_grid(log: &EventLog, layout: &FarmLayout) -> FarmGrid<i64> {
    let mut grid = FarmGrid::for_layout(layout);
    for &(t, id) in &log.alarms {
        if layout.is_active(id) && grid.get(id.row, id.column).is_none_or(|&prev| t < prev) {
            grid.set(id, Some(t));
        }
    }
    grid
}

/// Two-group split of first-alarm times: a 1-D mixture over standardised
/// timestamps, hard assignment, then one smoothing pass on the farm grid.
pub fn cluster_alarm_grid(grid: &FarmGrid<i64>, seed: u64) -> Result<LabelGrid> {
    let cells: Vec<(TurbineId, i64)> = grid.iter().map(|(id, &t)| (id, t)).collect();
    if cells.len() < 2 {
        return Err(Error::DegenerateInput("fewer than two alarmed turbines".into()));
    }
    let n = cells.len() as f64;
    let mean = cells.iter().map(|c| c.1 as f64).sum::<f64>() / n;
    let std = (cells.iter().map(|c| (c.1 as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { 1.0 };
    let points: Vec<Vec<f64>> = cells.iter().map(|c| vec![(c.1 as f64 - mean) / scale]).collect();
    let config = DpgmmConfig::default().with_truncation(2).with_seed(seed);
    let model = fit_dpgmm(&points, &config)?;
    let labels = assign(&model, &points)?.labels;
    let mut out = LabelGrid::empty(grid.rows(), grid.columns());
    for ((id, _), label) in cells.iter().zip(labels) {
        out.set(*id, Some(label));
    }
    Ok(smooth_labels(&out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FarmLayout, StormScenario) {
        let layout = FarmLayout::default();
        let scenario = StormScenario {
            onset: 0.0,
            beacon_lead: 0.0,
            ..StormScenario::deterministic(&layout, 120.0)
        };
        (layout, scenario)
    }

    #[test]
    fn arrival_is_linear_without_noise() {
        let (layout, s) = toy();
        assert_eq!(storm_arrival(&s, &layout, 3, 7).unwrap(), 240.0);
        let lead = StormScenario { beacon_lead: 300.0, ..s.clone() };
        assert_eq!(storm_arrival(&lead, &layout, 1, 7).unwrap(), -300.0);
        assert_eq!(storm_arrival(&lead, &layout, 3, 7).unwrap(), 240.0);
        assert!(storm_arrival(&s, &layout, 0, 7).is_err());
        assert!(storm_arrival(&s, &layout, 12, 7).is_err());
    }

    #[test]
    fn jittered_arrivals_are_reproducible() {
        let layout = FarmLayout::default();
        let s = StormScenario::default();
        assert_eq!(row_arrivals(&s, &layout, 3), row_arrivals(&s, &layout, 3));
        assert_ne!(row_arrivals(&s, &layout, 3), row_arrivals(&s, &layout, 4));
    }

    #[test]
    fn baseline_stops_every_turbine_on_its_alarm() {
        let layout = FarmLayout::default();
        let s = StormScenario::deterministic(&layout, 40.0);
        let sim = simulate(&layout, &s, None, 1).unwrap();
        assert_eq!(sim.log.alarms.len(), 51);
        assert_eq!(sim.log.shutdowns.len(), 51);
        let alarms: BTreeMap<TurbineId, i64> = sim.log.alarms.iter().map(|&(t, id)| (id, t)).collect();
        for sd in &sim.log.shutdowns {
            assert_eq!(sd.kind, ShutdownKind::Emergency);
            assert_eq!(alarms[&sd.turbine], sd.timestamp);
            assert_eq!(sd.timestamp as f64, sim.arrivals[sd.turbine.row as usize - 1]);
        }
        let counts = count_emergency_stops(&sim.log, &layout);
        assert_eq!(counts, vec![5, 5, 5, 5, 4, 4, 4, 4, 5, 5, 5]);
        assert!(!sim.traces.contains_key(&TurbineId::new(5, 5)));
    }

    #[test]
    fn policy_ahead_of_arrival_avoids_emergencies() {
        let layout = FarmLayout::default();
        let s = StormScenario::deterministic(&layout, 40.0);
        let sim = simulate(&layout, &s, None, 1).unwrap();
        let t0 = sim.arrivals[0];
        // Each row shuts one second before the front.
        let mut theta = BTreeMap::new();
        let mut prev = 0.0;
        for r in 3..=layout.rows {
            let cum = sim.arrivals[r as usize - 1] - t0 - 1.0;
            theta.insert(r, cum - prev);
            prev = cum;
        }
        let policy = ShutdownPolicy::new(theta).unwrap();
        let with = simulate(&layout, &s, Some(&policy), 1).unwrap();
        assert_eq!(with.detection, Some(t0 as i64));
        let counts = count_emergency_stops(&with.log, &layout);
        assert_eq!(&counts[2..], &[0; 9]);
        assert_eq!(&counts[..2], &[5, 5]);
        assert_eq!(with.log.alarms, sim.log.alarms);
    }

    #[test]
    fn horizon_zero_is_empty() {
        let layout = FarmLayout::default();
        let s = StormScenario { horizon: 0, ..Default::default() };
        let sim = simulate(&layout, &s, None, 1).unwrap();
        assert!(sim.log.alarms.is_empty() && sim.log.shutdowns.is_empty());
        assert_eq!(count_emergency_stops(&EventLog::default(), &layout), vec![0; 11]);
    }

    #[test]
    fn first_alarms_match_full_simulation() {
        let layout = FarmLayout::default();
        let s = StormScenario::default();
        let sim = simulate(&layout, &s, None, 11).unwrap();
        assert_eq!(alarm_list(&first_alarms(&layout, &s, 11)), sim.log.alarms);
    }

    #[test]
    fn alarm_grid_follows_rows() {
        let layout = FarmLayout::default();
        let s = StormScenario::deterministic(&layout, 40.0);
        let sim = simulate(&layout, &s, None, 0).unwrap();
        let grid = alarm_timestamp_grid(&sim.log, &layout);
        assert_eq!(grid.get(3, 1), Some(&(sim.arrivals[2] as i64)));
        assert_eq!(grid.get(6, 5), None);
        assert_eq!(grid.iter().count(), 51);
    }

    #[test]
    fn csv_export() {
        let layout = FarmLayout::new(3, 1, 800.0);
        let s = StormScenario {
            horizon: 3,
            onset: 1.0,
            beacon_lead: 0.0,
            ..StormScenario::deterministic(&layout, 1.0)
        };
        let sim = simulate(&layout, &s, None, 0).unwrap();
        let mut buf = Vec::new();
        sim.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "timestamp,turbine,event\n\
             1,01/1,ALARM_HIGH_WIND\n1,01/1,SHUTDOWN_EMERGENCY\n\
             2,02/1,ALARM_HIGH_WIND\n2,02/1,SHUTDOWN_EMERGENCY\n"
        );
    }
}
