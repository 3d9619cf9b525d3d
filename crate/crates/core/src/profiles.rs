//! Load duration (LDD) and load revolution (LRD) distributions per
//! operational zone, Gaussian load summaries and discrepancy scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{shapiro_wilk, ShapiroWilk, ZoneAssignment, SHAPIRO_WILK_MAX_N};
use crate::error::{Error, Result};
use crate::layout::TurbineId;
use crate::scada::{Bounds, ScadaRecord, WindVector};

pub const DEFAULT_BIN_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramKind {
    /// Seconds spent per normalized power bin.
    Duration,
    /// Rotor revolutions accumulated per normalized power bin.
    Revolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadHistogram {
    pub kind: HistogramKind,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<f64>,
}

impl LoadHistogram {
    pub fn empty(kind: HistogramKind, bin_count: usize) -> Result<Self> {
        if bin_count == 0 {
            return Err(Error::domain("bin_count must be at least 1"));
        }
        Ok(LoadHistogram {
            kind,
            bin_edges: (0..=bin_count).map(|i| i as f64 / bin_count as f64).collect(),
            counts: vec![0.0; bin_count],
        })
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Uniform bins over [0, 1]; the last bin is closed on the right.
    pub fn bin_of(&self, value: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::domain(format!(
                "value {value} outside [0, 1]; normalize before binning"
            )));
        }
        let n = self.bin_count();
        Ok(((value * n as f64) as usize).min(n - 1))
    }

    fn same_binning(&self, other: &LoadHistogram) -> bool {
        self.kind == other.kind && self.bin_edges == other.bin_edges
    }

    pub fn merge(&self, other: &LoadHistogram) -> Result<LoadHistogram> {
        if !self.same_binning(other) {
            return Err(Error::domain("histograms differ in kind or binning"));
        }
        Ok(LoadHistogram {
            kind: self.kind,
            bin_edges: self.bin_edges.clone(),
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
        })
    }

    /// Counts scaled to unit mass. Errors on an all-zero histogram.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::domain("histogram has no mass"));
        }
        Ok(self.counts.iter().map(|c| c / total).collect())
    }
}

pub fn compute_ldd(power: &[f64], bin_count: usize) -> Result<LoadHistogram> {
    let mut h = LoadHistogram::empty(HistogramKind::Duration, bin_count)?;
    for &p in power {
        let b = h.bin_of(p)?;
        h.counts[b] += 1.0;
    }
    Ok(h)
}

/// Each 1 s sample contributes `rpm / 60` revolutions to its power bin.
pub fn compute_lrd(power: &[f64], rotor_rpm: &[f64], bin_count: usize) -> Result<LoadHistogram> {
    if power.len() != rotor_rpm.len() {
        return Err(Error::domain(format!(
            "power and rotor series differ in length ({} vs {})",
            power.len(),
            rotor_rpm.len()
        )));
    }
    let mut h = LoadHistogram::empty(HistogramKind::Revolution, bin_count)?;
    for (&p, &rpm) in power.iter().zip(rotor_rpm) {
        let b = h.bin_of(p)?;
        h.counts[b] += rpm / 60.0;
    }
    Ok(h)
}

/// Hellinger distance between two mass-normalized histograms, in [0, 1].
pub fn hellinger(a: &LoadHistogram, b: &LoadHistogram) -> Result<f64> {
    if !a.same_binning(b) {
        return Err(Error::domain("histograms differ in kind or binning"));
    }
    let (p, q) = (a.probabilities()?, b.probabilities()?);
    let sq: f64 = p
        .iter()
        .zip(&q)
        .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
        .sum();
    Ok((0.5 * sq).sqrt().min(1.0))
}

/// Overlap coefficient: shared probability mass, 1 for identical shapes.
pub fn overlap_coefficient(a: &LoadHistogram, b: &LoadHistogram) -> Result<f64> {
    if !a.same_binning(b) {
        return Err(Error::domain("histograms differ in kind or binning"));
    }
    let (p, q) = (a.probabilities()?, b.probabilities()?);
    Ok(p.iter().zip(&q).map(|(x, y)| x.min(*y)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub zone: usize,
    pub turbines: Vec<TurbineId>,
    pub samples: usize,
    pub ldd: LoadHistogram,
    pub lrd: LoadHistogram,
    /// Normalized power.
    pub power_mean: f64,
    pub power_std: f64,
    /// rpm.
    pub rotor_mean: f64,
    pub rotor_std: f64,
    pub wind_context: WindVector,
    pub window_start: i64,
    pub window_len: i64,
}

/// Deviation of an observed histogram from a baseline profile, as a
/// Hellinger distance (0 identical, 1 disjoint).
pub fn profile_discrepancy(baseline: &LoadProfile, observed: &LoadHistogram) -> Result<f64> {
    if observed.total() <= 0.0 {
        return Err(Error::domain("observed histogram has no mass"));
    }
    let reference = match observed.kind {
        HistogramKind::Duration => &baseline.ldd,
        HistogramKind::Revolution => &baseline.lrd,
    };
    hellinger(reference, observed)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-zone pooled 1 s series, keyed by zone; records sorted by (turbine, time).
#[derive(Debug, Clone, Default)]
struct ZoneSeries {
    turbines: Vec<TurbineId>,
    power: Vec<f64>,
    rotor: Vec<f64>,
    first: i64,
    last: i64,
}

fn pool_by_zone(
    records: &[ScadaRecord],
    assignment: &ZoneAssignment,
    power_bounds: Bounds,
) -> Result<BTreeMap<usize, ZoneSeries>> {
    power_bounds.validate()?;
    let mut sorted: Vec<&ScadaRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.turbine, r.timestamp));
    let mut zones: BTreeMap<usize, ZoneSeries> = BTreeMap::new();
    for r in sorted {
        let zone = assignment.zone_of(r.turbine).ok_or_else(|| {
            Error::domain(format!("turbine {} has no zone assignment", r.turbine))
        })?;
        let z = zones.entry(zone).or_insert_with(|| ZoneSeries {
            first: r.timestamp,
            last: r.timestamp,
            ..Default::default()
        });
        if z.turbines.last() != Some(&r.turbine) {
            z.turbines.push(r.turbine);
        }
        z.power.push(power_bounds.normalize(r.power));
        z.rotor.push(r.rotor_speed);
        z.first = z.first.min(r.timestamp);
        z.last = z.last.max(r.timestamp);
    }
    Ok(zones)
}

/// One load profile per zone that has samples, pooling its turbines' 1 s
/// records. Zones present in the assignment without samples are skipped.
pub fn build_profiles(
    records: &[ScadaRecord],
    assignment: &ZoneAssignment,
    power_bounds: Bounds,
    bin_count: usize,
    wind_context: WindVector,
) -> Result<Vec<LoadProfile>> {
    let zones = pool_by_zone(records, assignment, power_bounds)?;
    for zone in assignment.zones().keys() {
        if !zones.contains_key(zone) {
            log::warn!("zone {zone} has no samples, no profile built");
        }
    }
    zones
        .into_iter()
        .map(|(zone, s)| {
            let (power_mean, power_std) = mean_std(&s.power);
            let (rotor_mean, rotor_std) = mean_std(&s.rotor);
            Ok(LoadProfile {
                zone,
                samples: s.power.len(),
                ldd: compute_ldd(&s.power, bin_count)?,
                lrd: compute_lrd(&s.power, &s.rotor, bin_count)?,
                turbines: s.turbines,
                power_mean,
                power_std,
                rotor_mean,
                rotor_std,
                wind_context,
                window_start: s.first,
                window_len: s.last - s.first + 1,
            })
        })
        .collect()
}

/// Plot-ready `zone,bin_lower,bin_upper,ldd_count,lrd_count`.
pub fn write_profiles_csv<W: std::io::Write>(profiles: &[LoadProfile], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["zone", "bin_lower", "bin_upper", "ldd_count", "lrd_count"])?;
    for p in profiles {
        for (b, (ldd, lrd)) in p.ldd.counts.iter().zip(&p.lrd.counts).enumerate() {
            w.write_record([
                p.zone.to_string(),
                p.ldd.bin_edges[b].to_string(),
                p.ldd.bin_edges[b + 1].to_string(),
                ldd.to_string(),
                lrd.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("profiles", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub zone: usize,
    pub turbines: Vec<TurbineId>,
    pub samples: usize,
    pub power_mean: f64,
    pub power_std: f64,
    pub rotor_mean: f64,
    pub rotor_std: f64,
    pub wind_context: WindVector,
    pub window_start: i64,
    pub window_len: i64,
}

impl From<&LoadProfile> for ProfileSummary {
    fn from(p: &LoadProfile) -> Self {
        ProfileSummary {
            zone: p.zone,
            turbines: p.turbines.clone(),
            samples: p.samples,
            power_mean: p.power_mean,
            power_std: p.power_std,
            rotor_mean: p.rotor_mean,
            rotor_std: p.rotor_std,
            wind_context: p.wind_context,
            window_start: p.window_start,
            window_len: p.window_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadParameter {
    Power,
    Rotor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityEntry {
    pub zone: usize,
    pub parameter: LoadParameter,
    /// Samples tested after subsampling.
    pub n: usize,
    pub w: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Significance level for the per-zone normality check.
pub const NORMALITY_LEVEL: f64 = 0.05;

/// Deterministic stride subsample to at most `max` values; the offset
/// within the stride comes from the seed.
pub fn stride_subsample(values: &[f64], max: usize, seed: u64) -> Vec<f64> {
    if values.len() <= max {
        return values.to_vec();
    }
    let stride = values.len().div_ceil(max);
    let offset = (seed % stride as u64) as usize;
    values.iter().skip(offset).step_by(stride).copied().collect()
}

/// Shapiro-Wilk outcome per zone and parameter, keeping failures (for
/// example a zone with constant power) alongside the successes.
pub fn zone_normality(
    records: &[ScadaRecord],
    assignment: &ZoneAssignment,
    power_bounds: Bounds,
    seed: u64,
) -> Result<Vec<(usize, LoadParameter, usize, Result<ShapiroWilk>)>> {
    let zones = pool_by_zone(records, assignment, power_bounds)?;
    let mut out = Vec::new();
    for (zone, s) in zones {
        for (parameter, values) in [(LoadParameter::Power, &s.power), (LoadParameter::Rotor, &s.rotor)] {
            let sample = stride_subsample(values, SHAPIRO_WILK_MAX_N, seed);
            out.push((zone, parameter, sample.len(), shapiro_wilk(&sample)));
        }
    }
    Ok(out)
}

/// Shapiro-Wilk on each zone's pooled normalized power and rotor speed.
pub fn normality_report(
    records: &[ScadaRecord],
    assignment: &ZoneAssignment,
    power_bounds: Bounds,
    seed: u64,
) -> Result<Vec<NormalityEntry>> {
    zone_normality(records, assignment, power_bounds, seed)?
        .into_iter()
        .map(|(zone, parameter, n, sw)| {
            let sw = sw.map_err(|e| Error::domain(format!("zone {zone} {parameter:?}: {e}")))?;
            Ok(NormalityEntry {
                zone,
                parameter,
                n,
                w: sw.w,
                p_value: sw.p_value,
                pass: sw.passes(NORMALITY_LEVEL),
            })
        })
        .collect()
}
