//! SCADA ingestion: 1 Hz CSV parsing, fixed-window averaging, farm wind
//! context and 0-1 normalization against configured physical bounds.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{FarmLayout, TurbineId};

pub const SCADA_HEADER: [&str; 6] = [
    "timestamp",
    "turbine",
    "power_kw",
    "rotor_rpm",
    "wind_ms",
    "wind_dir_deg",
];

/// Fraction of nominal samples a window needs to count as full.
pub const FULL_WINDOW_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadaRecord {
    /// Epoch seconds.
    pub timestamp: i64,
    pub turbine: TurbineId,
    /// kW. Brief negative draw is allowed.
    pub power: f64,
    /// rpm.
    pub rotor_speed: f64,
    /// m/s.
    pub wind_speed: f64,
    /// Degrees in [0, 360).
    pub wind_direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindVector {
    pub speed: f64,
    pub direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub turbine: TurbineId,
    pub power_mean: f64,
    pub rotor_mean: f64,
    pub window_start: i64,
    pub window_len: i64,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedScada {
    pub records: Vec<ScadaRecord>,
    /// Rows dropped because their turbine is marked missing.
    pub dropped: usize,
}

impl ParsedScada {
    pub fn data_rows(&self) -> usize {
        self.records.len() + self.dropped
    }
}

/// Parses SCADA CSV. Rows for turbines the layout marks missing are dropped
/// and counted; turbines outside the layout grid are a configuration error.
pub fn parse_scada<R: Read>(input: R, layout: &FarmLayout) -> Result<ParsedScada> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| csv_parse_error(e, 1))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty input, expected header".into(),
            })
        }
    };
    if header.iter().ne(SCADA_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header, expected {}", SCADA_HEADER.join(",")),
        });
    }

    let mut out = ParsedScada::default();
    for (i, row) in rows.enumerate() {
        let fallback_line = i as u64 + 2;
        let row = row.map_err(|e| csv_parse_error(e, fallback_line))?;
        let line = row.position().map_or(fallback_line, |p| p.line());
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != SCADA_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", SCADA_HEADER.len(), row.len()),
            });
        }
        let parse_err = |message: String| Error::Parse { line, message };
        let timestamp: i64 = row[0]
            .parse()
            .map_err(|_| parse_err(format!("invalid timestamp {:?}", &row[0])))?;
        let turbine: TurbineId = row[1].parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let num = |idx: usize| -> Result<f64> {
            let v: f64 = row[idx]
                .parse()
                .map_err(|_| parse_err(format!("invalid {} value {:?}", SCADA_HEADER[idx], &row[idx])))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite {}", SCADA_HEADER[idx])));
            }
            Ok(v)
        };
        let record = ScadaRecord {
            timestamp,
            turbine,
            power: num(2)?,
            rotor_speed: num(3)?,
            wind_speed: num(4)?,
            wind_direction: num(5)?,
        };
        if record.rotor_speed < 0.0 {
            return Err(parse_err("rotor_rpm must be non-negative".into()));
        }
        if record.wind_speed < 0.0 {
            return Err(parse_err("wind_ms must be non-negative".into()));
        }
        if !(0.0..360.0).contains(&record.wind_direction) {
            return Err(parse_err("wind_dir_deg must lie in [0, 360)".into()));
        }
        if !layout.in_grid(turbine) {
            return Err(Error::config(format!(
                "line {line}: turbine {turbine} is not part of the {}x{} layout",
                layout.rows, layout.columns
            )));
        }
        if layout.missing.contains(&turbine) {
            out.dropped += 1;
            continue;
        }
        out.records.push(record);
    }
    Ok(out)
}

fn csv_parse_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Groups records per turbine, sorted by timestamp.
pub fn group_by_turbine(records: &[ScadaRecord]) -> BTreeMap<TurbineId, Vec<ScadaRecord>> {
    let mut groups: BTreeMap<TurbineId, Vec<ScadaRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.turbine).or_default().push(*r);
    }
    for series in groups.values_mut() {
        series.sort_by_key(|r| r.timestamp);
    }
    groups
}

/// Per-turbine means over consecutive windows anchored at each turbine's
/// first sample. A window is emitted when the series extends to its end and
/// it holds at least 90% of its nominal sample count; samples are weighted
/// uniformly.
pub fn window_average(records: &[ScadaRecord], window_seconds: i64) -> Result<Vec<FeatureVector>> {
    if window_seconds <= 0 {
        return Err(Error::domain("window_seconds must be positive"));
    }
    let min_samples = (FULL_WINDOW_FRACTION * window_seconds as f64).ceil() as usize;
    let mut out = Vec::new();
    for (turbine, series) in group_by_turbine(records) {
        let first = series[0].timestamp;
        let last = series[series.len() - 1].timestamp;
        let mut idx = 0;
        let mut start = first;
        while start + window_seconds - 1 <= last {
            let end = start + window_seconds;
            let (mut n, mut power, mut rotor) = (0usize, 0.0, 0.0);
            while idx < series.len() && series[idx].timestamp < end {
                n += 1;
                power += series[idx].power;
                rotor += series[idx].rotor_speed;
                idx += 1;
            }
            if n >= min_samples.max(1) {
                out.push(FeatureVector {
                    turbine,
                    power_mean: power / n as f64,
                    rotor_mean: rotor / n as f64,
                    window_start: start,
                    window_len: window_seconds,
                });
            }
            start = end;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarmWind {
    pub vector: WindVector,
    /// False when directions cancel out and the mean angle is meaningless.
    pub direction_defined: bool,
}

/// Mean of unit vectors for angles in degrees, returned in [0, 360), together
/// with the mean resultant length in [0, 1].
pub fn circular_mean_deg(angles: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        let rad = a.to_radians();
        s += rad.sin();
        c += rad.cos();
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let resultant = (s * s + c * c).sqrt() / n as f64;
    Some((wrap_degrees(s.atan2(c).to_degrees()), resultant))
}

pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Smallest absolute angle between two directions, in degrees.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Farm-average wind: arithmetic mean speed and equally weighted circular
/// mean direction.
pub fn farm_wind_vector(records: &[ScadaRecord]) -> Result<FarmWind> {
    if records.is_empty() {
        return Err(Error::domain("farm wind vector of an empty record set"));
    }
    let speed = records.iter().map(|r| r.wind_speed).sum::<f64>() / records.len() as f64;
    let (direction, resultant) =
        circular_mean_deg(records.iter().map(|r| r.wind_direction)).expect("non-empty");
    let direction_defined = resultant >= 1e-6;
    Ok(FarmWind {
        vector: WindVector {
            speed,
            direction: if direction_defined { direction } else { 0.0 },
        },
        direction_defined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadyStateParams {
    pub pre_window_s: i64,
    pub window_s: i64,
    /// Relative tolerance on speed around the mean.
    pub speed_tol: f64,
    /// Absolute tolerance on direction around the mean, degrees.
    pub dir_tol: f64,
}

impl Default for SteadyStateParams {
    fn default() -> Self {
        SteadyStateParams {
            pre_window_s: 600,
            window_s: 120,
            speed_tol: 0.1,
            dir_tol: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub steady: bool,
    /// Lowest-speed per-second farm vector in the checked span.
    pub min: WindVector,
    /// Highest-speed per-second farm vector in the checked span.
    pub max: WindVector,
    pub mean: WindVector,
}

/// Checks that the per-second farm wind vector stays within tolerance of its
/// mean over `[window_start - pre_window_s, window_start + window_s)`.
pub fn check_steady_state(
    records: &[ScadaRecord],
    window_start: i64,
    params: &SteadyStateParams,
) -> Result<SteadyState> {
    if params.pre_window_s < 0 || params.window_s <= 0 {
        return Err(Error::domain("steady-state windows must be non-negative / positive"));
    }
    let lo = window_start - params.pre_window_s;
    let hi = window_start + params.window_s;
    let mut per_second: BTreeMap<i64, Vec<ScadaRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| (lo..hi).contains(&r.timestamp)) {
        per_second.entry(r.timestamp).or_default().push(*r);
    }
    let in_window = per_second.range(window_start..hi).count();
    if per_second.len() < 2 || in_window == 0 {
        return Err(Error::domain(format!(
            "insufficient wind data in [{lo}, {hi}): {} seconds, {in_window} inside the window",
            per_second.len()
        )));
    }
    let vectors: Vec<WindVector> = per_second
        .values()
        .map(|recs| farm_wind_vector(recs).map(|w| w.vector))
        .collect::<Result<_>>()?;

    let mean_speed = vectors.iter().map(|v| v.speed).sum::<f64>() / vectors.len() as f64;
    let (mean_dir, _) = circular_mean_deg(vectors.iter().map(|v| v.direction)).expect("non-empty");
    let steady = vectors.iter().all(|v| {
        (v.speed - mean_speed).abs() <= params.speed_tol * mean_speed
            && angular_distance(v.direction, mean_dir) <= params.dir_tol
    });
    let by_speed = |a: &&WindVector, b: &&WindVector| a.speed.total_cmp(&b.speed);
    let min = *vectors.iter().min_by(by_speed).expect("non-empty");
    let max = *vectors.iter().max_by(by_speed).expect("non-empty");
    Ok(SteadyState {
        steady,
        min,
        max,
        mean: WindVector {
            speed: mean_speed,
            direction: mean_dir,
        },
    })
}

/// Fixed physical bounds of a quantity, e.g. 0 and rated power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let b = Bounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::config(format!(
                "normalization bounds need min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Maps values to [0, 1] against fixed bounds, clamping outliers.
pub fn normalize(values: &[f64], bounds: Bounds) -> Result<Vec<f64>> {
    bounds.validate()?;
    Ok(values.iter().map(|&v| bounds.normalize(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(t: i64, turbine: TurbineId, power: f64) -> ScadaRecord {
        ScadaRecord {
            timestamp: t,
            turbine,
            power,
            rotor_speed: 12.0,
            wind_speed: 8.0,
            wind_direction: 235.0,
        }
    }

    fn layout() -> FarmLayout {
        FarmLayout::new(11, 5, 800.0).with_missing([TurbineId::new(10, 4)])
    }

    const HEADER: &str = "timestamp,turbine,power_kw,rotor_rpm,wind_ms,wind_dir_deg\n";

    #[test]
    fn parses_a_row() {
        let csv = format!("{HEADER}1388306100,03/2,850.0,14.2,8.1,236.0\n");
        let parsed = parse_scada(csv.as_bytes(), &layout()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let r = parsed.records[0];
        assert_eq!(r.turbine, TurbineId::new(3, 2));
        assert_eq!(r.power, 850.0);
        assert_eq!(r.timestamp, 1388306100);
    }

    #[test]
    fn drops_missing_turbines() {
        let csv = format!(
            "{HEADER}1,10/4,850.0,14.2,8.1,236.0\n1,03/2,850.0,14.2,8.1,236.0\n2,10/4,1.0,1.0,1.0,1.0\n"
        );
        let parsed = parse_scada(csv.as_bytes(), &layout()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.dropped, 2);
        assert_eq!(parsed.data_rows(), 3);
    }

    #[test]
    fn malformed_number_reports_line() {
        let csv = format!("{HEADER}1388306100,03/2,abc,14.2,8.1,236.0\n");
        match parse_scada(csv.as_bytes(), &layout()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_turbine_is_config_error() {
        let csv = format!("{HEADER}1,12/1,850.0,14.2,8.1,236.0\n");
        assert!(matches!(parse_scada(csv.as_bytes(), &layout()), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_header_and_empty_input() {
        assert!(matches!(
            parse_scada("a,b\n".as_bytes(), &layout()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scada("".as_bytes(), &layout()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_direction() {
        let csv = format!("{HEADER}1,03/2,850.0,14.2,8.1,360.0\n");
        assert!(matches!(parse_scada(csv.as_bytes(), &layout()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn window_means() {
        let t = TurbineId::new(1, 1);
        let constant: Vec<_> = (0..120).map(|i| rec(i, t, 1.0)).collect();
        let w = window_average(&constant, 120).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].power_mean, 1.0);

        let ramp: Vec<_> = (0..120).map(|i| rec(i, t, i as f64)).collect();
        assert_eq!(window_average(&ramp, 120).unwrap()[0].power_mean, 59.5);

        let short: Vec<_> = (0..119).map(|i| rec(i, t, 1.0)).collect();
        assert!(window_average(&short, 120).unwrap().is_empty());
        assert!(window_average(&[], 120).unwrap().is_empty());
    }

    #[test]
    fn window_tolerates_small_gaps_only() {
        let t = TurbineId::new(1, 1);
        // 10 missing seconds inside a 120 s window: 110 >= 108 samples.
        let gappy: Vec<_> = (0..120).filter(|i| !(50..60).contains(i)).map(|i| rec(i, t, 2.0)).collect();
        assert_eq!(window_average(&gappy, 120).unwrap().len(), 1);
        // 20 missing seconds: 100 < 108.
        let holey: Vec<_> = (0..120).filter(|i| !(50..70).contains(i)).map(|i| rec(i, t, 2.0)).collect();
        assert!(window_average(&holey, 120).unwrap().is_empty());
    }

    #[test]
    fn farm_wind_examples() {
        let t = TurbineId::new(1, 1);
        let mut r = rec(0, t, 0.0);
        r.wind_speed = 8.2;
        r.wind_direction = 235.4;
        let w = farm_wind_vector(&[r, r, r]).unwrap();
        assert_abs_diff_eq!(w.vector.speed, 8.2, epsilon = 1e-12);
        assert_abs_diff_eq!(w.vector.direction, 235.4, epsilon = 1e-9);
        assert!(w.direction_defined);

        let (mut a, mut b) = (r, r);
        a.wind_direction = 350.0;
        b.wind_direction = 10.0;
        let w = farm_wind_vector(&[a, b]).unwrap();
        assert!(angular_distance(w.vector.direction, 0.0) < 1e-9);
        assert!((0.0..360.0).contains(&w.vector.direction));

        a.wind_direction = 0.0;
        b.wind_direction = 180.0;
        assert!(!farm_wind_vector(&[a, b]).unwrap().direction_defined);
        assert!(farm_wind_vector(&[]).is_err());
    }

    fn wind_at(t: i64, speed: f64, dir: f64) -> Vec<ScadaRecord> {
        (1..=3)
            .map(|c| ScadaRecord {
                timestamp: t,
                turbine: TurbineId::new(1, c),
                power: 0.0,
                rotor_speed: 0.0,
                wind_speed: speed,
                wind_direction: dir,
            })
            .collect()
    }

    #[test]
    fn steady_state_constant_wind() {
        let recs: Vec<_> = (0..720).flat_map(|t| wind_at(t, 8.2, 235.4)).collect();
        let s = check_steady_state(&recs, 600, &SteadyStateParams::default()).unwrap();
        assert!(s.steady);
        assert_eq!(s.min, s.max);
    }

    #[test]
    fn steady_state_reported_extremes() {
        // Per-second vectors oscillating between the two reported extremes.
        let recs: Vec<_> = (0..720)
            .flat_map(|t| {
                if t % 2 == 0 {
                    wind_at(t, 7.9, 235.0)
                } else {
                    wind_at(t, 8.7, 235.7)
                }
            })
            .collect();
        let params = SteadyStateParams {
            speed_tol: 0.5,
            dir_tol: 2.0,
            ..Default::default()
        };
        let s = check_steady_state(&recs, 600, &params).unwrap();
        assert!(s.steady);
        assert_abs_diff_eq!(s.min.speed, 7.9, epsilon = 1e-12);
        assert_abs_diff_eq!(s.min.direction, 235.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.max.speed, 8.7, epsilon = 1e-12);
        assert_abs_diff_eq!(s.max.direction, 235.7, epsilon = 1e-9);
        assert!(check_steady_state(&recs, 600, &SteadyStateParams::default()).unwrap().steady);
    }

    #[test]
    fn steady_state_step_fails() {
        let recs: Vec<_> = (0..720)
            .flat_map(|t| wind_at(t, if t < 660 { 8.0 } else { 15.0 }, 235.0))
            .collect();
        assert!(!check_steady_state(&recs, 600, &SteadyStateParams::default()).unwrap().steady);
        assert!(check_steady_state(&recs[..3], 600, &SteadyStateParams::default()).is_err());
    }

    #[test]
    fn normalize_examples() {
        let b = Bounds::new(0.0, 2000.0).unwrap();
        assert_eq!(normalize(&[0.0, 2000.0, 1000.0, -5.0, 2100.0], b).unwrap(), vec![0.0, 1.0, 0.5, 0.0, 1.0]);
        assert!(normalize(&[1.0], Bounds { min: 1.0, max: 1.0 }).is_err());
        assert!(Bounds::new(2.0, 1.0).is_err());
    }
}
