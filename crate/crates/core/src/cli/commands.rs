use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_file, read_file, to_json, write_file, CliError, CliResult, RunConfig, EXIT_NUMERICAL};
use crate::clustering::{adopt_split, assign, fit_dpgmm, subcluster, MixtureModel, ZoneAssignment};
use crate::controller::{evaluate_policy, grid_search_oracle, train, ShutdownPolicy};
use crate::error::Error;
use crate::farmsim::{
    alarm_timestamp_grid, cluster_alarm_grid, count_emergency_stops, simulate_with_rule, ShutdownKind,
};
use crate::layout::{FarmLayout, TurbineId};
use crate::profiles::{
    build_profiles, overlap_coefficient, write_profiles_csv, zone_normality, LoadParameter, ProfileSummary,
    NORMALITY_LEVEL,
};
use crate::scada::{
    check_steady_state, farm_wind_vector, parse_scada, window_average, FarmWind, ScadaRecord, SteadyState,
};

fn load_scada(cfg: &RunConfig, path: &Path) -> CliResult<(Vec<ScadaRecord>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_scada(BufReader::new(file), &cfg.layout)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if parsed.records.is_empty() {
        return Err(CliError::input(format!("{}: no usable SCADA rows", path.display())));
    }
    Ok((parsed.records, parsed.dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterSummary {
    pub parent_zone: usize,
    pub members: usize,
    pub effective_components: usize,
    pub adopted: bool,
    /// Zones the members were relabelled to when adopted.
    pub zones: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub window_start: i64,
    pub window_s: i64,
    pub turbines: usize,
    pub dropped_rows: usize,
    pub farm_wind: FarmWind,
    pub steady_state: Option<SteadyState>,
    pub effective_components: Vec<usize>,
    pub zones: BTreeMap<usize, Vec<TurbineId>>,
    pub subclusters: Vec<SubclusterSummary>,
    pub model: MixtureModel,
}

pub fn cmd_cluster(cfg: &RunConfig, scada: &Path, out: &Path) -> CliResult<()> {
    let (records, dropped) = load_scada(cfg, scada)?;
    let features = window_average(&records, cfg.scada.window_s)?;
    let mut seen = BTreeSet::new();
    let selected: Vec<_> = features
        .into_iter()
        .filter(|f| match cfg.clustering.window_start {
            Some(ws) => f.window_start == ws,
            None => seen.insert(f.turbine),
        })
        .collect();
    if selected.len() < 2 {
        return Err(CliError::input(format!(
            "{}: fewer than two turbines with a full {} s window",
            scada.display(),
            cfg.scada.window_s
        )));
    }
    let norm = &cfg.normalization;
    let turbines: Vec<TurbineId> = selected.iter().map(|f| f.turbine).collect();
    let points: Vec<Vec<f64>> = selected
        .iter()
        .map(|f| vec![norm.power.normalize(f.power_mean), norm.rotor.normalize(f.rotor_mean)])
        .collect();

    let dp = cfg.clustering.dpgmm();
    let model = fit_dpgmm(&points, &dp)?;
    let assignment = assign(&model, &points)?;
    let mut labels = assignment.labels.clone();

    let mut subclusters = Vec::new();
    if cfg.clustering.subcluster {
        let mut next_label = model.components.len();
        let parents: BTreeSet<usize> = assignment.labels.iter().copied().collect();
        for zone in parents {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| assignment.labels[i] == zone).collect();
            if idx.len() < 4 {
                continue;
            }
            let sub = subcluster(&points, &assignment.labels, zone, &dp)?;
            let members: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
            let mut summary = SubclusterSummary {
                parent_zone: zone,
                members: idx.len(),
                effective_components: sub.effective_components().len(),
                adopted: false,
                zones: vec![zone],
                converged: sub.converged,
            };
            if let Some(sub_labels) = adopt_split(&sub, &members)? {
                let used: BTreeSet<usize> = sub_labels.iter().copied().collect();
                let mut relabel = BTreeMap::new();
                for (j, k) in used.into_iter().enumerate() {
                    let z = if j == 0 {
                        zone
                    } else {
                        next_label += 1;
                        next_label - 1
                    };
                    relabel.insert(k, z);
                }
                for (&i, k) in idx.iter().zip(&sub_labels) {
                    labels[i] = relabel[k];
                }
                summary.adopted = true;
                summary.zones = relabel.values().copied().collect();
            }
            subclusters.push(summary);
        }
    }

    let window_start = selected.iter().map(|f| f.window_start).min().expect("non-empty");
    let in_window: Vec<ScadaRecord> = records
        .iter()
        .filter(|r| (window_start..window_start + cfg.scada.window_s).contains(&r.timestamp))
        .copied()
        .collect();
    let farm_wind = farm_wind_vector(&in_window)?;
    let steady_state = match check_steady_state(&records, window_start, &cfg.scada.steady_state) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("steady-state check skipped: {e}");
            None
        }
    };

    let mut zones: BTreeMap<usize, Vec<TurbineId>> = BTreeMap::new();
    for (t, &l) in turbines.iter().zip(&labels) {
        zones.entry(l).or_default().push(*t);
    }
    let summary = ClusterSummary {
        window_start,
        window_s: cfg.scada.window_s,
        turbines: turbines.len(),
        dropped_rows: dropped,
        farm_wind,
        steady_state,
        effective_components: model.effective_components(),
        zones,
        subclusters,
        model: model.clone(),
    };
    write_file(&out.join("zones.json"), to_json(&summary))?;

    let mut w = csv::Writer::from_writer(create_file(&out.join("assignment.csv"))?);
    let mut header = vec!["turbine".to_string(), "zone".into(), "power_norm".into(), "rotor_norm".into()];
    header.extend((0..model.components.len()).map(|k| format!("resp_{k}")));
    w.write_record(&header).map_err(Error::from)?;
    for (i, t) in turbines.iter().enumerate() {
        let mut row = vec![
            t.to_string(),
            labels[i].to_string(),
            points[i][0].to_string(),
            points[i][1].to_string(),
        ];
        row.extend(assignment.responsibilities[i].iter().map(|r| r.to_string()));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(out.join("assignment.csv"), e))?;

    if !model.converged {
        return Err(CliError {
            code: EXIT_NUMERICAL,
            message: format!(
                "clustering did not converge after {} iterations (last ELBO change {:.3e}, tol {:.1e})",
                model.iterations_run, model.final_elbo_delta, dp.tol
            ),
        });
    }
    Ok(())
}

/// Reads `turbine,zone,...` rows; extra columns are ignored.
pub fn read_assignment(path: &Path, layout: &FarmLayout) -> CliResult<ZoneAssignment> {
    #[derive(Deserialize)]
    struct Row {
        turbine: String,
        zone: usize,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut za = ZoneAssignment::default();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let id: TurbineId = row
            .turbine
            .parse()
            .map_err(|e| CliError::input(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if !layout.in_grid(id) {
            return Err(CliError::input(format!(
                "{}: turbine {id} is outside the configured layout",
                path.display()
            )));
        }
        za.labels.insert(id, row.zone);
    }
    if za.labels.is_empty() {
        return Err(CliError::input(format!("{}: no assignments", path.display())));
    }
    Ok(za)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub zone_a: usize,
    pub zone_b: usize,
    pub ldd: f64,
    /// Absent when either zone has no rotor revolutions.
    pub lrd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub zone: usize,
    pub parameter: LoadParameter,
    pub n: usize,
    pub w: Option<f64>,
    pub p_value: Option<f64>,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub bin_count: usize,
    pub profiles: Vec<ProfileSummary>,
    pub overlaps: Vec<Overlap>,
    pub normality_level: f64,
    pub normality: Vec<NormalityRow>,
}

pub fn cmd_profile(cfg: &RunConfig, scada: &Path, assignment: &Path, out: &Path) -> CliResult<()> {
    let (mut records, _) = load_scada(cfg, scada)?;
    if let (Some(start), Some(len)) = (cfg.profiling.window_start, cfg.profiling.window_s) {
        records.retain(|r| (start..start + len).contains(&r.timestamp));
        if records.is_empty() {
            return Err(CliError::input(format!("no SCADA rows in [{start}, {})", start + len)));
        }
    }
    let za = read_assignment(assignment, &cfg.layout)?;
    let power = cfg.normalization.power;
    let wind = farm_wind_vector(&records)?.vector;
    let profiles = build_profiles(&records, &za, power, cfg.profiling.bin_count, wind)
        .map_err(|e| CliError::input(format!("{}: {e}", assignment.display())))?;

    let mut overlaps = Vec::new();
    for (i, a) in profiles.iter().enumerate() {
        for b in &profiles[i + 1..] {
            overlaps.push(Overlap {
                zone_a: a.zone,
                zone_b: b.zone,
                ldd: overlap_coefficient(&a.ldd, &b.ldd)?,
                lrd: overlap_coefficient(&a.lrd, &b.lrd).ok(),
            });
        }
    }
    let normality = zone_normality(&records, &za, power, cfg.profiling.seed)?
        .into_iter()
        .map(|(zone, parameter, n, sw)| match sw {
            Ok(sw) => NormalityRow {
                zone,
                parameter,
                n,
                w: Some(sw.w),
                p_value: Some(sw.p_value),
                pass: sw.passes(NORMALITY_LEVEL),
                note: None,
            },
            Err(e) => NormalityRow {
                zone,
                parameter,
                n,
                w: None,
                p_value: None,
                pass: false,
                note: Some(e.to_string()),
            },
        })
        .collect();

    write_profiles_csv(&profiles, create_file(&out.join("profiles.csv"))?)?;
    let report = ProfileReport {
        bin_count: cfg.profiling.bin_count,
        profiles: profiles.iter().map(ProfileSummary::from).collect(),
        overlaps,
        normality_level: NORMALITY_LEVEL,
        normality,
    };
    write_file(&out.join("profiles.json"), to_json(&report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub policy: Option<String>,
    pub detection: Option<i64>,
    pub row_arrivals: Vec<f64>,
    pub alarms: usize,
    pub planned_shutdowns: usize,
    pub emergency_stops: usize,
    pub emergency_stops_per_row: Vec<usize>,
}

pub fn cmd_simulate(cfg: &RunConfig, policy_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let policy = match policy_path {
        Some(p) => {
            let text = read_file(p)?;
            let policy = ShutdownPolicy::from_json(&text)
                .and_then(|pol| pol.validate_for(&cfg.layout).map(|_| pol))
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            Some(policy)
        }
        None => None,
    };
    let seed = cfg.simulation.seed;
    let sim = simulate_with_rule(&cfg.layout, &cfg.scenario, policy.as_ref(), &cfg.detection, seed)?;
    sim.log.write_csv(create_file(&out.join("events.csv"))?)?;
    if !cfg.simulation.skip_traces {
        sim.write_traces_csv(create_file(&out.join("wind_traces.csv"))?)?;
    }

    let grid = alarm_timestamp_grid(&sim.log, &cfg.layout);
    let groups = match cluster_alarm_grid(&grid, seed) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("alarm grid not clustered: {e}");
            None
        }
    };
    let mut w = csv::Writer::from_writer(create_file(&out.join("alarm_grid.csv"))?);
    w.write_record(["row", "column", "turbine", "first_alarm", "group"]).map_err(Error::from)?;
    for row in 1..=cfg.layout.rows {
        for column in 1..=cfg.layout.columns {
            let id = TurbineId::new(row, column);
            let alarm = grid.get(row, column).map(|t| t.to_string()).unwrap_or_default();
            let group = groups
                .as_ref()
                .and_then(|g| g.get(row, column))
                .map(|l| l.to_string())
                .unwrap_or_default();
            w.write_record([row.to_string(), column.to_string(), id.to_string(), alarm, group])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(|e| Error::io(out.join("alarm_grid.csv"), e))?;

    let per_row = count_emergency_stops(&sim.log, &cfg.layout);
    let summary = SimulationSummary {
        seed,
        policy: policy_path.map(|p| p.display().to_string()),
        detection: sim.detection,
        row_arrivals: sim.arrivals.clone(),
        alarms: sim.log.alarms.len(),
        planned_shutdowns: sim.log.shutdowns.iter().filter(|s| s.kind == ShutdownKind::Planned).count(),
        emergency_stops: per_row.iter().sum(),
        emergency_stops_per_row: per_row,
    };
    write_file(&out.join("simulation.json"), to_json(&summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub penalty: f64,
    pub policy_file: String,
    pub curve_file: String,
    pub theta: BTreeMap<u32, f64>,
    pub cumulative: BTreeMap<u32, f64>,
    pub final_mean_return: f64,
    pub converged: bool,
    pub undetected_episodes: usize,
    /// Mean-policy return on the seed-0 storm.
    pub evaluated_return: f64,
    pub oracle_cumulative: Option<BTreeMap<u32, f64>>,
    pub oracle_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub iterations: usize,
    pub runs: Vec<TrainingRun>,
}

pub fn penalty_tag(p: f64) -> String {
    format!("p{p}")
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let mut runs = Vec::new();
    for &penalty in &cfg.reward.penalties {
        let reward = cfg.reward.config(penalty);
        let outcome = train(&cfg.layout, &cfg.scenario, &cfg.detection, &reward, &cfg.training)?;
        let tag = penalty_tag(penalty);
        let policy_file = format!("policy_{tag}.json");
        let curve_file = format!("learning_curve_{tag}.csv");
        write_file(&out.join(&policy_file), outcome.policy.to_json()? + "\n")?;
        outcome.write_curve_csv(create_file(&out.join(&curve_file))?)?;
        let oracle = grid_search_oracle(&cfg.layout, &cfg.scenario, &cfg.detection, &reward, 1.0).ok();
        runs.push(TrainingRun {
            penalty,
            policy_file,
            curve_file,
            theta: outcome.policy.theta.clone(),
            cumulative: outcome.policy.cumulative_delays(),
            final_mean_return: outcome.final_mean_return,
            converged: outcome.converged,
            undetected_episodes: outcome.undetected,
            evaluated_return: evaluate_policy(&cfg.layout, &cfg.scenario, &cfg.detection, &reward, &outcome.policy)
                .unwrap_or(0.0),
            oracle_cumulative: oracle.as_ref().map(|o| o.cumulative.clone()),
            oracle_return: oracle.as_ref().map(|o| o.best_return),
        });
    }
    let summary = TrainingSummary {
        seed: cfg.training.seed,
        iterations: cfg.training.iterations,
        runs,
    };
    write_file(&out.join("training.json"), to_json(&summary))
}
