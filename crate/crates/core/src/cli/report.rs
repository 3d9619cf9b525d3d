use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::commands::{ClusterSummary, ProfileReport, SimulationSummary, TrainingSummary};
use super::{read_file, read_json, write_file, CliError, CliResult, RunConfig};
use crate::error::Error;
use crate::layout::TurbineId;

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("missing artifact {}", path.display())))
    }
}

fn csv_rows(path: &Path) -> CliResult<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(bad)?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(bad)?;
    Ok((header, rows))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(Error::from)?;
    for row in rows {
        w.write_record(row).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, bytes)
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::input(format!("{}: no column {name}", path.display())))
}

/// Read-only aggregation of whatever artifacts exist in `out`.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let zones_json = out.join("zones.json");
    let profiles_json = out.join("profiles.json");
    let sim_json = out.join("simulation.json");
    let training_json = out.join("training.json");
    if ![&zones_json, &profiles_json, &sim_json, &training_json].iter().any(|p| p.is_file()) {
        return Err(CliError::input(format!("no artifacts found in {}", out.display())));
    }
    let dir = out.join("report");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut md = String::from("# Wind farm run report\n");
    let mut produced = Vec::new();

    if zones_json.is_file() {
        let summary: ClusterSummary = read_json(&zones_json)?;
        let assignment = out.join("assignment.csv");
        require(&assignment)?;
        let (header, rows) = csv_rows(&assignment)?;
        let (ti, zi, pi, ri) = (
            column(&header, "turbine", &assignment)?,
            column(&header, "zone", &assignment)?,
            column(&header, "power_norm", &assignment)?,
            column(&header, "rotor_norm", &assignment)?,
        );
        let scatter: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r[ti].to_string(), r[pi].to_string(), r[ri].to_string(), r[zi].to_string()])
            .collect();
        write_csv(&dir.join("zone_scatter.csv"), &["turbine", "power_norm", "rotor_norm", "zone"], &scatter)?;
        let labels: BTreeMap<String, String> = rows.iter().map(|r| (r[ti].to_string(), r[zi].to_string())).collect();
        let mut grid = Vec::new();
        for row in 1..=cfg.layout.rows {
            for col in 1..=cfg.layout.columns {
                let id = TurbineId::new(row, col).to_string();
                let zone = labels.get(&id).cloned().unwrap_or_default();
                grid.push(vec![row.to_string(), col.to_string(), id, zone]);
            }
        }
        write_csv(&dir.join("farm_grid_labels.csv"), &["row", "column", "turbine", "zone"], &grid)?;
        produced.extend(["zone_scatter.csv", "farm_grid_labels.csv"]);

        let w = &summary.farm_wind;
        let _ = writeln!(md, "\n## Operational zones\n");
        let _ = writeln!(
            md,
            "{} turbines clustered on the {} s window starting at {}; farm wind {:.1}° at {:.1} m/s{}.",
            summary.turbines,
            summary.window_s,
            summary.window_start,
            w.vector.direction,
            w.vector.speed,
            if w.direction_defined { "" } else { " (direction undefined)" }
        );
        if let Some(s) = &summary.steady_state {
            let _ = writeln!(
                md,
                "Steady state: {} (extremes {:.1} m/s at {:.1}° and {:.1} m/s at {:.1}°).",
                if s.steady { "yes" } else { "no" },
                s.min.speed,
                s.min.direction,
                s.max.speed,
                s.max.direction
            );
        }
        let m = &summary.model;
        let _ = writeln!(
            md,
            "\nMixture: {} effective of {} components, converged {} after {} iterations.\n",
            summary.effective_components.len(),
            m.truncation,
            m.converged,
            m.iterations_run
        );
        let _ = writeln!(md, "| zone | turbines | weight | power mean | rotor mean |\n|---|---|---|---|---|");
        for (zone, members) in &summary.zones {
            let (weight, mean) = m
                .components
                .get(*zone)
                .map(|c| (format!("{:.3}", c.weight), c.mean.clone()))
                .unwrap_or_else(|| ("sub".into(), vec![f64::NAN, f64::NAN]));
            let _ = writeln!(
                md,
                "| {zone} | {} | {weight} | {:.3} | {:.3} |",
                members.len(),
                mean[0],
                mean.get(1).copied().unwrap_or(f64::NAN)
            );
        }
        for s in &summary.subclusters {
            let _ = writeln!(
                md,
                "\nZone {} refit: {} effective subcomponents, {}.",
                s.parent_zone,
                s.effective_components,
                if s.adopted { "split adopted" } else { "kept as is" }
            );
        }
    }

    if profiles_json.is_file() {
        let report: ProfileReport = read_json(&profiles_json)?;
        let csv_path = out.join("profiles.csv");
        require(&csv_path)?;
        let (header, rows) = csv_rows(&csv_path)?;
        let h: Vec<&str> = header.iter().collect();
        let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(str::to_string).collect()).collect();
        write_csv(&dir.join("load_profiles.csv"), &h, &rows)?;
        produced.push("load_profiles.csv");

        let _ = writeln!(md, "\n## Load profiles\n");
        let _ = writeln!(md, "| zone | samples | power mean | power std | rotor mean (rpm) | rotor std |\n|---|---|---|---|---|---|");
        for p in &report.profiles {
            let _ = writeln!(
                md,
                "| {} | {} | {:.3} | {:.3} | {:.2} | {:.2} |",
                p.zone, p.samples, p.power_mean, p.power_std, p.rotor_mean, p.rotor_std
            );
        }
        if !report.overlaps.is_empty() {
            let _ = writeln!(md, "\nLDD overlap coefficients:\n");
            for o in &report.overlaps {
                let _ = writeln!(md, "- zones {} and {}: {:.3}", o.zone_a, o.zone_b, o.ldd);
            }
        }
        let _ = writeln!(md, "\nShapiro-Wilk at level {}:\n", report.normality_level);
        for n in &report.normality {
            let verdict = match (n.w, n.p_value) {
                (Some(w), Some(p)) => format!("W = {w:.4}, p = {p:.4}, {}", if n.pass { "pass" } else { "reject" }),
                _ => format!("not tested: {}", n.note.as_deref().unwrap_or("")),
            };
            let _ = writeln!(md, "- zone {} {:?} (n = {}): {verdict}", n.zone, n.parameter, n.n);
        }
    }

    if sim_json.is_file() {
        let summary: SimulationSummary = read_json(&sim_json)?;
        let grid_path = out.join("alarm_grid.csv");
        require(&grid_path)?;
        let (header, rows) = csv_rows(&grid_path)?;
        let h: Vec<&str> = header.iter().collect();
        let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(str::to_string).collect()).collect();
        write_csv(&dir.join("alarm_grid.csv"), &h, &rows)?;
        produced.push("alarm_grid.csv");

        let _ = writeln!(md, "\n## Storm simulation\n");
        let _ = writeln!(
            md,
            "Seed {}, policy {}. {} alarms, {} planned shutdowns, {} emergency stops; storm detected at {}.\n",
            summary.seed,
            summary.policy.as_deref().unwrap_or("none"),
            summary.alarms,
            summary.planned_shutdowns,
            summary.emergency_stops,
            summary.detection.map_or("never".to_string(), |t| format!("t = {t} s"))
        );
        let _ = writeln!(md, "| row | arrival (s) | emergency stops |\n|---|---|---|");
        for (i, (a, e)) in summary.row_arrivals.iter().zip(&summary.emergency_stops_per_row).enumerate() {
            let _ = writeln!(md, "| {} | {a:.1} | {e} |", i + 1);
        }
    }

    if training_json.is_file() {
        let summary: TrainingSummary = read_json(&training_json)?;
        let mut rows = Vec::new();
        for run in &summary.runs {
            require(&out.join(&run.policy_file))?;
            for (row, theta) in &run.theta {
                let oracle = run
                    .oracle_cumulative
                    .as_ref()
                    .and_then(|o| o.get(row))
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                rows.push(vec![
                    run.penalty.to_string(),
                    row.to_string(),
                    theta.to_string(),
                    run.cumulative[row].to_string(),
                    oracle,
                ]);
            }
        }
        write_csv(
            &dir.join("learned_delays.csv"),
            &["penalty", "row", "theta", "cumulative_shutdown", "oracle_cumulative"],
            &rows,
        )?;
        produced.push("learned_delays.csv");

        let _ = writeln!(md, "\n## Shutdown policies\n");
        let _ = writeln!(md, "{} iterations, seed {}.\n", summary.iterations, summary.seed);
        let _ = writeln!(md, "| P | final mean return | mean-policy return | oracle return | converged |\n|---|---|---|---|---|");
        for run in &summary.runs {
            let _ = writeln!(
                md,
                "| {} | {:.1} | {:.1} | {} | {} |",
                run.penalty,
                run.final_mean_return,
                run.evaluated_return,
                run.oracle_return.map_or("n/a".to_string(), |r| format!("{r:.1}")),
                run.converged
            );
        }
        let _ = writeln!(md, "\nCumulative shutdown time after detection (s):\n");
        let mut head = String::from("| row |");
        let mut rule = String::from("|---|");
        for run in &summary.runs {
            let _ = write!(head, " P = {} |", run.penalty);
            rule.push_str("---|");
        }
        let _ = writeln!(md, "{head}\n{rule}");
        if let Some(first) = summary.runs.first() {
            for row in first.cumulative.keys() {
                let mut line = format!("| {row} |");
                for run in &summary.runs {
                    let _ = write!(line, " {:.1} |", run.cumulative.get(row).copied().unwrap_or(f64::NAN));
                }
                let _ = writeln!(md, "{line}");
            }
        }
    }

    let _ = writeln!(md, "\n## Files\n");
    for f in &produced {
        let _ = writeln!(md, "- report/{f}");
    }
    write_file(&dir.join("report.md"), md)
}
