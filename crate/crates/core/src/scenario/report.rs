use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::Mode;
use super::run::{RunResult, ScenarioResult};
use crate::error::{Error, Result};

pub const UNIT_TABLE_HEADER: &str = "type,obstacles,max_speed,one_robot_mean_velocity,one_robot_distance,two_robot_mean_velocity,two_robot_distance,three_robot_mean_velocity,three_robot_distance";
pub const FLEET_TABLE_HEADER: &str = "pedestrians,robots,max_speed,min_distance,path_length,average_velocity,completed";
pub const RUNS_HEADER: &str = "scenario,rep,seed,robot,mean_velocity,min_distance,path_length,success,collision_count,contact_ticks";

fn kind_rank(kind: &str) -> u8 {
    match kind {
        "static" => 0,
        "dynamic" => 1,
        "multirobot" => 2,
        _ => 3,
    }
}

fn speed_key(s: f64) -> i64 {
    (s * 1000.0).round() as i64
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        "inf".into()
    }
}

fn verbose_header(base: &str, from: usize) -> String {
    let cols: Vec<&str> = base.split(',').collect();
    let mut out: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
    for c in &cols[from..] {
        out.push(format!("{c}_std"));
    }
    out.join(",")
}

/// Rep-averaged unit-task table: one row per (type, obstacle count, max
/// speed), one column pair per robot count.
pub fn unit_table(results: &[ScenarioResult], verbose: bool) -> String {
    type Cells = BTreeMap<usize, (f64, f64, f64, f64)>;
    let mut rows: BTreeMap<(u8, String, usize, i64), Cells> = BTreeMap::new();
    for r in results.iter().filter(|r| r.config.mode == Mode::UnitTask) {
        let n = r.config.robots.len();
        if !(1..=3).contains(&n) {
            continue;
        }
        let kind = r.config.kind_label();
        let key = (kind_rank(&kind), kind, r.config.obstacle_count(), speed_key(r.config.max_speed));
        rows.entry(key).or_default().insert(
            n,
            (
                r.mean_of(RunResult::mean_velocity),
                r.mean_of(RunResult::min_distance),
                r.std_of(RunResult::mean_velocity),
                r.std_of(RunResult::min_distance),
            ),
        );
    }
    let mut out = if verbose { verbose_header(UNIT_TABLE_HEADER, 3) } else { UNIT_TABLE_HEADER.to_string() };
    out.push('\n');
    for ((_, kind, obstacles, speed), cells) in rows {
        let mut line = format!("{kind},{obstacles},{:.1}", speed as f64 / 1000.0);
        let mut stds = String::new();
        for n in 1..=3 {
            match cells.get(&n) {
                Some(&(v, d, vs, ds)) => {
                    write!(line, ",{},{}", num(v), num(d)).expect("string write");
                    write!(stds, ",{},{}", num(vs), num(ds)).expect("string write");
                }
                None => {
                    line.push_str(",,");
                    stds.push_str(",,");
                }
            }
        }
        if verbose {
            line.push_str(&stds);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Rep-averaged pick-and-place table.
pub fn fleet_table(results: &[ScenarioResult], verbose: bool) -> String {
    let mut out = if verbose { verbose_header(FLEET_TABLE_HEADER, 3) } else { FLEET_TABLE_HEADER.to_string() };
    out.push('\n');
    let mut rows: Vec<&ScenarioResult> = results.iter().filter(|r| r.config.mode == Mode::PickAndPlace).collect();
    rows.sort_by_key(|r| (r.config.robots.len(), speed_key(r.config.max_speed), r.config.pedestrians.len()));
    for r in rows {
        let completed = r.runs.iter().filter(|x| x.completed).count() as f64 / r.runs.len().max(1) as f64;
        let mut line = format!(
            "{},{},{:.1},{},{},{},{}",
            r.config.pedestrians.len(),
            r.config.robots.len(),
            r.config.max_speed,
            num(r.mean_of(RunResult::min_distance)),
            num(r.mean_of(RunResult::path_length)),
            num(r.mean_of(RunResult::mean_velocity)),
            num(completed),
        );
        if verbose {
            write!(
                line,
                ",{},{},{},",
                num(r.std_of(RunResult::min_distance)),
                num(r.std_of(RunResult::path_length)),
                num(r.std_of(RunResult::mean_velocity)),
            )
            .expect("string write");
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Per-run, per-robot metrics.
pub fn runs_table(results: &[ScenarioResult]) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for r in results {
        for run in &r.runs {
            for (id, m) in &run.metrics {
                writeln!(
                    out,
                    "{},{},{},{id},{},{},{},{},{},{}",
                    r.config.name,
                    run.rep,
                    run.seed,
                    num(m.mean_velocity),
                    num(m.min_distance),
                    num(m.path_length),
                    m.success,
                    m.collision_count,
                    m.contact_ticks
                )
                .expect("string write");
            }
        }
    }
    out
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the tables, per-run tick logs, event logs and trajectory files
/// under `dir`; returns every written path in a fixed order.
pub fn emit_report(results: &[ScenarioResult], dir: &Path, verbose: bool) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::invalid("no scenario results to report"));
    }
    let traj = dir.join("trajectories");
    let logs = dir.join("logs");
    for d in [dir, &traj, &logs] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut written = Vec::new();
    write(dir.join("unit_tasks.csv"), &unit_table(results, verbose), &mut written)?;
    write(dir.join("pick_and_place.csv"), &fleet_table(results, verbose), &mut written)?;
    write(dir.join("runs.csv"), &runs_table(results), &mut written)?;
    for r in results {
        for run in &r.runs {
            let stem = format!("{}-rep{:02}", r.config.name, run.rep);
            write(traj.join(format!("{stem}.csv")), &run.log.trajectory_csv(), &mut written)?;
            write(logs.join(format!("{stem}.csv")), &run.log.to_csv(), &mut written)?;
            let mut events = String::from("time,robot,event,detail\n");
            for e in &run.log.events {
                events.push_str(e);
                events.push('\n');
            }
            write(logs.join(format!("{stem}-events.csv")), &events, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::scenario::config::{RobotSpec, ScenarioConfig};
    use crate::scenario::metrics::{Metrics, TickLog};

    fn result(robots: usize, speed: f64, reps: &[(f64, f64)]) -> ScenarioResult {
        let spec = |i: usize| RobotSpec {
            id: format!("r{i}"),
            platform: "freight".into(),
            start: [0.0, i as f64, 0.0],
            goal: Some(Point::new(5.0, i as f64)),
            home: None,
            delay: None,
        };
        let config = ScenarioConfig {
            name: format!("s{robots}-{speed}"),
            kind: None,
            mode: Mode::UnitTask,
            max_speed: speed,
            repetitions: reps.len(),
            seed: 0,
            noise_sigma: 0.0,
            delay_compensation: true,
            time_budget: None,
            goal_tolerance: 0.3,
            controller: Default::default(),
            start_jitter: 0.0,
            pedestrian_time_jitter: 0.0,
            robots: (0..robots).map(spec).collect(),
            obstacles: vec![Point::new(2.0, 0.0), Point::new(3.0, 1.0)],
            pedestrians: vec![],
            map: None,
            tasks: vec![],
        };
        let runs = reps
            .iter()
            .enumerate()
            .map(|(rep, &(v, d))| {
                let metrics = (0..robots)
                    .map(|i| {
                        (
                            format!("r{i}"),
                            Metrics {
                                mean_velocity: v,
                                min_distance: d,
                                path_length: 5.0,
                                success: true,
                                collision_count: 0,
                                contact_ticks: 0,
                                duration: Some(10.0),
                            },
                        )
                    })
                    .collect();
                RunResult { rep, seed: rep as u64, log: TickLog { dt: 0.1, ..Default::default() }, metrics, completed: true }
            })
            .collect();
        ScenarioResult { config, runs }
    }

    #[test]
    fn ten_reps_make_one_averaged_row() {
        let reps: Vec<(f64, f64)> = (0..10).map(|i| (0.4 + 0.01 * i as f64, 0.8 + 0.02 * i as f64)).collect();
        let table = unit_table(&[result(1, 0.5, &reps)], false);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], UNIT_TABLE_HEADER);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "static,2,0.5,0.445,0.890,,,,");
    }

    #[test]
    fn robot_counts_share_a_row() {
        let t = unit_table(&[result(2, 1.0, &[(0.9, 0.8)]), result(1, 1.0, &[(1.0, 0.9)]), result(1, 0.5, &[(0.5, 1.0)])], false);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1], "static,2,0.5,0.500,1.000,,,,");
        assert_eq!(lines[2], "static,2,1.0,1.000,0.900,0.900,0.800,,");
        let v = unit_table(&[result(1, 0.5, &[(0.5, 1.0), (0.7, 1.0)])], true);
        assert!(v.lines().next().unwrap().ends_with("three_robot_distance_std"));
        assert_eq!(v.lines().nth(1).unwrap(), "static,2,0.5,0.600,1.000,,,,,0.100,0.000,,,,");
    }

    #[test]
    fn report_is_a_pure_function() {
        let rs = [result(1, 0.5, &[(0.5, 1.0)])];
        assert_eq!(unit_table(&rs, true), unit_table(&rs, true));
        assert_eq!(runs_table(&rs), runs_table(&rs));
        let dir = std::env::temp_dir().join(format!("safenav-report-{}", std::process::id()));
        let a = emit_report(&rs, &dir, false).unwrap();
        let first: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let b = emit_report(&rs, &dir, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(first, b.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(emit_report(&[], &dir, false).is_err());
    }
}
