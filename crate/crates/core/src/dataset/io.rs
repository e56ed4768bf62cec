//! Plain-text record formats. Trajectory files hold one entry per line in
//! field order with `# trajectory <platform>` separators.

use std::fs;
use std::path::Path;

use super::features::{RawContext, Task};
use super::label::{Label, LabeledSample};
use super::{PedestrianEntry, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::world::RobotState;

fn parse_floats(line: &str, lineno: usize, what: &'static str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                what,
                line: lineno,
                message: format!("`{f}`: {e}"),
            })
        })
        .collect()
}

fn expect_len(v: &[f64], n: usize, lineno: usize, what: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Parse {
            what,
            line: lineno,
            message: format!("expected {n} fields, found {}", v.len()),
        });
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_trajectories(trajs: &[Trajectory]) -> String {
    let mut out = String::from("# t,x,y,theta,v,omega,u_v,u_omega\n");
    for t in trajs {
        out.push_str(&format!("# trajectory {}\n", t.platform));
        for e in &t.entries {
            out.push_str(&join(&[e.t, e.x, e.y, e.theta, e.v, e.omega, e.u_v, e.u_omega]));
            out.push('\n');
        }
    }
    out
}

pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    const WHAT: &str = "trajectory file";
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# trajectory") {
            out.push(Trajectory { platform: rest.trim().to_string(), entries: Vec::new() });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let f = parse_floats(line, i + 1, WHAT)?;
        expect_len(&f, 8, i + 1, WHAT)?;
        let Some(current) = out.last_mut() else {
            return Err(Error::Parse { what: WHAT, line: i + 1, message: "entry before any `# trajectory` header".into() });
        };
        current.entries.push(TrajectoryEntry {
            t: f[0], x: f[1], y: f[2], theta: f[3], v: f[4], omega: f[5], u_v: f[6], u_omega: f[7],
        });
    }
    Ok(out)
}

pub fn format_pedestrians(tracks: &[Vec<PedestrianEntry>]) -> String {
    let mut out = String::from("# t,x,y\n");
    for (k, tr) in tracks.iter().enumerate() {
        out.push_str(&format!("# pedestrian {k}\n"));
        for p in tr {
            out.push_str(&join(&[p.t, p.x, p.y]));
            out.push('\n');
        }
    }
    out
}

pub fn parse_pedestrians(text: &str) -> Result<Vec<Vec<PedestrianEntry>>> {
    const WHAT: &str = "pedestrian file";
    let mut out: Vec<Vec<PedestrianEntry>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with("# pedestrian") {
            out.push(Vec::new());
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = parse_floats(line, i + 1, WHAT)?;
        expect_len(&f, 3, i + 1, WHAT)?;
        let Some(current) = out.last_mut() else {
            return Err(Error::Parse { what: WHAT, line: i + 1, message: "entry before any `# pedestrian` header".into() });
        };
        current.push(PedestrianEntry { t: f[0], x: f[1], y: f[2] });
    }
    Ok(out)
}

fn context_fields(c: &RawContext) -> Vec<f64> {
    let r = c.robot();
    let mut v = vec![r.x, r.y, r.theta, r.v, r.omega];
    match c {
        RawContext::Static { obstacle, .. } => v.extend([obstacle.x, obstacle.y]),
        RawContext::Dynamic { history, .. } => v.extend(history.iter().flat_map(|p| [p.x, p.y])),
        RawContext::MultiRobot { other: o, .. } => v.extend([o.x, o.y, o.theta, o.v, o.omega]),
    }
    v
}

/// `task;label;platform;t;features;context`, comma-separated numbers.
pub fn format_labeled(samples: &[LabeledSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format!(
            "{};{};{};{};{};{}\n",
            s.context.task(),
            s.label,
            s.context.platform(),
            s.t,
            join(&s.features),
            join(&context_fields(&s.context)),
        ));
    }
    out
}

pub fn parse_labeled(text: &str) -> Result<Vec<LabeledSample>> {
    const WHAT: &str = "labeled set";
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let parts: Vec<&str> = line.split(';').collect();
        if parts.len() != 6 {
            return Err(Error::Parse { what: WHAT, line: lineno, message: format!("expected 6 fields, found {}", parts.len()) });
        }
        let bad = |m: String| Error::Parse { what: WHAT, line: lineno, message: m };
        let task: Task = parts[0].parse().map_err(|e: Error| bad(e.to_string()))?;
        let label: Label = parts[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let platform = parts[2].to_string();
        let t: f64 = parts[3].parse().map_err(|e| bad(format!("time: {e}")))?;
        let features = parse_floats(parts[4], lineno, WHAT)?;
        expect_len(&features, task.feature_dim(), lineno, WHAT)?;
        let c = parse_floats(parts[5], lineno, WHAT)?;
        let robot = RobotState::new(c[0], c[1], c[2], c[3], c[4]);
        let context = match task {
            Task::Static => {
                expect_len(&c, 7, lineno, WHAT)?;
                RawContext::Static { platform, robot, obstacle: Point::new(c[5], c[6]) }
            }
            Task::Dynamic => {
                expect_len(&c, 11, lineno, WHAT)?;
                RawContext::Dynamic {
                    platform,
                    robot,
                    history: [Point::new(c[5], c[6]), Point::new(c[7], c[8]), Point::new(c[9], c[10])],
                }
            }
            Task::MultiRobot => {
                expect_len(&c, 10, lineno, WHAT)?;
                RawContext::MultiRobot { platform, robot, other: RobotState::new(c[5], c[6], c[7], c[8], c[9]) }
            }
        };
        out.push(LabeledSample { t, features, label, context });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    write(path, format_trajectories(trajs))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    parse_trajectories(&read(path)?)
}

pub fn write_pedestrians(path: &Path, tracks: &[Vec<PedestrianEntry>]) -> Result<()> {
    write(path, format_pedestrians(tracks))
}

pub fn read_pedestrians(path: &Path) -> Result<Vec<Vec<PedestrianEntry>>> {
    parse_pedestrians(&read(path)?)
}

pub fn write_labeled(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    write(path, format_labeled(samples))
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledSample>> {
    parse_labeled(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dynamic_set, build_multirobot_set, build_static_set, generate_pedestrian_tracks, generate_robot_trajectories, Arena, BuildConfig, TeleopConfig};
    use crate::world::PlatformParams;

    #[test]
    fn trajectory_round_trip() {
        let a = generate_robot_trajectories(&PlatformParams::jackal(), 60.0, 1, &TeleopConfig::default()).unwrap();
        let b = generate_robot_trajectories(&PlatformParams::megarover(), 60.0, 2, &TeleopConfig::default()).unwrap();
        let trajs = vec![a, b];
        assert_eq!(parse_trajectories(&format_trajectories(&trajs)).unwrap(), trajs);
    }

    #[test]
    fn pedestrian_round_trip() {
        let p = generate_pedestrian_tracks(2, 20.0, (0.5, 1.0), 3, &Arena::default()).unwrap();
        assert_eq!(parse_pedestrians(&format_pedestrians(&p)).unwrap(), p);
    }

    #[test]
    fn labeled_round_trip_all_tasks() {
        let trajs = vec![generate_robot_trajectories(&PlatformParams::freight(), 60.0, 4, &TeleopConfig::default()).unwrap()];
        let peds = generate_pedestrian_tracks(1, 100.0, (0.5, 1.0), 3, &Arena::default()).unwrap();
        let cfg = BuildConfig { max_per_label: 50, ..BuildConfig::default() };
        for ds in [
            build_static_set(&trajs, &cfg).unwrap(),
            build_dynamic_set(&trajs, &peds, &cfg).unwrap(),
            build_multirobot_set(&trajs, &cfg).unwrap(),
        ] {
            assert_eq!(parse_labeled(&format_labeled(&ds.samples)).unwrap(), ds.samples);
        }
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = parse_trajectories("# trajectory freight\n0,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_trajectories("0,0,0,0,0,0,0,0\n").is_err());
        assert!(parse_labeled("static;maybe;freight;0;1,2,3,4,5;0,0,0,0,0,1,1\n").is_err());
    }
}
