use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{AgentClass, AgentRecord};

/// A tick below this displacement counts as stationary, meters.
pub const STATIONARY_STEP: f64 = 0.005;
/// Separation below which a tick counts as a collision.
pub const UNSAFE_RANGE: f64 = 0.7;
/// Hard floor for the safety check.
pub const CONTACT_RANGE: f64 = 0.5;

/// Full record of one rollout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickLog {
    pub dt: f64,
    /// One frame per tick, starting with the initial state.
    pub frames: Vec<Vec<AgentRecord>>,
    /// Time each robot reached its last goal, if it did.
    pub completions: BTreeMap<String, Option<f64>>,
    /// Line-per-event orchestrator log.
    pub events: Vec<String>,
    /// Candidates that survived the veto, per robot and decision tick.
    pub survivors: BTreeMap<String, Vec<usize>>,
}

impl TickLog {
    pub fn ticks(&self) -> usize {
        self.frames.len()
    }

    /// `time,id,kind,x,y,theta,v,omega`, one line per agent per tick.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,id,kind,x,y,theta,v,omega\n");
        for rec in self.frames.iter().flatten() {
            writeln!(out, "{rec}").expect("string write");
        }
        out
    }

    /// Plot data: `time,id,x,y`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("time,id,x,y\n");
        for r in self.frames.iter().flatten() {
            writeln!(out, "{:.1},{},{},{}", r.time, r.id, r.x, r.y).expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Path length over moving time, m/s.
    pub mean_velocity: f64,
    /// Closest approach to any other agent, meters; infinite when alone.
    pub min_distance: f64,
    pub path_length: f64,
    pub success: bool,
    /// Ticks closer than the unsafe range.
    pub collision_count: usize,
    /// Ticks closer than the hard floor.
    pub contact_ticks: usize,
    /// Completion time, seconds.
    pub duration: Option<f64>,
}

/// Metrics for one robot. Path length and moving time stop at the robot's
/// completion time; separation is checked over the whole log.
pub fn compute_metrics(log: &TickLog, robot_id: &str) -> Result<Metrics> {
    if log.frames.is_empty() {
        return Err(Error::invalid("empty tick log"));
    }
    let done = log.completions.get(robot_id).copied().flatten();
    let end = match done {
        Some(t) => ((t / log.dt).round() as usize).min(log.frames.len() - 1),
        None => log.frames.len() - 1,
    };
    let mut track = Vec::with_capacity(log.frames.len());
    let mut min_distance = f64::INFINITY;
    let (mut collisions, mut contacts) = (0, 0);
    for frame in &log.frames {
        let me = frame
            .iter()
            .find(|r| r.id == robot_id && r.kind == AgentClass::Robot)
            .ok_or_else(|| Error::UnknownRobot(robot_id.to_string()))?;
        track.push((me.x, me.y));
        let sep = frame
            .iter()
            .filter(|r| !(r.id == robot_id && r.kind == AgentClass::Robot))
            .map(|r| (r.x - me.x).hypot(r.y - me.y))
            .fold(f64::INFINITY, f64::min);
        min_distance = min_distance.min(sep);
        collisions += usize::from(sep < UNSAFE_RANGE);
        contacts += usize::from(sep < CONTACT_RANGE);
    }
    let (mut path, mut moving) = (0.0, 0usize);
    for w in track[..=end].windows(2) {
        let step = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        path += step;
        if step >= STATIONARY_STEP {
            moving += 1;
        }
    }
    let mean_velocity = if moving == 0 { 0.0 } else { path / (moving as f64 * log.dt) };
    Ok(Metrics {
        mean_velocity,
        min_distance,
        path_length: path,
        success: done.is_some(),
        collision_count: collisions,
        contact_ticks: contacts,
        duration: done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn record(t: f64, id: &str, kind: AgentClass, x: f64, y: f64) -> AgentRecord {
        AgentRecord { time: t, id: id.into(), kind, x, y, theta: 0.0, v: 0.0, omega: 0.0 }
    }

    fn log_of(path: &[(f64, f64)]) -> TickLog {
        let frames = path
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| vec![record(i as f64 * 0.1, "r", AgentClass::Robot, x, y)])
            .collect();
        TickLog { dt: 0.1, frames, ..Default::default() }
    }

    #[test]
    fn straight_line_at_constant_speed() {
        let pts: Vec<(f64, f64)> = (0..=50).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let m = compute_metrics(&log_of(&pts), "r").unwrap();
        assert!((m.path_length - 5.0).abs() < 1e-9);
        assert!((m.mean_velocity - 1.0).abs() < 1e-9);
        assert_eq!(m.min_distance, f64::INFINITY);
        assert!(!m.success);
    }

    #[test]
    fn stationary_ticks_are_excluded() {
        let moving: Vec<(f64, f64)> = (0..=50).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let mut padded = Vec::new();
        for &p in &moving {
            padded.push(p);
            padded.push(p);
        }
        let a = compute_metrics(&log_of(&moving), "r").unwrap();
        let b = compute_metrics(&log_of(&padded), "r").unwrap();
        assert!((a.mean_velocity - b.mean_velocity).abs() < 1e-9);
        assert!((a.path_length - b.path_length).abs() < 1e-9);
    }

    #[test]
    fn circle_circumference() {
        // One lap of radius 1 at 1 m/s.
        let n = (2.0 * PI / 0.1).round() as usize;
        let pts: Vec<(f64, f64)> = (0..=n).map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        }).collect();
        let m = compute_metrics(&log_of(&pts), "r").unwrap();
        assert!((m.path_length - 2.0 * PI).abs() / (2.0 * PI) < 0.02, "{}", m.path_length);
    }

    #[test]
    fn separation_and_completion() {
        let mut log = log_of(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0), (0.2, 0.0)]);
        let dists = [2.0, 0.6, 0.45, 1.0];
        for (frame, d) in log.frames.iter_mut().zip(dists) {
            let x = frame[0].x + d;
            frame.push(record(frame[0].time, "p", AgentClass::Pedestrian, x, 0.0));
        }
        log.completions.insert("r".into(), Some(0.1));
        let m = compute_metrics(&log, "r").unwrap();
        assert!((m.min_distance - 0.45).abs() < 1e-12);
        assert_eq!(m.collision_count, 2);
        assert_eq!(m.contact_ticks, 1);
        assert!(m.success);
        // Only the first step counts towards the path.
        assert!((m.path_length - 0.1).abs() < 1e-12);
        assert!(compute_metrics(&TickLog::default(), "r").is_err());
        assert!(compute_metrics(&log, "nobody").is_err());
    }

    #[test]
    fn csv_row_count() {
        let mut log = log_of(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)]);
        for f in log.frames.iter_mut() {
            f.push(record(f[0].time, "o", AgentClass::Obstacle, 3.0, 3.0));
        }
        assert_eq!(log.trajectory_csv().lines().count(), 1 + 3 * 2);
        assert_eq!(log.to_csv().lines().count(), 1 + 3 * 2);
    }
}
