use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PedestrianEntry, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::world::{candidate_set, Control, PedestrianTrack, PlatformParams, RobotState, WorldState, DT};

/// Axis-aligned rectangle the data collection happens in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Point,
    pub max: Point,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            min: Point::new(-6.0, -6.0),
            max: Point::new(6.0, 6.0),
        }
    }
}

impl Arena {
    pub fn center(&self) -> Point {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Point, margin: f64) -> bool {
        p.x >= self.min.x + margin
            && p.x <= self.max.x - margin
            && p.y >= self.min.y + margin
            && p.y <= self.max.y - margin
    }

    pub fn sample(&self, rng: &mut impl Rng, margin: f64) -> Point {
        Point::new(
            rng.random_range(self.min.x + margin..=self.max.x - margin),
            rng.random_range(self.min.y + margin..=self.max.y - margin),
        )
    }

    fn validate(&self, margin: f64) -> Result<()> {
        if !(self.max.x - self.min.x > 2.0 * margin && self.max.y - self.min.y > 2.0 * margin) {
            return Err(Error::invalid(format!("arena {self:?} is too small")));
        }
        Ok(())
    }
}

/// Scripted stand-in for a human driving the robot around with a joystick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub arena: Arena,
    /// Dwell time range on each chosen command, seconds.
    pub dwell: (f64, f64),
    /// Distance from the walls at which the driver starts turning back.
    pub wall_margin: f64,
    /// Std-dev of velocity noise injected by the simulator.
    pub velocity_noise: f64,
    /// Top speed of the commands sampled.
    pub max_speed: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            arena: Arena::default(),
            dwell: (0.5, 3.0),
            wall_margin: 1.0,
            velocity_noise: 0.01,
            max_speed: 1.5,
        }
    }
}

fn tick_count(duration: f64) -> Result<usize> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    Ok((duration / DT).round() as usize)
}

/// Candidate command that swings the heading toward the arena center at
/// a crawl.
fn recovery_command(state: &RobotState, center: Point, candidates: &[Control]) -> Control {
    let to_center = center - state.position();
    let bearing = to_center.y.atan2(to_center.x);
    let err = crate::geometry::wrap_angle(bearing - state.theta);
    let wanted = 2.0 * err;
    let crawl = candidates
        .iter()
        .map(|c| c.u_v)
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|c| c.u_v == crawl)
        .min_by(|a, b| (a.u_omega - wanted).abs().total_cmp(&(b.u_omega - wanted).abs()))
        .copied()
        .unwrap_or(Control::STOP)
}

/// Records one robot driven by the scripted teleoperator for `duration`
/// seconds. Every entry carries the control that was actually executed
/// during the following tick, i.e. after the actuation delay.
pub fn generate_robot_trajectories(
    platform: &PlatformParams,
    duration: f64,
    seed: u64,
    cfg: &TeleopConfig,
) -> Result<Trajectory> {
    if duration < 60.0 {
        return Err(Error::invalid(format!(
            "robot recordings must last at least 60 s, got {duration}"
        )));
    }
    let n = tick_count(duration)?;
    cfg.arena.validate(cfg.wall_margin)?;
    if !(cfg.dwell.0 > 0.0 && cfg.dwell.1 >= cfg.dwell.0) {
        return Err(Error::invalid(format!("bad dwell range {:?}", cfg.dwell)));
    }
    let mut params = platform.clone();
    params.max_speed = params.max_speed.min(cfg.max_speed);
    let candidates = candidate_set(params.max_speed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = cfg.arena.sample(&mut rng, cfg.wall_margin * 2.0);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut world = WorldState::new(DT).with_velocity_noise(cfg.velocity_noise, seed ^ 0x5eed)?;
    world.add_robot("r", RobotState::at_rest(start.x, start.y, heading), params.clone())?;

    let mut entries = Vec::with_capacity(n);
    let mut current = Control::STOP;
    let mut dwell_left = 0usize;
    let center = cfg.arena.center();
    for _ in 0..n {
        let state = world.robot("r").expect("robot exists").state;
        // Look ahead by the stopping distance plus the delay.
        let stop_d = state.v.abs() * (state.v.abs() / params.m_v + params.delay_h) + 0.5 * state.v.abs();
        let ahead = state.position() + Point::new(state.theta.cos(), state.theta.sin()) * stop_d;
        if !cfg.arena.contains(ahead, cfg.wall_margin) {
            current = recovery_command(&state, center, &candidates);
            dwell_left = 0;
        } else if dwell_left == 0 {
            current = candidates[rng.random_range(0..candidates.len())];
            let dwell = rng.random_range(cfg.dwell.0..=cfg.dwell.1);
            dwell_left = ((dwell / DT).round() as usize).max(1);
        } else {
            dwell_left -= 1;
        }
        let slot = world.robot("r").expect("robot exists");
        let applied = slot.pending().next().copied().unwrap_or(current);
        entries.push(TrajectoryEntry::new(world.time(), state, applied));
        world.step(&BTreeMap::from([("r".to_string(), current)]))?;
    }
    Ok(Trajectory {
        platform: platform.name.clone(),
        entries,
    })
}

/// Simulates `count` pedestrians wandering between random waypoints for
/// `duration` seconds, with a fresh speed from `speed_range` on every leg.
pub fn generate_pedestrian_tracks(
    count: usize,
    duration: f64,
    speed_range: (f64, f64),
    seed: u64,
    arena: &Arena,
) -> Result<Vec<Vec<PedestrianEntry>>> {
    let (lo, hi) = speed_range;
    if !(lo > 0.0 && hi >= lo && hi <= 2.5) {
        return Err(Error::invalid(format!(
            "pedestrian speed range must lie in (0, 2.5], got {speed_range:?}"
        )));
    }
    let n = tick_count(duration)?;
    arena.validate(0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = WorldState::new(DT);
    for k in 0..count {
        let mut waypoints = vec![arena.sample(&mut rng, 0.5)];
        let mut speeds = Vec::new();
        let mut walked = 0.0;
        while walked < duration + 1.0 {
            let p = arena.sample(&mut rng, 0.5);
            let last = *waypoints.last().expect("non-empty");
            if p.distance(last) < 1.0 {
                continue;
            }
            let speed = rng.random_range(lo..=hi);
            walked += p.distance(last) / speed;
            waypoints.push(p);
            speeds.push(speed);
        }
        world.add_pedestrian(format!("p{k:04}"), PedestrianTrack::new(waypoints, speeds)?)?;
    }
    let mut out: Vec<Vec<PedestrianEntry>> = vec![Vec::with_capacity(n); count];
    for _ in 0..n {
        let t = world.time();
        for (track, (_, p)) in out.iter_mut().zip(world.pedestrians()) {
            track.push(PedestrianEntry { t, x: p.x, y: p.y });
        }
        world.step(&BTreeMap::new())?;
    }
    Ok(out)
}
