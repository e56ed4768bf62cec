//! Discrete-time planar world: differential-drive robots with acceleration
//! limits and actuation delay, scripted pedestrians and static obstacles.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point};

/// Global simulation step in seconds.
pub const DT: f64 = 0.1;

/// Planar pose and velocities of a differential-drive robot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub const fn new(x: f64, y: f64, theta: f64, v: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            theta,
            v,
            omega,
        }
    }

    pub fn at_rest(x: f64, y: f64, theta: f64) -> Self {
        Self::new(x, y, theta, 0.0, 0.0)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Target linear and angular velocity command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub u_v: f64,
    pub u_omega: f64,
}

impl Control {
    pub const STOP: Control = Control::new(0.0, 0.0);

    pub const fn new(u_v: f64, u_omega: f64) -> Self {
        Self { u_v, u_omega }
    }
}

const LINEAR_05: [f64; 3] = [0.0, 0.3, 0.5];
const LINEAR_10: [f64; 4] = [0.0, 0.3, 0.5, 1.0];
const LINEAR_15: [f64; 5] = [0.0, 0.3, 0.5, 1.0, 1.5];
const ANGULAR_NARROW: [f64; 5] = [-0.8, -0.4, 0.0, 0.4, 0.8];
const ANGULAR_WIDE: [f64; 7] = [-1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2];

/// Discrete control candidates for a maximum-speed setting: the Cartesian
/// product of the linear and angular rows, linear-major.
///
/// Only the three settings 0.5, 1.0 and 1.5 m/s exist.
pub fn candidate_set(max_speed: f64) -> Result<Vec<Control>> {
    let (linear, angular): (&[f64], &[f64]) = match speed_setting(max_speed) {
        Some(0) => (&LINEAR_05, &ANGULAR_NARROW),
        Some(1) => (&LINEAR_10, &ANGULAR_WIDE),
        Some(_) => (&LINEAR_15, &ANGULAR_WIDE),
        None => {
            return Err(Error::invalid(format!(
                "no candidate set for max speed {max_speed} m/s (expected 0.5, 1.0 or 1.5)"
            )))
        }
    };
    Ok(linear
        .iter()
        .flat_map(|&v| angular.iter().map(move |&w| Control::new(v, w)))
        .collect())
}

fn speed_setting(max_speed: f64) -> Option<usize> {
    [0.5, 1.0, 1.5]
        .iter()
        .position(|s| (s - max_speed).abs() < 1e-9)
}

/// Per-platform actuation characteristics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformParams {
    pub name: String,
    /// Max linear acceleration, m/s^2.
    pub m_v: f64,
    /// Max angular acceleration, rad/s^2.
    pub m_omega: f64,
    /// Actuation delay in seconds; a multiple of [`DT`].
    pub delay_h: f64,
    pub max_speed: f64,
    pub max_omega: f64,
}

impl PlatformParams {
    pub fn freight() -> Self {
        Self::preset("freight", 2.15, 2.4, 0.1)
    }

    pub fn jackal() -> Self {
        Self::preset("jackal", 2.15, 2.4, 0.1)
    }

    pub fn megarover() -> Self {
        Self::preset("megarover", 0.6, 2.4, 0.2)
    }

    fn preset(name: &str, m_v: f64, m_omega: f64, delay_h: f64) -> Self {
        Self {
            name: name.to_string(),
            m_v,
            m_omega,
            delay_h,
            max_speed: 1.5,
            max_omega: 1.2,
        }
    }

    /// Looks up one of the built-in platforms by (case-insensitive) name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "freight" => Ok(Self::freight()),
            "jackal" => Ok(Self::jackal()),
            "megarover" => Ok(Self::megarover()),
            other => Err(Error::invalid(format!("unknown platform `{other}`"))),
        }
    }

    pub fn with_max_speed(mut self, max_speed: f64) -> Self {
        self.max_speed = max_speed;
        self
    }

    pub fn with_delay(mut self, delay_h: f64) -> Self {
        self.delay_h = delay_h;
        self
    }

    /// Delay expressed in whole ticks of `dt`.
    pub fn delay_steps(&self, dt: f64) -> Result<usize> {
        let k = self.delay_h / dt;
        if self.delay_h < 0.0 || (k - k.round()).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "delay {} s is not a multiple of dt = {dt}",
                self.delay_h
            )));
        }
        Ok(k.round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_v > 0.0 && self.m_omega > 0.0) {
            return Err(Error::invalid(format!(
                "platform `{}` needs positive acceleration limits",
                self.name
            )));
        }
        self.delay_steps(DT).map(|_| ())
    }
}

/// Unicycle kinematics with velocities that track their targets under a
/// symmetric per-step acceleration clamp.
pub fn apply_ground_truth_dynamics(
    state: &RobotState,
    control: &Control,
    params: &PlatformParams,
    dt: f64,
) -> RobotState {
    let dv = (control.u_v - state.v).clamp(-params.m_v * dt, params.m_v * dt);
    let dw = (control.u_omega - state.omega).clamp(-params.m_omega * dt, params.m_omega * dt);
    RobotState {
        x: state.x + state.theta.cos() * state.v * dt,
        y: state.y + state.theta.sin() * state.v * dt,
        theta: wrap_angle(state.theta + state.omega * dt),
        v: (state.v + dv).clamp(-params.max_speed, params.max_speed),
        omega: (state.omega + dw).clamp(-params.max_omega, params.max_omega),
    }
}

/// Scripted pedestrian path: waypoints walked in order at a speed per
/// segment, holding at the first waypoint until `start_time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTrack {
    pub waypoints: Vec<Point>,
    pub speeds: Vec<f64>,
    #[serde(default)]
    pub start_time: f64,
}

impl PedestrianTrack {
    pub fn new(waypoints: Vec<Point>, speeds: Vec<f64>) -> Result<Self> {
        let track = Self {
            waypoints,
            speeds,
            start_time: 0.0,
        };
        track.validate()?;
        Ok(track)
    }

    /// Single speed for every segment.
    pub fn uniform(waypoints: Vec<Point>, speed: f64) -> Result<Self> {
        let n = waypoints.len().saturating_sub(1);
        Self::new(waypoints, vec![speed; n])
    }

    pub fn starting_at(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::invalid("pedestrian track has no waypoints"));
        }
        if self.speeds.len() + 1 != self.waypoints.len() {
            return Err(Error::invalid(format!(
                "pedestrian track with {} waypoints needs {} speeds, got {}",
                self.waypoints.len(),
                self.waypoints.len() - 1,
                self.speeds.len()
            )));
        }
        if self.waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("consecutive pedestrian waypoints coincide"));
        }
        if self.speeds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("pedestrian speeds must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Pedestrian {
    track: PedestrianTrack,
    position: Point,
    segment: usize,
    speed: f64,
}

impl Pedestrian {
    fn new(track: PedestrianTrack) -> Self {
        Self {
            position: track.waypoints[0],
            track,
            segment: 0,
            speed: 0.0,
        }
    }

    fn advance(&mut self, time: f64, dt: f64) {
        let before = self.position;
        let mut remaining = dt;
        if time < self.track.start_time {
            remaining -= (self.track.start_time - time).min(dt);
        }
        while remaining > 1e-12 && self.segment + 1 < self.track.waypoints.len() {
            let target = self.track.waypoints[self.segment + 1];
            let speed = self.track.speeds[self.segment];
            let gap = self.position.distance(target);
            let needed = gap / speed;
            if needed <= remaining {
                self.position = target;
                self.segment += 1;
                remaining -= needed;
            } else {
                let dir = (target - self.position) * (1.0 / gap);
                self.position = self.position + dir * (speed * remaining);
                remaining = 0.0;
            }
        }
        self.speed = self.position.distance(before) / dt;
    }
}

/// Robot in the world together with its actuation queue.
#[derive(Clone, Debug)]
pub struct RobotSlot {
    pub state: RobotState,
    pub params: PlatformParams,
    queue: VecDeque<Control>,
}

impl RobotSlot {
    /// Controls issued but not yet executed, oldest first.
    pub fn pending(&self) -> impl Iterator<Item = &Control> {
        self.queue.iter()
    }
}

#[derive(Clone, Debug)]
struct VelocityNoise {
    normal: Normal<f64>,
    rng: ChaCha8Rng,
}

/// What an entry of a rollout record describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Robot,
    Pedestrian,
    Obstacle,
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentClass::Robot => "robot",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Obstacle => "obstacle",
        })
    }
}

/// One line of an exported rollout: `time,id,kind,x,y,theta,v,omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub time: f64,
    pub id: String,
    pub kind: AgentClass,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl fmt::Display for AgentRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1},{},{},{},{},{},{},{}",
            self.time, self.id, self.kind, self.x, self.y, self.theta, self.v, self.omega
        )
    }
}

/// Snapshot of the whole simulated world.
#[derive(Clone, Debug)]
pub struct WorldState {
    tick: u64,
    dt: f64,
    robots: BTreeMap<String, RobotSlot>,
    pedestrians: BTreeMap<String, Pedestrian>,
    obstacles: Vec<Point>,
    noise: Option<VelocityNoise>,
}

impl Default for WorldState {
    fn default() -> Self {
        Self::new(DT)
    }
}

impl WorldState {
    pub fn new(dt: f64) -> Self {
        Self {
            tick: 0,
            dt,
            robots: BTreeMap::new(),
            pedestrians: BTreeMap::new(),
            obstacles: Vec::new(),
            noise: None,
        }
    }

    /// Zero-mean Gaussian noise on the post-step velocities, seeded.
    pub fn with_velocity_noise(mut self, sigma: f64, seed: u64) -> Result<Self> {
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
            self.noise = Some(VelocityNoise {
                normal,
                rng: ChaCha8Rng::seed_from_u64(seed),
            });
        } else {
            self.noise = None;
        }
        Ok(self)
    }

    pub fn add_robot(
        &mut self,
        id: impl Into<String>,
        state: RobotState,
        params: PlatformParams,
    ) -> Result<()> {
        params.validate()?;
        let k = params.delay_steps(self.dt)?;
        let id = id.into();
        if self.robots.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate robot id `{id}`")));
        }
        self.robots.insert(
            id,
            RobotSlot {
                state,
                params,
                queue: std::iter::repeat_n(Control::STOP, k).collect(),
            },
        );
        Ok(())
    }

    pub fn add_pedestrian(&mut self, id: impl Into<String>, track: PedestrianTrack) -> Result<()> {
        track.validate()?;
        self.pedestrians.insert(id.into(), Pedestrian::new(track));
        Ok(())
    }

    pub fn add_obstacle(&mut self, p: Point) {
        self.obstacles.push(p);
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn robot(&self, id: &str) -> Option<&RobotSlot> {
        self.robots.get(id)
    }

    pub fn robots(&self) -> impl Iterator<Item = (&String, &RobotSlot)> {
        self.robots.iter()
    }

    pub fn robot_ids(&self) -> impl Iterator<Item = &String> {
        self.robots.keys()
    }

    pub fn pedestrians(&self) -> impl Iterator<Item = (&String, Point)> {
        self.pedestrians.iter().map(|(id, p)| (id, p.position))
    }

    pub fn obstacles(&self) -> &[Point] {
        &self.obstacles
    }

    /// Advances one tick. Each command joins its robot's queue and the oldest
    /// queued command is executed. Robots without a command repeat the last
    /// one they issued.
    pub fn step(&mut self, commands: &BTreeMap<String, Control>) -> Result<()> {
        if let Some(id) = commands.keys().find(|id| !self.robots.contains_key(*id)) {
            return Err(Error::UnknownRobot(id.clone()));
        }
        let dt = self.dt;
        for (id, slot) in self.robots.iter_mut() {
            let issued = match commands.get(id) {
                Some(c) => *c,
                None => slot.queue.back().copied().unwrap_or(Control::STOP),
            };
            slot.queue.push_back(issued);
            let applied = slot.queue.pop_front().unwrap_or(issued);
            let mut next = apply_ground_truth_dynamics(&slot.state, &applied, &slot.params, dt);
            if let Some(noise) = self.noise.as_mut() {
                next.v = (next.v + noise.normal.sample(&mut noise.rng))
                    .clamp(-slot.params.max_speed, slot.params.max_speed);
                next.omega = (next.omega + noise.normal.sample(&mut noise.rng))
                    .clamp(-slot.params.max_omega, slot.params.max_omega);
            }
            slot.state = next;
        }
        let time = self.time();
        for ped in self.pedestrians.values_mut() {
            ped.advance(time, dt);
        }
        self.tick += 1;
        Ok(())
    }

    /// Distance from a robot to its nearest other robot, pedestrian or
    /// obstacle; `+inf` when nothing else is in the world.
    pub fn min_separation(&self, robot_id: &str) -> Result<f64> {
        let me = self
            .robots
            .get(robot_id)
            .ok_or_else(|| Error::UnknownRobot(robot_id.to_string()))?
            .state
            .position();
        let others = self
            .robots
            .iter()
            .filter(|(id, _)| id.as_str() != robot_id)
            .map(|(_, s)| s.state.position())
            .chain(self.pedestrians.values().map(|p| p.position))
            .chain(self.obstacles.iter().copied());
        Ok(others.map(|p| me.distance(p)).fold(f64::INFINITY, f64::min))
    }

    /// Line-per-agent records for the current tick: robots, then
    /// pedestrians, then obstacles.
    pub fn records(&self) -> Vec<AgentRecord> {
        let time = self.time();
        let mut out = Vec::with_capacity(self.robots.len() + self.pedestrians.len());
        for (id, slot) in &self.robots {
            let s = slot.state;
            out.push(AgentRecord {
                time,
                id: id.clone(),
                kind: AgentClass::Robot,
                x: s.x,
                y: s.y,
                theta: s.theta,
                v: s.v,
                omega: s.omega,
            });
        }
        for (id, ped) in &self.pedestrians {
            out.push(AgentRecord {
                time,
                id: id.clone(),
                kind: AgentClass::Pedestrian,
                x: ped.position.x,
                y: ped.position.y,
                theta: 0.0,
                v: ped.speed,
                omega: 0.0,
            });
        }
        for (i, p) in self.obstacles.iter().enumerate() {
            out.push(AgentRecord {
                time,
                id: format!("obstacle{i}"),
                kind: AgentClass::Obstacle,
                x: p.x,
                y: p.y,
                theta: 0.0,
                v: 0.0,
                omega: 0.0,
            });
        }
        out
    }
}

/// Functional form of [`WorldState::step`].
pub fn step_world(world: &WorldState, commands: &BTreeMap<String, Control>) -> Result<WorldState> {
    let mut next = world.clone();
    next.step(commands)?;
    Ok(next)
}
