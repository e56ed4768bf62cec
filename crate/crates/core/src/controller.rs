//! Decentralized safe controller: unroll the learned dynamics for every
//! candidate control, veto candidates any barrier rejects, then pick the
//! survivor with the best goal score.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cbf::BarrierModel;
use crate::dataset::{
    extrapolate_history, features_dynamic, features_multirobot, features_static, hold_velocity, Task,
};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::world::{candidate_set, Control, RobotState, DT};

/// What the controller knows about one surrounding agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    /// Positions at t - 2dt, t - dt and t.
    pub positions: [Point; 3],
    /// Platform name for robots registered with the fleet.
    pub declared: Option<String>,
    /// Reported pose and velocities, available for registered robots.
    pub state: Option<RobotState>,
}

impl AgentTrack {
    pub fn observed(id: impl Into<String>, positions: [Point; 3]) -> Self {
        Self { id: id.into(), positions, declared: None, state: None }
    }

    pub fn robot(id: impl Into<String>, platform: impl Into<String>, positions: [Point; 3], state: RobotState) -> Self {
        Self { id: id.into(), positions, declared: Some(platform.into()), state: Some(state) }
    }

    pub fn current(&self) -> Point {
        self.positions[2]
    }

    /// Mean speed over the two displacement intervals.
    pub fn mean_speed(&self, dt: f64) -> f64 {
        let p = &self.positions;
        (p[0].distance(p[1]) + p[1].distance(p[2])) / (2.0 * dt)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Static,
    Pedestrian,
    Robot(String),
}

impl AgentKind {
    pub fn task(&self) -> Task {
        match self {
            AgentKind::Static => Task::Static,
            AgentKind::Pedestrian => Task::Dynamic,
            AgentKind::Robot(_) => Task::MultiRobot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub max_speed: f64,
    pub horizon: usize,
    pub static_speed_threshold: f64,
    pub w_v: f64,
    pub w_g: f64,
    pub desired_speed: f64,
    /// Plan from the state at which the next command takes effect.
    pub delay_compensation: bool,
    /// Agents farther than this are not evaluated.
    pub sensing_radius: f64,
    pub fallback: Fallback,
    pub dt: f64,
}

/// What to do when every candidate is vetoed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Issue the stop control.
    Stop,
    /// Issue the candidate with the smallest accumulated barrier violation
    /// over the horizon, which is what lets a robot back out of a state
    /// where even standing still is predicted unsafe.
    #[default]
    LeastViolation,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            max_speed: 1.0,
            horizon: 20,
            static_speed_threshold: 0.05,
            w_v: 2.5,
            w_g: 1.0,
            desired_speed: 1.0,
            delay_compensation: true,
            sensing_radius: 5.0,
            fallback: Fallback::default(),
            dt: DT,
        }
    }
}

impl ControllerConfig {
    pub fn for_speed(max_speed: f64) -> Self {
        Self { max_speed, desired_speed: max_speed, ..Self::default() }
    }

    pub fn candidates(&self) -> Result<Vec<Control>> {
        candidate_set(self.max_speed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        self.candidates().map(|_| ())
    }
}

pub fn classify_agent(track: &AgentTrack, cfg: &ControllerConfig) -> AgentKind {
    if let Some(p) = &track.declared {
        return AgentKind::Robot(p.clone());
    }
    if track.mean_speed(cfg.dt) < cfg.static_speed_threshold {
        AgentKind::Static
    } else {
        AgentKind::Pedestrian
    }
}

/// Commands issued but not yet executed, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedQueue {
    controls: VecDeque<Control>,
}

impl PlannedQueue {
    /// A queue of `len` stop commands, matching a robot that starts at rest.
    pub fn new(len: usize) -> Self {
        Self { controls: std::iter::repeat_n(Control::STOP, len).collect() }
    }

    pub fn from_controls(controls: impl IntoIterator<Item = Control>) -> Self {
        Self { controls: controls.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Control> {
        self.controls.iter()
    }

    /// Queues `u` and returns the command that executes this tick.
    pub fn push(&mut self, u: Control) -> Control {
        self.controls.push_back(u);
        self.controls.pop_front().unwrap_or(u)
    }
}

/// State at which a command issued now starts executing.
pub fn plan_start_state(current: &RobotState, queue: &PlannedQueue, f: &DynamicsModel) -> RobotState {
    queue.iter().fold(*current, |s, u| f.predict_next(&s, u))
}

/// Barriers per task.
pub type BarrierSet = BTreeMap<Task, BarrierModel>;

/// Predicted position-history or state of an agent over the horizon.
enum AgentForecast {
    Static(Point),
    Pedestrian(Vec<[Point; 3]>),
    Robot(Vec<RobotState>),
}

fn robot_state_of(track: &AgentTrack, dt: f64) -> RobotState {
    track.state.unwrap_or_else(|| {
        let p = &track.positions;
        let d = p[2] - p[0];
        RobotState::new(p[2].x, p[2].y, d.y.atan2(d.x), d.norm() / (2.0 * dt), 0.0)
    })
}

fn forecast(track: &AgentTrack, kind: &AgentKind, horizon: usize, dt: f64) -> AgentForecast {
    match kind {
        AgentKind::Static => AgentForecast::Static(track.current()),
        AgentKind::Pedestrian => {
            let mut h = track.positions;
            AgentForecast::Pedestrian(
                (0..horizon)
                    .map(|_| {
                        h = extrapolate_history(&h);
                        h
                    })
                    .collect(),
            )
        }
        AgentKind::Robot(_) => {
            let mut s = robot_state_of(track, dt);
            AgentForecast::Robot(
                (0..horizon)
                    .map(|_| {
                        s = hold_velocity(&s, dt);
                        s
                    })
                    .collect(),
            )
        }
    }
}

/// Unrolled own states, `[candidate][step]`, steps 1..=horizon.
fn unroll(start: &RobotState, candidates: &[Control], f: &DynamicsModel, horizon: usize) -> Result<Vec<Vec<RobotState>>> {
    let mut states = vec![*start; candidates.len()];
    let mut out = vec![Vec::with_capacity(horizon); candidates.len()];
    for _ in 0..horizon {
        states = f.predict_batch(&states, candidates)?;
        for (o, s) in out.iter_mut().zip(&states) {
            o.push(*s);
        }
    }
    Ok(out)
}

/// Candidate indices that no nearby agent's barrier vetoes, in canonical
/// order, along with the unrolled trajectories.
pub fn filter_candidates(
    start: &RobotState,
    agents: &[AgentTrack],
    f: &DynamicsModel,
    barriers: &BarrierSet,
    cfg: &ControllerConfig,
) -> Result<(Vec<usize>, Vec<Vec<RobotState>>)> {
    filter_candidates_ahead(start, 0, agents, f, barriers, cfg)
}

/// Barrier values of one agent along the rollouts of the `subset`
/// candidates, `h` consecutive values per candidate.
#[allow(clippy::too_many_arguments)]
fn agent_values(
    track: &AgentTrack,
    rollouts: &[Vec<RobotState>],
    subset: &[usize],
    ahead: usize,
    barriers: &BarrierSet,
    cfg: &ControllerConfig,
) -> Result<Vec<f64>> {
    let h = cfg.horizon;
    let kind = classify_agent(track, cfg);
    let task = kind.task();
    let b = barriers.get(&task).ok_or_else(|| Error::MissingBarrier(task.as_str().to_string()))?;
    let fc = forecast(track, &kind, ahead + h, cfg.dt);
    let mut rows = Array2::zeros((subset.len() * h, task.feature_dim()));
    for (r, &k) in subset.iter().enumerate() {
        for step in 0..h {
            let me = &rollouts[k][step];
            let feats: Vec<f64> = match &fc {
                AgentForecast::Static(p) => features_static(me, *p).to_vec(),
                AgentForecast::Pedestrian(hist) => features_dynamic(me, &hist[ahead + step]).to_vec(),
                AgentForecast::Robot(states) => features_multirobot(me, &states[ahead + step]).to_vec(),
            };
            for (j, v) in feats.into_iter().enumerate() {
                rows[[r * h + step, j]] = v;
            }
        }
    }
    b.values(rows.view())
}

fn sensed<'a>(agents: &'a [AgentTrack], start: &RobotState, cfg: &ControllerConfig) -> impl Iterator<Item = &'a AgentTrack> {
    let (p, r) = (start.position(), cfg.sensing_radius);
    agents.iter().filter(move |t| t.current().distance(p) <= r)
}

/// As [`filter_candidates`] for a start state that lies `ahead` ticks in
/// the future: agent forecasts skip the same number of ticks so both sides
/// of every barrier evaluation refer to the same instant.
pub fn filter_candidates_ahead(
    start: &RobotState,
    ahead: usize,
    agents: &[AgentTrack],
    f: &DynamicsModel,
    barriers: &BarrierSet,
    cfg: &ControllerConfig,
) -> Result<(Vec<usize>, Vec<Vec<RobotState>>)> {
    let candidates = cfg.candidates()?;
    let h = cfg.horizon;
    let rollouts = unroll(start, &candidates, f, h)?;
    let mut alive = vec![true; candidates.len()];
    for track in sensed(agents, start, cfg) {
        let live: Vec<usize> = (0..candidates.len()).filter(|&k| alive[k]).collect();
        if live.is_empty() {
            break;
        }
        let values = agent_values(track, &rollouts, &live, ahead, barriers, cfg)?;
        for (r, &k) in live.iter().enumerate() {
            if values[r * h..(r + 1) * h].iter().any(|&v| v < 0.0) {
                alive[k] = false;
            }
        }
    }
    Ok(((0..candidates.len()).filter(|&k| alive[k]).collect(), rollouts))
}

/// Per candidate, the sum over the horizon of the most negative barrier
/// value among sensed agents (zero where all are non-negative).
pub fn violation_scores(
    rollouts: &[Vec<RobotState>],
    ahead: usize,
    start: &RobotState,
    agents: &[AgentTrack],
    barriers: &BarrierSet,
    cfg: &ControllerConfig,
) -> Result<Vec<f64>> {
    let h = cfg.horizon;
    let all: Vec<usize> = (0..rollouts.len()).collect();
    let mut worst = vec![0.0_f64; rollouts.len() * h];
    for track in sensed(agents, start, cfg) {
        let values = agent_values(track, rollouts, &all, ahead, barriers, cfg)?;
        for (w, v) in worst.iter_mut().zip(values) {
            *w = w.min(v);
        }
    }
    Ok(worst.chunks(h).map(|c| c.iter().sum()).collect())
}

pub fn goal_score(terminal: &RobotState, goal: Point, desired_speed: f64, cfg: &ControllerConfig) -> f64 {
    -cfg.w_v * (terminal.v - desired_speed).abs() - cfg.w_g * terminal.position().distance(goal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub control: Control,
    /// Number of candidates that survived the veto.
    pub survivors: usize,
    /// State the plan was made from.
    pub start: RobotState,
}

/// Full pipeline for one robot and one tick.
pub fn select_control(
    current: &RobotState,
    queue: &PlannedQueue,
    agents: &[AgentTrack],
    goal: Point,
    desired_speed: f64,
    f: &DynamicsModel,
    barriers: &BarrierSet,
    cfg: &ControllerConfig,
) -> Result<Decision> {
    cfg.validate()?;
    let (start, ahead) =
        if cfg.delay_compensation { (plan_start_state(current, queue, f), queue.len()) } else { (*current, 0) };
    let candidates = cfg.candidates()?;
    let (survivors, rollouts) = filter_candidates_ahead(&start, ahead, agents, f, barriers, cfg)?;
    let mut best: Option<(usize, f64)> = None;
    for &k in &survivors {
        let score = goal_score(rollouts[k].last().expect("horizon >= 1"), goal, desired_speed, cfg);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((k, score));
        }
    }
    let control = match (best, cfg.fallback) {
        (Some((k, _)), _) => candidates[k],
        (None, Fallback::Stop) => Control::STOP,
        (None, Fallback::LeastViolation) => {
            let scores = violation_scores(&rollouts, ahead, &start, agents, barriers, cfg)?;
            let k = (0..scores.len()).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            candidates[k]
        }
    };
    Ok(Decision { control, survivors: survivors.len(), start })
}
