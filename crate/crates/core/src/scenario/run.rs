use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, ScenarioConfig};
use super::metrics::{compute_metrics, Metrics, TickLog};
use crate::controller::{select_control, AgentTrack, BarrierSet, ControllerConfig, PlannedQueue};
use crate::dataset::Task;
use crate::dynamics::{dynamics_for, DynamicsSet};
use crate::error::{Error, Result};
use crate::fleet::{Dispatch, FleetEventKind, Orchestrator, TaskState};
use crate::geometry::Point;
use crate::world::{WorldState, DT};

/// Models a rollout needs.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub dynamics: &'a DynamicsSet,
    pub barriers: &'a BarrierSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub rep: usize,
    pub seed: u64,
    pub log: TickLog,
    pub metrics: BTreeMap<String, Metrics>,
    /// Every robot finished within the time budget.
    pub completed: bool,
}

impl RunResult {
    /// Closest approach of any robot.
    pub fn min_distance(&self) -> f64 {
        self.metrics.values().map(|m| m.min_distance).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_velocity(&self) -> f64 {
        mean(self.metrics.values().map(|m| m.mean_velocity))
    }

    pub fn path_length(&self) -> f64 {
        mean(self.metrics.values().map(|m| m.path_length))
    }

    pub fn contact_ticks(&self) -> usize {
        self.metrics.values().map(|m| m.contact_ticks).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub runs: Vec<RunResult>,
}

impl ScenarioResult {
    pub fn mean_of(&self, f: impl Fn(&RunResult) -> f64) -> f64 {
        mean(self.runs.iter().map(f))
    }

    pub fn std_of(&self, f: impl Fn(&RunResult) -> f64) -> f64 {
        let xs: Vec<f64> = self.runs.iter().map(f).collect();
        let m = mean(xs.iter().copied());
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
    }

    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.completed)
    }

    /// Lowest separation over every repetition.
    pub fn worst_distance(&self) -> f64 {
        self.runs.iter().map(RunResult::min_distance).fold(f64::INFINITY, f64::min)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fails before any simulation if a model the scenario needs is missing.
pub fn check_models(cfg: &ScenarioConfig, models: Models<'_>) -> Result<()> {
    for r in &cfg.robots {
        dynamics_for(models.dynamics, &r.platform)?;
    }
    let mut needed = Vec::new();
    if !cfg.obstacles.is_empty() || !cfg.pedestrians.is_empty() {
        needed.push(Task::Static);
    }
    if !cfg.pedestrians.is_empty() {
        needed.push(Task::Dynamic);
    }
    if cfg.robots.len() > 1 {
        needed.push(Task::MultiRobot);
    }
    for t in needed {
        if !models.barriers.contains_key(&t) {
            return Err(Error::MissingBarrier(t.as_str().to_string()));
        }
    }
    Ok(())
}

/// Runs every repetition of a scenario.
pub fn run_scenario(cfg: &ScenarioConfig, models: Models<'_>) -> Result<ScenarioResult> {
    cfg.validate()?;
    check_models(cfg, models)?;
    let runs = (0..cfg.repetitions).map(|rep| run_repetition(cfg, models, rep)).collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult { config: cfg.clone(), runs })
}

struct Controlled {
    id: String,
    platform: String,
    queue: PlannedQueue,
}

fn shift(h: &mut [Point; 3], p: Point) {
    h[0] = h[1];
    h[1] = h[2];
    h[2] = p;
}

/// One seeded rollout: orchestrator, then every controller on the same
/// snapshot, then one world step.
pub fn run_repetition(cfg: &ScenarioConfig, models: Models<'_>, rep: usize) -> Result<RunResult> {
    let seed = repetition_seed(cfg.seed, rep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = WorldState::new(DT).with_velocity_noise(cfg.noise_sigma, rng.next_u64())?;
    let mut robots = Vec::new();
    for spec in &cfg.robots {
        let mut s = spec.start_state();
        if cfg.start_jitter > 0.0 {
            s.x += rng.random_range(-cfg.start_jitter..=cfg.start_jitter);
            s.y += rng.random_range(-cfg.start_jitter..=cfg.start_jitter);
        }
        let params = spec.params()?;
        let k = params.delay_steps(DT)?;
        world.add_robot(spec.id.clone(), s, params)?;
        robots.push(Controlled { id: spec.id.clone(), platform: spec.platform.clone(), queue: PlannedQueue::new(k) });
    }
    for p in &cfg.pedestrians {
        let mut track = p.track.clone();
        if cfg.pedestrian_time_jitter > 0.0 {
            track.start_time += rng.random_range(0.0..=cfg.pedestrian_time_jitter);
        }
        world.add_pedestrian(p.id.clone(), track)?;
    }
    for &o in &cfg.obstacles {
        world.add_obstacle(o);
    }

    let mut ccfg = ControllerConfig::for_speed(cfg.max_speed);
    ccfg.delay_compensation = cfg.delay_compensation;
    ccfg.dt = DT;
    cfg.controller.apply(&mut ccfg);
    ccfg.validate()?;

    let mut orchestrator = match cfg.mode {
        Mode::PickAndPlace => {
            let homes = cfg.robots.iter().map(|r| (r.id.clone(), r.home.clone().expect("validated"))).collect();
            let mut o = Orchestrator::new(cfg.map.clone().expect("validated"), cfg.tasks.clone(), homes)?;
            o.tolerance = cfg.goal_tolerance;
            Some(o)
        }
        Mode::UnitTask => None,
    };
    let goals: BTreeMap<String, Point> =
        cfg.robots.iter().filter_map(|r| r.goal.map(|g| (r.id.clone(), g))).collect();

    let mut history: BTreeMap<String, [Point; 3]> = BTreeMap::new();
    for (id, slot) in world.robots() {
        history.insert(id.clone(), [slot.state.position(); 3]);
    }
    for (id, p) in world.pedestrians() {
        history.insert(id.clone(), [p; 3]);
    }
    let obstacles: Vec<AgentTrack> = world
        .obstacles()
        .iter()
        .enumerate()
        .map(|(i, &p)| AgentTrack::observed(format!("obstacle{i}"), [p; 3]))
        .collect();

    let mut log = TickLog { dt: DT, frames: vec![world.records()], ..Default::default() };
    let mut completions: BTreeMap<String, Option<f64>> = robots.iter().map(|r| (r.id.clone(), None)).collect();
    let mut held: BTreeMap<String, Point> = BTreeMap::new();
    let max_ticks = (cfg.budget() / DT).round() as u64;
    let mut logged = 0;

    loop {
        let time = world.time();
        let positions: BTreeMap<String, Point> =
            world.robots().map(|(id, s)| (id.clone(), s.state.position())).collect();

        let dispatch: BTreeMap<String, Dispatch> = match orchestrator.as_mut() {
            Some(o) => {
                let d = o.tick(time, &positions)?;
                for e in &o.log[logged..] {
                    if let FleetEventKind::Transition { to: TaskState::Done, .. } = e.kind {
                        completions.insert(e.robot.clone(), Some(e.time));
                    }
                    log.events.push(e.to_string());
                }
                logged = o.log.len();
                d
            }
            None => {
                let mut d = BTreeMap::new();
                for (id, &p) in &positions {
                    let goal = goals[id];
                    if completions[id].is_none() && crate::fleet::goal_reached(p, goal, cfg.goal_tolerance) {
                        completions.insert(id.clone(), Some(time));
                        held.insert(id.clone(), p);
                        log.events.push(format!("{time:.1},{id},reached"));
                    }
                    d.insert(id.clone(), match held.get(id) {
                        Some(&h) => Dispatch { goal: h, moving: false },
                        None => Dispatch { goal, moving: true },
                    });
                }
                d
            }
        };

        let finished = match orchestrator.as_ref() {
            Some(o) => o.all_done(),
            None => completions.values().all(Option::is_some),
        };
        if finished || world.tick() >= max_ticks {
            break;
        }

        let mut commands = BTreeMap::new();
        for r in robots.iter_mut() {
            let slot = world.robot(&r.id).expect("robot exists");
            let mut agents: Vec<AgentTrack> = Vec::new();
            for (other, s) in world.robots() {
                if *other != r.id {
                    agents.push(AgentTrack::robot(other.clone(), s.params.name.clone(), history[other], s.state));
                }
            }
            for (pid, _) in world.pedestrians() {
                agents.push(AgentTrack::observed(pid.clone(), history[pid]));
            }
            agents.extend(obstacles.iter().cloned());
            let d = dispatch[&r.id];
            let desired = if d.moving { cfg.max_speed } else { 0.0 };
            let f = dynamics_for(models.dynamics, &r.platform)?;
            let decision = select_control(&slot.state, &r.queue, &agents, d.goal, desired, f, models.barriers, &ccfg)?;
            r.queue.push(decision.control);
            log.survivors.entry(r.id.clone()).or_default().push(decision.survivors);
            commands.insert(r.id.clone(), decision.control);
        }
        world.step(&commands)?;
        for (id, slot) in world.robots() {
            shift(history.get_mut(id).expect("tracked"), slot.state.position());
        }
        let peds: Vec<(String, Point)> = world.pedestrians().map(|(id, p)| (id.clone(), p)).collect();
        for (id, p) in peds {
            shift(history.get_mut(&id).expect("tracked"), p);
        }
        log.frames.push(world.records());
    }

    if let Some(o) = orchestrator.as_ref() {
        // A robot only counts as finished if none of its tasks is open.
        for r in &robots {
            let open = o.tasks.iter().any(|t| t.robot.as_deref() == Some(r.id.as_str()) && t.state != TaskState::Done);
            if open || o.tasks.iter().any(|t| t.state == TaskState::Pending) {
                completions.insert(r.id.clone(), None);
            }
        }
    }
    log.completions = completions;
    let metrics = robots
        .iter()
        .map(|r| Ok((r.id.clone(), compute_metrics(&log, &r.id)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let completed = metrics.values().all(|m| m.success);
    Ok(RunResult { rep, seed, log, metrics, completed })
}
