//! Lightweight fleet layer: warehouse waypoint map, pick-and-place task
//! allocation, goal dispatch and junction mutual exclusion.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Charging,
    Pickup,
    Dropoff,
    Junction,
    Plain,
}

fn default_junction_radius() -> f64 {
    1.0
}

fn default_approach_margin() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarehouseMap {
    pub waypoints: BTreeMap<String, Point>,
    /// Advisory lanes; robots drive straight between goals regardless.
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    #[serde(default)]
    pub zones: BTreeMap<String, Zone>,
    #[serde(default = "default_junction_radius")]
    pub junction_radius: f64,
    /// Extra distance outside the junction radius at which a robot asks for
    /// the junction, leaving room to stop before entering.
    #[serde(default = "default_approach_margin")]
    pub approach_margin: f64,
}

impl WarehouseMap {
    pub fn from_toml(text: &str) -> Result<Self> {
        let map: Self = toml::from_str(text).map_err(|e| Error::Config(format!("map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("map serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Config("map has no waypoints".into()));
        }
        for id in self.zones.keys().chain(self.edges.iter().flatten()) {
            if !self.waypoints.contains_key(id) {
                return Err(Error::Config(format!("map references unknown waypoint `{id}`")));
            }
        }
        if !(self.junction_radius > 0.0 && self.approach_margin >= 0.0) {
            return Err(Error::Config("junction radius must be positive".into()));
        }
        // Connectivity over the lane graph.
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for [a, b] in &self.edges {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let start = self.waypoints.keys().next().expect("non-empty").as_str();
        let mut seen = BTreeSet::from([start]);
        let mut todo = vec![start];
        while let Some(n) = todo.pop() {
            for &m in adj.get(n).into_iter().flatten() {
                if seen.insert(m) {
                    todo.push(m);
                }
            }
        }
        if seen.len() != self.waypoints.len() {
            let lost: Vec<&String> = self.waypoints.keys().filter(|k| !seen.contains(k.as_str())).collect();
            return Err(Error::Config(format!("map graph is disconnected; unreachable: {lost:?}")));
        }
        Ok(())
    }

    pub fn position(&self, id: &str) -> Result<Point> {
        self.waypoints.get(id).copied().ok_or_else(|| Error::invalid(format!("unknown waypoint `{id}`")))
    }

    pub fn zone(&self, id: &str) -> Zone {
        self.zones.get(id).copied().unwrap_or(Zone::Plain)
    }

    pub fn junctions(&self) -> impl Iterator<Item = (&String, Point)> {
        self.zones.iter().filter(|(_, z)| **z == Zone::Junction).map(|(id, _)| (id, self.waypoints[id]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    ToPickup,
    ToDropoff,
    Returning,
    Done,
}

impl TaskState {
    pub fn next(self) -> Option<TaskState> {
        match self {
            TaskState::Pending => Some(TaskState::ToPickup),
            TaskState::ToPickup => Some(TaskState::ToDropoff),
            TaskState::ToDropoff => Some(TaskState::Returning),
            TaskState::Returning => Some(TaskState::Done),
            TaskState::Done => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::ToPickup => "to_pickup",
            TaskState::ToDropoff => "to_dropoff",
            TaskState::Returning => "returning",
            TaskState::Done => "done",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetTask {
    pub id: String,
    pub pickup: String,
    pub dropoff: String,
    #[serde(default = "pending")]
    pub state: TaskState,
    #[serde(default)]
    pub robot: Option<String>,
}

fn pending() -> TaskState {
    TaskState::Pending
}

impl FleetTask {
    pub fn new(id: impl Into<String>, pickup: impl Into<String>, dropoff: impl Into<String>) -> Self {
        Self { id: id.into(), pickup: pickup.into(), dropoff: dropoff.into(), state: TaskState::Pending, robot: None }
    }

    /// Moves to the next state in the fixed chain.
    pub fn advance(&mut self) -> Result<TaskState> {
        let next = self
            .state
            .next()
            .ok_or_else(|| Error::invalid(format!("task `{}` is already done", self.id)))?;
        if next == TaskState::ToPickup && self.robot.is_none() {
            return Err(Error::invalid(format!("task `{}` has no robot", self.id)));
        }
        self.state = next;
        Ok(next)
    }
}

/// Orchestrator's view of one robot.
#[derive(Clone, Debug, PartialEq)]
pub struct FleetRobot {
    pub id: String,
    pub position: Point,
    /// Charging waypoint the robot returns to.
    pub home: String,
    pub busy: bool,
}

/// Nearest idle robot to the task's pickup; ties go to the lowest id.
pub fn assign_task(robots: &[FleetRobot], task: &FleetTask, map: &WarehouseMap) -> Result<Option<String>> {
    let pickup = map.position(&task.pickup)?;
    let mut idle: Vec<&FleetRobot> = robots.iter().filter(|r| !r.busy).collect();
    idle.sort_by(|a, b| a.id.cmp(&b.id));
    let mut best: Option<(&FleetRobot, f64)> = None;
    for r in idle {
        let d = r.position.distance(pickup);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((r, d));
        }
    }
    Ok(best.map(|(r, _)| r.id.clone()))
}

/// Where the robot should head for its task's current state.
pub fn next_goal(robot_id: &str, task: &FleetTask, map: &WarehouseMap, home: &str) -> Result<Option<Point>> {
    if task.robot.as_deref() != Some(robot_id) {
        return Err(Error::invalid(format!("task `{}` is not assigned to `{robot_id}`", task.id)));
    }
    Ok(match task.state {
        TaskState::Pending => None,
        TaskState::ToPickup => Some(map.position(&task.pickup)?),
        TaskState::ToDropoff => Some(map.position(&task.dropoff)?),
        TaskState::Returning => Some(map.position(home)?),
        TaskState::Done => None,
    })
}

/// Closed threshold: exactly `tolerance` away counts as reached.
pub fn goal_reached(position: Point, goal: Point, tolerance: f64) -> bool {
    position.distance(goal) <= tolerance
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Proceed,
    Hold,
}

/// Who holds each junction and who waits for it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JunctionRegistry {
    holders: BTreeMap<String, String>,
    waiting: BTreeMap<String, VecDeque<String>>,
}

impl JunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn holder(&self, junction: &str) -> Option<&str> {
        self.holders.get(junction).map(String::as_str)
    }

    pub fn waiters(&self, junction: &str) -> Vec<&str> {
        self.waiting.get(junction).map(|q| q.iter().map(String::as_str).collect()).unwrap_or_default()
    }

    /// Request by a robot at the junction. The junction goes to the first
    /// robot in arrival order once it is free.
    pub fn junction_gate(&mut self, robot: &str, junction: &str) -> Gate {
        if let Some(h) = self.holders.get(junction) {
            if h == robot {
                return Gate::Proceed;
            }
        }
        let queue = self.waiting.entry(junction.to_string()).or_default();
        if !queue.iter().any(|r| r == robot) {
            queue.push_back(robot.to_string());
        }
        if !self.holders.contains_key(junction) && queue.front().map(String::as_str) == Some(robot) {
            queue.pop_front();
            self.holders.insert(junction.to_string(), robot.to_string());
            return Gate::Proceed;
        }
        Gate::Hold
    }

    /// Forgets `robot` at `junction`: releases it if it holds the junction
    /// and removes it from the queue.
    pub fn leave(&mut self, robot: &str, junction: &str) -> bool {
        let released = self.holders.get(junction).is_some_and(|h| h == robot);
        if released {
            self.holders.remove(junction);
        }
        if let Some(q) = self.waiting.get_mut(junction) {
            q.retain(|r| r != robot);
        }
        released
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FleetEventKind {
    Assigned { task: String },
    Transition { task: String, from: TaskState, to: TaskState },
    Hold { junction: String },
    Acquire { junction: String },
    Release { junction: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetEvent {
    pub time: f64,
    pub robot: String,
    #[serde(flatten)]
    pub kind: FleetEventKind,
}

impl fmt::Display for FleetEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1},{},", self.time, self.robot)?;
        match &self.kind {
            FleetEventKind::Assigned { task } => write!(f, "assigned,{task}"),
            FleetEventKind::Transition { task, from, to } => write!(f, "transition,{task},{from},{to}"),
            FleetEventKind::Hold { junction } => write!(f, "hold,{junction}"),
            FleetEventKind::Acquire { junction } => write!(f, "acquire,{junction}"),
            FleetEventKind::Release { junction } => write!(f, "release,{junction}"),
        }
    }
}

/// Goal handed to one robot's low-level controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dispatch {
    pub goal: Point,
    /// False while the robot is held or idle: the controller is told to
    /// keep its position at zero speed.
    pub moving: bool,
}

/// Single authority running task allocation and junction gating.
#[derive(Clone, Debug)]
pub struct Orchestrator {
    pub map: WarehouseMap,
    pub tasks: Vec<FleetTask>,
    homes: BTreeMap<String, String>,
    registry: JunctionRegistry,
    pub log: Vec<FleetEvent>,
    pub tolerance: f64,
    /// Robot currently held: the position it was told to keep.
    held_at: BTreeMap<String, Point>,
}

impl Orchestrator {
    pub fn new(map: WarehouseMap, tasks: Vec<FleetTask>, homes: BTreeMap<String, String>) -> Result<Self> {
        map.validate()?;
        for t in &tasks {
            map.position(&t.pickup)?;
            map.position(&t.dropoff)?;
        }
        for h in homes.values() {
            map.position(h)?;
        }
        Ok(Self { map, tasks, homes, registry: JunctionRegistry::new(), log: Vec::new(), tolerance: 0.3, held_at: BTreeMap::new() })
    }

    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Done)
    }

    pub fn registry(&self) -> &JunctionRegistry {
        &self.registry
    }

    fn event(&mut self, time: f64, robot: &str, kind: FleetEventKind) {
        self.log.push(FleetEvent { time, robot: robot.to_string(), kind });
    }

    /// One orchestration step over the robots' current positions.
    pub fn tick(&mut self, time: f64, positions: &BTreeMap<String, Point>) -> Result<BTreeMap<String, Dispatch>> {
        // Allocation, in task order.
        for i in 0..self.tasks.len() {
            if self.tasks[i].state != TaskState::Pending {
                continue;
            }
            let snapshot: Vec<FleetRobot> = positions
                .iter()
                .filter_map(|(id, &p)| {
                    let home = self.homes.get(id)?.clone();
                    let busy = self.tasks.iter().any(|t| t.robot.as_deref() == Some(id) && t.state != TaskState::Done);
                    Some(FleetRobot { id: id.clone(), position: p, home, busy })
                })
                .collect();
            if let Some(r) = assign_task(&snapshot, &self.tasks[i], &self.map)? {
                let t = &mut self.tasks[i];
                t.robot = Some(r.clone());
                t.advance()?;
                let task = t.id.clone();
                self.event(time, &r, FleetEventKind::Assigned { task: task.clone() });
                self.event(time, &r, FleetEventKind::Transition { task, from: TaskState::Pending, to: TaskState::ToPickup });
            }
        }

        let mut out = BTreeMap::new();
        for (id, &pos) in positions {
            let Some(home) = self.homes.get(id).cloned() else { continue };
            let active = self
                .tasks
                .iter()
                .position(|t| t.robot.as_deref() == Some(id) && !matches!(t.state, TaskState::Done | TaskState::Pending));
            let mut goal = None;
            if let Some(i) = active {
                let mut g = next_goal(id, &self.tasks[i], &self.map, &home)?;
                while let Some(p) = g {
                    if !goal_reached(pos, p, self.tolerance) {
                        break;
                    }
                    let from = self.tasks[i].state;
                    let to = self.tasks[i].advance()?;
                    let task = self.tasks[i].id.clone();
                    self.event(time, id, FleetEventKind::Transition { task, from, to });
                    g = next_goal(id, &self.tasks[i], &self.map, &home)?;
                }
                goal = g;
            }
            let Some(goal) = goal else {
                out.insert(id.clone(), Dispatch { goal: self.map.position(&home)?, moving: false });
                continue;
            };
            let mut hold = false;
            let junctions: Vec<(String, Point)> = self.map.junctions().map(|(j, p)| (j.clone(), p)).collect();
            let request = self.map.junction_radius + self.map.approach_margin;
            for (j, jp) in junctions {
                let d = pos.distance(jp);
                if d <= request {
                    let was_holder = self.registry.holder(&j) == Some(id.as_str());
                    let was_waiting = self.registry.waiters(&j).contains(&id.as_str());
                    match self.registry.junction_gate(id, &j) {
                        Gate::Proceed => {
                            if !was_holder {
                                self.event(time, id, FleetEventKind::Acquire { junction: j.clone() });
                            }
                        }
                        Gate::Hold => {
                            hold = true;
                            if !was_waiting {
                                self.event(time, id, FleetEventKind::Hold { junction: j.clone() });
                            }
                        }
                    }
                } else if self.registry.leave(id, &j) {
                    self.event(time, id, FleetEventKind::Release { junction: j.clone() });
                }
            }
            if hold {
                let keep = *self.held_at.entry(id.clone()).or_insert(pos);
                out.insert(id.clone(), Dispatch { goal: keep, moving: false });
            } else {
                self.held_at.remove(id);
                out.insert(id.clone(), Dispatch { goal, moving: true });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> WarehouseMap {
        WarehouseMap::from_toml(
            r#"
            edges = [["c1", "j"], ["c2", "j"], ["j", "p1"], ["j", "d1"]]
            [waypoints]
            c1 = [-4.0, -4.0]
            c2 = [4.0, -4.0]
            j = [0.0, 0.0]
            p1 = [-4.0, 4.0]
            d1 = [4.0, 4.0]
            [zones]
            c1 = "charging"
            c2 = "charging"
            j = "junction"
            p1 = "pickup"
            d1 = "dropoff"
            "#,
        )
        .unwrap()
    }

    fn robot(id: &str, x: f64, y: f64, busy: bool) -> FleetRobot {
        FleetRobot { id: id.into(), position: Point::new(x, y), home: "c1".into(), busy }
    }

    #[test]
    fn map_validation() {
        let m = map();
        assert_eq!(m.zone("j"), Zone::Junction);
        assert_eq!(m.junction_radius, 1.0);
        assert_eq!(WarehouseMap::from_toml(&m.to_toml()).unwrap(), m);
        let mut broken = m.clone();
        broken.edges.pop();
        assert!(broken.validate().is_err());
        let mut unknown = m.clone();
        unknown.zones.insert("zz".into(), Zone::Pickup);
        assert!(unknown.validate().is_err());
    }

    #[test]
    fn assignment_rules() {
        let m = map();
        let t = FleetTask::new("t", "p1", "d1");
        assert_eq!(assign_task(&[robot("a", 0.0, 0.0, false)], &t, &m).unwrap().as_deref(), Some("a"));
        // p1 is at (-4, 4): b is 2 m away, a 5 m.
        let two = [robot("a", 1.0, 4.0, false), robot("b", -4.0, 2.0, false)];
        assert_eq!(assign_task(&two, &t, &m).unwrap().as_deref(), Some("b"));
        let tie = [robot("b", -4.0, 2.0, false), robot("a", -4.0, 6.0, false)];
        assert_eq!(assign_task(&tie, &t, &m).unwrap().as_deref(), Some("a"));
        let busy = [robot("a", 0.0, 0.0, true)];
        assert_eq!(assign_task(&busy, &t, &m).unwrap(), None);
    }

    #[test]
    fn goals_follow_the_state_chain() {
        let m = map();
        let mut t = FleetTask::new("t", "p1", "d1");
        assert!(next_goal("a", &t, &m, "c1").is_err());
        assert!(t.advance().is_err(), "cannot start without a robot");
        t.robot = Some("a".into());
        t.advance().unwrap();
        assert_eq!(next_goal("a", &t, &m, "c1").unwrap(), Some(Point::new(-4.0, 4.0)));
        t.advance().unwrap();
        assert_eq!(next_goal("a", &t, &m, "c1").unwrap(), Some(Point::new(4.0, 4.0)));
        t.advance().unwrap();
        assert_eq!(next_goal("a", &t, &m, "c1").unwrap(), Some(Point::new(-4.0, -4.0)));
        t.advance().unwrap();
        assert_eq!(next_goal("a", &t, &m, "c1").unwrap(), None);
        assert!(t.advance().is_err());
    }

    #[test]
    fn goal_tolerance_is_closed() {
        let g = Point::new(0.0, 0.0);
        assert!(goal_reached(Point::new(0.1, 0.0), g, 0.3));
        assert!(goal_reached(Point::new(0.3, 0.0), g, 0.3));
        assert!(!goal_reached(Point::new(0.31, 0.0), g, 0.3));
    }

    #[test]
    fn junction_fifo() {
        let mut reg = JunctionRegistry::new();
        assert_eq!(reg.junction_gate("a", "j"), Gate::Proceed);
        assert_eq!(reg.junction_gate("a", "j"), Gate::Proceed);
        assert_eq!(reg.junction_gate("b", "j"), Gate::Hold);
        assert_eq!(reg.junction_gate("c", "j"), Gate::Hold);
        assert_eq!(reg.junction_gate("c", "j"), Gate::Hold);
        assert_eq!(reg.waiters("j"), vec!["b", "c"]);
        assert!(reg.leave("a", "j"));
        // c asks first after the release but b arrived earlier.
        assert_eq!(reg.junction_gate("c", "j"), Gate::Hold);
        assert_eq!(reg.junction_gate("b", "j"), Gate::Proceed);
        assert!(reg.leave("b", "j"));
        assert_eq!(reg.junction_gate("c", "j"), Gate::Proceed);
        assert!(!reg.leave("zz", "j"));
    }

    #[test]
    fn orchestrator_runs_a_task_to_done() {
        let m = map();
        let homes = BTreeMap::from([("a".to_string(), "c1".to_string())]);
        let mut o = Orchestrator::new(m.clone(), vec![FleetTask::new("t1", "p1", "d1")], homes).unwrap();
        let mut pos = m.position("c1").unwrap();
        for _ in 0..10_000 {
            let out = o.tick(0.0, &BTreeMap::from([("a".to_string(), pos)])).unwrap();
            let d = out["a"];
            if o.all_done() {
                break;
            }
            // Teleport-ish follower: 0.2 m straight toward the goal.
            let step = d.goal - pos;
            let n = step.norm();
            if d.moving && n > 0.0 {
                pos = pos + step * (0.2f64.min(n) / n);
            }
        }
        assert!(o.all_done());
        let transitions: Vec<(TaskState, TaskState)> = o
            .log
            .iter()
            .filter_map(|e| match &e.kind {
                FleetEventKind::Transition { from, to, .. } => Some((*from, *to)),
                _ => None,
            })
            .collect();
        for (from, to) in &transitions {
            assert_eq!(from.next(), Some(*to));
        }
        assert_eq!(transitions.len(), 4);
        assert!(o.log.iter().any(|e| matches!(e.kind, FleetEventKind::Acquire { .. })));
        assert!(o.log.iter().any(|e| matches!(e.kind, FleetEventKind::Release { .. })));
    }

    #[test]
    fn held_robot_keeps_its_position() {
        let m = map();
        let homes = BTreeMap::from([("a".to_string(), "c1".to_string()), ("b".to_string(), "c2".to_string())]);
        let tasks = vec![FleetTask::new("t1", "p1", "d1"), FleetTask::new("t2", "d1", "p1")];
        let mut o = Orchestrator::new(m, tasks, homes).unwrap();
        let pos = BTreeMap::from([("a".to_string(), Point::new(-0.5, -0.5)), ("b".to_string(), Point::new(0.9, -0.9))]);
        let out = o.tick(0.0, &pos).unwrap();
        assert!(out["a"].moving);
        assert!(!out["b"].moving);
        assert_eq!(out["b"].goal, Point::new(0.9, -0.9));
        assert_eq!(o.registry().holder("j"), Some("a"));
        // At most one robot flagged to proceed within the junction.
        let proceeding = out.iter().filter(|(id, d)| d.moving && pos[*id].distance(Point::new(0.0, 0.0)) <= 1.6).count();
        assert_eq!(proceeding, 1);
    }
}
