//! Built-in scenario definitions for the evaluation grid.
//!
//! Unit tasks run in lanes across a 12 m x 12 m arena: robot 1 drives
//! along y = 0, robot 2 the opposite way along y = 2, robot 3 along
//! y = -2. Pedestrians walk north across all lanes and step onto lane 0
//! shortly before robot 1 gets there, so robot 1 has to yield at every
//! speed. The crossings are placed so that no robot meets a pedestrian
//! head on at its own crossing, which a controller without reverse could
//! not escape.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::config::{Mode, PedestrianSpec, RobotSpec, ScenarioConfig};
use crate::fleet::{FleetTask, WarehouseMap, Zone};
use crate::geometry::Point;
use crate::world::{PedestrianTrack, PlatformParams};

pub const SPEEDS: [f64; 3] = [0.5, 1.0, 1.5];
const PLATFORMS: [&str; 3] = ["freight", "jackal", "megarover"];

fn base(name: String, speed: f64, reps: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name,
        kind: None,
        mode: Mode::UnitTask,
        max_speed: speed,
        repetitions: reps,
        seed,
        noise_sigma: 0.01,
        delay_compensation: true,
        time_budget: None,
        goal_tolerance: 0.3,
        controller: Default::default(),
        start_jitter: 0.1,
        pedestrian_time_jitter: 0.0,
        robots: vec![],
        obstacles: vec![],
        pedestrians: vec![],
        map: None,
        tasks: vec![],
    }
}

fn lane_robots(count: usize) -> Vec<RobotSpec> {
    let lanes = [(-5.0, 0.0, 0.0, 5.0), (5.0, 2.0, PI, -5.0), (-5.0, -2.0, 0.0, 5.0)];
    (0..count.min(3))
        .map(|i| {
            let (x, y, th, gx) = lanes[i];
            RobotSpec {
                id: format!("r{}", i + 1),
                platform: PLATFORMS[i].into(),
                start: [x, y, th],
                goal: Some(Point::new(gx, y)),
                home: None,
                delay: None,
            }
        })
        .collect()
}

/// Walking speed paired with each robot speed setting.
pub fn pedestrian_speed(robot_speed: f64) -> f64 {
    0.2 + 0.8 * robot_speed
}

/// Crossing positions along the lanes, and how long before robot 1 would
/// reach each crossing its pedestrian steps onto lane y = 0.
const CROSSINGS: [f64; 2] = [1.0, 3.0];
const CROSSING_LEAD: f64 = 1.5;
const PEDESTRIAN_JITTER: f64 = 1.0;
const DELAY_LEAD: f64 = 1.0;

/// Northbound crossing at `x` from y = -5.5, reaching the lane y = 0 at
/// `meet` seconds.
fn crossing(x: f64, speed: f64, meet: f64) -> PedestrianTrack {
    let from_y: f64 = -5.5;
    let dist = from_y.abs();
    let (start_y, start_time) = if meet * speed >= dist {
        (from_y, meet - dist / speed)
    } else {
        (from_y.signum() * meet * speed, 0.0)
    };
    PedestrianTrack::uniform(vec![Point::new(x, start_y), Point::new(x, -from_y)], speed)
        .expect("valid crossing")
        .starting_at(start_time)
}

/// When robot 1 is `lead` seconds short of `x`.
fn robot_one_at(x: f64, lead: f64, speed: f64) -> f64 {
    let accel = PlatformParams::freight().m_v;
    (x + 5.0) / speed + speed / (2.0 * accel) - lead
}

fn pedestrians(count: usize, speed: f64) -> Vec<PedestrianSpec> {
    let ps = pedestrian_speed(speed);
    CROSSINGS
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, &x)| PedestrianSpec {
            id: format!("p{}", i + 1),
            track: crossing(x, ps, robot_one_at(x, CROSSING_LEAD, speed)),
        })
        .collect()
}

pub fn unit_static(robots: usize, speed: f64, reps: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base(format!("static-o2-r{robots}-v{speed:.1}"), speed, reps, seed);
    cfg.robots = lane_robots(robots);
    cfg.obstacles = vec![Point::new(-1.0, 0.15), Point::new(2.0, -0.15)];
    cfg
}

pub fn unit_dynamic(robots: usize, peds: usize, speed: f64, reps: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base(format!("dynamic-p{peds}-r{robots}-v{speed:.1}"), speed, reps, seed);
    cfg.robots = lane_robots(robots);
    cfg.pedestrians = pedestrians(peds, speed);
    cfg.pedestrian_time_jitter = PEDESTRIAN_JITTER;
    cfg
}

/// Every unit-task setting: static with two obstacles, dynamic with one
/// and two pedestrians, one to three robots, each speed.
pub fn safety_grid(reps: usize, seed: u64) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for robots in 1..=3 {
        for speed in SPEEDS {
            out.push(unit_static(robots, speed, reps, seed));
            for peds in 1..=2 {
                out.push(unit_dynamic(robots, peds, speed, reps, seed));
            }
        }
    }
    out
}

/// Two robots swapping endpoints on one line.
pub fn head_to_head(speed: f64, reps: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base(format!("head-to-head-v{speed:.1}"), speed, reps, seed);
    cfg.kind = Some("multirobot".into());
    cfg.start_jitter = 0.05;
    let spec = |id: &str, platform: &str, x: f64, th: f64| RobotSpec {
        id: id.into(),
        platform: platform.into(),
        start: [x, 0.0, th],
        goal: Some(Point::new(-x, 0.0)),
        home: None,
        delay: None,
    };
    cfg.robots = vec![spec("r1", "freight", -4.0, 0.0), spec("r2", "jackal", 4.0, PI)];
    cfg
}

/// Single robot with a 0.2 s actuation delay crossing one pedestrian that
/// steps in front of it a second before it arrives, so it has to brake.
pub fn delay_ablation(compensation: bool, reps: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = unit_dynamic(1, 1, 1.0, reps, seed);
    cfg.pedestrians[0].track = crossing(CROSSINGS[0], pedestrian_speed(1.0), robot_one_at(CROSSINGS[0], DELAY_LEAD, 1.0));
    cfg.name = format!("delay-0.2-comp-{}", if compensation { "on" } else { "off" });
    cfg.robots[0].delay = Some(0.2);
    cfg.delay_compensation = compensation;
    cfg
}

/// Two pickups on the sides, two dropoffs at the top, charging at the
/// bottom; outbound and return legs cross at the two junctions.
pub fn warehouse_map() -> WarehouseMap {
    let wp = [
        ("c1", (-2.0, -4.5), Zone::Charging),
        ("c2", (2.0, -4.5), Zone::Charging),
        ("p1", (-4.5, 0.0), Zone::Pickup),
        ("p2", (4.5, 0.0), Zone::Pickup),
        ("d1", (2.5, 4.0), Zone::Dropoff),
        ("d2", (-2.5, 4.0), Zone::Dropoff),
        ("j1", (0.0, 4.0 * 4.5 / 7.0), Zone::Junction),
        ("j2", (0.0, 4.0 - 8.5 * 2.5 / 4.5), Zone::Junction),
    ];
    let edges = [
        ("c1", "p1"), ("p1", "j1"), ("j1", "d1"), ("d1", "j2"), ("j2", "c1"),
        ("c2", "p2"), ("p2", "j1"), ("j1", "d2"), ("d2", "j2"), ("j2", "c2"),
    ];
    WarehouseMap {
        waypoints: wp.iter().map(|(id, (x, y), _)| (id.to_string(), Point::new(*x, *y))).collect(),
        edges: edges.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect(),
        zones: wp.iter().map(|(id, _, z)| (id.to_string(), *z)).collect::<BTreeMap<_, _>>(),
        junction_radius: 1.0,
        approach_margin: 0.6,
    }
}

fn patrol(a: Point, b: Point, legs: usize, speed: f64) -> PedestrianTrack {
    let waypoints = (0..=legs).map(|i| if i % 2 == 0 { a } else { b }).collect();
    PedestrianTrack::uniform(waypoints, speed).expect("valid patrol")
}

/// Two robots at 1.0 m/s each running one pickup-dropoff-return task,
/// with up to two pedestrians pacing across the floor.
pub fn pick_and_place(peds: usize, reps: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base(format!("pick-and-place-p{peds}"), 1.0, reps, seed);
    cfg.mode = Mode::PickAndPlace;
    cfg.kind = Some("pick_and_place".into());
    cfg.map = Some(warehouse_map());
    cfg.start_jitter = 0.05;
    cfg.pedestrian_time_jitter = 4.0;
    cfg.robots = vec![
        RobotSpec { id: "r1".into(), platform: "freight".into(), start: [-2.0, -4.5, PI / 2.0], goal: None, home: Some("c1".into()), delay: None },
        RobotSpec { id: "r2".into(), platform: "jackal".into(), start: [2.0, -4.5, PI / 2.0], goal: None, home: Some("c2".into()), delay: None },
    ];
    cfg.tasks = vec![FleetTask::new("t1", "p1", "d1"), FleetTask::new("t2", "p2", "d2")];
    let lanes = [(Point::new(-6.0, 1.5), Point::new(6.0, 1.5)), (Point::new(6.0, -2.5), Point::new(-6.0, -2.5))];
    cfg.pedestrians = lanes
        .iter()
        .take(peds)
        .enumerate()
        .map(|(i, &(a, b))| PedestrianSpec { id: format!("p{}", i + 1), track: patrol(a, b, 12, 0.8) })
        .collect();
    cfg
}

/// Seed of the first evaluation suite; the others follow consecutively.
pub const EVALUATION_SEED: u64 = 11;

/// Every evaluation scenario: the unit-task grid, head-to-head, both delay
/// arms and both pick-and-place variants. The four groups use seeds
/// `seed`, `seed + 1`, `seed + 2` and `seed + 3`.
pub fn evaluation(reps: usize, seed: u64) -> Vec<ScenarioConfig> {
    let mut all = safety_grid(reps, seed);
    all.push(head_to_head(1.0, reps, seed + 1));
    all.push(delay_ablation(true, reps, seed + 2));
    all.push(delay_ablation(false, reps, seed + 2));
    all.push(pick_and_place(0, reps, seed + 3));
    all.push(pick_and_place(2, reps, seed + 3));
    all
}
