use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, Fallback};
use crate::error::{Error, Result};
use crate::fleet::{FleetTask, WarehouseMap};
use crate::geometry::Point;
use crate::world::{candidate_set, PedestrianTrack, PlatformParams, RobotState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    UnitTask,
    PickAndPlace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: String,
    pub platform: String,
    /// `[x, y, theta]`, at rest.
    pub start: [f64; 3],
    /// Unit-task goal.
    #[serde(default)]
    pub goal: Option<Point>,
    /// Charging waypoint for pick-and-place runs.
    #[serde(default)]
    pub home: Option<String>,
    /// Overrides the platform's actuation delay, seconds.
    #[serde(default)]
    pub delay: Option<f64>,
}

impl RobotSpec {
    pub fn params(&self) -> Result<PlatformParams> {
        let p = PlatformParams::by_name(&self.platform)?;
        Ok(match self.delay {
            Some(h) => p.with_delay(h),
            None => p,
        })
    }

    pub fn start_state(&self) -> RobotState {
        RobotState::at_rest(self.start[0], self.start[1], self.start[2])
    }
}

/// Optional overrides of the controller defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerTuning {
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub w_v: Option<f64>,
    #[serde(default)]
    pub w_g: Option<f64>,
    #[serde(default)]
    pub sensing_radius: Option<f64>,
    #[serde(default)]
    pub fallback: Option<Fallback>,
}

impl ControllerTuning {
    pub fn apply(&self, cfg: &mut ControllerConfig) {
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(w) = self.w_v {
            cfg.w_v = w;
        }
        if let Some(w) = self.w_g {
            cfg.w_g = w;
        }
        if let Some(r) = self.sensing_radius {
            cfg.sensing_radius = r;
        }
        if let Some(f) = self.fallback {
            cfg.fallback = f;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpec {
    pub id: String,
    #[serde(flatten)]
    pub track: PedestrianTrack,
}

fn one() -> usize {
    1
}

fn default_noise() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

fn default_tolerance() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Row label in the report; derived from the contents when absent.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    pub max_speed: f64,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "yes")]
    pub delay_compensation: bool,
    /// Simulated seconds; 120 for unit tasks and 600 for pick-and-place
    /// when absent.
    #[serde(default)]
    pub time_budget: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub goal_tolerance: f64,
    #[serde(default)]
    pub controller: ControllerTuning,
    /// Uniform per-repetition offset of robot start positions, meters.
    #[serde(default)]
    pub start_jitter: f64,
    /// Uniform per-repetition delay added to pedestrian start times, seconds.
    #[serde(default)]
    pub pedestrian_time_jitter: f64,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub obstacles: Vec<Point>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub map: Option<WarehouseMap>,
    #[serde(default)]
    pub tasks: Vec<FleetTask>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn budget(&self) -> f64 {
        self.time_budget.unwrap_or(match self.mode {
            Mode::UnitTask => 120.0,
            Mode::PickAndPlace => 600.0,
        })
    }

    pub fn kind_label(&self) -> String {
        if let Some(k) = &self.kind {
            return k.clone();
        }
        match self.mode {
            Mode::PickAndPlace => "pick_and_place".into(),
            Mode::UnitTask if !self.pedestrians.is_empty() => "dynamic".into(),
            Mode::UnitTask if !self.obstacles.is_empty() => "static".into(),
            Mode::UnitTask => "multirobot".into(),
        }
    }

    /// Obstacle count shown in the report: pedestrians for dynamic runs,
    /// static obstacles otherwise.
    pub fn obstacle_count(&self) -> usize {
        if self.pedestrians.is_empty() {
            self.obstacles.len()
        } else {
            self.pedestrians.len()
        }
    }

    pub fn validate(&self) -> Result<()> {
        candidate_set(self.max_speed).map_err(|_| {
            Error::Config(format!("max_speed {} has no candidate set (use 0.5, 1.0 or 1.5)", self.max_speed))
        })?;
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.robots.is_empty() {
            return Err(Error::Config("scenario has no robots".into()));
        }
        if !(self.budget() > 0.0 && self.goal_tolerance > 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("time budget and tolerance must be positive, noise non-negative".into()));
        }
        if !(self.start_jitter >= 0.0 && self.pedestrian_time_jitter >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            r.params()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate agent id `{}`", r.id)));
            }
        }
        for p in &self.pedestrians {
            p.track.validate()?;
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Config(format!("duplicate agent id `{}`", p.id)));
            }
        }
        match self.mode {
            Mode::UnitTask => {
                if let Some(r) = self.robots.iter().find(|r| r.goal.is_none()) {
                    return Err(Error::Config(format!("robot `{}` has no goal", r.id)));
                }
            }
            Mode::PickAndPlace => {
                let map = self.map.as_ref().ok_or_else(|| Error::Config("pick_and_place needs a map".into()))?;
                map.validate()?;
                if self.tasks.is_empty() {
                    return Err(Error::Config("pick_and_place needs tasks".into()));
                }
                for r in &self.robots {
                    let home = r.home.as_deref().ok_or_else(|| Error::Config(format!("robot `{}` has no home", r.id)))?;
                    map.position(home).map_err(|_| Error::Config(format!("unknown home `{home}`")))?;
                }
                for t in &self.tasks {
                    map.position(&t.pickup).and(map.position(&t.dropoff)).map_err(|e| Error::Config(e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: &str = r#"
        name = "open"
        max_speed = 0.5
        [[robots]]
        id = "r1"
        platform = "freight"
        start = [0.0, 0.0, 0.0]
        goal = [5.0, 0.0]
        [[pedestrians]]
        id = "p1"
        waypoints = [[2.0, -3.0], [2.0, 3.0]]
        speeds = [1.0]
    "#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml(UNIT).unwrap();
        assert_eq!(cfg.mode, Mode::UnitTask);
        assert_eq!(cfg.repetitions, 1);
        assert_eq!(cfg.noise_sigma, 0.01);
        assert!(cfg.delay_compensation);
        assert_eq!(cfg.budget(), 120.0);
        assert_eq!(cfg.kind_label(), "dynamic");
        assert_eq!(cfg.obstacle_count(), 1);
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_settings() {
        for bad in [
            UNIT.replace("max_speed = 0.5", "max_speed = 0.7"),
            UNIT.replace("max_speed = 0.5", "max_speed = 0.5\nrepetitions = 0"),
            UNIT.replace("goal = [5.0, 0.0]", ""),
            UNIT.replace("id = \"p1\"", "id = \"r1\""),
            UNIT.replace("freight", "hovercraft"),
            UNIT.replace("max_speed = 0.5", "max_speed = 0.5\nmode = \"pick_and_place\""),
        ] {
            assert!(ScenarioConfig::from_toml(&bad).is_err(), "{bad}");
        }
    }
}
