use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::world::{apply_ground_truth_dynamics, Control, PlatformParams, RobotState};

/// The three avoidance problems, each with its own barrier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Static,
    Dynamic,
    #[serde(rename = "multirobot")]
    MultiRobot,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Static, Task::Dynamic, Task::MultiRobot];

    pub fn feature_dim(self) -> usize {
        match self {
            Task::Static => 5,
            Task::Dynamic => 9,
            Task::MultiRobot => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Static => "static",
            Task::Dynamic => "dynamic",
            Task::MultiRobot => "multirobot",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Task::Static),
            "dynamic" => Ok(Task::Dynamic),
            "multirobot" | "multi_robot" => Ok(Task::MultiRobot),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// `[obstacle - robot (2), theta, v, omega]`.
pub fn features_static(state: &RobotState, obstacle: Point) -> [f64; 5] {
    [
        obstacle.x - state.x,
        obstacle.y - state.y,
        state.theta,
        state.v,
        state.omega,
    ]
}

/// `[theta, v, omega, p(t-2) - r, p(t-1) - r, p(t) - r]`, with the
/// pedestrian history oldest first and `r` the robot's current position.
pub fn features_dynamic(state: &RobotState, history: &[Point; 3]) -> [f64; 9] {
    let mut f = [0.0; 9];
    f[0] = state.theta;
    f[1] = state.v;
    f[2] = state.omega;
    for (i, p) in history.iter().enumerate() {
        f[3 + 2 * i] = p.x - state.x;
        f[4 + 2 * i] = p.y - state.y;
    }
    f
}

/// `[a - b (2), theta_a, theta_b, v_a, omega_a, v_b, omega_b]`.
pub fn features_multirobot(a: &RobotState, b: &RobotState) -> [f64; 8] {
    [
        a.x - b.x,
        a.y - b.y,
        a.theta,
        b.theta,
        a.v,
        a.omega,
        b.v,
        b.omega,
    ]
}

/// Shifts a three-point history one tick forward assuming the mean
/// velocity over the window persists.
pub fn extrapolate_history(history: &[Point; 3]) -> [Point; 3] {
    let step = (history[2] - history[0]) * 0.5;
    [history[1], history[2], history[2] + step]
}

/// Advances an uncontrolled robot one tick holding its current velocities.
pub fn hold_velocity(state: &RobotState, dt: f64) -> RobotState {
    let params = PlatformParams {
        name: String::new(),
        m_v: f64::INFINITY,
        m_omega: f64::INFINITY,
        delay_h: 0.0,
        max_speed: f64::INFINITY,
        max_omega: f64::INFINITY,
    };
    apply_ground_truth_dynamics(state, &Control::new(state.v, state.omega), &params, dt)
}

/// Everything needed to recompute a sample's features after rolling the
/// controlled robot forward.
#[derive(Clone, Debug, PartialEq)]
pub enum RawContext {
    Static {
        platform: String,
        robot: RobotState,
        obstacle: Point,
    },
    Dynamic {
        platform: String,
        robot: RobotState,
        history: [Point; 3],
    },
    MultiRobot {
        platform: String,
        robot: RobotState,
        other: RobotState,
    },
}

impl RawContext {
    pub fn task(&self) -> Task {
        match self {
            RawContext::Static { .. } => Task::Static,
            RawContext::Dynamic { .. } => Task::Dynamic,
            RawContext::MultiRobot { .. } => Task::MultiRobot,
        }
    }

    pub fn platform(&self) -> &str {
        match self {
            RawContext::Static { platform, .. }
            | RawContext::Dynamic { platform, .. }
            | RawContext::MultiRobot { platform, .. } => platform,
        }
    }

    pub fn robot(&self) -> &RobotState {
        match self {
            RawContext::Static { robot, .. }
            | RawContext::Dynamic { robot, .. }
            | RawContext::MultiRobot { robot, .. } => robot,
        }
    }

    pub fn features(&self) -> Vec<f64> {
        match self {
            RawContext::Static {
                robot, obstacle, ..
            } => features_static(robot, *obstacle).to_vec(),
            RawContext::Dynamic { robot, history, .. } => features_dynamic(robot, history).to_vec(),
            RawContext::MultiRobot { robot, other, .. } => {
                features_multirobot(robot, other).to_vec()
            }
        }
    }

    /// Distance between the controlled robot and the other agent.
    pub fn separation(&self) -> f64 {
        let me = self.robot().position();
        match self {
            RawContext::Static { obstacle, .. } => me.distance(*obstacle),
            RawContext::Dynamic { history, .. } => me.distance(history[2]),
            RawContext::MultiRobot { other, .. } => me.distance(other.position()),
        }
    }

    /// Context one tick later with the robot's next state supplied by the
    /// caller and the other agent extrapolated.
    pub fn with_robot_advanced(&self, next: RobotState, dt: f64) -> RawContext {
        match self {
            RawContext::Static {
                platform, obstacle, ..
            } => RawContext::Static {
                platform: platform.clone(),
                robot: next,
                obstacle: *obstacle,
            },
            RawContext::Dynamic {
                platform, history, ..
            } => RawContext::Dynamic {
                platform: platform.clone(),
                robot: next,
                history: extrapolate_history(history),
            },
            RawContext::MultiRobot {
                platform, other, ..
            } => RawContext::MultiRobot {
                platform: platform.clone(),
                robot: next,
                other: hold_velocity(other, dt),
            },
        }
    }

    /// One-step successor under control `u` and the learned dynamics.
    pub fn successor(&self, u: &Control, dynamics: &DynamicsModel) -> RawContext {
        let next = dynamics.predict_next(self.robot(), u);
        self.with_robot_advanced(next, dynamics.dt)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn static_encoding() {
        let s = RobotState::new(1.0, 2.0, 0.5, 0.3, 0.1);
        assert_eq!(features_static(&s, Point::new(2.0, 3.0)), [1.0, 1.0, 0.5, 0.3, 0.1]);
        let f = features_static(&s, Point::new(1.0, 2.0));
        assert_eq!((f[0], f[1]), (0.0, 0.0));
    }

    #[test]
    fn dynamic_encoding() {
        let s = RobotState::at_rest(0.0, 0.0, 0.0);
        let still = [Point::new(1.0, -1.0); 3];
        let f = features_dynamic(&s, &still);
        assert_eq!(f.len(), 9);
        assert_eq!(&f[3..5], &f[5..7]);
        assert_eq!(&f[5..7], &f[7..9]);

        let walking = [Point::new(1.8, 0.0), Point::new(1.9, 0.0), Point::new(2.0, 0.0)];
        let f = features_dynamic(&s, &walking);
        assert_eq!(&f[3..], &[1.8, 0.0, 1.9, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn multirobot_encoding() {
        let a = RobotState::new(0.0, 0.0, 0.0, 0.5, 0.0);
        let b = RobotState::new(1.0, 0.0, PI, 0.5, 0.0);
        assert_eq!(features_multirobot(&a, &b), [-1.0, 0.0, 0.0, PI, 0.5, 0.0, 0.5, 0.0]);
        let f = features_multirobot(&a, &a);
        assert_eq!((f[0], f[1]), (0.0, 0.0));
    }

    #[test]
    fn history_extrapolation_is_constant_velocity() {
        let h = [Point::new(0.0, 0.0), Point::new(0.1, 0.0), Point::new(0.2, 0.0)];
        let n = extrapolate_history(&h);
        assert!((n[2].x - 0.3).abs() < 1e-12);
        assert_eq!(n[0], h[1]);
    }

    #[test]
    fn held_velocity_robot_moves_straight() {
        let s = RobotState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let n = hold_velocity(&s, 0.1);
        assert_eq!(n, RobotState::new(0.1, 0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
    }
}
