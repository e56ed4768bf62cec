//! Trajectory recording types, simulated data collection, safety labeling
//! and per-task feature encodings.

mod build;
mod features;
mod generate;
mod io;
mod label;

pub use build::{build_dynamic_set, build_multirobot_set, build_static_set, BuildConfig, TaskDataset};
pub use features::{
    extrapolate_history, features_dynamic, hold_velocity, features_multirobot, features_static, RawContext, Task,
};
pub use generate::{generate_pedestrian_tracks, generate_robot_trajectories, Arena, TeleopConfig};
pub use io::{
    read_labeled, read_pedestrians, read_trajectories, write_labeled, write_pedestrians,
    write_trajectories,
};
pub use label::{
    assign_labels, label_dynamic, label_multirobot, label_static, Label, LabeledSample,
    LabelingConfig,
};

use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::world::{Control, RobotState};

/// One 0.1 s robot record: pose, velocities and the control executed
/// during the following step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub u_v: f64,
    pub u_omega: f64,
}

impl TrajectoryEntry {
    pub fn new(t: f64, state: RobotState, control: Control) -> Self {
        Self {
            t,
            x: state.x,
            y: state.y,
            theta: state.theta,
            v: state.v,
            omega: state.omega,
            u_v: control.u_v,
            u_omega: control.u_omega,
        }
    }

    pub fn state(&self) -> RobotState {
        RobotState::new(self.x, self.y, self.theta, self.v, self.omega)
    }

    pub fn control(&self) -> Control {
        Control::new(self.u_v, self.u_omega)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Contiguous robot recording from one platform.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub platform: String,
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One 0.1 s pedestrian record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianEntry {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl PedestrianEntry {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}
