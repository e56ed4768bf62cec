pub mod cbf;
pub mod controller;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod fleet;
pub mod geometry;
pub mod neural;
pub mod ood;
pub mod pipeline;
pub mod scenario;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{wrap_angle, Point};
pub use world::{
    apply_ground_truth_dynamics, candidate_set, step_world, Control, PedestrianTrack,
    PlatformParams, RobotState, WorldState, DT,
};
