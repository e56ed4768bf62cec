//! Fixtures shared by the benchmarks.

use safenav_core::cbf::BarrierModel;
use safenav_core::controller::{AgentTrack, BarrierSet};
use safenav_core::dataset::Task;
use safenav_core::dynamics::DynamicsModel;
use safenav_core::neural::{Mlp, ModelRole, OutputActivation};
use safenav_core::{PlatformParams, Point, DT};

/// Randomly initialised barriers at the default training widths.
pub fn barriers(seed: u64) -> BarrierSet {
    Task::ALL
        .iter()
        .map(|&task| {
            let hidden = if task == Task::Static { 64 } else { 128 };
            let net = Mlp::new(ModelRole::Barrier, &[task.feature_dim(), hidden, hidden, 1], OutputActivation::Identity, seed)
                .expect("valid sizes");
            (task, BarrierModel::new(net, task).expect("matching task"))
        })
        .collect()
}

pub fn dynamics() -> DynamicsModel {
    DynamicsModel::kinematic(PlatformParams::freight(), DT).expect("valid platform")
}

/// One obstacle, one walking pedestrian and one declared robot nearby.
pub fn agents() -> Vec<AgentTrack> {
    vec![
        AgentTrack::observed("o", [Point::new(2.0, 0.5); 3]),
        AgentTrack::observed("p", [Point::new(1.0, -2.2), Point::new(1.0, -2.1), Point::new(1.0, -2.0)]),
        AgentTrack::robot(
            "r2",
            "jackal",
            [Point::new(3.0, 1.0); 3],
            safenav_core::RobotState::new(3.0, 1.0, std::f64::consts::PI, 0.5, 0.0),
        ),
    ]
}
