use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::RawContext;
use super::{PedestrianEntry, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Safe,
    Unsafe,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(Label::Safe),
            "unsafe" => Ok(Label::Unsafe),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Collision distance and the horizon of uncertain states before it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    /// Unsafe distance in meters.
    pub d: f64,
    /// Unlabeled horizon in ticks.
    pub tau: usize,
}

impl LabelingConfig {
    pub const STATIC: LabelingConfig = LabelingConfig { d: 0.7, tau: 5 };
    pub const DYNAMIC: LabelingConfig = LabelingConfig { d: 0.7, tau: 12 };

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0) || self.tau == 0 {
            return Err(Error::invalid(format!("bad labeling config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub t: f64,
    pub features: Vec<f64>,
    pub label: Label,
    pub context: RawContext,
}

/// Labels a separation series. `None` marks a discarded entry.
///
/// Without any separation below `d` everything is safe. Otherwise entries
/// below `d` are unsafe, the `tau` entries right before the first unsafe
/// one are unlabeled, earlier entries are safe, and later entries back
/// outside `d` are discarded.
pub fn assign_labels(separations: &[f64], cfg: &LabelingConfig) -> Vec<Option<Label>> {
    let Some(first) = separations.iter().position(|&s| s < cfg.d) else {
        return vec![Some(Label::Safe); separations.len()];
    };
    let unlabeled_from = first.saturating_sub(cfg.tau);
    separations
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i < unlabeled_from {
                Some(Label::Safe)
            } else if i < first {
                Some(Label::Unlabeled)
            } else if s < cfg.d {
                Some(Label::Unsafe)
            } else {
                None
            }
        })
        .collect()
}

fn collect(
    contexts: Vec<(f64, RawContext)>,
    cfg: &LabelingConfig,
) -> Vec<LabeledSample> {
    let seps: Vec<f64> = contexts.iter().map(|(_, c)| c.separation()).collect();
    assign_labels(&seps, cfg)
        .into_iter()
        .zip(contexts)
        .filter_map(|(label, (t, context))| {
            label.map(|label| LabeledSample {
                t,
                features: context.features(),
                label,
                context,
            })
        })
        .collect()
}

/// Labels a trajectory against one imaginary static obstacle.
pub fn label_static(traj: &Trajectory, obstacle: Point, cfg: &LabelingConfig) -> Vec<LabeledSample> {
    let contexts = traj
        .entries
        .iter()
        .map(|e| {
            (
                e.t,
                RawContext::Static {
                    platform: traj.platform.clone(),
                    robot: e.state(),
                    obstacle,
                },
            )
        })
        .collect();
    collect(contexts, cfg)
}

fn tick_index(t: f64, t0: f64, dt: f64) -> i64 {
    ((t - t0) / dt).round() as i64
}

const DT_ALIGN: f64 = crate::world::DT;

/// Labels a robot trajectory against a time-aligned pedestrian recording.
/// Only robot entries with a full three-tick pedestrian history are used.
pub fn label_dynamic(
    robot: &Trajectory,
    ped: &[PedestrianEntry],
    cfg: &LabelingConfig,
) -> Result<Vec<LabeledSample>> {
    let (Some(p0), Some(r0)) = (ped.first(), robot.entries.first()) else {
        return Err(Error::invalid("empty recording"));
    };
    let mut contexts = Vec::new();
    for e in &robot.entries {
        let j = tick_index(e.t, p0.t, DT_ALIGN);
        if j < 2 || j as usize >= ped.len() {
            continue;
        }
        let j = j as usize;
        contexts.push((
            e.t,
            RawContext::Dynamic {
                platform: robot.platform.clone(),
                robot: e.state(),
                history: [ped[j - 2].position(), ped[j - 1].position(), ped[j].position()],
            },
        ));
    }
    if contexts.is_empty() {
        return Err(Error::invalid(format!(
            "robot recording starting at {} s does not overlap the pedestrian recording starting at {} s",
            r0.t, p0.t
        )));
    }
    Ok(collect(contexts, cfg))
}

/// Labels robot `a` against robot `b` over their common time span, from
/// `a`'s point of view.
pub fn label_multirobot(
    a: &Trajectory,
    b: &Trajectory,
    cfg: &LabelingConfig,
) -> Result<Vec<LabeledSample>> {
    let (Some(b0), Some(a0)) = (b.entries.first(), a.entries.first()) else {
        return Err(Error::invalid("empty recording"));
    };
    let other_at = |e: &TrajectoryEntry| {
        let j = tick_index(e.t, b0.t, DT_ALIGN);
        (j >= 0 && (j as usize) < b.entries.len()).then(|| b.entries[j as usize])
    };
    let contexts: Vec<_> = a
        .entries
        .iter()
        .filter_map(|e| {
            other_at(e).map(|o| {
                (
                    e.t,
                    RawContext::MultiRobot {
                        platform: a.platform.clone(),
                        robot: e.state(),
                        other: o.state(),
                    },
                )
            })
        })
        .collect();
    if contexts.is_empty() {
        return Err(Error::invalid(format!(
            "recordings starting at {} s and {} s do not overlap",
            a0.t, b0.t
        )));
    }
    Ok(collect(contexts, cfg))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::world::{Control, RobotState};

    fn straight_line(n: usize, y: f64, speed: f64) -> Trajectory {
        Trajectory {
            platform: "freight".into(),
            entries: (0..n)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    TrajectoryEntry::new(
                        t,
                        RobotState::new(t * speed, y, 0.0, speed, 0.0),
                        Control::new(speed, 0.0),
                    )
                })
                .collect(),
        }
    }

    /// Direct application of the labeling rule to entry `i`, by scanning.
    fn oracle_label(seps: &[f64], i: usize, cfg: &LabelingConfig) -> Option<Label> {
        let any_unsafe = seps.iter().any(|&s| s < cfg.d);
        if !any_unsafe {
            return Some(Label::Safe);
        }
        let unsafe_at_or_before = seps[..=i].iter().any(|&s| s < cfg.d);
        if unsafe_at_or_before {
            return if seps[i] < cfg.d { Some(Label::Unsafe) } else { None };
        }
        let unsafe_within_tau = seps[i + 1..]
            .iter()
            .take(cfg.tau)
            .any(|&s| s < cfg.d);
        Some(if unsafe_within_tau { Label::Unlabeled } else { Label::Safe })
    }

    #[test]
    fn collision_free_pass_is_all_safe() {
        let traj = straight_line(100, 0.0, 1.0);
        let out = label_static(&traj, Point::new(5.0, 1.0), &LabelingConfig { d: 0.7, tau: 5 });
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|s| s.label == Label::Safe));
    }

    #[test]
    fn entering_the_unsafe_disc_at_step_40() {
        // Separation series: 1.0 until step 40, 0.5 for steps 40..50, then 1.0.
        let seps: Vec<f64> = (0..60)
            .map(|i| if (40..50).contains(&i) { 0.5 } else { 1.0 })
            .collect();
        let labels = assign_labels(&seps, &LabelingConfig { d: 0.7, tau: 5 });
        for (i, l) in labels.iter().enumerate() {
            let expected = match i {
                0..=34 => Some(Label::Safe),
                35..=39 => Some(Label::Unlabeled),
                40..=49 => Some(Label::Unsafe),
                _ => None,
            };
            assert_eq!(*l, expected, "step {i}");
        }
    }

    #[test]
    fn early_collision_truncates_unlabeled_window() {
        let labels = assign_labels(&[1.0, 1.0, 0.2], &LabelingConfig { d: 0.7, tau: 5 });
        assert_eq!(labels, vec![Some(Label::Unlabeled), Some(Label::Unlabeled), Some(Label::Unsafe)]);
    }

    #[test]
    fn dynamic_crossing() {
        // Robot parked at the origin; pedestrian walks along x = 0 from
        // y = -4 at 1 m/s, reaching 0.4 m when... direct construction below.
        let robot = Trajectory {
            platform: "freight".into(),
            entries: (0..80)
                .map(|i| TrajectoryEntry::new(i as f64 * 0.1, RobotState::default(), Control::STOP))
                .collect(),
        };
        // Pedestrian distance: 5.0 - 0.1 * i for i in the recording, so
        // separation first drops below 0.7 at i = 44 (0.6 m), t = 4.4 s.
        // Shift the recording so that the first unsafe tick lands at 4.0 s.
        let ped: Vec<PedestrianEntry> = (0..80)
            .map(|i| {
                let t = i as f64 * 0.1;
                let dist = ((46 - i as i64) as f64 / 10.0).max(0.4);
                PedestrianEntry { t, x: 0.0, y: dist }
            })
            .collect();
        // dist < 0.7 first at i = 40 (0.6 m); 0.4 m from i = 42 on.
        let out = label_dynamic(&robot, &ped, &LabelingConfig::DYNAMIC).unwrap();
        let unlabeled: Vec<f64> = out
            .iter()
            .filter(|s| s.label == Label::Unlabeled)
            .map(|s| s.t)
            .collect();
        assert_eq!(unlabeled.len(), 12);
        assert!((unlabeled.last().unwrap() - 3.9).abs() < 1e-9);
        assert!((unlabeled[0] - 2.8).abs() < 1e-9);
        let first_unsafe = out.iter().find(|s| s.label == Label::Unsafe).unwrap();
        assert!((first_unsafe.t - 4.0).abs() < 1e-9);
        assert!(out.iter().all(|s| s.features.len() == 9));
    }

    #[test]
    fn dynamic_parallel_is_safe_and_disjoint_times_rejected() {
        let robot = straight_line(50, 0.0, 1.0);
        let ped: Vec<PedestrianEntry> = (0..50)
            .map(|i| PedestrianEntry { t: i as f64 * 0.1, x: i as f64 * 0.1, y: 2.0 })
            .collect();
        let out = label_dynamic(&robot, &ped, &LabelingConfig::DYNAMIC).unwrap();
        assert_eq!(out.len(), 48);
        assert!(out.iter().all(|s| s.label == Label::Safe));

        let late: Vec<PedestrianEntry> = ped.iter().map(|p| PedestrianEntry { t: p.t + 100.0, ..*p }).collect();
        assert!(label_dynamic(&robot, &late, &LabelingConfig::DYNAMIC).is_err());
    }

    #[test]
    fn multirobot_offset_and_head_on() {
        let a = straight_line(60, 0.0, 0.5);
        let b = straight_line(60, 3.0, 0.5);
        let out = label_multirobot(&a, &b, &LabelingConfig::DYNAMIC).unwrap();
        assert!(out.iter().all(|s| s.label == Label::Safe));
        assert!(out.iter().all(|s| s.features.len() == 8));

        // Head-on: a from x=0 east, b from x=6 west, both 0.5 m/s.
        let b = Trajectory {
            platform: "jackal".into(),
            entries: (0..60)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    let x = (6.0 - 0.5 * t).max(0.5 * t + 0.3);
                    TrajectoryEntry::new(t, RobotState::new(x, 0.0, std::f64::consts::PI, 0.5, 0.0), Control::new(0.5, 0.0))
                })
                .collect(),
        };
        let out = label_multirobot(&a, &b, &LabelingConfig::DYNAMIC).unwrap();
        let seps: Vec<f64> = a.entries.iter().zip(&b.entries).map(|(p, q)| p.position().distance(q.position())).collect();
        let first = seps.iter().position(|&s| s < 0.7).unwrap();
        let unsafe_ts: Vec<f64> = out.iter().filter(|s| s.label == Label::Unsafe).map(|s| s.t).collect();
        assert!(!unsafe_ts.is_empty());
        assert!((unsafe_ts[0] - a.entries[first].t).abs() < 1e-9);
        assert_eq!(out.iter().filter(|s| s.label == Label::Unlabeled).count(), 12);
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(
            seps in proptest::collection::vec(0.0f64..2.0, 1..120),
            tau in 1usize..15,
        ) {
            let cfg = LabelingConfig { d: 0.7, tau };
            let labels = assign_labels(&seps, &cfg);
            prop_assert_eq!(labels.len(), seps.len());
            for i in 0..seps.len() {
                prop_assert_eq!(labels[i], oracle_label(&seps, i, &cfg));
                match labels[i] {
                    Some(Label::Unsafe) => prop_assert!(seps[i] < cfg.d),
                    Some(Label::Safe) => prop_assert!(seps[i] >= cfg.d),
                    _ => {}
                }
            }
        }
    }
}
