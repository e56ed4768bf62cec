use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Task;
use super::label::{label_dynamic, label_multirobot, label_static, Label, LabeledSample, LabelingConfig};
use super::{PedestrianEntry, Trajectory, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point};
use crate::world::DT;

/// How recordings are cut up and recombined into labeled training sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub labeling: LabelingConfig,
    /// Entries per trajectory window.
    pub window: usize,
    /// Independent obstacle / partner placements per window.
    pub clones_per_window: usize,
    /// Static obstacles are placed within this distance of the window path.
    pub obstacle_radius: f64,
    /// Closest-approach offset range for pedestrians and partner robots.
    pub pass_offset: f64,
    /// Upper bound on kept samples per label; `0` keeps everything.
    pub max_per_label: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            labeling: LabelingConfig::STATIC,
            window: 100,
            clones_per_window: 3,
            obstacle_radius: 3.0,
            pass_offset: 2.5,
            max_per_label: 4000,
            seed: 0,
        }
    }
}

impl BuildConfig {
    pub fn for_task(task: Task) -> Self {
        let labeling = match task {
            Task::Static => LabelingConfig::STATIC,
            _ => LabelingConfig::DYNAMIC,
        };
        match task {
            Task::Static => Self { labeling, ..Self::default() },
            // Pedestrian encounters need denser, closer passes for the
            // barrier to separate the 0.7 to 1.2 m band.
            Task::Dynamic => Self { labeling, clones_per_window: 8, pass_offset: 1.2, max_per_label: 12000, ..Self::default() },
            Task::MultiRobot => Self { labeling, pass_offset: 2.0, ..Self::default() },
        }
    }

    fn validate(&self) -> Result<()> {
        self.labeling.validate()?;
        if self.window < self.labeling.tau + 3 || self.clones_per_window == 0 {
            return Err(Error::invalid(format!("bad build config {self:?}")));
        }
        Ok(())
    }
}

/// Labeled samples for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task: Task,
    pub samples: Vec<LabeledSample>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.label == label)
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }
}

fn windows<'a>(trajs: &'a [Trajectory], len: usize) -> impl Iterator<Item = Trajectory> + 'a {
    trajs.iter().flat_map(move |t| {
        t.entries.chunks_exact(len).map(move |c| Trajectory {
            platform: t.platform.clone(),
            entries: c.to_vec(),
        })
    })
}

fn cap(task: Task, mut samples: Vec<LabeledSample>, cfg: &BuildConfig, rng: &mut ChaCha8Rng) -> TaskDataset {
    if cfg.max_per_label > 0 {
        samples.shuffle(rng);
        let mut kept = [0usize; 3];
        samples.retain(|s| {
            let k = &mut kept[s.label as usize];
            *k += 1;
            *k <= cfg.max_per_label
        });
    }
    TaskDataset { task, samples }
}

fn random_offset(rng: &mut ChaCha8Rng, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Point::new(r * a.cos(), r * a.sin())
}

/// Static-obstacle samples: each window is labeled against several
/// imaginary obstacles dropped near its path.
pub fn build_static_set(trajs: &[Trajectory], cfg: &BuildConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    for w in windows(trajs, cfg.window) {
        for _ in 0..cfg.clones_per_window {
            let anchor = w.entries[rng.random_range(0..w.len())].position();
            let obstacle = anchor + random_offset(&mut rng, cfg.obstacle_radius);
            samples.extend(label_static(&w, obstacle, &cfg.labeling));
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid("no trajectory windows to build from"));
    }
    Ok(cap(Task::Static, samples, cfg, &mut rng))
}

/// Pedestrian samples: a recorded pedestrian stretch is re-timed onto each
/// robot window and translated so it passes close to the robot.
pub fn build_dynamic_set(
    trajs: &[Trajectory],
    peds: &[Vec<PedestrianEntry>],
    cfg: &BuildConfig,
) -> Result<TaskDataset> {
    cfg.validate()?;
    let need = cfg.window + 2;
    let usable: Vec<&Vec<PedestrianEntry>> = peds.iter().filter(|p| p.len() >= need).collect();
    if usable.is_empty() {
        return Err(Error::invalid(format!("pedestrian recordings shorter than {need} entries")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    for w in windows(trajs, cfg.window) {
        for _ in 0..cfg.clones_per_window {
            let track = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..=track.len() - need);
            let seg = &track[start..start + need];
            let meet = rng.random_range(0..cfg.window);
            let target = w.entries[meet].position() + random_offset(&mut rng, cfg.pass_offset);
            let shift = target - seg[meet + 2].position();
            let t0 = w.entries[0].t - 2.0 * DT;
            let moved: Vec<PedestrianEntry> = seg
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let q = p.position() + shift;
                    PedestrianEntry { t: t0 + i as f64 * DT, x: q.x, y: q.y }
                })
                .collect();
            samples.extend(label_dynamic(&w, &moved, &cfg.labeling)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid("no trajectory windows to build from"));
    }
    Ok(cap(Task::Dynamic, samples, cfg, &mut rng))
}

/// Rotates and translates a window rigidly so that entry `anchor` lands on
/// `target`, then re-stamps its times to `times`.
fn place(w: &Trajectory, anchor: usize, target: Point, angle: f64, times: &[TrajectoryEntry]) -> Trajectory {
    let pivot = w.entries[anchor].position();
    let (s, c) = angle.sin_cos();
    Trajectory {
        platform: w.platform.clone(),
        entries: w
            .entries
            .iter()
            .zip(times)
            .map(|(e, stamp)| {
                let d = e.position() - pivot;
                TrajectoryEntry {
                    t: stamp.t,
                    x: target.x + c * d.x - s * d.y,
                    y: target.y + s * d.x + c * d.y,
                    theta: wrap_angle(e.theta + angle),
                    ..*e
                }
            })
            .collect(),
    }
}

/// Robot-robot samples from pairs of windows, the partner rotated and
/// shifted so it passes near the ego robot.
pub fn build_multirobot_set(trajs: &[Trajectory], cfg: &BuildConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let all: Vec<Trajectory> = windows(trajs, cfg.window).collect();
    if all.len() < 2 {
        return Err(Error::invalid("need at least two trajectory windows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    for (i, a) in all.iter().enumerate() {
        for _ in 0..cfg.clones_per_window {
            let mut j = rng.random_range(0..all.len() - 1);
            if j >= i {
                j += 1;
            }
            let meet = rng.random_range(0..cfg.window);
            let target = a.entries[meet].position() + random_offset(&mut rng, cfg.pass_offset);
            let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let b = place(&all[j], meet, target, angle, &a.entries);
            samples.extend(label_multirobot(a, &b, &cfg.labeling)?);
        }
    }
    Ok(cap(Task::MultiRobot, samples, cfg, &mut rng))
}
