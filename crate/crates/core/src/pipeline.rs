//! End-to-end training: simulated data collection, per-platform dynamics,
//! labeled sets, rejection models and barriers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::{train_cbf, BarrierModel, CbfReport, CbfTrainConfig};
use crate::dataset::{
    build_dynamic_set, build_multirobot_set, build_static_set, generate_pedestrian_tracks,
    generate_robot_trajectories, BuildConfig, PedestrianEntry, Task, TaskDataset, TeleopConfig,
    Trajectory,
};
use crate::dynamics::{train_dynamics, DynamicsConfig, DynamicsModel, DynamicsSet};
use crate::error::{Error, Result};
use crate::ood::{data_bounds, train_ood, OodConfig, RejectionModel};
use crate::world::PlatformParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub platforms: Vec<String>,
    /// Seconds of pseudo-teleop recording per platform.
    pub robot_duration: f64,
    pub pedestrian_count: usize,
    pub pedestrian_duration: f64,
    pub pedestrian_speed: (f64, f64),
    pub teleop: TeleopConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            platforms: vec!["freight".into(), "jackal".into(), "megarover".into()],
            robot_duration: 600.0,
            pedestrian_count: 2,
            pedestrian_duration: 1800.0,
            pedestrian_speed: (0.4, 1.6),
            teleop: TeleopConfig::default(),
        }
    }
}

/// Per-task settings; missing tasks fall back to the task defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    #[serde(default)]
    pub build: Option<BuildConfig>,
    #[serde(default)]
    pub ood: Option<OodConfig>,
    #[serde(default)]
    pub cbf: Option<CbfTrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub dynamics: DynamicsConfig,
    pub tasks: Vec<Task>,
    pub task: BTreeMap<String, TaskConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            dynamics: DynamicsConfig::default(),
            tasks: Task::ALL.to_vec(),
            task: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn task_cfg(&self, task: Task) -> Option<&TaskConfig> {
        self.task.get(task.as_str())
    }

    pub fn build_config(&self, task: Task) -> BuildConfig {
        let mut cfg = self.task_cfg(task).and_then(|t| t.build.clone()).unwrap_or_else(|| BuildConfig::for_task(task));
        cfg.seed = self.seed ^ task_salt(task);
        cfg
    }

    pub fn ood_config(&self, task: Task) -> OodConfig {
        let mut cfg = self.task_cfg(task).and_then(|t| t.ood.clone()).unwrap_or_else(|| OodConfig::for_task(task));
        cfg.train.seed = self.seed ^ task_salt(task) ^ 0x0d;
        cfg
    }

    pub fn cbf_config(&self, task: Task) -> CbfTrainConfig {
        let mut cfg = self.task_cfg(task).and_then(|t| t.cbf.clone()).unwrap_or_else(|| CbfTrainConfig::for_task(task));
        cfg.seed = self.seed ^ task_salt(task) ^ 0xcbf;
        cfg
    }

    pub fn dynamics_config(&self, platform_index: usize) -> DynamicsConfig {
        let mut cfg = self.dynamics.clone();
        cfg.train.seed = self.seed.wrapping_add(1000 + platform_index as u64);
        cfg
    }
}

fn task_salt(task: Task) -> u64 {
    match task {
        Task::Static => 0x100,
        Task::Dynamic => 0x200,
        Task::MultiRobot => 0x300,
    }
}

/// Recorded robot and pedestrian data.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub trajectories: Vec<Trajectory>,
    pub pedestrians: Vec<Vec<PedestrianEntry>>,
}

pub fn generate_data(cfg: &PipelineConfig) -> Result<RawData> {
    let d = &cfg.data;
    let trajectories = d
        .platforms
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let params = PlatformParams::by_name(name)?;
            generate_robot_trajectories(&params, d.robot_duration, cfg.seed.wrapping_add(i as u64), &d.teleop)
        })
        .collect::<Result<Vec<_>>>()?;
    let pedestrians = generate_pedestrian_tracks(
        d.pedestrian_count,
        d.pedestrian_duration,
        d.pedestrian_speed,
        cfg.seed.wrapping_add(500),
        &d.teleop.arena,
    )?;
    Ok(RawData { trajectories, pedestrians })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub platform: String,
    pub heldout_mse: f64,
    pub baseline_mse: f64,
    pub m_v: f64,
    pub m_omega: f64,
    pub zero_correction: bool,
}

pub fn train_all_dynamics(raw: &RawData, cfg: &PipelineConfig) -> Result<(DynamicsSet, Vec<DynamicsReport>)> {
    let mut set = DynamicsSet::new();
    let mut reports = Vec::new();
    for (i, name) in cfg.data.platforms.iter().enumerate() {
        let params = PlatformParams::by_name(name)?;
        let trajs: Vec<Trajectory> = raw.trajectories.iter().filter(|t| &t.platform == name).cloned().collect();
        let fit = train_dynamics(&trajs, &params, &cfg.dynamics_config(i))?;
        reports.push(DynamicsReport {
            platform: name.clone(),
            heldout_mse: fit.heldout_mse,
            baseline_mse: fit.baseline_mse,
            m_v: fit.model.params.m_v,
            m_omega: fit.model.params.m_omega,
            zero_correction: fit.zero_correction,
        });
        set.insert(name.clone(), fit.model);
    }
    Ok((set, reports))
}

pub fn build_task_set(task: Task, raw: &RawData, cfg: &PipelineConfig) -> Result<TaskDataset> {
    let build = cfg.build_config(task);
    match task {
        Task::Static => build_static_set(&raw.trajectories, &build),
        Task::Dynamic => build_dynamic_set(&raw.trajectories, &raw.pedestrians, &build),
        Task::MultiRobot => build_multirobot_set(&raw.trajectories, &build),
    }
}

pub fn train_task_ood(data: &TaskDataset, cfg: &PipelineConfig) -> Result<RejectionModel> {
    let features = data.features();
    let bounds = data_bounds(&features)?;
    let mut model = train_ood(&features, &bounds, &cfg.ood_config(data.task))?;
    model.net.tag = data.task.as_str().to_string();
    Ok(model)
}

/// Every trained model the controller needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub dynamics: DynamicsSet,
    pub rejection: BTreeMap<Task, RejectionModel>,
    pub barriers: BTreeMap<Task, BarrierModel>,
}

impl ModelBundle {
    pub fn barrier(&self, task: Task) -> Result<&BarrierModel> {
        self.barriers.get(&task).ok_or_else(|| Error::MissingBarrier(task.as_str().to_string()))
    }

    /// Writes `dynamics-<platform>.txt`, `rejection-<task>.txt` and
    /// `barrier-<task>.txt` into `dir`; returns the written paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, m) in &self.dynamics {
            let p = dir.join(format!("dynamics-{name}.txt"));
            m.save(&p)?;
            written.push(p);
        }
        for (task, m) in &self.rejection {
            let p = dir.join(format!("rejection-{task}.txt"));
            m.save(&p)?;
            written.push(p);
        }
        for (task, m) in &self.barriers {
            let p = dir.join(format!("barrier-{task}.txt"));
            m.save(&p)?;
            written.push(p);
        }
        Ok(written)
    }

    /// Loads whatever `.txt` model files `dir` holds.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut bundle = ModelBundle { dynamics: DynamicsSet::new(), rejection: BTreeMap::new(), barriers: BTreeMap::new() };
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
            if let Some(name) = stem.strip_prefix("dynamics-") {
                bundle.dynamics.insert(name.to_string(), DynamicsModel::load(&p)?);
            } else if let Some(task) = stem.strip_prefix("rejection-") {
                bundle.rejection.insert(task.parse()?, RejectionModel::load(&p)?);
            } else if let Some(task) = stem.strip_prefix("barrier-") {
                bundle.barriers.insert(task.parse()?, BarrierModel::load(&p)?);
            }
        }
        Ok(bundle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub samples: BTreeMap<String, usize>,
    pub cbf: CbfReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub dynamics: Vec<DynamicsReport>,
    pub tasks: Vec<TaskReport>,
}

/// Products of a full training run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub raw: RawData,
    pub datasets: BTreeMap<Task, TaskDataset>,
    pub models: ModelBundle,
    pub report: PipelineReport,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let raw = generate_data(cfg)?;
    let (dynamics, dyn_reports) = train_all_dynamics(&raw, cfg)?;
    let mut models = ModelBundle { dynamics, rejection: BTreeMap::new(), barriers: BTreeMap::new() };
    let mut datasets = BTreeMap::new();
    let mut tasks = Vec::new();
    for &task in &cfg.tasks {
        let data = build_task_set(task, &raw, cfg)?;
        let r = train_task_ood(&data, cfg)?;
        let (b, cbf) = train_cbf(&data, &models.dynamics, &r, &cfg.cbf_config(task))?;
        let samples = [crate::dataset::Label::Safe, crate::dataset::Label::Unsafe, crate::dataset::Label::Unlabeled]
            .iter()
            .map(|&l| (l.as_str().to_string(), data.count(l)))
            .collect();
        tasks.push(TaskReport { task, samples, cbf });
        models.rejection.insert(task, r);
        models.barriers.insert(task, b);
        datasets.insert(task, data);
    }
    Ok(PipelineOutput { raw, datasets, models, report: PipelineReport { dynamics: dyn_reports, tasks } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_toml_overrides() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seed = 3
            tasks = ["static"]
            [data]
            robot_duration = 120.0
            [task.static.cbf]
            epochs = 5
            hidden = [8, 8]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.tasks, vec![Task::Static]);
        assert_eq!(cfg.data.robot_duration, 120.0);
        assert_eq!(cfg.data.pedestrian_count, 2);
        assert_eq!(cfg.cbf_config(Task::Static).epochs, 5);
        assert_eq!(cfg.cbf_config(Task::Dynamic).hidden, vec![128, 128]);
        assert_eq!(cfg.ood_config(Task::Dynamic).c, 0.1);
        assert!(PipelineConfig::from_toml("seed = \"x\"").is_err());
    }
}
