//! The shipped example configs parse, validate and survive a round trip.

use std::path::{Path, PathBuf};

use safenav_core::pipeline::PipelineConfig;
use safenav_core::scenario::{Mode, ScenarioConfig};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn pipeline_file_matches_the_defaults() {
    let cfg = PipelineConfig::load(config("pipeline.toml")).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn quick_pipeline_keeps_task_labeling() {
    let cfg = PipelineConfig::load(config("quick.toml")).unwrap();
    for task in safenav_core::dataset::Task::ALL {
        let build = cfg.build_config(task);
        assert_eq!(build.labeling, safenav_core::dataset::BuildConfig::for_task(task).labeling, "{task}");
        assert_eq!(build.max_per_label, 300);
        assert_eq!(cfg.cbf_config(task).epochs, 2);
    }
    assert_eq!(cfg.dynamics.train.epochs, 3);
}

#[test]
fn scenario_files_validate() {
    let crossing = ScenarioConfig::load(config("scenario-crossing.toml")).unwrap();
    assert_eq!(crossing.kind_label(), "dynamic");
    assert_eq!(crossing.controller.horizon, Some(20));
    let warehouse = ScenarioConfig::load(config("scenario-warehouse.toml")).unwrap();
    assert_eq!(warehouse.mode, Mode::PickAndPlace);
    assert_eq!(warehouse.map.as_ref().unwrap().junctions().count(), 2);
    for cfg in [crossing, warehouse] {
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
