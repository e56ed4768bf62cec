//! `safenav`: data generation, model training, scenario runs and reports.
//!
//! Every command writes its products under `--out` together with a
//! `manifest-<command>.json` listing inputs, seeds and model hashes.

mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use safenav_core::cbf::train_cbf;
use safenav_core::dataset::{
    read_labeled, read_trajectories, write_labeled, write_pedestrians, write_trajectories, Label, Task, TaskDataset,
};
use safenav_core::dynamics::train_dynamics;
use safenav_core::neural::stack_rows;
use safenav_core::pipeline::{build_task_set, generate_data, train_task_ood, ModelBundle, PipelineConfig};
use safenav_core::scenario::{emit_report, run_scenario, suites, unit_table, fleet_table, Models, ScenarioConfig};
use safenav_core::PlatformParams;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "safenav", version, about = "Learned barrier-function navigation for warehouse robot fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restricts the command to one platform.
    #[arg(long)]
    platform: Option<String>,
    /// Restricts the command to one task.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand)]
enum Command {
    /// Records pseudo-teleop robot runs and pedestrian tracks, then builds
    /// the labeled set of every task.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Fits the per-platform dynamics refinement.
    TrainDynamics {
        #[command(flatten)]
        common: Common,
        /// Directory holding `trajectories.txt`; defaults to `--out`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fits the per-task rejection model.
    TrainOod {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Trains the per-task barrier.
    TrainCbf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory with dynamics and rejection models; defaults to `--out`.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Runs one scenario file (or a built-in suite) and writes its tables,
    /// tick logs and trajectory files.
    RunScenario {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
        /// Built-in scenario instead of `--config`: static, dynamic,
        /// head-to-head, delay-on, delay-off, pick-and-place.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        /// Adds per-cell standard deviation columns.
        #[arg(long)]
        verbose: bool,
    },
    /// Runs the full evaluation grid and writes the report tables.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        verbose: bool,
    },
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &common.platform {
        PlatformParams::by_name(p)?;
        cfg.data.platforms = vec![p.clone()];
    }
    if let Some(t) = common.task {
        cfg.tasks = vec![t];
    }
    Ok(cfg)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn labeled_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("labeled-{task}.txt"))
}

fn load_task_set(dir: &Path, task: Task, manifest: &mut Manifest) -> Result<TaskDataset> {
    let path = labeled_path(dir, task);
    let samples = read_labeled(&path).with_context(|| format!("run generate-data first; missing {}", path.display()))?;
    manifest.input(&path)?;
    Ok(TaskDataset { task, samples })
}

#[derive(Serialize)]
struct SetSummary {
    task: Task,
    safe: usize,
    unsafe_: usize,
    unlabeled: usize,
}

fn generate(common: &Common) -> Result<()> {
    let cfg = pipeline_config(common)?;
    let out = &common.out;
    create(out)?;
    let mut m = Manifest::new("generate-data", common.config.as_deref())?;
    m.seed("pipeline", cfg.seed);
    let raw = generate_data(&cfg)?;
    let tp = out.join("trajectories.txt");
    write_trajectories(&tp, &raw.trajectories)?;
    let pp = out.join("pedestrians.txt");
    write_pedestrians(&pp, &raw.pedestrians)?;
    m.output(&tp)?;
    m.output(&pp)?;
    let mut summary = Vec::new();
    for &task in &cfg.tasks {
        let data = build_task_set(task, &raw, &cfg)?;
        m.seed(format!("build-{task}"), cfg.build_config(task).seed);
        let path = labeled_path(out, task);
        write_labeled(&path, &data.samples)?;
        m.output(&path)?;
        summary.push(SetSummary {
            task,
            safe: data.count(Label::Safe),
            unsafe_: data.count(Label::Unsafe),
            unlabeled: data.count(Label::Unlabeled),
        });
        println!("{task}: {} samples", data.samples.len());
    }
    let sp = out.join("data-summary.json");
    write_json(&sp, &summary)?;
    m.output(&sp)?;
    m.write(out)?;
    Ok(())
}

#[derive(Serialize)]
struct DynamicsSummary {
    platform: String,
    heldout_mse: f64,
    baseline_mse: f64,
    m_v: f64,
    m_omega: f64,
    zero_correction: bool,
}

fn dynamics(common: &Common, data: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(common)?;
    let out = &common.out;
    create(out)?;
    let data = data.unwrap_or(out);
    let mut m = Manifest::new("train-dynamics", common.config.as_deref())?;
    let tp = data.join("trajectories.txt");
    let trajs = read_trajectories(&tp).with_context(|| format!("run generate-data first; missing {}", tp.display()))?;
    m.input(&tp)?;
    let all = PipelineConfig::default().data.platforms;
    let mut summary = Vec::new();
    for name in &cfg.data.platforms {
        let mine: Vec<_> = trajs.iter().filter(|t| &t.platform == name).cloned().collect();
        if mine.is_empty() {
            bail!("no trajectories for platform `{name}` in {}", tp.display());
        }
        // Same seed as the in-process pipeline, by position in the default list.
        let index = all.iter().position(|p| p == name).unwrap_or(0);
        let dcfg = cfg.dynamics_config(index);
        m.seed(format!("dynamics-{name}"), dcfg.train.seed);
        let fit = train_dynamics(&mine, &PlatformParams::by_name(name)?, &dcfg)?;
        let path = out.join(format!("dynamics-{name}.txt"));
        fit.model.save(&path)?;
        m.model(&path)?;
        println!("{name}: held-out mse {:.3e} (kinematic {:.3e})", fit.heldout_mse, fit.baseline_mse);
        summary.push(DynamicsSummary {
            platform: name.clone(),
            heldout_mse: fit.heldout_mse,
            baseline_mse: fit.baseline_mse,
            m_v: fit.model.params.m_v,
            m_omega: fit.model.params.m_omega,
            zero_correction: fit.zero_correction,
        });
    }
    let sp = out.join("report-dynamics.json");
    write_json(&sp, &summary)?;
    m.output(&sp)?;
    m.write(out)?;
    Ok(())
}

fn ood(common: &Common, data: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(common)?;
    let out = &common.out;
    create(out)?;
    let data = data.unwrap_or(out);
    let mut m = Manifest::new("train-ood", common.config.as_deref())?;
    for &task in &cfg.tasks {
        let set = load_task_set(data, task, &mut m)?;
        m.seed(format!("ood-{task}"), cfg.ood_config(task).train.seed);
        let r = train_task_ood(&set, &cfg)?;
        let feats = set.features();
        let accepted = r.in_distribution_batch(stack_rows(&feats)?.view())?.iter().filter(|&&a| a).count();
        let path = out.join(format!("rejection-{task}.txt"));
        r.save(&path)?;
        m.model(&path)?;
        println!("{task}: accepts {accepted}/{} training samples", feats.len());
    }
    m.write(out)?;
    Ok(())
}

fn cbf(common: &Common, data: Option<&Path>, models: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(common)?;
    let out = &common.out;
    create(out)?;
    let data = data.unwrap_or(out);
    let models = models.unwrap_or(out);
    let mut m = Manifest::new("train-cbf", common.config.as_deref())?;
    let bundle = ModelBundle::load(models)?;
    if bundle.dynamics.is_empty() {
        bail!("no dynamics models in {}; run train-dynamics first", models.display());
    }
    for name in bundle.dynamics.keys() {
        m.input(&models.join(format!("dynamics-{name}.txt")))?;
    }
    for &task in &cfg.tasks {
        let set = load_task_set(data, task, &mut m)?;
        let r = bundle
            .rejection
            .get(&task)
            .with_context(|| format!("no rejection model for {task}; run train-ood first"))?;
        m.input(&models.join(format!("rejection-{task}.txt")))?;
        let ccfg = cfg.cbf_config(task);
        m.seed(format!("cbf-{task}"), ccfg.seed);
        let (b, report) = train_cbf(&set, &bundle.dynamics, r, &ccfg)?;
        let path = out.join(format!("barrier-{task}.txt"));
        b.save(&path)?;
        m.model(&path)?;
        let rp = out.join(format!("report-cbf-{task}.json"));
        write_json(&rp, &report)?;
        m.output(&rp)?;
        println!(
            "{task}: held-out sign accuracy safe {:.4} unsafe {:.4}",
            report.heldout_safe_accuracy, report.heldout_unsafe_accuracy
        );
    }
    m.write(out)?;
    Ok(())
}

fn builtin(name: &str, reps: usize, seed: u64) -> Result<Vec<ScenarioConfig>> {
    Ok(match name {
        "static" => suites::SPEEDS.iter().map(|&v| suites::unit_static(1, v, reps, seed)).collect(),
        "dynamic" => suites::SPEEDS.iter().map(|&v| suites::unit_dynamic(1, 1, v, reps, seed)).collect(),
        "grid" => suites::safety_grid(reps, seed),
        "head-to-head" => vec![suites::head_to_head(1.0, reps, seed)],
        "delay-on" => vec![suites::delay_ablation(true, reps, seed)],
        "delay-off" => vec![suites::delay_ablation(false, reps, seed)],
        "pick-and-place" => vec![suites::pick_and_place(0, reps, seed), suites::pick_and_place(2, reps, seed)],
        other => bail!("unknown suite `{other}`"),
    })
}

fn load_models(dir: &Path, m: &mut Manifest) -> Result<ModelBundle> {
    let bundle = ModelBundle::load(dir).with_context(|| format!("loading models from {}", dir.display()))?;
    for name in bundle.dynamics.keys() {
        m.model(&dir.join(format!("dynamics-{name}.txt")))?;
    }
    for task in bundle.barriers.keys() {
        m.model(&dir.join(format!("barrier-{task}.txt")))?;
    }
    Ok(bundle)
}

fn run_all(
    command: &str,
    common: &Common,
    models: &Path,
    scenarios: Vec<ScenarioConfig>,
    verbose: bool,
) -> Result<()> {
    let out = &common.out;
    create(out)?;
    let mut m = Manifest::new(command, common.config.as_deref())?;
    let bundle = load_models(models, &mut m)?;
    let mm = Models { dynamics: &bundle.dynamics, barriers: &bundle.barriers };
    let mut results = Vec::new();
    for cfg in scenarios {
        m.seed(cfg.name.clone(), cfg.seed);
        let res = run_scenario(&cfg, mm)?;
        eprintln!("{}: {} reps", cfg.name, res.runs.len());
        results.push(res);
    }
    for p in emit_report(&results, out, verbose)? {
        m.output(&p)?;
    }
    print!("{}", unit_table(&results, verbose));
    print!("{}", fleet_table(&results, verbose));
    m.write(out)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData { common } => generate(&common),
        Command::TrainDynamics { common, data } => dynamics(&common, data.as_deref()),
        Command::TrainOod { common, data } => ood(&common, data.as_deref()),
        Command::TrainCbf { common, data, models } => cbf(&common, data.as_deref(), models.as_deref()),
        Command::RunScenario { common, models, suite, reps, verbose } => {
            let mut scenarios = match (&common.config, &suite) {
                (Some(p), None) => vec![ScenarioConfig::load(p)?],
                (None, Some(name)) => builtin(name, reps.unwrap_or(10), common.seed.unwrap_or(suites::EVALUATION_SEED))?,
                _ => bail!("give exactly one of --config or --suite"),
            };
            for s in scenarios.iter_mut() {
                if let Some(seed) = common.seed {
                    s.seed = seed;
                }
                if let Some(r) = reps {
                    s.repetitions = r;
                }
                if let Some(p) = &common.platform {
                    for r in s.robots.iter_mut() {
                        r.platform = p.clone();
                    }
                }
                s.validate()?;
            }
            run_all("run-scenario", &common, &models, scenarios, verbose)
        }
        Command::Report { common, models, reps, verbose } => {
            let mut scenarios = suites::evaluation(reps, common.seed.unwrap_or(suites::EVALUATION_SEED));
            if let Some(t) = common.task {
                let keep = match t {
                    Task::Static => "static",
                    Task::Dynamic => "dynamic",
                    Task::MultiRobot => "multirobot",
                };
                scenarios.retain(|s| s.kind_label() == keep);
            }
            run_all("report", &common, &models, scenarios, verbose)
        }
    }
}
