//! Trains (or loads) the model bundle and runs the built-in scenario
//! suites, printing one summary line per scenario.
//!
//! `cargo run --release --example suites -- <model dir> [filter]`
//!
//! Trains into the model dir first when it holds no models. `REPS` sets
//! the repetitions per scenario (default 10).

use std::path::PathBuf;
use std::time::Instant;

use safenav_core::pipeline::{run_pipeline, ModelBundle, PipelineConfig};
use safenav_core::scenario::{run_scenario, suites, Models, RunResult};

fn main() -> safenav_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/models".into()));
    let filter = std::env::args().nth(2).unwrap_or_default();
    let reps: usize = std::env::var("REPS").ok().and_then(|s| s.parse().ok()).unwrap_or(10);
    let t0 = Instant::now();
    let models = if dir.join("barrier-multirobot.txt").exists() {
        ModelBundle::load(&dir)?
    } else {
        let out = run_pipeline(&PipelineConfig::default())?;
        out.models.save(&dir)?;
        println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
        out.models
    };
    let m = Models { dynamics: &models.dynamics, barriers: &models.barriers };
    let all = suites::evaluation(reps, suites::EVALUATION_SEED);
    for cfg in all.iter().filter(|c| c.name.contains(&filter)) {
        let t = Instant::now();
        let res = run_scenario(cfg, m)?;
        println!(
            "{:28} min {:.3} avg-min {:.3} vel {:.3} path {:.2} contact {} done {}/{} ({:.1}s)",
            cfg.name,
            res.worst_distance(),
            res.mean_of(RunResult::min_distance),
            res.mean_of(RunResult::mean_velocity),
            res.mean_of(RunResult::path_length),
            res.runs.iter().map(RunResult::contact_ticks).sum::<usize>(),
            res.runs.iter().filter(|r| r.completed).count(),
            res.runs.len(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
