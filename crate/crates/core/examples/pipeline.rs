//! Runs the full training pipeline with default settings and prints the
//! per-stage reports.

use std::time::Instant;

use safenav_core::cbf::invariance_probe;
use safenav_core::dataset::Task;
use safenav_core::pipeline::{build_task_set, generate_data, train_all_dynamics, train_task_ood, PipelineConfig};

fn main() -> safenav_core::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let t0 = Instant::now();
    let raw = generate_data(&cfg)?;
    println!("data: {:.1}s", t0.elapsed().as_secs_f64());
    let (dynamics, reports) = train_all_dynamics(&raw, &cfg)?;
    for r in &reports {
        println!("dynamics {r:?}");
    }
    println!("dynamics done: {:.1}s", t0.elapsed().as_secs_f64());
    for &task in &cfg.tasks {
        let data = build_task_set(task, &raw, &cfg)?;
        println!(
            "{task}: safe {} unsafe {} unlabeled {}",
            data.count(safenav_core::dataset::Label::Safe),
            data.count(safenav_core::dataset::Label::Unsafe),
            data.count(safenav_core::dataset::Label::Unlabeled)
        );
        let r = train_task_ood(&data, &cfg)?;
        let feats = data.features();
        let accepted = feats.iter().filter(|f| r.is_in_distribution(f).unwrap()).count();
        println!("  ood accepts {accepted}/{} at {:.1}s", feats.len(), t0.elapsed().as_secs_f64());
        let cbf_cfg = cfg.cbf_config(task);
        let (b, rep) = safenav_core::cbf::train_cbf(&data, &dynamics, &r, &cbf_cfg)?;
        let l = &rep.epoch_losses;
        println!(
            "  cbf safe {:.4} unsafe {:.4} promoted {} demoted {} loss {:.4} -> {:.4} at {:.1}s",
            rep.heldout_safe_accuracy, rep.heldout_unsafe_accuracy, rep.promoted, rep.demoted, l[0], l[l.len() - 1],
            t0.elapsed().as_secs_f64()
        );
        let probes: Vec<_> = data.samples.iter().map(|s| s.context.clone()).collect();
        let p = invariance_probe(&b, &dynamics, &r, &probes, &cbf_cfg)?;
        println!("  probe on data {}/{} = {:.4}", p.satisfied, p.checked, p.fraction());
        let _ = Task::ALL;
    }
    Ok(())
}
