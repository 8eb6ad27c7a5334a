//! Stops a run halfway, resumes it from its newest checkpoint and checks the
//! result against an uninterrupted run.

use fairdgcl::dataset::split_interactions;
use fairdgcl::synthetic::PlantedBias;
use fairdgcl::trainer::{load_checkpoint, RunDir, TrainConfig, TrainData, Trainer};

fn main() -> fairdgcl::Result<()> {
    let ds = PlantedBias::default().generate(2)?;
    let split = split_interactions(&ds.records, (0.8, 0.1, 0.1), 2)?;
    let data = TrainData::new(&split, ds.partition.clone(), ds.n_users(), ds.n_items())?;
    let cfg = TrainConfig {
        dim: 16,
        epochs: 6,
        batch_size: 256,
        nce_batch: 128,
        scorer_hidden: 16,
        disc_hidden: 16,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };

    let straight = Trainer::new(cfg.clone(), &data)?.train()?;

    let dir = tempfile::tempdir().expect("temp dir");
    let run = RunDir::create(dir.path())?;
    let mut first = Trainer::new(cfg, &data)?.with_run_dir(run.clone())?;
    for _ in 0..3 {
        first.run_epoch()?;
    }
    drop(first);
    let latest = run.latest_epoch().expect("checkpoints written");
    println!("interrupted after epoch {latest}");

    let state = load_checkpoint(&run.checkpoint_path(latest))?;
    let best = run.best_path().map(|p| load_checkpoint(&p)).transpose()?;
    let resumed = Trainer::resume(state, best, &data)?.with_run_dir(run)?.train()?;
    println!("resumed to epoch {}", resumed.last.epoch);
    println!(
        "final state identical to the straight run: {}",
        resumed.last.to_bytes() == straight.last.to_bytes()
    );
    for entry in std::fs::read_dir(dir.path()).expect("run dir") {
        println!("  {}", entry.expect("entry").file_name().to_string_lossy());
    }
    Ok(())
}
