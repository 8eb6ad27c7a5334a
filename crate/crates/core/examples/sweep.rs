//! A small resumable grid over alpha on toy data; the table is rewritten
//! after every cell, so rerunning skips finished cells.

use fairdgcl::cli::{run_sweep, DataConfig, ExperimentConfig, Prepared};
use fairdgcl::synthetic::PlantedBias;
use fairdgcl::trainer::TrainConfig;

fn main() -> fairdgcl::Result<()> {
    let ds = PlantedBias::default().generate(3)?;
    let data = DataConfig::default();
    let prepared = Prepared::from_dataset(&ds, &data)?;
    let mut cfg = ExperimentConfig {
        data,
        train: TrainConfig {
            dim: 16,
            epochs: 5,
            batch_size: 256,
            nce_batch: 128,
            scorer_hidden: 16,
            disc_hidden: 16,
            learning_rate: 1e-2,
            eval_ks: vec![10],
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.sweep.alpha = vec![1e-3, 1e-1, 1.0];

    let root = tempfile::tempdir().expect("temp dir");
    let rows = run_sweep(&cfg, &prepared, root.path())?;
    println!("{} cells", rows.len());
    print!("{}", std::fs::read_to_string(root.path().join("sweep.csv")).expect("table"));

    let again = run_sweep(&cfg, &prepared, root.path())?;
    println!("second pass reused every cell: {}", again == rows);
    Ok(())
}
