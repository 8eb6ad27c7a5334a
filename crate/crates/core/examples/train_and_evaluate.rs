//! Trains the plain baseline and the adversarial model on the same toy split
//! and compares test accuracy and group gaps of their best checkpoints.

use fairdgcl::dataset::split_interactions;
use fairdgcl::evaluation::evaluate;
use fairdgcl::synthetic::PlantedBias;
use fairdgcl::trainer::{final_embeddings, train, ModelKind, TrainConfig, TrainData};

fn main() -> fairdgcl::Result<()> {
    let ds = PlantedBias {
        crossover: 0.2,
        ..PlantedBias::default()
    }
    .generate(4)?;
    let split = split_interactions(&ds.records, (0.8, 0.1, 0.1), 4)?;
    let data = TrainData::new(&split, ds.partition.clone(), ds.n_users(), ds.n_items())?;

    println!("{:<9} {:>5} {:>9} {:>8} {:>8} {:>8}", "model", "epoch", "recall@10", "ndcg@10", "phi_r", "phi_n");
    for model in [ModelKind::Lightgcn, ModelKind::Randomdrop, ModelKind::Fairdgcl] {
        let cfg = TrainConfig {
            model,
            dim: 32,
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-2,
            beta: 1.0,
            nce_batch: 256,
            scorer_hidden: 32,
            disc_hidden: 32,
            patience: 10,
            ..TrainConfig::default()
        };
        let out = train(cfg, &data)?;
        let h = final_embeddings(&out.best.params, &data.graph)?;
        let report = evaluate(&h, &data.graph, &data.test, &data.partition, &[10])?;
        let c = report.at(10).expect("k=10 requested");
        println!(
            "{:<9} {:>5} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
            model.to_string(),
            out.best.epoch,
            c.recall,
            c.ndcg,
            c.phi_r,
            c.phi_n
        );
    }
    Ok(())
}
