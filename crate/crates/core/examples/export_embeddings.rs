//! Trains a baseline briefly, exports the final embeddings as CSV and
//! measures how well 2-means clusters of the user rows recover the groups.

use fairdgcl::dataset::split_interactions;
use fairdgcl::evaluation::{embedding_nmi, export_embeddings, permutation_null_nmi, read_embeddings, user_rows};
use fairdgcl::synthetic::PlantedBias;
use fairdgcl::trainer::{final_embeddings, train, ModelKind, TrainConfig, TrainData};

fn main() -> fairdgcl::Result<()> {
    let ds = PlantedBias::default().generate(8)?;
    let split = split_interactions(&ds.records, (0.8, 0.1, 0.1), 8)?;
    let data = TrainData::new(&split, ds.partition.clone(), ds.n_users(), ds.n_items())?;
    let cfg = TrainConfig {
        model: ModelKind::Lightgcn,
        dim: 16,
        epochs: 20,
        batch_size: 128,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let out = train(cfg, &data)?;
    let h = final_embeddings(&out.last.params, &data.graph)?;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("embeddings.csv");
    export_embeddings(&h, &data.partition, &path)?;
    let text = std::fs::read_to_string(&path).expect("csv");
    println!("{} lines, header: {}", text.lines().count(), text.lines().next().unwrap_or(""));
    let back = read_embeddings(&path)?;
    println!("round trip exact: {}", back.matrix() == h.matrix());

    let users = user_rows(&h);
    println!("nmi {:.4}", embedding_nmi(users.view(), &data.partition, 2, 0)?);
    println!("shuffled-label reference {:.4}", permutation_null_nmi(users.view(), &data.partition, 10)?);
    Ok(())
}
