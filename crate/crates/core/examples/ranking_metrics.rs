//! Top-k metrics and group gaps on a hand-sized example.

use ndarray::array;

use fairdgcl::dataset::{build_graph, partition_users};
use fairdgcl::encoder::EmbeddingTable;
use fairdgcl::evaluation::{evaluate, ndcg_at_k, rank_items, recall_at_k};

fn main() -> fairdgcl::Result<()> {
    // 2 users, 4 items, 1-d embeddings: scores are products
    let h = EmbeddingTable::new(array![[1.0], [-1.0], [0.4], [0.9], [0.1], [-0.5]], 2)?;
    let train = build_graph(&[(0, 1), (1, 0)], 2, 4);

    let ranked = rank_items(&h, 0, &[1]);
    println!("user 0 ranking without its training item: {ranked:?}");
    println!("recall@2 of test {{0, 3}}: {:?}", recall_at_k(&ranked, &[0, 3], 2));
    println!("ndcg@2 of test {{2}}: {:?}", ndcg_at_k(&ranked, &[2], 2));

    let partition = partition_users(&[0, 1])?;
    let report = evaluate(&h, &train, &[(0, 2), (1, 3)], &partition, &[1, 2])?;
    for c in &report.cutoffs {
        println!(
            "k={} recall {:.3} ndcg {:.3} | group recall {:.3}/{:.3} phi_r {:.3} phi_n {:.3}",
            c.k, c.recall, c.ndcg, c.group0_recall, c.group1_recall, c.phi_r, c.phi_n
        );
    }
    Ok(())
}
