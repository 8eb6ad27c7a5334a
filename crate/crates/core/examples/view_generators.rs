//! Builds both augmented views of a toy graph from untrained parameters and
//! prints their keep-weight statistics and the head of each debug dump.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fairdgcl::autograd::Tape;
use fairdgcl::dataset::build_graph;
use fairdgcl::encoder::{propagate_on_tape, EncoderParams};
use fairdgcl::synthetic::PlantedBias;
use fairdgcl::view_generative::{generate_view_g2, generative_dump, VgaeParams};
use fairdgcl::view_recognition::{generate_view_g1, recognition_dump, AugmentedView, EdgeScorerParams, EtaMode};

fn summary(name: &str, view: &AugmentedView) {
    for l in 0..view.n_layers() {
        let w = view.layer_weights(l);
        let mean = w.mean().unwrap_or(0.0);
        let hard = view.hard_edges(l).len();
        println!("{name} layer {l}: mean keep {mean:.3}, {hard}/{} edges above 0.5", w.len());
    }
}

fn main() -> fairdgcl::Result<()> {
    let ds = PlantedBias {
        n_users: 20,
        n_items: 16,
        per_user: 4,
        crossover: 0.25,
    }
    .generate(0)?;
    let edges: Vec<(usize, usize)> = ds.records.iter().map(|r| (r.user_id, r.item_id)).collect();
    let graph = Rc::new(build_graph(&edges, ds.n_users(), ds.n_items()));
    let (dim, n_layers) = (8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = EncoderParams::init(ds.n_users(), ds.n_items(), dim, n_layers, &mut rng);

    let tape = Tape::new();
    let e0 = tape.constant(enc.embeddings.matrix().clone());
    let prop = propagate_on_tape(&tape, &graph, e0, &vec![None; n_layers]);
    let layers: Vec<_> = prop.layers[..n_layers].iter().map(|&v| tape.value(v).clone()).collect();

    let scorer = EdgeScorerParams::new(dim, 16, &mut rng);
    let g1 = generate_view_g1(&graph, &layers, &scorer, 0.2, EtaMode::Sampled, &mut rng)?;
    summary("G1", &g1.view);

    let vgae = VgaeParams::new(dim, dim, 1, &mut rng);
    let g2 = generate_view_g2(&graph, &enc.embeddings, &vgae, n_layers, &mut rng)?;
    summary("G2", &g2.view);

    println!();
    recognition_dump(&g1).lines().take(4).for_each(|l| println!("{l}"));
    println!();
    generative_dump(&g2).lines().take(4).for_each(|l| println!("{l}"));
    Ok(())
}
