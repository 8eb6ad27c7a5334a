//! Scalar values of the loss terms and how they compose into the objective.

use ndarray::{array, Array1};

use fairdgcl::discriminator::vd_loss;
use fairdgcl::encoder::{bpr_loss, EmbeddingTable};
use fairdgcl::objectives::{generator_loss, info_nce, total_objective, LossBreakdown, NceDenominator};

fn main() -> fairdgcl::Result<()> {
    for margin in [0.0, 1.0, 2.0, 8.0] {
        println!("bpr, positive ahead by {margin}: {:.6}", bpr_loss(margin, 0.0));
    }

    let preds = Array1::from(vec![0.9, 0.2]);
    println!("discriminator cross-entropy, s=(1,0): {:.6}", vd_loss(&preds, &[1, 0])?);

    let h = EmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0]], 1)?;
    for tau in [1.0, 0.2, 0.05] {
        let full = info_nce(&h, &h, tau, &[0, 1], NceDenominator::Full)?;
        let strict = info_nce(&h, &h, tau, &[0, 1], NceDenominator::Strict)?;
        println!("infonce tau {tau}: full {full:.6}, negatives only {strict:.6}");
    }

    let parts = LossBreakdown {
        l_bpr_main: 0.6,
        l_bpr_rec: 0.65,
        l_bpr_gen: 0.7,
        l_vgae: 1.2,
        l_nce: 4.0,
        l_vd: 0.69,
        alpha: 0.1,
        beta: 0.01,
        ..Default::default()
    }
    .assemble();
    let l_vg = generator_loss(&parts, parts.alpha);
    println!("generator part {l_vg:.4}");
    println!(
        "objective {:.4} (= {:.4})",
        parts.total,
        total_objective(parts.l_bpr_main, l_vg, parts.l_vd, parts.beta)
    );
    Ok(())
}
