//! Contrastive, task-guide and adversarial loss terms and their composition.

use std::collections::BTreeSet;
use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::encoder::{bpr_loss, propagate, score, EmbeddingTable, EncoderParams, Triples, View};
use crate::error::{Error, Result};
use crate::view_recognition::AugmentedView;

/// Norm floor used when normalizing rows for cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Which pairs enter the InfoNCE denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NceDenominator {
    /// All batch nodes, positive included.
    #[default]
    Full,
    /// Negatives only (`j ≠ i`).
    Strict,
}

impl NceDenominator {
    fn skip_diag(self) -> bool {
        self == NceDenominator::Strict
    }
}

/// Every term of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bpr_main: f64,
    pub l_bpr_rec: f64,
    pub l_bpr_gen: f64,
    pub l_vgae: f64,
    pub l_nce: f64,
    pub l_vd: f64,
    /// L2 penalty on the base embeddings of the batch; zero when disabled.
    pub l_reg: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills `total` from the parts.
    pub fn assemble(mut self) -> Self {
        let l_vg = generator_loss(&self, self.alpha);
        self.total = total_objective(self.l_bpr_main, l_vg, self.l_vd, self.beta) + self.l_reg;
        self
    }

    pub fn l_vg(&self) -> f64 {
        generator_loss(self, self.alpha)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_bpr_main,
            self.l_bpr_rec,
            self.l_bpr_gen,
            self.l_vgae,
            self.l_nce,
            self.l_vd,
            self.l_reg,
            self.total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.l_bpr_main += b.l_bpr_main / n;
            m.l_bpr_rec += b.l_bpr_rec / n;
            m.l_bpr_gen += b.l_bpr_gen / n;
            m.l_vgae += b.l_vgae / n;
            m.l_nce += b.l_nce / n;
            m.l_vd += b.l_vd / n;
            m.l_reg += b.l_reg / n;
            m.total += b.total / n;
        }
        if let Some(first) = items.first() {
            m.alpha = first.alpha;
            m.beta = first.beta;
        }
        m
    }
}

/// `L_VGAE + L_BPR^rec + L_BPR^gen + α·L_NCE`.
pub fn generator_loss(parts: &LossBreakdown, alpha: f64) -> f64 {
    parts.l_vgae + parts.l_bpr_rec + parts.l_bpr_gen + alpha * parts.l_nce
}

/// `L_BPR + L_VG − β·L_VD`.
pub fn total_objective(l_bpr_main: f64, l_vg: f64, l_vd: f64, beta: f64) -> f64 {
    l_bpr_main + l_vg - beta * l_vd
}

fn normalized_rows(h: &EmbeddingTable, batch: &[usize]) -> Array2<f64> {
    let d = h.dim();
    let mut out = Array2::zeros((batch.len(), d));
    for (r, &i) in batch.iter().enumerate() {
        let row = h.matrix().row(i);
        let n = row.dot(&row).sqrt().max(NORM_EPS);
        out.row_mut(r).assign(&(&row / n));
    }
    out
}

/// Mean cross-view InfoNCE over `node_batch` (node ids). Rows with zero norm
/// in either view are dropped with a warning.
pub fn info_nce(
    h1: &EmbeddingTable,
    h2: &EmbeddingTable,
    tau: f64,
    node_batch: &[usize],
    denominator: NceDenominator,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if h1.matrix().dim() != h2.matrix().dim() {
        return Err(Error::Shape(format!(
            "views have shapes {:?} and {:?}",
            h1.matrix().dim(),
            h2.matrix().dim()
        )));
    }
    if let Some(&bad) = node_batch.iter().find(|&&i| i >= h1.n_nodes()) {
        return Err(Error::Shape(format!("batch node {bad} out of range ({} nodes)", h1.n_nodes())));
    }
    let nonzero = |h: &EmbeddingTable, i: usize| h.matrix().row(i).iter().any(|&x| x != 0.0);
    let batch: Vec<usize> = node_batch
        .iter()
        .copied()
        .filter(|&i| nonzero(h1, i) && nonzero(h2, i))
        .collect();
    if batch.len() < node_batch.len() {
        log::warn!("info_nce: dropped {} zero-norm rows", node_batch.len() - batch.len());
    }
    if batch.len() < 2 {
        return Err(Error::Data(format!(
            "contrastive batch needs at least 2 nodes, got {}",
            batch.len()
        )));
    }
    let a = normalized_rows(h1, &batch);
    let b = normalized_rows(h2, &batch);
    let sim = a.dot(&b.t()) / tau;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = sim.row(i);
        let m = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| !(denominator.skip_diag() && j == i))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| !(denominator.skip_diag() && j == i))
            .map(|(_, &x)| (x - m).exp())
            .sum();
        total += m + s.ln() - row[i];
    }
    Ok(total / n as f64)
}

/// Tape version of [`info_nce`] over node-id `batch`; `h1`, `h2` hold all
/// nodes.
pub fn nce_on_tape(tape: &Tape, h1: Var, h2: Var, batch: Rc<Vec<usize>>, tau: f64, denominator: NceDenominator) -> Var {
    let a = tape.row_l2_normalize(tape.gather_rows(h1, Rc::clone(&batch)), NORM_EPS);
    let b = tape.row_l2_normalize(tape.gather_rows(h2, batch), NORM_EPS);
    let sim = tape.scale(tape.matmul_bt(a, b), 1.0 / tau);
    let lse = tape.logsumexp_rows(sim, denominator.skip_diag());
    tape.mean(tape.sub(lse, tape.diag(sim)))
}

/// Unique users and positive items of a BPR batch as node ids, shuffled and
/// truncated to `max_nodes`.
pub fn contrastive_batch(triples: &Triples, n_users: usize, max_nodes: usize, rng: &mut impl Rng) -> Vec<usize> {
    let set: BTreeSet<usize> = triples
        .users
        .iter()
        .copied()
        .chain(triples.pos.iter().map(|v| v + n_users))
        .collect();
    let mut nodes: Vec<usize> = set.into_iter().collect();
    nodes.shuffle(rng);
    nodes.truncate(max_nodes);
    nodes
}

/// BPR loss of `triples` scored on the encoding of `view`.
pub fn task_bpr_for_view(view: &AugmentedView, params: &EncoderParams, triples: &Triples) -> Result<f64> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let h = propagate(View::Augmented(view), params)?;
    let total: f64 = (0..triples.len())
        .map(|i| {
            let u = triples.users[i];
            bpr_loss(score(&h, u, triples.pos[i]), score(&h, u, triples.neg[i]))
        })
        .sum();
    Ok(total / triples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_graph;
    use crate::encoder::bpr_on_tape;
    use crate::view_recognition::ViewKind;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(m: Array2<f64>) -> EmbeddingTable {
        EmbeddingTable::new(m, 0).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn info_nce_two_orthogonal_nodes() {
        let h = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let l = info_nce(&h, &h, 1.0, &[0, 1], NceDenominator::Full).unwrap();
        assert!((l - 0.313262).abs() < 1e-6);
        let want = (1.0 + (-1f64).exp()).ln();
        assert!((l - want).abs() < 1e-12);
        let strict = info_nce(&h, &h, 1.0, &[0, 1], NceDenominator::Strict).unwrap();
        assert!((strict - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn info_nce_low_temperature_limit() {
        let h = table(array![[1.0, 0.0], [-1.0, 0.0]]);
        let l = info_nce(&h, &h, 1e-3, &[0, 1], NceDenominator::Full).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn info_nce_errors() {
        let h = table(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(info_nce(&h, &h, 1.0, &[0], NceDenominator::Full).is_err());
        assert!(info_nce(&h, &h, 0.0, &[0, 1], NceDenominator::Full).is_err());
        let z = table(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(info_nce(&z, &z, 1.0, &[0, 1], NceDenominator::Full).is_err());
    }

    #[test]
    fn info_nce_mismatched_positives_cost_more() {
        for seed in 0..20 {
            let a = random(6, 4, seed);
            let b = &a + &(random(6, 4, seed + 100) * 0.1);
            let batch: Vec<usize> = (0..6).collect();
            let base = info_nce(&table(a.clone()), &table(b.clone()), 0.5, &batch, NceDenominator::Full).unwrap();
            let mut perm = b.clone();
            for i in 0..6 {
                perm.row_mut(i).assign(&b.row((i + 1) % 6));
            }
            let shuffled = info_nce(&table(a), &table(perm), 0.5, &batch, NceDenominator::Full).unwrap();
            assert!(shuffled > base, "seed {seed}: {shuffled} <= {base}");
        }
    }

    #[test]
    fn tape_matches_value_path() {
        let a = random(7, 3, 1);
        let b = random(7, 3, 2);
        let batch = vec![0, 2, 3, 6];
        for mode in [NceDenominator::Full, NceDenominator::Strict] {
            let want = info_nce(&table(a.clone()), &table(b.clone()), 0.3, &batch, mode).unwrap();
            let t = Tape::new();
            let l = nce_on_tape(&t, t.constant(a.clone()), t.constant(b.clone()), Rc::new(batch.clone()), 0.3, mode);
            assert!((t.item(l) - want).abs() < 1e-12);
        }
    }

    fn check_gradient(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>) {
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up.as_slice_mut().unwrap()[idx] += h;
            dn.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "entry {idx}: {an} vs {fd}");
        }
    }

    #[test]
    fn info_nce_gradient_check() {
        let a = random(5, 3, 7);
        let b = random(5, 3, 8);
        let batch = vec![0, 1, 3, 4];
        let t = Tape::new();
        let av = t.param(a.clone());
        let l = nce_on_tape(&t, av, t.constant(b.clone()), Rc::new(batch.clone()), 0.2, NceDenominator::Full);
        let g = t.backward(l).get(av).unwrap().clone();
        check_gradient(
            |x| info_nce(&table(x.clone()), &table(b.clone()), 0.2, &batch, NceDenominator::Full).unwrap(),
            &a,
            &g,
        );
    }

    #[test]
    fn bpr_gradient_check() {
        let h = random(6, 3, 3);
        let triples = Triples {
            users: vec![0, 1, 1],
            pos: vec![0, 2, 1],
            neg: vec![1, 0, 3],
        };
        let t = Tape::new();
        let hv = t.param(h.clone());
        let l = bpr_on_tape(&t, hv, &triples, 2);
        let g = t.backward(l).get(hv).unwrap().clone();
        check_gradient(
            |x| {
                let e = EmbeddingTable::new(x.clone(), 2).unwrap();
                (0..3)
                    .map(|i| {
                        bpr_loss(
                            score(&e, triples.users[i], triples.pos[i]),
                            score(&e, triples.users[i], triples.neg[i]),
                        )
                    })
                    .sum::<f64>()
                    / 3.0
            },
            &h,
            &g,
        );
    }

    #[test]
    fn alpha_zero_blocks_contrastive_gradient() {
        let a = random(4, 3, 5);
        let t = Tape::new();
        let av = t.param(a.clone());
        let nce = nce_on_tape(&t, av, t.constant(random(4, 3, 6)), Rc::new(vec![0, 1, 2, 3]), 0.2, NceDenominator::Full);
        let other = t.scalar(1.5);
        let loss = t.add(other, t.scale(nce, 0.0));
        let g = t.backward(loss).get_or_zeros(av, a.dim());
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn composition_examples() {
        let zero = LossBreakdown::default();
        assert_eq!(generator_loss(&zero, 0.1), 0.0);
        let parts = LossBreakdown {
            l_vgae: 1.0,
            l_bpr_rec: 1.0,
            l_bpr_gen: 1.0,
            l_nce: 1.0,
            ..Default::default()
        };
        assert!((generator_loss(&parts, 0.1) - 3.1).abs() < 1e-12);
        assert_eq!(total_objective(1.0, 2.0, 0.5, 1.0), 2.5);
        assert_eq!(total_objective(1.0, 2.0, 0.5, 0.0), 3.0);
        assert!(total_objective(1.0, 2.0, 0.6, 0.3) < total_objective(1.0, 2.0, 0.5, 0.3));
    }

    #[test]
    fn task_bpr_examples() {
        let g = Rc::new(build_graph(&[(0, 0), (0, 1), (1, 1)], 2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = EncoderParams::init(2, 2, 3, 2, &mut rng);
        let triples = Triples {
            users: vec![0, 1],
            pos: vec![0, 1],
            neg: vec![1, 0],
        };
        let ones = AugmentedView::new(Rc::clone(&g), vec![Array1::ones(3); 2], ViewKind::Recognition);
        let h = propagate(View::Plain(&g), &params).unwrap();
        let want: f64 = (0..2)
            .map(|i| bpr_loss(score(&h, triples.users[i], triples.pos[i]), score(&h, triples.users[i], triples.neg[i])))
            .sum::<f64>()
            / 2.0;
        assert!((task_bpr_for_view(&ones, &params, &triples).unwrap() - want).abs() < 1e-12);

        // Equal scores.
        let flat = EncoderParams {
            embeddings: EmbeddingTable::new(Array2::zeros((4, 3)), 2).unwrap(),
            n_layers: 2,
        };
        let l = task_bpr_for_view(&ones, &flat, &triples).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        // Hand-set embeddings with L = 0: y = e_uᵀ e_v.
        let hand = EncoderParams {
            embeddings: EmbeddingTable::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.5, 0.0, 0.0]], 2).unwrap(),
            n_layers: 0,
        };
        let one = Triples {
            users: vec![0],
            pos: vec![0],
            neg: vec![1],
        };
        let l = task_bpr_for_view(&ones, &hand, &one).unwrap();
        let want = -(1.0 / (1.0 + (-(2.0f64 - 0.5)).exp())).ln();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn breakdown_identity() {
        let b = LossBreakdown {
            l_bpr_main: 0.6,
            l_bpr_rec: 0.5,
            l_bpr_gen: 0.4,
            l_vgae: 1.2,
            l_nce: 3.0,
            l_vd: 0.69,
            alpha: 0.1,
            beta: 0.01,
            ..Default::default()
        }
        .assemble();
        let want = 0.6 + (1.2 + 0.5 + 0.4 + 0.1 * 3.0) - 0.01 * 0.69;
        assert!((b.total - want).abs() < 1e-9);
    }

    #[test]
    fn contrastive_batch_is_unique_and_bounded() {
        let t = Triples {
            users: vec![0, 0, 1, 2],
            pos: vec![0, 1, 1, 0],
            neg: vec![2, 2, 2, 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = contrastive_batch(&t, 3, 100, &mut rng);
        b.sort();
        assert_eq!(b, vec![0, 1, 2, 3, 4]);
        assert_eq!(contrastive_batch(&t, 3, 2, &mut rng).len(), 2);
    }

    #[test]
    fn contrastive_step_improves_alignment() {
        for seed in 0..10 {
            let a = random(6, 4, seed);
            let b = random(6, 4, seed + 50);
            let batch: Vec<usize> = (0..6).collect();
            let cos_mean = |x: &Array2<f64>| {
                let n1 = normalized_rows(&table(x.clone()), &batch);
                let n2 = normalized_rows(&table(b.clone()), &batch);
                (0..6).map(|i| n1.row(i).dot(&n2.row(i))).sum::<f64>() / 6.0
            };
            let t = Tape::new();
            let av = t.param(a.clone());
            let l = nce_on_tape(&t, av, t.constant(b.clone()), Rc::new(batch.clone()), 0.5, NceDenominator::Full);
            let g = t.backward(l).get(av).unwrap().clone();
            let stepped = &a - &(g * 1e-3);
            assert!(cos_mean(&stepped) >= cos_mean(&a) - 1e-12, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn info_nce_ignores_row_scale(
            seed in 0u64..1000,
            scales in prop::collection::vec(0.01f64..100.0, 5),
        ) {
            let a = random(5, 3, seed);
            let b = random(5, 3, seed + 1);
            let batch: Vec<usize> = (0..5).collect();
            let base = info_nce(&table(a.clone()), &table(b.clone()), 0.2, &batch, NceDenominator::Full).unwrap();
            let mut s = a.clone();
            for (i, c) in scales.iter().enumerate() {
                s.row_mut(i).mapv_inplace(|x| x * c);
            }
            let scaled = info_nce(&table(s), &table(b), 0.2, &batch, NceDenominator::Full).unwrap();
            prop_assert!((scaled - base).abs() < 1e-9);
        }

        #[test]
        fn info_nce_batch_permutation_symmetry(seed in 0u64..1000, rot in 0usize..5) {
            let a = random(5, 3, seed);
            let b = random(5, 3, seed + 1);
            let mut batch: Vec<usize> = (0..5).collect();
            let base = info_nce(&table(a.clone()), &table(b.clone()), 0.2, &batch, NceDenominator::Full).unwrap();
            batch.rotate_left(rot);
            batch.swap(0, 4);
            let perm = info_nce(&table(a), &table(b), 0.2, &batch, NceDenominator::Full).unwrap();
            prop_assert!((perm - base).abs() < 1e-12);
            prop_assert!(base >= 0.0);
        }
    }
}
