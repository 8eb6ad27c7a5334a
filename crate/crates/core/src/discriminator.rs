//! User-level sensitive-attribute classifier over fused view embeddings.

use std::rc::Rc;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{Bound, BoundMlp, Mlp, Parameters};

/// Probability clamp applied before the cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// MLP from a `d`-vector to one logit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub mlp: Mlp,
}

impl DiscriminatorParams {
    /// Two hidden ReLU layers of `hidden` units.
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(&[dim, hidden, hidden, 1], rng),
        }
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            mlp: self.mlp.bind(tape, trainable),
        }
    }
}

impl Parameters for DiscriminatorParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.mlp.tensors_mut()
    }
}

pub struct BoundDiscriminator {
    mlp: BoundMlp,
}

impl Bound for BoundDiscriminator {
    fn vars(&self) -> Vec<Var> {
        self.mlp.vars()
    }
}

impl BoundDiscriminator {
    pub fn collect_grads(&self, grads: &Gradients, params: &DiscriminatorParams) -> Vec<Array2<f64>> {
        self.grads(grads, &params.shapes())
    }

    /// Per-user probabilities `σ(MLP(fused))`, `n_users x 1`.
    pub fn predict(&self, tape: &Tape, fused: Var) -> Var {
        tape.sigmoid(self.mlp.forward(tape, fused))
    }

    /// Clamped mean cross-entropy against `labels` (`n_users x 1`).
    pub fn loss(&self, tape: &Tape, fused: Var, labels: &Rc<Array2<f64>>) -> Var {
        tape.bce(self.predict(tape, fused), Rc::clone(labels), PROB_EPS)
    }
}

/// User rows of `(H1 + H2) / 2` on a tape.
pub fn fuse_on_tape(tape: &Tape, h1: Var, h2: Var, n_users: usize) -> Var {
    let users = Rc::new((0..n_users).collect::<Vec<_>>());
    let a = tape.gather_rows(h1, Rc::clone(&users));
    let b = tape.gather_rows(h2, users);
    tape.scale(tape.add(a, b), 0.5)
}

/// Element-wise mean of the user rows of two view encodings.
pub fn fuse_user_embeddings(h1: &EmbeddingTable, h2: &EmbeddingTable) -> Result<Array2<f64>> {
    if h1.matrix().dim() != h2.matrix().dim() || h1.n_users() != h2.n_users() {
        return Err(Error::Shape(format!(
            "fusing {:?} ({} users) with {:?} ({} users)",
            h1.matrix().dim(),
            h1.n_users(),
            h2.matrix().dim(),
            h2.n_users()
        )));
    }
    let n = h1.n_users();
    Ok((&h1.matrix().slice(s![..n, ..]) + &h2.matrix().slice(s![..n, ..])) * 0.5)
}

pub fn predict_attribute(fused: &Array2<f64>, params: &DiscriminatorParams) -> Result<Array1<f64>> {
    if fused.ncols() != params.mlp.input_dim() {
        return Err(Error::Shape(format!(
            "discriminator expects {} columns, got {}",
            params.mlp.input_dim(),
            fused.ncols()
        )));
    }
    let logits = params.mlp.eval(fused);
    Ok(logits.column(0).mapv(|l| 1.0 / (1.0 + (-l).exp())))
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn vd_loss(s_tilde: &Array1<f64>, s: &[u8]) -> Result<f64> {
    if s_tilde.len() != s.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            s_tilde.len(),
            s.len()
        )));
    }
    if s.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = s_tilde
        .iter()
        .zip(s)
        .map(|(&q, &y)| {
            let q = q.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    Ok(total / s.len() as f64)
}

/// Fraction of users whose thresholded prediction matches the label.
pub fn accuracy(s_tilde: &Array1<f64>, s: &[u8]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let hits = s_tilde
        .iter()
        .zip(s)
        .filter(|(&q, &y)| (q >= 0.5) == (y == 1))
        .count();
    hits as f64 / s.len() as f64
}

/// Area under the ROC curve, ties counted as one half.
pub fn auc(s_tilde: &Array1<f64>, s: &[u8]) -> f64 {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s_tilde[a].total_cmp(&s_tilde[b]));
    let n_pos = s.iter().filter(|&&y| y == 1).count();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    // Average ranks over tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s_tilde[idx[j + 1]] == s_tilde[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if s[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64
}

/// Labels as an `n x 1` column for the tape.
pub fn label_column(s: &[u8]) -> Rc<Array2<f64>> {
    Rc::new(Array2::from_shape_fn((s.len(), 1), |(i, _)| s[i] as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fuse_examples() {
        let h1 = EmbeddingTable::new(array![[2.0, 0.0], [5.0, 5.0]], 1).unwrap();
        let h2 = EmbeddingTable::new(array![[0.0, 2.0], [9.0, 9.0]], 1).unwrap();
        assert_eq!(fuse_user_embeddings(&h1, &h2).unwrap(), array![[1.0, 1.0]]);
        assert_eq!(fuse_user_embeddings(&h1, &h1).unwrap(), array![[2.0, 0.0]]);
        let bad = EmbeddingTable::new(array![[0.0, 2.0, 1.0], [9.0, 9.0, 1.0]], 1).unwrap();
        assert!(fuse_user_embeddings(&h1, &bad).is_err());
    }

    #[test]
    fn fuse_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::from_shape_simple_fn((7, 3), || rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_simple_fn((7, 3), || rng.gen_range(-1.0..1.0));
        let f = fuse_user_embeddings(
            &EmbeddingTable::new(a.clone(), 4).unwrap(),
            &EmbeddingTable::new(b.clone(), 4).unwrap(),
        )
        .unwrap();
        assert_eq!(f.dim(), (4, 3));
        for i in 0..4 {
            for j in 0..3 {
                assert!((f[[i, j]] - (a[[i, j]] + b[[i, j]]) / 2.0).abs() < 1e-15);
            }
        }
        let t = Tape::new();
        let fv = fuse_on_tape(&t, t.constant(a), t.constant(b), 4);
        assert_eq!(*t.value(fv), f);
    }

    #[test]
    fn predict_examples() {
        let p = DiscriminatorParams {
            mlp: Mlp::zeros(&[2, 2, 2, 1]),
        };
        let out = predict_attribute(&array![[1.0, 2.0], [3.0, -1.0]], &p).unwrap();
        assert!(out.iter().all(|&q| q == 0.5));

        let mut q = p.clone();
        q.mlp.layers[2].bias = array![[2.0]];
        let out = predict_attribute(&array![[1.0, 2.0]], &q).unwrap();
        assert!((out[0] - 0.880797).abs() < 1e-6);
        q.mlp.layers[2].bias = array![[-800.0]];
        assert!(predict_attribute(&array![[1.0, 2.0]], &q).unwrap()[0] < 1e-300);
    }

    #[test]
    fn vd_loss_examples() {
        assert!((vd_loss(&array![0.5, 0.5, 0.5], &[1, 0, 1]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(vd_loss(&array![1.0, 0.0], &[1, 0]).unwrap() < 1e-5);
        assert!((vd_loss(&array![0.9, 0.2], &[1, 0]).unwrap() - 0.164252).abs() < 1e-6);
        assert!(vd_loss(&array![0.9], &[1, 0]).is_err());
    }

    #[test]
    fn vd_gradient_matches_closed_form() {
        let s = [1u8, 0, 0, 1];
        let q = array![[0.7], [0.4], [0.1], [0.55]];
        let t = Tape::new();
        let p = t.param(q.clone());
        let l = t.bce(p, label_column(&s), PROB_EPS);
        let g = t.backward(l).get(p).unwrap().clone();
        for i in 0..4 {
            let (qi, si) = (q[[i, 0]], s[i] as f64);
            let want = (qi - si) / (qi * (1.0 - qi)) / 4.0;
            assert!((g[[i, 0]] - want).abs() < 1e-6);
            let h = 1e-6;
            let mut up = q.column(0).to_owned();
            let mut dn = up.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (vd_loss(&up, &s).unwrap() - vd_loss(&dn, &s).unwrap()) / (2.0 * h);
            assert!((fd - want).abs() / want.abs() < 1e-4);
        }
    }

    #[test]
    fn accuracy_and_auc() {
        let q = array![0.9, 0.2, 0.6, 0.4];
        assert_eq!(accuracy(&q, &[1, 0, 0, 1]), 0.5);
        assert_eq!(auc(&q, &[1, 0, 1, 0]), 1.0);
        assert_eq!(auc(&array![0.5, 0.5], &[1, 0]), 0.5);
        assert_eq!(auc(&q, &[1, 0, 0, 1]), 0.75);
    }

    #[test]
    fn max_step_does_not_increase_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fused = Array2::from_shape_simple_fn((12, 3), || rng.gen_range(-1.0..1.0));
        let s: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let mut p = DiscriminatorParams::new(3, 3, &mut rng);
        let labels = label_column(&s);
        let before = vd_loss(&predict_attribute(&fused, &p).unwrap(), &s).unwrap();
        let t = Tape::new();
        let b = p.bind(&t, true);
        let l = b.loss(&t, t.constant(fused.clone()), &labels);
        let grads = b.collect_grads(&t.backward(l), &p);
        for (w, g) in p.tensors_mut().into_iter().zip(grads) {
            w.scaled_add(-0.01, &g);
        }
        let after = vd_loss(&predict_attribute(&fused, &p).unwrap(), &s).unwrap();
        assert!(after <= before, "{before} -> {after}");
    }

    proptest! {
        #[test]
        fn vd_loss_is_permutation_invariant(
            qs in prop::collection::vec(0.0f64..1.0, 2..20),
            seed in any::<u64>(),
        ) {
            let s: Vec<u8> = (0..qs.len()).map(|i| ((i * 7 + seed as usize) % 2) as u8).collect();
            let base = vd_loss(&Array1::from(qs.clone()), &s).unwrap();
            let mut idx: Vec<usize> = (0..qs.len()).collect();
            idx.reverse();
            idx.rotate_left((seed % qs.len() as u64) as usize);
            let q2: Array1<f64> = idx.iter().map(|&i| qs[i]).collect();
            let s2: Vec<u8> = idx.iter().map(|&i| s[i]).collect();
            prop_assert!((vd_loss(&q2, &s2).unwrap() - base).abs() < 1e-12);
            prop_assert!(base >= 0.0);
        }
    }
}
