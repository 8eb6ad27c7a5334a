//! Generative view generator: a variational graph autoencoder whose edge
//! reconstruction probabilities reweight the training edges.

use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Tape, Var};
use crate::dataset::InteractionGraph;
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{Bound, BoundLinear, BoundMlp, Linear, Mlp, Parameters};
use crate::view_recognition::{AugmentedView, ViewKind, KEEP_EPS};

/// GCN encoder with mean and log-variance heads, plus an MLP decoder applied
/// to latent codes before the inner-product edge score.
#[derive(Clone, Debug, PartialEq)]
pub struct VgaeParams {
    /// Hidden GCN layers, each `ReLU(Â h W + b)`.
    pub trunk: Vec<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub decoder: Mlp,
}

impl VgaeParams {
    pub fn new(dim: usize, latent_dim: usize, trunk_layers: usize, rng: &mut impl Rng) -> Self {
        let trunk = (0..trunk_layers).map(|_| Linear::new(dim, dim, rng)).collect();
        let mu_head = Linear::new(dim, latent_dim, rng);
        let logvar_head = Linear::new(dim, latent_dim, rng);
        let decoder = Mlp::new(&[latent_dim, latent_dim, latent_dim], rng);
        Self {
            trunk,
            mu_head,
            logvar_head,
            decoder,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.output_dim()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundVgae {
        BoundVgae {
            trunk: self.trunk.iter().map(|l| l.bind(tape, trainable)).collect(),
            mu_head: self.mu_head.bind(tape, trainable),
            logvar_head: self.logvar_head.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }
}

impl Parameters for VgaeParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t: Vec<&Array2<f64>> = self.trunk.iter().flat_map(|l| l.tensors()).collect();
        t.extend(self.mu_head.tensors());
        t.extend(self.logvar_head.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = self.trunk.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        t.extend(self.mu_head.tensors_mut());
        t.extend(self.logvar_head.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }
}

pub struct BoundVgae {
    trunk: Vec<BoundLinear>,
    mu_head: BoundLinear,
    logvar_head: BoundLinear,
    decoder: BoundMlp,
}

impl Bound for BoundVgae {
    fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.trunk.iter().flat_map(|l| l.vars()).collect();
        v.extend(self.mu_head.vars());
        v.extend(self.logvar_head.vars());
        v.extend(self.decoder.vars());
        v
    }
}

impl BoundVgae {
    pub fn collect_grads(&self, grads: &Gradients, params: &VgaeParams) -> Vec<Array2<f64>> {
        self.grads(grads, &params.shapes())
    }

    /// `(μ, log σ²)` for every node.
    pub fn encode(&self, tape: &Tape, graph: &Rc<InteractionGraph>, x: Var) -> (Var, Var) {
        let mut h = x;
        for layer in &self.trunk {
            h = tape.relu(layer.forward(tape, tape.propagate(h, None, graph)));
        }
        let agg = tape.propagate(h, None, graph);
        (self.mu_head.forward(tape, agg), self.logvar_head.forward(tape, agg))
    }

    /// Edge logits `mlp(z_a)ᵀ mlp(z_b)` for node pairs, `P x 1`.
    pub fn decode_logits(&self, tape: &Tape, z: Var, a: Rc<Vec<usize>>, b: Rc<Vec<usize>>) -> Var {
        let t = self.decoder.forward(tape, z);
        tape.gather_row_dot(t, a, b)
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ noise` on a tape.
pub fn reparameterize_on_tape(tape: &Tape, mu: Var, logvar: Var, noise: Array2<f64>) -> Var {
    let std = tape.exp(tape.scale(logvar, 0.5));
    let n = tape.constant(noise);
    tape.add(mu, tape.mul(std, n))
}

/// Mean over nodes of `−½ Σ (1 + log σ² − μ² − exp(log σ²))`.
pub fn kl_on_tape(tape: &Tape, mu: Var, logvar: Var) -> Var {
    let n = tape.shape(mu).0.max(1) as f64;
    let inner = tape.sub(tape.sub(tape.add_scalar(logvar, 1.0), tape.mul(mu, mu)), tape.exp(logvar));
    tape.scale(tape.sum(inner), -0.5 / n)
}

/// Mean binary cross-entropy of positive logits (label 1) and negative logits
/// (label 0).
pub fn reconstruction_on_tape(tape: &Tape, pos_logits: Var, neg_logits: Var) -> Var {
    let np = tape.shape(pos_logits).0;
    let nn = tape.shape(neg_logits).0;
    let lp = tape.sum(tape.softplus(tape.neg(pos_logits)));
    let ln = tape.sum(tape.softplus(neg_logits));
    tape.scale(tape.add(lp, ln), 1.0 / (np + nn).max(1) as f64)
}

fn edge_pairs(graph: &InteractionGraph) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
    let nu = graph.n_users();
    (
        Rc::new(graph.edges().iter().map(|&(u, _)| u as usize).collect()),
        Rc::new(graph.edges().iter().map(|&(_, v)| nu + v as usize).collect()),
    )
}

fn split_pairs(pairs: &[(usize, usize)]) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
    (
        Rc::new(pairs.iter().map(|p| p.0).collect()),
        Rc::new(pairs.iter().map(|p| p.1).collect()),
    )
}

/// Samples `per_edge` (user node, item node) non-edges per training edge.
pub fn sample_negative_pairs(graph: &InteractionGraph, per_edge: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let nu = graph.n_users();
    let ni = graph.n_items();
    let mut out = Vec::with_capacity(graph.n_edges() * per_edge);
    for &(u, _) in graph.edges() {
        let u = u as usize;
        if graph.user_items(u).len() >= ni {
            continue;
        }
        for _ in 0..per_edge {
            let j = loop {
                let j = rng.gen_range(0..ni);
                if !graph.contains(u, j) {
                    break j;
                }
            };
            out.push((u, nu + j));
        }
    }
    out
}

/// Everything the generative branch records on a tape for one step.
pub struct GenerativeOnTape {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    /// Reconstruction probability of each training edge, `E x 1`.
    pub keep: Var,
    pub recon: Var,
    pub kl: Var,
    /// Negative ELBO.
    pub loss: Var,
}

/// Encodes, samples, decodes and scores the ELBO on a tape.
pub fn generative_on_tape(
    tape: &Tape,
    graph: &Rc<InteractionGraph>,
    x: Var,
    vgae: &BoundVgae,
    neg_pairs: &[(usize, usize)],
    rng: &mut impl Rng,
) -> GenerativeOnTape {
    let (mu, logvar) = vgae.encode(tape, graph, x);
    let noise = Array2::from_shape_simple_fn(tape.shape(mu), || StandardNormal.sample(rng));
    let z = reparameterize_on_tape(tape, mu, logvar, noise);
    let (pa, pb) = edge_pairs(graph);
    let pos = vgae.decode_logits(tape, z, pa, pb);
    let (na, nb) = split_pairs(neg_pairs);
    let neg = vgae.decode_logits(tape, z, na, nb);
    let keep = tape.clamp(tape.sigmoid(pos), KEEP_EPS, 1.0 - KEEP_EPS);
    let recon = reconstruction_on_tape(tape, pos, neg);
    let kl = kl_on_tape(tape, mu, logvar);
    let loss = tape.add(recon, kl);
    GenerativeOnTape {
        mu,
        logvar,
        z,
        keep,
        recon,
        kl,
        loss,
    }
}

/// `(μ, log σ²)` for node features `x` over `graph`.
pub fn vgae_encode(x: &EmbeddingTable, graph: &InteractionGraph, params: &VgaeParams) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.n_nodes() != graph.n_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            x.n_nodes(),
            graph.n_nodes()
        )));
    }
    let tape = Tape::new();
    let g = Rc::new(graph.clone());
    let b = params.bind(&tape, false);
    let xv = tape.constant(x.matrix().clone());
    let (mu, logvar) = b.encode(&tape, &g, xv);
    let out = (tape.value(mu).clone(), tape.value(logvar).clone());
    Ok(out)
}

/// `μ + exp(log σ² / 2) ⊙ noise`.
pub fn reparameterize(mu: &Array2<f64>, logvar: &Array2<f64>, noise: &Array2<f64>) -> Result<Array2<f64>> {
    if mu.dim() != logvar.dim() || mu.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "mu {:?}, logvar {:?}, noise {:?}",
            mu.dim(),
            logvar.dim(),
            noise.dim()
        )));
    }
    Ok(mu + &(logvar.mapv(|l| (0.5 * l).exp()) * noise))
}

/// Decoder probabilities `σ(mlp(z_a)ᵀ mlp(z_b))` for node pairs.
pub fn vgae_decode(z: &Array2<f64>, pairs: &[(usize, usize)], params: &VgaeParams) -> Array1<f64> {
    let t = params.decoder.eval(z);
    pairs
        .iter()
        .map(|&(a, b)| {
            let s = t.row(a).dot(&t.row(b));
            (1.0 / (1.0 + (-s).exp())).clamp(KEEP_EPS, 1.0 - KEEP_EPS)
        })
        .collect()
}

/// Terms of the negative evidence lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboParts {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Negative ELBO: edge-reconstruction cross-entropy over observed edges and
/// `neg_pairs` (node-id pairs) plus the KL term to `N(0, I)`.
pub fn elbo_loss(
    graph: &InteractionGraph,
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
    z: &Array2<f64>,
    params: &VgaeParams,
    neg_pairs: &[(usize, usize)],
) -> Result<ElboParts> {
    if z.nrows() != graph.n_nodes() {
        return Err(Error::Shape(format!("{} latent rows for {} nodes", z.nrows(), graph.n_nodes())));
    }
    let tape = Tape::new();
    let b = params.bind(&tape, false);
    let (muv, lv, zv) = (
        tape.constant(mu.clone()),
        tape.constant(logvar.clone()),
        tape.constant(z.clone()),
    );
    let (pa, pb) = edge_pairs(graph);
    let pos = b.decode_logits(&tape, zv, pa, pb);
    let (na, nb) = split_pairs(neg_pairs);
    let neg = b.decode_logits(&tape, zv, na, nb);
    let reconstruction = tape.item(reconstruction_on_tape(&tape, pos, neg));
    let kl = tape.item(kl_on_tape(&tape, muv, lv));
    Ok(ElboParts {
        reconstruction,
        kl,
        total: reconstruction + kl,
    })
}

/// A generated view with its per-edge reconstruction probabilities.
#[derive(Clone, Debug)]
pub struct GenerativeSample {
    pub view: AugmentedView,
    pub recon_prob: Array1<f64>,
}

/// Reweights every training edge by its reconstruction probability; the same
/// weight is used in all `n_layers` layers.
pub fn generate_view_g2(
    graph: &Rc<InteractionGraph>,
    x: &EmbeddingTable,
    params: &VgaeParams,
    n_layers: usize,
    rng: &mut impl Rng,
) -> Result<GenerativeSample> {
    let (mu, logvar) = vgae_encode(x, graph, params)?;
    let noise = Array2::from_shape_simple_fn(mu.dim(), || StandardNormal.sample(rng));
    let z = reparameterize(&mu, &logvar, &noise)?;
    let nu = graph.n_users();
    let pairs: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|&(u, v)| (u as usize, nu + v as usize))
        .collect();
    let recon_prob = vgae_decode(&z, &pairs, params);
    Ok(GenerativeSample {
        view: AugmentedView::new(Rc::clone(graph), vec![recon_prob.clone(); n_layers], ViewKind::Generative),
        recon_prob,
    })
}

/// CSV `user,item,recon_prob`.
pub fn generative_dump(sample: &GenerativeSample) -> String {
    let mut out = String::from("user,item,recon_prob\n");
    for (&(u, v), p) in sample.view.graph().edges().iter().zip(sample.recon_prob.iter()) {
        let _ = writeln!(out, "{u},{v},{p}");
    }
    out
}

pub fn write_generative_dump(path: &Path, sample: &GenerativeSample) -> Result<()> {
    std::fs::write(path, generative_dump(sample)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_graph;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_vgae(d: usize, trunk: usize) -> VgaeParams {
        VgaeParams {
            trunk: (0..trunk).map(|_| Linear::zeros(d, d)).collect(),
            mu_head: Linear::zeros(d, d),
            logvar_head: Linear::zeros(d, d),
            decoder: Mlp::zeros(&[d, d, d]),
        }
    }

    #[test]
    fn zero_encoder_gives_zero_moments() {
        let g = build_graph(&[(0, 0), (1, 1), (1, 0)], 2, 2);
        let x = EmbeddingTable::new(Array2::from_elem((4, 3), 0.7), 2).unwrap();
        let (mu, lv) = vgae_encode(&x, &g, &zero_vgae(3, 1)).unwrap();
        assert!(mu.iter().chain(lv.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_matches_hand_product() {
        // Two nodes joined by one edge: Â = [[0,1],[1,0]].
        let g = build_graph(&[(0, 0)], 1, 1);
        let x = EmbeddingTable::new(array![[1.0, 2.0], [3.0, -1.0]], 1).unwrap();
        let mut p = zero_vgae(2, 0);
        p.mu_head.weight = array![[1.0, 0.5], [0.0, 2.0]];
        p.mu_head.bias = array![[0.1, 0.0]];
        p.logvar_head.weight = array![[0.0, 1.0], [1.0, 0.0]];
        let (mu, lv) = vgae_encode(&x, &g, &p).unwrap();
        // Â x = [[3,-1],[1,2]]
        assert_eq!(mu, array![[3.1, -0.5], [1.1, 4.5]]);
        assert_eq!(lv, array![[-1.0, 3.0], [2.0, 1.0]]);
    }

    #[test]
    fn encoding_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = VgaeParams::new(3, 3, 1, &mut rng);
        let g = build_graph(&[(0, 0), (0, 1), (1, 1)], 2, 2);
        let m = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.4);
        let (mu, _) = vgae_encode(&EmbeddingTable::new(m.clone(), 2).unwrap(), &g, &p).unwrap();
        // Swap the two users (rows 0 and 1) and relabel edges to match.
        let g2 = build_graph(&[(1, 0), (1, 1), (0, 1)], 2, 2);
        let mut m2 = m.clone();
        m2.row_mut(0).assign(&m.row(1));
        m2.row_mut(1).assign(&m.row(0));
        let (mu2, _) = vgae_encode(&EmbeddingTable::new(m2, 2).unwrap(), &g2, &p).unwrap();
        for j in 0..3 {
            assert!((mu[[0, j]] - mu2[[1, j]]).abs() < 1e-12);
            assert!((mu[[2, j]] - mu2[[2, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterize_examples() {
        let mu = array![[1.0, -2.0]];
        assert_eq!(reparameterize(&mu, &array![[0.3, 0.1]], &Array2::zeros((1, 2))).unwrap(), mu);
        let n = array![[0.5, -0.5]];
        assert_eq!(reparameterize(&mu, &Array2::zeros((1, 2)), &n).unwrap(), &mu + &n);
        let z = reparameterize(&array![[1.0]], &array![[4f64.ln()]], &array![[0.5]]).unwrap();
        assert!((z[[0, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decode_examples() {
        let mut p = zero_vgae(2, 0);
        // Identity decoder: mlp(z) = relu(z)·I·I.
        p.decoder.layers[0].weight = Array2::eye(2);
        p.decoder.layers[1].weight = Array2::eye(2);
        let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let probs = vgae_decode(&z, &[(0, 1), (0, 2)], &p);
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.731059).abs() < 1e-6);
        let far = array![[1e3, 0.0], [0.0, 0.0]];
        let mut q = p.clone();
        q.decoder.layers[1].weight = array![[-1.0, 0.0], [0.0, 1.0]];
        // mlp(z0) = (-1000, 0), mlp(z0)·mlp(z0) stays positive; use a pair with a negative score
        let t = q.decoder.eval(&far);
        assert!(t.row(0).dot(&t.row(0)) > 0.0);
        let probs = vgae_decode(&array![[1e3, 0.0], [0.0, 0.0], [1e3, 0.0]], &[(0, 1)], &q);
        assert!((probs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let g = build_graph(&[(0, 0)], 1, 1);
        let p = zero_vgae(1, 0);
        let z = Array2::zeros((2, 1));
        let parts = elbo_loss(&g, &Array2::zeros((2, 1)), &Array2::zeros((2, 1)), &z, &p, &[]).unwrap();
        assert_eq!(parts.kl, 0.0);

        let t = Tape::new();
        let mu = t.constant(array![[1.0]]);
        let lv = t.constant(array![[0.0]]);
        assert!((t.item(kl_on_tape(&t, mu, lv)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn near_perfect_reconstruction_has_small_bce() {
        let t = Tape::new();
        let pos = t.constant(array![[40.0], [50.0]]);
        let neg = t.constant(array![[-40.0]]);
        assert!(t.item(reconstruction_on_tape(&t, pos, neg)) < 1e-15);
    }

    #[test]
    fn zero_decoder_gives_half_weights() {
        let g = Rc::new(build_graph(&[(0, 0), (1, 1), (1, 0)], 2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = VgaeParams::new(3, 3, 1, &mut rng);
        p.decoder = Mlp::zeros(&[3, 3, 3]);
        let x = EmbeddingTable::new(Array2::from_elem((4, 3), 0.2), 2).unwrap();
        let s = generate_view_g2(&g, &x, &p, 2, &mut rng).unwrap();
        assert!(s.view.weights().all(|w| w == 0.5));
    }

    #[test]
    fn view_matches_decode_oracle_and_is_deterministic() {
        let g = Rc::new(build_graph(&[(0, 0), (0, 1), (1, 1)], 2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = VgaeParams::new(3, 3, 1, &mut rng);
        let x = EmbeddingTable::new(Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64).sin()), 2).unwrap();
        let a = generate_view_g2(&g, &x, &p, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = generate_view_g2(&g, &x, &p, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a.view, b.view);

        // Oracle: redo encode → reparameterize → decode by hand with the same noise.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mu, lv) = vgae_encode(&x, &g, &p).unwrap();
        let noise: Array2<f64> = Array2::from_shape_simple_fn(mu.dim(), || StandardNormal.sample(&mut rng));
        let z = &mu + &(lv.mapv(|l| (0.5 * l).exp()) * &noise);
        let t = p.decoder.eval(&z);
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            let s = t.row(u as usize).dot(&t.row(2 + v as usize));
            let want = 1.0 / (1.0 + (-s).exp());
            assert!((a.recon_prob[e] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn negatives_are_non_edges() {
        let g = build_graph(&[(0, 0), (0, 1), (1, 1)], 2, 3);
        let pairs = sample_negative_pairs(&g, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(pairs.len(), 6);
        for (a, b) in pairs {
            assert!(!g.contains(a, b - 2));
        }
    }

    #[test]
    fn reparameterization_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise: Array2<f64> = Array2::from_shape_simple_fn((100_000, 1), || StandardNormal.sample(&mut rng));
        let z = reparameterize(&Array2::zeros((100_000, 1)), &Array2::zeros((100_000, 1)), &noise).unwrap();
        let mean = z.mean().unwrap();
        let var = z.mapv(|v| (v - mean).powi(2)).sum() / (z.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = Tape::new();
            let mu = t.constant(Array2::from_shape_simple_fn((3, 2), || rng.gen_range(-3.0..3.0)));
            let lv = t.constant(Array2::from_shape_simple_fn((3, 2), || rng.gen_range(-3.0..3.0)));
            assert!(t.item(kl_on_tape(&t, mu, lv)) > 0.0);
        }
    }

    fn neg_elbo_at(mu0: f64, noise: &Array2<f64>) -> (f64, f64) {
        // Two nodes, one edge, scalar latent; the mu of node 0 is the probe.
        let p = VgaeParams {
            trunk: vec![],
            mu_head: Linear::zeros(1, 1),
            logvar_head: Linear::zeros(1, 1),
            decoder: Mlp {
                layers: vec![
                    Linear {
                        weight: array![[1.3]],
                        bias: array![[0.2]],
                    },
                    Linear {
                        weight: array![[0.9]],
                        bias: array![[-0.1]],
                    },
                ],
            },
        };
        let t = Tape::new();
        let b = p.bind(&t, false);
        let mu = t.param(array![[mu0], [0.4]]);
        let lv = t.constant(array![[-0.3], [0.2]]);
        let z = reparameterize_on_tape(&t, mu, lv, noise.clone());
        let pos = b.decode_logits(&t, z, Rc::new(vec![0]), Rc::new(vec![1]));
        let neg = b.decode_logits(&t, z, Rc::new(vec![0]), Rc::new(vec![0]));
        let loss = t.add(reconstruction_on_tape(&t, pos, neg), kl_on_tape(&t, mu, lv));
        let grad = t.backward(loss).get(mu).unwrap()[[0, 0]];
        (t.item(loss), grad)
    }

    #[test]
    fn neg_elbo_gradient_matches_finite_difference() {
        let noise = array![[0.3], [-0.7]];
        for &m in &[0.5, -0.2, 1.1] {
            let (_, analytic) = neg_elbo_at(m, &noise);
            let h = 1e-6;
            let numeric = (neg_elbo_at(m + h, &noise).0 - neg_elbo_at(m - h, &noise).0) / (2.0 * h);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            assert!(rel < 1e-4, "{analytic} vs {numeric}");
        }
    }
}
