//! Recognition-model view generator: a learned edge scorer whose outputs are
//! relaxed into soft keep weights with concrete (Gumbel-Max) sampling.

use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Open01};

use crate::autograd::{Gradients, Tape, Var};
use crate::dataset::InteractionGraph;
use crate::error::{Error, Result};
use crate::nn::{Bound, BoundMlp, Mlp, Parameters};

/// Smallest distance of an emitted keep weight from 0 and 1.
pub const KEEP_EPS: f64 = 1e-12;

/// Which generator produced a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Recognition,
    Generative,
}

/// The training edges of a graph with a soft keep weight per edge and layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    graph: Rc<InteractionGraph>,
    keep: Vec<Array1<f64>>,
    kind: ViewKind,
}

impl AugmentedView {
    /// `keep[l][e]` weights edge `e` in layer `l`.
    pub fn new(graph: Rc<InteractionGraph>, keep: Vec<Array1<f64>>, kind: ViewKind) -> Self {
        for k in &keep {
            assert_eq!(k.len(), graph.n_edges(), "one keep weight per edge");
        }
        Self { graph, keep, kind }
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn kind(&self) -> ViewKind {
        self.kind
    }

    pub fn n_layers(&self) -> usize {
        self.keep.len()
    }

    pub fn layer_weights(&self, layer: usize) -> ArrayView1<'_, f64> {
        self.keep[layer].view()
    }

    /// All keep weights, layer by layer.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.keep.iter().flat_map(|k| k.iter().copied())
    }

    /// Edges whose keep weight in `layer` is at least 0.5. For inspection only;
    /// training always uses the soft weights.
    pub fn hard_edges(&self, layer: usize) -> Vec<(usize, usize)> {
        self.graph
            .edges()
            .iter()
            .zip(self.keep[layer].iter())
            .filter(|(_, &p)| p >= 0.5)
            .map(|(&(u, v), _)| (u as usize, v as usize))
            .collect()
    }
}

/// Edge scorer `w = MLP([h_u ‖ h_v])`, one network shared by all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScorerParams {
    pub mlp: Mlp,
}

impl EdgeScorerParams {
    /// `2d → hidden → 1`.
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(&[2 * dim, hidden, 1], rng),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.input_dim() / 2
    }

    /// Binds the network so the first layer is applied as `h_u W_u + h_v W_v`,
    /// which lets the projection run once per node instead of once per edge.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundEdgeScorer {
        let d = self.embedding_dim();
        let first = &self.mlp.layers[0];
        let leaf = |a: Array2<f64>| if trainable { tape.param(a) } else { tape.constant(a) };
        let rest = Mlp {
            layers: self.mlp.layers[1..].to_vec(),
        };
        BoundEdgeScorer {
            w_user: leaf(first.weight.slice(s![..d, ..]).to_owned()),
            w_item: leaf(first.weight.slice(s![d.., ..]).to_owned()),
            b: leaf(first.bias.clone()),
            rest: rest.bind(tape, trainable),
        }
    }
}

impl Parameters for EdgeScorerParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.mlp.tensors_mut()
    }
}

pub struct BoundEdgeScorer {
    w_user: Var,
    w_item: Var,
    b: Var,
    rest: BoundMlp,
}

impl BoundEdgeScorer {
    /// Scores every edge of `graph` from node embeddings `h`; returns `E x 1`.
    pub fn score_edges(&self, tape: &Tape, graph: &InteractionGraph, h: Var) -> Var {
        let nu = graph.n_users();
        let us: Rc<Vec<usize>> = Rc::new(graph.edges().iter().map(|&(u, _)| u as usize).collect());
        let vs: Rc<Vec<usize>> = Rc::new(graph.edges().iter().map(|&(_, v)| nu + v as usize).collect());
        let pu = tape.matmul(h, self.w_user);
        let pv = tape.matmul(h, self.w_item);
        match self.rest.layers.as_slice() {
            [] => tape.add_row(tape.gather_pair_sum(pu, pv, us, vs), self.b),
            [last] if tape.value(last.weight).ncols() == 1 => {
                let s = tape.edge_relu_dot(pu, pv, self.b, last.weight, us, vs);
                tape.add_row(s, last.bias)
            }
            _ => {
                let out = tape.relu(tape.add_row(tape.gather_pair_sum(pu, pv, us, vs), self.b));
                self.rest.forward(tape, out)
            }
        }
    }

    /// Gradients reassembled into the layout of [`EdgeScorerParams`].
    pub fn collect_grads(&self, grads: &Gradients, params: &EdgeScorerParams) -> Vec<Array2<f64>> {
        let first = &params.mlp.layers[0];
        let d = params.embedding_dim();
        let h = first.output_dim();
        let gu = grads.get_or_zeros(self.w_user, (d, h));
        let gv = grads.get_or_zeros(self.w_item, (d, h));
        let mut w = Array2::zeros((2 * d, h));
        w.slice_mut(s![..d, ..]).assign(&gu);
        w.slice_mut(s![d.., ..]).assign(&gv);
        let mut out = vec![w, grads.get_or_zeros(self.b, (1, h))];
        let shapes: Vec<_> = params.mlp.layers[1..].iter().flat_map(|l| l.shapes()).collect();
        out.extend(self.rest.grads(grads, &shapes));
        out
    }
}

impl Bound for BoundEdgeScorer {
    fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.w_user, self.w_item, self.b];
        v.extend(self.rest.vars());
        v
    }
}

/// `MLP([h_u ‖ h_v])` for a single edge.
pub fn edge_weight(h_u: ArrayView1<'_, f64>, h_v: ArrayView1<'_, f64>, params: &EdgeScorerParams) -> f64 {
    let mut x = Array2::zeros((1, h_u.len() + h_v.len()));
    x.slice_mut(s![0, ..h_u.len()]).assign(&h_u);
    x.slice_mut(s![0, h_u.len()..]).assign(&h_v);
    params.mlp.eval(&x)[[0, 0]]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ((ln η − ln(1 − η) + w) / τ_r)`, kept strictly inside (0, 1).
pub fn gumbel_keep_prob(w: f64, eta: f64, tau_r: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("eta must lie strictly inside (0, 1), got {eta}")));
    }
    if !(tau_r > 0.0) {
        return Err(Error::Config(format!("tau_r must be positive, got {tau_r}")));
    }
    let logit = eta.ln() - (-eta).ln_1p();
    Ok(sigmoid((logit + w) / tau_r).clamp(KEEP_EPS, 1.0 - KEEP_EPS))
}

/// Source of the concrete-relaxation offset η.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaMode {
    /// Fresh `η ~ Uniform(0, 1)` per edge, layer and forward pass.
    Sampled,
    /// The same η everywhere; for debugging.
    Fixed(f64),
}

/// Draws one η per edge for a single layer.
pub fn sample_eta(n_edges: usize, mode: EtaMode, rng: &mut impl Rng) -> Array1<f64> {
    match mode {
        EtaMode::Sampled => Array1::from_shape_simple_fn(n_edges, || Open01.sample(rng)),
        EtaMode::Fixed(eta) => Array1::from_elem(n_edges, eta),
    }
}

fn logit(eta: &Array1<f64>) -> Array2<f64> {
    eta.mapv(|e| e.ln() - (-e).ln_1p()).insert_axis(Axis(1))
}

/// Keep weights for one layer, recorded on a tape.
pub struct LayerKeep {
    pub weight: Var,
    pub keep: Var,
    pub eta: Array1<f64>,
}

/// Tape version of [`generate_view_g1`]: `layers[l]` are the layer-`l`
/// embeddings the scorer reads.
pub fn recognition_on_tape(
    tape: &Tape,
    graph: &InteractionGraph,
    layers: &[Var],
    scorer: &BoundEdgeScorer,
    tau_r: f64,
    eta_mode: EtaMode,
    rng: &mut impl Rng,
) -> Vec<LayerKeep> {
    layers
        .iter()
        .map(|&h| {
            let weight = scorer.score_edges(tape, graph, h);
            let eta = sample_eta(graph.n_edges(), eta_mode, rng);
            let offset = tape.constant(logit(&eta));
            let z = tape.scale(tape.add(weight, offset), 1.0 / tau_r);
            let keep = tape.clamp(tape.sigmoid(z), KEEP_EPS, 1.0 - KEEP_EPS);
            LayerKeep { weight, keep, eta }
        })
        .collect()
}

/// A generated recognition view with the scorer outputs and noise that
/// produced it.
#[derive(Clone, Debug)]
pub struct RecognitionSample {
    pub view: AugmentedView,
    pub weights: Vec<Array1<f64>>,
    pub etas: Vec<Array1<f64>>,
}

/// Scores every training edge in every layer from `layer_embeddings`
/// (layers `0..L`) and relaxes the scores into keep weights.
pub fn generate_view_g1(
    graph: &Rc<InteractionGraph>,
    layer_embeddings: &[Array2<f64>],
    params: &EdgeScorerParams,
    tau_r: f64,
    eta_mode: EtaMode,
    rng: &mut impl Rng,
) -> Result<RecognitionSample> {
    if !(tau_r > 0.0) {
        return Err(Error::Config(format!("tau_r must be positive, got {tau_r}")));
    }
    if let EtaMode::Fixed(e) = eta_mode {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Config(format!("eta must lie strictly inside (0, 1), got {e}")));
        }
    }
    for h in layer_embeddings {
        if h.dim() != (graph.n_nodes(), params.embedding_dim()) {
            return Err(Error::Shape(format!(
                "layer embeddings are {:?}, expected ({}, {})",
                h.dim(),
                graph.n_nodes(),
                params.embedding_dim()
            )));
        }
    }
    let tape = Tape::new();
    let scorer = params.bind(&tape, false);
    let layers: Vec<Var> = layer_embeddings.iter().map(|h| tape.constant(h.clone())).collect();
    let keeps = recognition_on_tape(&tape, graph, &layers, &scorer, tau_r, eta_mode, rng);
    let col = |v: Var| tape.value(v).column(0).to_owned();
    let weights = keeps.iter().map(|k| col(k.weight)).collect();
    let keep = keeps.iter().map(|k| col(k.keep)).collect();
    let etas = keeps.into_iter().map(|k| k.eta).collect();
    Ok(RecognitionSample {
        view: AugmentedView::new(Rc::clone(graph), keep, ViewKind::Recognition),
        weights,
        etas,
    })
}

/// CSV `user,item,layer,w,eta,p` for every edge and layer.
pub fn recognition_dump(sample: &RecognitionSample) -> String {
    let mut out = String::from("user,item,layer,w,eta,p\n");
    for l in 0..sample.view.n_layers() {
        let keep = sample.view.layer_weights(l);
        for (e, &(u, v)) in sample.view.graph().edges().iter().enumerate() {
            let _ = writeln!(
                out,
                "{u},{v},{l},{},{},{}",
                sample.weights[l][e], sample.etas[l][e], keep[e]
            );
        }
    }
    out
}

pub fn write_recognition_dump(path: &Path, sample: &RecognitionSample) -> Result<()> {
    std::fs::write(path, recognition_dump(sample)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_graph;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Rc<InteractionGraph> {
        Rc::new(build_graph(&[(0, 0), (0, 1), (1, 1), (1, 2)], 2, 3))
    }

    #[test]
    fn zero_scorer_gives_zero_weight() {
        let p = EdgeScorerParams { mlp: Mlp::zeros(&[6, 4, 1]) };
        let hu = array![1.0, -2.0, 0.3];
        assert_eq!(edge_weight(hu.view(), hu.view(), &p), 0.0);
    }

    #[test]
    fn summing_scorer() {
        let d = 3;
        let mut mlp = Mlp::zeros(&[2 * d, 1]);
        mlp.layers[0].weight.fill(1.0);
        let p = EdgeScorerParams { mlp };
        let ones = Array1::ones(d);
        assert_eq!(edge_weight(ones.view(), ones.view(), &p), 2.0 * d as f64);
    }

    #[test]
    fn scorer_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = EdgeScorerParams::new(3, 5, &mut rng);
        let a = array![1.0, 0.0, -1.0];
        let b = array![0.2, 0.9, 0.4];
        let ab = edge_weight(a.view(), b.view(), &p);
        let ba = edge_weight(b.view(), a.view(), &p);
        assert!((ab - ba).abs() > 1e-9);
    }

    #[test]
    fn keep_prob_examples() {
        for tau in [0.01, 0.2, 5.0] {
            assert_eq!(gumbel_keep_prob(0.0, 0.5, tau).unwrap(), 0.5);
        }
        assert!((gumbel_keep_prob(4.0, 0.5, 0.1).unwrap() - 1.0).abs() < 1e-9);
        assert!(gumbel_keep_prob(-4.0, 0.5, 1e-4).unwrap() < 1e-9);
        assert!(gumbel_keep_prob(1.0, 0.0, 1.0).is_err());
        assert!(gumbel_keep_prob(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn view_is_seed_deterministic() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = EdgeScorerParams::new(4, 4, &mut rng);
        let h = vec![Array2::from_elem((5, 4), 0.1), Array2::from_elem((5, 4), -0.2)];
        let a = generate_view_g1(&g, &h, &p, 0.2, EtaMode::Sampled, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_view_g1(&g, &h, &p, 0.2, EtaMode::Sampled, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.view, b.view);
        assert_eq!(a.view.n_layers(), 2);
    }

    #[test]
    fn zero_scorer_matches_elementwise_oracle() {
        let g = toy();
        let p = EdgeScorerParams { mlp: Mlp::zeros(&[4, 3, 1]) };
        let h = vec![Array2::from_elem((5, 2), 0.5)];
        let tau = 0.2;
        let s = generate_view_g1(&g, &h, &p, tau, EtaMode::Sampled, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for e in 0..g.n_edges() {
            let eta: f64 = s.etas[0][e];
            let oracle = 1.0 / (1.0 + (-((eta / (1.0 - eta)).ln() / tau)).exp());
            assert!((s.view.layer_weights(0)[e] - oracle.clamp(KEEP_EPS, 1.0 - KEEP_EPS)).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_temperature_flattens_weights() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EdgeScorerParams::new(2, 3, &mut rng);
        let h = vec![Array2::from_elem((5, 2), 0.5)];
        let s = generate_view_g1(&g, &h, &p, 1e6, EtaMode::Sampled, &mut rng).unwrap();
        assert!(s.view.weights().all(|p| (p - 0.5).abs() < 1e-4));
    }

    #[test]
    fn dump_has_one_row_per_edge_and_layer() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EdgeScorerParams::new(2, 3, &mut rng);
        let h = vec![Array2::from_elem((5, 2), 0.5); 2];
        let s = generate_view_g1(&g, &h, &p, 0.2, EtaMode::Fixed(0.3), &mut rng).unwrap();
        let dump = recognition_dump(&s);
        assert_eq!(dump.lines().count(), 1 + 2 * 4);
        assert!(dump.starts_with("user,item,layer,w,eta,p\n"));
    }
}
