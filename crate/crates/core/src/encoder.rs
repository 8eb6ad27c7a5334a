//! LightGCN-style linear propagation, the inner-product scorer and BPR.

use std::rc::Rc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{spmm, Tape, Var};
use crate::dataset::InteractionGraph;
use crate::error::{Error, Result};
use crate::view_recognition::AugmentedView;

/// Dense embeddings for all nodes: user rows first, then items.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Array2<f64>,
    n_users: usize,
}

impl EmbeddingTable {
    pub fn new(matrix: Array2<f64>, n_users: usize) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if n_users > matrix.nrows() {
            return Err(Error::Shape(format!(
                "{n_users} users but only {} rows",
                matrix.nrows()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding table contains non-finite entries".into()));
        }
        Ok(Self { matrix, n_users })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Mutable access for in-place optimizer updates.
    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.matrix.nrows() - self.n_users
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn user(&self, u: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(u)
    }

    pub fn item(&self, v: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(self.n_users + v)
    }

    pub fn users(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(ndarray::s![..self.n_users, ..])
    }

    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(ndarray::s![self.n_users.., ..])
    }
}

/// Learned base embeddings `E⁰` and the number of propagation layers.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embeddings: EmbeddingTable,
    pub n_layers: usize,
}

impl EncoderParams {
    /// Normal(0, 0.1) initialisation.
    pub fn init(n_users: usize, n_items: usize, dim: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let m = Array2::from_shape_simple_fn((n_users + n_items, dim), || normal.sample(rng));
        Self {
            embeddings: EmbeddingTable::new(m, n_users).expect("finite init"),
            n_layers,
        }
    }
}

/// The graph an encoder pass runs over.
#[derive(Clone, Copy, Debug)]
pub enum View<'a> {
    Plain(&'a InteractionGraph),
    Augmented(&'a AugmentedView),
}

impl View<'_> {
    fn graph(&self) -> &InteractionGraph {
        match self {
            View::Plain(g) => g,
            View::Augmented(v) => v.graph(),
        }
    }
}

/// Mean of the layer outputs `h⁰ = E⁰, hˡ⁺¹ = Â hˡ`, where `Â` carries the
/// view's per-layer keep weights.
pub fn propagate(view: View<'_>, params: &EncoderParams) -> Result<EmbeddingTable> {
    let graph = view.graph();
    let e0 = params.embeddings.matrix();
    if e0.nrows() != graph.n_nodes() || params.embeddings.n_users() != graph.n_users() {
        return Err(Error::Shape(format!(
            "embedding table has {} rows ({} users), graph has {} nodes ({} users)",
            e0.nrows(),
            params.embeddings.n_users(),
            graph.n_nodes(),
            graph.n_users()
        )));
    }
    if let View::Augmented(v) = view {
        if v.n_layers() < params.n_layers {
            return Err(Error::Shape(format!(
                "view has keep weights for {} layers, encoder needs {}",
                v.n_layers(),
                params.n_layers
            )));
        }
    }
    let mut acc = e0.clone();
    let mut h = e0.clone();
    for l in 0..params.n_layers {
        let keep = match view {
            View::Plain(_) => None,
            View::Augmented(v) => Some(v.layer_weights(l).insert_axis(Axis(1)).to_owned()),
        };
        h = spmm(graph, keep.as_ref(), &h);
        acc += &h;
    }
    acc /= (params.n_layers + 1) as f64;
    EmbeddingTable::new(acc, graph.n_users())
}

/// Per-layer outputs and their mean, recorded on a tape.
pub struct Propagation {
    pub layers: Vec<Var>,
    pub output: Var,
}

/// Tape version of [`propagate`]. `keeps[l]` scales the adjacency used to go
/// from layer `l` to `l + 1`; `None` means the plain normalized adjacency.
pub fn propagate_on_tape(
    tape: &Tape,
    graph: &Rc<InteractionGraph>,
    e0: Var,
    keeps: &[Option<Var>],
) -> Propagation {
    let mut layers = vec![e0];
    let mut sum = e0;
    let mut h = e0;
    for keep in keeps {
        h = tape.propagate(h, *keep, graph);
        layers.push(h);
        sum = tape.add(sum, h);
    }
    let output = tape.scale(sum, 1.0 / (keeps.len() + 1) as f64);
    Propagation { layers, output }
}

/// `y(u, v) = h_uᵀ h_v`.
pub fn score(h: &EmbeddingTable, u: usize, v: usize) -> f64 {
    h.user(u).dot(&h.item(v))
}

/// `-ln σ(y_pos - y_neg)`, evaluated as `softplus(y_neg - y_pos)`.
pub fn bpr_loss(y_pos: f64, y_neg: f64) -> f64 {
    let x = y_neg - y_pos;
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A batch of (user, positive item, negative item) triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triples {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl Triples {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Node-id index vectors (items shifted by `n_users`).
    pub fn node_indices(&self, n_users: usize) -> (Rc<Vec<usize>>, Rc<Vec<usize>>, Rc<Vec<usize>>) {
        (
            Rc::new(self.users.clone()),
            Rc::new(self.pos.iter().map(|v| v + n_users).collect()),
            Rc::new(self.neg.iter().map(|v| v + n_users).collect()),
        )
    }
}

/// Uniformly samples, for each (user, positive) edge, an item the user never
/// interacted with in `graph`.
pub fn sample_triples(graph: &InteractionGraph, edges: &[(usize, usize)], rng: &mut impl Rng) -> Triples {
    let n_items = graph.n_items();
    let mut t = Triples {
        users: Vec::with_capacity(edges.len()),
        pos: Vec::with_capacity(edges.len()),
        neg: Vec::with_capacity(edges.len()),
    };
    for &(u, v) in edges {
        if graph.user_items(u).len() >= n_items {
            continue;
        }
        let neg = loop {
            let j = rng.gen_range(0..n_items);
            if !graph.contains(u, j) {
                break j;
            }
        };
        t.users.push(u);
        t.pos.push(v);
        t.neg.push(neg);
    }
    t
}

/// Mean BPR loss of `triples` scored with embeddings `h` (all nodes).
pub fn bpr_on_tape(tape: &Tape, h: Var, triples: &Triples, n_users: usize) -> Var {
    let (u, p, n) = triples.node_indices(n_users);
    let hu = tape.gather_rows(h, u);
    let hp = tape.gather_rows(h, p);
    let hn = tape.gather_rows(h, n);
    let diff = tape.sub(tape.row_dot(hu, hn), tape.row_dot(hu, hp));
    tape.mean(tape.softplus(diff))
}

/// `reg / 2 · (‖e_u‖² + ‖e_pos‖² + ‖e_neg‖²)` averaged over the batch, on the
/// base embeddings.
pub fn l2_on_tape(tape: &Tape, e0: Var, triples: &Triples, n_users: usize, reg: f64) -> Var {
    let (u, p, n) = triples.node_indices(n_users);
    let mut total = None;
    for idx in [u, p, n] {
        let rows = tape.gather_rows(e0, idx);
        let sq = tape.sum(tape.mul(rows, rows));
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq),
        });
    }
    tape.scale(total.expect("three terms"), 0.5 * reg / triples.len().max(1) as f64)
}
