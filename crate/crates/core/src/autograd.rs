//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices, with the sparse graph propagation primitive the models need.
//!
//! Every value is an [`Array2<f64>`]. Scalars are `1 x 1` matrices. Nodes are
//! appended in evaluation order, so the reverse pass is a single backwards
//! sweep over the node list.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

use crate::dataset::InteractionGraph;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    GatherPairSum(Var, Var, Rc<Vec<usize>>, Rc<Vec<usize>>),
    RowDot(Var, Var),
    GatherRowDot(Var, Rc<Vec<usize>>, Rc<Vec<usize>>),
    EdgeReluDot {
        pu: Var,
        pv: Var,
        bias: Var,
        w: Var,
        ia: Rc<Vec<usize>>,
        ib: Rc<Vec<usize>>,
    },
    RowSum(Var),
    RowL2Normalize(Var, f64),
    LogSumExpRows(Var, bool),
    Diag(Var),
    Propagate {
        x: Var,
        keep: Option<Var>,
        graph: Rc<InteractionGraph>,
    },
    Bce(Var, Rc<Array2<f64>>, f64),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. Operations take `&self`; the node list lives behind a
/// `RefCell` so expressions can be nested.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed to it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, var: Var) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.0].value)
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).dim()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
        v[[0, 0]]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].requires_grad
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(&Array2<f64>) -> Array2<f64>) -> Var {
        let value = f(&self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MatMul(a, b), |x, y| x.dot(y))
    }

    pub fn matmul_bt(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MatMulBt(a, b), |x, y| x.dot(&y.t()))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "add: shape mismatch");
            x + y
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "sub: shape mismatch");
            x - y
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "mul: shape mismatch");
            x * y
        })
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, Op::AddRow(a, row), |x, r| {
            assert_eq!(r.nrows(), 1, "add_row: bias must be a single row");
            x + r
        })
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.mapv(|v| v.max(0.0)))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| x.mapv(sigmoid))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.mapv(f64::exp))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |x| x.mapv(softplus))
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.mapv(|v| v.clamp(lo, hi)))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::SumAll(a), |x| Array2::from_elem((1, 1), x.sum()))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn gather_rows(&self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let value = {
            let x = self.value(a);
            x.select(Axis(0), &idx)
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::GatherRows(a, idx), rg)
    }

    /// `a[ia[k]] + b[ib[k]]` for every `k`, without materialising both gathers.
    pub fn gather_pair_sum(&self, a: Var, b: Var, ia: Rc<Vec<usize>>, ib: Rc<Vec<usize>>) -> Var {
        assert_eq!(ia.len(), ib.len(), "gather_pair_sum: index length mismatch");
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(x.ncols(), y.ncols(), "gather_pair_sum: width mismatch");
            let mut out = Array2::zeros((ia.len(), x.ncols()));
            for (k, mut row) in out.outer_iter_mut().enumerate() {
                Zip::from(&mut row)
                    .and(x.row(ia[k]))
                    .and(y.row(ib[k]))
                    .for_each(|o, &p, &q| *o = p + q);
            }
            out
        };
        let rg = self.rg(&[a, b]);
        self.push(value, Op::GatherPairSum(a, b, ia, ib), rg)
    }

    /// Row-wise inner products, `n x 1`.
    pub fn row_dot(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::RowDot(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "row_dot: shape mismatch");
            (x * y).sum_axis(Axis(1)).insert_axis(Axis(1))
        })
    }

    /// `x[ia[k]] · x[ib[k]]` for every `k`, `n x 1`.
    pub fn gather_row_dot(&self, x: Var, ia: Rc<Vec<usize>>, ib: Rc<Vec<usize>>) -> Var {
        assert_eq!(ia.len(), ib.len(), "gather_row_dot: index length mismatch");
        let value = {
            let xv = self.value(x);
            let mut out = Array2::zeros((ia.len(), 1));
            for (k, o) in out.iter_mut().enumerate() {
                *o = xv.row(ia[k]).dot(&xv.row(ib[k]));
            }
            out
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::GatherRowDot(x, ia, ib), rg)
    }

    /// `relu(pu[ia[k]] + pv[ib[k]] + bias) · w` for every `k`, `n x 1`.
    /// Same result as gather, add_row, relu and matmul, without the
    /// `n x h` intermediates.
    pub fn edge_relu_dot(
        &self,
        pu: Var,
        pv: Var,
        bias: Var,
        w: Var,
        ia: Rc<Vec<usize>>,
        ib: Rc<Vec<usize>>,
    ) -> Var {
        assert_eq!(ia.len(), ib.len(), "edge_relu_dot: index length mismatch");
        let value = {
            let nodes = self.nodes.borrow();
            let (a, b) = (&nodes[pu.0].value, &nodes[pv.0].value);
            let (c, wv) = (&nodes[bias.0].value, &nodes[w.0].value);
            let h = a.ncols();
            assert_eq!(b.ncols(), h, "edge_relu_dot: width mismatch");
            assert_eq!(c.dim(), (1, h), "edge_relu_dot: bias shape");
            assert_eq!(wv.dim(), (h, 1), "edge_relu_dot: weight shape");
            let (a, b) = (a.as_standard_layout(), b.as_standard_layout());
            let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
            let c: Vec<f64> = c.iter().copied().collect();
            let wv: Vec<f64> = wv.iter().copied().collect();
            let mut out = Array2::zeros((ia.len(), 1));
            for (k, o) in out.iter_mut().enumerate() {
                let ra = &a[ia[k] * h..(ia[k] + 1) * h];
                let rb = &b[ib[k] * h..(ib[k] + 1) * h];
                let mut s = 0.0;
                for j in 0..h {
                    s += (ra[j] + rb[j] + c[j]).max(0.0) * wv[j];
                }
                *o = s;
            }
            out
        };
        let rg = self.rg(&[pu, pv, bias, w]);
        self.push(value, Op::EdgeReluDot { pu, pv, bias, w, ia, ib }, rg)
    }

    pub fn row_sum(&self, a: Var) -> Var {
        self.unary(a, Op::RowSum(a), |x| x.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    /// Divide each row by `max(‖row‖, eps)`.
    pub fn row_l2_normalize(&self, a: Var, eps: f64) -> Var {
        self.unary(a, Op::RowL2Normalize(a, eps), |x| {
            let mut out = x.clone();
            for mut row in out.outer_iter_mut() {
                let n = row.dot(&row).sqrt().max(eps);
                row.mapv_inplace(|v| v / n);
            }
            out
        })
    }

    /// Row-wise log-sum-exp, `n x 1`. With `skip_diag` the diagonal entry of
    /// a square input is left out of its row.
    pub fn logsumexp_rows(&self, a: Var, skip_diag: bool) -> Var {
        self.unary(a, Op::LogSumExpRows(a, skip_diag), |x| {
            let mut out = Array2::zeros((x.nrows(), 1));
            for (i, row) in x.outer_iter().enumerate() {
                let mut m = f64::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if !(skip_diag && i == j) {
                        m = m.max(v);
                    }
                }
                let s: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !(skip_diag && i == *j))
                    .map(|(_, &v)| (v - m).exp())
                    .sum();
                out[[i, 0]] = m + s.ln();
            }
            out
        })
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&self, a: Var) -> Var {
        self.unary(a, Op::Diag(a), |x| {
            assert_eq!(x.nrows(), x.ncols(), "diag: matrix must be square");
            x.diag().to_owned().insert_axis(Axis(1))
        })
    }

    /// One step of symmetric propagation `Â_keep · x` over `graph`, where the
    /// normalized entry of edge `e` is multiplied by `keep[e]` when given.
    pub fn propagate(&self, x: Var, keep: Option<Var>, graph: &Rc<InteractionGraph>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            assert_eq!(
                xv.nrows(),
                graph.n_nodes(),
                "propagate: embedding rows do not match node count"
            );
            let kv = keep.map(|k| {
                let k = &nodes[k.0].value;
                assert_eq!(k.dim(), (graph.n_edges(), 1), "propagate: keep shape");
                k
            });
            spmm(graph, kv, xv)
        };
        let mut inputs = vec![x];
        inputs.extend(keep);
        let rg = self.rg(&inputs);
        self.push(
            value,
            Op::Propagate {
                x,
                keep,
                graph: Rc::clone(graph),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`, with
    /// `p` clamped into `[eps, 1 - eps]`.
    pub fn bce(&self, p: Var, labels: Rc<Array2<f64>>, eps: f64) -> Var {
        let value = {
            let pv = self.value(p);
            assert_eq!(pv.dim(), labels.dim(), "bce: shape mismatch");
            let mut acc = 0.0;
            Zip::from(&*pv).and(&*labels).for_each(|&q, &s| {
                let q = q.clamp(eps, 1.0 - eps);
                acc -= s * q.ln() + (1.0 - s) * (1.0 - q).ln();
            });
            Array2::from_elem((1, 1), acc / pv.len().max(1) as f64)
        };
        let rg = self.rg(&[p]);
        self.push(value, Op::Bce(p, labels, eps), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, d: Array2<f64>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(val(*b)));
                    }
                    if wants(*b) {
                        acc(*b, g.t().dot(val(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, &g * val(*b));
                    }
                    if wants(*b) {
                        acc(*b, &g * val(*a));
                    }
                }
                Op::AddRow(a, r) => {
                    if wants(*r) {
                        acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else { 0.0 });
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &s| *d *= s * (1.0 - s));
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Softplus(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    acc(*a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= if x < *lo || x > *hi { 0.0 } else { 1.0 });
                    acc(*a, d);
                }
                Op::SumAll(a) => {
                    let s = g[[0, 0]];
                    acc(*a, Array2::from_elem(val(*a).dim(), s));
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::GatherPairSum(a, b, ia, ib) => {
                    for (v, idx) in [(*a, ia), (*b, ib)] {
                        if !wants(v) {
                            continue;
                        }
                        let mut d = Array2::zeros(val(v).dim());
                        for (k, &r) in idx.iter().enumerate() {
                            let mut row = d.row_mut(r);
                            row += &g.row(k);
                        }
                        acc(v, d);
                    }
                }
                Op::RowDot(a, b) => {
                    if wants(*a) {
                        acc(*a, val(*b) * &g);
                    }
                    if wants(*b) {
                        acc(*b, val(*a) * &g);
                    }
                }
                Op::GatherRowDot(x, ia, ib) => {
                    let xv = val(*x);
                    let mut d = Array2::zeros(xv.dim());
                    for k in 0..ia.len() {
                        let gk = g[[k, 0]];
                        let (i, j) = (ia[k], ib[k]);
                        for c in 0..xv.ncols() {
                            let (xi, xj) = (xv[[i, c]], xv[[j, c]]);
                            d[[i, c]] += gk * xj;
                            d[[j, c]] += gk * xi;
                        }
                    }
                    acc(*x, d);
                }
                Op::EdgeReluDot { pu, pv, bias, w, ia, ib } => {
                    let (av, bv) = (val(*pu), val(*pv));
                    let h = av.ncols();
                    let (a, b) = (av.as_standard_layout(), bv.as_standard_layout());
                    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
                    let c: Vec<f64> = val(*bias).iter().copied().collect();
                    let wv: Vec<f64> = val(*w).iter().copied().collect();
                    let mut da = vec![0.0; a.len()];
                    let mut db = vec![0.0; b.len()];
                    let mut dc = vec![0.0; h];
                    let mut dw = vec![0.0; h];
                    for k in 0..ia.len() {
                        let gk = g[[k, 0]];
                        let (i, j) = (ia[k] * h, ib[k] * h);
                        for t in 0..h {
                            let z = a[i + t] + b[j + t] + c[t];
                            let on = if z > 0.0 { 1.0 } else { 0.0 };
                            let dz = on * gk * wv[t];
                            da[i + t] += dz;
                            db[j + t] += dz;
                            dc[t] += dz;
                            dw[t] += gk * z.max(0.0);
                        }
                    }
                    let shape = |n: usize, v: Vec<f64>| Array2::from_shape_vec((n, h), v).unwrap();
                    acc(*pu, shape(av.nrows(), da));
                    acc(*pv, shape(bv.nrows(), db));
                    acc(*bias, shape(1, dc));
                    acc(*w, Array2::from_shape_vec((h, 1), dw).unwrap());
                }
                Op::RowSum(a) => {
                    let d = Array2::from_shape_fn(val(*a).dim(), |(i, _)| g[[i, 0]]);
                    acc(*a, d);
                }
                Op::RowL2Normalize(a, eps) => {
                    // y = x / n with n = max(|x|, eps); dy/dx = (I - y yᵀ) / n when |x| > eps
                    let x = val(*a);
                    let y = &node.value;
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let xr = x.row(i);
                        let n = xr.dot(&xr).sqrt();
                        let gr = g.row(i);
                        let mut dr = d.row_mut(i);
                        if n > *eps {
                            let yg = y.row(i).dot(&gr);
                            Zip::from(&mut dr)
                                .and(gr)
                                .and(y.row(i))
                                .for_each(|o, &gv, &yv| *o = (gv - yv * yg) / n);
                        } else {
                            Zip::from(&mut dr).and(gr).for_each(|o, &gv| *o = gv / eps);
                        }
                    }
                    acc(*a, d);
                }
                Op::LogSumExpRows(a, skip_diag) => {
                    let x = val(*a);
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let lse = node.value[[i, 0]];
                        let gi = g[[i, 0]];
                        for j in 0..x.ncols() {
                            if *skip_diag && i == j {
                                continue;
                            }
                            d[[i, j]] = gi * (x[[i, j]] - lse).exp();
                        }
                    }
                    acc(*a, d);
                }
                Op::Diag(a) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for i in 0..d.nrows() {
                        d[[i, i]] = g[[i, 0]];
                    }
                    acc(*a, d);
                }
                Op::Propagate { x, keep, graph } => {
                    let kv = keep.map(val);
                    if wants(*x) {
                        // Â is symmetric, so the adjoint is the same operator.
                        acc(*x, spmm(graph, kv, &g));
                    }
                    if let Some(k) = keep {
                        if wants(*k) {
                            acc(*k, spmm_keep_grad(graph, val(*x), &g));
                        }
                    }
                }
                Op::Bce(p, labels, eps) => {
                    let pv = val(*p);
                    let n = pv.len().max(1) as f64;
                    let s = g[[0, 0]];
                    let mut d = Array2::zeros(pv.dim());
                    Zip::from(&mut d)
                        .and(pv)
                        .and(&**labels)
                        .for_each(|d, &q, &y| {
                            if q >= *eps && q <= 1.0 - *eps {
                                *d = s * (q - y) / (q * (1.0 - q)) / n;
                            }
                        });
                    acc(*p, d);
                }
            }
        }
        Gradients { grads }
    }
}

/// `Â_keep · x` using the edge list of `graph`.
pub(crate) fn spmm(graph: &InteractionGraph, keep: Option<&Array2<f64>>, x: &Array2<f64>) -> Array2<f64> {
    let d = x.ncols();
    let nu = graph.n_users();
    let mut out = Array2::<f64>::zeros((graph.n_nodes(), d));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    for (e, (&(u, v), &w)) in graph.edges().iter().zip(graph.edge_norms()).enumerate() {
        let w = match keep {
            Some(k) => w * k[[e, 0]],
            None => w,
        };
        if w == 0.0 {
            continue;
        }
        let (ur, vr) = (u as usize, nu + v as usize);
        for j in 0..d {
            os[ur * d + j] += w * xs[vr * d + j];
        }
        for j in 0..d {
            os[vr * d + j] += w * xs[ur * d + j];
        }
    }
    out
}

/// Gradient of `sum(g ⊙ Â_keep x)` with respect to the keep weights.
fn spmm_keep_grad(graph: &InteractionGraph, x: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let nu = graph.n_users();
    let mut out = Array2::zeros((graph.n_edges(), 1));
    for (e, (&(u, v), &w)) in graph.edges().iter().zip(graph.edge_norms()).enumerate() {
        let (ur, vr) = (u as usize, nu + v as usize);
        let s = g.row(ur).dot(&x.row(vr)) + g.row(vr).dot(&x.row(ur));
        out[[e, 0]] = w * s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / denom < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_sigmoid_chain() {
        let x0 = array![[0.3, -0.2], [0.1, 0.7], [-0.5, 0.4]];
        let w = array![[0.2, -0.1, 0.4], [0.5, 0.3, -0.6]];
        let f = |x: &Array2<f64>| {
            let t = Tape::new();
            let xv = t.param(x.clone());
            let wv = t.constant(w.clone());
            let h = t.sigmoid(t.matmul(xv, wv));
            let l = t.sum(t.mul(h, h));
            (t.item(l), t.backward(l).get(xv).unwrap().clone())
        };
        let (_, g) = f(&x0);
        assert_close(&g, &numeric_grad(&|x| f(x).0, &x0), 1e-6);
    }

    #[test]
    fn normalize_logsumexp_chain() {
        let x0 = array![[0.3, -0.2, 0.9], [0.1, 0.7, -0.3], [-0.5, 0.4, 0.2]];
        for skip in [false, true] {
            let f = |x: &Array2<f64>| {
                let t = Tape::new();
                let xv = t.param(x.clone());
                let n = t.row_l2_normalize(xv, 1e-12);
                let s = t.scale(t.matmul_bt(n, n), 2.0);
                let l = t.sum(t.sub(t.logsumexp_rows(s, skip), t.diag(s)));
                (t.item(l), t.backward(l).get(xv).unwrap().clone())
            };
            let (_, g) = f(&x0);
            assert_close(&g, &numeric_grad(&|x| f(x).0, &x0), 1e-6);
        }
    }

    #[test]
    fn softplus_is_stable() {
        let t = Tape::new();
        let x = t.constant(array![[-800.0, 0.0, 800.0]]);
        let y = t.softplus(x);
        let v = t.value(y);
        assert_eq!(v[[0, 0]], 0.0);
        assert!((v[[0, 1]] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v[[0, 2]], 800.0);
    }

    #[test]
    fn gather_scatter_adjoint() {
        let x0 = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let t = Tape::new();
        let x = t.param(x0);
        let idx = Rc::new(vec![2, 0, 2]);
        let l = t.sum(t.gather_rows(x, idx));
        let g = t.backward(l);
        assert_eq!(g.get(x).unwrap(), &array![[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let t = Tape::new();
        let a = t.param(array![[1.0]]);
        let b = t.constant(array![[2.0]]);
        let l = t.mul(a, b);
        let g = t.backward(l);
        assert_eq!(g.get(a).unwrap()[[0, 0]], 2.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn fused_edge_ops_match_composed() {
        let pu0 = array![[0.3, -0.2, 0.5], [0.1, 0.7, -0.4], [-0.5, 0.4, 0.2]];
        let pv0 = array![[0.2, 0.1, -0.3], [-0.6, 0.3, 0.8], [0.4, -0.1, 0.1]];
        let c0 = array![[0.05, -0.1, 0.2]];
        let w0 = array![[0.7], [-0.3], [0.5]];
        let ia = Rc::new(vec![0, 2, 1, 0]);
        let ib = Rc::new(vec![1, 0, 2, 2]);
        let run = |fused: bool| {
            let t = Tape::new();
            let (pu, pv) = (t.param(pu0.clone()), t.param(pv0.clone()));
            let (c, w) = (t.param(c0.clone()), t.param(w0.clone()));
            let s = if fused {
                t.edge_relu_dot(pu, pv, c, w, Rc::clone(&ia), Rc::clone(&ib))
            } else {
                let h = t.gather_pair_sum(pu, pv, Rc::clone(&ia), Rc::clone(&ib));
                t.matmul(t.relu(t.add_row(h, c)), w)
            };
            let d = if fused {
                t.gather_row_dot(pu, Rc::clone(&ia), Rc::clone(&ib))
            } else {
                t.row_dot(t.gather_rows(pu, Rc::clone(&ia)), t.gather_rows(pu, Rc::clone(&ib)))
            };
            let l = t.sum(t.mul(t.add(s, d), t.add(s, d)));
            let g = t.backward(l);
            let out: Vec<Array2<f64>> = [pu, pv, c, w].iter().map(|&v| g.get(v).unwrap().clone()).collect();
            (t.item(l), out)
        };
        let (la, ga) = run(true);
        let (lb, gb) = run(false);
        assert!((la - lb).abs() < 1e-12);
        for (a, b) in ga.iter().zip(&gb) {
            assert_close(a, b, 1e-10);
        }
    }
}
