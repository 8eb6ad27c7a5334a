//! Dense layers, multilayer perceptrons and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Gradients, Tape, Var};

/// Types that own trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.dim()).collect()
    }

    /// Number of scalar parameters.
    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Tensors bound on a tape, in the same order as [`Parameters::tensors`].
pub trait Bound {
    fn vars(&self) -> Vec<Var>;

    fn grads(&self, grads: &Gradients, shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
        self.vars()
            .into_iter()
            .zip(shapes)
            .map(|(v, &s)| grads.get_or_zeros(v, s))
            .collect()
    }
}

/// Glorot-uniform initialised matrix.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Affine layer `x W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: xavier(input, output, rng),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundLinear {
        let leaf = |a: &Array2<f64>| {
            if trainable {
                tape.param(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        BoundLinear {
            weight: leaf(&self.weight),
            bias: leaf(&self.bias),
        }
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        tape.add_row(tape.matmul(x, self.weight), self.bias)
    }
}

impl Bound for BoundLinear {
    fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

/// Stack of [`Linear`] layers with ReLU between them and no activation on
/// the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// Evaluates the network on a plain matrix without recording gradients.
    pub fn eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let out = m.forward(&tape, xv);
        let v = tape.value(out).clone();
        v
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }
}

impl Bound for BoundMlp {
    fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    /// Applies one update. `grads` must align with `params`.
    pub fn update(&mut self, params: Vec<&mut Array2<f64>>, mut grads: Vec<Array2<f64>>) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient count");
        assert_eq!(params.len(), self.m.len(), "adam: optimizer built for other parameters");
        if let Some(max) = self.clip_norm {
            let norm = global_norm(&grads);
            if norm > max {
                let s = max / norm;
                for g in &mut grads {
                    g.mapv_inplace(|x| x * s);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_outputs_zero() {
        let m = Mlp::zeros(&[4, 3, 1]);
        let out = m.eval(&Array2::ones((2, 4)));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = array![[3.0, -2.0]];
        let mut opt = Adam::new(0.1, &[(1, 2)]);
        for _ in 0..500 {
            let g = x.mapv(|v| 2.0 * v);
            opt.update(vec![&mut x], vec![g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x}");
    }

    #[test]
    fn clipping_bounds_first_step() {
        // With clipping the first Adam step is still lr-sized, but the moment
        // estimate must see the clipped gradient.
        let mut x = array![[0.0]];
        let mut opt = Adam::new(0.1, &[(1, 1)]).with_clip(5.0);
        opt.update(vec![&mut x], vec![array![[100.0]]]);
        assert!((opt.m[0][[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn xavier_is_seeded() {
        let a = xavier(3, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let b = xavier(3, 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}
