use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::Parameters;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Affine layer `y = x·Wᵀ + b` with gradient accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// out × in
    pub weights: Matrix,
    pub bias: Vec<f64>,
    #[serde(skip)]
    grad_w: Matrix,
    #[serde(skip)]
    grad_b: Vec<f64>,
    #[serde(skip)]
    cached_input: Option<Matrix>,
}

impl DenseLayer {
    /// Uniform(-1/√fan_in, 1/√fan_in) initialization.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weights = Matrix {
            rows: fan_out,
            cols: fan_in,
            data: (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect(),
        };
        let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_parts(weights, bias).expect("consistent shapes")
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows {
            return Err(Error::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weights.rows
            )));
        }
        Ok(DenseLayer {
            grad_w: Matrix::zeros(weights.rows, weights.cols),
            grad_b: vec![0.0; weights.rows],
            weights,
            bias,
            cached_input: None,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows
    }

    /// Forward pass without caching.
    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = input.matmul_t(&self.weights)?;
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Forward pass that caches `input` for [`DenseLayer::backward`].
    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        let out = self.apply(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    /// Accumulates weight and bias gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::Shape("backward called without a cached forward".into()))?;
        if grad_out.rows != input.rows || grad_out.cols != self.fan_out() {
            return Err(Error::Shape(format!(
                "grad_out {}x{} does not match forward output {}x{}",
                grad_out.rows,
                grad_out.cols,
                input.rows,
                self.fan_out()
            )));
        }
        if self.grad_w.rows != self.weights.rows || self.grad_w.cols != self.weights.cols {
            self.grad_w = Matrix::zeros(self.weights.rows, self.weights.cols);
            self.grad_b = vec![0.0; self.weights.rows];
        }
        for r in 0..grad_out.rows {
            let g = grad_out.row(r);
            let x = input.row(r);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.grad_b[o] += go;
                let gw = self.grad_w.row_mut(o);
                for (w, &xi) in gw.iter_mut().zip(x) {
                    *w += go * xi;
                }
            }
        }
        grad_out.matmul(&self.weights)
    }

    pub fn grad_weights(&self) -> &Matrix {
        &self.grad_w
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_b
    }

    pub fn zero_grad(&mut self) {
        self.grad_w = Matrix::zeros(self.weights.rows, self.weights.cols);
        self.grad_b = vec![0.0; self.weights.rows];
    }
}

impl Parameters for DenseLayer {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        if self.grad_w.data.len() != self.weights.data.len() {
            self.zero_grad();
        }
        f(&mut self.weights.data, &self.grad_w.data);
        f(&mut self.bias, &self.grad_b);
    }
}

/// Multilayer perceptron: LeakyReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    #[serde(skip)]
    pre_activations: Vec<Matrix>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths.windows(2).map(|w| DenseLayer::new(w[0], w[1], rng)).collect();
        Mlp {
            layers,
            pre_activations: Vec::new(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                h.data.iter_mut().for_each(|v| *v = leaky_relu(*v));
            }
        }
        Ok(h)
    }

    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        self.pre_activations.clear();
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            h = self.layers[i].forward(&h)?;
            if i < last {
                self.pre_activations.push(h.clone());
                h.data.iter_mut().for_each(|v| *v = leaky_relu(*v));
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let pre = self
                    .pre_activations
                    .get(i)
                    .ok_or_else(|| Error::Shape("backward called without a cached forward".into()))?;
                for (gv, &p) in g.data.iter_mut().zip(&pre.data) {
                    if p < 0.0 {
                        *gv *= LEAKY_SLOPE;
                    }
                }
            }
            g = self.layers[i].backward(&g)?;
        }
        self.pre_activations.clear();
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::zero_grad);
    }

    /// Zeroes the final layer so every output equals zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.fill(0.0);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

impl Parameters for Mlp {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for l in &mut self.layers {
            l.for_each_param(f);
        }
    }
}

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> DenseLayer {
        let mut w = Matrix::zeros(n, n);
        (0..n).for_each(|i| w.set(i, i, 1.0));
        DenseLayer::from_parts(w, vec![0.0; n]).unwrap()
    }

    #[test]
    fn forward_examples() {
        let x = Matrix::from_rows(&[vec![3.0, 4.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(identity(2).apply(&x).unwrap(), x);
        let c = DenseLayer::from_parts(Matrix::zeros(1, 2), vec![2.5]).unwrap();
        assert_eq!(c.apply(&x).unwrap().data, vec![2.5, 2.5]);
        let l = DenseLayer::from_parts(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![1.0]).unwrap();
        assert_eq!(
            l.apply(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap().data,
            vec![12.0]
        );
        assert!(l.apply(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut id = identity(3);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        id.forward(&x).unwrap();
        let g = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        assert_eq!(id.backward(&g).unwrap(), g);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = DenseLayer::new(3, 2, &mut rng);
        l.forward(&x).unwrap();
        let gi = l.backward(&Matrix::zeros(1, 2)).unwrap();
        assert!(gi.data.iter().all(|v| *v == 0.0));
        assert!(l.grad_weights().data.iter().all(|v| *v == 0.0));
        assert!(l.grad_bias().iter().all(|v| *v == 0.0));
        assert!(l.backward(&Matrix::zeros(1, 2)).is_err(), "cache consumed");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut layer = DenseLayer::new(3, 2, &mut rng);
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 0.8], vec![1.1, 0.4, -0.5]]).unwrap();
        let upstream = Matrix::from_rows(&[vec![0.7, -0.2], vec![0.1, 1.3]]).unwrap();
        // scalar objective: sum(upstream ⊙ output)
        let objective = |l: &DenseLayer, x: &Matrix| -> f64 {
            let y = l.apply(x).unwrap();
            y.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        layer.forward(&x).unwrap();
        let gx = layer.backward(&upstream).unwrap();
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for k in 0..layer.weights.data.len() {
            let mut p = layer.clone();
            p.weights.data[k] += h;
            let mut m = layer.clone();
            m.weights.data[k] -= h;
            let fd = (objective(&p, &x) - objective(&m, &x)) / (2.0 * h);
            assert!(rel(fd, layer.grad_weights().data[k]) < 1e-5);
        }
        for k in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[k] += h;
            let mut xm = x.clone();
            xm.data[k] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            assert!(rel(fd, gx.data[k]) < 1e-5);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mlp = Mlp::new(3, &[5], 2, &mut rng);
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 0.8], vec![1.1, 0.4, -0.5]]).unwrap();
        let objective = |m: &Mlp| -> f64 { m.apply(&x).unwrap().data.iter().map(|v| v * v).sum::<f64>() * 0.5 };
        let y = mlp.forward(&x).unwrap();
        mlp.backward(&y).unwrap();
        let h = 1e-6;
        for li in 0..mlp.layers.len() {
            for k in 0..mlp.layers[li].weights.data.len() {
                let mut p = mlp.clone();
                p.layers[li].weights.data[k] += h;
                let mut m = mlp.clone();
                m.layers[li].weights.data[k] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                let an = mlp.layers[li].grad_weights().data[k];
                assert!(
                    (fd - an).abs() < 1e-6 * fd.abs().max(1.0),
                    "layer {li} weight {k}: {fd} vs {an}"
                );
            }
        }
    }
}
