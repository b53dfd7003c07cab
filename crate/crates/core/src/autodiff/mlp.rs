use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Fully connected network. Hidden layers use the activation; the output
/// layer is linear. Weights are stored `in x out`, biases `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    activation: Activation,
}

/// Graph handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
    input: usize,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Dimension(format!("invalid layer widths {widths:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Uniform Glorot initialization multiplied by `init_scale`, zero biases.
    pub fn new(widths: &[usize], seed: u64, init_scale: f64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = init_scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let vals = (0..fan_in * fan_out).map(|_| rng.random_range(-1.0..=1.0) * limit).collect();
            weights.push(Tensor::matrix(fan_in, fan_out, vals)?.with_grad());
            biases.push(Tensor::zeros(vec![1, fan_out]).with_grad());
        }
        Ok(Self { widths: widths.to_vec(), weights, biases, activation: Activation::Tanh })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::new(widths, 0, 0.0)
    }

    /// Single linear layer computing the identity map.
    pub fn identity(n: usize) -> Result<Self> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self::from_parts(&[n, n], vec![w], vec![vec![0.0; n]])
    }

    pub fn from_parts(widths: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        check_widths(widths)?;
        if weights.len() != widths.len() - 1 || biases.len() != widths.len() - 1 {
            return Err(Error::Dimension("layer count does not match widths".into()));
        }
        let mut wt = Vec::new();
        let mut bt = Vec::new();
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            wt.push(Tensor::matrix(widths[l], widths[l + 1], w)?.with_grad());
            bt.push(Tensor::matrix(1, widths[l + 1], b)?.with_grad());
        }
        Ok(Self { widths: widths.to_vec(), weights: wt, biases: bt, activation: Activation::Tanh })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer(&self, l: usize) -> (&Tensor, &Tensor) {
        (&self.weights[l], &self.biases[l])
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn set_trainable(&mut self, flag: bool) {
        for p in self.params_mut() {
            p.set_requires_grad(flag);
        }
    }

    /// Registers the parameters as graph leaves. With `track == false` the
    /// leaves are constants regardless of the tensors' own flags.
    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if track && t.requires_grad() {
                g.leaf(t)
            } else {
                g.constant(t.rows(), t.cols(), t.values().to_vec())
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        BoundMlp { weights, biases, input: self.input_width() }
    }

    /// Binds with gradient tracking and runs a forward pass.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(BoundMlp, Var)> {
        let bound = self.bind(g, true);
        let y = bound.forward(g, x)?;
        Ok((bound, y))
    }

    /// Adds the gradients held by `g` for `bound` into the parameter tensors.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundMlp) {
        for (t, v) in self.weights.iter_mut().zip(&bound.weights) {
            if let Some(d) = g.grad(*v) {
                t.accumulate_grad(d);
            }
        }
        for (t, v) in self.biases.iter_mut().zip(&bound.biases) {
            if let Some(d) = g.grad(*v) {
                t.accumulate_grad(d);
            }
        }
    }

    /// Forward pass for a single input without a graph.
    pub fn forward_point(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_width(), "input width mismatch");
        let mut h = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (n_in, n_out) = (w.rows(), w.cols());
            let wv = w.values();
            let mut out = b.values().to_vec();
            for (p, hp) in h.iter().enumerate().take(n_in) {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += hp * wv[p * n_out + j];
                }
            }
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = out;
        }
        h
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, cols) = g.shape(x);
        if cols != self.input {
            return Err(Error::Dimension(format!(
                "network expects input width {}, got {}",
                self.input, cols
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = g.matmul(h, *w);
            let z = g.add(z, *b);
            h = if l == last { z } else { g.tanh(z) };
        }
        Ok(h)
    }
}
