use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }
}

/// A dense feed-forward network: an ordered list of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<Dense>,
}

pub fn init_dense(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<ParamSet> {
    if sizes.len() < 2 {
        return Err(Error::param("a network needs at least an input and an output size"));
    }
    if sizes.contains(&0) {
        return Err(Error::param("layer sizes must be positive"));
    }
    if activations.len() != sizes.len() - 1 {
        return Err(Error::param(format!("{} activations for {} layers", activations.len(), sizes.len() - 1)));
    }
    let mut rng = rng::rng_from(seed);
    let layers = sizes
        .windows(2)
        .zip(activations)
        .map(|(w, &activation)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Dense { weight: Matrix { rows: fan_out, cols: fan_in, data }, bias: vec![0.0; fan_out], activation }
        })
        .collect();
    Ok(ParamSet { layers })
}

/// ReLU hidden layers followed by an output activation.
pub fn mlp(sizes: &[usize], output: Activation, seed: u64) -> Result<ParamSet> {
    let n = sizes.len().saturating_sub(1);
    let mut acts = vec![Activation::Relu; n.saturating_sub(1)];
    acts.push(output);
    init_dense(sizes, &acts, seed)
}

impl ParamSet {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::param("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::param(format!("layer {i} bias has wrong length")));
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::param(format!("layer {i} does not chain with layer {}", i - 1)));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Matrix::zeros(l.weight.rows, l.weight.cols),
                    bias: vec![0.0; l.bias.len()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    /// Parameters in a fixed order: each layer's weights (row-major), then its
    /// bias.
    pub fn flat_iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.data.iter().chain(&l.bias))
    }

    pub fn flat_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.data.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        *self.flat_iter().nth(idx).expect("flat index in range")
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        *self.flat_iter_mut().nth(idx).expect("flat index in range") = v;
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(x), Exec::Sequential)?.data)
    }

    /// Forward pass over a batch whose rows are inputs.
    pub fn forward_batch(&self, x: &Matrix, exec: Exec) -> Result<Matrix> {
        if x.cols != self.input_dim() {
            return Err(Error::param(format!("input has dim {}, network expects {}", x.cols, self.input_dim())));
        }
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = h.matmul_nt(&l.weight, exec);
            for row in z.data.chunks_mut(z.cols) {
                row.iter_mut().zip(&l.bias).for_each(|(v, b)| *v = l.activation.apply(*v + b));
            }
            h = z;
        }
        Ok(h)
    }
}
