use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN_DIM: usize = 25;

/// Two-layer Q-network: `Q = W₂·tanh(W₁·s + b₁) + b₂`.
///
/// Weight matrices are stored row-major, `w1` as `hidden × input` and `w2`
/// as `output × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// A regression sample for one taken action.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub target: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    /// `[input, hidden, output]`
    shape: [usize; 3],
    /// w1, b1, w2, b2 concatenated.
    params: Vec<f64>,
}

impl QNetwork {
    /// Xavier-uniform hidden layer; the output layer and all biases start at
    /// zero, so an untrained network rates every action equally.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(input_dim, HIDDEN_DIM, output_dim, seed)
    }

    pub fn with_hidden(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be positive, got {input_dim}x{hidden_dim}x{output_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let w1 = (0..hidden_dim * input_dim).map(|_| rng.random_range(-a..a)).collect();
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        })
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: HIDDEN_DIM,
            output_dim,
            w1: vec![0.0; HIDDEN_DIM * input_dim],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; output_dim * HIDDEN_DIM],
            b2: vec![0.0; output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: state.len() });
        }
        Ok(())
    }

    fn hidden(&self, state: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let z: f64 = row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + self.b1[j];
                z.tanh()
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.output_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[o]
            })
            .collect()
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state)?;
        Ok(self.output(&self.hidden(state)))
    }

    /// Mean squared error of `Q(s, a)` against fixed targets, and its exact
    /// gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[Sample<'_>]) -> Result<(f64, Gradients)> {
        let mut g = Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        if batch.is_empty() {
            return Ok((0.0, g));
        }
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.check_input(s.state)?;
            if s.action >= self.output_dim {
                return Err(Error::InvalidConfig(format!("action {} out of range for {} outputs", s.action, self.output_dim)));
            }
            let h = self.hidden(s.state);
            let a = s.action;
            let row = &self.w2[a * self.hidden_dim..(a + 1) * self.hidden_dim];
            let q: f64 = row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>() + self.b2[a];
            let err = q - s.target;
            loss += err * err / n;
            let dq = 2.0 * err / n;
            g.b2[a] += dq;
            for j in 0..self.hidden_dim {
                g.w2[a * self.hidden_dim + j] += dq * h[j];
                let dz = dq * row[j] * (1.0 - h[j] * h[j]);
                g.b1[j] += dz;
                let w1_row = &mut g.w1[j * self.input_dim..(j + 1) * self.input_dim];
                for (gw, x) in w1_row.iter_mut().zip(s.state) {
                    *gw += dz * x;
                }
            }
        }
        Ok((loss, g))
    }

    pub fn apply_sgd(&mut self, g: &Gradients, lr: f64) {
        let step = |p: &mut [f64], d: &[f64]| p.iter_mut().zip(d).for_each(|(p, d)| *p -= lr * d);
        step(&mut self.w1, &g.w1);
        step(&mut self.b1, &g.b1);
        step(&mut self.w2, &g.w2);
        step(&mut self.b2, &g.b2);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Flat parameter list in checkpoint order.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint { shape: [self.input_dim, self.hidden_dim, self.output_dim], params: self.params() };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let [i, h, o] = ck.shape;
        if i == 0 || h == 0 || o == 0 {
            return Err(Error::Checkpoint(format!("invalid shape {:?}", ck.shape)));
        }
        let expected = h * i + h + o * h + o;
        if ck.params.len() != expected {
            return Err(Error::Checkpoint(format!("shape {:?} needs {expected} params, found {}", ck.shape, ck.params.len())));
        }
        let mut rest = &ck.params[..];
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        Ok(Self { input_dim: i, hidden_dim: h, output_dim: o, w1: take(h * i), b1: take(h), w2: take(o * h), b2: take(o) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
