//! Small classifiers used for the gradient pre-training phase.
//!
//! Weight matrices are stored row-major as `[fan_in x fan_out]`, so a layer
//! computes `y = x W + b` for a row vector `x`.

mod io;
mod lstm;
mod mlp;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use io::{decode_state, encode_state, load_state, save_state, FORMAT_VERSION, MAGIC};
pub use lstm::{lstm_backward, lstm_forward, lstm_step, lstm_step_cached, LstmStepCache};
pub use mlp::{mlp_backward, mlp_forward};
pub use train::{sgd_train, sgd_train_from, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub(crate) fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One hidden layer perceptron: `n_inputs -> n_hidden -> n_outputs`, softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(n_inputs: usize, n_hidden: usize, n_outputs: usize) -> Self {
        Self {
            n_inputs,
            n_hidden,
            n_outputs,
            activation: Activation::Relu,
        }
    }
}

/// Embedding, one LSTM layer, and a dense output layer reading the final hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_outputs: usize,
    /// Sequences longer than this are truncated to their first `max_len` tokens.
    #[serde(default)]
    pub max_len: Option<usize>,
}

impl LstmSpec {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize, n_outputs: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            n_outputs,
            max_len: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Mlp(MlpSpec),
    Lstm(LstmSpec),
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let dims: &[(&str, usize)] = match self {
            Architecture::Mlp(s) => &[
                ("n_inputs", s.n_inputs),
                ("n_hidden", s.n_hidden),
                ("n_outputs", s.n_outputs),
            ],
            Architecture::Lstm(s) => &[
                ("vocab_size", s.vocab_size),
                ("embed_dim", s.embed_dim),
                ("hidden_dim", s.hidden_dim),
                ("n_outputs", s.n_outputs),
            ],
        };
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if let Architecture::Lstm(LstmSpec { max_len: Some(0), .. }) = self {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Architecture::Mlp(s) => s.n_outputs,
            Architecture::Lstm(s) => s.n_outputs,
        }
    }

    /// Declared tensor order with `(name, kind, rows, cols)`.
    pub fn layout(&self) -> Vec<(String, ParamKind, usize, usize)> {
        use ParamKind::*;
        match self {
            Architecture::Mlp(s) => vec![
                ("hidden.weight".into(), Weight, s.n_inputs, s.n_hidden),
                ("hidden.bias".into(), Bias, 1, s.n_hidden),
                ("output.weight".into(), Weight, s.n_hidden, s.n_outputs),
                ("output.bias".into(), Bias, 1, s.n_outputs),
            ],
            Architecture::Lstm(s) => {
                let mut out = vec![("embedding.weight".into(), Weight, s.vocab_size, s.embed_dim)];
                for g in GATES {
                    out.push((format!("lstm.w_{g}"), Weight, s.embed_dim, s.hidden_dim));
                }
                for g in GATES {
                    out.push((format!("lstm.u_{g}"), Weight, s.hidden_dim, s.hidden_dim));
                }
                for g in GATES {
                    out.push((format!("lstm.b_{g}"), Bias, 1, s.hidden_dim));
                }
                out.push(("output.weight".into(), Weight, s.hidden_dim, s.n_outputs));
                out.push(("output.bias".into(), Bias, 1, s.n_outputs));
                out
            }
        }
    }
}

/// Gate order used for LSTM tensors: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "c"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, kind: ParamKind, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Layer part of the name (`output` for `output.weight`).
    pub fn layer(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Architecture plus its weight tensors, in [`Architecture::layout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub arch: Architecture,
    pub tensors: Vec<Tensor>,
}

impl NetworkState {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(name, kind, r, c)| Tensor::zeros(name, kind, r, c))
            .collect();
        Ok(Self { arch, tensors })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    /// Embedding rows use fan-in 1.
    pub fn initialize(arch: Architecture, seed: u64) -> Result<Self> {
        let mut state = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = |t: &Tensor| -> usize {
            match (t.layer(), t.kind) {
                ("embedding", _) => 1,
                (_, ParamKind::Weight) => t.rows,
                (_, ParamKind::Bias) => bias_fan_in(&arch, &t.name),
            }
        };
        for i in 0..state.tensors.len() {
            let bound = 1.0 / (fan_in(&state.tensors[i]) as f64).sqrt();
            for v in state.tensors[i].data.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(state)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for t in &self.tensors {
            if !names.contains(&t.layer()) {
                names.push(t.layer());
            }
        }
        names
    }

    /// Tensor shapes match the architecture and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let layout = self.arch.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, kind, rows, cols), t) in layout.iter().zip(&self.tensors) {
            if &t.name != name || t.kind != *kind || t.rows != *rows || t.cols != *cols || t.data.len() != rows * cols {
                return Err(Error::Dimension(format!(
                    "tensor `{}` [{}x{}] does not match `{name}` [{rows}x{cols}]",
                    t.name, t.rows, t.cols
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("tensor `{name}` holds a non-finite value")));
            }
        }
        Ok(())
    }

    /// Class scores for every sample of `data`, row-major `[len x n_outputs]`.
    pub fn logits(&self, data: &Dataset) -> Result<Vec<f64>> {
        match (&self.arch, data) {
            (Architecture::Mlp(_), Dataset::Tabular(d)) => mlp_forward(self, d.features()),
            (Architecture::Lstm(_), Dataset::Tokens(d)) => {
                let mut out = Vec::with_capacity(d.len() * self.arch.n_outputs());
                for seq in d.sequences() {
                    out.extend(lstm_forward(self, seq)?);
                }
                Ok(out)
            }
            _ => Err(Error::Input("dataset kind does not match the network architecture".into())),
        }
    }

    /// Arg-max class for every sample; ties resolve to the lowest class id.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        let k = self.arch.n_outputs();
        let logits = self.logits(data)?;
        Ok(logits.chunks_exact(k).map(argmax).collect())
    }

    /// Mean cross-entropy gradients over the samples at `indices`.
    pub fn loss_and_gradients(&self, data: &Dataset, indices: &[usize]) -> Result<(Gradients, f64)> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        match (&self.arch, data) {
            (Architecture::Mlp(_), Dataset::Tabular(d)) => {
                let labels: Vec<usize> = indices.iter().map(|&i| d.labels()[i]).collect();
                mlp_backward(self, &d.gather(indices), &labels)
            }
            (Architecture::Lstm(_), Dataset::Tokens(d)) => {
                let mut total = Gradients::zeros_like(self);
                let mut loss = 0.0;
                for &i in indices {
                    let (g, l) = lstm_backward(self, d.sequence(i), d.labels()[i])?;
                    total.accumulate(&g, 1.0);
                    loss += l;
                }
                let scale = 1.0 / indices.len() as f64;
                total.scale(scale);
                Ok((total, loss * scale))
            }
            _ => Err(Error::Input("dataset kind does not match the network architecture".into())),
        }
    }

    pub fn loss(&self, data: &Dataset, indices: &[usize]) -> Result<f64> {
        let k = self.arch.n_outputs();
        let sub = data.subset(indices);
        let logits = self.logits(&sub)?;
        let total: f64 = logits
            .chunks_exact(k)
            .zip(sub.labels())
            .map(|(z, &y)| log_sum_exp(z) - z[y])
            .sum();
        Ok(total / indices.len() as f64)
    }

    /// `self -= rate * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, rate: f64) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.tensors) {
            for (w, d) in t.data.iter_mut().zip(&g.data) {
                *w -= rate * d;
            }
        }
    }
}

fn bias_fan_in(arch: &Architecture, name: &str) -> usize {
    match (arch, name) {
        (Architecture::Mlp(s), "hidden.bias") => s.n_inputs,
        (Architecture::Mlp(s), _) => s.n_hidden,
        (Architecture::Lstm(s), "output.bias") => s.hidden_dim,
        (Architecture::Lstm(s), _) => s.embed_dim + s.hidden_dim,
    }
}

/// Gradient tensors laid out exactly like the owning [`NetworkState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            tensors: state
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.kind, t.rows, t.cols))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += weight * y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= factor;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
