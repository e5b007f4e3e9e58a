//! Teacher and student classifiers over hashed sparse features.
//!
//! A [`Network`] is either a linear softmax layer or a one-hidden-layer ReLU
//! perceptron. The first layer is stored row-per-input-feature so a sparse
//! input touches only the rows of its nonzero features.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CategorySet;
use crate::error::{Error, Result};
use crate::features::{SparseVector, Vectorizer};

pub use io::{load, save, FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub k: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, k: usize) -> Self {
        Self {
            architecture: Architecture::Linear,
            input_dim,
            k,
            init_scale: 1.0,
            seed: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden },
            input_dim,
            k,
            init_scale: 1.0,
            seed: 0,
        }
    }

    /// Default teacher: 2^18 hashed inputs, 256 hidden units.
    pub fn teacher(k: usize) -> Self {
        Self::mlp(1 << 18, 256, k)
    }

    /// Default student: 2^14 hashed inputs, 64 hidden units.
    pub fn student(k: usize) -> Self {
        Self::mlp(1 << 14, 64, k)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> Self {
        self.init_scale = init_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "k must be >= 2, got {}",
                self.k
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig(
                "input dimension must be positive".into(),
            ));
        }
        if let Architecture::Mlp { hidden } = self.architecture {
            if hidden == 0 {
                return Err(Error::InvalidConfig("mlp hidden width must be >= 1".into()));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be finite and >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self.architecture {
            Architecture::Linear => vec![(self.input_dim, self.k)],
            Architecture::Mlp { hidden } => vec![(self.input_dim, hidden), (hidden, self.k)],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

/// Weights are `fan_in × fan_out`, row-major: row `i` holds the outgoing
/// weights of input unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.fan_out..(i + 1) * self.fan_out]
    }

    fn sparse_affine(&self, x: &SparseVector, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (j, v) in x.iter() {
            for (o, w) in out.iter_mut().zip(self.row(j)) {
                *o += v * w;
            }
        }
    }

    fn dense_affine(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += v * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Hidden pre-activations (empty for linear models).
    pub hidden_pre: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Network {
    /// Weights uniform in `±init_scale/sqrt(fan_in)` drawn in layer order,
    /// biases zero.
    pub fn init(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let mut layer = Layer::zeros(fan_in, fan_out);
                let half_width = spec.init_scale / (fan_in as f64).sqrt();
                if half_width > 0.0 {
                    for w in &mut layer.weights {
                        *w = rng.random_range(-half_width..half_width);
                    }
                }
                layer
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub(crate) fn from_layers(spec: ModelSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len()
            || shapes.iter().zip(&layers).any(|(&(i, o), l)| {
                l.fan_in != i || l.fan_out != o || l.weights.len() != i * o || l.bias.len() != o
            })
        {
            return Err(Error::InvalidConfig(
                "parameter shapes do not match spec".into(),
            ));
        }
        if layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Overwrites parameters in place, reusing allocations.
    pub(crate) fn copy_from(&mut self, other: &Network) {
        self.spec.clone_from(&other.spec);
        self.layers.clone_from(&other.layers);
    }

    fn check_input(&self, x: &SparseVector) -> Result<()> {
        match x.indices().last() {
            Some(&last) if last as usize >= self.spec.input_dim => Err(Error::IndexOutOfRange {
                index: last as usize,
                dimension: self.spec.input_dim,
            }),
            _ => Ok(()),
        }
    }

    pub fn forward_detailed(&self, x: &SparseVector) -> Result<Activations> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &SparseVector) -> Activations {
        let first = &self.layers[0];
        let mut pre = vec![0.0; first.fan_out];
        first.sparse_affine(x, &mut pre);
        match self.layers.get(1) {
            None => Activations {
                hidden_pre: Vec::new(),
                logits: pre,
            },
            Some(out_layer) => {
                let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
                let mut logits = vec![0.0; out_layer.fan_out];
                out_layer.dense_affine(&hidden, &mut logits);
                Activations {
                    hidden_pre: pre,
                    logits,
                }
            }
        }
    }

    pub fn forward(&self, x: &SparseVector) -> Result<Vec<f64>> {
        Ok(self.forward_detailed(x)?.logits)
    }

    pub fn predict_proba(&self, x: &SparseVector) -> Result<LabelDistribution> {
        softmax(&self.forward(x)?)
    }

    pub fn predict(&self, x: &SparseVector) -> Result<(usize, f64)> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution(format!(
                "probabilities must lie in [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Wraps values already known to form a distribution (softmax output).
    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, label: usize) -> Self {
        let mut p = vec![0.0; k];
        p[label] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Most probable class (lowest index on ties) and its probability.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        (best, self.0[best])
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<LabelDistribution> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logits {logits:?}")));
    }
    if logits.is_empty() {
        return Err(Error::InvalidDistribution("no logits".into()));
    }
    Ok(LabelDistribution(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    p
}

/// A network bound to the vectorizer and category names it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub network: Network,
    pub vectorizer: Vectorizer,
    pub categories: CategorySet,
}

impl Classifier {
    pub fn new(network: Network, vectorizer: Vectorizer, categories: CategorySet) -> Result<Self> {
        if network.input_dim() != vectorizer.dimension() {
            return Err(Error::DimensionMismatch {
                expected: network.input_dim(),
                found: vectorizer.dimension(),
            });
        }
        if network.k() != categories.k() {
            return Err(Error::InvalidConfig(format!(
                "network has {} outputs but {} categories were given",
                network.k(),
                categories.k()
            )));
        }
        Ok(Self {
            network,
            vectorizer,
            categories,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    pub fn predict_text(&self, text: &str) -> Result<(usize, f64)> {
        self.network.predict(&self.vectorizer.transform(text)?)
    }

    /// Class distributions for many texts, in input order.
    pub fn predict_proba_texts<'a>(
        &self,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<LabelDistribution>> {
        use rayon::prelude::*;
        let texts: Vec<&str> = texts.into_iter().collect();
        texts
            .par_iter()
            .map(|t| self.network.predict_proba(&self.vectorizer.transform(t)?))
            .collect()
    }

    pub fn predict_texts<'a>(
        &self,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba_texts(texts)?
            .iter()
            .map(|d| d.argmax().0)
            .collect())
    }
}
