//! Mini-batch SGD with momentum, early stopping on validation macro-F1, and a
//! finite-difference gradient audit.
//!
//! The first layer is indexed by hashed features, so only the rows a batch
//! touches receive gradient. Untouched rows still feel momentum and weight
//! decay; rather than sweeping every row each step, a row's zero-gradient
//! steps are replayed in closed form the next time it is touched or at the end
//! of the epoch.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::features::SparseVector;
use crate::losses::{self, LossStrategy, Target};
use crate::model::{Architecture, Classifier, LabelDistribution, ModelSpec, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks 0.1 for linear models and 0.05 for mlp models.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: None,
            momentum: 0.9,
            weight_decay: 1e-5,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_for(&self, architecture: &Architecture) -> f64 {
        self.learning_rate.unwrap_or(match architecture {
            Architecture::Linear => 0.1,
            Architecture::Mlp { .. } => 0.05,
        })
    }

    /// Copy with the learning rate made explicit.
    pub fn resolved(&self, architecture: &Architecture) -> Self {
        Self {
            learning_rate: Some(self.learning_rate_for(architecture)),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("learning_rate must be finite and >= 0, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 0.5), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
    pub validation_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Per-example backpropagation result. Parameter gradients are outer products
/// of these vectors with the layer inputs.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub loss: f64,
    /// d loss / d logits.
    pub dlogits: Vec<f64>,
    /// Rectified hidden activations (empty for linear models).
    pub hidden: Vec<f64>,
    /// d loss / d hidden pre-activation (empty for linear models).
    pub dpre: Vec<f64>,
}

impl ExampleGrad {
    /// Gradient flowing into the first layer's outputs.
    fn first_layer(&self) -> &[f64] {
        if self.dpre.is_empty() {
            &self.dlogits
        } else {
            &self.dpre
        }
    }
}

pub(crate) fn backprop(
    network: &Network,
    x: &SparseVector,
    target: &Target,
    strategy: &LossStrategy,
) -> ExampleGrad {
    let act = network.forward_unchecked(x);
    let mut dlogits = vec![0.0; act.logits.len()];
    let loss = losses::loss_and_grad(strategy, &act.logits, target, &mut dlogits);
    if act.hidden_pre.is_empty() {
        return ExampleGrad {
            loss,
            dlogits,
            hidden: Vec::new(),
            dpre: Vec::new(),
        };
    }
    let out = &network.layers()[1];
    let dpre = act
        .hidden_pre
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            if z > 0.0 {
                out.row(j).iter().zip(&dlogits).map(|(w, g)| w * g).sum()
            } else {
                0.0
            }
        })
        .collect();
    ExampleGrad {
        loss,
        dlogits,
        hidden: act.hidden_pre.iter().map(|z| z.max(0.0)).collect(),
        dpre,
    }
}

/// SGD with momentum, `v = mu v + g + lambda w; w -= lr v`, with decay on
/// weights only. First-layer rows are updated lazily.
pub struct Trainer {
    network: Network,
    strategy: LossStrategy,
    lr: f64,
    momentum: f64,
    decay: f64,
    /// Velocity per layer: weights then bias.
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
    /// Steps already applied to each first-layer row.
    synced: Vec<u64>,
    steps: u64,
    /// `powers[n]` is the row-major 2x2 matrix advancing `(w, v)` over n
    /// zero-gradient steps.
    powers: Vec<[f64; 4]>,
    slots: HashMap<u32, usize>,
    touched: Vec<u32>,
    row_grads: Vec<f64>,
}

impl Trainer {
    pub fn new(
        network: Network,
        strategy: LossStrategy,
        lr: f64,
        momentum: f64,
        decay: f64,
    ) -> Result<Self> {
        strategy.validate()?;
        let velocity = network
            .layers()
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let rows = network.layers()[0].fan_in;
        Ok(Self {
            network,
            strategy,
            lr,
            momentum,
            decay,
            velocity,
            synced: vec![0; rows],
            steps: 0,
            powers: vec![[1.0, 0.0, 0.0, 1.0]],
            slots: HashMap::new(),
            touched: Vec::new(),
            row_grads: Vec::new(),
        })
    }

    fn power(&mut self, n: usize) -> [f64; 4] {
        let (lr, mu, lambda) = (self.lr, self.momentum, self.decay);
        while self.powers.len() <= n {
            let [a, b, c, d] = *self.powers.last().expect("identity present");
            // [[1 - lr lambda, -lr mu], [lambda, mu]] times the previous power.
            let (p, q, r, s) = (1.0 - lr * lambda, -lr * mu, lambda, mu);
            self.powers
                .push([p * a + q * c, p * b + q * d, r * a + s * c, r * b + s * d]);
        }
        self.powers[n]
    }

    fn catch_up(&mut self, row: usize) {
        let gap = (self.steps - self.synced[row]) as usize;
        if gap == 0 {
            return;
        }
        let [a, b, c, d] = self.power(gap);
        let layer = &mut self.network.layers_mut()[0];
        let fan_out = layer.fan_out;
        let w = &mut layer.weights[row * fan_out..(row + 1) * fan_out];
        let v = &mut self.velocity[0].0[row * fan_out..(row + 1) * fan_out];
        for (wi, vi) in w.iter_mut().zip(v.iter_mut()) {
            let (w0, v0) = (*wi, *vi);
            *wi = a * w0 + b * v0;
            *vi = c * w0 + d * v0;
        }
        self.synced[row] = self.steps;
    }

    /// Brings every first-layer row up to date.
    pub fn flush(&mut self) {
        for row in 0..self.synced.len() {
            self.catch_up(row);
        }
    }

    /// Synchronized parameters.
    pub fn network(&mut self) -> &Network {
        self.flush();
        &self.network
    }

    pub fn into_network(mut self) -> Network {
        self.flush();
        self.network
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update on the mean gradient of `batch`. Returns the summed loss,
    /// or the first non-finite example loss as an error value.
    pub fn step(&mut self, batch: &[&(SparseVector, Target)]) -> std::result::Result<f64, f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        // The forward pass must see up-to-date rows.
        for (x, _) in batch {
            for &i in x.indices() {
                self.catch_up(i as usize);
            }
        }
        let grads: Vec<ExampleGrad> = batch
            .par_iter()
            .map(|(x, t)| backprop(&self.network, x, t, &self.strategy))
            .collect();
        if let Some(bad) = grads.iter().find(|g| !g.loss.is_finite()) {
            return Err(bad.loss);
        }
        let scale = 1.0 / batch.len() as f64;
        let layers = self.network.layers();
        let fan_out0 = layers[0].fan_out;

        // Accumulate in batch order so the sum is independent of scheduling.
        self.slots.clear();
        self.touched.clear();
        self.row_grads.clear();
        let mut bias0 = vec![0.0; fan_out0];
        let mut out_grads = layers
            .get(1)
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]));
        for ((x, _), g) in batch.iter().zip(&grads) {
            let d = g.first_layer();
            for (i, xi) in x.iter() {
                let slot = *self.slots.entry(i as u32).or_insert_with(|| {
                    self.touched.push(i as u32);
                    self.row_grads.resize(self.row_grads.len() + fan_out0, 0.0);
                    self.touched.len() - 1
                });
                let buf = &mut self.row_grads[slot * fan_out0..(slot + 1) * fan_out0];
                let xs = xi * scale;
                for (b, dj) in buf.iter_mut().zip(d) {
                    *b += xs * dj;
                }
            }
            for (b, dj) in bias0.iter_mut().zip(d) {
                *b += scale * dj;
            }
            if let Some((w_grad, b_grad)) = out_grads.as_mut() {
                let k = g.dlogits.len();
                for (j, &h) in g.hidden.iter().enumerate() {
                    if h == 0.0 {
                        continue;
                    }
                    let hs = h * scale;
                    for (wg, gc) in w_grad[j * k..(j + 1) * k].iter_mut().zip(&g.dlogits) {
                        *wg += hs * gc;
                    }
                }
                for (b, gc) in b_grad.iter_mut().zip(&g.dlogits) {
                    *b += scale * gc;
                }
            }
        }

        let touched = std::mem::take(&mut self.touched);
        for (slot, &row) in touched.iter().enumerate() {
            let row = row as usize;
            self.catch_up(row);
            let grad = &self.row_grads[slot * fan_out0..(slot + 1) * fan_out0];
            let w = &mut self.network.layers_mut()[0].weights[row * fan_out0..(row + 1) * fan_out0];
            let v = &mut self.velocity[0].0[row * fan_out0..(row + 1) * fan_out0];
            sgd(w, v, grad, self.lr, self.momentum, self.decay);
            self.synced[row] = self.steps + 1;
        }
        self.touched = touched;

        let (lr, mu, lambda) = (self.lr, self.momentum, self.decay);
        let layers = self.network.layers_mut();
        sgd(
            &mut layers[0].bias,
            &mut self.velocity[0].1,
            &bias0,
            lr,
            mu,
            0.0,
        );
        if let Some((w_grad, b_grad)) = out_grads {
            sgd(
                &mut layers[1].weights,
                &mut self.velocity[1].0,
                &w_grad,
                lr,
                mu,
                lambda,
            );
            sgd(
                &mut layers[1].bias,
                &mut self.velocity[1].1,
                &b_grad,
                lr,
                mu,
                0.0,
            );
        }
        self.steps += 1;
        Ok(grads.iter().map(|g| g.loss).sum())
    }
}

fn sgd(w: &mut [f64], v: &mut [f64], grad: &[f64], lr: f64, mu: f64, lambda: f64) {
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(grad) {
        *vi = mu * *vi + gi + lambda * *wi;
        *wi -= lr * *vi;
    }
}

fn check_data(
    network: &Network,
    data: &[(SparseVector, Target)],
    strategy: &LossStrategy,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("no training examples".into()));
    }
    let k = network.k();
    let soft = strategy.kind.uses_soft_targets();
    for (x, t) in data {
        if let Some(&last) = x.indices().last() {
            if last as usize >= network.input_dim() {
                return Err(Error::IndexOutOfRange {
                    index: last as usize,
                    dimension: network.input_dim(),
                });
            }
        }
        match t {
            Target::Hard(y) if !soft => {
                if *y >= k {
                    return Err(Error::LabelOutOfRange { label: *y, k });
                }
            }
            Target::Soft(q) if soft => {
                if q.k() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        found: q.k(),
                    });
                }
            }
            _ => {
                return Err(Error::TargetMismatch {
                    strategy: strategy.kind.name(),
                    target: t.kind_name(),
                })
            }
        }
    }
    Ok(())
}

/// Shuffled split of `0..n` into (train, validation) index lists, each sorted.
fn carve_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn validate_epoch(
    network: &Network,
    data: &[(SparseVector, Target)],
    val: &[usize],
) -> Result<(f64, f64)> {
    let preds: Vec<usize> = val
        .par_iter()
        .map(|&i| argmax(&network.forward_unchecked(&data[i].0).logits))
        .collect();
    let golds: Vec<usize> = val.iter().map(|&i| data[i].1.label()).collect();
    let m = eval::evaluate(&preds, &golds, network.k())?;
    Ok((m.accuracy, m.macro_f1))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a freshly initialized network. Identical to
/// `fine_tune(Network::init(spec)?, ..)`.
pub fn train(
    spec: &ModelSpec,
    data: &[(SparseVector, Target)],
    strategy: &LossStrategy,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    fine_tune(Network::init(spec)?, data, strategy, config)
}

/// Continues training from the given parameters and returns those of the
/// best validation epoch (the last epoch when there is no validation split).
pub fn fine_tune(
    network: Network,
    data: &[(SparseVector, Target)],
    strategy: &LossStrategy,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    strategy.validate()?;
    check_data(&network, data, strategy)?;
    let (mut train_idx, val_idx) =
        carve_validation(data.len(), config.validation_fraction, config.seed);
    let mut history = TrainHistory {
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
        ..TrainHistory::default()
    };
    if config.epochs == 0 {
        return Ok((network, history));
    }
    let lr = config.learning_rate_for(&network.spec().architecture);
    let mut trainer = Trainer::new(network, *strategy, lr, config.momentum, config.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, f64, Network)> = None;

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let batch: Vec<&(SparseVector, Target)> = chunk.iter().map(|&i| &data[i]).collect();
            total += trainer.step(&batch).map_err(|loss| Error::NonFiniteLoss {
                epoch,
                batch: b,
                loss,
            })?;
        }
        let train_loss = total / train_idx.len() as f64;
        log::debug!("epoch {epoch}: train loss {train_loss:.6}");
        if val_idx.is_empty() {
            history.epochs.push(EpochRecord {
                epoch,
                train_loss,
                validation_accuracy: None,
                validation_macro_f1: None,
            });
            history.best_epoch = Some(epoch);
            continue;
        }
        let current = trainer.network();
        let (acc, f1) = validate_epoch(current, data, &val_idx)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_accuracy: Some(acc),
            validation_macro_f1: Some(f1),
        });
        match &mut best {
            None => best = Some((epoch, f1, current.clone())),
            Some((best_epoch, best_f1, snapshot)) => {
                if f1 > *best_f1 {
                    *best_epoch = epoch;
                    *best_f1 = f1;
                    snapshot.copy_from(current);
                } else if epoch - *best_epoch >= config.patience {
                    history.stopped_early = epoch + 1 < config.epochs;
                    break;
                }
            }
        }
        history.best_epoch = best.as_ref().map(|b| b.0);
    }
    let network = match best {
        Some((_, _, snapshot)) => snapshot,
        None => trainer.into_network(),
    };
    Ok((network, history))
}

/// [`fine_tune`] on a classifier; the vectorizer and categories are kept.
pub fn fine_tune_classifier(
    model: Classifier,
    data: &[(SparseVector, Target)],
    strategy: &LossStrategy,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    let Classifier {
        network,
        vectorizer,
        categories,
    } = model;
    let (network, history) = fine_tune(network, data, strategy, config)?;
    Ok((Classifier::new(network, vectorizer, categories)?, history))
}

/// Finite-difference step and rectifier margin used by [`gradient_audit`].
pub const AUDIT_STEP: f64 = 1e-6;
pub const AUDIT_KINK_MARGIN: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely: central differences
/// at `AUDIT_STEP` carry rounding noise of order 1e-9.
pub const AUDIT_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientAudit {
    pub trials: usize,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Inputs redrawn because a hidden pre-activation sat near the kink.
    pub resampled: usize,
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(AUDIT_FLOOR)
}

#[derive(Clone, Copy)]
enum Param {
    Weight(usize, usize),
    Bias(usize, usize),
}

/// Compares analytic logit and parameter gradients against central finite
/// differences on random sparse inputs and random valid targets.
pub fn gradient_audit(
    spec: &ModelSpec,
    strategy: &LossStrategy,
    trials: usize,
    seed: u64,
) -> Result<GradientAudit> {
    if trials == 0 {
        return Err(Error::InvalidConfig(
            "gradient audit needs at least one trial".into(),
        ));
    }
    strategy.validate()?;
    let mut network = Network::init(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.k;
    let mut audit = GradientAudit {
        trials,
        checked: 0,
        max_relative_error: 0.0,
        resampled: 0,
    };
    for _ in 0..trials {
        let x = loop {
            let x = random_sparse(&mut rng, spec.input_dim);
            let pre = network.forward_unchecked(&x).hidden_pre;
            if pre.iter().all(|z| z.abs() >= AUDIT_KINK_MARGIN) {
                break x;
            }
            audit.resampled += 1;
        };
        let target = if strategy.kind.uses_soft_targets() {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            Target::Soft(LabelDistribution::new(
                raw.iter().map(|r| r / sum).collect(),
            )?)
        } else {
            Target::Hard(rng.random_range(0..k))
        };
        let g = backprop(&network, &x, &target, strategy);

        let logits = network.forward_unchecked(&x).logits;
        for c in 0..k {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[c] += AUDIT_STEP;
            minus[c] -= AUDIT_STEP;
            let fd = (losses::loss(strategy, &plus, &target)?
                - losses::loss(strategy, &minus, &target)?)
                / (2.0 * AUDIT_STEP);
            audit.max_relative_error = audit
                .max_relative_error
                .max(relative_error(g.dlogits[c], fd));
            audit.checked += 1;
        }

        let shapes = spec.layer_shapes();
        let mut params = Vec::new();
        for _ in 0..4 {
            let (i, _) = x
                .iter()
                .nth(rng.random_range(0..x.nnz()))
                .expect("nonempty input");
            params.push(Param::Weight(
                0,
                i * shapes[0].1 + rng.random_range(0..shapes[0].1),
            ));
        }
        for (layer, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            for _ in 0..4 {
                params.push(Param::Bias(layer, rng.random_range(0..fan_out)));
                if layer > 0 {
                    params.push(Param::Weight(layer, rng.random_range(0..fan_in * fan_out)));
                }
            }
        }
        for p in params {
            let analytic = match p {
                Param::Weight(0, idx) => {
                    let (row, col) = (idx / shapes[0].1, idx % shapes[0].1);
                    let xi = x.iter().find(|&(i, _)| i == row).map_or(0.0, |(_, v)| v);
                    xi * g.first_layer()[col]
                }
                Param::Weight(_, idx) => g.hidden[idx / k] * g.dlogits[idx % k],
                Param::Bias(0, j) => g.first_layer()[j],
                Param::Bias(_, c) => g.dlogits[c],
            };
            let original = *param_mut(&mut network, p);
            *param_mut(&mut network, p) = original + AUDIT_STEP;
            let up = losses::loss(strategy, &network.forward_unchecked(&x).logits, &target)?;
            *param_mut(&mut network, p) = original - AUDIT_STEP;
            let down = losses::loss(strategy, &network.forward_unchecked(&x).logits, &target)?;
            *param_mut(&mut network, p) = original;
            let fd = (up - down) / (2.0 * AUDIT_STEP);
            audit.max_relative_error = audit.max_relative_error.max(relative_error(analytic, fd));
            audit.checked += 1;
        }
    }
    Ok(audit)
}

fn param_mut(network: &mut Network, p: Param) -> &mut f64 {
    let layers = network.layers_mut();
    match p {
        Param::Weight(l, i) => &mut layers[l].weights[i],
        Param::Bias(l, i) => &mut layers[l].bias[i],
    }
}

fn random_sparse(rng: &mut ChaCha8Rng, dim: usize) -> SparseVector {
    let nnz = rng.random_range(1..=dim.min(16));
    let mut indices: Vec<u32> = Vec::with_capacity(nnz);
    while indices.len() < nnz {
        let i = rng.random_range(0..dim) as u32;
        if !indices.contains(&i) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    let values = (0..nnz).map(|_| rng.random_range(-1.0..1.0)).collect();
    SparseVector::new(indices, values).expect("valid by construction")
}
