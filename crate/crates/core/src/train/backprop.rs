//! Quantized back-propagation.
//!
//! 1. The forward pass runs entirely in full precision, so the loss does not
//!    depend on the storage policy.
//! 2. Each hidden (post-ReLU) activation is handed to the codec and only the
//!    compressed form is kept; the input batch and output probabilities stay
//!    in full precision.
//! 3. During the backward pass a layer's stored activation is dequantized
//!    into a transient working copy, used for that layer's weight gradient
//!    `∂W = δᵀ·y`, then dropped.
//! 4. Local gradients `δ_prev = (δ·W) ⊙ relu'(v)` use only weights and the
//!    active/blocked mask, which the codec supplies (RV-Quant code 0, or the
//!    V-Quant mask bit). They are therefore identical under every policy.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::network::{Layer, MlpNetwork};
use crate::codec::{dequantize, memory_fraction, quantize, CodecMode, QuantConfig, QuantizedTensor};
use crate::error::{Result, VqError};
use crate::tensor::{matmul, matmul_lhs_transposed, matmul_transposed, DenseTensor};

/// How hidden activations are kept between the forward and backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "lowercase")]
pub enum ActivationStorage {
    Full,
    Quantized(QuantConfig),
}

impl ActivationStorage {
    /// Stored size relative to 32-bit storage. V-Quant pays for its mask.
    pub fn memory_fraction(&self) -> f64 {
        match self {
            ActivationStorage::Full => 1.0,
            ActivationStorage::Quantized(cfg) => memory_fraction(cfg, cfg.mode == CodecMode::VQuant),
        }
    }

    pub fn config(&self) -> Option<&QuantConfig> {
        match self {
            ActivationStorage::Full => None,
            ActivationStorage::Quantized(c) => Some(c),
        }
    }
}

impl fmt::Display for ActivationStorage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationStorage::Full => f.write_str("F"),
            ActivationStorage::Quantized(cfg) => f.write_str(&cfg.label()),
        }
    }
}

pub(crate) fn linear(x: &DenseTensor, layer: &Layer) -> Result<DenseTensor> {
    let mut z = matmul_transposed(x, &layer.weights)?;
    let width = layer.bias.len();
    for row in z.data_mut().chunks_exact_mut(width) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

pub(crate) fn relu(mut z: DenseTensor) -> DenseTensor {
    for v in z.data_mut() {
        *v = if *v > 0.0 { *v } else { 0.0 };
    }
    z
}

/// Row-wise softmax and mean cross-entropy. Log-sum-exp runs in `f64`.
pub(crate) fn softmax_cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<(f64, DenseTensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(VqError::Dimension(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut probs = Vec::with_capacity(b * c);
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(VqError::Dimension(format!("label {y} outside {c} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y] as f64;
        probs.extend(row.iter().map(|&v| ((v as f64 - lse).exp()) as f32));
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        let worst = logits.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        return Err(VqError::Numeric(format!(
            "non-finite loss {loss} (largest |logit| {worst}, batch {b})"
        )));
    }
    Ok((loss, DenseTensor::new(vec![b, c], probs)?))
}

/// Gradient of the mean cross-entropy w.r.t. the logits: `(p − onehot)/B`.
pub fn output_delta(probs: &DenseTensor, labels: &[usize]) -> DenseTensor {
    let (b, c) = (probs.rows(), probs.cols());
    let scale = 1.0 / b as f32;
    let mut d = probs.data().to_vec();
    for (i, &y) in labels.iter().enumerate() {
        d[i * c + y] -= 1.0;
    }
    for v in &mut d {
        *v *= scale;
    }
    DenseTensor::new(vec![b, c], d).expect("same shape as probs")
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    /// Post-ReLU output of each hidden layer, full precision.
    pub hidden: Vec<DenseTensor>,
    pub logits: DenseTensor,
    pub probs: DenseTensor,
}

pub fn forward(net: &MlpNetwork, batch: &DenseTensor, labels: &[usize]) -> Result<ForwardPass> {
    if batch.rank() != 2 || batch.cols() != net.input_dim() {
        return Err(VqError::Dimension(format!(
            "batch {:?} does not match input width {}",
            batch.shape(),
            net.input_dim()
        )));
    }
    let layers = net.layers();
    let mut hidden = Vec::with_capacity(layers.len() - 1);
    for layer in &layers[..layers.len() - 1] {
        let input = hidden.last().unwrap_or(batch);
        let h = relu(linear(input, layer)?);
        hidden.push(h);
    }
    let logits = linear(hidden.last().unwrap_or(batch), layers.last().expect("non-empty"))?;
    let (loss, probs) = softmax_cross_entropy(&logits, labels)?;
    Ok(ForwardPass { loss, hidden, logits, probs })
}

/// Logits only, no loss.
pub fn infer(net: &MlpNetwork, batch: &DenseTensor) -> Result<DenseTensor> {
    let layers = net.layers();
    let mut x = batch.clone();
    for layer in &layers[..layers.len() - 1] {
        x = relu(linear(&x, layer)?);
    }
    linear(&x, layers.last().expect("non-empty"))
}

pub fn argmax_rows(logits: &DenseTensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Percentage of rows whose arg-max logit matches the label.
pub fn accuracy_pct(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len().max(1) as f64
}

/// The stored form of one hidden layer's activation.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense(DenseTensor),
    Quantized(QuantizedTensor),
}

impl LayerCache {
    /// Full-precision working copy for the weight update.
    pub fn activations(&self) -> DenseTensor {
        match self {
            LayerCache::Dense(t) => t.clone(),
            LayerCache::Quantized(q) => dequantize(q),
        }
    }

    /// ReLU derivative: `true` where the neuron was active.
    pub fn active_mask(&self) -> Result<Vec<bool>> {
        match self {
            LayerCache::Dense(t) => Ok(t.data().iter().map(|&v| v > 0.0).collect()),
            LayerCache::Quantized(q) => q.active_mask(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            LayerCache::Dense(t) => t.shape(),
            LayerCache::Quantized(q) => q.shape(),
        }
    }

    pub fn storage_bits(&self) -> u64 {
        match self {
            LayerCache::Dense(t) => 32 * t.len() as u64,
            LayerCache::Quantized(q) => q.storage_bits(),
        }
    }
}

/// Stored activations of one forward pass, one cache per hidden layer.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    caches: Vec<LayerCache>,
    batch: usize,
}

impl ActivationStore {
    pub fn caches(&self) -> &[LayerCache] {
        &self.caches
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn storage_bits(&self) -> u64 {
        self.caches.iter().map(LayerCache::storage_bits).sum()
    }
}

/// Compresses the hidden activations of a forward pass. The full-precision
/// tensors are consumed.
pub fn store_activations(hidden: Vec<DenseTensor>, storage: &ActivationStorage) -> Result<ActivationStore> {
    let batch = hidden.first().map_or(0, DenseTensor::rows);
    let caches = hidden
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            if let Some(v) = h.data().iter().find(|&&v| v < 0.0) {
                return Err(VqError::State(format!(
                    "hidden layer {i} holds negative activation {v}; ReLU contract violated"
                )));
            }
            Ok(match storage {
                ActivationStorage::Full => LayerCache::Dense(h),
                ActivationStorage::Quantized(cfg) => {
                    let q = quantize(&h, cfg)?;
                    LayerCache::Quantized(match cfg.mode {
                        CodecMode::VQuant => q.with_relu_mask(&h)?,
                        CodecMode::RvQuant => q,
                    })
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationStore { caches, batch })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DenseTensor>,
    pub biases: Vec<Vec<f32>>,
    /// Local gradient δ at each layer's pre-activation, `[B × fan_out]`,
    /// index-aligned with the layers (the last entry is the output δ).
    pub deltas: Vec<DenseTensor>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f32> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(DenseTensor::is_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

pub(crate) fn column_sums(d: &DenseTensor) -> Vec<f32> {
    let mut sums = vec![0.0f32; d.cols()];
    for i in 0..d.rows() {
        for (s, &v) in sums.iter_mut().zip(d.row(i)) {
            *s += v;
        }
    }
    sums
}

pub(crate) fn mask_in_place(d: &mut DenseTensor, active: &[bool]) {
    for (v, &a) in d.data_mut().iter_mut().zip(active) {
        if !a {
            *v = 0.0;
        }
    }
}

/// Back-propagates `output_delta` through the network. `input` is the
/// full-precision batch fed to the first layer. Each cache is dropped right
/// after its layer's weight gradient has been formed.
pub fn backward(
    net: &MlpNetwork,
    input: &DenseTensor,
    output_delta: DenseTensor,
    store: ActivationStore,
) -> Result<Gradients> {
    let layers = net.layers();
    let widths = net.hidden_widths();
    if store.caches.len() != widths.len() {
        return Err(VqError::State(format!(
            "expected {} layer caches, got {}",
            widths.len(),
            store.caches.len()
        )));
    }
    let batch = input.rows();
    for (i, (c, &w)) in store.caches.iter().zip(&widths).enumerate() {
        if c.shape() != [batch, w] {
            return Err(VqError::State(format!(
                "cache {i} has shape {:?}, expected [{batch}, {w}] (stale cache?)",
                c.shape()
            )));
        }
    }
    if output_delta.shape() != [batch, net.num_classes()] {
        return Err(VqError::State(format!(
            "output gradient {:?} does not match batch {batch} × {} classes",
            output_delta.shape(),
            net.num_classes()
        )));
    }

    let n = layers.len();
    let mut weights = vec![None; n];
    let mut biases = vec![Vec::new(); n];
    let mut deltas = vec![None; n];
    let mut caches = store.caches;
    let mut delta = output_delta;
    for l in (0..n).rev() {
        let cache = if l > 0 { caches.pop() } else { None };
        let y = match &cache {
            Some(c) => c.activations(),
            None => input.clone(),
        };
        weights[l] = Some(matmul_lhs_transposed(&delta, &y)?);
        biases[l] = column_sums(&delta);
        drop(y);
        let next = match cache {
            Some(c) => {
                let mut prev = matmul(&delta, &layers[l].weights)?;
                mask_in_place(&mut prev, &c.active_mask()?);
                Some(prev)
            }
            None => None,
        };
        deltas[l] = Some(delta);
        match next {
            Some(d) => delta = d,
            None => break,
        }
    }
    Ok(Gradients {
        weights: weights.into_iter().map(|w| w.expect("every layer visited")).collect(),
        biases,
        deltas: deltas.into_iter().map(|d| d.expect("every layer visited")).collect(),
    })
}

/// Plain SGD, `w ← w − η·∂w`. The network is left untouched if any
/// gradient or any updated parameter is non-finite.
pub fn sgd_step(net: &mut MlpNetwork, grads: &Gradients, learning_rate: f32) -> Result<()> {
    if grads.weights.len() != net.num_layers() || grads.biases.len() != net.num_layers() {
        return Err(VqError::Dimension("gradient count differs from layer count".into()));
    }
    for (l, (layer, g)) in net.layers().iter().zip(&grads.weights).enumerate() {
        if layer.weights.shape() != g.shape() || layer.bias.len() != grads.biases[l].len() {
            return Err(VqError::Dimension(format!("gradient shape mismatch at layer {l}")));
        }
    }
    if !grads.is_finite() {
        return Err(VqError::Numeric("non-finite gradient".into()));
    }
    let mut next = net.clone();
    for (l, layer) in next.layers_mut().iter_mut().enumerate() {
        for (w, g) in layer.weights.data_mut().iter_mut().zip(grads.weights[l].data()) {
            *w -= learning_rate * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
            *b -= learning_rate * g;
        }
    }
    if !next.is_finite() {
        return Err(VqError::Numeric("update produced non-finite weights".into()));
    }
    *net = next;
    Ok(())
}

/// Forward, store, backward in one call.
pub fn compute_gradients(
    net: &MlpNetwork,
    batch: &DenseTensor,
    labels: &[usize],
    storage: &ActivationStorage,
) -> Result<(f64, Gradients, u64)> {
    let pass = forward(net, batch, labels)?;
    let delta = output_delta(&pass.probs, labels);
    let store = store_activations(pass.hidden, storage)?;
    let bits = store.storage_bits();
    let grads = backward(net, batch, delta, store)?;
    Ok((pass.loss, grads, bits))
}
