//! Parameter vectors and the ReLU/softmax multilayer perceptron.
//!
//! Flat layout, layer by layer: the `fan_out × fan_in` weight matrix in
//! row-major order (row = output unit), then the `fan_out` biases. This
//! layout is stable; key blocks and wire payloads index into it directly.

use rand::Rng;
use rand_distr::Uniform;
use thiserror::Error;

use crate::data::{Dataset, MiniBatch};
use crate::randomness::{stream_rng, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter vector has length {actual}, model needs {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite parameter at index {index}")]
    NonFiniteParameter { index: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("batch has input dimension {actual}, model expects {expected}")]
    InputDimension { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// Plain model parameters `w ∈ ℝⁿ`; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteParameter { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Model parameters in transmission coordinates, tagged with the global
/// round they belong to.
///
/// Under SIFL this is the immersed vector `w̃ ∈ ℝᵐ`. In the plain FedAvg
/// baseline the transmission map is the identity and `m = n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedParamVector {
    values: Vec<f64>,
    round: u32,
}

impl EncryptedParamVector {
    pub fn new(values: Vec<f64>, round: u32) -> Self {
        Self { values, round }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Layer sizes `[input, hidden…, output]`. ReLU on hidden layers, softmax
/// on the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
}

/// Location of one dense layer inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn param_count(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, ModelError> {
        if layer_sizes.len() < 3 {
            return Err(ModelError::InvalidSpec(format!(
                "need input, at least one hidden and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(ModelError::InvalidSpec(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let l = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += l.param_count();
                l
            })
            .collect()
    }

    /// `n = Σ (fan_in·fan_out + fan_out)`.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::param_count).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = stream_rng(seed, Domain::Init, 0);
        let mut w = vec![0.0; self.param_count()];
        for l in self.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for v in &mut w[l.weight_range()] {
                *v = rng.sample(dist);
            }
        }
        ParamVector { values: w }
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        let expected = self.param_count();
        if len != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: len,
            });
        }
        Ok(())
    }
}

/// Weights (`fan_out × fan_in`, row-major) and biases of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

pub fn flatten(spec: &ModelSpec, layers: &[LayerParams]) -> Result<ParamVector, ModelError> {
    let shapes = spec.layers();
    if layers.len() != shapes.len() {
        return Err(ModelError::InvalidSpec(format!(
            "{} layers given, spec has {}",
            layers.len(),
            shapes.len()
        )));
    }
    let mut out = Vec::with_capacity(spec.param_count());
    for (s, l) in shapes.iter().zip(layers) {
        if l.weights.len() != s.fan_in * s.fan_out || l.biases.len() != s.fan_out {
            return Err(ModelError::LengthMismatch {
                expected: s.param_count(),
                actual: l.weights.len() + l.biases.len(),
            });
        }
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    ParamVector::new(out)
}

pub fn unflatten(spec: &ModelSpec, w: &ParamVector) -> Result<Vec<LayerParams>, ModelError> {
    spec.check_len(w.len())?;
    Ok(spec
        .layers()
        .iter()
        .map(|s| LayerParams {
            weights: w.values()[s.weight_range()].to_vec(),
            biases: w.values()[s.bias_range()].to_vec(),
        })
        .collect())
}

/// Softmax of one row of logits, shifted by the row max.
fn softmax_row(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    max + sum.ln()
}

/// The MLP as a loss/gradient oracle over flat parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    spec: ModelSpec,
}

struct ForwardPass {
    /// Post-activation outputs per layer, `activations[0]` is the input.
    activations: Vec<Vec<f64>>,
    probs: Vec<f64>,
    loss: f64,
}

impl Mlp {
    pub fn new(spec: ModelSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check(&self, w: &[f64], batch: &MiniBatch) -> Result<(), ModelError> {
        self.spec.check_len(w.len())?;
        if batch.dim() != self.spec.input_dim() {
            return Err(ModelError::InputDimension {
                expected: self.spec.input_dim(),
                actual: batch.dim(),
            });
        }
        let classes = self.spec.output_dim();
        if let Some(&label) = batch.labels().iter().find(|&&l| l >= classes) {
            return Err(ModelError::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    fn run_forward(&self, w: &[f64], batch: &MiniBatch) -> Result<ForwardPass, ModelError> {
        self.check(w, batch)?;
        let rows = batch.len();
        let layers = self.spec.layers();
        let last = layers.len() - 1;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        activations.push(batch.inputs().to_vec());
        let mut probs = Vec::new();
        let mut loss = 0.0;
        for (li, l) in layers.iter().enumerate() {
            let weights = &w[l.weight_range()];
            let biases = &w[l.bias_range()];
            let input = &activations[li];
            let mut z = vec![0.0; rows * l.fan_out];
            for s in 0..rows {
                let x = &input[s * l.fan_in..(s + 1) * l.fan_in];
                let zs = &mut z[s * l.fan_out..(s + 1) * l.fan_out];
                for (o, zo) in zs.iter_mut().enumerate() {
                    let row = &weights[o * l.fan_in..(o + 1) * l.fan_in];
                    *zo = biases[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteActivation { layer: li });
            }
            if li < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                activations.push(z);
            } else {
                probs = vec![0.0; z.len()];
                for s in 0..rows {
                    let zs = &z[s * l.fan_out..(s + 1) * l.fan_out];
                    let lse = softmax_row(zs, &mut probs[s * l.fan_out..(s + 1) * l.fan_out]);
                    loss += lse - zs[batch.labels()[s]];
                }
                loss /= rows as f64;
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteActivation { layer: last });
        }
        Ok(ForwardPass {
            activations,
            probs,
            loss,
        })
    }

    /// Class probabilities (row-major, `batch × classes`) and mean
    /// cross-entropy.
    pub fn forward(&self, w: &[f64], batch: &MiniBatch) -> Result<(Vec<f64>, f64), ModelError> {
        let f = self.run_forward(w, batch)?;
        Ok((f.probs, f.loss))
    }

    /// Mean cross-entropy and its gradient by backpropagation.
    pub fn loss_and_gradient(
        &self,
        w: &[f64],
        batch: &MiniBatch,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let fwd = self.run_forward(w, batch)?;
        let rows = batch.len();
        let layers = self.spec.layers();
        let classes = self.spec.output_dim();
        let mut grad = vec![0.0; w.len()];

        // dL/dz at the output: (p − onehot) / batch
        let mut delta = fwd.probs;
        for (s, &y) in batch.labels().iter().enumerate() {
            delta[s * classes + y] -= 1.0;
        }
        let inv = 1.0 / rows as f64;
        delta.iter_mut().for_each(|d| *d *= inv);

        for (li, l) in layers.iter().enumerate().rev() {
            let input = &fwd.activations[li];
            let (gw, gb) =
                grad[l.offset..l.offset + l.param_count()].split_at_mut(l.fan_in * l.fan_out);
            for s in 0..rows {
                let x = &input[s * l.fan_in..(s + 1) * l.fan_in];
                let ds = &delta[s * l.fan_out..(s + 1) * l.fan_out];
                for (o, &d) in ds.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * l.fan_in..(o + 1) * l.fan_in];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if li == 0 {
                break;
            }
            let weights = &w[l.weight_range()];
            let mut prev = vec![0.0; rows * l.fan_in];
            for s in 0..rows {
                let ds = &delta[s * l.fan_out..(s + 1) * l.fan_out];
                let ps = &mut prev[s * l.fan_in..(s + 1) * l.fan_in];
                for (o, &d) in ds.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &weights[o * l.fan_in..(o + 1) * l.fan_in];
                    for (p, &wi) in ps.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                // ReLU derivative from the stored post-activation
                let a = &input[s * l.fan_in..(s + 1) * l.fan_in];
                for (p, &ai) in ps.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok((fwd.loss, grad))
    }

    pub fn gradient(&self, w: &[f64], batch: &MiniBatch) -> Result<Vec<f64>, ModelError> {
        self.loss_and_gradient(w, batch).map(|(_, g)| g)
    }

    /// Mean loss and accuracy over a dataset, in chunks of 512 samples.
    pub fn evaluate(&self, w: &[f64], data: &Dataset) -> Result<(f64, f64), ModelError> {
        if data.is_empty() {
            return Ok((0.0, 0.0));
        }
        let classes = self.spec.output_dim();
        let (mut loss, mut correct) = (0.0, 0usize);
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(512) {
            let batch = data.batch(chunk);
            let (probs, l) = self.forward(w, &batch)?;
            loss += l * chunk.len() as f64;
            for (s, &y) in batch.labels().iter().enumerate() {
                let row = &probs[s * classes..(s + 1) * classes];
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                        if p > best.1 {
                            (i, p)
                        } else {
                            best
                        }
                    })
                    .0;
                correct += usize::from(arg == y);
            }
        }
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}
