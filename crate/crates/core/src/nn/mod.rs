//! Minimal deterministic feed-forward networks with backpropagation to both
//! parameters and inputs, and plain SGD.
//!
//! Determinism contract: (architecture, seed, dataset, config) fully determine
//! every parameter at every step. There is no momentum or weight decay, so a
//! batch's delta is exactly the negative-scaled gradient of that batch.
//!
//! Exactness contract: every SGD update is snapped to the binary grid
//! [`UPDATE_QUANTUM`] before it is applied. Parameters and batch deltas are
//! therefore integer multiples of the quantum with magnitude below
//! [`PARAM_LIMIT`], so sums and differences of deltas are exact in `f32` no
//! matter the order. Journal bookkeeping identities hold bit-exactly because
//! of this, not by luck.

mod layers;
pub mod loss;
mod params;
mod train;

pub use params::{LayerParams, ParamDelta, ParamVector};
pub use train::{
    accuracy, epoch_shuffle_order, train, EpochStats, TrainConfig, TrainReport,
};

use crate::journal::JournalError;
use crate::rng::{self, tags};
use crate::tensor::Tensor;
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Update grid: 2^-18. Multiplying by a power of two is exact in binary
/// floating point, so snapping is itself exact.
pub const UPDATE_QUANTUM: f32 = 1.0 / 262_144.0;

/// Parameters beyond this magnitude abort training as divergence. Grid
/// arithmetic stays exact while |value| <= 64; the limit leaves headroom for
/// sums of deltas.
pub const PARAM_LIMIT: f32 = 16.0;

/// Snaps a value to the update grid (round half away from zero).
pub fn quantize_update(x: f32) -> f32 {
    (x * 262_144.0).round() * UPDATE_QUANTUM
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("non-finite gradient (training diverged)")]
    NonFiniteGradient,
    #[error("non-finite network output")]
    NonFiniteOutput,
    #[error("parameters diverged (max |param| = {max_abs})")]
    Diverged { max_abs: f32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size {batch_size} exceeds dataset size {dataset_len}")]
    BatchTooLarge {
        batch_size: usize,
        dataset_len: usize,
    },
    #[error("training requires at least one epoch")]
    ZeroEpochs,
    #[error("filter selected no examples")]
    EmptySelection,
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// One layer of an architecture. Convolutions are stride-1 with 3x3 kernels;
/// pooling is fixed 2x2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv { ch_in: usize, ch_out: usize, kernel: usize },
    Relu,
    MaxPool2,
    Flatten,
}

/// Validated layer stack with a fixed input shape. Construction checks that
/// layer shapes chain correctly; the canonical string form (`Display`) is
/// hashed into the architecture fingerprint used by journals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    output_len: usize,
    // index into the parameterized-layer list, per layer
    param_index: Vec<Option<usize>>,
}

impl Architecture {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidArchitecture(format!(
                "bad input shape {input_shape:?}"
            )));
        }
        if layers.is_empty() {
            return Err(NnError::InvalidArchitecture("no layers".into()));
        }
        let mut shape = input_shape.clone();
        let mut param_index = Vec::with_capacity(layers.len());
        let mut next_param = 0usize;
        for (i, layer) in layers.iter().enumerate() {
            let err = |msg: String| NnError::InvalidArchitecture(format!("layer {i}: {msg}"));
            match layer {
                LayerSpec::Dense { input, output } => {
                    if shape.len() != 1 || shape[0] != *input {
                        return Err(err(format!(
                            "dense({input},{output}) fed shape {shape:?}"
                        )));
                    }
                    if *output == 0 {
                        return Err(err("dense output must be positive".into()));
                    }
                    shape = vec![*output];
                    param_index.push(Some(next_param));
                    next_param += 1;
                }
                LayerSpec::Conv { ch_in, ch_out, kernel } => {
                    if *kernel != 3 {
                        return Err(err(format!("only 3x3 kernels supported, got {kernel}")));
                    }
                    if shape.len() != 3 || shape[0] != *ch_in {
                        return Err(err(format!(
                            "conv({ch_in},{ch_out},{kernel}) fed shape {shape:?}"
                        )));
                    }
                    if *ch_out == 0 || shape[1] < 3 || shape[2] < 3 {
                        return Err(err(format!("conv needs h,w >= 3, got {shape:?}")));
                    }
                    shape = vec![*ch_out, shape[1] - 2, shape[2] - 2];
                    param_index.push(Some(next_param));
                    next_param += 1;
                }
                LayerSpec::Relu => param_index.push(None),
                LayerSpec::MaxPool2 => {
                    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
                        return Err(err(format!("maxpool2 fed shape {shape:?}")));
                    }
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                    param_index.push(None);
                }
                LayerSpec::Flatten => {
                    if shape.len() < 2 {
                        return Err(err(format!("flatten fed shape {shape:?}")));
                    }
                    shape = vec![shape.iter().product()];
                    param_index.push(None);
                }
            }
        }
        if shape.len() != 1 {
            return Err(NnError::InvalidArchitecture(format!(
                "output shape {shape:?} is not flat; add a flatten layer"
            )));
        }
        Ok(Architecture {
            input_shape,
            layers,
            output_len: shape[0],
            param_index,
        })
    }

    /// Plain MLP: dense layers with relu between them.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self, NnError> {
        let mut layers = Vec::new();
        let mut cur = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense { input: cur, output: h });
            layers.push(LayerSpec::Relu);
            cur = h;
        }
        layers.push(LayerSpec::Dense { input: cur, output: classes });
        Architecture::new(vec![input], layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn class_count(&self) -> usize {
        self.output_len
    }

    /// FNV-1a hash of the canonical string form.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in=")?;
        for (i, d) in self.input_shape.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { input, output } => write!(f, "|dense({input},{output})")?,
                LayerSpec::Conv { ch_in, ch_out, kernel } => {
                    write!(f, "|conv({ch_in},{ch_out},{kernel})")?
                }
                LayerSpec::Relu => write!(f, "|relu")?,
                LayerSpec::MaxPool2 => write!(f, "|maxpool2")?,
                LayerSpec::Flatten => write!(f, "|flatten")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        let bad = |msg: String| NnError::InvalidArchitecture(msg);
        let mut parts = s.split('|');
        let head = parts.next().ok_or_else(|| bad("empty spec".into()))?;
        let dims = head
            .strip_prefix("in=")
            .ok_or_else(|| bad(format!("expected in=..., got {head:?}")))?;
        let input_shape = dims
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("bad input dims {dims:?}: {e}")))?;
        let mut layers = Vec::new();
        for part in parts {
            let part = part.trim();
            if part == "relu" {
                layers.push(LayerSpec::Relu);
            } else if part == "maxpool2" {
                layers.push(LayerSpec::MaxPool2);
            } else if part == "flatten" {
                layers.push(LayerSpec::Flatten);
            } else if let Some(args) = part.strip_prefix("dense(").and_then(|p| p.strip_suffix(')')) {
                let nums = parse_nums(args).map_err(|e| bad(format!("{part:?}: {e}")))?;
                if nums.len() != 2 {
                    return Err(bad(format!("dense takes 2 args, got {part:?}")));
                }
                layers.push(LayerSpec::Dense { input: nums[0], output: nums[1] });
            } else if let Some(args) = part.strip_prefix("conv(").and_then(|p| p.strip_suffix(')')) {
                let nums = parse_nums(args).map_err(|e| bad(format!("{part:?}: {e}")))?;
                if nums.len() != 3 {
                    return Err(bad(format!("conv takes 3 args, got {part:?}")));
                }
                layers.push(LayerSpec::Conv { ch_in: nums[0], ch_out: nums[1], kernel: nums[2] });
            } else {
                return Err(bad(format!("unknown layer {part:?}")));
            }
        }
        Architecture::new(input_shape, layers)
    }
}

fn parse_nums(args: &str) -> Result<Vec<usize>, String> {
    args.split(',')
        .map(|a| a.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

/// A model is an architecture plus its current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: ParamVector,
}

impl Model {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count()
    }

    pub fn fingerprint(&self) -> u64 {
        self.arch.fingerprint()
    }
}

/// He-uniform initialized model. Weights are drawn from a ChaCha8 stream
/// keyed by (seed, parameterized-layer index) and snapped to the update grid;
/// biases start at zero. Identical inputs produce bit-identical parameters.
pub fn init_model(arch: Architecture, seed: u64) -> Model {
    let mut layer_params = Vec::new();
    let mut pid = 0u64;
    for layer in arch.layers.iter() {
        match layer {
            LayerSpec::Dense { input, output } => {
                let mut rng = rng::keyed(rng::mix(seed, tags::INIT), pid);
                let limit = (6.0 / *input as f32).sqrt();
                let weights: Vec<f32> = (0..input * output)
                    .map(|_| quantize_update(rng.gen_range(-limit..limit)))
                    .collect();
                layer_params.push(LayerParams {
                    layer_id: pid as u32,
                    weights: Tensor::from_vec(vec![*output, *input], weights)
                        .expect("finite init"),
                    bias: Tensor::zeros(&[*output]),
                });
                pid += 1;
            }
            LayerSpec::Conv { ch_in, ch_out, kernel } => {
                let mut rng = rng::keyed(rng::mix(seed, tags::INIT), pid);
                let fan_in = (ch_in * kernel * kernel) as f32;
                let limit = (6.0 / fan_in).sqrt();
                let weights: Vec<f32> = (0..ch_out * ch_in * kernel * kernel)
                    .map(|_| quantize_update(rng.gen_range(-limit..limit)))
                    .collect();
                layer_params.push(LayerParams {
                    layer_id: pid as u32,
                    weights: Tensor::from_vec(
                        vec![*ch_out, *ch_in, *kernel, *kernel],
                        weights,
                    )
                    .expect("finite init"),
                    bias: Tensor::zeros(&[*ch_out]),
                });
                pid += 1;
            }
            _ => {}
        }
    }
    Model {
        arch,
        params: ParamVector::new(layer_params),
    }
}

pub(crate) struct Trace {
    // inputs[i] is the input tensor of layer i; the last entry is the logits
    inputs: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
    pub logits: Tensor,
}

fn check_batch_shape(model: &Model, batch: &Tensor) -> Result<usize, NnError> {
    let expected = model.arch.input_shape();
    let found = batch.shape();
    if found.len() != expected.len() + 1 || &found[1..] != expected || found[0] == 0 {
        let mut want = vec![0];
        want.extend_from_slice(expected);
        return Err(NnError::ShapeMismatch {
            expected: want,
            found: found.to_vec(),
        });
    }
    Ok(found[0])
}

pub(crate) fn forward_trace(model: &Model, batch: &Tensor) -> Result<Trace, NnError> {
    let n = check_batch_shape(model, batch)?;
    let mut cur = batch.clone();
    let mut inputs = Vec::with_capacity(model.arch.layers.len());
    let mut argmax = vec![Vec::new(); model.arch.layers.len()];
    for (i, layer) in model.arch.layers.iter().enumerate() {
        let next = match layer {
            LayerSpec::Dense { input, output } => {
                let p = &model.params.layers()[model.arch.param_index[i].unwrap()];
                let mut y = Tensor::zeros(&[n, *output]);
                layers::dense_forward(
                    p.weights.values(),
                    p.bias.values(),
                    cur.values(),
                    n,
                    *input,
                    *output,
                    y.values_mut(),
                );
                y
            }
            LayerSpec::Conv { ch_in, ch_out, .. } => {
                let p = &model.params.layers()[model.arch.param_index[i].unwrap()];
                let (h, w) = (cur.shape()[2], cur.shape()[3]);
                let mut y = Tensor::zeros(&[n, *ch_out, h - 2, w - 2]);
                layers::conv3_forward(
                    p.weights.values(),
                    p.bias.values(),
                    cur.values(),
                    n,
                    *ch_in,
                    h,
                    w,
                    *ch_out,
                    y.values_mut(),
                );
                y
            }
            LayerSpec::Relu => {
                let mut y = Tensor::zeros(cur.shape());
                layers::relu_forward(cur.values(), y.values_mut());
                y
            }
            LayerSpec::MaxPool2 => {
                let (c, h, w) = (cur.shape()[1], cur.shape()[2], cur.shape()[3]);
                let mut y = Tensor::zeros(&[n, c, h / 2, w / 2]);
                layers::maxpool2_forward(
                    cur.values(),
                    n,
                    c,
                    h,
                    w,
                    y.values_mut(),
                    &mut argmax[i],
                );
                y
            }
            LayerSpec::Flatten => {
                let flat: usize = cur.shape()[1..].iter().product();
                cur.clone().reshape(vec![n, flat]).expect("flatten")
            }
        };
        inputs.push(cur);
        cur = next;
    }
    Ok(Trace {
        inputs,
        argmax,
        logits: cur,
    })
}

pub(crate) fn backward_trace(
    model: &Model,
    trace: &Trace,
    dlogits: &Tensor,
) -> (ParamDelta, Tensor) {
    let mut grads = model.params.zero_like();
    let mut dcur = dlogits.clone();
    let n = trace.inputs[0].shape()[0];
    for (i, layer) in model.arch.layers.iter().enumerate().rev() {
        let x = &trace.inputs[i];
        dcur = match layer {
            LayerSpec::Dense { input, output } => {
                let pidx = model.arch.param_index[i].unwrap();
                let p = &model.params.layers()[pidx];
                let g = &mut grads.layers_mut()[pidx];
                let mut dx = Tensor::zeros(x.shape());
                layers::dense_backward(
                    p.weights.values(),
                    x.values(),
                    dcur.values(),
                    n,
                    *input,
                    *output,
                    g.weights.values_mut(),
                    g.bias.values_mut(),
                    dx.values_mut(),
                );
                dx
            }
            LayerSpec::Conv { ch_in, ch_out, .. } => {
                let pidx = model.arch.param_index[i].unwrap();
                let p = &model.params.layers()[pidx];
                let g = &mut grads.layers_mut()[pidx];
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let mut dx = Tensor::zeros(x.shape());
                layers::conv3_backward(
                    p.weights.values(),
                    x.values(),
                    dcur.values(),
                    n,
                    *ch_in,
                    h,
                    w,
                    *ch_out,
                    g.weights.values_mut(),
                    g.bias.values_mut(),
                    dx.values_mut(),
                );
                dx
            }
            LayerSpec::Relu => {
                let mut dx = Tensor::zeros(x.shape());
                layers::relu_backward(x.values(), dcur.values(), dx.values_mut());
                dx
            }
            LayerSpec::MaxPool2 => {
                let mut dx = Tensor::zeros(x.shape());
                layers::maxpool2_backward(&trace.argmax[i], dcur.values(), dx.values_mut());
                dx
            }
            LayerSpec::Flatten => dcur.reshape(x.shape().to_vec()).expect("flatten grad"),
        };
    }
    (grads, dcur)
}

/// Deterministic forward pass; logits have shape [batch, class_count].
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor, NnError> {
    let trace = forward_trace(model, batch)?;
    trace
        .logits
        .ensure_finite()
        .map_err(|_| NnError::NonFiniteOutput)?;
    Ok(trace.logits)
}

/// Gradients of mean softmax cross-entropy over the batch, with respect to
/// both parameters and inputs.
pub struct Backprop {
    pub param_grads: ParamDelta,
    pub input_grads: Tensor,
    pub loss: f32,
}

pub fn backward(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<Backprop, NnError> {
    let n = check_batch_shape(model, batch)?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            expected: vec![n],
            found: vec![labels.len()],
        });
    }
    let class_count = model.class_count();
    if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
        return Err(NnError::LabelOutOfRange { label, class_count });
    }
    let trace = forward_trace(model, batch)?;
    trace
        .logits
        .ensure_finite()
        .map_err(|_| NnError::NonFiniteOutput)?;
    let (loss, dlogits) = loss::cross_entropy_grad(&trace.logits, labels);
    let (param_grads, input_grads) = backward_trace(model, &trace, &dlogits);
    Ok(Backprop {
        param_grads,
        input_grads,
        loss,
    })
}

/// Applies one plain SGD step in place and returns the exact delta:
/// `delta = quantize(-lr * grads)`, `params += delta`. No momentum, no decay.
pub fn sgd_step(
    model: &mut Model,
    param_grads: &ParamDelta,
    learning_rate: f32,
) -> Result<ParamDelta, NnError> {
    if !param_grads.all_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    let mut delta = param_grads.clone();
    for l in delta.layers_mut() {
        for v in l.weights.values_mut() {
            *v = quantize_update(-learning_rate * *v);
        }
        for v in l.bias.values_mut() {
            *v = quantize_update(-learning_rate * *v);
        }
    }
    model.params.add_assign(&delta);
    let max_abs = model.params.max_abs();
    if !max_abs.is_finite() || max_abs > PARAM_LIMIT {
        // Grid arithmetic makes the rollback exact.
        model.params.sub_assign(&delta);
        return Err(NnError::Diverged { max_abs });
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = || Architecture::mlp(4, &[8], 3).unwrap();
        let a = init_model(arch(), 1);
        let b = init_model(arch(), 1);
        let c = init_model(arch(), 2);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params().to_flat(), c.params().to_flat());
    }

    #[test]
    fn dense_shapes_follow_definition() {
        let arch = Architecture::mlp(2, &[], 3).unwrap();
        let m = init_model(arch, 0);
        let l = &m.params().layers()[0];
        assert_eq!(l.weights.shape(), &[3, 2]);
        assert_eq!(l.bias.shape(), &[3]);
    }

    #[test]
    fn arch_rejects_broken_chains() {
        assert!(Architecture::new(
            vec![4],
            vec![LayerSpec::Dense { input: 5, output: 2 }]
        )
        .is_err());
        assert!(Architecture::new(
            vec![1, 28, 28],
            vec![LayerSpec::Dense { input: 784, output: 10 }]
        )
        .is_err());
        assert!(Architecture::new(
            vec![1, 28, 28],
            vec![LayerSpec::Conv { ch_in: 1, ch_out: 4, kernel: 5 }]
        )
        .is_err());
    }

    #[test]
    fn arch_string_round_trips_and_fingerprints() {
        let arch = Architecture::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv { ch_in: 1, ch_out: 8, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 8 * 13 * 13, output: 10 },
            ],
        )
        .unwrap();
        let s = arch.to_string();
        let back: Architecture = s.parse().unwrap();
        assert_eq!(back, arch);
        assert_eq!(back.fingerprint(), arch.fingerprint());
        let other = Architecture::mlp(784, &[16], 10).unwrap();
        assert_ne!(other.fingerprint(), arch.fingerprint());
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let arch = Architecture::mlp(3, &[4], 2).unwrap();
        let mut m = init_model(arch, 0);
        for l in m.params.layers_mut() {
            l.weights.values_mut().fill(0.0);
            l.bias.values_mut().fill(0.0);
        }
        let x = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let y = forward(&m, &x).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_identity_dense() {
        let arch = Architecture::mlp(2, &[], 2).unwrap();
        let mut m = init_model(arch, 0);
        let l = &mut m.params.layers_mut()[0];
        l.weights.values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        l.bias.values_mut().fill(0.0);
        let x = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let y = forward(&m, &x).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let arch = Architecture::mlp(3, &[], 2).unwrap();
        let m = init_model(arch, 0);
        let x = Tensor::from_vec(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            forward(&m, &x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn backward_rejects_bad_labels() {
        let arch = Architecture::mlp(3, &[], 2).unwrap();
        let m = init_model(arch, 0);
        let x = Tensor::from_vec(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            backward(&m, &x, &[2]),
            Err(NnError::LabelOutOfRange { label: 2, class_count: 2 })
        ));
    }

    #[test]
    fn sgd_step_definitional_example() {
        // param 1.0, grad 0.5, lr 0.1 -> delta -0.05, new param 0.95
        // (within half an update quantum).
        let arch = Architecture::mlp(1, &[], 1).unwrap();
        let mut m = init_model(arch, 0);
        m.params.layers_mut()[0].weights.values_mut()[0] = 1.0;
        let mut grads = m.params().zero_like();
        grads.layers_mut()[0].weights.values_mut()[0] = 0.5;
        let delta = sgd_step(&mut m, &grads, 0.1).unwrap();
        let d = delta.layers()[0].weights.values()[0];
        let p = m.params().layers()[0].weights.values()[0];
        assert!((d + 0.05).abs() <= UPDATE_QUANTUM, "delta {d}");
        assert!((p - 0.95).abs() <= UPDATE_QUANTUM, "param {p}");
    }

    #[test]
    fn sgd_step_zero_lr_is_identity() {
        let arch = Architecture::mlp(2, &[3], 2).unwrap();
        let mut m = init_model(arch, 7);
        let before = m.params().clone();
        let mut grads = m.params().zero_like();
        for l in grads.layers_mut() {
            l.weights.values_mut().fill(1.0);
        }
        let delta = sgd_step(&mut m, &grads, 0.0).unwrap();
        assert!(delta.to_flat().iter().all(|&v| v == 0.0));
        assert_eq!(m.params(), &before);
    }

    #[test]
    fn sgd_step_rejects_non_finite_grads() {
        let arch = Architecture::mlp(1, &[], 1).unwrap();
        let mut m = init_model(arch, 0);
        let mut grads = m.params().zero_like();
        grads.layers_mut()[0].weights.values_mut()[0] = f32::NAN;
        assert!(matches!(
            sgd_step(&mut m, &grads, 0.1),
            Err(NnError::NonFiniteGradient)
        ));
    }

    #[test]
    fn quantize_is_exact_on_grid() {
        let v = quantize_update(0.12345);
        assert_eq!(quantize_update(v), v);
        assert_eq!(quantize_update(0.0), 0.0);
        // round half away from zero at the quantum scale
        assert_eq!(quantize_update(UPDATE_QUANTUM * 0.5), UPDATE_QUANTUM);
    }
}
