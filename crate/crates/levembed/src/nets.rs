//! The four embedding architectures, their construction from a declarative
//! spec, forward passes, and checkpoint persistence.
//!
//! All four nets share the same top: two cascaded fully connected layers down
//! to the embedding dimension, then a batch normalization with the affine
//! transform disabled so outputs are forced toward zero mean and unit
//! variance per element.
//!
//! * `cnn-ed-5`: five blocks of [conv1d(64ch, k3, s1, p1) -> avgpool(2) ->
//!   relu] over the one-hot channels, then the shared top.
//! * `cnn-ed-10`: two convolutions per block, pooling after every second one;
//!   ten pools would collapse the sequence below one position, so the five
//!   pooling stages stay.
//! * `rnn` / `gru`: two stacked bidirectional recurrent layers (hidden 64,
//!   tanh cells for the plain recurrence, gated cells otherwise); the final
//!   step's forward and backward top-layer states are concatenated and fed to
//!   the shared top.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{StreamDomain, StreamRng};
use crate::seq::{self, Base, DnaSeq};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input length {len} is not divisible by {divisor}; pad sequences to a multiple of {divisor} (see gen-data --pad)")]
    IndivisibleInput { len: usize, divisor: usize },
    #[error("batch shape {shape:?} does not match the spec (expected [B, {len}, {channels}] with B >= {min_batch})")]
    BadBatch {
        shape: Vec<usize>,
        len: usize,
        channels: usize,
        min_batch: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Seq(#[from] seq::SeqError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a usable checkpoint: {message}")]
    Format { path: String, message: String },
    #[error("{path}: checkpoint does not match its declared spec: {message}")]
    SpecMismatch { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "cnn-ed-5")]
    CnnEd5,
    #[serde(rename = "cnn-ed-10")]
    CnnEd10,
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "gru")]
    Gru,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::CnnEd5 => "cnn-ed-5",
            Arch::CnnEd10 => "cnn-ed-10",
            Arch::Rnn => "rnn",
            Arch::Gru => "gru",
        }
    }

    pub fn is_convolutional(self) -> bool {
        matches!(self, Arch::CnnEd5 | Arch::CnnEd10)
    }
}

const CONV_CHANNELS: usize = 64;
const CONV_KERNEL: usize = 3;
const POOL_BLOCKS: usize = 5;
const POOL_KERNEL: usize = 2;
const POOL_FACTOR: usize = 1 << POOL_BLOCKS;
const RECURRENT_LAYERS: usize = 2;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Declarative architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Padded sequence length the network accepts.
    pub input_len: usize,
    pub in_channels: usize,
    /// Embedding dimension `n`.
    pub embed_dim: usize,
    /// Width of the intermediate fully connected layer.
    pub fc_hidden: usize,
    /// Hidden state width of the recurrent architectures.
    pub hidden_size: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, input_len: usize, embed_dim: usize) -> ModelSpec {
        ModelSpec {
            arch,
            input_len,
            in_channels: Base::COUNT,
            embed_dim,
            fc_hidden: 256,
            hidden_size: 64,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.embed_dim < 1 {
            return Err(NetError::InvalidSpec("embed_dim must be >= 1".into()));
        }
        if self.input_len < 1 || self.in_channels < 1 || self.fc_hidden < 1 || self.hidden_size < 1
        {
            return Err(NetError::InvalidSpec(
                "input_len, in_channels, fc_hidden, hidden_size must be >= 1".into(),
            ));
        }
        if self.arch.is_convolutional() && self.input_len % POOL_FACTOR != 0 {
            return Err(NetError::IndivisibleInput {
                len: self.input_len,
                divisor: POOL_FACTOR,
            });
        }
        Ok(())
    }

    fn convs_per_block(&self) -> usize {
        match self.arch {
            Arch::CnnEd5 => 1,
            Arch::CnnEd10 => 2,
            _ => 0,
        }
    }

    /// Width of the flattened convolutional feature map.
    pub fn flatten_width(&self) -> usize {
        CONV_CHANNELS * (self.input_len / POOL_FACTOR)
    }

    /// Width of the feature vector entering the fully connected top.
    pub fn feature_width(&self) -> usize {
        if self.arch.is_convolutional() {
            self.flatten_width()
        } else {
            2 * self.hidden_size
        }
    }

    /// Parameter tensors in storage order: `(name, shape, fan_in)`.
    fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut layout = Vec::new();
        match self.arch {
            Arch::CnnEd5 | Arch::CnnEd10 => {
                let mut in_ch = self.in_channels;
                for block in 0..POOL_BLOCKS {
                    for conv in 0..self.convs_per_block() {
                        let fan_in = in_ch * CONV_KERNEL;
                        layout.push((
                            format!("conv{block}_{conv}.w"),
                            vec![CONV_CHANNELS, in_ch, CONV_KERNEL],
                            fan_in,
                        ));
                        layout.push((format!("conv{block}_{conv}.b"), vec![CONV_CHANNELS], fan_in));
                        in_ch = CONV_CHANNELS;
                    }
                }
            }
            Arch::Rnn => {
                let h = self.hidden_size;
                for layer in 0..RECURRENT_LAYERS {
                    let input = if layer == 0 { self.in_channels } else { 2 * h };
                    for dir in 0..2 {
                        let p = format!("rnn{layer}_{dir}");
                        layout.push((format!("{p}.wx"), vec![input, h], input));
                        layout.push((format!("{p}.wh"), vec![h, h], h));
                        layout.push((format!("{p}.b"), vec![h], h));
                    }
                }
            }
            Arch::Gru => {
                let h = self.hidden_size;
                for layer in 0..RECURRENT_LAYERS {
                    let input = if layer == 0 { self.in_channels } else { 2 * h };
                    for dir in 0..2 {
                        let p = format!("gru{layer}_{dir}");
                        for gate in ["r", "z"] {
                            layout.push((format!("{p}.wx_{gate}"), vec![input, h], input));
                            layout.push((format!("{p}.wh_{gate}"), vec![h, h], h));
                            layout.push((format!("{p}.b_{gate}"), vec![h], h));
                        }
                        layout.push((format!("{p}.wx_n"), vec![input, h], input));
                        layout.push((format!("{p}.b_xn"), vec![h], input));
                        layout.push((format!("{p}.wh_n"), vec![h, h], h));
                        layout.push((format!("{p}.b_hn"), vec![h], h));
                    }
                }
            }
        }
        let feat = self.feature_width();
        layout.push(("fc1.w".into(), vec![feat, self.fc_hidden], feat));
        layout.push(("fc1.b".into(), vec![self.fc_hidden], feat));
        layout.push((
            "fc2.w".into(),
            vec![self.fc_hidden, self.embed_dim],
            self.fc_hidden,
        ));
        layout.push(("fc2.b".into(), vec![self.embed_dim], self.fc_hidden));
        layout
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct BnState {
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// A built model: the spec, its parameter tensors, and the batch-normalization
/// running statistics. Parameters are mutated only by the trainer between
/// steps; eval-mode forwards are read-only.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
    bn: BnState,
}

/// Parameter leaves of one model on one tape. Both branches of a twin forward
/// must share a single binding so each parameter exists exactly once.
pub struct TapeBinding {
    ids: Vec<NodeId>,
}

impl TapeBinding {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Binds existing leaves (ordered like [`Model::params`]) instead of
    /// fresh copies of the stored parameters; gradient checks drive the
    /// forward pass through externally perturbed tensors this way.
    pub fn from_ids(ids: Vec<NodeId>) -> TapeBinding {
        TapeBinding { ids }
    }
}

impl Model {
    /// Builds a model with fan-in-scaled uniform initialization, deterministic
    /// per seed: parameter `i` draws from stream `(seed, ParamInit, i)`.
    /// Weights use bound `sqrt(6 / fan_in)` (keeps the signal variance from
    /// collapsing through the deep relu stacks), biases `1 / sqrt(fan_in)`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model, NetError> {
        spec.validate()?;
        let params = spec
            .param_layout()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let mut rng = StreamRng::new(seed, StreamDomain::ParamInit, i as u64);
                let bound = if shape.len() > 1 {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    1.0 / (fan_in as f64).sqrt()
                };
                let numel: usize = shape.iter().product();
                let data = (0..numel).map(|_| rng.uniform_in(-bound, bound)).collect();
                Param {
                    name,
                    value: Tensor::new(shape, data).expect("layout shapes are consistent"),
                }
            })
            .collect();
        Ok(Model {
            bn: BnState {
                running_mean: vec![0.0; spec.embed_dim],
                running_var: vec![1.0; spec.embed_dim],
            },
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.bn.running_mean, &self.bn.running_var)
    }

    fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing from layout"))
    }

    /// Creates one leaf per parameter on the tape.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        TapeBinding {
            ids: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor, min_batch: usize) -> Result<(), NetError> {
        let ok = batch.rank() == 3
            && batch.dim(0) >= min_batch
            && batch.dim(1) == self.spec.input_len
            && batch.dim(2) == self.spec.in_channels;
        if !ok {
            return Err(NetError::BadBatch {
                shape: batch.shape().to_vec(),
                len: self.spec.input_len,
                channels: self.spec.in_channels,
                min_batch,
            });
        }
        Ok(())
    }

    /// Train-mode forward: batch statistics drive the output normalization and
    /// update the running statistics. Needs a batch of at least two rows.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        binding: &TapeBinding,
        batch: &Tensor,
    ) -> Result<NodeId, NetError> {
        self.check_batch(batch, 2)?;
        let features = self.features(tape, binding, batch)?;
        let raw = self.fc_top(tape, binding, features)?;
        let (out, stats) = tape.batchnorm_train(raw, BN_EPS)?;
        let unbias = stats.batch as f64 / (stats.batch as f64 - 1.0);
        for f in 0..self.spec.embed_dim {
            self.bn.running_mean[f] =
                (1.0 - BN_MOMENTUM) * self.bn.running_mean[f] + BN_MOMENTUM * stats.mean[f];
            self.bn.running_var[f] =
                (1.0 - BN_MOMENTUM) * self.bn.running_var[f] + BN_MOMENTUM * stats.var[f] * unbias;
        }
        Ok(out)
    }

    /// Eval-mode forward using frozen running statistics. Deterministic:
    /// identical inputs yield identical embeddings.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        batch: &Tensor,
    ) -> Result<NodeId, NetError> {
        self.check_batch(batch, 1)?;
        let features = self.features(tape, binding, batch)?;
        let raw = self.fc_top(tape, binding, features)?;
        Ok(tape.batchnorm_eval(raw, &self.bn.running_mean, &self.bn.running_var, BN_EPS)?)
    }

    /// Convenience eval-mode embedding of one batch on a fresh binding.
    pub fn embed_eval(&self, tape: &mut Tape, batch: &Tensor) -> Result<NodeId, NetError> {
        let binding = self.bind(tape);
        self.forward_eval(tape, &binding, batch)
    }

    /// Feature vector feeding the fully connected top (flattened convolutional
    /// map, or the concatenated final bidirectional states).
    fn features(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        batch: &Tensor,
    ) -> Result<NodeId, NetError> {
        let input = tape.constant(batch.clone());
        match self.spec.arch {
            Arch::CnnEd5 | Arch::CnnEd10 => self.conv_features(tape, binding, input),
            Arch::Rnn | Arch::Gru => self.recurrent_features(tape, binding, input),
        }
    }

    fn conv_features(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: NodeId,
    ) -> Result<NodeId, NetError> {
        let batch = tape.value(input).dim(0);
        let mut x = tape.transpose_12(input)?;
        for block in 0..POOL_BLOCKS {
            for conv in 0..self.spec.convs_per_block() {
                let w = binding.ids[self.param_index(&format!("conv{block}_{conv}.w"))];
                let b = binding.ids[self.param_index(&format!("conv{block}_{conv}.b"))];
                x = tape.conv1d(x, w, b, 1, 1)?;
            }
            x = tape.avgpool1d(x, POOL_KERNEL)?;
            x = tape.relu(x)?;
        }
        Ok(tape.reshape(x, vec![batch, self.spec.flatten_width()])?)
    }

    fn recurrent_features(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: NodeId,
    ) -> Result<NodeId, NetError> {
        let batch = tape.value(input).dim(0);
        let len = self.spec.input_len;
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            steps.push(tape.slice_step(input, t)?);
        }
        let mut finals = None;
        for layer in 0..RECURRENT_LAYERS {
            let forward = self.run_direction(tape, binding, layer, 0, &steps, batch)?;
            let backward = self.run_direction(tape, binding, layer, 1, &steps, batch)?;
            finals = Some((forward[len - 1], backward[0]));
            let mut merged = Vec::with_capacity(len);
            for t in 0..len {
                merged.push(tape.concat_cols(forward[t], backward[t])?);
            }
            steps = merged;
        }
        let (last_forward, last_backward) = finals.expect("at least one recurrent layer");
        Ok(tape.concat_cols(last_forward, last_backward)?)
    }

    /// Runs one direction of one recurrent layer. Direction 0 scans forward;
    /// direction 1 scans in reverse. `out[t]` is the hidden state after the
    /// scan has consumed input `t`, so the final state sits at the scan's last
    /// position (`len - 1` forward, `0` backward).
    fn run_direction(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        layer: usize,
        dir: usize,
        inputs: &[NodeId],
        batch: usize,
    ) -> Result<Vec<NodeId>, NetError> {
        let h = self.spec.hidden_size;
        let mut state = tape.constant(Tensor::zeros(vec![batch, h]));
        let mut out = vec![state; inputs.len()];
        let order: Vec<usize> = if dir == 0 {
            (0..inputs.len()).collect()
        } else {
            (0..inputs.len()).rev().collect()
        };
        for t in order {
            state = match self.spec.arch {
                Arch::Rnn => self.rnn_cell(tape, binding, layer, dir, inputs[t], state)?,
                Arch::Gru => self.gru_cell(tape, binding, layer, dir, inputs[t], state)?,
                _ => unreachable!("recurrent cell on a convolutional arch"),
            };
            out[t] = state;
        }
        Ok(out)
    }

    fn rnn_cell(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        layer: usize,
        dir: usize,
        x: NodeId,
        h_prev: NodeId,
    ) -> Result<NodeId, NetError> {
        let p = format!("rnn{layer}_{dir}");
        let wx = binding.ids[self.param_index(&format!("{p}.wx"))];
        let wh = binding.ids[self.param_index(&format!("{p}.wh"))];
        let b = binding.ids[self.param_index(&format!("{p}.b"))];
        let xi = tape.matmul(x, wx)?;
        let hi = tape.matmul(h_prev, wh)?;
        let pre = tape.add(xi, hi)?;
        let pre = tape.bias_row(pre, b)?;
        Ok(tape.tanh(pre)?)
    }

    fn gru_cell(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        layer: usize,
        dir: usize,
        x: NodeId,
        h_prev: NodeId,
    ) -> Result<NodeId, NetError> {
        let p = format!("gru{layer}_{dir}");
        let id = |name: String| binding.ids[self.param_index(&name)];
        let gate = |tape: &mut Tape, g: &str| -> Result<NodeId, NetError> {
            let xi = tape.matmul(x, id(format!("{p}.wx_{g}")))?;
            let hi = tape.matmul(h_prev, id(format!("{p}.wh_{g}")))?;
            let pre = tape.add(xi, hi)?;
            let pre = tape.bias_row(pre, id(format!("{p}.b_{g}")))?;
            Ok(tape.sigmoid(pre)?)
        };
        let reset = gate(tape, "r")?;
        let update = gate(tape, "z")?;
        let xn = tape.matmul(x, id(format!("{p}.wx_n")))?;
        let xn = tape.bias_row(xn, id(format!("{p}.b_xn")))?;
        let hn = tape.matmul(h_prev, id(format!("{p}.wh_n")))?;
        let hn = tape.bias_row(hn, id(format!("{p}.b_hn")))?;
        let gated = tape.mul(reset, hn)?;
        let pre = tape.add(xn, gated)?;
        let candidate = tape.tanh(pre)?;
        // h' = candidate + update * (h_prev - candidate)
        let keep = tape.sub(h_prev, candidate)?;
        let scaled = tape.mul(update, keep)?;
        Ok(tape.add(candidate, scaled)?)
    }

    fn fc_top(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        features: NodeId,
    ) -> Result<NodeId, NetError> {
        let h = tape.matmul(features, binding.ids[self.param_index("fc1.w")])?;
        let h = tape.bias_row(h, binding.ids[self.param_index("fc1.b")])?;
        let out = tape.matmul(h, binding.ids[self.param_index("fc2.w")])?;
        Ok(tape.bias_row(out, binding.ids[self.param_index("fc2.b")])?)
    }

    /// Writes the checkpoint: a versioned JSON container of the spec, running
    /// statistics, and `(name, shape, row-major values)` parameter triples.
    /// Loading and saving again is byte-identical.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec,
            running_mean: self.bn.running_mean.clone(),
            running_var: self.bn.running_var.clone(),
            params: self
                .params
                .iter()
                .map(|p| CheckpointTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        let out = File::create(path).map_err(|source| NetError::Io {
            path: display.clone(),
            source,
        })?;
        serde_json::to_writer(BufWriter::new(out), &file).map_err(|e| NetError::Format {
            path: display,
            message: e.to_string(),
        })
    }

    /// Loads and validates a checkpoint. The stored tensors must match the
    /// layout the declared spec constructs, name for name and shape for shape.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, NetError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| NetError::Io {
            path: display.clone(),
            source,
        })?;
        let parsed: CheckpointFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| NetError::Format {
                path: display.clone(),
                message: e.to_string(),
            })?;
        if parsed.format != CHECKPOINT_FORMAT || parsed.version != CHECKPOINT_VERSION {
            return Err(NetError::Format {
                path: display,
                message: format!(
                    "format '{}' version {} (expected '{}' version {})",
                    parsed.format, parsed.version, CHECKPOINT_FORMAT, CHECKPOINT_VERSION
                ),
            });
        }
        parsed.spec.validate()?;
        let mismatch = |message: String| NetError::SpecMismatch {
            path: display.clone(),
            message,
        };
        let layout = parsed.spec.param_layout();
        if layout.len() != parsed.params.len() {
            return Err(mismatch(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                parsed.params.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for ((name, shape, _), stored) in layout.into_iter().zip(parsed.params) {
            if stored.name != name || stored.shape != shape {
                return Err(mismatch(format!(
                    "expected tensor '{}' with shape {:?}, found '{}' with shape {:?}",
                    name, shape, stored.name, stored.shape
                )));
            }
            let value = Tensor::new(stored.shape, stored.data)
                .map_err(|e| mismatch(e.to_string()))?;
            params.push(Param { name, value });
        }
        if parsed.running_mean.len() != parsed.spec.embed_dim
            || parsed.running_var.len() != parsed.spec.embed_dim
        {
            return Err(mismatch("running statistics length != embed_dim".into()));
        }
        Ok(Model {
            spec: parsed.spec,
            params,
            bn: BnState {
                running_mean: parsed.running_mean,
                running_var: parsed.running_var,
            },
        })
    }
}

const CHECKPOINT_FORMAT: &str = "levembed-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    spec: ModelSpec,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    params: Vec<CheckpointTensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// One-hot encodes a batch of sequences into a `[B, padded_len, 5]` tensor.
pub fn encode_batch(seqs: &[&DnaSeq], padded_len: usize) -> Result<Tensor, NetError> {
    let mut data = vec![0.0; seqs.len() * padded_len * Base::COUNT];
    for (i, s) in seqs.iter().enumerate() {
        if s.len() > padded_len {
            return Err(seq::SeqError::LengthOverflow {
                seq: seq::display_truncated(s),
                seq_len: s.len(),
                padded_len,
            }
            .into());
        }
        let base_offset = i * padded_len * Base::COUNT;
        for (pos, b) in s.bases().iter().enumerate() {
            data[base_offset + pos * Base::COUNT + b.channel()] = 1.0;
        }
    }
    Ok(Tensor::new(vec![seqs.len(), padded_len, Base::COUNT], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::gen_references;

    fn toy_spec(arch: Arch) -> ModelSpec {
        let mut spec = ModelSpec::new(arch, 32, 8);
        spec.fc_hidden = 16;
        spec.hidden_size = 8;
        spec
    }

    fn toy_batch(b: usize, len: usize, seed: u64) -> Tensor {
        let refs = gen_references(b, len, seed);
        let views: Vec<&DnaSeq> = refs.iter().collect();
        encode_batch(&views, len).unwrap()
    }

    #[test]
    fn parameter_counts_match_hand_computed_table() {
        // defaults: input 160, embed 80, fc_hidden 256, hidden 64, channels 5
        let count = |arch| {
            Model::build(ModelSpec::new(arch, 160, 80), 0)
                .unwrap()
                .num_params()
        };
        assert_eq!(count(Arch::CnnEd5), 153_168);
        assert_eq!(count(Arch::CnnEd10), 214_928);
        assert_eq!(count(Arch::Rnn), 87_248);
        assert_eq!(count(Arch::Gru), 154_832);
    }

    #[test]
    fn cnn_widths_and_divisibility() {
        let spec = ModelSpec::new(Arch::CnnEd5, 160, 80);
        assert_eq!(spec.flatten_width(), 320);
        let bad = ModelSpec::new(Arch::CnnEd5, 100, 80);
        assert!(matches!(
            bad.validate(),
            Err(NetError::IndivisibleInput { len: 100, divisor: 32 })
        ));
        // recurrent nets take any length
        ModelSpec::new(Arch::Gru, 100, 80).validate().unwrap();
        assert_eq!(ModelSpec::new(Arch::Gru, 100, 80).feature_width(), 128);
        assert!(ModelSpec::new(Arch::Rnn, 100, 0).validate().is_err());
    }

    #[test]
    fn forward_shape_and_eval_determinism() {
        for arch in [Arch::CnnEd5, Arch::CnnEd10, Arch::Rnn, Arch::Gru] {
            let spec = toy_spec(arch);
            let model = Model::build(spec, 3).unwrap();
            let batch = toy_batch(4, 32, 17);
            let mut tape = Tape::new();
            let out = model.embed_eval(&mut tape, &batch).unwrap();
            assert_eq!(tape.value(out).shape(), &[4, 8], "{arch:?}");
            let mut tape2 = Tape::new();
            let out2 = model.embed_eval(&mut tape2, &batch).unwrap();
            assert_eq!(tape.value(out).data(), tape2.value(out2).data(), "{arch:?}");
        }
    }

    #[test]
    fn full_size_cnn_shape_contract() {
        let model = Model::build(ModelSpec::new(Arch::CnnEd5, 160, 80), 1).unwrap();
        let batch = toy_batch(4, 160, 9);
        let mut tape = Tape::new();
        let out = model.embed_eval(&mut tape, &batch).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 80]);
    }

    #[test]
    fn builds_are_deterministic_per_seed() {
        let spec = toy_spec(Arch::Gru);
        let a = Model::build(spec, 11).unwrap();
        let b = Model::build(spec, 11).unwrap();
        let c = Model::build(spec, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn train_mode_normalizes_each_dimension() {
        let mut model = Model::build(toy_spec(Arch::CnnEd5), 5).unwrap();
        let batch = toy_batch(32, 32, 23);
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let out = model.forward_train(&mut tape, &binding, &batch).unwrap();
        let value = tape.value(out);
        let (b, n) = (value.dim(0), value.dim(1));
        for f in 0..n {
            let col: Vec<f64> = (0..b).map(|r| value.data()[r * n + f]).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt();
            assert!(mean.abs() < 0.1, "dim {f}: mean {mean}");
            assert!((std - 1.0).abs() < 0.1, "dim {f}: std {std}");
        }
        // running statistics moved away from their (0, 1) init
        let (rm, rv) = model.running_stats();
        assert!(rm.iter().any(|&x| x != 0.0));
        assert!(rv.iter().any(|&x| x != 1.0));
    }

    #[test]
    fn batch_shape_is_validated() {
        let model = Model::build(toy_spec(Arch::CnnEd5), 5).unwrap();
        let bad = toy_batch(4, 64, 23);
        let mut tape = Tape::new();
        assert!(matches!(
            model.embed_eval(&mut tape, &bad),
            Err(NetError::BadBatch { .. })
        ));
        // train mode needs at least two rows
        let single = toy_batch(1, 32, 23);
        let mut model = Model::build(toy_spec(Arch::CnnEd5), 5).unwrap();
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        assert!(matches!(
            model.forward_train(&mut tape, &binding, &single),
            Err(NetError::BadBatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = Model::build(toy_spec(Arch::Gru), 7).unwrap();
        // push the running stats off their initial values
        let batch = toy_batch(8, 32, 31);
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        model.forward_train(&mut tape, &binding, &batch).unwrap();

        model.save_checkpoint(&path).unwrap();
        let loaded = Model::load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);

        // forwards agree bit for bit
        let probe = toy_batch(3, 32, 41);
        let mut t1 = Tape::new();
        let o1 = model.embed_eval(&mut t1, &probe).unwrap();
        let mut t2 = Tape::new();
        let o2 = loaded.embed_eval(&mut t2, &probe).unwrap();
        assert_eq!(t1.value(o1).data(), t2.value(o2).data());

        // resave is byte-identical
        let path2 = dir.path().join("model2.ckpt");
        loaded.save_checkpoint(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::build(toy_spec(Arch::CnnEd5), 7).unwrap();
        model.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            Model::load_checkpoint(&path),
            Err(NetError::Format { .. })
        ));
    }

    #[test]
    fn arch_flip_is_a_spec_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::build(toy_spec(Arch::CnnEd5), 7).unwrap();
        model.save_checkpoint(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let flipped = text.replace("\"cnn-ed-5\"", "\"gru\"");
        std::fs::write(&path, flipped).unwrap();
        assert!(matches!(
            Model::load_checkpoint(&path),
            Err(NetError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn reversed_input_swaps_direction_blocks() {
        // Tie the two directions of each recurrent layer and make the second
        // layer insensitive to block order; then reversing the input sequence
        // must exactly swap the forward/backward halves of the feature vector.
        let spec = toy_spec(Arch::Rnn);
        let mut model = Model::build(spec, 13).unwrap();
        let h = spec.hidden_size;
        for layer in 0..2 {
            for name in ["wx", "wh", "b"] {
                let src = model.param_index(&format!("rnn{layer}_0.{name}"));
                let dst = model.param_index(&format!("rnn{layer}_1.{name}"));
                let v = model.params[src].value.clone();
                model.params[dst].value = v;
            }
        }
        // wx of layer 1 acts on [fwd block | bwd block]; make both halves equal
        let wx1 = model.param_index("rnn1_0.wx");
        let mut w = model.params[wx1].value.clone();
        let cols = w.shape()[1];
        for row in 0..h {
            for c in 0..cols {
                let top = w.data()[row * cols + c];
                w.data_mut()[(row + h) * cols + c] = top;
            }
        }
        model.params[wx1].value = w.clone();
        let wx1b = model.param_index("rnn1_1.wx");
        model.params[wx1b].value = w;

        let refs = gen_references(3, 32, 19);
        let views: Vec<&DnaSeq> = refs.iter().collect();
        let batch = encode_batch(&views, 32).unwrap();
        let reversed: Vec<DnaSeq> = refs
            .iter()
            .map(|s| DnaSeq::new(s.bases().iter().rev().copied().collect()))
            .collect();
        let rev_views: Vec<&DnaSeq> = reversed.iter().collect();
        let rev_batch = encode_batch(&rev_views, 32).unwrap();

        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let fwd = model
            .features(&mut tape, &binding, &batch)
            .unwrap();
        let rev = model
            .features(&mut tape, &binding, &rev_batch)
            .unwrap();
        let (vf, vr) = (tape.value(fwd).clone(), tape.value(rev).clone());
        for b in 0..3 {
            for k in 0..h {
                let straight = vf.data()[b * 2 * h + k];
                let swapped = vr.data()[b * 2 * h + h + k];
                assert!(
                    (straight - swapped).abs() < 1e-12,
                    "row {b} dim {k}: {straight} vs {swapped}"
                );
                let straight_b = vf.data()[b * 2 * h + h + k];
                let swapped_b = vr.data()[b * 2 * h + k];
                assert!((straight_b - swapped_b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_batch_lays_out_one_hot_rows() {
        let s = DnaSeq::parse("AC").unwrap();
        let t = DnaSeq::parse("N").unwrap();
        let batch = encode_batch(&[&s, &t], 3).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 5]);
        assert_eq!(&batch.data()[0..5], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&batch.data()[5..10], &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&batch.data()[10..15], &[0.0; 5]);
        assert_eq!(&batch.data()[15..20], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let long = DnaSeq::parse("ACGT").unwrap();
        assert!(encode_batch(&[&long], 3).is_err());
    }
}
