//! Weight-shared twin training loop and batch embedding.
//!
//! Each step embeds the s-side and t-side of a batch as two stacked forward
//! passes through the one model (a single set of parameter leaves on the
//! tape, so both branches literally share storage and gradients accumulate
//! from both), rescales the embeddings, computes the per-pair distance and
//! loss, backpropagates, and applies one optimizer step. Training is a single
//! logical worker; two runs with the same config produce bit-identical
//! parameters.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Dataset;
use crate::metrics::{self, PairEval};
use crate::nets::{encode_batch, Model, NetError};
use crate::rng::{StreamDomain, StreamRng};
use crate::seq::DnaSeq;
use crate::space::{
    batch_loss_on_tape, distance, pair_distance_on_tape, EmbeddingSpace, LossKind, SpaceError,
    SpaceKind,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("model input length {model} does not match dataset padded length {data}")]
    PadMismatch { model: usize, data: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite loss {value} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> OptimizerKind {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::Sgd { lr } => lr,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(1e-3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub space: SpaceKind,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            optimizer: OptimizerKind::default(),
            loss: LossKind::new(crate::space::LossFnKind::ReChi2),
            space: SpaceKind::SqEuclid,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if !(self.optimizer.lr() > 0.0) {
            return Err(TrainError::BadConfig("learning rate must be > 0".into()));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        Ok(())
    }
}

/// Per-epoch summary. Validation metrics are present only when a validation
/// dataset was supplied.
#[derive(Clone, Debug, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub ae: Option<f64>,
    pub ae_h: Option<f64>,
    pub oa: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected first/second moment state for one parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a list of parameter buffers. Pure in `(grads, state)`:
/// identical inputs produce identical updates.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..p.len() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}

enum Optimizer {
    Adam { hyper: AdamHyper, state: AdamState },
    Sgd { lr: f64 },
}

impl Optimizer {
    fn new(kind: &OptimizerKind, sizes: &[usize]) -> Optimizer {
        match *kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam {
                hyper: AdamHyper {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                state: AdamState::new(sizes),
            },
            OptimizerKind::Sgd { lr } => Optimizer::Sgd { lr },
        }
    }

    fn apply(&mut self, model: &mut Model, grads: &[Vec<f64>]) {
        match self {
            Optimizer::Adam { hyper, state } => {
                let mut params: Vec<&mut [f64]> = model
                    .params_mut()
                    .iter_mut()
                    .map(|p| p.value.data_mut())
                    .collect();
                let grads: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
                adam_step(&mut params, &grads, state, hyper);
            }
            Optimizer::Sgd { lr } => {
                for (p, g) in model.params_mut().iter_mut().zip(grads) {
                    for (pk, gk) in p.value.data_mut().iter_mut().zip(g) {
                        *pk -= *lr * gk;
                    }
                }
            }
        }
    }
}

/// Rescales both raw branch outputs, takes the per-pair distance, and attaches
/// the batch loss. Returns `(loss node, distance node)`. The rescale factor is
/// applied exactly once per branch.
pub(crate) fn pair_loss_subgraph(
    tape: &mut Tape,
    space: &EmbeddingSpace,
    loss: &LossKind,
    u_raw: NodeId,
    v_raw: NodeId,
    d: &[u32],
) -> Result<(NodeId, NodeId), TrainError> {
    let u = space.rescale_on_tape(tape, u_raw)?;
    let v = space.rescale_on_tape(tape, v_raw)?;
    let d_hat = pair_distance_on_tape(tape, space.kind, u, v)?;
    let loss_node = batch_loss_on_tape(tape, loss, d_hat, d)?;
    Ok((loss_node, d_hat))
}

/// Trains the model in place and returns one report per epoch.
///
/// Deterministic given the seed: batch shuffling uses stream `(seed, Shuffle,
/// epoch)` and nothing else draws randomness. A batch whose tail would leave a
/// single sample is merged into its predecessor (the output normalization
/// needs at least two rows).
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<Vec<EpochReport>, TrainError> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if model.spec().input_len != data.padded_len {
        return Err(TrainError::PadMismatch {
            model: model.spec().input_len,
            data: data.padded_len,
        });
    }
    let space = EmbeddingSpace::new(cfg.space, model.spec().embed_dim);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
    let mut optimizer = Optimizer::new(&cfg.optimizer, &sizes);
    let padded = data.padded_len;
    let n_samples = data.samples.len();

    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n_samples).collect();
        if cfg.shuffle {
            StreamRng::new(cfg.seed, StreamDomain::Shuffle, epoch as u64).shuffle(&mut order);
        }
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if batches.len() >= 2 && batches[batches.len() - 1].len() == 1 {
            // fold the orphan sample into the previous batch
            let merged_start = (batches.len() - 2) * cfg.batch_size;
            batches.pop();
            batches.pop();
            batches.push(&order[merged_start..]);
        }

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let s_side: Vec<&DnaSeq> = batch.iter().map(|&i| &data.samples[i].s).collect();
            let t_side: Vec<&DnaSeq> = batch.iter().map(|&i| &data.samples[i].t).collect();
            let d: Vec<u32> = batch.iter().map(|&i| data.samples[i].d).collect();
            let s_batch = encode_batch(&s_side, padded)?;
            let t_batch = encode_batch(&t_side, padded)?;

            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let u_raw = model.forward_train(&mut tape, &binding, &s_batch)?;
            let v_raw = model.forward_train(&mut tape, &binding, &t_batch)?;
            let (loss_node, _) = pair_loss_subgraph(&mut tape, &space, &cfg.loss, u_raw, v_raw, &d)?;
            let loss_value = tape.value(loss_node).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss_value,
                });
            }
            tape.backward(loss_node);
            let grads: Vec<Vec<f64>> = binding
                .ids()
                .iter()
                .map(|&id| tape.grad(id).to_vec())
                .collect();
            optimizer.apply(model, &grads);
            loss_sum += loss_value * batch.len() as f64;
        }

        let mut report = EpochReport {
            epoch,
            loss: loss_sum / n_samples as f64,
            seconds: started.elapsed().as_secs_f64(),
            ae: None,
            ae_h: None,
            oa: None,
        };
        if let Some(val) = validation {
            let pairs = pair_evaluations(model, val, &space)?;
            let report_metrics = metrics::evaluate(&pairs, space.n as f64 / 2.0)?;
            report.ae = Some(report_metrics.ae);
            report.ae_h = Some(report_metrics.ae_h);
            report.oa = Some(report_metrics.oa_best);
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Embeds sequences in eval mode and applies the space's rescale factor,
/// returning one vector per sequence.
pub fn embed_batch(
    model: &Model,
    seqs: &[DnaSeq],
    space: &EmbeddingSpace,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let refs: Vec<&DnaSeq> = seqs.iter().collect();
    embed_refs(model, &refs, space)
}

const EMBED_CHUNK: usize = 256;

fn embed_refs(
    model: &Model,
    seqs: &[&DnaSeq],
    space: &EmbeddingSpace,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let r = space.rescale_factor();
    let n = model.spec().embed_dim;
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EMBED_CHUNK) {
        let batch = encode_batch(chunk, model.spec().input_len)?;
        let mut tape = Tape::new();
        let node = model.embed_eval(&mut tape, &batch)?;
        let data = tape.value(node).data();
        for row in 0..chunk.len() {
            out.push(data[row * n..(row + 1) * n].iter().map(|&x| r * x).collect());
        }
    }
    Ok(out)
}

/// Embeds both sides of every pair and returns `(d, d_hat, homologous)`
/// evaluations for the metrics module.
pub fn pair_evaluations(
    model: &Model,
    data: &Dataset,
    space: &EmbeddingSpace,
) -> Result<Vec<PairEval>, TrainError> {
    if model.spec().input_len != data.padded_len {
        return Err(TrainError::PadMismatch {
            model: model.spec().input_len,
            data: data.padded_len,
        });
    }
    let s_side: Vec<&DnaSeq> = data.samples.iter().map(|p| &p.s).collect();
    let t_side: Vec<&DnaSeq> = data.samples.iter().map(|p| &p.t).collect();
    let u = embed_refs(model, &s_side, space)?;
    let v = embed_refs(model, &t_side, space)?;
    data.samples
        .iter()
        .zip(u.iter().zip(&v))
        .map(|(sample, (ui, vi))| {
            Ok(PairEval {
                d: sample.d,
                d_hat: distance(space.kind, ui, vi)?,
                homologous: sample.homologous,
            })
        })
        .collect()
}

/// Writes per-epoch reports as CSV: `epoch,loss,seconds,ae,ae_h,oa`, with
/// empty cells for absent validation metrics.
pub fn write_epoch_csv(path: impl AsRef<Path>, reports: &[EpochReport]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wrap = |source| TrainError::Io {
        path: display.clone(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(wrap)?);
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut write = || -> std::io::Result<()> {
        writeln!(file, "epoch,loss,seconds,ae,ae_h,oa")?;
        for r in reports {
            writeln!(
                file,
                "{},{},{},{},{},{}",
                r.epoch,
                r.loss,
                r.seconds,
                fmt(r.ae),
                fmt(r.ae_h),
                fmt(r.oa)
            )?;
        }
        file.flush()
    };
    write().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_pairs, gen_references, ChannelParams, Role};
    use crate::nets::{Arch, ModelSpec};
    use crate::space::LossFnKind;
    use crate::tensor::Tensor;

    fn toy_model(seed: u64) -> Model {
        let mut spec = ModelSpec::new(Arch::CnnEd5, 32, 8);
        spec.fc_hidden = 16;
        Model::build(spec, seed).unwrap()
    }

    fn toy_dataset(seed: u64) -> Dataset {
        let ch = ChannelParams {
            p_sub: 0.04,
            p_ins: 0.0,
            p_del: 0.02,
            p_fail: 0.0,
            seed,
        };
        let refs = gen_references(12, 32, seed);
        build_pairs(&refs, 6, &ch, 32, seed, Role::Train).unwrap()
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradient() {
        let mut p = vec![1.5, -2.0, 0.25];
        let g = vec![0.0; 3];
        let mut state = AdamState::new(&[3]);
        let before = p.clone();
        adam_step(
            &mut [p.as_mut_slice()],
            &[g.as_slice()],
            &mut state,
            &AdamHyper::default(),
        );
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_descends_a_parabola() {
        // f(x) = x^2 from x = 1 with lr = 0.1
        let mut x = vec![1.0];
        let mut state = AdamState::new(&[1]);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        for _ in 0..20 {
            let g = vec![2.0 * x[0]];
            adam_step(&mut [x.as_mut_slice()], &[g.as_slice()], &mut state, &hyper);
        }
        assert!(x[0] < 1.0 && x[0] > -1.0, "x = {}", x[0]);
    }

    #[test]
    fn adam_treats_identical_groups_identically() {
        let mut a = vec![0.7, -0.3];
        let mut b = vec![0.7, -0.3];
        let g = vec![0.9, -1.1];
        let mut state = AdamState::new(&[2, 2]);
        adam_step(
            &mut [a.as_mut_slice(), b.as_mut_slice()],
            &[g.as_slice(), g.as_slice()],
            &mut state,
            &AdamHyper::default(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_a_precondition_error() {
        let mut model = toy_model(1);
        let empty = Dataset {
            samples: vec![],
            padded_len: 32,
            role: Role::Train,
        };
        assert!(matches!(
            train(&mut model, &empty, &toy_config(1), None),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn pad_mismatch_is_rejected() {
        let mut model = toy_model(1);
        let mut data = toy_dataset(3);
        data.padded_len = 64;
        assert!(matches!(
            train(&mut model, &data, &toy_config(1), None),
            Err(TrainError::PadMismatch { model: 32, data: 64 })
        ));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = toy_config(1);
        cfg.batch_size = 0;
        assert!(matches!(
            cfg.validate(),
            Err(TrainError::BadConfig(_))
        ));
        let mut cfg = toy_config(1);
        cfg.optimizer = OptimizerKind::Sgd { lr: 0.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn branches_share_one_parameter_set() {
        // After a step, embedding the same sequence through both branch paths
        // gives bit-identical vectors, so the predicted distance of an
        // identical pair is exactly zero.
        let mut model = toy_model(2);
        let data = toy_dataset(4);
        train(&mut model, &data, &toy_config(1), None).unwrap();
        let space = EmbeddingSpace::new(SpaceKind::SqEuclid, 8);
        let seq = data.samples[0].s.clone();
        let out = embed_batch(&model, &[seq.clone(), seq], &space).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(distance(SpaceKind::SqEuclid, &out[0], &out[1]).unwrap(), 0.0);
    }

    #[test]
    fn rescale_factor_is_applied_exactly_once() {
        // Plant known raw branch outputs and check the distance node value
        // against the homogeneity identity: d(r u, r v) = r^2 d(u, v) for the
        // squared distance and r d(u, v) for l1/l2.
        let u = vec![0.5, -1.0, 2.0];
        let v = vec![-0.25, 0.75, 1.0];
        for kind in [SpaceKind::SqEuclid, SpaceKind::L1, SpaceKind::L2] {
            let space = EmbeddingSpace::new(kind, 3);
            let r = space.rescale_factor();
            let mut tape = Tape::new();
            let u_node = tape.constant(Tensor::new(vec![1, 3], u.clone()).unwrap());
            let v_node = tape.constant(Tensor::new(vec![1, 3], v.clone()).unwrap());
            let loss = LossKind::new(LossFnKind::Mse);
            let (_, d_hat) =
                pair_loss_subgraph(&mut tape, &space, &loss, u_node, v_node, &[3]).unwrap();
            let got = tape.value(d_hat).data()[0];
            let raw = distance(kind, &u, &v).unwrap();
            let want = match kind {
                SpaceKind::SqEuclid => r * r * raw,
                _ => r * raw,
            };
            assert!(
                (got - want).abs() < 1e-12,
                "{kind:?}: got {got}, want {want} (factor must act once per side)"
            );
        }
    }

    #[test]
    fn gradients_flow_through_both_branches() {
        use crate::tape::grad_check_multi;
        let space = EmbeddingSpace::new(SpaceKind::SqEuclid, 4);
        let loss = LossKind::new(LossFnKind::ReChi2);
        let d = [2u32, 6];
        let u = Tensor::new(vec![2, 4], vec![0.3, -0.6, 1.2, 0.1, -0.4, 0.9, 0.2, -1.5]).unwrap();
        let v = Tensor::new(vec![2, 4], vec![-0.2, 0.5, 0.3, -0.9, 1.1, -0.3, 0.8, 0.4]).unwrap();
        let err = grad_check_multi(
            |tape, ids| {
                let (loss_node, _) =
                    pair_loss_subgraph(tape, &space, &loss, ids[0], ids[1], &d)
                        .map_err(|e| match e {
                            TrainError::Tensor(t) => t,
                            other => panic!("unexpected error {other}"),
                        })?;
                Ok(loss_node)
            },
            &[u, v],
            1e-3,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = toy_dataset(6);
        let run = || {
            let mut model = toy_model(3);
            train(&mut model, &data, &toy_config(2), None).unwrap();
            let mut flat = Vec::new();
            for p in model.params() {
                flat.extend_from_slice(p.value.data());
            }
            flat
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_the_loss() {
        let mut model = toy_model(4);
        let data = toy_dataset(7);
        let reports = train(&mut model, &data, &toy_config(6), None).unwrap();
        let first = reports.first().unwrap().loss;
        let last = reports.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
        assert!(reports.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn non_finite_loss_aborts_with_batch_index() {
        // the output normalization makes the net scale-invariant (a huge
        // learning rate alone stays finite) and relu drops NaN, so poison a
        // parameter downstream of the relu stack
        let mut model = toy_model(5);
        let last = model.params().len() - 1;
        model.params_mut()[last].value.data_mut()[0] = f64::NAN;
        let data = toy_dataset(8);
        match train(&mut model, &data, &toy_config(1), None) {
            Err(TrainError::NonFiniteLoss { epoch: 0, batch: 0, .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn embed_batch_shapes_and_length_overflow() {
        let model = toy_model(6);
        let space = EmbeddingSpace::new(SpaceKind::SqEuclid, 8);
        let seqs = gen_references(5, 32, 1);
        let out = embed_batch(&model, &seqs, &space).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|e| e.len() == 8));
        let too_long = gen_references(1, 40, 2);
        assert!(embed_batch(&model, &too_long, &space).is_err());
    }

    #[test]
    fn pair_distances_are_symmetric() {
        let model = toy_model(7);
        let space = EmbeddingSpace::new(SpaceKind::SqEuclid, 8);
        let seqs = gen_references(2, 32, 3);
        let e = embed_batch(&model, &seqs, &space).unwrap();
        let ab = distance(SpaceKind::SqEuclid, &e[0], &e[1]).unwrap();
        let ba = distance(SpaceKind::SqEuclid, &e[1], &e[0]).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn validation_fills_epoch_metrics() {
        let mut model = toy_model(8);
        let data = toy_dataset(9);
        let ch = ChannelParams {
            p_sub: 0.04,
            p_ins: 0.0,
            p_del: 0.02,
            p_fail: 0.0,
            seed: 77,
        };
        let refs = gen_references(6, 32, 77);
        let val = build_pairs(&refs, 4, &ch, 32, 77, Role::Test).unwrap();
        let reports = train(&mut model, &data, &toy_config(1), Some(&val)).unwrap();
        let r = &reports[0];
        assert!(r.ae.is_some() && r.ae_h.is_some() && r.oa.is_some());
    }

    #[test]
    fn epoch_csv_includes_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epochs.csv");
        let reports = vec![
            EpochReport {
                epoch: 0,
                loss: 2.5,
                seconds: 0.1,
                ae: None,
                ae_h: None,
                oa: None,
            },
            EpochReport {
                epoch: 1,
                loss: 1.25,
                seconds: 0.1,
                ae: Some(3.0),
                ae_h: Some(1.5),
                oa: Some(99.5),
            },
        ];
        write_epoch_csv(&path, &reports).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,loss,seconds,ae,ae_h,oa");
        assert!(lines[1].starts_with("0,2.5,") && lines[1].ends_with(",,,"));
        assert!(lines[2].starts_with("1,1.25,") && lines[2].ends_with(",3,1.5,99.5"));
    }
}
