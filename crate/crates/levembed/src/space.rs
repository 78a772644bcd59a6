//! Embedding spaces, their rescaling factors, and the regression losses.
//!
//! Raw network outputs are rescaled by a per-space constant chosen so that the
//! expected distance between two independent embeddings equals the embedding
//! dimension. The chi-squared regression loss treats the true edit distance as
//! the degree of freedom of the difference between the two embeddings and
//! penalizes the predicted distance by the negative base-2 log density of that
//! chi-squared distribution.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, LOG2_E, PI};
use thiserror::Error;

use crate::special::{self, SpecialError};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("distance: dimension mismatch between {lhs} and {rhs}")]
    DimensionMismatch { lhs: usize, rhs: usize },
    #[error("chi-squared loss requires a positive ground-truth distance, got {0}")]
    NonPositiveDistance(i64),
    #[error("loss epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Distance used between embedding vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "sqeuclid")]
    SqEuclid,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::L1 => "l1",
            SpaceKind::L2 => "l2",
            SpaceKind::SqEuclid => "sqeuclid",
        }
    }
}

/// An embedding space: the distance kind plus the embedding dimension `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub kind: SpaceKind,
    pub n: usize,
}

impl EmbeddingSpace {
    pub fn new(kind: SpaceKind, n: usize) -> EmbeddingSpace {
        EmbeddingSpace { kind, n }
    }

    /// Per-space rescaling factor applied elementwise to raw embeddings so the
    /// expected distance between independent embeddings equals `n`.
    ///
    /// The squared-Euclidean and l1 factors are dimension-free; the l2 factor
    /// `n * Gamma(n/2) / (2 * Gamma((n+1)/2))` depends on `n` and is computed
    /// fresh from `ln_gamma` on every call rather than cached across specs.
    pub fn rescale_factor(&self) -> f64 {
        match self.kind {
            SpaceKind::SqEuclid => std::f64::consts::SQRT_2 / 2.0,
            SpaceKind::L1 => PI.sqrt() / 2.0,
            SpaceKind::L2 => {
                let n = self.n as f64;
                let ln = n.ln() + special::ln_gamma(n / 2.0).expect("n >= 1")
                    - (2.0f64).ln()
                    - special::ln_gamma((n + 1.0) / 2.0).expect("n >= 1");
                ln.exp()
            }
        }
    }

    /// Multiplies every element of a raw embedding batch by the rescale
    /// factor.
    pub fn rescaled_embed(&self, raw: &Tensor) -> Tensor {
        let r = self.rescale_factor();
        let data = raw.data().iter().map(|&x| r * x).collect();
        Tensor::new(raw.shape().to_vec(), data).expect("shape preserved")
    }

    /// Same rescaling recorded on a tape.
    pub fn rescale_on_tape(&self, tape: &mut Tape, raw: NodeId) -> Result<NodeId, TensorError> {
        tape.scale(raw, self.rescale_factor())
    }
}

/// Plain (non-tape) distance between two equal-length vectors.
pub fn distance(kind: SpaceKind, u: &[f64], v: &[f64]) -> Result<f64, SpaceError> {
    if u.len() != v.len() {
        return Err(SpaceError::DimensionMismatch {
            lhs: u.len(),
            rhs: v.len(),
        });
    }
    let d = match kind {
        SpaceKind::L1 => u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum(),
        SpaceKind::SqEuclid => u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum(),
        SpaceKind::L2 => u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    };
    Ok(d)
}

/// Row-wise distance between two `[B, n]` batches on a tape, producing `[B]`.
/// Differentiable everywhere except the l1/l2 kinks, where the subgradient is
/// zero.
pub fn pair_distance_on_tape(
    tape: &mut Tape,
    kind: SpaceKind,
    u: NodeId,
    v: NodeId,
) -> Result<NodeId, TensorError> {
    let diff = tape.sub(u, v)?;
    match kind {
        SpaceKind::L1 => {
            let a = tape.abs(diff)?;
            tape.sum_rows(a)
        }
        SpaceKind::SqEuclid => {
            let s = tape.square(diff)?;
            tape.sum_rows(s)
        }
        SpaceKind::L2 => {
            let s = tape.square(diff)?;
            let rows = tape.sum_rows(s)?;
            tape.sqrt(rows)
        }
    }
}

/// Which regression loss to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossFnKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "mae")]
    Mae,
    #[serde(rename = "rechi2")]
    ReChi2,
}

impl LossFnKind {
    pub fn name(self) -> &'static str {
        match self {
            LossFnKind::Mse => "mse",
            LossFnKind::Mae => "mae",
            LossFnKind::ReChi2 => "rechi2",
        }
    }
}

/// Loss selector. `epsilon_dhat` is the lower clamp applied to the predicted
/// distance inside the chi-squared loss: the loss diverges as the prediction
/// approaches zero when `d = 1`, and the clamp keeps values and gradients
/// bounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossKind {
    pub kind: LossFnKind,
    pub epsilon_dhat: f64,
}

pub const DEFAULT_EPSILON_DHAT: f64 = 1e-6;

impl LossKind {
    pub fn new(kind: LossFnKind) -> LossKind {
        LossKind {
            kind,
            epsilon_dhat: DEFAULT_EPSILON_DHAT,
        }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        if !(self.epsilon_dhat > 0.0) {
            return Err(SpaceError::BadEpsilon(self.epsilon_dhat));
        }
        Ok(())
    }
}

/// Chi-squared regression loss in base-2 logs:
/// `d/2 + log2(Gamma(d/2)) - (d/2 - 1) * log2(d_hat) + (d_hat / 2) * log2(e)`,
/// the negative base-2 log density of the chi-squared distribution with `d`
/// degrees of freedom evaluated at `d_hat`. Minimized over `d_hat` at `d - 2`
/// for `d > 2`; strictly increasing for `d <= 2`.
pub fn rechi2_bits(d_hat: f64, d: u32) -> Result<f64, SpaceError> {
    if d == 0 {
        return Err(SpaceError::NonPositiveDistance(0));
    }
    let half_d = d as f64 / 2.0;
    Ok(half_d + special::log2_gamma(half_d)? - (half_d - 1.0) * d_hat.log2()
        + (d_hat / 2.0) * LOG2_E)
}

/// Natural-log formulation of the same quantity; `rechi2_bits = rechi2_nats /
/// ln 2`. Exposed for cross-checking the base-2 form.
pub fn rechi2_nats(d_hat: f64, d: u32) -> Result<f64, SpaceError> {
    if d == 0 {
        return Err(SpaceError::NonPositiveDistance(0));
    }
    let half_d = d as f64 / 2.0;
    Ok(half_d * LN_2 + special::ln_gamma(half_d)? - (half_d - 1.0) * d_hat.ln() + d_hat / 2.0)
}

/// Loss value for one pair. The chi-squared loss clamps `d_hat` from below at
/// `epsilon_dhat` and requires `d >= 1`.
pub fn loss_value(loss: &LossKind, d_hat: f64, d: u32) -> Result<f64, SpaceError> {
    loss.validate()?;
    match loss.kind {
        LossFnKind::Mse => Ok((d_hat - d as f64) * (d_hat - d as f64)),
        LossFnKind::Mae => Ok((d_hat - d as f64).abs()),
        LossFnKind::ReChi2 => rechi2_bits(d_hat.max(loss.epsilon_dhat), d),
    }
}

/// Mean loss over a batch, recorded on the tape. `d_hat` is a `[B]` node; `d`
/// are the ground-truth distances.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    loss: &LossKind,
    d_hat: NodeId,
    d: &[u32],
) -> Result<NodeId, SpaceError> {
    loss.validate()?;
    let batch = tape.value(d_hat).numel();
    if batch != d.len() {
        return Err(TensorError::ShapeMismatch {
            op: "batch_loss",
            lhs: vec![batch],
            rhs: vec![d.len()],
        }
        .into());
    }
    match loss.kind {
        LossFnKind::Mse => {
            let target = tape.constant(Tensor::vector(d.iter().map(|&x| x as f64).collect()));
            let diff = tape.sub(d_hat, target)?;
            let sq = tape.square(diff)?;
            Ok(tape.mean(sq)?)
        }
        LossFnKind::Mae => {
            let target = tape.constant(Tensor::vector(d.iter().map(|&x| x as f64).collect()));
            let diff = tape.sub(d_hat, target)?;
            let a = tape.abs(diff)?;
            Ok(tape.mean(a)?)
        }
        LossFnKind::ReChi2 => {
            let mut constant = Vec::with_capacity(d.len());
            let mut log_coef = Vec::with_capacity(d.len());
            for &di in d {
                if di == 0 {
                    return Err(SpaceError::NonPositiveDistance(0));
                }
                let half = di as f64 / 2.0;
                constant.push(half + special::log2_gamma(half)?);
                log_coef.push(half - 1.0);
            }
            let clamped = tape.clamp_min(d_hat, loss.epsilon_dhat)?;
            let ln_dhat = tape.ln(clamped)?;
            let log2_dhat = tape.scale(ln_dhat, 1.0 / LN_2)?;
            let coef = tape.constant(Tensor::vector(log_coef));
            let log_term = tape.mul(coef, log2_dhat)?;
            let linear = tape.scale(clamped, LOG2_E / 2.0)?;
            let consts = tape.constant(Tensor::vector(constant));
            let partial = tape.sub(consts, log_term)?;
            let per_pair = tape.add(partial, linear)?;
            Ok(tape.mean(per_pair)?)
        }
    }
}
