//! Learned embeddings of noisy DNA reads.
//!
//! The library trains a twin-branch (weight-shared) embedding network so that
//! the squared Euclidean distance between two read embeddings approximates the
//! Levenshtein distance between the reads. It ships everything the pipeline
//! needs on a single machine:
//!
//! * [`seq`] — DNA sequences, exact Levenshtein distance, one-hot encoding;
//! * [`channel`] — a synthetic insertion/deletion/substitution read channel
//!   and paired dataset construction;
//! * [`tensor`] / [`tape`] — a small f64 tensor type with reverse-mode
//!   automatic differentiation;
//! * [`nets`] — the four embedding architectures and checkpointing;
//! * [`space`] — embedding spaces, rescaling factors, and regression losses,
//!   including the chi-squared regression loss;
//! * [`trainer`] — the weight-shared training loop and batch embedding;
//! * [`metrics`] — approximation-error and threshold-classification metrics
//!   plus normality/independence diagnostics;
//! * [`montecarlo`] — orthogonal-matrix samplers and the expected-distance
//!   sweeps over the degree of freedom.
//!
//! All randomness flows through [`rng::StreamRng`], a counter-based stream RNG
//! keyed by `(seed, domain, index)`, so results never depend on scheduling or
//! worker count.

pub mod channel;
pub mod metrics;
pub mod montecarlo;
pub mod nets;
pub mod rng;
pub mod seq;
pub mod space;
pub mod special;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use channel::{build_pairs, gen_references, simulate_read, ChannelParams, Dataset, PairSample, Role};
pub use nets::{Arch, Model, ModelSpec};
pub use seq::{levenshtein, one_hot, Base, DnaSeq, OneHotMatrix};
pub use space::{EmbeddingSpace, LossFnKind, LossKind, SpaceKind};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use trainer::{train, TrainConfig};
