//! Deterministic neural-network training with per-batch update journaling,
//! data-removal methods, and the privacy attacks used to evaluate them.
//!
//! The crate is organized around one idea: training is a sequence of exact,
//! replayable parameter updates. Every SGD update is snapped to a fixed binary
//! grid (see [`nn::UPDATE_QUANTUM`]), so batch deltas form an exact additive
//! group under `f32` arithmetic. Recorded deltas can be summed and subtracted
//! in any order without rounding, which is what makes journal bookkeeping and
//! amnesiac removal bit-exact rather than merely approximate.
//!
//! Modules:
//! - [`tensor`]: dense row-major `f32` arrays, the universal numeric carrier.
//! - [`rng`]: seeded, stream-keyed random number generation.
//! - [`nn`]: feed-forward models (dense / 3x3 conv / relu / maxpool), plain
//!   SGD, and the training loop.
//! - [`journal`]: which examples appeared in which batches, plus the per-batch
//!   parameter deltas, with bit-exact persistence.
//! - [`data`]: IDX ingestion, synthetic fixtures, splits, example identity.
//! - [`removal`]: naive retraining, relabel unlearning, amnesiac unlearning.
//! - [`attacks`]: model inversion and shadow-model membership inference.

pub mod attacks;
pub mod data;
pub mod journal;
pub mod nn;
pub mod removal;
pub mod rng;
pub mod tensor;

pub use data::{Dataset, Example, SubsetFilter};
pub use journal::{BatchKey, Journal, JournalMode};
pub use nn::{
    accuracy, backward, forward, init_model, sgd_step, train, Architecture, LayerSpec, Model,
    ParamDelta, ParamVector, TrainConfig, TrainReport,
};
pub use removal::{RemovalMethod, RemovalReport, SensitiveSelector};
pub use tensor::Tensor;
