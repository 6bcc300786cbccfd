//! Noisy-label learning by decomposing each sample's label space into a
//! candidate set (trained with partial-label disambiguation) and a
//! complementary set (trained with negative learning), plus a
//! weak/strong consistency term.
//!
//! The crate carries everything needed to run the method at desk scale:
//! a small MLP with hand-written backpropagation, synthetic blob datasets
//! with symmetric and asymmetric label noise, and a training loop that
//! reports per-epoch diagnostics.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod label_space;
pub mod losses;
pub mod model;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{
    generate_blobs, inject_asymmetric, inject_noise, inject_symmetric, load_dataset,
    save_dataset, AugmentSpec, BlobSpec, BlobSplits, Dataset, NoiseKind, NoiseSpec, Split, View,
};
pub use error::{NpnError, Result};
pub use label_space::{
    build_candidate_set, build_complementary_set, disambiguate, CandidateHistogram,
    CandidateSet, ComplementarySet, Disambiguation, HistogramStore, LabelVector,
};
pub use losses::{LossOutput, LossWeights, Probabilities};
pub use model::{sgd_step, LrSchedule, MlpNetwork, OptimizerState};
pub use trainer::{
    diagnostics, evaluate, train, DisambiguationMode, EpochMetrics, Method, Phase, TrainConfig,
    TrainOutcome, TrainSummary, Trainer,
};
