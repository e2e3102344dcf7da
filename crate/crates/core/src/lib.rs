//! Unequal-error-protection codes learned by an autoencoder over AWGN, with
//! coset and superposition baselines and Monte Carlo evaluation.

pub mod autoencoder;
pub mod baselines;
pub mod channel;
pub mod codebook;
pub mod error;
pub mod montecarlo;
pub mod nn;
pub mod uep;

pub use autoencoder::{train, TrainConfig, TrainedModel};
pub use channel::{SimRng, SnrSpec};
pub use codebook::{Codebook, Provenance};
pub use error::{Error, Result};
pub use montecarlo::{ErrorProfile, StoppingRule};
pub use nn::{Matrix, MlpParams};
pub use uep::{ClassPartition, LossWeights, PartitionKind};
