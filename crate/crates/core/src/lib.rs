//! MMSE hybrid training beamformer design for Kronecker-correlated massive MIMO.

// Negated float comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod hybrid;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result, Side};
pub use model::{
    eigen_basis, sample_channel, ChannelRealization, CorrelationPair, EigenBasis, SystemConfig,
};
pub use training::{
    design_training, equal_power_plan, waterfill, BlockSpectrum, SlotBeamformer, TrainingPlan,
    TrainingSlot,
};
