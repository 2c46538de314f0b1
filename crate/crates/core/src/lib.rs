//! Layer-wise training of three-layer networks on hierarchical targets built from
//! hidden quadratic features, with the spherical-harmonic tools needed to check it.

pub mod error;
pub mod experiment;
pub mod features;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod network;
pub mod rng;
pub mod sphere;
pub mod targets;
pub mod reconstruction;
pub mod training;
pub mod universality;
pub mod verify;

pub use error::{Error, Result};
pub use features::{make_sign_features, orthonormalize, FeatureSet};
pub use mc::McEstimate;
pub use network::{init_network, ActivationSpec, InnerLayer, NetworkParams};
pub use sphere::{sample_sphere, SampleMatrix};
pub use targets::{make_standard_target, HessianMatrix, HessianMode, LinkPolynomial, Target};
pub use experiment::{ExperimentConfig, ExperimentKind, ResultRow};
pub use training::{stage1_step, stage2_train, Dataset, StageOneState, TrainConfig, TrainedModel};
