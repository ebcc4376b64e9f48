//! Progressive residual training of small tanh networks for high-precision
//! regression.
//!
//! The pieces, bottom-up: dense numerics and a seeded generator
//! ([`numeric`]), the network and its exact gradient ([`mlp`]), losses and
//! metrics ([`objectives`]), BFGS ([`optimizer`]), benchmark functions and
//! datasets ([`feynman`]), the stagewise trainer ([`boost`]) and local
//! patches ([`patch`]).

pub mod boost;
pub mod error;
pub mod feynman;
pub mod mlp;
pub mod numeric;
pub mod objectives;
pub mod optimizer;
pub mod patch;

pub use boost::{
    compute_stage_residuals, sampling_distribution, train_hiprenet, train_stage, weighted_resample,
    HiPreNetModel, InputScaling, LossKind, Sampling, Stage, StageConfig, StageOutcome, StageReport,
    StageResiduals, StopReason, TrainPlan, TrainingRun, DEGENERATE_THRESHOLD,
};
pub use error::{Error, Result};
pub use feynman::{generate_dataset, Dataset, Domain, FunctionId};
pub use mlp::{Activation, Mlp, MlpArchitecture, Reduction};
pub use numeric::{DenseMatrix, Rng};
pub use objectives::{LossSpec, Metrics};
pub use optimizer::{bfgs_minimize, BfgsOptions, BfgsReport, Termination};
pub use patch::{find_max_error_point, neighborhood, train_patch, Patch, PatchOutcome, PatchReport};
