//! Adversarial imitation learning on finite embedded MDPs with two-layer ReLU
//! networks: a natural-policy-gradient actor, a gradient-ascent reward, and a
//! neural TD critic, plus exact oracles and R-distance evaluation.

pub mod envs;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gail;
pub mod linalg;
pub mod mdp;
pub mod net;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod td;

pub use error::{GailError, Result};
pub use eval::{r_distance, RDistanceReport};
pub use experiment::ExperimentSpec;
pub use gail::{run_gail, GailConfig, GailRun, MixedPolicy};
pub use mdp::{FiniteEmbeddedMdp, TabularPolicy};
pub use net::{BallConstraint, InitScheme, TwoLayerNet};
pub use policy::{CriticNet, EnergyPolicy, RewardNet};
pub use td::TdConfig;
