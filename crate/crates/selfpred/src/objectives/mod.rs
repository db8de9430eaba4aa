//! Latent self-prediction objectives: practical and exact-enumeration
//! forms of the next-latent, next-observation, and reward losses, with
//! online / detached / EMA target networks.

mod ideal;
mod losses;
mod net;

use crate::numkit::GraphError;
use thiserror::Error;

pub use ideal::{enumerated_zp_losses, history_features, ideal_zp_loss, ZpEnumeration, ZpMetric};
pub use losses::{
    one_hot_actions, op_graph, op_loss, rp_graph, rp_loss, zp_kl_graph, zp_l2_graph, zp_loss_kl,
    zp_loss_l2, Batch, KlDirection, LossBreakdown, LossGraph, LossOutput, OpMetric,
};
pub use net::{
    ema_update, DynamicsModel, Encoder, EncoderNodes, Head, Net, NetArch, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("loss requires deterministic heads; use the KL form for Gaussian heads")]
    WantsDeterministicHead,
    #[error("KL loss requires diagonal-Gaussian heads")]
    WantsGaussianHead,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How the target encoder tracks the online encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMode {
    /// Target is the online encoder itself; gradients flow through it.
    Online,
    /// Stop-gradient copy refreshed every update.
    Detached,
    /// Stop-gradient exponential moving average; `mix` is the weight on
    /// the online parameters per update (mix = 1 reproduces Detached).
    Ema { mix: f64 },
}

impl TargetMode {
    pub fn is_online(&self) -> bool {
        matches!(self, TargetMode::Online)
    }

    /// Weight on the online parameters for the target refresh.
    pub fn mix(&self) -> f64 {
        match self {
            TargetMode::Online | TargetMode::Detached => 1.0,
            TargetMode::Ema { mix } => *mix,
        }
    }
}

pub const DEFAULT_EMA_MIX: f64 = 0.005;
