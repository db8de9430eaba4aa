//! Auxiliary-loss RL agents: a double-Q backbone for discrete actions
//! over window-encoded histories, and a deterministic actor-critic
//! backbone for continuous actions, each with optional next-latent,
//! next-observation, and reward prediction heads.

mod adam;
mod continuous;
mod discrete;
mod replay;
mod schedule;
mod train;

use thiserror::Error;

use crate::numkit::GraphError;
use crate::objectives::TargetMode;

pub use adam::{clip_gradients, Adam, MAX_GRAD_NORM};
pub use continuous::{ContinuousAgent, ContinuousBatch};
pub use discrete::{argmax, DiscreteAgent, DiscreteBatch};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::Schedule;
pub use train::{train, EnvFactory, RecordRow, RunRecord, TrainSetup};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("aux coefficient must be non-negative")]
    NegativeLambda,
    #[error("the model-free variant requires lambda = 0")]
    ModelFreeWithAux,
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch size and warmup must be positive")]
    BadSizes,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentVariant {
    ModelFree,
    ZpL2,
    ZpFkl,
    ZpRkl,
    Op,
    PhasedRpZp,
    PhasedRpOp,
}

impl AgentVariant {
    pub fn uses_zp(&self) -> bool {
        matches!(
            self,
            AgentVariant::ZpL2
                | AgentVariant::ZpFkl
                | AgentVariant::ZpRkl
                | AgentVariant::PhasedRpZp
        )
    }

    pub fn uses_op(&self) -> bool {
        matches!(self, AgentVariant::Op | AgentVariant::PhasedRpOp)
    }

    /// Phased variants train the encoder on reward + prediction losses
    /// only and keep it frozen inside the RL loss.
    pub fn phased(&self) -> bool {
        matches!(self, AgentVariant::PhasedRpZp | AgentVariant::PhasedRpOp)
    }

    pub fn gaussian(&self) -> bool {
        matches!(self, AgentVariant::ZpFkl | AgentVariant::ZpRkl)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentVariant::ModelFree => "model-free",
            AgentVariant::ZpL2 => "zp-l2",
            AgentVariant::ZpFkl => "zp-fkl",
            AgentVariant::ZpRkl => "zp-rkl",
            AgentVariant::Op => "op",
            AgentVariant::PhasedRpZp => "phased-rp-zp",
            AgentVariant::PhasedRpOp => "phased-rp-op",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    pub lambda: f64,
    /// Divide λ by the auxiliary head's output dimension.
    pub normalize_lambda: bool,
    /// Target used by the self-prediction loss.
    pub target: TargetMode,
    /// Polyak weight on online parameters for the TD target networks.
    pub target_mix: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub exploration: Schedule,
    pub latent_dim: usize,
    pub hidden: usize,
    pub warmup: usize,
    pub n_step: usize,
    pub update_every: usize,
    pub window: usize,
    pub replay_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl AgentConfig {
    pub fn defaults(variant: AgentVariant) -> Self {
        let lambda = match variant {
            AgentVariant::ModelFree => 0.0,
            AgentVariant::ZpFkl | AgentVariant::ZpRkl => 1.0,
            _ => 10.0,
        };
        AgentConfig {
            variant,
            lambda,
            normalize_lambda: true,
            target: TargetMode::Ema { mix: 0.005 },
            target_mix: 0.005,
            gamma: 0.99,
            batch_size: 64,
            learning_rate: 1e-3,
            exploration: Schedule::Exponential {
                start: 1.0,
                end: 0.05,
                steps: 20_000,
            },
            latent_dim: 16,
            hidden: 64,
            warmup: 1_000,
            n_step: 5,
            update_every: 4,
            window: 8,
            replay_capacity: 100_000,
            eval_every: 2_000,
            eval_episodes: 10,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(AgentError::NegativeLambda);
        }
        if self.variant == AgentVariant::ModelFree && self.lambda != 0.0 {
            return Err(AgentError::ModelFreeWithAux);
        }
        if self.batch_size == 0 || self.n_step == 0 || self.update_every == 0 || self.window == 0 {
            return Err(AgentError::BadSizes);
        }
        Ok(())
    }
}
