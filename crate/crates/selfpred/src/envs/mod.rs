//! Environments, featurizers, and scripted data-collection policies.
//!
//! Tabular POMDPs carry exact probability tables so the oracle module can
//! enumerate them; the remaining environments expose the same step
//! interface over vector observations.

pub mod distractor;
pub mod featurize;
pub mod finite;
pub mod keydoor;
pub mod mountain_car;
pub mod policy;

pub use distractor::DistractorEnv;
pub use featurize::{rbf_featurize, Featurizer};
pub use finite::{make_load_unload, random_finite_pomdp, FinitePomdp, PomdpSizes, TabularEnv};
pub use keydoor::{keydoor_views, make_grid_keydoor, KeyDoorEnv, KeyDoorPatchEnv};
pub use mountain_car::MountainCar;
pub use policy::ScriptedPolicy;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after episode end; reset first")]
    StepAfterDone,
    #[error("action {action} out of range (env has {n_actions} actions)")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("probability row {row} of {table} sums to {sum}, expected 1")]
    BadRowSum {
        table: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("discount {0} outside [0, 1]")]
    BadDiscount(f64),
    #[error("table {table} has {got} entries, expected {expected}")]
    BadTableLen {
        table: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One environment transition as seen by the agent.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError>;
}

/// A finished or cap-truncated episode. Observation `t` is the one the
/// agent saw before choosing action `t`, so there is always one more
/// observation than action.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check_alignment(&self) -> bool {
        self.observations.len() == self.actions.len() + 1
            && self.rewards.len() == self.actions.len()
    }
}

/// Run one episode, stopping at terminal or after `max_steps` actions.
pub fn rollout(
    env: &mut dyn Env,
    policy: &mut ScriptedPolicy,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, EnvError> {
    let mut traj = Trajectory::default();
    let obs = env.reset(rng);
    policy.begin_episode();
    traj.observations.push(obs);
    for _ in 0..max_steps {
        let last = traj.observations.last().expect("non-empty");
        let action = policy.act(last, env.n_actions(), rng);
        let step = env.step(action, rng)?;
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        traj.observations.push(step.obs);
        if step.done {
            traj.terminated = true;
            break;
        }
    }
    Ok(traj)
}
