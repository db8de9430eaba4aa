//! Exact analysis on tabular POMDPs: history enumeration, finite-horizon
//! value iteration, abstraction-condition checking, latent-reward
//! recovery, and the associated property suites.

pub mod conditions;
pub mod encoders;
pub mod latent;
pub mod suites;
pub mod tree;
pub mod value;

pub use conditions::{
    check_condition, check_multistep, Condition, ConditionReport, TabularEncoder,
};
pub use encoders::{
    belief_partition, constant_encoder, depth_obs_partition, last_obs_partition,
    random_partition, random_refinement, refine_to_stability, StabilityGoals,
};
pub use latent::{
    check_approx_bound, construct_latent_reward, latent_model_from_encoder,
    reward_reconstruction_error, BoundReport, BoundRow, LatentModel,
};
pub use suites::{
    check_implications, coin_observation_fixture, is_mdp, one_step_obs_fixture,
    one_step_obs_fixture_encoder, to_mdp,
    uniform_tree, verify_granularity, SuiteEntry, SuiteReport, EXACT_TOL, SAMPLED_TOL,
};
pub use tree::{
    enumerate_histories, uniform_policy, HistoryNode, HistoryTree, OracleError,
    DEFAULT_NODE_BUDGET,
};
pub use value::{bellman_residual, value_iteration, QTable};
