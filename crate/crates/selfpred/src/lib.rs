//! A desk-scale laboratory for self-predictive representation learning:
//! exact condition checkers on small POMDPs, latent-prediction objectives
//! with interchangeable prediction targets, a linear collapse experiment,
//! and a minimalist auxiliary-loss RL agent, all behind one CLI.

pub mod agents;
pub mod envs;
pub mod harness;
pub mod numkit;
pub mod linearlab;
pub mod objectives;
pub mod oracle;
