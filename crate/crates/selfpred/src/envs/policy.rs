//! Scripted data-collection policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub enum ScriptedPolicy {
    /// Mountain-car heuristic: push in the direction of motion (push
    /// left when stationary). Reads velocity from the observation.
    EnergyPumping { velocity_index: usize },
    /// Repeat the previous action with the given probability, otherwise
    /// draw uniformly; every episode starts from `initial_action`.
    StickyAction {
        repeat_prob: f64,
        initial_action: usize,
        last_action: Option<usize>,
    },
    UniformRandom,
}

impl ScriptedPolicy {
    pub fn energy_pumping() -> Self {
        ScriptedPolicy::EnergyPumping { velocity_index: 1 }
    }

    pub fn sticky(repeat_prob: f64, initial_action: usize) -> Self {
        assert!((0.0..=1.0).contains(&repeat_prob));
        ScriptedPolicy::StickyAction {
            repeat_prob,
            initial_action,
            last_action: None,
        }
    }

    pub fn begin_episode(&mut self) {
        if let ScriptedPolicy::StickyAction { last_action, .. } = self {
            *last_action = None;
        }
    }

    pub fn act(&mut self, obs: &[f64], n_actions: usize, rng: &mut ChaCha8Rng) -> usize {
        match self {
            ScriptedPolicy::EnergyPumping { velocity_index } => {
                let v = obs[*velocity_index];
                if v > 0.0 {
                    n_actions - 1
                } else {
                    0
                }
            }
            ScriptedPolicy::StickyAction {
                repeat_prob,
                initial_action,
                last_action,
            } => {
                let action = match *last_action {
                    None => *initial_action,
                    Some(prev) if rng.gen::<f64>() < *repeat_prob => prev,
                    Some(_) => rng.gen_range(0..n_actions),
                };
                *last_action = Some(action);
                action
            }
            ScriptedPolicy::UniformRandom => rng.gen_range(0..n_actions),
        }
    }
}
