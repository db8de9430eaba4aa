//! Observation wrapper that appends i.i.d. standard normal noise
//! dimensions; rewards and dynamics pass through untouched.

use super::{Env, EnvError, Step};
use crate::numkit::StreamRng;
use rand_chacha::ChaCha8Rng;

pub struct DistractorEnv<E: Env> {
    base: E,
    n_dims: usize,
}

impl<E: Env> DistractorEnv<E> {
    pub fn new(base: E, n_dims: usize) -> Self {
        DistractorEnv { base, n_dims }
    }

    pub fn base(&self) -> &E {
        &self.base
    }

    fn extend(&self, mut obs: Vec<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        obs.extend((0..self.n_dims).map(|_| StreamRng::standard_normal(rng)));
        obs
    }
}

impl<E: Env> Env for DistractorEnv<E> {
    fn obs_dim(&self) -> usize {
        self.base.obs_dim() + self.n_dims
    }

    fn n_actions(&self) -> usize {
        self.base.n_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let obs = self.base.reset(rng);
        self.extend(obs, rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let step = self.base.step(action, rng)?;
        Ok(Step {
            obs: self.extend(step.obs, rng),
            reward: step.reward,
            done: step.done,
        })
    }
}
