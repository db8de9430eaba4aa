//! Classic mountain car with three force actions and a 200-step cap.

use super::{Env, EnvError, Step};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const POS_MIN: f64 = -1.2;
pub const POS_MAX: f64 = 0.5;
pub const VEL_MIN: f64 = -0.07;
pub const VEL_MAX: f64 = 0.07;
pub const GOAL_POS: f64 = 0.5;
pub const STEP_CAP: usize = 200;

pub struct MountainCar {
    pos: f64,
    vel: f64,
    steps: usize,
    done: bool,
    started: bool,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCar {
    pub fn new() -> Self {
        MountainCar {
            pos: -0.5,
            vel: 0.0,
            steps: 0,
            done: true,
            started: false,
        }
    }

    pub fn position(&self) -> f64 {
        self.pos
    }

    pub fn velocity(&self) -> f64 {
        self.vel
    }
}

impl Env for MountainCar {
    fn obs_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = rng.gen_range(-0.6..-0.4);
        self.vel = 0.0;
        self.steps = 0;
        self.done = false;
        self.started = true;
        vec![self.pos, self.vel]
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if self.done || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        if action >= 3 {
            return Err(EnvError::ActionOutOfRange {
                action,
                n_actions: 3,
            });
        }
        let force = action as f64 - 1.0;
        self.vel += 0.001 * force - 0.0025 * (3.0 * self.pos).cos();
        self.vel = self.vel.clamp(VEL_MIN, VEL_MAX);
        self.pos += self.vel;
        if self.pos < POS_MIN {
            self.pos = POS_MIN;
            self.vel = 0.0;
        }
        self.steps += 1;
        let at_goal = self.pos >= GOAL_POS;
        self.done = at_goal || self.steps >= STEP_CAP;
        Ok(Step {
            obs: vec![self.pos, self.vel],
            reward: if at_goal { 0.0 } else { -1.0 },
            done: self.done,
        })
    }
}
