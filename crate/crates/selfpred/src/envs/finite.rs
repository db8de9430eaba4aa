//! Tabular POMDPs with exact probability tables, plus the load-unload
//! chain and a bounded random-model generator.

use super::{Env, EnvError, Step};
use crate::numkit::sample_index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ROW_SUM_TOL: f64 = 1e-12;

/// A fully specified finite POMDP: state transitions P(s'|s,a),
/// observation emissions P(o|s), mean rewards E[r|s,a], an initial state
/// distribution, a discount, and a hard step cap.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePomdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_observations: usize,
    /// Flattened [s][a][s'], row-major.
    pub transition: Vec<f64>,
    /// Flattened [s][o].
    pub emission: Vec<f64>,
    /// Flattened [s][a].
    pub reward_mean: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
}

impl FinitePomdp {
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn emission_row(&self, s: usize) -> &[f64] {
        let base = s * self.n_observations;
        &self.emission[base..base + self.n_observations]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.n_actions + a]
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::BadHorizon);
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(EnvError::BadDiscount(self.gamma));
        }
        let checks: [(&'static str, &[f64], usize); 3] = [
            (
                "transition",
                &self.transition,
                self.n_states * self.n_actions * self.n_states,
            ),
            (
                "emission",
                &self.emission,
                self.n_states * self.n_observations,
            ),
            ("initial", &self.initial, self.n_states),
        ];
        for (name, table, expected) in checks {
            if table.len() != expected {
                return Err(EnvError::BadTableLen {
                    table: name,
                    got: table.len(),
                    expected,
                });
            }
            if !table.iter().all(|x| x.is_finite()) {
                return Err(EnvError::NonFinite(name));
            }
        }
        if self.reward_mean.len() != self.n_states * self.n_actions {
            return Err(EnvError::BadTableLen {
                table: "reward_mean",
                got: self.reward_mean.len(),
                expected: self.n_states * self.n_actions,
            });
        }
        if !self.reward_mean.iter().all(|x| x.is_finite()) {
            return Err(EnvError::NonFinite("reward_mean"));
        }
        check_rows("transition", &self.transition, self.n_states)?;
        check_rows("emission", &self.emission, self.n_observations)?;
        check_rows("initial", &self.initial, self.n_states)?;
        Ok(())
    }

    /// Plain-text key-value encoding. Floats use Rust's shortest
    /// round-trip formatting, so parse(text(m)) == m bit for bit.
    pub fn to_text(&self) -> String {
        let fmt_row = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "n_states {}\nn_actions {}\nn_observations {}\ngamma {:?}\nhorizon {}\n\
             transition {}\nemission {}\nreward_mean {}\ninitial {}\n",
            self.n_states,
            self.n_actions,
            self.n_observations,
            self.gamma,
            self.horizon,
            fmt_row(&self.transition),
            fmt_row(&self.emission),
            fmt_row(&self.reward_mean),
            fmt_row(&self.initial),
        )
    }

    pub fn from_text(text: &str) -> Result<FinitePomdp, EnvError> {
        let mut fields = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').ok_or_else(|| EnvError::Parse {
                line: i + 1,
                message: "expected `key values...`".into(),
            })?;
            fields.insert(key.to_string(), (i + 1, rest.to_string()));
        }
        let scalar = |key: &str| -> Result<(usize, String), EnvError> {
            fields.get(key).cloned().ok_or_else(|| EnvError::Parse {
                line: 0,
                message: format!("missing field `{key}`"),
            })
        };
        let parse_usize = |key: &str| -> Result<usize, EnvError> {
            let (line, raw) = scalar(key)?;
            raw.trim().parse().map_err(|e| EnvError::Parse {
                line,
                message: format!("{key}: {e}"),
            })
        };
        let parse_floats = |key: &str| -> Result<Vec<f64>, EnvError> {
            let (line, raw) = scalar(key)?;
            raw.split_whitespace()
                .map(|tok| {
                    tok.parse().map_err(|e| EnvError::Parse {
                        line,
                        message: format!("{key}: {e}"),
                    })
                })
                .collect()
        };
        let gamma_vec = parse_floats("gamma")?;
        if gamma_vec.len() != 1 {
            return Err(EnvError::Parse {
                line: 0,
                message: "gamma must be a single value".into(),
            });
        }
        let model = FinitePomdp {
            n_states: parse_usize("n_states")?,
            n_actions: parse_usize("n_actions")?,
            n_observations: parse_usize("n_observations")?,
            transition: parse_floats("transition")?,
            emission: parse_floats("emission")?,
            reward_mean: parse_floats("reward_mean")?,
            initial: parse_floats("initial")?,
            gamma: gamma_vec[0],
            horizon: parse_usize("horizon")?,
        };
        model.validate()?;
        Ok(model)
    }
}

fn check_rows(table: &'static str, flat: &[f64], width: usize) -> Result<(), EnvError> {
    for (row, chunk) in flat.chunks(width).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || chunk.iter().any(|&p| p < 0.0) {
            return Err(EnvError::BadRowSum { table, row, sum });
        }
    }
    Ok(())
}

/// Samples a tabular model step by step, emitting one-hot observations.
pub struct TabularEnv {
    model: FinitePomdp,
    state: usize,
    steps: usize,
    done: bool,
    started: bool,
    last_obs_index: usize,
}

impl TabularEnv {
    pub fn new(model: FinitePomdp) -> Self {
        TabularEnv {
            model,
            state: 0,
            steps: 0,
            done: true,
            started: false,
            last_obs_index: 0,
        }
    }

    pub fn model(&self) -> &FinitePomdp {
        &self.model
    }

    pub fn last_obs_index(&self) -> usize {
        self.last_obs_index
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn emit(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let o = sample_index(self.model.emission_row(self.state), rng);
        self.last_obs_index = o;
        let mut v = vec![0.0; self.model.n_observations];
        v[o] = 1.0;
        v
    }
}

impl Env for TabularEnv {
    fn obs_dim(&self) -> usize {
        self.model.n_observations
    }

    fn n_actions(&self) -> usize {
        self.model.n_actions
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = sample_index(&self.model.initial, rng);
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.emit(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if self.done || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        if action >= self.model.n_actions {
            return Err(EnvError::ActionOutOfRange {
                action,
                n_actions: self.model.n_actions,
            });
        }
        let reward = self.model.reward(self.state, action);
        self.state = sample_index(self.model.transition_row(self.state, action), rng);
        self.steps += 1;
        self.done = self.steps >= self.model.horizon;
        let obs = self.emit(rng);
        Ok(Step {
            obs,
            reward,
            done: self.done,
        })
    }
}

/// Seven states in a chain, two deterministic move actions, and three
/// deterministic observations: left end, right end, or middle. Moving
/// past an end leaves the state unchanged. Reward 1 for any action taken
/// at the right end, 0 elsewhere.
pub fn make_load_unload() -> FinitePomdp {
    let n = 7;
    let mut transition = vec![0.0; n * 2 * n];
    for s in 0..n {
        for (a, delta) in [(0usize, -1isize), (1, 1)] {
            let next = (s as isize + delta).clamp(0, n as isize - 1) as usize;
            transition[(s * 2 + a) * n + next] = 1.0;
        }
    }
    let mut emission = vec![0.0; n * 3];
    for s in 0..n {
        let o = if s == 0 {
            0
        } else if s == n - 1 {
            1
        } else {
            2
        };
        emission[s * 3 + o] = 1.0;
    }
    let mut reward_mean = vec![0.0; n * 2];
    reward_mean[(n - 1) * 2] = 1.0;
    reward_mean[(n - 1) * 2 + 1] = 1.0;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    FinitePomdp {
        n_states: n,
        n_actions: 2,
        n_observations: 3,
        transition,
        emission,
        reward_mean,
        initial,
        gamma: 0.99,
        horizon: 200,
    }
}

/// Size caps for the random model generator.
#[derive(Debug, Clone, Copy)]
pub struct PomdpSizes {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_observations: usize,
    pub horizon: usize,
    pub deterministic: bool,
}

impl PomdpSizes {
    pub fn small(deterministic: bool) -> Self {
        PomdpSizes {
            n_states: 4,
            n_actions: 2,
            n_observations: 3,
            horizon: 3,
            deterministic,
        }
    }
}

/// Draws a valid random model within the given size caps; with the
/// deterministic flag every probability row is one-hot.
pub fn random_finite_pomdp(rng: &mut ChaCha8Rng, sizes: PomdpSizes) -> FinitePomdp {
    assert!(sizes.n_states >= 1 && sizes.n_states <= 6);
    assert!(sizes.n_actions >= 1 && sizes.n_actions <= 3);
    assert!(sizes.n_observations >= 1 && sizes.n_observations <= 4);
    assert!(sizes.horizon >= 1 && sizes.horizon <= 5);
    let row = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        if sizes.deterministic {
            let mut v = vec![0.0; n];
            v[rng.gen_range(0..n)] = 1.0;
            v
        } else {
            // Exponential draws normalized: a flat Dirichlet sample.
            let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
            let total: f64 = raw.iter().sum();
            let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let drift: f64 = 1.0 - v.iter().sum::<f64>();
            v[0] += drift;
            v
        }
    };
    let mut transition = Vec::new();
    for _ in 0..sizes.n_states * sizes.n_actions {
        transition.extend(row(sizes.n_states, rng));
    }
    let mut emission = Vec::new();
    for _ in 0..sizes.n_states {
        emission.extend(row(sizes.n_observations, rng));
    }
    let reward_mean: Vec<f64> = (0..sizes.n_states * sizes.n_actions)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let initial = row(sizes.n_states, rng);
    FinitePomdp {
        n_states: sizes.n_states,
        n_actions: sizes.n_actions,
        n_observations: sizes.n_observations,
        transition,
        emission,
        reward_mean,
        initial,
        gamma: 0.9,
        horizon: sizes.horizon,
    }
}
