//! The training loop: environment interaction with window-stacked
//! histories, uniform replay, periodic greedy evaluation, and latent
//! rank telemetry.

use rand_chacha::ChaCha8Rng;

use crate::envs::{Env, Featurizer};
use crate::numkit::{matrix_rank_estimate, Mat};

use super::{AgentError, AgentConfig, DiscreteAgent, DiscreteBatch, ReplayBuffer, Transition};

/// Builds a fresh environment; called once for training and once per
/// evaluation round.
pub type EnvFactory = Box<dyn Fn() -> Box<dyn Env>>;

pub struct TrainSetup {
    pub config: AgentConfig,
    pub make_env: EnvFactory,
    pub budget_steps: usize,
    /// Episodes are truncated (without a terminal flag) after this
    /// many actions.
    pub episode_cap: usize,
    /// An evaluation episode counts as a success when its return
    /// exceeds this.
    pub success_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub step: usize,
    pub eval_return: f64,
    pub success_rate: f64,
    pub rl_loss: f64,
    pub aux_loss: f64,
    pub est_rank: f64,
    pub epsilon_or_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn final_row(&self) -> Option<&RecordRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,eval_return,success_rate,rl_loss,aux_loss,est_rank,epsilon_or_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.step, r.eval_return, r.success_rate, r.rl_loss, r.aux_loss, r.est_rank,
                r.epsilon_or_std
            ));
        }
        out
    }
}

/// Per-episode history, rebuilt at every reset so window features
/// never leak across episodes.
struct History {
    observations: Vec<Vec<f64>>,
    actions: Vec<usize>,
}

fn sample_batch(
    replay: &ReplayBuffer,
    config: &AgentConfig,
    feature_dim: usize,
    raw_obs_dim: usize,
    n_actions: usize,
    rng: &mut ChaCha8Rng,
) -> DiscreteBatch {
    let idx = replay.sample_indices(config.batch_size, rng);
    let n = idx.len();
    let mut obs = Vec::with_capacity(n * feature_dim);
    let mut next_obs1 = Vec::with_capacity(n * feature_dim);
    let mut next_obs_raw = Vec::with_capacity(n * raw_obs_dim);
    let mut next_obs_n = Vec::with_capacity(n * feature_dim);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut nstep_return = Vec::with_capacity(n);
    let mut nstep_weight = Vec::with_capacity(n);
    for &i in &idx {
        let t = replay.get(i);
        let (ret, last, m, terminal) = replay.n_step(i, config.n_step, config.gamma);
        obs.extend_from_slice(&t.obs);
        next_obs1.extend_from_slice(&t.next_obs);
        next_obs_raw.extend_from_slice(&t.next_obs_raw);
        next_obs_n.extend_from_slice(&replay.get(last).next_obs);
        actions.push(t.action);
        rewards.push(t.reward);
        nstep_return.push(ret);
        nstep_weight.push(if terminal {
            0.0
        } else {
            config.gamma.powi(m as i32)
        });
    }
    DiscreteBatch {
        obs: Mat::from_vec(n, feature_dim, obs),
        actions,
        rewards,
        next_obs1: Mat::from_vec(n, feature_dim, next_obs1),
        next_obs_raw: Mat::from_vec(n, raw_obs_dim, next_obs_raw),
        nstep_return,
        nstep_weight,
        next_obs_n: Mat::from_vec(n, feature_dim, next_obs_n),
        n_actions,
    }
}

fn evaluate_policy(
    agent: &DiscreteAgent,
    setup: &TrainSetup,
    featurizer: &Featurizer,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), AgentError> {
    let episodes = setup.config.eval_episodes.max(1);
    let mut total = 0.0;
    let mut successes = 0usize;
    for _ in 0..episodes {
        let mut env = (setup.make_env)();
        let mut hist = History {
            observations: vec![env.reset(rng)],
            actions: Vec::new(),
        };
        let mut ep_return = 0.0;
        for t in 0..setup.episode_cap {
            let features = featurizer.window_stack(&hist.observations, &hist.actions, t);
            let action = agent.greedy_action(&features);
            let step = env.step(action, rng)?;
            ep_return += step.reward;
            hist.actions.push(action);
            hist.observations.push(step.obs);
            if step.done {
                break;
            }
        }
        total += ep_return;
        if ep_return > setup.success_threshold {
            successes += 1;
        }
    }
    Ok((
        total / episodes as f64,
        successes as f64 / episodes as f64,
    ))
}

/// Estimated rank of the latent representation over a sample of
/// stored feature windows.
fn latent_rank(
    agent: &DiscreteAgent,
    replay: &ReplayBuffer,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if replay.is_empty() {
        return 0.0;
    }
    let n = replay.len().min(512);
    let idx = replay.sample_indices(n, rng);
    let d = agent.config.latent_dim;
    let mut vals = Vec::with_capacity(n * d);
    for &i in &idx {
        vals.extend_from_slice(&agent.encode_row(&replay.get(i).obs));
    }
    let z = Mat::from_vec(n, d, vals);
    matrix_rank_estimate(&z, 1e-2, 1e-2).map_or(f64::NAN, |r| r as f64)
}

/// Run one seed to completion: act, store, update, and append a
/// telemetry row every `eval_every` steps and at the final step.
pub fn train(setup: &TrainSetup, rng: &mut ChaCha8Rng) -> Result<RunRecord, AgentError> {
    let mut record = RunRecord::default();
    if setup.budget_steps == 0 {
        return Ok(record);
    }
    let config = &setup.config;
    let mut env = (setup.make_env)();
    let raw_obs_dim = env.obs_dim();
    let n_actions = env.n_actions();
    let featurizer = Featurizer::WindowStack {
        k: config.window,
        n_obs_features: raw_obs_dim,
        n_actions,
    };
    let feature_dim = featurizer.output_dim();
    let mut agent = DiscreteAgent::new(config.clone(), feature_dim, n_actions, raw_obs_dim, rng)?;
    let mut replay = ReplayBuffer::new(config.replay_capacity);

    let mut episode: u64 = 0;
    let mut hist = History {
        observations: vec![env.reset(rng)],
        actions: Vec::new(),
    };
    let mut ep_t = 0usize;
    let mut rl_loss = f64::NAN;
    let mut aux_loss = f64::NAN;

    for step in 1..=setup.budget_steps {
        let features = featurizer.window_stack(&hist.observations, &hist.actions, ep_t);
        let action = agent.exploration_action(&features, step, rng);
        let out = env.step(action, rng)?;
        hist.actions.push(action);
        hist.observations.push(out.obs.clone());
        ep_t += 1;
        let next_features = featurizer.window_stack(&hist.observations, &hist.actions, ep_t);
        replay.push(Transition {
            obs: features,
            action,
            reward: out.reward,
            next_obs: next_features,
            next_obs_raw: out.obs,
            done: out.done,
            episode,
            seq: 0,
        });
        if out.done || ep_t >= setup.episode_cap {
            episode += 1;
            hist = History {
                observations: vec![env.reset(rng)],
                actions: Vec::new(),
            };
            ep_t = 0;
        }

        if step >= config.warmup
            && step % config.update_every == 0
            && replay.len() >= config.batch_size
        {
            let batch = sample_batch(&replay, config, feature_dim, raw_obs_dim, n_actions, rng);
            let breakdown = agent.update(&batch)?;
            rl_loss = breakdown
                .components
                .iter()
                .find(|(k, _)| k == "rl")
                .map_or(f64::NAN, |(_, v)| *v);
            aux_loss = breakdown
                .components
                .iter()
                .filter(|(k, _)| k != "rl" && k != "target")
                .map(|(_, v)| v)
                .sum();
        }

        if step % config.eval_every == 0 || step == setup.budget_steps {
            let (eval_return, success_rate) = evaluate_policy(&agent, setup, &featurizer, rng)?;
            record.rows.push(RecordRow {
                step,
                eval_return,
                success_rate,
                rl_loss,
                aux_loss,
                est_rank: latent_rank(&agent, &replay, rng),
                epsilon_or_std: config.exploration.value(step),
            });
        }
    }
    Ok(record)
}
