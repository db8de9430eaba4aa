//! Deterministic actor-critic backbone for continuous actions, with
//! the optional next-latent auxiliary head.

use rand_chacha::ChaCha8Rng;

use crate::numkit::{Graph, Mat, NodeId, StreamRng};
use crate::objectives::{ema_update, Encoder, Head, LossBreakdown, Net, TargetMode};

use super::adam::{clip_gradients, Adam, MAX_GRAD_NORM};
use super::{AgentConfig, AgentError};

#[derive(Debug, Clone)]
pub struct ContinuousBatch {
    pub obs: Mat,
    /// N x action_dim, actions in [-1, 1].
    pub actions: Mat,
    pub rewards: Vec<f64>,
    pub next_obs: Mat,
    /// 1.0 where the transition ended the episode.
    pub done: Vec<f64>,
}

pub struct ContinuousAgent {
    pub config: AgentConfig,
    pub action_dim: usize,
    pub encoder: Encoder,
    pub target_encoder: Encoder,
    pub actor: Net,
    pub actor_target: Net,
    pub critic: Net,
    pub critic_target: Net,
    pub dynamics: Option<Encoder>,
    opt_encoder: Adam,
    opt_actor: Adam,
    opt_critic: Adam,
    opt_dynamics: Option<Adam>,
    pub incidents: usize,
}

/// Evaluated joint loss with per-group gradients, before any update.
pub struct ContinuousEval {
    pub breakdown: LossBreakdown,
    pub encoder_grad: Vec<Mat>,
    pub actor_grad: Vec<Mat>,
    pub critic_grad: Vec<Mat>,
    pub dynamics_grad: Vec<Mat>,
}

impl ContinuousAgent {
    pub fn new(
        config: AgentConfig,
        feature_dim: usize,
        action_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let d = config.latent_dim;
        let hid = config.hidden;
        let encoder = Encoder::new(Net::mlp(feature_dim, hid, d, rng), Head::Deterministic, d)
            .expect("consistent dims");
        let actor = Net::mlp(d, hid, action_dim, rng);
        let critic = Net::mlp(d + action_dim, hid, 1, rng);
        let dynamics = config.variant.uses_zp().then(|| {
            Encoder::new(Net::mlp(d + action_dim, hid, d, rng), Head::Deterministic, d)
                .expect("consistent dims")
        });
        let lr = config.learning_rate;
        Ok(ContinuousAgent {
            opt_encoder: Adam::new(&encoder.net.w, lr),
            opt_actor: Adam::new(&actor.w, lr),
            opt_critic: Adam::new(&critic.w, lr),
            opt_dynamics: dynamics.as_ref().map(|n| Adam::new(&n.net.w, lr)),
            target_encoder: encoder.clone(),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            config,
            action_dim,
            encoder,
            actor,
            critic,
            dynamics,
            incidents: 0,
        })
    }

    fn actor_plain(&self, net: &Net, z: &Mat) -> Mat {
        net.forward_plain(z).map(f64::tanh)
    }

    /// Deterministic policy action for one feature row, with optional
    /// clipped Gaussian exploration noise.
    pub fn policy_action(
        &self,
        features: &[f64],
        noise_std: f64,
        noise_clip: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let x = Mat::from_vec(1, features.len(), features.to_vec());
        let (z, _, _) = self.encoder.forward_plain(&x);
        let a = self.actor_plain(&self.actor, &z);
        (0..self.action_dim)
            .map(|j| {
                let noise = (noise_std * StreamRng::standard_normal(rng))
                    .clamp(-noise_clip, noise_clip);
                (a.get(0, j) + noise).clamp(-1.0, 1.0)
            })
            .collect()
    }

    /// Build the joint loss and read gradients without touching the
    /// parameters. The actor term evaluates a frozen copy of the
    /// critic on a detached latent, so neither the critic nor the
    /// encoder receives gradient from it.
    pub fn evaluate(&self, batch: &ContinuousBatch) -> Result<ContinuousEval, AgentError> {
        let n = batch.obs.rows();
        if n == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let nf = n as f64;
        let gamma = self.config.gamma;
        // Bootstrapped targets through the target networks.
        let (z_next_t, _, _) = self.target_encoder.forward_plain(&batch.next_obs);
        let a_next = self.actor_plain(&self.actor_target, &z_next_t);
        let q_next = self
            .critic_target
            .forward_plain(&z_next_t.hcat(&a_next));
        let y = Mat::from_fn(n, 1, |i, _| {
            batch.rewards[i] + gamma * (1.0 - batch.done[i]) * q_next.get(i, 0)
        });

        let mut g = Graph::new();
        let x = g.input(batch.obs.clone());
        let (enc, enc_params) = self.encoder.emit(&mut g, x);
        let a_in = g.input(batch.actions.clone());
        let zq = g.concat_cols(enc.mean, a_in);
        let (q, critic_params) = self.critic.emit(&mut g, zq);
        let y_in = g.input(y);
        let td = g.sub(q, y_in);
        let td_sq = g.square(td);
        let td_sum = g.sum_all(td_sq);
        let critic_loss = g.scale(td_sum, 1.0 / nf);

        // Actor term on detached latents against frozen copies.
        let (z_plain, _, _) = self.encoder.forward_plain(&batch.obs);
        let z_det = g.input(z_plain);
        let (raw_a, actor_params) = self.actor.emit(&mut g, z_det);
        let a_pi = g.tanh(raw_a);
        let (z_bar, _, _) = self.target_encoder.forward_plain(&batch.obs);
        let z_bar_in = g.input(z_bar);
        let za_pi = g.concat_cols(z_bar_in, a_pi);
        let frozen: Vec<NodeId> = self.critic.w.iter().map(|m| g.input(m.clone())).collect();
        let q_pi = self.critic.emit_with(&mut g, za_pi, &frozen);
        let q_pi_sum = g.sum_all(q_pi);
        let actor_loss = g.scale(q_pi_sum, -1.0 / nf);

        let rl = g.add(critic_loss, actor_loss);
        let mut total = rl;
        let mut components = vec![("rl".to_string(), g.scalar(rl))];
        let mut dyn_params: Vec<NodeId> = Vec::new();
        if let Some(dynamics) = &self.dynamics {
            let lambda = self.config.lambda
                / if self.config.normalize_lambda {
                    self.config.latent_dim as f64
                } else {
                    1.0
                };
            let za = g.concat_cols(enc.mean, a_in);
            let (pred, params) = dynamics.emit(&mut g, za);
            dyn_params = params;
            let target = match self.config.target {
                TargetMode::Online => {
                    let xp = g.input(batch.next_obs.clone());
                    self.encoder.emit_with(&mut g, xp, &enc_params).mean
                }
                TargetMode::Detached => {
                    let (m, _, _) = self.encoder.forward_plain(&batch.next_obs);
                    g.input(m)
                }
                TargetMode::Ema { .. } => {
                    let (m, _, _) = self.target_encoder.forward_plain(&batch.next_obs);
                    g.input(m)
                }
            };
            let err = g.sub(pred.mean, target);
            let sq = g.square(err);
            let s = g.sum_all(sq);
            let aux = g.scale(s, lambda / nf);
            components.push(("zp".to_string(), g.scalar(aux)));
            total = g.add(total, aux);
        }
        let total_value = g.scalar(total);
        let breakdown = LossBreakdown {
            total: total_value,
            components,
            grad_norms: Vec::new(),
            log_std_clamped: false,
        };
        if !total_value.is_finite() {
            return Ok(ContinuousEval {
                breakdown,
                encoder_grad: Vec::new(),
                actor_grad: Vec::new(),
                critic_grad: Vec::new(),
                dynamics_grad: Vec::new(),
            });
        }
        g.backward(total)?;
        let collect = |ids: &[NodeId]| -> Vec<Mat> {
            ids.iter().map(|&p| g.grad(p).clone()).collect()
        };
        Ok(ContinuousEval {
            encoder_grad: collect(&enc_params),
            actor_grad: collect(&actor_params),
            critic_grad: collect(&critic_params),
            dynamics_grad: collect(&dyn_params),
            breakdown,
        })
    }

    /// One joint gradient step on encoder, dynamics, actor, and
    /// critic. Skips the update on a non-finite loss.
    pub fn update_minimalist(
        &mut self,
        batch: &ContinuousBatch,
    ) -> Result<LossBreakdown, AgentError> {
        let mut eval = self.evaluate(batch)?;
        if !eval.breakdown.total.is_finite() {
            self.incidents += 1;
            return Ok(eval.breakdown);
        }
        clip_gradients(
            &mut [
                &mut eval.encoder_grad,
                &mut eval.actor_grad,
                &mut eval.critic_grad,
                &mut eval.dynamics_grad,
            ],
            MAX_GRAD_NORM,
        );
        self.opt_encoder
            .step(&mut self.encoder.net.w, &eval.encoder_grad);
        self.opt_actor.step(&mut self.actor.w, &eval.actor_grad);
        self.opt_critic.step(&mut self.critic.w, &eval.critic_grad);
        if let (Some(net), Some(opt)) = (&mut self.dynamics, &mut self.opt_dynamics) {
            opt.step(&mut net.net.w, &eval.dynamics_grad);
        }
        let mix = self.config.target_mix;
        ema_update(&mut self.target_encoder.net, &self.encoder.net, mix).expect("same shapes");
        ema_update(&mut self.actor_target, &self.actor, mix).expect("same shapes");
        ema_update(&mut self.critic_target, &self.critic, mix).expect("same shapes");
        Ok(eval.breakdown)
    }
}
