//! Double-Q agent over window-encoded histories with optional
//! latent-prediction auxiliary heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numkit::{Graph, Mat, NodeId};
use crate::objectives::{
    ema_update, one_hot_actions, Encoder, Head, LossBreakdown, Net, TargetMode,
};

use super::adam::{clip_gradients, Adam, MAX_GRAD_NORM};
use super::{AgentConfig, AgentError, AgentVariant};

/// Minibatch for a discrete update. `next_obs1` is the window one step
/// ahead (the self-prediction target); `next_obs_n` is the window after
/// the n-step jump (the TD bootstrap point).
#[derive(Debug, Clone)]
pub struct DiscreteBatch {
    pub obs: Mat,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs1: Mat,
    pub next_obs_raw: Mat,
    pub nstep_return: Vec<f64>,
    /// γ^m per row, zeroed where the window hit a terminal.
    pub nstep_weight: Vec<f64>,
    pub next_obs_n: Mat,
    pub n_actions: usize,
}

pub struct DiscreteAgent {
    pub config: AgentConfig,
    pub n_actions: usize,
    pub encoder: Encoder,
    pub target_encoder: Encoder,
    pub q1: Net,
    pub q2: Net,
    pub q1_target: Net,
    pub q2_target: Net,
    pub dynamics: Option<Encoder>,
    pub predictor: Option<Encoder>,
    pub reward_head: Option<Net>,
    opt_encoder: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_dynamics: Option<Adam>,
    opt_predictor: Option<Adam>,
    opt_reward: Option<Adam>,
    /// Updates skipped because a loss came out non-finite.
    pub incidents: usize,
    pub updates: usize,
}

impl DiscreteAgent {
    pub fn new(
        config: AgentConfig,
        feature_dim: usize,
        n_actions: usize,
        raw_obs_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let d = config.latent_dim;
        let hid = config.hidden;
        let head = if config.variant.gaussian() {
            Head::DiagonalGaussian
        } else {
            Head::Deterministic
        };
        let enc_out = match head {
            Head::Deterministic => d,
            Head::DiagonalGaussian => 2 * d,
        };
        let encoder = Encoder::new(Net::mlp(feature_dim, hid, enc_out, rng), head, d)
            .expect("consistent dims");
        let target_encoder = encoder.clone();
        let q1 = Net::mlp(d, hid, n_actions, rng);
        let q2 = Net::mlp(d, hid, n_actions, rng);
        let dynamics = config.variant.uses_zp().then(|| {
            Encoder::new(Net::mlp(d + n_actions, hid, enc_out, rng), head, d)
                .expect("consistent dims")
        });
        let predictor = config.variant.uses_op().then(|| {
            Encoder::new(
                Net::mlp(d + n_actions, hid, raw_obs_dim, rng),
                Head::Deterministic,
                raw_obs_dim,
            )
            .expect("consistent dims")
        });
        let reward_head = config
            .variant
            .phased()
            .then(|| Net::mlp(d + n_actions, hid, 1, rng));
        let lr = config.learning_rate;
        Ok(DiscreteAgent {
            opt_encoder: Adam::new(&encoder.net.w, lr),
            opt_q1: Adam::new(&q1.w, lr),
            opt_q2: Adam::new(&q2.w, lr),
            opt_dynamics: dynamics.as_ref().map(|n| Adam::new(&n.net.w, lr)),
            opt_predictor: predictor.as_ref().map(|n| Adam::new(&n.net.w, lr)),
            opt_reward: reward_head.as_ref().map(|n| Adam::new(&n.w, lr)),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            config,
            n_actions,
            encoder,
            target_encoder,
            q1,
            q2,
            dynamics,
            predictor,
            reward_head,
            incidents: 0,
            updates: 0,
        })
    }

    /// Latent for a single feature row, through the online encoder.
    pub fn encode_row(&self, features: &[f64]) -> Vec<f64> {
        let x = Mat::from_vec(1, features.len(), features.to_vec());
        let (m, _, _) = self.encoder.forward_plain(&x);
        m.data().to_vec()
    }

    /// Mean of the two Q heads on one feature row.
    pub fn q_values(&self, features: &[f64]) -> Vec<f64> {
        let x = Mat::from_vec(1, features.len(), features.to_vec());
        let (z, _, _) = self.encoder.forward_plain(&x);
        let a = self.q1.forward_plain(&z);
        let b = self.q2.forward_plain(&z);
        (0..self.n_actions)
            .map(|j| 0.5 * (a.get(0, j) + b.get(0, j)))
            .collect()
    }

    pub fn greedy_action(&self, features: &[f64]) -> usize {
        argmax(&self.q_values(features))
    }

    /// ε-greedy with the configured schedule at environment step
    /// `step`.
    pub fn exploration_action(
        &self,
        features: &[f64],
        step: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let eps = self.config.exploration.value(step);
        if rng.gen::<f64>() < eps {
            rng.gen_range(0..self.n_actions)
        } else {
            self.greedy_action(features)
        }
    }

    /// Double-Q n-step targets, via online argmax and the minimum of
    /// the two target heads.
    fn td_targets(&self, batch: &DiscreteBatch) -> Vec<f64> {
        let (z_online, _, _) = self.encoder.forward_plain(&batch.next_obs_n);
        let q_sel = self.q1.forward_plain(&z_online);
        let (z_tar, _, _) = self.target_encoder.forward_plain(&batch.next_obs_n);
        let q1t = self.q1_target.forward_plain(&z_tar);
        let q2t = self.q2_target.forward_plain(&z_tar);
        (0..batch.obs.rows())
            .map(|i| {
                let row: Vec<f64> = (0..self.n_actions).map(|j| q_sel.get(i, j)).collect();
                let a = argmax(&row);
                let boot = q1t.get(i, a).min(q2t.get(i, a));
                batch.nstep_return[i] + batch.nstep_weight[i] * boot
            })
            .collect()
    }

    fn masked_sq_sum(g: &mut Graph, q: NodeId, mask: NodeId, y_masked: NodeId) -> NodeId {
        let picked = g.mul(q, mask);
        let err = g.sub(picked, y_masked);
        let sq = g.square(err);
        g.sum_all(sq)
    }

    /// One joint gradient step on the TD loss plus the configured
    /// auxiliary losses. Skips the parameter update (and counts an
    /// incident) if any loss is non-finite.
    pub fn update(&mut self, batch: &DiscreteBatch) -> Result<LossBreakdown, AgentError> {
        let n = batch.obs.rows();
        if n == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let nf = n as f64;
        let d = self.config.latent_dim;
        let targets = self.td_targets(batch);
        let mask = one_hot_actions(&batch.actions, self.n_actions);
        let mut y_masked = Mat::zeros(n, self.n_actions);
        for (i, &a) in batch.actions.iter().enumerate() {
            y_masked.set(i, a, targets[i]);
        }

        let mut g = Graph::new();
        let x = g.input(batch.obs.clone());
        let (enc, enc_params) = self.encoder.emit(&mut g, x);
        // Phased variants never let RL gradients reach the encoder.
        let z_q = if self.config.variant.phased() {
            let (plain, _, _) = self.encoder.forward_plain(&batch.obs);
            g.input(plain)
        } else {
            enc.mean
        };
        let (q1n, q1_params) = self.q1.emit(&mut g, z_q);
        let (q2n, q2_params) = self.q2.emit(&mut g, z_q);
        let mask_node = g.input(mask.clone());
        let y_node = g.input(y_masked);
        let s1 = Self::masked_sq_sum(&mut g, q1n, mask_node, y_node);
        let s2 = Self::masked_sq_sum(&mut g, q2n, mask_node, y_node);
        let s12 = g.add(s1, s2);
        let rl = g.scale(s12, 1.0 / nf);

        let a_node = g.input(mask);
        let za = g.concat_cols(enc.mean, a_node);
        let mut total = rl;
        let mut components: Vec<(String, f64)> = Vec::new();
        let mut dyn_params: Vec<NodeId> = Vec::new();
        let mut pred_params: Vec<NodeId> = Vec::new();
        let mut rp_params: Vec<NodeId> = Vec::new();

        if let Some(dynamics) = &self.dynamics {
            let lambda = self.config.lambda
                / if self.config.normalize_lambda {
                    d as f64
                } else {
                    1.0
                };
            let (pred, params) = dynamics.emit(&mut g, za);
            dyn_params = params;
            let target = match self.config.target {
                TargetMode::Online => {
                    let xp = g.input(batch.next_obs1.clone());
                    self.encoder.emit_with(&mut g, xp, &enc_params)
                }
                TargetMode::Detached => {
                    let (m, ls, _) = self.encoder.forward_plain(&batch.next_obs1);
                    let mean = g.input(m);
                    let log_std = ls.map(|v| g.input(v));
                    crate::objectives::EncoderNodes { mean, log_std }
                }
                TargetMode::Ema { .. } => {
                    let (m, ls, _) = self.target_encoder.forward_plain(&batch.next_obs1);
                    let mean = g.input(m);
                    let log_std = ls.map(|v| g.input(v));
                    crate::objectives::EncoderNodes { mean, log_std }
                }
            };
            let aux_sum = match self.config.variant {
                AgentVariant::ZpFkl => {
                    let e = kl_entries(&mut g, (target.mean, target.log_std.unwrap()),
                        (pred.mean, pred.log_std.unwrap()));
                    g.sum_all(e)
                }
                AgentVariant::ZpRkl => {
                    let e = kl_entries(&mut g, (pred.mean, pred.log_std.unwrap()),
                        (target.mean, target.log_std.unwrap()));
                    g.sum_all(e)
                }
                _ => {
                    let err = g.sub(pred.mean, target.mean);
                    let sq = g.square(err);
                    g.sum_all(sq)
                }
            };
            let aux = g.scale(aux_sum, lambda / nf);
            components.push(("zp".to_string(), g.scalar(aux)));
            total = g.add(total, aux);
        }
        if let Some(predictor) = &self.predictor {
            let lambda = self.config.lambda
                / if self.config.normalize_lambda {
                    batch.next_obs_raw.cols() as f64
                } else {
                    1.0
                };
            let (pred, params) = predictor.emit(&mut g, za);
            pred_params = params;
            let t = g.input(batch.next_obs_raw.clone());
            let err = g.sub(pred.mean, t);
            let sq = g.square(err);
            let s = g.sum_all(sq);
            let aux = g.scale(s, lambda / nf);
            components.push(("op".to_string(), g.scalar(aux)));
            total = g.add(total, aux);
        }
        if let Some(head) = &self.reward_head {
            let (pred, params) = head.emit(&mut g, za);
            rp_params = params;
            let r = g.input(Mat::from_vec(n, 1, batch.rewards.clone()));
            let err = g.sub(pred, r);
            let sq = g.square(err);
            let s = g.sum_all(sq);
            let rp = g.scale(s, 1.0 / nf);
            components.push(("rp".to_string(), g.scalar(rp)));
            total = g.add(total, rp);
        }
        components.insert(0, ("rl".to_string(), g.scalar(rl)));
        let total_value = g.scalar(total);

        let mut breakdown = LossBreakdown {
            total: total_value,
            components,
            grad_norms: Vec::new(),
            log_std_clamped: false,
        };
        if !total_value.is_finite() {
            self.incidents += 1;
            return Ok(breakdown);
        }
        g.backward(total)?;
        let collect = |g: &Graph, ids: &[NodeId]| -> Vec<Mat> {
            ids.iter().map(|&p| g.grad(p).clone()).collect()
        };
        let mut enc_g = collect(&g, &enc_params);
        let mut q1_g = collect(&g, &q1_params);
        let mut q2_g = collect(&g, &q2_params);
        let mut dyn_g = collect(&g, &dyn_params);
        let mut pred_g = collect(&g, &pred_params);
        let mut rp_g = collect(&g, &rp_params);
        clip_gradients(
            &mut [
                &mut enc_g, &mut q1_g, &mut q2_g, &mut dyn_g, &mut pred_g, &mut rp_g,
            ],
            MAX_GRAD_NORM,
        );
        breakdown
            .grad_norms
            .push(("encoder".to_string(), group_norm(&enc_g)));
        breakdown.grad_norms.push((
            "critic".to_string(),
            (group_norm(&q1_g).powi(2) + group_norm(&q2_g).powi(2)).sqrt(),
        ));
        self.opt_encoder.step(&mut self.encoder.net.w, &enc_g);
        self.opt_q1.step(&mut self.q1.w, &q1_g);
        self.opt_q2.step(&mut self.q2.w, &q2_g);
        if let (Some(net), Some(opt)) = (&mut self.dynamics, &mut self.opt_dynamics) {
            opt.step(&mut net.net.w, &dyn_g);
        }
        if let (Some(net), Some(opt)) = (&mut self.predictor, &mut self.opt_predictor) {
            opt.step(&mut net.net.w, &pred_g);
        }
        if let (Some(net), Some(opt)) = (&mut self.reward_head, &mut self.opt_reward) {
            opt.step(&mut net.w, &rp_g);
        }
        let mix = self.config.target_mix;
        ema_update(&mut self.target_encoder.net, &self.encoder.net, mix).expect("same shapes");
        ema_update(&mut self.q1_target, &self.q1, mix).expect("same shapes");
        ema_update(&mut self.q2_target, &self.q2, mix).expect("same shapes");
        self.updates += 1;
        Ok(breakdown)
    }
}

fn group_norm(grads: &[Mat]) -> f64 {
    grads
        .iter()
        .map(|m| {
            let f = m.frobenius_norm();
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn kl_entries(g: &mut Graph, p: (NodeId, NodeId), q: (NodeId, NodeId)) -> NodeId {
    let (mp, lp) = p;
    let (mq, lq) = q;
    let dl = g.sub(lq, lp);
    let dl = g.add_const(dl, -0.5);
    let two_lp = g.scale(lp, 2.0);
    let var_p = g.exp(two_lp);
    let dm = g.sub(mp, mq);
    let dm2 = g.square(dm);
    let num = g.add(var_p, dm2);
    let neg_two_lq = g.scale(lq, -2.0);
    let inv_var_q = g.exp(neg_two_lq);
    let ratio = g.mul(num, inv_var_q);
    let half = g.scale(ratio, 0.5);
    g.add(dl, half)
}
