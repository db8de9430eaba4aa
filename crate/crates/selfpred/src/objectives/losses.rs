//! Practical minibatch losses, built as differentiation tapes.

use rand_chacha::ChaCha8Rng;

use crate::numkit::{Graph, Mat, NodeId, StreamRng};

use super::net::{DynamicsModel, Encoder, Head, Net, LOG_STD_MIN};
use super::{ObjectiveError, TargetMode};

/// Transition minibatch; `obs` and `next_obs` are featurized history
/// windows, one row per datum.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Mat,
    pub actions: Vec<usize>,
    pub next_obs: Mat,
    pub rewards: Vec<f64>,
    pub n_actions: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn one_hot_actions(actions: &[usize], n_actions: usize) -> Mat {
    let mut m = Mat::zeros(actions.len(), n_actions);
    for (i, &a) in actions.iter().enumerate() {
        assert!(a < n_actions);
        m.set(i, a, 1.0);
    }
    m
}

/// Scalar loss with named components and per-group gradient norms.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub components: Vec<(String, f64)>,
    pub grad_norms: Vec<(String, f64)>,
    pub log_std_clamped: bool,
}

impl LossBreakdown {
    fn single(name: &str, value: f64) -> Self {
        LossBreakdown {
            total: value,
            components: vec![(name.to_string(), value)],
            grad_norms: Vec::new(),
            log_std_clamped: false,
        }
    }

    /// Weighted sum of parts; components keep their names with the
    /// weights folded in, so total always equals the component sum.
    pub fn combine(parts: &[(f64, &LossBreakdown)]) -> Self {
        let mut out = LossBreakdown {
            total: 0.0,
            components: Vec::new(),
            grad_norms: Vec::new(),
            log_std_clamped: false,
        };
        for (w, part) in parts {
            for (name, v) in &part.components {
                out.components.push((name.clone(), w * v));
                out.total += w * v;
            }
            out.grad_norms.extend(part.grad_norms.iter().cloned());
            out.log_std_clamped |= part.log_std_clamped;
        }
        out
    }
}

/// A loss tape plus the parameter nodes needed for gradient reads.
pub struct LossGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub encoder_params: Vec<NodeId>,
    pub model_params: Vec<NodeId>,
    pub log_std_clamped: bool,
}

/// Evaluated loss with gradients per parameter group.
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub encoder_grad: Vec<Mat>,
    pub model_grad: Vec<Mat>,
}

fn group_norm(grads: &[Mat]) -> f64 {
    grads
        .iter()
        .map(|g| {
            let n = g.frobenius_norm();
            n * n
        })
        .sum::<f64>()
        .sqrt()
}

fn finalize(
    mut lg: LossGraph,
    name: &str,
    online_target: bool,
) -> Result<LossOutput, ObjectiveError> {
    lg.graph.backward(lg.loss)?;
    let encoder_grad: Vec<Mat> = lg
        .encoder_params
        .iter()
        .map(|&p| lg.graph.grad(p).clone())
        .collect();
    let model_grad: Vec<Mat> = lg
        .model_params
        .iter()
        .map(|&p| lg.graph.grad(p).clone())
        .collect();
    let mut breakdown = LossBreakdown::single(name, lg.graph.scalar(lg.loss));
    breakdown.log_std_clamped = lg.log_std_clamped;
    breakdown
        .grad_norms
        .push(("encoder".to_string(), group_norm(&encoder_grad)));
    breakdown
        .grad_norms
        .push(("model".to_string(), group_norm(&model_grad)));
    if !online_target {
        // Stop-gradient target: its parameters never enter the tape.
        breakdown.grad_norms.push(("target".to_string(), 0.0));
    }
    Ok(LossOutput {
        breakdown,
        encoder_grad,
        model_grad,
    })
}

fn check_dims(encoder: &Encoder, model: &Encoder, batch: &Batch) -> Result<(), ObjectiveError> {
    if encoder.net.in_dim() != batch.obs.cols() {
        return Err(ObjectiveError::DimMismatch {
            expected: encoder.net.in_dim(),
            got: batch.obs.cols(),
        });
    }
    if batch.next_obs.cols() != batch.obs.cols() || batch.next_obs.rows() != batch.obs.rows() {
        return Err(ObjectiveError::ShapeMismatch);
    }
    let want = encoder.latent_dim + batch.n_actions;
    if model.net.in_dim() != want {
        return Err(ObjectiveError::DimMismatch {
            expected: want,
            got: model.net.in_dim(),
        });
    }
    Ok(())
}

/// Build the ℓ2 next-latent prediction tape:
/// mean over the batch of ‖g(f(h), a) − f̃(h')‖².
pub fn zp_l2_graph(
    encoder: &Encoder,
    model: &DynamicsModel,
    target: &Encoder,
    mode: TargetMode,
    batch: &Batch,
) -> Result<LossGraph, ObjectiveError> {
    if encoder.head != Head::Deterministic
        || model.head != Head::Deterministic
        || target.head != Head::Deterministic
    {
        return Err(ObjectiveError::WantsDeterministicHead);
    }
    check_dims(encoder, model, batch)?;
    let n = batch.len() as f64;
    let mut g = Graph::new();
    let x = g.input(batch.obs.clone());
    let (enc, enc_params) = encoder.emit(&mut g, x);
    let a = g.input(one_hot_actions(&batch.actions, batch.n_actions));
    let za = g.concat_cols(enc.mean, a);
    let (pred, model_params) = model.emit(&mut g, za);
    let next = if mode.is_online() {
        let xp = g.input(batch.next_obs.clone());
        encoder.emit_with(&mut g, xp, &enc_params).mean
    } else {
        g.input(target.forward_plain(&batch.next_obs).0)
    };
    let err = g.sub(pred.mean, next);
    let sq = g.square(err);
    let s = g.sum_all(sq);
    let loss = g.scale(s, 1.0 / n);
    Ok(LossGraph {
        graph: g,
        loss,
        encoder_params: enc_params,
        model_params,
        log_std_clamped: false,
    })
}

pub fn zp_loss_l2(
    encoder: &Encoder,
    model: &DynamicsModel,
    target: &Encoder,
    mode: TargetMode,
    batch: &Batch,
) -> Result<LossOutput, ObjectiveError> {
    let lg = zp_l2_graph(encoder, model, target, mode, batch)?;
    finalize(lg, "zp", mode.is_online())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    /// KL(target-next ‖ model prediction).
    Forward,
    /// KL(model prediction ‖ target-next).
    Reverse,
}

/// Elementwise KL entries between diagonal Gaussians given as
/// (mean, log-std) node pairs; sums to the batch KL.
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

/// Build the probabilistic next-latent tape: closed-form diagonal
/// Gaussian KL between the model prediction at a reparameterized
/// latent sample and the target-encoder distribution over f̃(h').
pub fn zp_kl_graph(
    encoder: &Encoder,
    model: &DynamicsModel,
    target: &Encoder,
    direction: KlDirection,
    mode: TargetMode,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<LossGraph, ObjectiveError> {
    if encoder.head != Head::DiagonalGaussian
        || model.head != Head::DiagonalGaussian
        || target.head != Head::DiagonalGaussian
    {
        return Err(ObjectiveError::WantsGaussianHead);
    }
    check_dims(encoder, model, batch)?;
    let n = batch.len() as f64;
    let d = encoder.latent_dim;
    let mut g = Graph::new();
    let x = g.input(batch.obs.clone());
    let (enc, enc_params) = encoder.emit(&mut g, x);
    let lp = enc.log_std.unwrap();
    let eps = g.input(Mat::from_fn(batch.len(), d, |_, _| {
        StreamRng::standard_normal(rng)
    }));
    let sigma = g.exp(lp);
    let noise = g.mul(sigma, eps);
    let z = g.add(enc.mean, noise);
    let a = g.input(one_hot_actions(&batch.actions, batch.n_actions));
    let za = g.concat_cols(z, a);
    let za_vals = g.value(za).clone();
    let (pred, model_params) = model.emit(&mut g, za);
    let model_dist = (pred.mean, pred.log_std.unwrap());
    let target_dist = if mode.is_online() {
        let xp = g.input(batch.next_obs.clone());
        let t = encoder.emit_with(&mut g, xp, &enc_params);
        (t.mean, t.log_std.unwrap())
    } else {
        let (mt, lt, _) = target.forward_plain(&batch.next_obs);
        (g.input(mt), g.input(lt.unwrap()))
    };
    let entries = match direction {
        KlDirection::Forward => kl_entries(&mut g, target_dist, model_dist),
        KlDirection::Reverse => kl_entries(&mut g, model_dist, target_dist),
    };
    let s = g.sum_all(entries);
    let loss = g.scale(s, 1.0 / n);
    let clamped = encoder.clamp_hit(&batch.obs)
        || target.clamp_hit(&batch.next_obs)
        || model.clamp_hit(&za_vals);
    Ok(LossGraph {
        graph: g,
        loss,
        encoder_params: enc_params,
        model_params,
        log_std_clamped: clamped,
    })
}

pub fn zp_loss_kl(
    encoder: &Encoder,
    model: &DynamicsModel,
    target: &Encoder,
    direction: KlDirection,
    mode: TargetMode,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<LossOutput, ObjectiveError> {
    let lg = zp_kl_graph(encoder, model, target, direction, mode, batch, rng)?;
    finalize(lg, "zp", mode.is_online())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpMetric {
    /// Squared error on the featurized observation vector.
    L2,
    /// Gaussian negative log-likelihood, shifted by the clamp floor so
    /// every per-dimension term is non-negative.
    Fkl,
}

/// Build the grounded next-observation tape: the predictor maps
/// (f(h), a) to the featurized o' with no bootstrapped target.
pub fn op_graph(
    encoder: &Encoder,
    predictor: &Encoder,
    batch: &Batch,
    targets: &Mat,
) -> Result<LossGraph, ObjectiveError> {
    let metric = match predictor.head {
        Head::Deterministic => OpMetric::L2,
        Head::DiagonalGaussian => OpMetric::Fkl,
    };
    if encoder.net.in_dim() != batch.obs.cols() {
        return Err(ObjectiveError::DimMismatch {
            expected: encoder.net.in_dim(),
            got: batch.obs.cols(),
        });
    }
    let want = encoder.latent_dim + batch.n_actions;
    if predictor.net.in_dim() != want {
        return Err(ObjectiveError::DimMismatch {
            expected: want,
            got: predictor.net.in_dim(),
        });
    }
    if predictor.latent_dim != targets.cols() || targets.rows() != batch.len() {
        return Err(ObjectiveError::DimMismatch {
            expected: predictor.latent_dim,
            got: targets.cols(),
        });
    }
    let n = batch.len() as f64;
    let mut g = Graph::new();
    let x = g.input(batch.obs.clone());
    // Gaussian encoders condition the predictor on the latent mean.
    let (enc, enc_params) = encoder.emit(&mut g, x);
    let a = g.input(one_hot_actions(&batch.actions, batch.n_actions));
    let za = g.concat_cols(enc.mean, a);
    let (pred, model_params) = predictor.emit(&mut g, za);
    let t = g.input(targets.clone());
    let loss = match metric {
        OpMetric::L2 => {
            let err = g.sub(pred.mean, t);
            let sq = g.square(err);
            let s = g.sum_all(sq);
            g.scale(s, 1.0 / n)
        }
        OpMetric::Fkl => {
            let l = pred.log_std.unwrap();
            let shifted = g.add_const(l, -LOG_STD_MIN);
            let err = g.sub(t, pred.mean);
            let sq = g.square(err);
            let neg_two_l = g.scale(l, -2.0);
            let inv_var = g.exp(neg_two_l);
            let quad = g.mul(sq, inv_var);
            let quad = g.scale(quad, 0.5);
            let entries = g.add(shifted, quad);
            let s = g.sum_all(entries);
            g.scale(s, 1.0 / n)
        }
    };
    let clamped = encoder.clamp_hit(&batch.obs);
    Ok(LossGraph {
        graph: g,
        loss,
        encoder_params: enc_params,
        model_params,
        log_std_clamped: clamped,
    })
}

pub fn op_loss(
    encoder: &Encoder,
    predictor: &Encoder,
    batch: &Batch,
    targets: &Mat,
) -> Result<LossOutput, ObjectiveError> {
    let lg = op_graph(encoder, predictor, batch, targets)?;
    finalize(lg, "op", true)
}

/// Build the reward prediction tape: mean squared error of the scalar
/// head r̂(f(h), a) against observed rewards.
pub fn rp_graph(
    encoder: &Encoder,
    reward_head: &Net,
    batch: &Batch,
) -> Result<LossGraph, ObjectiveError> {
    if encoder.net.in_dim() != batch.obs.cols() {
        return Err(ObjectiveError::DimMismatch {
            expected: encoder.net.in_dim(),
            got: batch.obs.cols(),
        });
    }
    let want = encoder.latent_dim + batch.n_actions;
    if reward_head.in_dim() != want || reward_head.out_dim() != 1 {
        return Err(ObjectiveError::DimMismatch {
            expected: want,
            got: reward_head.in_dim(),
        });
    }
    let n = batch.len() as f64;
    let mut g = Graph::new();
    let x = g.input(batch.obs.clone());
    let (enc, enc_params) = encoder.emit(&mut g, x);
    let a = g.input(one_hot_actions(&batch.actions, batch.n_actions));
    let za = g.concat_cols(enc.mean, a);
    let (pred, model_params) = reward_head.emit(&mut g, za);
    let r = g.input(Mat::from_vec(batch.len(), 1, batch.rewards.clone()));
    let err = g.sub(pred, r);
    let sq = g.square(err);
    let s = g.sum_all(sq);
    let loss = g.scale(s, 1.0 / n);
    Ok(LossGraph {
        graph: g,
        loss,
        encoder_params: enc_params,
        model_params,
        log_std_clamped: false,
    })
}

pub fn rp_loss(
    encoder: &Encoder,
    reward_head: &Net,
    batch: &Batch,
) -> Result<LossOutput, ObjectiveError> {
    let lg = rp_graph(encoder, reward_head, batch)?;
    finalize(lg, "rp", true)
}
