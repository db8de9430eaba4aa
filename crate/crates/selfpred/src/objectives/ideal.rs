//! Exact next-latent objectives on enumerable models: the minibatch
//! losses average over sampled successors, while these enumerate the
//! successor distribution P(z'|h,a) = E_{o'} f(h') in full.

use crate::envs::Featurizer;
use crate::numkit::{gaussian_expectation, Mat};
use crate::oracle::HistoryTree;

use super::net::{DynamicsModel, Encoder, Head};
use super::ObjectiveError;

const GH_POINTS: usize = 32;
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // 0.5 ln(2π)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZpMetric {
    L2,
    /// Forward KL from the exact successor mixture to the model.
    Fkl,
}

/// One feature row per history node: the one-hot observation window of
/// depth `k` with interleaved one-hot actions.
pub fn history_features(
    tree: &HistoryTree,
    n_observations: usize,
    n_actions: usize,
    k: usize,
) -> Mat {
    let feat = Featurizer::WindowStack {
        k,
        n_obs_features: n_observations,
        n_actions,
    };
    let dim = feat.output_dim();
    let mut rows = Vec::with_capacity(tree.nodes.len() * dim);
    for i in 0..tree.nodes.len() {
        let mut obs_seq = Vec::new();
        let mut act_seq = Vec::new();
        let mut cur = Some(i);
        while let Some(j) = cur {
            let node = &tree.nodes[j];
            let mut one_hot = vec![0.0; n_observations];
            one_hot[node.obs] = 1.0;
            obs_seq.push(one_hot);
            if let Some(a) = node.action_taken {
                act_seq.push(a);
            }
            cur = node.parent;
        }
        obs_seq.reverse();
        act_seq.reverse();
        rows.extend(feat.window_stack(&obs_seq, &act_seq, obs_seq.len() - 1));
    }
    Mat::from_vec(tree.nodes.len(), dim, rows)
}

/// Enumerated loss values for one (encoder, model) pair.
#[derive(Debug, Clone, Copy)]
pub struct ZpEnumeration {
    /// Expectation of the minibatch loss: successors scored one by one.
    pub practical: f64,
    /// Loss against the exact successor mixture.
    pub ideal: f64,
    /// The gap term: next-latent variance for ℓ2, the mixture Jensen
    /// gap Σᵢ wᵢ KL(pᵢ ‖ mix) for the KL form. Computed independently,
    /// so practical − ideal = spread is a checkable identity.
    pub spread: f64,
}

fn diag_kl(mp: &[f64], lp: &[f64], mq: &[f64], lq: &[f64]) -> f64 {
    let mut total = 0.0;
    for d in 0..mp.len() {
        let vp = (2.0 * lp[d]).exp();
        let dm = mp[d] - mq[d];
        total += lq[d] - lp[d] - 0.5 + 0.5 * (vp + dm * dm) * (-2.0 * lq[d]).exp();
    }
    total
}

/// E_{N(mp, σp²)}[log N(x; mq, σq²)], closed form.
fn diag_cross(mp: &[f64], lp: &[f64], mq: &[f64], lq: &[f64]) -> f64 {
    let mut total = 0.0;
    for d in 0..mp.len() {
        let vp = (2.0 * lp[d]).exp();
        let dm = mp[d] - mq[d];
        total += -lq[d] - HALF_LN_TAU - 0.5 * (vp + dm * dm) * (-2.0 * lq[d]).exp();
    }
    total
}

fn diag_entropy(l: &[f64]) -> f64 {
    l.iter().map(|ld| ld + HALF_LN_TAU + 0.5).sum()
}

fn log_mixture(x: &[f64], comps: &[(f64, Vec<f64>, Vec<f64>)]) -> f64 {
    let logs: Vec<f64> = comps
        .iter()
        .map(|(w, mu, ls)| {
            let mut lp = w.ln();
            for d in 0..x.len() {
                let z = (x[d] - mu[d]) * (-ls[d]).exp();
                lp += -ls[d] - HALF_LN_TAU - 0.5 * z * z;
            }
            lp
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Enumerate the practical and ideal next-latent losses over every
/// reachable (history, action) pair, weighted by reach probability and
/// the tree's reference policy.
pub fn enumerated_zp_losses(
    tree: &HistoryTree,
    features: &Mat,
    encoder: &Encoder,
    model: &DynamicsModel,
    metric: ZpMetric,
) -> Result<ZpEnumeration, ObjectiveError> {
    if features.rows() != tree.nodes.len() {
        return Err(ObjectiveError::ShapeMismatch);
    }
    if encoder.net.in_dim() != features.cols() {
        return Err(ObjectiveError::DimMismatch {
            expected: encoder.net.in_dim(),
            got: features.cols(),
        });
    }
    let want = encoder.latent_dim + tree.n_actions;
    if model.net.in_dim() != want {
        return Err(ObjectiveError::DimMismatch {
            expected: want,
            got: model.net.in_dim(),
        });
    }
    let gaussian = match metric {
        ZpMetric::L2 => {
            if encoder.head != Head::Deterministic || model.head != Head::Deterministic {
                return Err(ObjectiveError::WantsDeterministicHead);
            }
            false
        }
        ZpMetric::Fkl => {
            if encoder.head != Head::DiagonalGaussian || model.head != Head::DiagonalGaussian {
                return Err(ObjectiveError::WantsGaussianHead);
            }
            true
        }
    };
    let d = encoder.latent_dim;
    let (means, log_stds, _) = encoder.forward_plain(features);
    let row = |m: &Mat, i: usize| -> Vec<f64> { (0..d).map(|j| m.get(i, j)).collect() };

    let mut total_w = 0.0;
    let mut practical = 0.0;
    let mut ideal = 0.0;
    let mut spread = 0.0;
    for h in tree.internal_nodes() {
        let node = &tree.nodes[h];
        for a in 0..tree.n_actions {
            let children = &node.children[a];
            if children.is_empty() {
                continue;
            }
            let w = node.reach * tree.policy[a];
            total_w += w;
            // Model prediction conditioned on the latent (mean) of h.
            let mut za = row(&means, h);
            za.extend((0..tree.n_actions).map(|i| if i == a { 1.0 } else { 0.0 }));
            let n_za = za.len();
            let (pred_mean, pred_log_std, _) = model.forward_plain(&Mat::from_vec(1, n_za, za));
            let pred: Vec<f64> = (0..d).map(|j| pred_mean.get(0, j)).collect();
            if !gaussian {
                let mut mix_mean = vec![0.0; d];
                for &(c, p) in children {
                    for j in 0..d {
                        mix_mean[j] += p * means.get(c, j);
                    }
                }
                let mut prac_c = 0.0;
                let mut spread_c = 0.0;
                for &(c, p) in children {
                    let mut sq_pred = 0.0;
                    let mut sq_mean = 0.0;
                    for j in 0..d {
                        let fc = means.get(c, j);
                        sq_pred += (pred[j] - fc) * (pred[j] - fc);
                        sq_mean += (fc - mix_mean[j]) * (fc - mix_mean[j]);
                    }
                    prac_c += p * sq_pred;
                    spread_c += p * sq_mean;
                }
                let ideal_c: f64 = (0..d).map(|j| (pred[j] - mix_mean[j]).powi(2)).sum();
                practical += w * prac_c;
                ideal += w * ideal_c;
                spread += w * spread_c;
            } else {
                let log_stds = log_stds.as_ref().unwrap();
                let pred_log_std = pred_log_std.as_ref().unwrap();
                let pred_ls: Vec<f64> = (0..d).map(|j| pred_log_std.get(0, j)).collect();
                let comps: Vec<(f64, Vec<f64>, Vec<f64>)> = children
                    .iter()
                    .map(|&(c, p)| (p, row(&means, c), row(log_stds, c)))
                    .collect();
                let mut prac_c = 0.0;
                let mut ideal_c = 0.0;
                let mut spread_c = 0.0;
                for (p, mu, ls) in &comps {
                    let cross = diag_cross(mu, ls, &pred, &pred_ls);
                    prac_c += p * diag_kl(mu, ls, &pred, &pred_ls);
                    let sigma: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
                    let e_log_mix =
                        gaussian_expectation(mu, &sigma, GH_POINTS, &mut |x| log_mixture(x, &comps));
                    ideal_c += p * (e_log_mix - cross);
                    spread_c += p * (-diag_entropy(ls) - e_log_mix);
                }
                practical += w * prac_c;
                ideal += w * ideal_c;
                spread += w * spread_c;
            }
        }
    }
    Ok(ZpEnumeration {
        practical: practical / total_w,
        ideal: ideal / total_w,
        spread: spread / total_w,
    })
}

/// The exact-mixture loss alone.
pub fn ideal_zp_loss(
    tree: &HistoryTree,
    features: &Mat,
    encoder: &Encoder,
    model: &DynamicsModel,
    metric: ZpMetric,
) -> Result<f64, ObjectiveError> {
    Ok(enumerated_zp_losses(tree, features, encoder, model, metric)?.ideal)
}
