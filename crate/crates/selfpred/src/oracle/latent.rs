//! Latent-space models induced by an encoder, exact latent-reward
//! construction, and the approximate-abstraction reward bound.

use super::conditions::{check_condition, Condition, TabularEncoder};
use super::tree::{HistoryTree, OracleError};
use super::value::QTable;
use crate::envs::FinitePomdp;

/// Class-level action values and transition table, both reach-weighted
/// mixtures over member histories. Rows of `transition` for (class,
/// action) pairs never visited stay all-zero and are skipped by checks.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub n_classes: usize,
    pub n_actions: usize,
    /// Indexed [class][action].
    pub q: Vec<f64>,
    /// Indexed [class][action][next class].
    pub transition: Vec<f64>,
}

impl LatentModel {
    pub fn q_at(&self, z: usize, a: usize) -> f64 {
        self.q[z * self.n_actions + a]
    }

    pub fn transition_row(&self, z: usize, a: usize) -> &[f64] {
        let base = (z * self.n_actions + a) * self.n_classes;
        &self.transition[base..base + self.n_classes]
    }

    pub fn value_of(&self, z: usize) -> f64 {
        (0..self.n_actions)
            .map(|a| self.q_at(z, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Build the induced latent model from the exact tree quantities.
pub fn latent_model_from_encoder(
    tree: &HistoryTree,
    q: &QTable,
    encoder: &TabularEncoder,
) -> LatentModel {
    let nz = encoder.n_classes;
    let na = tree.n_actions;
    let mut weight = vec![0.0; nz];
    let mut q_acc = vec![0.0; nz * na];
    let mut t_acc = vec![0.0; nz * na * nz];
    for node in tree.internal_nodes() {
        let n = &tree.nodes[node];
        let z = encoder.class(node);
        weight[z] += n.reach;
        for a in 0..na {
            q_acc[z * na + a] += n.reach * q.q[node][a];
            for &(child, p) in &n.children[a] {
                t_acc[(z * na + a) * nz + encoder.class(child)] += n.reach * p;
            }
        }
    }
    for z in 0..nz {
        if weight[z] == 0.0 {
            continue;
        }
        for a in 0..na {
            q_acc[z * na + a] /= weight[z];
            for zn in 0..nz {
                t_acc[(z * na + a) * nz + zn] /= weight[z];
            }
        }
    }
    LatentModel {
        n_classes: nz,
        n_actions: na,
        q: q_acc,
        transition: t_acc,
    }
}

/// Whether every member of each class sits at the final action depth, at
/// an earlier depth, or (error) a mix of the two.
fn terminal_flags(
    tree: &HistoryTree,
    encoder: &TabularEncoder,
) -> Result<Vec<Option<bool>>, OracleError> {
    let mut flags: Vec<Option<bool>> = vec![None; encoder.n_classes];
    for node in tree.internal_nodes() {
        let z = encoder.class(node);
        let terminal = tree.nodes[node].depth == tree.horizon - 1;
        match flags[z] {
            None => flags[z] = Some(terminal),
            Some(prev) if prev != terminal => {
                return Err(OracleError::MixedTerminalClass(z));
            }
            _ => {}
        }
    }
    Ok(flags)
}

/// Recover the one-step latent reward from latent values alone:
/// R(z,a) = Q(z,a) - gamma * E[max_a' Q(z',a')], and just Q(z,a) where
/// the class sits at the final action step. Gated on the encoder
/// predicting next latents and matching Q within `tol`.
pub fn construct_latent_reward(
    pomdp: &FinitePomdp,
    tree: &HistoryTree,
    q: &QTable,
    encoder: &TabularEncoder,
    tol: f64,
) -> Result<Vec<f64>, OracleError> {
    for condition in [Condition::NextLatentDist, Condition::QIrrelevance] {
        let report = check_condition(tree, q, encoder, condition, tol)?;
        if !report.satisfied {
            return Err(OracleError::PreconditionViolated {
                condition: condition.to_string(),
                report: report.to_line(),
            });
        }
    }
    let model = latent_model_from_encoder(tree, q, encoder);
    let flags = terminal_flags(tree, encoder)?;
    let mut reward = vec![0.0; model.n_classes * model.n_actions];
    for z in 0..model.n_classes {
        let Some(terminal) = flags[z] else {
            continue; // leaf-only class: no actions, no reward entry
        };
        for a in 0..model.n_actions {
            reward[z * model.n_actions + a] = if terminal {
                model.q_at(z, a)
            } else {
                let future: f64 = model
                    .transition_row(z, a)
                    .iter()
                    .enumerate()
                    .map(|(zn, &p)| if p > 0.0 { p * model.value_of(zn) } else { 0.0 })
                    .sum();
                model.q_at(z, a) - pomdp.gamma * future
            };
        }
    }
    Ok(reward)
}

/// Largest error between the recovered latent reward and the grounded
/// expected rewards, over all reachable (history, action) pairs.
pub fn reward_reconstruction_error(
    tree: &HistoryTree,
    encoder: &TabularEncoder,
    latent_reward: &[f64],
) -> f64 {
    let na = tree.n_actions;
    let mut worst = 0.0f64;
    for node in tree.internal_nodes() {
        let n = &tree.nodes[node];
        let z = encoder.class(node);
        for a in 0..na {
            worst = worst.max((latent_reward[z * na + a] - n.expected_reward[a]).abs());
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct BoundRow {
    pub depth: usize,
    /// Max |Q* - latent Q| at this depth.
    pub alpha: f64,
    /// Max next-latent prediction error at this depth, scored as the
    /// integral-probability form of total variation (full L1 distance).
    pub delta: f64,
    /// Sup-norm of the latent value over classes reachable at depth+1.
    pub rho: f64,
    /// Reward-gap budget alpha_t + gamma*(alpha_{t+1} + rho*delta_t).
    pub epsilon: f64,
    /// Actual max |grounded reward - implied latent reward| at this depth.
    pub measured_gap: f64,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub holds: bool,
}

impl BoundReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "depth={} alpha={:e} delta={:e} rho={:e} epsilon={:e} measured_gap={:e}\n",
                r.depth, r.alpha, r.delta, r.rho, r.epsilon, r.measured_gap
            ));
        }
        out.push_str(&format!("holds={}\n", self.holds));
        out
    }
}

/// Check that approximate value matching plus approximate next-latent
/// prediction budget the per-step reward error of the latent model.
pub fn check_approx_bound(
    pomdp: &FinitePomdp,
    tree: &HistoryTree,
    q: &QTable,
    encoder: &TabularEncoder,
    model: &LatentModel,
) -> Result<BoundReport, OracleError> {
    encoder.validate(tree)?;
    let na = tree.n_actions;
    let nz = model.n_classes;
    let horizon = tree.horizon;

    let mut alpha = vec![0.0f64; horizon + 1];
    let mut delta = vec![0.0f64; horizon];
    let mut gap = vec![0.0f64; horizon];
    let mut rho = vec![0.0f64; horizon + 1];

    // Implied latent reward from the provided model.
    let mut implied = vec![0.0f64; nz * na];
    let flags = terminal_flags(tree, encoder)?;
    for z in 0..nz {
        let Some(terminal) = flags[z] else { continue };
        for a in 0..na {
            implied[z * na + a] = if terminal {
                model.q_at(z, a)
            } else {
                let future: f64 = model
                    .transition_row(z, a)
                    .iter()
                    .enumerate()
                    .map(|(zn, &p)| p * model.value_of(zn))
                    .sum();
                model.q_at(z, a) - pomdp.gamma * future
            };
        }
    }

    for depth in 0..horizon {
        for &node in &tree.by_depth[depth] {
            let n = &tree.nodes[node];
            let z = encoder.class(node);
            for a in 0..na {
                alpha[depth] = alpha[depth].max((q.q[node][a] - model.q_at(z, a)).abs());
                gap[depth] = gap[depth].max((n.expected_reward[a] - implied[z * na + a]).abs());
                // Grounded next-class distribution vs the model's row.
                let mut grounded = vec![0.0; nz];
                for &(child, p) in &n.children[a] {
                    grounded[encoder.class(child)] += p;
                }
                let l1: f64 = grounded
                    .iter()
                    .zip(model.transition_row(z, a))
                    .map(|(g, m)| (g - m).abs())
                    .sum();
                delta[depth] = delta[depth].max(l1);
            }
        }
    }
    for depth in 1..=horizon {
        for &node in &tree.by_depth[depth] {
            if tree.nodes[node].depth == horizon {
                continue;
            }
            rho[depth] = rho[depth].max(model.value_of(encoder.class(node)).abs());
        }
    }

    let mut rows = Vec::with_capacity(horizon);
    let mut holds = true;
    for depth in 0..horizon {
        let epsilon = if depth == horizon - 1 {
            alpha[depth]
        } else {
            alpha[depth] + pomdp.gamma * (alpha[depth + 1] + rho[depth + 1] * delta[depth])
        };
        if gap[depth] > epsilon + 1e-10 {
            holds = false;
        }
        rows.push(BoundRow {
            depth,
            alpha: alpha[depth],
            delta: delta[depth],
            rho: rho[depth + 1],
            epsilon,
            measured_gap: gap[depth],
        });
    }
    Ok(BoundReport { rows, holds })
}
