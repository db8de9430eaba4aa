//! Exhaustive history enumeration with exact beliefs and reach
//! probabilities under a fixed full-support reference policy.

use crate::envs::FinitePomdp;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("history tree exceeds the {budget}-node budget (needs at least {required})")]
    NodeBudget { required: u128, budget: usize },
    #[error("reference policy must be a full-support distribution over {0} actions")]
    BadReferencePolicy(usize),
    #[error("encoder leaves node {0} unassigned or uses a sparse class id")]
    BadEncoder(usize),
    #[error("no node has {k} steps of remaining horizon")]
    HorizonTooShort { k: usize },
    #[error("{condition} precondition violated: {report}")]
    PreconditionViolated { condition: String, report: String },
    #[error("latent class {0} mixes terminal-step and earlier histories")]
    MixedTerminalClass(usize),
}

/// One history node. `depth` counts actions taken so far; nodes at
/// `horizon` depth are leaves. `reach` is the exact probability of this
/// history under the reference policy, and `belief` is P(state | h).
#[derive(Debug, Clone)]
pub struct HistoryNode {
    pub parent: Option<usize>,
    pub action_taken: Option<usize>,
    pub obs: usize,
    pub depth: usize,
    pub reach: f64,
    pub belief: Vec<f64>,
    /// Per action: (child node, P(o'|h,a)) over observations with
    /// positive probability.
    pub children: Vec<Vec<(usize, f64)>>,
    /// Per action: E[r | h, a].
    pub expected_reward: Vec<f64>,
}

#[derive(Debug)]
pub struct HistoryTree {
    pub nodes: Vec<HistoryNode>,
    /// Node ids grouped by depth.
    pub by_depth: Vec<Vec<usize>>,
    pub horizon: usize,
    pub n_actions: usize,
    /// Reference-policy action probabilities.
    pub policy: Vec<f64>,
}

impl HistoryTree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes with at least one action remaining.
    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].depth < self.horizon)
    }
}

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

pub fn uniform_policy(n_actions: usize) -> Vec<f64> {
    vec![1.0 / n_actions as f64; n_actions]
}

/// Build the full tree of reachable histories up to the model horizon.
pub fn enumerate_histories(
    pomdp: &FinitePomdp,
    policy: &[f64],
    budget: usize,
) -> Result<HistoryTree, OracleError> {
    if policy.len() != pomdp.n_actions
        || policy.iter().any(|&p| p <= 0.0)
        || (policy.iter().sum::<f64>() - 1.0).abs() > 1e-12
    {
        return Err(OracleError::BadReferencePolicy(pomdp.n_actions));
    }
    let mut nodes: Vec<HistoryNode> = Vec::new();
    let mut by_depth: Vec<Vec<usize>> = vec![Vec::new(); pomdp.horizon + 1];

    // Roots: one per observation with positive initial probability.
    for o in 0..pomdp.n_observations {
        let joint: Vec<f64> = (0..pomdp.n_states)
            .map(|s| pomdp.initial[s] * pomdp.emission_row(s)[o])
            .collect();
        let p_obs: f64 = joint.iter().sum();
        if p_obs <= 0.0 {
            continue;
        }
        let belief: Vec<f64> = joint.iter().map(|x| x / p_obs).collect();
        by_depth[0].push(nodes.len());
        nodes.push(HistoryNode {
            parent: None,
            action_taken: None,
            obs: o,
            depth: 0,
            reach: p_obs,
            belief,
            children: Vec::new(),
            expected_reward: Vec::new(),
        });
    }

    let mut head = 0;
    while head < nodes.len() {
        let id = head;
        head += 1;
        let (depth, reach, belief) = {
            let n = &nodes[id];
            (n.depth, n.reach, n.belief.clone())
        };
        let expected_reward: Vec<f64> = (0..pomdp.n_actions)
            .map(|a| {
                (0..pomdp.n_states)
                    .map(|s| belief[s] * pomdp.reward(s, a))
                    .sum()
            })
            .collect();
        nodes[id].expected_reward = expected_reward;
        if depth == pomdp.horizon {
            continue;
        }
        let mut children = Vec::with_capacity(pomdp.n_actions);
        for a in 0..pomdp.n_actions {
            // Predicted state distribution after action a.
            let mut pred = vec![0.0; pomdp.n_states];
            for s in 0..pomdp.n_states {
                if belief[s] == 0.0 {
                    continue;
                }
                for (s2, &p) in pomdp.transition_row(s, a).iter().enumerate() {
                    pred[s2] += belief[s] * p;
                }
            }
            let mut kids = Vec::new();
            for o in 0..pomdp.n_observations {
                let joint: Vec<f64> = (0..pomdp.n_states)
                    .map(|s2| pred[s2] * pomdp.emission_row(s2)[o])
                    .collect();
                let p_obs: f64 = joint.iter().sum();
                if p_obs <= 0.0 {
                    continue;
                }
                let child_belief: Vec<f64> = joint.iter().map(|x| x / p_obs).collect();
                let child_id = nodes.len();
                if child_id >= budget {
                    return Err(OracleError::NodeBudget {
                        required: child_id as u128 + 1,
                        budget,
                    });
                }
                by_depth[depth + 1].push(child_id);
                nodes.push(HistoryNode {
                    parent: Some(id),
                    action_taken: Some(a),
                    obs: o,
                    depth: depth + 1,
                    reach: reach * policy[a] * p_obs,
                    belief: child_belief,
                    children: Vec::new(),
                    expected_reward: Vec::new(),
                });
                kids.push((child_id, p_obs));
            }
            children.push(kids);
        }
        nodes[id].children = children;
    }

    Ok(HistoryTree {
        nodes,
        by_depth,
        horizon: pomdp.horizon,
        n_actions: pomdp.n_actions,
        policy: policy.to_vec(),
    })
}
