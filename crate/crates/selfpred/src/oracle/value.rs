//! Exact finite-horizon optimal values by backward induction.

use super::tree::HistoryTree;
use crate::envs::FinitePomdp;

/// Optimal action values Q*(h, a) for every internal node. Leaf nodes
/// (no actions remaining) have value 0.
#[derive(Debug, Clone)]
pub struct QTable {
    /// Indexed [node][action]; empty for leaves.
    pub q: Vec<Vec<f64>>,
}

impl QTable {
    pub fn value(&self, node: usize) -> f64 {
        if self.q[node].is_empty() {
            0.0
        } else {
            self.q[node].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
    }

    pub fn greedy_actions(&self, node: usize, tol: f64) -> Vec<usize> {
        let v = self.value(node);
        self.q[node]
            .iter()
            .enumerate()
            .filter(|(_, &q)| v - q <= tol)
            .map(|(a, _)| a)
            .collect()
    }
}

pub fn value_iteration(pomdp: &FinitePomdp, tree: &HistoryTree) -> QTable {
    let mut q: Vec<Vec<f64>> = vec![Vec::new(); tree.n_nodes()];
    let mut value: Vec<f64> = vec![0.0; tree.n_nodes()];
    for depth in (0..tree.horizon).rev() {
        for &id in &tree.by_depth[depth] {
            let node = &tree.nodes[id];
            let mut qs = Vec::with_capacity(tree.n_actions);
            for a in 0..tree.n_actions {
                let future: f64 = node.children[a]
                    .iter()
                    .map(|&(child, p)| p * value[child])
                    .sum();
                qs.push(node.expected_reward[a] + pomdp.gamma * future);
            }
            value[id] = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            q[id] = qs;
        }
    }
    QTable { q }
}

/// Max Bellman residual over internal nodes; a self-test of the table.
pub fn bellman_residual(pomdp: &FinitePomdp, tree: &HistoryTree, table: &QTable) -> f64 {
    let mut worst = 0.0f64;
    for id in tree.internal_nodes() {
        let node = &tree.nodes[id];
        for a in 0..tree.n_actions {
            let future: f64 = node.children[a]
                .iter()
                .map(|&(child, p)| p * table.value(child))
                .sum();
            let rhs = node.expected_reward[a] + pomdp.gamma * future;
            worst = worst.max((table.q[id][a] - rhs).abs());
        }
    }
    worst
}
