//! Exact checkers for the latent-abstraction conditions.
//!
//! Every checker quantifies over reachable histories only and scores a
//! class-conditional prediction built as the reach-weighted mixture over
//! histories sharing a latent class. Distributional conditions use total
//! variation (half L1); expectation conditions use absolute error;
//! determinism conditions use one minus the modal mass.

use super::tree::{HistoryTree, OracleError};
use super::value::QTable;
use std::collections::HashMap;
use std::fmt;

/// A latent encoder as an explicit node-to-class table.
#[derive(Debug, Clone)]
pub struct TabularEncoder {
    pub assignment: Vec<usize>,
    pub n_classes: usize,
}

impl TabularEncoder {
    /// Build from arbitrary labels, renumbering classes densely in
    /// first-appearance order.
    pub fn from_labels<K: std::hash::Hash + Eq>(labels: Vec<K>) -> Self {
        let mut ids: HashMap<K, usize> = HashMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for label in labels {
            let next = ids.len();
            assignment.push(*ids.entry(label).or_insert(next));
        }
        TabularEncoder {
            n_classes: ids.len(),
            assignment,
        }
    }

    pub fn class(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn validate(&self, tree: &HistoryTree) -> Result<(), OracleError> {
        if self.assignment.len() != tree.n_nodes() {
            return Err(OracleError::BadEncoder(self.assignment.len()));
        }
        let mut seen = vec![false; self.n_classes];
        for (node, &z) in self.assignment.iter().enumerate() {
            if z >= self.n_classes {
                return Err(OracleError::BadEncoder(node));
            }
            seen[z] = true;
        }
        if let Some(z) = seen.iter().position(|&s| !s) {
            return Err(OracleError::BadEncoder(z));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Expected immediate reward is a function of (class, action).
    RewardPred,
    /// Next-class distribution is a function of (class, action).
    NextLatentDist,
    /// Next-class mean embedding is a function of (class, action).
    NextLatentMean,
    /// Next-observation distribution is a function of (class, action).
    NextObsPred,
    /// Current observation is recoverable from the class.
    ObsRecon,
    /// The class process is Markov given (class, action).
    LatentMarkov,
    /// Next class is determined by (class, action, next observation).
    RecurrentNext,
    /// Optimal values agree within a class.
    QIrrelevance,
    /// Some action is optimal for every history in a class.
    PolicyIrrelevance,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Condition::RewardPred => "reward-pred",
            Condition::NextLatentDist => "next-latent-dist",
            Condition::NextLatentMean => "next-latent-mean",
            Condition::NextObsPred => "next-obs-pred",
            Condition::ObsRecon => "obs-recon",
            Condition::LatentMarkov => "latent-markov",
            Condition::RecurrentNext => "recurrent-next",
            Condition::QIrrelevance => "q-irrelevance",
            Condition::PolicyIrrelevance => "policy-irrelevance",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub condition: Condition,
    /// Lookahead steps; 1 for the single-step conditions.
    pub k: usize,
    pub satisfied: bool,
    pub max_violation: f64,
    pub tol: f64,
    /// Offending (node, action) when violated.
    pub witness: Option<(usize, Option<usize>)>,
}

impl ConditionReport {
    fn build(
        condition: Condition,
        k: usize,
        tol: f64,
        max_violation: f64,
        witness: Option<(usize, Option<usize>)>,
    ) -> Self {
        let satisfied = max_violation <= tol;
        ConditionReport {
            condition,
            k,
            satisfied,
            max_violation,
            tol,
            witness: if satisfied { None } else { witness },
        }
    }

    pub fn to_line(&self) -> String {
        let witness = match self.witness {
            None => "-".to_string(),
            Some((node, None)) => format!("node:{node}"),
            Some((node, Some(a))) => format!("node:{node},action:{a}"),
        };
        format!(
            "condition={} k={} satisfied={} max_violation={:e} tol={:e} witness={}",
            self.condition, self.k, self.satisfied, self.max_violation, self.tol, witness
        )
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn normalize(mut dist: Vec<f64>) -> Vec<f64> {
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        for x in &mut dist {
            *x /= total;
        }
    }
    dist
}

/// Grounded next-class distribution from one (node, action).
fn next_class_dist(
    tree: &HistoryTree,
    encoder: &TabularEncoder,
    node: usize,
    action: usize,
) -> Vec<f64> {
    let mut dist = vec![0.0; encoder.n_classes];
    for &(child, p) in &tree.nodes[node].children[action] {
        dist[encoder.class(child)] += p;
    }
    normalize(dist)
}

fn next_obs_dist(tree: &HistoryTree, n_obs: usize, node: usize, action: usize) -> Vec<f64> {
    let mut dist = vec![0.0; n_obs];
    for &(child, p) in &tree.nodes[node].children[action] {
        dist[tree.nodes[child].obs] += p;
    }
    normalize(dist)
}

/// Reach-weighted mixture of per-node vectors within each group.
fn group_mixture<K: std::hash::Hash + Eq + Clone>(
    items: &[(K, f64, Vec<f64>)],
) -> HashMap<K, Vec<f64>> {
    let mut acc: HashMap<K, (f64, Vec<f64>)> = HashMap::new();
    for (key, w, v) in items {
        let entry = acc
            .entry(key.clone())
            .or_insert_with(|| (0.0, vec![0.0; v.len()]));
        entry.0 += w;
        for (slot, x) in entry.1.iter_mut().zip(v) {
            *slot += w * x;
        }
    }
    acc.into_iter()
        .map(|(k, (w, mut v))| {
            for x in &mut v {
                *x /= w;
            }
            (k, v)
        })
        .collect()
}

/// Max deviation of each item's vector from its group mixture.
fn max_group_deviation<K: std::hash::Hash + Eq + Clone>(
    items: &[(K, f64, Vec<f64>)],
    witnesses: &[(usize, Option<usize>)],
    metric: impl Fn(&[f64], &[f64]) -> f64,
) -> (f64, Option<(usize, Option<usize>)>) {
    let mixtures = group_mixture(items);
    let mut worst = 0.0f64;
    let mut witness = None;
    for ((key, _, v), &w) in items.iter().zip(witnesses) {
        let d = metric(v, &mixtures[key]);
        if d > worst {
            worst = d;
            witness = Some(w);
        }
    }
    (worst, witness)
}

pub fn check_condition(
    tree: &HistoryTree,
    q: &QTable,
    encoder: &TabularEncoder,
    condition: Condition,
    tol: f64,
) -> Result<ConditionReport, OracleError> {
    encoder.validate(tree)?;
    let report = match condition {
        Condition::RewardPred | Condition::QIrrelevance => {
            let mut items = Vec::new();
            let mut wit = Vec::new();
            for node in tree.internal_nodes() {
                let n = &tree.nodes[node];
                for a in 0..tree.n_actions {
                    let value = match condition {
                        Condition::RewardPred => n.expected_reward[a],
                        _ => q.q[node][a],
                    };
                    items.push(((encoder.class(node), a), n.reach, vec![value]));
                    wit.push((node, Some(a)));
                }
            }
            let (v, w) = max_group_deviation(&items, &wit, max_abs_diff);
            ConditionReport::build(condition, 1, tol, v, w)
        }
        Condition::NextLatentDist | Condition::NextLatentMean => {
            let metric: fn(&[f64], &[f64]) -> f64 = match condition {
                Condition::NextLatentDist => tv,
                _ => max_abs_diff,
            };
            let mut items = Vec::new();
            let mut wit = Vec::new();
            for node in tree.internal_nodes() {
                for a in 0..tree.n_actions {
                    items.push((
                        (encoder.class(node), a),
                        tree.nodes[node].reach,
                        next_class_dist(tree, encoder, node, a),
                    ));
                    wit.push((node, Some(a)));
                }
            }
            let (v, w) = max_group_deviation(&items, &wit, metric);
            ConditionReport::build(condition, 1, tol, v, w)
        }
        Condition::NextObsPred => {
            let n_obs = tree
                .nodes
                .iter()
                .map(|n| n.obs + 1)
                .max()
                .unwrap_or(1);
            let mut items = Vec::new();
            let mut wit = Vec::new();
            for node in tree.internal_nodes() {
                for a in 0..tree.n_actions {
                    items.push((
                        (encoder.class(node), a),
                        tree.nodes[node].reach,
                        next_obs_dist(tree, n_obs, node, a),
                    ));
                    wit.push((node, Some(a)));
                }
            }
            let (v, w) = max_group_deviation(&items, &wit, tv);
            ConditionReport::build(condition, 1, tol, v, w)
        }
        Condition::ObsRecon => {
            // Modal mass of the class-conditional current-observation
            // distribution; violation is the leftover mass.
            let mut mass: HashMap<(usize, usize), f64> = HashMap::new();
            let mut total: HashMap<usize, f64> = HashMap::new();
            for (node, n) in tree.nodes.iter().enumerate() {
                let z = encoder.class(node);
                *mass.entry((z, n.obs)).or_insert(0.0) += n.reach;
                *total.entry(z).or_insert(0.0) += n.reach;
            }
            let mut modal_obs: HashMap<usize, usize> = HashMap::new();
            for z in total.keys() {
                let best = (0..tree.nodes.iter().map(|n| n.obs + 1).max().unwrap())
                    .max_by(|&a, &b| {
                        let ma = mass.get(&(*z, a)).copied().unwrap_or(0.0);
                        let mb = mass.get(&(*z, b)).copied().unwrap_or(0.0);
                        ma.partial_cmp(&mb).unwrap()
                    })
                    .unwrap();
                modal_obs.insert(*z, best);
            }
            let mut worst = 0.0f64;
            let mut witness = None;
            for (&z, &t) in &total {
                let modal = mass[&(z, modal_obs[&z])];
                let leftover = 1.0 - modal / t;
                if leftover > worst {
                    worst = leftover;
                    witness = tree
                        .nodes
                        .iter()
                        .enumerate()
                        .find(|(i, n)| encoder.class(*i) == z && n.obs != modal_obs[&z])
                        .map(|(i, _)| (i, None));
                }
            }
            ConditionReport::build(condition, 1, tol, worst, witness)
        }
        Condition::RecurrentNext => {
            // Mass of next classes per (class, action, next obs) triple.
            let mut mass: HashMap<(usize, usize, usize, usize), f64> = HashMap::new();
            let mut total: HashMap<(usize, usize, usize), f64> = HashMap::new();
            let mut any_child: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
            for node in tree.internal_nodes() {
                let n = &tree.nodes[node];
                let z = encoder.class(node);
                for a in 0..tree.n_actions {
                    for &(child, p) in &n.children[a] {
                        let o = tree.nodes[child].obs;
                        let zn = encoder.class(child);
                        let w = n.reach * tree.policy[a] * p;
                        *mass.entry((z, a, o, zn)).or_insert(0.0) += w;
                        *total.entry((z, a, o)).or_insert(0.0) += w;
                        any_child.entry((z, a, o, zn)).or_insert(child);
                    }
                }
            }
            let mut worst = 0.0f64;
            let mut witness = None;
            for (&(z, a, o), &t) in &total {
                let mut best = 0.0f64;
                let mut best_zn = 0;
                for zn in 0..encoder.n_classes {
                    if let Some(&m) = mass.get(&(z, a, o, zn)) {
                        if m > best {
                            best = m;
                            best_zn = zn;
                        }
                    }
                }
                let leftover = 1.0 - best / t;
                if leftover > worst {
                    worst = leftover;
                    witness = (0..encoder.n_classes)
                        .filter(|&zn| zn != best_zn)
                        .find_map(|zn| any_child.get(&(z, a, o, zn)))
                        .map(|&child| (child, Some(a)));
                }
            }
            ConditionReport::build(condition, 1, tol, worst, witness)
        }
        Condition::LatentMarkov => {
            // Trajectory key: the full (class, action, class, ...) path.
            let mut traj_ids: HashMap<(Option<usize>, usize, usize), usize> = HashMap::new();
            let mut traj: Vec<usize> = vec![0; tree.n_nodes()];
            for depth in 0..=tree.horizon {
                for &node in &tree.by_depth[depth] {
                    let n = &tree.nodes[node];
                    let key = (
                        n.parent.map(|p| traj[p]),
                        n.action_taken.unwrap_or(0),
                        encoder.class(node),
                    );
                    let next = traj_ids.len();
                    traj[node] = *traj_ids.entry(key).or_insert(next);
                }
            }
            // Compare trajectory-conditioned next-class distributions to
            // final-class-conditioned ones.
            let mut items_full = Vec::new();
            let mut items_last = Vec::new();
            let mut wit = Vec::new();
            for node in tree.internal_nodes() {
                for a in 0..tree.n_actions {
                    let dist = next_class_dist(tree, encoder, node, a);
                    let reach = tree.nodes[node].reach;
                    items_full.push(((traj[node], a), reach, dist.clone()));
                    items_last.push(((encoder.class(node), a), reach, dist));
                    wit.push((node, Some(a)));
                }
            }
            let full = group_mixture(&items_full);
            let last = group_mixture(&items_last);
            let mut worst = 0.0f64;
            let mut witness = None;
            for (((tk, a), _, _), &w) in items_full.iter().zip(&wit) {
                let node = w.0;
                let d = tv(&full[&(*tk, *a)], &last[&(encoder.class(node), *a)]);
                if d > worst {
                    worst = d;
                    witness = Some(w);
                }
            }
            ConditionReport::build(condition, 1, tol, worst, witness)
        }
        Condition::PolicyIrrelevance => {
            // A class is fine if one action is optimal for all members;
            // the violation is the best action's worst optimality gap.
            let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
            for node in tree.internal_nodes() {
                members.entry(encoder.class(node)).or_default().push(node);
            }
            let mut worst = 0.0f64;
            let mut witness = None;
            for nodes in members.values() {
                let mut best_gap = f64::INFINITY;
                let mut best_witness = None;
                for a in 0..tree.n_actions {
                    let (gap, node) = nodes
                        .iter()
                        .map(|&h| (q.value(h) - q.q[h][a], h))
                        .fold((0.0, nodes[0]), |acc, x| if x.0 > acc.0 { x } else { acc });
                    if gap < best_gap {
                        best_gap = gap;
                        best_witness = Some((node, Some(a)));
                    }
                }
                if best_gap > worst {
                    worst = best_gap;
                    witness = best_witness;
                }
            }
            ConditionReport::build(condition, 1, tol, worst, witness)
        }
    };
    Ok(report)
}

/// Distribution over nodes after following `actions` from `start`.
fn propagate(tree: &HistoryTree, start: usize, actions: &[usize]) -> HashMap<usize, f64> {
    let mut dist: HashMap<usize, f64> = HashMap::from([(start, 1.0)]);
    for &a in actions {
        let mut next: HashMap<usize, f64> = HashMap::new();
        for (&node, &p) in &dist {
            for &(child, pc) in &tree.nodes[node].children[a] {
                *next.entry(child).or_insert(0.0) += p * pc;
            }
        }
        dist = next;
    }
    dist
}

fn action_sequences(n_actions: usize, k: usize) -> Vec<Vec<usize>> {
    let mut seqs = vec![Vec::new()];
    for _ in 0..k {
        seqs = seqs
            .into_iter()
            .flat_map(|s| {
                (0..n_actions).map(move |a| {
                    let mut t = s.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    seqs
}

/// k-step lookahead versions of reward, next-latent, and next-obs
/// prediction, quantified over every feasible (history, action sequence).
pub fn check_multistep(
    tree: &HistoryTree,
    encoder: &TabularEncoder,
    condition: Condition,
    k: usize,
    tol: f64,
) -> Result<ConditionReport, OracleError> {
    assert!(
        matches!(
            condition,
            Condition::RewardPred | Condition::NextLatentDist | Condition::NextObsPred
        ),
        "multi-step checks cover reward, next-latent, and next-obs prediction"
    );
    assert!(k >= 1);
    encoder.validate(tree)?;
    let feasible: Vec<usize> = tree
        .internal_nodes()
        .filter(|&n| tree.nodes[n].depth + k <= tree.horizon)
        .collect();
    if feasible.is_empty() {
        return Err(OracleError::HorizonTooShort { k });
    }
    let n_obs = tree.nodes.iter().map(|n| n.obs + 1).max().unwrap_or(1);
    let seqs = action_sequences(tree.n_actions, k);
    let mut items = Vec::new();
    let mut wit = Vec::new();
    for &node in &feasible {
        for (si, seq) in seqs.iter().enumerate() {
            let value = match condition {
                Condition::RewardPred => {
                    let dist = propagate(tree, node, &seq[..k - 1]);
                    let last = seq[k - 1];
                    let r: f64 = dist
                        .iter()
                        .map(|(&n, &p)| p * tree.nodes[n].expected_reward[last])
                        .sum();
                    vec![r]
                }
                Condition::NextLatentDist => {
                    let dist = propagate(tree, node, seq);
                    let mut v = vec![0.0; encoder.n_classes];
                    for (&n, &p) in &dist {
                        v[encoder.class(n)] += p;
                    }
                    normalize(v)
                }
                _ => {
                    let dist = propagate(tree, node, seq);
                    let mut v = vec![0.0; n_obs];
                    for (&n, &p) in &dist {
                        v[tree.nodes[n].obs] += p;
                    }
                    normalize(v)
                }
            };
            items.push(((encoder.class(node), si), tree.nodes[node].reach, value));
            wit.push((node, Some(seqs[si][0])));
        }
    }
    let metric: fn(&[f64], &[f64]) -> f64 = match condition {
        Condition::RewardPred => max_abs_diff,
        _ => tv,
    };
    let (v, w) = max_group_deviation(&items, &wit, metric);
    Ok(ConditionReport::build(condition, k, tol, v, w))
}
