//! Encoder constructors and partition refinement used by the condition
//! and implication suites.

use super::conditions::TabularEncoder;
use super::tree::HistoryTree;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Everything in one class.
pub fn constant_encoder(tree: &HistoryTree) -> TabularEncoder {
    TabularEncoder {
        assignment: vec![0; tree.n_nodes()],
        n_classes: 1,
    }
}

fn quantize(xs: &[f64]) -> Vec<i64> {
    xs.iter().map(|x| (x * 1e9).round() as i64).collect()
}

/// Group histories by (depth, belief). Depth is included because
/// finite-horizon optimal values are time-dependent.
pub fn belief_partition(tree: &HistoryTree) -> TabularEncoder {
    let labels: Vec<(usize, Vec<i64>)> = tree
        .nodes
        .iter()
        .map(|n| (n.depth, quantize(&n.belief)))
        .collect();
    TabularEncoder::from_labels(labels)
}

/// Group histories by their latest observation only.
pub fn last_obs_partition(tree: &HistoryTree) -> TabularEncoder {
    TabularEncoder::from_labels(tree.nodes.iter().map(|n| n.obs).collect())
}

/// Group by (depth, latest observation).
pub fn depth_obs_partition(tree: &HistoryTree) -> TabularEncoder {
    TabularEncoder::from_labels(tree.nodes.iter().map(|n| (n.depth, n.obs)).collect())
}

/// Uniformly random class labels; exercises violation paths.
pub fn random_partition(tree: &HistoryTree, n_classes: usize, rng: &mut ChaCha8Rng) -> TabularEncoder {
    TabularEncoder::from_labels(
        (0..tree.n_nodes())
            .map(|_| rng.gen_range(0..n_classes))
            .collect(),
    )
}

/// Split some classes of `base` at random, keeping it a refinement.
pub fn random_refinement(
    tree: &HistoryTree,
    base: &TabularEncoder,
    splits: usize,
    rng: &mut ChaCha8Rng,
) -> TabularEncoder {
    let labels: Vec<(usize, usize)> = (0..tree.n_nodes())
        .map(|n| (base.class(n), rng.gen_range(0..splits.max(1))))
        .collect();
    TabularEncoder::from_labels(labels)
}

/// Signature pieces that can seed a refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StabilityGoals {
    /// Same next-class distribution per action within a class.
    pub next_class_dist: bool,
    /// Same next-observation distribution per action within a class.
    pub next_obs_dist: bool,
    /// Next class determined by (class, action, next obs).
    pub recurrent_next: bool,
    /// Same expected reward per action within a class.
    pub reward: bool,
}

impl StabilityGoals {
    pub fn next_latent() -> Self {
        StabilityGoals {
            next_class_dist: true,
            next_obs_dist: false,
            recurrent_next: false,
            reward: false,
        }
    }
}

/// Iteratively split classes until every requested signature is constant
/// within each class. The result refines `initial` and exactly satisfies
/// the requested conditions (up to float round-off in the signatures).
pub fn refine_to_stability(
    tree: &HistoryTree,
    initial: &TabularEncoder,
    goals: StabilityGoals,
) -> TabularEncoder {
    let n_obs = tree.nodes.iter().map(|n| n.obs + 1).max().unwrap_or(1);
    let mut enc = initial.clone();
    loop {
        let mut labels: Vec<(usize, Vec<i64>)> = Vec::with_capacity(tree.n_nodes());
        for (node, n) in tree.nodes.iter().enumerate() {
            let mut sig: Vec<i64> = Vec::new();
            if n.depth < tree.horizon {
                for a in 0..tree.n_actions {
                    if goals.next_class_dist {
                        let mut dist = vec![0.0; enc.n_classes];
                        for &(child, p) in &n.children[a] {
                            dist[enc.class(child)] += p;
                        }
                        sig.extend(quantize(&dist));
                    }
                    if goals.next_obs_dist {
                        let mut dist = vec![0.0; n_obs];
                        for &(child, p) in &n.children[a] {
                            dist[tree.nodes[child].obs] += p;
                        }
                        sig.extend(quantize(&dist));
                    }
                    if goals.recurrent_next {
                        // Next class per observed o', -1 where impossible.
                        let mut by_obs = vec![-1i64; n_obs];
                        for &(child, p) in &n.children[a] {
                            if p > 0.0 {
                                by_obs[tree.nodes[child].obs] = enc.class(child) as i64;
                            }
                        }
                        sig.extend(by_obs);
                    }
                    if goals.reward {
                        sig.extend(quantize(&[n.expected_reward[a]]));
                    }
                }
            }
            labels.push((enc.class(node), sig));
        }
        let refined = TabularEncoder::from_labels(labels);
        if refined.n_classes == enc.n_classes {
            return refined;
        }
        enc = refined;
    }
}
