use selfpred::envs::{make_load_unload, random_finite_pomdp, FinitePomdp, PomdpSizes};
use selfpred::numkit::StreamRng;
use selfpred::oracle::{
    belief_partition, bellman_residual, check_approx_bound, check_condition, check_implications,
    check_multistep, constant_encoder, construct_latent_reward, enumerate_histories, is_mdp,
    last_obs_partition, latent_model_from_encoder, one_step_obs_fixture,
    one_step_obs_fixture_encoder, random_partition, refine_to_stability,
    reward_reconstruction_error, to_mdp, uniform_policy, uniform_tree, value_iteration,
    verify_granularity, Condition, OracleError, StabilityGoals, TabularEncoder, EXACT_TOL,
    SAMPLED_TOL,
};

fn load_unload_tree(horizon: usize) -> (FinitePomdp, selfpred::oracle::HistoryTree) {
    let mut m = make_load_unload();
    m.horizon = horizon;
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    (m, tree)
}

/// Same chain but starting beside the rewarded end, so short horizons
/// actually see nonzero rewards.
fn load_unload_near_goal(horizon: usize) -> (FinitePomdp, selfpred::oracle::HistoryTree) {
    let mut m = make_load_unload();
    m.horizon = horizon;
    m.initial = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    (m, tree)
}

#[test]
fn load_unload_node_count_matches_hand_count() {
    // Deterministic with a single start: one root, then each action has
    // exactly one child, so depth d holds 2^d nodes: 1+2+4+8 = 15.
    let (_, tree) = load_unload_tree(3);
    assert_eq!(tree.n_nodes(), 15);
    for (depth, expect) in [(0usize, 1usize), (1, 2), (2, 4), (3, 8)] {
        assert_eq!(tree.by_depth[depth].len(), expect);
    }
    for id in tree.internal_nodes() {
        for a in 0..tree.n_actions {
            assert_eq!(tree.nodes[id].children[a].len(), 1);
        }
    }
}

#[test]
fn reach_probabilities_sum_to_one_per_depth() {
    let mut rng = StreamRng::new(20).stream(0);
    for i in 0..10 {
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(i % 2 == 0));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        for depth in 0..=tree.horizon {
            let total: f64 = tree.by_depth[depth]
                .iter()
                .map(|&n| tree.nodes[n].reach)
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "depth {depth}: {total}");
        }
    }
}

#[test]
fn root_beliefs_are_bayes_conditionals_of_initial() {
    let mut rng = StreamRng::new(21).stream(0);
    let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    for &root in &tree.by_depth[0] {
        let node = &tree.nodes[root];
        let joint: Vec<f64> = (0..m.n_states)
            .map(|s| m.initial[s] * m.emission_row(s)[node.obs])
            .collect();
        let total: f64 = joint.iter().sum();
        for (b, j) in node.belief.iter().zip(&joint) {
            assert!((b - j / total).abs() < 1e-14);
        }
    }
}

#[test]
fn node_budget_error_reports_requirement() {
    let m = make_load_unload(); // horizon 200: astronomically many nodes
    let err = enumerate_histories(&m, &uniform_policy(2), 1000).unwrap_err();
    match err {
        OracleError::NodeBudget { required, budget } => {
            assert!(required as usize > budget);
            assert_eq!(budget, 1000);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn single_state_value_is_truncated_geometric_series() {
    let m = FinitePomdp {
        n_states: 1,
        n_actions: 1,
        n_observations: 1,
        transition: vec![1.0],
        emission: vec![1.0],
        reward_mean: vec![1.0],
        initial: vec![1.0],
        gamma: 0.5,
        horizon: 40,
    };
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    let root = tree.by_depth[0][0];
    // Sum of 0.5^k over 40 terms; 2 minus the truncation remainder.
    assert!((q.q[root][0] - 2.0).abs() < 1e-11);
    assert!(bellman_residual(&m, &tree, &q) <= 1e-10);
}

#[test]
fn two_state_chain_matches_hand_computation() {
    // s0 --(a)-> s1 with reward 1, s1 absorbing with reward 0.
    let m = FinitePomdp {
        n_states: 2,
        n_actions: 1,
        n_observations: 2,
        transition: vec![0.0, 1.0, 0.0, 1.0],
        emission: vec![1.0, 0.0, 0.0, 1.0],
        reward_mean: vec![1.0, 0.0],
        initial: vec![1.0, 0.0],
        gamma: 0.9,
        horizon: 3,
    };
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    let root = tree.by_depth[0][0];
    // Only the first step pays: Q = 1 + 0.9*0 + ... = 1.
    assert!((q.q[root][0] - 1.0).abs() < 1e-14);
}

#[test]
fn value_is_monotone_in_gamma_for_nonnegative_rewards() {
    let mut rng = StreamRng::new(22).stream(0);
    for _ in 0..5 {
        let mut m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
        for r in &mut m.reward_mean {
            *r = r.abs();
        }
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let mut lo = m.clone();
        lo.gamma = 0.5;
        let mut hi = m.clone();
        hi.gamma = 0.95;
        let q_lo = value_iteration(&lo, &tree);
        let q_hi = value_iteration(&hi, &tree);
        for node in tree.internal_nodes() {
            for a in 0..tree.n_actions {
                assert!(q_hi.q[node][a] >= q_lo.q[node][a] - 1e-12);
            }
        }
    }
}

#[test]
fn constant_encoder_satisfies_next_latent_everywhere() {
    let mut rng = StreamRng::new(23).stream(0);
    for i in 0..20 {
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(i % 2 == 0));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let q = value_iteration(&m, &tree);
        let enc = constant_encoder(&tree);
        let report =
            check_condition(&tree, &q, &enc, Condition::NextLatentDist, EXACT_TOL).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.max_violation, 0.0);
    }
}

#[test]
fn identity_encoder_on_mdp_reconstructs_observations() {
    let mut rng = StreamRng::new(24).stream(0);
    let m = to_mdp(&random_finite_pomdp(&mut rng, PomdpSizes::small(false)));
    assert!(is_mdp(&m));
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    let enc = last_obs_partition(&tree);
    let report = check_condition(&tree, &q, &enc, Condition::ObsRecon, EXACT_TOL).unwrap();
    assert!(report.satisfied);
}

#[test]
fn constant_encoder_violates_reward_prediction_on_two_arm_pomdp() {
    // Two hidden states with opposite rewards and identical observations.
    let m = FinitePomdp {
        n_states: 2,
        n_actions: 1,
        n_observations: 1,
        transition: vec![1.0, 0.0, 0.0, 1.0],
        emission: vec![1.0, 1.0],
        reward_mean: vec![1.0, -1.0],
        initial: vec![0.5, 0.5],
        gamma: 0.9,
        horizon: 2,
    };
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    // The roots all look alike here, so make the encoder constant but
    // compare against a two-class split from beliefs to force grouping
    // of genuinely different reward arms: use the belief partition's
    // complement, i.e. the constant encoder, which merges them.
    let enc = constant_encoder(&tree);
    let report = check_condition(&tree, &q, &enc, Condition::RewardPred, EXACT_TOL).unwrap();
    // With a single indistinguishable history the mixture matches; the
    // violation appears once beliefs diverge, which happens with a
    // revealing emission instead.
    let m2 = FinitePomdp {
        emission: vec![1.0, 0.0, 0.0, 1.0],
        n_observations: 2,
        ..m
    };
    let tree2 = uniform_tree(&m2, 1_000_000).unwrap();
    let q2 = value_iteration(&m2, &tree2);
    let enc2 = constant_encoder(&tree2);
    let report2 = check_condition(&tree2, &q2, &enc2, Condition::RewardPred, EXACT_TOL).unwrap();
    assert!(!report2.satisfied);
    assert!(report2.max_violation >= 1.0 - 1e-12);
    assert!(report2.witness.is_some());
    // The indistinguishable variant genuinely satisfies the condition.
    assert!(report.satisfied);
}

#[test]
fn belief_partition_passes_observation_level_conditions() {
    let (m, tree) = load_unload_near_goal(4);
    let q = value_iteration(&m, &tree);
    let enc = belief_partition(&tree);
    for c in [
        Condition::RewardPred,
        Condition::NextLatentDist,
        Condition::NextObsPred,
        Condition::RecurrentNext,
        Condition::LatentMarkov,
        Condition::QIrrelevance,
        Condition::PolicyIrrelevance,
    ] {
        let report = check_condition(&tree, &q, &enc, c, EXACT_TOL).unwrap();
        assert!(report.satisfied, "{c} violated: {}", report.to_line());
    }
}

#[test]
fn multistep_with_k1_matches_single_step() {
    let mut rng = StreamRng::new(25).stream(0);
    for _ in 0..10 {
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let q = value_iteration(&m, &tree);
        let enc = random_partition(&tree, 3, &mut rng);
        for c in [
            Condition::RewardPred,
            Condition::NextLatentDist,
            Condition::NextObsPred,
        ] {
            let single = check_condition(&tree, &q, &enc, c, EXACT_TOL).unwrap();
            let multi = check_multistep(&tree, &enc, c, 1, EXACT_TOL).unwrap();
            assert!(
                (single.max_violation - multi.max_violation).abs() < 1e-12,
                "{c}: {} vs {}",
                single.max_violation,
                multi.max_violation
            );
        }
    }
}

#[test]
fn next_latent_stable_encoders_pass_all_feasible_lookaheads() {
    let mut rng = StreamRng::new(26).stream(0);
    for _ in 0..10 {
        let mut sizes = PomdpSizes::small(false);
        sizes.horizon = 4;
        let m = random_finite_pomdp(&mut rng, sizes);
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let q = value_iteration(&m, &tree);
        let coarse = random_partition(&tree, 2, &mut rng);
        let enc = refine_to_stability(&tree, &coarse, StabilityGoals::next_latent());
        let base = check_condition(&tree, &q, &enc, Condition::NextLatentDist, SAMPLED_TOL)
            .unwrap();
        assert!(base.satisfied);
        for k in 2..=3 {
            let report =
                check_multistep(&tree, &enc, Condition::NextLatentDist, k, SAMPLED_TOL).unwrap();
            assert!(report.satisfied, "k={k}: {}", report.to_line());
        }
    }
}

#[test]
fn fixture_shows_one_step_obs_prediction_without_two_step() {
    let m = one_step_obs_fixture();
    m.validate().unwrap();
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let enc = one_step_obs_fixture_encoder(&tree);
    let one = check_multistep(&tree, &enc, Condition::NextObsPred, 1, EXACT_TOL).unwrap();
    let two = check_multistep(&tree, &enc, Condition::NextObsPred, 2, EXACT_TOL).unwrap();
    assert!(one.satisfied, "{}", one.to_line());
    assert!(!two.satisfied, "{}", two.to_line());
    assert!(two.max_violation > 0.4);
}

#[test]
fn multistep_errors_when_no_node_has_enough_horizon() {
    let (_, tree) = load_unload_tree(2);
    let enc = constant_encoder(&tree);
    let err = check_multistep(&tree, &enc, Condition::NextObsPred, 3, EXACT_TOL).unwrap_err();
    assert!(matches!(err, OracleError::HorizonTooShort { k: 3 }));
}

#[test]
fn latent_reward_matches_table_on_deterministic_chain_mdp() {
    let mut rng = StreamRng::new(27).stream(0);
    let m = to_mdp(&random_finite_pomdp(&mut rng, PomdpSizes::small(true)));
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    let enc = belief_partition(&tree);
    let reward = construct_latent_reward(&m, &tree, &q, &enc, EXACT_TOL).unwrap();
    let err = reward_reconstruction_error(&tree, &enc, &reward);
    assert!(err < 1e-10, "reconstruction error {err}");
}

#[test]
fn latent_reward_on_load_unload_belief_partition() {
    let (m, tree) = load_unload_near_goal(4);
    let q = value_iteration(&m, &tree);
    let enc = belief_partition(&tree);
    let reward = construct_latent_reward(&m, &tree, &q, &enc, EXACT_TOL).unwrap();
    let err = reward_reconstruction_error(&tree, &enc, &reward);
    assert!(err < 1e-8, "reconstruction error {err}");
}

#[test]
fn latent_reward_gates_on_value_match() {
    // A constant encoder merges histories with different values wherever
    // rewards vary, so the precondition must fail.
    let (m, tree) = load_unload_near_goal(4);
    let q = value_iteration(&m, &tree);
    let enc = constant_encoder(&tree);
    let err = construct_latent_reward(&m, &tree, &q, &enc, EXACT_TOL).unwrap_err();
    assert!(matches!(err, OracleError::PreconditionViolated { .. }));
}

#[test]
fn granularity_ladder_is_clean_on_random_models() {
    let root = StreamRng::new(28);
    for i in 0..20 {
        let mut rng = root.stream(i);
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(i % 3 == 0));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let report = verify_granularity(&m, &tree, SAMPLED_TOL, &mut rng);
        assert!(report.clean(), "model {i}:\n{}", report.to_text());
    }
}

#[test]
fn value_match_without_belief_match_splits_the_ladder() {
    // Two mirrored states with identical rewards: merging their histories
    // keeps values equal but breaks next-obs prediction.
    let m = FinitePomdp {
        n_states: 2,
        n_actions: 1,
        n_observations: 2,
        transition: vec![1.0, 0.0, 0.0, 1.0],
        emission: vec![1.0, 0.0, 0.0, 1.0],
        reward_mean: vec![0.5, 0.5],
        initial: vec![0.5, 0.5],
        gamma: 0.9,
        horizon: 2,
    };
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let q = value_iteration(&m, &tree);
    // Merge histories only within each depth so value agreement isn't
    // broken by the remaining-horizon dependence.
    let labels: Vec<usize> = (0..tree.n_nodes()).map(|n| tree.nodes[n].depth).collect();
    let enc = TabularEncoder::from_labels(labels);
    let qm = check_condition(&tree, &q, &enc, Condition::QIrrelevance, EXACT_TOL).unwrap();
    let op = check_condition(&tree, &q, &enc, Condition::NextObsPred, EXACT_TOL).unwrap();
    assert!(qm.satisfied);
    assert!(!op.satisfied);
}

#[test]
fn implication_edges_are_clean_on_random_models() {
    let root = StreamRng::new(29);
    for i in 0..15 {
        let mut rng = root.stream(i);
        let base = random_finite_pomdp(&mut rng, PomdpSizes::small(i % 2 == 0));
        let m = if i % 3 == 0 { to_mdp(&base) } else { base };
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let report = check_implications(&m, &tree, SAMPLED_TOL, &mut rng);
        assert!(report.clean(), "model {i}:\n{}", report.to_text());
    }
}

#[test]
fn implication_suite_filters_premise_violating_encoders() {
    let mut rng = StreamRng::new(30).stream(0);
    let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
    let tree = uniform_tree(&m, 1_000_000).unwrap();
    let report = check_implications(&m, &tree, SAMPLED_TOL, &mut rng);
    for entry in &report.entries {
        assert!(entry.premise_holds <= entry.encoders_sampled);
    }
    // Random partitions rarely satisfy premises, so some sampling slack
    // must exist between sampled and premise-holding counts.
    let loose = report
        .entries
        .iter()
        .any(|e| e.premise_holds < e.encoders_sampled);
    assert!(loose);
}

#[test]
fn approx_bound_is_tight_for_exact_models_and_holds_perturbed() {
    let root = StreamRng::new(31);
    for i in 0..15 {
        let mut rng = root.stream(i);
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let q = value_iteration(&m, &tree);
        let enc = belief_partition(&tree);
        let model = latent_model_from_encoder(&tree, &q, &enc);
        let exact = check_approx_bound(&m, &tree, &q, &enc, &model).unwrap();
        assert!(exact.holds);
        for row in &exact.rows {
            assert!(row.measured_gap < 1e-10);
            assert!(row.epsilon < 1e-9);
        }
        // Perturb one latent Q entry; the bound must absorb it.
        let mut bumped = model.clone();
        use rand::Rng;
        let idx = rng.gen_range(0..bumped.q.len());
        bumped.q[idx] += 0.1;
        let perturbed = check_approx_bound(&m, &tree, &q, &enc, &bumped).unwrap();
        assert!(perturbed.holds, "model {i}:\n{}", perturbed.to_text());
    }
}

#[test]
fn approx_bound_holds_for_coarse_encoders() {
    let root = StreamRng::new(32);
    for i in 0..15 {
        let mut rng = root.stream(i);
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
        let tree = uniform_tree(&m, 1_000_000).unwrap();
        let q = value_iteration(&m, &tree);
        // Depth-homogeneous coarse encoder: random split within depth.
        use rand::Rng;
        let labels: Vec<(usize, usize)> = (0..tree.n_nodes())
            .map(|n| (tree.nodes[n].depth, rng.gen_range(0..2)))
            .collect();
        let enc = TabularEncoder::from_labels(labels);
        let model = latent_model_from_encoder(&tree, &q, &enc);
        let report = check_approx_bound(&m, &tree, &q, &enc, &model).unwrap();
        assert!(report.holds, "model {i}:\n{}", report.to_text());
    }
}

#[test]
fn report_lines_round_trip_the_key_facts() {
    let (m, tree) = load_unload_near_goal(3);
    let q = value_iteration(&m, &tree);
    let enc = constant_encoder(&tree);
    let report = check_condition(&tree, &q, &enc, Condition::RewardPred, EXACT_TOL).unwrap();
    let line = report.to_line();
    assert!(line.starts_with("condition=reward-pred k=1 satisfied=false"));
    assert!(line.contains("witness=node:"));
}
