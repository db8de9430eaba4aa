use selfpred::envs::{
    keydoor_views, make_grid_keydoor, make_load_unload, random_finite_pomdp, rbf_featurize,
    rollout, DistractorEnv, Env, Featurizer, FinitePomdp, KeyDoorEnv, KeyDoorPatchEnv, MountainCar,
    PomdpSizes, ScriptedPolicy, TabularEnv,
};
use selfpred::numkit::StreamRng;

#[test]
fn load_unload_counts_and_one_hot_emissions() {
    let m = make_load_unload();
    assert_eq!((m.n_states, m.n_actions, m.n_observations), (7, 2, 3));
    m.validate().unwrap();
    for s in 0..m.n_states {
        let row = m.emission_row(s);
        assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
        assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 2);
    }
}

#[test]
fn load_unload_left_edge_blocks_and_emits_left_end() {
    let m = make_load_unload();
    let mut env = TabularEnv::new(m);
    let mut rng = StreamRng::new(1).stream(0);
    let obs = env.reset(&mut rng);
    assert_eq!(obs, vec![1.0, 0.0, 0.0]); // left end
    let step = env.step(0, &mut rng).unwrap(); // move left from left-most
    assert_eq!(env.state(), 0);
    assert_eq!(step.obs, vec![1.0, 0.0, 0.0]);
}

#[test]
fn load_unload_window_features_are_98_dims() {
    let f = Featurizer::WindowStack {
        k: 20,
        n_obs_features: 3,
        n_actions: 2,
    };
    assert_eq!(f.output_dim(), 98);
}

#[test]
fn window_stack_zero_pads_and_keeps_newest_last() {
    let f = Featurizer::WindowStack {
        k: 2,
        n_obs_features: 2,
        n_actions: 2,
    };
    let obs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let actions = vec![1, 0];
    // t = 0: padded slot, padded action, then o_0.
    assert_eq!(f.window_stack(&obs, &actions, 0), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    // t = 1: o_0, a_0 = 1, o_1.
    assert_eq!(f.window_stack(&obs, &actions, 1), vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    // t = 2: o_1, a_1 = 0, o_2.
    assert_eq!(f.window_stack(&obs, &actions, 2), vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn deterministic_tabular_rollout_matches_hand_enumeration() {
    let m = make_load_unload();
    let mut env = TabularEnv::new(m);
    let mut rng = StreamRng::new(2).stream(0);
    env.reset(&mut rng);
    // Always move right: states 1..6 then stick at 6; reward 1 on the
    // action taken at state 6.
    let mut states = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..8 {
        let step = env.step(1, &mut rng).unwrap();
        states.push(env.state());
        rewards.push(step.reward);
    }
    assert_eq!(states, vec![1, 2, 3, 4, 5, 6, 6, 6]);
    assert_eq!(rewards, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn step_after_done_is_an_error() {
    let mut m = make_load_unload();
    m.horizon = 2;
    let mut env = TabularEnv::new(m);
    let mut rng = StreamRng::new(3).stream(0);
    env.reset(&mut rng);
    env.step(1, &mut rng).unwrap();
    let last = env.step(1, &mut rng).unwrap();
    assert!(last.done);
    assert!(env.step(1, &mut rng).is_err());
}

#[test]
fn mountain_car_reaches_goal_under_energy_pumping() {
    let mut env = MountainCar::new();
    let mut policy = ScriptedPolicy::energy_pumping();
    let mut rng = StreamRng::new(4).stream(0);
    let traj = rollout(&mut env, &mut policy, 200, &mut rng).unwrap();
    assert!(traj.terminated);
    assert!(traj.observations.last().unwrap()[0] >= 0.5);
    assert!(traj.len() < 200);
}

#[test]
fn energy_pumping_force_sign_matches_velocity_sign() {
    let mut env = MountainCar::new();
    let mut policy = ScriptedPolicy::energy_pumping();
    let mut rng = StreamRng::new(5).stream(0);
    let traj = rollout(&mut env, &mut policy, 200, &mut rng).unwrap();
    for (obs, &a) in traj.observations.iter().zip(&traj.actions) {
        let v = obs[1];
        if v > 0.0 {
            assert_eq!(a, 2);
        } else if v < 0.0 {
            assert_eq!(a, 0);
        }
    }
}

#[test]
fn mountain_car_rollouts_reproduce_under_fixed_seed() {
    let run = || {
        let mut env = MountainCar::new();
        let mut policy = ScriptedPolicy::energy_pumping();
        let mut rng = StreamRng::new(6).stream(0);
        rollout(&mut env, &mut policy, 200, &mut rng).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.actions, b.actions);
}

#[test]
fn rbf_grid_is_100_dims_peaked_and_symmetric() {
    let grid = Featurizer::RbfGrid {
        lows: vec![-1.2, -0.07],
        highs: vec![0.5, 0.07],
        shape: vec![10, 10],
        width_frac: 0.15,
    };
    assert_eq!(grid.output_dim(), 100);
    // State exactly at the first grid node activates that feature fully.
    let (f, clamped) = rbf_featurize(&[-1.2, -0.07], &grid);
    assert!(!clamped);
    assert!((f[0] - 1.0).abs() < 1e-15);
    assert!(f.iter().all(|&x| x > 0.0 && x <= 1.0));
    // States mirrored about a grid node score the same at that node.
    let span = 0.5 - (-1.2);
    let c = -1.2 + span * 3.0 / 9.0; // position node index 3
    let (fa, _) = rbf_featurize(&[c - 0.05, -0.07], &grid);
    let (fb, _) = rbf_featurize(&[c + 0.05, -0.07], &grid);
    assert!((fa[3 * 10] - fb[3 * 10]).abs() < 1e-12);
    // Out-of-bounds input is clamped and flagged.
    let (_, clamped) = rbf_featurize(&[9.0, 0.0], &grid);
    assert!(clamped);
}

#[test]
fn distractor_wrapper_preserves_base_and_appends_noise() {
    let base = TabularEnv::new(make_load_unload());
    let mut plain = TabularEnv::new(make_load_unload());
    let mut wrapped = DistractorEnv::new(base, 16);
    assert_eq!(wrapped.obs_dim(), 3 + 16);

    let mut rng_a = StreamRng::new(7).stream(0);
    let mut rng_b = StreamRng::new(7).stream(0);
    let oa = plain.reset(&mut rng_a);
    let ob = wrapped.reset(&mut rng_b);
    assert_eq!(oa, ob[..3].to_vec());
    for _ in 0..20 {
        let sa = plain.step(1, &mut rng_a).unwrap();
        let sb = wrapped.step(1, &mut rng_b).unwrap();
        assert_eq!(sa.obs, sb.obs[..3].to_vec());
        assert_eq!(sa.reward, sb.reward);
        assert_eq!(sa.done, sb.done);
    }

    let noop = DistractorEnv::new(TabularEnv::new(make_load_unload()), 0);
    assert_eq!(noop.obs_dim(), 3);
}

#[test]
fn distractor_dims_have_standard_normal_moments() {
    let mut env = DistractorEnv::new(TabularEnv::new(make_load_unload()), 4);
    let mut rng = StreamRng::new(8).stream(0);
    let mut samples = Vec::new();
    env.reset(&mut rng);
    while samples.len() < 100_000 {
        let step = env.step(1, &mut rng).unwrap();
        samples.extend_from_slice(&step.obs[3..]);
        if step.done {
            env.reset(&mut rng);
        }
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
}

#[test]
fn random_models_pass_validation_and_respect_flags() {
    let root = StreamRng::new(9);
    for i in 0..100 {
        let mut rng = root.stream(i);
        let det = i % 2 == 0;
        let m = random_finite_pomdp(&mut rng, PomdpSizes::small(det));
        m.validate().unwrap();
        if det {
            for chunk in m.transition.chunks(m.n_states) {
                assert_eq!(chunk.iter().filter(|&&p| p == 1.0).count(), 1);
            }
            for chunk in m.emission.chunks(m.n_observations) {
                assert_eq!(chunk.iter().filter(|&&p| p == 1.0).count(), 1);
            }
        }
    }
    // Fixed seed reproduces identical tables.
    let mut r1 = root.stream(0);
    let mut r2 = root.stream(0);
    let a = random_finite_pomdp(&mut r1, PomdpSizes::small(false));
    let b = random_finite_pomdp(&mut r2, PomdpSizes::small(false));
    assert_eq!(a, b);
}

#[test]
fn text_round_trip_is_bit_exact() {
    let mut rng = StreamRng::new(10).stream(0);
    let m = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
    let text = m.to_text();
    let back = FinitePomdp::from_text(&text).unwrap();
    assert_eq!(m, back);
    assert_eq!(text, back.to_text());
}

#[test]
fn validation_rejects_broken_tables() {
    let mut m = make_load_unload();
    m.transition[0] += 0.5;
    assert!(m.validate().is_err());

    let mut m = make_load_unload();
    m.horizon = 0;
    assert!(m.validate().is_err());

    let mut m = make_load_unload();
    m.reward_mean[0] = f64::NAN;
    assert!(m.validate().is_err());

    let mut m = make_load_unload();
    m.gamma = 1.5;
    assert!(m.validate().is_err());
}

#[test]
fn keydoor_view_is_a_function_of_state_and_solvable() {
    let mut rng = StreamRng::new(11).stream(0);
    let m = make_grid_keydoor(5, &mut rng);
    m.validate().unwrap();
    assert_eq!(m.n_actions, 3);
    // Emission rows one-hot: the view is a deterministic function of state.
    for s in 0..m.n_states {
        assert_eq!(m.emission_row(s).iter().filter(|&&p| p == 1.0).count(), 1);
    }

    // Scripted route: detour up for the key, back down, then east
    // through the door to the goal.
    let mut env = KeyDoorEnv::new(5, &mut rng);
    env.reset(&mut rng);
    let mut total = 0.0;
    let mut done = false;
    for a in [2, 0, 2, 0, 0, 2, 0, 2, 2, 2] {
        let step = env.step(a, &mut rng).unwrap();
        total += step.reward;
        done = step.done;
    }
    assert!(done);
    assert!((0.1..=1.0).contains(&total), "optimal return {total}");
}

#[test]
fn keydoor_random_policy_succeeds_rarely_but_sometimes() {
    let root = StreamRng::new(12);
    let mut rng = root.stream(0);
    let mut env = KeyDoorEnv::new(5, &mut rng);
    let mut policy = ScriptedPolicy::UniformRandom;
    let mut successes = 0;
    let episodes = 10_000;
    for _ in 0..episodes {
        let traj = rollout(&mut env, &mut policy, 100, &mut rng).unwrap();
        if traj.terminated && *traj.rewards.last().unwrap() > 0.0 {
            successes += 1;
        }
    }
    let rate = successes as f64 / episodes as f64;
    assert!(rate > 0.0, "random policy never succeeded");
    assert!(rate < 0.5, "random policy succeeds too often ({rate})");
}

#[test]
fn keydoor_sizes_give_valid_models() {
    let mut rng = StreamRng::new(13).stream(0);
    for size in [5, 7] {
        let m = make_grid_keydoor(size, &mut rng);
        m.validate().unwrap();
        assert!(m.n_states > 50);
    }
}

#[test]
fn sticky_policy_starts_left_and_repeats() {
    let mut policy = ScriptedPolicy::sticky(1.0, 0);
    let mut rng = StreamRng::new(14).stream(0);
    policy.begin_episode();
    let acts: Vec<usize> = (0..10).map(|_| policy.act(&[], 2, &mut rng)).collect();
    assert!(acts.iter().all(|&a| a == 0), "repeat_prob 1 never switches");

    let mut policy = ScriptedPolicy::sticky(0.8, 0);
    let mut repeats = 0;
    let mut total = 0;
    for _ in 0..200 {
        policy.begin_episode();
        let mut prev = policy.act(&[], 2, &mut rng);
        assert_eq!(prev, 0, "episodes start with move-left");
        for _ in 0..20 {
            let a = policy.act(&[], 2, &mut rng);
            if a == prev {
                repeats += 1;
            }
            total += 1;
            prev = a;
        }
    }
    // Repeat chance is 0.8 + 0.2/2 = 0.9 with two actions.
    let frac = repeats as f64 / total as f64;
    assert!((frac - 0.9).abs() < 0.02, "repeat fraction {frac}");
}

#[test]
fn keydoor_patch_observations_are_one_hot_per_cell() {
    let mut rng = StreamRng::new(14).stream(0);
    let m = make_grid_keydoor(5, &mut rng);
    let views = keydoor_views(5);
    assert_eq!(views.len(), m.n_observations);
    // Only the terminal view is all zeros; real views have a non-wall
    // centre cell.
    for v in &views[..views.len() - 1] {
        assert!(v[4] != 0);
    }
    assert_eq!(views[views.len() - 1], [0u8; 9]);

    let mut env = KeyDoorPatchEnv::new(5, &mut rng);
    let obs = env.reset(&mut rng);
    assert_eq!(obs.len(), env.obs_dim());
    let mut check = |obs: &[f64]| {
        for cell in obs.chunks(obs.len() / 9) {
            assert_eq!(cell.iter().sum::<f64>(), 1.0);
            assert!(cell.iter().all(|&p| p == 0.0 || p == 1.0));
        }
    };
    check(&obs);
    for a in [2, 0, 2, 0, 0, 2, 0, 2, 2, 2] {
        let step = env.step(a, &mut rng).unwrap();
        check(&step.obs);
        if step.done {
            assert!(step.reward > 0.0);
            return;
        }
    }
    panic!("scripted route failed to finish");
}
