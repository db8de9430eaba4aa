use selfpred::envs::{random_finite_pomdp, PomdpSizes};
use selfpred::numkit::{gauss_hermite, gaussian_expectation, grad_check, Mat, StreamRng};
use selfpred::objectives::*;
use selfpred::oracle::{coin_observation_fixture, uniform_tree};

fn linear_net(w: Mat, b: Mat) -> Net {
    Net {
        arch: NetArch::Linear,
        w: vec![w, b],
    }
}

fn det_encoder(w: Mat, b: Mat) -> Encoder {
    let d = b.cols();
    Encoder::new(linear_net(w, b), Head::Deterministic, d).unwrap()
}

fn gaussian_encoder(w: Mat, b: Mat) -> Encoder {
    let d = b.cols() / 2;
    Encoder::new(linear_net(w, b), Head::DiagonalGaussian, d).unwrap()
}

fn eye_rows(rows: &[usize], dim: usize) -> Mat {
    let mut m = Mat::zeros(rows.len(), dim);
    for (i, &r) in rows.iter().enumerate() {
        m.set(i, r, 1.0);
    }
    m
}

// --- ℓ2 next-latent loss ---

#[test]
fn exact_next_latent_prediction_scores_zero() {
    // Deterministic chain e0 -> e1 with f(e0) = 1, f(e1) = 2 and a
    // model adding 1 via the action input.
    let encoder = det_encoder(Mat::from_vec(2, 1, vec![1.0, 2.0]), Mat::zeros(1, 1));
    let model = det_encoder(Mat::from_vec(2, 1, vec![1.0, 1.0]), Mat::zeros(1, 1));
    let batch = Batch {
        obs: eye_rows(&[0, 0], 2),
        actions: vec![0, 0],
        next_obs: eye_rows(&[1, 1], 2),
        rewards: vec![0.0; 2],
        n_actions: 1,
    };
    let out = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch).unwrap();
    assert_eq!(out.breakdown.total, 0.0);
}

#[test]
fn split_target_midpoint_prediction_costs_the_variance() {
    // Next latent is 0 or 2 with equal probability; predicting the
    // midpoint 1 costs 1 per sample even though it is the best choice.
    let encoder = det_encoder(Mat::from_vec(2, 1, vec![0.0, 2.0]), Mat::zeros(1, 1));
    let model = det_encoder(Mat::zeros(2, 1), Mat::from_vec(1, 1, vec![1.0]));
    let batch = Batch {
        obs: eye_rows(&[0, 0], 2),
        actions: vec![0, 0],
        next_obs: eye_rows(&[0, 1], 2),
        rewards: vec![0.0; 2],
        n_actions: 1,
    };
    let out = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch).unwrap();
    assert!((out.breakdown.total - 1.0).abs() < 1e-12);

    // Against the exact successor mixture the same prediction is
    // perfect: the gap is exactly the next-latent variance.
    let pomdp = coin_observation_fixture();
    let tree = uniform_tree(&pomdp, 10_000).unwrap();
    let features = history_features(&tree, 2, 1, 1);
    let e = enumerated_zp_losses(&tree, &features, &encoder, &model, ZpMetric::L2).unwrap();
    assert!((e.practical - 1.0).abs() < 1e-12);
    assert!(e.ideal.abs() < 1e-12);
    assert!((e.spread - 1.0).abs() < 1e-12);
}

#[test]
fn l2_loss_rejects_gaussian_heads() {
    let encoder = gaussian_encoder(Mat::zeros(2, 2), Mat::zeros(1, 2));
    let model = det_encoder(Mat::zeros(2, 1), Mat::zeros(1, 1));
    let batch = Batch {
        obs: eye_rows(&[0], 2),
        actions: vec![0],
        next_obs: eye_rows(&[1], 2),
        rewards: vec![0.0],
        n_actions: 1,
    };
    let err = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch);
    assert!(matches!(err, Err(ObjectiveError::WantsDeterministicHead)));
}

fn random_batch(n: usize, in_dim: usize, n_actions: usize, seed: u64) -> Batch {
    let mut rng = StreamRng::new(seed).stream(0);
    let norm = |rng: &mut _| StreamRng::standard_normal(rng);
    Batch {
        obs: Mat::from_fn(n, in_dim, |_, _| norm(&mut rng)),
        actions: (0..n).map(|i| i % n_actions).collect(),
        next_obs: Mat::from_fn(n, in_dim, |_, _| norm(&mut rng)),
        rewards: (0..n).map(|_| norm(&mut rng)).collect(),
        n_actions,
    }
}

#[test]
fn l2_loss_gradients_match_finite_differences() {
    let mut rng = StreamRng::new(7).stream(1);
    let encoder = Encoder::new(Net::mlp(6, 8, 3, &mut rng), Head::Deterministic, 3).unwrap();
    let model = Encoder::new(Net::mlp(5, 8, 3, &mut rng), Head::Deterministic, 3).unwrap();
    let batch = random_batch(9, 6, 2, 11);
    for mode in [TargetMode::Online, TargetMode::Detached] {
        let mut lg = zp_l2_graph(&encoder, &model, &encoder, mode, &batch).unwrap();
        let params: Vec<_> = lg
            .encoder_params
            .iter()
            .chain(&lg.model_params)
            .copied()
            .collect();
        let rel = grad_check(&mut lg.graph, lg.loss, &params, 1e-5).unwrap();
        assert!(rel < 1e-4, "relative error {rel} in mode {mode:?}");
    }
}

// --- Gaussian KL next-latent loss ---

#[test]
fn kl_of_identical_gaussians_is_zero() {
    // Constant encoder and model emitting the same distribution.
    let head = Mat::from_vec(1, 2, vec![0.7, -0.4]);
    let encoder = gaussian_encoder(Mat::zeros(2, 2), head.clone());
    let model = gaussian_encoder(Mat::zeros(2, 2), head);
    let batch = random_batch(4, 2, 1, 3);
    let mut rng = StreamRng::new(3).stream(9);
    for dir in [KlDirection::Forward, KlDirection::Reverse] {
        let out = zp_loss_kl(
            &encoder,
            &model,
            &encoder,
            dir,
            TargetMode::Detached,
            &batch,
            &mut rng,
        )
        .unwrap();
        assert!(out.breakdown.total.abs() < 1e-12);
    }
}

#[test]
fn unit_variance_mean_shift_of_one_costs_half() {
    let encoder = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![0.0, 0.0]));
    let model = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![1.0, 0.0]));
    let batch = random_batch(4, 2, 1, 3);
    let mut rng = StreamRng::new(3).stream(10);
    let out = zp_loss_kl(
        &encoder,
        &model,
        &encoder,
        KlDirection::Forward,
        TargetMode::Detached,
        &batch,
        &mut rng,
    )
    .unwrap();
    assert!((out.breakdown.total - 0.5).abs() < 1e-12);
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    // Target N(0.3, e^{0.4}) against model N(-0.2, e^{-0.3}): the
    // closed form must sit within 3 standard errors of a large
    // Monte-Carlo estimate of E_p[log p - log q].
    let (mp, lp, mq, lq) = (0.3, 0.4, -0.2, -0.3);
    let encoder = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![mp, lp]));
    let model = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![mq, lq]));
    let batch = random_batch(2, 2, 1, 3);
    let mut rng = StreamRng::new(3).stream(11);
    let closed = zp_loss_kl(
        &encoder,
        &model,
        &encoder,
        KlDirection::Forward,
        TargetMode::Detached,
        &batch,
        &mut rng,
    )
    .unwrap()
    .breakdown
    .total;

    let log_pdf = |x: f64, m: f64, l: f64| {
        let z = (x - m) * (-l as f64).exp();
        -l - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    };
    let n = 1_000_000usize;
    let mut rng = StreamRng::new(91).stream(0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = mp + lp.exp() * StreamRng::standard_normal(&mut rng);
        let v = log_pdf(x, mp, lp) - log_pdf(x, mq, lq);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt();
    assert!(
        (closed - mean).abs() < 3.0 * se,
        "closed {closed}, mc {mean} ± {se}"
    );
}

#[test]
fn kl_loss_gradients_match_finite_differences() {
    let mut rng = StreamRng::new(17).stream(1);
    let encoder = Encoder::new(Net::mlp(6, 8, 4, &mut rng), Head::DiagonalGaussian, 2).unwrap();
    let model = Encoder::new(Net::mlp(4, 8, 4, &mut rng), Head::DiagonalGaussian, 2).unwrap();
    let batch = random_batch(7, 6, 2, 13);
    for dir in [KlDirection::Forward, KlDirection::Reverse] {
        for mode in [TargetMode::Online, TargetMode::Detached] {
            let mut sample_rng = StreamRng::new(17).stream(2);
            let mut lg =
                zp_kl_graph(&encoder, &model, &encoder, dir, mode, &batch, &mut sample_rng)
                    .unwrap();
            let params: Vec<_> = lg
                .encoder_params
                .iter()
                .chain(&lg.model_params)
                .copied()
                .collect();
            let rel = grad_check(&mut lg.graph, lg.loss, &params, 1e-5).unwrap();
            assert!(rel < 1e-4, "relative error {rel} for {dir:?}/{mode:?}");
        }
    }
}

#[test]
fn degenerate_log_std_is_clamped_and_flagged() {
    let encoder = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![0.0, -25.0]));
    let model = gaussian_encoder(Mat::zeros(2, 2), Mat::from_vec(1, 2, vec![0.0, 0.0]));
    let batch = random_batch(4, 2, 1, 3);
    let mut rng = StreamRng::new(3).stream(12);
    let out = zp_loss_kl(
        &encoder,
        &model,
        &encoder,
        KlDirection::Forward,
        TargetMode::Detached,
        &batch,
        &mut rng,
    )
    .unwrap();
    assert!(out.breakdown.log_std_clamped);
    assert!(out.breakdown.total.is_finite());
}

// --- exact-mixture enumeration ---

#[test]
fn quadrature_matches_gaussian_moments_and_entropy() {
    let (x, w) = gauss_hermite(32);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let second: f64 = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| wi * 2.0 * xi * xi / sqrt_pi)
        .sum();
    assert!((second - 1.0).abs() < 1e-12);

    // Differential entropy of N(0.3, 0.8²) via expectation of -log p.
    let (m, s) = (0.3, 0.8);
    let h = gaussian_expectation(&[m], &[s], 32, &mut |z| {
        let u = (z[0] - m) / s;
        s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * u * u
    });
    let closed = s.ln() + 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!((h - closed).abs() < 1e-10);
}

#[test]
fn deterministic_models_close_the_practical_ideal_gap() {
    let root = StreamRng::new(23);
    for i in 0..10 {
        let mut rng = root.stream(i);
        let pomdp = random_finite_pomdp(&mut rng, PomdpSizes::small(true));
        let tree = uniform_tree(&pomdp, 100_000).unwrap();
        let features = history_features(
            &tree,
            pomdp.n_observations,
            pomdp.n_actions,
            pomdp.horizon + 1,
        );
        let d = 2;
        let enc = Encoder::new(
            Net::mlp(features.cols(), 6, d, &mut rng),
            Head::Deterministic,
            d,
        )
        .unwrap();
        let model = Encoder::new(
            Net::mlp(d + pomdp.n_actions, 6, d, &mut rng),
            Head::Deterministic,
            d,
        )
        .unwrap();
        let e = enumerated_zp_losses(&tree, &features, &enc, &model, ZpMetric::L2).unwrap();
        assert!(
            (e.practical - e.ideal).abs() < 1e-10,
            "model {i}: practical {} vs ideal {}",
            e.practical,
            e.ideal
        );

        let genc = Encoder::new(
            Net::mlp(features.cols(), 6, 2 * d, &mut rng),
            Head::DiagonalGaussian,
            d,
        )
        .unwrap();
        let gmodel = Encoder::new(
            Net::mlp(d + pomdp.n_actions, 6, 2 * d, &mut rng),
            Head::DiagonalGaussian,
            d,
        )
        .unwrap();
        let ge = enumerated_zp_losses(&tree, &features, &genc, &gmodel, ZpMetric::Fkl).unwrap();
        assert!(
            (ge.practical - ge.ideal).abs() < 1e-8,
            "model {i}: kl practical {} vs ideal {}",
            ge.practical,
            ge.ideal
        );
    }
}

#[test]
fn stochastic_models_obey_the_gap_identity() {
    let root = StreamRng::new(29);
    let mut strict_l2 = 0;
    let mut strict_kl = 0;
    for i in 0..10 {
        let mut rng = root.stream(i);
        let pomdp = random_finite_pomdp(&mut rng, PomdpSizes::small(false));
        let tree = uniform_tree(&pomdp, 100_000).unwrap();
        let features = history_features(
            &tree,
            pomdp.n_observations,
            pomdp.n_actions,
            pomdp.horizon + 1,
        );
        let d = 2;
        let enc = Encoder::new(
            Net::mlp(features.cols(), 6, d, &mut rng),
            Head::Deterministic,
            d,
        )
        .unwrap();
        let model = Encoder::new(
            Net::mlp(d + pomdp.n_actions, 6, d, &mut rng),
            Head::Deterministic,
            d,
        )
        .unwrap();
        let e = enumerated_zp_losses(&tree, &features, &enc, &model, ZpMetric::L2).unwrap();
        assert!((e.practical - e.ideal - e.spread).abs() < 1e-8);
        assert!(e.spread >= 0.0);
        if e.spread > 1e-6 {
            strict_l2 += 1;
        }

        let genc = Encoder::new(
            Net::mlp(features.cols(), 6, 2 * d, &mut rng),
            Head::DiagonalGaussian,
            d,
        )
        .unwrap();
        let gmodel = Encoder::new(
            Net::mlp(d + pomdp.n_actions, 6, 2 * d, &mut rng),
            Head::DiagonalGaussian,
            d,
        )
        .unwrap();
        let ge = enumerated_zp_losses(&tree, &features, &genc, &gmodel, ZpMetric::Fkl).unwrap();
        assert!(
            (ge.practical - ge.ideal - ge.spread).abs() < 1e-7,
            "model {i}: {} vs {}",
            ge.practical - ge.ideal,
            ge.spread
        );
        assert!(ge.practical >= ge.ideal - 1e-10);
        if ge.spread > 1e-6 {
            strict_kl += 1;
        }
    }
    assert!(strict_l2 >= 5, "stochastic draws should split the losses");
    assert!(strict_kl >= 5);
}

#[test]
fn constant_encoder_with_matching_constant_model_is_ideal() {
    let pomdp = coin_observation_fixture();
    let tree = uniform_tree(&pomdp, 10_000).unwrap();
    let features = history_features(&tree, 2, 1, 1);
    let c = 0.37;
    let encoder = det_encoder(Mat::zeros(2, 1), Mat::from_vec(1, 1, vec![c]));
    let model = det_encoder(Mat::zeros(2, 1), Mat::from_vec(1, 1, vec![c]));
    let ideal = ideal_zp_loss(&tree, &features, &encoder, &model, ZpMetric::L2).unwrap();
    assert_eq!(ideal, 0.0);
}

// --- grounded observation loss ---

#[test]
fn perfect_observation_predictor_scores_zero() {
    let encoder = det_encoder(Mat::zeros(2, 1), Mat::from_vec(1, 1, vec![1.0]));
    // Predictor ignores the latent and emits the constant target row.
    let target_row = vec![0.4, -1.1, 2.0];
    let predictor = det_encoder(Mat::zeros(2, 3), Mat::from_vec(1, 3, target_row.clone()));
    let batch = random_batch(5, 2, 1, 19);
    let targets = Mat::from_fn(5, 3, |_, j| target_row[j]);
    let out = op_loss(&encoder, &predictor, &batch, &targets).unwrap();
    assert_eq!(out.breakdown.total, 0.0);
}

#[test]
fn distractor_dimensions_floor_the_observation_loss() {
    // Targets carry 3 pure-noise dimensions; no predictor can beat the
    // per-dimension sample variance, and gradient descent converges to
    // exactly that floor for this convex case.
    let n = 256;
    let n_noise = 3;
    let mut rng = StreamRng::new(41).stream(0);
    let batch = random_batch(n, 2, 1, 23);
    let targets = Mat::from_fn(n, n_noise, |_, _| StreamRng::standard_normal(&mut rng));
    // Sample variance about the best constant prediction (the mean).
    let mut floor = 0.0;
    for j in 0..n_noise {
        let mean: f64 = (0..n).map(|i| targets.get(i, j)).sum::<f64>() / n as f64;
        floor += (0..n)
            .map(|i| (targets.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    let encoder = det_encoder(Mat::zeros(2, 1), Mat::from_vec(1, 1, vec![1.0]));
    let mut predictor = Encoder::new(
        Net::linear(2, n_noise, &mut rng),
        Head::Deterministic,
        n_noise,
    )
    .unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..400 {
        let out = op_loss(&encoder, &predictor, &batch, &targets).unwrap();
        last = out.breakdown.total;
        for (w, g) in predictor.net.w.iter_mut().zip(&out.model_grad) {
            *w = w.sub(&g.scale(0.2));
        }
    }
    assert!(last >= floor - 1e-9, "converged {last} below floor {floor}");
    assert!(last <= floor + 1e-3, "did not converge: {last} vs {floor}");
}

#[test]
fn gaussian_observation_loss_is_nonnegative_and_differentiable() {
    let mut rng = StreamRng::new(43).stream(0);
    let encoder = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let predictor = Encoder::new(Net::mlp(4, 6, 6, &mut rng), Head::DiagonalGaussian, 3).unwrap();
    let batch = random_batch(6, 4, 2, 29);
    let targets = Mat::from_fn(6, 3, |_, _| StreamRng::standard_normal(&mut rng));
    let mut lg = op_graph(&encoder, &predictor, &batch, &targets).unwrap();
    assert!(lg.graph.scalar(lg.loss) >= 0.0);
    let params: Vec<_> = lg
        .encoder_params
        .iter()
        .chain(&lg.model_params)
        .copied()
        .collect();
    let rel = grad_check(&mut lg.graph, lg.loss, &params, 1e-5).unwrap();
    assert!(rel < 1e-4, "relative error {rel}");
}

// --- reward loss ---

#[test]
fn zero_rewards_with_zero_head_score_zero() {
    let encoder = det_encoder(Mat::zeros(2, 1), Mat::zeros(1, 1));
    let head = linear_net(Mat::zeros(2, 1), Mat::zeros(1, 1));
    let mut batch = random_batch(5, 2, 1, 31);
    batch.rewards = vec![0.0; 5];
    let out = rp_loss(&encoder, &head, &batch).unwrap();
    assert_eq!(out.breakdown.total, 0.0);
}

#[test]
fn converged_reward_head_recovers_conditional_means() {
    // Two latent classes with rewards {0.2, 0.4} and {0.8}; the head
    // must converge to the class-conditional means.
    let mut rng = StreamRng::new(47).stream(0);
    let encoder = det_encoder(Mat::identity(2), Mat::zeros(1, 2));
    let mut head = Net::linear(3, 1, &mut rng);
    let batch = Batch {
        obs: eye_rows(&[0, 0, 1], 2),
        actions: vec![0, 0, 0],
        next_obs: eye_rows(&[0, 0, 1], 2),
        rewards: vec![0.2, 0.4, 0.8],
        n_actions: 1,
    };
    for _ in 0..4000 {
        let out = rp_loss(&encoder, &head, &batch).unwrap();
        for (w, g) in head.w.iter_mut().zip(&out.model_grad) {
            *w = w.sub(&g.scale(0.3));
        }
    }
    let preds = head.forward_plain(&Mat::from_vec(
        2,
        3,
        vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
    ));
    assert!((preds.get(0, 0) - 0.3).abs() < 1e-3);
    assert!((preds.get(1, 0) - 0.8).abs() < 1e-3);
}

#[test]
fn reward_loss_gradients_match_finite_differences() {
    let mut rng = StreamRng::new(53).stream(0);
    let encoder = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let head = Net::mlp(4, 6, 1, &mut rng);
    let batch = random_batch(6, 4, 2, 37);
    let mut lg = rp_graph(&encoder, &head, &batch).unwrap();
    let params: Vec<_> = lg
        .encoder_params
        .iter()
        .chain(&lg.model_params)
        .copied()
        .collect();
    let rel = grad_check(&mut lg.graph, lg.loss, &params, 1e-5).unwrap();
    assert!(rel < 1e-4, "relative error {rel}");
}

// --- target-network updates ---

#[test]
fn mix_one_copies_and_equal_params_are_a_fixed_point() {
    let mut rng = StreamRng::new(59).stream(0);
    let online = Net::mlp(3, 4, 2, &mut rng);
    let mut target = Net::mlp(3, 4, 2, &mut rng);
    ema_update(&mut target, &online, 1.0).unwrap();
    for (t, o) in target.w.iter().zip(&online.w) {
        assert_eq!(t, o);
    }
    let before = target.w.clone();
    ema_update(&mut target, &online, 0.005).unwrap();
    for (t, b) in target.w.iter().zip(&before) {
        assert_eq!(t, b);
    }
}

#[test]
fn repeated_updates_decay_geometrically_toward_online() {
    let mut rng = StreamRng::new(61).stream(0);
    let online = Net::linear(2, 2, &mut rng);
    let mut target = Net::linear(2, 2, &mut rng);
    let mix = 0.1;
    let initial_gap = target.w[0].sub(&online.w[0]);
    for step in 1..=30 {
        ema_update(&mut target, &online, mix).unwrap();
        let expect = initial_gap.scale((1.0 - mix).powi(step));
        let got = target.w[0].sub(&online.w[0]);
        assert!(got.sub(&expect).max_abs() < 1e-12);
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut rng = StreamRng::new(67).stream(0);
    let online = Net::linear(2, 2, &mut rng);
    let mut target = Net::linear(2, 3, &mut rng);
    assert!(matches!(
        ema_update(&mut target, &online, 0.5),
        Err(ObjectiveError::ShapeMismatch)
    ));
}

// --- stop-gradient stationarity ---

/// Balanced batch over the coin-observation fixture: every (current,
/// next) observation pair once.
fn coin_batch() -> Batch {
    Batch {
        obs: eye_rows(&[0, 0, 1, 1], 2),
        actions: vec![0; 4],
        next_obs: eye_rows(&[0, 1, 0, 1], 2),
        rewards: vec![0.0; 4],
        n_actions: 1,
    }
}

fn stationary_pair(seed: u64, d: usize) -> (Encoder, Encoder) {
    let mut rng = StreamRng::new(seed).stream(0);
    let phi = Mat::from_fn(2, d, |_, _| StreamRng::standard_normal(&mut rng));
    // The model ignores its input and emits the mean next latent,
    // which minimizes the exact-mixture loss for this encoder.
    let mean = Mat::from_fn(1, d, |_, j| 0.5 * (phi.get(0, j) + phi.get(1, j)));
    let encoder = det_encoder(phi, Mat::zeros(1, d));
    let model = det_encoder(Mat::zeros(d + 1, d), mean);
    (encoder, model)
}

#[test]
fn stop_gradient_makes_exact_solutions_stationary() {
    let (encoder, model) = stationary_pair(71, 3);
    let batch = coin_batch();
    let pomdp = coin_observation_fixture();
    let tree = uniform_tree(&pomdp, 10_000).unwrap();
    let features = history_features(&tree, 2, 1, 1);
    // The pair really is an exact-mixture solution.
    let ideal = ideal_zp_loss(&tree, &features, &encoder, &model, ZpMetric::L2).unwrap();
    assert!(ideal < 1e-24);

    let detached = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch).unwrap();
    let stopgrad_norm: f64 = detached
        .encoder_grad
        .iter()
        .chain(&detached.model_grad)
        .map(|g| g.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(stopgrad_norm < 1e-7, "stop-gradient norm {stopgrad_norm}");

    let online = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Online, &batch).unwrap();
    let online_norm: f64 = online
        .encoder_grad
        .iter()
        .chain(&online.model_grad)
        .map(|g| g.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(online_norm > 1e-4, "online norm {online_norm}");
}

#[test]
fn stop_gradient_target_receives_no_gradient() {
    let mut rng = StreamRng::new(73).stream(0);
    let encoder = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let model = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let batch = random_batch(6, 4, 2, 41);
    for mode in [TargetMode::Detached, TargetMode::Ema { mix: 0.005 }] {
        let out = zp_loss_l2(&encoder, &model, &encoder, mode, &batch).unwrap();
        let target_norm = out
            .breakdown
            .grad_norms
            .iter()
            .find(|(name, _)| name == "target")
            .map(|(_, v)| *v)
            .unwrap();
        assert_eq!(target_norm, 0.0);
    }
}

// --- bookkeeping ---

#[test]
fn combined_totals_equal_component_sums() {
    let mut rng = StreamRng::new(79).stream(0);
    let encoder = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let model = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let head = Net::mlp(4, 6, 1, &mut rng);
    let batch = random_batch(6, 4, 2, 43);
    let targets = Mat::from_fn(6, 2, |_, _| StreamRng::standard_normal(&mut rng));
    let predictor = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
    let zp = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch).unwrap();
    let op = op_loss(&encoder, &predictor, &batch, &targets).unwrap();
    let rp = rp_loss(&encoder, &head, &batch).unwrap();
    let combined = LossBreakdown::combine(&[
        (1.0, &zp.breakdown),
        (2.5, &op.breakdown),
        (0.5, &rp.breakdown),
    ]);
    let sum: f64 = combined.components.iter().map(|(_, v)| v).sum();
    assert!((combined.total - sum).abs() < 1e-12);
    assert!(combined.components.iter().all(|(_, v)| *v >= 0.0));
}

#[test]
fn loss_values_are_nonnegative_across_random_configs() {
    let root = StreamRng::new(83);
    for i in 0..5 {
        let mut rng = root.stream(i);
        let encoder = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
        let model = Encoder::new(Net::mlp(4, 6, 2, &mut rng), Head::Deterministic, 2).unwrap();
        let batch = random_batch(6, 4, 2, 100 + i);
        let zp = zp_loss_l2(&encoder, &model, &encoder, TargetMode::Detached, &batch).unwrap();
        assert!(zp.breakdown.total >= 0.0);

        let genc = Encoder::new(Net::mlp(4, 6, 4, &mut rng), Head::DiagonalGaussian, 2).unwrap();
        let gmodel = Encoder::new(Net::mlp(4, 6, 4, &mut rng), Head::DiagonalGaussian, 2).unwrap();
        let kl = zp_loss_kl(
            &genc,
            &gmodel,
            &genc,
            KlDirection::Forward,
            TargetMode::Detached,
            &batch,
            &mut rng,
        )
        .unwrap();
        assert!(kl.breakdown.total >= 0.0);
    }
}
