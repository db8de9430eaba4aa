//! Linear stop-gradient laboratory: a linear encoder on fixed history
//! features, an inner least-squares latent model re-solved exactly
//! before every encoder step, and telemetry for collapse (column
//! cosine) and representation drift (Gram matrix change).

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::{
    make_load_unload, rbf_featurize, rollout, EnvError, Featurizer, MountainCar, ScriptedPolicy,
    TabularEnv,
};
use crate::numkit::{orthogonal_init, pinv_solve, Mat, StreamRng, SvdError};
use crate::objectives::{ema_update, Net, NetArch, TargetMode};

#[derive(Debug, Error)]
pub enum LinearLabError {
    #[error("latent dim {d} exceeds feature dim {features}")]
    LatentTooWide { d: usize, features: usize },
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("learning rate must be non-negative and finite")]
    BadLearningRate,
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Svd(#[from] SvdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabEnv {
    MountainCar,
    LoadUnload,
}

impl LabEnv {
    pub fn name(&self) -> &'static str {
        match self {
            LabEnv::MountainCar => "mountain-car",
            LabEnv::LoadUnload => "load-unload",
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            LabEnv::MountainCar => 3,
            LabEnv::LoadUnload => 2,
        }
    }

    pub fn feature_dim(&self, window: usize) -> usize {
        match self {
            LabEnv::MountainCar => 100,
            LabEnv::LoadUnload => window * 3 + (window - 1) * 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearLabConfig {
    pub env: LabEnv,
    pub latent_dim: usize,
    /// History window length for the stacked one-hot features
    /// (load-unload only).
    pub window: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub telemetry_stride: usize,
    pub target: TargetMode,
    pub seeds: Vec<u64>,
    pub n_trajectories: usize,
    pub trajectory_cap: usize,
}

impl LinearLabConfig {
    pub fn defaults(env: LabEnv, target: TargetMode) -> Self {
        LinearLabConfig {
            env,
            latent_dim: 2,
            window: 20,
            learning_rate: 0.01,
            steps: 500,
            telemetry_stride: 10,
            target,
            seeds: (0..100).collect(),
            n_trajectories: 10,
            trajectory_cap: 200,
        }
    }

    pub fn validate(&self) -> Result<(), LinearLabError> {
        if self.steps < 1 {
            return Err(LinearLabError::NoSteps);
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(LinearLabError::BadLearningRate);
        }
        let features = self.env.feature_dim(self.window);
        if self.latent_dim > features {
            return Err(LinearLabError::LatentTooWide {
                d: self.latent_dim,
                features,
            });
        }
        Ok(())
    }
}

/// Transition dataset in feature space, one row per transition.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Mat,
    pub actions_one_hot: Mat,
    pub next_features: Mat,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn mountain_car_grid() -> Featurizer {
    Featurizer::RbfGrid {
        lows: vec![-1.2, -0.07],
        highs: vec![0.5, 0.07],
        shape: vec![10, 10],
        width_frac: 0.15,
    }
}

/// Roll out the fixed behavior policy and featurize consecutive
/// history windows.
pub fn collect_dataset(
    config: &LinearLabConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, LinearLabError> {
    let n_actions = config.env.n_actions();
    let mut rows: Vec<f64> = Vec::new();
    let mut next_rows: Vec<f64> = Vec::new();
    let mut action_rows: Vec<f64> = Vec::new();
    let dim = config.env.feature_dim(config.window);
    match config.env {
        LabEnv::MountainCar => {
            let grid = mountain_car_grid();
            let mut env = MountainCar::new();
            let mut policy = ScriptedPolicy::EnergyPumping { velocity_index: 1 };
            for _ in 0..config.n_trajectories {
                let traj = rollout(&mut env, &mut policy, config.trajectory_cap, rng)?;
                for t in 0..traj.actions.len() {
                    rows.extend(rbf_featurize(&traj.observations[t], &grid).0);
                    next_rows.extend(rbf_featurize(&traj.observations[t + 1], &grid).0);
                    let mut a = vec![0.0; n_actions];
                    a[traj.actions[t]] = 1.0;
                    action_rows.extend(a);
                }
            }
        }
        LabEnv::LoadUnload => {
            let feat = Featurizer::WindowStack {
                k: config.window,
                n_obs_features: 3,
                n_actions,
            };
            let mut env = TabularEnv::new(make_load_unload());
            let mut policy = ScriptedPolicy::sticky(0.8, 0);
            for _ in 0..config.n_trajectories {
                let traj = rollout(&mut env, &mut policy, config.trajectory_cap, rng)?;
                for t in 0..traj.actions.len() {
                    rows.extend(feat.window_stack(&traj.observations, &traj.actions, t));
                    next_rows.extend(feat.window_stack(&traj.observations, &traj.actions, t + 1));
                    let mut a = vec![0.0; n_actions];
                    a[traj.actions[t]] = 1.0;
                    action_rows.extend(a);
                }
            }
        }
    }
    let n = rows.len() / dim;
    if n == 0 {
        return Err(LinearLabError::EmptyDataset);
    }
    Ok(Dataset {
        features: Mat::from_vec(n, dim, rows),
        actions_one_hot: Mat::from_vec(n, n_actions, action_rows),
        next_features: Mat::from_vec(n, dim, next_rows),
    })
}

/// Joint minimum-norm least-squares latent model: stacked solution of
/// [Sφ, A]·[θ_z; θ_a] = S'φ̃.
#[derive(Debug, Clone)]
pub struct ThetaSolution {
    /// (d + n_actions) x d; the top d rows act on the latent, the rest
    /// on the one-hot action.
    pub theta: Mat,
    /// Every singular value fell below the cutoff.
    pub degenerate: bool,
}

pub const SV_CUTOFF: f64 = 1e-10;

pub fn solve_theta(
    dataset: &Dataset,
    phi: &Mat,
    target_phi: &Mat,
    sv_cutoff: f64,
) -> Result<ThetaSolution, LinearLabError> {
    if dataset.is_empty() {
        return Err(LinearLabError::EmptyDataset);
    }
    let x = dataset
        .features
        .matmul(phi)
        .hcat(&dataset.actions_one_hot);
    let y = dataset.next_features.matmul(target_phi);
    let sol = pinv_solve(&x, &y, sv_cutoff)?;
    Ok(ThetaSolution {
        theta: sol.x,
        degenerate: sol.all_truncated,
    })
}

/// Mean squared residual (summed over latent dims, averaged over rows)
/// of the latent model under encoder `phi` and target `target_phi`.
pub fn zp_residual(dataset: &Dataset, phi: &Mat, target_phi: &Mat, theta: &Mat) -> f64 {
    let e = prediction_error(dataset, phi, target_phi, theta);
    let n = dataset.len() as f64;
    let f = e.frobenius_norm();
    f * f / n
}

fn prediction_error(dataset: &Dataset, phi: &Mat, target_phi: &Mat, theta: &Mat) -> Mat {
    let x = dataset
        .features
        .matmul(phi)
        .hcat(&dataset.actions_one_hot);
    x.matmul(theta).sub(&dataset.next_features.matmul(target_phi))
}

/// Gradient of the mean squared residual with respect to φ. The
/// online target contributes the extra −(2/N)·S'ᵀE·θ_zᵀ term; the
/// stop-gradient targets treat S'φ̃ as a constant.
pub fn phi_gradient(
    dataset: &Dataset,
    phi: &Mat,
    target_phi: &Mat,
    theta: &Mat,
    online: bool,
) -> Mat {
    let d = phi.cols();
    let e = prediction_error(dataset, phi, target_phi, theta);
    let n = dataset.len() as f64;
    let theta_z = Mat::from_fn(d, d, |i, j| theta.get(i, j));
    let mut grad = dataset
        .features
        .transpose()
        .matmul(&e)
        .matmul(&theta_z.transpose())
        .scale(2.0 / n);
    if online {
        let back = dataset
            .next_features
            .transpose()
            .matmul(&e)
            .scale(2.0 / n);
        grad = grad.sub(&back);
    }
    grad
}

/// Second moments of the dataset. Every per-step quantity in the
/// outer loop (normal equations, residual, gradient) is a function of
/// these alone, so computing them once removes the dataset-length
/// factor from the loop.
#[derive(Debug, Clone)]
pub struct Moments {
    n: f64,
    sts: Mat,
    sta: Mat,
    stsp: Mat,
    ata: Mat,
    atsp: Mat,
    spsp: Mat,
}

impl Moments {
    pub fn new(dataset: &Dataset) -> Self {
        let st = dataset.features.transpose();
        let at = dataset.actions_one_hot.transpose();
        Moments {
            n: dataset.len() as f64,
            sts: st.matmul(&dataset.features),
            sta: st.matmul(&dataset.actions_one_hot),
            stsp: st.matmul(&dataset.next_features),
            ata: at.matmul(&dataset.actions_one_hot),
            atsp: at.matmul(&dataset.next_features),
            spsp: dataset
                .next_features
                .transpose()
                .matmul(&dataset.next_features),
        }
    }
}

fn trace_dot(a: &Mat, b: &Mat) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn split_theta(theta: &Mat, d: usize) -> (Mat, Mat) {
    let na = theta.rows() - d;
    let theta_z = Mat::from_fn(d, theta.cols(), |i, j| theta.get(i, j));
    let theta_a = Mat::from_fn(na, theta.cols(), |i, j| theta.get(d + i, j));
    (theta_z, theta_a)
}

/// Minimum-norm least squares through the normal equations; the
/// pseudoinverse identity X⁺ = (XᵀX)⁺Xᵀ keeps the solution equal to
/// the direct form.
pub fn solve_theta_moments(
    m: &Moments,
    phi: &Mat,
    target_phi: &Mat,
    sv_cutoff: f64,
) -> Result<ThetaSolution, LinearLabError> {
    let phit = phi.transpose();
    let top = phit.matmul(&m.sts).matmul(phi).hcat(&phit.matmul(&m.sta));
    let bottom = m.sta.transpose().matmul(phi).hcat(&m.ata);
    let xtx = top.vcat(&bottom);
    let xty = phit
        .matmul(&m.stsp)
        .matmul(target_phi)
        .vcat(&m.atsp.matmul(target_phi));
    let sol = pinv_solve(&xtx, &xty, sv_cutoff)?;
    Ok(ThetaSolution {
        theta: sol.x,
        degenerate: sol.all_truncated,
    })
}

/// Mean squared residual from moments:
/// (tr θᵀXᵀXθ − 2 tr θᵀXᵀY + tr YᵀY) / N.
pub fn zp_residual_moments(m: &Moments, phi: &Mat, target_phi: &Mat, theta: &Mat) -> f64 {
    let d = phi.cols();
    let (theta_z, theta_a) = split_theta(theta, d);
    let szz = phi.transpose().matmul(&m.sts).matmul(phi);
    let sza = phi.transpose().matmul(&m.sta);
    // XᵀXθ assembled blockwise.
    let top = szz.matmul(&theta_z).add(&sza.matmul(&theta_a));
    let bottom = sza.transpose().matmul(&theta_z).add(&m.ata.matmul(&theta_a));
    let xtx_theta = top.vcat(&bottom);
    let xty = phi
        .transpose()
        .matmul(&m.stsp)
        .matmul(target_phi)
        .vcat(&m.atsp.matmul(target_phi));
    let yty = target_phi.transpose().matmul(&m.spsp).matmul(target_phi);
    let value = trace_dot(theta, &xtx_theta) - 2.0 * trace_dot(theta, &xty)
        + (0..yty.rows()).map(|i| yty.get(i, i)).sum::<f64>();
    (value / m.n).max(0.0)
}

/// Gradient of the mean squared residual with respect to φ, from
/// moments; matches `phi_gradient` on the underlying dataset.
pub fn phi_gradient_moments(
    m: &Moments,
    phi: &Mat,
    target_phi: &Mat,
    theta: &Mat,
    online: bool,
) -> Mat {
    let d = phi.cols();
    let (theta_z, theta_a) = split_theta(theta, d);
    // SᵀE = SᵀSφθ_z + SᵀAθ_a − SᵀS'φ̃
    let st_e = m
        .sts
        .matmul(phi)
        .matmul(&theta_z)
        .add(&m.sta.matmul(&theta_a))
        .sub(&m.stsp.matmul(target_phi));
    let mut grad = st_e.matmul(&theta_z.transpose()).scale(2.0 / m.n);
    if online {
        // S'ᵀE = S'ᵀSφθ_z + S'ᵀAθ_a − S'ᵀS'φ̃
        let spt_e = m
            .stsp
            .transpose()
            .matmul(phi)
            .matmul(&theta_z)
            .add(&m.atsp.transpose().matmul(&theta_a))
            .sub(&m.spsp.matmul(target_phi));
        grad = grad.sub(&spt_e.scale(2.0 / m.n));
    }
    grad
}

#[derive(Debug, Clone)]
pub struct TelemetryRow {
    pub step: usize,
    pub abs_cos: f64,
    pub gram_drift: f64,
    pub zp_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CollapseTrace {
    pub seed: u64,
    pub rows: Vec<TelemetryRow>,
    /// Loss exceeded the divergence guard and the run stopped early.
    pub aborted: bool,
}

impl CollapseTrace {
    pub fn final_abs_cos(&self) -> f64 {
        self.rows.last().map(|r| r.abs_cos).unwrap_or(f64::NAN)
    }

    pub fn final_gram_drift(&self) -> f64 {
        self.rows.last().map(|r| r.gram_drift).unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,abs_cos,gram_drift,zp_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                r.step, r.abs_cos, r.gram_drift, r.zp_loss
            ));
        }
        out
    }
}

/// Largest |cos| over column pairs of φ.
pub fn max_abs_column_cosine(phi: &Mat) -> f64 {
    let d = phi.cols();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let dot = phi.col_dot(i, j);
            let ni = phi.col_dot(i, i).sqrt();
            let nj = phi.col_dot(j, j).sqrt();
            if ni > 0.0 && nj > 0.0 {
                worst = worst.max((dot / (ni * nj)).abs());
            }
        }
    }
    worst.min(1.0)
}

fn gram(phi: &Mat) -> Mat {
    phi.transpose().matmul(phi)
}

const DIVERGENCE_GUARD: f64 = 1e12;

/// One collapse run: exact inner solve, one full-batch gradient step
/// on φ, telemetry every stride steps.
pub fn run_collapse_seed(config: &LinearLabConfig, seed: u64) -> Result<CollapseTrace, LinearLabError> {
    config.validate()?;
    let mut rng = StreamRng::new(seed).stream(0);
    let dataset = collect_dataset(config, &mut rng)?;
    let moments = Moments::new(&dataset);
    let dim = config.env.feature_dim(config.window);
    let d = config.latent_dim;
    let mut phi = orthogonal_init(dim, d, &mut rng);
    let mut phi_bar = phi.clone();
    let gram0 = gram(&phi);
    let gram0_norm = gram0.frobenius_norm();
    let mut rows = Vec::new();
    let mut aborted = false;
    let record = |step: usize, phi: &Mat, loss: f64, rows: &mut Vec<TelemetryRow>| {
        rows.push(TelemetryRow {
            step,
            abs_cos: max_abs_column_cosine(phi),
            gram_drift: gram(phi).sub(&gram0).frobenius_norm() / gram0_norm,
            zp_loss: loss,
        });
    };
    for step in 0..config.steps {
        let target_phi = if config.target.is_online() {
            phi.clone()
        } else {
            phi_bar.clone()
        };
        let theta = solve_theta_moments(&moments, &phi, &target_phi, SV_CUTOFF)?;
        let loss = zp_residual_moments(&moments, &phi, &target_phi, &theta.theta);
        if step % config.telemetry_stride == 0 {
            record(step, &phi, loss, &mut rows);
        }
        if !loss.is_finite() || loss > DIVERGENCE_GUARD {
            aborted = true;
            break;
        }
        let grad = phi_gradient_moments(
            &moments,
            &phi,
            &target_phi,
            &theta.theta,
            config.target.is_online(),
        );
        phi = phi.sub(&grad.scale(config.learning_rate));
        if !config.target.is_online() {
            // Reuse the parameter-update rule; φ lives in a one-layer
            // container for the purpose.
            let mut t = Net {
                arch: NetArch::Linear,
                w: vec![phi_bar, Mat::zeros(1, d)],
            };
            let o = Net {
                arch: NetArch::Linear,
                w: vec![phi.clone(), Mat::zeros(1, d)],
            };
            ema_update(&mut t, &o, config.target.mix()).expect("matching shapes");
            phi_bar = t.w.swap_remove(0);
        }
    }
    if !aborted {
        let target_phi = if config.target.is_online() {
            phi.clone()
        } else {
            phi_bar.clone()
        };
        let theta = solve_theta_moments(&moments, &phi, &target_phi, SV_CUTOFF)?;
        let loss = zp_residual_moments(&moments, &phi, &target_phi, &theta.theta);
        record(config.steps, &phi, loss, &mut rows);
    }
    Ok(CollapseTrace {
        seed,
        rows,
        aborted,
    })
}

/// All configured seeds, merged in seed order.
pub fn run_collapse(config: &LinearLabConfig) -> Result<Vec<CollapseTrace>, LinearLabError> {
    config
        .seeds
        .iter()
        .map(|&s| run_collapse_seed(config, s))
        .collect()
}

/// Median of a sample; NaN on empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
