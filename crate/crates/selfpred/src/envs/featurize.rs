//! Fixed feature maps: Gaussian bumps on a grid, one-hot codes, and
//! zero-padded history windows.

/// A declared feature map with a fixed output dimension.
#[derive(Debug, Clone)]
pub enum Featurizer {
    /// Unnormalized Gaussian bumps at the nodes of a regular grid over a
    /// box; per-dimension width is `width_frac` of that dimension's span.
    RbfGrid {
        lows: Vec<f64>,
        highs: Vec<f64>,
        shape: Vec<usize>,
        width_frac: f64,
    },
    OneHot { size: usize },
    /// Stacks the last `k` observation feature vectors with the `k-1`
    /// one-hot actions between them, zero-padding before episode start.
    WindowStack {
        k: usize,
        n_obs_features: usize,
        n_actions: usize,
    },
}

impl Featurizer {
    pub fn output_dim(&self) -> usize {
        match self {
            Featurizer::RbfGrid { shape, .. } => shape.iter().product(),
            Featurizer::OneHot { size } => *size,
            Featurizer::WindowStack {
                k,
                n_obs_features,
                n_actions,
            } => k * n_obs_features + (k - 1) * n_actions,
        }
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        match self {
            Featurizer::OneHot { size } => {
                assert!(index < *size);
                let mut v = vec![0.0; *size];
                v[index] = 1.0;
                v
            }
            _ => panic!("one_hot only applies to the one-hot featurizer"),
        }
    }

    /// Encode the history ending at observation index `t`: observations
    /// o_{t-k+1..t} interleaved with actions a_{t-k+1..t-1}, newest last,
    /// zeros in place of anything before the episode started.
    pub fn window_stack(&self, observations: &[Vec<f64>], actions: &[usize], t: usize) -> Vec<f64> {
        let Featurizer::WindowStack {
            k,
            n_obs_features,
            n_actions,
        } = self
        else {
            panic!("window_stack only applies to the window-stack featurizer")
        };
        assert!(t < observations.len());
        assert!(observations.len() == actions.len() + 1);
        let mut out = Vec::with_capacity(self.output_dim());
        for i in 0..*k {
            // Slot i covers time t - k + 1 + i.
            let time = t as isize - *k as isize + 1 + i as isize;
            if i > 0 {
                // Action taken between slot i-1 and slot i, at time - 1.
                let mut a_vec = vec![0.0; *n_actions];
                let a_time = time - 1;
                if a_time >= 0 {
                    a_vec[actions[a_time as usize]] = 1.0;
                }
                out.extend(a_vec);
            }
            if time >= 0 {
                let obs = &observations[time as usize];
                assert_eq!(obs.len(), *n_obs_features);
                out.extend_from_slice(obs);
            } else {
                out.extend(std::iter::repeat(0.0).take(*n_obs_features));
            }
        }
        out
    }
}

/// Unnormalized Gaussian bump activations over the grid; states outside
/// the box are clamped, and the flag reports whether clamping occurred.
pub fn rbf_featurize(state: &[f64], grid: &Featurizer) -> (Vec<f64>, bool) {
    let Featurizer::RbfGrid {
        lows,
        highs,
        shape,
        width_frac,
    } = grid
    else {
        panic!("rbf_featurize needs an rbf-grid featurizer")
    };
    assert_eq!(state.len(), lows.len());
    let dims = lows.len();
    let mut clamped = false;
    let state: Vec<f64> = state
        .iter()
        .zip(lows.iter().zip(highs))
        .map(|(&x, (&lo, &hi))| {
            if x < lo || x > hi {
                clamped = true;
            }
            x.clamp(lo, hi)
        })
        .collect();
    let widths: Vec<f64> = (0..dims)
        .map(|d| width_frac * (highs[d] - lows[d]))
        .collect();
    let n: usize = shape.iter().product();
    let mut features = Vec::with_capacity(n);
    for flat in 0..n {
        // Unravel the flat index into grid coordinates, last dim fastest.
        let mut rem = flat;
        let mut sq_dist = 0.0;
        for d in (0..dims).rev() {
            let idx = rem % shape[d];
            rem /= shape[d];
            let center = if shape[d] == 1 {
                0.5 * (lows[d] + highs[d])
            } else {
                lows[d] + (highs[d] - lows[d]) * idx as f64 / (shape[d] - 1) as f64
            };
            let z = (state[d] - center) / widths[d];
            sq_dist += z * z;
        }
        features.push((-sq_dist).exp());
    }
    (features, clamped)
}
