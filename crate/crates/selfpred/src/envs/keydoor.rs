//! Sparse-reward key-door gridworld compiled to exact tables.
//!
//! A wall splits the grid in two; the agent starts on the key side, picks
//! the key up by walking over it, opens the door by walking into it with
//! the key, and is rewarded for reaching the goal. Observations are
//! egocentric 3x3 views, so key possession and anything behind the agent
//! are hidden. Success pays 1 in the tables; the stepping wrapper rescales
//! that to 1 - 0.9*(steps taken)/(step cap) so faster solutions pay more.

use super::finite::{FinitePomdp, TabularEnv};
use super::{Env, EnvError, Step};
use crate::numkit::StreamRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const ACTIONS: usize = 3; // turn left, turn right, forward
const DIRS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)]; // E S W N

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct AgentState {
    x: i32,
    y: i32,
    dir: usize,
    has_key: bool,
    door_open: bool,
}

struct Layout {
    size: i32,
    wall_x: i32,
    mid_y: i32,
    key: (i32, i32),
    door: (i32, i32),
    goal: (i32, i32),
}

impl Layout {
    fn new(size: usize) -> Layout {
        assert!(size == 5 || size == 7, "size must be 5 or 7");
        let n = size as i32;
        let mid = n / 2;
        Layout {
            size: n,
            wall_x: mid,
            mid_y: mid,
            // Off the corridor: reaching it takes a detour, so the task
            // is not solvable by walking straight ahead.
            key: (1, mid - 1),
            door: (mid, mid),
            goal: (n - 1, mid),
        }
    }

    fn start(&self) -> AgentState {
        AgentState {
            x: 0,
            y: self.mid_y,
            dir: 0,
            has_key: false,
            door_open: false,
        }
    }

    fn is_wall(&self, x: i32, y: i32) -> bool {
        x < 0 || y < 0 || x >= self.size || y >= self.size || (x == self.wall_x && y != self.mid_y)
    }

    /// Cell appearance codes: 0 wall/out-of-bounds, 1 floor, 2 key,
    /// 3 closed door, 4 open door, 5 goal.
    fn cell_code(&self, x: i32, y: i32, s: &AgentState) -> u8 {
        if self.is_wall(x, y) {
            0
        } else if (x, y) == self.key && !s.has_key {
            2
        } else if (x, y) == self.door {
            if s.door_open {
                4
            } else {
                3
            }
        } else if (x, y) == self.goal {
            5
        } else {
            1
        }
    }

    /// The 3x3 patch around the agent rotated so it faces the top row.
    fn view(&self, s: &AgentState) -> [u8; 9] {
        let (fx, fy) = DIRS[s.dir];
        let (rx, ry) = DIRS[(s.dir + 1) % 4];
        let mut out = [0u8; 9];
        for (i, fwd) in [1i32, 0, -1].iter().enumerate() {
            for (j, right) in [-1i32, 0, 1].iter().enumerate() {
                let x = s.x + fwd * fx + right * rx;
                let y = s.y + fwd * fy + right * ry;
                out[i * 3 + j] = self.cell_code(x, y, s);
            }
        }
        out
    }

    /// Returns the next state and whether the move reached the goal.
    fn apply(&self, s: &AgentState, action: usize) -> (AgentState, bool) {
        let mut next = *s;
        match action {
            0 => next.dir = (s.dir + 3) % 4,
            1 => next.dir = (s.dir + 1) % 4,
            2 => {
                let (dx, dy) = DIRS[s.dir];
                let (tx, ty) = (s.x + dx, s.y + dy);
                let door_blocked =
                    (tx, ty) == self.door && !s.door_open && !s.has_key;
                if !self.is_wall(tx, ty) && !door_blocked {
                    next.x = tx;
                    next.y = ty;
                    if (tx, ty) == self.key {
                        next.has_key = true;
                    }
                    if (tx, ty) == self.door {
                        next.door_open = true;
                    }
                    if (tx, ty) == self.goal {
                        return (next, true);
                    }
                }
            }
            _ => unreachable!("action validated by caller"),
        }
        (next, false)
    }
}

/// Compile the key-door world to exact tables. States are the reachable
/// (position, orientation, key, door) tuples plus one absorbing terminal
/// entered on success; that transition is the only rewarded one.
pub fn make_grid_keydoor(size: usize, _rng: &mut ChaCha8Rng) -> FinitePomdp {
    let layout = Layout::new(size);
    let start = layout.start();

    // Breadth-first reachability to fix the state index order.
    let mut index: HashMap<AgentState, usize> = HashMap::new();
    let mut order: Vec<AgentState> = Vec::new();
    index.insert(start, 0);
    order.push(start);
    let mut head = 0;
    while head < order.len() {
        let s = order[head];
        head += 1;
        for a in 0..ACTIONS {
            let (next, goal) = layout.apply(&s, a);
            if !goal && !index.contains_key(&next) {
                index.insert(next, order.len());
                order.push(next);
            }
        }
    }
    let terminal = order.len();
    let n_states = terminal + 1;

    // Distinct views become observation indices; terminal gets its own.
    let mut view_index: HashMap<[u8; 9], usize> = HashMap::new();
    let mut obs_of: Vec<usize> = Vec::with_capacity(n_states);
    for s in &order {
        let v = layout.view(s);
        let next_id = view_index.len();
        obs_of.push(*view_index.entry(v).or_insert(next_id));
    }
    let n_observations = view_index.len() + 1;
    obs_of.push(n_observations - 1);

    let mut transition = vec![0.0; n_states * ACTIONS * n_states];
    let mut reward_mean = vec![0.0; n_states * ACTIONS];
    for (si, s) in order.iter().enumerate() {
        for a in 0..ACTIONS {
            let (next, goal) = layout.apply(s, a);
            let ni = if goal { terminal } else { index[&next] };
            transition[(si * ACTIONS + a) * n_states + ni] = 1.0;
            if goal {
                reward_mean[si * ACTIONS + a] = 1.0;
            }
        }
    }
    for a in 0..ACTIONS {
        transition[(terminal * ACTIONS + a) * n_states + terminal] = 1.0;
    }

    let mut emission = vec![0.0; n_states * n_observations];
    for (si, &o) in obs_of.iter().enumerate() {
        emission[si * n_observations + o] = 1.0;
    }
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;

    FinitePomdp {
        n_states,
        n_actions: ACTIONS,
        n_observations,
        transition,
        emission,
        reward_mean,
        initial,
        gamma: 0.99,
        horizon: keydoor_step_cap(size),
    }
}

/// The 3x3 cell-code patch behind each observation index, in the same
/// order `make_grid_keydoor` assigns them; the final index is the
/// absorbing terminal and gets an all-zero patch (impossible as a real
/// view, since the agent always stands on a non-wall cell).
pub fn keydoor_views(size: usize) -> Vec<[u8; 9]> {
    let layout = Layout::new(size);
    let start = layout.start();
    let mut index: HashMap<AgentState, usize> = HashMap::new();
    let mut order: Vec<AgentState> = Vec::new();
    index.insert(start, 0);
    order.push(start);
    let mut head = 0;
    while head < order.len() {
        let s = order[head];
        head += 1;
        for a in 0..ACTIONS {
            let (next, goal) = layout.apply(&s, a);
            if !goal && !index.contains_key(&next) {
                index.insert(next, order.len());
                order.push(next);
            }
        }
    }
    let mut view_index: HashMap<[u8; 9], usize> = HashMap::new();
    let mut views: Vec<[u8; 9]> = Vec::new();
    for s in &order {
        let v = layout.view(s);
        view_index.entry(v).or_insert_with(|| {
            views.push(v);
            views.len() - 1
        });
    }
    views.push([0u8; 9]);
    views
}

/// Cell codes run 0..=5; each cell becomes a one-hot block.
pub const PATCH_CODES: usize = 6;

/// The key-door world observed as its raw 3x3 patch (nine cells, each
/// a one-hot over the cell codes) instead of a one-hot over whole
/// views. Value estimation then has to build features that compose
/// cells, which is where the auxiliary losses earn their keep.
pub struct KeyDoorPatchEnv {
    inner: KeyDoorEnv,
    views: Vec<[u8; 9]>,
    noise: f64,
}

impl KeyDoorPatchEnv {
    pub fn new(size: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_noise(size, 0.0, rng)
    }

    /// Sensor noise: i.i.d. Gaussian of the given std on every feature,
    /// drawn fresh each step. Nonzero noise keeps the underlying world
    /// intact but stops value estimates from memorising exact feature
    /// vectors, so generalisation across readings of the same view is
    /// what gets evaluated.
    pub fn with_noise(size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        KeyDoorPatchEnv {
            inner: KeyDoorEnv::new(size, rng),
            views: keydoor_views(size),
            noise,
        }
    }

    fn featurize(&self, one_hot_obs: &[f64]) -> Vec<f64> {
        let idx = one_hot_obs
            .iter()
            .position(|&p| p == 1.0)
            .expect("inner emissions are one-hot");
        let patch = &self.views[idx];
        let mut out = vec![0.0; 9 * PATCH_CODES];
        for (cell, &code) in patch.iter().enumerate() {
            out[cell * PATCH_CODES + code as usize] = 1.0;
        }
        out
    }

    fn perturb(&self, obs: &mut [f64], rng: &mut ChaCha8Rng) {
        if self.noise > 0.0 {
            for v in obs.iter_mut() {
                *v += self.noise * StreamRng::standard_normal(rng);
            }
        }
    }
}

impl Env for KeyDoorPatchEnv {
    fn obs_dim(&self) -> usize {
        9 * PATCH_CODES
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let obs = self.inner.reset(rng);
        let mut out = self.featurize(&obs);
        self.perturb(&mut out, rng);
        out
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let step = self.inner.step(action, rng)?;
        let mut obs = self.featurize(&step.obs);
        self.perturb(&mut obs, rng);
        Ok(Step {
            obs,
            reward: step.reward,
            done: step.done,
        })
    }
}

pub fn keydoor_step_cap(size: usize) -> usize {
    // Generous relative to the shortest solution (~size + 2 moves).
    20 * size
}

/// Episodic wrapper: ends the episode on success and rescales the unit
/// table reward to 1 - 0.9*H/T for a success after H of T allowed steps.
pub struct KeyDoorEnv {
    inner: TabularEnv,
    steps: usize,
    cap: usize,
    done: bool,
}

impl KeyDoorEnv {
    pub fn new(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let model = make_grid_keydoor(size, rng);
        let cap = model.horizon;
        KeyDoorEnv {
            inner: TabularEnv::new(model),
            steps: 0,
            cap,
            done: true,
        }
    }

    pub fn model(&self) -> &FinitePomdp {
        self.inner.model()
    }
}

impl Env for KeyDoorEnv {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.steps = 0;
        self.done = false;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let mut step = self.inner.step(action, rng)?;
        self.steps += 1;
        if step.reward > 0.0 {
            step.reward = 1.0 - 0.9 * self.steps as f64 / self.cap as f64;
            step.done = true;
        }
        self.done = step.done;
        Ok(step)
    }
}
