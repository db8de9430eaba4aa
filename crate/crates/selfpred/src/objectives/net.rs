//! Small dense networks expressed both as plain parameter sets and as
//! tape fragments for differentiation.

use crate::numkit::{Graph, Mat, NodeId, StreamRng};
use rand_chacha::ChaCha8Rng;

use super::ObjectiveError;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetArch {
    Linear,
    /// Two dense layers with an ELU in between.
    Mlp { hidden: usize },
}

/// Dense network with parameters held as plain matrices. Layout of
/// `w` is `[W, b]` for linear and `[W1, b1, W2, b2]` for the MLP;
/// biases are 1 x out rows.
#[derive(Debug, Clone)]
pub struct Net {
    pub arch: NetArch,
    pub w: Vec<Mat>,
}

fn dense_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let scale = 1.0 / (rows as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| StreamRng::standard_normal(rng) * scale)
}

impl Net {
    pub fn linear(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Net {
            arch: NetArch::Linear,
            w: vec![dense_init(in_dim, out_dim, rng), Mat::zeros(1, out_dim)],
        }
    }

    pub fn mlp(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Net {
            arch: NetArch::Mlp { hidden },
            w: vec![
                dense_init(in_dim, hidden, rng),
                Mat::zeros(1, hidden),
                dense_init(hidden, out_dim, rng),
                Mat::zeros(1, out_dim),
            ],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.last().unwrap().cols()
    }

    /// Push the parameters onto the tape and emit the forward pass for
    /// a batch `x` (N x in_dim). Returns the output node and the
    /// parameter nodes in `w` order.
    pub fn emit(&self, g: &mut Graph, x: NodeId) -> (NodeId, Vec<NodeId>) {
        let params: Vec<NodeId> = self.w.iter().map(|m| g.param(m.clone())).collect();
        let out = self.emit_with(g, x, &params);
        (out, params)
    }

    /// Forward pass reusing already-pushed parameter nodes (shared
    /// encoders, target reuse in online mode).
    pub fn emit_with(&self, g: &mut Graph, x: NodeId, params: &[NodeId]) -> NodeId {
        match self.arch {
            NetArch::Linear => {
                let xw = g.matmul(x, params[0]);
                g.add_row(xw, params[1])
            }
            NetArch::Mlp { .. } => {
                let h0 = g.matmul(x, params[0]);
                let h1 = g.add_row(h0, params[1]);
                let h2 = g.elu(h1);
                let o0 = g.matmul(h2, params[2]);
                g.add_row(o0, params[3])
            }
        }
    }

    /// Forward pass without a tape.
    pub fn forward_plain(&self, x: &Mat) -> Mat {
        match self.arch {
            NetArch::Linear => add_row(&x.matmul(&self.w[0]), &self.w[1]),
            NetArch::Mlp { .. } => {
                let h = add_row(&x.matmul(&self.w[0]), &self.w[1]).map(elu);
                add_row(&h.matmul(&self.w[2]), &self.w[3])
            }
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn add_row(a: &Mat, row: &Mat) -> Mat {
    Mat::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + row.get(0, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Deterministic,
    /// Network output is [mean | log-std]; log-std clamped to
    /// [LOG_STD_MIN, LOG_STD_MAX].
    DiagonalGaussian,
}

/// History encoder: featurized history window -> latent point or
/// diagonal-Gaussian latent distribution.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub net: Net,
    pub head: Head,
    pub latent_dim: usize,
}

/// Encoder output nodes on a tape.
pub struct EncoderNodes {
    pub mean: NodeId,
    pub log_std: Option<NodeId>,
}

impl Encoder {
    pub fn new(net: Net, head: Head, latent_dim: usize) -> Result<Self, ObjectiveError> {
        let want = match head {
            Head::Deterministic => latent_dim,
            Head::DiagonalGaussian => 2 * latent_dim,
        };
        if net.out_dim() != want {
            return Err(ObjectiveError::DimMismatch {
                expected: want,
                got: net.out_dim(),
            });
        }
        Ok(Encoder {
            net,
            head,
            latent_dim,
        })
    }

    pub fn emit(&self, g: &mut Graph, x: NodeId) -> (EncoderNodes, Vec<NodeId>) {
        let (out, params) = self.net.emit(g, x);
        (self.split_head(g, out), params)
    }

    pub fn emit_with(&self, g: &mut Graph, x: NodeId, params: &[NodeId]) -> EncoderNodes {
        let out = self.net.emit_with(g, x, params);
        self.split_head(g, out)
    }

    fn split_head(&self, g: &mut Graph, out: NodeId) -> EncoderNodes {
        match self.head {
            Head::Deterministic => EncoderNodes {
                mean: out,
                log_std: None,
            },
            Head::DiagonalGaussian => {
                let mean = g.slice_cols(out, 0, self.latent_dim);
                let raw = g.slice_cols(out, self.latent_dim, 2 * self.latent_dim);
                let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                EncoderNodes {
                    mean,
                    log_std: Some(log_std),
                }
            }
        }
    }

    /// Plain-forward (mean, clamped log-std, clamp-hit flag); log-std
    /// is None for deterministic heads.
    pub fn forward_plain(&self, x: &Mat) -> (Mat, Option<Mat>, bool) {
        let out = self.net.forward_plain(x);
        match self.head {
            Head::Deterministic => (out, None, false),
            Head::DiagonalGaussian => {
                let d = self.latent_dim;
                let mean = Mat::from_fn(out.rows(), d, |i, j| out.get(i, j));
                let raw = Mat::from_fn(out.rows(), d, |i, j| out.get(i, d + j));
                let hit = raw
                    .data()
                    .iter()
                    .any(|&v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
                let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
                (mean, Some(log_std), hit)
            }
        }
    }

    /// Whether any raw log-std output left the clamp range on `x`.
    pub fn clamp_hit(&self, x: &Mat) -> bool {
        self.forward_plain(x).2
    }
}

/// Latent transition model g(z, a): same head conventions as the
/// encoder, input is z concatenated with a one-hot action.
pub type DynamicsModel = Encoder;

/// Target-network update: target <- (1 - mix) * target + mix * online.
/// `mix` is the weight on the online parameters; mix = 1 is a copy
/// (detached semantics).
pub fn ema_update(target: &mut Net, online: &Net, mix: f64) -> Result<(), ObjectiveError> {
    assert!(mix > 0.0 && mix <= 1.0, "mix must lie in (0, 1]");
    if target.w.len() != online.w.len() {
        return Err(ObjectiveError::ShapeMismatch);
    }
    for (t, o) in target.w.iter_mut().zip(&online.w) {
        if (t.rows(), t.cols()) != (o.rows(), o.cols()) {
            return Err(ObjectiveError::ShapeMismatch);
        }
        *t = t.scale(1.0 - mix).add(&o.scale(mix));
    }
    Ok(())
}
