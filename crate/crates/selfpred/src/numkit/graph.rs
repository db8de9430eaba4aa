//! Minimal reverse-mode differentiation over static feed-forward graphs.
//!
//! Graphs are tapes of matrix ops built once per loss evaluation; leaves
//! are inputs (no gradient) or params (gradient accumulated). Control
//! flow is not representable; callers unroll recurrences.

use super::mat::Mat;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a 1 x n row to every row of an m x n node.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Elu(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Columns [start, end) of the source node.
    SliceCols(NodeId, usize, usize),
}

struct Node {
    op: Op,
    value: Mat,
    grad: Mat,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("non-finite gradient at node {0}")]
    NonFiniteGradient(usize),
    #[error("loss node must be a 1x1 scalar")]
    NonScalarLoss,
}

/// A build-once, evaluate-many tape.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        let grad = Mat::zeros(value.rows(), value.cols());
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, value: Mat) -> NodeId {
        self.push(Op::Param, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = add_row_vals(self.value(a), self.value(row));
        self.push(Op::AddRow(a, row), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a, c), v)
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(elu);
        self.push(Op::Elu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Mat::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(Op::SumAll(a), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hcat(self.value(b));
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = slice_cols_vals(self.value(a), start, end);
        self.push(Op::SliceCols(a, start, end), v)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!((self.value(id).rows(), self.value(id).cols()), (1, 1));
        self.value(id).data()[0]
    }

    /// Overwrite a leaf value; callers must re-run `forward` afterwards.
    pub fn set_value(&mut self, id: NodeId, value: Mat) {
        let n = &mut self.nodes[id.0];
        assert!(
            matches!(n.op, Op::Input | Op::Param),
            "only leaf values may be reassigned"
        );
        assert_eq!((n.value.rows(), n.value.cols()), (value.rows(), value.cols()));
        n.value = value;
    }

    /// Recompute every non-leaf value in topological (insertion) order.
    pub fn forward(&mut self) {
        for i in 0..self.nodes.len() {
            let v = match self.nodes[i].op {
                Op::Input | Op::Param => continue,
                Op::MatMul(a, b) => self.value(a).matmul(self.value(b)),
                Op::Add(a, b) => self.value(a).add(self.value(b)),
                Op::AddRow(a, r) => add_row_vals(self.value(a), self.value(r)),
                Op::Sub(a, b) => self.value(a).sub(self.value(b)),
                Op::Mul(a, b) => self.value(a).zip_with(self.value(b), |x, y| x * y),
                Op::Scale(a, s) => self.value(a).scale(s),
                Op::AddConst(a, c) => self.value(a).map(|x| x + c),
                Op::Elu(a) => self.value(a).map(elu),
                Op::Tanh(a) => self.value(a).map(f64::tanh),
                Op::Softplus(a) => self.value(a).map(softplus),
                Op::Exp(a) => self.value(a).map(f64::exp),
                Op::Log(a) => self.value(a).map(f64::ln),
                Op::Square(a) => self.value(a).map(|x| x * x),
                Op::Clamp(a, lo, hi) => self.value(a).map(|x| x.clamp(lo, hi)),
                Op::SumAll(a) => Mat::from_vec(1, 1, vec![self.value(a).sum()]),
                Op::ConcatCols(a, b) => self.value(a).hcat(self.value(b)),
                Op::SliceCols(a, s, e) => slice_cols_vals(self.value(a), s, e),
            };
            self.nodes[i].value = v;
        }
    }

    /// Reverse pass from a scalar loss node; visits every node once.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        let l = &self.nodes[loss.0].value;
        if l.rows() != 1 || l.cols() != 1 {
            return Err(GraphError::NonScalarLoss);
        }
        for n in self.nodes.iter_mut() {
            n.grad = Mat::zeros(n.value.rows(), n.value.cols());
        }
        self.nodes[loss.0].grad = Mat::from_vec(1, 1, vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = self.nodes[i].grad.clone();
            if g.max_abs() == 0.0 {
                continue;
            }
            if !g.is_finite() {
                return Err(GraphError::NonFiniteGradient(i));
            }
            match self.nodes[i].op.clone() {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transpose());
                    let db = self.nodes[a.0].value.transpose().matmul(&g);
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::Add(a, b) => {
                    self.accum(a, &g);
                    self.accum(b, &g);
                }
                Op::AddRow(a, r) => {
                    self.accum(a, &g);
                    let mut rg = Mat::zeros(1, g.cols());
                    for i2 in 0..g.rows() {
                        for j in 0..g.cols() {
                            let v = rg.get(0, j) + g.get(i2, j);
                            rg.set(0, j, v);
                        }
                    }
                    self.accum(r, &rg);
                }
                Op::Sub(a, b) => {
                    self.accum(a, &g);
                    let nb = g.scale(-1.0);
                    self.accum(b, &nb);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_with(&self.nodes[b.0].value, |x, y| x * y);
                    let db = g.zip_with(&self.nodes[a.0].value, |x, y| x * y);
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::Scale(a, s) => {
                    let da = g.scale(s);
                    self.accum(a, &da);
                }
                Op::AddConst(a, _) => {
                    self.accum(a, &g);
                }
                Op::Elu(a) => {
                    let da = g.zip_with(&self.nodes[a.0].value, |gv, x| {
                        gv * if x > 0.0 { 1.0 } else { x.exp() }
                    });
                    self.accum(a, &da);
                }
                Op::Tanh(a) => {
                    let da = g.zip_with(&self.nodes[i].value, |gv, y| gv * (1.0 - y * y));
                    self.accum(a, &da);
                }
                Op::Softplus(a) => {
                    let da = g.zip_with(&self.nodes[a.0].value, |gv, x| gv * sigmoid(x));
                    self.accum(a, &da);
                }
                Op::Exp(a) => {
                    let da = g.zip_with(&self.nodes[i].value, |gv, y| gv * y);
                    self.accum(a, &da);
                }
                Op::Log(a) => {
                    let da = g.zip_with(&self.nodes[a.0].value, |gv, x| gv / x);
                    self.accum(a, &da);
                }
                Op::Square(a) => {
                    let da = g.zip_with(&self.nodes[a.0].value, |gv, x| gv * 2.0 * x);
                    self.accum(a, &da);
                }
                Op::Clamp(a, lo, hi) => {
                    let da = g.zip_with(&self.nodes[a.0].value, |gv, x| {
                        if x > lo && x < hi {
                            gv
                        } else {
                            0.0
                        }
                    });
                    self.accum(a, &da);
                }
                Op::SumAll(a) => {
                    let gs = g.data()[0];
                    let shape = &self.nodes[a.0].value;
                    let da = Mat::from_fn(shape.rows(), shape.cols(), |_, _| gs);
                    self.accum(a, &da);
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.nodes[a.0].value.cols();
                    let mut da = Mat::zeros(g.rows(), ac);
                    let mut db = Mat::zeros(g.rows(), g.cols() - ac);
                    for i2 in 0..g.rows() {
                        for j in 0..g.cols() {
                            if j < ac {
                                da.set(i2, j, g.get(i2, j));
                            } else {
                                db.set(i2, j - ac, g.get(i2, j));
                            }
                        }
                    }
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::SliceCols(a, s, _) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for i2 in 0..g.rows() {
                        for j in 0..g.cols() {
                            da.set(i2, s + j, g.get(i2, j));
                        }
                    }
                    self.accum(a, &da);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, delta: &Mat) {
        let g = &mut self.nodes[id.0].grad;
        *g = g.add(delta);
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn slice_cols_vals(a: &Mat, start: usize, end: usize) -> Mat {
    assert!(start < end && end <= a.cols());
    Mat::from_fn(a.rows(), end - start, |i, j| a.get(i, start + j))
}

fn add_row_vals(a: &Mat, row: &Mat) -> Mat {
    assert_eq!(row.rows(), 1);
    assert_eq!(a.cols(), row.cols());
    Mat::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + row.get(0, j))
}

/// Max relative error between reverse-mode and central-difference
/// gradients over the given parameter nodes.
pub fn grad_check(
    graph: &mut Graph,
    loss: NodeId,
    params: &[NodeId],
    eps: f64,
) -> Result<f64, GraphError> {
    assert!(eps > 1e-7 && eps < 1e-3, "eps must lie in (1e-7, 1e-3)");
    graph.forward();
    graph.backward(loss)?;
    let analytic: Vec<Mat> = params.iter().map(|&p| graph.grad(p).clone()).collect();
    let mut max_rel = 0.0f64;
    for (pi, &p) in params.iter().enumerate() {
        let base = graph.value(p).clone();
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut plus = base.clone();
                plus.set(i, j, base.get(i, j) + eps);
                graph.set_value(p, plus);
                graph.forward();
                let lp = graph.scalar(loss);
                let mut minus = base.clone();
                minus.set(i, j, base.get(i, j) - eps);
                graph.set_value(p, minus);
                graph.forward();
                let lm = graph.scalar(loss);
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic[pi].get(i, j);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max((a - numeric).abs() / denom);
            }
        }
        graph.set_value(p, base);
    }
    graph.forward();
    Ok(max_rel)
}
