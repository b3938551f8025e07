//! Eager reverse-mode differentiation over recorded matrix operations.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Node ids are
//! indices into the tape, so the recording order is already a topological
//! order and the backward sweep is a single reverse walk. Parameter nodes
//! snapshot values out of a [`ParamStore`] at record time; `backward`
//! accumulates their gradients back into the store's paired buffers.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numerics::params::ParamStore;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant w.r.t. differentiation; gradient is not propagated into it.
    Const,
    /// Differentiable input; gradient readable from [`BackwardResult::wrt`].
    Leaf,
    /// Snapshot of a parameter entry.
    Param { idx: usize },
    Affine { x: NodeId, w: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    /// `a * b^T`
    MatMulNT { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Exp { x: NodeId },
    Square { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    RowSoftmax { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    SumAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Per-node gradients of one backward sweep.
pub struct BackwardResult {
    grads: Vec<Option<Matrix>>,
}

impl BackwardResult {
    /// Gradient of the swept scalar w.r.t. the given node, if it received any.
    pub fn wrt(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data[0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Record a parameter entry; its current values are snapshotted.
    pub fn param(&mut self, params: &ParamStore, name: &str) -> Result<NodeId> {
        let idx = params.idx(name)?;
        let value = params.entry(idx).values.clone();
        Ok(self.push(Op::Param { idx }, value))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(x).affine(self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine { x, w, b }, v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, v))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNT { a, b }, v))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu { x }, v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp { x }, v)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v * v);
        self.push(Op::Square { x }, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(Op::Scale { x, c }, v)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar { x }, v)
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).row_softmax();
        self.push(Op::RowSoftmax { x }, v)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hcat(self.value(b))?;
        Ok(self.push(Op::Concat { a, b }, v))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(x).sum());
        self.push(Op::SumAll { x }, v)
    }

    /// Re-introduce a node's value as a constant (cuts the gradient path).
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// Reverse sweep from a scalar node with seed gradient `seed`.
    ///
    /// Parameter gradients are accumulated (`+=`) into `params.grads`; the
    /// caller zeroes them when accumulation is not wanted. Leaf gradients are
    /// readable from the returned [`BackwardResult`].
    pub fn backward_scaled(
        &self,
        loss: NodeId,
        seed: f64,
        params: &mut ParamStore,
    ) -> Result<BackwardResult> {
        let res = self.vjp(loss, seed)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { idx } = node.op {
                if let Some(g) = &res.grads[i] {
                    let entry = params.entry_mut(idx);
                    for (acc, &gv) in entry.grads.data.iter_mut().zip(&g.data) {
                        *acc += gv;
                    }
                }
            }
        }
        Ok(res)
    }

    pub fn backward(&self, loss: NodeId, params: &mut ParamStore) -> Result<BackwardResult> {
        self.backward_scaled(loss, 1.0, params)
    }

    /// Pure vector-Jacobian product: node gradients only, params untouched.
    pub fn vjp(&self, loss: NodeId, seed: f64) -> Result<BackwardResult> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward: loss is not on this tape".into()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward: loss must be 1x1, got {}x{}",
                lv.rows, lv.cols
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(seed));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(BackwardResult { grads })
    }

    fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, contrib: Matrix) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&contrib.data) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &self.nodes[i].op {
            Op::Const | Op::Leaf | Op::Param { .. } => {}
            Op::Affine { x, w, b } => {
                let dx = g.matmul_nt(val(*w)).expect("affine vjp dx");
                let dw = val(*x).matmul_tn(g).expect("affine vjp dw");
                let mut db = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (acc, &gv) in db.data.iter_mut().zip(g.row(r)) {
                        *acc += gv;
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                Self::accumulate(grads, *b, db);
            }
            Op::MatMul { a, b } => {
                let da = g.matmul_nt(val(*b)).expect("matmul vjp da");
                let db = val(*a).matmul_tn(g).expect("matmul vjp db");
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::MatMulNT { a, b } => {
                let da = g.matmul(val(*b)).expect("matmul_nt vjp da");
                let db = g.matmul_tn(val(*a)).expect("matmul_nt vjp db");
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::Relu { x } => {
                let dx = val(*x)
                    .zip(g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })
                    .expect("relu vjp");
                Self::accumulate(grads, *x, dx);
            }
            Op::Exp { x } => {
                let y = &self.nodes[i].value;
                let dx = y.zip(g, |yv, gv| yv * gv).expect("exp vjp");
                Self::accumulate(grads, *x, dx);
            }
            Op::Square { x } => {
                let dx = val(*x).zip(g, |xv, gv| 2.0 * xv * gv).expect("square vjp");
                Self::accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                let da = val(*b).zip(g, |bv, gv| bv * gv).expect("mul vjp da");
                let db = val(*a).zip(g, |av, gv| av * gv).expect("mul vjp db");
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::Scale { x, c } => {
                Self::accumulate(grads, *x, g.scale(*c));
            }
            Op::AddScalar { x } => {
                Self::accumulate(grads, *x, g.clone());
            }
            Op::RowSoftmax { x } => {
                // dx_row = y ⊙ (g - <g, y>)
                let y = &self.nodes[i].value;
                let mut dx = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, (&yv, &gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - dot);
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (val(*a).cols, val(*b).cols);
                let mut da = Matrix::zeros(g.rows, ca);
                let mut db = Matrix::zeros(g.rows, cb);
                for r in 0..g.rows {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::SumAll { x } => {
                let xv = val(*x);
                let gv = g.data[0];
                let dx = Matrix::from_vec(xv.rows, xv.cols, vec![gv; xv.len()]);
                Self::accumulate(grads, *x, dx);
            }
        }
    }
}

/// Composition of affine layers with ReLU on hidden layers and a linear
/// output layer. `layers` name parameter pairs `<layer>.w` / `<layer>.b`.
pub fn mlp_forward(
    tape: &mut Tape,
    params: &ParamStore,
    input: NodeId,
    layers: &[String],
) -> Result<NodeId> {
    let mut h = input;
    let n = layers.len();
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.param(params, &format!("{layer}.w"))?;
        let b = tape.param(params, &format!("{layer}.b"))?;
        h = tape.affine(h, w, b).map_err(|e| match e {
            Error::Dimension { details, .. } => Error::dimension(format!("layer {layer}"), details),
            other => other,
        })?;
        if i + 1 < n {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
