//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! replays the tape in reverse and accumulates gradients additively, so
//! parameters used at several timesteps receive the sum of their per-use
//! gradients. A graph is built per forward pass and discarded afterwards.

use crate::error::{Error, Result};
use crate::tensor::{self, ElemOp, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf { trainable: bool },
    Matmul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Outer(NodeId, NodeId),
    Elem(NodeId, NodeId, ElemOp),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Ln(NodeId),
    Contract3(NodeId, NodeId),
    VecCols(NodeId),
    Col(NodeId, usize),
    Pick(NodeId, usize),
    Sum(NodeId),
    Scale(NodeId, f64),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Single-threaded operation tape over immutable tensor values.
pub struct Graph {
    nodes: Vec<Node>,
    backward_run: bool,
    visited: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_run: false, visited: 0 }
    }

    // Non-finite values are allowed to flow through the tape; modules with
    // a finiteness contract (the recurrent state, the trainer) check at
    // their own boundaries and surface a numeric error.
    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a constant (non-trainable) leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Inserts a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of the last backward pass, if the node was on the
    /// loss path.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// Number of nodes visited by the last backward pass.
    pub fn backward_visits(&self) -> usize {
        self.visited
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> Result<NodeId> {
        let v = tensor::matvec(self.value(a), self.value(x))?;
        Ok(self.push(v, Op::MatVec(a, x)))
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::outer(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Outer(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::elementwise(self.value(a), self.value(b), ElemOp::Add)?;
        Ok(self.push(v, Op::Elem(a, b, ElemOp::Add)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::elementwise(self.value(a), self.value(b), ElemOp::Sub)?;
        Ok(self.push(v, Op::Elem(a, b, ElemOp::Sub)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::elementwise(self.value(a), self.value(b), ElemOp::Mul)?;
        Ok(self.push(v, Op::Elem(a, b, ElemOp::Mul)))
    }

    /// Folds a slice of same-shaped nodes with addition.
    pub fn add_many(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = ids
            .split_first()
            .ok_or_else(|| Error::Contract("add_many of no nodes".into()))?;
        let mut acc = first;
        for &id in rest {
            acc = self.add(acc, id)?;
        }
        Ok(acc)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = tensor::sigmoid(self.value(x));
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = tensor::tanh(self.value(x));
        self.push(v, Op::Tanh(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = tensor::softmax(self.value(x));
        self.push(v, Op::Softmax(x))
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("ln of non-positive value".into()));
        }
        let v = self.value(x).map(f64::ln);
        Ok(self.push(v, Op::Ln(x)))
    }

    pub fn contract3(&mut self, c: NodeId, q: NodeId) -> Result<NodeId> {
        let v = tensor::contract3(self.value(c), self.value(q))?;
        Ok(self.push(v, Op::Contract3(c, q)))
    }

    /// Column-stacking vectorization of a matrix node.
    pub fn vec_cols(&mut self, m: NodeId) -> Result<NodeId> {
        let v = tensor::vec_cols(self.value(m))?;
        Ok(self.push(v, Op::VecCols(m)))
    }

    /// Column gather from a matrix node (embedding lookup).
    pub fn col(&mut self, m: NodeId, j: usize) -> Result<NodeId> {
        let v = self.value(m).col(j)?;
        Ok(self.push(v, Op::Col(m, j)))
    }

    /// Selects one element of a vector as a scalar node.
    pub fn pick(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(Error::Rank { op: "pick", expected: "a vector", got: v.shape().to_vec() });
        }
        if i >= v.numel() {
            return Err(Error::Index { index: i, len: v.numel() });
        }
        let s = Tensor::scalar(v.data()[i]);
        Ok(self.push(s, Op::Pick(x, i)))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(s, Op::Sum(x))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| c * v);
        self.push(v, Op::Scale(x, c))
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        let slot = &mut self.nodes[id.0].grad;
        match slot {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss node.
    ///
    /// Visits the tape in reverse insertion order, which is a reverse
    /// topological order by construction, touching each node exactly once.
    /// Calling backward twice on the same graph is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_run {
            return Err(Error::Contract("backward already run on this graph".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_run = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        self.visited = 0;

        for i in (0..self.nodes.len()).rev() {
            self.visited += 1;
            let Some(up) = self.nodes[i].grad.clone() else { continue };
            // Enum is Copy-free; read what the rule needs before mutating.
            match self.nodes[i].op {
                Op::Leaf { .. } => {}
                Op::Matmul(a, b) => {
                    let (av, bv) = (self.value(a).clone(), self.value(b).clone());
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    // da[i][l] = sum_j up[i][j] * b[l][j]
                    let mut da = Tensor::zeros(av.shape());
                    for i2 in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += up.data()[i2 * n + j] * bv.data()[l * n + j];
                            }
                            da.data_mut()[i2 * k + l] = s;
                        }
                    }
                    // db[l][j] = sum_i a[i][l] * up[i][j]
                    let mut db = Tensor::zeros(bv.shape());
                    for l in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i2 in 0..m {
                                s += av.data()[i2 * k + l] * up.data()[i2 * n + j];
                            }
                            db.data_mut()[l * n + j] = s;
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MatVec(a, x) => {
                    let (av, xv) = (self.value(a).clone(), self.value(x).clone());
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let mut da = Tensor::zeros(av.shape());
                    for i2 in 0..m {
                        for l in 0..k {
                            da.data_mut()[i2 * k + l] = up.data()[i2] * xv.data()[l];
                        }
                    }
                    let mut dx = Tensor::zeros(xv.shape());
                    for l in 0..k {
                        let mut s = 0.0;
                        for i2 in 0..m {
                            s += av.data()[i2 * k + l] * up.data()[i2];
                        }
                        dx.data_mut()[l] = s;
                    }
                    self.accumulate(a, da);
                    self.accumulate(x, dx);
                }
                Op::Outer(a, b) => {
                    let (av, bv) = (self.value(a).clone(), self.value(b).clone());
                    let (m, n) = (av.numel(), bv.numel());
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for i2 in 0..m {
                        for j in 0..n {
                            let u = up.data()[i2 * n + j];
                            da.data_mut()[i2] += u * bv.data()[j];
                            db.data_mut()[j] += u * av.data()[i2];
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Elem(a, b, op) => match op {
                    ElemOp::Add => {
                        self.accumulate(a, up.clone());
                        self.accumulate(b, up);
                    }
                    ElemOp::Sub => {
                        let neg = up.map(|v| -v);
                        self.accumulate(a, up);
                        self.accumulate(b, neg);
                    }
                    ElemOp::Mul => {
                        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
                        let da = tensor::elementwise(&up, &bv, ElemOp::Mul)?;
                        let db = tensor::elementwise(&up, &av, ElemOp::Mul)?;
                        self.accumulate(a, da);
                        self.accumulate(b, db);
                    }
                },
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.clone();
                    let mut d = Tensor::zeros(y.shape());
                    for ((di, &yi), &ui) in
                        d.data_mut().iter_mut().zip(y.data()).zip(up.data())
                    {
                        *di = ui * yi * (1.0 - yi);
                    }
                    self.accumulate(x, d);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.clone();
                    let mut d = Tensor::zeros(y.shape());
                    for ((di, &yi), &ui) in
                        d.data_mut().iter_mut().zip(y.data()).zip(up.data())
                    {
                        *di = ui * (1.0 - yi * yi);
                    }
                    self.accumulate(x, d);
                }
                Op::Softmax(x) => {
                    // Per row: dz = p .* (du - (du . p))
                    let p = self.nodes[i].value.clone();
                    let cols = *p.shape().last().unwrap();
                    let mut d = Tensor::zeros(p.shape());
                    for (r, (prow, urow)) in
                        p.data().chunks(cols).zip(up.data().chunks(cols)).enumerate()
                    {
                        let dot: f64 = prow.iter().zip(urow).map(|(&p, &u)| p * u).sum();
                        for c in 0..cols {
                            d.data_mut()[r * cols + c] = prow[c] * (urow[c] - dot);
                        }
                    }
                    self.accumulate(x, d);
                }
                Op::Ln(x) => {
                    let xv = self.value(x).clone();
                    let mut d = Tensor::zeros(xv.shape());
                    for ((di, &xi), &ui) in
                        d.data_mut().iter_mut().zip(xv.data()).zip(up.data())
                    {
                        *di = ui / xi;
                    }
                    self.accumulate(x, d);
                }
                Op::Contract3(c, q) => {
                    let (cv, qv) = (self.value(c).clone(), self.value(q).clone());
                    let (d0, d1, k) = (cv.shape()[0], cv.shape()[1], cv.shape()[2]);
                    let mut dc = Tensor::zeros(cv.shape());
                    let mut dq = Tensor::zeros(qv.shape());
                    for i2 in 0..d0 {
                        for j in 0..d1 {
                            let u = up.data()[i2 * d1 + j];
                            let base = (i2 * d1 + j) * k;
                            for l in 0..k {
                                dc.data_mut()[base + l] += u * qv.data()[l];
                                dq.data_mut()[l] += u * cv.data()[base + l];
                            }
                        }
                    }
                    self.accumulate(c, dc);
                    self.accumulate(q, dq);
                }
                Op::VecCols(m) => {
                    let mv = self.value(m).clone();
                    let (rows, cols) = (mv.shape()[0], mv.shape()[1]);
                    let dm = tensor::unvec_cols(&up, rows, cols)?;
                    self.accumulate(m, dm);
                }
                Op::Col(m, j) => {
                    let shape = self.value(m).shape().to_vec();
                    let cols = shape[1];
                    let mut dm = Tensor::zeros(&shape);
                    for (i2, &u) in up.data().iter().enumerate() {
                        dm.data_mut()[i2 * cols + j] = u;
                    }
                    self.accumulate(m, dm);
                }
                Op::Pick(x, idx) => {
                    let mut dx = Tensor::zeros(self.value(x).shape());
                    dx.data_mut()[idx] = up.item();
                    self.accumulate(x, dx);
                }
                Op::Sum(x) => {
                    let shape = self.value(x).shape().to_vec();
                    let mut dx = Tensor::zeros(&shape);
                    let u = up.item();
                    for v in dx.data_mut() {
                        *v = u;
                    }
                    self.accumulate(x, dx);
                }
                Op::Scale(x, c) => {
                    let dx = up.map(|v| c * v);
                    self.accumulate(x, dx);
                }
            }
        }
        Ok(())
    }
}
