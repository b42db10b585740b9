//! The filler-generation network.
//!
//! At each decoding step the network attends over the previous hidden
//! state and the running structure accumulator S̃, gates the image
//! feature, builds a fresh TPR `S_t` through a third-order tensor, and
//! unbinds a filler vector `f_t` with a Hadamard-derived unbinding
//! vector. The filler feeds the recurrent cell.
//!
//! Two surfaces are provided over a single implementation: plain-tensor
//! entry points for experiments and tests, and [`GeneratorNodes`] for
//! building the same computation on a [`Graph`] during training. The
//! plain entry points run the graph path internally, so they can never
//! drift apart.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::init::xavier;
use crate::tensor::Tensor;
use crate::tpr::{RoleBasis, Tpr};

/// Dimensions of the generator network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorDims {
    /// Role/filler/embedding dimension; must be a power of two.
    pub d: usize,
    /// Hidden-state dimension of the recurrent cell.
    pub m: usize,
    /// Image feature dimension.
    pub k_v: usize,
}

/// All trainable tensors of the generator.
///
/// The attention over the gated image feature (`w_a_v`, `w_s_v`,
/// `b_a_v`) mirrors the structure of the role attention sized to the
/// feature dimension.
#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub w_a_u: Tensor, // [d, m]
    pub w_s_u: Tensor, // [d, d*d]
    pub b_a_u: Tensor, // [d]
    pub w_a_v: Tensor, // [k_v, m]
    pub w_s_v: Tensor, // [k_v, d*d]
    pub b_a_v: Tensor, // [k_v]
    pub c_s: Tensor,   // [d, d, k_v]
    pub b_s: Tensor,   // [d, d]
    pub basis: RoleBasis,
}

impl GeneratorParams {
    /// Fresh parameters with uniform fan-balanced init and zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &GeneratorDims, rng: &mut R) -> Result<GeneratorParams> {
        let GeneratorDims { d, m, k_v } = *dims;
        let basis = RoleBasis::sylvester(d)?;
        let p = GeneratorParams {
            w_a_u: xavier(&[d, m], rng),
            w_s_u: xavier(&[d, d * d], rng),
            b_a_u: Tensor::zeros(&[d]),
            w_a_v: xavier(&[k_v, m], rng),
            w_s_v: xavier(&[k_v, d * d], rng),
            b_a_v: Tensor::zeros(&[k_v]),
            c_s: xavier(&[d, d, k_v], rng),
            b_s: Tensor::zeros(&[d, d]),
            basis,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> GeneratorDims {
        GeneratorDims {
            d: self.basis.dim(),
            m: self.w_a_u.shape()[1],
            k_v: self.w_a_v.shape()[0],
        }
    }

    /// Audits every tensor shape against the dimensions implied by the
    /// basis; in particular the column count of `w_s_u` must be `d²`.
    pub fn validate(&self) -> Result<()> {
        let d = self.basis.dim();
        let m = self.w_a_u.shape().get(1).copied().unwrap_or(0);
        let k_v = self.w_a_v.shape().first().copied().unwrap_or(0);
        let checks: [(&str, &Tensor, Vec<usize>); 8] = [
            ("w_a_u", &self.w_a_u, vec![d, m]),
            ("w_s_u", &self.w_s_u, vec![d, d * d]),
            ("b_a_u", &self.b_a_u, vec![d]),
            ("w_a_v", &self.w_a_v, vec![k_v, m]),
            ("w_s_v", &self.w_s_v, vec![k_v, d * d]),
            ("b_a_v", &self.b_a_v, vec![k_v]),
            ("c_s", &self.c_s, vec![d, d, k_v]),
            ("b_s", &self.b_s, vec![d, d]),
        ];
        for (name, t, want) in checks {
            if t.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: "generator",
                    detail: format!("{name} has shape {:?}, want {want:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    /// Registers every tensor on a graph. With `trainable` the tensors
    /// become parameters (receive gradients); otherwise constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> GeneratorNodes {
        let mut reg =
            |t: &Tensor| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) };
        let w_a_u = reg(&self.w_a_u);
        let w_s_u = reg(&self.w_s_u);
        let b_a_u = reg(&self.b_a_u);
        let w_a_v = reg(&self.w_a_v);
        let w_s_v = reg(&self.w_s_v);
        let b_a_v = reg(&self.b_a_v);
        let c_s = reg(&self.c_s);
        let b_s = reg(&self.b_s);
        let u = g.leaf(self.basis.matrix().clone());
        GeneratorNodes { w_a_u, w_s_u, b_a_u, w_a_v, w_s_v, b_a_v, c_s, b_s, u }
    }
}

/// Graph handles for one bound set of generator parameters.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorNodes {
    pub w_a_u: NodeId,
    pub w_s_u: NodeId,
    pub b_a_u: NodeId,
    pub w_a_v: NodeId,
    pub w_s_v: NodeId,
    pub b_a_v: NodeId,
    pub c_s: NodeId,
    pub b_s: NodeId,
    /// The role basis matrix U (never trainable).
    pub u: NodeId,
}

impl GeneratorNodes {
    /// Tensors in canonical order, paired with their short names.
    pub fn named(&self) -> [(&'static str, NodeId); 8] {
        [
            ("w_a_u", self.w_a_u),
            ("w_s_u", self.w_s_u),
            ("b_a_u", self.b_a_u),
            ("w_a_v", self.w_a_v),
            ("w_s_v", self.w_s_v),
            ("b_a_v", self.b_a_v),
            ("c_s", self.c_s),
            ("b_s", self.b_s),
        ]
    }

    /// Role attention `a_u = σ(W_a_u·h + W_s_u·vec(S̃) + b_a_u)`.
    pub fn attention_u(&self, g: &mut Graph, h_prev: NodeId, s_tilde: NodeId) -> Result<NodeId> {
        let s_vec = g.vec_cols(s_tilde)?;
        let from_h = g.matvec(self.w_a_u, h_prev)?;
        let from_s = g.matvec(self.w_s_u, s_vec)?;
        let sum = g.add(from_h, from_s)?;
        let pre = g.add(sum, self.b_a_u)?;
        Ok(g.sigmoid(pre))
    }

    /// Feature attention with the same form as [`Self::attention_u`],
    /// sized to the image feature.
    pub fn attention_v(&self, g: &mut Graph, h_prev: NodeId, s_tilde: NodeId) -> Result<NodeId> {
        let s_vec = g.vec_cols(s_tilde)?;
        let from_h = g.matvec(self.w_a_v, h_prev)?;
        let from_s = g.matvec(self.w_s_v, s_vec)?;
        let sum = g.add(from_h, from_s)?;
        let pre = g.add(sum, self.b_a_v)?;
        Ok(g.sigmoid(pre))
    }

    /// `S_t = tanh(C_s ×₃ q + B_s)`.
    pub fn make_tpr(&self, g: &mut Graph, q: NodeId) -> Result<NodeId> {
        let contracted = g.contract3(self.c_s, q)?;
        let pre = g.add(contracted, self.b_s)?;
        Ok(g.tanh(pre))
    }

    /// `u_t = U·a_u`.
    pub fn unbinding_vector(&self, g: &mut Graph, a_u: NodeId) -> Result<NodeId> {
        g.matvec(self.u, a_u)
    }

    /// One full generator step: `f_t = S_t · u_t` from the previous
    /// hidden state, the raw image feature, and the S̃ accumulator node.
    pub fn step(&self, g: &mut Graph, h_prev: NodeId, v: NodeId, s_tilde: NodeId) -> Result<NodeId> {
        let a_u = self.attention_u(g, h_prev, s_tilde)?;
        let a_v = self.attention_v(g, h_prev, s_tilde)?;
        let q = gate_features_node(g, v, a_v)?;
        let s_t = self.make_tpr(g, q)?;
        let u_t = self.unbinding_vector(g, a_u)?;
        filler_node(g, s_t, u_t)
    }
}

/// `q = v ⊙ a_v` on the graph.
pub fn gate_features_node(g: &mut Graph, v: NodeId, a_v: NodeId) -> Result<NodeId> {
    g.mul(v, a_v)
}

/// `f_t = S_t · u_t` on the graph.
pub fn filler_node(g: &mut Graph, s_t: NodeId, u_t: NodeId) -> Result<NodeId> {
    g.matvec(s_t, u_t)
}

/// Per-sequence decoding state: the S̃ accumulator and the step counter.
#[derive(Clone, Debug)]
pub struct GeneratorState {
    s_tilde: Tpr,
    t: usize,
}

impl GeneratorState {
    /// Fresh state: S̃ = 0, t = 0.
    pub fn new(d: usize) -> Result<GeneratorState> {
        Ok(GeneratorState { s_tilde: Tpr::zero(d, d)?, t: 0 })
    }

    pub fn tpr(&self) -> &Tpr {
        &self.s_tilde
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    /// Appends the embedding of the token just emitted at role `t−1`.
    ///
    /// Must follow a [`generator_step`]; the role index is one less than
    /// the advanced step counter.
    pub fn append_emission(&self, x: &Tensor, basis: &RoleBasis) -> Result<GeneratorState> {
        if self.t == 0 {
            return Err(Error::Contract("append_emission before any generator step".into()));
        }
        Ok(GeneratorState { s_tilde: self.s_tilde.accumulate(x, self.t - 1, basis)?, t: self.t })
    }
}

fn one_shot<T>(
    params: &GeneratorParams,
    build: impl FnOnce(&mut Graph, &GeneratorNodes) -> Result<T>,
) -> Result<T> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g, false);
    build(&mut g, &nodes)
}

/// Plain-tensor role attention; see [`GeneratorNodes::attention_u`].
pub fn attention_u(params: &GeneratorParams, h_prev: &Tensor, state: &GeneratorState) -> Result<Tensor> {
    one_shot(params, |g, n| {
        let h = g.leaf(h_prev.clone());
        let s = g.leaf(state.tpr().matrix().clone());
        let out = n.attention_u(g, h, s)?;
        Ok(g.value(out).clone())
    })
}

/// Plain-tensor feature attention; see [`GeneratorNodes::attention_v`].
pub fn attention_v(params: &GeneratorParams, h_prev: &Tensor, state: &GeneratorState) -> Result<Tensor> {
    one_shot(params, |g, n| {
        let h = g.leaf(h_prev.clone());
        let s = g.leaf(state.tpr().matrix().clone());
        let out = n.attention_v(g, h, s)?;
        Ok(g.value(out).clone())
    })
}

/// `q = v ⊙ a_v` on plain tensors.
pub fn gate_features(v: &Tensor, a_v: &Tensor) -> Result<Tensor> {
    crate::tensor::elementwise(v, a_v, crate::tensor::ElemOp::Mul)
}

/// Plain-tensor `S_t`; see [`GeneratorNodes::make_tpr`].
pub fn make_tpr(params: &GeneratorParams, q: &Tensor) -> Result<Tensor> {
    one_shot(params, |g, n| {
        let qn = g.leaf(q.clone());
        let out = n.make_tpr(g, qn)?;
        Ok(g.value(out).clone())
    })
}

/// Plain-tensor unbinding vector `u_t = U·a_u`.
pub fn unbinding_vector(params: &GeneratorParams, a_u: &Tensor) -> Result<Tensor> {
    crate::tensor::matvec(params.basis.matrix(), a_u)
}

/// Plain-tensor filler extraction `f_t = S_t·u_t`.
pub fn filler(s_t: &Tensor, u_t: &Tensor) -> Result<Tensor> {
    crate::tensor::matvec(s_t, u_t)
}

/// One plain-tensor generator step.
///
/// Advances the step counter; the caller appends the emitted token's
/// embedding afterwards via [`GeneratorState::append_emission`]. Fails
/// with a capacity error once the role space is exhausted.
pub fn generator_step(
    params: &GeneratorParams,
    h_prev: &Tensor,
    v: &Tensor,
    state: &GeneratorState,
) -> Result<(Tensor, GeneratorState)> {
    let d = params.basis.dim();
    if state.t >= d {
        return Err(Error::Capacity { requested: state.t, capacity: d });
    }
    let f_t = one_shot(params, |g, n| {
        let h = g.leaf(h_prev.clone());
        let vv = g.leaf(v.clone());
        let s = g.leaf(state.tpr().matrix().clone());
        let out = n.step(g, h, vv, s)?;
        Ok(g.value(out).clone())
    })?;
    Ok((f_t, GeneratorState { s_tilde: state.s_tilde.clone(), t: state.t + 1 }))
}
