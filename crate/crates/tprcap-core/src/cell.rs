//! The decomposed recurrent cell.
//!
//! Each of the four gates can take its word-embedding input, its hidden
//! input, and its filler (TPR) input either as a plain projection `W·x`
//! or tag-factorized as `(W_m·S) ⊙ (W_n·x)`, where `S` is the sample's
//! semantic tag vector. The three independent toggles yield the six
//! model variants; the `g` gate uses the logistic sigmoid as its
//! candidate activation by default, with tanh available as a switch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::init::xavier;
use crate::tensor::Tensor;

/// Which inputs are tag-decomposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantConfig {
    pub decompose_embedding: bool,
    pub decompose_hidden: bool,
    pub decompose_tpr: bool,
}

impl VariantConfig {
    /// The six named variants, in presentation order.
    pub const ALL: [VariantConfig; 6] = [
        VariantConfig { decompose_embedding: true, decompose_hidden: false, decompose_tpr: false },
        VariantConfig { decompose_embedding: false, decompose_hidden: true, decompose_tpr: false },
        VariantConfig { decompose_embedding: true, decompose_hidden: true, decompose_tpr: false },
        VariantConfig { decompose_embedding: true, decompose_hidden: false, decompose_tpr: true },
        VariantConfig { decompose_embedding: false, decompose_hidden: true, decompose_tpr: true },
        VariantConfig { decompose_embedding: true, decompose_hidden: true, decompose_tpr: true },
    ];

    const NAMES: [&'static str; 6] = ["E+T", "H+T", "H+E+T", "E+dT", "H+dT", "H+E+dT"];

    /// Looks up a preset by its display name (e.g. `"H+E+dT"`).
    pub fn by_name(name: &str) -> Option<VariantConfig> {
        Self::NAMES.iter().position(|&n| n == name).map(|i| Self::ALL[i])
    }

    /// Display name if this combination is one of the six presets.
    pub fn name(&self) -> Option<&'static str> {
        Self::ALL.iter().position(|c| c == self).map(|i| Self::NAMES[i])
    }
}

/// Candidate (`g` gate) activation; sigmoid as published.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GActivation {
    #[default]
    Sigmoid,
    Tanh,
}

/// Dimensions of the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellDims {
    /// Hidden/cell state width.
    pub m: usize,
    /// Word embedding dimension.
    pub d_emb: usize,
    /// Filler dimension (the generator's `d`).
    pub d: usize,
    /// Tag vector length.
    pub k_s: usize,
}

/// One gate's tensors: plain projections, bias, and the three pairs of
/// decomposition factors.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w_x: Tensor,  // [m, d_emb]
    pub w_h: Tensor,  // [m, m]
    pub w_t: Tensor,  // [m, d]
    pub b: Tensor,    // [m]
    pub w_xm: Tensor, // [m, k_s]
    pub w_xn: Tensor, // [m, d_emb]
    pub w_hm: Tensor, // [m, k_s]
    pub w_hn: Tensor, // [m, m]
    pub p_m: Tensor,  // [m, k_s]
    pub p_n: Tensor,  // [m, d]
}

impl GateParams {
    fn init<R: Rng + ?Sized>(dims: &CellDims, rng: &mut R) -> GateParams {
        let CellDims { m, d_emb, d, k_s } = *dims;
        GateParams {
            w_x: xavier(&[m, d_emb], rng),
            w_h: xavier(&[m, m], rng),
            w_t: xavier(&[m, d], rng),
            b: Tensor::zeros(&[m]),
            w_xm: xavier(&[m, k_s], rng),
            w_xn: xavier(&[m, d_emb], rng),
            w_hm: xavier(&[m, k_s], rng),
            w_hn: xavier(&[m, m], rng),
            p_m: xavier(&[m, k_s], rng),
            p_n: xavier(&[m, d], rng),
        }
    }

    /// Tensor fields in canonical order with their short names.
    pub fn named(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("w_x", &self.w_x),
            ("w_h", &self.w_h),
            ("w_t", &self.w_t),
            ("b", &self.b),
            ("w_xm", &self.w_xm),
            ("w_xn", &self.w_xn),
            ("w_hm", &self.w_hm),
            ("w_hn", &self.w_hn),
            ("p_m", &self.p_m),
            ("p_n", &self.p_n),
        ]
    }

    fn validate(&self, gate: &'static str, dims: &CellDims) -> Result<()> {
        let CellDims { m, d_emb, d, k_s } = *dims;
        let wants: [(&str, &Tensor, Vec<usize>); 10] = [
            ("w_x", &self.w_x, vec![m, d_emb]),
            ("w_h", &self.w_h, vec![m, m]),
            ("w_t", &self.w_t, vec![m, d]),
            ("b", &self.b, vec![m]),
            ("w_xm", &self.w_xm, vec![m, k_s]),
            ("w_xn", &self.w_xn, vec![m, d_emb]),
            ("w_hm", &self.w_hm, vec![m, k_s]),
            ("w_hn", &self.w_hn, vec![m, m]),
            ("p_m", &self.p_m, vec![m, k_s]),
            ("p_n", &self.p_n, vec![m, d]),
        ];
        for (name, t, want) in wants {
            if t.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: "cell",
                    detail: format!("{gate}.{name} has shape {:?}, want {want:?}", t.shape()),
                });
            }
        }
        Ok(())
    }
}

/// Gate names in canonical order.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// The four gates' parameters.
#[derive(Clone, Debug)]
pub struct CellParams {
    pub dims: CellDims,
    pub i: GateParams,
    pub f: GateParams,
    pub o: GateParams,
    pub g: GateParams,
}

impl CellParams {
    pub fn init<R: Rng + ?Sized>(dims: &CellDims, rng: &mut R) -> CellParams {
        CellParams {
            dims: *dims,
            i: GateParams::init(dims, rng),
            f: GateParams::init(dims, rng),
            o: GateParams::init(dims, rng),
            g: GateParams::init(dims, rng),
        }
    }

    pub fn gates(&self) -> [(&'static str, &GateParams); 4] {
        [("i", &self.i), ("f", &self.f), ("o", &self.o), ("g", &self.g)]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, gate) in self.gates() {
            gate.validate(name, &self.dims)?;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> CellNodes {
        let mut reg = |gate: &GateParams| {
            let mut one =
                |t: &Tensor| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) };
            GateNodes {
                w_x: one(&gate.w_x),
                w_h: one(&gate.w_h),
                w_t: one(&gate.w_t),
                b: one(&gate.b),
                w_xm: one(&gate.w_xm),
                w_xn: one(&gate.w_xn),
                w_hm: one(&gate.w_hm),
                w_hn: one(&gate.w_hn),
                p_m: one(&gate.p_m),
                p_n: one(&gate.p_n),
            }
        };
        CellNodes { i: reg(&self.i), f: reg(&self.f), o: reg(&self.o), g: reg(&self.g) }
    }
}

/// Graph handles for one gate.
#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub w_t: NodeId,
    pub b: NodeId,
    pub w_xm: NodeId,
    pub w_xn: NodeId,
    pub w_hm: NodeId,
    pub w_hn: NodeId,
    pub p_m: NodeId,
    pub p_n: NodeId,
}

impl GateNodes {
    pub fn named(&self) -> [(&'static str, NodeId); 10] {
        [
            ("w_x", self.w_x),
            ("w_h", self.w_h),
            ("w_t", self.w_t),
            ("b", self.b),
            ("w_xm", self.w_xm),
            ("w_xn", self.w_xn),
            ("w_hm", self.w_hm),
            ("w_hn", self.w_hn),
            ("p_m", self.p_m),
            ("p_n", self.p_n),
        ]
    }

    /// `(W_x,*m·S) ⊙ (W_x,*n·x_prev)` — the embedding input, factorized.
    pub fn decompose_embedding(
        &self,
        g: &mut Graph,
        x_prev: NodeId,
        s_tags: NodeId,
    ) -> Result<NodeId> {
        let tag_gate = g.matvec(self.w_xm, s_tags)?;
        let proj = g.matvec(self.w_xn, x_prev)?;
        g.mul(tag_gate, proj)
    }

    /// `(W_h,*m·S) ⊙ (W_h,*n·h_prev)` — the hidden input, factorized.
    pub fn decompose_hidden(
        &self,
        g: &mut Graph,
        h_prev: NodeId,
        s_tags: NodeId,
    ) -> Result<NodeId> {
        let tag_gate = g.matvec(self.w_hm, s_tags)?;
        let proj = g.matvec(self.w_hn, h_prev)?;
        g.mul(tag_gate, proj)
    }

    /// `(P_*m·S) ⊙ (P_*n·T)` — the filler input, factorized.
    pub fn decompose_tpr(&self, g: &mut Graph, t: NodeId, s_tags: NodeId) -> Result<NodeId> {
        let tag_gate = g.matvec(self.p_m, s_tags)?;
        let proj = g.matvec(self.p_n, t)?;
        g.mul(tag_gate, proj)
    }

    /// Pre-activation of this gate under a variant configuration.
    fn pre(
        &self,
        g: &mut Graph,
        cfg: &VariantConfig,
        x_prev: NodeId,
        h_prev: NodeId,
        t: NodeId,
        s_tags: NodeId,
    ) -> Result<NodeId> {
        let x_term = if cfg.decompose_embedding {
            self.decompose_embedding(g, x_prev, s_tags)?
        } else {
            g.matvec(self.w_x, x_prev)?
        };
        let h_term = if cfg.decompose_hidden {
            self.decompose_hidden(g, h_prev, s_tags)?
        } else {
            g.matvec(self.w_h, h_prev)?
        };
        let t_term = if cfg.decompose_tpr {
            self.decompose_tpr(g, t, s_tags)?
        } else {
            g.matvec(self.w_t, t)?
        };
        let xh = g.add(x_term, h_term)?;
        let xht = g.add(xh, t_term)?;
        g.add(xht, self.b)
    }
}

/// Graph handles for the whole cell.
#[derive(Clone, Copy, Debug)]
pub struct CellNodes {
    pub i: GateNodes,
    pub f: GateNodes,
    pub o: GateNodes,
    pub g: GateNodes,
}

impl CellNodes {
    pub fn gates(&self) -> [(&'static str, GateNodes); 4] {
        [("i", self.i), ("f", self.f), ("o", self.o), ("g", self.g)]
    }

    /// One recurrence step; returns `(h_t, c_t)` nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        g: &mut Graph,
        cfg: &VariantConfig,
        g_act: GActivation,
        x_prev: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        t_filler: NodeId,
        s_tags: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let i_pre = self.i.pre(g, cfg, x_prev, h_prev, t_filler, s_tags)?;
        let f_pre = self.f.pre(g, cfg, x_prev, h_prev, t_filler, s_tags)?;
        let o_pre = self.o.pre(g, cfg, x_prev, h_prev, t_filler, s_tags)?;
        let g_pre = self.g.pre(g, cfg, x_prev, h_prev, t_filler, s_tags)?;
        let i_t = g.sigmoid(i_pre);
        let f_t = g.sigmoid(f_pre);
        let o_t = g.sigmoid(o_pre);
        let g_t = match g_act {
            GActivation::Sigmoid => g.sigmoid(g_pre),
            GActivation::Tanh => g.tanh(g_pre),
        };
        let keep = g.mul(f_t, c_prev)?;
        let write = g.mul(i_t, g_t)?;
        let c_t = g.add(keep, write)?;
        let c_squashed = g.tanh(c_t);
        let h_t = g.mul(o_t, c_squashed)?;
        Ok((h_t, c_t))
    }
}

/// Hidden and cell state of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Tensor, // [m]
    pub c: Tensor, // [m]
}

impl CellState {
    pub fn zeros(m: usize) -> CellState {
        CellState { h: Tensor::zeros(&[m]), c: Tensor::zeros(&[m]) }
    }

    /// Errors with a numeric failure if either tensor has a NaN/Inf.
    pub fn check_finite(&self) -> Result<()> {
        if !self.h.is_finite() || !self.c.is_finite() {
            return Err(Error::Numeric("non-finite recurrent state".into()));
        }
        Ok(())
    }
}

/// The raw recurrence given already-activated gate values:
/// `c_t = f ⊙ c_prev + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.
///
/// Exposed so the recurrence identities can be tested with injected
/// gates, bypassing the sigmoids.
pub fn combine_gates(
    i: &Tensor,
    f: &Tensor,
    o: &Tensor,
    g: &Tensor,
    c_prev: &Tensor,
) -> Result<CellState> {
    use crate::tensor::{elementwise, ElemOp};
    let keep = elementwise(f, c_prev, ElemOp::Mul)?;
    let write = elementwise(i, g, ElemOp::Mul)?;
    let c = elementwise(&keep, &write, ElemOp::Add)?;
    let h = elementwise(o, &crate::tensor::tanh(&c), ElemOp::Mul)?;
    Ok(CellState { h, c })
}

/// One plain-tensor recurrence step.
///
/// Returns a numeric error if the produced state is not finite.
pub fn cell_step(
    params: &CellParams,
    cfg: &VariantConfig,
    g_act: GActivation,
    x_prev: &Tensor,
    state: &CellState,
    t_filler: &Tensor,
    s_tags: &Tensor,
) -> Result<CellState> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g, false);
    let x = g.leaf(x_prev.clone());
    let h = g.leaf(state.h.clone());
    let c = g.leaf(state.c.clone());
    let t = g.leaf(t_filler.clone());
    let s = g.leaf(s_tags.clone());
    let (h_t, c_t) = nodes.step(&mut g, cfg, g_act, x, h, c, t, s)?;
    let next = CellState { h: g.value(h_t).clone(), c: g.value(c_t).clone() };
    next.check_finite()?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{gradcheck_inputs, GRADCHECK_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIMS: CellDims = CellDims { m: 6, d_emb: 5, d: 4, k_s: 3 };

    fn params(seed: u64) -> CellParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CellParams::init(&DIMS, &mut rng)
    }

    fn zero_params() -> CellParams {
        let mut p = params(0);
        for gate in [&mut p.i, &mut p.f, &mut p.o, &mut p.g] {
            for t in [
                &mut gate.w_x,
                &mut gate.w_h,
                &mut gate.w_t,
                &mut gate.b,
                &mut gate.w_xm,
                &mut gate.w_xn,
                &mut gate.w_hm,
                &mut gate.w_hn,
                &mut gate.p_m,
                &mut gate.p_n,
            ] {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        }
        p
    }

    fn rand_inputs(seed: u64) -> (Tensor, CellState, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[5], -1.0, 1.0, &mut rng);
        let state = CellState {
            h: Tensor::uniform(&[6], -0.9, 0.9, &mut rng),
            c: Tensor::uniform(&[6], -1.5, 1.5, &mut rng),
        };
        let t = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
        let s = Tensor::uniform(&[3], 0.0, 1.0, &mut rng);
        (x, state, t, s)
    }

    #[test]
    fn presets_have_expected_flags() {
        let flags: Vec<(bool, bool, bool)> = VariantConfig::ALL
            .iter()
            .map(|c| (c.decompose_embedding, c.decompose_hidden, c.decompose_tpr))
            .collect();
        assert_eq!(
            flags,
            vec![
                (true, false, false),
                (false, true, false),
                (true, true, false),
                (true, false, true),
                (false, true, true),
                (true, true, true),
            ]
        );
    }

    #[test]
    fn preset_names_round_trip() {
        for cfg in VariantConfig::ALL {
            let name = cfg.name().unwrap();
            assert_eq!(VariantConfig::by_name(name), Some(cfg));
        }
        assert_eq!(VariantConfig::by_name("X+Y"), None);
        let plain = VariantConfig {
            decompose_embedding: false,
            decompose_hidden: false,
            decompose_tpr: false,
        };
        assert_eq!(plain.name(), None);
    }

    #[test]
    fn decomposed_terms_vanish_with_zero_tags() {
        let p = params(1);
        let (x, state, t, _) = rand_inputs(2);
        let zero_tags = Tensor::zeros(&[3]);
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, false);
        let xn = g.leaf(x);
        let hn = g.leaf(state.h);
        let tn = g.leaf(t);
        let sn = g.leaf(zero_tags);
        for (_, gate) in nodes.gates() {
            let e = gate.decompose_embedding(&mut g, xn, sn).unwrap();
            let h = gate.decompose_hidden(&mut g, hn, sn).unwrap();
            let tt = gate.decompose_tpr(&mut g, tn, sn).unwrap();
            for id in [e, h, tt] {
                assert!(g.value(id).data().iter().all(|&v| v == 0.0));
            }
        }
    }

    /// Forces the tag factor to exact ones: tags = e_0 and first factor
    /// column all ones, so `W_m·S = 1.0` with no rounding.
    fn ones_tag_setup(p: &mut CellParams) -> Tensor {
        let mut tags = Tensor::zeros(&[3]);
        tags.data_mut()[0] = 1.0;
        for gate in [&mut p.i, &mut p.f, &mut p.o, &mut p.g] {
            for w in [&mut gate.w_xm, &mut gate.w_hm, &mut gate.p_m] {
                for r in 0..6 {
                    w.set2(r, 0, 1.0);
                }
            }
        }
        tags
    }

    #[test]
    fn unit_tag_factor_reduces_to_plain_projection() {
        let mut p = params(3);
        let tags = ones_tag_setup(&mut p);
        let (x, state, t, _) = rand_inputs(4);
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, false);
        let xn = g.leaf(x.clone());
        let hn = g.leaf(state.h.clone());
        let tn = g.leaf(t.clone());
        let sn = g.leaf(tags);
        for (name, gp) in p.gates() {
            let gn = nodes.gates().iter().find(|(n, _)| *n == name).unwrap().1;
            let via_decomp = gn.decompose_embedding(&mut g, xn, sn).unwrap();
            let plain = crate::tensor::matvec(&gp.w_xn, &x).unwrap();
            assert_eq!(g.value(via_decomp), &plain, "{name}: embedding path");

            let via_h = gn.decompose_hidden(&mut g, hn, sn).unwrap();
            let plain_h = crate::tensor::matvec(&gp.w_hn, &state.h).unwrap();
            assert_eq!(g.value(via_h), &plain_h, "{name}: hidden path");

            let via_t = gn.decompose_tpr(&mut g, tn, sn).unwrap();
            let plain_t = crate::tensor::matvec(&gp.p_n, &t).unwrap();
            assert_eq!(g.value(via_t), &plain_t, "{name}: filler path");
        }
    }

    #[test]
    fn decomposed_variant_collapses_to_plain() {
        // With P_*m·S forced to ones and P_*n copied from W_T*, the
        // decomposed-TPR step must reproduce the plain-TPR step exactly.
        let mut p = params(5);
        let tags = ones_tag_setup(&mut p);
        for gate in [&mut p.i, &mut p.f, &mut p.o, &mut p.g] {
            gate.p_n = gate.w_t.clone();
            gate.w_xn = gate.w_x.clone();
            gate.w_hn = gate.w_h.clone();
        }
        let (x, state, t, _) = rand_inputs(6);
        let plain = VariantConfig {
            decompose_embedding: false,
            decompose_hidden: false,
            decompose_tpr: false,
        };
        let a = cell_step(&p, &plain, GActivation::Sigmoid, &x, &state, &t, &tags).unwrap();
        for cfg in VariantConfig::ALL {
            let b = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &tags).unwrap();
            assert!(
                a.h.max_abs_diff(&b.h) < 1e-12 && a.c.max_abs_diff(&b.c) < 1e-12,
                "variant {:?} deviates from the plain cell",
                cfg.name()
            );
        }
    }

    #[test]
    fn injected_gate_recurrence_identity() {
        let c_prev = Tensor::vector(vec![0.4, -1.0, 2.5, 0.0, -0.1, 7.0]);
        let ones = Tensor::ones(&[6]);
        let zeros = Tensor::zeros(&[6]);
        let half = Tensor::vector(vec![0.5; 6]);
        // f = 1, i = 0: the cell must carry c through unchanged.
        let s = combine_gates(&zeros, &ones, &half, &zeros, &c_prev).unwrap();
        assert_eq!(s.c, c_prev);
    }

    #[test]
    fn zero_weights_give_closed_form() {
        let p = zero_params();
        let (x, state, t, s) = rand_inputs(7);
        let cfg = VariantConfig::ALL[5]; // all decomposed; weights are zero anyway
        let next = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &s).unwrap();
        for j in 0..6 {
            let c_expect = 0.5 * state.c.data()[j] + 0.5 * 0.5;
            assert_eq!(next.c.data()[j], c_expect);
            assert_eq!(next.h.data()[j], 0.5 * c_expect.tanh());
        }
    }

    #[test]
    fn tanh_candidate_gate_changes_the_step() {
        let p = params(8);
        let (x, state, t, s) = rand_inputs(9);
        let cfg = VariantConfig::ALL[0];
        let a = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &s).unwrap();
        let b = cell_step(&p, &cfg, GActivation::Tanh, &x, &state, &t, &s).unwrap();
        assert!(a.c.max_abs_diff(&b.c) > 0.0);
    }

    #[test]
    fn hidden_state_stays_inside_unit_box() {
        let p = params(10);
        let (x, mut state, t, s) = rand_inputs(11);
        for cfg in VariantConfig::ALL {
            state = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &s).unwrap();
            assert!(state.h.data().iter().all(|&v| v.abs() < 1.0));
        }
    }

    #[test]
    fn cell_magnitude_grows_at_most_linearly() {
        let p = params(12);
        let (x, state0, t, s) = rand_inputs(13);
        let cfg = VariantConfig::ALL[5];
        let mut state = state0.clone();
        for step in 1..=20usize {
            state = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &s).unwrap();
            for j in 0..6 {
                let bound = state0.c.data()[j].abs() + step as f64;
                assert!(state.c.data()[j].abs() <= bound);
            }
        }
    }

    #[test]
    fn nan_state_is_a_numeric_error() {
        let mut p = zero_params();
        // A weight row of ±MAX makes the pre-activation inf − inf = NaN.
        p.i.w_x.set2(0, 0, f64::MAX);
        p.i.w_x.set2(0, 1, -f64::MAX);
        let cfg = VariantConfig {
            decompose_embedding: false,
            decompose_hidden: false,
            decompose_tpr: false,
        };
        let x = Tensor::vector(vec![2.0, 2.0, 0.0, 0.0, 0.0]);
        let state = CellState::zeros(6);
        let t = Tensor::zeros(&[4]);
        let s = Tensor::zeros(&[3]);
        let got = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &state, &t, &s);
        assert!(matches!(got, Err(Error::Numeric(_))), "got {got:?}");
    }

    #[test]
    fn identical_inputs_give_bit_identical_trajectories() {
        let p = params(14);
        let (x, state, t, s) = rand_inputs(15);
        let cfg = VariantConfig::ALL[3];
        let mut a = state.clone();
        let mut b = state;
        for _ in 0..5 {
            a = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &a, &t, &s).unwrap();
            b = cell_step(&p, &cfg, GActivation::Sigmoid, &x, &b, &t, &s).unwrap();
        }
        assert_eq!(a, b);
    }

    fn step_loss(xs: &[Tensor], cfg: &VariantConfig) -> crate::error::Result<f64> {
        // xs: 40 gate tensors (i,f,o,g × 10 each), then x, h, c, t, s.
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.param(t.clone())).collect();
        let gate = |base: usize| GateNodes {
            w_x: ids[base],
            w_h: ids[base + 1],
            w_t: ids[base + 2],
            b: ids[base + 3],
            w_xm: ids[base + 4],
            w_xn: ids[base + 5],
            w_hm: ids[base + 6],
            w_hn: ids[base + 7],
            p_m: ids[base + 8],
            p_n: ids[base + 9],
        };
        let nodes = CellNodes { i: gate(0), f: gate(10), o: gate(20), g: gate(30) };
        let (h_t, c_t) =
            nodes.step(&mut g, cfg, GActivation::Sigmoid, ids[40], ids[41], ids[42], ids[43], ids[44])?;
        let hc = g.add(h_t, c_t)?;
        let sq = g.mul(hc, hc)?;
        let loss = g.sum(sq);
        Ok(g.value(loss).item())
    }

    #[test]
    fn full_step_gradcheck_mixed_variant() {
        // E+dT exercises decomposed embedding, plain hidden, decomposed filler.
        let cfg = VariantConfig::ALL[3];
        let p = params(16);
        let (x, state, t, s) = rand_inputs(17);
        let mut inputs: Vec<Tensor> = Vec::new();
        for (_, gate) in p.gates() {
            for (_, t) in gate.named() {
                inputs.push(t.clone());
            }
        }
        inputs.extend([x, state.h, state.c, t, s]);

        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let gate = |base: usize| GateNodes {
            w_x: ids[base],
            w_h: ids[base + 1],
            w_t: ids[base + 2],
            b: ids[base + 3],
            w_xm: ids[base + 4],
            w_xn: ids[base + 5],
            w_hm: ids[base + 6],
            w_hn: ids[base + 7],
            p_m: ids[base + 8],
            p_n: ids[base + 9],
        };
        let nodes = CellNodes { i: gate(0), f: gate(10), o: gate(20), g: gate(30) };
        let (h_t, c_t) = nodes
            .step(&mut g, &cfg, GActivation::Sigmoid, ids[40], ids[41], ids[42], ids[43], ids[44])
            .unwrap();
        let hc = g.add(h_t, c_t).unwrap();
        let sq = g.mul(hc, hc).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let grads: Vec<Tensor> = ids
            .iter()
            .map(|&id| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(g.value(id).shape())))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut f = move |xs: &[Tensor]| step_loss(xs, &cfg);
        let report = gradcheck_inputs(&mut f, &inputs, &grads, 6, &mut rng).unwrap();
        assert!(
            report.worst_rel_err < GRADCHECK_TOL,
            "worst {:.3e} at input {} coord {}",
            report.worst_rel_err,
            report.worst_input,
            report.worst_coord
        );
    }
}
