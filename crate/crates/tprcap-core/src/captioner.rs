//! End-to-end captioning model.
//!
//! A caption is produced token by token: two MLPs map the image feature
//! to the initial recurrent state, each step runs the filler generator
//! and the decomposed cell, and a linear layer plus softmax decodes a
//! distribution over the vocabulary. Teacher-forced scoring, greedy and
//! beam generation, and sampled rollouts all share one step
//! implementation on the [`Graph`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell::{CellDims, CellNodes, CellParams, CellState, GActivation, VariantConfig};
use crate::error::{Error, Result};
use crate::generator::{GeneratorDims, GeneratorNodes, GeneratorParams};
use crate::graph::{Graph, NodeId};
use crate::init::xavier;
use crate::tensor::Tensor;
use crate::vocab::{zero_mean, Vocabulary};

/// Model dimensions. The word embedding dimension equals the role
/// dimension `d`, since emitted embeddings are bound into the `d×d`
/// structure accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Role / filler / embedding dimension (power of two).
    pub d: usize,
    /// Hidden state width.
    pub m: usize,
    /// Image feature length.
    pub k_v: usize,
    /// Tag vector length.
    pub k_s: usize,
    /// Vocabulary size including reserved ids.
    pub vocab: usize,
}

/// Two-layer perceptron `out = W₂·tanh(W₁·v + b₁) + b₂`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: Tensor, // [m, in]
    pub b1: Tensor, // [m]
    pub w2: Tensor, // [m, m]
    pub b2: Tensor, // [m]
}

impl Mlp {
    fn init<R: Rng + ?Sized>(m: usize, input: usize, rng: &mut R) -> Mlp {
        Mlp {
            w1: xavier(&[m, input], rng),
            b1: Tensor::zeros(&[m]),
            w2: xavier(&[m, m], rng),
            b2: Tensor::zeros(&[m]),
        }
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    fn validate(&self, name: &str, m: usize, input: usize) -> Result<()> {
        let wants: [(&str, &Tensor, Vec<usize>); 4] = [
            ("w1", &self.w1, vec![m, input]),
            ("b1", &self.b1, vec![m]),
            ("w2", &self.w2, vec![m, m]),
            ("b2", &self.b2, vec![m]),
        ];
        for (field, t, want) in wants {
            if t.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: "mlp",
                    detail: format!("{name}.{field} has shape {:?}, want {want:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> MlpNodes {
        let mut one = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) };
        MlpNodes { w1: one(&self.w1), b1: one(&self.b1), w2: one(&self.w2), b2: one(&self.b2) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl MlpNodes {
    fn apply(&self, g: &mut Graph, v: NodeId) -> Result<NodeId> {
        let lin1 = g.matvec(self.w1, v)?;
        let pre1 = g.add(lin1, self.b1)?;
        let hid = g.tanh(pre1);
        let lin2 = g.matvec(self.w2, hid)?;
        g.add(lin2, self.b2)
    }
}

/// The complete set of trainable tensors plus configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub dims: ModelDims,
    pub config: VariantConfig,
    pub g_activation: GActivation,
    /// When set, the embedding table receives no gradient updates.
    pub freeze_embedding: bool,
    /// Word embeddings `W_e ∈ R^{d×V}`, zero-meaned per row at init.
    pub w_e: Tensor,
    pub generator: GeneratorParams,
    pub cell: CellParams,
    /// Output projection `W_x ∈ R^{V×m}`.
    pub w_out: Tensor,
    pub init_c: Mlp,
    pub init_h: Mlp,
}

impl Model {
    /// Fresh model with a deterministic seed; every tensor is drawn from
    /// one seeded generator in canonical order.
    pub fn init(dims: &ModelDims, config: VariantConfig, seed: u64) -> Result<Model> {
        if dims.vocab <= Vocabulary::UNK {
            return Err(Error::Validation(format!(
                "vocabulary size {} cannot hold the reserved ids",
                dims.vocab
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dims.d as f64;
        let w_e = zero_mean(&Tensor::uniform(&[dims.d, dims.vocab], -half, half, &mut rng))?;
        let generator = GeneratorParams::init(
            &GeneratorDims { d: dims.d, m: dims.m, k_v: dims.k_v },
            &mut rng,
        )?;
        let cell = CellParams::init(
            &CellDims { m: dims.m, d_emb: dims.d, d: dims.d, k_s: dims.k_s },
            &mut rng,
        );
        let w_out = xavier(&[dims.vocab, dims.m], &mut rng);
        let init_c = Mlp::init(dims.m, dims.k_v, &mut rng);
        let init_h = Mlp::init(dims.m, dims.k_v, &mut rng);
        let model = Model {
            dims: *dims,
            config,
            g_activation: GActivation::default(),
            freeze_embedding: false,
            w_e,
            generator,
            cell,
            w_out,
            init_c,
            init_h,
        };
        model.validate()?;
        Ok(model)
    }

    /// Replaces the embedding table (e.g. with loaded vectors).
    pub fn set_embedding(&mut self, w_e: Tensor) -> Result<()> {
        if w_e.shape() != [self.dims.d, self.dims.vocab] {
            return Err(Error::Shape {
                op: "set_embedding",
                detail: format!(
                    "table shape {:?}, want [{}, {}]",
                    w_e.shape(),
                    self.dims.d,
                    self.dims.vocab
                ),
            });
        }
        self.w_e = w_e;
        Ok(())
    }

    /// Audits every tensor shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let ModelDims { d, m, k_v, k_s, vocab } = self.dims;
        if self.w_e.shape() != [d, vocab] {
            return Err(Error::Shape {
                op: "model",
                detail: format!("w_e has shape {:?}, want [{d}, {vocab}]", self.w_e.shape()),
            });
        }
        self.generator.validate()?;
        let gd = self.generator.dims();
        if (gd.d, gd.m, gd.k_v) != (d, m, k_v) {
            return Err(Error::Shape {
                op: "model",
                detail: format!("generator dims {gd:?} disagree with model dims"),
            });
        }
        if self.cell.dims != (CellDims { m, d_emb: d, d, k_s }) {
            return Err(Error::Shape {
                op: "model",
                detail: format!("cell dims {:?} disagree with model dims", self.cell.dims),
            });
        }
        self.cell.validate()?;
        if self.w_out.shape() != [vocab, m] {
            return Err(Error::Shape {
                op: "model",
                detail: format!("w_out has shape {:?}, want [{vocab}, {m}]", self.w_out.shape()),
            });
        }
        self.init_c.validate("init_c", m, k_v)?;
        self.init_h.validate("init_h", m, k_v)?;
        Ok(())
    }

    /// Every tensor with its canonical name, in a fixed order shared by
    /// the optimizer, checkpoints, and gradient checks.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::with_capacity(58);
        out.push(("embed.w_e".into(), &self.w_e));
        for (name, t) in [
            ("w_a_u", &self.generator.w_a_u),
            ("w_s_u", &self.generator.w_s_u),
            ("b_a_u", &self.generator.b_a_u),
            ("w_a_v", &self.generator.w_a_v),
            ("w_s_v", &self.generator.w_s_v),
            ("b_a_v", &self.generator.b_a_v),
            ("c_s", &self.generator.c_s),
            ("b_s", &self.generator.b_s),
        ] {
            out.push((format!("gen.{name}"), t));
        }
        for (gate, params) in self.cell.gates() {
            for (name, t) in params.named() {
                out.push((format!("cell.{gate}.{name}"), t));
            }
        }
        out.push(("out.w_x".into(), &self.w_out));
        for (mlp_name, mlp) in [("init_c", &self.init_c), ("init_h", &self.init_h)] {
            for (name, t) in mlp.named() {
                out.push((format!("{mlp_name}.{name}"), t));
            }
        }
        out
    }

    /// Mutable counterpart of [`Self::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::with_capacity(58);
        out.push(("embed.w_e".into(), &mut self.w_e));
        for (name, t) in [
            ("w_a_u", &mut self.generator.w_a_u),
            ("w_s_u", &mut self.generator.w_s_u),
            ("b_a_u", &mut self.generator.b_a_u),
            ("w_a_v", &mut self.generator.w_a_v),
            ("w_s_v", &mut self.generator.w_s_v),
            ("b_a_v", &mut self.generator.b_a_v),
            ("c_s", &mut self.generator.c_s),
            ("b_s", &mut self.generator.b_s),
        ] {
            out.push((format!("gen.{name}"), t));
        }
        for (gate, params) in [
            ("i", &mut self.cell.i),
            ("f", &mut self.cell.f),
            ("o", &mut self.cell.o),
            ("g", &mut self.cell.g),
        ] {
            for (name, t) in [
                ("w_x", &mut params.w_x),
                ("w_h", &mut params.w_h),
                ("w_t", &mut params.w_t),
                ("b", &mut params.b),
                ("w_xm", &mut params.w_xm),
                ("w_xn", &mut params.w_xn),
                ("w_hm", &mut params.w_hm),
                ("w_hn", &mut params.w_hn),
                ("p_m", &mut params.p_m),
                ("p_n", &mut params.p_n),
            ] {
                out.push((format!("cell.{gate}.{name}"), t));
            }
        }
        out.push(("out.w_x".into(), &mut self.w_out));
        for (mlp_name, mlp) in [("init_c", &mut self.init_c), ("init_h", &mut self.init_h)] {
            for (name, t) in [
                ("w1", &mut mlp.w1),
                ("b1", &mut mlp.b1),
                ("w2", &mut mlp.w2),
                ("b2", &mut mlp.b2),
            ] {
                out.push((format!("{mlp_name}.{name}"), t));
            }
        }
        out
    }

    /// Registers all tensors on a graph. With `trainable`, tensors become
    /// parameters (the embedding stays a constant when frozen).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let embed_trainable = trainable && !self.freeze_embedding;
        let w_e =
            if embed_trainable { g.param(self.w_e.clone()) } else { g.leaf(self.w_e.clone()) };
        let gen = self.generator.bind(g, trainable);
        let cell = self.cell.bind(g, trainable);
        let w_out =
            if trainable { g.param(self.w_out.clone()) } else { g.leaf(self.w_out.clone()) };
        let init_c = self.init_c.bind(g, trainable);
        let init_h = self.init_h.bind(g, trainable);
        BoundModel { w_e, gen, cell, w_out, init_c, init_h }
    }

    /// Rejects feature/tag vectors that do not match the model's dims.
    pub fn check_feature(&self, v: &Tensor, tags: &Tensor) -> Result<()> {
        if v.shape() != [self.dims.k_v] {
            return Err(Error::Shape {
                op: "captioner",
                detail: format!("feature shape {:?}, want [{}]", v.shape(), self.dims.k_v),
            });
        }
        if tags.shape() != [self.dims.k_s] {
            return Err(Error::Shape {
                op: "captioner",
                detail: format!("tag shape {:?}, want [{}]", tags.shape(), self.dims.k_s),
            });
        }
        if !v.is_finite() || !tags.is_finite() {
            return Err(Error::Numeric("non-finite feature or tag vector".into()));
        }
        Ok(())
    }

    /// Initial recurrent state from the image feature via both MLPs.
    pub fn init_state(&self, v: &Tensor) -> Result<CellState> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let vn = g.leaf(v.clone());
        let c0 = b.init_c.apply(&mut g, vn)?;
        let h0 = b.init_h.apply(&mut g, vn)?;
        Ok(CellState { h: g.value(h0).clone(), c: g.value(c0).clone() })
    }

    /// Distribution over the vocabulary from a hidden state.
    pub fn decode_step(&self, h: &Tensor) -> Result<Tensor> {
        let logits = crate::tensor::matvec(&self.w_out, h)?;
        Ok(crate::tensor::softmax(&logits))
    }

    /// One decoding step on the graph: filler, recurrence, softmax.
    #[allow(clippy::too_many_arguments)]
    fn bound_step(
        &self,
        g: &mut Graph,
        b: &BoundModel,
        x_prev: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        v: NodeId,
        s_tilde: NodeId,
        tags: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let f_t = b.gen.step(g, h_prev, v, s_tilde)?;
        let (h_t, c_t) =
            b.cell.step(g, &self.config, self.g_activation, x_prev, h_prev, c_prev, f_t, tags)?;
        if !g.value(h_t).is_finite() || !g.value(c_t).is_finite() {
            return Err(Error::Numeric("non-finite recurrent state".into()));
        }
        let logits = g.matvec(b.w_out, h_t)?;
        let p = g.softmax(logits);
        Ok((p, h_t, c_t))
    }

    /// Scores a ground-truth caption with teacher forcing.
    ///
    /// The caption must begin with `<s>`, end with `</s>`, and fit the
    /// role capacity. Returns the graph so gradients can be taken from
    /// the summed negative log-likelihood node.
    pub fn forward_teacher(
        &self,
        v: &Tensor,
        tags: &Tensor,
        caption: &[usize],
    ) -> Result<TeacherForward> {
        self.check_feature(v, tags)?;
        validate_caption(caption, self.dims.vocab, self.dims.d)?;

        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let vn = g.leaf(v.clone());
        let tn = g.leaf(tags.clone());
        let c0 = b.init_c.apply(&mut g, vn)?;
        let h0 = b.init_h.apply(&mut g, vn)?;
        let mut h = h0;
        let mut c = c0;
        let mut s_tilde = g.leaf(Tensor::zeros(&[self.dims.d, self.dims.d]));

        let steps = caption.len() - 1;
        let mut log_probs = Vec::with_capacity(steps);
        let mut distributions = Vec::with_capacity(steps);
        for t in 1..=steps {
            let x_prev = g.col(b.w_e, caption[t - 1])?;
            let (p, h_t, c_t) = self.bound_step(&mut g, &b, x_prev, h, c, vn, s_tilde, tn)?;
            distributions.push(g.value(p).clone());
            let picked = g.pick(p, caption[t])?;
            log_probs.push(g.ln(picked)?);
            h = h_t;
            c = c_t;
            // Teacher forcing: the ground-truth token joins S̃ at role t−1,
            // except after the final step where S̃ is never read again.
            if t < steps {
                let x_t = g.col(b.w_e, caption[t])?;
                let role = g.leaf(self.generator.basis.role(t - 1)?);
                let bound_tok = g.outer(x_t, role)?;
                s_tilde = g.add(s_tilde, bound_tok)?;
            }
        }
        let total = g.add_many(&log_probs)?;
        let nll_node = g.scale(total, -1.0);
        let nll = g.value(nll_node).item();
        if !nll.is_finite() {
            return Err(Error::Numeric(format!("non-finite teacher-forcing loss {nll}")));
        }
        Ok(TeacherForward { nll, steps, distributions, nll_node, bound: b, graph: g })
    }

    /// Generates a caption, greedy or beam.
    pub fn generate(&self, v: &Tensor, tags: &Tensor, opts: &DecodeOptions) -> Result<GenerateOutcome> {
        self.check_feature(v, tags)?;
        opts.validate(self.dims.d)?;
        let greedy = self.rollout_greedy(v, tags, opts.max_len)?;
        match opts.mode {
            DecodeMode::Greedy => Ok(greedy),
            DecodeMode::Beam => self.beam_search(v, tags, opts, greedy),
        }
    }

    fn rollout_greedy(&self, v: &Tensor, tags: &Tensor, max_len: usize) -> Result<GenerateOutcome> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let vn = g.leaf(v.clone());
        let tn = g.leaf(tags.clone());
        let c0 = b.init_c.apply(&mut g, vn)?;
        let h0 = b.init_h.apply(&mut g, vn)?;
        let (mut h, mut c) = (h0, c0);
        let mut s_tilde = g.leaf(Tensor::zeros(&[self.dims.d, self.dims.d]));
        let mut prev_token = Vocabulary::BOS;
        let mut ids = Vec::new();
        let mut logprob = 0.0;
        let mut decisions = 0usize;
        let mut truncated = true;
        for t in 1..=max_len {
            let x_prev = g.col(b.w_e, prev_token)?;
            let (p, h_t, c_t) = self.bound_step(&mut g, &b, x_prev, h, c, vn, s_tilde, tn)?;
            h = h_t;
            c = c_t;
            let probs = g.value(p).data();
            let y = argmax_allowed(probs);
            logprob += probs[y].ln();
            decisions += 1;
            if y == Vocabulary::EOS {
                truncated = false;
                break;
            }
            ids.push(y);
            prev_token = y;
            if t < max_len {
                let x_t = g.col(b.w_e, y)?;
                let role = g.leaf(self.generator.basis.role(t - 1)?);
                let bound_tok = g.outer(x_t, role)?;
                s_tilde = g.add(s_tilde, bound_tok)?;
            }
        }
        Ok(GenerateOutcome { ids, logprob, mean_logprob: logprob / decisions as f64, truncated })
    }

    fn beam_search(
        &self,
        v: &Tensor,
        tags: &Tensor,
        opts: &DecodeOptions,
        greedy: GenerateOutcome,
    ) -> Result<GenerateOutcome> {
        struct Hyp {
            ids: Vec<usize>,
            sum_lp: f64,
            h: NodeId,
            c: NodeId,
            s_tilde: NodeId,
            prev: usize,
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let vn = g.leaf(v.clone());
        let tn = g.leaf(tags.clone());
        let c0 = b.init_c.apply(&mut g, vn)?;
        let h0 = b.init_h.apply(&mut g, vn)?;
        let s0 = g.leaf(Tensor::zeros(&[self.dims.d, self.dims.d]));
        let mut active = vec![Hyp {
            ids: Vec::new(),
            sum_lp: 0.0,
            h: h0,
            c: c0,
            s_tilde: s0,
            prev: Vocabulary::BOS,
        }];
        // The pool opens with the greedy rollout so the returned sequence
        // can never score below it.
        let mut pool = vec![greedy];

        for t in 1..=opts.max_len {
            // (source hyp, token, new sum)
            let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
            for idx in 0..active.len() {
                let (prev, h, c, s_tilde, sum_lp) = {
                    let hyp = &active[idx];
                    (hyp.prev, hyp.h, hyp.c, hyp.s_tilde, hyp.sum_lp)
                };
                let x_prev = g.col(b.w_e, prev)?;
                let (p, h_t, c_t) = self.bound_step(&mut g, &b, x_prev, h, c, vn, s_tilde, tn)?;
                // Stash the advanced state on the hypothesis for reuse below.
                active[idx].h = h_t;
                active[idx].c = c_t;
                for (tok, &prob) in g.value(p).data().iter().enumerate() {
                    if tok == Vocabulary::PAD || tok == Vocabulary::BOS {
                        continue;
                    }
                    candidates.push((idx, tok, sum_lp + prob.ln()));
                }
            }
            // Highest score first; ties resolve to the earlier hypothesis,
            // then the lower token id, keeping expansion deterministic.
            candidates.sort_by(|a, b| {
                b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
            });
            candidates.truncate(opts.beam_width);

            let mut next_active = Vec::with_capacity(opts.beam_width);
            for (idx, tok, sum_lp) in candidates {
                let src = &active[idx];
                if tok == Vocabulary::EOS {
                    pool.push(GenerateOutcome {
                        ids: src.ids.clone(),
                        logprob: sum_lp,
                        mean_logprob: sum_lp / t as f64,
                        truncated: false,
                    });
                    continue;
                }
                let mut ids = src.ids.clone();
                ids.push(tok);
                let s_tilde = if t < opts.max_len {
                    let x_t = g.col(b.w_e, tok)?;
                    let role = g.leaf(self.generator.basis.role(t - 1)?);
                    let bound_tok = g.outer(x_t, role)?;
                    g.add(src.s_tilde, bound_tok)?
                } else {
                    src.s_tilde
                };
                next_active.push(Hyp { ids, sum_lp, h: src.h, c: src.c, s_tilde, prev: tok });
            }
            active = next_active;
            if active.is_empty() {
                break;
            }
        }
        for hyp in active {
            pool.push(GenerateOutcome {
                ids: hyp.ids,
                logprob: hyp.sum_lp,
                mean_logprob: hyp.sum_lp / opts.max_len as f64,
                truncated: true,
            });
        }
        // Strictly-better replacement keeps the earliest entry (the greedy
        // rollout) on ties.
        let mut best = 0usize;
        for i in 1..pool.len() {
            if pool[i].mean_logprob > pool[best].mean_logprob {
                best = i;
            }
        }
        Ok(pool.swap_remove(best))
    }

    /// Samples a caption from the model's own distribution, keeping the
    /// graph and per-step log-probability nodes for policy gradients.
    ///
    /// `<pad>` and `<s>` are excluded; each step's log-probability is
    /// renormalized over the remaining tokens.
    pub fn rollout_sample<R: Rng>(
        &self,
        v: &Tensor,
        tags: &Tensor,
        max_len: usize,
        rng: &mut R,
    ) -> Result<SampledRollout> {
        self.check_feature(v, tags)?;
        if max_len < 2 || max_len > self.dims.d {
            return Err(Error::Validation(format!(
                "max_len {max_len} outside 2..={}",
                self.dims.d
            )));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let vn = g.leaf(v.clone());
        let tn = g.leaf(tags.clone());
        let c0 = b.init_c.apply(&mut g, vn)?;
        let h0 = b.init_h.apply(&mut g, vn)?;
        let (mut h, mut c) = (h0, c0);
        let mut s_tilde = g.leaf(Tensor::zeros(&[self.dims.d, self.dims.d]));
        let mut prev_token = Vocabulary::BOS;
        let mut ids = Vec::new();
        let mut log_prob_nodes = Vec::new();
        let mut truncated = true;
        for t in 1..=max_len {
            let x_prev = g.col(b.w_e, prev_token)?;
            let (p, h_t, c_t) = self.bound_step(&mut g, &b, x_prev, h, c, vn, s_tilde, tn)?;
            h = h_t;
            c = c_t;
            let y = sample_allowed(g.value(p).data(), rng);
            // log p'(y) = ln p[y] − ln(1 − p[pad] − p[bos])
            let picked = g.pick(p, y)?;
            let ln_p = g.ln(picked)?;
            let total = g.sum(p);
            let p_pad = g.pick(p, Vocabulary::PAD)?;
            let p_bos = g.pick(p, Vocabulary::BOS)?;
            let no_pad = g.sub(total, p_pad)?;
            let mass = g.sub(no_pad, p_bos)?;
            let ln_mass = g.ln(mass)?;
            log_prob_nodes.push(g.sub(ln_p, ln_mass)?);
            if y == Vocabulary::EOS {
                truncated = false;
                break;
            }
            ids.push(y);
            prev_token = y;
            if t < max_len {
                let x_t = g.col(b.w_e, y)?;
                let role = g.leaf(self.generator.basis.role(t - 1)?);
                let bound_tok = g.outer(x_t, role)?;
                s_tilde = g.add(s_tilde, bound_tok)?;
            }
        }
        let sum_node = g.add_many(&log_prob_nodes)?;
        let logprob = g.value(sum_node).item();
        Ok(SampledRollout { ids, logprob, sum_logprob_node: sum_node, truncated, bound: b, graph: g })
    }

    /// Total renormalized log-probability of emitting `content_ids`
    /// followed by `</s>`, exactly as [`Self::rollout_sample`] scores a
    /// rollout. Lets callers re-measure a sampled caption after an
    /// update.
    pub fn sequence_logprob(&self, v: &Tensor, tags: &Tensor, content_ids: &[usize]) -> Result<f64> {
        self.check_feature(v, tags)?;
        let mut caption = Vec::with_capacity(content_ids.len() + 2);
        caption.push(Vocabulary::BOS);
        caption.extend_from_slice(content_ids);
        caption.push(Vocabulary::EOS);
        validate_caption(&caption, self.dims.vocab, self.dims.d)?;
        let fwd = self.forward_teacher(v, tags, &caption)?;
        let mut total = 0.0;
        for (t, dist) in fwd.distributions.iter().enumerate() {
            let y = caption[t + 1];
            let mass: f64 = dist
                .data()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != Vocabulary::PAD && *i != Vocabulary::BOS)
                .map(|(_, &p)| p)
                .sum();
            total += (dist.data()[y] / mass).ln();
        }
        Ok(total)
    }
}

/// Graph handles for every bound model tensor.
#[derive(Clone, Copy, Debug)]
pub struct BoundModel {
    pub w_e: NodeId,
    pub gen: GeneratorNodes,
    pub cell: CellNodes,
    pub w_out: NodeId,
    pub init_c: MlpNodes,
    pub init_h: MlpNodes,
}

impl BoundModel {
    /// Node ids in the same canonical order as [`Model::named_tensors`].
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(58);
        out.push(self.w_e);
        out.extend(self.gen.named().iter().map(|(_, id)| *id));
        for (_, gate) in self.cell.gates() {
            out.extend(gate.named().iter().map(|(_, id)| *id));
        }
        out.push(self.w_out);
        for mlp in [&self.init_c, &self.init_h] {
            out.extend([mlp.w1, mlp.b1, mlp.w2, mlp.b2]);
        }
        out
    }
}

/// A teacher-forced pass with its live graph.
pub struct TeacherForward {
    /// Summed negative log-likelihood over all predicted tokens.
    pub nll: f64,
    /// Number of predicted tokens (caption length − 1).
    pub steps: usize,
    /// Per-step distributions over the vocabulary.
    pub distributions: Vec<Tensor>,
    pub nll_node: NodeId,
    pub bound: BoundModel,
    pub graph: Graph,
}

impl TeacherForward {
    pub fn per_token_nll(&self) -> f64 {
        self.nll / self.steps as f64
    }
}

/// A sampled rollout with its live graph, for SCST-style updates.
pub struct SampledRollout {
    /// Emitted tokens, `</s>` excluded.
    pub ids: Vec<usize>,
    /// Total renormalized log-probability of all decisions.
    pub logprob: f64,
    pub sum_logprob_node: NodeId,
    pub truncated: bool,
    pub bound: BoundModel,
    pub graph: Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam,
}

/// Decoding controls; `max_len` may not exceed the role capacity.
#[derive(Clone, Copy, Debug)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub max_len: usize,
}

impl DecodeOptions {
    /// Greedy decoding with the default length cap `min(d, 20)`.
    pub fn greedy(d: usize) -> DecodeOptions {
        DecodeOptions { mode: DecodeMode::Greedy, beam_width: 1, max_len: d.min(20) }
    }

    pub fn beam(width: usize, d: usize) -> DecodeOptions {
        DecodeOptions { mode: DecodeMode::Beam, beam_width: width, max_len: d.min(20) }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::Validation("beam width must be at least 1".into()));
        }
        if self.max_len < 2 || self.max_len > d {
            return Err(Error::Validation(format!(
                "max_len {} outside 2..={d}",
                self.max_len
            )));
        }
        Ok(())
    }
}

/// A generated caption; `ids` contains neither `<s>` nor `</s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutcome {
    pub ids: Vec<usize>,
    /// Total log-probability of every decision, the `</s>` emission
    /// included when decoding terminated naturally.
    pub logprob: f64,
    /// `logprob` divided by the number of decisions.
    pub mean_logprob: f64,
    /// Set when the length cap fired before `</s>`.
    pub truncated: bool,
}

fn validate_caption(caption: &[usize], vocab: usize, d: usize) -> Result<()> {
    if caption.len() < 2 {
        return Err(Error::Validation(format!(
            "caption needs at least <s> </s>, got {} tokens",
            caption.len()
        )));
    }
    if caption[0] != Vocabulary::BOS {
        return Err(Error::Validation("caption must start with <s>".into()));
    }
    if *caption.last().expect("non-empty") != Vocabulary::EOS {
        return Err(Error::Validation("caption must end with </s>".into()));
    }
    if caption.len() > d {
        return Err(Error::Capacity { requested: caption.len(), capacity: d });
    }
    if let Some(&bad) = caption.iter().find(|&&id| id >= vocab) {
        return Err(Error::Index { index: bad, len: vocab });
    }
    Ok(())
}

/// Argmax over the vocabulary with `<pad>` and `<s>` excluded; ties go
/// to the lowest id.
fn argmax_allowed(probs: &[f64]) -> usize {
    let mut best = Vocabulary::EOS;
    let mut best_p = f64::NEG_INFINITY;
    for (tok, &p) in probs.iter().enumerate() {
        if tok == Vocabulary::PAD || tok == Vocabulary::BOS {
            continue;
        }
        if p > best_p {
            best_p = p;
            best = tok;
        }
    }
    best
}

/// Multinomial draw over the vocabulary with `<pad>` and `<s>` excluded.
fn sample_allowed<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let mass: f64 = probs
        .iter()
        .enumerate()
        .filter(|(tok, _)| *tok != Vocabulary::PAD && *tok != Vocabulary::BOS)
        .map(|(_, &p)| p)
        .sum();
    let target = rng.random::<f64>() * mass;
    let mut cum = 0.0;
    let mut last = Vocabulary::EOS;
    for (tok, &p) in probs.iter().enumerate() {
        if tok == Vocabulary::PAD || tok == Vocabulary::BOS {
            continue;
        }
        cum += p;
        last = tok;
        if cum > target {
            return tok;
        }
    }
    last // floating-point slack: fall back to the final allowed token
}
