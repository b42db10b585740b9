//! Optimization: cross-entropy training, SCST-style reinforcement with
//! a greedy baseline, early stopping, and the finite-difference
//! gradient audit.
//!
//! Every step is deterministic given the seed: batches are shuffled by
//! the trainer's own generator, samples are processed in order, and
//! the update happens once per step after global-norm clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::captioner::{DecodeOptions, Model};
use crate::check::{gradcheck_inputs, GradReport};
use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::metrics::{cider_d, CorpusStats};
use crate::tensor::Tensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over the model's canonical tensor list.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    steps: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Optimizer {
        Optimizer { kind, lr, steps: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update. `grads[i]` pairs with `params[i]`; `None`
    /// slots (frozen or unused tensors) are left untouched.
    pub fn apply(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            self.v = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (i, ((name, param), grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.shape() {
                return Err(Error::Shape {
                    op: "optimizer",
                    detail: format!(
                        "gradient for {name} has shape {:?}, want {:?}",
                        grad.shape(),
                        param.shape()
                    ),
                });
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let bias1 = 1.0 - ADAM_BETA1.powi(t);
                    let bias2 = 1.0 - ADAM_BETA2.powi(t);
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (j, (p, &g)) in
                        param.data_mut().iter_mut().zip(grad.data()).enumerate()
                    {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm does not exceed
/// `max_norm`; returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        sq += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    Ok(norm)
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub xe_epochs: usize,
    pub scst_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Policy-gradient share of the mixed SCST objective.
    pub scst_weight: f64,
    /// Cross-entropy share of the mixed SCST objective.
    pub xe_weight: f64,
    /// Epochs without validation improvement before stopping; 0 stops
    /// after the first epoch of each phase.
    pub patience: usize,
    pub clip_norm: f64,
    /// Refuse SCST on a model that never saw cross-entropy training.
    pub require_xe_pretrained: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            xe_epochs: 10,
            scst_epochs: 0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            scst_weight: 0.7,
            xe_weight: 0.3,
            patience: 5,
            clip_norm: 5.0,
            require_xe_pretrained: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate {} invalid", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        if (self.scst_weight + self.xe_weight - 1.0).abs() > 1e-12
            || self.scst_weight < 0.0
            || self.xe_weight < 0.0
        {
            return Err(Error::Validation(format!(
                "mixture weights {} + {} must be non-negative and sum to 1",
                self.scst_weight, self.xe_weight
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Validation(format!("clip norm {} invalid", self.clip_norm)));
        }
        Ok(())
    }
}

/// One SCST sample with both rollouts and their rewards.
#[derive(Clone, Debug, Serialize)]
pub struct RewardRecord {
    pub sample_id: String,
    pub sampled: Vec<usize>,
    pub greedy: Vec<usize>,
    /// The sampled rollout hit the length cap without emitting `</s>`.
    pub truncated: bool,
    pub reward_sampled: f64,
    pub reward_greedy: f64,
    /// Exactly `reward_sampled - reward_greedy`, before normalization.
    pub advantage: f64,
}

/// Result of one SCST step.
#[derive(Clone, Debug)]
pub struct ScstOutcome {
    /// `scst_weight · policy + xe_weight · cross-entropy`.
    pub loss: f64,
    /// Unweighted mean per-token cross-entropy over the batch.
    pub xe_loss: f64,
    pub records: Vec<RewardRecord>,
    /// Advantages after batch normalization, aligned with `records`.
    pub normalized_advantages: Vec<f64>,
    /// Set when every normalized advantage vanished and the update fell
    /// back to the cross-entropy term alone.
    pub policy_skipped: bool,
}

/// Mean-subtracts and scales advantages across the batch; a singleton
/// batch keeps its raw advantage. Returns the normalized values and
/// whether they all vanished.
pub(crate) fn normalize_advantages(raw: &[f64]) -> (Vec<f64>, bool) {
    let normalized = if raw.len() < 2 {
        raw.to_vec()
    } else {
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let denom = var.sqrt() + 1e-8;
        raw.iter().map(|a| (a - mean) / denom).collect()
    };
    let degenerate = normalized.iter().all(|&a| a == 0.0);
    (normalized, degenerate)
}

/// One epoch's summary, serialized as a JSONL history line.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    /// Mean per-token cross-entropy over the epoch's batches.
    pub xe_loss: f64,
    pub val_cider: f64,
    pub lr: f64,
}

/// Full training run output.
#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_cider: f64,
}

/// Owns the model, optimizer state, and the seeded sampler.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub xe_trained: bool,
    opt: Optimizer,
    rng: ChaCha8Rng,
    degenerate_batches: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Trainer> {
        Trainer::from_pretrained(model, config, false)
    }

    /// Resumes from a checkpointed model whose `xe_trained` flag is
    /// already known.
    pub fn from_pretrained(model: Model, config: TrainConfig, xe_trained: bool) -> Result<Trainer> {
        config.validate()?;
        model.validate()?;
        let opt = Optimizer::new(config.optimizer, config.lr);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, xe_trained, opt, rng, degenerate_batches: 0 })
    }

    /// Number of SCST batches whose policy term vanished so far.
    pub fn degenerate_batches(&self) -> usize {
        self.degenerate_batches
    }

    fn decode_options(&self) -> DecodeOptions {
        DecodeOptions::greedy(self.model.dims.d)
    }

    /// Accumulates gradients of `weight ·` the batch's mean per-token
    /// cross-entropy into `accum`; returns the unweighted mean loss.
    fn accumulate_xe(
        &self,
        batch: &[&EncodedSample],
        weight: f64,
        accum: &mut [Option<Tensor>],
    ) -> Result<f64> {
        let mut loss = 0.0;
        for sample in batch {
            let sample_w = ((batch.len() * sample.captions.len()) as f64).recip();
            for caption in &sample.captions {
                let fwd = self
                    .model
                    .forward_teacher(&sample.v, &sample.tags, caption)
                    .map_err(|e| locate(&sample.id, e))?;
                loss += sample_w * fwd.per_token_nll();
                let mut graph = fwd.graph;
                graph.backward(fwd.nll_node)?;
                let scale = weight * sample_w / fwd.steps as f64;
                for (slot, id) in accum.iter_mut().zip(fwd.bound.param_ids()) {
                    if !graph.is_trainable(id) {
                        continue;
                    }
                    if let Some(g) = graph.grad(id) {
                        add_scaled(slot, g, scale);
                    }
                }
            }
        }
        Ok(loss)
    }

    /// One cross-entropy step: mean per-token NLL over the batch, one
    /// clipped optimizer update.
    pub fn xe_step(&mut self, batch: &[&EncodedSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let mut accum: Vec<Option<Tensor>> = vec![None; 58];
        let loss = self.accumulate_xe(batch, 1.0, &mut accum)?;
        clip_gradients(&mut accum, self.config.clip_norm)?;
        self.opt.apply(&mut self.model.named_tensors_mut(), &accum)?;
        Ok(loss)
    }

    /// One SCST step: sampled rollout against the greedy baseline,
    /// CIDEr-D advantages batch-normalized, mixed with the
    /// cross-entropy term, one clipped update.
    pub fn scst_step(
        &mut self,
        batch: &[&EncodedSample],
        stats: &CorpusStats<usize>,
    ) -> Result<ScstOutcome> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        if self.config.require_xe_pretrained && !self.xe_trained {
            return Err(Error::Contract(
                "SCST on a model with no cross-entropy pre-training; \
                 clear require_xe_pretrained to override"
                    .into(),
            ));
        }
        // Cap rollouts so even a truncated caption plus its sentinels
        // fits back through the teacher-forcing path.
        let max_len = (self.model.dims.d - 2).min(20);
        let mut opts = self.decode_options();
        opts.max_len = max_len;

        let mut rollouts = Vec::with_capacity(batch.len());
        let mut records = Vec::with_capacity(batch.len());
        for sample in batch {
            let roll = self
                .model
                .rollout_sample(&sample.v, &sample.tags, max_len, &mut self.rng)
                .map_err(|e| locate(&sample.id, e))?;
            let greedy = self
                .model
                .generate(&sample.v, &sample.tags, &opts)
                .map_err(|e| locate(&sample.id, e))?;
            let reward_sampled = cider_d(&roll.ids, &sample.refs, stats)?;
            let reward_greedy = cider_d(&greedy.ids, &sample.refs, stats)?;
            records.push(RewardRecord {
                sample_id: sample.id.clone(),
                sampled: roll.ids.clone(),
                greedy: greedy.ids,
                truncated: roll.truncated,
                reward_sampled,
                reward_greedy,
                advantage: reward_sampled - reward_greedy,
            });
            rollouts.push(roll);
        }
        let raw: Vec<f64> = records.iter().map(|r| r.advantage).collect();
        let (normalized, policy_skipped) = normalize_advantages(&raw);
        if policy_skipped {
            self.degenerate_batches += 1;
        }

        let mut accum: Vec<Option<Tensor>> = vec![None; 58];
        let mut policy_loss = 0.0;
        if !policy_skipped {
            for (roll, &adv) in rollouts.into_iter().zip(&normalized) {
                policy_loss += -adv * roll.logprob / batch.len() as f64;
                if adv == 0.0 {
                    continue;
                }
                let mut graph = roll.graph;
                graph.backward(roll.sum_logprob_node)?;
                let scale = -adv * self.config.scst_weight / batch.len() as f64;
                for (slot, id) in accum.iter_mut().zip(roll.bound.param_ids()) {
                    if !graph.is_trainable(id) {
                        continue;
                    }
                    if let Some(g) = graph.grad(id) {
                        add_scaled(slot, g, scale);
                    }
                }
            }
        }
        let xe_loss = self.accumulate_xe(batch, self.config.xe_weight, &mut accum)?;
        let loss = self.config.scst_weight * policy_loss + self.config.xe_weight * xe_loss;
        clip_gradients(&mut accum, self.config.clip_norm)?;
        self.opt.apply(&mut self.model.named_tensors_mut(), &accum)?;
        Ok(ScstOutcome { loss, xe_loss, records, normalized_advantages: normalized, policy_skipped })
    }

    /// Mean greedy-decode CIDEr-D over a split.
    pub fn evaluate_cider(
        &self,
        samples: &[EncodedSample],
        stats: &CorpusStats<usize>,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Validation("empty evaluation split".into()));
        }
        let opts = self.decode_options();
        let mut total = 0.0;
        for sample in samples {
            let out = self
                .model
                .generate(&sample.v, &sample.tags, &opts)
                .map_err(|e| locate(&sample.id, e))?;
            total += cider_d(&out.ids, &sample.refs, stats)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Runs the cross-entropy phase, then optionally the SCST phase,
    /// with early stopping on validation CIDEr-D. The model ends at the
    /// best-validation snapshot.
    pub fn train(
        &mut self,
        train: &[EncodedSample],
        val: &[EncodedSample],
    ) -> Result<TrainHistory> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Validation("both splits must be non-empty".into()));
        }
        let train_stats = corpus_stats(train)?;
        let val_stats = corpus_stats(val)?;

        let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, best_val_cider: f64::NEG_INFINITY };
        let mut best_model = self.model.clone();
        let mut epoch = 0usize;
        for phase in [Phase::Xe, Phase::Scst] {
            let budget = match phase {
                Phase::Xe => self.config.xe_epochs,
                Phase::Scst => self.config.scst_epochs,
            };
            let mut stale = 0usize;
            for _ in 0..budget {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(&mut self.rng);
                let mut xe_sum = 0.0;
                let mut batches = 0usize;
                for chunk in order.chunks(self.config.batch_size) {
                    let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
                    xe_sum += match phase {
                        Phase::Xe => self.xe_step(&batch)?,
                        Phase::Scst => self.scst_step(&batch, &train_stats)?.xe_loss,
                    };
                    batches += 1;
                }
                if phase == Phase::Xe {
                    self.xe_trained = true;
                }
                let val_cider = self.evaluate_cider(val, &val_stats)?;
                history.epochs.push(EpochRecord {
                    epoch,
                    phase: phase.name(),
                    xe_loss: xe_sum / batches as f64,
                    val_cider,
                    lr: self.opt.lr,
                });
                if val_cider > history.best_val_cider {
                    history.best_val_cider = val_cider;
                    history.best_epoch = epoch;
                    best_model = self.model.clone();
                    stale = 0;
                } else {
                    stale += 1;
                }
                epoch += 1;
                if stale >= self.config.patience {
                    break;
                }
            }
        }
        self.model = best_model;
        Ok(history)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Xe,
    Scst,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Xe => "xe",
            Phase::Scst => "scst",
        }
    }
}

fn locate(id: &str, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("sample {id}: {msg}")),
        other => other,
    }
}

fn add_scaled(slot: &mut Option<Tensor>, g: &Tensor, scale: f64) {
    match slot {
        Some(acc) => {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += scale * x;
            }
        }
        None => {
            *slot = Some(g.map(|x| scale * x));
        }
    }
}

/// Builds CIDEr-D document frequencies from a split's references.
pub fn corpus_stats(samples: &[EncodedSample]) -> Result<CorpusStats<usize>> {
    let docs: Vec<Vec<Vec<usize>>> = samples.iter().map(|s| s.refs.clone()).collect();
    CorpusStats::from_references(&docs)
}

/// Worst relative gradient error for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub worst_rel_err: f64,
    pub coords_checked: usize,
}

/// Audits analytic gradients of the teacher-forcing loss against
/// central finite differences, `per_tensor` random coordinates per
/// trainable tensor. Frozen tensors are absent from the report.
pub fn grad_check(
    model: &Model,
    v: &Tensor,
    tags: &Tensor,
    caption: &[usize],
    per_tensor: usize,
    seed: u64,
) -> Result<Vec<ParamReport>> {
    let fwd = model.forward_teacher(v, tags, caption)?;
    let ids = fwd.bound.param_ids();
    let mut graph = fwd.graph;
    graph.backward(fwd.nll_node)?;

    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        if !graph.is_trainable(ids[idx]) {
            continue;
        }
        let base = model.named_tensors()[idx].1.clone();
        let analytic = match graph.grad(ids[idx]) {
            Some(g) => g.clone(),
            None => Tensor::zeros(base.shape()),
        };
        let mut f = |xs: &[Tensor]| -> Result<f64> {
            let mut probe = model.clone();
            *probe.named_tensors_mut()[idx].1 = xs[0].clone();
            Ok(probe.forward_teacher(v, tags, caption)?.nll)
        };
        let report: GradReport = gradcheck_inputs(
            &mut f,
            std::slice::from_ref(&base),
            std::slice::from_ref(&analytic),
            per_tensor,
            &mut rng,
        )?;
        reports.push(ParamReport {
            name: name.clone(),
            worst_rel_err: report.worst_rel_err,
            coords_checked: report.coords_checked,
        });
    }
    Ok(reports)
}
