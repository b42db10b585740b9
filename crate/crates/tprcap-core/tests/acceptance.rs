//! The eight release-gate checks. Each test prints one
//! `ACCEPTANCE n (name): PASS|FAIL` line before asserting, so a full
//! run reads as a checklist.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tprcap_core::captioner::{DecodeOptions, Model, ModelDims};
use tprcap_core::cell::VariantConfig;
use tprcap_core::checkpoint::{read_checkpoint, write_checkpoint};
use tprcap_core::data::{encode_dataset, Dataset, EncodedSample};
use tprcap_core::metrics::{bleu, cider_d, rouge_l, CorpusStats};
use tprcap_core::synth::{synth_generate, Grammar, SynthConfig};
use tprcap_core::tpr::{retrieval_experiment, sylvester_hadamard, RoleBasis};
use tprcap_core::trainer::{
    corpus_stats, grad_check, OptimizerKind, TrainConfig, Trainer,
};
use tprcap_core::vocab::Vocabulary;
use tprcap_core::Tensor;

fn verdict(n: usize, name: &str, ok: bool) {
    // Written through the raw handle so the line survives the harness's
    // output capture and shows up in a plain `cargo test` run.
    use std::io::Write;
    let mut out = std::io::stdout();
    writeln!(out, "ACCEPTANCE {n} ({name}): {}", if ok { "PASS" } else { "FAIL" })
        .and_then(|()| out.flush())
        .expect("stdout");
}

#[test]
fn criterion_1_exact_retrieval() {
    let start = Instant::now();
    let mut perfect = true;
    for d in [8usize, 16, 32, 64] {
        let basis = RoleBasis::sylvester(d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let embeddings = Tensor::uniform(&[d, 1000], -1.0, 1.0, &mut rng);
        let report = retrieval_experiment(&embeddings, &basis, d, 1000, &mut rng).unwrap();
        perfect &= report.correct == 1000 && report.trials == 1000;
    }
    let elapsed = start.elapsed();
    let ok = perfect && elapsed < Duration::from_secs(10);
    verdict(1, "exact retrieval", ok);
    assert!(ok, "perfect: {perfect}, elapsed: {elapsed:?}");
}

#[test]
fn criterion_2_hadamard_validity() {
    let mut ok = true;
    for k in 0u32..=7 {
        let d = 1usize << k;
        let h = sylvester_hadamard(k);
        for i in 0..d {
            for j in 0..d {
                let mut dot = 0.0;
                for l in 0..d {
                    dot += h.at2(i, l) * h.at2(j, l);
                }
                let want = if i == j { (1u64 << k) as f64 } else { 0.0 };
                ok &= dot == want;
            }
        }
        let basis = RoleBasis::sylvester(d).unwrap();
        let u = basis.matrix();
        for i in 0..d {
            for j in 0..d {
                let mut dot = 0.0;
                for l in 0..d {
                    dot += u.at2(l, i) * u.at2(l, j);
                }
                let want = if i == j { 1.0 } else { 0.0 };
                ok &= (dot - want).abs() <= 1e-10;
            }
        }
    }
    verdict(2, "Hadamard validity", ok);
    assert!(ok);
}

fn random_caption(rng: &mut ChaCha8Rng, vocab: usize, content: usize) -> Vec<usize> {
    let mut caption = vec![Vocabulary::BOS];
    for _ in 0..content {
        caption.push(rng.random_range(Vocabulary::UNK + 1..vocab));
    }
    caption.push(Vocabulary::EOS);
    caption
}

#[test]
fn criterion_3_gradient_integrity() {
    let start = Instant::now();
    let dims = ModelDims { d: 32, m: 64, k_v: 64, k_s: 16, vocab: 64 };
    let mut worst = 0.0f64;
    for (i, cfg) in VariantConfig::ALL.iter().enumerate() {
        let model = Model::init(&dims, *cfg, 100 + i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + i as u64);
        let v = Tensor::uniform(&[dims.k_v], -1.0, 1.0, &mut rng);
        let tags = Tensor::uniform(&[dims.k_s], 0.0, 1.0, &mut rng);
        let caption = random_caption(&mut rng, dims.vocab, 5);
        let reports = grad_check(&model, &v, &tags, &caption, 32, 300 + i as u64).unwrap();
        let variant_worst =
            reports.iter().map(|r| r.worst_rel_err).fold(0.0, f64::max);
        worst = worst.max(variant_worst);
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-4 && elapsed < Duration::from_secs(300);
    verdict(3, "gradient integrity", ok);
    assert!(ok, "worst relative error {worst:.3e}, elapsed {elapsed:?}");
}

/// Unit tag factor on the filler path: `p_m` all ones (so a one-hot tag
/// vector maps to exactly 1.0 per row) and `p_n` copied from `w_t`.
fn force_unit_tpr_factor(model: &mut Model) {
    for gate in ["i", "f", "o", "g"] {
        let w_t_name = format!("cell.{gate}.w_t");
        let w_t = model
            .named_tensors()
            .into_iter()
            .find(|(n, _)| *n == w_t_name)
            .unwrap()
            .1
            .clone();
        for (name, tensor) in model.named_tensors_mut() {
            if name == format!("cell.{gate}.p_m") {
                *tensor = Tensor::ones(tensor.shape());
            } else if name == format!("cell.{gate}.p_n") {
                *tensor = w_t.clone();
            }
        }
    }
}

#[test]
fn criterion_4_variant_collapse() {
    let dims = ModelDims { d: 8, m: 10, k_v: 6, k_s: 4, vocab: 16 };
    let pairs = [(3usize, 0usize), (4, 1), (5, 2)];
    let mut ok = true;
    let mut worst = 0.0f64;
    for (dt_idx, t_idx) in pairs {
        let mut decomposed = Model::init(&dims, VariantConfig::ALL[dt_idx], 40).unwrap();
        let mut plain = Model::init(&dims, VariantConfig::ALL[t_idx], 40).unwrap();
        force_unit_tpr_factor(&mut decomposed);
        force_unit_tpr_factor(&mut plain);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let v = Tensor::uniform(&[dims.k_v], -1.0, 1.0, &mut rng);
            let mut tags = Tensor::zeros(&[dims.k_s]);
            let hot = rng.random_range(0..dims.k_s);
            tags.data_mut()[hot] = 1.0;
            let content = rng.random_range(3..=5);
            let caption = random_caption(&mut rng, dims.vocab, content);
            let a = decomposed.forward_teacher(&v, &tags, &caption).unwrap();
            let b = plain.forward_teacher(&v, &tags, &caption).unwrap();
            for (da, db) in a.distributions.iter().zip(&b.distributions) {
                worst = worst.max(da.max_abs_diff(db));
            }
        }
    }
    ok &= worst <= 1e-12;
    verdict(4, "variant collapse", ok);
    assert!(ok, "worst output deviation {worst:.3e}");
}

#[test]
fn criterion_5_metric_oracles() {
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let mut ok = true;

    // Identity scores.
    let sent = toks("a red car waits by the tree");
    let report = bleu(&sent, &[sent.clone()], 4).unwrap();
    ok &= report.cumulative.iter().all(|&c| c == 1.0);
    ok &= rouge_l(&sent, &[sent.clone()]).unwrap() == 1.0;

    // The classic clipped-unigram 2/7.
    let cand = toks("the the the the the the the");
    let refs = vec![toks("the cat is on the mat")];
    let clipped = bleu(&cand, &refs, 1).unwrap();
    ok &= clipped.precisions[0] == 2.0 / 7.0;

    // Self-match CIDEr-D against a two-document corpus whose n-grams
    // are distinctive at every order.
    let doc_a = vec![sent.clone()];
    let doc_b = vec![toks("the blue bird sings at dawn now")];
    let stats = CorpusStats::from_references(&[doc_a.clone(), doc_b]).unwrap();
    let self_match = cider_d(&sent, &doc_a, &stats).unwrap();
    ok &= (self_match - 10.0).abs() <= 1e-9;

    // Reference-permutation invariance, 100 shuffled trials each.
    let candidate = toks("a black dog runs in the park");
    let mut refs = vec![
        toks("a black dog runs in the park"),
        toks("the black dog is running outside"),
        toks("a dog runs through a park"),
    ];
    let stats = CorpusStats::from_references(&[refs.clone()]).unwrap();
    let base_bleu = bleu(&candidate, &refs, 4).unwrap().cumulative[3];
    let base_rouge = rouge_l(&candidate, &refs).unwrap();
    let base_cider = cider_d(&candidate, &refs, &stats).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..100 {
        refs.shuffle(&mut rng);
        ok &= (bleu(&candidate, &refs, 4).unwrap().cumulative[3] - base_bleu).abs() <= 1e-12;
        ok &= (rouge_l(&candidate, &refs).unwrap() - base_rouge).abs() <= 1e-12;
        ok &= (cider_d(&candidate, &refs, &stats).unwrap() - base_cider).abs() <= 1e-12;
    }

    verdict(5, "metric oracles", ok);
    assert!(ok);
}

/// Shared overfit artifacts for criteria 6 and 7: a 32-sample
/// single-caption corpus, an E+dT model trained to reproduce it, and a
/// partially trained snapshot for advantage mining.
struct Overfit {
    train: Vec<EncodedSample>,
    stats: CorpusStats<usize>,
    model: Model,
    partial: Model,
    steps_used: usize,
    final_nll: f64,
    reproduction: f64,
    elapsed: Duration,
}

static OVERFIT: OnceLock<Overfit> = OnceLock::new();

fn corpus_nll(model: &Model, train: &[EncodedSample]) -> f64 {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for sample in train {
        let fwd = model.forward_teacher(&sample.v, &sample.tags, &sample.captions[0]).unwrap();
        nll += fwd.nll;
        tokens += fwd.steps;
    }
    nll / tokens as f64
}

fn greedy_reproduction(model: &Model, train: &[EncodedSample]) -> f64 {
    let opts = DecodeOptions::greedy(model.dims.d);
    let hits = train
        .iter()
        .filter(|s| {
            model.generate(&s.v, &s.tags, &opts).unwrap().ids == s.refs[0]
        })
        .count();
    hits as f64 / train.len() as f64
}

fn overfit() -> &'static Overfit {
    OVERFIT.get_or_init(|| {
        let start = Instant::now();
        let config = SynthConfig { n_samples: 32, k_v: 32, seed: 7, ..SynthConfig::default() };
        let mut dataset = synth_generate(&config, &Grammar::desk_default()).unwrap();
        // One caption per sample: with several phrasings the per-token
        // NLL floor sits above the overfit target by construction.
        for sample in &mut dataset.samples {
            sample.captions.truncate(1);
        }
        let vocab = dataset.vocabulary().unwrap();
        let train = encode_dataset(&dataset, &vocab).unwrap();
        let stats = corpus_stats(&train).unwrap();

        let dims = ModelDims { d: 16, m: 48, k_v: 32, k_s: 20, vocab: vocab.len() };
        let model = Model::init(&dims, VariantConfig::ALL[3], 7).unwrap();
        let tc = TrainConfig {
            lr: 2e-3,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, tc).unwrap();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut steps = 0usize;
        let mut partial = None;
        'train: loop {
            order.shuffle(&mut rng);
            for chunk in order.chunks(8) {
                let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
                trainer.xe_step(&batch).unwrap();
                steps += 1;
                // Early snapshot: still imperfect, so sampled rollouts
                // regularly beat the greedy baseline.
                if steps == 60 {
                    partial = Some(trainer.model.clone());
                }
                if steps >= 2000
                    || (steps >= 150 && steps % 50 == 0 && corpus_nll(&trainer.model, &train) < 0.04)
                {
                    break 'train;
                }
            }
        }
        trainer.xe_trained = true;
        let final_nll = corpus_nll(&trainer.model, &train);
        let reproduction = greedy_reproduction(&trainer.model, &train);
        Overfit {
            train,
            stats,
            partial: partial.unwrap_or_else(|| trainer.model.clone()),
            model: trainer.model,
            steps_used: steps,
            final_nll,
            reproduction,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_6_toy_overfit() {
    let art = overfit();
    let ok = art.steps_used <= 2000
        && art.final_nll < 0.05
        && art.reproduction >= 0.95
        && art.elapsed < Duration::from_secs(600);
    verdict(6, "toy overfit", ok);
    assert!(
        ok,
        "steps {}, nll/token {:.4}, reproduction {:.3}, elapsed {:?}",
        art.steps_used, art.final_nll, art.reproduction, art.elapsed
    );
}

#[test]
fn criterion_7_scst_sanity() {
    let art = overfit();

    // Half one: 200 mixed-objective steps must not unlearn the corpus.
    let tc = TrainConfig {
        lr: 3e-4,
        batch_size: 8,
        optimizer: OptimizerKind::Adam,
        seed: 60,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::from_pretrained(art.model.clone(), tc, true).unwrap();
    let before = trainer.evaluate_cider(&art.train, &art.stats).unwrap();
    let mut order: Vec<usize> = (0..art.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut steps = 0usize;
    'scst: loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(8) {
            let batch: Vec<&EncodedSample> =
                chunk.iter().map(|&i| &art.train[i]).collect();
            trainer.scst_step(&batch, &art.stats).unwrap();
            steps += 1;
            if steps >= 200 {
                break 'scst;
            }
        }
    }
    let after = trainer.evaluate_cider(&art.train, &art.stats).unwrap();
    let stable = after >= before - 0.05;

    // Half two: a positive-advantage single-sample step must raise the
    // sampled caption's log-probability (XE held out, small step).
    let tc = TrainConfig {
        lr: 1e-4,
        batch_size: 1,
        optimizer: OptimizerKind::Sgd,
        scst_weight: 1.0,
        xe_weight: 0.0,
        require_xe_pretrained: false,
        ..TrainConfig::default()
    };
    let mut checked = 0usize;
    let mut increased = 0usize;
    let mut attempt = 0u64;
    while checked < 100 && attempt < 4000 {
        attempt += 1;
        let mut t = Trainer::from_pretrained(
            art.partial.clone(),
            TrainConfig { seed: attempt, ..tc },
            true,
        )
        .unwrap();
        let sample = &art.train[(attempt as usize) % art.train.len()];
        let outcome = t.scst_step(&[sample], &art.stats).unwrap();
        let rec = &outcome.records[0];
        if rec.advantage <= 0.0 || rec.truncated || rec.sampled.is_empty() {
            continue;
        }
        let before = art
            .partial
            .sequence_logprob(&sample.v, &sample.tags, &rec.sampled)
            .unwrap();
        let after = t
            .model
            .sequence_logprob(&sample.v, &sample.tags, &rec.sampled)
            .unwrap();
        checked += 1;
        if after > before {
            increased += 1;
        }
    }
    let property = checked == 100 && increased >= 95;

    let ok = stable && property;
    verdict(7, "SCST sanity", ok);
    assert!(
        ok,
        "cider before {before:.3} after {after:.3}; log-prob increase {increased}/{checked}"
    );
}

#[test]
fn criterion_8_serialization() {
    let mut ok = true;

    // Dataset round trip, byte for byte.
    let config = SynthConfig { n_samples: 6, k_v: 5, seed: 70, ..SynthConfig::default() };
    let dataset = synth_generate(&config, &Grammar::desk_default()).unwrap();
    let text = dataset.to_jsonl();
    let back = Dataset::from_jsonl(&text).unwrap();
    ok &= back.to_jsonl() == text;

    // Checkpoint round trip, byte for byte.
    let dims = ModelDims { d: 8, m: 6, k_v: 5, k_s: 4, vocab: 12 };
    let model = Model::init(&dims, VariantConfig::ALL[4], 71).unwrap();
    let bytes = write_checkpoint(&model, true);
    let (loaded, flag) = read_checkpoint(&bytes).unwrap();
    ok &= flag && write_checkpoint(&loaded, true) == bytes;

    // Every single-byte flip must be caught.
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut detected = 0usize;
    for _ in 0..100 {
        let mut corrupt = bytes.clone();
        let at = rng.random_range(0..corrupt.len());
        // A nonzero mask always lands on a different byte value.
        corrupt[at] ^= rng.random_range(1u8..=255);
        if read_checkpoint(&corrupt).is_err() {
            detected += 1;
        }
    }
    ok &= detected == 100;

    verdict(8, "serialization", ok);
    assert!(ok, "single-byte flips detected: {detected}/100");
}
