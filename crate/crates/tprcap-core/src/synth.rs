//! Synthetic caption corpus.
//!
//! Each sample picks one object, color, and action from a small
//! grammar. Tags are a noised indicator vector over the attributes,
//! the image feature is a sum of fixed random per-attribute basis
//! vectors plus Gaussian noise, and captions realize one to three
//! fixed templates. Everything is a pure function of the seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{CaptionSample, Dataset};
use crate::error::{Error, Result};

/// Attribute sets shared by captions, tags, and features.
#[derive(Clone, Debug)]
pub struct Grammar {
    pub objects: Vec<String>,
    pub colors: Vec<String>,
    pub actions: Vec<String>,
}

impl Grammar {
    /// The default desk-scale grammar: 8 objects × 6 colors × 6 actions,
    /// 288 attribute combinations, ~28 vocabulary entries.
    pub fn desk_default() -> Grammar {
        let owned = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Grammar {
            objects: owned(&["car", "dog", "bird", "house", "tree", "boat", "chair", "truck"]),
            colors: owned(&["red", "blue", "green", "yellow", "black", "white"]),
            actions: owned(&["parked", "running", "singing", "waiting", "moving", "resting"]),
        }
    }

    /// Total attribute count `|objects| + |colors| + |actions|`; this is
    /// the tag vector length.
    pub fn attribute_count(&self) -> usize {
        self.objects.len() + self.colors.len() + self.actions.len()
    }

    /// Number of distinct (object, color, action) combinations.
    pub fn combinations(&self) -> usize {
        self.objects.len() * self.colors.len() * self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in
            [("objects", &self.objects), ("colors", &self.colors), ("actions", &self.actions)]
        {
            if set.is_empty() {
                return Err(Error::Validation(format!("grammar {name} set is empty")));
            }
        }
        let mut all: Vec<&str> = self
            .objects
            .iter()
            .chain(&self.colors)
            .chain(&self.actions)
            .map(String::as_str)
            .collect();
        for w in &all {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("grammar word {w:?} is not a token")));
            }
        }
        all.sort_unstable();
        all.dedup();
        if all.len() != self.attribute_count() {
            return Err(Error::Validation("grammar words must be distinct".into()));
        }
        Ok(())
    }
}

/// Knobs for [`synth_generate`].
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Image feature length.
    pub k_v: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub feature_noise: f64,
    /// Upper bound of the uniform tag noise.
    pub tag_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig { n_samples: 64, k_v: 32, feature_noise: 0.05, tag_noise: 0.1, seed: 0 }
    }
}

const TEMPLATES: usize = 3;

fn realize(template: usize, color: &str, object: &str, action: &str) -> Vec<String> {
    let words: Vec<&str> = match template {
        0 => vec!["a", color, object, "is", action],
        1 => vec!["the", color, object, "is", action],
        _ => vec!["there", "is", "a", color, object, action],
    };
    words.into_iter().map(str::to_owned).collect()
}

/// Generates a dataset from the grammar, deterministically per seed.
///
/// While `n_samples` fits within the distinct combination count,
/// attribute triples are drawn without replacement so no two samples
/// demand different captions for near-identical inputs.
pub fn synth_generate(config: &SynthConfig, grammar: &Grammar) -> Result<Dataset> {
    if config.n_samples < 1 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    if config.k_v < 1 {
        return Err(Error::Validation("k_v must be at least 1".into()));
    }
    if config.feature_noise < 0.0 || config.tag_noise < 0.0 {
        return Err(Error::Validation("noise levels must be non-negative".into()));
    }
    grammar.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k_s = grammar.attribute_count();
    let scale = 1.0 / (config.k_v as f64).sqrt();
    // Fixed per-attribute basis, drawn once before any sample.
    let basis: Vec<Vec<f64>> = (0..k_s)
        .map(|_| (0..config.k_v).map(|_| rng.random_range(-1.0..1.0) * scale).collect())
        .collect();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    let combos = grammar.combinations();
    let combo_ids: Vec<usize> = if config.n_samples <= combos {
        let mut all: Vec<usize> = (0..combos).collect();
        all.shuffle(&mut rng);
        all.truncate(config.n_samples);
        all
    } else {
        (0..config.n_samples).map(|_| rng.random_range(0..combos)).collect()
    };

    let mut samples = Vec::with_capacity(config.n_samples);
    for (i, &combo) in combo_ids.iter().enumerate() {
        let obj = combo % grammar.objects.len();
        let rest = combo / grammar.objects.len();
        let col = rest % grammar.colors.len();
        let act = rest / grammar.colors.len();
        let attr_indices = [
            obj,
            grammar.objects.len() + col,
            grammar.objects.len() + grammar.colors.len() + act,
        ];

        let mut tags = vec![0.0f64; k_s];
        for &a in &attr_indices {
            tags[a] = 1.0;
        }
        for t in tags.iter_mut() {
            // Indicator plus uniform noise, clamped back into [0, 1].
            *t = (*t + rng.random_range(0.0..config.tag_noise.max(f64::MIN_POSITIVE))).min(1.0);
        }

        let mut v = vec![0.0f64; config.k_v];
        for &a in &attr_indices {
            for (x, b) in v.iter_mut().zip(&basis[a]) {
                *x += b;
            }
        }
        if config.feature_noise > 0.0 {
            for x in v.iter_mut() {
                *x += config.feature_noise * gauss.sample(&mut rng);
            }
        }

        let n_caps = rng.random_range(1..=TEMPLATES);
        let mut template_order: Vec<usize> = (0..TEMPLATES).collect();
        template_order.shuffle(&mut rng);
        let captions: Vec<Vec<String>> = template_order[..n_caps]
            .iter()
            .map(|&t| {
                realize(t, &grammar.colors[col], &grammar.objects[obj], &grammar.actions[act])
            })
            .collect();

        samples.push(CaptionSample { id: format!("synth-{i:04}"), v, tags, captions });
    }
    Dataset::new(samples)
}
