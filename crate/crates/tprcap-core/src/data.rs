//! Caption dataset: JSONL storage, validation, vocabulary extraction,
//! and encoding into tensors.
//!
//! One `CaptionSample` per line. Captions are stored as bare token
//! lists; the sentinel markers `<s>`/`</s>` are added when a caption is
//! encoded for the model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

/// One training/evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionSample {
    pub id: String,
    /// Image feature vector, length `k_v`.
    pub v: Vec<f64>,
    /// Semantic tag strengths, length `k_s`, each in `[0, 1]`.
    pub tags: Vec<f64>,
    /// At least one caption, each a non-empty token list.
    pub captions: Vec<Vec<String>>,
}

impl CaptionSample {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("sample id is empty".into()));
        }
        if self.v.is_empty() {
            return Err(Error::Validation(format!("sample {}: empty feature vector", self.id)));
        }
        if !self.v.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation(format!(
                "sample {}: non-finite feature value",
                self.id
            )));
        }
        if self.tags.is_empty() {
            return Err(Error::Validation(format!("sample {}: empty tag vector", self.id)));
        }
        if !self.tags.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)) {
            return Err(Error::Validation(format!(
                "sample {}: tag values must lie in [0, 1]",
                self.id
            )));
        }
        if self.captions.is_empty() {
            return Err(Error::Validation(format!("sample {}: no captions", self.id)));
        }
        for caption in &self.captions {
            if caption.is_empty() {
                return Err(Error::Validation(format!("sample {}: empty caption", self.id)));
            }
            for token in caption {
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(Error::Validation(format!(
                        "sample {}: bad caption token {token:?}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An in-memory dataset with consistent feature and tag lengths.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<CaptionSample>,
}

impl Dataset {
    /// Wraps samples after validating each one and the cross-sample
    /// length consistency. Index `i` is reported as line `i + 1` so the
    /// message matches the JSONL layout.
    pub fn new(samples: Vec<CaptionSample>) -> Result<Dataset> {
        let located = |i: usize, e: Error| match e {
            Error::Validation(msg) => Error::Format { line: i + 1, msg },
            other => other,
        };
        for (i, s) in samples.iter().enumerate() {
            s.validate().map_err(|e| located(i, e))?;
        }
        if let Some(first) = samples.first() {
            let (k_v, k_s) = (first.v.len(), first.tags.len());
            for (i, s) in samples.iter().enumerate().skip(1) {
                if s.v.len() != k_v {
                    return Err(Error::Format {
                        line: i + 1,
                        msg: format!(
                            "sample {}: feature length {} != {}",
                            s.id,
                            s.v.len(),
                            k_v
                        ),
                    });
                }
                if s.tags.len() != k_s {
                    return Err(Error::Format {
                        line: i + 1,
                        msg: format!("sample {}: tag length {} != {}", s.id, s.tags.len(), k_s),
                    });
                }
            }
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k_v(&self) -> Option<usize> {
        self.samples.first().map(|s| s.v.len())
    }

    pub fn k_s(&self) -> Option<usize> {
        self.samples.first().map(|s| s.tags.len())
    }

    /// Parses JSONL text; an empty document is an empty dataset.
    pub fn from_jsonl(text: &str) -> Result<Dataset> {
        let mut samples: Vec<CaptionSample> = Vec::new();
        let mut lengths: Option<(usize, usize)> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let located = |msg: String| Error::Format { line: i + 1, msg };
            let sample: CaptionSample =
                serde_json::from_str(line).map_err(|e| located(e.to_string()))?;
            sample.validate().map_err(|e| match e {
                Error::Validation(msg) => located(msg),
                other => other,
            })?;
            match lengths {
                None => lengths = Some((sample.v.len(), sample.tags.len())),
                Some((k_v, k_s)) => {
                    if sample.v.len() != k_v {
                        return Err(located(format!(
                            "sample {}: feature length {} != {k_v}",
                            sample.id,
                            sample.v.len()
                        )));
                    }
                    if sample.tags.len() != k_s {
                        return Err(located(format!(
                            "sample {}: tag length {} != {k_s}",
                            sample.id,
                            sample.tags.len()
                        )));
                    }
                }
            }
            samples.push(sample);
        }
        Ok(Dataset { samples })
    }

    /// One compact JSON object per line, trailing newline included.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        Dataset::from_jsonl(&text)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Checks that every caption fits the role capacity once wrapped
    /// with the sentinel markers.
    pub fn validate_capacity(&self, d: usize) -> Result<()> {
        for s in &self.samples {
            for caption in &s.captions {
                if caption.len() + 2 > d {
                    return Err(Error::Capacity { requested: caption.len() + 2, capacity: d });
                }
            }
        }
        Ok(())
    }

    /// Vocabulary over every caption token, reserved ids first.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let sentences: Vec<String> =
            self.samples.iter().flat_map(|s| s.captions.iter().map(|c| c.join(" "))).collect();
        Vocabulary::from_corpus(sentences)
    }

    /// Deterministic split into `(train, validation)` with `val_count`
    /// samples held out after a seeded shuffle.
    pub fn split(&self, val_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if val_count == 0 || val_count >= self.len() {
            return Err(Error::Validation(format!(
                "validation size {val_count} must leave both splits non-empty (n = {})",
                self.len()
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        let val: Vec<CaptionSample> =
            order[..val_count].iter().map(|&i| self.samples[i].clone()).collect();
        let train: Vec<CaptionSample> =
            order[val_count..].iter().map(|&i| self.samples[i].clone()).collect();
        Ok((Dataset { samples: train }, Dataset { samples: val }))
    }
}

/// A sample converted to tensors and token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub v: Tensor,
    pub tags: Tensor,
    /// Captions wrapped `<s> … </s>`, ready for teacher forcing.
    pub captions: Vec<Vec<usize>>,
    /// The same captions without sentinels, for metric references.
    pub refs: Vec<Vec<usize>>,
}

/// Encodes every sample against a vocabulary; unknown tokens map to
/// `<unk>`.
pub fn encode_dataset(dataset: &Dataset, vocab: &Vocabulary) -> Result<Vec<EncodedSample>> {
    let mut out = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let mut captions = Vec::with_capacity(s.captions.len());
        let mut refs = Vec::with_capacity(s.captions.len());
        for caption in &s.captions {
            let content: Vec<usize> = caption.iter().map(|t| vocab.id(t)).collect();
            let mut wrapped = Vec::with_capacity(content.len() + 2);
            wrapped.push(Vocabulary::BOS);
            wrapped.extend(&content);
            wrapped.push(Vocabulary::EOS);
            refs.push(content);
            captions.push(wrapped);
        }
        out.push(EncodedSample {
            id: s.id.clone(),
            v: Tensor::vector(s.v.clone()),
            tags: Tensor::vector(s.tags.clone()),
            captions,
            refs,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> CaptionSample {
        CaptionSample {
            id: id.into(),
            v: vec![0.1, -0.2, 0.3],
            tags: vec![0.0, 1.0, 0.5],
            captions: vec![vec!["a".into(), "red".into(), "car".into()]],
        }
    }

    #[test]
    fn jsonl_round_trip_is_byte_stable() {
        let ds = Dataset::new(vec![sample("s1"), sample("s2")]).unwrap();
        let text = ds.to_jsonl();
        let reloaded = Dataset::from_jsonl(&text).unwrap();
        assert_eq!(ds, reloaded);
        assert_eq!(text, reloaded.to_jsonl());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let ds = Dataset::new(vec![sample("s1")]).unwrap();
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(ds, loaded);
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), ds.to_jsonl());
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(Dataset::from_jsonl("").unwrap().is_empty());
        assert!(Dataset::from_jsonl("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_json_names_the_line() {
        let good = serde_json::to_string(&sample("s1")).unwrap();
        let text = format!("{good}\n{{not json\n");
        match Dataset::from_jsonl(&text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_tag_length_names_line_three() {
        let mut bad = sample("s3");
        bad.tags = vec![0.5, 0.5];
        let text = format!(
            "{}\n{}\n{}\n",
            serde_json::to_string(&sample("s1")).unwrap(),
            serde_json::to_string(&sample("s2")).unwrap(),
            serde_json::to_string(&bad).unwrap(),
        );
        match Dataset::from_jsonl(&text) {
            Err(Error::Format { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("tag length"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_samples_are_rejected() {
        let mut no_caps = sample("x");
        no_caps.captions.clear();
        assert!(Dataset::new(vec![no_caps]).is_err());

        let mut bad_tag = sample("x");
        bad_tag.tags[0] = 1.5;
        assert!(Dataset::new(vec![bad_tag]).is_err());

        let mut nan_v = sample("x");
        nan_v.v[0] = f64::NAN;
        assert!(Dataset::new(vec![nan_v]).is_err());

        let mut spacey = sample("x");
        spacey.captions[0][0] = "two words".into();
        assert!(Dataset::new(vec![spacey]).is_err());
    }

    #[test]
    fn capacity_check() {
        let ds = Dataset::new(vec![sample("s1")]).unwrap();
        // Wrapped length 5 fits d = 8 but not d = 4.
        ds.validate_capacity(8).unwrap();
        assert!(matches!(
            ds.validate_capacity(4),
            Err(Error::Capacity { requested: 5, capacity: 4 })
        ));
    }

    #[test]
    fn vocabulary_covers_tokens() {
        let ds = Dataset::new(vec![sample("s1")]).unwrap();
        let vocab = ds.vocabulary().unwrap();
        assert_eq!(vocab.len(), 4 + 3);
        for tok in ["a", "red", "car"] {
            assert!(vocab.id(tok) >= 4);
        }
    }

    #[test]
    fn encoding_wraps_and_strips() {
        let ds = Dataset::new(vec![sample("s1")]).unwrap();
        let vocab = ds.vocabulary().unwrap();
        let encoded = encode_dataset(&ds, &vocab).unwrap();
        assert_eq!(encoded.len(), 1);
        let e = &encoded[0];
        assert_eq!(e.v.shape(), [3]);
        assert_eq!(e.tags.shape(), [3]);
        let wrapped = &e.captions[0];
        assert_eq!(wrapped[0], Vocabulary::BOS);
        assert_eq!(*wrapped.last().unwrap(), Vocabulary::EOS);
        assert_eq!(&wrapped[1..wrapped.len() - 1], e.refs[0].as_slice());
        assert_eq!(e.refs[0], vocab.encode("a red car"));
    }

    #[test]
    fn unknown_tokens_become_unk() {
        let ds = Dataset::new(vec![sample("s1")]).unwrap();
        let vocab = Vocabulary::from_corpus(["a red"]).unwrap();
        let encoded = encode_dataset(&ds, &vocab).unwrap();
        assert_eq!(*encoded[0].refs[0].last().unwrap(), Vocabulary::UNK);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let samples: Vec<CaptionSample> =
            (0..10).map(|i| sample(&format!("s{i}"))).collect();
        let ds = Dataset::new(samples).unwrap();
        let (tr1, va1) = ds.split(3, 7).unwrap();
        let (tr2, va2) = ds.split(3, 7).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(va1, va2);
        assert_eq!(tr1.len(), 7);
        assert_eq!(va1.len(), 3);
        let mut ids: Vec<&str> = tr1
            .samples
            .iter()
            .chain(va1.samples.iter())
            .map(|s| s.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10, "splits overlap or drop samples");
        assert!(ds.split(0, 1).is_err());
        assert!(ds.split(10, 1).is_err());
    }

    #[test]
    fn inconsistent_feature_length_is_located() {
        let mut other = sample("s2");
        other.v = vec![1.0, 2.0];
        match Dataset::new(vec![sample("s1"), other]) {
            Err(Error::Format { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("feature length"), "{msg}");
            }
            other => panic!("expected located error, got {other:?}"),
        }
    }
}
