//! Vocabulary bookkeeping and the word embedding table.
//!
//! Ids 0..3 are reserved for `<pad>`, `<s>`, `</s>`, `<unk>`; corpus
//! tokens follow in sorted order so a rebuilt vocabulary is stable across
//! runs. The embedding table stores one column per id and is centered so
//! every embedding dimension has zero mean across the vocabulary.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Names of the four reserved tokens, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id bijection with dense ids and four reserved slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;

    /// Builds a vocabulary from non-reserved tokens kept in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            all.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid token {t:?}")));
            }
            if index.contains_key(&t) {
                return Err(Error::Validation(format!("duplicate token {t:?}")));
            }
            index.insert(t.clone(), all.len());
            all.push(t);
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Vocabulary of the sorted unique words of a caption corpus.
    pub fn from_corpus<I, S>(sentences: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        for s in sentences {
            for w in s.as_ref().split_whitespace() {
                if !RESERVED.contains(&w) {
                    words.insert(w.to_string());
                }
            }
        }
        Vocabulary::from_tokens(words)
    }

    /// Total id count including the four reserved slots.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Id of a token; unknown tokens map to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::Index { index: id, len: self.tokens.len() })
    }

    /// Encodes a whitespace-tokenized sentence; unknown words become `<unk>`.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Joins ids back into a sentence.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let words: Vec<&str> = ids.iter().map(|&id| self.token(id)).collect::<Result<_>>()?;
        Ok(words.join(" "))
    }

    /// Writes one non-reserved token per line; line number = id − 4.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tokens[RESERVED.len()..] {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                return Err(Error::Format { line: i + 1, msg: "empty token line".into() });
            }
            tokens.push(t.to_string());
        }
        Vocabulary::from_tokens(tokens)
    }
}

/// Centers each row of a matrix to zero mean across its columns.
///
/// Rows whose mean is already below 1e-12 in magnitude are left untouched:
/// re-centering a centered row only injects rounding noise, and skipping
/// makes the operation exactly idempotent.
pub fn zero_mean(w: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::Rank { op: "zero_mean", expected: "a matrix", got: w.shape().to_vec() });
    }
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut out = w.clone();
    for i in 0..rows {
        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        if mean.abs() > 1e-12 {
            for v in row {
                *v -= mean;
            }
        }
    }
    Ok(out)
}

/// Word embedding matrix `W_e ∈ R^{d_emb × V}`, one column per token id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    w: Tensor,
}

impl EmbeddingTable {
    /// Wraps an existing matrix without re-centering it.
    pub fn from_matrix(w: Tensor) -> Result<EmbeddingTable> {
        if w.rank() != 2 {
            return Err(Error::Rank {
                op: "embedding",
                expected: "a d_emb x V matrix",
                got: w.shape().to_vec(),
            });
        }
        Ok(EmbeddingTable { w })
    }

    /// Deterministic random table: entries uniform in
    /// `[−0.5/d_emb, 0.5/d_emb)`, then centered per row.
    pub fn random_init(vocab_size: usize, d_emb: usize, seed: u64) -> Result<EmbeddingTable> {
        if vocab_size == 0 || d_emb == 0 {
            return Err(Error::Validation(format!(
                "embedding table needs positive dimensions, got {d_emb}x{vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / d_emb as f64;
        let raw = Tensor::uniform(&[d_emb, vocab_size], -half, half, &mut rng);
        Ok(EmbeddingTable { w: zero_mean(&raw)? })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.w
    }

    pub fn into_matrix(self) -> Tensor {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.w.shape()[1]
    }

    /// Embedding of one token id (a column gather).
    pub fn embed_one(&self, id: usize) -> Result<Tensor> {
        self.w.col(id)
    }

    /// Embeddings of a token id sequence.
    pub fn embed(&self, ids: &[usize]) -> Result<Vec<Tensor>> {
        ids.iter().map(|&id| self.embed_one(id)).collect()
    }
}

/// Reads a GloVe-style text file: each line is a token followed by
/// `d_emb` decimal floats, space-separated.
///
/// Non-reserved tokens are assigned ids in file order after the four
/// reserved slots. Lines whose token is a reserved name assign that
/// reserved column instead (this is what [`save_glove_text`] emits);
/// otherwise reserved columns start at zero. The finished table is then
/// centered per row.
pub fn load_glove_text(path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut d_emb: Option<usize> = None;
    let mut tokens: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut reserved_cols: [Option<Vec<f64>>; 4] = [None, None, None, None];
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field");
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Format {
                    line: i + 1,
                    msg: format!("bad float {p:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Format { line: i + 1, msg: "token without values".into() });
        }
        match d_emb {
            None => d_emb = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("expected {d} floats, got {}", values.len()),
                });
            }
            Some(_) => {}
        }
        if let Some(slot) = RESERVED.iter().position(|&r| r == token) {
            if reserved_cols[slot].is_some() {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("duplicate token {token:?}"),
                });
            }
            reserved_cols[slot] = Some(values);
        } else {
            if tokens.iter().any(|t| t == token) {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("duplicate token {token:?}"),
                });
            }
            tokens.push(token.to_string());
            columns.push(values);
        }
    }
    let d = d_emb.ok_or(Error::Format { line: 0, msg: "empty embedding file".into() })?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let v = vocab.len();
    let mut w = Tensor::zeros(&[d, v]);
    for (slot, col) in reserved_cols.iter().enumerate() {
        if let Some(col) = col {
            for (row, &val) in col.iter().enumerate() {
                w.set2(row, slot, val);
            }
        }
    }
    for (j, col) in columns.iter().enumerate() {
        for (row, &val) in col.iter().enumerate() {
            w.set2(row, j + RESERVED.len(), val);
        }
    }
    Ok((vocab, EmbeddingTable::from_matrix(zero_mean(&w)?)?))
}

/// Writes every column of the table, reserved tokens included, in the
/// format [`load_glove_text`] reads. Floats are printed in Rust's
/// shortest round-trip form, so load-after-save is bit-exact.
pub fn save_glove_text(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    if vocab.len() != table.vocab_size() {
        return Err(Error::Shape {
            op: "save_glove_text",
            detail: format!(
                "vocabulary size {} vs table columns {}",
                vocab.len(),
                table.vocab_size()
            ),
        });
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for id in 0..vocab.len() {
        let col = table.embed_one(id)?;
        write!(f, "{}", vocab.token(id)?)?;
        for v in col.data() {
            write!(f, " {v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}
