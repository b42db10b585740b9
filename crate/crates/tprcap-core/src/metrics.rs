//! Caption quality metrics: BLEU, ROUGE-L, and CIDEr-D.
//!
//! All three operate on pre-tokenized sequences; tokens only need a
//! total order (`usize` ids and `String`s both qualify). Counting maps
//! are `BTreeMap`s so every floating-point reduction runs in one fixed
//! key order, keeping scores bit-reproducible across runs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Highest n-gram order used by BLEU and CIDEr-D.
pub const MAX_N: usize = 4;

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;

/// CIDEr-D Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;

fn ngram_counts<T: Ord + Clone>(tokens: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// BLEU evaluation of one candidate against its references.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Modified (clipped) n-gram precision for n = 1..=MAX_N.
    pub precisions: Vec<f64>,
    /// Cumulative BLEU-n (geometric mean of the first n precisions
    /// times the brevity penalty).
    pub cumulative: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub closest_ref_len: usize,
}

/// Modified n-gram precision BLEU with brevity penalty.
///
/// The effective reference length is the one closest to the candidate
/// length; ties resolve to the shorter reference. A zero precision at
/// any order zeroes that order's cumulative score.
pub fn bleu<T: Ord + Clone>(
    candidate: &[T],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<BleuReport> {
    if candidate.is_empty() {
        return Err(Error::Validation("bleu: empty candidate".into()));
    }
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::Validation("bleu: empty reference set".into()));
    }
    if max_n == 0 {
        return Err(Error::Validation("bleu: max_n must be at least 1".into()));
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let brevity_penalty = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            precisions.push(0.0);
            continue;
        }
        let mut clipped = 0usize;
        for (gram, &count) in &cand {
            let cap = references
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(cap);
        }
        precisions.push(clipped as f64 / total as f64);
    }

    let mut cumulative = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        if precisions[..n].contains(&0.0) {
            cumulative.push(0.0);
        } else {
            let mean_log: f64 = precisions[..n].iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            cumulative.push(brevity_penalty * mean_log.exp());
        }
    }
    Ok(BleuReport { precisions, cumulative, brevity_penalty, candidate_len: c, closest_ref_len: r })
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F-measure, maximized over references.
pub fn rouge_l<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>]) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Validation("rouge_l: empty candidate".into()));
    }
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::Validation("rouge_l: empty reference set".into()));
    }
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut best = 0.0f64;
    for r in references {
        let lcs = lcs_len(candidate, r) as f64;
        let precision = lcs / candidate.len() as f64;
        let recall = lcs / r.len() as f64;
        let denom = recall + beta2 * precision;
        let f = if denom > 0.0 { (1.0 + beta2) * precision * recall / denom } else { 0.0 };
        best = best.max(f);
    }
    Ok(best)
}

/// Document frequencies over a reference corpus, the TF-IDF side of
/// CIDEr-D. Built from references only; candidates never contribute.
#[derive(Clone, Debug)]
pub struct CorpusStats<T: Ord + Clone> {
    /// For each order n (index n−1), the number of documents whose
    /// reference set contains the n-gram at least once.
    df: Vec<BTreeMap<Vec<T>, usize>>,
    documents: usize,
}

impl<T: Ord + Clone> CorpusStats<T> {
    /// Builds stats from one reference set (document) per sample.
    pub fn from_references(corpus: &[Vec<Vec<T>>]) -> Result<CorpusStats<T>> {
        if corpus.is_empty() {
            return Err(Error::Validation("corpus stats need at least one reference set".into()));
        }
        let mut df: Vec<BTreeMap<Vec<T>, usize>> = vec![BTreeMap::new(); MAX_N];
        for refs in corpus {
            if refs.is_empty() {
                return Err(Error::Validation("reference set without references".into()));
            }
            for (n, table) in df.iter_mut().enumerate() {
                let mut seen: BTreeMap<Vec<T>, ()> = BTreeMap::new();
                for r in refs {
                    for gram in ngram_counts(r, n + 1).into_keys() {
                        seen.entry(gram).or_insert(());
                    }
                }
                for (gram, ()) in seen {
                    *table.entry(gram).or_insert(0) += 1;
                }
            }
        }
        Ok(CorpusStats { df, documents: corpus.len() })
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Document frequency of an n-gram (`gram.len()` picks the order).
    pub fn df(&self, gram: &[T]) -> usize {
        if gram.is_empty() || gram.len() > MAX_N {
            return 0;
        }
        self.df[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// `idf = ln(N) − ln(max(df, 1))`; unseen n-grams carry full weight.
    fn idf(&self, order: usize, gram: &[T]) -> f64 {
        let df = self.df[order].get(gram).copied().unwrap_or(0);
        (self.documents as f64).ln() - (df.max(1) as f64).ln()
    }

    fn tfidf(&self, order: usize, counts: &BTreeMap<Vec<T>, usize>) -> BTreeMap<Vec<T>, f64> {
        counts
            .iter()
            .map(|(gram, &c)| (gram.clone(), c as f64 * self.idf(order, gram)))
            .collect()
    }
}

fn l2<T>(v: &BTreeMap<Vec<T>, f64>) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// CIDEr-D: clipped TF-IDF cosine similarity per order with a Gaussian
/// length penalty, averaged over references and orders, scaled by 10.
///
/// An empty candidate scores 0 by the formula itself (every numerator
/// vanishes), which is what reinforcement rollouts rely on.
pub fn cider_d<T: Ord + Clone>(
    candidate: &[T],
    references: &[Vec<T>],
    stats: &CorpusStats<T>,
) -> Result<f64> {
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::Validation("cider_d: empty reference set".into()));
    }
    if stats.documents == 0 {
        return Err(Error::Validation("cider_d: empty corpus stats".into()));
    }
    let cand_counts: Vec<BTreeMap<Vec<T>, usize>> =
        (1..=MAX_N).map(|n| ngram_counts(candidate, n)).collect();
    let cand_vecs: Vec<BTreeMap<Vec<T>, f64>> =
        cand_counts.iter().enumerate().map(|(o, c)| stats.tfidf(o, c)).collect();
    let cand_norms: Vec<f64> = cand_vecs.iter().map(l2).collect();

    let mut per_order = vec![0.0f64; MAX_N];
    for r in references {
        let delta = candidate.len() as f64 - r.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        for order in 0..MAX_N {
            let ref_counts = ngram_counts(r, order + 1);
            let ref_vec = stats.tfidf(order, &ref_counts);
            let ref_norm = l2(&ref_vec);
            if cand_norms[order] == 0.0 || ref_norm == 0.0 {
                continue;
            }
            // Clip the candidate weight by the reference weight — the
            // "-D" guard against stuffing repeated n-grams.
            let mut dot = 0.0;
            for (gram, &cw) in &cand_vecs[order] {
                if let Some(&rw) = ref_vec.get(gram) {
                    dot += cw.min(rw) * rw;
                }
            }
            per_order[order] += penalty * dot / (cand_norms[order] * ref_norm);
        }
    }
    let mean_over_orders: f64 =
        per_order.iter().map(|s| s / references.len() as f64).sum::<f64>() / MAX_N as f64;
    Ok(10.0 * mean_over_orders)
}
