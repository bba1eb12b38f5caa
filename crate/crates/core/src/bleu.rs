//! Corpus-level BLEU-4.
//!
//! Lowercased whitespace tokens, clipped n-gram counts, uniform weights, no
//! smoothing, and a brevity penalty against the closest reference length
//! (the shorter one on ties).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics; BLEU is a pure function of these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramStats {
    /// Clipped matches per order, unigrams first.
    pub matches: [u64; MAX_ORDER],
    /// Candidate n-grams per order.
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl NgramStats {
    pub fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        if self.candidate_len > self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        }
    }

    /// 0 when any order has no match.
    pub fn bleu(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_precision: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        self.brevity_penalty() * log_precision.exp()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Statistics of one candidate against its references.
pub fn sentence_stats<R: AsRef<str>>(candidate: &str, references: &[R]) -> NgramStats {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    let mut stats = NgramStats {
        candidate_len: cand.len() as u64,
        reference_len: closest_length(cand.len(), &refs) as u64,
        ..NgramStats::default()
    };
    for n in 1..=MAX_ORDER {
        let counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for r in &refs {
            for (gram, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        stats.matches[n - 1] = counts
            .iter()
            .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        stats.totals[n - 1] = cand.len().saturating_sub(n - 1) as u64;
    }
    stats
}

fn closest_length(candidate: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(candidate), len))
        .unwrap_or(0)
}

/// Corpus BLEU-4 over `(candidate, references)` pairs.
pub fn corpus_bleu<R: AsRef<str>>(pairs: &[(&str, &[R])]) -> (f64, NgramStats) {
    let mut total = NgramStats::default();
    for (candidate, references) in pairs {
        total.add(&sentence_stats(candidate, references));
    }
    (total.bleu(), total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image: String,
    pub candidate: String,
    pub references: Vec<String>,
    pub bleu4: f64,
    pub stats: NgramStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub count: usize,
    pub stats: NgramStats,
    pub per_image: Vec<ImageScore>,
    /// Candidate ids with no references, left out of the score.
    pub unmatched: Vec<String>,
}

impl EvalReport {
    /// Corpus score rebuilt from the per-image statistics.
    pub fn recompute(&self) -> f64 {
        let mut total = NgramStats::default();
        for s in &self.per_image {
            total.add(&s.stats);
        }
        total.bleu()
    }
}

/// Scores candidates keyed by image id. Ids without references (or with an
/// empty reference list) are reported in `unmatched`.
pub fn evaluate(candidates: &[(String, String)], references: &HashMap<String, Vec<String>>) -> EvalReport {
    let mut total = NgramStats::default();
    let mut per_image = Vec::new();
    let mut unmatched = Vec::new();
    for (image, candidate) in candidates {
        match references.get(image) {
            Some(refs) if !refs.is_empty() => {
                let stats = sentence_stats(candidate, refs);
                total.add(&stats);
                per_image.push(ImageScore {
                    image: image.clone(),
                    candidate: candidate.clone(),
                    references: refs.clone(),
                    bleu4: stats.bleu(),
                    stats,
                });
            }
            _ => unmatched.push(image.clone()),
        }
    }
    EvalReport {
        bleu4: total.bleu(),
        count: per_image.len(),
        stats: total,
        per_image,
        unmatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_one() {
        let s = sentence_stats("a man rides a horse on the beach", &["A man rides a horse on the beach"]);
        assert_eq!(s.bleu(), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        let s = sentence_stats("purple elephants dance", &["a man rides a horse"]);
        assert_eq!(s.matches[0], 0);
        assert_eq!(s.bleu(), 0.0);
    }

    #[test]
    fn counts_are_clipped() {
        let s = sentence_stats("the the the the", &["the cat"]);
        assert_eq!(s.matches[0], 1);
        assert_eq!(s.totals[0], 4);
    }

    #[test]
    fn closest_reference_prefers_shorter_on_ties() {
        let refs = vec![tokenize("a b c d e f"), tokenize("a b c d")];
        assert_eq!(closest_length(5, &refs), 4);
    }

    #[test]
    fn unmatched_ids_are_excluded() {
        let mut refs = HashMap::new();
        refs.insert("img1".to_string(), vec!["a dog runs on the grass".to_string()]);
        let cands = vec![
            ("img1".to_string(), "a dog runs on the grass".to_string()),
            ("img9".to_string(), "anything".to_string()),
        ];
        let report = evaluate(&cands, &refs);
        assert_eq!(report.count, 1);
        assert_eq!(report.unmatched, vec!["img9"]);
        assert_eq!(report.bleu4, 1.0);
        assert_eq!(report.recompute(), report.bleu4);
    }
}
