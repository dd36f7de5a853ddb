//! String distances and evaluation metrics.
//!
//! All string metrics work on Unicode code points. Comparisons against
//! references are case-insensitive.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::EvalItem;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("no references given")]
    NoReferences,
    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("AUC is undefined when only one class is present")]
    OneClass,
    #[error("more than three predictions for item {0}")]
    TooManyPredictions(usize),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

/// Edit distance over code points with unit insert/delete/substitute costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_slices(&a, &b)
}

pub fn levenshtein_slices<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Character error rate of one prediction against one reference.
pub fn cer(prediction: &str, reference: &str) -> Result<f64> {
    let n = char_len(reference);
    if n == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(levenshtein(&prediction.to_lowercase(), &reference.to_lowercase()) as f64 / n as f64)
}

/// Index and distance of the reference closest to `prediction`. Ties go to
/// the earlier reference.
fn closest_reference<S: AsRef<str>>(prediction: &str, references: &[S]) -> Result<(usize, usize)> {
    let pred = prediction.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for (i, r) in references.iter().enumerate() {
        let r = r.as_ref().to_lowercase();
        if r.is_empty() {
            continue;
        }
        let d = levenshtein(&pred, &r);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.ok_or(MetricError::NoReferences)
}

/// Corpus CER: summed edit distances over summed reference lengths, each
/// item scored against its closest reference.
pub fn corpus_cer<P: AsRef<str>, S: AsRef<str>, R: AsRef<[S]>>(predictions: &[P], references: &[R]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut edits = 0usize;
    let mut chars = 0usize;
    for (p, refs) in predictions.iter().zip(references) {
        let refs = refs.as_ref();
        let (idx, d) = closest_reference(p.as_ref(), refs)?;
        edits += d;
        chars += char_len(refs[idx].as_ref());
    }
    Ok(edits as f64 / chars as f64)
}

/// Clipped n-gram statistics of one candidate, n = 1..=4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU on a 0..100 scale. Orders with no candidate n-grams are left out
    /// of the geometric mean; a zero match count at an order that has
    /// candidate n-grams is replaced by a precision of `1 / (2 * total)`.
    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..4 {
            let total = self.totals[n];
            if total == 0 {
                continue;
            }
            let p = if self.matches[n] == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                self.matches[n] as f64 / total as f64
            };
            log_sum += p.ln();
            orders += 1;
        }
        let c = self.cand_len as f64;
        let r = self.ref_len as f64;
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats<S: AsRef<str>>(prediction: &str, references: &[S]) -> Result<BleuStats> {
    let cand: Vec<char> = prediction.to_lowercase().chars().collect();
    let refs: Vec<Vec<char>> = references
        .iter()
        .map(|r| r.as_ref().to_lowercase().chars().collect::<Vec<_>>())
        .filter(|r| !r.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let mut stats = BleuStats {
        cand_len: cand.len(),
        ..Default::default()
    };
    // Closest reference length; ties prefer the shorter reference.
    stats.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(cand.len()), l))
        .unwrap_or(0);
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[char], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total: usize = cand_counts.values().sum();
        let matched: usize = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        stats.matches[n - 1] = matched;
        stats.totals[n - 1] = total;
    }
    Ok(stats)
}

/// Sentence-level character BLEU (0..100).
pub fn char_bleu<S: AsRef<str>>(prediction: &str, references: &[S]) -> Result<f64> {
    Ok(bleu_stats(prediction, references)?.score())
}

/// Corpus character BLEU: clipped counts and lengths summed over items
/// before the score is formed.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<[S]>>(predictions: &[S], references: &[R]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = BleuStats::default();
    for (p, r) in predictions.iter().zip(references) {
        total.add(&bleu_stats(p.as_ref(), r.as_ref())?);
    }
    Ok(total.score())
}

fn matches_any(prediction: &str, item: &EvalItem) -> bool {
    let p = prediction.trim().to_lowercase();
    item.references().contains(&p)
}

pub fn first_token_accuracy<S: AsRef<str>>(top1: &[S], items: &[EvalItem]) -> Result<f64> {
    if top1.len() != items.len() {
        return Err(MetricError::LengthMismatch {
            left: top1.len(),
            right: items.len(),
        });
    }
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = top1
        .iter()
        .zip(items)
        .filter(|(p, it)| matches_any(p.as_ref(), it))
        .count();
    Ok(hits as f64 / items.len() as f64)
}

pub fn any_token_accuracy<S: AsRef<str>>(top3: &[Vec<S>], items: &[EvalItem]) -> Result<f64> {
    if top3.len() != items.len() {
        return Err(MetricError::LengthMismatch {
            left: top3.len(),
            right: items.len(),
        });
    }
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0;
    for (i, (preds, it)) in top3.iter().zip(items).enumerate() {
        if preds.len() > 3 {
            return Err(MetricError::TooManyPredictions(i));
        }
        if preds.iter().any(|p| matches_any(p.as_ref(), it)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

/// Test-set summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub first_token_accuracy: f64,
    pub any_token_accuracy: f64,
    pub cer: f64,
    pub bleu: f64,
    pub n_items: usize,
}

impl EvalReport {
    /// Scores ranked predictions (best first, at most three used) against
    /// the evaluation items. Items with no prediction count as the empty
    /// string.
    pub fn compute<S: AsRef<str>>(ranked: &[Vec<S>], items: &[EvalItem]) -> Result<Self> {
        if ranked.len() != items.len() {
            return Err(MetricError::LengthMismatch {
                left: ranked.len(),
                right: items.len(),
            });
        }
        if items.is_empty() {
            return Err(MetricError::Empty);
        }
        let top1: Vec<String> = ranked
            .iter()
            .map(|r| r.first().map(|s| s.as_ref().to_string()).unwrap_or_default())
            .collect();
        let top3: Vec<Vec<&str>> = ranked
            .iter()
            .map(|r| r.iter().take(3).map(AsRef::as_ref).collect())
            .collect();
        let refs: Vec<&[String]> = items.iter().map(EvalItem::references).collect();
        Ok(Self {
            first_token_accuracy: first_token_accuracy(&top1, items)?,
            any_token_accuracy: any_token_accuracy(&top3, items)?,
            cer: corpus_cer(&top1, &refs)?,
            bleu: corpus_bleu(&top1, &refs)?,
            n_items: items.len(),
        })
    }

    /// `key: value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "first_token_accuracy: {:.6}\nany_token_accuracy: {:.6}\ncer: {:.6}\nbleu: {:.6}\nn_items: {}\n",
            self.first_token_accuracy, self.any_token_accuracy, self.cer, self.bleu, self.n_items
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        use crate::report::round_sig;
        serde_json::json!({
            "first_token_accuracy": round_sig(self.first_token_accuracy),
            "any_token_accuracy": round_sig(self.any_token_accuracy),
            "cer": round_sig(self.cer),
            "bleu": round_sig(self.bleu),
            "n_items": self.n_items,
        })
    }
}

/// Confusion-derived metrics at one decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.r#fn += 1,
            }
        }
        c
    }

    pub fn predicted_positive(&self) -> usize {
        self.tp + self.fp
    }

    /// 1.0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// 1.0 when there are no positives to find.
    pub fn recall(&self) -> f64 {
        if self.tp + self.r#fn == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.r#fn) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.r#fn;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }
}

/// ROC AUC via the Mann-Whitney rank statistic; tied scores share their
/// average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::OneClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based: positions i..=j share the mean of (i+1)..=(j+1)
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Precision, recall, F1, accuracy and AUC; an example is predicted positive
/// iff its score is at least `threshold`.
pub fn binary_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    let auc = roc_auc(scores, labels)?;
    let c = Confusion::at(scores, labels, threshold);
    Ok(ThresholdMetrics {
        threshold,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        accuracy: c.accuracy(),
        auc,
    })
}
