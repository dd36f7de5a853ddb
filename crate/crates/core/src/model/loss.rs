//! Token-level cross-entropy with optional per-example weights.

use super::tokenizer::PAD_ID;
use super::transformer::Logits;
use super::ModelError;

/// Summed cross-entropy of one example's logits `[t][vocab]` against
/// `targets`, skipping pad targets. With `dlogits`, adds
/// `scale * d(loss)/d(logits)` into it.
pub fn example_cross_entropy(logits: &[f64], vocab: usize, targets: &[u32], scale: f64, mut dlogits: Option<&mut [f64]>) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD_ID {
            continue;
        }
        let row = &logits[t * vocab..(t + 1) * vocab];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y as usize];
        count += 1;
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[t * vocab..(t + 1) * vocab];
            for (k, g) in drow.iter_mut().enumerate() {
                *g += scale * (row[k] - lse).exp();
            }
            drow[y as usize] -= scale;
        }
    }
    (total, count)
}

/// `Σ_i w_i Σ_t ℓ_it / (number of non-pad targets)`. Targets are padded
/// with the pad id; `weights` defaults to all ones.
pub fn loss(logits: &Logits, targets: &[Vec<u32>], weights: Option<&[f64]>) -> Result<f64, ModelError> {
    if targets.len() != logits.batch {
        return Err(ModelError::Shape(format!(
            "{} target rows for a batch of {}",
            targets.len(),
            logits.batch
        )));
    }
    if let Some(w) = weights {
        if w.len() != logits.batch {
            return Err(ModelError::Shape(format!("{} weights for a batch of {}", w.len(), logits.batch)));
        }
    }
    let mut sum = 0.0;
    let mut tokens = 0;
    for (b, tgt) in targets.iter().enumerate() {
        if tgt.len() > logits.len {
            return Err(ModelError::Shape(format!(
                "target row {b} has {} positions, logits have {}",
                tgt.len(),
                logits.len
            )));
        }
        let o = b * logits.len * logits.vocab;
        let rows = &logits.data[o..o + tgt.len() * logits.vocab];
        let (l, n) = example_cross_entropy(rows, logits.vocab, tgt, 1.0, None);
        sum += weights.map_or(1.0, |w| w[b]) * l;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { sum / tokens as f64 })
}
