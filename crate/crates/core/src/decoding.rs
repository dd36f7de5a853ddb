//! Greedy and beam-search decoding over any next-token model.
//!
//! Beam search keeps the `beam_width` best unfinished prefixes by summed
//! log-probability. A prefix's eos extension joins the finished pool when
//! eos ranks among that prefix's top `beam_width` next tokens. Finished
//! hypotheses are scored by `sum / len^length_penalty` (len counts eos).
//! Search stops at `max_length` tokens, when nothing is left to extend, or
//! once `beam_width` hypotheses have finished and the best live prefix,
//! scored at its current length, is no better than the `beam_width`-th
//! finished one. Ties go to the lexicographically smaller id sequence.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::tokenizer::{ByteTokenizer, EOS_ID, PAD_ID};
use crate::model::transformer::{Encoded, Transformer};
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid beam config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = DecodeError> = std::result::Result<T, E>;

/// A model that scores the next token given a source and a prefix.
pub trait StepModel {
    type State;

    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> u32;

    fn start(&self, src: &[u32]) -> Result<Self::State>;

    /// Log-probabilities of every token following `prefix` (the generated
    /// tokens so far, without any start token).
    fn next_log_probs(&self, state: &Self::State, prefix: &[u32]) -> Result<Vec<f64>>;
}

fn log_softmax(mut x: Vec<f64>) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter_mut().for_each(|v| *v -= lse);
    x
}

impl StepModel for Transformer {
    type State = Encoded;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn start(&self, src: &[u32]) -> Result<Encoded> {
        Ok(self.encode(src)?)
    }

    fn next_log_probs(&self, state: &Encoded, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(PAD_ID);
        dec_in.extend_from_slice(prefix);
        Ok(log_softmax(self.next_logits(state, &dec_in)?))
    }
}

/// A fixed random next-token distribution per (source, prefix), for
/// exercising decoders without a trained network.
#[derive(Debug, Clone)]
pub struct RandomStepModel {
    vocab: usize,
    eos: u32,
    seed: u64,
    sharpness: f64,
}

impl RandomStepModel {
    pub fn new(vocab: usize, eos: u32, seed: u64) -> Self {
        RandomStepModel {
            vocab,
            eos,
            seed,
            sharpness: 3.0,
        }
    }
}

impl StepModel for RandomStepModel {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eos_id(&self) -> u32 {
        self.eos
    }

    fn start(&self, src: &[u32]) -> Result<Vec<u32>> {
        Ok(src.to_vec())
    }

    fn next_log_probs(&self, src: &Vec<u32>, prefix: &[u32]) -> Result<Vec<f64>> {
        // FNV-1a over the source, a separator and the prefix
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &t in src.iter().chain([&u32::MAX]).chain(prefix) {
            h = (h ^ t as u64).wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits = (0..self.vocab).map(|_| rng.random::<f64>() * self.sharpness).collect();
        Ok(log_softmax(logits))
    }
}

/// Highest-scoring token; the lowest id wins ties.
fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Picks the most likely token at each step until eos or `max_length`
/// tokens. The result includes the eos when one was produced.
pub fn greedy_decode<M: StepModel>(model: &M, src: &[u32], max_length: usize) -> Result<Vec<u32>> {
    let state = model.start(src)?;
    let mut out = Vec::new();
    while out.len() < max_length {
        let lp = model.next_log_probs(&state, &out)?;
        let tok = argmax(&lp);
        out.push(tok);
        if tok == model.eos_id() {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub k: usize,
    pub max_length: usize,
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 5,
            k: 3,
            max_length: 64,
            length_penalty: 1.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.k == 0 {
            return Err(DecodeError::Config("beam_width and k must be at least 1".into()));
        }
        if self.k > self.beam_width {
            return Err(DecodeError::Config(format!(
                "k ({}) must not exceed beam_width ({})",
                self.k, self.beam_width
            )));
        }
        if self.max_length < 2 {
            return Err(DecodeError::Config("max_length must be at least 2".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(DecodeError::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    /// Summed log-probability.
    pub log_prob: f64,
    /// `log_prob / len^length_penalty`.
    pub score: f64,
    pub finished: bool,
}

/// Length-normalized score of a sequence of `len` tokens.
pub fn normalized_score(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(length_penalty)
}

/// Descending by score, then ascending by id sequence.
pub fn rank_order(a_score: f64, a_ids: &[u32], b_score: f64, b_ids: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_ids.cmp(b_ids))
}

fn hypothesis(ids: Vec<u32>, log_prob: f64, finished: bool, lp: f64) -> Hypothesis {
    Hypothesis {
        score: normalized_score(log_prob, ids.len(), lp),
        ids,
        log_prob,
        finished,
    }
}

/// Top-`k` hypotheses ranked by score. The best unfinished prefixes pad
/// the list when fewer than `k` hypotheses finished.
pub fn beam_decode<M: StepModel>(model: &M, src: &[u32], config: &BeamConfig) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let w = config.beam_width;
    let eos = model.eos_id();
    let state = model.start(src)?;
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_length {
        let mut next: Vec<(Vec<u32>, f64)> = Vec::new();
        for (prefix, sum) in &alive {
            let lp = model.next_log_probs(&state, prefix)?;
            let mut order: Vec<u32> = (0..lp.len() as u32).collect();
            order.sort_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b)));
            order.truncate(w);
            for &tok in &order {
                let mut ids = prefix.clone();
                ids.push(tok);
                let s = sum + lp[tok as usize];
                if tok == eos {
                    finished.push(hypothesis(ids, s, true, config.length_penalty));
                } else {
                    next.push((ids, s));
                }
            }
        }
        next.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        next.truncate(w);
        alive = next;
        if alive.is_empty() {
            break;
        }
        if finished.len() >= w {
            finished.sort_by(|a, b| rank_order(a.score, &a.ids, b.score, &b.ids));
            let (ids, sum) = &alive[0];
            if normalized_score(*sum, ids.len(), config.length_penalty) <= finished[w - 1].score {
                break;
            }
        }
    }
    finished.sort_by(|a, b| rank_order(a.score, &a.ids, b.score, &b.ids));
    finished.truncate(config.k);
    if finished.len() < config.k {
        let mut open: Vec<Hypothesis> = alive
            .into_iter()
            .map(|(ids, s)| hypothesis(ids, s, false, config.length_penalty))
            .collect();
        open.sort_by(|a, b| rank_order(a.score, &a.ids, b.score, &b.ids));
        finished.extend(open.into_iter().take(config.k - finished.len()));
        finished.sort_by(|a, b| rank_order(a.score, &a.ids, b.score, &b.ids));
    }
    Ok(finished)
}

/// A ranked transliteration candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
}

/// Beam-decodes a name and returns at most `k` distinct strings, best
/// first. Candidates whose bytes are not valid UTF-8 are dropped.
pub fn transliterate(model: &Transformer, thai: &str, config: &BeamConfig) -> Result<Vec<Candidate>> {
    let hyps = beam_decode(model, &ByteTokenizer.encode(thai), config)?;
    Ok(candidates(&hyps, thai))
}

/// Byte-decodes ranked hypotheses, keeping the first of any duplicates.
fn candidates(hyps: &[Hypothesis], source: &str) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for h in hyps {
        match ByteTokenizer.decode(&h.ids) {
            Ok(text) => {
                if !out.iter().any(|c| c.text == text) {
                    out.push(Candidate { text, score: h.score });
                }
            }
            Err(_) => log::warn!("dropping a candidate for {source:?}: output bytes are not valid UTF-8"),
        }
    }
    out
}

/// Greedy transliteration; invalid UTF-8 decodes to an empty string.
pub fn greedy_transliterate(model: &Transformer, thai: &str, max_length: usize) -> Result<String> {
    let tok = ByteTokenizer;
    let ids = greedy_decode(model, &tok.encode(thai), max_length)?;
    Ok(tok.decode(&ids).unwrap_or_default())
}
