//! Training loop: shuffled micro-batches, gradient accumulation, clipping,
//! AdamW with the warmup/decay schedule, periodic greedy-CER validation and
//! checkpointing.
//!
//! Examples inside a micro-batch are processed in fixed-size chunks that may
//! run on different threads, but chunk gradients are summed in a fixed
//! order, so the loss curve does not depend on the thread count.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::loss::example_cross_entropy;
use super::optim::{clip_gradients, lr_at, optimizer_step, AdamState, AdamW};
use super::tokenizer::{ByteTokenizer, PAD_ID};
use super::transformer::{decays, Tensor, Transformer};
use super::ModelError;
use crate::data::{NamePair, TrainingRow};
use crate::decoding::{greedy_decode, DecodeError};
use crate::metrics::corpus_cer;

/// Examples per gradient chunk.
const CHUNK: usize = 4;

pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Vec<u32>,
    /// Target ids ending in eos.
    pub tgt: Vec<u32>,
    pub weight: f64,
}

impl Example {
    pub fn new(thai: &str, latin: &str, weight: f64) -> Self {
        Example {
            src: ByteTokenizer.encode(thai),
            tgt: ByteTokenizer.encode(latin),
            weight,
        }
    }

    /// Decoder input: the target shifted right behind a pad start token.
    pub fn dec_in(&self) -> Vec<u32> {
        let mut d = Vec::with_capacity(self.tgt.len());
        d.push(PAD_ID);
        d.extend_from_slice(&self.tgt[..self.tgt.len() - 1]);
        d
    }
}

/// One example per row, carrying the row's weight.
pub fn examples_from_rows(rows: &[TrainingRow]) -> Vec<Example> {
    rows.iter()
        .map(|r| Example::new(r.pair.thai(), r.pair.latin(), r.weight as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    /// Mean training loss over the steps since the previous entry.
    pub loss: f64,
    pub valid_cer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights after the last step.
    pub model: Transformer,
    /// Lowest validation CER seen.
    pub best: Checkpoint,
    pub log: Vec<LogEntry>,
    /// Training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub total_steps: u64,
}

/// Optimizer steps for `n` examples: per epoch, one step per group of
/// `grad_accum_steps` micro-batches, the last group possibly short.
pub fn total_steps(n: usize, config: &TrainConfig) -> usize {
    let per_epoch = n.div_ceil(config.batch_size).div_ceil(config.grad_accum_steps);
    let all = config.epochs * per_epoch;
    if config.max_steps > 0 {
        all.min(config.max_steps)
    } else {
        all
    }
}

/// Loss of one micro-batch (`Σ w Σ ℓ / tokens`); adds its gradient into
/// `grads`. Dropout runs when `dropout_rng` gives a seed and the index of
/// the batch's first example.
pub fn accumulate(
    model: &Transformer,
    batch: &[&Example],
    dropout_rng: Option<(u64, u64)>,
    grads: &mut [Vec<f64>],
) -> Result<f64, ModelError> {
    let vocab = model.config().vocab_size;
    let tokens: usize = batch.iter().map(|e| e.tgt.iter().filter(|&&t| t != PAD_ID).count()).sum();
    if tokens == 0 {
        return Ok(0.0);
    }
    let parts: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = model.zero_grads();
            let mut sum = 0.0;
            for (i, ex) in chunk.iter().enumerate() {
                let mut rng = dropout_rng.map(|(seed, first)| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(first + (c * CHUNK + i) as u64);
                    r
                });
                let valid = vec![true; ex.src.len()];
                let dec_in = ex.dec_in();
                let (logits, cache) = model.forward_example(&ex.src, &valid, &dec_in, rng.as_mut())?;
                let mut dlogits = vec![0.0; logits.len()];
                let scale = ex.weight / tokens as f64;
                let (l, _) = example_cross_entropy(&logits, vocab, &ex.tgt, scale, Some(&mut dlogits));
                sum += ex.weight * l;
                model.backward(&cache, &dlogits, &mut g);
            }
            Ok((sum, g))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = 0.0;
    for (sum, g) in parts {
        total += sum;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
    }
    Ok(total / tokens as f64)
}

fn decode_err(e: DecodeError) -> ModelError {
    match e {
        DecodeError::Model(m) => m,
        DecodeError::Config(c) => ModelError::Config(c),
    }
}

/// Greedy transliterations of every pair's Thai side, in order.
pub fn greedy_predictions(model: &Transformer, pairs: &[NamePair], max_length: usize) -> Result<Vec<String>, ModelError> {
    pairs
        .par_iter()
        .map(|p| {
            let ids = greedy_decode(model, &ByteTokenizer.encode(p.thai()), max_length).map_err(decode_err)?;
            Ok(ByteTokenizer.decode(&ids).unwrap_or_default())
        })
        .collect()
}

/// Corpus CER of greedy decoding against each pair's Latin side.
pub fn greedy_cer(model: &Transformer, pairs: &[NamePair], max_length: usize) -> Result<f64, ModelError> {
    let preds = greedy_predictions(model, pairs, max_length)?;
    let refs: Vec<[&str; 1]> = pairs.iter().map(|p| [p.latin()]).collect();
    Ok(corpus_cer(&preds, &refs)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The model state before step `done + 1`, which produced a non-finite value.
fn diverged(model: &Transformer, config: &TrainConfig, done: usize, best: &Option<Checkpoint>) -> ModelError {
    let metric = best.as_ref().and_then(|b| b.best_metric);
    ModelError::Diverged {
        step: done as u64 + 1,
        last_good: Box::new(Checkpoint::from_model(model, Some(config), done as u64, metric)),
    }
}

/// Trains `model` and returns the final weights plus the checkpoint with
/// the lowest validation CER. With `out_dir`, writes `step-N` checkpoints
/// every `save_steps`, keeps `best` current and appends one JSON line per
/// evaluation to the training log.
pub fn train(
    mut model: Transformer,
    train: &[Example],
    valid: &[NamePair],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(ModelError::Config("training and validation sets must be non-empty".into()));
    }
    if let Some(e) = train.iter().find(|e| !(e.weight.is_finite() && e.weight >= 0.0)) {
        return Err(ModelError::Config(format!("bad example weight {}", e.weight)));
    }
    let total = total_steps(train.len(), config);
    lr_at(0, config, total)?;
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let p = dir.join(LOG_FILE);
            Some((File::create(&p).map_err(io_err(&p))?, p))
        }
        None => None,
    };

    let decay: Vec<bool> = model.params().iter().map(|t| decays(&t.name)).collect();
    let mut state = AdamState::new(model.params().iter().map(Tensor::len));
    let dropout = model.config().dropout > 0.0;
    let mut step = 0usize;
    let mut seen = 0u64;
    let mut step_losses = Vec::with_capacity(total);
    let mut since_eval: Vec<f64> = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for group in batches.chunks(config.grad_accum_steps) {
            if step >= total {
                break 'epochs;
            }
            let mut grads = model.zero_grads();
            let mut loss = 0.0;
            for b in group {
                let exs: Vec<&Example> = b.iter().map(|&i| &train[i]).collect();
                let rng = dropout.then_some((config.seed, seen));
                loss += accumulate(&model, &exs, rng, &mut grads)?;
                seen += exs.len() as u64;
            }
            loss /= group.len() as f64;
            if !loss.is_finite() {
                return Err(diverged(&model, config, step, &best));
            }
            let inv = 1.0 / group.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            clip_gradients(&mut grads, config.max_grad_norm);
            step += 1;
            let lr = lr_at(step, config, total)?;
            let mut views: Vec<&mut [f64]> = model.params_mut().iter_mut().map(|t| t.data.as_mut_slice()).collect();
            match optimizer_step(&mut views, &grads, &decay, &mut state, &AdamW::from_config(config, lr)) {
                Err(ModelError::NonFinite(_)) => return Err(diverged(&model, config, step - 1, &best)),
                r => r?,
            }
            step_losses.push(loss);
            since_eval.push(loss);

            if step % config.eval_steps == 0 || step == total {
                let cer = greedy_cer(&model, valid, config.eval_max_length)?;
                let entry = LogEntry {
                    step: step as u64,
                    lr,
                    loss: since_eval.iter().sum::<f64>() / since_eval.len() as f64,
                    valid_cer: cer,
                };
                since_eval.clear();
                log::info!("step {} lr {:.3e} loss {:.4} valid_cer {:.4}", entry.step, lr, entry.loss, cer);
                if let Some((f, p)) = log_file.as_mut() {
                    let mut v = serde_json::to_value(&entry).map_err(|e| ModelError::Format(e.to_string()))?;
                    crate::report::round_floats(&mut v);
                    writeln!(f, "{v}").map_err(io_err(p))?;
                }
                log.push(entry);
                if best.as_ref().is_none_or(|b| b.best_metric.is_some_and(|m| cer < m)) {
                    let ck = Checkpoint::from_model(&model, Some(config), step as u64, Some(cer));
                    if let Some(dir) = out_dir {
                        ck.save(&dir.join("best"))?;
                    }
                    best = Some(ck);
                }
            }
            if step % config.save_steps == 0 {
                if let Some(dir) = out_dir {
                    Checkpoint::from_model(&model, Some(config), step as u64, best.as_ref().and_then(|b| b.best_metric))
                        .save(&dir.join(format!("step-{step}")))?;
                }
            }
        }
    }
    let best = best.expect("the final step always evaluates");
    Ok(TrainOutcome {
        model,
        best,
        log,
        step_losses,
        total_steps: total as u64,
    })
}
