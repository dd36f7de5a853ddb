//! Turns scored candidates into train/valid/test files: drop evaluation
//! leaks, keep pairs at or above the probability cutoff, split, then give
//! each training pair an integer weight from its probability bin.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::data::{remove_leaks, split_dataset, DataError, NamePair, ScoredCandidate, SplitSpec, WeightedPair};

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("probability {p} is below the cutoff {cutoff}")]
    BelowCutoff { p: f64, cutoff: f64 },
    #[error("probability {0} is not in [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid curation config: {0}")]
    Config(String),
    #[error("no candidates left after the cutoff (input {}, after leak removal {}, after cutoff 0)", .0.input, .0.after_leak_removal)]
    EmptyAfterCutoff(CurationSummary),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = CurationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationConfig {
    pub cutoff: f64,
    pub split: SplitSpec,
    pub weight_min: u32,
    pub weight_max: u32,
    pub bin_lo: f64,
    pub bin_hi: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            cutoff: 0.95,
            split: SplitSpec::default(),
            weight_min: 1,
            weight_max: 20,
            bin_lo: 0.95,
            bin_hi: 1.0,
        }
    }
}

impl CurationConfig {
    /// Config with a different cutoff; the first weight bin moves with it.
    pub fn with_cutoff(cutoff: f64) -> Self {
        CurationConfig {
            cutoff,
            bin_lo: cutoff,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CurationError::Config(m.into()));
        if !(self.bin_lo < self.bin_hi) {
            return bad("bin_lo must be below bin_hi");
        }
        if self.weight_min > self.weight_max || self.weight_min == 0 {
            return bad("need 1 <= weight_min <= weight_max");
        }
        if self.cutoff != self.bin_lo {
            return bad("cutoff must equal bin_lo");
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return bad("cutoff must lie in [0, 1]");
        }
        self.split.validate()?;
        Ok(())
    }
}

/// Weight for a pair with selector probability `p`:
/// `min(max, min + floor((p - lo) / (hi - lo) * (max - min + 1)))`.
///
/// A 1e-9 nudge before the floor keeps exact bin edges (0.975 and so on) in
/// the upper bin despite binary rounding.
pub fn upsample_weight(p: f64, config: &CurationConfig) -> Result<u32> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CurationError::InvalidProbability(p));
    }
    if p < config.cutoff {
        return Err(CurationError::BelowCutoff { p, cutoff: config.cutoff });
    }
    let span = (config.weight_max - config.weight_min + 1) as f64;
    let bin = ((p - config.bin_lo) / (config.bin_hi - config.bin_lo) * span + 1e-9).floor();
    let w = config.weight_min as f64 + bin.max(0.0);
    Ok((w as u32).min(config.weight_max))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurationSummary {
    pub input: usize,
    pub after_leak_removal: usize,
    pub after_cutoff: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub train_weight_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curated {
    pub train: Vec<WeightedPair>,
    pub valid: Vec<NamePair>,
    pub test: Vec<NamePair>,
    pub summary: CurationSummary,
}

/// Leak removal, cutoff, split, then weights on the training part only.
pub fn curate(candidates: &[ScoredCandidate], eval_thai: &HashSet<String>, config: &CurationConfig) -> Result<Curated> {
    config.validate()?;
    let mut summary = CurationSummary {
        input: candidates.len(),
        after_leak_removal: 0,
        after_cutoff: 0,
        train: 0,
        valid: 0,
        test: 0,
        train_weight_total: 0,
    };
    let pairs: Vec<WeightedPair> = candidates
        .iter()
        .map(|c| WeightedPair {
            pair: c.record.pair.clone(),
            probability: c.probability,
            weight: 1,
        })
        .collect();
    let kept = remove_leaks(&pairs, eval_thai);
    summary.after_leak_removal = kept.len();
    let kept: Vec<WeightedPair> = kept.into_iter().filter(|p| p.probability >= config.cutoff).collect();
    summary.after_cutoff = kept.len();
    if kept.is_empty() {
        return Err(CurationError::EmptyAfterCutoff(summary));
    }
    let split = split_dataset(&kept, &config.split)?;
    let mut train = split.train;
    for p in &mut train {
        p.weight = upsample_weight(p.probability, config)?;
    }
    summary.train = train.len();
    summary.valid = split.valid.len();
    summary.test = split.test.len();
    summary.train_weight_total = train.iter().map(|p| p.weight as u64).sum();
    Ok(Curated {
        train,
        valid: split.valid.into_iter().map(|p| p.pair).collect(),
        test: split.test.into_iter().map(|p| p.pair).collect(),
        summary,
    })
}

/// How weights reach the training file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Materialize {
    /// Each pair written `weight` times.
    #[default]
    Replicate,
    /// Each pair written once with a `weight` column.
    WeightColumn,
}

impl std::str::FromStr for Materialize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replicate" => Ok(Materialize::Replicate),
            "weight-column" => Ok(Materialize::WeightColumn),
            _ => Err(format!("unknown mode {s:?} (expected replicate or weight-column)")),
        }
    }
}

fn training_rows(train: &[WeightedPair], mode: Materialize) -> impl Iterator<Item = Vec<String>> + '_ {
    train.iter().flat_map(move |p| {
        let (times, row) = match mode {
            Materialize::Replicate => (p.weight as usize, vec![p.pair.thai().to_string(), p.pair.latin().to_string()]),
            Materialize::WeightColumn => (
                1,
                vec![p.pair.thai().to_string(), p.pair.latin().to_string(), p.weight.to_string()],
            ),
        };
        std::iter::repeat_n(row, times)
    })
}

fn header(mode: Materialize) -> &'static [&'static str] {
    match mode {
        Materialize::Replicate => &["thai", "latin"],
        Materialize::WeightColumn => &["thai", "latin", "weight"],
    }
}

/// Writes the training file and returns its data-row count.
pub fn materialize_training_file(train: &[WeightedPair], mode: Materialize, path: &Path) -> Result<usize> {
    let io_err = |source| {
        CurationError::Data(DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file = File::create(path).map_err(io_err)?;
    let mut count = 0;
    let rows = training_rows(train, mode).inspect(|_| count += 1);
    crate::data::write_rows(BufWriter::new(file), header(mode), rows).map_err(io_err)?;
    Ok(count)
}

/// In-memory variant of [`materialize_training_file`].
pub fn training_file_text(train: &[WeightedPair], mode: Materialize) -> String {
    let mut buf = Vec::new();
    crate::data::write_rows(&mut buf, header(mode), training_rows(train, mode)).expect("writing to memory");
    String::from_utf8(buf).expect("rows are UTF-8")
}
