//! Small datasets shipped with the crate for tests, benches and demos.

use crate::data::{parse_eval, parse_labeled, parse_pairs, EvalItem, LabeledRecord, TrainingRow};

/// 200 labeled candidates, half positive, separable on phonetic distance
/// and RTGS distance.
pub const SYNTHETIC_LABELED_TSV: &str = include_str!("../data/synthetic_labeled.tsv");

/// 100 Thai names with their rule-based romanizations.
pub const TOY_PAIRS_TSV: &str = include_str!("../data/toy_pairs.tsv");

/// The first 20 toy names as an evaluation set.
pub const TOY_EVAL_TSV: &str = include_str!("../data/toy_eval.tsv");

pub fn synthetic_labeled() -> Vec<LabeledRecord> {
    parse_labeled(SYNTHETIC_LABELED_TSV).expect("shipped fixture parses")
}

pub fn toy_pairs() -> Vec<TrainingRow> {
    parse_pairs(TOY_PAIRS_TSV).expect("shipped fixture parses")
}

pub fn toy_eval() -> Vec<EvalItem> {
    parse_eval(TOY_EVAL_TSV).expect("shipped fixture parses")
}
