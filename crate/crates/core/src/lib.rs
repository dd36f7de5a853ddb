//! Thai-to-English name transliteration: candidate selection, phonetic and
//! RTGS features, training-data curation, a byte-level encoder-decoder and
//! its decoders.

pub mod curation;
pub mod data;
pub mod decoding;
pub mod fixtures;
pub mod metrics;
pub mod model;
pub mod phonetics;
pub mod report;
pub mod rtgs;
pub mod selector;

pub use data::{CandidateRecord, DataError, EvalItem, Label, LabeledRecord, NamePair, Split, SplitSpec, WeightedPair};
pub use metrics::{EvalReport, MetricError, ThresholdMetrics};
pub use phonetics::{FeatureTable, G2pProvider, PhoneticError, ToyG2p};
pub use rtgs::{RtgsError, RtgsTables};
pub use selector::{fit_forest, Forest, ForestConfig, SelectorError};
pub use curation::{CurationConfig, CurationError};
pub use decoding::{beam_decode, greedy_decode, transliterate, BeamConfig, DecodeError, Hypothesis, StepModel};
pub use model::{Checkpoint, ModelError, RunConfig, TrainConfig, Transformer, TransformerConfig};
