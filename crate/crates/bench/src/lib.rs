//! Inputs shared by the pipeline benchmarks.

use thairom_core::data::LabeledRecord;
use thairom_core::fixtures;

/// Thai/Latin pairs of the toy fixture, `n` of them, cycling when `n`
/// exceeds the fixture.
pub fn name_pairs(n: usize) -> Vec<(String, String)> {
    let rows = fixtures::toy_pairs();
    rows.iter()
        .cycle()
        .take(n)
        .map(|r| (r.pair.thai().to_string(), r.pair.latin().to_string()))
        .collect()
}

/// Feature rows and labels of the synthetic selector set.
pub fn selector_data() -> (Vec<[f64; 9]>, Vec<bool>) {
    fixtures::synthetic_labeled()
        .iter()
        .map(|r: &LabeledRecord| (r.record.features(), r.label.bit() == 1))
        .unzip()
}
