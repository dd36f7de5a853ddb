//! Name pairs, candidate records and the TSV formats they travel in.
//!
//! Thai strings are NFC-normalized and Latin strings lowercased on ingestion,
//! so every downstream comparison works on canonical forms.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Feature names in model order. The order is fixed: it is the column order
/// of the selector's feature matrix and of its importance vector.
pub const FEATURE_NAMES: [&str; 9] = [
    "cnt_th",
    "phonetic_distance",
    "cnt_latin",
    "rtgs_similarity",
    "collocations3",
    "collocations2",
    "collocations",
    "google",
    "azure",
];

/// Column order of the candidate TSV.
pub const CANDIDATE_COLUMNS: [&str; 11] = [
    "thai",
    "latin",
    "cnt_th",
    "cnt_latin",
    "phonetic_distance",
    "rtgs_similarity",
    "collocations",
    "collocations2",
    "collocations3",
    "google",
    "azure",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?}: {reason}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("invalid name pair: {0}")]
    InvalidPair(String),
    #[error("invalid evaluation item: {0}")]
    InvalidEvalItem(String),
    #[error("invalid split fractions ({train}, {valid}, {test}): must be non-negative and sum to 1")]
    InvalidSplit { train: f64, valid: f64, test: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("file is empty (no header row)")]
    NoHeader,
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

pub fn is_thai_char(c: char) -> bool {
    ('\u{0E00}'..='\u{0E7F}').contains(&c)
}

/// A Thai name and one Latin rendering of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NamePair {
    thai: String,
    latin: String,
}

impl NamePair {
    pub fn new(thai: &str, latin: &str) -> Result<Self> {
        let thai = nfc(thai.trim());
        let latin = latin.trim().to_lowercase();
        if thai.is_empty() {
            return Err(DataError::InvalidPair("thai is empty".into()));
        }
        if latin.is_empty() {
            return Err(DataError::InvalidPair(format!("latin is empty for {thai:?}")));
        }
        if !thai.chars().any(is_thai_char) {
            return Err(DataError::InvalidPair(format!(
                "{thai:?} contains no Thai characters"
            )));
        }
        Ok(Self { thai, latin })
    }

    pub fn thai(&self) -> &str {
        &self.thai
    }

    pub fn latin(&self) -> &str {
        &self.latin
    }
}

/// One candidate pair with its nine selection features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pair: NamePair,
    pub cnt_th: u64,
    pub cnt_latin: u64,
    pub phonetic_distance: f64,
    pub rtgs_similarity: u64,
    pub collocations: u64,
    pub collocations2: u64,
    pub collocations3: u64,
    pub google: bool,
    pub azure: bool,
}

impl CandidateRecord {
    /// Features in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; 9] {
        [
            self.cnt_th as f64,
            self.phonetic_distance,
            self.cnt_latin as f64,
            self.rtgs_similarity as f64,
            self.collocations3 as f64,
            self.collocations2 as f64,
            self.collocations as f64,
            if self.google { 1.0 } else { 0.0 },
            if self.azure { 1.0 } else { 0.0 },
        ]
    }

    fn tsv_cells(&self) -> [String; 11] {
        [
            self.pair.thai.clone(),
            self.pair.latin.clone(),
            self.cnt_th.to_string(),
            self.cnt_latin.to_string(),
            format_f64(self.phonetic_distance),
            self.rtgs_similarity.to_string(),
            self.collocations.to_string(),
            self.collocations2.to_string(),
            self.collocations3.to_string(),
            u8::from(self.google).to_string(),
            u8::from(self.azure).to_string(),
        ]
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: CandidateRecord,
    pub label: Label,
}

/// A candidate that passed selection, with its selector probability and
/// upsampling weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    pub pair: NamePair,
    pub probability: f64,
    pub weight: u32,
}

/// A test-set entry: one Thai name and its one to three accepted romanizations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    thai: String,
    references: Vec<String>,
}

impl EvalItem {
    pub fn new<S: AsRef<str>>(thai: &str, references: &[S]) -> Result<Self> {
        let thai = nfc(thai.trim());
        if thai.is_empty() {
            return Err(DataError::InvalidEvalItem("thai is empty".into()));
        }
        let mut refs: Vec<String> = Vec::new();
        for r in references {
            let r = r.as_ref().trim().to_lowercase();
            if !r.is_empty() && !refs.contains(&r) {
                refs.push(r);
            }
        }
        if refs.is_empty() || refs.len() > 3 {
            return Err(DataError::InvalidEvalItem(format!(
                "{thai:?} has {} distinct references, expected 1..=3",
                refs.len()
            )));
        }
        Ok(Self {
            thai,
            references: refs,
        })
    }

    pub fn thai(&self) -> &str {
        &self.thai
    }

    pub fn references(&self) -> &[String] {
        &self.references
    }
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, valid_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_frac,
            valid_frac,
            test_frac,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        let sum: f64 = fracs.iter().sum();
        if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit {
                train: self.train_frac,
                valid: self.valid_frac,
                test: self.test_frac,
            });
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.990,
            valid_frac: 0.005,
            test_frac: 0.005,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded uniform shuffle followed by a cut into three parts. The validation
/// and test sizes are `round(frac * n)`; training takes the remainder.
pub fn split_dataset<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Split<T>> {
    spec.validate()?;
    if items.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let n = items.len();
    let n_valid = (spec.valid_frac * n as f64).round() as usize;
    let n_test = (spec.test_frac * n as f64).round() as usize;
    // Rounding both up can overshoot on tiny inputs.
    let n_valid = n_valid.min(n);
    let n_test = n_test.min(n - n_valid);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        valid: pick(&order[..n_valid]),
        test: pick(&order[n_valid..n_valid + n_test]),
        train: pick(&order[n_valid + n_test..]),
    })
}

/// Types that carry a Thai name, for leak removal.
pub trait HasThai {
    fn thai_name(&self) -> &str;
}

impl HasThai for NamePair {
    fn thai_name(&self) -> &str {
        &self.thai
    }
}

impl HasThai for CandidateRecord {
    fn thai_name(&self) -> &str {
        &self.pair.thai
    }
}

impl HasThai for WeightedPair {
    fn thai_name(&self) -> &str {
        &self.pair.thai
    }
}

impl HasThai for EvalItem {
    fn thai_name(&self) -> &str {
        &self.thai
    }
}

/// Drops every item whose NFC Thai name appears (after NFC) in `blocked`.
pub fn remove_leaks<T: HasThai + Clone>(items: &[T], blocked: &HashSet<String>) -> Vec<T> {
    if blocked.is_empty() {
        return items.to_vec();
    }
    let blocked: HashSet<String> = blocked.iter().map(|s| nfc(s.trim())).collect();
    items
        .iter()
        .filter(|it| !blocked.contains(&nfc(it.thai_name())))
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// TSV plumbing

/// A parsed TSV file: header plus rows of cells, with 1-based row numbers
/// counting the header as row 1.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
        let header: Vec<String> = match lines.next() {
            Some(h) if !h.trim().is_empty() => h.split('\t').map(|s| s.trim().to_string()).collect(),
            _ => return Err(DataError::NoHeader),
        };
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split('\t').map(str::to_string).collect())
            .collect();
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell `col` of data row `i` (0-based), empty when the row is short.
    pub fn cell(&self, i: usize, col: usize) -> &str {
        self.rows[i].get(col).map(String::as_str).unwrap_or("")
    }

    /// Row number as shown to users: header is row 1.
    pub fn row_number(i: usize) -> usize {
        i + 2
    }

    pub fn parse_cell<T: std::str::FromStr>(&self, i: usize, col: usize) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.cell(i, col).trim();
        raw.parse::<T>().map_err(|e| DataError::Parse {
            row: Self::row_number(i),
            column: self.header[col].clone(),
            value: raw.to_string(),
            reason: e.to_string(),
        })
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| DataError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_flag(table: &Table, i: usize, col: usize) -> Result<bool> {
    match table.cell(i, col).trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DataError::Parse {
            row: Table::row_number(i),
            column: table.header[col].clone(),
            value: other.to_string(),
            reason: "expected 0 or 1".into(),
        }),
    }
}

fn candidate_columns(table: &Table) -> Result<[usize; 11]> {
    let mut cols = [0usize; 11];
    for (slot, name) in cols.iter_mut().zip(CANDIDATE_COLUMNS) {
        *slot = table.column(name)?;
    }
    Ok(cols)
}

fn candidate_row(table: &Table, i: usize, c: &[usize; 11]) -> Result<CandidateRecord> {
    let pair = NamePair::new(table.cell(i, c[0]), table.cell(i, c[1])).map_err(|e| {
        DataError::InvalidRow {
            row: Table::row_number(i),
            reason: e.to_string(),
        }
    })?;
    let phonetic_distance: f64 = table.parse_cell(i, c[4])?;
    if !(phonetic_distance.is_finite() && phonetic_distance >= 0.0) {
        return Err(DataError::Parse {
            row: Table::row_number(i),
            column: "phonetic_distance".into(),
            value: table.cell(i, c[4]).to_string(),
            reason: "must be a finite non-negative number".into(),
        });
    }
    Ok(CandidateRecord {
        pair,
        cnt_th: table.parse_cell(i, c[2])?,
        cnt_latin: table.parse_cell(i, c[3])?,
        phonetic_distance,
        rtgs_similarity: table.parse_cell(i, c[5])?,
        collocations: table.parse_cell(i, c[6])?,
        collocations2: table.parse_cell(i, c[7])?,
        collocations3: table.parse_cell(i, c[8])?,
        google: parse_flag(table, i, c[9])?,
        azure: parse_flag(table, i, c[10])?,
    })
}

pub fn parse_candidates(text: &str) -> Result<Vec<CandidateRecord>> {
    let table = Table::parse(text)?;
    let cols = candidate_columns(&table)?;
    (0..table.rows.len())
        .map(|i| candidate_row(&table, i, &cols))
        .collect()
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let table = Table::read(path)?;
    let cols = candidate_columns(&table)?;
    (0..table.rows.len())
        .map(|i| candidate_row(&table, i, &cols))
        .collect()
}

pub fn candidates_to_tsv(records: &[CandidateRecord]) -> String {
    let mut out = CANDIDATE_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        out.push_str(&r.tsv_cells().join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_candidates(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    write_text(path, &candidates_to_tsv(records))
}

/// A candidate with the selector probability appended (`select-score` output).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub record: CandidateRecord,
    pub probability: f64,
}

pub fn read_scored(path: &Path) -> Result<Vec<ScoredCandidate>> {
    let table = Table::read(path)?;
    let cols = candidate_columns(&table)?;
    let p_col = table.column("probability")?;
    (0..table.rows.len())
        .map(|i| {
            let record = candidate_row(&table, i, &cols)?;
            let probability: f64 = table.parse_cell(i, p_col)?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(DataError::Parse {
                    row: Table::row_number(i),
                    column: "probability".into(),
                    value: table.cell(i, p_col).to_string(),
                    reason: "must lie in [0, 1]".into(),
                });
            }
            Ok(ScoredCandidate {
                record,
                probability,
            })
        })
        .collect()
}

pub fn scored_to_tsv(scored: &[ScoredCandidate]) -> String {
    let mut out = CANDIDATE_COLUMNS.join("\t");
    out.push_str("\tprobability\n");
    for s in scored {
        out.push_str(&s.record.tsv_cells().join("\t"));
        out.push('\t');
        out.push_str(&format!("{:.6}", s.probability));
        out.push('\n');
    }
    out
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledRecord>> {
    labeled_rows(&Table::read(path)?)
}

pub fn parse_labeled(text: &str) -> Result<Vec<LabeledRecord>> {
    labeled_rows(&Table::parse(text)?)
}

fn labeled_rows(table: &Table) -> Result<Vec<LabeledRecord>> {
    let cols = candidate_columns(table)?;
    let label_col = table.column("label")?;
    (0..table.rows.len())
        .map(|i| {
            let record = candidate_row(table, i, &cols)?;
            let bit: u8 = table.parse_cell(i, label_col)?;
            let label = Label::from_bit(bit).ok_or_else(|| DataError::Parse {
                row: Table::row_number(i),
                column: "label".into(),
                value: bit.to_string(),
                reason: "expected 0 or 1".into(),
            })?;
            Ok(LabeledRecord { record, label })
        })
        .collect()
}

pub fn labeled_to_tsv(records: &[LabeledRecord]) -> String {
    let mut out = CANDIDATE_COLUMNS.join("\t");
    out.push_str("\tlabel\n");
    for r in records {
        out.push_str(&r.record.tsv_cells().join("\t"));
        out.push('\t');
        out.push_str(&r.label.bit().to_string());
        out.push('\n');
    }
    out
}

pub fn parse_eval(text: &str) -> Result<Vec<EvalItem>> {
    let table = Table::parse(text)?;
    let thai = table.column("thai")?;
    let r1 = table.column("ref1")?;
    let r2 = table.optional_column("ref2");
    let r3 = table.optional_column("ref3");
    (0..table.rows.len())
        .map(|i| {
            let mut refs = vec![table.cell(i, r1)];
            refs.extend(r2.map(|c| table.cell(i, c)));
            refs.extend(r3.map(|c| table.cell(i, c)));
            EvalItem::new(table.cell(i, thai), &refs).map_err(|e| DataError::InvalidRow {
                row: Table::row_number(i),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalItem>> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_eval(&text)
}

pub fn eval_to_tsv(items: &[EvalItem]) -> String {
    let mut out = String::from("thai\tref1\tref2\tref3\n");
    for it in items {
        let mut cells = vec![it.thai.clone()];
        for k in 0..3 {
            cells.push(it.references.get(k).cloned().unwrap_or_default());
        }
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// A training example as read from a pair file: `thai`, `latin` and an
/// optional integer `weight` column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub pair: NamePair,
    pub weight: u32,
}

pub fn parse_pairs(text: &str) -> Result<Vec<TrainingRow>> {
    let table = Table::parse(text)?;
    let thai = table.column("thai")?;
    let latin = table.column("latin")?;
    let weight = table.optional_column("weight");
    (0..table.rows.len())
        .map(|i| {
            let pair = NamePair::new(table.cell(i, thai), table.cell(i, latin)).map_err(|e| {
                DataError::InvalidRow {
                    row: Table::row_number(i),
                    reason: e.to_string(),
                }
            })?;
            let weight = match weight {
                Some(c) => table.parse_cell(i, c)?,
                None => 1,
            };
            Ok(TrainingRow { pair, weight })
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<TrainingRow>> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pairs(&text)
}

pub fn pairs_to_tsv<'a>(pairs: impl IntoIterator<Item = &'a NamePair>) -> String {
    let mut out = String::from("thai\tlatin\n");
    for p in pairs {
        out.push_str(&p.thai);
        out.push('\t');
        out.push_str(&p.latin);
        out.push('\n');
    }
    out
}

/// Streams rows to any writer; used for large replicated training files.
pub fn write_rows<W: Write>(mut w: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> io::Result<()> {
    writeln!(w, "{}", header.join("\t"))?;
    for row in rows {
        writeln!(w, "{}", row.join("\t"))?;
    }
    w.flush()
}
