//! Articulatory feature vectors, weighted feature edit distance, and a small
//! table-driven grapheme-to-phoneme provider.
//!
//! Substitution cost between two segments is the weighted L1 distance of
//! their feature vectors (values in {+1, -1, 0}) divided by twice the total
//! weight, so it lies in [0, 1]. Insertions and deletions cost 1. The
//! resulting distance never exceeds plain Levenshtein over segments.

use std::collections::{BTreeMap, HashMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PhoneticError {
    #[error("unknown IPA segment at offset {offset} in {text:?}")]
    UnknownSegment { text: String, offset: usize },
    #[error("segment {0:?} is not in the feature table")]
    NotInTable(String),
    #[error("no pronunciation for {text:?} ({lang}) at offset {offset}")]
    UnknownGrapheme {
        text: String,
        lang: String,
        offset: usize,
    },
    #[error("unsupported language tag {0:?}")]
    UnsupportedLanguage(String),
    #[error("feature table: {0}")]
    Table(String),
}

pub type Result<T, E = PhoneticError> = std::result::Result<T, E>;

const FEATURES_TSV: &str = include_str!("../data/ipa_features.tsv");
const WEIGHTS_TSV: &str = include_str!("../data/feature_weights.tsv");
const G2P_TH_TSV: &str = include_str!("../data/g2p_th.tsv");
const G2P_EN_TSV: &str = include_str!("../data/g2p_en.tsv");

#[derive(Debug, Clone)]
pub struct FeatureTable {
    features: Vec<String>,
    weights: Vec<f64>,
    segments: BTreeMap<String, Vec<i8>>,
    max_key_chars: usize,
}

fn feature_value(cell: &str) -> Option<i8> {
    match cell.trim() {
        "+" => Some(1),
        "-" => Some(-1),
        "0" => Some(0),
        _ => None,
    }
}

impl FeatureTable {
    /// The shipped table with uniform weights.
    pub fn builtin() -> Self {
        Self::parse(FEATURES_TSV, Some(WEIGHTS_TSV)).expect("shipped feature table is valid")
    }

    /// Parses a feature TSV and an optional `feature<TAB>weight` file.
    /// Features missing from the weights file keep weight 1.0.
    pub fn parse(features_tsv: &str, weights_tsv: Option<&str>) -> Result<Self> {
        let mut lines = features_tsv.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| PhoneticError::Table("empty feature file".into()))?;
        let features: Vec<String> = header.split('\t').skip(1).map(|s| s.trim().to_string()).collect();
        if features.is_empty() {
            return Err(PhoneticError::Table("no feature columns".into()));
        }
        let mut segments = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let mut cells = line.split('\t');
            let seg = cells.next().unwrap_or_default().trim().to_string();
            let vec: Option<Vec<i8>> = cells.map(feature_value).collect();
            match vec {
                Some(v) if v.len() == features.len() && !seg.is_empty() => {
                    segments.insert(seg, v);
                }
                _ => {
                    return Err(PhoneticError::Table(format!(
                        "line {}: expected a segment and {} values in {{+,-,0}}",
                        n + 2,
                        features.len()
                    )))
                }
            }
        }
        if segments.is_empty() {
            return Err(PhoneticError::Table("no segments".into()));
        }
        let mut weights: Vec<f64> = vec![1.0; features.len()];
        if let Some(w) = weights_tsv {
            for line in w.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                let (name, value) = line
                    .split_once('\t')
                    .ok_or_else(|| PhoneticError::Table(format!("bad weight line {line:?}")))?;
                let idx = features
                    .iter()
                    .position(|f| f == name.trim())
                    .ok_or_else(|| PhoneticError::Table(format!("weight for unknown feature {name:?}")))?;
                weights[idx] = value
                    .trim()
                    .parse()
                    .map_err(|_| PhoneticError::Table(format!("bad weight {value:?}")))?;
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
            return Err(PhoneticError::Table(
                "weights must be non-negative with at least one positive".into(),
            ));
        }
        let max_key_chars = segments.keys().map(|k| k.chars().count()).max().unwrap_or(1);
        Ok(Self {
            features,
            weights,
            segments,
            max_key_chars,
        })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn contains(&self, segment: &str) -> bool {
        self.segments.contains_key(segment)
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.segments.keys().map(String::as_str)
    }

    pub fn vector(&self, segment: &str) -> Result<&[i8]> {
        self.segments
            .get(segment)
            .map(Vec::as_slice)
            .ok_or_else(|| PhoneticError::NotInTable(segment.to_string()))
    }

    fn cost(&self, a: &[i8], b: &[i8]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let diff: f64 = a
            .iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| w * f64::from((x - y).abs()))
            .sum();
        diff / (2.0 * total)
    }

    /// Substitution cost between two segments, in [0, 1].
    pub fn substitution_cost(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.cost(self.vector(a)?, self.vector(b)?))
    }
}

fn is_combining(c: char) -> bool {
    ('\u{0300}'..='\u{036F}').contains(&c)
}

/// Greedy longest-match segmentation of an IPA string. Combining diacritics
/// that follow a matched segment (and are not part of a longer key) stay
/// attached to it and do not affect the lookup.
pub fn segment_ipa(ipa: &str, table: &FeatureTable) -> Result<Vec<String>> {
    let chars: Vec<char> = ipa.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let longest = (1..=table.max_key_chars.min(chars.len() - i))
            .rev()
            .find(|&len| table.contains(&chars[i..i + len].iter().collect::<String>()));
        let Some(len) = longest else {
            return Err(PhoneticError::UnknownSegment {
                text: ipa.to_string(),
                offset: i,
            });
        };
        out.push(chars[i..i + len].iter().collect());
        i += len;
        while i < chars.len() && is_combining(chars[i]) {
            i += 1;
        }
    }
    Ok(out)
}

/// Minimum-cost alignment of two segment sequences.
pub fn weighted_feature_edit_distance<S: AsRef<str>>(a: &[S], b: &[S], table: &FeatureTable) -> Result<f64> {
    let va: Vec<&[i8]> = a.iter().map(|s| table.vector(s.as_ref())).collect::<Result<_>>()?;
    let vb: Vec<&[i8]> = b.iter().map(|s| table.vector(s.as_ref())).collect::<Result<_>>()?;
    let mut prev: Vec<f64> = (0..=vb.len()).map(|j| j as f64).collect();
    let mut cur = vec![0.0; vb.len() + 1];
    for (i, x) in va.iter().enumerate() {
        cur[0] = (i + 1) as f64;
        for (j, y) in vb.iter().enumerate() {
            let sub = prev[j] + table.cost(x, y);
            cur[j + 1] = sub.min(prev[j + 1] + 1.0).min(cur[j] + 1.0);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[vb.len()])
}

/// Source of IPA segments for a string in a given language.
pub trait G2pProvider {
    fn transliterate(&self, text: &str, lang: &str) -> Result<Vec<String>>;
}

/// Weighted feature edit distance between the Thai reading of `thai` and
/// the English reading of `latin`, divided by the longer segment count.
pub fn phonetic_distance(thai: &str, latin: &str, g2p: &dyn G2pProvider, table: &FeatureTable) -> Result<f64> {
    let a = g2p.transliterate(thai, "th")?;
    let b = g2p.transliterate(&latin.to_lowercase(), "en")?;
    let longest = a.len().max(b.len());
    if longest == 0 {
        return Ok(0.0);
    }
    Ok(weighted_feature_edit_distance(&a, &b, table)? / longest as f64)
}

/// Greedy longest-match lookup in a grapheme table.
#[derive(Debug, Clone)]
struct GraphemeTable {
    entries: HashMap<String, Vec<String>>,
    max_key_chars: usize,
}

impl GraphemeTable {
    fn parse(text: &str) -> Self {
        let mut entries = HashMap::new();
        for line in text.lines() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('\t') else {
                continue;
            };
            entries.insert(
                key.to_string(),
                value.split_whitespace().map(str::to_string).collect(),
            );
        }
        let max_key_chars = entries.keys().map(|k| k.chars().count()).max().unwrap_or(1);
        Self {
            entries,
            max_key_chars,
        }
    }

    fn lookup(&self, chars: &[char], text: &str, lang: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let hit = (1..=self.max_key_chars.min(chars.len() - i)).rev().find_map(|len| {
                let key: String = chars[i..i + len].iter().collect();
                self.entries.get(&key).map(|v| (len, v))
            });
            let Some((len, segs)) = hit else {
                return Err(PhoneticError::UnknownGrapheme {
                    text: text.to_string(),
                    lang: lang.to_string(),
                    offset: i,
                });
            };
            out.extend(segs.iter().cloned());
            i += len;
        }
        Ok(out)
    }
}

fn is_preposed_vowel(c: char) -> bool {
    ('\u{0E40}'..='\u{0E44}').contains(&c)
}

fn is_thai_consonant(c: char) -> bool {
    ('\u{0E01}'..='\u{0E2E}').contains(&c)
}

/// Deterministic, table-driven stand-in for a real G2P model. Thai preposed
/// vowels are moved after the consonant they precede before lookup; beyond
/// that the tables are read literally, one longest match at a time.
#[derive(Debug, Clone)]
pub struct ToyG2p {
    thai: GraphemeTable,
    english: GraphemeTable,
}

impl ToyG2p {
    pub fn builtin() -> Self {
        Self::from_tables(G2P_TH_TSV, G2P_EN_TSV)
    }

    pub fn from_tables(thai_tsv: &str, english_tsv: &str) -> Self {
        Self {
            thai: GraphemeTable::parse(thai_tsv),
            english: GraphemeTable::parse(english_tsv),
        }
    }

    /// Every segment any table entry can produce.
    pub fn output_segments(&self) -> impl Iterator<Item = &str> {
        self.thai
            .entries
            .values()
            .chain(self.english.entries.values())
            .flatten()
            .map(String::as_str)
    }

    pub fn thai_entry_count(&self) -> usize {
        self.thai.entries.len()
    }

    pub fn english_entry_count(&self) -> usize {
        self.english.entries.len()
    }
}

impl G2pProvider for ToyG2p {
    fn transliterate(&self, text: &str, lang: &str) -> Result<Vec<String>> {
        match lang {
            "th" => {
                let mut chars: Vec<char> = crate::data::nfc(text).chars().collect();
                let mut i = 0;
                while i + 1 < chars.len() {
                    if is_preposed_vowel(chars[i]) && is_thai_consonant(chars[i + 1]) {
                        chars.swap(i, i + 1);
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                self.thai.lookup(&chars, text, lang)
            }
            "en" => {
                let chars: Vec<char> = text.to_lowercase().chars().collect();
                self.english.lookup(&chars, text, lang)
            }
            other => Err(PhoneticError::UnsupportedLanguage(other.to_string())),
        }
    }
}
