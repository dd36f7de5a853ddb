//! A simplified, table-driven RTGS romanizer.
//!
//! Names are treated as single words. Syllables are found by greedy
//! longest-first vowel-pattern matching anchored on the onset consonant (or
//! a two-consonant cluster). Consonants written without a vowel carry the
//! inherent vowel. Tone marks are dropped before parsing, and a consonant
//! carrying the thanthakhat is silent. There is no pronunciation
//! disambiguation, so hard names come out differently from a full RTGS
//! implementation.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use crate::metrics::levenshtein;

const TABLES_TSV: &str = include_str!("../data/rtgs_tables.tsv");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RtgsError {
    #[error("unsupported character {ch:?} at offset {offset}")]
    UnsupportedCharacter { ch: char, offset: usize },
    #[error("RTGS tables: {0}")]
    Table(String),
}

pub type Result<T, E = RtgsError> = std::result::Result<T, E>;

/// Whether a vowel pattern takes a final consonant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalPolicy {
    Open,
    Closed,
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VowelPattern {
    pattern: String,
    pre: Vec<char>,
    post: Vec<char>,
    latin: String,
    policy: FinalPolicy,
    open_form: Option<String>,
}

impl VowelPattern {
    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn latin(&self) -> &str {
        &self.latin
    }
}

#[derive(Debug, Clone)]
pub struct RtgsTables {
    initial: HashMap<char, String>,
    finals: HashMap<char, String>,
    clusters: HashMap<(char, char), String>,
    vowels: Vec<VowelPattern>,
    tones: HashSet<char>,
    silencer: char,
    skipped: HashSet<char>,
    standalone: HashMap<char, String>,
    inherent_open: String,
    inherent_closed: String,
}

fn is_consonant(c: char) -> bool {
    ('\u{0E01}'..='\u{0E2E}').contains(&c)
}

/// Vowel signs written after (or above/below) their consonant.
fn is_following_sign(c: char) -> bool {
    matches!(c, '\u{0E30}'..='\u{0E3A}' | '\u{0E47}' | '\u{0E45}')
}

fn check_latin(s: &str) -> Result<()> {
    if s.chars().all(|c| c.is_ascii_lowercase()) {
        Ok(())
    } else {
        Err(RtgsError::Table(format!("latin {s:?} must be lowercase a-z")))
    }
}

fn single_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(RtgsError::Table(format!("expected one character, got {s:?}"))),
    }
}

impl RtgsTables {
    pub fn builtin() -> Self {
        Self::parse(TABLES_TSV).expect("shipped RTGS tables are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = RtgsTables {
            initial: HashMap::new(),
            finals: HashMap::new(),
            clusters: HashMap::new(),
            vowels: Vec::new(),
            tones: HashSet::new(),
            silencer: '\u{0E4C}',
            skipped: HashSet::new(),
            standalone: HashMap::new(),
            inherent_open: "a".into(),
            inherent_closed: "o".into(),
        };
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            let cell = |i: usize| cells.get(i).copied().unwrap_or("");
            let bad = || RtgsError::Table(format!("line {}: {line:?}", n + 1));
            match cell(0) {
                "initial" => {
                    check_latin(cell(2))?;
                    t.initial.insert(single_char(cell(1))?, cell(2).to_string());
                }
                "final" => {
                    check_latin(cell(2))?;
                    t.finals.insert(single_char(cell(1))?, cell(2).to_string());
                }
                "cluster" => {
                    let cs: Vec<char> = cell(1).chars().collect();
                    if cs.len() != 2 {
                        return Err(bad());
                    }
                    check_latin(cell(2))?;
                    t.clusters.insert((cs[0], cs[1]), cell(2).to_string());
                }
                "vowel" => {
                    let pattern = cell(1).to_string();
                    let (pre, post) = pattern.split_once('-').ok_or_else(bad)?;
                    let policy = match cell(3) {
                        "open" => FinalPolicy::Open,
                        "closed" => FinalPolicy::Closed,
                        "any" => FinalPolicy::Any,
                        _ => return Err(bad()),
                    };
                    check_latin(cell(2))?;
                    let open_form = Some(cell(4)).filter(|s| !s.is_empty()).map(str::to_string);
                    if let Some(f) = &open_form {
                        check_latin(f)?;
                    }
                    if cell(2).is_empty() {
                        return Err(bad());
                    }
                    t.vowels.push(VowelPattern {
                        pre: pre.chars().collect(),
                        post: post.chars().collect(),
                        pattern,
                        latin: cell(2).to_string(),
                        policy,
                        open_form,
                    });
                }
                "tone" => {
                    t.tones.insert(single_char(cell(1))?);
                }
                "silencer" => t.silencer = single_char(cell(1))?,
                "skip" => {
                    t.skipped.insert(single_char(cell(1))?);
                }
                "standalone" => {
                    check_latin(cell(2))?;
                    t.standalone.insert(single_char(cell(1))?, cell(2).to_string());
                }
                "inherent" => {
                    check_latin(cell(2))?;
                    match cell(1) {
                        "open" => t.inherent_open = cell(2).to_string(),
                        "closed" => t.inherent_closed = cell(2).to_string(),
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(bad()),
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for c in '\u{0E01}'..='\u{0E2E}' {
            if !self.initial.contains_key(&c) || !self.finals.contains_key(&c) {
                return Err(RtgsError::Table(format!("consonant {c:?} missing from a consonant map")));
            }
        }
        let lens: Vec<usize> = self.vowels.iter().map(|v| v.pattern.chars().count()).collect();
        if lens.windows(2).any(|w| w[0] < w[1]) {
            return Err(RtgsError::Table("vowel patterns must be ordered longest first".into()));
        }
        let distinct: HashSet<&str> = self.vowels.iter().map(|v| v.pattern.as_str()).collect();
        if distinct.len() != self.vowels.len() {
            return Err(RtgsError::Table("duplicate vowel pattern".into()));
        }
        if self.inherent_open.is_empty() || self.inherent_closed.is_empty() {
            return Err(RtgsError::Table("inherent vowels must be non-empty".into()));
        }
        Ok(())
    }

    pub fn vowel_patterns(&self) -> &[VowelPattern] {
        &self.vowels
    }

    pub fn initial(&self, c: char) -> Option<&str> {
        self.initial.get(&c).map(String::as_str)
    }

    pub fn final_(&self, c: char) -> Option<&str> {
        self.finals.get(&c).map(String::as_str)
    }

    pub fn is_tone_mark(&self, c: char) -> bool {
        self.tones.contains(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanKind {
    /// A pronounced syllable and its romanization.
    Syllable(String),
    Space,
    /// A consonant (with any vowel sign) killed by the silencer.
    Silent,
    /// A sign the romanizer does not render.
    Skipped,
}

/// A run of input code points. `range` is in code-point offsets of the
/// NFC-normalized input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub range: Range<usize>,
    pub kind: SpanKind,
}

struct Parser<'a> {
    t: &'a RtgsTables,
    s: Vec<char>,
}

impl Parser<'_> {
    fn at(&self, i: usize) -> Option<char> {
        self.s.get(i).copied()
    }

    fn cons_at(&self, i: usize) -> bool {
        self.at(i).is_some_and(is_consonant)
    }

    fn sign_at(&self, i: usize) -> bool {
        self.at(i).is_some_and(is_following_sign)
    }

    fn cluster(&self, i: usize) -> Option<&str> {
        let (a, b) = (self.at(i)?, self.at(i + 1)?);
        self.t.clusters.get(&(a, b)).map(String::as_str)
    }

    /// True when the consonant at `q` begins a syllable of its own rather
    /// than closing the previous one.
    fn starts_syllable(&self, q: usize) -> bool {
        match self.at(q + 1) {
            Some(c) if is_following_sign(c) => true,
            Some('อ') => !self.sign_at(q + 2),
            Some('ว') => self.cons_at(q + 2) && !self.sign_at(q + 3),
            Some('ร') if self.at(q + 2) == Some('ร') => true,
            Some(_) => self.cluster(q).is_some() && self.sign_at(q + 2),
            None => false,
        }
    }

    fn final_eligible(&self, q: usize) -> bool {
        self.cons_at(q) && self.at(q + 1) != Some(self.t.silencer) && !self.starts_syllable(q)
    }

    /// Length of a silenced run starting at `i`, if any.
    fn silenced(&self, i: usize, after_syllable: bool) -> Option<usize> {
        if !self.cons_at(i) {
            return None;
        }
        let sil = Some(self.t.silencer);
        if self.at(i + 1) == sil {
            return Some(2);
        }
        if after_syllable && self.at(i + 2) == sil {
            let mid = self.at(i + 1)?;
            if is_consonant(mid) || matches!(mid, 'ิ' | 'ุ') {
                return Some(3);
            }
        }
        None
    }

    /// Onset (latin) for a pattern match at `p` with the given onset length.
    fn onset(&self, p: usize, len: usize) -> Option<String> {
        match len {
            2 => self.cluster(p).map(str::to_string),
            _ => self.cons_at(p).then(|| self.t.initial[&self.s[p]].clone()),
        }
    }

    fn try_pattern(&self, pos: usize, v: &VowelPattern, onset_len: usize) -> Option<(usize, String)> {
        let n = v.pre.len();
        if (0..n).any(|k| self.at(pos + k) != Some(v.pre[k])) {
            return None;
        }
        let onset = self.onset(pos + n, onset_len)?;
        let after = pos + n + onset_len;
        if (0..v.post.len()).any(|k| self.at(after + k) != Some(v.post[k])) {
            return None;
        }
        let mut end = after + v.post.len();
        let mut latin = onset;
        match v.policy {
            FinalPolicy::Open => latin.push_str(&v.latin),
            FinalPolicy::Closed | FinalPolicy::Any => {
                if self.final_eligible(end) {
                    latin.push_str(&v.latin);
                    latin.push_str(&self.t.finals[&self.s[end]]);
                    end += 1;
                } else if v.policy == FinalPolicy::Closed && v.open_form.is_none() {
                    return None;
                } else {
                    latin.push_str(v.open_form.as_deref().unwrap_or(&v.latin));
                }
            }
        }
        Some((end, latin))
    }

    fn bare(&self, pos: usize) -> (usize, String) {
        let (onset_len, mut latin) = match self.cluster(pos) {
            Some(c) if self.final_eligible(pos + 2) => (2, c.to_string()),
            _ => (1, self.t.initial[&self.s[pos]].clone()),
        };
        let q = pos + onset_len;
        if self.final_eligible(q) {
            latin.push_str(&self.t.inherent_closed);
            latin.push_str(&self.t.finals[&self.s[q]]);
            (q + 1, latin)
        } else {
            latin.push_str(&self.t.inherent_open);
            (q, latin)
        }
    }

    /// Spans over positions of `s` (tone marks already removed).
    fn run(&self) -> Vec<(Range<usize>, SpanKind)> {
        let mut out = Vec::new();
        let mut pos = 0;
        let mut after_syllable = false;
        while pos < self.s.len() {
            let c = self.s[pos];
            let (end, kind) = if c.is_whitespace() {
                (pos + 1, SpanKind::Space)
            } else if let Some(len) = self.silenced(pos, after_syllable) {
                (pos + len, SpanKind::Silent)
            } else if let Some(latin) = self.t.standalone.get(&c) {
                let end = if self.at(pos + 1) == Some('ๅ') { pos + 2 } else { pos + 1 };
                (end, SpanKind::Syllable(latin.clone()))
            } else if let Some((end, latin)) = self.t.vowels.iter().find_map(|v| {
                self.try_pattern(pos, v, 2).or_else(|| self.try_pattern(pos, v, 1))
            }) {
                (end, SpanKind::Syllable(latin))
            } else if is_consonant(c) {
                let (end, latin) = self.bare(pos);
                (end, SpanKind::Syllable(latin))
            } else {
                if !self.t.skipped.contains(&c) {
                    log::warn!("dropping unattached Thai sign {c:?} (U+{:04X})", c as u32);
                } else {
                    log::warn!("dropping sign {c:?} (U+{:04X})", c as u32);
                }
                (pos + 1, SpanKind::Skipped)
            };
            after_syllable = matches!(kind, SpanKind::Syllable(_) | SpanKind::Silent);
            out.push((pos..end, kind));
            pos = end;
        }
        out
    }
}

/// Splits a Thai name into syllable spans. Every code point of the
/// NFC-normalized input lands in exactly one span; tone marks belong to the
/// span they follow (or the first span).
pub fn syllabify(thai: &str, tables: &RtgsTables) -> Result<Vec<Span>> {
    let chars: Vec<char> = crate::data::nfc(thai).chars().collect();
    for (offset, &ch) in chars.iter().enumerate() {
        if !(ch.is_whitespace() || crate::data::is_thai_char(ch)) {
            return Err(RtgsError::UnsupportedCharacter { ch, offset });
        }
    }
    let kept: Vec<usize> = (0..chars.len()).filter(|&i| !tables.is_tone_mark(chars[i])).collect();
    let parser = Parser {
        t: tables,
        s: kept.iter().map(|&i| chars[i]).collect(),
    };
    let raw = parser.run();
    let mut spans: Vec<Span> = Vec::with_capacity(raw.len());
    for (k, (range, kind)) in raw.iter().enumerate() {
        let start = if k == 0 { 0 } else { kept[range.start] };
        let end = match raw.get(k + 1) {
            Some((next, _)) => kept[next.start],
            None => chars.len(),
        };
        spans.push(Span {
            range: start..end,
            kind: kind.clone(),
        });
    }
    if spans.is_empty() && !chars.is_empty() {
        // input made only of tone marks
        spans.push(Span {
            range: 0..chars.len(),
            kind: SpanKind::Skipped,
        });
    }
    Ok(spans)
}

fn starts_with_vowel(s: &str) -> bool {
    s.starts_with(['a', 'e', 'i', 'o', 'u'])
}

fn ends_with_vowel(s: &str) -> bool {
    s.ends_with(['a', 'e', 'i', 'o', 'u'])
}

/// Romanizes a Thai name. Output is lowercase ASCII letters plus hyphens
/// at ambiguous syllable junctures.
pub fn romanize_rtgs(thai: &str, tables: &RtgsTables) -> Result<String> {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    let spans = syllabify(thai, tables)?;
    for span in &spans {
        match &span.kind {
            SpanKind::Syllable(latin) => {
                if let Some(p) = prev {
                    let ambiguous = starts_with_vowel(latin) && (ends_with_vowel(p) || p.ends_with("ng"));
                    if ambiguous {
                        out.push('-');
                    }
                }
                out.push_str(latin);
                prev = Some(latin);
            }
            SpanKind::Space => prev = None,
            SpanKind::Silent | SpanKind::Skipped => {}
        }
    }
    Ok(out)
}

/// Levenshtein distance between a Latin variant and the RTGS romanization.
pub fn rtgs_similarity(latin_variant: &str, thai: &str, tables: &RtgsTables) -> Result<usize> {
    let reference = romanize_rtgs(thai, tables)?;
    Ok(levenshtein(&latin_variant.to_lowercase(), &reference))
}
