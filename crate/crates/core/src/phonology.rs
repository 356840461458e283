//! Articulatory feature table: phone encodings, diacritic pruning, and the
//! feature edit distance used as phonological prior and alignment cost.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// The null phone modelling insertions and deletions.
pub const NULL_PHONE: &str = "\u{2205}";

/// Additive alignment penalty between a vowel and a true consonant.
pub const VOWEL_CONSONANT_PENALTY: f64 = 1.0;

/// Base edit cost of a whole-phone insertion or deletion.
pub const NULL_EDIT_COST: f64 = 1.0;

/// Ternary articulatory feature values of one phone, in table feature order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector(Vec<i8>);

impl FeatureVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|v| !matches!(v, -1..=1)) {
            return Err(Error::Format("feature values must be -1, 0 or +1".into()));
        }
        Ok(FeatureVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, idx: usize) -> i8 {
        self.0[idx]
    }

    /// Indices of features on which the two vectors differ.
    pub fn differing(&self, other: &FeatureVector) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Binary one-hot encoding of a feature vector: for feature f, positions
/// (3f, 3f+1, 3f+2) encode the values (-1, 0, +1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotEncoding(Vec<u8>);

impl OneHotEncoding {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|b| *b as f64).collect()
    }

    /// Inverse of [`one_hot`]; used to check injectivity.
    pub fn decode(&self) -> Result<FeatureVector> {
        if !self.0.len().is_multiple_of(3) {
            return Err(Error::Format("one-hot length not a multiple of 3".into()));
        }
        let mut values = Vec::with_capacity(self.0.len() / 3);
        for chunk in self.0.chunks(3) {
            let v = match chunk {
                [1, 0, 0] => -1,
                [0, 1, 0] => 0,
                [0, 0, 1] => 1,
                _ => return Err(Error::Format("invalid one-hot feature slot".into())),
            };
            values.push(v);
        }
        FeatureVector::new(values)
    }
}

/// Encode a feature vector as a binary vector of length 3N.
pub fn one_hot(v: &FeatureVector) -> OneHotEncoding {
    let mut bits = vec![0u8; 3 * v.len()];
    for (f, value) in v.values().iter().enumerate() {
        let slot = match value {
            -1 => 0,
            0 => 1,
            _ => 2,
        };
        bits[3 * f + slot] = 1;
    }
    OneHotEncoding(bits)
}

/// Which phones the graph-side inventory keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiacriticPolicy {
    /// Keep every phone in the table.
    Full,
    /// Exclude phones carrying diacritics other than those marking length,
    /// aspiration, and glottalization.
    Pruned,
}

// Marks that do not disqualify a phone under the pruned policy.
const ALLOWED_MARKS: &[char] = &[
    '\u{02d0}', // ː length
    '\u{02d1}', // ˑ half-length
    '\u{02b0}', // ʰ aspiration
    '\u{02bc}', // ʼ ejective
    '\u{02c0}', // ˀ glottalized
    '\u{0330}', // creaky voice
    '\u{0361}', // tie bar (affricate/coarticulation, part of the base segment)
    '\u{035c}', // tie bar below
];

fn is_mark(c: char) -> bool {
    matches!(u32::from(c),
        0x0300..=0x036f       // combining diacritical marks
        | 0x1ab0..=0x1aff
        | 0x1dc0..=0x1dff
        | 0x20d0..=0x20ff
        | 0xfe20..=0xfe2f
        | 0x02b0..=0x02ff     // spacing modifier letters
        | 0x1d2c..=0x1d7f     // phonetic superscript modifiers
        | 0x1d9b..=0x1dbf
        | 0x207f)
}

/// True when `phone` (NFD) carries a diacritic outside the allowed set.
pub fn has_disallowed_diacritic(phone: &str) -> bool {
    phone
        .chars()
        .any(|c| is_mark(c) && !ALLOWED_MARKS.contains(&c))
}

/// Immutable map from IPA phone strings to ternary feature vectors.
#[derive(Debug, Clone)]
pub struct PhoneFeatureTable {
    entries: BTreeMap<String, FeatureVector>,
    feature_names: Vec<String>,
    policy: DiacriticPolicy,
    syl_idx: Option<usize>,
    cons_idx: Option<usize>,
}

impl PhoneFeatureTable {
    /// Load a table from a CSV file with header `phone,<feature_1>,...`.
    /// Cell values are `+`, `-` or `0`. Phone keys are NFD-normalized.
    pub fn load(path: impl AsRef<Path>, policy: DiacriticPolicy) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), policy)
    }

    pub fn parse(text: &str, source: &str, policy: DiacriticPolicy) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "empty file"))?;
        let mut cols = header.split(',');
        match cols.next() {
            Some("phone") => {}
            _ => return Err(Error::parse(source, 1, "header must start with `phone`")),
        }
        let feature_names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
        if feature_names.is_empty() {
            return Err(Error::parse(source, 1, "no feature columns"));
        }
        let n = feature_names.len();

        let mut entries = BTreeMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let phone: String = cells
                .next()
                .ok_or_else(|| Error::parse(source, lineno, "missing phone cell"))?
                .nfd()
                .collect();
            if phone.is_empty() {
                return Err(Error::parse(source, lineno, "empty phone"));
            }
            if phone == NULL_PHONE {
                return Err(Error::parse(source, lineno, "the null phone cannot be a table entry"));
            }
            let mut values = Vec::with_capacity(n);
            for cell in cells {
                let v = match cell.trim() {
                    "+" => 1,
                    "-" => -1,
                    "0" => 0,
                    other => {
                        return Err(Error::parse(
                            source,
                            lineno,
                            format!("unknown cell value {other:?} for phone {phone:?}"),
                        ))
                    }
                };
                values.push(v);
            }
            if values.len() != n {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!(
                        "phone {:?} has {} feature cells, expected {}",
                        phone,
                        values.len(),
                        n
                    ),
                ));
            }
            if entries.insert(phone.clone(), FeatureVector(values)).is_some() {
                return Err(Error::DuplicatePhone(phone));
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyInput(format!("no phone rows in {source}")));
        }

        let find = |name: &str| feature_names.iter().position(|f| f == name);
        Ok(PhoneFeatureTable {
            entries,
            syl_idx: find("syl"),
            cons_idx: find("cons"),
            feature_names,
            policy,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))
    }

    pub fn policy(&self) -> DiacriticPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, phone: &str) -> bool {
        let key: String = phone.nfd().collect();
        self.entries.contains_key(&key)
    }

    /// The stored feature vector for `phone`. Lookup always sees the full
    /// table, regardless of the pruning policy.
    pub fn encode(&self, phone: &str) -> Result<&FeatureVector> {
        let key: String = phone.nfd().collect();
        self.entries
            .get(&key)
            .ok_or_else(|| Error::UnknownPhone(phone.to_string()))
    }

    /// Every phone in the table, sorted.
    pub fn all_phones(&self) -> Vec<&str> {
        self.entries.keys().map(|p| p.as_str()).collect()
    }

    /// Phones visible under the table's diacritic policy, sorted. This is
    /// the transit node set of the phone graph.
    pub fn inventory(&self) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|p| match self.policy {
                DiacriticPolicy::Full => true,
                DiacriticPolicy::Pruned => !has_disallowed_diacritic(p),
            })
            .map(|p| p.as_str())
            .collect()
    }

    /// Feature edit distance: proportion of articulatory features changed.
    /// An edit to or from the null phone costs [`NULL_EDIT_COST`].
    pub fn fed(&self, a: &str, b: &str) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        if a == NULL_PHONE || b == NULL_PHONE {
            let other = if a == NULL_PHONE { b } else { a };
            self.encode(other)?;
            return Ok(NULL_EDIT_COST);
        }
        let va = self.encode(a)?;
        let vb = self.encode(b)?;
        Ok(va.differing(vb).len() as f64 / self.feature_count() as f64)
    }

    fn is_vowel(&self, v: &FeatureVector) -> bool {
        match (self.syl_idx, self.cons_idx) {
            (Some(s), Some(c)) => v.get(s) == 1 && v.get(c) == -1,
            _ => false,
        }
    }

    fn is_true_consonant(&self, v: &FeatureVector) -> bool {
        match (self.syl_idx, self.cons_idx) {
            (Some(s), Some(c)) => v.get(s) == -1 && v.get(c) == 1,
            _ => false,
        }
    }

    /// FED plus the vowel/consonant alignment penalty; used only as the
    /// substitution cost inside Needleman-Wunsch alignment.
    pub fn fed_aligned(&self, a: &str, b: &str) -> Result<f64> {
        let base = self.fed(a, b)?;
        if a == NULL_PHONE || b == NULL_PHONE {
            return Ok(base);
        }
        if self.syl_idx.is_none() || self.cons_idx.is_none() {
            return Err(Error::MissingFeature("syl/cons".into()));
        }
        let va = self.encode(a)?;
        let vb = self.encode(b)?;
        let clash = (self.is_vowel(va) && self.is_true_consonant(vb))
            || (self.is_true_consonant(va) && self.is_vowel(vb));
        Ok(if clash {
            base + VOWEL_CONSONANT_PENALTY
        } else {
            base
        })
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", match v {
                -1 => "-",
                0 => "0",
                _ => "+",
            })?;
        }
        Ok(())
    }
}
