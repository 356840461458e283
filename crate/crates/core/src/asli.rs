//! Automatic sound law induction: align protoforms with daughter forms,
//! extract a base rule per phone-level change, filter by raw accuracy, and
//! iteratively generalize shared contexts (minimal generalization). Exports
//! shared-innovation and cognacy matrices plus derived correspondences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::parsimony::BinaryCharacter;
use crate::phonology::{PhoneFeatureTable, NULL_PHONE};
use crate::transition::{Correspondence, ReflexCell};

pub const PROTO_MARKER: &str = "PROTO";

/// Gap cost inside Needleman-Wunsch alignment.
pub const GAP_COST: f64 = 1.0;

pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CognateEntry {
    pub cogid: String,
    pub language: String,
    pub segments: Vec<String>,
}

#[derive(Debug, Default)]
pub struct CognateData {
    pub entries: Vec<CognateEntry>,
    /// Daughter languages (PROTO excluded), sorted.
    pub languages: Vec<String>,
    /// Cognate set ids, sorted.
    pub cogids: Vec<String>,
    /// Entries dropped because a phone was not in the feature table.
    pub excluded: usize,
}

/// Load `cogid<TAB>language<TAB>segments` rows (segments space-separated;
/// language `PROTO` marks the protoform). Entries with phones missing from
/// the table are excluded with a count.
pub fn load_cognates(path: impl AsRef<Path>, table: &PhoneFeatureTable) -> Result<CognateData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cognates(&text, &path.display().to_string(), table)
}

pub fn parse_cognates(
    text: &str,
    source: &str,
    table: &PhoneFeatureTable,
) -> Result<CognateData> {
    let mut data = CognateData::default();
    let mut languages = BTreeSet::new();
    let mut cogids = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || (lineno == 1 && line.starts_with("cogid")) {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(Error::parse(
                source,
                lineno,
                "expected cogid<TAB>language<TAB>segments",
            ));
        }
        let cogid = cells[0].trim().to_string();
        let language = cells[1].trim().to_string();
        if cogid.is_empty() || language.is_empty() {
            return Err(Error::parse(source, lineno, "empty cogid or language"));
        }
        let segments: Vec<String> = cells[2]
            .split_whitespace()
            .map(|s| s.nfd().collect())
            .collect();
        if segments.is_empty() {
            return Err(Error::parse(source, lineno, "empty segment list"));
        }
        if !segments.iter().all(|s| table.contains(s)) {
            data.excluded += 1;
            continue;
        }
        if language != PROTO_MARKER {
            languages.insert(language.clone());
        }
        cogids.insert(cogid.clone());
        data.entries.push(CognateEntry {
            cogid,
            language,
            segments,
        });
    }
    if data.entries.is_empty() {
        return Err(Error::EmptyInput(format!("no usable cognate rows in {source}")));
    }
    data.languages = languages.into_iter().collect();
    data.cogids = cogids.into_iter().collect();
    Ok(data)
}

// ---------------------------------------------------------------- alignment

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignColumn {
    pub proto: Option<String>,
    pub daughter: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub columns: Vec<AlignColumn>,
    pub total_cost: f64,
}

impl Alignment {
    pub fn proto_segments(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter_map(|c| c.proto.as_deref())
            .collect()
    }

    pub fn daughter_segments(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter_map(|c| c.daughter.as_deref())
            .collect()
    }
}

/// Global alignment minimizing the sum of column costs: substitutions cost
/// `fed_aligned`, gaps cost [`GAP_COST`]. Tie order in the traceback is
/// substitution, then deletion, then insertion.
pub fn needleman_wunsch(
    proto: &[String],
    daughter: &[String],
    table: &PhoneFeatureTable,
) -> Result<Alignment> {
    if proto.is_empty() || daughter.is_empty() {
        return Err(Error::EmptyInput("alignment needs nonempty sequences".into()));
    }
    let m = proto.len();
    let n = daughter.len();
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut dp = vec![0.0_f64; (m + 1) * (n + 1)];
    // 0 = stop, 1 = substitution, 2 = deletion (proto, null), 3 = insertion
    let mut step = vec![0u8; (m + 1) * (n + 1)];
    for i in 1..=m {
        dp[idx(i, 0)] = i as f64 * GAP_COST;
        step[idx(i, 0)] = 2;
    }
    for j in 1..=n {
        dp[idx(0, j)] = j as f64 * GAP_COST;
        step[idx(0, j)] = 3;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = dp[idx(i - 1, j - 1)] + table.fed_aligned(&proto[i - 1], &daughter[j - 1])?;
            let del = dp[idx(i - 1, j)] + GAP_COST;
            let ins = dp[idx(i, j - 1)] + GAP_COST;
            let (best, which) = if sub <= del && sub <= ins {
                (sub, 1)
            } else if del <= ins {
                (del, 2)
            } else {
                (ins, 3)
            };
            dp[idx(i, j)] = best;
            step[idx(i, j)] = which;
        }
    }
    let mut columns = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        match step[idx(i, j)] {
            1 => {
                columns.push(AlignColumn {
                    proto: Some(proto[i - 1].clone()),
                    daughter: Some(daughter[j - 1].clone()),
                });
                i -= 1;
                j -= 1;
            }
            2 => {
                columns.push(AlignColumn {
                    proto: Some(proto[i - 1].clone()),
                    daughter: None,
                });
                i -= 1;
            }
            3 => {
                columns.push(AlignColumn {
                    proto: None,
                    daughter: Some(daughter[j - 1].clone()),
                });
                j -= 1;
            }
            _ => unreachable!("traceback left the lattice"),
        }
    }
    columns.reverse();
    Ok(Alignment {
        columns,
        total_cost: dp[idx(m, n)],
    })
}

/// One aligned (protoform, daughter form) pair.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub cogid: String,
    pub language: String,
    pub alignment: Alignment,
}

#[derive(Debug, Default, Clone)]
pub struct AlignedCorpus {
    pub pairs: Vec<AlignedPair>,
    /// Cognate sets skipped because they have no protoform row.
    pub skipped_no_proto: usize,
}

/// Align every daughter entry against its cognate set's protoform.
pub fn align_corpus(data: &CognateData, table: &PhoneFeatureTable) -> Result<AlignedCorpus> {
    let mut protos: BTreeMap<&str, &CognateEntry> = BTreeMap::new();
    for e in &data.entries {
        if e.language == PROTO_MARKER {
            protos.insert(e.cogid.as_str(), e);
        }
    }
    let mut corpus = AlignedCorpus::default();
    let mut seen_missing: BTreeSet<&str> = BTreeSet::new();
    let mut daughters: Vec<&CognateEntry> = data
        .entries
        .iter()
        .filter(|e| e.language != PROTO_MARKER)
        .collect();
    daughters.sort_by(|a, b| (&a.cogid, &a.language).cmp(&(&b.cogid, &b.language)));
    for e in daughters {
        let Some(proto) = protos.get(e.cogid.as_str()) else {
            if seen_missing.insert(e.cogid.as_str()) {
                corpus.skipped_no_proto += 1;
            }
            continue;
        };
        let alignment = needleman_wunsch(&proto.segments, &e.segments, table)?;
        corpus.pairs.push(AlignedPair {
            cogid: e.cogid.clone(),
            language: e.language.clone(),
            alignment,
        });
    }
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyInput("no alignable cognate pairs".into()));
    }
    Ok(corpus)
}

// ---------------------------------------------------------------- sound laws

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContextElem {
    /// Word boundary `#`.
    Boundary,
    Literal(String),
    /// A set of phones `(x|y|...)`, in order of first appearance.
    Set(Vec<String>),
    /// Free variable: matches any remaining material.
    Var,
}

impl ContextElem {
    fn matches(&self, seg: &str) -> bool {
        match self {
            ContextElem::Literal(p) => p == seg,
            ContextElem::Set(s) => s.iter().any(|x| x == seg),
            _ => false,
        }
    }
}

impl fmt::Display for ContextElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextElem::Boundary => write!(f, "#"),
            ContextElem::Literal(p) => write!(f, "{p}"),
            ContextElem::Set(s) => {
                let items: Vec<&str> = s.iter().map(|x| x.as_str()).collect();
                write!(f, "({})", items.join("|"))
            }
            ContextElem::Var => write!(f, "X"),
        }
    }
}

/// A rewrite rule `A → B / LEFT _ RIGHT` with usage statistics.
#[derive(Debug, Clone)]
pub struct SoundLaw {
    /// None encodes the null phone (insertion).
    pub from: Option<String>,
    /// None encodes the null phone (deletion).
    pub to: Option<String>,
    pub left: Vec<ContextElem>,
    pub right: Vec<ContextElem>,
    pub scope: usize,
    pub hits: usize,
    pub languages: BTreeSet<String>,
    pub per_language: BTreeMap<String, (usize, usize)>,
}

impl SoundLaw {
    pub fn accuracy(&self) -> Option<f64> {
        if self.scope == 0 {
            None
        } else {
            Some(self.hits as f64 / self.scope as f64)
        }
    }

    pub fn change_display(&self) -> String {
        format!(
            "{} → {}",
            self.from.as_deref().unwrap_or(NULL_PHONE),
            self.to.as_deref().unwrap_or(NULL_PHONE)
        )
    }

    /// Signature identifying the rule itself (change and contexts); set
    /// members are sorted so `(n|m)` and `(m|n)` are one rule.
    pub fn signature(&self) -> String {
        fn elem_sig(e: &ContextElem) -> String {
            match e {
                ContextElem::Set(s) => {
                    let mut items: Vec<&str> = s.iter().map(|x| x.as_str()).collect();
                    items.sort_unstable();
                    format!("({})", items.join("|"))
                }
                other => other.to_string(),
            }
        }
        let mut out = format!("{} /", self.change_display());
        for e in &self.left {
            out.push(' ');
            out.push_str(&elem_sig(e));
        }
        out.push_str(" _");
        for e in &self.right {
            out.push(' ');
            out.push_str(&elem_sig(e));
        }
        out
    }
}

impl fmt::Display for SoundLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} /", self.change_display())?;
        for e in &self.left {
            write!(f, " {e}")?;
        }
        write!(f, " _")?;
        for e in &self.right {
            write!(f, " {e}")?;
        }
        Ok(())
    }
}

/// One base rule per changed alignment column: the full proto-side material
/// becomes the context, anchored with boundaries on both ends.
pub fn extract_base_rules(alignment: &Alignment, language: &str) -> Vec<SoundLaw> {
    let mut out = Vec::new();
    for (i, col) in alignment.columns.iter().enumerate() {
        if col.proto == col.daughter {
            continue;
        }
        let mut left = vec![ContextElem::Boundary];
        for c in &alignment.columns[..i] {
            if let Some(p) = &c.proto {
                left.push(ContextElem::Literal(p.clone()));
            }
        }
        let mut right = Vec::new();
        for c in &alignment.columns[i + 1..] {
            if let Some(p) = &c.proto {
                right.push(ContextElem::Literal(p.clone()));
            }
        }
        right.push(ContextElem::Boundary);
        out.push(SoundLaw {
            from: col.proto.clone(),
            to: col.daughter.clone(),
            left,
            right,
            scope: 0,
            hits: 0,
            languages: [language.to_string()].into_iter().collect(),
            per_language: BTreeMap::new(),
        });
    }
    out
}

// Match the left context against the proto segments before the site,
// walking outward (right to left).
fn match_left(elems: &[ContextElem], segs: &[&str]) -> bool {
    let mut pos = segs.len() as isize - 1;
    for e in elems.iter().rev() {
        match e {
            ContextElem::Var => return true,
            ContextElem::Boundary => {
                if pos != -1 {
                    return false;
                }
            }
            lit => {
                if pos < 0 || !lit.matches(segs[pos as usize]) {
                    return false;
                }
                pos -= 1;
            }
        }
    }
    true
}

fn match_right(elems: &[ContextElem], segs: &[&str]) -> bool {
    let mut pos = 0usize;
    for e in elems {
        match e {
            ContextElem::Var => return true,
            ContextElem::Boundary => {
                if pos != segs.len() {
                    return false;
                }
            }
            lit => {
                if pos >= segs.len() || !lit.matches(segs[pos]) {
                    return false;
                }
                pos += 1;
            }
        }
    }
    true
}

/// Recompute scope and hits for a law over the aligned corpus: scope counts
/// proto-side sites matching the change source and contexts, hits those
/// whose aligned daughter equals the target. Per-language tallies drive the
/// innovation matrix.
pub fn law_stats(law: &mut SoundLaw, corpus: &AlignedCorpus) {
    law.scope = 0;
    law.hits = 0;
    law.per_language.clear();
    for pair in &corpus.pairs {
        let segs = pair.alignment.proto_segments();
        let (mut scope, mut hits) = (0usize, 0usize);
        match &law.from {
            Some(a) => {
                // substitution or deletion sites: proto columns equal to A
                let mut seg_pos = 0usize;
                for col in &pair.alignment.columns {
                    if let Some(p) = &col.proto {
                        if p == a
                            && match_left(&law.left, &segs[..seg_pos])
                            && match_right(&law.right, &segs[seg_pos + 1..])
                        {
                            scope += 1;
                            if col.daughter == law.to {
                                hits += 1;
                            }
                        }
                        seg_pos += 1;
                    }
                }
            }
            None => {
                // insertion sites: slots between proto segments
                let mut slot_daughters: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
                let mut seg_pos = 0usize;
                for col in &pair.alignment.columns {
                    match (&col.proto, &col.daughter) {
                        (Some(_), _) => seg_pos += 1,
                        (None, Some(d)) => {
                            slot_daughters.entry(seg_pos).or_default().push(d);
                        }
                        (None, None) => {}
                    }
                }
                for slot in 0..=segs.len() {
                    if match_left(&law.left, &segs[..slot])
                        && match_right(&law.right, &segs[slot..])
                    {
                        scope += 1;
                        let inserted = slot_daughters
                            .get(&slot)
                            .is_some_and(|ds| ds.iter().any(|d| Some(*d) == law.to.as_deref()));
                        if inserted {
                            hits += 1;
                        }
                    }
                }
            }
        }
        if scope > 0 {
            let entry = law.per_language.entry(pair.language.clone()).or_insert((0, 0));
            entry.0 += scope;
            entry.1 += hits;
        }
        law.scope += scope;
        law.hits += hits;
    }
    law.languages = law
        .per_language
        .iter()
        .filter(|(_, (_, h))| *h > 0)
        .map(|(l, _)| l.clone())
        .collect();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextClass {
    /// Mismatching context phones merge into the literal pair set `(x|y)`.
    PairSet,
    /// Mismatches merge into the natural class of phones sharing the
    /// features on which the pair agrees.
    FeatureClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyMode {
    /// One accuracy pooled over all languages.
    Pooled,
    /// A law passes if any single language passes the threshold. This is the
    /// default: sound laws are language-level objects, and pooling the
    /// accuracy of a change that only part of the family underwent would
    /// filter out exactly the shared innovations the tree search needs.
    PerLanguage,
}

#[derive(Debug, Clone, Copy)]
pub struct AsliConfig {
    pub threshold: f64,
    pub accuracy_mode: AccuracyMode,
    pub context_class: ContextClass,
    /// Cap on generalized rules produced per change. The closure over
    /// literal sets grows like the subset lattice of attested context
    /// phones, so unbounded fixpoint iteration is intractable on real data.
    pub max_generalized_per_change: usize,
}

impl Default for AsliConfig {
    fn default() -> Self {
        AsliConfig {
            threshold: DEFAULT_ACCURACY_THRESHOLD,
            accuracy_mode: AccuracyMode::PerLanguage,
            context_class: ContextClass::PairSet,
            max_generalized_per_change: 200,
        }
    }
}

/// Laws with accuracy strictly above the threshold (scope must be positive).
pub fn filter_laws(laws: Vec<SoundLaw>, threshold: f64, mode: AccuracyMode) -> Vec<SoundLaw> {
    laws.into_iter()
        .filter(|law| match mode {
            AccuracyMode::Pooled => law.accuracy().is_some_and(|a| a > threshold),
            AccuracyMode::PerLanguage => law
                .per_language
                .values()
                .any(|(s, h)| *s > 0 && (*h as f64 / *s as f64) > threshold),
        })
        .collect()
}

fn phone_class(
    phones: &[String],
    table: &PhoneFeatureTable,
    class: ContextClass,
) -> Vec<String> {
    match class {
        ContextClass::PairSet => phones.to_vec(),
        ContextClass::FeatureClass => {
            let vecs: Vec<_> = phones
                .iter()
                .filter_map(|p| table.encode(p).ok())
                .collect();
            if vecs.len() != phones.len() || vecs.is_empty() {
                return phones.to_vec();
            }
            let n = vecs[0].len();
            let shared: Vec<(usize, i8)> = (0..n)
                .filter_map(|f| {
                    let v = vecs[0].get(f);
                    vecs.iter().all(|x| x.get(f) == v).then_some((f, v))
                })
                .collect();
            table
                .inventory()
                .iter()
                .filter(|p| {
                    table
                        .encode(p)
                        .map(|v| shared.iter().all(|(f, val)| v.get(*f) == *val))
                        .unwrap_or(false)
                })
                .map(|p| p.to_string())
                .collect()
        }
    }
}

// Merge two context elements at the first mismatch position.
fn merge_elems(
    a: &ContextElem,
    b: &ContextElem,
    table: &PhoneFeatureTable,
    class: ContextClass,
) -> ContextElem {
    let phones = |e: &ContextElem| -> Option<Vec<String>> {
        match e {
            ContextElem::Literal(p) => Some(vec![p.clone()]),
            ContextElem::Set(s) => Some(s.clone()),
            _ => None,
        }
    };
    match (phones(a), phones(b)) {
        (Some(mut x), Some(y)) => {
            for p in y {
                if !x.contains(&p) {
                    x.push(p);
                }
            }
            ContextElem::Set(phone_class(&x, table, class))
        }
        _ => ContextElem::Var,
    }
}

// Generalize one context side. `x` and `y` are in linear order; `from_end`
// distinguishes the left side (compared right-to-left, outward from the
// change site) from the right side.
fn generalize_side(
    x: &[ContextElem],
    y: &[ContextElem],
    from_end: bool,
    table: &PhoneFeatureTable,
    class: ContextClass,
) -> Vec<ContextElem> {
    let get = |side: &[ContextElem], i: usize| -> Option<ContextElem> {
        if i >= side.len() {
            return None;
        }
        Some(if from_end {
            side[side.len() - 1 - i].clone()
        } else {
            side[i].clone()
        })
    };
    let mut kept: Vec<ContextElem> = Vec::new();
    let mut i = 0usize;
    let tail = loop {
        match (get(x, i), get(y, i)) {
            (None, None) => break Vec::new(),
            (Some(ex), Some(ey)) if ex == ey => {
                kept.push(ex);
                i += 1;
            }
            (ex, ey) => {
                // first mismatch: merge, then collapse everything farther out
                let merged = match (&ex, &ey) {
                    (Some(a), Some(b)) => merge_elems(a, b, table, class),
                    _ => ContextElem::Var,
                };
                if merged == ContextElem::Var {
                    break vec![ContextElem::Var];
                }
                let rx: Vec<Option<ContextElem>> =
                    (i + 1..x.len()).map(|j| get(x, j)).collect();
                let ry: Vec<Option<ContextElem>> =
                    (i + 1..y.len()).map(|j| get(y, j)).collect();
                let boundary_only = |r: &[Option<ContextElem>]| {
                    r.len() == 1 && r[0] == Some(ContextElem::Boundary)
                };
                let mut tail = vec![merged];
                if rx.is_empty() && ry.is_empty() {
                    // nothing farther out on either side
                } else if boundary_only(&rx) && boundary_only(&ry) {
                    tail.push(ContextElem::Boundary);
                } else {
                    tail.push(ContextElem::Var);
                }
                break tail;
            }
        }
    };
    // kept holds the shared inner material, tail the merged outer part; both
    // were collected outward, so stitch them back in linear order
    let mut out: Vec<ContextElem> = tail.into_iter().rev().chain(kept.into_iter().rev()).collect();
    if !from_end {
        out.reverse();
    }
    out
}

/// Minimal generalization of one pair of laws with the same change.
pub fn generalize_pair(
    a: &SoundLaw,
    b: &SoundLaw,
    table: &PhoneFeatureTable,
    class: ContextClass,
) -> SoundLaw {
    debug_assert_eq!((&a.from, &a.to), (&b.from, &b.to));
    SoundLaw {
        from: a.from.clone(),
        to: a.to.clone(),
        left: generalize_side(&a.left, &b.left, true, table, class),
        right: generalize_side(&a.right, &b.right, false, table, class),
        scope: 0,
        hits: 0,
        languages: BTreeSet::new(),
        per_language: BTreeMap::new(),
    }
}

/// Iterate pairwise generalization to a fixpoint, per change, bounded by
/// `cap` produced rules per change. Every produced law gets its statistics
/// recomputed; the output is deduplicated and sorted by (change, accuracy
/// descending, rule text).
pub fn minimal_generalize_capped(
    laws: Vec<SoundLaw>,
    corpus: &AlignedCorpus,
    table: &PhoneFeatureTable,
    class: ContextClass,
    cap: usize,
) -> Vec<SoundLaw> {
    // group by change; each group closes independently
    let mut groups: BTreeMap<(Option<String>, Option<String>), Vec<SoundLaw>> = BTreeMap::new();
    let mut sigs: BTreeSet<String> = BTreeSet::new();
    for law in laws {
        if sigs.insert(law.signature()) {
            groups
                .entry((law.from.clone(), law.to.clone()))
                .or_default()
                .push(law);
        }
    }

    let mut pool: Vec<SoundLaw> = Vec::new();
    for (_, mut group) in groups {
        let base_len = group.len();
        let mut produced = 0usize;
        // unordered pairs; newly added rules join the iteration
        let mut i = 0;
        'outer: while i < group.len() {
            for j in 0..i {
                let mut gen = generalize_pair(&group[j], &group[i], table, class);
                if sigs.insert(gen.signature()) {
                    law_stats(&mut gen, corpus);
                    group.push(gen);
                    produced += 1;
                    if produced >= cap {
                        break 'outer;
                    }
                }
            }
            i += 1;
        }
        let _ = base_len;
        pool.extend(group);
    }

    pool.sort_by(|a, b| {
        a.change_display()
            .cmp(&b.change_display())
            .then_with(|| {
                b.accuracy()
                    .unwrap_or(0.0)
                    .total_cmp(&a.accuracy().unwrap_or(0.0))
            })
            .then_with(|| a.signature().cmp(&b.signature()))
    });
    pool
}

/// Minimal generalization with the default per-change cap.
pub fn minimal_generalize(
    laws: Vec<SoundLaw>,
    corpus: &AlignedCorpus,
    table: &PhoneFeatureTable,
    class: ContextClass,
) -> Vec<SoundLaw> {
    minimal_generalize_capped(
        laws,
        corpus,
        table,
        class,
        AsliConfig::default().max_generalized_per_change,
    )
}

#[derive(Debug)]
pub struct AsliOutput {
    pub laws: Vec<SoundLaw>,
    pub base_rule_count: usize,
    pub filtered_out: usize,
    pub corpus: AlignedCorpus,
}

/// The full induction pipeline: align, extract base rules, score, filter by
/// raw accuracy, then minimally generalize.
pub fn induce_sound_laws(
    data: &CognateData,
    table: &PhoneFeatureTable,
    config: &AsliConfig,
) -> Result<AsliOutput> {
    let corpus = align_corpus(data, table)?;
    let mut base: Vec<SoundLaw> = Vec::new();
    let mut sigs: BTreeSet<String> = BTreeSet::new();
    for pair in &corpus.pairs {
        for law in extract_base_rules(&pair.alignment, &pair.language) {
            if sigs.insert(law.signature()) {
                base.push(law);
            }
        }
    }
    for law in base.iter_mut() {
        law_stats(law, &corpus);
    }
    let base_rule_count = base.len();
    let kept = filter_laws(base, config.threshold, config.accuracy_mode);
    let filtered_out = base_rule_count - kept.len();
    let laws = minimal_generalize_capped(
        kept,
        &corpus,
        table,
        config.context_class,
        config.max_generalized_per_change,
    );
    Ok(AsliOutput {
        laws,
        base_rule_count,
        filtered_out,
        corpus,
    })
}

// ---------------------------------------------------------------- matrices

/// One 0/1 column per law: 1 where the language has at least one hit.
pub fn shared_innovation_matrix(laws: &[SoundLaw], languages: &[String]) -> Vec<BinaryCharacter> {
    laws.iter()
        .enumerate()
        .map(|(i, law)| BinaryCharacter {
            id: format!("law_{:04}", i + 1),
            cells: languages
                .iter()
                .map(|l| (l.clone(), Some(law.languages.contains(l))))
                .collect(),
        })
        .collect()
}

/// One 0/1 column per cognate set: 1 where the language has an entry.
pub fn cognacy_matrix(data: &CognateData) -> Result<Vec<BinaryCharacter>> {
    if data.cogids.is_empty() {
        return Err(Error::EmptyInput("no cognate sets".into()));
    }
    let mut present: BTreeSet<(&str, &str)> = BTreeSet::new();
    for e in &data.entries {
        if e.language != PROTO_MARKER {
            present.insert((e.cogid.as_str(), e.language.as_str()));
        }
    }
    Ok(data
        .cogids
        .iter()
        .map(|cogid| BinaryCharacter {
            id: cogid.clone(),
            cells: data
                .languages
                .iter()
                .map(|l| {
                    (
                        l.clone(),
                        Some(present.contains(&(cogid.as_str(), l.as_str()))),
                    )
                })
                .collect(),
        })
        .collect())
}

/// Derive one correspondence per substitution law: the proto phone is the
/// law's source; each language's reflex is the majority aligned daughter
/// phone over that language's matching sites (missing when it never
/// matches). Laws with fewer than two attested languages are skipped.
pub fn export_correspondences(
    laws: &[SoundLaw],
    corpus: &AlignedCorpus,
    languages: &[String],
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for law in laws {
        let (Some(from), Some(_)) = (&law.from, &law.to) else {
            continue;
        };
        let mut per_lang: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
        for pair in &corpus.pairs {
            let segs = pair.alignment.proto_segments();
            let mut seg_pos = 0usize;
            for col in &pair.alignment.columns {
                if let Some(p) = &col.proto {
                    if p == from
                        && match_left(&law.left, &segs[..seg_pos])
                        && match_right(&law.right, &segs[seg_pos + 1..])
                    {
                        let reflex = col
                            .daughter
                            .clone()
                            .unwrap_or_else(|| NULL_PHONE.to_string());
                        *per_lang
                            .entry(pair.language.as_str())
                            .or_default()
                            .entry(reflex)
                            .or_insert(0) += 1;
                    }
                    seg_pos += 1;
                }
            }
        }
        let mut reflexes: BTreeMap<String, ReflexCell> = BTreeMap::new();
        let mut attested = 0usize;
        for lang in languages {
            let cell = match per_lang.get(lang.as_str()) {
                None => ReflexCell::Missing,
                Some(counts) => {
                    // majority reflex, ties to the lexicographically smallest
                    let best = counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                        .map(|(p, _)| p.clone())
                        .expect("nonempty counts");
                    attested += 1;
                    ReflexCell::Phone(best)
                }
            };
            reflexes.insert(lang.clone(), cell);
        }
        if attested >= 2 {
            out.push(Correspondence {
                id: out.len() as u32 + 1,
                proto: from.clone(),
                reflexes,
            });
        }
    }
    out
}

/// Law dump: `A → B / LEFT _ RIGHT<TAB>scope<TAB>hits<TAB>languages`.
pub fn write_laws_tsv(laws: &[SoundLaw], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for law in laws {
        let langs: Vec<&str> = law.languages.iter().map(|s| s.as_str()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            law,
            law.scope,
            law.hits,
            langs.join(",")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
