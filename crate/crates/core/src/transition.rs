//! Per-correspondence sound-change transition matrices: the directed union
//! graph of intermediate paths closed under shortest paths, with disconnected
//! pairs priced at a penalty the parsimony search will never prefer.

use std::collections::BTreeMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::graph::{IntermediatePath, PathRecord};
use crate::phonology::{PhoneFeatureTable, NULL_PHONE};

/// Penalty factor over the largest finite matrix cost; dominates any sum of
/// finite costs over a tree of reasonable size.
pub const PENALTY_FACTOR: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReflexCell {
    /// An attested reflex; the null phone marks loss.
    Phone(String),
    /// No data for this language.
    Missing,
}

impl ReflexCell {
    pub fn phone(&self) -> Option<&str> {
        match self {
            ReflexCell::Phone(p) => Some(p),
            ReflexCell::Missing => None,
        }
    }
}

/// A proto-phoneme and its reflexes across the daughter languages.
#[derive(Debug, Clone)]
pub struct Correspondence {
    pub id: u32,
    pub proto: String,
    pub reflexes: BTreeMap<String, ReflexCell>,
}

impl Correspondence {
    pub fn attested(&self) -> impl Iterator<Item = (&String, &str)> {
        self.reflexes
            .iter()
            .filter_map(|(l, c)| c.phone().map(|p| (l, p)))
    }
}

/// Load `id<TAB>proto<TAB><lang1><TAB>...` rows; cells are a phone, `∅` for
/// loss, or `-` for missing data. Returns the correspondences and the
/// language list in header order.
pub fn load_correspondences(
    path: impl AsRef<Path>,
    table: Option<&PhoneFeatureTable>,
) -> Result<(Vec<Correspondence>, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correspondences(&text, &path.display().to_string(), table)
}

pub fn parse_correspondences(
    text: &str,
    source: &str,
    table: Option<&PhoneFeatureTable>,
) -> Result<(Vec<Correspondence>, Vec<String>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "proto" {
        return Err(Error::parse(
            source,
            1,
            "header must be id<TAB>proto<TAB><lang1><TAB><lang2>...",
        ));
    }
    let languages: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();

    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 2 + languages.len() {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {} cells, found {}", 2 + languages.len(), cells.len()),
            ));
        }
        let id: u32 = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, lineno, "bad correspondence id"))?;
        let proto: String = cells[1].trim().nfd().collect();
        if proto.is_empty() || proto == "-" {
            return Err(Error::parse(source, lineno, "proto phoneme is required"));
        }
        if let Some(t) = table {
            if proto != NULL_PHONE && !t.contains(&proto) {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("unknown proto phone {proto:?}"),
                ));
            }
        }
        let mut reflexes = BTreeMap::new();
        let mut attested = 0usize;
        for (lang, cell) in languages.iter().zip(&cells[2..]) {
            let cell = cell.trim();
            let value = if cell == "-" || cell.is_empty() {
                ReflexCell::Missing
            } else {
                let phone: String = cell.nfd().collect();
                if let Some(t) = table {
                    if phone != NULL_PHONE && !t.contains(&phone) {
                        return Err(Error::parse(
                            source,
                            lineno,
                            format!("unknown reflex phone {phone:?} for {lang}"),
                        ));
                    }
                }
                attested += 1;
                ReflexCell::Phone(phone)
            };
            reflexes.insert(lang.clone(), value);
        }
        if attested < 2 {
            return Err(Error::parse(
                source,
                lineno,
                "a correspondence needs at least two attested reflexes",
            ));
        }
        out.push(Correspondence { id, proto, reflexes });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("no correspondences in {source}")));
    }
    Ok((out, languages))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixMode {
    /// Every path edge costs 1 (expert-provided intermediate changes).
    ExpertUnitEdges,
    /// Path edges keep the weights they carried in the phone graph.
    Weighted,
}

/// Directed transition cost table over the phones on a correspondence's
/// intermediate paths; a shortest-path closure of the union graph.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub corr_id: u32,
    pub states: Vec<String>,
    pub cost: Vec<f64>, // row-major |states| x |states|
    pub penalty: f64,
    pub mode: MatrixMode,
}

impl TransitionMatrix {
    pub fn state_index(&self, phone: &str) -> Option<usize> {
        self.states.iter().position(|s| s == phone)
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.cost[from * self.states.len() + to]
    }

    pub fn get_by_name(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.get(self.state_index(from)?, self.state_index(to)?))
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}

/// Build the matrix for one correspondence from its intermediate paths.
/// `penalty` overrides the default of 1000 x the largest finite cost.
pub fn build_matrix(
    corr: &Correspondence,
    paths: &[IntermediatePath],
    mode: MatrixMode,
    penalty: Option<f64>,
) -> Result<TransitionMatrix> {
    if paths.is_empty() {
        return Err(Error::Correspondence {
            corr_id: corr.id,
            msg: "no intermediate paths supplied".into(),
        });
    }
    let reflex_set: Vec<&str> = corr.attested().map(|(_, p)| p).collect();
    for p in paths {
        let start = p.phones.first().map(|s| s.as_str());
        let end = p.phones.last().map(|s| s.as_str());
        if start != Some(corr.proto.as_str()) {
            return Err(Error::Correspondence {
                corr_id: corr.id,
                msg: format!(
                    "path starts at {start:?} but the proto-phoneme is {:?}",
                    corr.proto
                ),
            });
        }
        match end {
            Some(e) if reflex_set.contains(&e) || e == corr.proto => {}
            _ => {
                return Err(Error::Correspondence {
                    corr_id: corr.id,
                    msg: format!("path ends at {end:?}, which is not a reflex"),
                })
            }
        }
        if mode == MatrixMode::Weighted && p.edge_costs.len() != p.edges() {
            return Err(Error::Correspondence {
                corr_id: corr.id,
                msg: "weighted mode needs per-edge costs on every path".into(),
            });
        }
    }

    let mut states: Vec<String> = vec![corr.proto.clone()];
    for p in paths {
        for ph in &p.phones {
            if !states.contains(ph) {
                states.push(ph.clone());
            }
        }
    }
    states.sort();
    let n = states.len();
    let idx = |phone: &str| states.iter().position(|s| s == phone).unwrap();

    let inf = f64::INFINITY;
    let mut cost = vec![inf; n * n];
    for i in 0..n {
        cost[i * n + i] = 0.0;
    }
    for p in paths {
        for (step, w) in p.phones.windows(2).enumerate() {
            let (u, v) = (idx(&w[0]), idx(&w[1]));
            let c = match mode {
                MatrixMode::ExpertUnitEdges => 1.0,
                MatrixMode::Weighted => p.edge_costs[step],
            };
            if c < cost[u * n + v] {
                cost[u * n + v] = c;
            }
        }
    }

    // all-pairs shortest-path closure
    for k in 0..n {
        for i in 0..n {
            let ik = cost[i * n + k];
            if !ik.is_finite() {
                continue;
            }
            for j in 0..n {
                let through = ik + cost[k * n + j];
                if through < cost[i * n + j] {
                    cost[i * n + j] = through;
                }
            }
        }
    }

    let max_finite = cost
        .iter()
        .filter(|c| c.is_finite())
        .fold(0.0_f64, |a, b| a.max(*b));
    let penalty = penalty.unwrap_or(PENALTY_FACTOR * max_finite.max(1.0));
    for c in cost.iter_mut() {
        if !c.is_finite() {
            *c = penalty;
        }
    }

    Ok(TransitionMatrix {
        corr_id: corr.id,
        states,
        cost,
        penalty,
        mode,
    })
}

/// Group a path dump by correspondence id, validating phones against the
/// table and silently dropping duplicate identical paths.
pub fn load_expert_paths(
    path: impl AsRef<Path>,
    table: &PhoneFeatureTable,
) -> Result<BTreeMap<u32, Vec<IntermediatePath>>> {
    let records = crate::graph::read_paths_tsv(&path, Some(table))?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no paths in {}",
            path.as_ref().display()
        )));
    }
    Ok(group_paths(records))
}

pub fn group_paths(records: Vec<PathRecord>) -> BTreeMap<u32, Vec<IntermediatePath>> {
    let mut grouped: BTreeMap<u32, Vec<IntermediatePath>> = BTreeMap::new();
    for r in records {
        let bucket = grouped.entry(r.corr_id).or_default();
        if !bucket.iter().any(|p| p.phones == r.path.phones) {
            bucket.push(r.path);
        }
    }
    grouped
}

/// Write correspondences in the ingestion format (`id`, `proto`, one column
/// per language; `∅` marks loss and `-` missing data).
pub fn write_correspondences(
    corrs: &[Correspondence],
    languages: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("id\tproto\t{}\n", languages.join("\t"));
    for c in corrs {
        out.push_str(&format!("{}\t{}", c.id, c.proto));
        for lang in languages {
            let cell = match c.reflexes.get(lang) {
                Some(ReflexCell::Phone(p)) => p.as_str(),
                _ => "-",
            };
            out.push('\t');
            out.push_str(cell);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dump a matrix as a square TSV with a state header row and column; the
/// penalty value is recorded on the first line.
pub fn write_matrix_tsv(matrix: &TransitionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "# correspondence {} mode {} penalty {}\n",
        matrix.corr_id,
        match matrix.mode {
            MatrixMode::ExpertUnitEdges => "unit",
            MatrixMode::Weighted => "weighted",
        },
        matrix.penalty
    );
    out.push_str(&format!("state\t{}\n", matrix.states.join("\t")));
    for (i, s) in matrix.states.iter().enumerate() {
        out.push_str(s);
        for j in 0..matrix.states.len() {
            out.push_str(&format!("\t{}", matrix.get(i, j)));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
