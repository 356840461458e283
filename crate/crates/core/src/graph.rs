//! The fully-connected directed phone graph weighted by DWFED (or unweighted
//! FED for the ablation), with the null phone for insertions/deletions, and
//! k-shortest intermediate paths between proto-phonemes and reflexes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::model::{dwfed_from_probs, predict, FeatureEditModel};
use crate::phonology::{FeatureVector, PhoneFeatureTable, NULL_EDIT_COST, NULL_PHONE};

pub const DEFAULT_INSERTION_MULT: f64 = 15.0;
pub const DEFAULT_DELETION_MULT: f64 = 10.0;

// Cap on the seeded sample used to set the null-edge base cost in dwfed mode.
const BASE_SAMPLE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    Dwfed,
    FedAblation,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphConfig {
    pub insertion_mult: f64,
    pub deletion_mult: f64,
    /// Seed for the pair sample that sets the null-edge base cost in dwfed mode.
    pub base_seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            insertion_mult: DEFAULT_INSERTION_MULT,
            deletion_mult: DEFAULT_DELETION_MULT,
            base_seed: 0,
        }
    }
}

/// One intermediate sound-change path from a proto-phoneme to a reflex.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediatePath {
    pub phones: Vec<String>,
    /// Per-step costs; empty when the path was loaded from a dump file that
    /// carries only the total.
    pub edge_costs: Vec<f64>,
    pub total_cost: f64,
}

impl IntermediatePath {
    pub fn edges(&self) -> usize {
        self.phones.len().saturating_sub(1)
    }

    pub fn intermediates(&self) -> &[String] {
        if self.phones.len() <= 2 {
            &[]
        } else {
            &self.phones[1..self.phones.len() - 1]
        }
    }
}

/// Anything the shortest-path machinery can run on. Node indices must be
/// assigned in the display order used for tie-breaking (the phone graph sorts
/// its nodes lexicographically, so index order is name order).
pub trait CostGraph {
    fn node_count(&self) -> usize;
    fn weight(&self, u: usize, v: usize) -> Option<f64>;
    fn out_neighbors(&self, u: usize) -> Vec<(usize, f64)>;
    fn in_neighbors(&self, v: usize) -> Vec<(usize, f64)>;
}

/// Explicit adjacency-list digraph, used for tests and oracles.
#[derive(Debug, Clone, Default)]
pub struct ExplicitGraph {
    adj: Vec<Vec<(usize, f64)>>,
    radj: Vec<Vec<(usize, f64)>>,
}

impl ExplicitGraph {
    pub fn new(n: usize) -> Self {
        ExplicitGraph {
            adj: vec![Vec::new(); n],
            radj: vec![Vec::new(); n],
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) {
        self.adj[u].push((v, w));
        self.radj[v].push((u, w));
    }
}

impl CostGraph for ExplicitGraph {
    fn node_count(&self) -> usize {
        self.adj.len()
    }

    fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adj[u].iter().find(|(x, _)| *x == v).map(|(_, w)| *w)
    }

    fn out_neighbors(&self, u: usize) -> Vec<(usize, f64)> {
        self.adj[u].clone()
    }

    fn in_neighbors(&self, v: usize) -> Vec<(usize, f64)> {
        self.radj[v].clone()
    }
}

/// Complete directed graph over the phone inventory plus the null phone.
/// The diacritic policy decides which phones may serve as transit nodes;
/// pruned-out phones stay addressable as path endpoints so that data-side
/// reflexes (nasalized vowels and the like) remain reachable. Weights are
/// computed on demand; in dwfed mode the per-source network predictions are
/// cached at build time.
pub struct PhoneGraph {
    nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    null_idx: usize,
    transit: Vec<bool>,
    mode: GraphMode,
    insertion_mult: f64,
    deletion_mult: f64,
    indel_base: f64,
    n_features: usize,
    vecs: Vec<Option<FeatureVector>>,
    preds: Vec<Vec<f64>>, // empty in fed-ablation mode
}

/// Build the phone graph. A model selects dwfed mode; `None` is the
/// unweighted FED ablation.
pub fn build_graph(
    model: Option<&FeatureEditModel>,
    table: &PhoneFeatureTable,
    config: GraphConfig,
) -> Result<PhoneGraph> {
    let inventory: std::collections::BTreeSet<String> =
        table.inventory().iter().map(|s| s.to_string()).collect();
    if inventory.is_empty() {
        return Err(Error::EmptyInput("phone inventory is empty".into()));
    }
    let mut nodes: Vec<String> = table.all_phones().iter().map(|s| s.to_string()).collect();
    nodes.push(NULL_PHONE.to_string());
    nodes.sort();

    let mut index = BTreeMap::new();
    for (i, p) in nodes.iter().enumerate() {
        index.insert(p.clone(), i);
    }
    let null_idx = index[NULL_PHONE];
    let transit: Vec<bool> = nodes
        .iter()
        .map(|p| p == NULL_PHONE || inventory.contains(p))
        .collect();

    let mut vecs: Vec<Option<FeatureVector>> = Vec::with_capacity(nodes.len());
    for p in &nodes {
        if p == NULL_PHONE {
            vecs.push(None);
        } else {
            vecs.push(Some(table.encode(p)?.clone()));
        }
    }

    // distinct transit nodes must have distinct vectors or their mutual
    // weight would be zero and shortest paths break
    let mut seen: BTreeMap<Vec<i8>, &String> = BTreeMap::new();
    for ((p, v), t) in nodes.iter().zip(&vecs).zip(&transit) {
        if !t {
            continue;
        }
        if let Some(v) = v {
            if let Some(prev) = seen.insert(v.values().to_vec(), p) {
                return Err(Error::Format(format!(
                    "phones {prev:?} and {p:?} have identical feature vectors; \
                     graph weights between distinct transit nodes must be positive"
                )));
            }
        }
    }

    let mode = if model.is_some() {
        GraphMode::Dwfed
    } else {
        GraphMode::FedAblation
    };

    let mut preds = Vec::new();
    if let Some(m) = model {
        for (p, v) in nodes.iter().zip(&vecs) {
            if p == NULL_PHONE {
                preds.push(Vec::new());
            } else {
                // same forward pass as predict(), via the cached vector
                let _ = v;
                preds.push(predict(m, p, table)?);
            }
        }
    }

    let mut graph = PhoneGraph {
        nodes,
        index,
        null_idx,
        transit,
        mode,
        insertion_mult: config.insertion_mult,
        deletion_mult: config.deletion_mult,
        indel_base: NULL_EDIT_COST,
        n_features: table.feature_count(),
        vecs,
        preds,
    };

    if mode == GraphMode::Dwfed {
        graph.indel_base = graph.mean_substitution_cost(config.base_seed);
    }
    Ok(graph)
}

impl PhoneGraph {
    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// The base cost scaled by the indel multipliers; recorded so dumps can
    /// report how null edges were priced.
    pub fn indel_base(&self) -> f64 {
        self.indel_base
    }

    pub fn node_index(&self, phone: &str) -> Result<usize> {
        let key: String = phone.nfd().collect();
        self.index
            .get(&key)
            .copied()
            .ok_or_else(|| Error::UnknownPhone(phone.to_string()))
    }

    fn substitution_cost(&self, u: usize, v: usize) -> f64 {
        let vu = self.vecs[u].as_ref().expect("non-null node");
        let vv = self.vecs[v].as_ref().expect("non-null node");
        match self.mode {
            GraphMode::Dwfed => dwfed_from_probs(&self.preds[u], vu.values(), vv.values()),
            GraphMode::FedAblation => {
                vu.differing(vv).len() as f64 / self.n_features as f64
            }
        }
    }

    // Mean dwfed over a seeded sample of ordered transit-phone pairs.
    fn mean_substitution_cost(&self, seed: u64) -> f64 {
        let phones: Vec<usize> = (0..self.nodes.len())
            .filter(|i| *i != self.null_idx && self.transit[*i])
            .collect();
        let n = phones.len();
        let mut total = 0.0;
        let mut count = 0usize;
        if n * (n - 1) <= BASE_SAMPLE_CAP {
            for &u in &phones {
                for &v in &phones {
                    if u != v {
                        total += self.substitution_cost(u, v);
                        count += 1;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while count < BASE_SAMPLE_CAP {
                let u = phones[rng.gen_range(0..n)];
                let v = phones[rng.gen_range(0..n)];
                if u != v {
                    total += self.substitution_cost(u, v);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    pub fn weight_by_name(&self, u: &str, v: &str) -> Result<f64> {
        let ui = self.node_index(u)?;
        let vi = self.node_index(v)?;
        Ok(self.weight(ui, vi).expect("complete graph"))
    }

    /// Up to `k` loopless least-cost paths from `proto` to `reflex`, in
    /// nondecreasing total cost; equal costs ordered lexicographically by
    /// phone sequence.
    pub fn shortest_paths(
        &self,
        proto: &str,
        reflex: &str,
        k: usize,
    ) -> Result<Vec<IntermediatePath>> {
        let src = self.node_index(proto)?;
        let dst = self.node_index(reflex)?;
        let mut banned: Vec<bool> = self.transit.iter().map(|t| !t).collect();
        banned[src] = false;
        banned[dst] = false;
        let raw = k_shortest_paths_banned(self, src, dst, k.max(1), &banned);
        if raw.is_empty() {
            return Err(Error::Format(format!(
                "no path from {proto:?} to {reflex:?} in the phone graph"
            )));
        }
        Ok(raw
            .into_iter()
            .map(|(_, path)| self.materialize(&path))
            .collect())
    }

    fn materialize(&self, path: &[usize]) -> IntermediatePath {
        let phones: Vec<String> = path.iter().map(|i| self.nodes[*i].clone()).collect();
        let edge_costs: Vec<f64> = path
            .windows(2)
            .map(|w| self.weight(w[0], w[1]).expect("complete graph"))
            .collect();
        let total_cost = edge_costs.iter().sum();
        IntermediatePath {
            phones,
            edge_costs,
            total_cost,
        }
    }
}

impl CostGraph for PhoneGraph {
    fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn weight(&self, u: usize, v: usize) -> Option<f64> {
        if u == v {
            return Some(0.0);
        }
        if u == self.null_idx {
            return Some(self.insertion_mult * self.indel_base);
        }
        if v == self.null_idx {
            return Some(self.deletion_mult * self.indel_base);
        }
        Some(self.substitution_cost(u, v))
    }

    fn out_neighbors(&self, u: usize) -> Vec<(usize, f64)> {
        (0..self.nodes.len())
            .filter(|v| *v != u)
            .map(|v| (v, self.weight(u, v).unwrap()))
            .collect()
    }

    fn in_neighbors(&self, v: usize) -> Vec<(usize, f64)> {
        (0..self.nodes.len())
            .filter(|u| *u != v)
            .map(|u| (u, self.weight(u, v).unwrap()))
            .collect()
    }
}

// ---------------------------------------------------------------- algorithms

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties broken on the node index
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, PartialEq)]
pub struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Min cost from every node to dst (over edges not banned), by Dijkstra on the
// reversed graph.
fn dist_to_target(
    graph: &impl CostGraph,
    dst: usize,
    banned_nodes: &[bool],
    banned_edges: &BTreeSet<(usize, usize)>,
) -> Vec<f64> {
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    dist[dst] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry(0.0, dst));
    while let Some(HeapEntry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for (u, w) in graph.in_neighbors(v) {
            if banned_nodes[u] || banned_edges.contains(&(u, v)) {
                continue;
            }
            let nd = w + d;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(HeapEntry(nd, u));
            }
        }
    }
    dist
}

/// Least-cost path from `src` to `dst`, lexicographically smallest (by node
/// index sequence) among all optima. Requires strictly positive edge weights.
pub fn shortest_path_lex(
    graph: &impl CostGraph,
    src: usize,
    dst: usize,
    banned_nodes: &[bool],
    banned_edges: &BTreeSet<(usize, usize)>,
) -> Option<(f64, Vec<usize>)> {
    if banned_nodes[src] || banned_nodes[dst] {
        return None;
    }
    if src == dst {
        return Some((0.0, vec![src]));
    }
    let h = dist_to_target(graph, dst, banned_nodes, banned_edges);
    if !h[src].is_finite() {
        return None;
    }
    // Greedy walk: the smallest next node that stays on an optimal path. The
    // candidate sums reproduce the exact floats Dijkstra computed, so the
    // minimum equals h[u] without an epsilon.
    let mut path = vec![src];
    let mut visited = vec![false; graph.node_count()];
    visited[src] = true;
    let mut u = src;
    while u != dst {
        let mut best: Option<(OrdF64, usize)> = None;
        for (v, w) in graph.out_neighbors(u) {
            if visited[v]
                || banned_nodes[v]
                || banned_edges.contains(&(u, v))
                || !h[v].is_finite()
            {
                continue;
            }
            let cand = (OrdF64(w + h[v]), v);
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
        let (OrdF64(c), v) = best?;
        debug_assert_eq!(c, h[u]);
        let _ = c;
        path.push(v);
        visited[v] = true;
        u = v;
    }
    Some((h[src], path))
}

fn path_cost(graph: &impl CostGraph, path: &[usize]) -> f64 {
    path.windows(2)
        .map(|w| graph.weight(w[0], w[1]).expect("edge on accepted path"))
        .sum()
}

/// Yen's k-shortest loopless paths with deterministic (cost, lexicographic)
/// ordering. Returns fewer than `k` entries when the graph runs out of
/// simple paths.
pub fn k_shortest_paths(
    graph: &impl CostGraph,
    src: usize,
    dst: usize,
    k: usize,
) -> Vec<(f64, Vec<usize>)> {
    k_shortest_paths_banned(graph, src, dst, k, &vec![false; graph.node_count()])
}

/// Yen's algorithm with a set of nodes that may never appear on any path.
pub fn k_shortest_paths_banned(
    graph: &impl CostGraph,
    src: usize,
    dst: usize,
    k: usize,
    base_banned: &[bool],
) -> Vec<(f64, Vec<usize>)> {
    let no_edges = BTreeSet::new();
    let first = match shortest_path_lex(graph, src, dst, base_banned, &no_edges) {
        Some(p) => p,
        None => return Vec::new(),
    };
    let mut accepted: Vec<(f64, Vec<usize>)> = vec![first];
    if src == dst {
        return accepted; // positive weights: no other loopless path
    }
    let mut candidates: BTreeSet<(OrdF64, Vec<usize>)> = BTreeSet::new();

    while accepted.len() < k {
        let prev = accepted.last().unwrap().1.clone();
        for i in 0..prev.len() - 1 {
            let spur = prev[i];
            let root = &prev[..=i];
            let mut banned_edges = BTreeSet::new();
            for (_, p) in &accepted {
                if p.len() > i + 1 && p[..=i] == *root {
                    banned_edges.insert((p[i], p[i + 1]));
                }
            }
            let mut banned_nodes = base_banned.to_vec();
            for &node in &root[..i] {
                banned_nodes[node] = true;
            }
            if let Some((tail_cost, tail)) =
                shortest_path_lex(graph, spur, dst, &banned_nodes, &banned_edges)
            {
                let mut cand = root[..i].to_vec();
                cand.extend(tail);
                let total = path_cost(graph, &cand[..=i]) + tail_cost;
                candidates.insert((OrdF64(total), cand));
            }
        }
        let mut next = None;
        while let Some(c) = candidates.pop_first() {
            if !accepted.iter().any(|(_, p)| *p == c.1) {
                next = Some(c);
                break;
            }
        }
        match next {
            Some((OrdF64(cost), path)) => accepted.push((cost, path)),
            None => break,
        }
    }
    accepted
}

// ---------------------------------------------------------------- statistics

/// Table-2 style statistics over unique (proto, reflex) pairs:
/// (average number of unique paths per pair, average edges per path).
pub fn path_stats(
    groups: &BTreeMap<(String, String), Vec<IntermediatePath>>,
) -> Result<(f64, f64)> {
    if groups.is_empty() {
        return Err(Error::EmptyInput("no correspondence paths".into()));
    }
    let mut n_paths = 0usize;
    let mut n_edges = 0usize;
    for ((proto, reflex), paths) in groups {
        if paths.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no paths recorded for pair {proto:?} -> {reflex:?}"
            )));
        }
        n_paths += paths.len();
        n_edges += paths.iter().map(|p| p.edges()).sum::<usize>();
    }
    Ok((
        n_paths as f64 / groups.len() as f64,
        n_edges as f64 / n_paths as f64,
    ))
}

/// Fraction of the expert's intermediate phones (path endpoints excluded)
/// that appear anywhere in the predicted paths, pooled over correspondences.
pub fn expert_path_recall(
    predicted: &BTreeMap<u32, Vec<IntermediatePath>>,
    expert: &BTreeMap<u32, Vec<IntermediatePath>>,
) -> Result<f64> {
    let pk: Vec<u32> = predicted.keys().copied().collect();
    let ek: Vec<u32> = expert.keys().copied().collect();
    if pk != ek {
        return Err(Error::Format(format!(
            "predicted and expert path sets cover different correspondences \
             (predicted {pk:?}, expert {ek:?})"
        )));
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for (id, epaths) in expert {
        let mut expert_mid: BTreeSet<&str> = BTreeSet::new();
        for p in epaths {
            for ph in p.intermediates() {
                expert_mid.insert(ph);
            }
        }
        let mut predicted_phones: BTreeSet<&str> = BTreeSet::new();
        for p in &predicted[id] {
            for ph in &p.phones {
                predicted_phones.insert(ph);
            }
        }
        total += expert_mid.len();
        hit += expert_mid
            .iter()
            .filter(|p| predicted_phones.contains(*p))
            .count();
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(hit as f64 / total as f64)
}

// ---------------------------------------------------------------- dump format

/// One row of the path dump format:
/// `corr_id<TAB>proto<TAB>reflex<TAB>phone1>phone2>...<TAB>total_cost`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub corr_id: u32,
    pub proto: String,
    pub reflex: String,
    pub path: IntermediatePath,
}

pub fn write_paths_tsv(path: impl AsRef<Path>, records: &[PathRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.corr_id,
            r.proto,
            r.reflex,
            r.path.phones.join(">"),
            r.path.total_cost
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_paths_tsv(
    path: impl AsRef<Path>,
    table: Option<&PhoneFeatureTable>,
) -> Result<Vec<PathRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_paths_tsv(&text, &path.display().to_string(), table)
}

pub fn parse_paths_tsv(
    text: &str,
    source: &str,
    table: Option<&PhoneFeatureTable>,
) -> Result<Vec<PathRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 5 {
            return Err(Error::parse(
                source,
                lineno,
                "expected corr_id<TAB>proto<TAB>reflex<TAB>path<TAB>total_cost",
            ));
        }
        let corr_id: u32 = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, lineno, "bad correspondence id"))?;
        let phones: Vec<String> = cells[3]
            .split('>')
            .map(|p| p.trim().nfd().collect::<String>())
            .collect();
        if phones.len() < 2 && phones.first().map(|p| p.as_str()) != Some(cells[1].trim()) {
            return Err(Error::parse(source, lineno, "path needs at least one edge"));
        }
        if let Some(t) = table {
            for p in &phones {
                if p != NULL_PHONE && !t.contains(p) {
                    return Err(Error::parse(
                        source,
                        lineno,
                        format!("unknown phone {p:?} on path"),
                    ));
                }
            }
        }
        let total_cost: f64 = cells[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, lineno, "bad total cost"))?;
        let proto: String = cells[1].trim().nfd().collect();
        let reflex: String = cells[2].trim().nfd().collect();
        if phones.first() != Some(&proto) || phones.last() != Some(&reflex) {
            return Err(Error::parse(
                source,
                lineno,
                "path endpoints do not match the proto/reflex columns",
            ));
        }
        out.push(PathRecord {
            corr_id,
            proto,
            reflex,
            path: IntermediatePath {
                phones,
                edge_costs: Vec::new(),
                total_cost,
            },
        });
    }
    Ok(out)
}
