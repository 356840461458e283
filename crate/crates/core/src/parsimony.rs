//! Directed Sankoff parsimony over per-correspondence transition matrices,
//! Fitch/Wagner scoring for binary characters, and a seeded genetic search
//! over rooted binary tree topologies.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::transition::TransitionMatrix;
use crate::trees::RootedTree;

/// One correspondence as a parsimony character: its transition matrix, the
/// observed reflex per language (None = missing data), and the root fixed at
/// the reconstructed proto-phoneme.
#[derive(Debug, Clone)]
pub struct SankoffCharacter {
    pub corr_id: u32,
    pub matrix: TransitionMatrix,
    pub assignments: BTreeMap<String, Option<String>>,
    pub root_state: String,
}

/// One 0/1 column (None = missing) with symmetric unit change cost and a
/// free root state.
#[derive(Debug, Clone)]
pub struct BinaryCharacter {
    pub id: String,
    pub cells: BTreeMap<String, Option<bool>>,
}

#[derive(Debug, Clone)]
pub enum CharacterData {
    Sankoff(SankoffCharacter),
    Binary(BinaryCharacter),
}

/// Bottom-up Sankoff DP. Leaves observe their assigned state (missing data
/// is a free leaf); the returned cost is the root vector at the fixed
/// proto-phoneme state, which is what makes the scoring directional.
pub fn sankoff_score(tree: &RootedTree, character: &SankoffCharacter) -> Result<f64> {
    let m = &character.matrix;
    let n = m.n_states();
    let root_idx = m.state_index(&character.root_state).ok_or_else(|| {
        Error::Correspondence {
            corr_id: character.corr_id,
            msg: format!(
                "root state {:?} is not among the matrix states",
                character.root_state
            ),
        }
    })?;

    let mut cost: Vec<Vec<f64>> = vec![Vec::new(); tree.node_count()];
    for u in tree.postorder() {
        if tree.is_leaf(u) {
            let label = tree.label(u).expect("leaves are labeled");
            let observed = character.assignments.get(label).cloned().flatten();
            cost[u] = match observed {
                None => vec![0.0; n], // missing data: uninformative leaf
                Some(phone) => {
                    let idx = m.state_index(&phone).ok_or_else(|| {
                        Error::StateNotInMatrix {
                            language: label.to_string(),
                            phone: phone.clone(),
                        }
                    })?;
                    let mut v = vec![f64::INFINITY; n];
                    v[idx] = 0.0;
                    v
                }
            };
        } else {
            let mut v = vec![0.0; n];
            for &child in tree.children(u) {
                let cv = &cost[child];
                for (s, vs) in v.iter_mut().enumerate() {
                    let mut best = f64::INFINITY;
                    for (c, cc) in cv.iter().enumerate() {
                        let through = m.get(s, c) + cc;
                        if through < best {
                            best = through;
                        }
                    }
                    *vs += best;
                }
            }
            cost[u] = v;
        }
    }
    Ok(cost[tree.root()][root_idx])
}

/// Fitch small-parsimony change count for a 0/1 character on a rooted binary
/// tree (root state free, symmetric unit costs). Non-binary trees fall back
/// to the equivalent Sankoff computation.
pub fn binary_parsimony_score(tree: &RootedTree, character: &BinaryCharacter) -> Result<u32> {
    if !tree.is_binary() {
        return Ok(binary_sankoff(tree, character) as u32);
    }
    let mut state: Vec<u8> = vec![0; tree.node_count()];
    let mut changes = 0u32;
    for u in tree.postorder() {
        if tree.is_leaf(u) {
            let label = tree.label(u).expect("leaves are labeled");
            state[u] = match character.cells.get(label).copied().flatten() {
                Some(false) => 0b01,
                Some(true) => 0b10,
                None => 0b11,
            };
        } else {
            let kids = tree.children(u);
            let (a, b) = (state[kids[0]], state[kids[1]]);
            let inter = a & b;
            state[u] = if inter != 0 {
                inter
            } else {
                changes += 1;
                a | b
            };
        }
    }
    Ok(changes)
}

// Sankoff with the symmetric unit 2-state matrix and a free root.
fn binary_sankoff(tree: &RootedTree, character: &BinaryCharacter) -> f64 {
    let mut cost: Vec<[f64; 2]> = vec![[0.0; 2]; tree.node_count()];
    for u in tree.postorder() {
        if tree.is_leaf(u) {
            let label = tree.label(u).expect("leaves are labeled");
            cost[u] = match character.cells.get(label).copied().flatten() {
                Some(false) => [0.0, f64::INFINITY],
                Some(true) => [f64::INFINITY, 0.0],
                None => [0.0, 0.0],
            };
        } else {
            let mut v = [0.0; 2];
            for &child in tree.children(u) {
                let cv = cost[child];
                for (s, vs) in v.iter_mut().enumerate() {
                    let stay = cv[s];
                    let flip = cv[1 - s] + 1.0;
                    *vs += stay.min(flip);
                }
            }
            cost[u] = v;
        }
    }
    cost[tree.root()][0].min(cost[tree.root()][1])
}

/// Sum of per-character scores; characters are independent.
pub fn tree_score(tree: &RootedTree, characters: &[CharacterData]) -> Result<f64> {
    if characters.is_empty() {
        return Err(Error::EmptyInput("no characters to score".into()));
    }
    let mut total = 0.0;
    for c in characters {
        total += match c {
            CharacterData::Sankoff(s) => sankoff_score(tree, s)?,
            CharacterData::Binary(b) => binary_parsimony_score(tree, b)? as f64,
        };
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct SearchParams {
    pub population: usize,
    pub elite: usize,
    /// Fraction of each generation's offspring that are fresh random trees.
    pub exploration: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            population: 50,
            elite: 10,
            exploration: 0.2,
            budget: 10_000,
            seed: 411,
        }
    }
}

#[derive(Debug)]
pub struct SearchState {
    pub seed: u64,
    pub evaluated: usize,
    pub budget: usize,
    pub best_score: f64,
    pub initial_best_score: f64,
    /// All distinct trees that achieved the final best score.
    pub archive: Vec<RootedTree>,
    /// Best score after each generation (generation 0 = initial population).
    pub generation_best: Vec<f64>,
}

// Scores tie when they agree to within a relative epsilon; summation order
// differs between topologies, so exact equality would split true ties.
fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

struct Archive {
    best: f64,
    trees: Vec<(String, RootedTree)>,
}

impl Archive {
    fn new() -> Self {
        Archive {
            best: f64::INFINITY,
            trees: Vec::new(),
        }
    }

    fn offer(&mut self, tree: &RootedTree, score: f64) {
        if self.trees.is_empty() || (score < self.best && !ties(score, self.best)) {
            self.best = score;
            self.trees = vec![(tree.to_newick(), tree.clone())];
        } else if ties(score, self.best) {
            let key = tree.to_newick();
            if !self.trees.iter().any(|(k, _)| *k == key) {
                self.trees.push((key, tree.clone()));
            }
        }
    }
}

/// Seeded genetic search over rooted binary trees: keep the elite, refill
/// with NNI and SPR mutations of elites plus a fresh-random exploration
/// fraction, stop when the evaluation budget is spent.
pub fn genetic_search(
    characters: &[CharacterData],
    leaves: &[String],
    params: &SearchParams,
) -> Result<SearchState> {
    if leaves.len() < 4 {
        return Err(Error::InvalidArg(format!(
            "tree search needs at least 4 leaves, got {}",
            leaves.len()
        )));
    }
    if params.budget < params.population {
        return Err(Error::InvalidArg(format!(
            "budget {} is smaller than the population {}",
            params.budget, params.population
        )));
    }
    if params.elite == 0 || params.elite >= params.population {
        return Err(Error::InvalidArg(
            "elite size must be positive and smaller than the population".into(),
        ));
    }
    if !(0.0..=1.0).contains(&params.exploration) {
        return Err(Error::InvalidArg("exploration must be in [0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut archive = Archive::new();
    let mut evaluated = 0usize;

    let score_batch = |batch: &[RootedTree]| -> Result<Vec<f64>> {
        batch
            .par_iter()
            .map(|t| tree_score(t, characters))
            .collect()
    };

    let mut population: Vec<RootedTree> = Vec::with_capacity(params.population);
    for _ in 0..params.population.min(params.budget) {
        population.push(RootedTree::random_binary(leaves, &mut rng)?);
    }
    let mut scores = score_batch(&population)?;
    evaluated += population.len();
    for (t, s) in population.iter().zip(&scores) {
        archive.offer(t, *s);
    }
    let initial_best_score = archive.best;
    let mut generation_best = vec![archive.best];

    while evaluated < params.budget {
        // deterministic elite order: score, then canonical form
        let mut order: Vec<usize> = (0..population.len()).collect();
        let keys: Vec<String> = population.iter().map(|t| t.to_newick()).collect();
        order.sort_by(|a, b| {
            scores[*a]
                .total_cmp(&scores[*b])
                .then_with(|| keys[*a].cmp(&keys[*b]))
        });
        let elites: Vec<RootedTree> = order
            .iter()
            .take(params.elite)
            .map(|i| population[*i].clone())
            .collect();
        let elite_scores: Vec<f64> = order
            .iter()
            .take(params.elite)
            .map(|i| scores[*i])
            .collect();

        let fill = params.population - params.elite;
        let n_children = fill.min(params.budget - evaluated);
        let n_explore = ((fill as f64) * params.exploration).round() as usize;
        let mut children = Vec::with_capacity(n_children);
        for i in 0..n_children {
            if i < n_explore {
                children.push(RootedTree::random_binary(leaves, &mut rng)?);
            } else {
                let parent = &elites[i % elites.len()];
                let child = if i % 2 == 0 {
                    parent.nni(&mut rng)
                } else {
                    parent.spr(&mut rng)
                };
                children.push(child);
            }
        }
        let child_scores = score_batch(&children)?;
        evaluated += children.len();
        for (t, s) in children.iter().zip(&child_scores) {
            archive.offer(t, *s);
        }
        population = elites;
        scores = elite_scores;
        population.extend(children);
        scores.extend(child_scores);
        generation_best.push(archive.best);
    }

    Ok(SearchState {
        seed: params.seed,
        evaluated,
        budget: params.budget,
        best_score: archive.best,
        initial_best_score,
        archive: archive.trees.into_iter().map(|(_, t)| t).collect(),
        generation_best,
    })
}

// ---------------------------------------------------------------- binary TSV

/// Read the binary matrix format: `character<TAB>lang1<TAB>...` header, then
/// one row per character with 0/1/`-` cells. Returns the characters and the
/// language list in header order.
pub fn read_binary_matrix(
    path: impl AsRef<Path>,
) -> Result<(Vec<BinaryCharacter>, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_binary_matrix(&text, &path.display().to_string())
}

pub fn parse_binary_matrix(
    text: &str,
    source: &str,
) -> Result<(Vec<BinaryCharacter>, Vec<String>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "character" {
        return Err(Error::parse(
            source,
            1,
            "header must be character<TAB><lang1><TAB>...",
        ));
    }
    let languages: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 1 + languages.len() {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {} cells", 1 + languages.len()),
            ));
        }
        let mut row = BTreeMap::new();
        for (lang, cell) in languages.iter().zip(&cells[1..]) {
            let v = match cell.trim() {
                "0" => Some(false),
                "1" => Some(true),
                "-" => None,
                other => {
                    return Err(Error::parse(
                        source,
                        lineno,
                        format!("cell must be 0, 1 or -, found {other:?}"),
                    ))
                }
            };
            row.insert(lang.clone(), v);
        }
        out.push(BinaryCharacter {
            id: cells[0].to_string(),
            cells: row,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("no characters in {source}")));
    }
    Ok((out, languages))
}

pub fn write_binary_matrix(
    characters: &[BinaryCharacter],
    languages: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("character\t{}\n", languages.join("\t"));
    for c in characters {
        out.push_str(&c.id);
        for lang in languages {
            let cell = match c.cells.get(lang).copied().flatten() {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            out.push('\t');
            out.push_str(cell);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
