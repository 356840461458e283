//! Rooted labeled-leaf trees: Newick I/O with a canonical child order,
//! quartet classification, generalized quartet distance, majority-rule
//! consensus, and the NNI/SPR moves used by tree search.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Node {
    parent: Option<usize>,
    children: Vec<usize>,
    label: Option<String>,
}

/// Immutable rooted tree. Internal nodes are unlabeled, leaves carry unique
/// labels, no unary nodes survive construction, and children are ordered by
/// their smallest leaf label so serialization is canonical.
#[derive(Debug, Clone)]
pub struct RootedTree {
    nodes: Vec<Node>,
    root: usize,
    depth: Vec<usize>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    min_leaf: Vec<String>,
    leaf_by_label: BTreeMap<String, usize>,
}

// Mutable scratch structure used while building or rearranging.
#[derive(Debug, Clone, Default)]
pub(crate) struct Builder {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    label: Vec<Option<String>>,
}

impl Builder {
    pub(crate) fn add(&mut self, parent: Option<usize>, label: Option<String>) -> usize {
        let id = self.parent.len();
        self.parent.push(parent);
        self.children.push(Vec::new());
        self.label.push(label);
        if let Some(p) = parent {
            self.children[p].push(id);
        }
        id
    }

    fn from_tree(tree: &RootedTree) -> (Builder, usize) {
        let mut b = Builder::default();
        for n in &tree.nodes {
            b.parent.push(n.parent);
            b.children.push(n.children.clone());
            b.label.push(n.label.clone());
        }
        (b, tree.root)
    }
}

impl RootedTree {
    /// Build from scratch structure: suppresses unary chains, compacts to the
    /// part reachable from `root`, validates, and orders children canonically.
    pub(crate) fn from_builder(b: Builder, mut root: usize) -> Result<RootedTree> {
        // walk down through unary nodes at the root
        while b.children[root].len() == 1 {
            root = b.children[root][0];
        }

        let mut nodes: Vec<Node> = Vec::new();
        let mut seen_labels: BTreeSet<String> = BTreeSet::new();
        // DFS, suppressing unary internal nodes on the way
        fn copy(
            b: &Builder,
            old: usize,
            parent: Option<usize>,
            nodes: &mut Vec<Node>,
            seen: &mut BTreeSet<String>,
        ) -> Result<usize> {
            let mut cur = old;
            while b.children[cur].len() == 1 {
                cur = b.children[cur][0];
            }
            let id = nodes.len();
            nodes.push(Node {
                parent,
                children: Vec::new(),
                label: None,
            });
            if b.children[cur].is_empty() {
                let label = b.label[cur]
                    .clone()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::Format("leaf without a label".into()))?;
                if !seen.insert(label.clone()) {
                    return Err(Error::DuplicateLeaf(label));
                }
                nodes[id].label = Some(label);
            } else {
                let kids: Vec<usize> = b.children[cur].clone();
                for k in kids {
                    let kid = copy(b, k, Some(id), nodes, seen)?;
                    nodes[id].children.push(kid);
                }
            }
            Ok(id)
        }
        let new_root = copy(&b, root, None, &mut nodes, &mut seen_labels)?;
        debug_assert_eq!(new_root, 0);

        let mut tree = RootedTree {
            nodes,
            root: new_root,
            depth: Vec::new(),
            tin: Vec::new(),
            tout: Vec::new(),
            min_leaf: Vec::new(),
            leaf_by_label: BTreeMap::new(),
        };
        tree.finish();
        Ok(tree)
    }

    // Order children by smallest descendant leaf label and compute the
    // derived traversal tables.
    fn finish(&mut self) {
        let n = self.nodes.len();
        let mut min_leaf = vec![String::new(); n];
        fn compute_min(nodes: &[Node], u: usize, out: &mut Vec<String>) {
            if let Some(l) = &nodes[u].label {
                out[u] = l.clone();
                return;
            }
            let mut best: Option<String> = None;
            for &c in &nodes[u].children {
                compute_min(nodes, c, out);
                if best.as_ref().is_none_or(|b| out[c] < *b) {
                    best = Some(out[c].clone());
                }
            }
            out[u] = best.unwrap_or_default();
        }
        compute_min(&self.nodes, self.root, &mut min_leaf);
        for u in 0..n {
            let mut kids = self.nodes[u].children.clone();
            kids.sort_by(|a, b| min_leaf[*a].cmp(&min_leaf[*b]));
            self.nodes[u].children = kids;
        }

        let mut depth = vec![0usize; n];
        let mut tin = vec![0usize; n];
        let mut tout = vec![0usize; n];
        let mut leaf_by_label = BTreeMap::new();
        let mut timer = 0usize;
        let mut stack: Vec<(usize, usize, bool)> = vec![(self.root, 0, false)];
        while let Some((u, d, done)) = stack.pop() {
            if done {
                tout[u] = timer;
                timer += 1;
                continue;
            }
            depth[u] = d;
            tin[u] = timer;
            timer += 1;
            stack.push((u, d, true));
            if let Some(l) = &self.nodes[u].label {
                leaf_by_label.insert(l.clone(), u);
            }
            for &c in self.nodes[u].children.iter().rev() {
                stack.push((c, d + 1, false));
            }
        }
        self.depth = depth;
        self.tin = tin;
        self.tout = tout;
        self.min_leaf = min_leaf;
        self.leaf_by_label = leaf_by_label;
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_by_label.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.nodes[u].children
    }

    pub fn label(&self, u: usize) -> Option<&str> {
        self.nodes[u].label.as_deref()
    }

    pub fn is_leaf(&self, u: usize) -> bool {
        self.nodes[u].children.is_empty()
    }

    /// Node ids with every child before its parent.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((u, expanded)) = stack.pop() {
            if expanded {
                out.push(u);
                continue;
            }
            stack.push((u, true));
            for &c in &self.nodes[u].children {
                stack.push((c, false));
            }
        }
        out
    }

    /// Leaf labels in sorted order.
    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaf_by_label.keys().map(|s| s.as_str()).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.children.is_empty() || n.children.len() == 2)
    }

    fn leaf_node(&self, label: &str) -> Result<usize> {
        self.leaf_by_label
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLeaf(label.to_string()))
    }

    fn is_ancestor(&self, a: usize, x: usize) -> bool {
        self.tin[a] <= self.tin[x] && self.tout[x] <= self.tout[a]
    }

    fn mrca(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.nodes[a].parent.expect("non-root has parent");
            } else {
                b = self.nodes[b].parent.expect("non-root has parent");
            }
        }
        a
    }

    // ---------------------------------------------------------------- newick

    pub fn parse_newick(text: &str) -> Result<RootedTree> {
        let chars: Vec<char> = text.chars().collect();
        let mut pos = 0usize;
        let mut b = Builder::default();

        fn skip_ws(chars: &[char], pos: &mut usize) {
            while *pos < chars.len() && chars[*pos].is_whitespace() {
                *pos += 1;
            }
        }

        fn read_label(chars: &[char], pos: &mut usize) -> String {
            let start = *pos;
            while *pos < chars.len()
                && !matches!(chars[*pos], '(' | ')' | ',' | ':' | ';')
                && !chars[*pos].is_whitespace()
            {
                *pos += 1;
            }
            chars[start..*pos].iter().collect()
        }

        fn skip_branch_length(chars: &[char], pos: &mut usize) -> Result<()> {
            if *pos < chars.len() && chars[*pos] == ':' {
                *pos += 1;
                let start = *pos;
                while *pos < chars.len()
                    && (chars[*pos].is_ascii_digit()
                        || matches!(chars[*pos], '.' | '-' | '+' | 'e' | 'E'))
                {
                    *pos += 1;
                }
                if *pos == start {
                    return Err(Error::Newick {
                        pos: start,
                        msg: "expected branch length after ':'".into(),
                    });
                }
            }
            Ok(())
        }

        fn subtree(
            chars: &[char],
            pos: &mut usize,
            b: &mut Builder,
            parent: Option<usize>,
        ) -> Result<usize> {
            skip_ws(chars, pos);
            if *pos < chars.len() && chars[*pos] == '(' {
                let open = *pos;
                *pos += 1;
                let id = b.add(parent, None);
                loop {
                    subtree(chars, pos, b, Some(id))?;
                    skip_ws(chars, pos);
                    match chars.get(*pos) {
                        Some(',') => {
                            *pos += 1;
                        }
                        Some(')') => {
                            *pos += 1;
                            break;
                        }
                        _ => {
                            return Err(Error::Newick {
                                pos: open,
                                msg: "unbalanced parentheses".into(),
                            })
                        }
                    }
                }
                skip_ws(chars, pos);
                // internal label (consense support values etc.) is discarded
                let _ = read_label(chars, pos);
                skip_branch_length(chars, pos)?;
                Ok(id)
            } else {
                let at = *pos;
                let label = read_label(chars, pos);
                if label.is_empty() {
                    return Err(Error::Newick {
                        pos: at,
                        msg: "expected a leaf label".into(),
                    });
                }
                let id = b.add(parent, Some(label));
                skip_branch_length(chars, pos)?;
                Ok(id)
            }
        }

        skip_ws(&chars, &mut pos);
        if pos >= chars.len() {
            return Err(Error::Newick {
                pos,
                msg: "empty tree".into(),
            });
        }
        let root = subtree(&chars, &mut pos, &mut b, None)?;
        skip_ws(&chars, &mut pos);
        match chars.get(pos) {
            Some(';') => {}
            _ => {
                return Err(Error::Newick {
                    pos,
                    msg: "expected ';' at the end".into(),
                })
            }
        }
        pos += 1;
        skip_ws(&chars, &mut pos);
        if pos != chars.len() {
            return Err(Error::Newick {
                pos,
                msg: "trailing characters after ';'".into(),
            });
        }
        RootedTree::from_builder(b, root)
    }

    /// Canonical Newick text: children in sorted-leaf-label order, no branch
    /// lengths, semicolon-terminated.
    pub fn to_newick(&self) -> String {
        fn write(tree: &RootedTree, u: usize, out: &mut String) {
            if let Some(l) = &tree.nodes[u].label {
                out.push_str(l);
                return;
            }
            out.push('(');
            for (i, &c) in tree.nodes[u].children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write(tree, c, out);
            }
            out.push(')');
        }
        let mut out = String::new();
        write(self, self.root, &mut out);
        out.push(';');
        out
    }

    /// Indented outline of the tree for terminal inspection.
    pub fn ascii(&self) -> String {
        fn write(
            tree: &RootedTree,
            u: usize,
            prefix: &str,
            last: bool,
            is_root: bool,
            out: &mut String,
        ) {
            let connector = if is_root {
                ""
            } else if last {
                "`- "
            } else {
                "|- "
            };
            out.push_str(prefix);
            out.push_str(connector);
            match &tree.nodes[u].label {
                Some(l) => out.push_str(l),
                None => out.push('*'),
            }
            out.push('\n');
            let child_prefix = if is_root {
                String::new()
            } else {
                format!("{}{}", prefix, if last { "   " } else { "|  " })
            };
            let kids = &tree.nodes[u].children;
            for (i, &c) in kids.iter().enumerate() {
                write(tree, c, &child_prefix, i + 1 == kids.len(), false, out);
            }
        }
        let mut out = String::new();
        write(self, self.root, "", true, true, &mut out);
        out
    }

    // ---------------------------------------------------------------- quartets

    /// Classify the quartet under rooted MRCA semantics: a butterfly needs a
    /// node covering exactly two of the four leaves, which induces the 2+2
    /// pairing; otherwise the quartet is a star.
    pub fn classify_quartet(&self, labels: [&str; 4]) -> Result<QuartetClass> {
        let ids = [
            self.leaf_node(labels[0])?,
            self.leaf_node(labels[1])?,
            self.leaf_node(labels[2])?,
            self.leaf_node(labels[3])?,
        ];
        Ok(self.classify_ids(ids, labels))
    }

    fn classify_ids(&self, ids: [usize; 4], labels: [&str; 4]) -> QuartetClass {
        const PAIRINGS: [([usize; 2], [usize; 2]); 3] =
            [([0, 1], [2, 3]), ([0, 2], [1, 3]), ([0, 3], [1, 2])];
        for (pair, partner) in PAIRINGS {
            let side_clean = |p: [usize; 2], q: [usize; 2]| {
                let m = self.mrca(ids[p[0]], ids[p[1]]);
                !self.is_ancestor(m, ids[q[0]]) && !self.is_ancestor(m, ids[q[1]])
            };
            if side_clean(pair, partner) || side_clean(partner, pair) {
                return QuartetClass::Butterfly {
                    pairing: Pairing::new(
                        [labels[pair[0]], labels[pair[1]]],
                        [labels[partner[0]], labels[partner[1]]],
                    ),
                };
            }
        }
        QuartetClass::Star
    }

    // ---------------------------------------------------------------- moves

    /// Uniformly random rooted binary tree over the labels.
    pub fn random_binary(labels: &[String], rng: &mut ChaCha8Rng) -> Result<RootedTree> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("no leaf labels".into()));
        }
        let mut order: Vec<&String> = labels.iter().collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut b = Builder::default();
        let mut root = b.add(None, Some(order[0].clone()));
        for label in &order[1..] {
            let target = rng.gen_range(0..b.parent.len());
            let leaf = b.add(None, Some((*label).clone()));
            let joint = b.add(None, None);
            if target == root {
                b.parent[root] = Some(joint);
                b.parent[leaf] = Some(joint);
                b.children[joint] = vec![root, leaf];
                root = joint;
            } else {
                let p = b.parent[target].expect("non-root target");
                let slot = b.children[p]
                    .iter()
                    .position(|c| *c == target)
                    .expect("child slot");
                b.children[p][slot] = joint;
                b.parent[joint] = Some(p);
                b.parent[target] = Some(joint);
                b.parent[leaf] = Some(joint);
                b.children[joint] = vec![target, leaf];
            }
        }
        RootedTree::from_builder(b, root)
    }

    /// Nearest-neighbor interchange: swap a random grandchild with its
    /// parent's sibling. Identity on trees with no internal edge.
    pub fn nni(&self, rng: &mut ChaCha8Rng) -> RootedTree {
        let internal: Vec<usize> = (0..self.nodes.len())
            .filter(|&v| {
                self.nodes[v].parent.is_some() && !self.nodes[v].children.is_empty()
            })
            .collect();
        if internal.is_empty() {
            return self.clone();
        }
        let v = internal[rng.gen_range(0..internal.len())];
        let p = self.nodes[v].parent.unwrap();
        let siblings: Vec<usize> = self.nodes[p]
            .children
            .iter()
            .copied()
            .filter(|c| *c != v)
            .collect();
        let s = siblings[rng.gen_range(0..siblings.len())];
        let g = self.nodes[v].children[rng.gen_range(0..self.nodes[v].children.len())];

        let (mut b, root) = Builder::from_tree(self);
        let vslot = b.children[v].iter().position(|c| *c == g).unwrap();
        let pslot = b.children[p].iter().position(|c| *c == s).unwrap();
        b.children[v][vslot] = s;
        b.children[p][pslot] = g;
        b.parent[s] = Some(v);
        b.parent[g] = Some(p);
        RootedTree::from_builder(b, root).expect("NNI preserves validity")
    }

    /// Subtree prune and regraft at a random position.
    pub fn spr(&self, rng: &mut ChaCha8Rng) -> RootedTree {
        let subtree_size = {
            let mut size = vec![1usize; self.nodes.len()];
            let mut order: Vec<usize> = (0..self.nodes.len()).collect();
            order.sort_by_key(|u| std::cmp::Reverse(self.depth[*u]));
            for u in order {
                if let Some(p) = self.nodes[u].parent {
                    size[p] += size[u];
                }
            }
            size
        };
        let total = self.nodes.len();
        // pruning v removes its parent too; the rest must keep >= 2 nodes so
        // a regraft position other than the old one exists
        let candidates: Vec<usize> = (0..total)
            .filter(|&v| self.nodes[v].parent.is_some() && total - subtree_size[v] > 2)
            .collect();
        if candidates.is_empty() {
            return self.clone();
        }
        let v = candidates[rng.gen_range(0..candidates.len())];
        let p = self.nodes[v].parent.unwrap();
        let siblings: Vec<usize> = self.nodes[p]
            .children
            .iter()
            .copied()
            .filter(|c| *c != v)
            .collect();

        let (mut b, mut root) = Builder::from_tree(self);
        // detach v and dissolve p
        let s = if siblings.len() == 1 {
            let s = siblings[0];
            match b.parent[p] {
                Some(pp) => {
                    let slot = b.children[pp].iter().position(|c| *c == p).unwrap();
                    b.children[pp][slot] = s;
                    b.parent[s] = Some(pp);
                }
                None => {
                    b.parent[s] = None;
                    root = s;
                }
            }
            b.children[p].clear();
            s
        } else {
            // multifurcating parent keeps its other children
            b.children[p].retain(|c| *c != v);
            p
        };
        b.parent[v] = None;

        // regraft targets: every node left in the tree except the old position
        let mut targets = Vec::new();
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            if u != s {
                targets.push(u);
            }
            stack.extend(b.children[u].iter().copied());
        }
        targets.sort_unstable();
        if targets.is_empty() {
            return self.clone();
        }
        let w = targets[rng.gen_range(0..targets.len())];
        let joint = b.add(None, None);
        if w == root {
            b.parent[root] = Some(joint);
            b.parent[v] = Some(joint);
            b.children[joint] = vec![root, v];
            root = joint;
        } else {
            let wp = b.parent[w].unwrap();
            let slot = b.children[wp].iter().position(|c| *c == w).unwrap();
            b.children[wp][slot] = joint;
            b.parent[joint] = Some(wp);
            b.parent[w] = Some(joint);
            b.parent[v] = Some(joint);
            b.children[joint] = vec![w, v];
        }
        RootedTree::from_builder(b, root).expect("SPR preserves validity")
    }
}

/// Rooted quartet class; the pairing is present exactly for butterflies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuartetClass {
    Star,
    Butterfly { pairing: Pairing },
}

/// A 2+2 split, normalized: both sides sorted, smaller side first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub first: [String; 2],
    pub second: [String; 2],
}

impl Pairing {
    pub fn new(a: [&str; 2], b: [&str; 2]) -> Pairing {
        let mut a = [a[0].to_string(), a[1].to_string()];
        let mut b = [b[0].to_string(), b[1].to_string()];
        a.sort();
        b.sort();
        if b < a {
            std::mem::swap(&mut a, &mut b);
        }
        Pairing { first: a, second: b }
    }
}

fn common_labels(a: &RootedTree, b: &RootedTree) -> Result<Vec<String>> {
    let la: BTreeSet<&str> = a.leaf_labels().into_iter().collect();
    let lb: BTreeSet<&str> = b.leaf_labels().into_iter().collect();
    if la != lb {
        return Err(Error::LeafSetMismatch {
            only_a: la.difference(&lb).map(|s| s.to_string()).collect(),
            only_b: lb.difference(&la).map(|s| s.to_string()).collect(),
        });
    }
    Ok(la.into_iter().map(|s| s.to_string()).collect())
}

/// Generalized quartet distance: (gold butterflies - shared butterflies) /
/// gold butterflies, over all C(n,4) quartets. Stars are never penalized.
/// When the gold tree has no butterflies the distance is 0 if the hypothesis
/// has none either, and undefined (an error) otherwise.
pub fn gqd(hypothesis: &RootedTree, gold: &RootedTree) -> Result<f64> {
    let labels = common_labels(hypothesis, gold)?;
    let n = labels.len();
    let mut b_gold = 0usize;
    let mut b_hyp = 0usize;
    let mut shared = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let quartet = [
                        labels[i].as_str(),
                        labels[j].as_str(),
                        labels[k].as_str(),
                        labels[l].as_str(),
                    ];
                    let cg = gold.classify_quartet(quartet)?;
                    let ch = hypothesis.classify_quartet(quartet)?;
                    if let QuartetClass::Butterfly { .. } = ch {
                        b_hyp += 1;
                    }
                    if let QuartetClass::Butterfly { pairing: pg } = cg {
                        b_gold += 1;
                        if matches!(ch, QuartetClass::Butterfly { pairing: ph } if ph == pg) {
                            shared += 1;
                        }
                    }
                }
            }
        }
    }
    if b_gold == 0 {
        if b_hyp == 0 {
            return Ok(0.0);
        }
        return Err(Error::GqdUndefined);
    }
    Ok((b_gold - shared) as f64 / b_gold as f64)
}

/// Butterfly count over all quartets of one tree.
pub fn butterfly_count(tree: &RootedTree) -> usize {
    let labels = tree.leaf_labels();
    let n = labels.len();
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let q = [labels[i], labels[j], labels[k], labels[l]];
                    if matches!(
                        tree.classify_quartet(q).expect("own labels"),
                        QuartetClass::Butterfly { .. }
                    ) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Majority-rule consensus: keeps clades present in strictly more than
/// `threshold` of the input trees (0.5 = classic majority rule). Thresholds
/// below 0.5 fall back to greedy compatibility order.
pub fn majority_consensus(trees: &[RootedTree], threshold: f64) -> Result<RootedTree> {
    if trees.is_empty() {
        return Err(Error::EmptyInput("no trees for consensus".into()));
    }
    let universe: Vec<String> = trees[0].leaf_labels().iter().map(|s| s.to_string()).collect();
    for t in &trees[1..] {
        common_labels(&trees[0], t)?;
    }
    let label_id: BTreeMap<&str, u32> = universe
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();

    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for t in trees {
        for clade in clades_of(t, &label_id) {
            *counts.entry(clade).or_insert(0) += 1;
        }
    }

    let needed = threshold * trees.len() as f64;
    let mut retained: Vec<(usize, Vec<u32>)> = counts
        .into_iter()
        .filter(|(clade, c)| *c as f64 > needed && clade.len() < universe.len())
        .map(|(clade, c)| (c, clade))
        .collect();
    // greedy compatibility: by support then size; majority clades are always
    // mutually compatible so this only matters for sub-majority thresholds
    retained.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.len().cmp(&a.1.len()))
            .then(a.1.cmp(&b.1))
    });
    let mut kept: Vec<Vec<u32>> = Vec::new();
    'next: for (_, clade) in retained {
        for k in &kept {
            if !compatible(k, &clade) {
                continue 'next;
            }
        }
        kept.push(clade);
    }

    // build: parent of each clade is the smallest kept clade containing it
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut b = Builder::default();
    let root = b.add(None, None);
    let mut clade_node: Vec<(Vec<u32>, usize)> = Vec::new();
    for clade in &kept {
        let parent = clade_node
            .iter()
            .rev()
            .find(|(c, _)| is_subset(clade, c))
            .map(|(_, n)| *n)
            .unwrap_or(root);
        let node = b.add(Some(parent), None);
        clade_node.push((clade.clone(), node));
    }
    for (i, label) in universe.iter().enumerate() {
        let bit = i as u32;
        let parent = clade_node
            .iter()
            .rev()
            .find(|(c, _)| c.binary_search(&bit).is_ok())
            .map(|(_, n)| *n)
            .unwrap_or(root);
        b.add(Some(parent), Some(label.clone()));
    }
    RootedTree::from_builder(b, root)
}

fn clades_of(tree: &RootedTree, label_id: &BTreeMap<&str, u32>) -> Vec<Vec<u32>> {
    fn collect(
        tree: &RootedTree,
        u: usize,
        label_id: &BTreeMap<&str, u32>,
        out: &mut Vec<Vec<u32>>,
    ) -> Vec<u32> {
        if let Some(l) = &tree.nodes[u].label {
            return vec![label_id[l.as_str()]];
        }
        let mut set = Vec::new();
        for &c in &tree.nodes[u].children {
            set.extend(collect(tree, c, label_id, out));
        }
        set.sort_unstable();
        if set.len() >= 2 {
            out.push(set.clone());
        }
        set
    }
    let mut out = Vec::new();
    collect(tree, tree.root, label_id, &mut out);
    out
}

fn is_subset(a: &[u32], b: &[u32]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn compatible(a: &[u32], b: &[u32]) -> bool {
    let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
    inter == 0 || inter == a.len() || inter == b.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn t(s: &str) -> RootedTree {
        RootedTree::parse_newick(s).unwrap()
    }

    #[test]
    fn parses_and_serializes_canonically() {
        let tree = t("((A,B),C);");
        assert_eq!(tree.leaf_count(), 3);
        assert_eq!(tree.to_newick(), "((A,B),C);");
        // child order is canonicalized
        assert_eq!(t("(C,(B,A));").to_newick(), "((A,B),C);");
        // branch lengths are accepted and dropped
        assert_eq!(t("(C:0.1,(B:1,A:2):0.5);").to_newick(), "((A,B),C);");
        // unary nodes collapse
        assert_eq!(t("(((A,B)));").to_newick(), "(A,B);");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            RootedTree::parse_newick("((A,B),(A,C));"),
            Err(Error::DuplicateLeaf(_))
        ));
        assert!(matches!(
            RootedTree::parse_newick("((A,B),C;"),
            Err(Error::Newick { .. })
        ));
        assert!(matches!(
            RootedTree::parse_newick(""),
            Err(Error::Newick { .. })
        ));
        assert!(matches!(
            RootedTree::parse_newick("();"),
            Err(Error::Newick { .. }) | Err(Error::Format(_))
        ));
    }

    #[test]
    fn round_trip_random_tree_is_a_fixed_point() {
        let labels: Vec<String> = (0..21).map(|i| format!("L{i:02}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let tree = RootedTree::random_binary(&labels, &mut rng).unwrap();
            let text = tree.to_newick();
            let back = RootedTree::parse_newick(&text).unwrap();
            assert_eq!(back.to_newick(), text);
        }
    }

    #[test]
    fn quartet_hand_cases() {
        let star = t("(A,B,C,D);");
        assert_eq!(
            star.classify_quartet(["A", "B", "C", "D"]).unwrap(),
            QuartetClass::Star
        );

        let balanced = t("((A,B),(C,D));");
        assert_eq!(
            balanced.classify_quartet(["A", "B", "C", "D"]).unwrap(),
            QuartetClass::Butterfly {
                pairing: Pairing::new(["A", "B"], ["C", "D"])
            }
        );

        let caterpillar = t("(((A,B),C),D);");
        assert_eq!(
            caterpillar.classify_quartet(["A", "B", "C", "D"]).unwrap(),
            QuartetClass::Butterfly {
                pairing: Pairing::new(["A", "B"], ["C", "D"])
            }
        );

        // resolved pair under a trifurcating root
        let fork = t("((A,B),C,D);");
        assert_eq!(
            fork.classify_quartet(["A", "B", "C", "D"]).unwrap(),
            QuartetClass::Butterfly {
                pairing: Pairing::new(["A", "B"], ["C", "D"])
            }
        );

        // a triple with no internal resolution gives no 2+2 split
        let triple = t("((A,B,C),D);");
        assert_eq!(
            triple.classify_quartet(["A", "B", "C", "D"]).unwrap(),
            QuartetClass::Star
        );

        assert!(star.classify_quartet(["A", "B", "C", "X"]).is_err());
    }

    #[test]
    fn gqd_identity_and_disjoint() {
        let gold = t("((A,B),(C,D),E);");
        assert_eq!(gqd(&gold, &gold).unwrap(), 0.0);
        let hyp = t("((A,C),(B,D),E);");
        assert_eq!(gqd(&hyp, &gold).unwrap(), 1.0);
    }

    #[test]
    fn gqd_mismatched_leaves_is_an_error() {
        let a = t("((A,B),C);");
        let b = t("((A,B),D);");
        match gqd(&a, &b) {
            Err(Error::LeafSetMismatch { only_a, only_b }) => {
                assert_eq!(only_a, vec!["C".to_string()]);
                assert_eq!(only_b, vec!["D".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn star_gold_edge_case() {
        let star = t("(A,B,C,D,E);");
        assert_eq!(butterfly_count(&star), 0);
        assert_eq!(gqd(&star, &star).unwrap(), 0.0);
        let resolved = t("(((A,B),(C,D)),E);");
        assert!(matches!(gqd(&resolved, &star), Err(Error::GqdUndefined)));
    }

    #[test]
    fn star_plus_butterfly_counts_cover_all_quartets() {
        let labels: Vec<String> = (0..9).map(|i| format!("x{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let tree = RootedTree::random_binary(&labels, &mut rng).unwrap();
            let n = labels.len();
            let total = n * (n - 1) * (n - 2) * (n - 3) / 24;
            let mut stars = 0;
            let mut flies = 0;
            let ls = tree.leaf_labels();
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        for l in k + 1..n {
                            match tree.classify_quartet([ls[i], ls[j], ls[k], ls[l]]).unwrap() {
                                QuartetClass::Star => stars += 1,
                                QuartetClass::Butterfly { .. } => flies += 1,
                            }
                        }
                    }
                }
            }
            assert_eq!(stars + flies, total);
        }
    }

    // oracle: restrict the tree to the four leaves, suppress unary nodes,
    // and classify the reduced shape directly
    fn restrict_classify(tree: &RootedTree, quartet: [&str; 4]) -> QuartetClass {
        let keep: BTreeSet<&str> = quartet.into_iter().collect();
        fn reduce(
            tree: &RootedTree,
            u: usize,
            keep: &BTreeSet<&str>,
            b: &mut Builder,
        ) -> Option<usize> {
            if let Some(l) = &tree.nodes[u].label {
                if keep.contains(l.as_str()) {
                    return Some(b.add(None, Some(l.clone())));
                }
                return None;
            }
            let kids: Vec<usize> = tree.nodes[u]
                .children
                .iter()
                .filter_map(|c| reduce(tree, *c, keep, b))
                .collect();
            match kids.len() {
                0 => None,
                1 => Some(kids[0]),
                _ => {
                    let id = b.add(None, None);
                    for k in kids {
                        b.parent[k] = Some(id);
                        b.children[id].push(k);
                    }
                    Some(id)
                }
            }
        }
        let mut b = Builder::default();
        let root = reduce(tree, tree.root, &keep, &mut b).unwrap();
        let reduced = RootedTree::from_builder(b, root).unwrap();
        // shape taxonomy on 4 leaves: a butterfly needs a 2-leaf cherry whose
        // complement is the remaining pair
        let mut cherry: Option<Pairing> = None;
        for u in 0..reduced.nodes.len() {
            if reduced.nodes[u].label.is_none() && u != reduced.root {
                let mut below: Vec<&str> = Vec::new();
                for v in 0..reduced.nodes.len() {
                    if let Some(l) = &reduced.nodes[v].label {
                        if reduced.is_ancestor(u, v) {
                            below.push(l);
                        }
                    }
                }
                if below.len() == 2 {
                    let rest: Vec<&str> = quartet
                        .iter()
                        .copied()
                        .filter(|l| !below.contains(l))
                        .collect();
                    cherry = Some(Pairing::new(
                        [below[0], below[1]],
                        [rest[0], rest[1]],
                    ));
                    break;
                }
            }
        }
        match cherry {
            Some(pairing) => QuartetClass::Butterfly { pairing },
            None => QuartetClass::Star,
        }
    }

    #[test]
    fn classification_agrees_with_restriction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for round in 0..20 {
            let n = 5 + (round % 12);
            let labels: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let tree = RootedTree::random_binary(&labels, &mut rng).unwrap();
            for _ in 0..20 {
                let mut pick: Vec<&str> = Vec::new();
                while pick.len() < 4 {
                    let c = labels[rng.gen_range(0..n)].as_str();
                    if !pick.contains(&c) {
                        pick.push(c);
                    }
                }
                let q = [pick[0], pick[1], pick[2], pick[3]];
                assert_eq!(
                    tree.classify_quartet(q).unwrap(),
                    restrict_classify(&tree, q),
                    "tree {} quartet {q:?}",
                    tree.to_newick()
                );
            }
        }
    }

    #[test]
    fn gqd_stays_in_the_unit_interval() {
        let labels: Vec<String> = (0..8).map(|i| format!("g{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let a = RootedTree::random_binary(&labels, &mut rng).unwrap();
            let b = RootedTree::random_binary(&labels, &mut rng).unwrap();
            let d = gqd(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&d), "gqd {d}");
        }
    }

    #[test]
    fn consensus_hand_cases() {
        let one = t("((A,B),C);");
        assert_eq!(
            majority_consensus(std::slice::from_ref(&one), 0.5)
                .unwrap()
                .to_newick(),
            "((A,B),C);"
        );

        let trees = vec![t("((A,B),C);"), t("((A,C),B);"), t("((A,B),C);")];
        assert_eq!(
            majority_consensus(&trees, 0.5).unwrap().to_newick(),
            "((A,B),C);"
        );

        let conflict = vec![t("((A,B),(C,D));"), t("((A,C),(B,D));")];
        assert_eq!(
            majority_consensus(&conflict, 0.5).unwrap().to_newick(),
            "(A,B,C,D);"
        );
    }

    #[test]
    fn consensus_clades_really_hold_a_majority() {
        let labels: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let trees: Vec<RootedTree> = (0..5)
            .map(|_| RootedTree::random_binary(&labels, &mut rng).unwrap())
            .collect();
        let cons = majority_consensus(&trees, 0.5).unwrap();
        let label_id: BTreeMap<&str, u32> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        for clade in clades_of(&cons, &label_id) {
            if clade.len() == labels.len() {
                continue;
            }
            let support = trees
                .iter()
                .filter(|t| clades_of(t, &label_id).contains(&clade))
                .count();
            assert!(
                support * 2 > trees.len(),
                "clade {clade:?} kept with support {support}/5"
            );
        }
    }

    #[test]
    fn nni_and_spr_preserve_leaves() {
        let labels: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let tree = RootedTree::random_binary(&labels, &mut rng).unwrap();
        for _ in 0..50 {
            let a = tree.nni(&mut rng);
            assert_eq!(a.leaf_labels(), tree.leaf_labels());
            assert!(a.is_binary());
            let b = tree.spr(&mut rng);
            assert_eq!(b.leaf_labels(), tree.leaf_labels());
            assert!(b.is_binary());
        }
    }

    #[test]
    fn ascii_outline_contains_all_leaves() {
        let tree = t("((A,B),(C,D),E);");
        let art = tree.ascii();
        for l in ["A", "B", "C", "D", "E"] {
            assert!(art.contains(l));
        }
        assert!(art.contains("|-"));
    }
}
