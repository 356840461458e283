//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measurements. Oracles here are written against the public API only
//! and never reuse the implementation path they check.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phylophon::asli::{
    extract_base_rules, filter_laws, generalize_pair, law_stats, needleman_wunsch,
    AccuracyMode, AlignedCorpus, AlignedPair, ContextClass, ContextElem, SoundLaw,
};
use phylophon::graph::{
    build_graph, k_shortest_paths, CostGraph, ExplicitGraph, GraphConfig,
};
use phylophon::model::{
    dwfed, make_training_pair, predict, train, Hyperparams, SoundChangeRecord,
};
use phylophon::parsimony::{
    genetic_search, sankoff_score, CharacterData, SankoffCharacter, SearchParams,
};
use phylophon::phonology::{DiacriticPolicy, PhoneFeatureTable, NULL_PHONE};
use phylophon::transition::{
    build_matrix, load_correspondences, load_expert_paths, MatrixMode, ReflexCell,
    TransitionMatrix,
};
use phylophon::trees::{gqd, majority_consensus, QuartetClass, RootedTree};
use phylophon::derive_seed;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn table() -> PhoneFeatureTable {
    PhoneFeatureTable::load(data_dir().join("features.csv"), DiacriticPolicy::Pruned).unwrap()
}

// ---------------------------------------------------------------- criterion 1

// Every labeled multifurcating rooted tree over the given leaves, as Newick.
fn all_rooted_trees(labels: &[String]) -> Vec<String> {
    if labels.len() == 1 {
        return vec![labels[0].clone()];
    }
    let mut out = Vec::new();
    for partition in set_partitions(labels.len()) {
        let block_count = partition.iter().max().unwrap() + 1;
        if block_count < 2 {
            continue;
        }
        let mut blocks: Vec<Vec<String>> = vec![Vec::new(); block_count];
        for (i, b) in partition.iter().enumerate() {
            blocks[*b].push(labels[i].clone());
        }
        // cartesian product over per-block subtree choices
        let choices: Vec<Vec<String>> = blocks.iter().map(|b| all_rooted_trees(b)).collect();
        let mut combos: Vec<Vec<String>> = vec![Vec::new()];
        for c in &choices {
            let mut next = Vec::new();
            for partial in &combos {
                for item in c {
                    let mut p = partial.clone();
                    p.push(item.clone());
                    next.push(p);
                }
            }
            combos = next;
        }
        for combo in combos {
            out.push(format!("({})", combo.join(",")));
        }
    }
    out
}

// restricted-growth strings enumerate set partitions of {0..n-1}
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn go(current: &mut Vec<usize>, i: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == current.len() {
            out.push(current.clone());
            return;
        }
        for b in 0..=max + 1 {
            current[i] = b;
            go(current, i + 1, max.max(b), out);
        }
    }
    if n > 0 {
        go(&mut current, 1, 0, &mut out);
    }
    out
}

// Exhaustive minimum over all internal-node state assignments, root fixed.
fn brute_force_sankoff(tree: &RootedTree, ch: &SankoffCharacter) -> f64 {
    let m = &ch.matrix;
    let n = m.n_states();
    let root = tree.root();
    let mut free_nodes: Vec<usize> = Vec::new();
    let mut fixed: BTreeMap<usize, usize> = BTreeMap::new();
    for u in tree.postorder() {
        if u == root {
            fixed.insert(u, m.state_index(&ch.root_state).unwrap());
        } else if let Some(label) = tree.label(u) {
            match ch.assignments.get(label).cloned().flatten() {
                Some(p) => {
                    fixed.insert(u, m.state_index(&p).unwrap());
                }
                None => free_nodes.push(u), // missing data: minimized over
            }
        } else {
            free_nodes.push(u);
        }
    }
    let mut assign = vec![0usize; free_nodes.len()];
    let mut best = f64::INFINITY;
    loop {
        let state_of = |u: usize| -> usize {
            fixed.get(&u).copied().unwrap_or_else(|| {
                assign[free_nodes.iter().position(|v| *v == u).unwrap()]
            })
        };
        let mut total = 0.0;
        for u in tree.postorder() {
            for &c in tree.children(u) {
                total += m.get(state_of(u), state_of(c));
            }
        }
        best = best.min(total);
        let mut i = 0;
        loop {
            if i == assign.len() {
                return best;
            }
            assign[i] += 1;
            if assign[i] < n {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn c01_sankoff_dp_matches_brute_force() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let labels = |n: usize| -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect::<Vec<_>>()
    };
    let mut tree_pool: Vec<RootedTree> = Vec::new();
    let four = all_rooted_trees(&labels(4));
    assert_eq!(four.len(), 26, "26 labeled rooted trees on 4 leaves");
    for n in [2usize, 3, 4] {
        for t in all_rooted_trees(&labels(n)) {
            tree_pool.push(RootedTree::parse_newick(&format!("{t};")).unwrap());
        }
    }
    // plus a seeded sample of 5-leaf trees
    let five = all_rooted_trees(&labels(5));
    for _ in 0..40 {
        let t = &five[rng.gen_range(0..five.len())];
        tree_pool.push(RootedTree::parse_newick(&format!("{t};")).unwrap());
    }

    let mut checked = 0usize;
    for _ in 0..20 {
        // random asymmetric integer matrix over up to 6 states; integer
        // costs make float sums order-independent, so equality is exact
        let n_states = rng.gen_range(2..=6);
        let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
        let mut cost = vec![0.0f64; n_states * n_states];
        for i in 0..n_states {
            for j in 0..n_states {
                if i != j {
                    cost[i * n_states + j] = rng.gen_range(1..=12) as f64;
                }
            }
        }
        let matrix = TransitionMatrix {
            corr_id: 0,
            states: states.clone(),
            cost,
            penalty: 1000.0,
            mode: MatrixMode::ExpertUnitEdges,
        };
        for tree in &tree_pool {
            let assignments: BTreeMap<String, Option<String>> = tree
                .leaf_labels()
                .iter()
                .map(|l| {
                    let v = if rng.gen_bool(0.1) {
                        None
                    } else {
                        Some(states[rng.gen_range(0..n_states)].clone())
                    };
                    (l.to_string(), v)
                })
                .collect();
            let ch = SankoffCharacter {
                corr_id: 0,
                matrix: matrix.clone(),
                assignments,
                root_state: states[rng.gen_range(0..n_states)].clone(),
            };
            let dp = sankoff_score(tree, &ch).unwrap();
            let brute = brute_force_sankoff(tree, &ch);
            assert_eq!(dp, brute, "tree {}", tree.to_newick());
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[C1] sankoff DP == brute force on {checked} tree/matrix pairs \
         (26 complete 4-leaf trees, 20 matrices) PASS in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------- criterion 2

// classify by restricting the tree to the 4 leaves and normalizing
fn restriction_oracle(tree: &RootedTree, quartet: [&str; 4]) -> QuartetClass {
    let newick = tree.to_newick();
    let keep: Vec<&str> = quartet.to_vec();
    // textually rebuild the induced subtree from the parsed structure
    fn reduce(tree: &RootedTree, u: usize, keep: &[&str]) -> Option<String> {
        if let Some(l) = tree.label(u) {
            return keep.contains(&l).then(|| l.to_string());
        }
        let kids: Vec<String> = tree
            .children(u)
            .iter()
            .filter_map(|c| reduce(tree, *c, keep))
            .collect();
        match kids.len() {
            0 => None,
            1 => Some(kids.into_iter().next().unwrap()),
            _ => Some(format!("({})", kids.join(","))),
        }
    }
    let parsed = RootedTree::parse_newick(&newick).unwrap();
    let reduced_text = format!("{};", reduce(&parsed, parsed.root(), &keep).unwrap());
    let reduced = RootedTree::parse_newick(&reduced_text).unwrap();
    // butterfly iff some internal node covers exactly two of the four leaves
    let mut pairing: Option<(Vec<String>, Vec<String>)> = None;
    for u in reduced.postorder() {
        if reduced.label(u).is_some() || u == reduced.root() {
            continue;
        }
        let mut below = Vec::new();
        fn leaves_under(t: &RootedTree, u: usize, out: &mut Vec<String>) {
            if let Some(l) = t.label(u) {
                out.push(l.to_string());
                return;
            }
            for &c in t.children(u) {
                leaves_under(t, c, out);
            }
        }
        leaves_under(&reduced, u, &mut below);
        if below.len() == 2 {
            let rest: Vec<String> = quartet
                .iter()
                .filter(|l| !below.contains(&l.to_string()))
                .map(|l| l.to_string())
                .collect();
            pairing = Some((below, rest));
            break;
        }
    }
    match pairing {
        Some((a, b)) => QuartetClass::Butterfly {
            pairing: phylophon::trees::Pairing::new(
                [a[0].as_str(), a[1].as_str()],
                [b[0].as_str(), b[1].as_str()],
            ),
        },
        None => QuartetClass::Star,
    }
}

#[test]
fn c02_quartet_classification_and_gqd() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // hand cases
    let star = RootedTree::parse_newick("(A,B,C,D);").unwrap();
    assert_eq!(
        star.classify_quartet(["A", "B", "C", "D"]).unwrap(),
        QuartetClass::Star
    );
    let balanced = RootedTree::parse_newick("((A,B),(C,D));").unwrap();
    let caterpillar = RootedTree::parse_newick("(((A,B),C),D);").unwrap();
    for t in [&balanced, &caterpillar] {
        match t.classify_quartet(["A", "B", "C", "D"]).unwrap() {
            QuartetClass::Butterfly { pairing } => {
                assert_eq!(pairing.first, ["A".to_string(), "B".to_string()]);
                assert_eq!(pairing.second, ["C".to_string(), "D".to_string()]);
            }
            other => panic!("expected butterfly, got {other:?}"),
        }
    }
    let gold = RootedTree::parse_newick("((A,B),(C,D),E);").unwrap();
    let hyp = RootedTree::parse_newick("((A,C),(B,D),E);").unwrap();
    assert_eq!(gqd(&hyp, &gold).unwrap(), 1.0);

    // oracle agreement: 1000 random quartets over 50 random trees
    let mut quartets = 0usize;
    for round in 0..50 {
        let n = 5 + round % 17; // up to 21 leaves
        let labels: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
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
                restriction_oracle(&tree, q),
                "tree {} quartet {q:?}",
                tree.to_newick()
            );
            quartets += 1;
        }
    }
    assert_eq!(quartets, 1000);

    // self-distance is zero for 100 random trees
    for round in 0..100 {
        let n = 4 + round % 18;
        let labels: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
        let tree = RootedTree::random_binary(&labels, &mut rng).unwrap();
        assert_eq!(gqd(&tree, &tree).unwrap(), 0.0);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "[C2] quartet classifier == restriction oracle on 1000 quartets, \
         gqd(T,T)=0 on 100 trees, hand cases exact PASS in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn c03_bce_gradients_match_central_differences() {
    let t = table();
    let records: Vec<SoundChangeRecord> = [("t", "d"), ("p", "f"), ("k", "x"), ("a", "e"), ("s", "ʃ")]
        .into_iter()
        .flat_map(|(s, d)| {
            std::iter::repeat_with(move || SoundChangeRecord {
                source: s.into(),
                target: d.into(),
                family: "syn".into(),
            })
            .take(4)
        })
        .collect();
    let hp = Hyperparams {
        epochs: 2,
        ..Hyperparams::default()
    };
    let mut model = train(&records, &t, &hp).unwrap();

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for r in &records[..8] {
        let (x, y) = make_training_pair(r, &t).unwrap();
        inputs.push(x.as_f64());
        targets.push(y.bits().iter().map(|b| *b as f64).collect::<Vec<f64>>());
    }
    let analytic = model.flat_gradients(&inputs, &targets);
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let idx = rng.gen_range(0..model.param_count());
        let orig = model.get_param(idx);
        model.set_param(idx, orig + h);
        let lp = model.loss_on(&inputs, &targets);
        model.set_param(idx, orig - h);
        let lm = model.loss_on(&inputs, &targets);
        model.set_param(idx, orig);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = numeric.abs().max(analytic[idx].abs()).max(1e-8);
        let rel = (numeric - analytic[idx]).abs() / denom;
        worst = worst.max(rel);
        assert!(rel < 1e-4, "coordinate {idx}: relative error {rel}");
    }
    println!("[C3] analytic BCE gradient vs central differences: worst relative error {worst:.2e} < 1e-4 PASS");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn c04_synthetic_directionality() {
    let t = table();
    let records: Vec<SoundChangeRecord> = (0..200)
        .map(|_| SoundChangeRecord {
            source: "t".into(),
            target: "d".into(),
            family: "syn".into(),
        })
        .collect();
    let hp = Hyperparams::default(); // seed 411, 25 epochs
    let a = train(&records, &t, &hp).unwrap();
    let b = train(&records, &t, &hp).unwrap();
    // bitwise determinism via the serialized form
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    a.write_file(&pa).unwrap();
    b.write_file(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    let voi = t.feature_index("voi").unwrap();
    let p_up = predict(&a, "t", &t).unwrap()[2 * voi];
    assert!(p_up > 0.9, "P(voice up | t) = {p_up}");
    let td = dwfed(&a, &t, "t", "d").unwrap();
    let dt = dwfed(&a, &t, "d", "t").unwrap();
    assert!(td < dt, "dwfed(t,d)={td} !< dwfed(d,t)={dt}");
    println!(
        "[C4] 200x t->d corpus: P(voice up|t)={p_up:.4} > 0.9, dwfed(t,d)={td:.4} < dwfed(d,t)={dt:.4}, seed-411 bitwise stable PASS"
    );
}

// ---------------------------------------------------------------- criterion 5

fn enumerate_best(g: &ExplicitGraph, src: usize, dst: usize) -> Option<f64> {
    fn go(
        g: &ExplicitGraph,
        u: usize,
        dst: usize,
        visited: &mut Vec<bool>,
        cost: f64,
        best: &mut Option<f64>,
    ) {
        if u == dst {
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for (v, w) in g.out_neighbors(u) {
            if !visited[v] {
                visited[v] = true;
                go(g, v, dst, visited, cost + w, best);
                visited[v] = false;
            }
        }
    }
    let mut best = None;
    let mut visited = vec![false; g.node_count()];
    visited[src] = true;
    go(g, src, dst, &mut visited, 0.0, &mut best);
    best
}

#[test]
fn c05_shortest_paths_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut compared = 0usize;
    for _ in 0..20 {
        let mut g = ExplicitGraph::new(8);
        for u in 0..8 {
            for v in 0..8 {
                if u != v && rng.gen_bool(0.4) {
                    // integer weights keep float sums exact
                    g.add_edge(u, v, rng.gen_range(1..=16) as f64);
                }
            }
        }
        for (src, dst) in [(0, 7), (3, 4), (6, 1)] {
            let fast = k_shortest_paths(&g, src, dst, 1)
                .first()
                .map(|(c, _)| *c);
            let slow = enumerate_best(&g, src, dst);
            assert_eq!(fast, slow);
            compared += 1;
        }
    }
    println!("[C5] Dijkstra == exhaustive simple-path enumeration on 20 random 8-node digraphs ({compared} queries, exact) PASS");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn c06_alignment_matches_exhaustive_minimum() {
    let t = table();
    let phones = ["p", "b", "t", "k", "s", "m", "n", "a", "e", "i", "o", "u"];
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    fn brute(p: &[String], d: &[String], t: &PhoneFeatureTable, i: usize, j: usize) -> f64 {
        if i == p.len() {
            return (d.len() - j) as f64;
        }
        if j == d.len() {
            return (p.len() - i) as f64;
        }
        let sub = t.fed_aligned(&p[i], &d[j]).unwrap() + brute(p, d, t, i + 1, j + 1);
        let del = 1.0 + brute(p, d, t, i + 1, j);
        let ins = 1.0 + brute(p, d, t, i, j + 1);
        sub.min(del).min(ins)
    }

    for _ in 0..100 {
        let lp = rng.gen_range(1..=5);
        let ld = rng.gen_range(1..=5);
        let proto: Vec<String> = (0..lp)
            .map(|_| phones[rng.gen_range(0..phones.len())].to_string())
            .collect();
        let daughter: Vec<String> = (0..ld)
            .map(|_| phones[rng.gen_range(0..phones.len())].to_string())
            .collect();
        let fast = needleman_wunsch(&proto, &daughter, &t).unwrap().total_cost;
        let slow = brute(&proto, &daughter, &t, 0, 0);
        assert!(
            (fast - slow).abs() < 1e-12,
            "{proto:?} vs {daughter:?}: {fast} != {slow}"
        );
    }
    println!("[C6] NW alignment cost == exhaustive minimum on 100 random pairs (len <= 5) PASS");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn c07_minimal_generalization_fixture_and_filter() {
    use unicode_normalization::UnicodeNormalization;
    let t = table();
    let lit = |p: &str| ContextElem::Literal(p.to_string());
    let mk = |left: Vec<ContextElem>| SoundLaw {
        from: Some("e".into()),
        to: Some("ẽ".nfd().collect()),
        left,
        right: vec![],
        scope: 0,
        hits: 0,
        languages: Default::default(),
        per_language: Default::default(),
    };
    let gen = generalize_pair(&mk(vec![lit("n")]), &mk(vec![lit("m")]), &t, ContextClass::PairSet);
    let expected: String = "e → ẽ / (n|m) _".nfd().collect();
    assert_eq!(gen.to_string(), expected);

    // property: no law with pooled accuracy <= 0.6 survives the pooled filter
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let vocab = ["t", "k", "s", "a", "i", "u", "n"];
    let mut checked = 0usize;
    for _ in 0..30 {
        // random corpus of t -> {d or t} outcomes in random contexts
        let mut corpus = AlignedCorpus::default();
        let n_pairs = rng.gen_range(2..=6);
        for i in 0..n_pairs {
            let ctx = vocab[rng.gen_range(0..vocab.len())];
            let out = if rng.gen_bool(0.5) { "d" } else { "t" };
            let proto = vec!["t".to_string(), ctx.to_string()];
            let daughter = vec![out.to_string(), ctx.to_string()];
            corpus.pairs.push(AlignedPair {
                cogid: format!("c{i}"),
                language: format!("L{}", i % 3),
                alignment: needleman_wunsch(&proto, &daughter, &t).unwrap(),
            });
        }
        let mut laws: Vec<SoundLaw> = corpus
            .pairs
            .iter()
            .flat_map(|p| extract_base_rules(&p.alignment, &p.language))
            .collect();
        for law in laws.iter_mut() {
            law_stats(law, &corpus);
        }
        let kept = filter_laws(laws, 0.6, AccuracyMode::Pooled);
        for law in &kept {
            assert!(law.scope > 0);
            let acc = law.hits as f64 / law.scope as f64;
            assert!(acc > 0.6, "law {law} with accuracy {acc} survived");
            checked += 1;
        }
    }
    println!(
        "[C7] nasal-context law pair generalizes to \"{expected}\" verbatim; \
         accuracy filter property held on 30 random corpora ({checked} retained laws) PASS"
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn c08_indel_multiplier_contract() {
    let t = table();
    let graph = build_graph(None, &t, GraphConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let inventory = t.inventory();
    let mut checked = Vec::new();
    while checked.len() < 20 {
        let p = inventory[rng.gen_range(0..inventory.len())];
        if checked.contains(&p) {
            continue;
        }
        let ins = graph.weight_by_name(NULL_PHONE, p).unwrap();
        let del = graph.weight_by_name(p, NULL_PHONE).unwrap();
        assert!(
            (ins / del - 1.5).abs() < 1e-12,
            "{p}: insertion/deletion = {}",
            ins / del
        );
        checked.push(p);
    }
    // no substitution query's best path traverses the null phone
    let mut queries = 0usize;
    for _ in 0..25 {
        let a = inventory[rng.gen_range(0..inventory.len())];
        let b = inventory[rng.gen_range(0..inventory.len())];
        if a == b {
            continue;
        }
        for path in graph.shortest_paths(a, b, 2).unwrap() {
            assert!(
                !path.phones.iter().any(|p| p == NULL_PHONE),
                "{a}->{b} routed through the null phone"
            );
        }
        queries += 1;
    }
    println!(
        "[C8] w(null->a)/w(a->null) = 15/10 on 20 phones; no null transit in {queries} substitution queries PASS"
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn c09_pipeline_stages_are_byte_stable() {
    let bin = env!("CARGO_BIN_EXE_phylophon");
    let dir = tempfile::tempdir().unwrap();
    let d = data_dir();
    let features = d.join("features.csv");
    let changes = d.join("soundchanges_sample.tsv");
    let corrs = d.join("synthetic8/correspondences.tsv");
    let epaths = d.join("synthetic8/paths.tsv");
    let cognates = d.join("synthetic8/cognates.tsv");
    let gold = d.join("synthetic8/gold.nwk");

    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "command {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let path = |name: &str| dir.path().join(name).display().to_string();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();

    let mut stages = 0usize;
    // train twice: byte-identical model and loss curve
    for tag in ["a", "b"] {
        run(&[
            "train",
            "--features", features.to_str().unwrap(),
            "--changes", changes.to_str().unwrap(),
            "--epochs", "5",
            "--out", &path(&format!("model_{tag}.bin")),
            "--loss-curve", &path(&format!("loss_{tag}.tsv")),
        ]);
    }
    assert_eq!(read("model_a.bin"), read("model_b.bin"));
    assert_eq!(read("loss_a.tsv"), read("loss_b.tsv"));
    stages += 1;

    // paths twice
    for tag in ["a", "b"] {
        run(&[
            "paths",
            "--features", features.to_str().unwrap(),
            "--correspondences", corrs.to_str().unwrap(),
            "--model", &path("model_a.bin"),
            "--out", &path(&format!("paths_{tag}.tsv")),
        ]);
    }
    assert_eq!(read("paths_a.tsv"), read("paths_b.tsv"));
    stages += 1;

    // matrices twice
    for tag in ["a", "b"] {
        run(&[
            "matrix",
            "--features", features.to_str().unwrap(),
            "--correspondences", corrs.to_str().unwrap(),
            "--paths", epaths.to_str().unwrap(),
            "--mode", "unit",
            "--out-dir", &path(&format!("mats_{tag}")),
        ]);
    }
    for entry in std::fs::read_dir(dir.path().join("mats_a")).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue; // timestamps live only in the manifest
        }
        assert_eq!(
            std::fs::read(dir.path().join("mats_a").join(&name)).unwrap(),
            std::fs::read(dir.path().join("mats_b").join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
    stages += 1;

    // infer twice (expert mode, small budget)
    for tag in ["a", "b"] {
        run(&[
            "infer",
            "--features", features.to_str().unwrap(),
            "--correspondences", corrs.to_str().unwrap(),
            "--mode", "expert",
            "--paths", epaths.to_str().unwrap(),
            "--runs", "2",
            "--budget", "600",
            "--out-dir", &path(&format!("run_{tag}")),
        ]);
    }
    for name in ["run_01.nwk", "run_02.nwk", "run_01_archive.nwk", "scores.tsv"] {
        assert_eq!(
            std::fs::read(dir.path().join("run_a").join(name)).unwrap(),
            std::fs::read(dir.path().join("run_b").join(name)).unwrap(),
            "{name} differs"
        );
    }
    stages += 1;

    // consensus twice
    for tag in ["a", "b"] {
        run(&[
            "consensus",
            "--trees", &path("run_a/run_01.nwk"), &path("run_a/run_02.nwk"),
            "--out", &path(&format!("cons_{tag}.nwk")),
        ]);
    }
    assert_eq!(read("cons_a.nwk"), read("cons_b.nwk"));
    stages += 1;

    // gqd twice
    for tag in ["a", "b"] {
        run(&[
            "gqd",
            "--gold", gold.to_str().unwrap(),
            "--hyp", &path("run_a/run_01.nwk"),
            "--out", &path(&format!("gqd_{tag}.tsv")),
        ]);
    }
    assert_eq!(read("gqd_a.tsv"), read("gqd_b.tsv"));
    stages += 1;

    // asli twice
    for tag in ["a", "b"] {
        run(&[
            "asli",
            "--features", features.to_str().unwrap(),
            "--cognates", cognates.to_str().unwrap(),
            "--out-dir", &path(&format!("asli_{tag}")),
        ]);
    }
    for name in ["laws.tsv", "innovations.tsv", "cognacy.tsv", "correspondences.tsv"] {
        assert_eq!(
            std::fs::read(dir.path().join("asli_a").join(name)).unwrap(),
            std::fs::read(dir.path().join("asli_b").join(name)).unwrap(),
            "{name} differs"
        );
    }
    stages += 1;

    // baseline twice
    for tag in ["a", "b"] {
        run(&[
            "baseline",
            "--kind", "cognacy",
            "--matrix", &path("asli_a/cognacy.tsv"),
            "--budget", "600",
            "--out", &path(&format!("base_{tag}.nwk")),
        ]);
    }
    assert_eq!(read("base_a.nwk"), read("base_b.nwk"));
    stages += 1;

    println!("[C9] all {stages} pipeline stages byte-identical on rerun (manifest timestamps excluded) PASS");
}

// ---------------------------------------------------------------- criterion 10

fn synthetic8_characters() -> (Vec<CharacterData>, Vec<String>) {
    let t = table();
    let (corrs, languages) =
        load_correspondences(data_dir().join("synthetic8/correspondences.tsv"), Some(&t))
            .unwrap();
    let grouped = load_expert_paths(data_dir().join("synthetic8/paths.tsv"), &t).unwrap();
    let characters: Vec<CharacterData> = corrs
        .iter()
        .map(|corr| {
            let matrix = build_matrix(
                corr,
                &grouped[&corr.id],
                MatrixMode::ExpertUnitEdges,
                None,
            )
            .unwrap();
            let assignments: BTreeMap<String, Option<String>> = corr
                .reflexes
                .iter()
                .map(|(l, c)| {
                    (
                        l.clone(),
                        match c {
                            ReflexCell::Phone(p) => Some(p.clone()),
                            ReflexCell::Missing => None,
                        },
                    )
                })
                .collect();
            CharacterData::Sankoff(SankoffCharacter {
                corr_id: corr.id,
                matrix,
                assignments,
                root_state: corr.proto.clone(),
            })
        })
        .collect();
    (characters, languages)
}

#[test]
fn c10_bundled_family_is_recovered() {
    let started = Instant::now();
    let (characters, languages) = synthetic8_characters();
    let gold =
        RootedTree::parse_newick(std::fs::read_to_string(data_dir().join("synthetic8/gold.nwk"))
            .unwrap()
            .trim())
        .unwrap();

    let master = 411u64;
    let mut gqds = Vec::new();
    for run in 1..=10 {
        let params = SearchParams {
            budget: 10_000,
            seed: derive_seed(master, &format!("run-{run}")),
            ..SearchParams::default()
        };
        let state = genetic_search(&characters, &languages, &params).unwrap();
        assert_eq!(state.evaluated, 10_000);
        let tree = if state.archive.len() == 1 {
            state.archive[0].clone()
        } else {
            majority_consensus(&state.archive, 0.5).unwrap()
        };
        gqds.push(gqd(&tree, &gold).unwrap());
    }
    let min = gqds.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = gqds.iter().sum::<f64>() / gqds.len() as f64;
    assert_eq!(min, 0.0, "per-run GQDs: {gqds:?}");
    println!(
        "[C10] bundled 8-language family: min GQD over 10 runs = 0.000 (mean {mean:.3}) PASS in {:.2?}",
        started.elapsed()
    );
}

// ---------------------------------------------------------------- criterion 11

#[test]
fn c11_runtime_envelope() {
    let t = table();
    let (corrs, languages) =
        load_correspondences(data_dir().join("synthetic21/correspondences.tsv"), Some(&t))
            .unwrap();
    assert_eq!(languages.len(), 21);
    assert_eq!(corrs.len(), 33);
    let grouped = load_expert_paths(data_dir().join("synthetic21/paths.tsv"), &t).unwrap();
    let characters: Vec<CharacterData> = corrs
        .iter()
        .map(|corr| {
            let matrix =
                build_matrix(corr, &grouped[&corr.id], MatrixMode::ExpertUnitEdges, None)
                    .unwrap();
            let assignments: BTreeMap<String, Option<String>> = corr
                .reflexes
                .iter()
                .map(|(l, c)| {
                    (
                        l.clone(),
                        match c {
                            ReflexCell::Phone(p) => Some(p.clone()),
                            ReflexCell::Missing => None,
                        },
                    )
                })
                .collect();
            CharacterData::Sankoff(SankoffCharacter {
                corr_id: corr.id,
                matrix,
                assignments,
                root_state: corr.proto.clone(),
            })
        })
        .collect();

    // one full run: 21 leaves, 33 characters, 10k trees
    let one = Instant::now();
    let state = genetic_search(
        &characters,
        &languages,
        &SearchParams {
            budget: 10_000,
            seed: 411,
            ..SearchParams::default()
        },
    )
    .unwrap();
    let one_elapsed = one.elapsed();
    assert_eq!(state.evaluated, 10_000);
    assert!(
        one_elapsed.as_secs_f64() < 300.0,
        "single run took {one_elapsed:?}"
    );

    // ten runs, parallel over runs
    use rayon::prelude::*;
    let ten = Instant::now();
    let results: Vec<_> = (1..=10u64)
        .into_par_iter()
        .map(|run| {
            genetic_search(
                &characters,
                &languages,
                &SearchParams {
                    budget: 10_000,
                    seed: derive_seed(411, &format!("run-{run}")),
                    ..SearchParams::default()
                },
            )
        })
        .collect::<phylophon::Result<Vec<_>>>()
        .unwrap();
    let ten_elapsed = ten.elapsed();
    assert_eq!(results.len(), 10);
    assert!(
        ten_elapsed.as_secs_f64() < 1800.0,
        "ten runs took {ten_elapsed:?}"
    );
    println!(
        "[C11] 21 leaves x 33 characters x 10k trees: single run {one_elapsed:.2?} (< 5 min), ten runs {ten_elapsed:.2?} (< 30 min) PASS"
    );
}
