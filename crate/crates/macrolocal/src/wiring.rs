//! Composing independent boxes into one effective box by local adaptive
//! measurement strategies, and certifying the result.
//!
//! A party's strategy for one effective setting is a decision tree: each
//! internal node measures a not-yet-measured box with some setting and
//! branches on the outcome; each leaf assigns an effective outcome label. A
//! *complete* strategy measures every box on every path and labels each leaf
//! with the full outcome tuple, so no information is discarded; any other
//! labeling is the complete one followed by an outcome identification
//! ([`coarse_grain`]).
//!
//! [`wired_certificate`] rebuilds a moment certificate for the wired behavior
//! from Gram decompositions of the per-box certificates: tensor products of
//! the per-box Gram vectors along each party's measurement paths. Same-tree
//! leaves differ at the first diverging measurement, where the per-box
//! same-setting orthogonality kills the inner product, which is exactly the
//! fixed-entry pattern the wired certificate needs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::certificates::{build_npa1_partial, row_index, verify_against, CertificateKind};
use crate::conic::{sym_eig, SymMatrix};
use crate::error::{Error, Result};
use crate::scenario::{Behavior, MarginalTables, Party, Scenario};

/// Hard cap on boxes per wiring: composite tables grow as `d^(2n)`.
pub const MAX_BOXES: usize = 4;

/// One node of a strategy tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    /// Measure `box_index` with `setting`; `children[outcome]` continues.
    Measure { box_index: usize, setting: usize, children: Vec<usize> },
    /// Stop and emit an effective outcome: the full outcome tuple for
    /// complete strategies, a single label otherwise.
    Leaf { label: Vec<usize> },
}

/// A decision tree over node indices into its own `nodes` arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTree {
    pub root: usize,
    pub nodes: Vec<TreeNode>,
}

/// A party's wiring strategy: one decision tree per effective setting.
#[derive(Debug, Clone)]
pub struct WiringStrategy {
    party: Party,
    boxes: usize,
    trees: Vec<DecisionTree>,
    complete: bool,
}

/// A root-to-leaf path: which (setting, outcome) was used on each box, and
/// the leaf's label tokens.
#[derive(Debug, Clone)]
struct MeasurementPath {
    assignment: Vec<Option<(usize, usize)>>,
    label: Vec<usize>,
}

impl WiringStrategy {
    pub fn new(party: Party, boxes: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        if boxes == 0 || trees.is_empty() {
            return Err(Error::shape("a strategy needs at least one box and one tree"));
        }
        if boxes > MAX_BOXES {
            return Err(Error::Domain(format!("wiring capped at {MAX_BOXES} boxes")));
        }
        let mut all_tuple = true;
        let mut all_single = true;
        for tree in &trees {
            for path in enumerate_paths(tree, boxes)? {
                match path.label.len() {
                    1 => all_tuple = boxes == 1 && all_tuple,
                    n if n == boxes => all_single = false,
                    _ => {
                        return Err(Error::shape(
                            "leaf labels must be a single token or the full outcome tuple",
                        ))
                    }
                }
                if path.label.len() == boxes {
                    // Tuple labels must match the path's own outcomes.
                    for (i, slot) in path.assignment.iter().enumerate() {
                        match slot {
                            Some((_, outcome)) if *outcome == path.label[i] => {}
                            _ => {
                                all_tuple = false;
                                break;
                            }
                        }
                    }
                } else {
                    all_tuple = false;
                }
            }
        }
        if !all_tuple && !all_single {
            return Err(Error::shape(
                "strategy mixes tuple-labeled and coarse-labeled leaves",
            ));
        }
        let complete = all_tuple && {
            // Every path must measure every box.
            trees.iter().try_fold(true, |acc, tree| -> Result<bool> {
                let mut ok = acc;
                for path in enumerate_paths(tree, boxes)? {
                    ok &= path.assignment.iter().all(Option::is_some);
                }
                Ok(ok)
            })?
        };
        Ok(WiringStrategy { party, boxes, trees, complete })
    }

    /// The identity strategy on one box: each effective setting measures the
    /// box with that setting and reports the outcome.
    pub fn single_box_identity(party: Party, settings: usize, outcomes: usize) -> Self {
        let trees = (0..settings)
            .map(|setting| {
                let mut nodes = Vec::with_capacity(outcomes + 1);
                let children: Vec<usize> = (1..=outcomes).collect();
                nodes.push(TreeNode::Measure { box_index: 0, setting, children });
                for outcome in 0..outcomes {
                    nodes.push(TreeNode::Leaf { label: vec![outcome] });
                }
                DecisionTree { root: 0, nodes }
            })
            .collect();
        WiringStrategy::new(party, 1, trees).expect("identity strategy is well-formed")
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn boxes(&self) -> usize {
        self.boxes
    }

    pub fn effective_settings(&self) -> usize {
        self.trees.len()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Check the trees against concrete boxes: setting ranges and arity.
    fn check_against(&self, boxes: &[Behavior]) -> Result<()> {
        if boxes.len() != self.boxes {
            return Err(Error::shape(format!(
                "strategy wired for {} boxes, got {}",
                self.boxes,
                boxes.len()
            )));
        }
        for tree in &self.trees {
            for node in &tree.nodes {
                if let TreeNode::Measure { box_index, setting, children } = node {
                    let sc = boxes[*box_index].scenario();
                    let settings = sc.settings(self.party);
                    if *setting >= settings {
                        return Err(Error::shape(format!(
                            "box {} has {} settings for party {}, strategy uses {}",
                            box_index + 1,
                            settings,
                            self.party.label(),
                            setting + 1
                        )));
                    }
                    if children.len() != sc.outcomes() {
                        return Err(Error::shape(format!(
                            "box {} has {} outcomes, node has {} branches",
                            box_index + 1,
                            sc.outcomes(),
                            children.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Effective outcome count against concrete boxes.
    fn effective_outcomes(&self, boxes: &[Behavior]) -> Result<usize> {
        if self.complete {
            return Ok(boxes.iter().map(|b| b.scenario().outcomes()).product());
        }
        let mut max_label = 0;
        for tree in &self.trees {
            for path in enumerate_paths(tree, self.boxes)? {
                max_label = max_label.max(path.label[0]);
            }
        }
        Ok(max_label + 1)
    }

    /// Effective outcome index of a path against concrete boxes.
    fn effective_label(&self, path: &MeasurementPath, boxes: &[Behavior]) -> usize {
        if self.complete {
            let mut label = 0;
            for (i, boxed) in boxes.iter().enumerate() {
                label = label * boxed.scenario().outcomes() + path.label[i];
            }
            label
        } else {
            path.label[0]
        }
    }
}

fn enumerate_paths(tree: &DecisionTree, boxes: usize) -> Result<Vec<MeasurementPath>> {
    fn walk(
        tree: &DecisionTree,
        node: usize,
        assignment: &mut Vec<Option<(usize, usize)>>,
        depth: usize,
        out: &mut Vec<MeasurementPath>,
    ) -> Result<()> {
        if depth > tree.nodes.len() {
            return Err(Error::shape("strategy tree contains a cycle"));
        }
        match tree.nodes.get(node) {
            None => Err(Error::shape(format!("tree references missing node {node}"))),
            Some(TreeNode::Leaf { label }) => {
                out.push(MeasurementPath { assignment: assignment.clone(), label: label.clone() });
                Ok(())
            }
            Some(TreeNode::Measure { box_index, setting, children }) => {
                if *box_index >= assignment.len() {
                    return Err(Error::shape(format!("box index {} out of range", box_index + 1)));
                }
                if assignment[*box_index].is_some() {
                    return Err(Error::shape(format!(
                        "box {} measured twice on one path",
                        box_index + 1
                    )));
                }
                if children.is_empty() {
                    return Err(Error::shape("measurement node with no branches"));
                }
                for (outcome, &child) in children.iter().enumerate() {
                    assignment[*box_index] = Some((*setting, outcome));
                    walk(tree, child, assignment, depth + 1, out)?;
                }
                assignment[*box_index] = None;
                Ok(())
            }
        }
    }

    let mut out = Vec::new();
    let mut assignment = vec![None; boxes];
    walk(tree, tree.root, &mut assignment, 0, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Coarse graining
// ---------------------------------------------------------------------------

/// Per-(party, setting) surjections from original outcome labels onto a
/// contiguous merged range.
#[derive(Debug, Clone)]
pub struct OutcomeMerge {
    maps_a: Vec<Vec<usize>>,
    maps_b: Vec<Vec<usize>>,
}

impl OutcomeMerge {
    pub fn new(scenario: Scenario, maps_a: Vec<Vec<usize>>, maps_b: Vec<Vec<usize>>) -> Result<Self> {
        if maps_a.len() != scenario.settings_a() || maps_b.len() != scenario.settings_b() {
            return Err(Error::shape("one merge map per setting per party"));
        }
        for map in maps_a.iter().chain(&maps_b) {
            if map.len() != scenario.outcomes() {
                return Err(Error::shape("merge map must cover every outcome"));
            }
            let top = *map.iter().max().unwrap();
            for target in 0..=top {
                if !map.contains(&target) {
                    return Err(Error::shape(format!(
                        "merge map skips label {target}: not surjective onto a contiguous range"
                    )));
                }
            }
        }
        Ok(OutcomeMerge { maps_a, maps_b })
    }

    pub fn identity(scenario: Scenario) -> Self {
        let map: Vec<usize> = (0..scenario.outcomes()).collect();
        OutcomeMerge {
            maps_a: vec![map.clone(); scenario.settings_a()],
            maps_b: vec![map; scenario.settings_b()],
        }
    }

    fn merged_outcomes(&self) -> usize {
        self.maps_a
            .iter()
            .chain(&self.maps_b)
            .map(|m| m.iter().max().unwrap() + 1)
            .max()
            .unwrap()
    }
}

/// Identify outcomes according to `merge`: merged probabilities are sums over
/// preimages. Settings whose merge needs fewer labels than the widest one are
/// padded with zero-probability outcomes so the result stays uniform.
pub fn coarse_grain(behavior: &Behavior, merge: &OutcomeMerge) -> Result<Behavior> {
    let sc = behavior.scenario();
    if merge.maps_a.len() != sc.settings_a() || merge.maps_b.len() != sc.settings_b() {
        return Err(Error::shape("merge shape does not match scenario"));
    }
    let d_new = merge.merged_outcomes().max(2);
    let out_sc = Scenario::new(sc.settings_a(), sc.settings_b(), d_new)?;
    let mut table = vec![0.0; out_sc.table_len()];
    for x in 0..sc.settings_a() {
        for y in 0..sc.settings_b() {
            for a in 0..sc.outcomes() {
                for b in 0..sc.outcomes() {
                    let idx = out_sc.index(x, y, merge.maps_a[x][a], merge.maps_b[y][b]);
                    table[idx] += behavior.prob(x, y, a, b);
                }
            }
        }
    }
    Behavior::from_table(out_sc, table)
}

// ---------------------------------------------------------------------------
// Products and wiring
// ---------------------------------------------------------------------------

/// `n` independent bipartite boxes treated as one joint system.
#[derive(Debug, Clone)]
pub struct ProductBehavior {
    boxes: Vec<Behavior>,
    marginals: Vec<MarginalTables>,
}

impl ProductBehavior {
    pub fn new(boxes: Vec<Behavior>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::shape("product of zero boxes"));
        }
        let marginals = boxes.iter().map(|b| b.marginals()).collect::<Result<_>>()?;
        Ok(ProductBehavior { boxes, marginals })
    }

    pub fn n_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn boxes(&self) -> &[Behavior] {
        &self.boxes
    }

    /// Joint probability of outcome tuples under setting tuples.
    pub fn prob(
        &self,
        settings_a: &[usize],
        settings_b: &[usize],
        outcomes_a: &[usize],
        outcomes_b: &[usize],
    ) -> f64 {
        self.boxes
            .iter()
            .enumerate()
            .map(|(i, b)| b.prob(settings_a[i], settings_b[i], outcomes_a[i], outcomes_b[i]))
            .product()
    }

    /// Marginal of a single box (the others traced out).
    pub fn box_marginal(&self, i: usize) -> &Behavior {
        &self.boxes[i]
    }
}

/// Wire independent boxes through two strategies into one effective behavior.
///
/// The joint weight of an (Alice path, Bob path) pair factors over boxes:
/// the box's joint probability where both sides measured it, the one-sided
/// marginal where only one did, and 1 where neither did.
pub fn apply_wiring(
    boxes: &[Behavior],
    strat_a: &WiringStrategy,
    strat_b: &WiringStrategy,
) -> Result<Behavior> {
    if strat_a.party() != Party::A || strat_b.party() != Party::B {
        return Err(Error::shape("strategies must be one per party, A then B"));
    }
    if strat_a.boxes() != boxes.len() || strat_b.boxes() != boxes.len() {
        return Err(Error::shape("both strategies must wire every box"));
    }
    strat_a.check_against(boxes)?;
    strat_b.check_against(boxes)?;
    let product = ProductBehavior::new(boxes.to_vec())?;

    let d_a = strat_a.effective_outcomes(boxes)?;
    let d_b = strat_b.effective_outcomes(boxes)?;
    let d_eff = d_a.max(d_b).max(2);
    let out_sc = Scenario::new(strat_a.effective_settings(), strat_b.effective_settings(), d_eff)?;
    let mut table = vec![0.0; out_sc.table_len()];

    for (x_eff, tree_a) in strat_a.trees().iter().enumerate() {
        let paths_a = enumerate_paths(tree_a, boxes.len())?;
        for (y_eff, tree_b) in strat_b.trees().iter().enumerate() {
            let paths_b = enumerate_paths(tree_b, boxes.len())?;
            for pa in &paths_a {
                let label_a = strat_a.effective_label(pa, boxes);
                for pb in &paths_b {
                    let label_b = strat_b.effective_label(pb, boxes);
                    let mut weight = 1.0;
                    for (i, boxed) in product.boxes().iter().enumerate() {
                        weight *= match (pa.assignment[i], pb.assignment[i]) {
                            (Some((xs, ao)), Some((ys, bo))) => boxed.prob(xs, ys, ao, bo),
                            (Some((xs, ao)), None) => product.marginals[i].prob_a(xs, ao),
                            (None, Some((ys, bo))) => product.marginals[i].prob_b(ys, bo),
                            (None, None) => 1.0,
                        };
                        if weight == 0.0 {
                            break;
                        }
                    }
                    table[out_sc.index(x_eff, y_eff, label_a, label_b)] += weight;
                }
            }
        }
    }

    Behavior::from_table(out_sc, table)
}

/// Build the moment certificate of the wired behavior from completed per-box
/// certificates: Gram-decompose each, tensor the vectors along each party's
/// complete measurement paths, and take inner products.
pub fn wired_certificate(
    certs: &[SymMatrix],
    boxes: &[Behavior],
    strat_a: &WiringStrategy,
    strat_b: &WiringStrategy,
) -> Result<SymMatrix> {
    if certs.len() != boxes.len() {
        return Err(Error::shape("one certificate per box"));
    }
    if !strat_a.is_complete() || !strat_b.is_complete() {
        return Err(Error::Domain(
            "wired certificates need complete strategies on both sides".into(),
        ));
    }
    strat_a.check_against(boxes)?;
    strat_b.check_against(boxes)?;

    // Precondition: every certificate verifies for its box.
    let mut grams: Vec<Vec<Vec<f64>>> = Vec::with_capacity(boxes.len());
    for (cert, boxed) in certs.iter().zip(boxes) {
        let partial = build_npa1_partial(boxed)?;
        let verdict = verify_against(partial.matrix(), cert, 1e-7)?;
        if !verdict.valid {
            return Err(Error::Validation(format!(
                "certificate does not verify for its box: fixed residual {:.3e}, min eigenvalue {:.3e}",
                verdict.worst_fixed_residual, verdict.min_eigenvalue
            )));
        }
        grams.push(sym_eig(cert)?.gram_rows());
    }

    // Vector for one complete path: tensor product over boxes of the per-box
    // Gram row at that box's (setting, outcome); identity rows when absent.
    let kron = |rows: Vec<&[f64]>| -> Vec<f64> {
        let mut acc = vec![1.0];
        for row in rows {
            let mut next = Vec::with_capacity(acc.len() * row.len());
            for &a in &acc {
                for &r in row {
                    next.push(a * r);
                }
            }
            acc = next;
        }
        acc
    };

    let identity_vec = kron(grams.iter().map(|g| g[0].as_slice()).collect());

    let party_vectors = |strategy: &WiringStrategy| -> Result<Vec<Vec<f64>>> {
        let d_eff: usize = boxes.iter().map(|b| b.scenario().outcomes()).product();
        let mut vectors = vec![Vec::new(); strategy.effective_settings() * d_eff];
        for (tree_idx, tree) in strategy.trees().iter().enumerate() {
            for path in enumerate_paths(tree, boxes.len())? {
                let label = strategy.effective_label(&path, boxes);
                let rows: Vec<&[f64]> = path
                    .assignment
                    .iter()
                    .enumerate()
                    .map(|(i, slot)| {
                        let (setting, outcome) = slot.expect("complete path measures every box");
                        let row = row_index(
                            CertificateKind::Npa1,
                            boxes[i].scenario(),
                            strategy.party(),
                            setting,
                            outcome,
                        );
                        grams[i][row].as_slice()
                    })
                    .collect();
                vectors[tree_idx * d_eff + label] = kron(rows);
            }
        }
        Ok(vectors)
    };

    let vectors_a = party_vectors(strat_a)?;
    let vectors_b = party_vectors(strat_b)?;

    let mut all = Vec::with_capacity(1 + vectors_a.len() + vectors_b.len());
    all.push(identity_vec);
    all.extend(vectors_a);
    all.extend(vectors_b);

    let n = all.len();
    let mut gamma = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| a * b).sum();
            gamma.set(i, j, dot);
        }
    }
    Ok(gamma)
}

// ---------------------------------------------------------------------------
// Text format
//
//   wiring <party> <n> <effective_settings>
//   node <setting_id> <box> <box_setting>   ids implicit by order, 0-based
//   edge <parent> <outcome> <child>
//   leaf <id> <label...>                    explicit ids, disjoint from nodes
// ---------------------------------------------------------------------------

pub fn serialize_strategy(strategy: &WiringStrategy) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "wiring {} {} {}",
        strategy.party().label(),
        strategy.boxes(),
        strategy.effective_settings()
    );
    // Global ids: measure nodes first (in emit order), then leaves.
    let mut node_lines = Vec::new();
    let mut edge_lines = Vec::new();
    let mut leaf_lines = Vec::new();
    let total_measures: usize = strategy
        .trees()
        .iter()
        .map(|t| t.nodes.iter().filter(|n| matches!(n, TreeNode::Measure { .. })).count())
        .sum();
    let mut next_measure = 0usize;
    let mut next_leaf = total_measures;
    for (tree_idx, tree) in strategy.trees().iter().enumerate() {
        let mut ids = vec![usize::MAX; tree.nodes.len()];
        // Depth-first from the root so parents are numbered before children.
        let mut stack = vec![tree.root];
        let mut order = Vec::new();
        while let Some(local) = stack.pop() {
            if ids[local] != usize::MAX {
                continue;
            }
            match &tree.nodes[local] {
                TreeNode::Measure { children, .. } => {
                    ids[local] = next_measure;
                    next_measure += 1;
                    for &c in children.iter().rev() {
                        stack.push(c);
                    }
                }
                TreeNode::Leaf { .. } => {
                    ids[local] = next_leaf;
                    next_leaf += 1;
                }
            }
            order.push(local);
        }
        for &local in &order {
            match &tree.nodes[local] {
                TreeNode::Measure { box_index, setting, children } => {
                    node_lines.push((
                        ids[local],
                        format!("node {} {} {}", tree_idx + 1, box_index + 1, setting + 1),
                    ));
                    for (outcome, &child) in children.iter().enumerate() {
                        edge_lines.push(format!("edge {} {} {}", ids[local], outcome, ids[child]));
                    }
                }
                TreeNode::Leaf { label } => {
                    let tokens: Vec<String> = label.iter().map(|l| l.to_string()).collect();
                    leaf_lines.push(format!("leaf {} {}", ids[local], tokens.join(" ")));
                }
            }
        }
    }
    node_lines.sort();
    for (_, line) in node_lines {
        let _ = writeln!(out, "{line}");
    }
    for line in edge_lines {
        let _ = writeln!(out, "{line}");
    }
    for line in leaf_lines {
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn parse_strategy(text: &str) -> Result<WiringStrategy> {
    enum Parsed {
        Measure { tree: usize, box_index: usize, setting: usize, edges: BTreeMap<usize, usize> },
        Leaf { label: Vec<usize> },
    }

    let mut header: Option<(Party, usize, usize)> = None;
    let mut nodes: BTreeMap<usize, Parsed> = BTreeMap::new();
    let mut next_node_id = 0usize;
    let mut pending_edges: Vec<(usize, usize, usize, usize)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let parse = |t: &str, what: &str| -> Result<usize> {
            t.parse().map_err(|_| Error::format(line, format!("bad {what} `{t}`")))
        };
        match tokens[0] {
            "wiring" => {
                if tokens.len() != 4 {
                    return Err(Error::format(line, "expected `wiring <party> <n> <settings>`"));
                }
                let party = match tokens[1] {
                    "A" | "a" => Party::A,
                    "B" | "b" => Party::B,
                    other => return Err(Error::format(line, format!("bad party `{other}`"))),
                };
                header = Some((party, parse(tokens[2], "box count")?, parse(tokens[3], "setting count")?));
            }
            "node" => {
                if tokens.len() != 4 {
                    return Err(Error::format(line, "expected `node <setting_id> <box> <box_setting>`"));
                }
                let tree = parse(tokens[1], "setting id")?;
                let box_index = parse(tokens[2], "box")?;
                let setting = parse(tokens[3], "box setting")?;
                if tree == 0 || box_index == 0 || setting == 0 {
                    return Err(Error::format(line, "tree, box and setting ids are 1-based"));
                }
                nodes.insert(
                    next_node_id,
                    Parsed::Measure {
                        tree: tree - 1,
                        box_index: box_index - 1,
                        setting: setting - 1,
                        edges: BTreeMap::new(),
                    },
                );
                next_node_id += 1;
            }
            "edge" => {
                if tokens.len() != 4 {
                    return Err(Error::format(line, "expected `edge <parent> <outcome> <child>`"));
                }
                pending_edges.push((
                    parse(tokens[1], "parent")?,
                    parse(tokens[2], "outcome")?,
                    parse(tokens[3], "child")?,
                    line,
                ));
            }
            "leaf" => {
                if tokens.len() < 3 {
                    return Err(Error::format(line, "expected `leaf <id> <label...>`"));
                }
                let id = parse(tokens[1], "leaf id")?;
                if nodes.contains_key(&id) {
                    return Err(Error::format(line, format!("id {id} already used")));
                }
                let label = tokens[2..]
                    .iter()
                    .map(|t| parse(t, "label"))
                    .collect::<Result<Vec<usize>>>()?;
                nodes.insert(id, Parsed::Leaf { label });
            }
            other => return Err(Error::format(line, format!("unknown directive `{other}`"))),
        }
    }

    let (party, boxes, settings) =
        header.ok_or_else(|| Error::format(0, "missing wiring header"))?;
    for (parent, outcome, child, line) in pending_edges {
        if !nodes.contains_key(&child) {
            return Err(Error::format(line, format!("edge to unknown node {child}")));
        }
        match nodes.get_mut(&parent) {
            Some(Parsed::Measure { edges, .. }) => {
                if edges.insert(outcome, child).is_some() {
                    return Err(Error::format(line, format!("duplicate edge for outcome {outcome}")));
                }
            }
            Some(Parsed::Leaf { .. }) => {
                return Err(Error::format(line, format!("node {parent} is a leaf")))
            }
            None => return Err(Error::format(line, format!("edge from unknown node {parent}"))),
        }
    }

    // Assemble one tree per effective setting; roots are the first measure
    // node declared for each tree tag.
    let mut trees = Vec::with_capacity(settings);
    for tree_tag in 0..settings {
        let root_global = nodes
            .iter()
            .find_map(|(&id, node)| match node {
                Parsed::Measure { tree, .. } if *tree == tree_tag => Some(id),
                _ => None,
            })
            .ok_or_else(|| {
                Error::format(0, format!("no nodes declared for effective setting {}", tree_tag + 1))
            })?;

        let mut local_nodes = Vec::new();
        let mut local_of: BTreeMap<usize, usize> = BTreeMap::new();
        fn copy(
            global: usize,
            nodes: &BTreeMap<usize, Parsed>,
            local_nodes: &mut Vec<TreeNode>,
            local_of: &mut BTreeMap<usize, usize>,
            depth: usize,
        ) -> Result<usize> {
            if depth > nodes.len() {
                return Err(Error::format(0, "strategy graph contains a cycle"));
            }
            if let Some(&l) = local_of.get(&global) {
                return Ok(l);
            }
            let slot = local_nodes.len();
            local_of.insert(global, slot);
            local_nodes.push(TreeNode::Leaf { label: Vec::new() }); // placeholder
            let built = match nodes.get(&global) {
                Some(Parsed::Leaf { label }) => TreeNode::Leaf { label: label.clone() },
                Some(Parsed::Measure { box_index, setting, edges, .. }) => {
                    let arity = edges.keys().max().map_or(0, |m| m + 1);
                    let mut children = Vec::with_capacity(arity);
                    for outcome in 0..arity {
                        let &child = edges.get(&outcome).ok_or_else(|| {
                            Error::format(0, format!("node {global} missing branch for outcome {outcome}"))
                        })?;
                        children.push(copy(child, nodes, local_nodes, local_of, depth + 1)?);
                    }
                    TreeNode::Measure { box_index: *box_index, setting: *setting, children }
                }
                None => return Err(Error::format(0, format!("missing node {global}"))),
            };
            local_nodes[slot] = built;
            Ok(slot)
        }
        let root = copy(root_global, &nodes, &mut local_nodes, &mut local_of, 0)?;
        trees.push(DecisionTree { root, nodes: local_nodes });
    }

    WiringStrategy::new(party, boxes, trees)
}
