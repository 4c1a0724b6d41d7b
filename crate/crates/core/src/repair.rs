//! Fixing contexts, the context (CTL) and tree transformation (TTL) models,
//! and tree-based repair of a group of buggy hunks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use hunkfix_nn::{AdamConfig, CycleConfig, CycleModel, CycleOptimizer, CycleSample, NnError, TreeMapperConfig, TreeShape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffpair::{diff, pair_subtrees, render, SubtreePair};
use crate::embed::{alpha_rename, alpha_rename_with, cosine, summarize, tree_inputs, EmbeddingTable, RenameDict, TreeSummarizer};
use crate::hunkdetect::HunkGroup;
use crate::lang::parser::PRECEDENCE;
use crate::lang::types::scope_at;
use crate::lang::{unparse, Kind, Node};
use crate::sbfl::SuspiciousnessReport;

/// Label of the leaf that stands in for a summarized subtree.
pub const SUMMARY: &str = "<summary>";
/// Floor on context components when dividing them out.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("context vector is zero")]
    ZeroContext,
    #[error("cross3 weighting needs 3-dimensional vectors, got {0}")]
    Cross3Dimension(usize),
    #[error("vector lengths differ: {0} and {1}")]
    Length(usize, usize),
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no buggy subtrees in the group")]
    NoBuggySubtrees,
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Hadamard,
    Cross3,
}

fn check_lengths(a: &[f64], b: &[f64], scheme: Scheme) -> Result<(), WeightError> {
    if a.len() != b.len() {
        return Err(WeightError::Length(a.len(), b.len()));
    }
    if scheme == Scheme::Cross3 && a.len() != 3 {
        return Err(WeightError::Cross3Dimension(a.len()));
    }
    if b.iter().all(|&x| x == 0.0) {
        return Err(WeightError::ZeroContext);
    }
    Ok(())
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn weight(node: &[f64], ctx: &[f64], scheme: Scheme) -> Result<Vec<f64>, WeightError> {
    check_lengths(node, ctx, scheme)?;
    Ok(match scheme {
        Scheme::Hadamard => node.iter().zip(ctx).map(|(a, b)| a * b).collect(),
        Scheme::Cross3 => cross(node, ctx).to_vec(),
    })
}

/// Inverse of [`weight`]. For `cross3` this is `(v × w) / (v · v)`, exact when
/// the original node vector was orthogonal to `v`.
pub fn unweight(w: &[f64], ctx: &[f64], scheme: Scheme) -> Result<Vec<f64>, WeightError> {
    check_lengths(w, ctx, scheme)?;
    Ok(match scheme {
        Scheme::Hadamard => w
            .iter()
            .zip(ctx)
            .map(|(x, &c)| {
                let c = if c.abs() < EPS { if c < 0.0 { -EPS } else { EPS } } else { c };
                x / c
            })
            .collect(),
        Scheme::Cross3 => {
            let vv: f64 = ctx.iter().map(|x| x * x).sum();
            cross(ctx, w).iter().map(|x| x / vv).collect()
        }
    })
}

/// Context used for weighting: the summary shifted by one, so that summary
/// components near zero do not erase the node vector.
pub fn weighting_context(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| 1.0 + f64::from(x)).collect()
}

fn wide(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Copy of `tree` with the node `id` replaced, or removed when `with` is `None`.
pub fn replace_subtree(tree: &Node, id: usize, with: Option<&Node>) -> Node {
    replace_many(tree, &HashMap::from([(id, with.cloned())]))
}

/// Replaces several nodes of the original tree in one pass; replacement
/// subtrees are not searched, so their ids may collide with the tree's.
pub fn replace_many(tree: &Node, with: &HashMap<usize, Option<Node>>) -> Node {
    fn go(n: &Node, with: &HashMap<usize, Option<Node>>) -> Node {
        let mut out = Node { id: n.id, kind: n.kind, label: n.label.clone(), children: Vec::with_capacity(n.children.len()), span: n.span };
        for c in &n.children {
            match with.get(&c.id) {
                Some(Some(r)) => out.children.push(r.clone()),
                Some(None) => {}
                None => out.children.push(go(c, with)),
            }
        }
        out
    }
    match with.get(&tree.id) {
        Some(Some(r)) => r.clone(),
        _ => go(tree, with),
    }
}

fn placeholder(id: usize) -> Node {
    let mut n = Node::leaf(Kind::ExprStmt, SUMMARY);
    n.id = id;
    n
}

/// A method tree with one subtree summarized, as model input.
#[derive(Debug, Clone)]
pub struct ContextTree {
    pub tree: Node,
    pub shape: TreeShape,
    pub inputs: Vec<Vec<f32>>,
    /// Post-order index of the summarized node.
    pub summary: usize,
}

impl ContextTree {
    pub fn new(tree: Node, table: &EmbeddingTable, summary_vec: &[f32]) -> Self {
        let (shape, mut inputs) = tree_inputs(&tree, table);
        let (nodes, _) = tree.postorder();
        let summary = nodes
            .iter()
            .position(|n| n.kind == Kind::ExprStmt && n.label == SUMMARY)
            .expect("context tree has a summarized node");
        inputs[summary] = summary_vec.to_vec();
        Self { tree, shape, inputs, summary }
    }

    pub fn same_shape(&self, other: &ContextTree) -> bool {
        self.shape == other.shape && self.summary == other.summary
    }
}

/// Input and output fixing contexts for one buggy/fixed subtree pair.
#[derive(Debug, Clone)]
pub struct Contexts {
    pub i3: ContextTree,
    pub o3: Option<ContextTree>,
    pub v_s: Vec<f32>,
    pub v_fixed: Option<Vec<f32>>,
}

/// Builds both contexts for `target` from alpha-renamed method versions.
/// Every other pair's buggy subtree in `before` is replaced by its fix (or
/// removed when deleted); pairs that only insert are left out.
pub fn build_contexts(
    target: &SubtreePair,
    all: &[SubtreePair],
    before: &Node,
    after: &Node,
    table: &EmbeddingTable,
    summarizer: &dyn TreeSummarizer,
) -> Option<Contexts> {
    let bid = target.buggy_id()?;
    let buggy = before.find(bid)?;
    let mut swaps: HashMap<usize, Option<Node>> = HashMap::new();
    for p in all {
        let Some(other) = p.buggy_id() else { continue };
        if other == bid || before.find(other).is_none() {
            continue;
        }
        swaps.insert(other, p.fixed_id().and_then(|f| after.find(f)).cloned());
    }
    swaps.insert(bid, Some(placeholder(bid)));
    let v_s = summarize(buggy, table, summarizer);
    let i3 = ContextTree::new(replace_many(before, &swaps), table, &v_s);
    let (o3, v_fixed) = match target.fixed_id().and_then(|f| after.find(f)) {
        Some(f) => {
            let v = summarize(f, table, summarizer);
            (Some(ContextTree::new(replace_subtree(after, f.id, Some(&placeholder(f.id))), table, &v)), Some(v))
        }
        None => (None, None),
    };
    Some(Contexts { i3, o3, v_s, v_fixed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub hidden: usize,
    /// TTL epochs.
    pub epochs: usize,
    /// CTL works on whole methods and is far costlier per epoch.
    pub ctl_epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub attention: bool,
    pub cycle: CycleConfig,
    /// Extra squared-error weight on the summarized node when training CTL.
    pub ctl_focus_weight: f64,
    pub scheme: Scheme,
    pub beam_width: usize,
    pub tokens_per_node: usize,
    pub summarizer_seed: u64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 25,
            ctl_epochs: 3,
            batch: 16,
            learning_rate: 1e-2,
            seed: 5,
            attention: true,
            cycle: CycleConfig { alpha: 0.1, ..CycleConfig::default() },
            ctl_focus_weight: 5.0,
            scheme: Scheme::Hadamard,
            beam_width: 100,
            tokens_per_node: 5,
            summarizer_seed: 3,
        }
    }
}

fn weighted_rows(tree: &Node, table: &EmbeddingTable, ctx: &[f64], scheme: Scheme) -> Result<(TreeShape, Vec<Vec<f32>>), WeightError> {
    let (shape, rows) = tree_inputs(tree, table);
    let rows = rows.iter().map(|r| weight(&wide(r), ctx, scheme).map(|w| narrow(&w))).collect::<Result<_, _>>()?;
    Ok((shape, rows))
}

/// Samples for both models.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub ctl: Vec<CycleSample<f32>>,
    pub ttl: Vec<CycleSample<f32>>,
}

/// Same-named method in another program version.
fn method_named<'a>(program: &'a Node, name: &str) -> Option<&'a Node> {
    program.methods().into_iter().find(|m| m.method_name() == name)
}

/// Adds the samples of one bug. Only update pairs train the models; TTL
/// additionally needs both sides to share a shape.
pub fn add_training_bug(
    set: &mut TrainingSet,
    buggy: &Node,
    fixed: &Node,
    table: &EmbeddingTable,
    summarizer: &dyn TreeSummarizer,
    scheme: Scheme,
) -> Result<(), WeightError> {
    let d = diff(buggy, fixed);
    let pairs = pair_subtrees(buggy, fixed, &d);
    let mut by_method: BTreeMap<String, Vec<SubtreePair>> = BTreeMap::new();
    for p in &pairs {
        if let Some(m) = p.buggy_id().and_then(|b| buggy.enclosing_method(b)) {
            by_method.entry(m.method_name().to_string()).or_default().push(p.clone());
        }
    }
    for (name, mpairs) in by_method {
        let (Some(mb), Some(ma)) = (method_named(buggy, &name), method_named(fixed, &name)) else { continue };
        let (before, dict) = alpha_rename(mb);
        let (after, _) = alpha_rename_with(ma, &dict);
        for p in &mpairs {
            if p.fixed.is_none() {
                continue;
            }
            let Some(c) = build_contexts(p, &mpairs, &before, &after, table, summarizer) else { continue };
            let (Some(o3), Some(v_fixed)) = (&c.o3, &c.v_fixed) else { continue };
            if c.i3.same_shape(o3) {
                set.ctl.push(CycleSample { shape: c.i3.shape.clone(), a: c.i3.inputs.clone(), b: o3.inputs.clone(), mask: None, focus: Some(c.i3.summary) });
            }
            let renamed = SubtreePair { buggy: before.find(p.buggy_id().unwrap()).cloned(), fixed: after.find(p.fixed_id().unwrap()).cloned() };
            if renamed.is_relabelling() {
                let (bt, ft) = (renamed.buggy.as_ref().unwrap(), renamed.fixed.as_ref().unwrap());
                let (shape, a) = weighted_rows(bt, table, &weighting_context(&c.v_s), scheme)?;
                let (_, b) = weighted_rows(ft, table, &weighting_context(v_fixed), scheme)?;
                set.ttl.push(CycleSample { shape, a, b, mask: None, focus: None });
            }
        }
    }
    Ok(())
}

pub struct RepairModels {
    pub ctl: CycleModel<f32>,
    pub ttl: CycleModel<f32>,
    pub cfg: RepairConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub ctl: Vec<f64>,
    pub ttl: Vec<f64>,
}

fn train_one(
    samples: &[CycleSample<f32>],
    mapper: TreeMapperConfig,
    cycle: CycleConfig,
    cfg: &RepairConfig,
    epochs: usize,
    seed: u64,
) -> Result<(CycleModel<f32>, Vec<f64>), NnError> {
    let mut model = CycleModel::new(mapper, cycle, seed);
    let mut opt = CycleOptimizer::new(&model, AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<CycleSample<f32>> = samples.to_vec();
    let mut history = vec![model.losses(samples)?.total];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        model.train_epoch(&order, &mut opt, cfg.batch)?;
        history.push(model.losses(samples)?.total);
    }
    Ok((model, history))
}

/// Trains CTL on context pairs and TTL on weighted subtree pairs.
pub fn train_models(set: &TrainingSet, dims: usize, cfg: RepairConfig) -> Result<(RepairModels, TrainHistory), RepairError> {
    if set.ctl.is_empty() || set.ttl.is_empty() {
        return Err(RepairError::EmptyCorpus);
    }
    let mapper = TreeMapperConfig { input: dims, hidden: cfg.hidden, attention: cfg.attention, residual: true };
    let ctl_cycle = CycleConfig { focus_weight: cfg.ctl_focus_weight, ..cfg.cycle };
    let (ctl, h_ctl) = train_one(&set.ctl, mapper, ctl_cycle, &cfg, cfg.ctl_epochs, cfg.seed)?;
    let (ttl, h_ttl) = train_one(&set.ttl, mapper, cfg.cycle, &cfg, cfg.epochs, cfg.seed + 1)?;
    Ok((RepairModels { ctl, ttl, cfg }, TrainHistory { ctl: h_ctl, ttl: h_ttl }))
}

impl RepairModels {
    pub fn save(&self, dir: &std::path::Path) -> Result<(), NnError> {
        self.ctl.save(dir, "ctl")?;
        self.ttl.save(dir, "ttl")?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("repair.json"), serde_json::to_string_pretty(&self.cfg)?)?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self, NnError> {
        let cfg: RepairConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("repair.json"))?)?;
        Ok(Self { ctl: CycleModel::load(dir, "ctl")?, ttl: CycleModel::load(dir, "ttl")?, cfg })
    }
}

/// A fixed version of one buggy statement subtree, in alpha-renamed form.
#[derive(Debug, Clone, PartialEq)]
pub struct HunkEdit {
    pub stmt_id: usize,
    pub fixed: Node,
    pub dict: RenameDict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub bug_id: String,
    pub edits: Vec<HunkEdit>,
    pub source: String,
    pub score_sum: f64,
    pub rank: usize,
}

impl Patch {
    /// Applies the edits to `program`, optionally mapping placeholders back.
    pub fn apply(&self, program: &Node, restore_names: bool) -> Node {
        let swaps: HashMap<usize, Option<Node>> = self
            .edits
            .iter()
            .map(|e| (e.stmt_id, Some(if restore_names { crate::embed::restore(&e.fixed, &e.dict) } else { e.fixed.clone() })))
            .collect();
        replace_many(program, &swaps)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rank": self.rank,
            "scoreSum": self.score_sum,
            "source": self.source,
            "perHunkEdits": self.edits.iter().map(|e| serde_json::json!({
                "stmtId": e.stmt_id,
                "method": e.dict.scope,
                "fixed": render(&crate::embed::restore(&e.fixed, &e.dict)),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Ranked options for one node: `(token, cosine similarity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeChoices {
    pub subtree: usize,
    pub node_id: usize,
    pub options: Vec<(String, f64)>,
}

/// Token classes a node label may be replaced with.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub literals: BTreeSet<String>,
    pub methods: BTreeSet<String>,
}

impl Vocabulary {
    /// Integer literals known to the embedding table or used in `program`,
    /// and the program's own methods.
    pub fn new(table: &EmbeddingTable, program: &Node) -> Self {
        let mut literals: BTreeSet<String> = table.tokens().iter().filter(|t| t.parse::<i64>().is_ok()).cloned().collect();
        let mut methods = BTreeSet::new();
        for n in program.preorder() {
            match n.kind {
                Kind::IntLit => {
                    literals.insert(n.label.clone());
                }
                Kind::Method => {
                    methods.insert(n.method_name().to_string());
                }
                _ => {}
            }
        }
        Self { literals, methods }
    }

    /// Alternatives for a node's label; `None` when the label is fixed.
    pub fn candidates(&self, n: &Node, scope: &[String]) -> Option<Vec<String>> {
        let mut out: Vec<String> = match n.kind {
            Kind::Var | Kind::Assign => scope.to_vec(),
            Kind::BinOp => PRECEDENCE.iter().flat_map(|ops| ops.iter().map(|s| s.to_string())).collect(),
            Kind::IntLit => self.literals.iter().cloned().collect(),
            Kind::BoolLit => vec!["true".into(), "false".into()],
            Kind::Call if !crate::lang::types::BUILTINS.contains(&n.label.as_str()) => self.methods.iter().cloned().collect(),
            _ => return None,
        };
        if !out.contains(&n.label) {
            out.push(n.label.clone());
        }
        Some(out)
    }
}

/// Innermost statement of `method` containing each node of `subtree`.
fn statement_of(method: &Node, subtree: &Node) -> HashMap<usize, usize> {
    let mut out = HashMap::new();
    let parents = method.parents();
    for n in subtree.preorder() {
        let mut at = n.id;
        loop {
            if method.find(at).is_some_and(|x| x.kind.is_statement()) {
                out.insert(n.id, at);
                break;
            }
            match parents.get(&at) {
                Some(&p) => at = p,
                None => break,
            }
        }
    }
    out
}

/// Top-`k` candidate tokens per decidable node of a predicted subtree.
pub fn node_choices(
    subtree_index: usize,
    subtree: &Node,
    method: &Node,
    predicted: &[Vec<f64>],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    k: usize,
) -> Vec<NodeChoices> {
    let (nodes, _) = subtree.postorder();
    let stmt = statement_of(method, subtree);
    let mut out = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        let scope: Vec<String> = stmt.get(&n.id).map(|&s| scope_at(method, s).into_iter().map(|(v, _)| v).collect()).unwrap_or_default();
        let Some(cands) = vocab.candidates(n, &scope) else { continue };
        let pred = narrow(&predicted[i]);
        let mut scored: Vec<(String, f64)> = cands.into_iter().map(|t| {
            let s = f64::from(cosine(&pred, table.get(&t)));
            (t, s)
        }).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        out.push(NodeChoices { subtree: subtree_index, node_id: n.id, options: scored });
    }
    out
}

/// Beam search over one option per list, scored by the sum of similarities.
/// Results are ordered by score descending, then by option indices.
pub fn compose(lists: &[Vec<f64>], beam: usize) -> Vec<(Vec<usize>, f64)> {
    let mut frontier: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for opts in lists {
        let mut next = Vec::with_capacity(frontier.len() * opts.len());
        for (choice, s) in &frontier {
            for (j, &o) in opts.iter().enumerate() {
                let mut c = choice.clone();
                c.push(j);
                next.push((c, s + o));
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(beam.max(1));
        frontier = next;
    }
    frontier
}

fn relabel(tree: &Node, labels: &HashMap<usize, &str>) -> Node {
    let mut out = tree.clone();
    fn go(n: &mut Node, labels: &HashMap<usize, &str>) {
        if let Some(l) = labels.get(&n.id) {
            n.label = l.to_string();
        }
        n.children.iter_mut().for_each(|c| go(c, labels));
    }
    go(&mut out, labels);
    out
}

struct Target<'a> {
    stmt: usize,
    method: String,
    renamed_method: &'a Node,
    dict: &'a RenameDict,
    buggy: Node,
}

/// Outermost statements of a group, ordered by descending suspiciousness.
pub fn group_subtrees(program: &Node, group: &HunkGroup, report: &SuspiciousnessReport) -> Vec<usize> {
    let stmts = group.statements();
    let parents = program.parents();
    let mut outer: Vec<usize> = stmts
        .iter()
        .copied()
        .filter(|&s| {
            let mut at = parents.get(&s).copied();
            while let Some(p) = at {
                if stmts.contains(&p) {
                    return false;
                }
                at = parents.get(&p).copied();
            }
            true
        })
        .collect();
    let susp = |s: usize| -> f64 {
        program.find(s).map_or(0.0, |n| n.statements().iter().map(|x| report.score(x.id)).fold(0.0, f64::max))
    };
    outer.sort_by(|&a, &b| susp(b).total_cmp(&susp(a)).then(a.cmp(&b)));
    outer
}

/// Frozen models plus what inference needs to embed trees.
pub struct Repairer<'a> {
    pub models: &'a RepairModels,
    pub table: &'a EmbeddingTable,
    pub summarizer: &'a dyn TreeSummarizer,
}

impl Repairer<'_> {
    /// TTL output for one target, unweighted with the CTL-predicted summary.
    fn predict(&self, t: &Target<'_>, current: &HashMap<usize, Node>) -> Result<Vec<Vec<f64>>, RepairError> {
        let scheme = self.models.cfg.scheme;
        let mut swaps: HashMap<usize, Option<Node>> = current
            .iter()
            .filter(|(&other, _)| other != t.stmt && t.renamed_method.find(other).is_some())
            .map(|(&other, fix)| (other, Some(fix.clone())))
            .collect();
        swaps.insert(t.stmt, Some(placeholder(t.stmt)));
        let v = summarize(&t.buggy, self.table, self.summarizer);
        let ctx = ContextTree::new(replace_many(t.renamed_method, &swaps), self.table, &v);
        let mapped = self.models.ctl.predict(&ctx.shape, &ctx.inputs)?;
        let v_fixed = &mapped[ctx.summary];
        let (shape, rows) = weighted_rows(&t.buggy, self.table, &weighting_context(&v), scheme)?;
        let out = self.models.ttl.predict(&shape, &rows)?;
        let back = weighting_context(v_fixed);
        Ok(out.iter().map(|r| unweight(&wide(r), &back, scheme)).collect::<Result<_, _>>()?)
    }

    /// Candidate patches for one hunk group, best first.
    pub fn repair_group(
        &self,
        bug_id: &str,
        program: &Node,
        group: &HunkGroup,
        report: &SuspiciousnessReport,
    ) -> Result<Vec<Patch>, RepairError> {
        let cfg = self.models.cfg;
        let stmts = group_subtrees(program, group, report);
        if stmts.is_empty() {
            return Err(RepairError::NoBuggySubtrees);
        }
        let mut renamed: BTreeMap<String, (Node, RenameDict)> = BTreeMap::new();
        for &s in &stmts {
            let m = program.enclosing_method(s).ok_or(RepairError::NoBuggySubtrees)?;
            renamed.entry(m.method_name().to_string()).or_insert_with(|| alpha_rename(m));
        }
        let targets: Vec<Target<'_>> = stmts
            .iter()
            .map(|&s| {
                let name = program.enclosing_method(s).expect("checked above").method_name().to_string();
                let (rm, dict) = &renamed[&name];
                Target { stmt: s, method: name, renamed_method: rm, dict, buggy: rm.find(s).expect("statement in method").clone() }
            })
            .collect();
        let vocab = Vocabulary::new(self.table, program);
        let k = cfg.tokens_per_node;
        let best_of = |t: &Target<'_>, i: usize, pred: &[Vec<f64>]| -> (Node, Vec<NodeChoices>) {
            let choices = node_choices(i, &t.buggy, t.renamed_method, pred, &vocab, self.table, k);
            let labels: HashMap<usize, &str> = choices.iter().filter_map(|c| c.options.first().map(|o| (c.node_id, o.0.as_str()))).collect();
            (relabel(&t.buggy, &labels), choices)
        };
        // First pass sees the other subtrees as they are; the sweep then uses
        // the current best fix of every other subtree.
        let mut current: HashMap<usize, Node> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            let pred = self.predict(t, &HashMap::new())?;
            current.insert(t.stmt, best_of(t, i, &pred).0);
        }
        let mut all_choices: Vec<NodeChoices> = Vec::new();
        for (i, t) in targets.iter().enumerate() {
            let pred = self.predict(t, &current)?;
            let (best, choices) = best_of(t, i, &pred);
            current.insert(t.stmt, best);
            all_choices.extend(choices);
        }
        let lists: Vec<Vec<f64>> = all_choices.iter().map(|c| c.options.iter().map(|o| o.1).collect()).collect();
        let composed = compose(&lists, cfg.beam_width);
        let mut patches = Vec::with_capacity(composed.len());
        for (rank, (choice, score)) in composed.into_iter().enumerate() {
            let labels: HashMap<usize, &str> = all_choices.iter().zip(&choice).map(|(c, &j)| (c.node_id, c.options[j].0.as_str())).collect();
            let edits: Vec<HunkEdit> = targets
                .iter()
                .map(|t| HunkEdit { stmt_id: t.stmt, fixed: relabel(&t.buggy, &labels), dict: t.dict.clone() })
                .collect();
            let mut p = Patch { bug_id: bug_id.to_string(), edits, source: String::new(), score_sum: score, rank: rank + 1 };
            p.source = unparse(&p.apply(program, false));
            patches.push(p);
        }
        debug_assert!(targets.iter().all(|t| !t.method.is_empty()));
        Ok(patches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TreeLstmSummarizer;
    use crate::lang::parse;

    #[test]
    fn cross3_example() {
        let w = weight(&[1.0, 0.0, 0.0], &[0.0, 0.0, 2.0], Scheme::Cross3).unwrap();
        assert_eq!(w, vec![0.0, -2.0, 0.0]);
        assert_eq!(unweight(&w, &[0.0, 0.0, 2.0], Scheme::Cross3).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn hadamard_example_and_floor() {
        let w = weight(&[3.0, 5.0], &[2.0, 4.0], Scheme::Hadamard).unwrap();
        assert_eq!(w, vec![6.0, 20.0]);
        assert_eq!(unweight(&w, &[2.0, 4.0], Scheme::Hadamard).unwrap(), vec![3.0, 5.0]);
        let u = unweight(&[1.0, 1.0], &[0.0, 1.0], Scheme::Hadamard).unwrap();
        assert_eq!(u, vec![1e8, 1.0]);
    }

    #[test]
    fn weighting_errors() {
        assert_eq!(weight(&[1.0, 2.0], &[0.0, 0.0], Scheme::Hadamard), Err(WeightError::ZeroContext));
        assert_eq!(weight(&[1.0, 2.0], &[1.0, 0.0], Scheme::Cross3), Err(WeightError::Cross3Dimension(2)));
        assert_eq!(unweight(&[1.0, 2.0, 3.0], &[0.0; 3], Scheme::Cross3), Err(WeightError::ZeroContext));
    }

    #[test]
    fn single_node_yields_at_most_k_candidates() {
        let lists = vec![vec![0.9, 0.5, 0.4, 0.2, 0.1]];
        let c = compose(&lists, 100);
        assert_eq!(c.len(), 5);
        assert_eq!(c[0].0, vec![0]);
    }

    #[test]
    fn contexts_summarize_exactly_one_node() {
        let before = parse("func f(a: int): int { let x = a + 1; let y = x * 2; return y; }").unwrap();
        let after = parse("func f(a: int): int { let x = a - 1; let y = x * 3; return y; }").unwrap();
        let d = diff(&before, &after);
        let pairs = pair_subtrees(&before, &after, &d);
        assert_eq!(pairs.len(), 2);
        let table = EmbeddingTable::new(4, vec![("a".into(), vec![1.0, 0.0, 0.0, 0.0])]);
        let s = TreeLstmSummarizer::new(4, 4, 1);
        let (b, dict) = alpha_rename(&before.children[0]);
        let (a, _) = alpha_rename_with(&after.children[0], &dict);
        let c = build_contexts(&pairs[0], &pairs, &b, &a, &table, &s).unwrap();
        let text = unparse(&c.i3.tree);
        assert_eq!(text.matches(SUMMARY).count(), 1);
        assert!(text.contains("VAR_3 = VAR_2 * 3"), "{text}");
        assert!(c.i3.same_shape(c.o3.as_ref().unwrap()));
    }
}
