//! Hunk forming, the fixed-together pair scorer and hunk grouping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use hunkfix_nn::{Adam, AdamConfig, Graph, Mlp, NnError, ParamGrads, ParamStore, Shape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingTable;
use crate::lang::Node;
use crate::sbfl::SuspiciousnessReport;

#[derive(Debug, Error)]
pub enum HunkError {
    #[error("empty corpus: no fixed-together statement pairs")]
    EmptyCorpus,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Consecutive statements (flattened source order) of one method.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hunk {
    pub method_id: usize,
    pub stmts: Vec<usize>,
}

impl Hunk {
    pub fn first(&self) -> usize {
        self.stmts[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HunkGroup {
    pub hunks: Vec<Hunk>,
    pub rank: usize,
    pub max_suspiciousness: f64,
}

impl HunkGroup {
    pub fn statements(&self) -> BTreeSet<usize> {
        self.hunks.iter().flat_map(|h| h.stmts.iter().copied()).collect()
    }
}

/// Maximal runs of the top-`k` positively scored statements. A run never
/// crosses a block boundary: its statements are adjacent siblings.
pub fn form_hunks(report: &SuspiciousnessReport, program: &Node, k: usize) -> Vec<Hunk> {
    let suspicious: BTreeSet<usize> = report.suspicious(k).into_iter().map(|s| s.stmt_id).collect();
    sibling_runs(program, &suspicious)
        .into_iter()
        .map(|stmts| Hunk { method_id: program.enclosing_method(stmts[0]).map_or(0, |m| m.id), stmts })
        .collect()
}

/// Maximal runs of adjacent sibling statements drawn from `stmts`.
pub fn sibling_runs(program: &Node, stmts: &BTreeSet<usize>) -> Vec<Vec<usize>> {
    fn walk(n: &Node, stmts: &BTreeSet<usize>, runs: &mut Vec<Vec<usize>>) {
        let mut cur: Vec<usize> = Vec::new();
        for c in &n.children {
            if c.kind.is_statement() && stmts.contains(&c.id) {
                cur.push(c.id);
            } else if c.kind.is_statement() && !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        for c in &n.children {
            walk(c, stmts, runs);
        }
    }
    let mut runs = Vec::new();
    walk(program, stmts, &mut runs);
    let order: BTreeMap<usize, usize> = program.statement_ids().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    runs.sort_by_key(|r| order[&r[0]]);
    runs
}

/// Scores whether two statements are fixed together.
pub trait PairScorer: Send + Sync {
    fn raw_score(&self, a: &[String], b: &[String]) -> f64;

    /// Symmetric score: the mean of both argument orders.
    fn score(&self, a: &[String], b: &[String]) -> f64 {
        0.5 * (self.raw_score(a, b) + self.raw_score(b, a))
    }
}

/// Always returns the same score.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn raw_score(&self, _: &[String], _: &[String]) -> f64 {
        self.0
    }
}

/// Mean of the scores of all statement pairs, one statement from each hunk.
pub fn hunk_pair_score(hi: &[Vec<String>], hj: &[Vec<String>], scorer: &dyn PairScorer) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for a in hi {
        for b in hj {
            total += scorer.score(a, b);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Connected components of the `score ≥ threshold` relation, ranked by the
/// highest suspiciousness they contain (ties: smallest statement id).
pub fn group_hunks(
    hunks: &[Hunk],
    pair_score: impl Fn(&Hunk, &Hunk) -> f64,
    threshold: f64,
    report: &SuspiciousnessReport,
) -> Vec<HunkGroup> {
    let n = hunks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if pair_score(&hunks[i], &hunks[j]) >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<Hunk>> = BTreeMap::new();
    for (i, h) in hunks.iter().enumerate() {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(h.clone());
    }
    let mut groups: Vec<HunkGroup> = comps
        .into_values()
        .map(|hunks| {
            let max = hunks.iter().flat_map(|h| &h.stmts).map(|&s| report.score(s)).fold(f64::NEG_INFINITY, f64::max);
            HunkGroup { hunks, rank: 0, max_suspiciousness: max }
        })
        .collect();
    groups.sort_by(|a, b| {
        b.max_suspiciousness.total_cmp(&a.max_suspiciousness).then_with(|| {
            let min = |g: &HunkGroup| g.hunks.iter().map(Hunk::first).min().unwrap_or(usize::MAX);
            min(a).cmp(&min(b))
        })
    });
    for (i, g) in groups.iter_mut().enumerate() {
        g.rank = i + 1;
    }
    groups
}

/// Statement token sequences of one bug's hunks.
pub type BugHunks = Vec<Vec<Vec<String>>>;

/// All cross-hunk statement pairs of one bug.
pub fn positive_pairs(bug: &BugHunks) -> Vec<(&[String], &[String])> {
    let mut out = Vec::new();
    for i in 0..bug.len() {
        for j in i + 1..bug.len() {
            for a in &bug[i] {
                for b in &bug[j] {
                    out.push((a.as_slice(), b.as_slice()));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 30, batch: 32, learning_rate: 1e-2, seed: 7 }
    }
}

/// Twin mean-pooled embedding encoders feeding a one-hidden-layer sigmoid
/// scorer over `[a, b, |a - b|, a ⊙ b]`.
#[derive(Debug)]
pub struct MlpPairScorer {
    pub table: Arc<EmbeddingTable>,
    pub mlp: Mlp,
    pub store: ParamStore<f32>,
    pub cfg: ScorerConfig,
}

pub fn mean_pool(table: &EmbeddingTable, tokens: &[String]) -> Vec<f32> {
    let mut v = vec![0.0; table.dims];
    for t in tokens {
        v.iter_mut().zip(table.get(t)).for_each(|(a, b)| *a += b);
    }
    let n = tokens.len().max(1) as f32;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl MlpPairScorer {
    pub fn new(table: Arc<EmbeddingTable>, cfg: ScorerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "scorer", 4 * table.dims, cfg.hidden, &mut rng);
        Self { table, mlp, store, cfg }
    }

    fn features(&self, a: &[String], b: &[String]) -> Vec<f32> {
        let (x, y) = (mean_pool(&self.table, a), mean_pool(&self.table, b));
        let mut f = Vec::with_capacity(4 * x.len());
        f.extend_from_slice(&x);
        f.extend_from_slice(&y);
        f.extend(x.iter().zip(&y).map(|(p, q)| (p - q).abs()));
        f.extend(x.iter().zip(&y).map(|(p, q)| p * q));
        f
    }

    fn forward(&self, g: &mut Graph<f32>, rows: &[Vec<f32>]) -> Result<Var, NnError> {
        let data = rows.iter().flatten().copied().collect();
        let x = g.constant(Tensor::new(Shape::new(rows.len(), 4 * self.table.dims), data));
        self.mlp.forward(g, &self.store, x)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<(), NnError> {
        self.store.save(dir, name, serde_json::json!({ "scorer": self.cfg, "dims": self.table.dims }))
    }

    pub fn load(dir: &Path, name: &str, table: Arc<EmbeddingTable>) -> Result<Self, NnError> {
        let (store, hyper) = ParamStore::load(dir, name)?;
        let cfg: ScorerConfig = serde_json::from_value(hyper["scorer"].clone())?;
        let mut s = Self::new(table, cfg);
        if s.store.len() != store.len() || s.store.ids().any(|id| s.store.get(id).shape() != store.get(id).shape()) {
            return Err(NnError::Checkpoint("pair scorer shape mismatch".into()));
        }
        s.store = store;
        Ok(s)
    }
}

impl PairScorer for MlpPairScorer {
    fn raw_score(&self, a: &[String], b: &[String]) -> f64 {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &[self.features(a, b)]).expect("scorer shapes");
        f64::from(g.value(out).item())
    }
}

/// Positives: cross-hunk statement pairs of multi-hunk bugs. Negatives: as
/// many statement pairs drawn from hunks of two different bugs.
pub fn train_pair_scorer(
    corpus: &[BugHunks],
    table: Arc<EmbeddingTable>,
    cfg: ScorerConfig,
) -> Result<(MlpPairScorer, Vec<f64>), HunkError> {
    let positives: Vec<(&[String], &[String])> = corpus.iter().flat_map(positive_pairs).collect();
    let stmts: Vec<(usize, &[String])> =
        corpus.iter().enumerate().flat_map(|(i, bug)| bug.iter().flatten().map(move |s| (i, s.as_slice()))).collect();
    if positives.is_empty() || corpus.len() < 2 {
        return Err(HunkError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut examples: Vec<(&[String], &[String], f32)> = positives.iter().map(|&(a, b)| (a, b, 1.0)).collect();
    while examples.len() < 2 * positives.len() {
        let (i, a) = stmts[rng.gen_range(0..stmts.len())];
        let (j, b) = stmts[rng.gen_range(0..stmts.len())];
        if i != j {
            examples.push((a, b, 0.0));
        }
    }
    let mut scorer = MlpPairScorer::new(table, cfg);
    let mut opt = Adam::new(&scorer.store, AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in examples.chunks(cfg.batch.max(1)) {
            // Random argument order teaches both orders.
            let rows: Vec<Vec<f32>> =
                chunk.iter().map(|&(a, b, _)| if rng.gen() { scorer.features(a, b) } else { scorer.features(b, a) }).collect();
            let labels: Vec<f32> = chunk.iter().map(|e| e.2).collect();
            let mut g = Graph::new();
            let pred = scorer.forward(&mut g, &rows)?;
            let target = g.constant(Tensor::new(Shape::new(labels.len(), 1), labels));
            let loss = g.bce(pred, target)?;
            total += f64::from(g.value(loss).item()) * chunk.len() as f64;
            let mut grads = ParamGrads::for_store(&scorer.store);
            g.backward(loss).accumulate_params(&g, &mut grads);
            opt.step(&mut scorer.store, &grads);
        }
        history.push(total / examples.len() as f64);
    }
    Ok((scorer, history))
}
