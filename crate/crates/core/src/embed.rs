//! GloVe token embeddings, subtree summarization and alpha-renaming.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use hunkfix_nn::{encode_tree, ChildSumTreeLstmCell, Graph, ParamStore, TreeShape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{Kind, Node};

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token vocabulary with one `dims`-dimensional row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dims: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Vec<f32>>,
}

impl EmbeddingTable {
    /// Builds a table; `UNK` is added as the mean row if missing.
    pub fn new(dims: usize, entries: Vec<(String, Vec<f32>)>) -> Self {
        let mut t = Self { dims, tokens: Vec::new(), index: HashMap::new(), rows: Vec::new() };
        for (tok, row) in entries {
            assert_eq!(row.len(), dims, "row width");
            t.push(tok, row);
        }
        if !t.index.contains_key(UNK) {
            let n = t.rows.len().max(1) as f32;
            let mut mean = vec![0.0; dims];
            for r in &t.rows {
                mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
            }
            t.push(UNK.to_string(), mean);
        }
        t
    }

    fn push(&mut self, tok: String, row: Vec<f32>) {
        if let Some(&i) = self.index.get(&tok) {
            self.rows[i] = row;
        } else {
            self.index.insert(tok.clone(), self.tokens.len());
            self.tokens.push(tok);
            self.rows.push(row);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    /// Row for `tok`, falling back to `UNK`.
    pub fn get(&self, tok: &str) -> &[f32] {
        let i = self.index.get(tok).or_else(|| self.index.get(UNK)).copied().expect("UNK row");
        &self.rows[i]
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut s = format!("{} {}\n", self.dims, self.len());
        for (t, r) in self.tokens.iter().zip(&self.rows) {
            s.push_str(t);
            for x in r {
                write!(s, " {x}").expect("string write");
            }
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| EmbedError::Format("missing header".into()))?;
        let nums: Vec<usize> = header.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|e| EmbedError::Format(format!("header: {e}")))?;
        let [dims, count] = nums[..] else { return Err(EmbedError::Format("header must be `dims vocabSize`".into())) };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            // Tokens may contain spaces (string literals), so split the vector off the right.
            let parts: Vec<&str> = line.rsplitn(dims + 1, ' ').collect();
            if parts.len() != dims + 1 {
                return Err(EmbedError::Format(format!("row {} has the wrong width", i + 1)));
            }
            let row = parts[..dims].iter().rev().map(|x| x.parse::<f32>()).collect::<Result<Vec<_>, _>>().map_err(|e| EmbedError::Format(format!("row {}: {e}", i + 1)))?;
            entries.push((parts[dims].to_string(), row));
        }
        if entries.len() != count {
            return Err(EmbedError::Format(format!("expected {count} rows, found {}", entries.len())));
        }
        Ok(Self::new(dims, entries))
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let (mut ab, mut aa, mut bb) = (0.0f32, 0.0f32, 0.0f32);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveConfig {
    pub dims: usize,
    pub window: usize,
    pub epochs: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        Self { dims: 64, window: 8, epochs: 25, x_max: 100.0, alpha: 0.75, learning_rate: 0.05, seed: 1 }
    }
}

/// GloVe weighting `f(x) = min(1, (x / x_max)^α)`.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (x / x_max).powf(alpha).min(1.0)
    }
}

/// Symmetric co-occurrence counts within `window` tokens.
pub fn cooccurrence(corpus: &[Vec<String>], window: usize) -> (Vec<String>, BTreeMap<(usize, usize), f64>) {
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for s in corpus {
        for t in s {
            if !index.contains_key(t.as_str()) {
                index.insert(t, vocab.len());
                vocab.push(t.clone());
            }
        }
    }
    let mut counts = BTreeMap::new();
    for s in corpus {
        let ids: Vec<usize> = s.iter().map(|t| index[t.as_str()]).collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in ids.iter().skip(i + 1).take(window) {
                *counts.entry((a, b)).or_insert(0.0) += 1.0;
                *counts.entry((b, a)).or_insert(0.0) += 1.0;
            }
        }
    }
    (vocab, counts)
}

/// Trains GloVe with AdaGrad; returns the table (`w + w̃` rows) and the per-epoch loss.
pub fn train_glove(corpus: &[Vec<String>], cfg: &GloveConfig) -> Result<(EmbeddingTable, Vec<f64>), EmbedError> {
    let (vocab, counts) = cooccurrence(corpus, cfg.window);
    if vocab.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let (v, d) = (vocab.len(), cfg.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = 0.5 / d as f64;
    let mut w: Vec<f64> = (0..2 * v * d).map(|_| rng.gen_range(-init..init)).collect();
    let mut bias = vec![0.0f64; 2 * v];
    let mut gw = vec![1.0f64; 2 * v * d];
    let mut gb = vec![1.0f64; 2 * v];
    let mut cells: Vec<((usize, usize), f64)> = counts.into_iter().collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        cells.shuffle(&mut rng);
        let mut loss = 0.0;
        for &((i, j), x) in &cells {
            let (wi, wj) = (i * d, (v + j) * d);
            let dot: f64 = (0..d).map(|k| w[wi + k] * w[wj + k]).sum();
            let diff = dot + bias[i] + bias[v + j] - x.ln();
            let f = glove_weight(x, cfg.x_max, cfg.alpha);
            loss += 0.5 * f * diff * diff;
            let g = f * diff;
            for k in 0..d {
                let (a, b) = (w[wi + k], w[wj + k]);
                let (ga, gbk) = (g * b, g * a);
                w[wi + k] -= cfg.learning_rate * ga / gw[wi + k].sqrt();
                w[wj + k] -= cfg.learning_rate * gbk / gw[wj + k].sqrt();
                gw[wi + k] += ga * ga;
                gw[wj + k] += gbk * gbk;
            }
            bias[i] -= cfg.learning_rate * g / gb[i].sqrt();
            bias[v + j] -= cfg.learning_rate * g / gb[v + j].sqrt();
            gb[i] += g * g;
            gb[v + j] += g * g;
        }
        history.push(loss);
    }
    let entries = vocab
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, (0..d).map(|k| (w[i * d + k] + w[(v + i) * d + k]) as f32).collect()))
        .collect();
    Ok((EmbeddingTable::new(d, entries), history))
}

/// Embedding token of a node: the variable name for parameters, the name for methods.
pub fn node_token(n: &Node) -> &str {
    match n.kind {
        Kind::Param => n.label.split(':').next().unwrap_or(""),
        Kind::Method => n.method_name(),
        _ => n.token(),
    }
}

/// One sentence per statement header and per method signature.
pub fn sentences(program: &Node) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for m in program.methods() {
        out.push(m.header().preorder().into_iter().map(|n| node_token(n).to_string()).collect());
        for s in m.statements() {
            out.push(s.header().preorder().into_iter().map(|n| node_token(n).to_string()).collect());
        }
    }
    out
}

/// Input rows for a tree in post-order, paired with its shape.
pub fn tree_inputs(tree: &Node, table: &EmbeddingTable) -> (TreeShape, Vec<Vec<f32>>) {
    let (nodes, kids) = tree.postorder();
    let shape = TreeShape::from_children(kids).expect("post-order tree");
    (shape, nodes.into_iter().map(|n| table.get(node_token(n)).to_vec()).collect())
}

/// Reduces a subtree with per-node vectors to one vector.
pub trait TreeSummarizer: Send + Sync {
    fn dims(&self) -> usize;
    fn summarize_vectors(&self, shape: &TreeShape, inputs: &[Vec<f32>]) -> Vec<f32>;
}

pub fn summarize(tree: &Node, table: &EmbeddingTable, summarizer: &dyn TreeSummarizer) -> Vec<f32> {
    let (shape, inputs) = tree_inputs(tree, table);
    summarizer.summarize_vectors(&shape, &inputs)
}

/// Root hidden state of a Child-Sum Tree-LSTM encoder pass.
#[derive(Debug)]
pub struct TreeLstmSummarizer {
    pub cell: ChildSumTreeLstmCell,
    pub store: ParamStore<f64>,
}

impl TreeLstmSummarizer {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = ChildSumTreeLstmCell::new(&mut store, "summarizer", input, hidden, &mut rng);
        Self { cell, store }
    }

    pub fn zeroed(input: usize, hidden: usize) -> Self {
        let mut s = Self::new(input, hidden, 0);
        s.store.zero_all();
        s
    }

    pub fn encode(&self, shape: &TreeShape, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut g = Graph::new();
        let xs: Vec<_> = inputs.iter().map(|r| g.row(r)).collect();
        let states = encode_tree(&mut g, &self.store, &self.cell, shape, &xs).expect("summarizer shapes");
        g.value(states[shape.root()].h).data().to_vec()
    }
}

impl TreeSummarizer for TreeLstmSummarizer {
    fn dims(&self) -> usize {
        self.cell.hidden
    }

    fn summarize_vectors(&self, shape: &TreeShape, inputs: &[Vec<f32>]) -> Vec<f32> {
        let wide: Vec<Vec<f64>> = inputs.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
        self.encode(shape, &wide).into_iter().map(|x| x as f32).collect()
    }
}

/// Placeholder → original variable name, for one method.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameDict {
    pub scope: String,
    pub names: BTreeMap<String, String>,
}

impl RenameDict {
    pub fn placeholder(&self, original: &str) -> Option<&str> {
        self.names.iter().find(|(_, o)| *o == original).map(|(p, _)| p.as_str())
    }
}

fn var_name(n: &Node) -> Option<&str> {
    match n.kind {
        Kind::Var | Kind::VarDecl | Kind::Assign => Some(&n.label),
        Kind::Param => n.label.split(':').next(),
        _ => None,
    }
}

fn relabel(n: &mut Node, map: &HashMap<String, String>) {
    if let Some(name) = var_name(n) {
        if let Some(new) = map.get(name) {
            n.label = match n.label.split_once(':') {
                Some((_, t)) if n.kind == Kind::Param => format!("{new}:{t}"),
                _ => new.clone(),
            };
        }
    }
    for c in &mut n.children {
        relabel(c, map);
    }
}

/// Renames variables to `VAR_1, VAR_2, ...` in order of first occurrence.
pub fn alpha_rename(method: &Node) -> (Node, RenameDict) {
    let mut forward: HashMap<String, String> = HashMap::new();
    let mut dict = RenameDict { scope: method.method_name().to_string(), names: BTreeMap::new() };
    for n in method.preorder() {
        if let Some(name) = var_name(n) {
            if !forward.contains_key(name) {
                let p = format!("VAR_{}", forward.len() + 1);
                forward.insert(name.to_string(), p.clone());
                dict.names.insert(p, name.to_string());
            }
        }
    }
    let mut out = method.clone();
    relabel(&mut out, &forward);
    (out, dict)
}

/// Renames with an existing dictionary, giving names it lacks fresh
/// placeholders after the ones already in use.
pub fn alpha_rename_with(method: &Node, base: &RenameDict) -> (Node, RenameDict) {
    let mut forward: HashMap<String, String> = base.names.iter().map(|(p, o)| (o.clone(), p.clone())).collect();
    let mut dict = RenameDict { scope: method.method_name().to_string(), names: base.names.clone() };
    for n in method.preorder() {
        if let Some(name) = var_name(n) {
            if !forward.contains_key(name) {
                let p = format!("VAR_{}", dict.names.len() + 1);
                forward.insert(name.to_string(), p.clone());
                dict.names.insert(p, name.to_string());
            }
        }
    }
    let mut out = method.clone();
    relabel(&mut out, &forward);
    (out, dict)
}

/// Inverse of [`alpha_rename`]; unknown placeholders are left untouched.
pub fn restore(tree: &Node, dict: &RenameDict) -> Node {
    let back: HashMap<String, String> = dict.names.clone().into_iter().collect();
    let mut out = tree.clone();
    relabel(&mut out, &back);
    out
}
