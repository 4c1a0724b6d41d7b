//! Expanding a suspicious statement into a buggy hunk with a GRU statement
//! classifier and data dependencies.

use std::path::Path;
use std::sync::Arc;

use hunkfix_nn::{Adam, AdamConfig, Graph, GruCell, Linear, NnError, ParamGrads, ParamStore, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::MethodFlow;
use crate::embed::{alpha_rename, node_token, EmbeddingTable};
use crate::hunkdetect::Hunk;
use crate::lang::Node;

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("statement vector has {found} dimensions, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 20, learning_rate: 5e-3, seed: 11 }
    }
}

/// GRU over statements; each step sees the mean token vector of its
/// statement and the previous step's output probability.
#[derive(Debug)]
pub struct StatementClassifier<T: Scalar> {
    pub gru: GruCell,
    pub out: Linear,
    pub store: ParamStore<T>,
    pub dims: usize,
    pub cfg: ClassifierConfig,
}

/// One training or inference sequence: per statement, its token vectors.
pub type StatementSeq = Vec<Vec<Vec<f32>>>;

fn pool(tokens: &[Vec<f32>], dims: usize) -> Result<Vec<f64>, ExpansionError> {
    let mut v = vec![0.0; dims];
    for t in tokens {
        if t.len() != dims {
            return Err(ExpansionError::Dimension { expected: dims, found: t.len() });
        }
        v.iter_mut().zip(t).for_each(|(a, &b)| *a += f64::from(b));
    }
    let n = tokens.len().max(1) as f64;
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

impl<T: Scalar> StatementClassifier<T> {
    pub fn new(dims: usize, cfg: ClassifierConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "classifier.gru", dims + 1, cfg.hidden, &mut rng);
        let out = Linear::new(&mut store, "classifier.out", cfg.hidden, 1, &mut rng);
        Self { gru, out, store, dims, cfg }
    }

    /// Per-step buggy probabilities as graph nodes.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, seq: &StatementSeq) -> Result<Vec<Var>, ExpansionError> {
        let mut h = g.constant(Tensor::zeros(hunkfix_nn::Shape::row(self.cfg.hidden)));
        let mut prev = g.constant(Tensor::zeros(hunkfix_nn::Shape::row(1)));
        let mut outs = Vec::with_capacity(seq.len());
        for stmt in seq {
            let x: Vec<T> = pool(stmt, self.dims)?.into_iter().map(T::lit).collect();
            let x = g.row(&x);
            let x = g.concat(&[x, prev])?;
            h = self.gru.step(g, store, x, h)?;
            let o = self.out.forward(g, store, h)?;
            let p = g.sigmoid(o)?;
            outs.push(p);
            prev = p;
        }
        Ok(outs)
    }

    pub fn probabilities(&self, seq: &StatementSeq) -> Result<Vec<f64>, ExpansionError> {
        let mut g = Graph::new();
        let outs = self.forward(&mut g, &self.store, seq)?;
        Ok(outs.iter().map(|&o| g.value(o).item().as_f64()).collect())
    }

    pub fn classify(&self, seq: &StatementSeq) -> Result<Vec<bool>, ExpansionError> {
        Ok(self.probabilities(seq)?.into_iter().map(|p| p >= 0.5).collect())
    }

    /// Mean binary cross-entropy over the steps of one sequence.
    pub fn loss(&self, g: &mut Graph<T>, store: &ParamStore<T>, seq: &StatementSeq, labels: &[bool]) -> Result<Var, ExpansionError> {
        let outs = self.forward(g, store, seq)?;
        let pred = g.stack_rows(&outs)?;
        let target = g.constant(Tensor::new(
            hunkfix_nn::Shape::new(labels.len(), 1),
            labels.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        ));
        Ok(g.bce(pred, target)?)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<(), NnError> {
        self.store.save(dir, name, serde_json::json!({ "classifier": self.cfg, "dims": self.dims }))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self, NnError> {
        let (store, hyper) = ParamStore::load(dir, name)?;
        let cfg: ClassifierConfig = serde_json::from_value(hyper["classifier"].clone())?;
        let dims: usize = serde_json::from_value(hyper["dims"].clone())?;
        let mut c = Self::new(dims, cfg);
        if c.store.len() != store.len() || c.store.ids().any(|id| c.store.get(id).shape() != store.get(id).shape()) {
            return Err(NnError::Checkpoint("classifier shape mismatch".into()));
        }
        c.store = store;
        Ok(c)
    }
}

/// Trains on labelled statement sequences; returns the model and per-epoch mean loss.
pub fn train_classifier(
    corpus: &[(StatementSeq, Vec<bool>)],
    dims: usize,
    cfg: ClassifierConfig,
) -> Result<(StatementClassifier<f32>, Vec<f64>), ExpansionError> {
    let corpus: Vec<&(StatementSeq, Vec<bool>)> = corpus.iter().filter(|(s, _)| !s.is_empty()).collect();
    if corpus.is_empty() {
        return Err(ExpansionError::EmptyCorpus);
    }
    let mut model = StatementClassifier::<f32>::new(dims, cfg);
    let mut opt = Adam::new(&model.store, AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mean_loss = |m: &StatementClassifier<f32>| -> Result<f64, ExpansionError> {
        let mut total = 0.0;
        for (s, l) in &corpus {
            let mut g = Graph::new();
            let loss = m.loss(&mut g, &m.store, s, l)?;
            total += f64::from(g.value(loss).item());
        }
        Ok(total / corpus.len() as f64)
    };
    history.push(mean_loss(&model)?);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(8) {
            let mut grads = ParamGrads::for_store(&model.store);
            for &i in chunk {
                let (s, l) = corpus[i];
                let mut g = Graph::new();
                let loss = model.loss(&mut g, &model.store, s, l)?;
                g.backward(loss).accumulate_params(&g, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            opt.step(&mut model.store, &grads);
        }
        history.push(mean_loss(&model)?);
    }
    Ok((model, history))
}

/// Decides which statements of a candidate list look buggy.
pub trait StatementLabeler {
    fn label(&self, method: &Node, stmts: &[usize]) -> Vec<bool>;
}

/// Fixed answers, for fixtures and oracles.
pub struct FixedLabeler(pub std::collections::BTreeSet<usize>);

impl StatementLabeler for FixedLabeler {
    fn label(&self, _: &Node, stmts: &[usize]) -> Vec<bool> {
        stmts.iter().map(|s| self.0.contains(s)).collect()
    }
}

/// Alpha-renamed statement-header tokens of each statement, as embedding rows.
pub fn statement_vectors(method: &Node, stmts: &[usize], table: &EmbeddingTable) -> StatementSeq {
    let (renamed, _) = alpha_rename(method);
    stmts
        .iter()
        .map(|&s| {
            let n = renamed.find(s).expect("statement in method");
            n.header().preorder().into_iter().map(|t| table.get(node_token(t)).to_vec()).collect()
        })
        .collect()
}

pub struct ClassifierLabeler<'a> {
    pub model: &'a StatementClassifier<f32>,
    pub table: Arc<EmbeddingTable>,
}

impl StatementLabeler for ClassifierLabeler<'_> {
    fn label(&self, method: &Node, stmts: &[usize]) -> Vec<bool> {
        let seq = statement_vectors(method, stmts, &self.table);
        self.model.classify(&seq).expect("embedding width matches the classifier")
    }
}

/// Up to `n` statements on each side of `seed` in flattened order, plus the seed.
pub fn candidate_window(method: &Node, seed: usize, n: usize) -> (Vec<usize>, usize) {
    let all = method.statement_ids();
    let at = all.iter().position(|&s| s == seed).expect("seed is a statement of the method");
    let lo = at.saturating_sub(n);
    let hi = (at + n + 1).min(all.len());
    (all[lo..hi].to_vec(), at - lo)
}

/// Scans up, then down, from `seed`, keeping a candidate when it is labelled
/// buggy or data-dependent on the seed, and stopping at the first miss.
pub fn expand(seed: usize, method: &Node, labeler: &dyn StatementLabeler, flow: &MethodFlow, n: usize) -> Hunk {
    let (cands, center) = candidate_window(method, seed, n);
    let labels = labeler.label(method, &cands);
    let keep = |i: usize| labels[i] || flow.dependent(cands[i], seed);
    let mut lo = center;
    while lo > 0 && keep(lo - 1) {
        lo -= 1;
    }
    let mut hi = center;
    while hi + 1 < cands.len() && keep(hi + 1) {
        hi += 1;
    }
    Hunk { method_id: method.id, stmts: cands[lo..=hi].to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn zero_parameters_give_one_half() {
        let mut c = StatementClassifier::<f64>::new(3, ClassifierConfig { hidden: 4, ..Default::default() });
        c.store.zero_all();
        let seq: StatementSeq = vec![vec![vec![1.0, 2.0, 3.0]], vec![vec![-1.0, 0.0, 5.0], vec![0.5, 0.5, 0.5]]];
        assert_eq!(c.probabilities(&seq).unwrap(), vec![0.5, 0.5]);
        assert_eq!(c.classify(&seq).unwrap(), vec![true, true]);
    }

    #[test]
    fn outputs_are_causal() {
        let c = StatementClassifier::<f64>::new(2, ClassifierConfig { hidden: 3, ..Default::default() });
        let a = c.probabilities(&vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]).unwrap();
        let b = c.probabilities(&vec![vec![vec![1.0, 0.0]], vec![vec![5.0, -3.0]]]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = StatementClassifier::<f64>::new(2, ClassifierConfig::default());
        assert!(matches!(c.probabilities(&vec![vec![vec![1.0]]]), Err(ExpansionError::Dimension { .. })));
    }

    #[test]
    fn separable_corpus_is_learned() {
        let sentinel = vec![1.0f32, 1.0, 0.0];
        let plain = vec![0.0f32, 0.2, 1.0];
        let other = vec![0.3f32, -0.5, 0.4];
        let mut corpus = Vec::new();
        for i in 0..40 {
            let mut seq = Vec::new();
            let mut labels = Vec::new();
            for j in 0..6 {
                let buggy = (i + j) % 4 == 0;
                seq.push(if buggy { vec![other.clone(), sentinel.clone()] } else { vec![other.clone(), plain.clone()] });
                labels.push(buggy);
            }
            corpus.push((seq, labels));
        }
        let (m, hist) = train_classifier(&corpus, 3, ClassifierConfig { hidden: 8, epochs: 40, learning_rate: 2e-2, seed: 1 }).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let (mut right, mut total) = (0, 0);
        for (s, l) in &corpus {
            for (p, t) in m.classify(s).unwrap().iter().zip(l) {
                right += usize::from(p == t);
                total += 1;
            }
        }
        assert!(right as f64 / total as f64 >= 0.95, "{right}/{total}");
    }

    #[test]
    fn constant_labels_are_predicted() {
        let corpus: Vec<(StatementSeq, Vec<bool>)> =
            (0..10).map(|i| (vec![vec![vec![i as f32 / 10.0, 1.0]]; 3], vec![false; 3])).collect();
        let (m, _) = train_classifier(&corpus, 2, ClassifierConfig { hidden: 4, epochs: 30, learning_rate: 2e-2, seed: 2 }).unwrap();
        for (s, _) in &corpus {
            assert_eq!(m.classify(s).unwrap(), vec![false; 3]);
        }
        assert!(matches!(train_classifier(&[], 2, ClassifierConfig::default()), Err(ExpansionError::EmptyCorpus)));
    }

    #[test]
    fn no_labels_no_dependencies_gives_the_seed() {
        let p = parse("func f(a: int): int { let x = a; let y = 2; let z = 3; return y; }").unwrap();
        let m = &p.children[0];
        let ids = m.statement_ids();
        let flow = MethodFlow::new(m);
        let h = expand(ids[2], m, &FixedLabeler(Default::default()), &flow, 5);
        assert_eq!(h.stmts, vec![ids[2]]);
    }
}
