//! End-to-end driver: training every model from a corpus, localization,
//! hunk grouping, repair and validation, and corpus-wide evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::corpus::idiom::{idiom_program, IdiomConfig};
use crate::corpus::mutate::{seed_mutants, DEFAULT_MIX};
use crate::corpus::{mine_corpus, statement_tokens, BugCase, CorpusError, Mined};
use crate::dataflow::MethodFlow;
use crate::diffpair::{ground_truth, BugType};
use crate::embed::{train_glove, EmbedError, EmbeddingTable, TreeLstmSummarizer};
use crate::expansion::{expand, statement_vectors, train_classifier, ClassifierLabeler, ExpansionError, StatementClassifier, StatementSeq};
use crate::hunkdetect::{form_hunks, group_hunks, hunk_pair_score, sibling_runs, train_pair_scorer, Hunk, HunkError, HunkGroup, MlpPairScorer};
use crate::lang::{coverage, unparse, Node, TestCase};
use crate::postprocess::{apply_filters, is_correct, validate, Candidate, Reranker, ScopeDictionary, TieBreakReranker, Validation, ValidationReport};
use crate::repair::{add_training_bug, train_models, Patch, RepairError, RepairModels, Repairer, TrainHistory, TrainingSet};
use crate::sbfl::{ochiai, SbflError, SuspiciousnessReport};
use hunkfix_nn::NnError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Hunk(#[from] HunkError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Sbfl(#[from] SbflError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Every trained model the pipeline needs.
pub struct Models {
    pub table: Arc<EmbeddingTable>,
    pub scorer: MlpPairScorer,
    pub classifier: StatementClassifier<f32>,
    pub repair: RepairModels,
    pub summarizer: TreeLstmSummarizer,
}

/// The summarizer is a fixed random encoder, rebuilt from its seed.
pub fn summarizer_for(dims: usize, cfg: &Config) -> TreeLstmSummarizer {
    TreeLstmSummarizer::new(dims, dims, cfg.repair.summarizer_seed)
}

impl Models {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        self.table.save(&dir.join("embeddings.txt"))?;
        self.scorer.save(dir, "pairscorer")?;
        self.classifier.save(dir, "classifier")?;
        self.repair.save(&dir.join("repair"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Models, PipelineError> {
        let table = Arc::new(EmbeddingTable::load(&dir.join("embeddings.txt"))?);
        let scorer = MlpPairScorer::load(dir, "pairscorer", table.clone())?;
        let classifier = StatementClassifier::load(dir, "classifier")?;
        let repair = RepairModels::load(&dir.join("repair"))?;
        let summarizer = TreeLstmSummarizer::new(table.dims, table.dims, repair.cfg.summarizer_seed);
        Ok(Models { table, scorer, classifier, repair, summarizer })
    }
}

/// Per-epoch losses of every trained model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub embeddings: Vec<f64>,
    pub scorer: Vec<f64>,
    pub classifier: Vec<f64>,
    pub repair: TrainHistory,
}

pub fn train_embeddings(mined: &Mined, cfg: &Config) -> Result<(EmbeddingTable, Vec<f64>), PipelineError> {
    Ok(train_glove(&mined.sentences, &cfg.glove)?)
}

pub fn train_scorer(mined: &Mined, table: Arc<EmbeddingTable>, cfg: &Config) -> Result<(MlpPairScorer, Vec<f64>), PipelineError> {
    Ok(train_pair_scorer(&mined.hunk_sets, table, cfg.scorer)?)
}

/// Token lists of a labelled window as embedding rows.
pub fn window_vectors(statements: &[Vec<String>], table: &EmbeddingTable) -> StatementSeq {
    statements.iter().map(|s| s.iter().map(|t| table.get(t).to_vec()).collect()).collect()
}

pub fn train_statement_classifier(
    mined: &Mined,
    table: &EmbeddingTable,
    cfg: &Config,
) -> Result<(StatementClassifier<f32>, Vec<f64>), PipelineError> {
    let data: Vec<(StatementSeq, Vec<bool>)> =
        mined.windows.iter().map(|w| (window_vectors(&w.statements, table), w.labels.clone())).collect();
    Ok(train_classifier(&data, table.dims, cfg.classifier)?)
}

pub fn train_repair(
    cases: &[BugCase],
    table: &EmbeddingTable,
    summarizer: &TreeLstmSummarizer,
    cfg: &Config,
) -> Result<(RepairModels, TrainHistory), PipelineError> {
    let mut set = TrainingSet::default();
    for c in cases {
        let (Ok(before), Ok(after)) = (c.parse_before(), c.parse_after()) else { continue };
        add_training_bug(&mut set, &before, &after, table, summarizer, cfg.repair.scheme).map_err(RepairError::from)?;
    }
    Ok(train_models(&set, table.dims, cfg.repair)?)
}

/// Mines `cases` and trains every model in turn.
pub fn train_all(cases: &[BugCase], cfg: &Config) -> Result<(Models, TrainingReport), PipelineError> {
    let (mined, _) = mine_corpus(cases, cfg.expansion_window);
    let (table, embeddings) = train_embeddings(&mined, cfg)?;
    let table = Arc::new(table);
    let (scorer, scorer_hist) = train_scorer(&mined, table.clone(), cfg)?;
    let (classifier, classifier_hist) = train_statement_classifier(&mined, &table, cfg)?;
    let summarizer = summarizer_for(table.dims, cfg);
    let (repair, repair_hist) = train_repair(cases, &table, &summarizer, cfg)?;
    Ok((
        Models { table, scorer, classifier, repair, summarizer },
        TrainingReport { embeddings, scorer: scorer_hist, classifier: classifier_hist, repair: repair_hist },
    ))
}

/// A generated corpus of `count` seeded bugs over fresh idiomatic programs.
pub fn desk_corpus(seed: u64, count: usize, prefix: &str) -> Vec<BugCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let programs: Vec<_> = (0..count.max(1)).map(|_| idiom_program(&mut rng, IdiomConfig::default())).collect();
    seed_mutants(&mut rng, &programs, &DEFAULT_MIX, count, prefix)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Localization {
    pub report: SuspiciousnessReport,
    /// Hunks after expansion, before grouping.
    pub hunks: Vec<Hunk>,
    pub groups: Vec<HunkGroup>,
}

/// Most suspicious statement of a hunk. Equal suspiciousness is common
/// (straight-line code shares its coverage), so ties go to the higher
/// classifier probability `prob[i]` of `hunk.stmts[i]`, then to the smallest id.
pub fn seed_of(hunk: &Hunk, report: &SuspiciousnessReport, prob: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..hunk.stmts.len() {
        let (s, b) = (hunk.stmts[i], hunk.stmts[best]);
        let key = |j: usize| (report.score(hunk.stmts[j]), prob.get(j).copied().unwrap_or(0.0));
        let (ka, kb) = (key(i), key(best));
        if ka.0 > kb.0 || (ka.0 == kb.0 && (ka.1 > kb.1 || (ka.1 == kb.1 && s < b))) {
            best = i;
        }
    }
    hunk.stmts[best]
}

/// Merges overlapping or adjacent hunks of the same method.
fn merge_hunks(program: &Node, hunks: Vec<Hunk>) -> Vec<Hunk> {
    let all: BTreeSet<usize> = hunks.iter().flat_map(|h| h.stmts.iter().copied()).collect();
    sibling_runs(program, &all)
        .into_iter()
        .map(|stmts| Hunk { method_id: program.enclosing_method(stmts[0]).map_or(0, |m| m.id), stmts })
        .collect()
}

/// Coverage, suspiciousness, hunks, expansion and grouping.
pub fn localize(program: &Node, tests: &[TestCase], models: &Models, cfg: &Config) -> Result<Localization, PipelineError> {
    let report = ochiai(&coverage(program, tests))?;
    let labeler = ClassifierLabeler { model: &models.classifier, table: models.table.clone() };
    let mut hunks = Vec::new();
    for h in form_hunks(&report, program, cfg.sbfl_top_k) {
        let Some(method) = program.enclosing_method(h.first()) else { continue };
        let prob = models.classifier.probabilities(&statement_vectors(method, &h.stmts, &models.table))?;
        let seed = seed_of(&h, &report, &prob);
        hunks.push(if cfg.expansion {
            expand(seed, method, &labeler, &MethodFlow::new(method), cfg.expansion_window)
        } else {
            Hunk { method_id: method.id, stmts: vec![seed] }
        });
    }
    let hunks = merge_hunks(program, hunks);
    let groups = if cfg.hunk_detection {
        let tokens: Vec<Vec<Vec<String>>> = hunks.iter().map(|h| h.stmts.iter().map(|&s| statement_tokens(program, s)).collect()).collect();
        let index = |h: &Hunk| hunks.iter().position(|x| x == h).expect("hunk from the list");
        group_hunks(&hunks, |a, b| hunk_pair_score(&tokens[index(a)], &tokens[index(b)], &models.scorer), cfg.hunk_threshold, &report)
    } else {
        group_hunks(&hunks, |_, _| f64::NEG_INFINITY, cfg.hunk_threshold, &report)
    };
    Ok(Localization { report, hunks, groups })
}

#[derive(Debug, Clone)]
pub struct FixOutcome {
    pub localization: Localization,
    /// Candidates handed to validation, group by group.
    pub validated: Vec<Patch>,
    pub plausible: Option<Candidate>,
    pub report: ValidationReport,
}

/// Repairs hunk groups in rank order until a candidate passes every test,
/// the groups run out or the wall-clock budget is spent.
pub fn fix_program(
    bug_id: &str,
    program: &Node,
    tests: &[TestCase],
    reference: Option<&Node>,
    models: &Models,
    cfg: &Config,
) -> Result<FixOutcome, PipelineError> {
    let start = Instant::now();
    let deadline = start + Duration::from_millis(cfg.budget_ms);
    let localization = localize(program, tests, models, cfg)?;
    let repairer = Repairer { models: &models.repair, table: &models.table, summarizer: &models.summarizer };
    let dict = ScopeDictionary::new(program);
    let buggy_source = unparse(program);
    let mut tried = 0;
    let mut validated = Vec::new();
    let mut found: Option<(usize, Candidate)> = None;
    for group in &localization.groups {
        if Instant::now() >= deadline {
            break;
        }
        let patches = match repairer.repair_group(bug_id, program, group, &localization.report) {
            Ok(p) => p,
            Err(RepairError::NoBuggySubtrees) => continue,
            Err(e) => return Err(e.into()),
        };
        let candidates = TieBreakReranker.rerank(apply_filters(patches, program, &dict, cfg.filters), &buggy_source);
        validated.extend(candidates.iter().take(cfg.validate_top).map(|c| c.patch.clone()));
        let outcome = validate(&candidates, tests, cfg.validate_top, Some(deadline));
        tried += outcome.tried();
        match outcome {
            Validation::Plausible { rank, candidate, .. } => {
                found = Some((rank, *candidate));
                break;
            }
            Validation::Timeout { .. } => break,
            Validation::NextLocation { .. } => {}
        }
    }
    let correct = found.as_ref().and_then(|(_, c)| reference.map(|r| is_correct(&c.program, r)));
    let report = ValidationReport::new(bug_id, tried, found.as_ref().map(|f| f.0), correct, start.elapsed());
    Ok(FixOutcome { localization, validated, plausible: found.map(|f| f.1), report })
}

pub fn fix_case(case: &BugCase, models: &Models, cfg: &Config) -> Result<FixOutcome, PipelineError> {
    let program = case.parse_before()?;
    let reference = case.parse_after().ok();
    fix_program(&case.id, &program, &case.tests, reference.as_ref(), models, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BugResult {
    pub bug_id: String,
    pub bug_type: Option<BugType>,
    pub report: ValidationReport,
    pub error: Option<String>,
}

impl BugResult {
    /// A plausible patch was found within the validated top candidates.
    pub fn plausible(&self) -> bool {
        self.report.plausible_rank.is_some()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub results: Vec<BugResult>,
}

pub const TYPE_ROWS: [&str; 5] = [
    "Type 1. One-Hunk One-Stmt",
    "Type 2. One-Hunk Multi-Stmts",
    "Type 3. Multi-Hunks One-Stmt",
    "Type 4. Multi-Hunks Multi-Stmts",
    "Type 5. Multi-Hunks Mix-Stmts",
];

/// Correct, plausible and total counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub plausible: usize,
    pub bugs: usize,
}

impl Evaluation {
    pub fn per_type(&self) -> [Counts; 5] {
        let mut out = [Counts::default(); 5];
        for r in &self.results {
            let Some(t) = r.bug_type else { continue };
            let c = &mut out[t.index()];
            c.bugs += 1;
            c.plausible += usize::from(r.plausible());
            c.correct += usize::from(r.report.correct == Some(true));
        }
        out
    }

    pub fn total(&self) -> Counts {
        Counts {
            correct: self.results.iter().filter(|r| r.report.correct == Some(true)).count(),
            plausible: self.results.iter().filter(|r| r.plausible()).count(),
            bugs: self.results.len(),
        }
    }

    pub fn plausible_in(&self, types: &[BugType]) -> usize {
        self.results.iter().filter(|r| r.plausible() && r.bug_type.is_some_and(|t| types.contains(&t))).count()
    }

    /// Fixed counts per bug type as `correct/plausible`, one row per type and a total.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34}| {:>9} | {:>4}", "Bug Types", "Fixed", "Bugs");
        let row = |s: &mut String, name: &str, c: Counts| {
            let _ = writeln!(s, "{:<34}| {:>9} | {:>4}", name, format!("{}/{}", c.correct, c.plausible), c.bugs);
        };
        for (name, c) in TYPE_ROWS.iter().zip(self.per_type()) {
            row(&mut s, name, c);
        }
        row(&mut s, "Total", self.total());
        s
    }
}

/// Declared type, or the type derived from the ground-truth diff.
pub fn case_type(case: &BugCase) -> Option<BugType> {
    case.bug_type.or_else(|| {
        let (b, a) = (case.parse_before().ok()?, case.parse_after().ok()?);
        ground_truth(&b, &a).2
    })
}

/// Fixes every case, `jobs` bugs at a time.
pub fn evaluate(cases: &[BugCase], models: &Models, cfg: &Config, jobs: usize) -> Evaluation {
    let run = |c: &BugCase| match fix_case(c, models, cfg) {
        Ok(o) => BugResult { bug_id: c.id.clone(), bug_type: case_type(c), report: o.report, error: None },
        Err(e) => BugResult {
            bug_id: c.id.clone(),
            bug_type: case_type(c),
            report: ValidationReport::new(&c.id, 0, None, None, Duration::ZERO),
            error: Some(e.to_string()),
        },
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| cases.par_iter().map(run).collect()),
        Err(_) => cases.iter().map(run).collect(),
    };
    Evaluation { results }
}
