//! Candidate filtering, re-ranking and top-down test validation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::lang::parser::lex;
use crate::lang::types::BUILTINS;
use crate::lang::{check, parse, passes_all, unparse, Kind, Node, TestCase};
use crate::repair::Patch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentKind {
    Variable,
    Method,
}

/// Valid identifiers per method, plus the program's methods and builtins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScopeDictionary {
    pub methods: BTreeMap<String, BTreeMap<String, IdentKind>>,
}

impl ScopeDictionary {
    pub fn new(program: &Node) -> Self {
        let globals: Vec<String> =
            program.methods().iter().map(|m| m.method_name().to_string()).chain(BUILTINS.iter().map(|b| b.to_string())).collect();
        let mut methods = BTreeMap::new();
        for m in program.methods() {
            let mut names: BTreeMap<String, IdentKind> = globals.iter().map(|g| (g.clone(), IdentKind::Method)).collect();
            for n in m.preorder() {
                match n.kind {
                    Kind::Param => {
                        names.insert(n.label.split(':').next().unwrap_or("").to_string(), IdentKind::Variable);
                    }
                    Kind::VarDecl => {
                        names.insert(n.label.clone(), IdentKind::Variable);
                    }
                    _ => {}
                }
            }
            methods.insert(m.method_name().to_string(), names);
        }
        Self { methods }
    }

    pub fn resolves(&self, method: &str, name: &str, kind: IdentKind) -> bool {
        self.methods.get(method).and_then(|m| m.get(name)) == Some(&kind)
    }

    /// Every variable and call in `program` names something valid in its method.
    pub fn all_resolve(&self, program: &Node) -> bool {
        program.methods().iter().all(|m| {
            let name = m.method_name();
            self.methods.contains_key(name)
                && m.preorder().iter().all(|n| match n.kind {
                    Kind::Var | Kind::Assign | Kind::VarDecl => self.resolves(name, &n.label, IdentKind::Variable),
                    Kind::Call => self.resolves(name, &n.label, IdentKind::Method),
                    _ => true,
                })
        })
    }
}

/// Optional filters beyond the three standard ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Drop candidates identical to the program under repair.
    pub drop_unchanged: bool,
    /// Drop candidates that fail the type checker.
    pub typecheck: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { drop_unchanged: true, typecheck: true }
    }
}

/// A candidate with names restored, as source and as a parsed program.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub patch: Patch,
    pub source: String,
    pub program: Node,
}

/// Maps placeholders back to the original names and renders the program.
pub fn restore_source(patch: &Patch, program: &Node) -> String {
    unparse(&patch.apply(program, true))
}

/// Restores names, then drops candidates that do not parse or that use
/// names the scope dictionary cannot resolve. Survivors keep their order.
pub fn apply_filters(patches: Vec<Patch>, program: &Node, dict: &ScopeDictionary, cfg: FilterConfig) -> Vec<Candidate> {
    let original = unparse(program);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for mut patch in patches {
        let source = restore_source(&patch, program);
        let Ok(parsed) = parse(&source) else { continue };
        if !dict.all_resolve(&parsed) {
            continue;
        }
        if cfg.drop_unchanged && (source == original || !seen.insert(source.clone())) {
            continue;
        }
        if cfg.typecheck && check(&parsed).is_err() {
            continue;
        }
        patch.source = source.clone();
        out.push(Candidate { patch, source, program: parsed });
    }
    out
}

/// Source tokens for edit similarity; falls back to whitespace splitting.
pub fn source_tokens(src: &str) -> Vec<String> {
    match lex(src) {
        Ok(toks) => toks.into_iter().map(|t| t.tok.text().to_string()).filter(|t| !t.is_empty()).collect(),
        Err(_) => src.split_whitespace().map(str::to_string).collect(),
    }
}

/// `1 - levenshtein / max length` over token sequences.
pub fn token_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (source_tokens(a), source_tokens(b));
    let longest = ta.len().max(tb.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::generic_levenshtein(&ta, &tb) as f64 / longest as f64
}

pub trait Reranker {
    fn rerank(&self, candidates: Vec<Candidate>, buggy_source: &str) -> Vec<Candidate>;
}

/// Score sum, then closeness to the buggy source, then original rank.
#[derive(Debug, Clone, Copy, Default)]
pub struct TieBreakReranker;

impl Reranker for TieBreakReranker {
    fn rerank(&self, candidates: Vec<Candidate>, buggy_source: &str) -> Vec<Candidate> {
        let mut keyed: Vec<(f64, Candidate)> = candidates.into_iter().map(|c| (token_similarity(&c.source, buggy_source), c)).collect();
        keyed.sort_by(|(sa, a), (sb, b)| {
            b.patch.score_sum.total_cmp(&a.patch.score_sum).then(sb.total_cmp(sa)).then(a.patch.rank.cmp(&b.patch.rank))
        });
        keyed.into_iter().map(|(_, c)| c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    /// The candidate at 1-based position `rank` passed every test.
    Plausible { rank: usize, candidate: Box<Candidate>, tried: usize },
    /// Nothing passed; the driver should move on to the next location.
    NextLocation { tried: usize },
    /// The wall-clock budget ran out.
    Timeout { tried: usize },
}

impl Validation {
    pub fn tried(&self) -> usize {
        match self {
            Validation::Plausible { tried, .. } | Validation::NextLocation { tried } | Validation::Timeout { tried } => *tried,
        }
    }
}

/// Runs the first `limit` candidates top-down against all tests.
pub fn validate(candidates: &[Candidate], tests: &[TestCase], limit: usize, deadline: Option<Instant>) -> Validation {
    for (i, c) in candidates.iter().take(limit).enumerate() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Validation::Timeout { tried: i };
        }
        if passes_all(&c.program, tests) {
            return Validation::Plausible { rank: i + 1, candidate: Box::new(c.clone()), tried: i + 1 };
        }
    }
    Validation::NextLocation { tried: candidates.len().min(limit) }
}

/// Whether a patched program matches the reference fix up to formatting.
pub fn is_correct(patched: &Node, reference: &Node) -> bool {
    patched.same_shape(reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub bug_id: String,
    pub tried: usize,
    pub plausible_rank: Option<usize>,
    pub correct: Option<bool>,
    pub wall_clock_ms: u64,
}

impl ValidationReport {
    pub fn new(bug_id: &str, tried: usize, plausible_rank: Option<usize>, correct: Option<bool>, elapsed: Duration) -> Self {
        Self { bug_id: bug_id.to_string(), tried, plausible_rank, correct, wall_clock_ms: elapsed.as_millis() as u64 }
    }
}
