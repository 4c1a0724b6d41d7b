//! Program generation, bug seeding, the on-disk corpus layout and mining of
//! training data from bug cases.
//!
//! A corpus directory holds one directory per bug:
//! `<bugId>/{before/main.mini, after/main.mini, tests/*.test.json, meta.json}`.

pub mod gen;
pub mod idiom;
pub mod mutate;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffpair::{ground_truth, pair_subtrees, BugType, PairRecord};
use crate::embed::{alpha_rename, node_token};
use crate::expansion::candidate_window;
use crate::lang::{parse, passes_all, Node, TestCase};
use mutate::MutationKind;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}: syntax error: {1}")]
    Syntax(String, String),
    #[error("{0}: the buggy version passes every test")]
    NotFailing(String),
    #[error("{0}: the fixed version fails a test")]
    FixFails(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugCase {
    pub id: String,
    pub before: String,
    pub after: String,
    pub tests: Vec<TestCase>,
    pub bug_type: Option<BugType>,
    pub mutation: Option<MutationKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Meta {
    id: String,
    #[serde(default)]
    bug_type: Option<BugType>,
    #[serde(default)]
    mutation: Option<MutationKind>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CorpusError> {
    r.map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

impl BugCase {
    pub fn parse_before(&self) -> Result<Node, CorpusError> {
        parse(&self.before).map_err(|e| CorpusError::Syntax(format!("{}/before", self.id), e.to_string()))
    }

    pub fn parse_after(&self) -> Result<Node, CorpusError> {
        parse(&self.after).map_err(|e| CorpusError::Syntax(format!("{}/after", self.id), e.to_string()))
    }

    /// The buggy version fails a test and the fixed version passes all.
    pub fn check(&self) -> Result<(), CorpusError> {
        if passes_all(&self.parse_before()?, &self.tests) {
            return Err(CorpusError::NotFailing(self.id.clone()));
        }
        if !passes_all(&self.parse_after()?, &self.tests) {
            return Err(CorpusError::FixFails(self.id.clone()));
        }
        Ok(())
    }

    pub fn write(&self, corpus: &Path) -> Result<PathBuf, CorpusError> {
        let dir = corpus.join(&self.id);
        for sub in ["before", "after", "tests"] {
            let p = dir.join(sub);
            io(&p, fs::create_dir_all(&p))?;
        }
        let p = dir.join("before/main.mini");
        io(&p, fs::write(&p, &self.before))?;
        let p = dir.join("after/main.mini");
        io(&p, fs::write(&p, &self.after))?;
        for t in &self.tests {
            let p = dir.join("tests").join(format!("{}.test.json", t.name));
            io(&p, fs::write(&p, serde_json::to_string_pretty(t).expect("test serialises")))?;
        }
        let meta = Meta { id: self.id.clone(), bug_type: self.bug_type, mutation: self.mutation };
        let p = dir.join("meta.json");
        io(&p, fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serialises")))?;
        Ok(dir)
    }

    /// Reads one bug directory. `after/` and `meta.json` are optional, so a
    /// directory with only the buggy program and its tests can be repaired.
    pub fn read(dir: &Path) -> Result<BugCase, CorpusError> {
        let layout = |m: &str| CorpusError::Layout { path: dir.to_path_buf(), message: m.to_string() };
        let before_path = dir.join("before/main.mini");
        if !before_path.is_file() {
            return Err(layout("missing before/main.mini"));
        }
        let before = io(&before_path, fs::read_to_string(&before_path))?;
        let after_path = dir.join("after/main.mini");
        let after = if after_path.is_file() { io(&after_path, fs::read_to_string(&after_path))? } else { String::new() };
        let tests_dir = dir.join("tests");
        if !tests_dir.is_dir() {
            return Err(layout("missing tests/"));
        }
        let mut files: Vec<PathBuf> = io(&tests_dir, fs::read_dir(&tests_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".test.json"))
            .collect();
        files.sort();
        let mut tests = Vec::new();
        for f in files {
            let text = io(&f, fs::read_to_string(&f))?;
            tests.push(serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: f.clone(), source })?);
        }
        if tests.is_empty() {
            return Err(layout("no tests"));
        }
        let meta_path = dir.join("meta.json");
        let meta: Option<Meta> = if meta_path.is_file() {
            let text = io(&meta_path, fs::read_to_string(&meta_path))?;
            Some(serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: meta_path.clone(), source })?)
        } else {
            None
        };
        let id = meta
            .as_ref()
            .map(|m| m.id.clone())
            .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        Ok(BugCase {
            id,
            before,
            after,
            tests,
            bug_type: meta.as_ref().and_then(|m| m.bug_type),
            mutation: meta.and_then(|m| m.mutation),
        })
    }
}

/// Writes every case under `corpus`.
pub fn write_corpus(corpus: &Path, cases: &[BugCase]) -> Result<(), CorpusError> {
    io(corpus, fs::create_dir_all(corpus))?;
    cases.iter().try_for_each(|c| c.write(corpus).map(|_| ()))
}

/// Reads every bug directory, in name order; broken ones are reported
/// separately and do not stop the rest.
pub fn read_corpus(corpus: &Path) -> Result<(Vec<BugCase>, Vec<CorpusError>), CorpusError> {
    let mut dirs: Vec<PathBuf> = io(corpus, fs::read_dir(corpus))?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for d in dirs {
        match BugCase::read(&d) {
            Ok(c) => cases.push(c),
            Err(e) => errors.push(e),
        }
    }
    Ok((cases, errors))
}

/// Alpha-renamed header tokens of statement `stmt`.
pub fn statement_tokens(program: &Node, stmt: usize) -> Vec<String> {
    let Some(m) = program.enclosing_method(stmt) else { return Vec::new() };
    let (renamed, _) = alpha_rename(m);
    renamed.find(stmt).map(|s| s.header().preorder().into_iter().map(|n| node_token(n).to_string()).collect()).unwrap_or_default()
}

/// A labelled window of statements for the statement classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledWindow {
    pub statements: Vec<Vec<String>>,
    pub labels: Vec<bool>,
}

/// Training data extracted from a corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Mined {
    pub pairs: Vec<PairRecord>,
    /// Per bug: hunks, each a list of statement token lists.
    pub hunk_sets: Vec<Vec<Vec<Vec<String>>>>,
    pub windows: Vec<LabelledWindow>,
    /// Per bug: statements in each ground-truth hunk.
    pub shapes: Vec<(String, Vec<usize>)>,
    pub sentences: Vec<Vec<String>>,
}

/// Classifier windows of `n` statements either side of each buggy
/// statement, labelled with the ground truth.
pub fn labelled_windows(program: &Node, buggy: &BTreeSet<usize>, n: usize) -> Vec<LabelledWindow> {
    let mut out = Vec::new();
    for &s in buggy {
        let Some(m) = program.enclosing_method(s) else { continue };
        let (cands, _) = candidate_window(m, s, n);
        let (renamed, _) = alpha_rename(m);
        out.push(LabelledWindow {
            statements: cands
                .iter()
                .map(|&c| renamed.find(c).map(|x| x.header().preorder().into_iter().map(|t| node_token(t).to_string()).collect()).unwrap_or_default())
                .collect(),
            labels: cands.iter().map(|c| buggy.contains(c)).collect(),
        });
    }
    out
}

/// Diffs every case and collects subtree pairs, fixed-together hunk sets,
/// classifier windows and embedding sentences. Cases that fail to parse are
/// reported and skipped.
pub fn mine_corpus(cases: &[BugCase], window: usize) -> (Mined, Vec<CorpusError>) {
    let mut mined = Mined::default();
    let mut errors = Vec::new();
    for c in cases {
        let (before, after) = match (c.parse_before(), c.parse_after()) {
            (Ok(b), Ok(a)) => (b, a),
            (Err(e), _) | (_, Err(e)) => {
                errors.push(e);
                continue;
            }
        };
        let (d, runs, _) = ground_truth(&before, &after);
        for p in pair_subtrees(&before, &after, &d) {
            let anchor = p.buggy_id().and_then(|b| before.enclosing_method(b)).map(|m| m.method_name().to_string()).or_else(|| {
                p.fixed_id().and_then(|f| after.enclosing_method(f)).map(|m| m.method_name().to_string())
            });
            let find = |prog: &Node| anchor.as_deref().and_then(|a| prog.methods().into_iter().find(|m| m.method_name() == a).cloned());
            let (Some(mb), Some(ma)) = (find(&before), find(&after)) else { continue };
            mined.pairs.push(PairRecord {
                bug_id: c.id.clone(),
                buggy_subtree: p.buggy.clone(),
                fixed_subtree: p.fixed.clone(),
                method_before: mb,
                method_after: ma,
            });
        }
        mined.hunk_sets.push(runs.iter().map(|h| h.iter().map(|&s| statement_tokens(&before, s)).collect()).collect());
        let buggy: BTreeSet<usize> = runs.iter().flatten().copied().collect();
        mined.windows.extend(labelled_windows(&before, &buggy, window));
        mined.shapes.push((c.id.clone(), runs.iter().map(Vec::len).collect()));
        for prog in [&before, &after] {
            for m in prog.methods() {
                let (renamed, _) = alpha_rename(m);
                let wrapped = Node::new(crate::lang::Kind::Program, "", vec![renamed]);
                mined.sentences.extend(crate::embed::sentences(&wrapped));
            }
        }
    }
    (mined, errors)
}
