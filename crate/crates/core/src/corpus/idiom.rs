//! Small "dispatcher" programs written in a fixed house style, used as the
//! golden versions that bugs are seeded into.
//!
//! ```text
//! func twice(v: int): int { return v * 2; }
//! func run(mode: int, x: int, y: int): int {
//!     let acc = 0;
//!     let i = 0;
//!     if (mode == 0) { acc = acc + x; acc = acc * 2; }
//!     if (mode == 1) { while (i < y) { acc = acc + x; i = i + 1; } }
//!     ...
//!     return acc;
//! }
//! ```

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lang::{execute, parse, Kind, Node, TestCase, Value};

/// A program that passes its tests, with the statements bugs may be seeded into.
#[derive(Debug, Clone)]
pub struct Golden {
    pub program: Node,
    pub tests: Vec<TestCase>,
    pub mutable: BTreeSet<usize>,
}

impl Golden {
    /// Fills in expectations by running `program`; every statement is mutable.
    pub fn from_program(program: Node, tests: Vec<TestCase>) -> Option<Golden> {
        let tests = expectations(&program, tests)?;
        let mutable = program.statement_ids().into_iter().collect();
        Some(Golden { program, tests, mutable })
    }
}

/// Records each test's result as its expectation; `None` if any test errors.
pub fn expectations(program: &Node, tests: Vec<TestCase>) -> Option<Vec<TestCase>> {
    tests
        .into_iter()
        .map(|mut t| {
            t.expect = None;
            let out = execute(program, &t, false);
            if out.error.is_some() {
                return None;
            }
            t.expect = out.returned;
            Some(t)
        })
        .collect()
}

const HELPERS: [(&str, &str); 3] = [("twice", "v * 2"), ("inc", "v + 1"), ("square", "v * v")];

#[derive(Debug, Clone, Copy)]
pub struct IdiomConfig {
    pub min_modes: usize,
    pub max_modes: usize,
    pub min_branch: usize,
    pub max_branch: usize,
    pub tests_per_mode: usize,
}

impl Default for IdiomConfig {
    fn default() -> Self {
        Self { min_modes: 3, max_modes: 5, min_branch: 2, max_branch: 4, tests_per_mode: 3 }
    }
}

struct Writer<'r, R: Rng> {
    rng: &'r mut R,
    helpers: Vec<&'static str>,
    out: String,
}

impl<R: Rng> Writer<'_, R> {
    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn accumulate(&mut self, depth: usize) {
        if !self.helpers.is_empty() && self.rng.gen_bool(0.3) {
            let h = *self.helpers.choose(self.rng).expect("non-empty");
            self.line(depth, &format!("acc = acc + {h}(x);"));
        } else {
            self.line(depth, "acc = acc + x;");
        }
    }

    fn simple(&mut self, depth: usize) {
        match self.rng.gen_range(0..6) {
            0..=2 => self.accumulate(depth),
            3 | 4 => self.line(depth, "acc = acc * 2;"),
            _ => self.line(depth, "acc = acc + 1;"),
        }
    }

    fn guard(&mut self, depth: usize) {
        self.line(depth, "if (x > y) {");
        for _ in 0..self.rng.gen_range(1..=2) {
            self.simple(depth + 1);
        }
        if self.rng.gen_bool(0.4) {
            self.line(depth, "} else {");
            self.simple(depth + 1);
        }
        self.line(depth, "}");
    }

    fn repeat(&mut self, depth: usize) {
        self.line(depth, "while (i < y) {");
        self.accumulate(depth + 1);
        self.line(depth + 1, "i = i + 1;");
        self.line(depth, "}");
    }

    fn branch(&mut self, depth: usize, len: usize) {
        let mut looped = false;
        for _ in 0..len {
            match self.rng.gen_range(0..10) {
                0..=5 => self.simple(depth),
                6 | 7 => self.guard(depth),
                _ if !looped => {
                    looped = true;
                    self.repeat(depth);
                }
                _ => self.simple(depth),
            }
        }
    }
}

/// One golden dispatcher program with tests for every mode. Only the
/// statements inside mode branches are open to mutation.
pub fn idiom_program<R: Rng>(rng: &mut R, cfg: IdiomConfig) -> Golden {
    let mut helpers: Vec<&'static str> = HELPERS.iter().map(|h| h.0).collect();
    helpers.shuffle(rng);
    helpers.truncate(rng.gen_range(0..=2));
    let mut w = Writer { rng, helpers: helpers.clone(), out: String::new() };
    for (name, body) in HELPERS.iter().filter(|h| helpers.contains(&h.0)) {
        w.line(0, &format!("func {name}(v: int): int {{"));
        w.line(1, &format!("return {body};"));
        w.line(0, "}");
    }
    let modes = w.rng.gen_range(cfg.min_modes..=cfg.max_modes);
    w.line(0, "func run(mode: int, x: int, y: int): int {");
    w.line(1, "let acc = 0;");
    w.line(1, "let i = 0;");
    for m in 0..modes {
        w.line(1, &format!("if (mode == {m}) {{"));
        let len = w.rng.gen_range(cfg.min_branch..=cfg.max_branch);
        w.branch(2, len);
        w.line(1, "}");
    }
    w.line(1, "return acc;");
    w.line(0, "}");
    let program = parse(&w.out).expect("generated source parses");
    let run = program.methods().into_iter().find(|m| m.method_name() == "run").expect("entry method");
    let body = run.children.last().expect("body");
    let mut mutable = BTreeSet::new();
    for s in &body.children {
        if s.kind == Kind::If {
            for inner in s.children[1].statements() {
                mutable.insert(inner.id);
            }
        }
    }
    let mut tests = Vec::new();
    for m in 0..modes {
        // Both sides of `x > y`, with x and y distinct and non-zero.
        let mut args: Vec<(i64, i64)> = vec![(w.rng.gen_range(3..=6), w.rng.gen_range(1..=2)), (w.rng.gen_range(1..=2), w.rng.gen_range(3..=4))];
        while args.len() < cfg.tests_per_mode {
            let x = w.rng.gen_range(1..=6);
            let y = w.rng.gen_range(1..=4);
            if x != y && !args.contains(&(x, y)) {
                args.push((x, y));
            }
        }
        for (j, (x, y)) in args.into_iter().enumerate() {
            tests.push(TestCase {
                name: format!("mode{m}_{j}"),
                entry: "run".into(),
                args: vec![Value::Int(m as i64), Value::Int(x), Value::Int(y)],
                expect: None,
            });
        }
    }
    let tests = expectations(&program, tests).expect("golden programs run cleanly");
    Golden { program, tests, mutable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{check, passes_all};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn golden_programs_pass_their_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let g = idiom_program(&mut rng, IdiomConfig::default());
            check(&g.program).unwrap();
            assert!(passes_all(&g.program, &g.tests));
            assert!(!g.mutable.is_empty());
            assert!(g.tests.iter().all(|t| t.expect.is_some()));
        }
    }
}
