//! Intraprocedural def-use sets, statement control-flow graph and reaching
//! definitions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::lang::{Kind, Node};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StmtDefUse {
    pub defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
}

/// Defs and uses of every statement in one method.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DefUse {
    pub per_stmt: BTreeMap<usize, StmtDefUse>,
}

impl DefUse {
    pub fn get(&self, stmt: usize) -> Option<&StmtDefUse> {
        self.per_stmt.get(&stmt)
    }
}

fn collect_vars(n: &Node, out: &mut BTreeSet<String>) {
    if n.kind == Kind::Var {
        out.insert(n.label.clone());
    }
    for c in &n.children {
        if c.kind != Kind::Block {
            collect_vars(c, out);
        }
    }
}

pub fn stmt_def_use(s: &Node) -> StmtDefUse {
    let mut du = StmtDefUse::default();
    collect_vars(s, &mut du.uses);
    if matches!(s.kind, Kind::VarDecl | Kind::Assign) {
        du.defs.insert(s.label.clone());
    }
    du
}

pub fn compute_def_use(method: &Node) -> DefUse {
    DefUse {
        per_stmt: method.statements().into_iter().map(|s| (s.id, stmt_def_use(s))).collect(),
    }
}

pub const ENTRY: usize = usize::MAX - 1;
pub const EXIT: usize = usize::MAX;

/// Statement-level control-flow graph with synthetic entry and exit nodes.
#[derive(Debug, Clone, Default)]
pub struct Cfg {
    pub succ: BTreeMap<usize, BTreeSet<usize>>,
}

impl Cfg {
    pub fn build(method: &Node) -> Cfg {
        let mut cfg = Cfg::default();
        cfg.succ.insert(EXIT, BTreeSet::new());
        let body = method.children.last().expect("method body");
        let first = cfg.block(body, EXIT);
        cfg.edge(ENTRY, first);
        cfg
    }

    fn edge(&mut self, a: usize, b: usize) {
        self.succ.entry(a).or_default().insert(b);
    }

    /// Wires a block whose fall-through goes to `next`; returns its entry node.
    fn block(&mut self, b: &Node, next: usize) -> usize {
        let mut follow = next;
        for s in b.children.iter().rev() {
            follow = self.stmt(s, follow);
        }
        follow
    }

    fn stmt(&mut self, s: &Node, next: usize) -> usize {
        self.succ.entry(s.id).or_default();
        match s.kind {
            Kind::Return => self.edge(s.id, EXIT),
            Kind::If => {
                let then = self.block(&s.children[1], next);
                self.edge(s.id, then);
                let other = match s.children.get(2) {
                    Some(e) => self.block(e, next),
                    None => next,
                };
                self.edge(s.id, other);
            }
            Kind::While => {
                let body = self.block(&s.children[1], s.id);
                self.edge(s.id, body);
                self.edge(s.id, next);
            }
            _ => self.edge(s.id, next),
        }
        s.id
    }

    pub fn preds(&self) -> BTreeMap<usize, BTreeSet<usize>> {
        let mut p: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (&a, bs) in &self.succ {
            p.entry(a).or_default();
            for &b in bs {
                p.entry(b).or_default().insert(a);
            }
        }
        p
    }
}

/// A definition site: the defining statement and the variable.
pub type Def = (usize, String);

/// Reaching definitions at the entry of every statement.
#[derive(Debug, Clone, Default)]
pub struct ReachingDefs {
    pub reach_in: BTreeMap<usize, BTreeSet<Def>>,
}

pub fn reaching_definitions(method: &Node, du: &DefUse) -> ReachingDefs {
    let cfg = Cfg::build(method);
    let preds = cfg.preds();
    let gen = |s: usize| -> BTreeSet<Def> {
        du.get(s).map(|d| d.defs.iter().map(|v| (s, v.clone())).collect()).unwrap_or_default()
    };
    let mut out: BTreeMap<usize, BTreeSet<Def>> = cfg.succ.keys().map(|&k| (k, gen(k))).collect();
    let mut reach_in: BTreeMap<usize, BTreeSet<Def>> = BTreeMap::new();
    let mut work: VecDeque<usize> = cfg.succ.keys().copied().collect();
    while let Some(n) = work.pop_front() {
        let inn: BTreeSet<Def> = preds.get(&n).into_iter().flatten().flat_map(|p| out[p].iter().cloned()).collect();
        let killed = du.get(n).map(|d| d.defs.clone()).unwrap_or_default();
        let mut new_out: BTreeSet<Def> = inn.iter().filter(|(_, v)| !killed.contains(v)).cloned().collect();
        new_out.extend(gen(n));
        reach_in.insert(n, inn);
        if new_out != out[&n] {
            out.insert(n, new_out);
            work.extend(cfg.succ[&n].iter().copied());
        }
    }
    reach_in.retain(|k, _| *k != ENTRY && *k != EXIT);
    ReachingDefs { reach_in }
}

/// Data-flow facts for one method, computed once and queried many times.
#[derive(Debug, Clone)]
pub struct MethodFlow {
    pub def_use: DefUse,
    pub reaching: ReachingDefs,
}

impl MethodFlow {
    pub fn new(method: &Node) -> Self {
        let def_use = compute_def_use(method);
        let reaching = reaching_definitions(method, &def_use);
        Self { def_use, reaching }
    }

    fn flows(&self, from: usize, to: usize) -> bool {
        let (Some(u), Some(inn)) = (self.def_use.get(to), self.reaching.reach_in.get(&to)) else {
            return false;
        };
        inn.iter().any(|(s, v)| *s == from && u.uses.contains(v))
    }

    /// Whether a definition in either statement reaches a use in the other.
    pub fn dependent(&self, a: usize, b: usize) -> bool {
        a != b && (self.flows(a, b) || self.flows(b, a))
    }
}

pub fn data_dependent(s1: usize, s2: usize, method: &Node) -> bool {
    MethodFlow::new(method).dependent(s1, s2)
}
