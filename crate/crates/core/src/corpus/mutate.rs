//! Mutation operators and seeding of bug cases with a known bug type.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::idiom::Golden;
use super::BugCase;
use crate::diffpair::{ground_truth, BugType};
use crate::lang::types::{scope_at, signatures, Type};
use crate::lang::{check, execute, parse, unparse, Kind, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MutationKind {
    OpSwap,
    LiteralChange,
    IdentSwap,
    StmtDelete,
    CallWrap,
    CallUnwrap,
    BranchDelete,
    BranchInsert,
}

impl MutationKind {
    pub const ALL: [MutationKind; 8] = [
        MutationKind::OpSwap,
        MutationKind::LiteralChange,
        MutationKind::IdentSwap,
        MutationKind::StmtDelete,
        MutationKind::CallWrap,
        MutationKind::CallUnwrap,
        MutationKind::BranchDelete,
        MutationKind::BranchInsert,
    ];

    /// Whether the mutation changes tree shape rather than a label.
    pub fn is_structural(self) -> bool {
        !matches!(self, MutationKind::OpSwap | MutationKind::LiteralChange | MutationKind::IdentSwap)
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serialises");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Default mix: four in five mutations relabel a node.
pub const DEFAULT_MIX: [(MutationKind, u32); 8] = [
    (MutationKind::OpSwap, 35),
    (MutationKind::LiteralChange, 20),
    (MutationKind::IdentSwap, 25),
    (MutationKind::StmtDelete, 6),
    (MutationKind::CallWrap, 3),
    (MutationKind::CallUnwrap, 3),
    (MutationKind::BranchDelete, 4),
    (MutationKind::BranchInsert, 4),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    Relabel(String),
    Replace(Node),
    Delete,
    /// Replace an `if` by the statements of its then-block.
    Unguard,
}

/// A concrete mutation of node `target`, belonging to statement `stmt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub kind: MutationKind,
    pub stmt: usize,
    pub target: usize,
    pub edit: Edit,
}

fn swaps(op: &str) -> &'static [&'static str] {
    match op {
        "+" => &["-", "*"],
        "-" => &["+"],
        "*" => &["+", "-"],
        ">" => &["<", ">=", "<="],
        "<" => &["<=", ">", ">="],
        ">=" => &[">", "<"],
        "<=" => &["<", ">"],
        "==" => &["!="],
        "!=" => &["=="],
        "&&" => &["||"],
        "||" => &["&&"],
        _ => &[],
    }
}

/// Expression nodes owned by a statement (nested blocks excluded).
fn own_nodes(stmt: &Node) -> Vec<&Node> {
    fn go<'a>(n: &'a Node, out: &mut Vec<&'a Node>) {
        out.push(n);
        for c in n.children.iter().filter(|c| c.kind != Kind::Block) {
            go(c, out);
        }
    }
    let mut out = Vec::new();
    for c in stmt.children.iter().filter(|c| c.kind != Kind::Block) {
        go(c, &mut out);
    }
    out
}

fn int_helpers(program: &Node) -> Vec<String> {
    signatures(program)
        .into_iter()
        .filter(|(_, s)| s.params == [Type::Int] && s.ret == Type::Int)
        .map(|(n, _)| n)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Picks a concrete mutation of `kind` for statement `stmt`, if one applies.
pub fn plan_mutation<R: Rng>(rng: &mut R, program: &Node, stmt: usize, kind: MutationKind) -> Option<Mutation> {
    let s = program.find(stmt)?;
    let method = program.enclosing_method(stmt)?;
    let own = own_nodes(s);
    let mk = |target: usize, edit: Edit| Some(Mutation { kind, stmt, target, edit });
    match kind {
        MutationKind::OpSwap => {
            let n = own.into_iter().filter(|n| n.kind == Kind::BinOp && !swaps(&n.label).is_empty()).collect::<Vec<_>>();
            let n = n.choose(rng)?;
            mk(n.id, Edit::Relabel(swaps(&n.label).choose(rng)?.to_string()))
        }
        MutationKind::LiteralChange => {
            let n = *own.iter().filter(|n| n.kind == Kind::IntLit).collect::<Vec<_>>().choose(rng)?;
            let v: i64 = n.label.parse().ok()?;
            mk(n.id, Edit::Relabel((v + rng.gen_range(1..=2)).to_string()))
        }
        MutationKind::IdentSwap => {
            let scope = scope_at(method, stmt);
            let vars: Vec<&&Node> = own.iter().filter(|n| n.kind == Kind::Var).collect();
            let n = vars.choose(rng)?;
            let ty = scope.iter().rev().find(|(v, _)| *v == n.label).map(|(_, t)| *t)?;
            let others: Vec<&String> = scope.iter().filter(|(v, t)| *t == ty && *v != n.label).map(|(v, _)| v).collect();
            mk(n.id, Edit::Relabel(others.choose(rng)?.to_string()))
        }
        MutationKind::StmtDelete => {
            let parent = program.find(*program.parents().get(&stmt)?)?;
            let removable = parent.kind == Kind::Block && parent.children.len() >= 2 && matches!(s.kind, Kind::Assign | Kind::ExprStmt);
            // Dropping a loop counter update only produces a non-terminating loop.
            if !removable || is_counter_of_loop(program, stmt) {
                return None;
            }
            mk(stmt, Edit::Delete)
        }
        MutationKind::CallWrap => {
            let helpers = int_helpers(program);
            let scope = scope_at(method, stmt);
            let vars: Vec<&&Node> = own.iter().filter(|n| n.kind == Kind::Var && scope.iter().any(|(v, t)| *v == n.label && *t == Type::Int)).collect();
            let n = vars.choose(rng)?;
            let h = helpers.iter().filter(|h| *h != method.method_name()).collect::<Vec<_>>();
            let h = h.choose(rng)?;
            mk(n.id, Edit::Replace(Node::new(Kind::Call, h.as_str(), vec![Node::leaf(Kind::Var, n.label.clone())])))
        }
        MutationKind::CallUnwrap => {
            let helpers = int_helpers(program);
            let calls: Vec<&&Node> = own.iter().filter(|n| n.kind == Kind::Call && n.children.len() == 1 && helpers.contains(&n.label)).collect();
            let n = calls.choose(rng)?;
            mk(n.id, Edit::Replace(n.children[0].clone()))
        }
        MutationKind::BranchDelete => {
            let parent = program.find(*program.parents().get(&stmt)?)?;
            if s.kind != Kind::If || s.children.len() != 2 || parent.kind != Kind::Block || s.children[1].children.is_empty() {
                return None;
            }
            mk(stmt, Edit::Unguard)
        }
        MutationKind::BranchInsert => {
            if s.kind != Kind::Assign || is_counter_of_loop(program, stmt) {
                return None;
            }
            let ints: Vec<String> = scope_at(method, stmt).into_iter().filter(|(_, t)| *t == Type::Int).map(|(v, _)| v).collect();
            let ints: Vec<&String> = ints.iter().filter(|v| *v != &s.label).collect();
            if ints.len() < 2 {
                return None;
            }
            let pick: Vec<&&String> = ints.choose_multiple(rng, 2).collect();
            let cond = Node::new(Kind::BinOp, ">", vec![Node::leaf(Kind::Var, pick[0].as_str()), Node::leaf(Kind::Var, pick[1].as_str())]);
            let guarded = Node::new(Kind::If, "", vec![cond, Node::new(Kind::Block, "", vec![s.clone()])]);
            mk(stmt, Edit::Replace(guarded))
        }
    }
}

/// Whether `stmt` updates the variable tested by its enclosing loop.
fn is_counter_of_loop(program: &Node, stmt: usize) -> bool {
    let Some(s) = program.find(stmt) else { return false };
    if s.kind != Kind::Assign {
        return false;
    }
    program.ancestors(stmt).unwrap_or_default().iter().any(|a| {
        a.kind == Kind::While && a.children[0].preorder().iter().any(|n| n.kind == Kind::Var && n.label == s.label)
    })
}

/// Applies mutations to a copy of `program` and renumbers it.
pub fn apply_mutations(program: &Node, muts: &[Mutation]) -> Node {
    fn go(n: &mut Node, muts: &[Mutation]) {
        let mut kids = Vec::with_capacity(n.children.len());
        for mut c in std::mem::take(&mut n.children) {
            match muts.iter().find(|m| m.target == c.id).map(|m| &m.edit) {
                Some(Edit::Delete) => {}
                Some(Edit::Unguard) => {
                    let mut body = c.children.swap_remove(1);
                    body.children.iter_mut().for_each(|s| go(s, muts));
                    kids.extend(body.children);
                }
                Some(Edit::Replace(r)) => kids.push(r.clone()),
                Some(Edit::Relabel(l)) => {
                    c.label = l.clone();
                    go(&mut c, muts);
                    kids.push(c);
                }
                None => {
                    go(&mut c, muts);
                    kids.push(c);
                }
            }
        }
        n.children = kids;
    }
    let mut out = program.clone();
    go(&mut out, muts);
    out.renumber();
    out
}

fn fails_some(program: &Node, tests: &[crate::lang::TestCase]) -> bool {
    tests.iter().any(|t| !execute(program, t, false).passed)
}

/// The top-level statement of the method body that contains `stmt`.
fn top_level_of(program: &Node, stmt: usize) -> Option<usize> {
    // Ancestors run program, method, body, then the top-level statement.
    let anc = program.ancestors(stmt)?;
    anc.get(3).map(|n| n.id).or(Some(stmt))
}

/// Candidate site sets for a bug type: lists of statement ids.
fn choose_sites<R: Rng>(rng: &mut R, g: &Golden, ty: BugType) -> Option<Vec<usize>> {
    let order: Vec<usize> = g.program.statement_ids().into_iter().filter(|s| g.mutable.contains(s)).collect();
    let all = g.program.statement_ids();
    let pos = |s: usize| all.iter().position(|&x| x == s).expect("statement");
    let singles: Vec<usize> = order.clone();
    let pairs: Vec<[usize; 2]> = order.windows(2).filter(|w| pos(w[1]) == pos(w[0]) + 1).map(|w| [w[0], w[1]]).collect();
    let region = |s: usize| top_level_of(&g.program, s);
    let apart = |a: &[usize], b: &[usize]| {
        let ra: BTreeSet<_> = a.iter().map(|&s| region(s)).collect();
        b.iter().all(|&s| !ra.contains(&region(s)))
    };
    match ty {
        BugType::Type1 => Some(vec![*singles.choose(rng)?]),
        BugType::Type2 => Some(pairs.choose(rng)?.to_vec()),
        BugType::Type3 => {
            let a = *singles.choose(rng)?;
            let b = *singles.iter().filter(|&&b| apart(&[a], &[b])).collect::<Vec<_>>().choose(rng)?;
            Some(vec![a, *b])
        }
        BugType::Type4 => {
            let a = *pairs.choose(rng)?;
            let b = *pairs.iter().filter(|b| apart(&a, *b)).collect::<Vec<_>>().choose(rng)?;
            Some(vec![a[0], a[1], b[0], b[1]])
        }
        BugType::Type5 => {
            let a = *pairs.choose(rng)?;
            let b = *singles.iter().filter(|&&b| apart(&a, &[b])).collect::<Vec<_>>().choose(rng)?;
            Some(vec![a[0], a[1], *b])
        }
    }
}

/// One attempt at seeding a bug of type `ty` into `g`.
pub fn seed_one<R: Rng>(rng: &mut R, g: &Golden, ty: BugType, kind: MutationKind, id: &str) -> Option<BugCase> {
    let sites = choose_sites(rng, g, ty)?;
    let muts: Vec<Mutation> = sites.iter().map(|&s| plan_mutation(rng, &g.program, s, kind)).collect::<Option<_>>()?;
    // Each site on its own must break a test.
    for m in &muts {
        if !fails_some(&apply_mutations(&g.program, std::slice::from_ref(m)), &g.tests) {
            return None;
        }
    }
    let mutant = apply_mutations(&g.program, &muts);
    let before = unparse(&mutant);
    let after = unparse(&g.program);
    let reparsed = parse(&before).ok()?;
    if before == after || check(&reparsed).is_err() || !fails_some(&reparsed, &g.tests) {
        return None;
    }
    let (_, _, found) = ground_truth(&reparsed, &parse(&after).ok()?);
    if found != Some(ty) {
        return None;
    }
    Some(BugCase { id: id.to_string(), before, after, tests: g.tests.clone(), bug_type: Some(ty), mutation: Some(kind) })
}

fn pick_kind<R: Rng>(rng: &mut R, mix: &[(MutationKind, u32)]) -> MutationKind {
    mix.choose_weighted(rng, |k| k.1).map(|k| k.0).unwrap_or(MutationKind::OpSwap)
}

/// Seeds `count` bugs, cycling through the five bug types, so a corpus of
/// `5k` bugs holds `k` of each type. Programs are used in turn; a program
/// that cannot host the requested type is skipped for that case.
pub fn seed_mutants<R: Rng>(rng: &mut R, programs: &[Golden], mix: &[(MutationKind, u32)], count: usize, prefix: &str) -> Vec<BugCase> {
    let mut out = Vec::with_capacity(count);
    let mut next_program = 0usize;
    let mut attempts = 0usize;
    while out.len() < count && attempts < count * 400 && !programs.is_empty() {
        let ty = BugType::ALL[out.len() % 5];
        let g = &programs[next_program % programs.len()];
        attempts += 1;
        for _ in 0..20 {
            let kind = pick_kind(rng, mix);
            if let Some(case) = seed_one(rng, g, ty, kind, &format!("{prefix}{:04}", out.len() + 1)) {
                out.push(case);
                break;
            }
        }
        next_program += 1;
    }
    out
}
