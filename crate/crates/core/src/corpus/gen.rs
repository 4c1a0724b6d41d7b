//! Random well-typed, terminating programs for property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lang::{Kind, Node, TestCase, Type, Value};

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub methods: usize,
    pub max_block: usize,
    pub max_nesting: usize,
    pub max_expr_depth: usize,
    pub tests: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { methods: 3, max_block: 4, max_nesting: 2, max_expr_depth: 3, tests: 4 }
    }
}

const NAMES: [&str; 16] =
    ["a", "b", "c", "x", "y", "z", "n", "total", "count", "acc", "flag", "msg", "tmp", "best", "limit", "name"];
const STRINGS: [&str; 6] = ["\"\"", "\"a\"", "\"hi\"", "\"x y\"", "\"q\\\"t\"", "\"tab\\t\""];

#[derive(Clone)]
struct Sig {
    name: String,
    params: Vec<Type>,
    ret: Option<Type>,
}

struct Scope {
    vars: Vec<(String, Type, bool)>,
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    cfg: GenConfig,
    sigs: Vec<Sig>,
    scopes: Vec<Scope>,
    used: Vec<String>,
    counters: usize,
}

fn ty_name(t: Type) -> &'static str {
    t.name()
}

pub fn lit_int(v: i64) -> Node {
    if v < 0 {
        Node::new(Kind::UnaryOp, "-", vec![Node::leaf(Kind::IntLit, (-v).to_string())])
    } else {
        Node::leaf(Kind::IntLit, v.to_string())
    }
}

pub fn var(name: &str) -> Node {
    Node::leaf(Kind::Var, name)
}

pub fn bin(op: &str, l: Node, r: Node) -> Node {
    Node::new(Kind::BinOp, op, vec![l, r])
}

impl<R: Rng> Gen<'_, R> {
    fn visible(&self, t: Type) -> Vec<String> {
        self.scopes.iter().flat_map(|s| s.vars.iter()).filter(|v| v.1 == t).map(|v| v.0.clone()).collect()
    }

    fn assignable(&self) -> Vec<(String, Type)> {
        self.scopes.iter().flat_map(|s| s.vars.iter()).filter(|v| v.2).map(|v| (v.0.clone(), v.1)).collect()
    }

    fn fresh(&mut self) -> String {
        let free: Vec<&str> = NAMES.iter().copied().filter(|n| !self.used.iter().any(|u| u == n)).collect();
        let name = match free.choose(self.rng) {
            Some(n) => n.to_string(),
            None => format!("v{}", self.used.len()),
        };
        self.used.push(name.clone());
        name
    }

    fn declare(&mut self, name: &str, t: Type, assignable: bool) {
        self.scopes.last_mut().expect("scope").vars.push((name.to_string(), t, assignable));
    }

    fn pick_type(&mut self) -> Type {
        *[Type::Int, Type::Int, Type::Int, Type::Bool, Type::Str].choose(self.rng).expect("types")
    }

    fn expr(&mut self, t: Type, depth: usize) -> Node {
        let vars = self.visible(t);
        let calls: Vec<Sig> = self.sigs.iter().filter(|s| s.ret == Some(t)).cloned().collect();
        let leaf = depth == 0 || self.rng.gen_bool(0.3);
        if leaf {
            if !vars.is_empty() && self.rng.gen_bool(0.6) {
                return var(vars.choose(self.rng).expect("var"));
            }
            return match t {
                Type::Int => lit_int(self.rng.gen_range(-3..20)),
                Type::Bool => Node::leaf(Kind::BoolLit, if self.rng.gen() { "true" } else { "false" }),
                _ => Node::leaf(Kind::StrLit, *STRINGS.choose(self.rng).expect("string")),
            };
        }
        if !calls.is_empty() && self.rng.gen_bool(0.15) {
            let sig = calls.choose(self.rng).expect("call").clone();
            let args = sig.params.iter().map(|&p| self.expr(p, depth - 1)).collect();
            return Node::new(Kind::Call, sig.name, args);
        }
        let d = depth - 1;
        match t {
            Type::Int => match self.rng.gen_range(0..10) {
                0 => Node::new(Kind::UnaryOp, "-", vec![self.expr(Type::Int, d)]),
                1 => bin(["/", "%"][self.rng.gen_range(0..2)], self.expr(Type::Int, d), self.expr(Type::Int, d)),
                _ => {
                    let op = *["+", "-", "*"].choose(self.rng).expect("op");
                    bin(op, self.expr(Type::Int, d), self.expr(Type::Int, d))
                }
            },
            Type::Bool => match self.rng.gen_range(0..8) {
                0 => Node::new(Kind::UnaryOp, "!", vec![self.expr(Type::Bool, d)]),
                1 | 2 => {
                    let op = *["&&", "||"].choose(self.rng).expect("op");
                    bin(op, self.expr(Type::Bool, d), self.expr(Type::Bool, d))
                }
                3 => {
                    let u = if self.rng.gen() { Type::Str } else { Type::Bool };
                    let op = *["==", "!="].choose(self.rng).expect("op");
                    bin(op, self.expr(u, d), self.expr(u, d))
                }
                _ => {
                    let op = *["<", "<=", ">", ">=", "==", "!="].choose(self.rng).expect("op");
                    bin(op, self.expr(Type::Int, d), self.expr(Type::Int, d))
                }
            },
            _ => bin("+", self.expr(Type::Str, d), self.expr(Type::Str, d)),
        }
    }

    fn block(&mut self, nesting: usize, ret: Option<Type>, must_return: bool) -> Node {
        self.scopes.push(Scope { vars: Vec::new() });
        let n = self.rng.gen_range(1..=self.cfg.max_block);
        let mut stmts: Vec<Node> = Vec::new();
        for _ in 0..n {
            stmts.extend(self.stmt(nesting, ret));
        }
        if must_return || (self.rng.gen_bool(0.15) && nesting > 0) {
            stmts.push(self.ret(ret));
        }
        self.scopes.pop();
        Node::new(Kind::Block, "", stmts)
    }

    fn ret(&mut self, ret: Option<Type>) -> Node {
        match ret {
            Some(t) => Node::new(Kind::Return, "", vec![self.expr(t, self.cfg.max_expr_depth)]),
            None => Node::leaf(Kind::Return, ""),
        }
    }

    fn stmt(&mut self, nesting: usize, ret: Option<Type>) -> Vec<Node> {
        let e = self.cfg.max_expr_depth;
        let choice = self.rng.gen_range(0..10);
        match choice {
            0..=2 => {
                let t = self.pick_type();
                let value = self.expr(t, e);
                let name = self.fresh();
                self.declare(&name, t, true);
                vec![Node::new(Kind::VarDecl, name, vec![value])]
            }
            3 | 4 => {
                let targets = self.assignable();
                match targets.choose(self.rng).cloned() {
                    Some((name, t)) => vec![Node::new(Kind::Assign, name, vec![self.expr(t, e)])],
                    None => self.stmt(nesting, ret),
                }
            }
            5 if nesting < self.cfg.max_nesting => {
                let cond = self.expr(Type::Bool, e);
                let then = self.block(nesting + 1, ret, false);
                let mut kids = vec![cond, then];
                if self.rng.gen_bool(0.5) {
                    kids.push(self.block(nesting + 1, ret, false));
                }
                vec![Node::new(Kind::If, "", kids)]
            }
            6 if nesting < self.cfg.max_nesting => {
                let counter = format!("i{}", self.counters);
                self.counters += 1;
                self.declare(&counter, Type::Int, false);
                let bound = lit_int(self.rng.gen_range(0..5));
                let cond = bin("<", var(&counter), bound);
                let mut body = self.block(nesting + 1, ret, false);
                // A return inside the body would make the increment unreachable on that path, which is fine.
                body.children.push(Node::new(Kind::Assign, counter.clone(), vec![bin("+", var(&counter), lit_int(1))]));
                vec![
                    Node::new(Kind::VarDecl, counter, vec![lit_int(0)]),
                    Node::new(Kind::While, "", vec![cond, body]),
                ]
            }
            _ => {
                let t = self.pick_type();
                let arg = self.expr(t, e);
                let voids: Vec<Sig> = self.sigs.iter().filter(|s| s.ret.is_none()).cloned().collect();
                if !voids.is_empty() && self.rng.gen_bool(0.3) {
                    let sig = voids.choose(self.rng).expect("void").clone();
                    let args = sig.params.iter().map(|&p| self.expr(p, e)).collect();
                    vec![Node::new(Kind::ExprStmt, "", vec![Node::new(Kind::Call, sig.name, args)])]
                } else {
                    vec![Node::new(Kind::ExprStmt, "", vec![Node::new(Kind::Call, "print", vec![arg])])]
                }
            }
        }
    }

    fn method(&mut self, index: usize, entry: bool) -> Node {
        let name = format!("m{index}");
        let nparams = self.rng.gen_range(0..=3);
        let ret = if entry || self.rng.gen_bool(0.8) { Some(self.pick_type()) } else { None };
        self.used.clear();
        self.counters = 0;
        self.scopes = vec![Scope { vars: Vec::new() }];
        let mut params = Vec::new();
        let mut types = Vec::new();
        for _ in 0..nparams {
            let t = self.pick_type();
            let p = self.fresh();
            self.declare(&p, t, true);
            params.push(Node::leaf(Kind::Param, format!("{p}:{}", ty_name(t))));
            types.push(t);
        }
        let body = self.block(0, ret, ret.is_some());
        self.sigs.push(Sig { name: name.clone(), params: types, ret });
        let label = match ret {
            Some(t) => format!("{name}:{}", ty_name(t)),
            None => name,
        };
        params.push(body);
        Node::new(Kind::Method, label, params)
    }
}

pub fn random_value<R: Rng>(rng: &mut R, t: Type) -> Value {
    match t {
        Type::Int => Value::Int(rng.gen_range(-5..12)),
        Type::Bool => Value::Bool(rng.gen()),
        _ => Value::Str(["", "a", "hi", "x y"][rng.gen_range(0..4)].to_string()),
    }
}

/// A random program and tests calling its last method with random arguments
/// (tests carry no expectation).
pub fn random_program<R: Rng>(rng: &mut R, cfg: GenConfig) -> (Node, Vec<TestCase>) {
    let mut g = Gen { rng, cfg, sigs: Vec::new(), scopes: Vec::new(), used: Vec::new(), counters: 0 };
    let n = cfg.methods.max(1);
    let methods: Vec<Node> = (0..n).map(|i| g.method(i, i + 1 == n)).collect();
    let entry = g.sigs.last().expect("entry").clone();
    let tests = (0..cfg.tests)
        .map(|i| TestCase {
            name: format!("t{i}"),
            entry: entry.name.clone(),
            args: entry.params.iter().map(|&t| random_value(g.rng, t)).collect(),
            expect: None,
        })
        .collect();
    let mut p = Node::new(Kind::Program, "", methods);
    p.renumber();
    (p, tests)
}
