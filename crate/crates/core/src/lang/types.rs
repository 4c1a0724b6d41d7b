//! Static type checker: declared-before-use names, operand types, call
//! signatures and definite return for value-returning methods.

use std::collections::HashMap;

use thiserror::Error;

use super::ast::{Kind, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Bool,
    Str,
    Void,
}

impl Type {
    pub fn parse(s: &str) -> Option<Type> {
        match s {
            "int" => Some(Type::Int),
            "bool" => Some(Type::Bool),
            "str" => Some(Type::Str),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Type::Int => "int",
            Type::Bool => "bool",
            Type::Str => "str",
            Type::Void => "void",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type error at node {node}: {message}")]
pub struct TypeError {
    pub node: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub params: Vec<Type>,
    pub ret: Type,
}

pub const BUILTINS: [&str; 3] = ["print", "assert", "assertEq"];

/// Signatures of all user methods.
pub fn signatures(program: &Node) -> HashMap<String, Signature> {
    program
        .children
        .iter()
        .filter(|m| m.kind == Kind::Method)
        .map(|m| {
            let params = m
                .children
                .iter()
                .filter(|c| c.kind == Kind::Param)
                .map(|p| p.label.split_once(':').and_then(|(_, t)| Type::parse(t)).unwrap_or(Type::Void))
                .collect();
            let ret = m.label.split_once(':').and_then(|(_, t)| Type::parse(t)).unwrap_or(Type::Void);
            (m.method_name().to_string(), Signature { params, ret })
        })
        .collect()
}

struct Checker<'a> {
    sigs: &'a HashMap<String, Signature>,
    scopes: Vec<HashMap<String, Type>>,
    ret: Type,
}

fn fail<T>(node: &Node, message: impl Into<String>) -> Result<T, TypeError> {
    Err(TypeError { node: node.id, message: message.into() })
}

impl Checker<'_> {
    fn lookup(&self, name: &str) -> Option<Type> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare(&mut self, n: &Node, name: &str, t: Type) -> Result<(), TypeError> {
        if self.lookup(name).is_some() {
            return fail(n, format!("`{name}` is already declared"));
        }
        if t == Type::Void {
            return fail(n, format!("`{name}` would hold a void value"));
        }
        self.scopes.last_mut().expect("scope").insert(name.to_string(), t);
        Ok(())
    }

    fn block(&mut self, b: &Node) -> Result<bool, TypeError> {
        self.scopes.push(HashMap::new());
        let mut returns = false;
        for s in &b.children {
            returns |= self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(returns)
    }

    /// Checks a statement; returns whether it returns on every path.
    fn stmt(&mut self, s: &Node) -> Result<bool, TypeError> {
        match s.kind {
            Kind::VarDecl => {
                let t = self.expr(&s.children[0])?;
                self.declare(s, &s.label, t)?;
                Ok(false)
            }
            Kind::Assign => {
                let Some(vt) = self.lookup(&s.label) else { return fail(s, format!("`{}` is not declared", s.label)) };
                let t = self.expr(&s.children[0])?;
                if t != vt {
                    return fail(s, format!("cannot assign {} to `{}` of type {}", t.name(), s.label, vt.name()));
                }
                Ok(false)
            }
            Kind::ExprStmt => {
                self.expr(&s.children[0])?;
                Ok(false)
            }
            Kind::Return => {
                let t = match s.children.first() {
                    Some(e) => self.expr(e)?,
                    None => Type::Void,
                };
                if t != self.ret {
                    return fail(s, format!("returns {} but the method returns {}", t.name(), self.ret.name()));
                }
                Ok(true)
            }
            Kind::If => {
                self.expect(&s.children[0], Type::Bool)?;
                let then = self.block(&s.children[1])?;
                let other = match s.children.get(2) {
                    Some(e) => self.block(e)?,
                    None => false,
                };
                Ok(then && other)
            }
            Kind::While => {
                self.expect(&s.children[0], Type::Bool)?;
                self.block(&s.children[1])?;
                Ok(false)
            }
            k => fail(s, format!("{k} is not a statement")),
        }
    }

    fn expect(&mut self, e: &Node, t: Type) -> Result<(), TypeError> {
        let got = self.expr(e)?;
        if got != t {
            return fail(e, format!("expected {}, found {}", t.name(), got.name()));
        }
        Ok(())
    }

    fn expr(&mut self, e: &Node) -> Result<Type, TypeError> {
        match e.kind {
            Kind::IntLit => Ok(Type::Int),
            Kind::BoolLit => Ok(Type::Bool),
            Kind::StrLit => Ok(Type::Str),
            Kind::Var => self.lookup(&e.label).map_or_else(|| fail(e, format!("`{}` is not declared", e.label)), Ok),
            Kind::UnaryOp => {
                let t = if e.label == "-" { Type::Int } else { Type::Bool };
                self.expect(&e.children[0], t)?;
                Ok(t)
            }
            Kind::BinOp => {
                let l = self.expr(&e.children[0])?;
                let r = self.expr(&e.children[1])?;
                let op = e.label.as_str();
                let ok = |cond: bool, t: Type| if cond { Ok(t) } else { fail(e, format!("`{op}` on {} and {}", l.name(), r.name())) };
                match op {
                    "+" => ok(l == r && (l == Type::Int || l == Type::Str), l),
                    "-" | "*" | "/" | "%" => ok(l == Type::Int && r == Type::Int, Type::Int),
                    "<" | "<=" | ">" | ">=" => ok(l == Type::Int && r == Type::Int, Type::Bool),
                    "==" | "!=" => ok(l == r && l != Type::Void, Type::Bool),
                    "&&" | "||" => ok(l == Type::Bool && r == Type::Bool, Type::Bool),
                    _ => fail(e, format!("unknown operator `{op}`")),
                }
            }
            Kind::Call => {
                let args = e.children.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>, _>>()?;
                match e.label.as_str() {
                    "print" if args.len() == 1 && args[0] != Type::Void => Ok(Type::Void),
                    "assert" if args == [Type::Bool] => Ok(Type::Void),
                    "assertEq" if args.len() == 2 && args[0] == args[1] && args[0] != Type::Void => Ok(Type::Void),
                    name if BUILTINS.contains(&name) => fail(e, format!("bad arguments to `{name}`")),
                    name => match self.sigs.get(name) {
                        Some(sig) if sig.params == args => Ok(sig.ret),
                        Some(_) => fail(e, format!("arguments do not match the signature of `{name}`")),
                        None => fail(e, format!("unknown method `{name}`")),
                    },
                }
            }
            k => fail(e, format!("{k} is not an expression")),
        }
    }
}

/// Checks the whole program.
pub fn check(program: &Node) -> Result<(), TypeError> {
    let sigs = signatures(program);
    let mut seen = std::collections::HashSet::new();
    for m in program.children.iter().filter(|m| m.kind == Kind::Method) {
        let name = m.method_name();
        if BUILTINS.contains(&name) || !seen.insert(name) {
            return fail(m, format!("method `{name}` is a builtin or defined twice"));
        }
        let sig = &sigs[name];
        let mut c = Checker { sigs: &sigs, scopes: vec![HashMap::new()], ret: sig.ret };
        for p in m.children.iter().filter(|c| c.kind == Kind::Param) {
            let (pname, _) = p.label.split_once(':').unwrap_or((&p.label, ""));
            let t = p.label.split_once(':').and_then(|(_, t)| Type::parse(t)).unwrap_or(Type::Void);
            c.declare(p, pname, t)?;
        }
        let body = m.children.last().expect("method body");
        let returns = c.block(body)?;
        if sig.ret != Type::Void && !returns {
            return fail(m, format!("`{name}` may finish without returning"));
        }
    }
    Ok(())
}

/// Types of the variables visible just before statement `stmt` runs
/// (parameters plus enclosing-scope declarations that precede it).
pub fn scope_at(method: &Node, stmt: usize) -> Vec<(String, Type)> {
    fn go(b: &Node, stmt: usize, scope: &mut Vec<(String, Type)>, sigs: &HashMap<String, Signature>) -> bool {
        let mark = scope.len();
        for s in &b.children {
            if s.id == stmt {
                return true;
            }
            if s.find(stmt).is_some() {
                for blk in s.children.iter().filter(|c| c.kind == Kind::Block) {
                    if go(blk, stmt, scope, sigs) {
                        return true;
                    }
                }
            }
            if s.kind == Kind::VarDecl {
                let t = infer(&s.children[0], scope, sigs);
                scope.push((s.label.clone(), t));
            }
        }
        scope.truncate(mark);
        false
    }
    let mut scope: Vec<(String, Type)> = method
        .children
        .iter()
        .filter(|c| c.kind == Kind::Param)
        .filter_map(|p| p.label.split_once(':').map(|(n, t)| (n.to_string(), Type::parse(t).unwrap_or(Type::Void))))
        .collect();
    let sigs = HashMap::new();
    if let Some(body) = method.children.last() {
        go(body, stmt, &mut scope, &sigs);
    }
    scope
}

/// Best-effort expression type given a scope (no errors; unknowns are `Void`).
pub fn infer(e: &Node, scope: &[(String, Type)], sigs: &HashMap<String, Signature>) -> Type {
    match e.kind {
        Kind::IntLit => Type::Int,
        Kind::BoolLit => Type::Bool,
        Kind::StrLit => Type::Str,
        Kind::Var => scope.iter().rev().find(|(n, _)| *n == e.label).map_or(Type::Void, |(_, t)| *t),
        Kind::UnaryOp => {
            if e.label == "-" {
                Type::Int
            } else {
                Type::Bool
            }
        }
        Kind::BinOp => match e.label.as_str() {
            "+" => infer(&e.children[0], scope, sigs),
            "-" | "*" | "/" | "%" => Type::Int,
            _ => Type::Bool,
        },
        Kind::Call => sigs.get(&e.label).map_or(Type::Void, |s| s.ret),
        _ => Type::Void,
    }
}
