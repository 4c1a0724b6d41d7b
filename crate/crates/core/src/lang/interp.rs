//! Coverage-instrumented tree-walking interpreter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{Kind, Node};
use super::parser::unescape;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
}

/// Runtime value; `None` stands for the unit result of a void call.
pub type Slot = Option<Value>;

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Bool(_) => "bool",
            Value::Str(_) => "str",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

/// A test: call `entry` with `args`; pass if nothing fails and the result equals `expect` (when given).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub entry: String,
    pub args: Vec<Value>,
    pub expect: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("undefined variable `{0}`")]
    UndefinedVariable(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("`{name}` takes {expected} arguments, got {found}")]
    Arity { name: String, expected: usize, found: usize },
    #[error("assertion failed: {0}")]
    AssertionFailed(String),
    #[error("`{0}` finished without returning a value")]
    MissingReturn(String),
    #[error("step limit exceeded")]
    StepLimit,
    #[error("recursion limit exceeded")]
    RecursionLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub steps: u64,
    pub depth: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { steps: 100_000, depth: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub passed: bool,
    pub executed: BTreeSet<usize>,
    pub output: Vec<String>,
    pub returned: Slot,
    pub error: Option<RuntimeError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCoverage {
    pub executed: BTreeSet<usize>,
    pub passed: bool,
}

/// Executed statements and verdict for every test.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageMatrix {
    pub per_test: BTreeMap<String, TestCoverage>,
}

impl CoverageMatrix {
    pub fn failing(&self) -> usize {
        self.per_test.values().filter(|t| !t.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.per_test.values().all(|t| t.passed)
    }
}

enum Flow {
    Normal,
    Return(Slot),
}

struct Machine<'a> {
    methods: HashMap<&'a str, &'a Node>,
    executed: BTreeSet<usize>,
    output: Vec<String>,
    instrument: bool,
    steps: u64,
    depth: usize,
    limits: Limits,
}

type R<T> = Result<T, RuntimeError>;

fn mismatch(what: &str) -> RuntimeError {
    RuntimeError::TypeMismatch(what.to_string())
}

impl<'a> Machine<'a> {
    fn call(&mut self, name: &str, args: Vec<Slot>) -> R<Slot> {
        match name {
            "print" => {
                if args.len() != 1 {
                    return Err(RuntimeError::Arity { name: name.into(), expected: 1, found: args.len() });
                }
                let v = args.into_iter().next().flatten().ok_or_else(|| mismatch("print of a void value"))?;
                self.output.push(v.to_string());
                return Ok(None);
            }
            "assert" => {
                if args.len() != 1 {
                    return Err(RuntimeError::Arity { name: name.into(), expected: 1, found: args.len() });
                }
                return match &args[0] {
                    Some(Value::Bool(true)) => Ok(None),
                    Some(Value::Bool(false)) => Err(RuntimeError::AssertionFailed("assert".into())),
                    _ => Err(mismatch("assert expects bool")),
                };
            }
            "assertEq" => {
                if args.len() != 2 {
                    return Err(RuntimeError::Arity { name: name.into(), expected: 2, found: args.len() });
                }
                let (a, b) = (&args[0], &args[1]);
                match (a, b) {
                    (Some(x), Some(y)) if x.type_name() != y.type_name() => return Err(mismatch("assertEq operands differ in type")),
                    (Some(x), Some(y)) if x == y => return Ok(None),
                    (Some(x), Some(y)) => return Err(RuntimeError::AssertionFailed(format!("{x} != {y}"))),
                    _ => return Err(mismatch("assertEq of a void value")),
                }
            }
            _ => {}
        }
        let m = *self.methods.get(name).ok_or_else(|| RuntimeError::UnknownMethod(name.into()))?;
        let params: Vec<&Node> = m.children.iter().filter(|c| c.kind == Kind::Param).collect();
        if params.len() != args.len() {
            return Err(RuntimeError::Arity { name: name.into(), expected: params.len(), found: args.len() });
        }
        if self.depth >= self.limits.depth {
            return Err(RuntimeError::RecursionLimit);
        }
        let mut frame = HashMap::new();
        for (p, a) in params.iter().zip(args) {
            let (pname, ty) = p.label.split_once(':').unwrap_or((&p.label, ""));
            let a = a.ok_or_else(|| mismatch("void argument"))?;
            if a.type_name() != ty {
                return Err(mismatch(&format!("parameter `{pname}` expects {ty}, got {}", a.type_name())));
            }
            frame.insert(pname.to_string(), a);
        }
        self.depth += 1;
        let body = m.children.last().expect("method has a body");
        let flow = self.block(body, &mut frame);
        self.depth -= 1;
        let ret_ty = m.label.split_once(':').map(|(_, t)| t);
        match (flow?, ret_ty) {
            (Flow::Return(v), None) if v.is_some() => Err(mismatch("value returned from a void method")),
            (Flow::Return(v), Some(t)) => match &v {
                Some(x) if x.type_name() == t => Ok(v),
                _ => Err(mismatch(&format!("`{name}` must return {t}"))),
            },
            (Flow::Normal, Some(_)) => Err(RuntimeError::MissingReturn(name.into())),
            _ => Ok(None),
        }
    }

    fn block(&mut self, b: &'a Node, env: &mut HashMap<String, Value>) -> R<Flow> {
        for s in &b.children {
            if let Flow::Return(v) = self.stmt(s, env)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn stmt(&mut self, s: &'a Node, env: &mut HashMap<String, Value>) -> R<Flow> {
        if self.instrument {
            self.executed.insert(s.id);
        }
        self.steps += 1;
        if self.steps > self.limits.steps {
            return Err(RuntimeError::StepLimit);
        }
        match s.kind {
            Kind::VarDecl | Kind::Assign => {
                if s.kind == Kind::Assign && !env.contains_key(&s.label) {
                    return Err(RuntimeError::UndefinedVariable(s.label.clone()));
                }
                let v = self.value(&s.children[0], env)?;
                if let (Kind::Assign, Some(old)) = (s.kind, env.get(&s.label)) {
                    if old.type_name() != v.type_name() {
                        return Err(mismatch(&format!("assigning {} to `{}`", v.type_name(), s.label)));
                    }
                }
                env.insert(s.label.clone(), v);
                Ok(Flow::Normal)
            }
            Kind::ExprStmt => {
                self.expr(&s.children[0], env)?;
                Ok(Flow::Normal)
            }
            Kind::Return => match s.children.first() {
                Some(e) => Ok(Flow::Return(Some(self.value(e, env)?))),
                None => Ok(Flow::Return(None)),
            },
            Kind::If => {
                if self.cond(&s.children[0], env)? {
                    self.block(&s.children[1], env)
                } else if let Some(e) = s.children.get(2) {
                    self.block(e, env)
                } else {
                    Ok(Flow::Normal)
                }
            }
            Kind::While => {
                while self.cond(&s.children[0], env)? {
                    if let Flow::Return(v) = self.block(&s.children[1], env)? {
                        return Ok(Flow::Return(v));
                    }
                    self.steps += 1;
                    if self.steps > self.limits.steps {
                        return Err(RuntimeError::StepLimit);
                    }
                }
                Ok(Flow::Normal)
            }
            k => Err(mismatch(&format!("{k} is not a statement"))),
        }
    }

    fn cond(&mut self, e: &'a Node, env: &mut HashMap<String, Value>) -> R<bool> {
        match self.value(e, env)? {
            Value::Bool(b) => Ok(b),
            v => Err(mismatch(&format!("condition is {}", v.type_name()))),
        }
    }

    fn value(&mut self, e: &'a Node, env: &mut HashMap<String, Value>) -> R<Value> {
        self.expr(e, env)?.ok_or_else(|| mismatch("void value used"))
    }

    fn int(&mut self, e: &'a Node, env: &mut HashMap<String, Value>) -> R<i64> {
        match self.value(e, env)? {
            Value::Int(v) => Ok(v),
            v => Err(mismatch(&format!("expected int, got {}", v.type_name()))),
        }
    }

    fn expr(&mut self, e: &'a Node, env: &mut HashMap<String, Value>) -> R<Slot> {
        let v = match e.kind {
            Kind::IntLit => Value::Int(e.label.parse().map_err(|_| RuntimeError::Overflow)?),
            Kind::BoolLit => Value::Bool(e.label == "true"),
            Kind::StrLit => Value::Str(unescape(&e.label)),
            Kind::Var => env.get(&e.label).cloned().ok_or_else(|| RuntimeError::UndefinedVariable(e.label.clone()))?,
            Kind::Call => {
                let mut args = Vec::with_capacity(e.children.len());
                for a in &e.children {
                    args.push(self.expr(a, env)?);
                }
                return self.call(&e.label, args);
            }
            Kind::UnaryOp => match e.label.as_str() {
                "-" => Value::Int(self.int(&e.children[0], env)?.checked_neg().ok_or(RuntimeError::Overflow)?),
                _ => Value::Bool(!self.cond(&e.children[0], env)?),
            },
            Kind::BinOp => self.binop(e, env)?,
            k => return Err(mismatch(&format!("{k} is not an expression"))),
        };
        Ok(Some(v))
    }

    fn binop(&mut self, e: &'a Node, env: &mut HashMap<String, Value>) -> R<Value> {
        let op = e.label.as_str();
        let (l, r) = (&e.children[0], &e.children[1]);
        if op == "&&" || op == "||" {
            let a = self.cond(l, env)?;
            if (op == "&&") != a {
                return Ok(Value::Bool(a));
            }
            return Ok(Value::Bool(self.cond(r, env)?));
        }
        let a = self.value(l, env)?;
        let b = self.value(r, env)?;
        if op == "==" || op == "!=" {
            if a.type_name() != b.type_name() {
                return Err(mismatch("comparing values of different types"));
            }
            return Ok(Value::Bool((a == b) == (op == "==")));
        }
        let (x, y) = match (&a, &b) {
            (Value::Int(x), Value::Int(y)) => (*x, *y),
            (Value::Str(x), Value::Str(y)) if op == "+" => return Ok(Value::Str(format!("{x}{y}"))),
            _ => return Err(mismatch(&format!("`{op}` on {} and {}", a.type_name(), b.type_name()))),
        };
        let v = match op {
            "+" => Value::Int(x.checked_add(y).ok_or(RuntimeError::Overflow)?),
            "-" => Value::Int(x.checked_sub(y).ok_or(RuntimeError::Overflow)?),
            "*" => Value::Int(x.checked_mul(y).ok_or(RuntimeError::Overflow)?),
            "/" | "%" => {
                if y == 0 {
                    return Err(RuntimeError::DivisionByZero);
                }
                let r = if op == "/" { x.checked_div(y) } else { x.checked_rem(y) };
                Value::Int(r.ok_or(RuntimeError::Overflow)?)
            }
            "<" => Value::Bool(x < y),
            "<=" => Value::Bool(x <= y),
            ">" => Value::Bool(x > y),
            ">=" => Value::Bool(x >= y),
            _ => return Err(mismatch(&format!("unknown operator `{op}`"))),
        };
        Ok(v)
    }
}

pub fn execute(program: &Node, test: &TestCase, instrument: bool) -> ExecOutcome {
    execute_with(program, test, instrument, Limits::default())
}

pub fn execute_with(program: &Node, test: &TestCase, instrument: bool, limits: Limits) -> ExecOutcome {
    let methods = program.children.iter().filter(|m| m.kind == Kind::Method).map(|m| (m.method_name(), m)).collect();
    let mut m = Machine { methods, executed: BTreeSet::new(), output: Vec::new(), instrument, steps: 0, depth: 0, limits };
    let args = test.args.iter().cloned().map(Some).collect();
    let result = m.call(&test.entry, args);
    let (returned, error) = match result {
        Ok(v) => (v, None),
        Err(e) => (None, Some(e)),
    };
    let passed = error.is_none() && test.expect.as_ref().is_none_or(|x| returned.as_ref() == Some(x));
    ExecOutcome { passed, executed: m.executed, output: m.output, returned, error }
}

/// Runs every test with instrumentation.
pub fn coverage(program: &Node, tests: &[TestCase]) -> CoverageMatrix {
    let per_test = tests
        .iter()
        .map(|t| {
            let o = execute(program, t, true);
            (t.name.clone(), TestCoverage { executed: o.executed, passed: o.passed })
        })
        .collect();
    CoverageMatrix { per_test }
}

/// Whether every test passes.
pub fn passes_all(program: &Node, tests: &[TestCase]) -> bool {
    tests.iter().all(|t| execute(program, t, false).passed)
}
