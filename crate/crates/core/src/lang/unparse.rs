//! Pretty-printer: 4-space indentation, one statement per line, minimal parentheses.

use super::ast::{Kind, Node};
use super::parser::precedence;

pub fn unparse(node: &Node) -> String {
    let mut out = String::new();
    match node.kind {
        Kind::Program => {
            for (i, m) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                method(m, &mut out);
            }
        }
        Kind::Method => method(node, &mut out),
        Kind::Block => block(node, 0, &mut out),
        k if k.is_statement() => stmt(node, 0, &mut out),
        Kind::Param => out.push_str(&param(node)),
        _ => out.push_str(&expr(node)),
    }
    out
}

fn param(p: &Node) -> String {
    match p.label.split_once(':') {
        Some((n, t)) => format!("{n}: {t}"),
        None => p.label.clone(),
    }
}

fn method(m: &Node, out: &mut String) {
    let (name, ret) = match m.label.split_once(':') {
        Some((n, t)) => (n, Some(t)),
        None => (m.label.as_str(), None),
    };
    let params: Vec<String> = m.children.iter().filter(|c| c.kind == Kind::Param).map(param).collect();
    out.push_str(&format!("func {name}({})", params.join(", ")));
    if let Some(t) = ret {
        out.push_str(&format!(": {t}"));
    }
    out.push(' ');
    if let Some(b) = m.children.iter().find(|c| c.kind == Kind::Block) {
        block(b, 0, out);
    }
    out.push('\n');
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn block(b: &Node, depth: usize, out: &mut String) {
    out.push_str("{\n");
    for s in &b.children {
        stmt(s, depth + 1, out);
    }
    indent(depth, out);
    out.push('}');
}

/// One-line rendering of a statement's header (nested blocks elided as `{ ... }`).
pub fn header_text(s: &Node) -> String {
    match s.kind {
        Kind::If => {
            let mut t = format!("if ({}) {{ ... }}", expr(&s.children[0]));
            if s.children.len() > 2 {
                t.push_str(" else { ... }");
            }
            t
        }
        Kind::While => format!("while ({}) {{ ... }}", expr(&s.children[0])),
        _ => {
            let mut out = String::new();
            stmt(s, 0, &mut out);
            out.trim_end().to_string()
        }
    }
}

fn stmt(s: &Node, depth: usize, out: &mut String) {
    indent(depth, out);
    match s.kind {
        Kind::VarDecl => out.push_str(&format!("let {} = {};", s.label, expr(&s.children[0]))),
        Kind::Assign => out.push_str(&format!("{} = {};", s.label, expr(&s.children[0]))),
        Kind::Return => match s.children.first() {
            Some(e) => out.push_str(&format!("return {};", expr(e))),
            None => out.push_str("return;"),
        },
        Kind::ExprStmt => match s.children.first() {
            Some(e) => out.push_str(&format!("{};", expr(e))),
            None => out.push_str(&format!("{};", s.label)),
        },
        Kind::If => {
            out.push_str(&format!("if ({}) ", expr(&s.children[0])));
            block(&s.children[1], depth, out);
            if let Some(e) = s.children.get(2) {
                out.push_str(" else ");
                block(e, depth, out);
            }
        }
        Kind::While => {
            out.push_str(&format!("while ({}) ", expr(&s.children[0])));
            block(&s.children[1], depth, out);
        }
        _ => out.push_str(&expr(s)),
    }
    out.push('\n');
}

/// Binding strength of an expression node; atoms bind tightest.
fn strength(e: &Node) -> usize {
    match e.kind {
        Kind::BinOp => precedence(&e.label),
        Kind::UnaryOp => 6,
        _ => 7,
    }
}

pub fn expr(e: &Node) -> String {
    match e.kind {
        Kind::BinOp => {
            let p = precedence(&e.label);
            let l = &e.children[0];
            let r = &e.children[1];
            let ls = if strength(l) < p { format!("({})", expr(l)) } else { expr(l) };
            let rs = if strength(r) <= p { format!("({})", expr(r)) } else { expr(r) };
            format!("{ls} {} {rs}", e.label)
        }
        Kind::UnaryOp => {
            let inner = &e.children[0];
            if inner.kind == Kind::BinOp {
                format!("{}({})", e.label, expr(inner))
            } else {
                format!("{}{}", e.label, expr(inner))
            }
        }
        Kind::Call => {
            let args: Vec<String> = e.children.iter().map(expr).collect();
            format!("{}({})", e.label, args.join(", "))
        }
        _ => e.label.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn return_literal() {
        let r = Node::new(Kind::Return, "", vec![Node::leaf(Kind::IntLit, "1")]);
        assert_eq!(unparse(&r).trim(), "return 1;");
    }

    #[test]
    fn if_else_renders_both_blocks() {
        let p = parse("func f(a: int): int { if (a > 0) { return 1; } else { return 2; } }").unwrap();
        let text = unparse(&p);
        assert_eq!(
            text,
            "func f(a: int): int {\n    if (a > 0) {\n        return 1;\n    } else {\n        return 2;\n    }\n}\n"
        );
    }

    #[test]
    fn minimal_parentheses() {
        let p = parse("func f(a: int, b: int, c: int): int { return (a - (b - c)) * (a + b) - -(a * b) + (a * b); }").unwrap();
        let text = unparse(&p);
        assert!(text.contains("return (a - (b - c)) * (a + b) - -(a * b) + a * b;"), "{text}");
        assert!(parse(&text).unwrap().same_shape(&p));
    }
}
