//! Lexer and recursive-descent parser.

use std::collections::BTreeSet;
use std::fmt;

use super::ast::{Kind, Node, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub expected: BTreeSet<String>,
    pub found: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<&str> = self.expected.iter().map(String::as_str).collect();
        write!(f, "syntax error at {}:{}: expected {}, found {}", self.line, self.col, expected.join(" | "), self.found)
    }
}

impl std::error::Error for SyntaxError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(String),
    Str(String),
    Kw(&'static str),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(s) => format!("integer `{s}`"),
            Tok::Str(s) => format!("string {s}"),
            Tok::Kw(k) => format!("`{k}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Tok::Ident(s) | Tok::Int(s) | Tok::Str(s) => s,
            Tok::Kw(k) | Tok::Sym(k) => k,
            Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

const KEYWORDS: [&str; 11] = ["func", "let", "if", "else", "while", "return", "true", "false", "int", "bool", "str"];
const SYMBOLS: [&str; 22] =
    ["==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", ",", ":", ";", "=", "+", "-", "*", "/", "%", "<", ">", "!"];

/// Splits source text into tokens; the final token is always `Eof`.
pub fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, what: &str, found: String| SyntaxError {
        line,
        col,
        expected: std::iter::once(what.to_string()).collect(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (sl, sc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let tok = match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word),
            };
            out.push(Token { tok, span: Span::new(sl, sc, line, col - 1) });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if word.parse::<i64>().is_err() {
                return Err(err(sl, sc, "integer in 64-bit range", word));
            }
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Int(word), span: Span::new(sl, sc, line, col - 1) });
            continue;
        }
        if c == '"' {
            let start = i;
            i += 1;
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(err(sl, sc, "closing `\"`", "end of line".into())),
                    Some('\\') => i += 2,
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some(_) => i += 1,
                }
            }
            let word: String = chars[start..i.min(chars.len())].iter().collect();
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Str(word), span: Span::new(sl, sc, line, col - 1) });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len() as u32;
                out.push(Token { tok: Tok::Sym(s), span: Span::new(sl, sc, line, col - 1) });
            }
            None => return Err(err(sl, sc, "token", format!("`{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(line, col, line, col) });
    Ok(out)
}

/// Decodes the escapes of a string literal lexeme (including its quotes).
pub fn unescape(lexeme: &str) -> String {
    let inner = &lexeme[1..lexeme.len().saturating_sub(1).max(1)];
    let mut out = String::new();
    let mut it = inner.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(o) => out.push(o),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Binary operators grouped by precedence, lowest first.
pub const PRECEDENCE: [&[&str]; 6] = [&["||"], &["&&"], &["==", "!="], &["<", "<=", ">", ">="], &["+", "-"], &["*", "/", "%"]];

pub fn precedence(op: &str) -> usize {
    PRECEDENCE.iter().position(|ops| ops.contains(&op)).expect("known operator")
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let s = self.span();
        SyntaxError {
            line: s.start_line,
            col: s.start_col,
            expected: expected.iter().map(|e| e.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn is(&self, text: &str) -> bool {
        matches!(self.peek(), Tok::Kw(k) | Tok::Sym(k) if *k == text)
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.is(text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, text: &str) -> PResult<Span> {
        if self.is(text) {
            self.pos += 1;
            Ok(self.prev_span())
        } else {
            Err(self.error(&[text]))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok((s, self.prev_span()))
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn ty(&mut self) -> PResult<String> {
        for t in ["int", "bool", "str"] {
            if self.eat(t) {
                return Ok(t.to_string());
            }
        }
        Err(self.error(&["int", "bool", "str"]))
    }

    fn program(&mut self) -> PResult<Node> {
        let start = self.span();
        let mut methods = vec![self.method()?];
        while !matches!(self.peek(), Tok::Eof) {
            if !self.is("func") {
                return Err(self.error(&["func", "end of input"]));
            }
            methods.push(self.method()?);
        }
        let mut p = Node::new(Kind::Program, "", methods);
        p.span = start.join(self.prev_span());
        Ok(p)
    }

    fn method(&mut self) -> PResult<Node> {
        let start = self.expect("func")?;
        let (name, _) = self.ident()?;
        self.expect("(")?;
        let mut children = Vec::new();
        if !self.is(")") {
            loop {
                let (pname, ps) = self.ident().map_err(|_| self.error(&[")", "identifier"]))?;
                self.expect(":")?;
                let t = self.ty()?;
                let mut p = Node::leaf(Kind::Param, format!("{pname}:{t}"));
                p.span = ps.join(self.prev_span());
                children.push(p);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect(")").map_err(|_| self.error(&[")", ","]))?;
        let label = if self.eat(":") { format!("{name}:{}", self.ty()?) } else { name };
        children.push(self.block()?);
        let mut m = Node::new(Kind::Method, label, children);
        m.span = start.join(self.prev_span());
        Ok(m)
    }

    fn block(&mut self) -> PResult<Node> {
        let start = self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.is("}") {
            if matches!(self.peek(), Tok::Eof) {
                return Err(self.error(&["}", "statement"]));
            }
            stmts.push(self.stmt()?);
        }
        self.pos += 1;
        let mut b = Node::new(Kind::Block, "", stmts);
        b.span = start.join(self.prev_span());
        Ok(b)
    }

    fn stmt(&mut self) -> PResult<Node> {
        let start = self.span();
        let mut node = if self.eat("let") {
            let (name, _) = self.ident()?;
            self.expect("=")?;
            let e = self.expr()?;
            self.expect(";")?;
            Node::new(Kind::VarDecl, name, vec![e])
        } else if self.eat("if") {
            self.expect("(")?;
            let c = self.expr()?;
            self.expect(")")?;
            let mut ch = vec![c, self.block()?];
            if self.eat("else") {
                ch.push(self.block()?);
            }
            Node::new(Kind::If, "", ch)
        } else if self.eat("while") {
            self.expect("(")?;
            let c = self.expr()?;
            self.expect(")")?;
            Node::new(Kind::While, "", vec![c, self.block()?])
        } else if self.eat("return") {
            let ch = if self.is(";") { vec![] } else { vec![self.expr()?] };
            self.expect(";")?;
            Node::new(Kind::Return, "", ch)
        } else if matches!(self.peek(), Tok::Ident(_)) && matches!(self.toks[self.pos + 1].tok, Tok::Sym("=")) {
            let (name, _) = self.ident()?;
            self.pos += 1;
            let e = self.expr()?;
            self.expect(";")?;
            Node::new(Kind::Assign, name, vec![e])
        } else if self.starts_expr() {
            let e = self.expr()?;
            self.expect(";")?;
            Node::new(Kind::ExprStmt, "", vec![e])
        } else {
            return Err(self.error(&["statement", "}"]));
        };
        node.span = start.join(self.prev_span());
        Ok(node)
    }

    fn starts_expr(&self) -> bool {
        matches!(self.peek(), Tok::Ident(_) | Tok::Int(_) | Tok::Str(_))
            || ["true", "false", "(", "-", "!"].iter().any(|t| self.is(t))
    }

    fn expr(&mut self) -> PResult<Node> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Node> {
        if level == PRECEDENCE.len() {
            return self.unary();
        }
        let mut left = self.binary(level + 1)?;
        loop {
            let op = PRECEDENCE[level].iter().find(|op| self.is(op));
            let Some(&op) = op else { break };
            self.pos += 1;
            let right = self.binary(level + 1)?;
            let span = left.span.join(right.span);
            left = Node::new(Kind::BinOp, op, vec![left, right]);
            left.span = span;
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Node> {
        let start = self.span();
        for op in ["-", "!"] {
            if self.eat(op) {
                let e = self.unary()?;
                let span = start.join(e.span);
                let mut n = Node::new(Kind::UnaryOp, op, vec![e]);
                n.span = span;
                return Ok(n);
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Node> {
        let start = self.span();
        let tok = self.peek().clone();
        let mut node = match tok {
            Tok::Int(s) => {
                self.pos += 1;
                Node::leaf(Kind::IntLit, s)
            }
            Tok::Str(s) => {
                self.pos += 1;
                Node::leaf(Kind::StrLit, s)
            }
            Tok::Kw(k @ ("true" | "false")) => {
                self.pos += 1;
                Node::leaf(Kind::BoolLit, k)
            }
            Tok::Sym("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                return Ok(e);
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if self.eat("(") {
                    let mut args = Vec::new();
                    if !self.is(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat(",") {
                                break;
                            }
                        }
                    }
                    self.expect(")").map_err(|_| self.error(&[")", ","]))?;
                    Node::new(Kind::Call, name, args)
                } else {
                    Node::leaf(Kind::Var, name)
                }
            }
            _ => return Err(self.error(&["expression"])),
        };
        node.span = start.join(self.prev_span());
        Ok(node)
    }
}

/// Parses a whole program and numbers its nodes in pre-order.
pub fn parse(src: &str) -> Result<Node, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut prog = p.program()?;
    prog.renumber();
    Ok(prog)
}

/// Parses a single statement (used to check rendered fragments).
pub fn parse_statement(src: &str) -> Result<Node, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut s = p.stmt()?;
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.error(&["end of input"]));
    }
    s.renumber();
    Ok(s)
}
