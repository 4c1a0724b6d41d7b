use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Program,
    Method,
    Param,
    Block,
    VarDecl,
    Assign,
    If,
    While,
    Return,
    ExprStmt,
    Call,
    BinOp,
    UnaryOp,
    Var,
    IntLit,
    BoolLit,
    StrLit,
}

impl Kind {
    pub const ALL: [Kind; 17] = [
        Kind::Program,
        Kind::Method,
        Kind::Param,
        Kind::Block,
        Kind::VarDecl,
        Kind::Assign,
        Kind::If,
        Kind::While,
        Kind::Return,
        Kind::ExprStmt,
        Kind::Call,
        Kind::BinOp,
        Kind::UnaryOp,
        Kind::Var,
        Kind::IntLit,
        Kind::BoolLit,
        Kind::StrLit,
    ];

    pub fn is_statement(self) -> bool {
        matches!(self, Kind::VarDecl | Kind::Assign | Kind::If | Kind::While | Kind::Return | Kind::ExprStmt)
    }

    pub fn is_expression(self) -> bool {
        matches!(self, Kind::Call | Kind::BinOp | Kind::UnaryOp | Kind::Var | Kind::IntLit | Kind::BoolLit | Kind::StrLit)
    }

    /// Token used for a node whose label is empty.
    pub fn keyword(self) -> &'static str {
        match self {
            Kind::Program => "<program>",
            Kind::Method => "<method>",
            Kind::Param => "<param>",
            Kind::Block => "<block>",
            Kind::VarDecl => "let",
            Kind::Assign => "=",
            Kind::If => "if",
            Kind::While => "while",
            Kind::Return => "return",
            Kind::ExprStmt => "<expr>",
            Kind::Call => "<call>",
            Kind::BinOp => "<binop>",
            Kind::UnaryOp => "<unop>",
            Kind::Var => "<var>",
            Kind::IntLit => "<int>",
            Kind::BoolLit => "<bool>",
            Kind::StrLit => "<str>",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// 1-based source region; the end column is that of the last character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Span {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn new(start_line: u32, start_col: u32, end_line: u32, end_col: u32) -> Self {
        Self { start_line, start_col, end_line, end_col }
    }

    pub fn join(self, other: Span) -> Span {
        Span { start_line: self.start_line, start_col: self.start_col, end_line: other.end_line, end_col: other.end_col }
    }

    pub fn contains(&self, other: &Span) -> bool {
        (self.start_line, self.start_col) <= (other.start_line, other.start_col)
            && (other.end_line, other.end_col) <= (self.end_line, self.end_col)
    }
}

/// Labelled syntax tree node. Ids are assigned in pre-order by [`Node::renumber`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: Kind,
    pub label: String,
    pub children: Vec<Node>,
    pub span: Span,
}

impl Node {
    pub fn new(kind: Kind, label: impl Into<String>, children: Vec<Node>) -> Self {
        Self { id: 0, kind, label: label.into(), children, span: Span::default() }
    }

    pub fn leaf(kind: Kind, label: impl Into<String>) -> Self {
        Self::new(kind, label, Vec::new())
    }

    /// Reassigns ids in pre-order starting at 0.
    pub fn renumber(&mut self) {
        fn go(n: &mut Node, next: &mut usize) {
            n.id = *next;
            *next += 1;
            for c in &mut n.children {
                go(c, next);
            }
        }
        let mut next = 0;
        go(self, &mut next);
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Node::size).sum::<usize>()
    }

    /// All nodes in pre-order.
    pub fn preorder(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(self.size());
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn find(&self, id: usize) -> Option<&Node> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    pub fn find_mut(&mut self, id: usize) -> Option<&mut Node> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    /// Chain of ancestors of `id`, root first, excluding `id` itself.
    pub fn ancestors(&self, id: usize) -> Option<Vec<&Node>> {
        if self.id == id {
            return Some(Vec::new());
        }
        for c in &self.children {
            if let Some(mut path) = c.ancestors(id) {
                path.insert(0, self);
                return Some(path);
            }
        }
        None
    }

    /// Parent id for every node id.
    pub fn parents(&self) -> std::collections::HashMap<usize, usize> {
        let mut out = std::collections::HashMap::new();
        for n in self.preorder() {
            for c in &n.children {
                out.insert(c.id, n.id);
            }
        }
        out
    }

    /// Structural equality ignoring ids and spans.
    pub fn same_shape(&self, other: &Node) -> bool {
        self.kind == other.kind
            && self.label == other.label
            && self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| a.same_shape(b))
    }

    /// Hash of kind, label and all descendants; equal for `same_shape` trees.
    pub fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_into(&mut h);
        h.finish()
    }

    fn hash_into(&self, h: &mut DefaultHasher) {
        self.kind.hash(h);
        self.label.hash(h);
        self.children.len().hash(h);
        for c in &self.children {
            c.hash_into(h);
        }
    }

    /// Label if non-empty, otherwise the kind keyword.
    pub fn token(&self) -> &str {
        if self.label.is_empty() {
            self.kind.keyword()
        } else {
            &self.label
        }
    }

    pub fn methods(&self) -> Vec<&Node> {
        self.preorder().into_iter().filter(|n| n.kind == Kind::Method).collect()
    }

    /// Method name (the label up to an optional `:type`).
    pub fn method_name(&self) -> &str {
        self.label.split(':').next().unwrap_or("")
    }

    /// Statement nodes in pre-order (flattened source order).
    pub fn statements(&self) -> Vec<&Node> {
        self.preorder().into_iter().filter(|n| n.kind.is_statement()).collect()
    }

    pub fn statement_ids(&self) -> Vec<usize> {
        self.statements().iter().map(|n| n.id).collect()
    }

    /// The node with every nested `Block` child removed: the part of a
    /// statement that belongs to it rather than to the statements it encloses.
    pub fn header(&self) -> Node {
        let mut n = self.clone();
        n.children.retain(|c| c.kind != Kind::Block);
        n
    }

    /// Whether two statements have the same header.
    pub fn same_header(&self, other: &Node) -> bool {
        self.header().same_shape(&other.header())
    }

    /// Id of the method enclosing `id`.
    pub fn enclosing_method(&self, id: usize) -> Option<&Node> {
        self.methods().into_iter().find(|m| m.find(id).is_some())
    }

    /// Post-order child lists (node index → child indices) and the nodes in that order.
    pub fn postorder(&self) -> (Vec<&Node>, Vec<Vec<usize>>) {
        fn go<'a>(n: &'a Node, nodes: &mut Vec<&'a Node>, kids: &mut Vec<Vec<usize>>) -> usize {
            let mine: Vec<usize> = n.children.iter().map(|c| go(c, nodes, kids)).collect();
            nodes.push(n);
            kids.push(mine);
            nodes.len() - 1
        }
        let mut nodes = Vec::new();
        let mut kids = Vec::new();
        go(self, &mut nodes, &mut kids);
        (nodes, kids)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("nodes serialise")
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::unparse(self))
    }
}
