//! Tree differencing, fixing changes, buggy/fixed subtree pairing and bug types.
//!
//! The matcher runs in two phases. Top-down, isomorphic subtrees of height
//! two or more are matched by structural hash. Bottom-up, an unmatched inner
//! node is matched to the same-kind fixed node sharing the largest fraction
//! of already-matched descendants (dice ≥ 0.5). A recovery pass then aligns
//! the children of every matched pair, and a pruning pass drops mappings
//! that would need a move, so the result is a plain update/insert/delete
//! script.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lang::{unparse, Kind, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Update,
    Insert,
    Delete,
}

/// `(operation, node type, label)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixingChange {
    pub op: OpKind,
    pub kind: Kind,
    pub label: String,
}

impl FixingChange {
    pub fn new(op: OpKind, kind: Kind, label: impl Into<String>) -> Self {
        Self { op, kind, label: label.into() }
    }
}

/// One step of the edit script. Ids refer to the buggy tree, except inside
/// inserted subtrees, which are copied from the fixed tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditAction {
    Update { node: usize, label: String },
    Delete { node: usize },
    Insert { parent: usize, index: usize, subtree: Node },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiffResult {
    /// Buggy id → fixed id.
    pub mapping: BTreeMap<usize, usize>,
    pub actions: Vec<EditAction>,
    pub changes: Vec<FixingChange>,
    /// Mapped buggy statements whose own part changed (nested statements excluded).
    pub updated_statements: BTreeSet<usize>,
    /// Unmapped buggy nodes.
    pub deleted: BTreeSet<usize>,
    /// Unmapped fixed nodes.
    pub inserted: BTreeSet<usize>,
}

impl DiffResult {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn reverse_mapping(&self) -> BTreeMap<usize, usize> {
        self.mapping.iter().map(|(&b, &f)| (f, b)).collect()
    }
}

/// Flat per-tree index; pre-order ids make every subtree a contiguous id range.
struct Index<'a> {
    base: usize,
    nodes: Vec<&'a Node>,
    parent: Vec<Option<usize>>,
    height: Vec<usize>,
    hash: Vec<u64>,
}

impl<'a> Index<'a> {
    fn new(root: &'a Node) -> Self {
        let nodes = root.preorder();
        let base = root.id;
        for (i, n) in nodes.iter().enumerate() {
            assert_eq!(n.id, base + i, "tree ids must be contiguous pre-order numbers");
        }
        let mut parent = vec![None; nodes.len()];
        let mut height = vec![1; nodes.len()];
        let mut hash = vec![0; nodes.len()];
        for i in (0..nodes.len()).rev() {
            let n = nodes[i];
            hash[i] = n.structural_hash();
            for c in &n.children {
                let ci = c.id - base;
                parent[ci] = Some(n.id);
                height[i] = height[i].max(height[ci] + 1);
            }
        }
        Self { base, nodes, parent, height, hash }
    }

    fn node(&self, id: usize) -> &'a Node {
        self.nodes[id - self.base]
    }

    fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id - self.base]
    }

    fn height(&self, id: usize) -> usize {
        self.height[id - self.base]
    }

    fn hash(&self, id: usize) -> u64 {
        self.hash[id - self.base]
    }

    fn ids(&self) -> impl DoubleEndedIterator<Item = usize> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Ids strictly below `id`.
    fn descendants(&self, id: usize) -> std::ops::Range<usize> {
        id + 1..id + self.node(id).size()
    }

    fn position(&self, id: usize) -> usize {
        self.parent(id).map_or(0, |p| self.node(p).children.iter().position(|c| c.id == id).expect("child"))
    }
}

struct Matcher<'a> {
    b: Index<'a>,
    f: Index<'a>,
    fwd: HashMap<usize, usize>,
    back: HashMap<usize, usize>,
}

impl Matcher<'_> {
    fn link(&mut self, b: usize, f: usize) {
        self.fwd.insert(b, f);
        self.back.insert(f, b);
    }

    fn unlink(&mut self, b: usize) {
        if let Some(f) = self.fwd.remove(&b) {
            self.back.remove(&f);
        }
    }

    fn link_isomorphic(&mut self, b: &Node, f: &Node) {
        self.link(b.id, f.id);
        for (x, y) in b.children.iter().zip(&f.children) {
            self.link_isomorphic(x, y);
        }
    }

    fn top_down(&mut self) {
        let max_h = self.b.height(self.b.base).max(self.f.height(self.f.base));
        for h in (2..=max_h).rev() {
            let bs: Vec<usize> = self.b.ids().filter(|&i| self.b.height(i) == h && !self.fwd.contains_key(&i)).collect();
            let fs: Vec<usize> = self.f.ids().filter(|&i| self.f.height(i) == h && !self.back.contains_key(&i)).collect();
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for &b in &bs {
                for &f in &fs {
                    if self.b.hash(b) == self.f.hash(f) && self.b.node(b).same_shape(self.f.node(f)) {
                        pairs.push((b, f));
                    }
                }
            }
            // Prefer pairs whose parents look alike, then pairs at similar positions.
            let score = |m: &Self, (b, f): (usize, usize)| {
                let same_parent = match (m.b.parent(b), m.f.parent(f)) {
                    (Some(pb), Some(pf)) => {
                        let (x, y) = (m.b.node(pb), m.f.node(pf));
                        u8::from(m.fwd.get(&pb) == Some(&pf)) * 2 + u8::from(x.kind == y.kind && x.label == y.label)
                    }
                    _ => 0,
                };
                let rel_b = (b - m.b.base) as f64 / m.b.nodes.len() as f64;
                let rel_f = (f - m.f.base) as f64 / m.f.nodes.len() as f64;
                (same_parent, -(rel_b - rel_f).abs())
            };
            pairs.sort_by(|&x, &y| {
                let (sx, dx) = score(self, x);
                let (sy, dy) = score(self, y);
                sy.cmp(&sx).then(dy.total_cmp(&dx)).then(x.cmp(&y))
            });
            for (b, f) in pairs {
                if !self.fwd.contains_key(&b) && !self.back.contains_key(&f) {
                    let (bn, fnode) = (self.b.node(b), self.f.node(f));
                    self.link_isomorphic(bn, fnode);
                }
            }
        }
    }

    fn dice(&self, b: usize, f: usize) -> f64 {
        let fd = self.f.descendants(f);
        let bd = self.b.descendants(b);
        let common = bd.clone().filter(|x| self.fwd.get(x).is_some_and(|y| fd.contains(y))).count();
        let total = bd.len() + fd.len();
        if total == 0 {
            0.0
        } else {
            2.0 * common as f64 / total as f64
        }
    }

    fn bottom_up(&mut self) {
        let order: Vec<usize> = self.b.ids().rev().collect();
        for b in order {
            if self.fwd.contains_key(&b) || self.b.node(b).children.is_empty() {
                continue;
            }
            let kind = self.b.node(b).kind;
            let mut cands: BTreeSet<usize> = BTreeSet::new();
            for d in self.b.descendants(b) {
                if let Some(&fd) = self.fwd.get(&d) {
                    let mut a = self.f.parent(fd);
                    while let Some(x) = a {
                        if !self.back.contains_key(&x) && self.f.node(x).kind == kind {
                            cands.insert(x);
                        }
                        a = self.f.parent(x);
                    }
                }
            }
            let best = cands
                .into_iter()
                .map(|f| (self.dice(b, f), f))
                .filter(|(d, _)| *d >= 0.5)
                .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)));
            if let Some((_, f)) = best {
                self.link(b, f);
            }
        }
        let (rb, rf) = (self.b.base, self.f.base);
        if !self.fwd.contains_key(&rb) && !self.back.contains_key(&rf) && self.b.node(rb).kind == self.f.node(rf).kind {
            self.link(rb, rf);
        }
    }

    /// Aligns the children of every mapped pair, top-down.
    fn recover(&mut self) {
        let order: Vec<usize> = self.b.ids().collect();
        for b in order {
            let Some(&f) = self.fwd.get(&b) else { continue };
            let (bn, fnode) = (self.b.node(b), self.f.node(f));
            let bc: Vec<&Node> = bn.children.iter().collect();
            let fc: Vec<&Node> = fnode.children.iter().collect();
            // Anchors: children already mapped to children of the counterpart.
            let mut anchors: Vec<(usize, usize)> = Vec::new();
            for (i, x) in bc.iter().enumerate() {
                if let Some(j) = self.fwd.get(&x.id).and_then(|y| fc.iter().position(|c| c.id == *y)) {
                    anchors.push((i, j));
                }
            }
            let anchors = increasing_subsequence(&anchors);
            let mut gaps = Vec::new();
            let (mut pi, mut pj) = (0, 0);
            for &(i, j) in anchors.iter().chain(std::iter::once(&(bc.len(), fc.len()))) {
                gaps.push((pi..i, pj..j));
                pi = i + 1;
                pj = j + 1;
            }
            for (gi, gj) in gaps {
                let xs: Vec<&Node> = bc[gi].iter().copied().filter(|x| !self.fwd.contains_key(&x.id)).collect();
                let ys: Vec<&Node> = fc[gj].iter().copied().filter(|y| !self.back.contains_key(&y.id)).collect();
                let exact = lcs(&xs, &ys, |x, y| x.kind == y.kind && x.label == y.label);
                for &(i, j) in &exact {
                    self.link(xs[i].id, ys[j].id);
                }
                // Leftover same-kind children between exact matches pair up in order.
                let mut prev = (0, 0);
                for &(ei, ej) in exact.iter().chain(std::iter::once(&(xs.len(), ys.len()))) {
                    let rest_x: Vec<&Node> = xs[prev.0..ei].to_vec();
                    let mut rest_y: Vec<&Node> = ys[prev.1..ej].to_vec();
                    for x in rest_x {
                        if let Some(k) = rest_y.iter().position(|y| y.kind == x.kind) {
                            self.link(x.id, rest_y[k].id);
                            rest_y.drain(..=k);
                        }
                    }
                    prev = (ei + 1, ej + 1);
                }
            }
        }
    }

    /// Drops mappings whose parents disagree or that would reorder siblings.
    fn prune(&mut self) {
        let order: Vec<usize> = self.b.ids().collect();
        for b in order {
            let Some(&f) = self.fwd.get(&b) else {
                continue;
            };
            let ok = match (self.b.parent(b), self.f.parent(f)) {
                (None, None) => true,
                (Some(pb), Some(pf)) => self.fwd.get(&pb) == Some(&pf),
                _ => false,
            };
            if !ok || self.b.node(b).kind != self.f.node(f).kind {
                self.unlink(b);
                continue;
            }
            let bn = self.b.node(b);
            let pairs: Vec<(usize, usize)> = bn
                .children
                .iter()
                .enumerate()
                .filter_map(|(i, c)| self.fwd.get(&c.id).map(|&y| (i, self.f.position(y), c.id, y)))
                .filter(|&(_, _, _, y)| self.f.parent(y) == Some(f))
                .map(|(i, j, _, _)| (i, j))
                .collect();
            let keep: BTreeSet<usize> = increasing_subsequence(&pairs).into_iter().map(|(i, _)| i).collect();
            for (i, c) in bn.children.iter().enumerate() {
                if self.fwd.contains_key(&c.id) && !keep.contains(&i) {
                    self.unlink(c.id);
                }
            }
        }
    }
}

/// Longest subsequence of `(i, j)` pairs (sorted by `i`) increasing in `j`.
fn increasing_subsequence(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let n = pairs.len();
    let mut best = vec![1usize; n];
    let mut prev = vec![usize::MAX; n];
    for i in 0..n {
        for k in 0..i {
            if pairs[k].1 < pairs[i].1 && best[k] + 1 > best[i] {
                best[i] = best[k] + 1;
                prev[i] = k;
            }
        }
    }
    let Some(mut at) = (0..n).max_by_key(|&i| (best[i], usize::MAX - i)) else { return Vec::new() };
    let mut out = vec![pairs[at]];
    while prev[at] != usize::MAX {
        at = prev[at];
        out.push(pairs[at]);
    }
    out.reverse();
    out
}

fn lcs<T>(xs: &[T], ys: &[T], eq: impl Fn(&T, &T) -> bool) -> Vec<(usize, usize)> {
    let (n, m) = (xs.len(), ys.len());
    let mut t = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if eq(&xs[i], &ys[j]) { t[i + 1][j + 1] + 1 } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if eq(&xs[i], &ys[j]) && t[i][j] == t[i + 1][j + 1] + 1 {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if t[i + 1][j] >= t[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Source-like rendering of a node, used as a change label.
pub fn render(n: &Node) -> String {
    if n.kind.is_statement() || n.kind.is_expression() {
        unparse(n).split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        n.token().to_string()
    }
}

/// Whether `id` lies in `stmt`'s own part: not inside a nested statement.
fn in_own_part(stmt: &Node, id: usize) -> bool {
    fn go(n: &Node, id: usize, top: bool) -> bool {
        if n.id == id {
            return true;
        }
        if !top && n.kind.is_statement() {
            return false;
        }
        n.children.iter().any(|c| go(c, id, false))
    }
    go(stmt, id, true)
}

pub fn diff(buggy: &Node, fixed: &Node) -> DiffResult {
    let mut m = Matcher { b: Index::new(buggy), f: Index::new(fixed), fwd: HashMap::new(), back: HashMap::new() };
    m.top_down();
    m.bottom_up();
    m.recover();
    m.prune();

    let mut out = DiffResult { mapping: m.fwd.iter().map(|(&a, &b)| (a, b)).collect(), ..Default::default() };
    for b in m.b.ids() {
        match m.fwd.get(&b) {
            Some(&f) => {
                let (bn, fnode) = (m.b.node(b), m.f.node(f));
                if bn.label != fnode.label {
                    out.actions.push(EditAction::Update { node: b, label: fnode.label.clone() });
                    out.changes.push(FixingChange::new(OpKind::Update, fnode.kind, render(fnode)));
                }
            }
            None => {
                out.deleted.insert(b);
                let bn = m.b.node(b);
                out.changes.push(FixingChange::new(OpKind::Delete, bn.kind, render(bn)));
                if m.b.parent(b).is_some_and(|p| m.fwd.contains_key(&p)) {
                    out.actions.push(EditAction::Delete { node: b });
                }
            }
        }
    }
    for f in m.f.ids() {
        if m.back.contains_key(&f) {
            continue;
        }
        out.inserted.insert(f);
        let fnode = m.f.node(f);
        out.changes.push(FixingChange::new(OpKind::Insert, fnode.kind, render(fnode)));
        if let Some(&pb) = m.f.parent(f).and_then(|p| m.back.get(&p)) {
            out.actions.push(EditAction::Insert { parent: pb, index: m.f.position(f), subtree: fnode.clone() });
        }
    }
    // Statement-level updates.
    for s in buggy.statements() {
        let Some(&f) = m.fwd.get(&s.id) else { continue };
        let label_changed = s.label != m.f.node(f).label;
        let lost = out.deleted.iter().any(|&d| in_own_part(s, d) && !m.b.node(d).kind.is_statement());
        let gained = out.inserted.iter().any(|&i| {
            !m.f.node(i).kind.is_statement() && m.f.parent(i).and_then(|p| m.back.get(&p)).is_some_and(|&pb| in_own_part(s, pb))
        });
        let relabelled = s.preorder().into_iter().any(|n| n.id != s.id && in_own_part(s, n.id) && m.fwd.get(&n.id).is_some_and(|&y| m.f.node(y).label != n.label));
        if label_changed || lost || gained || relabelled {
            out.updated_statements.insert(s.id);
            if !label_changed {
                let fnode = m.f.node(f);
                out.changes.push(FixingChange::new(OpKind::Update, fnode.kind, render(fnode)));
            }
        }
    }
    out
}

/// Applies the edit script to a copy of `buggy`.
pub fn replay(buggy: &Node, d: &DiffResult) -> Node {
    let mut t = buggy.clone();
    for a in &d.actions {
        match a {
            EditAction::Update { node, label } => {
                if let Some(n) = t.find_mut(*node) {
                    n.label = label.clone();
                }
            }
            EditAction::Delete { node } => remove(&mut t, *node),
            EditAction::Insert { .. } => {}
        }
    }
    let mut inserts: BTreeMap<usize, Vec<(usize, &Node)>> = BTreeMap::new();
    for a in &d.actions {
        if let EditAction::Insert { parent, index, subtree } = a {
            inserts.entry(*parent).or_default().push((*index, subtree));
        }
    }
    // Parents are original nodes; inserted subtrees may reuse their ids, so
    // they are attached only after the original children were visited.
    fn attach(n: &mut Node, inserts: &mut BTreeMap<usize, Vec<(usize, &Node)>>) {
        for c in &mut n.children {
            attach(c, inserts);
        }
        if let Some(mut list) = inserts.remove(&n.id) {
            list.sort_by_key(|&(i, _)| i);
            for (i, s) in list {
                let at = i.min(n.children.len());
                n.children.insert(at, s.clone());
            }
        }
    }
    attach(&mut t, &mut inserts);
    t
}

fn remove(t: &mut Node, id: usize) {
    if let Some(pos) = t.children.iter().position(|c| c.id == id) {
        t.children.remove(pos);
        return;
    }
    for c in &mut t.children {
        remove(c, id);
    }
}

/// A training unit: buggy statement subtree and its fix; at most one side empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubtreePair {
    pub buggy: Option<Node>,
    pub fixed: Option<Node>,
}

impl SubtreePair {
    pub fn buggy_id(&self) -> Option<usize> {
        self.buggy.as_ref().map(|n| n.id)
    }

    pub fn fixed_id(&self) -> Option<usize> {
        self.fixed.as_ref().map(|n| n.id)
    }

    /// Both sides present with the same shape up to labels.
    pub fn is_relabelling(&self) -> bool {
        fn same(a: &Node, b: &Node) -> bool {
            a.kind == b.kind && a.children.len() == b.children.len() && a.children.iter().zip(&b.children).all(|(x, y)| same(x, y))
        }
        matches!((&self.buggy, &self.fixed), (Some(a), Some(b)) if same(a, b))
    }
}

impl fmt::Display for SubtreePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |n: &Option<Node>| n.as_ref().map_or("EMPTY".to_string(), render);
        write!(f, "({} | {})", side(&self.buggy), side(&self.fixed))
    }
}

fn nearest_statement_ancestor(idx: &HashMap<usize, usize>, tree: &Node, id: usize) -> Option<usize> {
    let mut at = idx.get(&id).copied();
    while let Some(p) = at {
        if tree.find(p).is_some_and(|n| n.kind.is_statement()) {
            return Some(p);
        }
        at = idx.get(&p).copied();
    }
    None
}

/// Buggy statement subtrees (updated or deleted), outermost only.
pub fn buggy_subtrees(buggy: &Node, d: &DiffResult) -> Vec<usize> {
    let marked: BTreeSet<usize> = buggy
        .statements()
        .into_iter()
        .filter(|s| d.updated_statements.contains(&s.id) || d.deleted.contains(&s.id))
        .map(|s| s.id)
        .collect();
    let parents = buggy.parents();
    marked
        .iter()
        .copied()
        .filter(|&s| {
            let mut at = parents.get(&s).copied();
            while let Some(p) = at {
                if marked.contains(&p) {
                    return false;
                }
                at = parents.get(&p).copied();
            }
            true
        })
        .collect()
}

/// Pairs buggy and fixed statement subtrees by the four pairing rules.
pub fn pair_subtrees(buggy: &Node, fixed: &Node, d: &DiffResult) -> Vec<SubtreePair> {
    let outer = buggy_subtrees(buggy, d);
    let mut pairs: Vec<SubtreePair> = Vec::new();
    let mut covered_fixed: Vec<usize> = Vec::new();
    for &s in &outer {
        let bn = buggy.find(s).expect("buggy statement").clone();
        match d.mapping.get(&s) {
            Some(&f) => {
                covered_fixed.push(f);
                pairs.push(SubtreePair { buggy: Some(bn), fixed: fixed.find(f).cloned() });
            }
            None => pairs.push(SubtreePair { buggy: Some(bn), fixed: None }),
        }
    }
    let fparents = fixed.parents();
    let back = d.reverse_mapping();
    for s in fixed.statements() {
        if !d.inserted.contains(&s.id) {
            continue;
        }
        // Only the outermost inserted statement of an inserted region.
        if nearest_statement_ancestor(&fparents, fixed, s.id).is_some_and(|a| d.inserted.contains(&a)) {
            continue;
        }
        let inside_pair = covered_fixed.iter().any(|&c| c != s.id && fixed.find(c).is_some_and(|n| n.find(s.id).is_some()));
        let anchor = {
            let mut at = fparents.get(&s.id).copied();
            let mut found = None;
            while let Some(p) = at {
                if back.contains_key(&p) && fixed.find(p).is_some_and(|n| n.kind.is_statement()) {
                    found = Some(p);
                    break;
                }
                at = fparents.get(&p).copied();
            }
            found
        };
        let anchored = anchor.is_some_and(|a| covered_fixed.contains(&a));
        if !(inside_pair || anchored) {
            pairs.push(SubtreePair { buggy: None, fixed: fixed.find(s.id).cloned() });
        }
    }
    pairs
}

/// Buggy-side statements a fix touches: updated or deleted statements, plus
/// an anchor for each inserted statement outside any buggy subtree (its
/// previous sibling, else its enclosing statement, else its next sibling).
pub fn buggy_statements(buggy: &Node, fixed: &Node, d: &DiffResult) -> BTreeSet<usize> {
    let mut out: BTreeSet<usize> = buggy
        .statements()
        .into_iter()
        .filter(|s| d.updated_statements.contains(&s.id) || d.deleted.contains(&s.id))
        .map(|s| s.id)
        .collect();
    let fparents = fixed.parents();
    let back = d.reverse_mapping();
    let bparents = buggy.parents();
    let mut extra = BTreeSet::new();
    for s in fixed.statements() {
        if !d.inserted.contains(&s.id) {
            continue;
        }
        let Some(&pf) = fparents.get(&s.id) else { continue };
        let Some(&pb) = back.get(&pf) else { continue };
        // Covered already if the enclosing buggy statement (or one of its ancestors) is marked.
        let mut at = Some(pb);
        let mut covered = false;
        while let Some(p) = at {
            if out.contains(&p) {
                covered = true;
                break;
            }
            at = bparents.get(&p).copied();
        }
        if covered {
            continue;
        }
        let block = buggy.find(pb).expect("mapped parent");
        let fblock = fixed.find(pf).expect("fixed parent");
        let pos = fblock.children.iter().position(|c| c.id == s.id).unwrap_or(0);
        let prev = fblock.children[..pos].iter().rev().find_map(|c| back.get(&c.id)).copied();
        let next = fblock.children[pos + 1..].iter().find_map(|c| back.get(&c.id)).copied();
        let enclosing = if block.kind.is_statement() { Some(pb) } else { nearest_statement_ancestor(&bparents, buggy, pb) };
        if let Some(a) = prev.or(enclosing).or(next) {
            if buggy.find(a).is_some_and(|n| n.kind.is_statement()) {
                extra.insert(a);
            }
        }
    }
    out.extend(extra);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugType {
    Type1,
    Type2,
    Type3,
    Type4,
    Type5,
}

impl BugType {
    pub const ALL: [BugType; 5] = [BugType::Type1, BugType::Type2, BugType::Type3, BugType::Type4, BugType::Type5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_multi_hunk(self) -> bool {
        matches!(self, BugType::Type3 | BugType::Type4 | BugType::Type5)
    }

    pub fn is_multi_statement(self) -> bool {
        matches!(self, BugType::Type2 | BugType::Type4 | BugType::Type5)
    }
}

impl fmt::Display for BugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Type{}", self.index() + 1)
    }
}

/// Bug type from the number of statements in each buggy hunk.
pub fn classify_bug_type(stmts_per_hunk: &[usize]) -> Option<BugType> {
    match stmts_per_hunk {
        [] => None,
        [1] => Some(BugType::Type1),
        [_] => Some(BugType::Type2),
        many if many.iter().all(|&c| c == 1) => Some(BugType::Type3),
        many if many.iter().all(|&c| c > 1) => Some(BugType::Type4),
        _ => Some(BugType::Type5),
    }
}

/// Splits statements into maximal runs of consecutive statements (flattened
/// source order) within one method.
pub fn statement_runs(program: &Node, stmts: &BTreeSet<usize>) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    for m in program.methods() {
        let mut cur: Vec<usize> = Vec::new();
        for s in m.statement_ids() {
            if stmts.contains(&s) {
                cur.push(s);
            } else if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
    }
    runs
}

/// Ground-truth hunks and bug type of a buggy/fixed program pair.
pub fn ground_truth(buggy: &Node, fixed: &Node) -> (DiffResult, Vec<Vec<usize>>, Option<BugType>) {
    let d = diff(buggy, fixed);
    let stmts = buggy_statements(buggy, fixed, &d);
    let runs = statement_runs(buggy, &stmts);
    let ty = classify_bug_type(&runs.iter().map(Vec::len).collect::<Vec<_>>());
    (d, runs, ty)
}

/// One line of the training-pair dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairRecord {
    pub bug_id: String,
    pub buggy_subtree: Option<Node>,
    pub fixed_subtree: Option<Node>,
    pub method_before: Node,
    pub method_after: Node,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn identical_trees_have_no_changes() {
        let p = parse("func f(a: int): int { let b = a + 1; if (b > 2) { return b; } return 0; }").unwrap();
        let d = diff(&p, &p);
        assert!(d.changes.is_empty() && d.actions.is_empty());
        assert_eq!(d.mapping.len(), p.size());
        assert!(d.mapping.iter().all(|(a, b)| a == b));
    }

    #[test]
    fn bug_type_definitions() {
        assert_eq!(classify_bug_type(&[1]), Some(BugType::Type1));
        assert_eq!(classify_bug_type(&[2]), Some(BugType::Type2));
        assert_eq!(classify_bug_type(&[1, 1, 1]), Some(BugType::Type3));
        assert_eq!(classify_bug_type(&[2, 3]), Some(BugType::Type4));
        assert_eq!(classify_bug_type(&[1, 3]), Some(BugType::Type5));
        assert_eq!(classify_bug_type(&[]), None);
    }

    #[test]
    fn deleted_statement_pairs_with_empty() {
        let b = parse("func f(a: int): int { let x = a; print(x); x = x * 2; return x; }").unwrap();
        let f = parse("func f(a: int): int { let x = a; x = x * 2; return x; }").unwrap();
        let d = diff(&b, &f);
        assert!(replay(&b, &d).same_shape(&f));
        let pairs = pair_subtrees(&b, &f, &d);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].fixed, None);
        assert_eq!(pairs[0].buggy.as_ref().unwrap().kind, Kind::ExprStmt);
    }

    #[test]
    fn inserted_top_level_statement_pairs_with_empty() {
        let b = parse("func f(a: int): int { let x = a; return x; }").unwrap();
        let f = parse("func f(a: int): int { let x = a; print(x); return x; }").unwrap();
        let d = diff(&b, &f);
        assert!(replay(&b, &d).same_shape(&f));
        let pairs = pair_subtrees(&b, &f, &d);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].buggy, None);
        assert_eq!(render(pairs[0].fixed.as_ref().unwrap()), "print(x);");
        assert_eq!(buggy_statements(&b, &f, &d).len(), 1);
    }

    #[test]
    fn nested_buggy_statements_collapse_to_outermost() {
        let b = parse("func f(a: int): int { if (a > 0) { a = a + 1; } return a; }").unwrap();
        let f = parse("func f(a: int): int { if (a >= 0) { a = a - 1; } return a; }").unwrap();
        let d = diff(&b, &f);
        let pairs = pair_subtrees(&b, &f, &d);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].buggy.as_ref().unwrap().kind, Kind::If);
        assert!(pairs[0].is_relabelling());
        assert_eq!(buggy_statements(&b, &f, &d).len(), 2);
    }
}
