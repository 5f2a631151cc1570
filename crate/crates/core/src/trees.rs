//! Plane trees with per-vertex types and optional doubled labels.
//!
//! Trees are stored in breadth-first order: vertex 0 is the root, the
//! children of a vertex occupy a contiguous index range, and vertices are
//! sorted by height. The layout is unique for a given plane tree, so
//! structural equality is plain field equality.

use std::collections::VecDeque;
use std::ops::Range;

use num::rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("invalid mobile: {0}")]
    InvalidMobile(String),
    #[error("malformed encoding: {0}")]
    Decode(&'static str),
    #[error("invalid tree json: {0}")]
    Json(String),
}

/// Mobile vertex types (0-based). In the map they become, respectively,
/// map vertices, merged edges, faces hanging off a vertex and faces hanging
/// off a flag.
pub mod mobile_type {
    pub const VERTEX: u8 = 0;
    pub const FLAG: u8 = 1;
    pub const FACE: u8 = 2;
    pub const FLAG_FACE: u8 = 3;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TypedTree {
    types: Vec<u8>,
    labels: Option<Vec<i64>>,
    parent: Vec<u32>,
    first_child: Vec<u32>,
    child_count: Vec<u32>,
    depth: Vec<u32>,
}

/// Builds a tree in breadth-first order. Vertices are expanded one at a
/// time, in index order.
#[derive(Debug)]
pub struct BfsBuilder {
    tree: TypedTree,
    next: usize,
}

impl BfsBuilder {
    pub fn new(root_type: u8) -> Self {
        Self::with_root_label(root_type, None)
    }

    pub fn with_root_label(root_type: u8, label2: Option<i64>) -> Self {
        BfsBuilder {
            tree: TypedTree {
                types: vec![root_type],
                labels: label2.map(|l| vec![l]),
                parent: vec![NO_PARENT],
                first_child: vec![0],
                child_count: vec![0],
                depth: vec![0],
            },
            next: 0,
        }
    }

    /// Index of the next vertex to expand, if any remain.
    pub fn pending(&self) -> Option<usize> {
        (self.next < self.tree.types.len()).then_some(self.next)
    }

    pub fn len(&self) -> usize {
        self.tree.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn type_of(&self, v: usize) -> u8 {
        self.tree.types[v]
    }

    pub fn label2(&self, v: usize) -> Option<i64> {
        self.tree.labels.as_ref().map(|l| l[v])
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.tree.depth[v]
    }

    /// Gives the next pending vertex the children `types` (in order).
    pub fn expand(&mut self, types: &[u8]) -> usize {
        self.expand_labeled(types, None)
    }

    pub fn expand_labeled(&mut self, types: &[u8], labels: Option<&[i64]>) -> usize {
        let v = self.next;
        assert!(v < self.tree.types.len(), "no pending vertex");
        let t = &mut self.tree;
        let start = t.types.len();
        t.first_child[v] = if types.is_empty() { 0 } else { start as u32 };
        t.child_count[v] = types.len() as u32;
        let d = t.depth[v] + 1;
        for (k, &ty) in types.iter().enumerate() {
            t.types.push(ty);
            t.parent.push(v as u32);
            t.first_child.push(0);
            t.child_count.push(0);
            t.depth.push(d);
            if let Some(ls) = t.labels.as_mut() {
                ls.push(labels.map(|l| l[k]).unwrap_or(0));
            }
        }
        self.next += 1;
        v
    }

    /// Marks every remaining vertex as a leaf.
    pub fn finish(self) -> TypedTree {
        self.tree
    }
}

impl TypedTree {
    pub fn single(ty: u8) -> Self {
        BfsBuilder::new(ty).finish()
    }

    /// Builds from an arbitrary child-list description rooted at `root`.
    pub fn from_children(types: &[u8], labels: Option<&[i64]>, children: &[Vec<usize>], root: usize) -> Result<Self, TreeError> {
        let n = types.len();
        if children.len() != n || root >= n || labels.is_some_and(|l| l.len() != n) {
            return Err(TreeError::UnknownVertex(root));
        }
        let mut b = BfsBuilder::with_root_label(types[root], labels.map(|l| l[root]));
        let mut queue = VecDeque::from([root]);
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut kid_types = Vec::new();
        let mut kid_labels = Vec::new();
        while let Some(v) = queue.pop_front() {
            kid_types.clear();
            kid_labels.clear();
            for &c in &children[v] {
                if c >= n || seen[c] {
                    return Err(TreeError::UnknownVertex(c));
                }
                seen[c] = true;
                kid_types.push(types[c]);
                if let Some(l) = labels {
                    kid_labels.push(l[c]);
                }
                queue.push_back(c);
            }
            b.expand_labeled(&kid_types, labels.map(|_| kid_labels.as_slice()));
        }
        Ok(b.finish())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn type_of(&self, v: usize) -> u8 {
        self.types[v]
    }

    pub fn types(&self) -> &[u8] {
        &self.types
    }

    pub fn label2(&self, v: usize) -> Option<i64> {
        self.labels.as_ref().map(|l| l[v])
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        let p = self.parent[v];
        (p != NO_PARENT).then_some(p as usize)
    }

    pub fn children(&self, v: usize) -> Range<usize> {
        let s = self.first_child[v] as usize;
        s..s + self.child_count[v] as usize
    }

    pub fn child_count(&self, v: usize) -> usize {
        self.child_count[v] as usize
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v] as usize
    }

    pub fn height(&self) -> usize {
        *self.depth.last().unwrap() as usize
    }

    /// Position of `v` among its siblings.
    pub fn child_index(&self, v: usize) -> Option<usize> {
        self.parent(v).map(|p| v - self.first_child[p] as usize)
    }

    /// Number of vertices of each type, for types `0..k`.
    pub fn type_counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &t in &self.types {
            c[t as usize] += 1;
        }
        c
    }

    /// Child type word of `v`.
    pub fn word(&self, v: usize) -> &[u8] {
        &self.types[self.children(v)]
    }

    /// Same shape with every type replaced by `f(type)`.
    pub fn map_types(&self, f: impl Fn(u8) -> u8) -> TypedTree {
        let mut t = self.clone();
        for ty in t.types.iter_mut() {
            *ty = f(*ty);
        }
        t
    }

    /// Builds a tree from its breadth-first type sequence and child counts.
    pub fn from_bfs(types: &[u8], child_counts: &[u32], labels: Option<&[i64]>) -> Result<TypedTree, TreeError> {
        if types.is_empty() || child_counts.len() > types.len() {
            return Err(TreeError::Decode("inconsistent breadth-first description"));
        }
        let mut b = BfsBuilder::with_root_label(types[0], labels.map(|l| l[0]));
        let mut next = 1usize;
        for &c in child_counts {
            let end = next + c as usize;
            if end > types.len() {
                return Err(TreeError::Decode("inconsistent breadth-first description"));
            }
            b.expand_labeled(&types[next..end], labels.map(|l| &l[next..end]));
            next = end;
        }
        if next != types.len() {
            return Err(TreeError::Decode("inconsistent breadth-first description"));
        }
        Ok(b.finish())
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Self {
        assert_eq!(labels.len(), self.len());
        self.labels = Some(labels);
        self
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// All vertices at height at most `k`.
    pub fn truncate(&self, k: usize) -> TypedTree {
        let keep = self.depth.partition_point(|&d| d as usize <= k);
        let mut t = TypedTree {
            types: self.types[..keep].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..keep].to_vec()),
            parent: self.parent[..keep].to_vec(),
            first_child: self.first_child[..keep].to_vec(),
            child_count: self.child_count[..keep].to_vec(),
            depth: self.depth[..keep].to_vec(),
        };
        for v in 0..keep {
            if t.depth[v] as usize == k {
                t.child_count[v] = 0;
                t.first_child[v] = 0;
            }
        }
        t
    }

    /// The subtree rooted at `u`, reindexed.
    pub fn subtree_at(&self, u: usize) -> Result<TypedTree, TreeError> {
        if u >= self.len() {
            return Err(TreeError::UnknownVertex(u));
        }
        let mut b = BfsBuilder::with_root_label(self.types[u], self.label2(u));
        let mut queue = VecDeque::from([u]);
        while let Some(v) = queue.pop_front() {
            let r = self.children(v);
            let labels = self.labels.as_ref().map(|l| &l[r.clone()]);
            b.expand_labeled(&self.types[r.clone()], labels);
            queue.extend(r);
        }
        Ok(b.finish())
    }

    /// Vertices in contour order, one entry per angular sector. Returns
    /// (vertex, sector index around that vertex).
    pub fn contour(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.len());
        let mut sector = vec![0usize; self.len()];
        // stack of (vertex, next child offset)
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        out.push((0, 0));
        sector[0] = 1;
        while let Some(top) = stack.last_mut() {
            let (v, k) = *top;
            let m = self.child_count(v);
            if k < m {
                top.1 += 1;
                let c = self.first_child[v] as usize + k;
                out.push((c, 0));
                sector[c] = 1;
                stack.push((c, 0));
            } else {
                stack.pop();
                if let Some(&(p, pk)) = stack.last() {
                    let last_of_root = p == 0 && pk == self.child_count(0);
                    if !last_of_root {
                        out.push((p, sector[p]));
                        sector[p] += 1;
                    }
                }
            }
        }
        out
    }

    /// Canonical byte encoding (depth-first).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * self.len() + 1);
        self.encode_into(&mut out);
        out
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(u8::from(self.labels.is_some()));
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            write_varint(out, self.child_count[v] as u64);
            out.push(self.types[v]);
            if let Some(l) = &self.labels {
                write_varint(out, zigzag(l[v]));
            }
            stack.extend(self.children(v).rev());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<TypedTree, TreeError> {
        let mut pos = 0;
        let t = Self::decode_from(bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(TreeError::Decode("trailing bytes"));
        }
        Ok(t)
    }

    fn decode_from(bytes: &[u8], pos: &mut usize) -> Result<TypedTree, TreeError> {
        let labeled = match bytes.get(*pos) {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(TreeError::Decode("bad header")),
        };
        *pos += 1;
        // preorder records, then rebuild child lists
        let mut types = Vec::new();
        let mut labels = Vec::new();
        let mut children: Vec<Vec<usize>> = Vec::new();
        let mut open: Vec<(usize, u64)> = Vec::new();
        loop {
            let count = read_varint(bytes, pos)?;
            let ty = *bytes.get(*pos).ok_or(TreeError::Decode("truncated"))?;
            *pos += 1;
            if labeled {
                labels.push(unzigzag(read_varint(bytes, pos)?));
            }
            let v = types.len();
            types.push(ty);
            children.push(Vec::new());
            if let Some((p, left)) = open.last_mut() {
                children[*p].push(v);
                *left -= 1;
            }
            while matches!(open.last(), Some((_, 0))) {
                open.pop();
            }
            if count > 0 {
                open.push((v, count));
            }
            if open.is_empty() {
                break;
            }
        }
        let l = labeled.then_some(labels.as_slice());
        TypedTree::from_children(&types, l, &children, 0)
    }

    pub fn to_json(&self) -> TreeJson {
        fn go(t: &TypedTree, v: usize) -> TreeJson {
            TreeJson { ty: t.types[v] as u32 + 1, label2: t.label2(v), children: t.children(v).map(|c| go(t, c)).collect() }
        }
        go(self, 0)
    }

    pub fn from_json(j: &TreeJson) -> Result<TypedTree, TreeError> {
        let labeled = j.label2.is_some();
        let mut types = Vec::new();
        let mut labels = Vec::new();
        let mut children = Vec::new();
        let mut stack = vec![(j, usize::MAX)];
        while let Some((node, parent)) = stack.pop() {
            if node.ty == 0 || node.ty > 256 {
                return Err(TreeError::Json(format!("type {} out of range", node.ty)));
            }
            if node.label2.is_some() != labeled {
                return Err(TreeError::Json("labels must be all present or all null".into()));
            }
            let v = types.len();
            types.push((node.ty - 1) as u8);
            labels.push(node.label2.unwrap_or(0));
            children.push(Vec::new());
            if parent != usize::MAX {
                children[parent].push(v);
            }
            for c in node.children.iter().rev() {
                stack.push((c, v));
            }
        }
        // children were pushed in reverse visiting order per parent
        for c in children.iter_mut() {
            c.sort_unstable();
        }
        TypedTree::from_children(&types, labeled.then_some(labels.as_slice()), &children, 0)
    }
}

/// Nested JSON form; types are 1-based in this format.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TreeJson {
    #[serde(rename = "type")]
    pub ty: u32,
    pub label2: Option<i64>,
    pub children: Vec<TreeJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Forest {
    pub trees: Vec<TypedTree>,
}

impl Forest {
    pub fn new(trees: Vec<TypedTree>) -> Self {
        Forest { trees }
    }

    /// Root-type word.
    pub fn word(&self) -> Vec<u8> {
        self.trees.iter().map(|t| t.type_of(0)).collect()
    }

    pub fn truncate(&self, k: usize) -> Forest {
        Forest::new(self.trees.iter().map(|t| t.truncate(k)).collect())
    }

    pub fn height(&self) -> usize {
        self.trees.iter().map(|t| t.height()).max().unwrap_or(0)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_varint(&mut out, self.trees.len() as u64);
        for t in &self.trees {
            t.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Forest, TreeError> {
        let mut pos = 0;
        let n = read_varint(bytes, &mut pos)?;
        let mut trees = Vec::new();
        for _ in 0..n {
            trees.push(TypedTree::decode_from(bytes, &mut pos)?);
        }
        if pos != bytes.len() {
            return Err(TreeError::Decode("trailing bytes"));
        }
        Ok(Forest { trees })
    }
}

impl From<TypedTree> for Forest {
    fn from(t: TypedTree) -> Self {
        Forest { trees: vec![t] }
    }
}

/// Distance `1/(1+p)` where `p` is the largest height at which both
/// truncations agree. Identical objects are reported separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalDistance {
    Equal,
    /// Truncations agree up to this height (-1 if they already differ at the roots).
    AgreeTo(i64),
}

impl LocalDistance {
    pub fn value(&self) -> Ratio<i64> {
        match *self {
            LocalDistance::Equal => Ratio::from_integer(0),
            // no common truncation at all is treated like agreeing at the root
            LocalDistance::AgreeTo(p) => Ratio::new(1, 1 + p.max(0)),
        }
    }
}

pub fn local_distance(a: &Forest, b: &Forest) -> LocalDistance {
    if a == b {
        return LocalDistance::Equal;
    }
    let top = a.height().max(b.height()) + 1;
    for k in 0..=top {
        if a.truncate(k) != b.truncate(k) {
            return LocalDistance::AgreeTo(k as i64 - 1);
        }
    }
    unreachable!("distinct finite forests differ at some height")
}

/// A corner of a mobile: a type-1 or type-2 vertex seen from one of its
/// angular sectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Corner {
    pub vertex: usize,
    pub sector: usize,
    pub ty: u8,
    pub label2: i64,
}

/// A finite labelled 4-type tree satisfying the mobile rules.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledMobile {
    tree: TypedTree,
}

impl LabeledMobile {
    pub fn new(tree: TypedTree) -> Result<Self, TreeError> {
        validate_mobile(&tree)?;
        Ok(LabeledMobile { tree })
    }

    /// Skips validation. Callers must guarantee the mobile rules.
    pub fn new_unchecked(tree: TypedTree) -> Self {
        LabeledMobile { tree }
    }

    pub fn tree(&self) -> &TypedTree {
        &self.tree
    }

    pub fn into_tree(self) -> TypedTree {
        self.tree
    }

    pub fn label2(&self, v: usize) -> i64 {
        self.tree.labels.as_ref().unwrap()[v]
    }

    /// Corners of type-1/2 vertices in contour order.
    pub fn corner_sequence(&self) -> Vec<Corner> {
        self.tree
            .contour()
            .into_iter()
            .filter(|&(v, _)| self.tree.types[v] <= mobile_type::FLAG)
            .map(|(v, s)| Corner { vertex: v, sector: s, ty: self.tree.types[v], label2: self.label2(v) })
            .collect()
    }

    pub fn count_type(&self, ty: u8) -> usize {
        self.tree.types.iter().filter(|&&t| t == ty).count()
    }
}

/// Checks the typing rules and the label constraints of a mobile.
pub fn validate_mobile(t: &TypedTree) -> Result<(), TreeError> {
    use mobile_type::*;
    let bad = |m: String| Err(TreeError::InvalidMobile(m));
    let Some(labels) = t.labels() else {
        return bad("mobile without labels".into());
    };
    let root_ty = t.type_of(0);
    match root_ty {
        VERTEX if labels[0] != 0 => return bad("type-1 root must have label 0".into()),
        FLAG if labels[0] != 1 => return bad("type-2 root must have doubled label 1".into()),
        VERTEX | FLAG => {}
        _ => return bad("root must be of type 1 or 2".into()),
    }
    for v in 0..t.len() {
        let ty = t.type_of(v);
        let w = t.word(v);
        match ty {
            VERTEX => {
                if w.iter().any(|&c| c != FACE) {
                    return bad(format!("vertex {v}: type-1 children must be type 3"));
                }
            }
            FLAG => {
                let want = if v == 0 { 2 } else { 1 };
                if w.len() != want || w.iter().any(|&c| c != FLAG_FACE) {
                    return bad(format!("vertex {v}: type-2 vertex needs {want} type-4 children"));
                }
            }
            FACE | FLAG_FACE => {
                if w.iter().any(|&c| c > FLAG) {
                    return bad(format!("vertex {v}: type-3/4 children must be type 1/2"));
                }
                let parent = t.parent(v).map(|p| t.type_of(p));
                let expect_parent = if ty == FACE { VERTEX } else { FLAG };
                if parent != Some(expect_parent) {
                    return bad(format!("vertex {v}: wrong parent type"));
                }
                let p = t.parent(v).unwrap();
                if labels[v] != labels[p] {
                    return bad(format!("vertex {v}: must carry its parent's label"));
                }
                let disp: Vec<i64> = t.children(v).map(|c| labels[c] - labels[v]).collect();
                if !is_displacement(ty, w, &disp) {
                    return bad(format!("vertex {v}: displacement {disp:?} not allowed"));
                }
            }
            _ => return bad(format!("vertex {v}: type out of range")),
        }
        let parity_even = ty == VERTEX || ty == FACE;
        if (labels[v].rem_euclid(2) == 0) != parity_even {
            return bad(format!("vertex {v}: label parity"));
        }
    }
    Ok(())
}

/// Membership in the displacement set of a type-3/4 vertex (doubled units).
/// `disp[j]` is the doubled label offset of the j-th child.
pub fn is_displacement(parent_ty: u8, word: &[u8], disp: &[i64]) -> bool {
    if word.len() != disp.len() {
        return false;
    }
    let boundary = if parent_ty == mobile_type::FACE { mobile_type::VERTEX } else { mobile_type::FLAG };
    let n = word.len();
    let letter = |j: usize| if j == 0 || j == n + 1 { boundary } else { word[j - 1] };
    let y = |j: usize| if j == 0 || j == n + 1 { 0 } else { disp[j - 1] };
    (0..=n).all(|j| {
        let ones = i64::from(letter(j) == mobile_type::VERTEX) + i64::from(letter(j + 1) == mobile_type::VERTEX);
        let slack2 = y(j + 1) - y(j) + ones;
        slack2 >= 0 && slack2 % 2 == 0
    })
}

pub(crate) fn write_varint(out: &mut Vec<u8>, mut x: u64) {
    loop {
        let b = (x & 0x7f) as u8;
        x >>= 7;
        if x == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

pub(crate) fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64, TreeError> {
    let mut x = 0u64;
    let mut shift = 0;
    loop {
        let b = *bytes.get(*pos).ok_or(TreeError::Decode("truncated varint"))?;
        *pos += 1;
        if shift >= 64 {
            return Err(TreeError::Decode("varint overflow"));
        }
        x |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(x);
        }
        shift += 7;
    }
}

pub(crate) fn zigzag(x: i64) -> u64 {
    ((x << 1) ^ (x >> 63)) as u64
}

pub(crate) fn unzigzag(x: u64) -> i64 {
    ((x >> 1) as i64) ^ -((x & 1) as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> TypedTree {
        let mut b = BfsBuilder::new(0);
        for _ in 1..n {
            b.expand(&[0]);
        }
        b.finish()
    }

    #[test]
    fn truncation_of_short_trees() {
        assert_eq!(TypedTree::single(0).truncate(3), TypedTree::single(0));
        assert_eq!(path(4).truncate(1), path(2));
        let t = path(7);
        assert_eq!(t.truncate(5).truncate(2), t.truncate(2));
    }

    #[test]
    fn subtrees() {
        let t = path(3);
        assert_eq!(t.subtree_at(0).unwrap(), t);
        assert_eq!(t.subtree_at(1).unwrap(), path(2));
        assert_eq!(t.subtree_at(2).unwrap(), TypedTree::single(0));
        assert_eq!(t.subtree_at(9), Err(TreeError::UnknownVertex(9)));
    }

    #[test]
    fn distances() {
        let a = Forest::from(TypedTree::single(0));
        let b = Forest::from(TypedTree::single(1));
        assert_eq!(local_distance(&a, &a), LocalDistance::Equal);
        assert_eq!(local_distance(&a, &a).value(), Ratio::from_integer(0));
        assert_eq!(local_distance(&a, &b).value(), Ratio::from_integer(1));
        let p3 = Forest::from(path(3));
        let p4 = Forest::from(path(4));
        assert_eq!(local_distance(&p3, &p4), LocalDistance::AgreeTo(2));
        assert_eq!(local_distance(&p3, &p4).value(), Ratio::new(1, 3));
    }

    #[test]
    fn contour_sectors() {
        // root with children a, b; a has one child
        let t = TypedTree::from_children(&[0, 2, 2, 0], None, &[vec![1, 2], vec![3], vec![], vec![]], 0).unwrap();
        let c = t.contour();
        assert_eq!(c, vec![(0, 0), (1, 0), (3, 0), (1, 1), (0, 1), (2, 0)]);
        assert_eq!(TypedTree::single(0).contour(), vec![(0, 0)]);
    }

    #[test]
    fn mobile_corners() {
        let t = TypedTree::from_children(&[0, 2, 0], Some(&[0, 0, 2]), &[vec![1], vec![2], vec![]], 0).unwrap();
        let m = LabeledMobile::new(t).unwrap();
        let cs: Vec<(usize, i64)> = m.corner_sequence().iter().map(|c| (c.vertex, c.label2)).collect();
        assert_eq!(cs, vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn mobile_validation_rejects_bad_labels() {
        let t = TypedTree::from_children(&[0, 2, 0], Some(&[0, 0, 4]), &[vec![1], vec![2], vec![]], 0).unwrap();
        assert!(LabeledMobile::new(t).is_err());
        let t = TypedTree::from_children(&[0, 0], Some(&[0, 0]), &[vec![1], vec![]], 0).unwrap();
        assert!(LabeledMobile::new(t).is_err());
    }

    #[test]
    fn displacement_membership() {
        // face with one type-1 child: offsets -1, 0, 1
        for y in [-2, 0, 2] {
            assert!(is_displacement(mobile_type::FACE, &[0], &[y]));
        }
        assert!(!is_displacement(mobile_type::FACE, &[0], &[4]));
        assert!(!is_displacement(mobile_type::FACE, &[0], &[1]));
        assert!(is_displacement(mobile_type::FLAG_FACE, &[1], &[0]));
        assert!(!is_displacement(mobile_type::FLAG_FACE, &[1], &[2]));
    }

    #[test]
    fn encoding_round_trip() {
        let t = TypedTree::from_children(&[0, 2, 1, 0], Some(&[0, 0, -3, 2]), &[vec![1], vec![2, 3], vec![], vec![]], 0).unwrap();
        assert_eq!(TypedTree::decode(&t.encode()).unwrap(), t);
        let f = Forest::new(vec![t.clone(), path(3)]);
        assert_eq!(Forest::decode(&f.encode()).unwrap(), f);
        let mut other = t.labels().unwrap().to_vec();
        other[2] = -1;
        assert_ne!(t.clone().with_labels(other).encode(), t.encode());
    }

    #[test]
    fn json_round_trip() {
        let t = TypedTree::from_children(&[0, 2, 1, 0], Some(&[0, 0, -3, 2]), &[vec![1], vec![2, 3], vec![], vec![]], 0).unwrap();
        let j = serde_json::to_string(&t.to_json()).unwrap();
        let back: TreeJson = serde_json::from_str(&j).unwrap();
        assert_eq!(TypedTree::from_json(&back).unwrap(), t);
    }

    #[test]
    fn zigzag_round_trip() {
        for x in [-5i64, -1, 0, 1, 7, i64::MIN, i64::MAX] {
            assert_eq!(unzigzag(zigzag(x)), x);
        }
    }
}
