//! Rotation-system planar maps, the mobile-to-map bijection, balls and
//! canonical codes.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boltzmann::WeightSequence;
use crate::sampler::enumerate_displacements;
use crate::trees::{mobile_type, write_varint, LabeledMobile, TreeError, TypedTree};

const NONE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("ball radius must be at least 1")]
    ZeroRadius,
    #[error("map has no root")]
    Unrooted,
    #[error("enumeration budget of {0} objects exceeded")]
    Budget(usize),
    #[error("enumeration needs a finite face degree bound")]
    InfiniteSupport,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A map given by half-edges: `twin` is the edge involution, `next` the
/// counterclockwise successor around the origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanarMap {
    twin: Vec<u32>,
    next: Vec<u32>,
    origin: Vec<u32>,
    n_vertices: usize,
    root: Option<usize>,
    point: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapJson {
    pub twin: Vec<u32>,
    pub next: Vec<u32>,
    pub root: Option<u32>,
    pub point: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapStats {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    /// Sorted face degrees.
    pub face_degrees: Vec<usize>,
}

impl PlanarMap {
    /// The map with one vertex and no edge.
    pub fn vertex_map(pointed: bool) -> Self {
        PlanarMap { twin: Vec::new(), next: Vec::new(), origin: Vec::new(), n_vertices: 1, root: None, point: pointed.then_some(0) }
    }

    /// Builds from a rotation system; vertices are numbered by the smallest
    /// half-edge in their rotation cycle. `point` names a half-edge whose
    /// origin is the pointed vertex.
    pub fn from_rotation(twin: Vec<u32>, next: Vec<u32>, root: usize, point_half_edge: Option<usize>) -> Result<Self, MapError> {
        let n = twin.len();
        if n == 0 || next.len() != n || root >= n {
            return Err(MapError::Invalid("empty or inconsistent arrays".into()));
        }
        let mut origin = vec![NONE; n];
        let mut nv = 0u32;
        for h in 0..n {
            if origin[h] != NONE {
                continue;
            }
            let mut g = h;
            loop {
                if origin[g] != NONE {
                    return Err(MapError::Invalid("next is not a permutation".into()));
                }
                origin[g] = nv;
                g = next[g] as usize;
                if g >= n {
                    return Err(MapError::Invalid("next out of range".into()));
                }
                if g == h {
                    break;
                }
            }
            nv += 1;
        }
        let m = PlanarMap { point: point_half_edge.map(|h| origin[h] as usize), twin, next, origin, n_vertices: nv as usize, root: Some(root) };
        m.validate()?;
        Ok(m)
    }

    /// Renumbers vertices by first appearance in half-edge order, the same
    /// numbering `from_rotation` produces.
    fn from_parts(twin: Vec<u32>, next: Vec<u32>, origin: Vec<u32>, n_vertices: usize, root: Option<usize>, point: Option<usize>) -> Self {
        let mut map = vec![NONE; n_vertices];
        let mut nv = 0u32;
        let origin = origin
            .iter()
            .map(|&o| {
                if map[o as usize] == NONE {
                    map[o as usize] = nv;
                    nv += 1;
                }
                map[o as usize]
            })
            .collect();
        let point = point.map(|p| map[p] as usize);
        PlanarMap { twin, next, origin, n_vertices: nv as usize, root, point }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let n = self.twin.len();
        let bad = |s: &str| Err(MapError::Invalid(s.into()));
        for h in 0..n {
            let t = self.twin[h] as usize;
            if t >= n || t == h || self.twin[t] as usize != h {
                return bad("twin is not a fixed-point-free involution");
            }
            let g = self.next[h] as usize;
            if g >= n || self.origin[g] != self.origin[h] {
                return bad("next leaves the origin vertex");
            }
        }
        let mut seen = vec![false; n];
        for h in 0..n {
            let g = self.next[h] as usize;
            if seen[g] {
                return bad("next is not a permutation");
            }
            seen[g] = true;
        }
        if n > 0 && self.distances_from(self.origin[0] as usize).contains(&usize::MAX) {
            return bad("map is not connected");
        }
        if self.n_vertices + self.faces().len() != n / 2 + 2 {
            return bad("Euler characteristic is not 2");
        }
        Ok(())
    }

    pub fn half_edges(&self) -> usize {
        self.twin.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.twin.len() / 2
    }

    pub fn twin(&self, h: usize) -> usize {
        self.twin[h] as usize
    }

    pub fn next(&self, h: usize) -> usize {
        self.next[h] as usize
    }

    pub fn origin(&self, h: usize) -> usize {
        self.origin[h] as usize
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn point(&self) -> Option<usize> {
        self.point
    }

    pub fn is_vertex_map(&self) -> bool {
        self.twin.is_empty()
    }

    /// `e-`, the origin of the root half-edge.
    pub fn root_tail(&self) -> Option<usize> {
        self.root.map(|h| self.origin(h))
    }

    /// `e+`, the tip of the root half-edge; the only vertex of the vertex map.
    pub fn root_head(&self) -> usize {
        match self.root {
            Some(h) => self.origin(self.twin(h)),
            None => 0,
        }
    }

    pub fn reverse_root(&mut self) {
        if let Some(h) = self.root {
            self.root = Some(self.twin(h));
        }
    }

    pub fn with_root(mut self, h: usize) -> Self {
        assert!(h < self.twin.len(), "root half-edge out of range");
        self.root = Some(h);
        self
    }

    pub fn with_point(mut self, v: Option<usize>) -> Self {
        assert!(v.is_none_or(|v| v < self.n_vertices), "point out of range");
        self.point = v;
        self
    }

    pub fn without_point(mut self) -> Self {
        self.point = None;
        self
    }

    /// Number of half-edges leaving `v`; loops count twice.
    pub fn degree(&self, v: usize) -> usize {
        self.origin.iter().filter(|&&o| o as usize == v).count()
    }

    pub fn root_degree(&self) -> usize {
        self.degree(self.root_head())
    }

    /// Face cycles of `h -> next(twin(h))`.
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let n = self.twin.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for h in 0..n {
            if seen[h] {
                continue;
            }
            let mut cyc = Vec::new();
            let mut g = h;
            while !seen[g] {
                seen[g] = true;
                cyc.push(g);
                g = self.next(self.twin(g));
            }
            out.push(cyc);
        }
        out
    }

    pub fn stats(&self) -> MapStats {
        if self.is_vertex_map() {
            return MapStats { vertices: 1, edges: 0, faces: 1, face_degrees: vec![0] };
        }
        let mut face_degrees: Vec<usize> = self.faces().iter().map(|f| f.len()).collect();
        face_degrees.sort_unstable();
        MapStats { vertices: self.n_vertices, edges: self.n_edges(), faces: face_degrees.len(), face_degrees }
    }

    /// Graph distances from `v` (`usize::MAX` when unreachable).
    pub fn distances_from(&self, v: usize) -> Vec<usize> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n_vertices];
        for h in 0..self.twin.len() {
            adj[self.origin(h)].push(self.origin(self.twin(h)));
        }
        let mut dist = vec![usize::MAX; self.n_vertices];
        dist[v] = 0;
        let mut q = VecDeque::from([v]);
        while let Some(u) = q.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        dist
    }

    /// `d(r, e+) - d(r, e-)` for the pointed vertex `r`.
    pub fn sign(&self) -> Option<i64> {
        let (r, h) = (self.point?, self.root?);
        let d = self.distances_from(r);
        Some(d[self.origin(self.twin(h))] as i64 - d[self.origin(h)] as i64)
    }

    /// Vertices within distance `k` of `e+`, minus edges joining two
    /// vertices at distance exactly `k`, rooted at the same half-edge.
    pub fn ball(&self, k: usize) -> Result<MapBall, MapError> {
        if k == 0 {
            return Err(MapError::ZeroRadius);
        }
        if self.is_vertex_map() {
            return Ok(MapBall { map: self.clone().without_point(), radius: k });
        }
        let root = self.root.ok_or(MapError::Unrooted)?;
        let dist = self.distances_from(self.root_head());
        let n = self.twin.len();
        let keep_edge = |h: usize| {
            let (a, b) = (dist[self.origin(h)], dist[self.origin(self.twin(h))]);
            a <= k && b <= k && !(a == k && b == k)
        };
        let mut new_id = vec![NONE; n];
        let mut kept = Vec::new();
        for h in 0..n {
            if keep_edge(h) {
                new_id[h] = kept.len() as u32;
                kept.push(h);
            }
        }
        if new_id[root] == NONE {
            return Err(MapError::Invalid("root edge outside the ball".into()));
        }
        let twin: Vec<u32> = kept.iter().map(|&h| new_id[self.twin(h)]).collect();
        let next: Vec<u32> = kept
            .iter()
            .map(|&h| {
                let mut g = self.next(h);
                while new_id[g] == NONE {
                    g = self.next(g);
                }
                new_id[g]
            })
            .collect();
        let mut vid = vec![NONE; self.n_vertices];
        let mut nv = 0u32;
        let origin: Vec<u32> = kept
            .iter()
            .map(|&h| {
                let o = self.origin(h);
                if vid[o] == NONE {
                    vid[o] = nv;
                    nv += 1;
                }
                vid[o]
            })
            .collect();
        let map = PlanarMap::from_parts(twin, next, origin, nv as usize, Some(new_id[root] as usize), None);
        Ok(MapBall { map, radius: k })
    }

    /// Byte string identifying the rooted (and pointed, if a point is set)
    /// map up to isomorphism.
    pub fn canonical_code(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let Some(root) = self.root else {
            out.push(0);
            out.push(u8::from(self.point.is_some()));
            return out;
        };
        let n = self.twin.len();
        let mut label = vec![NONE; n];
        let mut order = Vec::with_capacity(n);
        label[root] = 0;
        order.push(root);
        let mut i = 0;
        while i < order.len() {
            let h = order[i];
            for g in [self.next(h), self.twin(h)] {
                if label[g] == NONE {
                    label[g] = order.len() as u32;
                    order.push(g);
                }
            }
            i += 1;
        }
        write_varint(&mut out, n as u64 + 1);
        for &h in &order {
            write_varint(&mut out, label[self.twin(h)] as u64);
            write_varint(&mut out, label[self.next(h)] as u64);
        }
        match self.point {
            Some(p) => {
                let first = order.iter().position(|&h| self.origin(h) == p).map_or(0, |x| x as u64 + 1);
                write_varint(&mut out, first);
            }
            None => write_varint(&mut out, 0),
        }
        out
    }

    pub fn canonical_hex(&self) -> String {
        hex::encode(self.canonical_code())
    }

    pub fn to_json(&self) -> MapJson {
        MapJson { twin: self.twin.clone(), next: self.next.clone(), root: self.root.map(|h| h as u32), point: self.point.map(|v| v as u32) }
    }

    pub fn from_json(j: &MapJson) -> Result<Self, MapError> {
        if j.twin.is_empty() {
            return Ok(PlanarMap::vertex_map(j.point.is_some()));
        }
        let root = j.root.ok_or(MapError::Unrooted)? as usize;
        let mut m = PlanarMap::from_rotation(j.twin.clone(), j.next.clone(), root, None)?;
        if let Some(p) = j.point {
            if p as usize >= m.n_vertices {
                return Err(MapError::Invalid("point out of range".into()));
            }
            m.point = Some(p as usize);
        }
        Ok(m)
    }

    /// Same map with half-edges renamed by `perm` (new index of each half-edge).
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let n = self.twin.len();
        let mut twin = vec![0; n];
        let mut next = vec![0; n];
        let mut origin = vec![0; n];
        for h in 0..n {
            twin[perm[h]] = perm[self.twin(h)] as u32;
            next[perm[h]] = perm[self.next(h)] as u32;
            origin[perm[h]] = self.origin[h];
        }
        PlanarMap::from_parts(twin, next, origin, self.n_vertices, self.root.map(|h| perm[h]), self.point)
    }
}

/// A ball `B(k)` of a rooted map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapBall {
    pub map: PlanarMap,
    pub radius: usize,
}

impl MapBall {
    /// Checks the ball properties against distances inside the ball.
    pub fn check(&self) -> Result<(), MapError> {
        let m = &self.map;
        if m.is_vertex_map() {
            return Ok(());
        }
        let d = m.distances_from(m.root_head());
        if d.iter().any(|&x| x > self.radius) {
            return Err(MapError::Invalid("vertex beyond the radius".into()));
        }
        for h in 0..m.half_edges() {
            if d[m.origin(h)] == self.radius && d[m.origin(m.twin(h))] == self.radius {
                return Err(MapError::Invalid("edge between two boundary vertices".into()));
            }
        }
        Ok(())
    }
}

/// Builder shared by the finite and window constructions: arcs are added as
/// half-edge pairs with a sort key at each end; the rotation is assembled
/// at the end.
#[derive(Default)]
pub(crate) struct ArcBuilder {
    pub twin: Vec<u32>,
    pub vertex: Vec<u32>,
    /// Sort key within the vertex, in clockwise order.
    pub key: Vec<(i64, i64)>,
}

impl ArcBuilder {
    pub fn half(&mut self, vertex: usize, key: (i64, i64)) -> usize {
        self.twin.push(NONE);
        self.vertex.push(vertex as u32);
        self.key.push(key);
        self.twin.len() - 1
    }

    pub fn join(&mut self, a: usize, b: usize) {
        self.twin[a] = b as u32;
        self.twin[b] = a as u32;
    }

    /// Assembles the counterclockwise rotation (reverse of key order).
    pub fn finish(self, n_vertices: usize, root: usize, point: Option<usize>) -> PlanarMap {
        let n = self.twin.len();
        let mut by_vertex: Vec<Vec<usize>> = vec![Vec::new(); n_vertices];
        for h in 0..n {
            by_vertex[self.vertex[h] as usize].push(h);
        }
        let mut next = vec![NONE; n];
        for hs in by_vertex.iter_mut() {
            hs.sort_by_key(|&h| self.key[h]);
            let m = hs.len();
            for j in 0..m {
                // clockwise list, so the counterclockwise successor is the predecessor
                next[hs[j]] = hs[(j + m - 1) % m] as u32;
            }
        }
        PlanarMap::from_parts(self.twin, next, self.vertex, n_vertices, Some(root), point)
    }
}

/// The pointed rooted map of a finite mobile. Mobiles without face
/// vertices give the vertex map.
pub fn bdfg_forward(m: &LabeledMobile) -> Result<PlanarMap, MapError> {
    let t = m.tree();
    if !t.types().iter().any(|&ty| ty >= mobile_type::FACE) {
        return Ok(PlanarMap::vertex_map(true));
    }
    let corners = m.corner_sequence();
    let nc = corners.len() as i64;
    // type-1 corner positions per label
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, c) in corners.iter().enumerate() {
        if c.ty == mobile_type::VERTEX {
            by_label.entry(c.label2).or_default().push(i);
        }
    }
    let successor = |i: usize| -> Option<usize> {
        let c = &corners[i];
        let want = if c.ty == mobile_type::VERTEX { c.label2 - 2 } else { c.label2 - 1 };
        let list = by_label.get(&want)?;
        let k = list.partition_point(|&p| p <= i);
        Some(if k < list.len() { list[k] } else { list[0] })
    };
    let mut vid = vec![NONE; t.len()];
    let mut nv = 0usize;
    for v in 0..t.len() {
        if t.type_of(v) == mobile_type::VERTEX {
            vid[v] = nv as u32;
            nv += 1;
        }
    }
    let r = nv;
    // clockwise at a type-1 vertex: corners in contour order, and within a
    // corner the arcs by decreasing contour distance to their other end
    // (an arc to r counts as distance 1/2)
    let mut b = ArcBuilder::default();
    // half-edge arriving at each type-2 vertex's successors, to be merged
    let mut pending: Vec<Option<usize>> = vec![None; t.len()];
    let mut root_half = None;
    for (i, c) in corners.iter().enumerate() {
        let s = successor(i);
        let incoming = match s {
            Some(s) => b.half(vid[corners[s].vertex] as usize, (s as i64, -2 * (i as i64 - s as i64).rem_euclid(nc))),
            // around r, counterclockwise order is contour order of the sources
            None => b.half(r, (-(i as i64), 0)),
        };
        if c.ty == mobile_type::VERTEX {
            let out_key = match s {
                Some(s) => (s as i64 - i as i64).rem_euclid(nc) * 2,
                None => 1,
            };
            let out = b.half(vid[c.vertex] as usize, (i as i64, -out_key));
            b.join(incoming, out);
            if i == 0 {
                root_half = Some(incoming);
            }
        } else {
            match pending[c.vertex].take() {
                Some(other) => {
                    b.join(other, incoming);
                    if c.vertex == 0 {
                        // merged root: points to the successor of corner 0
                        root_half = Some(incoming);
                    }
                }
                None => pending[c.vertex] = Some(incoming),
            }
        }
    }
    let root = root_half.ok_or(MapError::Unrooted)?;
    let map = b.finish(nv + 1, root, Some(r));
    map.validate()?;
    Ok(map)
}

/// Merges two labeled trees with type-2 roots (one type-4 child each) into
/// one tree whose root has both type-4 children.
pub fn merge_roots(a: &TypedTree, b: &TypedTree) -> Result<TypedTree, MapError> {
    for t in [a, b] {
        if t.type_of(0) != mobile_type::FLAG || t.word(0) != [mobile_type::FLAG_FACE] || t.labels().is_none() {
            return Err(MapError::Invalid("merge needs labeled type-2 roots with one type-4 child".into()));
        }
    }
    let (na, nb) = (a.len(), b.len());
    let mut types = Vec::with_capacity(na + nb - 1);
    let mut labels = Vec::with_capacity(na + nb - 1);
    let mut children: Vec<Vec<usize>> = Vec::with_capacity(na + nb - 1);
    for v in 0..na {
        types.push(a.type_of(v));
        labels.push(a.label2(v).unwrap_or(0));
        children.push(a.children(v).collect());
    }
    // b's vertices other than its root, shifted
    let shift = |v: usize| na + v - 1;
    for v in 1..nb {
        types.push(b.type_of(v));
        labels.push(b.label2(v).unwrap_or(0));
        children.push(b.children(v).map(shift).collect());
    }
    children[0].extend(b.children(0).map(shift));
    Ok(TypedTree::from_children(&types, Some(&labels), &children, 0)?)
}

/// Every distinct ordering of a multiset of letters.
fn arrangements(counts: &[(u8, usize)]) -> Vec<Vec<u8>> {
    let total: usize = counts.iter().map(|c| c.1).sum();
    let mut out = Vec::new();
    let mut left: Vec<usize> = counts.iter().map(|c| c.1).collect();
    let mut cur = Vec::with_capacity(total);
    fn rec(counts: &[(u8, usize)], left: &mut [usize], cur: &mut Vec<u8>, total: usize, out: &mut Vec<Vec<u8>>) {
        if cur.len() == total {
            out.push(cur.clone());
            return;
        }
        for j in 0..counts.len() {
            if left[j] > 0 {
                left[j] -= 1;
                cur.push(counts[j].0);
                rec(counts, left, cur, total, out);
                cur.pop();
                left[j] += 1;
            }
        }
    }
    rec(counts, &mut left, &mut cur, total, &mut out);
    out
}

#[derive(Clone, Debug)]
struct Shape {
    ty: u8,
    children: Vec<Shape>,
}

struct Enumerator {
    bullet_words: Vec<Vec<u8>>,
    diamond_words: Vec<Vec<u8>>,
    budget: usize,
    produced: usize,
}

impl Enumerator {
    /// Shapes rooted at a vertex of type `ty` with at most `max34` face
    /// vertices, paired with the number used.
    fn shapes(&mut self, ty: u8, max34: usize) -> Result<Vec<(Shape, usize)>, MapError> {
        let mut out = Vec::new();
        match ty {
            mobile_type::VERTEX => {
                for (kids, used) in self.sequences(mobile_type::FACE, max34)? {
                    out.push((Shape { ty, children: kids }, used));
                }
            }
            mobile_type::FLAG => {
                for (s, used) in self.shapes(mobile_type::FLAG_FACE, max34)? {
                    out.push((Shape { ty, children: vec![s] }, used));
                }
            }
            _ => {
                if max34 == 0 {
                    return Ok(out);
                }
                let words = if ty == mobile_type::FACE { self.bullet_words.clone() } else { self.diamond_words.clone() };
                for w in words {
                    for (kids, used) in self.product(&w, max34 - 1)? {
                        out.push((Shape { ty, children: kids }, used + 1));
                    }
                }
            }
        }
        self.produced += out.len();
        if self.produced > self.budget {
            return Err(MapError::Budget(self.budget));
        }
        Ok(out)
    }

    /// Ordered sequences of type-`ty` subtrees.
    fn sequences(&mut self, ty: u8, max34: usize) -> Result<Vec<(Vec<Shape>, usize)>, MapError> {
        let mut out = vec![(Vec::new(), 0)];
        if max34 == 0 {
            return Ok(out);
        }
        for (first, used) in self.shapes(ty, max34)? {
            for (rest, used2) in self.sequences(ty, max34 - used)? {
                let mut v = vec![first.clone()];
                v.extend(rest);
                out.push((v, used + used2));
            }
        }
        Ok(out)
    }

    /// Children lists for a fixed word.
    fn product(&mut self, word: &[u8], max34: usize) -> Result<Vec<(Vec<Shape>, usize)>, MapError> {
        let Some((&first, rest)) = word.split_first() else {
            return Ok(vec![(Vec::new(), 0)]);
        };
        let mut out = Vec::new();
        for (s, used) in self.shapes(first, max34)? {
            for (tail, used2) in self.product(rest, max34 - used)? {
                let mut v = vec![s.clone()];
                v.extend(tail);
                out.push((v, used + used2));
            }
        }
        Ok(out)
    }
}

fn flatten(s: &Shape, types: &mut Vec<u8>, children: &mut Vec<Vec<usize>>) -> usize {
    let id = types.len();
    types.push(s.ty);
    children.push(Vec::new());
    for c in &s.children {
        let k = flatten(c, types, children);
        children[id].push(k);
    }
    id
}

/// All labeled mobiles with a type-1 root and at most `max_type34` face
/// vertices whose offspring words are allowed by the weights' support.
pub fn enumerate_mobiles(q: &WeightSequence, max_type34: usize, budget: usize) -> Result<Vec<LabeledMobile>, MapError> {
    let top = q.max_degree().ok_or(MapError::InfiniteSupport)?;
    let mut bullet_words = Vec::new();
    let mut diamond_words = Vec::new();
    for n in 1..=top {
        if !q.positive(n) {
            continue;
        }
        // a face of degree n: k type-1 and k' type-2 children
        for (offset, dest) in [(2usize, &mut bullet_words), (1usize, &mut diamond_words)] {
            if n < offset {
                continue;
            }
            let free = n - offset;
            for k in 0..=free / 2 {
                let kp = free - 2 * k;
                dest.extend(arrangements(&[(mobile_type::VERTEX, k), (mobile_type::FLAG, kp)]));
            }
        }
    }
    let mut en = Enumerator { bullet_words, diamond_words, budget, produced: 0 };
    let shapes = en.shapes(mobile_type::VERTEX, max_type34)?;
    let mut out = Vec::new();
    for (shape, _) in shapes {
        let mut types = Vec::new();
        let mut children = Vec::new();
        flatten(&shape, &mut types, &mut children);
        let skeleton = TypedTree::from_children(&types, None, &children, 0)?;
        label_all(&skeleton, &mut out, budget)?;
    }
    Ok(out)
}

/// Every labeling of a skeleton with root label 0.
fn label_all(skel: &TypedTree, out: &mut Vec<LabeledMobile>, budget: usize) -> Result<(), MapError> {
    let faces: Vec<usize> = (0..skel.len()).filter(|&v| skel.type_of(v) >= mobile_type::FACE).collect();
    let choices: Vec<Vec<Vec<i64>>> = faces.iter().map(|&v| enumerate_displacements(skel.type_of(v), skel.word(v))).collect();
    let mut idx = vec![0usize; faces.len()];
    loop {
        let mut labels = vec![0i64; skel.len()];
        let mut face_pos = 0;
        for v in 0..skel.len() {
            // breadth-first order: parents are labeled first
            let ty = skel.type_of(v);
            if ty >= mobile_type::FACE {
                let disp = &choices[face_pos][idx[face_pos]];
                for (c, y) in skel.children(v).zip(disp) {
                    labels[c] = labels[v] + y;
                }
                face_pos += 1;
            } else {
                for c in skel.children(v) {
                    labels[c] = labels[v];
                }
            }
        }
        out.push(LabeledMobile::new(skel.clone().with_labels(labels))?);
        if out.len() > budget {
            return Err(MapError::Budget(budget));
        }
        let mut j = 0;
        loop {
            if j == idx.len() {
                return Ok(());
            }
            idx[j] += 1;
            if idx[j] < choices[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mobile_type::*;

    fn mobile(types: &[u8], labels: &[i64], children: &[Vec<usize>]) -> LabeledMobile {
        LabeledMobile::new(TypedTree::from_children(types, Some(labels), children, 0).unwrap()).unwrap()
    }

    #[test]
    fn one_edge_map() {
        let m = mobile(&[VERTEX, FACE], &[0, 0], &[vec![1], vec![]]);
        let map = bdfg_forward(&m).unwrap();
        let s = map.stats();
        assert_eq!((s.vertices, s.edges, s.faces, s.face_degrees.clone()), (2, 1, 1, vec![2]));
        assert_eq!(map.sign(), Some(1));
    }

    #[test]
    fn vertex_map_convention() {
        let m = mobile(&[VERTEX], &[0], &[vec![]]);
        let map = bdfg_forward(&m).unwrap();
        assert!(map.is_vertex_map());
        assert_eq!(map.stats().vertices, 1);
    }

    #[test]
    fn quadrangulation_mobiles_give_quadrangulations() {
        let q = WeightSequence::table(&[(4, 1.0)]).unwrap();
        let ms = enumerate_mobiles(&q, 1, 1000).unwrap();
        // the single-vertex mobile plus three labelings of one face
        assert_eq!(ms.len(), 4);
        for m in ms.iter().filter(|m| m.tree().len() > 1) {
            let map = bdfg_forward(m).unwrap();
            let s = map.stats();
            assert!(s.face_degrees.iter().all(|&d| d == 4), "{s:?}");
            assert_eq!(map.sign(), Some(1));
        }
    }

    #[test]
    fn count_identities_small_mixed_support() {
        let q = WeightSequence::table(&[(3, 1.0), (4, 1.0)]).unwrap();
        let ms = enumerate_mobiles(&q, 2, 100_000).unwrap();
        assert!(ms.len() > 10);
        let mut codes = std::collections::HashSet::new();
        for m in &ms {
            let map = bdfg_forward(m).unwrap();
            assert!(codes.insert(map.canonical_code()));
            if m.tree().len() == 1 {
                continue;
            }
            let t = m.tree();
            let c = t.type_counts(4);
            let s = map.stats();
            assert_eq!(s.vertices, 1 + c[0]);
            assert_eq!(s.edges, c[0] + c[2] + c[3] - 1);
            assert_eq!(s.faces, c[2] + c[3]);
            assert!(map.sign() == Some(1), "{:?}", map.sign());
        }
    }

    #[test]
    fn null_map_from_merged_root() {
        let half = TypedTree::from_children(&[FLAG, FLAG_FACE], Some(&[1, 1]), &[vec![1], vec![]], 0).unwrap();
        let merged = merge_roots(&half, &half).unwrap();
        assert_eq!(merged.word(0), [FLAG_FACE, FLAG_FACE]);
        assert_eq!(merged.height(), half.height());
        let m = LabeledMobile::new(merged).unwrap();
        // no type-1 corner at all: one edge to r, a loop
        let map = bdfg_forward(&m).unwrap();
        assert_eq!(map.sign(), Some(0));
        let s = map.stats();
        assert_eq!((s.vertices, s.edges), (1, 1));
    }

    #[test]
    fn balls_and_codes() {
        let q = WeightSequence::table(&[(4, 1.0)]).unwrap();
        let ms = enumerate_mobiles(&q, 3, 100_000).unwrap();
        for m in ms.iter().skip(1) {
            let map = bdfg_forward(m).unwrap();
            let big = map.ball(100).unwrap();
            assert_eq!(big.map.canonical_code(), map.clone().without_point().canonical_code());
            let b2 = map.ball(2).unwrap();
            b2.check().unwrap();
            assert_eq!(map.ball(5).unwrap().map.ball(2).unwrap(), b2);
            assert!(b2.map.root_degree() >= 1);
            // relabeling invariance
            let n = map.half_edges();
            let perm: Vec<usize> = (0..n).map(|h| (h * 7 + 3) % n).collect();
            if (0..n).map(|h| (h * 7 + 3) % n).collect::<std::collections::HashSet<_>>().len() == n {
                assert_eq!(map.relabeled(&perm).canonical_code(), map.canonical_code());
            }
        }
    }

    #[test]
    fn loop_and_link_differ() {
        let link = PlanarMap::from_rotation(vec![1, 0], vec![0, 1], 0, None).unwrap();
        let lp = PlanarMap::from_rotation(vec![1, 0], vec![1, 0], 0, None).unwrap();
        assert_ne!(link.canonical_code(), lp.canonical_code());
        assert_eq!(link.stats().vertices, 2);
        assert_eq!(lp.stats().vertices, 1);
        assert_eq!(link.ball(1).unwrap().map, link);
    }

    #[test]
    fn json_round_trip() {
        let m = mobile(&[VERTEX, FACE, VERTEX], &[0, 0, 2], &[vec![1], vec![2], vec![]]);
        let map = bdfg_forward(&m).unwrap();
        let j = serde_json::to_string(&map.to_json()).unwrap();
        let back = PlanarMap::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back.canonical_code(), map.canonical_code());
    }
}
