//! Balls of the infinite Boltzmann map read off windows of the infinite
//! mobile, plus size-conditioned finite maps for comparison.
//!
//! The infinite mobile has a single spine; it is expanded lazily and the
//! mobile-to-map construction is run on the expanded part only.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boltzmann::{derive_mobile_law, BoltzmannError, BoltzmannSolution, MobileLaw};
use crate::branching::{size_bias, LawError, PerronData};
use crate::periodicity::{self, PeriodError, SizeKind};
use crate::planar_maps::{bdfg_forward, merge_roots, ArcBuilder, MapBall, MapError, PlanarMap};
use crate::sampler::{label_tree, ConditionedSampler, SampleError, SpineSampler, TreeSampler};
use crate::series::{self, SeriesError};
use crate::trees::{mobile_type, LabeledMobile, TypedTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfiniteError {
    #[error("solution is not critical")]
    NotCritical,
    #[error("window exceeded {0} vertices")]
    ResourceCap(usize),
    #[error("stabilization check failed at depth {0}")]
    Unstable(usize),
    #[error("map size {n} is off the lattice (period {d}, residue {alpha})")]
    OffLattice { n: u64, d: u64, alpha: u64 },
    #[error("map size {0} is not realizable")]
    Unrealizable(u64),
    #[error(transparent)]
    Boltzmann(#[from] BoltzmannError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Period(#[from] PeriodError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Null,
}

/// Limit probabilities of the three root signs; positive and negative are
/// equally likely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignMixture {
    pub positive: f64,
    pub null: f64,
}

impl SignMixture {
    pub fn negative(&self) -> f64 {
        self.positive
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sign {
        let u = rng.random::<f64>();
        if u < self.null {
            Sign::Null
        } else if u < self.null + self.positive {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }
}

/// `w+ / w0 = (b_1 / (2 b_2)) * Z+ / (Z<>)^2`, normalized by `2 w+ + w0 = 1`.
/// Bipartite weights have no null maps.
pub fn sign_mixture(sol: &BoltzmannSolution, mobile: &MobileLaw, perron: &PerronData) -> SignMixture {
    let (Some(i1), Some(i2)) = (mobile.index_of(mobile_type::VERTEX), mobile.index_of(mobile_type::FLAG)) else {
        return SignMixture { positive: 0.5, null: 0.0 };
    };
    let ratio = perron.b[i1] / (2.0 * perron.b[i2]) * sol.x / (sol.y * sol.y);
    SignMixture { positive: ratio / (1.0 + 2.0 * ratio), null: 1.0 / (1.0 + 2.0 * ratio) }
}

/// One spine vertex with its child word (mobile types) and the position of
/// the next spine vertex in it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineLevel {
    pub ty: u8,
    pub label2: i64,
    pub word: Vec<u8>,
    pub spine_index: usize,
}

const NONE: u32 = u32::MAX;
/// Sorts an outgoing arc after every incoming arc of the same corner.
const OUTGOING: i64 = i64::MAX;

#[derive(Clone, Debug)]
struct Node {
    law_ty: u8,
    ty: u8,
    label2: i64,
    parent: u32,
    idx: u32,
    first_child: u32,
    n_children: u32,
    expanded: bool,
    on_spine: bool,
}

/// A corner: vertex and sector index.
pub type Corner = (u32, u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum ArcId {
    /// Arc out of a type-1 corner.
    Plain(Corner),
    /// The two merged arcs of a type-2 vertex.
    Merged(u32),
}

/// The infinite mobile, expanded on demand. Every vertex draws its child
/// word and child labels the first time it is visited, so the parts of the
/// tree that a computation never looks at are never sampled.
///
/// Corners follow the contour with a wrap at the root: after the last
/// sector of the root comes sector 0. Since the spine child never returns,
/// walking forward from the root climbs the left side of the spine and
/// walking backward climbs the right side.
pub struct InfiniteMobile<'a> {
    sampler: &'a InfiniteMapSampler,
    nodes: Vec<Node>,
    spine: Vec<u32>,
    node_cap: usize,
    succ: HashMap<Corner, Corner>,
    incoming: HashMap<Corner, Vec<Corner>>,
    word: Vec<u8>,
}

impl<'a> InfiniteMobile<'a> {
    fn new<R: Rng + ?Sized>(sampler: &'a InfiniteMapSampler, rng: &mut R, sign: Sign, node_cap: usize) -> Result<Self, InfiniteError> {
        let mut m = InfiniteMobile {
            sampler,
            nodes: Vec::new(),
            spine: Vec::new(),
            node_cap,
            succ: HashMap::new(),
            incoming: HashMap::new(),
            word: Vec::new(),
        };
        match sign {
            Sign::Positive | Sign::Negative => {
                let t = sampler.law_index(mobile_type::VERTEX);
                m.push_node(t, 0, NONE, 0, true);
                m.spine.push(0);
            }
            Sign::Null => {
                // fixed word of two type-4 children; the spine side is uniform
                let flag = sampler.law_index(mobile_type::FLAG);
                let ff = sampler.law_index(mobile_type::FLAG_FACE);
                m.push_node(flag, 1, NONE, 0, true);
                m.spine.push(0);
                let j = rng.random_range(0..2u32);
                m.nodes[0].first_child = 1;
                m.nodes[0].n_children = 2;
                m.nodes[0].expanded = true;
                for k in 0..2u32 {
                    m.push_node(ff, 1, 0, k, k == j);
                }
                m.spine.push(1 + j);
            }
        }
        Ok(m)
    }

    fn push_node(&mut self, law_ty: usize, label2: i64, parent: u32, idx: u32, on_spine: bool) {
        self.nodes.push(Node {
            law_ty: law_ty as u8,
            ty: self.sampler.mobile.mobile_types[law_ty],
            label2,
            parent,
            idx,
            first_child: NONE,
            n_children: 0,
            expanded: false,
            on_spine,
        });
    }

    fn expand<R: Rng + ?Sized>(&mut self, rng: &mut R, v: u32) -> Result<(), InfiniteError> {
        if self.nodes[v as usize].expanded {
            return Ok(());
        }
        let node = self.nodes[v as usize].clone();
        let mut word = std::mem::take(&mut self.word);
        word.clear();
        let spine_pos = if node.on_spine {
            Some(self.sampler.spine.draw(rng, node.law_ty, &mut word)?)
        } else {
            self.sampler.tree.draw_word(rng, node.law_ty, &mut word);
            None
        };
        let types = &self.sampler.mobile.mobile_types;
        let disp = if node.ty >= mobile_type::FACE {
            let mword: Vec<u8> = word.iter().map(|&t| types[t as usize]).collect();
            crate::sampler::sample_displacement(rng, node.ty, &mword)
        } else {
            vec![0; word.len()]
        };
        let first = self.nodes.len() as u32;
        for (k, (&t, y)) in word.iter().zip(disp).enumerate() {
            self.push_node(t as usize, node.label2 + y, v, k as u32, spine_pos == Some(k));
        }
        if let Some(j) = spine_pos {
            self.spine.push(first + j as u32);
        }
        let n = &mut self.nodes[v as usize];
        n.first_child = first;
        n.n_children = word.len() as u32;
        n.expanded = true;
        self.word = word;
        if self.nodes.len() > self.node_cap {
            return Err(InfiniteError::ResourceCap(self.node_cap));
        }
        Ok(())
    }

    /// Expands the spine until it has `levels` expanded vertices.
    pub fn grow_spine<R: Rng + ?Sized>(&mut self, rng: &mut R, levels: usize) -> Result<(), InfiniteError> {
        while self.spine_depth() < levels {
            let top = *self.spine.last().unwrap();
            self.expand(rng, top)?;
        }
        Ok(())
    }

    /// Number of expanded spine vertices.
    pub fn spine_depth(&self) -> usize {
        self.spine.iter().take_while(|&&v| self.nodes[v as usize].expanded).count()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// The expanded part of the spine.
    pub fn spine_levels(&self) -> Vec<SpineLevel> {
        let mut out = Vec::new();
        for w in self.spine.windows(2) {
            let n = &self.nodes[w[0] as usize];
            let kids = n.first_child..n.first_child + n.n_children;
            out.push(SpineLevel {
                ty: n.ty,
                label2: n.label2,
                word: kids.map(|c| self.nodes[c as usize].ty).collect(),
                spine_index: (w[1] - n.first_child) as usize,
            });
        }
        out
    }

    /// The finite labelled tree made of the first `levels` spine vertices
    /// and all their off-spine descendants; the spine vertex at depth
    /// `levels` is kept as a leaf. Returns the tree and its spine vertices.
    pub fn materialize<R: Rng + ?Sized>(&mut self, rng: &mut R, levels: usize) -> Result<(TypedTree, Vec<usize>), InfiniteError> {
        self.grow_spine(rng, levels)?;
        let cut = self.spine[levels];
        let mut order = vec![0u32];
        let mut index = HashMap::from([(0u32, 0usize)]);
        let (mut types, mut counts, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            if v != cut {
                self.expand(rng, v)?;
            }
            let n = &self.nodes[v as usize];
            types.push(n.ty);
            labels.push(n.label2);
            let k = if v == cut { 0 } else { n.n_children };
            counts.push(k);
            for c in n.first_child..n.first_child + k {
                index.insert(c, order.len());
                order.push(c);
            }
            i += 1;
        }
        let tree = TypedTree::from_bfs(&types, &counts, Some(&labels)).map_err(SampleError::from)?;
        let spine = self.spine[..=levels].iter().map(|v| index[v]).collect();
        Ok((tree, spine))
    }

    fn is_root(&self, v: u32) -> bool {
        self.nodes[v as usize].parent == NONE
    }

    fn child(&self, v: u32, k: u32) -> u32 {
        self.nodes[v as usize].first_child + k
    }

    /// Number of sectors of an expanded vertex.
    fn sectors(&self, v: u32) -> u32 {
        let n = &self.nodes[v as usize];
        if n.parent == NONE {
            n.n_children.max(1)
        } else {
            n.n_children + 1
        }
    }

    fn next_corner<R: Rng + ?Sized>(&mut self, rng: &mut R, (v, s): Corner) -> Result<Corner, InfiniteError> {
        self.expand(rng, v)?;
        let m = self.nodes[v as usize].n_children;
        if s < m {
            return Ok((self.child(v, s), 0));
        }
        if self.is_root(v) {
            return Ok((v, 0));
        }
        let n = &self.nodes[v as usize];
        let (p, i) = (n.parent, n.idx + 1);
        if self.is_root(p) && i == self.nodes[p as usize].n_children {
            Ok((p, 0))
        } else {
            Ok((p, i))
        }
    }

    fn prev_corner<R: Rng + ?Sized>(&mut self, rng: &mut R, (v, s): Corner) -> Result<Corner, InfiniteError> {
        self.expand(rng, v)?;
        let last_of = |me: &mut Self, rng: &mut R, c: u32| -> Result<Corner, InfiniteError> {
            me.expand(rng, c)?;
            Ok((c, me.nodes[c as usize].n_children))
        };
        if s > 0 {
            let c = self.child(v, s - 1);
            return last_of(self, rng, c);
        }
        if self.is_root(v) {
            let m = self.nodes[v as usize].n_children;
            if m == 0 {
                return Ok((v, 0));
            }
            let c = self.child(v, m - 1);
            return last_of(self, rng, c);
        }
        let n = &self.nodes[v as usize];
        Ok((n.parent, n.idx))
    }

    /// First later corner of a type-1 vertex one label below.
    fn successor<R: Rng + ?Sized>(&mut self, rng: &mut R, c: Corner) -> Result<Corner, InfiniteError> {
        if let Some(&s) = self.succ.get(&c) {
            return Ok(s);
        }
        let n = &self.nodes[c.0 as usize];
        let want = if n.ty == mobile_type::VERTEX { n.label2 - 2 } else { n.label2 - 1 };
        let mut q = c;
        loop {
            q = self.next_corner(rng, q)?;
            let d = &self.nodes[q.0 as usize];
            if d.ty == mobile_type::VERTEX && d.label2 == want {
                break;
            }
        }
        self.succ.insert(c, q);
        Ok(q)
    }

    /// Corners whose successor is `c`, nearest first.
    fn incoming_to<R: Rng + ?Sized>(&mut self, rng: &mut R, c: Corner) -> Result<Vec<Corner>, InfiniteError> {
        if let Some(v) = self.incoming.get(&c) {
            return Ok(v.clone());
        }
        let l = self.nodes[c.0 as usize].label2;
        let mut out = Vec::new();
        let mut q = c;
        loop {
            q = self.prev_corner(rng, q)?;
            let d = &self.nodes[q.0 as usize];
            match d.ty {
                mobile_type::VERTEX if d.label2 <= l => break,
                mobile_type::VERTEX if d.label2 == l + 2 => out.push(q),
                mobile_type::FLAG if d.label2 == l + 1 => out.push(q),
                _ => {}
            }
        }
        self.incoming.insert(c, out.clone());
        Ok(out)
    }

    /// Rotation key of the arc from `src` at its end `dst`.
    fn in_key<R: Rng + ?Sized>(&mut self, rng: &mut R, dst: Corner, src: Corner) -> Result<(i64, i64), InfiniteError> {
        let list = self.incoming_to(rng, dst)?;
        let rank = list.iter().position(|&q| q == src).expect("source listed at its successor");
        Ok((i64::from(dst.1), rank as i64))
    }

    /// Both ends of an arc as (vertex, rotation key).
    #[allow(clippy::type_complexity)]
    fn arc_ends<R: Rng + ?Sized>(&mut self, rng: &mut R, id: ArcId) -> Result<[(u32, (i64, i64)); 2], InfiniteError> {
        match id {
            ArcId::Plain(q) => {
                let s = self.successor(rng, q)?;
                let key = self.in_key(rng, s, q)?;
                Ok([(q.0, (i64::from(q.1), OUTGOING)), (s.0, key)])
            }
            ArcId::Merged(u) => {
                let mut ends = [(0, (0, 0)); 2];
                for (t, end) in ends.iter_mut().enumerate() {
                    let q = (u, t as u32);
                    let s = self.successor(rng, q)?;
                    *end = (s.0, self.in_key(rng, s, q)?);
                }
                Ok(ends)
            }
        }
    }

    fn arc_of(&self, src: Corner) -> ArcId {
        if self.nodes[src.0 as usize].ty == mobile_type::FLAG {
            ArcId::Merged(src.0)
        } else {
            ArcId::Plain(src)
        }
    }

    /// Arcs at a type-1 vertex.
    fn arcs_at<R: Rng + ?Sized>(&mut self, rng: &mut R, v: u32) -> Result<Vec<ArcId>, InfiniteError> {
        self.expand(rng, v)?;
        let mut out = Vec::new();
        for s in 0..self.sectors(v) {
            out.push(ArcId::Plain((v, s)));
            for q in self.incoming_to(rng, (v, s))? {
                out.push(self.arc_of(q));
            }
        }
        Ok(out)
    }

    /// The root edge and which of its two ends is `e+`. Ends are ordered
    /// (source, successor) for plain arcs and by sector for merged ones.
    fn root_arc(sign: Sign) -> (ArcId, usize) {
        match sign {
            Sign::Positive => (ArcId::Plain((0, 0)), 0),
            Sign::Negative => (ArcId::Plain((0, 0)), 1),
            Sign::Null => (ArcId::Merged(0), 0),
        }
    }

    /// Ball of radius `k` around `e+`, with the number of corners whose
    /// successor is a corner of `e+`.
    fn ball<R: Rng + ?Sized>(&mut self, rng: &mut R, sign: Sign, k: usize) -> Result<(MapBall, usize), InfiniteError> {
        let (root_id, tip) = Self::root_arc(sign);
        let root_ends = self.arc_ends(rng, root_id)?;
        let e_plus = root_ends[tip].0;
        let mut dist: HashMap<u32, usize> = HashMap::from([(e_plus, 0)]);
        let mut queue = std::collections::VecDeque::from([e_plus]);
        let mut arcs: BTreeMap<ArcId, [(u32, (i64, i64)); 2]> = BTreeMap::new();
        let mut into_root = 0;
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du >= k {
                continue;
            }
            let ids = self.arcs_at(rng, u)?;
            if u == e_plus {
                into_root = ids.len() - self.sectors(u) as usize;
            }
            for id in ids {
                if arcs.contains_key(&id) {
                    continue;
                }
                let ends = self.arc_ends(rng, id)?;
                for (w, _) in ends {
                    if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                        e.insert(du + 1);
                        queue.push_back(w);
                    }
                }
                arcs.insert(id, ends);
            }
        }
        let mut local: HashMap<u32, usize> = HashMap::new();
        let mut b = ArcBuilder::default();
        let mut root_half = None;
        for (id, ends) in &arcs {
            let mut halves = [0usize; 2];
            for (h, &(v, key)) in halves.iter_mut().zip(ends) {
                let n = local.len();
                let lv = *local.entry(v).or_insert(n);
                *h = b.half(lv, key);
            }
            b.join(halves[0], halves[1]);
            if *id == root_id {
                // the root half-edge starts away from e+
                root_half = Some(halves[1 - tip]);
            }
        }
        let partial = b.finish(local.len(), root_half.expect("root arc collected"), None);
        Ok((partial.ball(k)?, into_root))
    }
}

/// Policy for window growth and the stabilization recheck.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    /// Spine levels expanded before the ball is read off.
    pub initial_depth: usize,
    /// Cap on the number of sampled mobile vertices per ball.
    pub node_cap: usize,
    /// Recompute the ball from scratch on a window with twice as many
    /// spine levels and require the same canonical code.
    pub verify: bool,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy { initial_depth: 1, node_cap: 20_000_000, verify: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallSample {
    pub ball: MapBall,
    pub sign: Sign,
    /// Spine levels expanded when the ball was read off.
    pub window_depth: usize,
    /// Sampled mobile vertices.
    pub window_nodes: usize,
    /// Corners whose successor is a corner of `e+`.
    pub into_root: usize,
}

/// Samples the infinite mobile of a critical solution and the balls of the
/// corresponding infinite map.
#[derive(Clone, Debug)]
pub struct InfiniteMapSampler {
    pub mobile: MobileLaw,
    pub perron: PerronData,
    pub mixture: SignMixture,
    tree: TreeSampler,
    spine: SpineSampler,
}

impl InfiniteMapSampler {
    pub fn new(sol: &BoltzmannSolution) -> Result<Self, InfiniteError> {
        if !sol.classification.is_critical() {
            return Err(InfiniteError::NotCritical);
        }
        let mobile = derive_mobile_law(sol)?;
        let perron = mobile.law.perron_data()?;
        let spine_law = size_bias(&mobile.law, &perron)?;
        let mixture = sign_mixture(sol, &mobile, &perron);
        Ok(InfiniteMapSampler { tree: TreeSampler::new(&mobile.law), spine: SpineSampler::new(&spine_law, &perron), mobile, perron, mixture })
    }

    fn law_index(&self, mobile_ty: u8) -> usize {
        self.mobile.index_of(mobile_ty).expect("mobile type present in law")
    }

    /// A fresh infinite mobile rooted according to `sign`. Positive and
    /// negative maps share the same mobile.
    pub fn mobile<R: Rng + ?Sized>(&self, rng: &mut R, sign: Sign, node_cap: usize) -> Result<InfiniteMobile<'_>, InfiniteError> {
        if sign == Sign::Null && self.mobile.index_of(mobile_type::FLAG).is_none() {
            return Err(InfiniteError::NotCritical);
        }
        InfiniteMobile::new(self, rng, sign, node_cap)
    }

    /// Ball of radius `k` of the infinite map with a given root sign.
    pub fn sample_ball_with_sign<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        sign: Sign,
        k: usize,
        policy: &WindowPolicy,
    ) -> Result<BallSample, InfiniteError> {
        if k == 0 {
            return Err(MapError::ZeroRadius.into());
        }
        let mut mob = self.mobile(rng, sign, policy.node_cap)?;
        mob.grow_spine(rng, policy.initial_depth)?;
        let (ball, into_root) = mob.ball(rng, sign, k)?;
        let depth = mob.spine_depth();
        if policy.verify {
            mob.grow_spine(rng, 2 * depth.max(1))?;
            mob.succ.clear();
            mob.incoming.clear();
            let (again, _) = mob.ball(rng, sign, k)?;
            if again.map.canonical_code() != ball.map.canonical_code() {
                return Err(InfiniteError::Unstable(depth));
            }
        }
        Ok(BallSample { ball, sign, window_depth: depth, window_nodes: mob.node_count(), into_root })
    }

    pub fn sample_ball<R: Rng + ?Sized>(&self, rng: &mut R, k: usize, policy: &WindowPolicy) -> Result<BallSample, InfiniteError> {
        let sign = self.mixture.draw(rng);
        self.sample_ball_with_sign(rng, sign, k, policy)
    }

    /// Degrees of `e+` in independent samples of the infinite map.
    pub fn root_degree_samples<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, policy: &WindowPolicy) -> Result<Vec<usize>, InfiniteError> {
        (0..n).map(|_| self.sample_ball(rng, 1, policy).map(|b| b.ball.map.root_degree())).collect()
    }
}

/// Finite maps of a fixed size drawn from the conditioned Boltzmann law.
#[derive(Clone, Debug)]
pub struct FiniteMapSampler {
    pub mobile: MobileLaw,
    positive: ConditionedSampler,
    null: Option<ConditionedSampler>,
    /// Probability of each of the positive and negative signs.
    pub p_positive: f64,
    pub p_null: f64,
}

impl FiniteMapSampler {
    pub fn new(sol: &BoltzmannSolution, kind: SizeKind, n: u64) -> Result<Self, InfiniteError> {
        let mobile = derive_mobile_law(sol)?;
        let periods = periodicity::map_periods(&sol.weights)?;
        let (d, alpha) = periods.get(kind);
        if n % d != alpha % d {
            return Err(InfiniteError::OffLattice { n, d, alpha });
        }
        let target = kind.mobile_size(n).ok_or(InfiniteError::Unrealizable(n))?;
        let gamma = mobile.gamma(kind);
        let dist = series::size_dist::<f64>(&mobile.law, &gamma, target as usize)?;
        let i1 = mobile.index_of(mobile_type::VERTEX).unwrap();
        let w_pos = sol.x * dist.root(i1)[target as usize];
        let (null, w_null) = match mobile.index_of(mobile_type::FLAG) {
            Some(i2) => {
                let word = [i2 as u8, i2 as u8];
                let forest = series::forest_size_dist(&dist, &word, target as usize);
                let w = sol.y * sol.y * forest[target as usize];
                let s = if w > 0.0 { ConditionedSampler::new(&mobile.law, &gamma, &word, target, false).ok() } else { None };
                let w = if s.is_some() { w } else { 0.0 };
                (s, w)
            }
            None => (None, 0.0),
        };
        if w_pos <= 0.0 {
            return Err(InfiniteError::Unrealizable(n));
        }
        let positive = ConditionedSampler::new(&mobile.law, &gamma, &[i1 as u8], target, false)?;
        let total = 2.0 * w_pos + w_null;
        Ok(FiniteMapSampler { mobile, positive, null, p_positive: w_pos / total, p_null: w_null / total })
    }

    /// A map with its sign and the mobile that encodes it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, attempt_cap: u64) -> Result<(PlanarMap, Sign, LabeledMobile), InfiniteError> {
        let u = rng.random::<f64>();
        let sign = if u < self.p_null {
            Sign::Null
        } else if u < self.p_null + self.p_positive {
            Sign::Positive
        } else {
            Sign::Negative
        };
        let to_mobile = |t: &TypedTree| t.map_types(|x| self.mobile.mobile_types[x as usize]);
        let mobile = match sign {
            Sign::Null => {
                let forest = self.null.as_ref().expect("null sampler").sample(rng, attempt_cap)?;
                let a = to_mobile(&forest.trees[0]);
                let b = to_mobile(&forest.trees[1]);
                let la = label_tree(rng, &a, 1)?;
                let lb = label_tree(rng, &b, 1)?;
                let merged = merge_roots(&a.with_labels(la), &b.with_labels(lb))?;
                LabeledMobile::new(merged).map_err(SampleError::from)?
            }
            _ => {
                let forest = self.positive.sample(rng, attempt_cap)?;
                let t = to_mobile(&forest.trees[0]);
                let labels = label_tree(rng, &t, 0)?;
                LabeledMobile::new(t.with_labels(labels)).map_err(SampleError::from)?
            }
        };
        let mut map = bdfg_forward(&mobile)?;
        if sign == Sign::Negative {
            map.reverse_root();
        }
        Ok((map, sign, mobile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boltzmann::{preset, solve_admissibility, Preset, WeightSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uipq() -> InfiniteMapSampler {
        let sol = solve_admissibility(&WeightSequence::table(&[(4, 1.0 / 12.0)]).unwrap()).unwrap();
        InfiniteMapSampler::new(&sol).unwrap()
    }

    #[test]
    fn spine_and_materialized_window() {
        let s = uipq();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut m = s.mobile(&mut r, Sign::Positive, 1 << 24).unwrap();
        m.grow_spine(&mut r, 10).unwrap();
        let levels = m.spine_levels();
        assert_eq!(levels.len(), 10);
        assert_eq!((levels[0].ty, levels[0].label2), (mobile_type::VERTEX, 0));
        for w in levels.windows(2) {
            assert_eq!(w[1].ty, w[0].word[w[0].spine_index]);
        }
        let (t, spine) = m.materialize(&mut r, 6).unwrap();
        assert_eq!(spine.len(), 7);
        assert_eq!(t.child_count(spine[6]), 0);
        for w in spine.windows(2) {
            assert_eq!(t.parent(w[1]), Some(w[0]));
        }
        crate::trees::validate_mobile(&t).unwrap();
    }

    #[test]
    fn null_root_shape() {
        let sol = solve_admissibility(&preset(Preset::Uipm).unwrap()).unwrap();
        let s = InfiniteMapSampler::new(&sol).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut m = s.mobile(&mut r, Sign::Null, 1 << 20).unwrap();
        m.grow_spine(&mut r, 3).unwrap();
        let l = m.spine_levels();
        assert_eq!(l[0].ty, mobile_type::FLAG);
        assert_eq!(l[0].label2, 1);
        assert_eq!(l[0].word, vec![mobile_type::FLAG_FACE; 2]);
    }

    #[test]
    fn uipq_balls_are_stable_and_well_formed() {
        let s = uipq();
        assert_eq!(s.mixture.null, 0.0);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let policy = WindowPolicy::default();
        for _ in 0..200 {
            let b = s.sample_ball(&mut r, 1, &policy).unwrap();
            b.ball.check().unwrap();
            assert!(b.ball.map.root_degree() >= 1);
        }
        for _ in 0..50 {
            let b = s.sample_ball(&mut r, 2, &policy).unwrap();
            b.ball.check().unwrap();
        }
    }

    #[test]
    fn uipm_null_balls() {
        let sol = solve_admissibility(&preset(Preset::Uipm).unwrap()).unwrap();
        let s = InfiniteMapSampler::new(&sol).unwrap();
        assert!(s.mixture.null > 0.0 && s.mixture.null < 1.0);
        assert!((2.0 * s.mixture.positive + s.mixture.null - 1.0).abs() < 1e-12);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for sign in [Sign::Null, Sign::Positive, Sign::Negative] {
            for _ in 0..50 {
                let b = s.sample_ball_with_sign(&mut r, sign, 1, &WindowPolicy::default()).unwrap();
                b.ball.check().unwrap();
            }
        }
    }

    #[test]
    fn finite_quadrangulations() {
        let sol = solve_admissibility(&WeightSequence::table(&[(4, 1.0 / 12.0)]).unwrap()).unwrap();
        let f = FiniteMapSampler::new(&sol, SizeKind::Faces, 20).unwrap();
        assert_eq!(f.p_null, 0.0);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (m, sign, _) = f.sample(&mut r, 10_000_000).unwrap();
            let st = m.stats();
            assert_eq!(st.faces, 20);
            assert!(st.face_degrees.iter().all(|&d| d == 4));
            let want = if sign == Sign::Positive { 1 } else { -1 };
            assert_eq!(m.sign(), Some(want));
        }
    }
}
