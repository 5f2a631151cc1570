//! Random generation of trees, forests, size-conditioned trees, spine
//! windows and mobile labels.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::branching::{LawError, OffspringLaw, PerronData, SpineLaw, SpineTypeLaw, TypeLaw};
use crate::periodicity::{self, PeriodData, PeriodError};
use crate::series::{self, SeriesError};
use crate::trees::{mobile_type, Forest, LabeledMobile, TreeError, TypedTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("vertex cap {0} exceeded")]
    Overflow(usize),
    #[error("no acceptance after {attempts} attempts (estimated acceptance rate below {rate:.3e})")]
    Failure { attempts: u64, rate: f64 },
    #[error("size {target} is off the lattice {alpha} + {d}Z")]
    OffLattice { target: u64, alpha: u64, d: u64 },
    #[error("size {0} is not realizable")]
    Unrealizable(u64),
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Period(#[from] PeriodError),
}

#[derive(Clone, Debug)]
enum Compiled {
    Table { cdf: Vec<f64>, words: Vec<Vec<u8>>, mixed: Vec<bool> },
    Geometric { child: u8, log_q: f64 },
    SizeBiasedGeometric { child: u8, log_q: f64 },
}

fn table_of(rows: &[(Vec<u32>, f64)]) -> Compiled {
    let mut cdf = Vec::with_capacity(rows.len());
    let mut words = Vec::with_capacity(rows.len());
    let mut mixed = Vec::with_capacity(rows.len());
    let mut acc = 0.0;
    for (counts, p) in rows {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        cdf.push(acc);
        let w: Vec<u8> = counts.iter().enumerate().flat_map(|(t, &c)| std::iter::repeat_n(t as u8, c as usize)).collect();
        mixed.push(counts.iter().filter(|&&c| c > 0).count() > 1);
        words.push(w);
    }
    Compiled::Table { cdf, words, mixed }
}

/// Draws `k >= 0` with `P(k) = p (1-p)^k`, by inversion.
fn geometric<R: Rng + ?Sized>(rng: &mut R, log_q: f64) -> usize {
    if log_q == f64::NEG_INFINITY {
        return 0;
    }
    // U in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / log_q).floor() as usize
}

fn log_q(p: f64) -> f64 {
    if p >= 1.0 {
        f64::NEG_INFINITY
    } else {
        (1.0 - p).ln()
    }
}

impl Compiled {
    /// Appends a uniformly ordered child word; for spine laws also returns
    /// the position of the spine child when it is fixed by the draw.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<u8>) -> Option<usize> {
        match self {
            Compiled::Table { cdf, words, mixed } => {
                let total = *cdf.last().unwrap_or(&1.0);
                let u = rng.random::<f64>() * total;
                let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let start = out.len();
                out.extend_from_slice(&words[i]);
                if mixed[i] {
                    // Fisher–Yates
                    let s = &mut out[start..];
                    for j in (1..s.len()).rev() {
                        let k = rng.random_range(0..=j);
                        s.swap(j, k);
                    }
                }
                None
            }
            Compiled::Geometric { child, log_q } => {
                let k = geometric(rng, *log_q);
                out.extend(std::iter::repeat_n(*child, k));
                None
            }
            Compiled::SizeBiasedGeometric { child, log_q } => {
                // uniform position among 1 + G1 + G2 children
                let left = geometric(rng, *log_q);
                let right = geometric(rng, *log_q);
                out.extend(std::iter::repeat_n(*child, left + right + 1));
                Some(left)
            }
        }
    }
}

/// Offspring law preprocessed for fast drawing.
#[derive(Clone, Debug)]
pub struct TreeSampler {
    k: usize,
    types: Vec<Compiled>,
}

impl TreeSampler {
    pub fn new(law: &OffspringLaw) -> Self {
        let types = law
            .type_laws()
            .iter()
            .map(|t| match t {
                TypeLaw::Table(rows) => {
                    let rows: Vec<(Vec<u32>, f64)> = rows.iter().map(|o| (o.counts.clone(), o.prob.value)).collect();
                    table_of(&rows)
                }
                TypeLaw::Geometric { child_type, p } => Compiled::Geometric { child: *child_type as u8, log_q: log_q(p.value) },
            })
            .collect();
        TreeSampler { k: law.k(), types }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Appends a random ordered child word of a type-`ty` vertex.
    pub fn draw_word<R: Rng + ?Sized>(&self, rng: &mut R, ty: u8, out: &mut Vec<u8>) {
        self.types[ty as usize].draw(rng, out);
    }

    /// Breadth-first growth of one tree into `buf`. Stops early once the
    /// `gamma`-size exceeds `size_limit`.
    fn grow<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        root: u8,
        gamma: Option<&[u64]>,
        size_limit: u64,
        vertex_cap: usize,
        buf: &mut Growth,
    ) -> GrowOutcome {
        buf.types.clear();
        buf.counts.clear();
        buf.types.push(root);
        let mut size = gamma.map_or(0, |g| g[root as usize]);
        if size > size_limit {
            return GrowOutcome::TooBig;
        }
        let mut idx = 0;
        while idx < buf.types.len() {
            let before = buf.types.len();
            let ty = buf.types[idx];
            self.types[ty as usize].draw(rng, &mut buf.types);
            buf.counts.push((buf.types.len() - before) as u32);
            if let Some(g) = gamma {
                size += buf.types[before..].iter().map(|&t| g[t as usize]).sum::<u64>();
                if size > size_limit {
                    return GrowOutcome::TooBig;
                }
            }
            if buf.types.len() > vertex_cap {
                return GrowOutcome::Overflow;
            }
            idx += 1;
        }
        GrowOutcome::Done(size)
    }

    pub fn sample_tree<R: Rng + ?Sized>(&self, rng: &mut R, root: u8, vertex_cap: usize) -> Result<TypedTree, SampleError> {
        let mut buf = Growth::default();
        match self.grow(rng, root, None, u64::MAX, vertex_cap, &mut buf) {
            GrowOutcome::Done(_) => Ok(buf.build()?),
            _ => Err(SampleError::Overflow(vertex_cap)),
        }
    }

    pub fn sample_forest<R: Rng + ?Sized>(&self, rng: &mut R, word: &[u8], vertex_cap: usize) -> Result<Forest, SampleError> {
        let trees = word.iter().map(|&r| self.sample_tree(rng, r, vertex_cap)).collect::<Result<Vec<_>, _>>()?;
        Ok(Forest::new(trees))
    }
}

#[derive(Default)]
struct Growth {
    types: Vec<u8>,
    counts: Vec<u32>,
}

impl Growth {
    fn build(&self) -> Result<TypedTree, TreeError> {
        TypedTree::from_bfs(&self.types, &self.counts, None)
    }
}

enum GrowOutcome {
    Done(u64),
    TooBig,
    Overflow,
}

pub fn sample_tree<R: Rng + ?Sized>(rng: &mut R, law: &OffspringLaw, root_type: u8, vertex_cap: usize) -> Result<TypedTree, SampleError> {
    TreeSampler::new(law).sample_tree(rng, root_type, vertex_cap)
}

/// Rejection sampler for forests conditioned on their total size.
#[derive(Clone, Debug)]
pub struct ConditionedSampler {
    sampler: TreeSampler,
    gamma: Vec<u64>,
    word: Vec<u8>,
    target: u64,
    pub period: PeriodData,
}

impl ConditionedSampler {
    /// Checks lattice membership and, when `check_support` is set, that the
    /// exact size distribution gives the target positive probability.
    pub fn new(law: &OffspringLaw, gamma: &[u64], word: &[u8], target: u64, check_support: bool) -> Result<Self, SampleError> {
        let period = periodicity::period(law, gamma)?;
        if !period.on_lattice(word, target) {
            return Err(SampleError::OffLattice { target, alpha: period.forest_alpha(word), d: period.d });
        }
        if check_support {
            let dist = series::size_dist::<f64>(law, gamma, target as usize)?;
            let forest = series::forest_size_dist(&dist, word, target as usize);
            if forest.get(target as usize).copied().unwrap_or(0.0) <= 0.0 {
                return Err(SampleError::Unrealizable(target));
            }
        }
        Ok(ConditionedSampler { sampler: TreeSampler::new(law), gamma: gamma.to_vec(), word: word.to_vec(), target, period })
    }

    pub fn target(&self) -> u64 {
        self.target
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, attempt_cap: u64) -> Result<Forest, SampleError> {
        self.sample_counted(rng, attempt_cap).map(|(f, _)| f)
    }

    /// Also returns the number of attempts used.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R, attempt_cap: u64) -> Result<(Forest, u64), SampleError> {
        let mut bufs: Vec<Growth> = self.word.iter().map(|_| Growth::default()).collect();
        // each tree may use at most the whole remaining budget; with zero
        // weights the vertex cap guards against runaway growth
        let vertex_cap = 64 * (self.target as usize + 16) * self.sampler.k;
        'attempt: for attempt in 1..=attempt_cap {
            let mut total = 0;
            for (j, &root) in self.word.iter().enumerate() {
                match self.sampler.grow(rng, root, Some(&self.gamma), self.target - total, vertex_cap, &mut bufs[j]) {
                    GrowOutcome::Done(s) => total += s,
                    _ => continue 'attempt,
                }
            }
            if total == self.target {
                let trees = bufs.iter().map(|b| b.build()).collect::<Result<Vec<_>, _>>()?;
                return Ok((Forest::new(trees), attempt));
            }
        }
        Err(SampleError::Failure { attempts: attempt_cap, rate: 1.0 / attempt_cap as f64 })
    }
}

pub fn sample_conditioned<R: Rng + ?Sized>(
    rng: &mut R,
    law: &OffspringLaw,
    gamma: &[u64],
    root_type: u8,
    target: u64,
    attempt_cap: u64,
) -> Result<TypedTree, SampleError> {
    let s = ConditionedSampler::new(law, gamma, &[root_type], target, true)?;
    Ok(s.sample(rng, attempt_cap)?.trees.remove(0))
}

/// Spine law preprocessed for fast drawing.
#[derive(Clone, Debug)]
pub struct SpineSampler {
    types: Vec<Compiled>,
    b: Vec<f64>,
}

impl SpineSampler {
    pub fn new(spine: &SpineLaw, perron: &PerronData) -> Self {
        let types = spine
            .types
            .iter()
            .map(|t| match t {
                SpineTypeLaw::Table(rows) => {
                    let rows: Vec<(Vec<u32>, f64)> = rows.iter().map(|o| (o.counts.clone(), o.prob.value)).collect();
                    table_of(&rows)
                }
                SpineTypeLaw::SizeBiasedGeometric { child_type, p } => Compiled::SizeBiasedGeometric { child: *child_type as u8, log_q: log_q(*p) },
            })
            .collect();
        SpineSampler { types, b: perron.b.clone() }
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Appends a spine vertex's child word and returns the position (within
    /// the appended word) of the next spine vertex.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, ty: u8, out: &mut Vec<u8>) -> Result<usize, LawError> {
        let start = out.len();
        match self.types[ty as usize].draw(rng, out) {
            Some(j) => Ok(j),
            None => crate::branching::spine_child_index(rng, &out[start..], &self.b),
        }
    }

    /// Index into `word` of the component carrying the spine.
    pub fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R, word: &[u8]) -> Result<usize, LawError> {
        crate::branching::spine_child_index(rng, word, &self.b)
    }
}

/// A size-biased forest cut at a fixed height, with its spine marked.
#[derive(Clone, Debug, PartialEq)]
pub struct SpineWindow {
    pub forest: Forest,
    /// Component carrying the spine.
    pub component: usize,
    /// Spine vertex indices in that component, one per level.
    pub spine: Vec<usize>,
}

pub fn sample_spine_window<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &TreeSampler,
    spine: &SpineSampler,
    word: &[u8],
    height: usize,
    vertex_cap: usize,
) -> Result<SpineWindow, SampleError> {
    let component = spine.pick_component(rng, word)?;
    let mut trees = Vec::with_capacity(word.len());
    let mut spine_path = Vec::new();
    for (j, &root) in word.iter().enumerate() {
        let mut types = vec![root];
        let mut depth = vec![0usize];
        let mut counts = Vec::new();
        let mut spine_at = if j == component { Some(0usize) } else { None };
        if j == component {
            spine_path.push(0);
        }
        let mut idx = 0;
        while idx < types.len() {
            if depth[idx] == height {
                // breadth-first order: everything after is at the cut too
                break;
            }
            let before = types.len();
            let ty = types[idx];
            if spine_at == Some(idx) {
                let pos = spine.draw(rng, ty, &mut types)?;
                spine_at = Some(before + pos);
                spine_path.push(before + pos);
            } else {
                tree.draw_word(rng, ty, &mut types);
            }
            let added = types.len() - before;
            counts.push(added as u32);
            depth.extend(std::iter::repeat_n(depth[idx] + 1, added));
            if types.len() > vertex_cap {
                return Err(SampleError::Overflow(vertex_cap));
            }
            idx += 1;
        }
        trees.push(TypedTree::from_bfs(&types, &counts, None)?);
    }
    Ok(SpineWindow { forest: Forest::new(trees), component, spine: spine_path })
}

/// Number of type-1 letters in a word plus one for a face vertex; the total
/// slack distributed over the gaps of the word.
fn slack_total(parent_ty: u8, word: &[u8]) -> usize {
    word.iter().filter(|&&t| t == mobile_type::VERTEX).count() + usize::from(parent_ty == mobile_type::FACE)
}

fn boundary_ones(parent_ty: u8, word: &[u8], j: usize) -> i64 {
    let n = word.len();
    let boundary = if parent_ty == mobile_type::FACE { mobile_type::VERTEX } else { mobile_type::FLAG };
    let letter = |j: usize| if j == 0 || j == n + 1 { boundary } else { word[j - 1] };
    i64::from(letter(j) == mobile_type::VERTEX) + i64::from(letter(j + 1) == mobile_type::VERTEX)
}

/// Doubled displacements from a composition of the slack into gaps.
fn displacement_from_slack(parent_ty: u8, word: &[u8], slack: &[usize]) -> Vec<i64> {
    let mut y = 0i64;
    (0..word.len())
        .map(|j| {
            y += 2 * slack[j] as i64 - boundary_ones(parent_ty, word, j);
            y
        })
        .collect()
}

/// A uniform element of the displacement set (doubled units).
pub fn sample_displacement<R: Rng + ?Sized>(rng: &mut R, parent_ty: u8, word: &[u8]) -> Vec<i64> {
    let l = word.len();
    if l == 0 {
        return Vec::new();
    }
    let s = slack_total(parent_ty, word);
    // bars at a uniform l-subset of s + l slots
    let mut bars: Vec<usize> = index::sample(rng, s + l, l).into_vec();
    bars.sort_unstable();
    // stars between consecutive bars
    let mut slack = Vec::with_capacity(l + 1);
    let mut last: isize = -1;
    for &b in &bars {
        slack.push((b as isize - last - 1) as usize);
        last = b as isize;
    }
    slack.push((s + l) - (last + 1) as usize);
    displacement_from_slack(parent_ty, word, &slack)
}

/// Every element of the displacement set, in lexicographic order of slack
/// compositions.
pub fn enumerate_displacements(parent_ty: u8, word: &[u8]) -> Vec<Vec<i64>> {
    let l = word.len();
    if l == 0 {
        return vec![Vec::new()];
    }
    let s = slack_total(parent_ty, word);
    let mut out = Vec::new();
    let mut comp = vec![0usize; l + 1];
    fn rec(pos: usize, left: usize, comp: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pos == comp.len() - 1 {
            comp[pos] = left;
            f(comp);
            return;
        }
        for v in 0..=left {
            comp[pos] = v;
            rec(pos + 1, left - v, comp, f);
        }
    }
    rec(0, s, &mut comp, &mut |c| out.push(displacement_from_slack(parent_ty, word, c)));
    out
}

/// Reversal of a displacement list: `(y_1..y_l) -> (-y_l..-y_1)`.
pub fn reverse_displacement(disp: &[i64]) -> Vec<i64> {
    disp.iter().rev().map(|y| -y).collect()
}

/// Labels of a tree of mobile types whose root carries `root_label2`,
/// uniform over the displacement sets.
pub fn label_tree<R: Rng + ?Sized>(rng: &mut R, skeleton: &TypedTree, root_label2: i64) -> Result<Vec<i64>, SampleError> {
    let n = skeleton.len();
    let mut labels = vec![0i64; n];
    labels[0] = root_label2;
    for v in 0..n {
        let ty = skeleton.type_of(v);
        let kids = skeleton.children(v);
        match ty {
            mobile_type::VERTEX | mobile_type::FLAG => {
                for c in kids {
                    labels[c] = labels[v];
                }
            }
            mobile_type::FACE | mobile_type::FLAG_FACE => {
                let word = skeleton.word(v);
                if word.iter().any(|&c| c > mobile_type::FLAG) {
                    return Err(SampleError::Skeleton(format!("vertex {v} has a face child")));
                }
                let disp = sample_displacement(rng, ty, word);
                for (c, y) in kids.zip(disp) {
                    labels[c] = labels[v] + y;
                }
            }
            _ => return Err(SampleError::Skeleton(format!("vertex {v} has type {ty}"))),
        }
    }
    Ok(labels)
}

/// Labels a mobile skeleton uniformly over its displacement sets.
pub fn sample_labels<R: Rng + ?Sized>(rng: &mut R, skeleton: &TypedTree, root_label2: i64) -> Result<LabeledMobile, SampleError> {
    let labels = label_tree(rng, skeleton, root_label2)?;
    Ok(LabeledMobile::new(skeleton.clone().with_labels(labels))?)
}

/// Reverses every child order and reflects labels about the root label.
pub fn mirror(m: &LabeledMobile) -> LabeledMobile {
    let t = m.tree();
    let n = t.len();
    let root = m.label2(0);
    let types: Vec<u8> = (0..n).map(|v| t.type_of(v)).collect();
    let labels: Vec<i64> = (0..n).map(|v| 2 * root - m.label2(v)).collect();
    let children: Vec<Vec<usize>> = (0..n).map(|v| t.children(v).rev().collect()).collect();
    let tree = TypedTree::from_children(&types, Some(&labels), &children, 0).expect("mirror of a valid tree");
    LabeledMobile::new_unchecked(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn mono2_single_vertex_frequency() {
        let s = TreeSampler::new(&OffspringLaw::mono2());
        let mut r = rng(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.sample_tree(&mut r, 0, 1 << 20).map(|t| t.len() == 1).unwrap_or(false)).count();
        let sd = (0.25 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 3.0 * sd);
    }

    #[test]
    fn cap_one_overflows_unless_root_dies() {
        let s = TreeSampler::new(&OffspringLaw::mono2());
        let mut r = rng(2);
        for _ in 0..200 {
            match s.sample_tree(&mut r, 0, 1) {
                Ok(t) => assert_eq!(t.len(), 1),
                Err(e) => assert_eq!(e, SampleError::Overflow(1)),
            }
        }
    }

    #[test]
    fn conditioned_shapes() {
        let law = OffspringLaw::mono2();
        let mut r = rng(3);
        for _ in 0..50 {
            let t = sample_conditioned(&mut r, &law, &[1], 0, 3, 1_000_000).unwrap();
            assert_eq!(t.len(), 3);
            assert_eq!(t.child_count(0), 2);
        }
        assert!(matches!(sample_conditioned(&mut r, &law, &[1], 0, 4, 10), Err(SampleError::OffLattice { .. })));
        let mut left = 0;
        let n = 20_000;
        let cs = ConditionedSampler::new(&law, &[1], &[0], 5, true).unwrap();
        for _ in 0..n {
            let t = cs.sample(&mut r, 1_000_000).unwrap().trees.remove(0);
            if t.child_count(1) == 2 {
                left += 1;
            }
        }
        let sd = (0.25 / n as f64).sqrt();
        assert!((left as f64 / n as f64 - 0.5).abs() < 3.0 * sd);
    }

    #[test]
    fn spine_window_shape() {
        let law = OffspringLaw::toy2();
        let pd = law.perron_data().unwrap();
        let spine = crate::branching::size_bias(&law, &pd).unwrap();
        let (ts, ss) = (TreeSampler::new(&law), SpineSampler::new(&spine, &pd));
        let mut r = rng(4);
        let w = sample_spine_window(&mut r, &ts, &ss, &[0], 0, 100).unwrap();
        assert_eq!(w.forest.trees[0].len(), 1);
        for h in 1..6 {
            let w = sample_spine_window(&mut r, &ts, &ss, &[0, 1], h, 1 << 20).unwrap();
            assert_eq!(w.spine.len(), h + 1);
            let t = &w.forest.trees[w.component];
            for (lvl, &v) in w.spine.iter().enumerate() {
                assert_eq!(t.depth(v), lvl);
            }
            assert!(w.forest.height() <= h);
        }
    }

    #[test]
    fn displacement_sets() {
        use mobile_type::*;
        let d = enumerate_displacements(FACE, &[VERTEX]);
        assert_eq!(d, vec![vec![-2], vec![0], vec![2]]);
        assert_eq!(enumerate_displacements(FLAG_FACE, &[FLAG]), vec![vec![0]]);
        // slack 3 over three gaps
        assert_eq!(enumerate_displacements(FACE, &[VERTEX, VERTEX]).len(), 10);
        for word in [vec![VERTEX, FLAG], vec![FLAG, FLAG, VERTEX], vec![VERTEX; 3]] {
            for ty in [FACE, FLAG_FACE] {
                for y in enumerate_displacements(ty, &word) {
                    assert!(crate::trees::is_displacement(ty, &word, &y));
                }
            }
        }
    }

    #[test]
    fn uniform_over_ten_displacements() {
        use mobile_type::*;
        let all = enumerate_displacements(FACE, &[VERTEX, VERTEX]);
        let mut counts = vec![0usize; all.len()];
        let mut r = rng(5);
        let n = 60_000;
        for _ in 0..n {
            let y = sample_displacement(&mut r, FACE, &[VERTEX, VERTEX]);
            counts[all.iter().position(|a| *a == y).unwrap()] += 1;
        }
        let e = n as f64 / 10.0;
        let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 9 degrees of freedom, p = 0.01 quantile 21.67
        assert!(chi < 21.67, "{chi}");
    }

    #[test]
    fn labels_are_valid_and_mirror_is_involution() {
        use mobile_type::*;
        let skel =
            TypedTree::from_children(&[VERTEX, FACE, VERTEX, VERTEX, FACE], None, &[vec![1, 4], vec![2, 3], vec![], vec![], vec![]], 0).unwrap();
        let mut r = rng(6);
        for _ in 0..100 {
            let m = sample_labels(&mut r, &skel, 0).unwrap();
            let mm = mirror(&m);
            assert!(LabeledMobile::new(mm.tree().clone()).is_ok());
            assert_eq!(mirror(&mm), m);
        }
        let single = LabeledMobile::new(TypedTree::single(VERTEX).with_labels(vec![0])).unwrap();
        assert_eq!(mirror(&single), single);
    }
}
