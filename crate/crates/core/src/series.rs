//! Truncated generating functions of tree sizes, first-generation laws and
//! the associated random walk.
//!
//! Coefficients are produced degree by degree. Types with positive size
//! weight only need lower-degree data; the remaining types are coupled
//! linearly at each degree and solved jointly.

use std::collections::HashMap;

use num::rational::BigRational;
use thiserror::Error;

use crate::branching::{LawError, OffspringLaw, TypeLaw};
use crate::periodicity::{period, PeriodData, PeriodError};
use crate::scalar::Scalar;

const CONSTANT_ITER_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("probability of type {0} not available in exact arithmetic")]
    NotExact(usize),
    #[error("size vector has length {got}, law has {k} types")]
    Dimension { got: usize, k: usize },
    #[error("constant terms did not settle within {0} iterations")]
    IterationCap(usize),
    #[error("degree {0}: singular linear system")]
    Singular(usize),
    #[error("coefficient {index} is zero (below the first realized size)")]
    ZeroDenominator { index: usize },
    #[error(transparent)]
    Period(#[from] PeriodError),
    #[error(transparent)]
    Law(#[from] LawError),
}

/// `c[i][n] = P(|T|_gamma = n)` from a type-`i` root, for `n <= n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistribution<S> {
    pub gamma: Vec<u64>,
    pub coeffs: Vec<Vec<S>>,
}

impl<S: Scalar> SizeDistribution<S> {
    pub fn n_max(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn root(&self, i: usize) -> &[S] {
        &self.coeffs[i]
    }
}

enum Slot<S> {
    /// Unknown series with the given size weight.
    Free(u64),
    /// Series fixed in advance.
    Pinned(Vec<S>),
}

struct Node {
    parent: Option<usize>,
    ty: usize,
}

enum Combine<S> {
    Table(Vec<(Option<usize>, S)>),
    Geometric { child: usize, p: S },
}

/// Solver for the root-decomposition system, generic over the arithmetic.
struct System<S> {
    k: usize,
    slots: Vec<Slot<S>>,
    combine: Vec<Combine<S>>,
    nodes: Vec<Node>,
    /// coefficient arrays of the node products
    node_c: Vec<Vec<S>>,
    /// geometric helper series `p / (1 - (1-p) psi_child)` per type
    geo: Vec<Vec<S>>,
    psi: Vec<Vec<S>>,
    /// offspring combination series, before the size shift
    f: Vec<Vec<S>>,
}

impl<S: Scalar> System<S> {
    fn new(law: &OffspringLaw, slots: Vec<Slot<S>>) -> Result<Self, SeriesError> {
        let k = law.k();
        let mut nodes = Vec::new();
        let mut trie: HashMap<(Option<usize>, usize), usize> = HashMap::new();
        let mut combine = Vec::with_capacity(k);
        for (i, t) in law.type_laws().iter().enumerate() {
            match t {
                TypeLaw::Table(rows) => {
                    let mut entries = Vec::with_capacity(rows.len());
                    for o in rows {
                        let p = S::from_prob(&o.prob).ok_or(SeriesError::NotExact(i))?;
                        if p.is_zero() {
                            continue;
                        }
                        let mut cur: Option<usize> = None;
                        for (j, &c) in o.counts.iter().enumerate() {
                            for _ in 0..c {
                                let next = nodes.len();
                                let id = *trie.entry((cur, j)).or_insert(next);
                                if id == next {
                                    nodes.push(Node { parent: cur, ty: j });
                                }
                                cur = Some(id);
                            }
                        }
                        entries.push((cur, p));
                    }
                    combine.push(Combine::Table(entries));
                }
                TypeLaw::Geometric { child_type, p } => {
                    let p = S::from_prob(p).ok_or(SeriesError::NotExact(i))?;
                    combine.push(Combine::Geometric { child: *child_type, p });
                }
            }
        }
        let n_nodes = nodes.len();
        Ok(System {
            k,
            slots,
            combine,
            nodes,
            node_c: vec![Vec::new(); n_nodes],
            geo: vec![Vec::new(); k],
            psi: vec![Vec::new(); k],
            f: vec![Vec::new(); k],
        })
    }

    fn zero_rows(&self) -> Vec<usize> {
        (0..self.k).filter(|&i| matches!(self.slots[i], Slot::Free(0))).collect()
    }

    /// Fills coefficient `m` of every node, geometric helper and combination,
    /// using whatever `psi[.][m]` currently holds.
    fn fill_degree(&mut self, m: usize) {
        for id in 0..self.nodes.len() {
            let Node { parent, ty } = self.nodes[id];
            let v = match parent {
                None => self.psi[ty][m].clone(),
                Some(par) => {
                    let pc = &self.node_c[par];
                    let ps = &self.psi[ty];
                    let mut acc = S::zero();
                    for t in 0..=m {
                        if !pc[t].is_zero() && !ps[m - t].is_zero() {
                            acc = acc + pc[t].clone() * ps[m - t].clone();
                        }
                    }
                    acc
                }
            };
            set_at(&mut self.node_c[id], m, v);
        }
        for i in 0..self.k {
            let v = match &self.combine[i] {
                Combine::Table(entries) => {
                    let mut acc = S::zero();
                    for (node, p) in entries {
                        match node {
                            None => {
                                if m == 0 {
                                    acc = acc + p.clone();
                                }
                            }
                            Some(id) => acc = acc + p.clone() * self.node_c[*id][m].clone(),
                        }
                    }
                    acc
                }
                Combine::Geometric { child, p } => {
                    let ps = &self.psi[*child];
                    let g = &self.geo[i];
                    let q = S::one() - p.clone();
                    let denom = S::one() - q.clone() * ps[0].clone();
                    let v = if m == 0 {
                        p.clone() / denom
                    } else {
                        let mut acc = S::zero();
                        for t in 1..=m {
                            if !ps[t].is_zero() {
                                acc = acc + ps[t].clone() * g[m - t].clone();
                            }
                        }
                        q * acc / denom
                    };
                    set_at(&mut self.geo[i], m, v.clone());
                    v
                }
            };
            set_at(&mut self.f[i], m, v);
        }
    }

    /// Value of each combination at the constant terms `x`.
    fn eval_constant(&self, x: &[S]) -> Vec<S> {
        let mut node_v: Vec<S> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let v = match n.parent {
                None => x[n.ty].clone(),
                Some(p) => node_v[p].clone() * x[n.ty].clone(),
            };
            node_v.push(v);
        }
        self.combine
            .iter()
            .map(|c| match c {
                Combine::Table(entries) => {
                    entries.iter().fold(S::zero(), |acc, (node, p)| acc + p.clone() * node.map_or(S::one(), |id| node_v[id].clone()))
                }
                Combine::Geometric { child, p } => p.clone() / (S::one() - (S::one() - p.clone()) * x[*child].clone()),
            })
            .collect()
    }

    /// Partial derivatives of the combinations at the constant terms.
    fn jacobian(&self, x: &[S]) -> Vec<Vec<S>> {
        let k = self.k;
        let mut jac = vec![vec![S::zero(); k]; k];
        // derivative of each node along each type, by the product rule
        let mut node_v: Vec<S> = Vec::with_capacity(self.nodes.len());
        let mut node_d: Vec<Vec<S>> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let (pv, pd) = match n.parent {
                None => (S::one(), vec![S::zero(); k]),
                Some(p) => (node_v[p].clone(), node_d[p].clone()),
            };
            let mut d: Vec<S> = pd.into_iter().map(|v| v * x[n.ty].clone()).collect();
            d[n.ty] = d[n.ty].clone() + pv.clone();
            node_v.push(pv * x[n.ty].clone());
            node_d.push(d);
        }
        for (i, c) in self.combine.iter().enumerate() {
            match c {
                Combine::Table(entries) => {
                    for (node, p) in entries {
                        if let Some(id) = node {
                            for j in 0..k {
                                jac[i][j] = jac[i][j].clone() + p.clone() * node_d[*id][j].clone();
                            }
                        }
                    }
                }
                Combine::Geometric { child, p } => {
                    let q = S::one() - p.clone();
                    let denom = S::one() - q.clone() * x[*child].clone();
                    jac[i][*child] = p.clone() * q / (denom.clone() * denom);
                }
            }
        }
        jac
    }

    fn run(&mut self, n_max: usize) -> Result<(), SeriesError> {
        let k = self.k;
        let zero_rows = self.zero_rows();
        // constant terms
        let mut x: Vec<S> = (0..k)
            .map(|i| match &self.slots[i] {
                Slot::Pinned(s) => s.first().cloned().unwrap_or_else(S::zero),
                Slot::Free(_) => S::zero(),
            })
            .collect();
        if !zero_rows.is_empty() {
            let mut settled = false;
            for _ in 0..CONSTANT_ITER_CAP {
                let fx = self.eval_constant(&x);
                let mut changed = false;
                for &i in &zero_rows {
                    if fx[i].differs(&x[i]) {
                        changed = true;
                    }
                    x[i] = fx[i].clone();
                }
                if !changed {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return Err(SeriesError::IterationCap(CONSTANT_ITER_CAP));
            }
        }
        let jac = self.jacobian(&x);
        // (I - A) restricted to the coupled rows
        let system: Vec<Vec<S>> = zero_rows
            .iter()
            .map(|&i| {
                zero_rows
                    .iter()
                    .map(|&j| {
                        let id = if i == j { S::one() } else { S::zero() };
                        id - jac[i][j].clone()
                    })
                    .collect()
            })
            .collect();
        for m in 0..=n_max {
            for i in 0..k {
                let v = match &self.slots[i] {
                    Slot::Pinned(s) => s.get(m).cloned().unwrap_or_else(S::zero),
                    Slot::Free(0) => {
                        if m == 0 {
                            x[i].clone()
                        } else {
                            S::zero()
                        }
                    }
                    Slot::Free(g) => {
                        let g = *g as usize;
                        if m >= g {
                            self.f[i][m - g].clone()
                        } else {
                            S::zero()
                        }
                    }
                };
                set_at(&mut self.psi[i], m, v);
            }
            self.fill_degree(m);
            if m > 0 && !zero_rows.is_empty() {
                let rhs: Vec<S> = zero_rows.iter().map(|&i| self.f[i][m].clone()).collect();
                let sol = solve(system.clone(), rhs).ok_or(SeriesError::Singular(m))?;
                for (r, &i) in zero_rows.iter().enumerate() {
                    self.psi[i][m] = sol[r].clone();
                }
                self.fill_degree(m);
            }
        }
        Ok(())
    }
}

fn set_at<S: Clone>(v: &mut Vec<S>, m: usize, x: S) {
    if v.len() == m {
        v.push(x);
    } else {
        v[m] = x;
    }
}

/// Gaussian elimination with partial pivoting on magnitude.
pub(crate) fn solve<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs_val().partial_cmp(&a[s][col].abs_val()).unwrap_or(std::cmp::Ordering::Equal))?;
        if a[piv][col].is_zero() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() / a[col][col].clone();
            for c in col..n {
                let v = a[col][c].clone();
                a[r][c] = a[r][c].clone() - f.clone() * v;
            }
            let v = b[col].clone();
            b[r] = b[r].clone() - f * v;
        }
    }
    let mut x = vec![S::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r].clone();
        for c in r + 1..n {
            s = s - a[r][c].clone() * x[c].clone();
        }
        x[r] = s / a[r][r].clone();
    }
    Some(x)
}

/// Exact (or floating) law of `|T|_gamma` truncated at `n_max`.
pub fn size_dist<S: Scalar>(law: &OffspringLaw, gamma: &[u64], n_max: usize) -> Result<SizeDistribution<S>, SeriesError> {
    if gamma.len() != law.k() {
        return Err(SeriesError::Dimension { got: gamma.len(), k: law.k() });
    }
    let slots = gamma.iter().map(|&g| Slot::Free(g)).collect();
    let mut sys = System::<S>::new(law, slots)?;
    sys.run(n_max)?;
    Ok(SizeDistribution { gamma: gamma.to_vec(), coeffs: sys.psi })
}

/// Truncated product of two coefficient arrays.
pub fn convolve<S: Scalar>(a: &[S], b: &[S], n_max: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n_max + 1];
    for (i, x) in a.iter().enumerate().take(n_max + 1) {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(n_max + 1 - i) {
            if !y.is_zero() {
                out[i + j] = out[i + j].clone() + x.clone() * y.clone();
            }
        }
    }
    out
}

/// Size law of a forest with root word `w` (independent components).
pub fn forest_size_dist<S: Scalar>(dist: &SizeDistribution<S>, w: &[u8], n_max: usize) -> Vec<S> {
    let mut acc = vec![S::zero(); n_max + 1];
    acc[0] = S::one();
    for &t in w {
        acc = convolve(&acc, dist.root(t as usize), n_max);
    }
    acc
}

/// Law of the size of the first type-`j` generation from a type-`i` root.
pub fn first_gen_dist<S: Scalar>(law: &OffspringLaw, i: usize, j: usize, n_max: usize) -> Result<Vec<S>, SeriesError> {
    let k = law.k();
    let slots = (0..k)
        .map(|t| {
            if t == j {
                let mut z = vec![S::zero(); n_max + 1];
                if n_max >= 1 {
                    z[1] = S::one();
                }
                Slot::Pinned(z)
            } else {
                Slot::Free(0)
            }
        })
        .collect();
    let mut sys = System::<S>::new(law, slots)?;
    sys.run(n_max)?;
    Ok(if i == j { sys.f.swap_remove(j) } else { sys.psi.swap_remove(i) })
}

/// `P(S_n = v)` for `v` in `[-n, v_max]`; `probs[v + n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkDist<S> {
    pub steps: usize,
    pub probs: Vec<S>,
}

impl<S: Scalar> WalkDist<S> {
    pub fn at(&self, v: i64) -> S {
        let idx = v + self.steps as i64;
        if idx < 0 {
            return S::zero();
        }
        self.probs.get(idx as usize).cloned().unwrap_or_else(S::zero)
    }
}

/// Walk with steps `k - 1`, `k` drawn from the first type-1 generation law.
pub fn walk_dist<S: Scalar>(law: &OffspringLaw, n: usize, v_max: i64) -> Result<WalkDist<S>, SeriesError> {
    let reach = (v_max + n as i64 + 1).max(0) as usize;
    let mu = first_gen_dist::<S>(law, 0, 0, reach)?;
    // values above `v_max + remaining` can never come back below `v_max`
    let mut cur: Vec<S> = vec![S::one()];
    let mut lo = 0i64;
    for step in 0..n {
        let remaining = (n - step - 1) as i64;
        let hi_keep = v_max + remaining;
        let new_lo = lo - 1;
        let cur_hi = lo + cur.len() as i64 - 1;
        let new_hi = (cur_hi + mu.len() as i64 - 2).min(hi_keep);
        if new_hi < new_lo {
            return Ok(WalkDist { steps: n, probs: vec![S::zero(); (v_max + n as i64 + 1).max(0) as usize] });
        }
        let mut next = vec![S::zero(); (new_hi - new_lo + 1) as usize];
        for (a, pa) in cur.iter().enumerate() {
            if pa.is_zero() {
                continue;
            }
            let v = lo + a as i64;
            for (s, ps) in mu.iter().enumerate() {
                let w = v + s as i64 - 1;
                if w > new_hi {
                    break;
                }
                if !ps.is_zero() {
                    let idx = (w - new_lo) as usize;
                    next[idx] = next[idx].clone() + pa.clone() * ps.clone();
                }
            }
        }
        cur = next;
        lo = new_lo;
    }
    let len = (v_max + n as i64 + 1).max(0) as usize;
    let mut probs = vec![S::zero(); len];
    for (a, p) in cur.into_iter().enumerate() {
        let idx = lo + a as i64 + n as i64;
        if idx >= 0 && (idx as usize) < len {
            probs[idx as usize] = p;
        }
    }
    Ok(WalkDist { steps: n, probs })
}

/// Both sides of the hitting-time identity for the type-1 count:
/// `P(#T = 1 + d n)` and `P(S_{1+dn} = -1) / (1 + d n)`.
pub fn cyclic_check<S: Scalar>(law: &OffspringLaw, n: usize) -> Result<(S, S, S), SeriesError> {
    let mut gamma = vec![0u64; law.k()];
    gamma[0] = 1;
    let per = period(law, &gamma)?;
    let m = 1 + per.d as usize * n;
    let lhs = size_dist::<S>(law, &gamma, m)?.coeffs[0][m].clone();
    let walk = walk_dist::<S>(law, m, -1)?;
    let rhs = walk.at(-1) / S::from_u64(m as u64);
    let diff = (lhs.clone() - rhs.clone()).abs_val();
    Ok((lhs, rhs, diff))
}

/// Lattice index `alpha_w + d n` for the root word `w`.
fn lattice_index(per: &PeriodData, w: &[u8], n: usize) -> usize {
    let a: u64 = w.iter().map(|&t| per.alpha[t as usize]).sum();
    a as usize + per.d as usize * n
}

/// Forest-to-tree ratio whose limit is `sum b_{w_k} / b_1`.
pub fn hw_ratio(law: &OffspringLaw, gamma: &[u64], w: &[u8], n: usize) -> Result<f64, SeriesError> {
    let per = period(law, gamma)?;
    let top = lattice_index(&per, w, n);
    let one = lattice_index(&per, &[0], n);
    let dist = size_dist::<f64>(law, gamma, top.max(one))?;
    let forest = forest_size_dist(&dist, w, top);
    let denom = dist.coeffs[0][one];
    if denom == 0.0 {
        return Err(SeriesError::ZeroDenominator { index: one });
    }
    Ok(forest[top] / denom)
}

/// Measured forest probability at `alpha_w + d n` and the local-limit
/// prediction `Z_w sqrt(gamma.a / (2 pi d sigma^2 n^3))`.
pub fn hprime_check(law: &OffspringLaw, gamma: &[u64], w: &[u8], n: usize) -> Result<(f64, f64), SeriesError> {
    let pd = law.perron_data()?;
    let per = period(law, gamma)?;
    let top = lattice_index(&per, w, n);
    let dist = size_dist::<f64>(law, gamma, top)?;
    let measured = forest_size_dist(&dist, w, top)[top];
    let ga: f64 = gamma.iter().zip(&pd.a).map(|(&g, a)| g as f64 * a).sum();
    let zw: f64 = w.iter().map(|&t| pd.b[t as usize]).sum();
    let nf = n as f64;
    let predicted = zw * (ga / (2.0 * std::f64::consts::PI * per.d as f64 * pd.sigma2 * nf * nf * nf)).sqrt();
    Ok((measured, predicted))
}

/// Partial mean `sum_{n <= N} n c[n]`.
pub fn partial_mean(c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
}

/// Exact rational size law, a convenience for identity checks.
pub fn size_dist_exact(law: &OffspringLaw, gamma: &[u64], n_max: usize) -> Result<SizeDistribution<BigRational>, SeriesError> {
    size_dist::<BigRational>(law, gamma, n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::{One, Zero};

    fn r(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn mono2_small_coefficients() {
        let d = size_dist_exact(&OffspringLaw::mono2(), &[1], 5).unwrap();
        let c = d.root(0);
        assert_eq!(c[1], r(1, 2));
        assert_eq!(c[3], r(1, 8));
        assert_eq!(c[5], r(1, 16));
        assert!(c[0].is_zero() && c[2].is_zero() && c[4].is_zero());
    }

    #[test]
    fn toy2_type_one_count() {
        let d = size_dist_exact(&OffspringLaw::toy2(), &[1, 0], 5).unwrap();
        assert_eq!(d.root(0)[1], r(1, 2));
        assert!(d.root(0)[2].is_zero());
        assert_eq!(d.root(0)[3], r(1, 8));
        // a type-2 root just relays to one type-1 child
        assert_eq!(d.root(1), d.root(0));
    }

    #[test]
    fn forest_convolution() {
        let d = size_dist_exact(&OffspringLaw::mono2(), &[1], 6).unwrap();
        let f = forest_size_dist(&d, &[0, 0], 6);
        assert_eq!(f[2], r(1, 4));
        assert_eq!(forest_size_dist(&d, &[0], 6), d.root(0).to_vec());
    }

    #[test]
    fn first_generation_laws() {
        let mu = first_gen_dist::<BigRational>(&OffspringLaw::mono2(), 0, 0, 4).unwrap();
        assert_eq!(mu, vec![r(1, 2), r(0, 1), r(1, 2), r(0, 1), r(0, 1)]);
        let mu = first_gen_dist::<BigRational>(&OffspringLaw::toy2(), 0, 0, 3).unwrap();
        assert_eq!(mu, vec![r(1, 2), r(0, 1), r(1, 2), r(0, 1)]);
        let mu = first_gen_dist::<BigRational>(&OffspringLaw::toy2(), 1, 0, 3).unwrap();
        assert_eq!(mu, vec![r(0, 1), r(1, 1), r(0, 1), r(0, 1)]);
    }

    #[test]
    fn walk_probabilities() {
        let w = walk_dist::<BigRational>(&OffspringLaw::mono2(), 2, 2).unwrap();
        assert_eq!(w.at(0), r(1, 2));
        let w = walk_dist::<BigRational>(&OffspringLaw::mono2(), 3, 3).unwrap();
        assert_eq!(w.at(-1), r(3, 8));
        assert!(w.at(-4).is_zero());
        let total = (-3..=3).fold(BigRational::zero(), |a, v| a + w.at(v));
        assert!(total.is_one());
    }

    #[test]
    fn cyclic_identity_small() {
        let (l, rr, d) = cyclic_check::<BigRational>(&OffspringLaw::mono2(), 1).unwrap();
        assert_eq!(l, r(1, 8));
        assert_eq!(rr, r(1, 8));
        assert!(d.is_zero());
        let (l, _, d) = cyclic_check::<BigRational>(&OffspringLaw::mono2(), 0).unwrap();
        assert_eq!(l, r(1, 2));
        assert!(d.is_zero());
    }

    #[test]
    fn float_and_exact_agree() {
        let e = size_dist_exact(&OffspringLaw::toy2(), &[1, 1], 30).unwrap();
        let f = size_dist::<f64>(&OffspringLaw::toy2(), &[1, 1], 30).unwrap();
        for i in 0..2 {
            for n in 0..=30 {
                assert!((e.coeffs[i][n].to_f64() - f.coeffs[i][n]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forest_ratio_limit_for_type_two() {
        let r = hw_ratio(&OffspringLaw::toy2(), &[1, 0], &[1], 200).unwrap();
        assert!((r - 1.0).abs() < 0.02, "{r}");
        let r = hw_ratio(&OffspringLaw::mono2(), &[1], &[0], 50).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_limit_constant_toy2() {
        let (m, p) = hprime_check(&OffspringLaw::toy2(), &[1, 1], &[0], 1000).unwrap();
        assert!((m / p - 1.0).abs() < 0.03, "{m} {p}");
    }

    #[test]
    fn subprobability() {
        let d = size_dist::<f64>(&OffspringLaw::mono2(), &[1], 200).unwrap();
        let s: f64 = d.root(0).iter().sum();
        assert!(s <= 1.0 + 1e-12);
    }
}
