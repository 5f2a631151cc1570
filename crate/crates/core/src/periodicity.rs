//! Size functionals and the lattice of achievable tree sizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boltzmann::WeightSequence;
use crate::branching::{OffspringLaw, TypeLaw};
use crate::trees::TypedTree;

/// Default size budget for the reachable-size enumeration.
pub const DEFAULT_BUDGET: usize = 24;
const MAX_BUDGET: usize = 127;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeriodError {
    #[error("size vector has length {got}, law has {k} types")]
    Dimension { got: usize, k: usize },
    #[error("size vector is identically zero")]
    ZeroWeights,
    #[error("budget {0} exceeds the supported maximum")]
    BudgetTooLarge(usize),
    #[error("no finite tree of size <= {budget} from root type {ty}")]
    NoTree { ty: usize, budget: usize },
    #[error("budget {0} too small to see two distinct sizes")]
    Exhausted(usize),
    #[error("weight sequence has no positive entry")]
    EmptySupport,
}

/// `|t|_gamma`: each vertex counts for the weight of its type.
pub fn size(t: &TypedTree, gamma: &[u64]) -> u64 {
    t.types().iter().map(|&ty| gamma[ty as usize]).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodData {
    pub d: u64,
    /// Residue of the sizes from each root type, reduced mod `d`.
    pub alpha: Vec<u64>,
    /// Smallest realized size from each root type.
    pub smallest: Vec<u64>,
}

impl PeriodData {
    /// Whether `n` is congruent to the residue of root word `w`.
    pub fn on_lattice(&self, w: &[u8], n: u64) -> bool {
        let a: u64 = w.iter().map(|&t| self.alpha[t as usize]).sum();
        n % self.d == a % self.d
    }

    /// Residue of a forest with root word `w`, reduced mod `d`.
    pub fn forest_alpha(&self, w: &[u8]) -> u64 {
        w.iter().map(|&t| self.alpha[t as usize]).sum::<u64>() % self.d
    }
}

pub fn period(law: &OffspringLaw, gamma: &[u64]) -> Result<PeriodData, PeriodError> {
    period_with_budget(law, gamma, DEFAULT_BUDGET)
}

pub fn period_with_budget(law: &OffspringLaw, gamma: &[u64], budget: usize) -> Result<PeriodData, PeriodError> {
    let sets = reachable_sizes(law, gamma, budget)?;
    let mut d = 0u64;
    let mut smallest = Vec::with_capacity(sets.len());
    for (ty, &mask) in sets.iter().enumerate() {
        if mask == 0 {
            return Err(PeriodError::NoTree { ty, budget });
        }
        let lo = mask.trailing_zeros() as u64;
        smallest.push(lo);
        for s in 0..=budget as u64 {
            if mask >> s & 1 == 1 {
                d = num::integer::gcd(d, s - lo);
            }
        }
    }
    if d == 0 {
        return Err(PeriodError::Exhausted(budget));
    }
    let alpha = smallest.iter().map(|s| s % d).collect();
    Ok(PeriodData { d, alpha, smallest })
}

/// For each root type, the bitmask of sizes `<= budget` realized by some
/// finite tree with positive probability.
pub fn reachable_sizes(law: &OffspringLaw, gamma: &[u64], budget: usize) -> Result<Vec<u128>, PeriodError> {
    let k = law.k();
    if gamma.len() != k {
        return Err(PeriodError::Dimension { got: gamma.len(), k });
    }
    if gamma.iter().all(|&g| g == 0) {
        return Err(PeriodError::ZeroWeights);
    }
    if budget > MAX_BUDGET {
        return Err(PeriodError::BudgetTooLarge(budget));
    }
    let full: u128 = if budget == 127 { u128::MAX } else { (1u128 << (budget + 1)) - 1 };
    let sum = |a: u128, b: u128| -> u128 {
        let mut out = 0u128;
        for s in 0..=budget {
            if b >> s & 1 == 1 {
                out |= a << s;
            }
        }
        out & full
    };
    let max_count = |t: &TypeLaw, j: usize| -> usize {
        match t {
            TypeLaw::Table(rows) => rows.iter().filter(|o| o.prob.value > 0.0).map(|o| o.counts[j] as usize).max().unwrap_or(0),
            TypeLaw::Geometric { child_type, .. } => {
                if *child_type == j {
                    budget
                } else {
                    0
                }
            }
        }
    };
    let caps: Vec<usize> = (0..k).map(|j| law.type_laws().iter().map(|t| max_count(t, j)).max().unwrap_or(0)).collect();
    let mut sets = vec![0u128; k];
    loop {
        // powers[j][c] = sizes of a forest of c independent type-j trees
        let powers: Vec<Vec<u128>> = (0..k)
            .map(|j| {
                let mut p = vec![1u128];
                for c in 1..=caps[j] {
                    let next = sum(p[c - 1], sets[j]);
                    p.push(next);
                }
                p
            })
            .collect();
        let mut next = vec![0u128; k];
        for (i, t) in law.type_laws().iter().enumerate() {
            let mut acc = 0u128;
            match t {
                TypeLaw::Table(rows) => {
                    for o in rows.iter().filter(|o| o.prob.value > 0.0) {
                        let mut m = 1u128;
                        for j in 0..k {
                            if m == 0 {
                                break;
                            }
                            m = sum(m, powers[j][o.counts[j] as usize]);
                        }
                        acc |= m;
                    }
                }
                TypeLaw::Geometric { child_type, .. } => {
                    for p in &powers[*child_type] {
                        acc |= p;
                    }
                }
            }
            let g = gamma[i] as usize;
            next[i] = if g > budget { 0 } else { (acc << g) & full };
        }
        if next == sets {
            return Ok(sets);
        }
        sets = next;
    }
}

/// Whether `target` is a nonnegative integer combination of `ns`.
pub fn frobenius_representable(ns: &[u64], target: u64) -> bool {
    let t = target as usize;
    let mut ok = vec![false; t + 1];
    ok[0] = true;
    for s in 1..=t {
        ok[s] = ns.iter().any(|&n| n as usize <= s && n > 0 && ok[s - n as usize]);
    }
    ok[t]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapPeriods {
    pub d_v: u64,
    pub d_e: u64,
    pub d_f: u64,
    pub alpha_v: u64,
    pub alpha_e: u64,
    pub alpha_f: u64,
}

impl MapPeriods {
    /// `(d, alpha)` for vertices, edges or faces.
    pub fn get(&self, which: SizeKind) -> (u64, u64) {
        match which {
            SizeKind::Vertices => (self.d_v, self.alpha_v),
            SizeKind::Edges => (self.d_e, self.alpha_e),
            SizeKind::Faces => (self.d_f, self.alpha_f),
        }
    }
}

/// Which map statistic a size refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeKind {
    Vertices,
    Edges,
    Faces,
}

impl SizeKind {
    pub const ALL: [SizeKind; 3] = [SizeKind::Vertices, SizeKind::Edges, SizeKind::Faces];

    /// Mobile size vector over types (1, 2, 3, 4).
    pub fn mobile_gamma(self) -> [u64; 4] {
        match self {
            SizeKind::Vertices => [1, 0, 0, 0],
            SizeKind::Edges => [1, 0, 1, 1],
            SizeKind::Faces => [0, 0, 1, 1],
        }
    }

    /// Mobile size of a map of size `n`.
    pub fn mobile_size(self, n: u64) -> Option<u64> {
        match self {
            SizeKind::Vertices => n.checked_sub(1),
            SizeKind::Edges => Some(n + 1),
            SizeKind::Faces => Some(n),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "V" | "VERTICES" => Some(SizeKind::Vertices),
            "E" | "EDGES" => Some(SizeKind::Edges),
            "F" | "FACES" => Some(SizeKind::Faces),
            _ => None,
        }
    }
}

/// Face-degree gcd formulas for vertices, edges and faces.
pub fn map_periods(q: &WeightSequence) -> Result<MapPeriods, PeriodError> {
    // beyond this degree a geometric tag adds nothing new to any gcd
    let top = q.max_degree().unwrap_or(64);
    let pos = |n: usize| n <= top && q.positive(n);
    if !(3..=top).any(pos) && !(1..=top).any(pos) {
        return Err(PeriodError::EmptySupport);
    }
    let mut d_v = 0u64;
    let mut d_e = 0u64;
    for n in 1..=top {
        if pos(2 * n + 2) {
            d_v = num::integer::gcd(d_v, n as u64);
        }
        if pos(2 * n) {
            d_e = num::integer::gcd(d_e, n as u64);
        }
    }
    for m in (1..=top).step_by(2) {
        if pos(m + 2) {
            d_v = num::integer::gcd(d_v, m as u64);
        }
        if pos(m) {
            d_e = num::integer::gcd(d_e, m as u64);
        }
    }
    let d_f = if (1..=top / 2).any(|n| pos(2 * n)) { 1 } else { 2 };
    Ok(MapPeriods { d_v: d_v.max(1), d_e: d_e.max(1), d_f, alpha_v: 2, alpha_e: 0, alpha_f: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Prob;

    #[test]
    fn sizes() {
        let t = TypedTree::from_children(&[0, 1, 1], None, &[vec![1, 2], vec![], vec![]], 0).unwrap();
        assert_eq!(size(&t, &[1, 1]), 3);
        assert_eq!(size(&t, &[1, 0]), 1);
        assert_eq!(size(&t, &[0, 1]), 2);
    }

    #[test]
    fn mono2_period() {
        let p = period(&OffspringLaw::mono2(), &[1]).unwrap();
        assert_eq!((p.d, p.alpha.clone()), (2, vec![1]));
    }

    #[test]
    fn toy2_counting_type_one_is_odd() {
        // every type-2 vertex relays exactly one type-1 child, so type-1
        // counts from either root are odd
        let p = period(&OffspringLaw::toy2(), &[1, 0]).unwrap();
        assert_eq!(p.d, 2);
        assert_eq!(p.alpha, vec![1, 1]);
        // counting all vertices: a type-1 tree with k branchings has 4k+1
        let p = period(&OffspringLaw::toy2(), &[1, 1]).unwrap();
        assert_eq!(p.d, 4);
        assert_eq!(p.alpha, vec![1, 2]);
    }

    #[test]
    fn aperiodic_monotype() {
        let third = Prob::ratio(1, 3);
        let law = OffspringLaw::monotype(&[(0, third.clone()), (1, third.clone()), (2, third)]).unwrap();
        let p = period(&law, &[1]).unwrap();
        assert_eq!((p.d, p.alpha[0]), (1, 0));
    }

    #[test]
    fn frobenius() {
        assert!(!frobenius_representable(&[3, 5], 7));
        assert!(frobenius_representable(&[3, 5], 8));
        assert!(frobenius_representable(&[2], 4));
        for k in 0..20 {
            assert!(frobenius_representable(&[7], 7 * k));
        }
    }

    #[test]
    fn map_period_formulas() {
        let quad = WeightSequence::table(&[(4, 1.0)]).unwrap();
        let p = map_periods(&quad).unwrap();
        assert_eq!((p.d_v, p.d_e, p.d_f), (1, 2, 1));
        let tri = WeightSequence::table(&[(3, 1.0)]).unwrap();
        let p = map_periods(&tri).unwrap();
        assert_eq!((p.d_v, p.d_e, p.d_f), (1, 3, 2));
        let hex = WeightSequence::table(&[(6, 1.0)]).unwrap();
        let p = map_periods(&hex).unwrap();
        assert_eq!((p.d_v, p.d_e, p.d_f), (2, 3, 1));
        let uipm = WeightSequence::geometric(0.25).unwrap();
        let p = map_periods(&uipm).unwrap();
        assert_eq!((p.d_v, p.d_e, p.d_f), (1, 1, 1));
    }
}
