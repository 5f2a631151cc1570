//! Offspring laws, mean matrices, Perron data and size-biasing.

use num::rational::BigRational;
use num::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{rationalize, Prob, ProbJson, Scalar};

/// Tolerance on the spectral radius for calling a law critical.
pub const CRITICAL_TOL: f64 = 1e-9;
const PERRON_RESIDUAL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("law needs at least one type")]
    Empty,
    #[error("type {ty}: offspring vector has length {len}, expected {k}")]
    Dimension { ty: usize, len: usize, k: usize },
    #[error("type {ty}: invalid probability {p}")]
    BadProbability { ty: usize, p: f64 },
    #[error("type {ty}: probabilities sum to {sum}")]
    NotNormalized { ty: usize, sum: f64 },
    #[error("type {ty}: geometric parameter {p} outside (0,1]")]
    BadGeometric { ty: usize, p: f64 },
    #[error("degenerate law: every type has exactly one child almost surely")]
    Degenerate,
    #[error("mean matrix is reducible")]
    Reducible,
    #[error("power iteration did not converge (residual {0})")]
    NoConvergence(f64),
    #[error("law is not critical (spectral radius {0})")]
    NotCritical(f64),
    #[error("empty word")]
    EmptyWord,
    #[error("invalid law json: {0}")]
    Json(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub counts: Vec<u32>,
    pub prob: Prob,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TypeLaw {
    Table(Vec<Outcome>),
    /// `k` children of `child_type` with probability `p (1-p)^k`.
    Geometric {
        child_type: usize,
        p: Prob,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffspringLaw {
    k: usize,
    types: Vec<TypeLaw>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Subcritical,
    Critical,
    Supercritical,
}

impl OffspringLaw {
    pub fn new(k: usize, types: Vec<TypeLaw>) -> Result<Self, LawError> {
        if k == 0 || types.len() != k {
            return Err(LawError::Empty);
        }
        let mut nondegenerate = false;
        for (ty, law) in types.iter().enumerate() {
            match law {
                TypeLaw::Table(rows) => {
                    let mut sum = 0.0;
                    let mut exact_sum = Some(BigRational::zero());
                    for o in rows {
                        if o.counts.len() != k {
                            return Err(LawError::Dimension { ty, len: o.counts.len(), k });
                        }
                        if !(o.prob.value >= 0.0 && o.prob.value <= 1.0 + 1e-12) {
                            return Err(LawError::BadProbability { ty, p: o.prob.value });
                        }
                        sum += o.prob.value;
                        exact_sum = match (exact_sum, &o.prob.exact) {
                            (Some(s), Some(e)) => Some(s + e),
                            _ => None,
                        };
                        let total: u32 = o.counts.iter().sum();
                        if total != 1 && o.prob.value > 0.0 {
                            nondegenerate = true;
                        }
                    }
                    let exact_ok = exact_sum.as_ref().is_none_or(|s| s.is_one());
                    if (sum - 1.0).abs() > 1e-12 || !exact_ok {
                        return Err(LawError::NotNormalized { ty, sum });
                    }
                }
                TypeLaw::Geometric { child_type, p } => {
                    if *child_type >= k {
                        return Err(LawError::Dimension { ty, len: *child_type, k });
                    }
                    if !(p.value > 0.0 && p.value <= 1.0) {
                        return Err(LawError::BadGeometric { ty, p: p.value });
                    }
                    nondegenerate = true;
                }
            }
        }
        if !nondegenerate {
            return Err(LawError::Degenerate);
        }
        Ok(OffspringLaw { k, types })
    }

    /// Single-type law from (child count, probability) pairs.
    pub fn monotype(rows: &[(u32, Prob)]) -> Result<Self, LawError> {
        let table = rows.iter().map(|(c, p)| Outcome { counts: vec![*c], prob: p.clone() }).collect();
        OffspringLaw::new(1, vec![TypeLaw::Table(table)])
    }

    /// Binary critical law: no child or two children, each with probability 1/2.
    pub fn mono2() -> Self {
        OffspringLaw::monotype(&[(0, Prob::ratio(1, 2)), (2, Prob::ratio(1, 2))]).unwrap()
    }

    /// Two-type critical law: type 1 has two type-2 children or none (1/2
    /// each); type 2 always has one type-1 child.
    pub fn toy2() -> Self {
        let t1 =
            TypeLaw::Table(vec![Outcome { counts: vec![0, 2], prob: Prob::ratio(1, 2) }, Outcome { counts: vec![0, 0], prob: Prob::ratio(1, 2) }]);
        let t2 = TypeLaw::Table(vec![Outcome { counts: vec![1, 0], prob: Prob::ratio(1, 1) }]);
        OffspringLaw::new(2, vec![t1, t2]).unwrap()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn type_law(&self, i: usize) -> &TypeLaw {
        &self.types[i]
    }

    pub fn type_laws(&self) -> &[TypeLaw] {
        &self.types
    }

    /// Whether every probability is known exactly.
    pub fn is_exact(&self) -> bool {
        self.types.iter().all(|t| match t {
            TypeLaw::Table(rows) => rows.iter().all(|o| o.prob.exact.is_some()),
            TypeLaw::Geometric { p, .. } => p.exact.is_some(),
        })
    }

    /// Finite support for every type, or a geometric tail.
    pub fn is_regular(&self) -> bool {
        true
    }

    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        self.mean_matrix_in::<f64>().expect("float means always exist")
    }

    /// Mean matrix in the given arithmetic (`None` if a probability is not
    /// available exactly).
    pub fn mean_matrix_in<S: Scalar>(&self) -> Option<Vec<Vec<S>>> {
        let k = self.k;
        let mut m = vec![vec![S::zero(); k]; k];
        for (i, law) in self.types.iter().enumerate() {
            match law {
                TypeLaw::Table(rows) => {
                    for o in rows {
                        let p = S::from_prob(&o.prob)?;
                        for j in 0..k {
                            if o.counts[j] > 0 {
                                m[i][j] = m[i][j].clone() + p.clone() * S::from_u64(o.counts[j] as u64);
                            }
                        }
                    }
                }
                TypeLaw::Geometric { child_type, p } => {
                    let p = S::from_prob(p)?;
                    m[i][*child_type] = (S::one() - p.clone()) / p;
                }
            }
        }
        Some(m)
    }

    /// Second factorial moments `Q[j][l]` of a type-`i` parent:
    /// `E[z_j (z_j - 1)]` on the diagonal, `E[z_j z_l]` off it.
    pub fn second_moments(&self, i: usize) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut q = vec![vec![0.0; k]; k];
        match &self.types[i] {
            TypeLaw::Table(rows) => {
                for o in rows {
                    for j in 0..k {
                        for l in 0..k {
                            let zj = o.counts[j] as f64;
                            let zl = o.counts[l] as f64;
                            let v = if j == l { zj * (zj - 1.0) } else { zj * zl };
                            q[j][l] += o.prob.value * v;
                        }
                    }
                }
            }
            TypeLaw::Geometric { child_type, p } => {
                let p = p.value;
                q[*child_type][*child_type] = 2.0 * (1.0 - p) * (1.0 - p) / (p * p);
            }
        }
        q
    }

    pub fn perron_data(&self) -> Result<PerronData, LawError> {
        let mean = self.mean_matrix();
        let core = perron(&mean)?;
        let sigma2 = self.sigma2(&core.a, &core.b);
        let classification = classify_rho(core.rho);
        let (a_exact, b_exact) = if self.is_exact() && classification == Classification::Critical {
            self.exact_eigenvectors(&core).map_or((None, None), |(a, b)| (Some(a), Some(b)))
        } else {
            (None, None)
        };
        Ok(PerronData {
            mean,
            rho: core.rho,
            a: core.a,
            b: core.b,
            sigma2,
            classification,
            regular: classification == Classification::Critical && self.is_regular(),
            a_exact,
            b_exact,
        })
    }

    /// Recovers small-denominator eigenvectors and verifies them exactly.
    fn exact_eigenvectors(&self, core: &PerronCore) -> Option<(Vec<BigRational>, Vec<BigRational>)> {
        let m = self.mean_matrix_in::<BigRational>()?;
        let a: Vec<BigRational> = core.a.iter().map(|&x| rationalize(x, 1 << 20, 1e-11)).collect::<Option<_>>()?;
        let b: Vec<BigRational> = core.b.iter().map(|&x| rationalize(x, 1 << 20, 1e-11)).collect::<Option<_>>()?;
        let k = self.k;
        for i in 0..k {
            let mut row = BigRational::zero();
            let mut col = BigRational::zero();
            for j in 0..k {
                row += &m[i][j] * &b[j];
                col += &a[j] * &m[j][i];
            }
            if row != b[i] || col != a[i] {
                return None;
            }
        }
        let sa: BigRational = a.iter().cloned().sum();
        let sab: BigRational = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        (sa.is_one() && sab.is_one()).then_some((a, b))
    }

    /// Variance constant `sum a_i b_j b_l Q^(i)[j][l]`.
    pub fn sigma2(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, ai) in a.iter().enumerate() {
            let q = self.second_moments(i);
            for j in 0..self.k {
                for l in 0..self.k {
                    s += ai * b[j] * b[l] * q[j][l];
                }
            }
        }
        s
    }

    pub fn classify(&self) -> Result<(Classification, bool), LawError> {
        let pd = self.perron_data()?;
        Ok((pd.classification, pd.regular))
    }

    pub fn from_json(j: &LawJson) -> Result<Self, LawError> {
        let k = j.k;
        let mut types = Vec::with_capacity(j.types.len());
        for (ty, t) in j.types.iter().enumerate() {
            let law = match t {
                TypeLawJson::Table { table } => TypeLaw::Table(
                    table
                        .iter()
                        .map(|(counts, p)| {
                            let prob = p.to_prob().ok_or_else(|| LawError::Json(format!("type {}: bad probability", ty + 1)))?;
                            Ok(Outcome { counts: counts.clone(), prob })
                        })
                        .collect::<Result<_, LawError>>()?,
                ),
                TypeLawJson::Geometric { geometric } => {
                    if geometric.child_type == 0 {
                        return Err(LawError::Json("child_type is 1-based".into()));
                    }
                    TypeLaw::Geometric {
                        child_type: geometric.child_type - 1,
                        p: geometric.p.to_prob().ok_or_else(|| LawError::Json("bad geometric p".into()))?,
                    }
                }
            };
            types.push(law);
        }
        OffspringLaw::new(k, types)
    }

    pub fn to_json(&self) -> LawJson {
        LawJson {
            k: self.k,
            types: self
                .types
                .iter()
                .map(|t| match t {
                    TypeLaw::Table(rows) => {
                        TypeLawJson::Table { table: rows.iter().map(|o| (o.counts.clone(), ProbJson::from_prob(&o.prob))).collect() }
                    }
                    TypeLaw::Geometric { child_type, p } => {
                        TypeLawJson::Geometric { geometric: GeometricJson { child_type: child_type + 1, p: ProbJson::from_prob(p) } }
                    }
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LawJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub types: Vec<TypeLawJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TypeLawJson {
    Table { table: Vec<(Vec<u32>, ProbJson)> },
    Geometric { geometric: GeometricJson },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeometricJson {
    pub child_type: usize,
    pub p: ProbJson,
}

pub fn classify_rho(rho: f64) -> Classification {
    if (rho - 1.0).abs() <= CRITICAL_TOL {
        Classification::Critical
    } else if rho < 1.0 {
        Classification::Subcritical
    } else {
        Classification::Supercritical
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerronCore {
    pub rho: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerronData {
    pub mean: Vec<Vec<f64>>,
    pub rho: f64,
    /// Left eigenvector, entries summing to 1.
    pub a: Vec<f64>,
    /// Right eigenvector, with `sum a_i b_i = 1`.
    pub b: Vec<f64>,
    pub sigma2: f64,
    pub classification: Classification,
    pub regular: bool,
    pub a_exact: Option<Vec<BigRational>>,
    pub b_exact: Option<Vec<BigRational>>,
}

pub fn is_irreducible(m: &[Vec<f64>]) -> bool {
    let k = m.len();
    (0..k).all(|s| {
        let mut seen = vec![false; k];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                if m[i][j] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&x| x)
    })
}

/// Spectral radius and Perron eigenvectors of an irreducible nonnegative
/// matrix, by power iteration on `(M + I) / 2`.
pub fn perron(m: &[Vec<f64>]) -> Result<PerronCore, LawError> {
    let k = m.len();
    if k == 0 || m.iter().any(|r| r.len() != k) {
        return Err(LawError::Empty);
    }
    if !is_irreducible(m) {
        return Err(LawError::Reducible);
    }
    let right = |v: &[f64]| -> Vec<f64> { (0..k).map(|i| (0..k).map(|j| m[i][j] * v[j]).sum()).collect() };
    let left = |v: &[f64]| -> Vec<f64> { (0..k).map(|j| (0..k).map(|i| v[i] * m[i][j]).sum()).collect() };
    let (rho, b) = power_iterate(k, right)?;
    let (_, a) = power_iterate(k, left)?;
    let sa: f64 = a.iter().sum();
    let a: Vec<f64> = a.iter().map(|x| x / sa).collect();
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let b: Vec<f64> = b.iter().map(|x| x / sab).collect();
    Ok(PerronCore { rho, a, b })
}

fn power_iterate(k: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> Result<(f64, Vec<f64>), LawError> {
    let mut v = vec![1.0 / k as f64; k];
    let mut residual = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITER {
        let mv = apply(&v);
        let rho = mv.iter().sum::<f64>() / v.iter().sum::<f64>();
        residual = mv.iter().zip(&v).map(|(x, y)| (x - rho * y).abs()).fold(0.0, f64::max) / v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if residual <= PERRON_RESIDUAL {
            return Ok((rho, v));
        }
        let next: Vec<f64> = mv.iter().zip(&v).map(|(x, y)| 0.5 * (x + y)).collect();
        let s: f64 = next.iter().sum();
        v = next.iter().map(|x| x / s).collect();
    }
    Err(LawError::NoConvergence(residual))
}

/// Per-type law of a spine vertex.
#[derive(Clone, Debug, PartialEq)]
pub enum SpineTypeLaw {
    Table(Vec<Outcome>),
    /// `k >= 1` children of `child_type` with probability `k p^2 (1-p)^(k-1)`.
    SizeBiasedGeometric {
        child_type: usize,
        p: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpineLaw {
    pub types: Vec<SpineTypeLaw>,
}

/// Size-biased offspring law: counts reweighted by `z.b / b_i`.
pub fn size_bias(law: &OffspringLaw, perron: &PerronData) -> Result<SpineLaw, LawError> {
    if perron.classification != Classification::Critical {
        return Err(LawError::NotCritical(perron.rho));
    }
    let b = &perron.b;
    let types = law
        .type_laws()
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            TypeLaw::Table(rows) => {
                let out = rows
                    .iter()
                    .filter_map(|o| {
                        let w: f64 = o.counts.iter().zip(b).map(|(&z, bj)| z as f64 * bj).sum::<f64>() / b[i];
                        let exact = match (&o.prob.exact, &perron.b_exact) {
                            (Some(p), Some(be)) => {
                                let num: BigRational = o.counts.iter().zip(be).map(|(&z, bj)| bj * BigRational::from_integer(z.into())).sum();
                                Some(num / &be[i] * p)
                            }
                            _ => None,
                        };
                        let value = w * o.prob.value;
                        (value > 0.0).then(|| Outcome { counts: o.counts.clone(), prob: Prob { value, exact } })
                    })
                    .collect();
                SpineTypeLaw::Table(out)
            }
            TypeLaw::Geometric { child_type, p } => SpineTypeLaw::SizeBiasedGeometric { child_type: *child_type, p: p.value },
        })
        .collect();
    Ok(SpineLaw { types })
}

/// Picks the spine child among `word` with probability proportional to `b`.
pub fn spine_child_index<R: Rng + ?Sized>(rng: &mut R, word: &[u8], b: &[f64]) -> Result<usize, LawError> {
    if word.is_empty() {
        return Err(LawError::EmptyWord);
    }
    let total: f64 = word.iter().map(|&t| b[t as usize]).sum();
    let mut u = rng.random::<f64>() * total;
    for (j, &t) in word.iter().enumerate() {
        u -= b[t as usize];
        if u < 0.0 {
            return Ok(j);
        }
    }
    Ok(word.len() - 1)
}
