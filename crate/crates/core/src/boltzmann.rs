//! Face-weight sequences, the admissibility system and the mobile offspring
//! law derived from its solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branching::{LawError, OffspringLaw, Outcome, TypeLaw};
use crate::periodicity::SizeKind;
use crate::scalar::Prob;
use crate::trees::mobile_type;

/// Spectral radius above which the fold solver takes over from plain
/// iteration.
const NEAR_CRITICAL: f64 = 1.0 - 1e-3;
/// Tolerance on the critical scale factor for snapping to criticality.
pub const SNAP_TOL: f64 = 1e-11;
const ITER_CAP: usize = 200_000;
/// Mass below which infinite offspring tables are cut.
const TABLE_TAIL: f64 = 1e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoltzmannError {
    #[error("weight sequence has no positive weight of degree >= 3")]
    NoLargeFace,
    #[error("invalid weight q_{n} = {value}")]
    BadWeight { n: usize, value: f64 },
    #[error("geometric parameter {0} must lie in (0, 1/2)")]
    BadLambda(f64),
    #[error("generating function diverges at x={x}, y={y}")]
    Divergent { x: f64, y: f64 },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("weight sequence is not admissible")]
    NotAdmissible,
    #[error("preset {0}: {1}")]
    Preset(String, String),
    #[error("invalid weights json: {0}")]
    Json(String),
    #[error(transparent)]
    Law(#[from] LawError),
}

/// Face weights `q_n`, either a finite table or `scale * lambda^n` for every
/// `n >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSequence {
    Table(Vec<f64>),
    Geometric { lambda: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsJson {
    Table { table: std::collections::BTreeMap<String, f64> },
    Geometric { geometric_lambda: f64 },
}

impl WeightSequence {
    pub fn table(entries: &[(usize, f64)]) -> Result<Self, BoltzmannError> {
        let top = entries.iter().map(|e| e.0).max().unwrap_or(0);
        let mut q = vec![0.0; top + 1];
        for &(n, v) in entries {
            if n == 0 || !(v >= 0.0) || !v.is_finite() {
                return Err(BoltzmannError::BadWeight { n, value: v });
            }
            q[n] = v;
        }
        if !q.iter().skip(3).any(|&v| v > 0.0) {
            return Err(BoltzmannError::NoLargeFace);
        }
        Ok(WeightSequence::Table(q))
    }

    pub fn geometric(lambda: f64) -> Result<Self, BoltzmannError> {
        if !(lambda > 0.0 && lambda < 0.5) {
            return Err(BoltzmannError::BadLambda(lambda));
        }
        Ok(WeightSequence::Geometric { lambda, scale: 1.0 })
    }

    pub fn weight(&self, n: usize) -> f64 {
        match self {
            WeightSequence::Table(q) => q.get(n).copied().unwrap_or(0.0),
            WeightSequence::Geometric { lambda, scale } => {
                if n == 0 {
                    0.0
                } else {
                    scale * lambda.powi(n as i32)
                }
            }
        }
    }

    pub fn positive(&self, n: usize) -> bool {
        self.weight(n) > 0.0
    }

    /// Largest degree with a positive weight, `None` for infinite support.
    pub fn max_degree(&self) -> Option<usize> {
        match self {
            WeightSequence::Table(q) => q.iter().rposition(|&v| v > 0.0),
            WeightSequence::Geometric { .. } => None,
        }
    }

    /// Supported on even degrees only.
    pub fn is_bipartite(&self) -> bool {
        match self {
            WeightSequence::Table(q) => q.iter().enumerate().all(|(n, &v)| n % 2 == 0 || v == 0.0),
            WeightSequence::Geometric { .. } => false,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            WeightSequence::Table(q) => WeightSequence::Table(q.iter().map(|v| v * c).collect()),
            WeightSequence::Geometric { lambda, scale } => WeightSequence::Geometric { lambda: *lambda, scale: scale * c },
        }
    }

    pub fn from_json(j: &WeightsJson) -> Result<Self, BoltzmannError> {
        match j {
            WeightsJson::Table { table } => {
                let entries = table
                    .iter()
                    .map(|(k, v)| k.trim().parse::<usize>().map(|n| (n, *v)).map_err(|_| BoltzmannError::Json(format!("bad degree key {k:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                WeightSequence::table(&entries)
            }
            WeightsJson::Geometric { geometric_lambda } => WeightSequence::geometric(*geometric_lambda),
        }
    }

    pub fn to_json(&self) -> WeightsJson {
        match self {
            WeightSequence::Table(q) => {
                WeightsJson::Table { table: q.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(n, &v)| (n.to_string(), v)).collect() }
            }
            WeightSequence::Geometric { lambda, .. } => WeightsJson::Geometric { geometric_lambda: *lambda },
        }
    }

    /// Values and first partial derivatives of the two generating functions.
    pub fn f_values(&self, x: f64, y: f64) -> Result<FValues, BoltzmannError> {
        match self {
            WeightSequence::Table(q) => Ok(table_f(q, x, y)),
            WeightSequence::Geometric { lambda, scale } => geometric_f(*lambda, *scale, x, y),
        }
    }

    /// Whether both generating functions stay finite slightly beyond `(x, y)`.
    pub fn finite_beyond(&self, x: f64, y: f64) -> bool {
        match self {
            WeightSequence::Table(_) => true,
            WeightSequence::Geometric { .. } => {
                let e = 1e-6 * (1.0 + x + y);
                self.f_values(x + e, y + e).is_ok()
            }
        }
    }
}

pub fn f_bullet(q: &WeightSequence, x: f64, y: f64) -> Result<f64, BoltzmannError> {
    q.f_values(x, y).map(|f| f.bullet)
}

pub fn f_diamond(q: &WeightSequence, x: f64, y: f64) -> Result<f64, BoltzmannError> {
    q.f_values(x, y).map(|f| f.diamond)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FValues {
    pub bullet: f64,
    pub diamond: f64,
    pub bullet_dx: f64,
    pub bullet_dy: f64,
    pub diamond_dx: f64,
    pub diamond_dy: f64,
}

pub(crate) fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Coefficient of `q_{2+2k+k'} x^k y^k'` in the bullet function.
fn bullet_coeff(k: u64, kp: u64) -> f64 {
    binomial(2 * k + kp + 1, k + 1) * binomial(k + kp, k)
}

/// Coefficient of `q_{1+2k+k'} x^k y^k'` in the diamond function.
fn diamond_coeff(k: u64, kp: u64) -> f64 {
    binomial(2 * k + kp, k) * binomial(k + kp, k)
}

fn table_f(q: &[f64], x: f64, y: f64) -> FValues {
    let mut f = FValues { bullet: 0.0, diamond: 0.0, bullet_dx: 0.0, bullet_dy: 0.0, diamond_dx: 0.0, diamond_dy: 0.0 };
    let pw = |b: f64, e: u64| if e == 0 { 1.0 } else { b.powi(e as i32) };
    for (n, &qn) in q.iter().enumerate() {
        if qn == 0.0 {
            continue;
        }
        let n = n as u64;
        if n >= 2 {
            for k in 0..=(n - 2) / 2 {
                let kp = n - 2 - 2 * k;
                let c = bullet_coeff(k, kp) * qn;
                f.bullet += c * pw(x, k) * pw(y, kp);
                if k > 0 {
                    f.bullet_dx += c * k as f64 * pw(x, k - 1) * pw(y, kp);
                }
                if kp > 0 {
                    f.bullet_dy += c * kp as f64 * pw(x, k) * pw(y, kp - 1);
                }
            }
        }
        if n >= 1 {
            for k in 0..=(n - 1) / 2 {
                let kp = n - 1 - 2 * k;
                let c = diamond_coeff(k, kp) * qn;
                f.diamond += c * pw(x, k) * pw(y, kp);
                if k > 0 {
                    f.diamond_dx += c * k as f64 * pw(x, k - 1) * pw(y, kp);
                }
                if kp > 0 {
                    f.diamond_dy += c * kp as f64 * pw(x, k) * pw(y, kp - 1);
                }
            }
        }
    }
    f
}

/// `sum_k C(2k+1, k) z^k` and its derivative.
fn odd_central(z: f64) -> (f64, f64) {
    if z < 1e-3 {
        let (mut g, mut dg, mut zk) = (0.0, 0.0, 1.0);
        for k in 0..40u64 {
            let c = binomial(2 * k + 1, k);
            g += c * zk;
            if k + 1 < 40 {
                dg += (k + 1) as f64 * binomial(2 * k + 3, k + 1) * zk;
            }
            zk *= z;
        }
        return (g, dg);
    }
    let s = (1.0 - 4.0 * z).sqrt();
    let g = (1.0 / s - 1.0) / (2.0 * z);
    let dg = 1.0 / (z * s * s * s) - (1.0 / s - 1.0) / (2.0 * z * z);
    (g, dg)
}

fn geometric_f(lambda: f64, scale: f64, x: f64, y: f64) -> Result<FValues, BoltzmannError> {
    let u = 1.0 - lambda * y;
    if u <= 0.0 {
        return Err(BoltzmannError::Divergent { x, y });
    }
    let z = lambda * lambda * x / (u * u);
    if 4.0 * z >= 1.0 {
        return Err(BoltzmannError::Divergent { x, y });
    }
    let s = (1.0 - 4.0 * z).sqrt();
    let dz_dx = lambda * lambda / (u * u);
    let dz_dy = 2.0 * lambda * z / u;
    let (g, dg) = odd_central(z);
    let l2 = lambda * lambda;
    let bullet = l2 / (u * u) * g;
    let bullet_dx = l2 / (u * u) * dg * dz_dx;
    let bullet_dy = 2.0 * lambda * l2 / (u * u * u) * g + l2 / (u * u) * dg * dz_dy;
    let diamond = lambda / (u * s);
    // d/dz (1-4z)^(-1/2) = 2 (1-4z)^(-3/2)
    let ds = 2.0 / (s * s * s);
    let diamond_dx = lambda / u * ds * dz_dx;
    let diamond_dy = lambda * lambda / (u * u * s) + lambda / u * ds * dz_dy;
    Ok(FValues {
        bullet: scale * bullet,
        diamond: scale * diamond,
        bullet_dx: scale * bullet_dx,
        bullet_dy: scale * bullet_dy,
        diamond_dx: scale * diamond_dx,
        diamond_dy: scale * diamond_dy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    NotAdmissible,
    AdmissibleSubcritical,
    Critical,
    RegularCritical,
}

impl MapClass {
    pub fn is_critical(self) -> bool {
        matches!(self, MapClass::Critical | MapClass::RegularCritical)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoltzmannSolution {
    pub weights: WeightSequence,
    pub classification: MapClass,
    /// `Z+`; NaN when not admissible.
    pub x: f64,
    /// `Z<>`; NaN when not admissible, exactly 0 for bipartite weights.
    pub y: f64,
    pub matrix: [[f64; 3]; 3],
    pub radius: f64,
    pub residuals: [f64; 2],
    /// Scale factor putting the weights exactly at criticality, when the
    /// fold solver ran.
    pub critical_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub weights: WeightsJson,
    pub classification: MapClass,
    pub zplus: Option<f64>,
    pub zdiamond: Option<f64>,
    pub radius: Option<f64>,
    pub matrix: Option<[[f64; 3]; 3]>,
    pub residuals: Option<[f64; 2]>,
    pub critical_scale: Option<f64>,
    pub bipartite: bool,
    pub table_tail_mass: Option<f64>,
}

impl BoltzmannSolution {
    pub fn is_admissible(&self) -> bool {
        self.classification != MapClass::NotAdmissible
    }

    pub fn report(&self) -> AnalysisReport {
        let adm = self.is_admissible();
        let tail = if adm { derive_mobile_law(self).ok().map(|m| m.tail_mass) } else { None };
        AnalysisReport {
            weights: self.weights.to_json(),
            classification: self.classification,
            zplus: adm.then_some(self.x),
            zdiamond: adm.then_some(self.y),
            radius: adm.then_some(self.radius),
            matrix: adm.then_some(self.matrix),
            residuals: adm.then_some(self.residuals),
            critical_scale: self.critical_scale,
            bipartite: self.weights.is_bipartite(),
            table_tail_mass: tail,
        }
    }
}

/// The 3x3 stability matrix at `(x, y)`.
pub fn stability_matrix(f: &FValues, x: f64, y: f64) -> [[f64; 3]; 3] {
    // with y = 0 the weights are bipartite and d/dx of the diamond function
    // vanishes identically; the ratio is taken as 0
    let a21 = if y > 0.0 { x / y * f.diamond_dx } else { 0.0 };
    [[0.0, 0.0, x - 1.0], [a21, f.diamond_dy, 0.0], [x * x / (x - 1.0) * f.bullet_dx, x * y / (x - 1.0) * f.bullet_dy, 0.0]]
}

/// Perron root of a nonnegative 3x3 matrix, bracketed by Collatz–Wielandt
/// ratios of iterates of `A + I`.
pub fn spectral_radius3(a: &[[f64; 3]; 3]) -> f64 {
    let mut v = [1.0; 3];
    let mut est = 0.0;
    for _ in 0..1_000_000 {
        let mut w = [0.0; 3];
        for i in 0..3 {
            w[i] = v[i] + (0..3).map(|j| a[i][j] * v[j]).sum::<f64>();
        }
        let ratios: Vec<f64> = (0..3).filter(|&i| v[i] > 1e-300).map(|i| w[i] / v[i]).collect();
        let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
        est = hi - 1.0;
        if hi - lo < 1e-14 * hi {
            break;
        }
        let s: f64 = w.iter().sum();
        for i in 0..3 {
            // keep every component strictly positive so reducible blocks
            // still get bracketed
            v[i] = (w[i] / s).max(1e-200);
        }
    }
    est
}

fn residuals(q: &WeightSequence, x: f64, y: f64) -> Result<[f64; 2], BoltzmannError> {
    let f = q.f_values(x, y)?;
    Ok([(1.0 - 1.0 / x - f.bullet).abs(), (y - f.diamond).abs()])
}

/// Function whose zero marks the critical fold, together with the
/// admissibility equations.
fn fold_equations(base: &WeightSequence, bip: bool, v: &[f64; 3]) -> Result<[f64; 3], BoltzmannError> {
    let (x, y, c) = (v[0], if bip { 0.0 } else { v[1] }, v[2]);
    if !(x > 1.0) || !(c > 0.0) || y < 0.0 {
        return Err(BoltzmannError::Divergent { x, y });
    }
    let f = base.scaled(c).f_values(x, y)?;
    let h1 = 1.0 - 1.0 / x - f.bullet;
    if bip {
        // the y-row decouples; the x-block is the critical one
        let g = 1.0 - x * x * f.bullet_dx;
        return Ok([h1, 0.0, g]);
    }
    let a = stability_matrix(&f, x, y);
    let det = (1.0 - a[1][1]) - a[0][2] * (a[1][0] * a[2][1] + (1.0 - a[1][1]) * a[2][0]);
    Ok([h1, y - f.diamond, det])
}

/// Newton's method on the admissibility equations plus the fold condition,
/// in the unknowns `(x, y, scale)`.
pub fn fold_solve(base: &WeightSequence, x0: f64, y0: f64, c0: f64) -> Result<(f64, f64, f64), BoltzmannError> {
    let bip = base.is_bipartite();
    let mut v = [x0, if bip { 0.0 } else { y0 }, c0];
    let dims: Vec<usize> = if bip { vec![0, 2] } else { vec![0, 1, 2] };
    let eqs: Vec<usize> = if bip { vec![0, 2] } else { vec![0, 1, 2] };
    for _ in 0..100 {
        let r = fold_equations(base, bip, &v)?;
        let n = dims.len();
        let mut jac = vec![vec![0.0; n]; n];
        for (col, &d) in dims.iter().enumerate() {
            let h = 1e-6 * v[d].abs().max(1e-3);
            let mut vp = v;
            let mut vm = v;
            vp[d] += h;
            vm[d] -= h;
            let rp = fold_equations(base, bip, &vp)?;
            let rm = fold_equations(base, bip, &vm)?;
            for (row, &e) in eqs.iter().enumerate() {
                jac[row][col] = (rp[e] - rm[e]) / (2.0 * h);
            }
        }
        let rhs: Vec<f64> = eqs.iter().map(|&e| -r[e]).collect();
        let step = crate::series::solve(jac, rhs).ok_or_else(|| BoltzmannError::NonConvergence("singular fold Jacobian".into()))?;
        // damp steps that leave the domain
        let mut t = 1.0;
        let mut next = v;
        loop {
            for (col, &d) in dims.iter().enumerate() {
                next[d] = v[d] + t * step[col];
            }
            if fold_equations(base, bip, &next).is_ok() {
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                return Err(BoltzmannError::NonConvergence("fold step left the domain".into()));
            }
        }
        let moved = dims.iter().map(|&d| ((next[d] - v[d]) / v[d].abs().max(1.0)).abs()).fold(0.0, f64::max);
        v = next;
        if moved < 1e-15 {
            break;
        }
    }
    let r = fold_equations(base, bip, &v)?;
    if r.iter().any(|x| x.abs() > 1e-9) {
        return Err(BoltzmannError::NonConvergence(format!("fold residual {r:?}")));
    }
    Ok((v[0], v[1], v[2]))
}

/// Newton polish of the admissibility equations at fixed weights.
fn polish(q: &WeightSequence, mut x: f64, mut y: f64) -> (f64, f64) {
    let bip = q.is_bipartite();
    for _ in 0..50 {
        let Ok(f) = q.f_values(x, y) else { break };
        let h1 = 1.0 - 1.0 / x - f.bullet;
        let (dx, dy) = if bip {
            let j = 1.0 / (x * x) - f.bullet_dx;
            (-h1 / j, 0.0)
        } else {
            let h2 = y - f.diamond;
            let (a, b) = (1.0 / (x * x) - f.bullet_dx, -f.bullet_dy);
            let (c, d) = (-f.diamond_dx, 1.0 - f.diamond_dy);
            let det = a * d - b * c;
            if det == 0.0 {
                break;
            }
            ((-h1 * d + h2 * b) / det, (-h2 * a + h1 * c) / det)
        };
        if !(x + dx > 1.0) || y + dy < 0.0 || q.f_values(x + dx, y + dy).is_err() {
            break;
        }
        x += dx;
        y += dy;
        if dx.abs() + dy.abs() < 1e-16 * x {
            break;
        }
    }
    (x, y)
}

enum Iterate {
    Diverged,
    Reached { x: f64, y: f64 },
}

/// Monotone iteration from `(1, 0)`.
fn iterate(q: &WeightSequence, cap: usize) -> Iterate {
    let (mut x, mut y) = (1.0, 0.0);
    for _ in 0..cap {
        let Ok(f) = q.f_values(x, y) else { return Iterate::Diverged };
        if f.bullet >= 1.0 {
            return Iterate::Diverged;
        }
        let nx = 1.0 / (1.0 - f.bullet);
        let ny = f.diamond;
        if !nx.is_finite() || nx > 1e12 || ny > 1e12 {
            return Iterate::Diverged;
        }
        let done = (nx - x).abs() + (ny - y).abs() <= 1e-16 * nx;
        x = nx;
        y = ny;
        if done {
            break;
        }
    }
    Iterate::Reached { x, y }
}

fn not_admissible(q: &WeightSequence, critical_scale: Option<f64>) -> BoltzmannSolution {
    BoltzmannSolution {
        weights: q.clone(),
        classification: MapClass::NotAdmissible,
        x: f64::NAN,
        y: f64::NAN,
        matrix: [[f64::NAN; 3]; 3],
        radius: f64::NAN,
        residuals: [f64::NAN; 2],
        critical_scale,
    }
}

pub fn solve_admissibility(q: &WeightSequence) -> Result<BoltzmannSolution, BoltzmannError> {
    let (x, y) = match iterate(q, ITER_CAP) {
        Iterate::Diverged => return Ok(not_admissible(q, None)),
        Iterate::Reached { x, y } => (x, y),
    };
    let bip = q.is_bipartite();
    let y = if bip { 0.0 } else { y };
    let f = q.f_values(x, y)?;
    let radius = spectral_radius3(&stability_matrix(&f, x, y));
    let (mut x, mut y, mut class, mut scale) = (x, y, MapClass::AdmissibleSubcritical, None);
    if radius > NEAR_CRITICAL {
        let (fx, fy, c) = fold_solve(q, x, y, 1.0)?;
        scale = Some(c);
        if (c - 1.0).abs() <= SNAP_TOL {
            x = fx;
            y = if bip { 0.0 } else { fy };
            class = MapClass::Critical;
        } else if c < 1.0 {
            return Ok(not_admissible(q, scale));
        } else {
            (x, y) = polish(q, x, y);
        }
    } else {
        (x, y) = polish(q, x, y);
    }
    let f = q.f_values(x, y)?;
    let matrix = stability_matrix(&f, x, y);
    let radius = spectral_radius3(&matrix);
    if class == MapClass::Critical && q.finite_beyond(x, y) {
        class = MapClass::RegularCritical;
    }
    if class == MapClass::AdmissibleSubcritical && radius > 1.0 + 1e-9 {
        return Ok(not_admissible(q, scale));
    }
    Ok(BoltzmannSolution { weights: q.clone(), classification: class, x, y, matrix, radius, residuals: residuals(q, x, y)?, critical_scale: scale })
}

/// Offspring law of the mobile, indexed by its own types, with the mobile
/// type each index stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct MobileLaw {
    pub law: OffspringLaw,
    pub mobile_types: Vec<u8>,
    /// Probability mass dropped when cutting infinite tables.
    pub tail_mass: f64,
}

impl MobileLaw {
    pub fn index_of(&self, mobile_ty: u8) -> Option<usize> {
        self.mobile_types.iter().position(|&t| t == mobile_ty)
    }

    pub fn is_bipartite(&self) -> bool {
        self.mobile_types.len() == 2
    }

    /// A size vector over mobile types projected onto the law's types.
    pub fn project_gamma(&self, gamma4: &[u64; 4]) -> Vec<u64> {
        self.mobile_types.iter().map(|&t| gamma4[t as usize]).collect()
    }

    pub fn gamma(&self, kind: SizeKind) -> Vec<u64> {
        self.project_gamma(&kind.mobile_gamma())
    }
}

/// Entries `(k, k', probability)` of a face-type offspring table.
fn face_table(q: &WeightSequence, x: f64, y: f64, offset: u64, coeff: fn(u64, u64) -> f64, norm: f64) -> (Vec<(u64, u64, f64)>, f64) {
    let mut out = Vec::new();
    let mut total = 0.0;
    let pw = |b: f64, e: u64| if e == 0 { 1.0 } else { b.powi(e as i32) };
    let top = q.max_degree();
    let mut prev_group = f64::INFINITY;
    let mut n = offset;
    loop {
        if let Some(t) = top {
            if n as usize > t {
                break;
            }
        }
        let qn = q.weight(n as usize);
        let mut group = 0.0;
        if qn > 0.0 {
            let free = n - offset;
            for k in 0..=free / 2 {
                let kp = free - 2 * k;
                if kp > 0 && y == 0.0 {
                    continue;
                }
                let p = coeff(k, kp) * qn * pw(x, k) * pw(y, kp) / norm;
                if p > 0.0 {
                    out.push((k, kp, p));
                    group += p;
                }
            }
        }
        total += group;
        if top.is_none() && n > offset + 4 {
            let r = group / prev_group;
            if r < 1.0 && group * r / (1.0 - r) < TABLE_TAIL {
                break;
            }
            if n > 100_000 {
                break;
            }
        }
        prev_group = group;
        n += 1;
    }
    (out, (1.0 - total).max(0.0))
}

/// The mobile offspring law attached to an admissible solution.
pub fn derive_mobile_law(sol: &BoltzmannSolution) -> Result<MobileLaw, BoltzmannError> {
    if !sol.is_admissible() {
        return Err(BoltzmannError::NotAdmissible);
    }
    let q = &sol.weights;
    let (x, y) = (sol.x, sol.y);
    let f = q.f_values(x, y)?;
    let p = Prob::float(1.0 / x);
    let (bullet_rows, tail_b) = face_table(q, x, y, 2, bullet_coeff, f.bullet);
    let normalize = |rows: &[(u64, u64, f64)]| -> f64 { rows.iter().map(|r| r.2).sum() };
    if q.is_bipartite() {
        let s = normalize(&bullet_rows);
        let t3 = bullet_rows.iter().map(|&(k, _, pr)| Outcome { counts: vec![k as u32, 0], prob: Prob::float(pr / s) }).collect();
        let law = OffspringLaw::new(2, vec![TypeLaw::Geometric { child_type: 1, p }, TypeLaw::Table(t3)])?;
        return Ok(MobileLaw { law, mobile_types: vec![mobile_type::VERTEX, mobile_type::FACE], tail_mass: tail_b });
    }
    let (diamond_rows, tail_d) = face_table(q, x, y, 1, diamond_coeff, f.diamond);
    let sb = normalize(&bullet_rows);
    let sd = normalize(&diamond_rows);
    let t3 = bullet_rows.iter().map(|&(k, kp, pr)| Outcome { counts: vec![k as u32, kp as u32, 0, 0], prob: Prob::float(pr / sb) }).collect();
    let t4 = diamond_rows.iter().map(|&(k, kp, pr)| Outcome { counts: vec![k as u32, kp as u32, 0, 0], prob: Prob::float(pr / sd) }).collect();
    let t2 = vec![Outcome { counts: vec![0, 0, 0, 1], prob: Prob::ratio(1, 1) }];
    let law = OffspringLaw::new(4, vec![TypeLaw::Geometric { child_type: 2, p }, TypeLaw::Table(t2), TypeLaw::Table(t3), TypeLaw::Table(t4)])?;
    Ok(MobileLaw {
        law,
        mobile_types: vec![mobile_type::VERTEX, mobile_type::FLAG, mobile_type::FACE, mobile_type::FLAG_FACE],
        tail_mass: tail_b.max(tail_d),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Faces of degree `2p` only.
    Even(u32),
    /// Faces of degree `2p+1` only.
    Odd(u32),
    /// `q_n = lambda^n` with the critical `lambda`.
    Uipm,
}

impl Preset {
    pub fn name(&self) -> String {
        match self {
            Preset::Even(p) => format!("even-{p}"),
            Preset::Odd(p) => format!("odd-{p}"),
            Preset::Uipm => "uipm".into(),
        }
    }

    /// Inverse of `name`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "uipm" {
            return Some(Preset::Uipm);
        }
        let (shape, p) = s.split_once('-')?;
        let p = p.parse().ok()?;
        match shape {
            "even" => Some(Preset::Even(p)),
            "odd" => Some(Preset::Odd(p)),
            _ => None,
        }
    }
}

pub fn uipm_lambda() -> f64 {
    1.0 / (2.0 * 3f64.sqrt())
}

/// Critical weight sequence of the given shape. The single free weight is
/// bracketed by bisection on admissibility, then pinned by the fold solver.
pub fn preset(which: Preset) -> Result<WeightSequence, BoltzmannError> {
    let degree = match which {
        Preset::Uipm => return WeightSequence::geometric(uipm_lambda()),
        Preset::Even(p) if p >= 2 => 2 * p as usize,
        Preset::Odd(p) if p >= 1 => 2 * p as usize + 1,
        _ => return Err(BoltzmannError::Preset(which.name(), "parameter out of range".into())),
    };
    let unit = WeightSequence::table(&[(degree, 1.0)])?;
    let admissible = |c: f64| matches!(iterate(&unit.scaled(c), 20_000), Iterate::Reached { .. });
    let (mut lo, mut hi) = (0.0, 1.0);
    while admissible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(BoltzmannError::Preset(which.name(), "bracket failure".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * hi {
            break;
        }
    }
    // a capped iteration cannot tell slightly supercritical weights apart, so
    // back off until the start point is safely admissible
    let mut start = lo;
    let (x, y) = loop {
        start *= 1.0 - 1e-4;
        if let Iterate::Reached { x, y } = iterate(&unit.scaled(start), ITER_CAP) {
            break (x, y);
        }
        if start < 0.5 * lo {
            return Err(BoltzmannError::Preset(which.name(), "lost admissibility".into()));
        }
    };
    let (_, _, c) = fold_solve(&unit, x, y, start)?;
    Ok(unit.scaled(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uipm_closed_forms() {
        let q = WeightSequence::geometric(uipm_lambda()).unwrap();
        let (x, y) = (4.0 / 3.0, 1.0 / 3f64.sqrt());
        let f = q.f_values(x, y).unwrap();
        assert!((f.bullet - 0.25).abs() < 1e-14);
        assert!((f.diamond - y).abs() < 1e-14);
    }

    #[test]
    fn closed_forms_match_table_sums() {
        let lambda = 0.2;
        let q = WeightSequence::geometric(lambda).unwrap();
        let entries: Vec<(usize, f64)> = (1..200).map(|n| (n, lambda.powi(n as i32))).collect();
        let t = WeightSequence::table(&entries).unwrap();
        for &(x, y) in &[(1.1, 0.2), (2.0, 0.5), (0.0, 0.0), (1e-4, 1e-4)] {
            let a = q.f_values(x, y).unwrap();
            let b = t.f_values(x, y).unwrap();
            for (u, v) in [
                (a.bullet, b.bullet),
                (a.diamond, b.diamond),
                (a.bullet_dx, b.bullet_dx),
                (a.bullet_dy, b.bullet_dy),
                (a.diamond_dx, b.diamond_dx),
                (a.diamond_dy, b.diamond_dy),
            ] {
                assert!((u - v).abs() < 1e-10 * (1.0 + v.abs()), "{x} {y}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn quadrangulation_single_term() {
        let q = WeightSequence::table(&[(4, 0.1)]).unwrap();
        let f = q.f_values(1.7, 0.0).unwrap();
        assert!((f.bullet - 3.0 * 0.1 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for q in [WeightSequence::geometric(uipm_lambda()).unwrap(), WeightSequence::table(&[(3, 0.05), (4, 0.02), (7, 0.001)]).unwrap()] {
            let (x, y) = (1.3, 0.4);
            let f = q.f_values(x, y).unwrap();
            let fx = |dx: f64, dy: f64| q.f_values(x + dx, y + dy).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            assert!(rel(f.bullet_dx, (fx(h, 0.0).bullet - fx(-h, 0.0).bullet) / (2.0 * h)) < 1e-6);
            assert!(rel(f.bullet_dy, (fx(0.0, h).bullet - fx(0.0, -h).bullet) / (2.0 * h)) < 1e-6);
            assert!(rel(f.diamond_dx, (fx(h, 0.0).diamond - fx(-h, 0.0).diamond) / (2.0 * h)) < 1e-6);
            assert!(rel(f.diamond_dy, (fx(0.0, h).diamond - fx(0.0, -h).diamond) / (2.0 * h)) < 1e-6);
        }
    }

    #[test]
    fn uipm_is_regular_critical() {
        let q = preset(Preset::Uipm).unwrap();
        let s = solve_admissibility(&q).unwrap();
        assert_eq!(s.classification, MapClass::RegularCritical);
        assert!((s.x - 4.0 / 3.0).abs() < 1e-8);
        assert!((s.y - 1.0 / 3f64.sqrt()).abs() < 1e-8);
        assert!(s.residuals.iter().all(|&r| r <= 1e-12));
    }

    #[test]
    fn quadrangulation_thresholds() {
        let s = solve_admissibility(&WeightSequence::table(&[(4, 1.0 / 12.0)]).unwrap()).unwrap();
        assert!(s.classification.is_critical());
        assert!((s.x - 2.0).abs() < 1e-8);
        assert_eq!(s.y, 0.0);
        let s = solve_admissibility(&WeightSequence::table(&[(4, 0.125)]).unwrap()).unwrap();
        assert_eq!(s.classification, MapClass::NotAdmissible);
        let s = solve_admissibility(&WeightSequence::table(&[(4, 0.01)]).unwrap()).unwrap();
        assert_eq!(s.classification, MapClass::AdmissibleSubcritical);
        assert!(s.radius < 1.0);
        let expected = (1.0 - (1.0f64 - 0.12).sqrt()) / 0.06;
        assert!((s.x - expected).abs() < 1e-12);
    }

    #[test]
    fn even_preset_is_one_twelfth() {
        let q = preset(Preset::Even(2)).unwrap();
        assert!((q.weight(4) - 1.0 / 12.0).abs() < 1e-8, "{}", q.weight(4));
    }

    #[test]
    fn odd_preset_is_critical() {
        let q = preset(Preset::Odd(1)).unwrap();
        let s = solve_admissibility(&q).unwrap();
        assert!(s.classification.is_critical(), "{:?}", s.classification);
        assert!((s.radius - 1.0).abs() < 1e-6);
    }

    #[test]
    fn derived_quadrangulation_law() {
        let s = solve_admissibility(&WeightSequence::table(&[(4, 1.0 / 12.0)]).unwrap()).unwrap();
        let m = derive_mobile_law(&s).unwrap();
        assert_eq!(m.mobile_types, vec![mobile_type::VERTEX, mobile_type::FACE]);
        match m.law.type_law(0) {
            TypeLaw::Geometric { child_type, p } => {
                assert_eq!(*child_type, 1);
                assert!((p.value - 0.5).abs() < 1e-8);
            }
            _ => panic!(),
        }
        match m.law.type_law(1) {
            TypeLaw::Table(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].counts, vec![1, 0]);
                assert!((rows[0].prob.value - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn derived_uipm_law_is_critical() {
        let s = solve_admissibility(&preset(Preset::Uipm).unwrap()).unwrap();
        let m = derive_mobile_law(&s).unwrap();
        assert!(m.tail_mass < 1e-10);
        let pd = m.law.perron_data().unwrap();
        assert!((pd.rho - 1.0).abs() < 1e-9, "{}", pd.rho);
    }

    #[test]
    fn json_forms() {
        let j: WeightsJson = serde_json::from_str(r#"{"table": {"4": 0.0833}}"#).unwrap();
        let q = WeightSequence::from_json(&j).unwrap();
        assert!(q.is_bipartite());
        let j: WeightsJson = serde_json::from_str(r#"{"geometric_lambda": 0.25}"#).unwrap();
        assert!(matches!(WeightSequence::from_json(&j).unwrap(), WeightSequence::Geometric { .. }));
        assert!(WeightSequence::table(&[(2, 1.0)]).is_err());
    }
}
