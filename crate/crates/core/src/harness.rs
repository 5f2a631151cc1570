//! Statistics and experiment runners: total variation, chi-square with
//! pooling, exponential tail fits, exact truncation laws of size-biased
//! forests, and reproducible job-parallel convergence experiments.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::boltzmann::BoltzmannSolution;
use crate::branching::{LawError, OffspringLaw, TypeLaw};
use crate::infinite_map::{FiniteMapSampler, InfiniteError, InfiniteMapSampler, Sign, WindowPolicy};
use crate::periodicity::{self, PeriodError, SizeKind};
use crate::sampler::{ConditionedSampler, SampleError, TreeSampler};
use crate::trees::{Forest, TreeError, TypedTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("tail fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("survival values must be positive")]
    NonPositiveSurvival,
    #[error("observed and expected lengths differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("size {n} is off the lattice {alpha} + {d}Z")]
    OffLattice { n: u64, d: u64, alpha: u64 },
    #[error("exact truncation laws need finite tables with exact probabilities")]
    NotExact,
    #[error("enumeration budget of {0} forests exceeded")]
    Budget(usize),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Infinite(#[from] InfiniteError),
    #[error(transparent)]
    Period(#[from] PeriodError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

// ---------------------------------------------------------------- streams

/// Generator of job `job` under master seed `seed`: the stream id is a
/// splitmix64 hash of the job index, so results do not depend on which
/// thread runs which job.
pub fn job_rng(seed: u64, job: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(splitmix64(job));
    r
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `samples` draws split into fixed chunks, one generator per chunk,
/// and returns the results in draw order.
pub fn run_jobs<T, F>(seed: u64, samples: usize, chunk: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T, HarnessError> + Sync,
{
    let chunk = chunk.max(1);
    let jobs = samples.div_ceil(chunk);
    let parts: Vec<Result<Vec<T>, HarnessError>> = (0..jobs)
        .into_par_iter()
        .map(|j| {
            let mut rng = job_rng(seed, j as u64);
            let n = chunk.min(samples - j * chunk);
            (0..n).map(|_| f(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(samples);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

// -------------------------------------------------------------- statistics

pub fn histogram<K: Hash + Eq, I: IntoIterator<Item = K>>(items: I) -> HashMap<K, u64> {
    let mut h = HashMap::new();
    for k in items {
        *h.entry(k).or_insert(0) += 1;
    }
    h
}

fn total(h: &HashMap<impl Hash + Eq, u64>) -> Result<f64, HarnessError> {
    let n: u64 = h.values().sum();
    if n == 0 {
        return Err(HarnessError::EmptyHistogram);
    }
    Ok(n as f64)
}

fn sorted_keys<'a, K: Ord + 'a>(maps: impl IntoIterator<Item = impl Iterator<Item = &'a K>>) -> Vec<&'a K> {
    let mut keys: Vec<&K> = maps.into_iter().flatten().collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Total variation distance between two empirical histograms. Sums run in
/// key order so results are bit-reproducible.
pub fn tv_distance<K: Hash + Eq + Ord>(a: &HashMap<K, u64>, b: &HashMap<K, u64>) -> Result<f64, HarnessError> {
    let (na, nb) = (total(a)?, total(b)?);
    let s: f64 = sorted_keys([a.keys(), b.keys()])
        .into_iter()
        .map(|k| (a.get(k).map_or(0.0, |&c| c as f64 / na) - b.get(k).map_or(0.0, |&c| c as f64 / nb)).abs())
        .sum();
    Ok(0.5 * s)
}

/// Total variation distance between a histogram and a law; mass the law
/// leaves unlisted counts as disagreement.
pub fn tv_to_law<K: Hash + Eq + Ord>(hist: &HashMap<K, u64>, law: &HashMap<K, f64>) -> Result<f64, HarnessError> {
    let n = total(hist)?;
    let mut s = 0.0;
    let mut covered = 0.0;
    for k in sorted_keys([Box::new(hist.keys()) as Box<dyn Iterator<Item = &K>>, Box::new(law.keys())]) {
        let p = law.get(k).copied().unwrap_or(0.0);
        covered += p;
        s += (hist.get(k).map_or(0.0, |&c| c as f64 / n) - p).abs();
    }
    s += (1.0 - covered).max(0.0);
    Ok(0.5 * s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Classes after pooling.
    pub classes: usize,
}

/// Pearson chi-square of counts against class probabilities. Classes with
/// expected count below 5 are pooled; an observation in a class of zero
/// probability gives p = 0.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> Result<ChiSquare, HarnessError> {
    if observed.len() != probs.len() {
        return Err(HarnessError::Length(observed.len(), probs.len()));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(HarnessError::EmptyHistogram);
    }
    let n = n as f64;
    let mut big: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n * p;
        if e <= 0.0 {
            if o > 0 {
                return Ok(ChiSquare { statistic: f64::INFINITY, dof: 0, p_value: 0.0, classes: 0 });
            }
            continue;
        }
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
        } else {
            big.push((o as f64, e));
        }
    }
    if pool_e > 0.0 {
        if pool_e < 5.0 && !big.is_empty() {
            // fold an undersized pool into the smallest regular class
            let i = (0..big.len()).min_by(|&a, &b| big[a].1.total_cmp(&big[b].1)).unwrap();
            big[i].0 += pool_o;
            big[i].1 += pool_e;
        } else {
            big.push((pool_o, pool_e));
        }
    }
    let statistic: f64 = big.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = big.len().saturating_sub(1);
    let p_value = if dof == 0 { 1.0 } else { ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(0.0) };
    Ok(ChiSquare { statistic, dof, p_value, classes: big.len() })
}

/// Chi-square of a keyed histogram against a keyed law; keys outside the
/// law and any missing law mass form one extra class.
pub fn chi_square_keyed<K: Hash + Eq + Ord>(hist: &HashMap<K, u64>, law: &HashMap<K, f64>) -> Result<ChiSquare, HarnessError> {
    let mut obs = Vec::with_capacity(law.len() + 1);
    let mut probs = Vec::with_capacity(law.len() + 1);
    let mut covered = 0.0;
    for k in sorted_keys([law.keys()]) {
        obs.push(hist.get(k).copied().unwrap_or(0));
        probs.push(law[k]);
        covered += law[k];
    }
    obs.push(hist.iter().filter(|(k, _)| !law.contains_key(*k)).map(|(_, &c)| c).sum());
    probs.push((1.0 - covered).max(0.0));
    chi_square(&obs, &probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares fit of `ln S(n) = intercept + slope * n`.
pub fn tail_fit(points: &[(f64, f64)]) -> Result<TailFit, HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    if points.iter().any(|&(_, s)| s <= 0.0 || s.is_nan()) {
        return Err(HarnessError::NonPositiveSurvival);
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(TailFit { slope, intercept, r2, points: points.len() })
}

/// Empirical `P(X >= n)` for `n` in `lo..=hi`, skipping zero values.
pub fn survival(samples: &[usize], lo: usize, hi: usize) -> Vec<(f64, f64)> {
    let total = samples.len() as f64;
    (lo..=hi)
        .filter_map(|n| {
            let c = samples.iter().filter(|&&x| x >= n).count();
            (c > 0).then(|| (n as f64, c as f64 / total))
        })
        .collect()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

// ----------------------------------------------------- exact truncations

/// Ordered child words of a type with their exact probabilities; an
/// outcome's mass is split evenly over its distinct orderings.
fn word_table(law: &OffspringLaw, ty: usize) -> Result<Vec<(Vec<u8>, BigRational)>, HarnessError> {
    let TypeLaw::Table(rows) = law.type_law(ty) else {
        return Err(HarnessError::NotExact);
    };
    let mut out = Vec::new();
    for o in rows {
        let p = o.prob.exact.clone().ok_or(HarnessError::NotExact)?;
        if p.is_zero() {
            continue;
        }
        let words = arrangements(&o.counts);
        let share = p / BigRational::from_integer(words.len().into());
        out.extend(words.into_iter().map(|w| (w, share.clone())));
    }
    Ok(out)
}

fn arrangements(counts: &[u32]) -> Vec<Vec<u8>> {
    fn rec(left: &mut Vec<u32>, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if left.iter().all(|&c| c == 0) {
            out.push(cur.clone());
            return;
        }
        for t in 0..left.len() {
            if left[t] > 0 {
                left[t] -= 1;
                cur.push(t as u8);
                rec(left, cur, out);
                cur.pop();
                left[t] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut counts.to_vec(), &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug)]
struct Shape {
    ty: u8,
    kids: Vec<Shape>,
}

impl Shape {
    fn to_tree(&self) -> TypedTree {
        let mut types = Vec::new();
        let mut children = Vec::new();
        fn walk(s: &Shape, types: &mut Vec<u8>, children: &mut Vec<Vec<usize>>) -> usize {
            let me = types.len();
            types.push(s.ty);
            children.push(Vec::new());
            for k in &s.kids {
                let c = walk(k, types, children);
                children[me].push(c);
            }
            me
        }
        walk(self, &mut types, &mut children);
        TypedTree::from_children(&types, None, &children, 0).expect("well-formed shape")
    }
}

struct Enumerator<'a> {
    law: &'a OffspringLaw,
    words: Vec<Vec<(Vec<u8>, BigRational)>>,
    b: Option<&'a [BigRational]>,
    budget: usize,
}

impl<'a> Enumerator<'a> {
    fn new(law: &'a OffspringLaw, b: Option<&'a [BigRational]>, budget: usize) -> Result<Self, HarnessError> {
        let words = (0..law.k()).map(|t| word_table(law, t)).collect::<Result<_, _>>()?;
        Ok(Enumerator { law, words, b, budget })
    }

    /// Every height-`h` truncation of a type-`ty` tree with its probability.
    fn plain(&self, ty: u8, h: usize) -> Result<Vec<(Shape, BigRational)>, HarnessError> {
        if h == 0 {
            return Ok(vec![(Shape { ty, kids: Vec::new() }, BigRational::one())]);
        }
        let mut out = Vec::new();
        for (w, p) in &self.words[ty as usize] {
            let parts = w.iter().map(|&c| self.plain(c, h - 1)).collect::<Result<Vec<_>, _>>()?;
            self.product(ty, &parts, p.clone(), &mut out)?;
        }
        Ok(out)
    }

    /// Same, for a spine vertex: each word is weighted by the size-biased
    /// law and one child carries the spine.
    fn spine(&self, ty: u8, h: usize) -> Result<Vec<(Shape, BigRational)>, HarnessError> {
        if h == 0 {
            return Ok(vec![(Shape { ty, kids: Vec::new() }, BigRational::one())]);
        }
        let b = self.b.ok_or(HarnessError::NotExact)?;
        let mut out = Vec::new();
        for (w, p) in &self.words[ty as usize] {
            for k in 0..w.len() {
                let weight = p * &b[w[k] as usize] / &b[ty as usize];
                let parts = w
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| if i == k { self.spine(c, h - 1) } else { self.plain(c, h - 1) })
                    .collect::<Result<Vec<_>, _>>()?;
                self.product(ty, &parts, weight, &mut out)?;
            }
        }
        Ok(out)
    }

    fn product(&self, ty: u8, parts: &[Vec<(Shape, BigRational)>], p: BigRational, out: &mut Vec<(Shape, BigRational)>) -> Result<(), HarnessError> {
        let mut acc = vec![(Vec::<Shape>::new(), p)];
        for part in parts {
            let mut next = Vec::with_capacity(acc.len() * part.len());
            for (kids, q) in &acc {
                for (s, r) in part {
                    let mut k = kids.clone();
                    k.push(s.clone());
                    next.push((k, q * r));
                }
            }
            if next.len() > self.budget {
                return Err(HarnessError::Budget(self.budget));
            }
            acc = next;
        }
        out.extend(acc.into_iter().map(|(kids, q)| (Shape { ty, kids }, q)));
        if out.len() > self.budget {
            return Err(HarnessError::Budget(self.budget));
        }
        Ok(())
    }

    fn check_word(&self, word: &[u8]) -> Result<(), HarnessError> {
        if word.is_empty() {
            return Err(LawError::EmptyWord.into());
        }
        if word.iter().any(|&t| t as usize >= self.law.k()) {
            return Err(HarnessError::NotExact);
        }
        Ok(())
    }
}

/// Exact law of a forest truncation, keyed by the forest encoding.
pub type TruncationLaw = BTreeMap<Vec<u8>, (Forest, BigRational)>;

fn collect_forests(
    per_tree: Vec<Vec<(Shape, BigRational)>>,
    budget: usize,
    into: &mut TruncationLaw,
    scale: &BigRational,
) -> Result<(), HarnessError> {
    let mut acc: Vec<(Vec<TypedTree>, BigRational)> = vec![(Vec::new(), scale.clone())];
    for part in per_tree {
        let trees: Vec<(TypedTree, BigRational)> = part.into_iter().map(|(s, p)| (s.to_tree(), p)).collect();
        let mut next = Vec::new();
        for (ts, q) in &acc {
            for (t, r) in &trees {
                let mut v = ts.clone();
                v.push(t.clone());
                next.push((v, q * r));
            }
        }
        if next.len() > budget {
            return Err(HarnessError::Budget(budget));
        }
        acc = next;
    }
    for (ts, p) in acc {
        let f = Forest::new(ts);
        let key = f.encode();
        match into.get_mut(&key) {
            Some(e) => e.1 += p,
            None => {
                into.insert(key, (f, p));
            }
        }
    }
    Ok(())
}

/// Law of the height-`h` truncation of an ordinary forest with root word
/// `word`.
pub fn truncation_law(law: &OffspringLaw, word: &[u8], h: usize, budget: usize) -> Result<TruncationLaw, HarnessError> {
    let e = Enumerator::new(law, None, budget)?;
    e.check_word(word)?;
    let per_tree = word.iter().map(|&t| e.plain(t, h)).collect::<Result<Vec<_>, _>>()?;
    let mut out = TruncationLaw::new();
    collect_forests(per_tree, budget, &mut out, &BigRational::one())?;
    Ok(out)
}

/// Size-biased truncation law from the reweighting formula: each ordinary
/// truncation is weighted by the `b`-mass of its top generation over
/// `sum_i b_{w_i}`.
pub fn size_biased_law_by_weights(
    law: &OffspringLaw,
    b: &[BigRational],
    word: &[u8],
    h: usize,
    budget: usize,
) -> Result<TruncationLaw, HarnessError> {
    let z: BigRational = word.iter().map(|&t| b[t as usize].clone()).sum();
    let mut out = truncation_law(law, word, h, budget)?;
    for (f, p) in out.values_mut() {
        let top: BigRational = f
            .trees
            .iter()
            .flat_map(|t| (0..t.len()).filter(move |&v| t.depth(v) == h).map(move |v| t.type_of(v)))
            .map(|ty| b[ty as usize].clone())
            .sum();
        *p = &*p * top / &z;
    }
    out.retain(|_, (_, p)| !p.is_zero());
    Ok(out)
}

/// Size-biased truncation law built from the spine: the spine component is
/// chosen proportionally to `b`, spine vertices reproduce by the
/// size-biased law and pass the spine on proportionally to `b`.
pub fn size_biased_law_by_spine(law: &OffspringLaw, b: &[BigRational], word: &[u8], h: usize, budget: usize) -> Result<TruncationLaw, HarnessError> {
    let e = Enumerator::new(law, Some(b), budget)?;
    e.check_word(word)?;
    let z: BigRational = word.iter().map(|&t| b[t as usize].clone()).sum();
    let mut out = TruncationLaw::new();
    for j in 0..word.len() {
        let per_tree = word.iter().enumerate().map(|(i, &t)| if i == j { e.spine(t, h) } else { e.plain(t, h) }).collect::<Result<Vec<_>, _>>()?;
        collect_forests(per_tree, budget, &mut out, &(&b[word[j] as usize] / &z))?;
    }
    Ok(out)
}

pub fn law_to_f64(law: &TruncationLaw) -> HashMap<Vec<u8>, f64> {
    law.iter().map(|(k, (_, p))| (k.clone(), p.to_f64().unwrap_or(f64::NAN))).collect()
}

// ------------------------------------------------------------ experiments

/// Sizes rejected when off the lattice of the root word.
pub fn check_lattice(law: &OffspringLaw, gamma: &[u64], word: &[u8], n: u64) -> Result<(), HarnessError> {
    let p = periodicity::period(law, gamma)?;
    if !p.on_lattice(word, n) {
        return Err(HarnessError::OffLattice { n, d: p.d, alpha: p.forest_alpha(word) % p.d });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub size: u64,
    pub samples: usize,
    pub classes: usize,
    pub tv: f64,
}

/// TV distance between the height-`h` truncation of size-conditioned
/// forests and the exact size-biased truncation law, per size.
#[allow(clippy::too_many_arguments)]
pub fn tree_convergence(
    law: &OffspringLaw,
    gamma: &[u64],
    word: &[u8],
    h: usize,
    sizes: &[u64],
    samples: usize,
    seed: u64,
    attempt_cap: u64,
) -> Result<Vec<ConvergencePoint>, HarnessError> {
    let perron = law.perron_data()?;
    let b = perron.b_exact.as_ref().ok_or(HarnessError::NotExact)?;
    let exact = law_to_f64(&size_biased_law_by_spine(law, b, word, h, 1 << 22)?);
    let mut out = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        check_lattice(law, gamma, word, n)?;
        let s = ConditionedSampler::new(law, gamma, word, n, true)?;
        let codes = run_jobs(seed ^ ((i as u64) << 32), samples, 1000, |rng| Ok(s.sample(rng, attempt_cap)?.truncate(h).encode()))?;
        let hist = histogram(codes);
        out.push(ConvergencePoint { size: n, samples, classes: hist.len(), tv: tv_to_law(&hist, &exact)? });
    }
    Ok(out)
}

/// What the map experiments keep of one ball.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BallRecord {
    pub code: Vec<u8>,
    pub root_degree: usize,
    pub sign: Sign,
}

/// Radius-`k` balls of the infinite map, with the number of draws dropped
/// at the node cap.
pub fn infinite_balls(
    sol: &BoltzmannSolution,
    k: usize,
    samples: usize,
    seed: u64,
    policy: &WindowPolicy,
) -> Result<(Vec<BallRecord>, usize), HarnessError> {
    let s = InfiniteMapSampler::new(sol)?;
    let draws = run_jobs(seed, samples, 500, |rng| match s.sample_ball(rng, k, policy) {
        Ok(b) => Ok(Some(BallRecord { code: b.ball.map.canonical_code(), root_degree: b.ball.map.root_degree(), sign: b.sign })),
        Err(InfiniteError::ResourceCap(_)) => Ok(None),
        Err(e) => Err(e.into()),
    })?;
    let capped = draws.iter().filter(|d| d.is_none()).count();
    Ok((draws.into_iter().flatten().collect(), capped))
}

/// Radius-`k` balls of size-conditioned finite maps.
pub fn finite_balls(
    sol: &BoltzmannSolution,
    kind: SizeKind,
    n: u64,
    k: usize,
    samples: usize,
    seed: u64,
    attempt_cap: u64,
) -> Result<Vec<BallRecord>, HarnessError> {
    let f = FiniteMapSampler::new(sol, kind, n)?;
    run_jobs(seed, samples, 100, |rng| {
        let (m, sign, _) = f.sample(rng, attempt_cap)?;
        let ball = m.ball(k).map_err(InfiniteError::from)?;
        Ok(BallRecord { code: ball.map.canonical_code(), root_degree: ball.map.root_degree(), sign })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConvergence {
    pub size: u64,
    pub kind: SizeKind,
    pub radius: usize,
    pub finite_samples: usize,
    pub infinite_samples: usize,
    /// Infinite-map draws dropped at the node cap.
    pub infinite_capped: usize,
    /// Distinct ball classes seen on either side.
    pub classes: usize,
    pub tv: f64,
    /// TV between the two root degree laws.
    pub degree_tv: f64,
    /// TV between two halves of the infinite sample: the level of pure
    /// sampling noise at half the sample size.
    pub split_tv: f64,
    pub finite_null_fraction: f64,
    pub infinite_null_fraction: f64,
}

/// Ball law of conditioned finite maps against the infinite map.
#[allow(clippy::too_many_arguments)]
pub fn map_convergence(
    sol: &BoltzmannSolution,
    kind: SizeKind,
    n: u64,
    k: usize,
    finite_samples: usize,
    infinite_samples: usize,
    seed: u64,
    policy: &WindowPolicy,
    attempt_cap: u64,
) -> Result<MapConvergence, HarnessError> {
    let fin = finite_balls(sol, kind, n, k, finite_samples, seed, attempt_cap)?;
    let (inf, capped) = infinite_balls(sol, k, infinite_samples, splitmix64(seed), policy)?;
    let codes = |v: &[BallRecord]| histogram(v.iter().map(|b| b.code.clone()));
    let degrees = |v: &[BallRecord]| histogram(v.iter().map(|b| b.root_degree));
    let (hf, hi) = (codes(&fin), codes(&inf));
    let classes = sorted_keys([hf.keys(), hi.keys()]).len();
    let half = inf.len() / 2;
    let split_tv = if half > 0 { tv_distance(&codes(&inf[..half]), &codes(&inf[half..2 * half]))? } else { f64::NAN };
    let null_fraction = |v: &[BallRecord]| v.iter().filter(|b| b.sign == Sign::Null).count() as f64 / v.len().max(1) as f64;
    Ok(MapConvergence {
        size: n,
        kind,
        radius: k,
        finite_samples: fin.len(),
        infinite_samples: inf.len(),
        infinite_capped: capped,
        classes,
        tv: tv_distance(&hf, &hi)?,
        degree_tv: tv_distance(&degrees(&fin), &degrees(&inf))?,
        split_tv,
        finite_null_fraction: null_fraction(&fin),
        infinite_null_fraction: null_fraction(&inf),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeTail {
    pub samples: usize,
    /// Samples dropped at the node cap.
    pub capped: usize,
    pub survival: Vec<(f64, f64)>,
    pub fit: Option<TailFit>,
    pub mean_degree: f64,
}

/// Root degree survival of the infinite map with an exponential fit over
/// `lo..=hi`.
pub fn degree_tail(
    sol: &BoltzmannSolution,
    samples: usize,
    lo: usize,
    hi: usize,
    seed: u64,
    policy: &WindowPolicy,
) -> Result<DegreeTail, HarnessError> {
    let s = InfiniteMapSampler::new(sol)?;
    let draws = run_jobs(seed, samples, 1000, |rng| match s.sample_ball(rng, 1, policy) {
        Ok(b) => Ok(Some(b.ball.map.root_degree())),
        Err(InfiniteError::ResourceCap(_)) => Ok(None),
        Err(e) => Err(e.into()),
    })?;
    let capped = draws.iter().filter(|d| d.is_none()).count();
    let degrees: Vec<usize> = draws.into_iter().flatten().collect();
    let surv = survival(&degrees, lo, hi);
    let mean_degree = degrees.iter().sum::<usize>() as f64 / degrees.len().max(1) as f64;
    Ok(DegreeTail { samples: degrees.len(), capped, fit: tail_fit(&surv).ok(), survival: surv, mean_degree })
}

/// Monte Carlo counts in the tree cut at the first generation of type `j`
/// below the root: per-type vertex counts, root excluded.
pub fn cut_tree_counts<R: Rng + ?Sized>(rng: &mut R, sampler: &TreeSampler, root: u8, j: u8, cap: usize) -> Result<Vec<u64>, HarnessError> {
    let mut counts = vec![0u64; sampler.k()];
    let mut stack = vec![root];
    let mut word = Vec::new();
    let mut first = true;
    let mut seen = 0usize;
    while let Some(t) = stack.pop() {
        if !first {
            counts[t as usize] += 1;
            if t == j {
                continue;
            }
        }
        first = false;
        word.clear();
        sampler.draw_word(rng, t, &mut word);
        stack.extend_from_slice(&word);
        seen += word.len();
        if seen > cap {
            return Err(SampleError::Overflow(cap).into());
        }
    }
    Ok(counts)
}
