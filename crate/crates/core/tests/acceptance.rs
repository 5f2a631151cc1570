//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use num::{BigRational, Zero};

use gwmaps::boltzmann::{derive_mobile_law, preset, solve_admissibility, MapClass, Preset, WeightSequence};
use gwmaps::branching::{size_bias, OffspringLaw, TypeLaw};
use gwmaps::harness::{
    self, chi_square, chi_square_keyed, cut_tree_counts, histogram, law_to_f64, mean_se, run_jobs, size_biased_law_by_spine,
    size_biased_law_by_weights, tree_convergence,
};
use gwmaps::infinite_map::{InfiniteError, InfiniteMapSampler, Sign, WindowPolicy};
use gwmaps::periodicity::{map_periods, period, SizeKind};
use gwmaps::planar_maps::{bdfg_forward, enumerate_mobiles};
use gwmaps::sampler::{enumerate_displacements, reverse_displacement, sample_spine_window, SpineSampler, TreeSampler};
use gwmaps::series::{cyclic_check, hprime_check, hw_ratio};
use gwmaps::trees::mobile_type;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

const SEED: u64 = 20_240_611;

fn quadrangulation() -> gwmaps::boltzmann::BoltzmannSolution {
    solve_admissibility(&preset(Preset::Even(2)).unwrap()).unwrap()
}

fn uipm_criticality() -> Check {
    let sol = solve_admissibility(&preset(Preset::Uipm)?)?;
    let (dx, dy) = ((sol.x - 4.0 / 3.0).abs(), (sol.y - 3f64.sqrt().recip()).abs());
    let ok = sol.classification == MapClass::RegularCritical && dx <= 1e-8 && dy <= 1e-8;
    Ok((ok, format!("class {:?}, |Z+ - 4/3| = {dx:.1e}, |Z<> - 1/sqrt3| = {dy:.1e}", sol.classification)))
}

fn quadrangulation_tangency() -> Check {
    let q = preset(Preset::Even(2))?;
    let sol = solve_admissibility(&q)?;
    let dq = (q.weight(4) - 1.0 / 12.0).abs();
    let dx = (sol.x - 2.0).abs();
    let over = solve_admissibility(&WeightSequence::table(&[(4, 0.125)])?)?;
    let ok = dq <= 1e-8 && dx <= 1e-8 && over.classification == MapClass::NotAdmissible;
    Ok((ok, format!("|q4 - 1/12| = {dq:.1e}, |Z+ - 2| = {dx:.1e}, q4 = 1/8 -> {:?}", over.classification)))
}

fn size_bias_identity() -> Check {
    let law = OffspringLaw::toy2();
    let perron = law.perron_data()?;
    let b = perron.b_exact.clone().ok_or("no exact eigenvector")?;
    let word = [0u8, 1];
    let by_weights = size_biased_law_by_weights(&law, &b, &word, 2, 1 << 20)?;
    let by_spine = size_biased_law_by_spine(&law, &b, &word, 2, 1 << 20)?;
    let mut exact = by_weights.len() == by_spine.len();
    for (code, (_, p)) in &by_weights {
        exact &= by_spine.get(code).is_some_and(|(_, q)| (p - q).is_zero());
    }
    let total: BigRational = by_weights.values().map(|(_, p)| p.clone()).sum();
    exact &= total == BigRational::from_integer(1.into());

    let tree = TreeSampler::new(&law);
    let spine = SpineSampler::new(&size_bias(&law, &perron)?, &perron);
    let codes = run_jobs(SEED, 1_000_000, 10_000, |rng| Ok(sample_spine_window(rng, &tree, &spine, &word, 2, 1 << 20)?.forest.encode()))?;
    let chi = chi_square_keyed(&histogram(codes), &law_to_f64(&by_weights))?;
    Ok((
        exact && chi.p_value > 0.01,
        format!("{} forests, rational identity exact: {exact}, sampler chi2 p = {:.3} ({} classes)", by_weights.len(), chi.p_value, chi.classes),
    ))
}

fn cyclic_lemma() -> Check {
    let law = OffspringLaw::mono2();
    let mut worst = None;
    for n in 0..=50 {
        let (_, _, diff) = cyclic_check::<BigRational>(&law, n)?;
        if !diff.is_zero() {
            worst = Some(n);
        }
    }
    Ok((worst.is_none(), format!("n = 0..=50, first nonzero difference: {worst:?}")))
}

fn moment_identities() -> Check {
    let law = OffspringLaw::toy2();
    let perron = law.perron_data()?;
    let sampler = TreeSampler::new(&law);
    let k = law.k();
    let samples = 1_000_000;
    let mut ok = true;
    let mut detail = Vec::new();
    for j in 0..k {
        for r in 0..k {
            let counts = run_jobs(SEED + (j * k + r) as u64, samples, 10_000, |rng| cut_tree_counts(rng, &sampler, r as u8, j as u8, 1 << 30))?;
            // generation of type j from a type-r root
            let xs: Vec<f64> = counts.iter().map(|c| c[j] as f64).collect();
            let (m, se) = mean_se(&xs);
            let want = perron.b[r] / perron.b[j];
            let z = z_score(m, se, want);
            ok &= z <= 3.0;
            detail.push(format!("mu[{}][{}] {m:.4} vs {want:.4} ({z:.1} se)", r + 1, j + 1));
            if r == j {
                for i in (0..k).filter(|&i| i != j) {
                    let xs: Vec<f64> = counts.iter().map(|c| c[i] as f64).collect();
                    let (m, se) = mean_se(&xs);
                    let want = perron.a[i] / perron.a[j];
                    let z = z_score(m, se, want);
                    ok &= z <= 3.0;
                    detail.push(format!("xi[{}][{}] {m:.4} vs {want:.4} ({z:.1} se)", i + 1, j + 1));
                }
            }
        }
    }
    Ok((ok, detail.join("; ")))
}

/// Distance in standard errors; a degenerate sample must hit the target.
fn z_score(mean: f64, se: f64, want: f64) -> f64 {
    let gap = (mean - want).abs();
    if se > 0.0 {
        gap / se
    } else if gap <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn forest_ratio() -> Check {
    let r = hw_ratio(&OffspringLaw::mono2(), &[1], &[0, 0], 2000)?;
    let rel = (r / 2.0 - 1.0).abs();
    Ok((rel <= 0.02, format!("ratio {r:.5}, relative error {rel:.2e}")))
}

fn local_limit_constant() -> Check {
    let law = OffspringLaw::mono2();
    let mut errs = Vec::new();
    for n in [500, 1000, 2000, 4000] {
        let (measured, predicted) = hprime_check(&law, &[1], &[0], n)?;
        errs.push((measured / predicted - 1.0).abs());
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let last = *errs.last().unwrap();
    Ok((last <= 0.03 && decreasing, format!("relative errors {errs:.3?}")))
}

fn bijection_counts() -> Check {
    let q = WeightSequence::table(&[(4, 1.0)])?;
    let mobiles = enumerate_mobiles(&q, 3, 1_000_000)?;
    let mut ok = true;
    let mut counts = Vec::new();
    let mut by_faces: BTreeMap<usize, HashSet<Vec<u8>>> = BTreeMap::new();
    for m in &mobiles {
        let map = bdfg_forward(m)?;
        let s = map.stats();
        let ones = m.count_type(mobile_type::VERTEX);
        let faces = m.count_type(mobile_type::FACE) + m.count_type(mobile_type::FLAG_FACE);
        if faces == 0 {
            // the vertex map: one vertex, no edge, one face
            ok &= (s.vertices, s.edges, s.faces) == (1, 0, 1);
            continue;
        }
        ok &= s.vertices == ones + 1 && s.faces == faces && s.edges + 1 == ones + faces;
        ok &= s.vertices + s.faces == s.edges + 2;
        ok &= by_faces.entry(faces).or_default().insert(map.canonical_code());
    }
    for n in 1..=3 {
        let got = by_faces.get(&n).cloned().unwrap_or_default();
        let oracle = common::positive_pointed_quadrangulations(n);
        ok &= got == oracle;
        counts.push((n, got.len(), oracle.len()));
    }
    Ok((ok, format!("{} mobiles; (faces, maps, oracle) = {counts:?}", mobiles.len())))
}

fn tree_local_convergence() -> Check {
    // three type-1 roots: on the odd lattice for gamma = (1, 0)
    let pts = tree_convergence(&OffspringLaw::toy2(), &[1, 0], &[0, 0, 0], 2, &[11, 51, 201], 100_000, SEED, 1 << 40)?;
    let tvs: Vec<f64> = pts.iter().map(|p| p.tv).collect();
    let ok = tvs.windows(2).all(|w| w[1] < w[0]) && tvs[2] <= 0.05;
    Ok((ok, format!("TV at 11/51/201: {tvs:.4?}")))
}

fn map_local_convergence() -> Check {
    let sol = quadrangulation();
    let policy = WindowPolicy::default();
    let c = harness::map_convergence(&sol, SizeKind::Faces, 200, 1, 10_000, 10_000, SEED, &policy, 1 << 40)?;
    let s = InfiniteMapSampler::new(&sol)?;
    let audited = run_jobs(SEED + 1, 100, 10, |rng| match s.sample_ball(rng, 1, &policy) {
        Ok(b) => Ok(b.ball.check().is_ok()),
        Err(InfiniteError::Unstable(_)) | Err(InfiniteError::ResourceCap(_)) => Ok(false),
        Err(e) => Err(e.into()),
    })?;
    let passed = audited.iter().filter(|&&x| x).count();
    Ok((
        c.tv <= 0.1 && passed == 100,
        format!(
            "TV {:.4} over {} classes (split-half noise {:.4}, degree TV {:.4}, {} capped); audit {passed}/100",
            c.tv, c.classes, c.split_tv, c.degree_tv, c.infinite_capped
        ),
    ))
}

fn spine_geometry() -> Check {
    let sol = quadrangulation();
    let s = InfiniteMapSampler::new(&sol)?;
    let pairs = run_jobs(SEED, 100_000, 1000, |rng| {
        let mut mob = s.mobile(rng, Sign::Positive, 1 << 20)?;
        mob.grow_spine(rng, 4)?;
        let lvl = mob.spine_levels().into_iter().skip(1).find(|l| l.ty == mobile_type::VERTEX).ok_or(InfiniteError::NotCritical)?;
        Ok((lvl.spine_index as u64, (lvl.word.len() - 1 - lvl.spine_index) as u64))
    })?;
    let ratio = 1.0 - 1.0 / sol.x;
    let top = pairs.iter().map(|&(l, r)| l.max(r)).max().unwrap_or(0) as usize;
    let mut probs: Vec<f64> = (0..=top).map(|k| (1.0 - ratio) * ratio.powi(k as i32)).collect();
    *probs.last_mut().unwrap() = ratio.powi(top as i32);
    let fit = |xs: Vec<u64>| {
        let mut obs = vec![0u64; top + 1];
        for x in xs {
            obs[x as usize] += 1;
        }
        chi_square(&obs, &probs)
    };
    let left = fit(pairs.iter().map(|p| p.0).collect())?;
    let right = fit(pairs.iter().map(|p| p.1).collect())?;
    let (l, r): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(a, b)| (a as f64, b as f64)).unzip();
    let corr = correlation(&l, &r);
    Ok((
        left.p_value > 0.01 && right.p_value > 0.01 && corr.abs() < 0.02,
        format!("chi2 p left {:.3}, right {:.3}; corr {corr:.4}", left.p_value, right.p_value),
    ))
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn degree_tail() -> Check {
    let t = harness::degree_tail(&quadrangulation(), 100_000, 5, 25, SEED, &WindowPolicy::default())?;
    let fit = t.fit.ok_or("no tail fit")?;
    Ok((
        fit.slope < 0.0 && fit.r2 >= 0.95,
        format!("slope {:.4}, R2 {:.4} over {} points, {} samples ({} capped)", fit.slope, fit.r2, fit.points, t.samples, t.capped),
    ))
}

fn words_of(counts: &[u32], types: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let total: u32 = counts.iter().sum();
    for _ in 0..total {
        out = out.into_iter().flat_map(|w: Vec<u8>| types.iter().map(move |&t| [w.clone(), vec![t]].concat())).collect();
    }
    out.retain(|w| (0..types.len()).all(|i| w.iter().filter(|&&t| t == types[i]).count() == counts[i] as usize));
    out
}

fn reversal_symmetry() -> Check {
    let mut checked = 0usize;
    let mut ok = true;
    for which in [Preset::Even(2), Preset::Uipm] {
        let mobile = derive_mobile_law(&solve_admissibility(&preset(which)?)?)?;
        for (i, &parent) in mobile.mobile_types.iter().enumerate() {
            if parent != mobile_type::FACE && parent != mobile_type::FLAG_FACE {
                continue;
            }
            let TypeLaw::Table(rows) = mobile.law.type_law(i) else { continue };
            for row in rows.iter().filter(|o| o.counts.iter().sum::<u32>() <= 3) {
                for w in words_of(&row.counts, &mobile.mobile_types) {
                    let d: HashSet<Vec<i64>> = enumerate_displacements(parent, &w).into_iter().collect();
                    let rev: Vec<u8> = w.iter().rev().copied().collect();
                    let target: HashSet<Vec<i64>> = enumerate_displacements(parent, &rev).into_iter().collect();
                    let image: HashSet<Vec<i64>> = d.iter().map(|y| reverse_displacement(y)).collect();
                    ok &= image.len() == d.len() && image == target;
                    checked += 1;
                }
            }
        }
    }
    Ok((ok && checked > 0, format!("{checked} (type, word) pairs")))
}

fn periodicity() -> Check {
    let p = period(&OffspringLaw::mono2(), &[1])?;
    let mut ok = p.d == 2 && p.alpha == vec![1];
    let mut bad = Vec::new();
    for which in [Preset::Uipm, Preset::Even(2), Preset::Even(3), Preset::Odd(1), Preset::Odd(2)] {
        let q = preset(which)?;
        let mobile = derive_mobile_law(&solve_admissibility(&q)?)?;
        let maps = map_periods(&q)?;
        for kind in SizeKind::ALL {
            let per = period(&mobile.law, &mobile.gamma(kind))?;
            let (d, _) = maps.get(kind);
            let one = mobile.index_of(mobile_type::VERTEX).ok_or("no vertex type")?;
            let gamma_one = kind.mobile_gamma()[0] % per.d;
            if per.d != d || per.alpha[one] != gamma_one {
                ok = false;
                bad.push(format!("{} {kind:?}", which.name()));
            }
        }
    }
    Ok((ok, format!("mono2 (d, alpha) = ({}, {:?}); mismatches: {bad:?}", p.d, p.alpha)))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 14] = [
        ("uipm criticality", Duration::from_secs(1), uipm_criticality),
        ("quadrangulation tangency", Duration::from_secs(1), quadrangulation_tangency),
        ("size-bias identity", Duration::from_secs(120), size_bias_identity),
        ("cyclic lemma", Duration::from_secs(10), cyclic_lemma),
        ("moment identities", Duration::from_secs(120), moment_identities),
        ("forest ratio", Duration::from_secs(30), forest_ratio),
        ("local limit constant", Duration::from_secs(60), local_limit_constant),
        ("bijection and counts", Duration::from_secs(120), bijection_counts),
        ("tree local convergence", Duration::from_secs(600), tree_local_convergence),
        ("map local convergence", Duration::from_secs(1200), map_local_convergence),
        ("spine geometry", Duration::from_secs(120), spine_geometry),
        ("degree tail", Duration::from_secs(600), degree_tail),
        ("reversal symmetry", Duration::from_secs(10), reversal_symmetry),
        ("periodicity", Duration::from_secs(60), periodicity),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((ok, d)) => (ok && took <= *limit, d),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {id:>2} ({name}): {detail} [{:.1}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
