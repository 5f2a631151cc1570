//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use gwmaps::planar_maps::PlanarMap;

/// All fixed-point-free involutions of `0..n` (n even).
pub fn involutions(n: usize) -> Vec<Vec<u32>> {
    fn rec(a: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        let Some(i) = a.iter().position(|&x| x == u32::MAX) else {
            out.push(a.clone());
            return;
        };
        for j in i + 1..a.len() {
            if a[j] == u32::MAX {
                a[i] = j as u32;
                a[j] = i as u32;
                rec(a, out);
                a[i] = u32::MAX;
                a[j] = u32::MAX;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut vec![u32::MAX; n], &mut out);
    out
}

/// Codes of every positive pointed rooted quadrangulation with `n` faces,
/// by gluing `n` labelled squares in every possible way and keeping the
/// connected genus-0 gluings.
pub fn positive_pointed_quadrangulations(n: usize) -> HashSet<Vec<u8>> {
    let h = 4 * n;
    let face = |x: u32| 4 * (x / 4) + (x + 1) % 4;
    let mut codes = HashSet::new();
    for twin in involutions(h) {
        // faces are cycles of next o twin, so next = face o twin
        let next: Vec<u32> = (0..h).map(|x| face(twin[x])).collect();
        let Ok(base) = PlanarMap::from_rotation(twin, next, 0, None) else {
            continue;
        };
        for root in 0..h {
            for v in 0..base.n_vertices() {
                let m = base.clone().with_root(root).with_point(Some(v));
                if m.sign() == Some(1) {
                    codes.insert(m.canonical_code());
                }
            }
        }
    }
    codes
}
