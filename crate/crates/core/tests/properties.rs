use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gwmaps::boltzmann::{preset, solve_admissibility, Preset};
use gwmaps::branching::OffspringLaw;
use gwmaps::harness::tv_distance;
use gwmaps::infinite_map::FiniteMapSampler;
use gwmaps::periodicity::{size, SizeKind};
use gwmaps::sampler::{enumerate_displacements, mirror, reverse_displacement, sample_displacement, ConditionedSampler, TreeSampler};
use gwmaps::trees::{is_displacement, mobile_type, validate_mobile, Forest, TypedTree};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_encoding_round_trips(seed in any::<u64>(), root in 0u8..2, h in 0usize..6) {
        let s = TreeSampler::new(&OffspringLaw::toy2());
        let t = s.sample_tree(&mut rng(seed), root, 5_000);
        prop_assume!(t.is_ok());
        let t = t.unwrap();
        prop_assert_eq!(TypedTree::decode(&t.encode()).unwrap(), t.clone());
        let cut = t.truncate(h);
        prop_assert!(cut.height() <= h);
        prop_assert_eq!(cut.truncate(h), cut.clone());
        let f = Forest::new(vec![t, cut]);
        prop_assert_eq!(Forest::decode(&f.encode()).unwrap(), f);
    }

    #[test]
    fn conditioned_trees_have_the_target_size(seed in any::<u64>(), half in 0u64..20) {
        let law = OffspringLaw::toy2();
        let n = 2 * half + 1;
        let s = ConditionedSampler::new(&law, &[1, 0], &[0], n, true).unwrap();
        let f = s.sample(&mut rng(seed), 1 << 30).unwrap();
        prop_assert_eq!(size(&f.trees[0], &[1, 0]), n);
    }

    #[test]
    fn displacement_reversal_is_an_involution_between_sets(
        word in prop::collection::vec(prop::sample::select(vec![mobile_type::VERTEX, mobile_type::FLAG]), 1..5),
        face in prop::bool::ANY,
        seed in any::<u64>(),
    ) {
        let parent = if face { mobile_type::FACE } else { mobile_type::FLAG_FACE };
        let rev: Vec<u8> = word.iter().rev().copied().collect();
        for y in enumerate_displacements(parent, &word) {
            let r = reverse_displacement(&y);
            prop_assert!(is_displacement(parent, &rev, &r));
            prop_assert_eq!(reverse_displacement(&r), y);
        }
        let y = sample_displacement(&mut rng(seed), parent, &word);
        prop_assert!(is_displacement(parent, &word, &y));
    }

    #[test]
    fn histogram_distance_is_a_bounded_symmetric_metric(
        a in prop::collection::hash_map(0u8..12, 1u64..50, 1..8),
        b in prop::collection::hash_map(0u8..12, 1u64..50, 1..8),
    ) {
        let (a, b): (HashMap<u8, u64>, HashMap<u8, u64>) = (a, b);
        let ab = tv_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - tv_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(tv_distance(&a, &a).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_quadrangulations_are_planar_and_canonically_coded(seed in any::<u64>(), faces in 1u64..7, k in 1usize..3) {
        let sol = solve_admissibility(&preset(Preset::Even(2)).unwrap()).unwrap();
        let f = FiniteMapSampler::new(&sol, SizeKind::Faces, faces).unwrap();
        let mut r = rng(seed);
        let (map, _, mobile) = f.sample(&mut r, 1 << 30).unwrap();
        prop_assert!(map.validate().is_ok());
        prop_assert!(validate_mobile(mobile.tree()).is_ok());
        prop_assert_eq!(mirror(&mirror(&mobile)), mobile);
        let s = map.stats();
        prop_assert_eq!(s.faces as u64, faces);
        prop_assert_eq!(s.vertices + s.faces, s.edges + 2);
        prop_assert!(s.face_degrees.iter().all(|&d| d == 4));

        let mut perm: Vec<usize> = (0..map.half_edges()).collect();
        perm.shuffle(&mut r);
        prop_assert_eq!(map.relabeled(&perm).canonical_code(), map.canonical_code());

        let ball = map.ball(k).unwrap();
        prop_assert!(ball.check().is_ok());
        prop_assert!(ball.map.n_vertices() <= map.n_vertices());
    }
}
