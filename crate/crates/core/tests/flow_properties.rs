use proptest::prelude::*;

use spectral_flow::flowcore::{
    concatenate, relative_index, reverse, segment_path, spectral_flow_crossings, spectral_flow_integral,
    spectral_flow_via_winding, CrossingOptions, ProjectionPair,
};
use spectral_flow::models::{make_crossing_path, make_random_path, random_projection};
use spectral_flow::normfun::{make_chi_p, make_chi_theta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn crossings(path: &spectral_flow::OperatorPath) -> i64 {
    spectral_flow_crossings(path, &CrossingOptions::default()).unwrap().integer
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integral_matches_crossings(dim in 1usize..7, degree in 1usize..4, seed in 0u64..10_000) {
        let s = make_random_path(dim, seed, degree);
        let oracle = crossings(&s.path);
        let chi = make_chi_theta(0.5).unwrap();
        let r = spectral_flow_integral(&s.path, &chi, 1e-8).unwrap();
        prop_assert_eq!(r.integer, oracle);
        prop_assert!(r.residual < 1e-4);
    }

    #[test]
    fn crossing_paths_hit_their_target(
        spec in proptest::collection::vec((0.05f64..0.95, prop_oneof![Just(-1i32), Just(1i32)]), 0..5)
    ) {
        let s = make_crossing_path(&spec).unwrap();
        let expected: i64 = spec.iter().map(|&(_, d)| d as i64).sum();
        prop_assert_eq!(s.expected_flow, Some(expected));
        prop_assert_eq!(crossings(&s.path), expected);
        let chi = make_chi_p(1.5).unwrap();
        prop_assert_eq!(spectral_flow_integral(&s.path, &chi, 1e-8).unwrap().integer, expected);
    }

    #[test]
    fn reverse_negates_and_loop_cancels(dim in 1usize..6, seed in 0u64..10_000) {
        let s = make_random_path(dim, seed, 2);
        let f = crossings(&s.path);
        prop_assert_eq!(crossings(&reverse(&s.path)), -f);
        prop_assert_eq!(crossings(&concatenate(&s.path, &reverse(&s.path)).unwrap()), 0);
    }

    #[test]
    fn index_equals_segment_flow(n in 1usize..8, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rp = (seed as usize) % (n + 1);
        let rq = (seed as usize / 7) % (n + 1);
        let pair = ProjectionPair::new(random_projection(n, rp, &mut rng), random_projection(n, rq, &mut rng)).unwrap();
        let ind = relative_index(&pair).unwrap();
        prop_assert_eq!(ind, rp as i64 - rq as i64);
        prop_assert_eq!(crossings(&segment_path(&pair)), ind);
    }
}

#[test]
fn winding_route_on_crossing_path() {
    let s = make_crossing_path(&[(0.2, 1), (0.5, 1), (0.9, -1)]).unwrap();
    let r = spectral_flow_via_winding(&s.path, None).unwrap();
    assert_eq!(r.integer, 1);
    assert!(r.residual < 1e-4);
}
