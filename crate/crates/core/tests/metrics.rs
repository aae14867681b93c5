mod common;

use std::sync::Arc;

use lions_core::empirical::substream;
use lions_core::forest::{enumerate_forests, LionsForest, Truncation};
use lions_core::hopf::{antipode, convolve, Character, Side};
use lions_core::metrics::{check_dual_conditions, dyadic_pairs, k_constant, rho_estimate, AtomicLift, DualPair, NormEstimator, RhoOptions};
use lions_core::pathlift::{lift_character, PiecewiseLinearPath, RandomWalk};
use rand::seq::SliceRandom;
use rand::Rng;

fn tr(gamma: f64, d: usize) -> Truncation {
    Truncation::new(gamma, 1.0, 1.0, d).unwrap()
}

fn hyper_leaf() -> LionsForest {
    LionsForest::new(vec![None], vec![1], vec![], vec![vec![0]]).unwrap()
}

#[test]
fn exponents_of_the_default_pair() {
    let t = tr(4.0, 2);
    let p = DualPair::new(1.0, 8.0, &t).unwrap();
    let two = LionsForest::new(vec![None, Some(0)], vec![1, 2], vec![0], vec![vec![1]]).unwrap();
    assert_eq!(p.q(&two), 4.0);
    assert!((p.p(&two) - 8.0 / 6.0).abs() < 1e-15);
    for n in 1..=4 {
        assert!((1.0 / p.p1 - 1.0 / p.p_nodes(n) - 1.0 / p.q_nodes(n)).abs() < 1e-15);
    }
    assert!(p.q(&LionsForest::unit()).is_infinite());
}

#[test]
fn dual_conditions_over_the_full_table() {
    for (gamma, d) in [(3.0, 1), (4.0, 2)] {
        let t = tr(gamma, d);
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        let r = check_dual_conditions(&p, &t);
        assert!(r.passed, "{:?}", r.violations);
        assert_eq!(r.forests, enumerate_forests(&t).len());
        assert_eq!(r.equalities, r.triples);
        assert!(k_constant(&p, &t) >= 2.0);
    }
}

#[test]
fn norms_of_the_counit_vanish() {
    let t = tr(3.0, 1);
    let p = DualPair::new(1.0, 8.0, &t).unwrap();
    let est = NormEstimator::new(t, p, &RandomWalk { segments: 4, dim: 1, scale: 1.0 }, 16, 2).unwrap();
    let e = Character::counit(t);
    for k in 1..=est.max_level() {
        assert_eq!(est.bnorm(&e, k).unwrap().value, 0.0);
    }
    assert_eq!(est.cc_norm(&e).unwrap().value, 0.0);
    assert_eq!(est.triple_norm(&e).unwrap().value, 0.0);
    let f = lift_character(t, 0.0, 1.0).unwrap();
    // k-th roots of rounding-level coefficients
    let d = est.cc_dist(&f, &f).unwrap().value;
    assert!(d < 1e-4, "{d}");
    assert!(est.bnorm(&e, 0).is_err());
    assert!(NormEstimator::new(t, p, &RandomWalk { segments: 4, dim: 1, scale: 1.0 }, 1, 2).is_err());
}

#[test]
fn cc_norm_is_symmetric_and_subadditive() {
    let t = tr(3.0, 2);
    let p = DualPair::new(1.0, 8.0, &t).unwrap();
    let est = NormEstimator::new(t, p, &RandomWalk { segments: 4, dim: 2, scale: 1.0 }, 64, 3).unwrap();
    let mut rng = substream(3, 1);
    for _ in 0..4 {
        let (a, b, c) = (rng.random_range(0.0..0.3), rng.random_range(0.3..0.6), rng.random_range(0.6..1.0));
        let f = lift_character(t, a, b).unwrap();
        let g = lift_character(t, b, c).unwrap();
        let nf = est.cc_norm(&f).unwrap();
        let ninv = est.cc_norm(&antipode(&f, Side::Left)).unwrap();
        assert!((nf.value - ninv.value).abs() <= 1e-9 * nf.value.max(1.0));
        let ng = est.cc_norm(&g).unwrap();
        let nfg = est.cc_norm(&convolve(&f, &g).unwrap()).unwrap();
        let slack = 3.0 * (nf.stderr.powi(2) + ng.stderr.powi(2) + nfg.stderr.powi(2)).sqrt();
        assert!(nfg.value <= nf.value + ng.value + slack, "{nfg:?} {nf:?} {ng:?}");
        let r = est.equivalence_check(&f).unwrap();
        assert!(r.within, "{r:?}");
    }
}

fn scalar_atoms(xs: &[f64]) -> Vec<Arc<PiecewiseLinearPath>> {
    xs.iter().map(|&x| Arc::new(PiecewiseLinearPath::linear(&[x]))).collect()
}

#[test]
fn single_tree_rho_matches_assignment_oracle() {
    let t = tr(2.0, 1);
    let pair = DualPair::new(1.0, 8.0, &t).unwrap();
    let zero = Arc::new(PiecewiseLinearPath::linear(&[0.0]));
    let mut rng = substream(13, 0);
    for m in [3, 6, 9, 10] {
        let fx: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gx: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = AtomicLift::geometric(t, zero.clone(), scalar_atoms(&fx));
        let g = AtomicLift::geometric(t, zero.clone(), scalar_atoms(&gx));
        let q = 8.0;
        let cost: Vec<Vec<f64>> = fx.iter().map(|a| gx.iter().map(|b| (a - b).abs().powf(q)).collect()).collect();
        let (best, _) = common::hungarian(&cost);
        let oracle = (best / m as f64).powf(1.0 / q);
        let forests = [hyper_leaf()];
        for exhaustive_max in [10, 0] {
            let opts = RhoOptions { grid_level: 0, exhaustive_max, ..Default::default() };
            let r = rho_estimate(&f, &g, &forests, &pair, &opts).unwrap();
            assert_eq!(r.exhaustive, exhaustive_max >= m);
            assert!((r.value - oracle).abs() <= 1e-12 * oracle.max(1e-300), "M = {m}: {} vs {oracle}", r.value);
        }
    }
}

#[test]
fn permuted_copies_are_at_distance_zero() {
    let t = tr(2.0, 1);
    let pair = DualPair::new(1.0, 8.0, &t).unwrap();
    let forests = enumerate_forests(&t);
    let mut rng = substream(14, 0);
    let sampler = RandomWalk { segments: 2, dim: 1, scale: 1.0 };
    for m in [2, 5, 8] {
        let atoms: Vec<Arc<PiecewiseLinearPath>> = (0..m).map(|_| Arc::new(lions_core::pathlift::PathSampler::sample(&sampler, &mut rng))).collect();
        let mut shuffled = atoms.clone();
        shuffled.shuffle(&mut rng);
        let zero = Arc::new(PiecewiseLinearPath::linear(&[0.5]));
        let f = AtomicLift::geometric(t, zero.clone(), atoms);
        let g = AtomicLift::geometric(t, zero, shuffled);
        let r = rho_estimate(&f, &g, &forests, &pair, &RhoOptions { grid_level: 1, ..Default::default() }).unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.value, 0.0);
    }
}

#[test]
fn rho_input_errors() {
    let t = tr(2.0, 1);
    let pair = DualPair::new(1.0, 8.0, &t).unwrap();
    let zero = Arc::new(PiecewiseLinearPath::linear(&[0.0]));
    let f = AtomicLift::geometric(t, zero.clone(), scalar_atoms(&[1.0, 2.0]));
    let g = AtomicLift::geometric(t, zero.clone(), scalar_atoms(&[1.0]));
    assert!(rho_estimate(&f, &g, &[hyper_leaf()], &pair, &RhoOptions::default()).is_err());
    let e = AtomicLift::geometric(t, zero, vec![]);
    assert!(rho_estimate(&e, &e, &[hyper_leaf()], &pair, &RhoOptions::default()).is_err());
    assert_eq!(dyadic_pairs(1), vec![(0.0, 0.5), (0.0, 1.0), (0.5, 1.0)]);
}
