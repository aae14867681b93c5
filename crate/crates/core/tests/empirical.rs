use std::sync::Arc;

use lions_core::empirical::{
    collapse, lln_experiment, random_labeling, substream, symmetrize_phi, ustat_all, ustat_distinct, ustat_distinct_unbiased, EmpiricalLift, Labeling,
    LlnConfig, Oracle,
};
use lions_core::forest::{LionsForest, Truncation};
use lions_core::metrics::{DualPair, RhoOptions};
use lions_core::pathlift::{Deterministic, PathSampler, PiecewiseLinearPath, RandomWalk};
use proptest::prelude::*;
use rand::{Rng, RngCore};

fn tr(gamma: f64, d: usize) -> Truncation {
    Truncation::new(gamma, 1.0, 1.0, d).unwrap()
}

fn tagged_two_hyper() -> LionsForest {
    LionsForest::new(vec![None, Some(0), Some(0)], vec![1, 1, 1], vec![0], vec![vec![1], vec![2]]).unwrap()
}

#[test]
fn collapse_probability_at_four_particles() {
    // distinct from the tag and from each other: (3/4)(2/4)
    let t = tagged_two_hyper();
    let p = 1.0 - 3.0 / 8.0;
    let trials = 20_000;
    let mut rng = substream(31, 0);
    let hits = (0..trials).filter(|_| !collapse(&t, &random_labeling(&t, 1, 4, &mut rng).unwrap()).is_identity(&t)).count();
    let phat = hits as f64 / trials as f64;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((phat - 0.625).abs() < 3.0 * sd, "{phat}");
}

#[test]
fn single_particle_merges_everything() {
    let t = tagged_two_hyper();
    let mut rng = substream(1, 0);
    let lab = random_labeling(&t, 1, 1, &mut rng).unwrap();
    assert_eq!(lab.assignment, vec![1, 1]);
    let c = collapse(&t, &lab);
    assert_eq!(c.partition.blocks(), &[vec![0, 1, 2]]);
    assert_eq!(c.indices, vec![1]);
}

#[test]
fn collapsed_blocks_follow_indices() {
    let t = tagged_two_hyper();
    let lab = Labeling::new(6, 2, vec![5, 2]).unwrap();
    let c = collapse(&t, &lab);
    assert_eq!(c.partition.blocks(), &[vec![0, 2], vec![1]]);
    assert_eq!(c.indices, vec![2, 5]);
    assert_eq!(c.index_of(2), 2);
    assert!(Labeling::new(3, 4, vec![]).is_err());
    assert!(Labeling::new(3, 1, vec![0]).is_err());
}

#[test]
fn collapsed_and_fed_evaluations_agree() {
    let trunc = tr(4.0, 2);
    let sampler = RandomWalk { segments: 4, dim: 2, scale: 1.0 };
    let mut rng = substream(2, 0);
    let pop: Vec<PiecewiseLinearPath> = (0..3).map(|_| sampler.sample(&mut rng)).collect();
    let lift = EmpiricalLift::new(pop, 3, trunc).unwrap();
    let trees = [
        tagged_two_hyper(),
        LionsForest::new(vec![None, Some(0), Some(1)], vec![1, 2, 1], vec![0], vec![vec![1], vec![2]]).unwrap(),
        LionsForest::new(vec![None, Some(0), Some(0), Some(1)], vec![2, 1, 1, 2], vec![0, 1], vec![vec![2], vec![3]]).unwrap(),
    ];
    for t in &trees {
        for _ in 0..30 {
            let (lab, smp) = lift.draw(t, &mut rng).unwrap();
            let a = lift.character(0.0, 0.8).unwrap().eval(t, &smp).unwrap();
            let b = lift.eval_collapsed(t, &lab, 0.0, 0.8).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-13);
        }
    }
    assert!(lift.eval_collapsed(&trees[0], &Labeling::new(4, 3, vec![1, 1]).unwrap(), 0.0, 1.0).is_err());
}

#[test]
fn constant_kernel_counts_tuples() {
    let one = |_: &[&f64]| 1.0;
    for n in 3..=7 {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        for l in 1..=3 {
            let falling: f64 = (0..l).map(|k| (n - k) as f64).product();
            let v = ustat_distinct(&one, &xs, l).unwrap();
            assert!((v - falling / (n as f64).powi(l as i32)).abs() < 1e-14);
            assert!((ustat_distinct_unbiased(&one, &xs, l).unwrap() - 1.0).abs() < 1e-14);
            assert!((ustat_all(&one, &xs, l).unwrap() - 1.0).abs() < 1e-14);
        }
    }
    assert!(ustat_all(&one, &[] as &[f64], 2).is_err());
}

#[test]
fn all_indices_add_the_diagonal() {
    let mut rng = substream(3, 0);
    let xs: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
    let f = |x: &[&f64]| x[0] * x[1];
    let n = xs.len() as f64;
    let s: f64 = xs.iter().sum();
    let s2: f64 = xs.iter().map(|x| x * x).sum();
    assert!((ustat_all(&f, &xs, 2).unwrap() - (s / n).powi(2)).abs() < 1e-14);
    assert!((ustat_distinct(&f, &xs, 2).unwrap() - (s * s - s2) / (n * n)).abs() < 1e-14);
    let g = |x: &[&f64]| x[0] + 2.0 * x[1] * x[2];
    let gap = ustat_all(&g, &xs, 3).unwrap() - ustat_distinct(&g, &xs, 3).unwrap();
    let brute: f64 = {
        let mut acc = 0.0;
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                for k in 0..xs.len() {
                    if i == j || j == k || i == k {
                        acc += g(&[&xs[i], &xs[j], &xs[k]]);
                    }
                }
            }
        }
        acc / n.powi(3)
    };
    assert!((gap - brute).abs() < 1e-13);
}

#[test]
fn centred_kernel_has_zero_conditional_mean() {
    let mut rng = substream(4, 0);
    let f: Arc<Oracle<f64>> = Arc::new(|x: &[&f64]| x[0] * x[1] + x[0]);
    let uniform = |r: &mut dyn RngCore| r.random::<f64>();
    let phi = symmetrize_phi(f, 2, &uniform, 1500, &mut rng).unwrap();
    // the symmetrisation averages both orders
    assert!((phi.symmetric(&[&0.2, &0.6]) - (0.12 + 0.4)).abs() < 1e-15);
    for given in [vec![], vec![0.3], vec![0.9]] {
        let (mean, se) = phi.centering_residual(&given, &uniform, 1500, &mut rng).unwrap();
        assert!(mean.abs() < 3.0 * se + 0.04, "{given:?}: {mean} ± {se}");
    }
    assert!(phi.centering_residual(&[0.1, 0.2], &uniform, 10, &mut rng).is_err());
    assert!(symmetrize_phi(Arc::new(|_: &[&f64]| 0.0) as Arc<Oracle<f64>>, 5, &uniform, 10, &mut rng).is_err());
}

#[test]
fn identical_particles_give_zero_discrepancy() {
    let trunc = tr(2.0, 1);
    let path = PiecewiseLinearPath::from_fn(4, 1, |t| vec![(3.0 * t).sin()]);
    let cfg = LlnConfig {
        trees: vec![tagged_two_hyper().restrict(&[0, 1]).0, LionsForest::generator(1)],
        tag: 1,
        n_grid: vec![2, 4],
        replications: 3,
        atoms: 4,
        pair: DualPair::new(1.0, 8.0, &trunc).unwrap(),
        rho: RhoOptions { grid_level: 2, ..Default::default() },
        trunc,
        seed: 5,
    };
    let table = lln_experiment(&Deterministic(path), &cfg).unwrap();
    for row in &table.rows {
        assert_eq!(row.estimate, 0.0);
        assert_eq!(row.identity_estimate, 0.0);
    }
    assert!(table.upper_bound);
    assert!(table.to_csv().starts_with("n,estimate,stderr"));
    let bad = LlnConfig { n_grid: vec![4, 2], ..cfg.clone() };
    assert!(lln_experiment(&Deterministic(PiecewiseLinearPath::linear(&[1.0])), &bad).is_err());
    let one = LlnConfig { replications: 1, ..cfg };
    assert!(lln_experiment(&Deterministic(PiecewiseLinearPath::linear(&[1.0])), &one).is_err());
}

#[test]
fn replications_are_reproducible() {
    let trunc = tr(2.0, 1);
    let atoms = vec![PiecewiseLinearPath::linear(&[1.0]), PiecewiseLinearPath::linear(&[-1.0])];
    let sampler = lions_core::pathlift::FiniteSupport { atoms };
    let cfg = LlnConfig {
        trees: vec![LionsForest::new(vec![None, Some(0)], vec![1, 1], vec![0], vec![vec![1]]).unwrap()],
        tag: 1,
        n_grid: vec![2, 8],
        replications: 6,
        atoms: 4,
        pair: DualPair::new(1.0, 8.0, &trunc).unwrap(),
        rho: RhoOptions { grid_level: 1, ..Default::default() },
        trunc,
        seed: 11,
    };
    let a = lln_experiment(&sampler, &cfg).unwrap();
    let b = lln_experiment(&sampler, &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.rows.iter().all(|r| r.estimate <= r.identity_estimate));
}

proptest! {
    #[test]
    fn unbiased_scaling(xs in prop::collection::vec(-2.0f64..2.0, 3..9)) {
        let f = |x: &[&f64]| x[0] * x[1];
        let n = xs.len() as f64;
        let d = ustat_distinct(&f, &xs, 2).unwrap();
        let u = ustat_distinct_unbiased(&f, &xs, 2).unwrap();
        prop_assert!((d - u * (n - 1.0) / n).abs() < 1e-12);
    }
}
