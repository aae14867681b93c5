mod common;

use lions_core::empirical::substream;
use lions_core::forest::{enumerate_forests, LionsForest, Slot, Truncation};
use lions_core::pathlift::{
    chen_check, characteristic_check, dual_edges, holder_diagnostic, lift_character, tree_integral, LevyCiesielski, PathSampler, PiecewiseLinearPath,
    RandomWalk, SampleAssignment,
};
use proptest::prelude::*;
use rand::Rng;

fn tr(gamma: f64, d: usize) -> Truncation {
    Truncation::new(gamma, 1.0, 1.0, d).unwrap()
}

fn coefficient(t: &LionsForest, smp: &SampleAssignment, s: f64, u: f64) -> f64 {
    let idx: Vec<usize> = t.labels().iter().map(|l| l - 1).collect();
    tree_integral(t, smp, s, u).unwrap().get(&idx)
}

/// Nested quadrature over pieces on which every path is linear.
struct Quadrature<'a> {
    t: &'a LionsForest,
    paths: Vec<&'a PiecewiseLinearPath>,
    breaks: Vec<f64>,
    s: f64,
}

impl Quadrature<'_> {
    fn node(&self, v: usize, r: f64) -> f64 {
        let mut cuts = vec![self.s];
        cuts.extend(self.breaks.iter().copied().filter(|&x| x > self.s && x < r));
        cuts.push(r);
        let children: Vec<usize> = (0..self.t.len()).filter(|&c| self.t.parent(c) == Some(v)).collect();
        let i = self.t.labels()[v] - 1;
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let slope = (self.paths[v].coord(w[1], i) - self.paths[v].coord(w[0], i)) / (w[1] - w[0]);
                slope * common::gauss(|x| children.iter().map(|&c| self.node(c, x)).product(), w[0], w[1], 1)
            })
            .sum()
    }

    fn forest(&self, u: f64) -> f64 {
        (0..self.t.len()).filter(|&v| self.t.parent(v).is_none()).map(|r| self.node(r, u)).product()
    }
}

#[test]
fn linear_path_closed_forms() {
    let v = [0.5, -2.0];
    let x = PiecewiseLinearPath::linear(&v);
    let smp = |t: &LionsForest| SampleAssignment::new(x.clone(), vec![x.clone(); t.hyperedges().len()]);
    for i in 1..=2 {
        let g = LionsForest::generator(i);
        assert!((coefficient(&g, &smp(&g), 0.3, 0.9) - 0.6 * v[i - 1]).abs() < 1e-15);
        let t = LionsForest::new(vec![None], vec![i], vec![], vec![vec![0]]).unwrap();
        assert!((coefficient(&t, &smp(&t), 0.0, 0.25) - 0.25 * v[i - 1]).abs() < 1e-15);
    }
    let ladder = LionsForest::new(vec![None, Some(0)], vec![1, 2], vec![0], vec![vec![1]]).unwrap();
    let got = coefficient(&ladder, &smp(&ladder), 0.1, 0.7);
    assert!((got - v[0] * v[1] * 0.36 / 2.0).abs() < 1e-15);
    // two independent roots multiply
    let pair = LionsForest::new(vec![None, None], vec![1, 2], vec![0], vec![vec![1]]).unwrap();
    assert!((coefficient(&pair, &smp(&pair), 0.0, 1.0) - v[0] * v[1]).abs() < 1e-15);
    let constant = PiecewiseLinearPath::constant(&[1.0, 2.0]);
    let g = LionsForest::generator(2);
    let c = SampleAssignment::new(constant, vec![]);
    assert_eq!(coefficient(&g, &c, 0.0, 1.0), 0.0);
}

#[test]
fn integrals_match_nested_quadrature() {
    let sampler = RandomWalk { segments: 4, dim: 2, scale: 1.0 };
    let breaks: Vec<f64> = (1..4).map(|k| k as f64 / 4.0).collect();
    let mut rng = substream(21, 0);
    for t in enumerate_forests(&tr(4.0, 2)).iter().filter(|t| !t.is_empty()) {
        let smp = SampleAssignment::draw(t, &sampler, &mut rng);
        let (s, u) = (rng.random_range(0.0..0.5), rng.random_range(0.5..1.0));
        let q = Quadrature { t, paths: t.slots().iter().map(|&sl| smp.path(sl).as_ref()).collect(), breaks: breaks.clone(), s };
        let oracle = q.forest(u);
        let got = coefficient(t, &smp, s, u);
        assert!((got - oracle).abs() < 1e-11 * (1.0 + oracle.abs()), "{t:?}: {got} vs {oracle}");
    }
}

#[test]
fn cherry_with_three_paths() {
    // root driven by h0, leaves by two separate hyperedges
    let t = LionsForest::new(vec![None, Some(0), Some(0)], vec![1, 1, 2], vec![0], vec![vec![1], vec![2]]).unwrap();
    let mut rng = substream(5, 0);
    let sampler = RandomWalk { segments: 8, dim: 2, scale: 1.0 };
    let smp = SampleAssignment::draw(&t, &sampler, &mut rng);
    let (a, b, c) = (smp.hyper[0].clone(), smp.hyper[1].clone(), smp.zero.clone());
    let (s, u) = (0.25, 1.0);
    let oracle = common::gauss(
        |r| {
            let h = 1e-7;
            let dc = (c.coord(r + h, 0) - c.coord(r - h, 0)) / (2.0 * h);
            (a.coord(r, 0) - a.coord(s, 0)) * (b.coord(r, 1) - b.coord(s, 1)) * dc
        },
        s,
        u,
        6,
    );
    let got = coefficient(&t, &smp, s, u);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn chen_relation_for_random_triples() {
    let trunc = tr(4.0, 2);
    let forests = enumerate_forests(&trunc);
    let sampler = RandomWalk { segments: 6, dim: 2, scale: 1.0 };
    let mut rng = substream(7, 0);
    for _ in 0..5 {
        let mut ts = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for t in forests.iter().filter(|t| t.len() <= 3) {
            let smp = SampleAssignment::draw(t, &sampler, &mut rng);
            assert!(chen_check(trunc, t, &smp, ts[0], ts[1], ts[2]).unwrap() < 1e-12);
        }
    }
    let t = LionsForest::generator(1);
    let smp = SampleAssignment::draw(&t, &sampler, &mut rng);
    assert!(chen_check(trunc, &t, &smp, 0.5, 0.2, 0.9).is_err());
}

#[test]
fn shared_samples_equal_merged_trees() {
    let trunc = tr(4.0, 2);
    let f = lift_character(trunc, 0.0, 1.0).unwrap();
    let sampler = RandomWalk { segments: 3, dim: 2, scale: 1.0 };
    let mut rng = substream(8, 0);
    let mut edges = 0;
    for t in enumerate_forests(&trunc).iter().filter(|t| t.is_tree()) {
        for (a, b) in dual_edges(t) {
            let smp = SampleAssignment::draw(t, &sampler, &mut rng);
            assert_eq!(characteristic_check(&f, t, a, b, &smp).unwrap(), 0.0, "{t:?} {a:?} {b:?}");
            edges += 1;
        }
    }
    assert!(edges > 0);
    let leaf = LionsForest::new(vec![None, Some(0)], vec![1, 1], vec![0], vec![vec![1]]).unwrap();
    assert_eq!(dual_edges(&leaf), vec![(Slot::Zero, Slot::Hyper(0))]);
}

#[test]
fn brownian_holder_slopes() {
    let sampler = LevyCiesielski { level: 9, dim: 1 };
    let mut rng = substream(9, 0);
    let lift = |s: f64, t: f64| lift_character(tr(4.0, 1), s, t);
    let one = LionsForest::generator(1);
    let r = holder_diagnostic(&lift, &one, &sampler, 2.0, 400, 5, &mut rng).unwrap();
    assert!((r.slope - 0.5).abs() < 0.1, "{r:?}");
    let ladder = LionsForest::new(vec![None, Some(0)], vec![1, 1], vec![0], vec![vec![1]]).unwrap();
    let r = holder_diagnostic(&lift, &ladder, &sampler, 2.0, 400, 5, &mut rng).unwrap();
    assert!((r.slope - 1.0).abs() < 0.15, "{r:?}");
    assert!(holder_diagnostic(&lift, &one, &sampler, 2.0, 1, 5, &mut rng).is_err());
}

#[test]
fn path_validation() {
    assert!(PiecewiseLinearPath::new(vec![0.0, 0.5, 0.5, 1.0], vec![vec![0.0]; 4]).is_err());
    assert!(PiecewiseLinearPath::new(vec![0.0, 0.9], vec![vec![0.0]; 2]).is_err());
    assert!(PiecewiseLinearPath::new(vec![0.0, 1.0], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    let json = r#"{"times":[0.0,1.0],"values":[[0.0],[2.0]]}"#;
    let p: PiecewiseLinearPath = serde_json::from_str(json).unwrap();
    assert_eq!(p.coord(0.25, 0), 0.5);
    assert!(serde_json::from_str::<PiecewiseLinearPath>(r#"{"times":[1.0,0.0],"values":[[0.0],[2.0]]}"#).is_err());
    let big = LionsForest::new(vec![None], vec![3], vec![], vec![vec![0]]).unwrap();
    assert!(tree_integral(&big, &SampleAssignment::new(p.clone(), vec![p]), 0.0, 1.0).is_err());
}

proptest! {
    #[test]
    fn csv_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 2), 1..8)) {
        let n = rows.len();
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let mut values = vec![vec![0.0, 0.0]];
        values.extend(rows);
        let p = PiecewiseLinearPath::new(times, values).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        prop_assert_eq!(PiecewiseLinearPath::read_csv(&buf[..]).unwrap(), p);
    }

    #[test]
    fn increments_are_additive(seed in 0u64..1000, s in 0.0f64..0.3, m in 0.3f64..0.6, u in 0.6f64..1.0) {
        let sampler = RandomWalk { segments: 5, dim: 2, scale: 1.0 };
        let x = sampler.sample(&mut substream(seed, 0));
        let g = LionsForest::generator(2);
        let smp = SampleAssignment::new(x, vec![]);
        let whole = coefficient(&g, &smp, s, u);
        prop_assert!((whole - coefficient(&g, &smp, s, m) - coefficient(&g, &smp, m, u)).abs() < 1e-12);
    }
}
