//! Random labelings, empirical lifts over a finite population, the
//! mean-field law of large numbers experiment, and U-statistics.
//!
//! A labeling sends the `h0` slot of a forest to the tagged particle `i` and
//! every hyperedge to an independent uniform index in `1..=n`. Feeding each
//! slot the path of its index evaluates the lift of the collapsed forest, in
//! which hyperedges sharing an index are merged.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::forest::{LionsForest, Slot, Truncation};
use crate::hopf::Character;
use crate::metrics::{rho_estimate, AtomicLift, DualPair, RhoOptions};
use crate::partitions::SetPartition;
use crate::pathlift::{lift_character, node_integral, PathSampler, PiecewiseLinearPath, SampleAssignment, TensorValue};
use crate::{Error, Result};

/// Summation by halves, independent of thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

/// Indices in `1..=n` for the slots of one forest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Labeling {
    pub n: usize,
    pub tag: usize,
    /// Index of hyperedge `h`, in hyperedge order.
    pub assignment: Vec<usize>,
}

impl Labeling {
    pub fn new(n: usize, tag: usize, assignment: Vec<usize>) -> Result<Self> {
        if n == 0 || tag == 0 || tag > n {
            return Err(Error::Domain(format!("tag {tag} outside 1..={n}")));
        }
        if let Some(&j) = assignment.iter().find(|&&j| j == 0 || j > n) {
            return Err(Error::Domain(format!("index {j} outside 1..={n}")));
        }
        Ok(Labeling { n, tag, assignment })
    }

    pub fn index(&self, s: Slot) -> usize {
        match s {
            Slot::Zero => self.tag,
            Slot::Hyper(h) => self.assignment[h],
        }
    }
}

pub fn random_labeling(t: &LionsForest, i: usize, n: usize, rng: &mut dyn RngCore) -> Result<Labeling> {
    let assignment = (0..t.hyperedges().len()).map(|_| rng.random_range(1..=n)).collect();
    Labeling::new(n, i, assignment)
}

/// A labelled forest with nodes grouped by shared index. It need not satisfy
/// the Lions forest conditions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CollapsedForest {
    pub parent: Vec<Option<usize>>,
    pub labels: Vec<usize>,
    pub partition: SetPartition,
    /// Population index of each block of `partition`.
    pub indices: Vec<usize>,
}

impl CollapsedForest {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// True when no two slots of `t` were merged.
    pub fn is_identity(&self, t: &LionsForest) -> bool {
        let mut own: Vec<Vec<usize>> = t.hyperedges().to_vec();
        if !t.h0().is_empty() {
            own.push(t.h0().to_vec());
        }
        own.sort();
        let mut blocks = self.partition.blocks().to_vec();
        blocks.sort();
        own == blocks
    }

    /// Population index driving node `v`.
    pub fn index_of(&self, v: usize) -> usize {
        self.indices[self.partition.block_of(v).expect("node in partition")]
    }
}

pub fn collapse(t: &LionsForest, lab: &Labeling) -> CollapsedForest {
    let mut by_index: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for v in 0..t.len() {
        by_index.entry(lab.index(t.slot(v))).or_default().push(v);
    }
    let mut pairs: Vec<(Vec<usize>, usize)> = by_index.into_iter().map(|(j, b)| (b, j)).collect();
    pairs.sort();
    let indices = pairs.iter().map(|p| p.1).collect();
    let partition = SetPartition::new(pairs.into_iter().map(|p| p.0).collect()).expect("blocks of a map");
    CollapsedForest { parent: t.parents().to_vec(), labels: t.labels().to_vec(), partition, indices }
}

/// The lift driven by a population `W^1, …, W^n`, observed from particle `tag`.
#[derive(Clone)]
pub struct EmpiricalLift {
    population: Vec<Arc<PiecewiseLinearPath>>,
    tag: usize,
    trunc: Truncation,
}

impl EmpiricalLift {
    pub fn new(population: Vec<PiecewiseLinearPath>, tag: usize, trunc: Truncation) -> Result<Self> {
        let n = population.len();
        let need = (1.0 / trunc.alpha).floor() as usize;
        if n <= need {
            return Err(Error::InsufficientSamples(format!("{n} paths, need more than {need}")));
        }
        if tag == 0 || tag > n {
            return Err(Error::Domain(format!("tag {tag} outside 1..={n}")));
        }
        let d = population[0].dim();
        if population.iter().any(|p| p.dim() != d) {
            return Err(Error::SampleMismatch("paths of different dimensions".into()));
        }
        Ok(EmpiricalLift { population: population.into_iter().map(Arc::new).collect(), tag, trunc })
    }

    pub fn n(&self) -> usize {
        self.population.len()
    }

    pub fn tag(&self) -> usize {
        self.tag
    }

    pub fn path(&self, j: usize) -> &Arc<PiecewiseLinearPath> {
        &self.population[j - 1]
    }

    pub fn samples_for(&self, t: &LionsForest, lab: &Labeling) -> Result<SampleAssignment> {
        if lab.n != self.n() || lab.tag != self.tag || lab.assignment.len() != t.hyperedges().len() {
            return Err(Error::SampleMismatch("labeling does not match the population or the forest".into()));
        }
        Ok(SampleAssignment { zero: self.path(lab.tag).clone(), hyper: lab.assignment.iter().map(|&j| self.path(j).clone()).collect() })
    }

    pub fn draw(&self, t: &LionsForest, rng: &mut dyn RngCore) -> Result<(Labeling, SampleAssignment)> {
        let lab = random_labeling(t, self.tag, self.n(), rng)?;
        let s = self.samples_for(t, &lab)?;
        Ok((lab, s))
    }

    /// The character on the interval `(s, t)`; its value on a realised
    /// labeling is obtained by evaluating on [`EmpiricalLift::samples_for`].
    pub fn character(&self, s: f64, t: f64) -> Result<Character> {
        lift_character(self.trunc, s, t)
    }

    /// `⟨J_{s,u}, T⟩` computed on the collapsed forest, each node driven by
    /// the path of its block.
    pub fn eval_collapsed(&self, t: &LionsForest, lab: &Labeling, s: f64, u: f64) -> Result<TensorValue> {
        if lab.n != self.n() || lab.assignment.len() != t.hyperedges().len() {
            return Err(Error::SampleMismatch("labeling does not match the population or the forest".into()));
        }
        let d = self.population[0].dim();
        if t.labels().iter().any(|&l| l > d) || !(0.0..=1.0).contains(&s) || !(s..=1.0).contains(&u) {
            return Err(Error::Domain("label or times out of range".into()));
        }
        let c = collapse(t, lab);
        let paths: Vec<&PiecewiseLinearPath> = (0..c.len()).map(|v| self.path(c.index_of(v)).as_ref()).collect();
        let x = node_integral(&c.parent, &c.labels, &paths, s, u);
        let idx: Vec<usize> = c.labels.iter().map(|l| l - 1).collect();
        Ok(TensorValue::basis(d, &idx, x))
    }

    /// Draws a labeling and evaluates the collapsed forest.
    pub fn eval(&self, t: &LionsForest, s: f64, u: f64, rng: &mut dyn RngCore) -> Result<(Labeling, TensorValue)> {
        let lab = random_labeling(t, self.tag, self.n(), rng)?;
        let v = self.eval_collapsed(t, &lab, s, u)?;
        Ok((lab, v))
    }
}

pub fn empirical_lift(paths: Vec<PiecewiseLinearPath>, i: usize, trunc: Truncation) -> Result<EmpiricalLift> {
    EmpiricalLift::new(paths, i, trunc)
}

#[derive(Clone, Debug)]
pub struct LlnConfig {
    pub trees: Vec<LionsForest>,
    pub tag: usize,
    pub n_grid: Vec<usize>,
    /// Monte-Carlo replications per population size.
    pub replications: usize,
    /// Atoms representing each mean-field law in the coupling search.
    pub atoms: usize,
    pub pair: DualPair,
    pub rho: RhoOptions,
    pub trunc: Truncation,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnRow {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub identity_estimate: f64,
    pub identity_stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnTable {
    pub rows: Vec<LlnRow>,
    /// Every estimate is at most its predecessor's plus two standard errors.
    pub monotone_on_average: bool,
    /// `(first − last) / sqrt(se_first² + se_last²)`.
    pub endpoint_z: f64,
    /// One-sided 95% confidence that the last estimate is below the first.
    pub endpoint_confident: bool,
    /// Estimates use permutation couplings only and bound the metric from above.
    pub upper_bound: bool,
    pub seed: u64,
    pub replications: usize,
    pub atoms: usize,
    pub grid_level: usize,
}

impl LlnTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,estimate,stderr,identity_estimate,identity_stderr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.n, r.estimate, r.stderr, r.identity_estimate, r.identity_stderr));
        }
        out
    }
}

/// `count` atoms: the law's own atoms repeated when they divide `count`,
/// independent draws otherwise.
fn mean_field_atoms(sampler: &dyn PathSampler, count: usize, rng: &mut dyn RngCore) -> Vec<Arc<PiecewiseLinearPath>> {
    match sampler.atoms() {
        Some(a) if !a.is_empty() && count.is_multiple_of(a.len()) => {
            let a: Vec<Arc<PiecewiseLinearPath>> = a.into_iter().map(Arc::new).collect();
            (0..count).map(|k| a[k % a.len()].clone()).collect()
        }
        _ => (0..count).map(|_| Arc::new(sampler.sample(rng))).collect(),
    }
}

/// Atoms of `W^{j}` for `j` uniform on the population.
fn empirical_atoms(pop: &[Arc<PiecewiseLinearPath>], count: usize, rng: &mut dyn RngCore) -> Vec<Arc<PiecewiseLinearPath>> {
    let n = pop.len();
    if count.is_multiple_of(n) {
        (0..count).map(|k| pop[k % n].clone()).collect()
    } else {
        (0..count).map(|_| pop[rng.random_range(0..n)].clone()).collect()
    }
}

/// Discrepancy between the `n`-empirical lift seen from particle `tag` and
/// the mean-field lift driven by the same tagged path, for each `n` of the grid.
pub fn lln_experiment(sampler: &dyn PathSampler, cfg: &LlnConfig) -> Result<LlnTable> {
    if cfg.replications < 2 {
        return Err(Error::InsufficientSamples(format!("{} replications, need at least 2 for a standard error", cfg.replications)));
    }
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("n-grid must be nonempty and increasing".into()));
    }
    if cfg.tag == 0 || cfg.tag > cfg.n_grid[0] {
        return Err(Error::Domain(format!("tag {} outside 1..={}", cfg.tag, cfg.n_grid[0])));
    }
    let mut rows = Vec::new();
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let runs: Vec<(f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(cfg.seed, (gi * cfg.replications + r) as u64);
                let pop: Vec<Arc<PiecewiseLinearPath>> = (0..n).map(|_| Arc::new(sampler.sample(&mut rng))).collect();
                let zero = pop[cfg.tag - 1].clone();
                let mf = AtomicLift::geometric(cfg.trunc, zero.clone(), mean_field_atoms(sampler, cfg.atoms, &mut rng));
                let emp = AtomicLift::geometric(cfg.trunc, zero, empirical_atoms(&pop, cfg.atoms, &mut rng));
                let rep = rho_estimate(&emp, &mf, &cfg.trees, &cfg.pair, &cfg.rho)?;
                Ok((rep.value, rep.identity_value))
            })
            .collect::<Result<_>>()?;
        let best: Vec<f64> = runs.iter().map(|x| x.0).collect();
        let ident: Vec<f64> = runs.iter().map(|x| x.1).collect();
        let (estimate, stderr) = mean_se(&best);
        let (identity_estimate, identity_stderr) = mean_se(&ident);
        rows.push(LlnRow { n, estimate, stderr, identity_estimate, identity_stderr });
    }
    let monotone_on_average = rows.windows(2).all(|w| w[1].estimate <= w[0].estimate + 2.0 * w[0].stderr.hypot(w[1].stderr));
    let (a, b) = (&rows[0], &rows[rows.len() - 1]);
    let spread = a.stderr.hypot(b.stderr);
    let diff = a.estimate - b.estimate;
    let endpoint_z = if spread > 0.0 { diff / spread } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(LlnTable {
        endpoint_confident: endpoint_z > 1.6448536269514722,
        rows,
        monotone_on_average,
        endpoint_z,
        upper_bound: true,
        seed: cfg.seed,
        replications: cfg.replications,
        atoms: cfg.atoms,
        grid_level: cfg.rho.grid_level,
    })
}

/// Sum of `f` over ordered index tuples, all of them or pairwise distinct ones.
fn tuple_sum<X: Sync>(f: &(dyn Fn(&[&X]) -> f64 + Sync), xs: &[X], l: usize, distinct: bool) -> f64 {
    fn rec<'a, X>(f: &(dyn Fn(&[&X]) -> f64 + Sync), xs: &'a [X], l: usize, distinct: bool, idx: &mut Vec<usize>, args: &mut Vec<&'a X>, acc: &mut Vec<f64>) {
        if idx.len() == l {
            acc.push(f(args));
            return;
        }
        for i in 0..xs.len() {
            if distinct && idx.contains(&i) {
                continue;
            }
            idx.push(i);
            args.push(&xs[i]);
            rec(f, xs, l, distinct, idx, args, acc);
            args.pop();
            idx.pop();
        }
    }
    if l == 0 {
        return f(&[]);
    }
    let parts: Vec<f64> = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = Vec::new();
            rec(f, xs, l, distinct, &mut vec![i], &mut vec![&xs[i]], &mut acc);
            pairwise_sum(&acc)
        })
        .collect();
    pairwise_sum(&parts)
}

/// `n^{-ℓ} Σ_{distinct i_1, …, i_ℓ} f(X_{i_1}, …, X_{i_ℓ})`.
pub fn ustat_distinct<X: Sync>(f: &(dyn Fn(&[&X]) -> f64 + Sync), xs: &[X], l: usize) -> Result<f64> {
    let n = xs.len();
    if n < l {
        return Err(Error::InsufficientSamples(format!("{n} samples for {l} distinct indices")));
    }
    Ok(tuple_sum(f, xs, l, true) / (n as f64).powi(l as i32))
}

/// The distinct-index sum divided by `n (n − 1) … (n − ℓ + 1)` instead.
pub fn ustat_distinct_unbiased<X: Sync>(f: &(dyn Fn(&[&X]) -> f64 + Sync), xs: &[X], l: usize) -> Result<f64> {
    let n = xs.len();
    if n < l {
        return Err(Error::InsufficientSamples(format!("{n} samples for {l} distinct indices")));
    }
    let falling: f64 = (0..l).map(|k| (n - k) as f64).product();
    Ok(tuple_sum(f, xs, l, true) / falling)
}

/// `n^{-ℓ} Σ_{i_1, …, i_ℓ} f(X_{i_1}, …, X_{i_ℓ})`.
pub fn ustat_all<X: Sync>(f: &(dyn Fn(&[&X]) -> f64 + Sync), xs: &[X], l: usize) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    Ok(tuple_sum(f, xs, l, false) / (xs.len() as f64).powi(l as i32))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

pub type Oracle<X> = dyn Fn(&[&X]) -> f64 + Send + Sync;

/// `φ_j(x_1, …, x_j) = (−1)^{ℓ−1−j} ∫ f̃(x_1, …, x_ℓ) dμ(x_{j+1}) … dμ(x_ℓ)`,
/// `f̃` the symmetrisation of `f`, integrated over a fixed pool of draws.
pub struct SymmetrizedPhi<X> {
    l: usize,
    f: Arc<Oracle<X>>,
    perms: Vec<Vec<usize>>,
    pool: Vec<Vec<X>>,
}

impl<X: Clone + Send + Sync> SymmetrizedPhi<X> {
    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    /// `f̃(x) = (1/ℓ!) Σ_σ f(x_σ)`.
    pub fn symmetric(&self, x: &[&X]) -> f64 {
        let vals: Vec<f64> = self
            .perms
            .iter()
            .map(|p| {
                let args: Vec<&X> = p.iter().map(|&k| x[k]).collect();
                (self.f)(&args)
            })
            .collect();
        pairwise_sum(&vals) / self.perms.len() as f64
    }

    pub fn phi(&self, j: usize, x: &[&X]) -> f64 {
        assert!(j < self.l && x.len() == j);
        let sign = if (self.l - 1 - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        let vals: Vec<f64> = self
            .pool
            .iter()
            .map(|y| {
                let mut args: Vec<&X> = x.to_vec();
                args.extend(y[j..].iter());
                self.symmetric(&args)
            })
            .collect();
        sign * pairwise_sum(&vals) / self.pool.len() as f64
    }

    /// `f̃(x) − Σ_{k < ℓ} Σ_{|I| = k} φ_k(x_I)`.
    pub fn centered(&self, x: &[&X]) -> f64 {
        let l = self.l;
        let mut total = self.symmetric(x);
        for mask in 0u32..(1 << l) - 1 {
            let sub: Vec<&X> = (0..l).filter(|&i| mask >> i & 1 == 1).map(|i| x[i]).collect();
            total -= self.phi(sub.len(), &sub);
        }
        total
    }

    /// Mean and standard error of the centred value with the first
    /// `given.len()` arguments fixed and the rest drawn afresh.
    pub fn centering_residual(&self, given: &[X], sampler: &(dyn Fn(&mut dyn RngCore) -> X + Sync), outer: usize, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
        if given.len() >= self.l {
            return Err(Error::Domain(format!("conditioning set of size {} for order {}", given.len(), self.l)));
        }
        if outer < 2 {
            return Err(Error::InsufficientSamples("need at least 2 outer draws".into()));
        }
        let vals: Vec<f64> = (0..outer)
            .map(|_| {
                let mut x: Vec<X> = given.to_vec();
                x.extend((given.len()..self.l).map(|_| sampler(rng)));
                let refs: Vec<&X> = x.iter().collect();
                self.centered(&refs)
            })
            .collect();
        Ok(mean_se(&vals))
    }
}

/// The functions `φ_0, …, φ_{ℓ−1}` for `f`, using `inner` draws per integral.
pub fn symmetrize_phi<X: Clone + Send + Sync>(
    f: Arc<Oracle<X>>,
    l: usize,
    sampler: &(dyn Fn(&mut dyn RngCore) -> X + Sync),
    inner: usize,
    rng: &mut dyn RngCore,
) -> Result<SymmetrizedPhi<X>> {
    if l == 0 || l > 4 {
        return Err(Error::Domain(format!("order {l} outside 1..=4")));
    }
    if inner == 0 {
        return Err(Error::InsufficientSamples("no inner draws".into()));
    }
    let pool = (0..inner).map(|_| (0..l).map(|_| sampler(rng)).collect()).collect();
    Ok(SymmetrizedPhi { l, f, perms: permutations(l), pool })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged_two_hyper() -> LionsForest {
        // root in h0 with two children in separate hyperedges
        LionsForest::new(vec![None, Some(0), Some(0)], vec![1, 1, 1], vec![0], vec![vec![1], vec![2]]).unwrap()
    }

    #[test]
    fn collapse_extremes() {
        let t = tagged_two_hyper();
        let one = Labeling::new(1, 1, vec![1, 1]).unwrap();
        let c = collapse(&t, &one);
        assert_eq!(c.partition.len(), 1);
        let distinct = Labeling::new(5, 1, vec![2, 3]).unwrap();
        assert!(collapse(&t, &distinct).is_identity(&t));
        assert!(!collapse(&t, &Labeling::new(5, 1, vec![1, 3]).unwrap()).is_identity(&t));
    }

    #[test]
    fn collapsed_evaluation_matches_fed_samples() {
        let tr = Truncation::new(3.0, 1.0, 1.0, 2).unwrap();
        let pop: Vec<_> = (0..4).map(|k| PiecewiseLinearPath::from_fn(3, 2, move |t| vec![(t * (k + 1) as f64).sin(), t * t - k as f64 * t])).collect();
        let lift = EmpiricalLift::new(pop, 2, tr).unwrap();
        let t = tagged_two_hyper();
        let mut rng = substream(5, 0);
        for _ in 0..20 {
            let (lab, s) = lift.draw(&t, &mut rng).unwrap();
            let a = lift.character(0.1, 0.9).unwrap().eval(&t, &s).unwrap();
            let b = lift.eval_collapsed(&t, &lab, 0.1, 0.9).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-13);
        }
    }

    #[test]
    fn insufficient_population() {
        let tr = Truncation::new(1.0, 0.5, 0.5, 1).unwrap();
        let pop = vec![PiecewiseLinearPath::linear(&[1.0]); 2];
        assert!(EmpiricalLift::new(pop, 1, tr).is_err());
    }

    #[test]
    fn ustat_counting() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let one = |_: &[&f64]| 1.0;
        let v = ustat_distinct(&one, &xs, 3).unwrap();
        assert!((v - 6.0 * 5.0 * 4.0 / 216.0).abs() < 1e-15);
        assert_eq!(ustat_all(&one, &xs, 3).unwrap(), 1.0);
        assert!(ustat_distinct(&one, &xs[..2], 3).is_err());
    }

    #[test]
    fn phi_of_constant_alternates() {
        let mut rng = substream(1, 0);
        let f: Arc<Oracle<f64>> = Arc::new(|_: &[&f64]| 2.0);
        let phi = symmetrize_phi(f, 3, &|r: &mut dyn RngCore| r.random::<f64>(), 10, &mut rng).unwrap();
        assert_eq!(phi.phi(2, &[&0.1, &0.2]), 2.0);
        assert_eq!(phi.phi(1, &[&0.1]), -2.0);
        assert_eq!(phi.phi(0, &[]), 2.0);
        assert!(phi.centered(&[&0.1, &0.2, &0.3]).abs() < 1e-12);
    }

    #[test]
    fn substreams_differ() {
        let a: u64 = substream(9, 0).random();
        let b: u64 = substream(9, 1).random();
        assert_ne!(a, b);
        let c: u64 = substream(9, 0).random();
        assert_eq!(a, c);
    }
}
