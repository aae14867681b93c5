//! Integrability functionals, norms on characters and the coupling metric `ρ`.
//!
//! Moments `E^{(H^T)'}[|⟨f, T⟩|^{q[T]}]` are Monte-Carlo averages over a
//! fixed set of slot samples per forest, so that different characters are
//! compared on common random numbers. Tensor values are measured in the
//! Euclidean norm.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::empirical::{pairwise_sum, substream};
use crate::forest::{enumerate_forests, LionsForest, Truncation};
use crate::hopf::{antipode, coproduct, log_star, Character, Functional, PreparedForest, Side};
use crate::pathlift::{lift_character, PathSampler, PiecewiseLinearPath, SampleAssignment, TensorValue};
use crate::{Error, Result};

/// `q[T] = q'/|N^T|` and `p[T]` from `1/p[𝟏] = 1/p[T] + 1/q[T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualPair {
    pub p1: f64,
    pub qprime: f64,
    pub max_nodes: usize,
}

impl DualPair {
    pub fn new(p1: f64, qprime: f64, trunc: &Truncation) -> Result<Self> {
        let k = trunc.max_nodes();
        if p1.is_nan() || p1 < 1.0 || !qprime.is_finite() {
            return Err(Error::Domain(format!("need p1 >= 1 and finite q', got {p1}, {qprime}")));
        }
        if qprime <= k as f64 {
            return Err(Error::Domain(format!("q' = {qprime} must exceed the node bound {k}")));
        }
        if k > 0 && p1 >= qprime / k as f64 {
            return Err(Error::Domain(format!("p1 = {p1} must be below q'/{k} = {}", qprime / k as f64)));
        }
        Ok(DualPair { p1, qprime, max_nodes: k })
    }

    /// Infinite for `𝟏`.
    pub fn q(&self, t: &LionsForest) -> f64 {
        self.qprime / t.len() as f64
    }

    pub fn q_nodes(&self, n: usize) -> f64 {
        self.qprime / n as f64
    }

    pub fn p(&self, t: &LionsForest) -> f64 {
        self.p_nodes(t.len())
    }

    pub fn p_nodes(&self, n: usize) -> f64 {
        self.qprime * self.p1 / (self.qprime - n as f64 * self.p1)
    }
}

pub fn make_dual_pair(p1: f64, qprime: f64, trunc: &Truncation) -> Result<DualPair> {
    DualPair::new(p1, qprime, trunc)
}

#[derive(Clone, Debug, Serialize)]
pub struct DualReport {
    pub forests: usize,
    pub triples: usize,
    /// Triples where `1/q[T] = 1/q[T1] + 1/q[T2]` holds exactly.
    pub equalities: usize,
    pub violations: Vec<String>,
    pub p1_max_residual: f64,
    pub passed: bool,
}

/// Checks both integrability conditions over the coproduct table of the
/// truncation. Reciprocals `1/q[T] = |N^T|/q'` are compared through node
/// counts, so the second condition is decided in integers.
pub fn check_dual_conditions(pair: &DualPair, trunc: &Truncation) -> DualReport {
    let forests = enumerate_forests(trunc);
    let mut triples = 0;
    let mut equalities = 0;
    let mut violations = Vec::new();
    let mut p1_max_residual: f64 = 0.0;
    for t in forests.iter().filter(|t| !t.is_empty()) {
        let n = t.len();
        let p = pair.p(t);
        if !(p.is_finite() && p >= 1.0) {
            violations.push(format!("p[{}] = {p} is not a finite exponent >= 1", t.key()));
        }
        let r = (1.0 / pair.p1 - 1.0 / p - 1.0 / pair.q(t)).abs();
        p1_max_residual = p1_max_residual.max(r);
        for (pair_t, _) in coproduct(t).iter() {
            triples += 1;
            let (a, b) = (pair_t.left().len(), pair_t.right().len());
            if a + b == n {
                equalities += 1;
            } else if a + b > n {
                violations.push(format!("1/q[T] < 1/q[T1] + 1/q[T2] for T = {}, term {pair_t}", t.key()));
            }
        }
        if t.expectation().len() != n {
            violations.push(format!("q[E(T)] differs from q[T] for {}", t.key()));
        }
    }
    for a in forests.iter().filter(|t| !t.is_empty()) {
        for b in forests.iter().filter(|t| !t.is_empty()) {
            let ab = a.product(b);
            if trunc.admits(&ab) && ab.len() != a.len() + b.len() {
                violations.push(format!("1/q[T1 ⊛ T2] is not additive for {}, {}", a.key(), b.key()));
            }
        }
    }
    let passed = violations.is_empty() && p1_max_residual <= 1e-12;
    DualReport { forests: forests.len(), triples, equalities, violations, p1_max_residual, passed }
}

/// `K = max_T (C(T)^{q[T]−1} Σ c(T, T1, T2)^{q[T]})^{1/q[T]}`, where `c` counts
/// coproduct terms by the classes of `(T1, T2)` and `C(T)` is the number of
/// classes present.
pub fn k_constant(pair: &DualPair, trunc: &Truncation) -> f64 {
    let mut k: f64 = 1.0;
    for t in enumerate_forests(trunc).iter().filter(|t| !t.is_empty()) {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (c, m) in coproduct(t).iter() {
            *counts.entry((c.left().key().0, c.right().key().0)).or_insert(0) += m as u64;
        }
        let q = pair.q(t);
        let big_c = counts.len() as f64;
        let sum: f64 = counts.values().map(|&c| (c as f64).powf(q)).sum();
        k = k.max((big_c.powf(q - 1.0) * sum).powf(1.0 / q));
    }
    k
}

/// A Monte-Carlo value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn zero() -> Self {
        Estimate { value: 0.0, stderr: 0.0 }
    }
}

/// `(mean |x|^q)^{1/q}` with a delta-method error.
fn moment_root(xs: &[f64], q: f64) -> Estimate {
    let m = xs.len() as f64;
    let pw: Vec<f64> = xs.iter().map(|x| x.powf(q)).collect();
    let mean = pairwise_sum(&pw) / m;
    if mean <= 0.0 {
        return Estimate::zero();
    }
    let dev: Vec<f64> = pw.iter().map(|x| (x - mean) * (x - mean)).collect();
    let se_mean = if pw.len() > 1 { (pairwise_sum(&dev) / (m - 1.0) / m).sqrt() } else { 0.0 };
    Estimate { value: mean.powf(1.0 / q), stderr: mean.powf(1.0 / q - 1.0) * se_mean / q }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub cc: f64,
    pub triple: f64,
    /// `cc / |||f|||`, bounded by `upper`.
    pub cc_over_triple: f64,
    /// `|||f||| / cc`, bounded by `lower`.
    pub triple_over_cc: f64,
    pub upper: f64,
    pub lower: f64,
    pub within: bool,
}

/// Norm estimates over a fixed sample set for every forest of a truncation.
pub struct NormEstimator {
    trunc: Truncation,
    pair: DualPair,
    k_const: f64,
    /// Forests of the truncation grouped by node count, `𝟏` excluded.
    levels: Vec<Vec<LionsForest>>,
    samples: Vec<Vec<Vec<SampleAssignment>>>,
    pub seed: u64,
}

impl NormEstimator {
    pub fn new(trunc: Truncation, pair: DualPair, sampler: &dyn PathSampler, m: usize, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InsufficientSamples(format!("{m} samples per forest, need at least 2")));
        }
        if pair.max_nodes != trunc.max_nodes() {
            return Err(Error::Domain("dual pair built for another truncation".into()));
        }
        let kmax = trunc.max_nodes();
        let mut levels = vec![Vec::new(); kmax + 1];
        for f in enumerate_forests(&trunc).into_iter().filter(|f| !f.is_empty()) {
            levels[f.len()].push(f);
        }
        let mut samples = Vec::with_capacity(kmax + 1);
        let mut stream = 0u64;
        for level in &levels {
            let mut per = Vec::with_capacity(level.len());
            for f in level {
                let mut rng = substream(seed, stream);
                stream += 1;
                per.push((0..m).map(|_| SampleAssignment::draw(f, sampler, &mut rng)).collect());
            }
            samples.push(per);
        }
        Ok(NormEstimator { trunc, pair, k_const: k_constant(&pair, &trunc), levels, samples, seed })
    }

    pub fn k_const(&self) -> f64 {
        self.k_const
    }

    pub fn pair(&self) -> &DualPair {
        &self.pair
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// For each functional and level, the largest moment root
    /// `E[|⟨h, T⟩|^{q[T]}]^{1/q[T]}` over the forests of that level; entry
    /// `k - 1` holds level `k`. Functionals flagged in `trees_only` skip
    /// forests with several components. All functionals are evaluated
    /// together on each sample so that shared terms are computed once.
    fn level_sups(&self, fs: &[&Functional], trees_only: &[bool]) -> Result<Vec<Vec<Estimate>>> {
        let mut out = vec![vec![Estimate::zero(); self.max_level()]; fs.len()];
        for k in 1..=self.max_level() {
            let per_forest: Vec<Vec<Option<Estimate>>> = (0..self.levels[k].len())
                .into_par_iter()
                .map(|j| {
                    let f = &self.levels[k][j];
                    let want: Vec<bool> = trees_only.iter().map(|&t| !t || f.is_tree()).collect();
                    let picked: Vec<&Functional> = fs.iter().zip(&want).filter(|(_, &w)| w).map(|(g, _)| *g).collect();
                    let mut xs = vec![Vec::with_capacity(self.samples[k][j].len()); picked.len()];
                    if !picked.is_empty() {
                        let prep = PreparedForest::new(f)?;
                        for smp in &self.samples[k][j] {
                            for (x, v) in xs.iter_mut().zip(Functional::eval_prepared(&picked, &prep, smp)?) {
                                x.push(v.norm());
                            }
                        }
                    }
                    let q = self.pair.q(f);
                    let mut it = xs.iter().map(|x| moment_root(x, q));
                    Ok(want.iter().map(|&w| if w { it.next() } else { None }).collect())
                })
                .collect::<Result<_>>()?;
            for row in per_forest {
                for (i, e) in row.into_iter().enumerate() {
                    if let Some(e) = e {
                        if e.value > out[i][k - 1].value {
                            out[i][k - 1] = e;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn check(&self, f: &Character) -> Result<()> {
        if f.truncation() != self.trunc {
            return Err(Error::Domain("character from another truncation".into()));
        }
        Ok(())
    }

    /// `K sup_{|N^T| = k} E[|⟨f, T⟩|^{q[T]}]^{1/q[T]}`.
    pub fn bnorm(&self, f: &Character, k: usize) -> Result<Estimate> {
        self.check(f)?;
        if k == 0 || k > self.max_level() {
            return Err(Error::Domain(format!("level {k} outside 1..={}", self.max_level())));
        }
        Ok(self.bnorms(f)?[k - 1])
    }

    /// `b_k(f)` for every level `k = 1..=max_level`.
    pub fn bnorms(&self, f: &Character) -> Result<Vec<Estimate>> {
        self.check(f)?;
        let s = self.level_sups(&[f.functional()], &[false])?;
        Ok(s[0].iter().map(|e| Estimate { value: self.k_const * e.value, stderr: self.k_const * e.stderr }).collect())
    }

    /// `max_k (k! b_k(f))^{1/k}` from the level suprema of `f`.
    fn half_cc(&self, sups: &[Estimate]) -> Estimate {
        let mut best = Estimate::zero();
        let mut fact = 1.0;
        for (i, e) in sups.iter().enumerate() {
            let k = i + 1;
            fact *= k as f64;
            let b = Estimate { value: self.k_const * e.value, stderr: self.k_const * e.stderr };
            if b.value <= 0.0 {
                continue;
            }
            let v = (fact * b.value).powf(1.0 / k as f64);
            if v > best.value {
                // d/db (k! b)^{1/k} = v / (k b)
                best = Estimate { value: v, stderr: v / (k as f64 * b.value) * b.stderr };
            }
        }
        best
    }

    fn cc_from(&self, f: &[Estimate], inv: &[Estimate]) -> Estimate {
        let (a, b) = (self.half_cc(f), self.half_cc(inv));
        Estimate { value: a.value + b.value, stderr: a.stderr.hypot(b.stderr) }
    }

    /// `sup_k` of the `k`-th roots of the level suprema of `log* f`.
    fn triple_from(sups: &[Estimate]) -> Estimate {
        let mut best = Estimate::zero();
        for (i, e) in sups.iter().enumerate() {
            let k = i + 1;
            if e.value <= 0.0 {
                continue;
            }
            let v = e.value.powf(1.0 / k as f64);
            if v > best.value {
                best = Estimate { value: v, stderr: v / (k as f64 * e.value) * e.stderr };
            }
        }
        best
    }

    /// `max_k (k! b_k(f))^{1/k} + max_k (k! b_k(f^{-1}))^{1/k}`.
    pub fn cc_norm(&self, f: &Character) -> Result<Estimate> {
        self.check(f)?;
        let inv = antipode(f, Side::Left);
        let s = self.level_sups(&[f.functional(), inv.functional()], &[false, false])?;
        Ok(self.cc_from(&s[0], &s[1]))
    }

    /// `‖g^{-1} ∗ f‖_cc`.
    pub fn cc_dist(&self, f: &Character, g: &Character) -> Result<Estimate> {
        let h = crate::hopf::convolve(&antipode(g, Side::Left), f)?;
        self.cc_norm(&h)
    }

    /// `sup_T E[|⟨log* f, T⟩|^{q[T]}]^{1/(q[T] |N^T|)}` over trees.
    pub fn triple_norm(&self, f: &Character) -> Result<Estimate> {
        self.check(f)?;
        let xi = log_star(f);
        Ok(Self::triple_from(&self.level_sups(&[xi.functional()], &[true])?[0]))
    }

    /// `C = 2(e^K − 1) K_const` for `cc ≤ C |||·|||`, and
    /// `c = max_k ((e^k − 1)/K_const)^{1/k}` for `|||·||| ≤ c cc`.
    pub fn equivalence_constants(&self) -> (f64, f64) {
        let kmax = self.max_level();
        let upper = 2.0 * ((kmax as f64).exp() - 1.0) * self.k_const;
        let lower = (1..=kmax).map(|k| (((k as f64).exp() - 1.0) / self.k_const).powf(1.0 / k as f64)).fold(0.0, f64::max);
        (upper, lower)
    }

    pub fn equivalence_check(&self, f: &Character) -> Result<EquivalenceReport> {
        self.check(f)?;
        let (inv, xi) = (antipode(f, Side::Left), log_star(f));
        let s = self.level_sups(&[f.functional(), inv.functional(), xi.functional()], &[false, false, true])?;
        let cc = self.cc_from(&s[0], &s[1]).value;
        let triple = Self::triple_from(&s[2]).value;
        let (upper, lower) = self.equivalence_constants();
        let ratio = |a: f64, b: f64| if a == 0.0 && b == 0.0 { 0.0 } else { a / b };
        let cc_over_triple = ratio(cc, triple);
        let triple_over_cc = ratio(triple, cc);
        let within = cc_over_triple <= upper && triple_over_cc <= lower;
        Ok(EquivalenceReport { cc, triple, cc_over_triple, triple_over_cc, upper, lower, within })
    }
}

/// Builds the character of `(s, t)` for an atomic lift.
pub type LiftFamily = dyn Fn(f64, f64) -> Result<Character> + Send + Sync;

/// A character realised over a fixed `ω0` path and `M` equally weighted atoms
/// for the mean-field slots.
#[derive(Clone)]
pub struct AtomicLift {
    pub zero: Arc<PiecewiseLinearPath>,
    pub atoms: Vec<Arc<PiecewiseLinearPath>>,
    lift: Arc<LiftFamily>,
}

impl AtomicLift {
    pub fn new(zero: Arc<PiecewiseLinearPath>, atoms: Vec<Arc<PiecewiseLinearPath>>, lift: Arc<LiftFamily>) -> Self {
        AtomicLift { zero, atoms, lift }
    }

    /// The geometric lift `J` over the given atoms.
    pub fn geometric(trunc: Truncation, zero: Arc<PiecewiseLinearPath>, atoms: Vec<Arc<PiecewiseLinearPath>>) -> Self {
        AtomicLift::new(zero, atoms, Arc::new(move |s, t| lift_character(trunc, s, t)))
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Samples putting atom `tuple[h]` on hyperedge `h`.
    pub fn samples(&self, tuple: &[usize]) -> SampleAssignment {
        SampleAssignment { zero: self.zero.clone(), hyper: tuple.iter().map(|&k| self.atoms[k].clone()).collect() }
    }
}

/// `s < t` pairs of the dyadic grid of mesh `2^-level`.
pub fn dyadic_pairs(level: usize) -> Vec<(f64, f64)> {
    let m = 1usize << level;
    let mut out = Vec::new();
    for i in 0..m {
        for j in i + 1..=m {
            out.push((i as f64 / m as f64, j as f64 / m as f64));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct RhoReport {
    /// Smallest cost found; an upper bound on the infimum over all couplings.
    pub value: f64,
    pub identity_value: f64,
    /// Atom `k` of the first lift is coupled with atom `permutation[k]` of the second.
    pub permutation: Vec<usize>,
    pub exhaustive: bool,
    pub grid_level: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct RhoOptions {
    pub alpha: f64,
    pub beta: f64,
    pub grid_level: usize,
    /// Largest atom count searched over all permutations.
    pub exhaustive_max: usize,
}

impl Default for RhoOptions {
    fn default() -> Self {
        RhoOptions { alpha: 1.0, beta: 1.0, grid_level: 5, exhaustive_max: 8 }
    }
}

/// Values of both lifts on every grid pair and atom tuple of one forest.
struct TreeTable {
    h: usize,
    q: f64,
    dim: usize,
    tuples: usize,
    weights: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl TreeTable {
    fn term(&self, b: usize, c: usize, c2: usize) -> f64 {
        let base = b * self.tuples;
        let x = &self.f[(base + c) * self.dim..(base + c + 1) * self.dim];
        let y = &self.g[(base + c2) * self.dim..(base + c2 + 1) * self.dim];
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        d2.powf(0.5 * self.q)
    }

    fn image(&self, c: usize, perm: &[usize]) -> usize {
        let m = perm.len();
        let (mut rest, mut out, mut scale) = (c, 0, 1);
        for _ in 0..self.h {
            out += perm[rest % m] * scale;
            rest /= m;
            scale *= m;
        }
        out
    }

    fn sums(&self, perm: &[usize]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|b| {
                let terms: Vec<f64> = (0..self.tuples).map(|c| self.term(b, c, self.image(c, perm))).collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    fn cost(&self, sums: &[f64]) -> f64 {
        sums.iter().zip(&self.weights).map(|(s, w)| w * (s.max(0.0) / self.tuples as f64).powf(1.0 / self.q)).fold(0.0, f64::max)
    }

    /// Tuples with at least one coordinate in `{k, l}`.
    fn touching(&self, m: usize, k: usize, l: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for c in 0..self.tuples {
            let mut rest = c;
            for _ in 0..self.h {
                let x = rest % m;
                if x == k || x == l {
                    out.push(c);
                    break;
                }
                rest /= m;
            }
        }
        out
    }

    fn diag(&self, k: usize, m: usize) -> usize {
        (0..self.h).fold(0, |acc, _| acc * m + k)
    }
}

fn build_tables(f: &AtomicLift, g: &AtomicLift, forests: &[LionsForest], pair: &DualPair, opts: &RhoOptions) -> Result<Vec<TreeTable>> {
    let m = f.len();
    let pairs = dyadic_pairs(opts.grid_level);
    let mut tables = Vec::new();
    for t in forests.iter().filter(|t| !t.is_empty()) {
        let h = t.hyperedges().len();
        let tuples = m.checked_pow(h as u32).filter(|&x| x.saturating_mul(pairs.len()) <= 50_000_000).ok_or_else(|| {
            Error::Domain(format!("{m}^{h} atom tuples on {} grid pairs is too large", pairs.len()))
        })?;
        let weights: Vec<f64> = pairs.iter().map(|(s, u)| (u - s).powf(-t.weight(opts.alpha, opts.beta))).collect();
        let eval = |lift: &AtomicLift| -> Result<(usize, Vec<f64>)> {
            let rows: Vec<Vec<TensorValue>> = pairs
                .par_iter()
                .map(|&(s, u)| {
                    let ch = (lift.lift)(s, u)?;
                    (0..tuples)
                        .map(|c| {
                            let mut rest = c;
                            let tuple: Vec<usize> = (0..h)
                                .map(|_| {
                                    let x = rest % m;
                                    rest /= m;
                                    x
                                })
                                .collect();
                            ch.eval(t, &lift.samples(&tuple))
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let dim = rows[0][0].data.len();
            Ok((dim, rows.into_iter().flatten().flat_map(|v| v.data).collect()))
        };
        let (dim, fv) = eval(f)?;
        let (dim2, gv) = eval(g)?;
        if dim != dim2 {
            return Err(Error::SampleMismatch("lifts take values of different shapes".into()));
        }
        tables.push(TreeTable { h, q: pair.q(t), dim, tuples, weights, f: fv, g: gv });
    }
    Ok(tables)
}

fn total_cost(tables: &[TreeTable], perm: &[usize]) -> f64 {
    tables.iter().map(|t| t.cost(&t.sums(perm))).sum()
}

/// All permutations of `0..m` starting with `first`, by Heap's algorithm.
fn best_with_first(tables: &[TreeTable], m: usize, first: usize) -> (f64, Vec<usize>) {
    let mut rest: Vec<usize> = (0..m).filter(|&x| x != first).collect();
    let n = rest.len();
    let mut perm = Vec::with_capacity(m);
    let score = |rest: &[usize], perm: &mut Vec<usize>| {
        perm.clear();
        perm.push(first);
        perm.extend_from_slice(rest);
        total_cost(tables, perm)
    };
    let mut best = (score(&rest, &mut perm), perm.clone());
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                rest.swap(0, i);
            } else {
                rest.swap(c[i], i);
            }
            let v = score(&rest, &mut perm);
            if v < best.0 {
                best = (v, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// First-improvement 2-swap descent.
fn descend(tables: &[TreeTable], m: usize, mut perm: Vec<usize>) -> (f64, Vec<usize>) {
    let mut sums: Vec<Vec<f64>> = tables.iter().map(|t| t.sums(&perm)).collect();
    let mut total: f64 = tables.iter().zip(&sums).map(|(t, s)| t.cost(s)).sum();
    for _sweep in 0..100 {
        let mut improved = false;
        for k in 0..m {
            for l in k + 1..m {
                let mut next = perm.clone();
                next.swap(k, l);
                let mut new_sums = Vec::with_capacity(tables.len());
                let mut new_total = 0.0;
                for (a, t) in tables.iter().enumerate() {
                    let mut s = sums[a].clone();
                    for c in t.touching(m, k, l) {
                        let (old, new) = (t.image(c, &perm), t.image(c, &next));
                        for (b, sb) in s.iter_mut().enumerate() {
                            *sb += t.term(b, c, new) - t.term(b, c, old);
                        }
                    }
                    new_total += t.cost(&s);
                    new_sums.push(s);
                }
                if new_total < total - 1e-12 * total.max(1e-300) {
                    perm = next;
                    sums = new_sums;
                    total = new_total;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    // resum from scratch so the reported value does not carry drift
    (total_cost(tables, &perm), perm)
}

fn summary(t: &TreeTable, vals: &[f64], k: usize, m: usize) -> f64 {
    let c = t.diag(k, m);
    (0..t.weights.len()).map(|b| vals[(b * t.tuples + c) * t.dim..(b * t.tuples + c + 1) * t.dim].iter().sum::<f64>()).sum()
}

fn sorted_start(tables: &[TreeTable], m: usize) -> Vec<usize> {
    let key = |k: usize, first: bool| -> f64 {
        tables.iter().map(|t| summary(t, if first { &t.f } else { &t.g }, k, m)).sum()
    };
    let mut fs: Vec<usize> = (0..m).collect();
    let mut gs: Vec<usize> = (0..m).collect();
    fs.sort_by(|&a, &b| key(a, true).total_cmp(&key(b, true)));
    gs.sort_by(|&a, &b| key(a, false).total_cmp(&key(b, false)));
    let mut perm = vec![0; m];
    for (a, b) in fs.into_iter().zip(gs) {
        perm[a] = b;
    }
    perm
}

fn greedy_start(tables: &[TreeTable], m: usize) -> Vec<usize> {
    let single = |k: usize, l: usize| -> f64 {
        tables
            .iter()
            .map(|t| {
                let (ck, cl) = (t.diag(k, m), t.diag(l, m));
                (0..t.weights.len()).map(|b| t.weights[b] * t.term(b, ck, cl)).fold(0.0, f64::max)
            })
            .sum()
    };
    let mut used = vec![false; m];
    let mut perm = vec![0; m];
    for (k, slot) in perm.iter_mut().enumerate() {
        let l = (0..m).filter(|&l| !used[l]).min_by(|&a, &b| single(k, a).total_cmp(&single(k, b))).expect("free atom");
        used[l] = true;
        *slot = l;
    }
    perm
}

/// Upper bound on `ρ(f, g)` over permutation couplings of the atoms:
/// `Σ_T sup_{s<t} (mean_c |⟨f,T⟩(c) − ⟨g,T⟩(π c)|^{q[T]})^{1/q[T]} / |t − s|^{𝒢[T]}`,
/// with `π` applied to every hyperedge coordinate of the atom tuple `c`.
pub fn rho_estimate(f: &AtomicLift, g: &AtomicLift, forests: &[LionsForest], pair: &DualPair, opts: &RhoOptions) -> Result<RhoReport> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch(format!("{} atoms against {}", f.len(), g.len())));
    }
    let m = f.len();
    if m == 0 {
        return Err(Error::EmptyInput("no atoms".into()));
    }
    let tables = build_tables(f, g, forests, pair, opts)?;
    let identity: Vec<usize> = (0..m).collect();
    let identity_value = total_cost(&tables, &identity);
    let exhaustive = m <= opts.exhaustive_max;
    let (value, permutation) = if exhaustive {
        (0..m)
            .into_par_iter()
            .map(|first| best_with_first(&tables, m, first))
            .collect::<Vec<_>>()
            .into_iter()
            .fold((identity_value, identity.clone()), |acc, x| if x.0 < acc.0 { x } else { acc })
    } else {
        let starts = vec![identity.clone(), sorted_start(&tables, m), greedy_start(&tables, m)];
        starts
            .into_par_iter()
            .map(|p| descend(&tables, m, p))
            .collect::<Vec<_>>()
            .into_iter()
            .fold((identity_value, identity.clone()), |acc, x| if x.0 < acc.0 { x } else { acc })
    };
    Ok(RhoReport { value, identity_value, permutation, exhaustive, grid_level: opts.grid_level })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathlift::RandomWalk;

    fn tr() -> Truncation {
        Truncation::new(3.0, 1.0, 1.0, 1).unwrap()
    }

    #[test]
    fn dual_pair_formulas() {
        let t = Truncation::new(4.0, 1.0, 1.0, 2).unwrap();
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        assert_eq!(p.q_nodes(2), 4.0);
        assert!((p.p_nodes(2) - 8.0 / 6.0).abs() < 1e-15);
        assert!((p.p_nodes(1) - 8.0 / 7.0).abs() < 1e-15);
        assert!(DualPair::new(2.0, 8.0, &t).is_err());
        assert!(DualPair::new(1.0, 4.0, &t).is_err());
    }

    #[test]
    fn dual_conditions_hold_with_equality() {
        let t = tr();
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        let r = check_dual_conditions(&p, &t);
        assert!(r.passed, "{:?}", r.violations);
        assert_eq!(r.equalities, r.triples);
    }

    #[test]
    fn k_constant_at_least_two() {
        let t = tr();
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        assert!(k_constant(&p, &t) >= 2.0);
    }

    #[test]
    fn counit_has_zero_norms() {
        let t = tr();
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        let sampler = RandomWalk { segments: 4, dim: 1, scale: 1.0 };
        let est = NormEstimator::new(t, p, &sampler, 8, 1).unwrap();
        let e = Character::counit(t);
        assert_eq!(est.cc_norm(&e).unwrap().value, 0.0);
        assert_eq!(est.triple_norm(&e).unwrap().value, 0.0);
    }

    #[test]
    fn rho_zero_for_equal_lifts() {
        let t = tr();
        let p = DualPair::new(1.0, 8.0, &t).unwrap();
        let atoms: Vec<_> = [0.5, -1.0, 2.0].iter().map(|&x| Arc::new(PiecewiseLinearPath::linear(&[x]))).collect();
        let zero = Arc::new(PiecewiseLinearPath::linear(&[1.0]));
        let f = AtomicLift::geometric(t, zero, atoms);
        let forests = enumerate_forests(&t);
        let r = rho_estimate(&f, &f, &forests, &p, &RhoOptions { grid_level: 1, ..Default::default() }).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.identity_value, 0.0);
    }

    #[test]
    fn dyadic_pair_count() {
        assert_eq!(dyadic_pairs(0), vec![(0.0, 1.0)]);
        assert_eq!(dyadic_pairs(2).len(), 10);
    }
}
