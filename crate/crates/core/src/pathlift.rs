//! Iterated-integral lifts of piecewise-linear paths onto Lions forests and words.
//!
//! Each node `v` of a forest integrates the `L(v)`-th coordinate of the path
//! attached to its hyperedge (the `ω0` path for `h0`):
//! `X_v(r) = ∫_s^r ∏_{c child of v} X_c(u) dp_v^{L(v)}(u)`, and a forest
//! evaluates to the product of its root values. On piecewise-linear input
//! every `X_v` is a polynomial on each segment of the merged breakpoint grid,
//! so the recursion is exact up to rounding.
//!
//! The result is placed at multi-index `(L(0)-1, ..., L(n-1)-1)`: tensor
//! slot `k` belongs to node `k`. Forests in canonical form (see
//! [`LionsForest::canonical`]) therefore use the canonical traversal order.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

use crate::forest::{dual_forest, merge_hyperedges, LionsForest, Slot};
use crate::hopf::{convolve, Character};
use crate::words::LionsWord;
use crate::{Error, Result};

/// Default bound on the tensor order of a lift.
pub const DEFAULT_MAX_ORDER: usize = 4;

/// A continuous path, linear between strictly increasing breakpoints covering `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathData")]
pub struct PiecewiseLinearPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct PathData {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<PathData> for PiecewiseLinearPath {
    type Error = Error;
    fn try_from(p: PathData) -> Result<Self> {
        PiecewiseLinearPath::new(p.times, p.values)
    }
}

impl PiecewiseLinearPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Domain("a path needs at least two breakpoints with one value each".into()));
        }
        if times.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Domain("breakpoint times must increase strictly".into()));
        }
        if times[0] > 0.0 || *times.last().unwrap() < 1.0 {
            return Err(Error::Domain("breakpoints must cover [0, 1]".into()));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return Err(Error::Domain("path values must share a positive dimension".into()));
        }
        if times.iter().chain(values.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite path data".into()));
        }
        Ok(PiecewiseLinearPath { times, values })
    }

    /// The straight line from `0` at time 0 to `v` at time 1.
    pub fn linear(v: &[f64]) -> Self {
        PiecewiseLinearPath::new(vec![0.0, 1.0], vec![vec![0.0; v.len()], v.to_vec()]).expect("linear path")
    }

    pub fn constant(x: &[f64]) -> Self {
        PiecewiseLinearPath::new(vec![0.0, 1.0], vec![x.to_vec(), x.to_vec()]).expect("constant path")
    }

    /// Linear interpolation of `f` on a uniform grid of `segments` pieces.
    pub fn from_fn(segments: usize, d: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let times: Vec<f64> = (0..=segments).map(|k| k as f64 / segments as f64).collect();
        let values = times.iter().map(|&t| {
            let v = f(t);
            assert_eq!(v.len(), d);
            v
        });
        PiecewiseLinearPath::new(times.clone(), values.collect()).expect("sampled path")
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.times.len() - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.times.len() - 2),
        }
    }

    /// Coordinate `i` (0-based) at time `t`.
    pub fn coord(&self, t: f64, i: usize) -> f64 {
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (x0, x1) = (self.values[k][i], self.values[k + 1][i]);
        x0 + (x1 - x0) * (t - t0) / (t1 - t0)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| self.coord(t, i)).collect()
    }

    /// Slope of coordinate `i` on the segment containing the open interval around `mid`.
    fn slope(&self, mid: f64, i: usize) -> f64 {
        let k = self.segment(mid);
        (self.values[k + 1][i] - self.values[k][i]) / (self.times[k + 1] - self.times[k])
    }

    /// The path `c · x`.
    pub fn scaled(&self, c: f64) -> Self {
        PiecewiseLinearPath {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| c * x).collect()).collect(),
        }
    }

    /// Reads `t,x1,...,xd` rows; a leading non-numeric header row is skipped.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(row) if row.len() >= 2 => {
                    times.push(row[0]);
                    values.push(row[1..].to_vec());
                }
                Ok(_) => return Err(Error::Parse { line: i + 1, msg: "expected t and at least one coordinate".into() }),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::Parse { line: i + 1, msg: e.to_string() }),
            }
        }
        PiecewiseLinearPath::new(times, values).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=self.dim()).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let row: Vec<String> = std::iter::once(t.to_string()).chain(v.iter().map(|x| x.to_string())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Coefficient storage, inline up to sixteen entries.
pub type TensorData = SmallVec<[f64; 16]>;

/// A dense element of `(ℝ^d)^{⊗n}`, row-major with slot 0 most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub dim: usize,
    pub order: usize,
    pub data: TensorData,
}

impl TensorValue {
    pub fn scalar(x: f64) -> Self {
        TensorValue { dim: 1, order: 0, data: smallvec![x] }
    }

    pub fn zeros(dim: usize, order: usize) -> Self {
        TensorValue { dim, order, data: smallvec![0.0; dim.pow(order as u32)] }
    }

    /// `x · e_{i_1} ⊗ ... ⊗ e_{i_n}` with 0-based indices.
    pub fn basis(dim: usize, index: &[usize], x: f64) -> Self {
        let mut t = Self::zeros(dim, index.len());
        let pos = index.iter().fold(0, |acc, &i| acc * dim + i);
        t.data[pos] = x;
        t
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let pos = index.iter().fold(0, |acc, &i| acc * self.dim + i);
        self.data[pos]
    }

    /// The value of an order-0 tensor.
    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.order, 0);
        self.data[0]
    }

    fn common_dim(&self, other: &TensorValue) -> usize {
        match (self.order, other.order) {
            (0, _) => other.dim,
            (_, 0) => self.dim,
            _ => {
                assert_eq!(self.dim, other.dim, "tensor dimensions differ");
                self.dim
            }
        }
    }

    pub fn outer(&self, other: &TensorValue) -> TensorValue {
        let dim = self.common_dim(other);
        let mut data = TensorData::with_capacity(self.data.len() * other.data.len());
        for &a in &self.data {
            for &b in &other.data {
                data.push(a * b);
            }
        }
        TensorValue { dim, order: self.order + other.order, data }
    }

    /// Reorders slots: slot `k` of the result is slot `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> TensorValue {
        assert_eq!(perm.len(), self.order);
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return self.clone();
        }
        let n = self.order;
        let d = self.dim;
        let mut stride: SmallVec<[usize; 8]> = smallvec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            stride[k] = stride[k + 1] * d;
        }
        let mut out: TensorData = smallvec![0.0; self.data.len()];
        let mut idx: SmallVec<[usize; 8]> = smallvec![0usize; n];
        for (pos, slot) in out.iter_mut().enumerate() {
            let mut rem = pos;
            for k in (0..n).rev() {
                idx[k] = rem % d;
                rem /= d;
            }
            let src: usize = (0..n).map(|k| idx[k] * stride[perm[k]]).sum();
            *slot = self.data[src];
        }
        TensorValue { dim: d, order: n, data: out }
    }

    pub fn add_assign_scaled(&mut self, c: f64, other: &TensorValue) {
        assert_eq!(self.order, other.order);
        if self.order > 0 {
            assert_eq!(self.dim, other.dim);
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&self, c: f64) -> TensorValue {
        TensorValue { dim: self.dim, order: self.order, data: self.data.iter().map(|x| c * x).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &TensorValue) -> f64 {
        assert_eq!(self.order, other.order);
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn dot(&self, other: &TensorValue) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// One path for the `ω0`/`h0` slot and one per hyperedge, in hyperedge order.
#[derive(Clone, Debug)]
pub struct SampleAssignment {
    pub zero: Arc<PiecewiseLinearPath>,
    pub hyper: Vec<Arc<PiecewiseLinearPath>>,
}

impl SampleAssignment {
    pub fn new(zero: PiecewiseLinearPath, hyper: Vec<PiecewiseLinearPath>) -> Self {
        SampleAssignment { zero: Arc::new(zero), hyper: hyper.into_iter().map(Arc::new).collect() }
    }

    pub fn path(&self, s: Slot) -> &Arc<PiecewiseLinearPath> {
        match s {
            Slot::Zero => &self.zero,
            Slot::Hyper(k) => &self.hyper[k],
        }
    }

    /// Draws every slot of `t` independently from `sampler`.
    pub fn draw(t: &LionsForest, sampler: &dyn PathSampler, rng: &mut dyn RngCore) -> Self {
        let zero = sampler.sample(rng);
        let hyper = (0..t.hyperedges().len()).map(|_| sampler.sample(rng)).collect();
        SampleAssignment::new(zero, hyper)
    }

    /// Samples for a forest whose node `k` corresponds to node `map[k]` of
    /// `origin`; each hyperedge takes the path of its origin's slot.
    pub fn routed(&self, origin: &LionsForest, sub: &LionsForest, map: &[usize]) -> SampleAssignment {
        let hyper = sub.hyperedges().iter().map(|h| self.path(origin.slot(map[h[0]])).clone()).collect();
        let zero = match sub.h0().first() {
            Some(&v) => self.path(origin.slot(map[v])).clone(),
            None => self.zero.clone(),
        };
        SampleAssignment { zero, hyper }
    }
}

fn check_times(s: f64, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidTime(format!("query times {s}, {t} outside [0, 1]")));
    }
    if s > t {
        return Err(Error::InvalidTime(format!("s = {s} > t = {t}")));
    }
    Ok(())
}

/// Merged breakpoints of `paths` inside `(s, t)`, with `s` and `t` added.
fn grid(paths: &[&PiecewiseLinearPath], s: f64, t: f64) -> Vec<f64> {
    let mut g = vec![s, t];
    for p in paths {
        g.extend(p.times.iter().copied().filter(|&x| x > s && x < t));
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    g
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `c + m ∫_0^τ p`, as a polynomial in `τ`.
fn poly_integrate(p: &[f64], m: f64, c: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len() + 1);
    out.push(c);
    for (k, a) in p.iter().enumerate() {
        out.push(m * a / (k + 1) as f64);
    }
    out
}

fn check_samples(t: &LionsForest, samples: &SampleAssignment) -> Result<usize> {
    if samples.hyper.len() != t.hyperedges().len() {
        return Err(Error::SampleMismatch(format!(
            "{} hyperedge samples for {} hyperedges",
            samples.hyper.len(),
            t.hyperedges().len()
        )));
    }
    let d = samples.zero.dim();
    if samples.hyper.iter().any(|p| p.dim() != d) {
        return Err(Error::SampleMismatch("paths of different dimensions".into()));
    }
    if let Some(&l) = t.labels().iter().find(|&&l| l > d) {
        return Err(Error::SampleMismatch(format!("label {l} exceeds path dimension {d}")));
    }
    Ok(d)
}

fn tensor_of(t_labels: &[usize], d: usize, x: f64) -> TensorValue {
    let idx: Vec<usize> = t_labels.iter().map(|l| l - 1).collect();
    TensorValue::basis(d, &idx, x)
}

/// `⟨J_{s,t}, T⟩` for the given samples with the default maximal order.
pub fn tree_integral(t: &LionsForest, samples: &SampleAssignment, s: f64, u: f64) -> Result<TensorValue> {
    tree_integral_with(t, samples, s, u, DEFAULT_MAX_ORDER)
}

/// Scalar coefficient of the lift of `t`, without order checks.
pub(crate) fn tree_integral_scalar(t: &LionsForest, samples: &SampleAssignment, s: f64, u: f64) -> f64 {
    let paths: Vec<&PiecewiseLinearPath> = t.slots().iter().map(|&sl| samples.path(sl).as_ref()).collect();
    node_integral(t.parents(), t.labels(), &paths, s, u)
}

/// Product over roots of the iterated integrals of a labelled forest whose
/// node `v` is driven by `paths[v]`.
pub(crate) fn node_integral(parent: &[Option<usize>], labels: &[usize], paths: &[&PiecewiseLinearPath], s: f64, u: f64) -> f64 {
    let n = parent.len();
    if n == 0 {
        return 1.0;
    }
    let g = grid(paths, s, u);
    let mut children = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (v, p) in parent.iter().enumerate() {
        match p {
            Some(q) => children[*q].push(v),
            None => roots.push(v),
        }
    }
    let mut depth = vec![0usize; n];
    for (v, dv) in depth.iter_mut().enumerate() {
        let mut w = v;
        while let Some(q) = parent[w] {
            *dv += 1;
            w = q;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(depth[v]));
    // value of each node at the end of every processed segment, and its
    // polynomial on the current segment in a row of `poly` (degree <= n)
    let w = n + 1;
    let mut start = vec![0.0; n];
    let mut poly = vec![0.0; n * w];
    let mut len = vec![0usize; n];
    let (mut acc, mut tmp) = (vec![0.0; w], vec![0.0; w]);
    for seg in g.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        for &v in &order {
            acc[0] = 1.0;
            let mut la = 1;
            for &c in &children[v] {
                let pc = &poly[c * w..c * w + len[c]];
                let lb = la + pc.len() - 1;
                tmp[..lb].fill(0.0);
                for (i, x) in acc[..la].iter().enumerate() {
                    for (j, y) in pc.iter().enumerate() {
                        tmp[i + j] += x * y;
                    }
                }
                std::mem::swap(&mut acc, &mut tmp);
                la = lb;
            }
            let m = paths[v].slope(mid, labels[v] - 1);
            let row = &mut poly[v * w..v * w + la + 1];
            row[0] = start[v];
            for (k, x) in acc[..la].iter().enumerate() {
                row[k + 1] = m * x / (k + 1) as f64;
            }
            len[v] = la + 1;
        }
        for v in 0..n {
            start[v] = poly_eval(&poly[v * w..v * w + len[v]], h);
        }
    }
    roots.iter().map(|&r| start[r]).product()
}

pub fn tree_integral_with(t: &LionsForest, samples: &SampleAssignment, s: f64, u: f64, max_order: usize) -> Result<TensorValue> {
    check_times(s, u)?;
    if t.len() > max_order {
        return Err(Error::OrderTooLarge { order: t.len(), max: max_order });
    }
    let d = check_samples(t, samples)?;
    let x = tree_integral_scalar(t, samples, s, u);
    Ok(tensor_of(t.labels(), d, x))
}

/// `⟨I_{s,t}, W⟩`: the iterated integral over `s < r_1 < ... < r_n < t`
/// of `dp_1^{w_1}(r_1) ... dp_n^{w_n}(r_n)`, slot `k` holding letter `k`.
pub fn word_integral(w: &LionsWord, samples: &SampleAssignment, s: f64, u: f64) -> Result<TensorValue> {
    check_times(s, u)?;
    let n = w.len();
    if n > DEFAULT_MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: DEFAULT_MAX_ORDER });
    }
    if samples.hyper.len() != w.blocks().len() {
        return Err(Error::SampleMismatch(format!("{} samples for {} blocks", samples.hyper.len(), w.blocks().len())));
    }
    let d = samples.zero.dim();
    if let Some(&l) = w.letters().iter().find(|&&l| l > d) {
        return Err(Error::SampleMismatch(format!("letter {l} exceeds path dimension {d}")));
    }
    if n == 0 {
        return Ok(TensorValue::scalar(1.0));
    }
    let paths: Vec<&PiecewiseLinearPath> = (1..=n)
        .map(|pos| match w.block_of(pos) {
            None => samples.zero.as_ref(),
            Some(k) => samples.hyper[k].as_ref(),
        })
        .collect();
    let g = grid(&paths, s, u);
    let mut start = vec![0.0; n];
    for win in g.windows(2) {
        let (a, b) = (win[0], win[1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let mut prev: Vec<f64> = vec![1.0];
        let mut vals = vec![0.0; n];
        for k in 0..n {
            let m = paths[k].slope(mid, w.letters()[k] - 1);
            let p = poly_integrate(&prev, m, start[k]);
            vals[k] = poly_eval(&p, h);
            prev = p;
        }
        start = vals;
    }
    let idx: Vec<usize> = w.letters().iter().map(|l| l - 1).collect();
    Ok(TensorValue::basis(d, &idx, start[n - 1]))
}

/// Evaluates lifted characters through [`tree_integral`].
pub struct LiftEvaluator {
    pub s: f64,
    pub t: f64,
}

impl crate::hopf::TreeEvaluator for LiftEvaluator {
    fn eval(&self, tree: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue> {
        let d = check_samples(tree, samples)?;
        Ok(tensor_of(tree.labels(), d, tree_integral_scalar(tree, samples, self.s, self.t)))
    }
}

/// The geometric lift `J_{s,t}` as a McKean-Vlasov character.
pub fn lift_character(trunc: crate::forest::Truncation, s: f64, t: f64) -> Result<Character> {
    check_times(s, t)?;
    Ok(Character::from_tree_evaluator(trunc, Arc::new(LiftEvaluator { s, t })))
}

/// `‖⟨J_{s,u}, T⟩ − ⟨J_{s,t} ∗ J_{t,u}, T⟩‖_∞`.
pub fn chen_check(tr: crate::forest::Truncation, t: &LionsForest, samples: &SampleAssignment, s: f64, m: f64, u: f64) -> Result<f64> {
    if !(s <= m && m <= u) {
        return Err(Error::InvalidTime(format!("need s <= t <= u, got {s}, {m}, {u}")));
    }
    let whole = lift_character(tr, s, u)?;
    let split = convolve(&lift_character(tr, s, m)?, &lift_character(tr, m, u)?)?;
    Ok(whole.eval(t, samples)?.max_abs_diff(&split.eval(t, samples)?))
}

/// Compares `T` evaluated with slot `b` fed the sample of slot `a` against the
/// forest obtained by merging `a` and `b`.
pub fn characteristic_check(f: &Character, t: &LionsForest, a: Slot, b: Slot, samples: &SampleAssignment) -> Result<f64> {
    let merged = merge_hyperedges(t, a, b)?;
    let shared = samples.path(a).clone();
    let mut fed = samples.clone();
    match b {
        Slot::Zero => fed.zero = shared.clone(),
        Slot::Hyper(k) => fed.hyper[k] = shared.clone(),
    }
    let ids: Vec<usize> = (0..t.len()).collect();
    let merged_samples = fed.routed(t, &merged, &ids);
    Ok(f.eval(t, &fed)?.max_abs_diff(&f.eval(&merged, &merged_samples)?))
}

/// Every edge of the dual forest of `t`, as slot pairs.
pub fn dual_edges(t: &LionsForest) -> Vec<(Slot, Slot)> {
    let d = dual_forest(t);
    d.edges.iter().map(|&(x, y)| (d.vertices[x], d.vertices[y])).collect()
}

/// Source of random piecewise-linear paths.
pub trait PathSampler: Sync {
    fn sample(&self, rng: &mut dyn RngCore) -> PiecewiseLinearPath;
    fn dim(&self) -> usize;
    /// Equally weighted atoms, when the law is a finite uniform mixture.
    fn atoms(&self) -> Option<Vec<PiecewiseLinearPath>> {
        None
    }
}

/// Always the same path.
pub struct Deterministic(pub PiecewiseLinearPath);

impl PathSampler for Deterministic {
    fn sample(&self, _rng: &mut dyn RngCore) -> PiecewiseLinearPath {
        self.0.clone()
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn atoms(&self) -> Option<Vec<PiecewiseLinearPath>> {
        Some(vec![self.0.clone()])
    }
}

/// Uniform choice among finitely many atoms.
pub struct FiniteSupport {
    pub atoms: Vec<PiecewiseLinearPath>,
}

impl PathSampler for FiniteSupport {
    fn sample(&self, rng: &mut dyn RngCore) -> PiecewiseLinearPath {
        let k = rng.random_range(0..self.atoms.len());
        self.atoms[k].clone()
    }
    fn dim(&self) -> usize {
        self.atoms[0].dim()
    }
    fn atoms(&self) -> Option<Vec<PiecewiseLinearPath>> {
        Some(self.atoms.clone())
    }
}

/// Gaussian random walk with `segments` uniform pieces, scaled so the endpoint has variance `scale²`.
pub struct RandomWalk {
    pub segments: usize,
    pub dim: usize,
    pub scale: f64,
}

impl PathSampler for RandomWalk {
    fn sample(&self, rng: &mut dyn RngCore) -> PiecewiseLinearPath {
        let sd = self.scale / (self.segments as f64).sqrt();
        let mut x = vec![0.0; self.dim];
        let mut values = vec![x.clone()];
        for _ in 0..self.segments {
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi += sd * z;
            }
            values.push(x.clone());
        }
        let times = (0..=self.segments).map(|k| k as f64 / self.segments as f64).collect();
        PiecewiseLinearPath::new(times, values).expect("random walk")
    }
    fn dim(&self) -> usize {
        self.dim
    }
}

/// Lévy–Ciesielski construction of Brownian motion truncated after `level`
/// Schauder generations; piecewise linear on the dyadic grid of mesh `2^-level`.
pub struct LevyCiesielski {
    pub level: usize,
    pub dim: usize,
}

impl PathSampler for LevyCiesielski {
    fn sample(&self, rng: &mut dyn RngCore) -> PiecewiseLinearPath {
        let m = 1usize << self.level;
        let times: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
        let mut values = vec![vec![0.0; self.dim]; m + 1];
        for i in 0..self.dim {
            let z0: f64 = rng.sample(StandardNormal);
            for (j, &t) in times.iter().enumerate() {
                values[j][i] = z0 * t;
            }
            for n in 0..self.level {
                let width = 1usize << (self.level - n);
                let height = 0.5 * (2f64).powf(-(n as f64) / 2.0);
                for k in 0..(1usize << n) {
                    let z: f64 = rng.sample(StandardNormal);
                    let lo = k * width;
                    for (off, row) in values[lo..=lo + width].iter_mut().enumerate() {
                        // tent of height 2^{-n/2}/2 over [k 2^-n, (k+1) 2^-n]
                        let frac = off as f64 / width as f64;
                        let tent = if frac <= 0.5 { 2.0 * frac } else { 2.0 * (1.0 - frac) };
                        row[i] += z * height * tent;
                    }
                }
            }
        }
        PiecewiseLinearPath::new(times, values).expect("Schauder sum")
    }
    fn dim(&self) -> usize {
        self.dim
    }
}

/// Log-log regression of increment moments against the increment length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    pub slope: f64,
    pub lower: f64,
    pub upper: f64,
    pub scales: Vec<f64>,
    pub moments: Vec<f64>,
}

/// Estimates `E[|⟨f_{s,s+h}, T⟩|^q]^{1/q}` for `h = 2^-1, ..., 2^-levels`
/// and regresses the logarithm on `log h`. The band is two regression
/// standard errors. `lift` maps `(s, t)` to a character.
pub fn holder_diagnostic(
    lift: &dyn Fn(f64, f64) -> Result<Character>,
    t: &LionsForest,
    sampler: &dyn PathSampler,
    q: f64,
    samples: usize,
    levels: usize,
    rng: &mut dyn RngCore,
) -> Result<HolderReport> {
    if samples < 2 || levels < 2 {
        return Err(Error::InsufficientSamples("need at least two samples and two scales".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut scales = Vec::new();
    let mut moments = Vec::new();
    for k in 1..=levels {
        let h = 0.5f64.powi(k as i32);
        let mut acc = Vec::with_capacity(samples);
        for _ in 0..samples {
            let s = rng.random::<f64>() * (1.0 - h);
            let f = lift(s, s + h)?;
            let smp = SampleAssignment::draw(t, sampler, rng);
            acc.push(f.eval(t, &smp)?.norm().powf(q));
        }
        let mom = (crate::empirical::pairwise_sum(&acc) / samples as f64).powf(1.0 / q);
        scales.push(h);
        moments.push(mom);
        if mom > 0.0 {
            xs.push(h.ln());
            ys.push(mom.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("increments vanish at every scale".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = if xs.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(HolderReport { slope, lower: slope - 2.0 * se, upper: slope + 2.0 * se, scales, moments })
}
