//! Lions words: the coupled shuffle algebra with deconcatenation.
//!
//! Positions are 1-based. `p0` plays the part of `h0`; the blocks of `P`
//! are the ordinary hyperedges, kept sorted by their first position.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::forest::LionsForest;
use crate::partitions::{PartitionSequence, SetPartition};
use crate::pathlift::{word_integral, SampleAssignment, TensorValue};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LionsWord {
    letters: Vec<usize>,
    p0: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct WordJson {
    letters: Vec<usize>,
    p0: Vec<usize>,
    #[serde(rename = "P")]
    blocks: Vec<Vec<usize>>,
}

impl Serialize for LionsWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WordJson { letters: self.letters.clone(), p0: self.p0.clone(), blocks: self.blocks.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LionsWord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = WordJson::deserialize(d)?;
        LionsWord::new(j.letters, j.p0, j.blocks).map_err(serde::de::Error::custom)
    }
}

impl LionsWord {
    pub fn new(letters: Vec<usize>, mut p0: Vec<usize>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n = letters.len();
        if letters.contains(&0) {
            return Err(Error::InvalidWord("letters are 1-based".into()));
        }
        let mut seen = vec![false; n + 1];
        for &p in p0.iter().chain(blocks.iter().flatten()) {
            if p == 0 || p > n {
                return Err(Error::InvalidWord(format!("position {p} outside 1..={n}")));
            }
            if seen[p] {
                return Err(Error::InvalidWord(format!("position {p} listed twice")));
            }
            seen[p] = true;
        }
        if let Some(p) = (1..=n).find(|&p| !seen[p]) {
            return Err(Error::InvalidWord(format!("position {p} in no block")));
        }
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidWord("empty block".into()));
        }
        p0.sort_unstable();
        Ok(Self::assemble(letters, p0, blocks))
    }

    fn assemble(letters: Vec<usize>, mut p0: Vec<usize>, blocks: Vec<Vec<usize>>) -> Self {
        p0.sort_unstable();
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .filter(|b| !b.is_empty())
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort();
        LionsWord { letters, p0, blocks }
    }

    pub fn unit() -> Self {
        LionsWord { letters: vec![], p0: vec![], blocks: vec![] }
    }

    /// `(w, a)`: positions with `a_k = 0` form `p0`, equal positive values share a block.
    pub fn from_sequence(letters: Vec<usize>, a: &PartitionSequence) -> Result<Self> {
        if a.len() != letters.len() {
            return Err(Error::LengthMismatch(format!("sequence of length {} for {} letters", a.len(), letters.len())));
        }
        let mut p0 = Vec::new();
        let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &v) in a.entries().iter().enumerate() {
            if v == 0 {
                p0.push(k + 1);
            } else {
                blocks.entry(v).or_default().push(k + 1);
            }
        }
        LionsWord::new(letters, p0, blocks.into_values().collect())
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[usize] {
        &self.letters
    }

    pub fn p0(&self) -> &[usize] {
        &self.p0
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Block index of a 1-based position, `None` for `p0`.
    pub fn block_of(&self, pos: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&pos))
    }

    /// `(|p0|, |w| − |p0|)`.
    pub fn grading(&self) -> (usize, usize) {
        (self.p0.len(), self.len() - self.p0.len())
    }

    /// `E[(w, p0, P)] = (w, ∅, P ∪ {p0})`.
    pub fn expectation(&self) -> Self {
        let mut blocks = self.blocks.clone();
        blocks.push(self.p0.clone());
        Self::assemble(self.letters.clone(), vec![], blocks)
    }

    /// The subword on the 1-based positions `lo+1..=hi`, positions renumbered from 1.
    pub fn slice(&self, lo: usize, hi: usize) -> LionsWord {
        let inside = |p: &usize| *p > lo && *p <= hi;
        let shift = |p: &usize| p - lo;
        Self::assemble(
            self.letters[lo..hi].to_vec(),
            self.p0.iter().filter(|p| inside(p)).map(shift).collect(),
            self.blocks.iter().map(|b| b.iter().filter(|p| inside(p)).map(shift).collect()).collect(),
        )
    }

    /// The word read backwards.
    pub fn reversed(&self) -> LionsWord {
        let n = self.len();
        let flip = |p: &usize| n + 1 - p;
        let mut letters = self.letters.clone();
        letters.reverse();
        Self::assemble(letters, self.p0.iter().map(flip).collect(), self.blocks.iter().map(|b| b.iter().map(flip).collect()).collect())
    }
}

/// Formal integer combination of words.
pub type WordSum = BTreeMap<LionsWord, i64>;

fn riffles(m: usize, n: usize) -> Vec<Vec<bool>> {
    // true marks a letter from the first word
    if m == 0 && n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    if m > 0 {
        for mut r in riffles(m - 1, n) {
            r.insert(0, true);
            out.push(r);
        }
    }
    if n > 0 {
        for mut r in riffles(m, n - 1) {
            r.insert(0, false);
            out.push(r);
        }
    }
    out
}

/// The terms of `u ш̃ v`, one per riffle shuffle. Entry `k` of the map is the
/// 0-based position in the concatenation `u v` that lands at position `k + 1`.
pub fn coupled_shuffle_terms(u: &LionsWord, v: &LionsWord) -> Vec<(LionsWord, Vec<usize>)> {
    let (m, n) = (u.len(), v.len());
    riffles(m, n)
        .into_iter()
        .map(|r| {
            let mut origin = Vec::with_capacity(m + n);
            let (mut i, mut j) = (0, 0);
            for &from_u in &r {
                if from_u {
                    origin.push(i);
                    i += 1;
                } else {
                    origin.push(m + j);
                    j += 1;
                }
            }
            let mut inv = vec![0; m + n];
            for (k, &o) in origin.iter().enumerate() {
                inv[o] = k + 1;
            }
            let letters = origin.iter().map(|&o| if o < m { u.letters[o] } else { v.letters[o - m] }).collect();
            let pu = |p: &usize| inv[p - 1];
            let pv = |p: &usize| inv[m + p - 1];
            let p0 = u.p0.iter().map(pu).chain(v.p0.iter().map(pv)).collect();
            let blocks = u
                .blocks
                .iter()
                .map(|b| b.iter().map(pu).collect())
                .chain(v.blocks.iter().map(|b| b.iter().map(pv).collect()))
                .collect();
            (LionsWord::assemble(letters, p0, blocks), origin)
        })
        .collect()
}

pub fn coupled_shuffle(u: &LionsWord, v: &LionsWord) -> WordSum {
    let mut out = WordSum::new();
    for (w, _) in coupled_shuffle_terms(u, v) {
        *out.entry(w).or_default() += 1;
    }
    out
}

/// Bilinear extension of the shuffle to formal sums.
pub fn shuffle_sums(a: &WordSum, b: &WordSum) -> WordSum {
    let mut out = WordSum::new();
    for (u, cu) in a {
        for (v, cv) in b {
            for (w, c) in coupled_shuffle(u, v) {
                *out.entry(w).or_default() += cu * cv * c;
            }
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

/// A coupled tuple of words; blocks are indexed consecutively across parts.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CoupledWords {
    pub parts: Vec<LionsWord>,
    pub coupling: SetPartition,
}

/// Couples the blocks of consecutive slices of `w` by the block they come from.
fn slices(w: &LionsWord, cuts: &[usize]) -> CoupledWords {
    let mut parts = Vec::new();
    let mut by_origin: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut off = 0;
    for win in cuts.windows(2) {
        let part = w.slice(win[0], win[1]);
        for (k, b) in part.blocks().iter().enumerate() {
            let origin = w.block_of(b[0] + win[0]).expect("block position");
            by_origin.entry(origin).or_default().push(off + k);
        }
        off += part.blocks().len();
        parts.push(part);
    }
    CoupledWords { parts, coupling: SetPartition::new(by_origin.into_values().collect()).expect("disjoint") }
}

/// `Δ W = W × 𝟏 + 𝟏 × W + Σ_{i=1}^{n−1} W^{(i,1)} ×^P W^{(i,2)}`, ordered by split point.
pub fn deconcat(w: &LionsWord) -> Vec<CoupledWords> {
    let n = w.len();
    (0..=n).rev().map(|i| slices(w, &[0, i, n])).collect()
}

/// `(Δ ⊗̃ I) Δ = (I ⊗̃ Δ) Δ` on `w`.
pub fn check_deconcat_coassociative(w: &LionsWord) -> bool {
    let n = w.len();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..=n {
        for j in 0..=i {
            // split the prefix of length i at j
            lhs.push(slices(w, &[0, j, i, n]));
        }
        for j in i..=n {
            rhs.push(slices(w, &[0, i, j, n]));
        }
    }
    lhs.sort();
    rhs.sort();
    lhs == rhs
}

/// The literal-embedding of a word as a ladder: node `k − 1` carries position `k`,
/// the last letter is the root. Rejects words whose blocks are not hyperedges.
pub fn word_to_ladder(w: &LionsWord) -> Result<LionsForest> {
    let n = w.len();
    let parent = (0..n).map(|k| if k + 1 < n { Some(k + 1) } else { None }).collect();
    let node = |p: &usize| p - 1;
    let forest = LionsForest::from_parts(
        parent,
        w.letters.clone(),
        w.p0.iter().map(node).collect(),
        w.blocks.iter().map(|b| b.iter().map(node).collect()).collect(),
    )?;
    forest.validate().map_err(|v| Error::InvalidForest(v.to_string()))?;
    Ok(forest)
}

/// Values of a word character on single words.
pub trait WordEvaluator: Send + Sync {
    fn eval(&self, w: &LionsWord, samples: &SampleAssignment) -> Result<TensorValue>;
}

/// The signature `I_{s,t}` on words.
pub struct WordSignature {
    pub s: f64,
    pub t: f64,
}

impl WordEvaluator for WordSignature {
    fn eval(&self, w: &LionsWord, samples: &SampleAssignment) -> Result<TensorValue> {
        word_integral(w, samples, self.s, self.t)
    }
}

enum WOp {
    Epsilon,
    Base(Arc<dyn WordEvaluator>),
    Convolve(WordCharacter, WordCharacter),
    Antipode(WordCharacter),
}

/// A linear functional on words assembled from a base evaluator.
#[derive(Clone)]
pub struct WordCharacter(Arc<WOp>);

impl WordCharacter {
    pub fn epsilon() -> Self {
        WordCharacter(Arc::new(WOp::Epsilon))
    }

    pub fn from_evaluator(ev: Arc<dyn WordEvaluator>) -> Self {
        WordCharacter(Arc::new(WOp::Base(ev)))
    }

    pub fn signature(s: f64, t: f64) -> Self {
        Self::from_evaluator(Arc::new(WordSignature { s, t }))
    }

    pub fn eval(&self, w: &LionsWord, samples: &SampleAssignment) -> Result<TensorValue> {
        if samples.hyper.len() != w.blocks().len() {
            return Err(Error::SampleMismatch(format!("{} samples for {} blocks", samples.hyper.len(), w.blocks().len())));
        }
        let mut ctx = WCtx { top: w, samples, d: samples.zero.dim(), cache: HashMap::new() };
        ctx.eval(self, 0, w.len())
    }
}

/// `f ∗ g = ш̃ ∘ (f ⊗̃ g) ∘ Δ`, evaluated through deconcatenation.
pub fn word_convolve(f: &WordCharacter, g: &WordCharacter) -> WordCharacter {
    WordCharacter(Arc::new(WOp::Convolve(f.clone(), g.clone())))
}

/// The convolution inverse: `S W = −W − Σ_{i=1}^{n−1} S(W^{(i,1)}) W^{(i,2)}`.
pub fn word_antipode(f: &WordCharacter) -> WordCharacter {
    WordCharacter(Arc::new(WOp::Antipode(f.clone())))
}

struct WCtx<'a> {
    top: &'a LionsWord,
    samples: &'a SampleAssignment,
    d: usize,
    cache: HashMap<(usize, usize, usize), TensorValue>,
}

impl WCtx<'_> {
    fn routed(&self, lo: usize, part: &LionsWord) -> SampleAssignment {
        let hyper = part.blocks().iter().map(|b| self.samples.hyper[self.top.block_of(b[0] + lo).expect("block")].clone()).collect();
        SampleAssignment { zero: self.samples.zero.clone(), hyper }
    }

    fn eval(&mut self, f: &WordCharacter, lo: usize, hi: usize) -> Result<TensorValue> {
        let id = Arc::as_ptr(&f.0) as *const () as usize;
        if let Some(v) = self.cache.get(&(id, lo, hi)) {
            return Ok(v.clone());
        }
        let v = match f.0.as_ref() {
            WOp::Epsilon => {
                if lo == hi {
                    TensorValue::scalar(1.0)
                } else {
                    TensorValue::zeros(self.d, hi - lo)
                }
            }
            WOp::Base(ev) => {
                let part = self.top.slice(lo, hi);
                let smp = self.routed(lo, &part);
                ev.eval(&part, &smp)?
            }
            WOp::Convolve(a, b) => {
                let mut acc = TensorValue::zeros(self.d, hi - lo);
                for i in lo..=hi {
                    let x = self.eval(a, lo, i)?;
                    let y = self.eval(b, i, hi)?;
                    acc.add_assign_scaled(1.0, &x.outer(&y));
                }
                acc
            }
            WOp::Antipode(a) => {
                if lo == hi {
                    TensorValue::scalar(1.0)
                } else {
                    let mut acc = self.eval(a, lo, hi)?.scale(-1.0);
                    for i in lo + 1..hi {
                        let x = self.eval(f, lo, i)?;
                        let y = self.eval(a, i, hi)?;
                        acc.add_assign_scaled(-1.0, &x.outer(&y));
                    }
                    acc
                }
            }
        };
        self.cache.insert((id, lo, hi), v.clone());
        Ok(v)
    }
}
