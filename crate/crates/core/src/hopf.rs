//! The coupled coproduct on Lions forests and the group of McKean-Vlasov characters.
//!
//! `Δ` is computed recursively from three rules: the product rule across
//! ⊛-factors, the admissible-cut rule on single trees, and the expectation
//! rule `Δ E = (E ⊗̃ E) Δ` for trees sharing a root hyperedge. Terms are
//! first produced with node maps into the input forest; the coupling of each
//! term joins hyperedges that descend from the same slot of the input.
//!
//! Characters are evaluated on concrete forests through masks of node
//! subsets. Tensor slots follow increasing node id.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;
use serde_json::json;

use crate::forest::{admissible_cuts, origin_coupling, LionsForest, Slot, Truncation};
use crate::partitions::{PartitionSequence, SetPartition};
use crate::pathlift::{PathSampler, PiecewiseLinearPath, SampleAssignment, TensorValue};
use crate::{Error, Result};

/// A forest together with the ids its nodes carry in some ambient forest.
#[derive(Clone, Debug)]
pub struct Piece {
    pub forest: LionsForest,
    pub nodes: Vec<usize>,
}

impl Piece {
    fn whole(f: &LionsForest) -> Piece {
        Piece { forest: f.clone(), nodes: (0..f.len()).collect() }
    }

    fn unit() -> Piece {
        Piece { forest: LionsForest::unit(), nodes: vec![] }
    }

    fn of(f: &LionsForest, nodes: &[usize]) -> Piece {
        let (forest, nodes) = f.restrict(nodes);
        Piece { forest, nodes }
    }

    fn through(&self, map: &[usize]) -> Piece {
        Piece { forest: self.forest.clone(), nodes: self.nodes.iter().map(|&v| map[v]).collect() }
    }

    fn product(&self, other: &Piece) -> Piece {
        let mut nodes = self.nodes.clone();
        nodes.extend_from_slice(&other.nodes);
        Piece { forest: self.forest.product(&other.forest), nodes }
    }
}

/// `T_1 ×^G ... ×^G T_p`: forests whose hyperedges, indexed consecutively
/// across parts, are joined by the blocks of `coupling`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoupledTuple {
    pub parts: Vec<LionsForest>,
    pub coupling: SetPartition,
}

/// A coupled tensor of two forests, the shape of every coproduct term.
pub type CoupledPair = CoupledTuple;

impl CoupledTuple {
    pub fn new(parts: Vec<LionsForest>, coupling: SetPartition) -> Result<Self> {
        let total: usize = parts.iter().map(|p| p.hyperedges().len()).sum();
        let ground = coupling.ground();
        if ground != (0..total).collect::<Vec<_>>() {
            return Err(Error::CouplingIntegrity(format!("coupling ground {ground:?} for {total} hyperedges")));
        }
        Ok(CoupledTuple { parts, coupling })
    }

    /// Couples pieces of `origin` by the slots their hyperedges descend from.
    pub fn from_pieces(origin: &LionsForest, pieces: &[Piece]) -> Self {
        let refs: Vec<(&LionsForest, &[usize])> = pieces.iter().map(|p| (&p.forest, p.nodes.as_slice())).collect();
        CoupledTuple { parts: pieces.iter().map(|p| p.forest.clone()).collect(), coupling: origin_coupling(origin, &refs) }
    }

    pub fn left(&self) -> &LionsForest {
        &self.parts[0]
    }

    pub fn right(&self) -> &LionsForest {
        &self.parts[self.parts.len() - 1]
    }

    /// Canonical representative and its key. Every part is brought to
    /// canonical form; among the automorphisms of the parts the one giving
    /// the smallest coupling is used.
    pub fn canonical(&self) -> (CoupledTuple, String) {
        let data: Vec<(String, Vec<Vec<usize>>)> = self.parts.iter().map(|p| p.canonical_data()).collect();
        let canon: Vec<LionsForest> = self.parts.iter().zip(&data).map(|(p, d)| p.relabel(&d.1[0])).collect();
        let labelings: Vec<&Vec<Vec<usize>>> = data.iter().map(|d| &d.1).collect();
        let mut offsets = Vec::with_capacity(self.parts.len());
        let mut off = 0;
        for p in &self.parts {
            offsets.push(off);
            off += p.hyperedges().len();
        }
        // index maps per part and labeling
        let maps: Vec<Vec<Vec<usize>>> = self
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                labelings[i]
                    .iter()
                    .map(|order| {
                        let mut inv = vec![0; p.len()];
                        for (k, &v) in order.iter().enumerate() {
                            inv[v] = k;
                        }
                        p.hyperedges()
                            .iter()
                            .map(|h| match canon[i].slot(inv[h[0]]) {
                                Slot::Hyper(j) => offsets[i] + j,
                                Slot::Zero => unreachable!("hyperedge mapped into h0"),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut best: Option<SetPartition> = None;
        let mut choice = vec![0usize; self.parts.len()];
        loop {
            let mut global = vec![0usize; off];
            for (i, &c) in choice.iter().enumerate() {
                for (k, &g) in maps[i][c].iter().enumerate() {
                    global[offsets[i] + k] = g;
                }
            }
            let cand = self.coupling.map(|x| global[x]);
            if best.as_ref().is_none_or(|b| cand.blocks() < b.blocks()) {
                best = Some(cand);
            }
            let mut i = 0;
            while i < choice.len() {
                choice[i] += 1;
                if choice[i] < maps[i].len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == choice.len() {
                break;
            }
        }
        let coupling = best.expect("at least one labeling");
        let mut key: Vec<String> = data.into_iter().map(|d| d.0).collect();
        key.push(format!("{:?}", coupling.blocks()));
        (CoupledTuple { parts: canon, coupling }, key.join("/"))
    }

    pub fn key(&self) -> String {
        self.canonical().1
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "parts": self.parts, "coupling": self.coupling })
    }
}

impl fmt::Display for CoupledTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
        write!(f, "{} with coupling {:?}", parts.join(" ⊗ "), self.coupling.blocks())
    }
}

/// A multiset of canonical coupled tuples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoproductResult {
    entries: BTreeMap<String, (CoupledTuple, usize)>,
}

impl CoproductResult {
    fn from_tuples(it: impl IntoIterator<Item = CoupledTuple>) -> Self {
        let mut entries: BTreeMap<String, (CoupledTuple, usize)> = BTreeMap::new();
        for t in it {
            let (c, k) = t.canonical();
            entries.entry(k).or_insert((c, 0)).1 += 1;
        }
        CoproductResult { entries }
    }

    /// Number of distinct terms.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of multiplicities.
    pub fn total(&self) -> usize {
        self.entries.values().map(|e| e.1).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CoupledTuple, usize)> {
        self.entries.values().map(|(t, m)| (t, *m))
    }

    pub fn multiplicity(&self, t: &CoupledTuple) -> usize {
        self.entries.get(&t.key()).map_or(0, |e| e.1)
    }

    /// Multiplicities keyed by canonical tuple key.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.1)).collect()
    }

    /// `c(T, T1, T2)`: multiplicity of `T1 ⊗ T2` with the coupling forgotten.
    pub fn counting(&self, t1: &LionsForest, t2: &LionsForest) -> usize {
        let (k1, k2) = (t1.key(), t2.key());
        self.iter().filter(|(t, _)| t.parts.len() == 2 && t.parts[0].key() == k1 && t.parts[1].key() == k2).map(|(_, m)| m).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.iter()
                .map(|(t, m)| json!({ "parts": t.parts, "coupling": t.coupling, "multiplicity": m }))
                .collect(),
        )
    }
}

/// Terms of `Δ[f]` as pairs of pieces of `f`.
pub fn coproduct_terms(f: &LionsForest) -> Vec<(Piece, Piece)> {
    if f.is_empty() {
        return vec![(Piece::unit(), Piece::unit())];
    }
    let groups = f.factor_groups();
    if groups.len() > 1 {
        let mut acc = vec![(Piece::unit(), Piece::unit())];
        for g in &groups {
            let sub = Piece::of(f, g);
            let terms: Vec<(Piece, Piece)> =
                coproduct_terms(&sub.forest).into_iter().map(|(l, r)| (l.through(&sub.nodes), r.through(&sub.nodes))).collect();
            let mut next = Vec::with_capacity(acc.len() * terms.len());
            for (al, ar) in &acc {
                for (tl, tr) in &terms {
                    next.push((al.product(tl), ar.product(tr)));
                }
            }
            acc = next;
        }
        return acc;
    }
    if f.is_tree() {
        let mut out = vec![(Piece::whole(f), Piece::unit()), (Piece::unit(), Piece::whole(f))];
        for c in admissible_cuts(f).expect("single tree") {
            out.push((Piece { forest: c.prune, nodes: c.prune_nodes }, Piece { forest: c.root, nodes: c.root_nodes }));
        }
        return out;
    }
    // trees whose roots share one ordinary hyperedge
    let r = f.roots()[0];
    let k = match f.slot(r) {
        Slot::Hyper(k) => k,
        Slot::Zero => unreachable!("h0 roots form separate factor groups"),
    };
    coproduct_terms(&f.promote(k))
        .into_iter()
        .map(|(l, r)| {
            (Piece { forest: l.forest.expectation(), nodes: l.nodes }, Piece { forest: r.forest.expectation(), nodes: r.nodes })
        })
        .collect()
}

/// `Δ[f]` as a multiset of canonical coupled pairs.
pub fn coproduct(f: &LionsForest) -> CoproductResult {
    CoproductResult::from_tuples(coproduct_terms(f).iter().map(|(l, r)| CoupledTuple::from_pieces(f, &[l.clone(), r.clone()])))
}

/// `Δ'[f]`: the terms with both sides nonempty.
pub fn reduced_terms(f: &LionsForest) -> Vec<(Piece, Piece)> {
    coproduct_terms(f).into_iter().filter(|(l, r)| !l.forest.is_empty() && !r.forest.is_empty()).collect()
}

pub fn reduced_coproduct(f: &LionsForest) -> CoproductResult {
    CoproductResult::from_tuples(reduced_terms(f).iter().map(|(l, r)| CoupledTuple::from_pieces(f, &[l.clone(), r.clone()])))
}

/// The iterated reduced coproduct with `p` tensor factors (`p = 1` gives `f`).
pub fn iterated_reduced(f: &LionsForest, p: usize) -> Result<CoproductResult> {
    let tuples = iterated_reduced_terms(f, p)?;
    Ok(CoproductResult::from_tuples(tuples.iter().map(|t| CoupledTuple::from_pieces(f, t))))
}

/// Terms of the iterated reduced coproduct as tuples of pieces of `f`.
pub fn iterated_reduced_terms(f: &LionsForest, p: usize) -> Result<Vec<Vec<Piece>>> {
    if p == 0 {
        return Err(Error::Domain("at least one tensor factor".into()));
    }
    if f.is_empty() {
        return Ok(vec![]);
    }
    let mut tuples: Vec<Vec<Piece>> = vec![vec![Piece::whole(f)]];
    for _ in 1..p {
        if tuples.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for t in &tuples {
            for (l, r) in reduced_terms(&t[0].forest) {
                let mut v = vec![l.through(&t[0].nodes), r.through(&t[0].nodes)];
                v.extend_from_slice(&t[1..]);
                next.push(v);
            }
        }
        tuples = next;
    }
    Ok(tuples)
}

/// Largest `p` with a nonzero iterated reduced coproduct of `p` factors; 0 for the unit.
pub fn reduced_depth(f: &LionsForest) -> usize {
    fn depth(f: &LionsForest, memo: &mut HashMap<LionsForest, usize, FastHash>) -> usize {
        if let Some(&d) = memo.get(f) {
            return d;
        }
        let d = 1 + reduced_terms(f).iter().map(|(l, _)| depth(&l.forest, memo)).max().unwrap_or(0);
        memo.insert(f.clone(), d);
        d
    }
    if f.is_empty() {
        return 0;
    }
    depth(f, &mut HashMap::default())
}

/// A tuple of pieces with nodes in ambient order, plus the ambient coupling.
type Labelled = (Vec<(LionsForest, Vec<usize>)>, SetPartition);

fn labelled(origin: &LionsForest, pieces: &[Piece]) -> Labelled {
    let sorted: Vec<Piece> = pieces
        .iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..p.nodes.len()).collect();
            order.sort_unstable_by_key(|&k| p.nodes[k]);
            Piece { forest: p.forest.relabel(&order), nodes: order.iter().map(|&k| p.nodes[k]).collect() }
        })
        .collect();
    let coupling = CoupledTuple::from_pieces(origin, &sorted).coupling;
    (sorted.into_iter().map(|p| (p.forest, p.nodes)).collect(), coupling)
}

fn labelled_counts(origin: &LionsForest, tuples: &[Vec<Piece>]) -> HashMap<Labelled, usize, FastHash> {
    let mut out: HashMap<Labelled, usize, FastHash> = HashMap::default();
    for t in tuples {
        *out.entry(labelled(origin, t)).or_default() += 1;
    }
    out
}

/// Compares two families of piece tuples of `origin`. Equal labelled
/// multisets are equal up to isomorphism; otherwise the canonical classes decide.
fn same_terms(origin: &LionsForest, a: &[Vec<Piece>], b: &[Vec<Piece>]) -> bool {
    if a.len() == b.len() && labelled_counts(origin, a) == labelled_counts(origin, b) {
        return true;
    }
    let counts = |ts: &[Vec<Piece>]| CoproductResult::from_tuples(ts.iter().map(|t| CoupledTuple::from_pieces(origin, t))).counts();
    counts(a) == counts(b)
}

fn triples(f: &LionsForest, left_first: bool) -> Vec<Vec<Piece>> {
    let mut out = Vec::new();
    for (l, r) in coproduct_terms(f) {
        if left_first {
            for (a, b) in coproduct_terms(&l.forest) {
                out.push(vec![a.through(&l.nodes), b.through(&l.nodes), r.clone()]);
            }
        } else {
            for (a, b) in coproduct_terms(&r.forest) {
                out.push(vec![l.clone(), a.through(&r.nodes), b.through(&r.nodes)]);
            }
        }
    }
    out
}

/// `(Δ ⊗̃ I) Δ = (I ⊗̃ Δ) Δ` on `f`, compared as multisets of coupled triples.
pub fn check_coassociativity(f: &LionsForest) -> bool {
    same_terms(f, &triples(f, true), &triples(f, false))
}

/// `(ε ⊗ I) Δ = I = (I ⊗ ε) Δ` on `f`.
pub fn check_counit(f: &LionsForest) -> bool {
    let terms = coproduct_terms(f);
    let k = f.key();
    let side = |pick_right: bool| {
        let kept: Vec<&LionsForest> = terms
            .iter()
            .filter(|(l, r)| if pick_right { l.forest.is_empty() } else { r.forest.is_empty() })
            .map(|(l, r)| if pick_right { &r.forest } else { &l.forest })
            .collect();
        kept.len() == 1 && kept[0].key() == k
    };
    side(true) && side(false)
}

/// `Δ E = (E ⊗̃ E) Δ` on `f`; the coupling on the right-hand side also joins
/// the two hyperedges made from `h0`.
pub fn check_expectation_morphism(f: &LionsForest) -> bool {
    let ef = f.expectation();
    let rhs = CoproductResult::from_tuples(coproduct_terms(f).into_iter().map(|(l, r)| {
        let l = Piece { forest: l.forest.expectation(), nodes: l.nodes };
        let r = Piece { forest: r.forest.expectation(), nodes: r.nodes };
        CoupledTuple::from_pieces(&ef, &[l, r])
    }));
    coproduct(&ef) == rhs
}

/// `Δ[T1 ⊛ T2] = ⊛^(2)[Δ T1, Δ T2]`, the right side built from the canonical terms of each factor.
pub fn check_product_morphism(t1: &LionsForest, t2: &LionsForest) -> bool {
    let p = t1.product(t2);
    let shift: Vec<usize> = (t1.len()..p.len()).collect();
    let left = coproduct_terms(t1);
    let right: Vec<(Piece, Piece)> = coproduct_terms(t2).into_iter().map(|(l, r)| (l.through(&shift), r.through(&shift))).collect();
    let mut joined = Vec::with_capacity(left.len() * right.len());
    for (al, ar) in &left {
        for (bl, br) in &right {
            joined.push(vec![al.product(bl), ar.product(br)]);
        }
    }
    let direct: Vec<Vec<Piece>> = coproduct_terms(&p).into_iter().map(|(l, r)| vec![l, r]).collect();
    if direct.len() == joined.len() && labelled_counts(&p, &direct) == labelled_counts(&p, &joined) {
        return true;
    }
    let lhs = coproduct(&p);
    let mut out: Vec<(CoupledTuple, usize)> = Vec::new();
    for (a, ma) in coproduct(t1).iter() {
        for (b, mb) in coproduct(t2).iter() {
            out.push((pair_product(a, b), ma * mb));
        }
    }
    let mut rhs: BTreeMap<String, usize> = BTreeMap::new();
    for (t, m) in out {
        *rhs.entry(t.key()).or_default() += m;
    }
    lhs.counts() == rhs
}

/// `(A1 ×^G A2) ⊛ (B1 ×^H B2) = (A1 ⊛ B1) ×^{G ∪ H} (A2 ⊛ B2)`.
pub fn pair_product(a: &CoupledTuple, b: &CoupledTuple) -> CoupledTuple {
    let (al, ar) = (a.parts[0].hyperedges().len(), a.parts[1].hyperedges().len());
    let bl = b.parts[0].hyperedges().len();
    let ma = |x: usize| if x < al { x } else { bl + x };
    let mb = |x: usize| if x < bl { al + x } else { al + ar + x };
    let mut blocks: Vec<Vec<usize>> = a.coupling.map(ma).blocks().to_vec();
    blocks.extend(b.coupling.map(mb).blocks().iter().cloned());
    CoupledTuple {
        parts: vec![a.parts[0].product(&b.parts[0]), a.parts[1].product(&b.parts[1])],
        coupling: SetPartition::new(blocks).expect("disjoint blocks"),
    }
}

/// Formal expansion: node partitions of a fixed forest into subtrees, with
/// integer coefficients. Each partition is a sorted list of node masks.
pub type Expansion = BTreeMap<Vec<u64>, i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Memo of per-mask data, dense over all masks of small forests.
struct MaskTable<T> {
    dense: RefCell<Vec<Option<T>>>,
    sparse: RefCell<HashMap<u128, T, FastHash>>,
}

impl<T: Clone> MaskTable<T> {
    fn new(keys: Option<usize>) -> Self {
        MaskTable { dense: RefCell::new(vec![None; keys.unwrap_or(0)]), sparse: RefCell::default() }
    }

    fn get_or(&self, key: u128, make: impl FnOnce() -> T) -> T {
        let dense = !self.dense.borrow().is_empty();
        if dense {
            if let Some(v) = &self.dense.borrow()[key as usize] {
                return v.clone();
            }
        } else if let Some(v) = self.sparse.borrow().get(&key) {
            return v.clone();
        }
        let v = make();
        if dense {
            self.dense.borrow_mut()[key as usize] = Some(v.clone());
        } else {
            self.sparse.borrow_mut().insert(key, v.clone());
        }
        v
    }
}

struct Masks {
    parent: Vec<Option<usize>>,
    components: MaskTable<Rc<Vec<u64>>>,
    upper: MaskTable<Rc<Vec<u64>>>,
}

impl Masks {
    fn new(f: &LionsForest) -> Self {
        assert!(f.len() < 64, "forests are limited to 63 nodes");
        let keys = (f.len() <= 10).then(|| 1 << f.len());
        Masks { parent: f.parents().to_vec(), components: MaskTable::new(keys), upper: MaskTable::new(keys) }
    }

    fn bits(mask: u64) -> impl Iterator<Item = usize> {
        let mut m = mask;
        std::iter::from_fn(move || {
            if m == 0 {
                return None;
            }
            let v = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(v)
        })
    }

    fn nodes(mask: u64) -> Vec<usize> {
        Self::bits(mask).collect()
    }

    fn components(&self, mask: u64) -> Rc<Vec<u64>> {
        self.components.get_or(mask as u128, || self.find_components(mask))
    }

    fn find_components(&self, mask: u64) -> Rc<Vec<u64>> {
        let mut by_root: BTreeMap<usize, u64> = BTreeMap::new();
        for v in Self::bits(mask) {
            let mut u = v;
            while let Some(p) = self.parent[u] {
                if mask >> p & 1 == 0 {
                    break;
                }
                u = p;
            }
            *by_root.entry(u).or_default() |= 1 << v;
        }
        Rc::new(by_root.into_values().collect::<Vec<_>>())
    }

    /// Subsets `R` of `mask` closed under taking parents inside `mask`.
    fn upper_sets(&self, mask: u64) -> Rc<Vec<u64>> {
        self.upper.get_or(mask as u128, || self.find_upper_sets(mask))
    }

    fn find_upper_sets(&self, mask: u64) -> Rc<Vec<u64>> {
        // nodes whose parent is also in the mask
        let inner: Vec<(usize, usize)> =
            Self::bits(mask).filter_map(|v| self.parent[v].filter(|&p| mask >> p & 1 == 1).map(|p| (v, p))).collect();
        let mut out = Vec::new();
        let mut sub = mask;
        loop {
            if inner.iter().all(|&(v, p)| sub >> v & 1 == 0 || sub >> p & 1 == 1) {
                out.push(sub);
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
        Rc::new(out)
    }
}

/// Multiplicative hashing for the integer keys of evaluation caches.
#[derive(Clone, Copy, Default)]
struct FastHash;

impl std::hash::BuildHasher for FastHash {
    type Hasher = FastHasher;
    fn build_hasher(&self) -> FastHasher {
        FastHasher(0)
    }
}

struct FastHasher(u64);

impl std::hash::Hasher for FastHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }
    fn write_u64(&mut self, x: u64) {
        self.0 = (self.0.rotate_left(5) ^ x).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
    fn write_usize(&mut self, x: usize) {
        self.write_u64(x as u64);
    }
    fn write_u128(&mut self, x: u128) {
        self.write_u64(x as u64);
        self.write_u64((x >> 64) as u64);
    }
}

fn mul_expansions(a: &Expansion, b: &Expansion) -> Expansion {
    let mut out = Expansion::new();
    for (pa, ca) in a {
        for (pb, cb) in b {
            let mut p = pa.clone();
            p.extend_from_slice(pb);
            p.sort_unstable();
            *out.entry(p).or_default() += ca * cb;
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

fn add_scaled(acc: &mut Expansion, c: i64, e: &Expansion) {
    for (p, x) in e {
        *acc.entry(p.clone()).or_default() += c * x;
    }
}

fn antipode_rec(m: &Masks, mask: u64, side: Side, memo: &mut HashMap<u64, Expansion>) -> Expansion {
    if let Some(e) = memo.get(&mask) {
        return e.clone();
    }
    let comps = m.components(mask);
    let out = if mask == 0 {
        Expansion::from([(vec![], 1)])
    } else if comps.len() > 1 {
        comps.iter().fold(Expansion::from([(vec![], 1)]), |acc, &c| mul_expansions(&acc, &antipode_rec(m, c, side, memo)))
    } else {
        let mut acc = Expansion::from([(vec![mask], -1)]);
        for &r in m.upper_sets(mask).iter() {
            if r == 0 || r == mask {
                continue;
            }
            let p = mask & !r;
            let term = match side {
                Side::Left => mul_expansions(&antipode_rec(m, p, side, memo), &Expansion::from([(vec![r], 1)])),
                Side::Right => {
                    let plain: Expansion =
                        m.components(p).iter().fold(Expansion::from([(vec![], 1)]), |acc, &c| mul_expansions(&acc, &Expansion::from([(vec![c], 1)])));
                    mul_expansions(&plain, &antipode_rec(m, r, side, memo))
                }
            };
            add_scaled(&mut acc, -1, &term);
        }
        acc.retain(|_, c| *c != 0);
        acc
    };
    memo.insert(mask, out.clone());
    out
}

/// `S[f]` from the left (`S T = −T − Σ S(P) R`) or right (`S T = −T − Σ P S(R)`)
/// recursion, multiplicative across components.
pub fn antipode_expansion(f: &LionsForest, side: Side) -> Expansion {
    let m = Masks::new(f);
    let full = if f.is_empty() { 0 } else { (1u64 << f.len()) - 1 };
    antipode_rec(&m, full, side, &mut HashMap::new())
}

/// Compares the left and right antipode expansions of `f`.
pub fn check_antipode_identity(f: &LionsForest) -> bool {
    antipode_expansion(f, Side::Left) == antipode_expansion(f, Side::Right)
}

/// The value of a character on single trees.
pub trait TreeEvaluator: Send + Sync {
    fn eval(&self, tree: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue>;
}

impl<F> TreeEvaluator for F
where
    F: Fn(&LionsForest, &SampleAssignment) -> Result<TensorValue> + Send + Sync,
{
    fn eval(&self, tree: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue> {
        self(tree, samples)
    }
}

enum Op {
    Epsilon,
    Multiplicative(Arc<dyn TreeEvaluator>),
    TreeSupported(Arc<dyn TreeEvaluator>),
    Convolve(Functional, Functional),
    Linear(Vec<(f64, Functional)>),
    Antipode(Functional, Side),
    Dilate(Functional, f64),
}

/// A linear functional on forests, assembled from tree evaluators.
#[derive(Clone)]
pub struct Functional(Arc<Op>);

impl Functional {
    pub fn epsilon() -> Self {
        Functional(Arc::new(Op::Epsilon))
    }

    /// Extends `ev` multiplicatively over components.
    pub fn multiplicative(ev: Arc<dyn TreeEvaluator>) -> Self {
        Functional(Arc::new(Op::Multiplicative(ev)))
    }

    /// `ev` on trees, zero on `𝟏` and on forests with several components.
    pub fn tree_supported(ev: Arc<dyn TreeEvaluator>) -> Self {
        Functional(Arc::new(Op::TreeSupported(ev)))
    }

    pub fn convolve(&self, other: &Functional) -> Self {
        Functional(Arc::new(Op::Convolve(self.clone(), other.clone())))
    }

    pub fn linear(terms: Vec<(f64, Functional)>) -> Self {
        Functional(Arc::new(Op::Linear(terms)))
    }

    /// The inverse of an inverse is returned as the original functional.
    pub fn antipode(&self, side: Side) -> Self {
        if let Op::Antipode(g, _) = &*self.0 {
            return g.clone();
        }
        Functional(Arc::new(Op::Antipode(self.clone(), side)))
    }

    /// `⟨δ_ε f, T⟩ = ε^{|N^T|} ⟨f, T⟩`.
    pub fn dilate(&self, eps: f64) -> Self {
        Functional(Arc::new(Op::Dilate(self.clone(), eps)))
    }

    /// `f^{*n}`, with `f^{*0} = ε`.
    pub fn power(&self, n: usize) -> Vec<Functional> {
        let mut out = vec![Functional::epsilon()];
        for i in 1..=n {
            let next = if i == 1 { self.clone() } else { self.convolve(&out[i - 1]) };
            out.push(next);
        }
        out
    }

    /// Evaluates on a concrete forest with one sample per slot.
    pub fn eval(&self, f: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue> {
        Ok(Functional::eval_many(&[self], f, samples)?.pop().expect("one value"))
    }

    /// Evaluates several functionals on one forest, sharing intermediate values.
    pub fn eval_many(fs: &[&Functional], f: &LionsForest, samples: &SampleAssignment) -> Result<Vec<TensorValue>> {
        Functional::eval_prepared(fs, &PreparedForest::new(f)?, samples)
    }

    /// As [`Functional::eval_many`], reusing the structure cached in `prep`
    /// across sample draws.
    pub fn eval_prepared(fs: &[&Functional], prep: &PreparedForest, samples: &SampleAssignment) -> Result<Vec<TensorValue>> {
        let f = prep.forest;
        if samples.hyper.len() != f.hyperedges().len() {
            return Err(Error::SampleMismatch(format!(
                "{} hyperedge samples for {} hyperedges",
                samples.hyper.len(),
                f.hyperedges().len()
            )));
        }
        let mut ctx = Ctx { prep, samples, d: samples.zero.dim(), cache: ValueCache::new(f.len()) };
        let full = if f.is_empty() { 0 } else { (1u64 << f.len()) - 1 };
        fs.iter().map(|g| ctx.eval(g, full).map(Rc::unwrap_or_clone)).collect()
    }
}

/// Sample-independent data of a forest: components, upper sets and
/// restricted subforests of node subsets.
pub struct PreparedForest<'a> {
    forest: &'a LionsForest,
    masks: Masks,
    subs: MaskTable<Rc<(LionsForest, Vec<usize>)>>,
    // keyed by the union mask and `a_mask`, for one dimension at a time
    index_maps: MaskTable<Rc<(Vec<u32>, Vec<u32>)>>,
    index_dim: std::cell::Cell<usize>,
}

fn is_zero(t: &TensorValue) -> bool {
    t.data.iter().all(|&x| x == 0.0)
}

impl<'a> PreparedForest<'a> {
    pub fn new(forest: &'a LionsForest) -> Result<Self> {
        if forest.len() >= 64 {
            return Err(Error::Domain("forests are limited to 63 nodes".into()));
        }
        let n = forest.len();
        Ok(PreparedForest {
            forest,
            masks: Masks::new(forest),
            subs: MaskTable::new((n <= 10).then(|| 1 << n)),
            index_maps: MaskTable::new((n <= 6).then(|| 1 << (2 * n))),
            index_dim: std::cell::Cell::new(0),
        })
    }

    pub fn forest(&self) -> &LionsForest {
        self.forest
    }

    /// Positions in `a` and `b` of each coefficient of `a ⊗ b` laid out over `a_mask ∪ b_mask`.
    fn index_map(&self, a_mask: u64, b_mask: u64, d: usize) -> Rc<(Vec<u32>, Vec<u32>)> {
        let n = self.forest.len();
        if self.index_dim.get() != d {
            self.index_maps.dense.replace(vec![None; if n <= 6 { 1 << (2 * n) } else { 0 }]);
            self.index_maps.sparse.borrow_mut().clear();
            self.index_dim.set(d);
        }
        let key = if n <= 6 { ((a_mask | b_mask) << n | a_mask) as u128 } else { ((a_mask | b_mask) as u128) << 64 | a_mask as u128 };
        self.index_maps.get_or(key, || Self::build_index_map(a_mask, b_mask, d))
    }

    fn build_index_map(a_mask: u64, b_mask: u64, d: usize) -> Rc<(Vec<u32>, Vec<u32>)> {
        let nodes = Masks::nodes(a_mask | b_mask);
        let total = d.pow(nodes.len() as u32);
        let (mut ia, mut ib) = (Vec::with_capacity(total), Vec::with_capacity(total));
        for pos in 0..total {
            let (mut i, mut j) = (0u32, 0u32);
            let mut rest = pos;
            let mut scale = total;
            for &v in &nodes {
                scale /= d;
                let digit = (rest / scale) as u32;
                rest %= scale;
                if a_mask >> v & 1 == 1 {
                    i = i * d as u32 + digit;
                } else {
                    j = j * d as u32 + digit;
                }
            }
            ia.push(i);
            ib.push(j);
        }
        Rc::new((ia, ib))
    }

    fn restricted(&self, mask: u64) -> Rc<(LionsForest, Vec<usize>)> {
        self.subs.get_or(mask as u128, || Rc::new(self.forest.restrict(&Masks::nodes(mask))))
    }
}

/// Values per functional and node mask: a dense table for small forests.
struct ValueCache {
    masks: usize,
    ids: Vec<usize>,
    dense: Vec<Option<Rc<TensorValue>>>,
    sparse: HashMap<(usize, u64), Rc<TensorValue>, FastHash>,
}

impl ValueCache {
    const DENSE_NODES: usize = 10;

    fn new(n: usize) -> Self {
        let masks = if n <= Self::DENSE_NODES { 1 << n } else { 0 };
        ValueCache { masks, ids: Vec::new(), dense: Vec::new(), sparse: HashMap::default() }
    }

    fn slot(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    fn get(&self, id: usize, mask: u64) -> Option<&Rc<TensorValue>> {
        if self.masks == 0 {
            return self.sparse.get(&(id, mask));
        }
        self.dense[self.slot(id)? * self.masks + mask as usize].as_ref()
    }

    fn insert(&mut self, id: usize, mask: u64, v: Rc<TensorValue>) {
        if self.masks == 0 {
            self.sparse.insert((id, mask), v);
            return;
        }
        let k = self.slot(id).unwrap_or_else(|| {
            self.ids.push(id);
            self.dense.resize(self.ids.len() * self.masks, None);
            self.ids.len() - 1
        });
        self.dense[k * self.masks + mask as usize] = Some(v);
    }
}

struct Ctx<'a> {
    prep: &'a PreparedForest<'a>,
    samples: &'a SampleAssignment,
    d: usize,
    cache: ValueCache,
}

impl Ctx<'_> {
    fn one() -> TensorValue {
        TensorValue::scalar(1.0)
    }

    fn zero(&self, mask: u64) -> TensorValue {
        TensorValue::zeros(self.d, mask.count_ones() as usize)
    }

    /// `acc += c · (a ⊗ b)` over disjoint masks, slots in increasing node order of `a_mask ∪ b_mask`.
    fn accumulate(&self, acc: &mut TensorValue, c: f64, a_mask: u64, a: &TensorValue, b_mask: u64, b: &TensorValue) {
        if is_zero(a) || is_zero(b) {
            return;
        }
        let maps = self.prep.index_map(a_mask, b_mask, self.d);
        for ((x, &i), &j) in acc.data.iter_mut().zip(&maps.0).zip(&maps.1) {
            *x += c * a.data[i as usize] * b.data[j as usize];
        }
    }

    fn combine(&self, a_mask: u64, a: &TensorValue, b_mask: u64, b: &TensorValue) -> TensorValue {
        let mut out = self.zero(a_mask | b_mask);
        self.accumulate(&mut out, 1.0, a_mask, a, b_mask, b);
        out
    }

    fn tree_value(&mut self, id: usize, ev: &Arc<dyn TreeEvaluator>, mask: u64) -> Result<Rc<TensorValue>> {
        if let Some(v) = self.cache.get(id, mask) {
            return Ok(v.clone());
        }
        let r = self.prep.restricted(mask);
        let (sub, map) = (&r.0, &r.1);
        let smp = self.samples.routed(self.prep.forest, sub, map);
        let v = ev.eval(sub, &smp)?;
        if v.order != sub.len() {
            return Err(Error::Domain(format!("evaluator returned order {} on {} nodes", v.order, sub.len())));
        }
        let v = Rc::new(v);
        self.cache.insert(id, mask, v.clone());
        Ok(v)
    }

    fn product_over(&mut self, comps: &[u64], mut each: impl FnMut(&mut Self, u64) -> Result<Rc<TensorValue>>) -> Result<TensorValue> {
        let mut acc = Self::one();
        let mut acc_mask = 0;
        for &c in comps {
            let v = each(self, c)?;
            acc = self.combine(acc_mask, &acc, c, &v);
            acc_mask |= c;
        }
        Ok(acc)
    }

    fn eval(&mut self, f: &Functional, mask: u64) -> Result<Rc<TensorValue>> {
        let id = Arc::as_ptr(&f.0) as *const () as usize;
        if let Some(v) = self.cache.get(id, mask) {
            return Ok(v.clone());
        }
        let v = match f.0.as_ref() {
            Op::Epsilon => {
                if mask == 0 {
                    Self::one()
                } else {
                    self.zero(mask)
                }
            }
            Op::Multiplicative(ev) => {
                let comps = self.prep.masks.components(mask);
                let ev = ev.clone();
                self.product_over(&comps, |ctx, c| ctx.tree_value(id, &ev, c))?
            }
            Op::TreeSupported(ev) => {
                let comps = self.prep.masks.components(mask);
                if comps.len() == 1 {
                    let ev = ev.clone();
                    return self.tree_value(id, &ev, mask);
                } else if mask == 0 {
                    TensorValue::scalar(0.0)
                } else {
                    self.zero(mask)
                }
            }
            Op::Convolve(a, b) => {
                let mut acc = self.zero(mask);
                for &r in self.prep.masks.upper_sets(mask).iter() {
                    let p = mask & !r;
                    let va = self.eval(a, p)?;
                    if is_zero(&va) {
                        continue;
                    }
                    let vb = self.eval(b, r)?;
                    self.accumulate(&mut acc, 1.0, p, &va, r, &vb);
                }
                acc
            }
            Op::Linear(terms) => {
                let mut acc = self.zero(mask);
                for (c, g) in terms {
                    let v = self.eval(g, mask)?;
                    acc.add_assign_scaled(*c, &v);
                }
                acc
            }
            Op::Antipode(g, side) => {
                let comps = self.prep.masks.components(mask);
                if mask == 0 {
                    Self::one()
                } else if comps.len() > 1 {
                    self.product_over(&comps, |ctx, c| ctx.eval(f, c))?
                } else {
                    let mut acc = self.eval(g, mask)?.scale(-1.0);
                    for &r in self.prep.masks.upper_sets(mask).iter() {
                        if r == 0 || r == mask {
                            continue;
                        }
                        let p = mask & !r;
                        let (vp, vr) = match side {
                            Side::Left => (self.eval(f, p)?, self.eval(g, r)?),
                            Side::Right => (self.eval(g, p)?, self.eval(f, r)?),
                        };
                        self.accumulate(&mut acc, -1.0, p, &vp, r, &vr);
                    }
                    acc
                }
            }
            Op::Dilate(g, eps) => self.eval(g, mask)?.scale(eps.powi(mask.count_ones() as i32)),
        };
        let v = Rc::new(v);
        self.cache.insert(id, mask, v.clone());
        Ok(v)
    }
}

fn check_domain(trunc: &Truncation, f: &LionsForest) -> Result<()> {
    let k = trunc.max_nodes();
    if f.len() > k {
        return Err(Error::Domain(format!("forest with {} nodes outside a truncation of {k} nodes", f.len())));
    }
    if let Some(&l) = f.labels().iter().find(|&&l| l > trunc.d) {
        return Err(Error::Domain(format!("label {l} outside dimension {}", trunc.d)));
    }
    Ok(())
}

/// A McKean-Vlasov character on the forests of a truncation.
#[derive(Clone)]
pub struct Character {
    trunc: Truncation,
    f: Functional,
}

/// A functional vanishing on `𝟏` and obeying the Leibniz rule across ⊛.
#[derive(Clone)]
pub struct Derivation {
    trunc: Truncation,
    f: Functional,
}

impl Character {
    pub fn from_tree_evaluator(trunc: Truncation, ev: Arc<dyn TreeEvaluator>) -> Self {
        Character { trunc, f: Functional::multiplicative(ev) }
    }

    pub fn counit(trunc: Truncation) -> Self {
        Character { trunc, f: Functional::epsilon() }
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn functional(&self) -> &Functional {
        &self.f
    }

    pub fn eval(&self, f: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue> {
        check_domain(&self.trunc, f)?;
        self.f.eval(f, samples)
    }

    /// Values of several characters on the same forest and samples.
    pub fn eval_many(cs: &[&Character], f: &LionsForest, samples: &SampleAssignment) -> Result<Vec<TensorValue>> {
        Character::eval_prepared(cs, &PreparedForest::new(f)?, samples)
    }

    pub fn eval_prepared(cs: &[&Character], prep: &PreparedForest, samples: &SampleAssignment) -> Result<Vec<TensorValue>> {
        for c in cs {
            check_domain(&c.trunc, prep.forest)?;
        }
        let fs: Vec<&Functional> = cs.iter().map(|c| &c.f).collect();
        Functional::eval_prepared(&fs, prep, samples)
    }
}

impl Derivation {
    /// `ev` on trees, extended by zero to `𝟏` and to multi-component forests.
    pub fn from_tree_evaluator(trunc: Truncation, ev: Arc<dyn TreeEvaluator>) -> Self {
        Derivation { trunc, f: Functional::tree_supported(ev) }
    }

    pub fn functional(&self) -> &Functional {
        &self.f
    }

    pub fn eval(&self, f: &LionsForest, samples: &SampleAssignment) -> Result<TensorValue> {
        check_domain(&self.trunc, f)?;
        self.f.eval(f, samples)
    }

    pub fn add(&self, other: &Derivation) -> Derivation {
        Derivation { trunc: self.trunc, f: Functional::linear(vec![(1.0, self.f.clone()), (1.0, other.f.clone())]) }
    }

    pub fn scale(&self, c: f64) -> Derivation {
        Derivation { trunc: self.trunc, f: Functional::linear(vec![(c, self.f.clone())]) }
    }

    /// `ξ ∗ ζ − ζ ∗ ξ`.
    pub fn bracket(&self, other: &Derivation) -> Derivation {
        Derivation {
            trunc: self.trunc,
            f: Functional::linear(vec![(1.0, self.f.convolve(&other.f)), (-1.0, other.f.convolve(&self.f))]),
        }
    }

    /// `δ_ε ξ`.
    pub fn dilate(&self, eps: f64) -> Derivation {
        Derivation { trunc: self.trunc, f: self.f.dilate(eps) }
    }
}

fn same_truncation(a: &Truncation, b: &Truncation) -> Result<()> {
    if a != b {
        return Err(Error::Domain("characters from different truncations".into()));
    }
    Ok(())
}

/// `f ∗ g = (f ⊗̃ g) Δ`.
pub fn convolve(f: &Character, g: &Character) -> Result<Character> {
    same_truncation(&f.trunc, &g.trunc)?;
    Ok(Character { trunc: f.trunc, f: f.f.convolve(&g.f) })
}

/// The inverse of `f` from the left or right Bogoliubov recursion.
pub fn antipode(f: &Character, side: Side) -> Character {
    Character { trunc: f.trunc, f: f.f.antipode(side) }
}

/// The inverse of `f` as the truncated series `Σ_{i ≤ K} (ε − f)^{*i}`, `K` the node bound.
pub fn antipode_geometric(f: &Character) -> Character {
    let k = f.trunc.max_nodes();
    let g = Functional::linear(vec![(1.0, Functional::epsilon()), (-1.0, f.f.clone())]);
    let terms = g.power(k).into_iter().map(|p| (1.0, p)).collect();
    Character { trunc: f.trunc, f: Functional::linear(terms) }
}

/// `log* f = Σ_{n ≥ 1} (−1)^{n+1}/n (f − ε)^{*n}`.
pub fn log_star(f: &Character) -> Derivation {
    let k = f.trunc.max_nodes();
    let g = Functional::linear(vec![(1.0, f.f.clone()), (-1.0, Functional::epsilon())]);
    let terms = g.power(k).into_iter().enumerate().skip(1).map(|(n, p)| ((if n % 2 == 1 { 1.0 } else { -1.0 }) / n as f64, p)).collect();
    Derivation { trunc: f.trunc, f: Functional::linear(terms) }
}

/// `exp* ξ = Σ_{n ≥ 0} ξ^{*n}/n!`.
pub fn exp_star(xi: &Derivation) -> Character {
    let k = xi.trunc.max_nodes();
    let mut fact = 1.0;
    let mut terms = Vec::new();
    for (n, p) in xi.f.power(k).into_iter().enumerate() {
        if n > 0 {
            fact *= n as f64;
        }
        terms.push((1.0 / fact, p));
    }
    Character { trunc: xi.trunc, f: Functional::linear(terms) }
}

/// `exp*(δ_ε log* f)`.
pub fn dilate(f: &Character, eps: f64) -> Character {
    exp_star(&log_star(f).dilate(eps))
}

/// Largest deviation between `⟨f, E T⟩` and `⟨f, T⟩` fed the moved `h0`
/// sample, together with the spread of `⟨f, E T⟩` over independent `ω0`.
#[derive(Clone, Debug, Serialize)]
pub struct MkvReport {
    pub max_deviation: f64,
    pub max_omega0_spread: f64,
    pub trials: usize,
}

pub fn mkv_check(f: &Character, t: &LionsForest, sampler: &dyn PathSampler, trials: usize, rng: &mut dyn RngCore) -> Result<MkvReport> {
    if trials == 0 {
        return Err(Error::InsufficientSamples("no trials".into()));
    }
    let et = t.expectation();
    let ids: Vec<usize> = (0..t.len()).collect();
    let mut dev: f64 = 0.0;
    let mut spread: f64 = 0.0;
    for _ in 0..trials {
        let smp = SampleAssignment::draw(t, sampler, rng);
        let base = f.eval(t, &smp)?;
        let mut moved = smp.routed(t, &et, &ids);
        let a = f.eval(&et, &moved)?;
        moved.zero = Arc::new(sampler.sample(rng));
        let b = f.eval(&et, &moved)?;
        dev = dev.max(base.max_abs_diff(&a));
        spread = spread.max(a.max_abs_diff(&b));
    }
    Ok(MkvReport { max_deviation: dev, max_omega0_spread: spread, trials })
}

/// Monte-Carlo estimates of both sides of the `E^a` Fubini identity.
#[derive(Clone, Debug, Serialize)]
pub struct FubiniReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `|lhs − rhs|` in units of the combined standard error.
    pub z: f64,
}

/// Coefficient `X_i` of the `i`-th tree: a tensor depending on `ω_{a_i}`.
pub type Coefficient = dyn Fn(&PiecewiseLinearPath) -> TensorValue + Sync;

/// Test function of `(ω_0, ω_1, ..., ω_m)`.
pub type TestFunction = dyn Fn(&[&PiecewiseLinearPath]) -> f64 + Sync;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = crate::empirical::pairwise_sum(xs) / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Left side: `E[g ∏_i E^{ω_{H_i}}⟨X_i(ω_{a_i}), ⟨f, T_i⟩(ω_{a_i}, ω_{H_i})⟩]`
/// with `inner` draws per inner expectation. Right side: the joint draw with
/// `f` evaluated on `E^a[T_1, ..., T_n]` and `⊗_i X_i`.
#[allow(clippy::too_many_arguments)]
pub fn fubini_e_a(
    f: &Character,
    a: &PartitionSequence,
    ts: &[LionsForest],
    coeffs: &[&Coefficient],
    g: &TestFunction,
    omega0: &PiecewiseLinearPath,
    sampler: &dyn PathSampler,
    outer: usize,
    inner: usize,
    rng: &mut dyn RngCore,
) -> Result<FubiniReport> {
    if ts.len() != a.len() || coeffs.len() != a.len() {
        return Err(Error::LengthMismatch(format!("{} trees, {} coefficients, sequence of length {}", ts.len(), coeffs.len(), a.len())));
    }
    if outer < 2 || inner == 0 {
        return Err(Error::InsufficientSamples("need two outer and one inner draw".into()));
    }
    let m = a.m();
    let entries = a.entries();
    let omega0 = Arc::new(omega0.clone());
    let draw_ws = |rng: &mut dyn RngCore| -> Vec<Arc<PiecewiseLinearPath>> {
        std::iter::once(omega0.clone()).chain((0..m).map(|_| Arc::new(sampler.sample(rng)))).collect()
    };
    let mut lhs = Vec::with_capacity(outer);
    for _ in 0..outer {
        let ws = draw_ws(rng);
        let refs: Vec<&PiecewiseLinearPath> = ws.iter().map(|w| w.as_ref()).collect();
        let mut prod = g(&refs);
        for (i, t) in ts.iter().enumerate() {
            let w = &ws[entries[i]];
            let x = coeffs[i](w);
            let mut acc = 0.0;
            for _ in 0..inner {
                let hyper = (0..t.hyperedges().len()).map(|_| Arc::new(sampler.sample(rng))).collect();
                let smp = SampleAssignment { zero: w.clone(), hyper };
                acc += x.dot(&f.eval(t, &smp)?);
            }
            prod *= acc / inner as f64;
        }
        lhs.push(prod);
    }
    // E^a[T_1..T_n] laid out as the concatenation of the T_i
    let mut parent = Vec::new();
    let mut label = Vec::new();
    let mut h0 = Vec::new();
    let mut fresh: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut hyper: Vec<(Vec<usize>, Option<usize>)> = Vec::new();
    let mut off = 0;
    for (i, t) in ts.iter().enumerate() {
        parent.extend(t.parents().iter().map(|p| p.map(|p| p + off)));
        label.extend_from_slice(t.labels());
        let z: Vec<usize> = t.h0().iter().map(|v| v + off).collect();
        if entries[i] == 0 {
            h0.extend(z);
        } else {
            fresh[entries[i] - 1].extend(z);
        }
        for h in t.hyperedges() {
            hyper.push((h.iter().map(|v| v + off).collect(), None));
        }
        off += t.len();
    }
    for (j, h) in fresh.into_iter().enumerate() {
        if !h.is_empty() {
            hyper.push((h, Some(j + 1)));
        }
    }
    hyper.sort_by_key(|h| h.0[0]);
    let big = LionsForest::new(parent, label, h0, hyper.iter().map(|h| h.0.clone()).collect())?;
    let mut rhs = Vec::with_capacity(outer);
    for _ in 0..outer {
        let ws = draw_ws(rng);
        let refs: Vec<&PiecewiseLinearPath> = ws.iter().map(|w| w.as_ref()).collect();
        let samples: Vec<Arc<PiecewiseLinearPath>> =
            hyper.iter().map(|(_, src)| src.map_or_else(|| Arc::new(sampler.sample(rng)), |j| ws[j].clone())).collect();
        let smp = SampleAssignment { zero: omega0.clone(), hyper: samples };
        let x = (0..ts.len()).fold(TensorValue::scalar(1.0), |acc, i| acc.outer(&coeffs[i](&ws[entries[i]])));
        rhs.push(g(&refs) * x.dot(&f.eval(&big, &smp)?));
    }
    let (l, lse) = mean_se(&lhs);
    let (r, rse) = mean_se(&rhs);
    let se = (lse * lse + rse * rse).sqrt();
    let z = if se > 0.0 { (l - r).abs() / se } else if (l - r).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
    Ok(FubiniReport { lhs: l, lhs_se: lse, rhs: r, rhs_se: rse, z })
}
