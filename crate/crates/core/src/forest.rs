//! Lions forests: labelled rooted forests with a 0-hyperedge `h0` and a
//! partition `H` of the remaining nodes into hyperedges.
//!
//! Depth is the distance to the root of a node's own component. Every valid
//! hyperedge then has a simple shape: its shallowest nodes are either all
//! roots or all children of one common parent, and each deeper node has its
//! parent in the same hyperedge. The canonical encoding exploits this: a
//! child either continues its parent's hyperedge or opens a fresh one, and
//! fresh siblings are grouped by the hyperedge they open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::partitions::{PartitionSequence, SetPartition};
use crate::{Error, Result};

/// Which hyperedge a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Zero,
    Hyper(usize),
}

/// A Lions forest `(N, E, h0, H, L)` with nodes `0..n`.
///
/// `hyperedges` is kept sorted by minimal node, so equality is equality of
/// labelled forests; use [`LionsForest::key`] for isomorphism classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LionsForest {
    parent: Vec<Option<usize>>,
    label: Vec<usize>,
    h0: Vec<usize>,
    hyperedges: Vec<Vec<usize>>,
}

/// Which defining condition a forest violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Shape,
    /// 2.1: a nonempty `h0` contains a root.
    ZeroHasRoot,
    /// 2.2: nodes below the shallowest level of a hyperedge have their parent in it.
    DeeperParent,
    /// 2.3: equal-depth nodes with distinct parents have both parents in the hyperedge.
    DistinctParents,
}

impl Condition {
    pub fn code(&self) -> &'static str {
        match self {
            Condition::Shape => "forest-shape",
            Condition::ZeroHasRoot => "2.1",
            Condition::DeeperParent => "2.2",
            Condition::DistinctParents => "2.3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub condition: Condition,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "condition {} violated: {}", self.condition.code(), self.detail)
    }
}

/// Hex token of the canonical encoding; equal iff the forests are isomorphic.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(pub String);

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn violation(condition: Condition, detail: String) -> Violation {
    Violation { condition, detail }
}

impl LionsForest {
    /// The empty forest `𝟏`.
    pub fn unit() -> Self {
        LionsForest { parent: vec![], label: vec![], h0: vec![], hyperedges: vec![] }
    }

    /// The single node `T_i` in `h0`.
    pub fn generator(i: usize) -> Self {
        LionsForest { parent: vec![None], label: vec![i], h0: vec![0], hyperedges: vec![] }
    }

    /// Checks array shapes and that `h0` and `hyperedges` partition the nodes,
    /// without checking the Lions conditions.
    pub fn from_parts(
        parent: Vec<Option<usize>>,
        label: Vec<usize>,
        h0: Vec<usize>,
        hyperedges: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = parent.len();
        if label.len() != n {
            return Err(Error::InvalidForest(format!("{} labels for {n} nodes", label.len())));
        }
        if let Some(v) = parent.iter().flatten().find(|&&p| p >= n) {
            return Err(Error::InvalidForest(format!("parent {v} out of range")));
        }
        if label.contains(&0) {
            return Err(Error::InvalidForest("labels start at 1".into()));
        }
        let mut seen = vec![false; n];
        for &x in h0.iter().chain(hyperedges.iter().flatten()) {
            if x >= n || seen[x] {
                return Err(Error::InvalidForest(format!("node {x} out of range or in two hyperedges")));
            }
            seen[x] = true;
        }
        if let Some(x) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidForest(format!("node {x} in no hyperedge")));
        }
        if hyperedges.iter().any(|h| h.is_empty()) {
            return Err(Error::InvalidForest("empty hyperedge".into()));
        }
        Ok(Self::assemble(parent, label, h0, hyperedges))
    }

    /// [`from_parts`](Self::from_parts) followed by [`validate`](Self::validate).
    pub fn new(
        parent: Vec<Option<usize>>,
        label: Vec<usize>,
        h0: Vec<usize>,
        hyperedges: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let f = Self::from_parts(parent, label, h0, hyperedges)?;
        f.validate().map_err(|v| Error::InvalidForest(v.to_string()))?;
        Ok(f)
    }

    fn assemble(parent: Vec<Option<usize>>, label: Vec<usize>, mut h0: Vec<usize>, mut hyperedges: Vec<Vec<usize>>) -> Self {
        h0.sort_unstable();
        for h in hyperedges.iter_mut() {
            h.sort_unstable();
        }
        hyperedges.sort_unstable_by_key(|h| h[0]);
        LionsForest { parent, label, h0, hyperedges }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn label(&self, v: usize) -> usize {
        self.label[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.label
    }

    pub fn h0(&self) -> &[usize] {
        &self.h0
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    /// `H` as a set partition of `N ∖ h0`.
    pub fn hyperedge_partition(&self) -> SetPartition {
        SetPartition::new(self.hyperedges.clone()).expect("hyperedges are disjoint")
    }

    pub fn slot(&self, v: usize) -> Slot {
        if self.h0.binary_search(&v).is_ok() {
            return Slot::Zero;
        }
        Slot::Hyper(self.hyperedges.iter().position(|h| h.binary_search(&v).is_ok()).expect("node in a hyperedge"))
    }

    /// Slot of every node.
    pub fn slots(&self) -> Vec<Slot> {
        let mut s = vec![Slot::Zero; self.len()];
        for (k, h) in self.hyperedges.iter().enumerate() {
            for &v in h {
                s[v] = Slot::Hyper(k);
            }
        }
        s
    }

    pub fn slot_nodes(&self, s: Slot) -> &[usize] {
        match s {
            Slot::Zero => &self.h0,
            Slot::Hyper(k) => &self.hyperedges[k],
        }
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.parent[v].is_none()).collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.len()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                c[*p].push(v);
            }
        }
        c
    }

    /// Distance to the root of each node; `None` if the parent map has a cycle.
    fn try_depths(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut depth = vec![usize::MAX; n];
        for v in 0..n {
            let mut path = vec![];
            let mut u = v;
            while depth[u] == usize::MAX {
                path.push(u);
                if path.len() > n {
                    return None;
                }
                match self.parent[u] {
                    None => {
                        depth[u] = 0;
                        path.pop();
                        break;
                    }
                    Some(p) => u = p,
                }
            }
            let mut d = depth[u];
            while let Some(w) = path.pop() {
                d += 1;
                depth[w] = d;
            }
        }
        Some(depth)
    }

    pub fn depths(&self) -> Vec<usize> {
        self.try_depths().expect("acyclic parent map")
    }

    /// Checks that `set` satisfies 2.2 and 2.3 as a hyperedge.
    fn check_hyperedge(&self, set: &[usize], depth: &[usize]) -> std::result::Result<(), Violation> {
        let Some(min) = set.iter().map(|&v| depth[v]).min() else { return Ok(()) };
        let inside: BTreeSet<usize> = set.iter().copied().collect();
        for &v in set {
            if depth[v] > min {
                let p = self.parent[v].expect("non-root");
                if !inside.contains(&p) {
                    return Err(violation(
                        Condition::DeeperParent,
                        format!("node {v} in {set:?} lies below the top level but its parent {p} is outside"),
                    ));
                }
            }
        }
        for (i, &x) in set.iter().enumerate() {
            for &y in &set[i + 1..] {
                if depth[x] != depth[y] {
                    continue;
                }
                if let (Some(px), Some(py)) = (self.parent[x], self.parent[y]) {
                    if px != py && !(inside.contains(&px) && inside.contains(&py)) {
                        return Err(violation(
                            Condition::DistinctParents,
                            format!("nodes {x},{y} of {set:?} have distinct parents {px},{py} not both inside"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reports the first violated defining condition, if any.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let depth = self.try_depths().ok_or_else(|| violation(Condition::Shape, "parent pointers contain a cycle".into()))?;
        if !self.h0.is_empty() && !self.h0.iter().any(|&v| self.parent[v].is_none()) {
            return Err(violation(Condition::ZeroHasRoot, format!("h0 {:?} contains no root", self.h0)));
        }
        let mut sets: Vec<&[usize]> = vec![&self.h0];
        sets.extend(self.hyperedges.iter().map(|h| h.as_slice()));
        let mut first_23 = None;
        for s in &sets {
            match self.check_hyperedge(s, &depth) {
                Ok(()) => {}
                Err(v) if v.condition == Condition::DeeperParent => return Err(v),
                Err(v) => {
                    first_23.get_or_insert(v);
                }
            }
        }
        match first_23 {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// `(|h0|, |N ∖ h0|)`.
    pub fn grading(&self) -> (usize, usize) {
        (self.h0.len(), self.len() - self.h0.len())
    }

    /// `α k + β n` for grading `(k, n)`.
    pub fn weight(&self, alpha: f64, beta: f64) -> f64 {
        let (k, n) = self.grading();
        alpha * k as f64 + beta * n as f64
    }

    /// `T1 ⊛ T2`: disjoint union, merged `h0`, hyperedges kept distinct.
    pub fn product(&self, other: &LionsForest) -> LionsForest {
        let off = self.len();
        let mut parent = self.parent.clone();
        parent.extend(other.parent.iter().map(|p| p.map(|p| p + off)));
        let mut label = self.label.clone();
        label.extend_from_slice(&other.label);
        let mut h0 = self.h0.clone();
        h0.extend(other.h0.iter().map(|v| v + off));
        let mut hyper = self.hyperedges.clone();
        hyper.extend(other.hyperedges.iter().map(|h| h.iter().map(|v| v + off).collect()));
        Self::assemble(parent, label, h0, hyper)
    }

    /// `E[T]`: the 0-hyperedge becomes an ordinary hyperedge.
    pub fn expectation(&self) -> LionsForest {
        if self.h0.is_empty() {
            return self.clone();
        }
        let mut hyper = self.hyperedges.clone();
        hyper.push(self.h0.clone());
        Self::assemble(self.parent.clone(), self.label.clone(), vec![], hyper)
    }

    /// `⌊T⌋_i`: a new root labelled `i` in `h0` below which all old roots hang.
    /// The new root gets the last node id.
    pub fn graft(&self, i: usize) -> LionsForest {
        let x0 = self.len();
        let mut parent: Vec<Option<usize>> = self.parent.iter().map(|p| Some(p.unwrap_or(x0))).collect();
        parent.push(None);
        let mut label = self.label.clone();
        label.push(i);
        let mut h0 = self.h0.clone();
        h0.push(x0);
        Self::assemble(parent, label, h0, self.hyperedges.clone())
    }

    /// Relabels nodes so that new node `k` is old node `order[k]`.
    pub fn relabel(&self, order: &[usize]) -> LionsForest {
        assert_eq!(order.len(), self.len());
        let mut inv = vec![0; self.len()];
        for (k, &v) in order.iter().enumerate() {
            inv[v] = k;
        }
        let parent = order.iter().map(|&v| self.parent[v].map(|p| inv[p])).collect();
        let label = order.iter().map(|&v| self.label[v]).collect();
        let h0 = self.h0.iter().map(|&v| inv[v]).collect();
        let hyper = self.hyperedges.iter().map(|h| h.iter().map(|&v| inv[v]).collect()).collect();
        Self::assemble(parent, label, h0, hyper)
    }

    /// Induced sub-forest on `nodes` (sorted on output); new id `k` is `nodes[k]`.
    /// Parents outside `nodes` are dropped and hyperedges are intersected.
    pub fn restrict(&self, nodes: &[usize]) -> (LionsForest, Vec<usize>) {
        let mut keep = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut inv = vec![usize::MAX; self.len()];
        for (k, &v) in keep.iter().enumerate() {
            inv[v] = k;
        }
        let parent = keep.iter().map(|&v| self.parent[v].and_then(|p| (inv[p] != usize::MAX).then(|| inv[p]))).collect();
        let label = keep.iter().map(|&v| self.label[v]).collect();
        let h0 = self.h0.iter().filter(|&&v| inv[v] != usize::MAX).map(|&v| inv[v]).collect();
        let hyper = self
            .hyperedges
            .iter()
            .map(|h| h.iter().filter(|&&v| inv[v] != usize::MAX).map(|&v| inv[v]).collect::<Vec<_>>())
            .filter(|h| !h.is_empty())
            .collect();
        (Self::assemble(parent, label, h0, hyper), keep)
    }

    /// Node sets of the connected components, ordered by root.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut root_of = vec![0; self.len()];
        for (v, r) in root_of.iter_mut().enumerate() {
            let mut u = v;
            while let Some(p) = self.parent[u] {
                u = p;
            }
            *r = u;
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, &r) in root_of.iter().enumerate() {
            by_root.entry(r).or_default().push(v);
        }
        by_root.into_values().collect()
    }

    pub fn is_tree(&self) -> bool {
        self.roots().len() == 1
    }

    /// Groups of components that cannot be separated as ⊛-factors: each tree
    /// whose root lies in `h0` alone, and all trees whose roots share one
    /// ordinary hyperedge together.
    pub fn factor_groups(&self) -> Vec<Vec<usize>> {
        let comps = self.components();
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for c in comps {
            let r = *c.iter().find(|&&v| self.parent[v].is_none()).expect("component root");
            let key = match self.slot(r) {
                Slot::Zero => (0, r),
                Slot::Hyper(k) => (1, self.hyperedges[k][0]),
            };
            groups.entry(key).or_default().extend(c);
        }
        groups
            .into_values()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect()
    }

    /// Moves hyperedge `k` into an empty `h0`.
    pub(crate) fn promote(&self, k: usize) -> LionsForest {
        assert!(self.h0.is_empty());
        let mut hyper = self.hyperedges.clone();
        let h = hyper.remove(k);
        Self::assemble(self.parent.clone(), self.label.clone(), h, hyper)
    }

    fn layout(&self) -> Layout {
        let n = self.len();
        let depth = self.depths();
        let slots = self.slots();
        let children = self.children();
        let mut by_depth: Vec<usize> = (0..n).collect();
        by_depth.sort_by_key(|&v| std::cmp::Reverse(depth[v]));
        let mut enc = vec![String::new(); n];
        let mut conts = vec![Vec::new(); n];
        let mut groups = vec![Vec::new(); n];
        let group_str = |g: &[usize], enc: &[String]| {
            let mut s = String::from("[");
            for &c in g {
                s.push_str(&enc[c]);
            }
            s.push(']');
            s
        };
        for &v in &by_depth {
            let mut cont: Vec<usize> = Vec::new();
            let mut fresh: BTreeMap<Slot, Vec<usize>> = BTreeMap::new();
            for &c in &children[v] {
                if slots[c] == slots[v] {
                    cont.push(c);
                } else {
                    fresh.entry(slots[c]).or_default().push(c);
                }
            }
            cont.sort_by(|a, b| enc[*a].cmp(&enc[*b]));
            let mut gs: Vec<Vec<usize>> = fresh
                .into_values()
                .map(|mut g| {
                    g.sort_by(|a, b| enc[*a].cmp(&enc[*b]));
                    g
                })
                .collect();
            gs.sort_by_cached_key(|g| group_str(g, &enc));
            let mut s = format!("({}", self.label[v]);
            for &c in &cont {
                s.push_str(&enc[c]);
            }
            s.push('|');
            for g in &gs {
                s.push_str(&group_str(g, &enc));
            }
            s.push(')');
            enc[v] = s;
            conts[v] = cont;
            groups[v] = gs;
        }
        let mut top_zero: Vec<usize> = Vec::new();
        let mut fresh: BTreeMap<Slot, Vec<usize>> = BTreeMap::new();
        for r in self.roots() {
            match slots[r] {
                Slot::Zero => top_zero.push(r),
                s => fresh.entry(s).or_default().push(r),
            }
        }
        top_zero.sort_by(|a, b| enc[*a].cmp(&enc[*b]));
        let mut top_groups: Vec<Vec<usize>> = fresh
            .into_values()
            .map(|mut g| {
                g.sort_by(|a, b| enc[*a].cmp(&enc[*b]));
                g
            })
            .collect();
        top_groups.sort_by_cached_key(|g| group_str(g, &enc));
        let mut top = String::from("<");
        for &r in &top_zero {
            top.push_str(&enc[r]);
        }
        top.push('|');
        for g in &top_groups {
            top.push_str(&group_str(g, &enc));
        }
        top.push('>');
        Layout { enc, conts, groups, top_zero, top_groups, top }
    }

    /// Canonical encoding of the isomorphism class.
    pub fn encoding(&self) -> String {
        self.layout().top
    }

    pub fn key(&self) -> CanonicalKey {
        CanonicalKey(hex::encode(self.encoding().as_bytes()))
    }

    /// Nodes in canonical traversal order: position `k` holds an original node id.
    pub fn canonical_order(&self) -> Vec<usize> {
        let lay = self.layout();
        let mut out = Vec::with_capacity(self.len());
        fn visit(v: usize, lay: &Layout, out: &mut Vec<usize>) {
            out.push(v);
            for &c in &lay.conts[v] {
                visit(c, lay, out);
            }
            for g in &lay.groups[v] {
                for &c in g {
                    visit(c, lay, out);
                }
            }
        }
        for &r in &lay.top_zero {
            visit(r, &lay, &mut out);
        }
        for g in &lay.top_groups {
            for &r in g {
                visit(r, &lay, &mut out);
            }
        }
        out
    }

    /// The canonical representative: nodes renumbered in canonical traversal order.
    pub fn canonical(&self) -> LionsForest {
        self.relabel(&self.canonical_order())
    }

    /// Every node order that maps this forest onto its canonical representative,
    /// one per automorphism.
    pub fn canonical_labelings(&self) -> Vec<Vec<usize>> {
        self.canonical_data().1
    }

    /// Encoding and canonical labelings from one layout pass.
    pub(crate) fn canonical_data(&self) -> (String, Vec<Vec<usize>>) {
        let lay = self.layout();
        fn node_orders(v: usize, lay: &Layout) -> Vec<Vec<usize>> {
            let conts: Vec<(String, Vec<Vec<usize>>)> =
                lay.conts[v].iter().map(|&c| (lay.enc[c].clone(), node_orders(c, lay))).collect();
            let groups: Vec<(String, Vec<Vec<usize>>)> = lay.groups[v].iter().map(|g| group_orders(g, lay)).collect();
            let mut out = vec![vec![v]];
            out = concat_product(&out, &seq_orders(&conts));
            concat_product(&out, &seq_orders(&groups))
        }
        fn group_orders(g: &[usize], lay: &Layout) -> (String, Vec<Vec<usize>>) {
            let items: Vec<(String, Vec<Vec<usize>>)> = g.iter().map(|&c| (lay.enc[c].clone(), node_orders(c, lay))).collect();
            let key: String = items.iter().map(|i| i.0.as_str()).collect();
            (key, seq_orders(&items))
        }
        let zero: Vec<(String, Vec<Vec<usize>>)> =
            lay.top_zero.iter().map(|&r| (lay.enc[r].clone(), node_orders(r, &lay))).collect();
        let groups: Vec<(String, Vec<Vec<usize>>)> = lay.top_groups.iter().map(|g| group_orders(g, &lay)).collect();
        let orders = concat_product(&seq_orders(&zero), &seq_orders(&groups));
        (lay.top, orders)
    }
}

struct Layout {
    enc: Vec<String>,
    conts: Vec<Vec<usize>>,
    groups: Vec<Vec<Vec<usize>>>,
    top_zero: Vec<usize>,
    top_groups: Vec<Vec<usize>>,
    top: String,
}

fn concat_product(a: &[Vec<usize>], b: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            let mut z = x.clone();
            z.extend_from_slice(y);
            out.push(z);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Orders of a key-sorted item list: items with equal keys may be permuted,
/// and each item contributes one of its own orders.
fn seq_orders(items: &[(String, Vec<Vec<usize>>)]) -> Vec<Vec<usize>> {
    let mut acc = vec![vec![]];
    let mut i = 0;
    while i < items.len() {
        let mut j = i + 1;
        while j < items.len() && items[j].0 == items[i].0 {
            j += 1;
        }
        let mut run_opts = Vec::new();
        for perm in permutations(j - i) {
            let mut part = vec![vec![]];
            for &p in &perm {
                part = concat_product(&part, &items[i + p].1);
            }
            run_opts.extend(part);
        }
        acc = concat_product(&acc, &run_opts);
        i = j;
    }
    acc
}

#[derive(Serialize, Deserialize)]
struct ForestJson {
    parent: Vec<Option<usize>>,
    label: Vec<usize>,
    h0: Vec<usize>,
    #[serde(rename = "H")]
    hyper: Vec<Vec<usize>>,
}

impl Serialize for LionsForest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ForestJson {
            parent: self.parent.clone(),
            label: self.label.clone(),
            h0: self.h0.clone(),
            hyper: self.hyperedges.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LionsForest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ForestJson::deserialize(d)?;
        LionsForest::new(j.parent, j.label, j.h0, j.hyper).map_err(serde::de::Error::custom)
    }
}

/// `E^a[T_1, ..., T_m]`: trees with `a_i = 0` are multiplied plainly, trees
/// sharing a positive value are multiplied and then passed through `E`.
pub fn e_a(a: &PartitionSequence, ts: &[LionsForest]) -> Result<LionsForest> {
    if a.len() != ts.len() {
        return Err(Error::LengthMismatch(format!("sequence of length {} for {} forests", a.len(), ts.len())));
    }
    let mut classes: BTreeMap<usize, LionsForest> = BTreeMap::new();
    for (&v, t) in a.entries().iter().zip(ts) {
        let acc = classes.entry(v).or_insert_with(LionsForest::unit);
        *acc = acc.product(t);
    }
    let mut out = LionsForest::unit();
    for (v, f) in classes {
        out = out.product(&if v == 0 { f } else { f.expectation() });
    }
    Ok(out)
}

/// Bounds `𝒢_{α,β}[T] ≤ γ` on forests with labels in `1..=d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
}

impl Truncation {
    pub fn new(gamma: f64, alpha: f64, beta: f64, d: usize) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::UnboundedTruncation(format!("alpha={alpha}, beta={beta}, gamma={gamma}")));
        }
        if d == 0 {
            return Err(Error::Domain("label alphabet must be nonempty".into()));
        }
        Ok(Truncation { gamma, alpha, beta, d })
    }

    /// `⌊γ / (α ∧ β)⌋`, the largest node count in the truncation.
    pub fn max_nodes(&self) -> usize {
        let r = self.gamma / self.alpha.min(self.beta);
        if r < 0.0 {
            0
        } else {
            (r + 1e-9).floor() as usize
        }
    }

    pub fn admits(&self, f: &LionsForest) -> bool {
        f.labels().iter().all(|&l| l <= self.d) && f.weight(self.alpha, self.beta) <= self.gamma + 1e-9
    }
}

/// All forests of the truncation, one canonical representative per class,
/// sorted by key. Built by closing `𝟏` and the `T_i` under ⊛, `E` and grafting.
pub fn enumerate_forests(trunc: &Truncation) -> Vec<LionsForest> {
    let nmax = trunc.max_nodes();
    let mut by_size: Vec<BTreeMap<String, LionsForest>> = vec![BTreeMap::from([(LionsForest::unit().encoding(), LionsForest::unit())])];
    for n in 1..=nmax {
        let mut level: BTreeMap<String, LionsForest> = BTreeMap::new();
        let insert = |f: LionsForest, level: &mut BTreeMap<String, LionsForest>| {
            level.entry(f.encoding()).or_insert_with(|| f.canonical());
        };
        for f in by_size[n - 1].values() {
            for i in 1..=trunc.d {
                insert(f.graft(i), &mut level);
            }
        }
        for a in 1..=n / 2 {
            for x in by_size[a].values() {
                for y in by_size[n - a].values() {
                    insert(x.product(y), &mut level);
                }
            }
        }
        let base: Vec<LionsForest> = level.values().cloned().collect();
        for f in base {
            insert(f.expectation(), &mut level);
        }
        by_size.push(level);
    }
    let mut out: Vec<LionsForest> = by_size.into_iter().flat_map(|m| m.into_values()).filter(|f| trunc.admits(f)).collect();
    out.sort_by_cached_key(|f| f.key());
    out
}

/// Expression over the generators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Unit,
    Generator(usize),
    Product(Box<Expr>, Box<Expr>),
    Expectation(Box<Expr>),
    Graft(Box<Expr>, usize),
}

impl Expr {
    pub fn eval(&self) -> LionsForest {
        match self {
            Expr::Unit => LionsForest::unit(),
            Expr::Generator(i) => LionsForest::generator(*i),
            Expr::Product(a, b) => a.eval().product(&b.eval()),
            Expr::Expectation(a) => a.eval().expectation(),
            Expr::Graft(a, i) => a.eval().graft(*i),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Unit => write!(f, "1"),
            Expr::Generator(i) => write!(f, "T{i}"),
            Expr::Product(a, b) => write!(f, "({a} * {b})"),
            Expr::Expectation(a) => write!(f, "E[{a}]"),
            Expr::Graft(a, i) => write!(f, "[{a}]_{i}"),
        }
    }
}

/// Writes a valid forest as an expression over `T_i`, ⊛, `E` and grafting.
pub fn decompose(f: &LionsForest) -> Expr {
    if f.is_empty() {
        return Expr::Unit;
    }
    let groups = f.factor_groups();
    if groups.len() > 1 {
        let mut it = groups.iter().map(|g| decompose(&f.restrict(g).0));
        let first = it.next().expect("nonempty");
        return it.fold(first, |acc, e| Expr::Product(Box::new(acc), Box::new(e)));
    }
    let roots = f.roots();
    if f.h0.is_empty() {
        let k = match f.slot(roots[0]) {
            Slot::Hyper(k) => k,
            Slot::Zero => unreachable!(),
        };
        return Expr::Expectation(Box::new(decompose(&f.promote(k))));
    }
    let r = roots[0];
    let rest: Vec<usize> = (0..f.len()).filter(|&v| v != r).collect();
    if rest.is_empty() {
        return Expr::Generator(f.label[r]);
    }
    Expr::Graft(Box::new(decompose(&f.restrict(&rest).0)), f.label[r])
}

/// Coupling over the concatenated hyperedge indices of `parts`, joining
/// hyperedges that descend from the same slot of `origin`. Each part comes
/// with its map from own node ids to `origin` node ids.
pub fn origin_coupling(origin: &LionsForest, parts: &[(&LionsForest, &[usize])]) -> SetPartition {
    let slots = origin.slots();
    let mut by_origin: BTreeMap<Slot, Vec<usize>> = BTreeMap::new();
    let mut off = 0;
    for (f, map) in parts {
        for (k, h) in f.hyperedges().iter().enumerate() {
            by_origin.entry(slots[map[h[0]]]).or_default().push(off + k);
        }
        off += f.hyperedges().len();
    }
    SetPartition::new(by_origin.into_values().collect()).expect("distinct block indices")
}

/// An admissible cut of a tree.
#[derive(Clone, Debug)]
pub struct Cut {
    /// Child endpoints of the cut edges.
    pub edges: Vec<usize>,
    pub prune: LionsForest,
    pub prune_nodes: Vec<usize>,
    pub root: LionsForest,
    pub root_nodes: Vec<usize>,
    /// Couples prune and root hyperedges descending from one hyperedge of the tree.
    pub coupling: SetPartition,
}

/// All nonempty edge sets meeting each root path at most once.
pub fn admissible_cuts(t: &LionsForest) -> Result<Vec<Cut>> {
    let comps = t.roots().len();
    if comps != 1 {
        return Err(Error::NotATree(comps));
    }
    let n = t.len();
    let nonroot: Vec<usize> = (0..n).filter(|&v| t.parent[v].is_some()).collect();
    let is_ancestor = |a: usize, mut b: usize| {
        while let Some(p) = t.parent[b] {
            if p == a {
                return true;
            }
            b = p;
        }
        false
    };
    let mut out = Vec::new();
    for mask in 1u64..(1u64 << nonroot.len()) {
        let edges: Vec<usize> = (0..nonroot.len()).filter(|i| mask >> i & 1 == 1).map(|i| nonroot[i]).collect();
        if edges.iter().any(|&a| edges.iter().any(|&b| a != b && is_ancestor(a, b))) {
            continue;
        }
        let below: Vec<usize> = (0..n).filter(|&v| edges.iter().any(|&e| e == v || is_ancestor(e, v))).collect();
        let above: Vec<usize> = (0..n).filter(|v| !below.contains(v)).collect();
        let (prune, prune_nodes) = t.restrict(&below);
        let (root, root_nodes) = t.restrict(&above);
        let coupling = origin_coupling(t, &[(&prune, &prune_nodes), (&root, &root_nodes)]);
        out.push(Cut { edges, prune, prune_nodes, root, root_nodes, coupling });
    }
    out.sort_by(|a, b| a.edges.cmp(&b.edges));
    Ok(out)
}

/// `(H', D)`: hyperedges as vertices, edges where the union is still a hyperedge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualForest {
    pub vertices: Vec<Slot>,
    pub edges: Vec<(usize, usize)>,
}

impl DualForest {
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbours(&self, a: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(x, y)| if x == a { Some(y) } else if y == a { Some(x) } else { None })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in self.neighbours(a) {
                if !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn dual_forest(t: &LionsForest) -> DualForest {
    let mut vertices = Vec::new();
    if !t.h0.is_empty() {
        vertices.push(Slot::Zero);
    }
    vertices.extend((0..t.hyperedges.len()).map(Slot::Hyper));
    let depth = t.depths();
    let mut edges = Vec::new();
    for a in 0..vertices.len() {
        for b in a + 1..vertices.len() {
            let mut u = t.slot_nodes(vertices[a]).to_vec();
            u.extend_from_slice(t.slot_nodes(vertices[b]));
            if t.check_hyperedge(&u, &depth).is_ok() {
                edges.push((a, b));
            }
        }
    }
    DualForest { vertices, edges }
}

/// Unites two hyperedges joined in the dual forest; `h0` absorbs its partner.
pub fn merge_hyperedges(t: &LionsForest, a: Slot, b: Slot) -> Result<LionsForest> {
    let dual = dual_forest(t);
    let ia = dual.vertices.iter().position(|&s| s == a);
    let ib = dual.vertices.iter().position(|&s| s == b);
    match (ia, ib) {
        (Some(x), Some(y)) if x != y && dual.has_edge(x, y) => {}
        _ => return Err(Error::NotDualEdge(format!("{a:?}, {b:?}"))),
    }
    let mut h0 = t.h0.clone();
    let mut hyper = t.hyperedges.clone();
    match (a, b) {
        (Slot::Zero, Slot::Hyper(k)) | (Slot::Hyper(k), Slot::Zero) => {
            h0.extend(hyper.remove(k));
        }
        (Slot::Hyper(i), Slot::Hyper(j)) => {
            let (lo, hi) = (i.min(j), i.max(j));
            let h = hyper.remove(hi);
            hyper[lo].extend(h);
        }
        _ => unreachable!(),
    }
    Ok(LionsForest::assemble(t.parent.clone(), t.label.clone(), h0, hyper))
}

/// `H^(0), H^(1), ...`: `H^(0)` holds the hyperedges containing a root, and
/// `H^(i+1)` the unplaced dual neighbours of `H^(i)`. Entries index `dual.vertices`.
pub fn level_partition(t: &LionsForest, dual: &DualForest) -> Vec<Vec<usize>> {
    let roots: BTreeSet<usize> = t.roots().into_iter().collect();
    let mut placed = vec![false; dual.vertices.len()];
    let mut level: Vec<usize> = (0..dual.vertices.len())
        .filter(|&i| t.slot_nodes(dual.vertices[i]).iter().any(|v| roots.contains(v)))
        .collect();
    let mut out = Vec::new();
    while !level.is_empty() {
        for &i in &level {
            placed[i] = true;
        }
        let mut next: BTreeSet<usize> = BTreeSet::new();
        for &i in &level {
            for j in dual.neighbours(i) {
                if !placed[j] {
                    next.insert(j);
                }
            }
        }
        out.push(level);
        level = next.into_iter().collect();
    }
    out
}

/// Isomorphism classes keyed by canonical key, with multiplicities.
pub fn count_classes<'a>(fs: impl IntoIterator<Item = &'a LionsForest>) -> HashMap<CanonicalKey, usize> {
    let mut m = HashMap::new();
    for f in fs {
        *m.entry(f.key()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ladder2_mixed() -> LionsForest {
        // root 0 in h0, leaf 1 in its own hyperedge
        LionsForest::new(vec![None, Some(0)], vec![1, 1], vec![0], vec![vec![1]]).unwrap()
    }

    #[test]
    fn single_node_is_valid() {
        assert!(LionsForest::generator(1).is_valid());
    }

    #[test]
    fn leaf_only_zero_hyperedge_fails_first_condition() {
        let f = LionsForest::from_parts(vec![None, Some(0)], vec![1, 1], vec![1], vec![vec![0]]).unwrap();
        assert_eq!(f.validate().unwrap_err().condition, Condition::ZeroHasRoot);
    }

    #[test]
    fn cycle_is_a_shape_error() {
        let f = LionsForest::from_parts(vec![Some(1), Some(0)], vec![1, 1], vec![], vec![vec![0, 1]]).unwrap();
        assert_eq!(f.validate().unwrap_err().condition, Condition::Shape);
    }

    #[test]
    fn hypergraph_examples_on_their_trees() {
        // nodes renumbered from 0: cherry rooted at "3" with leaves "1","2" sharing a hyperedge
        let a = LionsForest::new(vec![Some(2), Some(2), None], vec![1; 3], vec![2], vec![vec![0, 1]]);
        assert!(a.is_ok());
        // root "3", children "1","2", "4" above "2", all in one hyperedge
        let b = LionsForest::new(vec![Some(2), Some(2), None, Some(1)], vec![1; 4], vec![], vec![vec![0, 1, 2, 3]]);
        assert!(b.is_ok());
        // root "1" in h0, children "2","3","4", "5" above "2" sharing its hyperedge
        let c = LionsForest::new(
            vec![None, Some(0), Some(0), Some(0), Some(1)],
            vec![1; 5],
            vec![0],
            vec![vec![1, 4], vec![2], vec![3]],
        );
        assert!(c.is_ok());
    }

    #[test]
    fn deeper_node_without_parent_fails() {
        // root and grandchild share a hyperedge, the middle node does not
        let f = LionsForest::from_parts(vec![None, Some(0), Some(1)], vec![1; 3], vec![0, 2], vec![vec![1]]).unwrap();
        assert_eq!(f.validate().unwrap_err().condition, Condition::DeeperParent);
    }

    #[test]
    fn cousins_fail_distinct_parent_check() {
        // 0 root; 1,2 children; 3 child of 1, 4 child of 2; hyperedge {3,4}
        let f = LionsForest::from_parts(
            vec![None, Some(0), Some(0), Some(1), Some(2)],
            vec![1; 5],
            vec![0],
            vec![vec![1], vec![2], vec![3, 4]],
        )
        .unwrap();
        assert_eq!(f.validate().unwrap_err().condition, Condition::DistinctParents);
    }

    #[test]
    fn expectation_and_unit() {
        let t = LionsForest::generator(2);
        let e = t.expectation();
        assert!(e.h0().is_empty());
        assert_eq!(e.hyperedges(), &[vec![0]]);
        assert_eq!(e.expectation(), e);
        assert_eq!(t.product(&LionsForest::unit()), t);
        assert_eq!(e.grading(), (0, 1));
        assert_eq!(LionsForest::unit().grading(), (0, 0));
    }

    #[test]
    fn graft_of_unit_and_of_red_node() {
        assert_eq!(LionsForest::unit().graft(3).key(), LionsForest::generator(3).key());
        let l = LionsForest::generator(3).expectation().graft(1);
        let expect = LionsForest::new(vec![None, Some(0)], vec![1, 3], vec![0], vec![vec![1]]).unwrap();
        assert_eq!(l.key(), expect.key());
        assert!(l.is_valid());
        assert_eq!(l.roots().len(), 1);
    }

    #[test]
    fn e_a_expansions() {
        let ts = vec![LionsForest::generator(1), LionsForest::generator(2), LionsForest::generator(1).graft(2)];
        let z = e_a(&PartitionSequence::new(vec![0, 0, 0]).unwrap(), &ts).unwrap();
        assert_eq!(z.key(), ts[0].product(&ts[1]).product(&ts[2]).key());
        let o = e_a(&PartitionSequence::new(vec![1, 1, 1]).unwrap(), &ts).unwrap();
        assert_eq!(o.key(), ts[0].product(&ts[1]).product(&ts[2]).expectation().key());
        let m = e_a(&PartitionSequence::new(vec![0, 1, 2]).unwrap(), &ts).unwrap();
        assert_eq!(m.key(), ts[0].product(&ts[1].expectation()).product(&ts[2].expectation()).key());
        assert!(e_a(&PartitionSequence::new(vec![0]).unwrap(), &ts).is_err());
    }

    #[test]
    fn key_ignores_node_numbering() {
        let c = LionsForest::new(
            vec![None, Some(0), Some(0), Some(0), Some(1)],
            vec![1, 2, 1, 2, 1],
            vec![0],
            vec![vec![1, 4], vec![2], vec![3]],
        )
        .unwrap();
        let p = c.relabel(&[3, 0, 4, 2, 1]);
        assert_eq!(p.key(), c.key());
        assert_eq!(p.canonical(), c.canonical());
    }

    #[test]
    fn labelings_count_automorphisms() {
        // two identical leaves under a root: two automorphisms
        let t = LionsForest::new(vec![None, Some(0), Some(0)], vec![1; 3], vec![0, 1, 2], vec![]).unwrap();
        assert_eq!(t.canonical_labelings().len(), 2);
        let c = t.canonical();
        for o in t.canonical_labelings() {
            assert_eq!(t.relabel(&o), c);
        }
        // leaves in distinct hyperedges are still swappable
        let u = LionsForest::new(vec![None, Some(0), Some(0)], vec![1; 3], vec![0], vec![vec![1], vec![2]]).unwrap();
        assert_eq!(u.canonical_labelings().len(), 2);
        // sharing a hyperedge or not is distinguished
        let w = LionsForest::new(vec![None, Some(0), Some(0)], vec![1; 3], vec![0], vec![vec![1, 2]]).unwrap();
        assert_ne!(u.key(), w.key());
    }

    #[test]
    fn small_class_counts_at_d1() {
        let tr = Truncation::new(2.0, 1.0, 1.0, 1).unwrap();
        let fs = enumerate_forests(&tr);
        let one = fs.iter().filter(|f| f.len() == 1).count();
        let two_trees = fs.iter().filter(|f| f.len() == 2 && f.is_tree()).count();
        assert_eq!(one, 2);
        assert_eq!(two_trees, 4);
        let only_unit = enumerate_forests(&Truncation::new(0.5, 1.0, 1.0, 1).unwrap());
        assert_eq!(only_unit, vec![LionsForest::unit()]);
        assert!(Truncation::new(1.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn decompose_examples() {
        assert_eq!(decompose(&LionsForest::generator(2)), Expr::Generator(2));
        let l = LionsForest::new(vec![None, Some(0)], vec![2, 1], vec![0, 1], vec![]).unwrap();
        assert_eq!(decompose(&l), Expr::Graft(Box::new(Expr::Generator(1)), 2));
    }

    #[test]
    fn cut_counts() {
        assert_eq!(admissible_cuts(&LionsForest::generator(1)).unwrap().len(), 0);
        // root 0 with a leaf 1 and a chain 2 -> 3
        let t = LionsForest::new(vec![None, Some(0), Some(0), Some(2)], vec![1; 4], vec![0, 1, 2, 3], vec![]).unwrap();
        assert_eq!(admissible_cuts(&t).unwrap().len(), 5);
        let ladder = LionsForest::new(vec![None, Some(0), Some(1), Some(2)], vec![1; 4], vec![0], vec![vec![1, 2, 3]]).unwrap();
        assert_eq!(admissible_cuts(&ladder).unwrap().len(), 3);
        assert!(admissible_cuts(&LionsForest::generator(1).product(&LionsForest::generator(1))).is_err());
    }

    #[test]
    fn dual_of_the_four_hyperedge_tree() {
        // root (3) in h0; left child (1) with child (2) in red; right child (2) blue with child (1) green
        let t = LionsForest::new(
            vec![None, Some(0), Some(1), Some(0), Some(3)],
            vec![3, 1, 2, 2, 1],
            vec![0],
            vec![vec![1, 2], vec![3], vec![4]],
        )
        .unwrap();
        let d = dual_forest(&t);
        // vertices: 0 = h0, 1 = red, 2 = blue, 3 = green
        assert_eq!(d.edges, vec![(0, 1), (0, 2), (1, 2), (2, 3)]);
        assert!(d.is_connected());
        assert_eq!(level_partition(&t, &d), vec![vec![0], vec![1, 2], vec![3]]);
        let m = merge_hyperedges(&t, Slot::Hyper(1), Slot::Hyper(2)).unwrap();
        assert!(m.is_valid());
        assert!(merge_hyperedges(&t, Slot::Zero, Slot::Hyper(2)).is_err());
    }

    #[test]
    fn single_hyperedge_dual_is_a_point() {
        let d = dual_forest(&LionsForest::generator(1));
        assert_eq!(d.vertices.len(), 1);
        assert!(d.edges.is_empty() && d.is_connected());
    }

    #[test]
    fn json_roundtrip() {
        let f = ladder2_mixed();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"parent":[null,0],"label":[1,1],"h0":[0],"H":[[1]]}"#);
        assert_eq!(serde_json::from_str::<LionsForest>(&s).unwrap(), f);
        assert!(serde_json::from_str::<LionsForest>(r#"{"parent":[null,0],"label":[1,1],"h0":[1],"H":[[0]]}"#).is_err());
    }
}
