//! Set partitions, partition sequences and couplings of partitions.
//!
//! A partition sequence `a = (a_1, ..., a_n)` has nonnegative entries whose
//! positive subsequence starts at 1 and never jumps by more than one above
//! its running maximum. Prepending `a_0 = 0` and grouping equal values gives
//! a partition of `{0, ..., n}`; this is a bijection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A partition of a finite set of integers into nonempty disjoint blocks.
///
/// Blocks are kept sorted internally and ordered by their minimum, so two
/// partitions are equal exactly when they have the same blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    /// Builds a partition from blocks, checking disjointness and nonemptiness.
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(blocks.len());
        for mut b in blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            b.sort_unstable();
            for &x in &b {
                if !seen.insert(x) {
                    return Err(Error::InvalidPartition(format!("element {x} repeated")));
                }
            }
            out.push(b);
        }
        out.sort_unstable_by_key(|b| b[0]);
        Ok(SetPartition { blocks: out })
    }

    /// Builds a partition of `ground`, additionally checking that the blocks cover it.
    pub fn with_ground(ground: &[usize], blocks: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self::new(blocks)?;
        let mut g: Vec<usize> = ground.to_vec();
        g.sort_unstable();
        g.dedup();
        if p.ground() != g {
            return Err(Error::InvalidPartition("blocks do not cover the ground set".into()));
        }
        Ok(p)
    }

    /// The partition of `ground` into singletons.
    pub fn singletons(ground: &[usize]) -> Self {
        let mut blocks: Vec<Vec<usize>> = ground.iter().map(|&x| vec![x]).collect();
        blocks.sort_unstable();
        blocks.dedup();
        SetPartition { blocks }
    }

    pub fn empty() -> Self {
        SetPartition { blocks: Vec::new() }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sorted union of the blocks.
    pub fn ground(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        g.sort_unstable();
        g
    }

    /// Index of the block containing `x`.
    pub fn block_of(&self, x: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.binary_search(&x).is_ok())
    }

    /// Restriction to `subset`, dropping blocks that become empty.
    pub fn restrict(&self, subset: &BTreeSet<usize>) -> SetPartition {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.iter().copied().filter(|x| subset.contains(x)).collect::<Vec<_>>())
            .filter(|b| !b.is_empty())
            .collect();
        SetPartition::new(blocks).expect("restriction of a partition")
    }

    /// Relabels every element through `f`; `f` must be injective on the ground.
    pub fn map(&self, f: impl Fn(usize) -> usize) -> SetPartition {
        SetPartition::new(self.blocks.iter().map(|b| b.iter().map(|&x| f(x)).collect()).collect())
            .expect("injective relabeling")
    }
}

impl Serialize for SetPartition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.blocks.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SetPartition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let blocks = Vec::<Vec<usize>>::deserialize(d)?;
        SetPartition::new(blocks).map_err(serde::de::Error::custom)
    }
}

/// All set partitions of `ground`, generated as restricted growth strings.
pub fn enumerate_set_partitions(ground: &[usize]) -> Vec<SetPartition> {
    let mut g = ground.to_vec();
    g.sort_unstable();
    g.dedup();
    let mut out = Vec::new();
    let mut rgs = vec![0usize; g.len()];
    fn rec(k: usize, max: usize, rgs: &mut Vec<usize>, g: &[usize], out: &mut Vec<SetPartition>) {
        if k == g.len() {
            let nb = if g.is_empty() { 0 } else { max + 1 };
            let mut blocks = vec![Vec::new(); nb];
            for (i, &c) in rgs.iter().enumerate() {
                blocks[c].push(g[i]);
            }
            out.push(SetPartition { blocks });
            return;
        }
        let top = if k == 0 { 0 } else { max + 1 };
        for c in 0..=top {
            rgs[k] = c;
            rec(k + 1, max.max(c), rgs, g, out);
        }
    }
    rec(0, 0, &mut rgs, &g, &mut out);
    out
}

/// A partition sequence `a ∈ A_n^(0)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct PartitionSequence {
    entries: Vec<usize>,
}

impl PartitionSequence {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        let n = entries.len();
        let mut max = 0usize;
        for (i, &a) in entries.iter().enumerate() {
            if a > n {
                return Err(Error::InvalidSequence(format!("entry {a} at position {} exceeds length {n}", i + 1)));
            }
            if a > max + 1 {
                return Err(Error::InvalidSequence(format!(
                    "entry {a} at position {} exceeds running maximum {max} by more than one",
                    i + 1
                )));
            }
            max = max.max(a);
        }
        Ok(PartitionSequence { entries })
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `m[a]`, the maximal entry.
    pub fn m(&self) -> usize {
        self.entries.iter().copied().max().unwrap_or(0)
    }

    /// `l[a]`: for `i = 1..=m[a]`, the number of entries equal to `i`.
    pub fn l(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m()];
        for &a in &self.entries {
            if a > 0 {
                counts[a - 1] += 1;
            }
        }
        counts
    }

    /// Number of zero entries.
    pub fn zeros(&self) -> usize {
        self.entries.iter().filter(|&&a| a == 0).count()
    }
}

impl<'de> Deserialize<'de> for PartitionSequence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<usize>::deserialize(d)?;
        PartitionSequence::new(entries).map_err(serde::de::Error::custom)
    }
}

/// Lexicographically ordered partition sequences of length `n`, optionally
/// restricted to exactly `k` zeros.
pub fn enumerate_sequences(n: usize, k: Option<usize>) -> Result<Vec<PartitionSequence>> {
    if n == 0 {
        return Err(Error::EmptyInput("sequence length must be positive".into()));
    }
    if let Some(k) = k {
        if k > n {
            return Err(Error::Domain(format!("zero count {k} exceeds length {n}")));
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, k: Option<usize>, max: usize, zeros: usize, cur: &mut Vec<usize>, out: &mut Vec<PartitionSequence>) {
        if cur.len() == n {
            if k.is_none_or(|k| k == zeros) {
                out.push(PartitionSequence { entries: cur.clone() });
            }
            return;
        }
        let left = n - cur.len();
        for a in 0..=max + 1 {
            let z = zeros + usize::from(a == 0);
            if let Some(k) = k {
                // too many zeros, or not enough room left for the remaining ones
                if z > k || k - z > left - 1 {
                    continue;
                }
            }
            cur.push(a);
            rec(n, k, max.max(a), z, cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, 0, &mut cur, &mut out);
    Ok(out)
}

/// The partition of `{0, ..., n}` grouping indices with equal values, with `a_0 = 0`.
pub fn sequence_to_partition(a: &PartitionSequence) -> SetPartition {
    let mut by_value: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    by_value.entry(0).or_default().push(0);
    for (i, &v) in a.entries.iter().enumerate() {
        by_value.entry(v).or_default().push(i + 1);
    }
    SetPartition::new(by_value.into_values().collect()).expect("value classes are disjoint")
}

/// Inverse of [`sequence_to_partition`].
pub fn partition_to_sequence(p: &SetPartition) -> Result<PartitionSequence> {
    let g = p.ground();
    if g.is_empty() || g.iter().enumerate().any(|(i, &x)| i != x) {
        return Err(Error::InvalidPartition("ground must be {0,...,n}".into()));
    }
    let n = g.len() - 1;
    let mut entries = vec![0; n];
    // blocks are ordered by minimum, so the block of 0 comes first
    for (v, b) in p.blocks().iter().enumerate() {
        for &x in b {
            if x > 0 {
                entries[x - 1] = v;
            }
        }
    }
    PartitionSequence::new(entries)
}

/// An element of `P ∪̃ Q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coupling {
    pub left: SetPartition,
    pub right: SetPartition,
    pub joint: SetPartition,
}

impl Coupling {
    /// Checks that `joint` restricts to `left` and to `right`.
    pub fn new(left: SetPartition, right: SetPartition, joint: SetPartition) -> Result<Self> {
        let lg: BTreeSet<usize> = left.ground().into_iter().collect();
        let rg: BTreeSet<usize> = right.ground().into_iter().collect();
        if let Some(&x) = lg.intersection(&rg).next() {
            return Err(Error::OverlappingGrounds(x));
        }
        let jg: BTreeSet<usize> = joint.ground().into_iter().collect();
        if jg != lg.union(&rg).copied().collect() {
            return Err(Error::CouplingIntegrity("joint ground differs from the union".into()));
        }
        if joint.restrict(&lg) != left || joint.restrict(&rg) != right {
            return Err(Error::CouplingIntegrity("restriction does not recover the parts".into()));
        }
        Ok(Coupling { left, right, joint })
    }
}

fn check_disjoint(grounds: &[Vec<usize>]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for g in grounds {
        for &x in g {
            if !seen.insert(x) {
                return Err(Error::OverlappingGrounds(x));
            }
        }
    }
    Ok(())
}

/// Joint partitions of `P ∪̃ Q`, via partial injections from blocks of `P` to blocks of `Q`.
fn coupled_joints(p: &SetPartition, q: &SetPartition) -> Vec<SetPartition> {
    let pb = p.blocks();
    let qb = q.blocks();
    let mut out = Vec::new();
    let mut used = vec![false; qb.len()];
    let mut pick: Vec<Option<usize>> = vec![None; pb.len()];
    fn rec(
        i: usize,
        pb: &[Vec<usize>],
        qb: &[Vec<usize>],
        used: &mut Vec<bool>,
        pick: &mut Vec<Option<usize>>,
        out: &mut Vec<SetPartition>,
    ) {
        if i == pb.len() {
            let mut blocks = Vec::new();
            for (a, sel) in pick.iter().enumerate() {
                let mut b = pb[a].clone();
                if let Some(j) = sel {
                    b.extend_from_slice(&qb[*j]);
                }
                blocks.push(b);
            }
            for (j, u) in used.iter().enumerate() {
                if !u {
                    blocks.push(qb[j].clone());
                }
            }
            out.push(SetPartition::new(blocks).expect("disjoint grounds"));
            return;
        }
        pick[i] = None;
        rec(i + 1, pb, qb, used, pick, out);
        for j in 0..qb.len() {
            if !used[j] {
                used[j] = true;
                pick[i] = Some(j);
                rec(i + 1, pb, qb, used, pick, out);
                used[j] = false;
            }
        }
        pick[i] = None;
    }
    rec(0, pb, qb, &mut used, &mut pick, &mut out);
    out.sort();
    out
}

/// All couplings of `P` and `Q`, sorted by joint partition.
pub fn enumerate_couplings(p: &SetPartition, q: &SetPartition) -> Result<Vec<Coupling>> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyInput("couplings need nonempty grounds".into()));
    }
    check_disjoint(&[p.ground(), q.ground()])?;
    Ok(coupled_joints(p, q)
        .into_iter()
        .map(|joint| Coupling { left: p.clone(), right: q.clone(), joint })
        .collect())
}

/// `ψ^{P,G}`: for each block of `p`, the index of the block of `joint` containing it.
pub fn psi_map(p: &SetPartition, joint: &SetPartition) -> Result<Vec<usize>> {
    let mut image = Vec::with_capacity(p.len());
    for b in p.blocks() {
        let j = joint
            .block_of(b[0])
            .ok_or_else(|| Error::CouplingIntegrity(format!("element {} missing from joint partition", b[0])))?;
        let jb = &joint.blocks()[j];
        if !b.iter().all(|x| jb.binary_search(x).is_ok()) {
            return Err(Error::CouplingIntegrity(format!("block {b:?} is split by the joint partition")));
        }
        if image.contains(&j) {
            return Err(Error::CouplingIntegrity(format!("two blocks map into joint block {j}")));
        }
        image.push(j);
    }
    Ok(image)
}

/// `∪̃_{i} P_i`, folded from the left.
pub fn enumerate_iterated_couplings(parts: &[SetPartition]) -> Result<Vec<SetPartition>> {
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::EmptyInput("iterated couplings need nonempty parts".into()));
    }
    check_disjoint(&parts.iter().map(|p| p.ground()).collect::<Vec<_>>())?;
    let mut acc: BTreeSet<SetPartition> = BTreeSet::from([parts[0].clone()]);
    for q in &parts[1..] {
        acc = acc.iter().flat_map(|g| coupled_joints(g, q)).collect();
    }
    Ok(acc.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_of_length_two() {
        let s = enumerate_sequences(2, None).unwrap();
        let e: Vec<Vec<usize>> = s.iter().map(|a| a.entries().to_vec()).collect();
        assert_eq!(e, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1], vec![1, 2]]);
    }

    #[test]
    fn zero_count_filter() {
        let s = enumerate_sequences(1, Some(1)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].entries(), &[0]);
        assert_eq!(enumerate_sequences(3, Some(1)).unwrap().iter().filter(|a| a.zeros() != 1).count(), 0);
        assert!(enumerate_sequences(0, None).is_err());
    }

    #[test]
    fn bijection_examples() {
        let a = PartitionSequence::new(vec![0, 1, 1]).unwrap();
        let p = sequence_to_partition(&a);
        assert_eq!(p.blocks(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(partition_to_sequence(&p).unwrap(), a);
        let d = sequence_to_partition(&PartitionSequence::new(vec![1, 2, 3]).unwrap());
        assert_eq!(d.len(), 4);
        let z = SetPartition::new(vec![vec![0], vec![1]]).unwrap();
        assert_eq!(partition_to_sequence(&z).unwrap().entries(), &[1]);
        assert!(partition_to_sequence(&SetPartition::new(vec![vec![1, 2]]).unwrap()).is_err());
    }

    #[test]
    fn invalid_sequences_rejected() {
        assert!(PartitionSequence::new(vec![2]).is_err());
        assert!(PartitionSequence::new(vec![0, 2]).is_err());
        assert!(PartitionSequence::new(vec![1, 0, 2]).is_ok());
    }

    #[test]
    fn m_and_l() {
        let a = PartitionSequence::new(vec![1, 0, 2, 1]).unwrap();
        assert_eq!(a.m(), 2);
        assert_eq!(a.l(), vec![2, 1]);
    }

    #[test]
    fn worked_coupling_example() {
        let p = SetPartition::new(vec![vec![1], vec![2]]).unwrap();
        let q = SetPartition::new(vec![vec![3, 4]]).unwrap();
        let cs = enumerate_couplings(&p, &q).unwrap();
        let joints: BTreeSet<Vec<Vec<usize>>> = cs.iter().map(|c| c.joint.blocks().to_vec()).collect();
        let expect: BTreeSet<Vec<Vec<usize>>> = [
            vec![vec![1, 3, 4], vec![2]],
            vec![vec![1], vec![2, 3, 4]],
            vec![vec![1], vec![2], vec![3, 4]],
        ]
        .into_iter()
        .collect();
        assert_eq!(joints, expect);
        let psi = psi_map(&p, &SetPartition::new(vec![vec![1, 3, 4], vec![2]]).unwrap()).unwrap();
        assert_eq!(psi, vec![0, 1]);
    }

    #[test]
    fn overlapping_and_broken() {
        let p = SetPartition::new(vec![vec![1]]).unwrap();
        assert!(enumerate_couplings(&p, &p).is_err());
        let split = SetPartition::new(vec![vec![1], vec![2]]).unwrap();
        let g = SetPartition::new(vec![vec![1, 2]]).unwrap();
        assert!(psi_map(&SetPartition::new(vec![vec![1, 2]]).unwrap(), &split).is_err());
        assert!(psi_map(&split, &g).is_err());
    }

    #[test]
    fn partitions_serialize_as_lists() {
        let p = SetPartition::new(vec![vec![4, 2], vec![1]]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[1],[2,4]]");
        let back: SetPartition = serde_json::from_str("[[2,4],[1]]").unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<SetPartition>("[[1],[1]]").is_err());
    }
}
