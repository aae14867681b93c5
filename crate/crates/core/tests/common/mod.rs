//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lions_core::forest::LionsForest;
use lions_core::partitions::enumerate_sequences;
use lions_core::words::LionsWord;

/// `(parent, labels, h0, hyperedges)` under some node order.
pub type Form = (Vec<Option<usize>>, Vec<usize>, Vec<usize>, Vec<Vec<usize>>);

pub fn depths(parent: &[Option<usize>]) -> Vec<usize> {
    (0..parent.len())
        .map(|v| {
            let mut d = 0;
            let mut u = v;
            while let Some(p) = parent[u] {
                u = p;
                d += 1;
            }
            d
        })
        .collect()
}

/// Conditions 2.1 to 2.3 written out directly.
pub fn valid(parent: &[Option<usize>], h0: &[usize], hyper: &[Vec<usize>]) -> bool {
    let depth = depths(parent);
    if !h0.is_empty() && !h0.iter().any(|&v| parent[v].is_none()) {
        return false;
    }
    let sets = std::iter::once(h0).chain(hyper.iter().map(|h| h.as_slice()));
    for set in sets {
        if set.is_empty() {
            continue;
        }
        let top = set.iter().map(|&v| depth[v]).min().unwrap();
        for &v in set {
            if depth[v] > top && !set.contains(&parent[v].unwrap()) {
                return false;
            }
        }
        for &x in set {
            for &y in set {
                if x < y && depth[x] == depth[y] {
                    if let (Some(px), Some(py)) = (parent[x], parent[y]) {
                        if px != py && !(set.contains(&px) && set.contains(&py)) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

fn form_under(order: &[usize], parent: &[Option<usize>], label: &[usize], h0: &[usize], hyper: &[Vec<usize>]) -> Form {
    let mut inv = vec![0; order.len()];
    for (k, &v) in order.iter().enumerate() {
        inv[v] = k;
    }
    let p = order.iter().map(|&v| parent[v].map(|x| inv[x])).collect();
    let l = order.iter().map(|&v| label[v]).collect();
    let mut z: Vec<usize> = h0.iter().map(|&v| inv[v]).collect();
    z.sort_unstable();
    let mut hs: Vec<Vec<usize>> = hyper
        .iter()
        .map(|h| {
            let mut x: Vec<usize> = h.iter().map(|&v| inv[v]).collect();
            x.sort_unstable();
            x
        })
        .collect();
    hs.sort();
    (p, l, z, hs)
}

fn level_orders(levels: &[Vec<usize>]) -> Vec<Vec<usize>> {
    fn perms(xs: &[usize]) -> Vec<Vec<usize>> {
        if xs.len() <= 1 {
            return vec![xs.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..xs.len() {
            let mut rest = xs.to_vec();
            let x = rest.remove(i);
            for mut p in perms(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    let mut acc = vec![Vec::new()];
    for lv in levels {
        let ps = perms(lv);
        acc = acc.iter().flat_map(|a| ps.iter().map(move |p| [a.clone(), p.clone()].concat())).collect();
    }
    acc
}

/// Smallest form over all depth-respecting node orders; equal exactly for
/// isomorphic forests.
pub fn canonical_form(parent: &[Option<usize>], label: &[usize], h0: &[usize], hyper: &[Vec<usize>]) -> Form {
    let depth = depths(parent);
    let maxd = depth.iter().copied().max().unwrap_or(0);
    let levels: Vec<Vec<usize>> = (0..=maxd).map(|d| (0..parent.len()).filter(|&v| depth[v] == d).collect()).collect();
    level_orders(&levels).iter().map(|o| form_under(o, parent, label, h0, hyper)).min().unwrap()
}

pub fn forest_form(f: &LionsForest) -> Form {
    canonical_form(f.parents(), f.labels(), f.h0(), f.hyperedges())
}

/// Partitions of `0..n` into an optional `h0` block and hyperedges.
fn slot_assignments(n: usize) -> Vec<(Vec<usize>, Vec<Vec<usize>>)> {
    // element n marks h0
    let mut out = Vec::new();
    let mut code = vec![0usize; n + 1];
    loop {
        let nb = code.iter().copied().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); nb];
        for (i, &c) in code.iter().enumerate() {
            blocks[c].push(i);
        }
        let zb = code[n];
        let h0: Vec<usize> = blocks[zb].iter().copied().filter(|&v| v < n).collect();
        let hyper: Vec<Vec<usize>> = blocks.iter().enumerate().filter(|&(b, _)| b != zb).map(|(_, x)| x.clone()).collect();
        out.push((h0, hyper));
        let mut i = n + 1;
        loop {
            if i <= 1 {
                return out;
            }
            i -= 1;
            let m = code[..i].iter().copied().max().unwrap();
            if code[i] <= m {
                code[i] += 1;
                for c in code.iter_mut().skip(i + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// Classes of valid forests with exactly `n` nodes and labels in `1..=d`,
/// from all parent maps, labelings and hyperedge assignments.
pub fn brute_force_classes(n: usize, d: usize) -> BTreeSet<Form> {
    let mut out = BTreeSet::new();
    if n == 0 {
        out.insert((vec![], vec![], vec![], vec![]));
        return out;
    }
    // every forest is isomorphic to one whose parents precede their children
    let slots = slot_assignments(n);
    let mut parent = vec![None; n];
    let total: usize = (1..=n).product();
    for code in 0..total {
        let mut c = code;
        for (v, p) in parent.iter_mut().enumerate() {
            let x = c % (v + 1);
            c /= v + 1;
            *p = if x == v { None } else { Some(x) };
        }
        let shapes: Vec<&(Vec<usize>, Vec<Vec<usize>>)> = slots.iter().filter(|(h0, hy)| valid(&parent, h0, hy)).collect();
        if shapes.is_empty() {
            continue;
        }
        for lab in 0..d.pow(n as u32) {
            let mut l = lab;
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    let x = l % d + 1;
                    l /= d;
                    x
                })
                .collect();
            for (h0, hy) in &shapes {
                out.insert(canonical_form(&parent, &labels, h0, hy));
            }
        }
    }
    out
}

/// Minimum-cost perfect assignment, `O(n^3)` potentials method.
pub fn hungarian(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    (total, assign)
}

/// Composite Gauss-Legendre rule with 5 nodes per cell.
pub fn gauss(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_889, 0.478_628_670_499_366, 0.478_628_670_499_366, 0.236_926_885_056_189, 0.236_926_885_056_189];
    let h = (b - a) / cells as f64;
    (0..cells)
        .map(|c| {
            let (lo, hi) = (a + c as f64 * h, a + (c + 1) as f64 * h);
            let (m, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            X.iter().zip(W).map(|(x, w)| w * f(m + r * x)).sum::<f64>() * r
        })
        .sum()
}

/// Every coupled word with at most `n` letters in `1..=d`.
pub fn all_words(n: usize, d: usize) -> Vec<LionsWord> {
    let mut out = vec![LionsWord::unit()];
    for len in 1..=n {
        for a in enumerate_sequences(len, None).unwrap() {
            for code in 0..d.pow(len as u32) {
                let letters = (0..len).map(|k| code / d.pow(k as u32) % d + 1).collect();
                out.push(LionsWord::from_sequence(letters, &a).unwrap());
            }
        }
    }
    out
}
