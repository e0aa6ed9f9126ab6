//! Brute-force region oracle: explicit graph of the infinite chain truncated
//! at counter `CAP`, region definitions checked literally on levels ≤ `CHECK`.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use pvass_core::model::{step_distribution, Configuration, Pvass, Rule};
use num_bigint::BigUint;

pub const CAP: u64 = 64;
pub const CHECK: u64 = 16;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleRegion {
    pub kind: &'static str,
    pub members: BTreeSet<(usize, u64)>,
}

struct Graph {
    n: usize,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    leaves: Vec<bool>,
}

fn id(n: usize, q: usize, k: u64) -> usize {
    k as usize * n + q
}

fn build(m: &Pvass) -> Graph {
    let n = m.num_states();
    let size = (CAP as usize + 1) * n;
    let mut succ = vec![Vec::new(); size];
    let mut pred = vec![Vec::new(); size];
    let mut leaves = vec![false; size];
    for k in 0..=CAP {
        for q in 0..n {
            for (c, _) in step_distribution(m, &Configuration::new(q, vec![k])).unwrap() {
                if c.counters[0] > CAP {
                    leaves[id(n, q, k)] = true;
                    continue;
                }
                let (a, b) = (id(n, q, k), id(n, c.state, c.counters[0]));
                succ[a].push(b);
                pred[b].push(a);
            }
        }
    }
    Graph { n, succ, pred, leaves }
}

fn closure(adj: &[Vec<usize>], from: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in from {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

/// BSCCs of the underlying chain by pairwise reachability.
pub fn bsccs(m: &Pvass) -> Vec<Vec<usize>> {
    let n = m.num_states();
    let mut reach = vec![vec![false; n]; n];
    for p in 0..n {
        reach[p][p] = true;
        let mut stack = vec![p];
        while let Some(q) = stack.pop() {
            for r in m.rules().iter().filter(|r| r.src == q) {
                if !reach[p][r.dst] {
                    reach[p][r.dst] = true;
                    stack.push(r.dst);
                }
            }
        }
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    for p in 0..n {
        let class: Vec<usize> = (0..n).filter(|&q| reach[p][q] && reach[q][p]).collect();
        let bottom = (0..n).all(|q| !reach[p][q] || reach[q][p]);
        if bottom && class[0] == p {
            out.push(class);
        }
    }
    out
}

pub fn regions(m: &Pvass) -> Vec<OracleRegion> {
    let g = build(m);
    let n = g.n;
    let b = bsccs(m);
    let bscc_of = |p: usize| b.iter().position(|s| s.contains(&p));
    let mut out: Vec<OracleRegion> = Vec::new();
    let mut add = |r: OracleRegion| {
        if !r.members.is_empty() && !out.contains(&r) {
            out.push(r);
        }
    };
    let low = |set: &[bool]| -> BTreeSet<(usize, u64)> {
        let mut s = BTreeSet::new();
        for k in 0..=CHECK {
            for q in 0..n {
                if set[id(n, q, k)] {
                    s.insert((q, k));
                }
            }
        }
        s
    };
    let mut r1: Vec<Vec<bool>> = vec![vec![false; g.succ.len()]; b.len()];
    let mut r2: Vec<Vec<bool>> = vec![vec![false; g.succ.len()]; b.len()];
    for p in 0..n {
        let post = closure(&g.succ, &[id(n, p, 0)]);
        let pre = closure(&g.pred, &[id(n, p, 0)]);
        let infinite = (0..post.len()).any(|v| post[v] && g.leaves[v]);
        let inside = (0..post.len()).filter(|&v| v / n <= CHECK as usize).all(|v| !post[v] || pre[v]);
        if !inside {
            continue;
        }
        if !infinite {
            if let Some(s) = bscc_of(p) {
                for v in 0..post.len() {
                    r1[s][v] |= post[v];
                }
            }
            add(OracleRegion { kind: "I", members: low(&post) });
        } else if let Some(s) = bscc_of(p) {
            for v in 0..post.len() {
                r2[s][v] |= post[v];
            }
            add(OracleRegion { kind: "II", members: low(&post) });
        }
    }
    let zeros: Vec<usize> = (0..n).map(|q| id(n, q, 0)).collect();
    let reach_zero = closure(&g.pred, &zeros);
    for (si, s) in b.iter().enumerate() {
        let mut three = vec![false; g.succ.len()];
        for &q in s {
            for k in 1..=CHECK {
                three[id(n, q, k)] = !reach_zero[id(n, q, k)];
            }
        }
        let three = low(&three);
        if !three.is_empty() {
            add(OracleRegion { kind: "III", members: three });
            continue;
        }
        let from1: Vec<usize> = (0..r1[si].len()).filter(|&v| r1[si][v]).collect();
        if from1.is_empty() {
            continue;
        }
        let from2: Vec<usize> = (0..r2[si].len()).filter(|&v| r2[si][v]).collect();
        let pre1 = closure(&g.pred, &from1);
        let pre2 = closure(&g.pred, &from2);
        let mut d = vec![false; g.succ.len()];
        for &q in s {
            for k in 0..=CHECK {
                let v = id(n, q, k);
                d[v] = pre1[v] && !r1[si][v] && !pre2[v];
            }
        }
        let d = low(&d);
        if d.iter().any(|&(_, k)| k + 4 > CHECK) {
            add(OracleRegion { kind: "IV", members: d });
        }
    }
    out.sort();
    out
}

/// Random one-counter model with at most one rule per ordered pair.
pub fn random_model(seed: u64, max_states: usize) -> Pvass {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_states);
    let mut rules = Vec::new();
    let mut pairs = BTreeSet::new();
    for p in 0..n {
        let k = rng.gen_range(1..=3);
        for _ in 0..k {
            let dst = rng.gen_range(0..n);
            if pairs.insert((p, dst)) {
                rules.push(Rule {
                    src: p,
                    delta: vec![rng.gen_range(-1i8..=1)],
                    weight: BigUint::from(rng.gen_range(1u32..=3)),
                    dst,
                });
            }
        }
        if p + 1 < n && pairs.insert((p, p + 1)) {
            rules.push(Rule { src: p, delta: vec![rng.gen_range(-1i8..=1)], weight: BigUint::from(1u32), dst: p + 1 });
        }
    }
    Pvass::new(1, (0..n).map(|i| format!("s{i}")).collect(), rules).unwrap()
}
