//! One-counter analysis: termination probabilities, regions, zones, the
//! regenerative chain of negative-trend type II regions, zone frequencies
//! and zone probabilities.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};

use crate::chain::{build_underlying, solve_absorbing, solve_dense, trend_report, UnderlyingChain};
use crate::error::{model_err, Error, Result};
use crate::model::{normalize, Configuration, Normalized, Pattern, Pvass, Rule, StateId};
use crate::numeric::{rat_from_ratio, rat_to_f64, sign_of, solve_rational, Interval, Rat};

// ---------------------------------------------------------------------------
// One-counter view

#[derive(Clone, Debug)]
pub struct OcRule {
    pub src: StateId,
    pub delta: i8,
    /// Update of the dropped counter for projections, 0 otherwise.
    pub label: i8,
    pub weight: BigUint,
    pub prob: f64,
    pub exact: Rat,
    pub dst: StateId,
}

/// A one-counter pVASS whose rules may carry a label in {-1,0,1}.
#[derive(Clone, Debug)]
pub struct OneCounter {
    pub names: Vec<String>,
    pub rules: Vec<OcRule>,
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
}

/// One transition of the infinite chain from a configuration at some level.
#[derive(Clone, Debug, PartialEq)]
pub struct Move {
    pub dst: StateId,
    pub delta: i8,
    pub label: i8,
    pub prob: f64,
    pub exact: Rat,
}

impl OneCounter {
    pub fn new(names: Vec<String>, raw: Vec<(StateId, i8, i8, BigUint, StateId)>) -> Result<Self> {
        let n = names.len();
        let mut totals = vec![BigUint::zero(); n];
        for (s, _, _, w, _) in &raw {
            totals[*s] += w;
        }
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        let mut rules = Vec::with_capacity(raw.len());
        for (i, (src, delta, label, weight, dst)) in raw.into_iter().enumerate() {
            let exact = rat_from_ratio(&weight, &totals[src]);
            out[src].push(i);
            inc[dst].push(i);
            rules.push(OcRule { src, delta, label, prob: rat_to_f64(&exact), exact, weight, dst });
        }
        if out.iter().any(|o| o.is_empty()) {
            return model_err("every state needs an outgoing rule");
        }
        Ok(OneCounter { names, rules, out, inc })
    }

    pub fn from_pvass(m: &Pvass) -> Result<Self> {
        if m.dimension() != 1 {
            return model_err(format!("one-counter analysis needs dimension 1, got {}", m.dimension()));
        }
        Self::new(
            m.states().to_vec(),
            m.rules().iter().map(|r| (r.src, r.delta[0], 0, r.weight.clone(), r.dst)).collect(),
        )
    }

    /// Keeps counter `keep` (0-based); the other counter's update becomes the label.
    pub fn projection(m: &Pvass, keep: usize) -> Result<Self> {
        if m.dimension() != 2 || keep > 1 {
            return model_err("projections are defined for two-counter models");
        }
        Self::new(
            m.states().to_vec(),
            m.rules().iter().map(|r| (r.src, r.delta[keep], r.delta[1 - keep], r.weight.clone(), r.dst)).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn to_pvass(&self) -> Result<Pvass> {
        let rules = self
            .rules
            .iter()
            .map(|r| Rule { src: r.src, delta: vec![r.delta], weight: r.weight.clone(), dst: r.dst })
            .collect();
        Pvass::new(1, self.names.clone(), rules)
    }

    /// Outgoing moves of `q(level)`. At level 0 decrements are disabled and
    /// the rest renormalised; a configuration with no enabled rule loops.
    pub fn moves(&self, q: StateId, level: u64) -> Vec<Move> {
        let mk = |r: &OcRule, exact: Rat| Move { dst: r.dst, delta: r.delta, label: r.label, prob: rat_to_f64(&exact), exact };
        if level > 0 {
            return self.out[q].iter().map(|&i| mk(&self.rules[i], self.rules[i].exact.clone())).collect();
        }
        let enabled: Vec<&OcRule> = self.out[q].iter().map(|&i| &self.rules[i]).filter(|r| r.delta >= 0).collect();
        if enabled.is_empty() {
            return vec![Move { dst: q, delta: 0, label: 0, prob: 1.0, exact: Rat::one() }];
        }
        let total: BigUint = enabled.iter().map(|r| &r.weight).sum();
        enabled.into_iter().map(|r| mk(r, rat_from_ratio(&r.weight, &total))).collect()
    }

    /// Transition matrices at positive levels split by update: (down, stay, up).
    pub fn level_matrices(&self) -> [DMatrix<f64>; 3] {
        let n = self.n();
        let mut a = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for r in &self.rules {
            a[(r.delta + 1) as usize][(r.src, r.dst)] += r.prob;
        }
        a
    }

    /// Label-weighted versions of [`Self::level_matrices`].
    pub fn label_matrices(&self) -> [DMatrix<f64>; 3] {
        let n = self.n();
        let mut a = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for r in &self.rules {
            a[(r.delta + 1) as usize][(r.src, r.dst)] += r.prob * r.label as f64;
        }
        a
    }

    pub fn x_min(&self) -> f64 {
        self.rules.iter().map(|r| r.prob).fold(1.0, f64::min)
    }
}

// ---------------------------------------------------------------------------
// BSCC data

#[derive(Clone, Debug)]
pub struct BsccInfo {
    pub scc: usize,
    pub members: Vec<StateId>,
    pub mu: Vec<Rat>,
    pub trend: Rat,
    /// φ with κ(p→q) = φ(q) − φ(p) on every rule inside the BSCC, when it exists.
    pub potential: Option<Vec<i64>>,
    pub label_trend: Rat,
}

impl BsccInfo {
    pub fn sign(&self) -> i8 {
        sign_of(&self.trend)
    }

    pub fn mu_of(&self, q: StateId) -> Option<&Rat> {
        self.members.binary_search(&q).ok().map(|i| &self.mu[i])
    }
}

pub fn bscc_info(oc: &OneCounter) -> Result<(UnderlyingChain, Vec<BsccInfo>)> {
    let pv = oc.to_pvass()?;
    let chain = build_underlying(&pv);
    let reports = trend_report(&pv, &chain)?;
    let mut out = Vec::new();
    for rep in reports {
        let members = rep.members.clone();
        let mut phi: BTreeMap<StateId, i64> = BTreeMap::new();
        phi.insert(members[0], 0);
        let mut queue = VecDeque::from([members[0]]);
        let mut consistent = true;
        while let Some(p) = queue.pop_front() {
            for &i in &oc.out[p] {
                let r = &oc.rules[i];
                let want = phi[&p] + r.delta as i64;
                match phi.get(&r.dst) {
                    None => {
                        phi.insert(r.dst, want);
                        queue.push_back(r.dst);
                    }
                    Some(&v) if v != want => consistent = false,
                    _ => {}
                }
            }
        }
        let potential = consistent.then(|| members.iter().map(|q| phi[q]).collect());
        let mut label_trend = Rat::zero();
        for (k, &p) in members.iter().enumerate() {
            for &i in &oc.out[p] {
                let r = &oc.rules[i];
                label_trend += &rep.mu[k] * &r.exact * Rat::from_integer(r.label.into());
            }
        }
        out.push(BsccInfo {
            scc: rep.scc,
            members,
            mu: rep.mu,
            trend: rep.trend[0].clone(),
            potential,
            label_trend,
        });
    }
    Ok((chain, out))
}

// ---------------------------------------------------------------------------
// Level grid

/// Reachability on Q × [0, w]; moves leaving the window are dropped.
pub struct Grid<'a> {
    oc: &'a OneCounter,
    pub w: usize,
}

impl<'a> Grid<'a> {
    pub fn new(oc: &'a OneCounter, w: usize) -> Self {
        Grid { oc, w }
    }

    #[inline]
    pub fn idx(&self, q: StateId, k: usize) -> usize {
        k * self.oc.n() + q
    }

    pub fn size(&self) -> usize {
        (self.w + 1) * self.oc.n()
    }

    /// Forward closure; also reports whether a move left the window and the
    /// highest level visited.
    pub fn forward(&self, sources: &[(StateId, usize)]) -> (Vec<bool>, bool, usize) {
        let n = self.oc.n();
        let mut seen = vec![false; self.size()];
        let mut queue = VecDeque::new();
        for &(q, k) in sources {
            if k <= self.w && !seen[self.idx(q, k)] {
                seen[self.idx(q, k)] = true;
                queue.push_back((q, k));
            }
        }
        let (mut overflow, mut top) = (false, 0);
        while let Some((q, k)) = queue.pop_front() {
            top = top.max(k);
            for &i in &self.oc.out[q] {
                let r = &self.oc.rules[i];
                if k == 0 && r.delta < 0 {
                    continue;
                }
                let k2 = (k as i64 + r.delta as i64) as usize;
                if k2 > self.w {
                    overflow = true;
                    continue;
                }
                let j = k2 * n + r.dst;
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back((r.dst, k2));
                }
            }
        }
        (seen, overflow, top)
    }

    /// Backward closure of the marked targets.
    pub fn backward(&self, targets: &[bool]) -> Vec<bool> {
        let n = self.oc.n();
        let mut seen = targets.to_vec();
        let mut queue: VecDeque<usize> = (0..seen.len()).filter(|&j| seen[j]).collect();
        while let Some(j) = queue.pop_front() {
            let (q, k) = (j % n, j / n);
            for &i in &self.oc.inc[q] {
                let r = &self.oc.rules[i];
                let k0 = k as i64 - r.delta as i64;
                if k0 < 0 || k0 as usize > self.w {
                    continue;
                }
                let j0 = k0 as usize * n + r.src;
                if !seen[j0] {
                    seen[j0] = true;
                    queue.push_back(j0);
                }
            }
        }
        seen
    }
}

// ---------------------------------------------------------------------------
// Level sets

/// A set of configurations stored level by level up to `cap`; beyond `cap`
/// membership repeats with `period`, or is empty when there is none.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSet {
    pub n: usize,
    pub rows: Vec<Vec<bool>>,
    pub period: Option<usize>,
}

impl LevelSet {
    pub fn from_grid(n: usize, marks: &[bool], cap: usize) -> Self {
        let rows = (0..=cap).map(|k| marks[k * n..(k + 1) * n].to_vec()).collect();
        LevelSet { n, rows, period: None }
    }

    pub fn cap(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn contains(&self, q: StateId, k: u64) -> bool {
        let cap = self.cap() as u64;
        if k <= cap {
            return self.rows[k as usize][q];
        }
        match self.period {
            None => false,
            Some(t) => {
                let t = t as u64;
                let back = (k - cap).div_ceil(t) * t;
                self.rows[(k - back) as usize][q]
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|&b| !b))
    }

    pub fn is_infinite(&self) -> bool {
        self.period.is_some() && !self.is_empty()
    }

    pub fn members_up_to(&self, k: usize) -> Vec<(StateId, usize)> {
        let mut v = Vec::new();
        for lvl in 0..=k {
            for q in 0..self.n {
                if self.contains(q, lvl as u64) {
                    v.push((q, lvl));
                }
            }
        }
        v
    }

    pub fn states(&self) -> BTreeSet<StateId> {
        self.rows.iter().flat_map(|r| r.iter().enumerate().filter(|(_, &b)| b).map(|(q, _)| q)).collect()
    }

    /// Smallest τ with rows repeating over the upper half of the window.
    fn detect_period(&mut self) -> Result<()> {
        let cap = self.cap();
        let from = cap / 2;
        for t in 1..=(cap / 4).max(1) {
            if (from.max(t)..=cap).all(|k| self.rows[k] == self.rows[k - t]) {
                self.period = Some(t);
                return Ok(());
            }
        }
        Err(Error::Analysis("level structure is not periodic within the grid".into()))
    }

    fn mark(&self, grid: &Grid, w: usize) -> Vec<bool> {
        let mut v = vec![false; grid.size()];
        for k in 0..=w {
            for q in 0..self.n {
                if self.contains(q, k as u64) {
                    v[grid.idx(q, k)] = true;
                }
            }
        }
        v
    }
}

/// Level sets L_i = {q | p(0) →* q(i)} with the period of their ultimately
/// periodic tail.
#[derive(Clone, Debug)]
pub struct LevelSets {
    pub levels: Vec<BTreeSet<StateId>>,
    pub threshold: usize,
    pub period: Option<usize>,
}

impl LevelSets {
    pub fn contains(&self, q: StateId, i: u64) -> bool {
        let last = self.levels.len() as u64 - 1;
        if i <= last {
            return self.levels[i as usize].contains(&q);
        }
        match self.period {
            Some(t) => {
                let t = t as u64;
                let j = i - (i - last).div_ceil(t) * t;
                self.levels[j as usize].contains(&q)
            }
            None => false,
        }
    }
}

pub fn reach_levels(oc: &OneCounter, p: StateId) -> LevelSets {
    let n = oc.n();
    let top = n * n + n;
    let w = top + 4 * n * n + 2 * n;
    let grid = Grid::new(oc, w);
    let (seen, _, _) = grid.forward(&[(p, 0)]);
    let levels: Vec<BTreeSet<StateId>> =
        (0..=top).map(|k| (0..n).filter(|&q| seen[grid.idx(q, k)]).collect()).collect();
    let threshold = n * n;
    let period = (1..=n).find(|&t| (threshold..=top - t).all(|i| levels[i] == levels[i + t]));
    let period = period.or_else(|| levels[threshold..].iter().all(|l| l.is_empty()).then_some(1));
    LevelSets { levels, threshold, period }
}

// ---------------------------------------------------------------------------
// Termination probabilities

#[derive(Clone, Debug)]
pub struct TermData {
    /// Certified lower and upper bounds on [p↓q].
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
    pub support: Vec<Vec<bool>>,
    pub up_lo: Vec<f64>,
    pub up_hi: Vec<f64>,
    /// Exact qualitative answer to [p↑] > 0.
    pub up_positive: Vec<bool>,
    pub delta: f64,
    pub certified: bool,
    pub iterations: usize,
}

impl TermData {
    pub fn g(&self) -> Vec<Vec<f64>> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l.iter().zip(h).map(|(a, b)| 0.5 * (a + b)).collect()).collect()
    }

    pub fn g_matrix(&self, which: Bound) -> DMatrix<f64> {
        let n = self.lo.len();
        let src = match which {
            Bound::Lo => &self.lo,
            Bound::Hi => &self.hi,
            Bound::Mid => return DMatrix::from_fn(n, n, |i, j| 0.5 * (self.lo[i][j] + self.hi[i][j])),
        };
        DMatrix::from_fn(n, n, |i, j| src[i][j])
    }

    pub fn up(&self) -> Vec<f64> {
        self.up_lo.iter().zip(&self.up_hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn interval(&self, p: StateId, q: StateId) -> Interval {
        Interval::new(self.lo[p][q], self.hi[p][q])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Lo,
    Mid,
    Hi,
}

/// Qualitative [p↓q] > 0 as a Boolean least fixed point.
fn termination_support(oc: &OneCounter) -> Vec<Vec<bool>> {
    let n = oc.n();
    let mut b = vec![vec![false; n]; n];
    loop {
        let mut changed = false;
        for r in &oc.rules {
            let p = r.src;
            for q in 0..n {
                if b[p][q] {
                    continue;
                }
                let v = match r.delta {
                    -1 => r.dst == q,
                    0 => b[r.dst][q],
                    _ => (0..n).any(|s| b[r.dst][s] && b[s][q]),
                };
                if v {
                    b[p][q] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return b;
        }
    }
}

/// [p↑] > 0 iff p(1) reaches, without touching level 0, either a state of a
/// positive-trend BSCC at height ≥ 2|Q| or a configuration of a potential
/// BSCC whose whole orbit stays positive.
fn divergence_support(oc: &OneCounter, bsccs: &[BsccInfo], chain: &UnderlyingChain) -> Vec<bool> {
    let n = oc.n();
    let k_max = 4 * n * n + 4 * n;
    let mut good = vec![false; (k_max + 1) * n];
    for b in bsccs {
        for (i, &s) in b.members.iter().enumerate() {
            for k in 1..=k_max {
                let ok = if b.sign() > 0 {
                    k >= 2 * n
                } else if let Some(phi) = &b.potential {
                    let lo = *phi.iter().min().unwrap();
                    k as i64 - phi[i] + lo >= 1
                } else {
                    false
                };
                good[k * n + s] = ok;
            }
        }
    }
    let _ = chain;
    // Backward closure restricted to positive levels.
    let mut seen = good.clone();
    let mut queue: VecDeque<usize> = (0..seen.len()).filter(|&j| seen[j]).collect();
    while let Some(j) = queue.pop_front() {
        let (q, k) = (j % n, j / n);
        for &i in &oc.inc[q] {
            let r = &oc.rules[i];
            let k0 = k as i64 - r.delta as i64;
            if k0 < 1 || k0 as usize > k_max {
                continue;
            }
            let j0 = k0 as usize * n + r.src;
            if !seen[j0] {
                seen[j0] = true;
                queue.push_back(j0);
            }
        }
    }
    (0..n).map(|p| seen[n + p]).collect()
}

fn term_apply(am: &DMatrix<f64>, a0: &DMatrix<f64>, ap: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    am + a0 * x + ap * (x * x)
}

/// Least fixed point of X = A₋ + A₀X + A₊X² by Newton's method from 0, with
/// value iteration as fallback, followed by an upper-bound certificate.
pub fn termination(oc: &OneCounter, tol: f64) -> Result<TermData> {
    let (chain, bsccs) = bscc_info(oc)?;
    termination_with(oc, tol, &chain, &bsccs)
}

pub fn termination_with(oc: &OneCounter, tol: f64, chain: &UnderlyingChain, bsccs: &[BsccInfo]) -> Result<TermData> {
    let n = oc.n();
    let support = termination_support(oc);
    let up_positive = divergence_support(oc, bsccs, chain);
    let vars: Vec<(usize, usize)> =
        (0..n).flat_map(|p| (0..n).map(move |q| (p, q))).filter(|&(p, q)| support[p][q]).collect();
    let mut index = vec![vec![usize::MAX; n]; n];
    for (i, &(p, q)) in vars.iter().enumerate() {
        index[p][q] = i;
    }
    let [am, a0, ap] = oc.level_matrices();
    let m = vars.len();
    let mut x = DMatrix::<f64>::zeros(n, n);
    let jac = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let apx = &ap * x;
        let mut k = DMatrix::<f64>::identity(m, m);
        for (col, &(u, v)) in vars.iter().enumerate() {
            for (row, &(p, q)) in vars.iter().enumerate() {
                let mut j = ap[(p, u)] * x[(v, q)];
                if q == v {
                    j += a0[(p, u)] + apx[(p, u)];
                }
                k[(row, col)] -= j;
            }
        }
        k
    };
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    while iterations < 400 && m > 0 {
        iterations += 1;
        let fx = term_apply(&am, &a0, &ap, &x);
        let rhs = DVector::from_iterator(m, vars.iter().map(|&(p, q)| fx[(p, q)] - x[(p, q)]));
        let step = jac(&x).lu().solve(&rhs);
        let mut next = x.clone();
        match step {
            Some(h) if h.iter().all(|v| v.is_finite()) => {
                for (i, &(p, q)) in vars.iter().enumerate() {
                    next[(p, q)] = (x[(p, q)] + h[i]).clamp(0.0, 1.0);
                }
            }
            _ => {
                for &(p, q) in &vars {
                    next[(p, q)] = fx[(p, q)].clamp(0.0, 1.0);
                }
            }
        }
        last_step = (&next - &x).amax();
        x = next;
        if last_step <= 1e-17 {
            break;
        }
    }
    // At critical components the Jacobian is singular at the solution and
    // Newton stalls. Rows that terminate surely sum to one; appending those
    // equations restores full column rank for a Gauss-Newton polish.
    let sure: Vec<usize> = (0..n).filter(|&p| !up_positive[p] && (0..n).any(|q| support[p][q])).collect();
    if m > 0 && !sure.is_empty() {
        for _ in 0..30 {
            let fx = term_apply(&am, &a0, &ap, &x);
            let mut big = DMatrix::<f64>::zeros(m + sure.len(), m);
            big.view_mut((0, 0), (m, m)).copy_from(&jac(&x));
            let mut rhs = DVector::<f64>::zeros(m + sure.len());
            for (i, &(p, q)) in vars.iter().enumerate() {
                rhs[i] = fx[(p, q)] - x[(p, q)];
            }
            for (k, &p) in sure.iter().enumerate() {
                rhs[m + k] = 1.0 - (0..n).map(|q| x[(p, q)]).sum::<f64>();
                for q in 0..n {
                    if support[p][q] {
                        big[(m + k, index[p][q])] = 1.0;
                    }
                }
            }
            let Ok(h) = big.svd(true, true).solve(&rhs, 1e-14) else { break };
            if !h.iter().all(|v| v.is_finite()) {
                break;
            }
            for (i, &(p, q)) in vars.iter().enumerate() {
                x[(p, q)] = (x[(p, q)] + h[i]).clamp(0.0, 1.0);
            }
            last_step = h.amax();
            if last_step <= 1e-16 {
                break;
            }
        }
    }
    for p in 0..n {
        let s: f64 = (0..n).map(|q| x[(p, q)]).sum();
        if !up_positive[p] && s > 0.0 {
            for q in 0..n {
                x[(p, q)] /= s;
            }
        }
    }
    let fx = term_apply(&am, &a0, &ap, &x);
    let residual = vars.iter().map(|&(p, q)| (fx[(p, q)] - x[(p, q)]).abs()).fold(0.0, f64::max);
    // Upper bounds from a post-fixed point y = x + η v, v = (I - f'(x))^{-1} 1.
    let mut cert = None;
    if m > 0 {
        if let Some(v) = jac(&x).lu().solve(&DVector::from_element(m, 1.0)) {
            if v.iter().all(|&t| t.is_finite() && t > 0.0) {
                for e in -15..=-6 {
                    let eta = 10f64.powi(e);
                    let mut y = x.clone();
                    for (i, &(p, q)) in vars.iter().enumerate() {
                        y[(p, q)] += eta * v[i];
                    }
                    let fy = term_apply(&am, &a0, &ap, &y);
                    if vars.iter().all(|&(p, q)| fy[(p, q)] <= y[(p, q)]) {
                        cert = Some(y);
                        break;
                    }
                }
            }
        }
    }
    let certified = cert.is_some() || m == 0;
    // Without a certificate the error is estimated from the residual; near a
    // singular Jacobian it scales like its square root.
    let slack = if certified {
        x.amax() * 1e-13
    } else {
        (1e3 * last_step).max(10.0 * residual.sqrt()).max(1e-13)
    };
    let mut lo = vec![vec![0.0; n]; n];
    for &(p, q) in &vars {
        lo[p][q] = (x[(p, q)] - slack).max(x[(p, q)] * 1e-3).max(f64::MIN_POSITIVE);
    }
    let mut hi = vec![vec![0.0; n]; n];
    let (mut up_lo, mut up_hi) = (vec![0.0; n], vec![0.0; n]);
    let mut delta: f64 = 0.0;
    for p in 0..n {
        let row_lo: f64 = lo[p].iter().sum();
        for q in 0..n {
            if !support[p][q] {
                continue;
            }
            let row_bound = 1.0 - (row_lo - lo[p][q]);
            let h = match &cert {
                Some(y) => y[(p, q)],
                None => x[(p, q)] + slack,
            };
            hi[p][q] = h.min(row_bound).min(1.0).max(lo[p][q]);
        }
        if up_positive[p] {
            let row_hi: f64 = hi[p].iter().sum();
            up_lo[p] = (1.0 - row_hi).max(0.0);
            up_hi[p] = (1.0 - row_lo).clamp(0.0, 1.0);
        } else {
            let sup: Vec<usize> = (0..n).filter(|&q| support[p][q]).collect();
            if sup.len() == 1 {
                lo[p][sup[0]] = 1.0;
                hi[p][sup[0]] = 1.0;
            }
        }
        for q in 0..n {
            delta = delta.max(hi[p][q] - lo[p][q]);
        }
        delta = delta.max(up_hi[p] - up_lo[p]);
    }
    if !(delta <= tol) {
        return Err(Error::Certificate { what: "termination probabilities".into(), residual: delta });
    }
    Ok(TermData { lo, hi, support, up_lo, up_hi, up_positive, delta, certified, iterations })
}

// ---------------------------------------------------------------------------
// Regions

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionKind {
    I,
    II,
    III,
    IV,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::I => "I",
            RegionKind::II => "II",
            RegionKind::III => "III",
            RegionKind::IV => "IV",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Region {
    pub kind: RegionKind,
    /// States p with post*(p(0)) equal to this region (kinds I and II).
    pub anchors: Vec<StateId>,
    /// Index into the BSCC list (kinds II, III, IV).
    pub bscc: Option<usize>,
    pub members: LevelSet,
}

impl Region {
    pub fn contains(&self, q: StateId, k: u64) -> bool {
        self.members.contains(q, k)
    }

    pub fn label(&self, names: &[String], bsccs: &[BsccInfo]) -> String {
        match self.kind {
            RegionKind::I | RegionKind::II => format!("{}[{}]", self.kind.name(), names[self.anchors[0]]),
            _ => {
                let b = &bsccs[self.bscc.unwrap()];
                let s: Vec<&str> = b.members.iter().map(|&q| names[q].as_str()).collect();
                format!("{}[{{{}}}]", self.kind.name(), s.join(","))
            }
        }
    }

    pub fn finite_members(&self) -> Vec<(StateId, usize)> {
        self.members.members_up_to(self.members.cap())
    }
}

/// Grid sizes used by the region computation.
#[derive(Clone, Copy, Debug)]
pub struct GridParams {
    /// Levels up to `cap` are trusted.
    pub cap: usize,
    pub window: usize,
}

impl GridParams {
    pub fn for_states(n: usize) -> Self {
        let cap = (8 * n * n + n).max(4 * n * n * n + n * n + 1).min(20_000);
        GridParams { cap, window: cap + 8 * n * n + 2 * n }
    }
}

pub fn classify_regions(oc: &OneCounter, bsccs: &[BsccInfo], chain: &UnderlyingChain) -> Result<Vec<Region>> {
    classify_regions_with(oc, bsccs, chain, GridParams::for_states(oc.n()))
}

pub fn classify_regions_with(
    oc: &OneCounter,
    bsccs: &[BsccInfo],
    chain: &UnderlyingChain,
    gp: GridParams,
) -> Result<Vec<Region>> {
    let n = oc.n();
    let grid = Grid::new(oc, gp.window);
    let bscc_of = |p: StateId| bsccs.iter().position(|b| b.scc == chain.scc_of[p]);
    let mut regions: Vec<Region> = Vec::new();
    let mut push = |kind: RegionKind, anchor: Option<StateId>, bscc: Option<usize>, ls: LevelSet| {
        if let Some(r) = regions.iter_mut().find(|r| r.kind == kind && r.members == ls) {
            if let Some(a) = anchor {
                r.anchors.push(a);
            }
            return;
        }
        regions.push(Region { kind, anchors: anchor.into_iter().collect(), bscc, members: ls });
    };
    let mut type1: Vec<Vec<LevelSet>> = vec![Vec::new(); bsccs.len()];
    let mut type2: Vec<Vec<LevelSet>> = vec![Vec::new(); bsccs.len()];
    for p in 0..n {
        let (fwd, overflow, top) = grid.forward(&[(p, 0)]);
        let mut target = vec![false; grid.size()];
        target[grid.idx(p, 0)] = true;
        let bwd = grid.backward(&target);
        let finite = top < n && !overflow;
        let limit = if finite { top } else { gp.cap };
        let closed = (0..=limit).all(|k| (0..n).all(|q| !fwd[grid.idx(q, k)] || bwd[grid.idx(q, k)]));
        if !closed {
            continue;
        }
        let mut ls = LevelSet::from_grid(n, &fwd, gp.cap);
        let b = bscc_of(p);
        if finite {
            if let Some(b) = b {
                type1[b].push(ls.clone());
            }
            push(RegionKind::I, Some(p), b, ls);
        } else if let Some(b) = b {
            ls.detect_period()?;
            type2[b].push(ls.clone());
            push(RegionKind::II, Some(p), Some(b), ls);
        }
    }
    // Configurations that can reach level 0.
    let mut zeros = vec![false; grid.size()];
    for q in 0..n {
        zeros[grid.idx(q, 0)] = true;
    }
    let reach_zero = grid.backward(&zeros);
    for (bi, b) in bsccs.iter().enumerate() {
        let in_s = |q: StateId| b.members.binary_search(&q).is_ok();
        let mut marks = vec![false; grid.size()];
        for k in 1..=gp.cap {
            for &s in &b.members {
                marks[grid.idx(s, k)] = !reach_zero[grid.idx(s, k)];
            }
        }
        let mut ls3 = LevelSet::from_grid(n, &marks, gp.cap);
        if !ls3.is_empty() {
            ls3.detect_period()?;
            push(RegionKind::III, None, Some(bi), ls3);
            continue;
        }
        if type1[bi].is_empty() {
            continue;
        }
        let mut r1 = vec![false; grid.size()];
        for ls in &type1[bi] {
            for (j, m) in ls.mark(&grid, gp.window).into_iter().enumerate() {
                r1[j] |= m;
            }
        }
        let mut r2 = vec![false; grid.size()];
        for ls in &type2[bi] {
            for (j, m) in ls.mark(&grid, gp.window).into_iter().enumerate() {
                r2[j] |= m;
            }
        }
        let pre1 = grid.backward(&r1);
        let pre2 = grid.backward(&r2);
        let mut d = vec![false; grid.size()];
        for k in 0..=gp.cap {
            for q in 0..n {
                let j = grid.idx(q, k);
                d[j] = in_s(q) && pre1[j] && !r1[j] && !pre2[j];
            }
        }
        let mut ls4 = LevelSet::from_grid(n, &d, gp.cap);
        if ls4.is_empty() {
            continue;
        }
        ls4.detect_period()?;
        let t = ls4.period.unwrap();
        let top_window = (gp.cap + 1 - t..=gp.cap).any(|k| ls4.rows[k].iter().any(|&x| x));
        if top_window {
            push(RegionKind::IV, None, Some(bi), ls4);
        }
    }
    regions.sort_by_key(|r| (r.kind, r.anchors.first().copied(), r.bscc));
    Ok(regions)
}

// ---------------------------------------------------------------------------
// Zones

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ZoneKind {
    TypeI,
    TypeIII,
    TypeIINeg,
    TypeIIZero,
    Positive,
}

impl ZoneKind {
    pub fn name(self) -> &'static str {
        match self {
            ZoneKind::TypeI => "type-I",
            ZoneKind::TypeIII => "type-III",
            ZoneKind::TypeIINeg => "type-II-negative",
            ZoneKind::TypeIIZero => "type-II-zero",
            ZoneKind::Positive => "positive",
        }
    }

    /// Zones whose runs eventually never hit zero again.
    pub fn diverging(self) -> bool {
        matches!(self, ZoneKind::TypeIII | ZoneKind::Positive)
    }
}

#[derive(Clone, Debug)]
pub struct Zone {
    pub kind: ZoneKind,
    pub regions: Vec<usize>,
    pub bscc: Option<usize>,
}

pub fn zone_bound(n: usize) -> usize {
    2.max(2 * n - 1)
}

pub fn build_zones(regions: &[Region], bsccs: &[BsccInfo]) -> Vec<Zone> {
    let mut zones = Vec::new();
    for (i, r) in regions.iter().enumerate() {
        if r.kind == RegionKind::I {
            zones.push(Zone { kind: ZoneKind::TypeI, regions: vec![i], bscc: r.bscc });
        }
    }
    for (bi, b) in bsccs.iter().enumerate() {
        let of = |k: RegionKind| -> Vec<usize> {
            regions.iter().enumerate().filter(|(_, r)| r.kind == k && r.bscc == Some(bi)).map(|(i, _)| i).collect()
        };
        let (ii, iii, iv) = (of(RegionKind::II), of(RegionKind::III), of(RegionKind::IV));
        match b.sign() {
            -1 => {
                for i in ii {
                    zones.push(Zone { kind: ZoneKind::TypeIINeg, regions: vec![i], bscc: Some(bi) });
                }
                if !iii.is_empty() {
                    zones.push(Zone { kind: ZoneKind::TypeIII, regions: iii, bscc: Some(bi) });
                }
            }
            0 => {
                if !ii.is_empty() {
                    zones.push(Zone { kind: ZoneKind::TypeIIZero, regions: ii, bscc: Some(bi) });
                }
                if !iii.is_empty() {
                    zones.push(Zone { kind: ZoneKind::TypeIII, regions: iii, bscc: Some(bi) });
                }
            }
            _ => {
                let all: Vec<usize> = ii.into_iter().chain(iii).chain(iv).collect();
                if !all.is_empty() {
                    zones.push(Zone { kind: ZoneKind::Positive, regions: all, bscc: Some(bi) });
                }
            }
        }
    }
    zones
}

// ---------------------------------------------------------------------------
// Excursion moments and the regenerative chain

/// Expected excursion statistics from q(1) to the first visit of level 0,
/// restricted to the states `s` of one BSCC: `len[q][r]` = E[length · 1{exit
/// at r}], `visits[v][q][r]` the same for visits to v at positive levels,
/// `label[q][r]` the same for the sum of rule labels.
#[derive(Clone, Debug)]
pub struct Moments {
    pub states: Vec<StateId>,
    pub g: DMatrix<f64>,
    pub len: DMatrix<f64>,
    pub visits: Vec<DMatrix<f64>>,
    pub label: DMatrix<f64>,
}

impl Moments {
    pub fn pos(&self, q: StateId) -> Option<usize> {
        self.states.binary_search(&q).ok()
    }
}

pub fn excursion_moments(oc: &OneCounter, states: &[StateId], g_full: &DMatrix<f64>) -> Result<Moments> {
    let k = states.len();
    let [am, a0, ap] = oc.level_matrices();
    let [bm, b0, bp] = oc.label_matrices();
    let sub = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |i, j| m[(states[i], states[j])]);
    let (a0, ap, g) = (sub(&a0), sub(&ap), sub(g_full));
    let _ = am;
    let (bm, b0, bp) = (sub(&bm), sub(&b0), sub(&bp));
    // vec(A X B) = (Bᵀ ⊗ A) vec(X), column-major.
    let id = DMatrix::<f64>::identity(k, k);
    let apg = &ap * &g;
    let kk = DMatrix::<f64>::identity(k * k, k * k) - id.kronecker(&a0) - g.transpose().kronecker(&ap) - id.kronecker(&apg);
    let nrhs = k + 2;
    let mut rhs = DMatrix::<f64>::zeros(k * k, nrhs);
    let vec_into = |rhs: &mut DMatrix<f64>, col: usize, m: &DMatrix<f64>| {
        for j in 0..k {
            for i in 0..k {
                rhs[(j * k + i, col)] = m[(i, j)];
            }
        }
    };
    vec_into(&mut rhs, 0, &g);
    let lab = &bm + &b0 * &g + &bp * &g * &g;
    vec_into(&mut rhs, 1, &lab);
    for v in 0..k {
        let mut e = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            e[(v, j)] = g[(v, j)];
        }
        vec_into(&mut rhs, 2 + v, &e);
    }
    let (x, _) = solve_dense(&kk, &rhs, 1e-9, "excursion moments")?;
    let unvec = |col: usize| DMatrix::from_fn(k, k, |i, j| x[(j * k + i, col)]);
    let len = unvec(0);
    if len.iter().any(|&v| v < -1e-9) {
        return Err(Error::Analysis("negative expected excursion length (trend not negative?)".into()));
    }
    Ok(Moments {
        states: states.to_vec(),
        g,
        len,
        label: unvec(1),
        visits: (0..k).map(|v| unvec(2 + v)).collect(),
    })
}

/// Vertex of the regenerative chain: a state at level 0 or level 1.
pub type DsVertex = (StateId, u8);

#[derive(Clone, Debug)]
pub struct DsResult {
    pub vertices: Vec<DsVertex>,
    pub trans: Vec<Vec<(usize, f64)>>,
    pub mu: Vec<f64>,
    pub expected_len: f64,
    /// Per state: [frequency at level 0, frequency at positive levels].
    pub freq: Vec<[f64; 2]>,
    pub label_rate: f64,
    pub moments: Moments,
    /// log10 of ½·max_j max_{i≠j} m_ij / m_jj for the chain's mean first passage times.
    pub log10_rho: f64,
}

pub fn ds_chain(oc: &OneCounter, bscc: &BsccInfo, anchor: StateId, g_full: &DMatrix<f64>) -> Result<DsResult> {
    if bscc.sign() >= 0 {
        return Err(Error::Analysis("regenerative chain needs a negative trend".into()));
    }
    let mom = excursion_moments(oc, &bscc.members, g_full)?;
    let mut vertices: Vec<DsVertex> = vec![(anchor, 0)];
    let mut index: BTreeMap<DsVertex, usize> = BTreeMap::from([((anchor, 0), 0)]);
    let mut trans: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut i = 0;
    while i < vertices.len() {
        let (q, l) = vertices[i];
        let mut row: BTreeMap<DsVertex, f64> = BTreeMap::new();
        if l == 0 {
            for mv in oc.moves(q, 0) {
                *row.entry((mv.dst, mv.delta as u8)).or_default() += mv.prob;
            }
        } else {
            let a = mom.pos(q).ok_or_else(|| Error::Analysis("excursion leaves the BSCC".into()))?;
            for (b, &r) in mom.states.iter().enumerate() {
                if mom.g[(a, b)] > 0.0 {
                    *row.entry((r, 0)).or_default() += mom.g[(a, b)];
                }
            }
        }
        let mut out = Vec::new();
        for (v, p) in row {
            let j = *index.entry(v).or_insert_with(|| {
                vertices.push(v);
                vertices.len() - 1
            });
            out.push((j, p));
        }
        trans.push(out);
        i += 1;
    }
    let nv = vertices.len();
    let mut dense = vec![vec![0.0; nv]; nv];
    for (i, row) in trans.iter().enumerate() {
        let s: f64 = row.iter().map(|(_, p)| p).sum();
        for &(j, p) in row {
            dense[i][j] += p / s;
        }
    }
    let mu = crate::numeric::stationary_f64(&dense)
        .ok_or_else(|| Error::Analysis("regenerative chain is not irreducible".into()))?;
    let n = oc.n();
    let mut freq = vec![[0.0; 2]; n];
    let mut expected_len = 0.0;
    let mut label_sum = 0.0;
    for (v, &(q, l)) in vertices.iter().enumerate() {
        if l == 0 {
            expected_len += mu[v];
            freq[q][0] += mu[v];
            let lab0: f64 = oc.moves(q, 0).iter().map(|m| m.prob * m.label as f64).sum();
            label_sum += mu[v] * lab0;
        } else {
            let a = mom.pos(q).unwrap();
            expected_len += mu[v] * mom.len.row(a).sum();
            label_sum += mu[v] * mom.label.row(a).sum();
            for (b, &s) in mom.states.iter().enumerate() {
                freq[s][1] += mu[v] * mom.visits[b].row(a).sum();
            }
        }
    }
    for f in freq.iter_mut() {
        f[0] /= expected_len;
        f[1] /= expected_len;
    }
    let log10_rho = mean_passage_ratio(&dense, &mu).log10();
    Ok(DsResult {
        vertices,
        trans,
        mu,
        expected_len,
        freq,
        label_rate: label_sum / expected_len,
        moments: mom,
        log10_rho,
    })
}

fn mean_passage_ratio(p: &[Vec<f64>], mu: &[f64]) -> f64 {
    let n = p.len();
    let mut best: f64 = 0.0;
    for j in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        if others.is_empty() {
            continue;
        }
        let k = others.len();
        let a = DMatrix::from_fn(k, k, |r, c| (r == c) as u8 as f64 - p[others[r]][others[c]]);
        if let Some(h) = a.lu().solve(&DVector::from_element(k, 1.0)) {
            let mjj = 1.0 / mu[j];
            best = best.max(h.amax() / mjj);
        }
    }
    0.5 * best.max(f64::MIN_POSITIVE)
}

/// log10 of 85000|Q|⁶ / (x_min^{5|Q|+|Q|³} · t⁴).
pub fn log10_alpha(n: usize, x_min: f64, t: f64) -> f64 {
    let nf = n as f64;
    85000f64.log10() + 6.0 * nf.log10() - (5.0 * nf + nf.powi(3)) * x_min.log10() - 4.0 * t.abs().log10()
}

// ---------------------------------------------------------------------------
// Full structure and zone quantities

#[derive(Clone, Debug)]
pub struct OcStructure {
    pub oc: OneCounter,
    pub chain: UnderlyingChain,
    pub bsccs: Vec<BsccInfo>,
    pub term: TermData,
    pub regions: Vec<Region>,
    pub zones: Vec<Zone>,
    pub grid: GridParams,
}

impl OcStructure {
    pub fn new(oc: OneCounter, tol: f64) -> Result<Self> {
        let (chain, bsccs) = bscc_info(&oc)?;
        let term = termination_with(&oc, tol, &chain, &bsccs)?;
        let grid = GridParams::for_states(oc.n());
        let regions = classify_regions_with(&oc, &bsccs, &chain, grid)?;
        let zones = build_zones(&regions, &bsccs);
        Ok(OcStructure { oc, chain, bsccs, term, regions, zones, grid })
    }

    pub fn region_label(&self, i: usize) -> String {
        self.regions[i].label(&self.oc.names, &self.bsccs)
    }

    pub fn zone_label(&self, z: &Zone) -> String {
        let parts: Vec<String> = z.regions.iter().map(|&i| self.region_label(i)).collect();
        format!("{}: {}", z.kind.name(), parts.join(" + "))
    }

    /// Region containing `q(k)`, if any.
    pub fn region_of(&self, q: StateId, k: u64) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(q, k))
    }

    /// [p↑ and the run ends in BSCC b]: the model is modified so every other
    /// BSCC drains its counter deterministically.
    pub fn divergence_into(&self, b: usize, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.oc.n();
        let info = &self.bsccs[b];
        if info.sign() < 0 || (info.sign() == 0 && info.potential.is_none()) {
            return Ok((vec![0.0; n], vec![0.0; n]));
        }
        let other = |q: StateId| self.chain.is_bottom[self.chain.scc_of[q]] && self.chain.scc_of[q] != info.scc;
        let mut raw = Vec::new();
        for q in 0..n {
            if other(q) {
                raw.push((q, -1, 0, BigUint::one(), q));
            }
        }
        for r in &self.oc.rules {
            if !other(r.src) {
                raw.push((r.src, r.delta, r.label, r.weight.clone(), r.dst));
            }
        }
        let modified = OneCounter::new(self.oc.names.clone(), raw)?;
        let t = termination(&modified, tol)?;
        Ok((t.up_lo, t.up_hi))
    }
}

/// Per-state pattern frequencies: `values[q] = [H(q(0)), H(q(*))]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcFreq {
    pub values: Vec<[f64; 2]>,
    pub err: f64,
}

impl OcFreq {
    pub fn get(&self, p: &Pattern) -> f64 {
        self.values[p.state][p.mask[0] as usize]
    }

    pub fn project(&self, projection: &[StateId], n_orig: usize) -> OcFreq {
        let mut v = vec![[0.0; 2]; n_orig];
        for (q, &o) in projection.iter().enumerate() {
            v[o][0] += self.values[q][0];
            v[o][1] += self.values[q][1];
        }
        OcFreq { values: v, err: self.err }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|v| v[0] + v[1]).sum()
    }
}

pub fn zone_frequency(st: &OcStructure, z: &Zone, eps: f64) -> Result<OcFreq> {
    if !(eps > 0.0) {
        return model_err("error bound must be positive");
    }
    if z.regions.is_empty() {
        return Err(Error::Analysis("empty zone".into()));
    }
    let n = st.oc.n();
    let mut values = vec![[0.0; 2]; n];
    match z.kind {
        ZoneKind::TypeI => {
            let members = st.regions[z.regions[0]].finite_members();
            let pos: BTreeMap<(StateId, usize), usize> = members.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let k = members.len();
            let mut a = vec![vec![Rat::zero(); k]; k];
            for (i, &(q, lvl)) in members.iter().enumerate() {
                for mv in st.oc.moves(q, lvl as u64) {
                    let j = pos[&(mv.dst, (lvl as i64 + mv.delta as i64) as usize)];
                    if j > 0 {
                        a[j - 1][i] += &mv.exact;
                    }
                }
                if i > 0 {
                    a[i - 1][i] -= Rat::one();
                }
                a[k - 1][i] = Rat::one();
            }
            let mut b = vec![Rat::zero(); k];
            b[k - 1] = Rat::one();
            let mu = solve_rational(a, b).ok_or_else(|| Error::Analysis("type I region chain is reducible".into()))?;
            for (&(q, lvl), x) in members.iter().zip(&mu) {
                values[q][(lvl > 0) as usize] += rat_to_f64(x);
            }
            Ok(OcFreq { values, err: 1e-15 })
        }
        ZoneKind::TypeIII | ZoneKind::Positive | ZoneKind::TypeIIZero => {
            let b = &st.bsccs[z.bscc.unwrap()];
            for (q, x) in b.members.iter().zip(&b.mu) {
                values[*q][1] = rat_to_f64(x);
            }
            Ok(OcFreq { values, err: 1e-15 })
        }
        ZoneKind::TypeIINeg => {
            let region = &st.regions[z.regions[0]];
            let b = &st.bsccs[z.bscc.unwrap()];
            let anchor = region.anchors[0];
            let mut runs = Vec::new();
            for which in [Bound::Mid, Bound::Lo, Bound::Hi] {
                runs.push(ds_chain(&st.oc, b, anchor, &st.term.g_matrix(which))?);
            }
            let mut err: f64 = 0.0;
            for q in 0..n {
                for c in 0..2 {
                    let vals: Vec<f64> = runs.iter().map(|r| r.freq[q][c]).collect();
                    values[q][c] = vals[0];
                    for v in &vals[1..] {
                        err = err.max((v - vals[0]).abs());
                    }
                }
            }
            let err = err + 1e-12;
            if err > eps {
                return Err(Error::Certificate { what: "regenerative frequencies".into(), residual: err });
            }
            Ok(OcFreq { values, err })
        }
    }
}

/// Probability that a run from `q(k)` eventually stays in zone `z`.
#[derive(Clone, Debug)]
pub struct ZoneProb {
    pub value: f64,
    pub err: f64,
}

pub fn zone_probability(st: &OcStructure, start: (StateId, u64), z: &Zone, eps: f64) -> Result<ZoneProb> {
    if !(eps > 0.0) {
        return model_err("error bound must be positive");
    }
    let n = st.oc.n();
    let (p, k) = start;
    let in_zone_region = |q: StateId, lvl: u64| -> bool {
        z.regions.iter().any(|&i| {
            let r = &st.regions[i];
            r.kind != RegionKind::IV && r.contains(q, lvl)
        })
    };
    let (up_lo, up_hi) = match (z.kind.diverging(), z.bscc) {
        (true, Some(b)) => st.divergence_into(b, eps.min(1e-9))?,
        _ => (vec![0.0; n], vec![0.0; n]),
    };
    let up: Vec<f64> = up_lo.iter().zip(&up_hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let up_err = up_lo.iter().zip(&up_hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let g = st.term.g();
    // Vertices (q, 0) ↦ q, (q, 1) ↦ n + q.
    let nv = 2 * n;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    let mut c = vec![0.0; nv];
    let mut target = vec![false; nv];
    for q in 0..n {
        target[q] = in_zone_region(q, 0);
        target[n + q] = in_zone_region(q, 1);
        for mv in st.oc.moves(q, 0) {
            rows[q].push((mv.dst + n * mv.delta as usize, mv.prob));
        }
        for r in 0..n {
            if st.term.support[q][r] {
                rows[n + q].push((r, g[q][r]));
            }
        }
        c[n + q] = up[q];
    }
    // Vertices that can reach a target (or absorb into divergence).
    let mut live: Vec<bool> = (0..nv).map(|v| target[v] || c[v] > 0.0).collect();
    loop {
        let mut changed = false;
        for v in 0..nv {
            if !live[v] && rows[v].iter().any(|&(u, x)| x > 0.0 && live[u]) {
                live[v] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let unknown: Vec<usize> = (0..nv).filter(|&v| live[v] && !target[v]).collect();
    let pos: BTreeMap<usize, usize> = unknown.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let m = unknown.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut cc = vec![0.0; m];
    for (i, &v) in unknown.iter().enumerate() {
        cc[i] = c[v];
        for &(u, x) in &rows[v] {
            if target[u] {
                cc[i] += x;
            } else if let Some(&j) = pos.get(&u) {
                a[i][j] += x;
            }
        }
    }
    let sol = solve_absorbing(&a, &cc, 1e-10)?;
    let mut f = vec![0.0; nv];
    for v in 0..nv {
        if target[v] {
            f[v] = 1.0;
        }
    }
    for (i, &v) in unknown.iter().enumerate() {
        f[v] = sol.x[i].clamp(0.0, 1.0);
    }
    let d_a = st.term.delta.max(up_err);
    let mut err = sol.inv_norm * (d_a * m.max(1) as f64 + d_a) + 1e-12;
    let value = if k <= 1 {
        f[p + n * k as usize]
    } else if in_zone_region(p, k) {
        1.0
    } else {
        // f(q(j)) = up·[diverging] + Σ_r G[q][r] f(r(j-1)), with region members fixed at 1.
        let mut cur: Vec<f64> = (0..n).map(|q| f[n + q]).collect();
        for j in 2..=k {
            let mut next = vec![0.0; n];
            for q in 0..n {
                next[q] = if in_zone_region(q, j) {
                    1.0
                } else {
                    up[q] + (0..n).map(|r| g[q][r] * cur[r]).sum::<f64>()
                };
            }
            cur = next;
        }
        err += k as f64 * n as f64 * d_a;
        cur[p]
    };
    Ok(ZoneProb { value: value.clamp(0.0, 1.0), err })
}

// ---------------------------------------------------------------------------
// Driver

#[derive(Clone, Debug)]
pub struct ZonePair {
    pub zone: usize,
    pub kind: ZoneKind,
    pub label: String,
    pub p: f64,
    pub p_err: f64,
    /// Frequencies over the states of the input model.
    pub h: OcFreq,
    /// Zones reached with probability zero carry an arbitrary H.
    pub vacuous: bool,
}

#[derive(Clone, Debug)]
pub struct OcAnalysis {
    pub normalized: Normalized,
    pub structure: OcStructure,
    pub pairs: Vec<ZonePair>,
    pub region_bound: usize,
    pub zone_bound: usize,
    /// log10 of the α bound for each negative-trend type II zone.
    pub log10_alpha: Vec<(usize, f64)>,
}

impl OcAnalysis {
    pub fn mass(&self) -> f64 {
        self.pairs.iter().map(|p| p.p).sum()
    }
}

pub fn analyze_one_counter(m: &Pvass, start: &Configuration, eps: f64) -> Result<OcAnalysis> {
    if m.dimension() != 1 {
        return model_err("one-counter analysis needs dimension 1");
    }
    if !(eps > 0.0) {
        return model_err("error bound must be positive");
    }
    if start.state >= m.num_states() || start.counters.len() != 1 {
        return model_err("start configuration does not match the model");
    }
    let normalized = normalize(m);
    let oc = OneCounter::from_pvass(&normalized.model)?;
    let tol = (eps * 1e-3).max(1e-13).min(1e-9);
    let st = OcStructure::new(oc, tol)?;
    let n = st.oc.n();
    let region_bound = n + st.bsccs.len();
    let zone_bound = zone_bound(n);
    if st.regions.len() > region_bound {
        return Err(Error::Analysis(format!("{} regions exceed the bound {region_bound}", st.regions.len())));
    }
    if st.zones.len() > zone_bound {
        return Err(Error::Analysis(format!("{} zones exceed the bound {zone_bound}", st.zones.len())));
    }
    let mut pairs = Vec::new();
    let mut alphas = Vec::new();
    let xmin = st.oc.x_min();
    for (zi, z) in st.zones.iter().enumerate() {
        let prob = zone_probability(&st, (start.state, start.counters[0]), z, eps)?;
        let h = zone_frequency(&st, z, eps)?.project(&normalized.projection, m.num_states());
        if z.kind == ZoneKind::TypeIINeg {
            let t = rat_to_f64(&st.bsccs[z.bscc.unwrap()].trend);
            alphas.push((zi, log10_alpha(n, xmin, t)));
        }
        pairs.push(ZonePair {
            zone: zi,
            kind: z.kind,
            label: st.zone_label(z),
            vacuous: prob.value <= prob.err,
            p: prob.value,
            p_err: prob.err,
            h,
        });
    }
    pairs.sort_by(|a, b| b.p.partial_cmp(&a.p).unwrap().then(a.zone.cmp(&b.zone)));
    Ok(OcAnalysis { normalized, structure: st, pairs, region_bound, zone_bound, log10_alpha: alphas })
}

/// Max over configurations with counter ≤ 2·11|Q|⁴ of the distance to the
/// nearest region, against the bound 11|Q|⁴.
#[derive(Clone, Debug)]
pub struct ReachBound {
    pub max_distance: usize,
    pub bound: usize,
    pub checked_up_to: usize,
}

impl ReachBound {
    pub fn holds(&self) -> bool {
        self.max_distance <= self.bound
    }
}

pub fn region_reach_bound(st: &OcStructure) -> ReachBound {
    let n = st.oc.n();
    let bound = 11 * n.pow(4);
    let check = 2 * bound;
    let grid = Grid::new(&st.oc, 3 * bound);
    let mut dist = vec![usize::MAX; grid.size()];
    let mut queue = VecDeque::new();
    for k in 0..=grid.w {
        for q in 0..n {
            if st.regions.iter().any(|r| r.contains(q, k as u64)) {
                dist[grid.idx(q, k)] = 0;
                queue.push_back(grid.idx(q, k));
            }
        }
    }
    while let Some(j) = queue.pop_front() {
        let (q, k) = (j % n, j / n);
        for &i in &st.oc.inc[q] {
            let r = &st.oc.rules[i];
            let k0 = k as i64 - r.delta as i64;
            if k0 < 0 || k0 as usize > grid.w {
                continue;
            }
            let j0 = grid.idx(r.src, k0 as usize);
            if dist[j0] == usize::MAX {
                dist[j0] = dist[j] + 1;
                queue.push_back(j0);
            }
        }
    }
    let mut max_distance = 0;
    for k in 0..=check {
        for q in 0..n {
            max_distance = max_distance.max(dist[grid.idx(q, k)]);
        }
    }
    ReachBound { max_distance, bound, checked_up_to: check }
}

/// Convenience: structure of a one-dimensional model after normalisation.
pub fn structure_of(m: &Pvass, tol: f64) -> Result<(Normalized, OcStructure)> {
    let normalized = normalize(m);
    let oc = OneCounter::from_pvass(&normalized.model)?;
    Ok((normalized, OcStructure::new(oc, tol)?))
}

/// The sign of a rational as used for zone selection.
pub fn trend_sign(r: &Rat) -> i8 {
    if r.is_positive() {
        1
    } else if r.is_negative() {
        -1
    } else {
        0
    }
}
