//! Two-counter analysis: projections, mean payoffs of regions, stability,
//! structural constants, the martingale with its tail-bound constants,
//! configuration-set families, case classification and tree unfolding.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Signed, ToPrimitive, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{model_err, Error, Result};
use crate::model::{normalize, pattern_of, Configuration, Pattern, Pvass, StateId};
use crate::numeric::{rat_to_f64, sign_of, Interval, Rat};
use crate::oc::{ds_chain, excursion_moments, Bound, BsccInfo, OcStructure, OneCounter, RegionKind, ZoneKind};

pub const DEFAULT_THETA: f64 = 1e-6;
pub const DEFAULT_HORIZON: usize = 10_000;
/// Termination tolerance used for the projections.
pub const PROJECTION_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Projections

/// The one-counter pVASS keeping counter `index` (1 or 2); rule labels carry
/// the update of the other counter.
#[derive(Clone, Debug)]
pub struct Projection {
    pub index: usize,
    pub structure: OcStructure,
}

impl Projection {
    pub fn oc(&self) -> &OneCounter {
        &self.structure.oc
    }

    /// Indices of regions of the given kind.
    pub fn regions_of(&self, kind: RegionKind) -> Vec<usize> {
        (0..self.structure.regions.len()).filter(|&r| self.structure.regions[r].kind == kind).collect()
    }
}

pub fn project(m: &Pvass, i: usize, tol: f64) -> Result<Projection> {
    if m.dimension() != 2 {
        return model_err(format!("projections need dimension 2, got {}", m.dimension()));
    }
    if !(i == 1 || i == 2) {
        return model_err("projection index must be 1 or 2");
    }
    if !m.satisfies_assumption() {
        return model_err("projections need a normalised model");
    }
    let oc = OneCounter::projection(m, i - 1)?;
    Ok(Projection { index: i, structure: OcStructure::new(oc, tol)? })
}

/// A normalised two-counter model with both projections.
#[derive(Clone, Debug)]
pub struct TwoCounter {
    pub model: Pvass,
    /// Normalised state -> original state.
    pub origin: Vec<StateId>,
    pub original_names: Vec<String>,
    pub proj: [Projection; 2],
    /// Exact trend per BSCC, indexed like `proj[_].structure.bsccs`.
    pub trends: Vec<[Rat; 2]>,
}

impl TwoCounter {
    pub fn new(m: &Pvass, tol: f64) -> Result<Self> {
        if m.dimension() != 2 {
            return model_err(format!("two-counter analysis needs dimension 2, got {}", m.dimension()));
        }
        let norm = normalize(m);
        let p1 = project(&norm.model, 1, tol)?;
        let p2 = project(&norm.model, 2, tol)?;
        let (b1, b2) = (&p1.structure.bsccs, &p2.structure.bsccs);
        if b1.len() != b2.len() || b1.iter().zip(b2).any(|(x, y)| x.members != y.members) {
            return Err(Error::Analysis("projections disagree on the underlying chain".into()));
        }
        let trends = b1.iter().zip(b2).map(|(x, y)| [x.trend.clone(), y.trend.clone()]).collect();
        Ok(TwoCounter {
            model: norm.model,
            origin: norm.projection,
            original_names: m.states().to_vec(),
            proj: [p1, p2],
            trends,
        })
    }

    pub fn projection(&self, i: usize) -> &Projection {
        &self.proj[i - 1]
    }

    pub fn bsccs(&self) -> &[BsccInfo] {
        &self.proj[0].structure.bsccs
    }

    pub fn trend_sign(&self, b: usize, i: usize) -> i8 {
        sign_of(&self.trends[b][i - 1])
    }

    pub fn region_label(&self, i: usize, r: usize) -> String {
        format!("A{}:{}", i, self.projection(i).structure.region_label(r))
    }
}

// ---------------------------------------------------------------------------
// Mean payoffs

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauCase {
    /// τ equals the other trend component exactly.
    TrendCopy,
    /// τ is the label rate of the regenerative chain.
    Regeneration,
}

impl TauCase {
    pub fn name(self) -> &'static str {
        match self {
            TauCase::TrendCopy => "trend-copy",
            TauCase::Regeneration => "regeneration",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TauReport {
    pub index: usize,
    pub region: usize,
    pub label: String,
    pub value: Interval,
    pub exact: Option<Rat>,
    /// `None` when the interval meets (-θ, θ).
    pub sign: Option<i8>,
    pub case: TauCase,
}

pub fn sign_name(s: Option<i8>) -> &'static str {
    match s {
        Some(1) => "pos",
        Some(-1) => "neg",
        Some(_) => "zero",
        None => "zero-unresolved",
    }
}

pub fn tau_region(proj: &Projection, region: usize, theta: f64) -> Result<TauReport> {
    let st = &proj.structure;
    let r = st.regions.get(region).ok_or_else(|| Error::Analysis(format!("no region {region}")))?;
    if !matches!(r.kind, RegionKind::II | RegionKind::IV) {
        return Err(Error::Analysis(format!("mean payoff needs a type II or IV region, got type {}", r.kind.name())));
    }
    let b = &st.bsccs[r.bscc.expect("type II/IV regions belong to a BSCC")];
    let label = format!("A{}:{}", proj.index, st.region_label(region));
    if r.kind == RegionKind::IV || b.sign() >= 0 {
        let x = rat_to_f64(&b.label_trend);
        return Ok(TauReport {
            index: proj.index,
            region,
            label,
            value: Interval::point(x),
            exact: Some(b.label_trend.clone()),
            sign: Some(sign_of(&b.label_trend)),
            case: TauCase::TrendCopy,
        });
    }
    let anchor = r.anchors[0];
    let mut vals = Vec::new();
    for which in [Bound::Mid, Bound::Lo, Bound::Hi] {
        vals.push(ds_chain(&st.oc, b, anchor, &st.term.g_matrix(which))?.label_rate);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let value = Interval::new(lo, hi).widen(1e-12 * (1.0 + vals[0].abs()));
    Ok(TauReport { index: proj.index, region, label, value, exact: None, sign: value.sign(theta), case: TauCase::Regeneration })
}

/// Mean payoffs of every type II and IV region of both projections.
pub fn all_taus(tc: &TwoCounter, theta: f64) -> Result<Vec<TauReport>> {
    let mut out = Vec::new();
    for p in &tc.proj {
        for (r, reg) in p.structure.regions.iter().enumerate() {
            if matches!(reg.kind, RegionKind::II | RegionKind::IV) {
                out.push(tau_region(p, r, theta)?);
            }
        }
    }
    Ok(out)
}

fn find_tau(taus: &[TauReport], i: usize, r: usize) -> Option<&TauReport> {
    taus.iter().find(|t| t.index == i && t.region == r)
}

// ---------------------------------------------------------------------------
// Stability

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Unresolved,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Unresolved => "unresolved",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub witnesses: Vec<String>,
    pub taus: Vec<TauReport>,
}

pub fn stability_check(tc: &TwoCounter, theta: f64) -> Result<StabilityReport> {
    let taus = all_taus(tc, theta)?;
    let mut unstable = Vec::new();
    let mut unresolved = Vec::new();
    for (b, t) in tc.trends.iter().enumerate() {
        let relevant = tc.proj.iter().any(|p| {
            p.structure.regions.iter().any(|r| r.bscc == Some(b) && matches!(r.kind, RegionKind::II | RegionKind::IV))
        });
        if relevant && (t[0].is_zero() || t[1].is_zero()) {
            let names: Vec<&str> = tc.bsccs()[b].members.iter().map(|&q| tc.model.states()[q].as_str()).collect();
            unstable.push(format!("trend of {{{}}} is ({}, {})", names.join(","), t[0], t[1]));
        }
    }
    for tau in &taus {
        let p = tc.projection(tau.index);
        let r = &p.structure.regions[tau.region];
        let b = r.bscc.unwrap();
        if r.kind != RegionKind::II || tc.trend_sign(b, tau.index) >= 0 {
            continue;
        }
        match tau.sign {
            Some(0) => unstable.push(format!("mean payoff of {} is 0", tau.label)),
            None => unresolved.push(format!("mean payoff of {} in [{:e}, {:e}]", tau.label, tau.value.lo, tau.value.hi)),
            _ => {}
        }
    }
    let (verdict, witnesses) = if !unstable.is_empty() {
        (Verdict::Unstable, unstable)
    } else if !unresolved.is_empty() {
        (Verdict::Unresolved, unresolved)
    } else {
        (Verdict::Stable, Vec::new())
    };
    Ok(StabilityReport { verdict, witnesses, taus })
}

// ---------------------------------------------------------------------------
// Structural constants

/// A path witnessing one of the structural constants.
#[derive(Clone, Debug)]
pub struct Witness {
    pub constant: &'static str,
    /// 1 or 2 for one-counter paths in a projection, 0 for two-counter paths.
    pub projection: usize,
    pub path: Vec<Configuration>,
}

#[derive(Clone, Debug)]
pub struct StructuralConstants {
    pub b_ii: u64,
    pub b_iv: u64,
    pub d_ii: u64,
    /// Counter window above `d_ii` over which the D_II property was checked.
    pub d_window: u64,
    /// Bound b for pumpable paths in positive-trend BSCCs.
    pub b_pump: Option<u64>,
    pub horizon: usize,
    pub witnesses: Vec<Witness>,
}

/// Breadth-first search in a projection; returns the shortest path to a
/// configuration accepted by `goal`.
fn oc_path(
    oc: &OneCounter,
    from: (StateId, u64),
    goal: impl Fn(StateId, u64) -> bool,
    horizon: usize,
) -> Option<Vec<(StateId, u64)>> {
    let mut parent: BTreeMap<(StateId, u64), (StateId, u64)> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = BTreeSet::from([from]);
    while let Some(c) = queue.pop_front() {
        if goal(c.0, c.1) {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(&p) = parent.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        if seen.len() > horizon {
            return None;
        }
        for mv in oc.moves(c.0, c.1) {
            let next = (mv.dst, (c.1 as i64 + mv.delta as i64) as u64);
            if seen.insert(next) {
                parent.insert(next, c);
                queue.push_back(next);
            }
        }
    }
    None
}

/// Shortest cycle p(0) → p(0) with positive total label.
fn positive_label_cycle(oc: &OneCounter, p: StateId, horizon: usize) -> Option<Vec<(StateId, u64)>> {
    type Node = (StateId, u64, i64);
    let start: Node = (p, 0, 0);
    let mut parent: BTreeMap<Node, Node> = BTreeMap::new();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if seen.len() > horizon {
            return None;
        }
        for mv in oc.moves(c.0, c.1) {
            let next: Node = (mv.dst, (c.1 as i64 + mv.delta as i64) as u64, c.2 + mv.label as i64);
            if next.0 == p && next.1 == 0 && next.2 > 0 {
                let mut path = vec![(next.0, next.1), (c.0, c.1)];
                let mut cur = c;
                while let Some(&q) = parent.get(&cur) {
                    path.push((q.0, q.1));
                    cur = q;
                }
                path.reverse();
                return Some(path);
            }
            if seen.insert(next) {
                parent.insert(next, c);
                queue.push_back(next);
            }
        }
    }
    None
}

/// Successor configurations of the two-counter chain (support only).
pub fn successors(m: &Pvass, c: &Configuration) -> Vec<Configuration> {
    let mut out: Vec<Configuration> = m
        .outgoing(c.state)
        .iter()
        .map(|&i| &m.rules()[i])
        .filter(|r| m.is_enabled(r, &c.counters))
        .map(|r| Configuration {
            state: r.dst,
            counters: c.counters.iter().zip(&r.delta).map(|(&v, &k)| (v as i64 + k as i64) as u64).collect(),
        })
        .collect();
    if out.is_empty() {
        out.push(c.clone());
    }
    out
}

fn two_counter_path(
    m: &Pvass,
    from: &Configuration,
    goal: impl Fn(&Configuration) -> bool,
    horizon: usize,
) -> Option<Vec<Configuration>> {
    let mut parent: BTreeMap<Configuration, Configuration> = BTreeMap::new();
    let mut seen = BTreeSet::from([from.clone()]);
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(c) = queue.pop_front() {
        if goal(&c) {
            let mut path = vec![c.clone()];
            let mut cur = c;
            while let Some(p) = parent.get(&cur) {
                path.push(p.clone());
                cur = p.clone();
            }
            path.reverse();
            return Some(path);
        }
        if seen.len() > horizon {
            return None;
        }
        for s in successors(m, &c) {
            if seen.insert(s.clone()) {
                parent.insert(s.clone(), c.clone());
                queue.push_back(s);
            }
        }
    }
    None
}

fn lift(i: usize, path: &[(StateId, u64)]) -> Vec<Configuration> {
    path.iter()
        .map(|&(q, k)| Configuration::new(q, if i == 1 { vec![k, 0] } else { vec![0, k] }))
        .collect()
}

pub fn structural_constants(tc: &TwoCounter, taus: &[TauReport], horizon: usize) -> Result<StructuralConstants> {
    let mut witnesses = Vec::new();
    let mut b_iv = 0u64;
    let mut b_ii = 1u64;
    for p in &tc.proj {
        let st = &p.structure;
        let type1: Vec<usize> = p.regions_of(RegionKind::I);
        for r in p.regions_of(RegionKind::IV) {
            for q in 0..st.oc.n() {
                if !st.regions[r].contains(q, 0) {
                    continue;
                }
                let goal = |s: StateId, k: u64| type1.iter().any(|&t| st.regions[t].contains(s, k));
                let path = oc_path(&st.oc, (q, 0), goal, horizon).ok_or_else(|| {
                    Error::Analysis(format!("B_IV search exhausted the horizon {horizon} at {}", tc.model.states()[q]))
                })?;
                b_iv = b_iv.max(path.len() as u64 - 1);
                witnesses.push(Witness { constant: "B_IV", projection: p.index, path: lift(p.index, &path) });
            }
        }
        for r in p.regions_of(RegionKind::II) {
            let b = st.regions[r].bscc.unwrap();
            let tau = find_tau(taus, p.index, r).and_then(|t| t.sign);
            if tc.trend_sign(b, p.index) >= 0 || tau != Some(1) {
                continue;
            }
            for q in 0..st.oc.n() {
                if !st.regions[r].contains(q, 0) {
                    continue;
                }
                let path = positive_label_cycle(&st.oc, q, horizon).ok_or_else(|| {
                    Error::Analysis(format!("B_II search exhausted the horizon {horizon} at {}", tc.model.states()[q]))
                })?;
                b_ii = b_ii.max(path.len() as u64);
                witnesses.push(Witness { constant: "B_II", projection: p.index, path: lift(p.index, &path) });
            }
        }
    }
    // D_II: from p(v) with v(i) = 0 and v(3-i) large, reach u(i) ≥ target and u(3-i) = 0.
    let target = b_ii.max(b_iv).max(1);
    let d_window = 8u64;
    let mut d_ii = 0u64;
    let mut starts: Vec<(usize, StateId)> = Vec::new();
    for p in &tc.proj {
        let i = p.index;
        let st = &p.structure;
        for r in p.regions_of(RegionKind::II) {
            let b = st.regions[r].bscc.unwrap();
            let (ti, to) = (tc.trend_sign(b, i), tc.trend_sign(b, 3 - i));
            let tau = find_tau(taus, i, r).and_then(|t| t.sign);
            if (ti > 0 && to < 0) || (ti < 0 && tau == Some(-1)) {
                for q in 0..st.oc.n() {
                    if st.regions[r].contains(q, 0) {
                        starts.push((i, q));
                    }
                }
            }
        }
    }
    starts.sort();
    starts.dedup();
    let limit = 4 * (tc.model.num_states() as u64).pow(2) + 64;
    for &(i, q) in &starts {
        let (ki, ko) = (i - 1, 2 - i);
        let mut m = d_ii;
        while m <= d_ii + d_window {
            let mut counters = vec![0, 0];
            counters[ko] = m;
            let from = Configuration::new(q, counters);
            let goal = |c: &Configuration| c.counters[ki] >= target && c.counters[ko] == 0;
            match two_counter_path(&tc.model, &from, goal, horizon) {
                Some(path) => {
                    if m == d_ii + d_window {
                        witnesses.push(Witness { constant: "D_II", projection: 0, path });
                    }
                    m += 1;
                }
                None => {
                    d_ii = m + 1;
                    if d_ii > limit {
                        return Err(Error::Analysis(format!("D_II search exceeded {limit}")));
                    }
                    m = d_ii;
                }
            }
        }
    }
    let b_pump = pump_bound(tc, horizon)?;
    Ok(StructuralConstants { b_ii, b_iv, d_ii, d_window, b_pump, horizon, witnesses })
}

/// For BSCCs with positive trend in both components: a bound b such that
/// every state has a cycle with positive effect in both counters whose
/// prefixes never drop below -b.
fn pump_bound(tc: &TwoCounter, horizon: usize) -> Result<Option<u64>> {
    let mut out: Option<u64> = None;
    for (bi, b) in tc.bsccs().iter().enumerate() {
        if tc.trend_sign(bi, 1) <= 0 || tc.trend_sign(bi, 2) <= 0 {
            continue;
        }
        for &p in &b.members {
            // Nodes: (state, dx, dy, lowest prefix); dx, dy bounded by the search.
            type Node = (StateId, i64, i64, i64);
            let start: Node = (p, 0, 0, 0);
            let mut seen = HashSet::from([start]);
            let mut queue = VecDeque::from([start]);
            let mut best: Option<i64> = None;
            while let Some(c) = queue.pop_front() {
                if seen.len() > horizon {
                    break;
                }
                for &i in tc.model.outgoing(c.0) {
                    let r = &tc.model.rules()[i];
                    let (dx, dy) = (c.1 + r.delta[0] as i64, c.2 + r.delta[1] as i64);
                    let low = c.3.min(dx).min(dy);
                    if r.dst == p && dx > 0 && dy > 0 {
                        best = Some(best.map_or(-low, |v: i64| v.min(-low)));
                        continue;
                    }
                    let next = (r.dst, dx, dy, low);
                    if dx.abs() <= 64 && dy.abs() <= 64 && seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
            let v = best.ok_or_else(|| Error::Analysis("no pumpable cycle within the search horizon".into()))?;
            out = Some(out.unwrap_or(0).max(v as u64));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// One-counter tail constants

/// Geometric tail P(L ≥ j) ≤ a·c^j of the return time to level 0 in a BSCC
/// with nonzero trend, from the Azuma bound on the one-counter martingale.
#[derive(Clone, Debug)]
pub struct OcTail {
    pub trend: f64,
    /// max - min of the state potential of the one-counter martingale.
    pub span: f64,
    pub d: f64,
    /// Below this j only the trivial bound 1 is used.
    pub j0: f64,
    pub a: f64,
    pub c: f64,
}

pub fn one_counter_tail(oc: &OneCounter, b: &BsccInfo, n_states: usize) -> Result<OcTail> {
    let t = rat_to_f64(&b.trend);
    if t == 0.0 {
        return Err(Error::Analysis("tail bounds need a nonzero trend".into()));
    }
    let s = &b.members;
    let k = s.len();
    // (I - P_S) z = change - t, pinned at the first state.
    let mut a = DMatrix::<f64>::zeros(k + 1, k);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (i, &p) in s.iter().enumerate() {
        a[(i, i)] += 1.0;
        for &ri in &oc.out[p] {
            let r = &oc.rules[ri];
            let j = s.binary_search(&r.dst).map_err(|_| Error::Analysis("BSCC is not closed".into()))?;
            a[(i, j)] -= r.prob;
            rhs[i] += r.prob * r.delta as f64;
        }
        rhs[i] -= t;
    }
    a[(k, 0)] = 1.0;
    let z = a.svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::Analysis(format!("potential: {e}")))?;
    let span = z.max() - z.min();
    let d = (-(t * t) / (8.0 * (span + t.abs() + 1.0).powi(2))).exp();
    let j0 = 1.0 + 2.0 * span / t.abs();
    let a = (2.0 * n_states as f64 / (1.0 - d)).max(d.powf(-j0));
    Ok(OcTail { trend: t, span, d, j0, a, c: d })
}

// ---------------------------------------------------------------------------
// Martingale

/// Weights g(n) over the BSCC of a type II region of A_2 with t_S(2) < 0.
/// m = x1 - τ·ℓ + g(x2)[state] has zero drift while x1 > 0.
#[derive(Clone, Debug)]
pub struct Martingale {
    pub region: usize,
    pub bscc: usize,
    pub states: Vec<StateId>,
    pub tau: f64,
    pub tau_interval: Interval,
    pub t2: f64,
    pub g: DMatrix<f64>,
    pub r_down: DVector<f64>,
    /// g(0), g(1), … over `states`.
    pub table: Vec<DVector<f64>>,
    /// Residual of the level-0 Poisson system.
    pub poisson_residual: f64,
    pub g_max: f64,
    pub r_max: f64,
    /// Largest observed |m(ℓ+1) - m(ℓ)| over the table, used as B.
    pub b: f64,
    pub log10_b_formula: f64,
    pub y_min: f64,
    pub log10_y_floor: f64,
    pub log10_c: f64,
    /// max |g(n)| / n over 1 ≤ n ≤ table length.
    pub c_g: f64,
    pub x_min: f64,
    pub n_states: usize,
    pub tail: OcTail,
}

fn log10_sum(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (1.0 + 10f64.powf(lo - hi)).log10()
}

impl Martingale {
    pub fn pos(&self, q: StateId) -> Option<usize> {
        self.states.binary_search(&q).ok()
    }

    /// g(n)[q]; extends the table through the recurrence when needed.
    pub fn weight(&self, n: u64, q: StateId) -> f64 {
        let i = self.pos(q).expect("state outside the BSCC");
        let n = n as usize;
        if n < self.table.len() {
            return self.table[n][i];
        }
        let mut v = self.table.last().unwrap().clone();
        for _ in self.table.len()..=n {
            v = &self.r_down + &self.g * v;
        }
        v[i]
    }

    pub fn value(&self, x1: u64, x2: u64, q: StateId, step: u64) -> f64 {
        x1 as f64 - self.tau * step as f64 + self.weight(x2, q)
    }

    /// Expected one-step change of m at q(x1 > 0, x2).
    pub fn drift(&self, proj: &Projection, q: StateId, x2: u64) -> f64 {
        proj.oc()
            .moves(q, x2)
            .iter()
            .map(|mv| mv.prob * (mv.label as f64 - self.tau + self.weight((x2 as i64 + mv.delta as i64) as u64, mv.dst)))
            .sum::<f64>()
            - self.weight(x2, q)
    }

    pub fn extend(&mut self, n: usize) {
        while self.table.len() <= n {
            let v = &self.r_down + &self.g * self.table.last().unwrap();
            self.table.push(v);
        }
    }
}

pub fn build_martingale(tc: &TwoCounter, region: usize, theta: f64) -> Result<Martingale> {
    let p2 = tc.projection(2);
    let st = &p2.structure;
    let r = st.regions.get(region).ok_or_else(|| Error::Analysis(format!("no region {region}")))?;
    if r.kind != RegionKind::II {
        return Err(Error::Analysis("the martingale needs a type II region of A_2".into()));
    }
    let bi = r.bscc.unwrap();
    let info = &st.bsccs[bi];
    if info.sign() >= 0 {
        return Err(Error::Analysis("the martingale needs t_S(2) < 0".into()));
    }
    let tau_rep = tau_region(p2, region, theta)?;
    let tau = tau_rep.value.mid();
    let s = info.members.clone();
    let k = s.len();
    let g_full = st.term.g_matrix(Bound::Mid);
    let mom = excursion_moments(&st.oc, &s, &g_full)?;
    let g = mom.g.clone();
    // One BSCC in the graph of G.
    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..k).map(|_| graph.add_node(())).collect();
    for a in 0..k {
        for b in 0..k {
            if st.term.lo[s[a]][s[b]] > 0.0 {
                graph.add_edge(nodes[a], nodes[b], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let bottoms = sccs
        .iter()
        .filter(|c| {
            let set: BTreeSet<usize> = c.iter().map(|x| x.index()).collect();
            c.iter().all(|&x| graph.neighbors(x).all(|y| set.contains(&y.index())))
        })
        .count();
    if bottoms != 1 {
        return Err(Error::Analysis(format!("G has {bottoms} bottom components, expected one")));
    }
    let r_down = DVector::from_fn(k, |a, _| (0..k).map(|b| mom.label[(a, b)] - tau * mom.len[(a, b)]).sum());
    // Level 0: g0[p] = Σ P0 (label - τ + g(δ)[r]) with g(1) = r↓ + G g0.
    let r0: Vec<usize> = (0..k).filter(|&a| r.contains(s[a], 0)).collect();
    let m0 = r0.len();
    let col = |a: usize| r0.iter().position(|&x| x == a);
    let mut a = DMatrix::<f64>::zeros(m0 + 1, m0);
    let mut rhs = DVector::<f64>::zeros(m0 + 1);
    for (row, &pa) in r0.iter().enumerate() {
        a[(row, row)] += 1.0;
        rhs[row] -= tau;
        for mv in st.oc.moves(s[pa], 0) {
            let ra = s.binary_search(&mv.dst).map_err(|_| Error::Analysis("move leaves the BSCC".into()))?;
            rhs[row] += mv.prob * mv.label as f64;
            if mv.delta == 0 {
                let c = col(ra).ok_or_else(|| Error::Analysis("level-0 move leaves the region".into()))?;
                a[(row, c)] -= mv.prob;
            } else {
                rhs[row] += mv.prob * r_down[ra];
                for (c, &rb) in r0.iter().enumerate() {
                    a[(row, c)] -= mv.prob * g[(ra, rb)];
                }
            }
        }
    }
    a[(m0, 0)] = 1.0;
    let sol = a.clone().svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::Analysis(format!("level-0 system: {e}")))?;
    let poisson_residual = (&a * &sol - &rhs).amax();
    let shift = sol.min();
    let mut g0 = DVector::<f64>::zeros(k);
    for (c, &pa) in r0.iter().enumerate() {
        g0[pa] = sol[c] - shift;
    }
    let n_table = 200;
    let mut table = vec![g0];
    for _ in 0..n_table {
        let v = &r_down + &g * table.last().unwrap();
        table.push(v);
    }
    let mut mart = Martingale {
        region,
        bscc: bi,
        states: s.clone(),
        tau,
        tau_interval: tau_rep.value,
        t2: rat_to_f64(&info.trend),
        g: g.clone(),
        r_down: r_down.clone(),
        table,
        poisson_residual,
        g_max: 0.0,
        r_max: r_down.amax().max(1.0),
        b: 0.0,
        log10_b_formula: 0.0,
        y_min: 0.0,
        log10_y_floor: 0.0,
        log10_c: 0.0,
        c_g: 0.0,
        x_min: st.oc.x_min(),
        n_states: tc.model.num_states(),
        tail: one_counter_tail(&st.oc, info, tc.model.num_states())?,
    };
    mart.g_max = mart.table[0].amax().max(f64::MIN_POSITIVE);
    // Empirical difference bound and linear-growth constant over the table.
    let mut b: f64 = 0.0;
    let mut c_g: f64 = 0.0;
    for n in 0..n_table as u64 {
        for &q in &s {
            if !r.contains(q, n) {
                continue;
            }
            let here = mart.weight(n, q);
            if n >= 1 {
                c_g = c_g.max(here.abs() / n as f64);
            }
            for mv in st.oc.moves(q, n) {
                let there = mart.weight((n as i64 + mv.delta as i64) as u64, mv.dst);
                b = b.max((mv.label as f64 - tau + there - here).abs());
            }
        }
    }
    mart.b = b.max(1.0) * (1.0 + 1e-9);
    mart.c_g = c_g;
    let x_min = mart.x_min;
    let sf = k as f64;
    let tail_term = (30.0 * sf * mart.r_max).log10() - sf.powi(4) * x_min.log10();
    mart.log10_b_formula = log10_sum((2.0 + 2.0 * mart.g_max).log10(), tail_term);
    mart.y_min = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| st.term.lo[s[a]][s[b]])
        .filter(|&v| v > 0.0)
        .fold(1.0, f64::min);
    mart.log10_y_floor = sf.powi(3) * x_min.log10();
    mart.log10_c = (10.0 * sf).log10() - sf * mart.y_min.log10();
    Ok(mart)
}

// ---------------------------------------------------------------------------
// Tail constants

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Theorem {
    /// Height of counter 2 when counter 1 first hits zero.
    T5,
    /// Probability of ever hitting counter 1 = 0 when τ > 0.
    T6,
    /// Time to hit counter 1 = 0 when τ < 0.
    T7,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::T5 => "height",
            Theorem::T6 => "divergence",
            Theorem::T7 => "convergence",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TailConstants {
    pub theorem: Theorem,
    pub a: f64,
    pub b: f64,
    pub z: f64,
    /// T7 only: coefficient of i under the square root.
    pub d: Option<f64>,
    /// T7 only: the bound holds for i ≥ H·n/|τ|.
    pub h: Option<f64>,
    pub tau: f64,
    pub trace: Vec<(String, f64)>,
}

impl TailConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0 && self.b > 0.0 && self.z > 0.0 && self.z < 1.0 && self.a.is_finite();
        if !ok {
            return Err(Error::Analysis(format!(
                "tail constants out of shape: a={}, b={}, z={}",
                self.a, self.b, self.z
            )));
        }
        Ok(())
    }

    /// T5: a·z^{b·i}.
    pub fn height_bound(&self, i: u64) -> f64 {
        self.a * self.z.powf(self.b * i as f64)
    }

    /// T5: a·z^b / (1 - z^b).
    pub fn expectation_bound(&self) -> f64 {
        let zb = self.z.powf(self.b);
        self.a * zb / (1.0 - zb)
    }

    /// T6: n·a·z^{n·b}.
    pub fn divergence_bound(&self, n: u64) -> f64 {
        n as f64 * self.a * self.z.powf(n as f64 * self.b)
    }

    /// T7: smallest i covered for start height n.
    pub fn horizon(&self, n: u64) -> f64 {
        self.h.unwrap_or(0.0) * n as f64 / self.tau.abs()
    }

    /// T7: i·a·z^{sqrt(n·τ·b + i·d)}.
    pub fn convergence_bound(&self, n: u64, i: u64) -> f64 {
        let e = n as f64 * self.tau * self.b + i as f64 * self.d.unwrap_or(0.0);
        i as f64 * self.a * self.z.powf(e.max(0.0).sqrt())
    }
}

/// Constants of the return and crucial-bound lemmas shared by T6 and T7.
struct Crucial {
    a1: f64,
    b1: f64,
    c1: f64,
    k: f64,
    a_p: f64,
    b_p: f64,
    b_pp: f64,
    c_p: f64,
    c_used: f64,
}

fn tau_abs_lo(mart: &Martingale) -> Result<f64> {
    let iv = mart.tau_interval;
    if iv.lo <= 0.0 && iv.hi >= 0.0 {
        return Err(Error::Analysis("tail constants need a resolved nonzero mean payoff".into()));
    }
    Ok(iv.lo.abs().min(iv.hi.abs()))
}

fn t5_parts(mart: &Martingale) -> Result<(f64, f64, f64, Vec<(String, f64)>)> {
    let tau = tau_abs_lo(mart)?;
    let tail = &mart.tail;
    let (a, b, c) = (tail.a, 1.0, tail.c);
    let cb = c.powf(b);
    let bb = mart.b;
    let a1 = mart.n_states as f64 * a * cb * 8.0 * bb * bb / ((1.0 - cb) * tau * tau);
    let trace = vec![
        ("t_S(2)".into(), mart.t2),
        ("tau_abs_lower".into(), tau),
        ("B".into(), bb),
        ("repeat_threshold".into(), 4.0 * bb * bb / (tau * tau)),
        ("potential_span".into(), tail.span),
        ("d".into(), tail.d),
        ("one_counter_a".into(), a),
        ("one_counter_b".into(), b),
        ("one_counter_c".into(), c),
        ("one_counter_j0".into(), tail.j0),
    ];
    Ok((a1, b, c, trace))
}

fn crucial(mart: &Martingale) -> Result<(Crucial, Vec<(String, f64)>)> {
    let (a1, b1, c1, mut trace) = t5_parts(mart)?;
    let tau = tau_abs_lo(mart)?;
    let bb = mart.b;
    // The weight bound C only has to dominate |g(0)| and |g(n)|/n.
    let c_used = mart.c_g.max(mart.g_max);
    let k = tau / (2.0 * (c_used + 1.0));
    let ln2 = std::f64::consts::LN_2;
    // Azuma with differences bounded by B: 2·exp(-(nτ/(2B²) + iτ²/(8B²))), in base 1/2.
    let (a_p, c_p) = (2.0, 0.5);
    let b_p = 1.0 / (2.0 * bb * bb * ln2);
    let b_pp = tau * tau / (8.0 * bb * bb * ln2);
    trace.extend([
        ("a1".to_string(), a1),
        ("C_used".into(), c_used),
        ("log10_C_formula".into(), mart.log10_c),
        ("k".into(), k),
        ("a_prime".into(), a_p),
        ("b_prime".into(), b_p),
        ("b_second".into(), b_pp),
        ("c_prime".into(), c_p),
    ]);
    Ok((Crucial { a1, b1, c1, k, a_p, b_p, b_pp, c_p, c_used }, trace))
}

pub fn tail_constants(mart: &Martingale, which: Theorem) -> Result<TailConstants> {
    let tau = mart.tau;
    let out = match which {
        Theorem::T5 => {
            let (a1, b1, z1, mut trace) = t5_parts(mart)?;
            trace.push(("a1".into(), a1));
            TailConstants { theorem: which, a: a1, b: b1, z: z1, d: None, h: None, tau, trace }
        }
        Theorem::T6 => {
            if mart.tau_interval.lo <= 0.0 {
                return Err(Error::Analysis("divergence bound needs τ > 0".into()));
            }
            let (c, mut trace) = crucial(mart)?;
            let z2 = c.c_p.max(c.c1);
            let lz = z2.ln();
            let b2 = c.k * (c.b_pp * c.c_p.ln() / lz).min(c.b1 * c.c1.ln() / lz);
            let first = c.k * c.a_p / (1.0 - c.c_p.powf(c.k * c.b_pp)).powi(2);
            let second = c.a1 / ((1.0 - c.c1.powf(c.b1)) * (1.0 - c.c1.powf(c.b1 * c.k)));
            trace.push(("n_factor_kept".into(), 1.0));
            TailConstants { theorem: which, a: first + second, b: b2, z: z2, d: None, h: None, tau, trace }
        }
        Theorem::T7 => {
            if mart.tau_interval.hi >= 0.0 {
                return Err(Error::Analysis("convergence bound needs τ < 0".into()));
            }
            let (c, mut trace) = crucial(mart)?;
            let a3t = 2.0 * (c.k * c.a_p).max(c.a1 / (1.0 - c.c1.powf(c.b1)));
            let z3 = c.c_p.max(c.c1);
            let b3 = c.b_p;
            let d3 = c.k * c.b_pp.min(c.b1);
            let tau_abs = tau_abs_lo(mart)?;
            let h = 2f64.max(tau_abs * tau_abs * b3 / d3);
            trace.extend([("a3_tilde".to_string(), a3t), ("d3".into(), d3), ("H".into(), h)]);
            let _ = c.c_used;
            TailConstants { theorem: which, a: a3t / z3, b: b3, z: z3, d: Some(d3), h: Some(h), tau, trace }
        }
    };
    out.validate()?;
    Ok(out)
}

/// T7 for a type II region of A_2 whose BSCC has t_S(2) > 0 (then τ = t_S(1)).
pub fn convergence_positive_trend(tc: &TwoCounter, region: usize) -> Result<TailConstants> {
    let p2 = tc.projection(2);
    let st = &p2.structure;
    let r = st.regions.get(region).ok_or_else(|| Error::Analysis(format!("no region {region}")))?;
    let bi = r.bscc.ok_or_else(|| Error::Analysis("region without BSCC".into()))?;
    if r.kind != RegionKind::II || tc.trend_sign(bi, 2) <= 0 || tc.trend_sign(bi, 1) >= 0 {
        return Err(Error::Analysis("needs a type II region of A_2 with t_S(2) > 0 and τ < 0".into()));
    }
    let t = rat_to_f64(&tc.trends[bi][1]);
    let tau = rat_to_f64(&tc.trends[bi][0]);
    let nq = tc.model.num_states();
    let ns = st.bsccs[bi].members.len();
    let (mut a_hat, mut c_hat, mut h_hat): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for p in &tc.proj {
        for b in &p.structure.bsccs {
            if b.trend.is_zero() {
                continue;
            }
            let tail = one_counter_tail(p.oc(), b, nq)?;
            a_hat = a_hat.max(tail.a);
            c_hat = c_hat.max(tail.c);
            h_hat = h_hat.max(tail.span);
        }
    }
    let delta = st.bsccs[bi]
        .members
        .iter()
        .map(|&q| st.term.up_lo[q])
        .filter(|&v| v > 0.0)
        .fold(1.0, f64::min);
    if delta >= 1.0 {
        return Err(Error::Analysis("no positive divergence probability in the BSCC".into()));
    }
    let h = (2.0 * h_hat).max(4.0 * ns as f64).max(16.0 * (h_hat / t).powi(2));
    let e = std::f64::consts::E;
    let a4 = a_hat + 1.0;
    let c4 = c_hat.sqrt().max((1.0 - delta).powf(0.125));
    let c_a = (-1.0 / (8.0 * (t * t + h_hat + 1.0))).exp();
    let part_a = 4.0 / (e * c_a.ln().abs()) / ((1.0 - c_a) * c_a);
    let p_min = p2.oc().x_min();
    let rho = (1.0 - p_min.powi((nq * nq) as i32)) * (1.0 - delta);
    let part_b = 1.0 / rho;
    let c3 = (-(t * t) / (8.0 * (h_hat + t.abs() + 1.0).powi(2))).exp();
    let part_c = nq as f64 * (16.0 / (e * c3.ln().abs())).powi(2) * 2.0 / (1.0 - c3);
    let a5 = part_a + part_b + part_c;
    let c5 = c_a.powf(0.25).max(rho.powf(1.0 / (2.0 * (nq * nq) as f64))).max(c3.powf(0.125));
    let z3 = c5.powf(std::f64::consts::FRAC_1_SQRT_2).max(c4.sqrt());
    let a3 = 9.0 / 8.0 * a5 + nq as f64 * a4 * (1.0 / (e * c4.ln().abs()) + 1.0);
    let b3 = h / (2.0 * tau * tau);
    let trace = vec![
        ("t_S(2)".to_string(), t),
        ("tau".into(), tau),
        ("a_hat".into(), a_hat),
        ("c_hat".into(), c_hat),
        ("h_hat".into(), h_hat),
        ("divergence_gap".into(), delta),
        ("H".into(), h),
        ("a4".into(), a4),
        ("c4".into(), c4),
        ("a5".into(), a5),
        ("c5".into(), c5),
    ];
    let out = TailConstants { theorem: Theorem::T7, a: a3, b: b3, z: z3, d: Some(1.0), h: Some(h), tau, trace };
    out.validate()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Configuration sets

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Any,
    Eq(u64),
    Le(u64),
    Ge(u64),
}

impl Cmp {
    pub fn holds(self, v: u64) -> bool {
        match self {
            Cmp::Any => true,
            Cmp::Eq(b) => v == b,
            Cmp::Le(b) => v <= b,
            Cmp::Ge(b) => v >= b,
        }
    }

    fn text(self, c: &str) -> Option<String> {
        match self {
            Cmp::Any => None,
            Cmp::Eq(b) => Some(format!("{c}={b}")),
            Cmp::Le(b) => Some(format!("{c}<={b}")),
            Cmp::Ge(b) => Some(format!("{c}>={b}")),
        }
    }

    fn swap_text(a: Cmp, b: Cmp) -> String {
        let parts: Vec<String> = [a.text("c1"), b.text("c2")].into_iter().flatten().collect();
        parts.join(" & ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigSet {
    /// C[R1,R2]: p(m1,m2) with p(m1) ∈ R1 in A_1 and p(m2) ∈ R2 in A_2.
    Product { r1: usize, r2: usize },
    /// B[b]: every reachable configuration has a counter ≤ b.
    Bounded { b: u64 },
    /// C_S[c1 ~ b1 ∧ c2 ≈ b2].
    Constrained { states: Vec<StateId>, c1: Cmp, c2: Cmp },
    /// Z_S: some counter is zero.
    Zero { states: Vec<StateId> },
    /// E_S[b1,b2].
    Escape { states: Vec<StateId>, b1: u64, b2: u64 },
    /// Attractor candidate: q(0,m) ∈ C[R1,R2] with m ≤ max_m.
    Attractor { r1: usize, r2: usize, max_m: u64, threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Membership {
    In,
    Out,
    /// Exploration stopped at this many configurations without a verdict.
    Unknown(usize),
}

impl ConfigSet {
    pub fn name(&self) -> String {
        match self {
            ConfigSet::Product { r1, r2 } => format!("C[R1#{r1},R2#{r2}]"),
            ConfigSet::Bounded { b } => format!("B[{b}]"),
            ConfigSet::Constrained { c1, c2, .. } => format!("C_S[{}]", Cmp::swap_text(*c1, *c2)),
            ConfigSet::Zero { .. } => "Z_S".into(),
            ConfigSet::Escape { b1, b2, .. } => format!("E_S[{b1},{b2}]"),
            ConfigSet::Attractor { max_m, .. } => format!("attractor(c1=0, c2<={max_m})"),
        }
    }

    /// Membership with `horizon` bounding the exploration of post*.
    pub fn membership(&self, tc: &TwoCounter, c: &Configuration, horizon: usize) -> Membership {
        let in_s = |states: &[StateId]| states.binary_search(&c.state).is_ok();
        let v = &c.counters;
        let yes = |b: bool| if b { Membership::In } else { Membership::Out };
        match self {
            ConfigSet::Product { r1, r2 } => yes(
                tc.proj[0].structure.regions[*r1].contains(c.state, v[0])
                    && tc.proj[1].structure.regions[*r2].contains(c.state, v[1]),
            ),
            ConfigSet::Constrained { states, c1, c2 } => yes(in_s(states) && c1.holds(v[0]) && c2.holds(v[1])),
            ConfigSet::Zero { states } => yes(in_s(states) && (v[0] == 0 || v[1] == 0)),
            ConfigSet::Attractor { r1, r2, max_m, .. } => yes(
                v[0] == 0
                    && v[1] <= *max_m
                    && tc.proj[0].structure.regions[*r1].contains(c.state, 0)
                    && tc.proj[1].structure.regions[*r2].contains(c.state, v[1]),
            ),
            ConfigSet::Bounded { b } => explore_all(&tc.model, c, horizon, |u| u.counters[0] <= *b || u.counters[1] <= *b),
            ConfigSet::Escape { states, b1, b2 } => {
                if !in_s(states) || (v[0] != 0 && v[1] != 0) {
                    return Membership::Out;
                }
                explore_all(&tc.model, c, horizon, |u| {
                    (u.counters[0] != 0 || u.counters[1] <= *b2) && (u.counters[1] != 0 || u.counters[0] <= *b1)
                })
            }
        }
    }
}

/// Checks `ok` on all of post*(c): Out on a violation, In when post* is
/// exhausted, Unknown when the horizon is hit first.
fn explore_all(m: &Pvass, c: &Configuration, horizon: usize, ok: impl Fn(&Configuration) -> bool) -> Membership {
    let mut seen = HashSet::from([c.clone()]);
    let mut queue = VecDeque::from([c.clone()]);
    while let Some(u) = queue.pop_front() {
        if !ok(&u) {
            return Membership::Out;
        }
        for s in successors(m, &u) {
            if seen.insert(s.clone()) {
                if seen.len() > horizon {
                    return Membership::Unknown(horizon);
                }
                queue.push_back(s);
            }
        }
    }
    Membership::In
}

// ---------------------------------------------------------------------------
// Attractor candidate

/// q(0,m) ∈ C[R1,R2] with m ≤ a1·z1^{b1}/(1 - z1^{b1}).
pub fn attractor_candidate(
    tc: &TwoCounter,
    r1: usize,
    r2: usize,
    taus: &[TauReport],
    t5: &TailConstants,
) -> Result<ConfigSet> {
    let (reg1, reg2) = (&tc.proj[0].structure.regions[r1], &tc.proj[1].structure.regions[r2]);
    if reg1.kind != RegionKind::II || reg2.kind != RegionKind::II || reg1.bscc != reg2.bscc {
        return Err(Error::Analysis("attractor candidate needs two type II regions of one BSCC".into()));
    }
    let b = reg2.bscc.unwrap();
    let t1 = find_tau(taus, 1, r1).and_then(|t| t.sign);
    let t2 = find_tau(taus, 2, r2).and_then(|t| t.sign);
    if tc.trend_sign(b, 2) >= 0 || t1 != Some(-1) || t2 != Some(-1) {
        return Err(Error::Analysis("attractor candidate needs t_S(2) < 0 and both mean payoffs negative".into()));
    }
    if t5.theorem != Theorem::T5 {
        return Err(Error::Analysis("attractor candidate needs the height constants".into()));
    }
    let threshold = t5.expectation_bound();
    let max_m = if threshold >= u64::MAX as f64 { u64::MAX } else { threshold.floor() as u64 };
    Ok(ConfigSet::Attractor { r1, r2, max_m, threshold })
}

/// States q with q(0,m) in the attractor for some m, and the smallest such m.
pub fn attractor_states(tc: &TwoCounter, set: &ConfigSet, scan: u64) -> Vec<(StateId, u64)> {
    let ConfigSet::Attractor { r1, r2, max_m, .. } = set else { return Vec::new() };
    let (reg1, reg2) = (&tc.proj[0].structure.regions[*r1], &tc.proj[1].structure.regions[*r2]);
    (0..tc.model.num_states())
        .filter(|&q| reg1.contains(q, 0))
        .filter_map(|q| (0..=scan.min(*max_m)).find(|&m| reg2.contains(q, m)).map(|m| (q, m)))
        .collect()
}

// ---------------------------------------------------------------------------
// Case classification

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    /// One region is of type I or III: one counter is bounded or irrelevant.
    OneCounter,
    /// Trend positive in both components.
    PositiveTrend,
    /// II/II, t(2) < 0, both mean payoffs negative: finite eager attractor.
    Attractor,
    /// II/II, t(2) < 0 < t(1), τ(R2) > 0.
    EscapeMixedTrend,
    /// II/II, both trends negative, both mean payoffs positive.
    DoubleEscape,
    /// II/II, both trends negative, τ(R1) < 0 < τ(R2).
    EscapeNegativeTrend,
    /// IV/II, t(2) < 0, τ(R2) > 0.
    TransitEscape,
    /// IV/II, t(2) < 0, τ(R2) < 0.
    TransitReturn,
    /// II/IV, t(2) < 0 < t(1).
    TransitDiverge,
    /// IV/IV with a negative trend component.
    DoubleTransit,
}

impl CaseKind {
    pub fn label(self) -> &'static str {
        match self {
            CaseKind::OneCounter => "one-counter reduction",
            CaseKind::PositiveTrend => "positive trend",
            CaseKind::Attractor => "II/II attractor",
            CaseKind::EscapeMixedTrend => "II/II escape, mixed trend",
            CaseKind::DoubleEscape => "II/II double escape",
            CaseKind::EscapeNegativeTrend => "II/II escape, negative trend",
            CaseKind::TransitEscape => "IV/II escape",
            CaseKind::TransitReturn => "IV/II return",
            CaseKind::TransitDiverge => "II/IV divergence",
            CaseKind::DoubleTransit => "IV/IV transit",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub r1: usize,
    pub r2: usize,
    pub kind: CaseKind,
    /// Counters exchanged relative to the canonical statement of the case.
    pub swapped: bool,
    pub family: Vec<ConfigSet>,
    /// Member of `family` that is the designated finite or eager target.
    pub target: usize,
}

impl CaseReport {
    pub fn label(&self) -> String {
        if self.swapped {
            format!("{} (counters swapped)", self.kind.label())
        } else {
            self.kind.label().to_string()
        }
    }
}

/// Everything case classification needs besides the model.
pub struct CaseContext<'a> {
    pub taus: &'a [TauReport],
    pub consts: &'a StructuralConstants,
    /// Height constants per type II region of A_2 (for attractor candidates).
    pub t5: &'a dyn Fn(usize) -> Result<TailConstants>,
}

pub fn case_classify(tc: &TwoCounter, r1: usize, r2: usize, ctx: &CaseContext) -> Result<CaseReport> {
    let reg1 = &tc.proj[0].structure.regions[r1];
    let reg2 = &tc.proj[1].structure.regions[r2];
    let simple = |kind| CaseReport { r1, r2, kind, swapped: false, family: vec![ConfigSet::Product { r1, r2 }], target: 0 };
    if matches!(reg1.kind, RegionKind::I | RegionKind::III) || matches!(reg2.kind, RegionKind::I | RegionKind::III) {
        return Ok(simple(CaseKind::OneCounter));
    }
    if reg1.bscc != reg2.bscc {
        return Err(Error::Analysis("regions of different BSCCs do not intersect".into()));
    }
    let b = reg1.bscc.unwrap();
    let states = tc.bsccs()[b].members.clone();
    let t = [tc.trend_sign(b, 1), tc.trend_sign(b, 2)];
    if t.contains(&0) {
        return Err(Error::Analysis("unstable model: zero trend component".into()));
    }
    let sign_of_tau = |i: usize, r: usize| -> Result<i8> {
        match find_tau(ctx.taus, i, r).and_then(|x| x.sign) {
            Some(s) if s != 0 => Ok(s),
            _ => Err(Error::Analysis(format!("mean payoff of {} unresolved", tc.region_label(i, r)))),
        }
    };
    let tau = [sign_of_tau(1, r1)?, sign_of_tau(2, r2)?];
    let c = ctx.consts;
    if t == [1, 1] {
        let bp = c.b_pump.unwrap_or(0);
        return Ok(CaseReport {
            r1,
            r2,
            kind: CaseKind::PositiveTrend,
            swapped: false,
            family: vec![
                ConfigSet::Bounded { b: bp },
                ConfigSet::Constrained { states, c1: Cmp::Ge(bp), c2: Cmp::Ge(bp) },
            ],
            target: 0,
        });
    }
    let kinds = [reg1.kind, reg2.kind];
    // Type I regions of A_i in the same BSCC (reachable from a type IV region).
    let type1 = |i: usize| -> Vec<usize> {
        let p = &tc.proj[i - 1];
        p.regions_of(RegionKind::I).into_iter().filter(|&r| p.structure.regions[r].bscc == Some(b)).collect()
    };
    // Canonical orientation: counter 2 is the one with negative trend,
    // unless the case statement fixes the roles otherwise.
    use RegionKind::{II, IV};
    let escape = |on_c1: bool, b_val: u64| {
        if on_c1 {
            ConfigSet::Constrained { states: states.clone(), c1: Cmp::Ge(b_val), c2: Cmp::Eq(0) }
        } else {
            ConfigSet::Constrained { states: states.clone(), c1: Cmp::Eq(0), c2: Cmp::Ge(b_val) }
        }
    };
    let e = |b1: u64, b2: u64| ConfigSet::Escape { states: states.clone(), b1, b2 };
    let report = |kind, swapped, family: Vec<ConfigSet>, target| Ok(CaseReport { r1, r2, kind, swapped, family, target });
    match kinds {
        [II, II] => {
            if t[1] < 0 && tau == [-1, -1] {
                let t5 = (ctx.t5)(r2)?;
                let att = attractor_candidate(tc, r1, r2, ctx.taus, &t5)?;
                return report(CaseKind::Attractor, false, vec![att], 0);
            }
            if t[0] < 0 && t[1] > 0 && tau == [-1, -1] {
                // The attractor statement with the counters exchanged.
                return report(CaseKind::Attractor, true, vec![ConfigSet::Product { r1, r2 }], 0);
            }
            if t[1] < 0 && t[0] > 0 && tau[1] > 0 {
                return report(CaseKind::EscapeMixedTrend, false, vec![e(c.b_ii, c.d_ii), escape(true, c.b_ii)], 0);
            }
            if t[0] < 0 && t[1] > 0 && tau[0] > 0 {
                return report(CaseKind::EscapeMixedTrend, true, vec![e(c.d_ii, c.b_ii), escape(false, c.b_ii)], 0);
            }
            // Both trends negative from here on.
            match tau {
                [1, 1] => report(
                    CaseKind::DoubleEscape,
                    false,
                    vec![e(c.b_ii, c.b_ii), escape(true, c.b_ii), escape(false, c.b_ii)],
                    0,
                ),
                [-1, 1] => report(CaseKind::EscapeNegativeTrend, false, vec![e(c.b_ii, c.d_ii), escape(true, c.b_ii)], 0),
                [1, -1] => report(CaseKind::EscapeNegativeTrend, true, vec![e(c.d_ii, c.b_ii), escape(false, c.b_ii)], 0),
                _ => unreachable!("all sign combinations handled"),
            }
        }
        [IV, II] | [II, IV] => {
            // Orient so that the type IV region is R1 in the canonical statement.
            let iv_first = kinds[0] == IV;
            let (t_ii, t_iv) = if iv_first { (t[1], t[0]) } else { (t[0], t[1]) };
            let tau_ii = if iv_first { tau[1] } else { tau[0] };
            let swapped = !iv_first;
            let iv_proj = if iv_first { 1 } else { 2 };
            let transit: Vec<ConfigSet> = type1(iv_proj)
                .into_iter()
                .map(|r| if iv_first { ConfigSet::Product { r1: r, r2 } } else { ConfigSet::Product { r1, r2: r } })
                .collect();
            let oriented_e = |a: u64, bb: u64| if swapped { e(bb, a) } else { e(a, bb) };
            if t_ii < 0 {
                let mut fam;
                let kind;
                if tau_ii > 0 {
                    fam = vec![oriented_e(c.b_ii, c.b_iv), escape(!swapped, c.b_ii)];
                    kind = CaseKind::TransitEscape;
                } else {
                    fam = vec![oriented_e(c.d_ii, c.b_iv)];
                    kind = CaseKind::TransitReturn;
                }
                fam.extend(transit);
                report(kind, swapped, fam, 0)
            } else {
                // The type II counter drifts up and the type IV counter down.
                let _ = t_iv;
                let mut fam = vec![oriented_e(c.d_ii, c.b_iv)];
                fam.extend(transit);
                report(CaseKind::TransitDiverge, !swapped, fam, 0)
            }
        }
        [IV, IV] => {
            let mut fam = vec![e(c.b_iv, c.b_iv)];
            let (i1, i2) = (type1(1), type1(2));
            for &a in &i2 {
                fam.push(ConfigSet::Product { r1, r2: a });
            }
            for &a in &i1 {
                fam.push(ConfigSet::Product { r1: a, r2 });
            }
            for &a in &i1 {
                for &bb in &i2 {
                    fam.push(ConfigSet::Product { r1: a, r2: bb });
                }
            }
            report(CaseKind::DoubleTransit, false, fam, 0)
        }
        _ => Err(Error::Analysis("unexpected region kinds".into())),
    }
}

/// All region pairs of type II/IV sharing a BSCC.
pub fn relevant_pairs(tc: &TwoCounter) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (a, b) = (&tc.proj[0].structure.regions, &tc.proj[1].structure.regions);
    for (i, r1) in a.iter().enumerate() {
        for (j, r2) in b.iter().enumerate() {
            let rel = |k| matches!(k, RegionKind::II | RegionKind::IV);
            if rel(r1.kind) && rel(r2.kind) && r1.bscc == r2.bscc {
                out.push((i, j));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tree unfolding

/// Probability mass: exact rationals or floats.
pub trait Mass: Clone + std::fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_rat(r: &Rat) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn to_f64(&self) -> f64;
}

impl Mass for Rat {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_rat(r: &Rat) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn to_f64(&self) -> f64 {
        rat_to_f64(self)
    }
}

impl Mass for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_rat(r: &Rat) -> Self {
        rat_to_f64(r)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

pub type PatternMap = BTreeMap<Pattern, f64>;

#[derive(Clone, Debug)]
pub struct TreePair<M> {
    pub target: usize,
    pub entry: usize,
    pub p: M,
    pub h: PatternMap,
}

#[derive(Clone, Debug)]
pub struct TreeOutcome<M> {
    pub pairs: Vec<TreePair<M>>,
    /// Mass absorbed per target.
    pub absorbed: Vec<M>,
    /// Mass not absorbed within the depth.
    pub residual: M,
    pub depth: usize,
}

impl<M: Mass> TreeOutcome<M> {
    /// Σ P + residual.
    pub fn total(&self) -> M {
        self.pairs.iter().fold(self.residual.clone(), |acc, p| acc.add(&p.p))
    }
}

/// Unfolds the chain from `start` for up to `depth` steps (fewer once the
/// unabsorbed mass is within `max_residual`), stopping branches that
/// enter a target (`classify` returns its index), and combines the absorbed
/// mass with each target's (P, H) table. Identical configurations on one
/// level are merged, which leaves the leaf probabilities unchanged.
pub fn reduce_tree<M: Mass>(
    m: &Pvass,
    start: &Configuration,
    classify: &dyn Fn(&Configuration) -> Option<usize>,
    depth: usize,
    tables: &[Vec<(M, PatternMap)>],
    max_residual: Option<f64>,
) -> Result<TreeOutcome<M>> {
    let mut absorbed = vec![M::zero(); tables.len()];
    let mut frontier: BTreeMap<Configuration, M> = BTreeMap::new();
    let mut absorb = |c: &Configuration, p: M, frontier: &mut BTreeMap<Configuration, M>| -> Result<()> {
        match classify(c) {
            Some(t) if t < tables.len() => absorbed[t] = absorbed[t].add(&p),
            Some(t) => return Err(Error::Analysis(format!("target {t} has no table"))),
            None => {
                let e = frontier.entry(c.clone()).or_insert_with(M::zero);
                *e = e.add(&p);
            }
        }
        Ok(())
    };
    // Step tables per (state, zero mask): (dst, delta, probability).
    let dim = m.dimension();
    let tables_step: Vec<Vec<(StateId, Vec<i8>, M)>> = (0..m.num_states() << dim)
        .map(|idx| {
            let (q, bits) = (idx >> dim, idx & ((1 << dim) - 1));
            let probe = Configuration::new(q, (0..dim).map(|i| (bits >> i & 1) as u64).collect());
            let enabled: Vec<&crate::model::Rule> =
                m.outgoing(q).iter().map(|&i| &m.rules()[i]).filter(|r| m.is_enabled(r, &probe.counters)).collect();
            if enabled.is_empty() {
                return vec![(q, vec![0; dim], M::one())];
            }
            let total: num_bigint::BigUint = enabled.iter().map(|r| &r.weight).sum();
            enabled
                .iter()
                .map(|r| (r.dst, r.delta.clone(), M::from_rat(&crate::numeric::rat_from_ratio(&r.weight, &total))))
                .collect()
        })
        .collect();
    if start.state >= m.num_states() || start.counters.len() != dim {
        return model_err("start configuration does not fit the model");
    }
    absorb(start, M::one(), &mut frontier)?;
    let mut level = 0;
    let mass = |f: &BTreeMap<Configuration, M>| f.values().fold(M::zero(), |acc, p| acc.add(p));
    while level < depth && !frontier.is_empty() {
        if max_residual.is_some_and(|eps| mass(&frontier).to_f64() <= eps) {
            break;
        }
        let mut next = BTreeMap::new();
        for (c, p) in std::mem::take(&mut frontier) {
            let bits: usize = c.counters.iter().enumerate().map(|(i, &v)| ((v > 0) as usize) << i).sum();
            for (dst, delta, q) in &tables_step[c.state << dim | bits] {
                let counters = c.counters.iter().zip(delta).map(|(&v, &k)| (v as i64 + k as i64) as u64).collect();
                absorb(&Configuration::new(*dst, counters), p.mul(q), &mut next)?;
            }
        }
        frontier = next;
        level += 1;
    }
    let residual = mass(&frontier);
    if let Some(eps) = max_residual {
        if residual.to_f64() > eps {
            return Err(Error::Analysis(format!(
                "residual mass {:.3e} exceeds {eps:e} at depth {depth}; raise the depth",
                residual.to_f64()
            )));
        }
    }
    let mut pairs = Vec::new();
    for (t, table) in tables.iter().enumerate() {
        for (j, (pj, h)) in table.iter().enumerate() {
            pairs.push(TreePair { target: t, entry: j, p: absorbed[t].mul(pj), h: h.clone() });
        }
    }
    Ok(TreeOutcome { pairs, absorbed, residual, depth: level })
}

/// Pattern frequencies of the regime in which counter i regenerates in a
/// negative-trend type II region of A_i and the other counter diverges:
/// q(0) ↦ pattern with counter i zero, q(*) ↦ both positive.
pub fn regime_frequency(tc: &TwoCounter, i: usize, region: usize, eps: f64) -> Result<PatternMap> {
    let st = &tc.projection(i).structure;
    let zone = st
        .zones
        .iter()
        .find(|z| z.regions.contains(&region))
        .ok_or_else(|| Error::Analysis("region belongs to no zone".into()))?;
    if zone.kind != ZoneKind::TypeIINeg {
        return Err(Error::Analysis("regime frequencies need a negative-trend type II zone".into()));
    }
    let h = crate::oc::zone_frequency(st, zone, eps)?;
    let mut out = PatternMap::new();
    for (q, v) in h.values.iter().enumerate() {
        for (pos, &x) in v.iter().enumerate() {
            if x > 0.0 {
                let mut mask = vec![true, true];
                mask[i - 1] = pos == 1;
                *out.entry(Pattern { state: q, mask }).or_default() += x;
            }
        }
    }
    Ok(out)
}

/// Aggregates a pattern map over original states.
pub fn project_patterns(tc: &TwoCounter, h: &PatternMap) -> PatternMap {
    let mut out = PatternMap::new();
    for (p, &x) in h {
        *out.entry(Pattern { state: tc.origin[p.state], mask: p.mask.clone() }).or_default() += x;
    }
    out
}

/// Pattern of a configuration in original-state terms.
pub fn original_pattern(tc: &TwoCounter, c: &Configuration) -> Pattern {
    let p = pattern_of(c);
    Pattern { state: tc.origin[p.state], mask: p.mask }
}

pub fn rat_is_positive(r: &Rat) -> bool {
    r.is_positive()
}

pub fn rat_to_u64(r: &Rat) -> Option<u64> {
    r.to_integer().to_u64()
}
