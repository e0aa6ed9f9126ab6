//! The finite underlying chain of a pVASS: SCC structure, invariant
//! distributions, change vectors, trends and certified linear solving.

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::model::{Pvass, StateId};
use crate::numeric::{rat_from_ratio, rat_to_f64, solve_rational, Rat};

/// Systems up to this size are solved exactly when the input is rational.
pub const EXACT_SOLVE_CAP: usize = 200;

#[derive(Clone, Debug)]
pub struct UnderlyingChain {
    pub n: usize,
    /// Sparse rows; parallel rules are summed, targets ascending.
    pub rows: Vec<Vec<(StateId, Rat)>>,
    /// Each SCC sorted; SCCs ordered by least member.
    pub sccs: Vec<Vec<StateId>>,
    pub scc_of: Vec<usize>,
    pub is_bottom: Vec<bool>,
}

impl UnderlyingChain {
    pub fn bsccs(&self) -> impl Iterator<Item = (usize, &Vec<StateId>)> {
        self.sccs.iter().enumerate().filter(move |(i, _)| self.is_bottom[*i])
    }

    pub fn bscc_count(&self) -> usize {
        self.is_bottom.iter().filter(|&&b| b).count()
    }

    pub fn prob(&self, p: StateId, q: StateId) -> Rat {
        self.rows[p].iter().find(|(r, _)| *r == q).map_or_else(Rat::zero, |(_, x)| x.clone())
    }

    pub fn dense_f64(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (p, row) in self.rows.iter().enumerate() {
            for (q, x) in row {
                m[p][*q] = rat_to_f64(x);
            }
        }
        m
    }

    /// BSCC index of `p`, if `p` lies in a bottom component.
    pub fn bscc_of(&self, p: StateId) -> Option<usize> {
        let c = self.scc_of[p];
        self.is_bottom[c].then_some(c)
    }
}

pub fn build_underlying(m: &Pvass) -> UnderlyingChain {
    let n = m.num_states();
    let mut rows = Vec::with_capacity(n);
    for p in 0..n {
        let total = m.total_weight(p);
        let mut acc: std::collections::BTreeMap<StateId, num_bigint::BigUint> = Default::default();
        for &i in m.outgoing(p) {
            let r = &m.rules()[i];
            *acc.entry(r.dst).or_default() += &r.weight;
        }
        rows.push(acc.into_iter().map(|(q, w)| (q, rat_from_ratio(&w, &total))).collect::<Vec<_>>());
    }
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (p, row) in rows.iter().enumerate() {
        for (q, _) in row {
            g.add_edge(nodes[p], nodes[*q], ());
        }
    }
    let mut sccs: Vec<Vec<StateId>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<StateId> = c.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    sccs.sort_by_key(|c| c[0]);
    let mut scc_of = vec![0; n];
    for (i, c) in sccs.iter().enumerate() {
        for &p in c {
            scc_of[p] = i;
        }
    }
    let is_bottom = sccs
        .iter()
        .enumerate()
        .map(|(i, c)| c.iter().all(|&p| rows[p].iter().all(|(q, _)| scc_of[*q] == i)))
        .collect();
    UnderlyingChain { n, rows, sccs, scc_of, is_bottom }
}

/// Exact invariant distribution of BSCC `scc`, indexed like `c.sccs[scc]`.
pub fn invariant_distribution(c: &UnderlyingChain, scc: usize) -> Result<Vec<Rat>> {
    let members = &c.sccs[scc];
    let k = members.len();
    let pos = |p: StateId| members.binary_search(&p).ok();
    // Rows 0..k-1: balance equations for members 1..k; last row: normalisation.
    let mut a = vec![vec![Rat::zero(); k]; k];
    for (i, &p) in members.iter().enumerate() {
        for (q, x) in &c.rows[p] {
            let j = pos(*q).ok_or_else(|| Error::Analysis("invariant distribution of an open component".into()))?;
            if j > 0 {
                a[j - 1][i] += x;
            }
        }
        if i > 0 {
            a[i - 1][i] -= Rat::one();
        }
        a[k - 1][i] = Rat::one();
    }
    let mut b = vec![Rat::zero(); k];
    b[k - 1] = Rat::one();
    let mu = solve_rational(a, b).ok_or_else(|| Error::Analysis("singular balance system".into()))?;
    if mu.iter().any(|x| *x <= Rat::zero()) {
        return Err(Error::Analysis("invariant distribution not positive".into()));
    }
    Ok(mu)
}

/// Expected update at `p` over all rules of `p`, regardless of enabledness.
pub fn change(m: &Pvass, p: StateId) -> Vec<Rat> {
    let total = m.total_weight(p);
    let mut v = vec![Rat::zero(); m.dimension()];
    for &i in m.outgoing(p) {
        let r = &m.rules()[i];
        let x = rat_from_ratio(&r.weight, &total);
        for (j, &k) in r.delta.iter().enumerate() {
            if k != 0 {
                v[j] += &x * Rat::from_integer(k.into());
            }
        }
    }
    v
}

pub fn trend(m: &Pvass, c: &UnderlyingChain, scc: usize) -> Result<Vec<Rat>> {
    Ok(trend_report_for(m, c, scc)?.trend)
}

#[derive(Clone, Debug)]
pub struct TrendReport {
    pub scc: usize,
    pub members: Vec<StateId>,
    pub mu: Vec<Rat>,
    pub changes: Vec<Vec<Rat>>,
    pub trend: Vec<Rat>,
}

pub fn trend_report_for(m: &Pvass, c: &UnderlyingChain, scc: usize) -> Result<TrendReport> {
    let mu = invariant_distribution(c, scc)?;
    let members = c.sccs[scc].clone();
    let changes: Vec<Vec<Rat>> = members.iter().map(|&p| change(m, p)).collect();
    let mut t = vec![Rat::zero(); m.dimension()];
    for (x, ch) in mu.iter().zip(&changes) {
        for (tj, cj) in t.iter_mut().zip(ch) {
            *tj += x * cj;
        }
    }
    Ok(TrendReport { scc, members, mu, changes, trend: t })
}

/// One report per BSCC, in SCC order.
pub fn trend_report(m: &Pvass, c: &UnderlyingChain) -> Result<Vec<TrendReport>> {
    c.bsccs().map(|(i, _)| trend_report_for(m, c, i)).collect()
}

// ---------------------------------------------------------------------------
// Absorbing systems x = A x + C

fn check_substochastic(a: &[Vec<f64>]) -> Result<()> {
    for (i, row) in a.iter().enumerate() {
        if row.len() != a.len() {
            return Err(Error::Analysis("matrix is not square".into()));
        }
        let s: f64 = row.iter().sum();
        if row.iter().any(|&x| x < -1e-15 || !x.is_finite()) || s > 1.0 + 1e-9 {
            return Err(Error::Analysis(format!("row {i} is not substochastic (sum {s})")));
        }
    }
    Ok(())
}

pub fn solve_absorbing_exact(a: &[Vec<Rat>], c: &[Rat]) -> Result<Vec<Rat>> {
    let n = c.len();
    for (i, row) in a.iter().enumerate() {
        let s: Rat = row.iter().sum();
        if row.iter().any(|x| *x < Rat::zero()) || s > Rat::one() {
            return Err(Error::Analysis(format!("row {i} is not substochastic")));
        }
    }
    let mut m = vec![vec![Rat::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = -a[i][j].clone();
        }
        m[i][i] += Rat::one();
    }
    solve_rational(m, c.to_vec()).ok_or_else(|| Error::Analysis("I - A is singular".into()))
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    /// max_i ((I - A)^{-1} 1)_i, the infinity norm of the inverse.
    pub inv_norm: f64,
    pub residual: f64,
}

/// Solves `(I - A) x = C` in floating point with iterative refinement. The
/// residual is checked on every call.
pub fn solve_absorbing(a: &[Vec<f64>], c: &[f64], eps: f64) -> Result<Solution> {
    check_substochastic(a)?;
    let n = c.len();
    if n == 0 {
        return Ok(Solution { x: vec![], inv_norm: 0.0, residual: 0.0 });
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] -= a[i][j];
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    for i in 0..n {
        rhs[(i, 0)] = c[i];
        rhs[(i, 1)] = 1.0;
    }
    let (x, _) = solve_dense(&m, &rhs, eps, "absorbing system")?;
    let c_norm = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let r = &DVector::from_column_slice(c) - &m * x.column(0);
    let residual = r.amax();
    if !(residual <= eps * c_norm.max(1.0)) {
        return Err(Error::Certificate { what: "absorbing system".into(), residual });
    }
    let inv_norm = x.column(1).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(Solution { x: x.column(0).iter().copied().collect(), inv_norm, residual })
}

/// Dense LU solve of `m X = b` with three refinement rounds. Fails with a
/// certificate error when the scaled residual exceeds `eps`.
pub fn solve_dense(m: &DMatrix<f64>, b: &DMatrix<f64>, eps: f64, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let lu = m.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or_else(|| Error::Certificate { what: format!("{what}: singular matrix"), residual: f64::INFINITY })?;
    for _ in 0..3 {
        let r = b - m * &x;
        match lu.solve(&r) {
            Some(dx) => x += dx,
            None => break,
        }
    }
    let r = b - m * &x;
    let scale = b.amax().max(1.0);
    let residual = r.amax() / scale;
    if !(residual <= eps) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Certificate { what: what.into(), residual });
    }
    Ok((x, residual))
}

/// Rational fast path when the system is small, floating otherwise.
pub fn solve_absorbing_auto(a: &[Vec<Rat>], c: &[Rat], eps: f64) -> Result<Vec<f64>> {
    if c.len() <= EXACT_SOLVE_CAP {
        return Ok(solve_absorbing_exact(a, c)?.iter().map(rat_to_f64).collect());
    }
    let af: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(rat_to_f64).collect()).collect();
    let cf: Vec<f64> = c.iter().map(rat_to_f64).collect();
    Ok(solve_absorbing(&af, &cf, eps)?.x)
}
