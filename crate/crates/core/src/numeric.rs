//! Exact rational and certified floating-point helpers shared by the analyses.

use nalgebra::{DMatrix, DVector};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_from_ratio(num: &BigUint, den: &BigUint) -> Rat {
    Rat::new(BigInt::from(num.clone()), BigInt::from(den.clone()))
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    if let Some(v) = r.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    // Huge numerator and denominator: scale both down before dividing.
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = (nb.max(db) - 900).max(0) as usize;
    let n = (r.numer() >> shift).to_f64().unwrap_or(0.0);
    let d = (r.denom() >> shift).to_f64().unwrap_or(1.0);
    if d == 0.0 {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else {
        n / d
    }
}

pub fn biguint_to_f64(w: &BigUint) -> f64 {
    w.to_f64().unwrap_or(f64::INFINITY)
}

/// Canonical text form of a rational: `num/den`, or `num` for integers.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(Rat::new(n, d))
            }
        }
        None => Some(Rat::from_integer(s.parse().ok()?)),
    }
}

pub fn sign_of(r: &Rat) -> i8 {
    if r.is_positive() {
        1
    } else if r.is_negative() {
        -1
    } else {
        0
    }
}

/// Solves `a x = b` by Gaussian elimination over the rationals.
/// Returns `None` when `a` is singular.
pub fn solve_rational(mut a: Vec<Vec<Rat>>, mut b: Vec<Rat>) -> Option<Vec<Rat>> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for k in col..n {
            a[col][k] = &a[col][k] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for k in col..n {
                let t = &f * &a[col][k];
                a[r][k] -= t;
            }
            let t = &f * &b[col];
            b[r] -= t;
        }
    }
    Some(b)
}

/// Stationary distribution of an irreducible stochastic matrix given densely
/// in floating point. The balance system has one equation replaced by the
/// normalisation constraint.
pub fn stationary_f64(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return Some(vec![]);
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // row j of the transposed system: sum_i mu_i (P_ij - delta_ij) = 0
            m[(j, i)] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..n {
        m[(n - 1, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = m.clone().lu();
    let mut x = lu.solve(&rhs)?;
    for _ in 0..2 {
        let r = &rhs - &m * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    Some(x.iter().copied().collect())
}

/// Closed interval of reals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan());
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn hull(a: f64, b: f64) -> Self {
        Interval { lo: a.min(b), hi: a.max(b) }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn widen(&self, e: f64) -> Self {
        Interval { lo: self.lo - e, hi: self.hi + e }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Three-valued sign: `Some(±1)` when the interval clears `(-theta, theta)`.
    pub fn sign(&self, theta: f64) -> Option<i8> {
        if self.lo >= theta {
            Some(1)
        } else if self.hi <= -theta {
            Some(-1)
        } else {
            None
        }
    }
}

/// log10 of a positive quantity that may not fit in an f64.
pub fn log10_pow(base: f64, exp: f64) -> f64 {
    exp * base.log10()
}
