use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use pvass_core::chain::{build_underlying, solve_absorbing_exact, trend_report};
use pvass_core::demo;
use pvass_core::model::parse_pvass;
use pvass_core::numeric::rat;

type Q = BigRational;

fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Stationary law by Gauss-Jordan on the balance equations with the last
/// row replaced by Σπ = 1. Independent of the library solver.
fn stationary(p: &[Vec<Q>]) -> Vec<Q> {
    let n = p.len();
    let mut a: Vec<Vec<Q>> = (0..n)
        .map(|j| {
            let mut row: Vec<Q> = (0..n).map(|i| p[i][j].clone() - if i == j { Q::one() } else { Q::zero() }).collect();
            row.push(Q::zero());
            row
        })
        .collect();
    a[n - 1] = vec![Q::one(); n + 1];
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero()).expect("singular");
        a.swap(col, piv);
        let inv = Q::one() / a[col][col].clone();
        for x in a[col].iter_mut() {
            *x = x.clone() * inv.clone();
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in 0..=n {
                    let v = a[col][c].clone() * f.clone();
                    a[r][c] = a[r][c].clone() - v;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n].clone()).collect()
}

/// Two-regime transition matrix over (s, t1, t2, u1, u2), written out by hand.
fn two_regime_matrix() -> Vec<Vec<Q>> {
    let z = Q::zero;
    vec![
        vec![q(102, 122), q(10, 122), z(), q(10, 122), z()],
        vec![z(), z(), Q::one(), z(), z()],
        vec![Q::one(), z(), z(), z(), z()],
        vec![z(), z(), z(), z(), Q::one()],
        vec![Q::one(), z(), z(), z(), z()],
    ]
}

#[test]
fn two_regime_single_bscc() {
    let c = build_underlying(&demo::fig1());
    assert_eq!(c.bscc_count(), 1);
    assert_eq!(c.bsccs().next().unwrap().1.len(), 5);
}

#[test]
fn two_regime_invariant_distribution_matches_independent_solve() {
    let m = demo::fig1();
    let rep = trend_report(&m, &build_underlying(&m)).unwrap();
    assert_eq!(rep.len(), 1);
    let oracle = stationary(&two_regime_matrix());
    assert_eq!(oracle, vec![q(61, 81), q(5, 81), q(5, 81), q(5, 81), q(5, 81)]);
    for (k, &s) in rep[0].members.iter().enumerate() {
        assert_eq!(rep[0].mu[k], oracle[s], "state {}", m.states()[s]);
    }
}

#[test]
fn two_regime_trend_is_negative_in_both_components() {
    let m = demo::fig1();
    let rep = trend_report(&m, &build_underlying(&m)).unwrap();
    let mu = stationary(&two_regime_matrix());
    // change(s) = (10·(-1) + 1 - 100, same) / 122; t1, t2 add (1, 0); u1, u2 add (0, 1).
    let cs = q(-109, 122);
    let oracle1 = mu[0].clone() * cs.clone() + mu[1].clone() + mu[2].clone();
    let oracle2 = mu[0].clone() * cs + mu[3].clone() + mu[4].clone();
    assert_eq!(oracle1, q(-89, 162));
    assert_eq!(rep[0].trend, vec![oracle1, oracle2]);
}

#[test]
fn sink_family_has_one_bscc_per_sink() {
    for k in 1..=4 {
        let m = demo::remark(k);
        let c = build_underlying(&m);
        assert_eq!(c.bscc_count(), k);
        let mut singles: Vec<usize> = c.bsccs().map(|(_, s)| {
            assert_eq!(s.len(), 1);
            s[0]
        }).collect();
        singles.sort();
        assert_eq!(singles, (1..=k).collect::<Vec<_>>());
    }
}

#[test]
fn gamblers_ruin_absorption() {
    // Fair walk on 0..=4; x[i] = probability of reaching 4 from i.
    let h = rat(1, 2);
    let z = rat(0, 1);
    let a = vec![vec![z.clone(), h.clone(), z.clone()], vec![h.clone(), z.clone(), h.clone()], vec![z.clone(), h.clone(), z.clone()]];
    let c = vec![z.clone(), z.clone(), h.clone()];
    let x = solve_absorbing_exact(&a, &c).unwrap();
    assert_eq!(x, vec![rat(1, 4), rat(1, 2), rat(3, 4)]);
}

fn scaled_model(weights: &[u64], scale: u64) -> pvass_core::model::Pvass {
    let edges = [("a", "a", "[1]"), ("a", "b", "[-1]"), ("b", "a", "[0]"), ("b", "b", "[1]"), ("a", "c", "[0]"), ("c", "a", "[-1]")];
    let rules: Vec<String> = edges
        .iter()
        .zip(weights)
        .map(|((s, t, d), w)| format!(r#"{{"src":"{s}","delta":{d},"weight":{},"dst":"{t}"}}"#, w * scale))
        .collect();
    parse_pvass(&format!(r#"{{"states":["a","b","c"],"rules":[{}]}}"#, rules.join(","))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trend_is_invariant_under_weight_scaling(w in proptest::collection::vec(1u64..50, 6), k in 2u64..20) {
        let a = scaled_model(&w, 1);
        let b = scaled_model(&w, k);
        let ra = trend_report(&a, &build_underlying(&a)).unwrap();
        let rb = trend_report(&b, &build_underlying(&b)).unwrap();
        prop_assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert_eq!(&x.mu, &y.mu);
            prop_assert_eq!(&x.trend, &y.trend);
        }
    }

    #[test]
    fn invariant_distribution_is_stationary(w in proptest::collection::vec(1u64..50, 6)) {
        let m = scaled_model(&w, 1);
        let c = build_underlying(&m);
        for r in trend_report(&m, &c).unwrap() {
            let total: Q = r.mu.iter().cloned().sum();
            prop_assert_eq!(total, Q::one());
            for (j, &t) in r.members.iter().enumerate() {
                let inflow: Q = r.members.iter().enumerate().map(|(i, &s)| r.mu[i].clone() * c.prob(s, t)).sum();
                prop_assert_eq!(&inflow, &r.mu[j]);
            }
        }
    }
}
