use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use pvass_core::model::{parse_pvass, step_distribution, Configuration, Pattern};
use pvass_core::oc::{
    analyze_one_counter, bscc_info, classify_regions, ds_chain, reach_levels, region_reach_bound, structure_of,
    termination, zone_frequency, OcStructure, OneCounter, RegionKind, ZoneKind,
};

fn model(states: &[&str], rules: &[(&str, i64, u64, &str)]) -> pvass_core::model::Pvass {
    let rules: Vec<String> = rules
        .iter()
        .map(|(s, d, w, t)| format!(r#"{{"src":"{s}","delta":[{d}],"weight":{w},"dst":"{t}"}}"#))
        .collect();
    let states: Vec<String> = states.iter().map(|s| format!("\"{s}\"")).collect();
    parse_pvass(&format!(r#"{{"states":[{}],"rules":[{}]}}"#, states.join(","), rules.join(","))).unwrap()
}

fn remark(k: usize) -> pvass_core::model::Pvass {
    let mut states = vec!["p".to_string()];
    let mut rules = vec![("p".to_string(), -1, 1, "p".to_string())];
    for i in 1..=k {
        let q = format!("q{i}");
        states.push(q.clone());
        rules.push(("p".into(), -1, 1, q.clone()));
        rules.push((q.clone(), 0, 1, q));
    }
    let s: Vec<&str> = states.iter().map(|s| s.as_str()).collect();
    let r: Vec<(&str, i64, u64, &str)> = rules.iter().map(|(a, d, w, b)| (a.as_str(), *d, *w, b.as_str())).collect();
    model(&s, &r)
}

/// Exhaustive enumeration: push the exact distribution forward until all
/// mass sits in configurations whose pattern never changes again.
fn absorbing_pattern_oracle(m: &pvass_core::model::Pvass, start: Configuration, steps: usize) -> BTreeMap<Pattern, BigRational> {
    let mut dist: BTreeMap<Configuration, BigRational> = BTreeMap::from([(start, BigRational::one())]);
    for _ in 0..steps {
        let mut next: BTreeMap<Configuration, BigRational> = BTreeMap::new();
        for (c, p) in dist {
            for (d, q) in step_distribution(m, &c).unwrap() {
                *next.entry(d).or_insert_with(BigRational::zero) += &p * q;
            }
        }
        dist = next;
    }
    let mut out = BTreeMap::new();
    for (c, p) in dist {
        *out.entry(pvass_core::model::pattern_of(&c)).or_insert_with(BigRational::zero) += p;
    }
    out
}

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[test]
fn sink_family_pairs_match_enumeration() {
    let m = remark(2);
    let start = Configuration::new(0, vec![2]);
    let oracle = absorbing_pattern_oracle(&m, start.clone(), 6);
    let a = analyze_one_counter(&m, &start, 1e-4).unwrap();
    assert_eq!(a.structure.zones.len(), 5);
    assert_eq!(a.pairs.len(), 5);
    for pair in &a.pairs {
        let (q, val) = pair
            .h
            .values
            .iter()
            .enumerate()
            .flat_map(|(q, v)| [(Pattern { state: q, mask: vec![false] }, v[0]), (Pattern { state: q, mask: vec![true] }, v[1])])
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .map(|(p, v)| (p, v))
            .unwrap();
        assert!((val - 1.0).abs() < 1e-12, "H is not Dirac: {:?}", pair.h);
        let want = pvass_core::numeric::rat_to_f64(&oracle[&q]);
        assert!(((pair.p - want) / want).abs() < 1e-4, "{} vs {}", pair.p, want);
    }
    assert_eq!(oracle[&Pattern { state: 1, mask: vec![true] }], r(1, 3));
    assert_eq!(oracle[&Pattern { state: 0, mask: vec![false] }], r(1, 9));
}

#[test]
fn trivial_model_has_two_zones() {
    let m = model(&["p"], &[("p", 0, 1, "p")]);
    let a = analyze_one_counter(&m, &Configuration::new(0, vec![0]), 1e-6).unwrap();
    assert_eq!(a.structure.zones.len(), 2);
    assert!((a.pairs[0].p - 1.0).abs() < 1e-12);
    assert!((a.pairs[0].h.values[0][0] - 1.0).abs() < 1e-12);
    assert!(a.pairs[1].vacuous);
}

fn lfp_by_value_iteration(up: f64, down: f64) -> f64 {
    let (pu, pd) = (up / (up + down), down / (up + down));
    let mut x = 0.0;
    for _ in 0..100_000 {
        x = pd + pu * x * x;
    }
    x
}

#[test]
fn termination_of_biased_walks() {
    let up = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 3, "p"), ("p", -1, 1, "p")])).unwrap();
    let t = termination(&up, 1e-12).unwrap();
    let oracle = lfp_by_value_iteration(3.0, 1.0);
    assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
    assert!((t.g()[0][0] - oracle).abs() < 1e-9);
    assert!((t.up()[0] - 2.0 / 3.0).abs() < 1e-9);
    assert!(t.up_positive[0]);

    let down = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 1, "p"), ("p", -1, 3, "p")])).unwrap();
    let t = termination(&down, 1e-12).unwrap();
    assert_eq!(t.lo[0][0], 1.0);
    assert_eq!(t.hi[0][0], 1.0);
    assert_eq!(t.up_hi[0], 0.0);

    let only_up = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 1, "p")])).unwrap();
    let t = termination(&only_up, 1e-12).unwrap();
    assert_eq!(t.hi[0][0], 0.0);
    assert_eq!(t.up_lo[0], 1.0);
}

#[test]
fn balanced_walk_terminates_surely() {
    let oc = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 1, "p"), ("p", -1, 1, "p")])).unwrap();
    let t = termination(&oc, 1e-12).unwrap();
    assert_eq!(t.lo[0][0], 1.0);
    assert!(!t.up_positive[0]);
}

/// Stationary probability of level 0 for the walk reflected at 0, by a
/// truncated finite chain.
fn reflected_walk_zero_frequency(up: f64, down: f64) -> f64 {
    let (pu, pd) = (up / (up + down), down / (up + down));
    let n = 400;
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    pi[1] = pi[0] / pd;
    for k in 1..n - 1 {
        pi[k + 1] = pi[k] * pu / pd;
    }
    let s: f64 = pi.iter().sum();
    pi[0] / s
}

#[test]
fn regenerative_chain_of_down_biased_walk() {
    let m = model(&["p"], &[("p", -1, 3, "p"), ("p", 1, 1, "p")]);
    let st = OcStructure::new(OneCounter::from_pvass(&m).unwrap(), 1e-12).unwrap();
    assert_eq!(st.zones.len(), 1);
    assert_eq!(st.zones[0].kind, ZoneKind::TypeIINeg);
    let ds = ds_chain(&st.oc, &st.bsccs[0], 0, &st.term.g_matrix(pvass_core::oc::Bound::Mid)).unwrap();
    assert!((ds.moments.len[(0, 0)] - 2.0).abs() < 1e-9);
    assert!((ds.moments.visits[0][(0, 0)] - 2.0).abs() < 1e-9);
    assert!((ds.expected_len - 1.5).abs() < 1e-9);
    let h = zone_frequency(&st, &st.zones[0], 1e-3).unwrap();
    let oracle = reflected_walk_zero_frequency(1.0, 3.0);
    assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
    assert!((h.values[0][0] - oracle).abs() < 1e-9);
    assert!((h.values[0][1] - (1.0 - oracle)).abs() < 1e-9);
}

#[test]
fn down_only_walk_has_unit_excursions() {
    let single = model(&["p"], &[("p", -1, 1, "p")]);
    let (_, st) = structure_of(&single, 1e-12).unwrap();
    let g = st.term.g_matrix(pvass_core::oc::Bound::Mid);
    let mom = pvass_core::oc::excursion_moments(&st.oc, &[0], &g).unwrap();
    assert!((mom.len[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn reach_levels_examples() {
    let up = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 1, "p")])).unwrap();
    let l = reach_levels(&up, 0);
    assert!((0..100).all(|i| l.contains(0, i)));
    assert_eq!(l.period, Some(1));
    let both = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 5, "p"), ("p", -1, 2, "p")])).unwrap();
    let l = reach_levels(&both, 0);
    assert!((0..100).all(|i| l.contains(0, i)));
    assert_eq!(l.period, Some(1));
}

#[test]
fn region_examples() {
    let stuck = OneCounter::from_pvass(&model(&["p"], &[("p", -1, 1, "p")])).unwrap();
    let (chain, b) = bscc_info(&stuck).unwrap();
    let regs = classify_regions(&stuck, &b, &chain).unwrap();
    // p(k) for k ≥ 1 only feeds the type I region {p(0)}: an infinite D(S).
    assert_eq!(regs.len(), 2);
    assert_eq!(regs[0].kind, RegionKind::I);
    assert_eq!(regs[0].finite_members(), vec![(0, 0)]);
    assert_eq!(regs[1].kind, RegionKind::IV);
    assert!((1..500).all(|k| regs[1].contains(0, k)));
    assert_eq!(pvass_core::oc::build_zones(&regs, &b).len(), 1);

    let walk = OneCounter::from_pvass(&model(&["p"], &[("p", 1, 1, "p"), ("p", -1, 1, "p")])).unwrap();
    let (chain, b) = bscc_info(&walk).unwrap();
    let regs = classify_regions(&walk, &b, &chain).unwrap();
    assert_eq!(regs.len(), 1);
    assert_eq!(regs[0].kind, RegionKind::II);
    assert!((0..5000).all(|k| regs[0].contains(0, k)));

    let m = remark(2);
    let (_, st) = structure_of(&m, 1e-12).unwrap();
    let kinds: Vec<RegionKind> = st.regions.iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![RegionKind::I, RegionKind::I, RegionKind::I, RegionKind::III, RegionKind::III]);
    assert!(st.regions.len() <= 3 + 2);
}

#[test]
fn reach_bound_on_sink_family() {
    let (_, st) = structure_of(&remark(2), 1e-12).unwrap();
    let b = region_reach_bound(&st);
    assert!(b.holds());
    assert!(b.max_distance <= 5 || b.max_distance <= b.bound);
}

#[test]
fn start_inside_type_one_region_is_certain() {
    let m = model(&["p", "q"], &[("p", 1, 1, "q"), ("q", -1, 1, "p"), ("q", 0, 1, "q")]);
    let a = analyze_one_counter(&m, &Configuration::new(0, vec![0]), 1e-6).unwrap();
    assert!((a.pairs[0].p - 1.0).abs() < 1e-12);
    assert_eq!(a.pairs[0].kind, ZoneKind::TypeI);
}

