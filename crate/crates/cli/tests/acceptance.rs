//! Acceptance harness: one line `criterion N: PASS|FAIL` per criterion with
//! the measured values underneath. Failures are reported, not hidden; set
//! `PVASS_ACCEPTANCE_STRICT=1` to turn them into a nonzero exit.

#[path = "../../core/tests/support/grid_oracle.rs"]
mod grid_oracle;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use clap::Parser;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use pvass_cli::{execute, Cli, Report};
use pvass_core::chain::{build_underlying, trend_report};
use pvass_core::demo;
use pvass_core::model::{parse_pvass, pattern_of, step_distribution, Configuration, Pattern, Pvass};
use pvass_core::oc::{analyze_one_counter, region_reach_bound, termination, OcStructure, OneCounter, RegionKind};
use pvass_core::sim::{run_rng, sample_run, tail_check, Sampler};
use pvass_core::tc::{self, TwoCounter};
use serde_json::Value;

type Q = BigRational;

struct Outcome {
    pass: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, notes: Vec::new() }
    }

    fn check(&mut self, ok: bool, note: impl Into<String>) {
        let note = note.into();
        self.notes.push(format!("{} {note}", if ok { "ok  " } else { "FAIL" }));
        self.pass &= ok;
    }

    fn note(&mut self, note: impl Into<String>) {
        self.notes.push(format!("     {}", note.into()));
    }

    fn within(&mut self, took: Duration, limit: Duration) {
        self.check(took <= limit, format!("runtime {:.2}s (limit {:.0}s)", took.as_secs_f64(), limit.as_secs_f64()));
    }
}

fn cli(args: &[&str]) -> Report {
    execute(&Cli::try_parse_from(std::iter::once("pvass").chain(args.iter().copied())).unwrap()).0
}

fn f(v: &Value) -> f64 {
    v.as_str().and_then(|s| s.parse().ok()).unwrap_or(f64::NAN)
}

fn model(dim: usize, rules: &[(&str, &[i64], u64, &str)]) -> Pvass {
    let mut states: Vec<&str> = Vec::new();
    for (s, _, _, t) in rules {
        for x in [s, t] {
            if !states.contains(x) {
                states.push(x);
            }
        }
    }
    let rules: Vec<String> = rules
        .iter()
        .map(|(s, d, w, t)| {
            assert_eq!(d.len(), dim);
            format!(r#"{{"src":"{s}","delta":{d:?},"weight":{w},"dst":"{t}"}}"#)
        })
        .collect();
    let states: Vec<String> = states.iter().map(|s| format!("\"{s}\"")).collect();
    parse_pvass(&format!(r#"{{"states":[{}],"rules":[{}]}}"#, states.join(","), rules.join(","))).unwrap()
}

// ---------------------------------------------------------------------------

fn two_regime_clusters() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let r = cli(&["demo", "fig1", "--runs", "2000", "--horizon", "200000"]);
    let took = t.elapsed();
    o.check(r.status == "ok", format!("status {}", r.status));
    let clusters = r.results["simulation"]["clusters"].as_array().cloned().unwrap_or_default();
    o.check(clusters.len() == 2, format!("{} clusters", clusters.len()));
    for c in &clusters {
        let mass = f(&c["mass"]);
        let dom = f(&c["dominance"]);
        o.check((mass - 0.5).abs() <= 0.05, format!("mass {mass:.4} within 0.5 ± 0.05"));
        o.check(dom >= 0.3, format!("zero-pattern dominance {dom:.4} >= 0.3 (dispersion {})", c["dispersion"]));
    }
    o.note(format!("workers: {}", rayon::current_num_threads()));
    // The stated budget assumes 8 workers; scale it to the workers available.
    let scale = 8.0 / rayon::current_num_threads().min(8) as f64;
    o.within(took, Duration::from_secs_f64(120.0 * scale));
    o
}

/// Exact pushforward of the start distribution until the pattern of every
/// configuration is absorbing.
fn enumerate_patterns(m: &Pvass, start: Configuration, steps: usize) -> BTreeMap<Pattern, Q> {
    let mut dist: BTreeMap<Configuration, Q> = BTreeMap::from([(start, Q::one())]);
    for _ in 0..steps {
        let mut next: BTreeMap<Configuration, Q> = BTreeMap::new();
        for (c, p) in dist {
            for (d, q) in step_distribution(m, &c).unwrap() {
                *next.entry(d).or_insert_with(Q::zero) += &p * q;
            }
        }
        dist = next;
    }
    let mut out = BTreeMap::new();
    for (c, p) in dist {
        *out.entry(pattern_of(&c)).or_insert_with(Q::zero) += p;
    }
    out
}

fn q_to_f64(x: &Q) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap()
}

fn sink_family_pairs() -> Outcome {
    let mut o = Outcome::new();
    let m = demo::remark(2);
    let start = Configuration::new(0, vec![2]);
    let oracle = enumerate_patterns(&m, start.clone(), 8);
    let t = Instant::now();
    let a = analyze_one_counter(&m, &start, 1e-4);
    let took = t.elapsed();
    let Ok(a) = a else {
        o.check(false, format!("analysis failed: {:?}", a.err()));
        return o;
    };
    o.check(a.structure.zones.len() == 2 * m.num_states() - 1, format!("{} zones, 2|Q|-1 = 5", a.structure.zones.len()));
    o.check(a.pairs.len() == 5, format!("{} pairs", a.pairs.len()));
    let mut seen = Vec::new();
    for p in &a.pairs {
        let (pat, top) = p
            .h
            .values
            .iter()
            .enumerate()
            .flat_map(|(q, v)| [(Pattern { state: q, mask: vec![false] }, v[0]), (Pattern { state: q, mask: vec![true] }, v[1])])
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        let want = oracle.get(&pat).map(q_to_f64).unwrap_or(0.0);
        let rel = ((p.p - want) / want).abs();
        o.check((top - 1.0).abs() < 1e-9 && rel <= 1e-4, format!("{}: P {:.10} vs {want:.10} (rel {rel:.1e}), H Dirac", m.pattern_name(&pat), p.p));
        seen.push(m.pattern_name(&pat));
    }
    seen.sort();
    o.check(seen == ["p(0)", "q1(*)", "q1(0)", "q2(*)", "q2(0)"], format!("Dirac patterns {seen:?}"));
    o.within(took, Duration::from_secs(1));
    o
}

fn walk(up: u64, down: u64) -> Pvass {
    model(1, &[("p", &[1], up, "p"), ("p", &[-1], down, "p")])
}

fn termination_values() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let up = termination(&OneCounter::from_pvass(&walk(3, 1)).unwrap(), 1e-12).unwrap();
    let down = termination(&OneCounter::from_pvass(&walk(1, 3)).unwrap(), 1e-12).unwrap();
    let took = t.elapsed();
    // Value iteration of x = 1/4 + 3/4·x² from 0 converges to the least root 1/3.
    let mut x = 0.0f64;
    for _ in 0..200_000 {
        x = 0.25 + 0.75 * x * x;
    }
    let got = 0.5 * (up.lo[0][0] + up.hi[0][0]);
    o.check((got - x).abs() <= 1e-9 && (got - 1.0 / 3.0).abs() <= 1e-9, format!("[p↓p] = {got:.12} vs iteration {x:.12}"));
    o.check(
        down.lo[0][0] == 1.0 && down.hi[0][0] == 1.0 && down.certified,
        format!("down-biased [p↓p] in [{}, {}], certified {}", down.lo[0][0], down.hi[0][0], down.certified),
    );
    o.within(took, Duration::from_secs(1));
    o
}

fn regeneration() -> Outcome {
    let mut o = Outcome::new();
    let m = walk(1, 3);
    let t = Instant::now();
    let a = analyze_one_counter(&m, &Configuration::new(0, vec![0]), 1e-3).unwrap();
    let h = &a.pairs[0].h.values[0];
    // Reflected walk: π(1) = π(0)/(3/4), π(k+1) = π(k)/3, so π(0) = 1/3.
    let (mut pi, mut s) = (vec![1.0, 4.0 / 3.0], 0.0);
    for k in 1..200 {
        let next = pi[k] / 3.0;
        pi.push(next);
    }
    s += pi.iter().sum::<f64>();
    let oracle = pi[0] / s;
    o.note("target H = (1/3, 2/3), the regenerative value (see README)");
    o.check((h[0] - oracle).abs() <= 1e-3 && (h[1] - (1.0 - oracle)).abs() <= 1e-3, format!("H = ({:.6}, {:.6}) vs oracle ({oracle:.6}, {:.6})", h[0], h[1], 1.0 - oracle));
    let s = Sampler::new(&m);
    let run = sample_run(&s, &Configuration::new(0, vec![0]), 1_000_000, 7, 0, &[1_000_000], 1).unwrap();
    let emp = run.terminal()[s.pattern_index(&Configuration::new(0, vec![0]))];
    o.check((emp - h[0]).abs() <= 0.01, format!("simulated H(p(0)) = {emp:.4} over 10^6 steps"));
    o.within(t.elapsed(), Duration::from_secs(10));
    o
}

fn region_oracle() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let (mut mismatches, mut reach_violations) = (0, 0);
    for seed in 0..200u64 {
        let m = grid_oracle::random_model(seed, 4);
        let st = OcStructure::new(OneCounter::from_pvass(&m).unwrap(), 1e-6).unwrap();
        let mut ours: Vec<grid_oracle::OracleRegion> = st
            .regions
            .iter()
            .map(|r| grid_oracle::OracleRegion {
                kind: r.kind.name(),
                members: (0..=grid_oracle::CHECK)
                    .flat_map(|k| (0..m.num_states()).map(move |q| (q, k)))
                    .filter(|&(q, k)| r.contains(q, k))
                    .collect(),
            })
            .collect();
        ours.sort();
        if ours != grid_oracle::regions(&m) {
            mismatches += 1;
        }
        if !region_reach_bound(&st).holds() {
            reach_violations += 1;
        }
    }
    o.check(mismatches == 0, format!("{mismatches} mismatches on 200 random models (counter cap {})", grid_oracle::CAP));
    o.check(reach_violations == 0, format!("{reach_violations} reach-bound violations (11|Q|^4)"));
    o.within(t.elapsed(), Duration::from_secs(300));
    o
}

/// Stationary law by Gauss-Jordan on πP = π, Σπ = 1.
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
        let piv = (col..n).find(|&r| !a[r][col].is_zero()).unwrap();
        a.swap(col, piv);
        let inv = Q::one() / a[col][col].clone();
        for x in a[col].iter_mut() {
            *x = &*x * &inv;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let fac = a[r][col].clone();
                for c in 0..=n {
                    let v = &a[col][c] * &fac;
                    a[r][c] -= v;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n].clone()).collect()
}

fn trend_exactness() -> Outcome {
    let mut o = Outcome::new();
    let m = demo::fig1();
    let c = build_underlying(&m);
    let rep = trend_report(&m, &c).unwrap();
    // Oracle from the model's own rule list, summed per state pair.
    let n = m.num_states();
    let mut p = vec![vec![Q::zero(); n]; n];
    let mut drift = vec![vec![Q::zero(); 2]; n];
    for q in 0..n {
        let total = BigInt::from(m.total_weight(q));
        for &i in m.outgoing(q) {
            let r = &m.rules()[i];
            let w = Q::new(BigInt::from(r.weight.clone()), total.clone());
            p[q][r.dst] += &w;
            for k in 0..2 {
                drift[q][k] += &w * Q::from_integer(BigInt::from(r.delta[k]));
            }
        }
    }
    let mu = stationary(&p);
    let t: Vec<Q> = (0..2).map(|k| (0..n).map(|q| &mu[q] * &drift[q][k]).sum()).collect();
    let r = |a: i64, b: i64| Q::new(BigInt::from(a), BigInt::from(b));
    o.check(rep.len() == 1, format!("{} BSCC", rep.len()));
    let mut ours = vec![Q::zero(); n];
    for (k, &q) in rep[0].members.iter().enumerate() {
        ours[q] = rep[0].mu[k].clone();
    }
    o.check(ours == mu, format!("mu = {:?}", ours.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
    o.check(mu == vec![r(61, 81), r(5, 81), r(5, 81), r(5, 81), r(5, 81)], "oracle mu = (61/81, 5/81, 5/81, 5/81, 5/81)");
    o.check(rep[0].trend == t && t == vec![r(-89, 162), r(-89, 162)], format!("trend = ({}, {})", rep[0].trend[0], rep[0].trend[1]));
    o.check(t.iter().all(|x| x < &Q::zero()), "both components negative");
    o
}

fn crafted_t5() -> Pvass {
    model(2, &[("p", &[0, 1], 100, "p"), ("p", &[0, -1], 200, "p"), ("p", &[-1, 0], 1, "p")])
}

fn tail_domination() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let tc = TwoCounter::new(&crafted_t5(), tc::PROJECTION_TOL).unwrap();
    let reg = tc.projection(2).regions_of(RegionKind::II)[0];
    let mart = tc::build_martingale(&tc, reg, tc::DEFAULT_THETA).unwrap();
    let t5 = tc::tail_constants(&mart, tc::Theorem::T5).unwrap();
    o.note(format!("a1 = {:e}, b1 = {}, z1 = {}", t5.a, t5.b, t5.z));
    let chk = tail_check(&tc.model, mart.states[0], &t5, 10_000, &[1, 10, 100], 50, 17, 100_000_000, 0.99).unwrap();
    o.check(chk.pass(), format!("{} rows, {} violations", chk.rows.len(), chk.violations.len()));
    o.check(chk.truncated == 0, format!("{} truncated runs", chk.truncated));
    let flat = chk.spread.iter().all(|(_, s, w)| s < w);
    let worst = chk.spread.iter().map(|(_, s, w)| s / w).fold(0.0, f64::max);
    o.check(flat && chk.spread.len() == 50, format!("n-independence: max spread/CI width = {worst:.3}"));
    let margin = chk.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    o.note(format!("smallest margin curve - upper = {margin:e}"));
    o.within(t.elapsed(), Duration::from_secs(180));
    o
}

fn martingale_on(o: &mut Outcome, name: &str, m: &Pvass, x1: u64, seed: u64) {
    let tc = TwoCounter::new(m, tc::PROJECTION_TOL).unwrap();
    let reg = tc.projection(2).regions_of(RegionKind::II)[0];
    let mart = tc::build_martingale(&tc, reg, tc::DEFAULT_THETA).unwrap();
    let s = Sampler::new(&tc.model);
    let mut c = Configuration::new(mart.states[0], vec![x1, 0]);
    let mut rng = run_rng(seed, 0);
    let mut prev = mart.value(c.counters[0], c.counters[1], c.state, 0);
    let (mut sum, mut sq, mut worst, mut steps) = (0.0, 0.0, 0.0f64, 0u64);
    while steps < 100_000 && c.counters[0] > 0 {
        s.step(&mut c, &mut rng).unwrap();
        steps += 1;
        let cur = mart.value(c.counters[0], c.counters[1], c.state, steps);
        let d = cur - prev;
        prev = cur;
        sum += d;
        sq += d * d;
        worst = worst.max(d.abs());
    }
    let n = steps as f64;
    let mean = sum / n;
    let var = (sq - n * mean * mean) / (n - 1.0);
    let half = 2.576 * (var / n).sqrt();
    o.check(steps == 100_000, format!("{name}: {steps} steps before T"));
    o.check(mean.abs() <= half, format!("{name}: mean increment {mean:.3e}, 99% CI half-width {half:.3e}"));
    o.check(worst <= mart.b + 1e-9, format!("{name}: max |Δm| = {worst:.4} <= B = {:.4}", mart.b));
    let mut g_ok = true;
    for n in 1..=100u64 {
        for &q in &mart.states {
            g_ok &= mart.weight(n, q).abs() <= mart.c_g * n as f64 + 1e-9;
        }
    }
    o.check(g_ok, format!("{name}: |g(n)| <= C_g·n for n <= 100 (C_g = {:.4}, table {} levels)", mart.c_g, mart.table.len()));
}

fn martingale() -> Outcome {
    let mut o = Outcome::new();
    martingale_on(&mut o, "crafted", &crafted_t5(), 10_000, 31);
    martingale_on(&mut o, "two-regime", &demo::fig1(), 1_000_000, 32);
    o
}

fn oscillation() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let r = cli(&["demo", "three-counter"]);
    let took = t.elapsed();
    o.check(r.status == "ok", format!("status {}", r.status));
    for c in r.results["configurations"].as_array().cloned().unwrap_or_default() {
        let frac = f(&c["fraction_gap_above_0.2"]);
        let med = f(&c["median_gap"]);
        let name = c["model"].as_str().unwrap_or("?").to_string();
        if c["contracting"] == Value::Bool(true) {
            o.check(med < 0.05, format!("{name}: median gap {med:.4} < 0.05"));
        } else {
            o.check(frac >= 0.9, format!("{name}: {:.1}% of runs with gap > 0.2 (median {med:.4})", 100.0 * frac));
        }
    }
    o.within(took, Duration::from_secs(300));
    o
}

fn stability_cases() -> Outcome {
    let mut o = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    let fig1 = dir.path().join("fig1.json");
    std::fs::write(&fig1, demo::FIG1_PVASS).unwrap();
    let r = cli(&["tc", fig1.to_str().unwrap()]);
    let verdict = r.results["stability"]["verdict"].clone();
    o.check(verdict == "stable", format!("two-regime model verdict {verdict}"));
    let labels: Vec<String> =
        r.results["cases"].as_array().unwrap().iter().map(|c| c["label"].as_str().unwrap_or("error").to_string()).collect();
    // Both trend components negative and both mean payoffs positive: each
    // counter can escape while the other regenerates.
    o.check(labels == ["II/II double escape"], format!("cases {labels:?}"));
    let zero = dir.path().join("zero.json");
    std::fs::write(
        &zero,
        r#"{"states":["p"],"rules":[{"src":"p","delta":[1,1],"weight":1,"dst":"p"},{"src":"p","delta":[-1,-1],"weight":1,"dst":"p"}]}"#,
    )
    .unwrap();
    let r = cli(&["tc", zero.to_str().unwrap()]);
    let w = r.results["stability"]["witnesses"].clone();
    o.check(r.results["stability"]["verdict"] == "unstable" && !w.as_array().unwrap().is_empty(), format!("zero-trend model unstable, witness {w}"));
    o
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "two-regime limit clusters", two_regime_clusters),
        (2, "one-counter pairs on the sink family", sink_family_pairs),
        (3, "termination probabilities", termination_values),
        (4, "regeneration frequencies", regeneration),
        (5, "region oracle equivalence", region_oracle),
        (6, "trend exactness", trend_exactness),
        (7, "height tail domination", tail_domination),
        (8, "martingale properties", martingale),
        (9, "three-counter oscillation", oscillation),
        (10, "stability and case classification", stability_cases),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("PVASS_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        println!("criterion {n}: {} ({name}, {:.1}s)", if out.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        for line in &out.notes {
            println!("    {line}");
        }
        if !out.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() && std::env::var("PVASS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
