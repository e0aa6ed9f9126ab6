//! Subcommand bodies. Each fills the results and ledger of a report and
//! returns the error, if any, that decides the exit status.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use pvass_core::chain::{build_underlying, trend_report};
use pvass_core::model::{normalize, parse_pvass, parse_spn, spn_to_pvass, Configuration, Pattern, Pvass, SpnOptions};
use pvass_core::oc::{analyze_one_counter, LevelSet, OcAnalysis, OcStructure, RegionKind, ZoneKind};
use pvass_core::sim::{self, cluster_vectors, ClusterReport, RunStats, Sampler};
use pvass_core::tc::{self, ConfigSet, TwoCounter, Verdict};
use pvass_core::{Error, Result};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::report::{num, numv, ratv, LedgerEntry, Report};

pub fn progress(msg: &str) {
    eprintln!("[pvass] {msg}");
}

pub fn load_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Model(format!("cannot read {}: {e}", path.display())))
}

/// A model file is either a pVASS or a net (recognised by `places`).
pub fn load_model(text: &str) -> Result<Pvass> {
    let is_net = serde_json::from_str::<Value>(text).ok().is_some_and(|v| v.get("places").is_some());
    if is_net {
        spn_to_pvass(&parse_spn(text)?, &SpnOptions::default())
    } else {
        parse_pvass(text)
    }
}

fn names(m: &Pvass, states: &[usize]) -> Vec<String> {
    states.iter().map(|&q| m.states()[q].clone()).collect()
}

fn ledger(r: &mut Report, quantity: &str, requested: f64, achieved: f64) {
    r.ledger.push(LedgerEntry { quantity: quantity.into(), requested: num(requested), achieved: num(achieved) });
}

// ---------------------------------------------------------------------------
// validate / translate-spn / chain

pub fn validate(r: &mut Report, m: &Pvass) -> Result<()> {
    let n = normalize(m);
    let c = build_underlying(m);
    r.results = json!({
        "dimension": m.dimension(),
        "states": m.num_states(),
        "rules": m.rules().len(),
        "one_rule_per_pair": m.satisfies_assumption(),
        "normalized_states": n.model.num_states(),
        "sccs": c.sccs.len(),
        "bsccs": c.bscc_count(),
    });
    Ok(())
}

pub fn translate_spn(r: &mut Report, text: &str, opts: &SpnOptions) -> Result<Pvass> {
    let net = parse_spn(text)?;
    let m = spn_to_pvass(&net, opts)?;
    r.results = json!({
        "places": net.places.len(),
        "transitions": net.transitions.len(),
        "model": serde_json::to_value(m.to_document()).expect("document serialises"),
    });
    Ok(m)
}

pub fn chain_results(m: &Pvass) -> Result<Value> {
    let c = build_underlying(m);
    let sccs: Vec<Value> =
        c.sccs.iter().enumerate().map(|(i, s)| json!({"members": names(m, s), "bottom": c.is_bottom[i]})).collect();
    let bsccs: Vec<Value> = trend_report(m, &c)?
        .iter()
        .map(|t| {
            json!({
                "scc": t.scc,
                "members": names(m, &t.members),
                "mu": t.mu.iter().map(ratv).collect::<Vec<_>>(),
                "changes": t.changes.iter().map(|ch| ch.iter().map(ratv).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "trend": t.trend.iter().map(ratv).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({"states": m.states(), "sccs": sccs, "bsccs": bsccs}))
}

// ---------------------------------------------------------------------------
// oc

/// Runs of identical levels, so a level set with a large grid stays small.
fn level_encoding(ls: &LevelSet, names: &[String]) -> Value {
    let mut runs = Vec::new();
    let mut k = 0;
    while k < ls.rows.len() {
        let mut j = k;
        while j + 1 < ls.rows.len() && ls.rows[j + 1] == ls.rows[k] {
            j += 1;
        }
        let members: Vec<&str> =
            ls.rows[k].iter().enumerate().filter(|(_, &b)| b).map(|(q, _)| names[q].as_str()).collect();
        if !members.is_empty() {
            runs.push(json!({"from": k, "to": j, "states": members}));
        }
        k = j + 1;
    }
    json!({"levels": runs, "cap": ls.cap(), "period": ls.period})
}

pub fn structure_json(st: &OcStructure) -> Value {
    let names = &st.oc.names;
    let regions: Vec<Value> = st
        .regions
        .iter()
        .enumerate()
        .map(|(i, reg)| {
            json!({
                "index": i,
                "kind": reg.kind.name(),
                "label": st.region_label(i),
                "anchors": reg.anchors.iter().map(|&q| names[q].clone()).collect::<Vec<_>>(),
                "bscc": reg.bscc,
                "members": level_encoding(&reg.members, names),
            })
        })
        .collect();
    let zones: Vec<Value> = st
        .zones
        .iter()
        .map(|z| json!({"kind": z.kind.name(), "label": st.zone_label(z), "regions": z.regions}))
        .collect();
    let bsccs: Vec<Value> = st
        .bsccs
        .iter()
        .map(|b| {
            json!({
                "members": b.members.iter().map(|&q| names[q].clone()).collect::<Vec<_>>(),
                "trend": ratv(&b.trend),
                "label_trend": ratv(&b.label_trend),
            })
        })
        .collect();
    json!({"states": names, "bsccs": bsccs, "regions": regions, "zones": zones})
}

fn freq_json(m: &Pvass, values: &[[f64; 2]]) -> Value {
    let mut out = Map::new();
    for (q, v) in values.iter().enumerate() {
        for (pos, &x) in v.iter().enumerate() {
            if x != 0.0 {
                let pat = Pattern { state: q, mask: vec![pos == 1] };
                out.insert(m.pattern_name(&pat), numv(x));
            }
        }
    }
    Value::Object(out)
}

pub fn oc_results(r: &mut Report, m: &Pvass, a: &OcAnalysis, eps: f64) -> Result<()> {
    let pairs: Vec<Value> = a
        .pairs
        .iter()
        .map(|p| {
            json!({
                "zone": p.zone,
                "kind": p.kind.name(),
                "label": p.label,
                "P": numv(p.p),
                "P_err": numv(p.p_err),
                "H": freq_json(m, &p.h.values),
                "H_err": numv(p.h.err),
                "vacuous": p.vacuous,
            })
        })
        .collect();
    let alpha: Vec<Value> = a.log10_alpha.iter().map(|(z, l)| json!({"zone": z, "log10_alpha": numv(*l)})).collect();
    r.results = json!({
        "structure": structure_json(&a.structure),
        "pairs": pairs,
        "mass": numv(a.mass()),
        "region_bound": a.region_bound,
        "zone_bound": a.zone_bound,
        "alpha_budget": alpha,
    });
    let p_err = a.pairs.iter().map(|p| p.p_err).fold(0.0, f64::max);
    let h_err = a.pairs.iter().filter(|p| !p.vacuous).map(|p| p.h.err).fold(0.0, f64::max);
    ledger(r, "zone probability", eps, p_err);
    ledger(r, "zone frequency", eps, h_err);
    let worst = p_err.max(h_err);
    if worst > eps {
        return Err(Error::Certificate { what: format!("achieved error exceeds the requested {eps:e}"), residual: worst });
    }
    Ok(())
}

pub fn oc(r: &mut Report, m: &Pvass, start: &Configuration, eps: f64) -> Result<()> {
    let a = analyze_one_counter(m, start, eps)?;
    oc_results(r, m, &a, eps)
}

// ---------------------------------------------------------------------------
// tc

fn tail_json(t: &tc::TailConstants) -> Value {
    let trace: Map<String, Value> = t.trace.iter().map(|(k, v)| (k.clone(), numv(*v))).collect();
    json!({
        "theorem": t.theorem.name(),
        "a": numv(t.a),
        "b": numv(t.b),
        "z": numv(t.z),
        "d": t.d.map(numv),
        "H": t.h.map(numv),
        "tau": numv(t.tau),
        "trace": trace,
    })
}

fn err_json(e: &Error) -> Value {
    json!({"error": e.to_string()})
}

pub struct TcSummary {
    pub verdict: Verdict,
    pub case_labels: Vec<String>,
}

pub fn tc_results(r: &mut Report, m: &Pvass, theta: f64, horizon: usize) -> Result<TcSummary> {
    let tc = TwoCounter::new(m, tc::PROJECTION_TOL)?;
    let names = tc.model.states().to_vec();
    let stab = tc::stability_check(&tc, theta)?;
    let taus: Vec<Value> = stab
        .taus
        .iter()
        .map(|t| {
            json!({
                "counter": t.index,
                "region": t.region,
                "label": t.label,
                "lo": numv(t.value.lo),
                "hi": numv(t.value.hi),
                "exact": t.exact.as_ref().map(ratv),
                "sign": tc::sign_name(t.sign),
                "method": t.case.name(),
            })
        })
        .collect();
    let trends: Vec<Value> = tc
        .bsccs()
        .iter()
        .zip(&tc.trends)
        .map(|(b, t)| json!({"members": names_of(&names, &b.members), "trend": [ratv(&t[0]), ratv(&t[1])]}))
        .collect();
    let projections: Vec<Value> = (1..=2).map(|i| structure_json(&tc.projection(i).structure)).collect();

    let consts = tc::structural_constants(&tc, &stab.taus, horizon);
    let consts_json = match &consts {
        Ok(c) => json!({
            "B_II": c.b_ii,
            "B_IV": c.b_iv,
            "D_II": c.d_ii,
            "D_window": c.d_window,
            "B_pump": c.b_pump,
            "horizon": c.horizon,
            "witnesses": c.witnesses.iter().map(|w| json!({
                "constant": w.constant,
                "projection": w.projection,
                "path": w.path.iter().map(|c| tc.model.config_name(c)).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        }),
        Err(e) => err_json(e),
    };

    // Martingale and tail constants per type II region of A_2.
    let mut tails = Vec::new();
    for reg in tc.projection(2).regions_of(RegionKind::II) {
        let label = tc.region_label(2, reg);
        let b = tc.projection(2).structure.regions[reg].bscc.unwrap();
        let entry = if tc.trend_sign(b, 2) > 0 {
            match tc::convergence_positive_trend(&tc, reg) {
                Ok(t) => json!({"region": label, "constants": [tail_json(&t)]}),
                Err(e) => json!({"region": label, "error": e.to_string()}),
            }
        } else {
            match tc::build_martingale(&tc, reg, theta) {
                Err(e) => json!({"region": label, "error": e.to_string()}),
                Ok(mart) => {
                    let proj = tc.projection(2);
                    let drift = mart
                        .states
                        .iter()
                        .flat_map(|&q| (0..=50u64).map(move |x| (q, x)))
                        .map(|(q, x)| mart.drift(proj, q, x).abs())
                        .fold(0.0, f64::max);
                    let consts: Vec<Value> = [tc::Theorem::T5, tc::Theorem::T6, tc::Theorem::T7]
                        .iter()
                        .map(|&th| match tc::tail_constants(&mart, th) {
                            Ok(t) => tail_json(&t),
                            Err(e) => json!({"theorem": th.name(), "error": e.to_string()}),
                        })
                        .collect();
                    json!({
                        "region": label,
                        "martingale": {
                            "tau": numv(mart.tau),
                            "B": numv(mart.b),
                            "C_g": numv(mart.c_g),
                            "poisson_residual": numv(mart.poisson_residual),
                            "max_drift": numv(drift),
                            "log10_B_formula": numv(mart.log10_b_formula),
                            "log10_C_formula": numv(mart.log10_c),
                        },
                        "constants": consts,
                    })
                }
            }
        };
        tails.push(entry);
    }

    let mut cases = Vec::new();
    let mut case_labels = Vec::new();
    let mut attractors = Vec::new();
    if let Ok(c) = &consts {
        let t5 = |reg: usize| tc::build_martingale(&tc, reg, theta).and_then(|m| tc::tail_constants(&m, tc::Theorem::T5));
        let ctx = tc::CaseContext { taus: &stab.taus, consts: c, t5: &t5 };
        for (r1, r2) in tc::relevant_pairs(&tc) {
            let regions = json!([tc.region_label(1, r1), tc.region_label(2, r2)]);
            match tc::case_classify(&tc, r1, r2, &ctx) {
                Ok(rep) => {
                    case_labels.push(rep.label());
                    for set in &rep.family {
                        if let ConfigSet::Attractor { threshold, .. } = set {
                            let members: Vec<String> = tc::attractor_states(&tc, set, horizon as u64)
                                .iter()
                                .map(|&(q, m)| tc.model.config_name(&Configuration::new(q, vec![0, m])))
                                .collect();
                            attractors.push(json!({
                                "set": set.name(),
                                "threshold": numv(*threshold),
                                "least_members": members,
                            }));
                        }
                    }
                    cases.push(json!({
                        "regions": regions,
                        "kind": rep.kind.label(),
                        "label": rep.label(),
                        "swapped": rep.swapped,
                        "family": rep.family.iter().map(|s| s.name()).collect::<Vec<_>>(),
                        "target": rep.family[rep.target].name(),
                    }));
                }
                Err(e) => cases.push(json!({"regions": regions, "error": e.to_string()})),
            }
        }
    }

    let mut regimes = Vec::new();
    for i in 1..=2 {
        let st = &tc.projection(i).structure;
        for z in st.zones.iter().filter(|z| z.kind == ZoneKind::TypeIINeg) {
            let reg = z.regions[0];
            let label = tc.region_label(i, reg);
            match tc::regime_frequency(&tc, i, reg, theta.max(1e-9)) {
                Ok(h) => {
                    let h = tc::project_patterns(&tc, &h);
                    let f: Map<String, Value> =
                        h.iter().map(|(p, &x)| (p.display(&tc.original_names), numv(x))).collect();
                    regimes.push(json!({"counter": i, "region": label, "frequencies": f}));
                }
                Err(e) => regimes.push(json!({"counter": i, "region": label, "error": e.to_string()})),
            }
        }
    }

    r.results = json!({
        "states": names,
        "trends": trends,
        "projections": projections,
        "taus": taus,
        "stability": {"verdict": stab.verdict.name(), "witnesses": stab.witnesses},
        "constants": consts_json,
        "tail_constants": tails,
        "cases": cases,
        "attractors": attractors,
        "regimes": regimes,
    });
    let radius = stab.taus.iter().map(|t| t.value.radius()).fold(0.0, f64::max);
    ledger(r, "mean payoff interval radius", theta, radius);
    if stab.verdict == Verdict::Unresolved {
        return Err(Error::Analysis(format!("stability unresolved: {}", stab.witnesses.join("; "))));
    }
    Ok(TcSummary { verdict: stab.verdict, case_labels })
}

fn names_of(names: &[String], states: &[usize]) -> Vec<String> {
    states.iter().map(|&q| names[q].clone()).collect()
}

// ---------------------------------------------------------------------------
// sim

#[derive(Clone, Debug)]
pub enum Checkpoints {
    Geometric,
    Linear(u64),
    Final,
}

impl std::str::FromStr for Checkpoints {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "geometric" => Ok(Checkpoints::Geometric),
            "final" => Ok(Checkpoints::Final),
            _ => match s.strip_prefix("linear:").and_then(|k| k.parse().ok()) {
                Some(k) if k > 0 => Ok(Checkpoints::Linear(k)),
                _ => Err(format!("checkpoints must be geometric, final or linear:K, not `{s}`")),
            },
        }
    }
}

impl Checkpoints {
    pub fn schedule(&self, horizon: u64) -> Vec<u64> {
        match self {
            Checkpoints::Geometric => sim::geometric_checkpoints(horizon),
            Checkpoints::Linear(k) => sim::linear_checkpoints(horizon, *k),
            Checkpoints::Final => vec![horizon],
        }
    }
}

pub struct SimParams {
    pub start: Configuration,
    pub runs: u64,
    pub horizon: u64,
    pub seed: u64,
    pub checkpoints: Checkpoints,
    pub burn_in: u64,
    pub radius: f64,
}

/// Runs the batch with progress on stderr every tenth of the runs.
pub fn run_batch(m: &Pvass, p: &SimParams) -> Result<Vec<RunStats>> {
    let sampler = Sampler::new(m);
    let cps = p.checkpoints.schedule(p.horizon);
    let done = AtomicUsize::new(0);
    let step = (p.runs / 10).max(1) as usize;
    sim::with_pool(|| {
        (0..p.runs)
            .into_par_iter()
            .map(|run| {
                let out = sim::sample_run(&sampler, &p.start, p.horizon, p.seed, run, &cps, p.burn_in);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k % step == 0 {
                    progress(&format!("{k}/{} runs", p.runs));
                }
                out
            })
            .collect()
    })
}

pub fn cluster_json(rep: &ClusterReport, keys: &[String]) -> Value {
    let clusters: Vec<Value> = rep
        .clusters
        .iter()
        .map(|c| {
            let centroid: Map<String, Value> = c
                .centroid
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(i, &x)| (keys[i].clone(), numv(x)))
                .collect();
            json!({"mass": numv(c.mass), "size": c.members.len(), "dispersion": numv(c.dispersion), "centroid": centroid})
        })
        .collect();
    json!({"radius": numv(rep.radius), "clusters": clusters})
}

pub fn mask_keys(dim: usize) -> Vec<String> {
    (0..1usize << dim).map(|b| pvass_core::model::mask_text(&pvass_core::model::mask_from_bits(b, dim))).collect()
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn write_csv(path: &Path, m: &Pvass, stats: &[RunStats]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run_id", "step", "pattern", "frequency"])?;
    for s in stats {
        for (row, &k) in s.counts.iter().zip(&s.checkpoints) {
            for (i, &c) in row.iter().enumerate() {
                if c > 0 {
                    let f = c as f64 / k as f64;
                    w.write_record([s.run.to_string(), k.to_string(), m.pattern_name(&s.pattern(i)), num(f)])?;
                }
            }
        }
    }
    w.flush()
}

pub fn sim_results(r: &mut Report, m: &Pvass, p: &SimParams, stats: &[RunStats]) -> Value {
    let np = Sampler::new(m).num_patterns();
    let keys: Vec<String> = (0..np).map(|i| m.pattern_name(&stats[0].pattern(i))).collect();
    let by_pattern = sim::cluster_limits(stats, p.radius);
    let masks: Vec<Vec<f64>> = stats.iter().map(|s| s.terminal_by_mask()).collect();
    let by_mask = cluster_vectors(&masks, p.radius);
    let mut gaps: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in stats {
        for (i, g) in sim::oscillation_gap(s).into_iter().enumerate() {
            if s.counts.last().is_some_and(|row| row[i] > 0) {
                gaps.entry(i).or_default().push(g.gap);
            }
        }
    }
    let gap_json: Map<String, Value> = gaps
        .into_iter()
        .map(|(i, mut v)| {
            let max = v.iter().cloned().fold(0.0, f64::max);
            (keys[i].clone(), json!({"runs": v.len(), "median": numv(median(&mut v)), "max": numv(max)}))
        })
        .collect();
    let dispersion = by_pattern.clusters.iter().map(|c| c.dispersion).fold(0.0, f64::max);
    ledger(r, "cluster radius", p.radius, dispersion);
    json!({
        "runs": stats.len(),
        "overflowed_runs": stats.iter().filter(|s| s.overflow).count(),
        "clusters": cluster_json(&by_pattern, &keys),
        "mask_clusters": cluster_json(&by_mask, &mask_keys(m.dimension())),
        "gaps": gap_json,
    })
}

/// Empirical tail check of the height bound on the first type II region of
/// A_2 with a martingale.
pub fn sim_tail_check(m: &Pvass, samples: u64, seed: u64, theta: f64) -> Result<Value> {
    let tc = TwoCounter::new(m, tc::PROJECTION_TOL)?;
    let reg = *tc
        .projection(2)
        .regions_of(RegionKind::II)
        .first()
        .ok_or_else(|| Error::Analysis("no type II region of A_2".into()))?;
    let mart = tc::build_martingale(&tc, reg, theta)?;
    let t5 = tc::tail_constants(&mart, tc::Theorem::T5)?;
    let chk = sim::tail_check(&tc.model, mart.states[0], &t5, samples, &[1, 10, 100], 50, seed, 10_000_000, 0.99)?;
    Ok(tail_check_json(&chk))
}

pub fn tail_check_json(chk: &sim::TailCheck) -> Value {
    let rows: Vec<Value> = chk
        .rows
        .iter()
        .map(|r| {
            json!({"n": r.n, "i": r.i, "hits": r.hits, "samples": r.samples,
                   "upper": numv(r.upper), "bound": numv(r.bound), "margin": numv(r.margin)})
        })
        .collect();
    let spread: Vec<Value> =
        chk.spread.iter().map(|(i, s, w)| json!({"i": i, "spread": numv(*s), "ci_width": numv(*w)})).collect();
    json!({
        "theorem": chk.theorem.name(),
        "pass": chk.pass(),
        "violations": chk.violations,
        "truncated": chk.truncated,
        "rows": rows,
        "spread": spread,
    })
}
