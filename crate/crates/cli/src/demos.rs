//! Built-in experiments on the embedded models.

use std::sync::atomic::{AtomicUsize, Ordering};

use pvass_core::chain::{build_underlying, trend_report};
use pvass_core::demo;
use pvass_core::model::{spn_to_pvass, Configuration, Pvass, SpnOptions};
use pvass_core::sim::{self, cluster_vectors, Sampler};
use pvass_core::{Error, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::commands::{self, progress, SimParams};
use crate::report::{numv, ratv, Report};

pub struct Fig1Params {
    pub sim: SimParams,
    pub theta: f64,
    pub horizon_search: usize,
}

/// Zero-pattern frequency of counter `j` from a by-mask vector.
fn zero_freq(v: &[f64], j: usize) -> f64 {
    v.iter().enumerate().filter(|(b, _)| b >> j & 1 == 0).map(|(_, x)| x).sum()
}

pub fn fig1(r: &mut Report, p: &Fig1Params) -> Result<()> {
    progress("translating the embedded net");
    let translated = spn_to_pvass(&demo::fig1_spn(), &SpnOptions::default())?;
    let tr = trend_report(&translated, &build_underlying(&translated))?;
    let translation = json!({
        "states": translated.num_states(),
        "rules": translated.rules().len(),
        "trends": tr.iter().map(|t| t.trend.iter().map(ratv).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });

    let m = demo::fig1();
    progress("two-counter analysis");
    let mut sub = Report::new("tc");
    let tc_outcome = commands::tc_results(&mut sub, &m, p.theta, p.horizon_search);
    r.ledger.extend(sub.ledger.clone());

    progress(&format!("simulating {} runs of length {}", p.sim.runs, p.sim.horizon));
    let stats = commands::run_batch(&m, &p.sim)?;
    let masks: Vec<Vec<f64>> = stats.iter().map(|s| s.terminal_by_mask()).collect();
    let rep = cluster_vectors(&masks, p.sim.radius);
    let clusters: Vec<Value> = rep
        .clusters
        .iter()
        .map(|c| {
            let (z1, z2) = (zero_freq(&c.centroid, 0), zero_freq(&c.centroid, 1));
            json!({
                "mass": numv(c.mass),
                "size": c.members.len(),
                "dispersion": numv(c.dispersion),
                "centroid": c.centroid.iter().map(|&x| numv(x)).collect::<Vec<_>>(),
                "zero_frequency": [numv(z1), numv(z2)],
                "dominance": numv((z1 - z2).abs()),
            })
        })
        .collect();
    let dispersion = rep.clusters.iter().map(|c| c.dispersion).fold(0.0, f64::max);
    r.ledger.push(crate::report::LedgerEntry {
        quantity: "cluster radius".into(),
        requested: crate::report::num(p.sim.radius),
        achieved: crate::report::num(dispersion),
    });
    r.results = json!({
        "translation": translation,
        "analysis": sub.results,
        "simulation": {
            "runs": stats.len(),
            "overflowed_runs": stats.iter().filter(|s| s.overflow).count(),
            "mask_order": commands::mask_keys(2),
            "clusters": clusters,
        },
    });
    tc_outcome.map(|_| ())
}

/// Dominant masks (largest frequency after burn-in at least 0.1) and the
/// largest gap among them.
fn run_gap(gaps: &[sim::Gap]) -> f64 {
    gaps.iter().filter(|g| g.max >= 0.1).map(|g| g.gap).fold(0.0, f64::max)
}

pub struct OscParams {
    pub weights: (u64, u64, u64),
    pub runs: u64,
    pub horizon: u64,
    pub seed: u64,
    pub sweep: Vec<u64>,
    pub start: u64,
}

pub struct OscConfig {
    pub label: String,
    pub weights: (u64, u64, u64),
    pub contracting: bool,
    pub gaps: Vec<f64>,
}

impl OscConfig {
    pub fn fraction_above(&self, t: f64) -> f64 {
        self.gaps.iter().filter(|&&g| g > t).count() as f64 / self.gaps.len().max(1) as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.gaps.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

fn osc_config(m: &Pvass, p: &OscParams, label: &str) -> Result<Vec<f64>> {
    let sampler = Sampler::new(m);
    let start = Configuration::new(0, vec![p.start, 0, 0]);
    let burn = p.horizon / 10;
    let done = AtomicUsize::new(0);
    let step = (p.runs / 4).max(1) as usize;
    sim::with_pool(|| {
        (0..p.runs)
            .into_par_iter()
            .map(|run| {
                let g = sim::mask_gaps(&sampler, &start, p.horizon, p.seed, run, burn).map(|g| run_gap(&g));
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k % step == 0 {
                    progress(&format!("{label}: {k}/{} runs", p.runs));
                }
                g
            })
            .collect()
    })
}

pub fn oscillation_configs(p: &OscParams) -> Result<Vec<OscConfig>> {
    let (pw, qw, rw) = p.weights;
    let mut plan: Vec<(String, (u64, u64, u64), bool)> = vec![(format!("A({pw},{qw},{rw})"), p.weights, false)];
    for &s in &p.sweep {
        if s != pw {
            plan.push((format!("A({s},{qw},{rw})"), (s, qw, rw), false));
        }
    }
    plan.push((format!("A'({pw},{qw},{rw})"), p.weights, true));
    let mut out = Vec::new();
    for (label, (a, b, c), contracting) in plan {
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::Model("weights must be positive".into()));
        }
        let m = if contracting { demo::three_counter_contracting(a, b, c) } else { demo::three_counter(a, b, c) };
        let gaps = osc_config(&m, p, &label)?;
        out.push(OscConfig { label, weights: (a, b, c), contracting, gaps });
    }
    Ok(out)
}

pub fn three_counter(r: &mut Report, p: &OscParams) -> Result<()> {
    let configs = oscillation_configs(p)?;
    let rows: Vec<Value> = configs
        .iter()
        .map(|c| {
            json!({
                "model": c.label,
                "weights": [c.weights.0, c.weights.1, c.weights.2],
                "contracting": c.contracting,
                "runs": c.gaps.len(),
                "median_gap": numv(c.median()),
                "fraction_gap_above_0.2": numv(c.fraction_above(0.2)),
                "min_gap": numv(c.gaps.iter().cloned().fold(f64::INFINITY, f64::min)),
                "max_gap": numv(c.gaps.iter().cloned().fold(0.0, f64::max)),
            })
        })
        .collect();
    let oscillating = configs.iter().filter(|c| !c.contracting).all(|c| c.fraction_above(0.2) >= 0.9);
    let settles = configs.iter().filter(|c| c.contracting).all(|c| c.median() < 0.05);
    r.results = json!({
        "start": format!("p({},0,0)", p.start),
        "burn_in": p.horizon / 10,
        "configurations": rows,
        "oscillating": oscillating,
        "contracting_settles": settles,
    });
    Ok(())
}

pub fn remark(r: &mut Report, k: usize, start: u64, eps: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Model("the family needs k >= 1".into()));
    }
    let m = demo::remark(k);
    commands::oc(r, &m, &Configuration::new(0, vec![start]), eps)
}
