//! Monte Carlo engine: run sampling, pattern-frequency trajectories, limit
//! clustering, oscillation gaps and empirical checks of tail bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{mask_bits, mask_from_bits, Configuration, Pattern, Pvass};
use crate::numeric::biguint_to_f64;
use crate::tc::{TailConstants, Theorem};

/// Per-run random stream: keyed by the master seed and the run index, so a
/// batch gives the same runs whatever its partitioning.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Rule tables per (state, zero mask) with cumulative weights.
#[derive(Clone, Debug)]
pub struct Sampler {
    dim: usize,
    /// Index `state << dim | mask`: (rule, cumulative weight).
    tables: Vec<Vec<(usize, f64)>>,
    deltas: Vec<Vec<i8>>,
    dsts: Vec<usize>,
}

impl Sampler {
    pub fn new(m: &Pvass) -> Self {
        let dim = m.dimension();
        let masks = 1usize << dim;
        let mut tables = Vec::with_capacity(m.num_states() * masks);
        for q in 0..m.num_states() {
            for bits in 0..masks {
                let mask = mask_from_bits(bits, dim);
                let mut acc = 0.0;
                let mut t = Vec::new();
                for &i in m.outgoing(q) {
                    let r = &m.rules()[i];
                    if r.delta.iter().zip(&mask).all(|(&k, &pos)| k >= 0 || pos) {
                        acc += biguint_to_f64(&r.weight);
                        t.push((i, acc));
                    }
                }
                tables.push(t);
            }
        }
        Sampler {
            dim,
            tables,
            deltas: m.rules().iter().map(|r| r.delta.clone()).collect(),
            dsts: m.rules().iter().map(|r| r.dst).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn num_patterns(&self) -> usize {
        self.tables.len()
    }

    pub fn pattern_index(&self, c: &Configuration) -> usize {
        let bits: usize = c.counters.iter().enumerate().map(|(i, &v)| ((v > 0) as usize) << i).sum();
        c.state << self.dim | bits
    }

    pub fn pattern(&self, index: usize) -> Pattern {
        Pattern { state: index >> self.dim, mask: mask_from_bits(index & ((1 << self.dim) - 1), self.dim) }
    }

    /// One step in place. Returns the fired rule, `None` when no rule is
    /// enabled (the configuration repeats), or an error on counter overflow.
    pub fn step<R: Rng>(&self, c: &mut Configuration, rng: &mut R) -> Result<Option<usize>> {
        let t = &self.tables[self.pattern_index(c)];
        let Some(&(_, total)) = t.last() else { return Ok(None) };
        let x = rng.gen::<f64>() * total;
        let k = t.partition_point(|&(_, w)| w <= x).min(t.len() - 1);
        let rule = t[k].0;
        for (v, &d) in c.counters.iter_mut().zip(&self.deltas[rule]) {
            *v = if d >= 0 {
                v.checked_add(d as u64).ok_or_else(|| Error::Analysis("counter overflow".into()))?
            } else {
                *v - (-d) as u64
            };
        }
        c.state = self.dsts[rule];
        Ok(Some(rule))
    }
}

/// Powers of two up to the horizon, plus the horizon itself.
pub fn geometric_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |&x| x.checked_mul(2)).take_while(|&x| x < horizon).collect();
    out.push(horizon);
    out
}

pub fn linear_checkpoints(horizon: u64, every: u64) -> Vec<u64> {
    let every = every.max(1);
    let mut out: Vec<u64> = (1..).map(|k| k * every).take_while(|&x| x < horizon).collect();
    out.push(horizon);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub seed: u64,
    pub run: u64,
    /// Configurations observed, w(0) … w(horizon-1); fewer after an overflow.
    pub horizon: u64,
    pub checkpoints: Vec<u64>,
    /// Visit counts per pattern index at each reached checkpoint; each row
    /// sums to its checkpoint.
    pub counts: Vec<Vec<u64>>,
    pub burn_in: u64,
    /// Per pattern: smallest and largest frequency over prefixes of length
    /// ≥ burn_in.
    pub min_freq: Vec<f64>,
    pub max_freq: Vec<f64>,
    pub final_config: Configuration,
    pub overflow: bool,
    pub dim: usize,
}

impl RunStats {
    /// Frequencies at the last reached checkpoint.
    pub fn terminal(&self) -> Vec<f64> {
        match (self.counts.last(), self.checkpoints.get(self.counts.len().wrapping_sub(1))) {
            (Some(row), Some(&k)) => row.iter().map(|&c| c as f64 / k as f64).collect(),
            _ => Vec::new(),
        }
    }

    pub fn pattern(&self, index: usize) -> Pattern {
        Pattern { state: index >> self.dim, mask: mask_from_bits(index & ((1 << self.dim) - 1), self.dim) }
    }

    /// Terminal frequencies summed over states, indexed by zero mask.
    pub fn terminal_by_mask(&self) -> Vec<f64> {
        let mut out = vec![0.0; 1 << self.dim];
        for (i, f) in self.terminal().into_iter().enumerate() {
            out[i & ((1 << self.dim) - 1)] += f;
        }
        out
    }
}

/// Simulates one run. `burn_in` is a prefix length ≥ 1.
pub fn sample_run(
    sampler: &Sampler,
    start: &Configuration,
    horizon: u64,
    seed: u64,
    run: u64,
    checkpoints: &[u64],
    burn_in: u64,
) -> Result<RunStats> {
    if horizon < 1 {
        return Err(Error::Analysis("horizon must be at least 1".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.iter().any(|&k| k == 0 || k > horizon) {
        return Err(Error::Analysis("checkpoints must increase strictly within [1, horizon]".into()));
    }
    let burn = burn_in.clamp(1, horizon);
    let np = sampler.num_patterns();
    let mut rng = run_rng(seed, run);
    let mut c = start.clone();
    let mut count = vec![0u64; np];
    let mut min_freq = vec![f64::INFINITY; np];
    let mut max_freq = vec![f64::NEG_INFINITY; np];
    let mut counts = Vec::new();
    let mut next_cp = 0;
    let mut overflow = false;
    let mut seen = 0u64;
    for k in 1..=horizon {
        // w(k-1) is the k-th configuration.
        let pi = sampler.pattern_index(&c);
        if k > burn {
            let before = count[pi] as f64 / (k - 1) as f64;
            min_freq[pi] = min_freq[pi].min(before);
            max_freq[pi] = max_freq[pi].max((count[pi] + 1) as f64 / k as f64);
        }
        count[pi] += 1;
        seen = k;
        if k == burn {
            for i in 0..np {
                let f = count[i] as f64 / k as f64;
                min_freq[i] = f;
                max_freq[i] = f;
            }
        }
        if next_cp < checkpoints.len() && checkpoints[next_cp] == k {
            counts.push(count.clone());
            next_cp += 1;
        }
        if k < horizon && sampler.step(&mut c, &mut rng).is_err() {
            overflow = true;
            break;
        }
    }
    if seen >= burn {
        for i in 0..np {
            min_freq[i] = min_freq[i].min(count[i] as f64 / seen as f64);
        }
    }
    let mut cps = checkpoints[..next_cp].to_vec();
    if overflow && cps.last() != Some(&seen) {
        cps.push(seen);
        counts.push(count.clone());
    }
    Ok(RunStats {
        seed,
        run,
        horizon: seen,
        checkpoints: cps,
        counts,
        burn_in: burn,
        min_freq,
        max_freq,
        final_config: c,
        overflow,
        dim: sampler.dim,
    })
}

/// Worker count from `PVASS_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PVASS_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n: &usize| n > 0)
}

/// Runs `f` on the worker pool capped by `PVASS_THREADS`.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Runs 0..runs in parallel; results are in run order.
pub fn sample_batch(
    m: &Pvass,
    start: &Configuration,
    horizon: u64,
    seed: u64,
    runs: u64,
    checkpoints: &[u64],
    burn_in: u64,
) -> Result<Vec<RunStats>> {
    let sampler = Sampler::new(m);
    with_pool(|| {
        (0..runs)
            .into_par_iter()
            .map(|r| sample_run(&sampler, start, horizon, seed, r, checkpoints, burn_in))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Clustering

#[derive(Clone, Debug)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    pub mass: f64,
    /// Largest L∞ distance of a member to the centroid.
    pub dispersion: f64,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ClusterReport {
    pub radius: f64,
    /// Sorted by decreasing mass.
    pub clusters: Vec<Cluster>,
    pub unassigned: f64,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Leader clustering of terminal vectors: a vector joins the first leader
/// within radius/2, so every member is within the radius of its centroid.
pub fn cluster_vectors(vectors: &[Vec<f64>], radius: f64) -> ClusterReport {
    let mut leaders: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        match leaders.iter().position(|&l| linf(&vectors[l], v) <= radius / 2.0) {
            Some(c) => members[c].push(i),
            None => {
                leaders.push(i);
                members.push(vec![i]);
            }
        }
    }
    let n = vectors.len().max(1) as f64;
    let mut clusters: Vec<Cluster> = members
        .into_iter()
        .map(|ms| {
            let dim = vectors[ms[0]].len();
            let mut centroid = vec![0.0; dim];
            for &i in &ms {
                for (c, x) in centroid.iter_mut().zip(&vectors[i]) {
                    *c += x;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= ms.len() as f64);
            let dispersion = ms.iter().map(|&i| linf(&vectors[i], &centroid)).fold(0.0, f64::max);
            Cluster { centroid, mass: ms.len() as f64 / n, dispersion, members: ms }
        })
        .collect();
    clusters.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.members[0].cmp(&b.members[0])));
    ClusterReport { radius, clusters, unassigned: 0.0 }
}

pub fn cluster_limits(stats: &[RunStats], radius: f64) -> ClusterReport {
    let vectors: Vec<Vec<f64>> = stats.iter().map(|s| s.terminal()).collect();
    cluster_vectors(&vectors, radius)
}

// ---------------------------------------------------------------------------
// Oscillation

#[derive(Clone, Debug)]
pub struct Gap {
    pub pattern: Pattern,
    pub min: f64,
    pub max: f64,
    pub gap: f64,
}

/// Per pattern, the range of the frequency trajectory after the burn-in
/// recorded during sampling.
pub fn oscillation_gap(stats: &RunStats) -> Vec<Gap> {
    (0..stats.min_freq.len())
        .filter(|&i| stats.max_freq[i].is_finite())
        .map(|i| Gap {
            pattern: stats.pattern(i),
            min: stats.min_freq[i],
            max: stats.max_freq[i],
            gap: stats.max_freq[i] - stats.min_freq[i],
        })
        .collect()
}

/// Gaps of zero-mask frequencies summed over states: replays the run and
/// tracks each mask's frequency trajectory after `burn_in`.
pub fn mask_gaps(sampler: &Sampler, start: &Configuration, horizon: u64, seed: u64, run: u64, burn_in: u64) -> Result<Vec<Gap>> {
    let dim = sampler.dim;
    let nm = 1usize << dim;
    let mut rng = run_rng(seed, run);
    let mut c = start.clone();
    let mut count = vec![0u64; nm];
    let mut lo = vec![f64::INFINITY; nm];
    let mut hi = vec![f64::NEG_INFINITY; nm];
    let burn = burn_in.clamp(1, horizon);
    let mut seen = 0;
    for k in 1..=horizon {
        let mi = mask_bits(&c.counters.iter().map(|&v| v > 0).collect::<Vec<_>>());
        if k > burn {
            lo[mi] = lo[mi].min(count[mi] as f64 / (k - 1) as f64);
            hi[mi] = hi[mi].max((count[mi] + 1) as f64 / k as f64);
        }
        count[mi] += 1;
        seen = k;
        if k == burn {
            for i in 0..nm {
                lo[i] = count[i] as f64 / k as f64;
                hi[i] = lo[i];
            }
        }
        if k < horizon && sampler.step(&mut c, &mut rng).is_err() {
            break;
        }
    }
    Ok((0..nm)
        .map(|i| {
            let min = lo[i].min(count[i] as f64 / seen as f64);
            let max = hi[i].max(min);
            Gap { pattern: Pattern { state: 0, mask: mask_from_bits(i, dim) }, min, max, gap: max - min }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Tail checks

/// Two-sided Clopper–Pearson interval upper end at confidence `conf`.
pub fn clopper_pearson_upper(k: u64, n: u64, conf: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let alpha = 1.0 - conf;
    Beta::new(k as f64 + 1.0, (n - k) as f64).map(|b| b.inverse_cdf(1.0 - alpha / 2.0)).unwrap_or(1.0)
}

pub fn clopper_pearson_lower(k: u64, n: u64, conf: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let alpha = 1.0 - conf;
    Beta::new(k as f64, (n - k + 1) as f64).map(|b| b.inverse_cdf(alpha / 2.0)).unwrap_or(0.0)
}

#[derive(Clone, Debug)]
pub struct TailRow {
    pub n: u64,
    pub i: u64,
    pub hits: u64,
    pub samples: u64,
    pub upper: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub struct TailCheck {
    pub theorem: Theorem,
    pub rows: Vec<TailRow>,
    /// (n, i) pairs where the empirical upper bound exceeds the curve.
    pub violations: Vec<(u64, u64)>,
    /// Runs stopped by the step budget; they count as hits for every i.
    pub truncated: u64,
    /// Per i: max over n minus min over n of the empirical frequency, and
    /// the largest CI width among the heights.
    pub spread: Vec<(u64, f64, f64)>,
}

impl TailCheck {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Simulates from `state(n, 0)` until counter 1 is zero (or `max_steps`)
/// and compares the empirical tail against the theorem's curve:
/// T5 uses the event x2 at T ≥ i, T7 the event T ≥ i (for i at or above the
/// theorem's horizon).
#[allow(clippy::too_many_arguments)]
pub fn tail_check(
    m: &Pvass,
    state: usize,
    bound: &TailConstants,
    samples: u64,
    heights: &[u64],
    imax: u64,
    seed: u64,
    max_steps: u64,
    conf: f64,
) -> Result<TailCheck> {
    bound.validate()?;
    if m.dimension() != 2 {
        return Err(Error::Analysis("tail checks need dimension 2".into()));
    }
    if samples < 10 || !(0.0..1.0).contains(&conf) {
        return Err(Error::Analysis(format!("{samples} samples are too few for confidence {conf}")));
    }
    if bound.theorem == Theorem::T6 {
        return Err(Error::Analysis("the divergence bound has no per-i tail".into()));
    }
    let sampler = Sampler::new(m);
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut truncated = 0;
    for (hi, &n) in heights.iter().enumerate() {
        let start = Configuration::new(state, vec![n, 0]);
        let outcomes: Vec<Option<u64>> = with_pool(|| {
            (0..samples)
                .into_par_iter()
                .map(|r| {
                    let mut rng = run_rng(seed, (hi as u64) << 40 | r);
                    let mut c = start.clone();
                    let mut steps = 0u64;
                    while c.counters[0] > 0 {
                        if steps == max_steps || sampler.step(&mut c, &mut rng).is_err() {
                            return None;
                        }
                        steps += 1;
                    }
                    Some(if bound.theorem == Theorem::T5 { c.counters[1] } else { steps })
                })
                .collect()
        });
        truncated += outcomes.iter().filter(|o| o.is_none()).count() as u64;
        for i in 1..=imax {
            if bound.theorem == Theorem::T7 && (i as f64) < bound.horizon(n) {
                continue;
            }
            let hits = outcomes.iter().filter(|o| o.map_or(true, |v| v >= i)).count() as u64;
            let upper = clopper_pearson_upper(hits, samples, conf);
            let curve = match bound.theorem {
                Theorem::T5 => bound.height_bound(i),
                _ => bound.convergence_bound(n, i),
            };
            if upper > curve {
                violations.push((n, i));
            }
            rows.push(TailRow { n, i, hits, samples, upper, bound: curve, margin: curve - upper });
        }
    }
    let mut spread = Vec::new();
    for i in 1..=imax {
        let at: Vec<&TailRow> = rows.iter().filter(|r| r.i == i).collect();
        if at.len() < 2 {
            continue;
        }
        let freq = |r: &TailRow| r.hits as f64 / r.samples as f64;
        let hi = at.iter().map(|r| freq(r)).fold(0.0, f64::max);
        let lo = at.iter().map(|r| freq(r)).fold(1.0, f64::min);
        let width = at
            .iter()
            .map(|r| r.upper - clopper_pearson_lower(r.hits, r.samples, conf))
            .fold(0.0, f64::max);
        spread.push((i, hi - lo, width));
    }
    Ok(TailCheck { theorem: bound.theorem, rows, violations, truncated, spread })
}
