//! pVASS models: ingestion, validation, normalisation, SPN translation and
//! the step semantics of the induced infinite Markov chain.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{model_err, Error, Result};
use crate::numeric::{rat_from_ratio, Rat};

pub type StateId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub src: StateId,
    pub delta: Vec<i8>,
    pub weight: BigUint,
    pub dst: StateId,
}

/// A pVASS. Every update component is in {-1, 0, 1}, every weight is
/// positive, every state has an outgoing rule and the state graph is weakly
/// connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pvass {
    dimension: usize,
    states: Vec<String>,
    rules: Vec<Rule>,
    out: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration {
    pub state: StateId,
    pub counters: Vec<u64>,
}

impl Configuration {
    pub fn new(state: StateId, counters: Vec<u64>) -> Self {
        Configuration { state, counters }
    }
}

/// `mask[i]` is true when counter i is positive (`*`), false when it is zero.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pattern {
    pub state: StateId,
    pub mask: Vec<bool>,
}

impl Pattern {
    pub fn mask_bits(&self) -> usize {
        mask_bits(&self.mask)
    }

    pub fn display(&self, names: &[String]) -> String {
        format!("{}({})", names[self.state], mask_text(&self.mask))
    }
}

pub fn mask_bits(mask: &[bool]) -> usize {
    mask.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum()
}

pub fn mask_from_bits(bits: usize, d: usize) -> Vec<bool> {
    (0..d).map(|i| bits >> i & 1 == 1).collect()
}

pub fn mask_text(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { "*" } else { "0" }).collect::<Vec<_>>().join(",")
}

pub fn pattern_of(c: &Configuration) -> Pattern {
    Pattern { state: c.state, mask: c.counters.iter().map(|&v| v > 0).collect() }
}

impl Pvass {
    pub fn new(dimension: usize, states: Vec<String>, rules: Vec<Rule>) -> Result<Self> {
        if dimension == 0 {
            return model_err("dimension must be positive");
        }
        if states.is_empty() {
            return model_err("model has no states");
        }
        let mut seen = BTreeSet::new();
        for s in &states {
            if !seen.insert(s.as_str()) {
                return model_err(format!("duplicate state `{s}`"));
            }
        }
        let mut out = vec![Vec::new(); states.len()];
        for (i, r) in rules.iter().enumerate() {
            if r.src >= states.len() || r.dst >= states.len() {
                return model_err(format!("rules[{i}]: state index out of range"));
            }
            if r.delta.len() != dimension {
                return model_err(format!(
                    "rules[{i}]: update has length {} but dimension is {dimension}",
                    r.delta.len()
                ));
            }
            if r.delta.iter().any(|&k| !(-1..=1).contains(&k)) {
                return model_err(format!("rules[{i}]: update components must lie in {{-1,0,1}}"));
            }
            if r.weight.is_zero() {
                return model_err(format!("rules[{i}]: weight must be at least 1"));
            }
            out[r.src].push(i);
        }
        for (p, o) in out.iter().enumerate() {
            if o.is_empty() {
                return model_err(format!("state `{}` has no outgoing rule", states[p]));
            }
        }
        let m = Pvass { dimension, states, rules, out };
        if !m.weakly_connected() {
            return model_err("state graph is not weakly connected");
        }
        Ok(m)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Indices of the rules leaving `p`, in input order.
    pub fn outgoing(&self, p: StateId) -> &[usize] {
        &self.out[p]
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name)
    }

    pub fn total_weight(&self, p: StateId) -> BigUint {
        self.out[p].iter().map(|&i| &self.rules[i].weight).sum()
    }

    /// Least positive transition probability of the underlying chain.
    pub fn x_min(&self) -> f64 {
        let mut best = 1.0f64;
        for p in 0..self.num_states() {
            let t = crate::numeric::biguint_to_f64(&self.total_weight(p));
            for &i in &self.out[p] {
                best = best.min(crate::numeric::biguint_to_f64(&self.rules[i].weight) / t);
            }
        }
        best
    }

    /// Assumption 1: at most one rule per ordered pair of states.
    pub fn satisfies_assumption(&self) -> bool {
        let mut pairs = BTreeSet::new();
        self.rules.iter().all(|r| pairs.insert((r.src, r.dst)))
    }

    pub fn needs_normalization(&self) -> bool {
        !self.satisfies_assumption()
    }

    pub fn rule_between(&self, p: StateId, q: StateId) -> Option<&Rule> {
        self.out[p].iter().map(|&i| &self.rules[i]).find(|r| r.dst == q)
    }

    fn weakly_connected(&self) -> bool {
        let n = self.states.len();
        let mut adj = vec![Vec::new(); n];
        for r in &self.rules {
            adj[r.src].push(r.dst);
            adj[r.dst].push(r.src);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(p) = stack.pop() {
            for &q in &adj[p] {
                if !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        seen.into_iter().all(|b| b)
    }

    pub fn is_enabled(&self, rule: &Rule, counters: &[u64]) -> bool {
        rule.delta.iter().zip(counters).all(|(&k, &v)| k >= 0 || v > 0)
    }

    pub fn pattern_name(&self, pat: &Pattern) -> String {
        pat.display(&self.states)
    }

    pub fn config_name(&self, c: &Configuration) -> String {
        let v: Vec<String> = c.counters.iter().map(|x| x.to_string()).collect();
        format!("{}({})", self.states[c.state], v.join(","))
    }

    /// Parses `name:k1,k2,...`.
    pub fn parse_configuration(&self, text: &str) -> Result<Configuration> {
        let (name, rest) = text
            .rsplit_once(':')
            .ok_or_else(|| Error::Model(format!("configuration `{text}` must look like state:k1,...")))?;
        let state = self
            .state_index(name)
            .ok_or_else(|| Error::Model(format!("unknown state `{name}`")))?;
        let counters: Vec<u64> = rest
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Model(format!("configuration `{text}`: {e}")))?;
        if counters.len() != self.dimension {
            return model_err(format!(
                "configuration `{text}` has {} counters, model dimension is {}",
                counters.len(),
                self.dimension
            ));
        }
        Ok(Configuration { state, counters })
    }

    pub fn to_document(&self) -> ModelDoc {
        ModelDoc {
            dimension: Some(self.dimension),
            states: self.states.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleDoc {
                    src: self.states[r.src].clone(),
                    delta: r.delta.iter().map(|&k| k as i64).collect(),
                    weight: WeightDoc::from_biguint(&r.weight),
                    dst: self.states[r.dst].clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serialises")
    }
}

impl fmt::Display for Pvass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pVASS of dimension {} with {} states", self.dimension, self.states.len())?;
        for r in &self.rules {
            let d: Vec<String> = r.delta.iter().map(|k| k.to_string()).collect();
            writeln!(f, "  {} -({}),{}-> {}", self.states[r.src], d.join(","), r.weight, self.states[r.dst])?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Documents

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightDoc {
    Int(u64),
    Text(String),
}

impl WeightDoc {
    fn from_biguint(w: &BigUint) -> Self {
        match w.to_u64() {
            Some(v) => WeightDoc::Int(v),
            None => WeightDoc::Text(w.to_string()),
        }
    }

    fn value(&self) -> std::result::Result<BigUint, String> {
        match self {
            WeightDoc::Int(v) => Ok(BigUint::from(*v)),
            WeightDoc::Text(s) => s.trim().parse().map_err(|_| format!("`{s}` is not a non-negative integer")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub src: String,
    pub delta: Vec<i64>,
    pub weight: WeightDoc,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    pub states: Vec<String>,
    pub rules: Vec<RuleDoc>,
}

/// Parses and validates a model document. Rules whose update has a component
/// of absolute value above one are expanded into chains of unit steps.
pub fn parse_pvass(text: &str) -> Result<Pvass> {
    let doc: ModelDoc = serde_json::from_str(text)
        .map_err(|e| Error::Model(format!("schema error at line {}, column {}: {e}", e.line(), e.column())))?;
    from_document(&doc)
}

pub fn from_document(doc: &ModelDoc) -> Result<Pvass> {
    let dimension = match (doc.dimension, doc.rules.first()) {
        (Some(d), _) => d,
        (None, Some(r)) => r.delta.len(),
        (None, None) => return model_err("cannot infer dimension from an empty rule list"),
    };
    let mut index = HashMap::new();
    for (i, s) in doc.states.iter().enumerate() {
        if index.insert(s.clone(), i).is_some() {
            return model_err(format!("states[{i}]: duplicate state `{s}`"));
        }
    }
    let mut states = doc.states.clone();
    let mut rules = Vec::new();
    for (i, r) in doc.rules.iter().enumerate() {
        let src = *index.get(&r.src).ok_or_else(|| Error::Model(format!("rules[{i}]: unknown state `{}`", r.src)))?;
        let dst = *index.get(&r.dst).ok_or_else(|| Error::Model(format!("rules[{i}]: unknown state `{}`", r.dst)))?;
        if r.delta.len() != dimension {
            return model_err(format!(
                "rules[{i}]: update has length {} but dimension is {dimension}",
                r.delta.len()
            ));
        }
        let weight = r.weight.value().map_err(|e| Error::Model(format!("rules[{i}]: weight {e}")))?;
        if weight.is_zero() {
            return model_err(format!("rules[{i}]: weight must be at least 1"));
        }
        expand_rule(i, src, &r.delta, weight, dst, &mut states, &mut rules)?;
    }
    Pvass::new(dimension, states, rules)
}

/// Unit-step expansion: the first rule carries every first step (including
/// the single permitted decrement) and the original weight; later steps are
/// weight-1 increments through fresh states `src>dst#rule.step`.
fn expand_rule(
    index: usize,
    src: StateId,
    delta: &[i64],
    weight: BigUint,
    dst: StateId,
    states: &mut Vec<String>,
    rules: &mut Vec<Rule>,
) -> Result<()> {
    if let Some(k) = delta.iter().find(|&&k| k < -1) {
        return model_err(format!(
            "rules[{index}]: decrement {k} cannot be expanded without blocking in an auxiliary state"
        ));
    }
    let steps = delta.iter().map(|&k| k.max(1)).max().unwrap_or(1) as usize;
    let first: Vec<i8> = delta.iter().map(|&k| k.signum() as i8).collect();
    if steps == 1 {
        rules.push(Rule { src, delta: first, weight, dst });
        return Ok(());
    }
    let names = (states[src].clone(), states[dst].clone());
    let mut prev = src;
    for j in 0..steps {
        let next = if j + 1 == steps {
            dst
        } else {
            states.push(format!("{}>{}#{}.{}", names.0, names.1, index, j + 1));
            states.len() - 1
        };
        let (d, w) = if j == 0 {
            (first.clone(), weight.clone())
        } else {
            (delta.iter().map(|&k| (k > j as i64) as i8).collect(), BigUint::one())
        };
        rules.push(Rule { src: prev, delta: d, weight: w, dst: next });
        prev = next;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalisation

/// A model satisfying Assumption 1 together with the projection of its states
/// onto the states of the model it was derived from. Original states keep
/// their indices; fresh copies are appended.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub model: Pvass,
    pub projection: Vec<StateId>,
    /// For each fresh state: (predecessor, entering update).
    pub origin: Vec<Option<(StateId, Vec<i8>)>>,
}

impl Normalized {
    pub fn is_identity(&self) -> bool {
        self.projection.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// For every ordered pair with several rules the first rule (input order) is
/// kept; each further rule is redirected into a fresh copy `q[p,κ]` of its
/// target, and the copy inherits the target's (redirected) outgoing rules.
pub fn normalize(m: &Pvass) -> Normalized {
    let n = m.num_states();
    if m.satisfies_assumption() {
        return Normalized { model: m.clone(), projection: (0..n).collect(), origin: vec![None; n] };
    }
    let mut first_of_pair = BTreeMap::new();
    let mut target = vec![0; m.rules.len()];
    let mut states = m.states.clone();
    let mut projection: Vec<StateId> = (0..n).collect();
    let mut origin = vec![None; n];
    let mut used: BTreeSet<String> = states.iter().cloned().collect();
    for (i, r) in m.rules.iter().enumerate() {
        if first_of_pair.insert((r.src, r.dst), i).is_none() {
            target[i] = r.dst;
        } else {
            let kappa: Vec<String> = r.delta.iter().map(|k| k.to_string()).collect();
            let base = format!("{}[{},({})]", m.states[r.dst], m.states[r.src], kappa.join(","));
            let mut name = base.clone();
            let mut j = 2;
            while used.contains(&name) {
                name = format!("{base}#{j}");
                j += 1;
            }
            used.insert(name.clone());
            states.push(name);
            projection.push(r.dst);
            origin.push(Some((r.src, r.delta.clone())));
            target[i] = states.len() - 1;
        }
    }
    let mut rules = Vec::new();
    for (s, &orig) in projection.iter().enumerate() {
        for &i in &m.out[orig] {
            let r = &m.rules[i];
            rules.push(Rule { src: s, delta: r.delta.clone(), weight: r.weight.clone(), dst: target[i] });
        }
    }
    let model = Pvass::new(m.dimension, states, rules).expect("normalisation preserves validity");
    debug_assert!(model.satisfies_assumption());
    Normalized { model, projection, origin }
}

// ---------------------------------------------------------------------------
// Step semantics

/// One-step distribution of the infinite chain. Disabled rules are dropped
/// and the rest renormalised; with no enabled rule the configuration loops.
pub fn step_distribution(m: &Pvass, c: &Configuration) -> Result<Vec<(Configuration, Rat)>> {
    if c.state >= m.num_states() {
        return model_err(format!("state index {} not in model", c.state));
    }
    if c.counters.len() != m.dimension() {
        return model_err("configuration has the wrong number of counters");
    }
    let enabled: Vec<&Rule> =
        m.out[c.state].iter().map(|&i| &m.rules[i]).filter(|r| m.is_enabled(r, &c.counters)).collect();
    if enabled.is_empty() {
        return Ok(vec![(c.clone(), Rat::one())]);
    }
    let total: BigUint = enabled.iter().map(|r| &r.weight).sum();
    let mut dist: BTreeMap<Configuration, BigUint> = BTreeMap::new();
    for r in enabled {
        let counters = c
            .counters
            .iter()
            .zip(&r.delta)
            .map(|(&v, &k)| if k < 0 { v - 1 } else { v + k as u64 })
            .collect();
        *dist.entry(Configuration { state: r.dst, counters }).or_default() += &r.weight;
    }
    Ok(dist.into_iter().map(|(c, w)| (c, rat_from_ratio(&w, &total))).collect())
}

// ---------------------------------------------------------------------------
// Stochastic Petri nets

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceDoc {
    pub name: String,
    #[serde(default)]
    pub bound: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDoc {
    pub name: String,
    pub weight: WeightDoc,
    #[serde(rename = "in")]
    pub input: Vec<String>,
    pub out: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpnDoc {
    pub places: Vec<PlaceDoc>,
    pub transitions: Vec<TransitionDoc>,
    /// Initial marking of bounded places; restricts the product to reachable markings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<BTreeMap<String, u64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Place {
    pub name: String,
    pub bound: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub name: String,
    pub weight: BigUint,
    /// Token count consumed from / produced into each place.
    pub input: Vec<u32>,
    pub output: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Spn {
    pub places: Vec<Place>,
    pub transitions: Vec<Transition>,
    pub initial: Option<Vec<u64>>,
}

pub fn parse_spn(text: &str) -> Result<Spn> {
    let doc: SpnDoc = serde_json::from_str(text)
        .map_err(|e| Error::Model(format!("schema error at line {}, column {}: {e}", e.line(), e.column())))?;
    spn_from_document(&doc)
}

pub fn spn_from_document(doc: &SpnDoc) -> Result<Spn> {
    let mut index = HashMap::new();
    for (i, p) in doc.places.iter().enumerate() {
        if index.insert(p.name.clone(), i).is_some() {
            return model_err(format!("places[{i}]: duplicate place `{}`", p.name));
        }
    }
    let np = doc.places.len();
    let mut transitions = Vec::new();
    for (i, t) in doc.transitions.iter().enumerate() {
        let weight = t.weight.value().map_err(|e| Error::Model(format!("transitions[{i}]: weight {e}")))?;
        if weight.is_zero() {
            return model_err(format!("transitions[{i}]: weight must be at least 1"));
        }
        let mut input = vec![0u32; np];
        let mut output = vec![0u32; np];
        for (arcs, counts) in [(&t.input, &mut input), (&t.out, &mut output)] {
            for a in arcs {
                let p = *index
                    .get(a)
                    .ok_or_else(|| Error::Model(format!("transitions[{i}]: unknown place `{a}`")))?;
                counts[p] += 1;
            }
        }
        transitions.push(Transition { name: t.name.clone(), weight, input, output });
    }
    let initial = match &doc.initial {
        None => None,
        Some(map) => {
            let mut v = vec![0u64; np];
            for (name, &k) in map {
                let p = *index.get(name).ok_or_else(|| Error::Model(format!("initial: unknown place `{name}`")))?;
                v[p] = k;
            }
            Some(v)
        }
    };
    Ok(Spn {
        places: doc.places.iter().map(|p| Place { name: p.name.clone(), bound: p.bound }).collect(),
        transitions,
        initial,
    })
}

#[derive(Clone, Debug, Default)]
pub struct SpnOptions {
    /// Target dimension; unused counters stay at zero. Defaults to the number
    /// of counter-encoded places (at least one).
    pub dimension: Option<usize>,
    /// Bounded places to encode as counters instead of in the control state.
    pub counter_places: Vec<String>,
}

/// Product translation: counter-encoded places become counters, the marking
/// of the remaining bounded places becomes part of the control state.
pub fn spn_to_pvass(net: &Spn, opts: &SpnOptions) -> Result<Pvass> {
    let np = net.places.len();
    let mut is_counter = vec![false; np];
    for (i, p) in net.places.iter().enumerate() {
        if p.bound.is_none() || opts.counter_places.contains(&p.name) {
            is_counter[i] = true;
        }
    }
    for name in &opts.counter_places {
        if !net.places.iter().any(|p| &p.name == name) {
            return model_err(format!("unknown place `{name}` in counter list"));
        }
    }
    let counter_places: Vec<usize> = (0..np).filter(|&i| is_counter[i]).collect();
    let state_places: Vec<usize> = (0..np).filter(|&i| !is_counter[i]).collect();
    let dimension = match opts.dimension {
        Some(d) if d < counter_places.len() => {
            return model_err(format!(
                "{} unbounded places do not fit into dimension {d}",
                counter_places.len()
            ))
        }
        Some(0) => return model_err("dimension must be positive"),
        Some(d) => d,
        None => counter_places.len().max(1),
    };
    for t in &net.transitions {
        for &p in &counter_places {
            if t.input[p] > 1 {
                return model_err(format!(
                    "transition `{}` consumes {} tokens from counter place `{}`; input multiplicity must be 1",
                    t.name, t.input[p], net.places[p].name
                ));
            }
        }
    }

    // Enumerate bounded markings.
    let caps: Vec<u64> = state_places.iter().map(|&p| net.places[p].bound.unwrap()).collect();
    let markings: Vec<Vec<u64>> = match &net.initial {
        Some(init) => {
            let start: Vec<u64> = state_places.iter().map(|&p| init[p]).collect();
            for (k, (&v, &c)) in start.iter().zip(&caps).enumerate() {
                if v > c {
                    return model_err(format!("initial marking exceeds bound of `{}`", net.places[state_places[k]].name));
                }
            }
            let mut seen = BTreeSet::new();
            let mut queue = VecDeque::new();
            seen.insert(start.clone());
            queue.push_back(start);
            let mut order = Vec::new();
            while let Some(mk) = queue.pop_front() {
                order.push(mk.clone());
                for t in &net.transitions {
                    if let Some(next) = fire_bounded(net, t, &state_places, &caps, &mk)? {
                        if seen.insert(next.clone()) {
                            queue.push_back(next);
                        }
                    }
                }
            }
            order
        }
        None => {
            let mut all = vec![vec![]];
            for &c in &caps {
                all = all
                    .into_iter()
                    .flat_map(|prefix: Vec<u64>| {
                        (0..=c).map(move |v| {
                            let mut x = prefix.clone();
                            x.push(v);
                            x
                        })
                    })
                    .collect();
            }
            all
        }
    };
    let marking_name = |mk: &[u64]| -> String {
        if state_places.is_empty() {
            "s".to_string()
        } else {
            let parts: Vec<String> =
                state_places.iter().zip(mk).map(|(&p, v)| format!("{}={}", net.places[p].name, v)).collect();
            format!("m[{}]", parts.join(","))
        }
    };
    let mut states: Vec<String> = markings.iter().map(|mk| marking_name(mk)).collect();
    let index: HashMap<Vec<u64>, usize> = markings.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
    let mut rules = Vec::new();
    for (si, mk) in markings.iter().enumerate() {
        for t in &net.transitions {
            let next = match fire_bounded(net, t, &state_places, &caps, mk)? {
                Some(n) => n,
                None => continue,
            };
            let dst = *index.get(&next).ok_or_else(|| {
                Error::Model(format!("transition `{}` leads to a marking outside the enumerated set", t.name))
            })?;
            let consume: Vec<i8> = (0..dimension)
                .map(|k| counter_places.get(k).map_or(0, |&p| -(t.input[p] as i8)))
                .collect();
            let produce: Vec<u32> = (0..dimension).map(|k| counter_places.get(k).map_or(0, |&p| t.output[p])).collect();
            let simple = counter_places
                .iter()
                .all(|&p| t.output[p] <= 1 && (t.input[p] == 0 || t.output[p] == 0));
            if simple {
                let delta = (0..dimension).map(|k| consume[k] + produce[k] as i8).collect();
                rules.push(Rule { src: si, delta, weight: t.weight.clone(), dst });
                continue;
            }
            let rounds = *produce.iter().max().unwrap() as usize;
            let mut prev = si;
            for j in 0..=rounds {
                let next_state = if j == rounds {
                    dst
                } else {
                    states.push(format!("{}>{}#{}", states[si], t.name, j + 1));
                    states.len() - 1
                };
                let (delta, w) = if j == 0 {
                    (consume.clone(), t.weight.clone())
                } else {
                    (produce.iter().map(|&b| (b as usize >= j) as i8).collect(), BigUint::one())
                };
                rules.push(Rule { src: prev, delta, weight: w, dst: next_state });
                prev = next_state;
            }
        }
    }
    let m = Pvass::new(dimension, states, rules);
    if let Err(Error::Model(msg)) = &m {
        if msg.contains("no outgoing rule") {
            return model_err(format!("{msg}: the net deadlocks in this marking"));
        }
    }
    m
}

/// Fires `t` on the bounded part of a marking. `Ok(None)` when a bounded
/// input is missing; an error when an output exceeds its capacity.
fn fire_bounded(net: &Spn, t: &Transition, places: &[usize], caps: &[u64], mk: &[u64]) -> Result<Option<Vec<u64>>> {
    let mut next = mk.to_vec();
    for (k, &p) in places.iter().enumerate() {
        if next[k] < t.input[p] as u64 {
            return Ok(None);
        }
        next[k] -= t.input[p] as u64;
    }
    for (k, &p) in places.iter().enumerate() {
        next[k] += t.output[p] as u64;
        if next[k] > caps[k] {
            return model_err(format!(
                "transition `{}` overflows the capacity {} of place `{}`",
                t.name, caps[k], net.places[p].name
            ));
        }
    }
    Ok(Some(next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rat;

    const FIG1: &str = r#"{
      "dimension": 2,
      "states": ["s", "t1", "t2", "u1", "u2"],
      "rules": [
        {"src": "s", "delta": [-1, 0], "weight": 10, "dst": "t1"},
        {"src": "t1", "delta": [1, 0], "weight": 1, "dst": "t2"},
        {"src": "t2", "delta": [1, 0], "weight": 1, "dst": "s"},
        {"src": "s", "delta": [0, -1], "weight": 10, "dst": "u1"},
        {"src": "u1", "delta": [0, 1], "weight": 1, "dst": "u2"},
        {"src": "u2", "delta": [0, 1], "weight": 1, "dst": "s"},
        {"src": "s", "delta": [1, 0], "weight": 1, "dst": "s"},
        {"src": "s", "delta": [0, 1], "weight": 1, "dst": "s"},
        {"src": "s", "delta": [-1, -1], "weight": 100, "dst": "s"}
      ]
    }"#;

    #[test]
    fn fig1_parses() {
        let m = parse_pvass(FIG1).unwrap();
        assert_eq!(m.num_states(), 5);
        assert_eq!(m.dimension(), 2);
        assert!(m.needs_normalization());
    }

    #[test]
    fn smallest_model() {
        let m = parse_pvass(r#"{"states":["p"],"rules":[{"src":"p","delta":[0],"weight":1,"dst":"p"}]}"#).unwrap();
        assert_eq!(m.dimension(), 1);
        assert!(m.satisfies_assumption());
    }

    #[test]
    fn schema_errors_carry_positions() {
        let e = parse_pvass("{\n \"states\": [\"p\"],\n \"rules\": 7 }").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn rejects_zero_weight_and_disconnected() {
        let z = r#"{"states":["p"],"rules":[{"src":"p","delta":[0],"weight":0,"dst":"p"}]}"#;
        assert!(parse_pvass(z).unwrap_err().to_string().contains("weight"));
        let d = r#"{"states":["p","q"],"rules":[{"src":"p","delta":[0],"weight":1,"dst":"p"},
                   {"src":"q","delta":[0],"weight":1,"dst":"q"}]}"#;
        assert!(parse_pvass(d).unwrap_err().to_string().contains("connected"));
        let l = r#"{"states":["p"],"rules":[{"src":"p","delta":[0,1],"weight":1,"dst":"p"},
                   {"src":"p","delta":[1],"weight":1,"dst":"p"}]}"#;
        assert!(parse_pvass(l).unwrap_err().to_string().contains("length"));
    }

    #[test]
    fn large_updates_expand_into_unit_chains() {
        let m = parse_pvass(
            r#"{"states":["p"],"rules":[{"src":"p","delta":[3,-1],"weight":5,"dst":"p"},
                {"src":"p","delta":[0,1],"weight":1,"dst":"p"}]}"#,
        )
        .unwrap();
        assert_eq!(m.num_states(), 3);
        let deltas: Vec<Vec<i8>> = m.rules().iter().map(|r| r.delta.clone()).collect();
        assert_eq!(deltas[0], vec![1, -1]);
        assert_eq!(deltas[1], vec![1, 0]);
        assert_eq!(deltas[2], vec![1, 0]);
        let bad = r#"{"states":["p"],"rules":[{"src":"p","delta":[-2],"weight":1,"dst":"p"}]}"#;
        assert!(parse_pvass(bad).is_err());
    }

    #[test]
    fn step_distribution_fig1() {
        let m = parse_pvass(FIG1).unwrap();
        let s = m.state_index("s").unwrap();
        let dist = step_distribution(&m, &Configuration::new(s, vec![3, 3])).unwrap();
        let get = |name: &str, c: [u64; 2]| {
            let q = m.state_index(name).unwrap();
            dist.iter().find(|(x, _)| x.state == q && x.counters == c).map(|(_, p)| p.clone()).unwrap()
        };
        assert_eq!(get("t1", [2, 3]), rat(10, 122));
        assert_eq!(get("u1", [3, 2]), rat(10, 122));
        assert_eq!(get("s", [4, 3]), rat(1, 122));
        assert_eq!(get("s", [3, 4]), rat(1, 122));
        assert_eq!(get("s", [2, 2]), rat(100, 122));
        let edge = step_distribution(&m, &Configuration::new(s, vec![0, 3])).unwrap();
        assert_eq!(edge.len(), 3);
        assert!(edge.iter().all(|(_, p)| *p == rat(10, 12) || *p == rat(1, 12)));
    }

    #[test]
    fn stuck_configuration_loops() {
        let m = parse_pvass(r#"{"states":["p"],"rules":[{"src":"p","delta":[-1],"weight":1,"dst":"p"}]}"#).unwrap();
        let c = Configuration::new(0, vec![0]);
        assert_eq!(step_distribution(&m, &c).unwrap(), vec![(c, Rat::one())]);
    }

    #[test]
    fn patterns() {
        let p = pattern_of(&Configuration::new(0, vec![12, 0]));
        assert_eq!(p.display(&["p".to_string()]), "p(*,0)");
        let q = pattern_of(&Configuration::new(0, vec![1, 7, 0]));
        assert_eq!(q.mask, vec![true, true, false]);
    }

    #[test]
    fn normalize_fig1_adds_two_copies() {
        let m = parse_pvass(FIG1).unwrap();
        let n = normalize(&m);
        assert_eq!(n.model.num_states(), 7);
        assert!(n.model.satisfies_assumption());
        assert_eq!(&n.projection[5..], &[0, 0]);
        assert_eq!(n.model.states()[5], "s[s,(0,1)]");
    }

    #[test]
    fn normalize_is_a_fixpoint() {
        let m = parse_pvass(r#"{"states":["p"],"rules":[{"src":"p","delta":[0],"weight":1,"dst":"p"}]}"#).unwrap();
        let n = normalize(&m);
        assert!(n.is_identity());
        assert_eq!(n.model, m);
    }

    #[test]
    fn spn_overflow_is_a_model_error() {
        let net = parse_spn(
            r#"{"places":[{"name":"A","bound":1},{"name":"B","bound":null}],
                "transitions":[{"name":"t","weight":1,"in":[],"out":["A","B"]}]}"#,
        )
        .unwrap();
        assert!(spn_to_pvass(&net, &SpnOptions::default()).unwrap_err().to_string().contains("capacity"));
    }

    #[test]
    fn spn_self_producing_place() {
        let net = parse_spn(
            r#"{"places":[{"name":"A","bound":null}],
                "transitions":[{"name":"t","weight":1,"in":[],"out":["A"]}]}"#,
        )
        .unwrap();
        let m = spn_to_pvass(&net, &SpnOptions::default()).unwrap();
        assert_eq!(m.num_states(), 1);
        assert_eq!(m.rules().len(), 1);
        assert_eq!(m.rules()[0].delta, vec![1]);
    }
}
