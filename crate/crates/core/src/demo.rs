//! Built-in models used by the demos, the acceptance harness and the tests.

use crate::model::{parse_pvass, parse_spn, Pvass, Spn};

/// Two unbounded places; both decrease together with weight 100.
pub const FIG1_SPN: &str = r#"{
  "places": [{"name": "A"}, {"name": "B"}],
  "transitions": [
    {"name": "inA", "weight": 1, "in": [], "out": ["A"]},
    {"name": "inB", "weight": 1, "in": [], "out": ["B"]},
    {"name": "both", "weight": 100, "in": ["A", "B"], "out": []},
    {"name": "t1", "weight": 10, "in": ["A"], "out": ["A", "A"]},
    {"name": "t2", "weight": 10, "in": ["B"], "out": ["B", "B"]}
  ]
}"#;

pub const FIG1_PVASS: &str = r#"{
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

pub fn fig1() -> Pvass {
    parse_pvass(FIG1_PVASS).expect("embedded model")
}

pub fn fig1_spn() -> Spn {
    parse_spn(FIG1_SPN).expect("embedded net")
}

fn build(dim: usize, states: &[String], rules: &[(String, Vec<i64>, u64, String)]) -> Pvass {
    let rules: Vec<String> = rules
        .iter()
        .map(|(s, d, w, t)| {
            let d: Vec<String> = d.iter().map(|x| x.to_string()).collect();
            format!(r#"{{"src":"{s}","delta":[{}],"weight":{w},"dst":"{t}"}}"#, d.join(","))
        })
        .collect();
    let states: Vec<String> = states.iter().map(|s| format!("\"{s}\"")).collect();
    let m = parse_pvass(&format!(r#"{{"states":[{}],"rules":[{}]}}"#, states.join(","), rules.join(","))).expect("demo model");
    assert_eq!(m.dimension(), dim);
    m
}

/// One-counter family: p decrements into itself or into one of k sinks q_i
/// that loop with effect 0. From p(n) the run ends in q_i(*), q_i(0) or p(0).
pub fn remark(k: usize) -> Pvass {
    let mut states = vec!["p".to_string()];
    let mut rules = vec![("p".to_string(), vec![-1], 1, "p".to_string())];
    for i in 1..=k {
        let q = format!("q{i}");
        states.push(q.clone());
        rules.push(("p".into(), vec![-1], 1, q.clone()));
        rules.push((q.clone(), vec![0], 1, q));
    }
    build(1, &states, &rules)
}

/// Oscillating three-counter model. The hub p doubles one counter at a
/// time: self-loops add 2 to a counter with weight `p_w`, a joint decrement
/// has weight `r_w`, and three transfer gadgets (weight `q_w`) move mass
/// from one counter pair to the next counter, so the phases rotate.
pub fn three_counter(p_w: u64, q_w: u64, r_w: u64) -> Pvass {
    three_counter_variant(p_w, q_w, r_w, 3)
}

/// The contracting variant: transfers return fewer tokens than they take,
/// so the counter sum tends to decrease and frequencies settle.
pub fn three_counter_contracting(p_w: u64, q_w: u64, r_w: u64) -> Pvass {
    three_counter_variant(p_w, q_w, r_w, 1)
}

fn three_counter_variant(p_w: u64, q_w: u64, r_w: u64, gain: i64) -> Pvass {
    let s = |x: &str| x.to_string();
    let states = vec![s("p"), s("t1"), s("t2"), s("t3")];
    let rules = vec![
        (s("p"), vec![2, 0, 0], p_w, s("p")),
        (s("p"), vec![0, 2, 0], p_w, s("p")),
        (s("p"), vec![0, 0, 2], p_w, s("p")),
        (s("p"), vec![-1, -1, -1], r_w, s("p")),
        (s("p"), vec![-1, -1, 0], q_w, s("t1")),
        (s("t1"), vec![0, gain, 0], 1, s("p")),
        (s("p"), vec![0, -1, -1], q_w, s("t2")),
        (s("t2"), vec![0, 0, gain], 1, s("p")),
        (s("p"), vec![-1, 0, -1], q_w, s("t3")),
        (s("t3"), vec![gain, 0, 0], 1, s("p")),
    ];
    build(3, &states, &rules)
}
