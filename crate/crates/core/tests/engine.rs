mod common;

use std::collections::BTreeSet;

use kflow::engine::{
    analyze, analyze_binding, check_theorem, compile_theorem_spec, extract_trace, saturate, saturate_naive, step,
    AnalyzeOptions, EngineError, TheoremVerdict,
};
use kflow::model::{initial_oscar_state, OscarState, Scenario, DEFAULT_MAX_UNIVERSE};
use kflow::protocols;
use kflow::rules::GroundRule;
use kflow::terms::{ValueHandle, ValueTable, ValueTerm};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn scenario(name: &str, honest: usize, w: usize) -> Scenario {
    Scenario::new(protocols::builtin(name).unwrap(), honest, w).unwrap()
}

/// The binding of the parallel session attack: Alice talks to Bob in one
/// session and to Oscar in the other.
fn lowe() -> (Scenario, kflow::engine::BindingOutcome) {
    let sc = scenario("ns", 2, 2);
    let thm = compile_theorem_spec(&sc.protocol.theorem).unwrap();
    let out = analyze_binding(&sc, &thm, &[vec![0, 1], vec![0, 2]], DEFAULT_MAX_UNIVERSE).unwrap();
    (sc, out)
}

fn find(t: &ValueTable, rendering: &str) -> ValueHandle {
    t.handles().find(|&v| t.render(v) == rendering).unwrap_or_else(|| panic!("{rendering} missing"))
}

fn look(t: &ValueTable, term: ValueTerm) -> ValueHandle {
    t.lookup(&term).unwrap_or_else(|| panic!("{term:?} missing"))
}

/// The attack values for Alice's nonce seeded by `eps`:
/// nA, E_B(A,nA), nB, E_A(nA,nB), E_O(A,nA), E_O(nB).
fn attack_values(t: &ValueTable, eps: &str) -> [ValueHandle; 6] {
    let (a, b, o) = (find(t, "A"), find(t, "B"), find(t, "O"));
    let na = look(t, ValueTerm::nonce(find(t, eps), a));
    let c1 = look(t, ValueTerm::cipher(b, [a, na]));
    let nb = look(t, ValueTerm::nonce(c1, b));
    let c2 = look(t, ValueTerm::cipher(a, [na, nb]));
    let c0 = look(t, ValueTerm::cipher(o, [a, na]));
    let c3 = look(t, ValueTerm::cipher(o, [nb]));
    [na, c1, nb, c2, c0, c3]
}

#[test]
fn step_without_applicable_rules_is_identity() {
    let inst = common::ground_instance(7);
    let s = common::state(&inst.draws);
    assert_eq!(step(&s, &[], &inst.names), s);
    let blocked: Vec<GroundRule> = inst.rules.iter().filter(|r| !r.premises.iter().all(|p| s.known.contains(p))).cloned().collect();
    assert_eq!(step(&s, &blocked, &inst.names), s);
}

#[test]
fn step_applies_encryption_and_protocol_rules() {
    let (_, out) = lowe();
    let t = &out.universe.table;
    let (a, b) = (find(t, "A"), find(t, "B"));
    let [na, e, _, reply, _, _] = attack_values(t, "eps#2");
    let names = t.render_all();
    let s = OscarState::from_draws([a, b, na]);
    let enc = GroundRule::new("encrypt", [a, b, na], e);
    let s1 = step(&s, std::slice::from_ref(&enc), &names);
    assert!(s1.known.contains(&e));
    assert_eq!(s1.learns[&e].premises, vec![a, b, na]);

    let ns2: Vec<GroundRule> = out.rules.iter().filter(|r| r.label == "ns2" && r.premises == [e]).cloned().collect();
    assert_eq!(ns2.len(), 1);
    assert_eq!(ns2[0].conclusion, reply);
    let s2 = step(&s1, &ns2, &names);
    assert_eq!(s2.learns[&reply].premises, vec![e]);
    assert_eq!(s2.learns[&reply].rule, "ns2");
}

#[test]
fn saturation_examples() {
    let inst = common::ground_instance(3);
    let s = common::state(&inst.draws);
    assert_eq!(saturate(&s, &[], &inst.names).known, s.known);

    let (_, out) = lowe();
    let t = &out.universe.table;
    // Alice's nonce in the session with Oscar
    let [na, _, nb, ..] = attack_values(t, "eps#2");
    assert!(out.state.known.contains(&na) && out.state.known.contains(&nb));
    let rounds = out.state.learns.values().map(|d| d.round).max().unwrap();
    assert!(rounds <= out.universe.len());
}

#[test]
fn ns_theorem_witness_matches_the_pattern() {
    let (_, out) = lowe();
    let TheoremVerdict::Violated(w) = &out.verdict else { panic!("expected an attack") };
    let t = &out.universe.table;
    let (a, b) = (find(t, "A"), find(t, "B"));
    let [na, nb] = w.values[..] else { panic!("{w:?}") };
    let ValueTerm::Nonce { id: ida, .. } = t.term(na) else { panic!() };
    let ValueTerm::Nonce { id: idb, seed } = t.term(nb) else { panic!() };
    assert_eq!((*ida, *idb), (a, b));
    assert_eq!(*t.term(*seed), ValueTerm::cipher(b, [a, na]));
}

#[test]
fn theorem_holds_when_oscar_only_draws() {
    let (sc, out) = lowe();
    let thm = compile_theorem_spec(&sc.protocol.theorem).unwrap();
    let s0 = initial_oscar_state(&sc, &out.universe);
    assert_eq!(check_theorem(&s0, &thm, &out.universe), TheoremVerdict::Holds);
}

#[test]
fn cpuf_single_session_holds_for_every_binding() {
    for (_, out) in common::builtin_outcomes("cpuf_renewal", 2, 1) {
        assert_eq!(out.verdict, TheoremVerdict::Holds);
    }
}

#[test]
fn ns_trace_is_the_parallel_session_attack() {
    let (_, out) = lowe();
    let TheoremVerdict::Violated(w) = &out.verdict else { panic!("expected an attack") };
    let t = &out.universe.table;
    let trace = extract_trace(&out.state, &w.values, t).unwrap();
    let got: BTreeSet<ValueHandle> =
        trace.handles.iter().copied().filter(|&v| t.render(v).starts_with("enc{")).collect();
    let [na, c1, nb, c2, c0, c3] = attack_values(t, "eps#2");
    assert_eq!(got, [c0, c1, c2, c3].into());
    assert!(trace.handles.contains(&na) && trace.handles.contains(&nb));
    assert_eq!(trace.steps.len(), trace.handles.len());

    // the report agrees with the per-binding analysis
    let r = analyze(&scenario("ns", 2, 2), AnalyzeOptions { jobs: 1, max_universe: DEFAULT_MAX_UNIVERSE }).unwrap();
    let rendered: BTreeSet<String> = r.trace.unwrap().steps.into_iter().map(|s| s.value).collect();
    assert_eq!(rendered, trace.steps.into_iter().map(|s| s.value).collect());
}

#[test]
fn drawn_witness_gives_empty_trace_and_missing_derivation_errors() {
    let (sc, out) = lowe();
    let d = *out.state.draws.iter().next().unwrap();
    assert!(extract_trace(&out.state, &[d], &out.universe.table).unwrap().steps.is_empty());
    let s0 = initial_oscar_state(&sc, &out.universe);
    let composite = out.universe.values().find(|&v| !out.universe.table.is_atom(v)).unwrap();
    assert!(matches!(extract_trace(&s0, &[composite], &out.universe.table), Err(EngineError::MissingDerivation(_))));
}

/// Replays a trace from the draws; every premise must already be present.
fn replay_ok(state: &OscarState, table: &ValueTable, targets: &[ValueHandle]) -> Result<(), String> {
    let trace = extract_trace(state, targets, table).map_err(|e| e.to_string())?;
    if trace.steps.len() > state.learns.len() {
        return Err("slice larger than learns".into());
    }
    let mut have: BTreeSet<String> = state.draws.iter().map(|&v| table.render(v)).collect();
    for s in &trace.steps {
        if let Some(p) = s.premises.iter().find(|p| !have.contains(*p)) {
            return Err(format!("{} used before derived", p));
        }
        have.insert(s.value.clone());
    }
    match targets.iter().find(|&&v| !have.contains(&table.render(v))) {
        Some(v) => Err(format!("{} not reproduced", table.render(*v))),
        None => Ok(()),
    }
}

/// The algebraic properties of one saturation problem.
fn check_saturation(draws: &BTreeSet<ValueHandle>, rules: &[GroundRule], names: &[String], table: &ValueTable, seed: u64) -> Result<(), String> {
    let s0 = OscarState::from_draws(draws.iter().copied());
    let s = saturate(&s0, rules, names);
    if s != saturate_naive(&s0, rules, names) {
        return Err("semi-naive differs from naive".into());
    }
    if saturate(&s, rules, names) != s {
        return Err("not idempotent".into());
    }
    if s.known != common::closure(draws, rules) {
        return Err("not the least closed superset of draws".into());
    }
    // FinalKnowledge: known = draws + domain(learns), disjoint
    let dom: BTreeSet<ValueHandle> = s.learns.keys().copied().collect();
    if !dom.is_disjoint(&s.draws) || s.known != &s.draws | &dom {
        return Err("known is not draws closed under learns".into());
    }
    // every entry is a real rule and its premises come strictly earlier
    let round = |v: &ValueHandle| s.learns.get(v).map_or(0, |d| d.round);
    for (v, d) in &s.learns {
        if !rules.iter().any(|r| r.conclusion == *v && r.premises == d.premises && r.label == d.rule) {
            return Err(format!("learns entry for {v} is not a rule"));
        }
        if d.premises.iter().any(|p| round(p) >= d.round) {
            return Err("learns is not acyclic".into());
        }
    }
    // minimality: dropping any derived value breaks closure
    for v in &dom {
        let mut k = s.known.clone();
        k.remove(v);
        if !rules.iter().any(|r| !k.contains(&r.conclusion) && r.premises.iter().all(|p| k.contains(p))) {
            return Err(format!("{v} removable"));
        }
    }
    // rule order does not change what is known
    let mut shuffled = rules.to_vec();
    shuffled.shuffle(&mut common::rng(seed));
    if saturate(&s0, &shuffled, names).known != s.known {
        return Err("rule order changes known".into());
    }
    // monotone in the draws
    let fewer: BTreeSet<ValueHandle> = draws.iter().copied().filter(|v| v.index() % 2 == 0).collect();
    if !saturate(&OscarState::from_draws(fewer), rules, names).known.is_subset(&s.known) {
        return Err("not monotone".into());
    }
    if s.known.iter().any(|v| v.index() >= table.len()) {
        return Err("value outside the universe".into());
    }
    let derived: Vec<ValueHandle> = dom.iter().copied().collect();
    replay_ok(&s, table, &derived)
}

#[test]
fn algebra_on_builtin_scenarios() {
    for (name, h, w) in [("ns", 2, 1), ("ns", 2, 2), ("nsl", 2, 2), ("otway_rees", 2, 2), ("cpuf_renewal", 2, 1)] {
        for (i, (sc, out)) in common::builtin_outcomes(name, h, w).into_iter().enumerate() {
            let names = out.universe.table.render_all();
            let s0 = initial_oscar_state(&sc, &out.universe);
            check_saturation(&s0.draws, &out.rules, &names, &out.universe.table, i as u64)
                .unwrap_or_else(|e| panic!("{name} w={w} binding {i}: {e}"));
            assert_eq!(out.state, saturate(&s0, &out.rules, &names));
        }
    }
}

#[test]
fn analysis_does_not_depend_on_worker_count() {
    for (name, w) in [("ns", 2), ("nsl", 2), ("otway_rees", 2)] {
        let sc = scenario(name, 2, w);
        let strip = |mut r: kflow::engine::Report| {
            r.ms = 0;
            r.to_json()
        };
        let one = strip(analyze(&sc, AnalyzeOptions { jobs: 1, max_universe: DEFAULT_MAX_UNIVERSE }).unwrap());
        let many = strip(analyze(&sc, AnalyzeOptions { jobs: 6, max_universe: DEFAULT_MAX_UNIVERSE }).unwrap());
        assert_eq!(one, many, "{name}");
    }
}

#[test]
fn overflow_is_reported() {
    let err = analyze(&scenario("ns", 2, 2), AnalyzeOptions { jobs: 2, max_universe: 4 }).unwrap_err();
    assert!(err.to_string().contains("4"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn algebra_on_random_instances(seed in any::<u64>()) {
        let inst = common::ground_instance(seed);
        let draws: BTreeSet<ValueHandle> = inst.draws.iter().copied().collect();
        check_saturation(&draws, &inst.rules, &inst.names, &inst.table, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn saturation_is_monotone(seed in any::<u64>(), mask in any::<u16>()) {
        let inst = common::ground_instance(seed);
        let small: BTreeSet<ValueHandle> = inst.draws.iter().copied().collect();
        let big: BTreeSet<ValueHandle> =
            small.iter().copied().chain(inst.values.iter().copied().filter(|v| mask >> (v.index() % 16) & 1 == 1)).collect();
        let a = saturate(&OscarState::from_draws(small), &inst.rules, &inst.names);
        let b = saturate(&OscarState::from_draws(big), &inst.rules, &inst.names);
        prop_assert!(a.known.is_subset(&b.known));
    }

    #[test]
    fn step_iteration_reaches_saturation(seed in any::<u64>()) {
        let inst = common::ground_instance(seed);
        let mut s = common::state(&inst.draws);
        let full = saturate(&s, &inst.rules, &inst.names);
        for _ in 0..inst.values.len() {
            let n = step(&s, &inst.rules, &inst.names);
            prop_assert!(s.known.is_subset(&n.known));
            s = n;
        }
        prop_assert_eq!(s, full);
    }
}

#[test]
fn random_instances_exercise_derivations() {
    let derived: usize = (0..100)
        .map(|seed| {
            let inst = common::ground_instance(seed);
            saturate(&common::state(&inst.draws), &inst.rules, &inst.names).learns.len()
        })
        .sum();
    assert!(derived > 50, "generator too weak: {derived}");
}
