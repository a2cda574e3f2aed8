//! Saturation of Oscar's knowledge, theorem checking, attack traces and
//! the bounded-session analysis driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    build_universe, enumerate_bindings, initial_oscar_state, Derivation, ModelError, OscarState,
    Scenario, SessionBinding, Universe,
};
use crate::protocols::{ProtocolSpec, TheoremSpec};
use crate::rules::{
    compile_schema, compile_theorem, ground_all, primitive_schema, Binding, Compiled, GroundRule,
    Solver, World,
};
use crate::terms::{ValueHandle, ValueTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("value {0} is neither drawn nor derived")]
    MissingDerivation(String),
}

/// Orders candidate derivations: by rule label, then by the canonical
/// rendering of the premises.
fn derivation_key<'a>(r: &'a GroundRule, names: &'a [String]) -> (&'a str, Vec<&'a str>) {
    let mut ps: Vec<&str> = r.premises.iter().map(|p| names[p.index()].as_str()).collect();
    ps.sort_unstable();
    (r.label.as_str(), ps)
}

/// One application of every rule whose premises are known. `names` is the
/// canonical rendering of every value, indexed by handle.
pub fn step(state: &OscarState, rules: &[GroundRule], names: &[String]) -> OscarState {
    let round = state.learns.values().map(|d| d.round).max().unwrap_or(0) + 1;
    let mut best: BTreeMap<ValueHandle, &GroundRule> = BTreeMap::new();
    for r in rules {
        if state.known.contains(&r.conclusion) || !r.premises.iter().all(|p| state.known.contains(p)) {
            continue;
        }
        let e = best.entry(r.conclusion).or_insert(r);
        if derivation_key(r, names) < derivation_key(e, names) {
            *e = r;
        }
    }
    let mut next = state.clone();
    for (v, r) in best {
        next.known.insert(v);
        next.learns.insert(v, Derivation { premises: r.premises.clone(), rule: r.label.clone(), round });
    }
    next
}

/// Iterates [`step`] until nothing changes.
pub fn saturate_naive(state: &OscarState, rules: &[GroundRule], names: &[String]) -> OscarState {
    let mut s = state.clone();
    loop {
        let n = step(&s, rules, names);
        if n.known.len() == s.known.len() {
            return s;
        }
        s = n;
    }
}

/// Semi-naive saturation: a rule is only reconsidered when one of its
/// premises was learned in the previous round. Produces exactly the state
/// of [`saturate_naive`].
pub fn saturate(state: &OscarState, rules: &[GroundRule], names: &[String]) -> OscarState {
    let mut s = state.clone();
    let mut round = s.learns.values().map(|d| d.round).max().unwrap_or(0);
    let mut missing: Vec<usize> = Vec::with_capacity(rules.len());
    let mut watchers: BTreeMap<ValueHandle, Vec<usize>> = BTreeMap::new();
    let mut ready: Vec<usize> = Vec::new();
    for (i, r) in rules.iter().enumerate() {
        let m = r.premises.iter().filter(|p| !s.known.contains(p)).count();
        missing.push(m);
        for p in &r.premises {
            if !s.known.contains(p) {
                watchers.entry(*p).or_default().push(i);
            }
        }
        if m == 0 {
            ready.push(i);
        }
    }
    while !ready.is_empty() {
        round += 1;
        let mut best: BTreeMap<ValueHandle, usize> = BTreeMap::new();
        for &i in &ready {
            let r = &rules[i];
            if s.known.contains(&r.conclusion) {
                continue;
            }
            let e = best.entry(r.conclusion).or_insert(i);
            if derivation_key(r, names) < derivation_key(&rules[*e], names) {
                *e = i;
            }
        }
        ready.clear();
        for (v, i) in best {
            let r = &rules[i];
            s.known.insert(v);
            s.learns.insert(v, Derivation { premises: r.premises.clone(), rule: r.label.clone(), round });
            for &j in watchers.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                missing[j] -= 1;
                if missing[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    s
}

/// A variable assignment satisfying a theorem pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    /// `(variable, rendering)` in declaration order.
    pub bindings: Vec<(String, String)>,
    /// Values bound to value variables.
    pub values: Vec<ValueHandle>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TheoremVerdict {
    Holds,
    Violated(Witness),
}

pub fn compile_theorem_spec(thm: &TheoremSpec) -> Result<Compiled, ModelError> {
    Ok(compile_theorem(&thm.label, &thm.vars, &thm.guards)?)
}

/// Searches the saturated state for an instance of the forbidden pattern.
pub fn check_theorem(state: &OscarState, thm: &Compiled, universe: &Universe) -> TheoremVerdict {
    let world = World::new(&universe.ctx, &universe.table)
        .with_knowledge(state.known.iter().copied(), state.draws.iter().copied());
    let solver = Solver::new(&world, thm, false);
    let mut found = None;
    solver.solve(Vec::new(), &mut |env| {
        found = Some(env.clone());
        false
    });
    let Some(env) = found else { return TheoremVerdict::Holds };
    let mut bindings = Vec::new();
    let mut values = Vec::new();
    for (v, b) in thm.vars.iter().zip(&env) {
        let shown = match b {
            Some(Binding::Value(h)) => {
                values.push(*h);
                universe.table.render(*h)
            }
            Some(Binding::Principal(p)) => universe.ctx.principals[*p].name.clone(),
            Some(Binding::Set(hs)) => {
                let mut parts: Vec<String> = hs.iter().map(|&h| universe.table.render(h)).collect();
                parts.sort();
                format!("{{{}}}", parts.join(", "))
            }
            None => "?".into(),
        };
        bindings.push((v.name.clone(), shown));
    }
    TheoremVerdict::Violated(Witness { bindings, values })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub value: String,
    pub premises: Vec<String>,
    pub rule: String,
}

/// The backward slice of the learns relation from the witness values,
/// ordered so that every step's premises are drawn or appear earlier.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttackTrace {
    pub steps: Vec<TraceStep>,
    pub handles: Vec<ValueHandle>,
    pub witness: Vec<(String, String)>,
}

pub fn extract_trace(state: &OscarState, targets: &[ValueHandle], table: &ValueTable) -> Result<AttackTrace, EngineError> {
    let mut slice: BTreeSet<ValueHandle> = BTreeSet::new();
    let mut stack: Vec<ValueHandle> = targets.to_vec();
    while let Some(v) = stack.pop() {
        if state.draws.contains(&v) || slice.contains(&v) {
            continue;
        }
        let d = state.learns.get(&v).ok_or_else(|| EngineError::MissingDerivation(table.render(v)))?;
        slice.insert(v);
        stack.extend(d.premises.iter().copied());
    }
    let mut order: Vec<(usize, String, ValueHandle)> =
        slice.iter().map(|&v| (state.learns[&v].round, table.render(v), v)).collect();
    order.sort();
    let mut trace = AttackTrace::default();
    for (_, value, v) in order {
        let d = &state.learns[&v];
        let mut premises: Vec<String> = d.premises.iter().map(|&p| table.render(p)).collect();
        premises.sort();
        trace.steps.push(TraceStep { value, premises, rule: d.rule.clone() });
        trace.handles.push(v);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Secure(usize),
    Attack,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Secure(w) => write!(f, "Secure({w})"),
            Verdict::Attack => f.write_str("Attack"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub protocol: String,
    pub scenario: String,
    pub sessions: usize,
    pub bindings_explored: usize,
    pub verdict: Verdict,
    pub trace: Option<AttackTrace>,
    /// Session bindings of the attack, as principal names per role.
    pub attack_bindings: Vec<Vec<String>>,
    pub ms: u128,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    protocol: &'a str,
    scenario: &'a str,
    sessions: usize,
    bindings_explored: usize,
    verdict: String,
    attack_sessions: &'a [Vec<String>],
    witness: Vec<String>,
    trace: &'a [TraceStep],
    ms: u128,
}

impl Report {
    /// JSON with the timing isolated in the last key, `ms`.
    pub fn to_json(&self) -> String {
        let (witness, trace) = match &self.trace {
            Some(t) => (t.witness.iter().map(|(k, v)| format!("{k}={v}")).collect(), t.steps.as_slice()),
            None => (Vec::new(), &[][..]),
        };
        let j = JsonReport {
            protocol: &self.protocol,
            scenario: &self.scenario,
            sessions: self.sessions,
            bindings_explored: self.bindings_explored,
            verdict: self.verdict.to_string(),
            attack_sessions: &self.attack_bindings,
            witness,
            trace,
            ms: self.ms,
        };
        serde_json::to_string_pretty(&j).expect("report serializes")
    }

    /// Graphviz digraph of the trace: one node per value, one edge per
    /// premise labeled with the rule.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph learns {\n  rankdir=LR;\n  node [shape=box, fontname=\"monospace\"];\n");
        let Some(t) = &self.trace else {
            out.push_str("}\n");
            return out;
        };
        let mut nodes: BTreeSet<&str> = BTreeSet::new();
        for s in &t.steps {
            nodes.insert(&s.value);
            nodes.extend(s.premises.iter().map(String::as_str));
        }
        let derived: BTreeSet<&str> = t.steps.iter().map(|s| s.value.as_str()).collect();
        for n in &nodes {
            let style = if derived.contains(n) { "" } else { ", style=dashed" };
            let _ = writeln!(out, "  {} [label={}{style}];", dot_quote(n), dot_quote(n));
        }
        for s in &t.steps {
            for p in &s.premises {
                let _ = writeln!(out, "  {} -> {} [label={}];", dot_quote(p), dot_quote(&s.value), dot_quote(&s.rule));
            }
        }
        out.push_str("}\n");
        out
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Ground rules of a protocol (primitives first) over a built universe.
pub fn ground_protocol(protocol: &ProtocolSpec, universe: &Universe) -> Result<Vec<GroundRule>, ModelError> {
    let mut compiled = Vec::new();
    for p in &protocol.primitives {
        compiled.push(compile_schema(&primitive_schema(*p))?);
    }
    for s in &protocol.schemas {
        compiled.push(compile_schema(s)?);
    }
    let world = World::new(&universe.ctx, &universe.table);
    Ok(ground_all(&compiled, &world))
}

/// Result of analyzing one session binding.
#[derive(Debug, Clone)]
pub struct BindingOutcome {
    pub universe: Universe,
    pub rules: Vec<GroundRule>,
    pub state: OscarState,
    pub verdict: TheoremVerdict,
}

pub fn analyze_binding(
    scenario: &Scenario,
    thm: &Compiled,
    bindings: &[SessionBinding],
    cap: usize,
) -> Result<BindingOutcome, ModelError> {
    let universe = build_universe(scenario, bindings, cap)?;
    let rules = ground_protocol(&scenario.protocol, &universe)?;
    let names = universe.table.render_all();
    let state = saturate(&initial_oscar_state(scenario, &universe), &rules, &names);
    let verdict = check_theorem(&state, thm, &universe);
    Ok(BindingOutcome { universe, rules, state, verdict })
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub jobs: usize,
    pub max_universe: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_universe: crate::model::DEFAULT_MAX_UNIVERSE,
        }
    }
}

/// Wall-clock timing; wasm32 has no clock in std, so it reports 0 there.
struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        Clock(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn millis(&self) -> u128 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_millis();
        #[cfg(target_arch = "wasm32")]
        0
    }
}

/// Checks every session binding of `scenario`; the attack with the lowest
/// binding index wins, independently of the worker count.
pub fn analyze(scenario: &Scenario, opts: AnalyzeOptions) -> Result<Report, EngineError> {
    let clock = Clock::start();
    let thm = compile_theorem_spec(&scenario.protocol.theorem)?;
    for s in &scenario.protocol.schemas {
        compile_schema(s).map_err(ModelError::from)?;
    }
    let all = enumerate_bindings(scenario);
    let next = AtomicUsize::new(0);
    let first_attack = AtomicUsize::new(usize::MAX);
    let first_error = AtomicUsize::new(usize::MAX);
    let results: Mutex<BTreeMap<usize, Result<BindingOutcome, ModelError>>> = Mutex::new(BTreeMap::new());
    let jobs = opts.jobs.clamp(1, all.len().max(1));
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= all.len() || i > first_attack.load(Ordering::SeqCst) || i > first_error.load(Ordering::SeqCst) {
            break;
        }
        let out = analyze_binding(scenario, &thm, &all[i], opts.max_universe);
        match &out {
            Ok(o) if matches!(o.verdict, TheoremVerdict::Violated(_)) => {
                first_attack.fetch_min(i, Ordering::SeqCst);
                results.lock().unwrap().insert(i, out);
            }
            Ok(_) => {}
            Err(_) => {
                first_error.fetch_min(i, Ordering::SeqCst);
                results.lock().unwrap().insert(i, out);
            }
        }
    };
    // one job runs inline, which also keeps targets without threads working
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|sc| {
            for _ in 0..jobs {
                sc.spawn(worker);
            }
        });
    }
    let results = results.into_inner().unwrap();
    let mut report = Report {
        protocol: scenario.protocol.name.clone(),
        scenario: scenario.summary(),
        sessions: scenario.sessions,
        bindings_explored: all.len(),
        verdict: Verdict::Secure(scenario.sessions),
        trace: None,
        attack_bindings: Vec::new(),
        ms: 0,
    };
    // the lowest-indexed interesting binding decides, whether attack or error
    if let Some((&i, out)) = results.iter().next() {
        let o = out.clone()?;
        let TheoremVerdict::Violated(w) = &o.verdict else { unreachable!() };
        let targets: Vec<ValueHandle> = w.values.iter().copied().filter(|v| o.state.known.contains(v)).collect();
        let mut trace = extract_trace(&o.state, &targets, &o.universe.table)?;
        trace.witness = w.bindings.clone();
        report.bindings_explored = i + 1;
        report.verdict = Verdict::Attack;
        report.trace = Some(trace);
        report.attack_bindings = all[i]
            .iter()
            .map(|s| s.iter().map(|&p| scenario.principals[p].name.clone()).collect())
            .collect();
    }
    report.ms = clock.millis();
    Ok(report)
}
