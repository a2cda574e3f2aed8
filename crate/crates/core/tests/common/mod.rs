//! Random instance generators shared by the property suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use kflow::engine::{analyze_binding, compile_theorem_spec, BindingOutcome};
use kflow::model::{enumerate_bindings, FullRule, FullState, OscarState, Scenario, DEFAULT_MAX_UNIVERSE};
use kflow::protocols;
use kflow::rules::GroundRule;
use kflow::terms::{AtomKind, ValueHandle, ValueTable, ValueTerm};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct generic atoms `v0..v{n-1}`.
pub fn atoms(n: usize) -> (ValueTable, Vec<ValueHandle>) {
    let mut t = ValueTable::new();
    let hs = (0..n).map(|i| t.intern(ValueTerm::atom(format!("v{i}"), AtomKind::Generic)).unwrap()).collect();
    (t, hs)
}

fn subset<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], p: f64) -> Vec<T> {
    items.iter().copied().filter(|_| rng.gen_bool(p)).collect()
}

/// Knowledge of every principal over abstract values, with tell rules.
#[derive(Debug, Clone)]
pub struct FullInstance {
    pub table: ValueTable,
    pub values: Vec<ValueHandle>,
    pub principals: Vec<usize>,
    pub rules: Vec<FullRule>,
    pub k0: FullState,
}

impl FullInstance {
    pub fn names(&self) -> Vec<String> {
        self.table.render_all()
    }
}

fn random_rules(rng: &mut ChaCha8Rng, principals: &[usize], values: &[ValueHandle], max_rules: usize) -> Vec<FullRule> {
    let pairs: Vec<(usize, ValueHandle)> =
        principals.iter().flat_map(|&p| values.iter().map(move |&v| (p, v))).collect();
    let n = rng.gen_range(0..=max_rules);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..=3);
            FullRule {
                teller: *principals.choose(rng).unwrap(),
                value: *values.choose(rng).unwrap(),
                receiver: *principals.choose(rng).unwrap(),
                needs: pairs.choose_multiple(rng, k).copied().collect(),
            }
        })
        .collect()
}

/// Up to 3 honest principals `0..h` and Oscar `h`; every honest principal
/// draws every value, Oscar a random subset. At most 6 values, 8 rules.
pub fn projection_instance(seed: u64) -> (FullInstance, usize) {
    let mut rng = rng(seed);
    let h = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=6);
    let (table, values) = atoms(n);
    let principals: Vec<usize> = (0..=h).collect();
    let rules = random_rules(&mut rng, &principals, &values, 8);
    let mut k0: FullState = (0..h).flat_map(|p| values.iter().map(move |&v| (p, v))).collect();
    k0.extend(subset(&mut rng, &values, 0.4).into_iter().map(|v| (h, v)));
    (FullInstance { table, values, principals, rules, k0 }, h)
}

/// Up to 5 principals of which at least two are adversaries, arbitrary
/// initial knowledge.
pub fn merge_instance(seed: u64) -> (FullInstance, BTreeSet<usize>) {
    let mut rng = rng(seed);
    let np = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=6);
    let (table, values) = atoms(n);
    let principals: Vec<usize> = (0..np).collect();
    let mut advs: BTreeSet<usize> = subset(&mut rng, &principals, 0.5).into_iter().collect();
    while advs.len() < 2 {
        advs.insert(*principals.choose(&mut rng).unwrap());
    }
    let rules = random_rules(&mut rng, &principals, &values, 8);
    let pairs: Vec<(usize, ValueHandle)> =
        principals.iter().flat_map(|&p| values.iter().map(move |&v| (p, v))).collect();
    let k0 = subset(&mut rng, &pairs, 0.3).into_iter().collect();
    (FullInstance { table, values, principals, rules, k0 }, advs)
}

/// Ground rules over up to 10 abstract values with a random draw set.
#[derive(Debug, Clone)]
pub struct GroundInstance {
    pub table: ValueTable,
    pub names: Vec<String>,
    pub values: Vec<ValueHandle>,
    pub rules: Vec<GroundRule>,
    pub draws: Vec<ValueHandle>,
}

pub fn ground_instance(seed: u64) -> GroundInstance {
    let mut rng = rng(seed);
    let n = rng.gen_range(1..=10);
    let (table, values) = atoms(n);
    let nr = rng.gen_range(0..=14);
    let mut rules = Vec::new();
    for i in 0..nr {
        let c = *values.choose(&mut rng).unwrap();
        let others: Vec<ValueHandle> = values.iter().copied().filter(|&v| v != c).collect();
        let k = rng.gen_range(0..=others.len().min(3));
        let ps: Vec<ValueHandle> = others.choose_multiple(&mut rng, k).copied().collect();
        // a few shared labels so the label tie-break is exercised
        rules.push(GroundRule::new(format!("r{}", i % 4), ps, c));
    }
    let draws = subset(&mut rng, &values, 0.3);
    GroundInstance { names: table.render_all(), table, values, rules, draws }
}

pub fn state(draws: &[ValueHandle]) -> OscarState {
    OscarState::from_draws(draws.iter().copied())
}

/// Every binding outcome of a built-in at `honest` principals and `w`
/// sessions.
pub fn builtin_outcomes(name: &str, honest: usize, w: usize) -> Vec<(Scenario, BindingOutcome)> {
    let sc = Scenario::new(protocols::builtin(name).unwrap(), honest, w).unwrap();
    let thm = compile_theorem_spec(&sc.protocol.theorem).unwrap();
    enumerate_bindings(&sc)
        .iter()
        .map(|b| (sc.clone(), analyze_binding(&sc, &thm, b, DEFAULT_MAX_UNIVERSE).unwrap()))
        .collect()
}

/// Brute-force closure: repeatedly add any conclusion whose premises are
/// all present.
pub fn closure(draws: &BTreeSet<ValueHandle>, rules: &[GroundRule]) -> BTreeSet<ValueHandle> {
    let mut k = draws.clone();
    loop {
        let before = k.len();
        for r in rules {
            if r.premises.iter().all(|p| k.contains(p)) {
                k.insert(r.conclusion);
            }
        }
        if k.len() == before {
            return k;
        }
    }
}
