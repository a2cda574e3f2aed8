mod common;

use std::collections::{BTreeMap, BTreeSet};

use kflow::engine::ground_protocol;
use kflow::model::{build_universe, enumerate_bindings, Scenario, Universe, DEFAULT_MAX_UNIVERSE};
use kflow::protocols;
use kflow::rules::{
    compile_schema, ground, primitive_decryptor, primitive_encryptor, primitive_get_response, primitive_get_secret,
    primitive_hasher, primitive_nonce_generator, primitive_tuple_projection, Context, Guard, GroundRule, KindTest,
    PrincipalAtoms, ProtoOption, RuleSchema, World, IDENT,
};
use kflow::terms::{AtomKind, ValueHandle, ValueKind, ValueTable, ValueTerm};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn universe(name: &str, honest: usize, bindings: &[Vec<usize>]) -> (Scenario, Universe) {
    let sc = Scenario::new(protocols::builtin(name).unwrap(), honest, bindings.len()).unwrap();
    let u = build_universe(&sc, bindings, DEFAULT_MAX_UNIVERSE).unwrap();
    (sc, u)
}

fn ground_in(schema: &RuleSchema, u: &Universe) -> Vec<GroundRule> {
    ground(&compile_schema(schema).unwrap(), &World::new(&u.ctx, &u.table))
}

fn show(u: &Universe, r: &GroundRule) -> (Vec<String>, String) {
    let mut ps: Vec<String> = r.premises.iter().map(|&p| u.table.render(p)).collect();
    ps.sort();
    (ps, u.table.render(r.conclusion))
}

fn find(u: &Universe, rendering: &str) -> ValueHandle {
    u.values().find(|&v| u.table.render(v) == rendering).unwrap_or_else(|| panic!("{rendering} not in universe"))
}

fn of_kind(u: &Universe, k: ValueKind) -> Vec<ValueHandle> {
    u.values().filter(|&v| u.table.kind_of(v) == k).collect()
}

/// Alice, Bob, Oscar with one seed and every first-message cipher present.
fn ns_world() -> (ValueTable, Context) {
    let mut t = ValueTable::new();
    let ids: Vec<ValueHandle> =
        ["A", "B", "O"].iter().map(|l| t.intern(ValueTerm::atom(*l, AtomKind::Identity)).unwrap()).collect();
    let eps = t.intern(ValueTerm::atom("eps#1", AtomKind::Seed)).unwrap();
    for &p in &ids[..2] {
        let n = t.intern(ValueTerm::nonce(eps, p)).unwrap();
        for &q in &ids {
            t.intern(ValueTerm::cipher(q, [p, n])).unwrap();
        }
    }
    let principals = ["Alice", "Bob", "Oscar"]
        .iter()
        .zip(&ids)
        .map(|(n, &h)| PrincipalAtoms {
            name: n.to_string(),
            honest: *n != "Oscar",
            attrs: [(IDENT.to_string(), h)].into(),
        })
        .collect();
    let fresh = [("eps".to_string(), vec![eps])].into();
    let opts = [ProtoOption::PublicKeyCryptography, ProtoOption::IdentitiesAreKeys].into();
    (t, Context::new(principals, BTreeMap::new(), fresh, opts))
}

#[test]
fn ns_schema_grounds_to_six_free_messages() {
    let (t, ctx) = ns_world();
    let ns1 = protocols::ns().schema("ns1").unwrap().clone();
    let rules = ground(&compile_schema(&ns1).unwrap(), &World::new(&ctx, &t));
    assert_eq!(rules.len(), 2 * 3);
    assert!(rules.iter().all(|r| r.premises.is_empty()));
    let conclusions: BTreeSet<ValueHandle> = rules.iter().map(|r| r.conclusion).collect();
    assert_eq!(conclusions.len(), 6);
}

#[test]
fn kind_guard_against_atoms_is_empty() {
    let (t, ctx) = {
        let (t, _) = common::atoms(4);
        (t, Context::default())
    };
    let mut s = primitive_tuple_projection();
    s.guards.push(Guard::Kind(kflow::rules::Template::var("X"), KindTest::Value(ValueKind::Ciphertext)));
    assert!(ground(&compile_schema(&s).unwrap(), &World::new(&ctx, &t)).is_empty());
    assert!(ground(&compile_schema(&primitive_decryptor()).unwrap(), &World::new(&ctx, &t)).is_empty());
}

#[test]
fn encryptor_examples() {
    let (_, u) = universe("ns", 2, &[vec![0, 1]]);
    let rules = ground_in(&primitive_encryptor(), &u);
    let shown: BTreeSet<(Vec<String>, String)> = rules.iter().map(|r| show(&u, r)).collect();
    let e = "enc{key=B, plain={A, nonce{seed=eps#1, id=A}}}".to_string();
    assert!(shown.contains(&(vec!["A".into(), "B".into(), "nonce{seed=eps#1, id=A}".into()], e)));
    // exactly one encryption rule per cipher of the universe
    assert_eq!(rules.len(), of_kind(&u, ValueKind::Ciphertext).len());
}

#[test]
fn encryptor_unary_plaintext() {
    let (mut t, hs) = common::atoms(2);
    let c = t.intern(ValueTerm::cipher(hs[0], [hs[1]])).unwrap();
    let ctx = Context::default();
    let rules = ground(&compile_schema(&primitive_encryptor()).unwrap(), &World::new(&ctx, &t));
    assert_eq!(rules, vec![GroundRule::new("encrypt", [hs[0], hs[1]], c)]);
}

#[test]
fn decryptor_splits_plaintext_without_public_keys() {
    let (mut t, hs) = common::atoms(3);
    let c = t.intern(ValueTerm::cipher(hs[0], [hs[1], hs[2]])).unwrap();
    let rules = ground(&compile_schema(&primitive_decryptor()).unwrap(), &World::new(&Context::default(), &t));
    let expected = vec![GroundRule::new("decrypt", [c, hs[0]], hs[1]), GroundRule::new("decrypt", [c, hs[0]], hs[2])];
    assert_eq!(rules, expected);
}

#[test]
fn decryptor_needs_oscar_key_with_public_keys() {
    let (_, u) = universe("ns", 2, &[vec![0, 1], vec![0, 2]]);
    let o = find(&u, "O");
    let rules = ground_in(&primitive_decryptor(), &u);
    let mut expected = BTreeSet::new();
    for c in of_kind(&u, ValueKind::Ciphertext) {
        if let ValueTerm::Ciphertext { key, plaintext } = u.table.term(c) {
            if *key == o {
                for &x in plaintext {
                    if x != o {
                        expected.insert(GroundRule::new("decrypt", [c, o], x));
                    }
                }
            }
        }
    }
    assert!(!expected.is_empty());
    assert_eq!(rules.into_iter().collect::<BTreeSet<_>>(), expected);
    // Oscar's key opens E_O(A, nA) and yields nA
    let e = find(&u, "enc{key=O, plain={A, nonce{seed=eps#2, id=A}}}");
    let na = find(&u, "nonce{seed=eps#2, id=A}");
    assert!(expected.contains(&GroundRule::new("decrypt", [e, o], na)));
}

#[test]
fn honest_ciphers_stay_closed() {
    let (_, u) = universe("ns", 2, &[vec![0, 1]]);
    let a = find(&u, "A");
    let rules = ground_in(&primitive_decryptor(), &u);
    let keyed_by_a = |v: &ValueHandle| matches!(u.table.term(*v), ValueTerm::Ciphertext { key, .. } if *key == a);
    assert!(of_kind(&u, ValueKind::Ciphertext).iter().any(keyed_by_a));
    assert!(rules.iter().all(|r| !r.premises.iter().any(keyed_by_a)));
}

#[test]
fn nonce_generator_only_issues_oscar_nonces() {
    let (t, ctx) = ns_world();
    let mut t = t;
    let ids: Vec<ValueHandle> = ["A", "O"].iter().map(|l| t.lookup(&ValueTerm::atom(*l, AtomKind::Identity)).unwrap()).collect();
    let c = t.handles().find(|&h| t.kind_of(h) == ValueKind::Ciphertext).unwrap();
    let nc_o = t.intern(ValueTerm::nonce(c, ids[1])).unwrap();
    t.intern(ValueTerm::nonce(c, ids[0])).unwrap();
    let rules = ground(&compile_schema(&primitive_nonce_generator()).unwrap(), &World::new(&ctx, &t));
    assert_eq!(rules, vec![GroundRule::new("nonce", [c], nc_o)]);
}

#[test]
fn honest_universe_has_no_oscar_nonce_rules() {
    let (_, u) = universe("ns", 2, &[vec![0, 1], vec![1, 0]]);
    assert!(ground_in(&primitive_nonce_generator(), &u).is_empty());
    assert!(!of_kind(&u, ValueKind::Nonce).is_empty());
}

#[test]
fn hasher_examples() {
    let (mut t, hs) = common::atoms(3);
    let h1 = t.intern(ValueTerm::hash([hs[0]])).unwrap();
    let h2 = t.intern(ValueTerm::hash([hs[1], hs[2]])).unwrap();
    assert_ne!(h1, h2);
    let rules = ground(&compile_schema(&primitive_hasher()).unwrap(), &World::new(&Context::default(), &t));
    assert_eq!(rules, vec![GroundRule::new("hash", [hs[0]], h1), GroundRule::new("hash", [hs[1], hs[2]], h2)]);
}

#[test]
fn hasher_builds_new_challenge_in_cpuf() {
    let (_, u) = universe("cpuf_renewal", 1, &[vec![0]]);
    let rules = ground_in(&primitive_hasher(), &u);
    let new_chall = find(&u, "hash{hash{pre#1}, prog.A}");
    let old = find(&u, "hash{pre#1}");
    let prog = find(&u, "prog.A");
    assert!(rules.contains(&GroundRule::new("hash", [old, prog], new_chall)));
    assert_eq!(rules.len(), of_kind(&u, ValueKind::Hash).len());
}

#[test]
fn tuple_projection_examples() {
    let (mut t, hs) = common::atoms(2);
    let c = t.intern(ValueTerm::cipher(hs[0], [hs[1]])).unwrap();
    let inner = t.intern(ValueTerm::tuple([hs[0], c])).unwrap();
    let outer = t.intern(ValueTerm::tuple([inner, hs[1]])).unwrap();
    let rules = ground(&compile_schema(&primitive_tuple_projection()).unwrap(), &World::new(&Context::default(), &t));
    let expected: BTreeSet<GroundRule> = [
        GroundRule::new("project", [inner], hs[0]),
        GroundRule::new("project", [inner], c),
        GroundRule::new("project", [outer], inner),
        GroundRule::new("project", [outer], hs[1]),
    ]
    .into();
    assert_eq!(rules.into_iter().collect::<BTreeSet<_>>(), expected);
}

#[test]
fn otway_rees_message1_exposes_its_cipher() {
    let (_, u) = universe("otway_rees", 2, &[vec![0, 1]]);
    let m1 = find(&u, "tuple{A, B, enc{key=nonce{seed=ks, id=A}, plain={A, B}}}");
    let c = find(&u, "enc{key=nonce{seed=ks, id=A}, plain={A, B}}");
    assert!(ground_in(&primitive_tuple_projection(), &u).contains(&GroundRule::new("project", [m1], c)));
}

#[test]
fn puf_primitives_need_oscars_program() {
    let (mut t, _) = common::atoms(0);
    let pa = t.intern(ValueTerm::atom("prog.A", AtomKind::Generic)).unwrap();
    let po = t.intern(ValueTerm::atom("prog.O", AtomKind::Generic)).unwrap();
    let ia = t.intern(ValueTerm::atom("A", AtomKind::Identity)).unwrap();
    let io = t.intern(ValueTerm::atom("O", AtomKind::Identity)).unwrap();
    let x = t.intern(ValueTerm::atom("x", AtomKind::Generic)).unwrap();
    let ca = t.intern(ValueTerm::hash([pa, x])).unwrap();
    let co = t.intern(ValueTerm::hash([po, x])).unwrap();
    let ra = t.intern(ValueTerm::puf(ca)).unwrap();
    let ro = t.intern(ValueTerm::puf(co)).unwrap();
    let sa = t.intern(ValueTerm::hash([ra, po])).unwrap();
    let attrs = |id, prog| [(IDENT.to_string(), id), ("prog".to_string(), prog)].into();
    let ctx = Context::new(
        vec![
            PrincipalAtoms { name: "Alice".into(), honest: true, attrs: attrs(ia, pa) },
            PrincipalAtoms { name: "Oscar".into(), honest: false, attrs: attrs(io, po) },
        ],
        BTreeMap::new(),
        BTreeMap::new(),
        BTreeSet::new(),
    );
    let w = World::new(&ctx, &t);
    let resp = ground(&compile_schema(&primitive_get_response()).unwrap(), &w);
    assert_eq!(resp, vec![GroundRule::new("puf_response", [co], ro)]);
    let sec = ground(&compile_schema(&primitive_get_secret()).unwrap(), &w);
    assert_eq!(sec, vec![GroundRule::new("puf_secret", [ra, po], sa)]);
}

#[test]
fn every_builtin_grounds_within_its_universe() {
    for name in protocols::BUILTINS {
        let sc = Scenario::new(protocols::builtin(name).unwrap(), 2, 2).unwrap();
        for b in enumerate_bindings(&sc) {
            let u = build_universe(&sc, &b, DEFAULT_MAX_UNIVERSE).unwrap();
            let rules = ground_protocol(&sc.protocol, &u).unwrap();
            // the canonical scenario: Alice and Bob in distinct roles
            if b.iter().all(|s| s.len() < 2 || s[..2] == [0, 1]) {
                assert!(!rules.is_empty(), "{name} {b:?}");
            }
            for r in &rules {
                assert!(r.premises.iter().all(|&p| u.contains(p)) && u.contains(r.conclusion));
                assert!(!r.premises.contains(&r.conclusion));
                assert!(r.premises.windows(2).all(|w| w[0] < w[1]));
            }
            let set: BTreeSet<&GroundRule> = rules.iter().collect();
            assert_eq!(set.len(), rules.len(), "{name}: duplicates");
        }
    }
}

#[test]
fn encrypt_then_decrypt_round_trip() {
    let (_, u) = universe("ns", 2, &[vec![0, 2], vec![2, 1]]);
    let o = find(&u, "O");
    let enc = ground_in(&primitive_encryptor(), &u);
    let dec = ground_in(&primitive_decryptor(), &u);
    for r in enc.iter().filter(|r| matches!(u.table.term(r.conclusion), ValueTerm::Ciphertext { key, .. } if *key == o)) {
        let recovered: BTreeSet<ValueHandle> =
            dec.iter().filter(|d| d.premises.contains(&r.conclusion)).map(|d| d.conclusion).collect();
        let plain: BTreeSet<ValueHandle> = r.premises.iter().copied().filter(|&p| p != o).collect();
        let ValueTerm::Ciphertext { plaintext, .. } = u.table.term(r.conclusion) else { unreachable!() };
        // the key may also be a plaintext member
        let members: BTreeSet<ValueHandle> = plaintext.iter().copied().filter(|&p| p != o).collect();
        assert_eq!(recovered, members);
        assert!(plain.is_subset(&members));
    }
}

/// Rebuilds `u` with values inserted in a random topological order and
/// returns the new table, context and old-to-new handle map.
fn shuffled(u: &Universe, seed: u64) -> (ValueTable, Context, BTreeMap<ValueHandle, ValueHandle>) {
    let mut rng = common::rng(seed);
    let mut order: Vec<ValueHandle> = u.values().collect();
    order.shuffle(&mut rng);
    let mut t = ValueTable::new();
    let mut map: BTreeMap<ValueHandle, ValueHandle> = BTreeMap::new();
    fn put(u: &Universe, v: ValueHandle, t: &mut ValueTable, map: &mut BTreeMap<ValueHandle, ValueHandle>) -> ValueHandle {
        if let Some(&h) = map.get(&v) {
            return h;
        }
        let mut m = |c: &ValueHandle| put(u, *c, t, map);
        let term = match u.table.term(v).clone() {
            a @ ValueTerm::Atom { .. } => a,
            ValueTerm::Ciphertext { key, plaintext } => {
                let k = m(&key);
                ValueTerm::cipher(k, plaintext.iter().map(&mut m).collect::<Vec<_>>())
            }
            ValueTerm::Nonce { seed, id } => {
                let s = m(&seed);
                ValueTerm::nonce(s, m(&id))
            }
            ValueTerm::Hash { of } => ValueTerm::hash(of.iter().map(&mut m).collect::<Vec<_>>()),
            ValueTerm::Tuple { contents } => ValueTerm::tuple(contents.iter().map(&mut m).collect::<Vec<_>>()),
            ValueTerm::PufResponse { challenge } => ValueTerm::puf(m(&challenge)),
        };
        let h = t.intern(term).unwrap();
        map.insert(v, h);
        h
    }
    for v in order {
        put(u, v, &mut t, &mut map);
    }
    let principals = u
        .ctx
        .principals
        .iter()
        .map(|p| PrincipalAtoms {
            name: p.name.clone(),
            honest: p.honest,
            attrs: p.attrs.iter().map(|(k, v)| (k.clone(), map[v])).collect(),
        })
        .collect();
    let consts = u.ctx.consts.iter().map(|(k, v)| (k.clone(), map[v])).collect();
    let fresh = u.ctx.fresh.iter().map(|(k, vs)| (k.clone(), vs.iter().map(|v| map[v]).collect())).collect();
    (t, Context::new(principals, consts, fresh, u.ctx.options.clone()), map)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grounding_ignores_insertion_order(seed in any::<u64>(), which in 0usize..4) {
        let (name, b): (&str, Vec<Vec<usize>>) = match which {
            0 => ("ns", vec![vec![0, 1], vec![0, 2]]),
            1 => ("nsl", vec![vec![0, 2], vec![2, 1]]),
            2 => ("otway_rees", vec![vec![0, 1], vec![0, 2]]),
            _ => ("cpuf_renewal", vec![vec![0], vec![1]]),
        };
        let (sc, u) = universe(name, 2, &b);
        let (t, ctx, _) = shuffled(&u, seed);
        let render = |tab: &ValueTable, rs: Vec<GroundRule>| -> BTreeSet<(String, Vec<String>, String)> {
            rs.into_iter()
                .map(|r| {
                    let mut ps: Vec<String> = r.premises.iter().map(|&p| tab.render(p)).collect();
                    ps.sort();
                    (r.label, ps, tab.render(r.conclusion))
                })
                .collect()
        };
        let mut before = Vec::new();
        let mut after = Vec::new();
        let schemas = sc.protocol.primitives.iter().map(|p| kflow::rules::primitive_schema(*p))
            .chain(sc.protocol.schemas.iter().cloned());
        for s in schemas {
            let c = compile_schema(&s).unwrap();
            before.extend(ground(&c, &World::new(&u.ctx, &u.table)));
            after.extend(ground(&c, &World::new(&ctx, &t)));
        }
        prop_assert_eq!(render(&u.table, before), render(&t, after));
    }
}
