//! Principals, scenarios, universe construction and the full-state
//! knowledge model used to cross-check the single-intruder engine.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::protocols::ProtocolSpec;
use crate::rules::{
    compile_schema, Binding, CompileError, Context, Env, GroundRule, PrincipalAtoms, ProtoOption,
    Solver, VarSort, World, IDENT,
};
use crate::rules::compile::CPremise;
use crate::rules::eval::{build, Intern};
use crate::terms::{AtomKind, ValueHandle, ValueTable, ValueTerm};

/// Honest principal names and their atom labels, assigned in order.
pub const HONEST_NAMES: [(&str, &str); 8] = [
    ("Alice", "A"),
    ("Bob", "B"),
    ("Carol", "C"),
    ("Dave", "D"),
    ("Erin", "E"),
    ("Frank", "F"),
    ("Grace", "G"),
    ("Heidi", "H"),
];

pub const OSCAR_NAME: (&str, &str) = ("Oscar", "O");

pub const DEFAULT_MAX_UNIVERSE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("universe exceeds the cap of {cap} values")]
    UniverseOverflow { cap: usize },
    #[error("at most {max} honest principals are supported, got {got}")]
    TooManyHonest { max: usize, got: usize },
    #[error("session count must be at least 1")]
    NoSessions,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrincipalRole {
    Honest,
    Oscar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub name: String,
    /// Label of the principal's identity atom.
    pub label: String,
    pub role: PrincipalRole,
}

impl Principal {
    pub fn is_honest(&self) -> bool {
        self.role == PrincipalRole::Honest
    }
}

/// A protocol together with its principals and session count. Honest
/// principals come first, Oscar is last.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub protocol: ProtocolSpec,
    pub principals: Vec<Principal>,
    pub sessions: usize,
}

impl Scenario {
    pub fn new(protocol: ProtocolSpec, honest: usize, sessions: usize) -> Result<Self, ModelError> {
        if honest > HONEST_NAMES.len() {
            return Err(ModelError::TooManyHonest { max: HONEST_NAMES.len(), got: honest });
        }
        if sessions == 0 {
            return Err(ModelError::NoSessions);
        }
        let mut principals: Vec<Principal> = HONEST_NAMES[..honest]
            .iter()
            .map(|(n, l)| Principal { name: n.to_string(), label: l.to_string(), role: PrincipalRole::Honest })
            .collect();
        principals.push(Principal {
            name: OSCAR_NAME.0.into(),
            label: OSCAR_NAME.1.into(),
            role: PrincipalRole::Oscar,
        });
        Ok(Scenario { protocol, principals, sessions })
    }

    pub fn oscar(&self) -> usize {
        self.principals.len() - 1
    }

    pub fn honest_count(&self) -> usize {
        self.principals.len() - 1
    }

    /// Principals allowed in each role: honest ones always, Oscar where
    /// some schema quantifies that role over him.
    pub fn role_candidates(&self) -> Vec<Vec<usize>> {
        self.protocol
            .roles
            .iter()
            .map(|role| {
                let mut c: Vec<usize> = (0..self.honest_count()).collect();
                let oscar_ok = self.protocol.schemas.iter().flat_map(|s| &s.vars).any(|v| {
                    matches!(&v.sort, VarSort::Principal { range, role: Some(r) }
                        if r == role && *range != crate::rules::PrincipalRange::Honest)
                });
                if oscar_ok {
                    c.push(self.oscar());
                }
                c
            })
            .collect()
    }

    pub fn summary(&self) -> String {
        let names: Vec<&str> = self.principals.iter().map(|p| p.name.as_str()).collect();
        format!("principals {}; honest {}", names.join(","), self.honest_count())
    }
}

/// Principal index per protocol role, for one session.
pub type SessionBinding = Vec<usize>;

/// All session-role assignments for `scenario.sessions` sessions, up to
/// renaming of honest principals and reordering of sessions.
pub fn enumerate_bindings(scenario: &Scenario) -> Vec<Vec<SessionBinding>> {
    let cands = scenario.role_candidates();
    let mut tuples: Vec<SessionBinding> = vec![vec![]];
    for c in &cands {
        tuples = tuples
            .iter()
            .flat_map(|t| {
                c.iter().map(move |&p| {
                    let mut t = t.clone();
                    t.push(p);
                    t
                })
            })
            .collect();
    }
    let perms = permutations(scenario.honest_count());
    let mut out = Vec::new();
    let mut idx = vec![0usize; scenario.sessions];
    if tuples.is_empty() {
        return out;
    }
    loop {
        let b: Vec<SessionBinding> = idx.iter().map(|&i| tuples[i].clone()).collect();
        if is_canonical(&b, &perms) {
            out.push(b);
        }
        // next non-decreasing index sequence
        let mut k = scenario.sessions;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if idx[k] + 1 < tuples.len() {
                let v = idx[k] + 1;
                idx[k..].fill(v);
                break;
            }
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn is_canonical(b: &[SessionBinding], perms: &[Vec<usize>]) -> bool {
    let n = perms.first().map_or(0, Vec::len);
    perms.iter().all(|perm| {
        let mut renamed: Vec<SessionBinding> = b
            .iter()
            .map(|s| s.iter().map(|&p| if p < n { perm[p] } else { p }).collect())
            .collect();
        renamed.sort();
        renamed.as_slice() >= b
    })
}

/// The finite value pool of one analysis. The table holds exactly the
/// universe, so every handle in it is a member.
#[derive(Debug, Clone)]
pub struct Universe {
    pub table: ValueTable,
    pub ctx: Context,
    /// Where each value first came from, indexed by handle.
    pub provenance: Vec<String>,
    pub base: Vec<ValueHandle>,
    /// Values not drawn by Oscar.
    pub secrets: BTreeSet<ValueHandle>,
    /// Largest number of non-base values mentioned by a single session.
    pub per_session: usize,
    pub bindings: Vec<SessionBinding>,
}

impl Universe {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = ValueHandle> + '_ {
        self.table.handles()
    }

    pub fn contains(&self, h: ValueHandle) -> bool {
        h.index() < self.table.len()
    }

    pub fn owns(&self, principal: usize) -> BTreeSet<ValueHandle> {
        self.ctx.principals[principal].attrs.values().copied().collect()
    }

    /// Canonical renderings, one per value, sorted.
    pub fn dump(&self) -> Vec<String> {
        let mut v = self.table.render_all();
        v.sort();
        v
    }
}

/// Instantiates every protocol schema once per session: principal
/// variables come from the session's role binding, fresh variables are the
/// session's own atoms, and remaining value variables range over the
/// values present before the schema was processed.
pub fn build_universe(scenario: &Scenario, bindings: &[SessionBinding], cap: usize) -> Result<Universe, ModelError> {
    let proto = &scenario.protocol;
    let w = bindings.len();
    let mut table = ValueTable::new();
    let mut provenance: BTreeMap<ValueHandle, String> = BTreeMap::new();
    let mut secrets = BTreeSet::new();
    let mut atom = |table: &mut ValueTable, label: String, kind: AtomKind| {
        let h = table.intern(ValueTerm::atom(label, kind)).expect("atoms always intern");
        provenance.insert(h, "base".into());
        h
    };
    let mut principals = Vec::new();
    for p in &scenario.principals {
        let mut attrs = BTreeMap::new();
        attrs.insert(IDENT.to_string(), atom(&mut table, p.label.clone(), AtomKind::Identity));
        for a in &proto.attrs {
            let h = atom(&mut table, format!("{}.{}", a.name, p.label), a.kind);
            if a.secret && p.is_honest() {
                secrets.insert(h);
            }
            attrs.insert(a.name.clone(), h);
        }
        principals.push(PrincipalAtoms { name: p.name.clone(), honest: p.is_honest(), attrs });
    }
    let mut consts = BTreeMap::new();
    for c in &proto.consts {
        let h = atom(&mut table, c.name.clone(), c.kind);
        if c.secret {
            secrets.insert(h);
        }
        consts.insert(c.name.clone(), h);
    }
    let mut fresh = BTreeMap::new();
    for f in &proto.fresh {
        let hs: Vec<ValueHandle> = (1..=w)
            .map(|i| {
                let h = atom(&mut table, format!("{}#{i}", f.name), f.kind);
                if f.secret {
                    secrets.insert(h);
                }
                h
            })
            .collect();
        fresh.insert(f.name.clone(), hs);
    }
    let ctx = Context::new(principals, consts, fresh, proto.options.clone());
    let base: Vec<ValueHandle> = table.handles().collect();
    let mut accepted: BTreeSet<ValueHandle> = base.iter().copied().collect();
    let mut per_session: Vec<BTreeSet<ValueHandle>> = vec![BTreeSet::new(); w];

    for schema in &proto.schemas {
        let c = compile_schema(schema)?;
        let snapshot: Vec<ValueHandle> = accepted.iter().copied().collect();
        for (si, binding) in bindings.iter().enumerate() {
            let Some(env) = session_env(&c, proto, &ctx, binding, si)? else { continue };
            let mut sols: Vec<Env> = Vec::new();
            {
                let world = World::with_domain(&ctx, &table, snapshot.iter().copied());
                let solver = Solver::new(&world, &c, false);
                let mut overflow = false;
                solver.solve(env, &mut |e| {
                    sols.push(e.clone());
                    overflow = sols.len() > cap;
                    !overflow
                });
                if overflow {
                    return Err(ModelError::UniverseOverflow { cap });
                }
            }
            for env in sols {
                let mut store = Intern(&mut table);
                let mut made = Vec::new();
                let mut ok = true;
                for p in &c.premises {
                    match p {
                        CPremise::Value(t) => match build(t, &env, &ctx, &mut store) {
                            Some(h) => made.push(h),
                            None => ok = false,
                        },
                        _ => ok = false,
                    }
                }
                match c.conclusion.as_ref().and_then(|t| build(t, &env, &ctx, &mut store)) {
                    Some(h) => made.push(h),
                    None => ok = false,
                }
                if !ok {
                    continue;
                }
                let mut closure = BTreeSet::new();
                for &h in &made {
                    closure.extend(table.subterms(h));
                }
                if !keys_allowed(&table, &ctx, &closure) {
                    continue;
                }
                for &h in &closure {
                    if !base.contains(&h) {
                        per_session[si].insert(h);
                    }
                    if accepted.insert(h) {
                        provenance.insert(h, format!("session {}: {}", si + 1, c.label));
                    }
                }
                if accepted.len() > cap || table.len() > cap.saturating_mul(16) {
                    return Err(ModelError::UniverseOverflow { cap });
                }
            }
        }
    }

    let (table, remap) = compact(&table, &accepted);
    let map = |h: &ValueHandle| remap[h];
    let principals = ctx
        .principals
        .iter()
        .map(|p| PrincipalAtoms {
            name: p.name.clone(),
            honest: p.honest,
            attrs: p.attrs.iter().map(|(k, h)| (k.clone(), map(h))).collect(),
        })
        .collect();
    let consts = ctx.consts.iter().map(|(k, h)| (k.clone(), map(h))).collect();
    let fresh = ctx.fresh.iter().map(|(k, hs)| (k.clone(), hs.iter().map(map).collect())).collect();
    let ctx = Context::new(principals, consts, fresh, ctx.options.clone());
    let mut prov = vec![String::new(); table.len()];
    for (h, p) in provenance {
        if let Some(n) = remap.get(&h) {
            prov[n.index()] = p;
        }
    }
    let m = per_session.iter().map(BTreeSet::len).max().unwrap_or(0);
    let base: Vec<ValueHandle> = base.iter().map(map).collect();
    assert!(table.len() <= w * m + base.len());
    Ok(Universe {
        table,
        ctx,
        provenance: prov,
        base,
        secrets: secrets.iter().map(map).collect(),
        per_session: m,
        bindings: bindings.to_vec(),
    })
}

fn session_env(
    c: &crate::rules::Compiled,
    proto: &ProtocolSpec,
    ctx: &Context,
    binding: &SessionBinding,
    session: usize,
) -> Result<Option<Env>, ModelError> {
    let mut env: Env = vec![None; c.vars.len()];
    for (i, v) in c.vars.iter().enumerate() {
        match &v.sort {
            VarSort::Principal { range, role: Some(r) } => {
                let ri = proto.roles.iter().position(|x| x == r).ok_or_else(|| {
                    ModelError::Invalid(format!("{}: unknown role `{r}`", c.label))
                })?;
                let p = *binding.get(ri).ok_or_else(|| ModelError::Invalid("binding too short".into()))?;
                if !ctx.in_range(p, *range) {
                    return Ok(None);
                }
                env[i] = Some(Binding::Principal(p));
            }
            VarSort::Fresh(fam) => {
                let hs = ctx.fresh.get(fam).ok_or_else(|| {
                    ModelError::Invalid(format!("{}: unknown fresh family `{fam}`", c.label))
                })?;
                env[i] = Some(Binding::Value(hs[session]));
            }
            VarSort::Set if !c.is_let(i) => {
                return Err(ModelError::Invalid(format!(
                    "{}: protocol rules cannot use set variable `{}`",
                    c.label, v.name
                )));
            }
            _ => {}
        }
    }
    Ok(Some(env))
}

fn keys_allowed(table: &ValueTable, ctx: &Context, values: &BTreeSet<ValueHandle>) -> bool {
    values.iter().all(|&h| match table.term(h) {
        ValueTerm::Ciphertext { key, .. } => {
            (!ctx.options.contains(&ProtoOption::IdentitiesAreKeys)
                || table.atom_kind(*key) == Some(AtomKind::Identity))
                && (!ctx.options.contains(&ProtoOption::PublicKeyCryptography) || ctx.owner_of(*key).is_some())
        }
        _ => true,
    })
}

/// Re-interns the members of `keep` (subterm-closed) into a fresh table,
/// preserving their relative order.
fn compact(table: &ValueTable, keep: &BTreeSet<ValueHandle>) -> (ValueTable, BTreeMap<ValueHandle, ValueHandle>) {
    let mut out = ValueTable::new();
    let mut remap = BTreeMap::new();
    for &h in keep {
        let m = |x: &ValueHandle| remap[x];
        let t = match table.term(h) {
            ValueTerm::Atom { label, kind } => ValueTerm::atom(label.clone(), *kind),
            ValueTerm::Ciphertext { key, plaintext } => ValueTerm::cipher(m(key), plaintext.iter().map(m)),
            ValueTerm::Nonce { seed, id } => ValueTerm::nonce(m(seed), m(id)),
            ValueTerm::Hash { of } => ValueTerm::hash(of.iter().map(m)),
            ValueTerm::Tuple { contents } => ValueTerm::tuple(contents.iter().map(m)),
            ValueTerm::PufResponse { challenge } => ValueTerm::puf(m(challenge)),
        };
        let n = out.intern(t).expect("compaction preserves validity");
        remap.insert(h, n);
    }
    (out, remap)
}

/// Derivation record for a learned value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub premises: Vec<ValueHandle>,
    pub rule: String,
    /// Saturation round in which the value was first derived (from 1).
    pub round: usize,
}

/// Oscar's knowledge: what he draws, what he knows, and how he learned it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OscarState {
    pub draws: BTreeSet<ValueHandle>,
    pub known: BTreeSet<ValueHandle>,
    pub learns: BTreeMap<ValueHandle, Derivation>,
}

impl OscarState {
    pub fn from_draws(draws: impl IntoIterator<Item = ValueHandle>) -> Self {
        let draws: BTreeSet<ValueHandle> = draws.into_iter().collect();
        OscarState { known: draws.clone(), draws, learns: BTreeMap::new() }
    }
}

/// Oscar draws every atom of the universe except declared secrets he does
/// not own, and no composite value.
pub fn initial_oscar_state(scenario: &Scenario, universe: &Universe) -> OscarState {
    let own = universe.owns(scenario.oscar());
    OscarState::from_draws(
        universe
            .values()
            .filter(|&h| universe.table.is_atom(h))
            .filter(|h| !universe.secrets.contains(h) || own.contains(h)),
    )
}

/// A full knowledge state: which principal knows which value.
pub type FullState = BTreeSet<(usize, ValueHandle)>;

/// A communication rule: `teller` tells `value` to `receiver` once the
/// state contains every pair in `needs`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FullRule {
    pub teller: usize,
    pub value: ValueHandle,
    pub receiver: usize,
    pub needs: BTreeSet<(usize, ValueHandle)>,
}

/// Applies every rule at most once per step, `steps` times.
pub fn simulate_full(rules: &[FullRule], initial: &FullState, steps: usize) -> FullState {
    let mut k = initial.clone();
    for _ in 0..steps {
        let next = full_step(rules, &k);
        if next.len() == k.len() {
            break;
        }
        k = next;
    }
    k
}

pub fn full_step(rules: &[FullRule], k: &FullState) -> FullState {
    let mut next = k.clone();
    for r in rules {
        if k.contains(&(r.teller, r.value)) && r.needs.is_subset(k) {
            next.insert((r.receiver, r.value));
        }
    }
    next
}

/// Least fixed point of [`full_step`] above `initial`.
pub fn full_fixpoint(rules: &[FullRule], initial: &FullState) -> FullState {
    let mut k = initial.clone();
    loop {
        let next = full_step(rules, &k);
        if next == k {
            return k;
        }
        k = next;
    }
}

/// Folds every principal in `adversaries` into the smallest of them.
/// Returns the surviving principals, the rewritten rules (self-rules of the
/// merged adversary dropped) and the rewritten state.
pub fn merge(
    principals: &[usize],
    rules: &[FullRule],
    state: &FullState,
    adversaries: &BTreeSet<usize>,
) -> (Vec<usize>, Vec<FullRule>, FullState) {
    let Some(&o) = adversaries.first() else {
        return (principals.to_vec(), rules.to_vec(), state.clone());
    };
    let m = |p: usize| if adversaries.contains(&p) { o } else { p };
    let kept: Vec<usize> = principals.iter().copied().filter(|p| !adversaries.contains(p) || *p == o).collect();
    let mut out: BTreeSet<FullRule> = BTreeSet::new();
    for r in rules {
        let r = FullRule {
            teller: m(r.teller),
            value: r.value,
            receiver: m(r.receiver),
            needs: r.needs.iter().map(|&(p, v)| (m(p), v)).collect(),
        };
        if !(r.teller == o && r.receiver == o) {
            out.insert(r);
        }
    }
    let st = state.iter().map(|&(p, v)| (m(p), v)).collect();
    (kept, out.into_iter().collect(), st)
}

/// Projects full rules onto the single adversary `oscar`: a rule telling
/// Oscar a value becomes a ground rule whose premises are Oscar's share
/// of its requirements. Only meaningful when honest principals know
/// everything.
pub fn project_rules(rules: &[FullRule], oscar: usize) -> Vec<GroundRule> {
    let mut out = BTreeSet::new();
    for (i, r) in rules.iter().enumerate() {
        if r.receiver != oscar || r.teller == oscar {
            continue;
        }
        let premises = r.needs.iter().filter(|(p, _)| *p == oscar).map(|&(_, v)| v);
        let g = GroundRule::new(format!("r{i}"), premises, r.value);
        if !g.premises.contains(&r.value) {
            out.insert(g);
        }
    }
    out.into_iter().collect()
}

/// Oscar's part of a full state.
pub fn project_state(state: &FullState, oscar: usize) -> BTreeSet<ValueHandle> {
    state.iter().filter(|(p, _)| *p == oscar).map(|&(_, v)| v).collect()
}
