//! Template evaluation and the matching solver behind grounding and
//! theorem checking.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::terms::{ValueHandle, ValueKind, ValueTable, ValueTerm};

use super::compile::{CPremise, COwner, CSetExpr, Compiled, Goal, Source, CS, CT};
use super::{Field, KindTest, PrincipalRange, ProtoOption, SetField, VarSort};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    Value(ValueHandle),
    Set(Vec<ValueHandle>),
    Principal(usize),
}

pub type Env = Vec<Option<Binding>>;

/// What a principal contributes to evaluation: its honesty and its named
/// atoms (`ident` plus any protocol attributes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalAtoms {
    pub name: String,
    pub honest: bool,
    pub attrs: BTreeMap<String, ValueHandle>,
}

/// Name resolution for templates: constants, principal attributes, fresh
/// families and enabled options.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub principals: Vec<PrincipalAtoms>,
    pub consts: BTreeMap<String, ValueHandle>,
    pub fresh: BTreeMap<String, Vec<ValueHandle>>,
    pub options: BTreeSet<ProtoOption>,
    owner: HashMap<ValueHandle, usize>,
}

impl Context {
    pub fn new(
        principals: Vec<PrincipalAtoms>,
        consts: BTreeMap<String, ValueHandle>,
        fresh: BTreeMap<String, Vec<ValueHandle>>,
        options: BTreeSet<ProtoOption>,
    ) -> Self {
        let mut owner = HashMap::new();
        for (i, p) in principals.iter().enumerate() {
            for &h in p.attrs.values() {
                owner.insert(h, i);
            }
        }
        Context { principals, consts, fresh, options, owner }
    }

    pub fn owner_of(&self, h: ValueHandle) -> Option<usize> {
        self.owner.get(&h).copied()
    }

    pub fn oscar(&self) -> Option<usize> {
        self.principals.iter().position(|p| !p.honest)
    }

    pub fn in_range(&self, p: usize, range: PrincipalRange) -> bool {
        match range {
            PrincipalRange::Any => true,
            PrincipalRange::Honest => self.principals[p].honest,
            PrincipalRange::Oscar => !self.principals[p].honest,
        }
    }

    fn attr(&self, p: usize, attr: &str) -> Option<ValueHandle> {
        self.principals[p].attrs.get(attr).copied()
    }
}

/// A set of handles with a per-kind index.
#[derive(Debug, Clone)]
pub(crate) struct Index {
    mask: Vec<bool>,
    all: Vec<ValueHandle>,
    by_kind: [Vec<ValueHandle>; 6],
}

impl Index {
    pub(crate) fn new(table: &ValueTable, members: impl IntoIterator<Item = ValueHandle>) -> Self {
        let mut mask = vec![false; table.len()];
        let mut by_kind: [Vec<ValueHandle>; 6] = Default::default();
        let mut all = Vec::new();
        for h in members {
            if !mask[h.index()] {
                mask[h.index()] = true;
                all.push(h);
            }
        }
        all.sort_unstable();
        for &h in &all {
            by_kind[kind_slot(table.kind_of(h))].push(h);
        }
        Index { mask, all, by_kind }
    }

    pub(crate) fn contains(&self, h: ValueHandle) -> bool {
        self.mask.get(h.index()).copied().unwrap_or(false)
    }

    fn candidates(&self, kind: Option<ValueKind>) -> &[ValueHandle] {
        match kind {
            Some(k) => &self.by_kind[kind_slot(k)],
            None => &self.all,
        }
    }
}

fn kind_slot(k: ValueKind) -> usize {
    ValueKind::ALL.iter().position(|&x| x == k).unwrap()
}

/// Everything a solver may consult: the value table, the domain values
/// range over, and optionally Oscar's knowledge.
pub struct World<'a> {
    pub ctx: &'a Context,
    pub table: &'a ValueTable,
    domain: Index,
    known: Option<Index>,
    drawn: Option<Index>,
}

impl<'a> World<'a> {
    /// A world whose domain is the whole table.
    pub fn new(ctx: &'a Context, table: &'a ValueTable) -> Self {
        let domain = Index::new(table, table.handles());
        World { ctx, table, domain, known: None, drawn: None }
    }

    pub fn with_domain(ctx: &'a Context, table: &'a ValueTable, domain: impl IntoIterator<Item = ValueHandle>) -> Self {
        World { ctx, table, domain: Index::new(table, domain), known: None, drawn: None }
    }

    pub fn with_knowledge(
        mut self,
        known: impl IntoIterator<Item = ValueHandle>,
        drawn: impl IntoIterator<Item = ValueHandle>,
    ) -> Self {
        self.known = Some(Index::new(self.table, known));
        self.drawn = Some(Index::new(self.table, drawn));
        self
    }

    fn source(&self, s: Source) -> Option<&Index> {
        match s {
            Source::Domain => Some(&self.domain),
            Source::Known => self.known.as_ref(),
            Source::Drawn => self.drawn.as_ref(),
        }
    }
}

/// Where evaluated terms come from: an immutable lookup, or interning.
pub(crate) trait Store {
    fn table(&self) -> &ValueTable;
    fn make(&mut self, t: ValueTerm) -> Option<ValueHandle>;
}

pub(crate) struct Lookup<'a>(pub &'a ValueTable);

impl Store for Lookup<'_> {
    fn table(&self) -> &ValueTable {
        self.0
    }
    fn make(&mut self, t: ValueTerm) -> Option<ValueHandle> {
        self.0.lookup(&t)
    }
}

pub(crate) struct Intern<'a>(pub &'a mut ValueTable);

impl Store for Intern<'_> {
    fn table(&self) -> &ValueTable {
        self.0
    }
    fn make(&mut self, t: ValueTerm) -> Option<ValueHandle> {
        self.0.intern(t).ok()
    }
}

pub(crate) fn evaluable(t: &CT, env: &Env) -> bool {
    match t {
        CT::Var(i) | CT::Attr(_, i) => env[*i].is_some(),
        CT::Any => false,
        CT::Const(_) => true,
        CT::Enc(k, s) => evaluable(k, env) && set_evaluable(s, env),
        CT::Nonce(a, b) => evaluable(a, env) && evaluable(b, env),
        CT::Hash(s) | CT::Tuple(s) => set_evaluable(s, env),
        CT::Puf(c) | CT::Field(c, _) => evaluable(c, env),
    }
}

fn set_evaluable(s: &CS, env: &Env) -> bool {
    match s {
        CS::Elems(items) => items.iter().all(|t| evaluable(t, env)),
        CS::Var(i) => env[*i].is_some(),
    }
}

/// A template can be matched once every field accessor inside it can be
/// evaluated.
fn matchable(t: &CT, env: &Env) -> bool {
    match t {
        CT::Var(_) | CT::Any | CT::Const(_) | CT::Attr(..) => true,
        CT::Enc(k, s) => matchable(k, env) && set_matchable(s, env),
        CT::Nonce(a, b) => matchable(a, env) && matchable(b, env),
        CT::Hash(s) | CT::Tuple(s) => set_matchable(s, env),
        CT::Puf(c) => matchable(c, env),
        CT::Field(..) => evaluable(t, env),
    }
}

fn set_matchable(s: &CS, env: &Env) -> bool {
    match s {
        CS::Elems(items) => items.iter().all(|t| matchable(t, env)),
        CS::Var(_) => true,
    }
}

fn top_kind(t: &CT) -> Option<ValueKind> {
    match t {
        CT::Const(_) | CT::Attr(..) => Some(ValueKind::Atom),
        CT::Enc(..) => Some(ValueKind::Ciphertext),
        CT::Nonce(..) => Some(ValueKind::Nonce),
        CT::Hash(_) => Some(ValueKind::Hash),
        CT::Tuple(_) => Some(ValueKind::Tuple),
        CT::Puf(_) => Some(ValueKind::PufResponse),
        CT::Var(_) | CT::Any | CT::Field(..) => None,
    }
}

/// Evaluates a fully bound template. Literal sets whose elements collapse
/// to fewer distinct values do not denote anything.
pub(crate) fn build<S: Store>(t: &CT, env: &Env, ctx: &Context, st: &mut S) -> Option<ValueHandle> {
    match t {
        CT::Var(i) => match env[*i].as_ref()? {
            Binding::Value(h) => Some(*h),
            _ => None,
        },
        CT::Any => None,
        CT::Const(c) => ctx.consts.get(c).copied(),
        CT::Attr(a, i) => match env[*i].as_ref()? {
            Binding::Principal(p) => ctx.attr(*p, a),
            _ => None,
        },
        CT::Enc(k, s) => {
            let key = build(k, env, ctx, st)?;
            let plain = build_set(s, env, ctx, st)?;
            st.make(ValueTerm::cipher(key, plain))
        }
        CT::Nonce(a, b) => {
            let seed = build(a, env, ctx, st)?;
            let id = build(b, env, ctx, st)?;
            st.make(ValueTerm::nonce(seed, id))
        }
        CT::Hash(s) => {
            let of = build_set(s, env, ctx, st)?;
            st.make(ValueTerm::hash(of))
        }
        CT::Tuple(s) => {
            let c = build_set(s, env, ctx, st)?;
            st.make(ValueTerm::tuple(c))
        }
        CT::Puf(c) => {
            let ch = build(c, env, ctx, st)?;
            st.make(ValueTerm::puf(ch))
        }
        CT::Field(b, f) => {
            let base = build(b, env, ctx, st)?;
            field(st.table(), base, *f)
        }
    }
}

pub(crate) fn build_set<S: Store>(s: &CS, env: &Env, ctx: &Context, st: &mut S) -> Option<Vec<ValueHandle>> {
    match s {
        CS::Var(i) => match env[*i].as_ref()? {
            Binding::Set(v) => Some(v.clone()),
            _ => None,
        },
        CS::Elems(items) => {
            let mut out = Vec::with_capacity(items.len());
            for t in items {
                out.push(build(t, env, ctx, st)?);
            }
            let n = out.len();
            out.sort_unstable();
            out.dedup();
            (out.len() == n && n > 0).then_some(out)
        }
    }
}

fn build_set_expr<S: Store>(e: &CSetExpr, env: &Env, ctx: &Context, st: &mut S) -> Option<Vec<ValueHandle>> {
    match e {
        CSetExpr::Lit(CS::Elems(items)) => {
            // guard literals are plain sets, duplicates simply merge
            let mut out = Vec::new();
            for t in items {
                out.push(build(t, env, ctx, st)?);
            }
            out.sort_unstable();
            out.dedup();
            Some(out)
        }
        CSetExpr::Lit(s) => build_set(s, env, ctx, st),
        CSetExpr::Field(t, f) => {
            let h = build(t, env, ctx, st)?;
            set_field(st.table(), h, *f).map(<[_]>::to_vec)
        }
    }
}

fn set_expr_evaluable(e: &CSetExpr, env: &Env) -> bool {
    match e {
        CSetExpr::Lit(s) => set_evaluable(s, env),
        CSetExpr::Field(t, _) => evaluable(t, env),
    }
}

pub(crate) fn field(table: &ValueTable, h: ValueHandle, f: Field) -> Option<ValueHandle> {
    match (table.term(h), f) {
        (ValueTerm::Ciphertext { key, .. }, Field::Key) => Some(*key),
        (ValueTerm::Nonce { seed, .. }, Field::Seed) => Some(*seed),
        (ValueTerm::Nonce { id, .. }, Field::Id) => Some(*id),
        (ValueTerm::PufResponse { challenge }, Field::Challenge) => Some(*challenge),
        _ => None,
    }
}

fn set_field(table: &ValueTable, h: ValueHandle, f: SetField) -> Option<&[ValueHandle]> {
    match (table.term(h), f) {
        (ValueTerm::Ciphertext { plaintext, .. }, SetField::Plain) => Some(plaintext),
        (ValueTerm::Hash { of }, SetField::Of) => Some(of),
        (ValueTerm::Tuple { contents }, SetField::Contents) => Some(contents),
        _ => None,
    }
}

/// Drops option-conditional guards whose option is off and unwraps the rest.
pub(crate) fn resolve_options(goals: &[Goal], options: &BTreeSet<ProtoOption>) -> Vec<Goal> {
    let mut out = Vec::new();
    for g in goals {
        let mut g = g;
        let mut on = true;
        while let Goal::IfOption(o, inner) = g {
            on &= options.contains(o);
            g = inner;
        }
        if on {
            out.push(g.clone());
        }
    }
    out
}

/// Checks a goal whose operands are all evaluable; `None` if they are not.
pub(crate) fn check_goal<S: Store>(
    g: &Goal,
    env: &Env,
    ctx: &Context,
    st: &mut S,
    sources: &dyn Fn(Source, ValueHandle) -> bool,
) -> Option<bool> {
    let principal = |i: usize| match env[i] {
        Some(Binding::Principal(p)) => Some(p),
        _ => None,
    };
    Some(match g {
        Goal::Match(t, src) => {
            if !evaluable(t, env) {
                return None;
            }
            build(t, env, ctx, st).is_some_and(|h| sources(*src, h))
        }
        Goal::Eq(a, b) | Goal::Neq(a, b) => {
            if !evaluable(a, env) || !evaluable(b, env) {
                return None;
            }
            match (build(a, env, ctx, st), build(b, env, ctx, st)) {
                (Some(x), Some(y)) => (x == y) == matches!(g, Goal::Eq(..)),
                _ => false,
            }
        }
        Goal::PEq(a, b) => principal(*a)? == principal(*b)?,
        Goal::PNeq(a, b) => principal(*a)? != principal(*b)?,
        Goal::Member(t, s) => {
            if !evaluable(t, env) || !set_expr_evaluable(s, env) {
                return None;
            }
            match (build(t, env, ctx, st), build_set_expr(s, env, ctx, st)) {
                (Some(h), Some(set)) => set.contains(&h),
                _ => false,
            }
        }
        Goal::Card(s, op, n) => {
            if !set_expr_evaluable(s, env) {
                return None;
            }
            build_set_expr(s, env, ctx, st).is_some_and(|set| op.holds(set.len(), *n))
        }
        Goal::Kind(t, k) => {
            if !evaluable(t, env) {
                return None;
            }
            build(t, env, ctx, st).is_some_and(|h| match k {
                KindTest::Value(k) => st.table().kind_of(h) == *k,
                KindTest::Atom(k) => st.table().atom_kind(h) == Some(*k),
            })
        }
        Goal::Owned(t, o) => {
            if !evaluable(t, env) {
                return None;
            }
            let want = match o {
                COwner::Var(i) => Some(principal(*i)?),
                _ => None,
            };
            let owner = build(t, env, ctx, st).and_then(|h| ctx.owner_of(h));
            match (o, owner) {
                (_, None) => false,
                (COwner::Oscar, Some(p)) => !ctx.principals[p].honest,
                (COwner::Honest, Some(p)) => ctx.principals[p].honest,
                (COwner::Var(_), Some(p)) => Some(p) == want,
            }
        }
        Goal::NotDraws(t) => {
            if !evaluable(t, env) {
                return None;
            }
            build(t, env, ctx, st).is_some_and(|h| !sources(Source::Drawn, h))
        }
        Goal::IfOption(o, inner) => {
            if ctx.options.contains(o) {
                return check_goal(inner, env, ctx, st, sources);
            }
            true
        }
    })
}

/// Backtracking search for all assignments satisfying a compiled pattern.
pub struct Solver<'w, 'a> {
    world: &'w World<'a>,
    c: &'w Compiled,
    goals: Vec<Goal>,
    stopped: Cell<bool>,
}

impl<'w, 'a> Solver<'w, 'a> {
    /// `match_rule` adds the premises and conclusion as goals that must
    /// exist in the domain (grounding); without it only guards are solved.
    pub fn new(world: &'w World<'a>, c: &'w Compiled, match_rule: bool) -> Self {
        let mut goals = resolve_options(&c.goals, &world.ctx.options);
        if match_rule {
            for p in &c.premises {
                if let CPremise::Value(t) = p {
                    goals.push(Goal::Match(t.clone(), Source::Domain));
                }
            }
            if let Some(t) = &c.conclusion {
                goals.push(Goal::Match(t.clone(), Source::Domain));
            }
        }
        Solver { world, c, goals, stopped: Cell::new(false) }
    }

    /// Calls `emit` for each solution in a deterministic order; `emit`
    /// returns false to stop the search.
    pub fn solve(&self, env: Env, emit: &mut dyn FnMut(&Env) -> bool) {
        let mut env = env;
        env.resize(self.c.vars.len(), None);
        let mut done = vec![false; self.goals.len()];
        self.stopped.set(false);
        self.search(&mut env, &mut done, emit);
    }

    fn in_source(&self, s: Source, h: ValueHandle) -> bool {
        self.world.source(s).is_some_and(|i| i.contains(h))
    }

    fn search(&self, env: &mut Env, done: &mut [bool], emit: &mut dyn FnMut(&Env) -> bool) {
        if self.stopped.get() {
            return;
        }
        let ctx = self.world.ctx;
        let mut st = Lookup(self.world.table);
        let sources = |s: Source, h: ValueHandle| self.in_source(s, h);
        let mut checked = Vec::new();
        for (i, g) in self.goals.iter().enumerate() {
            if done[i] {
                continue;
            }
            match check_goal(g, env, ctx, &mut st, &sources) {
                Some(true) => {
                    done[i] = true;
                    checked.push(i);
                }
                Some(false) => {
                    checked.iter().for_each(|&j| done[j] = false);
                    return;
                }
                None => {}
            }
        }
        self.branch(env, done, emit);
        checked.iter().for_each(|&j| done[j] = false);
    }

    fn branch(&self, env: &mut Env, done: &mut [bool], emit: &mut dyn FnMut(&Env) -> bool) {
        let ctx = self.world.ctx;
        // equations and memberships with one evaluable side drive matching
        for (i, g) in self.goals.iter().enumerate() {
            if done[i] {
                continue;
            }
            match g {
                Goal::Eq(a, b) => {
                    let (src, pat) = if evaluable(a, env) && matchable(b, env) {
                        (a, b)
                    } else if evaluable(b, env) && matchable(a, env) {
                        (b, a)
                    } else {
                        continue;
                    };
                    let Some(h) = build(src, env, ctx, &mut Lookup(self.world.table)) else { return };
                    done[i] = true;
                    self.unify(pat, h, env, &mut |env| self.search(env, done, emit));
                    done[i] = false;
                    return;
                }
                Goal::Member(t, s) if set_expr_evaluable(s, env) && matchable(t, env) => {
                    let Some(set) = build_set_expr(s, env, ctx, &mut Lookup(self.world.table)) else {
                        return;
                    };
                    done[i] = true;
                    for h in set {
                        self.unify(t, h, env, &mut |env| self.search(env, done, emit));
                    }
                    done[i] = false;
                    return;
                }
                _ => {}
            }
        }
        // structured matches against the smallest candidate list
        let mut best: Option<(usize, &[ValueHandle])> = None;
        for (i, g) in self.goals.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Goal::Match(t, src) = g {
                let Some(k) = top_kind(t) else { continue };
                if !matchable(t, env) {
                    continue;
                }
                let Some(index) = self.world.source(*src) else { return };
                let cands = index.candidates(Some(k));
                if best.is_none_or(|(_, b)| cands.len() < b.len()) {
                    best = Some((i, cands));
                }
            }
        }
        if let Some((i, cands)) = best {
            let Goal::Match(t, _) = &self.goals[i] else { unreachable!() };
            done[i] = true;
            for &h in cands {
                self.unify(t, h, env, &mut |env| self.search(env, done, emit));
                if self.stopped.get() {
                    break;
                }
            }
            done[i] = false;
            return;
        }
        // bare variables constrained to a source
        for (i, g) in self.goals.iter().enumerate() {
            if done[i] {
                continue;
            }
            if let Goal::Match(t @ CT::Var(v), src) = g {
                if env[*v].is_some() {
                    continue;
                }
                let Some(index) = self.world.source(*src) else { return };
                done[i] = true;
                for &h in index.candidates(None) {
                    self.unify(t, h, env, &mut |env| self.search(env, done, emit));
                    if self.stopped.get() {
                        break;
                    }
                }
                done[i] = false;
                return;
            }
        }
        // enumerate the first unbound variable
        let free = (0..self.c.vars.len()).find(|&v| env[v].is_none() && !self.c.is_let(v));
        if let Some(v) = free {
            let cands: Vec<Binding> = match &self.c.vars[v].sort {
                VarSort::Principal { range, .. } => (0..ctx.principals.len())
                    .filter(|&p| ctx.in_range(p, *range))
                    .map(Binding::Principal)
                    .collect(),
                VarSort::Fresh(fam) => ctx
                    .fresh
                    .get(fam)
                    .map(|hs| hs.iter().map(|&h| Binding::Value(h)).collect())
                    .unwrap_or_default(),
                VarSort::Value => self.world.domain.all.iter().map(|&h| Binding::Value(h)).collect(),
                VarSort::Set => return,
            };
            for b in cands {
                env[v] = Some(b);
                self.search(env, done, emit);
                env[v] = None;
                if self.stopped.get() {
                    break;
                }
            }
            return;
        }
        if done.iter().all(|&d| d) {
            let mut full = env.clone();
            for (slot, t) in &self.c.lets {
                full[*slot] = build(t, &full, ctx, &mut Lookup(self.world.table)).map(Binding::Value);
            }
            if !emit(&full) {
                self.stopped.set(true);
            }
        }
    }

    fn var_accepts(&self, v: usize, h: ValueHandle) -> bool {
        match &self.c.vars[v].sort {
            VarSort::Value => true,
            VarSort::Fresh(fam) => self.world.ctx.fresh.get(fam).is_some_and(|hs| hs.contains(&h)),
            VarSort::Principal { .. } | VarSort::Set => false,
        }
    }

    fn unify(&self, t: &CT, h: ValueHandle, env: &mut Env, k: &mut dyn FnMut(&mut Env)) {
        let ctx = self.world.ctx;
        let table = self.world.table;
        match t {
            CT::Any => k(env),
            CT::Var(v) => match &env[*v] {
                Some(Binding::Value(b)) => {
                    if *b == h {
                        k(env)
                    }
                }
                Some(_) => {}
                None => {
                    if self.var_accepts(*v, h) {
                        env[*v] = Some(Binding::Value(h));
                        k(env);
                        env[*v] = None;
                    }
                }
            },
            CT::Const(c) => {
                if ctx.consts.get(c) == Some(&h) {
                    k(env)
                }
            }
            CT::Attr(a, v) => {
                let Some(p) = ctx.owner_of(h) else { return };
                if ctx.attr(p, a) != Some(h) {
                    return;
                }
                match &env[*v] {
                    Some(Binding::Principal(q)) => {
                        if *q == p {
                            k(env)
                        }
                    }
                    Some(_) => {}
                    None => {
                        let VarSort::Principal { range, .. } = &self.c.vars[*v].sort else { return };
                        if ctx.in_range(p, *range) {
                            env[*v] = Some(Binding::Principal(p));
                            k(env);
                            env[*v] = None;
                        }
                    }
                }
            }
            CT::Enc(key, plain) => {
                if let ValueTerm::Ciphertext { key: hk, plaintext } = table.term(h) {
                    self.unify(key, *hk, env, &mut |env| self.unify_set(plain, plaintext, env, k));
                }
            }
            CT::Nonce(seed, id) => {
                if let ValueTerm::Nonce { seed: hs, id: hi } = table.term(h) {
                    self.unify(seed, *hs, env, &mut |env| self.unify(id, *hi, env, k));
                }
            }
            CT::Hash(s) => {
                if let ValueTerm::Hash { of } = table.term(h) {
                    self.unify_set(s, of, env, k);
                }
            }
            CT::Tuple(s) => {
                if let ValueTerm::Tuple { contents } = table.term(h) {
                    self.unify_set(s, contents, env, k);
                }
            }
            CT::Puf(c) => {
                if let ValueTerm::PufResponse { challenge } = table.term(h) {
                    self.unify(c, *challenge, env, k);
                }
            }
            CT::Field(..) => {
                if build(t, env, ctx, &mut Lookup(table)) == Some(h) {
                    k(env)
                }
            }
        }
    }

    fn unify_set(&self, s: &CS, set: &[ValueHandle], env: &mut Env, k: &mut dyn FnMut(&mut Env)) {
        match s {
            CS::Var(v) => match &env[*v] {
                Some(Binding::Set(b)) => {
                    if b.as_slice() == set {
                        k(env)
                    }
                }
                Some(_) => {}
                None => {
                    env[*v] = Some(Binding::Set(set.to_vec()));
                    k(env);
                    env[*v] = None;
                }
            },
            CS::Elems(items) => {
                if items.len() == set.len() {
                    let mut used = vec![false; set.len()];
                    self.unify_bijection(items, set, &mut used, env, k);
                }
            }
        }
    }

    fn unify_bijection(
        &self,
        items: &[CT],
        set: &[ValueHandle],
        used: &mut Vec<bool>,
        env: &mut Env,
        k: &mut dyn FnMut(&mut Env),
    ) {
        let Some((first, rest)) = items.split_first() else {
            k(env);
            return;
        };
        for j in 0..set.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            self.unify(first, set[j], env, &mut |env| self.unify_bijection(rest, set, used, env, k));
            used[j] = false;
        }
    }
}
