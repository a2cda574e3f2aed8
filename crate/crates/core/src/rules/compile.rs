//! Lowering of surface schemas into slot-indexed form.

use std::collections::HashMap;

use thiserror::Error;

use super::{
    CmpOp, Field, Guard, KindTest, Owner, Premise, ProtoOption, RuleSchema, SetExpr, SetField,
    SetTemplate, Template, VarDecl, VarSort,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("{label}: variable `{var}` is not declared")]
    Unbound { label: String, var: String },
    #[error("{label}: variable `{var}` is declared twice")]
    DuplicateVar { label: String, var: String },
    #[error("{label}: `{var}` is used as a {expected} but declared otherwise")]
    Sort { label: String, var: String, expected: &'static str },
    #[error("{label}: wildcard `_` is not allowed in {context}")]
    Wildcard { label: String, context: &'static str },
    #[error("{label}: {what}")]
    Invalid { label: String, what: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CT {
    Var(usize),
    Any,
    Const(String),
    Attr(String, usize),
    Enc(Box<CT>, CS),
    Nonce(Box<CT>, Box<CT>),
    Hash(CS),
    Tuple(CS),
    Puf(Box<CT>),
    Field(Box<CT>, Field),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CS {
    Elems(Vec<CT>),
    Var(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CSetExpr {
    Lit(CS),
    Field(CT, SetField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    Domain,
    Known,
    Drawn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum COwner {
    Oscar,
    Honest,
    Var(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Goal {
    Match(CT, Source),
    Eq(CT, CT),
    Neq(CT, CT),
    PEq(usize, usize),
    PNeq(usize, usize),
    Member(CT, CSetExpr),
    Card(CSetExpr, CmpOp, usize),
    Kind(CT, KindTest),
    Owned(CT, COwner),
    NotDraws(CT),
    IfOption(ProtoOption, Box<Goal>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CPremise {
    Value(CT),
    Members(usize),
}

/// A schema or theorem pattern with variables resolved to slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compiled {
    pub label: String,
    pub vars: Vec<VarDecl>,
    pub(crate) premises: Vec<CPremise>,
    pub(crate) conclusion: Option<CT>,
    pub(crate) goals: Vec<Goal>,
    /// Variables eliminated by `X = T` guards, filled in after solving.
    pub(crate) lets: Vec<(usize, CT)>,
}

impl Compiled {
    pub(crate) fn is_let(&self, slot: usize) -> bool {
        self.lets.iter().any(|(s, _)| *s == slot)
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }
}

pub fn compile_schema(schema: &RuleSchema) -> Result<Compiled, CompileError> {
    let mut premises: Vec<Premise> = schema.premises.clone();
    let mut conclusion = Some(schema.conclusion.clone());
    let mut guards = schema.guards.clone();
    if let Some(g) = guards.iter().find(|g| g.is_state_constraint()) {
        return Err(CompileError::Invalid {
            label: schema.label.clone(),
            what: format!("state constraint {g:?} is only allowed in theorems"),
        });
    }
    let lowering = Lowering::new(&schema.label, &schema.vars)?;
    let lets = lowering.extract_lets(&mut premises, &mut conclusion, &mut guards)?;
    lowering.finish(premises, conclusion, guards, lets)
}

/// Compiles an existential pattern: `exists vars . guards`.
pub fn compile_theorem(label: &str, vars: &[VarDecl], guards: &[Guard]) -> Result<Compiled, CompileError> {
    let mut premises = Vec::new();
    let mut conclusion = None;
    let mut guards = guards.to_vec();
    let lowering = Lowering::new(label, vars)?;
    let lets = lowering.extract_lets(&mut premises, &mut conclusion, &mut guards)?;
    lowering.finish(premises, conclusion, guards, lets)
}

struct Lowering<'a> {
    label: &'a str,
    vars: &'a [VarDecl],
    slots: HashMap<&'a str, usize>,
}

impl<'a> Lowering<'a> {
    fn new(label: &'a str, vars: &'a [VarDecl]) -> Result<Self, CompileError> {
        let mut slots = HashMap::new();
        for (i, v) in vars.iter().enumerate() {
            if slots.insert(v.name.as_str(), i).is_some() {
                return Err(CompileError::DuplicateVar {
                    label: label.to_string(),
                    var: v.name.clone(),
                });
            }
        }
        Ok(Lowering { label, vars, slots })
    }

    fn err_unbound(&self, var: &str) -> CompileError {
        CompileError::Unbound { label: self.label.to_string(), var: var.to_string() }
    }

    fn err_sort(&self, var: &str, expected: &'static str) -> CompileError {
        CompileError::Sort { label: self.label.to_string(), var: var.to_string(), expected }
    }

    fn err_wild(&self, context: &'static str) -> CompileError {
        CompileError::Wildcard { label: self.label.to_string(), context }
    }

    fn sort(&self, name: &str) -> Result<(usize, &'a VarSort), CompileError> {
        let i = *self.slots.get(name).ok_or_else(|| self.err_unbound(name))?;
        Ok((i, &self.vars[i].sort))
    }

    fn is_value_var(&self, name: &str) -> bool {
        matches!(self.sort(name), Ok((_, VarSort::Value)))
    }

    fn is_principal(&self, name: &str) -> bool {
        matches!(self.sort(name), Ok((_, VarSort::Principal { .. })))
    }

    /// Repeatedly turns `X = T` guards into substitutions.
    fn extract_lets(
        &self,
        premises: &mut [Premise],
        conclusion: &mut Option<Template>,
        guards: &mut Vec<Guard>,
    ) -> Result<Vec<(String, Template)>, CompileError> {
        // check declarations before rewriting so errors point at user text
        for g in guards.iter() {
            let mut bad = None;
            g.visit_vars(&mut |v| {
                if bad.is_none() && !self.slots.contains_key(v) {
                    bad = Some(v.to_string());
                }
            });
            if let Some(v) = bad {
                return Err(self.err_unbound(&v));
            }
        }
        let mut lets: Vec<(String, Template)> = Vec::new();
        loop {
            let found = guards.iter().position(|g| self.let_candidate(g).is_some());
            let Some(i) = found else { break };
            let (x, t) = self.let_candidate(&guards[i]).unwrap();
            let (x, t) = (x.to_string(), t.clone());
            guards.remove(i);
            for p in premises.iter_mut() {
                if let Premise::Value(pt) = p {
                    *pt = subst(pt, &x, &t);
                }
            }
            if let Some(c) = conclusion.as_mut() {
                *c = subst(c, &x, &t);
            }
            for g in guards.iter_mut() {
                *g = subst_guard(g, &x, &t);
            }
            for (_, lt) in lets.iter_mut() {
                *lt = subst(lt, &x, &t);
            }
            lets.push((x, t));
        }
        Ok(lets)
    }

    fn let_candidate<'g>(&self, g: &'g Guard) -> Option<(&'g str, &'g Template)> {
        let Guard::Eq(a, b) = g else { return None };
        let pick = |x: &'g Template, t: &'g Template| -> Option<(&'g str, &'g Template)> {
            let Template::Var(name) = x else { return None };
            if !self.is_value_var(name) || t.has_wildcard() {
                return None;
            }
            let mut mentions = false;
            t.visit_vars(&mut |v| mentions |= v == name);
            (!mentions).then_some((name.as_str(), t))
        };
        pick(a, b).or_else(|| pick(b, a))
    }

    fn finish(
        &self,
        premises: Vec<Premise>,
        conclusion: Option<Template>,
        guards: Vec<Guard>,
        lets: Vec<(String, Template)>,
    ) -> Result<Compiled, CompileError> {
        let mut cprem = Vec::new();
        for p in &premises {
            cprem.push(match p {
                Premise::Value(t) => CPremise::Value(self.template(t, true, "premises")?),
                Premise::Members(s) => CPremise::Members(self.set_slot(s)?),
            });
        }
        let cconc = conclusion.as_ref().map(|t| self.template(t, false, "conclusions")).transpose()?;
        let mut goals = Vec::new();
        for g in &guards {
            goals.push(self.guard(g)?);
        }
        let mut clets = Vec::new();
        for (x, t) in &lets {
            let (slot, _) = self.sort(x)?;
            clets.push((slot, self.template(t, false, "let bindings")?));
        }
        // a set variable can only be bound by matching a set field
        let mut matched_sets = vec![false; self.vars.len()];
        let mut mark = |t: &Template| mark_set_vars(t, &self.slots, &mut matched_sets);
        premises.iter().for_each(|p| if let Premise::Value(t) = p { mark(t) });
        conclusion.iter().for_each(&mut mark);
        for g in &guards {
            match g {
                Guard::Eq(a, b) => {
                    mark(a);
                    mark(b);
                }
                Guard::Knows(t) | Guard::Draws(t) | Guard::Exists(t) => mark(t),
                _ => {}
            }
        }
        for (i, v) in self.vars.iter().enumerate() {
            if v.sort == VarSort::Set && !matched_sets[i] {
                return Err(CompileError::Invalid {
                    label: self.label.to_string(),
                    what: format!("set variable `{}` is never matched against a set field", v.name),
                });
            }
        }
        Ok(Compiled {
            label: self.label.to_string(),
            vars: self.vars.to_vec(),
            premises: cprem,
            conclusion: cconc,
            goals,
            lets: clets,
        })
    }

    fn set_slot(&self, name: &str) -> Result<usize, CompileError> {
        match self.sort(name)? {
            (i, VarSort::Set) => Ok(i),
            _ => Err(self.err_sort(name, "set")),
        }
    }

    fn principal_slot(&self, name: &str) -> Result<usize, CompileError> {
        match self.sort(name)? {
            (i, VarSort::Principal { .. }) => Ok(i),
            _ => Err(self.err_sort(name, "principal")),
        }
    }

    fn template(&self, t: &Template, wild_ok: bool, ctx: &'static str) -> Result<CT, CompileError> {
        let sub = |t: &Template| self.template(t, wild_ok, ctx);
        Ok(match t {
            Template::Var(name) => match self.sort(name)? {
                (i, VarSort::Value | VarSort::Fresh(_)) => CT::Var(i),
                _ => return Err(self.err_sort(name, "value")),
            },
            Template::Wildcard => {
                if !wild_ok {
                    return Err(self.err_wild(ctx));
                }
                CT::Any
            }
            Template::Const(c) => CT::Const(c.clone()),
            Template::Attr { attr, principal } => CT::Attr(attr.clone(), self.principal_slot(principal)?),
            Template::Enc { key, plain } => CT::Enc(Box::new(sub(key)?), self.set(plain, wild_ok, ctx)?),
            Template::Nonce { seed, id } => CT::Nonce(Box::new(sub(seed)?), Box::new(sub(id)?)),
            Template::Hash(s) => CT::Hash(self.set(s, wild_ok, ctx)?),
            Template::Tuple(s) => CT::Tuple(self.set(s, wild_ok, ctx)?),
            Template::Puf(c) => CT::Puf(Box::new(sub(c)?)),
            Template::Field(b, f) => CT::Field(Box::new(self.template(b, false, "field accessors")?), *f),
        })
    }

    fn set(&self, s: &SetTemplate, wild_ok: bool, ctx: &'static str) -> Result<CS, CompileError> {
        Ok(match s {
            SetTemplate::Elems(items) => {
                CS::Elems(items.iter().map(|t| self.template(t, wild_ok, ctx)).collect::<Result<_, _>>()?)
            }
            SetTemplate::Var(v) => CS::Var(self.set_slot(v)?),
        })
    }

    fn set_expr(&self, s: &SetExpr) -> Result<CSetExpr, CompileError> {
        Ok(match s {
            SetExpr::Lit(st) => CSetExpr::Lit(self.set(st, false, "set guards")?),
            SetExpr::Field(t, f) => CSetExpr::Field(self.template(t, false, "set guards")?, *f),
        })
    }

    fn guard(&self, g: &Guard) -> Result<Goal, CompileError> {
        let both_principals = |a: &Template, b: &Template| match (a, b) {
            (Template::Var(x), Template::Var(y)) if self.is_principal(x) && self.is_principal(y) => {
                Some((self.slots[x.as_str()], self.slots[y.as_str()]))
            }
            _ => None,
        };
        Ok(match g {
            Guard::Eq(a, b) => match both_principals(a, b) {
                Some((x, y)) => Goal::PEq(x, y),
                None => {
                    if a.has_wildcard() && b.has_wildcard() {
                        return Err(self.err_wild("both sides of an equation"));
                    }
                    Goal::Eq(self.template(a, true, "equations")?, self.template(b, true, "equations")?)
                }
            },
            Guard::Neq(a, b) => match both_principals(a, b) {
                Some((x, y)) => Goal::PNeq(x, y),
                None => Goal::Neq(self.template(a, false, "`!=`")?, self.template(b, false, "`!=`")?),
            },
            Guard::Member(t, s) => Goal::Member(self.template(t, true, "membership")?, self.set_expr(s)?),
            Guard::Card(s, op, n) => Goal::Card(self.set_expr(s)?, *op, *n),
            Guard::Kind(t, k) => Goal::Kind(self.template(t, false, "kind tests")?, *k),
            Guard::Owned(t, o) => Goal::Owned(
                self.template(t, false, "ownership tests")?,
                match o {
                    Owner::Oscar => COwner::Oscar,
                    Owner::Honest => COwner::Honest,
                    Owner::Principal(p) => COwner::Var(self.principal_slot(p)?),
                },
            ),
            Guard::IfOption(o, inner) => Goal::IfOption(*o, Box::new(self.guard(inner)?)),
            Guard::Knows(t) => Goal::Match(self.template(t, true, "knows")?, Source::Known),
            Guard::Draws(t) => Goal::Match(self.template(t, true, "draws")?, Source::Drawn),
            Guard::Exists(t) => Goal::Match(self.template(t, true, "exists")?, Source::Domain),
            Guard::NotDraws(t) => Goal::NotDraws(self.template(t, false, "`!draws`")?),
        })
    }
}

fn mark_set_vars(t: &Template, slots: &HashMap<&str, usize>, out: &mut [bool]) {
    let set = |s: &SetTemplate, out: &mut [bool]| match s {
        SetTemplate::Var(v) => {
            if let Some(&i) = slots.get(v.as_str()) {
                out[i] = true;
            }
        }
        SetTemplate::Elems(items) => items.iter().for_each(|t| mark_set_vars(t, slots, out)),
    };
    match t {
        Template::Enc { key, plain } => {
            mark_set_vars(key, slots, out);
            set(plain, out);
        }
        Template::Nonce { seed, id } => {
            mark_set_vars(seed, slots, out);
            mark_set_vars(id, slots, out);
        }
        Template::Hash(s) | Template::Tuple(s) => set(s, out),
        Template::Puf(c) => mark_set_vars(c, slots, out),
        _ => {}
    }
}

pub(crate) fn subst(t: &Template, x: &str, by: &Template) -> Template {
    let s = |t: &Template| Box::new(subst(t, x, by));
    let ss = |st: &SetTemplate| match st {
        SetTemplate::Elems(items) => SetTemplate::Elems(items.iter().map(|t| subst(t, x, by)).collect()),
        SetTemplate::Var(v) => SetTemplate::Var(v.clone()),
    };
    match t {
        Template::Var(v) if v == x => by.clone(),
        Template::Var(_) | Template::Wildcard | Template::Const(_) | Template::Attr { .. } => t.clone(),
        Template::Enc { key, plain } => Template::Enc { key: s(key), plain: ss(plain) },
        Template::Nonce { seed, id } => Template::Nonce { seed: s(seed), id: s(id) },
        Template::Hash(st) => Template::Hash(ss(st)),
        Template::Tuple(st) => Template::Tuple(ss(st)),
        Template::Puf(c) => Template::Puf(s(c)),
        Template::Field(b, f) => Template::Field(s(b), *f),
    }
}

fn subst_set_expr(e: &SetExpr, x: &str, by: &Template) -> SetExpr {
    match e {
        SetExpr::Lit(SetTemplate::Elems(items)) => {
            SetExpr::Lit(SetTemplate::Elems(items.iter().map(|t| subst(t, x, by)).collect()))
        }
        SetExpr::Lit(v) => SetExpr::Lit(v.clone()),
        SetExpr::Field(t, f) => SetExpr::Field(subst(t, x, by), *f),
    }
}

fn subst_guard(g: &Guard, x: &str, by: &Template) -> Guard {
    let s = |t: &Template| subst(t, x, by);
    match g {
        Guard::Eq(a, b) => Guard::Eq(s(a), s(b)),
        Guard::Neq(a, b) => Guard::Neq(s(a), s(b)),
        Guard::Member(t, e) => Guard::Member(s(t), subst_set_expr(e, x, by)),
        Guard::Card(e, op, n) => Guard::Card(subst_set_expr(e, x, by), *op, *n),
        Guard::Kind(t, k) => Guard::Kind(s(t), *k),
        Guard::Owned(t, o) => Guard::Owned(s(t), o.clone()),
        Guard::IfOption(o, inner) => Guard::IfOption(*o, Box::new(subst_guard(inner, x, by))),
        Guard::Knows(t) => Guard::Knows(s(t)),
        Guard::Draws(t) => Guard::Draws(s(t)),
        Guard::NotDraws(t) => Guard::NotDraws(s(t)),
        Guard::Exists(t) => Guard::Exists(s(t)),
    }
}
