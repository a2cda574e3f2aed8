//! Rule schemas, the primitive library, and grounding over a universe.
//!
//! A schema is a set of premise templates, a conclusion template and a
//! conjunction of guards over typed variables. Grounding enumerates every
//! variable assignment whose premises and conclusion all exist in the
//! universe and whose guards hold; each becomes a [`GroundRule`].

pub(crate) mod compile;
pub(crate) mod eval;
mod ground;
mod primitives;

use std::fmt;

use serde::Serialize;

use crate::terms::{AtomKind, ValueHandle, ValueKind};

pub use compile::{compile_schema, compile_theorem, CompileError, Compiled};
pub use eval::{Binding, Context, Env, PrincipalAtoms, Solver, World};
pub use ground::{ground, ground_all};
pub use primitives::{
    primitive_decryptor, primitive_encryptor, primitive_get_response, primitive_get_secret,
    primitive_hasher, primitive_nonce_generator, primitive_schema, primitive_tuple_projection,
    Primitive, PROG,
};

/// Which principals a principal variable may stand for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrincipalRange {
    Honest,
    Oscar,
    Any,
}

impl PrincipalRange {
    pub fn name(self) -> &'static str {
        match self {
            PrincipalRange::Honest => "honest",
            PrincipalRange::Oscar => "oscar",
            PrincipalRange::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VarSort {
    /// A principal, optionally tied to a protocol role for session binding.
    Principal { range: PrincipalRange, role: Option<String> },
    /// Any value of the universe.
    Value,
    /// A non-empty set of values; only bindable by matching a set field.
    Set,
    /// A per-session atom of the named fresh family.
    Fresh(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarDecl {
    pub name: String,
    pub sort: VarSort,
}

impl VarDecl {
    pub fn value(name: &str) -> Self {
        VarDecl { name: name.to_string(), sort: VarSort::Value }
    }

    pub fn set(name: &str) -> Self {
        VarDecl { name: name.to_string(), sort: VarSort::Set }
    }

    pub fn fresh(name: &str, family: &str) -> Self {
        VarDecl { name: name.to_string(), sort: VarSort::Fresh(family.to_string()) }
    }

    pub fn principal(name: &str, range: PrincipalRange, role: Option<&str>) -> Self {
        VarDecl {
            name: name.to_string(),
            sort: VarSort::Principal { range, role: role.map(str::to_string) },
        }
    }
}

/// Accessor on a bound value, usable inside guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Key,
    Seed,
    Id,
    Challenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetField {
    Plain,
    Of,
    Contents,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Key => "key",
            Field::Seed => "seed",
            Field::Id => "id",
            Field::Challenge => "challenge",
        }
    }
}

impl SetField {
    pub fn name(self) -> &'static str {
        match self {
            SetField::Plain => "plain",
            SetField::Of => "of",
            SetField::Contents => "contents",
        }
    }
}

/// A value template: a constructor tree over variables and atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Template {
    Var(String),
    /// Matches anything; only allowed where the template is matched.
    Wildcard,
    /// A protocol constant atom.
    Const(String),
    /// A per-principal atom: `ident(P)` or a declared attribute like `prog(P)`.
    Attr { attr: String, principal: String },
    Enc { key: Box<Template>, plain: SetTemplate },
    Nonce { seed: Box<Template>, id: Box<Template> },
    Hash(SetTemplate),
    Tuple(SetTemplate),
    Puf(Box<Template>),
    Field(Box<Template>, Field),
}

/// Name of the built-in per-principal identity attribute.
pub const IDENT: &str = "ident";

impl Template {
    pub fn var(name: &str) -> Self {
        Template::Var(name.to_string())
    }

    pub fn ident(principal: &str) -> Self {
        Template::Attr { attr: IDENT.to_string(), principal: principal.to_string() }
    }

    pub fn attr(attr: &str, principal: &str) -> Self {
        Template::Attr { attr: attr.to_string(), principal: principal.to_string() }
    }

    pub fn constant(name: &str) -> Self {
        Template::Const(name.to_string())
    }

    pub fn enc(key: Template, plain: SetTemplate) -> Self {
        Template::Enc { key: Box::new(key), plain }
    }

    pub fn nonce(seed: Template, id: Template) -> Self {
        Template::Nonce { seed: Box::new(seed), id: Box::new(id) }
    }

    pub fn hash(of: SetTemplate) -> Self {
        Template::Hash(of)
    }

    pub fn tuple(contents: SetTemplate) -> Self {
        Template::Tuple(contents)
    }

    pub fn puf(challenge: Template) -> Self {
        Template::Puf(Box::new(challenge))
    }

    /// Top-level constructor kind, if the template fixes one.
    pub fn top_kind(&self) -> Option<ValueKind> {
        match self {
            Template::Const(_) | Template::Attr { .. } => Some(ValueKind::Atom),
            Template::Enc { .. } => Some(ValueKind::Ciphertext),
            Template::Nonce { .. } => Some(ValueKind::Nonce),
            Template::Hash(_) => Some(ValueKind::Hash),
            Template::Tuple(_) => Some(ValueKind::Tuple),
            Template::Puf(_) => Some(ValueKind::PufResponse),
            Template::Var(_) | Template::Wildcard | Template::Field(..) => None,
        }
    }

    /// Calls `f` for every variable name mentioned, in order of appearance.
    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Template::Var(v) => f(v),
            Template::Wildcard | Template::Const(_) => {}
            Template::Attr { principal, .. } => f(principal),
            Template::Enc { key, plain } => {
                key.visit_vars(f);
                plain.visit_vars(f);
            }
            Template::Nonce { seed, id } => {
                seed.visit_vars(f);
                id.visit_vars(f);
            }
            Template::Hash(s) | Template::Tuple(s) => s.visit_vars(f),
            Template::Puf(c) => c.visit_vars(f),
            Template::Field(b, _) => b.visit_vars(f),
        }
    }

    pub fn has_wildcard(&self) -> bool {
        match self {
            Template::Wildcard => true,
            Template::Var(_) | Template::Const(_) | Template::Attr { .. } => false,
            Template::Enc { key, plain } => key.has_wildcard() || plain.has_wildcard(),
            Template::Nonce { seed, id } => seed.has_wildcard() || id.has_wildcard(),
            Template::Hash(s) | Template::Tuple(s) => s.has_wildcard(),
            Template::Puf(c) | Template::Field(c, _) => c.has_wildcard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SetTemplate {
    /// Literal set; its elements must instantiate to distinct values.
    Elems(Vec<Template>),
    Var(String),
}

impl SetTemplate {
    pub fn of(items: impl IntoIterator<Item = Template>) -> Self {
        SetTemplate::Elems(items.into_iter().collect())
    }

    pub fn var(name: &str) -> Self {
        SetTemplate::Var(name.to_string())
    }

    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            SetTemplate::Elems(items) => items.iter().for_each(|t| t.visit_vars(f)),
            SetTemplate::Var(v) => f(v),
        }
    }

    fn has_wildcard(&self) -> bool {
        match self {
            SetTemplate::Elems(items) => items.iter().any(Template::has_wildcard),
            SetTemplate::Var(_) => false,
        }
    }
}

/// Set-valued operand of a guard.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SetExpr {
    Lit(SetTemplate),
    Field(Template, SetField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: usize, rhs: usize) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KindTest {
    Value(ValueKind),
    Atom(AtomKind),
}

impl KindTest {
    pub fn name(self) -> &'static str {
        match self {
            KindTest::Value(k) => k.name(),
            KindTest::Atom(k) => k.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Owner {
    Oscar,
    Honest,
    Principal(String),
}

/// Protocol-wide switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ProtoOption {
    /// Ciphers are keyed by owned atoms; decryption needs the owner.
    PublicKeyCryptography,
    /// Every cipher key is an identity atom.
    IdentitiesAreKeys,
}

impl ProtoOption {
    pub const ALL: [ProtoOption; 2] =
        [ProtoOption::PublicKeyCryptography, ProtoOption::IdentitiesAreKeys];

    pub fn name(self) -> &'static str {
        match self {
            ProtoOption::PublicKeyCryptography => "PublicKeyCryptography",
            ProtoOption::IdentitiesAreKeys => "IdentitiesAreKeys",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Guard {
    Eq(Template, Template),
    Neq(Template, Template),
    Member(Template, SetExpr),
    Card(SetExpr, CmpOp, usize),
    Kind(Template, KindTest),
    Owned(Template, Owner),
    IfOption(ProtoOption, Box<Guard>),
    // Theorem-only membership constraints on Oscar's state.
    Knows(Template),
    Draws(Template),
    NotDraws(Template),
    /// The value exists in the universe.
    Exists(Template),
}

impl Guard {
    pub fn is_state_constraint(&self) -> bool {
        match self {
            Guard::Knows(_) | Guard::Draws(_) | Guard::NotDraws(_) => true,
            Guard::IfOption(_, g) => g.is_state_constraint(),
            _ => false,
        }
    }

    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        let set = |s: &'a SetExpr, f: &mut dyn FnMut(&'a str)| match s {
            SetExpr::Lit(st) => st.visit_vars(&mut |v| f(v)),
            SetExpr::Field(t, _) => t.visit_vars(&mut |v| f(v)),
        };
        match self {
            Guard::Eq(a, b) | Guard::Neq(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Guard::Member(t, s) => {
                t.visit_vars(f);
                set(s, f);
            }
            Guard::Card(s, _, _) => set(s, f),
            Guard::Kind(t, _)
            | Guard::Knows(t)
            | Guard::Draws(t)
            | Guard::NotDraws(t)
            | Guard::Exists(t) => t.visit_vars(f),
            Guard::Owned(t, o) => {
                t.visit_vars(f);
                if let Owner::Principal(p) = o {
                    f(p);
                }
            }
            Guard::IfOption(_, g) => g.visit_vars(f),
        }
    }
}

/// One premise slot: a single value, or every member of a set variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Premise {
    Value(Template),
    Members(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RuleSchema {
    pub label: String,
    pub vars: Vec<VarDecl>,
    pub premises: Vec<Premise>,
    pub conclusion: Template,
    pub guards: Vec<Guard>,
}

/// An instantiated rule: knowing every premise lets Oscar learn the
/// conclusion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundRule {
    pub label: String,
    /// Sorted, duplicate-free.
    pub premises: Vec<ValueHandle>,
    pub conclusion: ValueHandle,
}

impl GroundRule {
    pub fn new(label: impl Into<String>, premises: impl IntoIterator<Item = ValueHandle>, conclusion: ValueHandle) -> Self {
        GroundRule {
            label: label.into(),
            premises: crate::terms::handle_set(premises),
            conclusion,
        }
    }
}

impl fmt::Display for GroundRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps: Vec<String> = self.premises.iter().map(|p| p.to_string()).collect();
        write!(f, "{}: {{{}}} -> {}", self.label, ps.join(", "), self.conclusion)
    }
}
