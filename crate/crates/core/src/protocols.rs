//! Protocol descriptions and the built-in protocols.

use std::collections::BTreeSet;

use crate::rules::{
    Guard, KindTest, Premise, Primitive, PrincipalRange, ProtoOption, RuleSchema, SetTemplate,
    Template, VarDecl, PROG,
};
use crate::terms::{AtomKind, ValueKind};

/// A named atom declaration. Constants exist once per scenario, fresh
/// families once per session (`name#i`), attributes once per principal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomDecl {
    pub name: String,
    pub kind: AtomKind,
    /// Secret atoms are never drawn by Oscar (unless he owns them).
    pub secret: bool,
}

impl AtomDecl {
    pub fn new(name: &str, kind: AtomKind, secret: bool) -> Self {
        AtomDecl { name: name.to_string(), kind, secret }
    }
}

/// An existential forbidden pattern; a match is an attack.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TheoremSpec {
    pub label: String,
    pub vars: Vec<VarDecl>,
    pub guards: Vec<Guard>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProtocolSpec {
    pub name: String,
    pub roles: Vec<String>,
    pub options: BTreeSet<ProtoOption>,
    pub primitives: Vec<Primitive>,
    pub consts: Vec<AtomDecl>,
    pub fresh: Vec<AtomDecl>,
    pub attrs: Vec<AtomDecl>,
    pub schemas: Vec<RuleSchema>,
    pub theorem: TheoremSpec,
}

impl ProtocolSpec {
    pub fn schema(&self, label: &str) -> Option<&RuleSchema> {
        self.schemas.iter().find(|s| s.label == label)
    }
}

pub const BUILTINS: [&str; 4] = ["ns", "nsl", "otway_rees", "cpuf_renewal"];

pub fn builtin(name: &str) -> Option<ProtocolSpec> {
    match name {
        "ns" => Some(ns()),
        "nsl" => Some(nsl()),
        "otway_rees" => Some(otway_rees()),
        "cpuf_renewal" => Some(cpuf_renewal()),
        _ => None,
    }
}

fn var(n: &str) -> Template {
    Template::var(n)
}

fn id(p: &str) -> Template {
    Template::ident(p)
}

fn set<const N: usize>(items: [Template; N]) -> SetTemplate {
    SetTemplate::of(items)
}

fn honest(n: &str, role: &str) -> VarDecl {
    VarDecl::principal(n, PrincipalRange::Honest, Some(role))
}

fn any(n: &str, role: &str) -> VarDecl {
    VarDecl::principal(n, PrincipalRange::Any, Some(role))
}

fn ns_family(name: &str, lowe: bool) -> ProtocolSpec {
    let init_nonce = Template::nonce(var("S"), id("P"));
    let ns1 = RuleSchema {
        label: "ns1".into(),
        vars: vec![honest("P", "initiator"), any("Q", "responder"), VarDecl::fresh("S", "eps")],
        premises: vec![],
        conclusion: Template::enc(id("Q"), set([id("P"), init_nonce.clone()])),
        guards: vec![],
    };
    let resp_nonce = Template::nonce(var("C"), id("Q"));
    let mut resp = vec![var("V"), resp_nonce];
    if lowe {
        resp.push(id("Q"));
    }
    let ns2 = RuleSchema {
        label: "ns2".into(),
        vars: vec![any("P", "initiator"), honest("Q", "responder"), VarDecl::value("V"), VarDecl::value("C")],
        premises: vec![Premise::Value(var("C"))],
        conclusion: Template::enc(id("P"), SetTemplate::Elems(resp)),
        guards: vec![Guard::Eq(var("C"), Template::enc(id("Q"), set([id("P"), var("V")])))],
    };
    let mut got = vec![init_nonce, var("V")];
    if lowe {
        got.push(id("Q"));
    }
    let ns3 = RuleSchema {
        label: "ns3".into(),
        vars: vec![
            honest("P", "initiator"),
            any("Q", "responder"),
            VarDecl::fresh("S", "eps"),
            VarDecl::value("V"),
        ],
        premises: vec![Premise::Value(Template::enc(id("P"), SetTemplate::Elems(got)))],
        conclusion: Template::enc(id("Q"), set([var("V")])),
        guards: vec![],
    };
    let theorem = TheoremSpec {
        label: "nonce_secrecy".into(),
        vars: vec![
            VarDecl::principal("A", PrincipalRange::Honest, None),
            VarDecl::principal("B", PrincipalRange::Honest, None),
            VarDecl::value("NA"),
            VarDecl::value("NB"),
        ],
        guards: vec![
            Guard::Neq(var("A"), var("B")),
            Guard::Knows(var("NA")),
            Guard::Knows(var("NB")),
            Guard::Eq(var("NA"), Template::nonce(Template::Wildcard, id("A"))),
            Guard::Eq(
                var("NB"),
                Template::nonce(Template::enc(id("B"), set([id("A"), var("NA")])), id("B")),
            ),
        ],
    };
    ProtocolSpec {
        name: name.into(),
        roles: vec!["initiator".into(), "responder".into()],
        options: [ProtoOption::PublicKeyCryptography, ProtoOption::IdentitiesAreKeys].into(),
        primitives: vec![Primitive::Encrypt, Primitive::Decrypt, Primitive::Nonce],
        consts: vec![],
        fresh: vec![AtomDecl::new("eps", AtomKind::Seed, false)],
        attrs: vec![],
        schemas: vec![ns1, ns2, ns3],
        theorem,
    }
}

/// Needham-Schroeder public-key protocol, three knowledge-flow rules.
pub fn ns() -> ProtocolSpec {
    ns_family("ns", false)
}

/// Lowe's fix: the responder names itself inside message 2, and the
/// initiator only continues if that name is the peer it started with.
pub fn nsl() -> ProtocolSpec {
    ns_family("nsl", true)
}

/// Otway-Rees with symmetric long-term keys `nonce(ks, ident(P))` shared
/// with the server; messages are tuples.
pub fn otway_rees() -> ProtocolSpec {
    let key = |p: &str| Template::nonce(Template::constant("ks"), id(p));
    let ids = || set([id("P"), id("Q")]);
    let m1 = Template::tuple(set([Template::enc(key("P"), ids()), id("P"), id("Q")]));
    let m2 = Template::tuple(set([
        Template::enc(key("P"), ids()),
        Template::enc(key("Q"), ids()),
        id("P"),
        id("Q"),
    ]));
    let kc = |p: &str| Template::enc(key(p), set([var("K")]));
    let m3 = Template::tuple(set([kc("P"), kc("Q")]));
    let m4 = Template::tuple(set([kc("P")]));
    let sessions = || vec![any("P", "initiator"), any("Q", "responder")];
    let with = |mut v: Vec<VarDecl>, extra: VarDecl| {
        v.push(extra);
        v
    };
    let schemas = vec![
        RuleSchema {
            label: "or_m1".into(),
            vars: sessions(),
            premises: vec![],
            conclusion: m1.clone(),
            guards: vec![],
        },
        RuleSchema {
            label: "or_m2".into(),
            vars: sessions(),
            premises: vec![Premise::Value(m1)],
            conclusion: m2.clone(),
            guards: vec![],
        },
        RuleSchema {
            label: "or_m3".into(),
            vars: with(sessions(), VarDecl::value("K")),
            premises: vec![Premise::Value(m2)],
            conclusion: m3.clone(),
            guards: vec![],
        },
        RuleSchema {
            label: "or_m4".into(),
            vars: with(sessions(), VarDecl::value("K")),
            premises: vec![Premise::Value(m3)],
            conclusion: m4,
            guards: vec![],
        },
    ];
    let tkey = |p: &str| Template::nonce(Template::constant("ks"), id(p));
    let tids = || set([id("A"), id("B")]);
    let theorem = TheoremSpec {
        label: "session_key_secrecy".into(),
        vars: vec![
            VarDecl::principal("A", PrincipalRange::Honest, None),
            VarDecl::principal("B", PrincipalRange::Honest, None),
            VarDecl::principal("X", PrincipalRange::Any, None),
            VarDecl::set("YS"),
            VarDecl::value("K"),
        ],
        guards: vec![
            Guard::Neq(var("A"), var("B")),
            Guard::Knows(Template::tuple(set([Template::enc(tkey("A"), set([id("A"), id("X")])), id("A"), id("X")]))),
            Guard::Knows(Template::tuple(set([
                Template::enc(tkey("A"), tids()),
                Template::enc(tkey("B"), tids()),
                id("A"),
                id("B"),
            ]))),
            Guard::Knows(Template::tuple(set([
                Template::enc(tkey("A"), SetTemplate::var("YS")),
                Template::enc(tkey("B"), SetTemplate::var("YS")),
            ]))),
            Guard::Knows(Template::tuple(set([Template::enc(tkey("A"), set([var("K")]))]))),
            Guard::Kind(var("K"), KindTest::Value(ValueKind::Atom)),
            Guard::NotDraws(var("K")),
            Guard::Knows(var("K")),
        ],
    };
    ProtocolSpec {
        name: "otway_rees".into(),
        roles: vec!["initiator".into(), "responder".into()],
        options: BTreeSet::new(),
        primitives: vec![Primitive::Encrypt, Primitive::Decrypt, Primitive::Nonce, Primitive::Project],
        consts: vec![AtomDecl::new("ks", AtomKind::Seed, false)],
        fresh: vec![AtomDecl::new("k", AtomKind::Generic, true)],
        attrs: vec![],
        schemas,
        theorem,
    }
}

/// CPUF challenge renewal: the owner reveals the old challenge and its
/// program hash, then sends the new response encrypted under the secret
/// derived from the old response.
pub fn cpuf_renewal() -> ProtocolSpec {
    let param = Template::hash(set([var("S")]));
    let prog = Template::attr(PROG, "P");
    let owner = || vec![honest("P", "owner"), VarDecl::fresh("S", "pre")];
    let renewal = Template::enc(
        Template::hash(set([Template::puf(param.clone()), prog.clone()])),
        set([Template::puf(Template::hash(set([param.clone(), prog.clone()])))]),
    );
    let schemas = vec![
        RuleSchema {
            label: "reveal_param".into(),
            vars: owner(),
            premises: vec![],
            conclusion: param,
            guards: vec![],
        },
        RuleSchema {
            label: "reveal_hash".into(),
            vars: vec![honest("P", "owner")],
            premises: vec![],
            conclusion: prog,
            guards: vec![],
        },
        RuleSchema {
            label: "renewal".into(),
            vars: owner(),
            premises: vec![],
            conclusion: renewal,
            guards: vec![],
        },
    ];
    let tprog = Template::attr(PROG, "P");
    let theorem = TheoremSpec {
        label: "new_response_secrecy".into(),
        vars: vec![
            VarDecl::principal("P", PrincipalRange::Honest, None),
            VarDecl::value("OLDC"),
            VarDecl::set("XS"),
            VarDecl::value("S"),
        ],
        guards: vec![
            Guard::Eq(var("OLDC"), Template::hash(SetTemplate::var("XS"))),
            Guard::Member(var("S"), crate::rules::SetExpr::Lit(SetTemplate::var("XS"))),
            Guard::Kind(var("S"), KindTest::Value(ValueKind::Atom)),
            Guard::NotDraws(var("S")),
            Guard::Exists(Template::enc(
                Template::hash(set([Template::puf(var("OLDC")), tprog.clone()])),
                set([Template::puf(Template::hash(set([var("OLDC"), tprog.clone()])))]),
            )),
            Guard::Knows(Template::puf(Template::hash(set([var("OLDC"), tprog])))),
        ],
    };
    ProtocolSpec {
        name: "cpuf_renewal".into(),
        roles: vec!["owner".into()],
        options: BTreeSet::new(),
        primitives: vec![
            Primitive::Encrypt,
            Primitive::Decrypt,
            Primitive::Hash,
            Primitive::PufResponse,
            Primitive::PufSecret,
        ],
        consts: vec![],
        fresh: vec![AtomDecl::new("pre", AtomKind::Generic, true)],
        attrs: vec![AtomDecl::new(PROG, AtomKind::Generic, false)],
        schemas,
        theorem,
    }
}
