//! The cryptographic primitives Oscar can invoke, as rule schemas.

use super::{
    Guard, Owner, Premise, PrincipalRange, ProtoOption, RuleSchema, SetExpr, SetTemplate, Template,
    VarDecl,
};

/// Attribute naming a principal's PUF program hash.
pub const PROG: &str = "prog";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Primitive {
    Encrypt,
    Decrypt,
    Nonce,
    Hash,
    Project,
    PufResponse,
    PufSecret,
}

impl Primitive {
    pub const ALL: [Primitive; 7] = [
        Primitive::Encrypt,
        Primitive::Decrypt,
        Primitive::Nonce,
        Primitive::Hash,
        Primitive::Project,
        Primitive::PufResponse,
        Primitive::PufSecret,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Encrypt => "encrypt",
            Primitive::Decrypt => "decrypt",
            Primitive::Nonce => "nonce",
            Primitive::Hash => "hash",
            Primitive::Project => "project",
            Primitive::PufResponse => "puf_response",
            Primitive::PufSecret => "puf_secret",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

pub fn primitive_schema(p: Primitive) -> RuleSchema {
    match p {
        Primitive::Encrypt => primitive_encryptor(),
        Primitive::Decrypt => primitive_decryptor(),
        Primitive::Nonce => primitive_nonce_generator(),
        Primitive::Hash => primitive_hasher(),
        Primitive::Project => primitive_tuple_projection(),
        Primitive::PufResponse => primitive_get_response(),
        Primitive::PufSecret => primitive_get_secret(),
    }
}

fn oscar(name: &str) -> VarDecl {
    VarDecl::principal(name, PrincipalRange::Oscar, None)
}

/// `{K} + XS -> enc(K, XS)`
pub fn primitive_encryptor() -> RuleSchema {
    RuleSchema {
        label: "encrypt".into(),
        vars: vec![VarDecl::value("K"), VarDecl::set("XS")],
        premises: vec![Premise::Value(Template::var("K")), Premise::Members("XS".into())],
        conclusion: Template::enc(Template::var("K"), SetTemplate::var("XS")),
        guards: vec![],
    }
}

/// `{enc(K, XS), K} -> X` for each `X` in `XS`; with public keys, `K` must
/// belong to Oscar.
pub fn primitive_decryptor() -> RuleSchema {
    RuleSchema {
        label: "decrypt".into(),
        vars: vec![VarDecl::value("K"), VarDecl::set("XS"), VarDecl::value("X")],
        premises: vec![
            Premise::Value(Template::enc(Template::var("K"), SetTemplate::var("XS"))),
            Premise::Value(Template::var("K")),
        ],
        conclusion: Template::var("X"),
        guards: vec![
            Guard::Member(Template::var("X"), SetExpr::Lit(SetTemplate::var("XS"))),
            Guard::IfOption(
                ProtoOption::PublicKeyCryptography,
                Box::new(Guard::Owned(Template::var("K"), Owner::Oscar)),
            ),
        ],
    }
}

/// `{S} -> nonce(S, ident(O))`
pub fn primitive_nonce_generator() -> RuleSchema {
    RuleSchema {
        label: "nonce".into(),
        vars: vec![VarDecl::value("S"), oscar("O")],
        premises: vec![Premise::Value(Template::var("S"))],
        conclusion: Template::nonce(Template::var("S"), Template::ident("O")),
        guards: vec![],
    }
}

/// `XS -> hash(XS)`
pub fn primitive_hasher() -> RuleSchema {
    RuleSchema {
        label: "hash".into(),
        vars: vec![VarDecl::set("XS")],
        premises: vec![Premise::Members("XS".into())],
        conclusion: Template::hash(SetTemplate::var("XS")),
        guards: vec![],
    }
}

/// `{tuple(XS)} -> X` for each `X` in `XS`
pub fn primitive_tuple_projection() -> RuleSchema {
    RuleSchema {
        label: "project".into(),
        vars: vec![VarDecl::set("XS"), VarDecl::value("X")],
        premises: vec![Premise::Value(Template::tuple(SetTemplate::var("XS")))],
        conclusion: Template::var("X"),
        guards: vec![Guard::Member(Template::var("X"), SetExpr::Lit(SetTemplate::var("XS")))],
    }
}

/// Oscar runs his own program on the PUF: the challenge must be the hash
/// of his program and a parameter of his choice.
pub fn primitive_get_response() -> RuleSchema {
    let chall = Template::hash(SetTemplate::of([Template::attr(PROG, "O"), Template::var("X")]));
    RuleSchema {
        label: "puf_response".into(),
        vars: vec![oscar("O"), VarDecl::value("X")],
        premises: vec![Premise::Value(chall.clone())],
        conclusion: Template::puf(chall),
        guards: vec![],
    }
}

/// `{puf(X), prog(O)} -> hash{puf(X), prog(O)}`: the secret Oscar's own
/// program derives from a response.
pub fn primitive_get_secret() -> RuleSchema {
    let resp = Template::puf(Template::var("X"));
    let prog = Template::attr(PROG, "O");
    RuleSchema {
        label: "puf_secret".into(),
        vars: vec![oscar("O"), VarDecl::value("X")],
        premises: vec![Premise::Value(resp.clone()), Premise::Value(prog.clone())],
        conclusion: Template::hash(SetTemplate::of([resp, prog])),
        guards: vec![],
    }
}
