//! The `.kf` text format for protocol specifications.
//!
//! ```text
//! # comments run to end of line
//! protocol toy {
//!   roles initiator responder;
//!   options PublicKeyCryptography IdentitiesAreKeys;
//!   primitives encrypt decrypt nonce;
//!   secret fresh eps: seed;
//!   rule hello: forall P: honest@initiator, Q: any@responder, S: fresh eps .
//!     premises {}
//!     conclude enc(key=ident(Q), plain={ident(P), nonce(seed=S, id=ident(P))});
//!   theorem leak: exists A: honest, N .
//!     N = nonce(seed=_, id=ident(A)),
//!     knows N;
//! }
//! ```
//!
//! Variables start with an uppercase letter, atoms and keywords with a
//! lowercase one. [`render`] produces text that [`parse`] maps back to an
//! equal [`ProtocolSpec`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::protocols::{AtomDecl, ProtocolSpec, TheoremSpec};
use crate::rules::{
    compile_schema, compile_theorem, CmpOp, Field, Guard, KindTest, Owner, Premise, Primitive,
    PrincipalRange, ProtoOption, RuleSchema, SetExpr, SetField, SetTemplate, Template, VarDecl,
    VarSort, IDENT,
};
use crate::terms::{AtomKind, ValueKind};

const MAX_DEPTH: usize = 64;

/// Words that cannot name a constant or attribute.
const RESERVED: [&str; 11] =
    ["enc", "nonce", "hash", "tuple", "puf", "knows", "draws", "exists", "owned", "card", "if"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters; `col_end` is exclusive.
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    SyntaxError,
    /// A variable, constant, attribute, role or fresh family used before
    /// being declared.
    UnboundVariable,
    UnknownPrimitive,
    DuplicateRuleLabel,
    /// Well-formed text describing an ill-formed rule or theorem.
    InvalidRule,
}

impl DiagnosticKind {
    pub fn name(self) -> &'static str {
        match self {
            DiagnosticKind::SyntaxError => "SyntaxError",
            DiagnosticKind::UnboundVariable => "UnboundVariable",
            DiagnosticKind::UnknownPrimitive => "UnknownPrimitive",
            DiagnosticKind::DuplicateRuleLabel => "DuplicateRuleLabel",
            DiagnosticKind::InvalidRule => "InvalidRule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
    pub message: String,
    pub span: SourceSpan,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}:{}: {}[{}]: {}",
            self.span.file,
            self.span.line,
            self.span.col_start,
            sev,
            self.kind.name(),
            self.message
        )
    }
}

/// Parses a document, returning the spec only if there are no errors.
/// Warnings are dropped; use [`parse_document`] to see them.
pub fn parse(text: &str, file: &str) -> Result<ProtocolSpec, Vec<ParseDiagnostic>> {
    match parse_document(text, file) {
        (Some(spec), _) => Ok(spec),
        (None, diags) => Err(diags),
    }
}

/// Like [`parse`] but accepts arbitrary bytes.
pub fn parse_bytes(bytes: &[u8], file: &str) -> Result<ProtocolSpec, Vec<ParseDiagnostic>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text, file),
        Err(e) => {
            let prefix = String::from_utf8_lossy(&bytes[..e.valid_up_to()]);
            let line = prefix.matches('\n').count() + 1;
            let col = prefix.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(vec![ParseDiagnostic {
                severity: Severity::Error,
                kind: DiagnosticKind::SyntaxError,
                message: "input is not valid UTF-8".into(),
                span: SourceSpan { file: file.into(), line, col_start: col, col_end: col + 1 },
            }])
        }
    }
}

/// Parses a document and returns every diagnostic. The spec is present
/// iff no diagnostic is an error.
pub fn parse_document(text: &str, file: &str) -> (Option<ProtocolSpec>, Vec<ParseDiagnostic>) {
    let tokens = match lex(text) {
        Ok(t) => t,
        Err((msg, line, col)) => {
            let d = ParseDiagnostic {
                severity: Severity::Error,
                kind: DiagnosticKind::SyntaxError,
                message: msg,
                span: SourceSpan { file: file.into(), line, col_start: col, col_end: col + 1 },
            };
            return (None, vec![d]);
        }
    };
    let mut p = Parser::new(tokens, file);
    let spec = match p.document() {
        Ok(spec) => Some(spec),
        Err(d) => {
            p.diags.push(d);
            None
        }
    };
    let failed = p.diags.iter().any(|d| d.severity == Severity::Error);
    (if failed { None } else { spec }, p.diags)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(usize),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    len: usize,
}

const SYMBOLS: [&str; 16] =
    ["..", "!=", "<=", ">=", "{", "}", "(", ")", ",", ";", ":", ".", "=", "@", "!", "_"];

fn lex(text: &str) -> Result<Vec<Token>, (String, usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || (c == '_' && chars.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric())) {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(s), line, col, len: i - start });
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let n = s.parse().map_err(|_| (format!("number `{s}` is too large"), line, col))?;
            out.push(Token { tok: Tok::Num(n), line, col, len: i - start });
        } else {
            let sym = SYMBOLS.iter().find(|s| {
                s.chars().enumerate().all(|(k, sc)| chars.get(i + k) == Some(&sc))
            });
            let Some(sym) = sym else {
                return Err((format!("unexpected character `{c}`"), line, col));
            };
            i += sym.len();
            out.push(Token { tok: Tok::Sym(sym), line, col, len: sym.len() });
        }
        col += i - start;
    }
    out.push(Token { tok: Tok::Eof, line, col, len: 1 });
    Ok(out)
}

type PResult<T> = Result<T, ParseDiagnostic>;

struct Parser<'f> {
    toks: Vec<Token>,
    pos: usize,
    file: &'f str,
    depth: usize,
    diags: Vec<ParseDiagnostic>,
    scope: HashMap<String, VarSort>,
    consts: BTreeSet<String>,
    attrs: BTreeSet<String>,
    families: BTreeSet<String>,
    roles: BTreeSet<String>,
}

fn is_var_name(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_uppercase())
}

impl<'f> Parser<'f> {
    fn new(toks: Vec<Token>, file: &'f str) -> Self {
        Parser {
            toks,
            pos: 0,
            file,
            depth: 0,
            diags: Vec::new(),
            scope: HashMap::new(),
            consts: BTreeSet::new(),
            attrs: BTreeSet::new(),
            families: BTreeSet::new(),
            roles: BTreeSet::new(),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span_of(&self, t: &Token) -> SourceSpan {
        SourceSpan { file: self.file.into(), line: t.line, col_start: t.col, col_end: t.col + t.len }
    }

    fn span(&self) -> SourceSpan {
        self.span_of(&self.toks[self.pos])
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn diag(&self, kind: DiagnosticKind, message: String, span: SourceSpan) -> ParseDiagnostic {
        ParseDiagnostic { severity: Severity::Error, kind, message, span }
    }

    fn report(&mut self, kind: DiagnosticKind, message: String, span: SourceSpan) {
        let d = self.diag(kind, message, span);
        self.diags.push(d);
    }

    fn unexpected(&self, wanted: &str) -> ParseDiagnostic {
        let found = match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        };
        self.diag(DiagnosticKind::SyntaxError, format!("expected {wanted}, found {found}"), self.span())
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = self.is_sym(s);
        if hit {
            self.bump();
        }
        hit
    }

    fn eat_kw(&mut self, s: &str) -> bool {
        let hit = self.is_kw(s);
        if hit {
            self.bump();
        }
        hit
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.span();
                self.bump();
                Ok((s, span))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn lower_ident(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        match self.peek() {
            Tok::Ident(s) if !is_var_name(s) => self.ident(what),
            _ => Err(self.unexpected(what)),
        }
    }

    fn var_name(&mut self) -> PResult<(String, SourceSpan)> {
        match self.peek() {
            Tok::Ident(s) if is_var_name(s) => self.ident("a variable"),
            _ => Err(self.unexpected("a variable (uppercase name)")),
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.diag(DiagnosticKind::SyntaxError, "nesting too deep".into(), self.span()));
        }
        Ok(())
    }

    fn document(&mut self) -> PResult<ProtocolSpec> {
        if matches!(self.peek(), Tok::Eof) {
            return Err(self.diag(DiagnosticKind::SyntaxError, "missing `protocol` header".into(), self.span()));
        }
        self.expect_kw("protocol")?;
        let (name, _) = self.ident("a protocol name")?;
        self.expect_sym("{")?;
        let mut spec = ProtocolSpec {
            name,
            roles: Vec::new(),
            options: BTreeSet::new(),
            primitives: Vec::new(),
            consts: Vec::new(),
            fresh: Vec::new(),
            attrs: Vec::new(),
            schemas: Vec::new(),
            theorem: TheoremSpec { label: String::new(), vars: Vec::new(), guards: Vec::new() },
        };
        let mut theorem_seen = false;
        let mut labels: BTreeSet<String> = BTreeSet::new();
        while !self.eat_sym("}") {
            let (kw, span) = self.lower_ident("a declaration or `}`")?;
            match kw.as_str() {
                "roles" => {
                    while !self.eat_sym(";") {
                        let (r, rspan) = self.lower_ident("a role name")?;
                        if !self.roles.insert(r.clone()) {
                            self.report(DiagnosticKind::SyntaxError, format!("role `{r}` declared twice"), rspan);
                        }
                        spec.roles.push(r);
                    }
                }
                "options" => {
                    while !self.eat_sym(";") {
                        let (o, ospan) = self.ident("an option name")?;
                        match ProtoOption::from_name(&o) {
                            Some(opt) => {
                                if !spec.options.insert(opt) {
                                    self.diags.push(ParseDiagnostic {
                                        severity: Severity::Warning,
                                        kind: DiagnosticKind::SyntaxError,
                                        message: format!("option `{o}` listed twice"),
                                        span: ospan,
                                    });
                                }
                            }
                            None => self.report(DiagnosticKind::SyntaxError, format!("unknown option `{o}`"), ospan),
                        }
                    }
                }
                "primitives" => {
                    while !self.eat_sym(";") {
                        let (p, pspan) = self.lower_ident("a primitive name")?;
                        match Primitive::from_name(&p) {
                            Some(prim) if spec.primitives.contains(&prim) => self.report(
                                DiagnosticKind::DuplicateRuleLabel,
                                format!("primitive `{p}` listed twice"),
                                pspan,
                            ),
                            Some(prim) => {
                                labels.insert(p);
                                spec.primitives.push(prim);
                            }
                            None => self.report(DiagnosticKind::UnknownPrimitive, format!("unknown primitive `{p}`"), pspan),
                        }
                    }
                }
                "secret" | "const" | "fresh" | "attr" => {
                    let secret = kw == "secret";
                    let which = if secret { self.lower_ident("`const`, `fresh` or `attr`")?.0 } else { kw };
                    let decl = self.atom_decl(secret)?;
                    let (set, list) = match which.as_str() {
                        "const" => (&mut self.consts, &mut spec.consts),
                        "fresh" => (&mut self.families, &mut spec.fresh),
                        "attr" => (&mut self.attrs, &mut spec.attrs),
                        other => {
                            return Err(self.diag(
                                DiagnosticKind::SyntaxError,
                                format!("expected `const`, `fresh` or `attr`, found `{other}`"),
                                span,
                            ))
                        }
                    };
                    let fresh = set.insert(decl.name.clone());
                    list.push(decl.clone());
                    if !fresh || decl.name == IDENT {
                        self.report(DiagnosticKind::SyntaxError, format!("`{}` declared twice", decl.name), span);
                    }
                }
                "rule" => {
                    let (schema, lspan) = self.rule()?;
                    if !labels.insert(schema.label.clone()) {
                        self.report(
                            DiagnosticKind::DuplicateRuleLabel,
                            format!("rule label `{}` already used", schema.label),
                            lspan,
                        );
                    }
                    spec.schemas.push(schema);
                }
                "theorem" => {
                    if theorem_seen {
                        self.report(DiagnosticKind::SyntaxError, "only one theorem is allowed".into(), span);
                    }
                    theorem_seen = true;
                    spec.theorem = self.theorem()?;
                }
                other => {
                    return Err(self.diag(DiagnosticKind::SyntaxError, format!("unknown declaration `{other}`"), span))
                }
            }
        }
        if !matches!(self.peek(), Tok::Eof) {
            return Err(self.unexpected("end of input"));
        }
        if !theorem_seen {
            let span = self.span();
            self.report(DiagnosticKind::SyntaxError, "protocol has no theorem".into(), span);
        }
        Ok(spec)
    }

    fn atom_decl(&mut self, secret: bool) -> PResult<AtomDecl> {
        let (name, span) = self.lower_ident("an atom name")?;
        if RESERVED.contains(&name.as_str()) {
            self.report(DiagnosticKind::SyntaxError, format!("`{name}` is a reserved word"), span);
        }
        self.expect_sym(":")?;
        let (k, kspan) = self.lower_ident("an atom kind")?;
        let kind = match k.as_str() {
            "identity" => AtomKind::Identity,
            "seed" => AtomKind::Seed,
            "generic" => AtomKind::Generic,
            _ => {
                return Err(self.diag(
                    DiagnosticKind::SyntaxError,
                    format!("unknown atom kind `{k}` (identity, seed or generic)"),
                    kspan,
                ))
            }
        };
        self.expect_sym(";")?;
        Ok(AtomDecl { name, kind, secret })
    }

    fn var_decls(&mut self) -> PResult<Vec<VarDecl>> {
        self.scope.clear();
        let mut vars = Vec::new();
        if self.eat_sym(".") {
            return Ok(vars);
        }
        loop {
            let (name, span) = self.var_name()?;
            let sort = if self.eat_sym(":") {
                let (s, sspan) = self.lower_ident("a sort")?;
                match s.as_str() {
                    "set" => VarSort::Set,
                    "fresh" => {
                        let (fam, fspan) = self.lower_ident("a fresh family")?;
                        if !self.families.contains(&fam) {
                            self.report(DiagnosticKind::UnboundVariable, format!("fresh family `{fam}` is not declared"), fspan);
                        }
                        VarSort::Fresh(fam)
                    }
                    "honest" | "oscar" | "any" => {
                        let range = match s.as_str() {
                            "honest" => PrincipalRange::Honest,
                            "oscar" => PrincipalRange::Oscar,
                            _ => PrincipalRange::Any,
                        };
                        let role = if self.eat_sym("@") {
                            let (r, rspan) = self.lower_ident("a role")?;
                            if !self.roles.contains(&r) {
                                self.report(DiagnosticKind::UnboundVariable, format!("role `{r}` is not declared"), rspan);
                            }
                            Some(r)
                        } else {
                            None
                        };
                        VarSort::Principal { range, role }
                    }
                    _ => {
                        return Err(self.diag(
                            DiagnosticKind::SyntaxError,
                            format!("unknown sort `{s}` (set, fresh, honest, oscar or any)"),
                            sspan,
                        ))
                    }
                }
            } else {
                VarSort::Value
            };
            if self.scope.insert(name.clone(), sort.clone()).is_some() {
                self.report(DiagnosticKind::InvalidRule, format!("variable `{name}` declared twice"), span);
            }
            vars.push(VarDecl { name, sort });
            if self.eat_sym(".") {
                return Ok(vars);
            }
            self.expect_sym(",")?;
        }
    }

    fn rule(&mut self) -> PResult<(RuleSchema, SourceSpan)> {
        let (label, lspan) = self.lower_ident("a rule label")?;
        self.expect_sym(":")?;
        let vars = if self.eat_kw("forall") {
            self.var_decls()?
        } else {
            self.scope.clear();
            Vec::new()
        };
        self.expect_kw("premises")?;
        self.expect_sym("{")?;
        let mut premises = Vec::new();
        if !self.eat_sym("}") {
            loop {
                if self.eat_sym("..") {
                    let (v, span) = self.var_name()?;
                    self.check_bound(&v, span);
                    premises.push(Premise::Members(v));
                } else {
                    premises.push(Premise::Value(self.template()?));
                }
                if self.eat_sym("}") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        self.expect_kw("conclude")?;
        let conclusion = self.template()?;
        let guards = if self.eat_kw("where") { self.guards()? } else { Vec::new() };
        if guards.is_empty() {
            self.expect_sym(";")?;
        }
        let schema = RuleSchema { label, vars, premises, conclusion, guards };
        if let Err(e) = compile_schema(&schema) {
            self.report(DiagnosticKind::InvalidRule, e.to_string(), lspan.clone());
        }
        Ok((schema, lspan))
    }

    fn theorem(&mut self) -> PResult<TheoremSpec> {
        let (label, lspan) = self.lower_ident("a theorem label")?;
        self.expect_sym(":")?;
        self.expect_kw("exists")?;
        let vars = self.var_decls()?;
        let guards = if self.eat_sym(";") { Vec::new() } else { self.guards()? };
        if let Err(e) = compile_theorem(&label, &vars, &guards) {
            self.report(DiagnosticKind::InvalidRule, e.to_string(), lspan);
        }
        Ok(TheoremSpec { label, vars, guards })
    }

    /// Comma-separated guards terminated by `;`.
    fn guards(&mut self) -> PResult<Vec<Guard>> {
        let mut gs = vec![self.guard()?];
        while self.eat_sym(",") {
            gs.push(self.guard()?);
        }
        self.expect_sym(";")?;
        Ok(gs)
    }

    fn check_bound(&mut self, v: &str, span: SourceSpan) {
        if !self.scope.contains_key(v) {
            self.report(DiagnosticKind::UnboundVariable, format!("variable `{v}` is not declared"), span);
        }
    }

    fn guard(&mut self) -> PResult<Guard> {
        self.enter()?;
        let g = self.guard_inner();
        self.depth -= 1;
        g
    }

    fn guard_inner(&mut self) -> PResult<Guard> {
        let next_is_paren = matches!(self.peek_at(1), Tok::Sym("("));
        if self.eat_kw("knows") {
            return Ok(Guard::Knows(self.template()?));
        }
        if self.eat_kw("draws") {
            return Ok(Guard::Draws(self.template()?));
        }
        if self.eat_kw("exists") {
            return Ok(Guard::Exists(self.template()?));
        }
        if self.eat_sym("!") {
            self.expect_kw("draws")?;
            return Ok(Guard::NotDraws(self.template()?));
        }
        if self.is_kw("owned") && next_is_paren {
            self.bump();
            self.expect_sym("(")?;
            let t = self.template()?;
            self.expect_sym(",")?;
            let owner = match self.peek().clone() {
                Tok::Ident(s) if s == "oscar" => Owner::Oscar,
                Tok::Ident(s) if s == "honest" => Owner::Honest,
                Tok::Ident(s) if is_var_name(&s) => {
                    let span = self.span();
                    self.check_bound(&s, span);
                    Owner::Principal(s)
                }
                _ => return Err(self.unexpected("`oscar`, `honest` or a principal variable")),
            };
            self.bump();
            self.expect_sym(")")?;
            return Ok(Guard::Owned(t, owner));
        }
        if self.is_kw("card") && next_is_paren {
            self.bump();
            self.expect_sym("(")?;
            let s = self.set_expr()?;
            self.expect_sym(")")?;
            let op = match self.peek() {
                Tok::Sym("=") => CmpOp::Eq,
                Tok::Sym("<=") => CmpOp::Le,
                Tok::Sym(">=") => CmpOp::Ge,
                _ => return Err(self.unexpected("`=`, `<=` or `>=`")),
            };
            self.bump();
            let n = match self.peek() {
                Tok::Num(n) => *n,
                _ => return Err(self.unexpected("a number")),
            };
            self.bump();
            return Ok(Guard::Card(s, op, n));
        }
        if self.eat_kw("if") {
            let (o, ospan) = self.ident("an option name")?;
            let Some(opt) = ProtoOption::from_name(&o) else {
                return Err(self.diag(DiagnosticKind::SyntaxError, format!("unknown option `{o}`"), ospan));
            };
            self.expect_sym("{")?;
            let g = self.guard()?;
            self.expect_sym("}")?;
            return Ok(Guard::IfOption(opt, Box::new(g)));
        }
        let lhs = self.template()?;
        if self.eat_sym("=") {
            return Ok(Guard::Eq(lhs, self.template()?));
        }
        if self.eat_sym("!=") {
            return Ok(Guard::Neq(lhs, self.template()?));
        }
        if self.eat_kw("in") {
            return Ok(Guard::Member(lhs, self.set_expr()?));
        }
        if self.eat_kw("is") {
            let (k, kspan) = self.lower_ident("a kind")?;
            let test = ValueKind::ALL
                .into_iter()
                .find(|v| v.name() == k)
                .map(KindTest::Value)
                .or_else(|| {
                    [AtomKind::Identity, AtomKind::Seed, AtomKind::Generic]
                        .into_iter()
                        .find(|a| a.name() == k)
                        .map(KindTest::Atom)
                });
            return match test {
                Some(t) => Ok(Guard::Kind(lhs, t)),
                None => Err(self.diag(DiagnosticKind::SyntaxError, format!("unknown kind `{k}`"), kspan)),
            };
        }
        Err(self.unexpected("`=`, `!=`, `in` or `is`"))
    }

    fn set_expr(&mut self) -> PResult<SetExpr> {
        if self.is_sym("{") {
            return Ok(SetExpr::Lit(self.set_template()?));
        }
        let span = self.span();
        let t = self.template()?;
        if matches!(self.peek(), Tok::Sym(".")) {
            if let Tok::Ident(f) = self.peek_at(1).clone() {
                let sf = match f.as_str() {
                    "plain" => Some(SetField::Plain),
                    "of" => Some(SetField::Of),
                    "contents" => Some(SetField::Contents),
                    _ => None,
                };
                if let Some(sf) = sf {
                    self.bump();
                    self.bump();
                    return Ok(SetExpr::Field(t, sf));
                }
            }
        }
        match t {
            Template::Var(v) => Ok(SetExpr::Lit(SetTemplate::Var(v))),
            _ => Err(self.diag(DiagnosticKind::SyntaxError, "expected a set".into(), span)),
        }
    }

    fn set_template(&mut self) -> PResult<SetTemplate> {
        if self.eat_sym("{") {
            let mut items = Vec::new();
            if self.eat_sym("}") {
                return Ok(SetTemplate::Elems(items));
            }
            loop {
                items.push(self.template()?);
                if self.eat_sym("}") {
                    return Ok(SetTemplate::Elems(items));
                }
                self.expect_sym(",")?;
            }
        }
        let (v, span) = self.var_name()?;
        self.check_bound(&v, span);
        Ok(SetTemplate::Var(v))
    }

    fn template(&mut self) -> PResult<Template> {
        self.enter()?;
        let t = self.template_inner();
        self.depth -= 1;
        t
    }

    fn template_inner(&mut self) -> PResult<Template> {
        let mut t = self.primary()?;
        while matches!(self.peek(), Tok::Sym(".")) {
            let field = match self.peek_at(1) {
                Tok::Ident(f) => match f.as_str() {
                    "key" => Field::Key,
                    "seed" => Field::Seed,
                    "id" => Field::Id,
                    "challenge" => Field::Challenge,
                    _ => break,
                },
                _ => break,
            };
            self.bump();
            self.bump();
            t = Template::Field(Box::new(t), field);
        }
        Ok(t)
    }

    fn named_arg(&mut self, name: &str) -> PResult<()> {
        self.expect_kw(name)?;
        self.expect_sym("=")
    }

    fn primary(&mut self) -> PResult<Template> {
        if self.eat_sym("_") {
            return Ok(Template::Wildcard);
        }
        let (name, span) = self.ident("a value template")?;
        if is_var_name(&name) {
            self.check_bound(&name, span);
            return Ok(Template::Var(name));
        }
        match name.as_str() {
            "enc" => {
                self.expect_sym("(")?;
                self.named_arg("key")?;
                let key = self.template()?;
                self.expect_sym(",")?;
                self.named_arg("plain")?;
                let plain = self.set_template()?;
                self.expect_sym(")")?;
                Ok(Template::enc(key, plain))
            }
            "nonce" => {
                self.expect_sym("(")?;
                self.named_arg("seed")?;
                let seed = self.template()?;
                self.expect_sym(",")?;
                self.named_arg("id")?;
                let id = self.template()?;
                self.expect_sym(")")?;
                Ok(Template::nonce(seed, id))
            }
            "hash" | "tuple" => {
                let s = if self.eat_sym("(") {
                    let s = self.set_template()?;
                    if !matches!(s, SetTemplate::Var(_)) {
                        return Err(self.diag(
                            DiagnosticKind::SyntaxError,
                            format!("write `{name}{{...}}` for a literal set"),
                            span,
                        ));
                    }
                    self.expect_sym(")")?;
                    s
                } else if self.is_sym("{") {
                    self.set_template()?
                } else {
                    return Err(self.unexpected("`{` or `(`"));
                };
                Ok(if name == "hash" { Template::Hash(s) } else { Template::Tuple(s) })
            }
            "puf" => {
                self.expect_sym("(")?;
                let c = self.template()?;
                self.expect_sym(")")?;
                Ok(Template::puf(c))
            }
            _ if self.is_sym("(") => {
                self.bump();
                if name != IDENT && !self.attrs.contains(&name) {
                    self.report(DiagnosticKind::UnboundVariable, format!("attribute `{name}` is not declared"), span);
                }
                let (p, pspan) = self.var_name()?;
                self.check_bound(&p, pspan);
                self.expect_sym(")")?;
                Ok(Template::attr(&name, &p))
            }
            _ => {
                if RESERVED.contains(&name.as_str()) {
                    return Err(self.diag(DiagnosticKind::SyntaxError, format!("unexpected keyword `{name}`"), span));
                }
                if !self.consts.contains(&name) {
                    self.report(DiagnosticKind::UnboundVariable, format!("constant `{name}` is not declared"), span);
                }
                Ok(Template::Const(name))
            }
        }
    }
}

/// Renders a spec in the `.kf` format. Clauses appear in a fixed order:
/// roles, options, primitives, constants, fresh families, attributes,
/// rules, theorem.
pub fn render(spec: &ProtocolSpec) -> String {
    let mut out = format!("protocol {} {{\n", spec.name);
    if !spec.roles.is_empty() {
        out += &format!("  roles {};\n", spec.roles.join(" "));
    }
    if !spec.options.is_empty() {
        let os: Vec<&str> = spec.options.iter().map(|o| o.name()).collect();
        out += &format!("  options {};\n", os.join(" "));
    }
    if !spec.primitives.is_empty() {
        let ps: Vec<&str> = spec.primitives.iter().map(|p| p.name()).collect();
        out += &format!("  primitives {};\n", ps.join(" "));
    }
    for (word, decls) in [("const", &spec.consts), ("fresh", &spec.fresh), ("attr", &spec.attrs)] {
        for d in decls {
            let secret = if d.secret { "secret " } else { "" };
            out += &format!("  {secret}{word} {}: {};\n", d.name, d.kind.name());
        }
    }
    for s in &spec.schemas {
        out += &format!("  rule {}:", s.label);
        if !s.vars.is_empty() {
            out += &format!(" forall {} .", render_vars(&s.vars));
        }
        let ps: Vec<String> = s
            .premises
            .iter()
            .map(|p| match p {
                Premise::Value(t) => render_template(t),
                Premise::Members(v) => format!("..{v}"),
            })
            .collect();
        out += &format!("\n    premises {{{}}}\n    conclude {}", ps.join(", "), render_template(&s.conclusion));
        if !s.guards.is_empty() {
            out += "\n    where ";
            out += &render_guards(&s.guards, "      ");
        }
        out += ";\n";
    }
    let t = &spec.theorem;
    out += &format!("  theorem {}: exists", t.label);
    if !t.vars.is_empty() {
        out += &format!(" {}", render_vars(&t.vars));
    }
    out += " .";
    if !t.guards.is_empty() {
        out += "\n    ";
        out += &render_guards(&t.guards, "    ");
    }
    out += ";\n}\n";
    out
}

fn render_vars(vars: &[VarDecl]) -> String {
    let parts: Vec<String> = vars
        .iter()
        .map(|v| match &v.sort {
            VarSort::Value => v.name.clone(),
            VarSort::Set => format!("{}: set", v.name),
            VarSort::Fresh(f) => format!("{}: fresh {f}", v.name),
            VarSort::Principal { range, role } => match role {
                Some(r) => format!("{}: {}@{r}", v.name, range.name()),
                None => format!("{}: {}", v.name, range.name()),
            },
        })
        .collect();
    parts.join(", ")
}

fn render_guards(gs: &[Guard], indent: &str) -> String {
    let parts: Vec<String> = gs.iter().map(render_guard).collect();
    parts.join(&format!(",\n{indent}"))
}

pub fn render_template(t: &Template) -> String {
    match t {
        Template::Var(v) | Template::Const(v) => v.clone(),
        Template::Wildcard => "_".into(),
        Template::Attr { attr, principal } => format!("{attr}({principal})"),
        Template::Enc { key, plain } => {
            format!("enc(key={}, plain={})", render_template(key), render_set(plain))
        }
        Template::Nonce { seed, id } => {
            format!("nonce(seed={}, id={})", render_template(seed), render_template(id))
        }
        Template::Hash(s) => format!("hash{}", render_bag(s)),
        Template::Tuple(s) => format!("tuple{}", render_bag(s)),
        Template::Puf(c) => format!("puf({})", render_template(c)),
        Template::Field(b, f) => format!("{}.{}", render_template(b), f.name()),
    }
}

fn render_set(s: &SetTemplate) -> String {
    match s {
        SetTemplate::Elems(items) => {
            let parts: Vec<String> = items.iter().map(render_template).collect();
            format!("{{{}}}", parts.join(", "))
        }
        SetTemplate::Var(v) => v.clone(),
    }
}

fn render_bag(s: &SetTemplate) -> String {
    match s {
        SetTemplate::Var(v) => format!("({v})"),
        SetTemplate::Elems(_) => render_set(s),
    }
}

fn render_set_expr(s: &SetExpr) -> String {
    match s {
        SetExpr::Lit(st) => render_set(st),
        SetExpr::Field(t, f) => format!("{}.{}", render_template(t), f.name()),
    }
}

pub fn render_guard(g: &Guard) -> String {
    match g {
        Guard::Eq(a, b) => format!("{} = {}", render_template(a), render_template(b)),
        Guard::Neq(a, b) => format!("{} != {}", render_template(a), render_template(b)),
        Guard::Member(t, s) => format!("{} in {}", render_template(t), render_set_expr(s)),
        Guard::Card(s, op, n) => format!("card({}) {} {n}", render_set_expr(s), op.symbol()),
        Guard::Kind(t, k) => format!("{} is {}", render_template(t), k.name()),
        Guard::Owned(t, o) => {
            let owner = match o {
                Owner::Oscar => "oscar",
                Owner::Honest => "honest",
                Owner::Principal(p) => p,
            };
            format!("owned({}, {owner})", render_template(t))
        }
        Guard::IfOption(o, g) => format!("if {} {{ {} }}", o.name(), render_guard(g)),
        Guard::Knows(t) => format!("knows {}", render_template(t)),
        Guard::Draws(t) => format!("draws {}", render_template(t)),
        Guard::NotDraws(t) => format!("!draws {}", render_template(t)),
        Guard::Exists(t) => format!("exists {}", render_template(t)),
    }
}
