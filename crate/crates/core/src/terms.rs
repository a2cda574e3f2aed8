//! Symbolic values and their canonical interning.
//!
//! Every value the analysis touches lives in a [`ValueTable`]. Interning is
//! structural: two terms with the same constructor and the same children get
//! the same [`ValueHandle`], which is how perfect cryptography is realized
//! (equal ciphers are equal values, nothing else is).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque identifier of an interned value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueHandle(u32);

impl ValueHandle {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Sort of an atomic value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AtomKind {
    /// Principal identifiers; double as key pairs in public-key protocols.
    Identity,
    /// Random seeds fed to the nonce generator.
    Seed,
    /// Any other atomic secret or constant.
    Generic,
}

impl AtomKind {
    pub fn name(self) -> &'static str {
        match self {
            AtomKind::Identity => "identity",
            AtomKind::Seed => "seed",
            AtomKind::Generic => "generic",
        }
    }
}

/// Variant tag of a value, see [`ValueTable::kind_of`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKind {
    Atom,
    Ciphertext,
    Nonce,
    Hash,
    Tuple,
    PufResponse,
}

impl ValueKind {
    pub const ALL: [ValueKind; 6] = [
        ValueKind::Atom,
        ValueKind::Ciphertext,
        ValueKind::Nonce,
        ValueKind::Hash,
        ValueKind::Tuple,
        ValueKind::PufResponse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Atom => "atom",
            ValueKind::Ciphertext => "cipher",
            ValueKind::Nonce => "nonce",
            ValueKind::Hash => "hash",
            ValueKind::Tuple => "tuple",
            ValueKind::PufResponse => "puf",
        }
    }
}

/// Canonically ordered, duplicate-free set of handles.
pub type HandleSet = Vec<ValueHandle>;

/// Normalizes a handle list into set form (sorted, deduplicated).
pub fn handle_set(items: impl IntoIterator<Item = ValueHandle>) -> HandleSet {
    let mut v: Vec<ValueHandle> = items.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueTerm {
    Atom { label: String, kind: AtomKind },
    Ciphertext { key: ValueHandle, plaintext: HandleSet },
    Nonce { seed: ValueHandle, id: ValueHandle },
    Hash { of: HandleSet },
    Tuple { contents: HandleSet },
    PufResponse { challenge: ValueHandle },
}

impl ValueTerm {
    pub fn atom(label: impl Into<String>, kind: AtomKind) -> Self {
        ValueTerm::Atom { label: label.into(), kind }
    }

    pub fn cipher(key: ValueHandle, plaintext: impl IntoIterator<Item = ValueHandle>) -> Self {
        ValueTerm::Ciphertext { key, plaintext: handle_set(plaintext) }
    }

    pub fn nonce(seed: ValueHandle, id: ValueHandle) -> Self {
        ValueTerm::Nonce { seed, id }
    }

    pub fn hash(of: impl IntoIterator<Item = ValueHandle>) -> Self {
        ValueTerm::Hash { of: handle_set(of) }
    }

    pub fn tuple(contents: impl IntoIterator<Item = ValueHandle>) -> Self {
        ValueTerm::Tuple { contents: handle_set(contents) }
    }

    pub fn puf(challenge: ValueHandle) -> Self {
        ValueTerm::PufResponse { challenge }
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            ValueTerm::Atom { .. } => ValueKind::Atom,
            ValueTerm::Ciphertext { .. } => ValueKind::Ciphertext,
            ValueTerm::Nonce { .. } => ValueKind::Nonce,
            ValueTerm::Hash { .. } => ValueKind::Hash,
            ValueTerm::Tuple { .. } => ValueKind::Tuple,
            ValueTerm::PufResponse { .. } => ValueKind::PufResponse,
        }
    }

    /// Immediate children, in field order.
    pub fn children(&self) -> Vec<ValueHandle> {
        match self {
            ValueTerm::Atom { .. } => Vec::new(),
            ValueTerm::Ciphertext { key, plaintext } => {
                let mut v = vec![*key];
                v.extend(plaintext.iter().copied());
                v
            }
            ValueTerm::Nonce { seed, id } => vec![*seed, *id],
            ValueTerm::Hash { of } => of.clone(),
            ValueTerm::Tuple { contents } => contents.clone(),
            ValueTerm::PufResponse { challenge } => vec![*challenge],
        }
    }

    fn normalized(mut self) -> Self {
        match &mut self {
            ValueTerm::Ciphertext { plaintext: s, .. }
            | ValueTerm::Hash { of: s }
            | ValueTerm::Tuple { contents: s } => {
                s.sort_unstable();
                s.dedup();
            }
            _ => {}
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("value would contain itself as a subterm")]
    OccursViolation,
    #[error("composite {0} has an empty set field")]
    EmptyComposite(&'static str),
    #[error("unknown value handle {0}")]
    UnknownHandle(u32),
}

/// Append-only store of interned values.
#[derive(Debug, Clone, Default)]
pub struct ValueTable {
    terms: Vec<ValueTerm>,
    index: HashMap<ValueTerm, ValueHandle>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a table from a term list in handle order, validating every
    /// entry as [`ValueTable::intern`] would. Entries must reference only
    /// earlier entries and must not repeat.
    pub fn from_terms(terms: impl IntoIterator<Item = ValueTerm>) -> Result<Self, TermError> {
        let mut table = ValueTable::new();
        for (i, t) in terms.into_iter().enumerate() {
            let h = table.intern(t)?;
            if h.index() != i {
                // a duplicate would silently shift every later handle
                return Err(TermError::OccursViolation);
            }
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn intern(&mut self, term: ValueTerm) -> Result<ValueHandle, TermError> {
        let term = term.normalized();
        let next = self.terms.len() as u32;
        match &term {
            ValueTerm::Ciphertext { plaintext, .. } if plaintext.is_empty() => {
                return Err(TermError::EmptyComposite("ciphertext"))
            }
            ValueTerm::Hash { of } if of.is_empty() => return Err(TermError::EmptyComposite("hash")),
            ValueTerm::Tuple { contents } if contents.is_empty() => {
                return Err(TermError::EmptyComposite("tuple"))
            }
            _ => {}
        }
        for c in term.children() {
            // Children must already exist, so a term can only refer to
            // strictly older handles. Naming the slot it is about to occupy
            // is the only way to ask for a cycle.
            if c.0 == next {
                return Err(TermError::OccursViolation);
            }
            if c.0 > next {
                return Err(TermError::UnknownHandle(c.0));
            }
        }
        if let Some(&h) = self.index.get(&term) {
            return Ok(h);
        }
        let h = ValueHandle(next);
        self.index.insert(term.clone(), h);
        self.terms.push(term);
        Ok(h)
    }

    /// Looks a term up without inserting it.
    pub fn lookup(&self, term: &ValueTerm) -> Option<ValueHandle> {
        match term {
            ValueTerm::Ciphertext { .. } | ValueTerm::Hash { .. } | ValueTerm::Tuple { .. } => {
                self.index.get(&term.clone().normalized()).copied()
            }
            _ => self.index.get(term).copied(),
        }
    }

    pub fn term(&self, h: ValueHandle) -> &ValueTerm {
        &self.terms[h.index()]
    }

    pub fn get(&self, h: ValueHandle) -> Option<&ValueTerm> {
        self.terms.get(h.index())
    }

    pub fn kind_of(&self, h: ValueHandle) -> ValueKind {
        self.term(h).kind()
    }

    pub fn atom_kind(&self, h: ValueHandle) -> Option<AtomKind> {
        match self.term(h) {
            ValueTerm::Atom { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    pub fn is_atom(&self, h: ValueHandle) -> bool {
        matches!(self.term(h), ValueTerm::Atom { .. })
    }

    pub fn handles(&self) -> impl Iterator<Item = ValueHandle> + '_ {
        (0..self.terms.len() as u32).map(ValueHandle)
    }

    /// Reflexive-transitive closure of field reachability.
    pub fn subterms(&self, v: ValueHandle) -> BTreeSet<ValueHandle> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(h) = stack.pop() {
            if out.insert(h) {
                stack.extend(self.term(h).children());
            }
        }
        out
    }

    /// Nesting depth; atoms have depth 0.
    pub fn depth(&self, v: ValueHandle) -> usize {
        // children always have smaller handles, so no memo is needed for
        // termination; the recursion depth is bounded by the term depth
        self.term(v).children().into_iter().map(|c| self.depth(c) + 1).max().unwrap_or(0)
    }

    /// Canonical textual rendering, e.g.
    /// `enc{key=B, plain={A, nonce{seed=eps#1, id=A}}}`. Set fields are
    /// sorted by their rendering.
    pub fn render(&self, v: ValueHandle) -> String {
        let mut s = String::new();
        self.render_into(v, &mut s);
        s
    }

    fn render_set(&self, set: &[ValueHandle], out: &mut String) {
        let mut parts: Vec<String> = set.iter().map(|&h| self.render(h)).collect();
        parts.sort();
        out.push('{');
        out.push_str(&parts.join(", "));
        out.push('}');
    }

    fn render_into(&self, v: ValueHandle, out: &mut String) {
        match self.term(v) {
            ValueTerm::Atom { label, .. } => out.push_str(label),
            ValueTerm::Ciphertext { key, plaintext } => {
                out.push_str("enc{key=");
                self.render_into(*key, out);
                out.push_str(", plain=");
                self.render_set(plaintext, out);
                out.push('}');
            }
            ValueTerm::Nonce { seed, id } => {
                out.push_str("nonce{seed=");
                self.render_into(*seed, out);
                out.push_str(", id=");
                self.render_into(*id, out);
                out.push('}');
            }
            ValueTerm::Hash { of } => {
                out.push_str("hash");
                self.render_set(of, out);
            }
            ValueTerm::Tuple { contents } => {
                out.push_str("tuple");
                self.render_set(contents, out);
            }
            ValueTerm::PufResponse { challenge } => {
                out.push_str("puf{");
                self.render_into(*challenge, out);
                out.push('}');
            }
        }
    }

    /// Renders every handle once, indexed by handle.
    pub fn render_all(&self) -> Vec<String> {
        let mut cache: Vec<String> = Vec::with_capacity(self.terms.len());
        for h in self.handles() {
            // children precede parents, so their renderings are cached
            let s = match self.term(h) {
                ValueTerm::Atom { label, .. } => label.clone(),
                ValueTerm::Ciphertext { key, plaintext } => format!(
                    "enc{{key={}, plain={}}}",
                    cache[key.index()],
                    sorted_set(plaintext, &cache)
                ),
                ValueTerm::Nonce { seed, id } => {
                    format!("nonce{{seed={}, id={}}}", cache[seed.index()], cache[id.index()])
                }
                ValueTerm::Hash { of } => format!("hash{}", sorted_set(of, &cache)),
                ValueTerm::Tuple { contents } => format!("tuple{}", sorted_set(contents, &cache)),
                ValueTerm::PufResponse { challenge } => format!("puf{{{}}}", cache[challenge.index()]),
            };
            cache.push(s);
        }
        cache
    }
}

fn sorted_set(set: &[ValueHandle], cache: &[String]) -> String {
    let mut parts: Vec<&str> = set.iter().map(|h| cache[h.index()].as_str()).collect();
    parts.sort_unstable();
    format!("{{{}}}", parts.join(", "))
}

impl fmt::Display for ValueHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
