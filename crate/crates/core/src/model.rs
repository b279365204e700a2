//! RDF and datalog value model.
//!
//! Resources are dictionary-encoded to dense integers before a run. Facts,
//! atoms, substitutions and rules are all expressed over [`ResourceId`]s, so
//! stores and messages only ever hash and compare small integers.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Dense dictionary id of an RDF term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceId(pub u32);

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    Iri,
    BlankNode,
    Literal,
}

impl ResourceKind {
    /// Infers the kind from an N-Triples style lexical form.
    pub fn of_lexical(lexical: &str) -> Option<ResourceKind> {
        if lexical.len() >= 2 && lexical.starts_with('<') && lexical.ends_with('>') {
            Some(ResourceKind::Iri)
        } else if lexical.len() > 2 && lexical.starts_with("_:") {
            Some(ResourceKind::BlankNode)
        } else if lexical.starts_with('"') && lexical[1..].contains('"') {
            Some(ResourceKind::Literal)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resource {
    pub id: ResourceId,
    pub kind: ResourceKind,
    /// Original form, delimiters included (`<iri>`, `"lit"`, `_:b`).
    pub lexical: String,
}

/// Bijection between lexical forms and [`ResourceId`]s.
#[derive(Clone, Debug, Default)]
pub struct Dictionary {
    resources: Vec<Resource>,
    lookup: HashMap<String, ResourceId>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `lexical`, allocating the next dense id if unseen.
    pub fn encode(&mut self, lexical: &str) -> Result<ResourceId, ModelError> {
        if let Some(&id) = self.lookup.get(lexical) {
            return Ok(id);
        }
        let kind = ResourceKind::of_lexical(lexical).ok_or_else(|| ModelError::BadResource(lexical.to_string()))?;
        let id = ResourceId(self.resources.len() as u32);
        self.resources.push(Resource {
            id,
            kind,
            lexical: lexical.to_string(),
        });
        self.lookup.insert(lexical.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, lexical: &str) -> Option<ResourceId> {
        self.lookup.get(lexical).copied()
    }

    pub fn resource(&self, id: ResourceId) -> &Resource {
        &self.resources[id.0 as usize]
    }

    pub fn decode(&self, id: ResourceId) -> &str {
        &self.resources[id.0 as usize].lexical
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Resource> {
        self.resources.iter()
    }
}

/// One of the three triple positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    Subject,
    Predicate,
    Object,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Subject, Position::Predicate, Position::Object];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Position::Subject => 's',
            Position::Predicate => 'p',
            Position::Object => 'o',
        }
    }
}

/// Rule-local variable. Ids are assigned in first-occurrence order while
/// parsing, so alpha-equivalent rules get identical ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Const(ResourceId),
    Var(Var),
}

impl Term {
    pub fn as_var(self) -> Option<Var> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }

    pub fn as_const(self) -> Option<ResourceId> {
        match self {
            Term::Const(r) => Some(r),
            Term::Var(_) => None,
        }
    }
}

/// Triple pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl Atom {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Atom {
            subject,
            predicate,
            object,
        }
    }

    pub fn term(&self, pos: Position) -> Term {
        match pos {
            Position::Subject => self.subject,
            Position::Predicate => self.predicate,
            Position::Object => self.object,
        }
    }

    pub fn terms(&self) -> [Term; 3] {
        [self.subject, self.predicate, self.object]
    }

    /// Distinct variables in s, p, o order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(3);
        for t in self.terms() {
            if let Term::Var(v) = t {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn has_var(&self, v: Var) -> bool {
        self.terms().contains(&Term::Var(v))
    }

    pub fn constants(&self) -> impl Iterator<Item = ResourceId> + '_ {
        self.terms().into_iter().filter_map(Term::as_const)
    }

    pub fn to_fact(&self) -> Option<Fact> {
        Some(Fact {
            subject: self.subject.as_const()?,
            predicate: self.predicate.as_const()?,
            object: self.object.as_const()?,
        })
    }
}

impl From<Fact> for Atom {
    fn from(f: Fact) -> Self {
        Atom::new(Term::Const(f.subject), Term::Const(f.predicate), Term::Const(f.object))
    }
}

/// Ground triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject: ResourceId,
    pub predicate: ResourceId,
    pub object: ResourceId,
}

impl Fact {
    pub fn new(subject: ResourceId, predicate: ResourceId, object: ResourceId) -> Self {
        Fact {
            subject,
            predicate,
            object,
        }
    }

    pub fn get(&self, pos: Position) -> ResourceId {
        match pos {
            Position::Subject => self.subject,
            Position::Predicate => self.predicate,
            Position::Object => self.object,
        }
    }

    pub fn resources(&self) -> [ResourceId; 3] {
        [self.subject, self.predicate, self.object]
    }

    pub fn contains(&self, r: ResourceId) -> bool {
        self.resources().contains(&r)
    }

    /// N-Triples line for this fact, without a trailing newline.
    pub fn to_ntriples(&self, dict: &Dictionary) -> String {
        format!(
            "{} {} {} .",
            dict.decode(self.subject),
            dict.decode(self.predicate),
            dict.decode(self.object)
        )
    }
}

/// Finite partial map from variables to resources, kept sorted by variable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Substitution {
    bindings: Vec<(Var, ResourceId)>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Var, ResourceId)>) -> Self {
        let mut s = Substitution::new();
        for (v, r) in pairs {
            assert!(s.bind(v, r), "conflicting binding for {v:?}");
        }
        s
    }

    pub fn get(&self, v: Var) -> Option<ResourceId> {
        self.bindings
            .binary_search_by_key(&v, |&(var, _)| var)
            .ok()
            .map(|i| self.bindings[i].1)
    }

    /// Binds `v` to `r`. Returns false if `v` is already bound elsewhere.
    pub fn bind(&mut self, v: Var, r: ResourceId) -> bool {
        match self.bindings.binary_search_by_key(&v, |&(var, _)| var) {
            Ok(i) => self.bindings[i].1 == r,
            Err(i) => {
                self.bindings.insert(i, (v, r));
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, ResourceId)> + '_ {
        self.bindings.iter().copied()
    }

    /// True if every binding of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Substitution) -> bool {
        self.iter().all(|(v, r)| other.get(v) == Some(r))
    }

    pub fn resolve(&self, t: Term) -> Term {
        match t {
            Term::Var(v) => self.get(v).map_or(t, Term::Const),
            c => c,
        }
    }
}

/// Unique minimal substitution over `vars(atom)` with `atom σ = fact`.
pub fn match_atom(atom: &Atom, fact: &Fact) -> Option<Substitution> {
    extend_match(atom, fact, &Substitution::new())
}

/// Extends `base` so that `atom` maps onto `fact`, or returns `None` on a
/// constant mismatch or conflicting binding.
pub fn extend_match(atom: &Atom, fact: &Fact, base: &Substitution) -> Option<Substitution> {
    let mut out = base.clone();
    for pos in Position::ALL {
        let r = fact.get(pos);
        match atom.term(pos) {
            Term::Const(c) if c != r => return None,
            Term::Const(_) => {}
            Term::Var(v) => {
                if !out.bind(v, r) {
                    return None;
                }
            }
        }
    }
    Some(out)
}

pub fn apply(atom: &Atom, sigma: &Substitution) -> Atom {
    Atom::new(
        sigma.resolve(atom.subject),
        sigma.resolve(atom.predicate),
        sigma.resolve(atom.object),
    )
}

/// `apply` followed by grounding; `None` if a variable stays unbound.
pub fn ground(atom: &Atom, sigma: &Substitution) -> Option<Fact> {
    apply(atom, sigma).to_fact()
}

/// 1-based server id, `1..=ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServerId(pub u32);

impl ServerId {
    /// Zero-based slot for indexing per-server vectors.
    pub fn index(self) -> usize {
        debug_assert!(self.0 >= 1);
        (self.0 - 1) as usize
    }

    pub fn from_index(i: usize) -> Self {
        ServerId(i as u32 + 1)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleId(pub u32);

/// `head <- body[0] ∧ … ∧ body[n-1]`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
    /// Source names of the rule-local variables, indexed by `Var`.
    pub var_names: Vec<String>,
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.body == other.body
    }
}

impl Eq for Rule {}

impl Rule {
    pub fn new(head: Atom, body: Vec<Atom>) -> Self {
        let max_var = std::iter::once(&head)
            .chain(body.iter())
            .flat_map(|a| a.vars())
            .map(|v| v.0 as usize + 1)
            .max()
            .unwrap_or(0);
        let var_names = (0..max_var).map(|i| format!("v{i}")).collect();
        Rule { head, body, var_names }
    }

    pub fn with_var_names(mut self, names: Vec<String>) -> Self {
        self.var_names = names;
        self
    }

    pub fn body_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for a in &self.body {
            for v in a.vars() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn var_name(&self, v: Var) -> &str {
        self.var_names.get(v.0 as usize).map(String::as_str).unwrap_or("?")
    }
}

/// Every head variable occurs in some body atom.
pub fn rule_is_safe(rule: &Rule) -> bool {
    let body = rule.body_vars();
    rule.head.vars().iter().all(|v| body.contains(v))
}

/// Duplicate-free list of safe rules.
#[derive(Clone, Debug, Default)]
pub struct Program {
    rules: Vec<Rule>,
}

impl Program {
    /// Validates and deduplicates (structurally) the given rules, keeping
    /// first occurrences in order.
    pub fn new(rules: Vec<Rule>) -> Result<Self, ModelError> {
        let mut kept: Vec<Rule> = Vec::with_capacity(rules.len());
        for (i, rule) in rules.into_iter().enumerate() {
            if rule.body.is_empty() {
                return Err(ModelError::EmptyBody(i));
            }
            if !rule_is_safe(&rule) {
                return Err(ModelError::UnsafeRule(i));
            }
            if !kept.contains(&rule) {
                kept.push(rule);
            }
        }
        Ok(Program { rules: kept })
    }

    pub fn empty() -> Self {
        Program::default()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.0 as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (RuleId, &Rule)> {
        self.rules.iter().enumerate().map(|(i, r)| (RuleId(i as u32), r))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Constants occurring in any rule head.
    pub fn head_constants(&self) -> Vec<ResourceId> {
        let mut out: Vec<ResourceId> = self
            .rules
            .iter()
            .flat_map(|r| r.head.constants().collect::<Vec<_>>())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
