//! Occurrence mappings and partial occurrences.
//!
//! Each server keeps, per position, a partial map from resources to the set
//! of servers where the resource occurs at that position. A missing entry
//! means "could be anywhere"; a present but empty entry means "known to occur
//! nowhere". Partial matches carry the same shape of data ([`PartialOccurrences`])
//! so that later servers can route without having seen the resources.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::PartitionError;
use crate::model::{Dictionary, Fact, Position, Program, ResourceId, ServerId};

/// Sorted, duplicate-free set of server ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServerSet(Vec<ServerId>);

impl ServerSet {
    pub fn new() -> Self {
        ServerSet(Vec::new())
    }

    pub fn singleton(k: ServerId) -> Self {
        ServerSet(vec![k])
    }

    /// `{1, …, ℓ}`.
    pub fn all(servers: usize) -> Self {
        ServerSet((0..servers).map(ServerId::from_index).collect())
    }

    pub fn from_ids(ids: impl IntoIterator<Item = ServerId>) -> Self {
        let mut v: Vec<ServerId> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        ServerSet(v)
    }

    pub fn contains(&self, k: ServerId) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    pub fn insert(&mut self, k: ServerId) -> bool {
        match self.0.binary_search(&k) {
            Ok(_) => false,
            Err(i) => {
                self.0.insert(i, k);
                true
            }
        }
    }

    pub fn remove(&mut self, k: ServerId) -> bool {
        match self.0.binary_search(&k) {
            Ok(i) => {
                self.0.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn union_with(&mut self, other: &ServerSet) {
        for &k in &other.0 {
            self.insert(k);
        }
    }

    pub fn intersect_with(&mut self, other: &ServerSet) {
        self.0.retain(|k| other.contains(*k));
    }

    pub fn meets(&self, other: &ServerSet) -> bool {
        self.0.iter().any(|k| other.contains(*k))
    }

    pub fn difference(&self, other: &ServerSet) -> ServerSet {
        ServerSet(self.0.iter().copied().filter(|k| !other.contains(*k)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn min(&self) -> Option<ServerId> {
        self.0.first().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.0.iter().copied()
    }

    /// Removes one element, preferring anything other than `avoid`: the
    /// smallest id in `self \ {avoid}`, else `avoid` itself.
    pub fn take_preferring_not(&mut self, avoid: ServerId) -> Option<ServerId> {
        let pick = self.0.iter().copied().find(|&k| k != avoid).or_else(|| self.min())?;
        self.remove(pick);
        Some(pick)
    }
}

impl std::fmt::Display for ServerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|k| k.0.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// Fixed 64-bit mix (SplitMix64 finaliser) of a dictionary id.
pub fn stable_hash(r: ResourceId) -> u64 {
    let mut z = u64::from(r.0).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Server that owns facts with subject `r` when no occurrence says otherwise.
pub fn predetermined(r: ResourceId, servers: usize) -> ServerId {
    assert!(servers >= 1);
    ServerId((stable_hash(r) % servers as u64) as u32 + 1)
}

/// `μ_{k,s}`, `μ_{k,p}`, `μ_{k,o}` for one server.
#[derive(Clone, Debug, Default)]
pub struct OccurrenceMap {
    maps: [HashMap<ResourceId, ServerSet>; 3],
}

impl OccurrenceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: ResourceId, pos: Position) -> Option<&ServerSet> {
        self.maps[pos.index()].get(&r)
    }

    pub fn set(&mut self, r: ResourceId, pos: Position, servers: ServerSet) {
        self.maps[pos.index()].insert(r, servers);
    }

    pub fn is_defined(&self, r: ResourceId, pos: Position) -> bool {
        self.maps[pos.index()].contains_key(&r)
    }

    pub fn entries(&self, pos: Position) -> impl Iterator<Item = (ResourceId, &ServerSet)> {
        self.maps[pos.index()].iter().map(|(r, s)| (*r, s))
    }

    /// `r π {k₁,k₂,…}` lines, sorted.
    pub fn dump(&self, dict: &Dictionary) -> String {
        let mut lines = Vec::new();
        for pos in Position::ALL {
            for (r, set) in self.entries(pos) {
                lines.push(format!("{} {} {}", dict.decode(r), pos.symbol(), set));
            }
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

/// The `λ = (λ_s, λ_p, λ_o)` vector carried in messages.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartialOccurrences {
    maps: [BTreeMap<ResourceId, ServerSet>; 3],
}

impl PartialOccurrences {
    /// The all-empty vector.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: ResourceId, pos: Position) -> Option<&ServerSet> {
        self.maps[pos.index()].get(&r)
    }

    pub fn set(&mut self, r: ResourceId, pos: Position, servers: ServerSet) {
        self.maps[pos.index()].insert(r, servers);
    }

    /// `λ_π(r) := λ_π(r) ∪ servers`, defining it if absent.
    pub fn extend(&mut self, r: ResourceId, pos: Position, servers: &ServerSet) {
        self.maps[pos.index()].entry(r).or_default().union_with(servers);
    }

    /// Extends with `μ_{k,π}(r)` for every position where `μ` is defined.
    pub fn extend_from(&mut self, mu: &OccurrenceMap, r: ResourceId) {
        for pos in Position::ALL {
            if let Some(set) = mu.get(r, pos) {
                self.extend(r, pos, set);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.maps.iter().all(BTreeMap::is_empty)
    }

    pub fn entries(&self, pos: Position) -> impl Iterator<Item = (ResourceId, &ServerSet)> {
        self.maps[pos.index()].iter().map(|(r, s)| (*r, s))
    }
}

/// Chooses the server that stores `f`: the subject's occurrence from `λ`,
/// else from `μ`, else [`predetermined`].
///
/// Subject occurrences are singletons whenever the input is grouped by
/// subject. If an explicit partition splits a subject across servers, the
/// smallest id is used, which every server agrees on.
pub fn owner_of(f: &Fact, lambda: &PartialOccurrences, mu: &OccurrenceMap, servers: usize) -> ServerId {
    let subject = f.subject;
    lambda
        .get(subject, Position::Subject)
        .and_then(ServerSet::min)
        .or_else(|| mu.get(subject, Position::Subject).and_then(ServerSet::min))
        .unwrap_or_else(|| predetermined(subject, servers))
}

/// `λ_π(r) := μ_{k,π}(r) := λ_π(r) ∪ μ_{k,π}(r)`.
///
/// Returns `μ_{k,π}(r) \ λ_π(r)` as it was before the union. When neither
/// side is defined both stay undefined.
pub fn merge_into(mu: &mut OccurrenceMap, lambda: &mut PartialOccurrences, r: ResourceId, pos: Position) -> ServerSet {
    let (new_members, union) = match (mu.get(r, pos), lambda.get(r, pos)) {
        (None, None) => return ServerSet::new(),
        (Some(m), None) => (m.clone(), m.clone()),
        (None, Some(l)) => (ServerSet::new(), l.clone()),
        (Some(m), Some(l)) => {
            let mut u = l.clone();
            u.union_with(m);
            (m.difference(l), u)
        }
    };
    mu.set(r, pos, union.clone());
    lambda.set(r, pos, union);
    new_members
}

/// Initial occurrence mappings for `ℓ = partitions.len()` servers.
///
/// Every resource in `I_k` gets exact sets at all three positions on server
/// `k` (possibly empty). Every constant in a rule head gets the same on all
/// servers, with the subject set falling back to `{predetermined(r)}` when
/// the constant is not a subject anywhere.
pub fn init_occurrences(partitions: &[Vec<Fact>], program: &Program) -> Result<Vec<OccurrenceMap>, PartitionError> {
    let servers = partitions.len();
    if servers == 0 {
        return Err(PartitionError::NoServers);
    }
    let mut owner: HashMap<Fact, ServerId> = HashMap::new();
    let mut global: [HashMap<ResourceId, ServerSet>; 3] = Default::default();
    for (i, part) in partitions.iter().enumerate() {
        let k = ServerId::from_index(i);
        for f in part {
            if let Some(&prev) = owner.get(f) {
                if prev != k {
                    return Err(PartitionError::Overlap {
                        first: prev.0,
                        second: k.0,
                    });
                }
            }
            owner.insert(*f, k);
            for pos in Position::ALL {
                global[pos.index()].entry(f.get(pos)).or_default().insert(k);
            }
        }
    }
    let exact = |r: ResourceId, pos: Position| global[pos.index()].get(&r).cloned().unwrap_or_default();

    let heads = program.head_constants();
    let mut maps = Vec::with_capacity(servers);
    for part in partitions {
        let mut mu = OccurrenceMap::new();
        for f in part {
            for r in f.resources() {
                if !mu.is_defined(r, Position::Subject) {
                    for pos in Position::ALL {
                        mu.set(r, pos, exact(r, pos));
                    }
                }
            }
        }
        for &r in &heads {
            for pos in Position::ALL {
                mu.set(r, pos, exact(r, pos));
            }
        }
        maps.push(mu);
    }
    for &r in &heads {
        if exact(r, Position::Subject).is_empty() {
            let fallback = ServerSet::singleton(predetermined(r, servers));
            for mu in &mut maps {
                mu.set(r, Position::Subject, fallback.clone());
            }
        }
    }
    Ok(maps)
}
