//! Splitting an input dataset into pairwise-disjoint per-server datasets.

use std::collections::{BTreeMap, HashMap};

use crate::error::PartitionError;
use crate::model::{Fact, ServerId};
use crate::occurrences::predetermined;
use crate::parse::LoadedFact;

/// Places every fact on `predetermined(subject)`, so facts sharing a subject
/// are co-located and initial placement agrees with derived-fact ownership.
/// Duplicate input facts collapse.
pub fn partition_by_subject(facts: &[Fact], servers: usize) -> Result<Vec<Vec<Fact>>, PartitionError> {
    if servers == 0 {
        return Err(PartitionError::NoServers);
    }
    let mut parts = vec![Vec::new(); servers];
    let mut seen = std::collections::HashSet::new();
    for f in facts {
        if seen.insert(*f) {
            parts[predetermined(f.subject, servers).index()].push(*f);
        }
    }
    Ok(parts)
}

/// Parses an assignment file of `<fact-line-number> <server-id>` lines.
/// Blank lines and `#` comments are skipped.
pub fn parse_assignment(text: &str) -> Result<Vec<(usize, usize, u32)>, PartitionError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: &str| PartitionError::Malformed {
            line: i + 1,
            message: message.to_string(),
        };
        let mut fields = line.split_whitespace();
        let (Some(fact_line), Some(server), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected `<fact-line-number> <server-id>`"));
        };
        let fact_line = fact_line.parse().map_err(|_| malformed("bad fact line number"))?;
        let server = server.parse().map_err(|_| malformed("bad server id"))?;
        out.push((i + 1, fact_line, server));
    }
    Ok(out)
}

/// Applies an explicit assignment. Every fact line must be assigned exactly
/// once to a server in `1..=servers`; a fact repeated on several lines must
/// be assigned consistently.
pub fn partition_explicit(
    facts: &[LoadedFact],
    assignment: &str,
    servers: usize,
) -> Result<Vec<Vec<Fact>>, PartitionError> {
    if servers == 0 {
        return Err(PartitionError::NoServers);
    }
    let by_line: HashMap<usize, Fact> = facts.iter().map(|lf| (lf.line, lf.fact)).collect();
    let mut assigned: BTreeMap<usize, u32> = BTreeMap::new();
    for (_, fact_line, server) in parse_assignment(assignment)? {
        if server == 0 || server as usize > servers {
            return Err(PartitionError::ServerOutOfRange {
                line: fact_line,
                server,
                servers: servers as u32,
            });
        }
        if !by_line.contains_key(&fact_line) {
            return Err(PartitionError::UnknownLine { line: fact_line });
        }
        if assigned.insert(fact_line, server).is_some() {
            return Err(PartitionError::DuplicateAssignment { line: fact_line });
        }
    }
    let mut placed: HashMap<Fact, u32> = HashMap::new();
    let mut parts = vec![Vec::new(); servers];
    for lf in facts {
        let server = *assigned
            .get(&lf.line)
            .ok_or(PartitionError::MissingAssignment { line: lf.line })?;
        match placed.get(&lf.fact) {
            Some(&first) if first != server => {
                return Err(PartitionError::ConflictingAssignment {
                    line: lf.line,
                    first,
                    second: server,
                })
            }
            Some(_) => {}
            None => {
                placed.insert(lf.fact, server);
                parts[ServerId(server).index()].push(lf.fact);
            }
        }
    }
    Ok(parts)
}
