//! Generics knowledge base: quantifier-labelled `(source, relation, target)` triples
//! together with entity and relation vocabularies.
//!
//! Vocabularies keep insertion order of first appearance, so ids are stable and
//! deterministic for a given input file. The canonical serialization sorts triples
//! lexicographically by name, which makes saved files diff-able.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("conflicting label at line {line}: {triple} is already labelled {existing}")]
    ConflictingLine {
        line: usize,
        triple: String,
        existing: QuantLabel,
    },
    #[error("conflicting label for {triple}: {existing} vs {new}")]
    Conflict {
        triple: String,
        existing: QuantLabel,
        new: QuantLabel,
    },
    #[error("knowledge base file contains no triples")]
    Empty,
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("need at least {needed} triples to split, got {got}")]
    TooFewTriples { needed: usize, got: usize },
}

/// Categorical truth value of a generics triple: "q s r (some) t".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantLabel {
    All,
    Some,
    None,
}

impl QuantLabel {
    pub const ALL: [QuantLabel; 3] = [QuantLabel::All, QuantLabel::Some, QuantLabel::None];

    /// Position in the total order `None < Some < All`.
    pub fn rank(self) -> u8 {
        match self {
            QuantLabel::None => 0,
            QuantLabel::Some => 1,
            QuantLabel::All => 2,
        }
    }

    /// Class index used by the three-way loss: All→1, Some→2, None→3.
    pub fn class(self) -> usize {
        match self {
            QuantLabel::All => 1,
            QuantLabel::Some => 2,
            QuantLabel::None => 3,
        }
    }

    pub fn from_class(class: usize) -> Option<Self> {
        match class {
            1 => Some(QuantLabel::All),
            2 => Some(QuantLabel::Some),
            3 => Some(QuantLabel::None),
            _ => None,
        }
    }

    /// Binary encoding: All and Some are +1, None is −1.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_positive(self) -> bool {
        !matches!(self, QuantLabel::None)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantLabel::All => "all",
            QuantLabel::Some => "some",
            QuantLabel::None => "none",
        }
    }
}

impl PartialOrd for QuantLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QuantLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for QuantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid quantifier label {0:?} (expected all, some or none)")]
pub struct ParseLabelError(pub String);

impl FromStr for QuantLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(QuantLabel::All),
            "some" => Ok(QuantLabel::Some),
            "none" => Ok(QuantLabel::None),
            _ => Err(ParseLabelError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A `(source, relation, target)` triple over vocabulary ids.
///
/// Ordering is lexicographic over `(source, relation, target)` ids; this is the
/// tie-breaking order used wherever rankings need to be deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub source: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
}

impl Triple {
    pub fn new(source: EntityId, relation: RelationId, target: EntityId) -> Self {
        Self {
            source,
            relation,
            target,
        }
    }
}

/// A triple spelled out by name; the currency of background knowledge, which may
/// mention entities the knowledge base has never seen.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NamedTriple {
    pub source: String,
    pub relation: String,
    pub target: String,
}

impl NamedTriple {
    pub fn new(source: impl Into<String>, relation: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            relation: relation.into(),
            target: target.into(),
        }
    }
}

impl fmt::Display for NamedTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.relation, self.target)
    }
}

/// Anything that can resolve entity and relation ids back to names.
pub trait Vocabulary {
    fn entity_name(&self, id: EntityId) -> Option<&str>;
    fn relation_name(&self, id: RelationId) -> Option<&str>;

    fn named(&self, triple: &Triple) -> Option<NamedTriple> {
        Some(NamedTriple::new(
            self.entity_name(triple.source)?,
            self.relation_name(triple.relation)?,
            self.entity_name(triple.target)?,
        ))
    }
}

/// Ordered string interner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: IndexSet<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(i) = self.names.get_index_of(name) {
            return i as u32;
        }
        let (i, _) = self.names.insert_full(name.to_string());
        i as u32
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.names.get_index_of(name).map(|i| i as u32)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get_index(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// A set of quantifier-labelled triples plus entity/relation vocabularies.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: Vocab,
    relations: Vocab,
    triples: IndexMap<Triple, QuantLabel>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty knowledge base sharing `other`'s vocabularies, so ids carry over.
    pub fn with_vocab_of(other: &KnowledgeBase) -> Self {
        Self {
            entities: other.entities.clone(),
            relations: other.relations.clone(),
            triples: IndexMap::new(),
        }
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }

    /// Resolves a named triple against the vocabularies without interning.
    pub fn lookup(&self, source: &str, relation: &str, target: &str) -> Option<Triple> {
        Some(Triple::new(
            self.entity_id(source)?,
            self.relation_id(relation)?,
            self.entity_id(target)?,
        ))
    }

    pub fn lookup_named(&self, t: &NamedTriple) -> Option<Triple> {
        self.lookup(&t.source, &t.relation, &t.target)
    }

    /// Inserts a named triple, interning any new names. Re-inserting with the same
    /// label is a no-op; a different label is a conflict.
    pub fn insert(
        &mut self,
        source: &str,
        relation: &str,
        target: &str,
        label: QuantLabel,
    ) -> Result<Triple, KbError> {
        let triple = Triple::new(
            self.intern_entity(source),
            self.intern_relation(relation),
            self.intern_entity(target),
        );
        self.insert_triple(triple, label)?;
        Ok(triple)
    }

    pub fn insert_named(&mut self, t: &NamedTriple, label: QuantLabel) -> Result<Triple, KbError> {
        self.insert(&t.source, &t.relation, &t.target, label)
    }

    pub fn insert_triple(&mut self, triple: Triple, label: QuantLabel) -> Result<(), KbError> {
        self.check_ids(&triple)?;
        match self.triples.get(&triple) {
            Some(&existing) if existing != label => Err(KbError::Conflict {
                triple: self.display(&triple),
                existing,
                new: label,
            }),
            Some(_) => Ok(()),
            None => {
                self.triples.insert(triple, label);
                Ok(())
            }
        }
    }

    /// Overwrites the label of a triple (used when merging annotations).
    pub fn set_label(&mut self, triple: Triple, label: QuantLabel) -> Result<(), KbError> {
        self.check_ids(&triple)?;
        self.triples.insert(triple, label);
        Ok(())
    }

    fn check_ids(&self, triple: &Triple) -> Result<(), KbError> {
        if triple.source.index() >= self.entities.len() {
            return Err(KbError::UnknownEntity(triple.source.0));
        }
        if triple.target.index() >= self.entities.len() {
            return Err(KbError::UnknownEntity(triple.target.0));
        }
        if triple.relation.index() >= self.relations.len() {
            return Err(KbError::UnknownRelation(triple.relation.0));
        }
        Ok(())
    }

    pub fn label(&self, triple: &Triple) -> Option<QuantLabel> {
        self.triples.get(triple).copied()
    }

    pub fn label_named(&self, source: &str, relation: &str, target: &str) -> Option<QuantLabel> {
        self.lookup(source, relation, target)
            .and_then(|t| self.label(&t))
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains_key(triple)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&Triple, QuantLabel)> {
        self.triples.iter().map(|(t, &l)| (t, l))
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.keys()
    }

    pub fn display(&self, triple: &Triple) -> String {
        match self.named(triple) {
            Some(n) => n.to_string(),
            None => format!("{triple:?}"),
        }
    }

    /// All facts keyed by name; independent of vocabulary order.
    pub fn named_facts(&self) -> BTreeMap<NamedTriple, QuantLabel> {
        self.iter()
            .filter_map(|(t, l)| self.named(t).map(|n| (n, l)))
            .collect()
    }

    /// Canonical TSV: one `source\trelation\ttarget\tlabel` line per triple, sorted by name.
    pub fn to_canonical_tsv(&self) -> String {
        let mut out = String::new();
        for (t, label) in self.named_facts() {
            out.push_str(&t.source);
            out.push('\t');
            out.push_str(&t.relation);
            out.push('\t');
            out.push_str(&t.target);
            out.push('\t');
            out.push_str(label.as_str());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_tsv()).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Two knowledge bases are equal when they hold the same named facts, regardless
/// of vocabulary ordering.
impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.named_facts() == other.named_facts()
    }
}

impl Vocabulary for KnowledgeBase {
    fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.name(id.0)
    }

    fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.name(id.0)
    }
}

/// Splits a data line into exactly `n` tab-separated, non-empty fields.
pub(crate) fn split_fields(line: &str, n: usize, lineno: usize) -> Result<Vec<&str>, KbError> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() != n {
        return Err(KbError::Malformed {
            line: lineno,
            reason: format!("expected {n} tab-separated fields, found {}", fields.len()),
        });
    }
    if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
        return Err(KbError::Malformed {
            line: lineno,
            reason: format!("field {} is empty", pos + 1),
        });
    }
    Ok(fields)
}

/// Iterates `(line number, content)` over lines that carry data (skips blanks and `#` comments).
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses the four-column TSV knowledge-base format.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, KbError> {
    let mut kb = KnowledgeBase::new();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(line, 4, lineno)?;
        let label: QuantLabel = f[3].parse().map_err(|e: ParseLabelError| KbError::Malformed {
            line: lineno,
            reason: e.to_string(),
        })?;
        match kb.insert(f[0], f[1], f[2], label) {
            Ok(_) => {}
            Err(KbError::Conflict { triple, existing, .. }) => {
                return Err(KbError::ConflictingLine {
                    line: lineno,
                    triple,
                    existing,
                })
            }
            Err(e) => return Err(e),
        }
    }
    if kb.is_empty() {
        return Err(KbError::Empty);
    }
    Ok(kb)
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kb(&text)
}
