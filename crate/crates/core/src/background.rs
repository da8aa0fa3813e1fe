//! Background knowledge: the isa taxonomy, entity types and per-relation schema.
//!
//! Everything here is keyed by name rather than by knowledge-base id, because the
//! taxonomy and type map routinely mention entities (parent classes, brand new
//! entities) that have no triples yet.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::kb::{data_lines, split_fields, KbError};

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{file}: malformed line {line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("taxonomy contains a cycle: {}", .witness.join(" -> "))]
    Cycle { witness: Vec<String> },
}

fn malformed(file: &str, err: KbError) -> BackgroundError {
    match err {
        KbError::Malformed { line, reason } => BackgroundError::Malformed {
            file: file.to_string(),
            line,
            reason,
        },
        other => BackgroundError::Malformed {
            file: file.to_string(),
            line: 0,
            reason: other.to_string(),
        },
    }
}

/// Isa partial order over entity names. Multiple parents are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Taxonomy {
    parents: BTreeMap<String, BTreeSet<String>>,
    children: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a taxonomy from `(child, parent)` edges, rejecting cycles.
    pub fn from_edges<I, S>(edges: I) -> Result<Self, BackgroundError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut t = Taxonomy::new();
        for (c, p) in edges {
            t.add_edge_unchecked(c.into(), p.into());
        }
        if let Some(witness) = t.find_cycle() {
            return Err(BackgroundError::Cycle { witness });
        }
        Ok(t)
    }

    fn add_edge_unchecked(&mut self, child: String, parent: String) {
        self.children
            .entry(parent.clone())
            .or_default()
            .insert(child.clone());
        self.parents.entry(child).or_default().insert(parent);
    }

    /// Adds one edge, refusing it if it would close a cycle.
    pub fn add_edge(&mut self, child: &str, parent: &str) -> Result<(), BackgroundError> {
        if child == parent || self.is_ancestor(child, parent) {
            let mut witness = vec![child.to_string()];
            if child != parent {
                witness.extend(self.path_up(parent, child));
            } else {
                witness.push(parent.to_string());
            }
            return Err(BackgroundError::Cycle { witness });
        }
        self.add_edge_unchecked(child.to_string(), parent.to_string());
        Ok(())
    }

    /// True if `anc` is reachable from `node` by following parent edges (strictly).
    pub fn is_ancestor(&self, anc: &str, node: &str) -> bool {
        let mut stack: Vec<&str> = self.parents_of(node).collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == anc {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.parents_of(n));
            }
        }
        false
    }

    /// Parent path from `from` up to `to` (inclusive), assuming `to` is an ancestor.
    fn path_up(&self, from: &str, to: &str) -> Vec<String> {
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(n) = queue.pop_front() {
            if n == to {
                let mut path = vec![to.to_string()];
                let mut cur = to;
                while let Some(&p) = prev.get(cur) {
                    path.push(p.to_string());
                    cur = p;
                }
                path.reverse();
                return path;
            }
            for p in self.parents_of(n) {
                if seen.insert(p) {
                    prev.insert(p, n);
                    queue.push_back(p);
                }
            }
        }
        vec![from.to_string(), to.to_string()]
    }

    /// Returns one cycle as a node path whose last element repeats the first.
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        for start in self.parents.keys() {
            if marks.contains_key(start.as_str()) {
                continue;
            }
            // Iterative DFS with an explicit path stack.
            let mut path: Vec<&str> = vec![start];
            let mut iters: Vec<Box<dyn Iterator<Item = &str> + '_>> =
                vec![Box::new(self.parents_of(start))];
            marks.insert(start, Mark::Open);
            while let Some(it) = iters.last_mut() {
                match it.next() {
                    Some(p) => match marks.get(p) {
                        Some(Mark::Open) => {
                            let pos = path.iter().position(|&n| n == p).unwrap_or(0);
                            let mut w: Vec<String> =
                                path[pos..].iter().map(|s| s.to_string()).collect();
                            w.push(p.to_string());
                            return Some(w);
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(p, Mark::Open);
                            path.push(p);
                            iters.push(Box::new(self.parents_of(p)));
                        }
                    },
                    None => {
                        iters.pop();
                        if let Some(n) = path.pop() {
                            marks.insert(n, Mark::Done);
                        }
                    }
                }
            }
        }
        None
    }

    pub fn parents_of<'a>(&'a self, e: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.parents
            .get(e)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn children_of<'a>(&'a self, e: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.children
            .get(e)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn num_children(&self, e: &str) -> usize {
        self.children.get(e).map_or(0, BTreeSet::len)
    }

    /// Entities sharing at least one parent with `e`, excluding `e` itself.
    pub fn siblings(&self, e: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for p in self.parents_of(e) {
            for c in self.children_of(p) {
                if c != e {
                    out.insert(c.to_string());
                }
            }
        }
        out
    }

    pub fn contains(&self, e: &str) -> bool {
        self.parents.contains_key(e) || self.children.contains_key(e)
    }

    /// Every entity mentioned by an edge, sorted.
    pub fn nodes(&self) -> BTreeSet<&str> {
        self.parents
            .keys()
            .chain(self.children.keys())
            .map(String::as_str)
            .collect()
    }

    /// Nodes with children, sorted.
    pub fn parent_nodes(&self) -> impl Iterator<Item = &str> {
        self.children.keys().map(String::as_str)
    }

    pub fn roots(&self) -> BTreeSet<&str> {
        self.nodes()
            .into_iter()
            .filter(|n| !self.parents.contains_key(*n))
            .collect()
    }

    /// `(child, parent)` edges in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parents
            .iter()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (c.as_str(), p.as_str())))
    }

    pub fn num_edges(&self) -> usize {
        self.parents.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Shortest distance from any root, computed by BFS downwards.
    pub fn depths(&self) -> BTreeMap<&str, usize> {
        let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        for r in self.roots() {
            depth.insert(r, 0);
            queue.push_back(r);
        }
        while let Some(n) = queue.pop_front() {
            let d = depth[n];
            for c in self.children_of(n) {
                if !depth.contains_key(c) {
                    depth.insert(c, d + 1);
                    queue.push_back(c);
                }
            }
        }
        depth
    }

    /// Re-parents every node deeper than `levels` to its ancestors at depth exactly
    /// `levels`. Shallow taxonomies are returned unchanged.
    pub fn collapse(&self, levels: usize) -> Taxonomy {
        let levels = levels.max(1);
        let depth = self.depths();
        let mut out = Taxonomy::new();
        for (&node, &d) in &depth {
            if d <= levels {
                for p in self.parents_of(node) {
                    out.add_edge_unchecked(node.to_string(), p.to_string());
                }
                continue;
            }
            for a in self.ancestors(node) {
                if depth.get(a).copied() == Some(levels) {
                    out.add_edge_unchecked(node.to_string(), a.to_string());
                }
            }
        }
        out
    }

    /// All strict ancestors of `e`.
    pub fn ancestors<'a>(&'a self, e: &str) -> BTreeSet<&'a str> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self.parents_of(e).collect();
        while let Some(a) = stack.pop() {
            if seen.insert(a) {
                stack.extend(self.parents_of(a));
            }
        }
        seen
    }
}

/// Entity name to type names. Unknown entities have no types.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeMap {
    types: BTreeMap<String, BTreeSet<String>>,
    members: BTreeMap<String, BTreeSet<String>>,
}

impl TypeMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut tm = TypeMap::new();
        for (e, t) in pairs {
            tm.insert(&e.into(), &t.into());
        }
        tm
    }

    pub fn insert(&mut self, entity: &str, ty: &str) {
        self.types
            .entry(entity.to_string())
            .or_default()
            .insert(ty.to_string());
        self.members
            .entry(ty.to_string())
            .or_default()
            .insert(entity.to_string());
    }

    pub fn types_of<'a>(&'a self, entity: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.types
            .get(entity)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn has_type(&self, entity: &str, ty: &str) -> bool {
        self.types.get(entity).is_some_and(|s| s.contains(ty))
    }

    pub fn is_typed(&self, entity: &str) -> bool {
        self.types.get(entity).is_some_and(|s| !s.is_empty())
    }

    pub fn members_of<'a>(&'a self, ty: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.members
            .get(ty)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

/// Per-relation list of admissible `(domain type, range type)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pairs: BTreeMap<String, Vec<(String, String)>>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let mut s = Schema::new();
        for (r, d, t) in rows {
            s.insert(&r.into(), &d.into(), &t.into());
        }
        s
    }

    /// Adds a pair; duplicates are ignored.
    pub fn insert(&mut self, relation: &str, domain: &str, range: &str) {
        let list = self.pairs.entry(relation.to_string()).or_default();
        let pair = (domain.to_string(), range.to_string());
        if !list.contains(&pair) {
            list.push(pair);
        }
    }

    pub fn pairs(&self, relation: &str) -> Option<&[(String, String)]> {
        self.pairs.get(relation).map(Vec::as_slice)
    }

    pub fn has_relation(&self, relation: &str) -> bool {
        self.pairs.contains_key(relation)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Taxonomy, types and schema bundled together.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Background {
    pub taxonomy: Taxonomy,
    pub typemap: TypeMap,
    pub schema: Schema,
}

fn read(path: &Path) -> Result<String, BackgroundError> {
    fs::read_to_string(path).map_err(|source| BackgroundError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_taxonomy(text: &str) -> Result<Taxonomy, BackgroundError> {
    let mut edges = Vec::new();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(line, 2, lineno).map_err(|e| malformed("taxonomy", e))?;
        edges.push((f[0].to_string(), f[1].to_string()));
    }
    Taxonomy::from_edges(edges)
}

pub fn parse_typemap(text: &str) -> Result<TypeMap, BackgroundError> {
    let mut tm = TypeMap::new();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(line, 2, lineno).map_err(|e| malformed("typemap", e))?;
        tm.insert(f[0], f[1]);
    }
    Ok(tm)
}

pub fn parse_schema(text: &str) -> Result<Schema, BackgroundError> {
    let mut s = Schema::new();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(line, 3, lineno).map_err(|e| malformed("schema", e))?;
        s.insert(f[0], f[1], f[2]);
    }
    Ok(s)
}

/// Loads the three background files. Schema types not assigned to any entity are
/// kept but logged, since they can never be satisfied.
pub fn load_background(
    taxonomy_path: impl AsRef<Path>,
    typemap_path: impl AsRef<Path>,
    schema_path: impl AsRef<Path>,
) -> Result<Background, BackgroundError> {
    let taxonomy = parse_taxonomy(&read(taxonomy_path.as_ref())?)?;
    let typemap = parse_typemap(&read(typemap_path.as_ref())?)?;
    let schema = parse_schema(&read(schema_path.as_ref())?)?;
    let known: BTreeSet<&str> = typemap.type_names().collect();
    for r in schema.relations() {
        for (d, t) in schema.pairs(r).unwrap_or_default() {
            for ty in [d, t] {
                if !known.contains(ty.as_str()) {
                    log::warn!("schema type {ty:?} for relation {r:?} has no members in the type map");
                }
            }
        }
    }
    Ok(Background {
        taxonomy,
        typemap,
        schema,
    })
}

/// Writes the taxonomy as `child\tparent` lines.
pub fn taxonomy_to_tsv(t: &Taxonomy) -> String {
    t.edges().map(|(c, p)| format!("{c}\t{p}\n")).collect()
}

pub fn typemap_to_tsv(tm: &TypeMap) -> String {
    let mut out = String::new();
    for e in tm.entities() {
        for t in tm.types_of(e) {
            out.push_str(&format!("{e}\t{t}\n"));
        }
    }
    out
}

pub fn schema_to_tsv(s: &Schema) -> String {
    let mut out = String::new();
    for r in s.relations() {
        for (d, t) in s.pairs(r).unwrap_or_default() {
            out.push_str(&format!("{r}\t{d}\t{t}\n"));
        }
    }
    out
}
