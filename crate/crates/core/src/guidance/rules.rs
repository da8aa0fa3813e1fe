//! Quantification rules over the isa taxonomy, applied to a fixpoint.
//!
//! For a parent `p` with children `c_i` and any `(r, t)`:
//!
//! * down-all: `(p,r,t)` All ⇒ `(c_i,r,t)` All
//! * up-all: every `(c_i,r,t)` All ⇒ `(p,r,t)` All
//! * up-exists-all: some `(c_i,r,t)` All ⇒ `(p,r,t)` Some
//! * up-exists-some: some `(c_i,r,t)` Some ⇒ `(p,r,t)` Some
//!
//! Only the source slot is propagated. None labels never fire a rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::background::Taxonomy;
use crate::kb::{KnowledgeBase, NamedTriple, QuantLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "down-all")]
    DownAll,
    #[serde(rename = "up-all")]
    UpAll,
    #[serde(rename = "up-exists-all")]
    UpExistsAll,
    #[serde(rename = "up-exists-some")]
    UpExistsSome,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::DownAll, Rule::UpAll, Rule::UpExistsAll, Rule::UpExistsSome];

    pub fn id(self) -> &'static str {
        match self {
            Rule::DownAll => "down-all",
            Rule::UpAll => "up-all",
            Rule::UpExistsAll => "up-exists-all",
            Rule::UpExistsSome => "up-exists-some",
        }
    }

    /// The label every derivation of this rule carries.
    pub fn label(self) -> QuantLabel {
        match self {
            Rule::DownAll | Rule::UpAll => QuantLabel::All,
            Rule::UpExistsAll | Rule::UpExistsSome => QuantLabel::Some,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.id() == s.trim())
            .ok_or_else(|| format!("unknown rule {s:?} (expected one of down-all, up-all, up-exists-all, up-exists-some)"))
    }
}

/// Which rules are enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet(BTreeSet<Rule>);

impl RuleSet {
    pub fn all() -> Self {
        RuleSet(Rule::ALL.into_iter().collect())
    }

    pub fn none() -> Self {
        RuleSet(BTreeSet::new())
    }

    pub fn contains(&self, r: Rule) -> bool {
        self.0.contains(&r)
    }

    /// Parses a comma-separated list of rule ids, or `all`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Rule::from_str)
            .collect::<Result<BTreeSet<_>, _>>()
            .map(RuleSet)
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromIterator<Rule> for RuleSet {
    fn from_iter<I: IntoIterator<Item = Rule>>(iter: I) -> Self {
        RuleSet(iter.into_iter().collect())
    }
}

/// A triple inferred by a rule, with the facts it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedTriple {
    pub triple: NamedTriple,
    pub label: QuantLabel,
    pub rule: Rule,
    pub provenance: Vec<NamedTriple>,
}

type Key = (String, String); // (relation, target)

/// Labels known for one `(r, t)` column, by source entity.
struct State<'a> {
    kb: &'a KnowledgeBase,
    derived: BTreeMap<NamedTriple, DerivedTriple>,
}

impl State<'_> {
    fn label(&self, source: &str, key: &Key) -> Option<QuantLabel> {
        if let Some(l) = self.kb.label_named(source, &key.0, &key.1) {
            return Some(l);
        }
        self.derived
            .get(&NamedTriple::new(source, key.0.as_str(), key.1.as_str()))
            .map(|d| d.label)
    }

    /// Records a candidate derivation; returns true if it changed the state.
    fn offer(&mut self, cand: DerivedTriple) -> bool {
        let t = &cand.triple;
        if self.kb.label_named(&t.source, &t.relation, &t.target).is_some() {
            return false;
        }
        match self.derived.get(t) {
            Some(existing) if existing.label >= cand.label => false,
            _ => {
                self.derived.insert(cand.triple.clone(), cand);
                true
            }
        }
    }
}

/// Applies the enabled rules to a fixpoint and returns the derived triples, sorted.
/// Triples already in `kb` are never derived; a derived All replaces a derived Some.
pub fn expand_taxonomy_with(kb: &KnowledgeBase, taxonomy: &Taxonomy, rules: &RuleSet) -> Vec<DerivedTriple> {
    let mut state = State {
        kb,
        derived: BTreeMap::new(),
    };
    let mut queue: VecDeque<(String, Key)> = VecDeque::new();
    let mut queued: BTreeSet<(String, Key)> = BTreeSet::new();
    let seeds: BTreeMap<NamedTriple, QuantLabel> = kb.named_facts();
    for (t, l) in &seeds {
        if l.is_positive() && taxonomy.contains(&t.source) {
            let item = (t.source.clone(), (t.relation.clone(), t.target.clone()));
            if queued.insert(item.clone()) {
                queue.push_back(item);
            }
        }
    }

    fn push(queue: &mut VecDeque<(String, Key)>, queued: &mut BTreeSet<(String, Key)>, e: &str, key: &Key) {
        let item = (e.to_string(), key.clone());
        if queued.insert(item.clone()) {
            queue.push_back(item);
        }
    }

    while let Some((e, key)) = queue.pop_front() {
        queued.remove(&(e.clone(), key.clone()));
        let Some(label) = state.label(&e, &key) else { continue };
        let fact = NamedTriple::new(e.as_str(), key.0.as_str(), key.1.as_str());

        if label == QuantLabel::All && rules.contains(Rule::DownAll) {
            let children: Vec<String> = taxonomy.children_of(&e).map(String::from).collect();
            for c in children {
                let cand = DerivedTriple {
                    triple: NamedTriple::new(c.as_str(), key.0.as_str(), key.1.as_str()),
                    label: QuantLabel::All,
                    rule: Rule::DownAll,
                    provenance: vec![fact.clone()],
                };
                if state.offer(cand) {
                    push(&mut queue, &mut queued, &c, &key);
                }
            }
        }

        if !label.is_positive() {
            continue;
        }
        let parents: Vec<String> = taxonomy.parents_of(&e).map(String::from).collect();
        for p in parents {
            if let Some(cand) = evaluate_up(&state, taxonomy, rules, &p, &key) {
                if state.offer(cand) {
                    push(&mut queue, &mut queued, &p, &key);
                }
            }
        }
    }
    state.derived.into_values().collect()
}

/// The strongest upward derivation for `(p, key)` given the children's current labels.
fn evaluate_up(state: &State<'_>, taxonomy: &Taxonomy, rules: &RuleSet, p: &str, key: &Key) -> Option<DerivedTriple> {
    let children: Vec<&str> = taxonomy.children_of(p).collect();
    let labels: Vec<Option<QuantLabel>> = children.iter().map(|c| state.label(c, key)).collect();
    let fact = |c: &str| NamedTriple::new(c, key.0.as_str(), key.1.as_str());
    let make = |rule: Rule, prov: Vec<NamedTriple>| DerivedTriple {
        triple: fact(p),
        label: rule.label(),
        rule,
        provenance: prov,
    };
    if rules.contains(Rule::UpAll)
        && children.len() >= 2
        && labels.iter().all(|l| *l == Some(QuantLabel::All))
    {
        return Some(make(Rule::UpAll, children.iter().map(|c| fact(c)).collect()));
    }
    if rules.contains(Rule::UpExistsAll) {
        if let Some(i) = labels.iter().position(|l| *l == Some(QuantLabel::All)) {
            return Some(make(Rule::UpExistsAll, vec![fact(children[i])]));
        }
    }
    if rules.contains(Rule::UpExistsSome) {
        if let Some(i) = labels.iter().position(|l| *l == Some(QuantLabel::Some)) {
            return Some(make(Rule::UpExistsSome, vec![fact(children[i])]));
        }
    }
    None
}

/// [`expand_taxonomy_with`] using all four rules.
pub fn expand_taxonomy(kb: &KnowledgeBase, taxonomy: &Taxonomy) -> Vec<DerivedTriple> {
    expand_taxonomy_with(kb, taxonomy, &RuleSet::all())
}

/// `kb` plus the derived triples, interning any new entities.
pub fn merge_derived(kb: &KnowledgeBase, derived: &[DerivedTriple]) -> KnowledgeBase {
    let mut out = kb.clone();
    for d in derived {
        out.insert_named(&d.triple, d.label)
            .expect("derived triples never collide with knowledge-base triples");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn labels(derived: &[DerivedTriple]) -> BTreeMap<NamedTriple, QuantLabel> {
        derived.iter().map(|d| (d.triple.clone(), d.label)).collect()
    }

    #[test]
    fn down_all_reaches_every_child() {
        let mut kb = KnowledgeBase::new();
        kb.insert("animal", "livein", "forest", QuantLabel::All).unwrap();
        let tax = Taxonomy::from_edges([("dog", "animal"), ("cat", "animal")]).unwrap();
        let d = labels(&expand_taxonomy(&kb, &tax));
        assert_eq!(d.len(), 2);
        assert_eq!(d[&NamedTriple::new("dog", "livein", "forest")], QuantLabel::All);
        assert_eq!(d[&NamedTriple::new("cat", "livein", "forest")], QuantLabel::All);
    }

    #[test]
    fn up_exists_some() {
        let mut kb = KnowledgeBase::new();
        kb.insert("finch", "eat", "insect", QuantLabel::Some).unwrap();
        let tax = Taxonomy::from_edges([("finch", "bird"), ("oriole", "bird")]).unwrap();
        let out = expand_taxonomy(&kb, &tax);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].triple, NamedTriple::new("bird", "eat", "insect"));
        assert_eq!(out[0].label, QuantLabel::Some);
        assert_eq!(out[0].rule, Rule::UpExistsSome);
        assert_eq!(out[0].provenance, vec![NamedTriple::new("finch", "eat", "insect")]);
    }

    #[test]
    fn empty_taxonomy_derives_nothing() {
        let mut kb = KnowledgeBase::new();
        kb.insert("a", "r", "b", QuantLabel::All).unwrap();
        assert!(expand_taxonomy(&kb, &Taxonomy::new()).is_empty());
    }

    #[test]
    fn up_all_needs_two_children_all_true() {
        let mut kb = KnowledgeBase::new();
        kb.insert("dog", "have", "fur", QuantLabel::All).unwrap();
        kb.insert("cat", "have", "fur", QuantLabel::All).unwrap();
        let tax = Taxonomy::from_edges([("dog", "mammal"), ("cat", "mammal")]).unwrap();
        let out = expand_taxonomy(&kb, &tax);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rule, Rule::UpAll);
        assert_eq!(out[0].label, QuantLabel::All);
        assert_eq!(out[0].provenance.len(), 2);

        // Single child: only the existential rule fires.
        let tax1 = Taxonomy::from_edges([("dog", "canine")]).unwrap();
        let out = expand_taxonomy(&kb, &tax1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rule, Rule::UpExistsAll);
        assert_eq!(out[0].label, QuantLabel::Some);
    }

    #[test]
    fn derived_all_supersedes_derived_some() {
        // grand -> {p1, p2}; p1 -> {a, b}; p2 -> {c}. a,b All make p1 All (up-all);
        // c Some makes p2 Some; grand gets Some from p2 first or All? Only Some:
        // p2 is not All. Then add grand All via another route: down from top.
        let mut kb = KnowledgeBase::new();
        kb.insert("a", "r", "t", QuantLabel::All).unwrap();
        kb.insert("b", "r", "t", QuantLabel::Some).unwrap();
        kb.insert("top", "r", "t", QuantLabel::All).unwrap();
        let tax = Taxonomy::from_edges([("a", "p"), ("b", "p"), ("p", "top"), ("x", "p")]).unwrap();
        let d = labels(&expand_taxonomy(&kb, &tax));
        // p is All by down-all from top even though up-exists-all would give Some.
        assert_eq!(d[&NamedTriple::new("p", "r", "t")], QuantLabel::All);
        assert_eq!(d[&NamedTriple::new("x", "r", "t")], QuantLabel::All);
        // KB triple b stays as is; never re-derived.
        assert!(!d.contains_key(&NamedTriple::new("b", "r", "t")));
    }

    #[test]
    fn none_labels_do_not_propagate() {
        let mut kb = KnowledgeBase::new();
        kb.insert("dog", "fly", "sky", QuantLabel::None).unwrap();
        kb.insert("animal", "fly", "sky", QuantLabel::None).unwrap();
        let tax = Taxonomy::from_edges([("dog", "animal"), ("cat", "animal")]).unwrap();
        assert!(expand_taxonomy(&kb, &tax).is_empty());
    }

    #[test]
    fn chains_across_levels() {
        let mut kb = KnowledgeBase::new();
        kb.insert("robin", "eat", "worm", QuantLabel::Some).unwrap();
        let tax = Taxonomy::from_edges([("robin", "bird"), ("bird", "animal"), ("animal", "organism")]).unwrap();
        let d = labels(&expand_taxonomy(&kb, &tax));
        for up in ["bird", "animal", "organism"] {
            assert_eq!(d[&NamedTriple::new(up, "eat", "worm")], QuantLabel::Some);
        }
    }

    #[test]
    fn rule_subsets() {
        let mut kb = KnowledgeBase::new();
        kb.insert("animal", "livein", "forest", QuantLabel::All).unwrap();
        let tax = Taxonomy::from_edges([("dog", "animal"), ("cat", "animal")]).unwrap();
        assert!(expand_taxonomy_with(&kb, &tax, &RuleSet::none()).is_empty());
        let only_up = RuleSet::parse("up-all,up-exists-some").unwrap();
        assert!(expand_taxonomy_with(&kb, &tax, &only_up).is_empty());
        assert!(RuleSet::parse("sideways").is_err());
        assert_eq!(RuleSet::parse("all").unwrap(), RuleSet::all());
    }

    /// Naive oracle: sweep every rule over every node until nothing changes.
    fn naive_fixpoint(kb: &KnowledgeBase, tax: &Taxonomy) -> BTreeMap<NamedTriple, QuantLabel> {
        let facts = kb.named_facts();
        let keys: BTreeSet<(String, String)> = facts
            .keys()
            .map(|t| (t.relation.clone(), t.target.clone()))
            .collect();
        let nodes: Vec<String> = tax.nodes().into_iter().map(String::from).collect();
        let mut derived: BTreeMap<NamedTriple, QuantLabel> = BTreeMap::new();
        loop {
            let mut changed = false;
            for (r, t) in &keys {
                let get = |e: &str, derived: &BTreeMap<NamedTriple, QuantLabel>| {
                    let nt = NamedTriple::new(e, r.as_str(), t.as_str());
                    facts.get(&nt).or_else(|| derived.get(&nt)).copied()
                };
                for n in &nodes {
                    let nt = NamedTriple::new(n.as_str(), r.as_str(), t.as_str());
                    if facts.contains_key(&nt) {
                        continue;
                    }
                    let mut best: Option<QuantLabel> = derived.get(&nt).copied();
                    let mut offer = |l: QuantLabel| {
                        if best.is_none_or(|b| l > b) {
                            best = Some(l);
                        }
                    };
                    if tax.parents_of(n).any(|p| get(p, &derived) == Some(QuantLabel::All)) {
                        offer(QuantLabel::All);
                    }
                    let cl: Vec<Option<QuantLabel>> = tax.children_of(n).map(|c| get(c, &derived)).collect();
                    if cl.len() >= 2 && cl.iter().all(|l| *l == Some(QuantLabel::All)) {
                        offer(QuantLabel::All);
                    }
                    if cl.iter().any(|l| matches!(l, Some(QuantLabel::All) | Some(QuantLabel::Some))) {
                        offer(QuantLabel::Some);
                    }
                    if best != derived.get(&nt).copied() {
                        derived.insert(nt, best.unwrap());
                        changed = true;
                    }
                }
            }
            if !changed {
                return derived;
            }
        }
    }

    fn random_instance(seed: u64) -> (KnowledgeBase, Taxonomy) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 1..50usize {
            if rng.random_bool(0.8) {
                edges.push((format!("e{i}"), format!("e{}", rng.random_range(0..i))));
            }
            if rng.random_bool(0.1) {
                edges.push((format!("e{i}"), format!("e{}", rng.random_range(0..i))));
            }
        }
        let tax = Taxonomy::from_edges(edges).unwrap();
        let mut kb = KnowledgeBase::new();
        for _ in 0..60 {
            let l = QuantLabel::ALL[rng.random_range(0..3)];
            let _ = kb.insert(
                &format!("e{}", rng.random_range(0..50)),
                &format!("r{}", rng.random_range(0..2)),
                &format!("t{}", rng.random_range(0..3)),
                l,
            );
        }
        (kb, tax)
    }

    #[test]
    fn worklist_matches_naive_fixpoint() {
        for seed in 0..60 {
            let (kb, tax) = random_instance(seed);
            let got = expand_taxonomy(&kb, &tax);
            assert_eq!(labels(&got), naive_fixpoint(&kb, &tax), "seed {seed}");
            for d in &got {
                assert_eq!(d.label, d.rule.label());
                assert!(!d.provenance.is_empty());
            }
        }
    }

    proptest! {
        #[test]
        fn expansion_is_idempotent(seed in any::<u64>()) {
            let (kb, tax) = random_instance(seed);
            let derived = expand_taxonomy(&kb, &tax);
            let merged = merge_derived(&kb, &derived);
            prop_assert!(expand_taxonomy(&merged, &tax).is_empty());
        }

        #[test]
        fn expansion_is_monotone(seed in any::<u64>(), extra in 0usize..10) {
            let (kb, tax) = random_instance(seed);
            let before = labels(&expand_taxonomy(&kb, &tax));
            let mut bigger = kb.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for _ in 0..extra {
                let t = NamedTriple::new(
                    format!("e{}", rng.random_range(0..50)),
                    format!("r{}", rng.random_range(0..2)),
                    format!("t{}", rng.random_range(0..3)),
                );
                // Only fresh slots: neither known nor previously derived.
                if before.contains_key(&t) || bigger.label_named(&t.source, &t.relation, &t.target).is_some() {
                    continue;
                }
                bigger.insert_named(&t, QuantLabel::ALL[rng.random_range(0..3)]).unwrap();
            }
            let after = labels(&expand_taxonomy(&bigger, &tax));
            for (t, l) in before {
                let now = after.get(&t).copied();
                prop_assert!(now.is_some_and(|n| n >= l), "{} weakened", t);
            }
        }
    }
}
