//! Seeded synthetic worlds with planted ground truth: a block tensor, a taxonomy with
//! inherited facts, set-membership generics and a taxonomic knowledge base for active
//! learning episodes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::background::{Background, Schema, Taxonomy, TypeMap};
use crate::embed::EmbeddingModel;
use crate::guidance::DerivedTriple;
use crate::kb::{EntityId, KnowledgeBase, NamedTriple, QuantLabel, RelationId};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Probability that a random positive outranks a random negative; ties count half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|s| (*s, true)).chain(neg.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with average ranks over ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let np = pos.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * neg.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub relations: usize,
    /// Fraction of planted triples that are observed at all.
    pub density: f64,
    /// Fraction of observed triples held out from training.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            per_cluster: 15,
            relations: 4,
            density: 0.3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

/// Relation `r` links every entity of cluster `c` to every entity of cluster
/// `(c + r) mod clusters`; nothing else is true.
#[derive(Debug, Clone)]
pub struct BlockTensor {
    pub spec: BlockSpec,
    pub train: KnowledgeBase,
    pub held_out: Vec<NamedTriple>,
}

impl BlockTensor {
    pub fn entity(c: usize, i: usize) -> String {
        format!("e{c}_{i}")
    }

    pub fn relation(r: usize) -> String {
        format!("r{r}")
    }

    fn cluster_of(name: &str) -> Option<usize> {
        name.strip_prefix('e')?.split('_').next()?.parse().ok()
    }

    pub fn is_planted(&self, t: &NamedTriple) -> bool {
        let (Some(cs), Some(ct), Some(r)) = (
            Self::cluster_of(&t.source),
            Self::cluster_of(&t.target),
            t.relation.strip_prefix('r').and_then(|r| r.parse::<usize>().ok()),
        ) else {
            return false;
        };
        ct == (cs + r) % self.spec.clusters
    }

    /// AUC of held-out planted triples against every non-planted triple.
    pub fn heldout_auc(&self, model: &EmbeddingModel) -> f64 {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let held: BTreeSet<&NamedTriple> = self.held_out.iter().collect();
        let names: Vec<&str> = model.entity_names().collect();
        for (si, s) in names.iter().enumerate() {
            for (ri, r) in model.relation_names().enumerate() {
                let scores = model.score_all_targets(EntityId(si as u32), RelationId(ri as u32));
                for (ti, t) in names.iter().enumerate() {
                    let nt = NamedTriple::new(*s, r, *t);
                    if held.contains(&nt) {
                        pos.push(scores[ti]);
                    } else if !self.is_planted(&nt) {
                        neg.push(scores[ti]);
                    }
                }
            }
        }
        auc(&pos, &neg)
    }
}

pub fn block_tensor(spec: BlockSpec) -> BlockTensor {
    let mut rng = rng(spec.seed);
    let mut observed = Vec::new();
    for r in 0..spec.relations {
        for cs in 0..spec.clusters {
            let ct = (cs + r) % spec.clusters;
            for i in 0..spec.per_cluster {
                for j in 0..spec.per_cluster {
                    if (cs, i) != (ct, j) && rng.random::<f64>() < spec.density {
                        observed.push(NamedTriple::new(
                            BlockTensor::entity(cs, i),
                            BlockTensor::relation(r),
                            BlockTensor::entity(ct, j),
                        ));
                    }
                }
            }
        }
    }
    observed.shuffle(&mut rng);
    let n_held = (observed.len() as f64 * spec.holdout).round() as usize;
    let held_out = observed.split_off(observed.len() - n_held);
    let mut train = KnowledgeBase::new();
    // Fix the vocabulary order so that ids do not depend on sampling.
    for c in 0..spec.clusters {
        for i in 0..spec.per_cluster {
            train.intern_entity(&BlockTensor::entity(c, i));
        }
    }
    for r in 0..spec.relations {
        train.intern_relation(&BlockTensor::relation(r));
    }
    for t in &observed {
        train.insert_named(t, QuantLabel::Some).expect("fresh triples");
    }
    BlockTensor { spec, train, held_out }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InheritanceSpec {
    pub parents: usize,
    pub children: usize,
    pub relations: usize,
    pub values: usize,
    /// Facts every member of a parent class has.
    pub parent_facts: usize,
    /// Additional facts specific to each child.
    pub own_facts: usize,
    pub seed: u64,
}

impl Default for InheritanceSpec {
    fn default() -> Self {
        Self {
            parents: 3,
            children: 5,
            relations: 3,
            values: 12,
            parent_facts: 4,
            own_facts: 2,
            seed: 0,
        }
    }
}

/// Parents carry All facts that every child inherits; one child's inherited facts are
/// withheld and only its own facts remain in the knowledge base.
#[derive(Debug, Clone)]
pub struct InheritanceWorld {
    pub kb: KnowledgeBase,
    pub background: Background,
    pub held_child: String,
    pub held_out: Vec<NamedTriple>,
    pub truth: KnowledgeBase,
}

pub fn inheritance_world(spec: InheritanceSpec) -> InheritanceWorld {
    let mut rng = rng(spec.seed);
    let pairs: Vec<(String, String)> = (0..spec.relations)
        .flat_map(|r| (0..spec.values).map(move |v| (format!("r{r}"), format!("v{v}"))))
        .collect();
    let mut truth = KnowledgeBase::new();
    let mut tax = Taxonomy::new();
    let mut tm = TypeMap::new();
    let mut schema = Schema::new();
    for r in 0..spec.relations {
        schema.insert(&format!("r{r}"), "kind", "value");
    }
    for v in 0..spec.values {
        tm.insert(&format!("v{v}"), "value");
    }
    for p in 0..spec.parents {
        let parent = format!("p{p}");
        tm.insert(&parent, "kind");
        let chosen: Vec<&(String, String)> = pairs.choose_multiple(&mut rng, spec.parent_facts + spec.children * spec.own_facts).collect();
        let (inherited, own) = chosen.split_at(spec.parent_facts);
        for (r, v) in inherited {
            truth.insert(&parent, r, v, QuantLabel::All).expect("distinct");
        }
        for c in 0..spec.children {
            let child = format!("p{p}_c{c}");
            tax.add_edge(&child, &parent).expect("tree");
            tm.insert(&child, "kind");
            for (r, v) in inherited {
                truth.insert(&child, r, v, QuantLabel::All).expect("distinct");
            }
            for (r, v) in &own[c * spec.own_facts..(c + 1) * spec.own_facts] {
                truth.insert(&child, r, v, QuantLabel::Some).expect("distinct");
            }
        }
    }
    let held_child = "p0_c0".to_string();
    let held_out: Vec<NamedTriple> = truth
        .named_facts()
        .into_iter()
        .filter(|(t, l)| t.source == held_child && *l == QuantLabel::All)
        .map(|(t, _)| t)
        .collect();
    let mut kb = KnowledgeBase::new();
    for (t, l) in truth.named_facts() {
        if !held_out.contains(&t) {
            kb.insert_named(&t, l).expect("distinct");
        }
    }
    InheritanceWorld {
        kb,
        background: Background {
            taxonomy: tax,
            typemap: tm,
            schema,
        },
        held_child,
        held_out,
        truth,
    }
}

impl InheritanceWorld {
    /// Mean filtered rank of each held-out `(c, r, v)` among all targets of `(c, r)`;
    /// other true targets are skipped. Triples outside the vocabulary rank last.
    pub fn mean_rank(&self, model: &EmbeddingModel) -> f64 {
        let n = model.num_entities();
        let mut total = 0.0;
        for t in &self.held_out {
            let (Some(s), Some(r), Some(v)) = (model.entity_id(&t.source), model.relation_id(&t.relation), model.entity_id(&t.target)) else {
                total += n as f64;
                continue;
            };
            let scores = model.score_all_targets(s, r);
            let mine = scores[v.index()];
            let names: Vec<&str> = model.entity_names().collect();
            let better = names
                .iter()
                .enumerate()
                .filter(|(i, o)| {
                    *i != v.index() && scores[*i] > mine && self.truth.label_named(&t.source, &t.relation, o).is_none_or(|l| !l.is_positive())
                })
                .count();
            total += 1.0 + better as f64;
        }
        total / self.held_out.len() as f64
    }
}

/// Generics as explicit sets of individuals: leaves of a random class tree partition
/// the individuals, inner classes are the union of their children, and a label
/// records whether all, some or none of a class's members have a property.
#[derive(Debug, Clone)]
pub struct MembershipWorld {
    pub kb: KnowledgeBase,
    pub taxonomy: Taxonomy,
    pub truth: BTreeMap<NamedTriple, QuantLabel>,
}

/// 40 classes and 10 property values (50 entities), 3 relations, 150 individuals;
/// about a third of all true labels are observed.
pub fn membership_world(seed: u64) -> MembershipWorld {
    const CLASSES: usize = 40;
    const VALUES: usize = 10;
    const RELATIONS: usize = 3;
    const INDIVIDUALS: usize = 150;
    let mut rng = rng(seed);
    let mut parent = vec![None; CLASSES];
    for (c, p) in parent.iter_mut().enumerate().skip(1) {
        *p = Some(rng.random_range(0..c));
    }
    let is_leaf: Vec<bool> = (0..CLASSES).map(|c| !parent.contains(&Some(c))).collect();
    let leaves: Vec<usize> = (0..CLASSES).filter(|c| is_leaf[*c]).collect();
    let mut members: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); CLASSES];
    for i in 0..INDIVIDUALS {
        let leaf = if i < leaves.len() { leaves[i] } else { *leaves.choose(&mut rng).expect("a leaf") };
        let mut c = Some(leaf);
        while let Some(k) = c {
            members[k].insert(i);
            c = parent[k];
        }
    }
    // Properties are correlated within a leaf so that all/none labels are common.
    let mut leaf_of = vec![0; INDIVIDUALS];
    for &l in &leaves {
        for &i in &members[l] {
            if is_leaf[l] {
                leaf_of[i] = l;
            }
        }
    }
    let mut has: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    for r in 0..RELATIONS {
        for v in 0..VALUES {
            let mode: Vec<f64> = (0..CLASSES)
                .map(|_| match rng.random_range(0..3) {
                    0 => 1.0,
                    1 => 0.0,
                    _ => 0.5,
                })
                .collect();
            for (i, &l) in leaf_of.iter().enumerate() {
                if rng.random::<f64>() < mode[l] {
                    has.insert((i, r, v));
                }
            }
        }
    }
    let class = |c: usize| format!("c{c}");
    let mut truth = BTreeMap::new();
    for c in 0..CLASSES {
        for r in 0..RELATIONS {
            for v in 0..VALUES {
                let n = members[c].iter().filter(|i| has.contains(&(**i, r, v))).count();
                let label = if n == members[c].len() {
                    QuantLabel::All
                } else if n > 0 {
                    QuantLabel::Some
                } else {
                    QuantLabel::None
                };
                truth.insert(NamedTriple::new(class(c), format!("r{r}"), format!("a{v}")), label);
            }
        }
    }
    let mut kb = KnowledgeBase::new();
    for (t, l) in &truth {
        if rng.random::<f64>() < 0.35 {
            kb.insert_named(t, *l).expect("distinct");
        }
    }
    let taxonomy = Taxonomy::from_edges((1..CLASSES).map(|c| (class(c), class(parent[c].expect("non-root"))))).expect("tree");
    MembershipWorld { kb, taxonomy, truth }
}

impl MembershipWorld {
    /// Derivations contradicting the ground truth. A derived All must be All; a derived
    /// Some asserts that at least one member has the property.
    pub fn violations(&self, derived: &[DerivedTriple]) -> Vec<String> {
        derived
            .iter()
            .filter_map(|d| {
                let truth = self.truth.get(&d.triple).copied();
                let ok = match d.label {
                    QuantLabel::All => truth == Some(QuantLabel::All),
                    QuantLabel::Some => truth.is_some_and(|l| l.is_positive()),
                    QuantLabel::None => false,
                };
                (!ok).then(|| format!("{} derived {} by {}, truth {:?}", d.triple, d.label, d.rule, truth))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxonomicSpec {
    pub categories: usize,
    pub children: usize,
    pub relations: usize,
    pub values: usize,
    /// Facts shared by every member of a category.
    pub core: usize,
    /// Facts each member of a category has independently with probability 0.3–0.7.
    pub variable: usize,
    /// Facts shared by one of two alternating subgroups of each category.
    pub subgroup: usize,
    /// None-labelled facts per child.
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TaxonomicSpec {
    fn default() -> Self {
        Self {
            categories: 4,
            children: 8,
            relations: 6,
            values: 80,
            core: 6,
            variable: 6,
            subgroup: 6,
            negatives: 1,
            seed: 0,
        }
    }
}

/// Categories of sibling entities sharing core facts, split into two subgroups
/// (even and odd members) with their own facts. The first child of every category is
/// held out of the knowledge base; `truth` has every fact.
#[derive(Debug, Clone)]
pub struct TaxonomicWorld {
    pub kb: KnowledgeBase,
    pub background: Background,
    pub truth: KnowledgeBase,
    pub held_out: Vec<String>,
}

pub fn taxonomic_world(spec: TaxonomicSpec) -> TaxonomicWorld {
    let mut rng = rng(spec.seed);
    let pairs: Vec<(String, String)> = (0..spec.relations)
        .flat_map(|r| (0..spec.values).map(move |v| (format!("r{r}"), format!("v{v}"))))
        .collect();
    let mut truth = KnowledgeBase::new();
    let mut tax = Taxonomy::new();
    let mut tm = TypeMap::new();
    let mut schema = Schema::new();
    for r in 0..spec.relations {
        schema.insert(&format!("r{r}"), "member", "value");
    }
    for v in 0..spec.values {
        tm.insert(&format!("v{v}"), "value");
    }
    let mut held_out = Vec::new();
    for g in 0..spec.categories {
        let group = format!("g{g}");
        let chosen: Vec<&(String, String)> =
            pairs.choose_multiple(&mut rng, spec.core + spec.variable + 2 * spec.subgroup).collect();
        let (core, rest) = chosen.split_at(spec.core);
        let (variable, halves) = rest.split_at(spec.variable);
        let rates: Vec<f64> = variable.iter().map(|_| rng.random_range(0.3..0.7)).collect();
        for c in 0..spec.children {
            let child = format!("g{g}_m{c}");
            tax.add_edge(&child, &group).expect("tree");
            tm.insert(&child, "member");
            if c == 0 {
                held_out.push(child.clone());
            }
            for (r, v) in core {
                truth.insert(&child, r, v, QuantLabel::All).expect("distinct");
            }
            for (r, v) in &halves[(c % 2) * spec.subgroup..(c % 2 + 1) * spec.subgroup] {
                truth.insert(&child, r, v, QuantLabel::Some).expect("distinct");
            }
            for ((r, v), q) in variable.iter().zip(&rates) {
                if rng.random::<f64>() < *q {
                    truth.insert(&child, r, v, QuantLabel::Some).expect("distinct");
                }
            }
            let mut negs = 0;
            while negs < spec.negatives {
                let (r, v) = pairs.choose(&mut rng).expect("pairs");
                if truth.label_named(&child, r, v).is_none() && !rest.iter().any(|p| (&p.0, &p.1) == (r, v)) {
                    truth.insert(&child, r, v, QuantLabel::None).expect("distinct");
                    negs += 1;
                }
            }
        }
    }
    let mut kb = KnowledgeBase::new();
    for (t, l) in truth.named_facts() {
        if !held_out.contains(&t.source) {
            kb.insert_named(&t, l).expect("distinct");
        }
    }
    TaxonomicWorld {
        kb,
        background: Background {
            taxonomy: tax,
            typemap: tm,
            schema,
        },
        truth,
        held_out,
    }
}

/// The bundled demonstration world: 3 categories of 8 members over 4 relations and 20
/// values, exactly 200 triples in the knowledge base (None-labelled facts are dropped
/// from the end to fit).
pub fn fixture() -> TaxonomicWorld {
    let mut w = taxonomic_world(TaxonomicSpec {
        categories: 3,
        children: 8,
        relations: 4,
        values: 20,
        core: 4,
        variable: 4,
        subgroup: 3,
        negatives: 2,
        seed: 7,
    });
    let facts = w.kb.named_facts();
    let mut negatives: Vec<&NamedTriple> = facts.iter().filter(|(_, l)| **l == QuantLabel::None).map(|(t, _)| t).collect();
    let excess = facts.len().saturating_sub(200);
    assert!(excess <= negatives.len(), "fixture generator produced too few None facts to trim");
    let drop: BTreeSet<&NamedTriple> = negatives.split_off(negatives.len() - excess).into_iter().collect();
    let mut kb = KnowledgeBase::new();
    for (t, l) in &facts {
        if !drop.contains(t) {
            kb.insert_named(t, *l).expect("distinct");
        }
    }
    w.kb = kb;
    w
}
