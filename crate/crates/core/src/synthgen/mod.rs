//! Synthetic ground-truth taxonomies and the noisy sapling corpora users would
//! build from them.
//!
//! Every concept owns a small tag vocabulary. A node tagged with concept `c`
//! draws its tags from the vocabularies along the path from the taxonomy root
//! to `c`, so related concepts share evidence the way real collections do,
//! while an ambiguous term's two senses differ below their common ancestors.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Taxonomy;
use crate::sapling::{IdAllocator, NodeId, Sapling, TagStats};
use crate::stem::stem_name;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Taxonomy size, root included.
    pub concepts: usize,
    /// Maximum depth below the root.
    pub depth: usize,
    /// Maximum children per concept.
    pub branching: usize,
    /// Leaf pairs under different parents that share one name.
    pub ambiguous_terms: usize,
    pub users: usize,
    pub saplings_per_user: usize,
    pub leaf_dropout: f64,
    pub tag_noise: f64,
    pub vocab_per_concept: usize,
    /// Tags drawn per leaf node.
    pub tag_draws: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            concepts: 20,
            depth: 3,
            branching: 4,
            ambiguous_terms: 1,
            users: 50,
            saplings_per_user: 2,
            leaf_dropout: 0.3,
            tag_noise: 0.1,
            vocab_per_concept: 8,
            tag_draws: 24,
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("concepts", self.concepts),
            ("depth", self.depth),
            ("branching", self.branching),
            ("users", self.users),
            ("saplings_per_user", self.saplings_per_user),
            ("vocab_per_concept", self.vocab_per_concept),
            ("tag_draws", self.tag_draws),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, p) in [("leaf_dropout", self.leaf_dropout), ("tag_noise", self.tag_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0,1]")));
            }
        }
        if self.concepts < 2 {
            return Err(Error::Infeasible("a taxonomy needs at least two concepts".into()));
        }
        let capacity = (self.branching as u128).saturating_pow(self.depth.min(128) as u32);
        if capacity < self.concepts as u128 {
            return Err(Error::Infeasible(format!(
                "branching^depth = {capacity} < {} concepts",
                self.concepts
            )));
        }
        Ok(())
    }
}

/// A generated reference taxonomy with its tag model.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTaxonomy {
    /// Concept names; ambiguous pairs share a name.
    pub names: Vec<String>,
    /// Stem-labelled tree over the same indices.
    pub taxonomy: Taxonomy,
    /// Distinctive tags of every concept, disjoint across concepts.
    pub vocab: Vec<Vec<String>>,
    /// Concept pairs sharing a name.
    pub ambiguous: Vec<(usize, usize)>,
}

impl SynthTaxonomy {
    pub fn parent(&self, c: usize) -> Option<usize> {
        self.taxonomy.parent[c]
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        self.taxonomy.children()
    }

    /// Concepts with children, ascending.
    pub fn internal(&self) -> Vec<usize> {
        let children = self.children();
        (0..self.names.len()).filter(|&c| !children[c].is_empty()).collect()
    }

    /// Stems occurring more than once.
    pub fn ambiguous_stems(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut repeated = BTreeSet::new();
        for l in &self.taxonomy.labels {
            if !seen.insert(l.as_str()) {
                repeated.insert(l.as_str());
            }
        }
        repeated
    }

    /// Own and ancestor vocabularies of `c`.
    fn path_vocab(&self, c: usize) -> Vec<&str> {
        std::iter::once(c)
            .chain(self.taxonomy.ancestors(c))
            .flat_map(|a| self.vocab[a].iter().map(String::as_str))
            .collect()
    }
}

fn rng(cfg: &GenConfig, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    r.set_stream(stream);
    r
}

/// Grow a random tree under the depth and branching limits and give every
/// concept its own vocabulary.
pub fn generate_taxonomy(cfg: &GenConfig) -> Result<SynthTaxonomy> {
    cfg.validate()?;
    let mut rng = rng(cfg, 0);
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut depth = vec![0usize];
    let mut child_count = vec![0usize];
    for _ in 1..cfg.concepts {
        let open: Vec<usize> = (0..parent.len())
            .filter(|&c| depth[c] < cfg.depth && child_count[c] < cfg.branching)
            .collect();
        let &p = open.choose(&mut rng).expect("capacity checked in validate");
        parent.push(Some(p));
        depth.push(depth[p] + 1);
        child_count.push(0);
        child_count[p] += 1;
    }

    let mut names: Vec<String> = (0..cfg.concepts).map(|c| format!("k{c:03}")).collect();
    let ambiguous = pick_ambiguous(&parent, &child_count, cfg.ambiguous_terms, &mut rng)?;
    for &(a, b) in &ambiguous {
        names[b] = names[a].clone();
    }
    let vocab = (0..cfg.concepts)
        .map(|c| (0..cfg.vocab_per_concept).map(|m| format!("v{c}t{m}")).collect())
        .collect();
    let labels = names.iter().map(|n| stem_name(n)).collect();
    Ok(SynthTaxonomy {
        names,
        taxonomy: Taxonomy::from_parts(labels, parent)?,
        vocab,
        ambiguous,
    })
}

/// Disjoint pairs of leaf concepts with different parents, one per ambiguous term.
fn pick_ambiguous(
    parent: &[Option<usize>],
    child_count: &[usize],
    wanted: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let mut free: Vec<usize> = (1..parent.len()).filter(|&c| child_count[c] == 0).collect();
    let mut pairs = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        let candidates: Vec<(usize, usize)> = free
            .iter()
            .flat_map(|&a| free.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a < b && parent[a] != parent[b])
            .collect();
        let &(a, b) = candidates.choose(rng).ok_or_else(|| {
            Error::Infeasible(format!(
                "cannot place {wanted} ambiguous term(s): too few leaves under distinct parents"
            ))
        })?;
        free.retain(|&c| c != a && c != b);
        pairs.push((a, b));
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Saplings with the concept each node stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCorpus {
    pub saplings: Vec<Sapling>,
    pub concept_of: BTreeMap<NodeId, usize>,
}

/// Saplings built by users from portions of the taxonomy.
///
/// Sapling `s` belongs to user `s / saplings_per_user` and is rooted at the
/// internal concept `s mod #internal`, so concepts are covered round-robin.
/// Each child of the root is kept with probability `1 − leaf_dropout`; empty
/// saplings are dropped. Leaf tags are drawn from the concept's path
/// vocabulary, replaced by a uniformly random tag with probability `tag_noise`.
pub fn sample_saplings(tax: &SynthTaxonomy, cfg: &GenConfig) -> Result<SampledCorpus> {
    cfg.validate()?;
    let mut rng = rng(cfg, 1);
    let internal = tax.internal();
    let children = tax.children();
    let all_tags: Vec<&str> = tax.vocab.iter().flatten().map(String::as_str).collect();
    let mut ids = IdAllocator::new();
    let mut saplings = Vec::new();
    let mut concept_of = BTreeMap::new();
    let total = cfg.users * cfg.saplings_per_user;
    for s in 0..total {
        let root = internal[s % internal.len()];
        let user = format!("u{:03}", s / cfg.saplings_per_user);
        let mut leaves = Vec::new();
        for &c in &children[root] {
            if rng.random::<f64>() < cfg.leaf_dropout {
                continue;
            }
            let path = tax.path_vocab(c);
            let mut tags = TagStats::new();
            for _ in 0..cfg.tag_draws {
                let tag = if rng.random::<f64>() < cfg.tag_noise {
                    *all_tags.choose(&mut rng).expect("vocabularies are non-empty")
                } else {
                    *path.choose(&mut rng).expect("vocabularies are non-empty")
                };
                tags.add(tag, 1);
            }
            leaves.push((c, tags));
        }
        if leaves.is_empty() {
            continue;
        }
        let sapling = Sapling::build(
            &mut ids,
            &user,
            &tax.names[root],
            leaves.iter().map(|(c, t)| (tax.names[*c].as_str(), t.clone())),
        );
        concept_of.insert(sapling.root.id, root);
        for (node, (c, _)) in sapling.leaves.iter().zip(&leaves) {
            concept_of.insert(node.id, *c);
        }
        saplings.push(sapling);
    }
    Ok(SampledCorpus { saplings, concept_of })
}
