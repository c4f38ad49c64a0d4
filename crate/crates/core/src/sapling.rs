//! Personal hierarchies ("saplings"): ingestion, tag statistics, blocking and
//! corpus filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stem::stem_name;

/// Identifier of a sapling node, unique within one corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Root,
    Leaf,
}

/// Tag frequencies of a node. Zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagStats {
    entries: BTreeMap<String, u64>,
}

impl TagStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tag: impl Into<String>, count: u64) {
        if count == 0 {
            return;
        }
        *self.entries.entry(tag.into()).or_insert(0) += count;
    }

    pub fn merge(&mut self, other: &TagStats) {
        for (tag, &count) in &other.entries {
            self.add(tag.clone(), count);
        }
    }

    pub fn get(&self, tag: &str) -> u64 {
        self.entries.get(tag).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(t, &c)| (t.as_str(), c))
    }
}

impl<S: Into<String>> FromIterator<(S, u64)> for TagStats {
    fn from_iter<I: IntoIterator<Item = (S, u64)>>(iter: I) -> Self {
        let mut stats = TagStats::new();
        for (tag, count) in iter {
            stats.add(tag, count);
        }
        stats
    }
}

/// The `k` most frequent tags, frequency ties broken by tag text.
pub fn top_k_tags(tags: &TagStats, k: usize) -> Vec<&str> {
    let mut ranked: Vec<(&str, u64)> = tags.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SNode {
    pub id: NodeId,
    pub raw_name: String,
    pub stem: String,
    pub role: Role,
    pub parent: Option<NodeId>,
    pub user: String,
    pub tags: TagStats,
}

impl SNode {
    pub fn is_root(&self) -> bool {
        self.role == Role::Root
    }

    pub fn is_leaf(&self) -> bool {
        self.role == Role::Leaf
    }
}

/// A root and its leaves. Root-to-leaf edges are broader-to-narrower relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sapling {
    pub root: SNode,
    pub leaves: Vec<SNode>,
    pub user: String,
}

impl Sapling {
    pub fn nodes(&self) -> impl Iterator<Item = &SNode> {
        std::iter::once(&self.root).chain(self.leaves.iter())
    }

    pub fn leaf_stems(&self) -> BTreeSet<&str> {
        self.leaves.iter().map(|l| l.stem.as_str()).collect()
    }

    /// Build a sapling from names and leaf tags, allocating ids root-first.
    /// Leaves sharing a stem are merged and the root's tags are aggregated.
    pub fn build<N, L>(ids: &mut IdAllocator, user: &str, root_name: &str, leaves: L) -> Sapling
    where
        N: AsRef<str>,
        L: IntoIterator<Item = (N, TagStats)>,
    {
        let root_id = ids.next_id();
        let mut leaf_nodes: Vec<SNode> = Vec::new();
        for (name, tags) in leaves {
            let name = name.as_ref();
            let stem = stem_name(name);
            if let Some(existing) = leaf_nodes.iter_mut().find(|l| l.stem == stem) {
                existing.tags.merge(&tags);
                continue;
            }
            leaf_nodes.push(SNode {
                id: ids.next_id(),
                raw_name: name.to_string(),
                stem,
                role: Role::Leaf,
                parent: Some(root_id),
                user: user.to_string(),
                tags,
            });
        }
        aggregate_tags(Sapling {
            root: SNode {
                id: root_id,
                raw_name: root_name.to_string(),
                stem: stem_name(root_name),
                role: Role::Root,
                parent: None,
                user: user.to_string(),
                tags: TagStats::new(),
            },
            leaves: leaf_nodes,
            user: user.to_string(),
        })
    }
}

/// Sets the root's tag statistics to the element-wise sum of its leaves'.
pub fn aggregate_tags(mut sapling: Sapling) -> Sapling {
    let mut total = TagStats::new();
    for leaf in &sapling.leaves {
        total.merge(&leaf.tags);
    }
    sapling.root.tags = total;
    sapling
}

/// Nodes that share a stem; only these are ever compared with each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub stem: String,
    pub nodes: Vec<NodeId>,
}

/// One block per distinct stem, ordered by stem; node order within a block
/// follows the input order.
pub fn build_blocks<'a>(nodes: impl IntoIterator<Item = &'a SNode>) -> Vec<Block> {
    let mut by_stem: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for node in nodes {
        by_stem.entry(node.stem.as_str()).or_default().push(node.id);
    }
    by_stem
        .into_iter()
        .map(|(stem, nodes)| Block {
            stem: stem.to_string(),
            nodes,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Deserialize)]
struct RootRecord {
    name: String,
    // accepted and ignored; recomputed from the leaves
    #[serde(default)]
    #[allow(dead_code)]
    tags: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct LeafRecord {
    name: String,
    #[serde(default)]
    tags: BTreeMap<String, u64>,
    /// Nested collections; each becomes its own fragment rooted at this leaf's name.
    #[serde(default)]
    leaves: Vec<LeafRecord>,
}

#[derive(Debug, Deserialize)]
struct SaplingRecord {
    user: String,
    root: RootRecord,
    leaves: Vec<LeafRecord>,
}

/// Wire form of one input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaplingLine {
    pub user: String,
    pub root: NameOnly,
    pub leaves: Vec<LeafLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NameOnly {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafLine {
    pub name: String,
    pub tags: BTreeMap<String, u64>,
}

impl From<&Sapling> for SaplingLine {
    fn from(s: &Sapling) -> Self {
        SaplingLine {
            user: s.user.clone(),
            root: NameOnly {
                name: s.root.raw_name.clone(),
            },
            leaves: s
                .leaves
                .iter()
                .map(|l| LeafLine {
                    name: l.raw_name.clone(),
                    tags: l.tags.iter().map(|(t, c)| (t.to_string(), c)).collect(),
                })
                .collect(),
        }
    }
}

/// Serialize saplings in the line-delimited input format.
pub fn write_saplings<W: std::io::Write>(saplings: &[Sapling], mut out: W) -> Result<()> {
    for s in saplings {
        serde_json::to_writer(&mut out, &SaplingLine::from(s))?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub saplings: Vec<Sapling>,
    pub rejected: Vec<Rejected>,
}

/// Hands out node ids in creation order.
#[derive(Debug, Default)]
pub struct IdAllocator {
    next: u32,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }
}

struct PendingLeaf {
    raw_name: String,
    stem: String,
    tags: TagStats,
    children: Vec<LeafRecord>,
}

/// Parse one sapling per line. Blank lines are skipped; malformed records are
/// reported with their 1-based line number and do not abort the parse.
pub fn parse_saplings<R: BufRead>(input: R) -> Result<ParseOutcome> {
    let mut ids = IdAllocator::new();
    let mut outcome = ParseOutcome::default();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SaplingRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                outcome.rejected.push(Rejected {
                    line: line_no,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match build_fragments(record, &mut ids) {
            Ok(mut fragments) => outcome.saplings.append(&mut fragments),
            Err(reason) => outcome.rejected.push(Rejected { line: line_no, reason }),
        }
    }
    Ok(outcome)
}

/// Flatten one record (possibly multi-level) into parent-child fragments.
fn build_fragments(record: SaplingRecord, ids: &mut IdAllocator) -> Result<Vec<Sapling>, String> {
    let user = record.user;
    let mut out = Vec::new();
    let mut queue = vec![(record.root.name, record.leaves)];
    // validate before allocating ids so a rejected record consumes none
    check_record(&queue[0].0, &queue[0].1)?;

    while let Some((root_name, leaves)) = queue.pop() {
        let root_stem = stem_name(&root_name);
        let merged = merge_leaves(leaves);
        let root_id = ids.next_id();
        let mut leaf_nodes = Vec::with_capacity(merged.len());
        let mut nested = Vec::new();
        for leaf in merged {
            let mut tags = leaf.tags;
            for child in &leaf.children {
                tags.merge(&subtree_tags(child));
            }
            leaf_nodes.push(SNode {
                id: ids.next_id(),
                raw_name: leaf.raw_name.clone(),
                stem: leaf.stem,
                role: Role::Leaf,
                parent: Some(root_id),
                user: user.clone(),
                tags,
            });
            if !leaf.children.is_empty() {
                nested.push((leaf.raw_name, leaf.children));
            }
        }
        let root = SNode {
            id: root_id,
            raw_name: root_name,
            stem: root_stem,
            role: Role::Root,
            parent: None,
            user: user.clone(),
            tags: TagStats::new(),
        };
        out.push(aggregate_tags(Sapling {
            root,
            leaves: leaf_nodes,
            user: user.clone(),
        }));
        // depth-first, preserving leaf order
        queue.extend(nested.into_iter().rev());
    }
    Ok(out)
}

fn check_record(root_name: &str, leaves: &[LeafRecord]) -> Result<(), String> {
    if stem_name(root_name).is_empty() {
        return Err(format!("root name {root_name:?} has an empty stem"));
    }
    if leaves.is_empty() {
        return Err("sapling has no leaves".to_string());
    }
    for leaf in leaves {
        if stem_name(&leaf.name).is_empty() {
            return Err(format!("leaf name {:?} has an empty stem", leaf.name));
        }
        if !leaf.leaves.is_empty() {
            check_record(&leaf.name, &leaf.leaves)?;
        }
    }
    Ok(())
}

fn stemmed_tags(raw: &BTreeMap<String, u64>) -> TagStats {
    raw.iter()
        .filter_map(|(tag, &count)| {
            let stem = stem_name(tag);
            (!stem.is_empty()).then_some((stem, count))
        })
        .collect()
}

fn subtree_tags(leaf: &LeafRecord) -> TagStats {
    let mut tags = stemmed_tags(&leaf.tags);
    for child in &leaf.leaves {
        tags.merge(&subtree_tags(child));
    }
    tags
}

fn merge_leaves(leaves: Vec<LeafRecord>) -> Vec<PendingLeaf> {
    let mut merged: Vec<PendingLeaf> = Vec::with_capacity(leaves.len());
    let mut by_stem: HashMap<String, usize> = HashMap::new();
    for leaf in leaves {
        let stem = stem_name(&leaf.name);
        let tags = stemmed_tags(&leaf.tags);
        match by_stem.get(&stem) {
            Some(&pos) => {
                let existing = &mut merged[pos];
                existing.tags.merge(&tags);
                existing.children.extend(leaf.leaves);
            }
            None => {
                by_stem.insert(stem.clone(), merged.len());
                merged.push(PendingLeaf {
                    raw_name: leaf.name,
                    stem,
                    tags,
                    children: leaf.leaves,
                });
            }
        }
    }
    merged
}

// ---------------------------------------------------------------------------
// Corpus filtering

/// Keep saplings reachable from `seed` by root-name matching.
///
/// `hops` counts retrieval rounds: round one keeps saplings rooted at the seed
/// stem, each further round adds saplings rooted at a stem that appears as a
/// leaf of an already retained sapling.
pub fn filter_by_seed(saplings: &[Sapling], seed: &str, hops: usize) -> Vec<Sapling> {
    let seed_stem = stem_name(seed);
    let mut keep = vec![false; saplings.len()];
    let mut frontier: BTreeSet<String> = BTreeSet::from([seed_stem]);
    let mut seen_stems: BTreeSet<String> = BTreeSet::new();

    for _ in 0..hops.max(1) {
        let mut next = BTreeSet::new();
        for (idx, s) in saplings.iter().enumerate() {
            if !keep[idx] && frontier.contains(&s.root.stem) {
                keep[idx] = true;
                for leaf in &s.leaves {
                    next.insert(leaf.stem.clone());
                }
            }
        }
        seen_stems.extend(frontier);
        frontier = next.difference(&seen_stems).cloned().collect();
        if frontier.is_empty() {
            break;
        }
    }

    saplings
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Minimum share of a root stem's users that must contribute a leaf stem
/// under it for that leaf to be kept.
pub const IDIOSYNCRASY_RATIO: f64 = 0.01;

/// Drop leaves whose (root stem, leaf stem) pair is used by fewer than 1% of
/// the users who use the root stem. Saplings left without leaves are dropped
/// and root tags are re-aggregated.
pub fn prune_idiosyncratic_leaves(saplings: &[Sapling]) -> Vec<Sapling> {
    let mut root_users: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut pair_users: HashMap<(&str, &str), BTreeSet<&str>> = HashMap::new();
    for s in saplings {
        root_users
            .entry(s.root.stem.as_str())
            .or_default()
            .insert(s.user.as_str());
        for leaf in &s.leaves {
            pair_users
                .entry((s.root.stem.as_str(), leaf.stem.as_str()))
                .or_default()
                .insert(s.user.as_str());
        }
    }

    let keep_leaf = |root: &str, leaf: &str| {
        let n_r = root_users.get(root).map_or(0, BTreeSet::len);
        let n_l = pair_users.get(&(root, leaf)).map_or(0, BTreeSet::len);
        n_r == 0 || (n_l as f64) / (n_r as f64) >= IDIOSYNCRASY_RATIO
    };

    saplings
        .iter()
        .filter_map(|s| {
            let leaves: Vec<SNode> = s
                .leaves
                .iter()
                .filter(|l| keep_leaf(&s.root.stem, &l.stem))
                .cloned()
                .collect();
            if leaves.is_empty() {
                return None;
            }
            Some(aggregate_tags(Sapling {
                root: s.root.clone(),
                leaves,
                user: s.user.clone(),
            }))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dense corpus view used by learning

/// All nodes of a set of saplings with dense indices and structural links.
///
/// Dense order follows the sapling order (root first, then its leaves), so it
/// agrees with node-id order for parsed corpora; every tie-break uses it.
#[derive(Debug, Clone)]
pub struct Corpus {
    nodes: Vec<SNode>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    index: HashMap<NodeId, usize>,
}

impl Corpus {
    pub fn new(saplings: &[Sapling]) -> Self {
        let total: usize = saplings.iter().map(|s| 1 + s.leaves.len()).sum();
        let mut nodes = Vec::with_capacity(total);
        let mut parent = Vec::with_capacity(total);
        let mut children = Vec::with_capacity(total);
        for s in saplings {
            let root = nodes.len();
            nodes.push(s.root.clone());
            parent.push(None);
            children.push((root + 1..root + 1 + s.leaves.len()).collect());
            for leaf in &s.leaves {
                nodes.push(leaf.clone());
                parent.push(Some(root));
                children.push(Vec::new());
            }
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Corpus {
            nodes,
            parent,
            children,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &SNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[SNode] {
        &self.nodes
    }

    pub fn dense(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].is_leaf()
    }

    /// The root of the sapling containing leaf `i`.
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    /// Leaves of root `i` (empty for leaves).
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// The root of the sapling `i` belongs to (itself for a root).
    pub fn sapling_root(&self, i: usize) -> usize {
        self.parent[i].unwrap_or(i)
    }

    /// Blocks expressed in dense indices.
    pub fn dense_blocks(&self) -> Vec<(String, Vec<usize>)> {
        build_blocks(self.nodes.iter())
            .into_iter()
            .map(|b| {
                let idx = b.nodes.iter().map(|id| self.index[id]).collect();
                (b.stem, idx)
            })
            .collect()
    }
}
