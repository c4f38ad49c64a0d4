//! The learned forest of concept clusters and its serialized forms.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Taxonomy;
use crate::rap::Recovery;
use crate::sapling::{Corpus, NodeId};

/// One concept cluster; also the on-disk record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolkCluster {
    pub cluster_id: usize,
    pub exemplar: NodeId,
    /// Display name: the exemplar's stem.
    pub stem: String,
    /// Ascending node ids, exemplar included.
    pub members: Vec<NodeId>,
    /// Distinct users contributing a member.
    pub users: usize,
    pub parent_cluster_id: Option<usize>,
}

/// Clusters linked broader → narrower. Cluster ids equal positions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Folksonomy {
    pub clusters: Vec<FolkCluster>,
}

impl Folksonomy {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Clusters without a parent, ascending.
    pub fn roots(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .filter(|c| c.parent_cluster_id.is_none())
            .map(|c| c.cluster_id)
            .collect()
    }

    /// Child clusters of every cluster, ascending.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.clusters.len()];
        for c in &self.clusters {
            if let Some(p) = c.parent_cluster_id {
                children[p].push(c.cluster_id);
            }
        }
        children
    }

    /// Checks ids, parent references, and that the parent links form a forest.
    pub fn validate(&self) -> Result<()> {
        for (pos, c) in self.clusters.iter().enumerate() {
            if c.cluster_id != pos {
                return Err(Error::Data(format!("cluster id {} at position {pos}", c.cluster_id)));
            }
            if let Some(p) = c.parent_cluster_id {
                if p >= self.clusters.len() {
                    return Err(Error::Data(format!("cluster {pos} has unknown parent {p}")));
                }
            }
        }
        if !cycle_members(self).is_empty() {
            return Err(Error::Data("cluster parent links contain a cycle".into()));
        }
        Ok(())
    }

    /// Clusters reachable from `root`, breadth first.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let children = self.children();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root]);
        while let Some(c) = queue.pop_front() {
            order.push(c);
            queue.extend(children[c].iter().copied());
        }
        order
    }

    /// The tree under `root` as a stem-labelled taxonomy.
    pub fn tree(&self, root: usize) -> Taxonomy {
        let order = self.subtree(root);
        let mut position = vec![usize::MAX; self.clusters.len()];
        for (pos, &c) in order.iter().enumerate() {
            position[c] = pos;
        }
        let labels = order.iter().map(|&c| self.clusters[c].stem.clone()).collect();
        let parent = order
            .iter()
            .map(|&c| match self.clusters[c].parent_cluster_id {
                Some(p) if c != root => Some(position[p]),
                _ => None,
            })
            .collect();
        Taxonomy::from_parts(labels, parent).expect("subtree of a forest is a tree")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.clusters {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n").map_err(|e| Error::io("<folksonomy>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut clusters = Vec::new();
        for (no, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<folksonomy>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let c: FolkCluster =
                serde_json::from_str(&line).map_err(|e| Error::Data(format!("folksonomy line {}: {e}", no + 1)))?;
            clusters.push(c);
        }
        let folk = Folksonomy { clusters };
        folk.validate()?;
        Ok(folk)
    }

    /// Graphviz rendering: one node per cluster labelled `stem (members)`.
    pub fn to_dot(&self) -> String {
        let mut dot = String::from("digraph folksonomy {\n  node [shape=box];\n");
        for c in &self.clusters {
            let label = format!("{} ({})", c.stem, c.members.len())
                .replace('\\', "\\\\")
                .replace('"', "\\\"");
            let _ = writeln!(dot, "  c{} [label=\"{label}\"];", c.cluster_id);
        }
        for c in &self.clusters {
            if let Some(p) = c.parent_cluster_id {
                let _ = writeln!(dot, "  c{p} -> c{};", c.cluster_id);
            }
        }
        dot.push_str("}\n");
        dot
    }
}

fn distinct_users(corpus: &Corpus, members: &[usize]) -> usize {
    members
        .iter()
        .map(|&m| corpus.node(m).user.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Clusters lying on a parent-link cycle, one list per cycle.
fn cycle_members(folk: &Folksonomy) -> Vec<Vec<usize>> {
    // 0 unseen, 1 on the current walk, 2 finished
    let mut mark = vec![0u8; folk.clusters.len()];
    let mut cycles = Vec::new();
    for start in 0..folk.clusters.len() {
        let mut walk = Vec::new();
        let mut at = Some(start);
        while let Some(c) = at {
            match mark[c] {
                2 => break,
                1 => {
                    let from = walk.iter().position(|&w| w == c).expect("on walk");
                    cycles.push(walk[from..].to_vec());
                    break;
                }
                _ => {
                    mark[c] = 1;
                    walk.push(c);
                    at = folk.clusters[c].parent_cluster_id;
                }
            }
        }
        for w in walk {
            mark[w] = 2;
        }
    }
    cycles
}

/// Removes one edge per cycle: the one into the cycle's cluster with the most
/// users (lower id on ties). Returns the number of edges removed.
fn break_cycles(folk: &mut Folksonomy) -> usize {
    let mut removed = 0;
    loop {
        let cycles = cycle_members(folk);
        if cycles.is_empty() {
            return removed;
        }
        for cycle in cycles {
            let &victim = cycle
                .iter()
                .max_by(|&&a, &&b| folk.clusters[a].users.cmp(&folk.clusters[b].users).then(b.cmp(&a)))
                .expect("non-empty cycle");
            log::warn!(
                "breaking a parent cycle of {} cluster(s) at cluster {victim} ({:?})",
                cycle.len(),
                folk.clusters[victim].stem
            );
            folk.clusters[victim].parent_cluster_id = None;
            removed += 1;
        }
    }
}

/// Renumber clusters by exemplar position in the corpus, remapping parents.
fn renumber(mut clusters: Vec<(usize, FolkCluster)>) -> Folksonomy {
    clusters.sort_by_key(|(dense, _)| *dense);
    let mut new_id = vec![usize::MAX; clusters.len()];
    for (pos, (_, c)) in clusters.iter().enumerate() {
        new_id[c.cluster_id] = pos;
    }
    let clusters = clusters
        .into_iter()
        .enumerate()
        .map(|(pos, (_, mut c))| {
            c.cluster_id = pos;
            c.parent_cluster_id = c.parent_cluster_id.map(|p| new_id[p]);
            c
        })
        .collect();
    Folksonomy { clusters }
}

/// One folksonomy node per recovered cluster, linked to the cluster whose
/// exemplar is its designated parent exemplar. Cycles are broken as in
/// [`break_cycles`] with a warning.
pub fn assemble_tree(recovery: &Recovery, corpus: &Corpus) -> Folksonomy {
    let mut by_exemplar = vec![usize::MAX; corpus.len()];
    for (id, c) in recovery.clusters.iter().enumerate() {
        by_exemplar[c.exemplar] = id;
    }
    let clusters = recovery
        .clusters
        .iter()
        .enumerate()
        .map(|(id, c)| FolkCluster {
            cluster_id: id,
            exemplar: corpus.node(c.exemplar).id,
            stem: corpus.node(c.exemplar).stem.clone(),
            members: c.members.iter().map(|&m| corpus.node(m).id).collect(),
            users: distinct_users(corpus, &c.members),
            parent_cluster_id: c.parent_exemplar.and_then(|p| {
                let target = by_exemplar[p];
                (target != usize::MAX).then_some(target)
            }),
        })
        .collect();
    let mut folk = Folksonomy { clusters };
    break_cycles(&mut folk);
    folk
}

/// Split the leaf out of every cluster that holds exactly one leaf and between
/// one and `min_roots - 1` roots. The leaf becomes a top-level singleton and
/// the remaining roots lose their parent, which only the leaf supplied.
pub fn split_sparse_leaf_clusters(folk: &Folksonomy, corpus: &Corpus, min_roots: usize) -> Result<Folksonomy> {
    let dense = |id: NodeId| {
        corpus
            .dense(id)
            .ok_or_else(|| Error::Data(format!("cluster member {id} is not in the corpus")))
    };
    let mut out: Vec<(usize, FolkCluster)> = Vec::with_capacity(folk.len());
    let mut next_id = folk.len();
    for c in &folk.clusters {
        let members: Vec<usize> = c.members.iter().map(|&m| dense(m)).collect::<Result<_>>()?;
        let leaves: Vec<usize> = members.iter().copied().filter(|&m| corpus.is_leaf(m)).collect();
        let roots: Vec<usize> = members.iter().copied().filter(|&m| !corpus.is_leaf(m)).collect();
        if leaves.len() != 1 || roots.is_empty() || roots.len() >= min_roots {
            out.push((dense(c.exemplar)?, c.clone()));
            continue;
        }
        let leaf = leaves[0];
        let exemplar = if dense(c.exemplar)? == leaf {
            roots[0]
        } else {
            dense(c.exemplar)?
        };
        out.push((
            exemplar,
            FolkCluster {
                exemplar: corpus.node(exemplar).id,
                stem: corpus.node(exemplar).stem.clone(),
                members: roots.iter().map(|&r| corpus.node(r).id).collect(),
                users: distinct_users(corpus, &roots),
                parent_cluster_id: None,
                ..c.clone()
            },
        ));
        out.push((
            leaf,
            FolkCluster {
                cluster_id: next_id,
                exemplar: corpus.node(leaf).id,
                stem: corpus.node(leaf).stem.clone(),
                members: vec![corpus.node(leaf).id],
                users: 1,
                parent_cluster_id: None,
            },
        ));
        next_id += 1;
    }
    Ok(renumber(out))
}

/// Root cluster of the most popular tree: most members at the root, then most
/// clusters in the tree, then lower exemplar id.
pub fn popular_root(folk: &Folksonomy) -> Result<usize> {
    folk.roots()
        .into_iter()
        .map(|r| {
            let c = &folk.clusters[r];
            (c.members.len(), folk.subtree(r).len(), std::cmp::Reverse(c.exemplar), r)
        })
        .max()
        .map(|(.., r)| r)
        .ok_or(Error::EmptyForest)
}

/// The most popular tree of the forest (see [`popular_root`]).
pub fn pick_popular_tree(folk: &Folksonomy) -> Result<Taxonomy> {
    popular_root(folk).map(|r| folk.tree(r))
}
