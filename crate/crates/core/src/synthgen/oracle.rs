//! Exhaustive search for the best clustering of a tiny blocked instance, with
//! or without the single-parent constraint. Used to check the message-passing
//! solvers against ground truth.

use crate::error::{Error, Result};
use crate::rap::satisfies_single_parent;
use crate::simfn::SimilarityMatrix;

/// Largest instance the oracle accepts.
pub const ORACLE_MAX_NODES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Co-clustered leaves must have co-clustered parents.
    SingleParent,
}

/// Nodes `0..n` with parent links, partitioned into blocks with their
/// similarity matrices.
#[derive(Debug, Clone)]
pub struct Instance {
    pub parent: Vec<Option<usize>>,
    pub blocks: Vec<(Vec<usize>, SimilarityMatrix)>,
    /// Nodes that must be exemplars.
    pub forced: Vec<usize>,
}

impl Instance {
    pub fn new(parent: Vec<Option<usize>>, blocks: Vec<(Vec<usize>, SimilarityMatrix)>) -> Self {
        Instance {
            parent,
            blocks,
            forced: Vec::new(),
        }
    }

    /// One block of roots.
    pub fn single_block(s: SimilarityMatrix) -> Self {
        let n = s.len();
        Instance::new(vec![None; n], vec![((0..n).collect(), s)])
    }

    pub fn with_forced(mut self, forced: Vec<usize>) -> Self {
        self.forced = forced;
        self
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// (block, local index) of every node.
    fn locate(&self) -> Result<Vec<(usize, usize)>> {
        let mut at = vec![None; self.len()];
        for (b, (nodes, s)) in self.blocks.iter().enumerate() {
            if nodes.is_empty() || nodes.len() != s.len() {
                return Err(Error::Data(
                    "empty block or block size not matching its similarity matrix".into(),
                ));
            }
            for (l, &g) in nodes.iter().enumerate() {
                match at.get_mut(g) {
                    Some(slot @ None) => *slot = Some((b, l)),
                    _ => return Err(Error::Data(format!("node {g} missing or in two blocks"))),
                }
            }
        }
        at.into_iter()
            .enumerate()
            .map(|(g, x)| x.ok_or_else(|| Error::Data(format!("node {g} belongs to no block"))))
            .collect()
    }

    fn sim(&self, at: &[(usize, usize)], i: usize, j: usize) -> f64 {
        let (b, li) = at[i];
        self.blocks[b].1.get(li, at[j].1)
    }

    /// Objective of a full configuration, or `None` when it breaks the
    /// one-exemplar-per-node, exemplar-picks-itself or block rules.
    pub fn objective(&self, exemplar_of: &[usize]) -> Option<f64> {
        let at = self.locate().ok()?;
        if exemplar_of.len() != self.len() {
            return None;
        }
        let mut total = 0.0;
        for (i, &e) in exemplar_of.iter().enumerate() {
            if e >= self.len() || exemplar_of[e] != e || at[e].0 != at[i].0 {
                return None;
            }
            total += self.sim(&at, i, e);
        }
        Some(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub exemplar_of: Vec<usize>,
    pub objective: f64,
}

struct Search<'a> {
    inst: &'a Instance,
    /// Non-exemplar nodes in search order: roots first.
    order: Vec<usize>,
    /// Candidate exemplars per node, best first.
    options: Vec<Vec<(f64, usize)>>,
    /// Best-case value of order[k..].
    suffix_bound: Vec<f64>,
    assign: Vec<usize>,
    /// Required parent label per exemplar (leaf clusters only).
    required: Vec<Option<usize>>,
    best: Option<Solution>,
}

impl Search<'_> {
    fn dfs(&mut self, k: usize, value: f64) {
        if let Some(best) = &self.best {
            if value + self.suffix_bound[k] <= best.objective {
                return;
            }
        }
        if k == self.order.len() {
            self.best = Some(Solution {
                exemplar_of: self.assign.clone(),
                objective: value,
            });
            return;
        }
        let i = self.order[k];
        if k > 0 && self.inst.parent[self.order[k - 1]].is_none() && self.inst.parent[i].is_some() {
            // all roots are placed: leaf exemplars now fix their clusters' parent label
            self.seed_leaf_exemplars();
        }
        let parent_label = self.inst.parent[i].map(|p| self.assign[p]);
        for o in 0..self.options[i].len() {
            let (score, e) = self.options[i][o];
            let previous = self.required[e];
            if let Some(label) = parent_label {
                match previous {
                    Some(req) if req != label => continue,
                    _ => self.required[e] = Some(label),
                }
            }
            self.assign[i] = e;
            self.dfs(k + 1, value + score);
            self.required[e] = previous;
        }
    }

    /// A leaf exemplar's cluster must sit under its own parent's cluster.
    fn seed_leaf_exemplars(&mut self) {
        for e in 0..self.inst.len() {
            if self.assign[e] == e {
                if let Some(p) = self.inst.parent[e] {
                    self.required[e] = Some(self.assign[p]);
                }
            }
        }
    }
}

fn subsets_with(nodes: &[usize], forced: &[usize]) -> Vec<Vec<usize>> {
    let n = nodes.len();
    (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| nodes[b])
                .collect::<Vec<_>>()
        })
        .filter(|set| forced.iter().all(|f| !nodes.contains(f) || set.contains(f)))
        .collect()
}

/// Best configuration by exhaustive enumeration of exemplar sets and, per
/// set, assignments. Ties keep the first configuration found: exemplar sets
/// in increasing bitmask order, assignments by descending similarity.
pub fn oracle_exhaustive(inst: &Instance, constraint: Constraint) -> Result<Solution> {
    if inst.len() > ORACLE_MAX_NODES {
        return Err(Error::OracleTooLarge {
            nodes: inst.len(),
            limit: ORACLE_MAX_NODES,
        });
    }
    let at = inst.locate()?;
    let per_block: Vec<Vec<Vec<usize>>> = inst
        .blocks
        .iter()
        .map(|(nodes, _)| subsets_with(nodes, &inst.forced))
        .collect();
    let mut best: Option<Solution> = None;
    let mut choice = vec![0usize; per_block.len()];
    loop {
        let exemplars: Vec<usize> = choice
            .iter()
            .enumerate()
            .flat_map(|(b, &c)| per_block[b][c].iter().copied())
            .collect();
        if let Some(sol) = best_for_exemplars(inst, &at, &exemplars, constraint) {
            if best.as_ref().is_none_or(|b| sol.objective > b.objective) {
                best = Some(sol);
            }
        }
        // odometer over the blocks' subset lists
        let mut b = 0;
        loop {
            if b == choice.len() {
                let best = best.ok_or_else(|| Error::Data("no feasible configuration".into()))?;
                debug_assert!(
                    constraint == Constraint::None || satisfies_single_parent(&inst.parent, &best.exemplar_of)
                );
                return Ok(best);
            }
            choice[b] += 1;
            if choice[b] < per_block[b].len() {
                break;
            }
            choice[b] = 0;
            b += 1;
        }
    }
}

fn best_for_exemplars(
    inst: &Instance,
    at: &[(usize, usize)],
    exemplars: &[usize],
    constraint: Constraint,
) -> Option<Solution> {
    let n = inst.len();
    let mut is_exemplar = vec![false; n];
    for &e in exemplars {
        is_exemplar[e] = true;
    }
    let mut options: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    let mut assign: Vec<usize> = (0..n).collect();
    let mut base = 0.0;
    for i in 0..n {
        if is_exemplar[i] {
            base += inst.sim(at, i, i);
            continue;
        }
        let mut opts: Vec<(f64, usize)> = exemplars
            .iter()
            .filter(|&&e| at[e].0 == at[i].0)
            .map(|&e| (inst.sim(at, i, e), e))
            .collect();
        opts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        assign[i] = opts[0].1;
        options[i] = opts;
    }
    if constraint == Constraint::None {
        let total = base
            + (0..n)
                .filter(|&i| !is_exemplar[i])
                .map(|i| options[i][0].0)
                .sum::<f64>();
        return Some(Solution {
            exemplar_of: assign,
            objective: total,
        });
    }
    let mut order: Vec<usize> = (0..n)
        .filter(|&i| !is_exemplar[i] && inst.parent[i].is_none())
        .collect();
    let roots_placed = order.len();
    order.extend((0..n).filter(|&i| !is_exemplar[i] && inst.parent[i].is_some()));
    let mut suffix_bound = vec![0.0; order.len() + 1];
    for k in (0..order.len()).rev() {
        suffix_bound[k] = suffix_bound[k + 1] + options[order[k]][0].0;
    }
    let mut search = Search {
        inst,
        order,
        options,
        suffix_bound,
        assign,
        required: vec![None; n],
        best: None,
    };
    if roots_placed == 0 {
        // no roots to place: leaf exemplars are constrained from the start
        search.seed_leaf_exemplars();
    }
    search.dfs(0, 0.0);
    let mut sol = search.best?;
    if !satisfies_single_parent(&inst.parent, &sol.exemplar_of) {
        return None;
    }
    sol.objective += base;
    Some(sol)
}
