//! Relational affinity propagation: affinity propagation plus a single-parent
//! factor per column that keeps co-clustered leaves under one parent cluster.
//!
//! Blocks are clustered independently except for the parent labels the
//! constraint reads. Those come from a snapshot of every node's tentative
//! exemplar, rebuilt between rounds, so a round is a barrier-separated set of
//! independent per-block updates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appc::{self, ApConfig, Clustering, MessageState, StabilityTracker};
use crate::error::{Error, Result};
use crate::simfn::{SimilarityContext, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Plain affinity propagation, no structural constraint.
    Ap,
    /// Affinity propagation with the single-parent constraint.
    Rap,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Ap, Algorithm::Rap];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ap => "ap",
            Algorithm::Rap => "rap",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(Algorithm::Ap),
            "rap" => Ok(Algorithm::Rap),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RapConfig {
    pub ap: ApConfig,
    pub algorithm: Algorithm,
    /// Clusters with one leaf and fewer roots than this get the leaf split off.
    pub min_roots: usize,
    /// Multiplier on the finite stand-in for a forbidden configuration.
    pub neg_cap_scale: f64,
}

impl Default for RapConfig {
    fn default() -> Self {
        RapConfig {
            ap: ApConfig::default(),
            algorithm: Algorithm::Rap,
            min_roots: 3,
            neg_cap_scale: 1.0,
        }
    }
}

impl RapConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        RapConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ap.validate()?;
        if !(self.neg_cap_scale.is_finite() && self.neg_cap_scale >= 1.0) {
            return Err(Error::Config(format!(
                "neg_cap_scale {} must be >= 1",
                self.neg_cap_scale
            )));
        }
        Ok(())
    }
}

/// Finite stand-in for −∞: far below anything a sum of similarities can reach.
pub fn neg_cap(max_similarity: f64, scale: f64) -> f64 {
    -1e6 * (1.0 + max_similarity.max(0.0)) * scale
}

/// Leaf rows of one block grouped by the snapshot label of their parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentGroups {
    /// Compact group index per local row; `None` for roots.
    pub group_of: Vec<Option<usize>>,
    /// Parent label of every group, ascending.
    pub labels: Vec<usize>,
}

impl ParentGroups {
    /// `parents[i]` is the global parent of local row `i`; `snapshot` maps global
    /// nodes to their current exemplar label.
    pub fn build(parents: &[Option<usize>], snapshot: &[usize]) -> Self {
        let mut labels: Vec<usize> = parents.iter().flatten().map(|&p| snapshot[p]).collect();
        labels.sort_unstable();
        labels.dedup();
        let group_of = parents
            .iter()
            .map(|p| p.map(|p| labels.binary_search(&snapshot[p]).expect("label collected above")))
            .collect();
        ParentGroups { group_of, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One round in the order η → σ → τ → ρ → α → β.
///
/// With `enforce` off, τ is held at zero and the round reproduces
/// [`appc::ap_round`] exactly.
pub fn rap_round(
    state: &mut MessageState,
    s: &SimilarityMatrix,
    groups: &ParentGroups,
    lambda: f64,
    cap: f64,
    enforce: bool,
) {
    let n = state.n;
    debug_assert_eq!(n, s.len());
    debug_assert_eq!(n, groups.group_of.len());
    let saturation = if enforce { cap.abs() / 2.0 } else { f64::INFINITY };

    appc::update_eta(state, lambda, saturation);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            state.sigma[k] = s.message_score(i, j) + state.alpha[k] + state.eta[k];
        }
    }
    if enforce {
        update_tau(state, groups, lambda, cap, saturation);
    } else {
        state.tau.iter_mut().for_each(|t| *t = 0.0);
    }
    appc::update_rho_alpha_beta(state, s, lambda, saturation);
    state.iteration += 1;
}

fn update_tau(state: &mut MessageState, groups: &ParentGroups, lambda: f64, cap: f64, saturation: f64) {
    let n = state.n;
    let mut totals = vec![0.0f64; groups.len()];
    for j in 0..n {
        totals.iter_mut().for_each(|t| *t = 0.0);
        for i in 0..n {
            if let Some(g) = groups.group_of[i] {
                totals[g] += state.sigma[i * n + j].max(0.0);
            }
        }
        // best and runner-up group totals, for "best group other than mine"
        let (mut best, mut best_group, mut second) = (0.0f64, usize::MAX, 0.0f64);
        for (g, &t) in totals.iter().enumerate() {
            if t > best {
                second = best;
                best = t;
                best_group = g;
            } else if t > second {
                second = t;
            }
        }
        let column_group = groups.group_of[j];
        for i in 0..n {
            let k = i * n + j;
            let computed = match groups.group_of[i] {
                None => 0.0,
                Some(g) => {
                    let without_i = (totals[g] - state.sigma[k].max(0.0)).max(0.0);
                    match column_group {
                        _ if i == j => without_i,
                        // a leaf column is bound to its own parent group, so
                        // no other group can compete for it
                        Some(cg) if cg != g => cap,
                        Some(_) => 0.0,
                        None => {
                            let elsewhere = if best_group == g { second } else { best };
                            without_i - without_i.max(elsewhere)
                        }
                    }
                }
            };
            state.tau[k] = appc::damp(state.tau[k], computed, lambda, saturation);
        }
    }
}

/// One block of the blocked problem: its nodes (global indices) and similarities.
#[derive(Debug, Clone)]
pub struct BlockInput {
    pub nodes: Vec<usize>,
    pub sim: SimilarityMatrix,
}

/// Final state of one block.
#[derive(Debug, Clone)]
pub struct BlockOutcome {
    pub nodes: Vec<usize>,
    pub sim: SimilarityMatrix,
    pub state: MessageState,
    pub clustering: Clustering,
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub blocks: Vec<BlockOutcome>,
    /// Global exemplar label of every node after the last round.
    pub labels: Vec<usize>,
    pub rounds: usize,
    pub converged: bool,
    pub neg_cap: f64,
}

impl EngineOutput {
    pub fn unconverged_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| !b.clustering.converged).count()
    }
}

struct BlockRun {
    nodes: Vec<usize>,
    parents: Vec<Option<usize>>,
    sim: SimilarityMatrix,
    state: MessageState,
    tracker: StabilityTracker,
    stable: usize,
    clustering: Clustering,
}

impl BlockRun {
    fn new(input: BlockInput, parent: &[Option<usize>]) -> Self {
        let n = input.nodes.len();
        let parents = input.nodes.iter().map(|&g| parent[g]).collect();
        BlockRun {
            state: appc::init_messages(n),
            clustering: Clustering {
                exemplars: (0..n).collect(),
                assign: (0..n).collect(),
                net_similarity: 0.0,
                converged: false,
                iterations: 0,
            },
            nodes: input.nodes,
            parents,
            sim: input.sim,
            tracker: StabilityTracker::default(),
            stable: 0,
        }
    }

    fn step(&mut self, snapshot: &[usize], cfg: &RapConfig, cap: f64) {
        let n = self.nodes.len();
        if n <= 1 {
            // nothing to decide; count rounds so the block reports like the rest
            self.state.iteration += 1;
            self.clustering = appc::recover_map(&self.state, &self.sim);
            self.stable = usize::MAX;
            return;
        }
        let enforce = cfg.algorithm == Algorithm::Rap;
        if enforce {
            let groups = ParentGroups::build(&self.parents, snapshot);
            rap_round(&mut self.state, &self.sim, &groups, cfg.ap.damping, cap, true);
            self.clustering = appc::recover_with(&self.state, &self.sim, Some(cap / 2.0));
        } else {
            appc::ap_round(&mut self.state, &self.sim, cfg.ap.damping);
            self.clustering = appc::recover_map(&self.state, &self.sim);
        }
        self.stable = self.tracker.observe(&self.state, &self.sim, &self.clustering.exemplars);
    }
}

/// Global exemplar label per node from every block's current clustering.
/// Nodes outside all blocks label themselves.
pub fn tentative_labels(n_nodes: usize, blocks: &[(&[usize], &Clustering)]) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n_nodes).collect();
    for (nodes, clustering) in blocks {
        for (i, &e) in clustering.assign.iter().enumerate() {
            labels[nodes[i]] = nodes[e];
        }
    }
    labels
}

fn max_similarity<'a>(sims: impl Iterator<Item = &'a SimilarityMatrix>) -> f64 {
    sims.map(SimilarityMatrix::max_score).fold(0.0, f64::max)
}

/// Run all blocks round-synchronously until every block's exemplar set has
/// been stable for the convergence window, or `max_iter` rounds.
///
/// `parent[g]` is the parent of global node `g` (`None` for roots). With
/// `resim`, block similarities are rebuilt from each round's label snapshot
/// (the class-hybrid scheme).
pub fn run_engine(
    parent: &[Option<usize>],
    blocks: Vec<BlockInput>,
    cfg: &RapConfig,
    resim: Option<&SimilarityContext<'_>>,
) -> Result<EngineOutput> {
    cfg.validate()?;
    let n_nodes = parent.len();
    for b in &blocks {
        if b.nodes.len() != b.sim.len() {
            return Err(Error::Data("block size does not match its similarity matrix".into()));
        }
        if let Some(&bad) = b.nodes.iter().find(|&&g| g >= n_nodes) {
            return Err(Error::Data(format!("block node {bad} outside the corpus")));
        }
    }
    let mut runs: Vec<BlockRun> = blocks.into_iter().map(|b| BlockRun::new(b, parent)).collect();
    let mut labels: Vec<usize> = (0..n_nodes).collect();
    let mut cap = neg_cap(max_similarity(runs.iter().map(|r| &r.sim)), cfg.neg_cap_scale);
    let mut rounds = 0;
    let converged = loop {
        rounds += 1;
        if let Some(ctx) = resim {
            let snapshot = &labels;
            runs.par_iter_mut().try_for_each(|r| -> Result<()> {
                r.sim = ctx.build_similarity(&r.nodes, Some(snapshot))?;
                Ok(())
            })?;
            cap = neg_cap(max_similarity(runs.iter().map(|r| &r.sim)), cfg.neg_cap_scale);
        }
        let snapshot = &labels;
        runs.par_iter_mut().for_each(|r| r.step(snapshot, cfg, cap));
        let views: Vec<(&[usize], &Clustering)> = runs.iter().map(|r| (r.nodes.as_slice(), &r.clustering)).collect();
        labels = tentative_labels(n_nodes, &views);
        if runs.iter().all(|r| r.stable >= cfg.ap.converge_window) {
            break true;
        }
        if rounds >= cfg.ap.max_iter {
            break false;
        }
    };
    if !converged {
        let stuck = runs.iter().filter(|r| r.stable < cfg.ap.converge_window).count();
        log::warn!("{stuck} block(s) did not converge within {} rounds", cfg.ap.max_iter);
    }
    let blocks = runs
        .into_iter()
        .map(|r| {
            let mut clustering = r.clustering;
            clustering.converged = r.stable >= cfg.ap.converge_window;
            BlockOutcome {
                nodes: r.nodes,
                sim: r.sim,
                state: r.state,
                clustering,
            }
        })
        .collect();
    Ok(EngineOutput {
        blocks,
        labels,
        rounds,
        converged,
        neg_cap: cap,
    })
}

/// [`run_engine`] with the single-parent constraint enforced.
pub fn run_rap(
    parent: &[Option<usize>],
    blocks: Vec<BlockInput>,
    cfg: &RapConfig,
    resim: Option<&SimilarityContext<'_>>,
) -> Result<EngineOutput> {
    let cfg = RapConfig {
        algorithm: Algorithm::Rap,
        ..cfg.clone()
    };
    run_engine(parent, blocks, &cfg, resim)
}

/// A cluster after recovery, in global node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredCluster {
    pub exemplar: usize,
    /// Ascending; includes the exemplar.
    pub members: Vec<usize>,
    /// Exemplar label of the cluster's parent cluster, if it has one.
    pub parent_exemplar: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Ordered by exemplar.
    pub clusters: Vec<RecoveredCluster>,
    /// Final exemplar of every node, split members pointing at themselves.
    pub exemplar_of: Vec<usize>,
    /// Leaves that disagreed with their cluster's parent before splitting.
    pub conflicts_pre_split: usize,
    /// Objective value (similarities plus preferences) after splitting.
    pub net_similarity: f64,
}

/// Designate each cluster's parent and split off every leaf whose parent sits
/// in a different cluster, as its own singleton. Split leaves are not
/// re-assigned elsewhere.
///
/// A cluster's parent is the exemplar's parent's cluster when the exemplar is
/// a leaf; otherwise the parent cluster of its most similar leaf member (lower
/// index on ties); clusters of roots only have none.
pub fn recover_map_rap(out: &EngineOutput, parent: &[Option<usize>]) -> Recovery {
    let labels = &out.labels;
    let mut clusters = Vec::new();
    let mut exemplar_of = labels.clone();
    let mut conflicts = 0;
    let mut net = 0.0;
    for block in &out.blocks {
        let local_of: BTreeMap<usize, usize> = block.nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        for (e_local, members_local) in block.clustering.clusters() {
            let exemplar = block.nodes[e_local];
            let members: Vec<usize> = members_local.iter().map(|&m| block.nodes[m]).collect();
            let parent_exemplar = match parent[exemplar] {
                Some(p) => Some(labels[p]),
                None => {
                    let mut best: Option<(f64, usize)> = None;
                    for &m in &members_local {
                        let g = block.nodes[m];
                        if parent[g].is_none() {
                            continue;
                        }
                        let score = block.sim.get(m, e_local);
                        let better = match best {
                            None => true,
                            Some((s, at)) => score > s || (score == s && g < at),
                        };
                        if better {
                            best = Some((score, g));
                        }
                    }
                    best.map(|(_, g)| labels[parent[g].expect("leaf member")])
                }
            };
            let mut kept = Vec::with_capacity(members.len());
            for &g in &members {
                match parent[g] {
                    Some(p) if Some(labels[p]) != parent_exemplar => {
                        conflicts += 1;
                        exemplar_of[g] = g;
                        net += block.sim.get(local_of[&g], local_of[&g]);
                        clusters.push(RecoveredCluster {
                            exemplar: g,
                            members: vec![g],
                            parent_exemplar: Some(labels[p]),
                        });
                    }
                    _ => {
                        net += block.sim.get(local_of[&g], e_local);
                        kept.push(g);
                    }
                }
            }
            kept.sort_unstable();
            clusters.push(RecoveredCluster {
                exemplar,
                members: kept,
                parent_exemplar,
            });
        }
    }
    clusters.sort_by_key(|c| c.exemplar);
    Recovery {
        clusters,
        exemplar_of,
        conflicts_pre_split: conflicts,
        net_similarity: net,
    }
}

/// Leaves that would be split off by [`recover_map_rap`].
pub fn count_conflicts_pre_split(out: &EngineOutput, parent: &[Option<usize>]) -> usize {
    recover_map_rap(out, parent).conflicts_pre_split
}

/// True when every pair of co-clustered leaves has co-clustered parents.
pub fn satisfies_single_parent(parent: &[Option<usize>], exemplar_of: &[usize]) -> bool {
    let mut parent_label: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            let want = exemplar_of[*p];
            if *parent_label.entry(exemplar_of[i]).or_insert(want) != want {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::oracle::{oracle_exhaustive, Constraint, Instance};
    use proptest::prelude::*;

    fn block(nodes: Vec<usize>, pref: f64, f: impl Fn(usize, usize) -> f64) -> BlockInput {
        let n = nodes.len();
        BlockInput {
            nodes,
            sim: SimilarityMatrix::from_fn(n, pref, f),
        }
    }

    #[test]
    fn parent_groups_partition_leaves() {
        let parents = [Some(0), None, Some(5), Some(3)];
        let snapshot = [0, 1, 2, 7, 4, 7];
        let g = ParentGroups::build(&parents, &snapshot);
        assert_eq!(g.labels, vec![0, 7]);
        assert_eq!(g.group_of, vec![Some(0), None, Some(1), Some(1)]);
    }

    fn two_leaf_state(sigma_kj: f64) -> (MessageState, SimilarityMatrix, ParentGroups) {
        // leaves j=0 and k=1, same parent group; column 0
        let s = SimilarityMatrix::from_fn(2, 0.0, |_, _| 0.0);
        let mut st = appc::init_messages(2);
        // σ_kj = S + α + η; put the whole value into α with η from β = 0
        let k = st.idx(1, 0);
        st.alpha[k] = sigma_kj;
        let groups = ParentGroups {
            group_of: vec![Some(0), Some(0)],
            labels: vec![9],
        };
        (st, s, groups)
    }

    #[test]
    fn tau_diagonal_positive_part() {
        for (sigma, expected) in [(0.4, 0.4), (-0.4, 0.0)] {
            let (mut st, s, groups) = two_leaf_state(sigma);
            // no damping, so τ is the computed value
            rap_round(&mut st, &s, &groups, 0.0, -1e6, true);
            // σ carries the tie-break tilt of the local factor, ~1e-9
            assert!((st.sigma[st.idx(1, 0)] - sigma).abs() < 1e-8);
            assert!((st.tau[st.idx(0, 0)] - expected).abs() < 1e-8);
            assert!(st.tau[st.idx(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn tau_forbids_cross_parent_leaves() {
        let s = SimilarityMatrix::from_fn(2, 0.5, |_, _| 0.9);
        let mut st = appc::init_messages(2);
        let groups = ParentGroups {
            group_of: vec![Some(0), Some(1)],
            labels: vec![3, 4],
        };
        rap_round(&mut st, &s, &groups, 0.5, -1e6, true);
        assert_eq!(st.tau[st.idx(0, 1)], -1e6);
        assert_eq!(st.tau[st.idx(1, 0)], -1e6);
        // the two leaves never end up together
        let parent = vec![Some(2), Some(3), None, None];
        let out = run_rap(
            &parent,
            vec![
                block(vec![0, 1], 0.5, |_, _| 0.9),
                block(vec![2], 0.0, |_, _| 0.0),
                block(vec![3], 0.0, |_, _| 0.0),
            ],
            &RapConfig::default(),
            None,
        )
        .unwrap();
        assert_ne!(out.labels[0], out.labels[1]);
    }

    #[test]
    fn root_rows_get_no_tau() {
        let s = SimilarityMatrix::from_fn(3, 0.2, |i, j| 0.3 * (i + j) as f64);
        let mut st = appc::init_messages(3);
        let groups = ParentGroups {
            group_of: vec![None, Some(0), Some(1)],
            labels: vec![5, 6],
        };
        for _ in 0..5 {
            rap_round(&mut st, &s, &groups, 0.5, -1e6, true);
        }
        for j in 0..3 {
            assert_eq!(st.tau[st.idx(0, j)], 0.0);
        }
        // root diagonal of column 0 has no leaf-row constraint either
        assert_eq!(st.tau[st.idx(0, 0)], 0.0);
    }

    #[test]
    fn reduction_without_constraint() {
        let s = SimilarityMatrix::from_fn(4, 0.3, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0);
        let groups = ParentGroups {
            group_of: vec![Some(0), Some(1), None, Some(0)],
            labels: vec![1, 2],
        };
        let mut a = appc::init_messages(4);
        let mut b = appc::init_messages(4);
        for _ in 0..20 {
            appc::ap_round(&mut a, &s, 0.5);
            rap_round(&mut b, &s, &groups, 0.5, -1e6, false);
        }
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.eta, b.eta);
    }

    /// Two roots of one stem (0, 3), each with a leaf "x" (1, 4) and a leaf
    /// "y" (2, 5); every same-stem pair is similar.
    fn identical_pair() -> (Vec<Option<usize>>, Vec<BlockInput>) {
        let parent = vec![None, Some(0), Some(0), None, Some(3), Some(3)];
        let blocks = vec![
            block(vec![0, 3], 0.5, |_, _| 1.0),
            block(vec![1, 4], 0.5, |_, _| 1.0),
            block(vec![2, 5], 0.5, |_, _| 1.0),
        ];
        (parent, blocks)
    }

    #[test]
    fn identical_saplings_merge_by_position() {
        let (parent, blocks) = identical_pair();
        let inst = Instance::new(
            parent.clone(),
            blocks.iter().map(|b| (b.nodes.clone(), b.sim.clone())).collect(),
        );
        let best = oracle_exhaustive(&inst, Constraint::SingleParent).unwrap();
        assert_eq!(best.exemplar_of, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(best.objective, 4.5);

        let out = run_rap(&parent, blocks, &RapConfig::default(), None).unwrap();
        assert!(out.converged);
        let rec = recover_map_rap(&out, &parent);
        assert_eq!(rec.exemplar_of, best.exemplar_of);
        assert_eq!(rec.net_similarity, 4.5);
        assert_eq!(rec.conflicts_pre_split, 0);
    }

    #[test]
    fn single_sapling_is_all_singletons() {
        let parent = vec![None, Some(0), Some(0)];
        let blocks = (0..3).map(|g| block(vec![g], 0.0, |_, _| 0.0)).collect();
        let out = run_rap(&parent, blocks, &RapConfig::default(), None).unwrap();
        let rec = recover_map_rap(&out, &parent);
        assert_eq!(rec.exemplar_of, vec![0, 1, 2]);
        assert_eq!(rec.clusters[1].parent_exemplar, Some(0));
        assert_eq!(rec.clusters[0].parent_exemplar, None);
    }

    /// Root exemplar R (0) with leaf members x (1, parent P=3) and y (2,
    /// parent Q=4); x is the more similar.
    fn root_cluster_output() -> (Vec<Option<usize>>, EngineOutput) {
        let parent = vec![None, Some(3), Some(4), None, None];
        let sim = SimilarityMatrix::from_fn(3, 0.5, |i, j| match (i, j) {
            (1, 0) => 0.9,
            (2, 0) => 0.7,
            _ => 0.1,
        });
        let clustering = Clustering {
            exemplars: vec![0],
            assign: vec![0, 0, 0],
            net_similarity: 2.1,
            converged: true,
            iterations: 1,
        };
        let trivial = |g: usize| BlockOutcome {
            nodes: vec![g],
            sim: SimilarityMatrix::from_fn(1, 0.0, |_, _| 0.0),
            state: appc::init_messages(1),
            clustering: Clustering {
                exemplars: vec![0],
                assign: vec![0],
                net_similarity: 0.0,
                converged: true,
                iterations: 1,
            },
        };
        let out = EngineOutput {
            blocks: vec![
                BlockOutcome {
                    nodes: vec![0, 1, 2],
                    sim,
                    state: appc::init_messages(3),
                    clustering,
                },
                trivial(3),
                trivial(4),
            ],
            labels: vec![0, 0, 0, 3, 4],
            rounds: 1,
            converged: true,
            neg_cap: -2e6,
        };
        (parent, out)
    }

    #[test]
    fn split_step_trace() {
        let (parent, out) = root_cluster_output();
        let rec = recover_map_rap(&out, &parent);
        assert_eq!(rec.conflicts_pre_split, 1);
        assert_eq!(count_conflicts_pre_split(&out, &parent), 1);
        assert_eq!(
            rec.clusters[0],
            RecoveredCluster {
                exemplar: 0,
                members: vec![0, 1],
                parent_exemplar: Some(3)
            }
        );
        assert_eq!(
            rec.clusters[1],
            RecoveredCluster {
                exemplar: 2,
                members: vec![2],
                parent_exemplar: Some(4)
            }
        );
        assert!(satisfies_single_parent(&parent, &rec.exemplar_of));
        assert!(!satisfies_single_parent(&parent, &out.labels));
        assert!((rec.net_similarity - (0.5 + 0.9 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn no_conflicts_cases() {
        let (parent, mut out) = root_cluster_output();
        // both leaves under the same parent cluster
        out.labels[4] = 3;
        out.labels = vec![0, 0, 0, 3, 3];
        assert_eq!(count_conflicts_pre_split(&out, &parent), 0);
        // roots only
        let parent = vec![None, None];
        let out = run_rap(
            &parent,
            vec![block(vec![0, 1], 0.1, |_, _| 0.9)],
            &RapConfig::default(),
            None,
        )
        .unwrap();
        let rec = recover_map_rap(&out, &parent);
        assert_eq!(rec.clusters.len(), 1);
        assert_eq!(rec.clusters[0].parent_exemplar, None);
        assert_eq!(rec.conflicts_pre_split, 0);
    }

    #[test]
    fn tentative_labels_identity_and_cover() {
        let c = Clustering {
            exemplars: vec![1],
            assign: vec![1, 1],
            net_similarity: 0.0,
            converged: true,
            iterations: 1,
        };
        let nodes = [4usize, 2];
        let labels = tentative_labels(5, &[(&nodes, &c)]);
        assert_eq!(labels, vec![0, 1, 2, 3, 2]);
        assert_eq!(tentative_labels(3, &[]), vec![0, 1, 2]);
    }

    #[test]
    fn algorithm_parse() {
        assert_eq!("rap".parse::<Algorithm>().unwrap(), Algorithm::Rap);
        assert!("sap".parse::<Algorithm>().is_err());
    }

    /// Random two-sapling instance: roots 0 and r, leaves drawn from a small
    /// stem pool, random in-block similarities.
    fn arb_instance() -> impl Strategy<Value = (Vec<Option<usize>>, Vec<BlockInput>)> {
        (
            prop::collection::vec(0usize..3, 1..4),
            prop::collection::vec(0usize..3, 1..4),
            prop::collection::vec(0.0f64..1.0, 64),
            0.0f64..1.0,
        )
            .prop_map(|(a, b, values, pref)| {
                let mut parent = vec![None];
                let mut stems = vec![100usize];
                for &s in &a {
                    parent.push(Some(0));
                    stems.push(s);
                }
                let r = parent.len();
                parent.push(None);
                stems.push(100);
                for &s in &b {
                    parent.push(Some(r));
                    stems.push(s);
                }
                let mut by_stem: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (g, &s) in stems.iter().enumerate() {
                    by_stem.entry(s).or_default().push(g);
                }
                let mut it = values.into_iter().cycle();
                let blocks = by_stem
                    .into_values()
                    .map(|nodes| {
                        let n = nodes.len();
                        BlockInput {
                            nodes,
                            sim: SimilarityMatrix::from_fn(n, pref, |_, _| it.next().unwrap()),
                        }
                    })
                    .collect();
                (parent, blocks)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn recovered_clusterings_are_tree_consistent((parent, blocks) in arb_instance()) {
            let out = run_rap(&parent, blocks, &RapConfig::default(), None).unwrap();
            let rec = recover_map_rap(&out, &parent);
            prop_assert!(satisfies_single_parent(&parent, &rec.exemplar_of));
            // every node lands in exactly one cluster
            let mut seen: Vec<usize> = rec.clusters.iter().flat_map(|c| c.members.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..parent.len()).collect::<Vec<_>>());
            for c in &rec.clusters {
                for &m in &c.members {
                    if let Some(p) = parent[m] {
                        prop_assert_eq!(Some(out.labels[p]), c.parent_exemplar);
                    }
                }
            }
        }

        #[test]
        fn cap_keeps_leaf_exemplar_clusters_clean((parent, blocks) in arb_instance()) {
            let out = run_rap(&parent, blocks, &RapConfig::default(), None).unwrap();
            for b in &out.blocks {
                for (e, members) in b.clustering.clusters() {
                    let ge = b.nodes[e];
                    if let Some(pe) = parent[ge] {
                        for m in members {
                            let p = parent[b.nodes[m]].expect("same-stem leaf block");
                            prop_assert_eq!(out.labels[p], out.labels[pe]);
                        }
                    }
                }
            }
        }

        #[test]
        fn tau_diagonal_nonnegative((parent, blocks) in arb_instance(), rounds in 1usize..30) {
            let snapshot: Vec<usize> = (0..parent.len()).collect();
            for b in blocks {
                let parents: Vec<_> = b.nodes.iter().map(|&g| parent[g]).collect();
                let groups = ParentGroups::build(&parents, &snapshot);
                let mut st = appc::init_messages(b.nodes.len());
                for _ in 0..rounds {
                    rap_round(&mut st, &b.sim, &groups, 0.5, -1e6, true);
                }
                for j in 0..st.n {
                    prop_assert!(st.tau[st.idx(j, j)] >= 0.0);
                }
                prop_assert!(st.rho.iter().chain(&st.alpha).chain(&st.tau).all(|v| v.is_finite()));
            }
        }

        #[test]
        fn constrained_optimum_is_lower((parent, blocks) in arb_instance()) {
            let inst = Instance::new(parent, blocks.into_iter().map(|b| (b.nodes, b.sim)).collect());
            if inst.len() <= 10 {
                let free = oracle_exhaustive(&inst, Constraint::None).unwrap();
                let tied = oracle_exhaustive(&inst, Constraint::SingleParent).unwrap();
                prop_assert!(tied.objective <= free.objective + 1e-12);
            }
        }
    }
}
