//! Node similarity: tag overlap, sapling structure and cluster-label structure,
//! assembled into one matrix per block.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sapling::{top_k_tags, Corpus, SNode, Sapling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Tag overlap only.
    Local,
    /// Tag overlap blended with sibling/child name overlap.
    Hybrid,
    /// Tag overlap blended with neighbour cluster-label overlap.
    ClassHybrid,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Local, Scheme::Hybrid, Scheme::ClassHybrid];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Hybrid => "hybrid",
            Scheme::ClassHybrid => "class_hybrid",
        }
    }

    pub fn needs_labels(self) -> bool {
        self == Scheme::ClassHybrid
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Scheme::Local),
            "hybrid" => Ok(Scheme::Hybrid),
            "class_hybrid" | "class-hybrid" | "class" => Ok(Scheme::ClassHybrid),
            other => Err(Error::Config(format!("unknown similarity scheme {other:?}"))),
        }
    }
}

/// How the self-similarity of every node in a block is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreferenceRule {
    /// Quantile of the block's off-diagonal scores (linear interpolation).
    Quantile(f64),
    /// Same value for every node.
    Absolute(f64),
}

impl PreferenceRule {
    pub const MEDIAN: PreferenceRule = PreferenceRule::Quantile(0.5);

    /// Preference for a block given its off-diagonal scores (each unordered
    /// pair once). Blocks without pairs get 0.
    pub fn resolve(&self, off_diagonal: &[f64]) -> f64 {
        match *self {
            PreferenceRule::Absolute(v) => v,
            PreferenceRule::Quantile(_) if off_diagonal.is_empty() => 0.0,
            PreferenceRule::Quantile(q) => {
                let mut sorted = off_diagonal.to_vec();
                sorted.sort_by(f64::total_cmp);
                let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                if lo == hi {
                    sorted[lo]
                } else {
                    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
                }
            }
        }
    }
}

impl fmt::Display for PreferenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreferenceRule::Quantile(q) if *q == 0.5 => f.write_str("median"),
            PreferenceRule::Quantile(q) => write!(f, "quantile:{q}"),
            PreferenceRule::Absolute(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for PreferenceRule {
    type Err = Error;

    /// `median`, `quantile:Q` or a plain number (absolute value).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "median" {
            return Ok(PreferenceRule::MEDIAN);
        }
        if let Some(q) = s.strip_prefix("quantile:").or_else(|| s.strip_prefix("q:")) {
            let q: f64 = q
                .parse()
                .map_err(|_| Error::Config(format!("bad preference quantile {q:?}")))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("preference quantile {q} outside [0,1]")));
            }
            return Ok(PreferenceRule::Quantile(q));
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(PreferenceRule::Absolute)
            .ok_or_else(|| Error::Config(format!("bad preference {s:?}")))
    }
}

impl Serialize for PreferenceRule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PreferenceRule::Absolute(v) => serializer.serialize_f64(*v),
            other => serializer.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for PreferenceRule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(PreferenceRule::Absolute(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Number of most frequent tags compared (K).
    pub top_k: usize,
    /// Common tags needed for full local similarity (J).
    pub common_j: usize,
    /// Structural weight for root-root and leaf-leaf pairs.
    pub blend_rootroot: f64,
    /// Structural weight for root-leaf pairs.
    pub blend_rootleaf: f64,
    pub scheme: Scheme,
    pub preference: PreferenceRule,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            top_k: 40,
            common_j: 4,
            blend_rootroot: 0.9,
            blend_rootleaf: 0.2,
            scheme: Scheme::Local,
            preference: PreferenceRule::Absolute(0.5),
        }
    }
}

impl SimilarityConfig {
    pub fn with_scheme(scheme: Scheme) -> Self {
        SimilarityConfig {
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.common_j == 0 || self.top_k < self.common_j {
            return Err(Error::Config(format!(
                "need top_k >= common_j >= 1, got top_k={} common_j={}",
                self.top_k, self.common_j
            )));
        }
        for (name, v) in [
            ("blend_rootroot", self.blend_rootroot),
            ("blend_rootleaf", self.blend_rootleaf),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name}={v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pairwise scores on plain saplings

fn overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> usize {
    a.intersection(b).count()
}

fn capped_ratio(common: usize, threshold: usize) -> f64 {
    (common as f64 / threshold as f64).min(1.0)
}

/// `min(1, t/J)` where `t` counts tags shared by both nodes' top-K lists.
pub fn local_sim(i: &SNode, j: &SNode, cfg: &SimilarityConfig) -> f64 {
    let a: BTreeSet<&str> = top_k_tags(&i.tags, cfg.top_k).into_iter().collect();
    let b: BTreeSet<&str> = top_k_tags(&j.tags, cfg.top_k).into_iter().collect();
    capped_ratio(overlap(&a, &b), cfg.common_j)
}

fn name_matches(a: &Sapling, b: &Sapling) -> usize {
    a.leaves
        .iter()
        .map(|la| b.leaves.iter().filter(|lb| lb.stem == la.stem).count())
        .sum()
}

/// Matching leaf names of two saplings over the smaller leaf count.
pub fn struct_sim_rr(a: &Sapling, b: &Sapling) -> f64 {
    let z = a.leaves.len().min(b.leaves.len());
    if z == 0 {
        return 0.0;
    }
    (name_matches(a, b) as f64 / z as f64).min(1.0)
}

/// Like [`struct_sim_rr`] for two leaves of `a` and `b` that share a stem, with
/// the pair itself discounted. Defined as 0 when both saplings have one leaf.
pub fn struct_sim_ll(a: &Sapling, b: &Sapling) -> f64 {
    let z = a.leaves.len().min(b.leaves.len());
    if z <= 1 {
        return 0.0;
    }
    let matches = name_matches(a, b).saturating_sub(1);
    (matches as f64 / (z - 1) as f64).min(1.0)
}

/// Root `root_b` against a leaf of `a`: tag overlap of the two roots.
pub fn struct_sim_lr(root_b: &SNode, a: &Sapling, cfg: &SimilarityConfig) -> f64 {
    local_sim(root_b, &a.root, cfg)
}

/// Root-root structure over the cluster labels of the two leaf sets.
///
/// Counts the leaves on each side whose label also occurs on the other side
/// and takes the smaller count over `min(|A|, |B|)`; with distinct labels
/// inside each sapling this is the name-based formula with labels in place of
/// names, and it stays in [0,1] when a sapling holds several leaves of one
/// cluster.
pub fn struct_sim_rr_clust(a_leaf_labels: &[usize], b_leaf_labels: &[usize]) -> f64 {
    let z = a_leaf_labels.len().min(b_leaf_labels.len());
    if z == 0 {
        return 0.0;
    }
    let a_set: BTreeSet<usize> = a_leaf_labels.iter().copied().collect();
    let b_set: BTreeSet<usize> = b_leaf_labels.iter().copied().collect();
    let a_hits = a_leaf_labels.iter().filter(|l| b_set.contains(l)).count();
    let b_hits = b_leaf_labels.iter().filter(|l| a_set.contains(l)).count();
    a_hits.min(b_hits) as f64 / z as f64
}

/// Leaf-leaf structure from cluster labels: 1 when the parents share a label.
pub fn struct_sim_ll_clust(parent_label_a: usize, parent_label_b: usize) -> f64 {
    if parent_label_a == parent_label_b {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Blocked similarity over a corpus

/// Relative size of the tie-breaking tilt seen by message passing.
const TIE_BREAK: f64 = 1e-9;

/// Symmetric similarities of one block, stored as a strict lower triangle,
/// plus per-node preference on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    lower: Vec<f64>,
    preference: Vec<f64>,
    tilt: f64,
}

impl SimilarityMatrix {
    /// Build from `score(i, j)` evaluated for `i > j` only.
    pub fn from_fn(n: usize, preference: f64, mut score: impl FnMut(usize, usize) -> f64) -> Self {
        let mut lower = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 1..n {
            for j in 0..i {
                lower.push(score(i, j));
            }
        }
        let mut s = SimilarityMatrix {
            n,
            lower,
            preference: vec![preference; n],
            tilt: 0.0,
        };
        s.refresh_tilt();
        s
    }

    fn refresh_tilt(&mut self) {
        let scale = self
            .lower
            .iter()
            .chain(&self.preference)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        self.tilt = TIE_BREAK * (1.0 + scale);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => self.preference[i],
            Greater => self.lower[i * (i - 1) / 2 + j],
            Less => self.lower[j * (j - 1) / 2 + i],
        }
    }

    /// Score used by message passing: [`get`](Self::get) plus a tilt, far
    /// below any meaningful difference, towards lower-index exemplars.
    /// Exactly symmetric inputs (identical nodes) otherwise settle on a
    /// degenerate fixed point where several nodes sit at zero belief and
    /// rounding decides; the tilt makes the lower index win, as every other
    /// tie-break does.
    #[inline]
    pub fn message_score(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) + self.tilt * (self.n - j) as f64 / self.n as f64
    }

    pub fn preference(&self, i: usize) -> f64 {
        self.preference[i]
    }

    pub fn set_preference(&mut self, value: f64) {
        self.preference.iter_mut().for_each(|p| *p = value);
        self.refresh_tilt();
    }

    pub fn off_diagonal(&self) -> &[f64] {
        &self.lower
    }

    pub fn max_score(&self) -> f64 {
        self.lower.iter().chain(&self.preference).copied().fold(0.0, f64::max)
    }
}

/// Precomputed per-node features for scoring pairs of a corpus.
pub struct SimilarityContext<'a> {
    corpus: &'a Corpus,
    cfg: SimilarityConfig,
    top_tags: Vec<Vec<u32>>,
    // sorted leaf-stem ids of every root (empty for leaves)
    child_stems: Vec<Vec<u32>>,
}

fn sorted_overlap(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Pairs (x in a, y in b) with x == y, for sorted lists that may repeat values.
fn sorted_pair_matches(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let v = a[i];
                let ca = a[i..].iter().take_while(|&&x| x == v).count();
                let cb = b[j..].iter().take_while(|&&x| x == v).count();
                n += ca * cb;
                i += ca;
                j += cb;
            }
        }
    }
    n
}

impl<'a> SimilarityContext<'a> {
    pub fn new(corpus: &'a Corpus, cfg: SimilarityConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tag_ids: HashMap<&str, u32> = HashMap::new();
        let mut top_tags = Vec::with_capacity(corpus.len());
        for node in corpus.nodes() {
            let mut ids: Vec<u32> = top_k_tags(&node.tags, cfg.top_k)
                .into_iter()
                .map(|t| {
                    let next = tag_ids.len() as u32;
                    *tag_ids.entry(t).or_insert(next)
                })
                .collect();
            ids.sort_unstable();
            top_tags.push(ids);
        }

        let mut stem_ids: HashMap<&str, u32> = HashMap::new();
        let mut child_stems = Vec::with_capacity(corpus.len());
        for i in 0..corpus.len() {
            let mut ids: Vec<u32> = corpus
                .children(i)
                .iter()
                .map(|&c| {
                    let next = stem_ids.len() as u32;
                    *stem_ids.entry(corpus.node(c).stem.as_str()).or_insert(next)
                })
                .collect();
            ids.sort_unstable();
            child_stems.push(ids);
        }
        Ok(SimilarityContext {
            corpus,
            cfg,
            top_tags,
            child_stems,
        })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    fn local(&self, i: usize, j: usize) -> f64 {
        capped_ratio(sorted_overlap(&self.top_tags[i], &self.top_tags[j]), self.cfg.common_j)
    }

    fn rr_names(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (&self.child_stems[a], &self.child_stems[b]);
        let z = ca.len().min(cb.len());
        if z == 0 {
            return 0.0;
        }
        (sorted_pair_matches(ca, cb) as f64 / z as f64).min(1.0)
    }

    fn ll_names(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (self.corpus.sapling_root(a), self.corpus.sapling_root(b));
        let (ca, cb) = (&self.child_stems[ra], &self.child_stems[rb]);
        let z = ca.len().min(cb.len());
        if z <= 1 {
            return 0.0;
        }
        let matches = sorted_pair_matches(ca, cb).saturating_sub(1);
        (matches as f64 / (z - 1) as f64).min(1.0)
    }

    fn rr_labels(&self, a: usize, b: usize, labels: &[usize]) -> f64 {
        let la: Vec<usize> = self.corpus.children(a).iter().map(|&c| labels[c]).collect();
        let lb: Vec<usize> = self.corpus.children(b).iter().map(|&c| labels[c]).collect();
        struct_sim_rr_clust(&la, &lb)
    }

    fn ll_labels(&self, a: usize, b: usize, labels: &[usize]) -> f64 {
        struct_sim_ll_clust(labels[self.corpus.sapling_root(a)], labels[self.corpus.sapling_root(b)])
    }

    /// Similarity of dense nodes `i` and `j`. `labels` maps every dense node
    /// to its current cluster label and is required by the class-hybrid scheme.
    pub fn node_sim(&self, i: usize, j: usize, labels: Option<&[usize]>) -> Result<f64> {
        if self.cfg.scheme.needs_labels() && labels.is_none() {
            return Err(Error::Config(
                "class_hybrid similarity needs a cluster-label snapshot".into(),
            ));
        }
        Ok(self.score(i, j, labels))
    }

    fn score(&self, i: usize, j: usize, labels: Option<&[usize]>) -> f64 {
        let (ni, nj) = (self.corpus.node(i), self.corpus.node(j));
        if ni.stem != nj.stem {
            return 0.0;
        }
        let local = self.local(i, j);
        if self.cfg.scheme == Scheme::Local {
            return local;
        }
        let (alpha, structural) = match (ni.is_leaf(), nj.is_leaf()) {
            (false, false) => (
                self.cfg.blend_rootroot,
                match labels {
                    Some(l) if self.cfg.scheme == Scheme::ClassHybrid => self.rr_labels(i, j, l),
                    _ => self.rr_names(i, j),
                },
            ),
            (true, true) => (
                self.cfg.blend_rootroot,
                match labels {
                    Some(l) if self.cfg.scheme == Scheme::ClassHybrid => self.ll_labels(i, j, l),
                    _ => self.ll_names(i, j),
                },
            ),
            (false, true) => (self.cfg.blend_rootleaf, self.local(i, self.corpus.sapling_root(j))),
            (true, false) => (self.cfg.blend_rootleaf, self.local(j, self.corpus.sapling_root(i))),
        };
        (1.0 - alpha) * local + alpha * structural
    }

    /// Score every pair of `block` (dense indices) and set the block's preference.
    pub fn build_similarity(&self, block: &[usize], labels: Option<&[usize]>) -> Result<SimilarityMatrix> {
        if self.cfg.scheme.needs_labels() && labels.is_none() {
            return Err(Error::Config(
                "class_hybrid similarity needs a cluster-label snapshot".into(),
            ));
        }
        let mut s = SimilarityMatrix::from_fn(block.len(), 0.0, |a, b| self.score(block[a], block[b], labels));
        let pref = if block.len() > 1 {
            self.cfg.preference.resolve(s.off_diagonal())
        } else {
            0.0
        };
        s.set_preference(pref);
        Ok(s)
    }
}
