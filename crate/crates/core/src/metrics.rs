//! Quality metrics of a learned tree against a reference taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sapling::{top_k_tags, Corpus};

/// A stem-labelled rooted tree. Labels may repeat (ambiguous terms).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub labels: Vec<String>,
    pub parent: Vec<Option<usize>>,
}

impl Taxonomy {
    /// Validates a single root, in-range parents and the absence of cycles.
    pub fn from_parts(labels: Vec<String>, parent: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != parent.len() {
            return Err(Error::Data("taxonomy labels and parents differ in length".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("empty taxonomy".into()));
        }
        let roots = parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Data(format!("taxonomy has {roots} roots, expected 1")));
        }
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= labels.len() {
                    return Err(Error::Data(format!("taxonomy node {i} has unknown parent {p}")));
                }
            }
        }
        let t = Taxonomy { labels, parent };
        for i in 0..t.len() {
            // a walk longer than the node count must repeat a node
            if t.ancestors(i).take(t.len() + 1).count() > t.len() {
                return Err(Error::Data("taxonomy contains a cycle".into()));
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> usize {
        self.parent
            .iter()
            .position(Option::is_none)
            .expect("validated single root")
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        children
    }

    /// Nodes without children.
    pub fn leaves(&self) -> Vec<usize> {
        let children = self.children();
        (0..self.len()).filter(|&i| children[i].is_empty()).collect()
    }

    /// Proper ancestors of `i`, nearest first.
    pub fn ancestors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.parent[i], move |&p| self.parent[p])
    }

    pub fn depth(&self, i: usize) -> usize {
        self.ancestors(i).count()
    }

    pub fn stems(&self) -> BTreeSet<&str> {
        self.labels.iter().map(String::as_str).collect()
    }
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Σ over non-exemplar nodes of the Jaccard similarity between their top-K
/// tags and their exemplar's. Two untagged nodes contribute 0.
pub fn net_sim_jaccard(corpus: &Corpus, exemplar_of: &[usize], top_k: usize) -> f64 {
    let top = |i: usize| -> BTreeSet<&str> { top_k_tags(&corpus.node(i).tags, top_k).into_iter().collect() };
    exemplar_of
        .iter()
        .enumerate()
        .filter(|&(i, &e)| i != e)
        .map(|(i, &e)| jaccard(&top(i), &top(e)))
        .sum()
}

/// Fraction of reference stems present in the learned tree.
pub fn lexical_recall(learned: &Taxonomy, reference: &Taxonomy) -> f64 {
    let reference_stems = reference.stems();
    let learned_stems = learned.stems();
    reference_stems.intersection(&learned_stems).count() as f64 / reference_stems.len() as f64
}

/// Ancestor stems of every stem, unioned over its occurrences and restricted
/// to `vocabulary`.
fn ancestor_sets<'a>(t: &'a Taxonomy, vocabulary: &BTreeSet<&'a str>) -> BTreeMap<&'a str, BTreeSet<&'a str>> {
    let mut sets: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for i in 0..t.len() {
        let stem = t.labels[i].as_str();
        if !vocabulary.contains(stem) {
            continue;
        }
        let entry = sets.entry(stem).or_default();
        entry.extend(
            t.ancestors(i)
                .map(|a| t.labels[a].as_str())
                .filter(|a| vocabulary.contains(a)),
        );
    }
    sets
}

/// Mean taxonomic overlap over the stems both trees share.
///
/// For a shared stem, overlap is the Jaccard similarity of its ancestor-stem
/// sets in the two trees, both restricted to the shared vocabulary; two empty
/// sets count as full agreement. No shared stems gives 0.
pub fn mto(learned: &Taxonomy, reference: &Taxonomy) -> f64 {
    let reference_stems = reference.stems();
    let shared: BTreeSet<&str> = learned.stems().intersection(&reference_stems).copied().collect();
    if shared.is_empty() {
        return 0.0;
    }
    let l = ancestor_sets(learned, &shared);
    let r = ancestor_sets(reference, &shared);
    let total: f64 = shared
        .iter()
        .map(|t| {
            let (a, b) = (&l[t], &r[t]);
            if a.is_empty() && b.is_empty() {
                1.0
            } else {
                jaccard(a, b)
            }
        })
        .sum();
    total / shared.len() as f64
}

/// Learned leaves whose stem names a reference leaf, provided the two roots
/// carry the same stem.
pub fn overlapping_paths(learned: &Taxonomy, reference: &Taxonomy) -> usize {
    if learned.labels[learned.root()] != reference.labels[reference.root()] {
        return 0;
    }
    let reference_leaves: BTreeSet<&str> = reference
        .leaves()
        .into_iter()
        .map(|i| reference.labels[i].as_str())
        .collect();
    learned
        .leaves()
        .into_iter()
        .filter(|&i| reference_leaves.contains(learned.labels[i].as_str()))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Lr,
    Mto,
    NetSim,
    Conflicts,
    OPaths,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Lr,
        Metric::Mto,
        Metric::NetSim,
        Metric::Conflicts,
        Metric::OPaths,
    ];

    pub fn lower_is_better(self) -> bool {
        self == Metric::Conflicts
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Lr => "lr",
            Metric::Mto => "mto",
            Metric::NetSim => "netsim",
            Metric::Conflicts => "conflicts",
            Metric::OPaths => "opaths",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metrics of one learned tree: one row per (seed, strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: String,
    pub strategy: String,
    pub lr: f64,
    pub mto: f64,
    pub netsim: Option<f64>,
    pub conflicts: Option<usize>,
    pub opaths: usize,
}

impl MetricReport {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Lr => Some(self.lr),
            Metric::Mto => Some(self.mto),
            Metric::NetSim => self.netsim,
            Metric::Conflicts => self.conflicts.map(|c| c as f64),
            Metric::OPaths => Some(self.opaths as f64),
        }
    }
}

/// Write reports as CSV with one row per (seed, strategy); missing values are empty.
pub fn write_csv<W: Write>(reports: &[MetricReport], mut out: W) -> Result<()> {
    let io = |e| Error::io("<csv>", e);
    writeln!(out, "seed,strategy,lr,mto,netsim,conflicts,opaths").map_err(io)?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.seed,
            r.strategy,
            r.lr,
            r.mto,
            r.netsim.map(|v| v.to_string()).unwrap_or_default(),
            r.conflicts.map(|v| v.to_string()).unwrap_or_default(),
            r.opaths
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Average rank of every strategy on every metric (1 = best).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub strategies: Vec<String>,
    pub metrics: Vec<Metric>,
    /// `ranks[s][m]`: mean rank of strategy `s` on metric `m`; `None` when no
    /// seed reports the metric for every strategy.
    pub ranks: Vec<Vec<Option<f64>>>,
}

impl RankTable {
    pub fn rank(&self, strategy: &str, metric: Metric) -> Option<f64> {
        let s = self.strategies.iter().position(|x| x == strategy)?;
        let m = self.metrics.iter().position(|&x| x == metric)?;
        self.ranks[s][m]
    }
}

impl fmt::Display for RankTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<20}", "strategy")?;
        for m in &self.metrics {
            write!(f, "{:>10}", m.name())?;
        }
        writeln!(f)?;
        for (s, row) in self.strategies.iter().zip(&self.ranks) {
            write!(f, "{s:<20}")?;
            for r in row {
                match r {
                    Some(r) => write!(f, "{r:>10.2}")?,
                    None => write!(f, "{:>10}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Ranks with ties sharing their mean rank.
fn fractional_ranks(values: &[f64], ascending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if ascending {
            c
        } else {
            c.reverse()
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Rank strategies per seed on every metric, then average over seeds.
/// Conflicts rank ascending, every other metric descending.
pub fn rank_strategies(reports: &[MetricReport]) -> Result<RankTable> {
    let strategies: Vec<String> = reports
        .iter()
        .map(|r| r.strategy.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if strategies.len() < 2 {
        return Err(Error::Data("ranking needs at least two strategies".into()));
    }
    let mut by_seed: BTreeMap<&str, BTreeMap<&str, &MetricReport>> = BTreeMap::new();
    for r in reports {
        if by_seed.entry(&r.seed).or_default().insert(&r.strategy, r).is_some() {
            return Err(Error::Data(format!(
                "duplicate report for seed {} strategy {}",
                r.seed, r.strategy
            )));
        }
    }
    let metrics = Metric::ALL.to_vec();
    let mut ranks = vec![vec![None; metrics.len()]; strategies.len()];
    for (m_idx, &metric) in metrics.iter().enumerate() {
        let mut sums = vec![0.0; strategies.len()];
        let mut seeds = 0usize;
        for rows in by_seed.values() {
            let values: Option<Vec<f64>> = strategies
                .iter()
                .map(|s| rows.get(s.as_str()).and_then(|r| r.value(metric)))
                .collect();
            let Some(values) = values else { continue };
            for (sum, rank) in sums.iter_mut().zip(fractional_ranks(&values, metric.lower_is_better())) {
                *sum += rank;
            }
            seeds += 1;
        }
        if seeds > 0 {
            for (s, sum) in sums.into_iter().enumerate() {
                ranks[s][m_idx] = Some(sum / seeds as f64);
            }
        }
    }
    Ok(RankTable {
        strategies,
        metrics,
        ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sapling::{IdAllocator, Sapling, TagStats};
    use proptest::prelude::*;

    fn tree(edges: &[(&str, Option<usize>)]) -> Taxonomy {
        Taxonomy::from_parts(
            edges.iter().map(|(l, _)| l.to_string()).collect(),
            edges.iter().map(|(_, p)| *p).collect(),
        )
        .unwrap()
    }

    fn five_leaf() -> Taxonomy {
        tree(&[
            ("anim", None),
            ("bird", Some(0)),
            ("fish", Some(0)),
            ("reptil", Some(0)),
            ("sparrow", Some(1)),
            ("owl", Some(1)),
            ("trout", Some(2)),
            ("snake", Some(3)),
            ("lizard", Some(3)),
        ])
    }

    #[test]
    fn taxonomy_validation() {
        assert!(Taxonomy::from_parts(vec!["a".into(), "b".into()], vec![None, None]).is_err());
        assert!(Taxonomy::from_parts(vec!["a".into(), "b".into(), "c".into()], vec![None, Some(2), Some(1)]).is_err());
        assert!(Taxonomy::from_parts(vec!["a".into()], vec![Some(3)]).is_err());
    }

    #[test]
    fn lexical_recall_examples() {
        let t = five_leaf();
        assert_eq!(lexical_recall(&t, &t), 1.0);
        let other = tree(&[("x", None), ("y", Some(0))]);
        assert_eq!(lexical_recall(&other, &t), 0.0);
        let reference = tree(&[("a", None), ("b", Some(0)), ("c", Some(0)), ("d", Some(0))]);
        let learned = tree(&[("a", None), ("b", Some(0)), ("x", Some(0))]);
        assert_eq!(lexical_recall(&learned, &reference), 0.5);
    }

    #[test]
    fn mto_examples() {
        let t = five_leaf();
        assert_eq!(mto(&t, &t), 1.0);
        // shared {a, c}: c keeps ancestor a in both; a has none in both
        let chain = tree(&[("a", None), ("b", Some(0)), ("c", Some(1))]);
        let short = tree(&[("a", None), ("c", Some(0))]);
        assert_eq!(mto(&chain, &short), 1.0);
        // leaf x under p in one tree and under q in the other
        let l = tree(&[("r", None), ("p", Some(0)), ("q", Some(0)), ("x", Some(1))]);
        let r = tree(&[("s", None), ("p", Some(0)), ("q", Some(0)), ("x", Some(2))]);
        // shared {p, q, x}: p, q have empty sets (r/s not shared) -> 1 each; x: {p} vs {q} -> 0
        assert!((mto(&l, &r) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mto(&tree(&[("x", None)]), &tree(&[("y", None)])), 0.0);
    }

    #[test]
    fn overlapping_paths_examples() {
        let t = five_leaf();
        assert_eq!(overlapping_paths(&t, &t), 5);
        let renamed = tree(&[("plant", None), ("owl", Some(0))]);
        assert_eq!(overlapping_paths(&renamed, &t), 0);
        let learned = tree(&[
            ("anim", None),
            ("owl", Some(0)),
            ("trout", Some(0)),
            ("snake", Some(0)),
            ("cat", Some(0)),
            ("dog", Some(0)),
            ("cow", Some(0)),
            ("bee", Some(0)),
        ]);
        assert_eq!(overlapping_paths(&learned, &t), 3);
    }

    fn report(seed: &str, strategy: &str, lr: f64, conflicts: usize) -> MetricReport {
        MetricReport {
            seed: seed.into(),
            strategy: strategy.into(),
            lr,
            mto: 0.5,
            netsim: None,
            conflicts: Some(conflicts),
            opaths: 1,
        }
    }

    #[test]
    fn ranking_examples() {
        let table = rank_strategies(&[
            report("1", "a", 0.9, 0),
            report("1", "b", 0.5, 4),
            report("2", "a", 0.8, 1),
            report("2", "b", 0.7, 2),
        ])
        .unwrap();
        assert_eq!(table.rank("a", Metric::Lr), Some(1.0));
        assert_eq!(table.rank("b", Metric::Lr), Some(2.0));
        assert_eq!(table.rank("a", Metric::Conflicts), Some(1.0));
        // equal everywhere
        assert_eq!(table.rank("a", Metric::Mto), Some(1.5));
        assert_eq!(table.rank("b", Metric::OPaths), Some(1.5));
        assert_eq!(table.rank("a", Metric::NetSim), None);

        // three strategies, two seeds:
        //   seed 1 lr: a .9, b .6, c .6 -> ranks 1, 2.5, 2.5; conflicts 3, 1, 2 -> 3, 1, 2
        //   seed 2 lr: a .2, b .8, c .5 -> ranks 3, 1, 2;     conflicts 0, 0, 5 -> 1.5, 1.5, 3
        let table = rank_strategies(&[
            report("1", "a", 0.9, 3),
            report("1", "b", 0.6, 1),
            report("1", "c", 0.6, 2),
            report("2", "a", 0.2, 0),
            report("2", "b", 0.8, 0),
            report("2", "c", 0.5, 5),
        ])
        .unwrap();
        assert_eq!(table.rank("a", Metric::Lr), Some(2.0));
        assert_eq!(table.rank("b", Metric::Lr), Some(1.75));
        assert_eq!(table.rank("c", Metric::Lr), Some(2.25));
        assert_eq!(table.rank("a", Metric::Conflicts), Some(2.25));
        assert_eq!(table.rank("b", Metric::Conflicts), Some(1.25));
        assert_eq!(table.rank("c", Metric::Conflicts), Some(2.5));
        assert!(rank_strategies(&[report("1", "a", 0.1, 0)]).is_err());
    }

    #[test]
    fn net_sim_jaccard_examples() {
        let mut ids = IdAllocator::new();
        let t = |l: &[&str]| l.iter().map(|x| (*x, 1u64)).collect::<TagStats>();
        let s1 = Sapling::build(&mut ids, "u", "r", [("x", t(&["a", "b"]))]);
        let s2 = Sapling::build(&mut ids, "v", "r", [("x", t(&["a", "b"]))]);
        let s3 = Sapling::build(&mut ids, "w", "q", [("x", t(&["c"]))]);
        let corpus = Corpus::new(&[s1, s2, s3]);
        assert_eq!(net_sim_jaccard(&corpus, &[0, 1, 2, 3, 4, 5], 40), 0.0);
        // leaf 3 joins leaf 1 (identical tags)
        assert_eq!(net_sim_jaccard(&corpus, &[0, 1, 2, 1, 4, 5], 40), 1.0);
        // leaf 5 joins leaf 1 (disjoint tags)
        assert_eq!(net_sim_jaccard(&corpus, &[0, 1, 2, 3, 4, 1], 40), 0.0);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[report("7", "rap-local", 1.0, 0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "seed,strategy,lr,mto,netsim,conflicts,opaths\n7,rap-local,1,0.5,,0,1\n"
        );
    }

    fn arb_tree() -> impl Strategy<Value = Taxonomy> {
        prop::collection::vec((0usize..100, 0usize..6), 1..12).prop_map(|raw| {
            let labels = raw.iter().map(|(_, l)| format!("t{l}")).collect();
            let parent = raw
                .iter()
                .enumerate()
                .map(|(i, (p, _))| (i > 0).then(|| p % i))
                .collect();
            Taxonomy::from_parts(labels, parent).unwrap()
        })
    }

    proptest! {
        #[test]
        fn self_comparison(t in arb_tree()) {
            prop_assert_eq!(lexical_recall(&t, &t), 1.0);
            prop_assert_eq!(mto(&t, &t), 1.0);
            prop_assert_eq!(overlapping_paths(&t, &t), t.leaves().len());
        }

        #[test]
        fn ratios_bounded(a in arb_tree(), b in arb_tree()) {
            prop_assert!((0.0..=1.0).contains(&lexical_recall(&a, &b)));
            prop_assert!((0.0..=1.0).contains(&mto(&a, &b)));
        }

        #[test]
        fn recall_monotone_in_correct_stems(a in arb_tree(), b in arb_tree(), pick in 0usize..12) {
            let extra = b.labels[pick % b.len()].clone();
            let mut labels = a.labels.clone();
            let mut parent = a.parent.clone();
            labels.push(extra);
            parent.push(Some(a.root()));
            let grown = Taxonomy::from_parts(labels, parent).unwrap();
            prop_assert!(lexical_recall(&grown, &b) >= lexical_recall(&a, &b));
        }

        #[test]
        fn rank_conservation(values in prop::collection::vec(prop::collection::vec(0u8..4, 3), 1..5)) {
            let reports: Vec<MetricReport> = values
                .iter()
                .enumerate()
                .flat_map(|(seed, row)| {
                    row.iter().enumerate().map(move |(s, &v)| report(&seed.to_string(), &format!("s{s}"), v as f64, v as usize))
                })
                .collect();
            let table = rank_strategies(&reports).unwrap();
            for m in 0..table.metrics.len() {
                if let Some(sum) = table.ranks.iter().map(|r| r[m]).sum::<Option<f64>>() {
                    prop_assert!((sum / 3.0 - 2.0).abs() < 1e-12);
                }
            }
        }
    }
}
