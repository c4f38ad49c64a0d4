//! End-to-end runs: saplings in; folksonomy, metrics and a run manifest out.
//!
//! The `run_*` functions are what the command-line tool calls. They do all
//! file handling, so everything the binary does can be driven from a test.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::folksonomy::{assemble_tree, pick_popular_tree, split_sparse_leaf_clusters, FolkCluster, Folksonomy};
use crate::metrics::{lexical_recall, mto, net_sim_jaccard, overlapping_paths, write_csv, MetricReport, Taxonomy};
use crate::rap::{recover_map_rap, run_engine, BlockInput};
use crate::sapling::{
    filter_by_seed, parse_saplings, prune_idiosyncratic_leaves, write_saplings, Corpus, NodeId, Sapling,
};
use crate::simfn::SimilarityContext;
use crate::synthgen::{generate_taxonomy, sample_saplings, GenConfig};

pub const FOLKSONOMY_FILE: &str = "folksonomy.jsonl";
pub const DOT_FILE: &str = "folksonomy.dot";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REFERENCE_FILE: &str = "reference.jsonl";

/// Everything a learning run produced, in memory.
#[derive(Debug, Clone)]
pub struct Learned {
    pub corpus: Corpus,
    pub folksonomy: Folksonomy,
    /// Final exemplar of every corpus node (dense indices), read off the folksonomy.
    pub exemplar_of: Vec<usize>,
    /// Leaves split off during recovery because their parent disagreed.
    pub conflicts_pre_split: usize,
    /// Clustering objective right after recovery.
    pub net_similarity: f64,
    /// Tag-overlap similarity of every node to its final exemplar.
    pub netsim: f64,
    pub blocks: usize,
    pub rounds: usize,
    pub converged: bool,
    pub unconverged_blocks: usize,
}

/// Pruning, then the seed-term filter if one is set.
pub fn prepare_saplings(saplings: &[Sapling], cfg: &RunConfig) -> Vec<Sapling> {
    let pruned = if cfg.prune {
        prune_idiosyncratic_leaves(saplings)
    } else {
        saplings.to_vec()
    };
    match &cfg.seed_term {
        Some(seed) => filter_by_seed(&pruned, seed, cfg.hops),
        None => pruned,
    }
}

pub fn learn(saplings: &[Sapling], cfg: &RunConfig) -> Result<Learned> {
    cfg.validate()?;
    learn_corpus(Corpus::new(&prepare_saplings(saplings, cfg)), cfg)
}

/// Cluster an already prepared corpus.
pub fn learn_corpus(corpus: Corpus, cfg: &RunConfig) -> Result<Learned> {
    cfg.validate()?;
    let parent: Vec<Option<usize>> = (0..corpus.len()).map(|i| corpus.parent(i)).collect();
    let (out, recovery) = {
        let ctx = SimilarityContext::new(&corpus, cfg.similarity())?;
        let needs_labels = cfg.scheme.needs_labels();
        let identity: Vec<usize> = (0..corpus.len()).collect();
        let labels = needs_labels.then_some(identity.as_slice());
        let blocks = corpus
            .dense_blocks()
            .into_par_iter()
            .map(|(_, nodes)| {
                let sim = ctx.build_similarity(&nodes, labels)?;
                Ok(BlockInput { nodes, sim })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = run_engine(&parent, blocks, &cfg.rap(), needs_labels.then_some(&ctx))?;
        let recovery = recover_map_rap(&out, &parent);
        (out, recovery)
    };
    let assembled = assemble_tree(&recovery, &corpus);
    let folksonomy = split_sparse_leaf_clusters(&assembled, &corpus, cfg.min_roots)?;
    let exemplar_of = exemplar_assignment(&folksonomy, &corpus)?;
    let netsim = net_sim_jaccard(&corpus, &exemplar_of, cfg.top_k);
    if folksonomy.is_empty() {
        log::warn!("empty corpus: the learned forest is empty");
    }
    Ok(Learned {
        conflicts_pre_split: recovery.conflicts_pre_split,
        net_similarity: recovery.net_similarity,
        netsim,
        blocks: out.blocks.len(),
        rounds: out.rounds,
        converged: out.converged,
        unconverged_blocks: out.unconverged_blocks(),
        exemplar_of,
        folksonomy,
        corpus,
    })
}

/// Dense exemplar of every corpus node according to the folksonomy's clusters.
pub fn exemplar_assignment(folk: &Folksonomy, corpus: &Corpus) -> Result<Vec<usize>> {
    let dense = |id: NodeId| {
        corpus
            .dense(id)
            .ok_or_else(|| Error::Data(format!("node {id} is not in the corpus")))
    };
    let mut exemplar_of: Vec<usize> = (0..corpus.len()).collect();
    for c in &folk.clusters {
        let e = dense(c.exemplar)?;
        for &m in &c.members {
            exemplar_of[dense(m)?] = e;
        }
    }
    Ok(exemplar_of)
}

/// Tree metrics of `learned` against `reference`; NetSim and Conflicts are left
/// for the caller, who may know them.
pub fn compare_trees(learned: &Taxonomy, reference: &Taxonomy, seed: &str, strategy: &str) -> MetricReport {
    MetricReport {
        seed: seed.to_string(),
        strategy: strategy.to_string(),
        lr: lexical_recall(learned, reference),
        mto: mto(learned, reference),
        netsim: None,
        conflicts: None,
        opaths: overlapping_paths(learned, reference),
    }
}

/// Full report for a learning run: the most popular learned tree against the
/// reference, plus the run's NetSim and pre-split Conflicts.
pub fn report(learned: &Learned, reference: &Taxonomy, seed: &str, strategy: &str) -> Result<MetricReport> {
    let tree = pick_popular_tree(&learned.folksonomy)?;
    Ok(MetricReport {
        netsim: Some(learned.netsim),
        conflicts: Some(learned.conflicts_pre_split),
        ..compare_trees(&tree, reference, seed, strategy)
    })
}

/// A taxonomy written as folksonomy records: one singleton cluster per node,
/// with node ids equal to taxonomy positions.
pub fn taxonomy_records(tax: &Taxonomy) -> Folksonomy {
    let clusters = (0..tax.len())
        .map(|i| FolkCluster {
            cluster_id: i,
            exemplar: NodeId(i as u32),
            stem: tax.labels[i].clone(),
            members: vec![NodeId(i as u32)],
            users: 0,
            parent_cluster_id: tax.parent[i],
        })
        .collect();
    Folksonomy { clusters }
}

/// SHA-256 over `blob <len>\0` followed by the content, as hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Written next to every learned folksonomy so it can be re-evaluated and
/// reproduced later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub strategy: String,
    pub input_hash: String,
    pub saplings_read: usize,
    pub saplings_rejected: usize,
    pub saplings_used: usize,
    pub nodes: usize,
    pub blocks: usize,
    pub clusters: usize,
    pub trees: usize,
    pub rounds: usize,
    pub converged: bool,
    pub unconverged_blocks: usize,
    pub net_similarity: f64,
    pub netsim: f64,
    pub conflicts_pre_split: usize,
    pub folksonomy_hash: String,
}

#[derive(Debug, Clone)]
pub struct LearnSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub report: Option<MetricReport>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn folksonomy_bytes(folk: &Folksonomy) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    folk.write_jsonl(&mut buf)?;
    Ok(buf)
}

pub fn read_folksonomy(path: &Path) -> Result<Folksonomy> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Folksonomy::read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The reference taxonomy stored as folksonomy records (its most popular tree
/// when the file holds several).
pub fn read_reference(path: &Path) -> Result<Taxonomy> {
    pick_popular_tree(&read_folksonomy(path)?)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Read the corpus, learn, and write folksonomy, DOT, manifest and (with a
/// reference) metrics into the output directory.
pub fn run_learn(cfg: &RunConfig) -> Result<LearnSummary> {
    cfg.validate()?;
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("no input corpus given".into()))?;
    let out_dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    let reference = cfg.reference.as_deref().map(read_reference).transpose()?;

    let raw = read_bytes(input)?;
    let parsed = parse_saplings(raw.as_slice())?;
    for r in &parsed.rejected {
        log::warn!("{}:{}: skipped: {}", input.display(), r.line, r.reason);
    }
    let prepared = prepare_saplings(&parsed.saplings, cfg);
    let learned = learn_corpus(Corpus::new(&prepared), cfg)?;

    create_dir(&out_dir)?;
    let folk_bytes = folksonomy_bytes(&learned.folksonomy)?;
    write_file(&out_dir.join(FOLKSONOMY_FILE), &folk_bytes)?;
    write_file(&out_dir.join(DOT_FILE), learned.folksonomy.to_dot().as_bytes())?;

    let strategy = cfg.strategy();
    let input_hash = content_hash(&raw);
    let report = match &reference {
        Some(reference) if !learned.folksonomy.is_empty() => {
            let report = self::report(&learned, reference, &input_hash[..12], &strategy)?;
            let json = serde_json::to_vec_pretty(&report)?;
            write_file(&out_dir.join(METRICS_JSON_FILE), &json)?;
            let mut csv = Vec::new();
            write_csv(std::slice::from_ref(&report), &mut csv)?;
            write_file(&out_dir.join(METRICS_CSV_FILE), &csv)?;
            Some(report)
        }
        Some(_) => {
            log::warn!("no learned tree to evaluate");
            None
        }
        None => None,
    };

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        strategy,
        input_hash,
        saplings_read: parsed.saplings.len(),
        saplings_rejected: parsed.rejected.len(),
        saplings_used: prepared.len(),
        nodes: learned.corpus.len(),
        blocks: learned.blocks,
        clusters: learned.folksonomy.len(),
        trees: learned.folksonomy.roots().len(),
        rounds: learned.rounds,
        converged: learned.converged,
        unconverged_blocks: learned.unconverged_blocks,
        net_similarity: learned.net_similarity,
        netsim: learned.netsim,
        conflicts_pre_split: learned.conflicts_pre_split,
        folksonomy_hash: content_hash(&folk_bytes),
    };
    write_file(&out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(LearnSummary {
        out_dir,
        manifest,
        report,
    })
}

/// Evaluate a learned folksonomy file against a reference file. NetSim and
/// Conflicts come from `manifest`, or from a `manifest.json` beside the learned
/// file; without one they are absent.
pub fn run_eval(learned: &Path, reference: &Path, manifest: Option<&Path>) -> Result<MetricReport> {
    let folk = read_folksonomy(learned)?;
    let reference = read_reference(reference)?;
    let sibling = learned.with_file_name(MANIFEST_FILE);
    let manifest = match manifest {
        Some(path) => Some(read_manifest(path)?),
        None if sibling.is_file() => Some(read_manifest(&sibling)?),
        None => None,
    };
    let tree = pick_popular_tree(&folk)?;
    let (seed, strategy) = match &manifest {
        Some(m) => (
            m.input_hash[..12.min(m.input_hash.len())].to_string(),
            m.strategy.clone(),
        ),
        None => (String::new(), "learned".to_string()),
    };
    Ok(MetricReport {
        netsim: manifest.as_ref().map(|m| m.netsim),
        conflicts: manifest.as_ref().map(|m| m.conflicts_pre_split),
        ..compare_trees(&tree, &reference, &seed, &strategy)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub corpus_path: PathBuf,
    pub reference_path: PathBuf,
    pub concepts: usize,
    pub saplings: usize,
    pub nodes: usize,
    pub users: usize,
    pub ambiguous_stems: Vec<String>,
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "concepts        {}", self.concepts)?;
        writeln!(f, "saplings        {}", self.saplings)?;
        writeln!(f, "nodes           {}", self.nodes)?;
        writeln!(f, "users           {}", self.users)?;
        writeln!(
            f,
            "ambiguous stems {} [{}]",
            self.ambiguous_stems.len(),
            self.ambiguous_stems.join(", ")
        )?;
        writeln!(f, "corpus          {}", self.corpus_path.display())?;
        write!(f, "reference       {}", self.reference_path.display())
    }
}

/// Generate a taxonomy and a sapling corpus sampled from it, and write both.
pub fn run_synth(gen: &GenConfig, out_dir: &Path) -> Result<SynthSummary> {
    let tax = generate_taxonomy(gen)?;
    let sampled = sample_saplings(&tax, gen)?;
    create_dir(out_dir)?;
    let corpus_path = out_dir.join(CORPUS_FILE);
    let reference_path = out_dir.join(REFERENCE_FILE);
    let file = File::create(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
    let mut w = BufWriter::new(file);
    write_saplings(&sampled.saplings, &mut w)?;
    w.flush().map_err(|e| Error::io(&corpus_path, e))?;
    let reference = folksonomy_bytes(&taxonomy_records(&tax.taxonomy))?;
    write_file(&reference_path, &reference)?;
    let users: std::collections::BTreeSet<&str> = sampled.saplings.iter().map(|s| s.user.as_str()).collect();
    Ok(SynthSummary {
        corpus_path,
        reference_path,
        concepts: tax.taxonomy.len(),
        saplings: sampled.saplings.len(),
        nodes: sampled.saplings.iter().map(|s| 1 + s.leaves.len()).sum(),
        users: users.len(),
        ambiguous_stems: tax.ambiguous_stems().into_iter().map(String::from).collect(),
    })
}

/// DOT text of a stored folksonomy.
pub fn run_export_dot(folksonomy: &Path) -> Result<String> {
    Ok(read_folksonomy(folksonomy)?.to_dot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rap::{satisfies_single_parent, Algorithm};
    use crate::stem::stem_name;

    /// "bird" under "pets" and under "wildlife", close enough by tags to merge.
    fn bird_corpus() -> Vec<Sapling> {
        let text = include_str!("../examples/data/birds.jsonl");
        parse_saplings(text.as_bytes()).unwrap().saplings
    }

    #[test]
    fn content_hash_matches_git_blob() {
        // `printf 'hello\n' | git hash-object --stdin` uses SHA-1; check the framing with SHA-256 instead
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn rap_separates_bird_senses() {
        let cfg = RunConfig {
            algorithm: Algorithm::Rap,
            ..Default::default()
        };
        let learned = learn(&bird_corpus(), &cfg).unwrap();
        let birds: Vec<&FolkCluster> = learned
            .folksonomy
            .clusters
            .iter()
            .filter(|c| c.stem == "bird")
            .collect();
        assert_eq!(birds.len(), 2);
        let parents: Vec<&str> = birds
            .iter()
            .map(|c| learned.folksonomy.clusters[c.parent_cluster_id.unwrap()].stem.as_str())
            .collect();
        let mut parents = parents;
        parents.sort_unstable();
        assert_eq!(parents, [stem_name("pets"), stem_name("wildlife")]);
        let parent: Vec<_> = (0..learned.corpus.len()).map(|i| learned.corpus.parent(i)).collect();
        assert!(satisfies_single_parent(&parent, &learned.exemplar_of));
    }

    #[test]
    fn ap_merges_bird_senses_with_a_conflict() {
        let cfg = RunConfig {
            algorithm: Algorithm::Ap,
            ..Default::default()
        };
        let learned = learn(&bird_corpus(), &cfg).unwrap();
        assert_eq!(learned.conflicts_pre_split, 3);
        // after the split every bird still has a parent and the forest is a tree
        let parent: Vec<_> = (0..learned.corpus.len()).map(|i| learned.corpus.parent(i)).collect();
        assert!(satisfies_single_parent(&parent, &learned.exemplar_of));
    }

    #[test]
    fn empty_corpus_is_an_empty_forest() {
        let learned = learn(&[], &RunConfig::default()).unwrap();
        assert!(learned.folksonomy.is_empty());
        assert!(learned.converged);
    }

    #[test]
    fn taxonomy_records_roundtrip() {
        let tax = Taxonomy::from_parts(vec!["a".into(), "b".into(), "c".into()], vec![None, Some(0), Some(0)]).unwrap();
        let folk = taxonomy_records(&tax);
        folk.validate().unwrap();
        assert_eq!(pick_popular_tree(&folk).unwrap(), tax);
    }
}
