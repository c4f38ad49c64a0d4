//! Parse a sapling corpus, show how names are stemmed and blocked, and what
//! pruning keeps.
//!
//!     cargo run --example ingest [corpus.jsonl]

use std::fs::File;
use std::io::BufReader;

use folksonomy::sapling::{parse_saplings, prune_idiosyncratic_leaves, top_k_tags, Corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/birds.jsonl").into());
    let parsed = parse_saplings(BufReader::new(File::open(&path)?))?;
    println!(
        "{} saplings, {} rejected lines",
        parsed.saplings.len(),
        parsed.rejected.len()
    );
    for r in &parsed.rejected {
        println!("  line {}: {}", r.line, r.reason);
    }

    for s in &parsed.saplings {
        println!("{} {:?} -> {:?}", s.user, s.root.raw_name, s.root.stem);
        for leaf in &s.leaves {
            println!(
                "    {:?} -> {:?}  top tags {:?}",
                leaf.raw_name,
                leaf.stem,
                top_k_tags(&leaf.tags, 4)
            );
        }
    }

    let pruned = prune_idiosyncratic_leaves(&parsed.saplings);
    let before: usize = parsed.saplings.iter().map(|s| s.leaves.len()).sum();
    let after: usize = pruned.iter().map(|s| s.leaves.len()).sum();
    println!("pruning kept {after} of {before} leaves");

    let corpus = Corpus::new(&pruned);
    println!("{} nodes in {} blocks:", corpus.len(), corpus.dense_blocks().len());
    for (stem, nodes) in corpus.dense_blocks() {
        println!("  {stem:<10} {} nodes", nodes.len());
    }
    Ok(())
}
