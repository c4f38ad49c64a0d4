//! Similarity matrices of one block under the three scoring schemes.
//!
//!     cargo run --example similarity_schemes [stem]

use folksonomy::sapling::{parse_saplings, Corpus};
use folksonomy::simfn::{Scheme, SimilarityConfig, SimilarityContext};
use folksonomy::stem::stem_name;

const BIRDS: &str = include_str!("data/birds.jsonl");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stem = stem_name(&std::env::args().nth(1).unwrap_or_else(|| "birds".into()));
    let corpus = Corpus::new(&parse_saplings(BIRDS.as_bytes())?.saplings);
    let Some((_, block)) = corpus.dense_blocks().into_iter().find(|(s, _)| *s == stem) else {
        return Err(format!("no block for stem {stem:?}").into());
    };
    // class_hybrid reads cluster labels; before any clustering every node is its own
    let identity: Vec<usize> = (0..corpus.len()).collect();

    for scheme in Scheme::ALL {
        let ctx = SimilarityContext::new(&corpus, SimilarityConfig::with_scheme(scheme))?;
        let s = ctx.build_similarity(&block, Some(&identity))?;
        println!("{scheme} (preference {:.3})", s.preference(0));
        for (a, &i) in block.iter().enumerate() {
            let node = corpus.node(i);
            let parent = corpus.parent(i).map(|p| corpus.node(p).stem.as_str()).unwrap_or("-");
            print!("  {:<4} {:<8}", node.user, parent);
            for b in 0..block.len() {
                print!(" {:6.3}", s.get(a, b));
            }
            println!();
        }
    }
    Ok(())
}
