//! Affinity propagation on a hand-made similarity matrix: two tight groups
//! and a loner, clustered at several preferences.
//!
//!     cargo run --example plain_ap

use folksonomy::appc::{run_ap, ApConfig};
use folksonomy::simfn::SimilarityMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let group = [0, 0, 0, 1, 1, 2];
    let s = |i: usize, j: usize| match (group[i], group[j]) {
        (a, b) if a == b => 0.9,
        (0, 1) | (1, 0) => 0.3,
        _ => 0.05,
    };
    for preference in [0.01, 0.2, 0.5, 0.95] {
        let sim = SimilarityMatrix::from_fn(group.len(), preference, s);
        let c = run_ap(&sim, &ApConfig::default())?;
        println!(
            "preference {preference:<5} exemplars {:?} assign {:?} net {:.2} ({} rounds{})",
            c.exemplars,
            c.assign,
            c.net_similarity,
            c.iterations,
            if c.converged { "" } else { ", not converged" }
        );
    }
    Ok(())
}
