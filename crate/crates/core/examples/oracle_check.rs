//! Message passing against brute force on tiny random instances.
//!
//!     cargo run --release --example oracle_check [trials]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use folksonomy::appc::{run_ap, ApConfig};
use folksonomy::rap::{recover_map_rap, run_rap, satisfies_single_parent, BlockInput, RapConfig};
use folksonomy::simfn::SimilarityMatrix;
use folksonomy::synthgen::oracle::{oracle_exhaustive, Constraint, Instance};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, preference: f64) -> SimilarityMatrix {
    let values: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    SimilarityMatrix::from_fn(n, preference, |i, j| values[i * n + j])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials: usize = std::env::args().nth(1).map(|t| t.parse()).transpose()?.unwrap_or(100);
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut ratios = Vec::new();
    for _ in 0..trials {
        let n = rng.random_range(3..=7);
        let s = random_matrix(&mut rng, n, 0.5);
        let ap = run_ap(&s, &ApConfig::default())?;
        let best = oracle_exhaustive(&Instance::single_block(s), Constraint::None)?;
        ratios.push(ap.net_similarity / best.objective);
    }
    summarize("AP  vs unconstrained optimum", &ratios);

    let mut ratios = Vec::new();
    let mut invalid = 0;
    for _ in 0..trials {
        // two saplings: roots share a stem, leaves drawn from three stems
        let mut parent = Vec::new();
        let mut stems = Vec::new();
        for _ in 0..2 {
            let root = parent.len();
            parent.push(None);
            stems.push(usize::MAX);
            for _ in 0..rng.random_range(1..=4) {
                parent.push(Some(root));
                stems.push(rng.random_range(0..3));
            }
        }
        let mut by_stem: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (g, &s) in stems.iter().enumerate() {
            by_stem.entry(s).or_default().push(g);
        }
        let blocks: Vec<BlockInput> = by_stem
            .into_values()
            .map(|nodes| BlockInput {
                sim: random_matrix(&mut rng, nodes.len(), 0.5),
                nodes,
            })
            .collect();
        let inst = Instance::new(
            parent.clone(),
            blocks.iter().map(|b| (b.nodes.clone(), b.sim.clone())).collect(),
        );
        let best = oracle_exhaustive(&inst, Constraint::SingleParent)?;
        let rec = recover_map_rap(&run_rap(&parent, blocks, &RapConfig::default(), None)?, &parent);
        if !satisfies_single_parent(&parent, &rec.exemplar_of) {
            invalid += 1;
        }
        ratios.push(rec.net_similarity / best.objective);
    }
    summarize("RAP vs tree-consistent optimum", &ratios);
    println!("RAP results breaking the tree: {invalid}");
    Ok(())
}

fn summarize(name: &str, ratios: &[f64]) {
    let at = |t: f64| ratios.iter().filter(|&&r| r >= t - 1e-12).count();
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{name}: optimal {}/{n}, >=0.95 {}/{n}, >=0.90 {}/{n}, worst ratio {worst:.3}",
        at(1.0),
        at(0.95),
        at(0.90),
        n = ratios.len()
    );
}
