//! The ambiguous "bird": pet birds and wild birds share a name but live under
//! different parents. Plain AP lumps them together and the recovery step has
//! to cut the conflicting leaves loose; RAP keeps the two senses apart.
//!
//!     cargo run --example bird_senses

use folksonomy::config::RunConfig;
use folksonomy::folksonomy::Folksonomy;
use folksonomy::pipeline::learn;
use folksonomy::rap::Algorithm;
use folksonomy::sapling::parse_saplings;

const BIRDS: &str = include_str!("data/birds.jsonl");

fn print_forest(folk: &Folksonomy) {
    fn walk(folk: &Folksonomy, children: &[Vec<usize>], c: usize, depth: usize) {
        let cluster = &folk.clusters[c];
        println!("  {}{} ({} users)", "  ".repeat(depth), cluster.stem, cluster.users);
        for &k in &children[c] {
            walk(folk, children, k, depth + 1);
        }
    }
    let children = folk.children();
    for root in folk.roots() {
        walk(folk, &children, root, 0);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let saplings = parse_saplings(BIRDS.as_bytes())?.saplings;
    for algorithm in Algorithm::ALL {
        let cfg = RunConfig {
            algorithm,
            ..Default::default()
        };
        let learned = learn(&saplings, &cfg)?;
        println!(
            "{algorithm}: {} clusters, {} conflicting leaves split off",
            learned.folksonomy.len(),
            learned.conflicts_pre_split
        );
        print_forest(&learned.folksonomy);
    }
    Ok(())
}
