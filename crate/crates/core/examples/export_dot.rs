//! Learn the bird corpus and print the folksonomy as Graphviz DOT.
//!
//!     cargo run --example export_dot | dot -Tsvg > birds.svg

use folksonomy::config::RunConfig;
use folksonomy::pipeline::learn;
use folksonomy::sapling::parse_saplings;

const BIRDS: &str = include_str!("data/birds.jsonl");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let saplings = parse_saplings(BIRDS.as_bytes())?.saplings;
    let learned = learn(&saplings, &RunConfig::default())?;
    print!("{}", learned.folksonomy.to_dot());
    Ok(())
}
