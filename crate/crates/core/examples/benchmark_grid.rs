//! Every clustering setting on a handful of synthetic corpora, scored against
//! the generating taxonomy and ranked.
//!
//!     cargo run --release --example benchmark_grid [seeds]

use folksonomy::config::RunConfig;
use folksonomy::metrics::{rank_strategies, write_csv};
use folksonomy::pipeline::{learn, report};
use folksonomy::rap::Algorithm;
use folksonomy::simfn::Scheme;
use folksonomy::synthgen::{generate_taxonomy, sample_saplings, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|t| t.parse()).transpose()?.unwrap_or(5);
    let mut reports = Vec::new();
    for seed in 1..=seeds {
        let gen = GenConfig {
            concepts: 40,
            ambiguous_terms: 2,
            users: 60,
            seed,
            ..Default::default()
        };
        let tax = generate_taxonomy(&gen)?;
        let saplings = sample_saplings(&tax, &gen)?.saplings;
        for algorithm in Algorithm::ALL {
            for scheme in Scheme::ALL {
                let cfg = RunConfig {
                    algorithm,
                    scheme,
                    ..Default::default()
                };
                let learned = learn(&saplings, &cfg)?;
                reports.push(report(&learned, &tax.taxonomy, &seed.to_string(), &cfg.strategy())?);
            }
        }
    }
    write_csv(&reports, std::io::stdout().lock())?;
    println!();
    print!("{}", rank_strategies(&reports)?);
    Ok(())
}
