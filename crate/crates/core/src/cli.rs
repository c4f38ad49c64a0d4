//! Command-line surface: `learn`, `eval`, `synth` and `export-dot`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::write_csv;
use crate::pipeline::{run_eval, run_export_dot, run_learn, run_synth};
use crate::rap::Algorithm;
use crate::simfn::{PreferenceRule, Scheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "folksonomy",
    version,
    about = "Learn deep folksonomies from shallow user hierarchies"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster a sapling corpus into a folksonomy.
    Learn(LearnArgs),
    /// Compare a learned folksonomy with a reference taxonomy.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with its ground-truth taxonomy.
    Synth(SynthArgs),
    /// Render a learned folksonomy as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sapling corpus, one JSON object per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Reference taxonomy (folksonomy records) to score against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// ap or rap.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// local, hybrid or class_hybrid.
    #[arg(long)]
    similarity: Option<Scheme>,
    /// A number, "median" or "quantile:Q".
    #[arg(long)]
    preference: Option<PreferenceRule>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    common_j: Option<usize>,
    #[arg(long)]
    blend_rootroot: Option<f64>,
    #[arg(long)]
    blend_rootleaf: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    converge_window: Option<usize>,
    #[arg(long)]
    min_roots: Option<usize>,
    #[arg(long)]
    neg_cap_scale: Option<f64>,
    /// Keep only saplings reachable from this term.
    #[arg(long)]
    seed_term: Option<String>,
    #[arg(long)]
    hops: Option<usize>,
    /// Keep idiosyncratic leaves.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Learned folksonomy (folksonomy.jsonl).
    learned: PathBuf,
    /// Reference taxonomy (folksonomy records).
    reference: PathBuf,
    /// Run manifest; defaults to manifest.json beside the learned file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Print CSV instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML run configuration; its [synth] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    concepts: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    ambiguous_terms: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    saplings_per_user: Option<usize>,
    #[arg(long)]
    leaf_dropout: Option<f64>,
    #[arg(long)]
    tag_noise: Option<f64>,
    #[arg(long)]
    vocab_per_concept: Option<usize>,
    #[arg(long)]
    tag_draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ExportDotArgs {
    /// Learned folksonomy (folksonomy.jsonl).
    folksonomy: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml_file(p),
        None => Ok(RunConfig::default()),
    }
}

impl LearnArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_ref())?;
        set(&mut cfg.input, self.input.map(Some));
        set(&mut cfg.output, self.output.map(Some));
        set(&mut cfg.reference, self.reference.map(Some));
        set(&mut cfg.algorithm, self.algorithm);
        set(&mut cfg.scheme, self.similarity);
        set(&mut cfg.preference, self.preference);
        set(&mut cfg.top_k, self.top_k);
        set(&mut cfg.common_j, self.common_j);
        set(&mut cfg.blend_rootroot, self.blend_rootroot);
        set(&mut cfg.blend_rootleaf, self.blend_rootleaf);
        set(&mut cfg.damping, self.damping);
        set(&mut cfg.max_iter, self.max_iter);
        set(&mut cfg.converge_window, self.converge_window);
        set(&mut cfg.min_roots, self.min_roots);
        set(&mut cfg.neg_cap_scale, self.neg_cap_scale);
        set(&mut cfg.seed_term, self.seed_term.map(Some));
        set(&mut cfg.hops, self.hops);
        if self.no_prune {
            cfg.prune = false;
        }
        Ok(cfg)
    }
}

impl SynthArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_ref())?;
        set(&mut cfg.output, self.output.map(Some));
        let g = &mut cfg.synth;
        set(&mut g.concepts, self.concepts);
        set(&mut g.depth, self.depth);
        set(&mut g.branching, self.branching);
        set(&mut g.ambiguous_terms, self.ambiguous_terms);
        set(&mut g.users, self.users);
        set(&mut g.saplings_per_user, self.saplings_per_user);
        set(&mut g.leaf_dropout, self.leaf_dropout);
        set(&mut g.tag_noise, self.tag_noise);
        set(&mut g.vocab_per_concept, self.vocab_per_concept);
        set(&mut g.tag_draws, self.tag_draws);
        set(&mut g.seed, self.seed);
        Ok(cfg)
    }
}

/// Write to stdout; a reader that went away (`| head`) is not an error.
fn stdout_write(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Learn(args) => {
            let summary = run_learn(&args.into_config()?)?;
            let m = &summary.manifest;
            let mut text = format!(
                "{} clusters in {} trees from {} saplings ({} rounds{}); conflicts before split {}\n",
                m.clusters,
                m.trees,
                m.saplings_used,
                m.rounds,
                if m.converged { "" } else { ", not converged" },
                m.conflicts_pre_split
            );
            if let Some(r) = &summary.report {
                text += &format!("lr {:.4}  mto {:.4}  opaths {}\n", r.lr, r.mto, r.opaths);
            }
            text += &format!("wrote {}\n", summary.out_dir.display());
            stdout_write(&text)?;
        }
        Command::Eval(args) => {
            let report = run_eval(&args.learned, &args.reference, args.manifest.as_deref())?;
            if args.csv {
                let mut buf = Vec::new();
                write_csv(std::slice::from_ref(&report), &mut buf)?;
                stdout_write(&String::from_utf8_lossy(&buf))?;
            } else {
                stdout_write(&(serde_json::to_string_pretty(&report)? + "\n"))?;
            }
        }
        Command::Synth(args) => {
            let cfg = args.into_config()?;
            let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("synth"));
            stdout_write(&format!("{}\n", run_synth(&cfg.synth, &out)?))?;
        }
        Command::ExportDot(args) => {
            let dot = run_export_dot(&args.folksonomy)?;
            match args.output {
                Some(path) => std::fs::write(&path, dot).map_err(|e| Error::Io { path, source: e })?,
                None => stdout_write(&dot)?,
            }
        }
    }
    Ok(())
}

/// Exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_USAGE
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["folksonomy"]), EXIT_USAGE);
        assert_eq!(run(["folksonomy", "learn", "--algorithm", "kmeans"]), EXIT_USAGE);
        assert_eq!(run(["folksonomy", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "algorithm = \"ap\"\ntop_k = 10\nhops = 3\n").unwrap();
        let cli = Cli::try_parse_from([
            "folksonomy",
            "learn",
            "--config",
            path.to_str().unwrap(),
            "--algorithm",
            "rap",
            "--similarity",
            "hybrid",
            "--preference",
            "median",
            "--no-prune",
        ])
        .unwrap();
        let Command::Learn(args) = cli.command else {
            panic!("learn expected")
        };
        let cfg = args.into_config().unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Rap);
        assert_eq!(cfg.scheme, Scheme::Hybrid);
        assert_eq!(cfg.preference, PreferenceRule::MEDIAN);
        assert_eq!(cfg.top_k, 10);
        assert_eq!(cfg.hops, 3);
        assert!(!cfg.prune);
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), EXIT_DATA);
    }
}
