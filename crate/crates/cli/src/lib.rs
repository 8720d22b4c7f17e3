//! Command implementations behind the `surpnov` binary.

pub mod args;
pub mod commands;
pub mod config;

use anyhow::Result;

use args::{Cli, Command};

/// Exit status when some targets could not be scored.
pub const EXIT_PARTIAL: i32 = 3;

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Score(a) => {
            let cfg = config::RunConfig::from_score_args(&a)?;
            let outcome = commands::cmd_score(&cfg)?;
            println!(
                "{}: {} records written, {} already present",
                outcome.records_path.display(),
                outcome.written,
                outcome.existing
            );
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                eprintln!("{} targets failed; see the failures manifest", outcome.failures.len());
                Ok(EXIT_PARTIAL)
            }
        }
        Command::Correlate(a) => {
            let outcome = commands::cmd_correlate(&a)?;
            for path in &outcome.outputs {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Perplexity(a) => {
            let file = commands::cmd_perplexity(&a)?;
            for r in &file.reports {
                println!("{}\t{}\t{:.3}", r.split_name, r.token_count, r.perplexity);
            }
            Ok(0)
        }
        Command::Synthesize(a) => {
            let ds = commands::cmd_synthesize(&a)?;
            println!("{}: {} items", a.out.display(), ds.items().len());
            Ok(0)
        }
    }
}
