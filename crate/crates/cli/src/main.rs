//! `tokmoe`: pre-training, fine-tuning, evaluation and theorem checks.
//!
//! Every command takes a flat `key = value` config file (`--config`) and
//! `--key value` overrides; flags beat the file, which beats the defaults.
//! Exit codes: 0 ok, 1 configuration, 2 data or numerics, 3 contract or
//! theorem violation.

mod commands;
mod data;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Command, Suite};
use settings::Settings;

#[derive(Parser)]
#[command(name = "tokmoe", version, about = "Token-MoE graph encoder: training, evaluation and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Self-supervised pre-training on a corpus of graphs.
    Pretrain(Common),
    /// Node-classification fine-tuning over one or more seeds.
    Finetune(Common),
    /// Evaluation suites.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Numerical checks of the stability and routing bounds.
    Verify(Common),
    /// Recompute mean ± std of metrics CSVs and check their summary rows.
    Report(Common),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Accuracy under feature masking or edge dropping of test nodes.
    Perturb(Common),
    /// ID and OOD accuracy with degree buckets.
    DegreeOod(Common),
    /// ID and OOD accuracy with feature-homophily buckets.
    HomophilyOod(Common),
    /// Fit, worst OOD bucket and masked accuracy, averaged.
    Triobj(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to $TOKMOE_OUT, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides as --key value or --key=value (dashes and underscores are interchangeable).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::Pretrain(c) => (Command::Pretrain, c),
        Cmd::Finetune(c) => (Command::Finetune, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Report(c) => (Command::Report, c),
        Cmd::Eval(e) => match e {
            EvalCmd::Perturb(c) => (Command::Eval(Suite::Perturb), c),
            EvalCmd::DegreeOod(c) => (Command::Eval(Suite::DegreeOod), c),
            EvalCmd::HomophilyOod(c) => (Command::Eval(Suite::HomophilyOod), c),
            EvalCmd::Triobj(c) => (Command::Eval(Suite::Triobj), c),
        },
    };
    let result = Settings::resolve(
        &cmd.defaults(),
        common.config.as_deref(),
        common.out.as_deref(),
        &common.overrides,
    )
    .and_then(|s| commands::run(cmd, &s));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tokmoe {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
