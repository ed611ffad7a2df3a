use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use nfsdf::config::{ExperimentConfig, FlowArm, Mode, OptimizerKind, Overrides};
use nfsdf::{harness, io, Error, Result};

/// Flow-augmented implicit shape experiments on a procedural corpus.
#[derive(Parser, Debug)]
#[command(name = "nfsdf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[arg(long, global = true, value_parser = choice::<Mode>(&["complete", "partial", "mask-only"]))]
    mode: Option<Mode>,

    #[arg(long, global = true, value_parser = choice::<OptimizerKind>(&["gn", "first-order"]))]
    optimizer: Option<OptimizerKind>,

    #[arg(long, global = true, value_parser = choice::<FlowArm>(&["on", "bypass"]))]
    flow: Option<FlowArm>,
}

fn choice<T>(names: &'static [&'static str]) -> impl TypedValueParser<Value = T>
where
    T: std::str::FromStr + Clone + Send + Sync + 'static,
    T::Err: std::fmt::Debug,
{
    PossibleValuesParser::new(names).map(|s| s.parse::<T>().expect("listed values parse"))
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the corpus manifest (shape seeds and family parameters).
    GenCorpus,
    /// Train the decoder and codes, then the flow on the frozen codes.
    Train {
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
    },
    /// Optimise every held-out trial object of the selected protocol.
    Optimize,
    /// Score the optimised shapes against the oracle shapes.
    Eval,
    /// Print every evaluation table as markdown.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    All,
    Decoder,
    Flow,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?.apply(&Overrides {
        seed: cli.seed,
        out: cli.out,
        mode: cli.mode,
        optimizer: cli.optimizer,
        flow: cli.flow,
    });
    let force = cli.force;
    match cli.command {
        Command::GenCorpus => {
            let m = harness::gen_corpus(&cfg, force)?;
            eprintln!(
                "corpus: {} train, {} held-out shapes",
                m.train.len(),
                m.heldout.len()
            );
        }
        Command::Train { stage } => match stage {
            Stage::All => harness::train(&cfg, force)?,
            Stage::Decoder => harness::train_decoder_stage(&cfg, force)?,
            Stage::Flow => harness::train_flow_stage(&cfg, force)?,
        },
        Command::Optimize => {
            let s = harness::optimize(&cfg, force)?;
            eprintln!(
                "{} {}: {} runs, {} failed",
                s.mode,
                s.method,
                s.objects.len(),
                s.failures.len()
            );
            for (name, e) in &s.failures {
                eprintln!("  {name}: {e}");
            }
        }
        Command::Eval => {
            let e = harness::eval(&cfg, force)?;
            for r in &e.rows {
                println!(
                    "{} {} median {:.4} mean {:.4} std {:.4}",
                    r.trial, r.method, r.median, r.mean, r.std
                );
            }
            for (method, name, why) in &e.skipped {
                eprintln!("skipped {method} {name}: {why}");
            }
        }
        Command::Report => {
            let table = harness::report(&cfg.out)?;
            io::write(&cfg.out.join("eval/report.md"), table.as_bytes())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
