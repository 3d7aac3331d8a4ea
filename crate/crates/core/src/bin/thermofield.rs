use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thermofield_core::cli::{run, Experiment, RunConfig};
use thermofield_core::Error;

#[derive(Parser)]
#[command(name = "thermofield", version, about = "Truncated thermofield laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config entry, e.g. `--set model.lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output path prefix.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment named in the config.
    Run(Common),
    /// Run a specific experiment with the model of the config.
    #[command(name = "exp")]
    Exp {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config without running it.
    Check(Common),
}

fn load(c: &Common, experiment: Option<Experiment>) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(&c.config).map_err(|e| Error::Config(format!("{}: {e}", c.config.display())))?;
    let mut sets = c.set.clone();
    if let Some(e) = experiment {
        sets.push(format!("experiment=\"{}\"", e.name()));
    }
    if let Some(o) = &c.output {
        sets.push(format!("output={:?}", o.display().to_string()));
    }
    if let Some(s) = c.seed {
        sets.push(format!("seed={s}"));
    }
    RunConfig::from_toml_with_overrides(&text, &sets).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", c.config.display())),
        other => other,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(c) => load(c, None).and_then(|cfg| run(&cfg)),
        Cmd::Exp { experiment, common } => load(common, Some(*experiment)).and_then(|cfg| run(&cfg)),
        Cmd::Check(c) => match load(c, None) {
            Ok(cfg) => {
                println!("config ok: experiment {}", cfg.experiment.name());
                return ExitCode::SUCCESS;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(out) => {
            println!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(out.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
