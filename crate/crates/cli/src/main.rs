use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use quadfeat::experiment::{self, ExperimentConfig, ExperimentKind, RunOptions};
use quadfeat::{verify, Error};

#[derive(Parser)]
#[command(name = "quadfeat", version, about = "Layer-wise training and feature reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Layer-wise training against the random-feature baseline over an n grid.
    Compare(Common),
    /// One Stage-1 pretraining, Stage 2 on each transfer target.
    Transfer(Common),
    /// Reconstruct the hidden features from h⁽¹⁾ and report correlations.
    Reconstruct(Common),
    /// Sliced-W₁ distance of p(x) to a Gaussian across d.
    Universality(Common),
    /// Run the invariant suite.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; keys are the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// Skip runs whose per-run output already exists with the same config hash.
    #[arg(long)]
    resume: bool,
}

fn load_config(kind: ExperimentKind, path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    let mut base = toml::Value::try_from(ExperimentConfig::for_kind(kind))
        .map_err(|e| Error::Config(format!("default config: {e}")))?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let table = base.as_table_mut().expect("config is a table");
        for (k, v) in file {
            table.insert(k, v);
        }
    }
    let cfg: ExperimentConfig = base.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config declares experiment {:?} but the subcommand is {}",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: Common) -> anyhow::Result<()> {
    let mut cfg = load_config(kind, args.config.as_deref())?;
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.print_config {
        print!("{}", toml::to_string(&cfg).context("serializing config")?);
        return Ok(());
    }
    cfg.validate()?;
    let opts = RunOptions { jobs: args.jobs, resume: args.resume };
    match kind {
        ExperimentKind::Compare | ExperimentKind::Transfer => {
            let rows = if kind == ExperimentKind::Compare {
                experiment::run_compare(&cfg, &opts)?
            } else {
                experiment::run_transfer(&cfg, &opts)?
            };
            for r in rows {
                println!("{}\tmae={:.4}\tmse={:.4}\t±{:.4}", r.run_id, r.test_mae, r.test_mse, r.mae_stderr);
            }
        }
        ExperimentKind::Reconstruct => {
            for r in experiment::run_reconstruct(&cfg, &opts)? {
                println!("d={} n1={} seed={} feature={} corr={:.3}", r.d, r.n1, r.seed, r.feature_idx, r.correlation);
            }
        }
        ExperimentKind::Universality => {
            for r in experiment::run_universality(&cfg, &opts)? {
                println!(
                    "d={} sliced_w1={:.5} floor={:.5} excess={:.5}",
                    r.d,
                    r.sliced_w1,
                    r.gaussian_floor,
                    r.sliced_w1 - r.gaussian_floor
                );
            }
        }
        ExperimentKind::Verify => match verify::run_verify(&cfg) {
            Ok(results) => {
                for c in results {
                    println!("PASS {}", c.name);
                }
            }
            Err(e) => {
                let path = cfg.out.join("verify.csv");
                if let Ok(rows) = std::fs::read_to_string(&path) {
                    for line in rows.lines().filter(|l| l.contains(",false,")) {
                        println!("FAIL {}", line.split(',').next().unwrap_or(""));
                    }
                }
                return Err(e.into());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Compare(a) => (ExperimentKind::Compare, a),
        Command::Transfer(a) => (ExperimentKind::Transfer, a),
        Command::Reconstruct(a) => (ExperimentKind::Reconstruct, a),
        Command::Universality(a) => (ExperimentKind::Universality, a),
        Command::Verify(a) => (ExperimentKind::Verify, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
