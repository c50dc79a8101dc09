use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cpsde_cli::{
    cmd_check, cmd_gen_data, cmd_sample, cmd_train_denoiser, cmd_train_router, RunConfig,
};

#[derive(Parser)]
#[command(name = "cpsde", version, about = "Cyclic peptide diffusion: train, sample, check")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of `.complex` files to out_dir.
    GenData(Common),
    /// Train the structure denoiser.
    TrainDenoiser(Common),
    /// Train the residue router against a frozen denoiser.
    TrainRouter(Common),
    /// Generate peptides for every length of the configured range.
    Sample(Common),
    /// Run the acceptance checks and print one PASS/FAIL line each.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Isotropic noise instead of the graph operator.
    #[arg(long)]
    no_harmonic: bool,
    /// Keep the initial sequence for the whole run.
    #[arg(long, conflicts_with = "random_seq")]
    fix_seq: bool,
    /// Redraw free residues uniformly at every routing step.
    #[arg(long)]
    random_seq: bool,
    /// Any config key as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        // flags that follow an override end up in the trailing list
        let (mut no_harmonic, mut fix_seq, mut random_seq) =
            (self.no_harmonic, self.fix_seq, self.random_seq);
        let mut config = self.config.clone();
        let mut o = Vec::new();
        let mut it = self.overrides.iter();
        while let Some(a) = it.next() {
            match a.replace('_', "-").as_str() {
                "--no-harmonic" => no_harmonic = true,
                "--fix-seq" => fix_seq = true,
                "--random-seq" => random_seq = true,
                "--config" => config = it.next().map(PathBuf::from),
                _ => o.push(a.clone()),
            }
        }
        if fix_seq && random_seq {
            anyhow::bail!("--fix-seq and --random-seq are exclusive");
        }
        if no_harmonic {
            o.extend(["--harmonic".into(), "false".into()]);
        }
        if fix_seq {
            o.extend(["--seq_mode".into(), "fixed".into()]);
        }
        if random_seq {
            o.extend(["--seq_mode".into(), "random".into()]);
        }
        let env = std::env::var("CPSDE_SEED").ok();
        RunConfig::load(config.as_deref(), &o, env.as_deref())
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Command::GenData(c) => {
            for p in cmd_gen_data(&c.config()?)? {
                println!("{}", p.display());
            }
        }
        Command::TrainDenoiser(c) => {
            println!("{}", cmd_train_denoiser(&c.config()?)?.display());
        }
        Command::TrainRouter(c) => {
            println!("{}", cmd_train_router(&c.config()?)?.display());
        }
        Command::Sample(c) => {
            let s = cmd_sample(&c.config()?)?;
            println!(
                "{} samples written, {} failed",
                s.written.len(),
                s.failures.len()
            );
        }
        Command::Check(c) => return Ok(cmd_check(&c.config()?)?.1),
    }
    Ok(true)
}
