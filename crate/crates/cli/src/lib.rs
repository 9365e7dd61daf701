//! Scenario-driven runner for the virtual CBC and open-loop experiments.
//!
//! A run validates the scenario before touching the file system, executes
//! the requested stages (per noise level and seed in a thread pool) and
//! records what it wrote in `manifest.json`.

pub mod run;
pub mod scenario;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use run::{RunOptions, Stage};
use scenario::{Scenario, SchemaErrors};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CBC_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    /// Bad scenario or arguments; nothing was written.
    Validation(SchemaErrors),
    Runtime(anyhow::Error),
    /// The run finished but some jobs failed.
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) | CliError::Partial { .. } => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid scenario:\n{e}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
            CliError::Partial { failed, total } => write!(f, "{failed} of {total} jobs failed; see manifest.json"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cbc", version, about = "Virtual control-based continuation and open-loop sweep experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic S-curve, frequency response and fold locations.
    Analytic(RunArgs),
    /// Collocation branch with stability at the control frequency.
    Colloc(RunArgs),
    /// Open-loop sweeps and modal estimate for every level and seed.
    Sweep(RunArgs),
    /// CBC amplitude sweep for every level and seed.
    Cbc(RunArgs),
    /// Both methods plus identification, table and comparison.
    Identify(RunArgs),
    /// Every stage, or those picked with --stage.
    Full(FullArgs),
    /// Rebuild table.csv and comparison.json from a finished run.
    Table(TableArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario TOML file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Run this single seed instead of the scenario's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-job stages.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory; overrides the environment and the scenario.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FullArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Restrict the run to these stages (repeatable).
    #[arg(long, value_enum)]
    pub stage: Vec<Stage>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Directory of a finished run holding manifest.json.
    #[arg(long)]
    pub from: PathBuf,
    /// Where to write the table; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Output directory precedence: flag, environment, scenario, `out/<name>`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, scn: &Scenario) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    match &scn.output_dir {
        Some(d) => PathBuf::from(d),
        None => Path::new("out").join(&scn.name),
    }
}

fn run_stages(args: &RunArgs, stages: Vec<Stage>, command: &str) -> Result<(), CliError> {
    let (scn, sha) = Scenario::load(&args.config).map_err(CliError::Validation)?;
    if args.jobs == 0 {
        return Err(CliError::Validation(SchemaErrors(vec!["--jobs: must be at least 1".into()])));
    }
    let env = std::env::var(OUT_DIR_ENV).ok();
    let opts = RunOptions {
        stages,
        out_dir: resolve_out_dir(args.out.as_deref(), env.as_deref(), &scn),
        seeds: args.seed.map_or_else(|| scn.seeds.clone(), |s| vec![s]),
        jobs: args.jobs,
        command: command.to_string(),
    };
    let m = run::execute(&scn, &sha, &opts).map_err(CliError::Runtime)?;
    eprintln!("wrote {} ({:.1} s)", opts.out_dir.join(run::MANIFEST_FILE).display(), m.wall_clock_s);
    match m.failed_jobs() {
        0 => Ok(()),
        failed => Err(CliError::Partial { failed, total: m.jobs.len() }),
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analytic(a) => run_stages(&a, vec![Stage::Analytic], "analytic"),
        Command::Colloc(a) => run_stages(&a, vec![Stage::Colloc], "colloc"),
        Command::Sweep(a) => run_stages(&a, vec![Stage::Sweep], "sweep"),
        Command::Cbc(a) => run_stages(&a, vec![Stage::Cbc], "cbc"),
        Command::Identify(a) => run_stages(&a, vec![Stage::Identify], "identify"),
        Command::Full(f) => {
            let stages = if f.stage.is_empty() { Stage::ALL.to_vec() } else { f.stage };
            run_stages(&f.run, stages, "full")
        }
        Command::Table(t) => {
            let out = t.out.unwrap_or_else(|| t.from.clone());
            let files = run::table_from_manifest(&t.from, &out).map_err(CliError::Runtime)?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_precedence() {
        let mut s = Scenario::from_toml(
            "schema_version = 1\nname = \"x\"\n[plant]\nf_n_hz = 20.0\ntilde = { mu_t = 0.3, nu_t = 0.0, rho_t = 0.0, b_t = 0.01 }\n",
        )
        .unwrap();
        assert_eq!(resolve_out_dir(None, None, &s), Path::new("out/x"));
        s.output_dir = Some("res".into());
        assert_eq!(resolve_out_dir(None, None, &s), Path::new("res"));
        assert_eq!(resolve_out_dir(None, Some("env"), &s), Path::new("env"));
        assert_eq!(resolve_out_dir(Some(Path::new("flag")), Some("env"), &s), Path::new("flag"));
        assert_eq!(resolve_out_dir(None, Some(""), &s), Path::new("res"));
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let c = Cli::try_parse_from(["cbc", "full", "--config", "a.toml", "--stage", "analytic", "--stage", "colloc", "--jobs", "2"]).unwrap();
        match c.command {
            Command::Full(f) => {
                assert_eq!(f.stage, vec![Stage::Analytic, Stage::Colloc]);
                assert_eq!(f.run.jobs, 2);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
