use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use prag_core::agent::BackendConfig;
use prag_core::driver::{load_reports, render_summary, RunConfig, Runner, TaskSource};
use prag_core::metrics::{summary_table, transition_report, IterationReport};
use prag_core::trajectory_db::TrajectoryDb;

#[derive(Parser)]
#[command(name = "prag", version, about = "Progressive retrieval-augmented planning in a household grid world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run progressive iterations (and the eval pass in train-eval mode).
    Run(RunArgs),
    /// One pass over a task set with a frozen database.
    Eval(EvalArgs),
    /// Metrics and transition tables from a run directory.
    Report(ReportArgs),
    /// Inspect or validate a database file.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MockBackend {
    ReplayOracle,
    SeededExplorer,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Task set: `bundled` or a directory of task files.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Replace the configured backend with an offline one.
    #[arg(long, value_enum)]
    backend: Option<MockBackend>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(t) = &self.tasks {
            config.tasks = TaskSource::from(t.clone());
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(r) = self.max_retries {
            config.max_retries = r;
        }
        if let Some(m) = self.max_steps {
            config.max_steps = Some(m);
        }
        if let Some(w) = self.workers {
            config.workers = Some(w);
        }
        if let Some(b) = self.backend {
            config.backend = match b {
                MockBackend::ReplayOracle => BackendConfig::ReplayOracle,
                MockBackend::SeededExplorer => BackendConfig::SeededExplorer,
            };
        }
        if let Some(o) = &self.output {
            config.output_dir = Some(o.clone());
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(short, long)]
    iterations: Option<usize>,
    /// Run every iteration even when results stop changing.
    #[arg(long)]
    no_early_stop: bool,
    /// Print the reports as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Database to retrieve from, e.g. `<run>/iter_06/db.jsonl`.
    #[arg(long)]
    db: PathBuf,
    /// Iteration number the pass is logged under.
    #[arg(long, default_value_t = 1)]
    iteration: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `prag run`.
    run_dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum DbCommand {
    /// List records.
    Inspect {
        path: PathBuf,
        /// Also print each record's history.
        #[arg(long)]
        history: bool,
    },
    /// Check the file parses and every record is consistent.
    Validate { path: PathBuf },
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config = args.overrides.load()?;
    if let Some(i) = args.iterations {
        config.iterations = i;
    }
    if args.no_early_stop {
        config.early_stop = false;
    }
    config.validate()?;
    let outcome = Runner::from_config(config)?.run()?;
    if args.json {
        let value = serde_json::json!({ "iterations": outcome.reports, "eval": outcome.eval, "transitions": outcome.transitions });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", render_summary(&outcome.reports, outcome.eval.as_ref(), &outcome.transitions));
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let mut config = args.overrides.load()?;
    if args.overrides.tasks.is_some() {
        config.eval_tasks = None;
    }
    config.validate()?;
    let db = TrajectoryDb::load(&args.db).with_context(|| format!("loading {}", args.db.display()))?;
    let tasks = config.load_eval_tasks()?;
    let runner = Runner::from_config(config)?;
    if db.dimension() != runner.empty_db().dimension() {
        bail!(
            "database dimension {} does not match the encoder dimension {}",
            db.dimension(),
            runner.empty_db().dimension()
        );
    }
    let report = runner.evaluate(&tasks, args.iteration, &db)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", summary_table(std::slice::from_ref(&report)));
    }
    Ok(())
}

fn load_eval(run_dir: &Path) -> Result<Option<IterationReport>> {
    let path = run_dir.join("eval").join("report.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

fn report(args: &ReportArgs) -> Result<()> {
    let reports = load_reports(&args.run_dir)?;
    let eval = load_eval(&args.run_dir)?;
    if reports.is_empty() && eval.is_none() {
        bail!("no iteration reports under {}", args.run_dir.display());
    }
    let transitions = transition_report(&reports);
    if args.json {
        let value = serde_json::json!({ "iterations": reports, "eval": eval, "transitions": transitions });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", render_summary(&reports, eval.as_ref(), &transitions));
    }
    Ok(())
}

fn db(command: &DbCommand) -> Result<()> {
    match command {
        DbCommand::Validate { path } => {
            let db = TrajectoryDb::load(path).with_context(|| format!("invalid database {}", path.display()))?;
            println!("ok: {} records, dimension {}", db.len(), db.dimension());
        }
        DbCommand::Inspect { path, history } => {
            let db = TrajectoryDb::load(path).with_context(|| format!("invalid database {}", path.display()))?;
            println!("dimension {}, {} records", db.dimension(), db.len());
            for r in db.records() {
                println!(
                    "{:<28} iter {:>2}  done {:<5}  steps {:>3}  goal: {}",
                    r.task_id,
                    r.iteration,
                    r.done,
                    r.history.len(),
                    r.goal_text
                );
                if *history {
                    for (i, s) in r.history.iter().enumerate() {
                        println!("    {:>3}. {} -> {}", i + 1, s.action, s.observation);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
        Command::Db { command } => db(command),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let cli = Cli::try_parse_from(["prag", "run", "--seed", "9", "-k", "5", "--backend", "seeded-explorer", "--tasks", "/x"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let config = args.overrides.load().unwrap();
        assert_eq!((config.seed, config.k), (9, 5));
        assert_eq!(config.backend, BackendConfig::SeededExplorer);
        assert_eq!(config.tasks, TaskSource::Dir("/x".into()));
    }
}
