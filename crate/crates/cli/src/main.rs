//! `r2n` command-line front end. Each subcommand runs one pipeline stage in
//! an experiment directory; `run-all` chains them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use r2n_core::pipeline::{Experiment, ExperimentConfig, PipelineError, StageReport};

#[derive(Parser, Debug)]
#[command(name = "r2n", version, about = "Knowledge-graph completion with mined rules and relational reasoning networks")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed; every stage derives its own seed from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Experiment directory holding all artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "r2n-out")]
    out: PathBuf,
    /// Override any config key, e.g. `--set kge.dim=100`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Rerun stages even if their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a triple file (and optional domain sidecar) into the experiment.
    Ingest(DataArgs),
    /// Per-relation frequency and property statistics as CSV.
    Stats,
    /// Split the graph into train/valid/test, or import a published split.
    Split(SplitArgs),
    /// Mine Horn rules on the training split.
    Mine(MineArgs),
    /// Keep the top-N rules by a ranking criterion.
    Select(SelectArgs),
    /// Ground the selected rules into a factor graph.
    Ground(GroundArgs),
    /// Train the KGE baseline.
    Pretrain(KgeArgs),
    /// Train the reasoning layers on top of the pretrained KGE.
    Finetune(R2nArgs),
    /// Rank test triples with the KGE baseline and the R2N model.
    Evaluate(EvalArgs),
    /// Train and evaluate a grid of (criterion, rule count, seed) cells.
    Ablate(AblateArgs),
    /// Run every stage in order.
    RunAll(DataArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, value_name = "PATH")]
    triples: Option<String>,
    #[arg(long, value_name = "PATH")]
    domains: Option<String>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, value_name = "PATH")]
    train_file: Option<String>,
    #[arg(long, value_name = "PATH")]
    valid_file: Option<String>,
    #[arg(long, value_name = "PATH")]
    test_file: Option<String>,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long)]
    max_body_atoms: Option<String>,
    #[arg(long)]
    min_support: Option<String>,
    #[arg(long)]
    min_head_coverage: Option<String>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// hc, conf or pca.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Select from this rule file instead of the mined rules.
    #[arg(long, value_name = "PATH")]
    rules_file: Option<String>,
}

#[derive(Args, Debug)]
struct GroundArgs {
    /// Keep only groundings whose premises are training facts (true/false).
    #[arg(long)]
    premise_filter: Option<String>,
}

#[derive(Args, Debug)]
struct KgeArgs {
    /// transe, distmult or complex.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
}

#[derive(Args, Debug)]
struct R2nArgs {
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    factor_dim: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Keep KGE tables fixed while training the reasoning layers.
    #[arg(long)]
    freeze_kge: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// raw or filtered.
    #[arg(long)]
    mode: Option<String>,
    /// head, tail or both.
    #[arg(long)]
    side: Option<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated criteria.
    #[arg(long)]
    criteria: Option<String>,
    /// Comma-separated rule counts.
    #[arg(long)]
    counts: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
}

fn pairs(items: &[(&'static str, &Option<String>)]) -> Vec<(&'static str, String)> {
    items.iter().filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone()))).collect()
}

impl Command {
    /// Config keys set by this command's own flags.
    fn flag_overrides(&self) -> Vec<(&'static str, String)> {
        match self {
            Command::Ingest(a) | Command::RunAll(a) => pairs(&[("data.triples", &a.triples), ("data.domains", &a.domains)]),
            Command::Stats => Vec::new(),
            Command::Split(a) => pairs(&[
                ("split.train_file", &a.train_file),
                ("split.valid_file", &a.valid_file),
                ("split.test_file", &a.test_file),
            ]),
            Command::Mine(a) => pairs(&[
                ("mine.max_body_atoms", &a.max_body_atoms),
                ("mine.min_support", &a.min_support),
                ("mine.min_head_coverage", &a.min_head_coverage),
            ]),
            Command::Select(a) => pairs(&[("select.criterion", &a.criterion), ("select.n", &a.n), ("rules.file", &a.rules_file)]),
            Command::Ground(a) => pairs(&[("ground.premise_filter", &a.premise_filter)]),
            Command::Pretrain(a) => pairs(&[("kge.scorer", &a.scorer), ("kge.dim", &a.dim), ("kge.epochs", &a.epochs), ("kge.lr", &a.lr)]),
            Command::Finetune(a) => {
                let mut v = pairs(&[("r2n.layers", &a.layers), ("r2n.factor_dim", &a.factor_dim), ("r2n.epochs", &a.epochs), ("r2n.lr", &a.lr)]);
                if a.freeze_kge {
                    v.push(("r2n.freeze_kge", "true".into()));
                }
                v
            }
            Command::Evaluate(a) => pairs(&[("eval.mode", &a.mode), ("eval.side", &a.side)]),
            Command::Ablate(a) => pairs(&[("ablate.criteria", &a.criteria), ("ablate.counts", &a.counts), ("ablate.seeds", &a.seeds)]),
        }
    }
}

/// Defaults, then the config file, `R2N_*` variables, `--set`, command
/// flags and `--seed`, each overriding the previous.
fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        cfg.merge_text(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    }
    cfg.apply_env(std::env::vars())?;
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in cli.command.flag_overrides() {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &StageReport) {
    let state = if r.skipped { "up to date" } else { "done" };
    println!("[{}] {state}", r.stage);
    for line in r.summary.lines() {
        println!("  {line}");
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let mut exp = Experiment::open(&cli.out, cfg, cli.force)?;
    let reports = match &cli.command {
        Command::Ingest(_) => vec![exp.ingest()?],
        Command::Stats => vec![exp.stats()?],
        Command::Split(_) => vec![exp.split()?],
        Command::Mine(_) => vec![exp.mine()?],
        Command::Select(_) => vec![exp.select()?],
        Command::Ground(_) => vec![exp.ground()?],
        Command::Pretrain(_) => vec![exp.pretrain()?],
        Command::Finetune(_) => vec![exp.finetune()?],
        Command::Evaluate(_) => vec![exp.evaluate()?],
        Command::Ablate(_) => vec![exp.ablate()?],
        Command::RunAll(_) => exp.run_all()?,
    };
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    log::debug!("{cli:?}");
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
