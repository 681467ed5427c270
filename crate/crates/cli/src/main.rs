use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ahmose_core::automl::{leaderboard_table, run_automl, select_top_per_family, GridConfig};
use ahmose_core::dataset::synth::{generate_shift_scenario, ShiftConfig};
use ahmose_core::dataset::{parse_dataset, parse_interest_dataset, Dataset};
use ahmose_core::knowledge::{
    build_intervals, interval_file_string, parse_interval_file, parse_rule_file, rule_file_string,
    IntervalSet, TargetRange,
};
use ahmose_core::project::json::to_canonical_string;
use ahmose_core::project::{
    build_project, export_project, import_project, score_project, PipelineConfig, PipelineError,
    Stage,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ahmose",
    version,
    about = "Model selection by agreement with domain knowledge"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Cross-validated grid search; writes the leaderboard as JSON.
    Automl(AutomlArgs),
    /// Knowledge-base utilities.
    Knowledge {
        #[command(subcommand)]
        command: KnowledgeCommand,
    },
    /// Ranks a project's models by agreement with an interval set.
    Score(ScoreArgs),
    /// Full pipeline: automl, selection, explanations, agreement, export.
    Run(RunArgs),
    /// Serves exported projects over HTTP (read-only).
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Parses a CSV and prints a summary.
    Validate {
        file: PathBuf,
        #[arg(long, default_value = "GTQ")]
        target: String,
        #[arg(long)]
        group_tag: Option<String>,
    },
    /// Writes a synthetic distribution-shift scenario (train.csv, test.csv, rules.json).
    Synth {
        #[arg(long, default_value_t = 93)]
        seed: u64,
        #[arg(long)]
        rows_per_group: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum KnowledgeCommand {
    /// Builds knowledge intervals from a rule table.
    Build {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [1.0, 5.0])]
        bounds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 93)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    top_per_family: usize,
}

#[derive(Args)]
struct AutomlArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value = "GTQ")]
    target: String,
    #[arg(long)]
    group_tag: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    project: PathBuf,
    /// Interval set name inside the project, or a path to an interval file.
    /// Defaults to the project's first set.
    #[arg(long)]
    intervals: Option<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    interest: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, default_value = "GTQ")]
    target: String,
    #[arg(long)]
    group_tag: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Target bounds for interval clamping; defaults to the training target range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    bounds: Option<Vec<f64>>,
    /// Additional authored interval files to score against.
    #[arg(long)]
    intervals: Vec<PathBuf>,
    #[arg(long, default_value = "project")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, env = ahmose_server::BIND_ENV, default_value = ahmose_server::DEFAULT_BIND)]
    bind: SocketAddr,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn bounds(v: &[f64]) -> TargetRange {
    TargetRange { lo: v[0], hi: v[1] }
}

fn load_train(path: &Path, target: &str, group_tag: Option<&str>) -> Result<Dataset> {
    parse_dataset(&read(path)?, target, group_tag)
        .with_context(|| format!("invalid dataset {}", path.display()))
}

fn data_validate(file: &Path, target: &str, group_tag: Option<&str>) -> Result<()> {
    let ds = parse_interest_dataset(&read(file)?, target, group_tag)
        .with_context(|| format!("invalid dataset {}", file.display()))?;
    println!("rows: {}", ds.len());
    println!("labeled: {}", ds.labeled_len());
    println!("features: {}", ds.feature_names().join(", "));
    if group_tag.is_some() {
        let groups: Vec<_> = ds.groups().into_iter().collect();
        println!("groups: {}", groups.join(", "));
    }
    Ok(())
}

fn data_synth(seed: u64, rows_per_group: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = ShiftConfig::default();
    if let Some(n) = rows_per_group {
        cfg.rows_per_group = n;
    }
    let sc = generate_shift_scenario(&cfg, seed)?;
    write(&out.join("train.csv"), &sc.train.to_csv())?;
    write(&out.join("test.csv"), &sc.test.to_csv())?;
    write(&out.join("rules.json"), &rule_file_string(&sc.truth_rules))?;
    println!(
        "wrote {} training rows, {} test rows, {} rules to {}",
        sc.train.len(),
        sc.test.len(),
        sc.truth_rules.rules.len(),
        out.display()
    );
    Ok(())
}

fn automl(args: &AutomlArgs) -> Result<()> {
    let train = load_train(&args.train, &args.target, args.group_tag.as_deref())?;
    let grid = GridConfig::default_with(args.grid.k, args.grid.seed);
    let report = run_automl(&train.labeled().canonicalized(), &grid)?;
    let selected = select_top_per_family(&report.leaderboard, args.grid.top_per_family);
    let doc = serde_json::json!({
        "leaderboard": report.leaderboard,
        "failures": report.failures,
        "selected": selected.iter().map(|e| e.model_id.clone()).collect::<Vec<_>>(),
    });
    write(&args.out, &to_canonical_string(&doc)?)?;
    print!("{}", leaderboard_table(&report.leaderboard));
    for f in &report.failures {
        eprintln!("candidate {} failed: {}", f.model_id, f.error);
    }
    Ok(())
}

fn knowledge_build(rules: &Path, radius: f64, b: &[f64], out: &Path) -> Result<()> {
    let table = parse_rule_file(&read(rules)?)
        .with_context(|| format!("invalid rule file {}", rules.display()))?;
    let built = build_intervals(&table, radius, bounds(b))?;
    for o in &built.omitted {
        eprintln!("omitted {}={}: {}", o.feature, o.label, o.reason);
    }
    write(out, &interval_file_string(&built.set))?;
    for iv in &built.set.intervals {
        println!(
            "{:<6} {:<3} ({}, {}] -> [{:.3}, {:.3}]",
            iv.feature,
            iv.label,
            iv.feature_range.lo,
            iv.feature_range.hi,
            iv.target_range.lo,
            iv.target_range.hi
        );
    }
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let bundle = import_project(&args.project)?;
    let set: IntervalSet = match &args.intervals {
        None => bundle
            .interval_sets
            .first()
            .cloned()
            .ok_or_else(|| anyhow!("project has no interval sets"))?,
        Some(name) => match bundle.interval_set(name) {
            Some(set) => set.clone(),
            None if Path::new(name).is_file() => parse_interval_file(&read(Path::new(name))?)?,
            None => bail!("no interval set or file named `{name}`"),
        },
    };
    let report = score_project(&bundle, &set)?;
    if args.json {
        print!("{}", to_canonical_string(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), PipelineError> {
    let load = |e: anyhow::Error| PipelineError::new(Stage::Load, format!("{e:#}"));
    let train = load_train(&args.train, &args.target, args.group_tag.as_deref()).map_err(load)?;
    let interest = read(&args.interest)
        .and_then(|t| {
            parse_interest_dataset(&t, &args.target, args.group_tag.as_deref())
                .with_context(|| format!("invalid dataset {}", args.interest.display()))
        })
        .map_err(load)?;
    let rules = read(&args.rules)
        .and_then(|t| {
            parse_rule_file(&t)
                .with_context(|| format!("invalid rule file {}", args.rules.display()))
        })
        .map_err(load)?;
    let extra = args
        .intervals
        .iter()
        .map(|p| {
            read(p).and_then(|t| {
                parse_interval_file(&t)
                    .with_context(|| format!("invalid interval file {}", p.display()))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(load)?;
    let config = PipelineConfig {
        name: args.name.clone(),
        grid: GridConfig::default_with(args.grid.k, args.grid.seed),
        top_per_family: args.grid.top_per_family,
        radius: args.radius,
        target_bounds: args.bounds.as_deref().map(bounds),
        extra_interval_sets: extra,
    };
    let bundle = build_project(&train, &interest, &rules, &config)?;
    export_project(&bundle, &args.out).map_err(|e| PipelineError::new(Stage::Export, e))?;
    for set in &bundle.interval_sets {
        let report =
            score_project(&bundle, set).map_err(|e| PipelineError::new(Stage::Summarize, e))?;
        println!("interval set {}", set.name);
        print!("{}", report.table());
    }
    println!("project written to {}", args.out.display());
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let store = ahmose_server::ProjectStore::load(&args.root)?;
    let names: Vec<_> = store.names().map(str::to_owned).collect();
    eprintln!("serving {} on http://{}", names.join(", "), args.bind);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ahmose_server::serve(store, args.bind))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Data { command } => match command {
            DataCommand::Validate {
                file,
                target,
                group_tag,
            } => data_validate(file, target, group_tag.as_deref()),
            DataCommand::Synth {
                seed,
                rows_per_group,
                out,
            } => data_synth(*seed, *rows_per_group, out),
        },
        Command::Automl(args) => automl(args),
        Command::Knowledge { command } => match command {
            KnowledgeCommand::Build {
                rules,
                radius,
                bounds,
                out,
            } => knowledge_build(rules, *radius, bounds, out),
        },
        Command::Score(args) => score(args),
        Command::Run(args) => run(args).map_err(anyhow::Error::from),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
