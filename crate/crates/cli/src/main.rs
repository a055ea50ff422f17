//! `roundload`: generate graphs, import them, sweep thread counts and batch
//! sizes, and check round schedules.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use roundload::csvio::{self, NODES_FILE, RELATIONSHIPS_FILE};
use roundload::report::{self, BenchRow};
use roundload::{
    generate, run_import, validate_schedule, GenSpec, GeneratedGraph, GraphModel, GraphStore,
    IdKind, ImportConfig, ImportMode, IngestError, RoundSchedule, ThreadExponent,
};

#[derive(Parser)]
#[command(
    name = "roundload",
    version,
    about = "Conflict-free parallel relationship import"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate nodes.csv and relationships.csv
    Gen(GenArgs),
    /// Import a CSV pair into a fresh in-memory store
    Import(ImportArgs),
    /// Sweep thread counts and batch sizes
    Bench(BenchArgs),
    /// Build and check the round schedule for 2^n workers
    VerifySchedule(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    ErdosRenyi,
    BarabasiAlbert,
    Star,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdKindArg {
    Integer,
    String,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    nodes: Option<u64>,
    /// Edge count (erdos-renyi)
    #[arg(long)]
    edges: Option<u64>,
    /// Edges per new node (barabasi-albert)
    #[arg(long, default_value_t = 2)]
    attach: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = IdKindArg::Integer)]
    id_kind: IdKindArg,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    /// Directory holding nodes.csv and relationships.csv
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    nodes_csv: Option<PathBuf>,
    #[arg(long)]
    relationships_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    retries: u32,
    /// Record node accesses and count isolation violations
    #[arg(long)]
    instrument: bool,
    /// Fail on the first overlapping node access
    #[arg(long)]
    strict: bool,
    /// Hold each batch apply open for this many microseconds
    #[arg(long)]
    hold_us: Option<u64>,
}

#[derive(Args)]
struct ImportArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Worker count, a power of two; 1 runs the serial baseline
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[command(flatten)]
    run: RunArgs,
    /// Append a report row to this CSV
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trial: u32,
    /// Print the order-independent digest of the imported edges
    #[arg(long)]
    dump_snapshot: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    threads: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10000])]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trials: u32,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "bench.csv")]
    report: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    n: u8,
    /// Largest n checked exhaustively
    #[arg(long, default_value_t = 8)]
    max_exhaustive: u8,
    /// Print every round even for n > 3
    #[arg(long)]
    print: bool,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Import(args) => cmd_import(args),
        Command::Bench(args) => cmd_bench(args),
        Command::VerifySchedule(args) => cmd_verify_schedule(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn gen_spec(args: &GraphArgs) -> Result<GenSpec, CliError> {
    let model = args.model.ok_or_else(|| usage("--model is required"))?;
    let nodes = args.nodes.ok_or_else(|| usage("--nodes is required"))?;
    let model = match model {
        ModelArg::ErdosRenyi => GraphModel::ErdosRenyi {
            nodes,
            edges: args
                .edges
                .ok_or_else(|| usage("--edges is required for erdos-renyi"))?,
        },
        ModelArg::BarabasiAlbert => GraphModel::BarabasiAlbert {
            nodes,
            attach: args.attach,
        },
        ModelArg::Star => GraphModel::Star { nodes },
    };
    let id_kind = match args.id_kind {
        IdKindArg::Integer => IdKind::Integer,
        IdKindArg::String => IdKind::Text,
    };
    let spec = GenSpec::new(model, args.seed).with_ids(id_kind);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let spec = gen_spec(&args.graph)?;
    let graph = generate(&spec).map_err(|e| usage(e.to_string()))?;
    let (nodes, rels) = csvio::write_graph(&graph, &args.out).context("writing CSV files")?;
    println!("nodes={} path={}", graph.nodes.len(), nodes.display());
    println!(
        "relationships={} path={}",
        graph.edges.len(),
        rels.display()
    );
    Ok(())
}

fn load_input(input: &InputArgs) -> Result<GeneratedGraph, CliError> {
    let dir = input.data.as_deref().unwrap_or(Path::new("."));
    let nodes = input
        .nodes_csv
        .clone()
        .unwrap_or_else(|| dir.join(NODES_FILE));
    let rels = input
        .relationships_csv
        .clone()
        .unwrap_or_else(|| dir.join(RELATIONSHIPS_FILE));
    Ok(GeneratedGraph {
        nodes: csvio::read_nodes(&nodes).context("reading nodes")?,
        edges: csvio::read_relationships(&rels).context("reading relationships")?,
    })
}

fn import_config(
    threads: usize,
    batch_size: usize,
    run: &RunArgs,
) -> Result<(ImportConfig, ImportMode), CliError> {
    let n = ThreadExponent::from_threads(threads).map_err(|e| usage(e.to_string()))?;
    let config = ImportConfig::new(n, batch_size)
        .and_then(|c| c.with_retries(run.retries))
        .map_err(|e| usage(e.to_string()))?
        .instrumented(run.instrument)
        .strict(run.strict);
    let mode = if threads == 1 {
        ImportMode::Serial
    } else {
        ImportMode::Scheduled
    };
    Ok((config, mode))
}

fn fresh_store(run: &RunArgs) -> GraphStore {
    let store = GraphStore::new();
    store.set_apply_hold(run.hold_us.map(Duration::from_micros));
    store
}

fn cmd_import(args: ImportArgs) -> CliResult {
    let (config, mode) = import_config(args.threads, args.batch_size, &args.run)?;
    let graph = load_input(&args.input)?;
    let store = fresh_store(&args.run);
    let node_count = graph.nodes.len();
    let report = run_import(graph.nodes, graph.edges, &config, mode, &store).map_err(runtime)?;

    let row = BenchRow::from_report(args.batch_size, args.trial, &report);
    println!("threads={} batch_size={}", row.threads, row.batch_size);
    println!("nodes={node_count} relationships={}", report.edges);
    println!(
        "node_ms={:.3} rel_ms={:.3} binning_ms={:.3}",
        row.node_ms,
        row.rel_ms,
        report.binning.as_secs_f64() * 1e3
    );
    println!(
        "commits={} retries={} violations={}",
        report.commits, report.retries, report.violations
    );
    println!(
        "max_bin_load={} mean_bin_load={:.3} heaviest_line_fraction={:.4}",
        report.skew.max_bin_load,
        report.skew.mean_bin_load,
        report.skew.heaviest_line_fraction()
    );
    if args.dump_snapshot {
        let snapshot = store
            .snapshot_edges()
            .map_err(|e| CliError::Runtime(e.into()))?;
        println!("snapshot_digest={:016x}", snapshot.digest());
    }
    if let Some(path) = &args.report {
        report::append_rows(path, &[row]).context("writing report")?;
    }
    Ok(())
}

fn runtime(e: IngestError) -> CliError {
    CliError::Runtime(e.into())
}

fn cmd_bench(args: BenchArgs) -> CliResult {
    if args.threads.is_empty() || args.batch_sizes.is_empty() {
        return Err(usage("--threads and --batch-sizes must be non-empty"));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let mut cells = Vec::new();
    for &threads in &args.threads {
        for &batch in &args.batch_sizes {
            cells.push((threads, batch, import_config(threads, batch, &args.run)?));
        }
    }

    let graph = if args.input.data.is_some() || args.input.nodes_csv.is_some() {
        load_input(&args.input)?
    } else {
        let spec = gen_spec(&args.graph)?;
        generate(&spec).map_err(|e| usage(e.to_string()))?
    };
    println!(
        "graph: {} nodes, {} relationships",
        graph.nodes.len(),
        graph.edges.len()
    );

    let mut rows = Vec::new();
    let mut failures = 0;
    for (threads, batch, (config, mode)) in cells {
        for trial in 1..=args.trials {
            let store = fresh_store(&args.run);
            match run_import(
                graph.nodes.clone(),
                graph.edges.clone(),
                &config,
                mode,
                &store,
            ) {
                Ok(report) => {
                    let row = BenchRow::from_report(batch, trial, &report);
                    println!(
                        "threads={threads} batch_size={batch} trial={trial} rel_ms={:.3} retries={} violations={}",
                        row.rel_ms, row.retries, row.violations
                    );
                    rows.push(row);
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("threads={threads} batch_size={batch} trial={trial} failed: {e}");
                }
            }
        }
    }
    report::append_rows(&args.report, &rows).context("writing report")?;

    println!("optimal batch size per thread count:");
    for (threads, (batch, mean)) in report::optimal_batch_sizes(&rows) {
        println!("  threads={threads} batch_size={batch} mean_rel_ms={mean:.3}");
    }
    if failures > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{failures} trial(s) failed"
        )));
    }
    Ok(())
}

fn cmd_verify_schedule(args: VerifyArgs) -> CliResult {
    let n = ThreadExponent::new(args.n).map_err(|e| usage(e.to_string()))?;
    if args.n > args.max_exhaustive {
        return Err(usage(format!(
            "n = {} exceeds --max-exhaustive {}; raise it to check this schedule",
            args.n, args.max_exhaustive
        )));
    }
    let schedule = RoundSchedule::build(n);
    println!(
        "n={} threads={} grid={}x{} rounds={}",
        n,
        n.threads(),
        n.grid_side(),
        n.grid_side(),
        schedule.len()
    );
    if args.n <= 3 || args.print {
        for round in schedule.iter() {
            println!("{round}");
        }
    }
    let violations = validate_schedule(&schedule);
    if violations.is_empty() {
        println!("ok: every bin scheduled exactly once, no coordinate shared within a round");
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Err(CliError::Runtime(anyhow::anyhow!(
            "{} schedule violation(s)",
            violations.len()
        )))
    }
}
