//! `dkmips` — diversity-aware k-maximum inner product search from the
//! command line: query solving, guarantee verification, benchmark sweeps, and
//! vector file conversion.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dkmips::bctree::{BcTree, SearchStats, DEFAULT_LEAF_CAP};
use dkmips::dataset::{self, FileFormat, ItemMatrix, QueryVector};
use dkmips::evalbench::{self, Algo, CategoryMap, QualityData, RatingsTable, SweepGrid};
use dkmips::objective::{Mode, SearchParams};
use dkmips::verify::{self, VerifyConfig, DEFAULT_MU_AVG, DEFAULT_MU_MAX};
use dkmips::Error;

#[derive(Parser)]
#[command(name = "dkmips", version, about = "Diversity-aware k-maximum inner product search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve DkMIPS queries and write one JSON record per query.
    Query(QueryArgs),
    /// Run the randomized verification suites (bounds, equivalence, caches).
    Verify(VerifyArgs),
    /// Sweep a parameter grid and write a CSV report.
    Bench(BenchArgs),
    /// Convert vector files between the binary and csv formats.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliFormat {
    Auto,
    Binary,
    Csv,
}

impl CliFormat {
    fn resolve(self, path: &Path) -> dkmips::Result<FileFormat> {
        match self {
            CliFormat::Binary => Ok(FileFormat::Binary),
            CliFormat::Csv => Ok(FileFormat::Csv),
            CliFormat::Auto => FileFormat::detect(path),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliAlgo {
    Linear,
    Greedy,
    Dual,
    BcGreedy,
    BcDual,
}

impl From<CliAlgo> for Algo {
    fn from(a: CliAlgo) -> Algo {
        match a {
            CliAlgo::Linear => Algo::Linear,
            CliAlgo::Greedy => Algo::Greedy,
            CliAlgo::Dual => Algo::Dual,
            CliAlgo::BcGreedy => Algo::BcGreedy,
            CliAlgo::BcDual => Algo::BcDual,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Avg,
    Max,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Avg => Mode::Avg,
            CliMode::Max => Mode::Max,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Item vector file.
    #[arg(long)]
    data: PathBuf,
    /// Item file format.
    #[arg(long, value_enum, default_value = "auto")]
    data_format: CliFormat,
    /// Query vector file.
    #[arg(long)]
    queries: PathBuf,
    /// Query file format.
    #[arg(long, value_enum, default_value = "auto")]
    queries_format: CliFormat,
    /// Accept negative item coordinates. Tree pruning guarantees only cover
    /// the relevance term in that case.
    #[arg(long)]
    allow_negative: bool,
}

impl DataArgs {
    fn load(&self) -> dkmips::Result<(ItemMatrix, Vec<QueryVector>)> {
        let fmt = self.data_format.resolve(&self.data)?;
        let items = ItemMatrix::load(&self.data, fmt, !self.allow_negative)?;
        let qfmt = self.queries_format.resolve(&self.queries)?;
        let queries = dataset::load_queries(&self.queries, qfmt)?;
        for q in &queries {
            q.check_dim(&items)?;
        }
        Ok((items, queries))
    }
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    algo: CliAlgo,
    #[arg(long, value_enum, default_value = "avg")]
    mode: CliMode,
    /// Result size.
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    /// Relevance/diversity balance in [0,1].
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Diversity scaling factor; defaults to 0.05 (avg) or 0.001 (max).
    #[arg(long)]
    mu: Option<f64>,
    /// Maximum tree leaf size.
    #[arg(long, default_value_t = DEFAULT_LEAF_CAP)]
    leaf_size: usize,
    /// Seed for the tree's split rule.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output JSONL path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    output: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run reduced case counts for a fast smoke check.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    submodular_cases: Option<usize>,
    #[arg(long)]
    cache_traces: Option<usize>,
    #[arg(long)]
    ratio_cases: Option<usize>,
    #[arg(long)]
    datadep_cases: Option<usize>,
    /// Largest instance size handed to the exhaustive oracle.
    #[arg(long)]
    oracle_max_n: Option<usize>,
    /// Result sizes handed to the exhaustive oracle.
    #[arg(long, value_delimiter = ',')]
    oracle_k: Option<Vec<usize>>,
    #[arg(long)]
    chain_builds: Option<usize>,
    #[arg(long)]
    chain_sets: Option<usize>,
    #[arg(long)]
    chain_n: Option<usize>,
    #[arg(long)]
    equiv_cases: Option<usize>,
    #[arg(long)]
    equiv_n: Option<usize>,
    #[arg(long)]
    lambda_one_cases: Option<usize>,
    #[arg(long)]
    tree_builds: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',',
          default_value = "linear,greedy,dual,bc-greedy,bc-dual")]
    algos: Vec<CliAlgo>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "avg")]
    modes: Vec<CliMode>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    lambdas: Vec<f64>,
    #[arg(long, alias = "k", value_delimiter = ',', default_value = "10")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_MU_AVG)]
    mu_avg: f64,
    #[arg(long, default_value_t = DEFAULT_MU_MAX)]
    mu_max: f64,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_LEAF_CAP)]
    leaf_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Item categories CSV (`item_id,category_id`); enables PCC/Cov together
    /// with --ratings.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Ratings CSV (`user_id,item_id,rating`), user id = query position.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Report CSV path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    from: CliFormat,
    #[arg(long, value_enum)]
    to: CliFormat,
    #[arg(long)]
    output: PathBuf,
}

/// One output line of `dkmips query`.
#[derive(Serialize)]
struct QueryRecord<'a> {
    query_id: usize,
    algo: &'a str,
    mode: &'a str,
    k: usize,
    lambda: f64,
    mu: f64,
    items: &'a [usize],
    objective: f64,
    time_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    items_scanned: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    items_pruned_ball: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    items_pruned_cone: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes_pruned: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Query(args) => cmd_query(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Convert(args) => cmd_convert(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 is taken by clap usage errors; 3 flags I/O, 4 the enumeration guard.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Load { .. } => 3,
        Error::TooLarge(_) => 4,
        _ => 1,
    }
}

fn default_mu(mode: Mode) -> f64 {
    match mode {
        Mode::Avg => DEFAULT_MU_AVG,
        Mode::Max => DEFAULT_MU_MAX,
    }
}

fn build_tree_if_needed(
    needs_tree: bool,
    items: &ItemMatrix,
    leaf_size: usize,
    seed: u64,
    allow_negative: bool,
) -> dkmips::Result<Option<BcTree>> {
    if !needs_tree {
        return Ok(None);
    }
    if allow_negative {
        eprintln!(
            "warning: tree pruning bounds assume non-negative items; with \
             --allow-negative the result may diverge from a linear scan"
        );
    }
    Ok(Some(BcTree::build(items, leaf_size, seed)?))
}

fn cmd_query(args: QueryArgs) -> dkmips::Result<()> {
    let (items, queries) = args.data.load()?;
    let algo: Algo = args.algo.into();
    let mode: Mode = args.mode.into();
    let mu = args.mu.unwrap_or_else(|| default_mu(mode));
    let params = SearchParams::new(args.k, args.lambda, mu, mode)?;
    let tree = build_tree_if_needed(
        algo.requires_tree(),
        &items,
        args.leaf_size,
        args.seed,
        args.data.allow_negative,
    )?;
    let runs = evalbench::run_batch(&items, &queries, algo, &params, tree.as_ref())?;

    let mut out = String::new();
    for (query_id, run) in runs.iter().enumerate() {
        let stats: Option<&SearchStats> = run.stats.as_ref();
        let record = QueryRecord {
            query_id,
            algo: algo.as_str(),
            mode: mode.as_str(),
            k: params.k,
            lambda: params.lambda,
            mu: params.mu,
            items: &run.result.items,
            objective: run.result.objective,
            time_ms: run.time_ms,
            items_scanned: stats.map(|s| s.items_scanned),
            items_pruned_ball: stats.map(|s| s.items_pruned_ball),
            items_pruned_cone: stats.map(|s| s.items_pruned_cone),
            nodes_pruned: stats.map(|s| s.nodes_pruned),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    write_output(&args.output, &out)
}

fn cmd_verify(args: VerifyArgs) -> dkmips::Result<()> {
    let mut cfg = if args.quick {
        VerifyConfig::quick(args.seed)
    } else {
        VerifyConfig {
            seed: args.seed,
            ..VerifyConfig::default()
        }
    };
    macro_rules! override_field {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    override_field!(
        submodular_cases,
        cache_traces,
        ratio_cases,
        datadep_cases,
        oracle_max_n,
        chain_builds,
        chain_sets,
        chain_n,
        equiv_cases,
        equiv_n,
        lambda_one_cases,
        tree_builds
    );
    if let Some(ks) = args.oracle_k {
        cfg.oracle_ks = ks;
    }
    let reports = verify::run_all(&cfg)?;
    let mut failed = 0usize;
    for r in &reports {
        println!("{} {}", if r.ok() { "[PASS]" } else { "[FAIL]" }, r);
        if !r.ok() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Logic(format!("{failed} verification suites failed")));
    }
    println!("all {} suites passed (seed {})", reports.len(), cfg.seed);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> dkmips::Result<()> {
    let (items, queries) = args.data.load()?;
    let algos: Vec<Algo> = args.algos.iter().map(|&a| a.into()).collect();
    let modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
    let tree = build_tree_if_needed(
        algos.iter().any(Algo::requires_tree),
        &items,
        args.leaf_size,
        args.seed,
        args.data.allow_negative,
    )?;

    let quality_files = match (&args.categories, &args.ratings) {
        (Some(c), Some(r)) => Some((c, r)),
        (None, None) => None,
        _ => {
            return Err(Error::Parameter(
                "--categories and --ratings must be given together".into(),
            ))
        }
    };
    let loaded = match quality_files {
        Some((c, r)) => {
            let categories = CategoryMap::load(c)?;
            categories.validate(&items)?;
            let ratings = RatingsTable::load(r)?;
            ratings.validate(&items)?;
            Some((categories, ratings))
        }
        None => None,
    };
    let quality = loaded.as_ref().map(|(categories, ratings)| QualityData {
        categories,
        ratings,
    });

    let grid = SweepGrid {
        algos,
        modes,
        lambdas: args.lambdas.clone(),
        ks: args.ks.clone(),
        mu_avg: args.mu_avg,
        mu_max: args.mu_max,
    };
    let rows = evalbench::bench_sweep(
        &items,
        &queries,
        &grid,
        args.repetitions,
        tree.as_ref(),
        quality,
    )?;
    let excluded_pcc: usize = rows.iter().map(|r| r.pcc_excluded).sum();
    let excluded_cov: usize = rows.iter().map(|r| r.cov_excluded).sum();
    evalbench::write_report(&args.output, &rows, quality.is_some())?;
    eprintln!(
        "wrote {} rows to {} ({} queries, {} repetitions)",
        rows.len(),
        args.output.display(),
        queries.len(),
        args.repetitions
    );
    if excluded_pcc + excluded_cov > 0 {
        eprintln!(
            "excluded undefined metrics from the means: {excluded_pcc} pcc, {excluded_cov} cov"
        );
    }
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> dkmips::Result<()> {
    let from = args.from.resolve(&args.input)?;
    let to = match args.to {
        CliFormat::Binary => FileFormat::Binary,
        CliFormat::Csv => FileFormat::Csv,
        CliFormat::Auto => {
            return Err(Error::Parameter(
                "--to must name a concrete format (binary or csv)".into(),
            ))
        }
    };
    let (n, d, data) = dataset::read_vectors(&args.input, from)?;
    dataset::write_vectors(&args.output, to, n, d, &data)?;
    eprintln!(
        "converted {} ({from}) -> {} ({to}): {n} vectors, d={d}",
        args.input.display(),
        args.output.display()
    );
    Ok(())
}

fn write_output(path: &Path, content: &str) -> dkmips::Result<()> {
    if path.as_os_str() == "-" {
        print!("{content}");
        std::io::stdout().flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        return Ok(());
    }
    std::fs::write(path, content).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
