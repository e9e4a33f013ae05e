//! Command-line front end.
//!
//! Every flag shows its default in `--help`:
//!
//! ```
//! let cmd = l1ns::cli::command();
//! for sub in cmd.get_subcommands() {
//!     let help = sub.clone().render_long_help().to_string();
//!     for arg in sub.get_arguments() {
//!         let Some(long) = arg.get_long() else { continue };
//!         if long == "help" {
//!             continue;
//!         }
//!         assert!(help.contains(&format!("--{long}")), "{}: --{long} missing", sub.get_name());
//!         let documented = !arg.get_default_values().is_empty()
//!             || arg.get_long_help().or(arg.get_help()).is_some_and(|h| h.to_string().contains("default"));
//!         assert!(documented, "{}: --{long} has no stated default", sub.get_name());
//!     }
//! }
//! ```

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;

use crate::error::{Error, Result};
use crate::eval::{
    distortion_histogram, generate_instance, load_external_dataset, psi_csv, psi_summary,
    sweep_dimension, sweep_nback, write_dataset, EvalSet, MatrixFormat, SweepOptions,
    SyntheticSpec,
};
use crate::io::{load_matrix, read_collection, write_atomic, write_collection, COLLECTION_MAGIC};
use crate::l1_solver::SolverOptions;
use crate::matrix::orthonormalize;
use crate::search::{
    build_index, query_sketched, suggest_dimension, SearchConfig, SketchedIndex, DEFAULT_ALPHA,
};
use crate::subspace::{QueryVector, SubspaceCollection, SubspaceModel};

#[derive(Parser, Debug)]
#[command(name = "l1ns", version, about = "Nearest-subspace search in l1 distance via Cauchy embeddings")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base random seed
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads [default: available cores; env L1NS_THREADS]
    #[arg(long, global = true, env = "L1NS_THREADS")]
    threads: Option<usize>,

    /// Output path [default: stdout where the output is text, otherwise required]
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,

    /// Log level: off, error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Duality-gap tolerance of the l1 solver
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,

    /// Iteration cap of the l1 solver
    #[arg(long, global = true, default_value_t = 200)]
    max_iter: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory (manifest plus per-class files)
    Gen(GenArgs),
    /// Fit one subspace per class of a dataset directory
    Fit(FitArgs),
    /// Build and save a sketched index
    Index(IndexArgs),
    /// Query a saved index
    Query(QueryArgs),
    /// Recognition rate against sketch dimension
    EvalSweep(SweepArgs),
    /// Recall and recognition rate over a (d, n_back) grid
    EvalNback(NbackArgs),
    /// Sample the distortion ratio psi over random sketches
    Distort(DistortArgs),
}

/// A generator spec plus whether it fixed its own seed.
#[derive(Clone, Debug)]
struct GenSpec {
    spec: SyntheticSpec,
    has_seed: bool,
}

fn parse_gen(s: &str) -> std::result::Result<GenSpec, String> {
    let spec = s.parse::<SyntheticSpec>().map_err(|e| e.to_string())?;
    let has_seed = s.split(',').any(|p| p.trim().starts_with("seed="));
    Ok(GenSpec { spec, has_seed })
}

/// Comma-separated integers.
#[derive(Clone, Debug)]
struct List(Vec<usize>);

fn parse_list(s: &str) -> std::result::Result<List, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad integer {p:?}")))
        .collect::<std::result::Result<_, _>>()
        .map(List)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Generator spec, e.g. "n=38,r=9,D=2000,eta=3" (keys n, r, D, eta, eta_max, queries, frac, mag, sigma, seed; default seed is --seed)
    #[arg(long, value_parser = parse_gen)]
    gen: GenSpec,
    /// Training samples written per class
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    /// Matrix file format
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory holding manifest.csv (default: none, required)
    #[arg(long)]
    data: PathBuf,
    /// Subspace rank
    #[arg(long, default_value_t = 9)]
    r: usize,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Dataset directory or a collection file written by `fit` (default: none, required)
    #[arg(long)]
    data: PathBuf,
    /// Subspace rank used when fitting a dataset directory
    #[arg(long, default_value_t = 9)]
    r: usize,
    /// Sketch dimension [default: suggested from r and n with alpha]
    #[arg(long)]
    d: Option<usize>,
    /// Independent sketches
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Candidates kept per trial (stored as the query default)
    #[arg(long, default_value_t = 1)]
    nback: usize,
    /// Exponent in the suggested dimension (r ln n)^(1/alpha)
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Index file (default: none, required)
    #[arg(long)]
    index: PathBuf,
    /// Query matrix file, one query per row or a single column (default: none, required)
    #[arg(long)]
    query: PathBuf,
    /// Candidates kept per trial [default: the value stored in the index]
    #[arg(long)]
    nback: Option<usize>,
    /// Rank candidates by ambient distance [default: off]
    #[arg(long, default_value_t = false)]
    verify: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["gen", "data"])))]
struct Source {
    /// Synthetic instance spec (see `gen`) [default: none; give --gen or --data]
    #[arg(long, value_parser = parse_gen)]
    gen: Option<GenSpec>,
    /// Dataset directory [default: none; give --gen or --data]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Subspace rank used when fitting a dataset directory
    #[arg(long, default_value_t = 9)]
    r: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Ascending sketch dimensions, comma separated [default: the suggested dimension]
    #[arg(long, value_parser = parse_list)]
    d: Option<List>,
    /// Independent sketches per index
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Candidates kept per trial
    #[arg(long, default_value_t = 1)]
    nback: usize,
    /// Pick the winner among candidates by ambient distance [default: off]
    #[arg(long, default_value_t = false)]
    verify: bool,
    /// Fill the wall_ms column, making output run-dependent [default: off]
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Args, Debug)]
struct NbackArgs {
    #[command(flatten)]
    source: Source,
    /// Ascending sketch dimensions, comma separated [default: the suggested dimension]
    #[arg(long, value_parser = parse_list)]
    d: Option<List>,
    /// Candidate counts, comma separated
    #[arg(long, value_parser = parse_list, default_value = "1")]
    nback: List,
    /// Independent sketches per index
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Pick the winner among candidates by ambient distance [default: off]
    #[arg(long, default_value_t = false)]
    verify: bool,
    /// Fill the wall_ms column, making output run-dependent [default: off]
    #[arg(long, default_value_t = false)]
    timing: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["gen", "query"])))]
struct DistortArgs {
    /// Synthetic instance spec supplying q and S [default: none; give --gen or --query with --basis]
    #[arg(long, value_parser = parse_gen)]
    gen: Option<GenSpec>,
    /// Which generated query to use
    #[arg(long, default_value_t = 0)]
    query_index: usize,
    /// Which generated subspace to use [default: the query's label]
    #[arg(long)]
    subspace: Option<usize>,
    /// Query vector file [default: none]
    #[arg(long, requires = "basis")]
    query: Option<PathBuf>,
    /// Subspace basis file, D x r [default: none]
    #[arg(long, requires = "query")]
    basis: Option<PathBuf>,
    /// Sketch dimension
    #[arg(long, default_value_t = 200)]
    d: usize,
    /// Number of random sketches
    #[arg(long, default_value_t = 1000)]
    matrices: usize,
}

/// The clap command tree, for help rendering and tests.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .try_init();

    if let Err(msg) = check_usage(&cli) {
        eprintln!("error: {msg}");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn check_usage(cli: &Cli) -> std::result::Result<(), String> {
    if cli.threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    let needs_out = matches!(cli.command, Command::Gen(_) | Command::Fit(_) | Command::Index(_));
    if needs_out && cli.out.is_none() {
        return Err("this command requires --out".into());
    }
    Ok(())
}

fn solver_options(cli: &Cli) -> Result<SolverOptions> {
    let opts = SolverOptions {
        tolerance: cli.tol,
        max_iterations: cli.max_iter,
        ..SolverOptions::default()
    };
    opts.validate()?;
    Ok(opts)
}

fn execute(cli: &Cli) -> Result<()> {
    let opts = solver_options(cli)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Index(a) => cmd_index(cli, a, &opts),
        Command::Query(a) => cmd_query(cli, a, &opts),
        Command::EvalSweep(a) => cmd_sweep(cli, a, &opts),
        Command::EvalNback(a) => cmd_nback(cli, a, &opts),
        Command::Distort(a) => cmd_distort(cli, a),
    }
}

fn required_out(cli: &Cli) -> &Path {
    cli.out.as_deref().expect("checked before execution")
}

/// Writes text to `--out`, or to stdout when no path was given.
fn emit_text(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn resolve_spec(cli: &Cli, g: &GenSpec) -> SyntheticSpec {
    let mut spec = g.spec.clone();
    if !g.has_seed {
        spec.seed = cli.seed;
    }
    spec
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let spec = resolve_spec(cli, &a.gen);
    let instance = generate_instance(&spec)?;
    let format = match a.format {
        FormatArg::Csv => MatrixFormat::Csv,
        FormatArg::Bin => MatrixFormat::Binary,
    };
    let dir = required_out(cli);
    write_dataset(dir, &instance, a.train_per_class, spec.seed, format)?;
    eprintln!(
        "wrote {} classes and {} queries to {}",
        spec.n,
        instance.queries.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let (collection, _) = load_external_dataset(&a.data, a.r)?;
    let mut buf = Vec::new();
    write_collection(&mut buf, &collection)?;
    write_atomic(required_out(cli), &buf)?;
    eprintln!(
        "fitted {} subspaces of rank {} in R^{}",
        collection.len(),
        collection.rank(),
        collection.ambient_dim()
    );
    Ok(())
}

/// Loads a collection file written by `fit`, or fits a dataset directory.
fn load_collection(path: &Path, r: usize) -> Result<SubspaceCollection> {
    if path.is_dir() {
        return Ok(load_external_dataset(path, r)?.0);
    }
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    if !bytes.starts_with(COLLECTION_MAGIC) {
        return Err(Error::format(
            "subspace collection",
            format!("{} is neither a dataset directory nor a collection file", path.display()),
        ));
    }
    read_collection(&mut bytes.as_slice())
}

/// The explicit `--d`, or the suggested dimension echoed to stderr.
fn resolve_d(d: Option<usize>, r: usize, n: usize, alpha: f64, ambient: usize) -> Result<usize> {
    if let Some(d) = d {
        return Ok(d);
    }
    let suggested = suggest_dimension(r, n, alpha)?;
    let d = suggested.min(ambient - 1);
    if d < suggested {
        eprintln!("suggested d = {suggested} (r={r}, n={n}, alpha={alpha}) capped at D-1 = {d}");
    } else {
        eprintln!("suggested d = {d} (r={r}, n={n}, alpha={alpha})");
    }
    Ok(d)
}

fn cmd_index(cli: &Cli, a: &IndexArgs, opts: &SolverOptions) -> Result<()> {
    let collection = load_collection(&a.data, a.r)?;
    let (n, r, ambient) = (collection.len(), collection.rank(), collection.ambient_dim());
    let d = resolve_d(a.d, r, n, a.alpha, ambient)?;
    let mut config = SearchConfig::new(d)
        .with_trials(a.trials)
        .with_n_back(a.nback)
        .with_seed(cli.seed)
        .with_alpha(a.alpha);
    config.sketch_solver = *opts;
    config.ambient_solver = *opts;
    let index = build_index(&collection, &config)?;
    write_atomic(required_out(cli), &index.to_bytes())?;
    info!("index: n={n} D={ambient} r={r} d={d} trials={}", a.trials);
    Ok(())
}

fn load_queries(path: &Path, ambient: usize) -> Result<Vec<QueryVector>> {
    let m = load_matrix(path)?;
    if m.cols() == 1 && m.rows() == ambient && ambient != 1 {
        return Ok(vec![QueryVector::new(m.column(0), None)?]);
    }
    if m.rows() == 0 || m.cols() != ambient {
        return Err(Error::DimensionMismatch {
            op: "query file",
            left: m.shape(),
            right: (1, ambient),
        });
    }
    (0..m.rows())
        .map(|i| QueryVector::new(m.row(i).to_vec(), None))
        .collect()
}

fn cmd_query(cli: &Cli, a: &QueryArgs, opts: &SolverOptions) -> Result<()> {
    let bytes = fs::read(&a.index).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(a.index.clone()),
        _ => Error::Io(e),
    })?;
    let index = SketchedIndex::from_bytes(&bytes)?;
    let queries = load_queries(&a.query, index.ambient_dim())?;
    let params = index.params();
    let mut config = SearchConfig::new(index.dim())
        .with_trials(index.trials())
        .with_n_back(a.nback.unwrap_or(params.n_back))
        .with_seed(params.seed)
        .with_alpha(params.alpha)
        .with_verify(a.verify);
    config.sketch_solver = *opts;
    config.ambient_solver = *opts;

    let mut csv = String::from("query,rank,subspace_id,distance,verified\n");
    let mut summary = String::new();
    for (k, q) in queries.iter().enumerate() {
        let res = query_sketched(&index, q, &config)?;
        let w = res.winner();
        let _ = writeln!(
            summary,
            "query={k} winner={} distance={} verified={}",
            w.subspace_id, w.distance, res.verified
        );
        for (rank, rec) in res.ranked.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{k},{},{},{},{}",
                rank + 1,
                rec.subspace_id,
                rec.distance,
                res.verified
            );
        }
    }
    std::io::stdout().write_all(summary.as_bytes())?;
    if let Some(p) = &cli.out {
        write_atomic(p, csv.as_bytes())?;
    }
    Ok(())
}

fn eval_set(cli: &Cli, source: &Source, opts: &SolverOptions) -> Result<EvalSet> {
    match (&source.gen, &source.data) {
        (Some(g), _) => {
            let spec = resolve_spec(cli, g);
            EvalSet::from_instance(generate_instance(&spec)?, opts)
        }
        (None, Some(dir)) => {
            let (collection, queries) = load_external_dataset(dir, source.r)?;
            EvalSet::new(collection, queries, opts)
        }
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn sweep_template(cli: &Cli, trials: usize, verify: bool, opts: &SolverOptions) -> SearchConfig {
    let mut t = SearchConfig::new(1)
        .with_trials(trials)
        .with_seed(cli.seed)
        .with_verify(verify);
    t.sketch_solver = *opts;
    t.ambient_solver = *opts;
    t
}

fn d_values(d: &Option<List>, set: &EvalSet) -> Result<Vec<usize>> {
    match d {
        Some(v) => Ok(v.0.clone()),
        None => {
            let c = &set.collection;
            Ok(vec![resolve_d(None, c.rank(), c.len(), DEFAULT_ALPHA, c.ambient_dim())?])
        }
    }
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs, opts: &SolverOptions) -> Result<()> {
    let set = eval_set(cli, &a.source, opts)?;
    let ds = d_values(&a.d, &set)?;
    let template = sweep_template(cli, a.trials, a.verify, opts).with_n_back(a.nback);
    let result = sweep_dimension(&set, &ds, &template, SweepOptions { record_time: a.timing })?;
    emit_text(cli, &result.to_csv())
}

fn cmd_nback(cli: &Cli, a: &NbackArgs, opts: &SolverOptions) -> Result<()> {
    let set = eval_set(cli, &a.source, opts)?;
    let ds = d_values(&a.d, &set)?;
    let template = sweep_template(cli, a.trials, a.verify, opts);
    let result = sweep_nback(&set, &ds, &a.nback.0, &template, SweepOptions { record_time: a.timing })?;
    emit_text(cli, &result.to_csv())
}

fn cmd_distort(cli: &Cli, a: &DistortArgs) -> Result<()> {
    let (q, s) = match (&a.gen, &a.query, &a.basis) {
        (Some(g), _, _) => {
            let instance = generate_instance(&resolve_spec(cli, g))?;
            let q = instance.queries.get(a.query_index).cloned().ok_or_else(|| {
                Error::invalid(format!(
                    "query index {} out of range ({} queries)",
                    a.query_index,
                    instance.queries.len()
                ))
            })?;
            let id = a.subspace.or(q.label()).unwrap_or(0);
            let s = instance
                .collection
                .get(id)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no subspace with id {id}")))?;
            (q, s)
        }
        (None, Some(qp), Some(bp)) => {
            let basis = orthonormalize(&load_matrix(bp)?)?;
            let s = SubspaceModel::new(0, basis)?;
            let mut qs = load_queries(qp, s.ambient_dim())?;
            if qs.len() != 1 {
                return Err(Error::invalid("the query file must hold exactly one vector"));
            }
            (qs.remove(0), s)
        }
        _ => unreachable!("clap requires --gen or --query with --basis"),
    };
    let samples = distortion_histogram(&q, &s, a.d, a.matrices, cli.seed)?;
    let summary = psi_summary(&samples)?;
    eprintln!(
        "psi: q01={} median={} q99={} upper tail heavier: {}",
        summary.q01,
        summary.median,
        summary.q99,
        summary.upper_tail_heavier()
    );
    emit_text(cli, &psi_csv(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["l1ns"]), 1);
        assert_eq!(run(["l1ns", "bogus"]), 1);
        assert_eq!(run(["l1ns", "index", "--d", "3"]), 1);
        assert_eq!(run(["l1ns", "gen", "--gen", "n=2,r=1,D=10,eta=2"]), 1);
        assert_eq!(run(["l1ns", "eval-sweep", "--gen", "n=2,r=1,D=10"]), 1);
        assert_eq!(run(["l1ns", "eval-sweep", "--gen", "n=2,r=1,D=10,eta=2", "--d", "3,x"]), 1);
        assert_eq!(run(["l1ns", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("idx.bin");
        let code = run([
            "l1ns".as_ref(),
            "index".as_ref(),
            "--data".as_ref(),
            dir.path().join("nope").as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }

    #[test]
    fn gen_seed_precedence() {
        let g = parse_gen("n=2,r=1,D=10,eta=2").unwrap();
        assert!(!g.has_seed);
        let g = parse_gen("n=2,r=1,D=10,eta=2,seed=5").unwrap();
        assert!(g.has_seed);
        assert_eq!(g.spec.seed, 5);
    }
}
