//! `ggm-select`: prox evaluation, GGM solves, synthetic pipeline runs and
//! score-stream replay.
//!
//! Exit codes: 0 success, 2 bad input or flags, 3 numerical failure, 4 I/O.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use ggm_select::io::{
    read_covariance, read_dump_dir, read_json, read_samples_csv, read_vector, write_json,
    write_samples_csv, ReportFile,
};
use ggm_select::node_model::{
    replay_scores, sample_statistics, select_important, standardize_covariance,
};
use ggm_select::pipeline::{recovery_f1, run_pipeline, PipelineConfig, SourceMode};
use ggm_select::{
    oracle_threshold, solve_ggm, solve_threshold, Error, GgmProblem, Mode, PrecisionMethod,
    ProxProblem, SolverOptions, Surrogate, SurrogateKind,
};
use manifest::RunManifest;
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "ggm-select",
    version,
    about = "Group-sparse GGM node selection"
)]
struct Cli {
    /// Seed override (simulate); recorded in every manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for multi-seed simulate sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the scalar thresholding operator.
    Prox(ProxArgs),
    /// Fit the penalized GGM to a covariance or sample file.
    Solve(SolveArgs),
    /// Run the selection pipeline from a JSON config.
    Simulate(SimulateArgs),
    /// Replay a step-record dump into node-value samples.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SurrogateArgs {
    /// Surrogate kind (lp, geman, laplace, log, logarithm, etp, identity).
    /// Without it, geman with epsilon = 0.5.
    #[arg(long)]
    kind: Option<SurrogateKind>,
    /// Surrogate parameter, e.g. `epsilon=0.5`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

impl SurrogateArgs {
    fn build(&self) -> ggm_select::Result<Surrogate> {
        let params: BTreeMap<String, f64> = self.params.iter().cloned().collect();
        match self.kind {
            Some(kind) => Surrogate::new(kind, &params),
            None if params.is_empty() => Surrogate::geman(0.5),
            None => Err(Error::InvalidParameter(
                "--param given without --kind".into(),
            )),
        }
    }
}

#[derive(Args)]
struct ProxArgs {
    #[command(flatten)]
    surrogate: SurrogateArgs,
    #[arg(long)]
    y: f64,
    #[arg(long)]
    lam: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Also report the grid-search answer and its gap.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Covariance matrix: headerless CSV, or JSON {"n", "data"}.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    cov: Option<PathBuf>,
    /// Sample CSV with a header row; covariance and mean are computed from it.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Important node indices (0-based), comma separated.
    #[arg(long, conflicts_with = "h")]
    important: Option<String>,
    /// Take the K nodes of largest mean as the important set.
    #[arg(long)]
    h: Option<usize>,
    /// Per-node means for --h when solving from a covariance file.
    #[arg(long)]
    mean: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    lam: f64,
    #[command(flatten)]
    surrogate: SurrogateArgs,
    #[arg(long, default_value = "important_rows")]
    mode: Mode,
    #[arg(long, default_value = "eigen")]
    precision: PrecisionMethod,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    outer_tol: f64,
    /// Fit the sample correlation instead of the covariance (--samples only).
    #[arg(long, requires = "samples")]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; each run writes to `OUT/seed-S/`.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    beta1: f64,
    #[arg(long, default_value_t = 0.85)]
    beta2: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_indices(s: &str) -> ggm_select::Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("`{t}` is not a node index")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Error,
    Info,
    Debug,
}

static LEVEL: OnceLock<Level> = OnceLock::new();

fn log(level: Level, msg: impl AsRef<str>) {
    if level <= *LEVEL.get().unwrap_or(&Level::Info) {
        eprintln!("{}", msg.as_ref());
    }
}

/// Stdout output suppressed by --quiet.
fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Io { .. } => 4,
        Error::Numerical(_) | Error::IterationLimit { .. } => 3,
        _ => 2,
    }
}

fn create_dir(dir: &Path) -> ggm_select::Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn cmd_prox(args: &ProxArgs) -> ggm_select::Result<()> {
    let g = args.surrogate.build()?;
    let problem = ProxProblem::new(args.y, args.lam, g)?.with_tol(args.tol)?;
    let sol = solve_threshold(&problem)?;
    let mut out = serde_json::json!({
        "x_star": sol.x_star,
        "branch": sol.branch,
        "iterations": sol.iterations,
    });
    if args.oracle {
        let oracle = oracle_threshold(&problem, 1e-4)?;
        out["oracle"] = oracle.into();
        out["gap"] = (sol.x_star - oracle).into();
        out["objective_gap"] = (problem.objective(sol.x_star) - problem.objective(oracle)).into();
    }
    println!("{out}");
    Ok(())
}

fn cmd_solve(args: &SolveArgs, seed: Option<u64>, quiet: bool) -> ggm_select::Result<()> {
    let surrogate = args.surrogate.build()?;
    let mut manifest = RunManifest::start(
        "solve",
        seed,
        serde_json::json!({
            "cov": args.cov, "samples": args.samples, "important": args.important,
            "h": args.h, "mean": args.mean, "tau": args.tau, "lambda": args.lam,
            "surrogate": surrogate, "mode": args.mode, "precision": args.precision,
            "max_iter": args.max_iter, "outer_tol": args.outer_tol,
            "standardize": args.standardize,
        }),
    );

    let (cov, mean) = match (&args.cov, &args.samples) {
        (Some(path), _) => {
            manifest.add_input(path)?;
            let mean = match &args.mean {
                Some(m) => {
                    manifest.add_input(m)?;
                    Some(read_vector(m)?)
                }
                None => None,
            };
            (read_covariance(path)?, mean)
        }
        (None, Some(path)) => {
            manifest.add_input(path)?;
            let samples = read_samples_csv(path)?;
            let (mean, cov) = sample_statistics(&samples)?;
            let cov = if args.standardize {
                standardize_covariance(&cov)
            } else {
                cov
            };
            (cov, Some(mean.iter().copied().collect()))
        }
        (None, None) => unreachable!("clap requires --cov or --samples"),
    };

    let important = match (&args.important, args.h) {
        (Some(list), _) => parse_indices(list)?,
        (None, Some(h)) => {
            let mean = mean.ok_or_else(|| {
                Error::InvalidParameter("--h needs --mean FILE or --samples".into())
            })?;
            if mean.len() != cov.nrows() {
                return Err(Error::Shape(format!(
                    "mean has {} entries for a {}x{} covariance",
                    mean.len(),
                    cov.nrows(),
                    cov.nrows()
                )));
            }
            select_important(&mean, h)?
        }
        (None, None) if args.mode == Mode::FullOffDiag => Vec::new(),
        (None, None) => {
            return Err(Error::InvalidParameter(
                "give the important set with --important or --h".into(),
            ))
        }
    };
    log(Level::Debug, format!("important set {important:?}"));

    let problem = GgmProblem::new(cov, important, args.tau, args.lam, surrogate, args.mode)?;
    let opts = SolverOptions {
        max_outer_iter: args.max_iter,
        outer_tol: args.outer_tol,
        precision_method: args.precision,
        ..SolverOptions::default()
    };
    let report = solve_ggm(&problem, &opts)?;

    create_dir(&args.out)?;
    write_json(&ReportFile::from(&report), &args.out.join("report.json"))?;
    manifest.finish(&args.out.join("manifest.json"))?;

    let mut ranked: Vec<(usize, f64)> = report
        .group_norms
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<String> = ranked
        .iter()
        .take(5)
        .map(|(i, v)| format!("{i}:{v:.6e}"))
        .collect();
    say(
        quiet,
        format!(
            "iterations={} converged={} top_group_norms=[{}]",
            report.iterations,
            report.converged,
            top.join(", ")
        ),
    );
    log(
        Level::Info,
        format!("wrote {}", args.out.join("report.json").display()),
    );
    Ok(())
}

fn load_config(path: &Path) -> ggm_select::Result<PipelineConfig> {
    let mut cfg: PipelineConfig = read_json(path)?;
    // dump directories are relative to the config file
    if let Some(dump) = cfg.dump.as_mut() {
        if dump.is_relative() {
            *dump = path.parent().unwrap_or(Path::new("")).join(&*dump);
        }
    }
    Ok(cfg)
}

fn simulate_one(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    quiet: bool,
) -> ggm_select::Result<()> {
    let seed = (cfg.mode == SourceMode::Planted).then_some(cfg.seed);
    let mut manifest = RunManifest::start("simulate", seed, to_value(cfg));
    manifest.add_input(config_path)?;
    if let Some(dump) = &cfg.dump {
        for file in ggm_select::io::dump_files(dump)? {
            manifest.add_input(&file)?;
        }
    }
    let result = run_pipeline(cfg)?;
    create_dir(out)?;
    write_json(&result.selection, &out.join("selection.json"))?;
    write_json(&ReportFile::from(&result.report), &out.join("report.json"))?;
    write_samples_csv(&result.samples, &out.join("samples.csv"))?;
    let mut summary = format!(
        "selected={:?} important={:?} iterations={} converged={}",
        result.selection.solver_selected,
        result.selection.important_set,
        result.report.iterations,
        result.report.converged
    );
    if let Some(p) = &result.planted {
        let f1 = recovery_f1(&result.selection.solver_selected, &p.true_connected);
        write_json(
            &serde_json::json!({
                "important": p.important,
                "true_connected": p.true_connected,
                "f1": f1,
            }),
            &out.join("planted.json"),
        )?;
        summary = format!("seed={} {summary} f1={f1:.3}", p.seed);
    }
    manifest.finish(&out.join("manifest.json"))?;
    say(quiet, summary);
    log(Level::Info, format!("wrote {}", out.display()));
    Ok(())
}

fn cmd_simulate(
    args: &SimulateArgs,
    seed: Option<u64>,
    jobs: usize,
    quiet: bool,
) -> ggm_select::Result<()> {
    let mut cfg = load_config(&args.config)?;
    let Some(list) = &args.seeds else {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        return simulate_one(&cfg, &args.config, &args.out, quiet);
    };
    let seeds = parse_indices(list)?;
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("--seeds is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<ggm_select::Result<()>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.seed = s as u64;
                simulate_one(&c, &args.config, &args.out.join(format!("seed-{s}")), quiet)
            })
            .collect()
    });
    results.into_iter().collect()
}

fn cmd_score(args: &ScoreArgs, seed: Option<u64>, quiet: bool) -> ggm_select::Result<()> {
    let mut manifest = RunManifest::start(
        "score",
        seed,
        serde_json::json!({ "dump": args.dump, "beta1": args.beta1, "beta2": args.beta2 }),
    );
    for file in ggm_select::io::dump_files(&args.dump)? {
        manifest.add_input(&file)?;
    }
    let records = read_dump_dir(&args.dump)?;
    let samples = replay_scores(&records, args.beta1, args.beta2)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_samples_csv(&samples, &args.out)?;
    manifest.finish(&args.out.with_extension("manifest.json"))?;
    say(
        quiet,
        format!(
            "steps={} nodes={} out={}",
            samples.values().nrows(),
            samples.values().ncols(),
            args.out.display()
        ),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match std::env::var("GGM_SELECT_LOG").as_deref() {
        _ if cli.quiet => Level::Error,
        Err(_) | Ok("") | Ok("info") => Level::Info,
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        Ok(other) => {
            eprintln!("error: GGM_SELECT_LOG must be error, info or debug, got `{other}`");
            return ExitCode::from(2);
        }
    };
    LEVEL.set(level).expect("set once");

    let result = match &cli.command {
        Command::Prox(a) => cmd_prox(a),
        Command::Solve(a) => cmd_solve(a, cli.seed, cli.quiet),
        Command::Simulate(a) => cmd_simulate(a, cli.seed, cli.jobs, cli.quiet),
        Command::Score(a) => cmd_score(a, cli.seed, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log(Level::Error, format!("error: {e}"));
            ExitCode::from(exit_code(&e))
        }
    }
}
