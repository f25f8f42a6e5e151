//! Command-line interface: graph generation, model simulation, penalized
//! fitting, debiased inference, and the canned coverage-table experiments.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use netglm::error::{Error, Result};
use netglm::graph::{
    degree_report, from_ising, lattice2d, random_regular, split_independent_set,
};
use netglm::harness::{
    mix_seed, reproduce_table, run_experiment, write_table_csv, ExperimentConfig, TableScale,
};
use netglm::inference::{
    baseline_pipeline, infer_linear_pipeline, infer_quadratic_pipeline, PipelineConfig,
};
use netglm::mple::{fit_mple, lambda_default, SolverOptions};
use netglm::mrf::{gibbs_sampler, sample_covariates, CovariateSpec, ModelSpec};
use netglm::{Dataset, Hypergraph};

#[derive(Parser)]
#[command(
    name = "netglm",
    about = "Debiased inference for logistic regression with network-dependent responses",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an interaction graph and write it as JSON.
    GenGraph(GenGraphArgs),
    /// Simulate covariates and responses from the model on a graph.
    Simulate(SimulateArgs),
    /// Fit the l1-penalized pseudolikelihood estimator.
    Fit(FitArgs),
    /// Debiased inference for a linear or quadratic functional.
    Infer(InferArgs),
    /// Reproduce one of the canned coverage tables.
    Reproduce(ReproduceArgs),
    /// Run an experiment described by a JSON config file.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphKind {
    Lattice,
    Regular,
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long, value_enum)]
    kind: GraphKind,
    /// Lattice rows.
    #[arg(long)]
    rows: Option<usize>,
    /// Lattice columns.
    #[arg(long)]
    cols: Option<usize>,
    /// Vertex count (regular graphs).
    #[arg(long)]
    n: Option<usize>,
    /// Vertex degree (regular graphs).
    #[arg(long)]
    delta: Option<usize>,
    /// Interaction strength; scales edge weights to 2*beta*norm with
    /// norm = 1/4 (lattice) or 1/delta (regular). Omit for unit weights.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Graph JSON produced by gen-graph.
    #[arg(long)]
    graph: PathBuf,
    /// Covariate dimension.
    #[arg(long)]
    d: usize,
    /// Number of leading coordinates of theta set to --theta-value.
    #[arg(long)]
    theta_sparse: usize,
    #[arg(long, default_value_t = 1.0)]
    theta_value: f64,
    /// AR covariance parameter for the covariates.
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 2000)]
    sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV (columns y,x1..xd).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Seed for the independent-set split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constant in the default penalty lambda = c * sqrt(log d / n).
    #[arg(long, default_value_t = 2.0)]
    lambda_c: f64,
    /// Explicit penalty overriding the default.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Coordinate functional: 0-based index j targets theta_j.
    #[arg(long, conflicts_with_all = ["c_file", "quadratic"])]
    c_index: Option<usize>,
    /// Custom functional: file with one coefficient per line (or commas).
    #[arg(long, conflicts_with = "quadratic")]
    c_file: Option<PathBuf>,
    /// Quadratic functional theta' M theta; only "identity" is built in.
    #[arg(long)]
    quadratic: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    lambda_c: f64,
    /// Run the dependence-blind comparator instead of the proposed method.
    #[arg(long, default_value_t = false)]
    baseline: bool,
    /// Output path for the report JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Which coverage table to run (1, 2, or 3).
    #[arg(long)]
    table: u8,
    #[arg(long, value_enum, default_value_t = ScaleArg::Full)]
    scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the per-row replicate count (smoke runs).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Full,
    Desk,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON file mirroring the experiment config schema.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (one row per method).
    #[arg(long)]
    out: PathBuf,
    /// Also dump every replicate record as JSON.
    #[arg(long)]
    records: Option<PathBuf>,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenGraph(args) => gen_graph(args),
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Infer(args) => infer(args),
        Command::Reproduce(args) => reproduce(args),
        Command::Experiment(args) => experiment(args),
    }
}

fn load_graph(path: &PathBuf) -> Result<Hypergraph> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_dataset(path: &PathBuf) -> Result<Dataset> {
    Dataset::read_csv(fs::File::open(path)?)
}

fn gen_graph(args: GenGraphArgs) -> Result<()> {
    let (base, norm) = match args.kind {
        GraphKind::Lattice => {
            let rows = args
                .rows
                .ok_or_else(|| Error::Argument("--rows is required for lattices".into()))?;
            let cols = args
                .cols
                .ok_or_else(|| Error::Argument("--cols is required for lattices".into()))?;
            (lattice2d::<f64>(rows, cols)?, 0.25)
        }
        GraphKind::Regular => {
            let n = args
                .n
                .ok_or_else(|| Error::Argument("--n is required for regular graphs".into()))?;
            let delta = args
                .delta
                .ok_or_else(|| Error::Argument("--delta is required for regular graphs".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (
                random_regular::<f64, _>(n, delta, &mut rng)?,
                1.0 / delta as f64,
            )
        }
    };
    let graph = match args.beta {
        Some(beta) => from_ising(&base, beta, norm)?,
        None => base,
    };
    let report = degree_report(&graph);
    if !report.field_sum_within_unit() {
        eprintln!(
            "warning: maximum per-vertex interaction weight is {:.4} (> 1); \
             the estimator still runs but its guarantees degrade",
            report.max_field_sum
        );
    }
    fs::write(&args.out, serde_json::to_string(&graph)?)?;
    eprintln!(
        "wrote {} ({} vertices, {} edges, max degree {})",
        args.out.display(),
        graph.vertex_count(),
        graph.edges().len(),
        report.max_neighbors
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let n = graph.vertex_count();
    if args.theta_sparse > args.d {
        return Err(Error::Argument(format!(
            "--theta-sparse {} exceeds --d {}",
            args.theta_sparse, args.d
        )));
    }
    let mut theta = Array1::<f64>::zeros(args.d);
    for j in 0..args.theta_sparse {
        theta[j] = args.theta_value;
    }
    let mut cov_rng = ChaCha8Rng::seed_from_u64(mix_seed(args.seed, 2));
    let x = sample_covariates(n, &CovariateSpec::ar(args.d, args.rho)?, &mut cov_rng)?;
    let model = ModelSpec::new(graph, theta)?;
    let mut gibbs_rng = ChaCha8Rng::seed_from_u64(mix_seed(args.seed, 3));
    let y = gibbs_sampler(&model, &x.view(), args.sweeps, &mut gibbs_rng, None)?;
    let data = Dataset::new(x, y)?;
    data.write_csv(fs::File::create(&args.out)?)?;
    eprintln!("wrote {} ({n} rows, d = {})", args.out.display(), args.d);
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let data = load_dataset(&args.data)?;
    if data.n() != graph.vertex_count() {
        return Err(Error::Argument(format!(
            "dataset has {} rows but the graph has {} vertices",
            data.n(),
            graph.vertex_count()
        )));
    }
    let order = netglm::graph::ascending_order(data.n());
    let set = netglm::graph::greedy_strong_independent_set(&graph, &order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let split = split_independent_set(&set, &mut rng)?;
    let lambda = args
        .lambda
        .unwrap_or_else(|| lambda_default(data.n(), data.dim(), args.lambda_c));
    let fit = fit_mple(&data, &graph, &split.s1, lambda, &SolverOptions::default())?;
    let out = json!({
        "theta_tilde": fit.theta_tilde.to_vec(),
        "lambda": fit.lambda,
        "kkt_residual": fit.kkt_residual,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "objective": fit.objective,
        "s1_size": split.s1.len(),
        "set_size": split.s_full.len(),
    });
    fs::write(&args.out, serde_json::to_string_pretty(&out)?)?;
    eprintln!(
        "wrote {} (lambda = {:.6}, kkt = {:.2e}, {} iterations)",
        args.out.display(),
        fit.lambda,
        fit.kkt_residual,
        fit.iterations
    );
    Ok(())
}

fn read_c_file(path: &PathBuf, d: usize) -> Result<Array1<f64>> {
    let text = fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Argument(format!("bad coefficient {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != d {
        return Err(Error::Argument(format!(
            "functional file has {} coefficients, data dimension is {d}",
            values.len()
        )));
    }
    Ok(Array1::from(values))
}

fn infer(args: InferArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let data = load_dataset(&args.data)?;
    let cfg = PipelineConfig::<f64> {
        lambda_c: args.lambda_c,
        ..PipelineConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    let report = if let Some(kind) = &args.quadratic {
        if kind != "identity" {
            return Err(Error::Argument(format!(
                "unsupported quadratic form {kind:?}; only \"identity\" is built in"
            )));
        }
        let m = Array2::<f64>::eye(data.dim());
        let qi = if args.baseline {
            let edgeless = Hypergraph::edgeless(data.n());
            infer_quadratic_pipeline(&data, &edgeless, m.view(), args.alpha, &cfg, &mut rng)?
        } else {
            infer_quadratic_pipeline(&data, &graph, m.view(), args.alpha, &cfg, &mut rng)?
        };
        qi.report_json(json!({"kind": "quadratic", "m": "identity"}))
    } else {
        let (c, label) = if let Some(path) = &args.c_file {
            (
                read_c_file(path, data.dim())?,
                json!({"kind": "custom", "file": path.display().to_string()}),
            )
        } else {
            let index = args.c_index.ok_or_else(|| {
                Error::Argument("one of --c-index, --c-file, or --quadratic is required".into())
            })?;
            if index >= data.dim() {
                return Err(Error::Argument(format!(
                    "--c-index {index} out of range for d = {}",
                    data.dim()
                )));
            }
            let mut c = Array1::<f64>::zeros(data.dim());
            c[index] = 1.0;
            (c, json!({"kind": "coordinate", "index": index}))
        };
        let li = if args.baseline {
            baseline_pipeline(&data, c.view(), args.alpha, &cfg, &mut rng)?
        } else {
            infer_linear_pipeline(&data, &graph, c.view(), args.alpha, &cfg, &mut rng)?
        };
        li.report_json(label)
    };

    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    let scale = match args.scale {
        ScaleArg::Full => TableScale::Full,
        ScaleArg::Desk => TableScale::Desk,
    };
    let rows = reproduce_table(args.table, scale, args.seed, args.reps)?;
    let mut file = fs::File::create(&args.out)?;
    write_table_csv(&rows, &mut file)?;
    file.flush()?;
    for r in &rows {
        eprintln!(
            "table {} | {} | {:<8} coverage {:.3} median_len {:.3} max_len {:.3} ({} failures)",
            r.table, r.row_param, r.method, r.coverage, r.median_len, r.max_len, r.failures
        );
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)?;
    let result = run_experiment(&cfg)?;
    let mut w = csv::Writer::from_writer(fs::File::create(&args.out)?);
    w.write_record([
        "method",
        "coverage",
        "median_len",
        "max_len",
        "reps_effective",
        "failures",
        "runtime_secs",
    ])?;
    for s in &result.summaries {
        w.write_record([
            s.method.to_string(),
            format!("{}", s.coverage),
            format!("{}", s.median_length),
            format!("{}", s.max_length),
            s.reps_effective.to_string(),
            s.failures.to_string(),
            format!("{:.3}", result.runtime_secs),
        ])?;
        eprintln!(
            "{:<8} coverage {:.3} median_len {:.3} max_len {:.3} ({} failures)",
            s.method, s.coverage, s.median_length, s.max_length, s.failures
        );
    }
    w.flush()?;
    if let Some(path) = &args.records {
        fs::write(path, serde_json::to_string_pretty(&result.records)?)?;
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
