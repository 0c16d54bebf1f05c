use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcnet_core::graph::{compare_graphs, emit_dot, graph_from_s};
use rcnet_core::io::{model_to_json, parse_model, parse_s_document};
use rcnet_core::linalg::DEFAULT_SKEW_SCALE;
use rcnet_core::metzler::SearchConfig;
use rcnet_core::netgen::{random_rc_instance, GenerateOptions};
use rcnet_core::pipeline::{
    diagonalize_model, exit_code, reconstruct, PipelineConfig, RealizationDocument,
};
use rcnet_core::rotation::default_prune_tol;
use rcnet_core::scaling::{uniqueness_heuristic, JointOptions, Strategy};
use rcnet_core::StateSpaceModel;

/// Recover RC-network realizations from identified state-space models.
///
/// Exit codes: 0 success, 1 input or configuration error, 2 no RC
/// realization exists, 3 search budget exhausted without a feasible point.
#[derive(Parser)]
#[command(name = "rcnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the spectrum of a model and report whether it can be realized.
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Eigenvalue merge tolerance (default 1e-7 |A_hat|_inf).
        #[arg(long)]
        eig_tol: Option<f64>,
    },
    /// Run the full pipeline and write realization.json, network.dot and report.json.
    Reconstruct(ReconstructArgs),
    /// Write a random instance: instance.json, model.json and truth.dot.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        edge_probability: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare two networks given as matrices, realizations or instances.
    Compare {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        reconstructed: PathBuf,
        /// Edge threshold (default 1e-6 max |S_ij| of each document).
        #[arg(long)]
        prune_tol: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        weight_tol: f64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Chebyshev,
    TargetIdentity,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "target-identity")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Least-squares scaling for noisy models.
    #[arg(long)]
    relaxed: bool,
    /// Default 1e-8, or 1e-5 with --relaxed.
    #[arg(long)]
    metzler_tol: Option<f64>,
    /// Default 1e-6 max |S_ij|.
    #[arg(long)]
    prune_tol: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    eig_tol: Option<f64>,
    /// Residual accepted from the joint input/output scaling solve.
    #[arg(long, default_value_t = 1e-8)]
    feas_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_SKEW_SCALE)]
    skew_scale: f64,
    /// Drop the input constraint even if the model carries one.
    #[arg(long)]
    ignore_input: bool,
    #[arg(long)]
    ignore_output: bool,
    /// Stop at the first Metzler point instead of minimizing the 1-norm.
    #[arg(long)]
    no_sparsify: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(path: &Path, err: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<rcnet_core::Error> for Failure {
    fn from(err: rcnet_core::Error) -> Self {
        Failure {
            code: exit_code(&err) as u8,
            message: err.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn load_model(path: &Path) -> Result<StateSpaceModel, Failure> {
    Ok(parse_model(&read(path)?)?)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

fn check(model: &Path, eig_tol: Option<f64>) -> Outcome {
    let model = load_model(model)?;
    let (diag, tol) = diagonalize_model(&model, eig_tol)?;
    let n = model.n();
    println!("eigenvalues: {:?}", diag.eigenvalues);
    println!("eigenvalue tolerance: {tol:.3e}");
    if diag.all_distinct() {
        println!("{n} distinct real eigenvalues");
    } else {
        println!(
            "{n} real eigenvalues in {} blocks: {:?}",
            diag.blocks.len(),
            diag.blocks
        );
    }
    println!(
        "diagonalizable: eigenvector condition {:.3e}, residual {:.3e}",
        diag.condition, diag.eigen_residual
    );
    if model.has_output_constraint() {
        let p = model.c_hat.nrows();
        let advice = uniqueness_heuristic(n, p);
        let verdict = if advice.unique_ray_expected {
            "expected"
        } else {
            "not expected"
        };
        println!(
            "{p} outputs, threshold {:.3}: a unique scaling ray is {verdict}",
            advice.threshold
        );
    }
    if model.has_input_constraint() {
        println!("{} inputs", model.b_hat.as_ref().map_or(0, |b| b.ncols()));
    }
    Ok(0)
}

fn pipeline_config(args: &ReconstructArgs) -> PipelineConfig {
    let strategy = match args.strategy {
        StrategyArg::Chebyshev => Strategy::Chebyshev,
        StrategyArg::TargetIdentity => Strategy::TargetIdentity,
    };
    PipelineConfig {
        strategy,
        relaxed: args.relaxed,
        enforce_input: !args.ignore_input,
        enforce_output: !args.ignore_output,
        eig_tol: args.eig_tol,
        joint: JointOptions {
            restarts: args.restarts,
            max_iters: args.max_iters,
            feas_tol: args.feas_tol,
            seed: args.seed,
        },
        metzler_tol: args.metzler_tol,
        search: SearchConfig {
            restarts: args.restarts,
            max_iters: args.max_iters,
            prune_tol: args.prune_tol,
            skew_scale: args.skew_scale,
            seed: args.seed,
            ..SearchConfig::default()
        },
        sparsify: !args.no_sparsify,
        ..PipelineConfig::default()
    }
}

fn run_reconstruct(args: &ReconstructArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let config = pipeline_config(args);
    let rec = reconstruct(&model, &config).map_err(|e| Failure {
        code: e.exit_code() as u8,
        message: e.to_string(),
    })?;
    let real = rec.realization();
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    let c_target = rec.model.c_target.clone();
    let graph = graph_from_s(&real.s, c_target.as_ref(), real.prune_tol);
    let document = RealizationDocument {
        realization: real.clone(),
        c_target,
    };
    write(&args.out.join("realization.json"), &to_json(&document))?;
    write(&args.out.join("network.dot"), &emit_dot(&graph))?;
    write(&args.out.join("report.json"), &to_json(&rec.report))?;

    let search = &rec.report.search;
    println!(
        "k = {}, {} edges, |S|_1 = {:.6}, Metzler violation {:.3e}",
        rec.report.rotation.k,
        graph.edges.len(),
        search.objective,
        search.metzler_violation
    );
    if rec.feasible() {
        println!("feasible realization written to {}", args.out.display());
        Ok(0)
    } else {
        eprintln!(
            "no Metzler point within {:.1e} among {} candidates; best one written to {}",
            search.metzler_tol,
            search.restarts.len(),
            args.out.display()
        );
        Ok(3)
    }
}

fn generate(n: usize, m: usize, seed: u64, edge_probability: f64, out: &Path) -> Outcome {
    let opts = GenerateOptions {
        edge_probability,
        ..GenerateOptions::default()
    };
    let inst = random_rc_instance(n, m, &opts, seed)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let graph = graph_from_s(
        &inst.s_true,
        Some(&inst.c_target),
        default_prune_tol(&inst.s_true),
    );
    write(&out.join("instance.json"), &to_json(&inst))?;
    write(
        &out.join("model.json"),
        &(model_to_json(&inst.model()) + "\n"),
    )?;
    write(&out.join("truth.dot"), &emit_dot(&graph))?;
    println!("{} edges, written to {}", inst.edges.len(), out.display());
    Ok(0)
}

fn compare(
    truth: &Path,
    rec: &Path,
    prune_tol: Option<f64>,
    weight_tol: f64,
    out: Option<&Path>,
) -> Outcome {
    let load = |path: &Path| -> Result<_, Failure> {
        let doc = parse_s_document(&read(path)?)?;
        let tol = prune_tol.unwrap_or_else(|| default_prune_tol(&doc.s));
        Ok(graph_from_s(&doc.s, doc.c_target.as_ref(), tol))
    };
    let report = compare_graphs(&load(truth)?, &load(rec)?, weight_tol)?;
    let text = to_json(&report);
    print!("{text}");
    if let Some(path) = out {
        write(path, &text)?;
    }
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Check { model, eig_tol } => check(&model, eig_tol),
        Command::Reconstruct(args) => run_reconstruct(&args),
        Command::Generate {
            n,
            m,
            seed,
            edge_probability,
            out,
        } => generate(n, m, seed, edge_probability, &out),
        Command::Compare {
            truth,
            reconstructed,
            prune_tol,
            weight_tol,
            out,
        } => compare(
            &truth,
            &reconstructed,
            prune_tol,
            weight_tol,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    // usage errors belong to the configuration class, not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
