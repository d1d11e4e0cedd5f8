//! Command-line front end: attribution of similarity profiles, alignment
//! loss breakdowns, fusion forward passes, gradient checks, and the
//! experiment harness (estimator benchmark, toy training, weight sweeps).
//!
//! Every run is fully determined by its flags. Timing fields are zeroed in
//! the outputs unless --timings is given, so identical invocations produce
//! byte-identical files at any thread count.
//!
//! Exit codes: 0 success, 2 invalid arguments or inputs, 1 runtime failure.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coalign::decoders::DecoderError;
use coalign::fusion::{fusion_forward, FusionError, FusionInput, FusionParams};
use coalign::game::{GameConfig, GameError};
use coalign::gradcheck::{
    check_crf_gradients, check_fusion_gradients, check_loss_gradients, DEFAULT_STEP,
    DEFAULT_TOLERANCE,
};
use coalign::harness::{
    bench_convergence, cells_csv_bytes, estimator_csv_bytes, load_batch, save_report,
    steps_csv_bytes, sweep_alpha_beta, train_toy_alignment, BenchConfig, HarnessError, LossKind,
    RunReport, SynthConfig, TrainConfig,
};
use coalign::loss::{loss_breakdown, LossError};
use coalign::tensor::TensorError;

#[derive(Parser)]
#[command(name = "coalign", version, about = "Coalitional attribution and alignment toolkit")]
struct Cli {
    /// Master seed for every pseudo-random draw.
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,

    /// Softmax temperature of the coalition utility and InfoNCE.
    #[arg(long, global = true, default_value_t = 1.0)]
    tau: f64,

    /// Initial scan stride of the cyclic estimator; defaults to max(1, k/2).
    #[arg(long, global = true)]
    stride: Option<usize>,

    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections; 0 keeps the library default.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Keep real wall-clock timings instead of zeroing them.
    #[arg(long, global = true)]
    timings: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact per-player attribution of a similarity profile.
    ShapleyExact {
        /// Comma-separated player similarities, e.g. 0.9,0.5,0.1.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        sims: Vec<f64>,
    },
    /// Cyclic-scan attribution estimate of a similarity profile.
    ShapleyCyclic {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        sims: Vec<f64>,
    },
    /// Alignment loss breakdown for a batch file.
    AlignLoss {
        /// JSON batch file ({"k", "d", "contexts", "texts", "images"}).
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
        beta: f64,
        /// Task loss the weighted alignment terms are added to.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        main: f64,
    },
    /// Gated cross-attention forward pass on seeded random inputs.
    FusionForward {
        #[arg(long, default_value_t = 3)]
        n_t: usize,
        #[arg(long, default_value_t = 2)]
        n_c: usize,
        #[arg(long, default_value_t = 2)]
        n_v: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 6)]
        d_img: usize,
        /// Shared projection width of queries, keys, and values.
        #[arg(long, default_value_t = 8)]
        width: usize,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradTarget::All)]
        target: GradTarget,
        /// Random instances per target.
        #[arg(long, default_value_t = 20)]
        instances: u64,
    },
    /// Estimator accuracy vs exact values at matched evaluation budgets.
    BenchConvergence {
        /// Comma-separated coalition sizes, each in 1..=8.
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        k_values: Vec<usize>,
        /// Estimator seeds averaged per size.
        #[arg(long, default_value_t = 64)]
        seeds: u64,
    },
    /// Gradient-descend text/image embeddings of one synthetic batch.
    TrainToy {
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        sigma: f64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        lr: f64,
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
        beta: f64,
        #[arg(long, value_enum, default_value_t = KindArg::Shapley)]
        kind: KindArg,
        /// Also write the full run report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one cell per (alpha, beta) pair and report final metrics.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        betas: Vec<f64>,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        sigma: f64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        lr: f64,
        #[arg(long, value_enum, default_value_t = KindArg::Shapley)]
        kind: KindArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GradTarget {
    All,
    Loss,
    Fusion,
    Crf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Shapley,
    Infonce,
}

impl From<KindArg> for LossKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Shapley => LossKind::Shapley,
            KindArg::Infonce => LossKind::Infonce,
        }
    }
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match &e {
            HarnessError::Io { .. } | HarnessError::Diverged { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DecoderError> for CliError {
    fn from(e: DecoderError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write stdout: {e}"))),
    }
}

fn emit_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize output: {e}")))?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn finish_report(report: &mut RunReport, timings: bool) {
    if !timings {
        report.zero_timings();
    }
}

fn save_side_report(report: &RunReport, path: &Option<PathBuf>) -> Result<(), CliError> {
    if let Some(p) = path {
        save_report(report, p)?;
    }
    Ok(())
}

fn default_stride(stride: Option<usize>, k: usize) -> usize {
    stride.unwrap_or_else(|| (k / 2).max(1))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::ShapleyExact { sims } => {
            let game = GameConfig::new(sims.clone(), cli.tau)?;
            let report = game.shapley_exact_subsets()?;
            emit_json(&cli.out, &report)
        }
        Command::ShapleyCyclic { sims } => {
            let game = GameConfig::new(sims.clone(), cli.tau)?;
            let stride = default_stride(cli.stride, sims.len());
            let report = game.shapley_cyclic(stride, cli.seed)?;
            emit_json(&cli.out, &report)
        }
        Command::AlignLoss {
            batch,
            alpha,
            beta,
            main,
        } => {
            let batch = load_batch(batch)?;
            let stride = default_stride(cli.stride, batch.k());
            let breakdown = loss_breakdown(&batch, cli.tau, stride, cli.seed, *alpha, *beta, *main)?;
            emit_json(&cli.out, &breakdown)
        }
        Command::FusionForward {
            n_t,
            n_c,
            n_v,
            d,
            d_img,
            width,
        } => {
            let input = FusionInput::random(*n_t, *n_c, *n_v, *d, *d_img, cli.seed);
            let params = FusionParams::random(*d, *d_img, *width, cli.seed.wrapping_add(1));
            let output = fusion_forward(&input, &params)?;
            let rows: Vec<Vec<f64>> = (0..output.rows()).map(|r| output.row(r).to_vec()).collect();
            emit_json(
                &cli.out,
                &serde_json::json!({
                    "rows": output.rows(),
                    "cols": output.cols(),
                    "data": rows,
                }),
            )
        }
        Command::Gradcheck { target, instances } => {
            if *instances == 0 {
                return Err(CliError::Validation(
                    "instances must be at least 1".into(),
                ));
            }
            let mut summaries = Vec::new();
            let mut all_pass = true;
            let targets: &[GradTarget] = match target {
                GradTarget::All => &[GradTarget::Loss, GradTarget::Fusion, GradTarget::Crf],
                one => std::slice::from_ref(one),
            };
            for t in targets {
                let mut max_rel = 0.0f64;
                for i in 0..*instances {
                    let seed = cli.seed.wrapping_add(i);
                    let report = match t {
                        GradTarget::Loss => check_loss_gradients(
                            5,
                            7,
                            cli.tau,
                            default_stride(cli.stride, 5),
                            0.2,
                            0.4,
                            seed,
                            DEFAULT_STEP,
                        )?,
                        GradTarget::Fusion => {
                            check_fusion_gradients(3, 2, 2, 4, 5, 6, seed, DEFAULT_STEP)?
                        }
                        GradTarget::Crf => check_crf_gradients(5, 3, seed, DEFAULT_STEP)?,
                        GradTarget::All => unreachable!("expanded above"),
                    };
                    max_rel = max_rel.max(report.max_rel_err);
                }
                let pass = max_rel < DEFAULT_TOLERANCE;
                all_pass &= pass;
                summaries.push(serde_json::json!({
                    "target": format!("{t:?}").to_lowercase(),
                    "instances": instances,
                    "max_rel_err": max_rel,
                    "tolerance": DEFAULT_TOLERANCE,
                    "pass": pass,
                }));
            }
            emit_json(&cli.out, &summaries)?;
            if all_pass {
                Ok(())
            } else {
                Err(CliError::Runtime(
                    "analytic and numeric gradients disagree beyond tolerance".into(),
                ))
            }
        }
        Command::BenchConvergence { k_values, seeds } => {
            let cfg = BenchConfig {
                k_values: k_values.clone(),
                tau: cli.tau,
                seeds: *seeds,
                stride: cli.stride,
                seed: cli.seed,
            };
            let mut report = bench_convergence(&cfg)?;
            finish_report(&mut report, cli.timings);
            emit(&cli.out, &estimator_csv_bytes(&report.estimator))
        }
        Command::TrainToy {
            k,
            d,
            sigma,
            steps,
            lr,
            alpha,
            beta,
            kind,
            report,
        } => {
            let cfg = TrainConfig {
                synth: SynthConfig::new(*k, *d, *sigma, cli.seed)?,
                steps: *steps,
                lr: *lr,
                alpha: *alpha,
                beta: *beta,
                tau: cli.tau,
                stride: default_stride(cli.stride, *k),
                kind: (*kind).into(),
            };
            let mut run = train_toy_alignment(&cfg)?;
            finish_report(&mut run, cli.timings);
            save_side_report(&run, report)?;
            emit(&cli.out, &steps_csv_bytes(&run.steps))
        }
        Command::Sweep {
            alphas,
            betas,
            k,
            d,
            sigma,
            steps,
            lr,
            kind,
            report,
        } => {
            let base = TrainConfig {
                synth: SynthConfig::new(*k, *d, *sigma, cli.seed)?,
                steps: *steps,
                lr: *lr,
                alpha: 0.0,
                beta: 0.0,
                tau: cli.tau,
                stride: default_stride(cli.stride, *k),
                kind: (*kind).into(),
            };
            let mut run = sweep_alpha_beta(alphas, betas, &base)?;
            finish_report(&mut run, cli.timings);
            save_side_report(&run, report)?;
            emit(&cli.out, &cells_csv_bytes(&run.cells))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build();
        match pool {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Runtime(format!("cannot build thread pool: {e}"))),
        }
    } else {
        run(&cli)
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
