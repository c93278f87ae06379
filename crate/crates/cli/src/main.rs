use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pf2::cp::FitOptions;
use pf2::experiment::{fit_command, parse_config, run_experiment, ExperimentConfig, Method};
use pf2::falff::{build_falff_tensor, preprocess_tensor, Centering, TimeSeriesSet, WindowSpec};
use pf2::metrics::{clustering_accuracy, fit_score, fms, fms_evolving, match_components, stack_windows};
use pf2::numerics::Seed;
use pf2::simgen::{gen_dataset, BSetup, CSetup, SimConfig};
use pf2::{io, reconstruct_parafac2};

#[derive(Parser)]
#[command(name = "pf2", version, about = "Fit CP and PARAFAC2 models to time-evolving tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit CP or PARAFAC2 to a TNS3 tensor.
    Fit(FitArgs),
    /// Score a fitted model against ground truth.
    Evaluate(EvaluateArgs),
    /// Build a subjects x voxels x windows fALFF tensor from time series.
    Falff(FalffArgs),
    /// Run the simulation grid and write the results table.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with simulation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    b_setup: Option<BArg>,
    #[arg(long, value_enum)]
    c_setup: Option<CArg>,
    /// Noise level eta.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BArg {
    Random,
    Network,
}

#[derive(Clone, Copy, ValueEnum)]
enum CArg {
    Random,
    Trends,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    Fiber,
    VoxelMap,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cp,
    Parafac2,
}

#[derive(Args)]
struct FitOpts {
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constrain C to be non-negative (PARAFAC2 only).
    #[arg(long)]
    nonneg_c: bool,
}

impl FitOpts {
    fn options(&self) -> FitOptions {
        FitOptions {
            rank: self.rank,
            n_starts: self.starts,
            tol: self.tol,
            max_iterations: self.max_iters,
            seed: Seed(self.seed),
            ..FitOptions::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input tensor in TNS3 format.
    tensor: PathBuf,
    #[arg(long, value_enum, default_value = "parafac2")]
    method: MethodArg,
    #[command(flatten)]
    fit: FitOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Directory written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FalffArgs {
    /// One headerless CSV per subject: one row per voxel series, one column
    /// per sample.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 0.01)]
    flo: f64,
    #[arg(long, default_value_t = 0.08)]
    fhi: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// Center and scale every voxel fiber.
    #[arg(long)]
    preprocess: bool,
    /// Mean removed before scaling when preprocessing.
    #[arg(long, value_enum, default_value = "fiber")]
    centering: CenteringArg,
    /// Output tensor path (TNS3).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use pf2::Error::*;
    match e.downcast_ref::<pf2::Error>() {
        Some(Argument(_) | Config(_)) => 1,
        Some(Format { .. } | Io(_) | Range { .. } | DegenerateFiber { .. }) => 2,
        Some(Numeric(_)) => 3,
        None => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Falff(a) => falff(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path)
        .map_err(pf2::Error::from)
        .with_context(|| format!("creating {}", path.display()))
}

fn open(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::open(&path)
        .map_err(pf2::Error::from)
        .with_context(|| format!("opening {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::from_toml_str(&fs::read_to_string(p).map_err(pf2::Error::from)?)?,
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = Seed(s);
    }
    if let Some(b) = a.b_setup {
        cfg.b_setup = match b {
            BArg::Random => BSetup::Random,
            BArg::Network => BSetup::Network,
        };
    }
    if let Some(c) = a.c_setup {
        cfg.c_setup = match c {
            CArg::Random => CSetup::Random,
            CArg::Trends => CSetup::Trends,
        };
    }
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    if let Some(r) = a.rank {
        cfg.rank = r;
    }
    let data = gen_dataset(&cfg)?;
    fs::create_dir_all(&a.out).map_err(pf2::Error::from)?;
    io::save_tns3(&data.noisy, a.out.join("noisy.tns"))?;
    io::save_tns3(&data.clean, a.out.join("clean.tns"))?;
    io::write_factor_csv(data.a.as_matrix(), create(&a.out, "A.csv")?)?;
    io::write_factor_csv(data.c.as_matrix(), create(&a.out, "C.csv")?)?;
    io::write_stacked_csv(&data.b, create(&a.out, "B.csv")?)?;
    io::write_labels_csv(&data.labels, create(&a.out, "labels.csv")?)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?).map_err(pf2::Error::from)?;
    let (i, j, k) = data.noisy.dims();
    println!("wrote {i}x{j}x{k} dataset to {}", a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let method = match a.method {
        MethodArg::Cp => Method::Cp,
        MethodArg::Parafac2 => Method::Parafac2,
    };
    let summary = fit_command(&a.tensor, method, &a.fit.options(), a.fit.nonneg_c, &a.out)
        .with_context(|| format!("fitting {}", a.tensor.display()))?;
    println!(
        "{} rank {}: fit {:.4}% after {} iterations (converged: {}), constraint gap {:.3e}",
        method.label(),
        summary.rank,
        summary.report.fit,
        summary.report.iterations,
        summary.report.converged,
        summary.constraint_gap
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct Evaluation {
    fit: f64,
    fms_a: f64,
    fms_b: f64,
    fms_c: f64,
    clustering_acc: f64,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ta = io::read_factor_csv(open(&a.truth, "A.csv")?)?;
    let tb = io::read_stacked_csv(open(&a.truth, "B.csv")?)?;
    let tc = io::read_factor_csv(open(&a.truth, "C.csv")?)?;
    let labels = io::read_labels_csv(open(&a.truth, "labels.csv")?)?;
    let noisy = io::load_tns3(a.truth.join("noisy.tns"))?;
    let ma = io::read_factor_csv(open(&a.model, "A.csv")?)?;
    let mb = io::read_stacked_csv(open(&a.model, "B.csv")?)?;
    let mc = io::read_factor_csv(open(&a.model, "C.csv")?)?;

    let xhat = reconstruct_parafac2(&ma, &mb, &mc)?;
    let matching = match_components(&[&ta, &stack_windows(&tb)?, &tc], &[&ma, &stack_windows(&mb)?, &mc])?;
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let eval = Evaluation {
        fit: fit_score(&noisy, &xhat)?,
        fms_a: fms(&ta, &ma, &matching)?,
        fms_b: fms_evolving(&tb, &mb, &matching)?,
        fms_c: fms(&tc, &mc, &matching)?,
        clustering_acc: clustering_accuracy(&ma, &labels, n_clusters, Seed(a.seed))?,
    };
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn falff(a: FalffArgs) -> Result<()> {
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(pf2::Error::Argument(format!("--rate must be positive, got {}", a.rate)).into());
    }
    let mut subjects = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let f = fs::File::open(p).map_err(pf2::Error::from).with_context(|| format!("opening {}", p.display()))?;
        let series = io::read_series_csv(f).with_context(|| format!("reading {}", p.display()))?;
        subjects.push(TimeSeriesSet::new(1.0 / a.rate, series)?);
    }
    let spec = WindowSpec { window: a.window, stride: a.stride, f_lo: a.flo, f_hi: a.fhi };
    let mut t = build_falff_tensor(&subjects, &spec)?;
    if a.preprocess {
        let centering = match a.centering {
            CenteringArg::Fiber => Centering::Fiber,
            CenteringArg::VoxelMap => Centering::VoxelMap,
        };
        t = preprocess_tensor(&t, centering)?;
    }
    io::save_tns3(&t, &a.out)?;
    let (i, j, k) = t.dims();
    println!("wrote {i}x{j}x{k} fALFF tensor to {}", a.out.display());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => parse_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = Seed(s);
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(o) = a.out {
        cfg.out_dir = Some(o);
    }
    let table = run_experiment(&cfg)?;
    let mut stdout = std::io::stdout().lock();
    table.write_csv(&mut stdout)?;
    if let Some(dir) = &cfg.out_dir {
        table.save(dir)?;
    }
    Ok(())
}
