//! Command-line front end. Every subcommand is a thin wrapper over library
//! calls; `main` only parses arguments and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::data::{load_cifar, load_mnist_dir, synth_linear, CifarKind, Dataset, MnistProtocol};
use crate::diagnostics::{objective, teaching_signal_report_with, upper_bound_objective};
use crate::error::{Error, Result};
use crate::harness::{self, read_csv, rows_to_csv, LogRow, RunSpec, CSV_HEADER};
use crate::oracle::{accumulate_stats, check_saturation, solve_rrr};
use crate::plot::{render_svg, PlotOptions, Series};
use crate::presets::{preset, preset_names};
use crate::types::{ModelState, Nonlinearity, ScheduleSpec, TrainConfig, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "bmvr",
    version,
    about = "Biological multi-variate regression experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant and write its metric CSV.
    Train(TrainArgs),
    /// Train BMVR and backprop with matched seeds; write CSVs and an SVG overlay.
    Compare(CompareArgs),
    /// Report saturation, upper-bound tightness and teaching-signal error of a saved model.
    Diagnose(DiagnoseArgs),
    /// Solve the reduced-rank regression problem in closed form.
    Oracle(OracleArgs),
    /// Render metric CSVs as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Bmvr,
    Backprop,
    BmvrDecoupled,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Bmvr => Variant::Bmvr,
            VariantArg::Backprop => Variant::Backprop,
            VariantArg::BmvrDecoupled => Variant::BmvrDecoupled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Synth,
    Mnist,
    Fmnist,
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NonlinArg {
    Linear,
    Relu,
}

impl From<NonlinArg> for Nonlinearity {
    fn from(v: NonlinArg) -> Self {
        match v {
            NonlinArg::Linear => Nonlinearity::Linear,
            NonlinArg::Relu => Nonlinearity::MeanSubtractedRelu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Standard,
    /// Train on the 10k split, test on the first 50,000 training images.
    Inverted50k,
    /// Train on the 10k split, test on all 60,000 training images.
    Inverted60k,
}

impl From<ProtocolArg> for MnistProtocol {
    fn from(v: ProtocolArg) -> Self {
        match v {
            ProtocolArg::Standard => MnistProtocol::Standard,
            ProtocolArg::Inverted50k => MnistProtocol::Inverted50k,
            ProtocolArg::Inverted60k => MnistProtocol::Inverted60k,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "synth")]
    pub dataset: DatasetArg,
    /// Directory holding the dataset files.
    #[arg(long, env = "BMVR_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "inverted50k")]
    pub mnist_protocol: ProtocolArg,
    /// Keep raw 0..255 pixel values for MNIST-layout data.
    #[arg(long)]
    pub raw_pixels: bool,
    /// Use the 20 coarse CIFAR-100 labels.
    #[arg(long)]
    pub coarse: bool,
    #[arg(long, default_value_t = 20)]
    pub synth_m: usize,
    #[arg(long, default_value_t = 10)]
    pub synth_n: usize,
    #[arg(long, default_value_t = 4)]
    pub synth_k_true: usize,
    #[arg(long, default_value_t = 2000)]
    pub synth_samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub synth_noise: f64,
    #[arg(long, default_value_t = 1)]
    pub synth_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RateArgs {
    /// Named learning-rate preset (see `--preset help`).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub eta_w1: Option<f64>,
    #[arg(long)]
    pub eta_w2: Option<f64>,
    #[arg(long)]
    pub eta_q: Option<f64>,
    /// Decay constant applied to every overridden rate: eta0 / (1 + t / t0).
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub nonlin: Option<NonlinArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_every: u64,
    /// Evaluate on at most this many samples of each set.
    #[arg(long)]
    pub eval_subsample: Option<usize>,
    /// Running-mean rate of the mean-subtracted ReLU.
    #[arg(long)]
    pub mean_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "bmvr")]
    pub variant: VariantArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub rates: RateArgs,
    /// Metric CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint rewritten at every healthy evaluation.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Final model of the first repeat.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub rates: RateArgs,
    /// Backprop W1 rate, if different from the BMVR one.
    #[arg(long)]
    pub bp_eta_w1: Option<f64>,
    /// Backprop W2 rate, if different from the BMVR one.
    #[arg(long)]
    pub bp_eta_w2: Option<f64>,
    #[arg(long, default_value = "compare-out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub log_y: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Saved model to inspect.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "linear")]
    pub nonlin: NonlinArg,
    /// Ridge added to Cxx before inversion.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// CSV report; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Also write the optimum as a model file.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Objective,
    UpperBound,
    ConstraintGap,
    TrainAcc,
    TestAcc,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Metric CSVs (plain or combined with a variant column).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "objective")]
    pub metric: MetricArg,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long, default_value = "")]
    pub title: String,
}

/// Process exit status for an error: 2 for bad configuration or input
/// shapes, 3 for numeric divergence, 1 for I/O and file-format failures.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Dimension(_)
        | Error::MissingR
        | Error::EmptyDataset
        | Error::NotOneHot(_) => 2,
        Error::Diverged { .. } | Error::NumericOverflow { .. } => 3,
        Error::Io { .. } | Error::Format { .. } | Error::Csv(_) => 1,
    }
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Diagnose(args) => cmd_diagnose(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Plot(args) => cmd_plot(&args),
    }
}

fn require_dir<'a>(data: &'a DataArgs, name: &str) -> Result<&'a Path> {
    data.data_dir.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "--data-dir (or BMVR_DATA_DIR) is required for --dataset {name}"
        ))
    })
}

/// Loads (train, eval) according to the data flags. Synthetic data is
/// evaluated on its own training set.
pub fn load_datasets(data: &DataArgs) -> Result<(Dataset, Dataset)> {
    match data.dataset {
        DatasetArg::Synth => {
            let d = synth_linear(
                data.synth_m,
                data.synth_n,
                data.synth_k_true,
                data.synth_samples,
                data.synth_noise,
                data.synth_seed,
            )?;
            Ok((d.clone(), d))
        }
        DatasetArg::Mnist | DatasetArg::Fmnist => {
            let name = if data.dataset == DatasetArg::Mnist {
                "mnist"
            } else {
                "fmnist"
            };
            let dir = require_dir(data, name)?;
            load_mnist_dir(dir, data.mnist_protocol.into(), !data.raw_pixels)
        }
        DatasetArg::Cifar10 => {
            let dir = require_dir(data, "cifar10")?;
            let train: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            Ok((
                load_cifar(&train, CifarKind::Cifar10)?,
                load_cifar(&[dir.join("test_batch.bin")], CifarKind::Cifar10)?,
            ))
        }
        DatasetArg::Cifar100 => {
            let dir = require_dir(data, "cifar100")?;
            let kind = CifarKind::Cifar100 {
                coarse: data.coarse,
            };
            Ok((
                load_cifar(&[dir.join("train.bin")], kind)?,
                load_cifar(&[dir.join("test.bin")], kind)?,
            ))
        }
    }
}

/// Builds the training configuration: preset first, then explicit flags.
pub fn build_config(variant: Variant, rates: &RateArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig {
        variant,
        seed: rates.seed,
        steps: rates.steps,
        k: 4,
        ..Default::default()
    };
    if let Some(name) = &rates.preset {
        let p = preset(name).ok_or_else(|| {
            let known: Vec<_> = preset_names().collect();
            Error::Config(format!(
                "unknown --preset {name:?}; known presets: {}",
                known.join(", ")
            ))
        })?;
        p.apply(&mut config);
    }
    let schedule = |eta0: f64| match rates.t0 {
        Some(t0) => ScheduleSpec::decaying(eta0, t0),
        None => ScheduleSpec::constant(eta0),
    };
    if let Some(v) = rates.eta_w1 {
        config.eta_w1 = schedule(v);
    }
    if let Some(v) = rates.eta_w2 {
        config.eta_w2 = schedule(v);
    }
    if let Some(v) = rates.eta_q {
        config.eta_q = schedule(v);
    }
    if let Some(tau) = rates.tau {
        config.tau = tau;
    }
    if let Some(n) = rates.nonlin {
        config.nonlinearity = n.into();
    }
    if let Some(k) = rates.k {
        config.k = k;
    }
    if let Some(r) = rates.mean_rate {
        config.mean_rate = r;
    }
    config.validate()?;
    Ok(config)
}

fn run_spec<'a>(
    config: TrainConfig,
    rates: &RateArgs,
    train: &'a Dataset,
    eval: &'a Dataset,
) -> RunSpec<'a> {
    let mut spec = RunSpec::new(config, train, eval);
    spec.eval_every = rates.eval_every;
    spec.repeats = rates.repeats;
    spec.eval_subsample = rates.eval_subsample;
    spec
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn summary(variant: &str, row: &LogRow) -> String {
    format!(
        "{variant}: step {} objective {:.6} ± {:.6} train_acc {} test_acc {}",
        row.step,
        row.objective_mean,
        row.objective_std,
        fmt_opt(row.train_acc_mean),
        fmt_opt(row.test_acc_mean)
    )
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = build_config(args.variant.into(), &args.rates)?;
    let (train, eval) = load_datasets(&args.data)?;
    let mut spec = run_spec(config, &args.rates, &train, &eval);
    spec.log_path = args.out.clone();
    spec.checkpoint_path = args.checkpoint.clone();
    let out = harness::run(&spec)?;
    if args.out.is_none() {
        print!("{}", out.log.to_csv());
    }
    if let Some(path) = &args.save_model {
        out.states[0].save(path)?;
    }
    if let Some(row) = out.log.final_row() {
        eprintln!("{}", summary(spec.config.variant.name(), &row));
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (train, eval) = load_datasets(&args.data)?;
    let bmvr_config = build_config(Variant::Bmvr, &args.rates)?;
    let mut bp_config = build_config(Variant::Backprop, &args.rates)?;
    let schedule = |eta0: f64| match args.rates.t0 {
        Some(t0) => ScheduleSpec::decaying(eta0, t0),
        None => ScheduleSpec::constant(eta0),
    };
    if let Some(v) = args.bp_eta_w1 {
        bp_config.eta_w1 = schedule(v);
    }
    if let Some(v) = args.bp_eta_w2 {
        bp_config.eta_w2 = schedule(v);
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    let mut combined = String::new();
    let mut series = Vec::new();
    for config in [bmvr_config, bp_config] {
        let name = config.variant.name();
        let mut spec = run_spec(config, &args.rates, &train, &eval);
        spec.log_path = Some(args.out_dir.join(format!("{name}.csv")));
        let out = harness::run(&spec)?;
        let rows = out.log.rows();
        let csv = rows_to_csv(&rows, Some(name));
        if combined.is_empty() {
            combined.push_str(&csv);
        } else {
            combined.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
        if let Some(row) = rows.last() {
            eprintln!("{}", summary(name, row));
        }
        series.push(Series::objective(name, &rows));
    }
    write_file(&args.out_dir.join("compare.csv"), &combined)?;
    let svg = render_svg(
        &series,
        &PlotOptions {
            title: format!("{}: BMVR vs backprop", train.name),
            log_y: args.log_y,
            ..Default::default()
        },
    );
    write_file(&args.out_dir.join("compare.svg"), &svg)?;
    info!("wrote {}", args.out_dir.display());
    Ok(())
}

/// Diagnostic quantities for a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub objective: f64,
    pub saturation_gap: f64,
    pub q_min_sv: f64,
    /// Upper-bound objective over objective; absent for nonlinear networks.
    pub upper_bound_ratio: Option<f64>,
    pub teaching_mean_rel_err: f64,
    pub teaching_cosine_mean: f64,
    pub samples: usize,
}

impl Diagnosis {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "objective,saturation_gap,q_min_sv,upper_bound_ratio,teaching_mean_rel_err,teaching_cosine_mean,samples\n",
        );
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            self.objective,
            self.saturation_gap,
            self.q_min_sv,
            self.upper_bound_ratio
                .map(|v| v.to_string())
                .unwrap_or_default(),
            self.teaching_mean_rel_err,
            self.teaching_cosine_mean,
            self.samples
        );
        s
    }

    pub fn to_text(&self) -> String {
        format!(
            "objective              {:.6e}\n\
             saturation gap         {:.6e}\n\
             min singular value Q   {:.6e}\n\
             upper-bound ratio      {}\n\
             teaching rel. error    {:.6e}\n\
             teaching cosine        {:.6}\n\
             samples                {}\n",
            self.objective,
            self.saturation_gap,
            self.q_min_sv,
            self.upper_bound_ratio
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".into()),
            self.teaching_mean_rel_err,
            self.teaching_cosine_mean,
            self.samples
        )
    }
}

/// Computes every diagnostic the `diagnose` command prints.
pub fn diagnose(
    state: &ModelState,
    data: &Dataset,
    nonlinearity: Nonlinearity,
    ridge: Option<f64>,
) -> Result<Diagnosis> {
    let stats = accumulate_stats(data)?;
    let sat = check_saturation(state, &stats)?;
    let obj = objective(state, data, nonlinearity)?;
    let upper_bound_ratio = match nonlinearity {
        Nonlinearity::Linear => Some(upper_bound_objective(state, data)? / obj),
        Nonlinearity::MeanSubtractedRelu => None,
    };
    let report = teaching_signal_report_with(state, data, &stats, ridge)?;
    Ok(Diagnosis {
        objective: obj,
        saturation_gap: sat.gap,
        q_min_sv: sat.q_min_sv,
        upper_bound_ratio,
        teaching_mean_rel_err: report.mean_rel_err,
        teaching_cosine_mean: report.cosine_mean,
        samples: report.samples_used,
    })
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let state = ModelState::load(&args.model)?;
    let (train, _) = load_datasets(&args.data)?;
    let d = diagnose(&state, &train, args.nonlin.into(), args.ridge)?;
    print!("{}", d.to_text());
    match &args.out {
        Some(path) => write_file(path, &d.to_csv())?,
        None => print!("{}", d.to_csv()),
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let (train, _) = load_datasets(&args.data)?;
    let stats = accumulate_stats(&train)?;
    let sol = solve_rrr(&stats, args.k, args.ridge)?;
    println!("optimal_loss {:.12e}", sol.optimal_loss);
    let eig: Vec<String> = sol
        .m_eigenvalues
        .iter()
        .map(|v| format!("{v:.12e}"))
        .collect();
    println!("eigenvalues {}", eig.join(" "));
    if !sol.rank_ok {
        println!("warning: Cxy has rank below k");
    }
    if let Some(path) = &args.save_model {
        sol.to_model().save(path)?;
    }
    Ok(())
}

fn metric_series(label: String, rows: &[LogRow], metric: MetricArg) -> Series {
    match metric {
        MetricArg::Objective => Series::objective(label, rows),
        MetricArg::UpperBound => Series::column(label, rows, |r| r.upper_bound_mean),
        MetricArg::ConstraintGap => Series::column(label, rows, |r| r.constraint_gap_mean),
        MetricArg::TrainAcc => Series::column(label, rows, |r| r.train_acc_mean),
        MetricArg::TestAcc => Series::column(label, rows, |r| r.test_acc_mean),
    }
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let mut series = Vec::new();
    for path in &args.inputs {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        for (variant, rows) in read_csv(path)? {
            let label = variant.unwrap_or_else(|| stem.clone());
            series.push(metric_series(label, &rows, args.metric));
        }
    }
    let y_label = match args.metric {
        MetricArg::Objective => CSV_HEADER[1],
        MetricArg::UpperBound => CSV_HEADER[3],
        MetricArg::ConstraintGap => CSV_HEADER[4],
        MetricArg::TrainAcc => CSV_HEADER[5],
        MetricArg::TestAcc => CSV_HEADER[6],
    };
    let svg = render_svg(
        &series,
        &PlotOptions {
            title: args.title.clone(),
            y_label: y_label.into(),
            log_y: args.log_y,
            ..Default::default()
        },
    );
    write_file(&args.out, &svg)
}
