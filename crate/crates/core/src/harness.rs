//! Seeded training runs with periodic evaluation, metric logs and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::diagnostics::{constraint_gap, for_each_block, objective, upper_bound_objective};
use crate::error::{Error, Result};
use crate::rules::{backprop_step, bmvr_decoupled_step, bmvr_step, StepParams};
use crate::types::{
    new_model, InitSpec, MetricRecord, ModelState, Nonlinearity, TrainConfig, Variant,
};

/// Objective growth factor that counts as divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive evaluations above the threshold before a run is aborted.
const DIVERGENCE_PATIENCE: usize = 3;

/// Header of the aggregated metric CSV.
pub const CSV_HEADER: [&str; 7] = [
    "step",
    "objective_mean",
    "objective_std",
    "upper_bound_mean",
    "constraint_gap_mean",
    "train_acc_mean",
    "test_acc_mean",
];

#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub config: TrainConfig,
    pub train: &'a Dataset,
    /// Dataset the objective and test accuracy are measured on.
    pub eval: &'a Dataset,
    pub eval_every: u64,
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Independent runs with seeds `seed, seed + 1, …`.
    pub repeats: usize,
    /// Evaluate on at most this many leading samples of each set.
    pub eval_subsample: Option<usize>,
}

impl<'a> RunSpec<'a> {
    pub fn new(config: TrainConfig, train: &'a Dataset, eval: &'a Dataset) -> Self {
        RunSpec {
            config,
            train,
            eval,
            eval_every: 1000,
            log_path: None,
            checkpoint_path: None,
            repeats: 1,
            eval_subsample: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.train.input_dim() != self.eval.input_dim()
            || self.train.output_dim() != self.eval.output_dim()
        {
            return Err(Error::Dimension(
                "train and eval sets have different dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the aggregated log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogRow {
    pub step: u64,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub upper_bound_mean: Option<f64>,
    pub constraint_gap_mean: Option<f64>,
    pub train_acc_mean: Option<f64>,
    pub test_acc_mean: Option<f64>,
}

/// Per-run metric records, aligned by evaluation index across runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricLog {
    pub runs: Vec<Vec<MetricRecord>>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let collected: Option<Vec<f64>> = values.collect();
    collected
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricLog {
    /// Mean over runs (sample standard deviation for the objective).
    pub fn rows(&self) -> Vec<LogRow> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        (0..first.len())
            .map(|i| {
                let at: Vec<&MetricRecord> = self.runs.iter().filter_map(|r| r.get(i)).collect();
                let objectives: Vec<f64> = at.iter().map(|r| r.objective).collect();
                let (objective_mean, objective_std) = mean_std(&objectives);
                LogRow {
                    step: first[i].step,
                    objective_mean,
                    objective_std,
                    upper_bound_mean: mean_of(at.iter().map(|r| r.upper_bound_objective)),
                    constraint_gap_mean: mean_of(at.iter().map(|r| r.constraint_gap)),
                    train_acc_mean: mean_of(at.iter().map(|r| r.train_accuracy)),
                    test_acc_mean: mean_of(at.iter().map(|r| r.test_accuracy)),
                }
            })
            .collect()
    }

    pub fn final_row(&self) -> Option<LogRow> {
        self.rows().pop()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows(), None)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders rows with the standard header; a `variant` column is prepended
/// when `variant` is given (used by the combined comparison CSV).
pub fn rows_to_csv(rows: &[LogRow], variant: Option<&str>) -> String {
    let mut out = String::new();
    if variant.is_some() {
        out.push_str("variant,");
    }
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for row in rows {
        if let Some(v) = variant {
            out.push_str(v);
            out.push(',');
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.step,
            row.objective_mean,
            row.objective_std,
            fmt_opt(row.upper_bound_mean),
            fmt_opt(row.constraint_gap_mean),
            fmt_opt(row.train_acc_mean),
            fmt_opt(row.test_acc_mean)
        ));
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Reads a metric CSV. Files with a leading `variant` column yield one
/// series per variant, in order of first appearance; plain files yield a
/// single series labelled `None`.
pub fn read_csv(path: &Path) -> Result<Vec<(Option<String>, Vec<LogRow>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let has_variant = headers.get(0) == Some("variant");
    let offset = usize::from(has_variant);
    let expected: Vec<&str> = headers.iter().skip(offset).collect();
    if expected != CSV_HEADER {
        return Err(Error::format(path, 0, "unexpected metric CSV header"));
    }
    let mut series: Vec<(Option<String>, Vec<LogRow>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i + offset).unwrap_or("").trim().to_string();
        let bad = |what: &str| {
            Error::format(
                path,
                line as u64 + 1,
                format!("row {}: bad {what}", line + 1),
            )
        };
        let required = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(what));
        let optional = |i: usize, what: &str| -> Result<Option<f64>> {
            let f = field(i);
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse::<f64>().map(Some).map_err(|_| bad(what))
            }
        };
        let row = LogRow {
            step: field(0).parse().map_err(|_| bad("step"))?,
            objective_mean: required(1, "objective_mean")?,
            objective_std: required(2, "objective_std")?,
            upper_bound_mean: optional(3, "upper_bound_mean")?,
            constraint_gap_mean: optional(4, "constraint_gap_mean")?,
            train_acc_mean: optional(5, "train_acc_mean")?,
            test_acc_mean: optional(6, "test_acc_mean")?,
        };
        let label = has_variant.then(|| record.get(0).unwrap_or("").to_string());
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, rows)) => rows.push(row),
            None => series.push((label, vec![row])),
        }
    }
    Ok(series)
}

/// Fraction of samples whose predicted class `argmax W2 f(W1 x)` matches the
/// one-hot target. Ties go to the lowest index.
pub fn accuracy(state: &ModelState, data: &Dataset, nonlinearity: Nonlinearity) -> Result<f64> {
    let labels = data.labels()?;
    if state.input_dim() != data.input_dim() || state.output_dim() != data.output_dim() {
        return Err(Error::Dimension(
            "model and dataset dimensions differ".into(),
        ));
    }
    let mut correct = 0usize;
    for_each_block(state, data, nonlinearity, |_, y_hat, start| {
        for (offset, col) in y_hat.column_iter().enumerate() {
            if argmax(col.iter().copied()) == labels[start + offset] {
                correct += 1;
            }
        }
    });
    Ok(correct as f64 / data.len() as f64)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Trailing moving average over logged points within `window` steps.
pub fn smooth(points: &[(u64, f64)], window: u64) -> Vec<(u64, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let lo = step.saturating_sub(window.saturating_sub(1));
            let in_window: Vec<f64> = points[..=i]
                .iter()
                .filter(|(s, _)| *s >= lo)
                .map(|&(_, v)| v)
                .collect();
            (step, in_window.iter().sum::<f64>() / in_window.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricLog,
    /// Final state of each repeat.
    pub states: Vec<ModelState>,
}

/// Learning rates for step `t`.
pub fn step_params(config: &TrainConfig, t: u64) -> StepParams {
    StepParams {
        eta_w1: config.eta_w1.value(t),
        eta_w2: config.eta_w2.value(t),
        eta_q: config.eta_q.value(t),
        tau: config.tau,
        nonlinearity: config.nonlinearity,
        mean_rate: config.mean_rate,
    }
}

/// Applies the configured rule for one sample.
pub fn apply_step(
    variant: Variant,
    state: &mut ModelState,
    data: &Dataset,
    index: usize,
    params: &StepParams,
) -> Result<()> {
    let (x, y) = data.sample(index);
    match variant {
        Variant::Bmvr => bmvr_step(state, x, y, params),
        Variant::Backprop => backprop_step(state, x, y, params),
        Variant::BmvrDecoupled => bmvr_decoupled_step(state, x, y, params),
    }
    .map(|_| ())
}

struct EvalSets {
    train: Dataset,
    eval: Dataset,
    one_hot: bool,
}

fn evaluate(
    state: &ModelState,
    config: &TrainConfig,
    sets: &EvalSets,
    step: u64,
) -> Result<MetricRecord> {
    let nonlin = config.nonlinearity;
    let objective = objective(state, &sets.eval, nonlin)?;
    let upper_bound_objective = (nonlin == Nonlinearity::Linear
        && config.variant != Variant::Backprop)
        .then(|| upper_bound_objective(state, &sets.train))
        .transpose()?;
    let (train_accuracy, test_accuracy) = if sets.one_hot {
        (
            Some(accuracy(state, &sets.train, nonlin)?),
            Some(accuracy(state, &sets.eval, nonlin)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricRecord {
        step,
        objective,
        upper_bound_objective,
        constraint_gap: Some(constraint_gap(state, &sets.train, nonlin)?),
        train_accuracy,
        test_accuracy,
    })
}

fn repeat_path(path: &Path, repeat: usize) -> PathBuf {
    if repeat == 0 {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.r{repeat}.{}", ext.to_string_lossy()),
        None => format!("{stem}.r{repeat}"),
    };
    path.with_file_name(name)
}

/// Trains a single model with the given seed and returns its records and
/// final state.
pub fn run_single(
    spec: &RunSpec<'_>,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Vec<MetricRecord>, ModelState)> {
    let config = &spec.config;
    let train = spec.train;
    let sets = EvalSets {
        train: match spec.eval_subsample {
            Some(n) => train.head(n)?,
            None => train.clone(),
        },
        eval: match spec.eval_subsample {
            Some(n) => spec.eval.head(n)?,
            None => spec.eval.clone(),
        },
        one_hot: train.is_one_hot() && spec.eval.is_one_hot(),
    };
    let init = InitSpec {
        decoupled: config.variant == Variant::BmvrDecoupled || config.init.decoupled,
        ..config.init
    };
    let mut state = new_model(train.input_dim(), train.output_dim(), config.k, &init, seed)?;
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(1);

    let first = evaluate(&state, config, &sets, 0)?;
    let initial = first.objective;
    let mut records = vec![first];
    let mut strikes = 0usize;
    if let Some(path) = checkpoint {
        state.save(path)?;
    }

    for t in 0..config.steps {
        let index = sampler.random_range(0..train.len());
        let params = step_params(config, t);
        apply_step(config.variant, &mut state, train, index, &params).map_err(|e| match e {
            Error::NumericOverflow { matrix, .. } => Error::NumericOverflow {
                matrix,
                step: Some(t),
            },
            other => other,
        })?;
        let done = t + 1;
        if done % spec.eval_every == 0 || done == config.steps {
            let record = evaluate(&state, config, &sets, done)?;
            debug!("seed {seed} step {done}: objective {}", record.objective);
            let objective = record.objective;
            records.push(record);
            if !objective.is_finite() || objective > DIVERGENCE_FACTOR * initial {
                strikes += 1;
                if strikes >= DIVERGENCE_PATIENCE {
                    return Err(Error::Diverged {
                        step: done,
                        objective,
                        initial,
                    });
                }
            } else {
                strikes = 0;
                if let Some(path) = checkpoint {
                    state.save(path)?;
                }
            }
        }
    }
    Ok((records, state))
}

/// Runs every repeat (concurrently), aggregates the logs and writes the CSV
/// if a log path is set.
pub fn run(spec: &RunSpec<'_>) -> Result<RunOutput> {
    spec.validate()?;
    info!(
        "{} on {}: k={} steps={} repeats={}",
        spec.config.variant.name(),
        spec.train.name,
        spec.config.k,
        spec.config.steps,
        spec.repeats
    );
    let results: Vec<Result<(Vec<MetricRecord>, ModelState)>> = (0..spec.repeats)
        .into_par_iter()
        .map(|r| {
            let checkpoint = spec.checkpoint_path.as_deref().map(|p| repeat_path(p, r));
            run_single(
                spec,
                spec.config.seed.wrapping_add(r as u64),
                checkpoint.as_deref(),
            )
        })
        .collect();
    let mut log = MetricLog::default();
    let mut states = Vec::with_capacity(spec.repeats);
    for result in results {
        let (records, state) = result?;
        log.runs.push(records);
        states.push(state);
    }
    if let Some(path) = &spec.log_path {
        log.write_csv(path)?;
    }
    Ok(RunOutput { log, states })
}
