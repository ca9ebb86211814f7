//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bmvr::data::{load_mnist_dir, synth_linear, Dataset, MnistProtocol, Split};
use bmvr::diagnostics::{
    hidden_covariance, objective, teaching_signal_report_with, upper_bound_objective,
};
use bmvr::harness::{run, smooth, RunOutput, RunSpec};
use bmvr::linalg::sym_eigen_desc;
use bmvr::oracle::{accumulate_stats, check_saturation, solve_rrr};
use bmvr::presets::preset;
use bmvr::rules::{backprop_step, bmvr_decoupled_step, bmvr_step, StepParams};
use bmvr::{new_model, InitSpec, Mat, ModelState, Nonlinearity, TrainConfig, Variant, Vector};
use common::{fd_gradient, gaussian, integrand, loss, naive_objective, rel_err, rng, state};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn error(e: impl std::fmt::Display) -> Self {
        Outcome {
            pass: false,
            detail: format!("error: {e}"),
        }
    }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn record(
        &mut self,
        id: u32,
        name: &str,
        budget: Duration,
        elapsed: Duration,
        outcome: Outcome,
    ) {
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} criterion {id}: {name}: {} [{:.2}s, budget {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }

    fn timed(&mut self, id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        self.record(id, name, budget, start.elapsed(), outcome);
    }
}

// Oracle correctness.

fn data_from(x: Mat, y: Mat) -> Dataset {
    Dataset::new("random", x, y, Split::Train).unwrap()
}

/// Plain gradient descent on `Tr Cyy − 2 Tr(W2 W1 Cxy) + Tr(W2 W1 Cxx W1ᵀ W2ᵀ)`
/// from several random starts; returns the best loss reached.
fn gradient_descent_polish(x: &Mat, y: &Mat, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let t = x.ncols() as f64;
    let cxx = x * x.transpose() / t;
    let cxy = x * y.transpose() / t;
    let cyy_trace = y.norm_squared() / t;
    let f = |w1: &Mat, w2: &Mat| {
        let a = w2 * w1;
        cyy_trace - 2.0 * (&a * &cxy).trace() + (&a * &cxx * a.transpose()).trace()
    };
    let (m, n) = (x.nrows(), y.nrows());
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let mut w1 = gaussian(rng, k, m, 0.3);
        let mut w2 = gaussian(rng, n, k, 0.3);
        let mut value = f(&w1, &w2);
        let mut lr = 0.01;
        let mut checkpoint = value;
        for iter in 1..=200_000 {
            let a = &w2 * &w1;
            let da = (&a * &cxx - cxy.transpose()) * 2.0;
            let g1 = w2.transpose() * &da;
            let g2 = &da * w1.transpose();
            let gnorm = g1.norm_squared() + g2.norm_squared();
            if gnorm < 1e-20 {
                break;
            }
            loop {
                let c1 = &w1 - &g1 * lr;
                let c2 = &w2 - &g2 * lr;
                let candidate = f(&c1, &c2);
                if candidate <= value - 0.5 * lr * gnorm {
                    w1 = c1;
                    w2 = c2;
                    value = candidate;
                    lr *= 1.5;
                    break;
                }
                lr *= 0.5;
                if lr < 1e-20 {
                    break;
                }
            }
            if lr < 1e-20 {
                break;
            }
            if iter % 1000 == 0 {
                if checkpoint - value < 1e-13 * value {
                    break;
                }
                checkpoint = value;
            }
        }
        best = best.min(value);
    }
    best
}

fn criterion_1() -> Outcome {
    let mut rng = rng(101);
    let mut min_margin = f64::INFINITY;
    let mut max_polish_err: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(1..=6usize);
        let n = rng.random_range(1..=6usize);
        let k = rng.random_range(1..=3usize.min(m).min(n));
        let x = gaussian(&mut rng, m, 200, 1.0);
        let b = gaussian(&mut rng, n, m, 1.0);
        let y = &b * &x + gaussian(&mut rng, n, 200, 0.3);
        let data = data_from(x.clone(), y.clone());
        let sol = match accumulate_stats(&data).and_then(|s| solve_rrr(&s, k, Some(0.0))) {
            Ok(s) => s,
            Err(e) => return Outcome::error(e),
        };
        for _ in 0..1000 {
            let w1 = gaussian(&mut rng, k, m, 1.0);
            let w2 = gaussian(&mut rng, n, k, 1.0);
            let value = naive_objective(&w1, &w2, &x, &y);
            min_margin = min_margin.min((value - sol.optimal_loss) / sol.optimal_loss);
        }
        let polished = gradient_descent_polish(&x, &y, k, &mut rng);
        max_polish_err = max_polish_err.max((polished - sol.optimal_loss).abs() / sol.optimal_loss);
    }
    Outcome {
        pass: min_margin >= -1e-12 && max_polish_err < 1e-6,
        detail: format!(
            "min relative margin over 20k random pairs {min_margin:.3e} (>= 0), max gradient-descent mismatch {max_polish_err:.2e} (< 1e-6)"
        ),
    }
}

// Gradient checks.

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn criterion_2() -> Outcome {
    let mut rng = rng(202);
    let mut worst_bp: f64 = 0.0;
    let mut worst_bmvr: f64 = 0.0;
    let mut cases = 0;
    while cases < 300 {
        let (m, n, k) = (
            rng.random_range(1..=6usize),
            rng.random_range(1..=6usize),
            rng.random_range(1..=4usize),
        );
        let w1 = gaussian(&mut rng, k, m, 0.7);
        let w2 = gaussian(&mut rng, n, k, 0.7);
        let q = gaussian(&mut rng, k, k, 0.7);
        let x: Vector = gaussian(&mut rng, m, 1, 1.0).column(0).into();
        let y: Vector = gaussian(&mut rng, n, 1, 1.0).column(0).into();
        let nonlin = if cases % 2 == 0 {
            Nonlinearity::Linear
        } else {
            Nonlinearity::MeanSubtractedRelu
        };
        if nonlin == Nonlinearity::MeanSubtractedRelu && (&w1 * &x).iter().any(|u| u.abs() < 1e-3) {
            continue;
        }
        cases += 1;
        let p = StepParams {
            eta_w1: 0.01,
            eta_w2: 0.02,
            eta_q: 0.03,
            tau: 1.5,
            nonlinearity: nonlin,
            mean_rate: 0.0,
        };

        let mut bp = state(w1.clone(), w2.clone(), q.clone());
        backprop_step(&mut bp, x.as_view(), y.as_view(), &p).unwrap();
        let g1 = fd_gradient(&w1, FD_STEP, |v| loss(v, &w2, &x, &y, nonlin));
        let g2 = fd_gradient(&w2, FD_STEP, |v| loss(&w1, v, &x, &y, nonlin));
        for (delta, grad, eta) in [(&bp.w1 - &w1, g1, p.eta_w1), (&bp.w2 - &w2, g2, p.eta_w2)] {
            if grad.norm() > 1e-6 {
                worst_bp = worst_bp.max(rel_err(&(delta * (-2.0 / eta)), &grad));
            }
        }

        let linear = StepParams {
            nonlinearity: Nonlinearity::Linear,
            ..p
        };
        let mut bm = state(w1.clone(), w2.clone(), q.clone());
        bmvr_step(&mut bm, x.as_view(), y.as_view(), &linear).unwrap();
        let g1 = fd_gradient(&w1, FD_STEP, |v| integrand(v, &w2, &q, &x, &y));
        let g2 = fd_gradient(&w2, FD_STEP, |v| integrand(&w1, v, &q, &x, &y));
        let gq = fd_gradient(&q, FD_STEP, |v| integrand(&w1, &w2, v, &x, &y));
        for (delta, grad, scale) in [
            (&bm.w1 - &w1, g1, -2.0 / p.eta_w1),
            (&bm.w2 - &w2, g2, -2.0 / p.eta_w2),
            (&bm.q - &q, gq, 2.0 * p.tau / p.eta_q),
        ] {
            if grad.norm() > 1e-6 {
                worst_bmvr = worst_bmvr.max(rel_err(&(delta * scale), &grad));
            }
        }
    }
    Outcome {
        pass: worst_bp < FD_TOL && worst_bmvr < FD_TOL,
        detail: format!(
            "{cases} cases, max backprop rel err {worst_bp:.2e}, max BMVR descent-ascent rel err {worst_bmvr:.2e} (< 1e-5)"
        ),
    }
}

// Synthetic convergence, saturation and teaching signal.

const SYNTH_STEPS: u64 = 20_000;
const SYNTH_REPEATS: usize = 5;
const WARM_UP: u64 = SYNTH_STEPS / 10;
const SMOOTH_WINDOW: u64 = 500;

struct SynthRuns {
    data: Dataset,
    optimal_loss: f64,
    bmvr: RunOutput,
    backprop: RunOutput,
}

fn synth_runs() -> bmvr::Result<SynthRuns> {
    let data = synth_linear(20, 10, 4, 2000, 0.1, 1)?;
    let optimal_loss = solve_rrr(&accumulate_stats(&data)?, 4, None)?.optimal_loss;
    let p = preset("default-synth").expect("preset exists");
    let train = |variant| {
        let mut config = TrainConfig {
            variant,
            steps: SYNTH_STEPS,
            seed: 0,
            ..Default::default()
        };
        p.apply(&mut config);
        let mut spec = RunSpec::new(config, &data, &data);
        spec.repeats = SYNTH_REPEATS;
        spec.eval_every = 100;
        run(&spec)
    };
    let bmvr = train(Variant::Bmvr)?;
    let backprop = train(Variant::Backprop)?;
    Ok(SynthRuns {
        data,
        optimal_loss,
        bmvr,
        backprop,
    })
}

fn smoothed_objective(out: &RunOutput) -> Vec<(u64, f64)> {
    let points: Vec<(u64, f64)> = out
        .log
        .rows()
        .iter()
        .map(|r| (r.step, r.objective_mean))
        .collect();
    smooth(&points, SMOOTH_WINDOW)
}

fn criterion_3(runs: &SynthRuns) -> Outcome {
    let final_of = |out: &RunOutput| {
        out.log
            .final_row()
            .map(|r| r.objective_mean)
            .unwrap_or(f64::NAN)
    };
    let bmvr_final = final_of(&runs.bmvr);
    let bp_final = final_of(&runs.backprop);
    let rel = |v: f64| (v - runs.optimal_loss).abs() / runs.optimal_loss;
    let violations: Vec<u64> = smoothed_objective(&runs.bmvr)
        .iter()
        .zip(smoothed_objective(&runs.backprop))
        .filter(|(b, p)| b.0 >= WARM_UP && b.1 < p.1)
        .map(|(b, _)| b.0)
        .collect();
    Outcome {
        pass: rel(bmvr_final) < 0.02 && rel(bp_final) < 0.02 && violations.is_empty(),
        detail: format!(
            "oracle {:.6}, BMVR {bmvr_final:.6} ({:.2}%), backprop {bp_final:.6} ({:.2}%) (< 2%); smoothed BMVR below backprop at {} of the logged steps after {WARM_UP}",
            runs.optimal_loss,
            100.0 * rel(bmvr_final),
            100.0 * rel(bp_final),
            violations.len()
        ),
    }
}

fn criterion_4(runs: &SynthRuns) -> Outcome {
    let stats = match accumulate_stats(&runs.data) {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let mut gaps = Vec::new();
    let mut q_svs = Vec::new();
    let mut tightness = Vec::new();
    for s in &runs.bmvr.states {
        let sat = match check_saturation(s, &stats) {
            Ok(v) => v,
            Err(e) => return Outcome::error(e),
        };
        gaps.push(sat.gap);
        q_svs.push(sat.q_min_sv);
        let obj = objective(s, &runs.data, Nonlinearity::Linear).unwrap();
        let ub = upper_bound_objective(s, &runs.data).unwrap();
        tightness.push((ub - obj).abs() / obj);
    }
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    let min_sv = q_svs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_tight = tightness.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: max_gap < 0.05 && min_sv > 0.01,
        detail: format!(
            "per-repeat gaps {gaps:.4?}, max {max_gap:.4} (< 0.05); min Q singular value {min_sv:.4} (> 0.01); max |UB - objective| / objective {max_tight:.4}"
        ),
    }
}

fn criterion_5(runs: &SynthRuns) -> Outcome {
    let stats = match accumulate_stats(&runs.data) {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let mut errs = Vec::new();
    let mut cosines = Vec::new();
    for s in &runs.bmvr.states {
        match teaching_signal_report_with(s, &runs.data, &stats, None) {
            Ok(r) => {
                errs.push(r.mean_rel_err);
                cosines.push(r.cosine_mean);
            }
            Err(e) => return Outcome::error(e),
        }
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let cos = cosines.iter().sum::<f64>() / cosines.len() as f64;
    Outcome {
        pass: mean < 0.05,
        detail: format!(
            "mean_rel_err {mean:.4} (< 0.05), per repeat {errs:.4?}, mean cosine {cos:.4}"
        ),
    }
}

// Decoupled decay.

fn criterion_6() -> Outcome {
    let eta_q: f64 = 0.01;
    let tau: f64 = 2.0;
    let steps = 200;
    let expected_factor = (1.0 - eta_q / tau).powi(steps);
    let mut worst: f64 = 0.0;
    let mut streams = 0;
    let mut rng = rng(606);
    let synth = synth_linear(20, 10, 4, 500, 0.1, 6).unwrap();
    for nonlin in [Nonlinearity::Linear, Nonlinearity::MeanSubtractedRelu] {
        for source in 0..2 {
            streams += 1;
            let init = InitSpec {
                q_scale: 0.5,
                decoupled: true,
            };
            let mut s: ModelState = new_model(20, 10, 4, &init, 60 + streams).unwrap();
            let d0 = (s.q.transpose() - s.r.as_ref().unwrap()).norm();
            let p = StepParams {
                eta_w1: 0.002,
                eta_w2: 0.002,
                eta_q,
                tau,
                nonlinearity: nonlin,
                mean_rate: 1e-3,
            };
            for t in 0..steps as usize {
                let (x, y): (Vector, Vector) = if source == 0 {
                    let (x, y) = synth.sample(t % synth.len());
                    (x.into_owned(), y.into_owned())
                } else {
                    (
                        gaussian(&mut rng, 20, 1, 2.0).column(0).into(),
                        gaussian(&mut rng, 10, 1, 2.0).column(0).into(),
                    )
                };
                if let Err(e) = bmvr_decoupled_step(&mut s, x.as_view(), y.as_view(), &p) {
                    return Outcome::error(e);
                }
            }
            let d = (s.q.transpose() - s.r.as_ref().unwrap()).norm();
            let expected = expected_factor * d0;
            worst = worst.max((d - expected).abs() / expected);
        }
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!(
            "{streams} data streams, decay factor {expected_factor:.6}, max relative deviation {worst:.2e} (< 1e-12)"
        ),
    }
}

// MNIST reproduction.

const MNIST_STEPS_K64: u64 = 5_000_000;
const MNIST_STEPS_K16: u64 = 1_000_000;

struct MnistResult {
    train_acc: f64,
    test_acc: f64,
}

fn mnist_run(
    train: &Dataset,
    test: &Dataset,
    preset_name: &str,
    variant: Variant,
    steps: u64,
) -> bmvr::Result<MnistResult> {
    let mut config = TrainConfig {
        variant,
        steps,
        seed: 0,
        ..Default::default()
    };
    preset(preset_name)
        .expect("preset exists")
        .apply(&mut config);
    let mut spec = RunSpec::new(config, train, test);
    spec.eval_every = steps;
    let row = run(&spec)?
        .log
        .final_row()
        .expect("at least one evaluation");
    Ok(MnistResult {
        train_acc: 100.0 * row.train_acc_mean.unwrap_or(f64::NAN),
        test_acc: 100.0 * row.test_acc_mean.unwrap_or(f64::NAN),
    })
}

fn describe(name: &str, result: &bmvr::Result<MnistResult>) -> String {
    match result {
        Ok(r) => format!("{name} train {:.2}% test {:.2}%", r.train_acc, r.test_acc),
        Err(e) => format!("{name} failed ({e})"),
    }
}

fn criterion_7() -> Outcome {
    let dir = std::env::var_os("BMVR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data/mnist"));
    let (train, test) = match load_mnist_dir(&dir, MnistProtocol::Inverted50k, true) {
        Ok(d) => d,
        Err(e) => return Outcome::error(format!("MNIST not available in {}: {e}", dir.display())),
    };
    let bmvr = mnist_run(&train, &test, "table3-k64", Variant::Bmvr, MNIST_STEPS_K64);
    let backprop = mnist_run(
        &train,
        &test,
        "table3-k64",
        Variant::Backprop,
        MNIST_STEPS_K64,
    );
    let within = |r: &bmvr::Result<MnistResult>, target: f64| {
        r.as_ref()
            .map(|r| (r.test_acc - target).abs() <= 1.5 && r.train_acc >= 98.0)
            .unwrap_or(false)
    };
    let pass = within(&bmvr, 93.6) && within(&backprop, 94.0);

    let bmvr16 = mnist_run(&train, &test, "table1-k16", Variant::Bmvr, MNIST_STEPS_K16);
    let backprop16 = mnist_run(
        &train,
        &test,
        "table1-k16",
        Variant::Backprop,
        MNIST_STEPS_K16,
    );
    Outcome {
        pass,
        detail: format!(
            "k=64, {MNIST_STEPS_K64} steps: {}, {} (targets test 93.6 +/- 1.5 and 94.0 +/- 1.5, train >= 98); logged k=16, {MNIST_STEPS_K16} steps: {}, {}",
            describe("BMVR", &bmvr),
            describe("backprop", &backprop),
            describe("BMVR", &bmvr16),
            describe("backprop", &backprop16)
        ),
    }
}

// Upper-bound inequality.

fn criterion_8() -> Outcome {
    let mut rng = rng(808);
    let mut min_slack = f64::INFINITY;
    let mut max_eig: f64 = 0.0;
    for _ in 0..25 {
        let m = rng.random_range(1..=8usize);
        let n = rng.random_range(1..=8usize);
        let x = gaussian(&mut rng, m, 100, 1.0);
        let b = gaussian(&mut rng, n, m, 1.0);
        let y = &b * &x + gaussian(&mut rng, n, 100, 0.5);
        let data = data_from(x, y);
        for _ in 0..20 {
            let k = rng.random_range(1..=4usize);
            let mut s = state(
                gaussian(&mut rng, k, m, 1.0),
                gaussian(&mut rng, n, k, 1.0),
                Mat::zeros(k, k),
            );
            let top =
                sym_eigen_desc(&hidden_covariance(&s, &data, Nonlinearity::Linear).unwrap()).0[0];
            s.w1 *= rng.random_range(0.05..1.0) / top.sqrt();
            let eig =
                sym_eigen_desc(&hidden_covariance(&s, &data, Nonlinearity::Linear).unwrap()).0[0];
            max_eig = max_eig.max(eig);
            let obj = objective(&s, &data, Nonlinearity::Linear).unwrap();
            let ub = upper_bound_objective(&s, &data).unwrap();
            min_slack = min_slack.min(ub - obj);
        }
    }
    Outcome {
        pass: max_eig <= 1.0 + 1e-9 && min_slack >= -1e-9,
        detail: format!(
            "500 states with Q = 0, max hidden covariance eigenvalue {max_eig:.6}, min (UB - objective) {min_slack:.3e} (>= -1e-9)"
        ),
    }
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut suite = Suite { failed: 0 };
    suite.timed(
        1,
        "oracle correctness",
        Duration::from_secs(10),
        criterion_1,
    );
    suite.timed(2, "gradient checks", Duration::from_secs(5), criterion_2);

    let start = Instant::now();
    match synth_runs() {
        Ok(runs) => {
            let c3 = criterion_3(&runs);
            let c4 = criterion_4(&runs);
            let c5 = criterion_5(&runs);
            let elapsed = start.elapsed();
            let budget = Duration::from_secs(120);
            suite.record(3, "convergence to the same optimum", budget, elapsed, c3);
            suite.record(4, "saturation", budget, elapsed, c4);
            suite.record(5, "teaching-signal identity", budget, elapsed, c5);
        }
        Err(e) => {
            for (id, name) in [
                (3, "convergence to the same optimum"),
                (4, "saturation"),
                (5, "teaching-signal identity"),
            ] {
                suite.record(
                    id,
                    name,
                    Duration::from_secs(120),
                    start.elapsed(),
                    Outcome::error(&e),
                );
            }
        }
    }

    suite.timed(6, "decoupled decay", Duration::from_secs(1), criterion_6);
    suite.timed(
        7,
        "MNIST nonlinear reproduction",
        Duration::from_secs(600),
        criterion_7,
    );
    suite.timed(
        8,
        "upper-bound inequality",
        Duration::from_secs(5),
        criterion_8,
    );

    println!(
        "{} of 8 criteria passed in {:.1}s",
        8 - suite.failed,
        total.elapsed().as_secs_f64()
    );
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
