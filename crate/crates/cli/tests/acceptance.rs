//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a criterion outside `KNOWN_FAILURES` fails.

use std::path::Path;
use std::time::{Duration, Instant};

use mechanic_cli::check::{
    first_scale_error, scale_free_deviation, tuner_invariants, wrapper_invariants,
};
use mechanic_cli::{cmd_run, RunOptions};
use mechanic_core::harness::{
    decomposition_residual, lr_sweep_problem, run_experiment, run_problem, Problem,
};
use mechanic_core::models::{finite_difference_grad, gradient_relative_error, MlpHead};
use mechanic_core::theory::{regret_battery, regret_battery_with, sweep_technical_inequality};
use mechanic_core::{Batch, BetDirection, Dataset, ExperimentConfig, Objective, SplitMix64};

/// Criteria expected to fail, with the reason. See the README.
const KNOWN_FAILURES: &[(u32, &str)] = &[
    (
        3,
        "as-written bet sign: on negative-drift traces the scale stays at 0, so regret against s > 0 grows linearly",
    ),
    (
        8,
        "signed running max: the tuner never leaves s = 0 on tasks whose minibatch gradients agree",
    ),
    (
        9,
        "signed running max: large-batch runs stall at s = 0, inverting the expected ordering",
    ),
    (
        11,
        "recovering the displacement at s ~ s_init loses ~1e-8 relative precision to cancellation",
    ),
];

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: u32, title: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    Outcome {
        id,
        title,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn logistic_config(seed: u64, extra: &str) -> ExperimentConfig {
    let text = format!(
        "[run]\nseed = {seed}\n[objective]\nkind = logreg\n[data]\nsource = synthetic\n{extra}"
    );
    ExperimentConfig::parse_str(&text).unwrap()
}

fn criterion_1() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut nontrivial = 0;
    let mut runs = 0;
    for (opt, lr) in [("sgd", 0.1), ("adamw", 0.01)] {
        for seed in 1..=5u64 {
            let cfg = logistic_config(
                seed,
                &format!(
                    "n = 512\ndim = 20\nnoise = 0.1\n[run]\nsteps = 200\nbatch_size = 8\nledger = true\n\
                     [optimizer]\nkind = {opt}\nlr = {lr}\n[mechanic]\nlambda = 0\n"
                ),
            );
            let rec = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return (false, format!("{opt} seed {seed}: {e}")),
            };
            runs += 1;
            if rec.final_s_sum() > 0.0 {
                nontrivial += 1;
            }
            let ledger = rec.ledger.expect("ledger enabled");
            let mut rng = SplitMix64::stream(seed, 0xacc1);
            for _ in 0..5 {
                let s_ref = 10f64.powf(rng.uniform(-2.0, 1.0));
                let spread = 10f64.powf(rng.uniform(-1.0, 1.0));
                let target: Vec<f64> = (0..20).map(|_| spread * rng.gaussian()).collect();
                worst = worst.max(decomposition_residual(&ledger, s_ref, &target).unwrap());
            }
        }
    }
    (
        worst <= 1e-9,
        format!("runs={runs} (scale > 0 in {nontrivial}) pairs=5 each, max residual {worst:.3e} <= 1e-9"),
    )
}

fn criterion_2() -> (bool, String) {
    let mut violations = 0;
    let mut cases = [0usize; 5];
    let mut worst = f64::INFINITY;
    for seed in 1..=3 {
        let r = sweep_technical_inequality(100_000, seed);
        violations += r.violations;
        worst = worst.min(r.worst_margin);
        for (c, k) in cases.iter_mut().zip(r.case_counts) {
            *c += k;
        }
    }
    (
        violations == 0 && cases.iter().all(|&k| k > 0),
        format!("3 x 1e5 samples, violations={violations}, per-case {cases:?}, worst margin {worst:.3e}"),
    )
}

fn criteria_3_4() -> (Outcome, Outcome) {
    let start = Instant::now();
    let report = regret_battery(2024, 100, &[100, 1000], &[0.01, 1.0, 100.0], 10.0, 1.0).unwrap();
    let elapsed = start.elapsed();
    let contrarian = regret_battery_with(
        2024,
        100,
        &[100, 1000],
        &[0.01, 1.0, 100.0],
        10.0,
        1.0,
        BetDirection::Contrarian,
    )
    .unwrap();
    (
        Outcome {
            id: 3,
            title: "regret bound, C = 10",
            passed: report.bound_violations == 0 && elapsed < Duration::from_secs(30),
            detail: format!(
                "runs={} violations={} worst margin {:.3e} (contrarian bet, for reference: violations={} worst margin {:.3e})",
                report.runs,
                report.bound_violations,
                report.worst_margin,
                contrarian.bound_violations,
                contrarian.worst_margin
            ),
            elapsed,
        },
        Outcome {
            id: 4,
            title: "wealth positivity",
            passed: report.wealth_violations == 0,
            detail: format!(
                "runs={} violations={} min wealth {:.3e}",
                report.runs, report.wealth_violations, report.min_wealth
            ),
            elapsed: Duration::ZERO,
        },
    )
}

fn criterion_5() -> (bool, String) {
    let mut worst = 0.0f64;
    for seq in 0..4u64 {
        let mut rng = SplitMix64::stream(55, seq);
        let drift = rng.uniform(-0.5, 0.5);
        let mut hs: Vec<f64> = (0..10_000).map(|_| drift + rng.gaussian()).collect();
        hs[0] = hs[0].abs() + 0.1;
        for c in [1e-3, 1.0, 1e3] {
            worst = worst.max(scale_free_deviation(&hs, c));
        }
    }
    (
        worst <= 1e-10,
        format!("4 sequences x 1e4 steps, c in {{1e-3, 1, 1e3}}, max relative deviation {worst:.3e} <= 1e-10"),
    )
}

fn criterion_6() -> (bool, String) {
    let eps = 1e-8;
    let rows: Vec<(f64, f64, f64)> = [1e-6, 1.0, 1e6]
        .iter()
        .map(|&h| (h, first_scale_error(h), 1e-6 + eps / h))
        .collect();
    let ok = rows.iter().all(|(_, e, t)| e <= t);
    let detail: Vec<String> = rows
        .iter()
        .map(|(h, e, t)| format!("h={h:e}: {e:.2e} <= {t:.2e}"))
        .collect();
    (ok, detail.join(", "))
}

fn criterion_7() -> (bool, String) {
    let mut rng = SplitMix64::new(77);
    let (n, d, k) = (32, 5, 3);
    let features: Vec<f64> = (0..n * d).map(|_| rng.gaussian()).collect();
    let signed: Vec<f64> = (0..n)
        .map(|_| if rng.next_f64() < 0.5 { -1.0 } else { 1.0 })
        .collect();
    let classes: Vec<f64> = (0..n).map(|_| rng.below(k as u64) as f64).collect();
    let real: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let ds_signed = Dataset::from_dense(features.clone(), signed, d).unwrap();
    let ds_class = Dataset::from_dense(features.clone(), classes, d).unwrap();
    let ds_real = Dataset::from_dense(features, real, d).unwrap();
    let cases: Vec<(&str, Objective, &Dataset)> = vec![
        (
            "quadratic",
            Objective::Quadratic {
                center: vec![0.3; d],
            },
            &ds_real,
        ),
        ("linreg", Objective::LinReg { dim: d }, &ds_real),
        ("logreg", Objective::LogReg { dim: d }, &ds_signed),
        (
            "multilogreg",
            Objective::MultiLogReg { dim: d, classes: k },
            &ds_class,
        ),
        (
            "mlp-mse",
            Objective::Mlp {
                inputs: d,
                hidden: 4,
                outputs: 1,
                head: MlpHead::Mse,
            },
            &ds_real,
        ),
        (
            "mlp-ce",
            Objective::Mlp {
                inputs: d,
                hidden: 4,
                outputs: k,
                head: MlpHead::CrossEntropy,
            },
            &ds_class,
        ),
    ];
    let mut worst = Vec::new();
    for (name, obj, data) in &cases {
        let mut w = 0.0f64;
        for _ in 0..20 {
            let params: Vec<f64> = (0..obj.param_dim()).map(|_| 0.7 * rng.gaussian()).collect();
            let idx: Vec<usize> = (0..8).map(|_| rng.below(n as u64) as usize).collect();
            let batch = Batch::new(data, &idx);
            let (_, g) = obj.loss_and_grad(&params, &batch).unwrap();
            let fd = finite_difference_grad(obj, &params, &batch, 1e-5).unwrap();
            w = w.max(gradient_relative_error(&g, &fd));
        }
        worst.push((name.to_string(), w));
    }
    let ok = worst.iter().all(|(_, w)| *w <= 1e-5);
    let detail: Vec<String> = worst.iter().map(|(n, w)| format!("{n}={w:.1e}")).collect();
    (
        ok,
        format!("20 draws each, max rel error: {}", detail.join(" ")),
    )
}

const BASELINE_GRID: [f64; 8] = [3.0, 1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001];

fn criterion_8() -> (bool, String) {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (d, noise) in [(10, 0.0), (10, 0.2), (100, 0.0), (100, 0.2)] {
        let mut mech = Vec::new();
        let mut base = Vec::new();
        for seed in 1..=5u64 {
            let cfg = logistic_config(
                seed,
                &format!("n = 2048\ndim = {d}\nnoise = {noise}\n[run]\nepochs = 20\n"),
            );
            let problem = Problem::from_config(&cfg).unwrap();
            mech.push(run_problem(&cfg, &problem).unwrap().final_loss);
            base.push(
                lr_sweep_problem(&cfg, &problem, &BASELINE_GRID)
                    .unwrap()
                    .best_record()
                    .final_loss,
            );
        }
        let (m, b) = (median(mech), median(base));
        let ratio = m / b;
        if ratio <= 1.1 {
            wins += 1;
        }
        parts.push(format!("d={d},noise={noise}: {m:.4}/{b:.4}={ratio:.3}"));
    }
    (
        wins >= 3,
        format!("{wins}/4 tasks within 1.1x (need 3): {}", parts.join("; ")),
    )
}

fn criterion_9() -> (bool, String) {
    let final_scale = |batch: usize| -> f64 {
        let scales: Vec<f64> = (1..=5u64)
            .map(|seed| {
                let mut cfg = logistic_config(
                    seed,
                    "n = 4096\ndim = 20\nnoise = 0.1\n[run]\nepochs = 20\n",
                );
                cfg.run.batch_size = batch;
                run_experiment(&cfg).unwrap().final_s_sum()
            })
            .collect();
        median(scales)
    };
    let (small, large) = (final_scale(8), final_scale(128));
    (
        small < large,
        format!("median final scale: batch 8 = {small:.4e}, batch 128 = {large:.4e} (need batch 8 < batch 128)"),
    )
}

fn criterion_10() -> (bool, String) {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let root = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for k in 0..2 {
        let opts = RunOptions {
            config: fixtures.join("golden.cfg"),
            overrides: Vec::new(),
            output_dir: Some(root.path().join(format!("run{k}"))),
        };
        let (_, dir) = cmd_run(&opts).unwrap();
        traces.push(std::fs::read(dir.join("trace.csv")).unwrap());
    }
    let frozen = std::fs::read(fixtures.join("golden_trace.csv")).unwrap();
    let repeat = traces[0] == traces[1];
    let golden = traces[0] == frozen;
    (
        repeat && golden,
        format!("repeat identical={repeat}, matches frozen fixture={golden}"),
    )
}

fn criterion_11() -> (bool, String) {
    let mut lines = wrapper_invariants(11, 10_000);
    lines.extend(
        tuner_invariants(4, 10_000, 11)
            .into_iter()
            .filter(|l| l.name == "tuner_nonnegativity"),
    );
    let ok = lines.iter().all(|l| l.passed);
    let detail: Vec<String> = lines
        .iter()
        .map(|l| {
            let mark = if l.passed { "ok" } else { "FAILED" };
            if l.passed {
                format!("{}={mark}", l.name)
            } else {
                format!("{}={mark} ({})", l.name, l.detail)
            }
        })
        .collect();
    (ok, detail.join(", "))
}

fn main() {
    // Compiled as a plain binary; accept and ignore libtest flags.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }

    let mut outcomes = vec![
        timed(1, "decomposition identity, lambda = 0", criterion_1),
        timed(2, "technical inequality sweep", criterion_2),
    ];
    let (c3, c4) = criteria_3_4();
    outcomes.push(c3);
    outcomes.push(c4);
    outcomes.push(timed(5, "scale-freeness at epsilon = 0", criterion_5));
    outcomes.push(timed(6, "first non-zero scale", criterion_6));
    outcomes.push(timed(7, "gradient correctness", criterion_7));
    outcomes.push(timed(8, "convex suite competitiveness", criterion_8));
    outcomes.push(timed(9, "batch-size trend of the scale", criterion_9));
    outcomes.push(timed(10, "golden trace determinism", criterion_10));
    outcomes.push(timed(11, "invariant battery", criterion_11));

    let limits = [(1, 10.0), (2, 5.0), (3, 30.0), (8, 300.0)];
    for o in &mut outcomes {
        if let Some((_, secs)) = limits.iter().find(|(id, _)| *id == o.id) {
            if o.elapsed.as_secs_f64() >= *secs {
                o.passed = false;
                o.detail.push_str(&format!(
                    " [runtime {:.1}s exceeds {secs}s]",
                    o.elapsed.as_secs_f64()
                ));
            }
        }
    }

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {:>2} ({}) [{:.2}s]: {}",
            o.id,
            o.title,
            o.elapsed.as_secs_f64(),
            o.detail
        );
        if !o.passed {
            match KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id) {
                Some((_, why)) => println!("     known failure: {why}"),
                None => unexpected.push(o.id),
            }
        } else if KNOWN_FAILURES.iter().any(|(id, _)| *id == o.id) {
            println!("     note: listed as a known failure but passed");
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
