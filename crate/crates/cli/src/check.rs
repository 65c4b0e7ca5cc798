//! Verification batteries behind `mechanic check`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mechanic_core::theory::{regret_battery, sweep_technical_inequality, ProofCase};
use mechanic_core::{
    AdamWHyper, BaseOptConfig, DeltaMode, LionHyper, Mechanic, SplitMix64, TheoreticalTunerState,
    TunerParams, TunerState,
};
use rayon::prelude::*;

use crate::{create_dir, resolve_output_dir, write_file, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    All,
    Inequality,
    Regret,
    Tuner,
    Wrapper,
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub suite: Suite,
    pub seed: u64,
    /// Inequality samples; the other suites scale their sizes from it.
    pub n: usize,
    pub output_dir: PathBuf,
    /// Test hook: records a synthetic failed check.
    pub inject_violation: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 1,
            n: 100_000,
            output_dir: PathBuf::from("runs/check"),
            inject_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    /// Smallest observed slack; negative means violated.
    pub worst_margin: f64,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, passed: bool, worst_margin: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            worst_margin,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub lines: Vec<CheckLine>,
    pub dir: PathBuf,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

pub fn inequality_check(n: usize, seed: u64) -> CheckLine {
    let report = sweep_technical_inequality(n, seed);
    let cases: Vec<String> = ProofCase::ALL
        .iter()
        .map(|c| format!("case{}={}", c.number(), report.case_counts[*c as usize]))
        .collect();
    let all_cases = report.case_counts.iter().all(|&k| k > 0);
    CheckLine::new(
        "technical_inequality",
        report.violations == 0 && all_cases,
        report.worst_margin,
        format!(
            "samples={} violations={} {} worst_sample={:?}",
            report.samples,
            report.violations,
            cases.join(" "),
            report.worst_sample
        ),
    )
}

pub fn regret_check(n_traces: usize, seed: u64, lengths: &[usize]) -> CliResult<Vec<CheckLine>> {
    let report = regret_battery(seed, n_traces, lengths, &[0.01, 1.0, 100.0], 10.0, 1.0)?;
    Ok(vec![
        CheckLine::new(
            "regret_bound",
            report.bound_violations == 0,
            report.worst_margin,
            format!(
                "runs={} violations={}",
                report.runs, report.bound_violations
            ),
        ),
        CheckLine::new(
            "wealth_positivity",
            report.wealth_violations == 0,
            report.min_wealth,
            format!(
                "runs={} violations={} min_wealth={:e}",
                report.runs, report.wealth_violations, report.min_wealth
            ),
        ),
    ])
}

fn mixed_feedback(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    let drift = rng.uniform(-0.5, 0.5);
    let mut hs: Vec<f64> = (0..len).map(|_| drift + rng.gaussian()).collect();
    hs[0] = hs[0].abs() + 0.1;
    hs
}

/// Largest relative deviation between the per-β scales produced by an `ε = 0`
/// tuner on `hs` and on `c·hs`.
pub fn scale_free_deviation(hs: &[f64], c: f64) -> f64 {
    let params = TunerParams {
        epsilon: 0.0,
        ..TunerParams::default()
    };
    let mut a = TunerState::new(&params).unwrap();
    let mut b = TunerState::new(&params).unwrap();
    let mut worst = 0.0f64;
    for &h in hs {
        a.step(h, &params).unwrap();
        b.step(c * h, &params).unwrap();
        for (x, y) in a.s.iter().zip(&b.s) {
            let denom = x.abs().max(y.abs());
            if denom > 0.0 {
                worst = worst.max((x - y).abs() / denom);
            }
        }
    }
    worst
}

/// `|tuner_sum(s) − s_init|/s_init` after a single step with feedback `h`.
pub fn first_scale_error(h: f64) -> f64 {
    let params = TunerParams::default();
    let mut st = TunerState::new(&params).unwrap();
    st.step(h, &params).unwrap();
    (st.scale() - params.s_init).abs() / params.s_init
}

pub fn tuner_invariants(n_seqs: usize, len: usize, seed: u64) -> Vec<CheckLine> {
    let params = TunerParams::default();
    let nonneg: Vec<f64> = (0..n_seqs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::stream(seed, i);
            let hs = mixed_feedback(&mut rng, len);
            let mut st = TunerState::new(&params).unwrap();
            let mut worst = f64::INFINITY;
            for h in hs {
                st.step(h, &params).unwrap();
                for v in st.m.iter().chain(&st.v).chain(&st.r).chain(&st.s) {
                    worst = worst.min(*v);
                }
            }
            worst
        })
        .collect();
    let nonneg_worst = nonneg.iter().copied().fold(f64::INFINITY, f64::min);

    let scale_free: Vec<f64> = (0..n_seqs as u64)
        .into_par_iter()
        .map(|i| {
            let hs = mixed_feedback(&mut SplitMix64::stream(seed ^ 0x5ca1e, i), len);
            [1e-3, 1.0, 1e3]
                .iter()
                .map(|&c| scale_free_deviation(&hs, c))
                .fold(0.0, f64::max)
        })
        .collect();
    let sf_worst = scale_free.iter().copied().fold(0.0, f64::max);

    let eps = params.epsilon;
    let first: Vec<(f64, f64)> = [1e-6, 1.0, 1e6]
        .iter()
        .map(|&h| (first_scale_error(h), 1e-6 + eps / h))
        .collect();
    let first_ok = first.iter().all(|(err, tol)| err <= tol);
    let first_margin = first
        .iter()
        .map(|(e, t)| t - e)
        .fold(f64::INFINITY, f64::min);

    let wealth: Vec<f64> = (0..n_seqs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::stream(seed ^ 0x3a17, i);
            let hs = mixed_feedback(&mut rng, len);
            let mut st = TheoreticalTunerState::new(1.0, 1.0).unwrap();
            let mut worst = f64::INFINITY;
            for h in hs {
                st.step(h).unwrap();
                worst = worst.min(st.wealth());
            }
            worst
        })
        .collect();
    let wealth_min = wealth.iter().copied().fold(f64::INFINITY, f64::min);

    vec![
        CheckLine::new(
            "tuner_nonnegativity",
            nonneg_worst >= 0.0,
            nonneg_worst,
            format!("sequences={n_seqs} steps={len} min_stat={nonneg_worst:e}"),
        ),
        CheckLine::new(
            "tuner_scale_free",
            sf_worst <= 1e-10,
            1e-10 - sf_worst,
            format!("sequences={n_seqs} steps={len} max_rel_dev={sf_worst:e}"),
        ),
        CheckLine::new(
            "tuner_first_scale",
            first_ok,
            first_margin,
            format!(
                "errors={:?}",
                first.iter().map(|(e, _)| *e).collect::<Vec<_>>()
            ),
        ),
        CheckLine::new(
            "theoretical_wealth_positivity",
            wealth_min > 0.0,
            wealth_min,
            format!("sequences={n_seqs} steps={len} min_wealth={wealth_min:e}"),
        ),
    ]
}

/// Noisy quadratic gradient oracle `g = D(x − c) + σξ`. The center sits close
/// to the start so early feedback is noise-dominated and takes both signs.
struct NoisyQuadratic {
    diag: Vec<f64>,
    center: Vec<f64>,
    sigma: f64,
    rng: SplitMix64,
}

impl NoisyQuadratic {
    fn new(seed: u64, x1: &[f64]) -> Self {
        let mut rng = SplitMix64::stream(seed, 0x9a);
        Self {
            diag: x1.iter().map(|_| rng.uniform(0.1, 1.0)).collect(),
            center: x1.iter().map(|x| x + 0.05 * rng.gaussian()).collect(),
            sigma: 1.0,
            rng: SplitMix64::stream(seed, 0x9b),
        }
    }

    fn grad(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.diag)
            .zip(&self.center)
            .map(|((x, d), c)| d * (x - c) + self.sigma * self.rng.gaussian())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapperStats {
    pub min_stat: f64,
    pub neutral: bool,
    pub reconstruction_exact: bool,
    /// Largest `‖x_stored − x_recovered‖/(1 + ‖x_stored‖)` over the run.
    pub mode_deviation: f64,
    /// Whether the two modes agreed bitwise until recovery took over.
    pub bitwise_before_switch: bool,
    pub switch_step: Option<usize>,
    pub final_scale: f64,
}

/// Runs the wrapper in stored and guarded-recovered mode side by side on the
/// same noisy quadratic and gathers the invariant measurements.
pub fn wrapper_run(
    seed: u64,
    dim: usize,
    steps: usize,
    base: &BaseOptConfig,
    lr: f64,
    params: &TunerParams,
) -> WrapperStats {
    let mut rng = SplitMix64::stream(seed, 0x11);
    let x1: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    let mut stored = Mechanic::new(&x1, params.clone()).unwrap();
    let mut recovered = Mechanic::new(&x1, params.clone())
        .unwrap()
        .with_mode(DeltaMode::Recovered);
    let (mut base_s, mut base_r) = (base.build(dim), base.build(dim));
    let (mut oracle_s, mut oracle_r) = (
        NoisyQuadratic::new(seed, &x1),
        NoisyQuadratic::new(seed, &x1),
    );
    let (mut xs, mut xr) = (x1.clone(), x1.clone());
    let mut stats = WrapperStats {
        min_stat: f64::INFINITY,
        neutral: true,
        reconstruction_exact: true,
        mode_deviation: 0.0,
        bitwise_before_switch: true,
        switch_step: None,
        final_scale: 0.0,
    };
    for t in 0..steps {
        let gs = oracle_s.grad(&xs);
        let gr = oracle_r.grad(&xr);
        let us = base_s.update(&gs, lr, &xs).unwrap();
        let ur = base_r.update(&gr, lr, &xr).unwrap();
        stored.step(&mut xs, &gs, &us).unwrap();
        recovered.step(&mut xr, &gr, &ur).unwrap();

        let tuner = stored.tuner();
        for v in tuner
            .m
            .iter()
            .chain(&tuner.v)
            .chain(&tuner.r)
            .chain(&tuner.s)
        {
            stats.min_stat = stats.min_stat.min(*v);
        }
        if t == 0 && xs != x1 {
            stats.neutral = false;
        }
        let scale = stored.scale();
        let delta = stored.delta().unwrap();
        let exact = xs
            .iter()
            .zip(stored.x_ref())
            .zip(delta)
            .all(|((x, r), d)| *x == r + scale * d);
        stats.reconstruction_exact &= exact;

        if stats.switch_step.is_none() && recovered.extra_param_vectors() == 0 {
            stats.switch_step = Some(t);
        }
        if stats.switch_step.is_none() && xs != xr {
            stats.bitwise_before_switch = false;
        }
        let diff: f64 = xs
            .iter()
            .zip(&xr)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let size: f64 = xs.iter().map(|a| a * a).sum::<f64>().sqrt();
        stats.mode_deviation = stats.mode_deviation.max(diff / (1.0 + size));
    }
    stats.final_scale = stored.scale();
    stats
}

/// Tolerance for stored vs recovered iterates.
pub const MODE_EQUIVALENCE_TOL: f64 = 1e-9;

pub fn wrapper_invariants(seed: u64, steps: usize) -> Vec<CheckLine> {
    let bases = [
        (BaseOptConfig::Sgd, 0.05),
        (BaseOptConfig::Momentum { beta: 0.9 }, 0.01),
        (BaseOptConfig::AdamW(AdamWHyper::default()), 0.01),
        (BaseOptConfig::Lion(LionHyper::default()), 0.001),
    ];
    let runs: Vec<WrapperStats> = bases
        .par_iter()
        .enumerate()
        .map(|(k, (base, lr))| {
            wrapper_run(
                seed.wrapping_add(k as u64),
                16,
                steps,
                base,
                *lr,
                &TunerParams::default(),
            )
        })
        .collect();
    let min_stat = runs
        .iter()
        .map(|r| r.min_stat)
        .fold(f64::INFINITY, f64::min);
    let dev = runs.iter().map(|r| r.mode_deviation).fold(0.0, f64::max);
    let switched = runs.iter().filter(|r| r.switch_step.is_some()).count();
    vec![
        CheckLine::new(
            "wrapper_nonnegativity",
            min_stat >= 0.0,
            min_stat,
            format!("runs={} steps={steps}", runs.len()),
        ),
        CheckLine::new(
            "first_iterate_neutrality",
            runs.iter().all(|r| r.neutral),
            0.0,
            format!("runs={}", runs.len()),
        ),
        CheckLine::new(
            "stored_reconstruction",
            runs.iter().all(|r| r.reconstruction_exact),
            0.0,
            format!("runs={} steps={steps} checked bitwise", runs.len()),
        ),
        CheckLine::new(
            "mode_equivalence_before_switch",
            runs.iter().all(|r| r.bitwise_before_switch) && switched == runs.len(),
            0.0,
            format!(
                "bitwise until recovery starts; switched={switched}/{}",
                runs.len()
            ),
        ),
        CheckLine::new(
            "mode_equivalence",
            dev <= MODE_EQUIVALENCE_TOL && switched == runs.len(),
            MODE_EQUIVALENCE_TOL - dev,
            format!(
                "max_rel_dev={dev:e} switched={switched}/{} switch_steps={:?} final_scales={:?}",
                runs.len(),
                runs.iter().map(|r| r.switch_step).collect::<Vec<_>>(),
                runs.iter().map(|r| r.final_scale).collect::<Vec<_>>()
            ),
        ),
    ]
}

fn write_reports(lines: &[CheckLine], dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    let mut report = String::new();
    for l in lines {
        let status = if l.passed { "PASS" } else { "FAIL" };
        writeln!(report, "{status} {}: {}", l.name, l.detail).unwrap();
    }
    write_file(&dir.join("report.txt"), &report)?;
    let path = dir.join("worst_margins.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::CliError::csv(&path, e))?;
    let err = |e| crate::CliError::csv(&path, e);
    w.write_record(["check", "passed", "worst_margin"])
        .map_err(err)?;
    for l in lines {
        w.write_record([
            l.name.clone(),
            u8::from(l.passed).to_string(),
            format!("{:.16e}", l.worst_margin),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| crate::CliError::io(&path, e))
}

pub fn cmd_check(opts: &CheckOptions) -> CliResult<CheckOutcome> {
    let want = |s: Suite| opts.suite == Suite::All || opts.suite == s;
    let mut lines = Vec::new();
    if want(Suite::Inequality) {
        lines.push(inequality_check(opts.n, opts.seed));
    }
    if want(Suite::Regret) {
        let traces = (opts.n / 1000).clamp(1, 100);
        lines.extend(regret_check(traces, opts.seed, &[100, 1000])?);
    }
    if want(Suite::Tuner) {
        let seqs = (opts.n / 10_000).clamp(1, 16);
        lines.extend(tuner_invariants(seqs, 10_000, opts.seed));
    }
    if want(Suite::Wrapper) {
        lines.extend(wrapper_invariants(opts.seed, 10_000));
    }
    if opts.inject_violation {
        lines.push(CheckLine::new(
            "injected_violation",
            false,
            -1.0,
            "synthetic failure requested by --inject-violation".into(),
        ));
    }
    let dir = resolve_output_dir(&opts.output_dir);
    write_reports(&lines, &dir)?;
    Ok(CheckOutcome { lines, dir })
}
