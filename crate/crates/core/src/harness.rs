//! Training loops, regret ledgers and learning-rate sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::base_opt::{BaseOptimizer, UpdateVector};
use crate::config::{DataSource, ExperimentConfig, ObjectiveKind, ScheduleSpec};
use crate::data::{load_libsvm, minibatch_iter, synth_logistic, Dataset, DENSE_DIM_LIMIT};
use crate::error::{check_dim, Error, Result};
use crate::mechanic::Mechanic;
use crate::models::{Batch, MlpHead, Objective};
use crate::schedule::{Schedule, ScheduleKind};
use crate::vector::{clip_global_norm, dot, norm};

/// Runs abort once the minibatch loss exceeds this multiple of the initial
/// full-data loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Relative tolerance under which two sweep losses count as tied.
pub const SWEEP_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    /// Full vectors are kept only when the dimension is at most
    /// [`DENSE_DIM_LIMIT`].
    pub g: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub g_dot_x: f64,
    pub g_dot_delta: f64,
    pub s_sum: f64,
    pub h: f64,
    pub loss: f64,
}

/// The exact values seen by the wrapper at every step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub x_ref: Vec<f64>,
    pub entries: Vec<LedgerEntry>,
    /// `Σ_t g_t`, enough to evaluate linear regret against any comparator
    /// without the per-step vectors.
    pub grad_sum: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub store_vectors: bool,
}

impl RegretLedger {
    pub fn new(x_ref: Vec<f64>, seed: u64, config_hash: String) -> Self {
        let store_vectors = x_ref.len() <= DENSE_DIM_LIMIT;
        Self {
            grad_sum: vec![0.0; x_ref.len()],
            x_ref,
            entries: Vec::new(),
            seed,
            config_hash,
            store_vectors,
        }
    }

    pub fn with_vectors(mut self, store: bool) -> Self {
        self.store_vectors = store;
        self
    }

    pub fn dim(&self) -> usize {
        self.x_ref.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(
        &mut self,
        g: &[f64],
        x: &[f64],
        delta: &[f64],
        s_sum: f64,
        h: f64,
        loss: f64,
    ) -> Result<()> {
        let d = self.dim();
        check_dim("ledger gradient", d, g.len())?;
        check_dim("ledger iterate", d, x.len())?;
        check_dim("ledger delta", d, delta.len())?;
        for (acc, gj) in self.grad_sum.iter_mut().zip(g) {
            *acc += gj;
        }
        let keep = |v: &[f64]| self.store_vectors.then(|| v.to_vec());
        let entry = LedgerEntry {
            g: keep(g),
            x: keep(x),
            delta: keep(delta),
            g_dot_x: dot(g, x),
            g_dot_delta: dot(g, delta),
            s_sum,
            h,
            loss,
        };
        self.entries.push(entry);
        Ok(())
    }

    /// Appends the steps of `other`, which must have the same dimension.
    pub fn extend(&mut self, other: &RegretLedger) -> Result<()> {
        check_dim("ledger concatenation", self.dim(), other.dim())?;
        self.store_vectors &= other.store_vectors;
        for (a, b) in self.grad_sum.iter_mut().zip(&other.grad_sum) {
            *a += b;
        }
        self.entries.extend(other.entries.iter().cloned());
        if !self.store_vectors {
            for e in &mut self.entries {
                e.g = None;
                e.x = None;
                e.delta = None;
            }
        }
        Ok(())
    }

    fn has_vectors(&self) -> bool {
        self.store_vectors && self.entries.iter().all(|e| e.g.is_some())
    }
}

/// `Σ_t ⟨g_t, x_t − x̊⟩`.
pub fn linearized_regret(ledger: &RegretLedger, comparator: &[f64]) -> Result<f64> {
    check_dim("regret comparator", ledger.dim(), comparator.len())?;
    if ledger.has_vectors() {
        Ok(ledger
            .entries
            .iter()
            .map(|e| {
                let g = e.g.as_deref().unwrap();
                let x = e.x.as_deref().unwrap();
                g.iter()
                    .zip(x)
                    .zip(comparator)
                    .map(|((g, x), c)| g * (x - c))
                    .sum::<f64>()
            })
            .sum())
    } else {
        let gx: f64 = ledger.entries.iter().map(|e| e.g_dot_x).sum();
        Ok(gx - dot(&ledger.grad_sum, comparator))
    }
}

/// `Σ_t h_t·(S_t − s̊)`, the regret of the tuner on its scalar problem.
pub fn tuner_regret(ledger: &RegretLedger, s_ref: f64) -> f64 {
    ledger.entries.iter().map(|e| e.h * (e.s_sum - s_ref)).sum()
}

/// Relative residual `|L − R|/(1 + |L|)` of the decomposition
/// `Σ⟨g, x_t − x̊⟩ = Σ h_t(S_t − s̊) + s̊·Σ⟨g_t, Δ_t − (x̊ − x_ref)/s̊⟩`.
///
/// The identity only holds when the ledger was recorded with `λ = 0`.
pub fn decomposition_residual(
    ledger: &RegretLedger,
    s_ref: f64,
    comparator: &[f64],
) -> Result<f64> {
    if s_ref == 0.0 || !s_ref.is_finite() {
        return Err(Error::Precondition(format!(
            "comparator scale must be finite and nonzero, got {s_ref}"
        )));
    }
    check_dim("regret comparator", ledger.dim(), comparator.len())?;
    let lhs = linearized_regret(ledger, comparator)?;
    let shift: Vec<f64> = comparator
        .iter()
        .zip(&ledger.x_ref)
        .map(|(c, r)| (c - r) / s_ref)
        .collect();
    let base = if ledger.has_vectors() {
        ledger
            .entries
            .iter()
            .map(|e| {
                let g = e.g.as_deref().unwrap();
                let delta = e.delta.as_deref().unwrap();
                g.iter()
                    .zip(delta)
                    .zip(&shift)
                    .map(|((g, d), c)| g * (d - c))
                    .sum::<f64>()
            })
            .sum::<f64>()
    } else {
        ledger.entries.iter().map(|e| e.g_dot_delta).sum::<f64>() - dot(&ledger.grad_sum, &shift)
    };
    let rhs = tuner_regret(ledger, s_ref) + s_ref * base;
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

/// SHA-256 of the resolved config echo, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.echo().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// One row of `trace.csv`. `loss` and `grad_norm` are measured at `x_t`; the
/// tuner columns are its state after processing step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub h: f64,
    pub s_sum: f64,
    pub s: Vec<f64>,
    pub wealth: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub loss: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub trace: Vec<TraceRow>,
    pub initial_loss: f64,
    /// Full-data loss at the final iterate; infinite for diverged runs.
    pub final_loss: f64,
    pub final_params: Vec<f64>,
    pub steps_run: usize,
    pub skipped_steps: usize,
    /// Number of per-β columns in the trace; zero without the wrapper.
    pub n_betas: usize,
    pub ledger: Option<RegretLedger>,
    pub diverged: Option<Divergence>,
}

impl RunRecord {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn s_sum_curve(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.s_sum).collect()
    }

    /// Scale after the last step; 1 without the wrapper.
    pub fn final_s_sum(&self) -> f64 {
        self.trace.last().map_or(1.0, |r| r.s_sum)
    }

    pub fn trace_header(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["step", "loss", "grad_norm", "h", "s_sum"]
            .map(String::from)
            .to_vec();
        cols.extend((0..self.n_betas).map(|i| format!("s_{i}")));
        cols.extend((0..self.n_betas).map(|i| format!("wealth_{i}")));
        cols
    }

    /// The trace as CSV with every float in 17 significant digits.
    pub fn trace_csv(&self) -> String {
        let mut out = self.trace_header().join(",");
        out.push('\n');
        for row in &self.trace {
            write!(out, "{}", row.step).unwrap();
            for v in [row.loss, row.grad_norm, row.h, row.s_sum]
                .iter()
                .chain(&row.s)
                .chain(&row.wealth)
            {
                write!(out, ",{}", fmt_float(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Scientific notation with 17 significant digits; parses back exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// The objective and dataset a config describes.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub data: Dataset,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = &cfg.objective;
        let mut data = match &cfg.data.source {
            DataSource::None => Dataset::empty(),
            DataSource::Synthetic => synth_logistic(
                cfg.data.seed.unwrap_or(cfg.run.seed),
                cfg.data.n,
                cfg.data.dim,
                cfg.data.noise,
            )?,
            DataSource::Libsvm(path) => load_libsvm(path, None)?,
        };
        let objective = match spec.kind {
            ObjectiveKind::Quadratic => Objective::Quadratic {
                center: vec![spec.center; spec.dim],
            },
            ObjectiveKind::LinReg => Objective::LinReg { dim: data.dim },
            ObjectiveKind::LogReg => {
                data.to_signed_labels();
                Objective::LogReg { dim: data.dim }
            }
            ObjectiveKind::MultiLogReg => {
                let classes = data.to_class_indices();
                Objective::MultiLogReg {
                    dim: data.dim,
                    classes,
                }
            }
            ObjectiveKind::Mlp => {
                let outputs = match spec.head {
                    MlpHead::Mse => 1,
                    MlpHead::CrossEntropy => data.to_class_indices(),
                };
                Objective::Mlp {
                    inputs: data.dim,
                    hidden: spec.hidden,
                    outputs,
                    head: spec.head,
                }
            }
        };
        Ok(Self { objective, data })
    }

    pub fn full_loss(&self, params: &[f64]) -> Result<f64> {
        let all = self.data.full_batch();
        self.objective.loss(params, &Batch::new(&self.data, &all))
    }
}

fn total_steps(cfg: &ExperimentConfig, n: usize) -> Result<usize> {
    if let Some(steps) = cfg.run.steps {
        return Ok(steps);
    }
    if n == 0 {
        return Err(Error::Config(
            "objectives without data need run.steps".into(),
        ));
    }
    Ok(cfg.run.epochs * n.div_ceil(cfg.run.batch_size))
}

fn build_schedule(cfg: &ExperimentConfig, total: usize) -> Result<Schedule> {
    let (kind, warmup) = match &cfg.schedule {
        ScheduleSpec::Constant => (ScheduleKind::Constant, 0),
        ScheduleSpec::Linear { warmup } => (ScheduleKind::LinearWarmupDecay, *warmup),
        ScheduleSpec::Cosine { warmup } => (ScheduleKind::CosineWarmup, *warmup),
        ScheduleSpec::Step { milestones, factor } => (
            ScheduleKind::StepDecay {
                milestones: milestones.clone(),
                factor: *factor,
            },
            0,
        ),
    };
    let schedule = Schedule {
        kind,
        base_lr: cfg.optimizer.lr,
        total_steps: total,
        warmup_steps: warmup,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Cycles through seeded epoch permutations of the dataset.
struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    batches: Vec<Vec<usize>>,
    next: usize,
}

impl BatchStream {
    fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n > 0 && batch_size > n {
            return Err(Error::Config(format!(
                "batch_size {batch_size} exceeds dataset size {n}"
            )));
        }
        Ok(Self {
            n,
            batch_size,
            seed,
            epoch: 0,
            batches: Vec::new(),
            next: 0,
        })
    }

    fn next_batch(&mut self) -> Result<&[usize]> {
        if self.n == 0 {
            return Ok(&[]);
        }
        if self.next == self.batches.len() {
            self.batches = minibatch_iter(self.n, self.batch_size, self.seed, self.epoch)?;
            self.epoch += 1;
            self.next = 0;
        }
        self.next += 1;
        Ok(&self.batches[self.next - 1])
    }
}

/// Runs the configured training loop. Divergence is reported as an error;
/// use [`run_experiment_lenient`] to get the partial record instead.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let record = run_experiment_lenient(cfg)?;
    match record.diverged {
        Some(d) => Err(Error::Diverged {
            step: d.step,
            loss: d.loss,
            threshold: d.threshold,
        }),
        None => Ok(record),
    }
}

/// Like [`run_experiment`], but a diverged run returns its record with
/// `diverged` set and an infinite final loss.
pub fn run_experiment_lenient(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let problem = Problem::from_config(cfg)?;
    run_problem(cfg, &problem)
}

/// Runs `cfg` on an already built problem; the data section of `cfg` is
/// ignored.
pub fn run_problem(cfg: &ExperimentConfig, problem: &Problem) -> Result<RunRecord> {
    let objective = &problem.objective;
    let data = &problem.data;
    let dim = objective.param_dim();
    let total = total_steps(cfg, data.len())?;
    let schedule = build_schedule(cfg, total)?;
    let mut batches = BatchStream::new(data.len(), cfg.run.batch_size, cfg.run.seed)?;
    let mut base: Box<dyn BaseOptimizer> = cfg.optimizer.base.build(dim);

    let mut x = objective.init_params(cfg.run.seed, cfg.objective.init_scale);
    let x_ref = x.clone();
    let mut mechanic = if cfg.mechanic.enabled {
        Some(
            Mechanic::new(&x, cfg.mechanic.tuner.clone())?
                .with_mode(cfg.mechanic.delta_mode)
                .with_nonfinite(cfg.mechanic.nonfinite),
        )
    } else {
        None
    };
    let n_betas = mechanic.as_ref().map_or(0, |m| m.params().n());
    let mut ledger = cfg
        .run
        .ledger
        .then(|| RegretLedger::new(x_ref.clone(), cfg.run.seed, config_hash(cfg)));

    let initial_loss = problem.full_loss(&x)?;
    let threshold = DIVERGENCE_FACTOR * initial_loss;
    let mut trace = Vec::with_capacity(total);
    let mut delta_buf = Vec::with_capacity(dim);
    let mut x_before = Vec::with_capacity(dim);
    let mut skipped_steps = 0;
    let mut diverged = None;

    for t in 0..total {
        let indices = batches.next_batch()?;
        let batch = Batch::new(data, indices);
        let (loss, mut g) = objective.loss_and_grad(&x, &batch)?;
        if !loss.is_finite() || loss > threshold {
            diverged = Some(Divergence {
                step: t,
                loss,
                threshold,
            });
            break;
        }
        if let Some(c) = cfg.run.grad_clip {
            clip_global_norm(&mut g, c);
        }
        let grad_norm = norm(&g);
        let eta = schedule.eval(t)?;
        let u: UpdateVector = base.update(&g, eta, &x)?;

        let row = match mechanic.as_mut() {
            Some(mech) => {
                if ledger.is_some() {
                    x_before.clone_from(&x);
                }
                let info =
                    mech.step_traced(&mut x, &g, &u, ledger.is_some().then_some(&mut delta_buf))?;
                if info.skipped {
                    skipped_steps += 1;
                } else if let Some(l) = ledger.as_mut() {
                    l.record(&g, &x_before, &delta_buf, info.scale_before, info.h, loss)?;
                }
                TraceRow {
                    step: t,
                    loss,
                    grad_norm,
                    h: info.h,
                    s_sum: info.scale_after,
                    s: mech.tuner().s.clone(),
                    wealth: mech.tuner().wealth(mech.params()),
                }
            }
            None => {
                if let Some(l) = ledger.as_mut() {
                    delta_buf.clear();
                    delta_buf.extend(x.iter().zip(&x_ref).map(|(a, b)| a - b));
                    let h = dot(&g, &delta_buf);
                    l.record(&g, &x, &delta_buf, 1.0, h, loss)?;
                }
                for (xj, uj) in x.iter_mut().zip(u.as_slice()) {
                    *xj += uj;
                }
                TraceRow {
                    step: t,
                    loss,
                    grad_norm,
                    h: 0.0,
                    s_sum: 1.0,
                    s: Vec::new(),
                    wealth: Vec::new(),
                }
            }
        };
        trace.push(row);
    }

    let final_loss = match diverged {
        Some(_) => f64::INFINITY,
        None => {
            let l = problem.full_loss(&x)?;
            if l.is_finite() {
                l
            } else {
                f64::INFINITY
            }
        }
    };
    Ok(RunRecord {
        config: cfg.clone(),
        steps_run: trace.len(),
        trace,
        initial_loss,
        final_loss,
        final_params: x,
        skipped_steps,
        n_betas,
        ledger,
        diverged,
    })
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub eta: f64,
    pub record: RunRecord,
}

impl SweepEntry {
    pub fn diverged(&self) -> bool {
        self.record.diverged.is_some() || !self.record.final_loss.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// One entry per grid point, in grid order.
    pub entries: Vec<SweepEntry>,
    pub best: usize,
}

impl SweepResult {
    pub fn best_record(&self) -> &RunRecord {
        &self.entries[self.best].record
    }
}

/// Runs the unwrapped base optimizer at every `η` in `grid` and picks the
/// lowest final train loss. Losses within [`SWEEP_TIE_RTOL`] are ties, won by
/// the earlier grid point.
pub fn lr_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<SweepResult> {
    let problem = Problem::from_config(cfg)?;
    lr_sweep_problem(cfg, &problem, grid)
}

pub fn lr_sweep_problem(
    cfg: &ExperimentConfig,
    problem: &Problem,
    grid: &[f64],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Precondition("learning-rate grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Precondition(format!(
            "learning rate {bad} is not positive"
        )));
    }
    let entries: Vec<SweepEntry> = grid
        .par_iter()
        .map(|&eta| {
            let mut c = cfg.clone();
            c.mechanic.enabled = false;
            c.optimizer.lr = eta;
            run_problem(&c, problem).map(|record| SweepEntry { eta, record })
        })
        .collect::<Result<_>>()?;
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        if e.diverged() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let lb = entries[b].record.final_loss;
                let li = e.record.final_loss;
                li < lb && (lb - li) > SWEEP_TIE_RTOL * lb.abs().max(li.abs())
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best =
        best.ok_or_else(|| Error::Precondition("every learning rate in the grid diverged".into()))?;
    Ok(SweepResult { entries, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(lr: f64, steps: usize, mechanic: bool) -> ExperimentConfig {
        let text = format!(
            "[run]\nsteps = {steps}\nseed = 3\nledger = true\n\
             [objective]\nkind = quadratic\ndim = 4\ninit_scale = 1.0\n\
             [optimizer]\nkind = sgd\nlr = {lr}\n[mechanic]\nenabled = {mechanic}\n"
        );
        ExperimentConfig::parse_str(&text).unwrap()
    }

    fn logistic(steps: usize, lambda: f64, optimizer: &str) -> ExperimentConfig {
        let text = format!(
            "[run]\nsteps = {steps}\nbatch_size = 16\nseed = 5\nledger = true\n\
             [objective]\nkind = logreg\n[data]\nn = 256\ndim = 20\nnoise = 0.1\n\
             [optimizer]\nkind = {optimizer}\nlr = 0.05\n[mechanic]\nlambda = {lambda}\npeak = magnitude\n"
        );
        ExperimentConfig::parse_str(&text).unwrap()
    }

    fn single_entry_ledger(g: &[f64], x: &[f64]) -> RegretLedger {
        let mut l = RegretLedger::new(x.to_vec(), 0, String::new());
        l.record(g, x, &vec![0.0; g.len()], 0.0, 0.0, 0.0).unwrap();
        l
    }

    #[test]
    fn quadratic_loss_contracts_in_closed_form() {
        let eta = 0.3;
        let rec = run_experiment(&quadratic(eta, 30, false)).unwrap();
        let l0 = rec.initial_loss;
        for (t, loss) in rec.loss_curve().into_iter().enumerate() {
            let want = (1.0 - eta).powi(2 * t as i32) * l0;
            assert!(
                (loss - want).abs() <= 1e-12 * want.max(1e-300),
                "t={t}: {loss} vs {want}"
            );
        }
    }

    #[test]
    fn wrapped_run_starts_neutral() {
        let rec = run_experiment(&quadratic(0.1, 5, true)).unwrap();
        assert_eq!(rec.trace[0].loss, rec.trace[1].loss);
        assert_eq!(rec.trace[0].h, 0.0);
        let ledger = rec.ledger.unwrap();
        assert_eq!(ledger.entries[1].x, Some(ledger.x_ref.clone()));
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let cfg = logistic(60, 0.01, "sgd");
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.trace_csv(), b.trace_csv());
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn trace_floats_round_trip() {
        let rec = run_experiment(&logistic(20, 0.01, "sgd")).unwrap();
        let csv = rec.trace_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 5 + 2 * 6);
        for (line, row) in lines.zip(&rec.trace) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[1].parse::<f64>().unwrap(), row.loss);
            assert_eq!(fields[4].parse::<f64>().unwrap(), row.s_sum);
        }
    }

    #[test]
    fn linearized_regret_examples() {
        let l = single_entry_ledger(&[1.0, 0.0], &[2.0, 3.0]);
        assert_eq!(linearized_regret(&l, &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(linearized_regret(&l, &[2.0, 3.0]).unwrap(), 0.0);

        let a = run_experiment(&logistic(15, 0.0, "sgd"))
            .unwrap()
            .ledger
            .unwrap();
        let b = run_experiment(&logistic(25, 0.0, "adamw"))
            .unwrap()
            .ledger
            .unwrap();
        let mut ab = a.clone();
        ab.extend(&b).unwrap();
        let c = vec![0.3; 20];
        let sum = linearized_regret(&a, &c).unwrap() + linearized_regret(&b, &c).unwrap();
        assert!((linearized_regret(&ab, &c).unwrap() - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
    }

    #[test]
    fn tuner_regret_examples() {
        let mut l = RegretLedger::new(vec![0.0], 0, String::new());
        l.record(&[0.0], &[0.0], &[0.0], 0.0, 1.0, 0.0).unwrap();
        l.record(&[0.0], &[0.0], &[0.0], 1.0, -1.0, 0.0).unwrap();
        assert_eq!(tuner_regret(&l, 0.0), -1.0);
        assert_eq!(tuner_regret(&l, 0.5), -0.5 - 0.5);

        let mut flat = RegretLedger::new(vec![0.0], 0, String::new());
        for h in [0.3, -2.0, 5.0] {
            flat.record(&[0.0], &[0.0], &[0.0], 0.7, h, 0.0).unwrap();
        }
        assert_eq!(tuner_regret(&flat, 0.7), 0.0);
    }

    #[test]
    fn decomposition_holds_at_zero_lambda() {
        for opt in ["sgd", "adamw"] {
            let rec = run_experiment(&logistic(120, 0.0, opt)).unwrap();
            assert!(rec.final_s_sum() > 0.0, "{opt}");
            let ledger = rec.ledger.unwrap();
            for (s, c) in [(0.1, -1.0), (1.0, 0.0), (7.0, 2.5)] {
                let target = vec![c; 20];
                let r = decomposition_residual(&ledger, s, &target).unwrap();
                assert!(r <= 1e-9, "{opt} s̊={s}: {r}");
                let scalar_only = ledger.clone().with_vectors(false);
                assert!(decomposition_residual(&scalar_only, s, &target).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn decomposition_breaks_with_regularizer() {
        let rec = run_experiment(&logistic(120, 0.01, "sgd")).unwrap();
        assert!(rec.final_s_sum() > 0.0);
        let ledger = rec.ledger.unwrap();
        let r = decomposition_residual(&ledger, 1.0, &[0.0; 20]).unwrap();
        assert!(r > 1e-9, "{r}");
    }

    #[test]
    fn decomposition_single_step_and_errors() {
        let l = single_entry_ledger(&[1.0, -2.0], &[0.5, 0.5]);
        let r = decomposition_residual(&l, 3.0, &[1.0, 1.0]).unwrap();
        assert_eq!(r, 0.0);
        assert!(decomposition_residual(&l, 0.0, &[1.0, 1.0]).is_err());
        assert!(decomposition_residual(&l, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn sweep_tie_goes_to_first_grid_point() {
        let cfg = quadratic(0.1, 40, false);
        let sweep = lr_sweep(&cfg, &[0.1, 1.9, 3.0]).unwrap();
        assert!(sweep.entries[2].diverged());
        assert!(!sweep.entries[0].diverged() && !sweep.entries[1].diverged());
        assert_eq!(sweep.best, 0);
        assert_eq!(sweep.best_record().config.optimizer.lr, 0.1);

        let single = lr_sweep(&cfg, &[0.5]).unwrap();
        assert_eq!(single.best, 0);
        assert!(lr_sweep(&cfg, &[]).is_err());
        assert!(lr_sweep(&cfg, &[3.0, 5.0]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let err = run_experiment(&quadratic(3.0, 40, false)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        let rec = run_experiment_lenient(&quadratic(3.0, 40, false)).unwrap();
        assert!(rec.diverged.is_some() && rec.final_loss.is_infinite());
    }

    #[test]
    fn ledger_hash_tracks_config() {
        let a = logistic(5, 0.0, "sgd");
        let mut b = a.clone();
        b.run.seed = 6;
        assert_eq!(config_hash(&a).len(), 64);
        assert_ne!(config_hash(&a), config_hash(&b));
        let rec = run_experiment(&a).unwrap();
        assert_eq!(rec.ledger.unwrap().config_hash, config_hash(&a));
    }
}
