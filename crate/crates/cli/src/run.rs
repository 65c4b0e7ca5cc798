use std::path::{Path, PathBuf};

use mechanic_core::harness::{fmt_float, lr_sweep, run_experiment_lenient, RunRecord, SweepResult};
use mechanic_core::ExperimentConfig;

use crate::{create_dir, resolve_output_dir, write_file, CliError, CliResult, CONFIG_ECHO};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    /// `section.key=value` overrides.
    pub overrides: Vec<String>,
    /// Replaces `run.output_dir`.
    pub output_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            ..Self::default()
        }
    }

    fn load(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let cfg = ExperimentConfig::from_path_with_overrides(&self.config, &self.overrides)?;
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
        Ok((cfg, resolve_output_dir(&dir)))
    }
}

fn write_ledger(record: &RunRecord, path: &Path) -> CliResult<()> {
    let Some(ledger) = &record.ledger else {
        return Ok(());
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let err = |e| CliError::csv(path, e);
    w.write_record(["step", "loss", "s_sum", "h", "g_dot_x", "g_dot_delta"])
        .map_err(err)?;
    for (t, e) in ledger.entries.iter().enumerate() {
        w.write_record([
            t.to_string(),
            fmt_float(e.loss),
            fmt_float(e.s_sum),
            fmt_float(e.h),
            fmt_float(e.g_dot_x),
            fmt_float(e.g_dot_delta),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_run(record: &RunRecord, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_ECHO), &record.config.echo())?;
    write_file(&dir.join("trace.csv"), &record.trace_csv())?;
    write_ledger(record, &dir.join("ledger.csv"))?;
    let mut summary = format!(
        "steps = {}\nfinal_loss = {}\nfinal_s_sum = {}\nskipped_steps = {}\n",
        record.steps_run,
        fmt_float(record.final_loss),
        fmt_float(record.final_s_sum()),
        record.skipped_steps
    );
    if let Some(ledger) = &record.ledger {
        summary.push_str(&format!("config_hash = {}\n", ledger.config_hash));
    }
    write_file(&dir.join("summary.txt"), &summary)
}

/// Runs one experiment and writes `trace.csv`, the config echo, a summary and
/// (when enabled) `ledger.csv`. Divergence writes the partial trace, then
/// returns the error.
pub fn cmd_run(opts: &RunOptions) -> CliResult<(RunRecord, PathBuf)> {
    let (cfg, dir) = opts.load()?;
    let record = run_experiment_lenient(&cfg)?;
    write_run(&record, &dir)?;
    if let Some(d) = record.diverged {
        return Err(mechanic_core::Error::Diverged {
            step: d.step,
            loss: d.loss,
            threshold: d.threshold,
        }
        .into());
    }
    Ok((record, dir))
}

pub struct SweepOutcome {
    pub result: SweepResult,
    pub dir: PathBuf,
}

/// Runs the unwrapped base optimizer over `grid`, writing one `eta_<k>`
/// directory per point and a `sweep.csv` summary.
pub fn cmd_sweep(opts: &RunOptions, grid: &[f64]) -> CliResult<SweepOutcome> {
    let (cfg, dir) = opts.load()?;
    let result = lr_sweep(&cfg, grid)?;
    create_dir(&dir)?;
    let mut echo_cfg = cfg.clone();
    echo_cfg.mechanic.enabled = false;
    write_file(&dir.join(CONFIG_ECHO), &echo_cfg.echo())?;
    for (k, entry) in result.entries.iter().enumerate() {
        write_run(&entry.record, &dir.join(format!("eta_{k}")))?;
    }
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    let err = |e| CliError::csv(&path, e);
    w.write_record(["eta", "final_loss", "diverged", "winner"])
        .map_err(err)?;
    for (k, entry) in result.entries.iter().enumerate() {
        w.write_record([
            fmt_float(entry.eta),
            fmt_float(entry.record.final_loss),
            u8::from(entry.diverged()).to_string(),
            u8::from(k == result.best).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(SweepOutcome { result, dir })
}
