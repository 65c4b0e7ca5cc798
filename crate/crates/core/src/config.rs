//! Experiment configuration in a sectioned `key = value` text format:
//!
//! ```text
//! # comment
//! [run]
//! steps = 200
//! [optimizer]
//! kind = sgd
//! lr = 0.1
//! [mechanic]
//! betas = 0.9, 0.99
//! ```
//!
//! The schema is strict: unknown sections or keys, repeated keys and type
//! mismatches are errors naming the offending line. [`ExperimentConfig::echo`]
//! writes the fully resolved configuration back in the same format.

use std::fmt::Write as _;
use std::path::Path;

use crate::base_opt::{AdamWHyper, BaseOptConfig, LionHyper};
use crate::error::{Error, Result};
use crate::mechanic::{DeltaMode, NonFinitePolicy};
use crate::models::MlpHead;
use crate::tuner::{PeakTracking, TunerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Total steps; when `None` the run lasts `epochs` passes over the data.
    pub steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ledger: bool,
    pub output_dir: String,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            steps: None,
            epochs: 1,
            batch_size: 32,
            seed: 1,
            ledger: false,
            output_dir: "runs/default".into(),
            grad_clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Quadratic,
    LinReg,
    LogReg,
    MultiLogReg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Parameter dimension of the quadratic objective.
    pub dim: usize,
    /// Every coordinate of the quadratic's center.
    pub center: f64,
    pub hidden: usize,
    pub head: MlpHead,
    /// Standard deviation of the Gaussian initialization; 0 starts at zero.
    pub init_scale: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::LogReg,
            dim: 10,
            center: 0.0,
            hidden: 16,
            head: MlpHead::Mse,
            init_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    None,
    Synthetic,
    Libsvm(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub n: usize,
    pub dim: usize,
    pub noise: f64,
    /// Seed of the synthetic generator; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n: 512,
            dim: 20,
            noise: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub base: BaseOptConfig,
    pub lr: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            base: BaseOptConfig::Sgd,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Constant,
    Linear { warmup: usize },
    Cosine { warmup: usize },
    Step { milestones: Vec<usize>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanicSpec {
    pub enabled: bool,
    pub tuner: TunerParams,
    pub delta_mode: DeltaMode,
    pub nonfinite: NonFinitePolicy,
}

impl Default for MechanicSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            tuner: TunerParams::default(),
            delta_mode: DeltaMode::Stored,
            nonfinite: NonFinitePolicy::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSpec,
    pub objective: ObjectiveSpec,
    pub data: DataSpec,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSpec,
    pub mechanic: MechanicSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunSpec::default(),
            objective: ObjectiveSpec::default(),
            data: DataSpec::default(),
            optimizer: OptimizerSpec::default(),
            schedule: ScheduleSpec::Constant,
            mechanic: MechanicSpec::default(),
        }
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "run",
        &[
            "steps",
            "epochs",
            "batch_size",
            "seed",
            "ledger",
            "output_dir",
            "grad_clip",
        ],
    ),
    (
        "objective",
        &["kind", "dim", "center", "hidden", "head", "init_scale"],
    ),
    ("data", &["source", "path", "n", "dim", "noise", "seed"]),
    (
        "optimizer",
        &[
            "kind",
            "lr",
            "momentum",
            "beta1",
            "beta2",
            "eps",
            "weight_decay",
        ],
    ),
    ("schedule", &["kind", "warmup", "milestones", "factor"]),
    (
        "mechanic",
        &[
            "enabled",
            "betas",
            "lambda",
            "s_init",
            "epsilon",
            "peak",
            "delta_mode",
            "nonfinite",
        ],
    ),
];

const REQUIRED: &[(&str, &str)] = &[("objective", "kind")];

#[derive(Debug, Clone)]
struct Entry {
    section: &'static str,
    key: &'static str,
    value: String,
    line: usize,
}

fn suggest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> String {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, _)| *d <= 2)
        .min()
        .map(|(_, c)| format!(" (did you mean '{c}'?)"))
        .unwrap_or_default()
}

struct Parser<'a> {
    origin: &'a str,
    entries: Vec<Entry>,
}

impl<'a> Parser<'a> {
    fn err(&self, line: usize, message: String) -> Error {
        Error::ConfigAt {
            path: self.origin.to_string(),
            line,
            message,
        }
    }

    fn parse(origin: &'a str, text: &str) -> Result<Self> {
        let mut p = Parser {
            origin,
            entries: Vec::new(),
        };
        let mut section: Option<&'static str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                let found = SCHEMA.iter().find(|(s, _)| *s == name).map(|(s, _)| *s);
                section = Some(found.ok_or_else(|| {
                    p.err(
                        line,
                        format!(
                            "unknown section '{name}'{}",
                            suggest(name, SCHEMA.iter().map(|(s, _)| *s))
                        ),
                    )
                })?);
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| p.err(line, format!("expected 'key = value', got '{content}'")))?;
            let key = key.trim();
            let Some(sec) = section else {
                return Err(p.err(line, format!("key '{key}' appears before any [section]")));
            };
            p.push(sec, key, value.trim(), line)?;
        }
        Ok(p)
    }

    fn push(&mut self, section: &'static str, key: &str, value: &str, line: usize) -> Result<()> {
        let keys = SCHEMA.iter().find(|(s, _)| *s == section).unwrap().1;
        let Some(&key) = keys.iter().find(|k| **k == key) else {
            return Err(self.err(
                line,
                format!("unknown key '{key}'{}", suggest(key, keys.iter().copied())),
            ));
        };
        if let Some(prev) = self
            .entries
            .iter()
            .find(|e| e.section == section && e.key == key)
        {
            return Err(self.err(
                line,
                format!(
                    "duplicate key '{key}' in [{section}] (first set at line {})",
                    prev.line
                ),
            ));
        }
        self.entries.push(Entry {
            section,
            key,
            value: unquote(value).to_string(),
            line,
        });
        Ok(())
    }

    fn raw(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    fn get<T: FromValue>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(e) => T::from_value(&e.value).map(Some).ok_or_else(|| {
                self.err(
                    e.line,
                    format!("key '{key}' expects {}, got '{}'", T::EXPECTED, e.value),
                )
            }),
        }
    }

    fn choice<T: Copy>(
        &self,
        section: &str,
        key: &str,
        options: &[(&str, T)],
    ) -> Result<Option<T>> {
        let Some(e) = self.raw(section, key) else {
            return Ok(None);
        };
        options
            .iter()
            .find(|(name, _)| *name == e.value)
            .map(|(_, v)| Some(*v))
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(
                    e.line,
                    format!(
                        "key '{key}' must be one of {}, got '{}'{}",
                        names.join("|"),
                        e.value,
                        suggest(&e.value, names.iter().copied())
                    ),
                )
            })
    }

    fn invalid(&self, section: &str, key: &str, message: String) -> Error {
        let line = self.raw(section, key).map_or(0, |e| e.line);
        self.err(line, message)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}

trait FromValue: Sized {
    const EXPECTED: &'static str;
    fn from_value(v: &str) -> Option<Self>;
}

impl FromValue for f64 {
    const EXPECTED: &'static str = "a number";
    fn from_value(v: &str) -> Option<Self> {
        v.parse().ok().filter(|x: &f64| x.is_finite())
    }
}

impl FromValue for usize {
    const EXPECTED: &'static str = "a nonnegative integer";
    fn from_value(v: &str) -> Option<Self> {
        v.parse().ok()
    }
}

impl FromValue for u64 {
    const EXPECTED: &'static str = "a nonnegative integer";
    fn from_value(v: &str) -> Option<Self> {
        v.parse().ok()
    }
}

impl FromValue for bool {
    const EXPECTED: &'static str = "true or false";
    fn from_value(v: &str) -> Option<Self> {
        match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        }
    }
}

impl FromValue for String {
    const EXPECTED: &'static str = "a string";
    fn from_value(v: &str) -> Option<Self> {
        Some(v.to_string())
    }
}

impl<T: FromValue> FromValue for Vec<T> {
    const EXPECTED: &'static str = "a comma-separated list";
    fn from_value(v: &str) -> Option<Self> {
        let inner = v
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .unwrap_or(v)
            .trim();
        if inner.is_empty() {
            return Some(Vec::new());
        }
        inner.split(',').map(|s| T::from_value(s.trim())).collect()
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_named("<config>", text, &[])
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_path_with_overrides(path, &[])
    }

    /// `overrides` are `section.key=value` strings applied on top of the file;
    /// an override replaces a key the file already sets.
    pub fn from_path_with_overrides(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&path.display().to_string(), &text, overrides)
    }

    pub fn parse_named(origin: &str, text: &str, overrides: &[String]) -> Result<Self> {
        let mut p = Parser::parse(origin, text)?;
        for ov in overrides {
            let bad = || {
                Error::Config(format!(
                    "override '{ov}' is not of the form section.key=value"
                ))
            };
            let (path, value) = ov.split_once('=').ok_or_else(bad)?;
            let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
            let sec = SCHEMA
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(s, _)| *s)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown section '{section}' in override{}",
                        suggest(section, SCHEMA.iter().map(|(s, _)| *s))
                    ))
                })?;
            p.entries
                .retain(|e| !(e.section == sec && e.key == key.trim()));
            p.push(sec, key.trim(), value.trim(), 0)?;
        }
        Self::resolve(&p)
    }

    fn resolve(p: &Parser<'_>) -> Result<Self> {
        for (section, key) in REQUIRED {
            if p.raw(section, key).is_none() {
                return Err(p.err(0, format!("missing required key '{key}' in [{section}]")));
            }
        }
        let d = ExperimentConfig::default();

        let steps: Option<usize> = p.get("run", "steps")?;
        let grad_clip: Option<f64> = p.get("run", "grad_clip")?;
        let run = RunSpec {
            steps: steps.filter(|s| *s > 0),
            epochs: p.get("run", "epochs")?.unwrap_or(d.run.epochs),
            batch_size: p.get("run", "batch_size")?.unwrap_or(d.run.batch_size),
            seed: p.get("run", "seed")?.unwrap_or(d.run.seed),
            ledger: p.get("run", "ledger")?.unwrap_or(d.run.ledger),
            output_dir: p.get("run", "output_dir")?.unwrap_or(d.run.output_dir),
            grad_clip: grad_clip.filter(|c| *c > 0.0),
        };
        if run.batch_size == 0 {
            return Err(p.invalid("run", "batch_size", "batch_size must be positive".into()));
        }

        use ObjectiveKind as K;
        let kind = p
            .choice(
                "objective",
                "kind",
                &[
                    ("quadratic", K::Quadratic),
                    ("linreg", K::LinReg),
                    ("logreg", K::LogReg),
                    ("multilogreg", K::MultiLogReg),
                    ("mlp", K::Mlp),
                ],
            )?
            .expect("required key checked above");
        let objective = ObjectiveSpec {
            kind,
            dim: p.get("objective", "dim")?.unwrap_or(d.objective.dim),
            center: p.get("objective", "center")?.unwrap_or(d.objective.center),
            hidden: p.get("objective", "hidden")?.unwrap_or(d.objective.hidden),
            head: p
                .choice(
                    "objective",
                    "head",
                    &[("mse", MlpHead::Mse), ("ce", MlpHead::CrossEntropy)],
                )?
                .unwrap_or(d.objective.head),
            init_scale: p
                .get("objective", "init_scale")?
                .unwrap_or(d.objective.init_scale),
        };

        #[derive(Clone, Copy)]
        enum Src {
            None,
            Synthetic,
            Libsvm,
        }
        let default_src = if kind == K::Quadratic {
            Src::None
        } else {
            Src::Synthetic
        };
        let src = p
            .choice(
                "data",
                "source",
                &[
                    ("none", Src::None),
                    ("synthetic", Src::Synthetic),
                    ("libsvm", Src::Libsvm),
                ],
            )?
            .unwrap_or(default_src);
        let path: Option<String> = p.get("data", "path")?;
        let source = match src {
            Src::None => DataSource::None,
            Src::Synthetic => DataSource::Synthetic,
            Src::Libsvm => DataSource::Libsvm(path.ok_or_else(|| {
                p.invalid(
                    "data",
                    "source",
                    "libsvm source needs a 'path' key in [data]".into(),
                )
            })?),
        };
        if matches!(source, DataSource::None) && kind != K::Quadratic {
            return Err(p.invalid(
                "data",
                "source",
                "only the quadratic objective runs without data".into(),
            ));
        }
        let data = DataSpec {
            source,
            n: p.get("data", "n")?.unwrap_or(d.data.n),
            dim: p.get("data", "dim")?.unwrap_or(d.data.dim),
            noise: p.get("data", "noise")?.unwrap_or(d.data.noise),
            seed: p.get("data", "seed")?,
        };

        #[derive(Clone, Copy)]
        enum Opt {
            Sgd,
            Momentum,
            AdamW,
            Lion,
        }
        let opt = p
            .choice(
                "optimizer",
                "kind",
                &[
                    ("sgd", Opt::Sgd),
                    ("momentum", Opt::Momentum),
                    ("adamw", Opt::AdamW),
                    ("lion", Opt::Lion),
                ],
            )?
            .unwrap_or(Opt::Sgd);
        let momentum: Option<f64> = p.get("optimizer", "momentum")?;
        let beta1: Option<f64> = p.get("optimizer", "beta1")?;
        let beta2: Option<f64> = p.get("optimizer", "beta2")?;
        let eps: Option<f64> = p.get("optimizer", "eps")?;
        let wd: Option<f64> = p.get("optimizer", "weight_decay")?;
        let stray = |keys: &[(&str, bool)]| -> Result<()> {
            match keys.iter().find(|(_, set)| *set) {
                Some((k, _)) => Err(p.invalid(
                    "optimizer",
                    k,
                    format!("key '{k}' does not apply to this optimizer kind"),
                )),
                None => Ok(()),
            }
        };
        let base = match opt {
            Opt::Sgd => {
                stray(&[
                    ("momentum", momentum.is_some()),
                    ("beta1", beta1.is_some()),
                    ("beta2", beta2.is_some()),
                    ("eps", eps.is_some()),
                    ("weight_decay", wd.is_some()),
                ])?;
                BaseOptConfig::Sgd
            }
            Opt::Momentum => {
                stray(&[
                    ("beta1", beta1.is_some()),
                    ("beta2", beta2.is_some()),
                    ("eps", eps.is_some()),
                    ("weight_decay", wd.is_some()),
                ])?;
                BaseOptConfig::Momentum {
                    beta: momentum.unwrap_or(0.9),
                }
            }
            Opt::AdamW => {
                stray(&[("momentum", momentum.is_some())])?;
                let h = AdamWHyper::default();
                BaseOptConfig::AdamW(AdamWHyper {
                    beta1: beta1.unwrap_or(h.beta1),
                    beta2: beta2.unwrap_or(h.beta2),
                    eps: eps.unwrap_or(h.eps),
                    weight_decay: wd.unwrap_or(h.weight_decay),
                })
            }
            Opt::Lion => {
                stray(&[("momentum", momentum.is_some()), ("eps", eps.is_some())])?;
                let h = LionHyper::default();
                BaseOptConfig::Lion(LionHyper {
                    beta1: beta1.unwrap_or(h.beta1),
                    beta2: beta2.unwrap_or(h.beta2),
                    weight_decay: wd.unwrap_or(h.weight_decay),
                })
            }
        };
        let lr = p.get("optimizer", "lr")?.unwrap_or(d.optimizer.lr);
        if lr <= 0.0 {
            return Err(p.invalid("optimizer", "lr", format!("lr must be positive, got {lr}")));
        }
        let optimizer = OptimizerSpec { base, lr };

        #[derive(Clone, Copy)]
        enum Sched {
            Constant,
            Linear,
            Cosine,
            Step,
        }
        let sched = p
            .choice(
                "schedule",
                "kind",
                &[
                    ("constant", Sched::Constant),
                    ("linear", Sched::Linear),
                    ("cosine", Sched::Cosine),
                    ("step", Sched::Step),
                ],
            )?
            .unwrap_or(Sched::Constant);
        let warmup = p.get("schedule", "warmup")?.unwrap_or(0);
        let schedule = match sched {
            Sched::Constant => ScheduleSpec::Constant,
            Sched::Linear => ScheduleSpec::Linear { warmup },
            Sched::Cosine => ScheduleSpec::Cosine { warmup },
            Sched::Step => ScheduleSpec::Step {
                milestones: p.get("schedule", "milestones")?.unwrap_or_default(),
                factor: p.get("schedule", "factor")?.unwrap_or(0.2),
            },
        };

        let tuner_default = TunerParams::default();
        let tuner = TunerParams {
            betas: p.get("mechanic", "betas")?.unwrap_or(tuner_default.betas),
            lambda: p.get("mechanic", "lambda")?.unwrap_or(tuner_default.lambda),
            s_init: p.get("mechanic", "s_init")?.unwrap_or(tuner_default.s_init),
            epsilon: p
                .get("mechanic", "epsilon")?
                .unwrap_or(tuner_default.epsilon),
            peak: p
                .choice(
                    "mechanic",
                    "peak",
                    &[
                        ("signed", PeakTracking::Signed),
                        ("magnitude", PeakTracking::Magnitude),
                    ],
                )?
                .unwrap_or_default(),
        };
        tuner
            .validate()
            .map_err(|e| p.invalid("mechanic", "betas", e.to_string()))?;
        let mechanic = MechanicSpec {
            enabled: p.get("mechanic", "enabled")?.unwrap_or(true),
            tuner,
            delta_mode: p
                .choice(
                    "mechanic",
                    "delta_mode",
                    &[
                        ("stored", DeltaMode::Stored),
                        ("recovered", DeltaMode::Recovered),
                    ],
                )?
                .unwrap_or_default(),
            nonfinite: p
                .choice(
                    "mechanic",
                    "nonfinite",
                    &[
                        ("abort", NonFinitePolicy::Abort),
                        ("skip", NonFinitePolicy::Skip),
                    ],
                )?
                .unwrap_or_default(),
        };

        Ok(ExperimentConfig {
            run,
            objective,
            data,
            optimizer,
            schedule,
            mechanic,
        })
    }

    /// The resolved configuration in the input format; parsing it back yields
    /// an equal config.
    pub fn echo(&self) -> String {
        let mut o = String::new();
        let r = &self.run;
        writeln!(o, "[run]").unwrap();
        writeln!(o, "steps = {}", r.steps.unwrap_or(0)).unwrap();
        writeln!(o, "epochs = {}", r.epochs).unwrap();
        writeln!(o, "batch_size = {}", r.batch_size).unwrap();
        writeln!(o, "seed = {}", r.seed).unwrap();
        writeln!(o, "ledger = {}", r.ledger).unwrap();
        writeln!(o, "output_dir = \"{}\"", r.output_dir).unwrap();
        writeln!(o, "grad_clip = {}", r.grad_clip.unwrap_or(0.0)).unwrap();

        let ob = &self.objective;
        writeln!(o, "\n[objective]").unwrap();
        let kind = match ob.kind {
            ObjectiveKind::Quadratic => "quadratic",
            ObjectiveKind::LinReg => "linreg",
            ObjectiveKind::LogReg => "logreg",
            ObjectiveKind::MultiLogReg => "multilogreg",
            ObjectiveKind::Mlp => "mlp",
        };
        writeln!(o, "kind = {kind}").unwrap();
        writeln!(o, "dim = {}", ob.dim).unwrap();
        writeln!(o, "center = {}", ob.center).unwrap();
        writeln!(o, "hidden = {}", ob.hidden).unwrap();
        let head = match ob.head {
            MlpHead::Mse => "mse",
            MlpHead::CrossEntropy => "ce",
        };
        writeln!(o, "head = {head}").unwrap();
        writeln!(o, "init_scale = {}", ob.init_scale).unwrap();

        let da = &self.data;
        writeln!(o, "\n[data]").unwrap();
        match &da.source {
            DataSource::None => writeln!(o, "source = none").unwrap(),
            DataSource::Synthetic => writeln!(o, "source = synthetic").unwrap(),
            DataSource::Libsvm(path) => {
                writeln!(o, "source = libsvm").unwrap();
                writeln!(o, "path = \"{path}\"").unwrap();
            }
        }
        writeln!(o, "n = {}", da.n).unwrap();
        writeln!(o, "dim = {}", da.dim).unwrap();
        writeln!(o, "noise = {}", da.noise).unwrap();
        if let Some(seed) = da.seed {
            writeln!(o, "seed = {seed}").unwrap();
        }

        writeln!(o, "\n[optimizer]").unwrap();
        match &self.optimizer.base {
            BaseOptConfig::Sgd => writeln!(o, "kind = sgd").unwrap(),
            BaseOptConfig::Momentum { beta } => {
                writeln!(o, "kind = momentum\nmomentum = {beta}").unwrap();
            }
            BaseOptConfig::AdamW(h) => writeln!(
                o,
                "kind = adamw\nbeta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}",
                h.beta1, h.beta2, h.eps, h.weight_decay
            )
            .unwrap(),
            BaseOptConfig::Lion(h) => writeln!(
                o,
                "kind = lion\nbeta1 = {}\nbeta2 = {}\nweight_decay = {}",
                h.beta1, h.beta2, h.weight_decay
            )
            .unwrap(),
        }
        writeln!(o, "lr = {}", self.optimizer.lr).unwrap();

        writeln!(o, "\n[schedule]").unwrap();
        match &self.schedule {
            ScheduleSpec::Constant => writeln!(o, "kind = constant").unwrap(),
            ScheduleSpec::Linear { warmup } => {
                writeln!(o, "kind = linear\nwarmup = {warmup}").unwrap()
            }
            ScheduleSpec::Cosine { warmup } => {
                writeln!(o, "kind = cosine\nwarmup = {warmup}").unwrap()
            }
            ScheduleSpec::Step { milestones, factor } => {
                let ms: Vec<String> = milestones.iter().map(ToString::to_string).collect();
                writeln!(
                    o,
                    "kind = step\nmilestones = [{}]\nfactor = {factor}",
                    ms.join(", ")
                )
                .unwrap();
            }
        }

        let me = &self.mechanic;
        writeln!(o, "\n[mechanic]").unwrap();
        writeln!(o, "enabled = {}", me.enabled).unwrap();
        let betas: Vec<String> = me.tuner.betas.iter().map(ToString::to_string).collect();
        writeln!(o, "betas = [{}]", betas.join(", ")).unwrap();
        writeln!(o, "lambda = {}", me.tuner.lambda).unwrap();
        writeln!(o, "s_init = {}", me.tuner.s_init).unwrap();
        writeln!(o, "epsilon = {}", me.tuner.epsilon).unwrap();
        let peak = match me.tuner.peak {
            PeakTracking::Signed => "signed",
            PeakTracking::Magnitude => "magnitude",
        };
        writeln!(o, "peak = {peak}").unwrap();
        let mode = match me.delta_mode {
            DeltaMode::Stored => "stored",
            DeltaMode::Recovered => "recovered",
        };
        writeln!(o, "delta_mode = {mode}").unwrap();
        let nf = match me.nonfinite {
            NonFinitePolicy::Abort => "abort",
            NonFinitePolicy::Skip => "skip",
        };
        writeln!(o, "nonfinite = {nf}").unwrap();
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[objective]\nkind = logreg\n";

    #[test]
    fn empty_mechanic_section_gets_defaults() {
        let cfg = ExperimentConfig::parse_str("[objective]\nkind = logreg\n[mechanic]\n").unwrap();
        assert!(cfg.mechanic.enabled);
        assert_eq!(
            cfg.mechanic.tuner.betas,
            vec![0.9, 0.99, 0.999, 0.9999, 0.99999, 0.999999]
        );
        assert_eq!(cfg.mechanic.tuner.lambda, 0.01);
        assert_eq!(cfg.mechanic.tuner.s_init, 1e-8);
        assert_eq!(cfg.mechanic.tuner.epsilon, 1e-8);
        assert_eq!(cfg.mechanic.delta_mode, DeltaMode::Stored);
    }

    #[test]
    fn misspelled_key_gets_suggestion() {
        let err =
            ExperimentConfig::parse_str("[objective]\nkind = logreg\n[mechanic]\nlamda = 0.1\n")
                .unwrap_err()
                .to_string();
        assert!(
            err.contains("unknown key 'lamda' (did you mean 'lambda'?)"),
            "{err}"
        );
        assert!(err.contains(":4:"), "{err}");
    }

    #[test]
    fn errors_name_key_and_line() {
        let err =
            ExperimentConfig::parse_str("[objective]\nkind = logreg\n[optimizer]\nlr = fast\n")
                .unwrap_err()
                .to_string();
        assert!(err.contains(":4:") && err.contains("'lr'"), "{err}");

        let err = ExperimentConfig::parse_str("[run]\nsteps = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing required key 'kind'"), "{err}");

        let err = ExperimentConfig::parse_str("[objectiv]\nkind = logreg\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("did you mean 'objective'"), "{err}");

        let err = ExperimentConfig::parse_str("[objective]\nkind = logreg\nkind = mlp\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate key"), "{err}");

        let err = ExperimentConfig::parse_str("kind = logreg\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("before any [section]"), "{err}");

        let err = ExperimentConfig::parse_str(
            "[objective]\nkind = logreg\n[optimizer]\nkind = sgd\nbeta1 = 0.9\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("does not apply"), "{err}");

        let err = ExperimentConfig::parse_str(
            "[objective]\nkind = logreg\n[mechanic]\nbetas = 0.9, 1.5\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains(":4:"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let texts = [
            MINIMAL.to_string(),
            "[run]\nsteps = 50\nseed = 9\nledger = true\ngrad_clip = 1.0\n\
             [objective]\nkind = mlp\nhidden = 8\nhead = mse\ninit_scale = 0.3\n\
             [data]\nsource = libsvm\npath = \"data/a1a.svm\"\n\
             [optimizer]\nkind = adamw\nlr = 0.001\nweight_decay = 0.01\n\
             [schedule]\nkind = step\nmilestones = 60, 120, 160\nfactor = 0.2\n\
             [mechanic]\nbetas = 0.9\nlambda = 0\npeak = magnitude\ndelta_mode = recovered\nnonfinite = skip\n"
                .to_string(),
            "[objective]\nkind = quadratic\ndim = 3\ncenter = 1.5\n[optimizer]\nkind = lion\n\
             [schedule]\nkind = cosine\nwarmup = 5\n[mechanic]\nenabled = false\n"
                .to_string(),
        ];
        for text in texts {
            let cfg = ExperimentConfig::parse_str(&text).unwrap();
            let echoed = cfg.echo();
            assert_eq!(
                ExperimentConfig::parse_str(&echoed).unwrap(),
                cfg,
                "{echoed}"
            );
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "[objective]\nkind = logreg\n[optimizer]\nlr = 0.5\n").unwrap();
        let cfg = ExperimentConfig::from_path_with_overrides(
            &path,
            &["optimizer.lr=0.25".into(), "run.seed = 4".into()],
        )
        .unwrap();
        assert_eq!(cfg.optimizer.lr, 0.25);
        assert_eq!(cfg.run.seed, 4);
        assert!(
            ExperimentConfig::from_path_with_overrides(&path, &["optimizer.lrr=1".into()]).is_err()
        );
        assert!(ExperimentConfig::from_path_with_overrides(&path, &["nodot=1".into()]).is_err());
    }

    #[test]
    fn comments_and_quotes() {
        let cfg = ExperimentConfig::parse_str(
            "# header\n[objective] \nkind = logreg # trailing\n[run]\noutput_dir = \"a#b\"\n",
        )
        .unwrap();
        assert_eq!(cfg.run.output_dir, "a#b");
    }
}
