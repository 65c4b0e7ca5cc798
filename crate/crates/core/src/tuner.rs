//! Scalar scale learners.
//!
//! [`TunerState`] is the practical multi-β tuner used by the mechanic wrapper:
//! `n` independent coin-betting learners, one per β, whose outputs are summed
//! into a single scale. [`TheoreticalTunerState`] is the single-β variant with
//! feedback clipping and a bet fraction, kept for the regret-bound checks.
//!
//! For `n = 1`, `β = 1` and ignoring ε, the practical update can be rewritten as
//! `s' = s·√v_prev/√v − s·h/√v ≈ (1 − h²/2v)·s − s·h/√v`: an AdaGrad-like step
//! on the scale combined with an adaptive multiplicative decay.

use crate::error::{Error, Result};

/// Default β values, one tuner copy per entry.
pub const DEFAULT_BETAS: [f64; 6] = [0.9, 0.99, 0.999, 0.9999, 0.99999, 0.999999];
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_S_INIT: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TunerParams {
    pub betas: Vec<f64>,
    /// Coefficient of the norm-regularization term added to the feedback.
    pub lambda: f64,
    /// First non-zero scale the tuner proposes.
    pub s_init: f64,
    pub epsilon: f64,
    pub peak: PeakTracking,
}

/// What the running max `m` tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeakTracking {
    /// `m = max(β·m, h)`. Until some `h > 0` arrives, `m` and every scale stay
    /// at zero.
    #[default]
    Signed,
    /// `m = max(β·m, |h|)`, so the first non-zero feedback of either sign
    /// seeds the wealth.
    Magnitude,
}

impl PeakTracking {
    fn feedback(self, h: f64) -> f64 {
        match self {
            PeakTracking::Signed => h,
            PeakTracking::Magnitude => h.abs(),
        }
    }
}

impl Default for TunerParams {
    fn default() -> Self {
        Self {
            betas: DEFAULT_BETAS.to_vec(),
            lambda: DEFAULT_LAMBDA,
            s_init: DEFAULT_S_INIT,
            epsilon: DEFAULT_EPSILON,
            peak: PeakTracking::Signed,
        }
    }
}

impl TunerParams {
    pub fn with_betas(betas: impl Into<Vec<f64>>) -> Self {
        Self {
            betas: betas.into(),
            ..Self::default()
        }
    }

    pub fn n(&self) -> usize {
        self.betas.len()
    }

    /// `epsilon = 0` is accepted: it is the scale-free mode, where `0/0` is
    /// taken as `0`.
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::Config(
                "betas must contain at least one value".into(),
            ));
        }
        if let Some(b) = self.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0, 1]")));
        }
        if !(self.s_init > 0.0 && self.s_init.is_finite()) {
            return Err(Error::Config(format!(
                "s_init must be positive, got {}",
                self.s_init
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Running statistics of the practical tuner, one slot per β.
#[derive(Debug, Clone, PartialEq)]
pub struct TunerState {
    /// Decayed running max of the feedback.
    pub m: Vec<f64>,
    /// β²-discounted sum of squared feedback.
    pub v: Vec<f64>,
    /// Discounted reward, clipped at zero.
    pub r: Vec<f64>,
    /// Current per-β scale.
    pub s: Vec<f64>,
    pub t: u64,
}

impl TunerState {
    pub fn new(params: &TunerParams) -> Result<Self> {
        params.validate()?;
        let n = params.n();
        Ok(Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            r: vec![0.0; n],
            s: vec![0.0; n],
            t: 0,
        })
    }

    /// Consumes one scalar feedback `h` and returns the next per-β scales.
    pub fn step(&mut self, h: f64, params: &TunerParams) -> Result<&[f64]> {
        if !h.is_finite() {
            return Err(Error::NonFinite("tuner feedback h"));
        }
        if self.s.len() != params.n() {
            return Err(Error::Dimension {
                context: "tuner state vs betas",
                expected: params.n(),
                got: self.s.len(),
            });
        }
        let n = params.n() as f64;
        for (i, &beta) in params.betas.iter().enumerate() {
            self.m[i] = (beta * self.m[i]).max(params.peak.feedback(h));
            self.v[i] = beta * beta * self.v[i] + h * h;
            // `s[i]` still holds the scale that was in use when `h` was observed.
            self.r[i] = (beta * self.r[i] - self.s[i] * h).max(0.0);
            let wealth = params.s_init * self.m[i] / n + self.r[i];
            self.s[i] = safe_div(wealth, self.v[i].sqrt() + params.epsilon);
        }
        self.t += 1;
        Ok(&self.s)
    }

    /// The single scale applied to the base displacement.
    pub fn scale(&self) -> f64 {
        tuner_sum(&self.s)
    }

    /// Current per-β wealth `s_init·m/n + r`.
    pub fn wealth(&self, params: &TunerParams) -> Vec<f64> {
        let n = params.n() as f64;
        self.m
            .iter()
            .zip(&self.r)
            .map(|(m, r)| params.s_init * m / n + r)
            .collect()
    }
}

/// Sums the per-β scales.
pub fn tuner_sum(s: &[f64]) -> f64 {
    s.iter().sum()
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Sign convention for the bet fraction of the theoretical tuner.
///
/// `AsWritten` uses `clip(q/√(4m²+v), 0, 1)` with `q` the discounted sum of
/// clipped feedback. `Contrarian` uses `clip(−q/√(4m²+v), 0, 1)`, which bets
/// on the scale growing when past feedback was negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetDirection {
    #[default]
    AsWritten,
    Contrarian,
}

/// Single-β tuner with feedback clipping and a bounded bet fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoreticalTunerState {
    pub m: f64,
    pub q: f64,
    pub r: f64,
    pub v: f64,
    pub s: f64,
    pub w0: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub direction: BetDirection,
    pub t: u64,
}

impl TheoreticalTunerState {
    pub fn new(beta: f64, w0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
        }
        if !(w0 > 0.0 && w0.is_finite()) {
            return Err(Error::Config(format!(
                "initial wealth must be positive, got {w0}"
            )));
        }
        Ok(Self {
            m: 0.0,
            q: 0.0,
            r: 0.0,
            v: 0.0,
            s: 0.0,
            w0,
            beta,
            epsilon: DEFAULT_EPSILON,
            direction: BetDirection::AsWritten,
            t: 0,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_direction(mut self, direction: BetDirection) -> Self {
        self.direction = direction;
        self
    }

    /// `W0 + r`. Not clipped: positivity relies on the feedback clipping.
    pub fn wealth(&self) -> f64 {
        self.w0 + self.r
    }

    /// Consumes `h` and returns the next scale.
    pub fn step(&mut self, h: f64) -> Result<f64> {
        if !h.is_finite() {
            return Err(Error::NonFinite("theoretical tuner feedback h"));
        }
        let beta = self.beta;
        let clipped = clip(h, -self.m, self.m);
        self.m = (beta * self.m).max(h);
        self.q = beta * self.q + clipped;
        self.r = beta * self.r - self.s * clipped;
        self.v = beta * beta * self.v + clipped * clipped;
        let wealth = self.wealth();
        let radius = (4.0 * self.m * self.m + self.v).sqrt();
        let signed_q = match self.direction {
            BetDirection::AsWritten => self.q,
            BetDirection::Contrarian => -self.q,
        };
        let fraction = clip(safe_div(signed_q, radius), 0.0, 1.0);
        self.s = safe_div(wealth, radius + self.epsilon) * fraction;
        self.t += 1;
        Ok(self.s)
    }
}
