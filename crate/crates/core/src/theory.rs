//! Numerical checks of the tuner's regret analysis: the piecewise potential
//! `a(x)`, a stratified sweep of the key wealth inequality, and the empirical
//! regret bound for the β = 1 theoretical tuner.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tuner::{BetDirection, TheoreticalTunerState};

/// `0` for `x ≤ 0`, `x²/2` on `[0, 1]`, `x − 1/2` for `x ≥ 1`.
pub fn a_fn(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        0.5 * x * x
    } else {
        x - 0.5
    }
}

/// A point `(A, B, m, x)` with `B ≥ 4m²` and `|x| ≤ m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalitySample {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub x: f64,
}

/// The five regimes of the case analysis, by `u = −A/√B` and
/// `w = (−A − x)/√(B + x²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProofCase {
    /// `u ≤ 0`
    NonPositiveLead = 0,
    /// `u ≥ 0`, `w ≤ 0`
    NonPositiveNext = 1,
    /// `u ∈ [0, 1]`, `w ≥ 0`
    Quadratic = 2,
    /// `u ≥ 1`, `w ≥ 1`
    Linear = 3,
    /// `u ≥ 1`, `w ∈ [0, 1)`
    Crossing = 4,
}

impl ProofCase {
    pub const ALL: [ProofCase; 5] = [
        ProofCase::NonPositiveLead,
        ProofCase::NonPositiveNext,
        ProofCase::Quadratic,
        ProofCase::Linear,
        ProofCase::Crossing,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }
}

impl InequalitySample {
    pub fn new(a: f64, b: f64, m: f64, x: f64) -> Result<Self> {
        let s = Self { a, b, m, x };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.m, self.x]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || self.b <= 0.0
            || self.m < 0.0
            || self.b < 4.0 * self.m * self.m
            || self.x.abs() > self.m
        {
            return Err(Error::Precondition(format!(
                "inequality sample outside domain B > 0, B >= 4m^2, |x| <= m: {self:?}"
            )));
        }
        Ok(())
    }

    /// Both sides of
    /// `a(−A/√B) − (x/√B)·clip(−A/√B, 0, 1) ≥ a((−A − x)/√(B + x²)) − x²/B`.
    pub fn sides(&self) -> (f64, f64) {
        let sb = self.b.sqrt();
        let u = -self.a / sb;
        let lhs = a_fn(u) - self.x / sb * u.clamp(0.0, 1.0);
        let w = (-self.a - self.x) / (self.b + self.x * self.x).sqrt();
        let rhs = a_fn(w) - self.x * self.x / self.b;
        (lhs, rhs)
    }

    pub fn margin(&self) -> f64 {
        let (lhs, rhs) = self.sides();
        lhs - rhs
    }

    pub fn case(&self) -> ProofCase {
        let u = -self.a / self.b.sqrt();
        let w = (-self.a - self.x) / (self.b + self.x * self.x).sqrt();
        if u <= 0.0 {
            ProofCase::NonPositiveLead
        } else if w <= 0.0 {
            ProofCase::NonPositiveNext
        } else if u <= 1.0 {
            ProofCase::Quadratic
        } else if w >= 1.0 {
            ProofCase::Linear
        } else {
            ProofCase::Crossing
        }
    }
}

/// Default relative tolerance scale for [`technical_inequality_holds`].
pub const INEQUALITY_TOL: f64 = 1e-12;

/// `LHS − RHS ≥ −tol`, with `tol` defaulting to `1e-12·(1 + |LHS|)`.
pub fn technical_inequality_holds(sample: &InequalitySample, tol: Option<f64>) -> Result<bool> {
    sample.validate()?;
    let (lhs, rhs) = sample.sides();
    let tol = tol.unwrap_or(INEQUALITY_TOL * (1.0 + lhs.abs()));
    Ok(lhs - rhs >= -tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub samples: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_sample: Option<InequalitySample>,
    /// Samples per proof case, indexed by `ProofCase as usize`.
    pub case_counts: [usize; 5],
}

/// Draws sample `index` of a sweep. Sample `i` targets case `i mod 5`; each
/// draw has its own stream so results do not depend on evaluation order.
pub fn draw_inequality_sample(seed: u64, index: u64) -> InequalitySample {
    let mut rng = SplitMix64::stream(seed, index);
    let b = 10f64.powf(rng.uniform(-6.0, 6.0));
    let sb = b.sqrt();
    let m = rng.uniform(0.0, 0.5) * sb;
    let x_signed = rng.uniform(-m, m);
    let x_pos = x_signed.abs();
    // Spread |A| over several orders of magnitude relative to √B.
    let spread = |rng: &mut SplitMix64| sb * 10f64.powf(rng.uniform(-3.0, 2.0));
    let (a, x) = match index % 5 {
        0 => (spread(&mut rng), x_signed),
        1 => (-x_pos * rng.next_f64(), x_pos),
        2 => {
            let hi = 0.0f64.min(-x_signed);
            (-sb + (hi + sb) * rng.next_f64(), x_signed)
        }
        3 => {
            let edge = (-sb).min(-x_signed - (b + x_signed * x_signed).sqrt());
            (edge - spread(&mut rng), x_signed)
        }
        _ => {
            let lo = -x_pos - (b + x_pos * x_pos).sqrt();
            (-sb + (lo + sb) * rng.next_f64(), x_pos)
        }
    };
    InequalitySample {
        a,
        b,
        m,
        x: x.clamp(-m, m),
    }
}

pub fn sweep_technical_inequality(n_samples: usize, seed: u64) -> InequalityReport {
    let evaluated: Vec<(InequalitySample, f64, bool)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = draw_inequality_sample(seed, i);
            let (lhs, rhs) = s.sides();
            let ok = lhs - rhs >= -INEQUALITY_TOL * (1.0 + lhs.abs());
            (s, lhs - rhs, ok)
        })
        .collect();

    let mut report = InequalityReport {
        samples: n_samples,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst_sample: None,
        case_counts: [0; 5],
    };
    for (s, margin, ok) in evaluated {
        report.case_counts[s.case() as usize] += 1;
        if !ok {
            report.violations += 1;
        }
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_sample = Some(s);
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretBoundReport {
    /// `Σ h_t (s_t − s̊)` with `s_t` the scale played before `h_t`.
    pub actual: f64,
    pub bound: f64,
    pub margin: f64,
    pub max_scale: f64,
    pub min_wealth: f64,
}

/// Runs the β = 1 theoretical tuner over `trace` and compares its regret
/// against `s_ref` with the bound
/// `W0 + (s̊ + max s)·m_T + C·s̊·ln(e + T·s̊·m_T/(m_1·W0))·√(Σ h²)`.
pub fn regret_bound_margin(
    trace: &[f64],
    s_ref: f64,
    c: f64,
    w0: f64,
    direction: BetDirection,
) -> Result<RegretBoundReport> {
    let first = *trace
        .first()
        .ok_or_else(|| Error::Precondition("empty feedback trace".into()))?;
    if first <= 0.0 {
        return Err(Error::Precondition(
            "trace must start with a positive feedback so that m_1 > 0".into(),
        ));
    }
    if s_ref < 0.0 {
        return Err(Error::Precondition(format!(
            "comparator scale must be >= 0, got {s_ref}"
        )));
    }
    let mut tuner = TheoreticalTunerState::new(1.0, w0)?.with_direction(direction);
    let mut actual = 0.0;
    let mut max_scale: f64 = 0.0;
    let mut min_wealth = f64::INFINITY;
    let mut sum_sq = 0.0;
    let mut m1 = 0.0;
    for (t, &h) in trace.iter().enumerate() {
        let played = tuner.s;
        max_scale = max_scale.max(played);
        actual += h * (played - s_ref);
        sum_sq += h * h;
        tuner.step(h)?;
        if t == 0 {
            m1 = tuner.m;
        }
        min_wealth = min_wealth.min(tuner.wealth());
    }
    let steps = trace.len() as f64;
    let m_t = tuner.m;
    let log_term = (std::f64::consts::E + steps * s_ref * m_t / (m1 * w0)).ln();
    let bound = w0 + (s_ref + max_scale) * m_t + c * s_ref * log_term * sum_sq.sqrt();
    Ok(RegretBoundReport {
        actual,
        bound,
        margin: bound - actual,
        max_scale,
        min_wealth,
    })
}

/// Trace families used by the regret battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFamily {
    Symmetric,
    NegativeDrift,
    PositiveDrift,
    SignFlip,
    GrowingMagnitude,
}

impl TraceFamily {
    pub const ALL: [TraceFamily; 5] = [
        TraceFamily::Symmetric,
        TraceFamily::NegativeDrift,
        TraceFamily::PositiveDrift,
        TraceFamily::SignFlip,
        TraceFamily::GrowingMagnitude,
    ];
}

/// Random bounded feedback trace `index` of length `len`; always starts with a
/// positive value.
pub fn random_trace(seed: u64, index: u64, len: usize) -> Vec<f64> {
    let mut rng = SplitMix64::stream(seed, index);
    let family = TraceFamily::ALL[(index % TraceFamily::ALL.len() as u64) as usize];
    let scale = 10f64.powf(rng.uniform(-3.0, 3.0));
    let drift = rng.uniform(0.05, 0.9);
    let mut trace = Vec::with_capacity(len);
    trace.push(scale * rng.uniform(0.05, 1.0));
    for t in 1..len {
        let noise = rng.uniform(-1.0, 1.0);
        let h = match family {
            TraceFamily::Symmetric => noise,
            TraceFamily::NegativeDrift => -drift + (1.0 - drift) * noise,
            TraceFamily::PositiveDrift => drift + (1.0 - drift) * noise,
            TraceFamily::SignFlip => {
                if t % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            TraceFamily::GrowingMagnitude => noise * (1.0 + t as f64 / 10.0),
        };
        trace.push(scale * h);
    }
    trace
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretBatteryReport {
    pub runs: usize,
    pub bound_violations: usize,
    pub wealth_violations: usize,
    pub worst_margin: f64,
    pub min_wealth: f64,
}

/// Every combination of `n_traces` random traces, `lengths` and `s_refs`.
pub fn regret_battery(
    seed: u64,
    n_traces: usize,
    lengths: &[usize],
    s_refs: &[f64],
    c: f64,
    w0: f64,
) -> Result<RegretBatteryReport> {
    regret_battery_with(
        seed,
        n_traces,
        lengths,
        s_refs,
        c,
        w0,
        BetDirection::AsWritten,
    )
}

/// [`regret_battery`] with an explicit bet direction.
pub fn regret_battery_with(
    seed: u64,
    n_traces: usize,
    lengths: &[usize],
    s_refs: &[f64],
    c: f64,
    w0: f64,
    direction: BetDirection,
) -> Result<RegretBatteryReport> {
    let jobs: Vec<(u64, usize)> = lengths
        .iter()
        .flat_map(|&len| (0..n_traces as u64).map(move |i| (i, len)))
        .collect();
    let results: Vec<Vec<RegretBoundReport>> = jobs
        .par_iter()
        .map(|&(i, len)| {
            let trace = random_trace(seed, i, len);
            s_refs
                .iter()
                .map(|&s| regret_bound_margin(&trace, s, c, w0, direction))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut report = RegretBatteryReport {
        runs: 0,
        bound_violations: 0,
        wealth_violations: 0,
        worst_margin: f64::INFINITY,
        min_wealth: f64::INFINITY,
    };
    for r in results.iter().flatten() {
        report.runs += 1;
        report.bound_violations += usize::from(r.margin < 0.0);
        report.wealth_violations += usize::from(r.min_wealth <= 0.0);
        report.worst_margin = report.worst_margin.min(r.margin);
        report.min_wealth = report.min_wealth.min(r.min_wealth);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn a_fn_pieces() {
        assert_eq!(a_fn(-1.0), 0.0);
        assert_eq!(a_fn(0.5), 0.125);
        assert_eq!(a_fn(2.0), 1.5);
        assert_eq!(a_fn(1.0), 0.5);
    }

    #[test]
    fn inequality_hand_values() {
        let s = InequalitySample::new(0.0, 4.0, 1.0, 1.0).unwrap();
        let (lhs, rhs) = s.sides();
        assert_eq!(lhs, 0.0);
        assert_relative_eq!(rhs, -0.25);
        assert!(technical_inequality_holds(&s, None).unwrap());

        let s = InequalitySample::new(-2.0, 4.0, 1.0, -1.0).unwrap();
        let (lhs, rhs) = s.sides();
        assert_relative_eq!(lhs, 1.0);
        assert_relative_eq!(rhs, 0.5916407864998738, max_relative = 1e-15);
        assert_eq!(s.case(), ProofCase::Quadratic);
    }

    #[test]
    fn zero_x_has_zero_margin() {
        for a in [-5.0, -1.0, 0.0, 3.0] {
            let s = InequalitySample::new(a, 2.0, 0.5, 0.0).unwrap();
            assert_eq!(s.margin(), 0.0);
        }
    }

    #[test]
    fn domain_is_enforced() {
        assert!(InequalitySample::new(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(InequalitySample::new(0.0, 4.0, 1.0, 1.5).is_err());
        let bad = InequalitySample {
            a: 0.0,
            b: 4.0,
            m: 1.0,
            x: 2.0,
        };
        assert!(technical_inequality_holds(&bad, None).is_err());
    }

    #[test]
    fn sweep_covers_every_case() {
        let report = sweep_technical_inequality(5_000, 7);
        assert_eq!(report.violations, 0);
        for count in report.case_counts {
            assert!(count >= 500, "{:?}", report.case_counts);
        }
        let single = sweep_technical_inequality(1, 7);
        assert_eq!(single.samples, 1);
        assert_eq!(single.case_counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn drawn_samples_are_in_domain() {
        for i in 0..2_000 {
            draw_inequality_sample(3, i).validate().unwrap();
        }
    }

    #[test]
    fn zero_comparator_margin_is_nonnegative() {
        for i in 0..50 {
            let trace = random_trace(9, i, 300);
            let r = regret_bound_margin(&trace, 0.0, 10.0, 1.0, BetDirection::AsWritten).unwrap();
            assert!(r.margin >= 0.0);
            // Σ h s = −r_T ≤ W0 when W stays positive. ĥ and h differ, so allow
            // the clipping slack m_T·max s.
            assert!(
                r.actual <= 1.0 + r.max_scale * trace.iter().cloned().fold(0.0, f64::max) + 1e-9
            );
        }
    }

    #[test]
    fn constant_and_alternating_traces() {
        let constant = vec![1.0; 1000];
        let flip: Vec<f64> = (0..1000)
            .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        for trace in [constant, flip] {
            for s_ref in [0.01, 1.0, 100.0] {
                for dir in [BetDirection::AsWritten, BetDirection::Contrarian] {
                    let r = regret_bound_margin(&trace, s_ref, 10.0, 1.0, dir).unwrap();
                    assert!(r.margin >= 0.0, "{s_ref} {dir:?} {r:?}");
                    assert!(r.min_wealth > 0.0);
                }
            }
        }
    }

    #[test]
    fn precondition_on_first_feedback() {
        assert!(regret_bound_margin(&[0.0, 1.0], 1.0, 10.0, 1.0, BetDirection::AsWritten).is_err());
        assert!(regret_bound_margin(&[-1.0], 1.0, 10.0, 1.0, BetDirection::AsWritten).is_err());
        assert!(regret_bound_margin(&[], 1.0, 10.0, 1.0, BetDirection::AsWritten).is_err());
    }

    #[test]
    fn wealth_halving_guarantee() {
        // With |ĥ| ≤ m_prev, one step can lose at most half the wealth.
        for i in 0..200 {
            let trace = random_trace(21, i, 400);
            for dir in [BetDirection::AsWritten, BetDirection::Contrarian] {
                let mut st = TheoreticalTunerState::new(1.0, 1.0)
                    .unwrap()
                    .with_direction(dir);
                for &h in &trace {
                    let (w, s, m_prev) = (st.wealth(), st.s, st.m);
                    let clipped = h.clamp(-m_prev, m_prev);
                    st.step(h).unwrap();
                    assert!((clipped * s / w).abs() <= 0.5 + 1e-12);
                    assert!(st.wealth() >= w / 2.0 * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn small_battery() {
        let r = regret_battery(1, 20, &[100, 300], &[0.0, 0.01, 1.0, 100.0], 10.0, 1.0).unwrap();
        assert_eq!(r.runs, 160);
        assert_eq!(r.bound_violations, 0);
        assert_eq!(r.wealth_violations, 0);
    }

    proptest! {
        #[test]
        fn a_fn_is_monotone_and_lipschitz(x in -10.0f64..10.0, gap in 0.0f64..5.0) {
            let y = x + gap;
            let d = a_fn(y) - a_fn(x);
            prop_assert!(d >= 0.0);
            prop_assert!(d <= (y - x) * (1.0 + 1e-12) + 1e-15);
        }
    }
}
