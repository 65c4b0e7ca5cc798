//! The scale-tuning wrapper.
//!
//! The wrapper freezes the base optimizer's starting point `x_ref`, accumulates
//! the base updates into a displacement `Δ`, and plays the iterate
//! `x = x_ref + S·Δ` where `S` is the sum of the tuner's per-β scales. The
//! tuner learns from the scalar feedback `h_t = ⟨Δ_t, g_t⟩` (plus an optional
//! norm-regularization term). The base optimizer is never inspected: it only
//! sees gradients evaluated at the wrapped iterate.

use crate::base_opt::UpdateVector;
use crate::error::{check_dim, Error, Result};
use crate::tuner::{TunerParams, TunerState};
use crate::vector::{all_finite, dot, norm};

/// Below this norm the regularization term of the feedback is dropped.
pub const ZERO_NORM_GUARD: f64 = 1e-30;

/// How the displacement `Δ` is kept between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaMode {
    /// Store `Δ` as one extra parameter-sized buffer.
    #[default]
    Stored,
    /// Recompute `Δ = (x − x_ref)/(S + ε_rec)` on the fly. While `S = 0` the
    /// recovery would return zero forever, so `Δ` stays stored until the first
    /// step with `S > 0`.
    Recovered,
}

/// What to do when the gradient, the update or the feedback is not finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    #[default]
    Abort,
    /// Leave the wrapper state and the iterate untouched.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Feedback handed to the tuner.
    pub h: f64,
    /// Scale that produced the iterate the gradient was evaluated at.
    pub scale_before: f64,
    /// Scale used for the new iterate.
    pub scale_after: f64,
    pub skipped: bool,
}

/// Tuner feedback `⟨Δ, g + λ·S·‖g‖·x/‖x‖⟩`.
///
/// With `λ = 0`, `S = 0` or `‖x‖ ≤ 1e-30` the result is exactly `⟨Δ, g⟩`.
pub fn compute_h(delta: &[f64], g: &[f64], x: &[f64], s_sum: f64, lambda: f64) -> Result<f64> {
    check_dim("compute_h gradient", delta.len(), g.len())?;
    check_dim("compute_h iterate", delta.len(), x.len())?;
    Ok(feedback(
        dot(delta, g),
        norm(g),
        dot(delta, x),
        norm(x),
        s_sum,
        lambda,
    ))
}

fn feedback(
    delta_dot_g: f64,
    g_norm: f64,
    delta_dot_x: f64,
    x_norm: f64,
    s_sum: f64,
    lambda: f64,
) -> f64 {
    if lambda == 0.0 || s_sum == 0.0 || x_norm <= ZERO_NORM_GUARD {
        delta_dot_g
    } else {
        delta_dot_g + lambda * s_sum * g_norm * delta_dot_x / x_norm
    }
}

/// `(x − x_ref)/(S + ε)`.
pub fn recover_delta(x: &[f64], x_ref: &[f64], s_sum: f64, epsilon: f64) -> Vec<f64> {
    let denom = s_sum + epsilon;
    x.iter()
        .zip(x_ref)
        .map(|(xj, rj)| (xj - rj) / denom)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Mechanic {
    params: TunerParams,
    tuner: TunerState,
    x_ref: Vec<f64>,
    delta: Option<Vec<f64>>,
    mode: DeltaMode,
    nonfinite: NonFinitePolicy,
    recovery_epsilon: f64,
    pinned_scale: Option<f64>,
    t: u64,
}

impl Mechanic {
    /// Starts the wrapper at the base optimizer's first iterate `x1`.
    pub fn new(x1: &[f64], params: TunerParams) -> Result<Self> {
        let tuner = TunerState::new(&params)?;
        Ok(Self {
            params,
            tuner,
            x_ref: x1.to_vec(),
            delta: Some(vec![0.0; x1.len()]),
            mode: DeltaMode::Stored,
            nonfinite: NonFinitePolicy::Abort,
            recovery_epsilon: 0.0,
            pinned_scale: None,
            t: 0,
        })
    }

    pub fn with_mode(mut self, mode: DeltaMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_nonfinite(mut self, policy: NonFinitePolicy) -> Self {
        self.nonfinite = policy;
        self
    }

    /// ε added to `S` when recovering `Δ`. Defaults to 0, which is safe once
    /// recovery is active because it only starts when `S > 0`.
    pub fn with_recovery_epsilon(mut self, epsilon: f64) -> Self {
        self.recovery_epsilon = epsilon;
        self
    }

    /// Overrides the emitted scale with a constant while the tuner keeps
    /// learning underneath. Diagnostic hook for comparing against a fixed
    /// learning-rate scale.
    pub fn pin_scale(&mut self, scale: Option<f64>) {
        self.pinned_scale = scale;
    }

    pub fn params(&self) -> &TunerParams {
        &self.params
    }

    pub fn tuner(&self) -> &TunerState {
        &self.tuner
    }

    pub fn x_ref(&self) -> &[f64] {
        &self.x_ref
    }

    pub fn mode(&self) -> DeltaMode {
        self.mode
    }

    /// Stored displacement, `None` once recovery is active.
    pub fn delta(&self) -> Option<&[f64]> {
        self.delta.as_deref()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.x_ref.len()
    }

    /// Current scale `S_t`.
    pub fn scale(&self) -> f64 {
        self.pinned_scale.unwrap_or_else(|| self.tuner.scale())
    }

    /// Parameter-sized buffers held in addition to `x_ref`.
    pub fn extra_param_vectors(&self) -> usize {
        usize::from(self.delta.is_some())
    }

    /// One wrapper step. `x` holds the current wrapped iterate `x_t` on entry
    /// and `x_{t+1}` on return; `g` and `u` must have been computed at `x_t`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], u: &UpdateVector) -> Result<StepInfo> {
        self.step_traced(x, g, u, None)
    }

    /// Like [`Mechanic::step`], additionally writing the `Δ_t` used for the
    /// feedback into `delta_out`.
    pub fn step_traced(
        &mut self,
        x: &mut [f64],
        g: &[f64],
        u: &UpdateVector,
        delta_out: Option<&mut Vec<f64>>,
    ) -> Result<StepInfo> {
        let d = self.dim();
        check_dim("mechanic iterate", d, x.len())?;
        check_dim("mechanic gradient", d, g.len())?;
        check_dim("mechanic update", d, u.len())?;
        let scale_before = self.scale();
        if !all_finite(g) || !all_finite(u.as_slice()) {
            return self.reject("gradient or update", scale_before);
        }

        if self.mode == DeltaMode::Recovered && self.delta.is_some() && scale_before > 0.0 {
            self.delta = None;
        }

        let lambda = self.params.lambda;
        let h = match &self.delta {
            Some(delta) => {
                let h = compute_h(delta, g, x, scale_before, lambda)?;
                if let Some(out) = delta_out {
                    out.clear();
                    out.extend_from_slice(delta);
                }
                h
            }
            None => {
                let denom = scale_before + self.recovery_epsilon;
                let (mut dg, mut dx, mut gg, mut xx) = (0.0, 0.0, 0.0, 0.0);
                let mut out = delta_out;
                if let Some(buf) = out.as_deref_mut() {
                    buf.clear();
                }
                for j in 0..d {
                    let dj = (x[j] - self.x_ref[j]) / denom;
                    dg += dj * g[j];
                    dx += dj * x[j];
                    gg += g[j] * g[j];
                    xx += x[j] * x[j];
                    if let Some(buf) = out.as_deref_mut() {
                        buf.push(dj);
                    }
                }
                feedback(dg, gg.sqrt(), dx, xx.sqrt(), scale_before, lambda)
            }
        };
        if !h.is_finite() {
            return self.reject("feedback h", scale_before);
        }

        self.tuner.step(h, &self.params)?;
        let scale_after = self.scale();
        let u = u.as_slice();
        match &mut self.delta {
            Some(delta) => {
                for j in 0..d {
                    delta[j] += u[j];
                    x[j] = self.x_ref[j] + scale_after * delta[j];
                }
            }
            None => {
                let denom = scale_before + self.recovery_epsilon;
                for j in 0..d {
                    let dj = (x[j] - self.x_ref[j]) / denom + u[j];
                    x[j] = self.x_ref[j] + scale_after * dj;
                }
            }
        }
        self.t += 1;
        Ok(StepInfo {
            h,
            scale_before,
            scale_after,
            skipped: false,
        })
    }

    fn reject(&self, what: &'static str, scale: f64) -> Result<StepInfo> {
        match self.nonfinite {
            NonFinitePolicy::Abort => Err(Error::NonFinite(what)),
            NonFinitePolicy::Skip => Ok(StepInfo {
                h: 0.0,
                scale_before: scale,
                scale_after: scale,
                skipped: true,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_opt::{BaseOptimizer, Sgd};
    use approx::assert_relative_eq;

    #[test]
    fn feedback_plain_dot_product() {
        let h = compute_h(&[1.0, 0.0], &[0.5, 0.5], &[3.0, 4.0], 2.0, 0.0).unwrap();
        assert_eq!(h, 0.5);
    }

    #[test]
    fn feedback_with_regularizer() {
        let h = compute_h(&[1.0, 0.0], &[0.5, 0.5], &[3.0, 4.0], 2.0, 0.01).unwrap();
        assert_relative_eq!(h, 0.5084852813742385, max_relative = 1e-15);
    }

    #[test]
    fn feedback_zero_delta_and_zero_x() {
        assert_eq!(
            compute_h(&[0.0, 0.0], &[7.0, -3.0], &[1.0, 1.0], 5.0, 0.01).unwrap(),
            0.0
        );
        let h = compute_h(&[1.0, 2.0], &[0.5, 0.25], &[0.0, 0.0], 5.0, 0.01).unwrap();
        assert_eq!(h, 1.0);
        assert!(compute_h(&[1.0], &[1.0, 2.0], &[0.0, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn recover_delta_inverts_reconstruction() {
        assert_eq!(
            recover_delta(&[1.0, 2.0], &[1.0, 2.0], 3.0, 1e-8),
            vec![0.0, 0.0]
        );
        assert_eq!(
            recover_delta(&[3.0, 5.0], &[1.0, 1.0], 2.0, 0.0),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn unguarded_recovery_never_leaves_zero_scale() {
        // With S_1 = 0 the stored-free recovery returns Δ = 0, so h = 0 forever.
        let x_ref = vec![0.5, -0.5];
        let params = TunerParams::default();
        let mut tuner = TunerState::new(&params).unwrap();
        let x = x_ref.clone();
        for _ in 0..5 {
            let delta = recover_delta(&x, &x_ref, tuner.scale(), params.epsilon);
            assert_eq!(delta, vec![0.0, 0.0]);
            let h = compute_h(&delta, &[1.0, -2.0], &x, tuner.scale(), params.lambda).unwrap();
            tuner.step(h, &params).unwrap();
            assert_eq!(tuner.scale(), 0.0);
        }
    }

    #[test]
    fn first_step_returns_reference_point() {
        let x1 = vec![0.3, -1.2, 4.0];
        let mut mech = Mechanic::new(&x1, TunerParams::default()).unwrap();
        let mut x = x1.clone();
        let u = UpdateVector(vec![1.0, 2.0, 3.0]);
        let info = mech.step(&mut x, &[0.1, 0.2, 0.3], &u).unwrap();
        assert_eq!(info.h, 0.0);
        assert_eq!(info.scale_after, 0.0);
        assert_eq!(x, x1);
        assert_eq!(mech.delta().unwrap(), u.as_slice());
    }

    #[test]
    fn second_step_uses_s_init() {
        let params = TunerParams {
            lambda: 0.0,
            ..TunerParams::with_betas(vec![0.9])
        };
        let x1 = vec![1.0, 1.0];
        let mut mech = Mechanic::new(&x1, params.clone()).unwrap();
        let mut x = x1.clone();
        let u1 = UpdateVector(vec![-0.5, 0.25]);
        mech.step(&mut x, &[0.5, -0.25], &u1).unwrap();
        // ⟨Δ_2, g_2⟩ = (-0.5)(-1) + 0.25·0 = 0.5
        let g2 = [-1.0, 0.0];
        let u2 = UpdateVector(vec![0.1, 0.1]);
        let info = mech.step(&mut x, &g2, &u2).unwrap();
        assert_eq!(info.h, 0.5);
        let s = params.s_init * 0.5 / (0.5 + params.epsilon);
        assert_relative_eq!(info.scale_after, s, max_relative = 1e-14);
        let delta3 = [-0.4, 0.35];
        for j in 0..2 {
            assert_relative_eq!(x[j], x1[j] + s * delta3[j], max_relative = 1e-15);
        }
    }

    #[test]
    fn pinned_scale_reproduces_scaled_sgd() {
        let x1 = vec![2.0, -1.0];
        let mut mech = Mechanic::new(&x1, TunerParams::default()).unwrap();
        mech.pin_scale(Some(0.5));
        let mut base = Sgd;
        let mut x = x1.clone();
        let mut cumulative = [0.0, 0.0];
        let etas = [0.1, 0.2, 0.05, 0.3];
        for (k, eta) in etas.iter().enumerate() {
            let g = [x[0] + k as f64, x[1] * x[1]];
            let u = base.update(&g, *eta, &x).unwrap();
            mech.step(&mut x, &g, &u).unwrap();
            for j in 0..2 {
                cumulative[j] += eta * g[j];
                assert_relative_eq!(x[j], x1[j] - 0.5 * cumulative[j], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn stored_mode_holds_one_extra_vector() {
        let mech = Mechanic::new(&[0.0; 8], TunerParams::default()).unwrap();
        assert_eq!(mech.extra_param_vectors(), 1);
    }

    #[test]
    fn recovered_mode_releases_delta_once_scale_is_positive() {
        let x1 = vec![0.2, 0.1];
        let mut mech = Mechanic::new(&x1, TunerParams::default())
            .unwrap()
            .with_mode(DeltaMode::Recovered);
        let mut x = x1.clone();
        let mut base = Sgd;
        // Alternating gradients give a positive feedback on the second step.
        for k in 0..4 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let g = [sign * 0.5, sign * -0.25];
            let u = base.update(&g, 0.1, &x).unwrap();
            mech.step(&mut x, &g, &u).unwrap();
        }
        assert!(mech.scale() > 0.0);
        assert_eq!(mech.extra_param_vectors(), 0);
    }

    #[test]
    fn non_finite_policy() {
        let x1 = vec![0.0, 0.0];
        let u = UpdateVector(vec![1.0, 1.0]);
        let mut abort = Mechanic::new(&x1, TunerParams::default()).unwrap();
        let mut x = x1.clone();
        assert!(matches!(
            abort.step(&mut x, &[f64::NAN, 0.0], &u),
            Err(Error::NonFinite(_))
        ));
        let mut skip = Mechanic::new(&x1, TunerParams::default())
            .unwrap()
            .with_nonfinite(NonFinitePolicy::Skip);
        let info = skip.step(&mut x, &[f64::NAN, 0.0], &u).unwrap();
        assert!(info.skipped);
        assert_eq!(skip.steps(), 0);
        assert_eq!(x, x1);
    }

    #[test]
    fn dimension_mismatch() {
        let mut mech = Mechanic::new(&[0.0; 3], TunerParams::default()).unwrap();
        let mut x = vec![0.0; 3];
        let err = mech.step(&mut x, &[0.0; 2], &UpdateVector(vec![0.0; 3]));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }
}
