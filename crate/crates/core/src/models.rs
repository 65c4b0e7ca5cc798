//! Desk-scale objectives with analytic gradients. Every loss is the mean over
//! the batch.

use crate::data::{Dataset, Row};
use crate::error::{check_dim, Error, Result};
use crate::rng::SplitMix64;

/// A minibatch: example indices into a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { data, indices }
    }

    fn rows(&self) -> impl Iterator<Item = (Row<'a>, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| (self.data.row(i), self.data.labels[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpHead {
    /// Single output, `½(o − y)²`.
    Mse,
    /// Softmax over the outputs; labels are class indices.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `½‖x − c‖²`, independent of the batch.
    Quadratic { center: Vec<f64> },
    /// `½(⟨w, x⟩ − y)²`.
    LinReg { dim: usize },
    /// `log(1 + exp(−y⟨w, x⟩))` with `y ∈ {−1, +1}`.
    LogReg { dim: usize },
    /// Softmax regression; weights are `classes × dim`, row-major.
    MultiLogReg { dim: usize, classes: usize },
    /// One tanh hidden layer. Layout: `W1 (hidden×inputs)`, `b1`, `W2
    /// (outputs×hidden)`, `b2`.
    Mlp {
        inputs: usize,
        hidden: usize,
        outputs: usize,
        head: MlpHead,
    },
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Overwrites `logits` with softmax probabilities and returns log-sum-exp.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter_mut().for_each(|z| *z = (*z - lse).exp());
    lse
}

fn class_index(y: f64, classes: usize) -> Result<usize> {
    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes {
        Ok(y as usize)
    } else {
        Err(Error::Precondition(format!(
            "label {y} is not a class index below {classes}"
        )))
    }
}

impl Objective {
    pub fn param_dim(&self) -> usize {
        match self {
            Objective::Quadratic { center } => center.len(),
            Objective::LinReg { dim } | Objective::LogReg { dim } => *dim,
            Objective::MultiLogReg { dim, classes } => dim * classes,
            Objective::Mlp {
                inputs,
                hidden,
                outputs,
                ..
            } => hidden * inputs + hidden + outputs * hidden + outputs,
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            Objective::Quadratic { .. } => None,
            Objective::LinReg { dim } | Objective::LogReg { dim } => Some(*dim),
            Objective::MultiLogReg { dim, .. } => Some(*dim),
            Objective::Mlp { inputs, .. } => Some(*inputs),
        }
    }

    /// Zero vector, or i.i.d. `N(0, scale²)` entries when `scale > 0`.
    pub fn init_params(&self, seed: u64, scale: f64) -> Vec<f64> {
        let d = self.param_dim();
        if scale == 0.0 {
            return vec![0.0; d];
        }
        let mut rng = SplitMix64::stream(seed, 0x1417);
        (0..d).map(|_| scale * rng.gaussian()).collect()
    }

    pub fn loss(&self, params: &[f64], batch: &Batch<'_>) -> Result<f64> {
        self.evaluate(params, batch, None)
    }

    pub fn loss_and_grad(&self, params: &[f64], batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_dim()];
        let loss = self.evaluate(params, batch, Some(&mut grad))?;
        Ok((loss, grad))
    }

    fn evaluate(
        &self,
        params: &[f64],
        batch: &Batch<'_>,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        check_dim("objective parameters", self.param_dim(), params.len())?;
        if let Some(input) = self.input_dim() {
            check_dim("batch feature dimension", input, batch.data.dim)?;
            if batch.indices.is_empty() {
                return Err(Error::Precondition("empty batch".into()));
            }
        }
        let scale = 1.0 / batch.indices.len().max(1) as f64;

        match self {
            Objective::Quadratic { center } => {
                let mut loss = 0.0;
                for (j, (x, c)) in params.iter().zip(center).enumerate() {
                    let r = x - c;
                    loss += 0.5 * r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        g[j] = r;
                    }
                }
                Ok(loss)
            }
            Objective::LinReg { .. } => {
                let mut loss = 0.0;
                for (row, y) in batch.rows() {
                    let r = row.dot(params) - y;
                    loss += 0.5 * r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        row.axpy(scale * r, g);
                    }
                }
                Ok(loss * scale)
            }
            Objective::LogReg { .. } => {
                let mut loss = 0.0;
                for (row, y) in batch.rows() {
                    let z = y * row.dot(params);
                    loss += softplus(-z);
                    if let Some(g) = grad.as_deref_mut() {
                        row.axpy(-scale * y * sigmoid(-z), g);
                    }
                }
                Ok(loss * scale)
            }
            Objective::MultiLogReg { dim, classes } => {
                let mut loss = 0.0;
                let mut logits = vec![0.0; *classes];
                for (row, y) in batch.rows() {
                    let label = class_index(y, *classes)?;
                    for (c, z) in logits.iter_mut().enumerate() {
                        *z = row.dot(&params[c * dim..(c + 1) * dim]);
                    }
                    let target = logits[label];
                    loss += softmax_in_place(&mut logits) - target;
                    if let Some(g) = grad.as_deref_mut() {
                        for (c, p) in logits.iter().enumerate() {
                            let err = p - f64::from(u8::from(c == label));
                            row.axpy(scale * err, &mut g[c * dim..(c + 1) * dim]);
                        }
                    }
                }
                Ok(loss * scale)
            }
            Objective::Mlp {
                inputs,
                hidden,
                outputs,
                head,
            } => self.mlp(
                params,
                batch,
                grad,
                (*inputs, *hidden, *outputs, *head),
                scale,
            ),
        }
    }

    fn mlp(
        &self,
        params: &[f64],
        batch: &Batch<'_>,
        mut grad: Option<&mut [f64]>,
        (inputs, hidden, outputs, head): (usize, usize, usize, MlpHead),
        scale: f64,
    ) -> Result<f64> {
        if head == MlpHead::Mse && outputs != 1 {
            return Err(Error::Precondition(
                "mse head needs exactly one output".into(),
            ));
        }
        let w1 = 0;
        let b1 = hidden * inputs;
        let w2 = b1 + hidden;
        let b2 = w2 + outputs * hidden;

        let mut act = vec![0.0; hidden];
        let mut out = vec![0.0; outputs];
        let mut d_out = vec![0.0; outputs];
        let mut loss = 0.0;
        for (row, y) in batch.rows() {
            for k in 0..hidden {
                let wk = &params[w1 + k * inputs..w1 + (k + 1) * inputs];
                act[k] = (row.dot(wk) + params[b1 + k]).tanh();
            }
            for c in 0..outputs {
                let wc = &params[w2 + c * hidden..w2 + (c + 1) * hidden];
                out[c] = wc.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + params[b2 + c];
            }
            match head {
                MlpHead::Mse => {
                    let r = out[0] - y;
                    loss += 0.5 * r * r;
                    d_out[0] = r;
                }
                MlpHead::CrossEntropy => {
                    let label = class_index(y, outputs)?;
                    let target = out[label];
                    loss += softmax_in_place(&mut out) - target;
                    for c in 0..outputs {
                        d_out[c] = out[c] - f64::from(u8::from(c == label));
                    }
                }
            }
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            for c in 0..outputs {
                let dc = scale * d_out[c];
                g[b2 + c] += dc;
                for k in 0..hidden {
                    g[w2 + c * hidden + k] += dc * act[k];
                }
            }
            for k in 0..hidden {
                let back: f64 = (0..outputs)
                    .map(|c| params[w2 + c * hidden + k] * d_out[c])
                    .sum();
                let da = scale * back * (1.0 - act[k] * act[k]);
                g[b1 + k] += da;
                row.axpy(da, &mut g[w1 + k * inputs..w1 + (k + 1) * inputs]);
            }
        }
        Ok(loss * scale)
    }
}

/// Central finite differences of the batch loss, one coordinate at a time.
pub fn finite_difference_grad(
    obj: &Objective,
    params: &[f64],
    batch: &Batch<'_>,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Precondition(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = probe[j];
        probe[j] = orig + step;
        let up = obj.loss(&probe, batch)?;
        probe[j] = orig - step;
        let down = obj.loss(&probe, batch)?;
        probe[j] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn gradient_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = crate::vector::norm(a);
    let nb = crate::vector::norm(b);
    diff / na.max(nb).max(1e-12)
}
