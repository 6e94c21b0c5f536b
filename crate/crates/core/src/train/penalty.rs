use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardMode, Grads, Network, Tensor};

use super::TrainError;

/// How the penalty is differentiated with respect to critic weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// Second-order gradients through a tangent pass. Needs a piecewise-linear critic.
    #[default]
    Exact,
    /// `(D(x + h*u) - D(x)) / h` stands in for the gradient norm.
    FiniteDifference,
}

fn default_k() -> f32 {
    1.0
}
fn default_lambda() -> f32 {
    10.0
}
fn default_fd_step() -> f32 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// Target gradient norm K.
    #[serde(default = "default_k")]
    pub lipschitz_target: f32,
    /// Weight of the penalty in the critic loss.
    #[serde(default = "default_lambda")]
    pub penalty_coefficient: f32,
    #[serde(default)]
    pub mode: GpMode,
    #[serde(default = "default_fd_step")]
    pub fd_step: f32,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            lipschitz_target: default_k(),
            penalty_coefficient: default_lambda(),
            mode: GpMode::Exact,
            fd_step: default_fd_step(),
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: &str| Err(TrainError::Config(reason.to_string()));
        if !(self.lipschitz_target.is_finite() && self.lipschitz_target > 0.0) {
            return bad("lipschitz_target must be positive");
        }
        if !(self.penalty_coefficient.is_finite() && self.penalty_coefficient >= 0.0) {
            return bad("penalty_coefficient must be non-negative");
        }
        if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        Ok(())
    }
}

/// Penalty value, diagnostics and, on request, the gradient of
/// `penalty_coefficient * penalty` with respect to the critic weights.
#[derive(Debug, Clone)]
pub struct PenaltyTerms {
    pub penalty: f64,
    pub mean_grad_norm: f64,
    pub grads: Option<Grads>,
}

/// Mean over the batch of `(|grad_x D(x_hat)| - K)^2` at per-sample random
/// interpolates `x_hat = e*real + (1-e)*fake`, `e ~ U(0, 1)`. Also returns the
/// mean gradient norm.
pub fn gradient_penalty(
    critic: &Network,
    real: &Tensor,
    fake: &Tensor,
    gp: &GpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), TrainError> {
    let t = penalty_terms(critic, real, fake, gp, rng, false)?;
    Ok((t.penalty, t.mean_grad_norm))
}

pub fn penalty_terms(
    critic: &Network,
    real: &Tensor,
    fake: &Tensor,
    gp: &GpConfig,
    rng: &mut ChaCha8Rng,
    want_grads: bool,
) -> Result<PenaltyTerms, TrainError> {
    gp.validate()?;
    if real.shape != fake.shape || real.batch != fake.batch {
        return Err(TrainError::BatchMismatch {
            left: real.batch,
            right: fake.batch,
        });
    }
    if real.batch == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if gp.mode == GpMode::Exact && want_grads && !critic.is_piecewise_linear() {
        return Err(TrainError::ExactPenaltyUnsupported);
    }
    let n = real.batch;
    let per = real.shape.len();

    let mut x_hat = Tensor::zeros(n, real.shape);
    for s in 0..n {
        let e: f32 = rng.random();
        for ((o, &r), &f) in x_hat
            .sample_mut(s)
            .iter_mut()
            .zip(real.sample(s))
            .zip(fake.sample(s))
        {
            *o = e * r + (1.0 - e) * f;
        }
    }
    let primal = critic.forward(&x_hat, ForwardMode::train(rng))?;
    let ones = Tensor::from_vec(n, primal.output.shape, vec![1.0; primal.output.data.len()]);
    let (_, g) = critic.backward(&primal, &ones, false)?;
    if !g.all_finite() {
        return Err(TrainError::NonFinite {
            quantity: "critic input gradient".into(),
        });
    }
    let norms: Vec<f64> = (0..n)
        .map(|s| {
            g.sample(s)
                .iter()
                .map(|&v| v as f64 * v as f64)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mean_grad_norm = norms.iter().sum::<f64>() / n as f64;
    if !mean_grad_norm.is_finite() {
        return Err(TrainError::NonFinite {
            quantity: "gradient norm".into(),
        });
    }

    let k = gp.lipschitz_target as f64;
    let lambda = gp.penalty_coefficient as f64;
    let mut u = Tensor::zeros(n, real.shape);
    for s in 0..n {
        if norms[s] > 0.0 {
            let inv = 1.0 / norms[s];
            for (o, &v) in u.sample_mut(s).iter_mut().zip(g.sample(s)) {
                *o = (v as f64 * inv) as f32;
            }
        }
    }
    debug_assert_eq!(u.data.len(), n * per);

    let (penalty, grads) = match gp.mode {
        GpMode::Exact => {
            let penalty = norms.iter().map(|&m| (m - k).powi(2)).sum::<f64>() / n as f64;
            let grads = if want_grads {
                let tangent = critic.tangent(&primal, &u)?;
                let dout: Vec<f32> = norms
                    .iter()
                    .map(|&m| (lambda * 2.0 * (m - k) / n as f64) as f32)
                    .collect();
                let dout = Tensor::from_vec(n, tangent.output.shape, dout);
                Some(critic.tangent_param_grads(&primal, &tangent, &dout)?)
            } else {
                None
            };
            (penalty, grads)
        }
        GpMode::FiniteDifference => {
            let h = gp.fd_step as f64;
            let mut step = u.clone();
            step.data
                .iter_mut()
                .for_each(|v| *v = (*v as f64 * h) as f32);
            // The shift realized in f32 along u, so rounding of `h * u` does
            // not bias the quotient.
            let lengths: Vec<f64> = (0..n)
                .map(|s| {
                    step.sample(s)
                        .iter()
                        .zip(u.sample(s))
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum()
                })
                .collect();
            let change = critic.difference(&primal, &step)?;
            let surrogate: Vec<f64> = change
                .data
                .iter()
                .zip(&lengths)
                .map(|(&dv, &len)| if len > 0.0 { dv as f64 / len } else { 0.0 })
                .collect();
            let penalty = surrogate.iter().map(|&m| (m - k).powi(2)).sum::<f64>() / n as f64;
            let grads = if want_grads {
                let mut shifted = x_hat.clone();
                for (o, &d) in shifted.data.iter_mut().zip(&step.data) {
                    *o += d;
                }
                let moved = critic.forward(&shifted, ForwardMode::replay(&primal))?;
                let coef: Vec<f64> = surrogate
                    .iter()
                    .zip(&lengths)
                    .map(|(&m, &len)| {
                        if len > 0.0 {
                            lambda * 2.0 * (m - k) / (n as f64 * len)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let plus = Tensor::from_vec(
                    n,
                    moved.output.shape,
                    coef.iter().map(|&c| c as f32).collect(),
                );
                let minus = Tensor::from_vec(
                    n,
                    moved.output.shape,
                    coef.iter().map(|&c| -c as f32).collect(),
                );
                let mut grads = critic.param_grads(&moved, &plus)?;
                grads.add_assign(&critic.param_grads(&primal, &minus)?);
                Some(grads)
            } else {
                None
            };
            (penalty, grads)
        }
    };
    if !penalty.is_finite() {
        return Err(TrainError::NonFinite {
            quantity: "gradient penalty".into(),
        });
    }
    Ok(PenaltyTerms {
        penalty,
        mean_grad_norm,
        grads,
    })
}
