use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardMode, Network, Shape, Tensor};

use super::{
    critic_loss, generator_loss, penalty_terms, total_critic_loss, Adam, GpConfig, TrainError,
};

/// Losses of one training step. The critic fields come from the last critic
/// update before the generator update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u32,
    pub critic_wasserstein: f64,
    pub gradient_penalty: f64,
    /// Always `critic_wasserstein + penalty_coefficient * gradient_penalty`.
    pub critic_total: f64,
    pub generator_loss: f64,
    pub mean_grad_norm: f64,
}

impl LossRecord {
    pub fn all_finite(&self) -> bool {
        [
            self.critic_wasserstein,
            self.gradient_penalty,
            self.critic_total,
            self.generator_loss,
            self.mean_grad_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStep {
    pub wasserstein: f64,
    pub penalty: f64,
    pub total: f64,
    pub mean_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStep {
    pub loss: f64,
}

/// `n` latent points drawn from a standard normal.
pub fn sample_latent(n: usize, input: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..n * input.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::from_vec(n, input, data)
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.batch + b.batch, a.shape, data)
}

fn check_finite(value: f64, quantity: &str) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            quantity: quantity.into(),
        })
    }
}

/// One critic update on `real` against fresh generator samples. The
/// generator runs in training mode (dropout on, batch statistics) but its
/// moving statistics are not updated, so it is left bit-identical. Nothing
/// is modified when any loss or gradient is non-finite.
pub fn critic_train_step(
    critic: &mut Network,
    optimizer: &mut Adam,
    generator: &Network,
    real: &Tensor,
    gp: &GpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CriticStep, TrainError> {
    if real.batch == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let n = real.batch;
    let z = sample_latent(n, generator.input_shape(), rng);
    let fake = generator.forward(&z, ForwardMode::train(rng))?.output;

    let both = concat(real, &fake);
    let trace = critic.forward(&both, ForwardMode::train(rng))?;
    let (real_scores, fake_scores) = trace.output.data.split_at(n);
    let wasserstein = critic_loss(real_scores, fake_scores)?;
    let inv = 1.0 / n as f32;
    let dout: Vec<f32> = (0..2 * n).map(|i| if i < n { -inv } else { inv }).collect();
    let mut grads =
        critic.param_grads(&trace, &Tensor::from_vec(2 * n, trace.output.shape, dout))?;

    let terms = penalty_terms(critic, real, &fake, gp, rng, true)?;
    grads.add_assign(terms.grads.as_ref().expect("penalty gradients requested"));
    let total = total_critic_loss(wasserstein, terms.penalty, gp.penalty_coefficient);

    check_finite(wasserstein, "critic Wasserstein loss")?;
    check_finite(total, "critic total loss")?;
    if !grads.all_finite() {
        return Err(TrainError::NonFinite {
            quantity: "critic weight gradient".into(),
        });
    }
    optimizer.step(critic.params_mut(), &grads);
    Ok(CriticStep {
        wasserstein,
        penalty: terms.penalty,
        total,
        mean_grad_norm: terms.mean_grad_norm,
    })
}

/// One generator update from the critic's scores of `G(z)`. The critic is
/// only read; the generator's moving statistics absorb this batch.
pub fn generator_train_step(
    generator: &mut Network,
    optimizer: &mut Adam,
    critic: &Network,
    z: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<GeneratorStep, TrainError> {
    if z.batch == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let n = z.batch;
    let gtrace = generator.forward(z, ForwardMode::train(rng))?;
    let ctrace = critic.forward(&gtrace.output, ForwardMode::train(rng))?;
    let loss = generator_loss(&ctrace.output.data)?;
    check_finite(loss, "generator loss")?;
    let dout = Tensor::from_vec(n, ctrace.output.shape, vec![-1.0 / n as f32; n]);
    let (_, dfake) = critic.backward(&ctrace, &dout, false)?;
    let grads = generator.param_grads(&gtrace, &dfake)?;
    if !grads.all_finite() {
        return Err(TrainError::NonFinite {
            quantity: "generator weight gradient".into(),
        });
    }
    optimizer.step(generator.params_mut(), &grads);
    generator.update_running_stats(&gtrace);
    Ok(GeneratorStep { loss })
}
