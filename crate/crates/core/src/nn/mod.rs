//! Critic and generator networks: layer configs, weights, evaluation,
//! gradients and checkpoints.
//!
//! Everything here is written against flat `f32` buffers with a single
//! matrix-multiply primitive. Convolutions lower to im2col products.

pub mod checkpoint;
mod config;
mod layers;
mod network;
mod params;
mod tensor;
#[cfg(test)]
mod tests;

use thiserror::Error;

pub use checkpoint::{
    Checkpoint, CheckpointError, CheckpointManifest, CheckpointMeta, SeedLineage,
};
pub use config::{
    Activation, BlockOptions, LayerKind, LayerSpec, LayerSummary, NetworkConfig, Padding,
    ParamCounts, Profile, Role, LATENT_DIM,
};
pub use network::{DropoutMode, ForwardMode, Grads, Network, NormMode, Trace};
pub use params::{init_params, ParamStore, ParamTensor, TensorRole, INIT_STD};
pub use tensor::{Shape, Tensor};

use crate::image::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("layer `{layer}`: {reason}")]
    Shape { layer: String, reason: String },
    #[error("input shape {actual} does not match expected {expected}")]
    InputShape { expected: Shape, actual: Shape },
    #[error("empty batch")]
    EmptyBatch,
    #[error("weights do not match config: {reason}")]
    Weights { reason: String },
    #[error("layer `{layer}` is not piecewise linear ({reason}); exact input-gradient differentiation is unavailable")]
    NotPiecewiseLinear { layer: String, reason: String },
    #[error("latent point has {actual} coordinates, expected {expected}")]
    LatentDim { expected: usize, actual: usize },
    #[error("image is {actual_w}x{actual_h}, network expects {expected_w}x{expected_h}")]
    ImageSize {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
}

/// Evaluation mode for the public forward wrappers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on, batch statistics.
    Train,
    /// Dropout off, moving statistics. Deterministic.
    Eval,
}

fn forward_mode(mode: Mode, rng: &mut rand_chacha::ChaCha8Rng) -> ForwardMode<'_> {
    match mode {
        Mode::Train => ForwardMode::train(rng),
        Mode::Eval => ForwardMode::eval(),
    }
}

/// Packs grayscale images into a batch normalized to [-1, 1].
pub fn images_to_tensor(images: &[GrayImage], input: Shape) -> Result<Tensor, ModelError> {
    let Shape::Image([h, w, 1]) = input else {
        return Err(ModelError::Shape {
            layer: "input".into(),
            reason: format!("expected a single-channel image input, got {input}"),
        });
    };
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(ModelError::ImageSize {
                expected_w: w,
                expected_h: h,
                actual_w: img.width(),
                actual_h: img.height(),
            });
        }
        data.extend(img.to_normalized());
    }
    Ok(Tensor::from_vec(images.len(), input, data))
}

/// Converts a batch of single-channel outputs in [-1, 1] back to images.
pub fn tensor_to_images(t: &Tensor) -> Vec<GrayImage> {
    let Shape::Image([h, w, 1]) = t.shape else {
        panic!(
            "tensor_to_images needs single-channel images, got {}",
            t.shape
        );
    };
    (0..t.batch)
        .map(|i| GrayImage::from_normalized(w, h, t.sample(i)).expect("buffer matches shape"))
        .collect()
}

/// One unbounded score per image.
pub fn critic_forward(
    critic: &Network,
    images: &Tensor,
    mode: Mode,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<f32>, ModelError> {
    Ok(critic.forward(images, forward_mode(mode, rng))?.output.data)
}

/// Decodes latent points into images with every value strictly inside (-1, 1).
pub fn generator_forward(
    generator: &Network,
    zs: &[[f32; LATENT_DIM]],
    mode: Mode,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Tensor, ModelError> {
    let z = latent_batch(zs.iter().map(|z| z.as_slice()), generator.input_shape())?;
    Ok(generator.forward(&z, forward_mode(mode, rng))?.output)
}

/// Stacks latent points into a batch, checking their dimensionality.
pub fn latent_batch<'a>(
    zs: impl IntoIterator<Item = &'a [f32]>,
    input: Shape,
) -> Result<Tensor, ModelError> {
    let dim = input.len();
    let mut data = Vec::new();
    let mut n = 0;
    for z in zs {
        if z.len() != dim {
            return Err(ModelError::LatentDim {
                expected: dim,
                actual: z.len(),
            });
        }
        data.extend_from_slice(z);
        n += 1;
    }
    Ok(Tensor::from_vec(n, input, data))
}

/// Deterministic eval-mode decode of a single latent point.
pub fn decode(generator: &Network, z: [f32; LATENT_DIM]) -> Result<GrayImage, ModelError> {
    let t = latent_batch([z.as_slice()], generator.input_shape())?;
    let out = generator.predict(&t)?;
    Ok(tensor_to_images(&out).remove(0))
}
