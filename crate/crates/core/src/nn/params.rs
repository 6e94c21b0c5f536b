use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{layer_param_count, LayerKind, NetworkConfig};
use super::{ModelError, ParamCounts, Shape};

/// Standard deviation of the truncated-normal kernel initializer.
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Kernel,
    Bias,
    Gamma,
    Beta,
    MovingMean,
    MovingVariance,
}

impl TensorRole {
    pub fn trainable(self) -> bool {
        !matches!(self, TensorRole::MovingMean | TensorRole::MovingVariance)
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorRole::Kernel => "kernel",
            TensorRole::Bias => "bias",
            TensorRole::Gamma => "gamma",
            TensorRole::Beta => "beta",
            TensorRole::MovingMean => "moving_mean",
            TensorRole::MovingVariance => "moving_variance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub layer: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamTensor {
    pub fn trainable(&self) -> bool {
        self.role.trainable()
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.layer, self.role.name())
    }
}

/// All weight tensors of one network, in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn counts(&self) -> ParamCounts {
        let total = self.tensors.iter().map(|t| t.data.len()).sum();
        let trainable = self
            .tensors
            .iter()
            .filter(|t| t.trainable())
            .map(|t| t.data.len())
            .sum();
        ParamCounts {
            total,
            trainable,
            non_trainable: total - trainable,
        }
    }

    pub fn get(&self, layer: &str, role: TensorRole) -> Option<&ParamTensor> {
        self.tensors
            .iter()
            .find(|t| t.layer == layer && t.role == role)
    }

    pub fn get_mut(&mut self, layer: &str, role: TensorRole) -> Option<&mut ParamTensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.layer == layer && t.role == role)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Sets every tensor to zero (running variances included).
    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(0.0);
        }
    }
}

/// Tensor roles and shapes a layer owns, given its input and output shapes.
pub(crate) fn layer_tensors(
    kind: &LayerKind,
    input: Shape,
    output: Shape,
) -> Vec<(TensorRole, Vec<usize>)> {
    let ch = |s: Shape| *s.dims().last().expect("shape has dims");
    match kind {
        LayerKind::Conv2d { kernel, .. } => vec![
            (
                TensorRole::Kernel,
                vec![kernel[0], kernel[1], ch(input), ch(output)],
            ),
            (TensorRole::Bias, vec![ch(output)]),
        ],
        // Keras layout: (kh, kw, filters, in_channels)
        LayerKind::ConvTranspose2d { kernel, .. } => vec![
            (
                TensorRole::Kernel,
                vec![kernel[0], kernel[1], ch(output), ch(input)],
            ),
            (TensorRole::Bias, vec![ch(output)]),
        ],
        LayerKind::Dense { units, .. } => vec![
            (TensorRole::Kernel, vec![input.len(), *units]),
            (TensorRole::Bias, vec![*units]),
        ],
        LayerKind::BatchNorm { .. } => {
            let c = ch(input);
            vec![
                (TensorRole::Gamma, vec![c]),
                (TensorRole::Beta, vec![c]),
                (TensorRole::MovingMean, vec![c]),
                (TensorRole::MovingVariance, vec![c]),
            ]
        }
        _ => Vec::new(),
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, dist: &Normal<f32>, bound: f32) -> f32 {
    loop {
        let v = dist.sample(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Allocates and initializes every tensor from `seed`: kernels truncated
/// normal (std 0.02, cut at two deviations), biases and shifts zero, scales
/// and running variances one.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ParamStore, ModelError> {
    let shapes = config.infer_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0f32, INIT_STD).expect("valid normal");
    let mut tensors = Vec::new();
    let mut input = config.input;
    for (layer, &output) in config.layers.iter().zip(&shapes) {
        let owned = layer_tensors(&layer.kind, input, output);
        debug_assert_eq!(
            owned
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum::<usize>(),
            layer_param_count(&layer.kind, input, output).0
        );
        for (role, shape) in owned {
            let len = shape.iter().product();
            let data = match role {
                TensorRole::Kernel => (0..len)
                    .map(|_| truncated_normal(&mut rng, &dist, 2.0 * INIT_STD))
                    .collect(),
                TensorRole::Gamma | TensorRole::MovingVariance => vec![1.0; len],
                TensorRole::Bias | TensorRole::Beta | TensorRole::MovingMean => vec![0.0; len],
            };
            tensors.push(ParamTensor {
                layer: layer.name.clone(),
                role,
                shape,
                data,
            });
        }
        input = output;
    }
    Ok(ParamStore { tensors })
}
