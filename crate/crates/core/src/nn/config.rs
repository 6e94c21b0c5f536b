//! Declarative layer stacks, shape inference and closed-form parameter counts.

use serde::{Deserialize, Serialize};

use super::{ModelError, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
        #[serde(default)]
        activation: Activation,
    },
    ConvTranspose2d {
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
        #[serde(default)]
        activation: Activation,
    },
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
    BatchNorm {
        momentum: f32,
        epsilon: f32,
    },
    LeakyRelu {
        slope: f32,
    },
    Dropout {
        rate: f32,
    },
    Flatten,
    Reshape {
        target: [usize; 3],
    },
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "Conv2D",
            LayerKind::ConvTranspose2d { .. } => "Conv2DTranspose",
            LayerKind::Dense { .. } => "Dense",
            LayerKind::BatchNorm { .. } => "BatchNormalization",
            LayerKind::LeakyRelu { .. } => "LeakyReLU",
            LayerKind::Dropout { .. } => "Dropout",
            LayerKind::Flatten => "Flatten",
            LayerKind::Reshape { .. } => "Reshape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Critic,
    Generator,
}

/// Architecture size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 128x512 images, six (transposed) convolutions per network.
    #[default]
    Canonical,
    /// 32x128 images, four (transposed) convolutions and narrower channels.
    Reduced,
}

impl Profile {
    /// Image (height, width).
    pub fn image_size(self) -> (usize, usize) {
        match self {
            Profile::Canonical => (128, 512),
            Profile::Reduced => (32, 128),
        }
    }

    fn critic_filters(self) -> &'static [usize] {
        match self {
            Profile::Canonical => &[64, 128, 128, 128, 128, 128],
            Profile::Reduced => &[16, 32, 32, 32],
        }
    }

    /// Channels of the dense seed volume, then of each normalized block.
    fn generator_filters(self) -> (usize, &'static [usize]) {
        match self {
            Profile::Canonical => (128, &[128, 128, 128, 128, 64]),
            Profile::Reduced => (32, &[32, 32, 16]),
        }
    }
}

/// Activation hyperparameters that do not affect parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockOptions {
    pub leaky_slope: f32,
    pub dropout_rate: f32,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            leaky_slope: 0.2,
            dropout_rate: 0.3,
        }
    }
}

/// Row of a model summary: layer name, type, output shape, parameter count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub type_name: &'static str,
    pub output: Shape,
    pub params: usize,
    pub trainable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub role: Role,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

struct Namer(std::collections::HashMap<&'static str, usize>);

impl Namer {
    fn new() -> Self {
        Namer(Default::default())
    }

    fn next(&mut self, base: &'static str) -> String {
        let n = self.0.entry(base).or_insert(0);
        let name = if *n == 0 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        };
        *n += 1;
        name
    }
}

fn conv(filters: usize, activation: Activation) -> LayerKind {
    LayerKind::Conv2d {
        filters,
        kernel: [4, 4],
        stride: [2, 2],
        padding: Padding::Same,
        activation,
    }
}

fn deconv(filters: usize, activation: Activation) -> LayerKind {
    LayerKind::ConvTranspose2d {
        filters,
        kernel: [4, 4],
        stride: [2, 2],
        padding: Padding::Same,
        activation,
    }
}

impl NetworkConfig {
    pub fn new(role: Role, input: Shape) -> Self {
        NetworkConfig {
            role,
            input,
            layers: Vec::new(),
        }
    }

    pub fn push(mut self, name: impl Into<String>, kind: LayerKind) -> Self {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind,
        });
        self
    }

    /// Strided convolutions with leaky rectifier and dropout, then a linear
    /// scalar head.
    pub fn critic(profile: Profile, opts: BlockOptions) -> Self {
        let (h, w) = profile.image_size();
        let mut names = Namer::new();
        let mut cfg = NetworkConfig::new(Role::Critic, Shape::image(h, w, 1));
        for &filters in profile.critic_filters() {
            cfg = cfg
                .push(names.next("conv2d"), conv(filters, Activation::Linear))
                .push(
                    names.next("leaky_re_lu"),
                    LayerKind::LeakyRelu {
                        slope: opts.leaky_slope,
                    },
                )
                .push(
                    names.next("dropout"),
                    LayerKind::Dropout {
                        rate: opts.dropout_rate,
                    },
                );
        }
        cfg.push(names.next("flatten"), LayerKind::Flatten).push(
            names.next("dense"),
            LayerKind::Dense {
                units: 1,
                activation: Activation::Linear,
            },
        )
    }

    /// Dense projection of the 2-D latent point, then transposed convolutions
    /// with batch normalization, leaky rectifier and dropout, and a final tanh
    /// transposed convolution down to one channel.
    pub fn generator(profile: Profile, opts: BlockOptions) -> Self {
        let (h, w) = profile.image_size();
        let (seed_channels, filters) = profile.generator_filters();
        let doublings = filters.len() + 1;
        let (sh, sw) = (h >> doublings, w >> doublings);
        let mut names = Namer::new();
        let mut cfg = NetworkConfig::new(Role::Generator, Shape::vector(LATENT_DIM))
            .push(
                names.next("dense"),
                LayerKind::Dense {
                    units: sh * sw * seed_channels,
                    activation: Activation::Linear,
                },
            )
            .push(
                names.next("reshape"),
                LayerKind::Reshape {
                    target: [sh, sw, seed_channels],
                },
            );
        for &f in filters {
            cfg = cfg
                .push(
                    names.next("conv2d_transpose"),
                    deconv(f, Activation::Linear),
                )
                .push(
                    names.next("batch_normalization"),
                    LayerKind::BatchNorm {
                        momentum: 0.99,
                        epsilon: 1e-3,
                    },
                )
                .push(
                    names.next("leaky_re_lu"),
                    LayerKind::LeakyRelu {
                        slope: opts.leaky_slope,
                    },
                )
                .push(
                    names.next("dropout"),
                    LayerKind::Dropout {
                        rate: opts.dropout_rate,
                    },
                );
        }
        cfg.push(names.next("conv2d_transpose"), deconv(1, Activation::Tanh))
    }

    /// Output shape of every layer, in order. Fails on the first layer whose
    /// input shape it cannot accept.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input;
        if current.is_empty() {
            return Err(ModelError::Shape {
                layer: "input".into(),
                reason: "input shape has no elements".into(),
            });
        }
        for layer in &self.layers {
            current = layer_output(layer, current)?;
            shapes.push(current);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape, ModelError> {
        Ok(self.infer_shapes()?.last().copied().unwrap_or(self.input))
    }

    /// Per-layer summary with closed-form parameter counts.
    pub fn summary(&self) -> Result<Vec<LayerSummary>, ModelError> {
        let shapes = self.infer_shapes()?;
        let mut input = self.input;
        let mut rows = Vec::with_capacity(shapes.len());
        for (layer, &output) in self.layers.iter().zip(&shapes) {
            let (params, trainable) = layer_param_count(&layer.kind, input, output);
            rows.push(LayerSummary {
                name: layer.name.clone(),
                type_name: layer.kind.type_name(),
                output,
                params,
                trainable,
            });
            input = output;
        }
        Ok(rows)
    }

    /// Closed-form parameter count: conv and transposed conv
    /// `kh*kw*cin*cout + cout`, dense `in*out + out`, batch norm `4*c` of
    /// which `2*c` trainable.
    pub fn param_count(&self) -> Result<ParamCounts, ModelError> {
        let rows = self.summary()?;
        let total: usize = rows.iter().map(|r| r.params).sum();
        let trainable: usize = rows.iter().map(|r| r.trainable).sum();
        Ok(ParamCounts {
            total,
            trainable,
            non_trainable: total - trainable,
        })
    }
}

/// Latent dimensionality of the generator input.
pub const LATENT_DIM: usize = 2;

fn same_or_valid(len: usize, k: usize, s: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(len.div_ceil(s)),
        Padding::Valid => (len >= k).then(|| (len - k) / s + 1),
    }
}

fn transposed_len(len: usize, k: usize, s: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => len * s,
        Padding::Valid => len * s + k.saturating_sub(s),
    }
}

fn layer_output(layer: &LayerSpec, input: Shape) -> Result<Shape, ModelError> {
    let fail = |reason: String| ModelError::Shape {
        layer: layer.name.clone(),
        reason,
    };
    let image = || match input {
        Shape::Image(d) => Ok(d),
        Shape::Vector(_) => Err(fail(format!(
            "{} expects an image input, got {input}",
            layer.kind.type_name()
        ))),
    };
    match &layer.kind {
        LayerKind::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            let [h, w, _] = image()?;
            if *filters == 0 || kernel.contains(&0) || stride.contains(&0) {
                return Err(fail("zero filters, kernel or stride".into()));
            }
            let ho = same_or_valid(h, kernel[0], stride[0], *padding);
            let wo = same_or_valid(w, kernel[1], stride[1], *padding);
            match (ho, wo) {
                (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(Shape::image(ho, wo, *filters)),
                _ => Err(fail(format!(
                    "kernel {kernel:?} does not fit input {input}"
                ))),
            }
        }
        LayerKind::ConvTranspose2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            let [h, w, _] = image()?;
            if *filters == 0 || kernel.contains(&0) || stride.contains(&0) {
                return Err(fail("zero filters, kernel or stride".into()));
            }
            Ok(Shape::image(
                transposed_len(h, kernel[0], stride[0], *padding),
                transposed_len(w, kernel[1], stride[1], *padding),
                *filters,
            ))
        }
        LayerKind::Dense { units, .. } => match input {
            Shape::Vector(_) if *units > 0 => Ok(Shape::vector(*units)),
            Shape::Vector(_) => Err(fail("dense layer needs at least one unit".into())),
            Shape::Image(_) => Err(fail(format!("dense expects a flat input, got {input}"))),
        },
        LayerKind::BatchNorm { epsilon, .. } => {
            if *epsilon <= 0.0 {
                return Err(fail("batch norm epsilon must be positive".into()));
            }
            Ok(input)
        }
        LayerKind::LeakyRelu { .. } => Ok(input),
        LayerKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(fail(format!("dropout rate {rate} outside [0, 1)")));
            }
            Ok(input)
        }
        LayerKind::Flatten => Ok(Shape::vector(input.len())),
        LayerKind::Reshape { target } => {
            let out = Shape::Image(*target);
            if out.len() != input.len() {
                return Err(fail(format!("cannot reshape {input} into {out}")));
            }
            Ok(out)
        }
    }
}

fn channels(shape: Shape) -> usize {
    match shape {
        Shape::Vector([n]) => n,
        Shape::Image([_, _, c]) => c,
    }
}

/// (total, trainable) for one layer.
pub(crate) fn layer_param_count(kind: &LayerKind, input: Shape, output: Shape) -> (usize, usize) {
    match kind {
        LayerKind::Conv2d { kernel, .. } | LayerKind::ConvTranspose2d { kernel, .. } => {
            let (cin, cout) = (channels(input), channels(output));
            let n = kernel[0] * kernel[1] * cin * cout + cout;
            (n, n)
        }
        LayerKind::Dense { units, .. } => {
            let n = input.len() * units + units;
            (n, n)
        }
        LayerKind::BatchNorm { .. } => {
            let c = channels(input);
            (4 * c, 2 * c)
        }
        _ => (0, 0),
    }
}
