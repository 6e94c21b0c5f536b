//! Forward evaluation, reverse-mode gradients and the tangent (directional
//! derivative) pass used by the exact gradient penalty.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, LayerKind, NetworkConfig};
use super::layers::{self, ConvGeom};
use super::params::{init_params, layer_tensors, ParamStore, TensorRole};
use super::{ModelError, Shape, Tensor};

/// How dropout layers behave during a forward pass.
pub enum DropoutMode<'a> {
    /// Identity (evaluation).
    Off,
    /// Fresh Bernoulli masks drawn from the generator.
    Sample(&'a mut ChaCha8Rng),
    /// Reuse the masks recorded in an earlier trace of the same network.
    Replay(&'a Trace),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the stored moving statistics.
    Running,
    /// Normalize with statistics of the current batch.
    Batch,
}

pub struct ForwardMode<'a> {
    pub dropout: DropoutMode<'a>,
    pub norm: NormMode,
}

impl<'a> ForwardMode<'a> {
    pub fn eval() -> Self {
        ForwardMode {
            dropout: DropoutMode::Off,
            norm: NormMode::Running,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        ForwardMode {
            dropout: DropoutMode::Sample(rng),
            norm: NormMode::Batch,
        }
    }

    pub fn replay(trace: &'a Trace) -> Self {
        ForwardMode {
            dropout: DropoutMode::Replay(trace),
            norm: trace.norm_mode,
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    mean: Vec<f32>,
    var: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Everything a backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Tensor>,
    pub output: Tensor,
    masks: Vec<Option<Vec<f32>>>,
    norms: Vec<Option<NormCache>>,
    norm_mode: NormMode,
}

impl Trace {
    pub fn input(&self) -> &Tensor {
        &self.inputs[0]
    }

    fn layer_output(&self, l: usize) -> &Tensor {
        self.inputs.get(l + 1).unwrap_or(&self.output)
    }
}

/// Gradients aligned with [`ParamStore::tensors`]; non-trainable entries stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(
            store
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Tensor indices a layer owns, by role.
#[derive(Debug, Clone, Copy, Default)]
struct Slots {
    kernel: Option<usize>,
    bias: Option<usize>,
    gamma: Option<usize>,
    beta: Option<usize>,
    mean: Option<usize>,
    var: Option<usize>,
}

/// A configured network with its weights.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    shapes: Vec<Shape>,
    params: ParamStore,
    slots: Vec<Slots>,
}

impl Network {
    /// Validates the layer chain and initializes all weights from `seed`.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Network::from_parts(config, params)
    }

    /// Pairs a config with existing weights, checking names and shapes.
    pub fn from_parts(config: NetworkConfig, params: ParamStore) -> Result<Self, ModelError> {
        let shapes = config.infer_shapes()?;
        let mut slots = vec![Slots::default(); config.layers.len()];
        let mut input = config.input;
        let mut idx = 0;
        for (l, layer) in config.layers.iter().enumerate() {
            for (role, shape) in layer_tensors(&layer.kind, input, shapes[l]) {
                let t = params.tensors.get(idx).ok_or_else(|| ModelError::Weights {
                    reason: format!("missing {}/{}", layer.name, role.name()),
                })?;
                if t.layer != layer.name || t.role != role || t.shape != shape {
                    return Err(ModelError::Weights {
                        reason: format!(
                            "expected {}/{} {:?}, found {} {:?}",
                            layer.name,
                            role.name(),
                            shape,
                            t.name(),
                            t.shape
                        ),
                    });
                }
                if t.data.len() != shape.iter().product::<usize>() {
                    return Err(ModelError::Weights {
                        reason: format!("{} holds {} values", t.name(), t.data.len()),
                    });
                }
                let s = &mut slots[l];
                match role {
                    TensorRole::Kernel => s.kernel = Some(idx),
                    TensorRole::Bias => s.bias = Some(idx),
                    TensorRole::Gamma => s.gamma = Some(idx),
                    TensorRole::Beta => s.beta = Some(idx),
                    TensorRole::MovingMean => s.mean = Some(idx),
                    TensorRole::MovingVariance => s.var = Some(idx),
                }
                idx += 1;
            }
            input = shapes[l];
        }
        if idx != params.tensors.len() {
            return Err(ModelError::Weights {
                reason: format!("{} unexpected trailing tensors", params.tensors.len() - idx),
            });
        }
        Ok(Network {
            config,
            shapes,
            params,
            slots,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn input_shape(&self) -> Shape {
        self.config.input
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes.last().copied().unwrap_or(self.config.input)
    }

    /// Output shape of every layer, recomputed from an actual forward pass.
    pub fn activation_shapes(&self, trace: &Trace) -> Vec<Shape> {
        (0..self.config.layers.len())
            .map(|l| trace.layer_output(l).shape)
            .collect()
    }

    fn tensor(&self, idx: Option<usize>) -> &[f32] {
        &self.params.tensors[idx.expect("layer owns tensor")].data
    }

    fn layer_input_shape(&self, l: usize) -> Shape {
        if l == 0 {
            self.config.input
        } else {
            self.shapes[l - 1]
        }
    }

    fn conv_geom(&self, l: usize) -> ConvGeom {
        let (input, output) = (self.layer_input_shape(l), self.shapes[l]);
        let (Shape::Image(i), Shape::Image(o)) = (input, output) else {
            unreachable!("shape inference guarantees image shapes")
        };
        match &self.config.layers[l].kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom::new(i, o, *kernel, *stride, *padding),
            LayerKind::ConvTranspose2d {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom::new(o, i, *kernel, *stride, *padding),
            _ => unreachable!("not a convolution"),
        }
    }

    /// Scores or images for a batch, with dropout off and running statistics.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.forward(x, ForwardMode::eval())?.output)
    }

    pub fn forward(&self, x: &Tensor, mode: ForwardMode<'_>) -> Result<Trace, ModelError> {
        self.run(x, mode, None)
    }

    /// Pushes the direction `t` through the network linearized around the
    /// primal pass: biases dropped, rectifier and dropout masks taken from
    /// `primal`. For piecewise-linear networks the output is exactly the
    /// directional derivative `<grad_x D(x), t>` per sample.
    pub fn tangent(&self, primal: &Trace, t: &Tensor) -> Result<Trace, ModelError> {
        self.run(t, ForwardMode::replay(primal), Some(primal))
    }

    /// `D(x + delta) - D(x)` per sample, with `x` the input of `primal` and
    /// the primal's dropout masks and normalization mode. Propagates the
    /// difference itself through every layer, evaluating nonlinearities in
    /// f64, so a small `delta` does not drown in the rounding of two large
    /// outputs. Unlike [`Network::tangent`] it is exact for any layer, not a
    /// linearization.
    pub fn difference(&self, primal: &Trace, delta: &Tensor) -> Result<Tensor, ModelError> {
        if delta.shape != self.config.input || delta.batch != primal.inputs[0].batch {
            return Err(ModelError::InputShape {
                expected: self.config.input,
                actual: delta.shape,
            });
        }
        let batch = delta.batch;
        let mut d = delta.clone();
        for (l, layer) in self.config.layers.iter().enumerate() {
            let out_shape = self.shapes[l];
            let x = &primal.inputs[l];
            d = match &layer.kind {
                LayerKind::Conv2d { activation, .. }
                | LayerKind::ConvTranspose2d { activation, .. }
                | LayerKind::Dense { activation, .. } => {
                    let mut dz = self.affine(l, batch, &d, false);
                    if *activation == Activation::Tanh {
                        let z = self.affine(l, batch, x, true);
                        let lim = TANH_LIMIT as f64;
                        for (o, &z) in dz.data.iter_mut().zip(&z.data) {
                            let (a, b) = (z as f64, z as f64 + *o as f64);
                            *o = (b.tanh().clamp(-lim, lim) - a.tanh().clamp(-lim, lim)) as f32;
                        }
                    }
                    dz
                }
                LayerKind::BatchNorm { epsilon, .. } => {
                    let c = *out_shape.dims().last().expect("dims");
                    let gamma = self.tensor(self.slots[l].gamma);
                    let mut out = d.clone();
                    out.shape = out_shape;
                    if primal.norm_mode == NormMode::Running {
                        let var = self.tensor(self.slots[l].var);
                        for row in out.data.chunks_mut(c) {
                            for ch in 0..c {
                                let inv = 1.0 / (var[ch] as f64 + *epsilon as f64).sqrt();
                                row[ch] = (gamma[ch] as f64 * inv * row[ch] as f64) as f32;
                            }
                        }
                    } else {
                        batch_norm_difference(&x.data, &d.data, &mut out.data, gamma, c, *epsilon);
                    }
                    out
                }
                LayerKind::LeakyRelu { slope } => {
                    let s = *slope as f64;
                    let f = |v: f64| if v <= 0.0 { s * v } else { v };
                    let mut out = d.clone();
                    for (o, &a) in out.data.iter_mut().zip(&x.data) {
                        let a = a as f64;
                        *o = (f(a + *o as f64) - f(a)) as f32;
                    }
                    out
                }
                LayerKind::Dropout { .. } => {
                    let mut out = d.clone();
                    if let Some(m) = &primal.masks[l] {
                        for (o, k) in out.data.iter_mut().zip(m) {
                            *o *= k;
                        }
                    }
                    out
                }
                LayerKind::Flatten | LayerKind::Reshape { .. } => {
                    let mut out = d.clone();
                    out.shape = out_shape;
                    out
                }
            };
        }
        Ok(d)
    }

    /// Convolution, transposed convolution or dense product of layer `l`,
    /// before its activation.
    fn affine(&self, l: usize, batch: usize, x: &Tensor, with_bias: bool) -> Tensor {
        let slots = self.slots[l];
        let bias = with_bias.then(|| self.tensor(slots.bias));
        let mut out = Tensor::zeros(batch, self.shapes[l]);
        match &self.config.layers[l].kind {
            LayerKind::Conv2d { .. } => layers::conv_forward(
                &self.conv_geom(l),
                batch,
                &x.data,
                self.tensor(slots.kernel),
                bias,
                &mut out.data,
            ),
            LayerKind::ConvTranspose2d { .. } => layers::deconv_forward(
                &self.conv_geom(l),
                batch,
                &x.data,
                self.tensor(slots.kernel),
                bias,
                &mut out.data,
            ),
            LayerKind::Dense { units, .. } => layers::dense_forward(
                batch,
                x.shape.len(),
                *units,
                &x.data,
                self.tensor(slots.kernel),
                bias,
                &mut out.data,
            ),
            _ => unreachable!("layer {l} has no weights"),
        }
        out
    }

    fn run(
        &self,
        x: &Tensor,
        mut mode: ForwardMode<'_>,
        linear: Option<&Trace>,
    ) -> Result<Trace, ModelError> {
        if x.shape != self.config.input {
            return Err(ModelError::InputShape {
                expected: self.config.input,
                actual: x.shape,
            });
        }
        if x.batch == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let batch = x.batch;
        let n_layers = self.config.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut norms = Vec::with_capacity(n_layers);
        let mut current = x.clone();

        for (l, layer) in self.config.layers.iter().enumerate() {
            let out_shape = self.shapes[l];
            let slots = self.slots[l];
            let mut mask = None;
            let mut norm = None;
            let unsupported = |what: &str| ModelError::NotPiecewiseLinear {
                layer: layer.name.clone(),
                reason: what.to_string(),
            };
            let next = match &layer.kind {
                LayerKind::Conv2d { activation, .. }
                | LayerKind::ConvTranspose2d { activation, .. } => {
                    if linear.is_some() && *activation != Activation::Linear {
                        return Err(unsupported("tanh activation"));
                    }
                    let g = self.conv_geom(l);
                    let bias = linear.is_none().then(|| self.tensor(slots.bias));
                    let mut out = Tensor::zeros(batch, out_shape);
                    if matches!(layer.kind, LayerKind::Conv2d { .. }) {
                        layers::conv_forward(
                            &g,
                            batch,
                            &current.data,
                            self.tensor(slots.kernel),
                            bias,
                            &mut out.data,
                        );
                    } else {
                        layers::deconv_forward(
                            &g,
                            batch,
                            &current.data,
                            self.tensor(slots.kernel),
                            bias,
                            &mut out.data,
                        );
                    }
                    apply_activation(*activation, &mut out.data);
                    out
                }
                LayerKind::Dense { units, activation } => {
                    if linear.is_some() && *activation != Activation::Linear {
                        return Err(unsupported("tanh activation"));
                    }
                    let bias = linear.is_none().then(|| self.tensor(slots.bias));
                    let mut out = Tensor::zeros(batch, out_shape);
                    layers::dense_forward(
                        batch,
                        current.shape.len(),
                        *units,
                        &current.data,
                        self.tensor(slots.kernel),
                        bias,
                        &mut out.data,
                    );
                    apply_activation(*activation, &mut out.data);
                    out
                }
                LayerKind::BatchNorm { epsilon, .. } => {
                    let c = *out_shape.dims().last().expect("dims");
                    let cache = match (linear, mode.norm) {
                        (Some(primal), _) => {
                            let cache = primal.norms[l].clone().expect("primal batch norm cache");
                            if primal.norm_mode == NormMode::Batch {
                                return Err(unsupported("batch statistics"));
                            }
                            cache
                        }
                        (None, NormMode::Running) => {
                            let mean = self.tensor(slots.mean).to_vec();
                            let var = self.tensor(slots.var).to_vec();
                            let inv_std = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                            NormCache { mean, var, inv_std }
                        }
                        (None, NormMode::Batch) => batch_stats(&current.data, c, *epsilon),
                    };
                    let gamma = self.tensor(slots.gamma);
                    let beta = self.tensor(slots.beta);
                    let mut out = current.clone();
                    out.shape = out_shape;
                    for row in out.data.chunks_mut(c) {
                        for ch in 0..c {
                            row[ch] = if linear.is_some() {
                                gamma[ch] * cache.inv_std[ch] * row[ch]
                            } else {
                                gamma[ch] * (row[ch] - cache.mean[ch]) * cache.inv_std[ch]
                                    + beta[ch]
                            };
                        }
                    }
                    norm = Some(cache);
                    out
                }
                LayerKind::LeakyRelu { slope } => {
                    let mut out = current.clone();
                    let gate = linear.map(|p| &p.inputs[l].data).unwrap_or(&current.data);
                    for (o, &g) in out.data.iter_mut().zip(gate.iter()) {
                        if g <= 0.0 {
                            *o *= slope;
                        }
                    }
                    out
                }
                LayerKind::Dropout { rate } => {
                    let m = match &mut mode.dropout {
                        DropoutMode::Off => None,
                        DropoutMode::Replay(t) => t.masks[l].clone(),
                        DropoutMode::Sample(rng) => {
                            let keep = 1.0 / (1.0 - rate);
                            Some(
                                (0..current.data.len())
                                    .map(|_| {
                                        if rng.random::<f32>() < *rate {
                                            0.0
                                        } else {
                                            keep
                                        }
                                    })
                                    .collect(),
                            )
                        }
                    };
                    let mut out = current.clone();
                    if let Some(m) = &m {
                        for (o, k) in out.data.iter_mut().zip(m) {
                            *o *= k;
                        }
                    }
                    mask = m;
                    out
                }
                LayerKind::Flatten | LayerKind::Reshape { .. } => {
                    let mut out = current.clone();
                    out.shape = out_shape;
                    out
                }
            };
            inputs.push(std::mem::replace(&mut current, next));
            masks.push(mask);
            norms.push(norm);
        }
        Ok(Trace {
            inputs,
            output: current,
            masks,
            norms,
            norm_mode: mode.norm,
        })
    }

    /// Reverse pass from `d_out` (gradient of a scalar objective with respect
    /// to the trace output). Returns parameter gradients when requested and the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: &Tensor,
        want_params: bool,
    ) -> Result<(Option<Grads>, Tensor), ModelError> {
        self.reverse(trace, d_out, want_params, true, None)
            .map(|(g, dx)| (g, dx.expect("input gradient requested")))
    }

    /// Parameter gradients only; skips the input-gradient of the first layer.
    pub fn param_grads(&self, trace: &Trace, d_out: &Tensor) -> Result<Grads, ModelError> {
        self.reverse(trace, d_out, true, false, None)
            .map(|(g, _)| g.expect("parameter gradients requested"))
    }

    /// Parameter gradients of `<d_out, tangent output>` where the tangent
    /// pass was linearized around `primal`.
    pub fn tangent_param_grads(
        &self,
        primal: &Trace,
        tangent: &Trace,
        d_out: &Tensor,
    ) -> Result<Grads, ModelError> {
        self.reverse(tangent, d_out, true, false, Some(primal))
            .map(|(g, _)| g.expect("parameter gradients requested"))
    }

    fn reverse(
        &self,
        trace: &Trace,
        d_out: &Tensor,
        want_params: bool,
        want_input: bool,
        linear: Option<&Trace>,
    ) -> Result<(Option<Grads>, Option<Tensor>), ModelError> {
        if d_out.shape != trace.output.shape || d_out.batch != trace.output.batch {
            return Err(ModelError::InputShape {
                expected: trace.output.shape,
                actual: d_out.shape,
            });
        }
        let batch = d_out.batch;
        let mut grads = want_params.then(|| Grads::zeros_like(&self.params));
        let mut dy = d_out.clone();

        for l in (0..self.config.layers.len()).rev() {
            let layer = &self.config.layers[l];
            let x = &trace.inputs[l];
            let slots = self.slots[l];
            let need_dx = l > 0 || want_input;
            // Split the borrow: kernel/bias gradients for this layer only.
            let (mut dk, mut db) = (None, None);
            if let Some(g) = grads.as_mut() {
                let (lo, hi) = split_two(&mut g.0, slots.kernel, slots.bias);
                dk = lo;
                db = if linear.is_some() { None } else { hi };
            }
            let dx = match &layer.kind {
                LayerKind::Conv2d { activation, .. }
                | LayerKind::ConvTranspose2d { activation, .. } => {
                    activation_backward(*activation, &trace.layer_output(l).data, &mut dy.data);
                    let g = self.conv_geom(l);
                    let mut dx = need_dx.then(|| Tensor::zeros(batch, x.shape));
                    let kernel = self.tensor(slots.kernel);
                    let f = if matches!(layer.kind, LayerKind::Conv2d { .. }) {
                        layers::conv_backward
                    } else {
                        layers::deconv_backward
                    };
                    f(
                        &g,
                        batch,
                        &x.data,
                        kernel,
                        &dy.data,
                        dk,
                        db,
                        dx.as_mut().map(|t| t.data.as_mut_slice()),
                    );
                    dx
                }
                LayerKind::Dense { units, activation } => {
                    activation_backward(*activation, &trace.layer_output(l).data, &mut dy.data);
                    let mut dx = need_dx.then(|| Tensor::zeros(batch, x.shape));
                    layers::dense_backward(
                        batch,
                        x.shape.len(),
                        *units,
                        &x.data,
                        self.tensor(slots.kernel),
                        &dy.data,
                        dk,
                        db,
                        dx.as_mut().map(|t| t.data.as_mut_slice()),
                    );
                    dx
                }
                LayerKind::BatchNorm { .. } => {
                    let cache = trace.norms[l].as_ref().expect("batch norm cache");
                    let c = cache.mean.len();
                    let gamma = self.tensor(slots.gamma);
                    let xhat: Vec<f32> = if linear.is_some() {
                        x.data
                            .chunks(c)
                            .flat_map(|row| row.iter().zip(&cache.inv_std).map(|(v, s)| v * s))
                            .collect()
                    } else {
                        x.data
                            .chunks(c)
                            .flat_map(|row| {
                                row.iter()
                                    .enumerate()
                                    .map(|(ch, v)| (v - cache.mean[ch]) * cache.inv_std[ch])
                            })
                            .collect()
                    };
                    let mut sum_dy = vec![0.0f64; c];
                    let mut sum_dy_xhat = vec![0.0f64; c];
                    for (drow, xrow) in dy.data.chunks(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            sum_dy[ch] += drow[ch] as f64;
                            sum_dy_xhat[ch] += (drow[ch] * xrow[ch]) as f64;
                        }
                    }
                    if let Some(g) = grads.as_mut() {
                        let gi = slots.gamma.expect("gamma");
                        for ch in 0..c {
                            g.0[gi][ch] += sum_dy_xhat[ch] as f32;
                        }
                        if linear.is_none() {
                            let bi = slots.beta.expect("beta");
                            for ch in 0..c {
                                g.0[bi][ch] += sum_dy[ch] as f32;
                            }
                        }
                    }
                    let batch_stats = linear.is_none() && trace.norm_mode == NormMode::Batch;
                    let m = (x.data.len() / c) as f32;
                    let mut dx = dy.clone();
                    dx.shape = x.shape;
                    for (drow, xrow) in dx.data.chunks_mut(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let scale = gamma[ch] * cache.inv_std[ch];
                            drow[ch] = if batch_stats {
                                scale
                                    * (drow[ch]
                                        - sum_dy[ch] as f32 / m
                                        - xrow[ch] * sum_dy_xhat[ch] as f32 / m)
                            } else {
                                scale * drow[ch]
                            };
                        }
                    }
                    Some(dx)
                }
                LayerKind::LeakyRelu { slope } => {
                    let gate = linear.map(|p| &p.inputs[l].data).unwrap_or(&x.data);
                    let mut dx = dy.clone();
                    for (d, &g) in dx.data.iter_mut().zip(gate.iter()) {
                        if g <= 0.0 {
                            *d *= slope;
                        }
                    }
                    Some(dx)
                }
                LayerKind::Dropout { .. } => {
                    let mut dx = dy.clone();
                    if let Some(m) = &trace.masks[l] {
                        for (d, k) in dx.data.iter_mut().zip(m) {
                            *d *= k;
                        }
                    }
                    Some(dx)
                }
                LayerKind::Flatten | LayerKind::Reshape { .. } => {
                    let mut dx = dy.clone();
                    dx.shape = x.shape;
                    Some(dx)
                }
            };
            match dx {
                Some(dx) => dy = dx,
                None => {
                    debug_assert_eq!(l, 0);
                    return Ok((grads, None));
                }
            }
        }
        Ok((grads, want_input.then_some(dy)))
    }

    /// Folds the batch statistics recorded in `trace` into the moving
    /// averages: `moving = momentum * moving + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, trace: &Trace) {
        if trace.norm_mode != NormMode::Batch {
            return;
        }
        for (l, layer) in self.config.layers.iter().enumerate() {
            let LayerKind::BatchNorm { momentum, .. } = layer.kind else {
                continue;
            };
            let Some(cache) = &trace.norms[l] else {
                continue;
            };
            let slots = self.slots[l];
            let mean = &mut self.params.tensors[slots.mean.expect("moving mean")].data;
            for (m, b) in mean.iter_mut().zip(&cache.mean) {
                *m = momentum * *m + (1.0 - momentum) * b;
            }
            let var = &mut self.params.tensors[slots.var.expect("moving variance")].data;
            for (v, b) in var.iter_mut().zip(&cache.var) {
                *v = momentum * *v + (1.0 - momentum) * b;
            }
        }
    }

    /// True when every layer is linear or piecewise linear in its input, so
    /// that [`Network::tangent`] yields exact directional derivatives.
    pub fn is_piecewise_linear(&self) -> bool {
        self.config.layers.iter().all(|l| match &l.kind {
            LayerKind::Conv2d { activation, .. }
            | LayerKind::ConvTranspose2d { activation, .. }
            | LayerKind::Dense { activation, .. } => *activation == Activation::Linear,
            LayerKind::BatchNorm { .. } => false,
            _ => true,
        })
    }
}

fn split_two(
    v: &mut [Vec<f32>],
    a: Option<usize>,
    b: Option<usize>,
) -> (Option<&mut [f32]>, Option<&mut [f32]>) {
    match (a, b) {
        (Some(i), Some(j)) => {
            debug_assert!(i < j);
            let (lo, hi) = v.split_at_mut(j);
            (Some(lo[i].as_mut_slice()), Some(hi[0].as_mut_slice()))
        }
        (Some(i), None) => (Some(v[i].as_mut_slice()), None),
        (None, Some(j)) => (None, Some(v[j].as_mut_slice())),
        (None, None) => (None, None),
    }
}

fn batch_stats(x: &[f32], c: usize, epsilon: f32) -> NormCache {
    let m = (x.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for row in x.chunks(c) {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += *v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0f64; c];
    for row in x.chunks(c) {
        for ch in 0..c {
            let d = row[ch] as f64 - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    NormCache {
        mean: mean.iter().map(|&v| v as f32).collect(),
        inv_std: var
            .iter()
            .map(|&v| 1.0 / ((v as f32) + epsilon).sqrt())
            .collect(),
        var: var.iter().map(|&v| v as f32).collect(),
    }
}

/// Largest f32 below one; `tanh` rounds to exactly ±1 for large inputs.
/// Change of a batch-normalized output when the input moves from `x` to
/// `x + d`, both normalized with their own batch statistics. Beta cancels.
fn batch_norm_difference(
    x: &[f32],
    d: &[f32],
    out: &mut [f32],
    gamma: &[f32],
    c: usize,
    epsilon: f32,
) {
    let m = (x.len() / c) as f64;
    let (mut mx, mut md) = (vec![0.0f64; c], vec![0.0f64; c]);
    for (rx, rd) in x.chunks(c).zip(d.chunks(c)) {
        for ch in 0..c {
            mx[ch] += rx[ch] as f64;
            md[ch] += rd[ch] as f64;
        }
    }
    mx.iter_mut().chain(md.iter_mut()).for_each(|v| *v /= m);
    let (mut vx, mut vy) = (vec![0.0f64; c], vec![0.0f64; c]);
    for (rx, rd) in x.chunks(c).zip(d.chunks(c)) {
        for ch in 0..c {
            let cx = rx[ch] as f64 - mx[ch];
            let cy = cx + (rd[ch] as f64 - md[ch]);
            vx[ch] += cx * cx;
            vy[ch] += cy * cy;
        }
    }
    let eps = epsilon as f64;
    let inv: Vec<(f64, f64)> = (0..c)
        .map(|ch| {
            (
                1.0 / (vx[ch] / m + eps).sqrt(),
                1.0 / (vy[ch] / m + eps).sqrt(),
            )
        })
        .collect();
    for ((ro, rx), rd) in out.chunks_mut(c).zip(x.chunks(c)).zip(d.chunks(c)) {
        for ch in 0..c {
            let cx = rx[ch] as f64 - mx[ch];
            let dc = rd[ch] as f64 - md[ch];
            let (ix, iy) = inv[ch];
            ro[ch] = (gamma[ch] as f64 * (dc * iy + cx * (iy - ix))) as f32;
        }
    }
}

const TANH_LIMIT: f32 = 1.0 - f32::EPSILON / 2.0;

fn apply_activation(activation: Activation, data: &mut [f32]) {
    if activation == Activation::Tanh {
        data.iter_mut()
            .for_each(|v| *v = v.tanh().clamp(-TANH_LIMIT, TANH_LIMIT));
    }
}

fn activation_backward(activation: Activation, output: &[f32], dy: &mut [f32]) {
    if activation == Activation::Tanh {
        for (d, y) in dy.iter_mut().zip(output) {
            *d *= 1.0 - y * y;
        }
    }
}
