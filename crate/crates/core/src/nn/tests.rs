use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_critic() -> NetworkConfig {
    NetworkConfig::new(Role::Critic, Shape::image(8, 8, 1))
        .push(
            "conv",
            LayerKind::Conv2d {
                filters: 3,
                kernel: [4, 4],
                stride: [2, 2],
                padding: Padding::Same,
                activation: Activation::Linear,
            },
        )
        .push("lrelu", LayerKind::LeakyRelu { slope: 0.2 })
        .push("drop", LayerKind::Dropout { rate: 0.3 })
        .push("flat", LayerKind::Flatten)
        .push(
            "head",
            LayerKind::Dense {
                units: 1,
                activation: Activation::Linear,
            },
        )
}

fn small_generator() -> NetworkConfig {
    NetworkConfig::new(Role::Generator, Shape::vector(2))
        .push(
            "dense",
            LayerKind::Dense {
                units: 2 * 2 * 3,
                activation: Activation::Linear,
            },
        )
        .push("reshape", LayerKind::Reshape { target: [2, 2, 3] })
        .push(
            "deconv",
            LayerKind::ConvTranspose2d {
                filters: 2,
                kernel: [4, 4],
                stride: [2, 2],
                padding: Padding::Same,
                activation: Activation::Linear,
            },
        )
        .push(
            "bn",
            LayerKind::BatchNorm {
                momentum: 0.99,
                epsilon: 1e-3,
            },
        )
        .push("lrelu", LayerKind::LeakyRelu { slope: 0.2 })
        .push(
            "out",
            LayerKind::ConvTranspose2d {
                filters: 1,
                kernel: [4, 4],
                stride: [2, 2],
                padding: Padding::Same,
                activation: Activation::Tanh,
            },
        )
}

fn random_tensor(rng: &mut ChaCha8Rng, batch: usize, shape: Shape, scale: f32) -> Tensor {
    let data = (0..batch * shape.len())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::from_vec(batch, shape, data)
}

/// Scales up the initial weights so finite differences are well above f32 noise.
fn spread(net: &mut Network, rng: &mut ChaCha8Rng) {
    for t in &mut net.params_mut().tensors {
        match t.role {
            TensorRole::Kernel | TensorRole::Bias | TensorRole::Beta => t
                .data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5)),
            TensorRole::Gamma => t
                .data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5)),
            _ => {}
        }
    }
}

fn weighted_sum(out: &Tensor, w: &[f32]) -> f64 {
    out.data
        .iter()
        .zip(w)
        .map(|(a, b)| (*a as f64) * (*b as f64))
        .sum()
}

fn close(analytic: f64, numeric: f64, tol: f64) -> bool {
    (analytic - numeric).abs() <= tol * (1.0 + analytic.abs().max(numeric.abs()))
}

#[test]
fn equal_seeds_give_equal_weights() {
    let cfg = NetworkConfig::critic(Profile::Reduced, BlockOptions::default());
    let a = Network::build(cfg.clone(), 11).unwrap();
    let b = Network::build(cfg.clone(), 11).unwrap();
    let c = Network::build(cfg, 12).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn initial_kernels_are_truncated() {
    let cfg = NetworkConfig::generator(Profile::Reduced, BlockOptions::default());
    let net = Network::build(cfg, 5).unwrap();
    let kernels: Vec<f32> = net
        .params()
        .tensors
        .iter()
        .filter(|t| t.role == TensorRole::Kernel)
        .flat_map(|t| t.data.iter().copied())
        .collect();
    assert!(kernels.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
    let mean = kernels.iter().sum::<f32>() / kernels.len() as f32;
    let sd =
        (kernels.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / kernels.len() as f32).sqrt();
    // A normal truncated at two deviations keeps about 88% of its spread.
    assert!((sd / INIT_STD - 0.88).abs() < 0.03, "sd {sd}");
    for t in &net.params().tensors {
        let want = match t.role {
            TensorRole::Bias | TensorRole::Beta | TensorRole::MovingMean => Some(0.0),
            TensorRole::Gamma | TensorRole::MovingVariance => Some(1.0),
            TensorRole::Kernel => None,
        };
        if let Some(w) = want {
            assert!(t.data.iter().all(|&v| v == w), "{}", t.name());
        }
    }
}

#[test]
fn zero_weights_give_zero_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut critic = Network::build(
        NetworkConfig::critic(Profile::Reduced, BlockOptions::default()),
        1,
    )
    .unwrap();
    critic.params_mut().zero_all();
    let x = random_tensor(&mut rng, 3, critic.input_shape(), 1.0);
    let s = critic_forward(&critic, &x, Mode::Eval, &mut rng).unwrap();
    assert_eq!(s, vec![0.0; 3]);

    let mut gen = Network::build(
        NetworkConfig::generator(Profile::Reduced, BlockOptions::default()),
        1,
    )
    .unwrap();
    // Zero everything except the running variances, which must stay positive.
    for t in &mut gen.params_mut().tensors {
        if t.role != TensorRole::MovingVariance {
            t.data.fill(0.0);
        }
    }
    let out = generator_forward(&gen, &[[3.0, -7.0], [0.0, 0.0]], Mode::Eval, &mut rng).unwrap();
    assert!(out.data.iter().all(|&v| v == 0.0));
}

#[test]
fn generator_outputs_stay_strictly_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gen = Network::build(
        NetworkConfig::generator(Profile::Reduced, BlockOptions::default()),
        2,
    )
    .unwrap();
    for t in &mut gen.params_mut().tensors {
        if t.role == TensorRole::Kernel {
            t.data.iter_mut().for_each(|v| *v *= 500.0);
        }
    }
    let out = generator_forward(&gen, &[[10.0, 10.0], [-10.0, 3.0]], Mode::Eval, &mut rng).unwrap();
    assert!(out.data.iter().any(|v| v.abs() > 0.999));
    assert!(out.data.iter().all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn eval_mode_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let critic = Network::build(
        NetworkConfig::critic(Profile::Reduced, BlockOptions::default()),
        3,
    )
    .unwrap();
    let one = random_tensor(&mut rng, 1, critic.input_shape(), 1.0);
    let mut two = one.clone();
    two.batch = 2;
    two.data.extend_from_slice(&one.data);
    let s = critic_forward(&critic, &two, Mode::Eval, &mut rng).unwrap();
    assert_eq!(s[0].to_bits(), s[1].to_bits());

    let gen = Network::build(
        NetworkConfig::generator(Profile::Reduced, BlockOptions::default()),
        3,
    )
    .unwrap();
    let a = decode(&gen, [0.25, -1.5]).unwrap();
    let b = decode(&gen, [0.25, -1.5]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shape_mismatches_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let critic = Network::build(
        NetworkConfig::critic(Profile::Reduced, BlockOptions::default()),
        4,
    )
    .unwrap();
    let wrong = random_tensor(&mut rng, 1, Shape::image(16, 64, 1), 1.0);
    assert!(matches!(
        critic_forward(&critic, &wrong, Mode::Eval, &mut rng),
        Err(ModelError::InputShape { .. })
    ));
    let gen = Network::build(
        NetworkConfig::generator(Profile::Reduced, BlockOptions::default()),
        4,
    )
    .unwrap();
    assert!(matches!(
        latent_batch([[1.0f32, 2.0, 3.0].as_slice()], gen.input_shape()),
        Err(ModelError::LatentDim {
            expected: 2,
            actual: 3
        })
    ));
    let img = crate::GrayImage::filled(64, 16, 0);
    assert!(matches!(
        images_to_tensor(&[img], critic.input_shape()),
        Err(ModelError::ImageSize { .. })
    ));
}

#[test]
fn from_parts_rejects_foreign_weights() {
    let critic = Network::build(small_critic(), 1).unwrap();
    let mut params = critic.params().clone();
    params.tensors[0].shape = vec![4, 4, 1, 4];
    assert!(matches!(
        Network::from_parts(small_critic(), params),
        Err(ModelError::Weights { .. })
    ));
    let mut params = critic.params().clone();
    params.tensors.pop();
    assert!(Network::from_parts(small_critic(), params).is_err());
}

#[test]
fn critic_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Network::build(small_critic(), 5).unwrap();
    spread(&mut net, &mut rng);
    let x = random_tensor(&mut rng, 3, net.input_shape(), 1.0);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(6);
    let trace = net.forward(&x, ForwardMode::train(&mut mask_rng)).unwrap();
    let w: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dout = Tensor::from_vec(3, trace.output.shape, w.clone());
    let (grads, dx) = net.backward(&trace, &dout, true).unwrap();
    let grads = grads.unwrap();

    let h = 1e-3f32;
    let objective = |n: &Network, x: &Tensor| {
        weighted_sum(
            &n.forward(x, ForwardMode::replay(&trace)).unwrap().output,
            &w,
        )
    };
    for (ti, t) in net.params().tensors.iter().enumerate() {
        for i in (0..t.data.len()).step_by(5) {
            let mut plus = net.clone();
            plus.params_mut().tensors[ti].data[i] += h;
            let mut minus = net.clone();
            minus.params_mut().tensors[ti].data[i] -= h;
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h as f64);
            assert!(
                close(grads.0[ti][i] as f64, fd, 2e-2),
                "{} [{i}]: {} vs {fd}",
                t.name(),
                grads.0[ti][i]
            );
        }
    }
    for i in (0..x.data.len()).step_by(7) {
        let mut plus = x.clone();
        plus.data[i] += h;
        let mut minus = x.clone();
        minus.data[i] -= h;
        let fd = (objective(&net, &plus) - objective(&net, &minus)) / (2.0 * h as f64);
        assert!(
            close(dx.data[i] as f64, fd, 2e-2),
            "dx[{i}]: {} vs {fd}",
            dx.data[i]
        );
    }
}

#[test]
fn generator_backward_matches_finite_differences_with_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Network::build(small_generator(), 7).unwrap();
    spread(&mut net, &mut rng);
    let z = random_tensor(&mut rng, 4, net.input_shape(), 2.0);
    let trace = net
        .forward(
            &z,
            ForwardMode {
                dropout: DropoutMode::Off,
                norm: NormMode::Batch,
            },
        )
        .unwrap();
    let w: Vec<f32> = (0..trace.output.data.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let dout = Tensor::from_vec(4, trace.output.shape, w.clone());
    let (grads, dz) = net.backward(&trace, &dout, true).unwrap();
    let grads = grads.unwrap();

    let h = 1e-3f32;
    let objective = |n: &Network, z: &Tensor| {
        weighted_sum(
            &n.forward(
                z,
                ForwardMode {
                    dropout: DropoutMode::Off,
                    norm: NormMode::Batch,
                },
            )
            .unwrap()
            .output,
            &w,
        )
    };
    for (ti, t) in net.params().tensors.iter().enumerate() {
        if !t.trainable() {
            continue;
        }
        for i in (0..t.data.len()).step_by(3) {
            let mut plus = net.clone();
            plus.params_mut().tensors[ti].data[i] += h;
            let mut minus = net.clone();
            minus.params_mut().tensors[ti].data[i] -= h;
            let fd = (objective(&plus, &z) - objective(&minus, &z)) / (2.0 * h as f64);
            assert!(
                close(grads.0[ti][i] as f64, fd, 2e-2),
                "{} [{i}]: {} vs {fd}",
                t.name(),
                grads.0[ti][i]
            );
        }
    }
    for i in 0..z.data.len() {
        let mut plus = z.clone();
        plus.data[i] += h;
        let mut minus = z.clone();
        minus.data[i] -= h;
        let fd = (objective(&net, &plus) - objective(&net, &minus)) / (2.0 * h as f64);
        assert!(
            close(dz.data[i] as f64, fd, 2e-2),
            "dz[{i}]: {} vs {fd}",
            dz.data[i]
        );
    }
}

#[test]
fn running_statistics_follow_momentum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = Network::build(small_generator(), 8).unwrap();
    let z = random_tensor(&mut rng, 4, net.input_shape(), 2.0);
    let before = net
        .params()
        .get("bn", TensorRole::MovingVariance)
        .unwrap()
        .data
        .clone();
    let trace = net
        .forward(
            &z,
            ForwardMode {
                dropout: DropoutMode::Off,
                norm: NormMode::Batch,
            },
        )
        .unwrap();
    net.update_running_stats(&trace);
    let after = &net
        .params()
        .get("bn", TensorRole::MovingVariance)
        .unwrap()
        .data;
    // Recompute the batch variance of the normalized layer input directly.
    let bn_in = &trace_input(&net, &z, "bn");
    for c in 0..before.len() {
        let vals: Vec<f64> = bn_in.chunks(before.len()).map(|r| r[c] as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let want = 0.99 * before[c] as f64 + 0.01 * var;
        assert!((after[c] as f64 - want).abs() < 1e-5);
    }
}

/// Input of the named layer, recomputed by truncating the network.
fn trace_input(net: &Network, z: &Tensor, layer: &str) -> Vec<f32> {
    let cut = net
        .config()
        .layers
        .iter()
        .position(|l| l.name == layer)
        .unwrap();
    let mut cfg = net.config().clone();
    cfg.layers.truncate(cut);
    let keep: Vec<_> = cfg.layers.iter().map(|l| l.name.clone()).collect();
    let params = ParamStore {
        tensors: net
            .params()
            .tensors
            .iter()
            .filter(|t| keep.contains(&t.layer))
            .cloned()
            .collect(),
    };
    Network::from_parts(cfg, params)
        .unwrap()
        .predict(z)
        .unwrap()
        .data
}

#[test]
fn tangent_pass_is_the_directional_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Network::build(small_critic(), 9).unwrap();
    spread(&mut net, &mut rng);
    let x = random_tensor(&mut rng, 2, net.input_shape(), 1.0);
    let u = random_tensor(&mut rng, 2, net.input_shape(), 1.0);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(10);
    let primal = net.forward(&x, ForwardMode::train(&mut mask_rng)).unwrap();
    let ones = Tensor::from_vec(2, primal.output.shape, vec![1.0; 2]);
    let (_, g) = net.backward(&primal, &ones, false).unwrap();
    let tangent = net.tangent(&primal, &u).unwrap();
    for s in 0..2 {
        let dot: f64 = g
            .sample(s)
            .iter()
            .zip(u.sample(s))
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        assert!(
            (tangent.output.data[s] as f64 - dot).abs() < 1e-4,
            "{} vs {dot}",
            tangent.output.data[s]
        );
    }
}

#[test]
fn tangent_parameter_gradients_differentiate_the_input_gradient() {
    // d/dθ <∇x D(x; θ), u> with u held fixed.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = Network::build(small_critic(), 11).unwrap();
    spread(&mut net, &mut rng);
    let x = random_tensor(&mut rng, 2, net.input_shape(), 1.0);
    let u = random_tensor(&mut rng, 2, net.input_shape(), 1.0);
    let c = [0.7f32, -1.3];
    let mut mask_rng = ChaCha8Rng::seed_from_u64(12);
    let primal = net.forward(&x, ForwardMode::train(&mut mask_rng)).unwrap();
    let tangent = net.tangent(&primal, &u).unwrap();
    let dout = Tensor::from_vec(2, tangent.output.shape, c.to_vec());
    let grads = net.tangent_param_grads(&primal, &tangent, &dout).unwrap();

    let objective = |n: &Network| {
        let p = n.forward(&x, ForwardMode::replay(&primal)).unwrap();
        let ones = Tensor::from_vec(2, p.output.shape, vec![1.0; 2]);
        let (_, g) = n.backward(&p, &ones, false).unwrap();
        (0..2)
            .map(|s| {
                c[s] as f64
                    * g.sample(s)
                        .iter()
                        .zip(u.sample(s))
                        .map(|(a, b)| (*a as f64) * (*b as f64))
                        .sum::<f64>()
            })
            .sum::<f64>()
    };
    let h = 1e-3f32;
    for (ti, t) in net.params().tensors.iter().enumerate() {
        for i in (0..t.data.len()).step_by(4) {
            let mut plus = net.clone();
            plus.params_mut().tensors[ti].data[i] += h;
            let mut minus = net.clone();
            minus.params_mut().tensors[ti].data[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h as f64);
            assert!(
                close(grads.0[ti][i] as f64, fd, 2e-2),
                "{} [{i}]: {} vs {fd}",
                t.name(),
                grads.0[ti][i]
            );
        }
    }
}

#[test]
fn tangent_pass_refuses_smooth_layers() {
    let net = Network::build(small_generator(), 1).unwrap();
    assert!(!net.is_piecewise_linear());
    let z = Tensor::from_vec(1, net.input_shape(), vec![0.1, 0.2]);
    let primal = net.forward(&z, ForwardMode::eval()).unwrap();
    assert!(matches!(
        net.tangent(&primal, &z),
        Err(ModelError::NotPiecewiseLinear { .. })
    ));
    assert!(Network::build(small_critic(), 1)
        .unwrap()
        .is_piecewise_linear());
}

#[test]
fn dropout_masks_are_inverted_and_replayable() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = NetworkConfig::new(Role::Critic, Shape::vector(4000))
        .push("d", LayerKind::Dropout { rate: 0.3 });
    let net = Network::build(cfg, 0).unwrap();
    let x = Tensor::from_vec(1, Shape::vector(4000), vec![1.0; 4000]);
    let t = net.forward(&x, ForwardMode::train(&mut rng)).unwrap();
    let dropped = t.output.data.iter().filter(|&&v| v == 0.0).count();
    assert!(t
        .output
        .data
        .iter()
        .all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-6));
    assert!((dropped as f64 / 4000.0 - 0.3).abs() < 0.03);
    let again = net.forward(&x, ForwardMode::replay(&t)).unwrap();
    assert_eq!(again.output, t.output);
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn difference_matches_two_forward_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for config in [small_critic(), small_generator()] {
        let mut net = Network::build(config, 21).unwrap();
        spread(&mut net, &mut rng);
        let x = random_tensor(&mut rng, 3, net.input_shape(), 1.0);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(22);
        let primal = net.forward(&x, ForwardMode::train(&mut mask_rng)).unwrap();
        for scale in [1e-3f32, 0.1] {
            let delta = random_tensor(&mut rng, 3, net.input_shape(), scale);
            let mut moved = x.clone();
            moved
                .data
                .iter_mut()
                .zip(&delta.data)
                .for_each(|(a, d)| *a += d);
            let after = net
                .forward(&moved, ForwardMode::replay(&primal))
                .unwrap()
                .output;
            let diff = net.difference(&primal, &delta).unwrap();
            assert_eq!(diff.data.len(), after.data.len());
            let peak = primal
                .output
                .data
                .iter()
                .fold(0f64, |m, v| m.max(v.abs() as f64));
            for ((d, a), p) in diff.data.iter().zip(&after.data).zip(&primal.output.data) {
                let direct = *a as f64 - *p as f64;
                assert!(
                    (*d as f64 - direct).abs() <= 1e-5 * (1.0 + peak),
                    "{d} vs {direct} at scale {scale}"
                );
            }
        }
    }
}
