//! Small reverse-mode neural-network kernel: conv1d, dense, ReLU and
//! flatten layers over `f64` tensors, Adam with frozen blocks, and the
//! Gaussian latent operations a VAE needs.

mod layers;
mod network;
mod optim;
mod tensor;
mod vae_ops;

pub use layers::{Conv1d, Dense, Layer, LayerSpec};
pub use network::{Gradients, Network, Tape};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
pub use vae_ops::{kl_standard_normal, kl_standard_normal_grad, mse, reparameterize, reparameterize_backward};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-300)
    }

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Loss `sum(out * probe)` so the output gradient is `probe`.
    fn probe_loss(net: &Network, x: &Tensor, probe: &Tensor) -> f64 {
        net.predict(x).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    fn check_network(specs: &[LayerSpec], in_shape: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(specs, &mut rng).unwrap();
        let x = rand_tensor(in_shape, &mut rng);
        let (y, tape) = net.forward(&x).unwrap();
        let probe = rand_tensor(y.shape(), &mut rng);
        let grads = net.backward(&tape, &probe).unwrap();
        let eps = 1e-5;

        let mut num_in = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            num_in[i] = (probe_loss(&net, &xp, &probe) - probe_loss(&net, &xm, &probe)) / (2.0 * eps);
        }
        let e = rel_err(grads.input.data(), &num_in);
        assert!(e < 1e-4, "input grad rel err {e} for {specs:?}");

        let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|t| t.data().to_vec()).collect();
        for (bi, an) in analytic.iter().enumerate() {
            let mut num = vec![0.0; an.len()];
            for j in 0..an.len() {
                net.params_mut()[bi].data_mut()[j] += eps;
                let lp = probe_loss(&net, &x, &probe);
                net.params_mut()[bi].data_mut()[j] -= 2.0 * eps;
                let lm = probe_loss(&net, &x, &probe);
                net.params_mut()[bi].data_mut()[j] += eps;
                num[j] = (lp - lm) / (2.0 * eps);
            }
            let e = rel_err(an, &num);
            assert!(e < 1e-4, "param block {bi} rel err {e} for {specs:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_layer_kind() {
        let conv = LayerSpec::Conv1d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
        };
        for seed in 0..5 {
            check_network(&[conv.clone()], &[2, 2, 9], seed);
            check_network(&[LayerSpec::Dense { inputs: 5, outputs: 4 }], &[3, 5], seed);
            check_network(
                &[LayerSpec::Dense { inputs: 5, outputs: 6 }, LayerSpec::Relu],
                &[2, 5],
                seed,
            );
            check_network(&[conv.clone(), LayerSpec::Relu, LayerSpec::Flatten], &[2, 2, 9], seed);
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let net = Network::from_layers(vec![Layer::Dense(Dense {
            weight: w,
            bias: Tensor::zeros(&[3]),
        })]);
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn unit_kernel_conv_is_identity_per_channel() {
        let mut w = Tensor::zeros(&[2, 2, 1]);
        w.data_mut()[0] = 1.0; // out 0 <- in 0
        w.data_mut()[3] = 1.0; // out 1 <- in 1
        let net = Network::from_layers(vec![Layer::Conv1d(Conv1d {
            weight: w,
            bias: Tensor::zeros(&[2]),
            stride: 1,
        })]);
        let x = Tensor::new(&[1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, -2.0, -3.0, -4.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    /// dense(2->2) -> relu -> dense(2->1), evaluated by hand:
    /// h = relu([1*1 + 2*-1 + 0.5, 0.5*1 + 1*2 - 1]) = relu([-0.5, 1.5]) = [0, 1.5]
    /// y = 2*0 + -3*1.5 + 0.25 = -4.25
    #[test]
    fn two_layer_net_matches_hand_computation() {
        let net = Network::from_layers(vec![
            Layer::Dense(Dense {
                weight: Tensor::new(&[2, 2], vec![1.0, -1.0, 0.5, 1.0]).unwrap(),
                bias: Tensor::new(&[2], vec![0.5, -1.0]).unwrap(),
            }),
            Layer::Relu,
            Layer::Dense(Dense {
                weight: Tensor::new(&[1, 2], vec![2.0, -3.0]).unwrap(),
                bias: Tensor::new(&[1], vec![0.25]).unwrap(),
            }),
        ]);
        let x = Tensor::row(vec![1.0, 2.0]);
        let (y, tape) = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[-4.25]);
        let g = net.backward(&tape, &Tensor::row(vec![1.0])).unwrap();
        // dy/dx = W2 * diag([0, 1]) * W1 = [-3*0.5, -3*1]
        assert_eq!(g.input.data(), &[-1.5, -3.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::new(
            &[LayerSpec::Dense { inputs: 3, outputs: 4 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 4, outputs: 2 }],
            &mut rng,
        )
        .unwrap();
        let (y, tape) = net.forward(&rand_tensor(&[2, 3], &mut rng)).unwrap();
        let g = net.backward(&tape, &Tensor::zeros_like(&y)).unwrap();
        assert!(g.flat().iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn quadratic_head_gradient_is_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(&[LayerSpec::Dense { inputs: 3, outputs: 3 }], &mut rng).unwrap();
        let x = rand_tensor(&[1, 3], &mut rng);
        let (y, tape) = net.forward(&x).unwrap();
        // d(|y|^2 / 2)/dy = y; bias gradient equals the output gradient.
        let g = net.backward(&tape, &y).unwrap();
        assert_eq!(g.layers[0][1].data(), y.data());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(
            &[LayerSpec::Dense { inputs: 3, outputs: 4 }, LayerSpec::Dense { inputs: 5, outputs: 1 }],
            &mut rng,
        )
        .unwrap();
        let err = net.forward(&Tensor::row(vec![0.0; 3])).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::new(&[LayerSpec::Dense { inputs: 2, outputs: 2 }], &mut rng).unwrap();
        let (y, tape) = net.forward(&Tensor::row(vec![1.0, 1.0])).unwrap();
        net.params_mut()[0].data_mut()[0] += 1.0;
        assert!(matches!(net.backward(&tape, &y), Err(Error::StaleTape { .. })));
    }

    #[test]
    fn reparameterize_cases() {
        let mu = Tensor::row(vec![0.5, -1.0]);
        let lv = Tensor::row(vec![0.3, -0.7]);
        let z = reparameterize(&mu, &lv, &Tensor::row(vec![0.0, 0.0])).unwrap();
        assert_eq!(z, mu);
        let n = Tensor::row(vec![0.2, -1.3]);
        let z = reparameterize(&mu, &Tensor::row(vec![0.0, 0.0]), &n).unwrap();
        assert_eq!(z.data(), &[0.7, -2.3]);
    }

    #[test]
    fn reparameterize_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mu = rand_tensor(&[2, 3], &mut rng);
            let lv = rand_tensor(&[2, 3], &mut rng);
            let noise = rand_tensor(&[2, 3], &mut rng);
            let probe = rand_tensor(&[2, 3], &mut rng);
            let f = |mu: &Tensor, lv: &Tensor| -> f64 {
                let z = reparameterize(mu, lv, &noise).unwrap();
                z.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let (gmu, glv) = reparameterize_backward(&probe, &lv, &noise).unwrap();
            let eps = 1e-6;
            let mut nmu = vec![0.0; 6];
            let mut nlv = vec![0.0; 6];
            for i in 0..6 {
                let (mut a, mut b) = (mu.clone(), mu.clone());
                a.data_mut()[i] += eps;
                b.data_mut()[i] -= eps;
                nmu[i] = (f(&a, &lv) - f(&b, &lv)) / (2.0 * eps);
                let (mut a, mut b) = (lv.clone(), lv.clone());
                a.data_mut()[i] += eps;
                b.data_mut()[i] -= eps;
                nlv[i] = (f(&mu, &a) - f(&mu, &b)) / (2.0 * eps);
            }
            assert!(rel_err(gmu.data(), &nmu) < 1e-6);
            assert!(rel_err(glv.data(), &nlv) < 1e-6);
        }
    }

    #[test]
    fn kl_closed_form_values() {
        let z = Tensor::row(vec![0.0, 0.0]);
        assert_eq!(kl_standard_normal(&z, &z).unwrap(), 0.0);
        let kl = kl_standard_normal(&Tensor::row(vec![1.0]), &Tensor::row(vec![0.0])).unwrap();
        assert_eq!(kl, 0.5);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mu = rand_tensor(&[1, 4], &mut rng);
            let lv = rand_tensor(&[1, 4], &mut rng);
            let (gmu, glv) = kl_standard_normal_grad(&mu, &lv).unwrap();
            let eps = 1e-5;
            let (mut nmu, mut nlv) = (vec![0.0; 4], vec![0.0; 4]);
            for i in 0..4 {
                let (mut a, mut b) = (mu.clone(), mu.clone());
                a.data_mut()[i] += eps;
                b.data_mut()[i] -= eps;
                nmu[i] = (kl_standard_normal(&a, &lv).unwrap() - kl_standard_normal(&b, &lv).unwrap()) / (2.0 * eps);
                let (mut a, mut b) = (lv.clone(), lv.clone());
                a.data_mut()[i] += eps;
                b.data_mut()[i] -= eps;
                nlv[i] = (kl_standard_normal(&mu, &a).unwrap() - kl_standard_normal(&mu, &b).unwrap()) / (2.0 * eps);
            }
            assert!(rel_err(gmu.data(), &nmu) < 1e-6);
            assert!(rel_err(glv.data(), &nlv) < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_and_frozen_are_no_ops() {
        let mut p = Tensor::row(vec![1.0, -2.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.step(&mut [&mut p], &[&Tensor::row(vec![0.0, 0.0])]).unwrap();
        assert_eq!(p, before);

        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.freeze(0);
        for _ in 0..50 {
            opt.step(&mut [&mut p], &[&Tensor::row(vec![3.0, f64::NAN])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Tensor::row(vec![1.0]);
        let q = Tensor::row(vec![2.0]);
        let mut q2 = q.clone();
        let mut opt = Adam::new(AdamConfig::default(), &[&p, &q]);
        let err = opt
            .step(&mut [&mut p, &mut q2], &[&Tensor::row(vec![1.0]), &Tensor::row(vec![f64::INFINITY])])
            .unwrap_err();
        assert!(err.to_string().contains("block 1"), "{err}");
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut w = Tensor::row(vec![0.0]);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &[&w],
        );
        for _ in 0..500 {
            let g = Tensor::row(vec![2.0 * (w.data()[0] - 3.0)]);
            opt.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!((w.data()[0] - 3.0).abs() < 1e-2, "w = {}", w.data()[0]);
    }

    #[test]
    fn forward_backward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let net = Network::new(
                &[
                    LayerSpec::Conv1d { in_channels: 2, out_channels: 4, kernel: 5, stride: 2 },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { inputs: 4 * 8, outputs: 3 },
                ],
                &mut rng,
            )
            .unwrap();
            let x = rand_tensor(&[3, 2, 20], &mut rng);
            let (y, tape) = net.forward(&x).unwrap();
            let g = net.backward(&tape, &y).unwrap();
            (y, g)
        };
        assert_eq!(run(), run());
    }
}
