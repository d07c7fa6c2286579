use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roigan::nn::{
    init_parameters, ConvGruCell, Discriminator, DiscriminatorSpec, ForwardOptions, Generator, GeneratorSpec, Module,
    Noise,
};
use roigan::tensor::{Graph, Mode, Tensor};

fn spec(recurrent: bool) -> GeneratorSpec {
    GeneratorSpec {
        input_size: (64, 64),
        block_widths: [4, 4, 6, 6, 8, 8],
        recurrent,
        noise: Noise::Dropout(0.5),
        ..GeneratorSpec::default()
    }
}

fn random_images(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![n, 1, 64, 64], |_| rng.random_range(0.0..1.0))
}

fn run_fcnn(net: &Generator<f64>, x: &Tensor<f64>, opts: &ForwardOptions) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = net
        .fcnn_forward_with(&mut g, v, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), opts)
        .unwrap();
    g.value(y).clone()
}

fn run_rfcnn(net: &Generator<f64>, x: &Tensor<f64>, lengths: &[usize]) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = net
        .rfcnn_forward(&mut g, v, lengths, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    g.value(y).clone()
}

#[test]
fn generator_maps_slices_to_probability_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for recurrent in [false, true] {
        let net = Generator::<f64>::new("g", spec(recurrent), &mut rng).unwrap();
        let x = random_images(&mut rng, 3);
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = net.forward(&mut g, v, &[3], Mode::Train, &mut rng).unwrap();
        assert_eq!(g.shape(y), &[3, 1, 64, 64]);
        assert!(g.value(y).data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn generator_rejects_bad_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(Generator::<f64>::new(
        "g",
        GeneratorSpec {
            input_size: (48, 64),
            ..spec(false)
        },
        &mut rng
    )
    .is_err());
    let net = Generator::<f64>::new("g", spec(true), &mut rng).unwrap();
    let mut g = Graph::new();
    let v = g.constant(random_images(&mut rng, 3));
    assert!(net.rfcnn_forward(&mut g, v, &[2], Mode::Eval, &mut rng).is_err());
    let wrong = g.constant(Tensor::zeros(vec![1, 1, 32, 32]));
    assert!(net.fcnn_forward(&mut g, wrong, Mode::Eval, &mut rng).is_err());
}

#[test]
fn every_skip_connection_reaches_the_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Generator::<f64>::new("g", spec(false), &mut rng).unwrap();
    let x = random_images(&mut rng, 1);
    let base = run_fcnn(&net, &x, &ForwardOptions::default());
    for block in 1..6 {
        let ablated = run_fcnn(
            &net,
            &x,
            &ForwardOptions {
                ablate_skip: Some(block),
            },
        );
        let diff: f64 = base.data().iter().zip(ablated.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 0.0, "zeroing skip {block} left the output unchanged");
    }
}

#[test]
fn fcnn_segments_slices_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Generator::<f64>::new("g", spec(false), &mut rng).unwrap();
    let x = random_images(&mut rng, 4);
    let together = run_fcnn(&net, &x, &ForwardOptions::default());
    for i in 0..4 {
        let alone = run_fcnn(&net, &x.narrow_batch(i, i + 1).unwrap(), &ForwardOptions::default());
        assert_eq!(alone.data(), together.narrow_batch(i, i + 1).unwrap().data());
    }
}

#[test]
fn rfcnn_is_causal_along_the_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Generator::<f64>::new("g", spec(true), &mut rng).unwrap();
    let per = 64 * 64;
    for _ in 0..20 {
        let len = rng.random_range(3..7);
        let x = random_images(&mut rng, len);
        let s = rng.random_range(0..len - 1);
        let mut perturbed = x.clone();
        for v in &mut perturbed.data_mut()[(s + 1) * per..] {
            *v = rng.random_range(0.0..1.0);
        }
        let a = run_rfcnn(&net, &x, &[len]);
        let b = run_rfcnn(&net, &perturbed, &[len]);
        assert_eq!(
            a.data()[..(s + 1) * per],
            b.data()[..(s + 1) * per],
            "slice {s} of {len}"
        );
        assert_ne!(a.data()[(s + 1) * per..], b.data()[(s + 1) * per..]);
    }
}

#[test]
fn rfcnn_sequences_in_one_batch_do_not_interact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Generator::<f64>::new("g", spec(true), &mut rng).unwrap();
    let x = random_images(&mut rng, 5);
    let packed = run_rfcnn(&net, &x, &[2, 3]);
    let first = run_rfcnn(&net, &x.narrow_batch(0, 2).unwrap(), &[2]);
    let second = run_rfcnn(&net, &x.narrow_batch(2, 5).unwrap(), &[3]);
    assert_eq!(packed.narrow_batch(0, 2).unwrap().data(), first.data());
    assert_eq!(packed.narrow_batch(2, 5).unwrap().data(), second.data());
}

/// Same-extent correlation `[C_in,H,W] → [C_out,H,W]` with odd kernel `k`.
fn conv_same(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut y = vec![0.0; cout * h * w];
    for o in 0..cout {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for c in 0..cin {
                    for a in 0..k as isize {
                        for b in 0..k as isize {
                            let (ii, jj) = (i + a - r, j + b - r);
                            if ii >= 0 && jj >= 0 && ii < h as isize && jj < w as isize {
                                acc += x[(c * h + ii as usize) * w + jj as usize]
                                    * wt[((o * cin + c) * k + a as usize) * k + b as usize];
                            }
                        }
                    }
                }
                y[(o * h + i as usize) * w + j as usize] = acc;
            }
        }
    }
    y
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn update_gate_saturation_selects_state_or_candidate() {
    let (cin, hid, h, w, k) = (2, 3, 5, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cell = ConvGruCell::<f64>::new("gru", cin, hid, k);
    for p in cell.parameters() {
        p.set_value(Tensor::from_fn(p.shape(), |_| rng.random_range(-0.5..0.5)));
    }
    let x: Vec<f64> = (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hp: Vec<f64> = (0..hid * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Candidate computed directly from the cell equations.
    let val = |p: &roigan::tensor::Param<f64>| p.value().into_data();
    let hr = conv_same(&hp, hid, h, w, &val(&cell.w_hr), hid, k);
    let xr = conv_same(&x, cin, h, w, &val(&cell.w_xr), hid, k);
    let br = val(&cell.b_r);
    let r: Vec<f64> = (0..hid * h * w)
        .map(|i| sigmoid(hr[i] + xr[i] + br[i / (h * w)]))
        .collect();
    let rh: Vec<f64> = r.iter().zip(&hp).map(|(a, b)| a * b).collect();
    let a = conv_same(&rh, hid, h, w, &val(&cell.w_h), hid, k);
    let c = conv_same(&x, cin, h, w, &val(&cell.w_x), hid, k);
    let bc = val(&cell.b);
    let candidate: Vec<f64> = (0..hid * h * w)
        .map(|i| (a[i] + c[i] + bc[i / (h * w)]).tanh())
        .collect();

    for (bias, expected) in [(-20.0, &hp), (20.0, &candidate)] {
        cell.b_z.set_value(Tensor::full(vec![hid], bias));
        let mut g = Graph::new();
        let p = cell.bind(&mut g);
        let xv = g.constant(Tensor::new(vec![1, cin, h, w], x.clone()).unwrap());
        let hv = g.constant(Tensor::new(vec![1, hid, h, w], hp.clone()).unwrap());
        let out = cell.step(&mut g, &p, xv, hv).unwrap();
        let worst = g
            .value(out)
            .data()
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "bias {bias}: max deviation {worst:e}");
    }
}

fn disc_spec() -> DiscriminatorSpec {
    DiscriminatorSpec {
        input_size: (64, 64),
        in_channels: 1,
        widths: vec![4, 4, 6, 6, 8],
    }
}

#[test]
fn discriminator_outputs_one_probability_per_item_and_passes_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = Discriminator::<f64>::new("d", disc_spec(), &mut rng).unwrap();
    let mut g = Graph::new();
    let x = g.variable(random_images(&mut rng, 3));
    let p = d.forward(&mut g, x, Mode::Train).unwrap();
    assert_eq!(g.shape(p), &[3]);
    assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    assert!(grad.iter().all(|v| v.is_finite()));
    assert!(grad.iter().any(|&v| v != 0.0));
    let bad = g.constant(Tensor::zeros(vec![1, 2, 64, 64]));
    assert!(d.forward(&mut g, bad, Mode::Eval).is_err());
}

#[test]
fn initialization_follows_the_gan_convention() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Generator::<f64>::new(
        "g",
        GeneratorSpec {
            input_size: (64, 64),
            block_widths: [16, 32, 64, 64, 64, 64],
            recurrent: true,
            ..GeneratorSpec::default()
        },
        &mut rng,
    )
    .unwrap();
    let (mut weights, mut gammas) = (Vec::new(), Vec::new());
    for p in net.parameters() {
        let v = p.value().into_data();
        if p.name().ends_with(".weight") {
            weights.extend(v);
        } else if p.name().ends_with(".gamma") {
            gammas.extend(v);
        } else {
            assert!(v.iter().all(|&b| b == 0.0), "{} not zero", p.name());
        }
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (m, sd)
    };
    let (m, sd) = stats(&weights);
    assert!(m.abs() < 1e-3 && (sd - 0.02).abs() < 1e-3, "weights mean {m} sd {sd}");
    let (m, sd) = stats(&gammas);
    assert!(
        (m - 1.0).abs() < 5e-3 && (sd - 0.02).abs() < 5e-3,
        "gamma mean {m} sd {sd}"
    );

    // Re-initializing from the same seed reproduces the parameters.
    let before: Vec<_> = net.parameters().iter().map(|p| p.value()).collect();
    init_parameters(&net, &mut ChaCha8Rng::seed_from_u64(10));
    let other: Vec<_> = net.parameters().iter().map(|p| p.value()).collect();
    init_parameters(&net, &mut ChaCha8Rng::seed_from_u64(10));
    let again: Vec<_> = net.parameters().iter().map(|p| p.value()).collect();
    assert_eq!(other, again);
    assert_ne!(before, other);
}
