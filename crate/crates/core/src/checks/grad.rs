//! Central finite-difference gradient checks in 64-bit arithmetic.
//!
//! Each case records a computation on fresh leaves, reduces a non-scalar
//! output to `sum(out ⊙ R)` with a fixed random `R`, and compares the tape's
//! gradients against `(f(θ + h) − f(θ − h)) / 2h` for every checked entry of
//! every input and parameter.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{gan_loss_discriminator, gan_loss_generator, l1_loss, mse_loss, total_loss, LossConfig};
use crate::nn::{ConvGruCell, Generator, GeneratorSpec, Module, Noise};
use crate::tensor::{Graph, Mode, Param, Tensor, Var};

use super::CheckResult;

pub const SUITE: &str = "grad";
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Bound on the relative error of single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Bound for long compositions (whole networks, unrolled recurrences).
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this in magnitude are compared on an absolute
/// scale; the finite-difference noise floor is far below it.
pub const REL_FLOOR: f64 = 1e-6;
/// Entries sampled per parameter tensor in the whole-network cases.
pub const COMPOSITE_ENTRIES: usize = 48;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Build<'a> = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a>;

/// One differentiable computation and the leaves it is checked against.
///
/// A case passes when the largest relative error is below `tolerance` and
/// kink crossings excluded no more entries than were compared.
pub struct GradCase<'a> {
    pub name: String,
    pub tolerance: f64,
    /// Values of the variable leaves handed to `build`.
    pub inputs: Vec<Tensor<f64>>,
    /// Parameters bound inside `build`.
    pub params: Vec<Param<f64>>,
    pub build: Build<'a>,
    /// Check at most this many seeded-random entries per tensor.
    pub max_entries: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose `±h` evaluations crossed a relu/abs kink; their
    /// finite differences are not derivatives and are left out.
    pub kink_skipped: usize,
    /// Leaf and entry of the largest error.
    pub worst: String,
}

fn readout_weights(shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn objective(case: &GradCase<'_>, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let root = if g.value(out).is_scalar() {
        out
    } else {
        let r = g.constant(readout_weights(g.shape(out)));
        let weighted = g.hadamard(out, r)?;
        g.sum(weighted)?
    };
    Ok((g, vars, root))
}

/// Objective value and the kink pattern of its tape.
fn value(case: &GradCase<'_>, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<bool>)> {
    let (g, _, root) = objective(case, inputs)?;
    Ok((g.value(root).data()[0], g.kink_pattern()))
}

fn entries(len: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, len, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

pub fn check_case(case: &GradCase<'_>) -> Result<GradOutcome> {
    for p in &case.params {
        p.zero_grad();
    }
    let (mut g, vars, root) = objective(case, &case.inputs)?;
    g.backward(root)?;
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(&case.inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    let param_grads: Vec<Vec<f64>> = case.params.iter().map(Param::grad).collect();

    let mut out = GradOutcome {
        max_rel_error: 0.0,
        checked: 0,
        kink_skipped: 0,
        worst: String::new(),
    };
    let base = g.kink_pattern();
    let mut record = |label: String, analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base || minus.1 != base {
            out.kink_skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * FD_STEP);
        let e = relative_error(analytic, numeric);
        out.checked += 1;
        if e > out.max_rel_error || out.worst.is_empty() {
            out.max_rel_error = out.max_rel_error.max(e);
            out.worst = format!("{label} (analytic {analytic:.6e}, numeric {numeric:.6e})");
        }
    };

    for (i, grad) in input_grads.iter().enumerate() {
        for k in entries(case.inputs[i].numel(), case.max_entries, i as u64) {
            let mut shifted = case.inputs.clone();
            let x0 = shifted[i].data()[k];
            shifted[i].data_mut()[k] = x0 + FD_STEP;
            let plus = value(case, &shifted)?;
            shifted[i].data_mut()[k] = x0 - FD_STEP;
            let minus = value(case, &shifted)?;
            record(format!("input {i}[{k}]"), grad[k], plus, minus);
        }
    }
    for (j, (p, grad)) in case.params.iter().zip(&param_grads).enumerate() {
        for k in entries(p.numel(), case.max_entries, 1000 + j as u64) {
            let x0 = p.read().value.data()[k];
            p.write().value.data_mut()[k] = x0 + FD_STEP;
            let plus = value(case, &case.inputs);
            p.write().value.data_mut()[k] = x0 - FD_STEP;
            let minus = value(case, &case.inputs);
            p.write().value.data_mut()[k] = x0;
            record(format!("{}[{k}]", p.name()), grad[k], plus?, minus?);
        }
    }
    Ok(out)
}

/// Uniform draws in `[lo, hi)`.
fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Draws with magnitude in `[0.1, 1)` and random sign, so no entry sits
/// within a finite-difference step of a kink at zero.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn case<'a>(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a,
) -> GradCase<'a> {
    GradCase {
        name: name.to_string(),
        tolerance: OP_TOLERANCE,
        inputs,
        params: Vec::new(),
        build: Box::new(build),
        max_entries: None,
    }
}

fn conv_cases() -> Vec<GradCase<'static>> {
    vec![
        case(
            "conv2d k3 s1 p1",
            vec![
                uniform(&[2, 3, 8, 8], 1, -1.0, 1.0),
                uniform(&[4, 3, 3, 3], 2, -0.5, 0.5),
                uniform(&[4], 3, -0.5, 0.5),
            ],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
        ),
        case(
            "conv2d k4 s2 p1",
            vec![
                uniform(&[2, 3, 8, 8], 4, -1.0, 1.0),
                uniform(&[4, 3, 4, 4], 5, -0.5, 0.5),
                uniform(&[4], 6, -0.5, 0.5),
            ],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
        ),
        case(
            "conv_transpose2d k4 s2 p1",
            vec![
                uniform(&[2, 3, 4, 4], 7, -1.0, 1.0),
                uniform(&[3, 4, 4, 4], 8, -0.5, 0.5),
                uniform(&[4], 9, -0.5, 0.5),
            ],
            |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
        ),
        case(
            "conv_transpose2d k3 s1 p1",
            vec![
                uniform(&[2, 3, 5, 5], 10, -1.0, 1.0),
                uniform(&[3, 2, 3, 3], 11, -0.5, 0.5),
                uniform(&[2], 12, -0.5, 0.5),
            ],
            |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 1, 1),
        ),
    ]
}

fn norm_activation_cases() -> Vec<GradCase<'static>> {
    let x = || away_from_zero(&[2, 3, 4, 4], 20);
    vec![
        case(
            "batch_norm train",
            vec![
                uniform(&[3, 2, 3, 3], 21, -1.0, 2.0),
                uniform(&[2], 22, 0.5, 1.5),
                uniform(&[2], 23, -0.5, 0.5),
            ],
            |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0),
        ),
        case(
            "batch_norm eval",
            vec![
                uniform(&[2, 2, 3, 3], 24, -1.0, 2.0),
                uniform(&[2], 25, 0.5, 1.5),
                uniform(&[2], 26, -0.5, 0.5),
            ],
            |g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.5, 0.7], 1e-5),
        ),
        case("relu", vec![x()], |g, v| g.relu(v[0])),
        case("leaky_relu 0.2", vec![x()], |g, v| g.leaky_relu(v[0], 0.2)),
        case("sigmoid", vec![uniform(&[2, 3, 4, 4], 27, -3.0, 3.0)], |g, v| {
            g.sigmoid(v[0])
        }),
        case("tanh", vec![uniform(&[2, 3, 4, 4], 28, -2.0, 2.0)], |g, v| g.tanh(v[0])),
        case("dropout p=0 train", vec![x()], |g, v| {
            g.dropout(v[0], 0.0, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1))
        }),
        case("dropout eval", vec![x()], |g, v| {
            g.dropout(v[0], 0.5, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1))
        }),
        case("dropout fixed mask", vec![x()], |g, v| {
            g.dropout(v[0], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1))
        }),
    ]
}

fn elementwise_cases() -> Vec<GradCase<'static>> {
    let a = || uniform(&[2, 3, 4, 4], 30, -1.0, 1.0);
    let b = || uniform(&[2, 3, 4, 4], 31, -1.0, 1.0);
    let s = || uniform(&[1], 32, 0.5, 1.5);
    vec![
        case("add", vec![a(), b()], |g, v| g.add(v[0], v[1])),
        case("add scalar", vec![a(), s()], |g, v| g.add(v[0], v[1])),
        case("sub", vec![a(), b()], |g, v| g.sub(v[0], v[1])),
        case("sub scalar", vec![s(), b()], |g, v| g.sub(v[0], v[1])),
        case("mul scalar", vec![a(), s()], |g, v| g.mul(v[0], v[1])),
        case("hadamard", vec![a(), b()], |g, v| g.hadamard(v[0], v[1])),
        case("hadamard self", vec![a()], |g, v| g.hadamard(v[0], v[0])),
        case("scale", vec![a()], |g, v| g.scale(v[0], -1.7)),
        case("rsub_scalar", vec![a()], |g, v| g.rsub_scalar(1.0, v[0])),
        case("sum", vec![a()], |g, v| g.sum(v[0])),
        case("mean", vec![a()], |g, v| g.mean(v[0])),
        case("abs", vec![away_from_zero(&[2, 3, 4, 4], 33)], |g, v| g.abs(v[0])),
        case("square", vec![a()], |g, v| g.square(v[0])),
        case("log", vec![uniform(&[2, 3, 4, 4], 34, 0.2, 2.0)], |g, v| g.log(v[0])),
        case("clamp_min", vec![away_from_zero(&[2, 3, 4, 4], 35)], |g, v| {
            g.clamp_min(v[0], 0.0)
        }),
        case(
            "concat_channels",
            vec![
                uniform(&[2, 2, 4, 4], 36, -1.0, 1.0),
                uniform(&[2, 3, 4, 4], 37, -1.0, 1.0),
            ],
            |g, v| g.concat_channels(&[v[0], v[1]]),
        ),
        case(
            "concat_batch",
            vec![
                uniform(&[1, 2, 4, 4], 38, -1.0, 1.0),
                uniform(&[3, 2, 4, 4], 39, -1.0, 1.0),
            ],
            |g, v| g.concat_batch(&[v[0], v[1]]),
        ),
        case("narrow_batch", vec![a()], |g, v| g.narrow_batch(v[0], 1, 2)),
        case("crop_pad crop", vec![uniform(&[2, 2, 7, 6], 40, -1.0, 1.0)], |g, v| {
            g.crop_pad(v[0], 4, 3)
        }),
        case("crop_pad pad", vec![uniform(&[2, 2, 3, 4], 41, -1.0, 1.0)], |g, v| {
            g.crop_pad(v[0], 6, 7)
        }),
        case("reshape", vec![a()], |g, v| g.reshape(v[0], vec![6, 16])),
        case(
            "resize_nearest up",
            vec![uniform(&[2, 1, 4, 4], 42, -1.0, 1.0)],
            |g, v| g.resize_nearest(v[0], 8, 12),
        ),
        case(
            "resize_nearest down",
            vec![uniform(&[2, 1, 8, 8], 43, -1.0, 1.0)],
            |g, v| g.resize_nearest(v[0], 3, 5),
        ),
    ]
}

fn loss_cases() -> Vec<GradCase<'static>> {
    let p = |seed| uniform(&[6], seed, 0.05, 0.95);
    vec![
        case(
            "l1_loss",
            vec![
                away_from_zero(&[2, 1, 4, 4], 50),
                uniform(&[2, 1, 4, 4], 51, -0.05, 0.05),
            ],
            |g, v| l1_loss(g, v[0], v[1], 0.7),
        ),
        case(
            "mse_loss",
            vec![
                uniform(&[2, 1, 4, 4], 52, 0.0, 1.0),
                uniform(&[2, 1, 4, 4], 53, 0.0, 1.0),
            ],
            |g, v| mse_loss(g, v[0], v[1]),
        ),
        case("gan_loss_discriminator", vec![p(54), p(55)], |g, v| {
            gan_loss_discriminator(g, v[0], v[1])
        }),
        case("gan_loss_generator", vec![p(56)], |g, v| {
            gan_loss_generator(g, v[0], false)
        }),
        case("gan_loss_generator saturating", vec![p(57)], |g, v| {
            gan_loss_generator(g, v[0], true)
        }),
        case(
            "total_loss",
            vec![
                uniform(&[1], 58, 0.0, 1.0),
                uniform(&[1], 59, 0.0, 1.0),
                uniform(&[1], 60, 0.0, 1.0),
            ],
            |g, v| {
                let cfg = LossConfig {
                    use_l1: true,
                    ..LossConfig::default()
                };
                total_loss(g, v[0], v[1], v[2], &cfg)
            },
        ),
    ]
}

fn gru_cell(seed: u64) -> ConvGruCell<f64> {
    let cell = ConvGruCell::new("gru", 3, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cell.visit(&mut |p| p.set_value(Tensor::from_fn(p.shape(), |_| rng.random_range(-0.5..0.5))));
    cell
}

fn gru_cases() -> Vec<GradCase<'static>> {
    let single = gru_cell(70);
    let params = single.parameters();
    let step = GradCase {
        name: "conv_gru step".into(),
        tolerance: OP_TOLERANCE,
        inputs: vec![
            uniform(&[2, 3, 4, 4], 71, -1.0, 1.0),
            uniform(&[2, 2, 4, 4], 72, -1.0, 1.0),
        ],
        params,
        build: Box::new(move |g, v| {
            let p = single.bind(g);
            single.step(g, &p, v[0], v[1])
        }),
        max_entries: None,
    };
    let chained = gru_cell(73);
    let params = chained.parameters();
    let unrolled = GradCase {
        name: "conv_gru 5 chained steps".into(),
        tolerance: COMPOSITE_TOLERANCE,
        inputs: vec![uniform(&[5, 3, 4, 4], 74, -1.0, 1.0)],
        params,
        build: Box::new(move |g, v| {
            let p = chained.bind(g);
            let first = g.narrow_batch(v[0], 0, 1)?;
            let mut h = chained.initial_state(g, first)?;
            for s in 0..5 {
                let xs = g.narrow_batch(v[0], s, s + 1)?;
                h = chained.step(g, &p, xs, h)?;
            }
            Ok(h)
        }),
        max_entries: None,
    };
    vec![step, unrolled]
}

/// Whole generators with MSE against a random binary target, checked on
/// every parameter tensor at [`COMPOSITE_ENTRIES`] seeded entries each. 64×64 is the smallest input six stride-2 blocks
/// reduce to a whole bottleneck; a batch of two keeps train-mode batch norm
/// defined there.
fn network_cases() -> Result<Vec<GradCase<'static>>> {
    let spec = |recurrent| GeneratorSpec {
        input_size: (64, 64),
        in_channels: 1,
        block_widths: [2, 3, 3, 4, 4, 4],
        recurrent,
        noise: Noise::Off,
        gru_kernel: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let fcnn = Generator::<f64>::new("fcnn", spec(false), &mut rng)?;
    let rfcnn = Generator::<f64>::new("rfcnn", spec(true), &mut rng)?;
    let target = uniform(&[2, 1, 64, 64], 81, 0.0, 1.0).map(|v| if v < 0.4 { 1.0 } else { 0.0 });
    let image = uniform(&[2, 1, 64, 64], 82, 0.0, 1.0);
    let mut cases = Vec::new();
    for (name, net) in [("fcnn forward + mse", fcnn), ("rfcnn forward + mse", rfcnn)] {
        let target = target.clone();
        cases.push(GradCase {
            name: name.into(),
            tolerance: COMPOSITE_TOLERANCE,
            inputs: vec![image.clone()],
            params: net.parameters(),
            build: Box::new(move |g, v| {
                let y = g.constant(target.clone());
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = net.forward(g, v[0], &[2], Mode::Train, &mut rng)?;
                mse_loss(g, out, y)
            }),
            max_entries: Some(COMPOSITE_ENTRIES),
        });
    }
    Ok(cases)
}

/// Every registered case, in suite order.
pub fn cases() -> Result<Vec<GradCase<'static>>> {
    let mut v = conv_cases();
    v.extend(norm_activation_cases());
    v.extend(elementwise_cases());
    v.extend(loss_cases());
    v.extend(gru_cases());
    v.extend(network_cases()?);
    Ok(v)
}

pub fn suite() -> Vec<CheckResult> {
    let cases = match cases() {
        Ok(c) => c,
        Err(e) => return vec![CheckResult::error(SUITE, "build cases", &e)],
    };
    cases
        .iter()
        .map(|c| {
            let start = Instant::now();
            match check_case(c) {
                Ok(o) => CheckResult::new(
                    SUITE,
                    &c.name,
                    o.max_rel_error < c.tolerance && o.checked > 0 && o.kink_skipped <= o.checked,
                    format!(
                        "max rel err {:.2e} < {:.0e} over {} entries, {} kink-crossing skipped ({:.2}s); worst {}",
                        o.max_rel_error,
                        c.tolerance,
                        o.checked,
                        o.kink_skipped,
                        start.elapsed().as_secs_f64(),
                        o.worst
                    ),
                ),
                Err(e) => CheckResult::error(SUITE, &c.name, &e),
            }
        })
        .collect()
}
