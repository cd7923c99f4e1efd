//! Central finite-difference gradient oracle over graph ops.
#![allow(dead_code)]

use corgan::nn::{LayerSpec, Mode, Network};
use corgan::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// A graph under test: `inputs` are placeholders (all gradient-tracked)
/// fed with `values`; `params` are parameter leaves; `out` is the op output.
pub struct Case {
    pub graph: Graph,
    pub values: Vec<Tensor>,
    pub inputs: Vec<NodeId>,
    pub params: Vec<NodeId>,
    pub out: NodeId,
    pub loss: NodeId,
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 2.0, rng)
}

/// Appends `loss = sum(out * r)` for a random constant `r` (or uses `out`
/// directly when it is already scalar).
pub fn finish(mut graph: Graph, values: Vec<Tensor>, inputs: Vec<NodeId>, params: Vec<NodeId>, out: NodeId, rng: &mut ChaCha8Rng) -> Case {
    let shape = graph.shape(out).to_vec();
    let loss = if shape.iter().product::<usize>() == 1 {
        out
    } else {
        let r = graph.constant(rand_tensor(&shape, rng));
        let w = graph.mul(out, r).unwrap();
        graph.sum(w).unwrap()
    };
    Case { graph, values, inputs, params, out, loss }
}

fn loss_at(case: &mut Case, values: &[Tensor]) -> f64 {
    case.graph.forward(values).unwrap();
    case.graph.value(case.loss).unwrap().data()[0]
}

/// Relative error `|a - n| / max(|a| + |n|, 1e-8)` over the concatenated
/// gradient of every leaf.
pub fn check(case: &mut Case) -> f64 {
    let values = case.values.clone();
    case.graph.forward(&values).unwrap();
    case.graph.backward(case.loss).unwrap();
    let mut analytic = Vec::new();
    for &id in case.inputs.iter().chain(&case.params) {
        analytic.extend_from_slice(case.graph.grad(id).unwrap());
    }
    let mut numeric = Vec::new();
    for slot in 0..case.inputs.len() {
        for e in 0..values[slot].len() {
            let mut v = values.clone();
            v[slot].data_mut()[e] += EPS;
            let up = loss_at(case, &v);
            v[slot].data_mut()[e] -= 2.0 * EPS;
            let down = loss_at(case, &v);
            numeric.push((up - down) / (2.0 * EPS));
        }
    }
    for &p in &case.params.clone() {
        let base = case.graph.value(p).unwrap().clone();
        for e in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[e] += EPS;
            case.graph.set_value(p, &t).unwrap();
            let up = loss_at(case, &values);
            t.data_mut()[e] -= 2.0 * EPS;
            case.graph.set_value(p, &t).unwrap();
            let down = loss_at(case, &values);
            numeric.push((up - down) / (2.0 * EPS));
        }
        case.graph.set_value(p, &base).unwrap();
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-8)
}

fn away_from_zero(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -0.5 } else { 0.5 };
        }
    }
}

type Builder = fn(&mut ChaCha8Rng) -> Case;

fn unary(rng: &mut ChaCha8Rng, f: fn(&mut Graph, NodeId) -> NodeId, kinked: bool) -> Case {
    let mut g = Graph::new();
    let x = g.input_with_grad(&[3, 4]);
    let out = f(&mut g, x);
    let mut v = rand_tensor(&[3, 4], rng);
    if kinked {
        away_from_zero(&mut v);
    }
    finish(g, vec![v], vec![x], vec![], out, rng)
}

fn binary(rng: &mut ChaCha8Rng, a_shape: &[usize], b_shape: &[usize], f: fn(&mut Graph, NodeId, NodeId) -> NodeId) -> Case {
    let mut g = Graph::new();
    let a = g.input_with_grad(a_shape);
    let b = g.input_with_grad(b_shape);
    let out = f(&mut g, a, b);
    let values = vec![rand_tensor(a_shape, rng), rand_tensor(b_shape, rng)];
    finish(g, values, vec![a, b], vec![], out, rng)
}

fn conv_case(rng: &mut ChaCha8Rng, transpose: bool) -> Case {
    let stride = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let pad = rng.random_range(0..k);
    let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let len = rng.random_range(k.max(2)..=8);
    let mut g = Graph::new();
    let x = g.input_with_grad(&[2, ci, len]);
    let w_shape = if transpose { [ci, co, k] } else { [co, ci, k] };
    let w = g.input_with_grad(&w_shape);
    let out = match if transpose { g.conv1d_transpose(x, w, stride, pad) } else { g.conv1d(x, w, stride, pad) } {
        Ok(o) => o,
        // geometry rejected (e.g. transpose output length <= 0): redraw
        Err(_) => return conv_case(rng, transpose),
    };
    let values = vec![rand_tensor(&[2, ci, len], rng), rand_tensor(&w_shape, rng)];
    finish(g, values, vec![x, w], vec![], out, rng)
}

fn batchnorm_case(rng: &mut ChaCha8Rng, three_d: bool, running: bool) -> Case {
    let shape: Vec<usize> = if three_d { vec![4, 2, 3] } else { vec![5, 3] };
    let c = shape[1];
    let mut g = Graph::new();
    let x = g.input_with_grad(&shape);
    let gamma = g.input_with_grad(&[c]);
    let beta = g.input_with_grad(&[c]);
    let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let stats = running.then_some((mean.as_slice(), var.as_slice()));
    let out = g.batch_norm(x, gamma, beta, 1e-5, stats).unwrap();
    let values = vec![rand_tensor(&shape, rng), rand_tensor(&[c], rng), rand_tensor(&[c], rng)];
    finish(g, values, vec![x, gamma, beta], vec![], out, rng)
}

fn mbd_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, a, b, c) = (4, 3, 2, 3);
    let mut g = Graph::new();
    let x = g.input_with_grad(&[n, a]);
    let t = g.input_with_grad(&[a, b, c]);
    let out = g.minibatch_discrimination(x, t).unwrap();
    let values = vec![rand_tensor(&[n, a], rng), rand_tensor(&[a, b, c], rng)];
    finish(g, values, vec![x, t], vec![], out, rng)
}

fn bce_case(rng: &mut ChaCha8Rng) -> Case {
    let mut g = Graph::new();
    let p = g.input_with_grad(&[6]);
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    let t = g.constant(Tensor::new(&[6], target).unwrap());
    let out = g.bce(p, t).unwrap();
    let pv: Vec<f64> = (0..6).map(|_| 1.0 / (1.0 + (-rng.random_range(-2.0..2.0f64)).exp())).collect();
    finish(g, vec![Tensor::new(&[6], pv).unwrap()], vec![p], vec![], out, rng)
}

fn bce_logits_case(rng: &mut ChaCha8Rng) -> Case {
    let mut g = Graph::new();
    let l = g.input_with_grad(&[6]);
    let target: Vec<f64> = (0..6).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let t = g.constant(Tensor::new(&[6], target).unwrap());
    let out = g.bce_with_logits(l, t).unwrap();
    finish(g, vec![rand_tensor(&[6], rng)], vec![l], vec![], out, rng)
}

fn network_case(rng: &mut ChaCha8Rng, specs: &[LayerSpec], input: &[usize], mode: Mode) -> Case {
    let net = Network::new(specs, input, rng).unwrap();
    let mut g = Graph::new();
    let binding = net.bind(&mut g, true);
    let mut shape = vec![4];
    shape.extend_from_slice(input);
    let x = g.input_with_grad(&shape);
    let trace = net.build(&mut g, &binding, x, mode).unwrap();
    let params = binding.nodes();
    let v = rand_tensor(&shape, rng);
    finish(g, vec![v], vec![x], params, trace.output, rng)
}

fn generator_stack(rng: &mut ChaCha8Rng) -> Case {
    let specs = [
        LayerSpec::Dense { inputs: 3, outputs: 8 },
        LayerSpec::Batchnorm1d { features: 8 },
        LayerSpec::Relu,
        LayerSpec::Reshape { channels: 2, length: 4 },
        LayerSpec::Conv1dTranspose { in_channels: 2, out_channels: 2, kernel_size: 4, stride: 2, padding: 1 },
        LayerSpec::Batchnorm1d { features: 2 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv1dTranspose { in_channels: 2, out_channels: 1, kernel_size: 5, stride: 2, padding: 2 },
        LayerSpec::Flatten,
        LayerSpec::Tanh,
        LayerSpec::RangeAffine { width: 15 },
    ];
    network_case(rng, &specs, &[3], Mode::Train)
}

fn discriminator_stack(rng: &mut ChaCha8Rng) -> Case {
    let specs = [
        LayerSpec::Reshape { channels: 1, length: 8 },
        LayerSpec::Conv1d { in_channels: 1, out_channels: 2, kernel_size: 5, stride: 2, padding: 2 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Flatten,
        LayerSpec::MinibatchDiscrimination { features: 8, kernels: 2, kernel_dim: 2 },
        LayerSpec::Dense { inputs: 10, outputs: 1 },
        LayerSpec::Sigmoid,
    ];
    network_case(rng, &specs, &[8], Mode::Train)
}

/// Every differentiable op and loss, plus two composite stacks.
pub fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |r| binary(r, &[3, 4], &[3, 4], |g, a, b| g.add(a, b).unwrap())),
        ("sub", |r| binary(r, &[3, 4], &[3, 4], |g, a, b| g.sub(a, b).unwrap())),
        ("mul", |r| binary(r, &[3, 4], &[3, 4], |g, a, b| g.mul(a, b).unwrap())),
        ("add_row", |r| binary(r, &[3, 4], &[4], |g, a, b| g.add_row(a, b).unwrap())),
        ("mul_row", |r| binary(r, &[3, 4], &[4], |g, a, b| g.mul_row(a, b).unwrap())),
        ("add_channel", |r| binary(r, &[2, 3, 4], &[3], |g, a, b| g.add_channel(a, b).unwrap())),
        ("matmul", |r| binary(r, &[3, 4], &[4, 2], |g, a, b| g.matmul(a, b).unwrap())),
        ("scale", |r| unary(r, |g, x| g.scale(x, -1.7).unwrap(), false)),
        ("sum", |r| unary(r, |g, x| g.sum(x).unwrap(), false)),
        ("mean", |r| unary(r, |g, x| g.mean(x).unwrap(), false)),
        ("reshape", |r| unary(r, |g, x| g.reshape(x, &[2, 6]).unwrap(), false)),
        ("sigmoid", |r| unary(r, |g, x| g.sigmoid(x).unwrap(), false)),
        ("tanh", |r| unary(r, |g, x| g.tanh(x).unwrap(), false)),
        ("relu", |r| unary(r, |g, x| g.relu(x).unwrap(), true)),
        ("leaky_relu", |r| unary(r, |g, x| g.leaky_relu(x, 0.2).unwrap(), true)),
        ("conv1d", |r| conv_case(r, false)),
        ("conv1d_transpose", |r| conv_case(r, true)),
        ("batchnorm1d_train_2d", |r| batchnorm_case(r, false, false)),
        ("batchnorm1d_train_3d", |r| batchnorm_case(r, true, false)),
        ("batchnorm1d_eval", |r| batchnorm_case(r, true, true)),
        ("minibatch_discrimination", mbd_case),
        ("bce", bce_case),
        ("bce_with_logits", bce_logits_case),
        ("generator_stack", generator_stack),
        ("discriminator_stack", discriminator_stack),
    ]
}

/// Runs `trials` random instances of one case; returns the worst relative error.
pub fn worst_error(build: Builder, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| check(&mut build(&mut rng))).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
