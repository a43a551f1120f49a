//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use frd_core::agent::{ReplayEntry, ReplayMemory};
use frd_core::env::EnvState;
use frd_core::nn::{Activation, Mlp, MlpConfig, OutputHead, Target, TrainBatch};
use frd_core::proxy::{ClusterIndex, ClusterSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook Euler cart-pole step in f64 with the standard constants.
/// `push` is +1 for right, -1 for left.
pub fn euler_step(s: [f64; 4], push: f64) -> [f64; 4] {
    let (g, mc, mp, l, f, tau) = (9.8, 1.0, 0.1, 0.5, 10.0 * push, 0.02);
    let [x, x_dot, th, th_dot] = s;
    let total = mc + mp;
    let pml = mp * l;
    let tmp = (f + pml * th_dot * th_dot * th.sin()) / total;
    let th_acc = (g * th.sin() - th.cos() * tmp) / (l * (4.0 / 3.0 - mp * th.cos() * th.cos() / total));
    let x_acc = tmp - pml * th_acc * th.cos() / total;
    [x + tau * x_dot, x_dot + tau * x_acc, th + tau * th_dot, th_dot + tau * th_acc]
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over the checked parameters. The denominator is floored at 1e-4 so that
/// vanishing gradients are held to an absolute error of 1e-7.
pub struct GradCheck {
    pub max_rel: f64,
    pub parameters: usize,
}

pub fn random_net(rng: &mut ChaCha8Rng, head: OutputHead) -> Mlp<f64> {
    let config = MlpConfig {
        input_dim: rng.random_range(1..=5),
        hidden_layers: rng.random_range(0..=3),
        hidden_width: rng.random_range(1..=8),
        output_dim: match head {
            OutputHead::Softmax => rng.random_range(2..=4),
            OutputHead::Linear => rng.random_range(1..=3),
        },
        head,
        activation: if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu },
    };
    let mut net = Mlp::init(config, rng.random()).unwrap();
    // Nonzero biases so every path through the net is exercised.
    for layer in net.layers_mut() {
        for b in &mut layer.biases {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Loss kinds: 0 soft-target, 1 regression, 2 policy gradient.
pub fn random_batch(rng: &mut ChaCha8Rng, net: &Mlp<f64>, kind: usize) -> TrainBatch<f64> {
    let cfg = *net.config();
    let mut batch = TrainBatch::new();
    for _ in 0..rng.random_range(1..=6) {
        let input: Vec<f64> = (0..cfg.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = match kind {
            0 => Target::SoftTarget(random_distribution(rng, cfg.output_dim)),
            1 => Target::Regression((0..cfg.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
            _ => Target::PolicyGradient {
                action: rng.random_range(0..cfg.output_dim),
                advantage: rng.random_range(-3.0..3.0),
            },
        };
        batch.push(input, target);
    }
    batch
}

/// Analytic gradient against central differences with step `h`.
///
/// ReLU kinks make the finite difference meaningless when a pre-activation
/// sits within `h` of zero; such parameters are skipped and counted out.
pub fn grad_check(net: &Mlp<f64>, batch: &TrainBatch<f64>, h: f64) -> GradCheck {
    let analytic: Vec<f64> = net.backward(batch).unwrap().gradients.iter().copied().collect();
    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut parameters = 0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.parameters_mut().nth(i).unwrap();
        *probe.parameters_mut().nth(i).unwrap() = original + h;
        let plus = probe.loss(batch).unwrap();
        let kinked_plus = near_kink(&probe, batch, h);
        *probe.parameters_mut().nth(i).unwrap() = original - h;
        let minus = probe.loss(batch).unwrap();
        let kinked_minus = near_kink(&probe, batch, h);
        *probe.parameters_mut().nth(i).unwrap() = original;
        if kinked_plus || kinked_minus {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let scale = a.abs().max(numeric.abs());
        let rel = (a - numeric).abs() / scale.max(1e-4);
        max_rel = max_rel.max(rel);
        parameters += 1;
    }
    GradCheck { max_rel, parameters }
}

fn near_kink(net: &Mlp<f64>, batch: &TrainBatch<f64>, h: f64) -> bool {
    if net.config().activation != Activation::Relu {
        return false;
    }
    let hidden = net.config().hidden_layers;
    batch.samples.iter().any(|s| {
        let mut act = s.input.clone();
        for layer in &net.layers()[..hidden] {
            let mut next = Vec::with_capacity(layer.out_dim);
            for (row, b) in layer.weights.chunks_exact(layer.in_dim).zip(&layer.biases) {
                let z: f64 = row.iter().zip(&act).map(|(w, x)| w * x).sum::<f64>() + b;
                if z.abs() < 10.0 * h {
                    return true;
                }
                next.push(z.max(0.0));
            }
            act = next;
        }
        false
    })
}

pub fn random_state(rng: &mut impl Rng) -> EnvState<f32> {
    EnvState::new(
        rng.random_range(-2.4..2.4),
        rng.random_range(-3.0..3.0),
        rng.random_range(-0.2094..0.2094),
        rng.random_range(-3.0..3.0),
    )
}

/// Random replay memory. States are drawn from a small pool so clusters
/// collect several members.
pub fn random_rm(rng: &mut ChaCha8Rng, max_len: usize) -> ReplayMemory<f32> {
    let pool: Vec<EnvState<f32>> = (0..rng.random_range(1..=20)).map(|_| random_state(rng)).collect();
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| {
            let mut state = pool[rng.random_range(0..pool.len())];
            if rng.random_bool(0.5) {
                state = random_state(rng);
            }
            let p: f32 = rng.random_range(0.0..=1.0);
            ReplayEntry { state, policy: [p, 1.0 - p] }
        })
        .collect()
}

/// Naive group-by-mean keyed on the crate's cluster index, in f64.
pub fn group_by_mean(spec: &ClusterSpec<f32>, rm: &ReplayMemory<f32>) -> HashMap<ClusterIndex, ([f64; 2], u32)> {
    let mut groups: HashMap<ClusterIndex, Vec<[f32; 2]>> = HashMap::new();
    for e in rm.iter() {
        groups.entry(spec.cluster_index_of(&e.state)).or_default().push(e.policy);
    }
    groups
        .into_iter()
        .map(|(k, members)| {
            let n = members.len() as f64;
            let a = members.iter().map(|p| p[0] as f64).sum::<f64>() / n;
            let b = members.iter().map(|p| p[1] as f64).sum::<f64>() / n;
            (k, ([a, b], members.len() as u32))
        })
        .collect()
}

/// Section by nearest midpoint, scanning all `S` candidates.
pub fn nearest_midpoint_section(lo: f64, hi: f64, sections: u32, x: f64) -> u32 {
    let width = (hi - lo) / sections as f64;
    (0..sections)
        .min_by(|&a, &b| {
            let da = (lo + (a as f64 + 0.5) * width - x).abs();
            let db = (lo + (b as f64 + 0.5) * width - x).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
