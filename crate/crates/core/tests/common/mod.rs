//! Finite-difference gradient oracles shared by the integration tests.

#![allow(dead_code)]

use morphobp::autodiff::{Graph, LstmVars, Tensor, Var};
use morphobp::bp_model::{BpRegressor, ModelConfig};
use morphobp::morpho_grid::MorphoTemporalGrid;
use morphobp::trainer::{loss_and_gradients, total_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Denominator floor so near-zero gradients are compared absolutely. Central
/// differences on an O(1) loss carry about 1e-11 of round-off at this step.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`.
pub fn max_fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Inputs of a graph under test: leaves with shapes and values.
struct Leaves {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl Leaves {
    fn flat(&self) -> Vec<f64> {
        self.values.concat()
    }

    fn split(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut at = 0;
        for v in &self.values {
            out.push(flat[at..at + v.len()].to_vec());
            at += v.len();
        }
        out
    }
}

/// Checks a scalar graph built by `build` from leaves of the given shapes.
fn check_graph(
    leaves: Leaves,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let eval = |vals: &[Vec<f64>], grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves
            .shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| g.param(&Tensor::new(s.clone(), v.clone()).unwrap()))
            .collect();
        let loss = build(&mut g, &vars);
        let value = g.value(loss)[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let grad: Vec<f64> = vars.iter().flat_map(|&v| g.grad(v).unwrap().to_vec()).collect();
        (value, grad)
    };
    let (_, analytic) = eval(&leaves.values, true);
    max_fd_error(|x| eval(&leaves.split(x), false).0, &leaves.flat(), &analytic)
}

pub fn conv_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out, len, width) = (3, 2, 8, 3);
    let target = random_vec(&mut rng, c_out * len, 1.0);
    let leaves = Leaves {
        shapes: vec![vec![c_in, len], vec![c_out, c_in, width], vec![c_out]],
        values: vec![
            random_vec(&mut rng, c_in * len, 1.0),
            random_vec(&mut rng, c_out * c_in * width, 1.0),
            random_vec(&mut rng, c_out, 1.0),
        ],
    };
    check_graph(leaves, |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 1, 1).unwrap();
        let y = g.flatten(y);
        let t = g.constant_from(vec![target.len()], target.clone()).unwrap();
        g.mse(y, t).unwrap()
    })
}

pub fn lstm_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (steps, d, h) = (5, 3, 2);
    let target = random_vec(&mut rng, steps * h, 0.5);
    let leaves = Leaves {
        shapes: vec![vec![steps, d], vec![4 * h, d], vec![4 * h, h], vec![4 * h]],
        values: vec![
            random_vec(&mut rng, steps * d, 1.0),
            random_vec(&mut rng, 4 * h * d, 0.8),
            random_vec(&mut rng, 4 * h * h, 0.8),
            random_vec(&mut rng, 4 * h, 0.5),
        ],
    };
    check_graph(leaves, |g, v| {
        let y = g
            .lstm(v[0], LstmVars { w: v[1], u: v[2], b: v[3] })
            .unwrap();
        let y = g.flatten(y);
        let t = g.constant_from(vec![target.len()], target.clone()).unwrap();
        g.mse(y, t).unwrap()
    })
}

pub fn dense_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, o) = (6, 4);
    let target = random_vec(&mut rng, o, 1.0);
    let leaves = Leaves {
        shapes: vec![vec![i], vec![o, i], vec![o]],
        values: vec![
            random_vec(&mut rng, i, 1.0),
            random_vec(&mut rng, o * i, 1.0),
            random_vec(&mut rng, o, 1.0),
        ],
    };
    check_graph(leaves, |g, v| {
        let y = g.dense(v[0], v[1], v[2]).unwrap();
        let t = g.constant_from(vec![o], target.clone()).unwrap();
        g.mse(y, t).unwrap()
    })
}

pub fn mse_l1_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let target = random_vec(&mut rng, n, 2.0);
    // Keep weights away from the L1 kink.
    let weights: Vec<f64> = random_vec(&mut rng, 9, 1.0)
        .into_iter()
        .map(|w| if w.abs() < 0.05 { w + 0.1 } else { w })
        .collect();
    let leaves = Leaves {
        shapes: vec![vec![n], vec![3, 3]],
        values: vec![random_vec(&mut rng, n, 2.0), weights],
    };
    check_graph(leaves, |g, v| {
        let t = g.constant_from(vec![n], target.clone()).unwrap();
        let mse = g.mse(v[0], t).unwrap();
        let l1 = g.l1_penalty(&[v[1]]);
        let l1 = g.scale(l1, 0.3);
        g.add(mse, l1).unwrap()
    })
}

pub fn reduced_model_config() -> ModelConfig {
    ModelConfig {
        n_kernels: 3,
        kernel_width: 5,
        lstm_layers: 2,
        lstm_hidden: 2,
        dense_widths: vec![8, 4],
        grid_size: 9,
        reverse_sequence: false,
    }
}

/// Full reduced model, total loss with an L1 penalty and a non-trivial
/// output affine map, checked over every parameter.
pub fn model_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BpRegressor::init(&reduced_model_config(), seed).unwrap();
    model.output_offset = 110.0;
    model.output_scale = 12.0;
    for (t, is_bias) in model.parameters_mut().into_iter().zip(BpRegressor::init(&reduced_model_config(), 0).unwrap().bias_mask()) {
        if is_bias {
            for v in t.values_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let grids: Vec<MorphoTemporalGrid> = (0..3)
        .map(|_| MorphoTemporalGrid::from_rows(9, random_vec(&mut rng, 81, 1.0), 21).unwrap())
        .collect();
    let labels = random_vec(&mut rng, 3, 20.0);
    let batch: Vec<(&MorphoTemporalGrid, f64)> = grids
        .iter()
        .zip(&labels)
        .map(|(g, y)| (g, 110.0 + y))
        .collect();
    let lambda = 0.01;
    let (_, grads) = loss_and_gradients(&model, &batch, lambda).unwrap();
    let analytic = grads.concat();
    let start: Vec<f64> = model
        .parameters()
        .iter()
        .flat_map(|(_, t)| t.values().to_vec())
        .collect();
    let scale2 = model.output_scale.powi(2);
    let mut probe = model.clone();
    max_fd_error(
        |x| {
            let mut at = 0;
            for t in probe.parameters_mut() {
                let n = t.numel();
                t.values_mut().copy_from_slice(&x[at..at + n]);
                at += n;
            }
            total_loss(&probe, &batch, lambda).unwrap() / scale2
        },
        &start,
        &analytic,
    )
}
