//! Finite-difference verification of the reverse-mode gradients.
//!
//! The oracle here never touches the backward path: it re-evaluates the
//! forward computation at perturbed points (central differences, f64,
//! epsilon 1e-5) and compares against what the tape produced. A scalar loss
//! is formed as the dot product of each output with a fixed random weight
//! tensor so that every output coordinate influences the check.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{
    build_csl_module, build_detector, CslModuleSpec, CslVariant, DetectorConfig, GraphBuilder,
    Network,
};
use crate::ops::{Padding, PoolKind};
use crate::tape::{GradTape, Var};
use crate::tensor::{MacCounter, Shape, Tensor};

const EPSILON: f64 = 1e-5;

/// Tolerance for primitive and single-block checks.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end toy detector check.
pub const DETECTOR_TOL: f64 = 1e-3;

/// Result of one gradient comparison.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Number of scalar coordinates compared.
    pub coords: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Guarded relative error `|a - b| / max(|a|, |b|, 1e-4)`. Gradient
/// coordinates in these graphs are O(0.01..10), so the floor only mutes
/// finite-difference noise on effectively-zero coordinates; a wrong sign,
/// factor, or missing term on a live coordinate still reads as O(1).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn loss_weights(shapes: &[Shape], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    shapes
        .iter()
        .map(|&s| Tensor::from_fn(s, |_, _, _, _| rng.random::<f64>() * 2.0 - 1.0))
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks one primitive: `build` assembles the op on a fresh tape from leaf
/// vars (same order as `leaves`), and the comparison runs over the gradient
/// of every leaf element.
fn check_case(
    name: &str,
    leaves: &[Tensor<f64>],
    tol: f64,
    seed: u64,
    build: impl Fn(&mut GradTape<f64>, &[Var]) -> Result<Var>,
) -> Result<CaseResult> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<(GradTape<f64>, Vec<Var>, Var)> {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(leaves)?;
    let weights = loss_weights(&[tape.value(out).shape()], seed);
    let grads = tape.backward(alloc::vec![(out, weights[0].clone())])?;

    let loss_at = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = eval(tensors)?;
        Ok(dot(tape.value(out), &weights[0]))
    };

    let mut max_err = 0.0f64;
    let mut coords = 0;
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let ad = grads
            .get(vars[li])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; leaf.shape().volume()]);
        for ei in 0..leaf.shape().volume() {
            let orig = work[li].data()[ei];
            work[li].data_mut()[ei] = orig + EPSILON;
            let up = loss_at(&work)?;
            work[li].data_mut()[ei] = orig - EPSILON;
            let down = loss_at(&work)?;
            work[li].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * EPSILON);
            max_err = max_err.max(rel_err(ad[ei], fd));
            coords += 1;
        }
    }
    Ok(CaseResult {
        name: name.to_string(),
        max_rel_err: max_err,
        tolerance: tol,
        coords,
    })
}

/// How many finite-difference probes a network check runs.
#[derive(Clone, Copy, Debug)]
pub struct CheckBudget {
    /// Coordinates checked per parameter tensor (`None` = all).
    pub per_tensor: Option<usize>,
    /// Input coordinates checked (`None` = all).
    pub input_coords: Option<usize>,
    /// Random full-gradient directional probes: the loss is differenced
    /// along a dense random direction over the input and every parameter at
    /// once and compared with the inner product of that direction with the
    /// reverse-mode gradient, so every coordinate participates even when
    /// the per-coordinate sets are sampled.
    pub directions: usize,
}

impl CheckBudget {
    /// Every coordinate, no directional probes.
    pub fn exhaustive() -> Self {
        CheckBudget {
            per_tensor: None,
            input_coords: None,
            directions: 0,
        }
    }

    /// Sampled coordinates plus directional probes, for larger graphs.
    pub fn sampled(per_tensor: usize, input_coords: usize, directions: usize) -> Self {
        CheckBudget {
            per_tensor: Some(per_tensor),
            input_coords: Some(input_coords),
            directions,
        }
    }
}

fn pick_coords(total: usize, budget: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match budget {
        None => (0..total).collect(),
        Some(n) if n >= total => (0..total).collect(),
        Some(n) => {
            let mut all: Vec<usize> = (0..total).collect();
            for i in 0..n {
                let j = rng.random_range(i..total);
                all.swap(i, j);
            }
            all.truncate(n);
            all
        }
    }
}

/// Checks a whole network: gradients of a weighted-sum loss with respect to
/// the input and every parameter.
pub fn check_network(
    name: &str,
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    tol: f64,
    seed: u64,
) -> Result<CaseResult> {
    check_network_with(name, net, input, tol, seed, CheckBudget::exhaustive())
}

/// [`check_network`] with an explicit probe budget.
pub fn check_network_with(
    name: &str,
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    tol: f64,
    seed: u64,
    budget: CheckBudget,
) -> Result<CaseResult> {
    let traced = net.forward_traced(input)?;
    let out_shapes: Vec<Shape> = traced
        .outputs
        .iter()
        .map(|&v| traced.tape.value(v).shape())
        .collect();
    let weights = loss_weights(&out_shapes, seed);
    let param_vars = traced.params.clone();
    let input_var = traced.input;
    let seeds: Vec<(Var, Tensor<f64>)> = traced
        .outputs
        .iter()
        .copied()
        .zip(weights.iter().cloned())
        .collect();
    let grads = traced.tape.backward(seeds)?;

    let loss_of = |net: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        let outs = net.forward(x, &mut MacCounter::new())?;
        Ok(outs.iter().zip(&weights).map(|(o, w)| dot(o, w)).sum())
    };

    let mut max_err = 0.0f64;
    let mut coords = 0;
    let mut pick_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);

    // Input gradient.
    let ad_input = grads
        .get(input_var)
        .map(|t| t.data().to_vec())
        .unwrap_or_default();
    let mut x = input.clone();
    for ei in pick_coords(input.shape().volume(), budget.input_coords, &mut pick_rng) {
        let orig = x.data()[ei];
        x.data_mut()[ei] = orig + EPSILON;
        let up = loss_of(net, &x)?;
        x.data_mut()[ei] = orig - EPSILON;
        let down = loss_of(net, &x)?;
        x.data_mut()[ei] = orig;
        let fd = (up - down) / (2.0 * EPSILON);
        max_err = max_err.max(rel_err(ad_input[ei], fd));
        coords += 1;
    }

    // Parameter gradients.
    let all_pids: Vec<_> = net.param_ids().collect();
    for (pi, pvar) in param_vars.iter().enumerate() {
        let pid = all_pids[pi];
        let base = net.param(pid).value.clone();
        let ad = grads
            .get(*pvar)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; base.shape().volume()]);
        for ei in pick_coords(base.shape().volume(), budget.per_tensor, &mut pick_rng) {
            let mut t = base.clone();
            t.data_mut()[ei] += EPSILON;
            net.set_param(pid, t)?;
            let up = loss_of(net, input)?;
            let mut t = base.clone();
            t.data_mut()[ei] -= EPSILON;
            net.set_param(pid, t)?;
            let down = loss_of(net, input)?;
            let fd = (up - down) / (2.0 * EPSILON);
            max_err = max_err.max(rel_err(ad[ei], fd));
            coords += 1;
        }
        net.set_param(pid, base)?;
    }

    // Directional probes over the concatenated (input, parameters) space.
    for d in 0..budget.directions {
        let mut dir_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1c0 ^ (d as u64) << 32);
        let dir_input = uniform(input.shape(), &mut dir_rng);
        let dir_params: Vec<Tensor<f64>> = all_pids
            .iter()
            .map(|&pid| uniform(net.param(pid).value.shape(), &mut dir_rng))
            .collect();
        let mut expected: f64 = ad_input
            .iter()
            .zip(dir_input.data())
            .map(|(g, v)| g * v)
            .sum();
        for (pi, pvar) in param_vars.iter().enumerate() {
            if let Some(g) = grads.get(*pvar) {
                expected += dot(g, &dir_params[pi]);
            }
        }
        let bases: Vec<Tensor<f64>> = all_pids
            .iter()
            .map(|&pid| net.param(pid).value.clone())
            .collect();
        let mut losses = [0.0f64; 2];
        for (si, sign) in [1.0f64, -1.0].iter().enumerate() {
            let mut xs = input.clone();
            for (v, dv) in xs.data_mut().iter_mut().zip(dir_input.data()) {
                *v += sign * EPSILON * dv;
            }
            for (pi, &pid) in all_pids.iter().enumerate() {
                let mut t = bases[pi].clone();
                for (v, dv) in t.data_mut().iter_mut().zip(dir_params[pi].data()) {
                    *v += sign * EPSILON * dv;
                }
                net.set_param(pid, t)?;
            }
            losses[si] = loss_of(net, &xs)?;
        }
        for (pi, &pid) in all_pids.iter().enumerate() {
            net.set_param(pid, bases[pi].clone())?;
        }
        let fd = (losses[0] - losses[1]) / (2.0 * EPSILON);
        max_err = max_err.max(rel_err(expected, fd));
        coords += 1;
    }

    Ok(CaseResult {
        name: name.to_string(),
        max_rel_err: max_err,
        tolerance: tol,
        coords,
    })
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Input whose window maxima sit far apart relative to the FD step, so max
/// pooling stays away from argmax ties.
fn separated(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.volume();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut t = Tensor::zeros(shape);
    for (i, &o) in order.iter().enumerate() {
        t.data_mut()[i] = o as f64 * 0.05;
    }
    t
}

/// Gradient checks for every tensor primitive at small shapes.
pub fn check_primitives(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let x_shape = Shape::new(1, 4, 6, 6);

    let x = uniform(x_shape, &mut rng);
    let w = uniform(Shape::new(3, 4, 3, 3), &mut rng);
    results.push(check_case(
        "conv2d 3x3 same",
        &[x, w],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.conv2d(v[0], v[1], 1, Padding::Same),
    )?);

    let x = uniform(x_shape, &mut rng);
    let w = uniform(Shape::new(2, 4, 3, 3), &mut rng);
    results.push(check_case(
        "conv2d 3x3 stride 2 valid",
        &[x, w],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.conv2d(v[0], v[1], 2, Padding::Valid),
    )?);

    let x = uniform(x_shape, &mut rng);
    let w = uniform(Shape::new(8, 1, 3, 3), &mut rng);
    results.push(check_case(
        "depthwise 3x3 multiplier 2",
        &[x, w],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.depthwise_conv2d(v[0], v[1], 1, Padding::Same),
    )?);

    let x = uniform(x_shape, &mut rng);
    let w = uniform(Shape::new(5, 4, 1, 1), &mut rng);
    results.push(check_case(
        "pointwise",
        &[x, w],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.pointwise_conv2d(v[0], v[1]),
    )?);

    let x = uniform(x_shape, &mut rng);
    let b = uniform(Shape::new(1, 4, 1, 1), &mut rng);
    results.push(check_case(
        "bias_add",
        &[x, b],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.bias_add(v[0], v[1]),
    )?);

    let x = uniform(x_shape, &mut rng);
    let scale = uniform(Shape::new(1, 4, 1, 1), &mut rng);
    let shift = uniform(Shape::new(1, 4, 1, 1), &mut rng);
    results.push(check_case(
        "affine_channels",
        &[x, scale, shift],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.affine_channels(v[0], v[1], v[2]),
    )?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case("mish", &[x], PRIMITIVE_TOL, seed, |t, v| {
        Ok(t.mish(v[0]))
    })?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case("sigmoid", &[x], PRIMITIVE_TOL, seed, |t, v| {
        Ok(t.sigmoid(v[0]))
    })?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case(
        "avg_pool 2x2/2",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.pool2d(v[0], PoolKind::Avg, 2, 2),
    )?);

    let x = separated(x_shape, &mut rng);
    results.push(check_case(
        "max_pool 2x2/2",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.pool2d(v[0], PoolKind::Max, 2, 2),
    )?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case(
        "adaptive_avg_pool 6->3",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.adaptive_avg_pool(v[0], 3, 3),
    )?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case(
        "global_avg_pool",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| Ok(t.global_avg_pool(v[0])),
    )?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case(
        "resize up 6->9",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.resize_nearest(v[0], 9, 9),
    )?);

    let x = uniform(x_shape, &mut rng);
    results.push(check_case(
        "resize down 6->4",
        &[x],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.resize_nearest(v[0], 4, 4),
    )?);

    let a = uniform(Shape::new(1, 2, 6, 6), &mut rng);
    let b = uniform(Shape::new(1, 3, 6, 6), &mut rng);
    results.push(check_case(
        "concat_channels",
        &[a, b],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.concat_channels(v),
    )?);

    let a = uniform(x_shape, &mut rng);
    let b = uniform(x_shape, &mut rng);
    let c = uniform(x_shape, &mut rng);
    results.push(check_case(
        "add x3",
        &[a, b, c],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.add(v),
    )?);

    let x = uniform(x_shape, &mut rng);
    let gate = uniform(Shape::new(1, 4, 1, 1), &mut rng);
    results.push(check_case(
        "scale_channels",
        &[x, gate],
        PRIMITIVE_TOL,
        seed,
        |t, v| t.scale_channels(v[0], v[1]),
    )?);

    Ok(results)
}

/// Gradient checks for whole CSL blocks: both expansion ratios, all three
/// variants, at an (1, 8, 8, 8) input.
pub fn check_csl_modules(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc51);
    let mut results = Vec::new();
    for t in [2usize, 3] {
        for variant in [
            CslVariant::Plain,
            CslVariant::Attention,
            CslVariant::Downsample,
        ] {
            let shape = Shape::new(1, 8, 8, 8);
            let mut b = GraphBuilder::<f64>::new(shape, seed);
            let input = b.input();
            let spec = CslModuleSpec {
                in_ch: 8,
                out_ch: 8,
                expansion: t,
                kernel: 3,
                variant,
                se_reduction: 4,
            };
            let out = build_csl_module(&mut b, input, &spec, "m")?;
            let mut net = b.finish(alloc::vec![out]);
            let x = uniform(shape, &mut rng);
            let name = format!("csl t={t} {variant:?}");
            results.push(check_network(&name, &mut net, &x, PRIMITIVE_TOL, seed)?);
        }
    }
    Ok(results)
}

/// End-to-end gradient check of the toy detector at 64x64: a sampled
/// coordinate set (every parameter tensor probed) plus dense directional
/// probes covering all coordinates at once.
pub fn check_toy_detector(seed: u64) -> Result<CaseResult> {
    let cfg = DetectorConfig::toy();
    let mut net = build_detector::<f64>(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde7ec7);
    let x = uniform(Shape::new(1, 3, 64, 64), &mut rng);
    check_network_with(
        "toy detector 64x64",
        &mut net,
        &x,
        DETECTOR_TOL,
        seed,
        CheckBudget::sampled(24, 192, 8),
    )
}

/// The whole verification suite. `fault` optionally biases the first
/// comparison to exercise failure reporting end to end.
pub fn run_full_suite(seed: u64, fault: Option<f64>) -> Result<Vec<CaseResult>> {
    let mut results = check_primitives(seed)?;
    results.extend(check_csl_modules(seed)?);
    results.push(check_toy_detector(seed)?);
    if let Some(bias) = fault {
        if let Some(first) = results.first_mut() {
            first.max_rel_err += bias.abs();
            first.name = format!("{} [fault injected]", first.name);
        }
    }
    Ok(results)
}
