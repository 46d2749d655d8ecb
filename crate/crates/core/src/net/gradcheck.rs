//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::focal_loss;
use super::ops::{self, ConvSpec, Dims};
use super::{build_network, FrameFeatures, NetworkConfig, ParamKind};
use crate::cube::{CellGeometry, Extent};

pub const FD_STEP: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic[i]` and the central difference
/// of `f` at `x` along coordinate `i`, over `indices`.
pub fn grad_check(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], indices: &[usize]) -> f64 {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            relative_error(analytic[i], (up - down) / (2.0 * FD_STEP))
        })
        .fold(0.0, f64::max)
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of checking one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_error: f64,
}

struct Rand(ChaCha8Rng);

impl Rand {
    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.0.random_range(-1.0..1.0)).collect()
    }

    /// Values bounded away from zero, so ReLU kinks are never straddled.
    fn off_zero(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m = self.0.random_range(0.05..1.0);
                if self.0.random_bool(0.5) { m } else { -m }
            })
            .collect()
    }
}

fn check_conv(rng: &mut Rand, name: &str, spec: ConvSpec, dims: Dims) -> OpCheck {
    let x = rng.vec(spec.cin * ops::volume(dims));
    let w = rng.vec(spec.weight_len());
    let b = rng.vec(spec.cout);
    let od = spec.out_dims(dims);
    let r = rng.vec(spec.cout * ops::volume(od));
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let dx = ops::conv_backward(&spec, &x, dims, &w, &r, &mut dw, &mut db, true).unwrap();
    let ex = grad_check(&|v| dot(&ops::conv_forward(&spec, v, dims, &w, &b).0, &r), &x, &dx, &all(x.len()));
    let ew = grad_check(&|v| dot(&ops::conv_forward(&spec, &x, dims, v, &b).0, &r), &w, &dw, &all(w.len()));
    let eb = grad_check(&|v| dot(&ops::conv_forward(&spec, &x, dims, &w, v).0, &r), &b, &db, &all(b.len()));
    OpCheck { name: name.into(), max_rel_error: ex.max(ew).max(eb) }
}

fn check_group_norm(rng: &mut Rand) -> OpCheck {
    let (c, g, s) = (6, 3, 10);
    let x = rng.vec(c * s);
    let gamma = rng.vec(c);
    let beta = rng.vec(c);
    let r = rng.vec(c * s);
    let (_, cache) = ops::group_norm_forward(&x, c, g, &gamma, &beta);
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    let dx = ops::group_norm_backward(&cache, &r, c, g, &gamma, &mut dg, &mut db);
    let f = |x: &[f64], gm: &[f64], bt: &[f64]| dot(&ops::group_norm_forward(x, c, g, gm, bt).0, &r);
    let ex = grad_check(&|v| f(v, &gamma, &beta), &x, &dx, &all(x.len()));
    let eg = grad_check(&|v| f(&x, v, &beta), &gamma, &dg, &all(c));
    let eb = grad_check(&|v| f(&x, &gamma, v), &beta, &db, &all(c));
    OpCheck { name: "group_norm".into(), max_rel_error: ex.max(eg).max(eb) }
}

fn check_elementwise(rng: &mut Rand) -> Vec<OpCheck> {
    let n = 40;
    let x = rng.off_zero(n);
    let r = rng.vec(n);
    let relu = grad_check(&|v| dot(&ops::relu_forward(v), &r), &x, &ops::relu_backward(&x, &r), &all(n));
    let y = ops::sigmoid_forward(&x);
    let sig = grad_check(&|v| dot(&ops::sigmoid_forward(v), &r), &x, &ops::sigmoid_backward(&y, &r), &all(n));
    let other = rng.vec(n);
    let (da, db) = ops::add_backward(&r);
    let ea = grad_check(&|v| dot(&ops::add_forward(v, &other), &r), &x, &da, &all(n));
    let eb = grad_check(&|v| dot(&ops::add_forward(&other, v), &r), &x, &db, &all(n));
    vec![
        OpCheck { name: "relu".into(), max_rel_error: relu },
        OpCheck { name: "sigmoid".into(), max_rel_error: sig },
        OpCheck { name: "residual_add".into(), max_rel_error: ea.max(eb) },
    ]
}

fn check_resampling(rng: &mut Rand) -> Vec<OpCheck> {
    let (c, dims) = (2, [1, 5, 7]);
    let x = rng.vec(c * ops::volume(dims));
    let r = rng.vec(c * ops::volume(ops::pooled_dims(dims)));
    let dx = ops::downsample_backward(&r, c, dims);
    let down = grad_check(&|v| dot(&ops::downsample_forward(v, c, dims).0, &r), &x, &dx, &all(x.len()));
    let small = rng.vec(c * ops::volume(ops::pooled_dims(dims)));
    let r2 = rng.vec(c * ops::volume(dims));
    let ds = ops::upsample_backward(&r2, c, dims);
    let up = grad_check(&|v| dot(&ops::upsample_forward(v, c, dims), &r2), &small, &ds, &all(small.len()));
    vec![
        OpCheck { name: "downsample".into(), max_rel_error: down },
        OpCheck { name: "upsample".into(), max_rel_error: up },
    ]
}

/// Focal loss gradient check at random logits and labels.
///
/// The loss is a mean of independent per-voxel terms, so each coordinate is
/// differenced on its own one-voxel loss and compared with `n` times the
/// analytic gradient of the full mean.
pub fn check_focal(seed: u64, alpha: f64, gamma: f64) -> OpCheck {
    let mut rng = Rand(ChaCha8Rng::seed_from_u64(seed));
    let n = 200;
    let z: Vec<f64> = rng.vec(n).into_iter().map(|v| 4.0 * v).collect();
    let y: Vec<bool> = (0..n).map(|_| rng.0.random_bool(0.3)).collect();
    let (_, g) = focal_loss(&z, &y, alpha, gamma).unwrap();
    let e = (0..n)
        .map(|i| {
            let f = |v: &[f64]| focal_loss(v, &y[i..=i], alpha, gamma).unwrap().0;
            grad_check(&f, &z[i..=i], &[g[i] * n as f64], &[0])
        })
        .fold(0.0, f64::max);
    OpCheck { name: format!("focal_loss(alpha={alpha}, gamma={gamma})"), max_rel_error: e }
}

fn tiny_geometry() -> CellGeometry {
    CellGeometry {
        range_bins: 5,
        azimuth_bins: 4,
        elevation_bins: 3,
        doppler_bins: 4,
        range_extent: Extent::new(2.0, 7.0),
        azimuth_extent: Extent::new(-0.4, 0.4),
        elevation_extent: Extent::new(-0.2, 0.2),
        doppler_extent: Extent::new(-2.0, 2.0),
    }
}

/// End-to-end check of the network's parameter gradients under the focal
/// loss, on a tiny geometry with random inputs.
pub fn check_network(seed: u64, temporal_layers: usize) -> OpCheck {
    let g = tiny_geometry();
    let config = NetworkConfig {
        backbone_blocks: 2,
        base_channels: 4,
        temporal_layers,
        temporal_window: 3,
        groupnorm_groups: 2,
        seed,
    };
    let mut net = build_network(&config, &g).expect("valid config");
    let mut rng = Rand(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    // Random norm scales and shifts, and random values for kernels that
    // start at zero.
    for p in net.params.iter_mut() {
        if p.kind != ParamKind::Kernel || p.data.iter().all(|v| *v == 0.0) {
            p.data = rng.vec(p.data.len()).into_iter().map(|v| v + 0.2 * v.signum()).collect();
        }
    }
    let (r, a, d) = g.cube_dims();
    let frames: Vec<FrameFeatures> = (0..3)
        .map(|_| FrameFeatures {
            power: rng.vec(r * a * d).into_iter().map(|v| 2.0 * v.abs()).collect(),
            elevation: rng.vec(r * a),
        })
        .collect();
    let window: Vec<&FrameFeatures> = frames.iter().collect();
    let labels: Vec<bool> = (0..g.voxel_count()).map(|_| rng.0.random_bool(0.3)).collect();
    let (logits, trace) = net.forward_features(&window);
    let (_, dl) = focal_loss(&logits, &labels, 0.75, 2.0).unwrap();
    let mut grads = net.zero_grads();
    net.backward(&window, &trace, &dl, &mut grads);

    let mut worst: f64 = 0.0;
    for pi in 0..net.params.len() {
        let len = net.params[pi].data.len();
        let step = (len / 12).max(1);
        let idx: Vec<usize> = (0..len).step_by(step).collect();
        let base = net.params[pi].data.clone();
        let f = |v: &[f64]| {
            let mut n2 = net.clone();
            n2.params[pi].data.copy_from_slice(v);
            let (l, _) = n2.forward_features(&window);
            focal_loss(&l, &labels, 0.75, 2.0).unwrap().0
        };
        worst = worst.max(grad_check(&f, &base, &grads[pi], &idx));
    }
    OpCheck { name: format!("network(K={temporal_layers})"), max_rel_error: worst }
}

/// Gradient checks for every differentiable operator.
pub fn check_operators(seed: u64) -> Vec<OpCheck> {
    let mut rng = Rand(ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![
        check_conv(&mut rng, "conv1d", ConvSpec::along_last(2, 3, 3, 1), [1, 4, 6]),
        check_conv(&mut rng, "conv1d_collapse", ConvSpec::along_last(3, 2, 5, 0), [1, 3, 5]),
        check_conv(&mut rng, "conv2d", ConvSpec::planar(3, 2, 3), [1, 5, 6]),
        check_conv(&mut rng, "conv3d", ConvSpec::volumetric(2, 2, 3), [3, 4, 3]),
        check_group_norm(&mut rng),
    ];
    out.extend(check_elementwise(&mut rng));
    out.extend(check_resampling(&mut rng));
    out.push(check_focal(seed, 0.99, 2.0));
    out.push(check_network(seed, 0));
    out.push(check_network(seed, 2));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_operators_pass() {
        for c in check_operators(3) {
            assert!(c.max_rel_error < 1e-4, "{} {}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn focal_gradient_is_tight() {
        for (a, g) in [(0.99, 2.0), (0.25, 0.0), (0.5, 1.5)] {
            let c = check_focal(17, a, g);
            assert!(c.max_rel_error < 1e-5, "{c:?}");
        }
    }
}
