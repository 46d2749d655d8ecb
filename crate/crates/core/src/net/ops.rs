//! Differentiable operators on flat row-major `f64` buffers.
//!
//! Every operator comes as a forward function and a backward function that
//! maps the upstream gradient to gradients of its inputs and parameters.
//! Feature maps are laid out channel-first: `(channels, d0, d1, d2)`. 1D and
//! 2D data use leading spatial dimensions of size 1.

/// Spatial shape of a feature map, always three-dimensional.
pub type Dims = [usize; 3];

pub fn volume(d: Dims) -> usize {
    d[0] * d[1] * d[2]
}

/// Geometry of a convolution: channels, kernel size and zero padding per
/// spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: Dims,
    pub pad: Dims,
}

impl ConvSpec {
    /// 1D convolution along the last axis.
    pub fn along_last(cin: usize, cout: usize, k: usize, pad: usize) -> Self {
        Self { cin, cout, kernel: [1, 1, k], pad: [0, 0, pad] }
    }

    /// `k × k` convolution over the last two axes with same padding.
    pub fn planar(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, kernel: [1, k, k], pad: [0, k / 2, k / 2] }
    }

    /// `k × k × k` convolution with same padding.
    pub fn volumetric(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, kernel: [k, k, k], pad: [k / 2, k / 2, k / 2] }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * volume(self.kernel)
    }

    pub fn out_dims(&self, input: Dims) -> Dims {
        [0, 1, 2].map(|a| input[a] + 2 * self.pad[a] + 1 - self.kernel[a])
    }
}

/// Valid output range along one axis for kernel tap `k`: output positions
/// `o` with `0 <= o + k - pad < input`.
#[inline]
fn tap_range(out: usize, input: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (input + pad).saturating_sub(k).min(out);
    (lo, hi.max(lo))
}

pub fn conv_forward(spec: &ConvSpec, x: &[f64], dims: Dims, w: &[f64], b: &[f64]) -> (Vec<f64>, Dims) {
    let od = spec.out_dims(dims);
    let (iv, ov) = (volume(dims), volume(od));
    debug_assert_eq!(x.len(), spec.cin * iv);
    debug_assert_eq!(w.len(), spec.weight_len());
    let kv = volume(spec.kernel);
    let mut y = vec![0.0; spec.cout * ov];
    for co in 0..spec.cout {
        let yc = &mut y[co * ov..(co + 1) * ov];
        yc.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..spec.cin {
            let xc = &x[ci * iv..(ci + 1) * iv];
            let wk = &w[(co * spec.cin + ci) * kv..(co * spec.cin + ci + 1) * kv];
            for_each_tap(spec, dims, od, |t, o0, o1, i0, i1, o2lo, o2hi, i2lo| {
                let wv = wk[t];
                if wv == 0.0 {
                    return;
                }
                let orow = (o0 * od[1] + o1) * od[2];
                let irow = (i0 * dims[1] + i1) * dims[2];
                let n = o2hi - o2lo;
                let dst = &mut yc[orow + o2lo..orow + o2lo + n];
                let src = &xc[irow + i2lo..irow + i2lo + n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            });
        }
    }
    (y, od)
}

/// Gradients of a convolution. `dx` is skipped when `need_dx` is false.
pub fn conv_backward(
    spec: &ConvSpec,
    x: &[f64],
    dims: Dims,
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let od = spec.out_dims(dims);
    let (iv, ov) = (volume(dims), volume(od));
    let kv = volume(spec.kernel);
    let mut dx = need_dx.then(|| vec![0.0; spec.cin * iv]);
    for co in 0..spec.cout {
        let dyc = &dy[co * ov..(co + 1) * ov];
        db[co] += dyc.iter().sum::<f64>();
        for ci in 0..spec.cin {
            let xc = &x[ci * iv..(ci + 1) * iv];
            let base = (co * spec.cin + ci) * kv;
            let wk = &w[base..base + kv];
            let dwk = &mut dw[base..base + kv];
            let mut dxc = dx.as_mut().map(|d| &mut d[ci * iv..(ci + 1) * iv]);
            for_each_tap(spec, dims, od, |t, o0, o1, i0, i1, o2lo, o2hi, i2lo| {
                let orow = (o0 * od[1] + o1) * od[2];
                let irow = (i0 * dims[1] + i1) * dims[2];
                let n = o2hi - o2lo;
                let g = &dyc[orow + o2lo..orow + o2lo + n];
                let src = &xc[irow + i2lo..irow + i2lo + n];
                dwk[t] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                if let Some(dxc) = dxc.as_deref_mut() {
                    let wv = wk[t];
                    for (d, gv) in dxc[irow + i2lo..irow + i2lo + n].iter_mut().zip(g) {
                        *d += wv * gv;
                    }
                }
            });
        }
    }
    dx
}

/// Calls `f(tap, o0, o1, i0, i1, o2_lo, o2_hi, i2_lo)` for every kernel tap
/// and every pair of output rows with a non-empty contiguous run along the
/// last axis.
#[inline]
fn for_each_tap(
    spec: &ConvSpec,
    dims: Dims,
    od: Dims,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize),
) {
    let [k0n, k1n, k2n] = spec.kernel;
    let mut t = 0;
    for k0 in 0..k0n {
        let (a0, b0) = tap_range(od[0], dims[0], k0, spec.pad[0]);
        for k1 in 0..k1n {
            let (a1, b1) = tap_range(od[1], dims[1], k1, spec.pad[1]);
            for k2 in 0..k2n {
                let (a2, b2) = tap_range(od[2], dims[2], k2, spec.pad[2]);
                if a2 < b2 {
                    let i2lo = a2 + k2 - spec.pad[2];
                    for o0 in a0..b0 {
                        let i0 = o0 + k0 - spec.pad[0];
                        for o1 in a1..b1 {
                            let i1 = o1 + k1 - spec.pad[1];
                            f(t, o0, o1, i0, i1, a2, b2, i2lo);
                        }
                    }
                }
                t += 1;
            }
        }
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Saved statistics of a group-norm forward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Group normalisation of `(channels, spatial)` data with per-channel scale
/// and shift.
pub fn group_norm_forward(
    x: &[f64],
    channels: usize,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, GroupNormCache) {
    let spatial = x.len() / channels;
    let per = channels / groups;
    let m = (per * spatial) as f64;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; groups];
    let mut y = vec![0.0; x.len()];
    for g in 0..groups {
        let range = g * per * spatial..(g + 1) * per * spatial;
        let xs = &x[range.clone()];
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        rstd[g] = r;
        for (h, v) in xhat[range].iter_mut().zip(xs) {
            *h = (v - mean) * r;
        }
    }
    for c in 0..channels {
        let s = c * spatial..(c + 1) * spatial;
        for (o, h) in y[s.clone()].iter_mut().zip(&xhat[s]) {
            *o = gamma[c] * h + beta[c];
        }
    }
    (y, GroupNormCache { xhat, rstd })
}

pub fn group_norm_backward(
    cache: &GroupNormCache,
    dy: &[f64],
    channels: usize,
    groups: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let spatial = dy.len() / channels;
    let per = channels / groups;
    let m = (per * spatial) as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for c in 0..channels {
        let s = c * spatial..(c + 1) * spatial;
        let (mut sg, mut sb) = (0.0, 0.0);
        for ((d, g), h) in dxhat[s.clone()].iter_mut().zip(&dy[s.clone()]).zip(&cache.xhat[s]) {
            *d = g * gamma[c];
            sg += g * h;
            sb += g;
        }
        dgamma[c] += sg;
        dbeta[c] += sb;
    }
    let mut dx = vec![0.0; dy.len()];
    for g in 0..groups {
        let range = g * per * spatial..(g + 1) * per * spatial;
        let d = &dxhat[range.clone()];
        let h = &cache.xhat[range.clone()];
        let sum_d = d.iter().sum::<f64>();
        let sum_dh = d.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        let r = cache.rstd[g];
        for ((o, dv), hv) in dx[range].iter_mut().zip(d).zip(h) {
            *o = r / m * (m * dv - sum_d - hv * sum_dh);
        }
    }
    dx
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// `pre` is the relu input.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| sigmoid(*v)).collect()
}

/// `y` is the sigmoid output.
pub fn sigmoid_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(s, g)| g * s * (1.0 - s)).collect()
}

pub fn add_forward(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Both summands receive the upstream gradient unchanged.
pub fn add_backward(dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (dy.to_vec(), dy.to_vec())
}

/// Output size of 2×2 pooling on the last two axes (odd sizes round up).
pub fn pooled_dims(d: Dims) -> Dims {
    [d[0], d[1].div_ceil(2), d[2].div_ceil(2)]
}

/// 2×2 average pooling over the last two axes. Windows hanging over an odd
/// edge average only the cells they contain.
pub fn downsample_forward(x: &[f64], channels: usize, dims: Dims) -> (Vec<f64>, Dims) {
    let od = pooled_dims(dims);
    let mut y = vec![0.0; channels * volume(od)];
    for c in 0..channels * dims[0] {
        for oy in 0..od[1] {
            for ox in 0..od[2] {
                let (mut s, mut n) = (0.0, 0.0);
                for iy in 2 * oy..(2 * oy + 2).min(dims[1]) {
                    for ix in 2 * ox..(2 * ox + 2).min(dims[2]) {
                        s += x[(c * dims[1] + iy) * dims[2] + ix];
                        n += 1.0;
                    }
                }
                y[(c * od[1] + oy) * od[2] + ox] = s / n;
            }
        }
    }
    (y, od)
}

pub fn downsample_backward(dy: &[f64], channels: usize, dims: Dims) -> Vec<f64> {
    let od = pooled_dims(dims);
    let mut dx = vec![0.0; channels * volume(dims)];
    for c in 0..channels * dims[0] {
        for oy in 0..od[1] {
            for ox in 0..od[2] {
                let ys = 2 * oy..(2 * oy + 2).min(dims[1]);
                let xs = 2 * ox..(2 * ox + 2).min(dims[2]);
                let n = (ys.len() * xs.len()) as f64;
                let g = dy[(c * od[1] + oy) * od[2] + ox] / n;
                for iy in ys {
                    for ix in xs.clone() {
                        dx[(c * dims[1] + iy) * dims[2] + ix] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour upsampling over the last two axes to `target`, the
/// inverse shape of [`pooled_dims`].
pub fn upsample_forward(x: &[f64], channels: usize, target: Dims) -> Vec<f64> {
    let sd = pooled_dims(target);
    let mut y = vec![0.0; channels * volume(target)];
    for c in 0..channels * target[0] {
        for iy in 0..target[1] {
            for ix in 0..target[2] {
                y[(c * target[1] + iy) * target[2] + ix] = x[(c * sd[1] + iy / 2) * sd[2] + ix / 2];
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &[f64], channels: usize, target: Dims) -> Vec<f64> {
    let sd = pooled_dims(target);
    let mut dx = vec![0.0; channels * volume(sd)];
    for c in 0..channels * target[0] {
        for iy in 0..target[1] {
            for ix in 0..target[2] {
                dx[(c * sd[1] + iy / 2) * sd[2] + ix / 2] += dy[(c * target[1] + iy) * target[2] + ix];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let spec = ConvSpec::planar(1, 1, 3);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let (y, od) = conv_forward(&spec, &x, [1, 3, 4], &w, &[0.5]);
        assert_eq!(od, [1, 3, 4]);
        assert_eq!(y, x.iter().map(|v| v + 0.5).collect::<Vec<_>>());
    }

    #[test]
    fn conv_box_kernel_counts_neighbours() {
        let spec = ConvSpec::planar(1, 1, 3);
        let (y, _) = conv_forward(&spec, &[1.0; 9], [1, 3, 3], &[1.0; 9], &[0.0]);
        assert_eq!(y, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn collapsing_1d_conv_is_a_dot_product() {
        let spec = ConvSpec::along_last(1, 1, 4, 0);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let (y, od) = conv_forward(&spec, &x, [1, 2, 4], &[1.0, 0.0, 0.0, 2.0], &[0.0]);
        assert_eq!(od, [1, 2, 1]);
        assert_eq!(y, vec![9.0, 21.0]);
    }

    #[test]
    fn group_norm_normalises_each_group() {
        let x: Vec<f64> = (0..16).map(|v| (v * v) as f64).collect();
        let (y, _) = group_norm_forward(&x, 4, 2, &[1.0; 4], &[0.0; 4]);
        for g in 0..2 {
            let s = &y[g * 8..(g + 1) * 8];
            let mean = s.iter().sum::<f64>() / 8.0;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn pooling_shapes_and_values() {
        let x: Vec<f64> = (0..15).map(|v| v as f64).collect();
        let (y, od) = downsample_forward(&x, 1, [1, 3, 5]);
        assert_eq!(od, [1, 2, 3]);
        assert_eq!(y, vec![3.0, 5.0, 6.5, 10.5, 12.5, 14.0]);
        let up = upsample_forward(&y, 1, [1, 3, 5]);
        assert_eq!(up[0], 3.0);
        assert_eq!(up[14], 14.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
    }
}
