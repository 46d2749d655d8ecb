use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvSpec, Dims, GroupNormCache};
use super::{NetError, NetworkConfig};
use crate::cube::{CellGeometry, RadarCubePair};

/// Peak height of each elevation membership channel.
pub const HAT_GAIN: f64 = 2.0;
/// Initial occupancy probability encoded in the head bias.
pub const HEAD_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Kernel,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Self::Kernel, Self::Bias, Self::NormScale, Self::NormShift].get(c as usize).copied()
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Name prefix of the temporal head's tensors.
pub const TEMPORAL_PREFIX: &str = "temporal.";

impl Tensor {
    /// Kernels of the encoder, backbone and output head carry the L1/L2
    /// penalties; temporal kernels, biases and norm parameters do not.
    pub fn regularized(&self) -> bool {
        self.kind == ParamKind::Kernel && !self.name.starts_with(TEMPORAL_PREFIX)
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    spec: ConvSpec,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    c1: Conv,
    n1: Norm,
    c2: Conv,
    n2: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    enc1: Conv,
    enc_n1: Norm,
    enc2: Conv,
    enc_n2: Norm,
    stem: Conv,
    stem_n: Norm,
    full: Vec<Block>,
    half: Vec<Block>,
    head: Conv,
    temporal: Vec<Conv>,
}

struct Builder {
    seed: u64,
    params: Vec<Tensor>,
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a, so a parameter's initial values depend only on its name.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Builder {
    fn push(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.params.push(Tensor { name, kind, shape, data });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, spec: ConvSpec) -> Conv {
        let fan_in = spec.cin * ops::volume(spec.kernel);
        let std = (2.0 / fan_in as f64).sqrt();
        let wname = format!("{name}.weight");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(name_stream(&wname));
        let data = (0..spec.weight_len())
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let [k0, k1, k2] = spec.kernel;
        let w = self.push(wname, ParamKind::Kernel, vec![spec.cout, spec.cin, k0, k1, k2], data);
        let b = self.push(format!("{name}.bias"), ParamKind::Bias, vec![spec.cout], vec![0.0; spec.cout]);
        Conv { w, b, spec }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self.push(format!("{name}.scale"), ParamKind::NormScale, vec![channels], vec![1.0; channels]);
        let beta = self.push(format!("{name}.shift"), ParamKind::NormShift, vec![channels], vec![0.0; channels]);
        Norm { gamma, beta, channels }
    }

    fn block(&mut self, name: &str, c: usize) -> Block {
        Block {
            c1: self.conv(&format!("{name}.conv1"), ConvSpec::planar(c, c, 3)),
            n1: self.norm(&format!("{name}.norm1"), c),
            c2: self.conv(&format!("{name}.conv2"), ConvSpec::planar(c, c, 3)),
            n2: self.norm(&format!("{name}.norm2"), c),
        }
    }
}

fn build_layout(config: &NetworkConfig, geometry: &CellGeometry, seed: u64) -> (Layout, Vec<Tensor>) {
    let c = config.base_channels;
    let d = geometry.doppler_bins;
    let t = config.temporal_window;
    let mut b = Builder { seed, params: Vec::new() };
    let enc1 = b.conv("doppler.conv1", ConvSpec::along_last(1, c, 3, 1));
    let enc_n1 = b.norm("doppler.norm1", c);
    let enc2 = b.conv("doppler.conv2", ConvSpec::along_last(c, c, d, 0));
    let enc_n2 = b.norm("doppler.norm2", c);
    let e = geometry.elevation_bins;
    let stem = b.conv("backbone.stem", ConvSpec::planar(c + e, c, 3));
    let stem_n = b.norm("backbone.stem_norm", c);
    let (nf, nh) = config.block_split();
    let full = (0..nf).map(|i| b.block(&format!("backbone.block{i}"), c)).collect();
    let half = (nf..nf + nh).map(|i| b.block(&format!("backbone.block{i}"), c)).collect();
    let head = b.conv("head", ConvSpec::planar(c + e, e, 3));
    b.params[head.b].data.iter_mut().for_each(|v| *v = (HEAD_PRIOR / (1.0 - HEAD_PRIOR)).ln());
    let temporal: Vec<Conv> = (0..config.temporal_layers)
        .map(|i| {
            let cout = if i + 1 == config.temporal_layers { 1 } else { t };
            b.conv(&format!("{TEMPORAL_PREFIX}layer{i}"), ConvSpec::volumetric(t, cout, 3))
        })
        .collect();
    if let Some(last) = temporal.last() {
        b.params[last.w].data.fill(0.0);
    }
    let layout = Layout { enc1, enc_n1, enc2, enc_n2, stem, stem_n, full, half, head, temporal };
    (layout, b.params)
}

/// The micro detector: a Doppler encoder, a residual 2D backbone over
/// range × azimuth, an output head with one logit per elevation bin and an
/// optional 3D temporal head over a window of frames.
///
/// The temporal head convolves the stacked per-frame occupancy
/// probabilities and adds its output to the center frame's logits. Its
/// last kernel starts at zero, so an untrained head is the identity.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub geometry: CellGeometry,
    pub params: Vec<Tensor>,
    layout: Layout,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.geometry == other.geometry && self.params == other.params
    }
}

pub fn build_network(config: &NetworkConfig, geometry: &CellGeometry) -> Result<Network, NetError> {
    config.validate()?;
    geometry.validate()?;
    let (layout, params) = build_layout(config, geometry, config.seed);
    Ok(Network { config: *config, geometry: *geometry, params, layout })
}

/// Closed-form parameter count; see `docs/formats.md`.
pub fn parameter_count_formula(config: &NetworkConfig, doppler_bins: usize, elevation_bins: usize) -> usize {
    let c = config.base_channels;
    let (d, e, t, b, k) = (doppler_bins, elevation_bins, config.temporal_window, config.backbone_blocks, config.temporal_layers);
    let encoder = (3 * c + c) + 2 * c + (c * c * d + c) + 2 * c;
    let stem = (9 * c * (c + e) + c) + 2 * c;
    let blocks = b * (2 * (9 * c * c + c) + 4 * c);
    let head = 9 * (c + e) * e + e;
    let temporal = if k == 0 { 0 } else { (k - 1) * (27 * t * t + t) + (27 * t + 1) };
    encoder + stem + blocks + head + temporal
}

impl Network {
    /// Rebuilds a network from stored tensors, checking names and shapes
    /// against those implied by `config` and `geometry`.
    pub fn from_tensors(config: NetworkConfig, geometry: CellGeometry, tensors: Vec<Tensor>) -> Result<Self, NetError> {
        let mut net = build_network(&config, &geometry)?;
        if tensors.len() != net.params.len() {
            return Err(NetError::ParameterMismatch(format!(
                "expected {} tensors, found {}",
                net.params.len(),
                tensors.len()
            )));
        }
        for (slot, t) in net.params.iter_mut().zip(tensors) {
            if slot.name != t.name || slot.shape != t.shape || slot.kind != t.kind || t.data.len() != slot.data.len() {
                return Err(NetError::ParameterMismatch(format!("tensor {} does not match {}", t.name, slot.name)));
            }
            slot.data = t.data;
        }
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    pub fn zeroed(mut self) -> Self {
        self.params.iter_mut().for_each(|p| p.data.iter_mut().for_each(|v| *v = 0.0));
        self
    }

    pub fn features(&self, cube: &RadarCubePair) -> Result<FrameFeatures, NetError> {
        if !cube.geometry.same_binning(&self.geometry) {
            return Err(NetError::GeometryMismatch);
        }
        Ok(FrameFeatures::from_cube(cube))
    }

    /// Logits of the center frame of `window`, indexed `(range, azimuth,
    /// elevation)`.
    pub fn forward(&self, window: &[RadarCubePair]) -> Result<Array3<f64>, NetError> {
        if window.len() != self.config.temporal_window {
            return Err(NetError::WindowLength { expected: self.config.temporal_window, actual: window.len() });
        }
        let feats = window.iter().map(|c| self.features(c)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&FrameFeatures> = feats.iter().collect();
        let logits = self.forward_features(&refs).0;
        let (r, a, e) = self.geometry.grid_dims();
        Ok(Array3::from_shape_vec((r, a, e), logits).expect("logit length"))
    }

    /// Forward pass over a window of precomputed features. Returns the
    /// logits in voxel order and the trace needed for [`Network::backward`].
    pub fn forward_features(&self, window: &[&FrameFeatures]) -> (Vec<f64>, WindowTrace) {
        let t = window.len();
        let center = t / 2;
        if self.layout.temporal.is_empty() {
            let tr = self.frame_forward(window[center]);
            let logits = tr.logits.clone();
            return (logits, WindowTrace { frames: vec![tr], temporal: None });
        }
        let frames: Vec<FrameTrace> = window.iter().map(|f| self.frame_forward(f)).collect();
        let vox = self.voxel_dims();
        let mut x: Vec<f64> = frames.iter().flat_map(|f| ops::sigmoid_forward(&f.logits)).collect();
        let mut layers = Vec::with_capacity(self.layout.temporal.len());
        for (i, conv) in self.layout.temporal.iter().enumerate() {
            let (y, _) = ops::conv_forward(&conv.spec, &x, vox, &self.params[conv.w].data, &self.params[conv.b].data);
            let last = i + 1 == self.layout.temporal.len();
            let next = if last { y.clone() } else { ops::relu_forward(&y) };
            layers.push(TemporalLayer { input: x, pre: y });
            x = next;
        }
        let logits = ops::add_forward(&frames[center].logits, &x);
        (logits, WindowTrace { frames, temporal: Some(layers) })
    }

    /// Accumulates parameter gradients for upstream gradient `dlogits`.
    pub fn backward(&self, window: &[&FrameFeatures], trace: &WindowTrace, dlogits: &[f64], grads: &mut [Vec<f64>]) {
        match &trace.temporal {
            None => self.frame_backward(window[window.len() / 2], &trace.frames[0], dlogits, grads),
            Some(layers) => {
                let vox = self.voxel_dims();
                let mut g = dlogits.to_vec();
                for (i, conv) in self.layout.temporal.iter().enumerate().rev() {
                    let layer = &layers[i];
                    if i + 1 != self.layout.temporal.len() {
                        g = ops::relu_backward(&layer.pre, &g);
                    }
                    g = conv_grad(self, conv, &layer.input, vox, &g, grads, true).expect("dx");
                }
                let g = ops::sigmoid_backward(&layers[0].input, &g);
                let n = dlogits.len();
                let center = window.len() / 2;
                for (k, (f, tr)) in window.iter().zip(&trace.frames).enumerate() {
                    let mut d = g[k * n..(k + 1) * n].to_vec();
                    if k == center {
                        d.iter_mut().zip(dlogits).for_each(|(a, b)| *a += b);
                    }
                    self.frame_backward(f, tr, &d, grads);
                }
            }
        }
    }

    fn voxel_dims(&self) -> Dims {
        let (r, a, e) = self.geometry.grid_dims();
        [r, a, e]
    }

    fn plane(&self) -> Dims {
        [1, self.geometry.range_bins, self.geometry.azimuth_bins]
    }

    fn norm_fwd(&self, n: &Norm, x: &[f64]) -> (Vec<f64>, GroupNormCache) {
        ops::group_norm_forward(
            x,
            n.channels,
            self.config.groupnorm_groups,
            &self.params[n.gamma].data,
            &self.params[n.beta].data,
        )
    }

    fn conv_fwd(&self, c: &Conv, x: &[f64], dims: Dims) -> Vec<f64> {
        ops::conv_forward(&c.spec, x, dims, &self.params[c.w].data, &self.params[c.b].data).0
    }

    fn block_forward(&self, b: &Block, x: Vec<f64>, dims: Dims) -> BlockTrace {
        let c1 = self.conv_fwd(&b.c1, &x, dims);
        let (y1, n1) = self.norm_fwd(&b.n1, &c1);
        let r1 = ops::relu_forward(&y1);
        let c2 = self.conv_fwd(&b.c2, &r1, dims);
        let (y2, n2) = self.norm_fwd(&b.n2, &c2);
        let sum = ops::add_forward(&y2, &x);
        let out = ops::relu_forward(&sum);
        BlockTrace { input: x, y1, n1, r1, n2, sum, out }
    }

    fn block_backward(&self, b: &Block, tr: &BlockTrace, dims: Dims, dout: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let dsum = ops::relu_backward(&tr.sum, dout);
        let (dy2, dskip) = ops::add_backward(&dsum);
        let dc2 = norm_grad(self, &b.n2, &tr.n2, &dy2, grads);
        let dr1 = conv_grad(self, &b.c2, &tr.r1, dims, &dc2, grads, true).expect("dx");
        let dy1 = ops::relu_backward(&tr.y1, &dr1);
        let dc1 = norm_grad(self, &b.n1, &tr.n1, &dy1, grads);
        let dx = conv_grad(self, &b.c1, &tr.input, dims, &dc1, grads, true).expect("dx");
        ops::add_forward(&dx, &dskip)
    }

    fn frame_forward(&self, f: &FrameFeatures) -> FrameTrace {
        let l = &self.layout;
        let (r, a, e) = self.geometry.grid_dims();
        let cells = r * a;
        let c = self.config.base_channels;
        let enc_dims = [1, cells, self.geometry.doppler_bins];
        let e1 = self.conv_fwd(&l.enc1, &f.power, enc_dims);
        let (ey1, en1) = self.norm_fwd(&l.enc_n1, &e1);
        let ea1 = ops::relu_forward(&ey1);
        let e2 = self.conv_fwd(&l.enc2, &ea1, enc_dims);
        let (ey2, en2) = self.norm_fwd(&l.enc_n2, &e2);
        let mut hats = elevation_membership(&f.elevation, e);
        let d = self.geometry.doppler_bins;
        for cell in 0..cells {
            let peak = f.power[cell * d..(cell + 1) * d].iter().copied().fold(0.0, f64::max);
            for k in 0..e {
                hats[k * cells + cell] *= peak;
            }
        }
        let mut stem_in = ops::relu_forward(&ey2);
        stem_in.extend_from_slice(&hats);

        let plane = self.plane();
        let s = self.conv_fwd(&l.stem, &stem_in, plane);
        let (sy, sn) = self.norm_fwd(&l.stem_n, &s);
        let mut h = ops::relu_forward(&sy);
        let mut full = Vec::with_capacity(l.full.len());
        for b in &l.full {
            let tr = self.block_forward(b, h, plane);
            h = tr.out.clone();
            full.push(tr);
        }
        let mut half = Vec::with_capacity(l.half.len());
        let mut head_in = if l.half.is_empty() {
            h
        } else {
            let (mut d, hd) = ops::downsample_forward(&h, c, plane);
            for b in &l.half {
                let tr = self.block_forward(b, d, hd);
                d = tr.out.clone();
                half.push(tr);
            }
            let up = ops::upsample_forward(&d, c, plane);
            ops::add_forward(&up, &h)
        };
        head_in.extend_from_slice(&hats);
        let head = self.conv_fwd(&l.head, &head_in, plane);
        // (elevation, range, azimuth) → (range, azimuth, elevation)
        let mut logits = vec![0.0; r * a * e];
        for k in 0..e {
            for cell in 0..cells {
                logits[cell * e + k] = head[k * cells + cell];
            }
        }
        FrameTrace { ey1, en1, ea1, ey2, en2, stem_in, sy, sn, full, half, head_in, logits }
    }

    fn frame_backward(&self, f: &FrameFeatures, tr: &FrameTrace, dlogits: &[f64], grads: &mut [Vec<f64>]) {
        let l = &self.layout;
        let (r, a, e) = self.geometry.grid_dims();
        let cells = r * a;
        let c = self.config.base_channels;
        let plane = self.plane();
        let mut dhead = vec![0.0; e * cells];
        for k in 0..e {
            for cell in 0..cells {
                dhead[k * cells + cell] = dlogits[cell * e + k];
            }
        }
        let mut dmerged = conv_grad(self, &l.head, &tr.head_in, plane, &dhead, grads, true).expect("dx");
        dmerged.truncate(c * cells);
        let mut dh = if l.half.is_empty() {
            dmerged
        } else {
            let (dup, dskip) = ops::add_backward(&dmerged);
            let mut dd = ops::upsample_backward(&dup, c, plane);
            let hd = ops::pooled_dims(plane);
            for (b, btr) in l.half.iter().zip(&tr.half).rev() {
                dd = self.block_backward(b, btr, hd, &dd, grads);
            }
            ops::add_forward(&ops::downsample_backward(&dd, c, plane), &dskip)
        };
        for (b, btr) in l.full.iter().zip(&tr.full).rev() {
            dh = self.block_backward(b, btr, plane, &dh, grads);
        }
        let ds = ops::relu_backward(&tr.sy, &dh);
        let ds = norm_grad(self, &l.stem_n, &tr.sn, &ds, grads);
        let dstem_in = conv_grad(self, &l.stem, &tr.stem_in, plane, &ds, grads, true).expect("dx");
        let enc_dims = [1, cells, self.geometry.doppler_bins];
        let da2 = &dstem_in[..c * cells];
        let dy2 = ops::relu_backward(&tr.ey2, da2);
        let de2 = norm_grad(self, &l.enc_n2, &tr.en2, &dy2, grads);
        let dea1 = conv_grad(self, &l.enc2, &tr.ea1, enc_dims, &de2, grads, true).expect("dx");
        let dy1 = ops::relu_backward(&tr.ey1, &dea1);
        let de1 = norm_grad(self, &l.enc_n1, &tr.en1, &dy1, grads);
        conv_grad(self, &l.enc1, &f.power, enc_dims, &de1, grads, false);
    }
}

fn conv_grad(
    net: &Network,
    c: &Conv,
    x: &[f64],
    dims: Dims,
    dy: &[f64],
    grads: &mut [Vec<f64>],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let mut dw = std::mem::take(&mut grads[c.w]);
    let mut db = std::mem::take(&mut grads[c.b]);
    let dx = ops::conv_backward(&c.spec, x, dims, &net.params[c.w].data, dy, &mut dw, &mut db, need_dx);
    grads[c.w] = dw;
    grads[c.b] = db;
    dx
}

fn norm_grad(net: &Network, n: &Norm, cache: &GroupNormCache, dy: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
    let mut dg = std::mem::take(&mut grads[n.gamma]);
    let mut dbeta = std::mem::take(&mut grads[n.beta]);
    let dx = ops::group_norm_backward(
        cache,
        dy,
        n.channels,
        net.config.groupnorm_groups,
        &net.params[n.gamma].data,
        &mut dg,
        &mut dbeta,
    );
    grads[n.gamma] = dg;
    grads[n.beta] = dbeta;
    dx
}

/// Fixed encoding of scaled elevations in `[-1, 1]` as `bins` channels:
/// channel `k` is a hat of height [`HAT_GAIN`] centered on elevation bin
/// `k`, so each value spreads over at most its two nearest bins. The
/// network further scales each cell's hats by its peak log power.
pub fn elevation_membership(elevation: &[f64], bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins * elevation.len()];
    for (cell, el) in elevation.iter().enumerate() {
        let u = (el + 1.0) * 0.5 * bins as f64 - 0.5;
        for k in 0..bins {
            out[k * elevation.len() + cell] = HAT_GAIN * (1.0 - (u - k as f64).abs()).max(0.0);
        }
    }
    out
}

/// Network input derived from one radar frame: `ln(1 + power)` per
/// `(range, azimuth, Doppler)` cell, and per `(range, azimuth)` the
/// elevation estimate of the strongest Doppler bin scaled to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub power: Vec<f64>,
    pub elevation: Vec<f64>,
}

impl FrameFeatures {
    pub fn from_cube(cube: &RadarCubePair) -> Self {
        let (r, a, d) = cube.power.dim();
        let ext = cube.geometry.elevation_extent;
        let mid = 0.5 * (ext.min + ext.max);
        let half = 0.5 * ext.span();
        let mut power = Vec::with_capacity(r * a * d);
        let mut elevation = Vec::with_capacity(r * a);
        for i in 0..r {
            for j in 0..a {
                let mut best = 0;
                for k in 0..d {
                    let p = cube.power[(i, j, k)];
                    if p > cube.power[(i, j, best)] {
                        best = k;
                    }
                    power.push((p as f64).ln_1p());
                }
                let el = (cube.elevation[(i, j, best)] as f64 - mid) / half;
                elevation.push(el.clamp(-1.0, 1.0));
            }
        }
        Self { power, elevation }
    }
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Vec<f64>,
    y1: Vec<f64>,
    n1: GroupNormCache,
    r1: Vec<f64>,
    n2: GroupNormCache,
    sum: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameTrace {
    ey1: Vec<f64>,
    en1: GroupNormCache,
    ea1: Vec<f64>,
    ey2: Vec<f64>,
    en2: GroupNormCache,
    stem_in: Vec<f64>,
    sy: Vec<f64>,
    sn: GroupNormCache,
    full: Vec<BlockTrace>,
    half: Vec<BlockTrace>,
    head_in: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TemporalLayer {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Intermediate values of one forward pass over a window.
#[derive(Debug, Clone)]
pub struct WindowTrace {
    frames: Vec<FrameTrace>,
    temporal: Option<Vec<TemporalLayer>>,
}
