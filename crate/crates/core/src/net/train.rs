use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::focal_loss;
use super::{FrameFeatures, NetError, Network, TrainConfig};
use crate::dataset::Dataset;

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(net: &Network) -> Self {
        Self { m: net.zero_grads(), v: net.zero_grads(), t: 0 }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, g), (m, v)) in net.params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_focal: f64,
    pub validation_focal: Option<f64>,
    /// L2 norm over the penalized kernels.
    pub kernel_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn initial(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,train_focal,validation_focal,kernel_norm\n");
        for r in &self.epochs {
            let val = r.validation_focal.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.learning_rate, r.train_focal, val, r.kernel_norm));
        }
        s
    }
}

/// Precomputed network inputs and labels of a dataset.
pub struct Prepared {
    features: Vec<Vec<FrameFeatures>>,
    labels: Vec<Vec<Vec<bool>>>,
    samples: Vec<(usize, usize)>,
    window: usize,
    dims: (usize, usize, usize, usize),
    mirrors: Mirror,
}

/// Axis reversals applied to one training sample. The elevation flip
/// negates elevation and reverses the elevation bins, which maps the grid
/// onto itself only when the elevation extent is symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mirror {
    pub azimuth: bool,
    pub elevation: bool,
}

fn symmetric(e: crate::cube::Extent) -> bool {
    (e.min + e.max).abs() <= 1e-12 * e.span()
}

impl Mirror {
    /// Reversals that leave `geometry`'s binning unchanged.
    pub fn allowed(geometry: &crate::cube::CellGeometry) -> Self {
        Self { azimuth: symmetric(geometry.azimuth_extent), elevation: symmetric(geometry.elevation_extent) }
    }

    fn draw(self, rng: &mut impl Rng) -> Self {
        Self { azimuth: self.azimuth && rng.random(), elevation: self.elevation && rng.random() }
    }

    fn is_identity(self) -> bool {
        !self.azimuth && !self.elevation
    }

    /// `f` reversed along the mirrored axes, for cube dims `(r, a, d)`.
    pub fn features(self, f: &FrameFeatures, (r, a, d): (usize, usize, usize)) -> FrameFeatures {
        let aj = |j: usize| if self.azimuth { a - 1 - j } else { j };
        let mut power = Vec::with_capacity(f.power.len());
        let mut elevation = Vec::with_capacity(f.elevation.len());
        for i in 0..r {
            for j in 0..a {
                let src = i * a + aj(j);
                power.extend_from_slice(&f.power[src * d..(src + 1) * d]);
                elevation.push(if self.elevation { -f.elevation[src] } else { f.elevation[src] });
            }
        }
        FrameFeatures { power, elevation }
    }

    /// Voxel labels reversed along the mirrored axes, for grid dims `(r, a, e)`.
    pub fn labels(self, y: &[bool], (r, a, e): (usize, usize, usize)) -> Vec<bool> {
        let mut out = Vec::with_capacity(y.len());
        for i in 0..r {
            for j in 0..a {
                let j = if self.azimuth { a - 1 - j } else { j };
                for k in 0..e {
                    let k = if self.elevation { e - 1 - k } else { k };
                    out.push(y[(i * a + j) * e + k]);
                }
            }
        }
        out
    }
}

impl Prepared {
    pub fn new(net: &Network, data: &Dataset) -> Result<Self, NetError> {
        let features = data
            .sequences
            .par_iter()
            .map(|s| s.cubes.iter().map(|c| net.features(c)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut labels = Vec::with_capacity(data.sequences.len());
        for s in &data.sequences {
            let mut per = Vec::with_capacity(s.gt_grids.len());
            for g in &s.gt_grids {
                if !g.geometry.same_binning(&net.geometry) {
                    return Err(NetError::GeometryMismatch);
                }
                per.push(g.occupancy.iter().copied().collect());
            }
            labels.push(per);
        }
        let g = net.geometry;
        Ok(Self {
            features,
            labels,
            samples: data.frames(),
            window: net.config.temporal_window,
            dims: (g.range_bins, g.azimuth_bins, g.elevation_bins, g.doppler_bins),
            mirrors: Mirror::allowed(&g),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn window(&self, (s, f): (usize, usize)) -> Vec<&FrameFeatures> {
        let frames = &self.features[s];
        let half = (self.window / 2) as isize;
        let last = frames.len() as isize - 1;
        (-half..=half).map(|o| &frames[(f as isize + o).clamp(0, last) as usize]).collect()
    }

    fn sample_loss(&self, net: &Network, sample: (usize, usize), cfg: &TrainConfig) -> f64 {
        let (logits, _) = net.forward_features(&self.window(sample));
        focal_loss(&logits, &self.labels[sample.0][sample.1], cfg.alpha, cfg.gamma).expect("label shape").0
    }

    fn sample_grad(
        &self,
        net: &Network,
        sample: (usize, usize),
        mirror: Mirror,
        cfg: &TrainConfig,
    ) -> (f64, Vec<Vec<f64>>) {
        let labels = &self.labels[sample.0][sample.1];
        let (r, a, e, d) = self.dims;
        let (mirrored, mirrored_labels);
        let (window, labels): (Vec<&FrameFeatures>, &[bool]) = if mirror.is_identity() {
            (self.window(sample), labels)
        } else {
            mirrored = self.window(sample).into_iter().map(|f| mirror.features(f, (r, a, d))).collect::<Vec<_>>();
            mirrored_labels = mirror.labels(labels, (r, a, e));
            (mirrored.iter().collect(), &mirrored_labels)
        };
        let (logits, trace) = net.forward_features(&window);
        let (loss, dl) = focal_loss(&logits, labels, cfg.alpha, cfg.gamma).expect("label shape");
        let mut grads = net.zero_grads();
        net.backward(&window, &trace, &dl, &mut grads);
        (loss, grads)
    }

    /// Mean focal loss over every sample.
    pub fn mean_focal(&self, net: &Network, cfg: &TrainConfig) -> f64 {
        let losses: Vec<f64> = self.samples.par_iter().map(|s| self.sample_loss(net, *s, cfg)).collect();
        losses.iter().sum::<f64>() / losses.len().max(1) as f64
    }
}

pub fn kernel_norm(net: &Network) -> f64 {
    net.params
        .iter()
        .filter(|p| p.regularized())
        .flat_map(|p| p.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Trains `net` on every frame of `data`. Each optimizer step averages the
/// focal-loss gradient over `effective_batch` samples, computed in
/// micro-batches whose samples run in parallel and are summed in a fixed
/// order, then adds the L1/L2 penalty gradient of the kernels.
pub fn train(
    mut net: Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Network, History), NetError> {
    cfg.validate()?;
    let prepared = Prepared::new(&net, data)?;
    if prepared.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let held_out = validation.map(|v| Prepared::new(&net, v)).transpose()?;
    let evaluate = |net: &Network, epoch: usize, lr: f64| -> Result<EpochRecord, NetError> {
        let train_focal = prepared.mean_focal(net, cfg);
        let validation_focal = held_out.as_ref().filter(|h| !h.is_empty()).map(|h| h.mean_focal(net, cfg));
        if !train_focal.is_finite() || validation_focal.is_some_and(|v| !v.is_finite()) {
            return Err(NetError::NonFinite { epoch, step: 0 });
        }
        Ok(EpochRecord { epoch, learning_rate: lr, train_focal, validation_focal, kernel_norm: kernel_norm(net) })
    };

    let mut history = History { epochs: vec![evaluate(&net, 0, cfg.learning_rate)?] };
    let mut adam = Adam::new(&net);
    let mirrors = if cfg.mirror_augmentation { prepared.mirrors } else { Mirror::default() };
    let mut order: Vec<((usize, usize), Mirror)> = Vec::with_capacity(prepared.len());
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.clear();
        order.extend(prepared.samples.iter().map(|s| (*s, mirrors.draw(&mut rng))));
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.effective_batch).enumerate() {
            let mut acc = net.zero_grads();
            for micro in batch.chunks(cfg.micro_batch) {
                let results: Vec<(f64, Vec<Vec<f64>>)> =
                    micro.par_iter().map(|(s, m)| prepared.sample_grad(&net, *s, *m, cfg)).collect();
                for (loss, g) in results {
                    if !loss.is_finite() {
                        return Err(NetError::NonFinite { epoch, step });
                    }
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (g, p) in acc.iter_mut().zip(&net.params) {
                let reg = p.regularized();
                for (gv, w) in g.iter_mut().zip(&p.data) {
                    *gv *= scale;
                    if reg {
                        *gv += cfg.l1_coeff * w.signum() * (*w != 0.0) as u8 as f64 + 2.0 * cfg.l2_coeff * w;
                    }
                }
            }
            if acc.iter().flatten().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite { epoch, step });
            }
            adam.step(&mut net, &acc, lr);
        }
        history.epochs.push(evaluate(&net, epoch, lr)?);
    }
    Ok((net, history))
}
