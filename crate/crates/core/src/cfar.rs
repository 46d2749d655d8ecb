//! Classical CFAR detectors on radar power cubes.
//!
//! Each cell under test (CUT) is compared against `α·Z`, where `Z` is a noise
//! level estimated from `N_s` training cells on either side of the CUT,
//! separated from it by `G` guard cells. Detection runs as a 1D sliding
//! window along one cube axis (range by default). Near the ends of a line the
//! window shrinks symmetrically down to two training cells per side, and
//! every shrunken window size carries its own calibrated `α`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::{s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{CubeError, RadarCubePair};
use crate::grid::OccupancyGrid;

/// Seed of the simulated noise used by Monte-Carlo calibration.
pub const CALIBRATION_SEED: u64 = 0x0C0F_FEE5;
const MAX_BISECTION_STEPS: usize = 60;
const CALIBRATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfarError {
    #[error("invalid CFAR configuration: {0}")]
    InvalidConfig(String),
    #[error("CFAR window of {window} cells does not fit an axis of {axis_len} cells")]
    WindowTooLarge { window: usize, axis_len: usize },
    #[error(
        "{variant:?} calibration did not converge in {iterations} steps \
         (measured pfa {measured:.3e}, target {target:.3e})"
    )]
    CalibrationFailed { variant: CfarVariant, iterations: usize, measured: f64, target: f64 },
    #[error(transparent)]
    Cube(#[from] CubeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfarVariant {
    /// Cell averaging: mean of all training cells.
    Ca,
    /// Smallest-of: lower of the leading and lagging means.
    Soca,
    /// Greatest-of: higher of the leading and lagging means.
    Goca,
    /// Order statistic: k-th smallest training cell.
    Os,
}

impl std::str::FromStr for CfarVariant {
    type Err = CfarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CA" => Ok(Self::Ca),
            "SOCA" => Ok(Self::Soca),
            "GOCA" => Ok(Self::Goca),
            "OS" => Ok(Self::Os),
            other => Err(CfarError::InvalidConfig(format!("unknown CFAR variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectionAxis {
    #[default]
    Range,
    Azimuth,
    Doppler,
}

impl DetectionAxis {
    fn index(self) -> usize {
        match self {
            DetectionAxis::Range => 0,
            DetectionAxis::Azimuth => 1,
            DetectionAxis::Doppler => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfarConfig {
    pub variant: CfarVariant,
    pub training_cells_per_side: usize,
    pub guard_cells_per_side: usize,
    pub target_pfa: f64,
    /// 1-based rank of the order statistic; only read by OS-CFAR.
    #[serde(default)]
    pub os_rank: usize,
    #[serde(default)]
    pub axis: DetectionAxis,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            variant: CfarVariant::Ca,
            training_cells_per_side: 8,
            guard_cells_per_side: 2,
            target_pfa: 1e-3,
            os_rank: 12,
            axis: DetectionAxis::Range,
        }
    }
}

impl CfarConfig {
    pub fn new(variant: CfarVariant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CfarError> {
        let bad = |m: String| Err(CfarError::InvalidConfig(m));
        if self.training_cells_per_side == 0 {
            return bad("training_cells_per_side must be at least 1".into());
        }
        if !(self.target_pfa > 0.0 && self.target_pfa < 1.0) {
            return bad(format!("target_pfa must lie in (0, 1), got {}", self.target_pfa));
        }
        if self.variant == CfarVariant::Os
            && !(1..=2 * self.training_cells_per_side).contains(&self.os_rank)
        {
            return bad(format!(
                "os_rank must lie in [1, {}], got {}",
                2 * self.training_cells_per_side,
                self.os_rank
            ));
        }
        Ok(())
    }

    /// Cells spanned by the full window including the CUT.
    pub fn window_len(&self) -> usize {
        2 * (self.training_cells_per_side + self.guard_cells_per_side) + 1
    }

    fn min_training_per_side(&self) -> usize {
        self.training_cells_per_side.min(2)
    }

    /// Order-statistic rank used for a window shrunk to `n` cells per side.
    fn rank_for(&self, n: usize) -> usize {
        let full = self.training_cells_per_side;
        let k = (self.os_rank as f64 * n as f64 / full as f64).round() as usize;
        k.clamp(1, 2 * n)
    }

    /// Short stable digest of the configuration for report provenance.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Noise level estimate from the leading and lagging training cells.
///
/// `scratch` is reused for the order statistic. CA averages the two side
/// means, which keeps `SOCA ≤ CA ≤ GOCA` exact in floating point when both
/// sides hold the same number of cells.
pub fn noise_estimate(
    variant: CfarVariant,
    leading: &[f64],
    lagging: &[f64],
    rank: usize,
    scratch: &mut Vec<f64>,
) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match variant {
        CfarVariant::Ca => 0.5 * (mean(leading) + mean(lagging)),
        CfarVariant::Soca => mean(leading).min(mean(lagging)),
        CfarVariant::Goca => mean(leading).max(mean(lagging)),
        CfarVariant::Os => {
            scratch.clear();
            scratch.extend_from_slice(leading);
            scratch.extend_from_slice(lagging);
            let k = rank - 1;
            *scratch.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
        }
    }
}

/// Closed-form CA-CFAR scale for square-law (exponential) noise with `n`
/// training cells in total: `α = n·(pfa^(−1/n) − 1)`.
pub fn ca_alpha(n_total: usize, pfa: f64) -> f64 {
    let n = n_total as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// Scale factor `α` for the full window of `config`.
///
/// CA uses the closed form; the other variants are calibrated by bisection
/// on simulated unit-mean exponential noise drawn from [`CALIBRATION_SEED`].
pub fn calibrate_threshold(config: &CfarConfig) -> Result<f64, CfarError> {
    config.validate()?;
    alpha_for(config, config.training_cells_per_side, CALIBRATION_SEED)
}

fn calibration_cache() -> &'static Mutex<HashMap<(CfarVariant, usize, usize, u64, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(CfarVariant, usize, usize, u64, u64), f64>>> =
        OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `α` for a window holding `n` training cells per side.
pub fn alpha_for(config: &CfarConfig, n: usize, seed: u64) -> Result<f64, CfarError> {
    if config.variant == CfarVariant::Ca {
        return Ok(ca_alpha(2 * n, config.target_pfa));
    }
    let rank = if config.variant == CfarVariant::Os { config.rank_for(n) } else { 0 };
    let key = (config.variant, n, rank, config.target_pfa.to_bits(), seed);
    if let Some(a) = calibration_cache().lock().unwrap().get(&key) {
        return Ok(*a);
    }
    let trials = ((2000.0 / config.target_pfa).ceil() as usize).clamp(200_000, 4_000_000);
    let a = monte_carlo_alpha(config.variant, n, rank, config.target_pfa, trials, seed)?;
    calibration_cache().lock().unwrap().insert(key, a);
    Ok(a)
}

/// Bisection for `α` on a fixed sample of `trials` simulated windows.
///
/// The CUT-to-estimate ratio of every window is computed once; the measured
/// false-alarm rate at a candidate `α` is the fraction of ratios above it.
pub fn monte_carlo_alpha(
    variant: CfarVariant,
    n: usize,
    rank: usize,
    target_pfa: f64,
    trials: usize,
    seed: u64,
) -> Result<f64, CfarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lead = vec![0.0; n];
    let mut lag = vec![0.0; n];
    let mut scratch = Vec::with_capacity(2 * n);
    let ratios: Vec<f64> = (0..trials)
        .map(|_| {
            let cut: f64 = Exp1.sample(&mut rng);
            lead.iter_mut().for_each(|v| *v = Exp1.sample(&mut rng));
            lag.iter_mut().for_each(|v| *v = Exp1.sample(&mut rng));
            cut / noise_estimate(variant, &lead, &lag, rank, &mut scratch)
        })
        .collect();
    let measured = |alpha: f64| ratios.iter().filter(|r| **r > alpha).count() as f64 / trials as f64;

    let mut hi = 1.0;
    while measured(hi) > target_pfa {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    let mut last = f64::NAN;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        last = measured(mid);
        if (last / target_pfa - 1.0).abs() <= CALIBRATION_TOLERANCE {
            return Ok(mid);
        }
        if last > target_pfa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(CfarError::CalibrationFailed {
        variant,
        iterations: MAX_BISECTION_STEPS,
        measured: last,
        target: target_pfa,
    })
}

/// Raw per-cell detections in cube order plus the number of cells that
/// were actually tested (edge cells without enough training cells are not).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMask {
    pub detections: Array3<bool>,
    pub tested: usize,
}

impl DetectionMask {
    pub fn count(&self) -> usize {
        self.detections.iter().filter(|d| **d).count()
    }
}

/// A configured detector with its per-window-size thresholds resolved.
#[derive(Debug, Clone)]
pub struct CfarDetector {
    config: CfarConfig,
    /// `alphas[n]` is the scale for `n` training cells per side.
    alphas: Vec<f64>,
}

impl CfarDetector {
    pub fn new(config: CfarConfig) -> Result<Self, CfarError> {
        Self::calibrated_with(config, CALIBRATION_SEED)
    }

    /// Like [`CfarDetector::new`] with Monte-Carlo calibration drawn from
    /// `seed`. CA-CFAR does not depend on the seed.
    pub fn calibrated_with(config: CfarConfig, seed: u64) -> Result<Self, CfarError> {
        config.validate()?;
        let mut alphas = vec![f64::NAN; config.training_cells_per_side + 1];
        for n in config.min_training_per_side()..=config.training_cells_per_side {
            alphas[n] = alpha_for(&config, n, seed)?;
        }
        Ok(Self { config, alphas })
    }

    /// Uses the same `α` for every window size.
    pub fn with_fixed_alpha(config: CfarConfig, alpha: f64) -> Result<Self, CfarError> {
        config.validate()?;
        Ok(Self { config, alphas: vec![alpha; config.training_cells_per_side + 1] })
    }

    pub fn config(&self) -> &CfarConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alphas[self.config.training_cells_per_side]
    }

    fn detect_line(&self, line: &[f64], out: &mut [bool]) -> usize {
        let c = &self.config;
        let (ns, g) = (c.training_cells_per_side, c.guard_cells_per_side);
        let len = line.len();
        let mut scratch = Vec::with_capacity(2 * ns);
        let mut tested = 0;
        for i in 0..len {
            let lead_avail = i.saturating_sub(g);
            let lag_avail = (len - 1 - i).saturating_sub(g);
            let n = ns.min(lead_avail).min(lag_avail);
            if n < c.min_training_per_side() {
                continue;
            }
            tested += 1;
            let leading = &line[i - g - n..i - g];
            let lagging = &line[i + g + 1..i + g + 1 + n];
            let rank = if c.variant == CfarVariant::Os { c.rank_for(n) } else { 0 };
            let z = noise_estimate(c.variant, leading, lagging, rank, &mut scratch);
            out[i] = line[i] > self.alphas[n] * z;
        }
        tested
    }

    /// Per-cell detections over the `range × azimuth × Doppler` cube.
    pub fn detect_mask(&self, cube: &RadarCubePair) -> Result<DetectionMask, CfarError> {
        let axis = self.config.axis.index();
        let axis_len = cube.power.len_of(Axis(axis));
        if self.config.window_len() > axis_len {
            return Err(CfarError::WindowTooLarge { window: self.config.window_len(), axis_len });
        }
        let dims = cube.power.dim();
        if dims != cube.geometry.cube_dims() {
            return Err(CubeError::ShapeMismatch { expected: cube.geometry.cube_dims(), actual: dims }.into());
        }
        // Move the detection axis last so every line is a contiguous lane.
        let mut order = [0, 1, 2];
        order.swap(axis, 2);
        let view = cube.power.view().permuted_axes(order);
        let (n0, n1, _) = view.dim();
        let results: Vec<(Vec<bool>, usize)> = (0..n0 * n1)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n1, k % n1);
                let line: Vec<f64> = view.slice(s![i, j, ..]).iter().map(|v| *v as f64).collect();
                let mut out = vec![false; axis_len];
                let tested = self.detect_line(&line, &mut out);
                (out, tested)
            })
            .collect();
        let mut permuted = Array3::from_elem(view.dim(), false);
        let mut tested = 0;
        for (k, (line, t)) in results.into_iter().enumerate() {
            tested += t;
            let (i, j) = (k / n1, k % n1);
            for (dst, src) in permuted.slice_mut(s![i, j, ..]).iter_mut().zip(line) {
                *dst = src;
            }
        }
        // `order` is its own inverse (a single transposition).
        let detections = permuted.permuted_axes(order).as_standard_layout().to_owned();
        Ok(DetectionMask { detections, tested })
    }

    /// Detections projected to a `range × azimuth × elevation` occupancy
    /// grid: each detected cell is placed at the elevation bin of its
    /// elevation-cube value, and Doppler is collapsed by logical OR.
    pub fn detect(&self, cube: &RadarCubePair) -> Result<OccupancyGrid, CfarError> {
        let mask = self.detect_mask(cube)?;
        Ok(project_to_grid(&mask.detections, cube))
    }
}

pub fn project_to_grid(detections: &Array3<bool>, cube: &RadarCubePair) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(cube.geometry, cube.frame_id);
    let ea = cube.geometry.elevation_axis();
    for ((r, a, d), hit) in detections.indexed_iter() {
        if *hit {
            let e = ea.bin_clamped(cube.elevation[(r, a, d)] as f64);
            grid.occupancy[(r, a, e)] = true;
        }
    }
    grid
}

/// One-shot detection with a freshly calibrated detector.
pub fn cfar_detect(cube: &RadarCubePair, config: &CfarConfig) -> Result<OccupancyGrid, CfarError> {
    CfarDetector::new(*config)?.detect(cube)
}
