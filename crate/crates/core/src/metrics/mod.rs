//! Detection and point-cloud quality metrics.
//!
//! `P_d` and `P_fa` compare occupancy grids voxel by voxel against the
//! reference (ground-truth) grid. The bidirectional chamfer distance (BCD)
//! compares point clouds on their Cartesian coordinates only.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kdtree::{squared_distance, KdTree};

use crate::cube::CellGeometry;
use crate::grid::{grid_to_pointcloud, voxelize, GridError, OccupancyGrid, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("chamfer distance is undefined: the {0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{pred} predicted grids but {gt} reference grids")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("shift {shift} m is below the voxel pitch {pitch} m; voxel overlap would not vanish")]
    ShiftTooSmall { shift: f64, pitch: f64 },
    #[error("reference cloud is empty")]
    EmptyReference,
    #[error("malformed metrics CSV: {0}")]
    Csv(String),
}

/// Voxelwise confusion counts and the derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub total: usize,
    /// `TP / (TP + FN)`; absent when the reference grid is empty.
    pub p_d: Option<f64>,
    /// `FP / (total − TP − FN)`, i.e. over reference-negative voxels.
    pub p_fa: Option<f64>,
}

pub fn detection_stats(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<DetectionStats, MetricsError> {
    pred.check_compatible(gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.occupancy.iter().zip(gt.occupancy.iter()) {
        match (*p, *g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(stats_from_counts(tp, fp, fn_, gt.voxel_count()))
}

pub fn stats_from_counts(tp: usize, fp: usize, fn_: usize, total: usize) -> DetectionStats {
    let positives = tp + fn_;
    let negatives = total - positives;
    DetectionStats {
        tp,
        fp,
        fn_,
        total,
        p_d: (positives > 0).then(|| tp as f64 / positives as f64),
        p_fa: (negatives > 0).then(|| fp as f64 / negatives as f64),
    }
}

/// Mean nearest-neighbour distance from every point of `from` to `to`.
fn directed_mean(from: &[[f64; 3]], to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest_sq(*p).expect("non-empty tree").sqrt())
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Bidirectional chamfer distance between two non-empty clouds, using a
/// k-d tree for the nearest-neighbour queries.
pub fn chamfer_distance(s1: &PointCloud, s2: &PointCloud) -> Result<f64, MetricsError> {
    chamfer_positions(&s1.positions(), &s2.positions())
}

pub fn chamfer_positions(s1: &[[f64; 3]], s2: &[[f64; 3]]) -> Result<f64, MetricsError> {
    if s1.is_empty() {
        return Err(MetricsError::EmptyCloud("reference"));
    }
    if s2.is_empty() {
        return Err(MetricsError::EmptyCloud("predicted"));
    }
    let (t1, t2) = (KdTree::build(s1), KdTree::build(s2));
    Ok(directed_mean(s1, &t2) + directed_mean(s2, &t1))
}

/// O(n·m) chamfer distance; the oracle for [`chamfer_distance`].
pub fn chamfer_brute_force(s1: &[[f64; 3]], s2: &[[f64; 3]]) -> Result<f64, MetricsError> {
    if s1.is_empty() {
        return Err(MetricsError::EmptyCloud("reference"));
    }
    if s2.is_empty() {
        return Err(MetricsError::EmptyCloud("predicted"));
    }
    let directed = |a: &[[f64; 3]], b: &[[f64; 3]]| {
        let total: f64 = a
            .iter()
            .map(|p| b.iter().map(|q| squared_distance(*p, *q)).fold(f64::INFINITY, f64::min).sqrt())
            .sum();
        total / a.len() as f64
    };
    Ok(directed(s1, s2) + directed(s2, s1))
}

/// Outcome of [`misalignment_demo`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub p_d_shifted: f64,
    pub p_fa_shifted: f64,
    pub bcd_shifted: f64,
    pub p_d_far: f64,
    pub p_fa_far: f64,
    pub bcd_far: f64,
}

/// Compares a slightly misaligned copy of `gt` (translated forward along x
/// by `shift` meters) with a far decoy (translated by `10·shift`).
///
/// The shift must be zero or at least one range-bin pitch: a smaller
/// nonzero shift would leave voxels overlapping.
pub fn misalignment_demo(
    gt: &PointCloud,
    shift: f64,
    geometry: &CellGeometry,
) -> Result<Misalignment, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let pitch = geometry.range_axis().width();
    if shift != 0.0 && shift < pitch {
        return Err(MetricsError::ShiftTooSmall { shift, pitch });
    }
    let reference = voxelize(gt, geometry).grid;
    let measure = |offset: f64| -> Result<(f64, f64, f64), MetricsError> {
        let moved = gt.translated([offset, 0.0, 0.0]);
        let grid = voxelize(&moved, geometry).grid;
        let stats = detection_stats(&grid, &reference)?;
        let bcd = chamfer_distance(gt, &moved)?;
        Ok((stats.p_d.unwrap_or(0.0), stats.p_fa.unwrap_or(0.0), bcd))
    };
    let (p_d_shifted, p_fa_shifted, bcd_shifted) = measure(shift)?;
    let (p_d_far, p_fa_far, bcd_far) = measure(10.0 * shift)?;
    Ok(Misalignment { p_d_shifted, p_fa_shifted, bcd_shifted, p_d_far, p_fa_far, bcd_far })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: u64,
    pub p_d: Option<f64>,
    pub p_fa: Option<f64>,
    /// Absent when either cloud is empty.
    pub bcd: Option<f64>,
    pub predicted_points: usize,
    pub gt_points: usize,
}

impl FrameMetrics {
    pub fn is_empty_prediction(&self) -> bool {
        self.predicted_points == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregate {
    pub p_d: Option<f64>,
    pub p_fa: Option<f64>,
    pub bcd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub detector: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_frame: Vec<FrameMetrics>,
    pub aggregate: Aggregate,
    pub empty_frame_fraction: f64,
    pub provenance: Provenance,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn from_frames(per_frame: Vec<FrameMetrics>, provenance: Provenance) -> Self {
        let aggregate = Aggregate {
            p_d: mean_defined(per_frame.iter().map(|f| f.p_d)),
            p_fa: mean_defined(per_frame.iter().map(|f| f.p_fa)),
            bcd: mean_defined(per_frame.iter().map(|f| f.bcd)),
        };
        let empty = per_frame.iter().filter(|f| f.is_empty_prediction()).count();
        let empty_frame_fraction =
            if per_frame.is_empty() { 0.0 } else { empty as f64 / per_frame.len() as f64 };
        Self { per_frame, aggregate, empty_frame_fraction, provenance }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// True when every predicted cloud is empty, the regime in which no
    /// chamfer distance can be reported.
    pub fn is_inconclusive(&self) -> bool {
        !self.per_frame.is_empty() && self.empty_frame_fraction == 1.0
    }
}

pub fn evaluate_frame(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<FrameMetrics, MetricsError> {
    let stats = detection_stats(pred, gt)?;
    let pc = grid_to_pointcloud(pred, None, None)?;
    let gc = grid_to_pointcloud(gt, None, None)?;
    let bcd = if pc.is_empty() || gc.is_empty() { None } else { Some(chamfer_distance(&gc, &pc)?) };
    Ok(FrameMetrics {
        frame_id: gt.frame_id,
        p_d: stats.p_d,
        p_fa: stats.p_fa,
        bcd,
        predicted_points: pc.len(),
        gt_points: gc.len(),
    })
}

/// Per-frame and aggregate metrics over a run. Frames with an empty
/// prediction count toward `empty_frame_fraction` and carry no BCD.
pub fn evaluate_run(
    pred: &[OccupancyGrid],
    gt: &[OccupancyGrid],
    geometry: &CellGeometry,
) -> Result<MetricsReport, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    for g in pred.iter().chain(gt) {
        if !g.geometry.same_binning(geometry) {
            return Err(GridError::GeometryMismatch.into());
        }
    }
    let frames = pred
        .par_iter()
        .zip(gt.par_iter())
        .map(|(p, g)| evaluate_frame(p, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_frames(frames, Provenance::default()))
}
