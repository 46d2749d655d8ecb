use ndarray::Array3;
use rayon::prelude::*;

use super::ops::sigmoid;
use super::{FrameFeatures, NetError, Network};
use crate::cube::RadarCubePair;
use crate::grid::OccupancyGrid;

pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub grids: Vec<OccupancyGrid>,
    /// Fraction of frames whose grid has no occupied voxel.
    pub empty_fraction: f64,
}

/// Thresholds logits in voxel order: occupied iff `sigmoid(z) > 0.5`.
pub fn logits_to_grid(net: &Network, logits: &[f64], frame_id: u64) -> OccupancyGrid {
    let (r, a, e) = net.geometry.grid_dims();
    let occ = logits.iter().map(|z| sigmoid(*z) > CONFIDENCE_THRESHOLD).collect();
    OccupancyGrid {
        occupancy: Array3::from_shape_vec((r, a, e), occ).expect("logit length"),
        geometry: net.geometry,
        frame_id,
    }
}

/// Runs the detector over one contiguous sequence. Every frame is the
/// center of a window of `temporal_window` frames; windows at either end
/// repeat the first or last frame.
pub fn infer(net: &Network, frames: &[RadarCubePair]) -> Result<Inference, NetError> {
    if frames.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let feats = frames.par_iter().map(|c| net.features(c)).collect::<Result<Vec<FrameFeatures>, _>>()?;
    let half = (net.config.temporal_window / 2) as isize;
    let last = frames.len() as isize - 1;
    let grids: Vec<OccupancyGrid> = (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let window: Vec<&FrameFeatures> =
                (-half..=half).map(|o| &feats[(i as isize + o).clamp(0, last) as usize]).collect();
            let (logits, _) = net.forward_features(&window);
            logits_to_grid(net, &logits, frames[i].frame_id)
        })
        .collect();
    let empty = grids.iter().filter(|g| g.is_empty()).count();
    Ok(Inference { empty_fraction: empty as f64 / grids.len() as f64, grids })
}
