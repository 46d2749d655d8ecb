//! Radar cubes and the synthetic scene renderer.

mod geometry;
mod render;
mod scene;

use ndarray::Array3;
use thiserror::Error;

pub use geometry::{BinAxis, CellGeometry, Extent};
pub use render::{render_frame, render_ground_truth, render_ground_truth_frame, render_radar_frames};
pub use scene::{SceneSampler, SceneSpec, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CubeError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("target {index} leaves the geometry extents at frame {frame}: {reason}")]
    TargetOutOfExtent { index: usize, frame: u64, reason: String },
    #[error("cube tensors have shape {actual:?}, geometry expects {expected:?}")]
    ShapeMismatch { expected: (usize, usize, usize), actual: (usize, usize, usize) },
    #[error("cube holds an invalid value: {0}")]
    InvalidValue(String),
}

/// One radar frame: the power cube and its companion elevation cube over
/// `range × azimuth × Doppler` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCubePair {
    /// Linear reflected power, non-negative.
    pub power: Array3<f32>,
    /// Per-cell elevation estimate in radians.
    pub elevation: Array3<f32>,
    pub geometry: CellGeometry,
    pub frame_id: u64,
    pub timestamp: f64,
}

impl RadarCubePair {
    /// A cube of zero power with every elevation at the center of the
    /// elevation extent.
    pub fn zeros(geometry: CellGeometry, frame_id: u64) -> Self {
        let dims = geometry.cube_dims();
        let mid = 0.5 * (geometry.elevation_extent.min + geometry.elevation_extent.max);
        Self {
            power: Array3::zeros(dims),
            elevation: Array3::from_elem(dims, mid as f32),
            geometry,
            frame_id,
            timestamp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CubeError> {
        self.geometry.validate()?;
        let expected = self.geometry.cube_dims();
        for t in [&self.power, &self.elevation] {
            let actual = t.dim();
            if actual != expected {
                return Err(CubeError::ShapeMismatch { expected, actual });
            }
        }
        if let Some(v) = self.power.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CubeError::InvalidValue(format!("power value {v}")));
        }
        let ext = self.geometry.elevation_extent;
        // f32 storage may round the extent edges outward by half an ulp.
        let (lo, hi) = (ext.min as f32, ext.max as f32);
        if let Some(v) = self.elevation.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(CubeError::InvalidValue(format!("elevation value {v}")));
        }
        Ok(())
    }
}
