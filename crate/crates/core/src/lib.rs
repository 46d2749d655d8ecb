//! Radar cube to LiDAR-like point cloud pipeline.
//!
//! The crate is organised around the data that flows through the pipeline:
//!
//! * [`cube`]: spherical cell geometry, radar cube pairs (power and elevation)
//!   and the synthetic scene renderer producing paired ground truth.
//! * [`cfar`]: the classical CA/SOCA/GOCA/OS CFAR baselines.
//! * [`grid`]: occupancy grids, point clouds and the conversions between them.
//! * [`net`]: a small differentiable detector (Doppler encoder, 2D residual
//!   backbone, temporal coherence head) trained with focal loss.
//! * [`metrics`]: probability of detection / false alarm and bidirectional
//!   chamfer distance.
//! * [`io`]: binary and JSON persistence.
//! * [`report`]: CSV tables and SVG charts for runs and sweeps.

pub mod cfar;
pub mod cube;
pub mod dataset;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod net;
pub mod report;

pub use cfar::{CfarConfig, CfarVariant};
pub use cube::{CellGeometry, Extent, RadarCubePair, SceneSampler, SceneSpec, Target};
pub use dataset::{Dataset, Sequence};
pub use grid::{FeatureLayout, OccupancyGrid, PointCloud};
pub use metrics::{DetectionStats, MetricsReport};
pub use net::{Network, NetworkConfig, TrainConfig};

/// Version string recorded in run manifests and checkpoints.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
