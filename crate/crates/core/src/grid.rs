//! Occupancy grids, point clouds and the conversions between them.
//!
//! Axis convention: x forward, y left, z up. Azimuth is measured from +x
//! towards +y, elevation from the xy-plane towards +z.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::CellGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("feature tensor `{name}` has shape {actual:?}, grid has {expected:?}")]
    FeatureShape { name: &'static str, expected: (usize, usize, usize), actual: (usize, usize, usize) },
    #[error("grids do not share a geometry")]
    GeometryMismatch,
    #[error("point cloud must have 4 or 5 features per point, got {0}")]
    BadFeatureWidth(usize),
    #[error("point cloud holds a non-finite coordinate at row {0}")]
    NonFinite(usize),
}

/// Binary `range × azimuth × elevation` voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub occupancy: Array3<bool>,
    pub geometry: CellGeometry,
    pub frame_id: u64,
}

impl OccupancyGrid {
    pub fn empty(geometry: CellGeometry, frame_id: u64) -> Self {
        Self { occupancy: Array3::from_elem(geometry.grid_dims(), false), geometry, frame_id }
    }

    /// Number of occupied voxels.
    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|v| *v)
    }

    pub fn voxel_count(&self) -> usize {
        self.occupancy.len()
    }

    pub fn check_compatible(&self, other: &OccupancyGrid) -> Result<(), GridError> {
        if self.geometry.same_binning(&other.geometry) && self.occupancy.dim() == other.occupancy.dim() {
            Ok(())
        } else {
            Err(GridError::GeometryMismatch)
        }
    }
}

/// Which per-point features follow the three spatial coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureLayout {
    /// `x, y, z, power`: LiDAR-like clouds.
    Lidar,
    /// `x, y, z, doppler, power`: radar clouds.
    Radar,
}

impl FeatureLayout {
    pub fn width(self) -> usize {
        match self {
            FeatureLayout::Lidar => 4,
            FeatureLayout::Radar => 5,
        }
    }

    pub fn from_width(l: usize) -> Result<Self, GridError> {
        match l {
            4 => Ok(FeatureLayout::Lidar),
            5 => Ok(FeatureLayout::Radar),
            other => Err(GridError::BadFeatureWidth(other)),
        }
    }
}

/// `N × L` point matrix with `L = layout.width()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f32>,
    pub layout: FeatureLayout,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn empty(layout: FeatureLayout, frame_id: u64) -> Self {
        Self { points: Array2::zeros((0, layout.width())), layout, frame_id }
    }

    /// Builds a LiDAR-layout cloud from bare xyz positions (power 1).
    pub fn from_xyz(xyz: &[[f64; 3]], frame_id: u64) -> Self {
        let mut points = Array2::zeros((xyz.len(), 4));
        for (i, p) in xyz.iter().enumerate() {
            points[(i, 0)] = p[0] as f32;
            points[(i, 1)] = p[1] as f32;
            points[(i, 2)] = p[2] as f32;
            points[(i, 3)] = 1.0;
        }
        Self { points, layout: FeatureLayout::Lidar, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        [self.points[(i, 0)] as f64, self.points[(i, 1)] as f64, self.points[(i, 2)] as f64]
    }

    /// All spatial coordinates in f64.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.xyz(i)).collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.points.ncols() != self.layout.width() {
            return Err(GridError::BadFeatureWidth(self.points.ncols()));
        }
        for (i, row) in self.points.rows().into_iter().enumerate() {
            if row.iter().take(3).any(|v| !v.is_finite()) {
                return Err(GridError::NonFinite(i));
            }
        }
        Ok(())
    }

    /// Same cloud rigidly translated by `t`.
    pub fn translated(&self, t: [f64; 3]) -> Self {
        let mut out = self.clone();
        for mut row in out.points.rows_mut() {
            for k in 0..3 {
                row[k] = (row[k] as f64 + t[k]) as f32;
            }
        }
        out
    }
}

pub fn spherical_to_cartesian(r: f64, azimuth: f64, elevation: f64) -> [f64; 3] {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [r * ce * ca, r * ce * sa, r * se]
}

/// Inverse of [`spherical_to_cartesian`]: `(range, azimuth, elevation)`.
pub fn cartesian_to_spherical(p: [f64; 3]) -> (f64, f64, f64) {
    let rho = p[0].hypot(p[1]);
    let r = rho.hypot(p[2]);
    (r, p[1].atan2(p[0]), p[2].atan2(rho))
}

/// One point per occupied voxel, at the voxel's spherical center.
///
/// Points are emitted range-major, then azimuth, then elevation. A Doppler
/// tensor switches the output to the radar layout; the power column is read
/// from `power` when given and is 1.0 otherwise.
pub fn grid_to_pointcloud(
    grid: &OccupancyGrid,
    doppler: Option<&Array3<f32>>,
    power: Option<&Array3<f32>>,
) -> Result<PointCloud, GridError> {
    let dims = grid.occupancy.dim();
    for (name, t) in [("doppler", doppler), ("power", power)] {
        if let Some(t) = t {
            if t.dim() != dims {
                return Err(GridError::FeatureShape { name, expected: dims, actual: t.dim() });
            }
        }
    }
    let layout = if doppler.is_some() { FeatureLayout::Radar } else { FeatureLayout::Lidar };
    let g = &grid.geometry;
    let (ra, aa, ea) = (g.range_axis(), g.azimuth_axis(), g.elevation_axis());
    let mut rows: Vec<f32> = Vec::new();
    let mut n = 0;
    for ((r, a, e), occupied) in grid.occupancy.indexed_iter() {
        if !*occupied {
            continue;
        }
        let p = spherical_to_cartesian(ra.center(r), aa.center(a), ea.center(e));
        rows.extend(p.iter().map(|v| *v as f32));
        if let Some(d) = doppler {
            rows.push(d[(r, a, e)]);
        }
        rows.push(power.map_or(1.0, |pw| pw[(r, a, e)]));
        n += 1;
    }
    let points = Array2::from_shape_vec((n, layout.width()), rows).expect("row width matches layout");
    Ok(PointCloud { points, layout, frame_id: grid.frame_id })
}

/// Result of [`voxelize`]: the grid plus the number of points that fell
/// outside the geometry's extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized {
    pub grid: OccupancyGrid,
    pub dropped: usize,
}

pub fn voxelize(cloud: &PointCloud, geometry: &CellGeometry) -> Voxelized {
    let mut grid = OccupancyGrid::empty(*geometry, cloud.frame_id);
    let (ra, aa, ea) = (geometry.range_axis(), geometry.azimuth_axis(), geometry.elevation_axis());
    let mut dropped = 0;
    for i in 0..cloud.len() {
        let (r, az, el) = cartesian_to_spherical(cloud.xyz(i));
        match (ra.bin_of(r), aa.bin_of(az), ea.bin_of(el)) {
            (Some(r), Some(a), Some(e)) => grid.occupancy[(r, a, e)] = true,
            _ => dropped += 1,
        }
    }
    Voxelized { grid, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::Extent;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6};

    fn tiny_geometry() -> CellGeometry {
        CellGeometry {
            range_bins: 4,
            azimuth_bins: 4,
            elevation_bins: 4,
            doppler_bins: 2,
            range_extent: Extent::new(2.0, 10.0),
            azimuth_extent: Extent::new(-0.6, 0.6),
            elevation_extent: Extent::new(-0.3, 0.3),
            doppler_extent: Extent::new(-1.0, 1.0),
        }
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn spherical_axis_cases() {
        assert!(close(spherical_to_cartesian(10.0, 0.0, 0.0), [10.0, 0.0, 0.0], 1e-12));
        assert!(close(spherical_to_cartesian(10.0, FRAC_PI_2, 0.0), [0.0, 10.0, 0.0], 1e-12));
        // Hand evaluation: 2·cos(π/6)·cos(π/4) = 1.224745, 2·sin(π/6) = 1.
        let p = spherical_to_cartesian(2.0, FRAC_PI_4, FRAC_PI_6);
        assert!(close(p, [1.2247449, 1.2247449, 1.0], 1e-6), "{p:?}");
    }

    #[test]
    fn empty_and_single_voxel_clouds() {
        let g = tiny_geometry();
        let mut grid = OccupancyGrid::empty(g, 3);
        assert!(grid_to_pointcloud(&grid, None, None).unwrap().is_empty());
        grid.occupancy[(1, 2, 3)] = true;
        let cloud = grid_to_pointcloud(&grid, None, None).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.frame_id, 3);
        let expected = spherical_to_cartesian(
            g.range_axis().center(1),
            g.azimuth_axis().center(2),
            g.elevation_axis().center(3),
        );
        assert!(close(cloud.xyz(0), expected, 1e-5));
        assert_eq!(cloud.points[(0, 3)], 1.0);
    }

    #[test]
    fn radar_layout_carries_doppler_and_power() {
        let g = tiny_geometry();
        let mut grid = OccupancyGrid::empty(g, 0);
        grid.occupancy[(0, 0, 0)] = true;
        grid.occupancy[(3, 1, 2)] = true;
        let doppler = Array3::from_shape_fn(g.grid_dims(), |(r, _, _)| r as f32 * 0.5);
        let power = Array3::from_elem(g.grid_dims(), 7.0f32);
        let cloud = grid_to_pointcloud(&grid, Some(&doppler), Some(&power)).unwrap();
        assert_eq!(cloud.layout, FeatureLayout::Radar);
        assert_eq!(cloud.points.row(1).to_vec()[3..], [1.5, 7.0]);
        let bad = Array3::zeros((1, 1, 1));
        assert!(matches!(
            grid_to_pointcloud(&grid, None, Some(&bad)),
            Err(GridError::FeatureShape { name: "power", .. })
        ));
    }

    #[test]
    fn out_of_extent_points_are_dropped() {
        let g = tiny_geometry();
        let cloud = PointCloud::from_xyz(&[[50.0, 0.0, 0.0]], 0);
        let v = voxelize(&cloud, &g);
        assert_eq!(v.dropped, 1);
        assert!(v.grid.is_empty());
    }

    #[test]
    fn two_points_one_voxel() {
        let g = tiny_geometry();
        let cloud = PointCloud::from_xyz(&[[5.0, 0.5, 0.4], [5.1, 0.55, 0.45]], 0);
        let v = voxelize(&cloud, &g);
        assert_eq!(v.grid.count(), 1);
        assert_eq!(v.dropped, 0);
    }

    /// Every one of the 2^64 grids is out of reach, so enumerate all grids
    /// with up to two occupied voxels plus each single-voxel complement.
    #[test]
    fn round_trip_small_grids_structured() {
        let g = tiny_geometry();
        let n = g.voxel_count();
        let idx = |i: usize| (i / 16, (i / 4) % 4, i % 4);
        let check = |grid: &OccupancyGrid| {
            let cloud = grid_to_pointcloud(grid, None, None).unwrap();
            assert_eq!(cloud.len(), grid.count());
            let back = voxelize(&cloud, &g);
            assert_eq!(back.dropped, 0);
            assert_eq!(&back.grid, grid);
        };
        for i in 0..n {
            for j in i..n {
                let mut grid = OccupancyGrid::empty(g, 0);
                grid.occupancy[idx(i)] = true;
                grid.occupancy[idx(j)] = true;
                check(&grid);
            }
            let mut full = OccupancyGrid::empty(g, 0);
            full.occupancy.fill(true);
            full.occupancy[idx(i)] = false;
            check(&full);
        }
    }

    #[test]
    fn point_order_is_range_major() {
        let g = tiny_geometry();
        let mut grid = OccupancyGrid::empty(g, 0);
        grid.occupancy[(2, 0, 0)] = true;
        grid.occupancy[(0, 3, 0)] = true;
        grid.occupancy[(0, 0, 1)] = true;
        let cloud = grid_to_pointcloud(&grid, None, None).unwrap();
        let bins: Vec<_> = (0..3)
            .map(|i| {
                let (r, a, e) = cartesian_to_spherical(cloud.xyz(i));
                (g.range_axis().bin_of(r), g.azimuth_axis().bin_of(a), g.elevation_axis().bin_of(e))
            })
            .collect();
        assert_eq!(bins, vec![(Some(0), Some(0), Some(1)), (Some(0), Some(3), Some(0)), (Some(2), Some(0), Some(0))]);
    }
}
