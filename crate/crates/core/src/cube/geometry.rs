use serde::{Deserialize, Serialize};

use super::CubeError;

/// Closed interval `[min, max]` along one physical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: f64,
    pub max: f64,
}

impl Extent {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Uniform binning of one axis.
///
/// Bin `i` covers `(min + i·w, min + (i+1)·w]`, except bin 0 which also owns
/// `min` itself. A value lying exactly on an interior edge therefore lands in
/// the lower of the two bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAxis {
    pub extent: Extent,
    pub bins: usize,
}

impl BinAxis {
    pub fn width(&self) -> f64 {
        self.extent.span() / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.extent.min + (i as f64 + 0.5) * self.extent.span() / self.bins as f64
    }

    /// Lower and upper physical edge of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        (self.extent.min + i as f64 * w, self.extent.min + (i + 1) as f64 * w)
    }

    /// Bin holding `v`, or `None` when `v` lies outside the extent.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !v.is_finite() {
            return None;
        }
        let t = (v - self.extent.min) / self.extent.span() * self.bins as f64;
        if t < 0.0 || t > self.bins as f64 {
            return None;
        }
        let b = t.ceil() as i64 - 1;
        Some(b.clamp(0, self.bins as i64 - 1) as usize)
    }

    /// Like [`bin_of`](Self::bin_of) but saturates at the outer bins.
    pub fn bin_clamped(&self, v: f64) -> usize {
        let v = v.clamp(self.extent.min, self.extent.max);
        self.bin_of(v).unwrap_or(0)
    }
}

/// Discretisation of the radar field of view in spherical coordinates.
///
/// Ranges in meters, angles in radians, Doppler in m/s. Every axis is binned
/// uniformly in its own unit, so the Cartesian volume of a cell grows with
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub doppler_bins: usize,
    pub range_extent: Extent,
    pub azimuth_extent: Extent,
    pub elevation_extent: Extent,
    pub doppler_extent: Extent,
}

impl Default for CellGeometry {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl CellGeometry {
    /// 128 × 64 × 16 × 32 bins over [1, 50] m, ±60° azimuth, ±15° elevation
    /// and ±10 m/s.
    pub fn desk_default() -> Self {
        Self {
            range_bins: 128,
            azimuth_bins: 64,
            elevation_bins: 16,
            doppler_bins: 32,
            range_extent: Extent::new(1.0, 50.0),
            azimuth_extent: Extent::new(-60f64.to_radians(), 60f64.to_radians()),
            elevation_extent: Extent::new(-15f64.to_radians(), 15f64.to_radians()),
            doppler_extent: Extent::new(-10.0, 10.0),
        }
    }

    /// A small field of view used by tests, benches and the quick CLI presets:
    /// 32 × 16 × 8 × 16 bins over [2, 26] m, ±40° azimuth, ±12° elevation,
    /// ±8 m/s.
    pub fn compact() -> Self {
        Self {
            range_bins: 32,
            azimuth_bins: 16,
            elevation_bins: 8,
            doppler_bins: 16,
            range_extent: Extent::new(2.0, 26.0),
            azimuth_extent: Extent::new(-40f64.to_radians(), 40f64.to_radians()),
            elevation_extent: Extent::new(-12f64.to_radians(), 12f64.to_radians()),
            doppler_extent: Extent::new(-8.0, 8.0),
        }
    }

    pub fn validate(&self) -> Result<(), CubeError> {
        let counts = [
            ("range_bins", self.range_bins),
            ("azimuth_bins", self.azimuth_bins),
            ("elevation_bins", self.elevation_bins),
            ("doppler_bins", self.doppler_bins),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(CubeError::InvalidGeometry(format!("{name} must be at least 1")));
            }
        }
        let extents = [
            ("range_extent", self.range_extent),
            ("azimuth_extent", self.azimuth_extent),
            ("elevation_extent", self.elevation_extent),
            ("doppler_extent", self.doppler_extent),
        ];
        for (name, e) in extents {
            if !(e.min.is_finite() && e.max.is_finite() && e.min < e.max) {
                return Err(CubeError::InvalidGeometry(format!(
                    "{name} must satisfy min < max, got [{}, {}]",
                    e.min, e.max
                )));
            }
        }
        if self.range_extent.min < 0.0 {
            return Err(CubeError::InvalidGeometry("range_extent.min must be >= 0".into()));
        }
        Ok(())
    }

    pub fn range_axis(&self) -> BinAxis {
        BinAxis { extent: self.range_extent, bins: self.range_bins }
    }

    pub fn azimuth_axis(&self) -> BinAxis {
        BinAxis { extent: self.azimuth_extent, bins: self.azimuth_bins }
    }

    pub fn elevation_axis(&self) -> BinAxis {
        BinAxis { extent: self.elevation_extent, bins: self.elevation_bins }
    }

    pub fn doppler_axis(&self) -> BinAxis {
        BinAxis { extent: self.doppler_extent, bins: self.doppler_bins }
    }

    /// `(range, azimuth, Doppler)` shape of the radar cube tensors.
    pub fn cube_dims(&self) -> (usize, usize, usize) {
        (self.range_bins, self.azimuth_bins, self.doppler_bins)
    }

    /// `(range, azimuth, elevation)` shape of occupancy grids.
    pub fn grid_dims(&self) -> (usize, usize, usize) {
        (self.range_bins, self.azimuth_bins, self.elevation_bins)
    }

    pub fn voxel_count(&self) -> usize {
        self.range_bins * self.azimuth_bins * self.elevation_bins
    }

    /// True when two geometries describe the same binning.
    pub fn same_binning(&self, other: &CellGeometry) -> bool {
        self == other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_map_back_to_their_bin() {
        let g = CellGeometry::desk_default();
        for axis in [g.range_axis(), g.azimuth_axis(), g.elevation_axis(), g.doppler_axis()] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..axis.bins {
                let c = axis.center(i);
                assert!(c > prev, "centers must increase");
                prev = c;
                assert_eq!(axis.bin_of(c), Some(i));
            }
        }
    }

    #[test]
    fn interior_edges_go_to_lower_bin() {
        let axis = BinAxis { extent: Extent::new(0.0, 4.0), bins: 4 };
        assert_eq!(axis.bin_of(0.0), Some(0));
        assert_eq!(axis.bin_of(1.0), Some(0));
        assert_eq!(axis.bin_of(2.0), Some(1));
        assert_eq!(axis.bin_of(4.0), Some(3));
        assert_eq!(axis.bin_of(4.000001), None);
        assert_eq!(axis.bin_of(-1e-9), None);
        assert_eq!(axis.bin_of(f64::NAN), None);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let mut g = CellGeometry::compact();
        g.range_bins = 0;
        assert!(g.validate().is_err());
        let mut g = CellGeometry::compact();
        g.azimuth_extent = Extent::new(0.5, 0.5);
        assert!(g.validate().is_err());
        assert!(CellGeometry::desk_default().validate().is_ok());
    }
}
