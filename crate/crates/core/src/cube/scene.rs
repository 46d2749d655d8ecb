use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CellGeometry, CubeError};
use crate::grid::{cartesian_to_spherical, spherical_to_cartesian};

/// A box-shaped reflector. Coordinates are sensor-frame Cartesian
/// (x forward, y left, z up) at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub center: [f64; 3],
    #[serde(default)]
    pub half_extents: [f64; 3],
    /// Ground-frame velocity along the initial line of sight, positive when
    /// receding.
    #[serde(default)]
    pub radial_velocity: f64,
    pub reflectivity: f64,
    /// Ground-truth surface samples per square meter.
    pub surface_point_density: f64,
    /// Per-frame probability that the radar return drops out.
    #[serde(default)]
    pub flicker_probability: f64,
}

impl Target {
    pub fn point(center: [f64; 3], reflectivity: f64) -> Self {
        Self {
            center,
            half_extents: [0.0; 3],
            radial_velocity: 0.0,
            reflectivity,
            surface_point_density: 1.0,
            flicker_probability: 0.0,
        }
    }

    fn line_of_sight(&self) -> [f64; 3] {
        let n = norm(self.center);
        if n == 0.0 {
            [1.0, 0.0, 0.0]
        } else {
            self.center.map(|c| c / n)
        }
    }

    /// Center at time `t` for a sensor moving forward at `ego_velocity`.
    pub fn center_at(&self, t: f64, ego_velocity: f64) -> [f64; 3] {
        let u = self.line_of_sight();
        [
            self.center[0] + t * (self.radial_velocity * u[0] - ego_velocity),
            self.center[1] + t * self.radial_velocity * u[1],
            self.center[2] + t * self.radial_velocity * u[2],
        ]
    }

    /// Radial velocity seen by the moving sensor at time `t`.
    pub fn observed_radial_velocity(&self, t: f64, ego_velocity: f64) -> f64 {
        let u0 = self.line_of_sight();
        let rel = [
            self.radial_velocity * u0[0] - ego_velocity,
            self.radial_velocity * u0[1],
            self.radial_velocity * u0[2],
        ];
        let c = self.center_at(t, ego_velocity);
        let n = norm(c);
        if n == 0.0 {
            return rel[0];
        }
        (rel[0] * c[0] + rel[1] * c[1] + rel[2] * c[2]) / n
    }

    fn validate(&self, index: usize) -> Result<(), CubeError> {
        let bad = |what: &str| CubeError::InvalidScene(format!("target {index}: {what}"));
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(bad("center must be finite"));
        }
        if self.half_extents.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(bad("half_extents must be finite and >= 0"));
        }
        if !(self.reflectivity.is_finite() && self.reflectivity > 0.0) {
            return Err(bad("reflectivity must be > 0"));
        }
        if !(self.surface_point_density.is_finite() && self.surface_point_density >= 0.0) {
            return Err(bad("surface_point_density must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.flicker_probability) {
            return Err(bad("flicker_probability must lie in [0, 1]"));
        }
        if !self.radial_velocity.is_finite() {
            return Err(bad("radial_velocity must be finite"));
        }
        Ok(())
    }
}

/// Everything needed to render a synthetic sequence deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub targets: Vec<Target>,
    pub noise_mean_power: f64,
    pub seed: u64,
    pub frame_count: usize,
    pub frame_interval: f64,
    #[serde(default)]
    pub ego_velocity: f64,
}

impl SceneSpec {
    pub fn empty(seed: u64, frame_count: usize) -> Self {
        Self {
            targets: Vec::new(),
            noise_mean_power: 1.0,
            seed,
            frame_count,
            frame_interval: 0.1,
            ego_velocity: 0.0,
        }
    }

    pub fn frame_time(&self, frame: u64) -> f64 {
        frame as f64 * self.frame_interval
    }

    /// Checks the scene's own invariants and that every target center (and
    /// its observed Doppler) stays inside `geometry` for every frame.
    pub fn validate(&self, geometry: &CellGeometry) -> Result<(), CubeError> {
        geometry.validate()?;
        if self.frame_count == 0 {
            return Err(CubeError::InvalidScene("frame_count must be at least 1".into()));
        }
        if !(self.noise_mean_power.is_finite() && self.noise_mean_power > 0.0) {
            return Err(CubeError::InvalidScene("noise_mean_power must be > 0".into()));
        }
        if !(self.frame_interval.is_finite() && self.frame_interval >= 0.0) {
            return Err(CubeError::InvalidScene("frame_interval must be >= 0".into()));
        }
        if !self.ego_velocity.is_finite() {
            return Err(CubeError::InvalidScene("ego_velocity must be finite".into()));
        }
        for (index, target) in self.targets.iter().enumerate() {
            target.validate(index)?;
            for frame in 0..self.frame_count as u64 {
                let t = self.frame_time(frame);
                let (r, az, el) = cartesian_to_spherical(target.center_at(t, self.ego_velocity));
                let v = target.observed_radial_velocity(t, self.ego_velocity);
                let checks = [
                    ("range", r, geometry.range_extent),
                    ("azimuth", az, geometry.azimuth_extent),
                    ("elevation", el, geometry.elevation_extent),
                    ("doppler", v, geometry.doppler_extent),
                ];
                for (what, value, extent) in checks {
                    if !extent.contains(value) {
                        return Err(CubeError::TargetOutOfExtent {
                            index,
                            frame,
                            reason: format!(
                                "{what} {value:.6} outside [{:.6}, {:.6}]",
                                extent.min, extent.max
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Random scene generator used to build training and evaluation datasets.
///
/// Targets are either point reflectors or thin horizontal plates, placed so
/// that they stay inside the geometry for the whole sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub min_targets: usize,
    pub max_targets: usize,
    /// Fraction of targets that are point reflectors (no extent).
    pub point_fraction: f64,
    /// Largest x/y half extent of plate targets, meters.
    pub max_half_extent: f64,
    /// Target reflectivity range in dB above the noise mean.
    pub snr_db: (f64, f64),
    pub max_speed: f64,
    pub flicker_probability: f64,
    pub surface_point_density: f64,
    pub noise_mean_power: f64,
    pub frame_count: usize,
    pub frame_interval: f64,
    /// Keep target centers at least this many bins away from every edge.
    pub margin_bins: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            min_targets: 3,
            max_targets: 6,
            point_fraction: 0.5,
            max_half_extent: 0.4,
            snr_db: (14.0, 22.0),
            max_speed: 2.0,
            flicker_probability: 0.0,
            surface_point_density: 120.0,
            noise_mean_power: 1.0,
            frame_count: 5,
            frame_interval: 0.1,
            margin_bins: 1.5,
        }
    }
}

impl SceneSampler {
    pub fn sample(&self, geometry: &CellGeometry, seed: u64) -> Result<SceneSpec, CubeError> {
        geometry.validate()?;
        if self.min_targets > self.max_targets {
            return Err(CubeError::InvalidScene("min_targets exceeds max_targets".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(self.min_targets..=self.max_targets);
        let mut scene = SceneSpec {
            targets: Vec::with_capacity(count),
            noise_mean_power: self.noise_mean_power,
            seed,
            frame_count: self.frame_count,
            frame_interval: self.frame_interval,
            ego_velocity: 0.0,
        };
        let inner = |axis: crate::cube::BinAxis| {
            let m = self.margin_bins * axis.width();
            (axis.extent.min + m, axis.extent.max - m)
        };
        let (r_lo, r_hi) = inner(geometry.range_axis());
        let (a_lo, a_hi) = inner(geometry.azimuth_axis());
        let (e_lo, e_hi) = inner(geometry.elevation_axis());
        if !(r_lo < r_hi && a_lo < a_hi && e_lo < e_hi) {
            return Err(CubeError::InvalidScene("margin leaves no room for targets".into()));
        }
        let (d_lo, d_hi) = (geometry.doppler_extent.min, geometry.doppler_extent.max);
        let speed = self.max_speed.min(0.9 * d_hi.abs().min(d_lo.abs()));

        for _ in 0..count {
            for _attempt in 0..64 {
                let r = rng.random_range(r_lo..r_hi);
                let az = rng.random_range(a_lo..a_hi);
                let el = rng.random_range(e_lo..e_hi);
                let half = if rng.random_bool(self.point_fraction.clamp(0.0, 1.0)) {
                    [0.0; 3]
                } else {
                    let h = self.max_half_extent;
                    [rng.random_range(0.0..=h), rng.random_range(0.0..=h), 0.0]
                };
                let snr = rng.random_range(self.snr_db.0..=self.snr_db.1);
                let v = if speed > 0.0 { rng.random_range(-speed..=speed) } else { 0.0 };
                let target = Target {
                    center: spherical_to_cartesian(r, az, el),
                    half_extents: half,
                    radial_velocity: v,
                    reflectivity: self.noise_mean_power * 10f64.powf(snr / 10.0),
                    surface_point_density: self.surface_point_density,
                    flicker_probability: self.flicker_probability,
                };
                scene.targets.push(target);
                if scene.validate(geometry).is_ok() {
                    break;
                }
                scene.targets.pop();
            }
        }
        scene.validate(geometry)?;
        Ok(scene)
    }
}
