//! Binary formats for cubes, clouds, grids and checkpoints, JSON run
//! manifests, and on-disk dataset directories.
//!
//! Every multi-byte value is little-endian. Layouts are documented in
//! `docs/formats.md` and pinned by golden files under `tests/golden`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cfar::CfarConfig;
use crate::cube::{CellGeometry, Extent, RadarCubePair, SceneSpec};
use crate::dataset::{Dataset, Sequence};
use crate::grid::{FeatureLayout, OccupancyGrid, PointCloud};
use crate::net::{Network, NetworkConfig, ParamKind, Tensor};

pub const CUBE_MAGIC: &[u8; 4] = b"RDC1";
pub const CLOUD_MAGIC: &[u8; 4] = b"RPC1";
pub const GRID_MAGIC: &[u8; 4] = b"ROG1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCK1";
pub const FORMAT_VERSION: u16 = 1;

/// A malformed binary or JSON document. Offsets are in bytes from the
/// start of the file.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("truncated {what} at offset {offset}: expected {expected} bytes, {actual} available")]
    Truncated { offset: usize, what: &'static str, expected: usize, actual: usize },
    #[error("invalid header at offset {offset}: {reason}")]
    InvalidHeader { offset: usize, reason: String },
    #[error("{extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    JsonSyntax { line: usize, column: usize, message: String },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        let (line, column) = (e.line(), e.column());
        let full = e.to_string();
        let suffix = format!(" at line {line} column {column}");
        let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
        if e.is_data() {
            FormatError::Schema { line, column, message }
        } else {
            FormatError::JsonSyntax { line, column, message }
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}: sha256 mismatch, manifest says {expected}, file hashes to {actual}")]
    HashMismatch { path: PathBuf, expected: String, actual: String },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, source: FormatError) -> Self {
        IoError::Format { path: path.to_path_buf(), source }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Writes `bytes` to `path`, creating parent directories, and returns the
/// SHA-256 of the content.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String, IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))?;
    Ok(sha256_hex(bytes))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated { offset: self.pos, what, expected: n, actual: left });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn overflow(&self) -> FormatError {
        FormatError::InvalidHeader { offset: self.pos, reason: "declared size overflows".into() }
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4.min(self.buf.len()), "magic")?;
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let offset = self.pos;
        let version = self.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion { offset, version });
        }
        Ok(())
    }

    fn geometry(&mut self) -> Result<CellGeometry, FormatError> {
        let offset = self.pos;
        let mut bins = [0usize; 4];
        for b in bins.iter_mut() {
            *b = self.u32("geometry bin count")? as usize;
        }
        let mut ext = [Extent::new(0.0, 0.0); 4];
        for e in ext.iter_mut() {
            *e = Extent::new(self.f64("geometry extent")?, self.f64("geometry extent")?);
        }
        let g = CellGeometry {
            range_bins: bins[0],
            azimuth_bins: bins[1],
            elevation_bins: bins[2],
            doppler_bins: bins[3],
            range_extent: ext[0],
            azimuth_extent: ext[1],
            elevation_extent: ext[2],
            doppler_extent: ext[3],
        };
        g.validate().map_err(|e| FormatError::InvalidHeader { offset, reason: e.to_string() })?;
        Ok(g)
    }

    fn finish(&self) -> Result<(), FormatError> {
        let extra = self.buf.len() - self.pos;
        if extra > 0 {
            return Err(FormatError::TrailingBytes { offset: self.pos, extra });
        }
        Ok(())
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn put_geometry(out: &mut Vec<u8>, g: &CellGeometry) {
    for b in [g.range_bins, g.azimuth_bins, g.elevation_bins, g.doppler_bins] {
        out.extend_from_slice(&(b as u32).to_le_bytes());
    }
    for e in [g.range_extent, g.azimuth_extent, g.elevation_extent, g.doppler_extent] {
        out.extend_from_slice(&e.min.to_le_bytes());
        out.extend_from_slice(&e.max.to_le_bytes());
    }
}

/// `RDC1` layout: magic, version u16, geometry header, power f32 tensor,
/// elevation f32 tensor (both range-major), frame id u64, timestamp f64.
pub fn encode_cube(cube: &RadarCubePair) -> Vec<u8> {
    let n = cube.power.len();
    let mut out = Vec::with_capacity(6 + 80 + 8 * n + 16);
    put_header(&mut out, CUBE_MAGIC);
    put_geometry(&mut out, &cube.geometry);
    for t in [&cube.power, &cube.elevation] {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&cube.frame_id.to_le_bytes());
    out.extend_from_slice(&cube.timestamp.to_le_bytes());
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<RadarCubePair, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(CUBE_MAGIC)?;
    let geometry = r.geometry()?;
    let dims = geometry.cube_dims();
    let n = dims.0 * dims.1 * dims.2;
    let power = r.f32s(n, "power tensor")?;
    let elevation = r.f32s(n, "elevation tensor")?;
    let frame_id = r.u64("frame id")?;
    let timestamp = r.f64("timestamp")?;
    r.finish()?;
    Ok(RadarCubePair {
        power: Array3::from_shape_vec(dims, power).expect("sized"),
        elevation: Array3::from_shape_vec(dims, elevation).expect("sized"),
        geometry,
        frame_id,
        timestamp,
    })
}

/// `RPC1` layout: magic, version u16, feature width L u32, point count N
/// u64, frame id u64, then N rows of L f32 values.
pub fn encode_pointcloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(26 + 4 * cloud.points.len());
    put_header(&mut out, CLOUD_MAGIC);
    out.extend_from_slice(&(cloud.layout.width() as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&cloud.frame_id.to_le_bytes());
    for v in cloud.points.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pointcloud(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(CLOUD_MAGIC)?;
    let offset = r.pos;
    let width = r.u32("feature width")? as usize;
    let layout = FeatureLayout::from_width(width)
        .map_err(|e| FormatError::InvalidHeader { offset, reason: e.to_string() })?;
    let offset = r.pos;
    let count = usize::try_from(r.u64("point count")?)
        .map_err(|_| FormatError::InvalidHeader { offset, reason: "point count too large".into() })?;
    let frame_id = r.u64("frame id")?;
    let values = r.f32s(count.checked_mul(width).ok_or_else(|| r.overflow())?, "point rows")?;
    r.finish()?;
    Ok(PointCloud { points: Array2::from_shape_vec((count, width), values).expect("sized"), layout, frame_id })
}

/// `ROG1` layout: magic, version u16, geometry header, frame id u64, then
/// the voxels in range-major `(range, azimuth, elevation)` order packed
/// eight per byte, least significant bit first; unused bits of the last
/// byte are zero.
pub fn encode_grid(grid: &OccupancyGrid) -> Vec<u8> {
    let n = grid.occupancy.len();
    let mut out = Vec::with_capacity(94 + n.div_ceil(8));
    put_header(&mut out, GRID_MAGIC);
    put_geometry(&mut out, &grid.geometry);
    out.extend_from_slice(&grid.frame_id.to_le_bytes());
    let mut packed = vec![0u8; n.div_ceil(8)];
    for (i, v) in grid.occupancy.iter().enumerate() {
        if *v {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<OccupancyGrid, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(GRID_MAGIC)?;
    let geometry = r.geometry()?;
    let frame_id = r.u64("frame id")?;
    let dims = geometry.grid_dims();
    let n = dims.0 * dims.1 * dims.2;
    let offset = r.pos;
    let packed = r.take(n.div_ceil(8), "voxel bits")?;
    if n % 8 != 0 && packed[packed.len() - 1] >> (n % 8) != 0 {
        return Err(FormatError::InvalidHeader {
            offset: offset + packed.len() - 1,
            reason: "padding bits of the last byte are not zero".into(),
        });
    }
    r.finish()?;
    let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(OccupancyGrid { occupancy: Array3::from_shape_vec(dims, bits).expect("sized"), geometry, frame_id })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub network: NetworkConfig,
    pub geometry: CellGeometry,
}

/// `RCK1` layout: magic, version u16, JSON length u32, the JSON
/// [`CheckpointHeader`], tensor count u32, then per tensor: name length
/// u16, UTF-8 name, kind u8, rank u8, dims u32 each, values f64.
pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let header = CheckpointHeader { network: net.config, geometry: net.geometry };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    put_header(&mut out, CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
    for t in &net.params {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.kind.code());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let len = r.u32("config length")? as usize;
    let offset = r.pos;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len, "config JSON")?)
        .map_err(|e| FormatError::InvalidHeader { offset, reason: e.to_string() })?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let offset = r.pos;
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| FormatError::InvalidHeader { offset, reason: "tensor name is not UTF-8".into() })?
            .to_string();
        let code_offset = r.pos;
        let kind = ParamKind::from_code(r.u8("tensor kind")?).ok_or_else(|| FormatError::InvalidHeader {
            offset: code_offset,
            reason: "unknown tensor kind".into(),
        })?;
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| r.overflow())?;
        let data = r.f64s(n, "tensor data")?;
        tensors.push(Tensor { name, kind, shape, data });
    }
    r.finish()?;
    let offset = r.pos;
    Network::from_tensors(header.network, header.geometry, tensors)
        .map_err(|e| FormatError::InvalidHeader { offset, reason: e.to_string() })
}

macro_rules! file_pair {
    ($write:ident, $read:ident, $ty:ty, $enc:ident, $dec:ident) => {
        /// Writes the encoded value and returns its SHA-256.
        pub fn $write(path: &Path, value: &$ty) -> Result<String, IoError> {
            write_bytes(path, &$enc(value))
        }

        pub fn $read(path: &Path) -> Result<$ty, IoError> {
            $dec(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
        }
    };
}

file_pair!(write_cube, read_cube, RadarCubePair, encode_cube, decode_cube);
file_pair!(write_pointcloud, read_pointcloud, PointCloud, encode_pointcloud, decode_pointcloud);
file_pair!(write_grid, read_grid, OccupancyGrid, encode_grid, decode_grid);
file_pair!(write_checkpoint, read_checkpoint, Network, encode_checkpoint, decode_checkpoint);

/// What produced the files of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorRef {
    /// Rendered ground truth; no detector involved.
    GroundTruth,
    Cfar { config: CfarConfig },
    Network { checkpoint: String, sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub kind: FileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Scene,
    Cube,
    GtCloud,
    GtGrid,
    PredGrid,
    Checkpoint,
    Report,
    History,
    Plot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub scene_spec_hash: String,
    pub detector: DetectorRef,
    pub geometry: CellGeometry,
    pub created_at: String,
    pub tool_version: String,
    pub seed: u64,
    #[serde(default)]
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Recomputes the hash of every listed file under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<(), IoError> {
        for f in &self.files {
            let path = dir.join(&f.path);
            let actual = sha256_hex(&read_bytes(&path)?);
            if actual != f.sha256 {
                return Err(IoError::HashMismatch { path, expected: f.sha256.clone(), actual });
            }
        }
        Ok(())
    }

    pub fn files_of(&self, kind: FileKind) -> impl Iterator<Item = &FileEntry> {
        self.files.iter().filter(move |f| f.kind == kind)
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<String, IoError> {
    write_bytes(path, manifest.to_json().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        IoError::format(path, FormatError::InvalidHeader { offset: e.valid_up_to(), reason: "not UTF-8".into() })
    })?;
    RunManifest::from_json(text).map_err(|e| IoError::format(path, e))
}

/// Parses a JSON document, reporting syntax and schema errors with their
/// location.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::format(path, e.into()))
}

/// Digest identifying a list of scenes.
pub fn scenes_hash(scenes: &[&SceneSpec]) -> String {
    if let [one] = scenes {
        return one.content_hash();
    }
    let joined: Vec<String> = scenes.iter().map(|s| s.content_hash()).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

pub fn frame_stem(sequence: usize, frame: usize) -> String {
    format!("seq{sequence:04}_frame{frame:04}")
}

/// Files of one dataset written into a directory, ready to be listed in a
/// manifest.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<FileEntry>, IoError> {
    let mut files = Vec::new();
    for (s, seq) in data.sequences.iter().enumerate() {
        let rel = format!("scenes/scene{s:04}.json");
        let json = serde_json::to_string_pretty(&seq.scene).expect("scene serializes") + "\n";
        let sha256 = write_bytes(&dir.join(&rel), json.as_bytes())?;
        files.push(FileEntry { path: rel, sha256, kind: FileKind::Scene, sequence: Some(s), frame: None });
        for f in 0..seq.len() {
            let stem = frame_stem(s, f);
            let entries = [
                (format!("cubes/{stem}.rdc"), encode_cube(&seq.cubes[f]), FileKind::Cube),
                (format!("gt/{stem}.rpc"), encode_pointcloud(&seq.gt_clouds[f]), FileKind::GtCloud),
                (format!("gt/{stem}.rog"), encode_grid(&seq.gt_grids[f]), FileKind::GtGrid),
            ];
            for (rel, bytes, kind) in entries {
                let sha256 = write_bytes(&dir.join(&rel), &bytes)?;
                files.push(FileEntry { path: rel, sha256, kind, sequence: Some(s), frame: Some(f) });
            }
        }
    }
    Ok(files)
}

/// Loads a dataset directory written by [`write_dataset`] and described by
/// its manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut sequences: Vec<Sequence> = Vec::new();
    for f in manifest.files_of(FileKind::Scene) {
        let scene: SceneSpec = read_json(&dir.join(&f.path))?;
        sequences.push(Sequence { scene, cubes: Vec::new(), gt_clouds: Vec::new(), gt_grids: Vec::new() });
    }
    let slot = |f: &FileEntry, sequences: &mut Vec<Sequence>| -> Result<usize, IoError> {
        let s = f.sequence.ok_or_else(|| IoError::Invalid(format!("{}: no sequence index", f.path)))?;
        if s >= sequences.len() {
            return Err(IoError::Invalid(format!("{}: sequence {s} has no scene", f.path)));
        }
        Ok(s)
    };
    for f in &manifest.files {
        let path = dir.join(&f.path);
        match f.kind {
            FileKind::Cube => {
                let s = slot(f, &mut sequences)?;
                sequences[s].cubes.push(read_cube(&path)?);
            }
            FileKind::GtCloud => {
                let s = slot(f, &mut sequences)?;
                sequences[s].gt_clouds.push(read_pointcloud(&path)?);
            }
            FileKind::GtGrid => {
                let s = slot(f, &mut sequences)?;
                sequences[s].gt_grids.push(read_grid(&path)?);
            }
            _ => {}
        }
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.cubes.len() != s.gt_grids.len() || s.cubes.len() != s.gt_clouds.len() {
            return Err(IoError::Invalid(format!("sequence {i}: cube and ground-truth counts differ")));
        }
        if s.cubes.iter().any(|c| !c.geometry.same_binning(&manifest.geometry)) {
            return Err(IoError::Invalid(format!("sequence {i}: cube geometry differs from the manifest")));
        }
    }
    Ok(Dataset { geometry: manifest.geometry, sequences })
}
