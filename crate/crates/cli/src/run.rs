//! Plumbing shared by the commands: error classes, inputs, manifests.

use std::path::Path;

use anyhow::anyhow;
use radarpc_core::io::{self, DetectorRef, FileEntry, FileKind, IoError, RunManifest};
use radarpc_core::{CellGeometry, TOOL_VERSION};
use serde::de::DeserializeOwned;

/// Exit code 2 for `Usage`, 1 for `Runtime`.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

pub fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Malformed documents handed to the command are usage errors; everything
/// else, including missing files, is a runtime failure.
impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Format { .. } => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

pub const THREADS_ENV: &str = "RADARPC_THREADS";

pub fn init_threads() -> Outcome {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    Ok(io::read_json(path)?)
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    path.map(load_json).transpose().map(Option::unwrap_or_default)
}

/// `compact`, `desk`, or a path to a geometry JSON file.
pub fn geometry(spec: &str) -> Outcome<CellGeometry> {
    let g = match spec {
        "compact" => CellGeometry::compact(),
        "desk" => CellGeometry::desk_default(),
        path => load_json(Path::new(path))?,
    };
    g.validate().map_err(usage)?;
    Ok(g)
}

/// RFC 3339 time from `SOURCE_DATE_EPOCH`, or the Unix epoch when unset,
/// so repeated runs produce identical manifests.
pub fn created_at() -> Outcome<String> {
    let secs: i64 = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}")))?,
        Err(_) => 0,
    };
    let t = chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| usage("SOURCE_DATE_EPOCH out of range"))?;
    Ok(t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

pub struct ManifestDraft {
    pub command: &'static str,
    pub scene_spec_hash: String,
    pub detector: DetectorRef,
    pub geometry: CellGeometry,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

impl ManifestDraft {
    /// Writes `manifest.json` into `dir`. The run id is a digest of the
    /// command, inputs and outputs.
    pub fn write(self, dir: &Path) -> Outcome<RunManifest> {
        let mut key = format!("{}\n{}\n{}\n", self.command, self.scene_spec_hash, self.seed);
        for f in &self.files {
            key.push_str(&f.sha256);
        }
        let manifest = RunManifest {
            run_id: format!("{}-{}", self.command, &io::sha256_hex(key.as_bytes())[..16]),
            scene_spec_hash: self.scene_spec_hash,
            detector: self.detector,
            geometry: self.geometry,
            created_at: created_at()?,
            tool_version: TOOL_VERSION.to_string(),
            seed: self.seed,
            files: self.files,
        };
        io::write_manifest(&dir.join(io::MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

/// Writes a text file under `dir` and returns its manifest entry.
pub fn write_text(dir: &Path, rel: &str, text: &str, kind: FileKind) -> Outcome<FileEntry> {
    let sha256 = io::write_bytes(&dir.join(rel), text.as_bytes())?;
    Ok(FileEntry { path: rel.to_string(), sha256, kind, sequence: None, frame: None })
}
