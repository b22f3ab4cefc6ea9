//! On-disk dataset manifests: the core manifest plus the source files it was
//! built from, identified by path and SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soupsr_core::dataset::{build_manifest, Dataset, DatasetManifest, DatasetOptions};
use soupsr_core::degradation::DegradationSpec;
use soupsr_core::Volume;

use crate::error::{Error, Result};
use crate::volume_io::{load_volume, raw_paths, VolumeFormat};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: PathBuf,
    pub sha256: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub manifest_version: u32,
    pub files: Vec<SourceFile>,
    pub specs: Vec<DegradationSpec>,
    /// Volumes are min-max normalised after loading.
    pub normalized: bool,
    #[serde(flatten)]
    pub manifest: DatasetManifest,
}

/// Hex SHA-256 of the bytes that make up a volume file (both halves of a
/// raw container).
pub fn hash_volume_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    let parts = match VolumeFormat::from_path(path)? {
        VolumeFormat::Raw => {
            let (a, b) = raw_paths(path);
            vec![a, b]
        }
        VolumeFormat::Nifti1 => vec![path.to_path_buf()],
    };
    for p in parts {
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(crate::hex(&h.finalize()))
}

pub fn load_normalized(paths: &[PathBuf]) -> Result<Vec<Volume>> {
    paths.iter().map(|p| Ok(load_volume(p)?.normalize())).collect()
}

pub fn build_dataset_file(paths: &[PathBuf], specs: &[DegradationSpec], opts: &DatasetOptions) -> Result<(DatasetFile, Vec<Volume>)> {
    let vols = load_normalized(paths)?;
    let mut files = Vec::new();
    for (p, v) in paths.iter().zip(&vols) {
        if files.iter().any(|f: &SourceFile| f.id == v.id) {
            return Err(Error::Usage(format!("duplicate volume id `{}` ({})", v.id, p.display())));
        }
        files.push(SourceFile { path: p.clone(), sha256: hash_volume_file(p)?, id: v.id.clone() });
    }
    let manifest = build_manifest(&vols, specs, opts)?;
    Ok((DatasetFile { manifest_version: MANIFEST_VERSION, files, specs: specs.to_vec(), normalized: true, manifest }, vols))
}

pub fn save_dataset_file(f: &DatasetFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(f)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_dataset_file(path: &Path) -> Result<DatasetFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if f.manifest_version != MANIFEST_VERSION {
        return Err(Error::Format(format!("{}: manifest_version {} (supported: {MANIFEST_VERSION})", path.display(), f.manifest_version)));
    }
    Ok(f)
}

/// Re-read and verify the source volumes, then rebuild the patch pairs.
/// Relative source paths are resolved against the manifest's directory.
pub fn open_dataset(manifest_path: &Path) -> Result<(DatasetFile, Dataset)> {
    let f = load_dataset_file(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut vols = Vec::new();
    for src in &f.files {
        let p = if src.path.is_absolute() { src.path.clone() } else { base.join(&src.path) };
        let got = hash_volume_file(&p)?;
        if got != src.sha256 {
            return Err(Error::Format(format!("{}: sha256 {got} differs from manifest {}", p.display(), src.sha256)));
        }
        let mut v = load_volume(&p)?;
        if f.normalized {
            v = v.normalize();
        }
        vols.push(v);
    }
    let ds = Dataset::materialize(f.manifest.clone(), &vols)?;
    Ok((f, ds))
}
