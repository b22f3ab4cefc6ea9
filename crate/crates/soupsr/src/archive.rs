//! `.soup` archives: a stored zip holding `manifest.json` and one
//! little-endian float32 blob per tensor under `tensors/`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use soupsr_core::{Shape, Tensor};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::error::{corrupt, Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 5],
}

/// Parsed archive manifest: the tensor table plus kind-specific fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(flatten)]
    pub body: BTreeMap<String, Value>,
}

pub type TensorMap = BTreeMap<String, Tensor<f32>>;

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('/') || name.contains('\\') || name.starts_with('.') {
        return Err(Error::Format(format!("invalid tensor name `{name}`")));
    }
    Ok(())
}

pub fn write_archive<W: Write + Seek>(w: W, kind: &str, body: BTreeMap<String, Value>, tensors: &TensorMap) -> Result<()> {
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_VERSION,
        kind: kind.into(),
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().0 }).collect(),
        body,
    };
    let zerr = |e: zip::result::ZipError| Error::Format(format!("writing archive: {e}"));
    let ioerr = |e: std::io::Error| Error::Format(format!("writing archive: {e}"));
    // fixed timestamps keep archives byte-reproducible
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    let mut z = ZipWriter::new(w);
    z.start_file("manifest.json", opts).map_err(zerr)?;
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    z.write_all(&text).map_err(ioerr)?;
    for (name, t) in tensors {
        check_name(name)?;
        z.start_file(format!("tensors/{name}.bin"), opts).map_err(zerr)?;
        let mut buf = Vec::with_capacity(t.data().len() * 4);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        z.write_all(&buf).map_err(ioerr)?;
    }
    z.finish().map_err(zerr)?;
    Ok(())
}

pub fn read_archive<R: Read + Seek>(r: R) -> Result<(ArchiveManifest, TensorMap)> {
    let mut z = ZipArchive::new(r).map_err(|e| corrupt(format!("not a readable archive: {e}")))?;
    let mut text = Vec::new();
    z.by_name("manifest.json")
        .map_err(|e| corrupt(format!("manifest.json: {e}")))?
        .read_to_end(&mut text)
        .map_err(|e| corrupt(format!("manifest.json: {e}")))?;
    let manifest: ArchiveManifest = serde_json::from_slice(&text).map_err(|e| corrupt(format!("manifest.json: {e}")))?;
    if manifest.format_version != ARCHIVE_VERSION {
        return Err(corrupt(format!("archive version {} (supported: {ARCHIVE_VERSION})", manifest.format_version)));
    }
    let mut tensors = TensorMap::new();
    for e in &manifest.tensors {
        check_name(&e.name).map_err(|err| corrupt(err.to_string()))?;
        let shape = Shape(e.shape);
        let mut bytes = Vec::new();
        z.by_name(&format!("tensors/{}.bin", e.name))
            .map_err(|err| corrupt(format!("tensor `{}`: {err}", e.name)))?
            .read_to_end(&mut bytes)
            .map_err(|err| corrupt(format!("tensor `{}`: {err}", e.name)))?;
        if bytes.len() != shape.len() * 4 {
            return Err(corrupt(format!("tensor `{}` has {} bytes, shape {shape} needs {}", e.name, bytes.len(), shape.len() * 4)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if tensors.insert(e.name.clone(), Tensor::from_vec(shape, data)?).is_some() {
            return Err(corrupt(format!("duplicate tensor `{}`", e.name)));
        }
    }
    Ok((manifest, tensors))
}

pub fn save_archive(path: &Path, kind: &str, body: BTreeMap<String, Value>, tensors: &TensorMap) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(std::io::BufWriter::new(f), kind, body, tensors)
}

pub fn load_archive(path: &Path) -> Result<(ArchiveManifest, TensorMap)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(std::io::BufReader::new(f))
}

/// Typed field of a manifest body.
pub fn field<T: serde::de::DeserializeOwned>(m: &ArchiveManifest, key: &str) -> Result<T> {
    let v = m.body.get(key).ok_or_else(|| corrupt(format!("manifest lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| corrupt(format!("manifest field `{key}`: {e}")))
}

pub fn expect_kind(m: &ArchiveManifest, kind: &str) -> Result<()> {
    if m.kind != kind {
        return Err(corrupt(format!("archive holds `{}`, expected `{kind}`", m.kind)));
    }
    Ok(())
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}
