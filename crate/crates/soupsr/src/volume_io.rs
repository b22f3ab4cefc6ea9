//! NIfTI-1 single-file images and the raw `.vol` + `.json` container.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soupsr_core::Volume;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    Nifti1,
    Raw,
}

impl VolumeFormat {
    /// `.nii` is NIfTI-1; `.vol` and `.json` are the raw container.
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".nii") {
            Ok(VolumeFormat::Nifti1)
        } else if name.ends_with(".vol") || name.ends_with(".json") {
            Ok(VolumeFormat::Raw)
        } else if name.ends_with(".nii.gz") {
            Err(Error::Unsupported(format!("{}: compressed NIfTI is not supported", path.display())))
        } else {
            Err(Error::Unsupported(format!("{}: unknown volume extension (expected .nii or .vol)", path.display())))
        }
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("volume");
    name.trim_end_matches(".nii").trim_end_matches(".vol").trim_end_matches(".json").to_string()
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti1 => load_nifti(path),
        VolumeFormat::Raw => load_raw(path),
    }
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti1 => save_nifti(v, path),
        VolumeFormat::Raw => save_raw(v, path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub id: String,
}

/// `(data, sidecar)` paths for a raw container given either file.
pub fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("vol"), path.with_extension("json"))
}

pub fn load_raw(path: &Path) -> Result<Volume> {
    let (vol, json) = raw_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let side: RawSidecar = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    let bytes = fs::read(&vol).map_err(|e| Error::io(&vol, e))?;
    let n: usize = side.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!("{}: {} bytes, sidecar dims {:?} need {}", vol.display(), bytes.len(), side.dims, n * 4)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Volume::new(side.id, side.dims, side.spacing_mm, data)?)
}

pub fn save_raw(v: &Volume, path: &Path) -> Result<()> {
    let (vol, json) = raw_paths(path);
    let mut bytes = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&vol, bytes).map_err(|e| Error::io(&vol, e))?;
    let side = RawSidecar { dims: v.dims(), spacing_mm: v.spacing(), id: v.id.clone() };
    let text = serde_json::to_string_pretty(&side).expect("sidecar serialises");
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

const NIFTI_HEADER: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;

/// NIfTI-1 datatype codes.
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

struct Reader<'a> {
    b: &'a [u8],
    le: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0; N];
        a.copy_from_slice(&self.b[at..at + N]);
        if !self.le {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.bytes(at))
    }
}

/// Header fields this reader uses.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub little_endian: bool,
    /// `dim[0..8]`
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

pub fn parse_nifti_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < NIFTI_HEADER {
        return Err(Error::Format(format!("NIfTI header needs {NIFTI_HEADER} bytes, file has {}", bytes.len())));
    }
    let le = match (i32::from_le_bytes(bytes[0..4].try_into().unwrap()), i32::from_be_bytes(bytes[0..4].try_into().unwrap())) {
        (348, _) => true,
        (_, 348) => false,
        (n, _) => return Err(Error::Format(format!("sizeof_hdr is {n}, expected 348"))),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format(format!("bad NIfTI-1 magic {:?} (only single-file n+1 is supported)", &bytes[344..348])));
    }
    let r = Reader { b: bytes, le };
    Ok(NiftiHeader {
        little_endian: le,
        dim: std::array::from_fn(|i| r.i16(40 + 2 * i)),
        datatype: r.i16(70),
        bitpix: r.i16(72),
        pixdim: std::array::from_fn(|i| r.f32(76 + 4 * i)),
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
    })
}

pub fn load_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let h = parse_nifti_header(&bytes).map_err(|e| fail(e.to_string()))?;
    let nd = h.dim[0];
    if !(1..=7).contains(&nd) || h.dim[1..=nd as usize].iter().any(|&d| d < 1) {
        return Err(fail(format!("invalid dim {:?}", h.dim)));
    }
    if nd > 3 && h.dim[4..=nd as usize].iter().any(|&d| d != 1) {
        return Err(Error::Unsupported(format!("{}: only single 3D volumes are supported, dim = {:?}", path.display(), h.dim)));
    }
    let get = |i: usize| if (i as i16) <= nd { h.dim[i] as usize } else { 1 };
    let (nx, ny, nz) = (get(1), get(2), get(3));
    let (width, conv): (usize, fn(&Reader, usize) -> f64) = match h.datatype {
        DT_UINT8 => (1, |r, at| r.b[at] as f64),
        DT_INT16 => (2, |r, at| r.i16(at) as f64),
        DT_INT32 => (4, |r, at| r.i32(at) as f64),
        DT_FLOAT32 => (4, |r, at| r.f32(at) as f64),
        DT_FLOAT64 => (8, |r, at| r.f64(at)),
        d => return Err(Error::Unsupported(format!("{}: unsupported NIfTI datatype {d}", path.display()))),
    };
    let off = h.vox_offset;
    if !(off.is_finite() && off >= NIFTI_VOX_OFFSET as f32 && off.fract() == 0.0) {
        return Err(fail(format!("vox_offset {off} must be an integer >= {NIFTI_VOX_OFFSET}")));
    }
    let off = off as usize;
    let n = nx * ny * nz;
    if bytes.len() < off + n * width {
        return Err(fail(format!("{} voxel bytes expected after offset {off}, file has {}", n * width, bytes.len())));
    }
    let spacing = [3, 2, 1].map(|i| if (i as i16) <= nd { h.pixdim[i].abs() as f64 } else { 1.0 });
    let (slope, inter) = if h.scl_slope != 0.0 && h.scl_slope.is_finite() { (h.scl_slope as f64, h.scl_inter as f64) } else { (1.0, 0.0) };
    let r = Reader { b: &bytes, le: h.little_endian };
    // on disk x varies fastest, which is C order over (z, y, x)
    let data = (0..n).map(|i| (conv(&r, off + i * width) * slope + inter) as f32).collect();
    Ok(Volume::new(stem(path), [nz, ny, nx], spacing, data)?)
}

/// Float32 little-endian NIfTI-1 with scanner-space axes scaled by spacing.
pub fn nifti_bytes(v: &Volume) -> Result<Vec<u8>> {
    let [nz, ny, nx] = v.dims();
    if [nz, ny, nx].iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("dims {:?} exceed the NIfTI-1 limit", v.dims())));
    }
    let [dz, dy, dx] = v.spacing();
    let mut h = vec![0u8; NIFTI_VOX_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(&mut h, 0, &348i32.to_le_bytes());
    for (i, d) in [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1].iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &DT_FLOAT32.to_le_bytes());
    put(&mut h, 72, &32i16.to_le_bytes());
    for (i, p) in [1.0f32, dx as f32, dy as f32, dz as f32, 0.0, 0.0, 0.0, 0.0].iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(NIFTI_VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    h[123] = 2; // mm
    let descrip = format!("soupsr {}", v.id);
    let d = descrip.as_bytes();
    put(&mut h, 148, &d[..d.len().min(79)]);
    put(&mut h, 254, &1i16.to_le_bytes()); // sform_code: scanner
    for (row, vals) in [[dx, 0.0, 0.0], [0.0, dy, 0.0], [0.0, 0.0, dz]].iter().enumerate() {
        for (c, x) in vals.iter().chain(&[0.0]).enumerate() {
            put(&mut h, 280 + 16 * row + 4 * c, &(*x as f32).to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");
    h.reserve(v.data().len() * 4);
    for x in v.data() {
        h.extend_from_slice(&x.to_le_bytes());
    }
    Ok(h)
}

pub fn save_nifti(v: &Volume, path: &Path) -> Result<()> {
    let bytes = nifti_bytes(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_from_extension() {
        assert_eq!(VolumeFormat::from_path(Path::new("a/b.nii")).unwrap(), VolumeFormat::Nifti1);
        assert_eq!(VolumeFormat::from_path(Path::new("b.vol")).unwrap(), VolumeFormat::Raw);
        assert!(matches!(VolumeFormat::from_path(Path::new("b.nii.gz")), Err(Error::Unsupported(_))));
        assert!(VolumeFormat::from_path(Path::new("b.png")).is_err());
    }

    #[test]
    fn header_rejects_bad_magic() {
        let v = Volume::new("x", [2, 2, 2], [1.0; 3], vec![0.0; 8]).unwrap();
        let mut b = nifti_bytes(&v).unwrap();
        assert!(parse_nifti_header(&b).is_ok());
        b[345] = b'i';
        assert!(matches!(parse_nifti_header(&b), Err(Error::Format(_))));
        assert!(parse_nifti_header(&b[..100]).is_err());
    }
}
