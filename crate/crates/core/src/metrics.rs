//! Full-reference quality metrics on normalised volumes and the evaluation
//! sweep that produces per-record comparisons.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::degradation::{degrade, upsample_cubic, DegradationSpec};
use crate::error::{bail, Result};
use crate::model::{generate, MultiScaleCheckpoint};
use crate::volume::Volume;

fn check_pair(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        bail!(Shape, "volumes differ in size: {:?} vs {:?}", a.dims(), b.dims());
    }
    Ok(())
}

pub fn rmse(a: &Volume, b: &Volume) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let sq: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64) * (x as f64 - y as f64)).sum();
    Ok(libm::sqrt(sq / n))
}

/// PSNR for data range 1; `+inf` when the error is zero.
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * libm::log10(rmse)
    }
}

pub fn psnr(a: &Volume, b: &Volume) -> Result<f64> {
    rmse(a, b).map(psnr_from_rmse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// One 3-D Gaussian window.
    Volumetric,
    /// 2-D SSIM per axial slice, averaged.
    Slicewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimOptions {
    pub sigma: f64,
    /// Window edge, clipped to the volume on thin axes.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub mode: SsimMode,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions { sigma: 1.5, window: 11, k1: 0.01, k2: 0.03, mode: SsimMode::Volumetric }
    }
}

/// Smallest extent accepted on any filtered axis.
pub const SSIM_MIN_EXTENT: usize = 3;

fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..len).map(|i| libm::exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma))).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Valid-mode separable filtering of a `[z, y, x]` array along one axis.
fn filter_axis(src: &[f64], dims: [usize; 3], axis: usize, taps: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let mut od = dims;
    od[axis] = dims[axis] + 1 - taps.len();
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = vec![0.0; od[0] * od[1] * od[2]];
    let mut o = 0;
    for z in 0..od[0] {
        for y in 0..od[1] {
            for x in 0..od[2] {
                let base = (z * dims[1] + y) * dims[2] + x;
                out[o] = taps.iter().enumerate().map(|(k, w)| w * src[base + k * stride]).sum();
                o += 1;
            }
        }
    }
    (out, od)
}

fn gaussian_filter(src: &[f64], dims: [usize; 3], taps: &[Vec<f64>; 3]) -> Vec<f64> {
    let (a, d) = filter_axis(src, dims, 0, &taps[0]);
    let (b, d) = filter_axis(&a, d, 1, &taps[1]);
    filter_axis(&b, d, 2, &taps[2]).0
}

fn ssim_block(a: &[f64], b: &[f64], dims: [usize; 3], opts: &SsimOptions) -> f64 {
    let taps = [0, 1, 2].map(|i| gaussian_taps(opts.window.min(dims[i]), opts.sigma));
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let [ma, mb, saa, sbb, sab] = [a, b, &aa[..], &bb[..], &ab[..]].map(|s| gaussian_filter(s, dims, &taps));
    let c1 = opts.k1 * opts.k1;
    let c2 = opts.k2 * opts.k2;
    let mut sum = 0.0;
    for i in 0..ma.len() {
        let (mx, my) = (ma[i], mb[i]);
        let vx = saa[i] - mx * mx;
        let vy = sbb[i] - my * my;
        let cxy = sab[i] - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    sum / ma.len() as f64
}

pub fn ssim(a: &Volume, b: &Volume) -> Result<f64> {
    ssim_with(a, b, &SsimOptions::default())
}

pub fn ssim_with(a: &Volume, b: &Volume, opts: &SsimOptions) -> Result<f64> {
    check_pair(a, b)?;
    if !(opts.sigma > 0.0) || opts.window == 0 {
        bail!(Config, "invalid SSIM window {opts:?}");
    }
    let dims = a.dims();
    let filtered: &[usize] = match opts.mode {
        SsimMode::Volumetric => &dims,
        SsimMode::Slicewise => &dims[1..],
    };
    if filtered.iter().any(|&d| d < SSIM_MIN_EXTENT) {
        bail!(Dimension, "SSIM needs at least {SSIM_MIN_EXTENT} voxels per filtered axis, got {dims:?}");
    }
    let fa: Vec<f64> = a.data().iter().map(|&x| x as f64).collect();
    let fb: Vec<f64> = b.data().iter().map(|&x| x as f64).collect();
    Ok(match opts.mode {
        SsimMode::Volumetric => ssim_block(&fa, &fb, dims, opts),
        SsimMode::Slicewise => {
            let n = dims[1] * dims[2];
            let sd = [1, dims[1], dims[2]];
            let total: f64 = fa.chunks(n).zip(fb.chunks(n)).map(|(x, y)| ssim_block(x, y, sd, opts)).sum();
            total / dims[0] as f64
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmse, Metric::Psnr, Metric::Ssim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }
}

/// Floats that may be `+inf` (written as the string `"inf"`) or missing.
pub mod float_or_inf {
    use core::fmt;
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    struct V;

    impl<'de> Visitor<'de> for V {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number, \"inf\", \"-inf\" or null")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
        fn visit_none<E: de::Error>(self) -> Result<f64, E> {
            Ok(f64::NAN)
        }
        fn visit_unit<E: de::Error>(self) -> Result<f64, E> {
            Ok(f64::NAN)
        }
        fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<f64, D::Error> {
            d.deserialize_any(V)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_option(V)
    }
}

/// One (volume, scale, method) cell. Failed cells carry `error` and NaN
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub volume_id: String,
    pub method: String,
    pub scale: f64,
    #[serde(with = "float_or_inf")]
    pub rmse: f64,
    #[serde(with = "float_or_inf")]
    pub psnr: f64,
    #[serde(with = "float_or_inf")]
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricRecord {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Rmse => self.rmse,
            Metric::Psnr => self.psnr,
            Metric::Ssim => self.ssim,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// A reconstruction method under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Tricubic,
    Sr { name: &'a str, ckpt: &'a MultiScaleCheckpoint },
}

impl Method<'_> {
    pub fn name(&self) -> &str {
        match self {
            Method::Tricubic => "tricubic",
            Method::Sr { name, .. } => name,
        }
    }

    pub fn reconstruct(&self, lr: &Volume, s: f64) -> Result<Volume> {
        match self {
            Method::Tricubic => upsample_cubic(lr, s),
            Method::Sr { ckpt, .. } => generate(ckpt, lr, s),
        }
    }
}

/// RMSE, PSNR and SSIM of `rec` against `hr` after centre-cropping both to
/// their common extent.
pub fn compare(hr: &Volume, rec: &Volume) -> Result<[f64; 3]> {
    let (h, r) = (hr.dims(), rec.dims());
    let common = [0, 1, 2].map(|i| h[i].min(r[i]));
    let a = hr.center_crop(common)?;
    let b = rec.center_crop(common)?;
    let e = rmse(&a, &b)?;
    Ok([e, psnr_from_rmse(e), ssim(&a, &b)?])
}

/// Degrade every normalised HR volume with every spec, reconstruct with
/// every method and score the result. Failures become error cells.
pub fn evaluate_methods(hr: &[Volume], specs: &[DegradationSpec], methods: &[Method<'_>]) -> Vec<MetricRecord> {
    let mut out = Vec::with_capacity(hr.len() * specs.len() * methods.len());
    for v in hr {
        let v = v.normalize();
        for spec in specs {
            let lr = degrade(&v, spec);
            for m in methods {
                let res = lr.as_ref().map_err(Clone::clone).and_then(|lr| compare(&v, &m.reconstruct(lr, spec.scale as f64)?));
                let (vals, error) = match res {
                    Ok(x) => (x, None),
                    Err(e) => ([f64::NAN; 3], Some(e.to_string())),
                };
                out.push(MetricRecord {
                    volume_id: v.id.clone(),
                    method: m.name().into(),
                    scale: spec.scale as f64,
                    rmse: vals[0],
                    psnr: vals[1],
                    ssim: vals[2],
                    error,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
}

impl Stars {
    pub fn from_p(p: f64) -> Stars {
        if p < 0.001 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub method_a: String,
    pub method_b: String,
    pub scale: f64,
    pub metric: Metric,
    pub p_value: f64,
    pub stars: Stars,
    pub n: usize,
    /// Mean of `a - b`.
    pub mean_difference: f64,
}

/// Per-volume `a - b` differences of `metric` at `scale`, ordered by volume
/// id. Every successful `a` cell needs a successful `b` partner.
pub fn paired_differences(records: &[MetricRecord], metric: Metric, method_a: &str, method_b: &str, scale: f64) -> Result<Vec<f64>> {
    let pick = |m: &str| {
        let mut v: Vec<&MetricRecord> = records.iter().filter(|r| r.method == m && r.scale == scale && r.is_ok()).collect();
        v.sort_by(|x, y| x.volume_id.cmp(&y.volume_id));
        v
    };
    let (a, b) = (pick(method_a), pick(method_b));
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.volume_id != y.volume_id) {
        bail!(InsufficientData, "`{method_a}` and `{method_b}` at scale {scale} are not evaluated on the same volumes");
    }
    if a.len() < 2 {
        bail!(InsufficientData, "need at least 2 paired volumes at scale {scale}, have {}", a.len());
    }
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.get(metric) - y.get(metric)).collect();
    if d.iter().any(|x| !x.is_finite()) {
        bail!(InsufficientData, "non-finite {} difference at scale {scale}", metric.name());
    }
    Ok(d)
}
