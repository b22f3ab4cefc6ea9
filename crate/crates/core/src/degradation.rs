//! Through-plane acquisition models and cubic-spline resampling along Z.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    /// Each output slice averages `s` consecutive input slices.
    ThinToThick,
    /// Every `s`-th slice is kept.
    ThinToThin,
    /// Gaussian low-pass along Z, then every `s`-th slice.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    pub scale: u32,
    /// Standard deviation in slices; required for [`DegradationMode::Gaussian`] only.
    #[serde(default)]
    pub gaussian_sigma: Option<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl DegradationSpec {
    pub fn thin_to_thick(scale: u32) -> Self {
        DegradationSpec { mode: DegradationMode::ThinToThick, scale, gaussian_sigma: None, noise_sigma: 0.0, noise_seed: 0 }
    }

    pub fn thin_to_thin(scale: u32) -> Self {
        DegradationSpec { mode: DegradationMode::ThinToThin, ..Self::thin_to_thick(scale) }
    }

    pub fn gaussian(scale: u32, sigma: f64) -> Self {
        DegradationSpec { mode: DegradationMode::Gaussian, gaussian_sigma: Some(sigma), ..Self::thin_to_thick(scale) }
    }

    pub fn with_scale(&self, scale: u32) -> Self {
        DegradationSpec { scale, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            bail!(Config, "sampling factor must be an integer >= 2, got {}", self.scale);
        }
        match (self.mode, self.gaussian_sigma) {
            (DegradationMode::Gaussian, Some(s)) if s.is_finite() && s > 0.0 => {}
            (DegradationMode::Gaussian, _) => bail!(Config, "gaussian mode needs a positive gaussian_sigma"),
            (_, Some(_)) => bail!(Config, "gaussian_sigma is only valid in gaussian mode"),
            (_, None) => {}
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            bail!(Config, "noise_sigma must be finite and >= 0");
        }
        Ok(())
    }

    /// Output slice count for `z_in` input slices.
    pub fn out_slices(&self, z_in: usize) -> usize {
        let s = self.scale as usize;
        match self.mode {
            DegradationMode::ThinToThick => z_in / s,
            DegradationMode::ThinToThin | DegradationMode::Gaussian => z_in.div_ceil(s),
        }
    }
}

/// Simulate a low-resolution acquisition of `v` along Z.
pub fn degrade(v: &Volume, spec: &DegradationSpec) -> Result<Volume> {
    spec.validate()?;
    let [z_in, h, w] = v.dims();
    let s = spec.scale as usize;
    if z_in < s {
        bail!(Dimension, "{z_in} slices cannot be degraded by factor {s}");
    }
    let plane = h * w;
    let src = v.data();
    let z_out = spec.out_slices(z_in);
    let mut out = vec![0f32; z_out * plane];
    match spec.mode {
        DegradationMode::ThinToThick => {
            let inv = 1.0 / s as f64;
            let mut acc = vec![0f64; plane];
            for k in 0..z_out {
                acc.fill(0.0);
                for z in k * s..k * s + s {
                    for (a, &x) in acc.iter_mut().zip(&src[z * plane..(z + 1) * plane]) {
                        *a += x as f64;
                    }
                }
                for (o, a) in out[k * plane..(k + 1) * plane].iter_mut().zip(&acc) {
                    *o = (a * inv) as f32;
                }
            }
        }
        DegradationMode::ThinToThin => {
            for k in 0..z_out {
                out[k * plane..(k + 1) * plane].copy_from_slice(&src[k * s * plane..(k * s + 1) * plane]);
            }
        }
        DegradationMode::Gaussian => {
            let taps = gaussian_taps(spec.gaussian_sigma.unwrap());
            let radius = (taps.len() / 2) as isize;
            let mut acc = vec![0f64; plane];
            for k in 0..z_out {
                let zc = (k * s) as isize;
                acc.fill(0.0);
                for (t, &wt) in taps.iter().enumerate() {
                    let z = reflect(zc + t as isize - radius, z_in);
                    for (a, &x) in acc.iter_mut().zip(&src[z * plane..(z + 1) * plane]) {
                        *a += wt * x as f64;
                    }
                }
                for (o, a) in out[k * plane..(k + 1) * plane].iter_mut().zip(&acc) {
                    *o = *a as f32;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        for o in &mut out {
            let n: f64 = rng.sample(StandardNormal);
            *o = (*o as f64 + spec.noise_sigma * n) as f32;
        }
    }
    let [dz, dy, dx] = v.spacing();
    v.with_data([z_out, h, w], [dz * s as f64, dy, dx], out)
}

/// Normalised Gaussian taps truncated at four standard deviations.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(4.0 * sigma) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-0.5 * (i as f64 / sigma) * (i as f64 / sigma)))
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Natural cubic spline along Z evaluated at `round(s * Z)` uniformly spaced
/// positions spanning the original first and last slice centres. Values are
/// clamped to the input range.
pub fn upsample_cubic(v: &Volume, s: f64) -> Result<Volume> {
    let [n, h, w] = v.dims();
    if n < 4 {
        bail!(Dimension, "cubic spline needs at least 4 slices, got {n}");
    }
    if !(s.is_finite() && (1.0..=8.0).contains(&s)) {
        bail!(Range, "upsampling factor {s} outside [1, 8]");
    }
    let z_out = libm::round(s * n as f64) as usize;
    let plane = h * w;
    let y = v.data();
    let (lo, hi) = v.min_max();

    // Second derivatives: M_0 = M_{n-1} = 0 and, for interior knots,
    // M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i-1} - 2 y_i + y_{i+1}).
    // The system is shared by every column, so the Thomas factors are too.
    let m_int = n - 2;
    let mut cprime = vec![0f64; m_int];
    let mut denom = vec![0f64; m_int];
    for i in 0..m_int {
        let prev = if i == 0 { 0.0 } else { cprime[i - 1] };
        denom[i] = 4.0 - prev;
        cprime[i] = 1.0 / denom[i];
    }
    let mut m = vec![0f64; n * plane];
    for i in 0..m_int {
        let k = i + 1;
        for p in 0..plane {
            let rhs = 6.0 * (y[(k - 1) * plane + p] as f64 - 2.0 * y[k * plane + p] as f64 + y[(k + 1) * plane + p] as f64);
            let prev = if i == 0 { 0.0 } else { m[k * plane - plane + p] };
            m[k * plane + p] = (rhs - prev) / denom[i];
        }
    }
    for i in (0..m_int.saturating_sub(1)).rev() {
        let k = i + 1;
        for p in 0..plane {
            m[k * plane + p] -= cprime[i] * m[(k + 1) * plane + p];
        }
    }

    let mut out = vec![0f32; z_out * plane];
    let span = (n - 1) as f64;
    for j in 0..z_out {
        let t = if z_out == 1 { 0.0 } else { j as f64 * span / (z_out - 1) as f64 };
        let i = (libm::floor(t) as usize).min(n - 2);
        let u = t - i as f64;
        let a = 1.0 - u;
        let (ca, cb) = ((a * a * a - a) / 6.0, (u * u * u - u) / 6.0);
        let dst = &mut out[j * plane..(j + 1) * plane];
        for (p, o) in dst.iter_mut().enumerate() {
            let val = a * y[i * plane + p] as f64
                + u * y[(i + 1) * plane + p] as f64
                + ca * m[i * plane + p]
                + cb * m[(i + 1) * plane + p];
            *o = (val as f32).clamp(lo, hi);
        }
    }
    let [dz, dy, dx] = v.spacing();
    v.with_data([z_out, h, w], [dz / s, dy, dx], out)
}

/// Conventional interpolation baseline. In-plane resolution is already
/// native in every supported workflow, so this resamples Z only and is the
/// same operator as [`upsample_cubic`].
pub fn tricubic_interpolate(v: &Volume, s: f64) -> Result<Volume> {
    upsample_cubic(v, s)
}
