//! Band-limited synthetic phantoms: a few random 3D sinusoids plus smooth
//! Gaussian blobs, normalised to `[0, 1]`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub sinusoids: usize,
    /// Highest frequency along any axis, in cycles per volume.
    pub max_cycles: f64,
    pub blobs: usize,
    /// Range of blob standard deviations, in voxels.
    pub blob_sigma: (f64, f64),
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { dims: [64; 3], spacing: [1.0; 3], sinusoids: 4, max_cycles: 6.0, blobs: 8, blob_sigma: (2.0, 6.0) }
    }
}

struct Wave {
    k: [f64; 3],
    phase: f64,
    amp: f64,
}

struct Blob {
    c: [f64; 3],
    inv2s2: f64,
    amp: f64,
}

pub fn phantom(id: &str, seed: u64, cfg: &PhantomConfig) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 2.0 * core::f64::consts::PI;
    let dims = cfg.dims;
    let waves: Vec<Wave> = (0..cfg.sinusoids)
        .map(|_| Wave {
            k: [0, 1, 2].map(|a| tau * rng.gen_range(-cfg.max_cycles..=cfg.max_cycles) / dims[a] as f64),
            phase: rng.gen_range(0.0..tau),
            amp: rng.gen_range(0.3..1.0),
        })
        .collect();
    let blobs: Vec<Blob> = (0..cfg.blobs)
        .map(|_| {
            let s: f64 = rng.gen_range(cfg.blob_sigma.0..=cfg.blob_sigma.1);
            Blob {
                c: [0, 1, 2].map(|a| rng.gen_range(0.0..dims[a] as f64)),
                inv2s2: 1.0 / (2.0 * s * s),
                amp: rng.gen_range(-1.5..1.5),
            }
        })
        .collect();
    let v = Volume::from_fn(id, dims, cfg.spacing, |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        let mut acc = 0.0;
        for w in &waves {
            acc += w.amp * libm::sin(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase);
        }
        for b in &blobs {
            let r2: f64 = (0..3).map(|a| (p[a] - b.c[a]) * (p[a] - b.c[a])).sum();
            acc += b.amp * libm::exp(-r2 * b.inv2s2);
        }
        acc as f32
    })?;
    Ok(v.normalize())
}

/// `n` phantoms with ids `phantom-000`, ... and seeds derived from `seed`.
pub fn corpus(n: usize, seed: u64, cfg: &PhantomConfig) -> Result<Vec<Volume>> {
    (0..n).map(|i| phantom(&format!("phantom-{i:03}"), seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg)).collect()
}
