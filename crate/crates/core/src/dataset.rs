//! Paired patch corpus: degrade, pre-upsample, align, tile, shuffle, split.
//!
//! A [`DatasetManifest`] holds only patch descriptors; pixels are cut from
//! the aligned volume pairs held by a [`Dataset`] when a batch is requested.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{degrade, upsample_cubic, DegradationSpec};
use crate::error::{bail, Result};
use crate::tensor::{Shape, Tensor};
use crate::volume::Volume;

pub const PATCH_SIZE: usize = 32;
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// How patches are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Shuffle all patches together; neighbouring patches of one volume may
    /// land in different splits.
    #[default]
    ByPatch,
    /// Assign whole volumes to splits, then shuffle patches.
    ByVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub stride: usize,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub patch_size: usize,
    #[serde(default)]
    pub policy: SplitPolicy,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { stride: PATCH_SIZE, seed: 0, ratios: DEFAULT_RATIOS, patch_size: PATCH_SIZE, policy: SplitPolicy::ByPatch }
    }
}

/// One `(volume, degradation)` combination that produced patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub volume_id: String,
    pub volume_index: usize,
    pub spec: DegradationSpec,
    /// Dims of the aligned input/target pair.
    pub aligned_dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchDescriptor {
    /// Index into [`DatasetManifest::sources`].
    pub source: usize,
    pub offset: [usize; 3],
    pub split: Split,
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedVolume {
    pub volume_id: String,
    pub scale: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub stride: usize,
    pub patch_size: usize,
    pub policy: SplitPolicy,
    pub sources: Vec<SourceSpec>,
    pub skipped: Vec<SkippedVolume>,
    /// Shuffled order; the `i`-th entry tagged with a split is that split's index `i`.
    pub entries: Vec<PatchDescriptor>,
}

impl DatasetManifest {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries.iter().enumerate().filter(|(_, e)| e.split == split).map(|(i, _)| i).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn scales(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.sources.iter().map(|s| s.spec.scale).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Bucket sizes for `n` items: train and val are `round(n * ratio)`, test
/// takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = (libm::round(n as f64 * ratios[0]) as usize).min(n);
    let val = (libm::round(n as f64 * ratios[1]) as usize).min(n - train);
    [train, val, n - train - val]
}

/// Dims of `upsample_cubic(degrade(v))` for a volume with `z` slices, or why
/// it cannot be produced.
fn pipeline_dims(dims: [usize; 3], spec: &DegradationSpec) -> core::result::Result<[usize; 3], String> {
    let s = spec.scale as usize;
    if dims[0] < s {
        return Err(format!("{} slices < scale {s}", dims[0]));
    }
    let zd = spec.out_slices(dims[0]);
    if zd < 4 {
        return Err(format!("{zd} degraded slices < 4 needed for cubic upsampling"));
    }
    Ok([libm::round(spec.scale as f64 * zd as f64) as usize, dims[1], dims[2]])
}

fn tile_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if dim < patch {
        return Vec::new();
    }
    (0..=dim - patch).step_by(stride).collect()
}

/// Enumerate, shuffle and split the patch pairs of every volume under every
/// degradation spec.
pub fn build_manifest(volumes: &[Volume], specs: &[DegradationSpec], opts: &DatasetOptions) -> Result<DatasetManifest> {
    if opts.patch_size == 0 || opts.stride == 0 || opts.stride > opts.patch_size {
        bail!(Config, "stride must lie in [1, {}], got {}", opts.patch_size, opts.stride);
    }
    let total: f64 = opts.ratios.iter().sum();
    if opts.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        bail!(Config, "split ratios must be non-negative and sum to 1, got {:?}", opts.ratios);
    }
    if specs.is_empty() {
        bail!(Config, "at least one degradation spec is required");
    }
    for spec in specs {
        spec.validate()?;
    }
    let p = opts.patch_size;
    let mut sources = Vec::new();
    let mut skipped = Vec::new();
    let mut entries = Vec::new();
    for (vi, v) in volumes.iter().enumerate() {
        for spec in specs {
            let aligned = match pipeline_dims(v.dims(), spec) {
                Ok(up) => [up[0].min(v.dims()[0]), up[1], up[2]],
                Err(reason) => {
                    skipped.push(SkippedVolume { volume_id: v.id.clone(), scale: spec.scale, reason });
                    continue;
                }
            };
            if aligned.iter().any(|&d| d < p) {
                skipped.push(SkippedVolume {
                    volume_id: v.id.clone(),
                    scale: spec.scale,
                    reason: format!("aligned dims {aligned:?} smaller than patch {p}"),
                });
                continue;
            }
            let source = sources.len();
            sources.push(SourceSpec { volume_id: v.id.clone(), volume_index: vi, spec: spec.clone(), aligned_dims: aligned });
            for &z in &tile_offsets(aligned[0], p, opts.stride) {
                for &y in &tile_offsets(aligned[1], p, opts.stride) {
                    for &x in &tile_offsets(aligned[2], p, opts.stride) {
                        entries.push(PatchDescriptor { source, offset: [z, y, x], split: Split::Train, scale: spec.scale });
                    }
                }
            }
        }
    }
    if entries.is_empty() {
        bail!(Config, "no patches could be extracted ({} volume/spec combinations skipped)", skipped.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match opts.policy {
        SplitPolicy::ByPatch => {
            entries.shuffle(&mut rng);
            let [train, val, _] = split_sizes(entries.len(), opts.ratios);
            for (i, e) in entries.iter_mut().enumerate() {
                e.split = if i < train {
                    Split::Train
                } else if i < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        SplitPolicy::ByVolume => {
            let mut order: Vec<usize> = (0..volumes.len()).collect();
            order.shuffle(&mut rng);
            let [train, val, _] = split_sizes(order.len(), opts.ratios);
            let mut assign = alloc::vec![Split::Test; volumes.len()];
            for (rank, &vi) in order.iter().enumerate() {
                assign[vi] = if rank < train {
                    Split::Train
                } else if rank < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            for e in &mut entries {
                e.split = assign[sources[e.source].volume_index];
            }
            entries.shuffle(&mut rng);
        }
    }
    Ok(DatasetManifest {
        seed: opts.seed,
        ratios: opts.ratios,
        stride: opts.stride,
        patch_size: p,
        policy: opts.policy,
        sources,
        skipped,
        entries,
    })
}

/// Single-spec convenience wrapper around [`build_manifest`].
pub fn build_dataset(volumes: &[Volume], spec: &DegradationSpec, stride: usize, seed: u64) -> Result<DatasetManifest> {
    build_manifest(volumes, core::slice::from_ref(spec), &DatasetOptions { stride, seed, ..DatasetOptions::default() })
}

/// Network input (degraded then cubic-upsampled) and ground truth, centre
/// cropped to common dims.
pub fn aligned_pair(v: &Volume, spec: &DegradationSpec) -> Result<(Volume, Volume)> {
    let up = upsample_cubic(&degrade(v, spec)?, spec.scale as f64)?;
    let mut common = [0; 3];
    for a in 0..3 {
        common[a] = up.dims()[a].min(v.dims()[a]);
    }
    // keep spacing of the target grid on both halves
    let input = up.center_crop(common)?;
    let input = input.with_data(common, v.spacing(), input.data().to_vec())?;
    Ok((input, v.center_crop(common)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    /// `1 x 1 x P x P x P`
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub volume_id: String,
    pub offset: [usize; 3],
    pub split: Split,
    pub scale: u32,
}

/// A manifest together with the aligned volume pairs its entries refer to.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    pairs: Vec<(Volume, Volume)>,
    by_split: [Vec<usize>; 3],
}

impl Dataset {
    /// Recompute the aligned pairs of every manifest source from `volumes`.
    pub fn materialize(manifest: DatasetManifest, volumes: &[Volume]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(manifest.sources.len());
        for src in &manifest.sources {
            let Some(v) = volumes.get(src.volume_index) else {
                bail!(Config, "manifest references volume #{} but only {} were given", src.volume_index, volumes.len());
            };
            if v.id != src.volume_id {
                bail!(Config, "volume #{} is `{}`, manifest expects `{}`", src.volume_index, v.id, src.volume_id);
            }
            let pair = aligned_pair(v, &src.spec)?;
            if pair.0.dims() != src.aligned_dims {
                bail!(Config, "aligned dims {:?} differ from manifest {:?}", pair.0.dims(), src.aligned_dims);
            }
            pairs.push(pair);
        }
        let by_split = Split::ALL.map(|s| manifest.split_indices(s));
        Ok(Dataset { manifest, pairs, by_split })
    }

    pub fn build(volumes: &[Volume], specs: &[DegradationSpec], opts: &DatasetOptions) -> Result<Self> {
        Self::materialize(build_manifest(volumes, specs, opts)?, volumes)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.by_split[split as usize].len()
    }

    /// Manifest entry for index `i` within `split`.
    pub fn entry(&self, split: Split, i: usize) -> Result<&PatchDescriptor> {
        let ids = &self.by_split[split as usize];
        match ids.get(i) {
            Some(&e) => Ok(&self.manifest.entries[e]),
            None => bail!(Range, "index {i} outside {split:?} split of size {}", ids.len()),
        }
    }

    pub fn load_batch(&self, split: Split, indices: &[usize]) -> Result<Vec<PatchPair>> {
        indices
            .iter()
            .map(|&i| {
                let e = self.entry(split, i)?;
                let (input, target) = &self.pairs[e.source];
                let size = [self.manifest.patch_size; 3];
                let p = self.manifest.patch_size;
                let shape = Shape::new(1, 1, p, p, p);
                Ok(PatchPair {
                    input: Tensor::from_vec(shape, input.crop(e.offset, size)?.into_data())?,
                    target: Tensor::from_vec(shape, target.crop(e.offset, size)?.into_data())?,
                    volume_id: self.manifest.sources[e.source].volume_id.clone(),
                    offset: e.offset,
                    split: e.split,
                    scale: e.scale,
                })
            })
            .collect()
    }

    /// Stacked `(input, target)` tensors for a batch that shares one scale.
    pub fn batch_tensors(&self, split: Split, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>, u32)> {
        let pairs = self.load_batch(split, indices)?;
        let Some(first) = pairs.first() else {
            bail!(Config, "empty batch");
        };
        let scale = first.scale;
        if pairs.iter().any(|p| p.scale != scale) {
            bail!(Config, "batch mixes sampling factors");
        }
        let inputs: Vec<_> = pairs.iter().map(|p| p.input.clone()).collect();
        let targets: Vec<_> = pairs.iter().map(|p| p.target.clone()).collect();
        Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?, scale))
    }

    /// Indices within `split`, grouped by sampling factor.
    pub fn indices_by_scale(&self, split: Split) -> Vec<(u32, Vec<usize>)> {
        let mut out: Vec<(u32, Vec<usize>)> = self.manifest.scales().into_iter().map(|s| (s, Vec::new())).collect();
        for (i, &e) in self.by_split[split as usize].iter().enumerate() {
            let s = self.manifest.entries[e].scale;
            if let Some(bucket) = out.iter_mut().find(|(k, _)| *k == s) {
                bucket.1.push(i);
            }
        }
        out.retain(|(_, v)| !v.is_empty());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rounding_examples() {
        assert_eq!(split_sizes(2304, DEFAULT_RATIOS), [1843, 230, 231]);
        assert_eq!(split_sizes(1, DEFAULT_RATIOS), [1, 0, 0]);
        assert_eq!(split_sizes(10, DEFAULT_RATIOS), [8, 1, 1]);
        for n in 0..200 {
            let s = split_sizes(n, DEFAULT_RATIOS);
            assert_eq!(s.iter().sum::<usize>(), n);
            for (k, r) in s.iter().zip(DEFAULT_RATIOS) {
                assert!((*k as f64 - n as f64 * r).abs() <= 1.0, "n={n} {s:?}");
            }
        }
    }

    #[test]
    fn tiling_offsets() {
        assert_eq!(tile_offsets(64, 32, 16), alloc::vec![0, 16, 32]);
        assert_eq!(tile_offsets(63, 32, 32), alloc::vec![0]);
        assert!(tile_offsets(31, 32, 32).is_empty());
    }

    #[test]
    fn nine_volume_corpus_counts() {
        // 256 x 256 x 1170 block at s = 5, only dims are needed.
        let dims = pipeline_dims([1170, 256, 256], &DegradationSpec::thin_to_thick(5)).unwrap();
        assert_eq!(dims, [1170, 256, 256]);
        let n = tile_offsets(1170, 32, 32).len() * tile_offsets(256, 32, 32).len().pow(2);
        assert_eq!(n, 36 * 8 * 8);
        assert_eq!(split_sizes(n, DEFAULT_RATIOS), [1843, 230, 231]);
    }
}
