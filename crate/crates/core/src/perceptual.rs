//! Tri-planar perceptual loss over a VGG19-layout 2-D feature extractor.
//!
//! Both volumes are cut into axial, coronal and sagittal slice stacks; every
//! grayscale slice is replicated to three channels, normalised with the
//! ImageNet statistics and pushed through the extractor up to the configured
//! layer. Each plane contributes the mean squared feature difference over
//! its slices (the per-slice `1 / (h w c)` normalisation followed by a mean
//! over slices), and the planes are averaged.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::graph::{Eager, Ops};
use crate::kernels::{ConvGeom, Plane};
use crate::params::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Convolutions per block in VGG19.
pub const VGG19_BLOCKS: [usize; 5] = [2, 2, 4, 4, 4];
pub const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    ReplicateGrayTo3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptualConfig {
    pub feature_layer: String,
    pub planes: Vec<Plane>,
    /// Slices per extractor pass.
    pub slice_batch: usize,
    pub channel_mode: ChannelMode,
    /// Slices smaller than this on either side are bilinearly enlarged.
    pub min_slice_size: usize,
    /// When false, undersized slices are an error instead of being enlarged.
    pub upscale_small_slices: bool,
    /// Extractor weights archive; resolved by the command-line front end.
    pub weights_path: Option<String>,
    /// Width divisor for the seeded substitute extractor used when no
    /// weights file is available.
    pub substitute_width_divisor: usize,
    pub substitute_seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            feature_layer: "block5_conv4_preactivation".into(),
            planes: Plane::ALL.to_vec(),
            slice_batch: 64,
            channel_mode: ChannelMode::ReplicateGrayTo3,
            min_slice_size: 32,
            upscale_small_slices: true,
            weights_path: None,
            substitute_width_divisor: 8,
            substitute_seed: 19,
        }
    }
}

impl PerceptualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() {
            bail!(Config, "perceptual loss needs at least one plane");
        }
        if self.slice_batch == 0 {
            bail!(Config, "slice_batch must be positive");
        }
        let layer = LayerId::parse(&self.feature_layer)?;
        if self.min_slice_size < layer.min_input() {
            bail!(Config, "min_slice_size {} too small for layer {}", self.min_slice_size, self.feature_layer);
        }
        Ok(())
    }
}

/// `block<B>_conv<C>` with an optional `_preactivation` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerId {
    pub block: usize,
    pub conv: usize,
    pub preactivation: bool,
}

impl LayerId {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised feature layer `{s}`"));
        let (body, preactivation) = match s.strip_suffix("_preactivation") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let rest = body.strip_prefix("block").ok_or_else(bad)?;
        let (b, c) = rest.split_once("_conv").ok_or_else(bad)?;
        let block: usize = b.parse().map_err(|_| bad())?;
        let conv: usize = c.parse().map_err(|_| bad())?;
        if !(1..=5).contains(&block) || conv == 0 || conv > VGG19_BLOCKS[block - 1] {
            return Err(bad());
        }
        Ok(LayerId { block, conv, preactivation })
    }

    /// Smallest slice edge that survives the pooling before this layer.
    pub fn min_input(&self) -> usize {
        1 << (self.block - 1)
    }
}

/// Fixed-weight VGG19-layout feature extractor.
#[derive(Debug, Clone)]
pub struct VggExtractor<T> {
    params: ParamSet<T>,
    widths: [usize; 5],
    layer: LayerId,
}

impl<T: Scalar> VggExtractor<T> {
    /// Load named weights (`block<B>.conv<C>.weight` of shape
    /// `[out, in, 1, 3, 3]`, plus biases) for every conv up to `layer`.
    pub fn from_params(params: ParamSet<T>, layer: &str) -> Result<Self> {
        let layer = LayerId::parse(layer)?;
        let mut widths = [0; 5];
        let mut cin = 3;
        for b in 1..=layer.block {
            let convs = if b == layer.block { layer.conv } else { VGG19_BLOCKS[b - 1] };
            for c in 1..=convs {
                let w = params::get(&params, &format!("block{b}.conv{c}.weight"))?;
                let bias = params::get(&params, &format!("block{b}.conv{c}.bias"))?;
                let s = w.shape();
                if s.c() != cin || [s.d(), s.h(), s.w()] != [1, 3, 3] || bias.shape().len() != s.n() {
                    bail!(Corruption, "extractor conv block{b}.conv{c} has shape {s} (expected {cin} inputs, 1x3x3)");
                }
                if c > 1 && s.n() != widths[b - 1] {
                    bail!(Corruption, "inconsistent width inside block {b}");
                }
                widths[b - 1] = s.n();
                cin = s.n();
            }
        }
        Ok(VggExtractor { params, widths, layer })
    }

    /// Seeded He-initialised extractor with `VGG19_WIDTHS / divisor` channels.
    pub fn substitute(layer: &str, width_divisor: usize, seed: u64) -> Result<Self> {
        let id = LayerId::parse(layer)?;
        let div = width_divisor.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut cin = 3;
        for b in 1..=id.block {
            let width = (VGG19_WIDTHS[b - 1] / div).max(1);
            let convs = if b == id.block { id.conv } else { VGG19_BLOCKS[b - 1] };
            for c in 1..=convs {
                params::init_conv(&mut p, &format!("block{b}.conv{c}"), width, cin, [1, 3, 3], 1.0, &mut rng);
                cin = width;
            }
        }
        Self::from_params(p, layer)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn widths(&self) -> [usize; 5] {
        self.widths
    }

    pub fn layer(&self) -> LayerId {
        self.layer
    }

    pub fn cast<U: Scalar>(&self) -> VggExtractor<U> {
        VggExtractor { params: params::cast(&self.params), widths: self.widths, layer: self.layer }
    }

    /// Features of grayscale images `[N, 1, 1, H, W]` with values in `[0, 1]`.
    /// Extractor weights always enter the graph as constants.
    pub fn features<O: Ops<T>>(&self, o: &mut O, x: &O::V) -> Result<O::V> {
        let rgb = o.concat(&[x.clone(), x.clone(), x.clone()])?;
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| -m / s).collect();
        let mut h = o.channel_affine(&rgb, &scale, &shift)?;
        for b in 1..=self.layer.block {
            if b > 1 {
                h = o.maxpool2(&h)?;
            }
            let convs = if b == self.layer.block { self.layer.conv } else { VGG19_BLOCKS[b - 1] };
            for c in 1..=convs {
                let w = o.constant(self.params[&format!("block{b}.conv{c}.weight")].clone());
                let bias = o.constant(self.params[&format!("block{b}.conv{c}.bias")].clone());
                h = o.conv(&h, &w, Some(&bias), ConvGeom::planar(3))?;
                let last = b == self.layer.block && c == convs;
                if !(last && self.layer.preactivation) {
                    h = o.leaky_relu(&h, 0.0);
                }
            }
        }
        Ok(h)
    }
}

/// Side information about one perceptual-loss evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptualInfo {
    pub per_plane: Vec<(Plane, f64)>,
    /// True when any plane's slices were enlarged to the minimum size.
    pub upscaled: bool,
}

/// Perceptual loss of one plane between volume batches `[N, 1, D, H, W]`.
pub fn plane_loss<T: Scalar, O: Ops<T>>(
    o: &mut O,
    ex: &VggExtractor<T>,
    cfg: &PerceptualConfig,
    plane: Plane,
    pred: &O::V,
    target: &O::V,
) -> Result<(O::V, bool)> {
    let mut p = o.planes(pred, plane);
    let mut t = o.planes(target, plane);
    let s = o.value(&p).shape();
    let (h, w) = (s.h(), s.w());
    let min = cfg.min_slice_size.max(ex.layer.min_input());
    let upscaled = h < min || w < min;
    if upscaled {
        if !cfg.upscale_small_slices {
            bail!(Dimension, "{plane:?} slices are {h}x{w}, extractor needs at least {min}x{min}");
        }
        let (nh, nw) = (h.max(min), w.max(min));
        p = o.resize_bilinear(&p, nh, nw);
        t = o.resize_bilinear(&t, nh, nw);
    }
    let total = s.n();
    let mut acc: Option<O::V> = None;
    for start in (0..total).step_by(cfg.slice_batch) {
        let len = cfg.slice_batch.min(total - start);
        let (pc, tc) = if len == total { (p.clone(), t.clone()) } else { (o.narrow_batch(&p, start, len), o.narrow_batch(&t, start, len)) };
        let fp = ex.features(o, &pc)?;
        let ft = ex.features(o, &tc)?;
        let l = o.mse(&fp, &ft)?;
        let l = if len == total { l } else { o.scale(&l, len as f64 / total as f64) };
        acc = Some(match acc {
            None => l,
            Some(a) => o.add(&a, &l)?,
        });
    }
    let loss = acc.expect("at least one slice");
    if !o.value(&loss).item().is_finite() {
        bail!(Numerical, "non-finite {plane:?} perceptual features");
    }
    Ok((loss, upscaled))
}

/// Unweighted mean of the per-plane losses.
pub fn perceptual_loss_graph<T: Scalar, O: Ops<T>>(
    o: &mut O,
    ex: &VggExtractor<T>,
    cfg: &PerceptualConfig,
    pred: &O::V,
    target: &O::V,
) -> Result<(O::V, PerceptualInfo)> {
    cfg.validate()?;
    let (ps, ts) = (o.value(pred).shape(), o.value(target).shape());
    if ps != ts {
        bail!(Shape, "prediction {ps} and target {ts} differ");
    }
    let mut info = PerceptualInfo::default();
    let mut sum: Option<O::V> = None;
    for &plane in &cfg.planes {
        let (l, up) = plane_loss(o, ex, cfg, plane, pred, target)?;
        info.per_plane.push((plane, o.value(&l).item().as_f64()));
        info.upscaled |= up;
        sum = Some(match sum {
            None => l,
            Some(a) => o.add(&a, &l)?,
        });
    }
    let mean = o.scale(&sum.unwrap(), 1.0 / cfg.planes.len() as f64);
    Ok((mean, info))
}

/// Value of the tri-planar perceptual loss between `[N, 1, D, H, W]` batches.
pub fn perceptual_loss_3d<T: Scalar>(ex: &VggExtractor<T>, pred: &Tensor<T>, target: &Tensor<T>, cfg: &PerceptualConfig) -> Result<(f64, PerceptualInfo)> {
    let mut e = Eager;
    let p = e.constant(pred.clone());
    let t = e.constant(target.clone());
    let (l, info) = perceptual_loss_graph(&mut e, ex, cfg, &p, &t)?;
    Ok((l.item().as_f64(), info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_ids() {
        let l = LayerId::parse("block5_conv4_preactivation").unwrap();
        assert_eq!(l, LayerId { block: 5, conv: 4, preactivation: true });
        assert_eq!(l.min_input(), 16);
        assert!(LayerId::parse("block2_conv3").is_err());
        assert!(LayerId::parse("conv5").is_err());
        assert!(!LayerId::parse("block1_conv1").unwrap().preactivation);
    }

    #[test]
    fn substitute_has_scaled_vgg_widths() {
        let ex = VggExtractor::<f32>::substitute("block5_conv4_preactivation", 8, 1).unwrap();
        assert_eq!(ex.widths(), [8, 16, 32, 64, 64]);
        assert_eq!(ex.params().len(), 16 * 2);
    }

    #[test]
    fn from_params_rejects_bad_shapes() {
        let ex = VggExtractor::<f32>::substitute("block2_conv2", 16, 1).unwrap();
        let mut p = ex.params().clone();
        p.insert("block2.conv1.weight".into(), Tensor::zeros(crate::Shape::new(8, 3, 1, 3, 3)));
        assert!(VggExtractor::from_params(p, "block2_conv2").is_err());
    }
}
