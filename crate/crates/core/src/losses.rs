//! Pixel, adversarial and composite generator losses.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{softplus, Eager, Ops};
use crate::perceptual::{perceptual_loss_graph, PerceptualConfig, PerceptualInfo, VggExtractor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights of the adversarial and pixel terms relative to the perceptual term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub mu_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_gan: 0.01, mu_mse: 0.001 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gan.is_finite() && self.lambda_gan >= 0.0 && self.mu_mse.is_finite() && self.mu_mse >= 0.0) {
            bail!(Config, "loss weights must be finite and non-negative: {self:?}");
        }
        Ok(())
    }
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        bail!(Shape, "prediction {} and target {} differ", pred.shape(), target.shape());
    }
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|l| !l.is_finite()) {
        bail!(Data, "non-finite logit");
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// Discriminator objective `-log s(real) - log(1 - s(fake))`, averaged over
/// each set of samples, in softplus form.
pub fn gan_loss_d(logits_real: &[f64], logits_fake: &[f64]) -> Result<f64> {
    check_finite(logits_real)?;
    check_finite(logits_fake)?;
    Ok(mean(logits_real.iter().map(|&z| softplus(-z)), logits_real.len())
        + mean(logits_fake.iter().map(|&z| softplus(z)), logits_fake.len()))
}

/// Non-saturating generator objective `-log s(fake)`.
pub fn gan_loss_g(logits_fake: &[f64]) -> Result<f64> {
    check_finite(logits_fake)?;
    Ok(mean(logits_fake.iter().map(|&z| softplus(-z)), logits_fake.len()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub perceptual: f64,
    /// `lambda * L_gan`
    pub adversarial: f64,
    /// `mu * L_mse`
    pub pixel: f64,
    pub total: f64,
    pub perceptual_info: PerceptualInfo,
}

/// Graph nodes of the composite generator objective.
pub struct GeneratorLossNodes<V> {
    pub total: V,
    pub perceptual: V,
    pub adversarial: V,
    pub pixel: V,
    pub info: PerceptualInfo,
}

/// `L_per + lambda * L_gan + mu * L_mse` for `[N, 1, D, H, W]` batches and
/// logits `[N, 1, 1, 1, 1]`.
pub fn generator_loss_graph<T: Scalar, O: Ops<T>>(
    o: &mut O,
    ex: &VggExtractor<T>,
    cfg: &PerceptualConfig,
    w: &LossWeights,
    pred: &O::V,
    target: &O::V,
    logits_fake: &O::V,
) -> Result<GeneratorLossNodes<O::V>> {
    w.validate()?;
    let (per, info) = perceptual_loss_graph(o, ex, cfg, pred, target)?;
    let gan = o.softplus_mean(logits_fake, -1.0);
    let adversarial = o.scale(&gan, w.lambda_gan);
    let mse = o.mse(pred, target)?;
    let pixel = o.scale(&mse, w.mu_mse);
    let t = o.add(&per, &adversarial)?;
    let total = o.add(&t, &pixel)?;
    Ok(GeneratorLossNodes { total, perceptual: per, adversarial, pixel, info })
}

/// Value and breakdown of the composite generator objective.
pub fn total_generator_loss<T: Scalar>(
    ex: &VggExtractor<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    logits_fake: &[f64],
    w: &LossWeights,
    cfg: &PerceptualConfig,
) -> Result<(f64, LossBreakdown)> {
    check_finite(logits_fake)?;
    let mut e = Eager;
    let p = e.constant(pred.clone());
    let t = e.constant(target.clone());
    let logits: alloc::vec::Vec<T> = logits_fake.iter().map(|&z| T::from_f64c(z)).collect();
    let n = logits.len();
    let l = e.constant(Tensor::from_vec(crate::Shape::new(n, 1, 1, 1, 1), logits)?);
    let nodes = generator_loss_graph(&mut e, ex, cfg, w, &p, &t, &l)?;
    let b = LossBreakdown {
        perceptual: nodes.perceptual.item().as_f64(),
        adversarial: nodes.adversarial.item().as_f64(),
        pixel: nodes.pixel.item().as_f64(),
        total: nodes.total.item().as_f64(),
        perceptual_info: nodes.info,
    };
    Ok((b.total, b))
}
