//! Acceptance checks, one line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4,7` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use soupsr::checkpoint::{load_train_state, save_train_state};
use soupsr_core::dataset::{Dataset, DatasetOptions, Split};
use soupsr_core::degradation::{degrade, upsample_cubic, DegradationSpec};
use soupsr_core::graph::{Eager, Graph, Ops};
use soupsr_core::losses::{gan_loss_d, gan_loss_g, generator_loss_graph, total_generator_loss, LossWeights};
use soupsr_core::metrics::{self, evaluate_methods, paired_differences, Method, Metric};
use soupsr_core::model::{
    blend, generate_with, init_discriminator, interpolate_params, DiscriminatorConfig, GenerateOptions, Generator, GeneratorConfig, MultiScaleCheckpoint, PatchDiscriminator,
    Stage,
};
use soupsr_core::params::{self, ParamSet};
use soupsr_core::perceptual::{perceptual_loss_3d, PerceptualConfig, VggExtractor};
use soupsr_core::synthetic::{corpus, phantom, PhantomConfig};
use soupsr_core::trainer::{TrainConfig, TrainStage, Trainer};
use soupsr_core::{Shape, Tensor, Volume};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume {
    let data = (0..dims.iter().product::<usize>()).map(|_| rng.gen::<f32>()).collect();
    let spacing = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)];
    Volume::new("rand", dims, spacing, data).unwrap()
}

fn max_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

fn c1_degradation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for _ in 0..200 {
        let dims = [rng.gen_range(8..=40), rng.gen_range(8..=40), rng.gen_range(8..=40)];
        let s = rng.gen_range(2..=6u32);
        let v = random_volume(&mut rng, dims);
        let su = s as usize;
        let [z, h, w] = dims;

        let thick = ok(degrade(&v, &DegradationSpec::thin_to_thick(s)))?;
        ensure!(thick.dims() == [z / su, h, w], "thick dims {:?} for {dims:?} at s={s}", thick.dims());
        ensure!(thick.spacing()[0] == v.spacing()[0] * s as f64, "thick spacing {:?}", thick.spacing());
        let mut oracle = Vec::with_capacity(thick.data().len());
        for k in 0..z / su {
            for y in 0..h {
                for x in 0..w {
                    let sum: f64 = (0..su).map(|j| v.at(k * su + j, y, x) as f64).sum();
                    oracle.push((sum / s as f64) as f32);
                }
            }
        }
        worst = worst.max(max_abs(thick.data(), &oracle));

        let thin = ok(degrade(&v, &DegradationSpec::thin_to_thin(s)))?;
        let zt = z.div_ceil(su);
        ensure!(thin.dims() == [zt, h, w], "thin dims {:?} for {dims:?} at s={s}", thin.dims());
        let dec: Vec<f32> = (0..zt).flat_map(|k| v.data()[k * su * h * w..(k * su + 1) * h * w].to_vec()).collect();
        worst = worst.max(max_abs(thin.data(), &dec));
    }
    ensure!(worst <= 1e-6, "max abs error {worst:e}");
    Ok(format!("200 volumes, max abs error {worst:.1e}"))
}

fn c2_cubic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for &s in &[2.0, 2.5, 3.0, 4.0] {
        for _ in 0..10 {
            let dims = [rng.gen_range(4..=20), rng.gen_range(2..=6), rng.gen_range(2..=6)];
            let c: f32 = rng.gen_range(-5.0..5.0);
            let flat = ok(Volume::from_fn("c", dims, [2.0, 1.0, 1.0], |_, _, _| c))?;
            let up = ok(upsample_cubic(&flat, s))?;
            ensure!(up.data().iter().all(|&x| x == c), "constant {c} not reproduced at s={s}");

            let (a, b, g) = (rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0f64), rng.gen_range(-0.2..0.2f64));
            let ramp = ok(Volume::from_fn("r", dims, [2.0, 1.0, 1.0], |z, y, _| (a + b * z as f64 + g * y as f64) as f32))?;
            let up = ok(upsample_cubic(&ramp, s))?;
            let [zo, h, w] = up.dims();
            ensure!(zo == (s * dims[0] as f64).round() as usize, "output depth {zo}");
            for j in 0..zo {
                let t = j as f64 * (dims[0] - 1) as f64 / (zo - 1) as f64;
                for y in 0..h {
                    for x in 0..w {
                        let want = a + b * t + g * y as f64;
                        worst = worst.max((up.at(j, y, x) as f64 - want).abs());
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-5, "ramp error {worst:e}");
    Ok(format!("constants exact, ramp max error {worst:.1e}"))
}

fn perturb(p: &mut ParamSet<f32>, rng: &mut ChaCha8Rng, sd: f32) {
    for t in p.values_mut() {
        for x in t.data_mut() {
            *x += sd * rng.sample::<f32, _>(StandardNormal);
        }
    }
}

fn perturbed_generator(cfg: &GeneratorConfig, seed: u64) -> MultiScaleCheckpoint {
    let mut ck = Generator::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    perturb(&mut ck.backbone, &mut rng, 0.02);
    for p in ck.per_scale.values_mut() {
        perturb(p, &mut rng, 0.05);
    }
    ck
}

fn bit_equal(a: &ParamSet<f32>, b: &ParamSet<f32>) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
}

fn c3_blend() -> Outcome {
    let cfg = GeneratorConfig { base_channels: 8, n_residual_blocks: 1, scales: vec![2, 3, 4], ..Default::default() };
    let ck = perturbed_generator(&cfg, 30);
    let (m2, m3) = (&ck.per_scale[&2], &ck.per_scale[&3]);

    ensure!(bit_equal(&ok(blend(m2, m3, 0.0))?, m2), "alpha 0 differs from the lower module");
    ensure!(bit_equal(&ok(blend(m2, m3, 1.0))?, m3), "alpha 1 differs from the upper module");
    ensure!(bit_equal(&ok(interpolate_params(&ck, 2.0))?.per_scale, m2), "s=2 differs from module 2");
    ensure!(bit_equal(&ok(interpolate_params(&ck, 3.0))?.per_scale, m3), "s=3 differs from module 3");

    let eff = ok(interpolate_params(&ck, 2.5))?;
    ensure!(eff.lower == 2 && eff.alpha == 0.5, "s=2.5 resolved to m={} alpha={}", eff.lower, eff.alpha);
    let mut mean = ParamSet::new();
    let mut mean_err = 0f64;
    for (k, a) in m2 {
        let b = &m3[k];
        let data: Vec<f32> = a.data().iter().zip(b.data()).map(|(&x, &y)| ((x as f64 + y as f64) / 2.0) as f32).collect();
        mean_err = mean_err.max(max_abs(eff.per_scale[k].data(), &data));
        mean.insert(k.clone(), Tensor::from_vec(a.shape(), data).unwrap());
    }
    ensure!(mean_err <= 1e-6, "alpha 0.5 blend differs from the mean by {mean_err:e}");

    let v = ok(phantom("blend", 5, &PhantomConfig { dims: [10, 18, 18], ..Default::default() }))?;
    let got = ok(generate_with(&ck, &v, 2.5, GenerateOptions { tile: 8 }))?;
    let up = ok(upsample_cubic(&v, 2.5))?;
    let mut e = Eager;
    let x = e.constant(up.to_tensor::<f32>());
    let y = ok(Generator::forward(&mut e, &cfg, &ck.backbone, &mean, "", &x))?;
    ensure!(got.dims() == up.dims(), "generate dims {:?}", got.dims());
    let gen_err = max_abs(got.data(), e.value(&y).data());
    let residual = max_abs(got.data(), up.data());
    ensure!(residual > 1e-3, "blended model is a no-op (residual {residual:e})");
    ensure!(gen_err <= 1e-6, "generate at 2.5 differs from the blended model by {gen_err:e}");
    Ok(format!("endpoints bit-exact, mean error {mean_err:.1e}, generate error {gen_err:.1e}"))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn smooth_pair(rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let seed = rng.gen();
    let v = phantom("p", seed, &PhantomConfig { dims: [n; 3], ..Default::default() }).unwrap();
    let t = v.to_tensor::<f64>();
    let noise = random_tensor(rng, t.shape());
    let p = Tensor::from_vec(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + 0.1 * (b - 0.5)).collect()).unwrap();
    (p, t)
}

/// Slices of a `[1, 1, D, H, W]` volume cut perpendicular to one axis.
fn slices(t: &Tensor<f64>, axis: usize) -> Tensor<f64> {
    let s = t.shape();
    let (d, h, w) = (s.d(), s.h(), s.w());
    let at = |z: usize, y: usize, x: usize| t.data()[(z * h + y) * w + x];
    let (n, rows, cols) = match axis {
        0 => (d, h, w),
        1 => (h, d, w),
        _ => (w, d, h),
    };
    let mut out = Vec::with_capacity(n * rows * cols);
    for i in 0..n {
        for r in 0..rows {
            for c in 0..cols {
                out.push(match axis {
                    0 => at(i, r, c),
                    1 => at(r, i, c),
                    _ => at(r, c, i),
                });
            }
        }
    }
    Tensor::from_vec(Shape::new(n, 1, 1, rows, cols), out).unwrap()
}

/// Perceptual loss of one slicing direction computed image by image.
fn single_plane_loss(ex: &VggExtractor<f64>, pred: &Tensor<f64>, target: &Tensor<f64>, axis: usize) -> f64 {
    let mut e = Eager;
    let p = e.constant(slices(pred, axis));
    let t = e.constant(slices(target, axis));
    let fp = ex.features(&mut e, &p).unwrap();
    let ft = ex.features(&mut e, &t).unwrap();
    let (a, b) = (e.value(&fp).data(), e.value(&ft).data());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn extractor64() -> VggExtractor<f64> {
    let cfg = PerceptualConfig::default();
    VggExtractor::<f32>::substitute(&cfg.feature_layer, cfg.substitute_width_divisor, cfg.substitute_seed).unwrap().cast()
}

fn c4_triplanar() -> Outcome {
    let ex = extractor64();
    let cfg = PerceptualConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    for _ in 0..5 {
        let (p, t) = smooth_pair(&mut rng, 48);
        let (got, _) = ok(perceptual_loss_3d(&ex, &p, &t, &cfg))?;
        let want = (0..3).map(|a| single_plane_loss(&ex, &p, &t, a)).sum::<f64>() / 3.0;
        ensure!(want > 0.0, "oracle loss is zero");
        worst = worst.max((got - want).abs() / want);
        let (same, _) = ok(perceptual_loss_3d(&ex, &p, &p, &cfg))?;
        ensure!(same == 0.0, "identical inputs give {same:e}");
    }
    ensure!(worst <= 1e-5, "relative error {worst:e}");
    Ok(format!("5 pairs of 48^3, max relative error {worst:.1e}, identical inputs give 0"))
}

fn c5_closed_forms() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let d = ok(gan_loss_d(&[0.0], &[0.0]))?;
    let g = ok(gan_loss_g(&[0.0]))?;
    ensure!((d - 2.0 * ln2).abs() <= 1e-9, "gan_loss_d(0, 0) = {d}");
    ensure!((g - ln2).abs() <= 1e-9, "gan_loss_g(0) = {g}");

    let ex = extractor64();
    let cfg = PerceptualConfig::default();
    let w = LossWeights { lambda_gan: 0.01, mu_mse: 0.001 };
    let fixtures: [&[f64]; 3] = [&[0.3], &[-1.2, 2.0], &[0.0, 0.5, -0.5, 4.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    for logits in fixtures {
        let (p, t) = smooth_pair(&mut rng, 32);
        let per = (0..3).map(|a| single_plane_loss(&ex, &p, &t, a)).sum::<f64>() / 3.0;
        let gan = logits.iter().map(|&z| (1.0 + (-z).exp()).ln()).sum::<f64>() / logits.len() as f64;
        let mse = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.data().len() as f64;
        let want = per + 0.01 * gan + 0.001 * mse;
        let (got, parts) = ok(total_generator_loss(&ex, &p, &t, logits, &w, &cfg))?;
        worst = worst.max((got - want).abs()).max((parts.adversarial - 0.01 * gan).abs()).max((parts.pixel - 0.001 * mse).abs());
    }
    ensure!(worst <= 1e-9, "composite error {worst:e}");
    Ok(format!("2 ln 2 and ln 2 exact to 1e-9, 3 composites within {worst:.1e}"))
}

fn c6_gradcheck() -> Outcome {
    let ex = extractor64();
    let cfg = PerceptualConfig::default();
    let w = LossWeights::default();
    let dcfg = DiscriminatorConfig { channels: vec![4, 8], input_patch: 16 };
    let mut disc = ok(init_discriminator(&dcfg, 6))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    perturb(&mut disc, &mut rng, 0.3);
    let disc: ParamSet<f64> = params::cast(&disc);
    let (p0, t) = smooth_pair(&mut rng, 16);

    let mut g = Graph::<f64>::new();
    let pred = g.variable(p0.clone());
    let target = g.constant(t.clone());
    g.set_frozen(true);
    let logits = ok(PatchDiscriminator::forward(&mut g, &dcfg, &disc, &pred))?;
    g.set_frozen(false);
    let nodes = ok(generator_loss_graph(&mut g, &ex, &cfg, &w, &pred, &target, &logits))?;
    let grads = ok(g.backward(nodes.total))?;
    let grad = grads.get(pred).ok_or("no gradient for the prediction")?.clone();

    let f = |p: &Tensor<f64>| -> f64 {
        let mut e = Eager;
        let x = e.constant(p.clone());
        let l = PatchDiscriminator::forward(&mut e, &dcfg, &disc, &x).unwrap();
        let logits: Vec<f64> = e.value(&l).data().to_vec();
        total_generator_loss(&ex, p, &t, &logits, &w, &cfg).unwrap().0
    };
    let h = 1e-6;
    let mut worst = 0f64;
    for _ in 0..10 {
        let dir: Vec<f64> = (0..p0.data().len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dir: Vec<f64> = dir.iter().map(|x| x / norm).collect();
        let shifted = |k: f64| Tensor::from_vec(p0.shape(), p0.data().iter().zip(&dir).map(|(a, d)| a + k * d).collect()).unwrap();
        let numeric = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
        let analytic: f64 = grad.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    ensure!(worst <= 1e-3, "directional derivative relative error {worst:e}");
    Ok(format!("10 directions on 16^3, max relative error {worst:.1e}"))
}

fn ssim_oracle(a: &Volume, b: &Volume) -> f64 {
    let d = a.dims();
    let win = d.map(|n| n.min(11));
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let sigma2 = 2.0 * 1.5 * 1.5;
    let centre = win.map(|n| (n as f64 - 1.0) / 2.0);
    let mut kernel = Vec::new();
    for i in 0..win[0] {
        for j in 0..win[1] {
            for k in 0..win[2] {
                let r2 = (i as f64 - centre[0]).powi(2) + (j as f64 - centre[1]).powi(2) + (k as f64 - centre[2]).powi(2);
                kernel.push(((i, j, k), (-r2 / sigma2).exp()));
            }
        }
    }
    let total: f64 = kernel.iter().map(|(_, w)| w).sum();
    let mut sum = 0.0;
    let mut count = 0;
    for z in 0..=d[0] - win[0] {
        for y in 0..=d[1] - win[1] {
            for x in 0..=d[2] - win[2] {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for &((i, j, k), w) in &kernel {
                    let p = a.at(z + i, y + j, x + k) as f64;
                    let q = b.at(z + i, y + j, x + k) as f64;
                    let w = w / total;
                    ma += w * p;
                    mb += w * q;
                    saa += w * p * p;
                    sbb += w * q * q;
                    sab += w * p * q;
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn c7_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut errs = [0f64; 3];
    for i in 0..20 {
        let dims = [rng.gen_range(3..=16), rng.gen_range(3..=16), rng.gen_range(3..=16)];
        let a = ok(phantom("a", i, &PhantomConfig { dims, ..Default::default() }))?;
        let k: f64 = rng.gen_range(0.01..0.3);
        let b = ok(a.with_data(dims, a.spacing(), a.data().iter().map(|&x| x + (k * (rng.gen::<f64>() - 0.5)) as f32).collect()))?;
        let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data().len() as f64;
        errs[0] = errs[0].max((ok(metrics::rmse(&a, &b))? - mse.sqrt()).abs());
        errs[1] = errs[1].max((ok(metrics::psnr(&a, &b))? - 10.0 * (1.0 / mse).log10()).abs());
        errs[2] = errs[2].max((ok(metrics::ssim(&a, &b))? - ssim_oracle(&a, &b)).abs());
    }
    ensure!(errs[0] <= 1e-9 && errs[1] <= 1e-6 && errs[2] <= 1e-4, "oracle errors rmse {:e} psnr {:e} ssim {:e}", errs[0], errs[1], errs[2]);

    let vols = ok(corpus(2, 70, &PhantomConfig { dims: [24, 32, 32], ..Default::default() }))?;
    let gcfg = GeneratorConfig { base_channels: 4, n_residual_blocks: 1, scales: vec![2, 3, 4], ..Default::default() };
    let ck = perturbed_generator(&gcfg, 71);
    let specs: Vec<_> = [2, 3, 4].map(DegradationSpec::thin_to_thick).to_vec();
    let recs = evaluate_methods(&vols, &specs, &[Method::Tricubic, Method::Sr { name: "sr", ckpt: &ck }]);
    ensure!(recs.len() == 12 && recs.iter().all(|r| r.is_ok()), "evaluation incomplete: {recs:?}");
    for r in &recs {
        let want = if r.rmse == 0.0 { f64::INFINITY } else { 20.0 * (1.0 / r.rmse).log10() };
        ensure!(r.psnr == want || (r.psnr - want).abs() <= 1e-9, "PSNR {} vs RMSE {} on {}/{}", r.psnr, r.rmse, r.volume_id, r.method);
    }

    let base = &vols[0];
    let noise: Vec<f64> = (0..base.data().len()).map(|_| rng.sample(StandardNormal)).collect();
    let mut last = [0.0, f64::INFINITY, 1.0];
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let noisy = ok(base.with_data(base.dims(), base.spacing(), base.data().iter().zip(&noise).map(|(&x, n)| x + (sigma * n) as f32).collect()))?;
        let m = ok(metrics::compare(base, &noisy))?;
        ensure!(m[0] > last[0] && m[1] < last[1] && m[2] <= last[2], "not monotone at sigma {sigma}: {m:?} after {last:?}");
        last = m;
    }
    Ok(format!("20 fixtures (rmse {:.0e}, psnr {:.0e}, ssim {:.0e}), identity on 12 records, 5 noise levels monotone", errs[0], errs[1], errs[2]))
}

fn c8_end_to_end() -> Outcome {
    let vols = ok(corpus(8, 8, &PhantomConfig::default()))?;
    let specs: Vec<_> = [2, 3, 4].map(DegradationSpec::thin_to_thick).to_vec();
    let t0 = Instant::now();
    let data = ok(Dataset::build(&vols[..6], &specs, &DatasetOptions { stride: 16, seed: 1, ..Default::default() }))?;
    let gcfg = GeneratorConfig { base_channels: 16, n_residual_blocks: 2, scales: vec![2, 3, 4], ..Default::default() };
    let tcfg = TrainConfig { lr_init: 1e-3, max_epochs: 6, seed: 3, ..Default::default() };
    let init = ok(Generator::init(&gcfg, 3))?;
    let mut tr = ok(Trainer::stage1(&data, init, tcfg))?;
    ok(tr.run(&mut ()))?;
    let (ck, _) = tr.finish();
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    ensure!(minutes <= 30.0, "training took {minutes:.1} min");

    let recs = evaluate_methods(&vols[6..], &specs, &[Method::Tricubic, Method::Sr { name: "sr", ckpt: &ck }]);
    let gain = |s: f64| -> Result<f64, String> {
        let d = ok(paired_differences(&recs, Metric::Psnr, "sr", "tricubic", s))?;
        Ok(d.iter().sum::<f64>() / d.len() as f64)
    };
    let (g2, g3, g4) = (gain(2.0)?, gain(3.0)?, gain(4.0)?);
    ensure!(g4 >= 0.3 && g2 >= 0.0, "PSNR gain s=2 {g2:+.3} dB, s=4 {g4:+.3} dB");
    Ok(format!("trained {minutes:.1} min; PSNR gain s=2 {g2:+.3} dB, s=3 {g3:+.3} dB, s=4 {g4:+.3} dB"))
}

fn hash(p: &ParamSet<f32>) -> String {
    let mut h = Sha256::new();
    for (k, t) in p {
        h.update(k.as_bytes());
        for x in t.data() {
            h.update(x.to_le_bytes());
        }
    }
    soupsr::hex(&h.finalize())
}

fn small_data(zero: bool) -> Dataset {
    let mut vols = corpus(4, 90, &PhantomConfig { dims: [32, 32, 32], ..Default::default() }).unwrap();
    if zero {
        vols = vols.iter().map(|v| v.with_data(v.dims(), v.spacing(), vec![0.0; v.data().len()]).unwrap()).collect();
    }
    let opts = DatasetOptions { stride: 8, patch_size: 16, seed: 2, ..Default::default() };
    Dataset::build(&vols, &[DegradationSpec::thin_to_thick(2)], &opts).unwrap()
}

fn lr_in_schedule(lr: f64) -> bool {
    (0..=3).any(|k| (lr - 3e-4 / 3f64.powi(k)).abs() <= 1e-12 * lr)
}

fn c9_mechanics() -> Outcome {
    let gcfg = GeneratorConfig { base_channels: 4, n_residual_blocks: 1, scales: vec![2], ..Default::default() };
    let data = small_data(false);
    let base = TrainConfig { seed: 9, batch_size: 4, ..Default::default() };

    // alternation isolation
    let mut pre = ok(Generator::init(&gcfg, 9))?;
    pre.stage = Stage::MsePretrained;
    let cfg2 = TrainConfig { stage: TrainStage::PerceptualGan, ..base.clone() };
    let ex = ok(VggExtractor::substitute(&cfg2.perceptual.feature_layer, 8, 19))?;
    let dcfg = DiscriminatorConfig { channels: vec![4, 8], input_patch: 16 };
    let mut tr = ok(Trainer::stage2(&data, pre, dcfg, &ex, cfg2))?;
    let batch = ok(tr.batch(Split::Train, &[0, 1, 2, 3]))?;
    let snap = |tr: &Trainer| (hash(&tr.state().current.flat_params()), hash(tr.state().disc.as_ref().unwrap()));
    let (g0, d0) = snap(&tr);
    ok(tr.d_step(&batch))?;
    let (g1, d1) = snap(&tr);
    ensure!(g1 == g0 && d1 != d0, "discriminator step touched G ({}) or left D unchanged ({})", g1 != g0, d1 == d0);
    ok(tr.g_step(&batch))?;
    let (g2, d2) = snap(&tr);
    ensure!(g2 != g1 && d2 == d1, "generator step touched D ({}) or left G unchanged ({})", d2 != d1, g2 == g1);

    // schedule values
    let sched = TrainConfig { improvement_threshold: 0.2, max_epochs: 12, ..base.clone() };
    let mut tr = ok(Trainer::stage1(&data, ok(Generator::init(&gcfg, 9))?, sched))?;
    ok(tr.run(&mut ()))?;
    let lrs: Vec<f64> = tr.state().history.iter().map(|r| r.lr).collect();
    ensure!(lrs.iter().all(|&l| lr_in_schedule(l)), "learning rates outside 3e-4/3^k: {lrs:?}");
    ensure!(lrs.windows(2).all(|w| w[1] <= w[0]) && lrs.last() < lrs.first(), "learning rates never decayed: {lrs:?}");
    let zero = small_data(true);
    let (_, rep) = ok(soupsr_core::trainer::train_stage1(&zero, &gcfg, &TrainConfig { max_epochs: 10, ..base.clone() }))?;
    ensure!(rep.records[0].train_loss == 0.0 && rep.records[0].lr == 3e-4, "zero data epoch 1: {:?}", rep.records[0]);
    ensure!(rep.records.iter().all(|r| lr_in_schedule(r.lr)) && rep.records.len() == 5, "zero data schedule: {:?}", rep.records);

    // resume equivalence and best selection
    let cfg = TrainConfig { max_epochs: 4, ..base.clone() };
    let init = ok(Generator::init(&gcfg, 9))?;
    let mut full = ok(Trainer::stage1(&data, init.clone(), cfg.clone()))?;
    ok(full.run(&mut ()))?;
    let mut part = ok(Trainer::stage1(&data, init, cfg.clone()))?;
    ok(part.run_epoch())?;
    ok(part.run_epoch())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("state.soup");
    ok(save_train_state(part.state(), &path))?;
    let restored = ok(load_train_state(&path))?;
    let mut resumed = ok(Trainer::resume(&data, restored, cfg.clone(), DiscriminatorConfig::default(), None))?;
    ok(resumed.run(&mut ()))?;
    let (a, b) = (full.state(), resumed.state());
    let fa = a.current.flat_params();
    let fb = b.current.flat_params();
    let param_diff = fa.iter().map(|(k, t)| t.max_abs_diff(&fb[k])).fold(0.0, f64::max);
    let loss_diff = a.history.iter().zip(&b.history).map(|(x, y)| (x.train_loss - y.train_loss).abs().max((x.val_loss - y.val_loss).abs())).fold(0.0, f64::max);
    ensure!(a.history.len() == b.history.len() && param_diff <= 1e-6 && loss_diff <= 1e-6, "resume drift: params {param_diff:e}, losses {loss_diff:e}");

    let best_val = a.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    let (best, _) = full.finish();
    let check = ok(Trainer::stage1(&data, best, cfg))?;
    let val = ok(check.validation_loss())?;
    ensure!(val == best_val, "returned checkpoint scores {val}, best epoch {best_val}");
    Ok(format!("isolation hashes ok, lrs {lrs:?}, resume drift {param_diff:.0e}, best val {best_val:.3e}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_soupsr")).args(["--log-level", "warn"]).args(args).output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "soupsr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn cli_pipeline(root: &Path) -> Result<(Vec<u8>, Vec<u8>, Vec<f64>), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let vols = root.join("vols");
    run_cli(&["synth", "--count", "4", "--seed", "5", "--dims", "24,24,24", "--out-dir", &s(&vols)])?;
    let inputs: Vec<String> = (0..4).map(|i| s(&vols.join(format!("phantom-{i:03}.nii")))).collect();
    let ds = root.join("ds.json");
    let mut args = vec!["build-dataset", "--scale", "2,3", "--stride", "8", "--patch-size", "16", "--seed", "1", "--out"];
    let ds_s = s(&ds);
    args.push(&ds_s);
    args.extend(inputs.iter().map(String::as_str));
    run_cli(&args)?;
    let cfg = serde_json::json!({
        "dataset": "ds.json",
        "output_dir": "run",
        "generator": { "base_channels": 4, "n_residual_blocks": 1, "scales": [2, 3] },
        "train": { "max_epochs": 2, "seed": 7, "batch_size": 4 },
        "checkpoint_every": 0
    });
    let cfg_path = root.join("train.json");
    std::fs::write(&cfg_path, cfg.to_string()).map_err(|e| e.to_string())?;
    run_cli(&["train", "--config", &s(&cfg_path)])?;
    let out = root.join("sr.nii");
    run_cli(&["infer", "--ckpt", &s(&root.join("run/final.soup")), "--scale", "2.5", &inputs[0], &s(&out)])?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let losses = soupsr::report::read_jsonl::<serde_json::Value>(&root.join("run/report.jsonl"))
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| r["train_loss"].as_f64().unwrap_or(f64::NAN))
        .collect();
    Ok((read(&out)?, read(&root.join("run/final.soup"))?, losses))
}

fn c10_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = cli_pipeline(&a)?;
    let rb = cli_pipeline(&b)?;
    ensure!(ra.0 == rb.0, "inference outputs differ");
    ensure!(ra.1 == rb.1, "final checkpoints differ");
    ensure!(ra.2.len() == 2 && ra.2.len() == rb.2.len(), "loss curves have {} and {} epochs", ra.2.len(), rb.2.len());
    let drift = ra.2.iter().zip(&rb.2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure!(drift <= 1e-6, "train-loss curves differ by {drift:e}");
    Ok(format!("inference outputs byte-identical ({} bytes), loss drift {drift:.0e}", ra.0.len()))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("degradation oracle", c1_degradation),
        ("cubic polynomial reproduction", c2_cubic),
        ("parameter blending", c3_blend),
        ("tri-planar perceptual loss", c4_triplanar),
        ("loss closed forms", c5_closed_forms),
        ("gradient check", c6_gradcheck),
        ("metric correctness", c7_metrics),
        ("synthetic end-to-end", c8_end_to_end),
        ("training mechanics", c9_mechanics),
        ("reproducibility", c10_reproducibility),
    ];
    let mut failed = BTreeMap::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n} ({name}): FAIL - {detail} [{secs:.1}s]");
                failed.insert(n, detail);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {:?}", failed.keys().collect::<Vec<_>>());
        std::process::exit(1);
    }
}
