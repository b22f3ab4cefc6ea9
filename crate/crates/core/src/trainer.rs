//! Two-stage training: pixel-wise pre-training under a plateau schedule,
//! then alternating discriminator/generator fine-tuning on the composite
//! perceptual objective.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{bail, Error, Result};
use crate::graph::{Eager, Graph, Ops};
use crate::losses::{generator_loss_graph, LossWeights};
use crate::model::{forward_eager, init_discriminator, DiscriminatorConfig, Generator, GeneratorConfig, MultiScaleCheckpoint, PatchDiscriminator, Stage};
use crate::optim::{Adam, AdamConfig, Plateau, PlateauScheduler};
use crate::params::ParamSet;
use crate::perceptual::{PerceptualConfig, VggExtractor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Mse,
    PerceptualGan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub max_decay_cycles: u32,
    /// Minimum relative drop of the validation loss that counts as progress.
    pub improvement_threshold: f64,
    pub batch_size: usize,
    pub stage: TrainStage,
    pub weights: LossWeights,
    pub seed: u64,
    pub max_epochs: usize,
    pub d_steps_per_g_step: usize,
    /// Cap on optimiser steps per epoch; `None` walks the whole train split.
    pub steps_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    pub perceptual: PerceptualConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 3e-4,
            lr_decay_factor: 3.0,
            max_decay_cycles: 3,
            improvement_threshold: 1e-4,
            batch_size: 4,
            stage: TrainStage::Mse,
            weights: LossWeights::default(),
            seed: 0,
            max_epochs: 100,
            d_steps_per_g_step: 1,
            steps_per_epoch: None,
            adam: AdamConfig::default(),
            perceptual: PerceptualConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            bail!(Config, "lr_init must be positive, got {}", self.lr_init);
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 1.0) {
            bail!(Config, "lr_decay_factor must exceed 1, got {}", self.lr_decay_factor);
        }
        if !(self.improvement_threshold >= 0.0 && self.improvement_threshold < 1.0) {
            bail!(Config, "improvement_threshold must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            bail!(Config, "max_epochs must be at least 1");
        }
        if self.d_steps_per_g_step == 0 {
            bail!(Config, "d_steps_per_g_step must be at least 1");
        }
        if self.steps_per_epoch == Some(0) {
            bail!(Config, "steps_per_epoch must be at least 1");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            bail!(Config, "invalid Adam settings {a:?}");
        }
        self.weights.validate()?;
        if self.stage == TrainStage::PerceptualGan {
            self.perceptual.validate()?;
        }
        Ok(())
    }
}

/// Mean per-component losses of a fine-tuning epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentBreakdown {
    pub perceptual: f64,
    /// Weighted adversarial term.
    pub adversarial: f64,
    /// Weighted pixel term.
    pub pixel: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub stage: TrainStage,
    pub steps: usize,
    pub component_breakdown: Option<ComponentBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_time_s: Option<f64>,
    pub final_checkpoint: Option<String>,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub stage: TrainStage,
    /// Completed epochs.
    pub epoch: usize,
    pub current: MultiScaleCheckpoint,
    pub best: Option<(f64, MultiScaleCheckpoint)>,
    pub g_opt: Adam,
    pub scheduler: PlateauScheduler,
    pub disc: Option<ParamSet<f32>>,
    pub d_opt: Option<Adam>,
    pub history: Vec<EpochRecord>,
    pub finished: bool,
    /// Set when the plateau schedule ran out; a larger epoch budget does
    /// not revive such a run.
    pub stopped: bool,
}

/// Hooks called by [`Trainer::run`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _state: &TrainState) -> Result<()> {
        Ok(())
    }
    /// Called with the state as it was before the failing step.
    fn on_abort(&mut self, _error: &Error, _state: &TrainState) {}
}

impl TrainObserver for () {}

/// One batch, all at a single sampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub scale: u32,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

/// Outcome of a fine-tuning generator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GStep {
    pub total: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub pixel: f64,
}

fn param_refs<'a>(ckpt: &'a mut MultiScaleCheckpoint) -> BTreeMap<String, &'a mut Tensor<f32>> {
    let mut out = BTreeMap::new();
    for (k, v) in ckpt.backbone.iter_mut() {
        out.insert(format!("backbone.{k}"), v);
    }
    for (s, p) in ckpt.per_scale.iter_mut() {
        for (k, v) in p.iter_mut() {
            out.insert(format!("scale{s}.{k}"), v);
        }
    }
    out
}

fn generator_graph(g: &mut Graph<f32>, ckpt: &MultiScaleCheckpoint, scale: u32, input: &Tensor<f32>) -> Result<crate::graph::Var> {
    let Some(sp) = ckpt.per_scale.get(&scale) else {
        bail!(Config, "checkpoint has no module for scale {scale}");
    };
    let x = g.constant(input.clone());
    Generator::forward(g, &ckpt.config, &ckpt.backbone, sp, &scale.to_string(), &x)
}

fn generator_eager(ckpt: &MultiScaleCheckpoint, scale: u32, input: &Tensor<f32>) -> Result<Tensor<f32>> {
    let Some(sp) = ckpt.per_scale.get(&scale) else {
        bail!(Config, "checkpoint has no module for scale {scale}");
    };
    forward_eager(&ckpt.config, &ckpt.backbone, sp, input.clone())
}

/// Gradients of the batch MSE with respect to every generator parameter the
/// batch touches, keyed `backbone.*` / `scale<s>.*`.
pub fn generator_mse_grads(ckpt: &MultiScaleCheckpoint, batch: &Batch) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let mut g = Graph::new();
    let pred = generator_graph(&mut g, ckpt, batch.scale, &batch.input)?;
    let t = g.constant(batch.target.clone());
    let loss = g.mse(&pred, &t)?;
    let value = g.value(&loss).item() as f64;
    if !value.is_finite() {
        bail!(Numerical, "non-finite MSE {value}");
    }
    Ok((value, g.backward(loss)?.params()))
}

fn check_grads(grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    for (k, t) in grads {
        if !t.all_finite() {
            bail!(Numerical, "non-finite gradient for `{k}`");
        }
    }
    Ok(())
}

pub struct Trainer<'a> {
    data: &'a Dataset,
    cfg: TrainConfig,
    dcfg: DiscriminatorConfig,
    extractor: Option<&'a VggExtractor<f32>>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    fn check_data(data: &Dataset, gcfg: &GeneratorConfig) -> Result<()> {
        for split in [Split::Train, Split::Val] {
            if data.split_len(split) == 0 {
                bail!(Config, "{split:?} split is empty");
            }
        }
        for s in data.manifest().scales() {
            if !gcfg.scales.contains(&s) {
                bail!(Config, "dataset uses scale {s}, generator covers {:?}", gcfg.scales);
            }
        }
        Ok(())
    }

    /// Pixel-wise pre-training starting from `init`.
    pub fn stage1(data: &'a Dataset, init: MultiScaleCheckpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage != TrainStage::Mse {
            bail!(Config, "stage-1 training needs stage = mse");
        }
        init.validate()?;
        Self::check_data(data, &init.config)?;
        let state = TrainState {
            stage: TrainStage::Mse,
            epoch: 0,
            current: init,
            best: None,
            g_opt: Adam::new(cfg.adam),
            scheduler: PlateauScheduler::new(cfg.lr_init, cfg.lr_decay_factor, cfg.max_decay_cycles, cfg.improvement_threshold),
            disc: None,
            d_opt: None,
            history: Vec::new(),
            finished: false,
            stopped: false,
        };
        Ok(Trainer { data, cfg, dcfg: DiscriminatorConfig::default(), extractor: None, state })
    }

    /// Perceptual/adversarial fine-tuning of a pre-trained checkpoint.
    pub fn stage2(
        data: &'a Dataset,
        pretrained: MultiScaleCheckpoint,
        dcfg: DiscriminatorConfig,
        extractor: &'a VggExtractor<f32>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        dcfg.validate()?;
        if cfg.stage != TrainStage::PerceptualGan {
            bail!(Config, "stage-2 training needs stage = perceptual_gan");
        }
        if pretrained.stage != Stage::MsePretrained {
            bail!(Config, "stage-2 training starts from an mse_pretrained checkpoint, got {:?}", pretrained.stage);
        }
        if dcfg.input_patch != data.manifest().patch_size {
            bail!(Config, "discriminator patch {} differs from dataset patch {}", dcfg.input_patch, data.manifest().patch_size);
        }
        pretrained.validate()?;
        Self::check_data(data, &pretrained.config)?;
        let disc = init_discriminator(&dcfg, cfg.seed ^ 0x0D15_C000)?;
        let state = TrainState {
            stage: TrainStage::PerceptualGan,
            epoch: 0,
            current: pretrained,
            best: None,
            g_opt: Adam::new(cfg.adam),
            scheduler: PlateauScheduler::new(cfg.lr_init, cfg.lr_decay_factor, 0, cfg.improvement_threshold),
            disc: Some(disc),
            d_opt: Some(Adam::new(cfg.adam)),
            history: Vec::new(),
            finished: false,
            stopped: false,
        };
        Ok(Trainer { data, cfg, dcfg, extractor: Some(extractor), state })
    }

    /// Continue from a saved state. A run that ended on its epoch budget
    /// continues if `cfg.max_epochs` is larger.
    pub fn resume(
        data: &'a Dataset,
        mut state: TrainState,
        cfg: TrainConfig,
        dcfg: DiscriminatorConfig,
        extractor: Option<&'a VggExtractor<f32>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage != state.stage {
            bail!(Config, "config stage {:?} does not match saved stage {:?}", cfg.stage, state.stage);
        }
        if state.stage == TrainStage::PerceptualGan && (extractor.is_none() || state.disc.is_none() || state.d_opt.is_none()) {
            bail!(Config, "resuming fine-tuning needs the extractor and discriminator state");
        }
        Self::check_data(data, &state.current.config)?;
        state.finished = state.stopped || state.epoch >= cfg.max_epochs;
        Ok(Trainer { data, cfg, dcfg, extractor, state })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.state.scheduler.lr
    }

    /// Batches of epoch `epoch` (0-based): each scale's train indices are
    /// shuffled and chunked, then the chunks are shuffled together.
    pub fn epoch_plan(&self, epoch: usize) -> Vec<(u32, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut batches = Vec::new();
        for (s, mut idx) in self.data.indices_by_scale(Split::Train) {
            idx.shuffle(&mut rng);
            for c in idx.chunks(self.cfg.batch_size) {
                batches.push((s, c.to_vec()));
            }
        }
        batches.shuffle(&mut rng);
        if let Some(cap) = self.cfg.steps_per_epoch {
            batches.truncate(cap);
        }
        batches
    }

    pub fn batch(&self, split: Split, indices: &[usize]) -> Result<Batch> {
        let (input, target, scale) = self.data.batch_tensors(split, indices)?;
        Ok(Batch { scale, input, target })
    }

    /// One pixel-wise optimiser step; returns the batch loss before the update.
    pub fn mse_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = generator_mse_grads(&self.state.current, batch)?;
        check_grads(&grads)?;
        let lr = self.lr();
        let mut refs = param_refs(&mut self.state.current);
        self.state.g_opt.step(lr, &grads, |n| refs.remove(n))?;
        Ok(loss)
    }

    fn fine_tune_parts(&self) -> Result<(&VggExtractor<f32>, &ParamSet<f32>)> {
        match (self.extractor, self.state.disc.as_ref()) {
            (Some(ex), Some(d)) => Ok((ex, d)),
            _ => bail!(Config, "not a fine-tuning session"),
        }
    }

    /// One discriminator step on `batch`; generator parameters are only read.
    pub fn d_step(&mut self, batch: &Batch) -> Result<f64> {
        let fake = generator_eager(&self.state.current, batch.scale, &batch.input)?;
        let (_, disc) = self.fine_tune_parts()?;
        let mut g = Graph::new();
        let real = g.constant(batch.target.clone());
        let fake = g.constant(fake);
        let lr_ = PatchDiscriminator::forward(&mut g, &self.dcfg, disc, &real)?;
        let lf = PatchDiscriminator::forward(&mut g, &self.dcfg, disc, &fake)?;
        let a = g.softplus_mean(&lr_, -1.0);
        let b = g.softplus_mean(&lf, 1.0);
        let loss = g.add(&a, &b)?;
        let value = g.value(&loss).item() as f64;
        if !value.is_finite() {
            bail!(Numerical, "non-finite discriminator loss {value}");
        }
        let grads = g.backward(loss)?.params();
        check_grads(&grads)?;
        let lr = self.lr();
        let (Some(d), Some(opt)) = (self.state.disc.as_mut(), self.state.d_opt.as_mut()) else {
            bail!(Config, "not a fine-tuning session");
        };
        opt.step_params(lr, &grads, d, "disc.")?;
        Ok(value)
    }

    /// One generator step on the composite objective; the discriminator is
    /// evaluated with frozen weights.
    pub fn g_step(&mut self, batch: &Batch) -> Result<GStep> {
        let (ex, disc) = self.fine_tune_parts()?;
        let mut g = Graph::new();
        let pred = generator_graph(&mut g, &self.state.current, batch.scale, &batch.input)?;
        let target = g.constant(batch.target.clone());
        g.set_frozen(true);
        let logits = PatchDiscriminator::forward(&mut g, &self.dcfg, disc, &pred)?;
        g.set_frozen(false);
        let nodes = generator_loss_graph(&mut g, ex, &self.cfg.perceptual, &self.cfg.weights, &pred, &target, &logits)?;
        let item = |v| g.value(v).item() as f64;
        let out = GStep {
            total: item(&nodes.total),
            perceptual: item(&nodes.perceptual),
            adversarial: item(&nodes.adversarial),
            pixel: item(&nodes.pixel),
        };
        if !out.total.is_finite() {
            bail!(Numerical, "non-finite generator loss {out:?}");
        }
        let grads = g.backward(nodes.total)?.params();
        check_grads(&grads)?;
        let lr = self.lr();
        let mut refs = param_refs(&mut self.state.current);
        self.state.g_opt.step(lr, &grads, |n| refs.remove(n))?;
        Ok(out)
    }

    fn val_batches(&self) -> Vec<(u32, Vec<usize>)> {
        let mut out = Vec::new();
        for (s, idx) in self.data.indices_by_scale(Split::Val) {
            for c in idx.chunks(self.cfg.batch_size) {
                out.push((s, c.to_vec()));
            }
        }
        out
    }

    /// Mean validation loss of the current parameters: MSE before
    /// fine-tuning, the composite objective during it.
    pub fn validation_loss(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (_, idx) in self.val_batches() {
            let b = self.batch(Split::Val, &idx)?;
            let pred = generator_eager(&self.state.current, b.scale, &b.input)?;
            let loss = match self.state.stage {
                TrainStage::Mse => crate::losses::mse_loss(&pred, &b.target)?,
                TrainStage::PerceptualGan => {
                    let (ex, disc) = self.fine_tune_parts()?;
                    let mut e = Eager;
                    let pv = e.constant(pred.clone());
                    let logits = PatchDiscriminator::forward(&mut e, &self.dcfg, disc, &pv)?;
                    let logits: Vec<f64> = logits.data().iter().map(|&z| z as f64).collect();
                    crate::losses::total_generator_loss(ex, &pred, &b.target, &logits, &self.cfg.weights, &self.cfg.perceptual)?.0
                }
            };
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let v = sum / count as f64;
        if !v.is_finite() {
            bail!(Numerical, "non-finite validation loss after epoch {}", self.state.epoch);
        }
        Ok(v)
    }

    fn annotate(&self, e: Error, step: usize, scale: u32, idx: &[usize]) -> Error {
        match e {
            Error::Numerical(m) => Error::Numerical(format!(
                "{m} (epoch {}, step {step}, scale {scale}, train indices {idx:?}, lr {:e})",
                self.state.epoch + 1,
                self.lr()
            )),
            other => other,
        }
    }

    /// Run one epoch. On error the parameters are those before the failing
    /// step.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.state.finished {
            bail!(Config, "training already finished after {} epochs", self.state.epoch);
        }
        let plan = self.epoch_plan(self.state.epoch);
        let lr = self.lr();
        let mut sum = 0.0;
        let mut parts = ComponentBreakdown::default();
        for (step, (scale, idx)) in plan.iter().enumerate() {
            let b = self.batch(Split::Train, idx)?;
            match self.state.stage {
                TrainStage::Mse => {
                    let backup = self.state.clone();
                    match self.mse_step(&b) {
                        Ok(l) => sum += l,
                        Err(e) => {
                            self.state = backup;
                            return Err(self.annotate(e, step, *scale, idx));
                        }
                    }
                }
                TrainStage::PerceptualGan => {
                    let backup = self.state.clone();
                    let res = (|| {
                        let mut d = 0.0;
                        for _ in 0..self.cfg.d_steps_per_g_step {
                            d += self.d_step(&b)?;
                        }
                        Ok::<_, Error>((d / self.cfg.d_steps_per_g_step as f64, self.g_step(&b)?))
                    })();
                    match res {
                        Ok((d, gs)) => {
                            sum += gs.total;
                            parts.perceptual += gs.perceptual;
                            parts.adversarial += gs.adversarial;
                            parts.pixel += gs.pixel;
                            parts.discriminator += d;
                        }
                        Err(e) => {
                            self.state = backup;
                            return Err(self.annotate(e, step, *scale, idx));
                        }
                    }
                }
            }
        }
        let n = plan.len().max(1) as f64;
        let val = self.validation_loss()?;
        let st = &mut self.state;
        st.epoch += 1;
        let breakdown = (st.stage == TrainStage::PerceptualGan).then(|| ComponentBreakdown {
            perceptual: parts.perceptual / n,
            adversarial: parts.adversarial / n,
            pixel: parts.pixel / n,
            discriminator: parts.discriminator / n,
        });
        st.history.push(EpochRecord {
            epoch: st.epoch,
            train_loss: sum / n,
            val_loss: val,
            lr,
            stage: st.stage,
            steps: plan.len(),
            component_breakdown: breakdown,
        });
        if st.best.as_ref().map_or(true, |(b, _)| val < *b) {
            st.best = Some((val, st.current.clone()));
        }
        if st.stage == TrainStage::Mse && st.scheduler.observe(val) == Plateau::Stop {
            st.finished = true;
            st.stopped = true;
        }
        if st.epoch >= self.cfg.max_epochs {
            st.finished = true;
        }
        Ok(st.history.last().unwrap())
    }

    pub fn run(&mut self, obs: &mut dyn TrainObserver) -> Result<()> {
        while !self.state.finished {
            if let Err(e) = self.run_epoch() {
                obs.on_abort(&e, &self.state);
                return Err(e);
            }
            let rec = self.state.history.last().unwrap().clone();
            obs.on_epoch(&rec, &self.state)?;
        }
        Ok(())
    }

    /// Best-validation checkpoint and the epoch log.
    pub fn finish(self) -> (MultiScaleCheckpoint, TrainReport) {
        let st = self.state;
        let mut ckpt = st.best.map(|(_, c)| c).unwrap_or(st.current);
        ckpt.stage = match st.stage {
            TrainStage::Mse => Stage::MsePretrained,
            TrainStage::PerceptualGan => Stage::PerceptualGan,
        };
        let a = self.cfg.adam;
        ckpt.metadata.insert("train.epochs".into(), st.epoch.to_string());
        ckpt.metadata.insert("train.seed".into(), self.cfg.seed.to_string());
        ckpt.metadata.insert("train.adam".into(), format!("beta1={} beta2={} eps={}", a.beta1, a.beta2, a.eps));
        ckpt.metadata.insert("train.lr_final".into(), format!("{:e}", st.scheduler.lr));
        (ckpt, TrainReport { records: st.history, wall_time_s: None, final_checkpoint: None })
    }
}

/// Pixel-wise pre-training from a fresh initialisation seeded by `cfg.seed`.
pub fn train_stage1(data: &Dataset, gcfg: &GeneratorConfig, cfg: &TrainConfig) -> Result<(MultiScaleCheckpoint, TrainReport)> {
    train_stage1_observed(data, gcfg, cfg, &mut ())
}

pub fn train_stage1_observed(
    data: &Dataset,
    gcfg: &GeneratorConfig,
    cfg: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<(MultiScaleCheckpoint, TrainReport)> {
    let init = Generator::init(gcfg, cfg.seed)?;
    let mut t = Trainer::stage1(data, init, cfg.clone())?;
    t.run(obs)?;
    Ok(t.finish())
}

pub fn train_stage2(
    data: &Dataset,
    pretrained: MultiScaleCheckpoint,
    dcfg: &DiscriminatorConfig,
    extractor: &VggExtractor<f32>,
    cfg: &TrainConfig,
) -> Result<(MultiScaleCheckpoint, TrainReport)> {
    let mut t = Trainer::stage2(data, pretrained, dcfg.clone(), extractor, cfg.clone())?;
    t.run(&mut ())?;
    Ok(t.finish())
}
