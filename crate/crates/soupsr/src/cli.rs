//! The `soupsr` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use soupsr_core::dataset::{DatasetOptions, SplitPolicy, DEFAULT_RATIOS, PATCH_SIZE};
use soupsr_core::degradation::{degrade, DegradationMode, DegradationSpec};
use soupsr_core::metrics::{evaluate_methods, Method, Metric, MetricRecord};
use soupsr_core::model::{generate_with, interpolate_params, GenerateOptions, Generator, Stage};
use soupsr_core::synthetic::{corpus, PhantomConfig};
use soupsr_core::trainer::{EpochRecord, TrainObserver, TrainStage, TrainState, Trainer};

use crate::checkpoint::{load_checkpoint, load_train_state, resolve_extractor, save_checkpoint, save_train_state, ExtractorSource};
use crate::config::load_train_file;
use crate::dataset_file::{build_dataset_file, open_dataset, save_dataset_file};
use crate::error::{Error, Result};
use crate::report;
use crate::run_manifest::RunManifest;
use crate::stats::paired_significance;
use crate::volume_io::{load_volume, save_volume};

#[derive(Debug, Parser)]
#[command(name = "soupsr", version, about = "Through-plane super-resolution of 3D volumes")]
pub struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// Where to write the run manifest (defaults next to the outputs).
    #[arg(long, global = true)]
    pub run_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Thick,
    Thin,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    ByPatch,
    ByVolume,
}

#[derive(Debug, Clone, Args)]
pub struct DegradeArgs {
    #[arg(long, value_enum, default_value = "thick")]
    pub mode: Mode,
    /// Gaussian standard deviation in slices (gaussian mode).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Additive Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

impl DegradeArgs {
    fn spec(&self, scale: u32) -> DegradationSpec {
        DegradationSpec {
            mode: match self.mode {
                Mode::Thick => DegradationMode::ThinToThick,
                Mode::Thin => DegradationMode::ThinToThin,
                Mode::Gaussian => DegradationMode::Gaussian,
            },
            scale,
            gaussian_sigma: self.sigma,
            noise_sigma: self.noise,
            noise_seed: self.noise_seed,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a low-resolution acquisition along Z.
    Degrade {
        #[command(flatten)]
        model: DegradeArgs,
        #[arg(long)]
        scale: u32,
        input: PathBuf,
        output: PathBuf,
    },
    /// Extract and split training patches into a dataset manifest.
    BuildDataset {
        #[command(flatten)]
        model: DegradeArgs,
        /// Sampling factors; repeat or separate with commas.
        #[arg(long, value_delimiter = ',', required = true)]
        scale: Vec<u32>,
        #[arg(long, default_value_t = PATCH_SIZE)]
        stride: usize,
        #[arg(long, default_value_t = PATCH_SIZE)]
        patch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
        ratios: Vec<f64>,
        #[arg(long, value_enum, default_value = "by-patch")]
        split_policy: Policy,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train a generator from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted `key=value` override of a config entry.
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve a volume along Z.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scale: f64,
        /// Edge of the tiles the network runs on.
        #[arg(long, default_value_t = 48)]
        tile: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score reconstructions of degraded volumes against the originals.
    Evaluate {
        #[command(flatten)]
        model: DegradeArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        scale: Vec<u32>,
        /// Model checkpoint as `PATH` or `NAME=PATH`; repeatable.
        #[arg(long)]
        ckpt: Vec<String>,
        /// Leave the cubic-interpolation baseline out.
        #[arg(long)]
        no_tricubic: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write band-limited synthetic phantoms.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 64, 64])]
        dims: Vec<usize>,
        /// `nii` or `vol`
        #[arg(long, default_value = "nii")]
        format: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parse, run and map the outcome to an exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let custom = cli.run_manifest.clone();
    let (manifest, default_path) = match cli.command {
        Command::Degrade { model, scale, input, output } => {
            let spec = model.spec(scale);
            let mut rm = RunManifest::new("degrade", argv);
            rm.input(&input)?;
            let v = load_volume(&input)?;
            let out = degrade(&v, &spec)?;
            save_volume(&out, &output)?;
            log::info!("{} {:?} -> {:?}", input.display(), v.dims(), out.dims());
            rm.config = json!({ "spec": spec });
            rm.seeds = json!({ "noise_seed": spec.noise_seed });
            rm.outputs.push(output.clone());
            (rm, with_suffix(&output, ".run.json"))
        }
        Command::BuildDataset { model, scale, stride, patch_size, seed, ratios, split_policy, out, inputs } => {
            let specs: Vec<_> = scale.iter().map(|&s| model.spec(s)).collect();
            let opts = DatasetOptions {
                stride,
                seed,
                ratios: triple("--ratios", &ratios)?,
                patch_size,
                policy: match split_policy {
                    Policy::ByPatch => SplitPolicy::ByPatch,
                    Policy::ByVolume => SplitPolicy::ByVolume,
                },
            };
            let mut rm = RunManifest::new("build-dataset", argv);
            for p in &inputs {
                rm.input(p)?;
            }
            let (file, _) = build_dataset_file(&inputs, &specs, &opts)?;
            for s in &file.manifest.skipped {
                log::warn!("skipped {} at scale {}: {}", s.volume_id, s.scale, s.reason);
            }
            let m = &file.manifest;
            log::info!(
                "{} patches: train {}, val {}, test {}",
                m.entries.len(),
                m.split_len(soupsr_core::dataset::Split::Train),
                m.split_len(soupsr_core::dataset::Split::Val),
                m.split_len(soupsr_core::dataset::Split::Test)
            );
            save_dataset_file(&file, &out)?;
            rm.config = json!({ "specs": specs, "options": opts });
            rm.seeds = json!({ "split_seed": seed });
            rm.outputs.push(out.clone());
            (rm, with_suffix(&out, ".run.json"))
        }
        Command::Train { config, overrides, resume } => train(&config, &overrides, resume.as_deref(), argv)?,
        Command::Infer { ckpt, scale, tile, input, output } => {
            let mut rm = RunManifest::new("infer", argv);
            rm.input(&ckpt)?;
            rm.input(&input)?;
            let model = load_checkpoint(&ckpt)?;
            let eff = interpolate_params(&model, scale)?;
            let details = json!({
                "scale": scale,
                "lower_scale": eff.lower,
                "upper_scale": eff.upper(),
                "alpha": eff.alpha,
                "path": if eff.alpha > 0.0 { "interpolated" } else { "direct" },
            });
            let v = load_volume(&input)?;
            let sr = generate_with(&model, &v.normalize(), scale, GenerateOptions { tile: tile.max(1) })?;
            let out = sr.denormalize();
            save_volume(&out, &output)?;
            log::info!("{} {:?} -> {:?} (s = {scale})", input.display(), v.dims(), out.dims());
            rm.config = json!({ "scale": scale, "tile": tile, "generator": model.config, "stage": model.stage });
            rm.seeds = json!({ "checkpoint_seed": model.seed });
            rm.details = details;
            rm.outputs.push(output.clone());
            (rm, with_suffix(&output, ".run.json"))
        }
        Command::Evaluate { model, scale, ckpt, no_tricubic, out_dir, inputs } => evaluate(&model, &scale, &ckpt, no_tricubic, &out_dir, &inputs, argv)?,
        Command::Synth { count, seed, dims, format, out_dir } => {
            if format != "nii" && format != "vol" {
                return Err(Error::Usage(format!("unknown format `{format}` (nii or vol)")));
            }
            create_dir(&out_dir)?;
            let cfg = PhantomConfig { dims: triple("--dims", &dims)?, ..Default::default() };
            let mut rm = RunManifest::new("synth", argv);
            for v in corpus(count, seed, &cfg)? {
                let p = out_dir.join(format!("{}.{format}", v.id));
                save_volume(&v, &p)?;
                rm.outputs.push(p);
            }
            rm.config = json!({ "phantom": cfg, "count": count });
            rm.seeds = json!({ "seed": seed });
            (rm, out_dir.join("run.json"))
        }
    };
    manifest.write(custom.as_deref().unwrap_or(&default_path))
}

fn triple<T: Copy>(flag: &str, v: &[T]) -> Result<[T; 3]> {
    match v {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Usage(format!("{flag} takes three comma-separated values, got {}", v.len()))),
    }
}

struct FileObserver {
    dir: PathBuf,
    every: usize,
    error: Option<Error>,
}

impl TrainObserver for FileObserver {
    fn on_epoch(&mut self, r: &EpochRecord, st: &TrainState) -> soupsr_core::Result<()> {
        log::info!("epoch {} train {:.6e} val {:.6e} lr {:.3e}", r.epoch, r.train_loss, r.val_loss, r.lr);
        let res = (|| {
            report::append_jsonl(&self.dir.join("report.jsonl"), r)?;
            save_train_state(st, &self.dir.join("state.soup"))?;
            if self.every > 0 && r.epoch % self.every == 0 {
                save_checkpoint(&st.current, &self.dir.join(format!("epoch-{:04}.soup", r.epoch)))?;
            }
            Ok::<_, Error>(())
        })();
        res.map_err(|e| {
            let msg = e.to_string();
            self.error = Some(e);
            soupsr_core::Error::Data(msg)
        })
    }

    fn on_abort(&mut self, e: &soupsr_core::Error, st: &TrainState) {
        let p = self.dir.join("abort-state.soup");
        log::error!("training aborted: {e}");
        match save_train_state(st, &p) {
            Ok(()) => log::error!("state before the failing step written to {}", p.display()),
            Err(err) => log::error!("could not write {}: {err}", p.display()),
        }
    }
}

fn train(config: &Path, overrides: &[String], resume: Option<&Path>, argv: &[String]) -> Result<(RunManifest, PathBuf)> {
    let f = load_train_file(config, overrides)?;
    let mut rm = RunManifest::new("train", argv);
    rm.input(config)?;
    rm.input(&f.dataset)?;
    let (dfile, data) = open_dataset(&f.dataset)?;
    for src in &dfile.files {
        rm.inputs.push(crate::run_manifest::InputFile { path: src.path.clone(), sha256: src.sha256.clone() });
    }
    create_dir(&f.output_dir)?;
    let extractor = match f.train.stage {
        TrainStage::PerceptualGan => Some(resolve_extractor(&f.train.perceptual)?),
        TrainStage::Mse => None,
    };
    let ex_ref = extractor.as_ref().map(|(e, _)| e);
    let started = Instant::now();
    let mut trainer = match (resume, f.train.stage) {
        (Some(p), _) => {
            rm.input(p)?;
            let st = load_train_state(p)?;
            if st.current.config != f.generator {
                log::warn!("generator settings come from the saved state, not the config");
            }
            Trainer::resume(&data, st, f.train.clone(), f.discriminator.clone(), ex_ref)?
        }
        (None, TrainStage::Mse) => Trainer::stage1(&data, Generator::init(&f.generator, f.train.seed)?, f.train.clone())?,
        (None, TrainStage::PerceptualGan) => {
            let Some(pre) = &f.pretrained else {
                return Err(Error::Usage("perceptual_gan training needs `pretrained`".into()));
            };
            rm.input(pre)?;
            let ckpt = load_checkpoint(pre)?;
            if ckpt.stage != Stage::MsePretrained {
                return Err(Error::Usage(format!("{} is not an mse_pretrained checkpoint", pre.display())));
            }
            Trainer::stage2(&data, ckpt, f.discriminator.clone(), ex_ref.unwrap(), f.train.clone())?
        }
    };
    if resume.is_none() {
        let log = f.output_dir.join("report.jsonl");
        if log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
    }
    let mut obs = FileObserver { dir: f.output_dir.clone(), every: f.checkpoint_every, error: None };
    if let Err(e) = trainer.run(&mut obs) {
        return Err(obs.error.take().unwrap_or(Error::Core(e)));
    }
    let (ckpt, mut rep) = trainer.finish();
    let final_path = f.output_dir.join("final.soup");
    save_checkpoint(&ckpt, &final_path)?;
    rep.wall_time_s = Some(started.elapsed().as_secs_f64());
    rep.final_checkpoint = Some(final_path.to_string_lossy().into_owned());
    let text = serde_json::to_string_pretty(&rep)?;
    report::write_text(&f.output_dir.join("report.json"), &(text + "\n"))?;
    rm.config = serde_json::to_value(&f)?;
    rm.seeds = json!({ "train_seed": f.train.seed, "dataset_seed": dfile.manifest.seed });
    rm.details = json!({
        "adam": f.train.adam,
        "extractor": match extractor.as_ref().map(|(_, s)| s) {
            Some(ExtractorSource::File(p)) => json!({ "file": p }),
            Some(ExtractorSource::Substitute { width_divisor, seed }) => json!({ "substitute": { "width_divisor": width_divisor, "seed": seed } }),
            None => Value::Null,
        },
        "epochs": rep.records.len(),
    });
    rm.outputs.push(final_path);
    Ok((rm, f.output_dir.join("run.json")))
}

fn evaluate(
    model: &DegradeArgs,
    scales: &[u32],
    ckpts: &[String],
    no_tricubic: bool,
    out_dir: &Path,
    inputs: &[PathBuf],
    argv: &[String],
) -> Result<(RunManifest, PathBuf)> {
    let mut rm = RunManifest::new("evaluate", argv);
    let mut models = Vec::new();
    for c in ckpts {
        let (name, path) = match c.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(c);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sr".into());
                (stem, p)
            }
        };
        rm.input(&path)?;
        models.push((name, load_checkpoint(&path)?));
    }
    let mut methods = Vec::new();
    if !no_tricubic {
        methods.push(Method::Tricubic);
    }
    for (name, ck) in &models {
        methods.push(Method::Sr { name, ckpt: ck });
    }
    if methods.is_empty() {
        return Err(Error::Usage("nothing to evaluate: pass --ckpt or drop --no-tricubic".into()));
    }
    let mut vols = Vec::new();
    for p in inputs {
        rm.input(p)?;
        vols.push(load_volume(p)?);
    }
    let specs: Vec<_> = scales.iter().map(|&s| model.spec(s)).collect();
    let records = evaluate_methods(&vols, &specs, &methods);
    for r in records.iter().filter(|r| !r.is_ok()) {
        log::warn!("{} / {} / s={}: {}", r.volume_id, r.method, r.scale, r.error.as_deref().unwrap_or(""));
    }
    let sig = significance(&records, &methods);
    create_dir(out_dir)?;
    let outs = [
        ("records.jsonl", report::jsonl(&records)?),
        ("summary.csv", report::summary_csv(&records)?),
        ("significance.jsonl", report::jsonl(&sig)?),
        ("plot.svg", report::plot_svg(&records, &sig)),
    ];
    for (name, text) in outs {
        let p = out_dir.join(name);
        report::write_text(&p, &text)?;
        rm.outputs.push(p);
    }
    rm.config = json!({ "specs": specs, "methods": methods.iter().map(Method::name).collect::<Vec<_>>(), "metrics": "whole-volume", "normalization": "per-volume min-max" });
    rm.seeds = json!({ "noise_seed": model.noise_seed });
    Ok((rm, out_dir.join("run.json")))
}

/// Every learned method against the first method, per scale and metric,
/// where enough paired volumes exist.
fn significance(records: &[MetricRecord], methods: &[Method<'_>]) -> Vec<soupsr_core::metrics::SignificanceResult> {
    let mut out = Vec::new();
    let Some(base) = methods.first().map(Method::name) else { return out };
    let mut scales: Vec<f64> = records.iter().map(|r| r.scale).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    for m in methods.iter().skip(1) {
        for &s in &scales {
            for metric in Metric::ALL {
                match paired_significance(records, metric, m.name(), base, s) {
                    Ok(r) => out.push(r),
                    Err(e) => log::debug!("no significance for {} vs {base} at s={s}: {e}", m.name()),
                }
            }
        }
    }
    out
}
