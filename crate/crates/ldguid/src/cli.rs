//! The `ldguid` command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime failure. A
//! runtime failure writes one JSON object `{"error": kind, "message": text}`
//! to stderr.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ldguid_core::backbones::{predict_mask, BackboneKind, InputMode};
use ldguid_core::evalkit::beta_sweep;
use ldguid_core::image::BitemporalSample;
use ldguid_core::metrics::{render_error_map, Confusion};
use ldguid_core::synth::{generate_synthetic, SynthConfig};
use ldguid_core::trainer::{self, DeMode, EpochRecord, TrainObserver};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, ArtifactKind, BackboneSpec, Checkpoint, CheckpointMeta, Provenance, RngState};
use crate::config::{self, Overrides, ResolvedConfig};
use crate::dataset::{dataset_hash, load_dataset, write_json, write_synthetic, Split};
use crate::error::{Error, Result};
use crate::raster::{write_mask_png, write_rgb_png};
use crate::report::{self, MetricsReport, SweepMeta};

#[derive(Debug, Parser)]
#[command(name = "ldguid", version, about = "Latent-difference guided change detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic change-detection set with a brightness nuisance.
    Synth(SynthArgs),
    /// Pretrain a difference-embedding module.
    Pretrain(PretrainArgs),
    /// Train a segmentation backbone, optionally guided by a pretrained DE.
    Train(TrainArgs),
    /// Evaluate one checkpoint per seed on the test split.
    Eval(EvalArgs),
    /// Pretrain one DE per β and record the final losses.
    SweepBeta(SweepArgs),
    /// Aggregate metrics reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Range of the post-image brightness shift, `LO,HI`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub nuisance: Option<(f64, f64)>,
}

/// Training flags shared by the training subcommands.
#[derive(Debug, Args)]
pub struct CommonTrain {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// TOML file with `[de]`, `[backbone]` and `[train]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonTrain,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: BackboneKind,
    /// Pretrained DE checkpoint; without it the plain backbone is trained.
    #[arg(long)]
    pub de: Option<PathBuf>,
    #[arg(long, value_parser = parse_de_mode, requires = "de")]
    pub de_mode: Option<DeMode>,
    #[arg(long, value_parser = parse_input_mode)]
    pub input_mode: Option<InputMode>,
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonTrain,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One checkpoint per seed of the same method.
    #[arg(long, num_args = 1.., required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for predicted masks and error maps.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Report of the method to test against.
    #[arg(long)]
    pub baseline_report: Option<PathBuf>,
    /// Name recorded in the report; derived from the checkpoint by default.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.5,5.0", allow_hyphen_values = true)]
    pub betas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonTrain,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub table: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if !(lo <= hi) {
        return Err(format!("{lo} exceeds {hi}"));
    }
    Ok((lo, hi))
}

fn parse_backbone(s: &str) -> std::result::Result<BackboneKind, String> {
    match s {
        "unet" => Ok(BackboneKind::Unet),
        "bit" => Ok(BackboneKind::Bit),
        _ => Err(format!("unknown backbone {s}; expected unet or bit")),
    }
}

fn parse_de_mode(s: &str) -> std::result::Result<DeMode, String> {
    match s {
        "frozen" => Ok(DeMode::Frozen),
        "finetune" => Ok(DeMode::Finetune),
        _ => Err(format!("unknown DE mode {s}; expected frozen or finetune")),
    }
}

fn parse_input_mode(s: &str) -> std::result::Result<InputMode, String> {
    match s {
        "post_only" => Ok(InputMode::PostOnly),
        "full_concat" => Ok(InputMode::FullConcat),
        _ => Err(format!("unknown input mode {s}; expected post_only or full_concat")),
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ldguid_core::Error> for Failure {
    fn from(e: ldguid_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    let result = panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli.command, out)));
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(Failure::Usage(msg))) => {
            let _ = writeln!(err, "error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Ok(Err(Failure::Runtime(e))) => {
            let _ = writeln!(err, "{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            2
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal error".into());
            let _ = writeln!(err, "{}", serde_json::json!({"error": "internal", "message": msg}));
            2
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Pretrain(a) => pretrain(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::SweepBeta(a) => sweep(a, out),
        Command::Report(a) => report_cmd(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) {
    let _ = writeln!(out, "{text}");
}

fn echo<T: Serialize>(out: &mut dyn Write, value: &T) {
    say(out, "# resolved config");
    say(out, toml::to_string(value).expect("config serializes to TOML"));
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Outcome {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        image_size: a.size,
        n_samples: a.n,
        channels: a.channels,
        nuisance_brightness_range: a.nuisance.unwrap_or(defaults.nuisance_brightness_range),
        seed: a.seed,
        ..defaults
    };
    cfg.validate()?;
    echo(out, &cfg);
    let samples = generate_synthetic(&cfg)?;
    write_synthetic(&a.out, &samples)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    say(out, format_args!("wrote {} samples to {}", samples.len(), a.out.display()));
    Ok(())
}

fn common_overrides(c: &CommonTrain) -> Overrides {
    Overrides { epochs: c.epochs, seed: c.seed, learning_rate: c.lr, batch_size: c.batch_size, ..Overrides::default() }
}

/// Defaults with the channel count and image size taken from `data`.
fn data_defaults(data: &[BitemporalSample]) -> ResolvedConfig {
    let mut c = ResolvedConfig::default();
    if let Some(s) = data.first() {
        let (h, _, ch) = s.pre.dims();
        c.de.in_channels = ch;
        c.de.image_size = h;
        c.backbone.in_channels = ch;
    }
    c
}

fn provenance(data: &Path, samples: &[BitemporalSample], split: Split, epoch: usize) -> Provenance {
    Provenance { dataset: data.display().to_string(), dataset_hash: dataset_hash(samples), split: split.to_string(), epoch }
}

/// Prints one line per epoch.
struct Progress<'a> {
    out: &'a mut dyn Write,
}

impl TrainObserver for Progress<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) {
        let mut line = format!("epoch {:>4}", r.epoch + 1);
        for (name, v) in [
            ("rec", r.reconstruction),
            ("adv", r.adversary),
            ("de", r.de_loss),
            ("seg", r.segmentation),
            ("total", r.total),
            ("val_iou", r.val_iou),
            ("val_f1", r.val_f1),
        ] {
            if let Some(v) = v {
                line += &format!("  {name} {v:.6e}");
            }
        }
        say(self.out, line);
    }
}

fn pretrain(a: PretrainArgs, out: &mut dyn Write) -> Outcome {
    let data = load_dataset(&a.data, Split::Train)?;
    let flags = Overrides { beta: a.beta, ..common_overrides(&a.common) };
    let cfg = config::resolve(&data_defaults(&data), a.common.config.as_deref(), &flags)?;
    echo(out, &cfg);
    let outcome = trainer::pretrain_de(&data, &cfg.de, &cfg.train, &mut Progress { out })?;
    let meta = CheckpointMeta {
        kind: ArtifactKind::De,
        de_arch: Some(cfg.de.clone()),
        backbone: None,
        train: cfg.train.clone(),
        resolved_config: serde_json::to_value(&cfg).expect("config serializes"),
        rng: RngState { seed: cfg.train.seed, epochs_completed: cfg.train.epochs },
        provenance: provenance(&a.data, &data, Split::Train, cfg.train.epochs),
        optimizer_steps: Default::default(),
        history: outcome.history,
        tensor_count: 0,
    };
    let mut ckpt = Checkpoint::new(meta);
    ckpt.insert_de(&outcome.de);
    ckpt.insert_adam("de.encoder", &outcome.optim.encoder);
    ckpt.insert_adam("de.decoder", &outcome.optim.decoder);
    ckpt.insert_adam("de.adversary", &outcome.optim.adversary);
    save_checkpoint(&ckpt, &a.out)?;
    say(out, format_args!("saved {}", a.out.display()));
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    // The DE is read first so a bad path is reported before anything else.
    let de_ckpt = a.de.as_deref().map(load_checkpoint).transpose()?;
    let de = match &de_ckpt {
        Some(c) => Some(c.de_params()?.ok_or_else(|| Error::Invalid(format!("{} holds no DE module", a.de.as_ref().unwrap().display())))?),
        None => None,
    };
    let (Some(data_dir), Some(out_path)) = (a.data.as_deref(), a.out.as_deref()) else {
        return Err(Failure::Usage("train requires --data DIR and --out CKPT".into()));
    };
    let train_set = load_dataset(data_dir, Split::Train)?;
    let val_set = load_dataset(data_dir, Split::Val)?;
    let flags = Overrides {
        lambda: a.lambda,
        k: a.k,
        de_mode: a.de_mode,
        input_mode: a.input_mode,
        ..common_overrides(&a.common)
    };
    let mut cfg = config::resolve(&data_defaults(&train_set), a.common.config.as_deref(), &flags)?;
    cfg.backbone.z_channels = de.as_ref().map_or(0, |d| d.arch.c_z);
    if let Some(d) = &de {
        cfg.de = d.arch.clone();
    }
    echo(out, &cfg);
    let o = trainer::train_segmenter(&train_set, &val_set, a.backbone, &cfg.backbone, de.as_ref(), &cfg.train, &mut Progress { out })?;
    let meta = CheckpointMeta {
        kind: ArtifactKind::Segmenter,
        de_arch: o.de.as_ref().map(|d| d.arch.clone()),
        backbone: Some(BackboneSpec { kind: a.backbone, arch: o.backbone.arch.clone() }),
        train: cfg.train.clone(),
        resolved_config: serde_json::json!({
            "config": cfg,
            "backbone_kind": a.backbone,
            "de_checkpoint": a.de.as_ref().map(|p| p.display().to_string()),
            "de_provenance": de_ckpt.as_ref().map(|c| &c.meta.provenance),
            "de_resolved_config": de_ckpt.as_ref().map(|c| &c.meta.resolved_config),
        }),
        rng: RngState { seed: cfg.train.seed, epochs_completed: cfg.train.epochs },
        provenance: provenance(data_dir, &train_set, Split::Train, cfg.train.epochs),
        optimizer_steps: Default::default(),
        history: o.history,
        tensor_count: 0,
    };
    let mut ckpt = Checkpoint::new(meta);
    ckpt.insert_set("backbone", &o.backbone.params);
    ckpt.insert_adam("backbone", &o.optim);
    if let Some(d) = &o.de {
        ckpt.insert_de(d);
    }
    if let Some(opt) = &o.de_optim {
        ckpt.insert_adam("de.encoder", &opt.encoder);
        ckpt.insert_adam("de.decoder", &opt.decoder);
        ckpt.insert_adam("de.adversary", &opt.adversary);
    }
    save_checkpoint(&ckpt, out_path)?;
    say(out, format_args!("{} main steps, {} DE cycles; saved {}", o.main_steps, o.de_cycles, out_path.display()));
    Ok(())
}

fn method_name(spec: &BackboneSpec, guided: bool) -> String {
    let kind = match spec.kind {
        BackboneKind::Unet => "unet",
        BackboneKind::Bit => "bit",
    };
    match (guided, spec.kind, spec.arch.input_mode) {
        (true, _, _) => format!("ldguid-{kind}"),
        (false, BackboneKind::Unet, InputMode::FullConcat) => "unet-full_concat".into(),
        (false, BackboneKind::Unet, InputMode::PostOnly) => "unet-post_only".into(),
        (false, BackboneKind::Bit, _) => "bit".into(),
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    let test = load_dataset(&a.data, a.split)?;
    echo(
        out,
        &serde_json::json!({
            "ckpt": a.ckpt.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "data": a.data.display().to_string(),
            "split": a.split.to_string(),
        }),
    );
    let mut seeds = Vec::new();
    let mut confusion = Vec::new();
    let mut provenance = Vec::new();
    let mut methods = BTreeSet::new();
    let mut maps = Vec::new();
    for path in &a.ckpt {
        let ckpt = load_checkpoint(path)?;
        let bb = ckpt.backbone_params()?.ok_or_else(|| Error::Invalid(format!("{} holds no segmentation backbone", path.display())))?;
        let de = ckpt.de_params()?;
        let spec = ckpt.meta.backbone.clone().expect("backbone_params checked it");
        methods.insert(method_name(&spec, de.is_some()));
        let seed = ckpt.meta.train.seed;
        let mut total = Confusion::default();
        for s in &test {
            let mask = predict_mask(&trainer::predict(&bb, de.as_ref(), s)?);
            total.merge(&Confusion::from_masks(&mask, &s.mask)?);
            if let Some(dir) = &a.maps {
                let dir = dir.join(format!("seed{seed}"));
                fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
                let map = render_error_map(&mask, &s.mask)?;
                let pred_path = dir.join(format!("{}_pred.png", s.id));
                let err_path = dir.join(format!("{}_error.png", s.id));
                write_mask_png(&pred_path, &mask)?;
                write_rgb_png(&err_path, map.height, map.width, map.rgb)?;
                maps.push(err_path.display().to_string());
            }
        }
        say(out, format_args!("{}: seed {seed} IoU {:.4} F1 {:.4}", path.display(), total.iou(), total.f1()));
        seeds.push(seed);
        confusion.push(total);
        provenance.push(serde_json::json!({
            "checkpoint": path.display().to_string(),
            "resolved_config": ckpt.meta.resolved_config,
            "seed": seed,
            "train_provenance": ckpt.meta.provenance,
        }));
    }
    let method = match a.method {
        Some(m) => m,
        None if methods.len() == 1 => methods.into_iter().next().expect("one method"),
        None => return Err(Error::Invalid(format!("checkpoints mix methods {methods:?}; pass --method")).into()),
    };
    let mut r = MetricsReport::new(method, a.data.display().to_string(), dataset_hash(&test), a.split.to_string(), seeds, confusion);
    r.provenance = provenance;
    r.error_maps = maps;
    if let Some(bp) = &a.baseline_report {
        r.compare_to(&MetricsReport::load(bp)?)?;
    }
    r.save(&a.report)?;
    say(out, report::table_text(std::slice::from_ref(&r)));
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Outcome {
    if a.betas.is_empty() {
        return Err(Failure::Usage("--betas needs at least one value".into()));
    }
    let data = load_dataset(&a.data, Split::Train)?;
    let cfg = config::resolve(&data_defaults(&data), a.common.config.as_deref(), &common_overrides(&a.common))?;
    echo(out, &serde_json::json!({ "betas": a.betas, "config": cfg }));
    let rows = beta_sweep(&data, &cfg.de, &a.betas, &cfg.train)?;
    let meta = SweepMeta {
        dataset: a.data.display().to_string(),
        dataset_hash: dataset_hash(&data),
        seed: cfg.train.seed,
        resolved_config: serde_json::to_value(&cfg).expect("config serializes"),
        full_scale_reference: report::FULL_SCALE_SWEEP_REFERENCE.to_vec(),
    };
    report::write_sweep(&a.out, &rows, &meta)?;
    let _ = write!(out, "{}", report::sweep_csv(&rows));
    Ok(())
}

fn report_cmd(a: ReportArgs, out: &mut dyn Write) -> Outcome {
    let reports = a.inputs.iter().map(|p| MetricsReport::load(p)).collect::<Result<Vec<_>>>()?;
    if let Some(dir) = a.table.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(&a.table, report::table_csv(&reports)).map_err(Error::io(&a.table))?;
    let _ = write!(out, "{}", report::table_text(&reports));
    Ok(())
}
