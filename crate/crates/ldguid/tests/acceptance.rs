//! The ten acceptance criteria, one PASS/FAIL line each. Every criterion runs
//! even when an earlier one fails; the process exits non-zero if any failed.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ldguid::checkpoint::{load_checkpoint, save_checkpoint, ArtifactKind, Checkpoint, CheckpointMeta, Provenance, RngState};
use ldguid::stats::welch_one_sided;
use ldguid_core::backbones::{BackboneArchConfig, BackboneKind, InputMode};
use ldguid_core::de::{init_de, DeArchConfig, DeParams};
use ldguid_core::evalkit::{beta_sweep, nuisance_probe};
use ldguid_core::image::{burn_ratio, compute_nbr, BitemporalSample, ChangeMask, ImagePlane};
use ldguid_core::metrics::{render_error_map, Confusion};
use ldguid_core::objectives::{adversary_loss, de_loss, reconstruction_loss, total_loss};
use ldguid_core::params::ParamSet;
use ldguid_core::synth::{generate_synthetic, SynthConfig, SyntheticSample};
use ldguid_core::trainer::{encode_all, evaluate, pretrain_de, train_segmenter, DeMode, NoObserver, StepKind, TrainConfig, TrainObserver};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass/fail plus the measured numbers.
type Verdict = (bool, String);

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Verdict); 10] = [
        ("gradient correctness", Duration::from_secs(120), gradients),
        ("loss identities", Duration::from_secs(30), identities),
        ("metric oracle", Duration::from_secs(30), metric_oracle),
        ("beta-sweep shape", Duration::from_secs(15 * 60), sweep_shape),
        ("disentanglement", Duration::from_secs(15 * 60), disentanglement),
        ("downstream gain", Duration::from_secs(30 * 60), downstream_gain),
        ("schedule and freezing", Duration::from_secs(5 * 60), schedule),
        ("determinism and persistence", Duration::from_secs(5 * 60), determinism),
        ("NBR", Duration::from_secs(5), nbr),
        ("end-to-end pipeline", Duration::from_secs(10 * 60), pipeline),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(v) => v,
            Err(p) => (false, format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        let took = t.elapsed();
        let in_time = took <= budget;
        let pass = ok && in_time;
        failed += usize::from(!pass);
        let late = if in_time { String::new() } else { format!(", over the {}s budget", budget.as_secs()) };
        println!("criterion {n:>2} {name}: {} ({detail}; {:.1}s{late})", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn samples(cfg: &SynthConfig) -> (Vec<BitemporalSample>, Vec<f64>) {
    let syn: Vec<SyntheticSample> = generate_synthetic(cfg).unwrap();
    (syn.iter().map(|s| s.sample.clone()).collect(), syn.iter().map(|s| s.nuisance).collect())
}

/// Desk budget for DE pretraining on 32×32 synthetic images.
fn desk_de() -> (DeArchConfig, TrainConfig) {
    let arch = DeArchConfig { in_channels: 3, c_z: 8, base_width: 8, image_size: 32 };
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 60, batch_size: 8, adversary_steps_per_main_step: 3, ..TrainConfig::default() };
    (arch, cfg)
}

fn gradients() -> Verdict {
    use gradcheck::*;
    let mut worst: Vec<(String, f64)> = de_loss_errors().into_iter().map(|(b, e)| (format!("de_loss β={b}"), e)).collect();
    worst.push(("total via unet".into(), total_loss_error(BackboneKind::Unet)));
    worst.push(("total via bit".into(), total_loss_error(BackboneKind::Bit)));
    let (seg, gap) = segmentation_loss_error();
    worst.push(("segmentation".into(), seg));
    let ok = worst.iter().all(|(_, e)| *e < TOL) && gap < 1e-5;
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    (ok, format!("{detail}; tolerance {TOL:e}, {PROBES} probes, f64"))
}

fn random_plane(rng: &mut ChaCha8Rng) -> ImagePlane {
    ImagePlane::new(4, 4, 2, (0..32).map(|_| rng.gen_range(-2.0f32..2.0)).collect(), Vec::new()).unwrap()
}

fn identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 10_000;
    let (mut beta0, mut lambda0, mut affine, mut f1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let (a, b, post) = (random_plane(&mut rng), random_plane(&mut rng), random_plane(&mut rng));
        let rec = reconstruction_loss(&a, &post).unwrap();
        let adv = adversary_loss(&b, &post).unwrap();
        beta0 = beta0.max((de_loss(&a, &b, &post, 0.0).unwrap() - rec).abs());
        let beta = rng.gen_range(0.0..10.0);
        // Affine in β: the value at β is fixed by the values at 0 and 1.
        let (l0, l1) = (de_loss(&a, &b, &post, 0.0).unwrap(), de_loss(&a, &b, &post, 1.0).unwrap());
        let lb = de_loss(&a, &b, &post, beta).unwrap();
        affine = affine.max((lb - (l0 + beta * (l1 - l0))).abs()).max((lb - (rec - beta * adv)).abs());

        let (seg, de) = (rng.gen_range(0.0..10.0), rng.gen_range(-10.0..10.0));
        lambda0 = lambda0.max((total_loss(seg, de, 0.0) - seg).abs());

        let c = Confusion { tp: rng.gen_range(0..300), fp: rng.gen_range(0..300), fn_: rng.gen_range(0..300), tn: rng.gen_range(0..300) };
        let i = c.iou();
        f1 = f1.max((c.f1() - 2.0 * i / (1.0 + i)).abs());
    }
    let worst = beta0.max(lambda0).max(affine).max(f1);
    (worst <= 1e-12, format!("{n} cases each; max deviation β=0 {beta0:.1e}, λ=0 {lambda0:.1e}, affine {affine:.1e}, F1 {f1:.1e}"))
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        // Varying densities reach the empty and full corners.
        let (pp, pt) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let pred: Vec<u8> = (0..256).map(|_| u8::from(rng.gen_bool(pp))).collect();
        let truth: Vec<u8> = (0..256).map(|_| u8::from(rng.gen_bool(pt))).collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &t) in pred.iter().zip(&truth) {
            match (p, t) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let union = tp + fp + fn_;
        let want_iou = if union == 0 { 1.0 } else { tp as f64 / union as f64 };
        let want_f1 = if union == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let (pm, tm) = (ChangeMask::new(16, 16, pred.clone()).unwrap(), ChangeMask::new(16, 16, truth.clone()).unwrap());
        let c = Confusion::from_masks(&pm, &tm).unwrap();
        if (c.tp, c.fp, c.fn_, c.tn) != (tp, fp, fn_, tn) || c.iou() != want_iou || c.f1() != want_f1 {
            mismatches.push(format!("case {case}: counts or scores"));
        }
        let map = render_error_map(&pm, &tm).unwrap();
        let mut colored = [0u64; 4];
        for y in 0..16 {
            for x in 0..16 {
                let (p, t) = (pred[16 * y + x], truth[16 * y + x]);
                let (slot, rgb) = match (p, t) {
                    (1, 1) => (0, [255, 255, 255]),
                    (0, 1) => (1, [255, 0, 0]),
                    (1, 0) => (2, [0, 255, 0]),
                    _ => (3, [0, 0, 0]),
                };
                colored[slot] += 1;
                if map.pixel(y, x) != rgb {
                    mismatches.push(format!("case {case}: cell ({y}, {x}) colored {:?}", map.pixel(y, x)));
                }
            }
        }
        if colored != [tp, fn_, fp, tn] || colored.iter().sum::<u64>() != 256 {
            mismatches.push(format!("case {case}: error map does not partition the cells"));
        }
    }
    (mismatches.is_empty(), format!("1000 pairs of 16×16; {} mismatches{}", mismatches.len(), mismatches.first().map_or(String::new(), |m| format!(", first {m}"))))
}

fn sweep_shape() -> Verdict {
    let (data, _) = samples(&SynthConfig::default());
    let (arch, cfg) = desk_de();
    let rows = beta_sweep(&data, &arch, &[0.1, 0.5, 1.5, 5.0], &cfg).unwrap();
    let rec: Vec<f64> = rows.iter().map(|r| r.rec_loss).collect();
    let ratio = rec[3] / rec[1];
    let stable = &rec[..3];
    let spread = stable.iter().cloned().fold(f64::MIN, f64::max) / stable.iter().cloned().fold(f64::MAX, f64::min);
    let shown = rows.iter().map(|r| format!("β={} rec {:.2e}", r.beta, r.rec_loss)).collect::<Vec<_>>().join(", ");
    (ratio >= 5.0 && spread <= 2.0, format!("{shown}; rec(5)/rec(0.5) {ratio:.2} (≥ 5), spread over 0.1..1.5 {spread:.2} (≤ 2)"))
}

fn disentanglement() -> Verdict {
    let (arch, cfg) = desk_de();
    let mut ratios = Vec::new();
    for seed in 0..3u64 {
        let (data, labels) = samples(&SynthConfig { n_samples: 128, seed: 100 + seed, ..SynthConfig::default() });
        let probe = |beta: f64| {
            let de = pretrain_de(&data, &arch, &TrainConfig { beta, seed, ..cfg.clone() }, &mut NoObserver).unwrap().de;
            nuisance_probe(&encode_all(&de, &data).unwrap(), &labels, seed).unwrap()
        };
        ratios.push(probe(0.5) / probe(0.0));
    }
    let mean = ratios.iter().sum::<f64>() / 3.0;
    let ok = ratios.iter().all(|r| *r >= 1.2) && mean >= 1.5;
    (ok, format!("probe error ratio β=0.5 / β=0 per seed {ratios:.2?} (each ≥ 1.2), mean {mean:.2} (≥ 1.5)"))
}

fn downstream_gain() -> Verdict {
    let n = 128;
    let (data, _) = samples(&SynthConfig { nuisance_brightness_range: (-1.0, 1.0), n_samples: n, seed: 7, ..SynthConfig::default() });
    let (train, rest) = data.split_at(n * 3 / 5);
    let (val, test) = rest.split_at(n / 5);
    let (de_arch, de_cfg) = desk_de();
    let unet = BackboneArchConfig { base_width: 8, depth: 3, ..BackboneArchConfig::default() };
    let (mut guided, mut plain) = (Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let de = pretrain_de(train, &de_arch, &TrainConfig { seed, ..de_cfg.clone() }, &mut NoObserver).unwrap().de;
        let seg = TrainConfig { seed, epochs: 60, learning_rate: 3e-3, batch_size: 4, de_mode: DeMode::Frozen, ..TrainConfig::default() };
        let g = train_segmenter(train, val, BackboneKind::Unet, &BackboneArchConfig { input_mode: InputMode::PostOnly, ..unet.clone() }, Some(&de), &seg, &mut NoObserver).unwrap();
        guided.push(evaluate(&g.backbone, Some(&de), test).unwrap().iou());
        let b = train_segmenter(train, val, BackboneKind::Unet, &BackboneArchConfig { input_mode: InputMode::FullConcat, ..unet.clone() }, None, &seg, &mut NoObserver).unwrap();
        plain.push(evaluate(&b.backbone, None, test).unwrap().iou());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let p = welch_one_sided(&guided, &plain).unwrap();
    let ok = mean(&guided) > mean(&plain) && p < 0.05;
    (ok, format!("test IoU guided {guided:.3?} mean {:.3}, full_concat {plain:.3?} mean {:.3}, one-sided p {p:.3} (< 0.05)", mean(&guided), mean(&plain)))
}

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

fn de_bits(d: &DeParams) -> [Vec<u32>; 3] {
    [bits(&d.encoder), bits(&d.decoder), bits(&d.adversary)]
}

#[derive(Default)]
struct Audit {
    cycles: usize,
    violations: usize,
}

impl TrainObserver for Audit {
    fn wants_snapshots(&self) -> bool {
        true
    }

    fn on_de_step(&mut self, kind: StepKind, before: &DeParams, after: &DeParams) {
        let [e0, d0, a0] = de_bits(before);
        let [e1, d1, a1] = de_bits(after);
        let (enc, dec, adv) = (e0 == e1, d0 == d1, a0 == a1);
        let ok = match kind {
            StepKind::Adversary => enc && dec && !adv,
            StepKind::EncoderDecoder => adv && !enc && !dec,
            StepKind::Main => enc && dec && adv,
        };
        self.violations += usize::from(!ok);
    }

    fn on_de_cycle(&mut self, _step: usize) {
        self.cycles += 1;
    }
}

fn small_data(n: usize, seed: u64) -> Vec<BitemporalSample> {
    samples(&SynthConfig { image_size: 16, n_samples: n, shape_side_range: (3, 6), seed, ..SynthConfig::default() }).0
}

fn small_de() -> DeArchConfig {
    DeArchConfig { in_channels: 3, c_z: 2, base_width: 4, image_size: 16 }
}

fn small_unet() -> BackboneArchConfig {
    BackboneArchConfig { base_width: 4, depth: 2, ..BackboneArchConfig::default() }
}

fn schedule() -> Verdict {
    let train = small_data(20, 1);
    let de = init_de(&small_de(), 2).unwrap();
    let frozen_cfg = TrainConfig { epochs: 2, batch_size: 4, learning_rate: 1e-3, ..TrainConfig::default() };
    let mut frozen_audit = Audit::default();
    let frozen = train_segmenter(&train, &[], BackboneKind::Unet, &small_unet(), Some(&de), &frozen_cfg, &mut frozen_audit).unwrap();
    let frozen_ok = de_bits(frozen.de.as_ref().unwrap()) == de_bits(&de) && frozen.de_cycles == 0;

    // 20 samples at batch 1 for 5 epochs: 100 main steps.
    let ft_cfg = TrainConfig { epochs: 5, batch_size: 1, de_update_period_k: 5, de_mode: DeMode::Finetune, learning_rate: 1e-3, ..TrainConfig::default() };
    let mut ft_audit = Audit::default();
    let ft = train_segmenter(&train, &[], BackboneKind::Unet, &small_unet(), Some(&de), &ft_cfg, &mut ft_audit).unwrap();

    let mut pre_audit = Audit::default();
    let pre_cfg = TrainConfig { epochs: 2, batch_size: 4, adversary_steps_per_main_step: 2, learning_rate: 1e-3, ..TrainConfig::default() };
    pretrain_de(&train[..8], &small_de(), &pre_cfg, &mut pre_audit).unwrap();

    let violations = frozen_audit.violations + ft_audit.violations + pre_audit.violations;
    let ok = frozen_ok && ft.main_steps == 100 && ft.de_cycles == 20 && ft_audit.cycles == 20 && violations == 0;
    (ok, format!("frozen DE bit-identical {frozen_ok}; finetune k=5: {} main steps, {} DE cycles; partition violations {violations}", ft.main_steps, ft.de_cycles))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the `ldguid` binary and panics with its stderr on a non-zero exit.
fn cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ldguid")).args(args).output().unwrap();
    assert!(out.status.success(), "ldguid {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Verdict {
    let data = small_data(12, 8);
    let cfg = TrainConfig { epochs: 3, batch_size: 3, learning_rate: 1e-3, seed: 11, ..TrainConfig::default() };
    let a = pretrain_de(&data, &small_de(), &cfg, &mut NoObserver).unwrap();
    let b = pretrain_de(&data, &small_de(), &cfg, &mut NoObserver).unwrap();
    let s1 = train_segmenter(&data, &[], BackboneKind::Unet, &small_unet(), Some(&a.de), &cfg, &mut NoObserver).unwrap();
    let s2 = train_segmenter(&data, &[], BackboneKind::Unet, &small_unet(), Some(&a.de), &cfg, &mut NoObserver).unwrap();
    let mut gap = 0.0f64;
    for (x, y) in a.history.records.iter().zip(&b.history.records).chain(s1.history.records.iter().zip(&s2.history.records)) {
        for (u, v) in [(x.reconstruction, y.reconstruction), (x.adversary, y.adversary), (x.segmentation, y.segmentation), (x.total, y.total)] {
            match (u, v) {
                (Some(u), Some(v)) => gap = gap.max((u - v).abs()),
                (None, None) => {}
                _ => gap = f64::INFINITY,
            }
        }
    }
    let trajectories = gap <= 1e-7 && a.history.records.len() == 3 && s1.history.records.len() == 3;

    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        kind: ArtifactKind::De,
        de_arch: Some(small_de()),
        backbone: None,
        train: cfg.clone(),
        resolved_config: serde_json::json!({}),
        rng: RngState { seed: cfg.seed, epochs_completed: cfg.epochs },
        provenance: Provenance::default(),
        optimizer_steps: Default::default(),
        history: a.history.clone(),
        tensor_count: 0,
    };
    let mut ckpt = Checkpoint::new(meta);
    ckpt.insert_de(&a.de);
    ckpt.insert_set("backbone", &s1.backbone.params);
    let path = dir.path().join("run.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let round_trip = de_bits(&back.de_params().unwrap().unwrap()) == de_bits(&a.de) && bits(&back.param_set("backbone")) == bits(&s1.backbone.params) && back == ckpt;

    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    for p in [&x, &y] {
        cli(&["synth", "--out", s(p), "--seed", "3", "--n", "12", "--size", "16"]);
    }
    let (tx, ty) = (tree(&x), tree(&y));
    let synth_bytes = tx == ty && tx.len() == 3 * 12 + 3;
    (trajectories && round_trip && synth_bytes, format!("max trajectory gap {gap:e} (≤ 1e-7); checkpoint bit-exact {round_trip}; CLI synth byte-identical over {} files {synth_bytes}", tx.len()))
}

fn nbr() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let (mut worst, mut out_of_range) = (0.0f64, 0);
    for _ in 0..10_000 {
        let (nir, swir): (f64, f64) = (rng.gen_range(0.0..1e4), rng.gen_range(0.0..1e4));
        let r = burn_ratio(nir, swir);
        worst = worst.max((r - (nir - swir) / (nir + swir)).abs());
        out_of_range += usize::from(!(-1.0..=1.0).contains(&r));
    }
    let zero = burn_ratio(0.0, 0.0) == 0.0;
    let img = ImagePlane::new(2, 2, 2, vec![0.0, 0.2, 0.9, 0.5, 0.0, 0.6, 0.1, 0.5], Vec::new()).unwrap();
    let map = compute_nbr(&img, 0, 1).unwrap();
    let want = [0.0, (0.2 - 0.6) / 0.8, (0.9 - 0.1) / 1.0, 0.0];
    let image_ok = map.dims() == (2, 2, 1) && map.data().iter().zip(want).all(|(g, w)| (*g as f64 - w).abs() < 1e-6);
    (worst <= 1e-12 && out_of_range == 0 && zero && image_ok, format!("10000 band pairs: max error {worst:.1e}, {out_of_range} out of [-1, 1]; 0/0 → 0 {zero}; image {image_ok}"))
}

fn pipeline() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let (data, cfg) = (p("data"), p("small.toml"));
    fs::write(&cfg, "[de]\nbase_width = 8\nc_z = 8\n\n[backbone]\nbase_width = 8\ndepth = 3\n").unwrap();
    cli(&["synth", "--out", s(&data), "--seed", "1", "--n", "64", "--size", "32"]);
    cli(&["pretrain", "--data", s(&data), "--out", s(&p("de.ckpt")), "--config", s(&cfg), "--epochs", "20", "--lr", "1e-3"]);
    let mut guided = vec![];
    let mut plain = vec![];
    for seed in ["0", "1"] {
        let g = p(&format!("ldguid{seed}.ckpt"));
        let b = p(&format!("base{seed}.ckpt"));
        let common = ["--data", s(&data), "--config", s(&cfg), "--epochs", "30", "--lr", "3e-3", "--seed", seed];
        cli(&[&["train", "--backbone", "unet", "--de", s(&p("de.ckpt")), "--de-mode", "frozen", "--out", s(&g)][..], &common].concat());
        cli(&[&["train", "--backbone", "unet", "--input-mode", "full_concat", "--out", s(&b)][..], &common].concat());
        guided.push(g);
        plain.push(b);
    }
    let eval = |ckpts: &[PathBuf], report: &Path, extra: &[&str]| {
        let mut args = vec!["eval", "--data", s(&data), "--report", s(report), "--ckpt"];
        args.extend(ckpts.iter().map(|c| s(c)));
        args.extend(extra);
        cli(&args);
    };
    eval(&plain, &p("base.json"), &[]);
    eval(&guided, &p("ldguid.json"), &["--baseline-report", s(&p("base.json")), "--maps", s(&p("maps"))]);
    cli(&["report", "--inputs", s(&p("base.json")), s(&p("ldguid.json")), "--table", s(&p("table.csv"))]);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("ldguid.json")).unwrap()).unwrap();
    let unit = |k: &str| report[k].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v));
    let spread = |k: &str| report[k].as_f64().is_some_and(|v| v >= 0.0);
    let fields = unit("mean_iou") && unit("mean_f1") && spread("std_iou") && spread("std_f1") && unit("p_value");
    let shape = report["method"] == "ldguid-unet" && report["baseline"] == "unet-full_concat" && report["per_seed"]["iou"].as_array().map(Vec::len) == Some(2);
    let table = fs::read_to_string(p("table.csv")).unwrap();
    let rows = table.lines().count() == 3;
    let detail = format!(
        "ldguid IoU {:.3} ± {:.3}, F1 {:.3} ± {:.3}, p_value {}; fields {fields}, shape {shape}, table rows {rows}",
        report["mean_iou"].as_f64().unwrap_or(f64::NAN),
        report["std_iou"].as_f64().unwrap_or(f64::NAN),
        report["mean_f1"].as_f64().unwrap_or(f64::NAN),
        report["std_f1"].as_f64().unwrap_or(f64::NAN),
        report["p_value"],
    );
    (fields && shape && rows, detail)
}
