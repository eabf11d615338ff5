//! DE pretraining and segmentation training.
//!
//! Every batch builds one graph per sample; gradients are averaged over the
//! batch before a single Adam step. Sample order is a ChaCha8 shuffle per
//! epoch, so identical `(config, data, seed)` reproduce identical histories.
//!
//! Pretraining alternates, per batch:
//! 1. `adversary_steps` updates of ψ on `L(A(Z), X̃)` with the encoder frozen;
//! 2. one update of the encoder and conditional decoder on the bottleneck
//!    loss with ψ frozen.
//!
//! Segmentation training runs in one of two modes. *Frozen*: `Z` is computed
//! once per sample and only θ moves. *Finetune*: θ moves every main step on
//! the total loss; after every `k`-th main step the DE runs one cycle (the
//! adversary updates, then encoder and decoder descend the total loss whose
//! segmentation term reaches them through `Z`).

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{self, BackboneArchConfig, BackboneKind, BackboneParams, Prediction};
use crate::de::{self, DeParams, LatentDifference};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::BitemporalSample;
use crate::metrics::Confusion;
use crate::objectives::{de_loss_graph, total_loss_graph};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeMode {
    #[default]
    Frozen,
    Finetune,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub de_update_period_k: usize,
    pub de_mode: DeMode,
    pub adversary_steps_per_main_step: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 0.1,
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 8,
            de_update_period_k: 5,
            de_mode: DeMode::Frozen,
            adversary_steps_per_main_step: 1,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateConfig(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(alloc::format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.de_update_period_k == 0 {
            return bad(String::from("epochs, batch_size and de_update_period_k must be at least 1"));
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return bad(alloc::format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Epoch means; a field is `None` when the run does not produce it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reconstruction: Option<f64>,
    pub adversary: Option<f64>,
    pub de_loss: Option<f64>,
    pub segmentation: Option<f64>,
    pub total: Option<f64>,
    pub val_iou: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Which parameters a step updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Adversary,
    EncoderDecoder,
    Main,
}

/// Instrumentation hook. Snapshot callbacks only fire when
/// [`TrainObserver::wants_snapshots`] is true since they clone parameters.
pub trait TrainObserver {
    fn wants_snapshots(&self) -> bool {
        false
    }
    fn on_de_step(&mut self, _kind: StepKind, _before: &DeParams, _after: &DeParams) {}
    fn on_main_step(&mut self, _step: usize) {}
    fn on_de_cycle(&mut self, _main_step: usize) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Optimizer state for the three DE parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeOptim {
    pub encoder: Adam<f32>,
    pub decoder: Adam<f32>,
    pub adversary: Adam<f32>,
}

impl DeOptim {
    pub fn new(cfg: AdamConfig, de: &DeParams) -> Self {
        Self {
            encoder: Adam::new(cfg.clone(), &de.encoder),
            decoder: Adam::new(cfg.clone(), &de.decoder),
            adversary: Adam::new(cfg, &de.adversary),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub de: DeParams,
    pub optim: DeOptim,
    pub history: TrainHistory,
}

#[derive(Clone, Debug)]
pub struct SegmenterOutcome {
    pub backbone: BackboneParams,
    pub de: Option<DeParams>,
    pub optim: Adam<f32>,
    pub de_optim: Option<DeOptim>,
    pub history: TrainHistory,
    pub de_cycles: usize,
    pub main_steps: usize,
}

struct Order {
    rng: ChaCha8Rng,
    idx: Vec<usize>,
}

impl Order {
    fn new(n: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), idx: (0..n).collect() }
    }

    fn epoch(&mut self) -> &[usize] {
        self.idx.shuffle(&mut self.rng);
        &self.idx
    }
}

fn finite_or(v: f64, epoch: usize, batch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { epoch, batch })
    }
}

fn check_grads(set: &ParamSet<f32>) -> Result<()> {
    for (name, t) in set.iter() {
        if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { name: name.clone(), index: i });
        }
    }
    Ok(())
}

struct Accum {
    grads: ParamSet<f32>,
    n: usize,
}

impl Accum {
    fn new(like: &ParamSet<f32>) -> Self {
        Self { grads: like.zeros_like(), n: 0 }
    }

    fn add(&mut self, g: &ParamSet<f32>) {
        self.grads.add_assign(g);
        self.n += 1;
    }

    fn finish(mut self) -> Result<ParamSet<f32>> {
        self.grads.scale_assign(1.0 / self.n.max(1) as f32);
        check_grads(&self.grads)?;
        Ok(self.grads)
    }
}

/// Adversary update: ψ descends `L(A(Z), X̃)` with `Z` held constant.
fn adversary_step(de: &mut DeParams, opt: &mut Adam<f32>, batch: &[&BitemporalSample], latents: &[Tensor<f32>]) -> Result<f64> {
    let mut acc = Accum::new(&de.adversary);
    let mut total = 0.0;
    for (s, z) in batch.iter().zip(latents) {
        let mut g = Graph::new();
        let adv = de.adversary.bind(&mut g, true);
        let zv = g.input(z.clone());
        let post = g.input(s.post.to_tensor());
        let x_breve = de::decode_adversarial_graph(&mut g, &adv, zv);
        let loss = g.mse(x_breve, post);
        total += g.scalar(loss) as f64;
        let grads = g.backward(loss);
        acc.add(&de.adversary.collect_grads(&adv, &grads));
    }
    let grads = acc.finish()?;
    opt.step(&mut de.adversary, &grads);
    Ok(total / batch.len() as f64)
}

fn latents_of(de: &DeParams, batch: &[&BitemporalSample]) -> Vec<Tensor<f32>> {
    batch.iter().map(|s| de::encode_tensor(de, &s.pre.to_tensor(), &s.post.to_tensor())).collect()
}

struct DeTerms {
    loss: Var,
    rec: Var,
    adv: Var,
    z: Var,
}

fn de_terms(g: &mut Graph<f32>, enc: &Bound, dec: &Bound, adv: &Bound, s: &BitemporalSample, beta: f64) -> (DeTerms, Var, Var) {
    let pre = g.input(s.pre.to_tensor());
    let post = g.input(s.post.to_tensor());
    let z = de::encode_graph(g, enc, pre, post);
    let x_hat = de::decode_conditional_graph(g, dec, pre, z);
    let x_breve = de::decode_adversarial_graph(g, adv, z);
    let (loss, rec, adv) = de_loss_graph(g, x_hat, x_breve, post, beta);
    (DeTerms { loss, rec, adv, z }, pre, post)
}

fn observe_de<O: TrainObserver>(obs: &mut O, kind: StepKind, before: Option<DeParams>, after: &DeParams) {
    if let Some(b) = before {
        obs.on_de_step(kind, &b, after);
    }
}

fn snapshot<O: TrainObserver>(obs: &O, de: &DeParams) -> Option<DeParams> {
    obs.wants_snapshots().then(|| de.clone())
}

/// Pretrains a DE module on the bottleneck loss; see the module docs.
pub fn pretrain_de<O: TrainObserver>(
    dataset: &[BitemporalSample],
    arch: &de::DeArchConfig,
    config: &TrainConfig,
    observer: &mut O,
) -> Result<PretrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let mut de = de::init_de(arch, config.seed)?;
    for s in dataset {
        if s.pre.dims() != (arch.image_size, arch.image_size, arch.in_channels) {
            return Err(crate::error::shape_err("DE training sample", (arch.image_size, arch.image_size, arch.in_channels), s.pre.dims()));
        }
    }
    let mut optim = DeOptim::new(config.adam(), &de);
    let mut order = Order::new(dataset.len(), config.seed ^ 0x5eed_0de);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let (mut rec_sum, mut adv_sum, mut de_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
        let idx = order.epoch().to_vec();
        for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
            let batch: Vec<&BitemporalSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            for _ in 0..config.adversary_steps_per_main_step {
                let before = snapshot(observer, &de);
                let latents = latents_of(&de, &batch);
                finite_or(adversary_step(&mut de, &mut optim.adversary, &batch, &latents)?, epoch, b)?;
                observe_de(observer, StepKind::Adversary, before, &de);
            }
            let before = snapshot(observer, &de);
            let mut enc_acc = Accum::new(&de.encoder);
            let mut dec_acc = Accum::new(&de.decoder);
            for s in &batch {
                let mut g = Graph::new();
                let enc = de.encoder.bind(&mut g, true);
                let dec = de.decoder.bind(&mut g, true);
                let adv = de.adversary.bind(&mut g, false);
                let (t, _, _) = de_terms(&mut g, &enc, &dec, &adv, s, config.beta);
                let loss = finite_or(g.scalar(t.loss) as f64, epoch, b)?;
                rec_sum += g.scalar(t.rec) as f64;
                adv_sum += g.scalar(t.adv) as f64;
                de_sum += loss;
                n += 1;
                let grads = g.backward(t.loss);
                enc_acc.add(&de.encoder.collect_grads(&enc, &grads));
                dec_acc.add(&de.decoder.collect_grads(&dec, &grads));
            }
            optim.encoder.step(&mut de.encoder, &enc_acc.finish()?);
            optim.decoder.step(&mut de.decoder, &dec_acc.finish()?);
            observe_de(observer, StepKind::EncoderDecoder, before, &de);
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            reconstruction: Some(rec_sum / nf),
            adversary: Some(adv_sum / nf),
            de_loss: Some(de_sum / nf),
            ..EpochRecord::default()
        };
        observer.on_epoch(&record);
        history.records.push(record);
    }
    Ok(PretrainOutcome { de, optim, history })
}

/// Evaluation of trained DE parameters on held-out data: mean reconstruction
/// and adversary losses with the current weights.
pub fn evaluate_de(de: &DeParams, samples: &[BitemporalSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut rec, mut adv) = (0.0, 0.0);
    for s in samples {
        let z = de::encode(de, &s.pre, &s.post)?;
        rec += crate::objectives::reconstruction_loss(&de::decode_conditional(de, &s.pre, &z)?, &s.post)?;
        adv += crate::objectives::adversary_loss(&de::decode_adversarial(de, &z)?, &s.post)?;
    }
    let n = samples.len() as f64;
    Ok((rec / n, adv / n))
}

/// Trains a segmentation backbone, optionally guided by a pretrained DE.
///
/// The backbone's `z_channels` is taken from the DE (0 without one).
#[allow(clippy::too_many_arguments)]
pub fn train_segmenter<O: TrainObserver>(
    train: &[BitemporalSample],
    val: &[BitemporalSample],
    kind: BackboneKind,
    arch: &BackboneArchConfig,
    de: Option<&DeParams>,
    config: &TrainConfig,
    observer: &mut O,
) -> Result<SegmenterOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    if config.de_mode == DeMode::Finetune && de.is_none() {
        return Err(Error::MissingDe);
    }
    let arch = BackboneArchConfig { z_channels: de.map_or(0, |d| d.arch.c_z), ..arch.clone() };
    let mut bb = backbones::init_backbone(kind, &arch, config.seed)?;
    let mut de = de.cloned();
    let mut opt = Adam::new(config.adam(), &bb.params);
    let mut de_optim = de.as_ref().map(|d| DeOptim::new(config.adam(), d));
    let finetune = config.de_mode == DeMode::Finetune;
    // Frozen mode encodes each sample once; the DE never changes.
    let frozen_z: Option<Vec<Tensor<f32>>> = match (&de, finetune) {
        (Some(d), false) => Some(train.iter().map(|s| de::encode_tensor(d, &s.pre.to_tensor(), &s.post.to_tensor())).collect()),
        _ => None,
    };

    let mut order = Order::new(train.len(), config.seed ^ 0x5e9_7a1);
    let mut history = TrainHistory::default();
    let (mut step, mut cycles) = (0usize, 0usize);
    for epoch in 0..config.epochs {
        let (mut seg_sum, mut tot_sum, mut de_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
        let idx = order.epoch().to_vec();
        for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
            step += 1;
            let batch: Vec<&BitemporalSample> = chunk.iter().map(|&i| &train[i]).collect();
            let de_cycle = finetune && step % config.de_update_period_k == 0;
            if de_cycle {
                let d = de.as_mut().expect("finetune has a DE");
                let o = de_optim.as_mut().expect("finetune has DE optimizers");
                for _ in 0..config.adversary_steps_per_main_step {
                    let before = snapshot(observer, d);
                    let latents = latents_of(d, &batch);
                    finite_or(adversary_step(d, &mut o.adversary, &batch, &latents)?, epoch, b)?;
                    observe_de(observer, StepKind::Adversary, before, d);
                }
            }
            let mut acc = Accum::new(&bb.params);
            let mut enc_acc = de.as_ref().map(|d| Accum::new(&d.encoder));
            let mut dec_acc = de.as_ref().map(|d| Accum::new(&d.decoder));
            for (&i, s) in chunk.iter().zip(&batch) {
                let mut g = Graph::new();
                let p = bb.params.bind(&mut g, true);
                let (logits, de_part) = match (&de, finetune) {
                    (None, _) => {
                        let pre = g.input(s.pre.to_tensor());
                        let post = g.input(s.post.to_tensor());
                        (backbones::forward_graph(&mut g, kind, &bb.arch, &p, pre, post, None), None)
                    }
                    (Some(_), false) => {
                        let pre = g.input(s.pre.to_tensor());
                        let post = g.input(s.post.to_tensor());
                        let z = g.input(frozen_z.as_ref().expect("frozen latents")[i].clone());
                        (backbones::forward_graph(&mut g, kind, &bb.arch, &p, pre, post, Some(z)), None)
                    }
                    (Some(d), true) => {
                        let enc = d.encoder.bind(&mut g, de_cycle);
                        let dec = d.decoder.bind(&mut g, de_cycle);
                        let adv = d.adversary.bind(&mut g, false);
                        let (t, pre, post) = de_terms(&mut g, &enc, &dec, &adv, s, config.beta);
                        let logits = backbones::forward_graph(&mut g, kind, &bb.arch, &p, pre, post, Some(t.z));
                        (logits, Some((t.loss, enc, dec)))
                    }
                };
                let seg = g.cross_entropy2(logits, s.mask.data());
                let loss = match de_part {
                    Some((l_d, _, _)) => {
                        de_sum += g.scalar(l_d) as f64;
                        total_loss_graph(&mut g, seg, l_d, config.lambda)
                    }
                    None => seg,
                };
                seg_sum += finite_or(g.scalar(seg) as f64, epoch, b)?;
                tot_sum += finite_or(g.scalar(loss) as f64, epoch, b)?;
                n += 1;
                let grads = g.backward(loss);
                acc.add(&bb.params.collect_grads(&p, &grads));
                if let (true, Some((_, enc, dec)), Some(d)) = (de_cycle, de_part, &de) {
                    enc_acc.as_mut().expect("encoder accumulator").add(&d.encoder.collect_grads(&enc, &grads));
                    dec_acc.as_mut().expect("decoder accumulator").add(&d.decoder.collect_grads(&dec, &grads));
                }
            }
            opt.step(&mut bb.params, &acc.finish()?);
            if de_cycle {
                let d = de.as_mut().expect("finetune has a DE");
                let o = de_optim.as_mut().expect("finetune has DE optimizers");
                let before = snapshot(observer, d);
                o.encoder.step(&mut d.encoder, &enc_acc.take().expect("encoder accumulator").finish()?);
                o.decoder.step(&mut d.decoder, &dec_acc.take().expect("decoder accumulator").finish()?);
                observe_de(observer, StepKind::EncoderDecoder, before, d);
                cycles += 1;
                observer.on_de_cycle(step);
            }
            observer.on_main_step(step);
        }
        let nf = n as f64;
        let mut record = EpochRecord {
            epoch,
            segmentation: Some(seg_sum / nf),
            total: Some(tot_sum / nf),
            de_loss: finetune.then_some(de_sum / nf),
            ..EpochRecord::default()
        };
        if !val.is_empty() {
            let c = evaluate(&bb, de.as_ref(), val)?;
            record.val_iou = Some(c.iou());
            record.val_f1 = Some(c.f1());
        }
        observer.on_epoch(&record);
        history.records.push(record);
    }
    let de_optim = if finetune { de_optim } else { None };
    Ok(SegmenterOutcome { backbone: bb, de, optim: opt, de_optim, history, de_cycles: cycles, main_steps: step })
}

/// Prediction for one sample, encoding `Z` when a DE is given.
pub fn predict(bb: &BackboneParams, de: Option<&DeParams>, s: &BitemporalSample) -> Result<Prediction> {
    let z = match de {
        Some(d) => Some(de::encode(d, &s.pre, &s.post)?),
        None => None,
    };
    backbones::forward(bb, &s.pre, &s.post, z.as_ref())
}

/// Pooled confusion counts over a dataset.
pub fn evaluate(bb: &BackboneParams, de: Option<&DeParams>, samples: &[BitemporalSample]) -> Result<Confusion> {
    let mut total = Confusion::default();
    for s in samples {
        let mask = backbones::predict_mask(&predict(bb, de, s)?);
        total.merge(&Confusion::from_masks(&mask, &s.mask)?);
    }
    Ok(total)
}

/// Latents of a dataset under a DE, in order.
pub fn encode_all(de: &DeParams, samples: &[BitemporalSample]) -> Result<Vec<LatentDifference>> {
    samples.iter().map(|s| de::encode(de, &s.pre, &s.post)).collect()
}
