//! Segmentation backbones and the latent-difference injection adapter.
//!
//! Both models emit `[2, H, W]` logits in (no-change, change) order.
//!
//! The U-Net consumes one stacked input (post, or pre ‖ post) with `Z`
//! resized to full resolution and appended as extra input channels.
//!
//! The BIT-style model is siamese. A shared two-layer CNN reduces each image to
//! quarter resolution; `Z` is appended to both feature maps; a shared 1×1
//! projection maps them to `transformer_dim`; spatial attention pools each map
//! into `token_count` tokens; a transformer encoder mixes the joint token set;
//! every pixel then attends to its own branch's tokens. The absolute feature
//! difference is decoded and bilinearly upsampled.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::de::{conv, conv_t, LatentDifference};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{ChangeMask, ImagePlane};
use crate::params::{Bound, Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Unet,
    Bit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    PostOnly,
    FullConcat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    InputConcat,
    BottleneckConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneArchConfig {
    /// Channels of one image.
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub token_count: usize,
    pub transformer_dim: usize,
    pub transformer_layers: usize,
    /// U-Net only; the BIT model always sees both images.
    pub input_mode: InputMode,
    /// Channels of the injected `Z`; 0 builds the plain baseline.
    pub z_channels: usize,
}

impl Default for BackboneArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 16,
            depth: 3,
            token_count: 4,
            transformer_dim: 32,
            transformer_layers: 1,
            input_mode: InputMode::PostOnly,
            z_channels: 0,
        }
    }
}

impl BackboneArchConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.in_channels, self.base_width, self.depth, self.token_count, self.transformer_dim, self.transformer_layers];
        if counts.contains(&0) {
            return Err(Error::InvalidArch(String::from("all counts must be at least 1")));
        }
        if self.depth > 16 {
            return Err(Error::InvalidArch(alloc::format!("depth {} is unreasonably large", self.depth)));
        }
        Ok(())
    }

    /// Checks an input side against the downsampling factor of `kind`.
    pub fn check_size(&self, kind: BackboneKind, h: usize, w: usize) -> Result<()> {
        let factor = match kind {
            BackboneKind::Unet => 1usize << (self.depth - 1),
            BackboneKind::Bit => 4,
        };
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidArch(alloc::format!("input {h}×{w} is not divisible by {factor}")));
        }
        Ok(())
    }

    fn unet_input_channels(&self) -> usize {
        let images = match self.input_mode {
            InputMode::PostOnly => 1,
            InputMode::FullConcat => 2,
        };
        images * self.in_channels + self.z_channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams<T = f32> {
    pub kind: BackboneKind,
    pub params: ParamSet<T>,
    pub arch: BackboneArchConfig,
}

impl<T: Scalar> BackboneParams<T> {
    pub fn cast<U: Scalar>(&self) -> BackboneParams<U> {
        BackboneParams { kind: self.kind, params: self.params.cast(), arch: self.arch.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let reference = init_backbone_generic::<T>(self.kind, &self.arch, 0)?;
        if reference.params.shapes() != self.params.shapes() {
            return Err(Error::InvalidArch(String::from("backbone parameter shapes do not match the architecture")));
        }
        if !self.params.all_finite() {
            return Err(Error::InvalidValue(String::from("non-finite backbone parameter")));
        }
        Ok(())
    }
}

/// Per-pixel logits, `[2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor<f32>,
}

pub fn init_backbone(kind: BackboneKind, arch: &BackboneArchConfig, seed: u64) -> Result<BackboneParams> {
    init_backbone_generic(kind, arch, seed)
}

pub fn init_backbone_generic<T: Scalar>(kind: BackboneKind, arch: &BackboneArchConfig, seed: u64) -> Result<BackboneParams<T>> {
    arch.validate()?;
    let mut init = Initializer::new(seed);
    let mut p = ParamSet::new();
    let w = arch.base_width;
    match kind {
        BackboneKind::Unet => {
            let mut inp = arch.unet_input_channels();
            for l in 0..arch.depth {
                let ch = w << l;
                init.conv(&mut p, &alloc::format!("enc{l}.c1"), ch, inp, 3);
                init.conv(&mut p, &alloc::format!("enc{l}.c2"), ch, ch, 3);
                inp = ch;
            }
            for l in (0..arch.depth - 1).rev() {
                let ch = w << l;
                init.conv_transpose(&mut p, &alloc::format!("up{l}"), ch * 2, ch, 2);
                init.conv(&mut p, &alloc::format!("dec{l}.c1"), ch, ch * 2, 3);
                init.conv(&mut p, &alloc::format!("dec{l}.c2"), ch, ch, 3);
            }
            init.conv(&mut p, "head", 2, w, 1);
        }
        BackboneKind::Bit => {
            let (c, d) = (arch.in_channels, arch.transformer_dim);
            init.conv(&mut p, "cnn.c1", w, c, 3);
            init.conv(&mut p, "cnn.c2", 2 * w, w, 3);
            init.conv(&mut p, "proj", d, 2 * w + arch.z_channels, 1);
            init.conv(&mut p, "tokenizer", arch.token_count, d, 1);
            init.normal(&mut p, "pos", &[2 * arch.token_count, d]);
            for l in 0..arch.transformer_layers {
                for m in ["q", "k", "v"] {
                    init.linear(&mut p, &alloc::format!("tf{l}.{m}"), d, d);
                }
                init.linear(&mut p, &alloc::format!("tf{l}.ff1"), d, 2 * d);
                init.linear(&mut p, &alloc::format!("tf{l}.ff2"), 2 * d, d);
            }
            init.conv(&mut p, "head.c1", d, d, 3);
            init.conv(&mut p, "head.c2", 2, d, 1);
        }
    }
    Ok(BackboneParams { kind, params: p, arch: arch.clone() })
}

/// Resizes `z` to the feature map's spatial size and appends it channelwise.
///
/// The original channels pass through bit-exactly. Both modes share the same
/// arithmetic; they differ only in where a backbone applies them.
pub fn inject(features: &Tensor<f32>, z: &LatentDifference, _mode: InjectionMode) -> Result<Tensor<f32>> {
    if features.shape().len() != 3 {
        return Err(shape_err("injection features", "[C, h, w]", features.shape()));
    }
    if !features.all_finite() {
        return Err(Error::InvalidValue(String::from("non-finite feature value")));
    }
    let mut g = Graph::new();
    let f = g.input(features.clone());
    let zv = g.input(z.tensor().clone());
    let out = inject_graph(&mut g, f, zv);
    Ok(g.value(out).clone())
}

pub fn inject_graph<T: Scalar>(g: &mut Graph<T>, features: Var, z: Var) -> Var {
    let (_, h, w) = g.value(features).dims3();
    let (_, zh, zw) = g.value(z).dims3();
    let resized = if (zh, zw) == (h, w) { z } else { g.resize_bilinear(z, h, w) };
    g.concat_channels(&[features, resized])
}

fn check_inputs<T: Scalar>(bb: &BackboneParams<T>, pre: &Tensor<T>, post: &Tensor<T>, z: Option<&Tensor<T>>) -> Result<()> {
    let arch = &bb.arch;
    if pre.shape().len() != 3 || pre.shape() != post.shape() {
        return Err(shape_err("image pair", pre.shape(), post.shape()));
    }
    let (c, h, w) = pre.dims3();
    if c != arch.in_channels {
        return Err(shape_err("backbone input channels", arch.in_channels, c));
    }
    arch.check_size(bb.kind, h, w)?;
    match (z, arch.z_channels) {
        (None, 0) => Ok(()),
        (None, n) => Err(Error::ModeMismatch(alloc::format!("backbone expects a {n}-channel latent difference"))),
        (Some(_), 0) => Err(Error::ModeMismatch(String::from("baseline backbone was given a latent difference"))),
        (Some(zt), n) if zt.shape().len() != 3 || zt.shape()[0] != n => Err(shape_err("latent difference channels", n, zt.shape())),
        (Some(_), _) => Ok(()),
    }
}

/// Builds the logits node for either backbone.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    kind: BackboneKind,
    arch: &BackboneArchConfig,
    p: &Bound,
    pre: Var,
    post: Var,
    z: Option<Var>,
) -> Var {
    match kind {
        BackboneKind::Unet => unet_graph(g, arch, p, pre, post, z),
        BackboneKind::Bit => bit_graph(g, arch, p, pre, post, z),
    }
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, stride: usize) -> Var {
    let y = conv(g, p, prefix, x, stride, 1);
    g.relu(y)
}

fn unet_graph<T: Scalar>(g: &mut Graph<T>, arch: &BackboneArchConfig, p: &Bound, pre: Var, post: Var, z: Option<Var>) -> Var {
    let mut x = match arch.input_mode {
        InputMode::PostOnly => post,
        InputMode::FullConcat => g.concat_channels(&[pre, post]),
    };
    if let Some(z) = z {
        x = inject_graph(g, x, z);
    }
    let mut skips = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        if l > 0 {
            x = g.max_pool2(x);
        }
        x = conv_relu(g, p, &alloc::format!("enc{l}.c1"), x, 1);
        x = conv_relu(g, p, &alloc::format!("enc{l}.c2"), x, 1);
        skips.push(x);
    }
    for l in (0..arch.depth - 1).rev() {
        let up = conv_t(g, p, &alloc::format!("up{l}"), x, 2, 0);
        x = g.concat_channels(&[skips[l], up]);
        x = conv_relu(g, p, &alloc::format!("dec{l}.c1"), x, 1);
        x = conv_relu(g, p, &alloc::format!("dec{l}.c2"), x, 1);
    }
    conv(g, p, "head", x, 1, 0)
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Var {
    let w = p.var(&alloc::format!("{prefix}.w"));
    let b = p.var(&alloc::format!("{prefix}.b"));
    let y = g.matmul(x, w, false, false);
    g.add_row_bias(y, b)
}

/// Constant `[rows, total]` matrix selecting rows `start..start + rows`.
fn row_selector<T: Scalar>(g: &mut Graph<T>, start: usize, rows: usize, total: usize) -> Var {
    let mut data = vec![T::zero(); rows * total];
    for r in 0..rows {
        data[r * total + start + r] = T::one();
    }
    g.input(Tensor::from_vec(&[rows, total], data).expect("selector shape"))
}

/// Projected quarter-resolution features `[D, h·w]` of one branch.
fn bit_features<T: Scalar>(g: &mut Graph<T>, p: &Bound, img: Var, z: Option<Var>) -> Var {
    let x = conv_relu(g, p, "cnn.c1", img, 2);
    let mut x = conv_relu(g, p, "cnn.c2", x, 2);
    if let Some(z) = z {
        x = inject_graph(g, x, z);
    }
    let x = conv(g, p, "proj", x, 1, 0);
    let (d, h, w) = g.value(x).dims3();
    g.reshape(x, &[d, h * w])
}

/// Spatial-attention pooling into `[L, D]` tokens.
fn tokenize<T: Scalar>(g: &mut Graph<T>, p: &Bound, feats: Var, h: usize, w: usize) -> Var {
    let d = g.value(feats).shape()[0];
    let spatial = g.reshape(feats, &[d, h, w]);
    let logits = conv(g, p, "tokenizer", spatial, 1, 0);
    let l = g.value(logits).shape()[0];
    let logits = g.reshape(logits, &[l, h * w]);
    let attn = g.softmax_rows(logits);
    g.matmul(attn, feats, false, true)
}

fn attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Var {
    let d = g.value(q).shape()[1];
    let scores = g.matmul(q, k, false, true);
    let scores = g.scale(scores, T::cst(1.0 / Float::sqrt(d as f64)));
    let weights = g.softmax_rows(scores);
    g.matmul(weights, v, false, false)
}

fn transformer_layer<T: Scalar>(g: &mut Graph<T>, p: &Bound, l: usize, tokens: Var) -> Var {
    let q = linear(g, p, &alloc::format!("tf{l}.q"), tokens);
    let k = linear(g, p, &alloc::format!("tf{l}.k"), tokens);
    let v = linear(g, p, &alloc::format!("tf{l}.v"), tokens);
    let mixed = attention(g, q, k, v);
    let t = g.add(tokens, mixed);
    let hidden = linear(g, p, &alloc::format!("tf{l}.ff1"), t);
    let hidden = g.relu(hidden);
    let ff = linear(g, p, &alloc::format!("tf{l}.ff2"), hidden);
    g.add(t, ff)
}

/// Every pixel attends to the branch tokens; returns `[D, h, w]`.
fn reproject<T: Scalar>(g: &mut Graph<T>, feats: Var, tokens: Var, h: usize, w: usize) -> Var {
    let pixels = g.transpose(feats);
    let context = attention(g, pixels, tokens, tokens);
    let refined = g.add(pixels, context);
    let back = g.transpose(refined);
    let d = g.value(back).shape()[0];
    g.reshape(back, &[d, h, w])
}

fn bit_graph<T: Scalar>(g: &mut Graph<T>, arch: &BackboneArchConfig, p: &Bound, pre: Var, post: Var, z: Option<Var>) -> Var {
    let (_, h, w) = g.value(pre).dims3();
    let (qh, qw) = (h / 4, w / 4);
    let f_pre = bit_features(g, p, pre, z);
    let f_post = bit_features(g, p, post, z);
    let t_pre = tokenize(g, p, f_pre, qh, qw);
    let t_post = tokenize(g, p, f_post, qh, qw);
    let l = arch.token_count;
    let joint_pre = row_selector(g, 0, l, 2 * l);
    let joint_post = row_selector(g, l, l, 2 * l);
    // joint = [t_pre; t_post] written as a sum of scattered blocks
    let a = g.matmul(joint_pre, t_pre, true, false);
    let b = g.matmul(joint_post, t_post, true, false);
    let joint = g.add(a, b);
    // distinct embeddings for pre and post token slots break the symmetry
    // that would otherwise cancel in the |post − pre| head
    let pos = p.var("pos");
    let mut joint = g.add(joint, pos);
    for layer in 0..arch.transformer_layers {
        joint = transformer_layer(g, p, layer, joint);
    }
    let t_pre = g.matmul(joint_pre, joint, false, false);
    let t_post = g.matmul(joint_post, joint, false, false);
    let r_pre = reproject(g, f_pre, t_pre, qh, qw);
    let r_post = reproject(g, f_post, t_post, qh, qw);
    let diff = g.sub(r_post, r_pre);
    let diff = g.abs(diff);
    let x = conv_relu(g, p, "head.c1", diff, 1);
    let logits = conv(g, p, "head.c2", x, 1, 0);
    g.resize_bilinear(logits, h, w)
}

/// Inference forward on raw tensors.
pub fn forward_tensor<T: Scalar>(bb: &BackboneParams<T>, pre: &Tensor<T>, post: &Tensor<T>, z: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_inputs(bb, pre, post, z)?;
    let mut g = Graph::new();
    let p = bb.params.bind(&mut g, false);
    let pre = g.input(pre.clone());
    let post = g.input(post.clone());
    let z = z.map(|t| g.input(t.clone()));
    let out = forward_graph(&mut g, bb.kind, &bb.arch, &p, pre, post, z);
    Ok(g.value(out).clone())
}

fn forward_kind(bb: &BackboneParams, kind: BackboneKind, pre: &ImagePlane, post: &ImagePlane, z: Option<&LatentDifference>) -> Result<Prediction> {
    if bb.kind != kind {
        return Err(Error::ModeMismatch(alloc::format!("expected {kind:?} parameters, got {:?}", bb.kind)));
    }
    let logits = forward_tensor(bb, &pre.to_tensor(), &post.to_tensor(), z.map(LatentDifference::tensor))?;
    if !logits.all_finite() {
        return Err(Error::InvalidValue(String::from("non-finite logits")));
    }
    Ok(Prediction { logits })
}

pub fn unet_forward(bb: &BackboneParams, pre: &ImagePlane, post: &ImagePlane, z: Option<&LatentDifference>) -> Result<Prediction> {
    forward_kind(bb, BackboneKind::Unet, pre, post, z)
}

pub fn bit_forward(bb: &BackboneParams, pre: &ImagePlane, post: &ImagePlane, z: Option<&LatentDifference>) -> Result<Prediction> {
    forward_kind(bb, BackboneKind::Bit, pre, post, z)
}

pub fn forward(bb: &BackboneParams, pre: &ImagePlane, post: &ImagePlane, z: Option<&LatentDifference>) -> Result<Prediction> {
    forward_kind(bb, bb.kind, pre, post, z)
}

/// Per-pixel argmax; ties go to no-change.
pub fn predict_mask(p: &Prediction) -> ChangeMask {
    let (_, h, w) = p.logits.dims3();
    let (l0, l1) = p.logits.data().split_at(h * w);
    let data = l0.iter().zip(l1).map(|(a, b)| u8::from(b > a)).collect();
    ChangeMask::new(h, w, data).expect("binary mask")
}
