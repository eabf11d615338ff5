//! The difference-embedding (DE) module.
//!
//! Three networks share one latent map `Z`:
//!
//! * the **encoder** sees the pair. A *change* branch consumes `post − pre`,
//!   a *context* branch consumes `pre`; each is a two-layer stride-2 CNN. The
//!   branch outputs are concatenated and mixed by a 1×1 convolution into
//!   `c_z` channels at quarter resolution.
//! * the **conditional decoder** estimates the post image from `pre` and `Z`.
//!   `pre` is reduced to quarter resolution by its own two-layer CNN, stacked
//!   with `Z`, and expanded by three transposed convolutions into a residual
//!   added to `pre`.
//! * the **adversarial decoder** maps `Z` alone through the same
//!   three-layer transposed-convolution stack. It never sees either image.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImagePlane;
use crate::params::{Bound, Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeArchConfig {
    pub in_channels: usize,
    pub c_z: usize,
    pub base_width: usize,
    pub image_size: usize,
}

impl Default for DeArchConfig {
    fn default() -> Self {
        Self { in_channels: 3, c_z: 16, base_width: 32, image_size: 64 }
    }
}

impl DeArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.c_z == 0 || self.base_width == 0 || self.image_size == 0 {
            return Err(Error::InvalidArch(String::from("all counts must be at least 1")));
        }
        if self.image_size % 4 != 0 {
            return Err(Error::InvalidArch(alloc::format!("image_size {} is not divisible by 4", self.image_size)));
        }
        Ok(())
    }

    /// Spatial side of the latent map.
    pub fn latent_size(&self) -> usize {
        self.image_size / 4
    }
}

/// The latent difference `Z`, a `c_z × h × w` map at quarter resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDifference {
    tensor: Tensor<f32>,
}

impl LatentDifference {
    pub fn from_tensor(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(shape_err("latent difference", "[c_z, h, w]", tensor.shape()));
        }
        if !tensor.all_finite() {
            return Err(Error::InvalidValue(String::from("non-finite latent value")));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.tensor.dims3();
        (h, w, c)
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    /// Mean of each latent channel over space.
    pub fn pooled(&self) -> Vec<f64> {
        let (c, h, w) = self.tensor.dims3();
        self.tensor.data().chunks(h * w).take(c).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64).collect()
    }
}

/// Encoder, conditional decoder and adversary parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeParams<T = f32> {
    pub encoder: ParamSet<T>,
    pub decoder: ParamSet<T>,
    pub adversary: ParamSet<T>,
    pub arch: DeArchConfig,
}

impl<T: Scalar> DeParams<T> {
    pub fn cast<U: Scalar>(&self) -> DeParams<U> {
        DeParams {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            adversary: self.adversary.cast(),
            arch: self.arch.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite() && self.decoder.all_finite() && self.adversary.all_finite()
    }

    pub fn num_scalars(&self) -> usize {
        self.encoder.num_scalars() + self.decoder.num_scalars() + self.adversary.num_scalars()
    }

    /// Checks that every tensor has the shape `arch` prescribes.
    pub fn validate(&self) -> Result<()> {
        let reference = init_de_generic::<T>(&self.arch, 0)?;
        for (name, got, want) in [
            ("encoder", &self.encoder, &reference.encoder),
            ("decoder", &self.decoder, &reference.decoder),
            ("adversary", &self.adversary, &reference.adversary),
        ] {
            if got.shapes() != want.shapes() {
                return Err(Error::InvalidArch(alloc::format!("{name} parameter shapes do not match the architecture")));
            }
        }
        if !self.all_finite() {
            return Err(Error::InvalidValue(String::from("non-finite DE parameter")));
        }
        Ok(())
    }
}

pub fn init_de(arch: &DeArchConfig, seed: u64) -> Result<DeParams> {
    init_de_generic(arch, seed)
}

pub fn init_de_generic<T: Scalar>(arch: &DeArchConfig, seed: u64) -> Result<DeParams<T>> {
    arch.validate()?;
    let (c, w, cz) = (arch.in_channels, arch.base_width, arch.c_z);
    let mut init = Initializer::new(seed);

    let mut encoder = ParamSet::new();
    for branch in ["chg", "ctx"] {
        init.conv(&mut encoder, &alloc::format!("{branch}.c1"), w, c, 3);
        init.conv(&mut encoder, &alloc::format!("{branch}.c2"), 2 * w, w, 3);
    }
    init.conv(&mut encoder, "fuse", cz, 4 * w, 1);

    let mut decoder = ParamSet::new();
    init.conv(&mut decoder, "pre.c1", w, c, 3);
    init.conv(&mut decoder, "pre.c2", 2 * w, w, 3);
    upsampling_stack(&mut init, &mut decoder, 2 * w + cz, w, c);

    let mut adversary = ParamSet::new();
    upsampling_stack(&mut init, &mut adversary, cz, w, c);

    Ok(DeParams { encoder, decoder, adversary, arch: arch.clone() })
}

fn upsampling_stack<T: Scalar>(init: &mut Initializer, set: &mut ParamSet<T>, inp: usize, w: usize, out: usize) {
    init.conv_transpose(set, "t1", inp, 2 * w, 4);
    init.conv_transpose(set, "t2", 2 * w, w, 4);
    init.conv_transpose(set, "t3", w, out, 3);
}

fn two_layer_cnn<T: Scalar>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Var {
    let c1 = conv(g, p, &alloc::format!("{prefix}.c1"), x, 2, 1);
    let c1 = g.relu(c1);
    let c2 = conv(g, p, &alloc::format!("{prefix}.c2"), c1, 2, 1);
    g.relu(c2)
}

pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, stride: usize, pad: usize) -> Var {
    let w = p.var(&alloc::format!("{prefix}.w"));
    let b = p.var(&alloc::format!("{prefix}.b"));
    g.conv2d(x, w, Some(b), stride, pad)
}

pub(crate) fn conv_t<T: Scalar>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var, stride: usize, pad: usize) -> Var {
    let w = p.var(&alloc::format!("{prefix}.w"));
    let b = p.var(&alloc::format!("{prefix}.b"));
    g.conv_transpose2d(x, w, Some(b), stride, pad)
}

fn upsample<T: Scalar>(g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
    let h = conv_t(g, p, "t1", x, 2, 1);
    let h = g.relu(h);
    let h = conv_t(g, p, "t2", h, 2, 1);
    let h = g.relu(h);
    conv_t(g, p, "t3", h, 1, 1)
}

/// `Z = C(pre, post)` as graph nodes.
pub fn encode_graph<T: Scalar>(g: &mut Graph<T>, encoder: &Bound, pre: Var, post: Var) -> Var {
    let diff = g.sub(post, pre);
    let change = two_layer_cnn(g, encoder, "chg", diff);
    let context = two_layer_cnn(g, encoder, "ctx", pre);
    let fused = g.concat_channels(&[change, context]);
    conv(g, encoder, "fuse", fused, 1, 0)
}

/// `X̂ = D(pre, Z)` as graph nodes.
pub fn decode_conditional_graph<T: Scalar>(g: &mut Graph<T>, decoder: &Bound, pre: Var, z: Var) -> Var {
    let context = two_layer_cnn(g, decoder, "pre", pre);
    let stacked = g.concat_channels(&[context, z]);
    let residual = upsample(g, decoder, stacked);
    g.add(pre, residual)
}

/// `X̆ = A(Z)` as graph nodes.
pub fn decode_adversarial_graph<T: Scalar>(g: &mut Graph<T>, adversary: &Bound, z: Var) -> Var {
    upsample(g, adversary, z)
}

fn check_image(arch: &DeArchConfig, img: &ImagePlane, what: &'static str) -> Result<()> {
    let want = (arch.image_size, arch.image_size, arch.in_channels);
    if img.dims() != want {
        return Err(shape_err(what, want, img.dims()));
    }
    Ok(())
}

fn check_latent(arch: &DeArchConfig, z: &LatentDifference) -> Result<()> {
    let s = arch.latent_size();
    if z.dims() != (s, s, arch.c_z) {
        return Err(shape_err("latent difference", (s, s, arch.c_z), z.dims()));
    }
    Ok(())
}

/// Computes the latent difference of a co-registered pair.
pub fn encode(params: &DeParams, pre: &ImagePlane, post: &ImagePlane) -> Result<LatentDifference> {
    check_image(&params.arch, pre, "pre image")?;
    check_image(&params.arch, post, "post image")?;
    Ok(LatentDifference { tensor: encode_tensor(params, &pre.to_tensor(), &post.to_tensor()) })
}

/// Constant-only forward of the encoder on raw tensors.
pub fn encode_tensor<T: Scalar>(params: &DeParams<T>, pre: &Tensor<T>, post: &Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let enc = params.encoder.bind(&mut g, false);
    let pre = g.input(pre.clone());
    let post = g.input(post.clone());
    let z = encode_graph(&mut g, &enc, pre, post);
    g.value(z).clone()
}

/// Estimates the post image from the pre image and `Z`.
pub fn decode_conditional(params: &DeParams, pre: &ImagePlane, z: &LatentDifference) -> Result<ImagePlane> {
    check_image(&params.arch, pre, "pre image")?;
    check_latent(&params.arch, z)?;
    let mut g = Graph::new();
    let dec = params.decoder.bind(&mut g, false);
    let pre = g.input(pre.to_tensor());
    let zv = g.input(z.tensor.clone());
    let out = decode_conditional_graph(&mut g, &dec, pre, zv);
    ImagePlane::from_tensor(g.value(out))
}

/// Reconstructs the post image from `Z` alone.
pub fn decode_adversarial(params: &DeParams, z: &LatentDifference) -> Result<ImagePlane> {
    check_latent(&params.arch, z)?;
    let mut g = Graph::new();
    let adv = params.adversary.bind(&mut g, false);
    let zv = g.input(z.tensor.clone());
    let out = decode_adversarial_graph(&mut g, &adv, zv);
    ImagePlane::from_tensor(g.value(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn arch() -> DeArchConfig {
        DeArchConfig { in_channels: 3, c_z: 16, base_width: 8, image_size: 64 }
    }

    fn image(phase: f32) -> ImagePlane {
        let data = (0..64 * 64 * 3).map(|i| (i as f32 * 0.013 + phase).sin() * 3.0).collect();
        ImagePlane::new(64, 64, 3, data, vec![]).unwrap()
    }

    #[test]
    fn shapes_follow_the_quarter_resolution_contract() {
        let p = init_de(&arch(), 3).unwrap();
        let z = encode(&p, &image(0.0), &image(1.0)).unwrap();
        assert_eq!(z.dims(), (16, 16, 16));
        assert_eq!(decode_conditional(&p, &image(0.0), &z).unwrap().dims(), (64, 64, 3));
        assert_eq!(decode_adversarial(&p, &z).unwrap().dims(), (64, 64, 3));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(init_de(&arch(), 1).unwrap(), init_de(&arch(), 1).unwrap());
        assert_ne!(init_de(&arch(), 1).unwrap(), init_de(&arch(), 2).unwrap());
        let bad = DeArchConfig { image_size: 62, ..arch() };
        assert!(matches!(init_de(&bad, 0), Err(Error::InvalidArch(_))));
    }

    #[test]
    fn forwards_are_deterministic_and_finite() {
        let p = init_de(&arch(), 5).unwrap();
        let (a, b) = (image(0.3), image(2.0));
        let z1 = encode(&p, &a, &b).unwrap();
        let z2 = encode(&p, &a, &b).unwrap();
        assert_eq!(z1, z2);
        assert!(z1.tensor().all_finite());
        let x = decode_conditional(&p, &a, &z1).unwrap();
        assert!(x.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adversary_ignores_images() {
        let p = init_de(&arch(), 5).unwrap();
        let z = encode(&p, &image(0.1), &image(0.2)).unwrap();
        // the adversary's signature has no image argument; identical Z gives identical output
        assert_eq!(decode_adversarial(&p, &z).unwrap(), decode_adversarial(&p, &z.clone()).unwrap());
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let p = init_de(&arch(), 5).unwrap();
        let small = ImagePlane::filled(32, 32, 3, 0.0);
        assert!(matches!(encode(&p, &small, &small), Err(Error::ShapeMismatch { .. })));
        let z = LatentDifference::from_tensor(Tensor::zeros(&[8, 16, 16])).unwrap();
        assert!(matches!(decode_adversarial(&p, &z), Err(Error::ShapeMismatch { .. })));
    }
}
