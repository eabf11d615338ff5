//! Synthetic bitemporal datasets with planted square changes and a global
//! brightness nuisance on the post image.
//!
//! The change signal (squares, recorded exactly in the mask) and the nuisance
//! (one additive shift per sample) are drawn independently, so a latent
//! representation can be probed for how much of the nuisance it retains.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BitemporalSample, ChangeMask, ImagePlane};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_samples: usize,
    pub channels: usize,
    /// Inclusive range of planted squares per sample.
    pub change_shape_count_range: (usize, usize),
    /// Inclusive range of square side lengths in pixels.
    pub shape_side_range: (usize, usize),
    /// Each square shifts every channel by a value drawn from `[-a, a]`.
    pub change_intensity: f64,
    /// Additive global shift applied to the post image only.
    pub nuisance_brightness_range: (f64, f64),
    /// Standard deviation of per-pixel Gaussian texture noise on the post image.
    pub nuisance_texture_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            n_samples: 64,
            channels: 3,
            change_shape_count_range: (1, 3),
            shape_side_range: (4, 10),
            change_intensity: 0.5,
            nuisance_brightness_range: (-0.5, 0.5),
            nuisance_texture_level: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateConfig(String::from(m)));
        if self.image_size == 0 || self.n_samples == 0 || self.channels == 0 {
            return bad("image_size, n_samples and channels must be at least 1");
        }
        let (cl, ch) = self.change_shape_count_range;
        let (sl, sh) = self.shape_side_range;
        let (bl, bh) = self.nuisance_brightness_range;
        if cl > ch || sl > sh || !(bl <= bh) {
            return bad("range lower bound exceeds upper bound");
        }
        if ch > 0 && (sl == 0 || sh > self.image_size) {
            return bad("change shapes must have side in [1, image_size]");
        }
        if !(self.nuisance_texture_level >= 0.0) || !(self.change_intensity >= 0.0) {
            return bad("texture level and change intensity must be non-negative");
        }
        if !bl.is_finite() || !bh.is_finite() || !self.nuisance_texture_level.is_finite() || !self.change_intensity.is_finite() {
            return bad("non-finite parameter");
        }
        Ok(())
    }
}

/// An axis-aligned square change `[top, top+side) × [left, left+side)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedShape {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl PlantedShape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.side && x >= self.left && x < self.left + self.side
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub sample: BitemporalSample,
    /// The brightness shift applied to the post image.
    pub nuisance: f64,
    pub shapes: Vec<PlantedShape>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<SyntheticSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = decimal_width(config.n_samples);
    (0..config.n_samples)
        .map(|i| {
            let id = alloc::format!("s{:0width$}", i, width = width);
            one_sample(config, &mut rng, id)
        })
        .collect()
}

fn decimal_width(n: usize) -> usize {
    let mut w = 1;
    let mut v = n.saturating_sub(1);
    while v >= 10 {
        v /= 10;
        w += 1;
    }
    w.max(4)
}

fn smooth_background(rng: &mut ChaCha8Rng, channels: usize, size: usize) -> Vec<f64> {
    let mut img = vec![0.0; channels * size * size];
    for c in 0..channels {
        let plane = &mut img[c * size * size..(c + 1) * size * size];
        let base = rng.gen_range(0.3..0.7);
        plane.iter_mut().for_each(|v| *v = base);
        for _ in 0..3 {
            let fx: f64 = rng.gen_range(0.5..2.5);
            let fy: f64 = rng.gen_range(0.5..2.5);
            let px: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
            let py: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
            let amp: f64 = rng.gen_range(0.05..0.2);
            for y in 0..size {
                let cy = Float::cos(core::f64::consts::TAU * fy * y as f64 / size as f64 + py);
                for x in 0..size {
                    let cx = Float::cos(core::f64::consts::TAU * fx * x as f64 / size as f64 + px);
                    plane[y * size + x] += amp * cx * cy;
                }
            }
        }
    }
    img
}

fn one_sample(config: &SynthConfig, rng: &mut ChaCha8Rng, id: String) -> Result<SyntheticSample> {
    let (n, c) = (config.image_size, config.channels);
    let pre = smooth_background(rng, c, n);
    let mut post = pre.clone();
    let mut mask = vec![0u8; n * n];
    let count = rng.gen_range(config.change_shape_count_range.0..=config.change_shape_count_range.1);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let side = rng.gen_range(config.shape_side_range.0..=config.shape_side_range.1);
        let top = rng.gen_range(0..=n - side);
        let left = rng.gen_range(0..=n - side);
        let a = config.change_intensity;
        let delta: Vec<f64> = (0..c).map(|_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 }).collect();
        for y in top..top + side {
            for x in left..left + side {
                mask[y * n + x] = 1;
                for (ch, d) in delta.iter().enumerate() {
                    let i = ch * n * n + y * n + x;
                    post[i] = pre[i] + d;
                }
            }
        }
        shapes.push(PlantedShape { top, left, side });
    }
    let (bl, bh) = config.nuisance_brightness_range;
    let shift = if bh > bl { rng.gen_range(bl..bh) } else { bl };
    let tex = config.nuisance_texture_level;
    for v in post.iter_mut() {
        *v += shift;
        if tex > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            *v += tex * z;
        }
    }
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<_>>();
    let sample = BitemporalSample::new(
        id,
        ImagePlane::new(n, n, c, to_f32(pre), Vec::new())?,
        ImagePlane::new(n, n, c, to_f32(post), Vec::new())?,
        ChangeMask::new(n, n, mask)?,
    )?;
    Ok(SyntheticSample { sample, nuisance: shift, shapes })
}
