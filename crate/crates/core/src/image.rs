//! Image pairs, change masks, and the pixel-level preprocessing applied before
//! training: normalized burn ratio and per-channel standardization.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A real-valued `height × width × channels` image, stored channel-planar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    /// `data[c·H·W + y·W + x]`
    data: Vec<f32>,
    channel_names: Vec<String>,
}

impl ImagePlane {
    /// Builds an image from channel-planar data. Rejects empty dimensions,
    /// non-finite values and a channel name list of the wrong length.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>, channel_names: Vec<String>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidValue(alloc::format!("image dims {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(shape_err("image data", height * width * channels, data.len()));
        }
        if !channel_names.is_empty() && channel_names.len() != channels {
            return Err(shape_err("channel names", channels, channel_names.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(alloc::format!("non-finite pixel value at flat index {i}")));
        }
        Ok(Self { height, width, channels, data, channel_names })
    }

    /// Builds an image from interleaved `H × W × C` data.
    pub fn from_hwc(height: usize, width: usize, channels: usize, hwc: &[f32], channel_names: Vec<String>) -> Result<Self> {
        if hwc.len() != height * width * channels {
            return Err(shape_err("image data", height * width * channels, hwc.len()));
        }
        let mut data = alloc::vec![0.0; hwc.len()];
        for (i, px) in hwc.chunks(channels.max(1)).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * height * width + i] = v;
            }
        }
        Self::new(height, width, channels, data, channel_names)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, alloc::vec![value; height * width * channels], Vec::new())
            .expect("valid constant image")
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Interleaved `H × W × C` copy of the pixels.
    pub fn to_hwc(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = alloc::vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for i in 0..n {
                out[i * self.channels + c] = self.data[c * n + i];
            }
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.iter().map(|&v| T::cst(v as f64)).collect())
            .expect("image shape")
    }

    /// Converts a `[C, H, W]` tensor back to an image (no channel names).
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3();
        Self::new(h, w, c, t.data().iter().map(|v| v.as_f64() as f32).collect(), Vec::new())
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.channels {
            return Err(shape_err("channel names", self.channels, names.len()));
        }
        self.channel_names = names;
        Ok(self)
    }
}

/// Binary per-pixel change mask; 1 means changed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChangeMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ChangeMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err("mask data", height * width, data.len()));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidValue(alloc::format!("mask value {} at index {i} is not 0/1", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: alloc::vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }
    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Co-registered pre/post images with their ground-truth change mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitemporalSample {
    pub id: String,
    pub pre: ImagePlane,
    pub post: ImagePlane,
    pub mask: ChangeMask,
}

impl BitemporalSample {
    pub fn new(id: impl Into<String>, pre: ImagePlane, post: ImagePlane, mask: ChangeMask) -> Result<Self> {
        if pre.dims() != post.dims() {
            return Err(shape_err("pre/post co-registration", pre.dims(), post.dims()));
        }
        if (mask.height, mask.width) != (pre.height, pre.width) {
            return Err(shape_err("mask vs image", (pre.height, pre.width), (mask.height, mask.width)));
        }
        Ok(Self { id: id.into(), pre, post, mask })
    }
}

/// Normalized burn ratio `(NIR − SWIR)/(NIR + SWIR)`; zero-denominator pixels map to 0.
pub fn compute_nbr(image: &ImagePlane, nir_channel: usize, swir_channel: usize) -> Result<ImagePlane> {
    for idx in [nir_channel, swir_channel] {
        if idx >= image.channels {
            return Err(Error::InvalidChannelIndex { index: idx, channels: image.channels });
        }
    }
    let data = image
        .plane(nir_channel)
        .iter()
        .zip(image.plane(swir_channel))
        .map(|(&nir, &swir)| burn_ratio(nir as f64, swir as f64) as f32)
        .collect();
    ImagePlane::new(image.height, image.width, 1, data, alloc::vec![String::from("NBR")])
}

/// Per-pixel normalized burn ratio in double precision.
pub fn burn_ratio(nir: f64, swir: f64) -> f64 {
    let den = nir + swir;
    if den > 0.0 {
        ((nir - swir) / den).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Sentinel-2 band order used by 12/13-band stacks: B01..B08, B8A, B09, (B10,) B11, B12.
/// Returns the indices of B08 (NIR) and B12 (SWIR) in `channel_names`, when present.
pub fn sentinel2_nbr_bands(channel_names: &[String]) -> Option<(usize, usize)> {
    let find = |tags: &[&str]| channel_names.iter().position(|n| tags.iter().any(|t| n.eq_ignore_ascii_case(t)));
    Some((find(&["B08", "B8"])?, find(&["B12"])?))
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Population statistics over every pixel of every image.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a ImagePlane>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sum.is_empty() {
                sum = alloc::vec![0.0; img.channels];
                sq = alloc::vec![0.0; img.channels];
            } else if sum.len() != img.channels {
                return Err(shape_err("channel statistics", sum.len(), img.channels));
            }
            for c in 0..img.channels {
                for &v in img.plane(c) {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += img.height * img.width;
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| num_traits::Float::sqrt((s / n - m * m).max(0.0)) as f32)
            .collect();
        Ok(Self { mean: mean.into_iter().map(|m| m as f32).collect(), std })
    }
}

/// Channelwise standardization `(x − mean)/std`.
pub fn normalize(image: &ImagePlane, stats: &ChannelStats) -> Result<ImagePlane> {
    if stats.mean.len() != image.channels || stats.std.len() != image.channels {
        return Err(shape_err("normalization statistics", image.channels, (stats.mean.len(), stats.std.len())));
    }
    if let Some(c) = stats.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::ZeroStd { channel: c });
    }
    let n = image.height * image.width;
    let data = image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / n;
            (v - stats.mean[c]) / stats.std[c]
        })
        .collect();
    ImagePlane::new(image.height, image.width, image.channels, data, image.channel_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_band(nir: f32, swir: f32) -> ImagePlane {
        ImagePlane::new(1, 1, 2, vec![nir, swir], Vec::new()).unwrap()
    }

    #[test]
    fn nbr_examples() {
        let v = compute_nbr(&two_band(0.6, 0.2), 0, 1).unwrap();
        assert!((v.data()[0] - 0.5).abs() < 1e-7);
        assert_eq!(compute_nbr(&two_band(0.3, 0.3), 0, 1).unwrap().data()[0], 0.0);
        assert_eq!(compute_nbr(&two_band(0.7, 0.0), 0, 1).unwrap().data()[0], 1.0);
        assert_eq!(compute_nbr(&two_band(0.0, 0.0), 0, 1).unwrap().data()[0], 0.0);
        assert_eq!(
            compute_nbr(&two_band(0.1, 0.1), 0, 2),
            Err(Error::InvalidChannelIndex { index: 2, channels: 2 })
        );
    }

    #[test]
    fn normalize_with_own_stats_standardizes() {
        let data: Vec<f32> = (0..48).map(|i| (i as f32 * 0.37).sin() * 3.0 + (i / 16) as f32).collect();
        let img = ImagePlane::new(4, 4, 3, data, Vec::new()).unwrap();
        let stats = ChannelStats::from_images([&img]).unwrap();
        let out = normalize(&img, &stats).unwrap();
        let own = ChannelStats::from_images([&out]).unwrap();
        for c in 0..3 {
            assert!(own.mean[c].abs() < 1e-6);
            assert!((own.std[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_identity_and_zero_std() {
        let img = ImagePlane::new(2, 2, 1, vec![0.5, -1.0, 2.0, 3.0], Vec::new()).unwrap();
        let id = ChannelStats { mean: vec![0.0], std: vec![1.0] };
        assert_eq!(normalize(&img, &id).unwrap(), img);
        let constant = ImagePlane::filled(2, 2, 1, 0.3);
        let stats = ChannelStats::from_images([&constant]).unwrap();
        assert_eq!(normalize(&constant, &stats), Err(Error::ZeroStd { channel: 0 }));
    }

    #[test]
    fn sample_rejects_misregistered_pair() {
        let a = ImagePlane::filled(4, 4, 3, 0.0);
        let b = ImagePlane::filled(4, 4, 1, 0.0);
        assert!(BitemporalSample::new("x", a.clone(), b, ChangeMask::zeros(4, 4)).is_err());
        assert!(BitemporalSample::new("x", a.clone(), a, ChangeMask::zeros(4, 5)).is_err());
    }

    #[test]
    fn hwc_round_trip() {
        let hwc: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let img = ImagePlane::from_hwc(2, 4, 3, &hwc, Vec::new()).unwrap();
        assert_eq!(img.get(1, 2, 1), hwc[(4 + 2) * 3 + 1]);
        assert_eq!(img.to_hwc(), hwc);
    }
}
