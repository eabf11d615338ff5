//! Overlap metrics over the positive (change) class and error maps.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::image::ChangeMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_masks(pred: &ChangeMask, truth: &ChangeMask) -> Result<Self> {
        check(pred, truth)?;
        let mut c = Self::default();
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// `tp / (tp + fp + fn)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// `2tp / (2tp + fp + fn)`; 1 when both masks are empty.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }
}

fn check(pred: &ChangeMask, truth: &ChangeMask) -> Result<()> {
    let (a, b) = ((pred.height(), pred.width()), (truth.height(), truth.width()));
    if a != b {
        return Err(shape_err("mask pair", b, a));
    }
    Ok(())
}

pub fn confusion(pred: &ChangeMask, truth: &ChangeMask) -> Result<Confusion> {
    Confusion::from_masks(pred, truth)
}

pub fn iou(c: &Confusion) -> f64 {
    c.iou()
}

pub fn f1(c: &Confusion) -> f64 {
    c.f1()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive,
    FalseNegative,
    FalsePositive,
    TrueNegative,
}

impl Outcome {
    pub fn of(pred: u8, truth: u8) -> Self {
        match (pred, truth) {
            (1, 1) => Self::TruePositive,
            (0, 1) => Self::FalseNegative,
            (1, 0) => Self::FalsePositive,
            _ => Self::TrueNegative,
        }
    }

    /// TP white, FN red, FP green, TN black.
    pub fn color(self) -> [u8; 3] {
        match self {
            Self::TruePositive => [255, 255, 255],
            Self::FalseNegative => [255, 0, 0],
            Self::FalsePositive => [0, 255, 0],
            Self::TrueNegative => [0, 0, 0],
        }
    }
}

/// Row-major RGB error map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

impl ErrorMap {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

pub fn render_error_map(pred: &ChangeMask, truth: &ChangeMask) -> Result<ErrorMap> {
    check(pred, truth)?;
    let rgb = pred.data().iter().zip(truth.data()).flat_map(|(&p, &t)| Outcome::of(p, t).color()).collect();
    Ok(ErrorMap { height: truth.height(), width: truth.width(), rgb })
}

/// Mean and sample standard deviation; the deviation is 0 below two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, num_traits::Float::sqrt(var))
}
