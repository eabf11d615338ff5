//! Disentanglement probe and the β ablation driver.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::de::{DeArchConfig, LatentDifference};
use crate::error::{Error, Result};
use crate::image::BitemporalSample;
use crate::trainer::{self, NoObserver, TrainConfig};

pub const PROBE_RIDGE: f64 = 1e-3;
pub const PROBE_MIN_SAMPLES: usize = 20;

/// Held-out MSE of a linear ridge regression from channel-pooled `Z` to the
/// nuisance label, on a seeded 70/30 split.
///
/// Features and labels are centered on training means, so the intercept is
/// unpenalized and a constant label is predicted exactly.
pub fn nuisance_probe(latents: &[LatentDifference], labels: &[f64], seed: u64) -> Result<f64> {
    let n = latents.len();
    if n != labels.len() {
        return Err(crate::error::shape_err("probe labels", n, labels.len()));
    }
    if n < PROBE_MIN_SAMPLES {
        return Err(Error::TooFewSamples { needed: PROBE_MIN_SAMPLES, got: n });
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(alloc::string::String::from("non-finite probe label")));
    }
    let feats: Vec<Vec<f64>> = latents.iter().map(LatentDifference::pooled).collect();
    let d = feats[0].len();
    if feats.iter().any(|f| f.len() != d) {
        return Err(crate::error::shape_err("probe features", d, "mixed channel counts"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (7 * n + 5) / 10;
    let (train, test) = idx.split_at(n_train);

    let mean_of = |col: &dyn Fn(usize) -> f64| train.iter().map(|&i| col(i)).sum::<f64>() / train.len() as f64;
    let x_mean: Vec<f64> = (0..d).map(|j| mean_of(&|i| feats[i][j])).collect();
    let y_mean = mean_of(&|i| labels[i]);

    let x = DMatrix::from_fn(train.len(), d, |r, j| feats[train[r]][j] - x_mean[j]);
    let y = DVector::from_fn(train.len(), |r, _| labels[train[r]] - y_mean);
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * PROBE_RIDGE;
    let rhs = x.transpose() * y;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidValue(alloc::string::String::from("probe system is not positive definite")))?
        .solve(&rhs);

    let err: f64 = test
        .iter()
        .map(|&i| {
            let pred = y_mean + (0..d).map(|j| (feats[i][j] - x_mean[j]) * w[j]).sum::<f64>();
            (pred - labels[i]) * (pred - labels[i])
        })
        .sum();
    Ok(err / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub rec_loss: f64,
    pub adv_loss: f64,
}

/// Pretrains one DE per β with the same seed and budget and reports the
/// reconstruction and adversary losses of the final weights on `dataset`.
pub fn beta_sweep(dataset: &[BitemporalSample], arch: &DeArchConfig, betas: &[f64], config: &TrainConfig) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(Error::InvalidValue(alloc::string::String::from("no β values to sweep")));
    }
    if let Some(b) = betas.iter().find(|b| !b.is_finite() || **b < 0.0) {
        return Err(Error::InvalidValue(alloc::format!("β must be finite and non-negative, got {b}")));
    }
    betas
        .iter()
        .map(|&beta| {
            let cfg = TrainConfig { beta, ..config.clone() };
            let out = trainer::pretrain_de(dataset, arch, &cfg, &mut NoObserver)?;
            let (rec_loss, adv_loss) = trainer::evaluate_de(&out.de, dataset)?;
            Ok(SweepRow { beta, rec_loss, adv_loss })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn latent(v: &[f32]) -> LatentDifference {
        let c = v.len();
        let data = v.iter().flat_map(|&x| [x; 4]).collect();
        LatentDifference::from_tensor(Tensor::from_vec(&[c, 2, 2], data).unwrap()).unwrap()
    }

    #[test]
    fn constant_labels_are_predicted_exactly() {
        let z: Vec<_> = (0..30).map(|i| latent(&[i as f32 * 0.1, (i as f32).sin()])).collect();
        let mse = nuisance_probe(&z, &[0.7; 30], 3).unwrap();
        assert!(mse < 1e-20, "{mse}");
    }

    #[test]
    fn linear_labels_are_recovered() {
        let z: Vec<_> = (0..40).map(|i| latent(&[i as f32 * 0.05, (i as f32 * 0.7).cos()])).collect();
        let y: Vec<f64> = z.iter().map(|l| 2.0 * l.pooled()[0] - l.pooled()[1]).collect();
        assert!(nuisance_probe(&z, &y, 0).unwrap() < 1e-4);
    }

    #[test]
    fn too_few_samples() {
        let z: Vec<_> = (0..19).map(|i| latent(&[i as f32])).collect();
        assert_eq!(nuisance_probe(&z, &[0.0; 19], 0), Err(Error::TooFewSamples { needed: 20, got: 19 }));
    }
}
