//! Scalar objectives of the framework.
//!
//! The DE bottleneck loss is `L(X̂, X̃) − β·L(X̆, X̃)`: reward recovering the
//! post image through the conditional decoder while penalizing how well the
//! unconditional adversary can recover it from `Z`. The adversary itself is
//! trained on `L(X̆, X̃)` alone; see [`crate::trainer`] for the alternation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::de::{self, DeParams};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{BitemporalSample, ChangeMask, ImagePlane};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionMetric {
    #[default]
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda: f64,
    pub reconstruction_metric: ReconstructionMetric,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.5, lambda: 0.1, reconstruction_metric: ReconstructionMetric::Mse }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidValue(alloc::format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean squared difference over all pixels and channels.
pub fn reconstruction_loss(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err("reconstruction loss", a.dims(), b.dims()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64) * (x as f64 - y as f64)).sum();
    Ok(s / a.data().len() as f64)
}

pub fn de_loss(x_hat: &ImagePlane, x_breve: &ImagePlane, post: &ImagePlane, beta: f64) -> Result<f64> {
    let rec = reconstruction_loss(x_hat, post)?;
    let adv = reconstruction_loss(x_breve, post)?;
    Ok(rec - beta * adv)
}

pub fn adversary_loss(x_breve: &ImagePlane, post: &ImagePlane) -> Result<f64> {
    reconstruction_loss(x_breve, post)
}

/// Mean two-class cross-entropy of `[2, H, W]` logits against the mask.
pub fn segmentation_loss(logits: &Tensor<f32>, mask: &ChangeMask) -> Result<f64> {
    let (c, h, w) = logits.dims3();
    if c != 2 || (h, w) != (mask.height(), mask.width()) {
        return Err(shape_err("segmentation logits", (2, mask.height(), mask.width()), (c, h, w)));
    }
    let n = h * w;
    let d = logits.data();
    let s: f64 = mask
        .data()
        .iter()
        .enumerate()
        .map(|(p, &y)| {
            let (l0, l1) = (d[p] as f64, d[n + p] as f64);
            let m = l0.max(l1);
            let lse = m + Float::ln(Float::exp(l0 - m) + Float::exp(l1 - m));
            lse - if y == 0 { l0 } else { l1 }
        })
        .sum();
    Ok(s / n as f64)
}

pub fn total_loss(seg: f64, de: f64, lambda: f64) -> f64 {
    seg + lambda * de
}

/// Graph form of the bottleneck loss; returns `(loss, reconstruction, adversary)` nodes.
pub fn de_loss_graph<T: Scalar>(g: &mut Graph<T>, x_hat: Var, x_breve: Var, post: Var, beta: f64) -> (Var, Var, Var) {
    let rec = g.mse(x_hat, post);
    let adv = g.mse(x_breve, post);
    let loss = g.combine(&[(rec, T::one()), (adv, T::cst(-beta))]);
    (loss, rec, adv)
}

/// Graph form of `seg + λ·L_D`.
pub fn total_loss_graph<T: Scalar>(g: &mut Graph<T>, seg: Var, de: Var, lambda: f64) -> Var {
    g.combine(&[(seg, T::one()), (de, T::cst(lambda))])
}

/// Per-sample bottleneck loss with the DE forwards.
pub fn sample_de_loss(params: &DeParams, sample: &BitemporalSample, beta: f64) -> Result<f64> {
    let z = de::encode(params, &sample.pre, &sample.post)?;
    let x_hat = de::decode_conditional(params, &sample.pre, &z)?;
    let x_breve = de::decode_adversarial(params, &z)?;
    de_loss(&x_hat, &x_breve, &sample.post, beta)
}

/// Empirical risk: the mean bottleneck loss over a batch.
pub fn estimate_risk(params: &DeParams, batch: &[BitemporalSample], beta: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for s in batch {
        total += sample_de_loss(params, s, beta)?;
    }
    Ok(total / batch.len() as f64)
}

/// Compares analytic partial derivatives against central differences on
/// `n_probes` randomly drawn scalar parameters.
///
/// `scalar_fn` returns the function value and its analytic gradient with the
/// same layout as `params`. Returns `max |a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(scalar_fn: F, params: &ParamSet<f64>, epsilon: f64, n_probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&ParamSet<f64>) -> (f64, ParamSet<f64>),
{
    grad_check_piecewise(
        |p| {
            let (f, g) = scalar_fn(p);
            (f, g, 0)
        },
        params,
        epsilon,
        n_probes,
        seed,
    )
}

/// [`grad_check`] for piecewise-smooth functions.
///
/// `scalar_fn` also returns a branch signature (see
/// [`Graph::branch_signature`]). A probe whose `p ± ε` evaluations do not share
/// the signature of `p` straddles a kink, where the central difference does
/// not estimate the derivative; it is redrawn. At most `20·n_probes` draws are
/// made before giving up.
pub fn grad_check_piecewise<F>(scalar_fn: F, params: &ParamSet<f64>, epsilon: f64, n_probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&ParamSet<f64>) -> (f64, ParamSet<f64>, u64),
{
    if !(epsilon > 0.0) || n_probes == 0 {
        return Err(Error::InvalidValue(alloc::format!("epsilon {epsilon} and n_probes {n_probes} must be positive")));
    }
    let (_, analytic, branches) = scalar_fn(params);
    let index: Vec<(String, usize)> =
        params.iter().flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i))).collect();
    if index.is_empty() {
        return Err(Error::InvalidValue(String::from("no parameters to probe")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let (mut accepted, mut draws) = (0usize, 0usize);
    while accepted < n_probes {
        if draws == 20 * n_probes {
            return Err(Error::InvalidValue(alloc::format!("only {accepted} of {draws} probes avoided a kink")));
        }
        draws += 1;
        let (name, i) = &index[rng.gen_range(0..index.len())];
        let a = analytic.get(name)?.data()[*i];
        let orig = params.get(name)?.data()[*i];
        let mut eval_at = |v: f64| {
            probe.get_mut(name).expect("probe parameter").data_mut()[*i] = v;
            let (f, _, b) = scalar_fn(&probe);
            (f, b)
        };
        let (fp, bp) = eval_at(orig + epsilon);
        let (fm, bm) = eval_at(orig - epsilon);
        probe.get_mut(name).expect("probe parameter").data_mut()[*i] = orig;
        if bp != branches || bm != branches {
            continue;
        }
        accepted += 1;
        let numeric = (fp - fm) / (2.0 * epsilon);
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFiniteGradient { name: name.clone(), index: *i });
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn px(v: f32) -> ImagePlane {
        ImagePlane::new(1, 1, 1, vec![v], vec![]).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let a = ImagePlane::new(1, 2, 1, vec![0.0, 0.0], vec![]).unwrap();
        let b = ImagePlane::new(1, 2, 1, vec![1.0, 1.0], vec![]).unwrap();
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 1.0);
        assert!((reconstruction_loss(&px(0.8), &px(1.0)).unwrap() - 0.04).abs() < 1e-7);
        assert!(matches!(reconstruction_loss(&a, &px(1.0)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn de_loss_examples() {
        let post = px(1.0);
        assert!((de_loss(&post, &px(0.5), &post, 0.5).unwrap() + 0.125).abs() < 1e-12);
        let v = de_loss(&px(0.8), &px(0.5), &post, 1.5).unwrap();
        assert!((v + 0.335).abs() < 1e-7, "{v}");
        let rec = reconstruction_loss(&px(0.8), &post).unwrap();
        assert_eq!(de_loss(&px(0.8), &px(0.5), &post, 0.0).unwrap(), rec);
        assert_eq!(adversary_loss(&px(0.5), &post).unwrap(), 0.25);
        assert_eq!(adversary_loss(&post, &post).unwrap(), 0.0);
    }

    #[test]
    fn segmentation_examples() {
        let mask = ChangeMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let zeros = Tensor::zeros(&[2, 2, 2]);
        assert!((segmentation_loss(&zeros, &mask).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);

        let mut confident = Tensor::zeros(&[2, 2, 2]);
        for (p, &y) in mask.data().iter().enumerate() {
            confident.data_mut()[y as usize * 4 + p] = 20.0;
        }
        assert!(segmentation_loss(&confident, &mask).unwrap() < 1e-8);

        // Class order is (no-change, change). The true class scoring 1 over 0
        // costs ln(1 + e) − 1; the wrong class scoring 1 costs ln(1 + e).
        let m1 = ChangeMask::new(1, 1, vec![1]).unwrap();
        let favoured = Tensor::from_vec(&[2, 1, 1], vec![0.0f32, 1.0]).unwrap();
        let v = segmentation_loss(&favoured, &m1).unwrap();
        assert!((v - ((1.0 + core::f64::consts::E).ln() - 1.0)).abs() < 1e-7);
        assert!((v - 0.3133).abs() < 1e-4);
        let against = Tensor::from_vec(&[2, 1, 1], vec![1.0f32, 0.0]).unwrap();
        assert!((segmentation_loss(&against, &m1).unwrap() - 1.3133).abs() < 1e-4);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.7, -0.1, 0.0), 0.7);
        assert!((total_loss(0.7, -0.1, 0.5) - 0.65).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn grad_check_on_quadratic_and_constant() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(&[4], vec![0.3, -1.2, 2.5, 0.01]).unwrap());
        let quad = |ps: &ParamSet<f64>| {
            let t = ps.get("a").unwrap();
            let f = t.data().iter().map(|v| v * v).sum();
            let mut g = ParamSet::new();
            g.insert("a", t.map(|v| 2.0 * v));
            (f, g)
        };
        assert!(grad_check(quad, &p, 1e-4, 16, 0).unwrap() < 1e-9);
        let constant = |ps: &ParamSet<f64>| (3.0, ps.zeros_like());
        assert_eq!(grad_check(constant, &p, 1e-4, 8, 0).unwrap(), 0.0);
        let broken = |ps: &ParamSet<f64>| {
            let mut g = ps.zeros_like();
            g.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = f64::NAN));
            (0.0, g)
        };
        assert!(matches!(grad_check(broken, &p, 1e-4, 1, 0), Err(Error::NonFiniteGradient { .. })));
    }

    #[test]
    fn piecewise_check_skips_probes_across_a_kink() {
        // f = Σ|a|; a[3] = 0.01 sits within ε of the kink at zero.
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(&[4], vec![0.3, -1.2, 2.5, 0.01]).unwrap());
        let abs = |ps: &ParamSet<f64>| {
            let t = ps.get("a").unwrap();
            let mut g = ParamSet::new();
            g.insert("a", t.map(|v| v.signum()));
            let signs = t.data().iter().fold(0u64, |h, v| 2 * h + u64::from(*v > 0.0));
            (t.data().iter().map(|v| v.abs()).sum::<f64>(), g, signs)
        };
        assert!(grad_check_piecewise(abs, &p, 0.05, 32, 1).unwrap() < 1e-9);
        let blind = |ps: &ParamSet<f64>| {
            let (f, g, _) = abs(ps);
            (f, g)
        };
        assert!(grad_check(blind, &p, 0.05, 32, 1).unwrap() > 0.5);
        let always = |ps: &ParamSet<f64>| {
            let (f, g, _) = abs(ps);
            // every probe moves the bit pattern, so every probe looks like a kink
            (f, g, ps.get("a").unwrap().data().iter().fold(0u64, |h, v| h.wrapping_add(v.to_bits())))
        };
        assert!(matches!(grad_check_piecewise(always, &p, 0.05, 4, 1), Err(Error::InvalidValue(_))));
    }
}
