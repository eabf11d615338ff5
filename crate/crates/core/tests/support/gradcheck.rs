//! Finite-difference gradient checks in double precision, shared by the
//! core tests and the acceptance harness.

use ldguid_core::backbones::{forward_graph, init_backbone_generic, BackboneArchConfig, BackboneKind};
use ldguid_core::de::{decode_adversarial_graph, decode_conditional_graph, encode_graph, init_de_generic, DeArchConfig};
use ldguid_core::graph::Graph;
use ldguid_core::objectives::{de_loss_graph, grad_check, grad_check_piecewise, segmentation_loss, total_loss_graph};
use ldguid_core::params::ParamSet;
use ldguid_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TOL: f64 = 1e-6;
pub const PROBES: usize = 50;
// ε trades truncation error (curvature) against f64 roundoff in an O(1) loss,
// which swamps partials near 1e-8 when ε is small. ReLU convnets are
// piecewise low-order in any one weight and take a large ε; softmax attention
// has real curvature; plain cross-entropy has no roundoff floor to speak of.
// Probes whose ±ε straddles a ReLU/abs/max-pool kink are redrawn by the checker.
const EPS_RELU: f64 = 2e-2;
const EPS_ATTENTION: f64 = 1e-3;
const EPS_SMOOTH: f64 = 1e-4;
const SIZE: usize = 16;

/// Standard-normal entries, like a per-channel normalized image.
fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn with_prefix(sets: &[(&str, &ParamSet<f64>)]) -> ParamSet<f64> {
    let mut out = ParamSet::new();
    for (prefix, set) in sets {
        for (name, t) in set.iter() {
            out.insert(format!("{prefix}/{name}"), t.clone());
        }
    }
    out
}

fn part(all: &ParamSet<f64>, prefix: &str) -> ParamSet<f64> {
    let mut out = ParamSet::new();
    for (name, t) in all.iter() {
        if let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_prefix('/')) {
            out.insert(rest, t.clone());
        }
    }
    out
}

struct Fixture {
    de_arch: DeArchConfig,
    pre: Tensor<f64>,
    post: Tensor<f64>,
    mask: Vec<u8>,
}

fn fixture(seed: u64, size: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let de_arch = DeArchConfig { in_channels: 2, c_z: 2, base_width: 3, image_size: size };
    let pre = rand_tensor(&[2, size, size], &mut rng);
    let post = rand_tensor(&[2, size, size], &mut rng);
    let mask = (0..size * size).map(|_| u8::from(rng.gen_bool(0.3))).collect();
    Fixture { de_arch, pre, post, mask }
}

fn de_params(f: &Fixture, seed: u64) -> ParamSet<f64> {
    let de = init_de_generic::<f64>(&f.de_arch, seed).unwrap();
    with_prefix(&[("enc", &de.encoder), ("dec", &de.decoder), ("adv", &de.adversary)])
}

/// `L_D`, plus `seg + λ·L_D` through `kind` when a backbone is given, with the
/// tape's branch signature.
fn loss_and_grad(f: &Fixture, all: &ParamSet<f64>, beta: f64, backbone: Option<(BackboneKind, &BackboneArchConfig, f64)>) -> (f64, ParamSet<f64>, u64) {
    let (es, ds, as_, bs) = (part(all, "enc"), part(all, "dec"), part(all, "adv"), part(all, "bb"));
    let mut g = Graph::<f64>::new();
    let enc = es.bind(&mut g, true);
    let dec = ds.bind(&mut g, true);
    let adv = as_.bind(&mut g, true);
    let bb = bs.bind(&mut g, true);
    let pre = g.input(f.pre.clone());
    let post = g.input(f.post.clone());
    let z = encode_graph(&mut g, &enc, pre, post);
    let x_hat = decode_conditional_graph(&mut g, &dec, pre, z);
    let x_breve = decode_adversarial_graph(&mut g, &adv, z);
    let (l_d, _, _) = de_loss_graph(&mut g, x_hat, x_breve, post, beta);
    let loss = match backbone {
        None => l_d,
        Some((kind, arch, lambda)) => {
            let logits = forward_graph(&mut g, kind, arch, &bb, pre, post, Some(z));
            let seg = g.cross_entropy2(logits, &f.mask);
            total_loss_graph(&mut g, seg, l_d, lambda)
        }
    };
    let grads = g.backward(loss);
    let out = with_prefix(&[
        ("enc", &es.collect_grads(&enc, &grads)),
        ("dec", &ds.collect_grads(&dec, &grads)),
        ("adv", &as_.collect_grads(&adv, &grads)),
        ("bb", &bs.collect_grads(&bb, &grads)),
    ]);
    (g.scalar(loss), out, g.branch_signature())
}

/// Worst relative error of `L_D` for each β in {0, 0.5, 5}.
pub fn de_loss_errors() -> Vec<(f64, f64)> {
    let f = fixture(1, SIZE);
    let params = de_params(&f, 2);
    assert!(params.num_scalars() <= 10_000);
    [0.0, 0.5, 5.0]
        .into_iter()
        .map(|beta| (beta, grad_check_piecewise(|p| loss_and_grad(&f, p, beta, None), &params, EPS_RELU, PROBES, 3).unwrap()))
        .collect()
}

/// Worst relative error of `seg + λ·L_D` composed through `kind`.
pub fn total_loss_error(kind: BackboneKind) -> f64 {
    let (arch, eps) = match kind {
        BackboneKind::Unet => (BackboneArchConfig { base_width: 3, depth: 2, ..BackboneArchConfig::default() }, EPS_RELU),
        BackboneKind::Bit => (
            BackboneArchConfig { base_width: 3, token_count: 4, transformer_dim: 8, transformer_layers: 1, ..BackboneArchConfig::default() },
            EPS_ATTENTION,
        ),
    };
    let f = fixture(4, SIZE);
    let arch = BackboneArchConfig { in_channels: 2, z_channels: f.de_arch.c_z, ..arch };
    let bb = init_backbone_generic::<f64>(kind, &arch, 5).unwrap();
    let params = with_prefix(&[("bb", &bb.params)]);
    let mut all = de_params(&f, 6);
    for (name, t) in params.iter() {
        all.insert(name.clone(), t.clone());
    }
    assert!(all.num_scalars() <= 10_000, "{}", all.num_scalars());
    grad_check_piecewise(|p| loss_and_grad(&f, p, 0.5, Some((kind, &arch, 0.1))), &all, eps, PROBES, 7).unwrap()
}

/// Worst relative error of the cross-entropy gradient, and the gap between
/// the tape's loss value and the direct one.
pub fn segmentation_loss_error() -> (f64, f64) {
    let f = fixture(8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = Tensor::from_vec(&[2, 8, 8], (0..128).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let mut params = ParamSet::new();
    params.insert("logits", logits.clone());
    let fun = |p: &ParamSet<f64>| {
        let mut g = Graph::<f64>::new();
        let b = p.bind(&mut g, true);
        let loss = g.cross_entropy2(b.var("logits"), &f.mask);
        let grads = g.backward(loss);
        (g.scalar(loss), p.collect_grads(&b, &grads))
    };
    let err = grad_check(fun, &params, EPS_SMOOTH, PROBES, 10).unwrap();
    let mask = ldguid_core::image::ChangeMask::new(8, 8, f.mask.clone()).unwrap();
    let direct = segmentation_loss(&logits.cast(), &mask).unwrap();
    (err, (direct - fun(&params).0).abs())
}
