#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rectiflow::nn::{ModelConfig, ParamStore, VelocityNet};
use rectiflow::Tensor;

/// Directions per parameter group in [`grad_errors`].
pub const DIRECTIONS: usize = 64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overwrites every parameter whose name matches `pick` with uniform noise.
pub fn randomize(params: &mut ParamStore, scale: f32, seed: u64, pick: impl Fn(&str) -> bool) {
    let mut r = rng(seed);
    for e in params.iter_mut() {
        if pick(&e.name) {
            for v in e.tensor.data_mut() {
                *v = r.gen_range(-scale..scale);
            }
        }
    }
}

/// A toy-width network whose zero-initialised layers carry random weights,
/// so that every parameter receives gradient.
pub fn live_net(seed: u64) -> (VelocityNet, ParamStore) {
    let (net, mut params) = VelocityNet::init(ModelConfig::toy(), &mut rng(seed)).unwrap();
    let zero: Vec<String> = net
        .zero_conv_ids()
        .into_iter()
        .chain(net.output_conv_ids())
        .map(|id| params.entries()[id.index()].name.clone())
        .collect();
    randomize(&mut params, 0.2, seed + 100, |n| zero.iter().any(|z| z == n));
    randomize(&mut params, 1.0, seed + 200, |n| n == "cond.gamma");
    (net, params)
}

pub fn mse64(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64
}

/// Central-difference check of every parameter group: the loss is
/// differenced along [`DIRECTIONS`] directions (largest entry at most 1, so no
/// coordinate moves by more than `h`, and Euclidean length at most 4), each
/// mixing the tape gradient of that group with a random direction. The summed
/// differences are compared with the summed tape directional derivatives.
/// Returns the relative error per group.
pub fn velocity_grad_errors(seed: u64, h: f32) -> Vec<(String, f64)> {
    let (net, params) = live_net(seed);
    let mut r = rng(seed + 7);
    let zt = Tensor::randn(&[3, 8, 8], &mut r);
    let guidance = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let target = Tensor::randn(&[3, 8, 8], &mut r).scale(0.1);
    let t = r.gen_range(0.0..0.99f32);
    let (_, grads) = net.loss_and_grad(&params, &zt, t, Some(&guidance), &target).unwrap();
    let loss_at = |p: &ParamStore| mse64(&net.forward(p, &zt, t, Some(&guidance)).unwrap(), &target);
    grad_errors(&params, grads.as_slice(), h, &mut r, loss_at)
}

pub fn grad_errors(
    params: &ParamStore,
    grads: &[Tensor],
    h: f32,
    r: &mut ChaCha8Rng,
    loss_at: impl Fn(&ParamStore) -> f64,
) -> Vec<(String, f64)> {
    let mut out = vec![];
    let mut work = params.clone();
    for (gi, entry) in params.entries().iter().enumerate() {
        let g = grads[gi].data();
        let gn = g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-30);
        let orig = entry.tensor.data().to_vec();
        let (mut fd, mut an) = (0.0f64, 0.0f64);
        for j in 0..DIRECTIONS {
            let noise: Vec<f64> = (0..g.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
            let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut d: Vec<f64> = g.iter().zip(&noise).map(|(&a, b)| a as f64 / gn + 0.5 * b / nn).collect();
            let l2 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dn = d.iter().fold(l2 / 4.0, |m, v| m.max(v.abs()));
            // Varying lengths keep scalar groups from repeating one perturbation.
            let len = 1.0 - j as f64 / (2 * DIRECTIONS) as f64;
            d.iter_mut().for_each(|v| *v *= len / dn);
            assert!(d.iter().all(|v| v.is_finite()), "{}: non-finite direction", entry.name);

            let shifted = |sign: f32| -> Vec<f32> { orig.iter().zip(&d).map(|(&p, &di)| p + sign * h * di as f32).collect() };
            let (plus, minus) = (shifted(1.0), shifted(-1.0));
            // Directional derivative over the perturbation actually representable in f32.
            an += g.iter().zip(plus.iter().zip(&minus)).map(|(&gi, (&p, &m))| gi as f64 * (p as f64 - m as f64)).sum::<f64>();
            work.iter_mut().nth(gi).unwrap().tensor.data_mut().copy_from_slice(&plus);
            let lp = loss_at(&work);
            work.iter_mut().nth(gi).unwrap().tensor.data_mut().copy_from_slice(&minus);
            fd += lp - loss_at(&work);
        }
        work.iter_mut().nth(gi).unwrap().tensor.data_mut().copy_from_slice(&orig);
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-30);
        if std::env::var("FD_DEBUG").is_ok() && err > 1e-2 {
            eprintln!("{} fd {fd:.6e} tape {an:.6e}", entry.name);
        }
        out.push((entry.name.clone(), err));
    }
    out
}

/// Largest pixel difference between conditioned and unconditioned outputs of
/// a freshly initialised network whose output layer is made non-zero.
pub fn injection_gap(seed: u64, inputs: usize) -> bool {
    let (net, mut params) = VelocityNet::init(ModelConfig::toy(), &mut rng(seed)).unwrap();
    randomize(&mut params, 0.05, seed + 1, |n| n.starts_with("base.conv_out"));
    let mut r = rng(seed + 2);
    (0..inputs).all(|_| {
        let zt = Tensor::randn(&[3, 16, 16], &mut r);
        let g = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut r);
        let t = r.gen_range(0.0..1.0f32);
        let with = net.forward(&params, &zt, t, Some(&g)).unwrap();
        let without = net.forward(&params, &zt, t, None).unwrap();
        with.bitwise_eq(&without) && with.data().iter().any(|&v| v != 0.0)
    })
}
