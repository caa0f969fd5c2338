mod common;

use common::rng;
use rectiflow::degrade::DegradationSpec;
use rectiflow::nn::{AdamWConfig, OptimizerState, VelocityNet};
use rectiflow::pipeline::{
    eval_items, psnr, save_checkpoint, toy_dataset, Dataset, Split, TrainConfig, Trainer,
};
use rectiflow::{Exec, Tensor};

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        resolution: 16,
        batch_size: 4,
        seed,
        optimizer: AdamWConfig {
            lr: 1e-3,
            ..AdamWConfig::default()
        },
        tau_steps: 0,
        ..TrainConfig::default()
    }
}

fn corpus(n: usize, seed: u64) -> Dataset {
    toy_dataset(n, 16, [1.0, 0.0, 0.0], seed).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn overfits_a_single_triple() {
    let cfg = small_config(0);
    let (net, mut params) = VelocityNet::init(cfg.model.clone(), &mut rng(1)).unwrap();
    let mut r = rng(2);
    let z0 = Tensor::randn(&[3, 8, 8], &mut r);
    let z1 = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let guidance = z1.clone();
    let t = 0.4f32;
    let zt = z0.scale(1.0 - t).add(&z1.scale(t)).unwrap();
    let target = z1.sub(&z0).unwrap();
    let mut opt = OptimizerState::new(
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &params,
    );
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        let (l, g) = net.loss_and_grad(&params, &zt, t, Some(&guidance), &target).unwrap();
        loss = l;
        opt.step(&mut params, &g).unwrap();
    }
    assert!(loss < 1e-3, "loss after 500 steps: {loss}");
}

#[test]
fn loss_decreases_over_short_windows() {
    let data = corpus(32, 3);
    let mut tr = Trainer::new(small_config(4), Exec::Parallel).unwrap();
    let losses: Vec<f64> = (0..300).map(|_| {
        let b = tr.sample_batch(&data).unwrap();
        tr.step(&b).unwrap().loss
    }).collect();
    assert!(mean(&losses[250..]) < mean(&losses[..50]));
    assert!(mean(&losses[100..150]) < mean(&losses[..50]));
}

#[test]
fn training_curve_halves_within_2000_steps() {
    let data = corpus(64, 5);
    let mut cfg = small_config(6);
    cfg.total_steps = 2000;
    let mut tr = Trainer::new(cfg, Exec::Parallel).unwrap();
    let losses = tr.train(&data, |_| {}).unwrap();
    let first = mean(&losses[..100]);
    let last = mean(&losses[1900..]);
    assert!(last < 0.5 * first, "first {first:.4} last {last:.4}");
}

#[test]
fn seeded_runs_are_bitwise_reproducible() {
    let data = corpus(16, 7);
    let run = |exec: Exec| {
        let mut cfg = small_config(8);
        cfg.total_steps = 10;
        cfg.tau_steps = 3;
        let mut tr = Trainer::new(cfg.clone(), exec).unwrap();
        let tau = tr.pretrain_tau(&data, |_, _| {}).unwrap();
        let losses = tr.train(&data, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &tr.model, Some(&tr.opt), Some(&cfg)).unwrap();
        (tau, losses, std::fs::read(path).unwrap())
    };
    let a = run(Exec::Parallel);
    let b = run(Exec::Parallel);
    let c = run(Exec::Sequential);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.1, c.1);
    assert_eq!(a.2, c.2);
}

#[test]
fn initial_stage_learns_to_deblur() {
    let train = corpus(32, 9);
    let test = toy_dataset(16, 16, [0.0, 0.0, 1.0], 10).unwrap();
    let spec = DegradationSpec::blur_only([1.0, 1.5]);
    let mut cfg = small_config(11);
    cfg.degradation = spec.clone();
    cfg.tau_steps = 400;
    let mut tr = Trainer::new(cfg, Exec::Parallel).unwrap();
    tr.pretrain_tau(&train, |_, _| {}).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    let items = eval_items(&test, Split::Test);
    for it in &items {
        let lq = rectiflow::pipeline::degraded_input(it, &spec, 12).unwrap();
        before += psnr(&lq, &it.clean).unwrap();
        after += psnr(&tr.model.coarse_restore(&lq).unwrap(), &it.clean).unwrap();
    }
    let n = items.len() as f64;
    assert!(after / n > before / n + 0.5, "blurred {:.2} dB, restored {:.2} dB", before / n, after / n);
}

#[test]
fn ema_and_cosine_schedule() {
    let data = corpus(8, 13);
    let mut cfg = small_config(14);
    cfg.total_steps = 20;
    cfg.lr_schedule = rectiflow::pipeline::LrSchedule::Cosine;
    cfg.ema_decay = Some(0.9);
    let mut tr = Trainer::new(cfg.clone(), Exec::Parallel).unwrap();
    let init = tr.model.params.clone();
    tr.train(&data, |_| {}).unwrap();
    // Final learning rate is the last scheduled value.
    assert!(tr.opt.config.lr < 1e-5);
    assert_eq!(&tr.model.params, tr.ema.as_ref().unwrap());
    assert_ne!(tr.model.params, init);
}

#[test]
fn divergence_is_reported_with_context() {
    let data = corpus(4, 15);
    let mut tr = Trainer::new(small_config(16), Exec::Sequential).unwrap();
    for e in tr.model.params.iter_mut() {
        if e.name.starts_with("base.conv_out") {
            e.tensor = e.tensor.map(|_| f32::NAN);
        }
    }
    let b = tr.sample_batch(&data).unwrap();
    match tr.step(&b) {
        Err(rectiflow::Error::Diverged { step, times, .. }) => {
            assert_eq!(step, 1);
            assert_eq!(times.len(), 4);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
