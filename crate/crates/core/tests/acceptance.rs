//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{injection_gap, randomize, rng, velocity_grad_errors};
use rand::Rng;
use rectiflow::degrade::{
    apply_blur, apply_meta, compress, degrade, gaussian_kernel, BlurKernel, DegradationMeta, DegradationSpec, GaussianParams,
    MaskKind,
};
use rectiflow::flow::{
    euler_sample, flow_loss, interpolate, meanvalue_sample, oracle_velocity, sweep_midpoint, CountingField, FnField, SamplePair,
    SamplerConfig, SweepItem,
};
use rectiflow::pipeline::evaluate::item_seed;
use rectiflow::pipeline::{
    degraded_baseline, degraded_input, enhance, eval_items, evaluate, load_checkpoint, measure_throughput, psnr, save_checkpoint,
    start_noise, toy_corpus, toy_dataset, EnhanceOptions, EvalItem, FlowModel, LrSchedule, Split, TrainConfig, Trainer,
};
use rectiflow::{Exec, Tensor};

const ORACLE_LOSS_MAX: f64 = 1e-10;
const ORACLE_T_MAX: f32 = 0.9;
const GRAD_REL_MAX: f64 = 1e-2;
const GRAD_H: f32 = 1e-3;
const ORDER_RANGE: (f64, f64) = (1.9, 2.1);
const LINEAR_TOL: f32 = 1e-6;
const GAIN_OVER_DEGRADED_DB: f64 = 1.0;
const GAIN_OVER_NO_FLOW_DB: f64 = 0.3;
const ABLATION_TIE_DB: f64 = 0.05;
const SPEEDUP_MIN: f64 = 3.0;
const BLUR_TOL: f32 = 1e-5;

const STEPS: usize = 5;
const EVAL_SEED: u64 = 1234;
const SWEEP_SEED: u64 = 4321;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn oracle_exactness() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z0 = Tensor::rand_uniform(&[3, 8, 8], -10.0, 10.0, &mut r);
        let z1 = Tensor::rand_uniform(&[3, 8, 8], -10.0, 10.0, &mut r);
        let pair = SamplePair::new(z0, z1).unwrap();
        let t = r.gen_range(0.0..=ORACLE_T_MAX);
        let state = interpolate(&pair, t).unwrap();
        let v = oracle_velocity(&pair.z1, &state).unwrap();
        worst = worst.max(flow_loss(&pair, &v).unwrap());
    }
    outcome(worst <= ORACLE_LOSS_MAX, format!("worst loss {worst:.2e} over 100 pairs, t in [0, {ORACLE_T_MAX}]"))
}

fn gradient_checks() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    let mut groups = 0;
    for seed in [1, 2, 3] {
        for (name, err) in velocity_grad_errors(seed, GRAD_H) {
            groups += 1;
            if !(err <= worst.1) {
                worst = (name, err);
            }
        }
    }
    outcome(
        worst.1 <= GRAD_REL_MAX,
        format!("{groups} group checks, worst {:.2e} at {}", worst.1, worst.0),
    )
}

fn zero_injection() -> Outcome {
    let ok = injection_gap(21, 10);
    outcome(ok, "10 inputs, conditioned == unconditioned bitwise")
}

fn euler_order() -> Outcome {
    let mut r = rng(31);
    let a = Tensor::rand_uniform(&[16], -2.0, 2.0, &mut r);
    let b = Tensor::rand_uniform(&[16], -2.0, 2.0, &mut r);
    let z0 = Tensor::rand_uniform(&[16], -1.0, 1.0, &mut r);
    let field = FnField(|_: &Tensor, t: f32, _: Option<&Tensor>| a.scale(t).add(&b));
    let exact: Vec<f64> = (0..16)
        .map(|i| z0.data()[i] as f64 + a.data()[i] as f64 / 2.0 + b.data()[i] as f64)
        .collect();
    let error = |n: usize| {
        let z = euler_sample(&field, &z0, None, &SamplerConfig::euler(n)).unwrap();
        z.data().iter().zip(&exact).map(|(&v, &e)| (v as f64 - e).abs()).fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [5, 10, 20, 40].iter().map(|&n| error(n)).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&q| q >= ORDER_RANGE.0 && q <= ORDER_RANGE.1);
    outcome(pass, format!("ratios {}", fmt_list(&ratios, 4)))
}

fn step_accounting() -> Outcome {
    let field = || CountingField::new(FnField(|z: &Tensor, _: f32, _: Option<&Tensor>| Ok(z.scale(-0.5))));
    let z0 = Tensor::zeros(&[3, 4, 4]);
    let e = field();
    euler_sample(&e, &z0, None, &SamplerConfig::euler(STEPS)).unwrap();
    let m = field();
    meanvalue_sample(&m, &z0, None, &SamplerConfig::mean_value(STEPS, 3)).unwrap();
    outcome(
        e.calls() == STEPS && m.calls() == 4,
        format!("euler N=5: {} evals, mean-value k=3: {} evals", e.calls(), m.calls()),
    )
}

fn linear_exactness() -> Outcome {
    let mut r = rng(41);
    let z0 = Tensor::randn(&[3, 8, 8], &mut r);
    let c = Tensor::randn(&[3, 8, 8], &mut r);
    let want = z0.add(&c).unwrap();
    let field = FnField(|_: &Tensor, _: f32, _: Option<&Tensor>| Ok(c.clone()));
    let mut worst = 0.0f32;
    for k in 0..STEPS {
        let z = meanvalue_sample(&field, &z0, None, &SamplerConfig::mean_value(STEPS, k)).unwrap();
        worst = z.data().iter().zip(want.data()).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    outcome(worst <= LINEAR_TOL, format!("worst endpoint error {worst:.2e} for k in 0..5"))
}

/// Training setup shared by every toy-benchmark run.
fn bench_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        total_steps: 10_000,
        tau_steps: 5_000,
        lr_schedule: LrSchedule::Cosine,
        ema_decay: Some(0.999),
        degradation: DegradationSpec::mid_range(),
        seed: 7,
        ..TrainConfig::default()
    };
    cfg.optimizer.lr = 1e-3;
    cfg
}

struct Bench {
    degraded: f64,
    full: f64,
    full_midpoint: usize,
    no_mid: f64,
    no_flow: f64,
    no_init: f64,
    no_init_midpoint: usize,
    full_model: FlowModel,
    test: Vec<EvalItem>,
    seconds: f64,
}

fn train(cfg: &TrainConfig, data: &rectiflow::pipeline::Dataset) -> FlowModel {
    let mut tr = Trainer::new(cfg.clone(), Exec::Parallel).unwrap();
    if cfg.ablation.use_initial_stage {
        tr.pretrain_tau(data, |_, _| {}).unwrap();
    }
    tr.train(data, |_| {}).unwrap();
    tr.model
}

/// Midpoint chosen by PSNR on a held-out validation set disjoint from the test images.
fn choose_midpoint(model: &FlowModel, val: &[EvalItem], cfg: &TrainConfig) -> usize {
    let items: Vec<SweepItem> = val
        .iter()
        .map(|it| {
            let lq = degraded_input(it, &cfg.degradation, SWEEP_SEED).unwrap();
            SweepItem {
                z0: start_noise(lq.shape(), item_seed(SWEEP_SEED + 1, it.id)),
                cond: Some(model.guidance(&lq, cfg.ablation.use_initial_stage).unwrap()),
                reference: it.clean.clone(),
            }
        })
        .collect();
    let metric = |out: &Tensor, r: &Tensor| psnr(&out.clamp(0.0, 1.0), r);
    sweep_midpoint(&model.field(), &items, STEPS, metric, 0.0, Exec::Parallel).unwrap().best
}

fn toy_benchmark() -> Bench {
    let start = Instant::now();
    let data = toy_dataset(256, 32, [1.0, 0.0, 0.0], 7).unwrap();
    let test = eval_items(&toy_dataset(64, 32, [0.0, 0.0, 1.0], 99).unwrap(), Split::Test);
    let val = eval_items(&toy_dataset(32, 32, [0.0, 1.0, 0.0], 55).unwrap(), Split::Val);
    let cfg = bench_config();
    let spec = &cfg.degradation;
    let score = |model: &FlowModel, sampler: SamplerConfig, use_initial_stage: bool| {
        let opts = EnhanceOptions {
            sampler,
            use_initial_stage,
            seed: 0,
        };
        evaluate(model, &test, spec, EVAL_SEED, &opts, Exec::Parallel).unwrap().mean_psnr
    };
    let degraded = degraded_baseline(&test, spec, EVAL_SEED, Exec::Parallel).unwrap().mean_psnr;

    let full_model = train(&cfg, &data);
    let full_midpoint = choose_midpoint(&full_model, &val, &cfg);
    let full = score(&full_model, SamplerConfig::mean_value(STEPS, full_midpoint), true);
    let no_mid = score(&full_model, SamplerConfig::euler(STEPS), true);

    let mut flowless = cfg.clone();
    flowless.ablation.use_flow = false;
    let no_flow = score(&train(&flowless, &data), SamplerConfig::euler(1), true);

    let mut initless = cfg.clone();
    initless.ablation.use_initial_stage = false;
    let initless_model = train(&initless, &data);
    let no_init_midpoint = choose_midpoint(&initless_model, &val, &initless);
    let no_init = score(&initless_model, SamplerConfig::mean_value(STEPS, no_init_midpoint), false);

    Bench {
        degraded,
        full,
        full_midpoint,
        no_mid,
        no_flow,
        no_init,
        no_init_midpoint,
        full_model,
        test,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn toy_quality(b: &Bench) -> Outcome {
    let pass = b.full - b.degraded >= GAIN_OVER_DEGRADED_DB && b.full - b.no_flow >= GAIN_OVER_NO_FLOW_DB;
    outcome(
        pass,
        format!(
            "full {:.3} dB (k={}), degraded {:.3} dB (gain {:+.3}, need {GAIN_OVER_DEGRADED_DB}), w/o flow {:.3} dB (gain {:+.3}, need {GAIN_OVER_NO_FLOW_DB}); three trainings in {:.0} s",
            b.full,
            b.full_midpoint,
            b.degraded,
            b.full - b.degraded,
            b.no_flow,
            b.full - b.no_flow,
            b.seconds
        ),
    )
}

fn ablation_order(b: &Bench) -> Outcome {
    let others = [("w/o mid", b.no_mid), ("w/o init", b.no_init), ("w/o flow", b.no_flow)];
    let pass = others.iter().all(|(_, p)| b.full >= p - ABLATION_TIE_DB);
    let list: Vec<String> = others.iter().map(|(n, p)| format!("{n} {p:.3}")).collect();
    outcome(
        pass,
        format!("full {:.3} dB vs {} (w/o init k={})", b.full, list.join(", "), b.no_init_midpoint),
    )
}

fn throughput(b: &Bench) -> Outcome {
    let cfg = bench_config();
    let inputs: Vec<Tensor> = b
        .test
        .iter()
        .map(|it| degraded_input(it, &cfg.degradation, EVAL_SEED).unwrap())
        .collect();
    let run = |sampler| {
        let opts = EnhanceOptions {
            sampler,
            use_initial_stage: true,
            seed: 0,
        };
        measure_throughput(&b.full_model, &inputs, &opts, Exec::Parallel).unwrap()
    };
    let mv = run(SamplerConfig::mean_value(STEPS, 3));
    let eu = run(SamplerConfig::euler(20));
    let speedup = mv.images_per_second / eu.images_per_second;
    outcome(
        speedup >= SPEEDUP_MIN,
        format!(
            "{} images: mean-value {:.1} img/s, euler-20 {:.1} img/s, speedup {speedup:.2}x",
            inputs.len(),
            mv.images_per_second,
            eu.images_per_second
        ),
    )
}

fn blur_oracle(x: &Tensor, k: &BlurKernel) -> Tensor {
    let (c, h, w) = x.chw().unwrap();
    let s = k.size() as i64;
    let r = s / 2;
    let mirror = |i: i64, n: i64| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let mut out = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for y in 0..h as i64 {
            for xx in 0..w as i64 {
                let mut acc = 0.0f64;
                for ky in 0..s {
                    for kx in 0..s {
                        let sy = mirror(y + ky - r, h as i64);
                        let sx = mirror(xx + kx - r, w as i64);
                        acc += k.at(ky as usize, kx as usize) as f64 * x.data()[(ch * h + sy) * w + sx] as f64;
                    }
                }
                out[(ch * h + y as usize) * w + xx as usize] = acc;
            }
        }
    }
    Tensor::new(&[c, h, w], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

fn degradation_pipeline() -> Outcome {
    let images = toy_corpus(10, 32, 51);
    let specs = [
        DegradationSpec::default(),
        DegradationSpec::mid_range(),
        DegradationSpec::inpainting(MaskKind::Polyline),
        DegradationSpec::color(rectiflow::degrade::ColorKind::Jitter),
    ];
    let mut replay_ok = true;
    for (i, spec) in specs.iter().enumerate() {
        for (j, x) in images.iter().enumerate() {
            let (y, meta) = degrade(x, spec, &mut rng(100 * i as u64 + j as u64)).unwrap();
            let back: DegradationMeta = serde_json::from_str(&serde_json::to_string(&meta).unwrap()).unwrap();
            replay_ok &= apply_meta(x, &back).unwrap().bitwise_eq(&y);
        }
    }

    let mut r = rng(52);
    let mut blur_worst = 0.0f32;
    for size in [3, 5, 7, 9, 11] {
        let x = Tensor::rand_uniform(&[3, 17, 13], 0.0, 1.0, &mut r);
        let p = GaussianParams {
            sigma_x: r.gen_range(0.5..3.0),
            sigma_y: r.gen_range(0.5..3.0),
            angle: r.gen_range(0.0..std::f64::consts::PI),
            size,
        };
        let k = gaussian_kernel(&p).unwrap();
        let got = apply_blur(&x, &k).unwrap();
        let want = blur_oracle(&x, &k);
        blur_worst = got.data().iter().zip(want.data()).fold(blur_worst, |m, (a, b)| m.max((a - b).abs()));
    }

    let qualities = [10u8, 30, 50, 70, 90, 100];
    let means: Vec<f64> = qualities
        .iter()
        .map(|&q| images.iter().map(|x| psnr(&compress(x, q).unwrap(), x).unwrap()).sum::<f64>() / images.len() as f64)
        .collect();
    let monotone = means.windows(2).all(|w| w[1] > w[0]);
    outcome(
        replay_ok && blur_worst <= BLUR_TOL && monotone,
        format!(
            "replay {}, blur worst {blur_worst:.1e}, compression PSNR by quality {}",
            if replay_ok { "bitwise" } else { "MISMATCH" },
            fmt_list(&means, 2)
        ),
    )
}

fn checkpoint_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::default();
    let mut m = FlowModel::init(&cfg.model, &cfg.tau, 61).unwrap();
    randomize(&mut m.params, 0.05, 62, |n| n.starts_with("base.conv_out") || n.starts_with("ctrl.junction"));
    let opt = rectiflow::nn::OptimizerState::new(cfg.optimizer, &m.params);
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_checkpoint(&a, &m, Some(&opt), Some(&cfg)).unwrap();
    let back = load_checkpoint(&a).unwrap();
    save_checkpoint(&b, &back.model, back.opt.as_ref(), back.config.as_ref()).unwrap();
    let bytes_equal = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let mut r = rng(63);
    let z = Tensor::randn(&[3, 32, 32], &mut r);
    let g = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut r);
    let f1 = m.net.forward(&m.params, &z, 0.4, Some(&g)).unwrap();
    let f2 = back.model.net.forward(&back.model.params, &z, 0.4, Some(&g)).unwrap();
    let forward_equal = f1.bitwise_eq(&f2) && m.coarse_restore(&g).unwrap().bitwise_eq(&back.model.coarse_restore(&g).unwrap());
    outcome(
        bytes_equal && forward_equal,
        format!("bytes identical: {bytes_equal}, forward bitwise equal: {forward_equal}"),
    )
}

fn inpainting_diversity() -> Outcome {
    let spec = DegradationSpec::inpainting(MaskKind::Box);
    let cfg = TrainConfig {
        task: spec.task,
        degradation: spec.clone(),
        total_steps: 200,
        tau_steps: 50,
        seed: 71,
        ..TrainConfig::default()
    };
    let data = toy_dataset(32, 32, [1.0, 0.0, 0.0], 72).unwrap();
    let model = train(&cfg, &data);
    let mut diffs = Vec::new();
    let mut in_range = true;
    for (i, clean) in toy_corpus(4, 32, 73).iter().enumerate() {
        let (lq, meta) = degrade(clean, &spec, &mut rng(74 + i as u64)).unwrap();
        let DegradationMeta::Inpainting { mask, .. } = meta else {
            return outcome(false, "inpainting degradation produced no mask");
        };
        let m = mask.rasterize(32, 32);
        let run = |seed| {
            let opts = EnhanceOptions {
                sampler: SamplerConfig::mean_value(STEPS, 3),
                use_initial_stage: true,
                seed,
            };
            enhance(&model, &lq, &opts).unwrap().image
        };
        let (a, b) = (run(1), run(2));
        for img in [&a, &b] {
            let (lo, hi) = img.min_max();
            in_range &= lo >= 0.0 && hi <= 1.0;
        }
        let (mut sum, mut count) = (0.0f64, 0usize);
        for c in 0..3 {
            for (p, &keep) in m.values().iter().enumerate() {
                if keep == 0.0 {
                    sum += (a.data()[c * 1024 + p] - b.data()[c * 1024 + p]).abs() as f64;
                    count += 1;
                }
            }
        }
        diffs.push(if count == 0 { 0.0 } else { sum / count as f64 });
    }
    outcome(
        in_range && diffs.iter().all(|&d| d > 0.0),
        format!("masked-region mean |diff| per image {}, outputs in [0,1]: {in_range}", fmt_list(&diffs, 4)),
    )
}

fn fmt_list(v: &[f64], digits: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", items.join(", "))
}

fn report(id: usize, name: &str, start: Instant, o: Outcome, failures: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    if !o.pass {
        *failures += 1;
    }
    println!("{tag} {id:>2} {name}: {} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
}

fn main() {
    let mut failures = 0;
    macro_rules! check {
        ($id:expr, $name:expr, $e:expr) => {{
            let start = Instant::now();
            let o = $e;
            report($id, $name, start, o, &mut failures);
        }};
    }
    check!(1, "oracle exactness", oracle_exactness());
    check!(2, "gradient correctness", gradient_checks());
    check!(3, "zero injection at init", zero_injection());
    check!(4, "euler convergence order", euler_order());
    check!(5, "sampler step accounting", step_accounting());
    check!(6, "linear-flow exactness", linear_exactness());
    let start = Instant::now();
    let bench = toy_benchmark();
    report(7, "toy enhancement quality", start, toy_quality(&bench), &mut failures);
    check!(8, "ablation ordering", ablation_order(&bench));
    check!(9, "throughput", throughput(&bench));
    check!(10, "degradation pipeline", degradation_pipeline());
    check!(11, "checkpoint roundtrip", checkpoint_roundtrip());
    check!(12, "inpainting diversity", inpainting_diversity());
    println!("{} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
