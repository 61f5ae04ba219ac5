//! Acceptance run over the toy pipeline. Prints one verdict line per
//! criterion and exits non-zero on any failure not listed in `KNOWN_GAPS`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdc_core::autodiff::{discretized_gaussian_mass, Binder, Graph, ParamMap};
use rdc_core::bitstream::{compress, crop, decompress};
use rdc_core::codec::{CodecConfig, CodecModel, ParamGroup, ANCHORS};
use rdc_core::cognition::{
    fit_probe, pretrain_proxy, probe_accuracy, toy_dataset, CognitionProxy, Dataset, LinearProbe, ProbeTrainConfig,
    ProxyConfig, ProxyTrainConfig,
};
use rdc_core::entropy::range_coder::PROB_TOTAL;
use rdc_core::entropy::{RangeDecoder, RangeEncoder, SymbolAlphabet};
use rdc_core::evaluation::diagnostics::high_frequency_ratio;
use rdc_core::evaluation::{bd_metric, finetune_probe, psnr, sweep_surface, BdFit, RdcPoint, SweepInputs, TradeoffSurface};
use rdc_core::gain::{GainKind, QuantMode};
use rdc_core::tensor::Tensor;
use rdc_core::training::{
    local_mse, local_mse_var, primary_pass, primary_pass_with_gains, stage1_loss, stage2_group, stage2_loss,
    streamless_pass, train_stage1, train_stage2, train_warmup, aux_pass, Stage1Config, Stage1Inputs, Stage2Config,
    DISTORTION_SCALE,
};

/// Criteria that fail at toy scale and are documented as such.
const KNOWN_GAPS: &[u8] = &[5, 6];

const SEEDS: [u64; 3] = [0, 1, 2];
const IMAGE: usize = 64;

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!(
        "criterion {:>2} {:<28} {}  {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v
}

struct SeedRun {
    seed: u64,
    proxy: CognitionProxy,
    warmed: CodecModel,
    primary: CodecModel,
    complete: CodecModel,
}

fn train_seed(seed: u64, train: &Dataset) -> SeedRun {
    let t = Instant::now();
    let proxy_train = ProxyTrainConfig { seed, ..ProxyTrainConfig::toy() };
    let (proxy, _) = pretrain_proxy(ProxyConfig::toy(), &proxy_train, train).expect("proxy");
    let s1 = Stage1Config { seed, ..Stage1Config::toy() };
    let (warmed, _) = train_warmup(CodecModel::new(CodecConfig::toy(), seed), train, &s1).expect("warm-up");
    let (primary, _) = train_stage1(warmed.clone(), &proxy, train, &s1).expect("stage I");
    let (complete, _) = train_stage2(primary.clone(), train, &Stage2Config { seed, ..Stage2Config::toy() }).expect("stage II");
    println!("# seed {seed} trained in {:.0?}", t.elapsed());
    SeedRun {
        seed,
        proxy,
        warmed,
        primary,
        complete,
    }
}

fn clip(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Unclipped `x̂₁` at one anchor through the training graph in rounding mode.
fn forward_x_hat1(model: &CodecModel, x: &Tensor, anchor: usize) -> Tensor {
    let g = Graph::new();
    let b = Binder::frozen(&g, &model.params);
    let p = primary_pass(model, &b, g.constant(x.clone()), anchor, QuantMode::Round, None).unwrap();
    (*p.x_hat.value()).clone()
}

fn criterion_1_2(model: &CodecModel, images: &[Tensor]) -> (Verdict, Verdict) {
    let t = Instant::now();
    let (mut mismatches, mut runs) = (0usize, 0usize);
    let (mut worst_slack, mut rate_failures) = (f64::INFINITY, 0usize);
    for x in images {
        for alpha in [0.0, 0.5, 1.0] {
            for alpha_s in [None, Some(0.5)] {
                runs += 1;
                let stream = compress(model, x, alpha, alpha_s).unwrap();
                match decompress(model, &stream.bytes, 0.0) {
                    Ok(d) if d.symbols == stream.symbols => {}
                    _ => mismatches += 1,
                }
                let actual = 8.0 * stream.bytes.len() as f64;
                let allowed = stream.estimated_bits * 1.01 + 8.0 * 64.0;
                let slack = allowed - actual;
                let lower_ok = actual >= stream.estimated_bits * 0.99 - 8.0 * 64.0;
                if slack < 0.0 || !lower_ok {
                    rate_failures += 1;
                }
                worst_slack = worst_slack.min(slack);
            }
        }
    }
    let elapsed = t.elapsed();
    let c1 = verdict(
        1,
        "bit-exact round trip",
        mismatches == 0 && elapsed.as_secs() < 300,
        format!("{runs} encodes, {mismatches} symbol mismatches, {:.1}s", elapsed.as_secs_f64()),
    );
    let c2 = verdict(
        2,
        "rate fidelity",
        rate_failures == 0,
        format!("{rate_failures} of {runs} outside 1% + 64 B; smallest margin {:.0} bits", worst_slack),
    );
    (c1, c2)
}

fn criterion_3(model: &CodecModel, images: &[Tensor]) -> Verdict {
    let mut exact = true;
    let (mut mid_err, mut oracle_err) = (0.0f64, 0.0f64);
    for x in images {
        for (alpha, anchor) in [(0.0, 0), (1.0, ANCHORS - 1)] {
            let stream = compress(model, x, alpha, Some(1.0)).unwrap();
            let d1 = decompress(model, &stream.bytes, 1.0).unwrap();
            let d0 = decompress(model, &stream.bytes, 0.0).unwrap();
            let dm = decompress(model, &stream.bytes, 0.5).unwrap();
            let x1 = &d1.x_hat1;
            let x2 = x1.zip_map(&d1.residual, |a, r| a + r);
            exact &= bitwise_eq(&d1.image, &crop(&clip(x1), IMAGE, IMAGE));
            exact &= bitwise_eq(&d0.image, &crop(&clip(&x2), IMAGE, IMAGE));
            let midpoint = clip(&x1.zip_map(&x2, |a, b| 0.5 * (a + b)));
            mid_err = mid_err.max(max_abs_diff(&dm.image, &crop(&midpoint, IMAGE, IMAGE)));

            let g = Graph::new();
            let b = Binder::frozen(&g, &model.params);
            let p = primary_pass(model, &b, g.constant(x.clone()), anchor, QuantMode::Round, None).unwrap();
            let a = aux_pass(model, &b, &p, ANCHORS - 1, QuantMode::Round, None).unwrap();
            oracle_err = oracle_err.max(max_abs_diff(&p.x_hat.value(), x1));
            oracle_err = oracle_err.max(max_abs_diff(&a.x_hat2.value(), &x2));
        }
    }
    verdict(
        3,
        "interpolation endpoints",
        exact && mid_err <= 1e-12 && oracle_err <= 1e-9,
        format!("endpoints bitwise {exact}; midpoint err {mid_err:.1e}; graph oracle err {oracle_err:.1e}"),
    )
}

fn primary_bpp(model: &CodecModel, images: &[Tensor], alpha: f64) -> f64 {
    images.iter().map(|x| compress(model, x, alpha, None).unwrap().bpp()).sum::<f64>() / images.len() as f64
}

fn criterion_4(runs: &[SeedRun], images: &[Tensor]) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for run in runs {
        let rates: Vec<f64> = (0..ANCHORS)
            .map(|n| primary_bpp(&run.complete, images, n as f64 / (ANCHORS - 1) as f64))
            .collect();
        let violations = rates.windows(2).filter(|w| w[1] < w[0]).count();
        pass &= violations <= 1;
        detail.push(format!(
            "seed {}: [{}] {violations} violations",
            run.seed,
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    verdict(4, "rate monotonicity", pass, detail.join("; "))
}

fn out_of_range(model: &CodecModel, images: &[Tensor]) -> f64 {
    let (mut out, mut total) = (0usize, 0usize);
    for x in images {
        for n in 0..ANCHORS {
            let x1 = forward_x_hat1(model, x, n);
            out += x1.data().iter().filter(|v| **v < -0.05 || **v > 1.05).count();
            total += x1.len();
        }
    }
    out as f64 / total as f64
}

fn criterion_5(run: &SeedRun, train: &Dataset, images: &[Tensor]) -> Verdict {
    let s1 = Stage1Config {
        seed: run.seed,
        lambda_local: 0.0,
        ..Stage1Config::toy()
    };
    let (ablation, _) = train_stage1(run.warmed.clone(), &run.proxy, train, &s1).expect("ablation");
    let with = out_of_range(&run.primary, images);
    let without = out_of_range(&ablation, images);
    verdict(
        5,
        "out-of-range mass",
        with <= 0.01 && without > with,
        format!("lambda_local=1e-5: {:.3}% outside; lambda_local=0: {:.3}%", 100.0 * with, 100.0 * without),
    )
}

/// Mean β = 0 PSNR of the streamless variant at a continuous α.
fn streamless_psnr(model: &CodecModel, images: &[Tensor], alpha: f64) -> f64 {
    let gy = Tensor::new(&[model.config.latent_channels], model.gains(GainKind::Latent).gain_at(alpha).unwrap());
    let gz = Tensor::new(&[model.config.hyper_channels], model.gains(GainKind::Hyper).gain_at(alpha).unwrap());
    images
        .iter()
        .map(|x| {
            let g = Graph::new();
            let b = Binder::frozen(&g, &model.params);
            let p = primary_pass_with_gains(model, &b, g.constant(x.clone()), g.constant(gy.clone()), g.constant(gz.clone()), QuantMode::Round, None)
                .unwrap();
            psnr(x, &clip(&streamless_pass(model, &b, &p).x_hat2.value()))
        })
        .sum::<f64>()
        / images.len() as f64
}

fn criterion_6(run: &SeedRun, train: &Dataset, images: &[Tensor]) -> Verdict {
    let s2 = Stage2Config {
        seed: run.seed,
        scalable_stream: false,
        ..Stage2Config::toy()
    };
    let (streamless, _) = train_stage2(run.primary.clone(), train, &s2).expect("streamless stage II");
    let (lo, hi) = (primary_bpp(&streamless, images, 0.0), primary_bpp(&streamless, images, 1.0));
    let mut margins = Vec::new();
    let mut detail = Vec::new();
    let mut x1_margin = f64::INFINITY;
    for alpha in [0.0, 0.4] {
        for alpha_s in [0.0, 1.0] {
            let (mut bpp, mut quality) = (0.0, 0.0);
            for x in images {
                let s = compress(&run.complete, x, alpha, Some(alpha_s)).unwrap();
                bpp += s.bpp();
                quality += psnr(x, &decompress(&run.complete, &s.bytes, 0.0).unwrap().image);
            }
            let k = images.len() as f64;
            let (bpp, quality) = (bpp / k, quality / k);
            if !(lo..=hi).contains(&bpp) {
                detail.push(format!("({alpha},{alpha_s}) {bpp:.3} bpp outside streamless range"));
                continue;
            }
            let (mut a, mut b) = (0.0, 1.0);
            let mut matched = (0.0, 0.0);
            for _ in 0..14 {
                let mid = 0.5 * (a + b);
                let r = primary_bpp(&streamless, images, mid);
                matched = (mid, r);
                if (r - bpp).abs() <= 0.01 * bpp {
                    break;
                }
                if r < bpp {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            if (matched.1 - bpp).abs() > 0.05 * bpp {
                detail.push(format!("({alpha},{alpha_s}) no match within 5%"));
                continue;
            }
            let reference = streamless_psnr(&streamless, images, matched.0);
            let x1_only = images
                .iter()
                .map(|x| psnr(x, &decompress(&run.complete, &compress(&run.complete, x, matched.0, None).unwrap().bytes, 0.0).unwrap().image))
                .sum::<f64>()
                / images.len() as f64;
            margins.push(quality - reference);
            x1_margin = x1_margin.min(quality - x1_only);
            detail.push(format!(
                "({alpha},{alpha_s}) {bpp:.3} bpp {quality:.2} dB vs streamless {:.3} bpp {reference:.2} dB",
                matched.1
            ));
        }
    }
    let pass = !margins.is_empty() && margins.iter().all(|m| *m >= 0.5);
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        6,
        "scalable stream ablation",
        pass,
        format!(
            "worst margin {worst:+.2} dB; {}; against x1-only decoding the worst margin is {x1_margin:+.2} dB",
            detail.join("; ")
        ),
    )
}

struct SeedSurface {
    tuned: TradeoffSurface,
    original: TradeoffSurface,
}

fn surfaces(run: &SeedRun, train: &Dataset, val: &Dataset, original_probe: &LinearProbe, alphas: &[f64]) -> SeedSurface {
    let subset: Vec<usize> = (0..train.len().min(200)).collect();
    let part = train.subset(&subset);
    let tuned_probe = finetune_probe(
        &run.complete,
        &run.proxy,
        &part.images,
        &part.labels,
        part.classes,
        alphas,
        ProbeTrainConfig {
            seed: run.seed,
            ..ProbeTrainConfig::default()
        },
    )
    .unwrap();
    let mut inputs = SweepInputs {
        model: &run.complete,
        proxy: &run.proxy,
        probe: &tuned_probe,
        images: &val.images,
        labels: &val.labels,
    };
    let tuned = sweep_surface(&inputs, alphas, &[0.0, 1.0], Some(0.5)).unwrap();
    inputs.probe = original_probe;
    let original = sweep_surface(&inputs, alphas, &[0.0, 1.0], Some(0.5)).unwrap();
    SeedSurface { tuned, original }
}

fn seed_mean(surfaces: &[SeedSurface], tuned: bool, alpha: f64, beta: f64, f: fn(&RdcPoint) -> f64) -> f64 {
    surfaces
        .iter()
        .map(|s| f(if tuned { &s.tuned } else { &s.original }.at(alpha, beta).unwrap()))
        .sum::<f64>()
        / surfaces.len() as f64
}

fn criterion_7(surfaces: &[SeedSurface], alphas: &[f64]) -> Verdict {
    let mut pass = true;
    let mut rows = Vec::new();
    for &alpha in alphas {
        let acc1 = seed_mean(surfaces, true, alpha, 1.0, |p| p.probe_acc);
        let acc0 = seed_mean(surfaces, true, alpha, 0.0, |p| p.probe_acc);
        let psnr0 = seed_mean(surfaces, true, alpha, 0.0, |p| p.psnr_db);
        let psnr1 = seed_mean(surfaces, true, alpha, 1.0, |p| p.psnr_db);
        let orig1 = seed_mean(surfaces, false, alpha, 1.0, |p| p.probe_acc);
        let orig0 = seed_mean(surfaces, false, alpha, 0.0, |p| p.probe_acc);
        pass &= acc1 >= acc0 && psnr0 >= psnr1;
        rows.push(format!(
            "a={alpha}: acc {acc1:.3}/{acc0:.3} psnr {psnr0:.2}/{psnr1:.2} (uncompressed-fit probe {orig1:.3}/{orig0:.3})"
        ));
    }
    verdict(
        7,
        "trade-off ordering",
        pass,
        format!("beta=1/beta=0 with the beta=1 fine-tuned probe; {}", rows.join("; ")),
    )
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Worst relative error between `analytic` and central differences of `f`
/// at `picks` elements of `x`.
fn fd_check(x: &Tensor, analytic: &Tensor, picks: &[usize], f: impl Fn(&Tensor) -> f64) -> f64 {
    picks
        .iter()
        .map(|&i| {
            let h = 1e-6 * x.data()[i].abs().max(1.0);
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            relative_error(analytic.data()[i], (f(&plus) - f(&minus)) / (2.0 * h))
        })
        .fold(0.0, f64::max)
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn picks(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..n)).collect()
}

/// Worst relative error over ten random parameter entries of a loss.
fn param_fd(params: &ParamMap, trainable: &dyn Fn(&str) -> bool, loss: &dyn Fn(&ParamMap) -> (f64, Option<ParamMap>), rng: &mut ChaCha8Rng) -> f64 {
    let (_, grads) = loss(params);
    let grads = grads.unwrap();
    let names: Vec<&String> = params.keys().filter(|k| trainable(k)).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 10 && attempts < 1000 {
        attempts += 1;
        let name = names[rng.gen_range(0..names.len())];
        let i = rng.gen_range(0..params[name].len());
        let a = grads.get(name).map_or(0.0, |g| g.data()[i]);
        if a.abs() < 1e-7 {
            continue;
        }
        let h = 1e-6 * params[name].data()[i].abs().max(1.0);
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += delta;
            loss(&p).0
        };
        worst = worst.max(relative_error(a, (eval(h) - eval(-h)) / (2.0 * h)));
        checked += 1;
    }
    assert_eq!(checked, 10, "too few parameters with a gradient");
    worst
}

fn jittered_model(seed: u64) -> CodecModel {
    let mut model = CodecModel::new(CodecConfig::toy(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    for t in model.params.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    model
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut errors = Vec::new();

    let x = random_tensor(&[2, 3, 8, 8], 0.0, 1.0, &mut rng);
    let x_hat = random_tensor(&[2, 3, 8, 8], -0.4, 1.4, &mut rng);
    let analytic = {
        let g = Graph::new();
        let v = g.leaf(x_hat.clone());
        g.backward(local_mse_var(&x, v)).get(v).unwrap().clone()
    };
    let idx = picks(x_hat.len(), 20, &mut rng);
    errors.push(("local_mse", fd_check(&x_hat, &analytic, &idx, |t| local_mse(&x, t))));

    let (b, d, k) = (4, 16, 32);
    let normal = |t: Tensor| {
        let mut t = t;
        for row in t.data_mut().chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        t
    };
    let keys = normal(random_tensor(&[b, d], -1.0, 1.0, &mut rng));
    let negatives = normal(random_tensor(&[k, d], -1.0, 1.0, &mut rng));
    let q = random_tensor(&[b, d], -1.0, 1.0, &mut rng);
    let nce = |t: &Tensor| {
        let g = Graph::new();
        g.constant(t.clone()).info_nce(&keys, &negatives, 0.07).value().item()
    };
    let analytic = {
        let g = Graph::new();
        let v = g.leaf(q.clone());
        g.backward(v.info_nce(&keys, &negatives, 0.07)).get(v).unwrap().clone()
    };
    let idx = picks(q.len(), 20, &mut rng);
    errors.push(("info_nce", fd_check(&q, &analytic, &idx, nce)));

    let shape = [1, 4, 3, 3];
    let y = random_tensor(&shape, -6.0, 6.0, &mut rng);
    let mu = random_tensor(&shape, -3.0, 3.0, &mut rng);
    let sigma = random_tensor(&shape, 0.3, 4.0, &mut rng);
    let rate = |y: &Tensor, mu: &Tensor, sigma: &Tensor| {
        let g = Graph::new();
        g.constant(y.clone()).gaussian_bits(g.constant(mu.clone()), g.constant(sigma.clone())).sum().value().item()
    };
    let (gy, gmu, gsigma) = {
        let g = Graph::new();
        let (vy, vm, vs) = (g.leaf(y.clone()), g.leaf(mu.clone()), g.leaf(sigma.clone()));
        let grads = g.backward(vy.gaussian_bits(vm, vs).sum());
        (grads.get(vy).unwrap().clone(), grads.get(vm).unwrap().clone(), grads.get(vs).unwrap().clone())
    };
    let idx = picks(y.len(), 12, &mut rng);
    let worst = fd_check(&y, &gy, &idx, |t| rate(t, &mu, &sigma))
        .max(fd_check(&mu, &gmu, &idx, |t| rate(&y, t, &sigma)))
        .max(fd_check(&sigma, &gsigma, &idx, |t| rate(&y, &mu, t)));
    errors.push(("gaussian rate", worst));

    let model = jittered_model(3);
    let proxy = CognitionProxy::new(ProxyConfig::toy(), 3).unwrap();
    let images = random_tensor(&[2, 3, 64, 64], 0.0, 1.0, &mut rng);
    let keys = proxy.momentum_embed(&images);
    let negatives = normal(random_tensor(&[16, proxy.config.dim], -1.0, 1.0, &mut rng));
    let stage1 = |params: &ParamMap| {
        let mut m = model.clone();
        m.params = params.clone();
        let g = Graph::new();
        let b = Binder::new(&g, &m.params, |_| true);
        let inputs = Stage1Inputs {
            proxy: &proxy,
            keys: &keys,
            negatives: &negatives,
            anchor: 2,
            lambda_n: 0.25,
            lambda_local: 1e-5,
            distortion_scale: DISTORTION_SCALE,
        };
        let (loss, _) = stage1_loss(&m, &b, &images, &inputs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (loss.value().item(), Some(b.collect(&g.backward(loss))))
    };
    let all = |_: &str| true;
    errors.push(("stage I loss", param_fd(&model.params, &all, &stage1, &mut rng)));

    let aux_only = |name: &str| ParamGroup::of(name).is_some_and(stage2_group);
    let stage2 = |params: &ParamMap| {
        let mut m = model.clone();
        m.params = params.clone();
        let g = Graph::new();
        let b = Binder::new(&g, &m.params, aux_only);
        let (loss, _) =
            stage2_loss(&m, &b, &images, 1, 3, 0.01, DISTORTION_SCALE, true, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        (loss.value().item(), Some(b.collect(&g.backward(loss))))
    };
    errors.push(("stage II loss", param_fd(&model.params, &aux_only, &stage2, &mut rng)));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    verdict(
        8,
        "gradient suite",
        worst <= 1e-4,
        errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join("; "),
    )
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_sum = 0.0f64;
    for _ in 0..500 {
        let mu: f64 = rng.gen_range(-40.0..40.0);
        let sigma: f64 = rng.gen_range(0.11..30.0);
        let reach = (12.0 * sigma).ceil() as i64 + 2;
        let centre = mu.round() as i64;
        let total: f64 = (centre - reach..=centre + reach)
            .map(|q| discretized_gaussian_mass(q as f64, mu, sigma))
            .sum();
        worst_sum = worst_sum.max((total - 1.0).abs());
    }

    let pmf: Vec<f64> = {
        let raw: Vec<f64> = (0..12).map(|i| 0.7f64.powi(i)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|p| p / s).collect()
    };
    let alphabet = SymbolAlphabet::from_pmf(0, &pmf, 0.0);
    let cdf: Vec<f64> = pmf
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let n = 100_000;
    let symbols: Vec<i64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            cdf.iter().position(|c| u < *c).unwrap_or(pmf.len() - 1) as i64
        })
        .collect();
    let mut counts = vec![0usize; pmf.len()];
    symbols.iter().for_each(|&s| counts[s as usize] += 1);
    let entropy_bits: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| -(c as f64) * (c as f64 / n as f64).log2())
        .sum();
    let mut enc = RangeEncoder::new();
    for &s in &symbols {
        alphabet.encode(&mut enc, s);
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
    let round_trip = symbols.iter().all(|&s| alphabet.decode(&mut dec).unwrap() == s) && dec.finish().is_ok();
    let excess = bytes.len() as f64 - entropy_bits / 8.0;
    let allowed = 0.001 * entropy_bits / 8.0 + 16.0;
    let freq_total: u32 = (0..=alphabet.symbols()).map(|i| alphabet.frequency(i)).sum();
    verdict(
        9,
        "probability hygiene",
        worst_sum <= 1e-6 && excess.abs() <= allowed && round_trip && freq_total == PROB_TOTAL,
        format!(
            "pmf sum error {worst_sum:.1e}; {} bytes vs entropy {:.1} bytes (allowed +/-{allowed:.1}); decoded {round_trip}",
            bytes.len(),
            entropy_bits / 8.0
        ),
    )
}

fn criterion_10() -> Verdict {
    let base: Vec<(f64, f64)> = vec![(0.1, 28.0), (0.2, 30.5), (0.4, 33.2), (0.8, 35.9), (1.6, 38.1)];
    let shifted: Vec<(f64, f64)> = base.iter().map(|&(r, q)| (r, q + 1.0)).collect();
    let doubled: Vec<(f64, f64)> = base.iter().map(|&(r, q)| (2.0 * r, q)).collect();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for fit in [BdFit::Cubic, BdFit::Pchip] {
        let same = bd_metric(&base, &base, fit).unwrap();
        let up = bd_metric(&base, &shifted, fit).unwrap();
        let double = bd_metric(&base, &doubled, fit).unwrap();
        let errs = [
            same.quality.abs(),
            same.rate_percent.abs(),
            (up.quality - 1.0).abs(),
            (double.rate_percent - 100.0).abs(),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
        detail.push(format!(
            "{fit:?}: identical {:.1e}, offset {:.9}, doubling {:.7}%",
            same.quality, up.quality, double.rate_percent
        ));
    }
    verdict(10, "BD oracle", worst <= 1e-6, detail.join("; "))
}

fn criterion_11() -> Verdict {
    let model = CodecModel::new(CodecConfig::default(), 0);
    let base: usize = [
        ParamGroup::Transform,
        ParamGroup::HyperPrior,
        ParamGroup::LatentGain,
        ParamGroup::HyperGain,
    ]
    .into_iter()
    .map(|g| model.group_param_count(g))
    .sum();
    let aux: usize = [ParamGroup::Auxiliary, ParamGroup::AuxPrior, ParamGroup::AuxGain]
        .into_iter()
        .map(|g| model.group_param_count(g))
        .sum();
    let ratio = aux as f64 / base as f64;
    verdict(
        11,
        "auxiliary parameter budget",
        ratio < 0.10,
        format!("{aux} auxiliary vs {base} base parameters ({:.2}%)", 100.0 * ratio),
    )
}

fn criterion_12(runs: &[SeedRun], images: &[Tensor]) -> Verdict {
    let (mut hf1, mut hf2) = (0.0, 0.0);
    for run in runs {
        for x in images {
            let s = compress(&run.complete, x, 0.5, Some(0.5)).unwrap();
            hf1 += high_frequency_ratio(&decompress(&run.complete, &s.bytes, 1.0).unwrap().image);
            hf2 += high_frequency_ratio(&decompress(&run.complete, &s.bytes, 0.0).unwrap().image);
        }
    }
    let k = (runs.len() * images.len()) as f64;
    let (hf1, hf2) = (hf1 / k, hf2 / k);
    let original = images.iter().map(high_frequency_ratio).sum::<f64>() / images.len() as f64;
    verdict(
        12,
        "high-frequency energy",
        hf1 > hf2,
        format!("x1 {hf1:.5}, x2 {hf2:.5}, originals {original:.5}"),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts = vec![criterion_8(), criterion_9(), criterion_10(), criterion_11()];

    let val = toy_dataset(100, IMAGE, 99);
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&seed| train_seed(seed, &toy_dataset(400, IMAGE, 1000 + seed)))
        .collect();
    let round_trip_set = toy_dataset(200, IMAGE, 4242);
    let (c1, c2) = criterion_1_2(&runs[0].complete, &round_trip_set.images);
    verdicts.push(c1);
    verdicts.push(c2);
    verdicts.push(criterion_3(&runs[0].complete, &val.images[..10]));
    verdicts.push(criterion_4(&runs, &val.images));

    let train0 = toy_dataset(400, IMAGE, 1000);
    verdicts.push(criterion_5(&runs[0], &train0, &val.images));
    verdicts.push(criterion_6(&runs[0], &train0, &val.images));

    let alphas: Vec<f64> = (0..ANCHORS).map(|n| n as f64 / (ANCHORS - 1) as f64).collect();
    let seed_surfaces: Vec<SeedSurface> = runs
        .iter()
        .map(|run| {
            let train = toy_dataset(400, IMAGE, 1000 + run.seed);
            let probe = fit_probe(&run.proxy, &train.images, &train.labels, train.classes, ProbeTrainConfig::default()).unwrap();
            let acc = probe_accuracy(&run.proxy, &probe, &val.images, &val.labels).unwrap();
            println!("# seed {} probe accuracy on uncompressed validation images {acc:.3}", run.seed);
            surfaces(run, &train, &val, &probe, &alphas)
        })
        .collect();
    verdicts.push(criterion_7(&seed_surfaces, &alphas));
    verdicts.push(criterion_12(&runs, &val.images));

    verdicts.sort_by_key(|v| v.id);
    println!("# summary after {:.0?}", started.elapsed());
    let mut unexpected = 0;
    for v in &verdicts {
        let note = match (v.pass, KNOWN_GAPS.contains(&v.id)) {
            (true, _) => "",
            (false, true) => " (documented toy-scale gap)",
            (false, false) => {
                unexpected += 1;
                ""
            }
        };
        println!("criterion {:>2} {:<28} {}{note}", v.id, v.name, if v.pass { "PASS" } else { "FAIL" });
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
