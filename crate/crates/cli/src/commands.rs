use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use rdc_core::bitstream::{self, compress as encode, decompress as decode, HEADER_LEN};
use rdc_core::checkpoint::Checkpoint;
use rdc_core::codec::{CodecModel, Stage};
use rdc_core::cognition::{
    fit_probe, load_image, pretrain_proxy as train_proxy, probe_accuracy, save_image, toy_dataset, CognitionProxy, Dataset,
    LinearProbe,
};
use rdc_core::error::RdcError;
use rdc_core::evaluation::diagnostics::{diagnostics, high_frequency_ratio};
use rdc_core::evaluation::plot::{line_chart, Series};
use rdc_core::evaluation::{finetune_probe as refit_probe, psnr, sweep_surface, Corner, RdcPoint, SweepInputs, TradeoffSurface, SURFACE_HEADER};
use rdc_core::gain::check_unit;
use rdc_core::training::{self, write_csv, Stage1LogRow, Stage2LogRow};

use crate::run_config::{parse_unit_list, RunConfig};
use crate::{
    CompressArgs, DecompressArgs, DiagnoseArgs, EvalArgs, FinetuneProbeArgs, MakeDatasetArgs, PretrainProxyArgs, SweepArgs, TrainStage1Args,
    TrainStage2Args,
};

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let data = Dataset::from_manifest(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if data.is_empty() {
        return Err(RdcError::Config(format!("dataset {} is empty", path.display())).into());
    }
    Ok(data)
}

fn load_model(path: &Path) -> Result<CodecModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(CodecModel::from_checkpoint(ckpt)?)
}

fn load_proxy(path: &Path) -> Result<CognitionProxy> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading proxy {}", path.display()))?;
    Ok(CognitionProxy::from_checkpoint(ckpt)?)
}

fn load_probe(path: &Path) -> Result<LinearProbe> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading probe {}", path.display()))?;
    Ok(LinearProbe::from_checkpoint(ckpt)?)
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::create_dir_all(parent(path))?;
    ckpt.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn make_dataset(cfg: &RunConfig, args: &MakeDatasetArgs) -> Result<()> {
    if args.count == 0 || args.size == 0 {
        return Err(RdcError::Config("count and size must be positive".into()).into());
    }
    let manifest = toy_dataset(args.count, args.size, cfg.seed).write(&args.out)?;
    cfg.echo(&args.out, "make-dataset")?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn pretrain_proxy(cfg: &RunConfig, args: &PretrainProxyArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let dir = parent(&args.out);
    let (proxy, log) = train_proxy(cfg.proxy.clone(), &cfg.proxy_train, &data)?;
    save(&proxy.to_checkpoint(), &args.out)?;
    let probe = fit_probe(&proxy, &data.images, &data.labels, data.classes, cfg.probe.clone())?;
    let acc = probe_accuracy(&proxy, &probe, &data.images, &data.labels)?;
    let probe_out = args.probe_out.clone().unwrap_or_else(|| dir.join("probe.ckpt"));
    save(&probe.to_checkpoint(), &probe_out)?;
    write_csv(
        dir.join("proxy_log.csv"),
        "step,loss,queue_len",
        log.iter().map(|r| format!("{},{},{}", r.step, r.loss, r.queue_len)),
    )?;
    cfg.echo(&dir, "pretrain-proxy")?;
    let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("final InfoNCE {last:.4}; probe accuracy on training images {acc:.4}");
    Ok(())
}

pub fn train_stage1(cfg: &RunConfig, args: &TrainStage1Args) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let proxy = load_proxy(&args.proxy)?;
    let model = match &args.init {
        Some(path) => load_model(path)?,
        None => CodecModel::new(cfg.codec.clone(), cfg.seed),
    };
    let (model, log) = training::train_stage1(model, &proxy, &data, &cfg.stage1)?;
    save(&model.to_checkpoint(), &args.out)?;
    let dir = parent(&args.out);
    write_csv(dir.join("stage1_log.csv"), Stage1LogRow::HEADER, log.iter().map(Stage1LogRow::csv))?;
    let rates = training::anchor_rates(&model, &data.images)?;
    cfg.echo(&dir, "train-stage1")?;
    println!(
        "estimated bpp per anchor: {}",
        rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")
    );
    Ok(())
}

pub fn train_stage2(cfg: &RunConfig, args: &TrainStage2Args) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let model = load_model(&args.model)?;
    let (model, log) = training::train_stage2(model, &data, &cfg.stage2)?;
    save(&model.to_checkpoint(), &args.out)?;
    let dir = parent(&args.out);
    write_csv(dir.join("stage2_log.csv"), Stage2LogRow::HEADER, log.iter().map(Stage2LogRow::csv))?;
    cfg.echo(&dir, "train-stage2")?;
    if let Some(last) = log.last() {
        println!("final rate_s {:.4} mse {:.6}", last.rate_s, last.mse);
    }
    Ok(())
}

pub fn finetune_probe(cfg: &RunConfig, args: &FinetuneProbeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let proxy = load_proxy(&args.proxy)?;
    let data = load_dataset(&args.dataset)?;
    let probe = refit_probe(&model, &proxy, &data.images, &data.labels, data.classes, &cfg.sweep_alphas, cfg.probe.clone())?;
    save(&probe.to_checkpoint(), &args.out)?;
    cfg.echo(&parent(&args.out), "finetune-probe")?;
    println!("{}", args.out.display());
    Ok(())
}

pub fn compress(cfg: &RunConfig, args: &CompressArgs) -> Result<()> {
    check_unit("alpha", args.alpha)?;
    check_unit("alpha_s", args.alpha_s)?;
    let model = load_model(&args.model)?;
    let use_aux = if args.no_aux {
        false
    } else {
        args.aux || model.stage == Stage::Complete
    };
    let x = load_image(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let stream = encode(&model, &x, args.alpha, use_aux.then_some(args.alpha_s))?;
    fs::create_dir_all(parent(&args.out))?;
    fs::write(&args.out, &stream.bytes).with_context(|| format!("writing {}", args.out.display()))?;
    cfg.echo(&parent(&args.out), "compress")?;
    let h = stream.header;
    println!(
        "bpp {:.6} bytes {} header {HEADER_LEN} len_z {} len_y {} len_s {}",
        stream.bpp(),
        stream.bytes.len(),
        h.len_z,
        h.len_y,
        h.len_s
    );
    Ok(())
}

pub fn decompress(cfg: &RunConfig, args: &DecompressArgs) -> Result<()> {
    check_unit("beta", args.beta)?;
    let model = load_model(&args.model)?;
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let out = decode(&model, &bytes, args.beta)?;
    fs::create_dir_all(parent(&args.out))?;
    save_image(&out.image, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    cfg.echo(&parent(&args.out), "decompress")?;
    let (_, _, h, w) = out.image.dims4();
    println!("decoded {w}x{h} at beta {}", args.beta);
    Ok(())
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let proxy = load_proxy(&args.proxy)?;
    let probe = load_probe(&args.probe)?;
    let data = load_dataset(&args.dataset)?;
    let inputs = SweepInputs {
        model: &model,
        proxy: &proxy,
        probe: &probe,
        images: &data.images,
        labels: &data.labels,
    };
    let surface = sweep_surface(&inputs, &[check_unit("alpha", args.alpha)?], &[check_unit("beta", args.beta)?], args.alpha_s)?;
    let p = surface.points[0];
    cfg.echo(&parent(&args.dataset), "eval")?;
    println!("{SURFACE_HEADER}\n{}", p.csv());
    Ok(())
}

fn error_row(alpha: f64, beta: f64, alpha_s: f64, err: &RdcError) -> String {
    format!("{alpha},{beta},{alpha_s},,,,\"{}\"", err.to_string().replace('"', "'"))
}

fn corner_checks(surface: &TradeoffSurface) -> Vec<(String, bool)> {
    let (Some(a), Some(b)) = (surface.corner(Corner::A), surface.corner(Corner::B)) else {
        return Vec::new();
    };
    vec![
        ("accuracy A >= B".into(), a.probe_acc >= b.probe_acc),
        ("PSNR B >= A".into(), b.psnr_db >= a.psnr_db),
    ]
}

fn curve_plots(dir: &Path, surface: &TradeoffSurface) -> Result<()> {
    let by_beta = |f: fn(&RdcPoint) -> f64| -> Vec<(String, Vec<(f64, f64)>)> {
        surface
            .betas
            .iter()
            .map(|&beta| {
                let pts = surface.points.iter().filter(|p| p.beta == beta).map(|p| (p.bpp, f(p))).collect();
                (format!("beta {beta}"), pts)
            })
            .collect()
    };
    for (file, title, label, f) in [
        ("rate_accuracy.svg", "Rate vs probe accuracy", "accuracy", (|p: &RdcPoint| p.probe_acc) as fn(&RdcPoint) -> f64),
        ("rate_psnr.svg", "Rate vs PSNR", "PSNR (dB)", |p: &RdcPoint| p.psnr_db),
    ] {
        let curves = by_beta(f);
        let series: Vec<Series<'_>> = curves.iter().map(|(l, pts)| Series { label: l, points: pts }).collect();
        fs::write(dir.join(file), line_chart(title, "bpp", label, &series))?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    let alphas = match &args.alphas {
        Some(s) => parse_unit_list("alphas", s)?,
        None => cfg.sweep_alphas.clone(),
    };
    let betas = match &args.betas {
        Some(s) => parse_unit_list("betas", s)?,
        None => cfg.sweep_betas.clone(),
    };
    let model = load_model(&args.model)?;
    let proxy = load_proxy(&args.proxy)?;
    let probe = load_probe(&args.probe)?;
    let data = load_dataset(&args.dataset)?;
    let alpha_s = (model.stage == Stage::Complete).then_some(cfg.sweep_alpha_s);
    let inputs = SweepInputs {
        model: &model,
        proxy: &proxy,
        probe: &probe,
        images: &data.images,
        labels: &data.labels,
    };
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for &alpha in &alphas {
        info!("sweeping alpha {alpha}");
        match sweep_surface(&inputs, &[alpha], &betas, alpha_s) {
            Ok(s) => {
                rows.extend(s.points.iter().map(|p| format!("{},", p.csv())));
                points.extend(s.points);
            }
            Err(e) => {
                rows.extend(betas.iter().map(|&b| error_row(alpha, b, cfg.sweep_alpha_s, &e)));
                failures.push(e);
            }
        }
    }
    fs::create_dir_all(&args.out_dir)?;
    write_csv(args.out_dir.join("surface.csv"), &format!("{SURFACE_HEADER},error"), rows)?;
    let surface = TradeoffSurface {
        alphas: alphas.clone(),
        betas: betas.clone(),
        points,
    };
    curve_plots(&args.out_dir, &surface)?;
    cfg.echo(&args.out_dir, "sweep")?;
    for (name, ok) in corner_checks(&surface) {
        println!("{name}: {}", if ok { "pass" } else { "fail" });
    }
    println!("{} cells written to {}", alphas.len() * betas.len(), args.out_dir.join("surface.csv").display());
    match failures.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn diagnose(cfg: &RunConfig, args: &DiagnoseArgs) -> Result<()> {
    check_unit("alpha", args.alpha)?;
    check_unit("alpha_s", args.alpha_s)?;
    let model = load_model(&args.model)?;
    if model.stage != Stage::Complete {
        return Err(RdcError::Version("diagnostics need a stage-II model".into()).into());
    }
    let data = load_dataset(&args.dataset)?;
    if args.index >= data.len() {
        return Err(RdcError::Config(format!("index {} outside a dataset of {}", args.index, data.len())).into());
    }
    let mut hf = [0.0; 3];
    let mut fidelity = [0.0; 2];
    for (i, x) in data.images.iter().enumerate() {
        let stream = encode(&model, x, args.alpha, Some(args.alpha_s))?;
        let d = decode(&model, &stream.bytes, 0.0)?;
        let (_, _, h, w) = x.dims4();
        let x1 = bitstream::crop(&d.x_hat1, h, w);
        let x2 = bitstream::crop(&d.x_hat1.zip_map(&d.residual, |a, r| a + r), h, w);
        for (acc, t) in hf.iter_mut().zip([x, &x1, &x2]) {
            *acc += high_frequency_ratio(t);
        }
        fidelity[0] += psnr(x, &x1.map(|v| v.clamp(0.0, 1.0)));
        fidelity[1] += psnr(x, &x2.map(|v| v.clamp(0.0, 1.0)));
        if i == args.index {
            let y2 = d.y2_hat.clone().expect("auxiliary stream present");
            diagnostics(&model, x, &x1, &x2, &d.y_hat, &y2).write(&args.out_dir)?;
        }
    }
    let n = data.len() as f64;
    let mut summary = String::from("image,mean_hf_ratio,mean_psnr_db\n");
    summary.push_str(&format!("original,{},\n", hf[0] / n));
    summary.push_str(&format!("cognition,{},{}\n", hf[1] / n, fidelity[0] / n));
    summary.push_str(&format!("distortion,{},{}\n", hf[2] / n, fidelity[1] / n));
    fs::write(args.out_dir.join("dataset_summary.csv"), &summary)?;
    cfg.echo(&args.out_dir, "diagnose")?;
    print!("{summary}");
    Ok(())
}
