use std::path::{Path, PathBuf};

use crate::bench::{bench_sizes, slopes, BenchOptions, BenchRow, BenchSlopes};
use crate::data::{
    checkpoint_config, degrade_sequence, load_checkpoint, rate_proxy_kbps,
    save_checkpoint, synthetic_sequence, DegradeProfile, PatchSource, SequencePair, SynthSpec, YuvSequence, YuvWriter,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bd_rate, delta_metrics, gnuplot_table, mean_psnr, per_frame_series, write_csv, BdRow, DeltaRow, RdPoint,
};
use crate::model::{enhance_clip, param_init, ModelConfig};
use crate::tensor::gradcheck::{op_suite, FdOptions};
use crate::tensor::{DType, OpKind, Real, Tensor};
use crate::train::{model_gradient_check, two_stage_train, write_loss_csv, ModelCheckOptions, TrainHooks};

use super::config::{parse_dims, RunConfig};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into())
}

fn open_seq(path: &Path, cfg: &RunConfig) -> Result<YuvSequence> {
    let (w, h) = cfg.io.dims()?;
    YuvSequence::open(path, w, h)
}

fn copy_chroma_writer(out: &Path, planes: &[Tensor<f64>], chroma_src: Option<&YuvSequence>) -> Result<()> {
    let s = planes[0].shape();
    let mut w = YuvWriter::create(out, s[1], s[0])?;
    for (t, p) in planes.iter().enumerate() {
        let c = chroma_src.map(|src| src.read_chroma(t)).transpose()?;
        w.write_y_plane(p, c.as_deref())?;
    }
    w.finish()?;
    Ok(())
}

/// One degraded sequence per `io.qs`, plus `rates.csv` and `rd.dat`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.io.out_dir()?;
    create_dir(out)?;
    let (w, h) = cfg.io.dims()?;
    if cfg.io.qs.is_empty() {
        return Err(Error::Usage("no q values given".into()));
    }
    let (raw, src): (Vec<Tensor<f64>>, Option<YuvSequence>) = match cfg.io.raw.first() {
        Some(p) => {
            let seq = YuvSequence::open(p, w, h)?;
            (seq.read_all_y()?, Some(seq))
        }
        None => {
            let spec = SynthSpec {
                width: w,
                height: h,
                frames: cfg.synth.frames,
                shapes: cfg.synth.shapes,
                seed: cfg.train.seed,
            };
            let planes = synthetic_sequence::<f64>(&spec)?;
            copy_chroma_writer(&out.join("raw.yuv"), &planes, None)?;
            (planes, None)
        }
    };
    let name = cfg.io.raw.first().map(|p| stem(p)).unwrap_or_else(|| "synthetic".into());

    #[derive(serde::Serialize)]
    struct RateRow {
        q: u32,
        rate_kbps: f64,
        psnr: Option<f64>,
        file: String,
    }
    let mut rows = Vec::new();
    for &q in &cfg.io.qs {
        let profile = DegradeProfile { q, ..cfg.degrade };
        let (deg, stats) = degrade_sequence(&raw, &profile)?;
        let file = out.join(format!("{name}_q{q}.yuv"));
        copy_chroma_writer(&file, &deg, src.as_ref())?;
        let (p, _) = mean_psnr(&deg, &raw)?;
        let rate = rate_proxy_kbps(&stats, raw.len(), cfg.eval.fps);
        println!(
            "q {q:>2}  rate {rate:>10.2} kbps  psnr {}  -> {}",
            p.map_or("inf".into(), |v| format!("{v:.4}")),
            file.display()
        );
        rows.push(RateRow {
            q,
            rate_kbps: rate,
            psnr: p,
            file: file.display().to_string(),
        });
    }
    write_csv(out.join("rates.csv"), &rows)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.q.to_string(), format!("{:.4}", r.rate_kbps), r.psnr.map_or("inf".into(), |v| format!("{v:.4}"))])
        .collect();
    std::fs::write(out.join("rd.dat"), gnuplot_table(&["q", "rate_kbps", "psnr"], &table)).map_err(|e| Error::io(out, e))?;
    cfg.echo(out)?;
    Ok(())
}

fn training_pairs<T: Real>(cfg: &RunConfig) -> Result<Vec<SequencePair<T>>> {
    let io = &cfg.io;
    if io.raw.is_empty() && io.compressed.is_empty() {
        let (w, h) = match &io.dims {
            Some(d) => parse_dims(d)?,
            None => (64, 64),
        };
        let spec = SynthSpec {
            width: w,
            height: h,
            frames: cfg.synth.frames,
            shapes: cfg.synth.shapes,
            seed: cfg.train.seed,
        };
        let raw = synthetic_sequence::<T>(&spec)?;
        let (comp, _) = degrade_sequence(&raw, &cfg.degrade)?;
        return Ok(vec![SequencePair::new(comp, raw)?]);
    }
    if io.raw.len() != io.compressed.len() {
        return Err(Error::Usage(format!(
            "{} raw but {} compressed training sequences",
            io.raw.len(),
            io.compressed.len()
        )));
    }
    io.raw
        .iter()
        .zip(&io.compressed)
        .map(|(r, c)| {
            let (r, c) = (open_seq(r, cfg)?, open_seq(c, cfg)?);
            SequencePair::new(c.read_all_y()?, r.read_all_y()?)
        })
        .collect()
}

/// Trains and returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    match cfg.model.dtype {
        DType::F32 => train_impl::<f32>(cfg),
        DType::F64 => train_impl::<f64>(cfg),
    }
}

fn train_impl<T: Real>(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.io.out_dir()?.to_path_buf();
    create_dir(&out)?;
    let mut source = PatchSource::new(training_pairs::<T>(cfg)?)?;
    let params = param_init::<T>(&cfg.model, cfg.train.seed)?;
    let model = cfg.model.clone();
    let every = cfg.train.checkpoint_every;
    let mut hooks = TrainHooks::default();
    hooks.on_step = Some(Box::new(|rec| {
        if rec.step % 50 == 0 {
            eprintln!("step {:>6} stage {} loss {:.6}", rec.step, rec.stage, rec.total);
        }
    }));
    if every > 0 {
        let (dir, model) = (out.clone(), model.clone());
        hooks.on_checkpoint = Some(Box::new(move |step, p, o| {
            save_checkpoint(dir.join(format!("checkpoint_step{step}.tvqe")), &model, p, Some(o)).map(|_| ())
        }));
    }
    let outcome = two_stage_train(&cfg.model, params, &mut source, &cfg.train, &mut hooks)?;
    drop(hooks);
    let ck = out.join("checkpoint.tvqe");
    let sum = save_checkpoint(&ck, &cfg.model, &outcome.params, Some(&outcome.optim))?;
    write_loss_csv(&out.join("loss.csv"), &outcome.history)?;
    cfg.echo(&out)?;
    match outcome.history.last() {
        Some(r) => println!(
            "trained {} steps, final loss {:.6}, checkpoint {} (fnv64 {sum:016x})",
            outcome.history.len(),
            r.total,
            ck.display()
        ),
        None => println!("0 steps, initialized checkpoint {} (fnv64 {sum:016x})", ck.display()),
    }
    Ok(ck)
}

/// Enhances `io.compressed[0]` into `out/enhanced.yuv`, chroma copied through.
pub fn cmd_enhance(cfg: &RunConfig, model_given: bool) -> Result<()> {
    let ck = cfg.io.checkpoint.as_deref().ok_or_else(|| Error::Usage("--checkpoint is required".into()))?;
    let model = checkpoint_config(ck)?;
    if model_given && model != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint config mismatch: {} holds {:?}, run config asks for {:?}",
            ck.display(),
            model,
            cfg.model
        )));
    }
    let mut resolved = cfg.clone();
    resolved.model = model.clone();
    match model.dtype {
        DType::F32 => enhance_impl::<f32>(&resolved, ck),
        DType::F64 => enhance_impl::<f64>(&resolved, ck),
    }
}

fn enhance_impl<T: Real>(cfg: &RunConfig, ck: &Path) -> Result<()> {
    let out = cfg.io.out_dir()?;
    create_dir(out)?;
    let input = cfg.io.compressed.first().ok_or_else(|| Error::Usage("--input is required".into()))?;
    let seq = open_seq(input, cfg)?;
    let ck = load_checkpoint::<T>(ck)?;
    let target = out.join("enhanced.yuv");
    let mut w = YuvWriter::create(&target, seq.width, seq.height)?;
    for t in 0..seq.frame_count {
        let clip = seq.clip_window::<T>(t, ck.config.radius)?;
        let y = enhance_clip(&ck.params, &ck.config, &clip)?;
        w.write_y_plane(&y, Some(&seq.read_chroma(t)?))?;
    }
    let n = w.finish()?;
    cfg.echo(out)?;
    println!("enhanced {n} frames -> {}", target.display());
    Ok(())
}

/// Gain table, per-frame series, and BD-rate when at least three RD points exist.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let io = &cfg.io;
    let out = io.out_dir()?;
    create_dir(out)?;
    let raw_path = io.raw.first().ok_or_else(|| Error::Usage("--raw is required".into()))?;
    if io.compressed.is_empty() || io.compressed.len() != io.enhanced.len() {
        return Err(Error::Usage(format!(
            "need matching --compressed/--enhanced lists, got {} and {}",
            io.compressed.len(),
            io.enhanced.len()
        )));
    }
    let raw: Vec<Tensor<f64>> = open_seq(raw_path, cfg)?.read_all_y()?;
    let name = stem(raw_path);
    let labels: Vec<String> = if io.qs.len() == io.compressed.len() {
        io.qs.iter().map(|q| format!("q{q}")).collect()
    } else {
        (0..io.compressed.len()).map(|k| k.to_string()).collect()
    };

    let mut delta_rows = Vec::new();
    let (mut anchor, mut test) = (Vec::new(), Vec::new());
    for (k, (c, e)) in io.compressed.iter().zip(&io.enhanced).enumerate() {
        let comp: Vec<Tensor<f64>> = open_seq(c, cfg)?.read_all_y()?;
        let enh: Vec<Tensor<f64>> = open_seq(e, cfg)?.read_all_y()?;
        let d = delta_metrics(&raw, &comp, &enh)?;
        let series = per_frame_series(&raw, &comp, &enh)?;
        write_csv(out.join(format!("series_{}.csv", labels[k])), &series.rows())?;
        println!(
            "{name} {:>4}  dPSNR {}  dSSIM {:+.6}  fluct {:.4} -> {:.4}{}",
            labels[k],
            d.delta_psnr.map_or("n/a".into(), |v| format!("{v:+.4}")),
            d.delta_ssim,
            series.degraded_fluctuation(),
            series.enhanced_fluctuation(),
            if d.infinite_frames > 0 { format!("  ({} lossless frames excluded)", d.infinite_frames) } else { String::new() }
        );
        delta_rows.push(DeltaRow {
            sequence: name.clone(),
            q: io.qs.get(k).copied().filter(|_| io.qs.len() == io.compressed.len()).unwrap_or(0),
            delta_psnr: d.delta_psnr,
            delta_ssim: d.delta_ssim,
        });
        if let Some(&rate) = io.rates.get(k) {
            if let (Some(pc), Some(pe)) = (mean_psnr(&comp, &raw)?.0, mean_psnr(&enh, &raw)?.0) {
                anchor.push(RdPoint { rate, psnr: pc });
                test.push(RdPoint { rate, psnr: pe });
            }
        }
    }
    write_csv(out.join("delta.csv"), &delta_rows)?;

    if anchor.len() >= 3 && io.rates.len() == io.compressed.len() {
        let bd = bd_rate(&anchor, &test, cfg.eval.interp)?;
        println!("{name} BD-rate {bd:+.4} % ({:?})", cfg.eval.interp);
        write_csv(out.join("bd.csv"), &[BdRow { sequence: name.clone(), bd_rate: bd }])?;
        let table: Vec<Vec<String>> = anchor
            .iter()
            .zip(&test)
            .map(|(a, t)| vec![format!("{:.4}", a.rate), format!("{:.4}", a.psnr), format!("{:.4}", t.psnr)])
            .collect();
        std::fs::write(out.join("rd.dat"), gnuplot_table(&["rate_kbps", "psnr_compressed", "psnr_enhanced"], &table))
            .map_err(|e| Error::io(out, e))?;
    }
    cfg.echo(out)?;
    Ok(())
}

/// Names of failed checks; empty when everything passed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckOutcome {
    pub lines: Vec<String>,
    pub failed: Vec<String>,
}

pub fn cmd_gradcheck(cfg: &RunConfig, model_given: bool, fault: Option<OpKind>) -> Result<GradcheckOutcome> {
    let g = &cfg.gradcheck;
    let mut outcome = GradcheckOutcome::default();
    let emit = |line: String, ok: bool, name: &str, o: &mut GradcheckOutcome| {
        println!("{line}");
        o.lines.push(line);
        if !ok {
            o.failed.push(name.to_string());
        }
    };
    let fd = FdOptions {
        step: g.op_step,
        tol: g.op_tol,
        seed: cfg.train.seed,
        fault,
        ..Default::default()
    };
    for c in op_suite(&fd)? {
        let ok = c.report.passed();
        let line = format!(
            "op {:<16} max rel {:.3e}  coords {:>4}  {}",
            c.op.name(),
            c.report.max_rel_err,
            c.report.checked,
            if ok { "PASS" } else { "FAIL" }
        );
        emit(line, ok, c.op.name(), &mut outcome);
    }
    let model = if model_given { cfg.model.clone() } else { ModelConfig::toy() };
    let model = ModelConfig { dtype: DType::F64, ..model };
    let opts = ModelCheckOptions {
        height: g.height,
        width: g.width,
        coords_per_tensor: g.coords_per_tensor,
        step: g.model_step,
        tol: g.model_tol,
        seed: cfg.train.seed,
        perturb: g.perturb,
        fault,
        ..Default::default()
    };
    let r = model_gradient_check(&model, &opts)?;
    let ok = r.passed();
    let line = format!(
        "model tvqe+charbonnier  max rel {:.3e}  tensors {}  coords {}  directions {}  worst {}  {}",
        r.max_rel_err(),
        r.paths.len(),
        r.coordinates_checked(),
        r.directional.len(),
        r.worst_path().unwrap_or("-"),
        if ok { "PASS" } else { "FAIL" }
    );
    emit(line, ok, "model", &mut outcome);
    if let Some(out) = &cfg.io.out {
        create_dir(out)?;
        let text = outcome.lines.join("\n") + "\n";
        std::fs::write(out.join("gradcheck.txt"), text).map_err(|e| Error::io(out, e))?;
        cfg.echo(out)?;
    }
    Ok(outcome)
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(Vec<BenchRow>, BenchSlopes)> {
    let b = &cfg.bench;
    let sizes = b
        .sizes
        .iter()
        .map(|s| parse_dims(s).map(|(w, h)| (h, w)))
        .collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions {
        channels: b.channels,
        heads: b.heads,
        window_size: b.window_size,
        repeats: b.repeats,
        seed: cfg.train.seed,
    };
    let rows = bench_sizes(&sizes, &opts)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}x{}", r.width, r.height),
                r.pixels.to_string(),
                format!("{:.6}", r.mdta_seconds),
                format!("{:.6}", r.wmsa_seconds),
            ]
        })
        .collect();
    print!("{}", gnuplot_table(&["size", "pixels", "mdta_s", "wmsa_s"], &table));
    let s = slopes(&rows)?;
    println!("# log-log slope vs pixels: mdta {:.3}  wmsa {:.3}", s.mdta, s.wmsa);
    if let Some(out) = &cfg.io.out {
        create_dir(out)?;
        write_csv(out.join("bench.csv"), &rows)?;
        cfg.echo(out)?;
    }
    Ok((rows, s))
}

