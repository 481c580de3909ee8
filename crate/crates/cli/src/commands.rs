use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use csfall::data::{
    encode_manifest, load_manifest, load_tensor_split, synth_action_dataset, DatasetManifest, Split,
};
use csfall::nn::{
    evaluate, load_checkpoint, load_for_transfer, save_checkpoint, train_from, EpochRecord, ModelParams,
    NetworkConfig, StopReason,
};
use csfall::packing::VideoClip;
use csfall::recon::privacy_sweep;
use csfall::sensing::{Family, SensingMatrix};

use crate::config::{self, RunConfig};
use crate::{Cli, Command, NumericalFailure, UsageError};

const DEFAULT_OUT: &str = "csfall-out";

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn result(&self, path: &Path) {
        if !self.quiet {
            println!("{}", path.display());
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::load(cli.config.as_deref())?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::MakeMatrix(a) => make_matrix(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::PrivacyEval(a) => privacy_eval(&ctx, a),
        Command::Report(a) => crate::report::report(&ctx.out, a, ctx.quiet),
    }
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    s.parse().map_err(|_| UsageError(format!("unknown split {s:?}; use train, val or test")).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// JSON number, with `±inf` spelled as a string marker since JSON has no infinity.
pub fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn synth(ctx: &Ctx, a: crate::SynthArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.data;
    cfg.classes = a.classes.unwrap_or(cfg.classes);
    cfg.clips_per_class = a.clips_per_class.unwrap_or(cfg.clips_per_class);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.height = a.height.unwrap_or(cfg.height);
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.seed = ctx.seed.unwrap_or(cfg.seed);
    let manifest = synth_action_dataset(&cfg, &ctx.out)?;
    let count = |s| manifest.split_indices(s).len();
    ctx.say(format!(
        "{} clips ({} classes): train {}, val {}, test {}",
        manifest.records.len(),
        cfg.classes,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    ));
    ctx.result(&ctx.out.join("manifest.json"));
    Ok(())
}

fn make_matrix(ctx: &Ctx, a: crate::MatrixArgs) -> anyhow::Result<()> {
    let mut sec = ctx.cfg.sensing.clone();
    if let Some(f) = &a.family {
        sec.family = f.parse::<Family>().map_err(|e| UsageError(e.to_string()))?;
    }
    sec.block = a.block.unwrap_or(sec.block);
    sec.ratio = a.ratio.unwrap_or(sec.ratio);
    sec.seed = ctx.seed.unwrap_or(sec.seed);
    sec.sub_block = a.sub_block.or(sec.sub_block);
    sec.window = a.window.or(sec.window);
    sec.kernel = a.kernel.or(sec.kernel);
    sec.stride = a.stride.or(sec.stride);
    let phi = SensingMatrix::build(&sec.to_config()?)?;
    let path = ctx.out.join(&a.file);
    phi.save(&path)?;
    ctx.say(format!(
        "{} matrix {}×{} (B = {}, r = {})",
        sec.family,
        phi.rows(),
        phi.cols(),
        phi.block(),
        phi.ratio()
    ));
    ctx.result(&path);
    Ok(())
}

fn encode(ctx: &Ctx, a: crate::EncodeArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let phi = SensingMatrix::load(&a.matrix)?;
    let enc = encode_manifest(&manifest, &phi, &ctx.out)?;
    let info = enc.encoding.expect("encoded manifest carries its encoding");
    let g = manifest.geometry;
    ctx.say(format!(
        "{} tensors of {:?} from {}×{}×{}×3 clips (r = {})",
        enc.records.len(),
        info.dims,
        g.t,
        g.h,
        g.w,
        info.ratio
    ));
    ctx.result(&ctx.out.join("manifest.json"));
    Ok(())
}

fn encoded(manifest: &DatasetManifest) -> anyhow::Result<csfall::data::EncodingInfo> {
    manifest
        .encoding
        .ok_or_else(|| csfall::Error::Format("manifest is not encoded; run `encode` first".into()).into())
}

fn train(ctx: &Ctx, a: crate::TrainArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let info = encoded(&manifest)?;
    let mut schedule = ctx.cfg.schedule.clone();
    schedule.lr = a.lr.unwrap_or(schedule.lr);
    schedule.batch_size = a.batch_size.unwrap_or(schedule.batch_size);
    schedule.max_epochs = a.max_epochs.unwrap_or(schedule.max_epochs);
    let seed = ctx.seed.unwrap_or(ctx.cfg.model.seed);
    let classes = manifest.classes.len();
    if let Some(k) = ctx.cfg.model.classes {
        if k != classes {
            return Err(UsageError(format!("config asks for {k} classes, manifest has {classes}")).into());
        }
    }

    let train_set = load_tensor_split(&manifest, Split::Train)?;
    let val_set = load_tensor_split(&manifest, Split::Val)?;
    let dims = info.dims;
    let init = match &a.init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.params.config.classes == classes {
                if ckpt.params.config.input != dims {
                    return Err(csfall::Error::Geometry(format!(
                        "checkpoint expects inputs {:?}, data is {dims:?}",
                        ckpt.params.config.input
                    ))
                    .into());
                }
                ckpt.params
            } else {
                ctx.say(format!(
                    "fine-tuning: new {classes}-class head on a {}-class checkpoint",
                    ckpt.params.config.classes
                ));
                load_for_transfer(path, dims, classes, seed)?
            }
        }
        None => {
            let mut net = NetworkConfig::new(dims, classes);
            if let Some(s) = ctx.cfg.model.stem {
                net.stem = s;
            }
            if let Some(b) = ctx.cfg.model.blocks {
                net.blocks = b;
            }
            ModelParams::init(&net, seed)?
        }
    };
    ctx.say(format!(
        "training {} parameters on {} samples ({} val), batch {}, up to {} epochs",
        init.count(),
        train_set.len(),
        val_set.len(),
        schedule.batch_size,
        schedule.max_epochs
    ));
    let outcome = train_from(init, &train_set, &val_set, &schedule, seed, |r: &EpochRecord| {
        ctx.say(format!(
            "epoch {:3}  lr {:.0e}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}{}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.train_accuracy,
            r.val_loss,
            r.val_accuracy,
            if r.lr_reduced { "  (lr reduced)" } else { "" }
        ))
    })?;

    let history = json!({
        "family": info.sensing.family,
        "ratio": info.ratio,
        "classes": manifest.classes,
        "seed": seed,
        "schedule": schedule,
        "best_epoch": outcome.best_epoch,
        "stop": outcome.stop,
        "epochs": outcome.history,
    });
    write_json(&ctx.out.join("history.json"), &history)?;
    if outcome.stop == StopReason::Diverged {
        return Err(NumericalFailure(format!(
            "training diverged after {} epochs; history written",
            outcome.history.len()
        ))
        .into());
    }
    let meta = json!({
        "family": info.sensing.family,
        "ratio": info.ratio,
        "classes": manifest.classes,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "stop": outcome.stop,
    });
    let path = ctx.out.join("model.ckp");
    save_checkpoint(&path, &outcome.params, &meta)?;
    ctx.say(format!(
        "best epoch {} ({:?} after {} epochs)",
        outcome.best_epoch,
        outcome.stop,
        outcome.history.len()
    ));
    ctx.result(&path);
    Ok(())
}

fn eval(ctx: &Ctx, a: crate::EvalArgs) -> anyhow::Result<()> {
    let split = parse_split(&a.split)?;
    let manifest = load_manifest(&a.manifest)?;
    let info = encoded(&manifest)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let params = ckpt.params;
    if params.config.input != info.dims {
        return Err(csfall::Error::Geometry(format!(
            "checkpoint expects inputs {:?}, manifest holds {:?}",
            params.config.input, info.dims
        ))
        .into());
    }
    if params.config.classes != manifest.classes.len() {
        return Err(csfall::Error::Geometry(format!(
            "checkpoint has {} classes, manifest {}",
            params.config.classes,
            manifest.classes.len()
        ))
        .into());
    }
    let data = load_tensor_split(&manifest, split)?;
    let ev = evaluate(&params, &data)?;
    let report = json!({
        "family": info.sensing.family,
        "ratio": info.ratio,
        "split": split,
        "classes": manifest.classes,
        "accuracy": ev.accuracy,
        "total": ev.total,
        "correct": ev.correct,
        "confusion": ev.confusion,
    });
    let path = ctx.out.join(&a.file);
    write_json(&path, &report)?;
    ctx.say(format!("accuracy {} ({}/{})", ev.accuracy, ev.correct, ev.total));
    ctx.result(&path);
    Ok(())
}

fn privacy_eval(ctx: &Ctx, a: crate::PrivacyArgs) -> anyhow::Result<()> {
    let split = parse_split(&a.split)?;
    if a.clips == 0 {
        return Err(UsageError("--clips must be at least 1".into()).into());
    }
    let manifest = load_manifest(&a.manifest)?;
    if manifest.encoding.is_some() {
        return Err(UsageError("privacy-eval needs the raw clip manifest, not an encoded one".into()).into());
    }
    let phi = SensingMatrix::load(&a.matrix)?;
    let mut recon = ctx.cfg.recon;
    recon.iterations = a.iterations.unwrap_or(recon.iterations);
    recon.lambda = a.lambda.unwrap_or(recon.lambda);
    let seeds = if a.wrong_seeds.is_empty() {
        vec![phi.config().seed.wrapping_add(1)]
    } else {
        a.wrong_seeds.clone()
    };
    let picked: Vec<usize> = manifest.split_indices(split).into_iter().take(a.clips).collect();
    if picked.is_empty() {
        return Err(csfall::Error::InvalidArgument(format!("split {} is empty", split.name())).into());
    }

    let mut clips = Vec::new();
    let (mut sum_true, mut sum_wrong, mut sum_gap, mut min_gap, mut n) = (0.0, 0.0, 0.0, f64::INFINITY, 0usize);
    for &i in &picked {
        let rec = &manifest.records[i];
        let clip = VideoClip::load(&manifest.resolve(rec))?;
        let reports = privacy_sweep(&clip, &phi, &seeds, &recon)?;
        let mut rows = Vec::new();
        for (r, &seed) in reports.iter().zip(&seeds) {
            sum_true += r.psnr_true;
            sum_wrong += r.psnr_wrong;
            sum_gap += r.gap;
            min_gap = min_gap.min(r.gap);
            n += 1;
            rows.push(json!({
                "wrong_seed": seed,
                "psnr_true": json_f64(r.psnr_true),
                "psnr_wrong": json_f64(r.psnr_wrong),
                "gap": json_f64(r.gap),
            }));
        }
        ctx.say(format!(
            "{}: true-key PSNR {:.2} dB, mean wrong-key PSNR {:.2} dB",
            rec.path.display(),
            reports[0].psnr_true,
            reports.iter().map(|r| r.psnr_wrong).sum::<f64>() / reports.len() as f64
        ));
        clips.push(json!({ "path": rec.path, "label": rec.label, "results": rows }));
    }
    let mean = |s: f64| s / n as f64;
    let report = json!({
        "family": phi.config().family,
        "ratio": phi.ratio(),
        "matrix_seed": phi.config().seed,
        "wrong_seeds": seeds,
        "split": split,
        "recon": recon,
        "mean_psnr_true": json_f64(mean(sum_true)),
        "mean_psnr_wrong": json_f64(mean(sum_wrong)),
        "mean_gap": json_f64(mean(sum_gap)),
        "min_gap": json_f64(min_gap),
        "clips": clips,
    });
    let path = ctx.out.join(&a.file);
    write_json(&path, &report)?;
    ctx.say(format!("mean gap {:.2} dB over {n} reconstructions", mean(sum_gap)));
    ctx.result(&path);
    Ok(())
}
