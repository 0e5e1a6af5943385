use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use hfprep_core::config::{load_config, read_scores, split_manifest, Manifest, RunConfig, RunLog};
use hfprep_core::filters::{Boundary, Preprocessor, UnsharpMask};
use hfprep_core::frame_io::{load_y4m, write_y4m};
use hfprep_core::labeler::{
    pseudo_label_dataset, quality_at_bitrate, read_audit, select_optimal, Labeler, RDCurve,
};
use hfprep_core::metrics::{plcc, rmse};
use hfprep_core::model::{predict_video, train, LoadedModel, TrainEvent, TrainItem, TrainSpec, VideoRef};

use crate::{BoundaryArg, Cli, Command};

/// Environment variable that relocates the labeling cache.
pub const WORKDIR_ENV: &str = "HFPREP_WORKDIR";

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let log_path = cli.log.clone().or_else(|| cfg.log_path.clone());
    let mut log = RunLog::open(log_path.as_deref())?;
    let args: Vec<String> = std::env::args().collect();
    log.start(
        &args,
        json!({ "command": cli.command.name(), "seed": cfg.seed, "config": cfg }),
    );
    let t0 = std::time::Instant::now();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(&cfg, a),
        Command::Label(a) => label(&cfg, a, &mut log),
        Command::Train(a) => train_cmd(&cfg, a, &mut log),
        Command::Predict(a) => predict(&cfg, a, &mut log),
        Command::Evaluate(a) => evaluate(a, &mut log),
        Command::Rdplot(a) => rdplot(&cfg, a),
        Command::Split(a) => split(&cfg, a, &mut log),
    };
    log.event(
        "finish",
        json!({
            "ok": result.is_ok(),
            "error": result.as_ref().err().map(|e| format!("{e:#}")),
            "wall_s": t0.elapsed().as_secs_f64(),
        }),
    );
    result
}

fn preprocess(cfg: &RunConfig, a: crate::PreprocessArgs) -> Result<()> {
    let mut spec = cfg.gaussian;
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    if let Some(k) = a.ksize {
        spec.ksize = k;
    }
    if let Some(b) = a.boundary {
        spec.boundary = match b {
            BoundaryArg::Reflect => Boundary::Reflect,
            BoundaryArg::Wrap => Boundary::Wrap,
        };
    }
    spec.validate()?;
    let video = load_y4m(&a.input)?;
    let out = UnsharpMask::new(spec).apply_video(&video, a.alpha)?;
    write_y4m(&out, &a.output)?;
    Ok(())
}

fn label(cfg: &RunConfig, a: crate::LabelArgs, log: &mut RunLog) -> Result<()> {
    let mut spec = cfg.label_spec();
    if let Some(w) = std::env::var_os(WORKDIR_ENV).filter(|v| !v.is_empty()) {
        spec.workdir = w.into();
    }
    if let Some(w) = a.workdir {
        spec.workdir = w;
    }
    if let Some(n) = a.workers {
        spec.workers = n;
    }
    if let Some(m) = a.metric {
        spec.metric_cmd = m;
    }
    if a.no_cache {
        spec.cache = false;
    }
    let manifest = Manifest::load(&a.manifest)?;
    let labeler = Labeler::from_spec(spec, cfg.gaussian)?;
    let report = pseudo_label_dataset(&manifest, &labeler, &a.out, &a.audit)?;
    log.event(
        "label",
        json!({
            "videos": manifest.len(),
            "labeled": report.labeled.len(),
            "failures": report.failures,
            "counters": report.counters,
            "labels": a.out,
            "audit": a.audit,
        }),
    );
    println!(
        "labeled={} failed={} encodes={} cache_hits={}",
        report.labeled.len(),
        report.failures.len(),
        report.counters.encoder_runs,
        report.counters.encode_cache_hits
    );
    if !report.failures.is_empty() {
        let ids: Vec<&str> = report.failures.iter().map(|f| f.video_id.as_str()).collect();
        bail!(
            "{} of {} videos failed: {}; first error: {}",
            ids.len(),
            manifest.len(),
            ids.join(","),
            report.failures[0].error
        );
    }
    Ok(())
}

fn labeled_manifest(manifest: &Path, labels: Option<&Path>) -> Result<Manifest> {
    let m = Manifest::load(manifest)?;
    Ok(match labels {
        Some(p) => m.with_labels(&read_scores(p, "alpha_label")?),
        None => m,
    })
}

fn train_cmd(cfg: &RunConfig, a: crate::TrainArgs, log: &mut RunLog) -> Result<()> {
    let manifest = labeled_manifest(&a.manifest, a.labels.as_deref())?;
    let items: Vec<TrainItem> = manifest
        .entries
        .iter()
        .map(|e| TrainItem {
            id: e.video_id.clone(),
            video: VideoRef::File(e.path.clone()),
            label: e.alpha_label,
        })
        .collect();
    let mut schedule = cfg.train.clone();
    if let Some(e) = a.epochs {
        schedule.epochs = e;
    }
    if let Some(b) = a.batch {
        schedule.batch_size = b;
    }
    let spec = TrainSpec {
        config: cfg.model.clone(),
        sampler: cfg.sampler,
        mask_spec: cfg.mask_gaussian,
        schedule,
        seed: a.seed.unwrap_or(cfg.seed),
        fa_enabled: cfg.fa_enabled && !a.no_fa,
    };
    log.event("train_spec", json!({ "seed": spec.seed, "schedule": spec.schedule, "items": items.len() }));
    let outcome = train(&items, &spec, &mut |ev| {
        if let TrainEvent::Epoch(r) = ev {
            log::info!("epoch {} loss {:.5}", r.epoch, r.mean_loss);
            log.event(
                "epoch",
                json!({
                    "epoch": r.epoch,
                    "mean_loss": r.mean_loss,
                    "plateau": r.event,
                    "lr_backbone": r.lr_backbone,
                    "lr_head": r.lr_head,
                }),
            );
        }
    })?;
    let model = LoadedModel {
        model: outcome.best,
        sampler: spec.sampler,
        mask_spec: spec.mask_spec,
        train: Some(outcome.meta),
    };
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "best_epoch={} best_loss={} steps={}",
        outcome.meta.best_epoch, outcome.meta.best_loss, outcome.meta.steps
    );
    Ok(())
}

fn predict(cfg: &RunConfig, a: crate::PredictArgs, log: &mut RunLog) -> Result<()> {
    let model = LoadedModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let seed = a.seed.unwrap_or(cfg.seed);
    if let Some(path) = a.input {
        let video = load_y4m(&path)?;
        let p = predict_video(&video, &model, a.clips, seed)?;
        log.event("predict", json!({ "input": path, "seed": seed, "prediction": p }));
        println!("s_pred={}", p.s_pred);
        return Ok(());
    }
    let manifest = Manifest::load(a.manifest.as_deref().expect("clap requires --manifest"))?;
    let out = a.out.expect("clap requires --out");
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    w.write_record(["video_id", "s_pred"])?;
    for e in &manifest.entries {
        let video = load_y4m(&e.path)?;
        let p = predict_video(&video, &model, a.clips, seed).with_context(|| e.video_id.clone())?;
        w.write_record([e.video_id.clone(), p.s_pred.to_string()])?;
        log.event("predict", json!({ "video_id": e.video_id, "seed": seed, "prediction": p }));
    }
    w.flush()?;
    println!("predicted={}", manifest.len());
    Ok(())
}

fn evaluate(a: crate::EvaluateArgs, log: &mut RunLog) -> Result<()> {
    let pred = read_scores(&a.pred, "s_pred")?;
    let gt: HashMap<String, f64> = read_scores(&a.gt, "alpha_label")?;
    let mut ids: Vec<&String> = pred.keys().collect();
    ids.sort();
    let mut p = Vec::with_capacity(ids.len());
    let mut g = Vec::with_capacity(ids.len());
    for id in ids {
        let v = gt.get(id).ok_or_else(|| anyhow!("no ground truth for `{id}`"))?;
        p.push(pred[id]);
        g.push(*v);
    }
    let r = plcc(&p, &g)?;
    let e = rmse(&p, &g)?;
    log.event("evaluate", json!({ "n": p.len(), "plcc": r, "rmse": e }));
    println!("plcc={r} rmse={e}");
    Ok(())
}

fn rdplot(cfg: &RunConfig, a: crate::RdplotArgs) -> Result<()> {
    let target = a.target.unwrap_or(cfg.label.target_kbps);
    let audit = read_audit(&a.audit)?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["video_id", "alpha", "measured_kbps", "quality", "quality_at_target", "selected"])?;
    for (id, points) in &audit {
        let mut strategies: Vec<f64> = points.iter().map(|p| p.strategy).collect();
        strategies.sort_by(f64::total_cmp);
        strategies.dedup();
        let curves = strategies
            .iter()
            .map(|&s| RDCurve::new(s, points.iter().filter(|p| p.strategy == s).copied().collect()))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| id.clone())?;
        let best = select_optimal(&curves, &strategies, target)?;
        for c in &curves {
            let q = quality_at_bitrate(c, target);
            for p in c.points() {
                w.write_record([
                    id.clone(),
                    c.strategy().to_string(),
                    p.measured_kbps.to_string(),
                    p.quality.to_string(),
                    q.to_string(),
                    (c.strategy() == best.alpha).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    println!("videos={}", audit.len());
    Ok(())
}

fn split(cfg: &RunConfig, a: crate::SplitArgs, log: &mut RunLog) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let (tr, te) = split_manifest(&m, a.fraction, seed)?;
    tr.write(&a.train_out)?;
    te.write(&a.test_out)?;
    log.event("split", json!({ "seed": seed, "train": tr.len(), "test": te.len() }));
    println!("train={} test={}", tr.len(), te.len());
    Ok(())
}
