// Subcommand bodies. Each one resolves its inputs, runs the core
// routine, writes its outputs into the declared output directory, and
// drops a resolved_config.json snapshot beside them.

use std::path::{Path, PathBuf};

use serde_json::json;

use tgavc_core::convert::{convert_file, ConversionRequest, DEFAULT_GRIFFIN_LIM_ITERS};
use tgavc_core::corpus::{make_synthetic_corpus, CorpusManifest, FeatureStore, Split};
use tgavc_core::dsp::load_mel;
use tgavc_core::error::{Error, Result};
use tgavc_core::eval::{
    conversion_protocol, disentanglement_probe, emit_plots, style_separation_report, EvalReport,
    TriptychSpec,
};
use tgavc_core::models::load_checkpoint;
use tgavc_core::training::{lookup_regime, TrainContext};

use crate::config::{write_snapshot, CliConfig};
use crate::TrainArgs;

fn load_manifest(corpus: &Path) -> Result<CorpusManifest> {
    CorpusManifest::load(&corpus.join("manifest.jsonl"))
}

/// Features come from `prepare-data` output when the caller points at it,
/// otherwise they are computed from the corpus audio on the spot.
fn load_features(
    cfg: &CliConfig,
    manifest: &CorpusManifest,
    features: Option<&Path>,
) -> Result<FeatureStore> {
    match features {
        Some(dir) => {
            log::info!("loading precomputed features from {}", dir.display());
            FeatureStore::from_dir(manifest, dir)
        }
        None => {
            log::info!("computing features from corpus audio");
            FeatureStore::compute(manifest, &cfg.dsp)
        }
    }
}

pub fn make_toy_corpus(cfg: &CliConfig, out: &Path) -> Result<()> {
    let toy = cfg.corpus.to_toy_config(&cfg.dsp);
    let manifest = make_synthetic_corpus(&toy, out)?;
    write_snapshot(out, "make-toy-corpus", cfg, json!({ "out": out }))?;
    println!(
        "wrote corpus: {} speakers, {} utterances -> {}",
        manifest.num_speakers(),
        manifest.records.len(),
        out.display()
    );
    Ok(())
}

pub fn prepare_data(cfg: &CliConfig, corpus: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(corpus)?;
    let written = FeatureStore::write_dir(&manifest, &cfg.dsp, out)?;
    write_snapshot(out, "prepare-data", cfg, json!({ "corpus": corpus, "out": out }))?;
    println!("wrote {written} feature files -> {}", out.display());
    Ok(())
}

pub fn run_training(cfg: &CliConfig, subcommand: &str, args: &TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.corpus)?;
    let store = load_features(cfg, &manifest, args.features.as_deref())?;
    let regime = lookup_regime(&cfg.train.regime)?;
    log::info!("regime {}: {}", regime.name(), regime.description());

    let ctx = TrainContext {
        manifest: &manifest,
        store: &store,
        mcfg: cfg.model.clone(),
        tcfg: cfg.train.clone(),
        out_dir: args.out.clone(),
        style_ckpt: args.style_ckpt.clone(),
        tts_ckpt: args.tts_ckpt.clone(),
        resume: args.resume.clone(),
    };
    let summary = regime.run(&ctx)?;
    write_snapshot(
        &args.out,
        subcommand,
        cfg,
        json!({
            "corpus": args.corpus,
            "features": args.features,
            "out": args.out,
            "style_ckpt": args.style_ckpt,
            "tts_ckpt": args.tts_ckpt,
            "resume": args.resume,
        }),
    )?;
    println!(
        "trained {} for {} steps -> {}",
        regime.name(),
        summary.steps_run,
        summary.checkpoint_path.display()
    );
    if let Some(report) = &summary.final_report {
        println!(
            "final losses: recon {:.6} content {:.6} adv {:.6}",
            report.recon, report.content, report.adv
        );
    }
    if summary.meta != json!({}) {
        println!("run metadata: {}", summary.meta);
    }
    Ok(())
}

pub fn convert(
    cfg: &CliConfig,
    source: &Path,
    target_dir: &Path,
    ckpt: &Path,
    out: &Path,
) -> Result<()> {
    let mut styles: Vec<PathBuf> = std::fs::read_dir(target_dir)
        .map_err(|e| Error::io(target_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("wav")))
        .collect();
    styles.sort();
    if styles.is_empty() {
        return Err(Error::validation(format!(
            "no .wav files found in target style directory {}",
            target_dir.display()
        )));
    }
    log::info!("enrolling target style from {} reference file(s)", styles.len());

    let req = ConversionRequest {
        source_audio: source.to_path_buf(),
        target_style_audios: styles,
        checkpoint: ckpt.to_path_buf(),
        output: out.to_path_buf(),
    };
    let outcome = convert_file(&req, &cfg.dsp, DEFAULT_GRIFFIN_LIM_ITERS)?;

    let snapshot_dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    write_snapshot(
        snapshot_dir.unwrap_or(Path::new(".")),
        "convert",
        cfg,
        json!({ "source": source, "target_dir": target_dir, "ckpt": ckpt, "out": out }),
    )?;
    println!(
        "converted {} frames -> {} (features: {})",
        outcome.source_frames,
        outcome.output_wav.display(),
        outcome.sidecar_mel.display()
    );
    Ok(())
}

pub fn evaluate(
    cfg: &CliConfig,
    ckpt_path: &Path,
    baseline_path: Option<&Path>,
    corpus: &Path,
    features: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let manifest = load_manifest(corpus)?;
    let store = load_features(cfg, &manifest, features)?;
    let ckpt = load_checkpoint(ckpt_path)?;

    log::info!("scoring '{}' on the held-out conversion protocol", ckpt.kind);
    let primary = conversion_protocol(&ckpt, &manifest, &store, &cfg.dsp, Split::Test)?;

    let baseline = match baseline_path {
        Some(path) => {
            let b = load_checkpoint(path)?;
            log::info!("scoring baseline '{}' on the same protocol", b.kind);
            Some(conversion_protocol(&b, &manifest, &store, &cfg.dsp, Split::Test)?)
        }
        None => None,
    };

    // The probe only applies to checkpoints that carry a content encoder.
    let probe = if matches!(ckpt.kind.as_str(), "tgavc" | "tgavcs") {
        log::info!("training speaker probes on frozen content features");
        Some(disentanglement_probe(&ckpt, &manifest, &store, &cfg.probe)?)
    } else {
        log::info!("skipping the leakage probe: '{}' has no content encoder", ckpt.kind);
        None
    };

    // Style separation is informative but not every checkpoint carries a
    // style encoder; a shape complaint downgrades to a warning while real
    // failures still abort.
    let style = match style_separation_report(&ckpt, &manifest, &store, &cfg.dsp, Split::Test) {
        Ok(s) => Some(s),
        Err(e) if e.is_validation() => {
            log::warn!("style separation skipped: {e}");
            None
        }
        Err(e) => return Err(e),
    };

    let report = EvalReport::assemble(primary, baseline, probe, style, manifest.num_speakers())?;
    let report_path = out.join("eval_report.json");
    report.save_json(&report_path)?;
    write_snapshot(
        out,
        "evaluate",
        cfg,
        json!({
            "ckpt": ckpt_path,
            "baseline_ckpt": baseline_path,
            "corpus": corpus,
            "features": features,
            "out": out,
        }),
    )?;

    println!("evaluation of '{}' ({} pairs):", report.kind, report.pairs.len());
    println!(
        "  converted MCD {:.3} +/- {:.3} dB (unconverted {:.3}, improves {:.1}%)",
        report.mcd_mean,
        report.mcd_std,
        report.unconverted_mcd_mean,
        100.0 * report.improves_fraction
    );
    println!(
        "  self-conversion MCD {:.3} dB, cross-vs-source {:.3} dB",
        report.self_mcd_mean, report.cross_vs_source_mean
    );
    if let Some(b) = &report.baseline {
        println!(
            "  baseline '{}': MCD {:.3} +/- {:.3} dB (improves {:.1}%)",
            b.kind,
            b.mcd_mean,
            b.mcd_std,
            100.0 * b.improves_fraction
        );
    }
    if let Some(acc) = report.probe_accuracy {
        println!("  speaker probe on content features: {:.3} (chance {:.3})", acc, report.chance);
    }
    if let (Some(w), Some(b)) = (report.style_within, report.style_between) {
        println!("  style cosine within {w:.3} / between {b:.3}");
    }
    println!("report -> {}", report_path.display());
    Ok(())
}

/// Parses `NAME=src.mel,conv.mel,tgt.mel` and loads the three panels.
fn parse_triptych(spec: &str) -> Result<TriptychSpec> {
    let (name, paths) = spec.split_once('=').ok_or_else(|| {
        Error::validation(format!(
            "triptych spec '{spec}' must look like NAME=source.mel,converted.mel,target.mel"
        ))
    })?;
    let parts: Vec<&str> = paths.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "triptych spec '{spec}' needs exactly 3 comma-separated feature files, got {}",
            parts.len()
        )));
    }
    let mut panels = Vec::with_capacity(3);
    for part in &parts {
        let (mel, _) = load_mel(Path::new(part))?;
        panels.push(mel);
    }
    let target = panels.pop().expect("3 panels");
    let converted = panels.pop().expect("2 panels");
    let source = panels.pop().expect("1 panel");
    Ok(TriptychSpec { name: name.to_string(), source, converted, target })
}

pub fn plots(
    cfg: &CliConfig,
    metrics_log: Option<&Path>,
    report_paths: &[PathBuf],
    triptych_specs: &[String],
    out: &Path,
) -> Result<()> {
    if metrics_log.is_none() && report_paths.is_empty() && triptych_specs.is_empty() {
        return Err(Error::validation(
            "nothing to plot: pass --metrics-log, --report, or --triptych",
        ));
    }
    let mut reports = Vec::with_capacity(report_paths.len());
    for path in report_paths {
        reports.push(EvalReport::load_json(path)?);
    }
    let mut triptychs = Vec::with_capacity(triptych_specs.len());
    for spec in triptych_specs {
        triptychs.push(parse_triptych(spec)?);
    }

    let outcome = emit_plots(metrics_log, &reports, &triptychs, out)?;
    write_snapshot(
        out,
        "plots",
        cfg,
        json!({
            "metrics_log": metrics_log,
            "reports": report_paths,
            "triptychs": triptych_specs,
            "out": out,
        }),
    )?;
    for image in &outcome.images {
        println!("wrote {}", image.display());
    }
    if outcome.images.is_empty() {
        return Err(Error::validation(format!(
            "no plots could be drawn ({} warning(s); see the log)",
            outcome.warnings
        )));
    }
    if outcome.warnings > 0 {
        println!("{} input warning(s); see the log", outcome.warnings);
    }
    Ok(())
}
