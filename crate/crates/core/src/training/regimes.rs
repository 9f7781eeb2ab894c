// The regime registry and the per-regime run loops. A regime owns the
// whole shape of a run: which parameter families exist, which
// checkpoints it consumes, which step function it repeats, and what it
// writes into its output checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Axis;
use serde_json::json;

use crate::corpus::{BatchIterator, CorpusManifest, FeatureStore, GeBatchSampler, Split};
use crate::error::{Error, Result};
use crate::models::{
    init_autovc, init_content_encoder, init_decoder, init_speaker_classifier, init_style_encoder,
    init_text_encoder, load_checkpoint, save_checkpoint, style_encoder_forward, ModelConfig,
};
use crate::nn::{Params, Tape};
use crate::objectives::{init_ge2e, LossReport};
use crate::training::state::{
    absorb_style_encoder, state_from_checkpoint, state_to_checkpoint, TrainState,
};
use crate::training::steps::{
    autovc_train_step, ge2e_train_step, tgavc_phase_a, tgavc_phase_b, tgavc_train_step,
};
use crate::training::{MetricsLogger, TrainConfig};

/// Everything a regime needs to run: the corpus, the configs, the output
/// directory, and the optional upstream checkpoints.
pub struct TrainContext<'a> {
    pub manifest: &'a CorpusManifest,
    pub store: &'a FeatureStore,
    pub mcfg: ModelConfig,
    pub tcfg: TrainConfig,
    pub out_dir: PathBuf,
    /// Pretrained style-encoder checkpoint (required by the baseline,
    /// optional elsewhere).
    pub style_ckpt: Option<PathBuf>,
    /// Pretrained synthesis checkpoint (required by the frozen variant).
    pub tts_ckpt: Option<PathBuf>,
    /// Checkpoint of an interrupted run of the same regime to continue.
    pub resume: Option<PathBuf>,
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct RunSummary {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub steps_run: u64,
    pub final_report: Option<LossReport>,
    /// Regime-specific extras (also merged into the checkpoint metadata).
    pub meta: serde_json::Value,
}

/// A training strategy selectable by name at runtime.
pub trait Regime {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary>;
}

type RegimeCtor = fn() -> Box<dyn Regime>;

const REGISTRY: &[(&str, RegimeCtor)] = &[
    ("tgavc", || Box::new(TgavcRegime)),
    ("tgavcs", || Box::new(TgavcsRegime)),
    ("autovc", || Box::new(AutovcRegime)),
    ("ge2e", || Box::new(Ge2eRegime)),
    ("tts", || Box::new(TtsRegime)),
];

pub fn regime_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

pub fn lookup_regime(name: &str) -> Result<Box<dyn Regime>> {
    for (n, ctor) in REGISTRY {
        if *n == name {
            return Ok(ctor());
        }
    }
    Err(Error::validation(format!(
        "unknown training regime '{name}'; available: {}",
        regime_names().join(", ")
    )))
}

/// The corpus decides the classifier head size; everything else comes
/// from the caller's model config.
fn effective_model_config(ctx: &TrainContext) -> Result<ModelConfig> {
    let mut mcfg = ctx.mcfg.clone();
    mcfg.num_speakers = ctx.manifest.num_speakers();
    mcfg.validate()?;
    Ok(mcfg)
}

/// Either restores a checkpoint of the expected kind (keeping its whole
/// configuration except for the possibly extended step budget) or builds
/// fresh state.
fn resume_or_init(
    ctx: &TrainContext,
    kind: &str,
    init: impl FnOnce() -> Result<TrainState>,
) -> Result<TrainState> {
    match &ctx.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.require_kind(&[kind])?;
            let mut state = state_from_checkpoint(&ckpt)?;
            state.tcfg.max_steps = ctx.tcfg.max_steps;
            Ok(state)
        }
        None => init(),
    }
}

/// Shared step loop: derive the step's batch inside `step_fn`, log one
/// metrics line per step, and stop at the step budget.
fn run_loop(
    ctx: &TrainContext,
    state: &mut TrainState,
    mut step_fn: impl FnMut(&mut TrainState, u64) -> Result<LossReport>,
) -> Result<(PathBuf, Option<LossReport>)> {
    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;
    let metrics_path = ctx.out_dir.join("train_log.jsonl");
    let mut logger = if state.step > 0 {
        MetricsLogger::append(&metrics_path)?
    } else {
        MetricsLogger::create(&metrics_path)?
    };
    let mut last = None;
    let t0 = Instant::now();
    let start_step = state.step;
    while state.step < state.tcfg.max_steps {
        let report = step_fn(state, state.step)?;
        logger.log(state.step, &report)?;
        state.step += 1;
        last = Some(report);
    }
    let ran = state.step - start_step;
    if ran > 0 {
        log::info!("ran {ran} step(s) in {:.2}s", t0.elapsed().as_secs_f64());
    }
    Ok((metrics_path, last))
}

fn finish(
    ctx: &TrainContext,
    state: &TrainState,
    kind: &str,
    extra_meta: serde_json::Value,
    metrics_path: PathBuf,
    final_report: Option<LossReport>,
) -> Result<RunSummary> {
    let ckpt = state_to_checkpoint(state, kind, extra_meta.clone());
    let checkpoint_path = ctx.out_dir.join(format!("{kind}.ckpt"));
    save_checkpoint(&checkpoint_path, &ckpt)?;
    Ok(RunSummary {
        checkpoint_path,
        metrics_path,
        steps_run: state.step,
        final_report,
        meta: extra_meta,
    })
}

fn load_style_into(params: &mut Params, ctx: &TrainContext, mcfg: &ModelConfig) -> Result<()> {
    if let Some(path) = &ctx.style_ckpt {
        let ckpt = load_checkpoint(path)?;
        absorb_style_encoder(params, &ckpt, mcfg)?;
    }
    Ok(())
}

/// Joint two-phase training of all five networks.
struct TgavcRegime;

impl Regime for TgavcRegime {
    fn name(&self) -> &'static str {
        "tgavc"
    }
    fn description(&self) -> &'static str {
        "joint two-phase training: reconstruction phase, then content matching \
         with adversarial speaker-identity removal"
    }
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary> {
        ctx.tcfg.validate()?;
        let mcfg = effective_model_config(ctx)?;
        let mut state = resume_or_init(ctx, "tgavc", || {
            let seed = ctx.tcfg.seed;
            let mut p = Params::new();
            init_text_encoder(&mut p, &mcfg, seed);
            init_content_encoder(&mut p, &mcfg, seed);
            init_style_encoder(&mut p, &mcfg, seed);
            init_decoder(&mut p, &mcfg, mcfg.d_model, seed);
            init_speaker_classifier(&mut p, &mcfg, mcfg.d_model, seed);
            load_style_into(&mut p, ctx, &mcfg)?;
            Ok(TrainState::new(p, mcfg.clone(), ctx.tcfg.clone()))
        })?;
        let iter = BatchIterator::new(
            ctx.manifest,
            ctx.store,
            Split::Train,
            state.tcfg.batch_size,
            state.tcfg.seed,
            None,
            false,
        )?;
        let (metrics_path, last) = run_loop(ctx, &mut state, |st, step| {
            let batch = iter.batch_for_step(step as usize);
            tgavc_train_step(st, &batch)
        })?;
        finish(ctx, &state, "tgavc", json!({}), metrics_path, last)
    }
}

/// Phase-one-only training of the synthesis trio (text encoder, style
/// encoder, decoder).
struct TtsRegime;

impl Regime for TtsRegime {
    fn name(&self) -> &'static str {
        "tts"
    }
    fn description(&self) -> &'static str {
        "reconstruction-only pretraining of the text encoder, style encoder, and decoder"
    }
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary> {
        ctx.tcfg.validate()?;
        let mcfg = effective_model_config(ctx)?;
        let mut state = resume_or_init(ctx, "tts", || {
            let seed = ctx.tcfg.seed;
            let mut p = Params::new();
            init_text_encoder(&mut p, &mcfg, seed);
            init_style_encoder(&mut p, &mcfg, seed);
            init_decoder(&mut p, &mcfg, mcfg.d_model, seed);
            load_style_into(&mut p, ctx, &mcfg)?;
            Ok(TrainState::new(p, mcfg.clone(), ctx.tcfg.clone()))
        })?;
        let iter = BatchIterator::new(
            ctx.manifest,
            ctx.store,
            Split::Train,
            state.tcfg.batch_size,
            state.tcfg.seed,
            None,
            false,
        )?;
        let (metrics_path, last) = run_loop(ctx, &mut state, |st, step| {
            let batch = iter.batch_for_step(step as usize);
            let l1 = tgavc_phase_a(st, &batch)?;
            Ok(LossReport::two_phase(l1, 0.0, 0.0, st.tcfg.lambda))
        })?;
        finish(ctx, &state, "tts", json!({}), metrics_path, last)
    }
}

/// Phase-two-only training on top of a frozen pretrained synthesis trio.
struct TgavcsRegime;

impl Regime for TgavcsRegime {
    fn name(&self) -> &'static str {
        "tgavcs"
    }
    fn description(&self) -> &'static str {
        "content encoder + classifier training with a frozen pretrained synthesis trio"
    }
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary> {
        ctx.tcfg.validate()?;
        let tts_path = ctx.tts_ckpt.as_ref().ok_or_else(|| {
            Error::validation(
                "the tgavcs regime needs a pretrained synthesis checkpoint (set tts_ckpt)",
            )
        })?;
        let mcfg = effective_model_config(ctx)?;
        let mut state = resume_or_init(ctx, "tgavcs", || {
            let ckpt = load_checkpoint(tts_path)?;
            ckpt.require_kind(&["tts"])?;
            if ckpt.config != mcfg {
                return Err(Error::validation(
                    "synthesis checkpoint was trained with a different model configuration \
                     than this run",
                ));
            }
            let mut p = ckpt.extract_params("model").subset(&["te", "es", "dec"]);
            if p.is_empty() {
                return Err(Error::validation(
                    "synthesis checkpoint holds no text/style/decoder parameters",
                ));
            }
            let seed = ctx.tcfg.seed;
            init_content_encoder(&mut p, &mcfg, seed);
            init_speaker_classifier(&mut p, &mcfg, mcfg.d_model, seed);
            Ok(TrainState::new(p, mcfg.clone(), ctx.tcfg.clone()))
        })?;
        let frozen_before = state.params.subset(&["te", "es", "dec"]);
        let iter = BatchIterator::new(
            ctx.manifest,
            ctx.store,
            Split::Train,
            state.tcfg.batch_size,
            state.tcfg.seed,
            None,
            false,
        )?;
        let (metrics_path, last) = run_loop(ctx, &mut state, |st, step| {
            let batch = iter.batch_for_step(step as usize);
            let (content, adv) = tgavc_phase_b(st, &batch)?;
            Ok(LossReport::two_phase(0.0, content, adv, st.tcfg.lambda))
        })?;
        let frozen_after = state.params.subset(&["te", "es", "dec"]);
        if !frozen_before.bit_identical(&frozen_after) {
            return Err(Error::runtime(
                "frozen synthesis parameters drifted during training",
            ));
        }
        finish(ctx, &state, "tgavcs", json!({}), metrics_path, last)
    }
}

/// The bottleneck-autoencoder baseline with an off-the-shelf (frozen)
/// pretrained style encoder.
struct AutovcRegime;

impl Regime for AutovcRegime {
    fn name(&self) -> &'static str {
        "autovc"
    }
    fn description(&self) -> &'static str {
        "bottleneck autoencoder baseline over a frozen pretrained style encoder"
    }
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary> {
        ctx.tcfg.validate()?;
        if ctx.style_ckpt.is_none() && ctx.resume.is_none() {
            return Err(Error::validation(
                "the autovc baseline needs a pretrained style checkpoint (set style_ckpt)",
            ));
        }
        let mcfg = effective_model_config(ctx)?;
        let mut state = resume_or_init(ctx, "autovc", || {
            let seed = ctx.tcfg.seed;
            let mut p = Params::new();
            init_autovc(&mut p, &mcfg, seed);
            init_style_encoder(&mut p, &mcfg, seed);
            load_style_into(&mut p, ctx, &mcfg)?;
            Ok(TrainState::new(p, mcfg.clone(), ctx.tcfg.clone()))
        })?;
        let frozen_before = state.params.subset(&["es"]);
        let iter = BatchIterator::new(
            ctx.manifest,
            ctx.store,
            Split::Train,
            state.tcfg.batch_size,
            state.tcfg.seed,
            None,
            true,
        )?;
        let (metrics_path, last) = run_loop(ctx, &mut state, |st, step| {
            let batch = iter.batch_for_step(step as usize);
            autovc_train_step(st, &batch)
        })?;
        let frozen_after = state.params.subset(&["es"]);
        if !frozen_before.bit_identical(&frozen_after) {
            return Err(Error::runtime("frozen style encoder drifted during training"));
        }
        finish(ctx, &state, "autovc", json!({}), metrics_path, last)
    }
}

/// Style-encoder pretraining on the verification loss.
struct Ge2eRegime;

impl Regime for Ge2eRegime {
    fn name(&self) -> &'static str {
        "ge2e"
    }
    fn description(&self) -> &'static str {
        "style-encoder pretraining on the generalized end-to-end verification loss"
    }
    fn run(&self, ctx: &TrainContext) -> Result<RunSummary> {
        ctx.tcfg.validate()?;
        let mcfg = effective_model_config(ctx)?;
        let mut state = resume_or_init(ctx, "ge2e", || {
            let mut p = Params::new();
            init_style_encoder(&mut p, &mcfg, ctx.tcfg.seed);
            init_ge2e(&mut p);
            Ok(TrainState::new(p, mcfg.clone(), ctx.tcfg.clone()))
        })?;
        let sampler = GeBatchSampler::new(
            ctx.manifest,
            ctx.store,
            Split::Train,
            state.tcfg.ge2e_speakers,
            state.tcfg.ge2e_utts,
            state.tcfg.ge2e_crop_frames,
            state.tcfg.seed,
        )?;
        let (metrics_path, last) = run_loop(ctx, &mut state, |st, step| {
            let (crops, speaker_ids) = sampler.batch_for_step(step as usize);
            ge2e_train_step(st, &crops, &speaker_ids)
        })?;

        let mut extra = json!({
            "ge2e_w": state.params.get("ge2e.w")[[0]],
            "ge2e_b": state.params.get("ge2e.b")[[0]],
        });
        if let Some((within, between)) =
            heldout_style_separation(&state.params, &state.mcfg, ctx.manifest, ctx.store)?
        {
            let obj = extra.as_object_mut().expect("extra is an object");
            obj.insert("val_within_cos".into(), json!(within));
            obj.insert("val_between_cos".into(), json!(between));
            obj.insert("val_cos_gap".into(), json!(within - between));
        }
        finish(ctx, &state, "ge2e", extra, metrics_path, last)
    }
}

/// Mean within-speaker and between-speaker cosine similarity of style
/// embeddings over the held-out split (embeddings are unit-norm, so
/// cosine is a dot product). `None` when the split lacks a pair of either
/// kind.
fn heldout_style_separation(
    params: &Params,
    mcfg: &ModelConfig,
    manifest: &CorpusManifest,
    store: &FeatureStore,
) -> Result<Option<(f64, f64)>> {
    let mut embeddings: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in manifest.records_in(Split::Val) {
        let mel = store.get(&rec.utterance_id)?;
        let frames = mel.shape()[0];
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &[]);
        let input = tape.constant(mel.clone().insert_axis(Axis(0)).into_dyn());
        let emb = style_encoder_forward(&mut tape, &bound, mcfg, input, &[frames]);
        let row = tape.value(emb).iter().copied().collect();
        embeddings.push((manifest.speaker_id(&rec.speaker)?, row));
    }
    match crate::eval::within_between_cosines(&embeddings) {
        (Some(w), Some(b)) => Ok(Some((w, b))),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, ToyCorpusConfig};
    use crate::dsp::{save_mel, DspConfig};
    use crate::models::Checkpoint;
    use crate::training::read_metrics;
    use std::sync::OnceLock;

    fn tiny_mcfg() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            d_style: 3,
            n_heads: 2,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            ff_hidden: 6,
            fft_kernel: 3,
            content_kernel: 3,
            content_channels: 4,
            content_lstm: 2,
            style_lstm: 3,
            clf_lstm: 3,
            n_mels: 5,
            vocab_size: crate::corpus::Lexicon::bundled().vocab_size(),
            num_speakers: 2,
            autovc_bottleneck: 2,
            autovc_downsample: 2,
        }
    }

    fn tiny_dsp() -> DspConfig {
        DspConfig { n_mels: 5, ..DspConfig::default() }
    }

    struct Fixture {
        manifest: CorpusManifest,
        store: FeatureStore,
        // Held so the corpus directory outlives every test.
        _dir: tempfile::TempDir,
    }

    // One corpus for all regime tests: 2 speakers x 15 short utterances,
    // so the validation split holds 2 utterances per speaker.
    fn fixture() -> &'static Fixture {
        static FIXTURE: OnceLock<Fixture> = OnceLock::new();
        FIXTURE.get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ToyCorpusConfig {
                num_speakers: 2,
                utts_per_speaker: 15,
                seed: 77,
                min_syllables: 2,
                max_syllables: 2,
                dsp: tiny_dsp(),
            };
            let manifest = make_synthetic_corpus(&cfg, dir.path()).unwrap();
            let store = FeatureStore::compute(&manifest, &cfg.dsp).unwrap();
            Fixture { manifest, store, _dir: dir }
        })
    }

    fn ctx<'a>(fx: &'a Fixture, out: &std::path::Path, tcfg: TrainConfig) -> TrainContext<'a> {
        TrainContext {
            manifest: &fx.manifest,
            store: &fx.store,
            mcfg: tiny_mcfg(),
            tcfg,
            out_dir: out.to_path_buf(),
            style_ckpt: None,
            tts_ckpt: None,
            resume: None,
        }
    }

    fn short_tcfg(regime: &str, steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_steps: steps,
            seed: 3,
            regime: regime.into(),
            ge2e_speakers: 2,
            ge2e_utts: 2,
            ge2e_crop_frames: 12,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn registry_has_all_regimes_and_rejects_unknown_names() {
        assert_eq!(regime_names(), vec!["tgavc", "tgavcs", "autovc", "ge2e", "tts"]);
        for name in regime_names() {
            let regime = lookup_regime(name).unwrap();
            assert_eq!(regime.name(), name);
            assert!(!regime.description().is_empty());
        }
        let err = lookup_regime("sgd").err().unwrap();
        assert!(err.is_validation());
        assert!(err.to_string().contains("tgavcs"), "{err}");
    }

    #[test]
    fn tgavc_run_is_deterministic_and_resumable() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        let regime = lookup_regime("tgavc").unwrap();

        // Unbroken 4-step run.
        let a_dir = out.path().join("a");
        let sa = regime.run(&ctx(fx, &a_dir, short_tcfg("tgavc", 4))).unwrap();
        assert_eq!(sa.steps_run, 4);
        let ma = read_metrics(&sa.metrics_path).unwrap();
        assert_eq!(ma.len(), 4);
        assert!(ma.iter().all(|r| r.losses.all_finite()));

        // Identical seed: identical loss stream.
        let b_dir = out.path().join("b");
        let sb = regime.run(&ctx(fx, &b_dir, short_tcfg("tgavc", 4))).unwrap();
        let mb = read_metrics(&sb.metrics_path).unwrap();
        for (ra, rb) in ma.iter().zip(&mb) {
            assert_eq!(ra.losses, rb.losses, "step {}", ra.step);
        }

        // 2 steps, then resume to 4: same trajectory as the unbroken run.
        let c_dir = out.path().join("c");
        let sc = regime.run(&ctx(fx, &c_dir, short_tcfg("tgavc", 2))).unwrap();
        let mut rctx = ctx(fx, &c_dir, short_tcfg("tgavc", 4));
        rctx.resume = Some(sc.checkpoint_path.clone());
        let sc2 = regime.run(&rctx).unwrap();
        assert_eq!(sc2.steps_run, 4);
        let mc = read_metrics(&sc2.metrics_path).unwrap();
        assert_eq!(mc.len(), 4, "appended log holds the full trajectory");
        for (ra, rc) in ma.iter().zip(&mc) {
            assert_eq!(ra.step, rc.step);
            assert!((ra.losses.recon - rc.losses.recon).abs() < 1e-9);
            assert!((ra.losses.total_l2 - rc.losses.total_l2).abs() < 1e-9);
        }
    }

    #[test]
    fn tts_then_frozen_variant_keeps_the_trio_bit_identical() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        let tts_dir = out.path().join("tts");
        let tts = lookup_regime("tts").unwrap();
        let st = tts.run(&ctx(fx, &tts_dir, short_tcfg("tts", 2))).unwrap();
        let tts_ckpt = load_checkpoint(&st.checkpoint_path).unwrap();
        assert_eq!(tts_ckpt.kind, "tts");
        // The synthesis run trains no content encoder or classifier.
        assert!(tts_ckpt.extract_params("model").subset(&["ec", "clf"]).is_empty());

        let s_dir = out.path().join("tgavcs");
        let mut sctx = ctx(fx, &s_dir, short_tcfg("tgavcs", 3));
        sctx.tts_ckpt = Some(st.checkpoint_path.clone());
        let tgavcs = lookup_regime("tgavcs").unwrap();
        let ss = tgavcs.run(&sctx).unwrap();

        let final_ckpt = load_checkpoint(&ss.checkpoint_path).unwrap();
        assert_eq!(final_ckpt.kind, "tgavcs");
        let trio_before = tts_ckpt.extract_params("model").subset(&["te", "es", "dec"]);
        let trio_after = final_ckpt.extract_params("model").subset(&["te", "es", "dec"]);
        assert!(trio_before.bit_identical(&trio_after));
        // And the trained families exist now.
        assert!(!final_ckpt.extract_params("model").subset(&["ec", "clf"]).is_empty());
    }

    #[test]
    fn frozen_variant_without_a_synthesis_checkpoint_is_a_validation_error() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        let err = lookup_regime("tgavcs")
            .unwrap()
            .run(&ctx(fx, out.path(), short_tcfg("tgavcs", 1)))
            .unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("synthesis checkpoint"), "{err}");
    }

    #[test]
    fn frozen_variant_rejects_a_mismatched_model_config() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        let tts_dir = out.path().join("tts");
        let st = lookup_regime("tts")
            .unwrap()
            .run(&ctx(fx, &tts_dir, short_tcfg("tts", 1)))
            .unwrap();

        let s_dir = out.path().join("tgavcs");
        let mut sctx = ctx(fx, &s_dir, short_tcfg("tgavcs", 1));
        sctx.mcfg.ff_hidden += 2;
        sctx.tts_ckpt = Some(st.checkpoint_path.clone());
        let err = lookup_regime("tgavcs").unwrap().run(&sctx).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("model configuration"), "{err}");
    }

    #[test]
    fn ge2e_run_records_heldout_separation_and_feeds_the_baseline() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        let ge_dir = out.path().join("ge2e");
        let ge = lookup_regime("ge2e").unwrap();
        let sg = ge.run(&ctx(fx, &ge_dir, short_tcfg("ge2e", 3))).unwrap();
        assert!(sg.final_report.as_ref().unwrap().ge2e.unwrap().is_finite());
        let ge_ckpt = load_checkpoint(&sg.checkpoint_path).unwrap();
        assert_eq!(ge_ckpt.kind, "ge2e");
        assert!(ge_ckpt.meta_f64("val_within_cos").is_ok());
        assert!(ge_ckpt.meta_f64("val_between_cos").is_ok());
        assert!(ge_ckpt.meta_f64("val_cos_gap").is_ok());
        assert!(ge_ckpt.meta_f64("ge2e_w").unwrap() >= 1e-4);

        // The baseline refuses to start without it...
        let av_dir = out.path().join("autovc");
        let err = lookup_regime("autovc")
            .unwrap()
            .run(&ctx(fx, &av_dir, short_tcfg("autovc", 1)))
            .unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("style checkpoint"), "{err}");

        // ... and with it, trains while keeping the style encoder frozen.
        let mut actx = ctx(fx, &av_dir, short_tcfg("autovc", 2));
        actx.style_ckpt = Some(sg.checkpoint_path.clone());
        let sa = lookup_regime("autovc").unwrap().run(&actx).unwrap();
        let av_ckpt = load_checkpoint(&sa.checkpoint_path).unwrap();
        assert_eq!(av_ckpt.kind, "autovc");
        let es_pre = ge_ckpt.extract_params("model").subset(&["es"]);
        let es_post = av_ckpt.extract_params("model").subset(&["es"]);
        assert!(es_pre.bit_identical(&es_post));
        let report = sa.final_report.unwrap();
        assert!(report.all_finite());
        assert!(report.adv == 0.0);
    }

    #[test]
    fn style_checkpoint_with_wrong_geometry_is_rejected() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();
        // A ge2e checkpoint whose style width disagrees with the run's.
        let mut wrong = tiny_mcfg();
        wrong.d_style = 4;
        let mut p = Params::new();
        init_style_encoder(&mut p, &wrong, 1);
        let mut ck = Checkpoint::new("ge2e", wrong, serde_json::json!({}));
        ck.insert_params("model", &p);
        let ck_path = out.path().join("style.ckpt");
        save_checkpoint(&ck_path, &ck).unwrap();

        let mut tctx = ctx(fx, &out.path().join("run"), short_tcfg("tgavc", 1));
        tctx.style_ckpt = Some(ck_path);
        let err = lookup_regime("tgavc").unwrap().run(&tctx).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("d_style"), "{err}");
    }

    #[test]
    fn poisoned_feature_file_aborts_the_run_naming_the_batch() {
        let fx = fixture();
        let out = tempfile::tempdir().unwrap();

        // Precompute features to disk, poison one training utterance, and
        // reload the store from the poisoned directory.
        let feat_dir = out.path().join("features");
        FeatureStore::write_dir(&fx.manifest, &tiny_dsp(), &feat_dir).unwrap();
        let victim = fx
            .manifest
            .records_in(Split::Train)
            .first()
            .map(|r| r.utterance_id.clone())
            .unwrap();
        let mel = fx.store.get(&victim).unwrap();
        let mut poisoned = mel.clone();
        poisoned[[1, 2]] = f64::NAN;
        save_mel(&feat_dir.join(format!("{victim}.mel")), &poisoned, &tiny_dsp()).unwrap();
        let store = FeatureStore::from_dir(&fx.manifest, &feat_dir).unwrap();

        // Batch size covering the whole split guarantees the poisoned
        // utterance sits in the first batch.
        let mut tcfg = short_tcfg("tgavc", 1);
        tcfg.batch_size = fx.manifest.records_in(Split::Train).len();
        let mut pctx = ctx(fx, &out.path().join("run"), tcfg);
        pctx.store = &store;
        let err = lookup_regime("tgavc").unwrap().run(&pctx).unwrap_err();
        let msg = err.to_string();
        assert!(!err.is_validation());
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains(&victim), "{msg}");
    }
}
