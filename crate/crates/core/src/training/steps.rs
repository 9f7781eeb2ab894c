// Single training steps for each regime. Every step builds a fresh graph,
// extracts the loss scalars, aborts on non-finite values before any
// parameter is touched, then clips and applies gradients through the
// optimizer that owns the affected subset.
//
// The two-phase step is the heart of the method:
//   phase one   reconstruct the mel from text content + style embedding;
//               updates text encoder, decoder, and (unless frozen) the
//               style encoder.
//   phase two   pull the audio content encoding toward the text encoding
//               while stripping speaker identity from it; updates content
//               encoder and speaker classifier only, with opposed signs
//               on the adversarial term.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::models::{
    autovc_code_frames, autovc_encode, autovc_forward, content_encoder_forward, decoder_forward,
    speaker_classifier_forward, style_encoder_forward, text_encoder_forward, ModelConfig,
};
use crate::nn::{clip_global_norm, Arr, Params, Tape};
use crate::objectives::{
    adversarial_term, autovc_losses, clamp_ge2e_scale, content_match_loss, ge2e_loss, recon_loss,
    LossReport,
};
use crate::training::state::{collect_grads, TrainState};

/// Abort the run rather than write corrupted parameters: name the loss,
/// the step, and the batch so the offending inputs can be inspected.
fn ensure_finite(values: &[(&str, f64)], step: u64, utterances: &[String]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::runtime(format!(
                "non-finite {name} loss ({v}) at step {step}; batch utterances: [{}]",
                utterances.join(", ")
            )));
        }
    }
    Ok(())
}

fn phase_a_prefixes(freeze_style: bool) -> Vec<&'static str> {
    if freeze_style {
        vec!["te", "dec"]
    } else {
        vec!["te", "es", "dec"]
    }
}

const PHASE_B_PREFIXES: [&str; 2] = ["ec", "clf"];

/// Phase one: self-reconstruction through the text path. The style
/// embedding comes from the same utterance being reconstructed. Returns
/// the reconstruction loss after applying one optimizer-A update.
pub fn tgavc_phase_a(state: &mut TrainState, batch: &Batch) -> Result<f64> {
    let trainable = phase_a_prefixes(state.tcfg.freeze_style);
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, &trainable);
    let mcfg = state.mcfg.clone();
    let t_frames = batch.mels.shape()[1];

    let mel = tape.constant(batch.mels.clone().into_dyn());
    let style = style_encoder_forward(&mut tape, &bound, &mcfg, mel, &batch.mel_lengths);
    let text = text_encoder_forward(
        &mut tape,
        &bound,
        &mcfg,
        &batch.phonemes,
        &batch.phoneme_lengths,
        &batch.durations,
        &batch.mel_lengths,
        t_frames,
    );
    let pred = decoder_forward(&mut tape, &bound, &mcfg, text, style, &batch.mel_lengths);
    let l1 = recon_loss(&mut tape, pred, mel, &batch.frame_mask());

    let l1_val = tape.scalar(l1);
    ensure_finite(&[("reconstruction", l1_val)], state.step, &batch.utterance_ids)?;

    let grads = tape.backward(l1);
    let mut map = collect_grads(&grads, &bound, &state.params, &trainable);
    clip_global_norm(&mut map, state.tcfg.clip_norm);
    state.opt_a.step(&mut state.params, &map);
    Ok(l1_val)
}

/// Loss values and the composed (pre-clip) gradient map of phase two.
pub(crate) struct PhaseBGrads {
    pub content: f64,
    pub adv: f64,
    pub map: BTreeMap<String, Arr>,
}

/// Builds the phase-two graph once and composes the opposed updates:
/// the classifier descends the speaker cross-entropy (it climbs the
/// true-speaker log-posterior), while the content encoder receives the
/// content-matching gradient plus `lambda` times the log-posterior
/// gradient — pushing its features away from speaker identity.
pub(crate) fn phase_b_grads(
    params: &Params,
    mcfg: &ModelConfig,
    batch: &Batch,
    lambda: f64,
) -> PhaseBGrads {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &PHASE_B_PREFIXES);
    let t_frames = batch.mels.shape()[1];

    let mel = tape.constant(batch.mels.clone().into_dyn());
    // The text side enters as constants here: the desired content is
    // recomputed under no-gradient semantics from the current text
    // encoder.
    let desired = text_encoder_forward(
        &mut tape,
        &bound,
        mcfg,
        &batch.phonemes,
        &batch.phoneme_lengths,
        &batch.durations,
        &batch.mel_lengths,
        t_frames,
    );
    let estimated = content_encoder_forward(&mut tape, &bound, mcfg, mel, &batch.mel_lengths);
    let content = content_match_loss(&mut tape, desired, estimated, &batch.frame_mask());
    let logits = speaker_classifier_forward(&mut tape, &bound, mcfg, estimated, &batch.mel_lengths);
    let adv = adversarial_term(&mut tape, logits, &batch.speaker_ids);

    let content_val = tape.scalar(content);
    let adv_val = tape.scalar(adv);

    let g_adv = tape.backward(adv);
    let g_con = tape.backward(content);

    let mut map = BTreeMap::new();
    for name in params.names() {
        let shape = params.get(name).shape();
        if name.starts_with("clf.") {
            // Ascend the true-speaker log-posterior = descend the
            // cross-entropy.
            let mut g = g_adv.get_or_zeros(bound.v(name), shape);
            g.mapv_inplace(|x| -x);
            map.insert(name.clone(), g);
        } else if name.starts_with("ec.") {
            let mut g = g_con.get_or_zeros(bound.v(name), shape);
            if lambda != 0.0 {
                let ga = g_adv.get_or_zeros(bound.v(name), shape);
                ndarray::Zip::from(&mut g).and(&ga).for_each(|g, &a| *g += lambda * a);
            }
            map.insert(name.clone(), g);
        }
    }
    PhaseBGrads { content: content_val, adv: adv_val, map }
}

/// Phase two: one optimizer-B update of the content encoder and the
/// speaker classifier. Returns (content loss, adversarial term).
pub fn tgavc_phase_b(state: &mut TrainState, batch: &Batch) -> Result<(f64, f64)> {
    let g = phase_b_grads(&state.params, &state.mcfg, batch, state.tcfg.lambda);
    ensure_finite(
        &[("content", g.content), ("adversarial", g.adv)],
        state.step,
        &batch.utterance_ids,
    )?;
    let mut map = g.map;
    clip_global_norm(&mut map, state.tcfg.clip_norm);
    state.opt_b.step(&mut state.params, &map);
    Ok((g.content, g.adv))
}

/// One full two-phase step: phase one, then phase two on the updated
/// parameters, each through its own optimizer.
pub fn tgavc_train_step(state: &mut TrainState, batch: &Batch) -> Result<LossReport> {
    if state.tcfg.single_optimizer {
        return single_optimizer_step(state, batch);
    }
    let l1 = tgavc_phase_a(state, batch)?;
    let (content, adv) = tgavc_phase_b(state, batch)?;
    let report = LossReport::two_phase(l1, content, adv, state.tcfg.lambda);
    debug_assert!(report.is_consistent());
    Ok(report)
}

/// Debug-only collapsed variant: both phases' gradients are computed at
/// the same starting parameters and applied together through optimizer A.
/// Kept to reproduce the known-inferior single-optimizer behaviour; not a
/// supported training path.
fn single_optimizer_step(state: &mut TrainState, batch: &Batch) -> Result<LossReport> {
    let trainable = phase_a_prefixes(state.tcfg.freeze_style);
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, &trainable);
    let mcfg = state.mcfg.clone();
    let t_frames = batch.mels.shape()[1];
    let mel = tape.constant(batch.mels.clone().into_dyn());
    let style = style_encoder_forward(&mut tape, &bound, &mcfg, mel, &batch.mel_lengths);
    let text = text_encoder_forward(
        &mut tape,
        &bound,
        &mcfg,
        &batch.phonemes,
        &batch.phoneme_lengths,
        &batch.durations,
        &batch.mel_lengths,
        t_frames,
    );
    let pred = decoder_forward(&mut tape, &bound, &mcfg, text, style, &batch.mel_lengths);
    let l1 = recon_loss(&mut tape, pred, mel, &batch.frame_mask());
    let l1_val = tape.scalar(l1);

    let b_grads = phase_b_grads(&state.params, &state.mcfg, batch, state.tcfg.lambda);
    ensure_finite(
        &[
            ("reconstruction", l1_val),
            ("content", b_grads.content),
            ("adversarial", b_grads.adv),
        ],
        state.step,
        &batch.utterance_ids,
    )?;

    let grads = tape.backward(l1);
    let mut map = collect_grads(&grads, &bound, &state.params, &trainable);
    map.extend(b_grads.map);
    clip_global_norm(&mut map, state.tcfg.clip_norm);
    state.opt_a.step(&mut state.params, &map);
    let report = LossReport::two_phase(l1_val, b_grads.content, b_grads.adv, state.tcfg.lambda);
    Ok(report)
}

/// One baseline step: reconstruct the mel through the bottleneck with the
/// style embedding taken from another utterance of the same speaker, plus
/// the code-matching term on the re-encoded prediction. The style encoder
/// is never trained here.
pub fn autovc_train_step(state: &mut TrainState, batch: &Batch) -> Result<LossReport> {
    let style_mels = batch.style_mels.as_ref().ok_or_else(|| {
        Error::runtime("baseline training needs style-pair batches (with_style_pair)")
    })?;
    let trainable = ["avc", "dec"];
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, &trainable);
    let mcfg = state.mcfg.clone();

    let mel = tape.constant(batch.mels.clone().into_dyn());
    let style_mel = tape.constant(style_mels.clone().into_dyn());
    let style = style_encoder_forward(&mut tape, &bound, &mcfg, style_mel, &batch.style_lengths);
    let fwd = autovc_forward(&mut tape, &bound, &mcfg, mel, style, &batch.mel_lengths);
    let codes_of_pred = autovc_encode(&mut tape, &bound, &mcfg, fwd.pred, &batch.mel_lengths);

    let factor = mcfg.autovc_downsample;
    let t_codes = autovc_code_frames(batch.mels.shape()[1], factor);
    let mut code_mask = Array2::<f64>::zeros((batch.len(), t_codes));
    for (i, &len) in batch.mel_lengths.iter().enumerate() {
        for t in 0..autovc_code_frames(len, factor) {
            code_mask[[i, t]] = 1.0;
        }
    }
    let (total, recon, content) = autovc_losses(
        &mut tape,
        fwd.pred,
        mel,
        fwd.codes,
        codes_of_pred,
        state.tcfg.lambda_autovc,
        &batch.frame_mask(),
        &code_mask,
    );

    let recon_val = tape.scalar(recon);
    let content_val = tape.scalar(content);
    ensure_finite(
        &[("reconstruction", recon_val), ("code-matching", content_val)],
        state.step,
        &batch.utterance_ids,
    )?;

    let grads = tape.backward(total);
    let mut map = collect_grads(&grads, &bound, &state.params, &trainable);
    clip_global_norm(&mut map, state.tcfg.clip_norm);
    state.opt_a.step(&mut state.params, &map);
    Ok(LossReport::baseline(recon_val, content_val, state.tcfg.lambda_autovc))
}

/// One style-encoder pretraining step on a verification batch of
/// `n_speakers * m_utts` fixed-length crops, speaker-major; `speaker_ids`
/// names the batch's speakers (one id per speaker). Applies one
/// optimizer-A update and re-clamps the similarity scale.
pub fn ge2e_train_step(
    state: &mut TrainState,
    crops: &Array3<f64>,
    speaker_ids: &[usize],
) -> Result<LossReport> {
    let n = state.tcfg.ge2e_speakers;
    let m = state.tcfg.ge2e_utts;
    assert_eq!(crops.shape()[0], n * m, "verification batch rows");
    assert_eq!(speaker_ids.len(), n, "one id per batch speaker");
    let trainable = ["es", "ge2e"];
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, &trainable);
    let mcfg = state.mcfg.clone();

    let mel = tape.constant(crops.clone().into_dyn());
    let lengths = vec![crops.shape()[1]; n * m];
    let emb = style_encoder_forward(&mut tape, &bound, &mcfg, mel, &lengths);
    let w = bound.v("ge2e.w");
    let b = bound.v("ge2e.b");
    let loss = ge2e_loss(&mut tape, emb, n, m, w, b);

    let loss_val = tape.scalar(loss);
    let ids: Vec<String> = speaker_ids.iter().map(|s| format!("speaker{s}")).collect();
    ensure_finite(&[("verification", loss_val)], state.step, &ids)?;

    let grads = tape.backward(loss);
    let mut map = collect_grads(&grads, &bound, &state.params, &trainable);
    clip_global_norm(&mut map, state.tcfg.clip_norm);
    state.opt_a.step(&mut state.params, &map);
    clamp_ge2e_scale(&mut state.params);
    Ok(LossReport::style_pretrain(loss_val))
}
