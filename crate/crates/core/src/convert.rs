// Inference: many-to-many and zero-shot conversion from a trained
// checkpoint. The linguistic content comes from the source audio through
// the content encoder (or the baseline's bottleneck encoder), the voice
// identity from a style embedding averaged over target-speaker reference
// utterances; the decoder recombines them.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

use crate::dsp::{
    griffin_lim, load_mel, load_wav, mel_spectrogram, save_mel, save_wav, DspConfig,
};
use crate::error::{Error, Result};
use crate::models::{
    autovc_forward, content_encoder_forward, decoder_forward, load_checkpoint,
    style_encoder_forward, Checkpoint, ModelConfig,
};
use crate::nn::{Params, Tape};

/// Phase-reconstruction effort for file output; more iterations track the
/// target magnitudes more closely.
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;

/// One end-to-end file conversion.
#[derive(Debug, Clone)]
pub struct ConversionRequest {
    pub source_audio: PathBuf,
    /// Reference utterances of the target speaker (1 or more).
    pub target_style_audios: Vec<PathBuf>,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

/// What `convert_file` produced.
pub struct ConversionOutcome {
    pub output_wav: PathBuf,
    pub sidecar_mel: PathBuf,
    /// The converted mel exactly as the sidecar stores it (the sidecar
    /// round-trips bit-exactly against this array).
    pub converted: Array2<f64>,
    pub source_frames: usize,
    /// Relative spectral error reported by phase reconstruction.
    pub spectral_error: f64,
}

/// Mean of unit vectors, re-normalized to unit norm — the spherical
/// average used for multi-utterance style embeddings. Two unit vectors
/// map onto their angle bisector.
pub fn average_unit_vectors(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if vectors.is_empty() {
        return Err(Error::validation("cannot average an empty set of embeddings"));
    }
    let d = vectors[0].len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        assert_eq!(v.len(), d, "embedding widths differ");
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / vectors.len() as f64;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::validation(
            "style embeddings cancel out; cannot derive a direction from them",
        ));
    }
    Ok(mean.into_iter().map(|x| x / norm).collect())
}

fn embed_one(params: &Params, mcfg: &ModelConfig, mel: &Array2<f64>) -> Vec<f64> {
    let frames = mel.shape()[0];
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &[]);
    let input = tape.constant(mel.clone().insert_axis(Axis(0)).into_dyn());
    let emb = style_encoder_forward(&mut tape, &bound, mcfg, input, &[frames]);
    tape.value(emb).iter().copied().collect()
}

/// Style embedding for a speaker from reference utterances: each mel is
/// center-cropped to `crop_frames` (used whole when shorter), embedded,
/// and the unit embeddings are averaged and re-normalized.
pub fn compute_style_embedding(
    params: &Params,
    mcfg: &ModelConfig,
    mels: &[Array2<f64>],
    crop_frames: usize,
) -> Result<Vec<f64>> {
    if mels.is_empty() {
        return Err(Error::validation(
            "at least one target style utterance is required",
        ));
    }
    let mut embeddings = Vec::with_capacity(mels.len());
    for mel in mels {
        if mel.shape()[0] == 0 {
            return Err(Error::validation("a style utterance decoded to zero frames"));
        }
        if mel.shape()[1] != mcfg.n_mels {
            return Err(Error::validation(format!(
                "style utterance has {} mel bins, the model expects {}",
                mel.shape()[1],
                mcfg.n_mels
            )));
        }
        let frames = mel.shape()[0];
        let cropped;
        let view = if frames > crop_frames {
            let start = (frames - crop_frames) / 2;
            cropped = mel
                .slice(ndarray::s![start..start + crop_frames, ..])
                .to_owned();
            &cropped
        } else {
            mel
        };
        embeddings.push(embed_one(params, mcfg, view));
    }
    average_unit_vectors(&embeddings)
}

/// Converts a source mel under a target style embedding. The route is
/// chosen by checkpoint kind: the two-phase checkpoints decode from the
/// content encoder, a baseline checkpoint from its bottleneck encoder.
/// Output frame count always equals the source's.
pub fn convert_mel(
    ckpt: &Checkpoint,
    source_mel: &Array2<f64>,
    style: &[f64],
) -> Result<Array2<f64>> {
    ckpt.require_kind(&["tgavc", "tgavcs", "autovc"])?;
    let mcfg = &ckpt.config;
    let frames = source_mel.shape()[0];
    if frames == 0 {
        return Err(Error::validation("source mel has zero frames"));
    }
    if source_mel.shape()[1] != mcfg.n_mels {
        return Err(Error::validation(format!(
            "source mel has {} mel bins, the checkpoint expects {}",
            source_mel.shape()[1],
            mcfg.n_mels
        )));
    }
    if style.len() != mcfg.d_style {
        return Err(Error::validation(format!(
            "style embedding has width {}, the checkpoint expects {}",
            style.len(),
            mcfg.d_style
        )));
    }
    let params = ckpt.extract_params("model");

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, &[]);
    let mel = tape.constant(source_mel.clone().insert_axis(Axis(0)).into_dyn());
    let style_v = tape.constant(
        Array2::from_shape_vec((1, style.len()), style.to_vec())
            .expect("style shape")
            .into_dyn(),
    );
    let lengths = [frames];
    let pred = if ckpt.kind == "autovc" {
        autovc_forward(&mut tape, &bound, mcfg, mel, style_v, &lengths).pred
    } else {
        let content = content_encoder_forward(&mut tape, &bound, mcfg, mel, &lengths);
        decoder_forward(&mut tape, &bound, mcfg, content, style_v, &lengths)
    };
    let out = tape.value(pred);
    debug_assert_eq!(out.shape(), &[1, frames, mcfg.n_mels]);
    let flat: Vec<f64> = out.iter().copied().collect();
    Ok(Array2::from_shape_vec((frames, mcfg.n_mels), flat).expect("converted shape"))
}

/// Prefix errors with the pipeline stage that raised them, preserving the
/// validation/runtime classification.
fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{name}: {m}")),
        Error::Runtime(m) => Error::Runtime(format!("{name}: {m}")),
        other => Error::Runtime(format!("{name}: {other}")),
    })
}

/// The full file pipeline: read audio, extract features, embed the target
/// style, convert, reconstruct phase, and write the output WAV plus a
/// sidecar mel dump (the evaluation input). Deterministic for a fixed
/// request.
pub fn convert_file(
    req: &ConversionRequest,
    dsp: &DspConfig,
    gl_iters: usize,
) -> Result<ConversionOutcome> {
    let ckpt = stage("loading checkpoint", load_checkpoint(&req.checkpoint))?;
    if ckpt.config.n_mels != dsp.n_mels {
        return Err(Error::validation(format!(
            "checkpoint expects {} mel bins but the signal config produces {}",
            ckpt.config.n_mels, dsp.n_mels
        )));
    }
    let samples = stage(
        "reading source audio",
        load_wav(&req.source_audio, dsp.sample_rate),
    )?;
    let source_mel = mel_spectrogram(&samples, dsp);
    if source_mel.shape()[0] < 2 {
        return Err(Error::validation(
            "source audio is too short to resynthesize (needs at least 2 frames)",
        ));
    }

    let mut style_mels = Vec::with_capacity(req.target_style_audios.len());
    for path in &req.target_style_audios {
        let s = stage("reading target style audio", load_wav(path, dsp.sample_rate))?;
        style_mels.push(mel_spectrogram(&s, dsp));
    }
    let params = ckpt.extract_params("model");
    let style = stage(
        "embedding target style",
        compute_style_embedding(&params, &ckpt.config, &style_mels, dsp.frames_for_seconds(2.0)),
    )?;

    let converted = stage("converting", convert_mel(&ckpt, &source_mel, &style))?;

    let gl = griffin_lim(&converted, dsp, gl_iters, 0);
    if let Some(parent) = req.output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    stage(
        "writing output audio",
        save_wav(&req.output, &gl.samples, dsp.sample_rate),
    )?;
    let sidecar_mel = req.output.with_extension("mel");
    stage("writing sidecar features", save_mel(&sidecar_mel, &converted, dsp))?;
    // The sidecar stores single-precision magnitudes; hand the caller the
    // stored values so downstream numbers match the file exactly.
    let (converted, _) = stage("re-reading sidecar features", load_mel(&sidecar_mel))?;

    Ok(ConversionOutcome {
        output_wav: req.output.clone(),
        sidecar_mel,
        converted,
        source_frames: source_mel.shape()[0],
        spectral_error: gl.spectral_error,
    })
}

/// Convenience used by evaluation: style embedding of a speaker from
/// in-memory reference mels at the standard 2-second crop.
pub fn style_embedding_for(
    ckpt: &Checkpoint,
    mels: &[Array2<f64>],
    dsp: &DspConfig,
) -> Result<Vec<f64>> {
    let params = ckpt.extract_params("model");
    compute_style_embedding(&params, &ckpt.config, mels, dsp.frames_for_seconds(2.0))
}

/// True when `path` exists and is loadable as a checkpoint of a
/// convertible kind — a cheap pre-flight for batch pipelines.
pub fn is_convertible_checkpoint(path: &Path) -> bool {
    load_checkpoint(path)
        .and_then(|c| c.require_kind(&["tgavc", "tgavcs", "autovc"]))
        .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, Split, ToyCorpusConfig};
    use crate::models::{
        init_autovc, init_content_encoder, init_decoder, init_style_encoder, save_checkpoint,
    };
    use crate::nn::{derive_rng, normal_vec};

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
            vocab_size: 7,
            num_speakers: 2,
            autovc_bottleneck: 2,
            autovc_downsample: 2,
        }
    }

    fn conversion_params(mcfg: &ModelConfig, seed: u64) -> Params {
        let mut p = Params::new();
        init_content_encoder(&mut p, mcfg, seed);
        init_style_encoder(&mut p, mcfg, seed);
        init_decoder(&mut p, mcfg, mcfg.d_model, seed);
        p
    }

    fn tgavc_ckpt(seed: u64) -> Checkpoint {
        let mcfg = tiny_mcfg();
        let p = conversion_params(&mcfg, seed);
        let mut ck = Checkpoint::new("tgavc", mcfg, serde_json::json!({}));
        ck.insert_params("model", &p);
        ck
    }

    fn autovc_ckpt(seed: u64) -> Checkpoint {
        let mcfg = tiny_mcfg();
        let mut p = Params::new();
        init_autovc(&mut p, &mcfg, seed);
        init_style_encoder(&mut p, &mcfg, seed);
        let mut ck = Checkpoint::new("autovc", mcfg, serde_json::json!({}));
        ck.insert_params("model", &p);
        ck
    }

    fn rand_mel(frames: usize, n_mels: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, "convert/mel");
        Array2::from_shape_vec((frames, n_mels), normal_vec(&mut rng, frames * n_mels, 0.0, 1.0))
            .unwrap()
    }

    // Two unit vectors at 60 degrees average onto their bisector at 30
    // degrees: [cos 30, sin 30] = [sqrt(3)/2, 1/2].
    #[test]
    fn averaging_two_unit_vectors_lands_on_the_bisector() {
        let a = vec![1.0, 0.0];
        let b = vec![0.5, 3f64.sqrt() / 2.0];
        let avg = average_unit_vectors(&[a, b]).unwrap();
        assert!((avg[0] - 3f64.sqrt() / 2.0).abs() < 1e-12, "{avg:?}");
        assert!((avg[1] - 0.5).abs() < 1e-12, "{avg:?}");

        let norm: f64 = avg.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_style_list_is_a_validation_error() {
        let ck = tgavc_ckpt(1);
        let params = ck.extract_params("model");
        let err = compute_style_embedding(&params, &ck.config, &[], 10).err().unwrap();
        assert!(err.is_validation());
        assert!(average_unit_vectors(&[]).is_err());
    }

    #[test]
    fn single_utterance_embedding_is_the_identity_case() {
        let ck = tgavc_ckpt(2);
        let params = ck.extract_params("model");
        let mcfg = &ck.config;
        let mel = rand_mel(8, mcfg.n_mels, 3);
        let direct = embed_one(&params, mcfg, &mel);
        let avg = compute_style_embedding(&params, mcfg, &[mel.clone()], 100).unwrap();
        // The encoder's normalization carries a stabilizing epsilon, so its
        // output norm sits just under 1; the averaging path re-normalizes
        // exactly. Identity therefore holds to ~1e-9, not bitwise.
        for (a, b) in direct.iter().zip(&avg) {
            assert!((a - b).abs() < 1e-9);
        }
        // Ten copies of the same utterance give the same embedding.
        let ten = vec![mel; 10];
        let avg10 = compute_style_embedding(&params, mcfg, &ten, 100).unwrap();
        for (a, b) in avg.iter().zip(&avg10) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn long_utterances_use_the_center_crop() {
        let ck = tgavc_ckpt(4);
        let params = ck.extract_params("model");
        let mcfg = &ck.config;
        let mel = rand_mel(20, mcfg.n_mels, 5);
        let crop = 10;
        let center = mel.slice(ndarray::s![5..15, ..]).to_owned();
        let via_crop = compute_style_embedding(&params, mcfg, &[mel], crop).unwrap();
        let direct = compute_style_embedding(&params, mcfg, &[center], crop).unwrap();
        for (a, b) in via_crop.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conversion_preserves_frame_count_for_random_lengths() {
        let ck = tgavc_ckpt(6);
        let av = autovc_ckpt(6);
        let style = vec![0.6, 0.8, 0.0];
        for (i, frames) in [3usize, 7, 12, 25].into_iter().enumerate() {
            let mel = rand_mel(frames, 5, 10 + i as u64);
            let out = convert_mel(&ck, &mel, &style).unwrap();
            assert_eq!(out.shape(), &[frames, 5]);
            let out_b = convert_mel(&av, &mel, &style).unwrap();
            assert_eq!(out_b.shape(), &[frames, 5]);
        }
    }

    #[test]
    fn conversion_is_deterministic_and_style_sensitive() {
        let ck = tgavc_ckpt(7);
        let mel = rand_mel(9, 5, 11);
        let s1 = vec![0.6, 0.8, 0.0];
        let s2 = vec![0.0, 0.6, -0.8];
        let a = convert_mel(&ck, &mel, &s1).unwrap();
        let b = convert_mel(&ck, &mel, &s1).unwrap();
        assert_eq!(a, b, "same inputs, same output");
        let c = convert_mel(&ck, &mel, &s2).unwrap();
        let diff: f64 = (&a - &c).iter().map(|x| x.abs()).sum();
        assert!(diff > 0.0, "different styles must move the output");
    }

    #[test]
    fn conversion_input_contracts_are_validated() {
        let ck = tgavc_ckpt(8);
        let style = vec![0.6, 0.8, 0.0];
        // wrong mel width
        let err = convert_mel(&ck, &rand_mel(5, 4, 1), &style).err().unwrap();
        assert!(err.is_validation() && err.to_string().contains("mel bins"));
        // wrong style width
        let err = convert_mel(&ck, &rand_mel(5, 5, 1), &[1.0, 0.0]).err().unwrap();
        assert!(err.is_validation() && err.to_string().contains("width"));
        // empty source
        let err = convert_mel(&ck, &Array2::zeros((0, 5)), &style).err().unwrap();
        assert!(err.is_validation());
        // non-convertible checkpoint kind
        let mut ge = tgavc_ckpt(8);
        ge.kind = "ge2e".into();
        let err = convert_mel(&ge, &rand_mel(5, 5, 1), &style).err().unwrap();
        assert!(err.is_validation());
    }

    #[test]
    fn file_pipeline_writes_wav_and_bit_exact_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let dsp = DspConfig { n_mels: 5, ..DspConfig::default() };
        let corpus = ToyCorpusConfig {
            num_speakers: 2,
            utts_per_speaker: 3,
            seed: 31,
            min_syllables: 2,
            max_syllables: 2,
            dsp: dsp.clone(),
        };
        let manifest = make_synthetic_corpus(&corpus, dir.path()).unwrap();
        let ck_path = dir.path().join("model.ckpt");
        save_checkpoint(&ck_path, &tgavc_ckpt(40)).unwrap();

        let train = manifest.records_in(Split::Train);
        let source = manifest.wav_path(train[0]);
        let style_rec = train.iter().find(|r| r.speaker != train[0].speaker).unwrap();
        let style = manifest.wav_path(style_rec);

        let req = ConversionRequest {
            source_audio: source.clone(),
            target_style_audios: vec![style],
            checkpoint: ck_path.clone(),
            output: dir.path().join("out").join("converted.wav"),
        };
        let outcome = convert_file(&req, &dsp, 8).unwrap();

        // Duration within one hop of the source.
        let src = load_wav(&source, dsp.sample_rate).unwrap();
        let out = load_wav(&outcome.output_wav, dsp.sample_rate).unwrap();
        let diff = src.len().abs_diff(out.len());
        assert!(diff <= dsp.hop, "duration drift {diff} samples > one hop");

        // Sidecar round-trips bit-exactly against the returned mel.
        let (reloaded, _) = load_mel(&outcome.sidecar_mel).unwrap();
        assert_eq!(reloaded, outcome.converted);
        assert_eq!(outcome.converted.shape()[0], outcome.source_frames);
        assert!(outcome.spectral_error.is_finite());

        // Missing style file: the error names the stage and the path.
        let bad = ConversionRequest {
            target_style_audios: vec![dir.path().join("missing.wav")],
            ..req.clone()
        };
        let err = convert_file(&bad, &dsp, 4).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("target style"), "{msg}");
        assert!(msg.contains("missing.wav"), "{msg}");

        // A baseline checkpoint routes through the same entry point.
        let av_path = dir.path().join("baseline.ckpt");
        save_checkpoint(&av_path, &autovc_ckpt(41)).unwrap();
        let req_b = ConversionRequest {
            checkpoint: av_path,
            output: dir.path().join("out").join("converted_baseline.wav"),
            ..req
        };
        let outcome_b = convert_file(&req_b, &dsp, 8).unwrap();
        assert_eq!(outcome_b.converted.shape()[0], outcome_b.source_frames);
        assert!(is_convertible_checkpoint(&req_b.checkpoint));
        assert!(!is_convertible_checkpoint(&dir.path().join("nope.ckpt")));
    }

    #[test]
    fn mel_bin_mismatch_against_signal_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("model.ckpt");
        save_checkpoint(&ck_path, &tgavc_ckpt(50)).unwrap();
        let req = ConversionRequest {
            source_audio: dir.path().join("src.wav"),
            target_style_audios: vec![],
            checkpoint: ck_path,
            output: dir.path().join("o.wav"),
        };
        let dsp80 = DspConfig::default();
        let err = convert_file(&req, &dsp80, 4).err().unwrap();
        assert!(err.is_validation());
        assert!(err.to_string().contains("mel bins"), "{}", err);
    }
}
