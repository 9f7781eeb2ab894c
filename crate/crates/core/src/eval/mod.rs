// Objective evaluation over trained checkpoints: mel-cepstral distortion
// tables for parallel conversion pairs, a speaker-probe measure of how much
// identity leaks through the content encoding, style-embedding separation
// statistics, and static plot emission.
//
// Everything here is read-only over checkpoints and feature stores; the
// probe trains its own throwaway classifier in a private parameter set.

mod plots;
mod probe;
mod protocol;

pub use plots::{
    emit_plots, triptych_dims, PlotsOutcome, TriptychSpec, TRIPTYCH_BOTTOM, TRIPTYCH_GAP,
    TRIPTYCH_MARGIN, TRIPTYCH_ROW_SCALE, TRIPTYCH_TOP,
};
pub use probe::{disentanglement_probe, ProbeConfig, ProbeReport};
pub use protocol::{conversion_protocol, ConversionProtocolReport, ProtocolPair};

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, FeatureStore, Split};
use crate::dsp::{mcd, mel_cepstrum, DspConfig};
use crate::error::{Error, Result};
use crate::models::{style_encoder_forward, Checkpoint};
use crate::nn::Tape;

/// Cepstral order used for distortion scoring when the mel resolution
/// allows; coarser front ends fall back to `n_mels - 1` coefficients.
pub const MCD_CEPSTRUM_ORDER: usize = 13;

/// The order actually used for `width` mel bands.
pub fn effective_cepstrum_order(width: usize) -> usize {
    MCD_CEPSTRUM_ORDER.min(width.saturating_sub(1))
}

/// Distortion between two log-mel utterances: cepstra first, then the
/// DTW-aligned per-frame distance.
pub fn mel_mcd(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let order = effective_cepstrum_order(a.shape()[1]);
    mcd(&mel_cepstrum(a, order), &mel_cepstrum(b, order))
}

/// Mean and spread of per-pair distortion over a paired set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McdSummary {
    pub mean: f64,
    /// Population standard deviation; zero for a single pair.
    pub std: f64,
    pub per_pair: Vec<f64>,
}

/// Scores paired converted/reference log-mel utterances. The two lists
/// must be index-aligned and equally long; order of the pairs does not
/// affect the mean or the spread.
pub fn evaluate_mcd(converted: &[Array2<f64>], reference: &[Array2<f64>]) -> Result<McdSummary> {
    if converted.len() != reference.len() {
        return Err(Error::validation(format!(
            "paired sets differ in length: {} converted vs {} reference utterances",
            converted.len(),
            reference.len()
        )));
    }
    if converted.is_empty() {
        return Err(Error::validation("at least one pair is required"));
    }
    let mut per_pair = Vec::with_capacity(converted.len());
    for (c, r) in converted.iter().zip(reference) {
        if c.shape()[1] != r.shape()[1] {
            return Err(Error::validation(format!(
                "pair mixes mel widths {} and {}",
                c.shape()[1],
                r.shape()[1]
            )));
        }
        if c.shape()[1] < 2 {
            return Err(Error::validation("mel utterances need at least 2 bands"));
        }
        if c.shape()[0] == 0 || r.shape()[0] == 0 {
            return Err(Error::validation("a pair contains a zero-frame utterance"));
        }
        per_pair.push(mel_mcd(c, r));
    }
    let (mean, std) = mean_std(&per_pair);
    Ok(McdSummary { mean, std, per_pair })
}

/// Mean and population standard deviation; (v, 0.0) for a single value.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// --------------------------------------------------- style separation

/// Mean cosine similarity within and across speakers. A side with no
/// pairs (for example a lone utterance per speaker) is reported absent
/// rather than invented.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleSeparation {
    pub within: Option<f64>,
    pub between: Option<f64>,
    pub num_embeddings: usize,
    pub num_speakers: usize,
}

impl StyleSeparation {
    /// within - between when both sides exist.
    pub fn gap(&self) -> Option<f64> {
        match (self.within, self.between) {
            (Some(w), Some(b)) => Some(w - b),
            _ => None,
        }
    }
}

/// Mean pairwise cosines over `(speaker, unit embedding)` rows, split into
/// same-speaker and cross-speaker pairs. `None` marks a side with no pairs.
pub fn within_between_cosines(
    embeddings: &[(usize, Vec<f64>)],
) -> (Option<f64>, Option<f64>) {
    let (mut within, mut n_within) = (0.0, 0usize);
    let (mut between, mut n_between) = (0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let dot: f64 = embeddings[i].1.iter().zip(&embeddings[j].1).map(|(a, b)| a * b).sum();
            if embeddings[i].0 == embeddings[j].0 {
                within += dot;
                n_within += 1;
            } else {
                between += dot;
                n_between += 1;
            }
        }
    }
    let avg = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    (avg(within, n_within), avg(between, n_between))
}

/// Embeds every utterance of `split` with the checkpoint's style encoder
/// (center-cropped to at most two seconds, matching conversion) and
/// reports within/between-speaker cosine means.
pub fn style_separation_report(
    ckpt: &Checkpoint,
    manifest: &CorpusManifest,
    store: &FeatureStore,
    dsp: &DspConfig,
    split: Split,
) -> Result<StyleSeparation> {
    if manifest.num_speakers() < 2 {
        return Err(Error::validation("style separation needs at least 2 speakers"));
    }
    let params = ckpt.extract_params("model");
    if params.names_with_prefix("es").is_empty() {
        return Err(Error::validation(format!(
            "'{}' checkpoint carries no style encoder parameters",
            ckpt.kind
        )));
    }
    let crop = dsp.frames_for_seconds(2.0);
    let mut embeddings = Vec::new();
    for rec in manifest.records_in(split) {
        let mel = store.get(&rec.utterance_id)?;
        let frames = mel.shape()[0];
        let view = if frames > crop {
            let start = (frames - crop) / 2;
            mel.slice(ndarray::s![start..start + crop, ..]).to_owned()
        } else {
            mel.clone()
        };
        let view_frames = view.shape()[0];
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &[]);
        let input = tape.constant(view.insert_axis(Axis(0)).into_dyn());
        let emb = style_encoder_forward(&mut tape, &bound, &ckpt.config, input, &[view_frames]);
        // An empty `view` cannot occur: corpus utterances have >= 1 frame.
        let row: Vec<f64> = tape.value(emb).iter().copied().collect();
        embeddings.push((manifest.speaker_id(&rec.speaker)?, row));
    }
    let (within, between) = within_between_cosines(&embeddings);
    Ok(StyleSeparation {
        within,
        between,
        num_embeddings: embeddings.len(),
        num_speakers: manifest.num_speakers(),
    })
}

// ------------------------------------------------ report and fingerprint

/// Short stable identifier for exactly the training state a number was
/// measured against: kind, full model configuration, and step count.
pub fn config_fingerprint(ckpt: &Checkpoint) -> String {
    let blob = serde_json::json!({
        "kind": ckpt.kind,
        "config": ckpt.config,
        "step": ckpt.meta.get("step"),
    });
    format!("{}-{:016x}", ckpt.kind, crate::nn::fnv1a64(&blob.to_string()))
}

/// The combined evaluation over one conversion checkpoint, optionally a
/// baseline checkpoint for side-by-side ordering, plus probe and style
/// statistics when their inputs were available. Every number is finite by
/// construction and tagged with the checkpoint fingerprint it was
/// measured against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub fingerprint: String,
    pub mcd_mean: f64,
    pub mcd_std: f64,
    /// Distortion of doing nothing: source scored against the reference.
    pub unconverted_mcd_mean: f64,
    /// Fraction of pairs where converting beat not converting.
    pub improves_fraction: f64,
    /// Distortion of converting a source toward its own speaker, scored
    /// against the source itself.
    pub self_mcd_mean: f64,
    /// Distortion of converting toward other speakers, scored against the
    /// source itself; should exceed `self_mcd_mean` once conversion does
    /// anything.
    pub cross_vs_source_mean: f64,
    pub pairs: Vec<ProtocolPair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<ConversionProtocolReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe: Option<ProbeReport>,
    /// Chance accuracy for the probe: 1 / num_speakers.
    pub chance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub style_within: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub style_between: Option<f64>,
}

impl EvalReport {
    /// Flattens the primary protocol run into the report and attaches the
    /// optional sections. Fails rather than serialize a non-finite number.
    pub fn assemble(
        primary: ConversionProtocolReport,
        baseline: Option<ConversionProtocolReport>,
        probe: Option<ProbeReport>,
        style: Option<StyleSeparation>,
        num_speakers: usize,
    ) -> Result<EvalReport> {
        if num_speakers == 0 {
            return Err(Error::validation("report needs at least one speaker"));
        }
        let (style_within, style_between) =
            style.map(|s| (s.within, s.between)).unwrap_or((None, None));
        let report = EvalReport {
            kind: primary.kind,
            fingerprint: primary.fingerprint,
            mcd_mean: primary.mcd_mean,
            mcd_std: primary.mcd_std,
            unconverted_mcd_mean: primary.unconverted_mcd_mean,
            improves_fraction: primary.improves_fraction,
            self_mcd_mean: primary.self_mcd_mean,
            cross_vs_source_mean: primary.cross_vs_source_mean,
            pairs: primary.pairs,
            baseline,
            probe_accuracy: probe.as_ref().map(|p| p.content_accuracy),
            probe,
            chance: 1.0 / num_speakers as f64,
            style_within,
            style_between,
        };
        report.ensure_finite()?;
        Ok(report)
    }

    fn ensure_finite(&self) -> Result<()> {
        let mut nums = vec![
            self.mcd_mean,
            self.mcd_std,
            self.unconverted_mcd_mean,
            self.improves_fraction,
            self.self_mcd_mean,
            self.cross_vs_source_mean,
            self.chance,
        ];
        nums.extend(self.pairs.iter().flat_map(|p| [p.mcd, p.unconverted_mcd]));
        nums.extend(
            [self.probe_accuracy, self.style_within, self.style_between].into_iter().flatten(),
        );
        if let Some(b) = &self.baseline {
            nums.extend([
                b.mcd_mean,
                b.mcd_std,
                b.unconverted_mcd_mean,
                b.improves_fraction,
                b.self_mcd_mean,
                b.cross_vs_source_mean,
            ]);
            nums.extend(b.pairs.iter().flat_map(|p| [p.mcd, p.unconverted_mcd]));
        }
        if let Some(p) = &self.probe {
            nums.extend([p.content_accuracy, p.raw_accuracy, p.untrained_accuracy, p.chance]);
        }
        match nums.iter().find(|v| !v.is_finite()) {
            Some(v) => Err(Error::runtime(format!("report contains a non-finite number ({v})"))),
            None => Ok(()),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
