// The parallel-pair conversion protocol over a synthetic corpus.
//
// The corpus renders the same sentence templates for every speaker, so a
// held-out utterance of speaker A has a reference with identical wording
// from speaker B. Each source is converted toward every other speaker and
// scored against that parallel reference; the do-nothing distortion
// (source scored directly against the reference) is kept beside it so a
// conversion can be judged against not converting at all. Self-conversion
// (toward the source's own speaker, scored against the source) is tracked
// as a sanity floor: converting away from the speaker should move the
// signal more than converting in place.

use serde::{Deserialize, Serialize};

use crate::convert::{convert_mel, style_embedding_for};
use crate::corpus::{CorpusManifest, FeatureStore, Split};
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::eval::{config_fingerprint, mean_std, mel_mcd};
use crate::models::Checkpoint;

/// Target-speaker utterances averaged into one style embedding, mirroring
/// the enrollment size of the reference protocol.
pub const STYLE_REFS_PER_SPEAKER: usize = 10;

/// One scored conversion: `source` was converted toward the speaker of
/// `target` and compared against that parallel utterance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolPair {
    pub source: String,
    pub target: String,
    pub mcd: f64,
    /// The same comparison without converting at all.
    pub unconverted_mcd: f64,
}

/// Every cross-speaker pair of one checkpoint's protocol run, with the
/// aggregate distortion statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversionProtocolReport {
    pub kind: String,
    pub fingerprint: String,
    pub pairs: Vec<ProtocolPair>,
    pub mcd_mean: f64,
    pub mcd_std: f64,
    pub unconverted_mcd_mean: f64,
    /// Fraction of pairs with `mcd < unconverted_mcd`.
    pub improves_fraction: f64,
    pub self_mcd_mean: f64,
    pub cross_vs_source_mean: f64,
}

/// Runs the full pairwise protocol for one checkpoint over the utterances
/// of `split`. Style embeddings are always taken from training-split
/// utterances of the target speaker, never from the scored material.
pub fn conversion_protocol(
    ckpt: &Checkpoint,
    manifest: &CorpusManifest,
    store: &FeatureStore,
    dsp: &DspConfig,
    split: Split,
) -> Result<ConversionProtocolReport> {
    if manifest.num_speakers() < 2 {
        return Err(Error::validation("the conversion protocol needs at least 2 speakers"));
    }
    let speakers: Vec<String> = manifest.speakers.clone();
    let mut styles = Vec::with_capacity(speakers.len());
    for name in &speakers {
        let mut refs = Vec::new();
        for rec in manifest.records_in(Split::Train) {
            if &rec.speaker == name {
                refs.push(store.get(&rec.utterance_id)?.clone());
                if refs.len() == STYLE_REFS_PER_SPEAKER {
                    break;
                }
            }
        }
        if refs.is_empty() {
            return Err(Error::validation(format!(
                "speaker '{name}' has no training utterances to enroll a style from"
            )));
        }
        styles.push(style_embedding_for(ckpt, &refs, dsp)?);
    }

    let sources: Vec<_> = manifest.records_in(split).into_iter().cloned().collect();
    if sources.is_empty() {
        return Err(Error::validation(format!("split {split:?} holds no utterances")));
    }

    let mut pairs = Vec::new();
    let mut self_mcds = Vec::new();
    let mut cross_vs_source = Vec::new();
    for rec in &sources {
        let source_mel = store.get(&rec.utterance_id)?;
        let a = manifest.speaker_id(&rec.speaker)?;
        let self_out = convert_mel(ckpt, source_mel, &styles[a])?;
        self_mcds.push(mel_mcd(&self_out, source_mel));
        for (b, target_name) in speakers.iter().enumerate() {
            if b == a {
                continue;
            }
            let converted = convert_mel(ckpt, source_mel, &styles[b])?;
            cross_vs_source.push(mel_mcd(&converted, source_mel));
            // The parallel reference: same sentence, target speaker, same
            // split (the corpus assigns splits per template).
            let reference = sources
                .iter()
                .find(|r| &r.speaker == target_name && r.pinyin == rec.pinyin);
            let Some(reference) = reference else {
                continue;
            };
            let reference_mel = store.get(&reference.utterance_id)?;
            pairs.push(ProtocolPair {
                source: rec.utterance_id.clone(),
                target: reference.utterance_id.clone(),
                mcd: mel_mcd(&converted, reference_mel),
                unconverted_mcd: mel_mcd(source_mel, reference_mel),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::validation(format!(
            "split {split:?} contains no parallel sentence pairs across speakers"
        )));
    }

    let mcds: Vec<f64> = pairs.iter().map(|p| p.mcd).collect();
    let (mcd_mean, mcd_std) = mean_std(&mcds);
    let unconverted: Vec<f64> = pairs.iter().map(|p| p.unconverted_mcd).collect();
    let improved = pairs.iter().filter(|p| p.mcd < p.unconverted_mcd).count();
    Ok(ConversionProtocolReport {
        kind: ckpt.kind.clone(),
        fingerprint: config_fingerprint(ckpt),
        improves_fraction: improved as f64 / pairs.len() as f64,
        mcd_mean,
        mcd_std,
        unconverted_mcd_mean: mean_std(&unconverted).0,
        self_mcd_mean: mean_std(&self_mcds).0,
        cross_vs_source_mean: mean_std(&cross_vs_source).0,
        pairs,
    })
}
