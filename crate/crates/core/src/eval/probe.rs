// How much speaker identity survives in a frozen representation?
//
// A throwaway classifier with the adversary's exact topology is trained
// from scratch on frozen features, then scored on held-out utterances.
// Run on three inputs it brackets the content encoding:
//
//   raw mel frames      the ceiling — identity is plainly audible there
//   untrained encoder   a context point: what random features leak
//   trained encoder     the number under test; adversarial training
//                       should push it toward chance
//
// The checkpoint under test is never written to; the probe's classifier
// lives in its own parameter set.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, FeatureStore, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::models::{
    content_encoder_forward, init_content_encoder, init_speaker_classifier,
    speaker_classifier_forward, Checkpoint, ModelConfig,
};
use crate::nn::{clip_global_norm, derive_rng, Adam, Params, Tape};
use crate::objectives::cross_entropy;
use crate::training::collect_grads;

/// Seed for the untrained-encoder context point; fixed so the reported
/// number is reproducible.
const UNTRAINED_ENCODER_SEED: u64 = 9001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 300, batch_size: 16, lr: 1e-3, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::validation("probe needs at least 1 step"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("probe batch_size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::validation("probe lr must be positive"));
        }
        Ok(())
    }
}

/// Held-out accuracies of the three probes plus the chance floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Probe on the trained content encoder's outputs.
    pub content_accuracy: f64,
    /// Probe on raw mel frames — the leakage ceiling.
    pub raw_accuracy: f64,
    /// Probe on a randomly initialized content encoder — context only.
    pub untrained_accuracy: f64,
    pub chance: f64,
    pub heldout_utterances: usize,
    pub steps: usize,
}

/// Labeled feature sequences, one per utterance.
type Items = Vec<(usize, Array2<f64>)>;

fn encode_records(
    params: &Params,
    mcfg: &ModelConfig,
    manifest: &CorpusManifest,
    store: &FeatureStore,
    records: &[&ManifestRecord],
) -> Result<Items> {
    let mut items = Vec::with_capacity(records.len());
    for rec in records {
        let mel = store.get(&rec.utterance_id)?;
        let frames = mel.shape()[0];
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &[]);
        let input = tape.constant(mel.clone().insert_axis(ndarray::Axis(0)).into_dyn());
        let content = content_encoder_forward(&mut tape, &bound, mcfg, input, &[frames]);
        let arr = tape.value(content);
        let flat: Vec<f64> = arr.iter().copied().collect();
        let width = arr.shape()[2];
        let features = Array2::from_shape_vec((frames, width), flat)
            .expect("content output reshapes to [frames, width]");
        items.push((manifest.speaker_id(&rec.speaker)?, features));
    }
    Ok(items)
}

fn raw_records(
    manifest: &CorpusManifest,
    store: &FeatureStore,
    records: &[&ManifestRecord],
) -> Result<Items> {
    let mut items = Vec::with_capacity(records.len());
    for rec in records {
        items.push((manifest.speaker_id(&rec.speaker)?, store.get(&rec.utterance_id)?.clone()));
    }
    Ok(items)
}

/// Trains one fresh classifier on `train` and scores it on `heldout`.
/// `stream` keys the batch-sampling randomness so the three probes see
/// independent draws under the same seed.
fn probe_accuracy(
    train: &Items,
    heldout: &Items,
    width: usize,
    mcfg: &ModelConfig,
    cfg: &ProbeConfig,
    stream: &str,
) -> Result<f64> {
    let mut q = Params::new();
    init_speaker_classifier(&mut q, mcfg, width, cfg.seed);
    let mut adam = Adam::new(cfg.lr, 0.9, 0.98, 1e-9);
    for step in 0..cfg.steps {
        let mut rng = derive_rng(cfg.seed, &format!("probe/{stream}/step{step}"));
        let picks: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.random_range(0..train.len())).collect();
        let t_max = picks.iter().map(|&i| train[i].1.shape()[0]).max().unwrap();
        let mut x = Array3::<f64>::zeros((picks.len(), t_max, width));
        let mut lengths = Vec::with_capacity(picks.len());
        let mut speakers = Vec::with_capacity(picks.len());
        for (row, &i) in picks.iter().enumerate() {
            let (speaker, feats) = &train[i];
            let t = feats.shape()[0];
            x.slice_mut(ndarray::s![row, ..t, ..]).assign(feats);
            lengths.push(t);
            speakers.push(*speaker);
        }
        let mut tape = Tape::new();
        let bound = q.bind(&mut tape, &["clf"]);
        let xv = tape.constant(x.into_dyn());
        let logits = speaker_classifier_forward(&mut tape, &bound, mcfg, xv, &lengths);
        let loss = cross_entropy(&mut tape, logits, &speakers);
        let loss_val = tape.scalar(loss);
        if !loss_val.is_finite() {
            return Err(Error::runtime(format!(
                "non-finite probe loss ({loss_val}) at step {step}"
            )));
        }
        let grads = tape.backward(loss);
        let mut gm = collect_grads(&grads, &bound, &q, &["clf"]);
        clip_global_norm(&mut gm, 5.0);
        adam.step(&mut q, &gm);
    }

    let mut correct = 0usize;
    for (speaker, feats) in heldout {
        let t = feats.shape()[0];
        let mut tape = Tape::new();
        let bound = q.bind(&mut tape, &[]);
        let xv = tape.constant(feats.clone().insert_axis(ndarray::Axis(0)).into_dyn());
        let logits = speaker_classifier_forward(&mut tape, &bound, mcfg, xv, &[t]);
        let row = tape.value(logits);
        let mut best = 0usize;
        for k in 1..row.shape()[1] {
            if row[[0, k]] > row[[0, best]] {
                best = k;
            }
        }
        if best == *speaker {
            correct += 1;
        }
    }
    Ok(correct as f64 / heldout.len() as f64)
}

/// Trains the three probes against `ckpt`'s content encoder and reports
/// held-out accuracy for each. Training uses the train split; accuracy is
/// measured on the validation and test splits together.
pub fn disentanglement_probe(
    ckpt: &Checkpoint,
    manifest: &CorpusManifest,
    store: &FeatureStore,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    ckpt.require_kind(&["tgavc", "tgavcs"])?;
    ckpt.require_num_speakers(manifest.num_speakers())?;
    let mcfg = &ckpt.config;
    let params = ckpt.extract_params("model");
    if params.names_with_prefix("ec").is_empty() {
        return Err(Error::validation(format!(
            "'{}' checkpoint carries no content encoder parameters",
            ckpt.kind
        )));
    }

    let train_recs = manifest.records_in(Split::Train);
    let mut heldout_recs = manifest.records_in(Split::Val);
    heldout_recs.extend(manifest.records_in(Split::Test));
    if train_recs.is_empty() || heldout_recs.is_empty() {
        return Err(Error::validation("probe needs both training and held-out utterances"));
    }

    let mut untrained = Params::new();
    init_content_encoder(&mut untrained, mcfg, UNTRAINED_ENCODER_SEED);

    let content_train = encode_records(&params, mcfg, manifest, store, &train_recs)?;
    let content_heldout = encode_records(&params, mcfg, manifest, store, &heldout_recs)?;
    let untrained_train = encode_records(&untrained, mcfg, manifest, store, &train_recs)?;
    let untrained_heldout = encode_records(&untrained, mcfg, manifest, store, &heldout_recs)?;
    let raw_train = raw_records(manifest, store, &train_recs)?;
    let raw_heldout = raw_records(manifest, store, &heldout_recs)?;

    let content_accuracy =
        probe_accuracy(&content_train, &content_heldout, mcfg.d_model, mcfg, cfg, "content")?;
    let untrained_accuracy =
        probe_accuracy(&untrained_train, &untrained_heldout, mcfg.d_model, mcfg, cfg, "untrained")?;
    let raw_accuracy = probe_accuracy(&raw_train, &raw_heldout, mcfg.n_mels, mcfg, cfg, "raw")?;

    Ok(ProbeReport {
        content_accuracy,
        raw_accuracy,
        untrained_accuracy,
        chance: 1.0 / manifest.num_speakers() as f64,
        heldout_utterances: heldout_recs.len(),
        steps: cfg.steps,
    })
}
