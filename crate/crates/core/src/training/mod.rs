// Training: the named regime registry, run configuration, resumable train
// state, per-step metrics logging, and the step functions themselves.
//
// Regimes are strategy objects behind the `Regime` trait, registered by
// name and selected at runtime from config or the command line:
//
//   tgavc   joint two-phase training (reconstruction phase, then
//           content/adversarial phase, distinct optimizers)
//   tgavcs  same phase-two rule with the text/style/decoder trio loaded
//           from a pretrained synthesis checkpoint and frozen
//   autovc  the bottleneck-autoencoder baseline (frozen style encoder)
//   ge2e    style-encoder pretraining on the verification loss
//   tts     phase-one-only training of the synthesis trio
//
// Every step is a pure function of (parameters, seed, step index), so a
// resumed run replays the exact batch and loss sequence of an unbroken
// one.

mod metrics;
mod regimes;
mod state;
mod steps;

pub use metrics::{read_metrics, read_metrics_lenient, MetricsLogger, MetricsRecord};
pub(crate) use state::collect_grads;
pub use regimes::{lookup_regime, regime_names, Regime, RunSummary, TrainContext};
pub use state::{state_from_checkpoint, state_to_checkpoint, TrainState};
pub use steps::{
    autovc_train_step, ge2e_train_step, tgavc_phase_a, tgavc_phase_b, tgavc_train_step,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Run-level knobs shared by all regimes. Regime-specific fields are
/// ignored by regimes that do not use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    /// Optimizer over the reconstruction phase (text encoder, style
    /// encoder unless frozen, decoder) — and the only optimizer for the
    /// baseline and pretraining regimes.
    pub lr_a: f64,
    /// Optimizer over the content encoder and the speaker classifier.
    pub lr_b: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the adversarial term inside the phase-two total.
    pub lambda: f64,
    /// Weight of the code-matching term in the baseline total.
    pub lambda_autovc: f64,
    pub clip_norm: f64,
    /// Seeds parameter init, batch order, crops, and style pairing. The
    /// command line requires it explicitly for training runs.
    pub seed: u64,
    /// Keep the style encoder out of phase one (it then only ever carries
    /// its pretrained weights).
    pub freeze_style: bool,
    pub regime: String,
    /// Speakers per verification batch.
    pub ge2e_speakers: usize,
    /// Utterances per speaker per verification batch.
    pub ge2e_utts: usize,
    /// Crop length (frames) for verification batches. The default suits
    /// the synthetic corpus, whose utterances run 18-96 frames; real
    /// speech would use a ~2 s crop instead.
    pub ge2e_crop_frames: usize,
    /// Debug-only: collapse the two phases into one optimizer over all
    /// parameters (the reportedly inferior variant; not a supported
    /// training path).
    pub single_optimizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_steps: 100,
            lr_a: 1e-4,
            lr_b: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            lambda: 0.1,
            lambda_autovc: 1.0,
            clip_norm: 1.0,
            seed: 0,
            freeze_style: false,
            regime: "tgavc".to_string(),
            ge2e_speakers: 4,
            ge2e_utts: 5,
            ge2e_crop_frames: 48,
            single_optimizer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.lr_a > 0.0 && self.lr_b > 0.0) {
            return Err(Error::validation("learning rates must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("optimizer eps must be positive"));
        }
        if self.lambda < 0.0 || self.lambda_autovc < 0.0 {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::validation("clip_norm must be positive"));
        }
        if self.ge2e_speakers < 2 || self.ge2e_utts < 2 {
            return Err(Error::validation(
                "verification batches need at least 2 speakers and 2 utterances each",
            ));
        }
        if self.ge2e_crop_frames < 1 {
            return Err(Error::validation("ge2e_crop_frames must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip_through_json() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let js = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_fields_are_named() {
        let cfg = TrainConfig { lambda: -0.5, ..TrainConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("non-negative"), "{err}");

        let cfg = TrainConfig { beta2: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("beta2"));

        let cfg = TrainConfig { ge2e_utts: 1, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>("{\"learning_rate\": 0.1}").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }
}
