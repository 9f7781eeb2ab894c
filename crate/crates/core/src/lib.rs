// Desk-scale text-guided voice conversion.
//
// The crate is organized bottom-up:
//   - `nn`: a small reverse-mode tape over ndarray (f64), plus Adam and
//     seeded initialization. Every backward pass is validated against
//     central finite differences in the test suites.
//   - `dsp`: waveform I/O, STFT/mel analysis, Griffin-Lim resynthesis,
//     mel-cepstra and the MCD/DTW evaluation metric.
//   - `corpus`: manifests, pinyin tokenization, duration alignments, the
//     synthetic verification corpus, and deterministic batching.
//   - `models`: the five networks (text encoder, content encoder, style
//     encoder, decoder, speaker classifier) and the autoencoder baseline.
//   - `objectives`: reconstruction / content-matching / adversarial terms
//     and the speaker-verification pretraining loss.
//   - `training`: train state, checkpoints, metrics logging, and the named
//     regime registry (joint two-phase, frozen-TTS, baseline, style).
//   - `convert`: checkpoint-driven mel conversion and WAV-to-WAV paths.
//   - `eval`: objective evaluation (MCD tables, disentanglement probes,
//     style separation) and plot rendering.

pub mod convert;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
