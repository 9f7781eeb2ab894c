// Signal front-end and objective distance metric.
//
// Fixed analysis chain: 22.05 kHz mono PCM -> peak normalization ->
// centered STFT (1024-point FFT/window, 256 hop, Hann) -> 80-band mel
// projection over 90-7600 Hz -> log compression with a 1e-5 floor.
// Resynthesis inverts the chain approximately: mel pseudo-inverse back to
// linear magnitudes, then Griffin-Lim phase recovery with a seeded initial
// phase. Evaluation maps log-mel to mel-cepstra (orthonormal DCT-II) and
// scores pairs with DTW-aligned mel-cepstral distortion.

mod cepstrum;
mod griffin_lim;
mod mcd;
mod mel;
mod stft;
mod wav;

pub use cepstrum::{dct_ortho_matrix, mel_cepstrum};
pub use griffin_lim::{griffin_lim, mel_to_linear, GriffinLimResult};
pub use mcd::{dtw_path, mcd, FRAME_MCD_SCALE};
pub use mel::{
    load_mel, mel_center_frequencies, mel_filterbank, mel_spectrogram, save_mel, MelSidecar,
};
pub use stft::{frames_for_samples, hann_window, istft, stft_magnitude, Stft};
pub use wav::{load_wav, save_wav};

use serde::{Deserialize, Serialize};

/// Analysis parameters. Defaults follow the fixed desk-scale chain; they
/// are carried in config snapshots and mel sidecar headers so dumped
/// features are self-describing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 22_050,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 90.0,
            fmax: 7600.0,
            log_floor: 1e-5,
        }
    }
}

impl DspConfig {
    /// Frames produced for a 2-second crop and similar durations.
    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64 / self.hop as f64).floor() as usize
    }
}
