// The five conversion networks and the baseline pair, built as shape
// contracts over the tape:
//
//   text encoder      phoneme ids -> per-frame desired content embedding
//   content encoder   mel -> per-frame estimated content embedding
//   style encoder     mel crop -> unit-norm style vector
//   decoder           (content, style) -> mel
//   speaker classifier content -> posterior over speakers
//
// plus the baseline's bottleneck encoder and its decoder (same decoder
// builder, narrower content input). Checkpoints carry every parameter
// tensor keyed by name with the model configuration embedded.

mod autovc;
mod checkpoint;
mod layers;
mod networks;

pub use autovc::{autovc_code_frames, autovc_encode, autovc_forward, init_autovc, AutovcForward};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{
    bilstm, fft_block, last_valid, linear2, linear3, lstm_layer, mask_frames, sinusoid_table,
};
pub use networks::{
    content_encoder_forward, decoder_forward, init_content_encoder, init_decoder,
    init_speaker_classifier, init_style_encoder, init_text_encoder, length_regulate_indices,
    speaker_classifier_forward, style_encoder_forward, text_encoder_forward,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding width shared by the text path and the content path.
    pub d_model: usize,
    pub d_style: usize,
    pub n_heads: usize,
    /// Attention/conv blocks in the text encoder.
    pub n_enc_blocks: usize,
    /// Attention/conv blocks in the decoder.
    pub n_dec_blocks: usize,
    /// Hidden width of each block's convolutional feed-forward half.
    pub ff_hidden: usize,
    pub fft_kernel: usize,
    pub content_kernel: usize,
    pub content_channels: usize,
    /// Content-encoder recurrent width per direction (2x = d_model).
    pub content_lstm: usize,
    pub style_lstm: usize,
    pub clf_lstm: usize,
    pub n_mels: usize,
    pub vocab_size: usize,
    /// K, fixed by the corpus.
    pub num_speakers: usize,
    /// Baseline bottleneck width per direction.
    pub autovc_bottleneck: usize,
    /// Baseline temporal downsampling factor.
    pub autovc_downsample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_style: 32,
            n_heads: 2,
            n_enc_blocks: 4,
            n_dec_blocks: 6,
            ff_hidden: 128,
            fft_kernel: 3,
            content_kernel: 5,
            content_channels: 64,
            content_lstm: 32,
            style_lstm: 64,
            clf_lstm: 64,
            n_mels: 80,
            vocab_size: crate::corpus::Lexicon::bundled().vocab_size(),
            num_speakers: 4,
            autovc_bottleneck: 16,
            autovc_downsample: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if 2 * self.content_lstm != self.d_model {
            return Err(Error::validation(format!(
                "content encoder emits {} dims (2 x {}) but d_model is {}",
                2 * self.content_lstm,
                self.content_lstm,
                self.d_model
            )));
        }
        if self.fft_kernel % 2 == 0 || self.content_kernel % 2 == 0 {
            return Err(Error::validation("convolution kernels must be odd for same padding"));
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_style", self.d_style),
            ("n_heads", self.n_heads),
            ("n_enc_blocks", self.n_enc_blocks),
            ("n_dec_blocks", self.n_dec_blocks),
            ("ff_hidden", self.ff_hidden),
            ("n_mels", self.n_mels),
            ("vocab_size", self.vocab_size),
            ("num_speakers", self.num_speakers),
            ("autovc_bottleneck", self.autovc_bottleneck),
            ("autovc_downsample", self.autovc_downsample),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
