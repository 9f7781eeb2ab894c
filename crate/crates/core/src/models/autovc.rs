// Autoencoder baseline with an information bottleneck: a narrow
// bidirectional recurrence over the mel frames, downsampled in time, then
// replicated back to frame rate and decoded with the target style. The
// decoder reuses the shared decoder builder at the bottleneck width.

use ndarray::Array2;

use crate::models::layers::{bilstm, conv1d, init_bilstm, init_conv1d, mask_frames};
use crate::models::networks::{decoder_forward, init_decoder};
use crate::models::ModelConfig;
use crate::nn::{Bound, Params, Tape, Value};

/// Number of bottleneck codes for a given frame count and downsample
/// factor (one code per started chunk).
pub fn autovc_code_frames(frames: usize, factor: usize) -> usize {
    assert!(factor > 0);
    frames.div_ceil(factor)
}

pub struct AutovcForward {
    /// Predicted mel frames, [batch, t, n_mels].
    pub pred: Value,
    /// Bottleneck codes, [batch, ceil(t/factor), 2*bottleneck].
    pub codes: Value,
    /// Codes replicated back to frame rate (the decoder's content input),
    /// [batch, t, 2*bottleneck].
    pub content_up: Value,
}

pub fn init_autovc(p: &mut Params, cfg: &ModelConfig, seed: u64) {
    let ch = cfg.content_channels;
    init_conv1d(p, "avc.conv0", cfg.content_kernel, cfg.n_mels, ch, seed);
    init_conv1d(p, "avc.conv1", cfg.content_kernel, ch, ch, seed);
    init_conv1d(p, "avc.conv2", cfg.content_kernel, ch, ch, seed);
    init_bilstm(p, "avc.lstm", ch, cfg.autovc_bottleneck, seed);
    init_decoder(p, cfg, 2 * cfg.autovc_bottleneck, seed);
}

/// Encode mel frames to bottleneck codes sampled every `autovc_downsample`
/// frames: [batch, t, n_mels] -> [batch, ceil(t/factor), 2*bottleneck].
pub fn autovc_encode(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    mel: Value,
    lengths: &[usize],
) -> Value {
    let mut h = mel;
    for i in 0..3 {
        h = conv1d(tape, b, &format!("avc.conv{i}"), h);
        h = tape.relu(h);
        h = mask_frames(tape, h, lengths);
    }
    let h = bilstm(tape, b, "avc.lstm", h, lengths);
    let h = mask_frames(tape, h, lengths);

    let shape = tape.value(h).shape().to_vec();
    let (nb, t) = (shape[0], shape[1]);
    let factor = cfg.autovc_downsample;
    let n_codes = autovc_code_frames(t, factor);
    let idx = Array2::from_shape_fn((nb, n_codes), |(_, k)| k * factor);
    let codes = tape.gather_time(h, &idx);
    let code_lengths: Vec<usize> =
        lengths.iter().map(|&l| autovc_code_frames(l, factor)).collect();
    mask_frames(tape, codes, &code_lengths)
}

/// Full baseline pass: encode, replicate codes back to frame rate, decode
/// with the given style embedding. Output matches the input frame count.
pub fn autovc_forward(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    mel: Value,
    style: Value,
    lengths: &[usize],
) -> AutovcForward {
    let codes = autovc_encode(tape, b, cfg, mel, lengths);
    let shape = tape.value(mel).shape().to_vec();
    let (nb, t) = (shape[0], shape[1]);
    let factor = cfg.autovc_downsample;
    let up_idx = Array2::from_shape_fn((nb, t), |(_, ti)| ti / factor);
    let up = tape.gather_time(codes, &up_idx);
    let content_up = mask_frames(tape, up, lengths);
    let pred = decoder_forward(tape, b, cfg, content_up, style, lengths);
    AutovcForward { pred, codes, content_up }
}
