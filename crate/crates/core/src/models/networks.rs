// The five networks: text encoder, content encoder, style encoder,
// decoder, and speaker classifier.
//
// Each network is an `init_*` / `*_forward` pair sharing a fixed name
// prefix ("te.", "ec.", "es.", "dec.", "clf."); a model family keeps all
// of its networks in one `Params`, binding only the subset it trains.
// Forwards take padded [batch, time, dim] tensors plus valid lengths and
// return tensors whose padded rows are zero.

use ndarray::Array2;

use crate::models::layers::{
    add_positions, bilstm, conv1d, fft_block, init_bilstm, init_conv1d, init_fft_block,
    init_linear, init_lstm, l2_normalize, last_valid, linear2, linear3, lstm_layer, mask_frames,
};
use crate::models::ModelConfig;
use crate::nn::{xavier_uniform, Arr, Bound, Params, Tape, Value};

// ---------------------------------------------------------------- text

pub fn init_text_encoder(p: &mut Params, cfg: &ModelConfig, seed: u64) {
    p.insert(
        "te.embed".to_string(),
        xavier_uniform(
            &[cfg.vocab_size, cfg.d_model],
            cfg.vocab_size,
            cfg.d_model,
            seed,
            "init/te.embed",
        ),
    );
    for i in 0..cfg.n_enc_blocks {
        init_fft_block(p, &format!("te.blk{i}"), cfg.d_model, cfg.ff_hidden, cfg.fft_kernel, seed);
    }
    init_linear(p, "te.proj", cfg.d_model, cfg.d_model, seed);
}

/// Expand phoneme indices into the frame domain: position t of row b is
/// the index of the phoneme covering frame t. Frames past the expansion
/// point at phoneme 0 (callers mask them).
pub fn length_regulate_indices(durations: &Array2<usize>, t_frames: usize) -> Array2<usize> {
    let mut idx = Array2::<usize>::zeros((durations.nrows(), t_frames));
    for (b, row) in durations.outer_iter().enumerate() {
        let mut t = 0usize;
        for (ph, &dur) in row.iter().enumerate() {
            for _ in 0..dur {
                assert!(t < t_frames, "durations overflow {t_frames} frames");
                idx[[b, t]] = ph;
                t += 1;
            }
        }
    }
    idx
}

/// Phoneme ids [batch, p_max] -> frame-rate content predictions
/// [batch, t_frames, d_model], expanded by per-phoneme durations.
pub fn text_encoder_forward(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    phonemes: &Array2<usize>,
    phoneme_lengths: &[usize],
    durations: &Array2<usize>,
    frame_lengths: &[usize],
    t_frames: usize,
) -> Value {
    let emb = tape.embedding(b.v("te.embed"), phonemes);
    let emb = tape.scale(emb, (cfg.d_model as f64).sqrt());
    let x = add_positions(tape, emb);
    let mut h = mask_frames(tape, x, phoneme_lengths);
    for i in 0..cfg.n_enc_blocks {
        h = fft_block(tape, b, &format!("te.blk{i}"), h, phoneme_lengths, cfg.n_heads);
    }
    let h = linear3(tape, b, "te.proj", h);
    let idx = length_regulate_indices(durations, t_frames);
    let reg = tape.gather_time(h, &idx);
    mask_frames(tape, reg, frame_lengths)
}

// ------------------------------------------------------------- content

pub fn init_content_encoder(p: &mut Params, cfg: &ModelConfig, seed: u64) {
    let ch = cfg.content_channels;
    init_conv1d(p, "ec.conv0", cfg.content_kernel, cfg.n_mels, ch, seed);
    init_conv1d(p, "ec.conv1", cfg.content_kernel, ch, ch, seed);
    init_conv1d(p, "ec.conv2", cfg.content_kernel, ch, ch, seed);
    init_bilstm(p, "ec.lstm", ch, cfg.content_lstm, seed);
}

/// Mel frames [batch, t, n_mels] -> content features [batch, t, d_model].
pub fn content_encoder_forward(
    tape: &mut Tape,
    b: &Bound,
    _cfg: &ModelConfig,
    mel: Value,
    lengths: &[usize],
) -> Value {
    let mut h = mel;
    for i in 0..3 {
        h = conv1d(tape, b, &format!("ec.conv{i}"), h);
        h = tape.relu(h);
        h = mask_frames(tape, h, lengths);
    }
    let h = bilstm(tape, b, "ec.lstm", h, lengths);
    mask_frames(tape, h, lengths)
}

// --------------------------------------------------------------- style

pub fn init_style_encoder(p: &mut Params, cfg: &ModelConfig, seed: u64) {
    init_lstm(p, "es.lstm0", cfg.n_mels, cfg.style_lstm, seed);
    init_lstm(p, "es.lstm1", cfg.style_lstm, cfg.style_lstm, seed);
    init_linear(p, "es.proj", cfg.style_lstm, cfg.d_style, seed);
}

/// Mel frames [batch, t, n_mels] -> unit-norm embeddings [batch, d_style].
pub fn style_encoder_forward(
    tape: &mut Tape,
    b: &Bound,
    _cfg: &ModelConfig,
    mel: Value,
    lengths: &[usize],
) -> Value {
    let h = lstm_layer(tape, b, "es.lstm0", mel);
    let h = lstm_layer(tape, b, "es.lstm1", h);
    let last = last_valid(tape, h, lengths);
    let e = linear2(tape, b, "es.proj", last);
    l2_normalize(tape, e)
}

// ------------------------------------------------------------- decoder

/// `content_width` is the feature dimension of the content input; the
/// frame-level content and the broadcast style embedding are concatenated
/// before the input projection.
pub fn init_decoder(p: &mut Params, cfg: &ModelConfig, content_width: usize, seed: u64) {
    init_linear(p, "dec.in", content_width + cfg.d_style, cfg.d_model, seed);
    for i in 0..cfg.n_dec_blocks {
        init_fft_block(p, &format!("dec.blk{i}"), cfg.d_model, cfg.ff_hidden, cfg.fft_kernel, seed);
    }
    init_linear(p, "dec.out", cfg.d_model, cfg.n_mels, seed);
}

/// Tile a [batch, d] embedding across time: -> [batch, t, d].
fn broadcast_over_time(tape: &mut Tape, e: Value, t: usize) -> Value {
    let shape = tape.value(e).shape().to_vec();
    let ones = tape.constant(Arr::ones(ndarray::IxDyn(&[shape[0], t, 1])));
    let e3 = tape.reshape(e, &[shape[0], 1, shape[1]]);
    tape.bmm(ones, e3)
}

/// Content [batch, t, content_width] + style [batch, d_style] -> mel
/// predictions [batch, t, n_mels].
pub fn decoder_forward(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    content: Value,
    style: Value,
    lengths: &[usize],
) -> Value {
    let t = tape.value(content).shape()[1];
    let style_t = broadcast_over_time(tape, style, t);
    let x = tape.concat_lastdim(&[content, style_t]);
    let x = linear3(tape, b, "dec.in", x);
    let x = add_positions(tape, x);
    let mut h = mask_frames(tape, x, lengths);
    for i in 0..cfg.n_dec_blocks {
        h = fft_block(tape, b, &format!("dec.blk{i}"), h, lengths, cfg.n_heads);
    }
    let out = linear3(tape, b, "dec.out", h);
    mask_frames(tape, out, lengths)
}

// ---------------------------------------------------------- classifier

pub fn init_speaker_classifier(
    p: &mut Params,
    cfg: &ModelConfig,
    content_width: usize,
    seed: u64,
) {
    init_lstm(p, "clf.lstm0", content_width, cfg.clf_lstm, seed);
    init_lstm(p, "clf.lstm1", cfg.clf_lstm, cfg.clf_lstm, seed);
    init_linear(p, "clf.proj", cfg.clf_lstm, cfg.num_speakers, seed);
}

/// Content features [batch, t, content_width] -> speaker logits [batch, k].
pub fn speaker_classifier_forward(
    tape: &mut Tape,
    b: &Bound,
    _cfg: &ModelConfig,
    content: Value,
    lengths: &[usize],
) -> Value {
    let h = lstm_layer(tape, b, "clf.lstm0", content);
    let h = lstm_layer(tape, b, "clf.lstm1", h);
    let last = last_valid(tape, h, lengths);
    linear2(tape, b, "clf.proj", last)
}
