// Shared building blocks: linear projections, LSTM / BiLSTM recurrences,
// sinusoidal positions, length masking, and the attention+conv block used
// by the text encoder and the decoder.
//
// Every builder comes as a pair: `init_*` registers parameters under a
// name prefix, and the forward function binds them by the same prefix.
// All forwards consume padded [batch, time, dim] tensors plus per-item
// valid lengths, and guarantee that padded rows of their outputs are zero
// (recurrent state is handled by length-aware gathers, never by masking
// tricks inside the recurrence).

use ndarray::{Array1, Array2, Array3};

use crate::nn::{xavier_uniform, zeros_init, Arr, Bound, Params, Tape, Value};

pub fn init_linear(p: &mut Params, name: &str, d_in: usize, d_out: usize, seed: u64) {
    p.insert(
        format!("{name}.w"),
        xavier_uniform(&[d_in, d_out], d_in, d_out, seed, &format!("init/{name}.w")),
    );
    p.insert(format!("{name}.b"), zeros_init(&[d_out]));
}

/// y = x W + b for x of shape [n, d_in].
pub fn linear2(tape: &mut Tape, b: &Bound, name: &str, x: Value) -> Value {
    let h = tape.matmul(x, b.v(&format!("{name}.w")));
    tape.add_bias(h, b.v(&format!("{name}.b")))
}

/// y = x W + b applied frame-wise to [batch, t, d_in].
pub fn linear3(tape: &mut Tape, b: &Bound, name: &str, x: Value) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let (nb, t, d_in) = (shape[0], shape[1], shape[2]);
    let d_out = tape.value(b.v(&format!("{name}.w"))).shape()[1];
    let flat = tape.reshape(x, &[nb * t, d_in]);
    let h = linear2(tape, b, name, flat);
    tape.reshape(h, &[nb, t, d_out])
}

pub fn init_conv1d(p: &mut Params, name: &str, k: usize, c_in: usize, c_out: usize, seed: u64) {
    p.insert(
        format!("{name}.w"),
        xavier_uniform(&[k, c_in, c_out], k * c_in, c_out, seed, &format!("init/{name}.w")),
    );
    p.insert(format!("{name}.b"), zeros_init(&[c_out]));
}

pub fn conv1d(tape: &mut Tape, b: &Bound, name: &str, x: Value) -> Value {
    tape.conv1d_same(x, b.v(&format!("{name}.w")), b.v(&format!("{name}.b")))
}

pub fn init_layer_norm(p: &mut Params, name: &str, d: usize) {
    let mut gamma = zeros_init(&[d]);
    gamma.fill(1.0);
    p.insert(format!("{name}.gamma"), gamma);
    p.insert(format!("{name}.beta"), zeros_init(&[d]));
}

pub fn layer_norm(tape: &mut Tape, b: &Bound, name: &str, x: Value) -> Value {
    tape.layer_norm(x, b.v(&format!("{name}.gamma")), b.v(&format!("{name}.beta")), 1e-6)
}

/// Zero out padded frames: x[b, t, :] *= (t < lengths[b]).
pub fn mask_frames(tape: &mut Tape, x: Value, lengths: &[usize]) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let mask = Array3::from_shape_fn((shape[0], shape[1], 1), |(b, t, _)| {
        if t < lengths[b] {
            1.0
        } else {
            0.0
        }
    });
    let mask = tape.constant(mask.into_dyn());
    tape.mul_broadcast_last(x, mask)
}

/// The standard sin/cos position table, [t, d].
pub fn sinusoid_table(t_max: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((t_max, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf(2.0 * (i / 2) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Add sinusoidal positions to [batch, t, d] (positions are constants).
pub fn add_positions(tape: &mut Tape, x: Value) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let table = sinusoid_table(shape[1], shape[2]);
    let tiled = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(_, t, i)| table[[t, i]]);
    tape.add_const_array(x, &tiled.into_dyn())
}

pub fn init_lstm(p: &mut Params, name: &str, d_in: usize, hidden: usize, seed: u64) {
    p.insert(
        format!("{name}.wx"),
        xavier_uniform(&[d_in, 4 * hidden], d_in, 4 * hidden, seed, &format!("init/{name}.wx")),
    );
    p.insert(
        format!("{name}.wh"),
        xavier_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, seed, &format!("init/{name}.wh")),
    );
    // forget gate bias starts at 1 so early training keeps state
    let mut bias = Array1::<f64>::zeros(4 * hidden);
    bias.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
    p.insert(format!("{name}.b"), bias.into_dyn());
}

/// Unidirectional LSTM over [batch, t, d_in] -> [batch, t, hidden].
/// Gate order i, f, g, o.
pub fn lstm_layer(tape: &mut Tape, b: &Bound, name: &str, x: Value) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let (nb, t) = (shape[0], shape[1]);
    let wx = b.v(&format!("{name}.wx"));
    let wh = b.v(&format!("{name}.wh"));
    let bias = b.v(&format!("{name}.b"));
    let hidden = tape.value(wh).shape()[0];

    let mut h = tape.constant(Arr::zeros(ndarray::IxDyn(&[nb, hidden])));
    let mut c = tape.constant(Arr::zeros(ndarray::IxDyn(&[nb, hidden])));
    let mut outputs = Vec::with_capacity(t);
    for step in 0..t {
        let x_t = tape.slice_time(x, step);
        let gx = tape.matmul(x_t, wx);
        let gh = tape.matmul(h, wh);
        let pre = tape.add(gx, gh);
        let pre = tape.add_bias(pre, bias);
        let i_raw = tape.slice_lastdim(pre, 0, hidden);
        let f_raw = tape.slice_lastdim(pre, hidden, hidden);
        let g_raw = tape.slice_lastdim(pre, 2 * hidden, hidden);
        let o_raw = tape.slice_lastdim(pre, 3 * hidden, hidden);
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh_(g_raw);
        let o = tape.sigmoid(o_raw);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let ct = tape.tanh_(c);
        h = tape.mul(o, ct);
        outputs.push(h);
    }
    tape.stack_time(&outputs)
}

/// Per-item index map that reverses the valid prefix and leaves padding in
/// place. It is its own inverse, so it serves both directions.
fn reversal_indices(nb: usize, t: usize, lengths: &[usize]) -> Array2<usize> {
    Array2::from_shape_fn((nb, t), |(b, i)| {
        if i < lengths[b] {
            lengths[b] - 1 - i
        } else {
            i
        }
    })
}

pub fn init_bilstm(p: &mut Params, name: &str, d_in: usize, hidden: usize, seed: u64) {
    init_lstm(p, &format!("{name}.fwd"), d_in, hidden, seed);
    init_lstm(p, &format!("{name}.bwd"), d_in, hidden, seed);
}

/// Bidirectional LSTM: [batch, t, d_in] -> [batch, t, 2*hidden], the
/// backward half computed over each item's valid prefix only.
pub fn bilstm(tape: &mut Tape, b: &Bound, name: &str, x: Value, lengths: &[usize]) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let idx = reversal_indices(shape[0], shape[1], lengths);
    let fwd = lstm_layer(tape, b, &format!("{name}.fwd"), x);
    let x_rev = tape.gather_time(x, &idx);
    let bwd_rev = lstm_layer(tape, b, &format!("{name}.bwd"), x_rev);
    let bwd = tape.gather_time(bwd_rev, &idx);
    tape.concat_lastdim(&[fwd, bwd])
}

/// Last valid frame of each item: [batch, t, d] -> [batch, d].
pub fn last_valid(tape: &mut Tape, x: Value, lengths: &[usize]) -> Value {
    let idx: Vec<usize> = lengths.iter().map(|&l| l - 1).collect();
    tape.select_time(x, &idx)
}

/// Scale rows to unit L2 norm (safe at tiny norms via the epsilon).
pub fn l2_normalize(tape: &mut Tape, x: Value) -> Value {
    let sq = tape.mul(x, x);
    let ssum = tape.sum_axis_keep(sq, 1);
    let inv = tape.rsqrt_eps(ssum, 1e-12);
    tape.mul_broadcast_last(x, inv)
}

pub fn init_fft_block(p: &mut Params, name: &str, d: usize, ff: usize, k: usize, seed: u64) {
    for proj in ["q", "k", "v", "out"] {
        init_linear(p, &format!("{name}.attn.{proj}"), d, d, seed);
    }
    init_layer_norm(p, &format!("{name}.norm1"), d);
    init_conv1d(p, &format!("{name}.ff.c1"), k, d, ff, seed);
    init_conv1d(p, &format!("{name}.ff.c2"), k, ff, d, seed);
    init_layer_norm(p, &format!("{name}.norm2"), d);
}

/// One attention + convolutional feed-forward block (post-norm residual
/// layout). Padded key positions are excluded from attention and padded
/// output rows are zeroed.
pub fn fft_block(
    tape: &mut Tape,
    b: &Bound,
    name: &str,
    x: Value,
    lengths: &[usize],
    n_heads: usize,
) -> Value {
    let shape = tape.value(x).shape().to_vec();
    let (nb, t, d) = (shape[0], shape[1], shape[2]);
    assert_eq!(d % n_heads, 0);
    let dh = d / n_heads;

    let q = linear3(tape, b, &format!("{name}.attn.q"), x);
    let k = linear3(tape, b, &format!("{name}.attn.k"), x);
    let v = linear3(tape, b, &format!("{name}.attn.v"), x);

    // additive mask: padded keys get a large negative score
    let neg = Array3::from_shape_fn((nb, t, t), |(bi, _, tk)| {
        if tk < lengths[bi] {
            0.0
        } else {
            -1e9
        }
    })
    .into_dyn();

    let mut heads = Vec::with_capacity(n_heads);
    for hh in 0..n_heads {
        let qh = tape.slice_lastdim(q, hh * dh, dh);
        let kh = tape.slice_lastdim(k, hh * dh, dh);
        let vh = tape.slice_lastdim(v, hh * dh, dh);
        let kt = tape.transpose_last2(kh);
        let scores = tape.bmm(qh, kt);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = tape.add_const_array(scores, &neg);
        let attn = tape.softmax_lastdim(scores);
        heads.push(tape.bmm(attn, vh));
    }
    let ctx = if heads.len() == 1 { heads[0] } else { tape.concat_lastdim(&heads) };
    let attn_out = linear3(tape, b, &format!("{name}.attn.out"), ctx);

    let res1 = tape.add(x, attn_out);
    let normed1 = layer_norm(tape, b, &format!("{name}.norm1"), res1);
    let x1 = mask_frames(tape, normed1, lengths);

    let ff1 = conv1d(tape, b, &format!("{name}.ff.c1"), x1);
    let ff1 = tape.relu(ff1);
    // the stacked convolutions would otherwise relay valid frames through
    // pad rows back into the tail of the valid range
    let ff1 = mask_frames(tape, ff1, lengths);
    let ff2 = conv1d(tape, b, &format!("{name}.ff.c2"), ff1);
    let res2 = tape.add(x1, ff2);
    let normed2 = layer_norm(tape, b, &format!("{name}.norm2"), res2);
    mask_frames(tape, normed2, lengths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{central_difference_check, derive_rng, normal_vec};

    fn rand_arr(shape: &[usize], seed: u64, tag: &str) -> Arr {
        let mut rng = derive_rng(seed, tag);
        let n = shape.iter().product();
        Arr::from_shape_vec(ndarray::IxDyn(shape), normal_vec(&mut rng, n, 0.0, 0.5)).unwrap()
    }

    #[test]
    fn lstm_shapes_and_gradients() {
        let mut p = Params::new();
        init_lstm(&mut p, "l", 3, 4, 5);
        let names: Vec<String> = p.names().cloned().collect();
        let mut leaves: Vec<Arr> = names.iter().map(|n| p.get(n).clone()).collect();
        leaves.push(rand_arr(&[2, 5, 3], 5, "x"));
        let build = move |tape: &mut Tape, hs: &[Value]| {
            let map = names.iter().cloned().zip(hs.iter().copied()).collect();
            let bound = Bound::from_handles(map);
            let y = lstm_layer(tape, &bound, "l", hs[hs.len() - 1]);
            tape.sum_all(y)
        };
        {
            let mut tape = Tape::new();
            let hs: Vec<Value> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
            let root = build(&mut tape, &hs);
            assert!(tape.scalar(root).is_finite());
        }
        let report = central_difference_check(&build, &leaves, 1e-5, 6, 9);
        assert!(report.passes(1e-5), "lstm gradients: {report:?}");
    }

    #[test]
    fn bilstm_backward_half_ignores_padding() {
        let mut p = Params::new();
        init_bilstm(&mut p, "l", 3, 4, 5);
        // one item, valid length 4, once padded to 7 and once exact
        let x_exact = rand_arr(&[1, 4, 3], 6, "x");
        let mut x_pad = Arr::zeros(ndarray::IxDyn(&[1, 7, 3]));
        for t in 0..4 {
            for d in 0..3 {
                x_pad[[0, t, d]] = x_exact[[0, t, d]];
            }
        }
        let run = |input: Arr, t_total: usize| -> Arr {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape, &[]);
            let xv = tape.constant(input);
            let y = bilstm(&mut tape, &bound, "l", xv, &[4]);
            assert_eq!(tape.value(y).shape(), &[1, t_total, 8]);
            tape.value(y).clone()
        };
        let exact = run(x_exact, 4);
        let padded = run(x_pad, 7);
        for t in 0..4 {
            for d in 0..8 {
                let (a, b) = (exact[[0, t, d]], padded[[0, t, d]]);
                assert!(
                    (a - b).abs() < 1e-12,
                    "valid output changed by padding at ({t},{d}): {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn fft_block_masks_padding_and_keeps_items_independent() {
        let mut p = Params::new();
        init_fft_block(&mut p, "blk", 6, 10, 3, 3);
        let x = rand_arr(&[2, 5, 6], 8, "x");
        let lengths = [5usize, 3];
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, &[]);
        let xv = tape.constant(x.clone());
        let y = fft_block(&mut tape, &bound, "blk", xv, &lengths, 2);
        let yv = tape.value(y).clone();
        assert_eq!(yv.shape(), &[2, 5, 6]);
        // padded rows are exactly zero
        for t in 3..5 {
            for d in 0..6 {
                assert_eq!(yv[[1, t, d]], 0.0);
            }
        }
        // swapping item order permutes outputs identically
        let mut swapped = x.clone();
        for t in 0..5 {
            for d in 0..6 {
                swapped[[0, t, d]] = x[[1, t, d]];
                swapped[[1, t, d]] = x[[0, t, d]];
            }
        }
        let mut tape2 = Tape::new();
        let bound2 = p.bind(&mut tape2, &[]);
        let xv2 = tape2.constant(swapped);
        let y2 = fft_block(&mut tape2, &bound2, "blk", xv2, &[3, 5], 2);
        let yv2 = tape2.value(y2).clone();
        for t in 0..5 {
            for d in 0..6 {
                assert!((yv[[0, t, d]] - yv2[[1, t, d]]).abs() < 1e-12);
                assert!((yv[[1, t, d]] - yv2[[0, t, d]]).abs() < 1e-12);
            }
        }

        // growing t_max must not change valid rows: the second item alone,
        // unpadded, matches its rows from the padded batch (this guards the
        // stacked feed-forward convolutions, whose combined receptive field
        // could relay valid frames through pad rows and back)
        let mut alone = Arr::zeros(ndarray::IxDyn(&[1, 3, 6]));
        for t in 0..3 {
            for d in 0..6 {
                alone[[0, t, d]] = x[[1, t, d]];
            }
        }
        let mut tape3 = Tape::new();
        let bound3 = p.bind(&mut tape3, &[]);
        let xv3 = tape3.constant(alone);
        let y3 = fft_block(&mut tape3, &bound3, "blk", xv3, &[3], 2);
        let yv3 = tape3.value(y3).clone();
        for t in 0..3 {
            for d in 0..6 {
                assert!(
                    (yv3[[0, t, d]] - yv[[1, t, d]]).abs() < 1e-12,
                    "t_max extension changed valid row {t} dim {d}"
                );
            }
        }
    }

    #[test]
    fn fft_block_gradients_match_finite_differences() {
        let mut p = Params::new();
        init_fft_block(&mut p, "blk", 4, 6, 3, 7);
        let names: Vec<String> = p.names().cloned().collect();
        let mut leaves: Vec<Arr> = names.iter().map(|n| p.get(n).clone()).collect();
        leaves.push(rand_arr(&[2, 3, 4], 7, "x"));
        let build = move |tape: &mut Tape, hs: &[Value]| {
            let map = names.iter().cloned().zip(hs.iter().copied()).collect();
            let bound = Bound::from_handles(map);
            let y = fft_block(tape, &bound, "blk", hs[hs.len() - 1], &[3, 2], 2);
            tape.sum_all(y)
        };
        // layer norm's curvature needs the smaller step (see nn::check)
        let report = central_difference_check(&build, &leaves, 1e-5, 4, 11);
        assert!(report.passes(1e-4), "fft block gradients: {report:?}");
    }

    #[test]
    fn l2_normalize_gives_unit_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_arr(&[3, 5], 4, "x"));
        let y = l2_normalize(&mut tape, x);
        for row in 0..3 {
            let norm: f64 =
                (0..5).map(|d| tape.value(y)[[row, d]].powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "row {row} norm {norm}");
        }
    }

    #[test]
    fn sinusoid_table_is_bounded_and_position_sensitive() {
        let t = sinusoid_table(50, 16);
        assert!(t.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(t.row(0), t.row(1));
        // column 1 is a cosine: starts at 1
        assert!((t[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((t[[0, 0]]).abs() < 1e-12);
    }
}
