// Scalar training objectives: masked reconstruction and content-matching
// means, the speaker-identity log-likelihood term the encoder and the
// classifier fight over, the baseline autoencoder total, and the
// speaker-verification pretraining loss over centroid similarities.
//
// Everything here builds graph nodes on the tape; the numbers reported per
// step are read off those nodes by the trainers and serialized as a
// `LossReport`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{Arr, Params, Tape, Value};

/// Floor for the classifier posterior inside the adversarial term: the
/// log-likelihood is unbounded below once the encoder succeeds, so the
/// term is clamped at ln(1e-8) to keep the min-max numerically stable.
pub const POSTERIOR_FLOOR: f64 = 1e-8;

/// Per-step loss numbers, serialized into the metrics log.
///
/// `total_l2 == content + lambda * adv` always holds (checked by
/// `is_consistent`); `total_l1` is the reconstruction total of the phase
/// that owns it. The verification-pretraining regime reports its single
/// loss in `ge2e` and leaves the rest at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub content: f64,
    pub adv: f64,
    pub total_l1: f64,
    pub total_l2: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ge2e: Option<f64>,
}

impl LossReport {
    pub fn two_phase(recon: f64, content: f64, adv: f64, lambda: f64) -> Self {
        LossReport {
            recon,
            content,
            adv,
            total_l1: recon,
            total_l2: content + lambda * adv,
            lambda,
            ge2e: None,
        }
    }

    pub fn baseline(recon: f64, content: f64, lambda: f64) -> Self {
        LossReport {
            recon,
            content,
            adv: 0.0,
            total_l1: recon + lambda * content,
            total_l2: content,
            lambda,
            ge2e: None,
        }
    }

    pub fn style_pretrain(loss: f64) -> Self {
        LossReport {
            recon: 0.0,
            content: 0.0,
            adv: 0.0,
            total_l1: 0.0,
            total_l2: 0.0,
            lambda: 0.0,
            ge2e: Some(loss),
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.total_l2 - (self.content + self.lambda * self.adv)).abs() < 1e-6
    }

    pub fn all_finite(&self) -> bool {
        [self.recon, self.content, self.adv, self.total_l1, self.total_l2]
            .iter()
            .chain(self.ge2e.iter())
            .all(|v| v.is_finite())
    }
}

/// Mean of x over unmasked frames (mask is [batch, t], 1 keeps a frame);
/// every feature of a kept frame counts toward the denominator.
fn masked_mean(tape: &mut Tape, x: Value, mask: &Array2<f64>) -> Value {
    let shape = tape.value(x).shape().to_vec();
    assert_eq!(shape[0], mask.nrows(), "mask rows must match batch");
    assert_eq!(shape[1], mask.ncols(), "mask cols must match frames");
    let kept: f64 = mask.sum();
    assert!(kept > 0.0, "mask keeps no frames");
    let denom = kept * shape[2] as f64;
    let m3 = Arr::from_shape_fn(ndarray::IxDyn(&[shape[0], shape[1], 1]), |ix| mask[[ix[0], ix[1]]]);
    let m3 = tape.constant(m3);
    let xm = tape.mul_broadcast_last(x, m3);
    let s = tape.sum_all(xm);
    tape.scale(s, 1.0 / denom)
}

/// Mean squared error between predicted and target frames over the
/// unmasked region.
pub fn recon_loss(tape: &mut Tape, pred: Value, target: Value, mask: &Array2<f64>) -> Value {
    assert_eq!(tape.value(pred).shape(), tape.value(target).shape(), "recon shapes differ");
    let diff = tape.sub(pred, target);
    let sq = tape.mul(diff, diff);
    masked_mean(tape, sq, mask)
}

/// Mean absolute error between the desired (text-derived) and estimated
/// (audio-derived) content embeddings over the unmasked region.
pub fn content_match_loss(
    tape: &mut Tape,
    desired: Value,
    estimated: Value,
    mask: &Array2<f64>,
) -> Value {
    assert_eq!(
        tape.value(desired).shape(),
        tape.value(estimated).shape(),
        "content shapes differ"
    );
    let diff = tape.sub(desired, estimated);
    let ad = tape.abs_(diff);
    masked_mean(tape, ad, mask)
}

/// Mean log-likelihood the classifier assigns to the true speakers,
/// floored at ln(POSTERIOR_FLOOR). The classifier maximizes this; the
/// content encoder minimizes it (scaled by lambda).
pub fn adversarial_term(tape: &mut Tape, logits: Value, speakers: &[usize]) -> Value {
    let shape = tape.value(logits).shape().to_vec();
    assert_eq!(shape[0], speakers.len(), "one speaker id per row");
    let k = shape[1];
    for &s in speakers {
        assert!(s < k, "speaker id {s} out of range for {k} speakers");
    }
    let lp = tape.log_softmax_lastdim(logits);
    let own = tape.gather_class(lp, speakers);
    let floored = tape.clamp_min(own, POSTERIOR_FLOOR.ln());
    let s = tape.sum_all(floored);
    tape.scale(s, 1.0 / speakers.len() as f64)
}

/// Plain mean cross-entropy against the true class (no posterior floor);
/// used by classifier-only training such as the disentanglement probe.
pub fn cross_entropy(tape: &mut Tape, logits: Value, classes: &[usize]) -> Value {
    let shape = tape.value(logits).shape().to_vec();
    assert_eq!(shape[0], classes.len(), "one class id per row");
    let lp = tape.log_softmax_lastdim(logits);
    let own = tape.gather_class(lp, classes);
    let s = tape.sum_all(own);
    tape.scale(s, -1.0 / classes.len() as f64)
}

/// The phase-two total: content matching plus lambda times the adversarial
/// log-likelihood (Eq. 8's shape — affine in lambda for fixed inputs).
pub fn combined_l2(tape: &mut Tape, content: Value, adv: Value, lambda: f64) -> Value {
    let scaled = tape.scale(adv, lambda);
    tape.add(content, scaled)
}

/// Baseline autoencoder losses: reconstruction plus lambda times the
/// bottleneck-code mismatch. Returns (total, recon, content) nodes.
pub fn autovc_losses(
    tape: &mut Tape,
    pred: Value,
    target: Value,
    codes: Value,
    codes_of_pred: Value,
    lambda: f64,
    frame_mask: &Array2<f64>,
    code_mask: &Array2<f64>,
) -> (Value, Value, Value) {
    let recon = recon_loss(tape, pred, target, frame_mask);
    assert_eq!(
        tape.value(codes).shape(),
        tape.value(codes_of_pred).shape(),
        "code shapes differ"
    );
    let diff = tape.sub(codes, codes_of_pred);
    let ad = tape.abs_(diff);
    let content = masked_mean(tape, ad, code_mask);
    let scaled = tape.scale(content, lambda);
    let total = tape.add(recon, scaled);
    (total, recon, content)
}

// ------------------------------------------------- style pretraining

/// Learned affine (scale, bias) applied to the similarity matrix; scale
/// starts high and positive, bias negative, per the usual recipe.
pub fn init_ge2e(p: &mut Params) {
    p.insert("ge2e.w".to_string(), Arr::from_elem(ndarray::IxDyn(&[1]), 10.0));
    p.insert("ge2e.b".to_string(), Arr::from_elem(ndarray::IxDyn(&[1]), -5.0));
}

/// The similarity scale must stay positive; call after each optimizer
/// step. Returns true if the clamp fired.
pub fn clamp_ge2e_scale(p: &mut Params) -> bool {
    let w = p.get_mut("ge2e.w");
    if w[[0]] < 1e-4 {
        w[[0]] = 1e-4;
        true
    } else {
        false
    }
}

/// Softmax-contrast verification loss over `n_speakers` x `m_utts`
/// unit-norm embeddings in speaker-major row order. Each row is scored
/// against every speaker centroid (its own centroid excludes the row
/// itself), scaled by (w, b), and cross-entropied against its speaker.
pub fn ge2e_loss(
    tape: &mut Tape,
    embeddings: Value,
    n_speakers: usize,
    m_utts: usize,
    w: Value,
    b: Value,
) -> Value {
    assert!(n_speakers >= 2, "verification loss needs at least 2 speakers");
    assert!(m_utts >= 2, "verification loss needs at least 2 utterances per speaker");
    let nm = n_speakers * m_utts;
    let shape = tape.value(embeddings).shape().to_vec();
    assert_eq!(shape[0], nm, "embedding rows must be n_speakers * m_utts");

    // all-speaker centroids and own-centroids-excluding-self are both
    // linear in the embeddings, so they are constant selector matmuls
    let avg = Array2::from_shape_fn((n_speakers, nm), |(j, r)| {
        if r / m_utts == j {
            1.0 / m_utts as f64
        } else {
            0.0
        }
    });
    let excl = Array2::from_shape_fn((nm, nm), |(r, r2)| {
        if r / m_utts == r2 / m_utts && r != r2 {
            1.0 / (m_utts - 1) as f64
        } else {
            0.0
        }
    });
    let avg = tape.constant(avg.into_dyn());
    let excl = tape.constant(excl.into_dyn());
    let centroids = tape.matmul(avg, embeddings); // [n, d]
    let own_centroids = tape.matmul(excl, embeddings); // [nm, d]

    // cross similarities, scaled by centroid norm (embeddings are unit)
    let ct = tape.transpose_last2(centroids);
    let dots = tape.matmul(embeddings, ct); // [nm, n]
    let csq = tape.mul(centroids, centroids);
    let css = tape.sum_axis_keep(csq, 1); // [n, 1]
    let cinv = tape.rsqrt_eps(css, 1e-12);
    let cinv_row = tape.transpose_last2(cinv); // [1, n]
    let ones = tape.constant(Arr::ones(ndarray::IxDyn(&[nm, 1])));
    let cinv_tiled = tape.matmul(ones, cinv_row); // [nm, n]
    let cross = tape.mul(dots, cinv_tiled);

    // own similarities from the self-excluded centroids
    let eo = tape.mul(embeddings, own_centroids);
    let own_dot = tape.sum_axis_keep(eo, 1); // [nm, 1]
    let osq = tape.mul(own_centroids, own_centroids);
    let oss = tape.sum_axis_keep(osq, 1);
    let oinv = tape.rsqrt_eps(oss, 1e-12);
    let own_sim = tape.mul(own_dot, oinv); // [nm, 1]

    // splice the own column into the cross matrix
    let onehot =
        Array2::from_shape_fn((nm, n_speakers), |(r, j)| if r / m_utts == j { 1.0 } else { 0.0 });
    let keep = onehot.mapv(|v| 1.0 - v);
    let cross_masked = tape.mul_const_array(cross, &keep.into_dyn());
    let onehot_v = tape.constant(onehot.into_dyn());
    let own_part = tape.mul_broadcast_last(onehot_v, own_sim);
    let sims = tape.add(cross_masked, own_part);

    // affine scale then cross-entropy against the true speaker
    let scaled = tape.mul_scalar_param(sims, w);
    let b2 = tape.reshape(b, &[1, 1]);
    let ones_flat = tape.constant(Arr::ones(ndarray::IxDyn(&[nm * n_speakers, 1])));
    let btile = tape.matmul(ones_flat, b2);
    let btile = tape.reshape(btile, &[nm, n_speakers]);
    let logits = tape.add(scaled, btile);

    let ids: Vec<usize> = (0..nm).map(|r| r / m_utts).collect();
    cross_entropy(tape, logits, &ids)
}
