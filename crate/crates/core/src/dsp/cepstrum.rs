// Mel-cepstra via orthonormal DCT-II of the log-mel spectrogram.
//
// Coefficient 0 carries frame energy; the distortion metric excludes it,
// but it is kept in the feature tensor so downstream code can decide.

use ndarray::Array2;

/// Orthonormal DCT-II matrix, [n_out, n_in]:
/// row k: s_k * cos(pi * k * (2n + 1) / (2 * n_in)),
/// s_0 = sqrt(1/n_in), s_k = sqrt(2/n_in) otherwise.
pub fn dct_ortho_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n_out, n_in));
    for k in 0..n_out {
        let s = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            m[[k, n]] = s
                * (std::f64::consts::PI * k as f64 * (2.0 * n as f64 + 1.0) / (2.0 * n_in as f64))
                    .cos();
        }
    }
    m
}

/// Mel-cepstra of a log-mel spectrogram: [frames, order + 1], coefficient
/// 0 first.
pub fn mel_cepstrum(log_mel: &Array2<f64>, order: usize) -> Array2<f64> {
    let n_in = log_mel.shape()[1];
    assert!(order + 1 <= n_in, "cepstral order {order} too high for {n_in} mel bands");
    let dct = dct_ortho_matrix(order + 1, n_in);
    log_mel.dot(&dct.t())
}
