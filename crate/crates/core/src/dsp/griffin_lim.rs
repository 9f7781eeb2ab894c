// Waveform recovery from a log-mel spectrogram.
//
// Two stages: the mel spectrogram is lifted back to a full linear magnitude
// spectrogram with the filterbank's least-squares pseudo-inverse, then the
// missing phase is estimated by alternating projections between the
// time-domain and magnitude constraints (Griffin-Lim).

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::mel::mel_filterbank;
use super::stft::{istft, stft};
use super::DspConfig;
use crate::nn::derive_rng;
use rand::Rng;

pub struct GriffinLimResult {
    pub samples: Vec<f64>,
    /// Relative L2 distance between the target magnitude spectrogram and
    /// the magnitude of the returned waveform's transform.
    pub spectral_error: f64,
}

/// Cholesky factor L (lower triangular) of a symmetric positive-definite
/// matrix.
fn cholesky(g: &Array2<f64>) -> Array2<f64> {
    let n = g.shape()[0];
    assert_eq!(g.shape()[1], n);
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = g[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite at row {i} (pivot {s})");
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    l
}

/// Solve G x = b for each column b of `rhs`, where `l` is the Cholesky
/// factor of G. Returns the matrix of solutions with the shape of `rhs`.
fn cholesky_solve(l: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let n = l.shape()[0];
    assert_eq!(rhs.shape()[0], n);
    let cols = rhs.shape()[1];
    let mut x = rhs.clone();
    // forward: L y = b
    for c in 0..cols {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        // back: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    x
}

/// Least-squares lift of a log-mel spectrogram [T, n_mels] back to a linear
/// magnitude spectrogram [T, n_fft/2 + 1], clamped at zero.
pub fn mel_to_linear(log_mel: &Array2<f64>, cfg: &DspConfig) -> Array2<f64> {
    let fb = mel_filterbank(cfg);
    let mel_amp = log_mel.mapv(f64::exp);
    // Each frame m solves  g . fb^T ~= m  in least squares:
    // g = m . (fb fb^T)^-1 fb, with the inverse applied via Cholesky.
    let gram = fb.dot(&fb.t());
    let l = cholesky(&gram);
    let lift = cholesky_solve(&l, &fb); // (fb fb^T)^-1 fb, [n_mels, n_bins]
    mel_amp.dot(&lift).mapv(|v| v.max(0.0))
}

/// Phase reconstruction by alternating projections, starting from seeded
/// random phase. More iterations give a waveform whose magnitude
/// spectrogram is closer to the target.
pub fn griffin_lim(log_mel: &Array2<f64>, cfg: &DspConfig, iters: usize, seed: u64) -> GriffinLimResult {
    let target = mel_to_linear(log_mel, cfg);
    let (frames, n_bins) = (target.shape()[0], target.shape()[1]);
    assert_eq!(n_bins, cfg.n_fft / 2 + 1);
    assert!(frames > 1, "need at least two frames to synthesize audio");

    let mut rng = derive_rng(seed, "griffin-lim/phase");
    let mut spec = Array2::<Complex64>::zeros((frames, n_bins));
    for f in 0..frames {
        for b in 0..n_bins {
            let phi: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            spec[[f, b]] = Complex64::from_polar(target[[f, b]], phi);
        }
    }

    let mut samples = istft(&spec, cfg.n_fft, cfg.hop);
    for _ in 0..iters {
        let est = stft(&samples, cfg.n_fft, cfg.hop).spec;
        assert_eq!(est.shape()[0], frames);
        for f in 0..frames {
            for b in 0..n_bins {
                let c = est[[f, b]];
                let mag = c.norm();
                spec[[f, b]] = if mag > 0.0 {
                    c * (target[[f, b]] / mag)
                } else {
                    Complex64::new(target[[f, b]], 0.0)
                };
            }
        }
        samples = istft(&spec, cfg.n_fft, cfg.hop);
    }

    let est = stft(&samples, cfg.n_fft, cfg.hop).spec;
    let mut num = 0.0;
    let mut den = 0.0;
    for f in 0..frames {
        for b in 0..n_bins {
            let d = est[[f, b]].norm() - target[[f, b]];
            num += d * d;
            den += target[[f, b]] * target[[f, b]];
        }
    }
    let spectral_error = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    GriffinLimResult { samples, spectral_error }
}
