// Short-time Fourier analysis/synthesis.
//
// Centered framing with reflection padding of n_fft/2 on both ends, so a
// signal of L samples yields exactly 1 + floor(L / hop) frames. The
// inverse uses weighted overlap-add with the same window, normalized by
// the summed squared window (75% overlap at the default hop satisfies the
// reconstruction constraint).

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Frame-count law for centered framing.
pub fn frames_for_samples(samples: usize, hop: usize) -> usize {
    1 + samples / hop
}

/// Complex STFT, [frames, n_fft/2 + 1].
pub struct Stft {
    pub spec: Array2<Complex64>,
    pub n_fft: usize,
    pub hop: usize,
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > 0, "cannot pad empty signal");
    let mut out = Vec::with_capacity(n + 2 * pad);
    // mirror without repeating the edge sample; for very short signals the
    // reflection walks back and forth
    let mirror = |i: isize| -> f64 {
        if n == 1 {
            return x[0];
        }
        let period = 2 * (n as isize - 1);
        let mut j = i.rem_euclid(period);
        if j >= n as isize {
            j = period - j;
        }
        x[j as usize]
    };
    for i in -(pad as isize)..(n as isize + pad as isize) {
        out.push(mirror(i));
    }
    out
}

pub fn stft(samples: &[f64], n_fft: usize, hop: usize) -> Stft {
    let padded = reflect_pad(samples, n_fft / 2);
    let n_frames = frames_for_samples(samples.len(), hop);
    let window = hann_window(n_fft);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let n_bins = n_fft / 2 + 1;
    let mut spec = Array2::<Complex64>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..n_fft {
            buf[i] = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (b, value) in buf.iter().take(n_bins).enumerate() {
            spec[[t, b]] = *value;
        }
    }
    Stft { spec, n_fft, hop }
}

/// Magnitudes of the one-sided STFT, [frames, n_fft/2 + 1].
pub fn stft_magnitude(samples: &[f64], n_fft: usize, hop: usize) -> Array2<f64> {
    stft(samples, n_fft, hop).spec.mapv(|c| c.norm())
}

/// Weighted overlap-add inverse of a one-sided STFT. Returns
/// (frames - 1) * hop samples, i.e. the centered-analysis region with the
/// reflection padding stripped.
pub fn istft(spec: &Array2<Complex64>, n_fft: usize, hop: usize) -> Vec<f64> {
    let n_frames = spec.shape()[0];
    let n_bins = spec.shape()[1];
    assert_eq!(n_bins, n_fft / 2 + 1);
    let window = hann_window(n_fft);
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);
    let padded_len = (n_frames - 1) * hop + n_fft;
    let mut acc = vec![0.0f64; padded_len];
    let mut wsum = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        // rebuild the full spectrum from the one-sided half
        for b in 0..n_bins {
            buf[b] = spec[[t, b]];
        }
        for b in n_bins..n_fft {
            buf[b] = spec[[t, n_fft - b]].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n_fft {
            let x = buf[i].re / n_fft as f64; // rustfft leaves the inverse unscaled
            acc[start + i] += x * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let pad = n_fft / 2;
    let out_len = padded_len - 2 * pad;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let w = wsum[pad + i];
        out.push(if w > 1e-9 { acc[pad + i] / w } else { 0.0 });
    }
    out
}
