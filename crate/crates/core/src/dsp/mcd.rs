// Mel-cepstral distortion with dynamic-time-warp alignment.
//
// Converted and reference utterances generally differ in length, so frames
// are aligned by a full DTW over the cepstra (energy coefficient excluded)
// before averaging the per-pair distortion along the path.

use ndarray::Array2;

/// Per-frame scale: 10 / ln 10 = the dB conversion constant for distortion
/// between log-amplitude cepstra.
pub const FRAME_MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

fn frame_dist(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize, lo: usize) -> f64 {
    let hi = a.shape()[1];
    let mut acc = 0.0;
    for k in lo..hi {
        let d = a[[i, k]] - b[[j, k]];
        acc += d * d;
    }
    FRAME_MCD_SCALE * (2.0 * acc).sqrt()
}

/// Minimal-cost monotone alignment between two cepstral sequences, using
/// steps (1,0), (0,1), (1,1). Distances skip column 0 (the energy
/// coefficient). Returns the path as (row in `a`, row in `b`) pairs from
/// (0,0) to (Ta-1, Tb-1).
pub fn dtw_path(a: &Array2<f64>, b: &Array2<f64>, skip_c0: bool) -> Vec<(usize, usize)> {
    let (ta, tb) = (a.shape()[0], b.shape()[0]);
    assert!(ta > 0 && tb > 0, "dtw over empty sequence");
    assert_eq!(a.shape()[1], b.shape()[1], "dtw feature widths differ");
    let lo = if skip_c0 { 1 } else { 0 };

    let mut cost = Array2::<f64>::from_elem((ta, tb), f64::INFINITY);
    // step that produced each cell: 0 diag, 1 from above (i-1), 2 from left (j-1)
    let mut from = Array2::<u8>::zeros((ta, tb));
    cost[[0, 0]] = frame_dist(a, b, 0, 0, lo);
    for i in 0..ta {
        for j in 0..tb {
            if i == 0 && j == 0 {
                continue;
            }
            let d = frame_dist(a, b, i, j, lo);
            let mut best = f64::INFINITY;
            let mut step = 0u8;
            if i > 0 && j > 0 && cost[[i - 1, j - 1]] < best {
                best = cost[[i - 1, j - 1]];
                step = 0;
            }
            if i > 0 && cost[[i - 1, j]] < best {
                best = cost[[i - 1, j]];
                step = 1;
            }
            if j > 0 && cost[[i, j - 1]] < best {
                best = cost[[i, j - 1]];
                step = 2;
            }
            cost[[i, j]] = best + d;
            from[[i, j]] = step;
        }
    }

    let mut path = Vec::with_capacity(ta.max(tb));
    let (mut i, mut j) = (ta - 1, tb - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match from[[i, j]] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    path
}

/// Mel-cepstral distortion in dB between two cepstral sequences
/// [T, order + 1]: DTW-align, then average the per-frame distortion
/// (coefficients 1..=order; the energy coefficient is excluded).
pub fn mcd(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let path = dtw_path(a, b, true);
    let total: f64 = path.iter().map(|&(i, j)| frame_dist(a, b, i, j, 1)).sum();
    total / path.len() as f64
}
