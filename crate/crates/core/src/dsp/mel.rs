// Mel projection and the on-disk mel format.
//
// HTK mel scale (2595 * log10(1 + f/700)) with unit-peak triangular
// filters: a pure tone therefore lands most of its energy in the filter
// whose center frequency is nearest the tone, which the tests pin down.
// Log compression floors magnitudes at a configurable epsilon before the
// log, so silence maps to log(floor) rather than -inf.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::stft::stft_magnitude;
use super::DspConfig;
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the n_mels triangular filters spanning
/// [fmin, fmax]. This is the direct evaluation the bin-location test uses
/// as its oracle.
pub fn mel_center_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Unit-peak triangular filterbank, [n_mels, n_fft/2 + 1].
pub fn mel_filterbank(cfg: &DspConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::<f64>::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = if f <= l || f >= r {
                0.0
            } else if f <= c {
                (f - l) / (c - l)
            } else {
                (r - f) / (r - c)
            };
            fb[[m, b]] = w;
        }
    }
    fb
}

/// Log-mel spectrogram of a waveform: [frames, n_mels] with
/// frames = 1 + floor(len / hop).
pub fn mel_spectrogram(samples: &[f64], cfg: &DspConfig) -> Array2<f64> {
    let mag = stft_magnitude(samples, cfg.n_fft, cfg.hop);
    let fb = mel_filterbank(cfg);
    let mel = mag.dot(&fb.t());
    mel.mapv(|e| e.max(cfg.log_floor).ln())
}

/// Sidecar header describing a dumped mel tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelSidecar {
    pub sample_rate: u32,
    pub hop: usize,
}

/// Binary mel dump: two little-endian u32 (frames, bins) then row-major
/// f32 data, plus a text sidecar `<path>.meta` naming hop and sample rate.
pub fn save_mel(path: &Path, mel: &Array2<f64>, cfg: &DspConfig) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(8 + mel.len() * 4);
    buf.extend_from_slice(&(mel.shape()[0] as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.shape()[1] as u32).to_le_bytes());
    for v in mel.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    let meta = format!("sample_rate={}\nhop={}\n", cfg.sample_rate, cfg.hop);
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// Load a binary mel dump and its sidecar.
pub fn load_mel(path: &Path) -> Result<(Array2<f64>, MelSidecar)> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 8];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let frames = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut data = vec![0u8; frames * bins * 4];
    f.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mel = Array2::from_shape_vec((frames, bins), values)
        .map_err(|e| Error::validation(format!("{}: bad mel shape: {e}", path.display())))?;

    let meta_path = sidecar_path(path);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut sample_rate = None;
    let mut hop = None;
    for line in meta.lines() {
        match line.split_once('=') {
            Some(("sample_rate", v)) => sample_rate = v.trim().parse::<u32>().ok(),
            Some(("hop", v)) => hop = v.trim().parse::<usize>().ok(),
            _ => {}
        }
    }
    let sidecar = MelSidecar {
        sample_rate: sample_rate
            .ok_or_else(|| Error::validation(format!("{}: missing sample_rate", meta_path.display())))?,
        hop: hop.ok_or_else(|| Error::validation(format!("{}: missing hop", meta_path.display())))?,
    };
    Ok((mel, sidecar))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, sr: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    // Oracle: evaluate the center-frequency formula directly and find the
    // filter nearest 1 kHz; the filterbank must put the tone's peak there.
    #[test]
    fn pure_tone_energy_peaks_in_nearest_center_bin() {
        let cfg = DspConfig::default();
        let centers = mel_center_frequencies(cfg.n_mels, cfg.fmin, cfg.fmax);
        let expected_bin = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0).abs().partial_cmp(&(b.1 - 1000.0).abs()).unwrap()
            })
            .unwrap()
            .0;
        let x = sine(1000.0, 22_050, cfg.sample_rate as f64);
        let mel = mel_spectrogram(&x, &cfg);
        // mean energy per bin across frames
        let mean = mel.sum_axis(ndarray::Axis(0));
        let max_bin = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_bin, expected_bin, "centers near 1kHz: {:?}", &centers[max_bin.min(expected_bin).saturating_sub(1)..(max_bin.max(expected_bin) + 2).min(centers.len())]);
    }

    #[test]
    fn frames_match_the_law_and_bins_match_config() {
        let cfg = DspConfig::default();
        let x = sine(440.0, 10_000, cfg.sample_rate as f64);
        let mel = mel_spectrogram(&x, &cfg);
        assert_eq!(mel.shape(), [1 + 10_000 / 256, 80]);
    }

    #[test]
    fn log_floor_applies_to_silence() {
        let cfg = DspConfig::default();
        let x = vec![0.0; 4096];
        let mel = mel_spectrogram(&x, &cfg);
        let expect = cfg.log_floor.ln();
        assert!(mel.iter().all(|&v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn mel_dump_roundtrips_bit_exactly_at_f32() {
        let cfg = DspConfig::default();
        let x = sine(523.25, 5000, cfg.sample_rate as f64);
        let mel = mel_spectrogram(&x, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.mel");
        save_mel(&path, &mel, &cfg).unwrap();
        let (back, sidecar) = load_mel(&path).unwrap();
        assert_eq!(back.shape(), mel.shape());
        assert_eq!(sidecar, MelSidecar { sample_rate: 22_050, hop: 256 });
        // the dump quantizes to f32; the roundtrip must be exact at f32
        for (a, b) in mel.iter().zip(back.iter()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
    }

    #[test]
    fn filterbank_rows_are_nonempty_and_bounded() {
        let cfg = DspConfig::default();
        let fb = mel_filterbank(&cfg);
        for (i, row) in fb.rows().into_iter().enumerate() {
            let mx = row.iter().cloned().fold(0.0f64, f64::max);
            assert!(mx > 0.0, "filter {i} is empty");
            assert!(mx <= 1.0 + 1e-12, "filter {i} exceeds unit peak");
        }
    }
}
