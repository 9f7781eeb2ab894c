// PCM WAV reading and writing.
//
// Input must be mono at the configured sample rate; resampling and channel
// mixdown are out of scope, so mismatches are validation errors rather
// than silent conversions. Samples are peak-normalized on load.

use std::path::Path;

use crate::error::{Error, Result};

/// Read a mono PCM WAV file, normalize peak amplitude to 1.0.
pub fn load_wav(path: &Path, expected_sample_rate: u32) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::validation(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != expected_sample_rate {
        return Err(Error::validation(format!(
            "{}: sample rate {} does not match required {} (resampling is out of scope)",
            path.display(),
            spec.sample_rate,
            expected_sample_rate
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?,
        (fmt, bits) => {
            return Err(Error::validation(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::validation(format!("{}: empty audio", path.display())));
    }
    Ok(peak_normalize(samples))
}

/// Write mono PCM16 at the given rate. Samples are clamped to [-1, 1].
pub fn save_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(())
}

fn peak_normalize(mut samples: Vec<f64>) -> Vec<f64> {
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 1e-8 {
        let inv = 1.0 / peak;
        for s in &mut samples {
            *s *= inv;
        }
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_shape_and_preserves_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> =
            (0..2205).map(|i| 0.25 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22050.0).sin()).collect();
        save_wav(&path, &samples, 22_050).unwrap();
        let back = load_wav(&path, 22_050).unwrap();
        assert_eq!(back.len(), samples.len());
        // loaded audio is peak-normalized
        let peak = back.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        assert!((peak - 1.0).abs() < 1e-3, "peak {peak}");
    }

    #[test]
    fn wrong_rate_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        save_wav(&path, &[0.1, -0.1, 0.2], 16_000).unwrap();
        let err = load_wav(&path, 22_050).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
}
