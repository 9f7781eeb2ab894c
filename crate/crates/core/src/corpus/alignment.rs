// Duration alignments: per-phoneme frame counts, loaded from TSV.
//
// Files produced by a forced aligner and the STFT framing law rarely agree
// to the frame, so the final phoneme may be trimmed or padded by up to two
// frames to reconcile the sum with the actual mel length; a larger gap is
// an error. (Aligner TextGrid output is out of scope — convert to TSV
// first: one row per phoneme, symbol TAB frame count.)

use std::path::Path;

use crate::corpus::lexicon::PhonemeSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationAlignment {
    pub frames_per_phoneme: Vec<usize>,
}

impl DurationAlignment {
    /// Validate raw (symbol, frames) rows against the paired phoneme
    /// sequence and the actual mel frame count, applying the ±2-frame
    /// reconciliation on the last phoneme.
    pub fn from_rows(
        rows: &[(String, i64)],
        phonemes: &PhonemeSequence,
        mel_frames: usize,
    ) -> Result<DurationAlignment> {
        if rows.len() != phonemes.symbols.len() {
            return Err(Error::validation(format!(
                "alignment has {} rows but the transcript has {} phonemes",
                rows.len(),
                phonemes.symbols.len()
            )));
        }
        let mut frames = Vec::with_capacity(rows.len());
        for (i, (symbol, dur)) in rows.iter().enumerate() {
            if symbol != &phonemes.symbols[i] {
                return Err(Error::validation(format!(
                    "alignment row {i} is '{symbol}' but the transcript has '{}'",
                    phonemes.symbols[i]
                )));
            }
            if *dur < 1 {
                return Err(Error::validation(format!(
                    "alignment row {i} ('{symbol}') has non-positive duration {dur}"
                )));
            }
            frames.push(*dur as usize);
        }
        let total: usize = frames.iter().sum();
        let gap = total as i64 - mel_frames as i64;
        if gap != 0 {
            if gap.abs() > 2 {
                return Err(Error::validation(format!(
                    "alignment sums to {total} frames but the mel has {mel_frames} \
                     (gap {gap} exceeds the 2-frame reconciliation limit)"
                )));
            }
            let last = frames.last_mut().expect("length checked non-zero above");
            let adjusted = *last as i64 - gap;
            if adjusted < 1 {
                return Err(Error::validation(format!(
                    "reconciling a {gap}-frame gap would drop the last phoneme below 1 frame"
                )));
            }
            *last = adjusted as usize;
        }
        Ok(DurationAlignment { frames_per_phoneme: frames })
    }

    pub fn total_frames(&self) -> usize {
        self.frames_per_phoneme.iter().sum()
    }
}

/// Read raw alignment rows: one `symbol<TAB>frames` line per phoneme.
pub fn load_alignment(path: &Path) -> Result<Vec<(String, i64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let symbol = parts.next().unwrap_or("").trim();
        let dur = parts
            .next()
            .and_then(|d| d.trim().parse::<i64>().ok())
            .ok_or_else(|| {
                Error::validation(format!(
                    "{}:{}: expected 'symbol<TAB>frames', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
        rows.push((symbol.to_string(), dur));
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: no alignment rows", path.display())));
    }
    Ok(rows)
}

pub fn save_alignment(path: &Path, rows: &[(String, usize)]) -> Result<()> {
    let body: String = rows.iter().map(|(s, d)| format!("{s}\t{d}\n")).collect();
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexicon::tokenize_pinyin;

    fn rows(pairs: &[(&str, i64)]) -> Vec<(String, i64)> {
        pairs.iter().map(|(s, d)| (s.to_string(), *d)).collect()
    }

    #[test]
    fn exact_sum_passes_through() {
        let seq = tokenize_pinyin("ni3").unwrap();
        let a = DurationAlignment::from_rows(&rows(&[("n", 5), ("i3", 12)]), &seq, 17).unwrap();
        assert_eq!(a.frames_per_phoneme, vec![5, 12]);
    }

    #[test]
    fn two_frame_gap_is_reconciled_on_the_last_phoneme() {
        let seq = tokenize_pinyin("ni3").unwrap();
        // sum 19 vs 17 mel frames: exactly at the limit, last trimmed 12 -> 10
        let a = DurationAlignment::from_rows(&rows(&[("n", 7), ("i3", 12)]), &seq, 17).unwrap();
        assert_eq!(a.frames_per_phoneme, vec![7, 10]);
        // and the padding direction: sum 15 vs 17, last padded 10 -> 12
        let b = DurationAlignment::from_rows(&rows(&[("n", 5), ("i3", 10)]), &seq, 17).unwrap();
        assert_eq!(b.frames_per_phoneme, vec![5, 12]);
    }

    #[test]
    fn three_frame_gap_is_an_error() {
        let seq = tokenize_pinyin("ni3").unwrap();
        let err =
            DurationAlignment::from_rows(&rows(&[("n", 5), ("i3", 15)]), &seq, 17).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("gap 3"), "error was: {err}");
    }

    #[test]
    fn zero_duration_and_symbol_mismatch_are_errors() {
        let seq = tokenize_pinyin("ni3").unwrap();
        assert!(DurationAlignment::from_rows(&rows(&[("n", 0), ("i3", 17)]), &seq, 17)
            .unwrap_err()
            .is_validation());
        assert!(DurationAlignment::from_rows(&rows(&[("m", 5), ("i3", 12)]), &seq, 17)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn tsv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tsv");
        save_alignment(&path, &[("n".to_string(), 5), ("i3".to_string(), 12)]).unwrap();
        let rows = load_alignment(&path).unwrap();
        assert_eq!(rows, vec![("n".to_string(), 5), ("i3".to_string(), 12)]);
    }
}
