// Synthetic toy corpus: a desk-scale stand-in for a multi-speaker Mandarin
// corpus with exact alignments by construction.
//
// Every speaker is a fixed source/filter template (pitch band, formant
// scale, spectral tilt, breathiness); every phoneme is a fixed resonance
// template; tones bend the pitch contour of finals. All speakers render
// the same pool of text templates with identical durations, so the corpus
// contains parallel utterances for conversion scoring, and speakers are
// separable by construction for the style-encoder and disentanglement
// tests. Everything derives from (seed, tag) streams, so a seed fixes the
// corpus byte-for-byte.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::corpus::alignment::save_alignment;
use crate::corpus::lexicon::{tokenize_pinyin, Lexicon, PhonemeSequence};
use crate::corpus::manifest::{CorpusManifest, ManifestRecord, Split};
use crate::dsp::{save_wav, DspConfig};
use crate::error::{Error, Result};
use crate::nn::derive_rng;

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    /// Syllables per utterance, drawn uniformly from this range. Each
    /// syllable contributes an initial (3-6 frames) and a final (6-18
    /// frames), so the shortest possible utterance is min_syllables * 9
    /// frames.
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub dsp: DspConfig,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            num_speakers: 4,
            utts_per_speaker: 30,
            seed: 7,
            min_syllables: 2,
            max_syllables: 4,
            dsp: DspConfig::default(),
        }
    }
}

struct SpeakerTemplate {
    f0: f64,
    formant_scale: f64,
    tilt_exp: f64,
    breathiness: f64,
}

fn speaker_template(seed: u64, k: usize, num_speakers: usize) -> SpeakerTemplate {
    let mut rng = derive_rng(seed, &format!("speaker/{k}"));
    // disjoint pitch bands across speakers
    let band = (k as f64 + 0.2 + 0.6 * rng.random::<f64>()) / num_speakers as f64;
    SpeakerTemplate {
        f0: 100.0 + 220.0 * band,
        formant_scale: 0.85 + 0.35 * rng.random::<f64>(),
        tilt_exp: 0.6 + 0.9 * rng.random::<f64>(),
        breathiness: 0.01 + 0.04 * rng.random::<f64>(),
    }
}

struct PhonemeTemplate {
    voiced_amp: f64,
    noise_amp: f64,
    noise_pole: f64,
    /// (center Hz, bandwidth Hz, weight)
    formants: [(f64, f64, f64); 3],
    intensity: f64,
}

fn phoneme_template(seed: u64, symbol: &str) -> PhonemeTemplate {
    let mut rng = derive_rng(seed, &format!("phon/{symbol}"));
    let is_initial = !symbol.ends_with(|c: char| c.is_ascii_digit());
    let f1 = 280.0 + 620.0 * rng.random::<f64>();
    let f2 = f1 + 250.0 + 1500.0 * rng.random::<f64>();
    let f3 = 2600.0 + 800.0 * rng.random::<f64>();
    let bw = |rng: &mut rand_chacha::ChaCha20Rng| 90.0 + 80.0 * rng.random::<f64>();
    PhonemeTemplate {
        voiced_amp: if is_initial { 0.15 } else { 1.0 },
        noise_amp: if is_initial { 0.5 + 0.3 * rng.random::<f64>() } else { 0.0 },
        noise_pole: 0.1 + 0.8 * rng.random::<f64>(),
        formants: [(f1, bw(&mut rng), 1.0), (f2, bw(&mut rng), 0.7), (f3, bw(&mut rng), 0.3)],
        intensity: 0.7 + 0.3 * rng.random::<f64>(),
    }
}

fn tone_of(symbol: &str) -> u8 {
    symbol.as_bytes().last().filter(|b| b.is_ascii_digit()).map(|b| b - b'0').unwrap_or(0)
}

/// Pitch multiplier over the span of a final, s in [0, 1]: level, rising,
/// dipping, falling, neutral.
fn tone_multiplier(tone: u8, s: f64) -> f64 {
    match tone {
        1 => 1.15,
        2 => 0.95 + 0.20 * s,
        3 => 0.90 - 0.10 * (1.0 - (2.0 * s - 1.0).powi(2)),
        4 => 1.20 - 0.30 * s,
        _ => 1.0,
    }
}

/// Harmonic amplitudes for one phoneme as voiced by one speaker: the
/// phoneme's resonances (shifted by the speaker's formant scale) sampled
/// at the harmonic frequencies, shaped by the speaker's spectral tilt.
fn harmonic_amps(phon: &PhonemeTemplate, spk: &SpeakerTemplate) -> Vec<f64> {
    let h_max = ((7400.0 / (spk.f0 * 1.25)) as usize).clamp(3, 24);
    let mut amps = Vec::with_capacity(h_max);
    for h in 1..=h_max {
        let f = h as f64 * spk.f0;
        let mut resonance = 0.05;
        for (center, bw, w) in phon.formants {
            let z = (f - center * spk.formant_scale) / bw;
            resonance += w * (-0.5 * z * z).exp();
        }
        amps.push(resonance * (h as f64).powf(-spk.tilt_exp));
    }
    let total: f64 = amps.iter().sum();
    for a in &mut amps {
        *a /= total;
    }
    amps
}

struct TextTemplate {
    pinyin: String,
    phonemes: PhonemeSequence,
    durations: Vec<usize>,
}

/// Draw one utterance's text: random initial+final syllables that survive
/// re-tokenization (some letter combinations are not spellable), with
/// per-phoneme frame counts.
fn text_template(seed: u64, t: usize, cfg: &ToyCorpusConfig) -> TextTemplate {
    let lex = Lexicon::bundled();
    let mut rng = derive_rng(seed, &format!("text/{t}"));
    let n_syllables = rng.random_range(cfg.min_syllables..=cfg.max_syllables);
    let mut syllables = Vec::with_capacity(n_syllables);
    while syllables.len() < n_syllables {
        let initial = lex.initials()[rng.random_range(0..lex.initials().len())];
        let fin = lex.finals()[rng.random_range(0..lex.finals().len())];
        let tone = rng.random_range(1..=4u8);
        let composed = format!("{initial}{fin}{tone}");
        if tokenize_pinyin(&composed).is_ok() {
            syllables.push(composed);
        }
    }
    let pinyin = syllables.join(" ");
    let phonemes = tokenize_pinyin(&pinyin).expect("every syllable was vetted");
    let mut dur_rng = derive_rng(seed, &format!("dur/{t}"));
    let durations = phonemes
        .symbols
        .iter()
        .map(|s| {
            if tone_of(s) == 0 {
                dur_rng.random_range(3..=6)
            } else {
                dur_rng.random_range(6..=18)
            }
        })
        .collect();
    TextTemplate { pinyin, phonemes, durations }
}

/// Render the phoneme string as one continuous waveform. The sample count
/// is (total_frames - 1) * hop, so the mel analysis of the result has
/// exactly sum(durations) frames.
fn render_utterance(
    template: &TextTemplate,
    spk: &SpeakerTemplate,
    phon_bank: &BTreeMap<String, PhonemeTemplate>,
    seed: u64,
    utt_tag: &str,
    dsp: &DspConfig,
) -> Vec<f64> {
    let total_frames: usize = template.durations.iter().sum();
    let total_samples = (total_frames - 1) * dsp.hop;
    let sr = dsp.sample_rate as f64;
    let mut rng = derive_rng(seed, &format!("render/{utt_tag}"));
    let mut out = Vec::with_capacity(total_samples);
    let mut phase = 0.0f64;
    let mut lp = 0.0f64;

    'phonemes: for (sym, &dur) in template.phonemes.symbols.iter().zip(&template.durations) {
        let phon = &phon_bank[sym];
        let amps = harmonic_amps(phon, spk);
        let tone = tone_of(sym);
        let n = dur * dsp.hop;
        let ramp = (n / 4).min(256) as f64;
        for i in 0..n {
            if out.len() >= total_samples {
                break 'phonemes;
            }
            let s = i as f64 / n as f64;
            let f0 = spk.f0 * tone_multiplier(tone, s);
            phase += 2.0 * PI * f0 / sr;
            let voiced: f64 =
                amps.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum();
            lp += phon.noise_pole * (rng.random_range(-1.0..1.0) - lp);
            let noise = lp * (phon.noise_amp + spk.breathiness);
            let env =
                (i as f64 / ramp).min((n - 1 - i) as f64 / ramp).min(1.0).max(0.0);
            out.push((voiced * phon.voiced_amp + noise) * phon.intensity * env);
        }
    }
    debug_assert_eq!(out.len(), total_samples);

    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        for s in &mut out {
            *s *= 0.7 / peak;
        }
    }
    out
}

fn split_for_template(t: usize, total: usize) -> Split {
    let n_train = ((total * 8) / 10).max(1);
    let n_val = (total - n_train).div_ceil(2);
    if t < n_train {
        Split::Train
    } else if t < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Generate WAVs, alignment TSVs, and a manifest under `out_dir`. Every
/// speaker renders every text template; splits are assigned per template
/// so each split holds parallel utterances across all speakers.
pub fn make_synthetic_corpus(cfg: &ToyCorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    if cfg.num_speakers < 2 {
        return Err(Error::validation("a toy corpus needs at least 2 speakers"));
    }
    if cfg.utts_per_speaker < 1 {
        return Err(Error::validation("utts_per_speaker must be at least 1"));
    }
    if cfg.min_syllables < 1 || cfg.min_syllables > cfg.max_syllables {
        return Err(Error::validation(format!(
            "bad syllable range {}..={}",
            cfg.min_syllables, cfg.max_syllables
        )));
    }
    let wav_dir = out_dir.join("wav");
    let align_dir = out_dir.join("align");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    std::fs::create_dir_all(&align_dir).map_err(|e| Error::io(&align_dir, e))?;

    let templates: Vec<TextTemplate> =
        (0..cfg.utts_per_speaker).map(|t| text_template(cfg.seed, t, cfg)).collect();
    let speakers: Vec<SpeakerTemplate> =
        (0..cfg.num_speakers).map(|k| speaker_template(cfg.seed, k, cfg.num_speakers)).collect();

    let mut phon_bank = BTreeMap::new();
    for tpl in &templates {
        for sym in &tpl.phonemes.symbols {
            phon_bank
                .entry(sym.clone())
                .or_insert_with(|| phoneme_template(cfg.seed, sym));
        }
    }

    let mut records = Vec::new();
    for (k, spk) in speakers.iter().enumerate() {
        for (t, tpl) in templates.iter().enumerate() {
            let utt_id = format!("spk{k:02}_utt{t:03}");
            let samples = render_utterance(tpl, spk, &phon_bank, cfg.seed, &utt_id, &cfg.dsp);
            let wav_rel = format!("wav/{utt_id}.wav");
            let align_rel = format!("align/{utt_id}.tsv");
            save_wav(&out_dir.join(&wav_rel), &samples, cfg.dsp.sample_rate)?;
            let rows: Vec<(String, usize)> = tpl
                .phonemes
                .symbols
                .iter()
                .cloned()
                .zip(tpl.durations.iter().copied())
                .collect();
            save_alignment(&out_dir.join(&align_rel), &rows)?;
            records.push(ManifestRecord {
                utterance_id: utt_id,
                speaker: format!("spk{k:02}"),
                wav: wav_rel,
                pinyin: tpl.pinyin.clone(),
                alignment: align_rel,
                split: split_for_template(t, cfg.utts_per_speaker),
            });
        }
    }

    let manifest = CorpusManifest::from_records(records, out_dir)?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
