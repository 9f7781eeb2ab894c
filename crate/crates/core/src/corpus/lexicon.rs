// Pinyin tokenization: syllables split into initial / final(+tone) units
// against a bundled table.
//
// The table uses `v` for ü. Orthographic y/w spellings are normalized to
// their underlying finals ("yi" -> i, "wen" -> un, "yuan" -> van), and the
// u-after-j/q/x convention is resolved to v ("ju" -> j v). Tones ride on
// the final as a trailing digit 1-5; a syllable without a digit is read as
// neutral tone 5.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Longest first, so zh/ch/sh win over z/c/s.
const INITIALS: [&str; 21] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s",
];

const FINALS: [&str; 36] = [
    "a", "o", "e", "i", "u", "v", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er",
    "ia", "ie", "iao", "iu", "ian", "in", "iang", "ing", "iong", "ua", "uo", "uai", "ui", "uan",
    "un", "uang", "ueng", "ve", "van", "vn",
];

/// Full spellings that contract in standard orthography.
const FINAL_ALIASES: [(&str, &str); 4] = [("iou", "iu"), ("uei", "ui"), ("uen", "un"), ("ue", "ve")];

#[derive(Debug, Clone)]
pub struct PhonemeSequence {
    pub tokens: Vec<usize>,
    pub symbols: Vec<String>,
}

pub struct Lexicon {
    symbol_to_id: BTreeMap<String, usize>,
    id_to_symbol: Vec<String>,
}

impl Lexicon {
    fn build() -> Lexicon {
        let mut symbols: Vec<String> = INITIALS.iter().map(|s| s.to_string()).collect();
        for f in FINALS {
            for tone in 1..=5u8 {
                symbols.push(format!("{f}{tone}"));
            }
        }
        symbols.sort();
        let mut id_to_symbol = vec!["<pad>".to_string()];
        id_to_symbol.extend(symbols);
        let symbol_to_id =
            id_to_symbol.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Lexicon { symbol_to_id, id_to_symbol }
    }

    pub fn bundled() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(Lexicon::build)
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_symbol.len()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbol_to_id.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.id_to_symbol[id]
    }

    pub fn initials(&self) -> &'static [&'static str] {
        &INITIALS
    }

    pub fn finals(&self) -> &'static [&'static str] {
        &FINALS
    }
}

/// Strip a trailing tone digit; no digit means neutral tone.
fn split_tone(syllable: &str) -> Result<(&str, u8)> {
    match syllable.as_bytes().last() {
        Some(b @ b'1'..=b'5') => Ok((&syllable[..syllable.len() - 1], b - b'0')),
        Some(b'0'..=b'9') => {
            Err(Error::validation(format!("unknown pinyin syllable '{syllable}': bad tone digit")))
        }
        _ => Ok((syllable, 5)),
    }
}

/// Rewrite y/w spellings to bare finals: yi->i, ya->ia, yu->v, wu->u,
/// wa->ua, and so on.
fn normalize_zero_initial(body: &str) -> String {
    if let Some(rest) = body.strip_prefix("yu") {
        format!("v{rest}")
    } else if let Some(rest) = body.strip_prefix("yi") {
        format!("i{rest}")
    } else if let Some(rest) = body.strip_prefix('y') {
        format!("i{rest}")
    } else if let Some(rest) = body.strip_prefix("wu") {
        format!("u{rest}")
    } else if let Some(rest) = body.strip_prefix('w') {
        format!("u{rest}")
    } else {
        body.to_string()
    }
}

fn canonical_final(raw: &str) -> String {
    for (long, short) in FINAL_ALIASES {
        if raw == long {
            return short.to_string();
        }
    }
    raw.to_string()
}

fn split_syllable(syllable: &str) -> Result<(Option<&'static str>, String, u8)> {
    let (body, tone) = split_tone(syllable)?;
    if body.is_empty() {
        return Err(Error::validation(format!("unknown pinyin syllable '{syllable}': no letters")));
    }
    let initial = INITIALS.iter().find(|i| body.starts_with(**i)).copied();
    let final_raw = match initial {
        Some(i) => {
            let mut f = body[i.len()..].to_string();
            // ju/qu/xu spell jv/qv/xv
            if matches!(i, "j" | "q" | "x") && f.starts_with('u') {
                f.replace_range(0..1, "v");
            }
            f
        }
        None => normalize_zero_initial(body),
    };
    let final_sym = canonical_final(&final_raw);
    if !FINALS.contains(&final_sym.as_str()) {
        return Err(Error::validation(format!(
            "unknown pinyin syllable '{syllable}': no final '{final_raw}' in the lexicon"
        )));
    }
    Ok((initial, final_sym, tone))
}

/// Split whitespace-separated pinyin into initial/final(+tone) units and
/// map them to lexicon ids.
pub fn tokenize_pinyin(text: &str) -> Result<PhonemeSequence> {
    let lex = Lexicon::bundled();
    let mut symbols = Vec::new();
    for syllable in text.split_whitespace() {
        let lower = syllable.to_lowercase();
        // a bare initial is already a unit (alignment files carry the
        // split symbols), so re-tokenizing emitted symbols is identity
        if INITIALS.contains(&lower.as_str()) {
            symbols.push(lower);
            continue;
        }
        let (initial, final_sym, tone) = split_syllable(&lower)?;
        if let Some(i) = initial {
            symbols.push(i.to_string());
        }
        symbols.push(format!("{final_sym}{tone}"));
    }
    if symbols.is_empty() {
        return Err(Error::validation("empty pinyin input"));
    }
    let tokens = symbols
        .iter()
        .map(|s| lex.id(s).expect("constructed symbols always resolve"))
        .collect();
    Ok(PhonemeSequence { tokens, symbols })
}
