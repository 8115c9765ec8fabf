//! Transcript normalisation and per-dialogue concatenation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::timeline::ClipId;

pub const BLANK: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate vocabulary symbol {0:?}")]
    Duplicate(String),
    #[error("vocabulary has no word delimiter (\"|\" or \" \")")]
    NoWordDelimiter,
}

/// Output symbol set of the acoustic model. Index 0 is the CTC blank.
///
/// Single-character symbols are the alphabet transcripts are mapped onto.
/// The word delimiter (`|`, or a literal space) doubles as the utterance
/// start and end marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    word_delimiter: u32,
    by_char: BTreeMap<char, u32>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self, VocabError> {
        if symbols.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut seen = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if seen.insert(s.as_str(), i).is_some() {
                return Err(VocabError::Duplicate(s.clone()));
            }
        }
        let word_delimiter = symbols
            .iter()
            .skip(1)
            .position(|s| s == "|" || s == " ")
            .map(|p| p as u32 + 1)
            .ok_or(VocabError::NoWordDelimiter)?;
        let by_char = symbols
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(i, _)| i as u32 != word_delimiter)
            .filter_map(|(i, s)| {
                let mut cs = s.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some((c, i as u32)),
                    _ => None,
                }
            })
            .collect();
        Ok(Vocabulary { symbols, word_delimiter, by_char })
    }

    /// Character vocabulary of the English wav2vec2 CTC checkpoints.
    pub fn wav2vec2_english() -> Self {
        let symbols = [
            "<pad>", "<s>", "</s>", "<unk>", "|", "E", "T", "A", "O", "N", "I", "H", "S", "R", "D", "L", "U", "M", "W",
            "C", "F", "G", "Y", "P", "B", "V", "K", "'", "X", "J", "Q", "Z",
        ];
        Self::new(symbols.iter().map(|s| s.to_string()).collect()).expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn word_delimiter(&self) -> u32 {
        self.word_delimiter
    }

    pub fn sos(&self) -> u32 {
        self.word_delimiter
    }

    pub fn eos(&self) -> u32 {
        self.word_delimiter
    }

    pub fn char_index(&self, c: char) -> Option<u32> {
        self.by_char.get(&c).copied()
    }

    /// Inverse of normalisation: delimiters become spaces.
    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(
                |&t| {
                    if t == self.word_delimiter {
                        " "
                    } else {
                        self.symbols.get(t as usize).map_or("", String::as_str)
                    }
                },
            )
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;

    fn try_from(symbols: Vec<String>) -> Result<Self, Self::Error> {
        Vocabulary::new(symbols)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Normalized {
    pub tokens: Vec<u32>,
    /// Letters and digits with no vocabulary symbol.
    pub dropped: Vec<char>,
}

impl Normalized {
    /// Nothing alignable is left; the caller decides whether to drop.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn unify_apostrophe(c: char) -> char {
    match c {
        '\u{2019}' | '\u{2018}' | '\u{0092}' | '`' => '\'',
        c => c,
    }
}

/// Maps text onto vocabulary indices: uppercase, strip punctuation (the
/// apostrophe survives when the vocabulary has it), one delimiter per
/// whitespace run, no leading or trailing delimiter.
pub fn normalize_utterance(text: &str, vocab: &Vocabulary) -> Normalized {
    let mut out = Normalized::default();
    let mut pending_space = false;
    let apostrophe = vocab.char_index('\'');
    for c in text.chars().map(unify_apostrophe) {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        for u in c.to_uppercase() {
            let token = if u == '\'' {
                apostrophe
            } else if u.is_alphanumeric() {
                let t = vocab.char_index(u);
                if t.is_none() {
                    out.dropped.push(u);
                }
                t
            } else {
                None
            };
            if let Some(t) = token {
                if pending_space && !out.tokens.is_empty() {
                    out.tokens.push(vocab.word_delimiter());
                }
                pending_space = false;
                out.tokens.push(t);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceBound {
    pub clip: ClipId,
    /// Inclusive index range into [`ConcatTranscript::chars`], excluding the
    /// start and end markers.
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatTranscript {
    pub chars: Vec<u32>,
    pub bounds: Vec<UtteranceBound>,
    pub dropped_chars: Vec<(ClipId, char)>,
    /// Utterances that normalised to nothing; they get no bound.
    pub empty: Vec<ClipId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("every utterance of the dialogue normalised to an empty transcript")]
    AllEmpty,
}

/// Normalises each utterance, wraps it in start/end markers and
/// concatenates in the given order (the timeline's utterance order).
pub fn concat_transcripts<I, S>(texts: I, vocab: &Vocabulary) -> Result<ConcatTranscript, TranscriptError>
where
    I: IntoIterator<Item = (ClipId, S)>,
    S: AsRef<str>,
{
    let mut out =
        ConcatTranscript { chars: Vec::new(), bounds: Vec::new(), dropped_chars: Vec::new(), empty: Vec::new() };
    for (clip, text) in texts {
        let norm = normalize_utterance(text.as_ref(), vocab);
        out.dropped_chars.extend(norm.dropped.iter().map(|&c| (clip, c)));
        if norm.is_empty() {
            out.empty.push(clip);
            continue;
        }
        out.chars.push(vocab.sos());
        let first = out.chars.len();
        out.chars.extend_from_slice(&norm.tokens);
        out.bounds.push(UtteranceBound { clip, first, last: out.chars.len() - 1 });
        out.chars.push(vocab.eos());
    }
    if out.bounds.is_empty() {
        return Err(TranscriptError::AllEmpty);
    }
    Ok(out)
}
