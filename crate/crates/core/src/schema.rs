//! Dataset records, clock strings, record overrides and dialogue grouping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::timeline::ClipId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error for an enumerated label that is not part of its label set.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} label {value:?}")]
pub struct LabelError {
    pub kind: &'static str,
    pub value: String,
}

impl FromStr for Split {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(LabelError { kind: "split", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Joy,
    Surprise,
    Sadness,
    Fear,
    Anger,
    Disgust,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Neutral,
        Emotion::Joy,
        Emotion::Surprise,
        Emotion::Sadness,
        Emotion::Fear,
        Emotion::Anger,
        Emotion::Disgust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Joy => "joy",
            Emotion::Surprise => "surprise",
            Emotion::Sadness => "sadness",
            Emotion::Fear => "fear",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| LabelError { kind: "emotion", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            _ => Err(LabelError { kind: "sentiment", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DialogueKey {
    pub split: Split,
    pub dialogue_id: u32,
}

impl fmt::Display for DialogueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/dia{}", self.split, self.dialogue_id)
    }
}

/// Dataset-wide identity of one utterance and of its source clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UtteranceKey {
    pub split: Split,
    pub dialogue_id: u32,
    pub utterance_id: u32,
}

impl fmt::Display for UtteranceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/dia{}_utt{}", self.split, self.dialogue_id, self.utterance_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub split: Split,
    pub dialogue_id: u32,
    pub utterance_id: u32,
    pub speaker: String,
    pub emotion: Emotion,
    pub sentiment: Sentiment,
    pub season: u32,
    pub episode: u32,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
    /// Dialogue the record was moved into by an override. The record keeps
    /// its original key, which still names its source clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placed_in: Option<u32>,
}

impl UtteranceRecord {
    pub fn key(&self) -> UtteranceKey {
        UtteranceKey { split: self.split, dialogue_id: self.dialogue_id, utterance_id: self.utterance_id }
    }

    /// The dialogue this record is processed in.
    pub fn dialogue_key(&self) -> DialogueKey {
        DialogueKey { split: self.split, dialogue_id: self.placed_in.unwrap_or(self.dialogue_id) }
    }

    pub fn clip(&self) -> ClipId {
        ClipId { dialogue_id: self.dialogue_id, utterance_id: self.utterance_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockField {
    Hours,
    Minutes,
    Seconds,
    Millis,
}

impl fmt::Display for ClockField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockField::Hours => "hours",
            ClockField::Minutes => "minutes",
            ClockField::Seconds => "seconds",
            ClockField::Millis => "milliseconds",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed clock string {text:?}: bad {field} field")]
pub struct TimestampError {
    pub field: ClockField,
    pub text: String,
}

fn parse_digits(part: &str, exact_len: Option<usize>) -> Option<u64> {
    if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if exact_len.is_some_and(|n| part.len() != n) {
        return None;
    }
    part.parse().ok()
}

/// Parses an `H:MM:SS.mmm` clock string into milliseconds.
///
/// A comma is accepted as the millisecond separator, since the released
/// CSV files use `HH:MM:SS,mmm`.
pub fn parse_timestamp(text: &str) -> Result<u64, TimestampError> {
    let err = |field| TimestampError { field, text: text.to_string() };
    let trimmed = text.trim();
    let mut parts = trimmed.splitn(3, ':');
    let (Some(h), Some(m), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(err(if trimmed.contains(':') { ClockField::Seconds } else { ClockField::Minutes }));
    };
    let hours = parse_digits(h, None).ok_or_else(|| err(ClockField::Hours))?;
    let minutes = parse_digits(m, Some(2)).filter(|&m| m < 60).ok_or_else(|| err(ClockField::Minutes))?;
    let (s, ms) = rest.split_once(['.', ',']).ok_or_else(|| err(ClockField::Millis))?;
    let seconds = parse_digits(s, Some(2)).filter(|&s| s < 60).ok_or_else(|| err(ClockField::Seconds))?;
    let millis = parse_digits(ms, Some(3)).ok_or_else(|| err(ClockField::Millis))?;
    Ok(((hours * 60 + minutes) * 60 + seconds) * 1000 + millis)
}

pub fn format_timestamp(ms: u64) -> String {
    let millis = ms % 1000;
    let total_s = ms / 1000;
    format!("{}:{:02}:{:02}.{:03}", total_s / 3600, (total_s / 60) % 60, total_s % 60, millis)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideAction {
    ReassignDialogue,
    StripDescription,
    Drop,
    ResortDialogue,
}

/// One repair instruction. `utterance_id` may be absent only for
/// dialogue-level actions (`resort_dialogue`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub split: Split,
    pub dialogue_id: u32,
    #[serde(default)]
    pub utterance_id: Option<u32>,
    pub action: OverrideAction,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverrideList {
    pub entries: Vec<Override>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingOverride {
    pub entry: Override,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideReport {
    pub applied: Vec<Override>,
    pub dangling: Vec<DanglingOverride>,
}

/// Removes parenthesised and bracketed spans, then collapses whitespace.
pub fn strip_description(text: &str) -> String {
    let mut depth = 0usize;
    let mut kept = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => kept.push(c),
            _ => {}
        }
    }
    let mut out = String::with_capacity(kept.len());
    for word in kept.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn chrono_order(a: &UtteranceRecord, b: &UtteranceRecord) -> core::cmp::Ordering {
    // records moved in by an override lead their new dialogue
    (a.placed_in.is_none(), a.start_ms, a.utterance_id).cmp(&(b.placed_in.is_none(), b.start_ms, b.utterance_id))
}

/// Applies overrides in list order. Overrides that do not match a record
/// are reported as dangling and otherwise ignored.
pub fn apply_overrides(
    mut records: Vec<UtteranceRecord>,
    overrides: &OverrideList,
) -> (Vec<UtteranceRecord>, OverrideReport) {
    let mut report = OverrideReport::default();
    for entry in &overrides.entries {
        let dangle = |report: &mut OverrideReport, reason: String| {
            report.dangling.push(DanglingOverride { entry: entry.clone(), reason });
        };
        if entry.action == OverrideAction::ResortDialogue {
            let dialogue = DialogueKey { split: entry.split, dialogue_id: entry.dialogue_id };
            let positions: Vec<usize> =
                records.iter().enumerate().filter(|(_, r)| r.dialogue_key() == dialogue).map(|(i, _)| i).collect();
            if positions.is_empty() {
                dangle(&mut report, format!("no records in dialogue {dialogue}"));
                continue;
            }
            let mut members: Vec<UtteranceRecord> = positions.iter().map(|&i| records[i].clone()).collect();
            members.sort_by(chrono_order);
            for (slot, rec) in positions.into_iter().zip(members) {
                records[slot] = rec;
            }
            report.applied.push(entry.clone());
            continue;
        }

        let Some(utterance_id) = entry.utterance_id else {
            dangle(&mut report, "utterance-level action without utterance_id".to_string());
            continue;
        };
        let key = UtteranceKey { split: entry.split, dialogue_id: entry.dialogue_id, utterance_id };
        let Some(pos) = records.iter().position(|r| r.key() == key) else {
            dangle(&mut report, format!("no record {key}"));
            continue;
        };
        match entry.action {
            OverrideAction::ReassignDialogue => match entry.payload.trim().parse::<u32>() {
                Ok(target) => records[pos].placed_in = Some(target),
                Err(_) => {
                    dangle(&mut report, format!("payload {:?} is not a dialogue id", entry.payload));
                    continue;
                }
            },
            OverrideAction::StripDescription => {
                records[pos].text = strip_description(&records[pos].text);
            }
            OverrideAction::Drop => {
                records.remove(pos);
            }
            OverrideAction::ResortDialogue => unreachable!(),
        }
        report.applied.push(entry.clone());
    }
    (records, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub key: DialogueKey,
    pub utterances: Vec<UtteranceRecord>,
}

/// Partitions records by dialogue and sorts each dialogue by start time,
/// ties broken by utterance id. Dialogues come out in key order.
pub fn group_dialogues(records: &[UtteranceRecord]) -> Vec<Dialogue> {
    let mut by_key: BTreeMap<DialogueKey, Vec<UtteranceRecord>> = BTreeMap::new();
    for r in records {
        by_key.entry(r.dialogue_key()).or_default().push(r.clone());
    }
    by_key
        .into_iter()
        .map(|(key, mut utterances)| {
            utterances.sort_by(chrono_order);
            Dialogue { key, utterances }
        })
        .collect()
}
