//! Per-utterance manifest entries and the retention statistics computed
//! over them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ctcseg::SpanStatus;
use crate::realign::EdlRow;
use crate::schema::{Emotion, Split, UtteranceKey, UtteranceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestStatus {
    Aligned,
    DroppedShort,
    DroppedLowConfidence,
    Degenerate,
    NoActiveSpeaker,
}

impl ManifestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifestStatus::Aligned => "aligned",
            ManifestStatus::DroppedShort => "dropped_short",
            ManifestStatus::DroppedLowConfidence => "dropped_low_confidence",
            ManifestStatus::Degenerate => "degenerate",
            ManifestStatus::NoActiveSpeaker => "no_active_speaker",
        }
    }
}

impl From<SpanStatus> for ManifestStatus {
    fn from(s: SpanStatus) -> Self {
        match s {
            SpanStatus::Aligned => ManifestStatus::Aligned,
            SpanStatus::DroppedShort => ManifestStatus::DroppedShort,
            SpanStatus::DroppedLowConfidence => ManifestStatus::DroppedLowConfidence,
            SpanStatus::Degenerate => ManifestStatus::Degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceSequenceRef {
    /// Directory holding one `<frame>.png` crop per face.
    pub path: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub dialogue_id: u32,
    pub utterance_id: u32,
    pub realigned_start_ms: Option<u64>,
    pub realigned_end_ms: Option<u64>,
    pub status: ManifestStatus,
    pub audio: Option<String>,
    pub faces: Option<FaceSequenceRef>,
    pub emotion: Emotion,
    pub speaker: String,
}

impl ManifestEntry {
    pub fn key(&self) -> UtteranceKey {
        UtteranceKey { split: self.split, dialogue_id: self.dialogue_id, utterance_id: self.utterance_id }
    }

    pub fn is_retained(&self) -> bool {
        self.status == ManifestStatus::Aligned
    }
}

/// `<split>/<dia>/<utt>.wav`
pub fn audio_path(key: &UtteranceKey) -> String {
    format!("{}/{}/{}.wav", key.split, key.dialogue_id, key.utterance_id)
}

/// `<split>/<dia>/<utt>`
pub fn face_dir(key: &UtteranceKey) -> String {
    format!("{}/{}/{}", key.split, key.dialogue_id, key.utterance_id)
}

/// `<split>/<dia>/<utt>/<frame>.png`
pub fn face_crop_path(key: &UtteranceKey, frame: u32) -> String {
    format!("{}/{frame}.png", face_dir(key))
}

/// One entry per input record, sorted by key.
///
/// `records` are the records as read, before overrides, so utterances
/// removed by an override still get an entry. A record without an EDL row
/// is `degenerate`. An aligned row becomes `no_active_speaker` unless
/// `face_counts` holds a positive count for it.
pub fn build_manifest(
    records: &[UtteranceRecord],
    rows: &[EdlRow],
    face_counts: &BTreeMap<UtteranceKey, usize>,
) -> Vec<ManifestEntry> {
    let by_key: BTreeMap<UtteranceKey, &EdlRow> = rows
        .iter()
        .map(|r| (UtteranceKey { split: r.split, dialogue_id: r.dialogue_id, utterance_id: r.utterance_id }, r))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out: Vec<ManifestEntry> = records
        .iter()
        .filter(|r| seen.insert(r.key()))
        .map(|r| {
            let key = r.key();
            let row = by_key.get(&key);
            let mut status = row.map_or(ManifestStatus::Degenerate, |row| row.status.into());
            let faces = face_counts.get(&key).copied().filter(|&n| n > 0);
            if status == ManifestStatus::Aligned && faces.is_none() {
                status = ManifestStatus::NoActiveSpeaker;
            }
            let has_audio = matches!(status, ManifestStatus::Aligned | ManifestStatus::NoActiveSpeaker);
            ManifestEntry {
                split: key.split,
                dialogue_id: key.dialogue_id,
                utterance_id: key.utterance_id,
                realigned_start_ms: row.and_then(|r| r.global_start_ms),
                realigned_end_ms: row.and_then(|r| r.global_end_ms),
                status,
                audio: has_audio.then(|| audio_path(&key)),
                faces: (status == ManifestStatus::Aligned)
                    .then(|| FaceSequenceRef { path: face_dir(&key), count: faces.unwrap_or(0) }),
                emotion: r.emotion,
                speaker: r.speaker.clone(),
            }
        })
        .collect();
    out.sort_by_key(ManifestEntry::key);
    out
}

/// Main cast; everyone else is counted as "others".
pub const MAIN_SPEAKERS: [&str; 6] = ["Rachel", "Monica", "Phoebe", "Joey", "Chandler", "Ross"];

pub const OTHERS: &str = "others";

pub fn speaker_bucket(speaker: &str) -> &'static str {
    let name = speaker.trim();
    MAIN_SPEAKERS.iter().find(|&&m| m == name).copied().unwrap_or(OTHERS)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub retained: u64,
    pub original: u64,
}

impl Count {
    fn add(&mut self, retained: bool) {
        self.original += 1;
        self.retained += retained as u64;
    }

    fn merge(&mut self, other: Count) {
        self.original += other.original;
        self.retained += other.retained;
    }

    /// Percentage retained; 100 for an empty count.
    pub fn retention(&self) -> f64 {
        if self.original == 0 {
            100.0
        } else {
            100.0 * self.retained as f64 / self.original as f64
        }
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.retained, self.original)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    /// In [`Emotion::ALL`] order.
    pub by_emotion: Vec<(Emotion, Count)>,
    /// Main cast in [`MAIN_SPEAKERS`] order, then "others".
    pub by_speaker: Vec<(String, Count)>,
    pub total: Count,
    pub dialogues: u64,
    pub dialogues_with_loss: u64,
}

impl SplitStats {
    pub fn dialogue_loss_percent(&self) -> f64 {
        if self.dialogues == 0 {
            0.0
        } else {
            100.0 * self.dialogues_with_loss as f64 / self.dialogues as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Only splits present in the manifest, in train/dev/test order.
    pub splits: Vec<SplitStats>,
    pub by_emotion: Vec<(Emotion, Count)>,
    pub by_speaker: Vec<(String, Count)>,
    pub overall: Count,
}

fn speaker_rows() -> Vec<(String, Count)> {
    MAIN_SPEAKERS.iter().chain(core::iter::once(&OTHERS)).map(|s| (s.to_string(), Count::default())).collect()
}

pub fn stats(entries: &[ManifestEntry]) -> DatasetStats {
    let mut splits = Vec::new();
    for split in Split::ALL {
        let mine: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == split).collect();
        if mine.is_empty() {
            continue;
        }
        let mut by_emotion: Vec<(Emotion, Count)> = Emotion::ALL.iter().map(|&e| (e, Count::default())).collect();
        let mut by_speaker = speaker_rows();
        let mut total = Count::default();
        let mut dialogues: BTreeMap<u32, bool> = BTreeMap::new();
        for e in mine {
            let kept = e.is_retained();
            total.add(kept);
            let emo = Emotion::ALL.iter().position(|&x| x == e.emotion).expect("known emotion");
            by_emotion[emo].1.add(kept);
            let bucket = speaker_bucket(&e.speaker);
            by_speaker.iter_mut().find(|(s, _)| s == bucket).expect("bucket row").1.add(kept);
            *dialogues.entry(e.dialogue_id).or_insert(false) |= !kept;
        }
        splits.push(SplitStats {
            split,
            by_emotion,
            by_speaker,
            total,
            dialogues: dialogues.len() as u64,
            dialogues_with_loss: dialogues.values().filter(|&&lost| lost).count() as u64,
        });
    }
    let mut by_emotion: Vec<(Emotion, Count)> = Emotion::ALL.iter().map(|&e| (e, Count::default())).collect();
    let mut by_speaker = speaker_rows();
    let mut overall = Count::default();
    for s in &splits {
        for (i, (_, c)) in s.by_emotion.iter().enumerate() {
            by_emotion[i].1.merge(*c);
        }
        for (i, (_, c)) in s.by_speaker.iter().enumerate() {
            by_speaker[i].1.merge(*c);
        }
        overall.merge(s.total);
    }
    DatasetStats { splits, by_emotion, by_speaker, overall }
}

fn render_table(out: &mut String, heading: &str, stats: &DatasetStats, rows: &[(String, Vec<Count>, Count)]) {
    let mut header = format!("{heading:<10}");
    for s in &stats.splits {
        let _ = write!(header, " | {:>14}", s.split.as_str());
    }
    let _ = write!(header, " | {:>14}", "Total");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for (label, per_split, total) in rows {
        let _ = write!(out, "{label:<10}");
        for c in per_split {
            let _ = write!(out, " | {:>14}", c.to_string());
        }
        let _ = writeln!(out, " | {:>14}", total.to_string());
    }
    let _ = write!(out, "{:<10}", "");
    for s in &stats.splits {
        let _ = write!(out, " | {:>14}", s.total.to_string());
    }
    let _ = writeln!(out, " | {:>14}", stats.overall.to_string());
}

/// Emotion and speaker tables as `retained (original)`, followed by
/// per-split retention and dialogue loss.
pub fn render_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    let emotion_rows: Vec<(String, Vec<Count>, Count)> = stats
        .by_emotion
        .iter()
        .enumerate()
        .map(|(i, (e, total))| {
            (e.as_str().to_string(), stats.splits.iter().map(|s| s.by_emotion[i].1).collect(), *total)
        })
        .collect();
    render_table(&mut out, "Emotion", stats, &emotion_rows);
    out.push('\n');
    let speaker_rows: Vec<(String, Vec<Count>, Count)> = stats
        .by_speaker
        .iter()
        .enumerate()
        .map(|(i, (name, total))| (name.clone(), stats.splits.iter().map(|s| s.by_speaker[i].1).collect(), *total))
        .collect();
    render_table(&mut out, "Speaker", stats, &speaker_rows);
    out.push('\n');
    for s in &stats.splits {
        let _ = writeln!(
            out,
            "{}: retention {:.2}% ({}), dialogues with loss {} of {} ({:.1}%)",
            s.split,
            s.total.retention(),
            s.total,
            s.dialogues_with_loss,
            s.dialogues,
            s.dialogue_loss_percent()
        );
    }
    let _ = writeln!(out, "overall: retention {:.2}% ({})", stats.overall.retention(), stats.overall);
    out
}
