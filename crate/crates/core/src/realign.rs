//! One dialogue through timeline, transcript and alignment, ending in an
//! edit decision list row per utterance.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ctcseg::{
    expand_with_blanks, filter_spans, utterance_spans, viterbi_align, AlignError, PosteriorMatrix, SpanStatus,
    DEFAULT_MIN_CONFIDENCE, DEFAULT_MIN_SPAN_MS,
};
use crate::schema::{Dialogue, Split};
use crate::timeline::{build_timeline, map_span, ClipId, DialogueTimeline, SourcePiece};
use crate::transcript::{concat_transcripts, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealignConfig {
    pub min_span_ms: u64,
    pub min_confidence: f64,
}

impl Default for RealignConfig {
    fn default() -> Self {
        RealignConfig { min_span_ms: DEFAULT_MIN_SPAN_MS, min_confidence: DEFAULT_MIN_CONFIDENCE }
    }
}

/// Cut instruction for one utterance.
///
/// `source_start_ms..source_end_ms` is the aligned span clipped to the
/// utterance's own clip. `pieces` lists every clip the unclipped span
/// touches, in timeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdlRow {
    pub split: Split,
    pub dialogue_id: u32,
    pub utterance_id: u32,
    pub status: SpanStatus,
    pub global_start_ms: Option<u64>,
    pub global_end_ms: Option<u64>,
    pub source_start_ms: Option<u64>,
    pub source_end_ms: Option<u64>,
    pub confidence: Option<f64>,
    #[serde(default)]
    pub pieces: Vec<SourcePiece>,
}

impl EdlRow {
    fn degenerate(split: Split, clip: ClipId) -> Self {
        EdlRow {
            split,
            dialogue_id: clip.dialogue_id,
            utterance_id: clip.utterance_id,
            status: SpanStatus::Degenerate,
            global_start_ms: None,
            global_end_ms: None,
            source_start_ms: None,
            source_end_ms: None,
            confidence: None,
            pieces: Vec::new(),
        }
    }

    pub fn clip(&self) -> ClipId {
        ClipId { dialogue_id: self.dialogue_id, utterance_id: self.utterance_id }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRealignment {
    pub timeline: DialogueTimeline,
    /// One row per utterance of the dialogue, in dialogue order.
    pub rows: Vec<EdlRow>,
    pub dropped_chars: Vec<(ClipId, char)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RealignError {
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Runs the realignment stages for one dialogue.
///
/// Utterances swallowed by overlap truncation, or whose text normalises to
/// nothing, come out as `degenerate`. An infeasible alignment (too few
/// posterior frames) is an error for the whole dialogue.
pub fn realign_dialogue(
    dialogue: &Dialogue,
    posteriors: &PosteriorMatrix,
    config: &RealignConfig,
) -> Result<DialogueRealignment, RealignError> {
    let split = dialogue.key.split;
    let timeline = build_timeline(dialogue);
    let texts: BTreeMap<ClipId, &str> = dialogue.utterances.iter().map(|u| (u.clip(), u.text.as_str())).collect();
    let ordered = timeline.utterance_segments().filter_map(|s| s.clip()).map(|c| (c, texts[&c]));

    let transcript = match concat_transcripts(ordered, posteriors.vocab()) {
        Ok(t) => t,
        Err(TranscriptError::AllEmpty) => {
            let rows = dialogue.utterances.iter().map(|u| EdlRow::degenerate(split, u.clip())).collect();
            return Ok(DialogueRealignment { timeline, rows, dropped_chars: Vec::new() });
        }
    };

    let align = viterbi_align(posteriors, &expand_with_blanks(&transcript.chars))?;
    let spans = utterance_spans(&align, &transcript.bounds, posteriors.frame_duration_ms());
    let spans = filter_spans(&spans, config.min_span_ms, config.min_confidence);
    let by_clip: BTreeMap<ClipId, _> = spans.iter().map(|s| (s.clip, s)).collect();

    let rows = dialogue
        .utterances
        .iter()
        .map(|u| {
            let clip = u.clip();
            let Some(span) = by_clip.get(&clip) else {
                return EdlRow::degenerate(split, clip);
            };
            let pieces = map_span(&timeline, span.global_start_ms, span.global_end_ms);
            let own = pieces.iter().find(|p| p.dialogue_id == clip.dialogue_id && p.utterance_id == clip.utterance_id);
            let mut status = span.status;
            // a span that barely touches its own clip cannot be cut from it
            let own_len = own.map_or(0, |p| p.source_end_ms - p.source_start_ms);
            if status == SpanStatus::Aligned && own_len < config.min_span_ms.max(1) {
                status = SpanStatus::DroppedShort;
            }
            EdlRow {
                split,
                dialogue_id: clip.dialogue_id,
                utterance_id: clip.utterance_id,
                status,
                global_start_ms: Some(span.global_start_ms),
                global_end_ms: Some(span.global_end_ms),
                source_start_ms: own.map(|p| p.source_start_ms),
                source_end_ms: own.map(|p| p.source_end_ms),
                confidence: Some(span.confidence),
                pieces,
            }
        })
        .collect();
    Ok(DialogueRealignment { timeline, rows, dropped_chars: transcript.dropped_chars })
}
