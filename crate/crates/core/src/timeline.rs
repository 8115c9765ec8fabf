//! Concatenated per-dialogue audio timeline.
//!
//! Utterance clips are laid end to end in dialogue order. Overlapping clips
//! lose their head, gaps become silence blocks of at most
//! [`SILENCE_CAP_MS`], and no clip contributes more than
//! [`UTTERANCE_CAP_MS`]. All times are integer milliseconds; intervals are
//! half-open.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::schema::{Dialogue, DialogueKey};

pub const SILENCE_CAP_MS: u64 = 250;
pub const UTTERANCE_CAP_MS: u64 = 45_000;

/// Source clip of an utterance. It keeps the record's original dialogue id
/// even when an override moved the record into another dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClipId {
    pub dialogue_id: u32,
    pub utterance_id: u32,
}

pub fn silence_length(gap_ms: u64) -> u64 {
    gap_ms.min(SILENCE_CAP_MS)
}

/// Clips longer than the cap keep their head.
pub fn cap_utterance(seg_source_len_ms: u64) -> u64 {
    seg_source_len_ms.min(UTTERANCE_CAP_MS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustedUtterance {
    pub clip: ClipId,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Start was raised to or past the end; the clip has nothing left.
    pub degenerate: bool,
}

fn resolve_intervals(intervals: impl IntoIterator<Item = (ClipId, u64, u64)>) -> Vec<AdjustedUtterance> {
    let mut frontier: Option<u64> = None;
    intervals
        .into_iter()
        .map(|(clip, start, end)| {
            let start = frontier.map_or(start, |f| start.max(f));
            let degenerate = start >= end;
            if !degenerate {
                frontier = Some(frontier.map_or(end, |f| f.max(end)));
            }
            AdjustedUtterance { clip, start_ms: start, end_ms: end, degenerate }
        })
        .collect()
}

/// Raises each utterance's start to the end of everything before it.
///
/// Single left-to-right pass over the dialogue's (chronological) order.
/// Touching clips are not overlaps.
pub fn resolve_overlaps(dialogue: &Dialogue) -> Vec<AdjustedUtterance> {
    resolve_intervals(dialogue.utterances.iter().map(|u| (u.clip(), u.start_ms, u.end_ms)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Utterance,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<u32>,
    /// Offset into the utterance's own clip audio; for silence, offset into
    /// the silence block itself.
    pub source_start_ms: u64,
    pub source_end_ms: u64,
    pub global_start_ms: u64,
    pub global_end_ms: u64,
}

impl TimelineSegment {
    pub fn clip(&self) -> Option<ClipId> {
        match (self.kind, self.dialogue_id, self.utterance_id) {
            (SegmentKind::Utterance, Some(dialogue_id), Some(utterance_id)) => {
                Some(ClipId { dialogue_id, utterance_id })
            }
            _ => None,
        }
    }

    pub fn len_ms(&self) -> u64 {
        self.global_end_ms - self.global_start_ms
    }

    fn silence(global_start_ms: u64, len: u64) -> Self {
        TimelineSegment {
            kind: SegmentKind::Silence,
            dialogue_id: None,
            utterance_id: None,
            source_start_ms: 0,
            source_end_ms: len,
            global_start_ms,
            global_end_ms: global_start_ms + len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTimeline {
    pub key: DialogueKey,
    pub segments: Vec<TimelineSegment>,
    pub total_ms: u64,
    /// Utterances left without audio after overlap truncation.
    #[serde(default)]
    pub degenerate: Vec<ClipId>,
}

impl DialogueTimeline {
    pub fn utterance_segments(&self) -> impl Iterator<Item = &TimelineSegment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Utterance)
    }
}

/// Lays out the dialogue's clips: cap each clip, truncate overlaps, then
/// insert capped silence for every positive gap.
pub fn build_timeline(dialogue: &Dialogue) -> DialogueTimeline {
    let capped = dialogue.utterances.iter().map(|u| {
        let end = if u.end_ms > u.start_ms { u.start_ms + cap_utterance(u.end_ms - u.start_ms) } else { u.end_ms };
        (u.clip(), u.start_ms, end)
    });
    let adjusted = resolve_intervals(capped);

    let mut segments = Vec::with_capacity(adjusted.len() * 2);
    let mut degenerate = Vec::new();
    let mut cursor = 0u64;
    let mut prev_end: Option<u64> = None;
    for (adj, rec) in adjusted.iter().zip(&dialogue.utterances) {
        if adj.degenerate {
            degenerate.push(adj.clip);
            continue;
        }
        if let Some(prev) = prev_end {
            let silence = silence_length(adj.start_ms - prev);
            if silence > 0 {
                segments.push(TimelineSegment::silence(cursor, silence));
                cursor += silence;
            }
        }
        let len = adj.end_ms - adj.start_ms;
        let source_start = adj.start_ms - rec.start_ms;
        segments.push(TimelineSegment {
            kind: SegmentKind::Utterance,
            dialogue_id: Some(adj.clip.dialogue_id),
            utterance_id: Some(adj.clip.utterance_id),
            source_start_ms: source_start,
            source_end_ms: source_start + len,
            global_start_ms: cursor,
            global_end_ms: cursor + len,
        });
        cursor += len;
        prev_end = Some(adj.end_ms);
    }
    DialogueTimeline { key: dialogue.key, segments, total_ms: cursor, degenerate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("global time {global_ms} ms outside timeline of {total_ms} ms")]
pub struct LocateError {
    pub global_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub segment_index: usize,
    /// `None` inside a silence block.
    pub clip: Option<ClipId>,
    pub source_offset_ms: u64,
}

pub fn locate(timeline: &DialogueTimeline, global_ms: u64) -> Result<Location, LocateError> {
    if global_ms >= timeline.total_ms {
        return Err(LocateError { global_ms, total_ms: timeline.total_ms });
    }
    let idx = timeline.segments.partition_point(|s| s.global_end_ms <= global_ms);
    let seg = &timeline.segments[idx];
    Ok(Location {
        segment_index: idx,
        clip: seg.clip(),
        source_offset_ms: seg.source_start_ms + (global_ms - seg.global_start_ms),
    })
}

/// Part of a source clip covered by a global interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePiece {
    pub dialogue_id: u32,
    pub utterance_id: u32,
    pub source_start_ms: u64,
    pub source_end_ms: u64,
}

/// Maps the global interval `[start_ms, end_ms)` back onto source clips,
/// skipping silence. Pieces come out in timeline order.
pub fn map_span(timeline: &DialogueTimeline, start_ms: u64, end_ms: u64) -> Vec<SourcePiece> {
    let end_ms = end_ms.min(timeline.total_ms);
    if start_ms >= end_ms {
        return Vec::new();
    }
    let first = timeline.segments.partition_point(|s| s.global_end_ms <= start_ms);
    timeline.segments[first..]
        .iter()
        .take_while(|s| s.global_start_ms < end_ms)
        .filter_map(|s| {
            let clip = s.clip()?;
            let lo = start_ms.max(s.global_start_ms);
            let hi = end_ms.min(s.global_end_ms);
            Some(SourcePiece {
                dialogue_id: clip.dialogue_id,
                utterance_id: clip.utterance_id,
                source_start_ms: s.source_start_ms + (lo - s.global_start_ms),
                source_end_ms: s.source_start_ms + (hi - s.global_start_ms),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::{record, table_dialogue};
    use crate::schema::{group_dialogues, Split};
    use alloc::vec;
    use proptest::prelude::*;

    fn table_timeline() -> DialogueTimeline {
        build_timeline(&group_dialogues(&table_dialogue())[0])
    }

    #[test]
    fn overlaps_in_the_excerpt() {
        let d = &group_dialogues(&table_dialogue())[0];
        let adj = resolve_overlaps(d);
        let u7 = adj.iter().find(|a| a.clip.utterance_id == 7).unwrap();
        assert_eq!((u7.start_ms, u7.end_ms), (1_011_886, 1_014_514));
        let u9 = adj.iter().find(|a| a.clip.utterance_id == 9).unwrap();
        assert_eq!((u9.start_ms, u9.end_ms), (1_020_478, 1_022_719));
        assert!(adj.iter().all(|a| !a.degenerate));
    }

    #[test]
    fn single_utterance_unchanged() {
        let d = &group_dialogues(&[record(1, 0, "0:00:01.000", "0:00:03.500", "x")])[0];
        let adj = resolve_overlaps(d);
        assert_eq!((adj[0].start_ms, adj[0].end_ms), (1000, 3500));
        let t = build_timeline(d);
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.total_ms, 2500);
    }

    #[test]
    fn swallowed_utterance_is_degenerate() {
        let d = &group_dialogues(&[
            record(1, 0, "0:00:00.000", "0:00:10.000", "a"),
            record(1, 1, "0:00:02.000", "0:00:05.000", "b"),
            record(1, 2, "0:00:06.000", "0:00:12.000", "c"),
        ])[0];
        let adj = resolve_overlaps(d);
        assert!(adj[1].degenerate);
        assert_eq!(adj[2].start_ms, 10_000);
        let t = build_timeline(d);
        assert_eq!(t.degenerate, vec![ClipId { dialogue_id: 1, utterance_id: 1 }]);
        assert_eq!(t.segments.len(), 2);
        assert_eq!(t.total_ms, 12_000);
    }

    #[test]
    fn silence_and_caps() {
        assert_eq!(silence_length(4463), 250);
        assert_eq!(silence_length(0), 0);
        assert_eq!(silence_length(120), 120);
        assert_eq!(cap_utterance(52_000), 45_000);
        assert_eq!(cap_utterance(10_000), 10_000);
        assert_eq!(cap_utterance(45_000), 45_000);
    }

    #[test]
    fn excerpt_timeline_lengths() {
        let t = table_timeline();
        let lens: Vec<(SegmentKind, u64)> = t.segments.iter().map(|s| (s.kind, s.len_ms())).collect();
        use SegmentKind::*;
        assert_eq!(
            lens,
            vec![
                (Utterance, 3211),
                (Silence, 250),
                (Utterance, 3086),
                (Utterance, 2628),
                (Silence, 250),
                (Utterance, 1001),
                (Utterance, 2241),
                (Silence, 137),
                (Utterance, 2002),
            ]
        );
        assert_eq!(t.total_ms, 14_806);
        assert_eq!(t.segments[3].source_start_ms, 3086);
        assert_eq!(t.segments[3].source_end_ms, 5714);
    }

    #[test]
    fn long_clip_keeps_head() {
        let mut r = record(2, 0, "0:00:00.000", "0:00:52.000", "long");
        r.split = Split::Test;
        let t = build_timeline(&group_dialogues(&[r])[0]);
        assert_eq!(t.total_ms, 45_000);
        assert_eq!((t.segments[0].source_start_ms, t.segments[0].source_end_ms), (0, 45_000));
    }

    #[test]
    fn locate_in_the_excerpt() {
        let t = table_timeline();
        let first = locate(&t, 0).unwrap();
        assert_eq!(first.segment_index, 0);
        assert_eq!(first.source_offset_ms, 0);
        // boundary between U5 and the first silence block
        let b = locate(&t, 3211).unwrap();
        assert_eq!(b.segment_index, 1);
        assert_eq!(b.clip, None);
        // U7 starts at 3211 + 250 + 3086 = 6547 with source offset 3086
        let mid = locate(&t, 7000).unwrap();
        assert_eq!(mid.clip, Some(ClipId { dialogue_id: 0, utterance_id: 7 }));
        assert_eq!(mid.source_offset_ms, 3086 + 453);
        assert!(locate(&t, 14_806).is_err());
    }

    #[test]
    fn map_span_skips_silence() {
        let t = table_timeline();
        // from 100 ms before the end of U5 to 50 ms into U6
        let pieces = map_span(&t, 3111, 3211 + 250 + 50);
        assert_eq!(
            pieces,
            vec![
                SourcePiece { dialogue_id: 0, utterance_id: 5, source_start_ms: 3111, source_end_ms: 3211 },
                SourcePiece { dialogue_id: 0, utterance_id: 6, source_start_ms: 0, source_end_ms: 50 },
            ]
        );
        assert!(map_span(&t, 3300, 3400).is_empty());
    }

    #[test]
    fn only_utterance_segments_name_a_clip() {
        let t = table_timeline();
        assert!(t.segments.iter().all(|s| match s.kind {
            SegmentKind::Utterance => s.clip().is_some(),
            SegmentKind::Silence => s.clip().is_none() && s.source_start_ms == 0,
        }));
    }

    fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
        proptest::collection::vec((0u64..60_000, 0u64..60_000), 1..12).prop_map(|rows| {
            let records: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, &(start, len))| {
                    let mut r = record(9, i as u32, "0:00:00.000", "0:00:00.001", "t");
                    r.start_ms = start;
                    r.end_ms = start + len;
                    r
                })
                .collect();
            group_dialogues(&records).remove(0)
        })
    }

    proptest! {
        #[test]
        fn timeline_invariants(d in arb_dialogue()) {
            let t = build_timeline(&d);
            let mut cursor = 0;
            for (i, s) in t.segments.iter().enumerate() {
                prop_assert_eq!(s.global_start_ms, cursor);
                prop_assert!(s.global_end_ms > s.global_start_ms);
                prop_assert_eq!(s.source_end_ms - s.source_start_ms, s.len_ms());
                cursor = s.global_end_ms;
                if s.kind == SegmentKind::Silence {
                    prop_assert!(s.len_ms() <= SILENCE_CAP_MS);
                    prop_assert!(i > 0 && i + 1 < t.segments.len());
                    prop_assert_eq!(t.segments[i + 1].kind, SegmentKind::Utterance);
                }
            }
            prop_assert_eq!(cursor, t.total_ms);

            // utterance order follows the dialogue, and episode-time
            // intervals never overlap
            let mut last_end = 0u64;
            let mut last_pos = None;
            for s in t.utterance_segments() {
                let pos = d.utterances.iter().position(|u| Some(u.clip()) == s.clip()).unwrap();
                prop_assert!(last_pos.is_none_or(|p| pos > p));
                last_pos = Some(pos);
                let rec = &d.utterances[pos];
                let lo = rec.start_ms + s.source_start_ms;
                let hi = rec.start_ms + s.source_end_ms;
                prop_assert!(lo >= last_end);
                prop_assert!(s.source_end_ms <= cap_utterance(rec.end_ms - rec.start_ms));
                last_end = hi;
            }
        }

        #[test]
        fn locate_inverts_layout(d in arb_dialogue(), pick in 0.0f64..1.0) {
            let t = build_timeline(&d);
            for s in t.utterance_segments() {
                let x = s.source_start_ms + ((s.len_ms() - 1) as f64 * pick) as u64;
                let global = s.global_start_ms + (x - s.source_start_ms);
                let loc = locate(&t, global).unwrap();
                prop_assert_eq!(loc.clip, s.clip());
                prop_assert_eq!(loc.source_offset_ms, x);
            }
        }
    }
}
