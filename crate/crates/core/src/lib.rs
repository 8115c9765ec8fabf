//! Allocation-only building blocks for realigning dialogue video cuts to
//! their transcriptions and localising the uttering speaker's face.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches the
//! filesystem (CSV, JSON Lines, posterior files, the CLI) lives in the
//! `meldfair` companion crate.
//!
//! Stage order for one dialogue:
//!
//! 1. [`schema`] parses clock strings, applies record overrides and groups
//!    records into chronologically ordered dialogues.
//! 2. [`timeline`] concatenates the utterance clips, truncating overlaps and
//!    inserting capped silence blocks.
//! 3. [`transcript`] normalises the texts into one token sequence with
//!    per-utterance bounds.
//! 4. [`ctcseg`] aligns that sequence against frame posteriors and turns the
//!    character alignment into per-utterance spans.
//!
//! and for one realigned cut:
//!
//! 1. [`tracks`] links face detections into tracks by IoU.
//! 2. [`fusion`] averages the per-block-size ASD scores, removes conflicting
//!    tracks per camera cut and assembles the speaker's face sequence.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod ctcseg;
pub mod fusion;
pub mod manifest;
pub mod realign;
pub mod schema;
pub mod synth;
pub mod timeline;
pub mod tracks;
pub mod transcript;

pub use ctcseg::{AlignedSpan, CharAlignment, PosteriorMatrix, SpanStatus};
pub use fusion::{ActiveSpeakerResult, CutGroup};
pub use manifest::{ManifestEntry, ManifestStatus};
pub use schema::{Dialogue, DialogueKey, Split, UtteranceKey, UtteranceRecord};
pub use timeline::{ClipId, DialogueTimeline, TimelineSegment};
pub use tracks::{BBox, FaceTrack};
pub use transcript::{ConcatTranscript, Vocabulary};
