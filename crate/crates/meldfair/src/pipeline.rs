//! Stage drivers. Each stage reads and writes files so the adapters and
//! the pipeline only meet through the documented formats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use meldfair_core::ctcseg::{PosteriorMatrix, DEFAULT_MIN_CONFIDENCE, DEFAULT_MIN_SPAN_MS};
use meldfair_core::fusion::{localise_tracks, FusionError, Localisation, ScoreLine, DEFAULT_EXACT_GROUP_LIMIT};
use meldfair_core::manifest::{build_manifest, face_crop_path, ManifestEntry};
use meldfair_core::realign::{realign_dialogue, DialogueRealignment, EdlRow, RealignConfig};
use meldfair_core::schema::{
    apply_overrides, group_dialogues, DialogueKey, OverrideList, OverrideReport, Split, UtteranceKey, UtteranceRecord,
};
use meldfair_core::timeline::{ClipId, DialogueTimeline};
use meldfair_core::tracks::{
    infer_cuts, link_detections_within_cuts, BBox, CutInterval, FrameDetections, DEFAULT_IOU_THRESHOLD,
};
use meldfair_core::transcript::Vocabulary;
use meldfair_core::SpanStatus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{self, FormatError};
use crate::records::{parse_records, RecordsError, RowError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// IoU threshold for linking detections into tracks.
    pub theta: f64,
    pub min_span_ms: u64,
    pub min_confidence: f64,
    /// Infer camera cuts from track ends when no cuts file is given.
    pub cut_fallback: bool,
    pub exact_group_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            theta: DEFAULT_IOU_THRESHOLD,
            min_span_ms: DEFAULT_MIN_SPAN_MS,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            cut_fallback: true,
            exact_group_limit: DEFAULT_EXACT_GROUP_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("theta must lie in (0, 1), got {0}")]
    Theta(f64),
    #[error("min_confidence must not be NaN")]
    Confidence,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ConfigError::Theta(self.theta));
        }
        if self.min_confidence.is_nan() {
            return Err(ConfigError::Confidence);
        }
        Ok(())
    }

    pub fn realign(&self) -> RealignConfig {
        RealignConfig { min_span_ms: self.min_span_ms, min_confidence: self.min_confidence }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Records { path: PathBuf, source: RecordsError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Runs `f` on a pool of `jobs` workers (all cores when 0).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

/// Records of every listed split file, in the given order.
pub fn load_records(inputs: &[(Split, PathBuf)]) -> Result<(Vec<UtteranceRecord>, Vec<SplitRowError>), PipelineError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (split, path) in inputs {
        let reader = formats::open(path)?;
        let (recs, errs) =
            parse_records(reader, *split).map_err(|source| PipelineError::Records { path: path.clone(), source })?;
        records.extend(recs);
        errors.extend(errs.into_iter().map(|error| SplitRowError { split: *split, error }));
    }
    Ok((records, errors))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitRowError {
    pub split: Split,
    #[serde(flatten)]
    pub error: RowError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialogueFailure {
    pub dialogue: DialogueKey,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedChar {
    pub dialogue: DialogueKey,
    pub clip: ClipId,
    pub character: char,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RealignReport {
    pub row_errors: Vec<SplitRowError>,
    pub overrides: OverrideReport,
    /// Dialogues without a posterior file; their utterances get no EDL row.
    pub missing_posteriors: Vec<DialogueKey>,
    /// Fatal per-dialogue errors.
    pub failures: Vec<DialogueFailure>,
    pub dropped_chars: Vec<DroppedChar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealignOutput {
    pub edl: Vec<EdlRow>,
    pub timelines: Vec<DialogueTimeline>,
    pub report: RealignReport,
}

enum DialogueResult {
    Done(DialogueRealignment),
    Missing,
    Failed(String),
}

/// Overrides, grouping and realignment of every dialogue. `posteriors`
/// returns `None` when a dialogue has no posterior file. If `vocab` is
/// given, every posterior file must use exactly that vocabulary.
pub fn realign_records<F>(
    records: Vec<UtteranceRecord>,
    overrides: &OverrideList,
    posteriors: F,
    vocab: Option<&Vocabulary>,
    config: &RunConfig,
) -> RealignOutput
where
    F: Fn(DialogueKey) -> Option<Result<PosteriorMatrix, FormatError>> + Sync,
{
    let (records, override_report) = apply_overrides(records, overrides);
    let dialogues = group_dialogues(&records);
    let realign = config.realign();
    let results: Vec<DialogueResult> = dialogues
        .par_iter()
        .map(|d| match posteriors(d.key) {
            None => DialogueResult::Missing,
            Some(Err(e)) => DialogueResult::Failed(e.to_string()),
            Some(Ok(post)) => {
                if let Some(v) = vocab {
                    if v != post.vocab() {
                        return DialogueResult::Failed("posterior vocabulary differs from the vocabulary file".into());
                    }
                }
                match realign_dialogue(d, &post, &realign) {
                    Ok(r) => DialogueResult::Done(r),
                    Err(e) => DialogueResult::Failed(e.to_string()),
                }
            }
        })
        .collect();

    let mut out = RealignOutput {
        edl: Vec::new(),
        timelines: Vec::new(),
        report: RealignReport { overrides: override_report, ..RealignReport::default() },
    };
    for (d, result) in dialogues.iter().zip(results) {
        match result {
            DialogueResult::Done(r) => {
                out.edl.extend(r.rows);
                out.timelines.push(r.timeline);
                out.report.dropped_chars.extend(r.dropped_chars.into_iter().map(|(clip, character)| DroppedChar {
                    dialogue: d.key,
                    clip,
                    character,
                }));
            }
            DialogueResult::Missing => out.report.missing_posteriors.push(d.key),
            DialogueResult::Failed(message) => out.report.failures.push(DialogueFailure { dialogue: d.key, message }),
        }
    }
    out
}

/// Posterior lookup under `<dir>/<split>/<dialogue_id>.ctcp`.
pub fn posterior_dir_loader(
    dir: &Path,
) -> impl Fn(DialogueKey) -> Option<Result<PosteriorMatrix, FormatError>> + Sync + '_ {
    move |key| {
        let path = formats::posterior_path(dir, key);
        if !path.exists() {
            return None;
        }
        Some(formats::open(&path).and_then(formats::read_posteriors).and_then(|(found, post)| {
            if found == key {
                Ok(post)
            } else {
                Err(FormatError::Stream(std::io::Error::other(format!("{} holds dialogue {found}", path.display()))))
            }
        }))
    }
}

/// One face of the localised speaker, with its crop reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRef {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub score: f64,
    pub speaking: bool,
    pub crop: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocaliseOutcome {
    Speaker,
    NoActiveSpeaker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocaliseRecord {
    pub split: Split,
    pub dialogue_id: u32,
    pub utterance_id: u32,
    pub outcome: LocaliseOutcome,
    pub retained: Vec<u32>,
    pub faces: Vec<FaceRef>,
}

impl LocaliseRecord {
    pub fn key(&self) -> UtteranceKey {
        UtteranceKey { split: self.split, dialogue_id: self.dialogue_id, utterance_id: self.utterance_id }
    }
}

/// Tracks, fusion, conflict removal and assembly for one realigned cut.
pub fn localise_clip(
    key: UtteranceKey,
    detections: &[FrameDetections],
    scores: &[ScoreLine],
    cuts: Option<&[CutInterval]>,
    config: &RunConfig,
) -> Result<LocaliseRecord, FusionError> {
    let given = cuts.unwrap_or(&[]);
    let tracks = link_detections_within_cuts(detections, config.theta, given);
    let inferred;
    let cuts = match cuts {
        Some(c) => c,
        None if config.cut_fallback => {
            inferred = infer_cuts(&tracks);
            &inferred
        }
        None => &[],
    };
    let outcome = localise_tracks(&tracks, scores, cuts, config.exact_group_limit)?;
    let base = LocaliseRecord {
        split: key.split,
        dialogue_id: key.dialogue_id,
        utterance_id: key.utterance_id,
        outcome: LocaliseOutcome::NoActiveSpeaker,
        retained: Vec::new(),
        faces: Vec::new(),
    };
    Ok(match outcome {
        Localisation::NoActiveSpeaker => base,
        Localisation::Speaker(r) => LocaliseRecord {
            outcome: LocaliseOutcome::Speaker,
            retained: r.retained,
            faces: r
                .faces
                .into_iter()
                .map(|f| FaceRef {
                    frame: f.frame,
                    track_id: f.track_id,
                    bbox: f.bbox,
                    score: f.score,
                    speaking: f.speaking,
                    crop: face_crop_path(&key, f.frame),
                })
                .collect(),
            ..base
        },
    })
}

/// `<dir>/<split>/<dia>/<utt>/`
pub fn clip_dir(dir: &Path, key: UtteranceKey) -> PathBuf {
    dir.join(key.split.as_str()).join(key.dialogue_id.to_string()).join(key.utterance_id.to_string())
}

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const CUTS_FILE: &str = "cuts.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LocaliseReport {
    /// Aligned utterances without a detections or scores file.
    pub missing_inputs: Vec<UtteranceKey>,
    /// Unreadable inputs or inconsistent score arrays.
    pub failures: Vec<(UtteranceKey, String)>,
}

/// Localises every aligned EDL row from `<media>/<split>/<dia>/<utt>/`.
pub fn localise_rows(rows: &[EdlRow], media: &Path, config: &RunConfig) -> (Vec<LocaliseRecord>, LocaliseReport) {
    enum Item {
        Done(LocaliseRecord),
        Missing(UtteranceKey),
        Failed(UtteranceKey, String),
    }
    let items: Vec<Item> = rows
        .par_iter()
        .filter(|r| r.status == SpanStatus::Aligned)
        .map(|r| {
            let key = UtteranceKey { split: r.split, dialogue_id: r.dialogue_id, utterance_id: r.utterance_id };
            let dir = clip_dir(media, key);
            let (det_path, score_path, cut_path) =
                (dir.join(DETECTIONS_FILE), dir.join(SCORES_FILE), dir.join(CUTS_FILE));
            if !det_path.exists() || !score_path.exists() {
                return Item::Missing(key);
            }
            let loaded = (|| -> Result<_, FormatError> {
                let detections = formats::read_detections(formats::open(&det_path)?)?;
                let scores = formats::read_scores(formats::open(&score_path)?)?;
                let cuts = if cut_path.exists() { Some(formats::read_cuts(formats::open(&cut_path)?)?) } else { None };
                Ok((detections, scores, cuts))
            })();
            match loaded {
                Err(e) => Item::Failed(key, e.to_string()),
                Ok((detections, scores, cuts)) => {
                    match localise_clip(key, &detections, &scores, cuts.as_deref(), config) {
                        Ok(rec) => Item::Done(rec),
                        Err(e) => Item::Failed(key, e.to_string()),
                    }
                }
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut report = LocaliseReport::default();
    for item in items {
        match item {
            Item::Done(r) => records.push(r),
            Item::Missing(k) => report.missing_inputs.push(k),
            Item::Failed(k, m) => report.failures.push((k, m)),
        }
    }
    (records, report)
}

/// Manifest over the records as read (before overrides).
pub fn manifest_from(records: &[UtteranceRecord], edl: &[EdlRow], localised: &[LocaliseRecord]) -> Vec<ManifestEntry> {
    let counts: BTreeMap<UtteranceKey, usize> =
        localised.iter().filter(|l| l.outcome == LocaliseOutcome::Speaker).map(|l| (l.key(), l.faces.len())).collect();
    build_manifest(records, edl, &counts)
}

/// Run metadata written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub entries: usize,
}

impl ManifestMeta {
    pub fn new(config: &RunConfig, entries: usize) -> Self {
        ManifestMeta {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            entries,
        }
    }
}

/// `manifest.jsonl` gets `manifest.meta.json`.
pub fn meta_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("meta.json")
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry], config: &RunConfig) -> Result<(), FormatError> {
    formats::write_jsonl(formats::create(path)?, entries)?;
    formats::write_json(formats::create(&meta_path(path))?, &ManifestMeta::new(config, entries.len()))
}
