//! Synthetic end-to-end check: generated dialogues, posteriors and face
//! media are written to disk, run through realign, localise and manifest
//! from those files, and compared against the embedded ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use meldfair_core::schema::{group_dialogues, DialogueKey, OverrideList, Split, UtteranceKey, UtteranceRecord};
use meldfair_core::synth::{
    embed_dialogue, gen_dialogue, gen_tracks, scenario_name, ExpectedSpeaker, SynthConfig, SynthError, TrackScenario,
    UtteranceTruth,
};
use meldfair_core::transcript::Vocabulary;
use meldfair_core::SpanStatus;
use serde::Serialize;

use crate::formats::{self, FormatError};
use crate::pipeline::{
    clip_dir, load_records, localise_rows, manifest_from, posterior_dir_loader, realign_records, with_pool,
    LocaliseOutcome, LocaliseRecord, PipelineError, RunConfig, CUTS_FILE, DETECTIONS_FILE, SCORES_FILE,
};
use crate::records::{write_records, RecordsError};

pub const SCENARIOS: [TrackScenario; 6] = [
    TrackScenario::SingleSpeaker { silent_faces: 0 },
    TrackScenario::SingleSpeaker { silent_faces: 2 },
    TrackScenario::TriangleConflict,
    TrackScenario::StraddlesCut,
    TrackScenario::FalsePositive { silent_faces: 1 },
    TrackScenario::Silent { faces: 2 },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthCheckConfig {
    pub dialogues: u32,
    pub noise: f64,
    pub seed: u64,
    pub frame_duration_ms: f64,
    /// Worker threads, 0 for all cores.
    pub jobs: usize,
    pub run: RunConfig,
}

impl Default for SynthCheckConfig {
    fn default() -> Self {
        SynthCheckConfig {
            dialogues: 20,
            noise: 0.1,
            seed: 0,
            frame_duration_ms: 20.0,
            jobs: 0,
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthCheckError {
    #[error("dialogue {dialogue}: {source}")]
    Generate { dialogue: DialogueKey, source: SynthError },
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Ground truth for one generated utterance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceExpectation {
    pub key: UtteranceKey,
    pub boundaries: UtteranceTruth,
    pub scenario: String,
    pub speaker: Option<ExpectedSpeaker>,
}

/// Paths of the generated inputs and the stage outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkLayout {
    pub records: Vec<(Split, PathBuf)>,
    pub vocab: PathBuf,
    pub posteriors: PathBuf,
    pub media: PathBuf,
    pub truth: PathBuf,
    pub edl: PathBuf,
    pub localised: PathBuf,
    pub manifest: PathBuf,
}

impl WorkLayout {
    pub fn new(work: &Path) -> Self {
        WorkLayout {
            records: Split::ALL
                .iter()
                .map(|s| (*s, work.join("records").join(format!("{}.csv", s.as_str()))))
                .collect(),
            vocab: work.join("vocab.json"),
            posteriors: work.join("posteriors"),
            media: work.join("media"),
            truth: work.join("truth.json"),
            edl: work.join("out").join("edl.jsonl"),
            localised: work.join("out").join("localise.jsonl"),
            manifest: work.join("out").join("manifest.jsonl"),
        }
    }
}

fn split_of(i: u32) -> Split {
    Split::ALL[i as usize % Split::ALL.len()]
}

/// Writes records, vocabulary, posteriors and per-utterance media under
/// `work` and returns the truth they embed.
pub fn generate(work: &Path, config: &SynthCheckConfig) -> Result<Vec<UtteranceExpectation>, SynthCheckError> {
    let layout = WorkLayout::new(work);
    let vocab = Vocabulary::wav2vec2_english();
    let synth = SynthConfig { frame_duration_ms: config.frame_duration_ms, noise: config.noise };
    formats::write_vocab(formats::create(&layout.vocab)?, &vocab)?;

    let mut by_split: BTreeMap<Split, Vec<UtteranceRecord>> = BTreeMap::new();
    let mut truth = Vec::new();
    let mut scenario_index = 0usize;
    for i in 0..config.dialogues {
        let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(u64::from(i));
        let split = split_of(i);
        let records = gen_dialogue(seed, split, i, 3 + i % 5, config.frame_duration_ms);
        let dialogue = group_dialogues(&records).pop().expect("one dialogue");
        let embedded = embed_dialogue(&dialogue, &vocab, &synth, seed)
            .map_err(|source| SynthCheckError::Generate { dialogue: dialogue.key, source })?;
        formats::write_posteriors(
            formats::create(&formats::posterior_path(&layout.posteriors, dialogue.key))?,
            dialogue.key,
            &embedded.posteriors,
        )?;

        for b in &embedded.truth {
            let key = UtteranceKey { split, dialogue_id: b.clip.dialogue_id, utterance_id: b.clip.utterance_id };
            let scenario = SCENARIOS[scenario_index % SCENARIOS.len()];
            scenario_index += 1;
            let fx = gen_tracks(scenario, seed ^ (u64::from(b.clip.utterance_id) << 32));
            let dir = clip_dir(&layout.media, key);
            formats::write_detections(formats::create(&dir.join(DETECTIONS_FILE))?, &fx.detections)?;
            formats::write_scores(formats::create(&dir.join(SCORES_FILE))?, &fx.scores)?;
            if !fx.cuts.is_empty() {
                formats::write_cuts(formats::create(&dir.join(CUTS_FILE))?, &fx.cuts)?;
            }
            truth.push(UtteranceExpectation {
                key,
                boundaries: *b,
                scenario: scenario_name(scenario),
                speaker: fx.expected,
            });
        }
        by_split.entry(split).or_default().extend(records);
    }
    for (split, path) in &layout.records {
        write_records(formats::create(path)?, by_split.get(split).map_or(&[][..], Vec::as_slice))?;
    }
    formats::write_json(formats::create(&layout.truth)?, &truth)?;
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialogueCheck {
    pub dialogue: DialogueKey,
    /// Largest boundary error over the dialogue, in frames.
    pub max_frame_error: f64,
    pub boundaries_ok: bool,
    pub speaker_ok: bool,
    pub problems: Vec<String>,
}

impl DialogueCheck {
    pub fn passed(&self) -> bool {
        self.boundaries_ok && self.speaker_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthCheckReport {
    pub dialogues: Vec<DialogueCheck>,
    pub fatal: Vec<String>,
    #[serde(skip)]
    pub manifest: Vec<u8>,
}

impl SynthCheckReport {
    pub fn passed(&self) -> usize {
        self.dialogues.iter().filter(|d| d.passed()).count()
    }
}

/// Generates the fixture under `work`, runs every stage through files and
/// checks the outputs.
pub fn run(work: &Path, config: &SynthCheckConfig) -> Result<SynthCheckReport, SynthCheckError> {
    config.run.validate().map_err(PipelineError::from)?;
    let truth = generate(work, config)?;
    let layout = WorkLayout::new(work);
    let run = &config.run;

    let (records, row_errors) = load_records(&layout.records)?;
    let mut fatal: Vec<String> =
        row_errors.iter().map(|e| format!("{} line {}: {}", e.split, e.error.line, e.error.message)).collect();
    let vocab = formats::read_vocab(formats::open(&layout.vocab)?)?;
    let loader = posterior_dir_loader(&layout.posteriors);
    let realigned = with_pool(config.jobs, || {
        realign_records(records.clone(), &OverrideList::default(), loader, Some(&vocab), run)
    })?;
    fatal.extend(realigned.report.failures.iter().map(|f| format!("{}: {}", f.dialogue, f.message)));
    fatal.extend(realigned.report.missing_posteriors.iter().map(|k| format!("{k}: no posteriors")));
    formats::write_jsonl(formats::create(&layout.edl)?, &realigned.edl)?;

    let edl: Vec<meldfair_core::realign::EdlRow> = formats::read_jsonl(formats::open(&layout.edl)?)?;
    let (localised, loc_report) = with_pool(config.jobs, || localise_rows(&edl, &layout.media, run))?;
    fatal.extend(loc_report.failures.iter().map(|(k, m)| format!("{k}: {m}")));
    fatal.extend(loc_report.missing_inputs.iter().map(|k| format!("{k}: no media")));
    formats::write_jsonl(formats::create(&layout.localised)?, &localised)?;

    let localised: Vec<LocaliseRecord> = formats::read_jsonl(formats::open(&layout.localised)?)?;
    let entries = manifest_from(&records, &edl, &localised);
    crate::pipeline::write_manifest(&layout.manifest, &entries, run)?;
    let manifest =
        std::fs::read(&layout.manifest).map_err(|source| FormatError::Io { path: layout.manifest.clone(), source })?;

    Ok(SynthCheckReport { dialogues: check(&truth, &edl, &localised, config.frame_duration_ms), fatal, manifest })
}

/// Compares EDL boundaries and localisation against the truth, per dialogue.
pub fn check(
    truth: &[UtteranceExpectation],
    edl: &[meldfair_core::realign::EdlRow],
    localised: &[LocaliseRecord],
    frame_duration_ms: f64,
) -> Vec<DialogueCheck> {
    let rows: BTreeMap<UtteranceKey, _> = edl
        .iter()
        .map(|r| (UtteranceKey { split: r.split, dialogue_id: r.dialogue_id, utterance_id: r.utterance_id }, r))
        .collect();
    let locs: BTreeMap<UtteranceKey, &LocaliseRecord> = localised.iter().map(|l| (l.key(), l)).collect();
    let mut out: BTreeMap<DialogueKey, DialogueCheck> = BTreeMap::new();

    for t in truth {
        let dkey = DialogueKey { split: t.key.split, dialogue_id: t.key.dialogue_id };
        let c = out.entry(dkey).or_insert_with(|| DialogueCheck {
            dialogue: dkey,
            max_frame_error: 0.0,
            boundaries_ok: true,
            speaker_ok: true,
            problems: Vec::new(),
        });
        let Some(row) = rows.get(&t.key) else {
            c.boundaries_ok = false;
            c.problems.push(format!("{}: no EDL row", t.key));
            continue;
        };
        match (row.global_start_ms, row.global_end_ms) {
            (Some(s), Some(e)) => {
                let start_err = (s as f64 / frame_duration_ms - t.boundaries.first_frame as f64).abs();
                let end_err = (e as f64 / frame_duration_ms - (t.boundaries.last_frame + 1) as f64).abs();
                let err = start_err.max(end_err);
                c.max_frame_error = c.max_frame_error.max(err);
                // Millisecond rounding adds at most half a millisecond.
                if err > 1.0 + 0.5 / frame_duration_ms {
                    c.boundaries_ok = false;
                    c.problems.push(format!("{}: boundary off by {err:.2} frames", t.key));
                }
            }
            _ => {
                c.boundaries_ok = false;
                c.problems.push(format!("{}: no boundaries ({:?})", t.key, row.status));
            }
        }
        if row.status != SpanStatus::Aligned {
            continue;
        }
        let got = locs.get(&t.key);
        let ok = match (&t.speaker, got) {
            (None, Some(l)) => l.outcome == LocaliseOutcome::NoActiveSpeaker,
            (Some(want), Some(l)) => {
                l.outcome == LocaliseOutcome::Speaker
                    && l.retained == want.retained
                    && l.faces.iter().map(|f| (f.frame, f.track_id)).eq(want.faces.iter().copied())
            }
            (_, None) => false,
        };
        if !ok {
            c.speaker_ok = false;
            c.problems.push(format!("{}: active speaker differs ({})", t.key, t.scenario));
        }
    }
    out.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthCheckConfig { dialogues: 4, jobs: 2, ..SynthCheckConfig::default() };
        let report = run(dir.path(), &config).unwrap();
        assert!(report.fatal.is_empty(), "{:?}", report.fatal);
        assert_eq!(report.dialogues.len(), 4);
        assert_eq!(report.passed(), 4, "{:#?}", report.dialogues);
        assert!(!report.manifest.is_empty());
    }
}
