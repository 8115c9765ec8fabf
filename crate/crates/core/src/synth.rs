//! Seeded synthetic inputs with known answers: posteriors tracing a chosen
//! CTC path, dialogues laid out on a timeline, face detection streams and
//! ASD score streams with a known active speaker.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctcseg::{log_sum_exp, min_frames, PosteriorError, PosteriorMatrix};
use crate::fusion::{ScoreLine, PHI_VALUES};
use crate::schema::{parse_timestamp, Dialogue, Emotion, Sentiment, Split, UtteranceRecord};
use crate::timeline::{build_timeline, ClipId};
use crate::tracks::{BBox, CutInterval, FaceDetection, FaceTrack, FrameDetections, TrackEntry};
use crate::transcript::{concat_transcripts, Vocabulary, BLANK};

/// Logit of the path symbol in each synthetic row; every other symbol gets 0.
pub const PEAK_LOGIT: f64 = 8.0;

/// Below this noise amplitude the embedded path is the unique optimum: a
/// frame leaving the path loses at least `PEAK_LOGIT - 2 * noise`.
pub const NOISE_THRESHOLD: f64 = PEAK_LOGIT / 2.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frame_duration_ms: f64,
    /// Half-width of the uniform noise added to every logit.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { frame_duration_ms: 20.0, noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("frame budget {budget} is below the {required} frames the transcript needs")]
    Budget { budget: usize, required: usize },
    #[error("utterance {dialogue_id}/{utterance_id} has {frames} frames but needs {required}")]
    Window { dialogue_id: u32, utterance_id: u32, frames: usize, required: usize },
    #[error("no utterance has any alignable text")]
    Empty,
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}

/// Embedded boundaries of one utterance, in posterior frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceTruth {
    pub clip: ClipId,
    /// First frame of the first character.
    pub first_frame: usize,
    /// First frame of the last character.
    pub last_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDialogue {
    pub posteriors: PosteriorMatrix,
    pub truth: Vec<UtteranceTruth>,
    /// Symbol traced at each frame.
    pub path: Vec<u32>,
    pub noise: f64,
}

/// Lays `tokens` over `len` frames as a random valid CTC path. Every token
/// gets at least one frame and equal neighbours get a blank between them;
/// the remaining frames go to token stays and blank gaps at random.
/// Returns the frame symbols and each token's first frame.
fn place_tokens<R: Rng>(tokens: &[u32], len: usize, rng: &mut R) -> Option<(Vec<u32>, Vec<usize>)> {
    let n = tokens.len();
    // slot 2k is the gap before token k, slot 2k+1 is token k
    let mut sizes = vec![0usize; 2 * n + 1];
    for k in 0..n {
        sizes[2 * k + 1] = 1;
        if k + 1 < n && tokens[k] == tokens[k + 1] {
            sizes[2 * k + 2] = 1;
        }
    }
    let need: usize = sizes.iter().sum();
    if need > len {
        return None;
    }
    for _ in 0..len - need {
        let slot = rng.gen_range(0..sizes.len());
        sizes[slot] += 1;
    }
    let mut symbols = Vec::with_capacity(len);
    let mut starts = Vec::with_capacity(n);
    for (slot, &size) in sizes.iter().enumerate() {
        if slot % 2 == 1 {
            starts.push(symbols.len());
            symbols.extend(core::iter::repeat_n(tokens[slot / 2], size));
        } else {
            symbols.extend(core::iter::repeat_n(BLANK, size));
        }
    }
    Some((symbols, starts))
}

/// Log-softmax rows peaked on `symbols`, with uniform logit noise.
pub fn posteriors_from_path<R: Rng>(
    symbols: &[u32],
    vocab: &Vocabulary,
    frame_duration_ms: f64,
    noise: f64,
    rng: &mut R,
) -> Result<PosteriorMatrix, PosteriorError> {
    let v = vocab.len();
    let mut logprobs = Vec::with_capacity(symbols.len() * v);
    let mut logits = vec![0.0f64; v];
    for &s in symbols {
        for (k, l) in logits.iter_mut().enumerate() {
            let base = if k as u32 == s { PEAK_LOGIT } else { 0.0 };
            let jitter = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
            *l = base + jitter;
        }
        let lse = log_sum_exp(logits.iter().copied());
        logprobs.extend(logits.iter().map(|&l| (l - lse) as f32));
    }
    PosteriorMatrix::new(vocab.clone(), frame_duration_ms, logprobs)
}

/// Posteriors for the concatenated `texts` spread over `frame_budget`
/// frames, with no timeline. Utterance `i` is reported as clip `(0, i)`.
pub fn gen_posteriors<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocabulary,
    frame_budget: usize,
    config: &SynthConfig,
    seed: u64,
) -> Result<SyntheticDialogue, SynthError> {
    let clips = texts.iter().enumerate().map(|(i, t)| (ClipId { dialogue_id: 0, utterance_id: i as u32 }, t.as_ref()));
    let transcript = concat_transcripts(clips, vocab).map_err(|_| SynthError::Empty)?;
    let required = min_frames(&transcript.chars);
    let mut rng = rng(seed);
    let (path, starts) = place_tokens(&transcript.chars, frame_budget, &mut rng)
        .ok_or(SynthError::Budget { budget: frame_budget, required })?;
    let truth = transcript
        .bounds
        .iter()
        .map(|b| UtteranceTruth { clip: b.clip, first_frame: starts[b.first], last_frame: starts[b.last] })
        .collect();
    let posteriors = posteriors_from_path(&path, vocab, config.frame_duration_ms, config.noise, &mut rng)?;
    Ok(SyntheticDialogue { posteriors, truth, path, noise: config.noise })
}

/// Posteriors for a real dialogue layout: each utterance's path (start
/// marker, characters, end marker) is placed inside the frames its timeline
/// segment fully covers, leaving that window's last frame blank. Silence and
/// everything between windows is blank.
pub fn embed_dialogue(
    dialogue: &Dialogue,
    vocab: &Vocabulary,
    config: &SynthConfig,
    seed: u64,
) -> Result<SyntheticDialogue, SynthError> {
    let timeline = build_timeline(dialogue);
    let fd = config.frame_duration_ms;
    let texts = timeline.utterance_segments().filter_map(|s| {
        let clip = s.clip()?;
        let rec = dialogue.utterances.iter().find(|u| u.clip() == clip)?;
        Some((clip, rec.text.as_str()))
    });
    let transcript = concat_transcripts(texts, vocab).map_err(|_| SynthError::Empty)?;
    let total_frames = libm::ceil(timeline.total_ms as f64 / fd) as usize;
    let mut path = vec![BLANK; total_frames.max(1)];
    let mut truth = Vec::with_capacity(transcript.bounds.len());
    let mut rng = rng(seed);

    for b in &transcript.bounds {
        let seg = timeline.utterance_segments().find(|s| s.clip() == Some(b.clip)).expect("bound has a segment");
        let w0 = libm::ceil(seg.global_start_ms as f64 / fd) as usize;
        let w1 = (libm::floor(seg.global_end_ms as f64 / fd) as usize).min(path.len());
        let frames = w1.saturating_sub(w0).saturating_sub(1);
        let tokens = &transcript.chars[b.first - 1..=b.last + 1];
        let (symbols, starts) = place_tokens(tokens, frames, &mut rng).ok_or(SynthError::Window {
            dialogue_id: b.clip.dialogue_id,
            utterance_id: b.clip.utterance_id,
            frames,
            required: min_frames(tokens),
        })?;
        path[w0..w0 + frames].copy_from_slice(&symbols);
        truth.push(UtteranceTruth {
            clip: b.clip,
            first_frame: w0 + starts[1],
            last_frame: w0 + starts[tokens.len() - 2],
        });
    }
    let posteriors = posteriors_from_path(&path, vocab, fd, config.noise, &mut rng)?;
    Ok(SyntheticDialogue { posteriors, truth, path, noise: config.noise })
}

/// The six-utterance excerpt with overlapping and gapped clips used
/// throughout the tests (season 8, episode 21).
pub fn excerpt_records() -> Vec<UtteranceRecord> {
    let rows = [
        (5, "0:16:41.126", "0:16:44.337", "Now you'll be heading a whole division, so you'll have a lot of duties."),
        (6, "0:16:48.800", "0:16:51.886", "I see."),
        (
            7,
            "0:16:48.800",
            "0:16:54.514",
            "But there'll be perhaps 30 people under you, so you can dump a certain amount on them.",
        ),
        (8, "0:16:59.477", "0:17:00.478", "Good to know."),
        (9, "0:17:00.478", "0:17:02.719", "We can go into detail."),
        (10, "0:17:02.856", "0:17:04.858", "No, don't. I beg of you!"),
    ];
    rows.iter()
        .map(|&(utt, start, end, text)| UtteranceRecord {
            split: Split::Train,
            dialogue_id: 0,
            utterance_id: utt,
            speaker: "Chandler".to_string(),
            emotion: Emotion::Neutral,
            sentiment: Sentiment::Neutral,
            season: 8,
            episode: 21,
            start_ms: parse_timestamp(start).expect("valid clock"),
            end_ms: parse_timestamp(end).expect("valid clock"),
            text: text.to_string(),
            placed_in: None,
        })
        .collect()
}

const WORDS: [&str; 24] = [
    "hello",
    "there",
    "how",
    "are",
    "you",
    "i",
    "know",
    "what",
    "did",
    "that",
    "okay",
    "no",
    "yeah",
    "coffee",
    "we",
    "were",
    "on",
    "a",
    "break",
    "look",
    "it's",
    "fine",
    "really",
    "seriously",
];

const SPEAKERS: [&str; 8] = ["Rachel", "Monica", "Phoebe", "Joey", "Chandler", "Ross", "Gunther", "Janice"];

/// Random records for one dialogue with gaps, touching clips and partial
/// overlaps. Clips are long enough for their text at `frame_duration_ms`.
pub fn gen_dialogue(
    seed: u64,
    split: Split,
    dialogue_id: u32,
    utterances: u32,
    frame_duration_ms: f64,
) -> Vec<UtteranceRecord> {
    let mut rng = rng(seed);
    let mut cursor: u64 = rng.gen_range(10_000..600_000);
    let mut out = Vec::with_capacity(utterances as usize);
    for utterance_id in 0..utterances {
        let n_words = rng.gen_range(1..=7);
        let mut text = String::new();
        for w in 0..n_words {
            if w > 0 {
                text.push(' ');
            }
            let word = WORDS[rng.gen_range(0..WORDS.len())];
            if w == 0 {
                let mut cs = word.chars();
                if let Some(c) = cs.next() {
                    text.extend(c.to_uppercase());
                    text.push_str(cs.as_str());
                }
            } else {
                text.push_str(word);
            }
        }
        text.push(['.', '?', '!', ','][rng.gen_range(0..4)]);
        let chars = text.chars().count() as f64;
        let per_char = rng.gen_range(3.0..6.0);
        let len = ((chars + 4.0) * per_char * frame_duration_ms) as u64 + 8 * frame_duration_ms as u64;
        let gap: i64 = match rng.gen_range(0..4) {
            0 => 0,
            1 => -(rng.gen_range(1..=(len / 5).max(2)) as i64),
            2 => rng.gen_range(1..250),
            _ => rng.gen_range(250..2_000),
        };
        let start = if utterance_id == 0 { cursor } else { (cursor as i64 + gap).max(0) as u64 };
        let (emotion, sentiment) = match rng.gen_range(0..Emotion::ALL.len()) {
            i @ 0 => (Emotion::ALL[i], Sentiment::Neutral),
            i @ (1 | 2) => (Emotion::ALL[i], Sentiment::Positive),
            i => (Emotion::ALL[i], Sentiment::Negative),
        };
        out.push(UtteranceRecord {
            split,
            dialogue_id,
            utterance_id,
            speaker: SPEAKERS[rng.gen_range(0..SPEAKERS.len())].to_string(),
            emotion,
            sentiment,
            season: rng.gen_range(1..=10),
            episode: rng.gen_range(1..=24),
            start_ms: start,
            end_ms: start + len,
            text,
            placed_in: None,
        });
        cursor = start + len;
    }
    out
}

/// Face size in pixels for scenario fixtures.
pub const FACE_SIZE: f64 = 100.0;

/// Frames per scenario video.
pub const SCENARIO_FRAMES: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackScenario {
    /// One speaking face plus `silent_faces` faces that never speak.
    SingleSpeaker { silent_faces: usize },
    /// Three faces over the whole video, each speaking on ten frames.
    TriangleConflict,
    /// The speaking face stays put across a camera cut, next to a silent
    /// face. Both are split into one track per cut.
    StraddlesCut,
    /// A speaker, one face with a few spurious positive frames that
    /// overlaps it in time, and `silent_faces` more.
    FalsePositive { silent_faces: usize },
    /// Nobody speaks.
    Silent { faces: usize },
}

/// Active speaker implied by a scenario: retained track ids and the
/// `(frame, track_id)` of every face in the assembled sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedSpeaker {
    pub retained: Vec<u32>,
    pub faces: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFixture {
    pub detections: Vec<FrameDetections>,
    pub scores: Vec<ScoreLine>,
    pub cuts: Vec<CutInterval>,
    /// Ground-truth tracks with the ids the linker assigns.
    pub tracks: Vec<FaceTrack>,
    pub expected: Option<ExpectedSpeaker>,
}

struct FacePlan {
    x: f64,
    y: f64,
    frames: Range<u32>,
    speaking: Vec<bool>,
    role: Role,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Speaker,
    Other,
}

fn plan(slot: usize, frames: Range<u32>, speaking: impl Fn(u32) -> bool, role: Role) -> FacePlan {
    FacePlan { x: 20.0 + 150.0 * slot as f64, y: 60.0, speaking: frames.clone().map(speaking).collect(), frames, role }
}

fn random_span<R: Rng>(rng: &mut R, min_len: u32) -> Range<u32> {
    let start = rng.gen_range(0..SCENARIO_FRAMES - min_len);
    let end = rng.gen_range(start + min_len..=SCENARIO_FRAMES);
    start..end
}

fn pick_frames<R: Rng>(rng: &mut R, span: Range<u32>, count: usize) -> Vec<u32> {
    let mut all: Vec<u32> = span.collect();
    all.shuffle(rng);
    all.truncate(count);
    all
}

/// Detections, per-φ scores, cuts and the expected active speaker for a
/// scenario. Scores are `±1` per frame plus uniform noise in `±0.5`, so the
/// fused sign always matches the planned speaking flag.
pub fn gen_tracks(scenario: TrackScenario, seed: u64) -> TrackFixture {
    let mut rng = rng(seed);
    let full = 0..SCENARIO_FRAMES;
    let mut cuts = Vec::new();
    let mut plans = Vec::new();
    match scenario {
        TrackScenario::SingleSpeaker { silent_faces } => {
            let talk = rng.gen_range(5..20)..rng.gen_range(30..SCENARIO_FRAMES);
            plans.push(plan(0, full.clone(), |f| talk.contains(&f), Role::Speaker));
            for k in 0..silent_faces {
                let span = random_span(&mut rng, 5);
                plans.push(plan(k + 1, span, |_| false, Role::Other));
            }
        }
        TrackScenario::TriangleConflict => {
            for k in 0..3 {
                let on = pick_frames(&mut rng, full.clone(), 10);
                plans.push(plan(k, full.clone(), |f| on.contains(&f), Role::Other));
            }
        }
        TrackScenario::StraddlesCut => {
            let cut = SCENARIO_FRAMES / 2;
            cuts = vec![
                CutInterval { start_frame: 0, end_frame: cut - 1 },
                CutInterval { start_frame: cut, end_frame: SCENARIO_FRAMES - 1 },
            ];
            let talk = rng.gen_range(2..cut - 5)..rng.gen_range(cut + 5..SCENARIO_FRAMES);
            plans.push(plan(0, 0..cut, |f| talk.contains(&f), Role::Speaker));
            plans.push(plan(0, cut..SCENARIO_FRAMES, |f| talk.contains(&f), Role::Speaker));
            plans.push(plan(1, 0..cut, |_| false, Role::Other));
            plans.push(plan(1, cut..SCENARIO_FRAMES, |_| false, Role::Other));
        }
        TrackScenario::FalsePositive { silent_faces } => {
            let count = rng.gen_range(20..40);
            let on = pick_frames(&mut rng, full.clone(), count);
            plans.push(plan(0, full.clone(), |f| on.contains(&f), Role::Speaker));
            let span = random_span(&mut rng, 10);
            let count = rng.gen_range(1..=5);
            let spurious = pick_frames(&mut rng, span.clone(), count);
            plans.push(plan(1, span, |f| spurious.contains(&f), Role::Other));
            for k in 0..silent_faces {
                let span = random_span(&mut rng, 5);
                plans.push(plan(k + 2, span, |_| false, Role::Other));
            }
        }
        TrackScenario::Silent { faces } => {
            for k in 0..faces {
                let span = random_span(&mut rng, 5);
                plans.push(plan(k, span, |_| false, Role::Other));
            }
        }
    }

    // boxes, jittered by up to 2 px around the planned position
    let mut planned: Vec<(Vec<TrackEntry>, &FacePlan)> = plans
        .iter()
        .map(|p| {
            let entries = p
                .frames
                .clone()
                .map(|frame| {
                    let dx = rng.gen_range(-2.0..=2.0);
                    let dy = rng.gen_range(-2.0..=2.0);
                    let x1 = p.x + dx;
                    let y1 = p.y + dy;
                    TrackEntry {
                        frame,
                        bbox: BBox::new(x1, y1, x1 + FACE_SIZE, y1 + FACE_SIZE),
                        confidence: rng.gen_range(0.6..1.0),
                    }
                })
                .collect();
            (entries, p)
        })
        .collect();
    sort_like_linker(&mut planned, |(e, _)| e);

    let mut tracks = Vec::with_capacity(planned.len());
    let mut scores = Vec::new();
    for (id, (entries, p)) in planned.iter().enumerate() {
        let id = id as u32;
        for &phi in &PHI_VALUES {
            let line = p.speaking.iter().map(|&s| if s { 1.0 } else { -1.0 } + rng.gen_range(-0.5..=0.5)).collect();
            scores.push(ScoreLine { track_id: id, phi, scores: line });
        }
        tracks.push(FaceTrack { track_id: id, entries: entries.clone() });
    }

    let expected = expected_speaker(scenario, &planned);
    TrackFixture { detections: detections_of(&tracks, SCENARIO_FRAMES, &mut rng), scores, cuts, tracks, expected }
}

fn expected_speaker(scenario: TrackScenario, planned: &[(Vec<TrackEntry>, &FacePlan)]) -> Option<ExpectedSpeaker> {
    let retained: Vec<u32> = match scenario {
        TrackScenario::Silent { .. } => return None,
        // equal speaking counts in one group: the lowest id survives
        TrackScenario::TriangleConflict => vec![0],
        _ => planned.iter().enumerate().filter(|(_, (_, p))| p.role == Role::Speaker).map(|(i, _)| i as u32).collect(),
    };
    let mut faces: Vec<(u32, u32)> =
        retained.iter().flat_map(|&id| planned[id as usize].0.iter().map(move |e| (e.frame, id))).collect();
    faces.sort_unstable();
    Some(ExpectedSpeaker { retained, faces })
}

fn sort_like_linker<T>(items: &mut [T], entries: impl Fn(&T) -> &Vec<TrackEntry>) {
    items.sort_by(|a, b| {
        let (a, b) = (&entries(a)[0], &entries(b)[0]);
        a.frame.cmp(&b.frame).then(a.bbox.x1.total_cmp(&b.bbox.x1)).then(a.bbox.y1.total_cmp(&b.bbox.y1))
    });
}

/// One line per frame in `0..frames`, detections shuffled within a frame.
fn detections_of<R: Rng>(tracks: &[FaceTrack], frames: u32, rng: &mut R) -> Vec<FrameDetections> {
    let mut out: Vec<FrameDetections> =
        (0..frames).map(|frame| FrameDetections { frame, detections: Vec::new() }).collect();
    for t in tracks {
        for e in &t.entries {
            out[e.frame as usize].detections.push(FaceDetection { bbox: e.bbox, confidence: e.confidence });
        }
    }
    for f in &mut out {
        f.detections.shuffle(rng);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStream {
    pub frames: Vec<FrameDetections>,
    /// Ground truth, ids assigned like the linker does.
    pub truth: Vec<FaceTrack>,
}

/// Up to `max_faces` faces drifting over a 640x360 frame, each visible for
/// one random interval. Faces may come close to each other, so callers
/// decide whether a stream is unambiguous.
pub fn gen_detection_stream(seed: u64, max_faces: usize, frames: u32) -> DetectionStream {
    let mut rng = rng(seed);
    let faces = rng.gen_range(1..=max_faces.max(1));
    let mut tracks: Vec<Vec<TrackEntry>> = Vec::with_capacity(faces);
    for _ in 0..faces {
        let size = rng.gen_range(50.0..110.0);
        let mut x = rng.gen_range(0.0..640.0 - size);
        let mut y = rng.gen_range(0.0..360.0 - size);
        let (vx, vy) = (rng.gen_range(-1.5..=1.5), rng.gen_range(-1.5..=1.5));
        let start = rng.gen_range(0..frames);
        let end = rng.gen_range(start + 1..=frames);
        let entries = (start..end)
            .map(|frame| {
                x += vx + rng.gen_range(-1.0..=1.0);
                y += vy + rng.gen_range(-1.0..=1.0);
                TrackEntry { frame, bbox: BBox::new(x, y, x + size, y + size), confidence: rng.gen_range(0.5..1.0) }
            })
            .collect();
        tracks.push(entries);
    }
    sort_like_linker(&mut tracks, |e| e);
    let truth: Vec<FaceTrack> =
        tracks.into_iter().enumerate().map(|(i, entries)| FaceTrack { track_id: i as u32, entries }).collect();
    DetectionStream { frames: detections_of(&truth, frames, &mut rng), truth }
}

/// Human-readable scenario name, used in reports.
pub fn scenario_name(scenario: TrackScenario) -> String {
    match scenario {
        TrackScenario::SingleSpeaker { silent_faces } => format!("single speaker, {silent_faces} silent"),
        TrackScenario::TriangleConflict => "triangle conflict".to_string(),
        TrackScenario::StraddlesCut => "speaker across a cut".to_string(),
        TrackScenario::FalsePositive { silent_faces } => format!("false positive, {silent_faces} silent"),
        TrackScenario::Silent { faces } => format!("{faces} silent faces"),
    }
}
