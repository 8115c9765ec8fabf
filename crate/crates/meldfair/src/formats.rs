//! On-disk formats shared with the model adapters.
//!
//! | file | shape |
//! |---|---|
//! | vocabulary | JSON list of symbols, blank first |
//! | overrides | JSON list of override entries |
//! | posteriors | `CTCP0001`, `u32` LE header length, JSON header, `f32` LE rows |
//! | detections | JSON Lines `{"frame", "boxes": [{"x1","y1","x2","y2","conf"}]}` |
//! | scores | JSON Lines `{"track_id", "phi", "scores"}` |
//! | cuts | JSON list of `{"start_frame", "end_frame"}` |
//! | timelines, EDL, localisation, manifest | JSON Lines |

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use meldfair_core::ctcseg::{PosteriorError, PosteriorMatrix, ROW_NORMALISATION_TOLERANCE};
use meldfair_core::fusion::ScoreLine;
use meldfair_core::schema::{DialogueKey, OverrideList};
use meldfair_core::tracks::{BBox, CutInterval, FaceDetection, FrameDetections};
use meldfair_core::transcript::{VocabError, Vocabulary};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const POSTERIOR_MAGIC: &[u8; 8] = b"CTCP0001";

const DEFAULT_OVERRIDES: &str = include_str!("../data/overrides.json");

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("line {line}: {source}")]
    Line { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("not a posterior file (magic {0:?})")]
    BadMagic([u8; 8]),
    #[error("header declares {header} frames, payload holds {payload}")]
    FrameCount { header: usize, payload: usize },
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("line {line}: box {index} is not a valid box ({reason})")]
    BadBox { line: usize, index: usize, reason: &'static str },
}

pub fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path).map(BufReader::new).map_err(|source| FormatError::Io { path: path.to_owned(), source })
}

/// Creates the file and any missing parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    let io_err = |source| FormatError::Io { path: path.to_owned(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err)
}

/// Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FormatError::Line { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), FormatError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(reader: R) -> Result<T, FormatError> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn write_json<T: Serialize, W: Write>(mut writer: W, value: &T) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn read_vocab<R: Read>(reader: R) -> Result<Vocabulary, FormatError> {
    let symbols: Vec<String> = read_json(reader)?;
    Ok(Vocabulary::new(symbols)?)
}

pub fn write_vocab<W: Write>(writer: W, vocab: &Vocabulary) -> Result<(), FormatError> {
    write_json(writer, &vocab.symbols())
}

pub fn read_overrides<R: Read>(reader: R) -> Result<OverrideList, FormatError> {
    read_json(reader)
}

/// The shipped list of known problem records.
pub fn default_overrides() -> OverrideList {
    serde_json::from_str(DEFAULT_OVERRIDES).expect("shipped override list parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PosteriorHeader {
    frames: usize,
    vocab: Vec<String>,
    frame_duration_ms: f64,
    dialogue_key: DialogueKey,
}

pub fn write_posteriors<W: Write>(mut writer: W, key: DialogueKey, post: &PosteriorMatrix) -> Result<(), FormatError> {
    let header = serde_json::to_vec(&PosteriorHeader {
        frames: post.frames(),
        vocab: post.vocab().symbols().to_vec(),
        frame_duration_ms: post.frame_duration_ms(),
        dialogue_key: key,
    })?;
    writer.write_all(POSTERIOR_MAGIC)?;
    writer.write_all(&(header.len() as u32).to_le_bytes())?;
    writer.write_all(&header)?;
    let mut payload = Vec::with_capacity(post.as_slice().len() * 4);
    for v in post.as_slice() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&payload)?;
    writer.flush()?;
    Ok(())
}

/// Reads a posterior file and checks every row's normalisation.
pub fn read_posteriors<R: Read>(mut reader: R) -> Result<(DialogueKey, PosteriorMatrix), FormatError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != POSTERIOR_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut len = [0u8; 4];
    reader.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    reader.read_exact(&mut header)?;
    let header: PosteriorHeader = serde_json::from_slice(&header)?;
    let vocab = Vocabulary::new(header.vocab)?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let values: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let row_bytes = 4 * vocab.len();
    if payload.len() % row_bytes != 0 || payload.len() / row_bytes != header.frames {
        return Err(FormatError::FrameCount { header: header.frames, payload: payload.len() / row_bytes });
    }
    let post = PosteriorMatrix::new(vocab, header.frame_duration_ms, values)?;
    post.validate(ROW_NORMALISATION_TOLERANCE)?;
    Ok((header.dialogue_key, post))
}

/// `<dir>/<split>/<dialogue_id>.ctcp`
pub fn posterior_path(dir: &Path, key: DialogueKey) -> PathBuf {
    dir.join(key.split.as_str()).join(format!("{}.ctcp", key.dialogue_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BoxLine {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionLine {
    frame: u32,
    boxes: Vec<BoxLine>,
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<FrameDetections>, FormatError> {
    let lines: Vec<DetectionLine> = read_jsonl(reader)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let detections = l
                .boxes
                .iter()
                .enumerate()
                .map(|(index, b)| {
                    let bbox = BBox::new(b.x1, b.y1, b.x2, b.y2);
                    if !bbox.is_valid() {
                        return Err(FormatError::BadBox { line: i + 1, index, reason: "needs x1 < x2 and y1 < y2" });
                    }
                    if !(0.0..=1.0).contains(&b.conf) {
                        return Err(FormatError::BadBox { line: i + 1, index, reason: "confidence outside [0, 1]" });
                    }
                    Ok(FaceDetection { bbox, confidence: b.conf })
                })
                .collect::<Result<_, _>>()?;
            Ok(FrameDetections { frame: l.frame, detections })
        })
        .collect()
}

pub fn write_detections<W: Write>(writer: W, frames: &[FrameDetections]) -> Result<(), FormatError> {
    let lines: Vec<DetectionLine> = frames
        .iter()
        .map(|f| DetectionLine {
            frame: f.frame,
            boxes: f
                .detections
                .iter()
                .map(|d| BoxLine { x1: d.bbox.x1, y1: d.bbox.y1, x2: d.bbox.x2, y2: d.bbox.y2, conf: d.confidence })
                .collect(),
        })
        .collect();
    write_jsonl(writer, &lines)
}

pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<ScoreLine>, FormatError> {
    read_jsonl(reader)
}

pub fn write_scores<W: Write>(writer: W, lines: &[ScoreLine]) -> Result<(), FormatError> {
    write_jsonl(writer, lines)
}

pub fn read_cuts<R: Read>(reader: R) -> Result<Vec<CutInterval>, FormatError> {
    read_json(reader)
}

/// Compact, unlike [`write_json`], to match the adapters' output.
pub fn write_cuts<W: Write>(mut writer: W, cuts: &[CutInterval]) -> Result<(), FormatError> {
    serde_json::to_writer(&mut writer, cuts)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}
