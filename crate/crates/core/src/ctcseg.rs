//! CTC segmentation: maximum joint probability alignment of a known
//! character sequence to frame-level log posteriors, plus the mapping from
//! character emissions to per-utterance time spans.
//!
//! The trellis runs over the blank-expanded sequence
//! `[blank, c1, blank, c2, ..., cN, blank]`. A path may stay in its state,
//! advance by one, or skip a blank when the target is a character that
//! differs from the character two states back. Paths start in the leading
//! blank or the first character and must cover every frame, finishing in
//! the trailing blank or the last character. Scores are max-product in log
//! space.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::timeline::ClipId;
use crate::transcript::{UtteranceBound, Vocabulary, BLANK};

pub const DEFAULT_MIN_SPAN_MS: u64 = 200;
/// Mean per-character log-probability floor, `ln(0.01)`.
pub const DEFAULT_MIN_CONFIDENCE: f64 = -4.605_170_185_988_091;
/// Tolerance on each posterior row's log-sum-exp.
pub const ROW_NORMALISATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PosteriorError {
    #[error("posterior matrix has no frames")]
    NoFrames,
    #[error("frame duration must be positive and finite, got {0}")]
    BadFrameDuration(f64),
    #[error("{actual} log-probabilities do not fill whole rows of {symbols} symbols")]
    Shape { symbols: usize, actual: usize },
    #[error("row {row} log-sum-exp is {lse}, not 0")]
    NotNormalised { row: usize, lse: f64 },
    #[error("row {row} contains NaN or +inf")]
    NonFinite { row: usize },
}

/// Frame x vocabulary table of natural-log posteriors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    vocab: Vocabulary,
    frame_duration_ms: f64,
    frames: usize,
    logprobs: Vec<f32>,
}

impl PosteriorMatrix {
    pub fn new(vocab: Vocabulary, frame_duration_ms: f64, logprobs: Vec<f32>) -> Result<Self, PosteriorError> {
        if !(frame_duration_ms.is_finite() && frame_duration_ms > 0.0) {
            return Err(PosteriorError::BadFrameDuration(frame_duration_ms));
        }
        let symbols = vocab.len();
        if logprobs.is_empty() {
            return Err(PosteriorError::NoFrames);
        }
        let frames = logprobs.len() / symbols;
        if frames * symbols != logprobs.len() {
            return Err(PosteriorError::Shape { symbols, actual: logprobs.len() });
        }
        Ok(PosteriorMatrix { vocab, frame_duration_ms, frames, logprobs })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn frame_duration_ms(&self) -> f64 {
        self.frame_duration_ms
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let v = self.vocab.len();
        &self.logprobs[t * v..(t + 1) * v]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.logprobs
    }

    #[inline]
    pub fn get(&self, t: usize, symbol: u32) -> f64 {
        self.logprobs[t * self.vocab.len() + symbol as usize] as f64
    }

    /// Checks that every row is a log-distribution within `tolerance`.
    pub fn validate(&self, tolerance: f64) -> Result<(), PosteriorError> {
        for t in 0..self.frames {
            let row = self.row(t);
            if row.iter().any(|x| x.is_nan() || *x == f32::INFINITY) {
                return Err(PosteriorError::NonFinite { row: t });
            }
            let lse = log_sum_exp(row.iter().map(|&x| x as f64));
            if lse.is_nan() || libm::fabs(lse) > tolerance {
                return Err(PosteriorError::NotNormalised { row: t, lse });
            }
        }
        Ok(())
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.map(|x| libm::exp(x - max)).sum::<f64>())
}

/// `[blank, c1, blank, ..., cN, blank]`.
pub fn expand_with_blanks(chars: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(2 * chars.len() + 1);
    out.push(BLANK);
    for &c in chars {
        out.push(c);
        out.push(BLANK);
    }
    out
}

/// Frames needed to emit `chars`: one per character plus a separating
/// blank between repeated characters.
pub fn min_frames(chars: &[u32]) -> usize {
    chars.len() + chars.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignError {
    #[error("empty symbol sequence")]
    Empty,
    #[error("no valid alignment: {frames} frames for a sequence needing at least {required}")]
    Infeasible { frames: usize, required: usize },
}

const STAY: u8 = 0;
const STEP: u8 = 1;
const SKIP: u8 = 2;

/// Backpointers packed four to a byte.
struct Backpointers {
    states: usize,
    bits: Vec<u8>,
}

impl Backpointers {
    fn new(frames: usize, states: usize) -> Self {
        Backpointers { states, bits: vec![0; (frames * states).div_ceil(4)] }
    }

    #[inline]
    fn set(&mut self, t: usize, s: usize, code: u8) {
        let i = t * self.states + s;
        let shift = (i % 4) * 2;
        self.bits[i / 4] = (self.bits[i / 4] & !(0b11 << shift)) | (code << shift);
    }

    #[inline]
    fn get(&self, t: usize, s: usize) -> u8 {
        let i = t * self.states + s;
        (self.bits[i / 4] >> ((i % 4) * 2)) & 0b11
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharAlignment {
    /// Expanded-state index occupied at each frame.
    pub path: Vec<u32>,
    /// Per expanded state: frame the path enters it, `None` for skipped
    /// blanks.
    pub first_frame: Vec<Option<usize>>,
    /// Per expanded state: log-probability at its first frame.
    pub symbol_logprob: Vec<Option<f64>>,
    pub total: f64,
    /// Frame at which the last character is emitted.
    pub end_frame: usize,
}

impl CharAlignment {
    /// Emission frame of the `i`-th character of the unexpanded sequence.
    pub fn char_frame(&self, i: usize) -> usize {
        self.first_frame[2 * i + 1].expect("characters are never skipped")
    }

    pub fn char_logprob(&self, i: usize) -> f64 {
        self.symbol_logprob[2 * i + 1].expect("characters are never skipped")
    }

    pub fn char_count(&self) -> usize {
        self.first_frame.len() / 2
    }
}

/// Viterbi alignment of `expanded` (see [`expand_with_blanks`]) to `post`.
///
/// On equal scores the DP prefers staying in the current state, then a
/// single step, then a blank skip; at the last frame the trailing blank is
/// preferred over the last character.
pub fn viterbi_align(post: &PosteriorMatrix, expanded: &[u32]) -> Result<CharAlignment, AlignError> {
    let s_len = expanded.len();
    let t_len = post.frames();
    if s_len == 0 {
        return Err(AlignError::Empty);
    }
    let chars: Vec<u32> = expanded.iter().skip(1).step_by(2).copied().collect();
    let required = min_frames(&chars).max(1);
    let infeasible = AlignError::Infeasible { frames: t_len, required };
    if t_len < required {
        return Err(infeasible);
    }

    let can_skip: Vec<bool> =
        (0..s_len).map(|s| s >= 2 && expanded[s] != BLANK && expanded[s] != expanded[s - 2]).collect();
    let last = s_len - 1;
    let penultimate = last.saturating_sub(1);

    let mut prev = vec![f64::NEG_INFINITY; s_len];
    let mut curr = vec![f64::NEG_INFINITY; s_len];
    let mut bp = Backpointers::new(t_len, s_len);
    prev[0] = post.get(0, expanded[0]);
    if s_len > 1 {
        prev[1] = post.get(0, expanded[1]);
    }

    for t in 1..t_len {
        curr.fill(f64::NEG_INFINITY);
        let hi = (2 * t + 1).min(last);
        let lo = penultimate.saturating_sub(2 * (t_len - 1 - t));
        for s in lo..=hi {
            let mut best = prev[s];
            let mut code = STAY;
            if s >= 1 && prev[s - 1] > best {
                best = prev[s - 1];
                code = STEP;
            }
            if can_skip[s] && prev[s - 2] > best {
                best = prev[s - 2];
                code = SKIP;
            }
            if best > f64::NEG_INFINITY {
                curr[s] = best + post.get(t, expanded[s]);
                bp.set(t, s, code);
            }
        }
        core::mem::swap(&mut prev, &mut curr);
    }

    let mut state = last;
    if s_len >= 2 && prev[penultimate] > prev[last] {
        state = penultimate;
    }
    let total = prev[state];
    if total == f64::NEG_INFINITY {
        return Err(infeasible);
    }

    let mut path = vec![0u32; t_len];
    path[t_len - 1] = state as u32;
    for t in (1..t_len).rev() {
        state -= bp.get(t, state) as usize;
        path[t - 1] = state as u32;
    }

    let mut first_frame = vec![None; s_len];
    let mut symbol_logprob = vec![None; s_len];
    for (t, &s) in path.iter().enumerate() {
        let s = s as usize;
        if first_frame[s].is_none() {
            first_frame[s] = Some(t);
            symbol_logprob[s] = Some(post.get(t, expanded[s]));
        }
    }
    let end_frame = if s_len >= 2 { first_frame[penultimate].unwrap_or(0) } else { 0 };
    Ok(CharAlignment { path, first_frame, symbol_logprob, total, end_frame })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanStatus {
    Aligned,
    DroppedShort,
    DroppedLowConfidence,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedSpan {
    pub clip: ClipId,
    pub global_start_ms: u64,
    pub global_end_ms: u64,
    /// Mean per-character log-probability inside the utterance bound.
    pub confidence: f64,
    pub status: SpanStatus,
}

impl AlignedSpan {
    pub fn len_ms(&self) -> u64 {
        self.global_end_ms.saturating_sub(self.global_start_ms)
    }
}

fn frame_to_ms(frame: usize, frame_duration_ms: f64) -> u64 {
    libm::round(frame as f64 * frame_duration_ms) as u64
}

/// Converts the character alignment into one span per utterance bound:
/// `[first char frame, last char frame + 1) x frame duration`, rounded to
/// the nearest millisecond.
pub fn utterance_spans(align: &CharAlignment, bounds: &[UtteranceBound], frame_duration_ms: f64) -> Vec<AlignedSpan> {
    bounds
        .iter()
        .map(|b| {
            let first = align.char_frame(b.first);
            let last = align.char_frame(b.last);
            let n = (b.last - b.first + 1) as f64;
            let confidence = (b.first..=b.last).map(|i| align.char_logprob(i)).sum::<f64>() / n;
            AlignedSpan {
                clip: b.clip,
                global_start_ms: frame_to_ms(first, frame_duration_ms),
                global_end_ms: frame_to_ms(last + 1, frame_duration_ms),
                confidence,
                status: SpanStatus::Aligned,
            }
        })
        .collect()
}

/// Marks spans shorter than `min_span_ms`, then spans whose confidence is
/// below `min_confidence`. Degenerate spans stay degenerate.
pub fn filter_spans(spans: &[AlignedSpan], min_span_ms: u64, min_confidence: f64) -> Vec<AlignedSpan> {
    spans
        .iter()
        .map(|s| {
            let status = if s.status == SpanStatus::Degenerate {
                SpanStatus::Degenerate
            } else if s.len_ms() < min_span_ms {
                SpanStatus::DroppedShort
            } else if s.confidence < min_confidence {
                SpanStatus::DroppedLowConfidence
            } else {
                SpanStatus::Aligned
            };
            AlignedSpan { status, ..*s }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::{String, ToString};

    fn vocab(n: usize) -> Vocabulary {
        let mut symbols: Vec<String> = vec!["_".to_string(), "|".to_string()];
        for c in ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H'].iter().take(n - 2) {
            symbols.push(c.to_string());
        }
        Vocabulary::new(symbols).unwrap()
    }

    fn matrix(v: &Vocabulary, rows: &[&[f32]]) -> PosteriorMatrix {
        PosteriorMatrix::new(v.clone(), 20.0, rows.concat()).unwrap()
    }

    #[test]
    fn expansion() {
        assert_eq!(expand_with_blanks(&[2]), vec![0, 2, 0]);
        assert_eq!(expand_with_blanks(&[2, 3]), vec![0, 2, 0, 3, 0]);
        assert_eq!(expand_with_blanks(&[2, 2]), vec![0, 2, 0, 2, 0]);
        assert_eq!(min_frames(&[2, 2, 3]), 4);
    }

    #[test]
    fn single_frame_single_char() {
        let v = vocab(3);
        let p = matrix(&v, &[&[f32::NEG_INFINITY, f32::NEG_INFINITY, 0.0]]);
        let a = viterbi_align(&p, &expand_with_blanks(&[2])).unwrap();
        assert_eq!(a.char_frame(0), 0);
        assert_eq!(a.total, 0.0);
        assert_eq!(a.path, vec![1]);
    }

    #[test]
    fn peak_in_the_middle() {
        // Exhaustive enumeration for T = 3 over [_, A, _]: the valid paths
        // are AAA, AA_, A__, _AA, _A_, __A. With blank at 0.9 on frames 0
        // and 2 and A at 0.9 on frame 1, _A_ scores 3 ln 0.9 and every
        // other path has at least one ln 0.1 term.
        let v = vocab(3);
        let hi = libm::logf(0.9);
        let lo = libm::logf(0.1);
        let ni = f32::NEG_INFINITY;
        let p = matrix(&v, &[&[hi, ni, lo], &[lo, ni, hi], &[hi, ni, lo]]);
        let a = viterbi_align(&p, &expand_with_blanks(&[2])).unwrap();
        assert_eq!(a.char_frame(0), 1);
        assert_eq!(a.path, vec![0, 1, 2]);
        assert!((a.total - 3.0 * hi as f64).abs() < 1e-9);
    }

    #[test]
    fn uniform_posteriors() {
        let v = vocab(6);
        let u = -libm::logf(6.0);
        let row = [u; 6];
        let rows: Vec<&[f32]> = (0..7).map(|_| &row[..]).collect();
        let p = matrix(&v, &rows);
        let a = viterbi_align(&p, &expand_with_blanks(&[2, 3, 4])).unwrap();
        assert!((a.total - 7.0 * u as f64).abs() < 1e-9);
        // stay-first backtracking holds the trailing blank as long as
        // possible, so the characters are emitted on the earliest frames
        assert_eq!(a.path, vec![1, 3, 5, 6, 6, 6, 6]);
        assert_eq!((a.char_frame(0), a.char_frame(1), a.char_frame(2)), (0, 1, 2));
    }

    #[test]
    fn repeated_characters_need_a_blank() {
        let v = vocab(3);
        let z = [0.0f32, -1.0, -1.0];
        let p = matrix(&v, &[&z, &z]);
        assert_eq!(
            viterbi_align(&p, &expand_with_blanks(&[2, 2])),
            Err(AlignError::Infeasible { frames: 2, required: 3 })
        );
        let p3 = matrix(&v, &[&z, &z, &z]);
        let a = viterbi_align(&p3, &expand_with_blanks(&[2, 2])).unwrap();
        assert_eq!(a.path, vec![1, 2, 3]);
    }

    #[test]
    fn too_few_frames() {
        let v = vocab(4);
        let z = [0.0f32, -1.0, -1.0, -1.0];
        let p = matrix(&v, &[&z]);
        assert!(matches!(
            viterbi_align(&p, &expand_with_blanks(&[2, 3])),
            Err(AlignError::Infeasible { frames: 1, required: 2 })
        ));
    }

    #[test]
    fn matrix_validation() {
        let v = vocab(3);
        assert_eq!(PosteriorMatrix::new(v.clone(), 20.0, vec![]), Err(PosteriorError::NoFrames));
        assert!(matches!(PosteriorMatrix::new(v.clone(), 20.0, vec![0.0; 4]), Err(PosteriorError::Shape { .. })));
        assert!(matches!(PosteriorMatrix::new(v.clone(), 0.0, vec![0.0; 3]), Err(PosteriorError::BadFrameDuration(_))));
        let third = -libm::logf(3.0);
        let ok = PosteriorMatrix::new(v.clone(), 20.0, vec![third; 6]).unwrap();
        assert_eq!(ok.validate(ROW_NORMALISATION_TOLERANCE), Ok(()));
        let bad = PosteriorMatrix::new(v, 20.0, vec![third, third, third, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(bad.validate(ROW_NORMALISATION_TOLERANCE), Err(PosteriorError::NotNormalised { row: 1, .. })));
    }

    fn alignment_with_char_frames(frames: &[usize]) -> CharAlignment {
        let mut first_frame = vec![None; 2 * frames.len() + 1];
        let mut symbol_logprob = vec![None; 2 * frames.len() + 1];
        for (i, &f) in frames.iter().enumerate() {
            first_frame[2 * i + 1] = Some(f);
            symbol_logprob[2 * i + 1] = Some(-0.5);
        }
        CharAlignment { path: vec![], first_frame, symbol_logprob, total: 0.0, end_frame: 0 }
    }

    fn clip(u: u32) -> ClipId {
        ClipId { dialogue_id: 0, utterance_id: u }
    }

    #[test]
    fn spans_from_frames() {
        let frames: Vec<usize> = (10..=60).collect();
        let a = alignment_with_char_frames(&frames);
        let s = utterance_spans(&a, &[UtteranceBound { clip: clip(0), first: 0, last: 50 }], 20.0);
        assert_eq!((s[0].global_start_ms, s[0].global_end_ms), (200, 1220));
        assert!((s[0].confidence + 0.5).abs() < 1e-12);

        let a = alignment_with_char_frames(&[0]);
        let s = utterance_spans(&a, &[UtteranceBound { clip: clip(0), first: 0, last: 0 }], 20.0);
        assert_eq!((s[0].global_start_ms, s[0].global_end_ms), (0, 20));

        let a = alignment_with_char_frames(&[3, 4, 5, 6]);
        let s = utterance_spans(
            &a,
            &[UtteranceBound { clip: clip(0), first: 0, last: 1 }, UtteranceBound { clip: clip(1), first: 2, last: 3 }],
            20.0,
        );
        assert_eq!(s[0].global_end_ms, s[1].global_start_ms);
    }

    fn span(len: u64, confidence: f64) -> AlignedSpan {
        AlignedSpan {
            clip: clip(0),
            global_start_ms: 100,
            global_end_ms: 100 + len,
            confidence,
            status: SpanStatus::Aligned,
        }
    }

    #[test]
    fn span_filtering() {
        let out = filter_spans(&[span(40, -0.1), span(3000, -0.2), span(3000, -7.0)], 200, DEFAULT_MIN_CONFIDENCE);
        let statuses: Vec<SpanStatus> = out.iter().map(|s| s.status).collect();
        assert_eq!(statuses, vec![SpanStatus::DroppedShort, SpanStatus::Aligned, SpanStatus::DroppedLowConfidence]);

        let all = filter_spans(&[span(0, -100.0), span(5, -9.0)], 0, f64::NEG_INFINITY);
        assert!(all.iter().all(|s| s.status == SpanStatus::Aligned));

        let mut d = span(3000, 0.0);
        d.status = SpanStatus::Degenerate;
        assert_eq!(filter_spans(&[d], 0, f64::NEG_INFINITY)[0].status, SpanStatus::Degenerate);
    }

    #[test]
    fn default_confidence_is_ln_one_percent() {
        assert!((DEFAULT_MIN_CONFIDENCE - libm::log(0.01)).abs() < 1e-15);
    }
}
