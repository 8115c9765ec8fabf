//! Face tracks from per-frame detections.
//!
//! Detections in consecutive frames are linked when their IoU exceeds the
//! threshold; competing pairs are resolved greedily from the highest IoU
//! down. A track ends at the first frame without a qualifying match.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.33;

/// Axis-aligned box in pixels, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.area().is_finite()
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: u32,
    pub detections: Vec<FaceDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTrack {
    pub track_id: u32,
    /// Consecutive frames, strictly increasing.
    pub entries: Vec<TrackEntry>,
}

impl FaceTrack {
    pub fn first_frame(&self) -> u32 {
        self.entries[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.entries[self.entries.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn overlaps(&self, other: &FaceTrack) -> bool {
        self.first_frame() <= other.last_frame() && other.first_frame() <= self.last_frame()
    }
}

/// Shot interval, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CutInterval {
    pub start_frame: u32,
    pub end_frame: u32,
}

/// Index of the cut containing `frame`.
pub fn cut_of(frame: u32, cuts: &[CutInterval]) -> Option<u32> {
    cuts.iter().position(|c| c.start_frame <= frame && frame <= c.end_frame).map(|i| i as u32)
}

/// One-to-one matching of `prev` to `next` boxes: pairs above `theta`
/// taken in descending IoU order, ties by position in the inputs.
pub fn greedy_match(prev: &[BBox], next: &[BBox], theta: f64) -> Vec<(usize, usize)> {
    greedy_pairs(prev.len(), next.len(), |i, j| iou(&prev[i], &next[j]), theta)
}

/// Greedy one-to-one pairing on an arbitrary pair score.
pub fn greedy_pairs(
    n_prev: usize,
    n_next: usize,
    score: impl Fn(usize, usize) -> f64,
    theta: f64,
) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n_prev {
        for j in 0..n_next {
            let v = score(i, j);
            if v > theta {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_prev = alloc::vec![false; n_prev];
    let mut used_next = alloc::vec![false; n_next];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_prev[i] && !used_next[j] {
            used_prev[i] = true;
            used_next[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn link_detections(frames: &[FrameDetections], theta: f64) -> Vec<FaceTrack> {
    link_detections_within_cuts(frames, theta, &[])
}

/// Like [`link_detections`], but never links across the start of a cut.
///
/// Track ids are assigned in order of first frame, ties by leftmost `x1`,
/// then topmost `y1`.
pub fn link_detections_within_cuts(frames: &[FrameDetections], theta: f64, cuts: &[CutInterval]) -> Vec<FaceTrack> {
    let mut by_frame: BTreeMap<u32, Vec<FaceDetection>> = BTreeMap::new();
    for f in frames {
        by_frame.entry(f.frame).or_default().extend(f.detections.iter().copied());
    }

    let mut tracks: Vec<Vec<TrackEntry>> = Vec::new();
    // (track index, box) of tracks alive at `prev_frame`
    let mut open: Vec<(usize, BBox)> = Vec::new();
    let mut prev_frame: Option<u32> = None;
    for (&frame, dets) in &by_frame {
        let continues = prev_frame.is_some_and(|p| p + 1 == frame) && !cuts.iter().any(|c| c.start_frame == frame);
        if !continues {
            open.clear();
        }
        let prev_boxes: Vec<BBox> = open.iter().map(|o| o.1).collect();
        let next_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let matches = greedy_match(&prev_boxes, &next_boxes, theta);

        let mut assigned: Vec<Option<usize>> = alloc::vec![None; dets.len()];
        for (i, j) in matches {
            assigned[j] = Some(open[i].0);
        }
        let mut next_open = Vec::with_capacity(dets.len());
        for (j, det) in dets.iter().enumerate() {
            let idx = assigned[j].unwrap_or_else(|| {
                tracks.push(Vec::new());
                tracks.len() - 1
            });
            tracks[idx].push(TrackEntry { frame, bbox: det.bbox, confidence: det.confidence });
            next_open.push((idx, det.bbox));
        }
        open = next_open;
        prev_frame = Some(frame);
    }

    tracks.sort_by(|a, b| {
        a[0].frame
            .cmp(&b[0].frame)
            .then(a[0].bbox.x1.total_cmp(&b[0].bbox.x1))
            .then(a[0].bbox.y1.total_cmp(&b[0].bbox.y1))
    });
    tracks.into_iter().enumerate().map(|(i, entries)| FaceTrack { track_id: i as u32, entries }).collect()
}

/// Cut boundaries for when none are supplied: a new cut starts after every
/// frame on which all tracks alive at that frame end. Covers the frames from
/// the first to the last track entry.
pub fn infer_cuts(tracks: &[FaceTrack]) -> Vec<CutInterval> {
    let (Some(lo), Some(hi)) =
        (tracks.iter().map(FaceTrack::first_frame).min(), tracks.iter().map(FaceTrack::last_frame).max())
    else {
        return Vec::new();
    };
    let mut cuts = Vec::new();
    let mut start = lo;
    for f in lo..hi {
        let alive: Vec<&FaceTrack> = tracks.iter().filter(|t| t.first_frame() <= f && f <= t.last_frame()).collect();
        if !alive.is_empty() && alive.iter().all(|t| t.last_frame() == f) {
            cuts.push(CutInterval { start_frame: start, end_frame: f });
            start = f + 1;
        }
    }
    cuts.push(CutInterval { start_frame: start, end_frame: hi });
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64) -> FaceDetection {
        FaceDetection { bbox: BBox::new(x1, y1, x2, y2), confidence: 0.9 }
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(iou(&a, &BBox::new(10.0, 0.0, 20.0, 10.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn single_chain() {
        let frames: Vec<FrameDetections> = (0..5)
            .map(|f| FrameDetections { frame: f, detections: vec![det(f as f64, 0.0, 100.0 + f as f64, 100.0)] })
            .collect();
        let tracks = link_detections(&frames, 0.5);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 5);
    }

    #[test]
    fn two_stationary_faces() {
        let frames: Vec<FrameDetections> = (0..3)
            .map(|f| FrameDetections {
                frame: f,
                detections: vec![det(300.0, 0.0, 400.0, 100.0), det(0.0, 0.0, 100.0, 100.0)],
            })
            .collect();
        let tracks = link_detections(&frames, DEFAULT_IOU_THRESHOLD);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].entries[0].bbox.x1, 0.0);
        assert_eq!(tracks[1].entries[0].bbox.x1, 300.0);
        assert!(tracks.iter().all(|t| t.len() == 3));
    }

    #[test]
    fn greedy_prefers_highest_iou() {
        // a1 (0..10) overlaps b1 (1..11, IoU 0.818) and b2 (3..13,
        // IoU 0.538); a2 (4..14) overlaps b2 (IoU 0.818) and b1 (0.538)
        let a = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(4.0, 0.0, 14.0, 10.0)];
        let b = [BBox::new(1.0, 0.0, 11.0, 10.0), BBox::new(3.0, 0.0, 13.0, 10.0)];
        let mut m = greedy_match(&a, &b, 0.5);
        m.sort();
        assert_eq!(m, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn greedy_on_listed_scores() {
        // (a1,b1) 0.8, (a1,b2) 0.6, (a2,b2) 0.7
        let table = [[0.8, 0.6], [0.0, 0.7]];
        let mut m = greedy_pairs(2, 2, |i, j| table[i][j], 0.5);
        m.sort();
        assert_eq!(m, vec![(0, 0), (1, 1)]);
        // (a1,b2) is the best pair once (a1,b1) drops below threshold
        let table = [[0.4, 0.6], [0.0, 0.7]];
        assert_eq!(greedy_pairs(2, 2, |i, j| table[i][j], 0.5), vec![(1, 1)]);
    }

    #[test]
    fn gap_and_cut_end_tracks() {
        let d = det(0.0, 0.0, 100.0, 100.0);
        let frames = vec![
            FrameDetections { frame: 0, detections: vec![d] },
            FrameDetections { frame: 1, detections: vec![d] },
            FrameDetections { frame: 3, detections: vec![d] },
            FrameDetections { frame: 4, detections: vec![d] },
        ];
        assert_eq!(link_detections(&frames, 0.5).len(), 2);
        let cuts = [CutInterval { start_frame: 0, end_frame: 3 }, CutInterval { start_frame: 4, end_frame: 9 }];
        let tracks = link_detections_within_cuts(&frames, 0.5, &cuts);
        let spans: Vec<(u32, u32)> = tracks.iter().map(|t| (t.first_frame(), t.last_frame())).collect();
        assert_eq!(spans, vec![(0, 1), (3, 3), (4, 4)]);
    }

    #[test]
    fn below_threshold_opens_new_track() {
        let frames = vec![
            FrameDetections { frame: 0, detections: vec![det(0.0, 0.0, 10.0, 10.0)] },
            FrameDetections { frame: 1, detections: vec![det(5.0, 0.0, 15.0, 10.0)] },
        ];
        // IoU is exactly 1/3, not above 0.34
        assert_eq!(link_detections(&frames, 0.34).len(), 2);
        assert_eq!(link_detections(&frames, 0.3).len(), 1);
    }

    #[test]
    fn inferred_cuts() {
        let d = det(0.0, 0.0, 100.0, 100.0);
        let e = det(500.0, 0.0, 600.0, 100.0);
        let mut frames: Vec<FrameDetections> =
            (0..10).map(|f| FrameDetections { frame: f, detections: vec![d, e] }).collect();
        // both faces jump at frame 10
        for f in 10..15 {
            frames.push(FrameDetections { frame: f, detections: vec![det(200.0, 200.0, 300.0, 300.0)] });
        }
        let tracks = link_detections(&frames, 0.5);
        assert_eq!(tracks.len(), 3);
        assert_eq!(
            infer_cuts(&tracks),
            vec![CutInterval { start_frame: 0, end_frame: 9 }, CutInterval { start_frame: 10, end_frame: 14 }]
        );
        assert_eq!(cut_of(12, &infer_cuts(&tracks)), Some(1));
        assert!(infer_cuts(&[]).is_empty());
    }
}
