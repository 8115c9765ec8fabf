//! ASD score fusion, conflicting-track elimination and assembly of the
//! active speaker's face sequence.
//!
//! Each face track is scored by the ASD model once per block size φ. The
//! per-frame scores are averaged over φ and a frame counts as speaking when
//! the mean is strictly positive. Two tracks conflict when they share a
//! frame and both have at least one speaking frame. Within a camera cut,
//! connected components of the conflict graph are resolved by keeping the
//! conflict-free subset with the most speaking frames, then the fewest
//! tracks, then the smallest id tuple.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tracks::{cut_of, BBox, CutInterval, FaceTrack};

/// Block sizes (in video frames) the ASD model is run with.
pub const PHI_VALUES: [u32; 6] = [25, 50, 75, 100, 125, 150];

/// Largest conflict group solved by exhaustive search by default.
pub const DEFAULT_EXACT_GROUP_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("no block-size scores to fuse")]
    NoScores,
    #[error("track {track_id}: φ={phi} has {actual} scores, expected {expected}")]
    LengthMismatch { track_id: u32, phi: u32, expected: usize, actual: usize },
    #[error("track {track_id} has no scores")]
    MissingTrack { track_id: u32 },
    #[error("scores given for unknown track {track_id}")]
    UnknownTrack { track_id: u32 },
}

/// Element-wise mean over the block sizes present.
pub fn fuse_scores(per_phi: &BTreeMap<u32, Vec<f64>>) -> Result<Vec<f64>, FusionError> {
    let (&first_phi, first) = per_phi.iter().next().ok_or(FusionError::NoScores)?;
    let len = first.len();
    for (&phi, scores) in per_phi {
        if scores.len() != len {
            return Err(FusionError::LengthMismatch { track_id: u32::MAX, phi, expected: len, actual: scores.len() });
        }
    }
    let _ = first_phi;
    let n = per_phi.len() as f64;
    Ok((0..len).map(|i| per_phi.values().map(|s| s[i]).sum::<f64>() / n).collect())
}

pub fn speaking_mask(fused: &[f64]) -> Vec<bool> {
    fused.iter().map(|&s| s > 0.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScores {
    pub track_id: u32,
    pub per_phi: BTreeMap<u32, Vec<f64>>,
    pub fused: Vec<f64>,
}

impl TrackScores {
    /// Fuses and checks every array against the track length.
    pub fn new(track_id: u32, track_len: usize, per_phi: BTreeMap<u32, Vec<f64>>) -> Result<Self, FusionError> {
        for (&phi, scores) in &per_phi {
            if scores.len() != track_len {
                return Err(FusionError::LengthMismatch { track_id, phi, expected: track_len, actual: scores.len() });
            }
        }
        let fused = fuse_scores(&per_phi).map_err(|e| match e {
            FusionError::NoScores => FusionError::MissingTrack { track_id },
            other => other,
        })?;
        Ok(TrackScores { track_id, per_phi, fused })
    }

    pub fn speaking_frames(&self) -> u32 {
        self.fused.iter().filter(|&&s| s > 0.0).count() as u32
    }
}

/// What conflict detection needs to know about a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackActivity {
    pub track_id: u32,
    pub first_frame: u32,
    pub last_frame: u32,
    pub speaking_frames: u32,
}

impl TrackActivity {
    pub fn of(track: &FaceTrack, mask: &[bool]) -> Self {
        TrackActivity {
            track_id: track.track_id,
            first_frame: track.first_frame(),
            last_frame: track.last_frame(),
            speaking_frames: mask.iter().filter(|&&m| m).count() as u32,
        }
    }

    pub fn conflicts_with(&self, other: &TrackActivity) -> bool {
        self.speaking_frames > 0
            && other.speaking_frames > 0
            && self.first_frame <= other.last_frame
            && other.first_frame <= self.last_frame
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutGroup {
    /// `None` for tracks outside every supplied cut.
    pub cut_id: Option<u32>,
    /// Ascending.
    pub members: Vec<u32>,
    /// `(a, b)` with `a < b`, ascending.
    pub edges: Vec<(u32, u32)>,
}

/// Connected components (with at least one edge) of the conflict graph,
/// computed per cut. A track belongs to the cut holding its first frame.
pub fn detect_conflicts(tracks: &[TrackActivity], cuts: &[CutInterval]) -> Vec<CutGroup> {
    let mut by_cut: BTreeMap<Option<u32>, Vec<&TrackActivity>> = BTreeMap::new();
    for t in tracks {
        by_cut.entry(cut_of(t.first_frame, cuts)).or_default().push(t);
    }
    let mut groups = Vec::new();
    for (cut_id, mut members) in by_cut {
        members.sort_by_key(|t| t.track_id);
        let n = members.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if members[i].conflicts_with(members[j]) {
                    edges.push((i, j));
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut components: BTreeMap<usize, CutGroup> = BTreeMap::new();
        for (i, j) in edges {
            let root = find(&mut parent, i);
            let g =
                components.entry(root).or_insert_with(|| CutGroup { cut_id, members: Vec::new(), edges: Vec::new() });
            g.edges.push((members[i].track_id, members[j].track_id));
        }
        for g in components.values_mut() {
            let ids: BTreeSet<u32> = g.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
            g.members = ids.into_iter().collect();
            g.edges.sort();
        }
        groups.extend(components.into_values());
    }
    groups
}

/// Conflict-free subset of the group: most speaking frames, then fewest
/// tracks, then smallest ascending id tuple. Exhaustive for groups up to
/// `exact_limit` members (capped at 64), greedy by speaking count beyond.
pub fn resolve_group(group: &CutGroup, speaking: &BTreeMap<u32, u32>, exact_limit: usize) -> Vec<u32> {
    let ids = &group.members;
    let n = ids.len();
    let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut adjacency = vec![0u64; n];
    for &(a, b) in &group.edges {
        if let (Some(&i), Some(&j)) = (index.get(&a), index.get(&b)) {
            adjacency[i] |= 1 << j;
            adjacency[j] |= 1 << i;
        }
    }
    let counts: Vec<u64> = ids.iter().map(|id| speaking.get(id).copied().unwrap_or(0) as u64).collect();

    if n <= exact_limit.min(64) {
        let mut search = ExactSearch {
            adjacency: &adjacency,
            counts: &counts,
            suffix: suffix_sums(&counts),
            best_mask: 0,
            best_total: 0,
        };
        search.visit(0, 0, 0);
        return mask_ids(ids, search.best_mask);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(ids[a].cmp(&ids[b])));
    let mut chosen = 0u64;
    let mut blocked = 0u64;
    for i in order {
        // a zero-count track never helps and only adds a member
        if counts[i] == 0 || blocked & (1 << i) != 0 {
            continue;
        }
        chosen |= 1 << i;
        blocked |= adjacency[i];
    }
    mask_ids(ids, chosen)
}

fn suffix_sums(counts: &[u64]) -> Vec<u64> {
    let mut out = vec![0; counts.len() + 1];
    for i in (0..counts.len()).rev() {
        out[i] = out[i + 1] + counts[i];
    }
    out
}

fn mask_ids(ids: &[u32], mask: u64) -> Vec<u32> {
    ids.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &id)| id).collect()
}

struct ExactSearch<'a> {
    adjacency: &'a [u64],
    counts: &'a [u64],
    suffix: Vec<u64>,
    best_mask: u64,
    best_total: u64,
}

impl ExactSearch<'_> {
    /// `true` when `mask` beats the incumbent on (total desc, size asc,
    /// ascending id tuple). Member ids are sorted, so comparing the lowest
    /// differing bit decides the id tuple.
    fn better(&self, mask: u64, total: u64) -> bool {
        if total != self.best_total {
            return total > self.best_total;
        }
        let (a, b) = (mask.count_ones(), self.best_mask.count_ones());
        if a != b {
            return a < b;
        }
        let diff = mask ^ self.best_mask;
        diff != 0 && mask & (diff & diff.wrapping_neg()) != 0
    }

    fn visit(&mut self, i: usize, mask: u64, total: u64) {
        if i == self.counts.len() {
            if self.better(mask, total) {
                self.best_mask = mask;
                self.best_total = total;
            }
            return;
        }
        if total + self.suffix[i] < self.best_total {
            return;
        }
        if self.adjacency[i] & mask == 0 {
            self.visit(i + 1, mask | (1 << i), total + self.counts[i]);
        }
        self.visit(i + 1, mask, total);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerFace {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub score: f64,
    pub speaking: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSpeakerResult {
    pub retained: Vec<u32>,
    /// Strictly increasing frames.
    pub faces: Vec<SpeakerFace>,
}

/// Merges retained tracks into one face per frame. Where two tracks share
/// a frame, a positive score beats a non-positive one, then the higher
/// score wins, then the lower track id.
pub fn assemble_active_speaker(retained: &[(&FaceTrack, &[f64])]) -> ActiveSpeakerResult {
    let mut sorted: Vec<&(&FaceTrack, &[f64])> = retained.iter().collect();
    sorted.sort_by_key(|(t, _)| t.track_id);
    let mut by_frame: BTreeMap<u32, SpeakerFace> = BTreeMap::new();
    for (track, fused) in sorted {
        for (entry, &score) in track.entries.iter().zip(fused.iter()) {
            let face = SpeakerFace {
                frame: entry.frame,
                track_id: track.track_id,
                bbox: entry.bbox,
                score,
                speaking: score > 0.0,
            };
            by_frame
                .entry(entry.frame)
                .and_modify(|held| {
                    if (face.speaking, face.score) > (held.speaking, held.score) {
                        *held = face;
                    }
                })
                .or_insert(face);
        }
    }
    let mut ids: Vec<u32> = retained.iter().map(|(t, _)| t.track_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ActiveSpeakerResult { retained: ids, faces: by_frame.into_values().collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Localisation {
    Speaker(ActiveSpeakerResult),
    NoActiveSpeaker,
}

/// Raw per-φ scores of one track, as delivered by the scoring adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub track_id: u32,
    pub phi: u32,
    pub scores: Vec<f64>,
}

/// Fusion, conflict detection, resolution and assembly for one video.
///
/// Tracks without any speaking frame are never part of the result. If
/// nothing speaks, the outcome is [`Localisation::NoActiveSpeaker`].
pub fn localise_tracks(
    tracks: &[FaceTrack],
    scores: &[ScoreLine],
    cuts: &[CutInterval],
    exact_limit: usize,
) -> Result<Localisation, FusionError> {
    let mut per_track: BTreeMap<u32, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for line in scores {
        if !tracks.iter().any(|t| t.track_id == line.track_id) {
            return Err(FusionError::UnknownTrack { track_id: line.track_id });
        }
        per_track.entry(line.track_id).or_default().insert(line.phi, line.scores.clone());
    }
    let mut fused: BTreeMap<u32, TrackScores> = BTreeMap::new();
    for t in tracks {
        let per_phi = per_track.remove(&t.track_id).ok_or(FusionError::MissingTrack { track_id: t.track_id })?;
        fused.insert(t.track_id, TrackScores::new(t.track_id, t.len(), per_phi)?);
    }

    let activity: Vec<TrackActivity> =
        tracks.iter().map(|t| TrackActivity::of(t, &speaking_mask(&fused[&t.track_id].fused))).collect();
    let speaking: BTreeMap<u32, u32> = activity.iter().map(|a| (a.track_id, a.speaking_frames)).collect();
    let groups = detect_conflicts(&activity, cuts);

    let grouped: BTreeSet<u32> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
    let mut keep: BTreeSet<u32> = activity
        .iter()
        .filter(|a| a.speaking_frames > 0 && !grouped.contains(&a.track_id))
        .map(|a| a.track_id)
        .collect();
    for g in &groups {
        keep.extend(resolve_group(g, &speaking, exact_limit));
    }
    if keep.is_empty() {
        return Ok(Localisation::NoActiveSpeaker);
    }
    let retained: Vec<(&FaceTrack, &[f64])> = tracks
        .iter()
        .filter(|t| keep.contains(&t.track_id))
        .map(|t| (t, fused[&t.track_id].fused.as_slice()))
        .collect();
    Ok(Localisation::Speaker(assemble_active_speaker(&retained)))
}
