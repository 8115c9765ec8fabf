use meldfair_core::synth::gen_detection_stream;
use meldfair_core::tracks::{greedy_pairs, iou, link_detections, FaceTrack, DEFAULT_IOU_THRESHOLD};
use meldfair_oracles::best_matching;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Whether every same-face link clears `theta` and every cross-face pair
/// in consecutive frames stays below it.
fn separable(truth: &[FaceTrack], theta: f64) -> bool {
    let last = truth.iter().map(FaceTrack::last_frame).max().unwrap_or(0);
    for f in 0..last {
        let at = |frame| {
            truth
                .iter()
                .filter_map(move |t| t.entries.iter().find(|e| e.frame == frame).map(|e| (t.track_id, e.bbox)))
                .collect::<Vec<_>>()
        };
        for (a, ba) in at(f) {
            for (b, bb) in at(f + 1) {
                let v = iou(&ba, &bb);
                if (a == b && v <= theta) || (a != b && v >= theta) {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn recovers_separable_streams() {
    let mut separable_seeds = 0;
    for seed in 0..200 {
        let s = gen_detection_stream(seed, 6, 100);
        if !separable(&s.truth, DEFAULT_IOU_THRESHOLD) {
            continue;
        }
        separable_seeds += 1;
        assert_eq!(link_detections(&s.frames, DEFAULT_IOU_THRESHOLD), s.truth, "seed {seed}");
    }
    assert!(separable_seeds >= 100, "only {separable_seeds} separable streams");
}

#[test]
fn greedy_pairs_match_the_lexicographic_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let rows = rng.gen_range(0..=5);
        let cols = rng.gen_range(0..=5);
        let scores: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let mut got = greedy_pairs(rows, cols, |i, j| scores[i][j], DEFAULT_IOU_THRESHOLD);
        got.sort_unstable();
        let want = if cols == 0 { Vec::new() } else { best_matching(&scores, DEFAULT_IOU_THRESHOLD) };
        assert_eq!(got, want, "{scores:?}");
    }
}

#[test]
fn tracks_partition_the_detections() {
    for seed in 0..50 {
        let s = gen_detection_stream(seed, 6, 100);
        let tracks = link_detections(&s.frames, DEFAULT_IOU_THRESHOLD);
        let linked: usize = tracks.iter().map(FaceTrack::len).sum();
        let given: usize = s.frames.iter().map(|f| f.detections.len()).sum();
        assert_eq!(linked, given);
        for t in &tracks {
            assert!(t.entries.windows(2).all(|w| w[0].frame + 1 == w[1].frame));
        }
    }
}
