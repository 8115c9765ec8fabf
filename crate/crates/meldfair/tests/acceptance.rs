//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use meldfair::synth_check::{self, SynthCheckConfig};
use meldfair_core::ctcseg::{expand_with_blanks, min_frames, viterbi_align, AlignError, PosteriorMatrix};
use meldfair_core::fusion::{fuse_scores, resolve_group, speaking_mask, CutGroup, PHI_VALUES};
use meldfair_core::schema::group_dialogues;
use meldfair_core::synth::{excerpt_records, gen_detection_stream};
use meldfair_core::timeline::{build_timeline, SegmentKind};
use meldfair_core::tracks::{iou, link_detections, FaceTrack, DEFAULT_IOU_THRESHOLD};
use meldfair_core::transcript::{Vocabulary, BLANK};
use meldfair_oracles::{best_independent_set, compensated_mean, ctc_exhaustive, emission_frames};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn excerpt_timeline() -> Outcome {
    let d = &group_dialogues(&excerpt_records())[0];
    let t = build_timeline(d);
    let u7 = t.utterance_segments().find(|s| s.utterance_id == Some(7)).ok_or("U7 missing")?;
    let u7_start =
        d.utterances.iter().find(|u| u.utterance_id == 7).map(|u| u.start_ms + u7.source_start_ms).unwrap_or(0);
    ensure(u7_start == 1_011_886, || format!("U7 starts at {u7_start} ms"))?;

    let mut gaps = BTreeMap::new();
    let mut prev = None;
    let mut silence = 0;
    for s in &t.segments {
        match s.kind {
            SegmentKind::Silence => silence += s.len_ms(),
            SegmentKind::Utterance => {
                if let Some(p) = prev {
                    gaps.insert((p, s.utterance_id.unwrap_or(0)), silence);
                }
                prev = s.utterance_id;
                silence = 0;
            }
        }
    }
    let want = BTreeMap::from([((5, 6), 250), ((6, 7), 0), ((7, 8), 250), ((8, 9), 0), ((9, 10), 137)]);
    ensure(gaps == want, || format!("silences {gaps:?}"))?;
    Ok("U7 start 1011886 ms, silences 250/0/250/0/137 ms".into())
}

fn small_vocab(size: usize) -> Vocabulary {
    let mut symbols = vec!["<pad>".to_string(), "|".to_string()];
    symbols.extend(['A', 'B', 'C', 'D', 'E', 'F'].iter().take(size - 2).map(|c| c.to_string()));
    Vocabulary::new(symbols).expect("valid vocabulary")
}

fn random_posteriors(rng: &mut ChaCha8Rng, frames: usize, v: usize) -> (PosteriorMatrix, Vec<Vec<f64>>) {
    let mut flat = Vec::with_capacity(frames * v);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        flat.extend(logits.iter().map(|x| (x - lse) as f32));
    }
    let rows = flat.chunks(v).map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
    (PosteriorMatrix::new(small_vocab(v), 20.0, flat).expect("normalised rows"), rows)
}

fn random_chars(rng: &mut ChaCha8Rng, v: usize, max: usize) -> Vec<u32> {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| rng.gen_range(1..v as u32)).collect()
}

fn dp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let (mut feasible, mut worst) = (0, 0.0f64);
    for case in 0..1000 {
        let v = rng.gen_range(3..=6);
        let chars = random_chars(&mut rng, v, 4);
        let frames = rng.gen_range(1..=10);
        let (post, rows) = random_posteriors(&mut rng, frames, v);
        let expanded = expand_with_blanks(&chars);
        match (viterbi_align(&post, &expanded), ctc_exhaustive(&rows, &expanded, BLANK)) {
            (Err(AlignError::Infeasible { .. }), None) => {}
            (Ok(a), Some(b)) => {
                feasible += 1;
                let diff = (a.total - b.best).abs();
                worst = worst.max(diff);
                ensure(diff <= 1e-9, || format!("case {case}: {} vs {}", a.total, b.best))?;
                let emitted: Vec<usize> = (0..chars.len()).map(|i| a.char_frame(i)).collect();
                ensure(emitted.windows(2).all(|w| w[0] < w[1]), || format!("case {case}: emissions {emitted:?}"))?;
                let path: Vec<usize> = a.path.iter().map(|&s| s as usize).collect();
                let oracle: Vec<Option<usize>> = emission_frames(&path, expanded.len());
                ensure(oracle.iter().copied().eq(emitted.iter().map(|&e| Some(e))), || {
                    format!("case {case}: emission frames")
                })?;
            }
            (got, want) => return Err(format!("case {case}: feasibility {got:?} vs {}", want.is_some())),
        }
    }
    Ok(format!("1000 instances, {feasible} feasible, max |diff| {worst:.1e}"))
}

fn shift_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5417);
    for case in 0..200 {
        let v = rng.gen_range(3..=6);
        let chars = random_chars(&mut rng, v, 5);
        let frames = rng.gen_range(min_frames(&chars)..=30);
        let k = rng.gen_range(1..=20);
        let (post, _) = random_posteriors(&mut rng, frames, v);
        let mut shifted = vec![f32::NEG_INFINITY; k * v];
        for t in 0..k {
            shifted[t * v] = 0.0;
        }
        shifted.extend_from_slice(post.as_slice());
        let shifted = PosteriorMatrix::new(small_vocab(v), 20.0, shifted).map_err(|e| e.to_string())?;
        let expanded = expand_with_blanks(&chars);
        let a = viterbi_align(&post, &expanded).map_err(|e| e.to_string())?;
        let b = viterbi_align(&shifted, &expanded).map_err(|e| e.to_string())?;
        for i in 0..chars.len() {
            ensure(a.char_frame(i) + k == b.char_frame(i), || format!("case {case}: char {i} k {k}"))?;
        }
    }
    Ok("200 instances, every emission shifted by exactly k".into())
}

fn conflict_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0f1);
    for case in 0..500 {
        let n = rng.gen_range(1..=10);
        let ids: Vec<u32> = (0..n as u32).map(|i| 2 * i + rng.gen_range(0..2)).collect();
        let density = rng.gen_range(0.1..0.9);
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.gen_bool(density)).collect();
        let max_count = if rng.gen_bool(0.5) { 4 } else { 60 };
        let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=max_count)).collect();
        let group = CutGroup {
            cut_id: Some(0),
            members: ids.clone(),
            edges: edges.iter().map(|&(a, b)| (ids[a], ids[b])).collect(),
        };
        let by_id: BTreeMap<u32, u32> = ids.iter().zip(&counts).map(|(&id, &c)| (id, c as u32)).collect();
        let got = resolve_group(&group, &by_id, 20);
        let want: Vec<u32> = best_independent_set(n, &edges, &counts).into_iter().map(|i| ids[i]).collect();
        ensure(got == want, || format!("case {case}: {got:?} vs {want:?}"))?;
    }
    Ok("500 graphs, all equal to the exhaustive optimum".into())
}

fn separable(truth: &[FaceTrack], theta: f64) -> bool {
    let last = truth.iter().map(FaceTrack::last_frame).max().unwrap_or(0);
    let at = |frame| -> Vec<(u32, _)> {
        truth.iter().filter_map(|t| t.entries.iter().find(|e| e.frame == frame).map(|e| (t.track_id, e.bbox))).collect()
    };
    (0..last).all(|f| {
        let next = at(f + 1);
        at(f).iter().all(|(a, ba)| {
            next.iter().all(|(b, bb)| {
                let v = iou(ba, bb);
                if a == b {
                    v > theta
                } else {
                    v < theta
                }
            })
        })
    })
}

fn tracklet_oracle() -> Outcome {
    let mut checked = 0;
    for seed in 0..200 {
        let s = gen_detection_stream(seed, 6, 100);
        if !separable(&s.truth, DEFAULT_IOU_THRESHOLD) {
            continue;
        }
        checked += 1;
        ensure(link_detections(&s.frames, DEFAULT_IOU_THRESHOLD) == s.truth, || format!("seed {seed}"))?;
    }
    ensure(checked >= 100, || format!("only {checked} separable streams"))?;
    Ok(format!("200 seeds, {checked} separable, all recovered exactly"))
}

fn fusion_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf05e);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..50);
        let per_phi: BTreeMap<u32, Vec<f64>> =
            PHI_VALUES.iter().map(|&phi| (phi, (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect())).collect();
        let fused = fuse_scores(&per_phi).map_err(|e| e.to_string())?;
        for (t, f) in fused.iter().enumerate() {
            let column: Vec<f64> = per_phi.values().map(|v| v[t]).collect();
            worst = worst.max((f - compensated_mean(&column)).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let zero: BTreeMap<u32, Vec<f64>> = PHI_VALUES.iter().map(|&phi| (phi, vec![1.0, -1.0, 0.5])).collect();
    let fused = fuse_scores(&zero).map_err(|e| e.to_string())?;
    ensure(fused == vec![1.0, -1.0, 0.5], || format!("{fused:?}"))?;
    let mut cancel: BTreeMap<u32, Vec<f64>> = PHI_VALUES.iter().map(|&phi| (phi, vec![0.0])).collect();
    cancel.insert(25, vec![1.0]);
    cancel.insert(50, vec![-1.0]);
    let mask = speaking_mask(&fuse_scores(&cancel).map_err(|e| e.to_string())?);
    ensure(mask == vec![false], || "mean exactly 0 counted as speaking".into())?;
    let tiny = speaking_mask(&[f64::MIN_POSITIVE, 0.0, -0.0]);
    ensure(tiny == vec![true, false, false], || format!("{tiny:?}"))?;
    Ok(format!("max deviation {worst:.1e}, mean 0 is not speaking"))
}

fn synth_check() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = synth_check::run(dir.path(), &SynthCheckConfig::default()).map_err(|e| e.to_string())?;
    ensure(report.fatal.is_empty(), || format!("fatal: {:?}", report.fatal))?;
    let passed = report.passed();
    let total = report.dialogues.len();
    ensure(total == 20 && passed >= 19, || {
        let failed: Vec<String> =
            report.dialogues.iter().filter(|d| !d.passed()).flat_map(|d| d.problems.clone()).collect();
        format!("{passed}/{total}: {failed:?}")
    })?;
    let worst = report.dialogues.iter().map(|d| d.max_frame_error).fold(0.0, f64::max);
    Ok(format!("{passed}/{total} dialogues, max boundary error {worst:.2} frames"))
}

fn determinism() -> Outcome {
    let mut manifests = Vec::new();
    for jobs in [1, 4, 1] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = SynthCheckConfig { jobs, ..SynthCheckConfig::default() };
        manifests.push(synth_check::run(dir.path(), &config).map_err(|e| e.to_string())?.manifest);
    }
    ensure(manifests.windows(2).all(|w| w[0] == w[1]), || "manifests differ".into())?;
    Ok(format!("3 runs (1, 4, 1 workers), {} identical bytes", manifests[0].len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "excerpt timeline", limit: Duration::from_secs(1), run: excerpt_timeline },
        Criterion { name: "DP oracle suite", limit: Duration::from_secs(60), run: dp_oracle },
        Criterion { name: "shift equivariance", limit: Duration::from_secs(10), run: shift_equivariance },
        Criterion { name: "conflict-resolution oracle", limit: Duration::from_secs(30), run: conflict_oracle },
        Criterion { name: "tracklet oracle", limit: Duration::from_secs(30), run: tracklet_oracle },
        Criterion { name: "fusion exactness", limit: Duration::MAX, run: fusion_exactness },
        Criterion { name: "end-to-end synth-check", limit: Duration::from_secs(120), run: synth_check },
        Criterion { name: "determinism", limit: Duration::MAX, run: determinism },
    ];
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took longer than {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<28} {:>9.3}s  {detail}", c.name, elapsed.as_secs_f64()),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {:<28} {:>9.3}s  {detail}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
