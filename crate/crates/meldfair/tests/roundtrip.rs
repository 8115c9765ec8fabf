use meldfair::formats::{
    read_detections, read_posteriors, read_scores, write_detections, write_posteriors, write_scores,
};
use meldfair::records::{parse_records, write_records};
use meldfair_core::schema::{DialogueKey, Split};
use meldfair_core::synth::{gen_dialogue, gen_posteriors, gen_tracks, SynthConfig, TrackScenario};
use meldfair_core::transcript::Vocabulary;
use proptest::prelude::*;

fn bytes<F: FnOnce(&mut Vec<u8>)>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf);
    buf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posteriors_round_trip_byte_exact(seed in any::<u64>(), noise in 0.0f64..0.5) {
        let vocab = Vocabulary::wav2vec2_english();
        let config = SynthConfig { noise, ..SynthConfig::default() };
        let s = gen_posteriors(&["We were on a break!"], &vocab, 120, &config, seed).unwrap();
        let key = DialogueKey { split: Split::Test, dialogue_id: (seed % 1000) as u32 };
        let first = bytes(|b| write_posteriors(b, key, &s.posteriors).unwrap());
        let (k, back) = read_posteriors(&first[..]).unwrap();
        prop_assert_eq!(k, key);
        prop_assert_eq!(&back, &s.posteriors);
        let second = bytes(|b| write_posteriors(b, k, &back).unwrap());
        prop_assert_eq!(first, second);
    }

    #[test]
    fn track_media_round_trip_byte_exact(seed in any::<u64>(), pick in 0usize..5) {
        let scenario = [
            TrackScenario::SingleSpeaker { silent_faces: 3 },
            TrackScenario::TriangleConflict,
            TrackScenario::StraddlesCut,
            TrackScenario::FalsePositive { silent_faces: 2 },
            TrackScenario::Silent { faces: 3 },
        ][pick];
        let fx = gen_tracks(scenario, seed);
        let det = bytes(|b| write_detections(b, &fx.detections).unwrap());
        let back = read_detections(&det[..]).unwrap();
        prop_assert_eq!(&back, &fx.detections);
        prop_assert_eq!(bytes(|b| write_detections(b, &back).unwrap()), det);

        let sc = bytes(|b| write_scores(b, &fx.scores).unwrap());
        let back = read_scores(&sc[..]).unwrap();
        prop_assert_eq!(&back, &fx.scores);
        prop_assert_eq!(bytes(|b| write_scores(b, &back).unwrap()), sc);
    }

    #[test]
    fn records_round_trip_byte_exact(seed in any::<u64>(), n in 1u32..12) {
        let recs = gen_dialogue(seed, Split::Dev, 7, n, 20.0);
        let first = bytes(|b| write_records(b, &recs).unwrap());
        let (back, errs) = parse_records(&first[..], Split::Dev).unwrap();
        prop_assert!(errs.is_empty());
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(bytes(|b| write_records(b, &back).unwrap()), first);
    }
}
