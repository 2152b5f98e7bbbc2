use proptest::prelude::*;

use proclip_core::corpus::{decode_corpus, encode_corpus, synth_corpus, CorpusBundle, SynthSpec};
use proclip_core::engine::{index_corpus, Pipeline, RetrieveConfig, Stage};
use proclip_core::model::{ModelConfig, ModelParams};
use proclip_core::pruner::cosine;

fn corpus(n_videos: usize, n_queries: usize, seed: u64) -> CorpusBundle {
    synth_corpus(&SynthSpec { n_videos, n_queries, seed, ..SynthSpec::default() }).unwrap()
}

fn model_for(c: &CorpusBundle, seed: u64) -> ModelParams {
    ModelParams::init(ModelConfig::new(c.raw_dim, c.dim), seed).unwrap()
}

#[test]
fn planted_teacher_features_recover_ground_truth() {
    for (n, seed) in [(10, 1), (75, 2), (200, 3)] {
        let spec = SynthSpec { n_videos: n, n_queries: n, frames_per_video: (8, 16), seed, ..SynthSpec::default() };
        let c = synth_corpus(&spec).unwrap();
        for q in &c.queries {
            let best = c
                .videos
                .iter()
                .max_by(|a, b| cosine(&a.teacher_video, &q.sentence).total_cmp(&cosine(&b.teacher_video, &q.sentence)))
                .unwrap();
            assert_eq!(best.id, q.ground_truth_video, "corpus of {n}");
        }
    }
}

#[test]
fn ranked_list_covers_every_video_once() {
    let c = corpus(30, 5, 4);
    let m = model_for(&c, 5);
    let index = index_corpus(&c, &m, false).unwrap();
    let p = Pipeline::new(&c, &m, &index).unwrap();
    let list = p.retrieve(&c.queries[0], &RetrieveConfig { k_percent: 20.0, ..RetrieveConfig::default() }).unwrap();
    let mut ids = list.ids();
    assert_eq!(list.stage2_count, 6);
    assert!(list.entries[..6].iter().all(|e| e.stage == Stage::Fine));
    assert!(list.entries[6..].iter().all(|e| e.stage == Stage::Coarse));
    assert_eq!(list.frames_aggregated, 6 * 12);
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 30);
}

#[test]
fn parallel_and_sequential_paths_agree() {
    let c = corpus(25, 6, 6);
    let m = model_for(&c, 7);
    let seq = index_corpus(&c, &m, false).unwrap();
    let par = index_corpus(&c, &m, true).unwrap();
    assert_eq!(seq.entries, par.entries);
    let p = Pipeline::new(&c, &m, &seq).unwrap();
    for q in &c.queries {
        let a = p.retrieve(q, &RetrieveConfig { parallel: false, ..RetrieveConfig::default() }).unwrap();
        let b = p.retrieve(q, &RetrieveConfig { parallel: true, ..RetrieveConfig::default() }).unwrap();
        assert_eq!(a.entries, b.entries);
    }
}

#[test]
fn retrieval_is_deterministic() {
    let c = corpus(20, 4, 8);
    let m = model_for(&c, 9);
    let index = index_corpus(&c, &m, false).unwrap();
    let p = Pipeline::new(&c, &m, &index).unwrap();
    let a = p.retrieve(&c.queries[1], &RetrieveConfig::default()).unwrap();
    let b = p.retrieve(&c.queries[1], &RetrieveConfig::default()).unwrap();
    assert_eq!(a.entries, b.entries);
}

#[test]
fn index_from_another_model_is_rejected() {
    let c = corpus(5, 2, 10);
    let m = model_for(&c, 11);
    let other = model_for(&c, 12);
    let index = index_corpus(&c, &other, false).unwrap();
    assert_eq!(Pipeline::new(&c, &m, &index).err().unwrap().code(), "invalid-data");
}

#[test]
fn mismatched_widths_are_rejected() {
    let c = corpus(5, 2, 13);
    let m = ModelParams::init(ModelConfig::new(c.raw_dim, 16), 1).unwrap();
    assert_eq!(index_corpus(&c, &m, false).unwrap_err().code(), "dimension-mismatch");
}

#[test]
fn fine_stage_candidates_nest_through_retrieve() {
    let c = corpus(40, 5, 14);
    let m = model_for(&c, 15);
    let index = index_corpus(&c, &m, false).unwrap();
    let p = Pipeline::new(&c, &m, &index).unwrap();
    for q in &c.queries {
        let fine_ids = |k: f64| {
            let list = p.retrieve(q, &RetrieveConfig { k_percent: k, ..RetrieveConfig::default() }).unwrap();
            list.entries.into_iter().filter(|e| e.stage == Stage::Fine).map(|e| e.video_id).collect::<Vec<_>>()
        };
        let wide = fine_ids(80.0);
        let narrow = fine_ids(25.0);
        assert!(narrow.iter().all(|id| wide.contains(id)));
    }
}

#[test]
fn top_rank_survives_mild_pruning() {
    let c = corpus(40, 40, 16);
    let m = model_for(&c, 17);
    let index = index_corpus(&c, &m, false).unwrap();
    let p = Pipeline::new(&c, &m, &index).unwrap();
    let mut checked = 0;
    for q in &c.queries {
        let full = p.retrieve(q, &RetrieveConfig { k_percent: 100.0, ..RetrieveConfig::default() }).unwrap();
        if full.rank_of(&q.ground_truth_video) != Some(1) {
            continue;
        }
        for k in [90.0, 70.0, 50.0, 30.0] {
            let pruned = p.retrieve(q, &RetrieveConfig { k_percent: k, ..RetrieveConfig::default() }).unwrap();
            let survived = pruned.entries[..pruned.stage2_count].iter().any(|e| e.video_id == q.ground_truth_video);
            if survived {
                assert_eq!(pruned.rank_of(&q.ground_truth_video), Some(1));
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn evaluation_requires_known_ground_truth() {
    let c = corpus(6, 3, 18);
    let m = model_for(&c, 19);
    let index = index_corpus(&c, &m, false).unwrap();
    let p = Pipeline::new(&c, &m, &index).unwrap();
    let mut queries = c.queries.clone();
    queries[0].ground_truth_video = "missing".into();
    assert_eq!(p.evaluate(&queries, &RetrieveConfig::default()).unwrap_err().code(), "missing-ground-truth");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corpus_bytes_round_trip(
        n_videos in 1usize..12,
        n_queries in 1usize..12,
        lo in 1usize..10,
        extra in 0usize..10,
        words in 1usize..6,
        snr in prop_oneof![Just(f64::INFINITY), 0.5f64..20.0],
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec {
            n_videos,
            n_queries,
            frames_per_video: (lo, lo + extra),
            raw_dim: 12,
            dim: 8,
            words_per_query: words,
            relevance_snr: snr,
            seed,
            ..SynthSpec::default()
        };
        let c = synth_corpus(&spec).unwrap();
        let bytes = encode_corpus(&c).unwrap();
        let back = decode_corpus(&bytes).unwrap();
        prop_assert_eq!(&back.videos, &c.videos);
        prop_assert_eq!(&back.queries, &c.queries);
        prop_assert_eq!(encode_corpus(&back).unwrap(), bytes);
    }
}
