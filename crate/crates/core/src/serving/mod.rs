//! The inference path: batched "single user, multiple items" masks, the
//! per-block per-layer KV cache, cache-backed scoring, and a throughput
//! benchmark against the naive per-candidate path.

mod bench;
mod cache;
mod mask;
mod store;

pub use bench::{bench_throughput, BenchRow};
pub use cache::{build_cache, score_with_cache, state_digest, BlockCache, KVCache, LayerCache, ScoringRequest};
pub use mask::{build_mask, AttentionMask};
pub use store::CacheStore;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{score, score_with_trace, ModelConfig, Parameters};
    use crate::rng::Rng;
    use crate::sequence::{default_strategy_set, synthesize_users, SyntheticSpec};

    #[test]
    fn cache_matches_uncached_forward_state_at_every_layer() {
        let config = ModelConfig::small(8, 2, 2, 2, 4, 120);
        let params = Parameters::init(&config, 9).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(21, 3, 120, 2)).unwrap();
        let user = &data.users[0];

        let cache = build_cache(user, 0, &params, &config, &strategies).unwrap();

        // Full forwards with two different candidate sets; the history rows
        // of their per-layer state must both equal the cache bit for bit.
        for cands in [[3u32, 7].as_slice(), [50u32, 9, 20].as_slice()] {
            let (_, trace) = score_with_trace(user, cands, 0, &params, &config, &strategies).unwrap();
            for (k, (inputs, keys, values)) in trace.blocks.iter().enumerate() {
                for t in 0..config.layers_per_block {
                    let lc = &cache.blocks[k].layers[t];
                    for r in 0..config.budget {
                        for c in 0..config.width {
                            assert_eq!(
                                lc.input.at(r, c).to_bits(),
                                inputs[t].at(r, c).to_bits(),
                                "input block {k} layer {t} row {r}"
                            );
                            assert_eq!(
                                lc.keys.at(r, c).to_bits(),
                                keys[t].at(r, c).to_bits(),
                                "key block {k} layer {t} row {r}"
                            );
                            assert_eq!(
                                lc.values.at(r, c).to_bits(),
                                values[t].at(r, c).to_bits(),
                                "value block {k} layer {t} row {r}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cached_scoring_equals_uncached_scoring() {
        let config = ModelConfig::small(8, 2, 2, 2, 6, 150);
        let params = Parameters::init(&config, 33).unwrap();
        let strategies = default_strategy_set(2, 6);
        let data = synthesize_users(&SyntheticSpec::new(40, 5, 150, 2)).unwrap();
        let mut rng = Rng::new(1);
        for user in &data.users {
            for scenario in 0..2u16 {
                let m = 1 + rng.next_below(10);
                let candidates: Vec<u32> =
                    (0..m).map(|_| 1 + rng.next_below(149) as u32).collect();
                let cache = build_cache(user, scenario, &params, &config, &strategies).unwrap();
                let request = ScoringRequest {
                    user_id: user.user_id,
                    candidates: candidates.clone(),
                    scenario,
                };
                let cached =
                    score_with_cache(&cache, &request, &params, &config, &strategies).unwrap();
                let full = score(user, &candidates, scenario, &params, &config, &strategies).unwrap();
                for (a, b) in cached.iter().zip(&full) {
                    assert!((a - b).abs() <= 1e-9, "cached {a} vs uncached {b}");
                }
            }
        }
    }

    #[test]
    fn large_batch_equals_128_uncached_single_scores() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 300);
        let params = Parameters::init(&config, 4).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(12, 2, 300, 2)).unwrap();
        let user = &data.users[0];
        let mut rng = Rng::new(2);
        let candidates: Vec<u32> = (0..128).map(|_| 3 + rng.next_below(297) as u32).collect();
        let cache = build_cache(user, 1, &params, &config, &strategies).unwrap();
        let request = ScoringRequest {
            user_id: user.user_id,
            candidates: candidates.clone(),
            scenario: 1,
        };
        let cached = score_with_cache(&cache, &request, &params, &config, &strategies).unwrap();
        for (j, &cand) in candidates.iter().enumerate() {
            let single = score(user, &[cand], 1, &params, &config, &strategies).unwrap();
            assert!((cached[j] - single[0]).abs() <= 1e-9);
        }
    }

    #[test]
    fn empty_candidate_list_is_rejected() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 120);
        let params = Parameters::init(&config, 2).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(7, 2, 120, 2)).unwrap();
        let cache = build_cache(&data.users[0], 0, &params, &config, &strategies).unwrap();
        let request = ScoringRequest {
            user_id: data.users[0].user_id,
            candidates: vec![],
            scenario: 0,
        };
        assert!(score_with_cache(&cache, &request, &params, &config, &strategies).is_err());
        let too_many = ScoringRequest {
            user_id: data.users[0].user_id,
            candidates: vec![5; config.max_candidates + 1],
            scenario: 0,
        };
        assert!(score_with_cache(&cache, &too_many, &params, &config, &strategies).is_err());
    }

    #[test]
    fn cache_is_rebuilt_identically() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 120);
        let params = Parameters::init(&config, 2).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(7, 2, 120, 2)).unwrap();
        let a = build_cache(&data.users[0], 1, &params, &config, &strategies).unwrap();
        let b = build_cache(&data.users[0], 1, &params, &config, &strategies).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_builds_a_zero_valid_cache() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 120);
        let params = Parameters::init(&config, 2).unwrap();
        let strategies = default_strategy_set(2, 4);
        let user = crate::sequence::LifecycleSequence::new(77, vec![]);
        let cache = build_cache(&user, 0, &params, &config, &strategies).unwrap();
        for b in &cache.blocks {
            assert_eq!(b.valid_length, 0);
        }
        // Scoring against an all-pad history still works.
        let request = ScoringRequest { user_id: 77, candidates: vec![5, 9], scenario: 0 };
        let cached = score_with_cache(&cache, &request, &params, &config, &strategies).unwrap();
        let full = score(&user, &[5, 9], 0, &params, &config, &strategies).unwrap();
        for (a, b) in cached.iter().zip(&full) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn parameter_change_staleness_is_detected() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 120);
        let mut params = Parameters::init(&config, 2).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(7, 2, 120, 2)).unwrap();
        let cache = build_cache(&data.users[0], 0, &params, &config, &strategies).unwrap();
        params.head.data_mut()[0] += 0.5;
        let request = ScoringRequest {
            user_id: data.users[0].user_id,
            candidates: vec![5],
            scenario: 0,
        };
        let err = score_with_cache(&cache, &request, &params, &config, &strategies).unwrap_err();
        assert!(matches!(err, crate::error::Error::Stale { .. }), "{err}");
    }

    #[test]
    fn scenario_mismatch_is_rejected() {
        let config = ModelConfig::small(8, 2, 1, 2, 4, 120);
        let params = Parameters::init(&config, 2).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(7, 2, 120, 2)).unwrap();
        let cache = build_cache(&data.users[0], 0, &params, &config, &strategies).unwrap();
        let request = ScoringRequest {
            user_id: data.users[0].user_id,
            candidates: vec![5],
            scenario: 1,
        };
        assert!(score_with_cache(&cache, &request, &params, &config, &strategies).is_err());
    }

    #[test]
    fn shuffling_candidates_permutes_cached_logits() {
        let config = ModelConfig::small(8, 2, 2, 2, 4, 120);
        let params = Parameters::init(&config, 5).unwrap();
        let strategies = default_strategy_set(2, 4);
        let data = synthesize_users(&SyntheticSpec::new(9, 2, 120, 2)).unwrap();
        let user = &data.users[1];
        let cache = build_cache(user, 0, &params, &config, &strategies).unwrap();
        let a = ScoringRequest { user_id: user.user_id, candidates: vec![4, 9, 30], scenario: 0 };
        let b = ScoringRequest { user_id: user.user_id, candidates: vec![30, 4, 9], scenario: 0 };
        let la = score_with_cache(&cache, &a, &params, &config, &strategies).unwrap();
        let lb = score_with_cache(&cache, &b, &params, &config, &strategies).unwrap();
        assert_eq!(la[0], lb[1]);
        assert_eq!(la[1], lb[2]);
        assert_eq!(la[2], lb[0]);
    }
}
