//! Throughput benchmark: cache-resume batched scoring versus the naive
//! "single user, single item" pattern (one full forward per candidate,
//! history state rebuilt every time). Both paths run on the same plain
//! kernels, so the ratio measures exactly what batching plus cache reuse
//! buys, not incidental engine overheads.

use std::time::Instant;

use super::cache::{build_cache, score_with_cache, ScoringRequest};
use crate::error::Result;
use crate::model::{ModelConfig, Parameters};
use crate::rng::Rng;
use crate::sequence::{ExtractionStrategy, LifecycleSequence};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub m: usize,
    pub cached_items_per_sec: f64,
    pub naive_items_per_sec: f64,
    /// naive wall-clock over cached wall-clock, medians across repetitions.
    pub speedup: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Time both paths for each batch size. Each repetition scores the same
/// request: the cached path builds the user's cache once and scores all m
/// candidates in one batch; the naive path runs one full forward per
/// candidate. Items/sec are medians over repetitions.
pub fn bench_throughput(
    user: &LifecycleSequence,
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    m_values: &[usize],
    repetitions: usize,
    candidate_seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rng = Rng::new(candidate_seed);
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let candidates: Vec<u32> =
            (0..m).map(|_| 1 + rng.next_below(config.vocab_size - 1) as u32).collect();
        let request = ScoringRequest {
            user_id: user.user_id,
            candidates: candidates.clone(),
            scenario,
        };

        // One full forward for one candidate: history state rebuilt and
        // thrown away, the way per-item serving would.
        let naive_once = |candidate: u32| -> Result<f64> {
            let cache = build_cache(user, scenario, params, config, strategies)?;
            let one = ScoringRequest { user_id: user.user_id, candidates: vec![candidate], scenario };
            Ok(score_with_cache(&cache, &one, params, config, strategies)?[0])
        };

        // Warm-up: one run of each path.
        let cache = build_cache(user, scenario, params, config, strategies)?;
        score_with_cache(&cache, &request, params, config, strategies)?;
        naive_once(candidates[0])?;

        let mut cached_times = Vec::with_capacity(repetitions);
        let mut naive_times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            for &c in &candidates {
                naive_once(c)?;
            }
            naive_times.push(t0.elapsed().as_secs_f64());

            let t1 = Instant::now();
            let cache = build_cache(user, scenario, params, config, strategies)?;
            score_with_cache(&cache, &request, params, config, strategies)?;
            cached_times.push(t1.elapsed().as_secs_f64());
        }
        let naive_t = median(naive_times);
        let cached_t = median(cached_times);
        rows.push(BenchRow {
            m,
            cached_items_per_sec: m as f64 / cached_t,
            naive_items_per_sec: m as f64 / naive_t,
            speedup: naive_t / cached_t,
        });
    }
    Ok(rows)
}
