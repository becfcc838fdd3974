//! Relative position and time-delta bucketing for attention bias.
//!
//! Positions use symmetric log-spaced buckets (exact for short offsets,
//! logarithmic beyond a quarter of the bucket budget). Time deltas use fixed
//! second-scale edges — minute, hour, day, week, month — split by sign.

use crate::model::{ModelConfig, Parameters};
use crate::numerics::Tensor;

/// Log-spacing saturates at this absolute offset.
pub const POSITION_MAX_DISTANCE: usize = 128;

/// zero + 6 magnitude classes in each direction.
pub const TIME_BUCKET_COUNT: usize = 13;

const TIME_EDGES: [i64; 5] = [60, 3600, 86_400, 604_800, 2_592_000];

/// Bucket a signed relative position (query index minus key index) into
/// `num_buckets` symmetric buckets. `num_buckets` must be even and >= 4.
pub fn position_bucket(rel: i64, num_buckets: usize) -> usize {
    debug_assert!(num_buckets >= 4 && num_buckets % 2 == 0);
    let half = num_buckets / 2;
    let mut bucket = if rel > 0 { half } else { 0 };
    let n = rel.unsigned_abs() as usize;
    let max_exact = half / 2;
    if n < max_exact {
        bucket += n;
    } else {
        let log_part = (n as f64 / max_exact as f64).ln()
            / (POSITION_MAX_DISTANCE as f64 / max_exact as f64).ln()
            * (half - max_exact) as f64;
        bucket += (max_exact + log_part as usize).min(half - 1);
    }
    bucket
}

/// Bucket a signed time delta in seconds (query timestamp minus key
/// timestamp): 0 is its own bucket, then six magnitude classes per sign.
pub fn time_bucket(delta_seconds: i64) -> usize {
    if delta_seconds == 0 {
        return 0;
    }
    let magnitude = delta_seconds.unsigned_abs() as i64;
    let class = TIME_EDGES.iter().position(|&e| magnitude < e).unwrap_or(TIME_EDGES.len());
    if delta_seconds > 0 {
        1 + class
    } else {
        1 + TIME_EDGES.len() + 1 + class
    }
}

/// Per-pair bucket indices over `s` rows: entry i*s+j buckets the (query i,
/// key j) pair. Shared by the tape forward and the cache-resume path.
pub fn bucket_grids(positions: &[i64], timestamps: &[i64], position_buckets: usize) -> (Vec<usize>, Vec<usize>) {
    let s = positions.len();
    debug_assert_eq!(timestamps.len(), s);
    let mut pos = vec![0usize; s * s];
    let mut time = vec![0usize; s * s];
    for i in 0..s {
        for j in 0..s {
            pos[i * s + j] = position_bucket(positions[i] - positions[j], position_buckets);
            time[i * s + j] = time_bucket(timestamps[i] - timestamps[j]);
        }
    }
    (pos, time)
}

/// Dense relative bias for block `k`: bias[head][i][j] =
/// pos_table[head][bucket_p(i - j)] + time_table[head][bucket_t(t_i - t_j)].
/// Masking is applied later, inside the masked softmax, so every entry here
/// is finite.
pub fn relative_bias(
    block: usize,
    positions: &[i64],
    timestamps: &[i64],
    params: &Parameters,
    config: &ModelConfig,
) -> Tensor {
    let s = positions.len();
    let h = config.heads;
    let (pos_idx, time_idx) = bucket_grids(positions, timestamps, config.position_buckets);
    let pos_table = &params.blocks[block].pos_bias;
    let time_table = &params.blocks[block].time_bias;
    let mut data = vec![0.0; h * s * s];
    for head in 0..h {
        for p in 0..s * s {
            data[head * s * s + p] =
                pos_table.at(head, pos_idx[p]) + time_table.at(head, time_idx[p]);
        }
    }
    Tensor::new(vec![h, s, s], data).expect("shape matches construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar reference with explicit case analysis.
    fn reference_position_bucket(rel: i64, num_buckets: usize) -> usize {
        let half = num_buckets / 2;
        let max_exact = half / 2;
        let n = rel.unsigned_abs() as usize;
        let within = if n < max_exact {
            n
        } else {
            let ratio = (n as f64).ln() - (max_exact as f64).ln();
            let span = (POSITION_MAX_DISTANCE as f64).ln() - (max_exact as f64).ln();
            let b = max_exact + (ratio / span * (half - max_exact) as f64).floor() as usize;
            b.min(half - 1)
        };
        if rel > 0 {
            half + within
        } else {
            within
        }
    }

    #[test]
    fn bucket_matches_scalar_reference() {
        for buckets in [8usize, 16, 32] {
            for rel in -300i64..=300 {
                assert_eq!(
                    position_bucket(rel, buckets),
                    reference_position_bucket(rel, buckets),
                    "rel {rel}, buckets {buckets}"
                );
            }
        }
    }

    #[test]
    fn zero_offset_is_bucket_zero() {
        for buckets in [8usize, 16, 32] {
            assert_eq!(position_bucket(0, buckets), 0);
        }
        assert_eq!(time_bucket(0), 0);
    }

    #[test]
    fn position_buckets_stay_in_range_and_split_by_sign() {
        for rel in -100_000i64..=100_000 {
            let b = position_bucket(rel, 16);
            assert!(b < 16);
            if rel > 0 {
                assert!(b >= 8);
            } else {
                assert!(b < 8);
            }
        }
    }

    #[test]
    fn time_buckets_hit_the_documented_edges() {
        // Positive side: <1m, <1h, <1d, <1w, <30d, >=30d.
        assert_eq!(time_bucket(1), 1);
        assert_eq!(time_bucket(59), 1);
        assert_eq!(time_bucket(60), 2);
        assert_eq!(time_bucket(3_599), 2);
        assert_eq!(time_bucket(3_600), 3);
        assert_eq!(time_bucket(86_399), 3);
        assert_eq!(time_bucket(86_400), 4);
        assert_eq!(time_bucket(604_799), 4);
        assert_eq!(time_bucket(604_800), 5);
        assert_eq!(time_bucket(2_591_999), 5);
        assert_eq!(time_bucket(2_592_000), 6);
        assert_eq!(time_bucket(i64::MAX), 6);
        // Negative side mirrors at an offset of 6.
        assert_eq!(time_bucket(-1), 7);
        assert_eq!(time_bucket(-60), 8);
        assert_eq!(time_bucket(-2_592_000), 12);
        // Everything lands inside the table.
        for d in [-1_000_000_000i64, -500, -1, 0, 1, 500, 1_000_000_000] {
            assert!(time_bucket(d) < TIME_BUCKET_COUNT);
        }
    }
}
