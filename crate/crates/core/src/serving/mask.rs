//! Attention masks for "single user, multiple items" batched scoring.
//!
//! One (n_k + m)^2 boolean matrix per block: valid history rows see each
//! other (bidirectional encoder), every candidate sees the whole valid
//! history plus itself, and candidates never see each other — the diagonal
//! rule that keeps batched candidates independent. Pad rows and columns are
//! fully masked.

/// Dense keep-mask; `true` means "query row i may attend to key column j".
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    size: usize,
    history_slots: usize,
    data: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn history_slots(&self) -> usize {
        self.history_slots
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.data[i * self.size + j]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn into_data(self) -> Vec<bool> {
        self.data
    }
}

/// Build the block mask: `history_slots` rows of (possibly padded) history
/// followed by `m` candidate rows. Valid history occupies the last
/// `valid_history` slots (left padding).
pub fn build_mask(history_slots: usize, valid_history: usize, m: usize) -> AttentionMask {
    assert!(valid_history <= history_slots, "valid history exceeds slots");
    assert!(m >= 1, "at least one candidate");
    let size = history_slots + m;
    let pad_end = history_slots - valid_history;
    let mut data = vec![false; size * size];
    for i in 0..size {
        let is_pad = i < pad_end;
        let is_history = !is_pad && i < history_slots;
        for j in 0..size {
            let j_valid_history = j >= pad_end && j < history_slots;
            let keep = if is_pad {
                false
            } else if is_history {
                j_valid_history
            } else {
                // Candidate row: the whole valid history plus itself.
                j_valid_history || j == i
            };
            data[i * size + j] = keep;
        }
    }
    AttentionMask { size, history_slots, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn single_candidate_sees_history_and_self() {
        let mask = build_mask(2, 2, 1);
        assert!(mask.allowed(2, 0));
        assert!(mask.allowed(2, 1));
        assert!(mask.allowed(2, 2));
        // History never looks at the candidate.
        assert!(!mask.allowed(0, 2));
        assert!(!mask.allowed(1, 2));
    }

    #[test]
    fn candidate_sub_block_is_the_identity_pattern() {
        let mask = build_mask(4, 3, 3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(mask.allowed(4 + i, 4 + j), i == j);
            }
        }
    }

    #[test]
    fn mask_matches_pairwise_rule_oracle() {
        let mut rng = Rng::new(2718);
        for _ in 0..50 {
            let slots = 1 + rng.next_below(12);
            let valid = rng.next_below(slots + 1);
            let m = 1 + rng.next_below(6);
            let mask = build_mask(slots, valid, m);
            let size = slots + m;
            let pad_end = slots - valid;
            for i in 0..size {
                for j in 0..size {
                    // Independent restatement of the rule, per pair.
                    let i_kind = if i < pad_end {
                        "pad"
                    } else if i < slots {
                        "hist"
                    } else {
                        "cand"
                    };
                    let j_is_valid_hist = (pad_end..slots).contains(&j);
                    let expect = match i_kind {
                        "pad" => false,
                        "hist" => j_is_valid_hist,
                        _ => j_is_valid_hist || i == j,
                    };
                    assert_eq!(mask.allowed(i, j), expect, "i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn pad_rows_and_columns_are_fully_masked() {
        let mask = build_mask(5, 2, 2);
        for j in 0..7 {
            assert!(!mask.allowed(0, j));
            assert!(!mask.allowed(1, j));
            assert!(!mask.allowed(2, j));
        }
        for i in 0..7 {
            assert!(!mask.allowed(i, 0));
            assert!(!mask.allowed(i, 1));
            assert!(!mask.allowed(i, 2));
        }
    }
}
