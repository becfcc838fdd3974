//! Model hyperparameters and ablation switches.

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::bias::TIME_BUCKET_COUNT;

/// Feed-forward activation. Recorded in the config so every run is
/// reproducible; SiLU is the default throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "silu" => Some(Activation::Silu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// All dimensions and switches of the network.
///
/// Ablation flags map onto the nested variants: everything on is the full
/// model; `use_bgf = false` drops gated fusion (block outputs concatenate
/// straight into the head); additionally turning off adaptive temperature
/// and relative bias leaves plain transformer blocks over the extracted
/// subsequences; with `blocks = 1` that is the vanilla transformer baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Model width d; every row vector has this many features.
    pub width: usize,
    /// Attention head count; must divide `width`.
    pub heads: usize,
    /// Stacked attention layers per block.
    pub layers_per_block: usize,
    /// Number of extraction strategies / transformer blocks N_b.
    pub blocks: usize,
    /// Subsequence budget n_k (rows of history per block).
    pub budget: usize,
    pub num_scenarios: usize,
    pub vocab_size: usize,
    pub num_actions: usize,
    /// Symmetric log-spaced relative-position buckets per head.
    pub position_buckets: usize,
    /// Signed time-delta buckets per head; fixed second-scale edges.
    pub time_buckets: usize,
    /// FFN hidden width = ffn_multiplier * width.
    pub ffn_multiplier: usize,
    pub activation: Activation,
    pub use_adaptive_temperature: bool,
    pub use_relative_bias: bool,
    pub use_bgf: bool,
    /// Squeeze-and-excitation bottleneck divisor for the fusion gate.
    pub gate_reduction: usize,
    /// Upper bound on candidates per scoring request.
    pub max_candidates: usize,
}

impl ModelConfig {
    /// Small all-features-on config; tests and examples start from here.
    pub fn small(width: usize, heads: usize, layers: usize, blocks: usize, budget: usize, vocab: usize) -> Self {
        ModelConfig {
            width,
            heads,
            layers_per_block: layers,
            blocks,
            budget,
            num_scenarios: 2,
            vocab_size: vocab,
            num_actions: 6,
            position_buckets: 16,
            time_buckets: TIME_BUCKET_COUNT,
            ffn_multiplier: 2,
            activation: Activation::Silu,
            use_adaptive_temperature: true,
            use_relative_bias: true,
            use_bgf: true,
            gate_reduction: 2,
            max_candidates: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("heads", self.heads),
            ("layers_per_block", self.layers_per_block),
            ("blocks", self.blocks),
            ("budget", self.budget),
            ("num_scenarios", self.num_scenarios),
            ("vocab_size", self.vocab_size),
            ("num_actions", self.num_actions),
            ("ffn_multiplier", self.ffn_multiplier),
            ("gate_reduction", self.gate_reduction),
            ("max_candidates", self.max_candidates),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.position_buckets < 4 || self.position_buckets % 2 != 0 {
            return Err(Error::Config(format!(
                "position_buckets must be an even number >= 4, got {}",
                self.position_buckets
            )));
        }
        if self.time_buckets != TIME_BUCKET_COUNT {
            return Err(Error::Config(format!(
                "time_buckets must be {TIME_BUCKET_COUNT} (fixed second-scale edges), got {}",
                self.time_buckets
            )));
        }
        if (self.blocks * self.width) % self.gate_reduction != 0 {
            return Err(Error::Config(format!(
                "gate_reduction {} must divide blocks*width = {}",
                self.gate_reduction,
                self.blocks * self.width
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Baseline softmax temperature sqrt(d/h); adaptive temperatures are
    /// anchored so that a zero raw parameter reproduces it exactly.
    pub fn base_temperature(&self) -> f64 {
        (self.head_dim() as f64).sqrt()
    }

    /// Total history budget n = blocks * budget.
    pub fn total_budget(&self) -> usize {
        self.blocks * self.budget
    }

    /// Width of the fused representation entering the head.
    pub fn fused_width(&self) -> usize {
        self.blocks * self.width
    }

    /// Canonical text rendering; the digest and config files share it.
    pub fn canonical_lines(&self) -> String {
        format!(
            "width = {}\nheads = {}\nlayers_per_block = {}\nblocks = {}\nbudget = {}\n\
             num_scenarios = {}\nvocab_size = {}\nnum_actions = {}\nposition_buckets = {}\n\
             time_buckets = {}\nffn_multiplier = {}\nactivation = {}\n\
             use_adaptive_temperature = {}\nuse_relative_bias = {}\nuse_bgf = {}\n\
             gate_reduction = {}\nmax_candidates = {}\n",
            self.width,
            self.heads,
            self.layers_per_block,
            self.blocks,
            self.budget,
            self.num_scenarios,
            self.vocab_size,
            self.num_actions,
            self.position_buckets,
            self.time_buckets,
            self.ffn_multiplier,
            self.activation.name(),
            self.use_adaptive_temperature,
            self.use_relative_bias,
            self.use_bgf,
            self.gate_reduction,
            self.max_candidates,
        )
    }

    pub fn digest(&self) -> u64 {
        Digest::new().write(self.canonical_lines().as_bytes()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_config_validates() {
        ModelConfig::small(16, 2, 2, 2, 8, 100).validate().unwrap();
    }

    #[test]
    fn width_must_divide_by_heads() {
        let cfg = ModelConfig::small(10, 3, 1, 1, 4, 100);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn digest_changes_with_any_field() {
        let a = ModelConfig::small(16, 2, 2, 2, 8, 100);
        let mut b = a.clone();
        b.use_bgf = false;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.budget = 16;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn base_temperature_is_sqrt_head_dim() {
        let cfg = ModelConfig::small(32, 4, 1, 1, 4, 100);
        assert_eq!(cfg.base_temperature(), (8.0f64).sqrt());
    }
}
