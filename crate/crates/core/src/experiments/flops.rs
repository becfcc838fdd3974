//! Static FLOPs accounting for one (user, single candidate) forward pass.
//!
//! Counts multiply-adds of every matmul the forward performs, attributed to
//! components; embeddings are zero-cost lookups, and one multiply-add is two
//! FLOPs. The static count must equal the tape's runtime matmul counter
//! exactly, which the tests enforce.

use crate::model::ModelConfig;

/// Per-component multiply-add counts for one forward pass with one
/// candidate. `total` always equals the sum of the components;
/// `attention_scores_history` sub-attributes the history-history share of
/// `attention_scores` (it is not an extra component).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    /// Embedding lookups; counted as zero multiply-adds by convention.
    pub embedding: u64,
    /// Joint QKV projections plus the output projection, all layers.
    pub qkv_projections: u64,
    /// Q K^T scores over all heads, layers, and blocks.
    pub attention_scores: u64,
    /// The history-history share of `attention_scores`.
    pub attention_scores_history: u64,
    /// Attention-weighted value mixing A V.
    pub attention_values: u64,
    /// Block feed-forward networks.
    pub ffn: u64,
    /// The fusion attention layer (projections, scores, values, FFN).
    pub fusion: u64,
    /// Squeeze-and-excitation gate matmuls.
    pub gate: u64,
    /// Scoring head.
    pub head: u64,
}

impl FlopsReport {
    /// Total multiply-adds (components sum; the history sub-attribution is
    /// not double-counted).
    pub fn total_macs(&self) -> u64 {
        self.embedding
            + self.qkv_projections
            + self.attention_scores
            + self.attention_values
            + self.ffn
            + self.fusion
            + self.gate
            + self.head
    }

    /// Total FLOPs under the 2-FLOPs-per-multiply-add convention.
    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs()
    }

    /// The analytic coefficient of the dominant linear term: multiply-adds
    /// per history token per layer spent in projections and FFN.
    pub fn linear_coefficient(config: &ModelConfig) -> u64 {
        let d = config.width as u64;
        let f = config.ffn_multiplier as u64;
        // qkv (3d^2) + output projection (d^2) + ffn in/out (2 f d^2)
        (4 + 2 * f) * d * d
    }

    /// kappa * s * l with s = total history budget and l = layers per
    /// block: the linear-in-sequence-and-depth part of the count.
    pub fn dominant_term_macs(config: &ModelConfig) -> u64 {
        Self::linear_coefficient(config)
            * (config.total_budget() as u64)
            * (config.layers_per_block as u64)
    }

    /// Everything the dominant term does not explain: quadratic attention,
    /// the candidate row's per-layer cost, fusion, gate, and head.
    pub fn constant_overhead_macs(&self, config: &ModelConfig) -> u64 {
        self.total_macs() - Self::dominant_term_macs(config)
    }
}

/// Exact static multiply-add count of `score(user, [one candidate])`,
/// mirroring the forward structure matmul for matmul.
pub fn count_flops(config: &ModelConfig) -> FlopsReport {
    count_flops_batched(config, 1)
}

/// Static count for an m-candidate batched forward.
pub fn count_flops_batched(config: &ModelConfig, m: usize) -> FlopsReport {
    let d = config.width as u64;
    let f = config.ffn_multiplier as u64 * d;
    let h = config.heads as u64;
    let dh = d / h;
    let n_k = config.budget as u64;
    let m = m as u64;
    let s = n_k + m; // rows per block forward
    let blocks = config.blocks as u64;
    let layers = config.layers_per_block as u64;
    let nb = config.blocks as u64;
    let fused = nb * d;
    let red = fused / config.gate_reduction as u64;

    // Per block layer: qkv [s,d]x[d,3d], w_o [s,d]x[d,d]
    let qkv_projections = blocks * layers * (s * d * 3 * d + s * d * d);
    // Per head: scores [s,dh]x[dh,s], values [s,s]x[s,dh]
    let attention_scores = blocks * layers * h * (s * dh * s);
    let attention_scores_history = blocks * layers * h * (n_k * dh * n_k);
    let attention_values = blocks * layers * h * (s * s * dh);
    // FFN: [s,d]x[d,f] and [s,f]x[f,d]
    let ffn = blocks * layers * (s * d * f + s * f * d);

    // Fusion runs once per candidate over [nb, d] rows.
    let fusion = if config.use_bgf {
        m * (nb * d * 3 * d            // qkv
            + h * (nb * dh * nb)       // scores
            + h * (nb * nb * dh)       // values
            + nb * d * d               // w_o
            + nb * d * f + nb * f * d) // ffn
    } else {
        0
    };
    let gate = if config.use_bgf { m * (fused * red + red * fused) } else { 0 };
    let head = m * fused;

    FlopsReport {
        embedding: 0,
        qkv_projections,
        attention_scores,
        attention_scores_history,
        attention_values,
        ffn,
        fusion,
        gate,
        head,
    }
}

/// Least-squares fit of kappa in total ~= kappa * (s*l) over measured grid
/// points (s, l, total_macs); reported alongside the analytic coefficient.
pub fn fit_dominant_coefficient(points: &[(usize, usize, u64)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(s, l, total) in points {
        let x = (s * l) as f64;
        num += x * total as f64;
        den += x * x;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
