//! Encoder-level KV cache: per block, per layer history keys/values (plus
//! the layer inputs needed to resume at candidate rows), built once per
//! (user, scenario) and reused across any number of candidate items.
//!
//! Correctness hinges on one property: for every layer, the history rows of
//! the full batched forward never see candidate rows, so the cached state
//! built without candidates is the same state the full forward would
//! compute. The resume path below performs, for the candidate rows, exactly
//! the floating-point operations the tape forward performs, through the
//! shared kernels, so cached and uncached logits agree to the last bit of
//! noise (the acceptance bound is 1e-9; in practice the difference is 0).

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::bias::{bucket_grids, position_bucket, time_bucket};
use crate::model::{Activation, LayerParams, ModelConfig, Parameters, RMS_EPS};
use crate::numerics::kernels;
use crate::numerics::Tensor;
use crate::sequence::{extract_all, ExtractionStrategy, LifecycleSequence};

/// One layer's cached history state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// [n_k, d] history keys, heads side by side.
    pub keys: Tensor,
    /// [n_k, d] history values.
    pub values: Tensor,
    /// [n_k, d] history input to this layer (lets a resume recompute
    /// anything at all without touching the history FFNs again).
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCache {
    pub layers: Vec<LayerCache>,
    pub valid_length: usize,
    /// Per-slot event timestamps (pads hold 0).
    pub timestamps: Vec<i64>,
    /// Most recent valid timestamp; candidates score "as of" this moment.
    pub now: i64,
}

/// Cached user state, keyed by the digest of (config, parameters,
/// strategies) and the scenario it was embedded under.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    pub user_id: u64,
    pub scenario: u16,
    pub digest: u64,
    pub blocks: Vec<BlockCache>,
}

/// One "single user, multiple items" request.
#[derive(Debug, Clone)]
pub struct ScoringRequest {
    pub user_id: u64,
    pub candidates: Vec<u32>,
    pub scenario: u16,
}

/// Digest covering everything a cache depends on besides the user: any
/// parameter, config, or strategy change invalidates silently-held caches.
pub fn state_digest(
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> u64 {
    let mut d = Digest::new();
    d.write_u64(config.digest());
    d.write_u64(params.digest());
    for s in strategies {
        d.write(s.name.as_bytes());
        d.write_u64(s.strategy_id as u64);
        d.write_u64(s.budget as u64);
        d.write(s.action_filter.to_string().as_bytes());
        if let Some(sc) = &s.scenario_filter {
            for &v in sc {
                d.write_u64(v as u64);
            }
        }
        if let Some(ms) = s.min_score {
            d.write_f64(ms);
        }
    }
    d.finish()
}

fn rmsnorm_rows(x: &[f64], rows: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for i in 0..rows {
        kernels::rmsnorm_row(&x[i * d..(i + 1) * d], RMS_EPS, &mut out[i * d..(i + 1) * d]);
    }
    out
}

fn activate(config: &ModelConfig, x: &mut [f64]) {
    match config.activation {
        Activation::Silu => x.iter_mut().for_each(|v| *v = kernels::silu(*v)),
        Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
    }
}

fn layer_temperature(
    config: &ModelConfig,
    raw_table: &Tensor,
    layer: usize,
    scenario: u16,
) -> f64 {
    if config.use_adaptive_temperature {
        crate::model::temperature_value(raw_table.at(layer, scenario as usize), config.base_temperature())
    } else {
        config.base_temperature()
    }
}

/// Build the cache: a history-only forward through every block and layer,
/// recording inputs, keys, and values. Candidates are never involved, which
/// is what makes the result reusable across candidate sets.
pub fn build_cache(
    user: &LifecycleSequence,
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Result<KVCache> {
    config.validate()?;
    if scenario as usize >= config.num_scenarios {
        return Err(Error::Vocabulary {
            what: "scenario",
            id: scenario as u64,
            limit: config.num_scenarios as u64,
        });
    }
    let subs = extract_all(user, strategies)?;
    let d = config.width;
    let h = config.heads;
    let dh = config.head_dim();
    let n_k = config.budget;

    let mut blocks = Vec::with_capacity(config.blocks);
    for (k, sub) in subs.iter().enumerate() {
        for e in sub.valid_events() {
            if e.item_id as usize >= config.vocab_size {
                return Err(Error::Vocabulary {
                    what: "item",
                    id: e.item_id as u64,
                    limit: config.vocab_size as u64,
                });
            }
        }
        let valid = sub.valid_length;
        let pad_end = n_k - valid;
        let timestamps: Vec<i64> = sub.events.iter().map(|e| e.timestamp as i64).collect();
        let now = sub.valid_events().last().map_or(0, |e| e.timestamp) as i64;

        // History embedding: item + action + scenario, pads exactly zero.
        let mut x = vec![0.0; n_k * d];
        for (r, e) in sub.events.iter().enumerate() {
            if e.is_pad() {
                continue;
            }
            for c in 0..d {
                x[r * d + c] = params.item_emb.at(e.item_id as usize, c)
                    + params.action_emb.at(e.action.index(), c)
                    + params.scenario_emb.at(scenario as usize, c);
            }
        }

        let positions: Vec<i64> = (0..n_k as i64).collect();
        let (pos_grid, time_grid) = bucket_grids(&positions, &timestamps, config.position_buckets);
        let allowed = |i: usize, j: usize| i >= pad_end && j >= pad_end;

        let bp = &params.blocks[k];
        let mut layers = Vec::with_capacity(config.layers_per_block);
        for (t, lp) in bp.layers.iter().enumerate() {
            let tau = layer_temperature(config, &bp.temperature, t, scenario);
            let xn = rmsnorm_rows(&x, n_k, d);
            let mut qkv = vec![0.0; n_k * 3 * d];
            kernels::matmul(&xn, lp.w_qkv.data(), n_k, d, 3 * d, &mut qkv);

            let mut keys = vec![0.0; n_k * d];
            let mut values = vec![0.0; n_k * d];
            for i in 0..n_k {
                keys[i * d..(i + 1) * d].copy_from_slice(&qkv[i * 3 * d + d..i * 3 * d + 2 * d]);
                values[i * d..(i + 1) * d]
                    .copy_from_slice(&qkv[i * 3 * d + 2 * d..i * 3 * d + 3 * d]);
            }
            layers.push(LayerCache {
                keys: Tensor::matrix(n_k, d, keys.clone())?,
                values: Tensor::matrix(n_k, d, values.clone())?,
                input: Tensor::matrix(n_k, d, x.clone())?,
            });

            // History-history attention (bidirectional over valid rows).
            let mut merged = vec![0.0; n_k * d];
            for head in 0..h {
                for i in 0..n_k {
                    let mut scores = vec![0.0; n_k];
                    for j in 0..n_k {
                        let mut dot = 0.0;
                        for c in 0..dh {
                            dot += qkv[i * 3 * d + head * dh + c] * keys[j * d + head * dh + c];
                        }
                        if config.use_relative_bias {
                            dot = (dot + bp.pos_bias.at(head, pos_grid[i * n_k + j]))
                                + bp.time_bias.at(head, time_grid[i * n_k + j]);
                        }
                        scores[j] = dot;
                    }
                    let mrow: Vec<bool> = (0..n_k).map(|j| allowed(i, j)).collect();
                    let mut probs = vec![0.0; n_k];
                    kernels::softmax_row_masked(&scores, Some(&mrow), tau, &mut probs);
                    for c in 0..dh {
                        let mut o = 0.0;
                        for j in 0..n_k {
                            o += probs[j] * values[j * d + head * dh + c];
                        }
                        merged[i * d + head * dh + c] = o;
                    }
                }
            }
            let mut proj = vec![0.0; n_k * d];
            kernels::matmul(&merged, lp.w_o.data(), n_k, d, d, &mut proj);
            let after_attn: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();

            let f = config.ffn_multiplier * d;
            let ffn_in = rmsnorm_rows(&after_attn, n_k, d);
            let mut hidden = vec![0.0; n_k * f];
            kernels::matmul(&ffn_in, lp.ffn_in.data(), n_k, d, f, &mut hidden);
            activate(config, &mut hidden);
            let mut ffn_out = vec![0.0; n_k * d];
            kernels::matmul(&hidden, lp.ffn_out.data(), n_k, f, d, &mut ffn_out);
            x = after_attn.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();

            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("cache build: block {k} layer {t} non-finite"),
                });
            }
        }
        blocks.push(BlockCache { layers, valid_length: valid, timestamps, now });
    }
    Ok(KVCache {
        user_id: user.user_id,
        scenario,
        digest: state_digest(params, config, strategies),
        blocks,
    })
}

/// Fusion attention + gate + head for one candidate's stacked block rows.
/// Mirrors the tape path operation for operation.
fn fuse_and_score(e: &[f64], scenario: u16, params: &Parameters, config: &ModelConfig) -> f64 {
    let nb = config.blocks;
    let d = config.width;
    let fused = nb * d;
    let y: Vec<f64> = if config.use_bgf {
        let h = config.heads;
        let dh = config.head_dim();
        let lp: &LayerParams = &params.fusion.layer;
        let tau = if config.use_adaptive_temperature {
            crate::model::temperature_value(
                params.fusion.temperature.at(0, scenario as usize),
                config.base_temperature(),
            )
        } else {
            config.base_temperature()
        };
        let xn = rmsnorm_rows(e, nb, d);
        let mut qkv = vec![0.0; nb * 3 * d];
        kernels::matmul(&xn, lp.w_qkv.data(), nb, d, 3 * d, &mut qkv);
        let mut merged = vec![0.0; nb * d];
        for head in 0..h {
            for i in 0..nb {
                let mut scores = vec![0.0; nb];
                for j in 0..nb {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += qkv[i * 3 * d + head * dh + c] * qkv[j * 3 * d + d + head * dh + c];
                    }
                    scores[j] = dot;
                }
                let mut probs = vec![0.0; nb];
                kernels::softmax_row_masked(&scores, None, tau, &mut probs);
                for c in 0..dh {
                    let mut o = 0.0;
                    for j in 0..nb {
                        o += probs[j] * qkv[j * 3 * d + 2 * d + head * dh + c];
                    }
                    merged[i * d + head * dh + c] = o;
                }
            }
        }
        let mut proj = vec![0.0; nb * d];
        kernels::matmul(&merged, lp.w_o.data(), nb, d, d, &mut proj);
        let after_attn: Vec<f64> = e.iter().zip(&proj).map(|(a, b)| a + b).collect();

        let f = config.ffn_multiplier * d;
        let ffn_in = rmsnorm_rows(&after_attn, nb, d);
        let mut hidden = vec![0.0; nb * f];
        kernels::matmul(&ffn_in, lp.ffn_in.data(), nb, d, f, &mut hidden);
        activate(config, &mut hidden);
        let mut ffn_out = vec![0.0; nb * d];
        kernels::matmul(&hidden, lp.ffn_out.data(), nb, f, d, &mut ffn_out);
        let g: Vec<f64> = after_attn.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();

        let red = fused / config.gate_reduction;
        let mut squeezed = vec![0.0; red];
        kernels::matmul(&g, params.gate.w_in.data(), 1, fused, red, &mut squeezed);
        for (v, b) in squeezed.iter_mut().zip(params.gate.b_in.data()) {
            *v += b;
        }
        activate(config, &mut squeezed);
        let mut expanded = vec![0.0; fused];
        kernels::matmul(&squeezed, params.gate.w_out.data(), 1, red, fused, &mut expanded);
        g.iter()
            .zip(expanded.iter().zip(params.gate.b_out.data()))
            .map(|(&gv, (&ev, &bv))| gv * kernels::sigmoid(ev + bv))
            .collect()
    } else {
        e.to_vec()
    };
    let mut logit = 0.0;
    for (c, &v) in y.iter().enumerate() {
        logit += v * params.head.at(c, 0);
    }
    logit
}

/// Score a request against a prebuilt cache. Logits equal the uncached
/// batched forward within 1e-9 absolute for every candidate.
pub fn score_with_cache(
    cache: &KVCache,
    request: &ScoringRequest,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Result<Vec<f64>> {
    let live = state_digest(params, config, strategies);
    if cache.digest != live {
        return Err(Error::Stale { expected: live, found: cache.digest });
    }
    if cache.scenario != request.scenario || cache.user_id != request.user_id {
        return Err(Error::Contract(format!(
            "cache holds user {} scenario {}, request wants user {} scenario {}",
            cache.user_id, cache.scenario, request.user_id, request.scenario
        )));
    }
    let m = request.candidates.len();
    if m == 0 {
        return Err(Error::Contract("scoring needs at least one candidate".into()));
    }
    if m > config.max_candidates {
        return Err(Error::Contract(format!(
            "{m} candidates exceed the configured max of {}",
            config.max_candidates
        )));
    }
    for &c in &request.candidates {
        if c == 0 || c as usize >= config.vocab_size {
            return Err(Error::Vocabulary {
                what: "candidate item",
                id: c as u64,
                limit: config.vocab_size as u64,
            });
        }
    }
    let d = config.width;
    let h = config.heads;
    let dh = config.head_dim();
    let n_k = config.budget;
    let scenario = request.scenario;

    // Per block, march the m candidate rows through the layers against the
    // cached history; collect each candidate's final row per block.
    let mut block_reps: Vec<Vec<f64>> = Vec::with_capacity(config.blocks);
    for (k, bc) in cache.blocks.iter().enumerate() {
        let valid = bc.valid_length;
        let pad_end = n_k - valid;
        let bp = &params.blocks[k];

        // Candidate embedding: item + scenario.
        let mut xc = vec![0.0; m * d];
        for (i, &cand) in request.candidates.iter().enumerate() {
            for c in 0..d {
                xc[i * d + c] = params.item_emb.at(cand as usize, c)
                    + params.scenario_emb.at(scenario as usize, c);
            }
        }

        // Bias values for (candidate, history j) and (candidate, self).
        let cand_pos = n_k as i64;
        for (t, lp) in bp.layers.iter().enumerate() {
            let lc = &bc.layers[t];
            let tau = layer_temperature(config, &bp.temperature, t, scenario);
            let xn = rmsnorm_rows(&xc, m, d);
            let mut qkv = vec![0.0; m * 3 * d];
            kernels::matmul(&xn, lp.w_qkv.data(), m, d, 3 * d, &mut qkv);

            let mut merged = vec![0.0; m * d];
            for head in 0..h {
                for i in 0..m {
                    // Scores over [valid history ascending, self]; the same
                    // visit order the full forward's masked softmax uses.
                    let mut scores = Vec::with_capacity(valid + 1);
                    for j in pad_end..n_k {
                        let mut dot = 0.0;
                        for c in 0..dh {
                            dot += qkv[i * 3 * d + head * dh + c]
                                * lc.keys.data()[j * d + head * dh + c];
                        }
                        if config.use_relative_bias {
                            let pb = position_bucket(cand_pos - j as i64, config.position_buckets);
                            let tb = time_bucket(bc.now - bc.timestamps[j]);
                            dot = (dot + bp.pos_bias.at(head, pb)) + bp.time_bias.at(head, tb);
                        }
                        scores.push(dot);
                    }
                    let mut self_dot = 0.0;
                    for c in 0..dh {
                        self_dot += qkv[i * 3 * d + head * dh + c]
                            * qkv[i * 3 * d + d + head * dh + c];
                    }
                    if config.use_relative_bias {
                        let pb = position_bucket(0, config.position_buckets);
                        let tb = time_bucket(0);
                        self_dot = (self_dot + bp.pos_bias.at(head, pb)) + bp.time_bias.at(head, tb);
                    }
                    scores.push(self_dot);

                    let mut probs = vec![0.0; scores.len()];
                    kernels::softmax_row_masked(&scores, None, tau, &mut probs);
                    for c in 0..dh {
                        let mut o = 0.0;
                        for (jj, j) in (pad_end..n_k).enumerate() {
                            o += probs[jj] * lc.values.data()[j * d + head * dh + c];
                        }
                        o += probs[valid] * qkv[i * 3 * d + 2 * d + head * dh + c];
                        merged[i * d + head * dh + c] = o;
                    }
                }
            }
            let mut proj = vec![0.0; m * d];
            kernels::matmul(&merged, lp.w_o.data(), m, d, d, &mut proj);
            let after_attn: Vec<f64> = xc.iter().zip(&proj).map(|(a, b)| a + b).collect();

            let f = config.ffn_multiplier * d;
            let ffn_in = rmsnorm_rows(&after_attn, m, d);
            let mut hidden = vec![0.0; m * f];
            kernels::matmul(&ffn_in, lp.ffn_in.data(), m, d, f, &mut hidden);
            activate(config, &mut hidden);
            let mut ffn_out = vec![0.0; m * d];
            kernels::matmul(&hidden, lp.ffn_out.data(), m, f, d, &mut ffn_out);
            xc = after_attn.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();

            if xc.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("cache resume: block {k} layer {t} non-finite"),
                });
            }
        }
        block_reps.push(xc);
    }

    // Fuse per candidate and score.
    let mut logits = Vec::with_capacity(m);
    for i in 0..m {
        let mut e = Vec::with_capacity(config.blocks * d);
        for rep in &block_reps {
            e.extend_from_slice(&rep[i * d..(i + 1) * d]);
        }
        logits.push(fuse_and_score(&e, scenario, params, config));
    }
    Ok(logits)
}
