//! The scoring network forward pass.
//!
//! Each extraction strategy's subsequence runs through its own stack of
//! adaptive attention layers over [history rows; candidate rows]. Candidate
//! rows are read out after the last layer, fused across blocks (gated fusion
//! or plain concatenation under ablation), and projected to one logit per
//! candidate. Everything is recorded on a tape so the same code path serves
//! scoring and training.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::model::bias::bucket_grids;
use crate::model::params::{BoundLayer, BoundParams};
use crate::model::{Activation, ModelConfig, Parameters};
use crate::numerics::{NodeId, Tape, TempSpec, Tensor};
use crate::sequence::{extract_all, ExtractionStrategy, LifecycleSequence, SubSequence};
use crate::serving::build_mask;

/// Gain-free RMS normalization epsilon used around attention and FFN.
pub const RMS_EPS: f64 = 1e-6;

/// Per-layer history state captured during an uncached forward; the serving
/// cache stores exactly these (restricted to history rows).
#[derive(Debug, Default)]
pub struct ForwardTrace {
    /// blocks[k].0[t] = layer input X, .1[t] = keys, .2[t] = values; all
    /// full [n_k + m, d] matrices at layer t of block k.
    pub blocks: Vec<(Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)>,
}

/// Everything atl layers need besides their input rows.
struct LayerCtx<'a> {
    mask: Rc<Vec<bool>>,
    /// Per-head flat gather indices into the bias tables, shared across the
    /// block's layers. None when relative bias is ablated away.
    pos_idx: Option<Vec<Rc<Vec<usize>>>>,
    time_idx: Option<Vec<Rc<Vec<usize>>>>,
    bound: &'a BoundParams,
    config: &'a ModelConfig,
}

fn check_ids(
    config: &ModelConfig,
    sub: &SubSequence,
    candidates: &[u32],
    scenario: u16,
) -> Result<()> {
    for e in sub.valid_events() {
        if e.item_id as usize >= config.vocab_size {
            return Err(Error::Vocabulary {
                what: "item",
                id: e.item_id as u64,
                limit: config.vocab_size as u64,
            });
        }
        if e.action.index() >= config.num_actions {
            return Err(Error::Vocabulary {
                what: "action",
                id: e.action.index() as u64,
                limit: config.num_actions as u64,
            });
        }
        if e.scenario_id as usize >= config.num_scenarios {
            return Err(Error::Vocabulary {
                what: "scenario",
                id: e.scenario_id as u64,
                limit: config.num_scenarios as u64,
            });
        }
    }
    for &c in candidates {
        if c == 0 || c as usize >= config.vocab_size {
            return Err(Error::Vocabulary {
                what: "candidate item",
                id: c as u64,
                limit: config.vocab_size as u64,
            });
        }
    }
    if scenario as usize >= config.num_scenarios {
        return Err(Error::Vocabulary {
            what: "scenario",
            id: scenario as u64,
            limit: config.num_scenarios as u64,
        });
    }
    Ok(())
}

/// Embed one block's rows: history rows get item + action + scenario
/// embeddings, candidate rows item + scenario, pad rows exactly zero.
pub(crate) fn embed_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    sub: &SubSequence,
    candidates: &[u32],
    scenario: u16,
) -> Result<NodeId> {
    check_ids(config, sub, candidates, scenario)?;
    let d = config.width;
    let n_k = sub.budget();
    let s = n_k + candidates.len();
    let mut item_idx = vec![usize::MAX; s * d];
    let mut action_idx = vec![usize::MAX; s * d];
    let mut scenario_idx = vec![usize::MAX; s * d];
    for (r, e) in sub.events.iter().enumerate() {
        if e.is_pad() {
            continue;
        }
        for c in 0..d {
            item_idx[r * d + c] = e.item_id as usize * d + c;
            action_idx[r * d + c] = e.action.index() * d + c;
            scenario_idx[r * d + c] = scenario as usize * d + c;
        }
    }
    for (offset, &cand) in candidates.iter().enumerate() {
        let r = n_k + offset;
        for c in 0..d {
            item_idx[r * d + c] = cand as usize * d + c;
            scenario_idx[r * d + c] = scenario as usize * d + c;
        }
    }
    let items = tape.gather(bound.item_emb, Rc::new(item_idx), vec![s, d])?;
    let actions = tape.gather(bound.action_emb, Rc::new(action_idx), vec![s, d])?;
    let scenarios = tape.gather(bound.scenario_emb, Rc::new(scenario_idx), vec![s, d])?;
    let sum = tape.add(items, actions)?;
    tape.add(sum, scenarios)
}

/// Row positions for bias: history slots count 0..n_k, and every candidate
/// sits at the "next" position n_k.
pub(crate) fn row_positions(n_k: usize, m: usize) -> Vec<i64> {
    (0..n_k as i64).chain(std::iter::repeat_n(n_k as i64, m)).collect()
}

/// Row timestamps for bias: events keep their own, pads use 0 (masked
/// anyway), candidates borrow the most recent valid timestamp.
pub(crate) fn row_timestamps(sub: &SubSequence, m: usize) -> Vec<i64> {
    let now = sub.valid_events().last().map_or(0, |e| e.timestamp) as i64;
    sub.events
        .iter()
        .map(|e| e.timestamp as i64)
        .chain(std::iter::repeat_n(now, m))
        .collect()
}

/// Plain-value twin of `temperature_spec`; the serving resume path must
/// reproduce the tape's temperature bit for bit, so both funnel through the
/// same kernels and operation order.
pub(crate) fn temperature_value(raw: f64, base: f64) -> f64 {
    use crate::numerics::kernels::softplus;
    (softplus(raw) / softplus(0.0)) * base
}

/// Temperature for (block, layer, scenario): base * softplus(raw)/softplus(0)
/// as a differentiable node, or the constant base when ablated.
fn temperature_spec(
    tape: &mut Tape,
    config: &ModelConfig,
    raw_table: NodeId,
    row: usize,
    scenario: u16,
) -> Result<TempSpec> {
    if !config.use_adaptive_temperature {
        return Ok(TempSpec::Const(config.base_temperature()));
    }
    let table_row = tape.slice(raw_table, 0, row, 1)?;
    let raw = tape.slice(table_row, 1, scenario as usize, 1)?;
    let sp = tape.softplus(raw);
    // softplus(raw) / softplus(0) is exactly 1.0 at raw = 0, anchoring the
    // initial temperature to the baseline bit for bit.
    let ratio = tape.div_const(sp, crate::numerics::kernels::softplus(0.0))?;
    let tau = tape.scale(ratio, config.base_temperature());
    Ok(TempSpec::Node(tau))
}

/// One adaptive transformer layer: pre-normalized multi-head attention with
/// relative bias and a temperature-scaled masked softmax, then a
/// pre-normalized feed-forward, residual connections around both.
fn atl_on_tape(
    tape: &mut Tape,
    layer: &BoundLayer,
    x: NodeId,
    temp: TempSpec,
    ctx: &LayerCtx<'_>,
    coords: (usize, usize),
    trace: Option<&mut (Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)>,
) -> Result<NodeId> {
    let config = ctx.config;
    let (d, h, dh) = (config.width, config.heads, config.head_dim());
    let s = tape.value(x).rows();

    let xn = tape.rmsnorm(x, RMS_EPS)?;
    let qkv = tape.matmul(xn, layer.w_qkv)?;
    let q = tape.slice(qkv, 1, 0, d)?;
    let k = tape.slice(qkv, 1, d, d)?;
    let v = tape.slice(qkv, 1, 2 * d, d)?;

    if let Some((inputs, keys, values)) = trace {
        inputs.push(tape.value(x).clone());
        keys.push(tape.value(k).clone());
        values.push(tape.value(v).clone());
    }

    let mut head_outs = Vec::with_capacity(h);
    for head in 0..h {
        let qh = tape.slice(q, 1, head * dh, dh)?;
        let kh = tape.slice(k, 1, head * dh, dh)?;
        let vh = tape.slice(v, 1, head * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let mut scores = tape.matmul(qh, kt)?;
        if let (Some(pos), Some(time)) = (&ctx.pos_idx, &ctx.time_idx) {
            let pb = tape.gather(ctx.bound.blocks[coords.0].pos_bias, pos[head].clone(), vec![s, s])?;
            let tb =
                tape.gather(ctx.bound.blocks[coords.0].time_bias, time[head].clone(), vec![s, s])?;
            scores = tape.add(scores, pb)?;
            scores = tape.add(scores, tb)?;
        }
        let attn = tape.softmax_rows_masked(scores, temp, Some(ctx.mask.clone()))?;
        head_outs.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat(&head_outs, 1)?;
    let projected = tape.matmul(merged, layer.w_o)?;
    let after_attn = tape.add(x, projected)?;

    let ffn_in = tape.rmsnorm(after_attn, RMS_EPS)?;
    let hidden = tape.matmul(ffn_in, layer.ffn_in)?;
    let activated = match config.activation {
        Activation::Silu => tape.silu(hidden),
        Activation::Relu => tape.relu(hidden),
    };
    let ffn_out = tape.matmul(activated, layer.ffn_out)?;
    let out = tape.add(after_attn, ffn_out)?;

    if !tape.value(out).is_finite() {
        return Err(Error::Numeric {
            context: format!("block {} layer {} produced a non-finite value", coords.0, coords.1),
        });
    }
    Ok(out)
}

/// Per-head flat indices into an [heads, buckets] table for every (i, j)
/// pair, from the precomputed bucket grid.
fn head_gather_indices(grid: &[usize], heads: usize, buckets: usize) -> Vec<Rc<Vec<usize>>> {
    (0..heads)
        .map(|head| Rc::new(grid.iter().map(|&b| head * buckets + b).collect()))
        .collect()
}

/// Run one block's full stack over [history; candidates]; returns the final
/// [n_k + m, d] representation.
pub(crate) fn block_stack_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    sub: &SubSequence,
    candidates: &[u32],
    scenario: u16,
    block: usize,
    trace: Option<&mut (Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)>,
) -> Result<NodeId> {
    let m = candidates.len();
    let n_k = sub.budget();
    let mask = Rc::new(build_mask(n_k, sub.valid_length, m).into_data());

    let (pos_idx, time_idx) = if config.use_relative_bias {
        let positions = row_positions(n_k, m);
        let timestamps = row_timestamps(sub, m);
        let (pos_grid, time_grid) = bucket_grids(&positions, &timestamps, config.position_buckets);
        (
            Some(head_gather_indices(&pos_grid, config.heads, config.position_buckets)),
            Some(head_gather_indices(&time_grid, config.heads, config.time_buckets)),
        )
    } else {
        (None, None)
    };

    let ctx = LayerCtx { mask, pos_idx, time_idx, bound, config };
    let mut x = embed_on_tape(tape, bound, config, sub, candidates, scenario)?;
    let mut trace = trace;
    for t in 0..config.layers_per_block {
        let temp = temperature_spec(tape, config, bound.blocks[block].temperature, t, scenario)?;
        x = atl_on_tape(
            tape,
            &bound.blocks[block].layers[t],
            x,
            temp,
            &ctx,
            (block, t),
            trace.as_deref_mut(),
        )?;
    }
    Ok(x)
}

/// Gated fusion of one candidate's per-block representations e: [blocks, d].
/// A bias-free fusion attention layer (temperature from the scenario alone)
/// mixes the blocks, then a squeeze-and-excitation sigmoid gate scales every
/// element.
pub(crate) fn bgf_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    e: NodeId,
    scenario: u16,
) -> Result<NodeId> {
    let fused = config.fused_width();
    let temp = temperature_spec(tape, config, bound.fusion_temperature, 0, scenario)?;
    let all_visible = Rc::new(vec![true; config.blocks * config.blocks]);
    let ctx = LayerCtx { mask: all_visible, pos_idx: None, time_idx: None, bound, config };
    let g = atl_on_tape(tape, &bound.fusion_layer, e, temp, &ctx, (usize::MAX, 0), None)?;

    let flat = tape.reshape(g, vec![1, fused])?;
    let squeezed = tape.matmul(flat, bound.gate_w_in)?;
    let squeezed = tape.add_row_vec(squeezed, bound.gate_b_in)?;
    let hidden = match config.activation {
        Activation::Silu => tape.silu(squeezed),
        Activation::Relu => tape.relu(squeezed),
    };
    let expanded = tape.matmul(hidden, bound.gate_w_out)?;
    let expanded = tape.add_row_vec(expanded, bound.gate_b_out)?;
    let gate = tape.sigmoid(expanded);
    let gate_matrix = tape.reshape(gate, vec![config.blocks, config.width])?;
    tape.mul(g, gate_matrix)
}

/// Full forward on an existing tape: one logit node per candidate.
pub(crate) fn logits_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    user: &LifecycleSequence,
    candidates: &[u32],
    scenario: u16,
    mut trace: Option<&mut ForwardTrace>,
) -> Result<Vec<NodeId>> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::Contract("scoring needs at least one candidate".into()));
    }
    if candidates.len() > config.max_candidates {
        return Err(Error::Contract(format!(
            "{} candidates exceed the configured max of {}",
            candidates.len(),
            config.max_candidates
        )));
    }
    if strategies.len() != config.blocks {
        return Err(Error::Config(format!(
            "{} strategies for {} blocks",
            strategies.len(),
            config.blocks
        )));
    }
    for s in strategies {
        if s.budget != config.budget {
            return Err(Error::Config(format!(
                "strategy '{}' budget {} != configured budget {}",
                s.name, s.budget, config.budget
            )));
        }
    }
    let subs = extract_all(user, strategies)?;
    let m = candidates.len();
    let n_k = config.budget;

    let mut block_outputs = Vec::with_capacity(config.blocks);
    for k in 0..config.blocks {
        let sink = trace.as_deref_mut().map(|t| {
            t.blocks.push((Vec::new(), Vec::new(), Vec::new()));
            t.blocks.last_mut().expect("just pushed")
        });
        block_outputs.push(block_stack_on_tape(
            tape, bound, config, &subs[k], candidates, scenario, k, sink,
        )?);
    }

    let mut logits = Vec::with_capacity(m);
    for j in 0..m {
        let parts: Vec<NodeId> = block_outputs
            .iter()
            .map(|&out| tape.slice(out, 0, n_k + j, 1))
            .collect::<Result<_>>()?;
        let e = tape.concat(&parts, 0)?;
        let y = if config.use_bgf { bgf_on_tape(tape, bound, config, e, scenario)? } else { e };
        let flat = tape.reshape(y, vec![1, config.fused_width()])?;
        let logit = tape.matmul(flat, bound.head)?;
        logits.push(logit);
    }
    Ok(logits)
}

// ── Public operations ───────────────────────────────────────────────────

/// Score `m` candidates for one user in one batched forward pass.
pub fn score(
    user: &LifecycleSequence,
    candidates: &[u32],
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let ids = logits_on_tape(&mut tape, &bound, config, strategies, user, candidates, scenario, None)?;
    Ok(ids.into_iter().map(|id| tape.value(id).data()[0]).collect())
}

/// Scoring variant that also returns per-layer history state, exercised by
/// the cache-equivalence checks.
pub fn score_with_trace(
    user: &LifecycleSequence,
    candidates: &[u32],
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Result<(Vec<f64>, ForwardTrace)> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let mut trace = ForwardTrace::default();
    let ids = logits_on_tape(
        &mut tape,
        &bound,
        config,
        strategies,
        user,
        candidates,
        scenario,
        Some(&mut trace),
    )?;
    Ok((ids.into_iter().map(|id| tape.value(id).data()[0]).collect(), trace))
}

/// Standalone embedding of one subsequence plus candidates (history rows
/// sum item, action, and scenario embeddings; candidates drop the action).
pub fn embed(
    sub: &SubSequence,
    candidates: &[u32],
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let id = embed_on_tape(&mut tape, &bound, config, sub, candidates, scenario)?;
    Ok(tape.value(id).clone())
}

/// Standalone adaptive transformer layer, for oracle comparisons.
pub fn atl_forward(
    x: &Tensor,
    block: usize,
    layer_index: usize,
    scenario: u16,
    mask: &crate::serving::AttentionMask,
    positions: &[i64],
    timestamps: &[i64],
    params: &Parameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    if mask.size() != x.rows() {
        return Err(Error::Contract(format!(
            "mask is {}x{} but input has {} rows",
            mask.size(),
            mask.size(),
            x.rows()
        )));
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let (pos_idx, time_idx) = if config.use_relative_bias {
        let (pos_grid, time_grid) = bucket_grids(positions, timestamps, config.position_buckets);
        (
            Some(head_gather_indices(&pos_grid, config.heads, config.position_buckets)),
            Some(head_gather_indices(&time_grid, config.heads, config.time_buckets)),
        )
    } else {
        (None, None)
    };
    let ctx = LayerCtx {
        mask: Rc::new(mask.data().to_vec()),
        pos_idx,
        time_idx,
        bound: &bound,
        config,
    };
    let x_id = tape.leaf(x.clone(), false);
    let temp =
        temperature_spec(&mut tape, config, ctx.bound.blocks[block].temperature, layer_index, scenario)?;
    let out = atl_on_tape(
        &mut tape,
        &ctx.bound.blocks[block].layers[layer_index],
        x_id,
        temp,
        &ctx,
        (block, layer_index),
        None,
    )?;
    Ok(tape.value(out).clone())
}

/// One block end to end; rows of the result are the candidates' E(S_k).
pub fn block_forward(
    sub: &SubSequence,
    candidates: &[u32],
    scenario: u16,
    block: usize,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let full = block_stack_on_tape(&mut tape, &bound, config, sub, candidates, scenario, block, None)?;
    let cand_rows = tape.slice(full, 0, sub.budget(), candidates.len())?;
    Ok(tape.value(cand_rows).clone())
}

/// Analytic gradients of sum(logits) versus central finite differences.
///
/// Checks every parameter tensor; `coords_per_tensor` caps how many
/// coordinates of each tensor are probed (None checks all of them, which is
/// quadratic-ish in model size). Returns the max relative error.
pub fn grad_check(
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    user: &LifecycleSequence,
    candidates: &[u32],
    scenario: u16,
    step: f64,
    coords_per_tensor: Option<usize>,
    sample_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, true);
    let logits =
        logits_on_tape(&mut tape, &bound, config, strategies, user, candidates, scenario, None)?;
    let stacked = tape.concat(&logits, 0)?;
    let loss = tape.sum_all(stacked);
    tape.backward(loss)?;

    let mut probe = params.clone();
    bound.write_grads(&tape, &mut probe);
    let analytic = probe.flat_grads();
    let mut theta = probe.flatten();

    let coords = match coords_per_tensor {
        None => (0..theta.len()).collect::<Vec<_>>(),
        Some(cap) => {
            let mut rng = crate::rng::Rng::new(sample_seed);
            let mut coords = Vec::new();
            let mut offset = 0;
            for (_, t) in probe.named() {
                let n = t.numel();
                if n <= cap {
                    coords.extend(offset..offset + n);
                } else {
                    let mut picked: Vec<usize> = (0..n).collect();
                    rng.shuffle(&mut picked);
                    coords.extend(picked[..cap].iter().map(|&i| offset + i));
                }
                offset += n;
            }
            coords
        }
    };

    let mut scratch = probe.clone();
    crate::numerics::fd_check_coords(
        &mut theta,
        &analytic,
        |flat| {
            scratch.load_flat(flat).expect("flat length fixed");
            score(user, candidates, scenario, &scratch, config, strategies)
                .expect("forward failed during fd probe")
                .iter()
                .sum()
        },
        step,
        &coords,
    )
}

/// Standalone gated fusion of per-block outputs for one candidate.
pub fn bgf_forward(
    e: &Tensor,
    scenario: u16,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    if e.shape() != [config.blocks, config.width] {
        return Err(Error::Contract(format!(
            "fusion input must be [blocks, width] = [{}, {}], got {:?}",
            config.blocks,
            config.width,
            e.shape()
        )));
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let e_id = tape.leaf(e.clone(), false);
    let out = bgf_on_tape(&mut tape, &bound, config, e_id, scenario)?;
    Ok(tape.value(out).clone())
}
