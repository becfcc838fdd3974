//! Learnable weights: embedding tables, per-block layer stacks, bias tables,
//! raw temperature parameters, fusion layer, gate, and scoring head.

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{NodeId, Tape, Tensor};
use crate::rng::Rng;

/// Weights of one attention layer (no biases; normalization is gain-free).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// [d, 3d] joint query/key/value projection.
    pub w_qkv: Tensor,
    /// [d, d] output projection.
    pub w_o: Tensor,
    /// [d, f*d] feed-forward in.
    pub ffn_in: Tensor,
    /// [f*d, d] feed-forward out.
    pub ffn_out: Tensor,
}

/// One block: a layer stack plus its bias tables (shared across the stack)
/// and the raw temperature parameters, one per (layer, scenario).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub layers: Vec<LayerParams>,
    /// [heads, position_buckets]
    pub pos_bias: Tensor,
    /// [heads, time_buckets]
    pub time_bias: Tensor,
    /// [layers_per_block, num_scenarios] raw values; the actual temperature
    /// is base * softplus(raw) / softplus(0), positive for any raw value.
    pub temperature: Tensor,
}

/// The fusion attention layer has no bias tables and its temperature
/// depends on the scenario only.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub layer: LayerParams,
    /// [1, num_scenarios]
    pub temperature: Tensor,
}

/// Squeeze-and-excitation gate over the flattened fused representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// [blocks*d, (blocks*d)/reduction]
    pub w_in: Tensor,
    /// [1, (blocks*d)/reduction]
    pub b_in: Tensor,
    /// [(blocks*d)/reduction, blocks*d]
    pub w_out: Tensor,
    /// [1, blocks*d]
    pub b_out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// [vocab, d]; row 0 is the pad item and never receives gradient.
    pub item_emb: Tensor,
    /// [num_actions, d]
    pub action_emb: Tensor,
    /// [num_scenarios, d]
    pub scenario_emb: Tensor,
    pub blocks: Vec<BlockParams>,
    pub fusion: FusionParams,
    pub gate: GateParams,
    /// [blocks*d, 1] scoring head.
    pub head: Tensor,
}

fn trunc_normal(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.next_trunc_normal(0.02)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn layer_shapes(config: &ModelConfig) -> [(usize, usize); 4] {
    let d = config.width;
    let f = config.ffn_multiplier * d;
    [(d, 3 * d), (d, d), (d, f), (f, d)]
}

impl LayerParams {
    fn init(rng: &mut Rng, config: &ModelConfig) -> Self {
        let [qkv, o, fin, fout] = layer_shapes(config);
        LayerParams {
            w_qkv: trunc_normal(rng, vec![qkv.0, qkv.1]),
            w_o: trunc_normal(rng, vec![o.0, o.1]),
            ffn_in: trunc_normal(rng, vec![fin.0, fin.1]),
            ffn_out: trunc_normal(rng, vec![fout.0, fout.1]),
        }
    }

    fn zeros(config: &ModelConfig) -> Self {
        let [qkv, o, fin, fout] = layer_shapes(config);
        LayerParams {
            w_qkv: Tensor::zeros(vec![qkv.0, qkv.1]),
            w_o: Tensor::zeros(vec![o.0, o.1]),
            ffn_in: Tensor::zeros(vec![fin.0, fin.1]),
            ffn_out: Tensor::zeros(vec![fout.0, fout.1]),
        }
    }
}

impl Parameters {
    /// Truncated-normal init (std 0.02) for tables and projections; zeros
    /// for gate biases and raw temperatures, so the initial temperature is
    /// exactly the baseline sqrt(d/h).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let d = config.width;
        let fused = config.fused_width();
        let red = fused / config.gate_reduction;
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                layers: (0..config.layers_per_block)
                    .map(|_| LayerParams::init(&mut rng, config))
                    .collect(),
                pos_bias: trunc_normal(&mut rng, vec![config.heads, config.position_buckets]),
                time_bias: trunc_normal(&mut rng, vec![config.heads, config.time_buckets]),
                temperature: Tensor::zeros(vec![config.layers_per_block, config.num_scenarios]),
            })
            .collect();
        Ok(Parameters {
            item_emb: trunc_normal(&mut rng, vec![config.vocab_size, d]),
            action_emb: trunc_normal(&mut rng, vec![config.num_actions, d]),
            scenario_emb: trunc_normal(&mut rng, vec![config.num_scenarios, d]),
            blocks,
            fusion: FusionParams {
                layer: LayerParams::init(&mut rng, config),
                temperature: Tensor::zeros(vec![1, config.num_scenarios]),
            },
            gate: GateParams {
                w_in: trunc_normal(&mut rng, vec![fused, red]),
                b_in: Tensor::zeros(vec![1, red]),
                w_out: trunc_normal(&mut rng, vec![red, fused]),
                b_out: Tensor::zeros(vec![1, fused]),
            },
            head: trunc_normal(&mut rng, vec![fused, 1]),
        })
    }

    /// All-zero weights with the right shapes (checkpoint loading target).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let fused = config.fused_width();
        let red = fused / config.gate_reduction;
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                layers: (0..config.layers_per_block).map(|_| LayerParams::zeros(config)).collect(),
                pos_bias: Tensor::zeros(vec![config.heads, config.position_buckets]),
                time_bias: Tensor::zeros(vec![config.heads, config.time_buckets]),
                temperature: Tensor::zeros(vec![config.layers_per_block, config.num_scenarios]),
            })
            .collect();
        Ok(Parameters {
            item_emb: Tensor::zeros(vec![config.vocab_size, d]),
            action_emb: Tensor::zeros(vec![config.num_actions, d]),
            scenario_emb: Tensor::zeros(vec![config.num_scenarios, d]),
            blocks,
            fusion: FusionParams {
                layer: LayerParams::zeros(config),
                temperature: Tensor::zeros(vec![1, config.num_scenarios]),
            },
            gate: GateParams {
                w_in: Tensor::zeros(vec![fused, red]),
                b_in: Tensor::zeros(vec![1, red]),
                w_out: Tensor::zeros(vec![red, fused]),
                b_out: Tensor::zeros(vec![1, fused]),
            },
            head: Tensor::zeros(vec![fused, 1]),
        })
    }

    /// Named views in canonical order. Checkpoints, digests, the optimizer,
    /// and gradient checks all walk this order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("item_emb".into(), &self.item_emb),
            ("action_emb".into(), &self.action_emb),
            ("scenario_emb".into(), &self.scenario_emb),
        ];
        for (k, b) in self.blocks.iter().enumerate() {
            for (t, l) in b.layers.iter().enumerate() {
                out.push((format!("block{k}.layer{t}.w_qkv"), &l.w_qkv));
                out.push((format!("block{k}.layer{t}.w_o"), &l.w_o));
                out.push((format!("block{k}.layer{t}.ffn_in"), &l.ffn_in));
                out.push((format!("block{k}.layer{t}.ffn_out"), &l.ffn_out));
            }
            out.push((format!("block{k}.pos_bias"), &b.pos_bias));
            out.push((format!("block{k}.time_bias"), &b.time_bias));
            out.push((format!("block{k}.temperature"), &b.temperature));
        }
        out.push(("fusion.w_qkv".into(), &self.fusion.layer.w_qkv));
        out.push(("fusion.w_o".into(), &self.fusion.layer.w_o));
        out.push(("fusion.ffn_in".into(), &self.fusion.layer.ffn_in));
        out.push(("fusion.ffn_out".into(), &self.fusion.layer.ffn_out));
        out.push(("fusion.temperature".into(), &self.fusion.temperature));
        out.push(("gate.w_in".into(), &self.gate.w_in));
        out.push(("gate.b_in".into(), &self.gate.b_in));
        out.push(("gate.w_out".into(), &self.gate.w_out));
        out.push(("gate.b_out".into(), &self.gate.b_out));
        out.push(("head".into(), &self.head));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("item_emb".into(), &mut self.item_emb),
            ("action_emb".into(), &mut self.action_emb),
            ("scenario_emb".into(), &mut self.scenario_emb),
        ];
        for (k, b) in self.blocks.iter_mut().enumerate() {
            for (t, l) in b.layers.iter_mut().enumerate() {
                out.push((format!("block{k}.layer{t}.w_qkv"), &mut l.w_qkv));
                out.push((format!("block{k}.layer{t}.w_o"), &mut l.w_o));
                out.push((format!("block{k}.layer{t}.ffn_in"), &mut l.ffn_in));
                out.push((format!("block{k}.layer{t}.ffn_out"), &mut l.ffn_out));
            }
            out.push((format!("block{k}.pos_bias"), &mut b.pos_bias));
            out.push((format!("block{k}.time_bias"), &mut b.time_bias));
            out.push((format!("block{k}.temperature"), &mut b.temperature));
        }
        out.push(("fusion.w_qkv".into(), &mut self.fusion.layer.w_qkv));
        out.push(("fusion.w_o".into(), &mut self.fusion.layer.w_o));
        out.push(("fusion.ffn_in".into(), &mut self.fusion.layer.ffn_in));
        out.push(("fusion.ffn_out".into(), &mut self.fusion.layer.ffn_out));
        out.push(("fusion.temperature".into(), &mut self.fusion.temperature));
        out.push(("gate.w_in".into(), &mut self.gate.w_in));
        out.push(("gate.b_in".into(), &mut self.gate.b_in));
        out.push(("gate.w_out".into(), &mut self.gate.w_out));
        out.push(("gate.b_out".into(), &mut self.gate.b_out));
        out.push(("head".into(), &mut self.head));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Flatten all weights in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.named() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrite all weights from a flat vector in canonical order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "flat vector has {} values, parameters need {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.named_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Gradients flattened in the same canonical order (zeros where a tensor
    /// received none).
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.named() {
            match t.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        out
    }

    /// Digest over every weight's bit pattern plus tensor names; detects any
    /// parameter change for cache staleness checks.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        for (name, t) in self.named() {
            d.write(name.as_bytes());
            for &v in t.data() {
                d.write_f64(v);
            }
        }
        d.finish()
    }
}

// ── Tape binding ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub w_qkv: NodeId,
    pub w_o: NodeId,
    pub ffn_in: NodeId,
    pub ffn_out: NodeId,
}

#[derive(Debug)]
pub struct BoundBlock {
    pub layers: Vec<BoundLayer>,
    pub pos_bias: NodeId,
    pub time_bias: NodeId,
    pub temperature: NodeId,
}

/// Node handles for every parameter tensor on one tape.
#[derive(Debug)]
pub struct BoundParams {
    pub item_emb: NodeId,
    pub action_emb: NodeId,
    pub scenario_emb: NodeId,
    pub blocks: Vec<BoundBlock>,
    pub fusion_layer: BoundLayer,
    pub fusion_temperature: NodeId,
    pub gate_w_in: NodeId,
    pub gate_b_in: NodeId,
    pub gate_w_out: NodeId,
    pub gate_b_out: NodeId,
    pub head: NodeId,
}

impl BoundParams {
    /// Put every parameter tensor on the tape as a leaf.
    pub fn bind(tape: &mut Tape, params: &Parameters, trainable: bool) -> Self {
        let bind_layer = |tape: &mut Tape, l: &LayerParams| BoundLayer {
            w_qkv: tape.leaf(l.w_qkv.clone(), trainable),
            w_o: tape.leaf(l.w_o.clone(), trainable),
            ffn_in: tape.leaf(l.ffn_in.clone(), trainable),
            ffn_out: tape.leaf(l.ffn_out.clone(), trainable),
        };
        let item_emb = tape.leaf(params.item_emb.clone(), trainable);
        let action_emb = tape.leaf(params.action_emb.clone(), trainable);
        let scenario_emb = tape.leaf(params.scenario_emb.clone(), trainable);
        let blocks = params
            .blocks
            .iter()
            .map(|b| BoundBlock {
                layers: b.layers.iter().map(|l| bind_layer(tape, l)).collect(),
                pos_bias: tape.leaf(b.pos_bias.clone(), trainable),
                time_bias: tape.leaf(b.time_bias.clone(), trainable),
                temperature: tape.leaf(b.temperature.clone(), trainable),
            })
            .collect();
        BoundParams {
            item_emb,
            action_emb,
            scenario_emb,
            blocks,
            fusion_layer: bind_layer(tape, &params.fusion.layer),
            fusion_temperature: tape.leaf(params.fusion.temperature.clone(), trainable),
            gate_w_in: tape.leaf(params.gate.w_in.clone(), trainable),
            gate_b_in: tape.leaf(params.gate.b_in.clone(), trainable),
            gate_w_out: tape.leaf(params.gate.w_out.clone(), trainable),
            gate_b_out: tape.leaf(params.gate.b_out.clone(), trainable),
            head: tape.leaf(params.head.clone(), trainable),
        }
    }

    /// Node ids in the same canonical order as `Parameters::named`.
    pub fn ids_in_canonical_order(&self) -> Vec<NodeId> {
        let mut out = vec![self.item_emb, self.action_emb, self.scenario_emb];
        for b in &self.blocks {
            for l in &b.layers {
                out.extend([l.w_qkv, l.w_o, l.ffn_in, l.ffn_out]);
            }
            out.extend([b.pos_bias, b.time_bias, b.temperature]);
        }
        let f = &self.fusion_layer;
        out.extend([f.w_qkv, f.w_o, f.ffn_in, f.ffn_out, self.fusion_temperature]);
        out.extend([self.gate_w_in, self.gate_b_in, self.gate_w_out, self.gate_b_out]);
        out.push(self.head);
        out
    }

    /// Copy gradients off the tape into each parameter's gradient buffer
    /// (zeros for tensors that received no gradient).
    pub fn write_grads(&self, tape: &Tape, params: &mut Parameters) {
        let ids = self.ids_in_canonical_order();
        for ((_, tensor), id) in params.named_mut().into_iter().zip(ids) {
            let g = match tape.grad(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tensor.numel()],
            };
            tensor.set_grad(g);
        }
    }
}
