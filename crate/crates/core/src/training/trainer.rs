//! The training loop: compacted multi-candidate samples, per-sample
//! gradients reduced in sample order (threaded or not, same bits), Adam
//! updates, periodic AUC evaluation, and bit-exact checkpoint/resume.

use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::auc;
use crate::error::{Error, Result};
use crate::model::checkpoint::{read_named_tensors, write_named_tensors};
use crate::model::{logits_on_tape, BoundParams, ModelConfig, Parameters};
use crate::numerics::Tape;
use crate::par::parallel_map;
use crate::rng::Rng;
use crate::sequence::{
    ActionSet, CandidateSet, ExtractionStrategy, LifecycleSequence, SyntheticDataset,
};

/// One compacted "single user, multiple items" record.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub user_id: u64,
    pub scenario_id: u16,
    pub items: Vec<u32>,
    pub labels: Vec<u8>,
}

/// Users plus their train/eval candidate samples.
#[derive(Debug)]
pub struct Dataset {
    users: Vec<LifecycleSequence>,
    index: HashMap<u64, usize>,
    pub train: Vec<TrainSample>,
    pub eval: Vec<TrainSample>,
}

impl Dataset {
    pub(crate) fn build(users: Vec<LifecycleSequence>, train: Vec<TrainSample>, eval: Vec<TrainSample>) -> Self {
        let index = users.iter().enumerate().map(|(i, u)| (u.user_id, i)).collect();
        Dataset { users, index, train, eval }
    }

    pub fn user(&self, user_id: u64) -> Result<&LifecycleSequence> {
        self.index
            .get(&user_id)
            .map(|&i| &self.users[i])
            .ok_or_else(|| Error::Contract(format!("unknown user {user_id}")))
    }

    pub fn users(&self) -> &[LifecycleSequence] {
        &self.users
    }

    /// Per-user temporal split over the generator's candidate sets: the last
    /// 20% (at least one) of each user's sets are held out for evaluation.
    pub fn from_synthetic(data: SyntheticDataset) -> Self {
        let mut per_user: HashMap<u64, Vec<&CandidateSet>> = HashMap::new();
        for set in &data.candidate_sets {
            per_user.entry(set.user_id).or_default().push(set);
        }
        let mut train = Vec::new();
        let mut eval = Vec::new();
        let mut user_ids: Vec<u64> = per_user.keys().copied().collect();
        user_ids.sort_unstable();
        for uid in user_ids {
            let mut sets = per_user.remove(&uid).expect("key exists");
            sets.sort_by_key(|s| s.order);
            let held_out = (sets.len() + 4) / 5; // ceil(20%), at least 1
            let cut = sets.len() - held_out.min(sets.len());
            for (i, set) in sets.iter().enumerate() {
                let sample = TrainSample {
                    user_id: set.user_id,
                    scenario_id: set.scenario_id,
                    items: set.items.clone(),
                    labels: set.labels.clone(),
                };
                if i < cut {
                    train.push(sample);
                } else {
                    eval.push(sample);
                }
            }
        }
        Dataset::build(data.users, train, eval)
    }

    /// Temporal split of ingested event logs: the first 60% of each user's
    /// events become the visible history, events in the 60-80% band become
    /// training candidates, and the final 20% become evaluation candidates.
    /// Labels mark membership in `positive_actions`.
    pub fn from_sequences(
        sequences: Vec<LifecycleSequence>,
        positive_actions: ActionSet,
        candidates_per_sample: usize,
        min_events: usize,
    ) -> Result<Self> {
        let mut users = Vec::new();
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for seq in sequences {
            let n = seq.len();
            if n < min_events.max(5) {
                continue;
            }
            let hist_end = n * 3 / 5;
            let train_end = n * 4 / 5;
            let events = seq.events().to_vec();
            let history = LifecycleSequence::new(seq.user_id, events[..hist_end].to_vec());
            let to_samples = |slice: &[crate::sequence::Event], out: &mut Vec<TrainSample>| {
                let mut by_scenario: HashMap<u16, Vec<(u32, u8)>> = HashMap::new();
                for e in slice {
                    by_scenario
                        .entry(e.scenario_id)
                        .or_default()
                        .push((e.item_id, u8::from(positive_actions.contains(e.action))));
                }
                let mut scenarios: Vec<u16> = by_scenario.keys().copied().collect();
                scenarios.sort_unstable();
                for sc in scenarios {
                    let pairs = &by_scenario[&sc];
                    for chunk in pairs.chunks(candidates_per_sample.max(1)) {
                        out.push(TrainSample {
                            user_id: seq.user_id,
                            scenario_id: sc,
                            items: chunk.iter().map(|(i, _)| *i).collect(),
                            labels: chunk.iter().map(|(_, l)| *l).collect(),
                        });
                    }
                }
            };
            to_samples(&events[hist_end..train_end], &mut train);
            to_samples(&events[train_end..], &mut eval);
            users.push(history);
        }
        if train.is_empty() {
            return Err(Error::Config("dataset produced no training samples".into()));
        }
        Ok(Dataset::build(users, train, eval))
    }
}

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub lr: f64,
    pub steps: usize,
    pub batch_users: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// 0 = one worker per core.
    pub threads: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { lr: 3e-3, steps: 200, batch_users: 8, seed: 1, eval_every: 50, threads: 0 }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Parameters,
    pub adam: AdamState,
    pub step: usize,
    pub rng_state: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub eval_auc: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub curve: Vec<CurvePoint>,
    pub diverged: bool,
}

/// Loss node construction shared by training and the compaction checks:
/// mean over candidates of softplus(z) - z*y.
fn sample_loss_value_and_grads(
    sample: &TrainSample,
    dataset: &Dataset,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    want_grads: bool,
) -> Result<(f64, Vec<f64>)> {
    let user = dataset.user(sample.user_id)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, want_grads);
    let logits = logits_on_tape(
        &mut tape,
        &bound,
        config,
        strategies,
        user,
        &sample.items,
        sample.scenario_id,
        None,
    )?;
    let stacked = tape.concat(&logits, 0)?;
    let softplus = tape.softplus(stacked);
    let labels: Vec<f64> = sample.labels.iter().map(|&l| f64::from(l)).collect();
    let zy = tape.mul_const(stacked, Rc::new(labels))?;
    let neg_zy = tape.scale(zy, -1.0);
    let per_item = tape.add(softplus, neg_zy)?;
    let loss = tape.mean_all(per_item);
    let value = tape.value(loss).data()[0];
    if !want_grads || !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    let mut grads = Vec::with_capacity(params.num_params());
    for id in bound.ids_in_canonical_order() {
        match tape.grad(id) {
            Some(g) => grads.extend_from_slice(g),
            None => grads.extend(std::iter::repeat_n(0.0, tape.value(id).numel())),
        }
    }
    Ok((value, grads))
}

/// Training loss of one sample under given parameters (no gradients).
pub fn sample_loss(
    sample: &TrainSample,
    dataset: &Dataset,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Result<f64> {
    sample_loss_value_and_grads(sample, dataset, params, config, strategies, false)
        .map(|(v, _)| v)
}

/// AUC over the evaluation split, scores pooled across samples.
pub fn evaluate(
    dataset: &Dataset,
    params: &Parameters,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    threads: usize,
) -> Result<f64> {
    if dataset.eval.is_empty() {
        return Err(Error::UndefinedMetric("empty evaluation split".into()));
    }
    let results = parallel_map(&dataset.eval, threads, |sample| {
        let user = dataset.user(sample.user_id)?;
        crate::model::score(user, &sample.items, sample.scenario_id, params, config, strategies)
    });
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (sample, res) in dataset.eval.iter().zip(results) {
        scores.extend(res?);
        labels.extend_from_slice(&sample.labels);
    }
    auc(&scores, &labels)
}

/// Train from scratch.
pub fn train(
    dataset: &Dataset,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    let params = Parameters::init(config, hyper.seed)?;
    let adam = AdamState::new(&params);
    let state = TrainState { params, adam, step: 0, rng_state: Rng::new(hyper.seed ^ 0x5eed).state() };
    train_from(dataset, config, strategies, hyper, state)
}

/// Continue from a checkpointed state; given the same data order this
/// reproduces the uninterrupted trajectory bit for bit.
pub fn train_from(
    dataset: &Dataset,
    config: &ModelConfig,
    strategies: &[ExtractionStrategy],
    hyper: &TrainHyper,
    state: TrainState,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let TrainState { mut params, mut adam, step: start_step, rng_state } = state;
    let mut rng = Rng::from_state(rng_state);
    let adam_cfg = AdamConfig::with_lr(hyper.lr);
    let mut curve = Vec::with_capacity(hyper.steps);
    let n_params = params.num_params();

    let mut last_good: Option<TrainState> = None;
    for step in start_step + 1..=hyper.steps {
        let batch: Vec<&TrainSample> = (0..hyper.batch_users)
            .map(|_| &dataset.train[rng.next_below(dataset.train.len())])
            .collect();

        let results = parallel_map(&batch, hyper.threads, |sample| {
            sample_loss_value_and_grads(sample, dataset, &params, config, strategies, true)
        });

        // Ordered reduction: mean loss and mean gradient over the batch.
        let mut mean_loss = 0.0;
        let mut mean_grads = vec![0.0; n_params];
        let mut bad = false;
        for res in results {
            match res {
                Ok((value, grads)) if value.is_finite() => {
                    mean_loss += value;
                    for (m, g) in mean_grads.iter_mut().zip(&grads) {
                        *m += g;
                    }
                }
                Ok(_) | Err(Error::Numeric { .. }) => {
                    bad = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if bad {
            // Divergence: return the last state that evaluated cleanly.
            let state = last_good.unwrap_or(TrainState {
                params,
                adam,
                step: step - 1,
                rng_state: rng.state(),
            });
            return Ok(TrainOutcome { state, curve, diverged: true });
        }
        let scale = 1.0 / hyper.batch_users as f64;
        mean_loss *= scale;
        for g in mean_grads.iter_mut() {
            *g *= scale;
        }

        let mut offset = 0;
        for (_, t) in params.named_mut() {
            let n = t.numel();
            t.set_grad(mean_grads[offset..offset + n].to_vec());
            offset += n;
        }
        adam_step(&mut params, &mut adam, &adam_cfg)?;

        let eval_auc = if !dataset.eval.is_empty()
            && hyper.eval_every > 0
            && (step % hyper.eval_every == 0 || step == hyper.steps)
        {
            Some(evaluate(dataset, &params, config, strategies, hyper.threads)?)
        } else {
            None
        };
        curve.push(CurvePoint { step, loss: mean_loss, eval_auc });
        last_good = Some(TrainState {
            params: params.clone(),
            adam: adam.clone(),
            step,
            rng_state: rng.state(),
        });
    }
    let state = last_good.unwrap_or(TrainState { params, adam, step: start_step, rng_state: rng.state() });
    Ok(TrainOutcome { state, curve, diverged: false })
}

// ── Train-state checkpointing ───────────────────────────────────────────

/// Serialize parameters, optimizer moments, step count, and the RNG stream.
pub fn save_state(path: &Path, state: &TrainState, config: &ModelConfig) -> Result<()> {
    let mut entries: Vec<(String, crate::numerics::Tensor)> = Vec::new();
    for (name, t) in state.params.named() {
        entries.push((name, t.clone()));
    }
    let names: Vec<String> = state.params.named().into_iter().map(|(n, _)| n).collect();
    for (slot, name) in names.iter().enumerate() {
        entries.push((
            format!("opt.m.{name}"),
            crate::numerics::Tensor::new(vec![1, state.adam.m[slot].len()], state.adam.m[slot].clone())?,
        ));
        entries.push((
            format!("opt.v.{name}"),
            crate::numerics::Tensor::new(vec![1, state.adam.v[slot].len()], state.adam.v[slot].clone())?,
        ));
    }
    entries.push((
        "meta.counters".into(),
        crate::numerics::Tensor::matrix(
            1,
            2,
            vec![state.step as f64, f64::from_bits(state.rng_state)],
        )?,
    ));
    let views: Vec<(String, &crate::numerics::Tensor)> =
        entries.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_named_tensors(path, config.digest(), &views)
}

pub fn load_state(path: &Path, config: &ModelConfig) -> Result<TrainState> {
    let (digest, tensors) = read_named_tensors(path)?;
    if digest != config.digest() {
        return Err(Error::Stale { expected: config.digest(), found: digest });
    }
    let mut params = Parameters::zeros(config)?;
    let by_name: HashMap<String, crate::numerics::Tensor> = tensors.into_iter().collect();
    let missing = |what: &str| Error::Format {
        path: path.display().to_string(),
        line: None,
        msg: format!("missing tensor '{what}'"),
    };
    {
        let mut named = params.named_mut();
        for (name, slot) in named.iter_mut() {
            let t = by_name.get(name.as_str()).ok_or_else(|| missing(name))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: None,
                    msg: format!("tensor '{name}' shape mismatch"),
                });
            }
            slot.data_mut().copy_from_slice(t.data());
        }
    }
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut adam = AdamState::new(&params);
    for (slot, name) in names.iter().enumerate() {
        adam.m[slot] = by_name
            .get(&format!("opt.m.{name}"))
            .ok_or_else(|| missing(&format!("opt.m.{name}")))?
            .data()
            .to_vec();
        adam.v[slot] = by_name
            .get(&format!("opt.v.{name}"))
            .ok_or_else(|| missing(&format!("opt.v.{name}")))?
            .data()
            .to_vec();
    }
    let meta = by_name.get("meta.counters").ok_or_else(|| missing("meta.counters"))?;
    let step = meta.data()[0] as usize;
    adam.step = step;
    Ok(TrainState { params, adam, step, rng_state: meta.data()[1].to_bits() })
}
