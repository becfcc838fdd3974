//! Keyed text configuration files.
//!
//! One `key = value` pair per line, `#` comments, repeated `strategy` lines
//! for the extraction set. The same format (minus file paths) feeds the
//! scaling, grid, ablation, bench, and training entry points.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig};
use crate::sequence::{default_strategy_set, ActionSet, ExtractionStrategy, SyntheticSpec};
use crate::training::TrainHyper;

/// Where training/eval data comes from.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    Tsv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub strategies: Vec<ExtractionStrategy>,
    pub data: DataSpec,
    pub seeds: Vec<u64>,
    pub hyper: TrainHyper,
    pub grid: Vec<(usize, usize)>,
    pub scaling_layers: Vec<usize>,
    pub scaling_sequence: Vec<usize>,
    pub bench_candidates: Vec<usize>,
    pub bench_reps: usize,
    pub cache_capacity: usize,
}

fn bad(line_no: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: "<config>".into(), line: Some(line_no), msg: msg.into() }
}

fn parse_usize(line_no: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(line_no, format!("{key}: expected an integer, got '{v}'")))
}

fn parse_f64(line_no: usize, key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(line_no, format!("{key}: expected a number, got '{v}'")))
}

fn parse_bool(line_no: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line_no, format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_list<T, F: Fn(&str) -> Option<T>>(line_no: usize, key: &str, v: &str, f: F) -> Result<Vec<T>> {
    v.split(',')
        .map(|p| f(p.trim()).ok_or_else(|| bad(line_no, format!("{key}: bad entry '{p}'"))))
        .collect()
}

/// `64x1,32x2` style grid cells.
fn parse_cells(line_no: usize, v: &str) -> Result<Vec<(usize, usize)>> {
    parse_list(line_no, "grid", v, |p| {
        let (s, l) = p.split_once('x')?;
        Some((s.trim().parse().ok()?, l.trim().parse().ok()?))
    })
}

/// `name : actions=a|b : scenarios=0|1 : min_score=0.5`
fn parse_strategy(line_no: usize, id: usize, v: &str, budget: usize) -> Result<ExtractionStrategy> {
    let mut parts = v.split(':').map(str::trim);
    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| {
        bad(line_no, "strategy needs a name before the first ':'")
    })?;
    let mut strat = ExtractionStrategy::new(id, name, ActionSet::all(), budget);
    for part in parts {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| bad(line_no, format!("strategy clause '{part}' is not key=value")))?;
        match key.trim() {
            "actions" => {
                strat.action_filter = ActionSet::parse(val.trim())
                    .ok_or_else(|| bad(line_no, format!("bad action list '{val}'")))?;
            }
            "scenarios" => {
                strat.scenario_filter = Some(parse_list(line_no, "scenarios", &val.replace('|', ","), |p| {
                    p.parse().ok()
                })?);
            }
            "min_score" => strat.min_score = Some(parse_f64(line_no, "min_score", val.trim())?),
            other => return Err(bad(line_no, format!("unknown strategy clause '{other}'"))),
        }
    }
    Ok(strat)
}

/// `synthetic:seed=5,users=300,rank=2` or a TSV path.
pub fn parse_data_spec(value: &str, model: &ModelConfig) -> Result<DataSpec> {
    if let Some(args) = value.strip_prefix("synthetic:").or(if value == "synthetic" {
        Some("")
    } else {
        None
    }) {
        let mut spec = SyntheticSpec::new(1, 200, model.vocab_size, 2);
        spec.num_scenarios = model.num_scenarios as u16;
        for pair in args.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("synthetic clause '{pair}' is not key=value"))
            })?;
            let uint = || {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("synthetic {k}: bad integer '{v}'")))
            };
            match k.trim() {
                "seed" => spec.seed = uint()? as u64,
                "users" => spec.num_users = uint()?,
                "vocab" => spec.vocab_size = uint()?,
                "rank" => spec.rank = uint()?,
                "scenarios" => spec.num_scenarios = uint()? as u16,
                "min_events" => spec.min_events_per_user = uint()?,
                "max_events" => spec.max_events_per_user = uint()?,
                "sets_per_user" => spec.candidate_sets_per_user = uint()?,
                "candidates_per_set" => spec.candidates_per_set = uint()?,
                "flip" => {
                    spec.label_flip_prob = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("synthetic flip: bad number '{v}'")))?
                }
                "pair_frac" => {
                    spec.pair_frac = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("synthetic pair_frac: bad number '{v}'")))?
                }
                other => return Err(Error::Config(format!("unknown synthetic key '{other}'"))),
            }
        }
        if spec.vocab_size != model.vocab_size {
            return Err(Error::Config(format!(
                "synthetic vocab {} must match model vocab_size {}",
                spec.vocab_size, model.vocab_size
            )));
        }
        Ok(DataSpec::Synthetic(spec))
    } else {
        Ok(DataSpec::Tsv(PathBuf::from(value)))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut model = ModelConfig::small(16, 2, 2, 2, 16, 300);
    let mut hyper = TrainHyper::default();
    let mut seeds = vec![1u64, 2, 3];
    let mut strategy_lines: Vec<(usize, String)> = Vec::new();
    let mut data_value: Option<String> = None;
    let mut grid = Vec::new();
    let mut scaling_layers = vec![1, 2, 4];
    let mut scaling_sequence = vec![8, 16, 32];
    let mut bench_candidates = vec![1, 16, 64, 256];
    let mut bench_reps = 5;
    let mut cache_capacity = 1024;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, format!("'{line}' is not key = value")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "width" => model.width = parse_usize(line_no, key, value)?,
            "heads" => model.heads = parse_usize(line_no, key, value)?,
            "layers_per_block" => model.layers_per_block = parse_usize(line_no, key, value)?,
            "blocks" => model.blocks = parse_usize(line_no, key, value)?,
            "budget" => model.budget = parse_usize(line_no, key, value)?,
            "num_scenarios" => model.num_scenarios = parse_usize(line_no, key, value)?,
            "vocab_size" => model.vocab_size = parse_usize(line_no, key, value)?,
            "num_actions" => model.num_actions = parse_usize(line_no, key, value)?,
            "position_buckets" => model.position_buckets = parse_usize(line_no, key, value)?,
            "time_buckets" => model.time_buckets = parse_usize(line_no, key, value)?,
            "ffn_multiplier" => model.ffn_multiplier = parse_usize(line_no, key, value)?,
            "activation" => {
                model.activation = Activation::parse(value)
                    .ok_or_else(|| bad(line_no, format!("unknown activation '{value}'")))?
            }
            "use_adaptive_temperature" => {
                model.use_adaptive_temperature = parse_bool(line_no, key, value)?
            }
            "use_relative_bias" => model.use_relative_bias = parse_bool(line_no, key, value)?,
            "use_bgf" => model.use_bgf = parse_bool(line_no, key, value)?,
            "gate_reduction" => model.gate_reduction = parse_usize(line_no, key, value)?,
            "max_candidates" => model.max_candidates = parse_usize(line_no, key, value)?,
            "strategy" => strategy_lines.push((line_no, value.to_string())),
            "data" => data_value = Some(value.to_string()),
            "seeds" => {
                seeds = parse_list(line_no, key, value, |p| p.parse().ok())?;
            }
            "steps" => hyper.steps = parse_usize(line_no, key, value)?,
            "lr" => hyper.lr = parse_f64(line_no, key, value)?,
            "batch_users" => hyper.batch_users = parse_usize(line_no, key, value)?,
            "eval_every" => hyper.eval_every = parse_usize(line_no, key, value)?,
            "threads" => hyper.threads = parse_usize(line_no, key, value)?,
            "grid" => grid = parse_cells(line_no, value)?,
            "scaling_layers" => {
                scaling_layers = parse_list(line_no, key, value, |p| p.parse().ok())?;
            }
            "scaling_sequence" => {
                scaling_sequence = parse_list(line_no, key, value, |p| p.parse().ok())?;
            }
            "bench_candidates" => {
                bench_candidates = parse_list(line_no, key, value, |p| p.parse().ok())?;
            }
            "bench_reps" => bench_reps = parse_usize(line_no, key, value)?,
            "cache_capacity" => cache_capacity = parse_usize(line_no, key, value)?,
            other => return Err(bad(line_no, format!("unknown key '{other}'"))),
        }
    }

    model.validate()?;
    let strategies = if strategy_lines.is_empty() {
        default_strategy_set(model.blocks, model.budget)
    } else {
        strategy_lines
            .into_iter()
            .enumerate()
            .map(|(id, (line_no, text))| parse_strategy(line_no, id, &text, model.budget))
            .collect::<Result<Vec<_>>>()?
    };
    if strategies.len() != model.blocks {
        return Err(Error::Config(format!(
            "{} strategies declared for {} blocks",
            strategies.len(),
            model.blocks
        )));
    }
    hyper.seed = seeds.first().copied().unwrap_or(1);
    let data_value = data_value.unwrap_or_else(|| "synthetic:".into());
    let data = parse_data_spec(&data_value, &model)?;

    Ok(ExperimentConfig {
        model,
        strategies,
        data,
        seeds,
        hyper,
        grid,
        scaling_layers,
        scaling_sequence,
        bench_candidates,
        bench_reps,
        cache_capacity,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_config(&text).map_err(|e| match e {
        Error::Format { line, msg, .. } => {
            Error::Format { path: path.display().to_string(), line, msg }
        }
        other => other,
    })
}
