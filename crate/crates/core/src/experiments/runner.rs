//! Grid, scaling-axis, and ablation experiment runners.
//!
//! Every run trains cells from scratch on one shared dataset with shared
//! seeds, evaluates AUC on the held-out split, and emits schema-stable CSV.
//! Cells run as independent jobs on a worker pool; results are collected in
//! job order, so the emitted CSV is identical whatever the worker count. A
//! diverged cell yields an `NaN` AUC row and flags the run.

use super::config_file::{DataSpec, ExperimentConfig};
use super::csvio::{fmt_f64, CsvTable};
use super::flops::count_flops;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::par::parallel_map;
use crate::sequence::{load_events, synthesize_users, Action, ActionSet, ExtractionStrategy};
use crate::training::{train, Dataset, TrainHyper};

/// One trained (cell, seed) outcome.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub sequence_len: usize,
    pub layers: usize,
    pub seed: u64,
    /// Final evaluation AUC; NaN when the cell diverged.
    pub auc: f64,
    pub flops: u64,
    pub diverged: bool,
}

#[derive(Debug)]
pub struct GridReport {
    pub rows: CsvTable,
    pub families: CsvTable,
    pub results: Vec<CellResult>,
    pub any_diverged: bool,
}

#[derive(Debug)]
pub struct ScalingReport {
    pub rows: CsvTable,
    pub results: Vec<CellResult>,
    pub any_diverged: bool,
}

#[derive(Debug)]
pub struct AblationReport {
    pub rows: CsvTable,
    pub variants: Vec<String>,
    pub any_diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingAxis {
    Layers,
    Sequence,
}

impl ScalingAxis {
    pub fn name(self) -> &'static str {
        match self {
            ScalingAxis::Layers => "layers",
            ScalingAxis::Sequence => "sequence",
        }
    }

    pub fn parse(s: &str) -> Option<ScalingAxis> {
        match s {
            "layers" => Some(ScalingAxis::Layers),
            "sequence" => Some(ScalingAxis::Sequence),
            _ => None,
        }
    }
}

/// Materialize the configured data source.
pub fn build_dataset(spec: &DataSpec) -> Result<Dataset> {
    match spec {
        DataSpec::Synthetic(s) => Ok(Dataset::from_synthetic(synthesize_users(s)?)),
        DataSpec::Tsv(path) => {
            let report = load_events(path)?;
            Dataset::from_sequences(report.sequences, ActionSet::of(&Action::POSITIVE), 8, 10)
        }
    }
}

/// Derive the per-cell model config and budget-adjusted strategies for a
/// total sequence length `s` and depth `l`.
fn derive_cell(
    base: &ModelConfig,
    strategies: &[ExtractionStrategy],
    s: usize,
    l: usize,
) -> Result<(ModelConfig, Vec<ExtractionStrategy>)> {
    if s == 0 || s % base.blocks != 0 {
        return Err(Error::Config(format!(
            "sequence length {s} must be a positive multiple of blocks = {}",
            base.blocks
        )));
    }
    let mut config = base.clone();
    config.budget = s / base.blocks;
    config.layers_per_block = l;
    config.validate()?;
    let strategies = strategies
        .iter()
        .map(|st| {
            let mut st = st.clone();
            st.budget = config.budget;
            st
        })
        .collect();
    Ok((config, strategies))
}

/// Train every (cell, seed) job on the worker pool and collect results in
/// job order. Inner training runs single-threaded; parallelism lives at the
/// job level so the outputs never depend on scheduling.
fn run_cells(
    cells: &[(usize, usize)],
    exp: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<Vec<CellResult>> {
    let mut jobs = Vec::new();
    for &(s, l) in cells {
        for &seed in &exp.seeds {
            jobs.push((s, l, seed));
        }
    }
    let outcomes = parallel_map(&jobs, exp.hyper.threads, |&(s, l, seed)| -> Result<CellResult> {
        let (config, strategies) = derive_cell(&exp.model, &exp.strategies, s, l)?;
        let hyper = TrainHyper {
            seed,
            threads: 1,
            eval_every: exp.hyper.steps,
            ..exp.hyper.clone()
        };
        let outcome = train(dataset, &config, &strategies, &hyper)?;
        let auc = if outcome.diverged {
            f64::NAN
        } else {
            outcome
                .curve
                .last()
                .and_then(|p| p.eval_auc)
                .ok_or_else(|| Error::Contract("training ended without a final evaluation".into()))?
        };
        Ok(CellResult {
            sequence_len: s,
            layers: l,
            seed,
            auc,
            flops: count_flops(&config).total_flops(),
            diverged: outcome.diverged,
        })
    });
    outcomes.into_iter().collect()
}

fn median(xs: &mut Vec<f64>) -> f64 {
    xs.retain(|v| v.is_finite());
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-cell median AUC over seeds, in cell order.
pub fn cell_medians(cells: &[(usize, usize)], results: &[CellResult]) -> Vec<f64> {
    cells
        .iter()
        .map(|&(s, l)| {
            let mut aucs: Vec<f64> = results
                .iter()
                .filter(|r| r.sequence_len == s && r.layers == l)
                .map(|r| r.auc)
                .collect();
            median(&mut aucs)
        })
        .collect()
}

/// Train the configured (sequence, layers) grid and summarize equal-FLOPs
/// families: cells sharing one s*l product, with the spread ("performance
/// interval") of their median AUCs.
pub fn run_grid(exp: &ExperimentConfig) -> Result<GridReport> {
    if exp.grid.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    let dataset = build_dataset(&exp.data)?;
    let results = run_cells(&exp.grid, exp, &dataset)?;

    let mut rows = CsvTable::new(&["s", "l", "flops", "auc", "seed"]);
    for r in &results {
        rows.push(vec![
            r.sequence_len.to_string(),
            r.layers.to_string(),
            r.flops.to_string(),
            fmt_f64(r.auc),
            r.seed.to_string(),
        ]);
    }

    // Group cells into equal-FLOPs families by their s*l product.
    let mut products: Vec<usize> = exp.grid.iter().map(|&(s, l)| s * l).collect();
    products.sort_unstable();
    products.dedup();
    let mut families = CsvTable::new(&[
        "product",
        "cells",
        "min_median_auc",
        "max_median_auc",
        "spread",
    ]);
    for product in products {
        let members: Vec<(usize, usize)> =
            exp.grid.iter().copied().filter(|&(s, l)| s * l == product).collect();
        let medians = cell_medians(&members, &results);
        let finite: Vec<f64> = medians.iter().copied().filter(|v| v.is_finite()).collect();
        let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let cells: Vec<String> = members.iter().map(|&(s, l)| format!("{s}x{l}")).collect();
        if finite.is_empty() {
            families.push(vec![
                product.to_string(),
                cells.join("|"),
                "NaN".into(),
                "NaN".into(),
                "NaN".into(),
            ]);
        } else {
            families.push(vec![
                product.to_string(),
                cells.join("|"),
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(hi - lo),
            ]);
        }
    }

    let any_diverged = results.iter().any(|r| r.diverged);
    Ok(GridReport { rows, families, results, any_diverged })
}

/// Sweep one axis, everything else fixed at the base config.
pub fn run_scaling(exp: &ExperimentConfig, axis: ScalingAxis) -> Result<ScalingReport> {
    let values = match axis {
        ScalingAxis::Layers => &exp.scaling_layers,
        ScalingAxis::Sequence => &exp.scaling_sequence,
    };
    if values.is_empty() {
        return Err(Error::Config("scaling axis has no values".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("scaling values must be sorted ascending".into()));
    }
    let cells: Vec<(usize, usize)> = match axis {
        ScalingAxis::Layers => {
            values.iter().map(|&l| (exp.model.total_budget(), l)).collect()
        }
        ScalingAxis::Sequence => {
            values.iter().map(|&s| (s, exp.model.layers_per_block)).collect()
        }
    };
    let dataset = build_dataset(&exp.data)?;
    let results = run_cells(&cells, exp, &dataset)?;
    let mut rows = CsvTable::new(&["axis", "value", "flops", "auc", "seed"]);
    for (r, &(s, l)) in results.iter().zip(cells.iter().flat_map(|c| {
        std::iter::repeat_n(c, exp.seeds.len())
    })) {
        let value = match axis {
            ScalingAxis::Layers => l,
            ScalingAxis::Sequence => s,
        };
        rows.push(vec![
            axis.name().to_string(),
            value.to_string(),
            r.flops.to_string(),
            fmt_f64(r.auc),
            r.seed.to_string(),
        ]);
    }
    let any_diverged = results.iter().any(|r| r.diverged);
    Ok(ScalingReport { rows, results, any_diverged })
}

/// The four nested ablation variants, in nesting order: a plain transformer
/// baseline over the undivided sequence, multi-scale extraction alone,
/// extraction plus adaptive attention, and the full model.
pub fn ablation_variants(
    base: &ModelConfig,
    strategies: &[ExtractionStrategy],
) -> Vec<(String, ModelConfig, Vec<ExtractionStrategy>)> {
    let mut transformer = base.clone();
    transformer.blocks = 1;
    transformer.budget = base.total_budget();
    transformer.use_adaptive_temperature = false;
    transformer.use_relative_bias = false;
    transformer.use_bgf = false;
    let transformer_strategies =
        crate::sequence::default_strategy_set(1, transformer.budget);

    let mut mse_only = base.clone();
    mse_only.use_adaptive_temperature = false;
    mse_only.use_relative_bias = false;
    mse_only.use_bgf = false;

    let mut no_bgf = base.clone();
    no_bgf.use_adaptive_temperature = true;
    no_bgf.use_relative_bias = true;
    no_bgf.use_bgf = false;

    let mut full = base.clone();
    full.use_adaptive_temperature = true;
    full.use_relative_bias = true;
    full.use_bgf = true;

    vec![
        ("transformer".into(), transformer, transformer_strategies),
        ("climber_no_atl_no_bgf".into(), mse_only, strategies.to_vec()),
        ("climber_no_bgf".into(), no_bgf, strategies.to_vec()),
        ("climber".into(), full, strategies.to_vec()),
    ]
}

/// Train the four variants with shared data and seeds.
pub fn run_ablation(exp: &ExperimentConfig) -> Result<AblationReport> {
    let dataset = build_dataset(&exp.data)?;
    let variants = ablation_variants(&exp.model, &exp.strategies);
    let mut jobs = Vec::new();
    for (vi, _) in variants.iter().enumerate() {
        for &seed in &exp.seeds {
            jobs.push((vi, seed));
        }
    }
    let outcomes = parallel_map(&jobs, exp.hyper.threads, |&(vi, seed)| -> Result<(f64, bool, u64)> {
        let (_, config, strategies) = &variants[vi];
        let hyper = TrainHyper { seed, threads: 1, eval_every: exp.hyper.steps, ..exp.hyper.clone() };
        let outcome = train(&dataset, config, strategies, &hyper)?;
        let auc = if outcome.diverged {
            f64::NAN
        } else {
            outcome
                .curve
                .last()
                .and_then(|p| p.eval_auc)
                .ok_or_else(|| Error::Contract("training ended without a final evaluation".into()))?
        };
        Ok((auc, outcome.diverged, count_flops(config).total_flops()))
    });

    let mut rows = CsvTable::new(&["variant", "seed", "flops", "auc"]);
    let mut any_diverged = false;
    for ((vi, seed), outcome) in jobs.into_iter().zip(outcomes) {
        let (auc, diverged, flops) = outcome?;
        any_diverged |= diverged;
        rows.push(vec![
            variants[vi].0.clone(),
            seed.to_string(),
            flops.to_string(),
            fmt_f64(auc),
        ]);
    }
    Ok(AblationReport {
        rows,
        variants: variants.into_iter().map(|(n, _, _)| n).collect(),
        any_diverged,
    })
}
