//! Command-line entry point: train | score | bench | flops | grid |
//! scaling | ablation, all driven by a keyed text config file.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{
    build_dataset, count_flops, fmt_f64, load_config, parse_data_spec, run_ablation, run_grid,
    run_scaling, CsvTable, ExperimentConfig, FlopsReport, ScalingAxis,
};
use crate::serving::{bench_throughput, build_cache, score_with_cache, ScoringRequest};
use crate::training::{save_state, train, TrainHyper};

const USAGE: &str = "\
usage: climber <command> --config PATH [options]

commands:
  train     --config PATH [--data SPEC] [--steps N] [--out-checkpoint PATH] [--metrics-csv PATH]
  score     --config PATH --checkpoint PATH --user ID --items I1,I2,... --scenario R [--data SPEC] [--cached] [--out PATH]
  bench     --config PATH [--candidates LIST] [--reps N] --out PATH
  flops     --config PATH [--out PATH]
  grid      --config PATH --out PATH [--families PATH]
  scaling   --config PATH --axis layers|sequence --out PATH
  ablation  --config PATH --out PATH

SPEC is a TSV path or synthetic:seed=S,users=U,...  Exit code 0 only if no
cell diverged; 1 on divergence; 2 on usage or runtime errors.";

struct Args {
    command: String,
    flags: Vec<(String, String)>,
    cached: bool,
}

impl Args {
    fn parse(argv: &[String]) -> Result<Args> {
        let command = argv
            .first()
            .ok_or_else(|| Error::Config("missing command".into()))?
            .clone();
        let mut flags = Vec::new();
        let mut cached = false;
        let mut i = 1;
        while i < argv.len() {
            let name = argv[i]
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --flag, got '{}'", argv[i])))?;
            if name == "cached" {
                cached = true;
                i += 1;
                continue;
            }
            let value = argv
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?;
            flags.push((name.to_string(), value.clone()));
            i += 2;
        }
        Ok(Args { command, flags, cached })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.flags.iter().rev().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }
}

fn load_experiment(args: &Args) -> Result<ExperimentConfig> {
    let mut exp = load_config(Path::new(args.require("config")?))?;
    if let Some(data) = args.get("data") {
        exp.data = parse_data_spec(data, &exp.model)?;
    }
    if let Some(steps) = args.get("steps") {
        exp.hyper.steps = steps
            .parse()
            .map_err(|_| Error::Config(format!("--steps: bad integer '{steps}'")))?;
    }
    Ok(exp)
}

fn write_or_print(table: &CsvTable, out: Option<&str>) -> Result<()> {
    match out {
        Some(path) => table.write(Path::new(path)),
        None => {
            print!("{}", table.render());
            Ok(())
        }
    }
}

fn cmd_train(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let dataset = build_dataset(&exp.data)?;
    let hyper = TrainHyper { seed: exp.seeds.first().copied().unwrap_or(1), ..exp.hyper.clone() };
    let outcome = train(&dataset, &exp.model, &exp.strategies, &hyper)?;

    if let Some(path) = args.get("metrics-csv") {
        let mut table = CsvTable::new(&["step", "loss", "eval_auc"]);
        for p in &outcome.curve {
            table.push(vec![
                p.step.to_string(),
                fmt_f64(p.loss),
                p.eval_auc.map(fmt_f64).unwrap_or_default(),
            ]);
        }
        table.write(Path::new(path))?;
    }
    if let Some(path) = args.get("out-checkpoint") {
        save_state(Path::new(path), &outcome.state, &exp.model)?;
    }
    let last = outcome.curve.last();
    eprintln!(
        "trained {} steps, final loss {}, eval auc {}{}",
        outcome.state.step,
        last.map(|p| fmt_f64(p.loss)).unwrap_or_else(|| "-".into()),
        last.and_then(|p| p.eval_auc).map(fmt_f64).unwrap_or_else(|| "-".into()),
        if outcome.diverged { " (DIVERGED)" } else { "" },
    );
    Ok(if outcome.diverged { 1 } else { 0 })
}

fn cmd_score(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let state = crate::training::load_state(Path::new(args.require("checkpoint")?), &exp.model)?;
    let user_id: u64 = args
        .require("user")?
        .parse()
        .map_err(|_| Error::Config("--user: bad id".into()))?;
    let scenario: u16 = args
        .require("scenario")?
        .parse()
        .map_err(|_| Error::Config("--scenario: bad id".into()))?;
    let items: Vec<u32> = args
        .require("items")?
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("--items: bad id '{p}'"))))
        .collect::<Result<_>>()?;
    let dataset = build_dataset(&exp.data)?;
    let user = dataset.user(user_id)?;

    let logits = if args.cached {
        let cache = build_cache(user, scenario, &state.params, &exp.model, &exp.strategies)?;
        let request = ScoringRequest { user_id, candidates: items.clone(), scenario };
        score_with_cache(&cache, &request, &state.params, &exp.model, &exp.strategies)?
    } else {
        crate::model::score(user, &items, scenario, &state.params, &exp.model, &exp.strategies)?
    };
    let mut table = CsvTable::new(&["item", "logit"]);
    for (item, logit) in items.iter().zip(&logits) {
        table.push(vec![item.to_string(), fmt_f64(*logit)]);
    }
    write_or_print(&table, args.get("out"))?;
    Ok(0)
}

fn cmd_bench(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let m_values: Vec<usize> = match args.get("candidates") {
        Some(list) => list
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("--candidates: bad '{p}'"))))
            .collect::<Result<_>>()?,
        None => exp.bench_candidates.clone(),
    };
    let reps: usize = match args.get("reps") {
        Some(r) => r.parse().map_err(|_| Error::Config("--reps: bad integer".into()))?,
        None => exp.bench_reps,
    };
    let dataset = build_dataset(&exp.data)?;
    // Bench against the user with the longest history so every block fills.
    let user = dataset
        .users()
        .iter()
        .max_by_key(|u| u.len())
        .ok_or_else(|| Error::Config("dataset has no users".into()))?;
    let params = crate::model::Parameters::init(&exp.model, exp.seeds.first().copied().unwrap_or(1))?;
    let rows = bench_throughput(user, 0, &params, &exp.model, &exp.strategies, &m_values, reps, 42)?;
    let mut table = CsvTable::new(&["m", "cached_ips", "naive_ips", "speedup"]);
    for r in &rows {
        table.push(vec![
            r.m.to_string(),
            fmt_f64(r.cached_items_per_sec),
            fmt_f64(r.naive_items_per_sec),
            fmt_f64(r.speedup),
        ]);
    }
    write_or_print(&table, args.get("out"))?;
    Ok(0)
}

fn cmd_flops(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let report = count_flops(&exp.model);
    let mut table = CsvTable::new(&["component", "macs", "flops"]);
    let rows: [(&str, u64); 8] = [
        ("embedding", report.embedding),
        ("qkv_projections", report.qkv_projections),
        ("attention_scores", report.attention_scores),
        ("attention_values", report.attention_values),
        ("ffn", report.ffn),
        ("fusion", report.fusion),
        ("gate", report.gate),
        ("head", report.head),
    ];
    for (name, macs) in rows {
        table.push(vec![name.to_string(), macs.to_string(), (2 * macs).to_string()]);
    }
    table.push(vec![
        "attention_scores_history".into(),
        report.attention_scores_history.to_string(),
        (2 * report.attention_scores_history).to_string(),
    ]);
    table.push(vec![
        "total".into(),
        report.total_macs().to_string(),
        report.total_flops().to_string(),
    ]);
    table.push(vec![
        "dominant_term".into(),
        FlopsReport::dominant_term_macs(&exp.model).to_string(),
        (2 * FlopsReport::dominant_term_macs(&exp.model)).to_string(),
    ]);
    table.push(vec![
        "constant_overhead".into(),
        report.constant_overhead_macs(&exp.model).to_string(),
        (2 * report.constant_overhead_macs(&exp.model)).to_string(),
    ]);
    write_or_print(&table, args.get("out"))?;
    Ok(0)
}

fn cmd_grid(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let report = run_grid(&exp)?;
    let out = args.require("out")?;
    report.rows.write(Path::new(out))?;
    let families_path = match args.get("families") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("{out}.families.csv")),
    };
    report.families.write(&families_path)?;
    for row in &report.families.rows {
        eprintln!(
            "family s*l={}: cells {} median auc in [{}, {}], spread {}",
            row[0], row[1], row[2], row[3], row[4]
        );
    }
    Ok(if report.any_diverged { 1 } else { 0 })
}

fn cmd_scaling(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let axis = ScalingAxis::parse(args.require("axis")?)
        .ok_or_else(|| Error::Config("--axis must be 'layers' or 'sequence'".into()))?;
    let report = run_scaling(&exp, axis)?;
    report.rows.write(Path::new(args.require("out")?))?;
    Ok(if report.any_diverged { 1 } else { 0 })
}

fn cmd_ablation(args: &Args) -> Result<i32> {
    let exp = load_experiment(args)?;
    let report = run_ablation(&exp)?;
    report.rows.write(Path::new(args.require("out")?))?;
    Ok(if report.any_diverged { 1 } else { 0 })
}

/// Run the CLI. Returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match Args::parse(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}\n\n{USAGE}");
            return 2;
        }
    };
    let result = match parsed.command.as_str() {
        "train" => cmd_train(&parsed),
        "score" => cmd_score(&parsed),
        "bench" => cmd_bench(&parsed),
        "flops" => cmd_flops(&parsed),
        "grid" => cmd_grid(&parsed),
        "scaling" => cmd_scaling(&parsed),
        "ablation" => cmd_ablation(&parsed),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("error: unknown command '{other}'\n\n{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
