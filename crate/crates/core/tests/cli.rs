//! End-to-end checks of the command-line surfaces: config files in, CSV and
//! checkpoints out.

use std::path::PathBuf;

use climber::experiments::CsvTable;

fn run(args: &[&str]) -> i32 {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    climber::cli::run(&argv)
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let p = std::env::temp_dir().join(format!("climber_cli_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&p).unwrap();
        TempDir(p)
    }

    fn path(&self, name: &str) -> String {
        self.0.join(name).to_string_lossy().to_string()
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

const TINY_CFG: &str = "width = 8\nheads = 2\nlayers_per_block = 1\nblocks = 2\nbudget = 4\n\
                        vocab_size = 150\ndata = synthetic:seed=3,users=20\nseeds = 2\n\
                        steps = 8\nlr = 0.002\nbatch_users = 2\neval_every = 4\nthreads = 1\n";

fn write_cfg(dir: &TempDir, text: &str) -> String {
    let p = dir.path("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_then_score_cached_and_uncached_agree() {
    let dir = TempDir::new("train_score");
    let cfg = write_cfg(&dir, TINY_CFG);
    let ckpt = dir.path("model.ckpt");
    let metrics = dir.path("metrics.csv");
    assert_eq!(
        run(&["train", "--config", &cfg, "--out-checkpoint", &ckpt, "--metrics-csv", &metrics]),
        0
    );
    let table = CsvTable::parse(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(table.columns, vec!["step", "loss", "eval_auc"]);
    assert_eq!(table.rows.len(), 8);
    // eval_auc appears at eval steps and stays parseable.
    let eval_col = table.column("eval_auc").unwrap();
    assert!(table.rows[3][eval_col].parse::<f64>().is_ok());
    assert!(table.rows[0][eval_col].is_empty());

    let plain_out = dir.path("plain.csv");
    let cached_out = dir.path("cached.csv");
    for (flagged, out) in [(false, &plain_out), (true, &cached_out)] {
        let mut args = vec![
            "score", "--config", &cfg, "--checkpoint", &ckpt, "--user", "1", "--items",
            "5,9,23", "--scenario", "0", "--out", out,
        ];
        if flagged {
            args.push("--cached");
        }
        assert_eq!(run(&args), 0);
    }
    let plain = CsvTable::parse(&std::fs::read_to_string(&plain_out).unwrap()).unwrap();
    let cached = CsvTable::parse(&std::fs::read_to_string(&cached_out).unwrap()).unwrap();
    assert_eq!(plain.columns, vec!["item", "logit"]);
    for (a, b) in plain.rows.iter().zip(&cached.rows) {
        assert_eq!(a[0], b[0]);
        let (x, y) = (a[1].parse::<f64>().unwrap(), b[1].parse::<f64>().unwrap());
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
}

#[test]
fn flops_csv_components_sum_to_total() {
    let dir = TempDir::new("flops");
    let cfg = write_cfg(&dir, TINY_CFG);
    let out = dir.path("flops.csv");
    assert_eq!(run(&["flops", "--config", &cfg, "--out", &out]), 0);
    let table = CsvTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let macs = table.column("macs").unwrap();
    let component = table.column("component").unwrap();
    let mut sum = 0u64;
    let mut total = 0u64;
    for row in &table.rows {
        let v: u64 = row[macs].parse().unwrap();
        match row[component].as_str() {
            "total" => total = v,
            "attention_scores_history" | "dominant_term" | "constant_overhead" => {}
            _ => sum += v,
        }
    }
    assert_eq!(sum, total);
}

#[test]
fn scaling_and_ablation_emit_expected_schemas() {
    let dir = TempDir::new("scaling");
    let cfg = write_cfg(
        &dir,
        &format!("{TINY_CFG}scaling_layers = 1,2\nscaling_sequence = 4,8\n"),
    );
    let out = dir.path("scaling.csv");
    assert_eq!(run(&["scaling", "--config", &cfg, "--axis", "layers", "--out", &out]), 0);
    let table = CsvTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(table.columns, vec!["axis", "value", "flops", "auc", "seed"]);
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r[0] == "layers"));

    let ab_out = dir.path("ablation.csv");
    assert_eq!(run(&["ablation", "--config", &cfg, "--out", &ab_out]), 0);
    let table = CsvTable::parse(&std::fs::read_to_string(&ab_out).unwrap()).unwrap();
    assert_eq!(table.columns, vec!["variant", "seed", "flops", "auc"]);
    let variants: Vec<&str> = table.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        variants,
        ["transformer", "climber_no_atl_no_bgf", "climber_no_bgf", "climber"]
    );
}

#[test]
fn bench_emits_the_specified_columns() {
    let dir = TempDir::new("bench");
    let cfg = write_cfg(&dir, TINY_CFG);
    let out = dir.path("bench.csv");
    assert_eq!(
        run(&["bench", "--config", &cfg, "--candidates", "1,4", "--reps", "2", "--out", &out]),
        0
    );
    let table = CsvTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(table.columns, vec!["m", "cached_ips", "naive_ips", "speedup"]);
    assert_eq!(table.rows.len(), 2);
    for row in &table.rows {
        assert!(row[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn tsv_ingestion_trains_end_to_end() {
    let dir = TempDir::new("tsv");
    // 40 users x 30 events gives every user a valid 60/20/20 split.
    let mut rows = String::new();
    let mut state = 11u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    };
    let actions = ["play_full", "like", "share", "comment", "click", "skip"];
    for user in 1..=40u64 {
        for e in 0..30u64 {
            rows.push_str(&format!(
                "{user}\t{}\t{}\t{}\t{}\n",
                3 + next() % 140,
                actions[next() % 6],
                1000 + e * 50,
                next() % 2,
            ));
        }
    }
    let tsv = dir.path("events.tsv");
    std::fs::write(&tsv, rows).unwrap();
    let cfg = write_cfg(
        &dir,
        &format!(
            "width = 8\nheads = 2\nlayers_per_block = 1\nblocks = 2\nbudget = 4\n\
             vocab_size = 150\ndata = {tsv}\nseeds = 1\nsteps = 6\nlr = 0.002\n\
             batch_users = 2\neval_every = 6\nthreads = 1\n"
        ),
    );
    let metrics = dir.path("metrics.csv");
    assert_eq!(run(&["train", "--config", &cfg, "--metrics-csv", &metrics]), 0);
    let table = CsvTable::parse(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 6);
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["wat"]), 2);
    assert_eq!(run(&["train"]), 2); // missing --config
    assert_eq!(run(&["scaling", "--config", "/nope.cfg", "--axis", "layers", "--out", "/tmp/x"]), 2);
    let dir = TempDir::new("usage");
    let cfg = write_cfg(&dir, TINY_CFG);
    assert_eq!(run(&["scaling", "--config", &cfg, "--axis", "sideways", "--out", "/tmp/x"]), 2);
}

#[test]
fn help_prints_and_exits_zero() {
    assert_eq!(run(&["help"]), 0);
}
