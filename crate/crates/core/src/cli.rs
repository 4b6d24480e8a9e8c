//! Batch command-line front end: data prep, training, evaluation, reporting.
//!
//! Exit codes are a stable contract: 0 success, 1 usage, 2 data/format error,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{checkpoint_load, checkpoint_save};
use crate::crbm::FChoice;
use crate::data::{build_sequence, load_idx_images, read_tseq, write_tseq, SequenceSpec};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, run_training, EpochRecord, Mode, RunConfig, RunState, UnitModel,
};
use crate::rng::SplitRng;
use crate::write_atomic;

#[derive(Parser)]
#[command(name = "tcrbm", version, about = "Temporal-related convolutional RBM trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate temporal sequences from IDX images into a TSEQ1 file.
    GenSeq(GenSeqArgs),
    /// Train a model on a TSEQ1 file; writes metrics and a checkpoint.
    Train(TrainArgs),
    /// Reconstruction-error breakdown of a checkpoint against a TSEQ1 file.
    Eval(EvalArgs),
    /// Fold metrics JSON-lines into a per-epoch mean-J CSV.
    Report(ReportArgs),
    /// Print checkpoint shapes, Q table, and config digest.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args)]
struct GenSeqArgs {
    /// IDX3 image file; defaults to $TCRBM_DATA_DIR/train-images-idx3-ubyte
    #[arg(long)]
    idx: Option<PathBuf>,
    /// Output TSEQ1 path
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Maps per sequence
    #[arg(long, default_value_t = 100)]
    len: usize,
    /// Per-step rotation bound in degrees (constrained mode)
    #[arg(long, default_value_t = 20.0)]
    max_rot: f64,
    /// Per-step centroid shift bound in pixels (constrained mode)
    #[arg(long, default_value_t = 2)]
    max_shift: i64,
    /// Bound consecutive transformations (rotation <= 20 deg, shift <= 2)
    #[arg(long)]
    constrained: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Input TSEQ1 file
    #[arg(long)]
    data: PathBuf,
    /// key = value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metrics JSON-lines output
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Checkpoint output
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume from an existing checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,

    /// bi | tri | fixed-N | adaptive
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    nw: Option<usize>,
    /// CD steps
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// J normalization: linear | quadratic | log2
    #[arg(long)]
    f: Option<String>,
    #[arg(long)]
    order_min: Option<usize>,
    #[arg(long)]
    order_max: Option<usize>,
    #[arg(long)]
    init_order_mean: Option<f64>,
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Relative singular-value cutoff for map recovery during training
    #[arg(long)]
    recovery_cutoff: Option<f64>,
    /// Optional blended Q backup rate (the literal recursion when absent)
    #[arg(long)]
    q_blend: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON output path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics input as model=path; repeatable
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// CSV output path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    path: PathBuf,
}

/// Entry point used by the binary and by tests; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; --help/--version are success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenSeq(args) => gen_seq(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
        Command::InspectCheckpoint(args) => inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn default_idx_path() -> Result<PathBuf> {
    let dir = std::env::var_os("TCRBM_DATA_DIR")
        .ok_or_else(|| Error::Config("no --idx given and TCRBM_DATA_DIR is unset".into()))?;
    Ok(PathBuf::from(dir).join("train-images-idx3-ubyte"))
}

fn gen_seq(args: GenSeqArgs) -> Result<()> {
    let idx_path = match args.idx {
        Some(p) => p,
        None => default_idx_path()?,
    };
    let bytes = std::fs::read(&idx_path)?;
    let set = load_idx_images(&bytes)?;
    if set.count() == 0 {
        return Err(Error::Domain("IDX file holds no images".into()));
    }
    let spec = SequenceSpec {
        length: args.len,
        max_rotation_deg: args.max_rot,
        max_shift_px: args.max_shift,
        constrained: args.constrained,
        seed: args.seed,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let root = SplitRng::new(args.seed);
    let mut sequences = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed_img = &set.images[i % set.count()];
        let mut rng = root.split(i as u64);
        sequences.push(build_sequence(seed_img, &spec, &mut rng)?);
    }
    write_atomic(&args.out, &write_tseq(&sequences)?)?;
    println!(
        "wrote {} sequences of length {} (side {}) to {}",
        args.count,
        args.len,
        set.side,
        args.out.display()
    );
    Ok(())
}

/// Parse a key = value config file into a RunConfig, starting from defaults.
pub fn parse_config_file(text: &str, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", lineno + 1));
        match key {
            "mode" => cfg.mode = Mode::parse(value)?,
            "k" => cfg.k = value.parse().map_err(|_| bad("k"))?,
            "n_w" => cfg.n_w = value.parse().map_err(|_| bad("n_w"))?,
            "m" => cfg.m = value.parse().map_err(|_| bad("m"))?,
            "eta" => cfg.eta = value.parse().map_err(|_| bad("eta"))?,
            "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "discount" => cfg.discount = value.parse().map_err(|_| bad("discount"))?,
            "tau" => cfg.tau = value.parse().map_err(|_| bad("tau"))?,
            "f_choice" => cfg.f_choice = FChoice::parse(value)?,
            "order_min" => cfg.order_min = value.parse().map_err(|_| bad("order_min"))?,
            "order_max" => cfg.order_max = value.parse().map_err(|_| bad("order_max"))?,
            "init_order_mean" => {
                cfg.init_order_mean = value.parse().map_err(|_| bad("init_order_mean"))?
            }
            "init_order_std" => {
                cfg.init_order_std = value.parse().map_err(|_| bad("init_order_std"))?
            }
            "init_sigma" => cfg.init_sigma = value.parse().map_err(|_| bad("init_sigma"))?,
            "recovery_cutoff" => {
                cfg.recovery_cutoff = value.parse().map_err(|_| bad("recovery_cutoff"))?
            }
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "q_blend" => {
                cfg.q_blend = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("q_blend"))?)
                }
            }
            other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
        }
    }
    Ok(cfg)
}

fn build_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg = parse_config_file(&text, cfg)?;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = Mode::parse(mode)?;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.nw {
        cfg.n_w = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.discount {
        cfg.discount = v;
    }
    if let Some(v) = &args.f {
        cfg.f_choice = FChoice::parse(v)?;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.order_min {
        cfg.order_min = v;
    }
    if let Some(v) = args.order_max {
        cfg.order_max = v;
    }
    if let Some(v) = args.init_order_mean {
        cfg.init_order_mean = v;
    }
    if let Some(v) = args.init_sigma {
        cfg.init_sigma = v;
    }
    if let Some(v) = args.recovery_cutoff {
        cfg.recovery_cutoff = v;
    }
    if let Some(v) = args.q_blend {
        cfg.q_blend = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn records_to_jsonl(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let sequences = read_tseq(&std::fs::read(&args.data)?)?;
    let resume = match &args.resume {
        Some(path) => Some(checkpoint_load(path)?),
        None => None,
    };
    let out = run_training(&cfg, &sequences, resume)?;
    if let Some(path) = &args.metrics {
        write_atomic(path, records_to_jsonl(&out.records).as_bytes())?;
    }
    if let Some(path) = &args.checkpoint {
        checkpoint_save(&out.checkpoint, path)?;
    }
    let last_epoch_j: Vec<f64> = out
        .records
        .iter()
        .filter(|r| r.epoch + 1 == cfg.epochs)
        .map(|r| r.j)
        .collect();
    let mean_j = if last_epoch_j.is_empty() {
        f64::NAN
    } else {
        last_epoch_j.iter().sum::<f64>() / last_epoch_j.len() as f64
    };
    println!(
        "trained mode={} epochs={} seqs={} config_digest={} final_mean_j={mean_j:.6}",
        cfg.mode.name(),
        cfg.epochs,
        sequences.len(),
        cfg.digest()
    );
    Ok(())
}

/// Rebuild per-sequence unit models from a checkpoint for evaluation.
/// Adaptive checkpoints are walked greedily from the stored order state.
fn units_for_eval(
    state: &RunState,
    cfg: &RunConfig,
    sequences: &[Vec<crate::mat::Mat>],
) -> Result<Vec<Vec<UnitModel>>> {
    match state {
        RunState::Fixed { models } => {
            if models.len() != sequences.len() {
                return Err(Error::Shape(format!(
                    "checkpoint has {} sequences, data has {}",
                    models.len(),
                    sequences.len()
                )));
            }
            Ok(models.clone())
        }
        RunState::Adaptive { models, qtable, state } => {
            let mut out = Vec::with_capacity(sequences.len());
            for (s, seq) in sequences.iter().enumerate() {
                let mut units = Vec::new();
                let mut order_state = *state;
                let mut start = 0;
                while start < seq.len() {
                    let remaining = seq.len() - start;
                    if remaining < 2 {
                        break;
                    }
                    let mut order = order_state.min(remaining).max(2);
                    if remaining - order == 1 {
                        order += 1;
                    }
                    let params = models.get(&(s, start, order)).cloned().ok_or_else(|| {
                        Error::Domain(format!(
                            "checkpoint holds no model for seq {s}, start {start}, order {order}"
                        ))
                    })?;
                    units.push(UnitModel { start, order, params });
                    let greedy = qtable.greedy_action(order_state)?;
                    order_state = qtable.clamp_state(order_state as i64 + greedy.delta());
                    start += order;
                }
                out.push(units);
            }
            let _ = cfg;
            Ok(out)
        }
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let ck = checkpoint_load(&args.checkpoint)?;
    let cfg = parse_config_file(&ck.config_text, RunConfig::default())?;
    let sequences = read_tseq(&std::fs::read(&args.data)?)?;
    let per_seq = units_for_eval(&ck.state, &cfg, &sequences)?;
    let mut report = Vec::new();
    let mut grand_total = 0.0;
    for (s, (units, seq)) in per_seq.iter().zip(&sequences).enumerate() {
        let (breakdown, total) = evaluate(units, seq, &cfg)?;
        grand_total += total;
        report.push(serde_json::json!({
            "seq": s,
            "units": breakdown,
            "total_j": total,
        }));
    }
    let doc = serde_json::json!({
        "config_digest": cfg.digest(),
        "sequences": report,
        "grand_total_j": grand_total,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_input_pair(raw: &str) -> Result<(String, PathBuf)> {
    let (name, path) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--input '{raw}' is not model=path")))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                offset: 0,
                msg: format!("bad metrics line: {e}"),
            })
        })
        .collect()
}

/// Fold metrics into CSV rows `epoch,model,mean_J`; a pure function of its
/// inputs.
pub fn report_csv(inputs: &[(String, Vec<EpochRecord>)]) -> String {
    let mut out = String::from("epoch,model,mean_J\n");
    for (model, records) in inputs {
        let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in records {
            let cell = by_epoch.entry(r.epoch).or_insert((0.0, 0));
            cell.0 += r.j;
            cell.1 += 1;
        }
        for (epoch, (sum, n)) in by_epoch {
            out.push_str(&format!("{epoch},{model},{}\n", sum / n as f64));
        }
    }
    out
}

fn report(args: ReportArgs) -> Result<()> {
    let mut inputs = Vec::new();
    for raw in &args.inputs {
        let (name, path) = parse_input_pair(raw)?;
        let records = parse_jsonl(&std::fs::read_to_string(&path)?)?;
        inputs.push((name, records));
    }
    let csv = report_csv(&inputs);
    match &args.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let ck = checkpoint_load(&args.path)?;
    let cfg = parse_config_file(&ck.config_text, RunConfig::default())?;
    println!("config_digest: {}", cfg.digest());
    println!("mode: {}", cfg.mode.name());
    println!("next_epoch: {}", ck.next_epoch);
    match &ck.state {
        RunState::Fixed { models } => {
            println!("kind: fixed ({} sequences)", models.len());
            for (s, units) in models.iter().enumerate() {
                for u in units {
                    println!(
                        "  seq {s} start {} order {} kernels {}x{}x{} unit {}x{}",
                        u.start,
                        u.order,
                        u.params.num_kernels(),
                        u.params.kernel_side(),
                        u.params.kernel_side(),
                        u.params.unit_side(),
                        u.params.unit_side()
                    );
                }
            }
        }
        RunState::Adaptive { models, qtable, state } => {
            println!("kind: adaptive (order state {state}, {} unit models)", models.len());
            for (&(s, start, order), p) in models {
                println!(
                    "  seq {s} start {start} order {order} kernels {}x{}x{}",
                    p.num_kernels(),
                    p.kernel_side(),
                    p.kernel_side()
                );
            }
            println!("q table (state, action, q, last_reward):");
            for (s, a, q, r) in qtable.entries() {
                println!("  {s} {:+} {q:.6} {r:.6}", a.delta());
            }
        }
    }
    Ok(())
}
