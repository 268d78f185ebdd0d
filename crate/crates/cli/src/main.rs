use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use motrack::config::FlatConfig;
use motrack::data::jsonl::{read_tracklets, write_tracklets};
use motrack::data::store::{read_split, write_manifest, write_split};
use motrack::data::{derive_seed, split_by_ratio, synth_dataset, SynthConfig, Tracklet, UnlabeledSequence};
use motrack::eval::{distractor_stats, evaluate, zero_motion_baseline, OpeGrid, ReportRow};
use motrack::model::Model;
use motrack::selfcheck::gradient_suite;
use motrack::semi::{train_semim, SemiConfig};
use motrack::tracker::{model_tracker, track_many, write_debug_jsonl, CentroidRefiner, Refiner, TrackOptions};
use motrack::train::{train_supervised, RunPaths, TrainConfig};
use motrack::Error;

const SEED_ENV: &str = "MOTRACK_SEED";

/// Exit codes: 1 usage, 2 missing or unreadable input, 3 invariant violation.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            Error::Contract(_) => 3,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "motrack", version, about = "Motion-centric LiDAR single-object tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    Synth(SynthArgs),
    /// Supervised training.
    Train(TrainArgs),
    /// Semi-supervised training: pre-train, pseudo-label, mixed training.
    Semi(SemiArgs),
    /// Track every sequence of a split from its first box.
    Track(TrackArgs),
    /// Score predicted tracklets against ground truth.
    Eval(EvalArgs),
    /// Distractor statistics of a split.
    Stats(StatsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    train_seqs: usize,
    #[arg(long, default_value_t = 50)]
    val_seqs: usize,
    #[arg(long, default_value_t = 50)]
    test_seqs: usize,
    #[arg(long)]
    frames: Option<usize>,
    /// Moving distractors per scene.
    #[arg(long)]
    distractors: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Dataset root written by `synth` (or a compatible layout).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// m2track or vanilla.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    /// Largest frame interval in a training pair; use N - 1 for `--ensemble N`.
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run the finite-difference gradient suite instead of training.
    #[arg(long)]
    grad_check: bool,
}

#[derive(Args)]
struct SemiArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Fraction of training frames that keep their labels.
    #[arg(long, default_value_t = 0.2)]
    label_ratio: f64,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    paste_p: Option<f64>,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output tracklet JSONL.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    /// Post-hoc refinement: none or naive.
    #[arg(long, default_value = "none")]
    refine: String,
    /// Per-frame diagnostics JSONL.
    #[arg(long)]
    dump_debug: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth tracklet JSONL.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Adds a comparison row: zero-motion.
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
}

fn seed_from(flag: Option<u64>, cfg: Option<&FlatConfig>) -> CliResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(c) = cfg {
        if let Some(s) = c.get::<u64>("train.seed")? {
            return Ok(Some(s));
        }
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::usage(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn read_config(path: Option<&Path>) -> CliResult<FlatConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(FlatConfig::parse(&text)?)
        }
        None => Ok(FlatConfig::new()),
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Failure::usage(format!("--{flag} is required")))
}

/// Config file keys overridden by flags; the seed is mandatory.
fn train_config(f: &TrainFlags) -> CliResult<(FlatConfig, TrainConfig)> {
    let mut c = read_config(f.config.as_deref())?;
    let seed = seed_from(f.seed, Some(&c))?
        .ok_or_else(|| Failure::usage(format!("a seed is required (--seed, train.seed in --config, or {SEED_ENV})")))?;
    c.set("train.seed", seed);
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            c.set(k, v);
        }
    };
    set("train.model", f.model.clone());
    set("train.widths", f.widths.clone());
    set("train.points", f.points.map(|v| v.to_string()));
    set("train.epochs", f.epochs.map(|v| v.to_string()));
    set("train.batch", f.batch.map(|v| v.to_string()));
    set("train.lr", f.lr.map(|v| v.to_string()));
    set("train.decay_every", f.decay_every.map(|v| v.to_string()));
    set("train.pairs_per_epoch", f.pairs_per_epoch.map(|v| v.to_string()));
    set("train.max_gap", f.max_gap.map(|v| v.to_string()));
    set("train.threads", f.threads.map(|v| v.to_string()));
    let tc = TrainConfig::from_flat(&c)?;
    Ok((c, tc))
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let mut c = read_config(a.config.as_deref())?;
    if let Some(f) = a.frames {
        c.set("frames", f);
    }
    if let Some(k) = a.distractors {
        c.set("distractors", k);
    }
    let cfg = SynthConfig::from_flat(&c)?;
    let seed = seed_from(a.seed, None)?.unwrap_or(0);
    let mut manifest = cfg.to_flat();
    manifest.set("seed", seed);
    for (i, (split, n)) in [("train", a.train_seqs), ("val", a.val_seqs), ("test", a.test_seqs)].into_iter().enumerate() {
        let seqs = synth_dataset(&cfg, n, derive_seed(seed, 0x7370_6c74, i as u64), split)?;
        write_split(&a.out, split, &seqs)?;
        manifest.set(format!("split.{split}"), n);
        let h = distractor_stats(&seqs);
        info!("{split}: {n} sequences, distractor bins {:?}", h.bins);
    }
    write_manifest(&a.out, &manifest)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    if a.grad_check {
        let seed = seed_from(a.flags.seed, None)?.unwrap_or(0);
        let cases = gradient_suite(seed)?;
        let mut worst = 0.0f64;
        for c in &cases {
            println!(
                "{:<28} max_rel_err {:.3e} (tol {:.0e}) checked {} skipped {} {}",
                c.name,
                c.max_rel_err,
                c.tolerance,
                c.checked,
                c.skipped,
                if c.passed() { "ok" } else { "FAIL" }
            );
            worst = worst.max(c.max_rel_err);
        }
        println!("max relative error {worst:.3e}");
        if cases.iter().all(|c| c.passed()) {
            return Ok(());
        }
        return Err(Failure { code: 3, msg: "gradient check failed".into() });
    }
    let (_, cfg) = train_config(&a.flags)?;
    let data = require(&a.flags.data, "data")?;
    let out = require(&a.flags.out, "out")?;
    let train = read_split(data, "train")?;
    let val = read_split(data, "val").unwrap_or_default();
    let run = train_supervised(&train, &val, &cfg, &RunPaths { out_dir: Some(out.clone()), resume: a.resume })?;
    if let Some(m) = run.history.last() {
        println!("epoch {} loss {:.5}", m.epoch, m.loss.total);
    }
    Ok(())
}

fn cmd_semi(a: SemiArgs) -> CliResult {
    let (mut c, _) = train_config(&a.flags)?;
    for (k, v) in [("semi.lambda", a.lambda), ("semi.alpha", a.alpha), ("semi.gamma", a.gamma), ("semi.paste_p", a.paste_p)] {
        if let Some(v) = v {
            c.set(k, v);
        }
    }
    let cfg = SemiConfig::from_flat(&c)?;
    let data = require(&a.flags.data, "data")?;
    let out = require(&a.flags.out, "out")?;
    let train = read_split(data, "train")?;
    let val = read_split(data, "val").unwrap_or_default();
    let ds = split_by_ratio(&train, a.label_ratio)?;
    let unlabeled: Vec<UnlabeledSequence> = ds.unlabeled;
    let run = train_semim(&ds.labeled, &unlabeled, &val, &cfg, Some(out))?;
    if let Some(m) = run.history.last() {
        println!("epoch {} loss {:.5} cycle {:.5}", m.epoch, m.loss.total, m.loss.cycle);
    }
    Ok(())
}

fn cmd_track(a: TrackArgs) -> CliResult {
    if !a.checkpoint.exists() {
        return Err(Failure { code: 2, msg: format!("checkpoint {} not found", a.checkpoint.display()) });
    }
    let model = Model::load(&a.checkpoint)?;
    let seqs = read_split(&a.data, &a.split)?;
    let naive = CentroidRefiner::default();
    let refiner: Option<&dyn Refiner> = match a.refine.as_str() {
        "none" => None,
        "naive" => Some(&naive),
        other => return Err(Failure::usage(format!("unknown --refine {other:?} (none, naive)"))),
    };
    if a.ensemble == 0 {
        return Err(Failure::usage("--ensemble must be at least 1"));
    }
    let seed = seed_from(a.seed, None)?.unwrap_or(0);
    let opts = TrackOptions { ensemble: a.ensemble, refiner, seed, ..Default::default() };
    let tracker = model_tracker(&model, seed);
    let runs = track_many(tracker.as_ref(), &seqs, &opts, a.threads, |s| (&s.frames[..], *s.target.box_at(0)));
    let preds: Vec<Tracklet> = runs
        .iter()
        .zip(&seqs)
        .map(|(r, s)| r.tracklet(&s.target.seq, &s.target.instance_id, &s.target.category))
        .collect::<Result<_, _>>()?;
    std::fs::write(&a.out, write_tracklets(&preds)?).map_err(|e| Error::io(&a.out, e))?;
    if let Some(p) = &a.dump_debug {
        let named: Vec<(&str, &_)> = seqs.iter().map(|s| s.name.as_str()).zip(runs.iter()).collect();
        write_debug_jsonl(p, &named)?;
    }
    println!("tracked {} sequences", preds.len());
    Ok(())
}

fn read_tracklet_file(p: &Path) -> CliResult<Vec<Tracklet>> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    Ok(read_tracklets(&text)?)
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let preds = read_tracklet_file(&a.pred)?;
    let gts = read_tracklet_file(&a.gt)?;
    let grid = OpeGrid::default();
    let (mut report, _) = evaluate(&preds, &gts, &grid)?;
    match a.baseline.as_deref() {
        None => {}
        Some("zero-motion") => {
            let zm: Vec<Tracklet> = gts.iter().map(zero_motion_baseline).collect();
            let (_, z) = evaluate(&zm, &gts, &grid)?;
            report.rows.push(ReportRow { name: "baseline:zero-motion".into(), frames: z.frames, success: z.success, precision: z.precision });
        }
        Some(other) => return Err(Failure::usage(format!("unknown --baseline {other:?} (zero-motion)"))),
    }
    print!("{}", report.to_csv());
    if let (Some(c), Some(j)) = (&a.out_csv, &a.out_json) {
        report.write(c, j)?;
    } else if let Some(c) = &a.out_csv {
        std::fs::write(c, report.to_csv()).map_err(|e| Error::io(c, e))?;
    } else if let Some(j) = &a.out_json {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        std::fs::write(j, text).map_err(|e| Error::io(j, e))?;
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> CliResult {
    let seqs = read_split(&a.data, &a.split)?;
    let h = distractor_stats(&seqs);
    println!("distractors,frames");
    for (i, n) in h.bins.iter().enumerate() {
        let label = if i + 1 == h.bins.len() { format!("{i}+") } else { i.to_string() };
        println!("{label},{n}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let r = match cli.cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Semi(a) => cmd_semi(a),
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
