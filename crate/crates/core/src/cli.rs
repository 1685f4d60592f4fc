//! `memssl` subcommands. Every output file is written atomically, and all
//! inputs are validated before the first write.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::{Array, ParamSet};
use crate::bytes::{Reader, Writer};
use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, Mode, RunConfig, OUT_DIR_ENV};
use crate::data::{generate_synthetic_corpus, load_manifest, num_classes, Dataset, Split};
use crate::error::{CheckpointError, Error, Result};
use crate::eval::{
    ablation_csv, compare, evaluate, finetune, fraction_ablation, radar_normalize, read_reports, reports_csv,
    ReportRow, COMPARISON_HEADER,
};
use crate::io::{ensure_writable_dir, write_atomic};
use crate::train::{pretrain, TrainState};
use crate::vit::init_params;

pub const USAGE_EXIT: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "memssl",
    about = "Memory-augmented self-supervised pretraining, fine-tuning and evaluation",
    after_help = "Any configuration key can be overridden as `--section.key value`, e.g. `--memory.k 1024`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset the file and overrides apply to.
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Output directory (falls back to $MEMSSL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Accept a checkpoint written under a different encoder geometry hash.
    #[arg(long)]
    allow_config_mismatch: bool,
    /// Name recorded in the report's `model` column.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-modality corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pretraining over a manifest's train split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Fine-tune from a pretraining checkpoint (or a random encoder).
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Start from a randomly initialized encoder instead of a checkpoint.
        #[arg(long)]
        random_init: bool,
    },
    /// Evaluate a fine-tuned checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Paired comparison of per-run report CSVs (first file is the reference).
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Fine-tune on nested fractions of the train split.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        random_init: bool,
    },
}

/// Splits `--section.key value` pairs (dotted flags) from the rest.
fn split_overrides(argv: &[String]) -> std::result::Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--").filter(|k| k.contains('.')) {
            Some(key) => match key.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| format!("missing value for --{key}"))?;
                    overrides.push((key.to_string(), v.clone()));
                }
            },
            None => rest.push(a.clone()),
        }
    }
    Ok((rest, overrides))
}

fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('"', "'");
    format!("error kind={} code={} msg=\"{msg}\"", e.kind(), e.exit_code())
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    let (rest, overrides) = match split_overrides(argv) {
        Ok(v) => v,
        Err(msg) => {
            let e = Error::Usage(msg);
            eprintln!("{}", error_line(&e));
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&rest) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help / --version
                let _ = e.print();
                return 0;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let u = Error::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", error_line(&u));
            return USAGE_EXIT;
        }
    };
    match run(cli.command, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

fn usage(msg: &str) -> Error {
    Error::Usage(msg.to_string())
}

fn resolve(common: &Common, mode: Mode, overrides: &[(String, String)]) -> Result<(RunConfig, PathBuf)> {
    let mut all: Vec<(String, String)> = Vec::new();
    if let Some(s) = common.seed {
        all.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = common.threads {
        all.push(("threads".into(), t.to_string()));
    }
    all.extend_from_slice(overrides);
    let mut cfg = parse_config(common.config.as_deref(), common.preset.as_deref(), &all)?;
    cfg.mode = mode;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| usage(&format!("an output directory is required (--out or ${OUT_DIR_ENV})")))?;
    cfg.paths.out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn manifest_path(flag: &Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    let p = flag.clone().or_else(|| cfg.paths.manifest.clone()).ok_or_else(|| usage("--manifest is required"))?;
    cfg.paths.manifest = Some(p.clone());
    Ok(p)
}

fn checkpoint_path(flag: &Option<PathBuf>, cfg: &mut RunConfig) -> Result<Option<PathBuf>> {
    let p = flag.clone().or_else(|| cfg.paths.checkpoint.clone());
    cfg.paths.checkpoint = p.clone();
    Ok(p)
}

fn run(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::Synth { common } => {
            let (cfg, out) = resolve(&common, Mode::Synth, overrides)?;
            let corpus = generate_synthetic_corpus(&cfg.synth, cfg.seed)?;
            ensure_writable_dir(&out)?;
            corpus.write(&out)?;
            cfg.write_manifest(&out)?;
            Ok(())
        }
        Command::Pretrain { common, manifest, resume, allow_config_mismatch } => {
            let (mut cfg, out) = resolve(&common, Mode::Pretrain, overrides)?;
            let manifest = manifest_path(&manifest, &mut cfg)?;
            let data = Dataset::load(load_manifest(&manifest)?)?.split(Split::Train);
            let state = match &resume {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    ck.check_config(&cfg, allow_config_mismatch)?;
                    Some(ck.to_state(&cfg)?)
                }
                None => None,
            };
            pretrain(&cfg, &data, &out, state, |row| {
                if row.step % 50 == 0 {
                    eprintln!("step {} epoch {} loss {:.6}", row.step, row.epoch, row.loss);
                }
            })?;
            Ok(())
        }
        Command::Finetune { common, inputs, random_init } => {
            let (mut cfg, out) = resolve(&common, Mode::Finetune, overrides)?;
            let (data, n_classes) = labelled_data(&inputs, &mut cfg)?;
            let encoder = load_encoder(&inputs, &mut cfg, random_init)?;
            ensure_writable_dir(&out)?;
            let model = inputs.model.clone().unwrap_or_else(|| default_model(random_init));
            let outcome = finetune(&encoder, &data, n_classes, &cfg, &model)?;
            let mut ck = model_checkpoint(&outcome.params, &cfg, n_classes);
            ck.epoch = outcome.best_epoch;
            ck.save(&out.join("finetuned.mmfm"))?;
            write_atomic(&out.join("report.csv"), reports_csv(&[outcome.report]).as_bytes())?;
            let mut val = String::from("epoch,val_auroc\n");
            for (e, v) in outcome.val_auroc.iter().enumerate() {
                val.push_str(&format!("{e},{v}\n"));
            }
            write_atomic(&out.join("val_auroc.csv"), val.as_bytes())?;
            cfg.write_manifest(&out)?;
            Ok(())
        }
        Command::Evaluate { common, inputs } => {
            let (mut cfg, out) = resolve(&common, Mode::Evaluate, overrides)?;
            let ck_path = checkpoint_path(&inputs.checkpoint, &mut cfg)?.ok_or_else(|| usage("--checkpoint is required"))?;
            let (data, _) = labelled_data(&inputs, &mut cfg)?;
            let ck = Checkpoint::load(&ck_path)?;
            ck.check_config(&cfg, inputs.allow_config_mismatch)?;
            let (params, n_classes) = model_from_checkpoint(&ck)?;
            ensure_writable_dir(&out)?;
            let model = inputs.model.clone().unwrap_or_else(|| "model".into());
            let report = evaluate(&params, &data, n_classes, &cfg, &cfg.finetune.task, &model)?;
            write_atomic(&out.join("report.csv"), reports_csv(&[report]).as_bytes())?;
            cfg.write_manifest(&out)?;
            Ok(())
        }
        Command::Stats { common, reports } => {
            let (cfg, out) = resolve(&common, Mode::Stats, overrides)?;
            let tables = reports.iter().map(|p| read_reports(p)).collect::<Result<Vec<_>>>()?;
            let (comparison, radar) = stats_tables(&tables)?;
            ensure_writable_dir(&out)?;
            write_atomic(&out.join("comparison.csv"), comparison.as_bytes())?;
            write_atomic(&out.join("radar.csv"), radar.as_bytes())?;
            cfg.write_manifest(&out)?;
            Ok(())
        }
        Command::Ablate { common, inputs, random_init } => {
            let (mut cfg, out) = resolve(&common, Mode::Ablate, overrides)?;
            let (data, n_classes) = labelled_data(&inputs, &mut cfg)?;
            let encoder = load_encoder(&inputs, &mut cfg, random_init)?;
            ensure_writable_dir(&out)?;
            let model = inputs.model.clone().unwrap_or_else(|| default_model(random_init));
            let fractions = cfg.eval.fractions.clone();
            let rows = fraction_ablation(&encoder, &data, n_classes, &cfg, &fractions, &model)?;
            write_atomic(&out.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
            cfg.write_manifest(&out)?;
            Ok(())
        }
    }
}

fn default_model(random_init: bool) -> String {
    if random_init { "random-init" } else { "pretrained" }.to_string()
}

fn labelled_data(inputs: &Inputs, cfg: &mut RunConfig) -> Result<(Dataset, usize)> {
    let manifest = manifest_path(&inputs.manifest, cfg)?;
    let records = load_manifest(&manifest)?;
    let n = num_classes(&records).ok_or_else(|| Error::Data("manifest has no labelled records".into()))?;
    Ok((Dataset::load(records)?, n))
}

fn load_encoder(inputs: &Inputs, cfg: &mut RunConfig, random_init: bool) -> Result<ParamSet<f32>> {
    match (checkpoint_path(&inputs.checkpoint, cfg)?, random_init) {
        (Some(_), true) => Err(usage("--checkpoint and --random-init are mutually exclusive")),
        (None, false) => Err(usage("--checkpoint is required (or pass --random-init)")),
        (None, true) => Ok(TrainState::new(cfg)?.student),
        (Some(p), false) => {
            let ck = Checkpoint::load(&p)?;
            ck.check_config(cfg, inputs.allow_config_mismatch)?;
            let template = init_params(&cfg.encoder, 0)?;
            ck.params("student", &template)
        }
    }
}

/// Fine-tuned model: tensors under `model/`, class count in a blob.
pub fn model_checkpoint(params: &ParamSet<f32>, cfg: &RunConfig, n_classes: usize) -> Checkpoint {
    let tensors: BTreeMap<String, Array<f32>> = params.iter().map(|(n, t)| (format!("model/{n}"), t.clone())).collect();
    let mut w = Writer::default();
    w.u64(n_classes as u64);
    let blobs = BTreeMap::from([("classes".to_string(), w.buf)]);
    Checkpoint { config_hash: cfg.config_hash(), seed: cfg.seed, step: 0, epoch: 0, tensors, blobs }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(ParamSet<f32>, usize)> {
    let mut r = Reader::new(ck.blob("classes")?);
    let n = r.u64()? as usize;
    r.expect_end()?;
    let mut params = ParamSet::new();
    for (name, t) in &ck.tensors {
        if let Some(n) = name.strip_prefix("model/") {
            params.insert(n.to_string(), t.clone())?;
        }
    }
    if params.is_empty() {
        return Err(CheckpointError::Missing("model/*".into()).into());
    }
    Ok((params, n))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Comparison rows of every later table against the first, paired by
/// `(task, seed)`, plus radar-normalized mean AUROC per task across models.
pub fn stats_tables(tables: &[Vec<ReportRow>]) -> Result<(String, String)> {
    let by_task = |rows: &[ReportRow]| {
        let mut m: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
        for r in rows {
            m.entry(r.task.clone()).or_default().insert(r.seed, r.auroc);
        }
        m
    };
    let model_name = |rows: &[ReportRow], i: usize| rows.first().map_or(format!("model{i}"), |r| r.model.clone());
    let reference = by_task(&tables[0]);
    let name_a = model_name(&tables[0], 0);

    let mut comparison = format!("{COMPARISON_HEADER}\n");
    for (i, other) in tables.iter().enumerate().skip(1) {
        let other_tasks = by_task(other);
        let name_b = model_name(other, i);
        for (task, runs_a) in &reference {
            let Some(runs_b) = other_tasks.get(task) else { continue };
            let seeds: Vec<u64> = runs_a.keys().filter(|s| runs_b.contains_key(s)).copied().collect();
            let a: Vec<f64> = seeds.iter().map(|s| runs_a[s]).collect();
            let b: Vec<f64> = seeds.iter().map(|s| runs_b[s]).collect();
            let c = compare(&a, &b)?;
            comparison.push_str(&format!(
                "{task},{name_a},{name_b},{},{},{},{},{},{}\n",
                c.mean_diff, c.pct_diff, c.t, c.p, c.cohens_d, c.n_runs
            ));
        }
    }

    let mut radar = String::from("task,model,mean_auroc,radar\n");
    for task in reference.keys() {
        let mut names = Vec::new();
        let mut means = Vec::new();
        for (i, t) in tables.iter().enumerate() {
            let rows: Vec<f64> = t.iter().filter(|r| &r.task == task).map(|r| r.auroc).collect();
            if !rows.is_empty() {
                names.push(model_name(t, i));
                means.push(mean(&rows));
            }
        }
        match radar_normalize(&means) {
            Ok(scaled) => {
                for ((n, m), s) in names.iter().zip(&means).zip(scaled) {
                    radar.push_str(&format!("{task},{n},{m},{s}\n"));
                }
            }
            Err(_) => eprintln!("warning: task `{task}` has identical means across models; radar row skipped"),
        }
    }
    Ok((comparison, radar))
}

