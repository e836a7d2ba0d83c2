//! Command-line front end: dataset generation/import, pretraining, probing,
//! fine-tuning, analysis exports, and the gradient self-check.
//!
//! Configuration is a flat `key=value` file plus command-line overrides;
//! precedence is CLI > file > defaults. The fully resolved configuration is
//! echoed into every run's output directory so runs can be reproduced
//! bit-exactly.

use crate::analysis::{average_attention, export_attention, export_posemb, posemb_similarity};
use crate::data::{
    load_dataset, parse_ntu_skeleton, save_dataset, synth_generate, DataError, RawSequence,
    SynthSpec,
};
use crate::model::{load_checkpoint, ModelConfig, ModelError};
use crate::mpdp::{log_spaced_edges, MpdpConfig};
use crate::tensor::TensorError;
use crate::train::{
    finetune_semi, full_gradcheck, linear_probe, pretrain, stratified_subset, InputMode,
    RunConfig, TrainError,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "glmotion",
    version,
    about = "Global/local motion transformer pretraining for skeleton sequences"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset in canonical format.
    Synth(SynthArgs),
    /// Convert a directory of .skeleton files to canonical format.
    ImportNtu(ImportArgs),
    /// Unsupervised pretraining; writes metrics and checkpoints.
    Pretrain(TrainArgs),
    /// Linear probe on frozen pooled features from a checkpoint.
    Probe(EvalArgs),
    /// End-to-end fine-tuning from a checkpoint on a label fraction.
    Finetune(EvalArgs),
    /// Export averaged attention maps and positional-embedding similarity.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient check of the full model on a toy config.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 9)]
    joints: usize,
    #[arg(long, default_value_t = 1)]
    persons: usize,
    #[arg(long, default_value_t = 20)]
    frames_min: usize,
    #[arg(long, default_value_t = 40)]
    frames_max: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory containing .skeleton files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    center_joint: usize,
    #[arg(long, default_value_t = 2)]
    max_persons: usize,
}

/// Shared config plumbing: a flat key=value file plus generic overrides.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file, one pair per line, '#' comments.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set lr=1e-3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated frame offsets, e.g. 1,5,10.
    #[arg(long)]
    intervals: Option<String>,
    /// trainable_tight | trainable_once | fixed_sinusoidal
    #[arg(long)]
    positional_mode: Option<String>,
    /// Person-to-person spatial attention on/off.
    #[arg(long)]
    p2p: Option<bool>,
    #[arg(long)]
    lambda_sigma: Option<f64>,
    /// Proportion of joints zeroed per frame during augmentation.
    #[arg(long)]
    corrupt: Option<f64>,
    /// natural | sampled:<N>
    #[arg(long)]
    input_mode: Option<String>,
    #[arg(long)]
    label_fraction: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Global/local separation on/off (off = entangled ablation).
    #[arg(long)]
    disentangle: Option<bool>,
}

#[derive(Args)]
struct TrainArgs {
    /// Canonical dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Run output directory (metrics, checkpoints, resolved config).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Training split (canonical dataset directory).
    #[arg(long)]
    data: PathBuf,
    /// Held-out split; without it the training split is divided internally.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Fraction held out for the internal split when --test-data is absent.
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sequences averaged over, taken in manifest order.
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Temporal window (frames) for the exported maps.
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

enum CliError {
    Usage(String),
    Train(TrainError),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Train(TrainError::Data(e))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Train(TrainError::Model(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Train(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Train(TrainError::Data(_)) => 2,
        CliError::Train(TrainError::Io(_)) => 2,
        CliError::Train(TrainError::Tensor(TensorError::Numeric(_))) => 3,
        CliError::Train(TrainError::Tensor(_)) => 3,
        CliError::Train(TrainError::Model(_)) => 1,
    }
}

/// Merged model + objective + run configuration with a flat key namespace.
struct Resolved {
    model: ModelConfig,
    mpdp: MpdpConfig,
    run: RunConfig,
    /// Keys the user set explicitly (data-derived defaults skip these).
    explicit: HashSet<String>,
}

impl Resolved {
    fn new() -> Self {
        Resolved {
            model: ModelConfig::default(),
            mpdp: MpdpConfig::default(),
            run: RunConfig::default(),
            explicit: HashSet::new(),
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
            value
                .parse()
                .map_err(|_| CliError::Usage(format!("bad value for {key}: {value}")))
        }
        match key {
            "joints" => self.model.joints = parse(key, value)?,
            "persons" => self.model.persons = parse(key, value)?,
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "blocks" => self.model.blocks = parse(key, value)?,
            "spatial_heads" => self.model.spatial_heads = parse(key, value)?,
            "temporal_heads" => self.model.temporal_heads = parse(key, value)?,
            "t_max" => self.model.t_max = parse(key, value)?,
            "ln_eps" => self.model.ln_eps = parse(key, value)?,
            "positional_mode" => {
                self.model.positional_mode =
                    value.parse().map_err(CliError::Usage)?
            }
            "p2p" => self.model.p2p_attention = parse(key, value)?,
            "intervals" => self.mpdp.intervals = parse_interval_list(value)?,
            "c_sigma" => {
                let c: usize = parse(key, value)?;
                if c < 3 {
                    return Err(CliError::Usage("c_sigma must be at least 3".into()));
                }
                self.mpdp.c_sigma = c;
            }
            "eps_dir" => self.mpdp.eps_dir = parse(key, value)?,
            "lambda_delta" => self.mpdp.lambda_delta = parse(key, value)?,
            "lambda_sigma" => self.mpdp.lambda_sigma = parse(key, value)?,
            "epochs" => self.run.epochs = parse(key, value)?,
            "batch_size" => self.run.batch_size = parse(key, value)?,
            "seed" => self.run.seed = parse(key, value)?,
            "lr" => self.run.lr = parse(key, value)?,
            "lr_decay" => self.run.lr_decay = parse(key, value)?,
            "probe_lr" => self.run.probe_lr = parse(key, value)?,
            "clip_norm" => {
                self.run.clip_norm = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "augment" => self.run.augment = parse(key, value)?,
            "shear_amplitude" => self.run.shear_amplitude = parse(key, value)?,
            "resample_frac" => self.run.resample_frac = parse(key, value)?,
            "corrupt" => self.run.corrupt = parse(key, value)?,
            "input_mode" => {
                self.run.input_mode = value.parse().map_err(CliError::Usage)?
            }
            "disentangle" => self.run.disentangle = parse(key, value)?,
            "label_fraction" => self.run.label_fraction = parse(key, value)?,
            "checkpoint_every" => self.run.checkpoint_every = parse(key, value)?,
            "max_steps" => {
                self.run.max_steps = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            other => {
                return Err(CliError::Usage(format!("unknown config key: {other}")))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Fills joints/persons/t_max from the dataset unless set explicitly,
    /// regenerates magnitude edges, and validates everything.
    fn finalize(&mut self, data: Option<&[RawSequence]>) -> Result<(), CliError> {
        if let Some(data) = data {
            if !self.explicit.contains("joints") {
                self.model.joints = data.iter().map(|s| s.joints).max().unwrap_or(0);
            }
            if !self.explicit.contains("persons") {
                self.model.persons = data.iter().map(|s| s.persons).max().unwrap_or(0);
            }
            if !self.explicit.contains("t_max") {
                let longest = data.iter().map(|s| s.frames).max().unwrap_or(0);
                let sampled = match self.run.input_mode {
                    InputMode::Sampled(n) => n,
                    InputMode::Natural => 0,
                };
                self.model.t_max = longest.max(sampled).max(1);
            }
        }
        // magnitude bins follow eps_dir and c_sigma; edges are not a key
        self.mpdp.magnitude_edges = log_spaced_edges(self.mpdp.eps_dir, 1.0, self.mpdp.c_sigma - 1);
        self.model.validate()?;
        self.mpdp.validate()?;
        self.run.validate()?;
        Ok(())
    }

    /// Flat key=value echo of the fully resolved configuration.
    fn echo(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let q = &self.mpdp;
        let r = &self.run;
        let _ = writeln!(s, "joints={}", m.joints);
        let _ = writeln!(s, "persons={}", m.persons);
        let _ = writeln!(s, "embed_dim={}", m.embed_dim);
        let _ = writeln!(s, "blocks={}", m.blocks);
        let _ = writeln!(s, "spatial_heads={}", m.spatial_heads);
        let _ = writeln!(s, "temporal_heads={}", m.temporal_heads);
        let _ = writeln!(s, "t_max={}", m.t_max);
        let _ = writeln!(s, "ln_eps={}", m.ln_eps);
        let mode = match m.positional_mode {
            crate::model::PositionalMode::TrainableTight => "trainable_tight",
            crate::model::PositionalMode::TrainableOnce => "trainable_once",
            crate::model::PositionalMode::FixedSinusoidal => "fixed_sinusoidal",
        };
        let _ = writeln!(s, "positional_mode={mode}");
        let _ = writeln!(s, "p2p={}", m.p2p_attention);
        let ints: Vec<String> = q.intervals.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "intervals={}", ints.join(","));
        let _ = writeln!(s, "c_sigma={}", q.c_sigma);
        let _ = writeln!(s, "eps_dir={}", q.eps_dir);
        let _ = writeln!(s, "lambda_delta={}", q.lambda_delta);
        let _ = writeln!(s, "lambda_sigma={}", q.lambda_sigma);
        let _ = writeln!(s, "epochs={}", r.epochs);
        let _ = writeln!(s, "batch_size={}", r.batch_size);
        let _ = writeln!(s, "seed={}", r.seed);
        let _ = writeln!(s, "lr={}", r.lr);
        let _ = writeln!(s, "lr_decay={}", r.lr_decay);
        let _ = writeln!(s, "probe_lr={}", r.probe_lr);
        match r.clip_norm {
            Some(v) => {
                let _ = writeln!(s, "clip_norm={v}");
            }
            None => {
                let _ = writeln!(s, "clip_norm=none");
            }
        }
        let _ = writeln!(s, "augment={}", r.augment);
        let _ = writeln!(s, "shear_amplitude={}", r.shear_amplitude);
        let _ = writeln!(s, "resample_frac={}", r.resample_frac);
        let _ = writeln!(s, "corrupt={}", r.corrupt);
        let im = match r.input_mode {
            InputMode::Natural => "natural".to_string(),
            InputMode::Sampled(n) => format!("sampled:{n}"),
        };
        let _ = writeln!(s, "input_mode={im}");
        let _ = writeln!(s, "disentangle={}", r.disentangle);
        let _ = writeln!(s, "label_fraction={}", r.label_fraction);
        let _ = writeln!(s, "checkpoint_every={}", r.checkpoint_every);
        match r.max_steps {
            Some(v) => {
                let _ = writeln!(s, "max_steps={v}");
            }
            None => {
                let _ = writeln!(s, "max_steps=none");
            }
        }
        s
    }
}

fn parse_interval_list(value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad interval list: {value}")))
        })
        .collect()
}

/// File pairs, then named flags, then generic --set pairs, in that order, so
/// later sources win.
fn resolve(cfg: &ConfigArgs) -> Result<Resolved, CliError> {
    let mut r = Resolved::new();
    if let Some(path) = &cfg.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key=value", ln + 1))
            })?;
            r.apply(key.trim(), value.trim())?;
        }
    }
    if let Some(v) = cfg.seed {
        r.apply("seed", &v.to_string())?;
    }
    if let Some(v) = cfg.epochs {
        r.apply("epochs", &v.to_string())?;
    }
    if let Some(v) = cfg.batch_size {
        r.apply("batch_size", &v.to_string())?;
    }
    if let Some(v) = &cfg.intervals {
        r.apply("intervals", v)?;
    }
    if let Some(v) = &cfg.positional_mode {
        r.apply("positional_mode", v)?;
    }
    if let Some(v) = cfg.p2p {
        r.apply("p2p", &v.to_string())?;
    }
    if let Some(v) = cfg.lambda_sigma {
        r.apply("lambda_sigma", &v.to_string())?;
    }
    if let Some(v) = cfg.corrupt {
        r.apply("corrupt", &v.to_string())?;
    }
    if let Some(v) = &cfg.input_mode {
        r.apply("input_mode", v)?;
    }
    if let Some(v) = cfg.label_fraction {
        r.apply("label_fraction", &v.to_string())?;
    }
    if let Some(v) = cfg.lr {
        r.apply("lr", &v.to_string())?;
    }
    if let Some(v) = cfg.disentangle {
        r.apply("disentangle", &v.to_string())?;
    }
    for pair in &cfg.sets {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set expects KEY=VALUE, got: {pair}"))
        })?;
        r.apply(key.trim(), value.trim())?;
    }
    Ok(r)
}

fn write_run_config(dir: &Path, resolved: &Resolved) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Train(TrainError::Io(e)))?;
    std::fs::write(dir.join("config.txt"), resolved.echo())
        .map_err(|e| CliError::Train(TrainError::Io(e)))?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        n_classes: args.classes,
        n_per_class: args.per_class,
        joints: args.joints,
        persons: args.persons,
        t_range: (args.frames_min, args.frames_max),
        noise_sigma: args.noise,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = synth_generate(&mut rng, &spec)?;
    save_dataset(&args.out, &data)?;
    println!(
        "wrote {} sequences ({} classes) to {}",
        data.len(),
        args.classes,
        args.out.display()
    );
    Ok(())
}

fn cmd_import_ntu(args: &ImportArgs) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.data)
        .map_err(|e| {
            CliError::Train(TrainError::Data(DataError::Data(format!(
                "cannot read {}: {e}",
                args.data.display()
            ))))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "skeleton"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::Data(format!(
            "no .skeleton files in {}",
            args.data.display()
        ))
        .into());
    }
    let mut seqs = Vec::with_capacity(files.len());
    for path in &files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DataError::Data(format!("bad file name: {}", path.display())))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Data(format!("cannot read {}: {e}", path.display())))?;
        seqs.push(parse_ntu_skeleton(&text, id, args.center_joint, args.max_persons)?);
    }
    save_dataset(&args.out, &seqs)?;
    println!("imported {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

fn cmd_pretrain(args: &TrainArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let mut resolved = resolve(&args.cfg)?;
    resolved.finalize(Some(&data))?;
    write_run_config(&args.out, &resolved)?;
    let result = pretrain(
        &data,
        &resolved.model,
        &resolved.mpdp,
        &resolved.run,
        Some(&args.out),
    )?;
    if let Some(last) = result.metrics.last() {
        println!(
            "pretrained {} epochs ({} steps), final loss {:.6}",
            result.metrics.len(),
            result.steps,
            last.loss
        );
    }
    Ok(())
}

/// Deterministic class-stratified split when no held-out set is supplied.
fn split_train_test(
    data: Vec<RawSequence>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<RawSequence>, Vec<RawSequence>), CliError> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(CliError::Usage("test_fraction must be in (0, 1)".into()));
    }
    let train_idx: HashSet<usize> = stratified_subset(&data, 1.0 - test_fraction, seed)?
        .into_iter()
        .collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, seq) in data.into_iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(seq);
        } else {
            test.push(seq);
        }
    }
    if test.is_empty() {
        return Err(DataError::Data("internal split left the test set empty".into()).into());
    }
    Ok((train, test))
}

fn load_eval_splits(
    args: &EvalArgs,
    seed: u64,
) -> Result<(Vec<RawSequence>, Vec<RawSequence>), CliError> {
    let data = load_dataset(&args.data)?;
    match &args.test_data {
        Some(dir) => Ok((data, load_dataset(dir)?)),
        None => split_train_test(data, args.test_fraction, seed),
    }
}

fn cmd_probe(args: &EvalArgs) -> Result<(), CliError> {
    let mut resolved = resolve(&args.cfg)?;
    resolved.finalize(None)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (train, test) = load_eval_splits(args, resolved.run.seed)?;
    let result = linear_probe(&train, &test, &ckpt, &resolved.run)?;
    let report = format!(
        "classes={}\ntrain_accuracy={}\ntest_accuracy={}\n",
        result.classes, result.train_accuracy, result.accuracy
    );
    print!("{report}");
    if let Some(out) = &args.out {
        write_run_config(out, &resolved)?;
        std::fs::write(out.join("probe.txt"), report)
            .map_err(|e| CliError::Train(TrainError::Io(e)))?;
    }
    Ok(())
}

fn cmd_finetune(args: &EvalArgs) -> Result<(), CliError> {
    let mut resolved = resolve(&args.cfg)?;
    resolved.finalize(None)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (train, test) = load_eval_splits(args, resolved.run.seed)?;
    let acc = finetune_semi(&train, &test, &ckpt, &resolved.run)?;
    let report = format!(
        "label_fraction={}\ntest_accuracy={acc}\n",
        resolved.run.label_fraction
    );
    print!("{report}");
    if let Some(out) = &args.out {
        write_run_config(out, &resolved)?;
        std::fs::write(out.join("finetune.txt"), report)
            .map_err(|e| CliError::Train(TrainError::Io(e)))?;
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let mut resolved = resolve(&args.cfg)?;
    resolved.finalize(None)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = load_dataset(&args.data)?;
    let run = RunConfig {
        augment: false,
        ..resolved.run.clone()
    };
    let summary = average_attention(
        &ckpt.params,
        &ckpt.model,
        &run,
        &data,
        args.samples,
        args.window,
    )?;
    write_run_config(&args.out, &resolved)?;
    export_attention(&summary, &args.out).map_err(|e| CliError::Train(TrainError::Io(e)))?;
    if ckpt.params.contains("pos.m") {
        let model = &ckpt.model;
        let frames = args.window.min(model.t_max);
        let m = &ckpt.params.get("pos.m").data[..frames * model.token_width()];
        let sim = posemb_similarity(m, frames, model.token_rows(), model.embed_dim);
        export_posemb(&sim, &args.out).map_err(|e| CliError::Train(TrainError::Io(e)))?;
    }
    println!(
        "analyzed {} sequences ({} blocks) into {}",
        summary.samples,
        summary.blocks,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let model = ModelConfig {
        joints: 3,
        persons: 1,
        embed_dim: 4,
        blocks: 1,
        spatial_heads: 2,
        temporal_heads: 2,
        t_max: 8,
        ln_eps: 1e-5,
        positional_mode: crate::model::PositionalMode::TrainableTight,
        p2p_attention: true,
    };
    let mpdp = MpdpConfig {
        intervals: vec![1, 2],
        c_sigma: 3,
        eps_dir: 0.005,
        magnitude_edges: log_spaced_edges(0.005, 1.0, 2),
        lambda_delta: 1.0,
        lambda_sigma: 1.0,
    };
    // 4 tape frames with the last one padded
    let report = full_gradcheck(&model, &mpdp, args.seed, 3, 1, args.tol)?;
    println!(
        "gradcheck: {} scalars, max relative error {:.3e}, tol {:.1e}: {}",
        report.checked,
        report.max_rel_error,
        report.tol,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if !report.passed() {
        return Err(TrainError::Tensor(TensorError::Numeric(format!(
            "gradient check failed: {:.3e} >= {:.1e}",
            report.max_rel_error, report.tol
        )))
        .into());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::ImportNtu(a) => cmd_import_ntu(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Probe(a) => cmd_probe(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version print with code 0; real parse errors are usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
