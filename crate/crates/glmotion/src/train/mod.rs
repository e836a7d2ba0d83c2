//! Training loops: MPDP pretraining, frozen-backbone linear probing, and
//! semi-supervised fine-tuning, all seeded and bit-reproducible.

pub mod optim;

pub use optim::{clip_global_norm, Algorithm, OptimState};

use crate::data::{
    corrupt_joints, disentangle, resample_interp, resample_to_fixed, shear_augment, DataError,
    DisentangledSequence, RawSequence,
};
use crate::model::{
    forward_sequence, init_model_params, pooled_representation, save_checkpoint, Checkpoint,
    ModelConfig, ModelError, ParamSet, SequenceInput,
};
use crate::mpdp::{
    add_head_params, build_targets, heads_forward, mpdp_accuracy, mpdp_loss_parts, MpdpConfig,
};
use crate::tensor::{Tape, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Natural keeps each sequence at its own length behind a mask; Sampled
/// resamples everything to one fixed length, mask-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Natural,
    Sampled(usize),
}

impl std::str::FromStr for InputMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "natural" {
            return Ok(InputMode::Natural);
        }
        if let Some(n) = s.strip_prefix("sampled:") {
            let n: usize = n.parse().map_err(|_| format!("bad sampled length: {s}"))?;
            if n < 2 {
                return Err("sampled length must be at least 2".into());
            }
            return Ok(InputMode::Sampled(n));
        }
        Err(format!("unknown input mode: {s} (natural | sampled:<N>)"))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Initial learning rate; decayed by `lr_decay` each epoch.
    pub lr: f64,
    pub lr_decay: f64,
    pub probe_lr: f64,
    pub clip_norm: Option<f64>,
    pub augment: bool,
    pub shear_amplitude: f64,
    pub resample_frac: f64,
    /// Proportion of joints zeroed per frame, 0 disables corruption.
    pub corrupt: f64,
    pub input_mode: InputMode,
    /// When false, tokens carry raw absolute coordinates (the ablation
    /// without global/local separation).
    pub disentangle: bool,
    pub label_fraction: f64,
    /// Extra checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Optional hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 120,
            batch_size: 128,
            seed: 0,
            lr: 5e-4,
            lr_decay: 0.99,
            probe_lr: 3e-3,
            clip_norm: Some(5.0),
            augment: true,
            shear_amplitude: 0.5,
            resample_frac: 0.1,
            corrupt: 0.0,
            input_mode: InputMode::Natural,
            disentangle: true,
            label_fraction: 1.0,
            checkpoint_every: 0,
            max_steps: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(ModelError::Config("label_fraction must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt) {
            return Err(ModelError::Config("corrupt must be in [0, 1]".into()));
        }
        if self.lr <= 0.0 || self.lr_decay <= 0.0 || self.probe_lr <= 0.0 {
            return Err(ModelError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub dir_acc: Vec<f64>,
    pub mag_acc: Vec<f64>,
    pub lr: f64,
    pub wall_ms: u128,
}

pub fn metrics_header(intervals: &[usize]) -> String {
    let mut cols = vec!["epoch".to_string(), "loss".to_string()];
    cols.extend(intervals.iter().map(|n| format!("dir_acc@{n}")));
    cols.extend(intervals.iter().map(|n| format!("mag_acc@{n}")));
    cols.push("lr".into());
    cols.push("wall_ms".into());
    cols.join(",")
}

impl EpochMetrics {
    pub fn to_row(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), self.loss.to_string()];
        cols.extend(self.dir_acc.iter().map(|v| v.to_string()));
        cols.extend(self.mag_acc.iter().map(|v| v.to_string()));
        cols.push(self.lr.to_string());
        cols.push(self.wall_ms.to_string());
        cols.join(",")
    }
}

#[derive(Debug)]
pub struct PretrainResult {
    pub params: ParamSet,
    pub metrics: Vec<EpochMetrics>,
    pub steps: usize,
}

/// Flattens a raw sequence into model inputs without separating motion:
/// the global slot carries the absolute center trajectory and the local
/// slots carry absolute joint coordinates.
fn entangled_view(seq: &RawSequence) -> DisentangledSequence {
    let (t_n, p_n, k_n) = (seq.frames, seq.persons, seq.joints);
    let mut g = Vec::with_capacity(t_n * p_n * 3);
    let mut r = Vec::with_capacity(t_n * p_n * (k_n - 1) * 3);
    for t in 0..t_n {
        for p in 0..p_n {
            g.extend(seq.joint(t, p, seq.center_joint));
            for k in 0..k_n {
                if k != seq.center_joint {
                    r.extend(seq.joint(t, p, k));
                }
            }
        }
    }
    DisentangledSequence {
        id: seq.id.clone(),
        label: seq.label,
        frames: t_n,
        persons: p_n,
        joints_local: k_n - 1,
        g,
        r,
    }
}

/// Augmentation (optional) + input-mode resampling + disentangling for one
/// sequence. The RNG, when given, must be derived per (seed, epoch, index)
/// so the result is independent of thread scheduling.
fn prepare_sequence(
    seq: &RawSequence,
    run: &RunConfig,
    t_max: usize,
    mut aug_rng: Option<&mut ChaCha8Rng>,
) -> Result<DisentangledSequence, DataError> {
    let mut work = seq.clone();
    if let Some(rng) = aug_rng.as_deref_mut() {
        work = shear_augment(&work, rng, run.shear_amplitude);
        if run.resample_frac > 0.0 && work.frames >= 2 {
            work = resample_interp(&work, rng, run.resample_frac, t_max)?;
        }
        if run.corrupt > 0.0 {
            work = corrupt_joints(&work, rng, run.corrupt);
        }
    }
    match run.input_mode {
        InputMode::Natural => {
            if work.frames > t_max {
                return Err(DataError::Length(format!(
                    "sequence {} has {} frames, t_max is {t_max}",
                    work.id, work.frames
                )));
            }
        }
        InputMode::Sampled(n) => {
            if n > t_max {
                return Err(DataError::Length(format!(
                    "sampled length {n} exceeds t_max {t_max}"
                )));
            }
            work = resample_to_fixed(&work, n);
        }
    }
    Ok(if run.disentangle {
        disentangle(&work)
    } else {
        entangled_view(&work)
    })
}

/// Evaluation-time variant of sequence preparation: input-mode handling and
/// disentangling only, never augmentation.
pub fn prepare_eval_sequence(
    seq: &RawSequence,
    run: &RunConfig,
    t_max: usize,
) -> Result<DisentangledSequence, DataError> {
    prepare_sequence(seq, run, t_max, None)
}

struct SeqOutcome {
    grads: Option<Vec<Option<Vec<f64>>>>,
    loss_sum: f64,
    triples: usize,
    dir_correct: Vec<usize>,
    mag_correct: Vec<usize>,
    acc_total: usize,
}

/// Forward + MPDP loss (+ backward) for one sequence on its own tape.
/// Gradients are of the unnormalized loss sum; the caller divides by the
/// batch-wide triple count.
fn mpdp_sequence_pass(
    ps: &ParamSet,
    model: &ModelConfig,
    mpdp: &MpdpConfig,
    d: &DisentangledSequence,
    want_grads: bool,
) -> Result<SeqOutcome, TrainError> {
    let mut tape = Tape::new();
    let tp = ps.register(&mut tape);
    let valid = vec![true; d.frames];
    let input = SequenceInput {
        g: &d.g,
        r: &d.r,
        valid: &valid,
    };
    let out = forward_sequence(&mut tape, &tp, model, &input, false)?;
    let logits = heads_forward(&mut tape, &tp, mpdp, out.f)?;
    let targets = build_targets(d, mpdp);
    let (sum, triples) = mpdp_loss_parts(&mut tape, &logits, &targets, mpdp)?;
    let acc = mpdp_accuracy(&tape, &logits, &targets, mpdp);
    let loss_sum = tape.value(sum);

    let grads = if want_grads {
        tape.backward(sum)?;
        Some(
            ps.iter()
                .map(|p| tape.grad(tp.id(&p.name)).map(|g| g.to_vec()))
                .collect(),
        )
    } else {
        None
    };
    Ok(SeqOutcome {
        grads,
        loss_sum,
        triples,
        dir_correct: acc.dir_correct,
        mag_correct: acc.mag_correct,
        acc_total: acc.total,
    })
}

/// Sums per-sequence gradient sets in index order, which keeps results
/// independent of how the parallel map was scheduled.
fn accumulate_grads(
    total: &mut Vec<Option<Vec<f64>>>,
    part: &[Option<Vec<f64>>],
) {
    for (slot, g) in total.iter_mut().zip(part) {
        if let Some(g) = g {
            match slot {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                None => *slot = Some(g.clone()),
            }
        }
    }
}

fn scale_grads(grads: &mut [Option<Vec<f64>>], s: f64) {
    for g in grads.iter_mut().flatten() {
        for v in g.iter_mut() {
            *v *= s;
        }
    }
}

fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("GLMOTION_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn aug_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15)
        ^ ((epoch as u64) << 32)
        ^ (index as u64).wrapping_mul(0x100000001b3)
}

/// MPDP pretraining. Writes `metrics.csv` and checkpoints into `out_dir`
/// when given; always returns the trained parameters and per-epoch metrics.
pub fn pretrain(
    data: &[RawSequence],
    model: &ModelConfig,
    mpdp: &MpdpConfig,
    run: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainResult, TrainError> {
    model.validate()?;
    mpdp.validate()?;
    run.validate()?;
    if data.is_empty() {
        return Err(DataError::Data("pretraining dataset is empty".into()).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut ps = init_model_params(model, &mut rng)?;
    add_head_params(model, mpdp, &mut ps, &mut rng);
    let mut opt = OptimState::new(Algorithm::AdamW, run.lr, &ps);

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{}", metrics_header(&mpdp.intervals))?;
            Some(f)
        }
        None => None,
    };

    let pool = worker_pool();
    let n_int = mpdp.intervals.len();
    let mut metrics = Vec::with_capacity(run.epochs);
    let mut steps = 0usize;

    'epochs: for epoch in 0..run.epochs {
        let t0 = std::time::Instant::now();
        let lr = run.lr * run.lr_decay.powi(epoch as i32);
        opt.lr = lr;

        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(aug_seed(run.seed, epoch, usize::MAX));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_triples = 0usize;
        let mut dir_correct = vec![0usize; n_int];
        let mut mag_correct = vec![0usize; n_int];
        let mut acc_total = 0usize;

        for batch in order.chunks(run.batch_size) {
            let outcomes: Vec<Result<SeqOutcome, TrainError>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let d = if run.augment {
                            let mut aug = ChaCha8Rng::seed_from_u64(aug_seed(run.seed, epoch, i));
                            prepare_sequence(&data[i], run, model.t_max, Some(&mut aug))?
                        } else {
                            prepare_sequence(&data[i], run, model.t_max, None)?
                        };
                        mpdp_sequence_pass(&ps, model, mpdp, &d, true)
                    })
                    .collect()
            });

            let mut grads: Vec<Option<Vec<f64>>> = vec![None; ps.len()];
            let mut batch_triples = 0usize;
            for outcome in outcomes {
                let o = outcome?;
                accumulate_grads(&mut grads, o.grads.as_ref().expect("grads requested"));
                batch_triples += o.triples;
                epoch_loss_sum += o.loss_sum;
                epoch_triples += o.triples;
                for ni in 0..n_int {
                    dir_correct[ni] += o.dir_correct[ni];
                    mag_correct[ni] += o.mag_correct[ni];
                }
                acc_total += o.acc_total;
            }
            scale_grads(&mut grads, 1.0 / batch_triples as f64);
            if let Some(max) = run.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            opt.step(&mut ps, &grads)?;
            steps += 1;
            if run.max_steps.is_some_and(|m| steps >= m) {
                let m = finish_epoch(epoch, epoch_loss_sum, epoch_triples, &dir_correct, &mag_correct, acc_total, lr, t0);
                write_metrics(&mut log, &m)?;
                metrics.push(m);
                break 'epochs;
            }
        }

        let m = finish_epoch(epoch, epoch_loss_sum, epoch_triples, &dir_correct, &mag_correct, acc_total, lr, t0);
        write_metrics(&mut log, &m)?;
        metrics.push(m);

        if run.checkpoint_every > 0 && (epoch + 1) % run.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                write_checkpoint(dir, &format!("ckpt_epoch{}.bin", epoch + 1), model, mpdp, run, &ps)?;
            }
        }
        if !ps.all_finite() {
            return Err(TensorError::Numeric("parameters diverged".into()).into());
        }
    }

    if let Some(dir) = out_dir {
        write_checkpoint(dir, "model.ckpt", model, mpdp, run, &ps)?;
    }
    Ok(PretrainResult { params: ps, metrics, steps })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    epoch: usize,
    loss_sum: f64,
    triples: usize,
    dir_correct: &[usize],
    mag_correct: &[usize],
    acc_total: usize,
    lr: f64,
    t0: std::time::Instant,
) -> EpochMetrics {
    let denom = acc_total.max(1) as f64;
    EpochMetrics {
        epoch,
        loss: loss_sum / triples.max(1) as f64,
        dir_acc: dir_correct.iter().map(|&c| c as f64 / denom).collect(),
        mag_acc: mag_correct.iter().map(|&c| c as f64 / denom).collect(),
        lr,
        wall_ms: t0.elapsed().as_millis(),
    }
}

fn write_metrics(log: &mut Option<std::fs::File>, m: &EpochMetrics) -> Result<(), TrainError> {
    if let Some(f) = log {
        writeln!(f, "{}", m.to_row())?;
    }
    Ok(())
}

fn write_checkpoint(
    dir: &Path,
    name: &str,
    model: &ModelConfig,
    mpdp: &MpdpConfig,
    run: &RunConfig,
    ps: &ParamSet,
) -> Result<(), TrainError> {
    let ckpt = Checkpoint {
        model: model.clone(),
        meta: serde_json::json!({
            "mpdp": mpdp,
            "seed": run.seed,
            "intervals": mpdp.intervals,
        }),
        params: ps.clone(),
    };
    save_checkpoint(&dir.join(name), &ckpt)?;
    Ok(())
}

/// Mask-aware mean-pooled backbone features for each sequence, frozen
/// parameters, no augmentation.
pub fn pooled_features(
    ps: &ParamSet,
    model: &ModelConfig,
    run: &RunConfig,
    data: &[RawSequence],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let eval_run = RunConfig { augment: false, ..run.clone() };
    let pool = worker_pool();
    pool.install(|| {
        data.par_iter()
            .map(|seq| {
                let d = prepare_sequence(seq, &eval_run, model.t_max, None)?;
                let mut tape = Tape::new();
                let tp = ps.register(&mut tape);
                let valid = vec![true; d.frames];
                let input = SequenceInput { g: &d.g, r: &d.r, valid: &valid };
                let out = forward_sequence(&mut tape, &tp, model, &input, false)?;
                let pooled = pooled_representation(&mut tape, out.f, &valid)?;
                Ok(tape.data(pooled).to_vec())
            })
            .collect()
    })
}

fn class_count(data: &[RawSequence]) -> Result<usize, DataError> {
    let mut max = 0usize;
    for seq in data {
        match seq.label {
            Some(l) => max = max.max(l),
            None => {
                return Err(DataError::Data(format!(
                    "sequence {} has no label",
                    seq.id
                )))
            }
        }
    }
    Ok(max + 1)
}

fn require_all_classes(data: &[RawSequence], n_classes: usize) -> Result<(), DataError> {
    let mut seen = vec![false; n_classes];
    for seq in data {
        seen[seq.label.unwrap()] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(DataError::Data(format!(
            "class {missing} absent from the training split"
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub classes: usize,
}

fn classifier_accuracy(
    w: &[f64],
    b: &[f64],
    feats: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
) -> f64 {
    let width = feats[0].len();
    let mut correct = 0usize;
    for (x, &y) in feats.iter().zip(labels) {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..classes {
            let mut v = b[c];
            for j in 0..width {
                v += x[j] * w[j * classes + c];
            }
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Trains a single linear classifier on frozen pooled features and reports
/// held-out top-1 accuracy. Never touches the backbone parameters.
pub fn linear_probe(
    train: &[RawSequence],
    test: &[RawSequence],
    ckpt: &Checkpoint,
    run: &RunConfig,
) -> Result<ProbeResult, TrainError> {
    run.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Data("probe needs nonempty train and test splits".into()).into());
    }
    let classes = class_count(train)?.max(class_count(test)?);
    require_all_classes(train, classes)?;

    let train_feats = pooled_features(&ckpt.params, &ckpt.model, run, train)?;
    let test_feats = pooled_features(&ckpt.params, &ckpt.model, run, test)?;
    let train_labels: Vec<usize> = train.iter().map(|s| s.label.unwrap()).collect();
    let test_labels: Vec<usize> = test.iter().map(|s| s.label.unwrap()).collect();
    let width = train_feats[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x70726f6265);
    let bound = 1.0 / (width as f64).sqrt();
    let mut cls = ParamSet::new();
    cls.add(
        "probe.w",
        (0..width * classes).map(|_| rng.gen_range(-bound..bound)).collect(),
        vec![width, classes],
        true,
    );
    cls.add("probe.b", vec![0.0; classes], vec![classes], true);
    let mut opt = OptimState::new(Algorithm::Adam, run.probe_lr, &cls);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..run.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(aug_seed(run.seed, epoch, usize::MAX - 1));
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(run.batch_size) {
            let mut tape = Tape::new();
            let tp = cls.register(&mut tape);
            let mut x = Vec::with_capacity(batch.len() * width);
            let mut y = Vec::with_capacity(batch.len());
            for &i in batch {
                x.extend_from_slice(&train_feats[i]);
                y.push(train_labels[i]);
            }
            let x = tape.leaf(x, vec![batch.len(), width], false)?;
            let logits = tape.matmul(x, tp.id("probe.w"))?;
            let logits = tape.add(logits, tp.id("probe.b"))?;
            let loss = tape.cross_entropy_logits(logits, &y, 1.0)?;
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = cls
                .iter()
                .map(|p| tape.grad(tp.id(&p.name)).map(|g| g.to_vec()))
                .collect();
            opt.step(&mut cls, &grads)?;
        }
    }

    let w = &cls.get("probe.w").data;
    let b = &cls.get("probe.b").data;
    Ok(ProbeResult {
        accuracy: classifier_accuracy(w, b, &test_feats, &test_labels, classes),
        train_accuracy: classifier_accuracy(w, b, &train_feats, &train_labels, classes),
        classes,
    })
}

/// Class-stratified index subset: round(fraction * class size) per class,
/// drawn with the run seed. Errors if any class would get zero samples.
pub fn stratified_subset(
    data: &[RawSequence],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, DataError> {
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (i, seq) in data.iter().enumerate() {
        let l = seq
            .label
            .ok_or_else(|| DataError::Data(format!("sequence {} has no label", seq.id)))?;
        if by_class.len() <= l {
            by_class.resize(l + 1, Vec::new());
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73747261);
    let mut picked = Vec::new();
    for (label, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let want = (fraction * members.len() as f64).round() as usize;
        if want == 0 {
            return Err(DataError::Data(format!(
                "label fraction {fraction} leaves class {label} with zero samples"
            )));
        }
        members.shuffle(&mut rng);
        picked.extend(members.into_iter().take(want));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// End-to-end fine-tuning of backbone + linear classifier from a pretrained
/// checkpoint on a label-fraction subset; returns held-out top-1 accuracy.
pub fn finetune_semi(
    train: &[RawSequence],
    test: &[RawSequence],
    ckpt: &Checkpoint,
    run: &RunConfig,
) -> Result<f64, TrainError> {
    run.validate()?;
    let subset_idx = stratified_subset(train, run.label_fraction, run.seed)?;
    let subset: Vec<RawSequence> = subset_idx.iter().map(|&i| train[i].clone()).collect();
    let classes = class_count(&subset)?.max(class_count(test)?);
    require_all_classes(&subset, classes)?;

    let model = ckpt.model.clone();
    let width = model.token_width();
    let mut ps = ParamSet::new();
    for p in ckpt.params.iter() {
        // pretraining heads are dropped; the classifier replaces them
        if !p.name.starts_with("head.") {
            ps.add(&p.name, p.data.clone(), p.shape.clone(), p.trainable);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x66696e65);
    let bound = 1.0 / (width as f64).sqrt();
    ps.add(
        "cls.w",
        (0..width * classes).map(|_| rng.gen_range(-bound..bound)).collect(),
        vec![width, classes],
        true,
    );
    ps.add("cls.b", vec![0.0; classes], vec![classes], true);
    let mut opt = OptimState::new(Algorithm::AdamW, run.lr, &ps);

    let eval_run = RunConfig { augment: false, ..run.clone() };
    let pool = worker_pool();
    let mut order: Vec<usize> = (0..subset.len()).collect();
    for epoch in 0..run.epochs {
        opt.lr = run.lr * run.lr_decay.powi(epoch as i32);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(aug_seed(run.seed, epoch, usize::MAX - 2));
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(run.batch_size) {
            let results: Vec<Result<Vec<Option<Vec<f64>>>, TrainError>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let d = prepare_sequence(&subset[i], &eval_run, model.t_max, None)?;
                        let mut tape = Tape::new();
                        let tp = ps.register(&mut tape);
                        let valid = vec![true; d.frames];
                        let input = SequenceInput { g: &d.g, r: &d.r, valid: &valid };
                        let out = forward_sequence(&mut tape, &tp, &model, &input, false)?;
                        let pooled = pooled_representation(&mut tape, out.f, &valid)?;
                        let pooled = tape.reshape(pooled, &[1, width])?;
                        let logits = tape.matmul(pooled, tp.id("cls.w"))?;
                        let logits = tape.add(logits, tp.id("cls.b"))?;
                        let label = subset[i].label.unwrap();
                        let loss = tape.cross_entropy_logits(logits, &[label], 1.0)?;
                        tape.backward(loss)?;
                        Ok(ps
                            .iter()
                            .map(|p| tape.grad(tp.id(&p.name)).map(|g| g.to_vec()))
                            .collect())
                    })
                    .collect()
            });
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; ps.len()];
            let mut count = 0usize;
            for r in results {
                accumulate_grads(&mut grads, &r?);
                count += 1;
            }
            scale_grads(&mut grads, 1.0 / count as f64);
            if let Some(max) = run.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            opt.step(&mut ps, &grads)?;
        }
    }

    // held-out evaluation with the fine-tuned backbone
    let test_feats = pooled_features(&ps, &model, run, test)?;
    let test_labels: Vec<usize> = test.iter().map(|s| s.label.unwrap()).collect();
    Ok(classifier_accuracy(
        &ps.get("cls.w").data,
        &ps.get("cls.b").data,
        &test_feats,
        &test_labels,
        classes,
    ))
}

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Central finite differences over every trainable scalar of the full
/// model + heads against the analytic MPDP-loss gradient, on a random toy
/// sequence with `pad` trailing PAD frames.
pub fn full_gradcheck(
    model: &ModelConfig,
    mpdp: &MpdpConfig,
    seed: u64,
    frames: usize,
    pad: usize,
    tol: f64,
) -> Result<GradCheckSummary, TrainError> {
    model.validate()?;
    mpdp.validate()?;
    if frames + pad > model.t_max {
        return Err(ModelError::Config("frames + pad exceeds t_max".into()).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = init_model_params(model, &mut rng)?;
    add_head_params(model, mpdp, &mut ps, &mut rng);
    // zero-init positional/bias params get a nudge so their gradients are
    // probed at a generic point
    for p in ps.iter_mut() {
        if p.trainable && p.data.iter().all(|&v| v == 0.0) {
            for v in p.data.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
    }

    let total = frames + pad;
    let k_local = model.joints - 1;
    let mut g = vec![0.0; total * model.persons * 3];
    let mut r = vec![0.0; total * model.persons * k_local * 3];
    for v in g.iter_mut().take(frames * model.persons * 3) {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in r.iter_mut().take(frames * model.persons * k_local * 3) {
        *v = rng.gen_range(-0.5..0.5);
    }
    let valid: Vec<bool> = (0..total).map(|t| t < frames).collect();
    let d = DisentangledSequence {
        id: "gradcheck".into(),
        label: None,
        frames,
        persons: model.persons,
        joints_local: k_local,
        g: g[..frames * model.persons * 3].to_vec(),
        r: r[..frames * model.persons * k_local * 3].to_vec(),
    };
    let mut targets = build_targets(&d, mpdp);
    targets.pad_to(total);

    let loss_of = |ps: &ParamSet| -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let tp = ps.register(&mut tape);
        let input = SequenceInput { g: &g, r: &r, valid: &valid };
        let out = forward_sequence(&mut tape, &tp, model, &input, false)?;
        let logits = heads_forward(&mut tape, &tp, mpdp, out.f)?;
        let (sum, count) = mpdp_loss_parts(&mut tape, &logits, &targets, mpdp)?;
        let loss = tape.scale(sum, 1.0 / count as f64)?;
        Ok(tape.value(loss))
    };

    // analytic gradients of the normalized loss
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut tape = Tape::new();
        let tp = ps.register(&mut tape);
        let input = SequenceInput { g: &g, r: &r, valid: &valid };
        let out = forward_sequence(&mut tape, &tp, model, &input, false)?;
        let logits = heads_forward(&mut tape, &tp, mpdp, out.f)?;
        let (sum, count) = mpdp_loss_parts(&mut tape, &logits, &targets, mpdp)?;
        let loss = tape.scale(sum, 1.0 / count as f64)?;
        tape.backward(loss)?;
        ps.iter()
            .map(|p| tape.grad(tp.id(&p.name)).map(|g| g.to_vec()))
            .collect()
    };

    let step = 1e-5;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let names: Vec<String> = ps.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        if !ps.get(name).trainable {
            continue;
        }
        let grad = analytic[pi].clone().unwrap_or_else(|| vec![0.0; ps.get(name).data.len()]);
        for j in 0..grad.len() {
            let orig = ps.get(name).data[j];
            ps.get_mut(name).data[j] = orig + step;
            let plus = loss_of(&ps)?;
            ps.get_mut(name).data[j] = orig - step;
            let minus = loss_of(&ps)?;
            ps.get_mut(name).data[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let denom = grad[j].abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max((grad[j] - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheckSummary { max_rel_error: max_rel, checked, tol })
}
