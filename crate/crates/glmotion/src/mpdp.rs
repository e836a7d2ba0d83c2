//! Multi-interval pose displacement prediction: the pretraining objective.
//! For each configured frame interval n, every joint's displacement over n
//! frames is quantized into a direction class (27 sign patterns) and a
//! magnitude bin, and per-interval linear heads predict both from the
//! frame representation.

use crate::data::DisentangledSequence;
use crate::model::{ModelConfig, ModelError, ParamSet, TapeParams};
use crate::tensor::{Tape, TensorError, TensorId};
use serde::{Deserialize, Serialize};

/// Direction classes: 3 sign states per axis, 3 axes.
pub const C_DELTA: usize = 27;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpdpConfig {
    /// Frame offsets n, ordered, distinct, positive.
    pub intervals: Vec<usize>,
    /// Magnitude bin count.
    pub c_sigma: usize,
    /// Per-axis no-movement threshold in meters.
    pub eps_dir: f64,
    /// c_sigma - 1 ascending bin thresholds in meters.
    pub magnitude_edges: Vec<f64>,
    pub lambda_delta: f64,
    pub lambda_sigma: f64,
}

impl Default for MpdpConfig {
    fn default() -> Self {
        let eps_dir = 0.005;
        let c_sigma = 8;
        MpdpConfig {
            intervals: vec![1, 5, 10],
            c_sigma,
            eps_dir,
            magnitude_edges: log_spaced_edges(eps_dir, 1.0, c_sigma - 1),
            lambda_delta: 1.0,
            lambda_sigma: 1.0,
        }
    }
}

/// `count` thresholds geometrically spaced from `lo` to `hi` inclusive.
pub fn log_spaced_edges(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| lo * ratio.powi(i as i32)).collect()
}

impl MpdpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.intervals.is_empty() || self.intervals.iter().any(|&n| n == 0) {
            return Err(ModelError::Config("intervals must be positive".into()));
        }
        let mut seen = self.intervals.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.intervals.len() {
            return Err(ModelError::Config("intervals must be distinct".into()));
        }
        if self.c_sigma < 2 || self.magnitude_edges.len() != self.c_sigma - 1 {
            return Err(ModelError::Config(format!(
                "need exactly c_sigma-1 = {} magnitude edges",
                self.c_sigma.saturating_sub(1)
            )));
        }
        let ascending = self
            .magnitude_edges
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !ascending || self.magnitude_edges[0] <= 0.0 {
            return Err(ModelError::Config(
                "magnitude edges must be positive and strictly ascending".into(),
            ));
        }
        if self.eps_dir <= 0.0 {
            return Err(ModelError::Config("eps_dir must be positive".into()));
        }
        if self.lambda_delta < 0.0 || self.lambda_sigma < 0.0 {
            return Err(ModelError::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Sign pattern of a displacement: per axis, 0 below -eps, 1 within eps,
/// 2 above +eps; packed base-3 as 9 s_x + 3 s_y + s_z. Zero motion is 13.
pub fn direction_class(disp: [f64; 3], eps_dir: f64) -> usize {
    let s = |v: f64| {
        if v < -eps_dir {
            0
        } else if v > eps_dir {
            2
        } else {
            1
        }
    };
    9 * s(disp[0]) + 3 * s(disp[1]) + s(disp[2])
}

/// Bin index = number of edges strictly below the Euclidean norm, so a norm
/// exactly on edge i lands in bin i and the last bin is open-ended.
pub fn magnitude_class(disp: [f64; 3], edges: &[f64]) -> usize {
    let m = (disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2]).sqrt();
    edges.iter().filter(|&&e| e < m).count()
}

/// Per-frame class targets, laid out [T][P][K][interval] with joint index 0
/// holding the global translation and 1..K the locals.
#[derive(Debug, Clone, PartialEq)]
pub struct MpdpTargets {
    pub frames: usize,
    pub persons: usize,
    /// Joints per person including the global slot.
    pub joints: usize,
    pub n_intervals: usize,
    pub dir_class: Vec<usize>,
    pub mag_class: Vec<usize>,
    /// False rows are ignored by the loss.
    pub loss_mask: Vec<bool>,
}

impl MpdpTargets {
    pub fn idx(&self, t: usize, p: usize, k: usize, n: usize) -> usize {
        ((t * self.persons + p) * self.joints + k) * self.n_intervals + n
    }

    /// Extends to `frames` total rows with masked-out dummy targets, for
    /// batches padded past the sequence length.
    pub fn pad_to(&mut self, frames: usize) {
        assert!(frames >= self.frames);
        let extra = (frames - self.frames) * self.persons * self.joints * self.n_intervals;
        self.dir_class.extend(std::iter::repeat(13).take(extra));
        self.mag_class.extend(std::iter::repeat(0).take(extra));
        self.loss_mask.resize(frames, false);
        self.frames = frames;
    }
}

/// Builds direction and magnitude targets for every (frame, person, joint,
/// interval). Frames are numbered from 1, and a frame with t <= n has no
/// n-back reference, so its displacement is defined as zero.
pub fn build_targets(d: &DisentangledSequence, cfg: &MpdpConfig) -> MpdpTargets {
    let (t_n, p_n) = (d.frames, d.persons);
    let k_n = d.joints_local + 1;
    let i_n = cfg.intervals.len();
    let mut dir_class = vec![13; t_n * p_n * k_n * i_n];
    let mut mag_class = vec![0; t_n * p_n * k_n * i_n];

    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    for t in 0..t_n {
        for p in 0..p_n {
            for (ni, &n) in cfg.intervals.iter().enumerate() {
                // frame number is t+1; t+1 <= n keeps the zero displacement
                if t + 1 <= n {
                    continue;
                }
                for k in 0..k_n {
                    let disp = if k == 0 {
                        sub(d.g_at(t, p), d.g_at(t - n, p))
                    } else {
                        sub(d.r_at(t, p, k - 1), d.r_at(t - n, p, k - 1))
                    };
                    let at = ((t * p_n + p) * k_n + k) * i_n + ni;
                    dir_class[at] = direction_class(disp, cfg.eps_dir);
                    mag_class[at] = magnitude_class(disp, &cfg.magnitude_edges);
                }
            }
        }
    }
    MpdpTargets {
        frames: t_n,
        persons: p_n,
        joints: k_n,
        n_intervals: i_n,
        dir_class,
        mag_class,
        loss_mask: vec![true; t_n],
    }
}

/// Adds one linear head pair per interval to the parameter set, stored
/// input-major like every other weight so logits = F * W + b.
pub fn add_head_params<R: rand::Rng>(
    model: &ModelConfig,
    cfg: &MpdpConfig,
    ps: &mut ParamSet,
    rng: &mut R,
) {
    let width = model.token_width();
    let rows = model.token_rows();
    let bound = 1.0 / (width as f64).sqrt();
    let mut init = |count: usize| -> Vec<f64> {
        (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    for &n in &cfg.intervals {
        let dir_cols = rows * C_DELTA;
        let mag_cols = rows * cfg.c_sigma;
        ps.add(&format!("head.n{n}.dir.w"), init(width * dir_cols), vec![width, dir_cols], true);
        ps.add(&format!("head.n{n}.dir.b"), vec![0.0; dir_cols], vec![dir_cols], true);
        ps.add(&format!("head.n{n}.mag.w"), init(width * mag_cols), vec![width, mag_cols], true);
        ps.add(&format!("head.n{n}.mag.b"), vec![0.0; mag_cols], vec![mag_cols], true);
    }
}

pub fn head_param_count(model: &ModelConfig, cfg: &MpdpConfig) -> usize {
    let width = model.token_width();
    let rows = model.token_rows();
    cfg.intervals.len()
        * ((width + 1) * rows * C_DELTA + (width + 1) * rows * cfg.c_sigma)
}

/// Per-interval (direction, magnitude) logits over frames: each entry is
/// ([T, P*K*C_delta], [T, P*K*C_sigma]). Softmax is deferred to the loss.
pub fn heads_forward(
    tape: &mut Tape,
    params: &TapeParams,
    cfg: &MpdpConfig,
    f: TensorId,
) -> Result<Vec<(TensorId, TensorId)>, TensorError> {
    let mut out = Vec::with_capacity(cfg.intervals.len());
    for &n in &cfg.intervals {
        let dir = tape.matmul(f, params.id(&format!("head.n{n}.dir.w")))?;
        let dir = tape.add(dir, params.id(&format!("head.n{n}.dir.b")))?;
        let mag = tape.matmul(f, params.id(&format!("head.n{n}.mag.w")))?;
        let mag = tape.add(mag, params.id(&format!("head.n{n}.mag.b")))?;
        out.push((dir, mag));
    }
    Ok(out)
}

/// Unnormalized loss sum plus the count of valid (t, p, interval) triples.
/// The sum is lambda_delta/K * sum of direction cross entropies over valid
/// rows plus the magnitude counterpart; dividing by the triple count gives
/// the per-sequence loss, and summing parts across sequences before one
/// division gives a duplication-invariant batch loss.
pub fn mpdp_loss_parts(
    tape: &mut Tape,
    logits: &[(TensorId, TensorId)],
    targets: &MpdpTargets,
    cfg: &MpdpConfig,
) -> Result<(TensorId, usize), TensorError> {
    if logits.len() != targets.n_intervals || logits.len() != cfg.intervals.len() {
        return Err(TensorError::Shape(format!(
            "{} logit pairs for {} intervals",
            logits.len(),
            targets.n_intervals
        )));
    }
    let valid_frames = targets.loss_mask.iter().filter(|&&m| m).count();
    if valid_frames == 0 {
        return Err(TensorError::Mask("every frame is masked".into()));
    }
    let (t_n, p_n, k_n) = (targets.frames, targets.persons, targets.joints);
    let groups = p_n * k_n;
    let row_mask: Vec<bool> = (0..t_n * groups)
        .map(|row| targets.loss_mask[row / groups])
        .collect();

    let mut terms = Vec::with_capacity(2 * logits.len());
    for (ni, &(dir, mag)) in logits.iter().enumerate() {
        let gather = |classes: &[usize]| -> Vec<usize> {
            let mut tg = vec![0; t_n * groups];
            for t in 0..t_n {
                for p in 0..p_n {
                    for k in 0..k_n {
                        tg[t * groups + p * k_n + k] =
                            classes[((t * p_n + p) * k_n + k) * targets.n_intervals + ni];
                    }
                }
            }
            tg
        };
        if cfg.lambda_delta != 0.0 {
            let flat = tape.reshape(dir, &[t_n * groups, C_DELTA])?;
            let ce = tape.cross_entropy_sum_masked(
                flat,
                &gather(&targets.dir_class),
                &row_mask,
                cfg.lambda_delta / k_n as f64,
            )?;
            terms.push(ce);
        }
        if cfg.lambda_sigma != 0.0 {
            let flat = tape.reshape(mag, &[t_n * groups, cfg.c_sigma])?;
            let ce = tape.cross_entropy_sum_masked(
                flat,
                &gather(&targets.mag_class),
                &row_mask,
                cfg.lambda_sigma / k_n as f64,
            )?;
            terms.push(ce);
        }
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => tape.scalar(0.0),
    };
    for &t in &terms[1.min(terms.len())..] {
        total = tape.add(total, t)?;
    }
    Ok((total, valid_frames * p_n * targets.n_intervals))
}

/// Normalized per-sequence loss: the part sum divided by the valid-triple
/// count, so uniform logits score lambda_delta ln 27 + lambda_sigma ln C_sigma.
pub fn mpdp_loss(
    tape: &mut Tape,
    logits: &[(TensorId, TensorId)],
    targets: &MpdpTargets,
    cfg: &MpdpConfig,
) -> Result<TensorId, TensorError> {
    let (sum, count) = mpdp_loss_parts(tape, logits, targets, cfg)?;
    tape.scale(sum, 1.0 / count as f64)
}

/// Per-interval direction and magnitude accuracy over valid frames,
/// computed from raw logits by argmax.
pub struct MpdpAccuracy {
    pub dir_correct: Vec<usize>,
    pub mag_correct: Vec<usize>,
    pub total: usize,
}

pub fn mpdp_accuracy(
    tape: &Tape,
    logits: &[(TensorId, TensorId)],
    targets: &MpdpTargets,
    cfg: &MpdpConfig,
) -> MpdpAccuracy {
    let (t_n, p_n, k_n) = (targets.frames, targets.persons, targets.joints);
    let groups = p_n * k_n;
    let argmax = |row: &[f64]| -> usize {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    };
    let mut acc = MpdpAccuracy {
        dir_correct: vec![0; logits.len()],
        mag_correct: vec![0; logits.len()],
        total: 0,
    };
    for (ni, &(dir, mag)) in logits.iter().enumerate() {
        let dir_data = tape.data(dir);
        let mag_data = tape.data(mag);
        for t in 0..t_n {
            if !targets.loss_mask[t] {
                continue;
            }
            for p in 0..p_n {
                for k in 0..k_n {
                    let row = t * groups + p * k_n + k;
                    let at = ((t * p_n + p) * k_n + k) * targets.n_intervals + ni;
                    let d_pred = argmax(&dir_data[row * C_DELTA..(row + 1) * C_DELTA]);
                    let m_pred =
                        argmax(&mag_data[row * cfg.c_sigma..(row + 1) * cfg.c_sigma]);
                    if d_pred == targets.dir_class[at] {
                        acc.dir_correct[ni] += 1;
                    }
                    if m_pred == targets.mag_class[at] {
                        acc.mag_correct[ni] += 1;
                    }
                    if ni == 0 {
                        acc.total += 1;
                    }
                }
            }
        }
    }
    acc
}
