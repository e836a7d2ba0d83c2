//! Skeleton sequence types: parsing, synthesis, augmentation,
//! disentangling into global/local motion, and masked batching.

mod augment;
mod canonical;
mod ntu;
mod synth;

pub use augment::{corrupt_joints, resample_interp, resample_to_fixed, shear_augment};
pub use canonical::{load_dataset, parse_canonical, save_dataset, write_canonical};
pub use ntu::parse_ntu_skeleton;
pub use synth::{synth_generate, SynthSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-frame joint coordinates for one sequence, all persons stacked.
/// Coordinates are meters, stored row-major as [T][P][K][xyz].
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub id: String,
    pub label: Option<usize>,
    pub frames: usize,
    pub persons: usize,
    pub joints: usize,
    pub center_joint: usize,
    pub coords: Vec<f64>,
}

impl RawSequence {
    pub fn new(
        id: String,
        label: Option<usize>,
        frames: usize,
        persons: usize,
        joints: usize,
        center_joint: usize,
        coords: Vec<f64>,
    ) -> Result<Self, DataError> {
        if frames == 0 {
            return Err(DataError::Format("sequence must have at least one frame".into()));
        }
        if persons == 0 || joints < 2 {
            return Err(DataError::Format(format!(
                "need P >= 1 and K >= 2, got P={persons} K={joints}"
            )));
        }
        if center_joint >= joints {
            return Err(DataError::Format(format!(
                "center joint {center_joint} out of range for K={joints}"
            )));
        }
        if coords.len() != frames * persons * joints * 3 {
            return Err(DataError::Format(format!(
                "coords length {} does not match T*P*K*3 = {}",
                coords.len(),
                frames * persons * joints * 3
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Format("non-finite coordinate".into()));
        }
        Ok(RawSequence {
            id,
            label,
            frames,
            persons,
            joints,
            center_joint,
            coords,
        })
    }

    #[inline]
    pub fn idx(&self, t: usize, p: usize, k: usize) -> usize {
        ((t * self.persons + p) * self.joints + k) * 3
    }

    pub fn joint(&self, t: usize, p: usize, k: usize) -> [f64; 3] {
        let i = self.idx(t, p, k);
        [self.coords[i], self.coords[i + 1], self.coords[i + 2]]
    }
}

/// Global translation plus center-relative local offsets, the model input.
/// `g` is [T][P][xyz]; `r` is [T][P][K-1][xyz] with the center joint removed
/// and the remaining joints re-indexed in original order.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledSequence {
    pub id: String,
    pub label: Option<usize>,
    pub frames: usize,
    pub persons: usize,
    pub joints_local: usize,
    pub g: Vec<f64>,
    pub r: Vec<f64>,
}

impl DisentangledSequence {
    #[inline]
    pub fn g_at(&self, t: usize, p: usize) -> [f64; 3] {
        let i = (t * self.persons + p) * 3;
        [self.g[i], self.g[i + 1], self.g[i + 2]]
    }

    #[inline]
    pub fn r_at(&self, t: usize, p: usize, k: usize) -> [f64; 3] {
        let i = ((t * self.persons + p) * self.joints_local + k) * 3;
        [self.r[i], self.r[i + 1], self.r[i + 2]]
    }
}

/// Splits a sequence into global translation of the center joint (relative
/// to frame 0) and per-joint offsets relative to the center joint.
pub fn disentangle(seq: &RawSequence) -> DisentangledSequence {
    let (t_n, p_n, k_n) = (seq.frames, seq.persons, seq.joints);
    let c = seq.center_joint;
    let mut g = Vec::with_capacity(t_n * p_n * 3);
    let mut r = Vec::with_capacity(t_n * p_n * (k_n - 1) * 3);
    for t in 0..t_n {
        for p in 0..p_n {
            let center = seq.joint(t, p, c);
            let origin = seq.joint(0, p, c);
            g.extend_from_slice(&[
                center[0] - origin[0],
                center[1] - origin[1],
                center[2] - origin[2],
            ]);
            for k in 0..k_n {
                if k == c {
                    continue;
                }
                let q = seq.joint(t, p, k);
                r.extend_from_slice(&[q[0] - center[0], q[1] - center[1], q[2] - center[2]]);
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

/// Inverse of [`disentangle`]; `origins[p]` supplies the frame-0 center
/// coordinate lost by disentangling. Exact round trip by construction.
pub fn reassemble(
    d: &DisentangledSequence,
    center_joint: usize,
    origins: &[[f64; 3]],
) -> Result<RawSequence, DataError> {
    if origins.len() != d.persons {
        return Err(DataError::Data(format!(
            "need one origin per person, got {} for P={}",
            origins.len(),
            d.persons
        )));
    }
    let k_n = d.joints_local + 1;
    let mut coords = Vec::with_capacity(d.frames * d.persons * k_n * 3);
    for t in 0..d.frames {
        for p in 0..d.persons {
            let gt = d.g_at(t, p);
            let center = [
                gt[0] + origins[p][0],
                gt[1] + origins[p][1],
                gt[2] + origins[p][2],
            ];
            let mut local = 0;
            for k in 0..k_n {
                if k == center_joint {
                    coords.extend_from_slice(&center);
                } else {
                    let r = d.r_at(t, p, local);
                    coords.extend_from_slice(&[r[0] + center[0], r[1] + center[1], r[2] + center[2]]);
                    local += 1;
                }
            }
        }
    }
    RawSequence::new(
        d.id.clone(),
        d.label,
        d.frames,
        d.persons,
        k_n,
        center_joint,
        coords,
    )
}

/// Padded token inputs plus frame validity mask for a batch of sequences.
/// `valid[b][t]` is true exactly for t < lengths[b]; padded slots hold 0.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub t_max: usize,
    pub persons: usize,
    pub joints_local: usize,
    /// [B][T_max][P][xyz]
    pub g: Vec<f64>,
    /// [B][T_max][P][K-1][xyz]
    pub r: Vec<f64>,
    /// [B][T_max]
    pub valid: Vec<bool>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn valid_row(&self, b: usize) -> &[bool] {
        &self.valid[b * self.t_max..(b + 1) * self.t_max]
    }

    /// g slice for one batch element: [T_max][P][xyz]
    pub fn g_of(&self, b: usize) -> &[f64] {
        let stride = self.t_max * self.persons * 3;
        &self.g[b * stride..(b + 1) * stride]
    }

    /// r slice for one batch element: [T_max][P][K-1][xyz]
    pub fn r_of(&self, b: usize) -> &[f64] {
        let stride = self.t_max * self.persons * self.joints_local * 3;
        &self.r[b * stride..(b + 1) * stride]
    }
}

pub fn pad_and_mask(seqs: &[&DisentangledSequence], t_max: usize) -> Result<Batch, DataError> {
    if seqs.is_empty() {
        return Err(DataError::Data("empty batch".into()));
    }
    let persons = seqs[0].persons;
    let joints_local = seqs[0].joints_local;
    let b_n = seqs.len();
    let mut g = vec![0.0; b_n * t_max * persons * 3];
    let mut r = vec![0.0; b_n * t_max * persons * joints_local * 3];
    let mut valid = vec![false; b_n * t_max];
    let mut lengths = Vec::with_capacity(b_n);
    let mut labels = Vec::with_capacity(b_n);
    let mut ids = Vec::with_capacity(b_n);
    for (b, seq) in seqs.iter().enumerate() {
        if seq.persons != persons || seq.joints_local != joints_local {
            return Err(DataError::Data(format!(
                "inconsistent P/K in batch at sequence {}",
                seq.id
            )));
        }
        if seq.frames > t_max {
            return Err(DataError::Length(format!(
                "sequence {} has {} frames > T_max {}",
                seq.id, seq.frames, t_max
            )));
        }
        let g_stride = persons * 3;
        let r_stride = persons * joints_local * 3;
        for t in 0..seq.frames {
            valid[b * t_max + t] = true;
            g[(b * t_max + t) * g_stride..(b * t_max + t + 1) * g_stride]
                .copy_from_slice(&seq.g[t * g_stride..(t + 1) * g_stride]);
            r[(b * t_max + t) * r_stride..(b * t_max + t + 1) * r_stride]
                .copy_from_slice(&seq.r[t * r_stride..(t + 1) * r_stride]);
        }
        lengths.push(seq.frames);
        labels.push(seq.label);
        ids.push(seq.id.clone());
    }
    Ok(Batch {
        size: b_n,
        t_max,
        persons,
        joints_local,
        g,
        r,
        valid,
        lengths,
        labels,
        ids,
    })
}
