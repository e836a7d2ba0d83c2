//! Data augmentation: per-sequence shear, length-jitter interpolation,
//! and random joint corruption.

use super::{DataError, RawSequence};
use rand::Rng;

/// Applies one random shear matrix to every coordinate of the sequence.
/// The matrix has unit diagonal and off-diagonal entries drawn uniformly
/// from [-amplitude, amplitude]; determinant is 1 up to rounding.
pub fn shear_augment<R: Rng>(seq: &RawSequence, rng: &mut R, amplitude: f64) -> RawSequence {
    let mut s = [[0.0f64; 3]; 3];
    for (i, row) in s.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                1.0
            } else if amplitude > 0.0 {
                rng.gen_range(-amplitude..=amplitude)
            } else {
                0.0
            };
        }
    }
    let mut out = seq.clone();
    for chunk in out.coords.chunks_exact_mut(3) {
        let q = [chunk[0], chunk[1], chunk[2]];
        for i in 0..3 {
            chunk[i] = s[i][0] * q[0] + s[i][1] * q[1] + s[i][2] * q[2];
        }
    }
    out
}

/// Resamples to a random length within +-frac of the original length
/// (clamped to [2, t_max]) by per-joint linear interpolation on a uniform
/// time grid. Endpoints are preserved exactly.
pub fn resample_interp<R: Rng>(
    seq: &RawSequence,
    rng: &mut R,
    frac: f64,
    t_max: usize,
) -> Result<RawSequence, DataError> {
    if seq.frames < 2 {
        return Err(DataError::Length(format!(
            "cannot resample a {}-frame sequence",
            seq.frames
        )));
    }
    let t = seq.frames as f64;
    let lo = ((1.0 - frac) * t).ceil() as usize;
    let hi = ((1.0 + frac) * t).floor() as usize;
    let lo = lo.clamp(2, t_max);
    let hi = hi.clamp(lo, t_max);
    let new_len = rng.gen_range(lo..=hi);
    Ok(resample_to_fixed(seq, new_len))
}

/// Linear interpolation of the whole sequence onto `new_len` uniformly
/// spaced frames; first and last frames are copied bit-exactly.
pub fn resample_to_fixed(seq: &RawSequence, new_len: usize) -> RawSequence {
    assert!(new_len >= 1);
    if new_len == seq.frames {
        return seq.clone();
    }
    let per_frame = seq.persons * seq.joints * 3;
    let mut coords = vec![0.0f64; new_len * per_frame];
    for t_new in 0..new_len {
        let pos = if new_len == 1 {
            0.0
        } else {
            t_new as f64 * (seq.frames - 1) as f64 / (new_len - 1) as f64
        };
        let t0 = pos.floor() as usize;
        let frac = pos - t0 as f64;
        let dst = &mut coords[t_new * per_frame..(t_new + 1) * per_frame];
        if frac == 0.0 || t0 + 1 >= seq.frames {
            dst.copy_from_slice(&seq.coords[t0 * per_frame..(t0 + 1) * per_frame]);
        } else {
            let a = &seq.coords[t0 * per_frame..(t0 + 1) * per_frame];
            let b = &seq.coords[(t0 + 1) * per_frame..(t0 + 2) * per_frame];
            for i in 0..per_frame {
                dst[i] = a[i] + frac * (b[i] - a[i]);
            }
        }
    }
    let mut out = seq.clone();
    out.frames = new_len;
    out.coords = coords;
    out
}

/// Independently replaces each (frame, person, joint) coordinate triple by
/// (0,0,0) with the given probability.
pub fn corrupt_joints<R: Rng>(seq: &RawSequence, rng: &mut R, proportion: f64) -> RawSequence {
    assert!((0.0..=1.0).contains(&proportion));
    let mut out = seq.clone();
    for chunk in out.coords.chunks_exact_mut(3) {
        if rng.gen_bool(proportion) {
            chunk.fill(0.0);
        }
    }
    out
}
