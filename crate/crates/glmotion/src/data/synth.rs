//! Class-conditioned synthetic motion generator, a desk-scale stand-in for
//! motion-capture datasets.
//!
//! Each class fixes a global-translation pattern (stationary, constant
//! velocity line, or circle) and per-joint sinusoidal local offsets with a
//! class-specific frequency and phase around a fixed rest skeleton.
//! Classes are pairwise distinguishable by construction: every class gets a
//! distinct oscillation frequency, and trajectory families rotate with the
//! class index.

use super::{DataError, RawSequence};
use rand::Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub joints: usize,
    pub persons: usize,
    pub t_range: (usize, usize),
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 4,
            n_per_class: 100,
            joints: 9,
            persons: 1,
            t_range: (20, 40),
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trajectory {
    Stationary,
    Line,
    Circle,
}

fn class_trajectory(class: usize) -> Trajectory {
    match class % 3 {
        0 => Trajectory::Stationary,
        1 => Trajectory::Line,
        _ => Trajectory::Circle,
    }
}

/// Per-frame angular frequency for a class; distinct for every class.
fn class_omega(class: usize) -> f64 {
    // 0.5 Hz, 1 Hz, 2 Hz, ... at a nominal 30 fps
    let hz = 0.5 * 2f64.powi(class as i32);
    2.0 * PI * hz / 30.0
}

fn rest_joint(k: usize, joints: usize) -> [f64; 3] {
    if k == 0 {
        return [0.0; 3];
    }
    let angle = 2.0 * PI * k as f64 / (joints - 1) as f64;
    let radius = 0.3 + 0.05 * (k % 3) as f64;
    [radius * angle.cos(), radius * angle.sin(), 0.1 * (k as f64 % 4.0)]
}

/// Generates `n_classes * n_per_class` labeled sequences. The center joint
/// is joint 0. Gaussian coordinate noise with the configured sigma is added
/// to every coordinate.
pub fn synth_generate<R: Rng>(rng: &mut R, spec: &SynthSpec) -> Result<Vec<RawSequence>, DataError> {
    if spec.n_classes < 2 {
        return Err(DataError::Data("need at least 2 classes".into()));
    }
    if spec.joints < 2 || spec.t_range.0 < 2 || spec.t_range.0 > spec.t_range.1 {
        return Err(DataError::Data("invalid synth spec".into()));
    }
    let mut seqs = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for class in 0..spec.n_classes {
        let omega = class_omega(class);
        let traj = class_trajectory(class);
        let class_phase = 0.7 * class as f64;
        for i in 0..spec.n_per_class {
            let frames = rng.gen_range(spec.t_range.0..=spec.t_range.1);
            // sequences start at an arbitrary point of the cycle
            let t0 = rng.gen_range(0.0..2.0 * PI);
            let mut coords = Vec::with_capacity(frames * spec.persons * spec.joints * 3);
            for t in 0..frames {
                let time = t as f64;
                let g = match traj {
                    Trajectory::Stationary => [0.0; 3],
                    Trajectory::Line => {
                        let azimuth = 2.4 * class as f64;
                        [0.02 * time * azimuth.cos(), 0.02 * time * azimuth.sin(), 0.0]
                    }
                    Trajectory::Circle => {
                        let a = 0.15 * time + t0;
                        [0.5 * (a.cos() - t0.cos()), 0.5 * (a.sin() - t0.sin()), 0.0]
                    }
                };
                for p in 0..spec.persons {
                    let person_shift = p as f64 * 1.0;
                    for k in 0..spec.joints {
                        let rest = rest_joint(k, spec.joints);
                        let wobble = if k == 0 {
                            [0.0; 3]
                        } else {
                            let ph = omega * time + t0 + class_phase + 0.5 * k as f64;
                            [0.1 * ph.sin(), 0.1 * (ph + 1.3).sin(), 0.05 * (ph + 2.1).sin()]
                        };
                        for axis in 0..3 {
                            let base = g[axis]
                                + rest[axis]
                                + wobble[axis]
                                + if axis == 0 { person_shift } else { 0.0 };
                            let noise = if spec.noise_sigma > 0.0 {
                                gaussian(rng) * spec.noise_sigma
                            } else {
                                0.0
                            };
                            coords.push(base + noise);
                        }
                    }
                }
            }
            seqs.push(RawSequence::new(
                format!("synth_c{class}_{i:04}"),
                Some(class),
                frames,
                spec.persons,
                spec.joints,
                0,
                coords,
            )?);
        }
    }
    Ok(seqs)
}

/// Box-Muller standard normal.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}
