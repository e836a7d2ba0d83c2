//! One-way importer for the public NTU RGB+D `.skeleton` text layout.
//!
//! Layout: first line is the frame count; each frame starts with a body
//! count; each body has one metadata line, a joint-count line (must be 25),
//! then one line per joint whose first three fields are x y z.

use super::{DataError, RawSequence};

pub const NTU_JOINTS: usize = 25;

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str), DataError> {
        loop {
            let line = self.iter.next().ok_or(DataError::Format(
                "unexpected end of file".into(),
            ))?;
            self.line_no += 1;
            if !line.trim().is_empty() {
                return Ok((self.line_no, line.trim()));
            }
        }
    }

    fn next_usize(&mut self) -> Result<usize, DataError> {
        let (no, line) = self.next_line()?;
        line.split_whitespace()
            .next()
            .ok_or(DataError::Parse {
                line: no,
                msg: "expected an integer".into(),
            })?
            .parse()
            .map_err(|_| DataError::Parse {
                line: no,
                msg: format!("not an integer: {line}"),
            })
    }
}

/// Parses NTU skeleton text into a `RawSequence` with exactly `p_max`
/// persons: extra bodies are dropped in body order, missing ones are
/// zero-filled (frames with fewer than `p_max` bodies are noted in the id).
pub fn parse_ntu_skeleton(
    text: &str,
    id: &str,
    center_joint: usize,
    p_max: usize,
) -> Result<RawSequence, DataError> {
    if text.trim().is_empty() {
        return Err(DataError::Format("empty skeleton stream".into()));
    }
    let mut lines = Lines {
        iter: text.lines(),
        line_no: 0,
    };
    let frames = lines.next_usize()?;
    if frames == 0 {
        return Err(DataError::Format("skeleton file with 0 frames".into()));
    }
    let mut coords = vec![0.0f64; frames * p_max * NTU_JOINTS * 3];
    let mut partial_frames = 0usize;
    for t in 0..frames {
        let bodies = lines.next_usize()?;
        if bodies < p_max {
            partial_frames += 1;
        }
        for b in 0..bodies {
            // body metadata line (tracking id, handedness flags, ...)
            lines.next_line()?;
            let joints = lines.next_usize()?;
            if joints != NTU_JOINTS {
                return Err(DataError::Format(format!(
                    "expected {NTU_JOINTS} joints, got {joints} (frame {t}, body {b})"
                )));
            }
            for k in 0..NTU_JOINTS {
                let (no, line) = lines.next_line()?;
                let mut fields = line.split_whitespace();
                let mut xyz = [0.0f64; 3];
                for v in xyz.iter_mut() {
                    let tok = fields.next().ok_or(DataError::Parse {
                        line: no,
                        msg: "joint line has fewer than 3 fields".into(),
                    })?;
                    *v = tok.parse().map_err(|_| DataError::Parse {
                        line: no,
                        msg: format!("non-numeric token: {tok}"),
                    })?;
                }
                if b < p_max {
                    let base = ((t * p_max + b) * NTU_JOINTS + k) * 3;
                    coords[base..base + 3].copy_from_slice(&xyz);
                }
            }
        }
    }
    let id = if partial_frames > 0 {
        format!("{id}#partial={partial_frames}")
    } else {
        id.to_string()
    };
    RawSequence::new(id, None, frames, p_max, NTU_JOINTS, center_joint, coords)
}
