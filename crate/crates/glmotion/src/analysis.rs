//! Post-hoc interpretation: attention-map averaging over a sample of
//! sequences, mean attended frame distance, positional-embedding cosine
//! similarity, and CSV/SVG exports.

use crate::data::{DataError, RawSequence};
use crate::model::{forward_sequence, ModelConfig, ParamSet, SequenceInput};
use crate::tensor::Tape;
use crate::train::{prepare_eval_sequence, RunConfig, TrainError};
use std::fmt::Write as _;
use std::path::Path;

/// Sentinel for undefined cosine similarity against a zero-norm row.
pub const SIM_UNDEFINED: f64 = f64::NAN;

/// Attention averaged over sampled sequences. Spatial maps are P*K x P*K;
/// temporal maps cover the first `window` frames with per-cell sample
/// counts, so short sequences contribute only their prefix.
#[derive(Debug, Clone)]
pub struct AttentionSummary {
    pub blocks: usize,
    pub spatial_heads: usize,
    pub temporal_heads: usize,
    pub token_rows: usize,
    pub window: usize,
    /// [block][head], row-major token_rows x token_rows.
    pub spatial: Vec<Vec<Vec<f64>>>,
    /// [block][head], row-major window x window.
    pub temporal: Vec<Vec<Vec<f64>>>,
    /// [block][head] mean attended frame distance within the window.
    pub mean_distance: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Distance attended by one query row: sum over keys of weight * |t - k|.
pub fn attended_distance_row(row: &[f64], t: usize) -> f64 {
    row.iter()
        .enumerate()
        .map(|(k, &a)| a * (t as isize - k as isize).unsigned_abs() as f64)
        .sum()
}

/// Mean over all query rows of the attended distance on an n x n map.
pub fn mean_attended_distance(map: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|t| attended_distance_row(&map[t * n..(t + 1) * n], t))
        .sum::<f64>()
        / n as f64
}

/// Runs the model with attention capture over the first `n_samples`
/// sequences in dataset order (clamped to the dataset size) and averages
/// post-softmax maps. Temporal maps and attended distances are restricted
/// to the first `window` frames of each sequence.
pub fn average_attention(
    ps: &ParamSet,
    model: &ModelConfig,
    run: &RunConfig,
    data: &[RawSequence],
    n_samples: usize,
    window: usize,
) -> Result<AttentionSummary, TrainError> {
    if data.is_empty() {
        return Err(DataError::Data("attention analysis needs a nonempty dataset".into()).into());
    }
    if window == 0 {
        return Err(DataError::Data("window must be positive".into()).into());
    }
    let take = n_samples.min(data.len()).max(1);
    let rows = model.token_rows();
    let (bn, hs, ht) = (model.blocks, model.spatial_heads, model.temporal_heads);

    let mut spatial = vec![vec![vec![0.0; rows * rows]; hs]; bn];
    let mut temporal = vec![vec![vec![0.0; window * window]; ht]; bn];
    let mut cell_counts = vec![0usize; window * window];
    let mut dist_sum = vec![vec![0.0; ht]; bn];
    let mut dist_count = 0usize;

    for seq in &data[..take] {
        let d = prepare_eval_sequence(seq, run, model.t_max)?;
        let mut tape = Tape::new();
        let tp = ps.register(&mut tape);
        let valid = vec![true; d.frames];
        let input = SequenceInput { g: &d.g, r: &d.r, valid: &valid };
        let out = forward_sequence(&mut tape, &tp, model, &input, true)?;
        let l = d.frames.min(window);

        for (b, block) in out.spatial_attention.as_ref().unwrap().iter().enumerate() {
            for (h, map) in block.iter().enumerate() {
                for (acc, &v) in spatial[b][h].iter_mut().zip(map) {
                    *acc += v;
                }
            }
        }
        for (b, block) in out.temporal_attention.as_ref().unwrap().iter().enumerate() {
            for (h, map) in block.iter().enumerate() {
                for t in 0..l {
                    let row = &map[t * d.frames..t * d.frames + l];
                    for (k, &v) in row.iter().enumerate() {
                        temporal[b][h][t * window + k] += v;
                    }
                    dist_sum[b][h] += attended_distance_row(row, t);
                }
            }
        }
        for t in 0..l {
            for k in 0..l {
                cell_counts[t * window + k] += 1;
            }
        }
        dist_count += l;
    }

    for block in spatial.iter_mut() {
        for map in block.iter_mut() {
            for v in map.iter_mut() {
                *v /= take as f64;
            }
        }
    }
    for block in temporal.iter_mut() {
        for map in block.iter_mut() {
            for (v, &c) in map.iter_mut().zip(&cell_counts) {
                if c > 0 {
                    *v /= c as f64;
                }
            }
        }
    }
    let mean_distance = dist_sum
        .into_iter()
        .map(|heads| heads.into_iter().map(|s| s / dist_count as f64).collect())
        .collect();

    Ok(AttentionSummary {
        blocks: bn,
        spatial_heads: hs,
        temporal_heads: ht,
        token_rows: rows,
        window,
        spatial,
        temporal,
        mean_distance,
        samples: take,
    })
}

/// Cosine similarity between every pair of positional vectors M[t, j]
/// (dimension d each). Rows with zero norm yield the NaN sentinel.
#[derive(Debug, Clone)]
pub struct PosembSimilarity {
    /// Number of (frame, token) positions.
    pub n: usize,
    pub frames: usize,
    pub token_rows: usize,
    /// Row-major n x n; entry (a, b) is cos(M_a, M_b).
    pub sims: Vec<f64>,
}

pub fn posemb_similarity(m: &[f64], frames: usize, token_rows: usize, d: usize) -> PosembSimilarity {
    assert_eq!(m.len(), frames * token_rows * d);
    let n = frames * token_rows;
    let norms: Vec<f64> = (0..n)
        .map(|i| m[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut sims = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let s = if norms[a] == 0.0 || norms[b] == 0.0 {
                SIM_UNDEFINED
            } else {
                let dot: f64 = m[a * d..(a + 1) * d]
                    .iter()
                    .zip(&m[b * d..(b + 1) * d])
                    .map(|(x, y)| x * y)
                    .sum();
                dot / (norms[a] * norms[b])
            };
            sims[a * n + b] = s;
            sims[b * n + a] = s;
        }
    }
    PosembSimilarity { n, frames, token_rows, sims }
}

/// Row-major matrix as CSV with a header row of key indices.
pub fn matrix_csv(matrix: &[f64], n_cols: usize) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..n_cols).map(|k| format!("key{k}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in matrix.chunks(n_cols) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Standalone SVG heatmap: linear white-to-blue color map with the value
/// range annotated. NaN cells are drawn gray.
pub fn heatmap_svg(matrix: &[f64], n_cols: usize, title: &str) -> String {
    let n_rows = matrix.len() / n_cols.max(1);
    let cell = 12usize;
    let margin = 4usize;
    let label_h = 32usize;
    let w = n_cols * cell + 2 * margin;
    let h = n_rows * cell + 2 * margin + label_h;

    let finite: Vec<f64> = matrix.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{margin}\" y=\"14\" font-family=\"monospace\" font-size=\"10\">{title}</text>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{margin}\" y=\"26\" font-family=\"monospace\" font-size=\"9\">range [{lo:.4}, {hi:.4}]</text>"
    );
    for (i, &v) in matrix.iter().enumerate() {
        let (r, c) = (i / n_cols, i % n_cols);
        let x = margin + c * cell;
        let y = label_h + margin + r * cell;
        let fill = if v.is_finite() {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - t)).round() as u8;
            format!("rgb({shade},{shade},255)")
        } else {
            "rgb(128,128,128)".to_string()
        };
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\"/>"
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes every averaged map plus the attended-distance table into `dir`.
pub fn export_attention(summary: &AttentionSummary, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for b in 0..summary.blocks {
        for (h, map) in summary.spatial[b].iter().enumerate() {
            let stem = format!("spatial_b{b}_h{h}");
            std::fs::write(dir.join(format!("{stem}.csv")), matrix_csv(map, summary.token_rows))?;
            std::fs::write(
                dir.join(format!("{stem}.svg")),
                heatmap_svg(map, summary.token_rows, &stem),
            )?;
        }
        for (h, map) in summary.temporal[b].iter().enumerate() {
            let stem = format!("temporal_b{b}_h{h}");
            std::fs::write(dir.join(format!("{stem}.csv")), matrix_csv(map, summary.window))?;
            std::fs::write(
                dir.join(format!("{stem}.svg")),
                heatmap_svg(map, summary.window, &stem),
            )?;
        }
    }
    let mut dist = String::from("block,head,mean_attended_distance\n");
    for (b, heads) in summary.mean_distance.iter().enumerate() {
        for (h, v) in heads.iter().enumerate() {
            let _ = writeln!(dist, "{b},{h},{v}");
        }
    }
    std::fs::write(dir.join("attended_distance.csv"), dist)?;
    Ok(())
}

/// Writes the full similarity matrix; each row is the slice for one (t, j).
pub fn export_posemb(sim: &PosembSimilarity, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("posemb_similarity.csv"), matrix_csv(&sim.sims, sim.n))?;
    std::fs::write(
        dir.join("posemb_similarity.svg"),
        heatmap_svg(&sim.sims, sim.n, "positional embedding cosine similarity"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests;
