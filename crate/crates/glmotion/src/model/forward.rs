//! Forward pass: embedding, positional injection, spatial and temporal
//! attention blocks, and the final representation head, all recorded on an
//! autodiff tape.

use super::{ModelConfig, PositionalMode, TapeParams};
use crate::data::Batch;
use crate::tensor::{Tape, TensorError, TensorId};

/// One batch element viewed as flat slices.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    /// [L][P][xyz]
    pub g: &'a [f64],
    /// [L][P][K-1][xyz]
    pub r: &'a [f64],
    /// [L], true for real frames
    pub valid: &'a [bool],
}

impl<'a> SequenceInput<'a> {
    pub fn from_batch(batch: &'a Batch, b: usize) -> Self {
        SequenceInput {
            g: batch.g_of(b),
            r: batch.r_of(b),
            valid: batch.valid_row(b),
        }
    }
}

/// Per-frame representation F plus optional post-softmax attention captures.
pub struct ForwardOutput {
    /// [L, P*K*D]
    pub f: TensorId,
    pub frames: usize,
    pub token_rows: usize,
    /// [block][head], each a row-major PK x PK map averaged over valid frames.
    pub spatial_attention: Option<Vec<Vec<Vec<f64>>>>,
    /// [block][head], each a row-major L x L map.
    pub temporal_attention: Option<Vec<Vec<Vec<f64>>>>,
}

struct MhaWeights {
    heads: Vec<(TensorId, TensorId, TensorId)>,
    w_h: TensorId,
    ln_gamma: TensorId,
    ln_beta: TensorId,
    head_dim: usize,
}

fn mha_weights(params: &TapeParams, block: usize, module: &str, heads: usize, head_dim: usize) -> MhaWeights {
    let prefix = format!("block{block}.{module}");
    MhaWeights {
        heads: (0..heads)
            .map(|i| {
                (
                    params.id(&format!("{prefix}.h{i}.wq")),
                    params.id(&format!("{prefix}.h{i}.wk")),
                    params.id(&format!("{prefix}.h{i}.wv")),
                )
            })
            .collect(),
        w_h: params.id(&format!("{prefix}.w_h")),
        ln_gamma: params.id(&format!("{prefix}.ln.gamma")),
        ln_beta: params.id(&format!("{prefix}.ln.beta")),
        head_dim,
    }
}

/// Pre-LN multi-head self-attention with a residual carrying `x` itself:
/// out = MHA(LN(x)) + x. `mask` selects valid keys (per row or shared).
/// Shared by the spatial and temporal modules.
fn mha(
    tape: &mut Tape,
    x: TensorId,
    w: &MhaWeights,
    ln_eps: f64,
    mask: Option<&[bool]>,
    mut capture: Option<&mut Vec<Vec<f64>>>,
) -> Result<TensorId, TensorError> {
    let h = tape.layer_norm(x, w.ln_gamma, w.ln_beta, ln_eps)?;
    let scale = 1.0 / (w.head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(w.heads.len());
    for &(wq, wk, wv) in &w.heads {
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let kt = tape.transpose(k)?;
        let raw = tape.matmul(q, kt)?;
        let logits = tape.scale(raw, scale)?;
        let attn = tape.softmax_masked(logits, mask)?;
        if let Some(maps) = capture.as_deref_mut() {
            maps.push(tape.data(attn).to_vec());
        }
        outputs.push(tape.matmul(attn, v)?);
    }
    let cat = tape.concat_cols(&outputs)?;
    let proj = tape.matmul(cat, w.w_h)?;
    tape.add(proj, x)
}

/// Attention over the P*K joint tokens of a single frame. With
/// `p2p_mask` set, cross-person logits are masked out.
pub fn spatial_mha(
    tape: &mut Tape,
    tokens: TensorId,
    params: &TapeParams,
    cfg: &ModelConfig,
    block: usize,
    capture: Option<&mut Vec<Vec<f64>>>,
) -> Result<TensorId, TensorError> {
    let w = mha_weights(params, block, "spatial", cfg.spatial_heads, cfg.spatial_head_dim());
    let mask = if cfg.p2p_attention {
        None
    } else {
        Some(person_block_mask(cfg))
    };
    mha(tape, tokens, &w, cfg.ln_eps, mask.as_deref(), capture)
}

/// Key validity mask restricting spatial attention to within-person blocks.
fn person_block_mask(cfg: &ModelConfig) -> Vec<bool> {
    let rows = cfg.token_rows();
    let k = cfg.joints;
    let mut mask = vec![false; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            mask[i * rows + j] = i / k == j / k;
        }
    }
    mask
}

/// Runs the full model on one (possibly padded) sequence. PAD frames are
/// computed but masked out of temporal attention keys; nothing downstream
/// reads their outputs.
pub fn forward_sequence(
    tape: &mut Tape,
    params: &TapeParams,
    cfg: &ModelConfig,
    input: &SequenceInput,
    capture_attention: bool,
) -> Result<ForwardOutput, TensorError> {
    let l = input.valid.len();
    let (p_n, k_n, d) = (cfg.persons, cfg.joints, cfg.embed_dim);
    let rows = cfg.token_rows();
    let width = cfg.token_width();
    if l == 0 || l > cfg.t_max {
        return Err(TensorError::Shape(format!(
            "sequence length {l} outside [1, t_max={}]",
            cfg.t_max
        )));
    }
    if input.g.len() != l * p_n * 3 || input.r.len() != l * p_n * (k_n - 1) * 3 {
        return Err(TensorError::Shape(
            "input slices do not match model config".into(),
        ));
    }
    if !input.valid.iter().any(|&v| v) {
        return Err(TensorError::Mask("all frames padded".into()));
    }

    // token embeddings for the whole sequence at once
    let g_in = tape.leaf(input.g.to_vec(), vec![l * p_n, 3], false)?;
    let r_in = tape.leaf(input.r.to_vec(), vec![l * p_n * (k_n - 1), 3], false)?;
    let ge = tape.matmul(g_in, params.id("embed.w_g"))?;
    let ge = tape.add(ge, params.id("embed.b_g"))?;
    let re = tape.matmul(r_in, params.id("embed.w_r"))?;
    let re = tape.add(re, params.id("embed.b_r"))?;

    // per-frame token matrices in row order [g_p, r_p^1 .. r_p^{K-1}] per person
    let m_id = params.id("pos.m");
    let mut frame_rows = Vec::with_capacity(l);
    for t in 0..l {
        let mut parts = Vec::with_capacity(2 * p_n);
        for p in 0..p_n {
            parts.push(tape.slice_rows(ge, t * p_n + p, 1)?);
            parts.push(tape.slice_rows(re, (t * p_n + p) * (k_n - 1), k_n - 1)?);
        }
        let tokens = tape.concat_rows(&parts)?;
        frame_rows.push(tape.reshape(tokens, &[1, width])?);
    }
    let mut z = tape.concat_rows(&frame_rows)?; // [L, width]

    let tight = cfg.positional_mode == PositionalMode::TrainableTight;
    let m_bar = tape.slice_rows(m_id, 0, l)?; // [L, width]
    if !tight {
        // positional information enters once, before the first block
        z = tape.add(z, m_bar)?;
    }

    let mut spatial_maps = Vec::new();
    let mut temporal_maps = Vec::new();
    let valid_count = input.valid.iter().filter(|&&v| v).count() as f64;

    for n in 0..cfg.blocks {
        // spatial attention, independently per frame
        let mut block_spatial: Vec<Vec<f64>> = if capture_attention {
            vec![vec![0.0; rows * rows]; cfg.spatial_heads]
        } else {
            Vec::new()
        };
        let mut s_rows = Vec::with_capacity(l);
        for t in 0..l {
            let frame_flat = tape.slice_rows(z, t, 1)?;
            let mut tokens = tape.reshape(frame_flat, &[rows, d])?;
            if tight {
                let m_t = tape.slice_rows(m_id, t, 1)?;
                let m_t = tape.reshape(m_t, &[rows, d])?;
                tokens = tape.add(tokens, m_t)?;
            }
            let mut frame_maps = capture_attention.then(Vec::new);
            let s_t = spatial_mha(tape, tokens, params, cfg, n, frame_maps.as_mut())?;
            if let Some(maps) = frame_maps {
                if input.valid[t] {
                    for (acc, map) in block_spatial.iter_mut().zip(maps) {
                        for (a, v) in acc.iter_mut().zip(map) {
                            *a += v / valid_count;
                        }
                    }
                }
            }
            s_rows.push(tape.reshape(s_t, &[1, width])?);
        }
        if capture_attention {
            spatial_maps.push(block_spatial);
        }
        let s_mat = tape.concat_rows(&s_rows)?;

        // temporal attention over frames, PAD keys masked out
        let x = if tight { tape.add(s_mat, m_bar)? } else { s_mat };
        let w = mha_weights(params, n, "temporal", cfg.temporal_heads, cfg.temporal_head_dim());
        let mut block_temporal = capture_attention.then(Vec::new);
        let z_bar = mha(tape, x, &w, cfg.ln_eps, Some(input.valid), block_temporal.as_mut())?;
        if let Some(maps) = block_temporal {
            temporal_maps.push(maps);
        }

        // position-wise MLP with residual
        let gamma = params.id(&format!("block{n}.mlp.ln.gamma"));
        let beta = params.id(&format!("block{n}.mlp.ln.beta"));
        let h = tape.layer_norm(z_bar, gamma, beta, cfg.ln_eps)?;
        let h = tape.matmul(h, params.id(&format!("block{n}.mlp.w1")))?;
        let h = tape.add(h, params.id(&format!("block{n}.mlp.b1")))?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, params.id(&format!("block{n}.mlp.w2")))?;
        let h = tape.add(h, params.id(&format!("block{n}.mlp.b2")))?;
        z = tape.add(h, z_bar)?;
    }

    // final 2-layer representation head
    let h = tape.matmul(z, params.id("final.w1"))?;
    let h = tape.add(h, params.id("final.b1"))?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, params.id("final.w2"))?;
    let f = tape.add(h, params.id("final.b2"))?;

    Ok(ForwardOutput {
        f,
        frames: l,
        token_rows: rows,
        spatial_attention: capture_attention.then_some(spatial_maps),
        temporal_attention: capture_attention.then_some(temporal_maps),
    })
}

/// Mean of F over valid frames only: the sequence-level representation.
pub fn pooled_representation(
    tape: &mut Tape,
    f: TensorId,
    valid: &[bool],
) -> Result<TensorId, TensorError> {
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(TensorError::Mask("no valid frames to pool".into()));
    }
    let weights: Vec<f64> = valid
        .iter()
        .map(|&v| if v { 1.0 / count as f64 } else { 0.0 })
        .collect();
    tape.mean_rows_weighted(f, &weights)
}
