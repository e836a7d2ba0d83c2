//! The global/local motion transformer: token embeddings, trainable
//! spatial-temporal positional tensor, N blocks of spatial + temporal
//! multi-head attention with an MLP, and the final representation head.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    forward_sequence, pooled_representation, spatial_mha, ForwardOutput, SequenceInput,
};

use crate::tensor::{Tape, TensorId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    /// Trainable M re-injected into every block.
    TrainableTight,
    /// Trainable M added once before the first block.
    TrainableOnce,
    /// Fixed sinusoidal table added once before the first block.
    FixedSinusoidal,
}

impl std::str::FromStr for PositionalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trainable_tight" => Ok(PositionalMode::TrainableTight),
            "trainable_once" => Ok(PositionalMode::TrainableOnce),
            "fixed_sinusoidal" => Ok(PositionalMode::FixedSinusoidal),
            other => Err(format!("unknown positional mode: {other}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Joints per person including the center joint.
    pub joints: usize,
    pub persons: usize,
    /// Embedding dim per token.
    pub embed_dim: usize,
    /// Number of transformer blocks.
    pub blocks: usize,
    pub spatial_heads: usize,
    pub temporal_heads: usize,
    pub t_max: usize,
    pub ln_eps: f64,
    pub positional_mode: PositionalMode,
    pub p2p_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 25,
            persons: 2,
            embed_dim: 6,
            blocks: 4,
            spatial_heads: 2,
            temporal_heads: 8,
            t_max: 300,
            ln_eps: 1e-5,
            positional_mode: PositionalMode::TrainableTight,
            p2p_attention: true,
        }
    }
}

impl ModelConfig {
    /// Token rows per frame: one global + K-1 local tokens per person.
    pub fn token_rows(&self) -> usize {
        self.persons * self.joints
    }

    /// Width of a vectorized frame: P*K*D.
    pub fn token_width(&self) -> usize {
        self.token_rows() * self.embed_dim
    }

    /// Per-head projection dim in the spatial module.
    pub fn spatial_head_dim(&self) -> usize {
        (self.embed_dim / self.spatial_heads).max(1)
    }

    /// Per-head projection dim in the temporal module.
    pub fn temporal_head_dim(&self) -> usize {
        (self.token_width() / self.temporal_heads).max(1)
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.token_width()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.joints < 2 || self.persons == 0 || self.embed_dim == 0 || self.blocks == 0 {
            return Err(ModelError::Config(
                "joints >= 2, persons >= 1, embed_dim >= 1, blocks >= 1 required".into(),
            ));
        }
        if self.spatial_heads == 0 || self.temporal_heads == 0 {
            return Err(ModelError::Config("head counts must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(ModelError::Config("t_max must be positive".into()));
        }
        if self.ln_eps <= 0.0 {
            return Err(ModelError::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Ordered, named collection of all trainable weights. Iteration order is
/// insertion order and is part of the determinism contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, data: Vec<f64>, shape: Vec<usize>, trainable: bool) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        assert_eq!(data.len(), shape.iter().product::<usize>());
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            data,
            shape,
            trainable,
        });
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.params[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        &mut self.params[self.index[name]]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Order-sensitive bitwise checksum, used by freeze contracts.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for b in p.name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for v in &p.data {
                h = (h ^ v.to_bits()).wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Registers every parameter as a leaf on the tape; returns name -> id.
    pub fn register(&self, tape: &mut Tape) -> TapeParams {
        let mut ids = HashMap::new();
        for p in &self.params {
            let id = tape
                .leaf(p.data.clone(), p.shape.clone(), p.trainable)
                .expect("param shapes are validated at construction");
            ids.insert(p.name.clone(), id);
        }
        TapeParams { ids }
    }
}

/// Parameter handles on a live tape.
pub struct TapeParams {
    ids: HashMap<String, TensorId>,
}

impl TapeParams {
    pub fn id(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Standard alternating sine/cosine table over the flattened (frame, joint)
/// position index, emitted as [T_max, PK*D].
fn sinusoidal_table(cfg: &ModelConfig) -> Vec<f64> {
    let (t_max, rows, d) = (cfg.t_max, cfg.token_rows(), cfg.embed_dim);
    let mut m = vec![0.0; t_max * rows * d];
    for t in 0..t_max {
        for j in 0..rows {
            let pos = (t * rows + j) as f64;
            for i in 0..d {
                let angle = pos / 10000f64.powf(2.0 * (i / 2) as f64 / d as f64);
                m[(t * rows + j) * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
    }
    m
}

/// Initializes all backbone parameters: embeddings, positional tensor,
/// per-block attention/LN/MLP weights, and the final 2-layer head.
/// Weights are uniform +-1/sqrt(fan_in); biases and trainable M start at 0.
pub fn init_model_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let width = cfg.token_width();
    let hidden = cfg.mlp_hidden();
    let mut ps = ParamSet::new();

    ps.add("embed.w_g", uniform_init(rng, 3, d), vec![3, d], true);
    ps.add("embed.b_g", vec![0.0; d], vec![d], true);
    ps.add("embed.w_r", uniform_init(rng, 3, d), vec![3, d], true);
    ps.add("embed.b_r", vec![0.0; d], vec![d], true);

    match cfg.positional_mode {
        PositionalMode::FixedSinusoidal => {
            ps.add("pos.m", sinusoidal_table(cfg), vec![cfg.t_max, width], false)
        }
        _ => ps.add("pos.m", vec![0.0; cfg.t_max * width], vec![cfg.t_max, width], true),
    }

    for n in 0..cfg.blocks {
        let b = format!("block{n}");
        let ds = cfg.spatial_head_dim();
        ps.add(&format!("{b}.spatial.ln.gamma"), vec![1.0; d], vec![d], true);
        ps.add(&format!("{b}.spatial.ln.beta"), vec![0.0; d], vec![d], true);
        for i in 0..cfg.spatial_heads {
            for w in ["wq", "wk", "wv"] {
                ps.add(
                    &format!("{b}.spatial.h{i}.{w}"),
                    uniform_init(rng, d, ds),
                    vec![d, ds],
                    true,
                );
            }
        }
        ps.add(
            &format!("{b}.spatial.w_h"),
            uniform_init(rng, cfg.spatial_heads * ds, d),
            vec![cfg.spatial_heads * ds, d],
            true,
        );

        let dt = cfg.temporal_head_dim();
        ps.add(&format!("{b}.temporal.ln.gamma"), vec![1.0; width], vec![width], true);
        ps.add(&format!("{b}.temporal.ln.beta"), vec![0.0; width], vec![width], true);
        for i in 0..cfg.temporal_heads {
            for w in ["wq", "wk", "wv"] {
                ps.add(
                    &format!("{b}.temporal.h{i}.{w}"),
                    uniform_init(rng, width, dt),
                    vec![width, dt],
                    true,
                );
            }
        }
        ps.add(
            &format!("{b}.temporal.w_h"),
            uniform_init(rng, cfg.temporal_heads * dt, width),
            vec![cfg.temporal_heads * dt, width],
            true,
        );

        ps.add(&format!("{b}.mlp.ln.gamma"), vec![1.0; width], vec![width], true);
        ps.add(&format!("{b}.mlp.ln.beta"), vec![0.0; width], vec![width], true);
        ps.add(&format!("{b}.mlp.w1"), uniform_init(rng, width, hidden), vec![width, hidden], true);
        ps.add(&format!("{b}.mlp.b1"), vec![0.0; hidden], vec![hidden], true);
        ps.add(&format!("{b}.mlp.w2"), uniform_init(rng, hidden, width), vec![hidden, width], true);
        ps.add(&format!("{b}.mlp.b2"), vec![0.0; width], vec![width], true);
    }

    ps.add("final.w1", uniform_init(rng, width, hidden), vec![width, hidden], true);
    ps.add("final.b1", vec![0.0; hidden], vec![hidden], true);
    ps.add("final.w2", uniform_init(rng, hidden, width), vec![hidden, width], true);
    ps.add("final.b2", vec![0.0; width], vec![width], true);

    Ok(ps)
}

/// Closed-form backbone parameter count for a config; kept in sync with
/// `init_model_params` and checked by tests.
pub fn backbone_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim;
    let width = cfg.token_width();
    let hidden = cfg.mlp_hidden();
    let ds = cfg.spatial_head_dim();
    let dt = cfg.temporal_head_dim();
    let embed = 2 * (3 * d + d);
    let pos = cfg.t_max * width;
    let spatial = 2 * d + cfg.spatial_heads * 3 * d * ds + cfg.spatial_heads * ds * d;
    let temporal = 2 * width + cfg.temporal_heads * 3 * width * dt + cfg.temporal_heads * dt * width;
    let mlp = 2 * width + width * hidden + hidden + hidden * width + width;
    let final_head = width * hidden + hidden + hidden * width + width;
    embed + pos + cfg.blocks * (spatial + temporal + mlp) + final_head
}
