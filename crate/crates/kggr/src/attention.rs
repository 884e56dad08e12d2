//! Semantically guided attention: fuses category word vectors with spatial
//! features via low-rank bilinear pooling, normalizes the resulting
//! coefficients over locations, and pools one feature vector per category.
//!
//! The pooled vector keeps the raw grid channel dimension, so it can
//! initialize a graph node whose hidden size equals the channel count.
//! Pooling the fused features instead is available behind
//! [`crate::harness::ModelConfig::pool_fused`].

use crate::diffcore::{Array, Element, Tape, ValueId};
use crate::error::{Error, Result};
use crate::vocab_graph::SemanticEmbeddingTable;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// W×H spatial grid of N-channel features, stored location-major as a
/// (W·H)×N row matrix. Location (w, h) is row `w·H + h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<F: Element> {
    width: usize,
    height: usize,
    channels: usize,
    rows: Array<F>,
}

impl<F: Element> FeatureGrid<F> {
    pub fn from_rows(width: usize, height: usize, rows: Array<F>) -> Self {
        assert!(width >= 1 && height >= 1, "grid extents must be positive");
        let (l, n) = (rows.shape()[0], rows.shape()[1]);
        assert_eq!(l, width * height, "row count must equal W·H");
        assert!(n >= 1, "channel count must be positive");
        FeatureGrid {
            width,
            height,
            channels: n,
            rows,
        }
    }

    /// Nested W×H×N values, as parsed from dataset files.
    pub fn from_nested(values: &[Vec<Vec<f64>>]) -> Result<Self> {
        let w = values.len();
        let h = values.first().map_or(0, |c| c.len());
        let n = values
            .first()
            .and_then(|c| c.first())
            .map_or(0, |v| v.len());
        if w == 0 || h == 0 || n == 0 {
            return Err(Error::Dataset("empty feature grid".to_string()));
        }
        let mut data = Vec::with_capacity(w * h * n);
        for col in values {
            if col.len() != h {
                return Err(Error::Dataset("ragged feature grid".to_string()));
            }
            for cell in col {
                if cell.len() != n {
                    return Err(Error::Dataset("ragged feature grid".to_string()));
                }
                data.extend(cell.iter().map(|&v| F::from_f64(v)));
            }
        }
        Ok(FeatureGrid {
            width: w,
            height: h,
            channels: n,
            rows: Array::from_vec(vec![w * h, n], data),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn locations(&self) -> usize {
        self.width * self.height
    }

    pub fn rows(&self) -> &Array<F> {
        &self.rows
    }

    pub fn location(&self, w: usize, h: usize) -> &[F] {
        self.rows.row(w * self.height + h)
    }

    pub fn to_f64(&self) -> FeatureGrid<f64> {
        FeatureGrid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            rows: self.rows.to_f64(),
        }
    }
}

/// Learnable attention parameters: the bilinear projections U, V, P with
/// bias b, and the scores head (w_a, b_a) mapping fused features to one
/// coefficient per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<F: Element> {
    pub u: Array<F>,   // N×d1
    pub v: Array<F>,   // d_s×d1
    pub p: Array<F>,   // d1×d2
    pub b: Array<F>,   // d2
    pub w_a: Array<F>, // d2
    pub b_a: Array<F>, // scalar
}

pub(crate) fn uniform_init<F: Element, R: Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    fan_in: usize,
) -> Array<F> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.gen_range(-scale..scale)))
        .collect();
    Array::from_vec(shape, data)
}

impl<F: Element> AttentionParams<F> {
    /// Zero-mean uniform init, scale 1/√fan-in for matrices, zero biases.
    pub fn init<R: Rng>(
        rng: &mut R,
        channels: usize,
        semantic_dim: usize,
        joint_dim: usize,
        fused_dim: usize,
    ) -> Self {
        AttentionParams {
            u: uniform_init(rng, vec![channels, joint_dim], channels),
            v: uniform_init(rng, vec![semantic_dim, joint_dim], semantic_dim),
            p: uniform_init(rng, vec![joint_dim, fused_dim], joint_dim),
            b: Array::zeros(vec![fused_dim]),
            w_a: uniform_init(rng, vec![fused_dim], fused_dim),
            b_a: Array::zeros(vec![]),
        }
    }

    pub fn to_f64(&self) -> AttentionParams<f64> {
        AttentionParams {
            u: self.u.to_f64(),
            v: self.v.to_f64(),
            p: self.p.to_f64(),
            b: self.b.to_f64(),
            w_a: self.w_a.to_f64(),
            b_a: self.b_a.to_f64(),
        }
    }
}

/// Tape handles for one bound set of attention parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub u: ValueId,
    pub v: ValueId,
    pub p: ValueId,
    pub b: ValueId,
    pub w_a: ValueId,
    pub b_a: ValueId,
}

pub fn bind_attention<F: Element>(
    tape: &mut Tape<F>,
    params: &AttentionParams<F>,
) -> AttentionIds {
    AttentionIds {
        u: tape.param(params.u.clone()),
        v: tape.param(params.v.clone()),
        p: tape.param(params.p.clone()),
        b: tape.param(params.b.clone()),
        w_a: tape.param(params.w_a.clone()),
        b_a: tape.param(params.b_a.clone()),
    }
}

/// Fused features for every location at once:
/// `tanh((rows·U) ⊙ (x_c·V broadcast over rows))·P + b`, shape L×d2.
fn fused_rows_on_tape<F: Element>(
    tape: &mut Tape<F>,
    ids: &AttentionIds,
    grid_rows: ValueId,
    x_row: ValueId,
) -> Result<ValueId> {
    let locations = tape.value(grid_rows).shape()[0];
    let fused_dim = tape.value(ids.b).len();
    let g1 = tape.matmul(grid_rows, ids.u)?; // L×d1
    let vx = tape.matmul(x_row, ids.v)?; // 1×d1
    let ones = tape.constant(Array::from_vec(
        vec![locations, 1],
        vec![F::one(); locations],
    ));
    let vx_rep = tape.matmul(ones, vx)?; // L×d1
    let joint = tape.mul(g1, vx_rep)?;
    let joint = tape.tanh(joint);
    let proj = tape.matmul(joint, ids.p)?; // L×d2
    let b_row = tape.reshape(ids.b, vec![1, fused_dim])?;
    let b_rep = tape.matmul(ones, b_row)?;
    tape.add(proj, b_rep)
}

/// Normalized attention weights for one category, shape [L].
pub fn attention_map_on_tape<F: Element>(
    tape: &mut Tape<F>,
    ids: &AttentionIds,
    grid_rows: ValueId,
    x_row: ValueId,
) -> Result<ValueId> {
    let fused = fused_rows_on_tape(tape, ids, grid_rows, x_row)?;
    let fused_dim = tape.value(ids.w_a).len();
    let locations = tape.value(grid_rows).shape()[0];
    let head = tape.reshape(ids.w_a, vec![fused_dim, 1])?;
    let scores = tape.matmul(fused, head)?; // L×1
    let scores = tape.add(scores, ids.b_a)?;
    let flat = tape.reshape(scores, vec![locations])?;
    tape.softmax(flat, 0)
}

/// Per-category pooled features `f_c`, stacked into a C×N matrix.
/// When `pool_fused` is set the fused L×d2 features are pooled instead,
/// giving a C×d2 matrix.
pub fn decouple_on_tape<F: Element>(
    tape: &mut Tape<F>,
    ids: &AttentionIds,
    grid_rows: ValueId,
    embedding_rows: &[ValueId],
    pool_fused: bool,
) -> Result<ValueId> {
    let mut pooled = Vec::with_capacity(embedding_rows.len());
    for &x_row in embedding_rows {
        let weights = attention_map_on_tape(tape, ids, grid_rows, x_row)?;
        let source = if pool_fused {
            fused_rows_on_tape(tape, ids, grid_rows, x_row)?
        } else {
            grid_rows
        };
        let f_c = tape.weighted_sum(weights, source)?;
        let n = tape.value(f_c).len();
        pooled.push(tape.reshape(f_c, vec![1, n])?);
    }
    tape.concat(&pooled, 0)
}

/// Bind a table's category vectors as tape constants, one 1×d_s row each.
pub fn bind_embedding_rows<F: Element>(
    tape: &mut Tape<F>,
    table: &SemanticEmbeddingTable,
) -> Vec<ValueId> {
    (0..table.len())
        .map(|c| {
            let row: Vec<F> = table.vector(c).iter().map(|&v| F::from_f64(v)).collect();
            tape.constant(Array::from_vec(vec![1, table.dim()], row))
        })
        .collect()
}

// ── Standalone (eager) forms of the per-category operations ─────────────

/// `Pᵀ(tanh((Uᵀ f_wh) ⊙ (Vᵀ x_c))) + b` for one location.
pub fn fuse_bilinear<F: Element>(
    f_wh: &Array<F>,
    x_c: &Array<F>,
    params: &AttentionParams<F>,
) -> Result<Array<F>> {
    let mut tape = Tape::new();
    let ids = bind_attention(&mut tape, params);
    let n = f_wh.len();
    let ds = x_c.len();
    let f_row = tape.constant(Array::from_vec(vec![1, n], f_wh.data().to_vec()));
    let x_row = tape.constant(Array::from_vec(vec![1, ds], x_c.data().to_vec()));
    let fused = fused_rows_on_tape(&mut tape, &ids, f_row, x_row)?;
    let d2 = tape.value(fused).len();
    let flat = tape.reshape(fused, vec![d2])?;
    Ok(tape.value(flat).clone())
}

/// Normalized attention weights over all W·H locations for one category.
pub fn attention_map<F: Element>(
    grid: &FeatureGrid<F>,
    x_c: &Array<F>,
    params: &AttentionParams<F>,
) -> Result<Array<F>> {
    let mut tape = Tape::new();
    let ids = bind_attention(&mut tape, params);
    let rows = tape.constant(grid.rows().clone());
    let x_row = tape.constant(Array::from_vec(vec![1, x_c.len()], x_c.data().to_vec()));
    let weights = attention_map_on_tape(&mut tape, &ids, rows, x_row)?;
    Ok(tape.value(weights).clone())
}

/// Weighted average pooling of the raw grid features under a normalized map.
pub fn pool_features<F: Element>(grid: &FeatureGrid<F>, map: &Array<F>) -> Result<Array<F>> {
    let mut tape = Tape::new();
    let rows = tape.constant(grid.rows().clone());
    let weights = tape.constant(map.clone());
    let pooled = tape.weighted_sum(weights, rows)?;
    Ok(tape.value(pooled).clone())
}

/// All C category-related feature vectors for one grid.
pub fn decouple<F: Element>(
    grid: &FeatureGrid<F>,
    table: &SemanticEmbeddingTable,
    params: &AttentionParams<F>,
) -> Result<Vec<Array<F>>> {
    let mut tape = Tape::new();
    let ids = bind_attention(&mut tape, params);
    let rows = tape.constant(grid.rows().clone());
    let embeds = bind_embedding_rows(&mut tape, table);
    let stacked = decouple_on_tape(&mut tape, &ids, rows, &embeds, false)?;
    let value = tape.value(stacked);
    Ok((0..table.len())
        .map(|c| Array::vector(value.row(c).to_vec()))
        .collect())
}
