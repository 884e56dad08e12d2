//! Full-model assembly: parameter groups, tape binding, the per-sample
//! forward pass, and the batch loss.
//!
//! Every parameter lives in a named group with a fixed order, so the
//! optimizer state, checkpoints, freeze checks, and gradient verification
//! all line up on the same flat list.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{decouple_on_tape, AttentionIds, AttentionParams};
use crate::diffcore::{Array, Element, GradCheckReport, Tape, ValueId};
use crate::error::{Error, Result};
use crate::harness::backbone::{backbone_on_tape, image_patches, BackboneIds, BackboneParams};
use crate::harness::config::{LossKind, ModelConfig, ScoreSource};
use crate::harness::dataset::{MultiLabelSample, Payload};
use crate::objective::{
    bce_on_tape, euclidean_on_tape, probabilities_on_tape, score_on_tape, weight_penalty_on_tape,
};
use crate::propagation::{
    bind_adjacency, graph_forward_on_tape, ClassifierWeights, GateIds, GateParams, OutputNetIds,
    OutputNetParams,
};
use crate::vocab_graph::{CooccurrenceGraph, SemanticEmbeddingTable};

/// The trainable parameter groups; stage 2 freezes a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Attention,
    FeatureGates,
    FeatureOut,
    SemanticGates,
    SemanticOut,
    Classifiers,
    Backbone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<F: Element> {
    pub attention: AttentionParams<F>,
    pub feature_gates: GateParams<F>,
    pub feature_out: OutputNetParams<F>,
    pub semantic_gates: GateParams<F>,
    pub semantic_out: OutputNetParams<F>,
    pub classifiers: ClassifierWeights<F>,
    pub backbone: Option<BackboneParams<F>>,
}

impl<F: Element> ModelParams<F> {
    /// Draw all groups from one RNG stream in group order. `backbone_patch`
    /// adds the image stub when samples carry raw images.
    pub fn init<R: Rng>(rng: &mut R, config: &ModelConfig, backbone_patch: Option<usize>) -> Self {
        let d = config.hidden_dim;
        ModelParams {
            attention: AttentionParams::init(
                rng,
                config.channels,
                config.semantic_dim,
                config.joint_dim,
                config.fused_dim,
            ),
            feature_gates: GateParams::init(rng, d),
            feature_out: OutputNetParams::init(rng, d),
            semantic_gates: GateParams::init(rng, d),
            semantic_out: OutputNetParams::init(rng, d),
            classifiers: ClassifierWeights::init(rng, config.categories, d),
            backbone: backbone_patch.map(|patch| BackboneParams::init(rng, patch, config.channels)),
        }
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            attention: self.attention.to_f64(),
            feature_gates: self.feature_gates.to_f64(),
            feature_out: self.feature_out.to_f64(),
            semantic_gates: self.semantic_gates.to_f64(),
            semantic_out: self.semantic_out.to_f64(),
            classifiers: self.classifiers.to_f64(),
            backbone: self.backbone.as_ref().map(|b| b.to_f64()),
        }
    }

    /// Every array with its group and name, in the canonical flat order.
    pub fn named_arrays(&self) -> Vec<(ParamGroup, &'static str, &Array<F>)> {
        use ParamGroup::*;
        let mut v = vec![
            (Attention, "attention.u", &self.attention.u),
            (Attention, "attention.v", &self.attention.v),
            (Attention, "attention.p", &self.attention.p),
            (Attention, "attention.b", &self.attention.b),
            (Attention, "attention.w_a", &self.attention.w_a),
            (Attention, "attention.b_a", &self.attention.b_a),
            (FeatureGates, "feature_gates.w_z", &self.feature_gates.w_z),
            (FeatureGates, "feature_gates.u_z", &self.feature_gates.u_z),
            (FeatureGates, "feature_gates.w_r", &self.feature_gates.w_r),
            (FeatureGates, "feature_gates.u_r", &self.feature_gates.u_r),
            (FeatureGates, "feature_gates.w", &self.feature_gates.w),
            (FeatureGates, "feature_gates.u", &self.feature_gates.u),
            (FeatureOut, "feature_out.weight", &self.feature_out.weight),
            (FeatureOut, "feature_out.bias", &self.feature_out.bias),
            (SemanticGates, "semantic_gates.w_z", &self.semantic_gates.w_z),
            (SemanticGates, "semantic_gates.u_z", &self.semantic_gates.u_z),
            (SemanticGates, "semantic_gates.w_r", &self.semantic_gates.w_r),
            (SemanticGates, "semantic_gates.u_r", &self.semantic_gates.u_r),
            (SemanticGates, "semantic_gates.w", &self.semantic_gates.w),
            (SemanticGates, "semantic_gates.u", &self.semantic_gates.u),
            (SemanticOut, "semantic_out.weight", &self.semantic_out.weight),
            (SemanticOut, "semantic_out.bias", &self.semantic_out.bias),
            (Classifiers, "classifiers.init", &self.classifiers.init),
        ];
        if let Some(bb) = &self.backbone {
            v.push((Backbone, "backbone.w1", &bb.w1));
            v.push((Backbone, "backbone.b1", &bb.b1));
            v.push((Backbone, "backbone.w2", &bb.w2));
            v.push((Backbone, "backbone.b2", &bb.b2));
        }
        v
    }

    /// Mutable view in the same order as [`ModelParams::named_arrays`].
    pub fn named_arrays_mut(&mut self) -> Vec<(ParamGroup, &'static str, &mut Array<F>)> {
        use ParamGroup::*;
        let ModelParams {
            attention,
            feature_gates,
            feature_out,
            semantic_gates,
            semantic_out,
            classifiers,
            backbone,
        } = self;
        let mut v = vec![
            (Attention, "attention.u", &mut attention.u),
            (Attention, "attention.v", &mut attention.v),
            (Attention, "attention.p", &mut attention.p),
            (Attention, "attention.b", &mut attention.b),
            (Attention, "attention.w_a", &mut attention.w_a),
            (Attention, "attention.b_a", &mut attention.b_a),
            (FeatureGates, "feature_gates.w_z", &mut feature_gates.w_z),
            (FeatureGates, "feature_gates.u_z", &mut feature_gates.u_z),
            (FeatureGates, "feature_gates.w_r", &mut feature_gates.w_r),
            (FeatureGates, "feature_gates.u_r", &mut feature_gates.u_r),
            (FeatureGates, "feature_gates.w", &mut feature_gates.w),
            (FeatureGates, "feature_gates.u", &mut feature_gates.u),
            (FeatureOut, "feature_out.weight", &mut feature_out.weight),
            (FeatureOut, "feature_out.bias", &mut feature_out.bias),
            (SemanticGates, "semantic_gates.w_z", &mut semantic_gates.w_z),
            (SemanticGates, "semantic_gates.u_z", &mut semantic_gates.u_z),
            (SemanticGates, "semantic_gates.w_r", &mut semantic_gates.w_r),
            (SemanticGates, "semantic_gates.u_r", &mut semantic_gates.u_r),
            (SemanticGates, "semantic_gates.w", &mut semantic_gates.w),
            (SemanticGates, "semantic_gates.u", &mut semantic_gates.u),
            (SemanticOut, "semantic_out.weight", &mut semantic_out.weight),
            (SemanticOut, "semantic_out.bias", &mut semantic_out.bias),
            (Classifiers, "classifiers.init", &mut classifiers.init),
        ];
        if let Some(bb) = backbone {
            v.push((Backbone, "backbone.w1", &mut bb.w1));
            v.push((Backbone, "backbone.b1", &mut bb.b1));
            v.push((Backbone, "backbone.w2", &mut bb.w2));
            v.push((Backbone, "backbone.b2", &mut bb.b2));
        }
        v
    }
}

/// Tape handles for one bound model. `trainable` lists the ids registered
/// as tape parameters, in flat order.
#[derive(Debug, Clone)]
pub struct ModelBinding {
    pub attention: AttentionIds,
    pub feature_gates: GateIds,
    pub feature_out: OutputNetIds,
    pub semantic_gates: GateIds,
    pub semantic_out: OutputNetIds,
    pub classifiers: ValueId,
    pub backbone: Option<BackboneIds>,
    pub trainable: Vec<ValueId>,
}

fn assemble_binding(ids: &[ValueId], has_backbone: bool, trainable: Vec<ValueId>) -> ModelBinding {
    assert_eq!(ids.len(), if has_backbone { 27 } else { 23 });
    ModelBinding {
        attention: AttentionIds {
            u: ids[0],
            v: ids[1],
            p: ids[2],
            b: ids[3],
            w_a: ids[4],
            b_a: ids[5],
        },
        feature_gates: GateIds {
            w_z: ids[6],
            u_z: ids[7],
            w_r: ids[8],
            u_r: ids[9],
            w: ids[10],
            u: ids[11],
        },
        feature_out: OutputNetIds {
            weight: ids[12],
            bias: ids[13],
        },
        semantic_gates: GateIds {
            w_z: ids[14],
            u_z: ids[15],
            w_r: ids[16],
            u_r: ids[17],
            w: ids[18],
            u: ids[19],
        },
        semantic_out: OutputNetIds {
            weight: ids[20],
            bias: ids[21],
        },
        classifiers: ids[22],
        backbone: has_backbone.then(|| BackboneIds {
            w1: ids[23],
            b1: ids[24],
            w2: ids[25],
            b2: ids[26],
        }),
        trainable,
    }
}

/// Bind every group, registering groups selected by `trainable` as tape
/// parameters and the rest as constants (frozen).
pub fn bind_model<F: Element>(
    tape: &mut Tape<F>,
    params: &ModelParams<F>,
    trainable: &dyn Fn(ParamGroup) -> bool,
) -> ModelBinding {
    let named = params.named_arrays();
    let mut ids = Vec::with_capacity(named.len());
    let mut trainable_ids = Vec::new();
    for (group, _, arr) in &named {
        let id = if trainable(*group) {
            let id = tape.param((*arr).clone());
            trainable_ids.push(id);
            id
        } else {
            tape.constant((*arr).clone())
        };
        ids.push(id);
    }
    assemble_binding(&ids, params.backbone.is_some(), trainable_ids)
}

/// Rebuild a binding from an externally bound flat id list (gradient
/// verification binds the arrays itself, in the canonical order).
pub fn binding_from_flat_ids(ids: &[ValueId], has_backbone: bool) -> ModelBinding {
    assemble_binding(ids, has_backbone, ids.to_vec())
}

/// Per-tape nodes shared by every sample in a batch: the adjacency, the
/// category embedding rows, and the classifier rows actually used for
/// scoring (refined by semantic propagation unless disabled).
pub struct BatchContext {
    pub adj: ValueId,
    pub adj_t: ValueId,
    pub embed_rows: Vec<ValueId>,
    pub classifiers_used: ValueId,
}

pub fn prepare_context<F: Element>(
    tape: &mut Tape<F>,
    binding: &ModelBinding,
    config: &ModelConfig,
    graph: &CooccurrenceGraph,
    table: &SemanticEmbeddingTable,
) -> Result<BatchContext> {
    if graph.size() != config.categories || table.len() != config.categories {
        return Err(Error::Config(format!(
            "category count mismatch: config {}, graph {}, embeddings {}",
            config.categories,
            graph.size(),
            table.len()
        )));
    }
    let (adj, adj_t) = bind_adjacency(tape, graph);
    let embed_rows = crate::attention::bind_embedding_rows(tape, table);
    let classifiers_used = if config.disable_gsp {
        binding.classifiers
    } else {
        graph_forward_on_tape(
            tape,
            &binding.semantic_gates,
            &binding.semantic_out,
            adj,
            adj_t,
            binding.classifiers,
            config.semantic_steps,
        )?
    };
    Ok(BatchContext {
        adj,
        adj_t,
        embed_rows,
        classifiers_used,
    })
}

fn payload_grid_rows<F: Element>(
    tape: &mut Tape<F>,
    binding: &ModelBinding,
    config: &ModelConfig,
    payload: &Payload,
) -> Result<ValueId> {
    match payload {
        Payload::Grid(grid) => {
            if grid.channels() != config.channels
                || grid.locations() != config.grid_width * config.grid_height
            {
                return Err(Error::Config(format!(
                    "sample grid {}×{}×{} does not match configured {}×{}×{}",
                    grid.width(),
                    grid.height(),
                    grid.channels(),
                    config.grid_width,
                    config.grid_height,
                    config.channels
                )));
            }
            let rows = grid.rows().map(|v| F::from_f64(v.to_f64()));
            Ok(tape.constant(rows))
        }
        Payload::Image(image) => {
            let Some(bb) = &binding.backbone else {
                return Err(Error::Config(
                    "sample carries a raw image but the model has no backbone".to_string(),
                ));
            };
            let image_f: Array<F> = image.map(|v| F::from_f64(v.to_f64()));
            // The patch size is recoverable from the bound w1 row length.
            let row_len = tape.value(bb.w1).shape()[0];
            let patch = ((row_len / 3) as f64).sqrt().round() as usize;
            debug_assert_eq!(patch * patch * 3, row_len);
            let patches = image_patches(&image_f, patch)?;
            let p = tape.constant(patches);
            backbone_on_tape(tape, bb, p)
        }
    }
}

/// Scores for one sample: attention-pooled per-category features, optional
/// feature propagation, then row dot products against the classifier rows.
pub fn sample_scores_on_tape<F: Element>(
    tape: &mut Tape<F>,
    binding: &ModelBinding,
    config: &ModelConfig,
    ctx: &BatchContext,
    payload: &Payload,
) -> Result<ValueId> {
    let grid_rows = payload_grid_rows(tape, binding, config, payload)?;
    let c = config.categories;

    let node_feats = if config.disable_sga {
        // Unattended spatial mean, identical for every category node.
        let locations = tape.value(grid_rows).shape()[0];
        let uniform = tape.constant(Array::from_vec(
            vec![locations],
            vec![F::from_f64(1.0 / locations as f64); locations],
        ));
        let mean = tape.weighted_sum(uniform, grid_rows)?;
        let n = tape.value(mean).len();
        let mean_row = tape.reshape(mean, vec![1, n])?;
        let ones_c = tape.constant(Array::from_vec(vec![c, 1], vec![F::one(); c]));
        tape.matmul(ones_c, mean_row)?
    } else {
        decouple_on_tape(
            tape,
            &binding.attention,
            grid_rows,
            &ctx.embed_rows,
            config.pool_fused,
        )?
    };

    let skip_feature_propagation = config.disable_gfp
        || config.disable_kefp
        || config.score_source == ScoreSource::Raw;
    let features = if skip_feature_propagation {
        node_feats
    } else {
        graph_forward_on_tape(
            tape,
            &binding.feature_gates,
            &binding.feature_out,
            ctx.adj,
            ctx.adj_t,
            node_feats,
            config.feature_steps,
        )?
    };

    score_on_tape(tape, features, ctx.classifiers_used)
}

/// Mean per-sample loss over a batch, with the optional classifier-weight
/// penalty used in the second training stage.
pub fn batch_loss_on_tape<F: Element>(
    tape: &mut Tape<F>,
    binding: &ModelBinding,
    config: &ModelConfig,
    ctx: &BatchContext,
    samples: &[&MultiLabelSample],
    stage2_penalty: bool,
) -> Result<ValueId> {
    assert!(!samples.is_empty(), "empty batch");
    let mut total: Option<ValueId> = None;
    for sample in samples {
        if sample.labels.len() != config.categories {
            return Err(Error::Config(format!(
                "sample '{}' has {} labels, config expects {}",
                sample.id,
                sample.labels.len(),
                config.categories
            )));
        }
        let scores = sample_scores_on_tape(tape, binding, config, ctx, &sample.payload)?;
        let probs = probabilities_on_tape(tape, scores);
        let y: Vec<F> = sample
            .labels
            .iter()
            .map(|&on| if on { F::one() } else { F::zero() })
            .collect();
        let labels = tape.constant(Array::vector(y));
        let term = match config.loss {
            LossKind::CrossEntropy => bce_on_tape(tape, probs, labels)?,
            LossKind::Euclidean => euclidean_on_tape(tape, probs, labels)?,
        };
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let mut loss = tape.scale(total.expect("non-empty batch"), 1.0 / samples.len() as f64);
    if stage2_penalty && config.gamma > 0.0 {
        let penalty = weight_penalty_on_tape(tape, ctx.classifiers_used);
        let scaled = tape.scale(penalty, config.gamma);
        loss = tape.add(loss, scaled)?;
    }
    Ok(loss)
}

/// Flatten a 64-bit parameter set for the finite-difference checker.
pub fn flatten_named(params: &ModelParams<f64>) -> Vec<(String, Array<f64>)> {
    params
        .named_arrays()
        .into_iter()
        .map(|(_, name, arr)| (name.to_string(), arr.clone()))
        .collect()
}

/// Verify the gradients of the full end-to-end loss for every parameter
/// group against central finite differences, at 64 bits.
pub fn model_grad_check(
    config: &ModelConfig,
    params: &ModelParams<f64>,
    graph: &CooccurrenceGraph,
    table: &SemanticEmbeddingTable,
    samples: &[&MultiLabelSample],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    config.validate()?;
    let named = flatten_named(params);
    let has_backbone = params.backbone.is_some();
    let config = config.clone();
    let graph = graph.clone();
    let table = table.clone();
    let samples: Vec<MultiLabelSample> = samples.iter().map(|&s| s.clone()).collect();
    let build = move |tape: &mut Tape<f64>, ids: &[ValueId]| {
        let binding = binding_from_flat_ids(ids, has_backbone);
        let ctx = prepare_context(tape, &binding, &config, &graph, &table)?;
        let refs: Vec<&MultiLabelSample> = samples.iter().collect();
        batch_loss_on_tape(tape, &binding, &config, &ctx, &refs, true)
    };
    crate::diffcore::grad_check(&build, &named, eps, tol)
}
