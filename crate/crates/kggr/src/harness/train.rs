//! Training loops: Adam over the tape gradients, the multi-label
//! recognition loop, and the two-stage few-shot protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Tape};
use crate::error::{Error, Result};
use crate::harness::config::ModelConfig;
use crate::harness::dataset::{Dataset, MultiLabelSample, Payload};
use crate::harness::eval::{evaluate_params, EvalFlags};
use crate::harness::model::{
    batch_loss_on_tape, bind_model, prepare_context, ModelParams, ParamGroup,
};
use crate::vocab_graph::{
    build_cooccurrence, build_semantic_graph, CooccurrenceGraph, CountMode,
    SemanticEmbeddingTable,
};

/// First/second moment buffers, aligned with the trainable arrays in flat
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Array<f32>>,
    v: Vec<Array<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(shapes: &[&Array<f32>]) -> Self {
        AdamState {
            m: shapes.iter().map(|a| Array::zeros(a.shape().to_vec())).collect(),
            v: shapes.iter().map(|a| Array::zeros(a.shape().to_vec())).collect(),
            t: 0,
        }
    }

    /// One bias-corrected update over the aligned parameter/gradient lists.
    pub fn step(
        &mut self,
        params: &mut [&mut Array<f32>],
        grads: &[Array<f32>],
        lr: f64,
        beta1: f64,
        beta2: f64,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = beta1 as f32;
        let b2 = beta2 as f32;
        let correction1 = 1.0 - (b1 as f64).powi(self.t as i32) as f32;
        let correction2 = 1.0 - (b2 as f64).powi(self.t as i32) as f32;
        let lr = lr as f32;
        const EPS: f32 = 1e-8;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.len() {
                let grad = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * grad;
                let vi = b2 * v.data()[i] + (1.0 - b2) * grad * grad;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / correction1;
                let v_hat = vi / correction2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

/// One JSON log record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub iter: u64,
    pub loss: f64,
    pub map: f64,
}

/// Everything a training run produces and a later run resumes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub adam: AdamState,
    pub iteration: u64,
    pub frozen: Vec<ParamGroup>,
    /// The adjacency the model was trained with; evaluation reuses it.
    pub graph: CooccurrenceGraph,
}

impl TrainState {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn check_dataset(config: &ModelConfig, data: &Dataset, table: &SemanticEmbeddingTable) -> Result<()> {
    if data.vocab.len() != config.categories {
        return Err(Error::Config(format!(
            "dataset has {} categories, config expects {}",
            data.vocab.len(),
            config.categories
        )));
    }
    if table.labels() != data.vocab.names() {
        return Err(Error::Config(
            "embedding table labels do not match the dataset vocabulary".to_string(),
        ));
    }
    if table.dim() != config.semantic_dim {
        return Err(Error::Config(format!(
            "embedding dimension {} does not match semantic_dim {}",
            table.dim(),
            config.semantic_dim
        )));
    }
    if data.samples.is_empty() {
        return Err(Error::Dataset("no training samples".to_string()));
    }
    Ok(())
}

struct LoopSpec<'a> {
    config: &'a ModelConfig,
    graph: &'a CooccurrenceGraph,
    data: &'a Dataset,
    table: &'a SemanticEmbeddingTable,
    frozen: Vec<ParamGroup>,
    steps: u64,
    learning_rate: f64,
    stage2_penalty: bool,
}

/// The shared optimizer loop. Batches follow a seeded shuffle per epoch;
/// every epoch ends with a train-set evaluation that is appended to the
/// log (and emitted as one JSON line at info level).
fn run_loop(
    spec: &LoopSpec,
    mut params: ModelParams<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<(TrainState, Vec<EpochLog>)> {
    let config = spec.config;
    let frozen = &spec.frozen;
    let trainable = |g: ParamGroup| !frozen.contains(&g);

    let trainable_shapes: Vec<&Array<f32>> = params
        .named_arrays()
        .into_iter()
        .filter(|(g, _, _)| trainable(*g))
        .map(|(_, _, a)| a)
        .collect();
    let mut adam = AdamState::new(&trainable_shapes);
    drop(trainable_shapes);

    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..spec.data.samples.len()).collect();
    let mut cursor = order.len(); // trigger a shuffle on the first step
    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut iteration: u64 = 0;

    let eval_flags = EvalFlags::default();

    while iteration < spec.steps {
        if cursor >= order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch: Vec<&MultiLabelSample> =
            order[cursor..end].iter().map(|&i| &spec.data.samples[i]).collect();
        cursor = end;

        let mut tape: Tape<f32> = Tape::new();
        let binding = bind_model(&mut tape, &params, &trainable);
        let ctx = prepare_context(&mut tape, &binding, config, spec.graph, spec.table)?;
        let loss_id = batch_loss_on_tape(
            &mut tape,
            &binding,
            config,
            &ctx,
            &batch,
            spec.stage2_penalty,
        )?;
        let loss = tape.scalar(loss_id) as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: iteration });
        }
        epoch_losses.push(loss);

        let mut grads = tape.backward(loss_id)?;
        let grad_list: Vec<Array<f32>> = binding
            .trainable
            .iter()
            .map(|&id| grads.take(id).expect("gradient for trainable param"))
            .collect();

        let lr = match config.lr_decay_step {
            Some(at) if iteration >= at => spec.learning_rate / 10.0,
            _ => spec.learning_rate,
        };
        let mut views: Vec<&mut Array<f32>> = params
            .named_arrays_mut()
            .into_iter()
            .filter(|(g, _, _)| trainable(*g))
            .map(|(_, _, a)| a)
            .collect();
        adam.step(&mut views, &grad_list, lr, config.beta1, config.beta2);
        iteration += 1;

        let epoch_end = cursor >= order.len() || iteration >= spec.steps;
        if epoch_end {
            let report = evaluate_params(
                &params,
                config,
                spec.graph,
                spec.data,
                spec.table,
                &eval_flags,
            )?;
            let mean_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
            epoch_losses.clear();
            let entry = EpochLog {
                iter: iteration,
                loss: mean_loss,
                map: report.map,
            };
            log::info!("{}", serde_json::to_string(&entry)?);
            logs.push(entry);
            if let Some(target) = config.target_map {
                if report.map >= target {
                    break;
                }
            }
        }
    }

    Ok((
        TrainState {
            config: config.clone(),
            params,
            adam,
            iteration,
            frozen: spec.frozen.clone(),
            graph: spec.graph.clone(),
        },
        logs,
    ))
}

/// End-to-end multi-label training: statistical adjacency from the training
/// annotations, all groups trainable, cross-entropy objective.
pub fn train_mlr(
    config: &ModelConfig,
    data: &Dataset,
    table: &SemanticEmbeddingTable,
) -> Result<(TrainState, Vec<EpochLog>)> {
    config.validate()?;
    check_dataset(config, data, table)?;
    let graph = build_cooccurrence(&data.annotations(), &data.vocab, CountMode::Strict)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backbone_patch = backbone_patch_for(data)?;
    let params = ModelParams::init(&mut rng, config, backbone_patch);
    let spec = LoopSpec {
        config,
        graph: &graph,
        data,
        table,
        frozen: Vec::new(),
        steps: config.max_steps,
        learning_rate: config.learning_rate,
        stage2_penalty: false,
    };
    run_loop(&spec, params, &mut rng)
}

/// The downsampling factor needed for image samples, if any are present.
fn backbone_patch_for(data: &Dataset) -> Result<Option<usize>> {
    for s in &data.samples {
        if let Payload::Image(img) = &s.payload {
            // Fixed factor-4 stub; image extents must divide by it.
            let (h, w) = (img.shape()[0], img.shape()[1]);
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::Config(format!(
                    "image sample '{}' ({h}×{w}) is not divisible by the factor-4 backbone",
                    s.id
                )));
            }
            return Ok(Some(4));
        }
    }
    Ok(None)
}

/// Output of the two-stage few-shot protocol.
#[derive(Debug, Clone)]
pub struct FslOutcome {
    pub stage1: TrainState,
    pub stage1_logs: Vec<EpochLog>,
    pub stage2: TrainState,
    pub stage2_logs: Vec<EpochLog>,
}

/// Seed offsets separating the stage-2 classifier redraw from the stage-2
/// batch shuffle stream.
pub(crate) const STAGE2_INIT_STREAM: u64 = 0x5354_4147_4532;
const STAGE2_LOOP_STREAM: u64 = 0x5354_4147_4533;

/// Run stage 2 from prepared parameters: semantic adjacency over the novel
/// categories, frozen attention (and backbone), the two propagation
/// networks and classifier rows training under the weight-regularized loss.
pub fn resume_stage2(
    config: &ModelConfig,
    params: ModelParams<f32>,
    graph: &CooccurrenceGraph,
    data: &Dataset,
    table: &SemanticEmbeddingTable,
) -> Result<(TrainState, Vec<EpochLog>)> {
    config.validate()?;
    check_dataset(config, data, table)?;
    let frozen = if params.backbone.is_some() {
        vec![ParamGroup::Attention, ParamGroup::Backbone]
    } else {
        vec![ParamGroup::Attention]
    };
    let spec = LoopSpec {
        config,
        graph,
        data,
        table,
        frozen,
        steps: config.stage2_steps,
        learning_rate: config.stage2_learning_rate,
        stage2_penalty: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ STAGE2_LOOP_STREAM);
    run_loop(&spec, params, &mut rng)
}

/// Stage 1 trains everything on the data-rich base categories with the
/// statistical adjacency; stage 2 rebuilds a semantic-similarity adjacency
/// over the novel categories, re-draws the classifier rows, freezes the
/// backbone and attention, and briefly trains the two propagation networks
/// with the weight-regularized loss.
pub fn train_fsl(
    config: &ModelConfig,
    base: &Dataset,
    base_table: &SemanticEmbeddingTable,
    novel: &Dataset,
    novel_table: &SemanticEmbeddingTable,
) -> Result<FslOutcome> {
    for name in novel.vocab.names() {
        if base.vocab.index_of(name).is_some() {
            return Err(Error::Config(format!(
                "base and novel category sets overlap on '{name}'"
            )));
        }
    }
    for c in 0..novel.vocab.len() {
        if novel.positives(c) == 0 {
            return Err(Error::Dataset(format!(
                "novel category '{}' has no training sample (K = 0)",
                novel.vocab.name(c)
            )));
        }
    }

    // Stage 1: base categories, statistical adjacency, everything trains.
    let mut config1 = config.clone();
    config1.categories = base.vocab.len();
    config1.validate()?;
    check_dataset(&config1, base, base_table)?;
    let graph_b = build_cooccurrence(&base.annotations(), &base.vocab, CountMode::Strict)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backbone_patch = backbone_patch_for(base)?;
    let params = ModelParams::init(&mut rng, &config1, backbone_patch);
    let spec1 = LoopSpec {
        config: &config1,
        graph: &graph_b,
        data: base,
        table: base_table,
        frozen: Vec::new(),
        steps: config.stage1_steps,
        learning_rate: config.learning_rate,
        stage2_penalty: false,
    };
    let (stage1, stage1_logs) = run_loop(&spec1, params, &mut rng)?;

    // Stage 2: novel categories, semantic adjacency, frozen feature path.
    let mut config2 = config.clone();
    config2.categories = novel.vocab.len();
    let graph_n = build_semantic_graph(novel_table)?;

    let mut params2 = stage1.params.clone();
    let mut rng2 = ChaCha8Rng::seed_from_u64(config.seed ^ STAGE2_INIT_STREAM);
    params2.classifiers =
        crate::propagation::ClassifierWeights::init(&mut rng2, config2.categories, config2.hidden_dim);
    let (stage2, stage2_logs) = resume_stage2(&config2, params2, &graph_n, novel, novel_table)?;

    Ok(FslOutcome {
        stage1,
        stage1_logs,
        stage2,
        stage2_logs,
    })
}
