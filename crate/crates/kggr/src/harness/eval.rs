//! Evaluation orchestration: full forward pass per sample, then the metric
//! suite.

use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::harness::config::ModelConfig;
use crate::harness::dataset::Dataset;
use crate::harness::model::{bind_model, prepare_context, sample_scores_on_tape, ModelParams};
use crate::harness::train::TrainState;
use crate::metrics::{ApVariant, EvalBatch, MetricReport};
use crate::objective::probabilities_on_tape;
use crate::vocab_graph::{CooccurrenceGraph, SemanticEmbeddingTable};

#[derive(Debug, Clone, Copy)]
pub struct EvalFlags {
    pub ap_variant: ApVariant,
    /// Apply the 0.5 probability filter inside the top-3 protocol.
    pub top3_filter: bool,
}

impl Default for EvalFlags {
    fn default() -> Self {
        EvalFlags {
            ap_variant: ApVariant::NonInterpolated,
            top3_filter: true,
        }
    }
}

/// Evaluate raw parameters against a dataset with an explicit adjacency.
/// Deterministic: identical inputs give byte-identical reports.
pub fn evaluate_params(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    graph: &CooccurrenceGraph,
    data: &Dataset,
    table: &SemanticEmbeddingTable,
    flags: &EvalFlags,
) -> Result<MetricReport> {
    if data.vocab.names() != graph.labels() {
        return Err(Error::Config(
            "dataset vocabulary does not match the model's category set".to_string(),
        ));
    }
    let c = config.categories;
    let m = data.samples.len();
    let mut probs = Vec::with_capacity(m * c);
    let mut truth = Vec::with_capacity(m * c);
    for sample in &data.samples {
        let mut tape: Tape<f32> = Tape::new();
        let binding = bind_model(&mut tape, params, &|_| false);
        let ctx = prepare_context(&mut tape, &binding, config, graph, table)?;
        let scores = sample_scores_on_tape(&mut tape, &binding, config, &ctx, &sample.payload)?;
        let p = probabilities_on_tape(&mut tape, scores);
        probs.extend(tape.value(p).data().iter().map(|&v| v as f64));
        truth.extend(sample.labels.iter().copied());
    }
    let batch = EvalBatch::new(m, c, probs, truth)?;
    Ok(MetricReport::compute(&batch, flags.ap_variant, flags.top3_filter))
}

/// Evaluate a trained state on a dataset using the graph and configuration
/// it was trained with.
pub fn evaluate(
    state: &TrainState,
    data: &Dataset,
    table: &SemanticEmbeddingTable,
    flags: &EvalFlags,
) -> Result<MetricReport> {
    evaluate_params(&state.params, &state.config, &state.graph, data, table, flags)
}
