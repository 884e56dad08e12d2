//! Datasets, the pluggable feature provider, training loops, the two-stage
//! few-shot protocol, and evaluation orchestration.

mod backbone;
mod config;
mod dataset;
mod eval;
mod model;
mod train;

pub use backbone::{image_patches, tiny_backbone, BackboneParams};
pub use config::{LossKind, ModelConfig, ScoreSource};
pub use dataset::{
    k_shot_split, load_jsonl, save_embeddings, save_jsonl, split, synth_dataset, Dataset,
    MultiLabelSample, Payload, PlantedPair, SynthSpec,
};
pub use eval::{evaluate, evaluate_params, EvalFlags};
pub use model::{
    batch_loss_on_tape, bind_model, binding_from_flat_ids, flatten_named, model_grad_check,
    prepare_context, sample_scores_on_tape, BatchContext, ModelBinding, ModelParams, ParamGroup,
};
pub use train::{
    resume_stage2, train_fsl, train_mlr, AdamState, EpochLog, FslOutcome, TrainState,
};
