//! C ABI for the knowledge-guided graph routing library.
//!
//! Opaque handles wrap datasets, adjacency graphs, and trained models;
//! every entry point returns a status code and records a human-readable
//! message retrievable with `kggr_last_error`. Pointer arguments are
//! null-checked, and panics are caught at the boundary. The matching
//! header lives at `include/kggr.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kggr::harness::{
    evaluate, synth_dataset, train_mlr, Dataset, EvalFlags, ModelConfig, SynthSpec, TrainState,
};
use kggr::vocab_graph::{
    build_cooccurrence, build_semantic_graph, load_embeddings, CooccurrenceGraph, CountMode,
    SemanticEmbeddingTable,
};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KggrStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    IoError = 3,
    TrainError = 4,
    InternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &kggr::Error) -> KggrStatus {
    use kggr::Error::*;
    match err {
        Io(_) => KggrStatus::IoError,
        Json(_) | Dataset(_) | EmbeddingLength { .. } | MissingTokens(_) => KggrStatus::ParseError,
        Diverged { .. } | NanProbability => KggrStatus::TrainError,
        _ => KggrStatus::InvalidArgument,
    }
}

/// Run a fallible body with panic containment and error capture.
fn guard<T>(out: *mut T, body: impl FnOnce() -> Result<T, (KggrStatus, String)>) -> KggrStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return KggrStatus::InvalidArgument;
    }
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => {
            unsafe { out.write(value) };
            KggrStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KggrStatus::InternalError
        }
    }
}

fn lib_err(err: kggr::Error) -> (KggrStatus, String) {
    (status_for(&err), err.to_string())
}

unsafe fn required_str<'a>(
    ptr: *const c_char,
    name: &str,
) -> Result<&'a str, (KggrStatus, String)> {
    if ptr.is_null() {
        return Err((
            KggrStatus::InvalidArgument,
            format!("{name} must not be null"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (KggrStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn required_ref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, (KggrStatus, String)> {
    ptr.as_ref().ok_or((
        KggrStatus::InvalidArgument,
        format!("{name} must not be null"),
    ))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Dataset handle: samples plus the category word vectors they train with.
pub struct KggrDataset {
    data: Dataset,
    table: SemanticEmbeddingTable,
}

/// Adjacency handle.
pub struct KggrGraph {
    graph: CooccurrenceGraph,
}

/// Trained-model handle.
pub struct KggrModel {
    state: TrainState,
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kggr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a JSON Lines dataset and its embedding text file.
///
/// # Safety
/// `jsonl_path` and `embeddings_path` must be NUL-terminated strings; `out`
/// must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn kggr_dataset_load(
    jsonl_path: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut KggrDataset,
) -> KggrStatus {
    guard(out, || {
        let jsonl = required_str(jsonl_path, "jsonl_path")?;
        let emb = required_str(embeddings_path, "embeddings_path")?;
        let data = kggr::harness::load_jsonl(Path::new(jsonl), None).map_err(lib_err)?;
        let table = load_embeddings(Path::new(emb), &data.vocab).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrDataset { data, table })))
    })
}

/// Generate a synthetic dataset from a JSON-encoded generator
/// specification (the `SynthSpec` schema).
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` as in
/// [`kggr_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn kggr_dataset_synth(
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut KggrDataset,
) -> KggrStatus {
    guard(out, || {
        let text = required_str(spec_json, "spec_json")?;
        let spec: SynthSpec = serde_json::from_str(text)
            .map_err(|e| (KggrStatus::ParseError, format!("bad synth spec: {e}")))?;
        let (data, table) = synth_dataset(&spec, seed).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrDataset { data, table })))
    })
}

/// Number of samples in a dataset; 0 for a null handle.
#[no_mangle]
pub extern "C" fn kggr_dataset_len(dataset: *const KggrDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.data.samples.len())
}

/// # Safety
/// `dataset` must be a pointer from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kggr_dataset_free(dataset: *mut KggrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Statistical co-occurrence adjacency from a dataset's annotations.
/// Nonzero `strict` makes zero-occurrence categories an error.
///
/// # Safety
/// `dataset` must be a live handle; `out` as in [`kggr_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn kggr_graph_cooccurrence(
    dataset: *const KggrDataset,
    strict: i32,
    out: *mut *mut KggrGraph,
) -> KggrStatus {
    guard(out, || {
        let d = required_ref(dataset, "dataset")?;
        let mode = if strict != 0 {
            CountMode::Strict
        } else {
            CountMode::Lenient
        };
        let graph =
            build_cooccurrence(&d.data.annotations(), &d.data.vocab, mode).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrGraph { graph })))
    })
}

/// Clamped-cosine semantic-similarity adjacency from a dataset's embeddings.
///
/// # Safety
/// As in [`kggr_graph_cooccurrence`].
#[no_mangle]
pub unsafe extern "C" fn kggr_graph_semantic(
    dataset: *const KggrDataset,
    out: *mut *mut KggrGraph,
) -> KggrStatus {
    guard(out, || {
        let d = required_ref(dataset, "dataset")?;
        let graph = build_semantic_graph(&d.table).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrGraph { graph })))
    })
}

/// Serialize an adjacency to its JSON exchange form. Free the string with
/// `kggr_string_free`.
///
/// # Safety
/// `graph` must be a live handle; `out` receives a heap string pointer.
#[no_mangle]
pub unsafe extern "C" fn kggr_graph_to_json(
    graph: *const KggrGraph,
    out: *mut *mut c_char,
) -> KggrStatus {
    guard(out, || {
        let g = required_ref(graph, "graph")?;
        let json = g.graph.to_json_string().map_err(lib_err)?;
        Ok(into_c_string(json))
    })
}

/// # Safety
/// `graph` must be a pointer from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kggr_graph_free(graph: *mut KggrGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

fn resolve_config(
    config_kv: *const c_char,
    data: &Dataset,
) -> Result<ModelConfig, (KggrStatus, String)> {
    let mut config = if config_kv.is_null() {
        ModelConfig::desk()
    } else {
        let text = unsafe { required_str(config_kv, "config_kv")? };
        ModelConfig::from_kv_text(text, ModelConfig::desk()).map_err(lib_err)?
    };
    config.categories = data.vocab.len();
    Ok(config)
}

/// Train the full model. `config_kv` holds flat `key = value` lines (null
/// for desk-scale defaults); the category count always follows the dataset.
///
/// # Safety
/// `dataset` must be a live handle, `config_kv` null or NUL-terminated,
/// `out` as in [`kggr_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn kggr_train(
    config_kv: *const c_char,
    dataset: *const KggrDataset,
    out: *mut *mut KggrModel,
) -> KggrStatus {
    guard(out, || {
        let d = required_ref(dataset, "dataset")?;
        let config = resolve_config(config_kv, &d.data)?;
        let (state, _) = train_mlr(&config, &d.data, &d.table).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrModel { state })))
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kggr_model_save(
    model: *const KggrModel,
    path: *const c_char,
) -> KggrStatus {
    let mut unit = ();
    guard(&mut unit, || {
        let m = required_ref(model, "model")?;
        let p = required_str(path, "path")?;
        m.state.save(Path::new(p)).map_err(lib_err)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` as in
/// [`kggr_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn kggr_model_load(
    path: *const c_char,
    out: *mut *mut KggrModel,
) -> KggrStatus {
    guard(out, || {
        let p = required_str(path, "path")?;
        let state = TrainState::load(Path::new(p)).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(KggrModel { state })))
    })
}

/// # Safety
/// `model` must be a pointer from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kggr_model_free(model: *mut KggrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Evaluate a model on a dataset; writes the metric report as JSON (mAP,
/// per-class AP, top-3 and 0.5-threshold P/R/F1 blocks). Free the string
/// with `kggr_string_free`.
///
/// # Safety
/// `model` and `dataset` must be live handles; `out` receives a heap
/// string pointer.
#[no_mangle]
pub unsafe extern "C" fn kggr_evaluate(
    model: *const KggrModel,
    dataset: *const KggrDataset,
    out: *mut *mut c_char,
) -> KggrStatus {
    guard(out, || {
        let m = required_ref(model, "model")?;
        let d = required_ref(dataset, "dataset")?;
        let report =
            evaluate(&m.state, &d.data, &d.table, &EvalFlags::default()).map_err(lib_err)?;
        let json = report.to_json_string().map_err(lib_err)?;
        Ok(into_c_string(json))
    })
}

/// Verify end-to-end gradients against 64-bit central finite differences
/// on a small synthetic batch at the configured dimensions. Writes the
/// maximum relative error; returns Ok only when it is within `tol`.
///
/// # Safety
/// `config_kv` null or NUL-terminated; `max_rel_err_out` must point to
/// writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn kggr_grad_check(
    config_kv: *const c_char,
    eps: f64,
    tol: f64,
    max_rel_err_out: *mut f64,
) -> KggrStatus {
    guard(max_rel_err_out, || {
        let config = if config_kv.is_null() {
            ModelConfig::desk()
        } else {
            let text = required_str(config_kv, "config_kv")?;
            ModelConfig::from_kv_text(text, ModelConfig::desk()).map_err(lib_err)?
        };
        config.validate().map_err(lib_err)?;
        let spec = SynthSpec {
            categories: config.categories,
            samples: 2,
            width: config.grid_width,
            height: config.grid_height,
            channels: config.channels,
            embed_dim: config.semantic_dim,
            noise: 0.3,
            base_rate: 0.4,
            ..SynthSpec::default()
        };
        let (data, table) = synth_dataset(&spec, config.seed).map_err(lib_err)?;
        let graph = build_semantic_graph(&table).map_err(lib_err)?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let params: kggr::harness::ModelParams<f32> =
            kggr::harness::ModelParams::init(&mut rng, &config, None);
        let refs: Vec<&kggr::harness::MultiLabelSample> = data.samples.iter().collect();
        let report = kggr::harness::model_grad_check(
            &config,
            &params.to_f64(),
            &graph,
            &table,
            &refs,
            eps,
            tol,
        )
        .map_err(lib_err)?;
        if report.pass {
            Ok(report.max_rel_err)
        } else {
            Err((
                KggrStatus::TrainError,
                format!(
                    "gradient check failed: max relative error {:.3e} > {tol:.1e}",
                    report.max_rel_err
                ),
            ))
        }
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by this library, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn kggr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
