//! The header must cover every exported symbol, and a real C program must
//! compile against it, link the static library, and run the round trip.

use std::path::PathBuf;
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding libkggr_ffi.a. `cargo test` leaves it in
/// target/debug/deps (next to this test binary); `cargo build` uplifts it
/// to target/debug.
fn static_lib_dir() -> PathBuf {
    let exe = std::env::current_exe().expect("test binary path");
    let deps = exe.parent().expect("deps directory").to_path_buf();
    if deps.join("libkggr_ffi.a").exists() {
        return deps;
    }
    let debug = deps.parent().expect("target/debug directory").to_path_buf();
    debug
}

#[test]
fn header_lists_every_exported_symbol() {
    let header = std::fs::read_to_string(manifest_dir().join("include/kggr.h")).unwrap();
    let source = std::fs::read_to_string(manifest_dir().join("src/lib.rs")).unwrap();
    let mut exported = Vec::new();
    for window in source.split("#[no_mangle]").skip(1) {
        let name = window
            .split("fn ")
            .nth(1)
            .and_then(|rest| rest.split(['(', '<']).next())
            .expect("extern fn name after #[no_mangle]");
        exported.push(name.trim().to_string());
    }
    assert!(!exported.is_empty());
    for name in &exported {
        assert!(
            header.contains(name),
            "header is missing exported symbol {name}"
        );
    }
}

#[test]
fn c_program_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let c_file = dir.path().join("smoke.c");
    std::fs::write(
        &c_file,
        r#"
#include <stdio.h>
#include <string.h>
#include "kggr.h"

int main(void) {
    const char *spec =
        "{\"categories\": 3, \"samples\": 12, \"width\": 2, \"height\": 2,"
        " \"channels\": 6, \"pairs\": [], \"noise\": 0.3, \"base_rate\": 0.5,"
        " \"weak\": [], \"weak_strength\": 0.25, \"signal_strength\": 1.0,"
        " \"embed_dim\": 4, \"embed_align\": 0.6, \"signature_embed_mix\": 1.0,"
        " \"label_prefix\": \"c\", \"signature_map_seed\": null}";
    KggrDataset *data = NULL;
    if (kggr_dataset_synth(spec, 3, &data) != KGGR_OK) {
        fprintf(stderr, "synth: %s\n", kggr_last_error());
        return 1;
    }
    if (kggr_dataset_len(data) != 12) {
        fprintf(stderr, "unexpected sample count\n");
        return 1;
    }
    KggrGraph *graph = NULL;
    if (kggr_graph_cooccurrence(data, 0, &graph) != KGGR_OK) {
        fprintf(stderr, "graph: %s\n", kggr_last_error());
        return 1;
    }
    char *json = NULL;
    if (kggr_graph_to_json(graph, &json) != KGGR_OK) {
        fprintf(stderr, "json: %s\n", kggr_last_error());
        return 1;
    }
    if (strstr(json, "statistical") == NULL) {
        fprintf(stderr, "missing graph kind in %s\n", json);
        return 1;
    }
    kggr_string_free(json);
    kggr_graph_free(graph);

    /* The null-argument path must fail cleanly, not crash. */
    KggrModel *model = NULL;
    if (kggr_model_load(NULL, &model) != KGGR_INVALID_ARGUMENT) {
        fprintf(stderr, "expected invalid-argument status\n");
        return 1;
    }

    kggr_dataset_free(data);
    printf("c smoke ok\n");
    return 0;
}
"#,
    )
    .unwrap();

    let lib_dir = static_lib_dir();
    let static_lib = lib_dir.join("libkggr_ffi.a");
    assert!(
        static_lib.exists(),
        "static library not found at {}",
        static_lib.display()
    );

    let exe = dir.path().join("smoke");
    let compile = Command::new("cc")
        .arg(&c_file)
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lkggr_ffi")
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("invoke cc");
    assert!(
        compile.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&exe).output().expect("run smoke binary");
    assert!(
        run.status.success(),
        "smoke run failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).contains("c smoke ok"));
}
