/* C interface for the knowledge-guided graph routing library.
 *
 * Every fallible call returns a kggr_status; on failure,
 * kggr_last_error() holds a message valid until the next failing call
 * on the same thread. Handles are opaque and must be released with
 * their matching *_free function. Strings returned through out
 * parameters are heap-allocated; release them with kggr_string_free.
 */

#ifndef KGGR_H
#define KGGR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kggr_status {
  KGGR_OK = 0,
  KGGR_INVALID_ARGUMENT = 1,
  KGGR_PARSE_ERROR = 2,
  KGGR_IO_ERROR = 3,
  KGGR_TRAIN_ERROR = 4,
  KGGR_INTERNAL_ERROR = 5,
} kggr_status;

/* Opaque handles. */
typedef struct KggrDataset KggrDataset;
typedef struct KggrGraph KggrGraph;
typedef struct KggrModel KggrModel;

/* Message for the most recent failure on this thread. */
const char *kggr_last_error(void);

/* Datasets: JSON Lines samples plus a category embedding text file, or a
 * synthetic world described by a JSON generator specification. */
kggr_status kggr_dataset_load(const char *jsonl_path,
                              const char *embeddings_path,
                              KggrDataset **out);
kggr_status kggr_dataset_synth(const char *spec_json, uint64_t seed,
                               KggrDataset **out);
size_t kggr_dataset_len(const KggrDataset *dataset);
void kggr_dataset_free(KggrDataset *dataset);

/* Adjacency graphs: statistical co-occurrence or clamped-cosine semantic
 * similarity. kggr_graph_to_json emits the exchange format
 * {"labels": [...], "kind": "...", "matrix": [[...]]}. */
kggr_status kggr_graph_cooccurrence(const KggrDataset *dataset, int strict,
                                    KggrGraph **out);
kggr_status kggr_graph_semantic(const KggrDataset *dataset, KggrGraph **out);
kggr_status kggr_graph_to_json(const KggrGraph *graph, char **out);
void kggr_graph_free(KggrGraph *graph);

/* Training and evaluation. config_kv holds flat "key = value" lines
 * (NULL for desk-scale defaults). The evaluation report is the metric
 * suite as JSON: {"map", "per_class_ap", "top3": {...}, "all": {...}}. */
kggr_status kggr_train(const char *config_kv, const KggrDataset *dataset,
                       KggrModel **out);
kggr_status kggr_model_save(const KggrModel *model, const char *path);
kggr_status kggr_model_load(const char *path, KggrModel **out);
kggr_status kggr_evaluate(const KggrModel *model, const KggrDataset *dataset,
                          char **report_json_out);
void kggr_model_free(KggrModel *model);

/* 64-bit central-finite-difference verification of the end-to-end
 * gradients on a synthetic batch at the configured dimensions. */
kggr_status kggr_grad_check(const char *config_kv, double eps, double tol,
                            double *max_rel_err_out);

void kggr_string_free(char *s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* KGGR_H */
