#ifndef LETHE_LETHE_H
#define LETHE_LETHE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(LETHE_BUILDING_LIBRARY)
#define LETHE_API __declspec(dllexport)
#else
#define LETHE_API __declspec(dllimport)
#endif
#else
#define LETHE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define LETHE_ABI_VERSION 1u

/* Every call returns a status. On failure a message describing the cause is
 * available from lethe_last_error() on the same thread until the next call. */
typedef enum lethe_status {
  LETHE_OK = 0,
  LETHE_ERR_DIMENSION = 1,
  LETHE_ERR_CONFIG = 2,
  LETHE_ERR_LABEL = 3,
  LETHE_ERR_INDEX = 4,
  LETHE_ERR_DEGENERATE = 5,
  LETHE_ERR_CONTRACT = 6,
  LETHE_ERR_NUMERIC = 7,
  LETHE_ERR_DIVERGENCE = 8,
  LETHE_ERR_FORMAT = 9,
  LETHE_ERR_IO = 10,
  LETHE_ERR_NULL_ARGUMENT = 11,
  LETHE_ERR_INTERNAL = 12
} lethe_status;

typedef enum lethe_mask_type { LETHE_MASK_ZERO = 0, LETHE_MASK_GAUSSIAN = 1 } lethe_mask_type;

typedef struct lethe_dataset lethe_dataset;
typedef struct lethe_split lethe_split;
typedef struct lethe_model lethe_model;

LETHE_API uint32_t lethe_abi_version(void);
LETHE_API const char* lethe_last_error(void);
LETHE_API const char* lethe_status_name(lethe_status status);

/* Datasets */

typedef struct lethe_toy_spec {
  size_t classes;
  size_t per_class;
  size_t image_size;
  size_t channels;
  double noise_std;
  double amplitude_min;
  double amplitude_max;
  double hard_fraction;
  double hard_amplitude;
  double base_frequency;
  size_t marks_min;
  size_t marks_max;
} lethe_toy_spec;

LETHE_API void lethe_toy_spec_default(lethe_toy_spec* spec);
LETHE_API lethe_status lethe_dataset_generate(const lethe_toy_spec* spec, uint64_t seed, lethe_dataset** out);
LETHE_API lethe_status lethe_dataset_load(const char* path, lethe_dataset** out);
LETHE_API lethe_status lethe_dataset_save(const lethe_dataset* dataset, const char* path);
LETHE_API lethe_status lethe_dataset_info(const lethe_dataset* dataset, size_t* count, size_t* classes,
                                          size_t* image_size, size_t* channels);
LETHE_API void lethe_dataset_free(lethe_dataset* dataset);

/* Forget/retain splits. A split keeps its own copy of the test set. */

LETHE_API lethe_status lethe_split_random(const lethe_dataset* train, const lethe_dataset* test, double ratio,
                                          uint64_t seed, lethe_split** out);
LETHE_API lethe_status lethe_split_load(const char* path, const lethe_dataset* train, const lethe_dataset* test,
                                        lethe_split** out);
LETHE_API lethe_status lethe_split_save(const lethe_split* split, const char* path);
LETHE_API lethe_status lethe_split_sizes(const lethe_split* split, size_t* forget, size_t* retain, size_t* test);
LETHE_API void lethe_split_free(lethe_split* split);

/* Models */

typedef struct lethe_vit_config {
  size_t image_size;
  size_t patch_size;
  size_t channels;
  size_t depth;
  size_t heads;
  size_t dim;
  double mlp_ratio;
  size_t num_classes;
} lethe_vit_config;

LETHE_API void lethe_vit_config_default(lethe_vit_config* config);
LETHE_API lethe_status lethe_model_init(const lethe_vit_config* config, uint64_t seed, lethe_model** out);
LETHE_API lethe_status lethe_model_load(const char* path, lethe_model** out);
LETHE_API lethe_status lethe_model_save(const lethe_model* model, const char* path);
LETHE_API lethe_status lethe_model_config(const lethe_model* model, lethe_vit_config* config);
/* Checksum of the checkpoint payload this model would be saved with. */
LETHE_API lethe_status lethe_model_checksum(const lethe_model* model, uint64_t* checksum);
LETHE_API void lethe_model_free(lethe_model* model);

/* Training and unlearning */

typedef struct lethe_train_config {
  size_t epochs;
  double lr;
  size_t batch_size;
  double momentum;
  double weight_decay;
  uint64_t seed;
} lethe_train_config;

LETHE_API void lethe_train_config_default(lethe_train_config* config);

/* Fresh model trained on the whole training set. */
LETHE_API lethe_status lethe_train_original(const lethe_vit_config* model, const lethe_dataset* train,
                                            const lethe_train_config* config, lethe_model** out);
/* Fresh model trained on the retain set only. */
LETHE_API lethe_status lethe_retrain(const lethe_vit_config* model, const lethe_dataset* train,
                                     const lethe_split* split, const lethe_train_config* config, lethe_model** out);
LETHE_API lethe_status lethe_fine_tune(const lethe_model* original, const lethe_dataset* train,
                                       const lethe_split* split, const lethe_train_config* config, lethe_model** out);
LETHE_API lethe_status lethe_gradient_ascent(const lethe_model* original, const lethe_dataset* train,
                                             const lethe_split* split, const lethe_train_config* config,
                                             lethe_model** out);
LETHE_API lethe_status lethe_random_labels(const lethe_model* original, const lethe_dataset* train,
                                           const lethe_split* split, const lethe_train_config* config,
                                           lethe_model** out);

typedef struct lethe_unlearn_config {
  size_t forget_epochs;
  size_t retain_epochs;
  double lr;
  size_t batch_size;
  double tau;
  double mask_ratio;
  lethe_mask_type mask_type;
  double gaussian_std;
  double momentum;
  double weight_decay;
  uint64_t seed;
} lethe_unlearn_config;

typedef struct lethe_unlearn_stats {
  double cos_pos_start;
  double cos_pos_after_first;
  double cos_neg_start;
  double cos_neg_after_first;
  size_t forget_steps;
  size_t retain_steps;
  double forget_seconds;
  double retain_seconds;
} lethe_unlearn_stats;

LETHE_API void lethe_unlearn_config_default(lethe_unlearn_config* config);
/* Contrastive forget phase against masked views, then retain fine-tuning.
 * stats may be NULL. */
LETHE_API lethe_status lethe_unlearn(const lethe_model* original, const lethe_dataset* train,
                                     const lethe_split* split, const lethe_unlearn_config* config,
                                     lethe_unlearn_stats* stats, lethe_model** out);

/* Evaluation. Percentages are in [0, 100]. */

typedef struct lethe_metrics {
  double fa;
  double ra;
  double ta;
  double mia;
} lethe_metrics;

typedef struct lethe_gap {
  double fa;
  double ra;
  double ta;
  double mia;
  double ag;
} lethe_gap;

typedef struct lethe_sweep_row {
  double ratio;
  lethe_mask_type mask_type;
  double ta;
  double mia;
} lethe_sweep_row;

LETHE_API lethe_status lethe_evaluate(const lethe_model* model, const lethe_dataset* train, const lethe_split* split,
                                      lethe_metrics* out);
LETHE_API lethe_status lethe_average_gap(const lethe_metrics* method, const lethe_metrics* retrain, lethe_gap* out);
/* Writes ratio_count * type_count rows, ratios outermost. */
LETHE_API lethe_status lethe_masking_sweep(const lethe_model* model, const lethe_dataset* train,
                                           const lethe_split* split, const double* ratios, size_t ratio_count,
                                           const lethe_mask_type* types, size_t type_count, double gaussian_std,
                                           uint64_t seed, lethe_sweep_row* rows);

#ifdef __cplusplus
}
#endif

#endif
