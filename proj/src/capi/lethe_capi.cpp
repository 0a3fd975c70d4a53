#include "lethe/lethe.h"

#include <exception>
#include <new>
#include <string>
#include <utility>

#include "common/error.hpp"
#include "data/dataset.hpp"
#include "evaluation/metrics.hpp"
#include "unlearning/unlearning.hpp"
#include "vit/model.hpp"

struct lethe_dataset {
  lethe::data::LabeledDataset value;
};

struct lethe_split {
  lethe::data::DataSplit value;
  double ratio = 0.0;
  std::uint64_t seed = 0;
};

struct lethe_model {
  lethe::vit::ViTParams value;
};

namespace {

using namespace lethe;

thread_local std::string g_last_error;

lethe_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return LETHE_ERR_DIMENSION;
    case ErrorKind::kConfig: return LETHE_ERR_CONFIG;
    case ErrorKind::kLabel: return LETHE_ERR_LABEL;
    case ErrorKind::kIndex: return LETHE_ERR_INDEX;
    case ErrorKind::kDegenerate: return LETHE_ERR_DEGENERATE;
    case ErrorKind::kContract: return LETHE_ERR_CONTRACT;
    case ErrorKind::kNumeric: return LETHE_ERR_NUMERIC;
    case ErrorKind::kDivergence: return LETHE_ERR_DIVERGENCE;
    case ErrorKind::kFormat: return LETHE_ERR_FORMAT;
    case ErrorKind::kIo: return LETHE_ERR_IO;
  }
  return LETHE_ERR_INTERNAL;
}

// Runs fn, translating any exception into a status and a stored message.
template <typename Fn>
lethe_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return LETHE_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return LETHE_ERR_INTERNAL;
}

// Null pointers are reported as their own status rather than internal errors.
template <typename Fn, typename... Ptrs>
lethe_status call(const char* what, Fn&& fn, const Ptrs*... ptrs) {
  if (((ptrs == nullptr) || ...)) {
    g_last_error = std::string(what) + ": null argument";
    return LETHE_ERR_NULL_ARGUMENT;
  }
  return guarded(std::forward<Fn>(fn));
}

masking::MaskType mask_type_of(lethe_mask_type t) {
  switch (t) {
    case LETHE_MASK_ZERO: return masking::MaskType::kZero;
    case LETHE_MASK_GAUSSIAN: return masking::MaskType::kGaussian;
  }
  throw ConfigError("unknown mask type " + std::to_string(static_cast<int>(t)));
}

lethe_mask_type mask_type_of(masking::MaskType t) {
  return t == masking::MaskType::kZero ? LETHE_MASK_ZERO : LETHE_MASK_GAUSSIAN;
}

data::ToySpec toy_spec_of(const lethe_toy_spec& s) {
  data::ToySpec t;
  t.classes = s.classes;
  t.per_class = s.per_class;
  t.image_size = s.image_size;
  t.channels = s.channels;
  t.noise_std = s.noise_std;
  t.amplitude_min = s.amplitude_min;
  t.amplitude_max = s.amplitude_max;
  t.hard_fraction = s.hard_fraction;
  t.hard_amplitude = s.hard_amplitude;
  t.base_frequency = s.base_frequency;
  t.marks_min = s.marks_min;
  t.marks_max = s.marks_max;
  return t;
}

vit::ViTConfig vit_config_of(const lethe_vit_config& c) {
  vit::ViTConfig v;
  v.image_size = c.image_size;
  v.patch_size = c.patch_size;
  v.channels = c.channels;
  v.depth = c.depth;
  v.heads = c.heads;
  v.dim = c.dim;
  v.mlp_ratio = c.mlp_ratio;
  v.num_classes = c.num_classes;
  return v;
}

lethe_vit_config vit_config_of(const vit::ViTConfig& v) {
  return {v.image_size, v.patch_size, v.channels, v.depth, v.heads, v.dim, v.mlp_ratio, v.num_classes};
}

unlearning::TrainConfig train_config_of(const lethe_train_config& c) {
  return {c.epochs, c.lr, c.batch_size, c.momentum, c.weight_decay, c.seed};
}

eval::MetricsReport report_of(const lethe_metrics& m) {
  eval::MetricsReport r;
  r.fa = m.fa;
  r.ra = m.ra;
  r.ta = m.ta;
  r.mia = m.mia;
  return r;
}

void emit(lethe_model** out, vit::ViTParams params) { *out = new lethe_model{std::move(params)}; }

}  // namespace

extern "C" {

LETHE_API uint32_t lethe_abi_version(void) { return LETHE_ABI_VERSION; }

LETHE_API const char* lethe_last_error(void) { return g_last_error.c_str(); }

LETHE_API const char* lethe_status_name(lethe_status status) {
  switch (status) {
    case LETHE_OK: return "ok";
    case LETHE_ERR_DIMENSION: return "dimension error";
    case LETHE_ERR_CONFIG: return "config error";
    case LETHE_ERR_LABEL: return "label error";
    case LETHE_ERR_INDEX: return "index error";
    case LETHE_ERR_DEGENERATE: return "degenerate input";
    case LETHE_ERR_CONTRACT: return "contract violation";
    case LETHE_ERR_NUMERIC: return "numeric error";
    case LETHE_ERR_DIVERGENCE: return "divergence";
    case LETHE_ERR_FORMAT: return "format error";
    case LETHE_ERR_IO: return "i/o error";
    case LETHE_ERR_NULL_ARGUMENT: return "null argument";
    case LETHE_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

LETHE_API void lethe_toy_spec_default(lethe_toy_spec* spec) {
  if (!spec) return;
  const data::ToySpec t;
  *spec = {t.classes,       t.per_class,     t.image_size,    t.channels,       t.noise_std,
           t.amplitude_min, t.amplitude_max, t.hard_fraction, t.hard_amplitude, t.base_frequency,
           t.marks_min,     t.marks_max};
}

LETHE_API lethe_status lethe_dataset_generate(const lethe_toy_spec* spec, uint64_t seed, lethe_dataset** out) {
  return call("lethe_dataset_generate", [&] {
    *out = new lethe_dataset{data::generate_toy_dataset(toy_spec_of(*spec), seed)};
  }, spec, out);
}

LETHE_API lethe_status lethe_dataset_load(const char* path, lethe_dataset** out) {
  return call("lethe_dataset_load", [&] { *out = new lethe_dataset{data::load_dataset(path)}; }, path, out);
}

LETHE_API lethe_status lethe_dataset_save(const lethe_dataset* dataset, const char* path) {
  return call("lethe_dataset_save", [&] { data::save_dataset(path, dataset->value); }, dataset, path);
}

LETHE_API lethe_status lethe_dataset_info(const lethe_dataset* dataset, size_t* count, size_t* classes,
                                          size_t* image_size, size_t* channels) {
  return call("lethe_dataset_info", [&] {
    const auto& d = dataset->value;
    if (count) *count = d.size();
    if (classes) *classes = d.class_count;
    if (image_size) *image_size = d.image_size();
    if (channels) *channels = d.channels();
  }, dataset);
}

LETHE_API void lethe_dataset_free(lethe_dataset* dataset) { delete dataset; }

LETHE_API lethe_status lethe_split_random(const lethe_dataset* train, const lethe_dataset* test, double ratio,
                                          uint64_t seed, lethe_split** out) {
  return call("lethe_split_random", [&] {
    *out = new lethe_split{data::split_random_forget(train->value, test->value, ratio, seed), ratio, seed};
  }, train, test, out);
}

LETHE_API lethe_status lethe_split_load(const char* path, const lethe_dataset* train, const lethe_dataset* test,
                                        lethe_split** out) {
  return call("lethe_split_load", [&] {
    double ratio = 0.0;
    std::uint64_t seed = 0;
    auto split = data::load_split(path, test->value, train->value.size(), &ratio, &seed);
    *out = new lethe_split{std::move(split), ratio, seed};
  }, path, train, test, out);
}

LETHE_API lethe_status lethe_split_save(const lethe_split* split, const char* path) {
  return call("lethe_split_save", [&] { data::save_split(path, split->value, split->ratio, split->seed); }, split,
              path);
}

LETHE_API lethe_status lethe_split_sizes(const lethe_split* split, size_t* forget, size_t* retain, size_t* test) {
  return call("lethe_split_sizes", [&] {
    if (forget) *forget = split->value.forget.size();
    if (retain) *retain = split->value.retain.size();
    if (test) *test = split->value.test.size();
  }, split);
}

LETHE_API void lethe_split_free(lethe_split* split) { delete split; }

LETHE_API void lethe_vit_config_default(lethe_vit_config* config) {
  if (config) *config = vit_config_of(vit::ViTConfig{});
}

LETHE_API lethe_status lethe_model_init(const lethe_vit_config* config, uint64_t seed, lethe_model** out) {
  return call("lethe_model_init", [&] { emit(out, vit::init_params(vit_config_of(*config), seed)); }, config, out);
}

LETHE_API lethe_status lethe_model_load(const char* path, lethe_model** out) {
  return call("lethe_model_load", [&] { emit(out, vit::load_params(path)); }, path, out);
}

LETHE_API lethe_status lethe_model_save(const lethe_model* model, const char* path) {
  return call("lethe_model_save", [&] { vit::save_params(path, model->value); }, model, path);
}

LETHE_API lethe_status lethe_model_config(const lethe_model* model, lethe_vit_config* config) {
  return call("lethe_model_config", [&] { *config = vit_config_of(model->value.config); }, model, config);
}

LETHE_API lethe_status lethe_model_checksum(const lethe_model* model, uint64_t* checksum) {
  return call("lethe_model_checksum", [&] { *checksum = model->value.checksum(); }, model, checksum);
}

LETHE_API void lethe_model_free(lethe_model* model) { delete model; }

LETHE_API void lethe_train_config_default(lethe_train_config* config) {
  if (!config) return;
  const unlearning::TrainConfig t;
  *config = {t.epochs, t.lr, t.batch_size, t.momentum, t.weight_decay, t.seed};
}

LETHE_API lethe_status lethe_train_original(const lethe_vit_config* model, const lethe_dataset* train,
                                            const lethe_train_config* config, lethe_model** out) {
  return call("lethe_train_original", [&] {
    emit(out, unlearning::train_original(vit_config_of(*model), train->value, train_config_of(*config)));
  }, model, train, config, out);
}

LETHE_API lethe_status lethe_retrain(const lethe_vit_config* model, const lethe_dataset* train,
                                     const lethe_split* split, const lethe_train_config* config, lethe_model** out) {
  return call("lethe_retrain", [&] {
    emit(out, unlearning::retrain(vit_config_of(*model), train->value, split->value, train_config_of(*config)));
  }, model, train, split, config, out);
}

LETHE_API lethe_status lethe_fine_tune(const lethe_model* original, const lethe_dataset* train,
                                       const lethe_split* split, const lethe_train_config* config, lethe_model** out) {
  return call("lethe_fine_tune", [&] {
    emit(out, unlearning::fine_tune(original->value, train->value, split->value, train_config_of(*config)));
  }, original, train, split, config, out);
}

LETHE_API lethe_status lethe_gradient_ascent(const lethe_model* original, const lethe_dataset* train,
                                             const lethe_split* split, const lethe_train_config* config,
                                             lethe_model** out) {
  return call("lethe_gradient_ascent", [&] {
    emit(out, unlearning::gradient_ascent(original->value, train->value, split->value, train_config_of(*config)));
  }, original, train, split, config, out);
}

LETHE_API lethe_status lethe_random_labels(const lethe_model* original, const lethe_dataset* train,
                                           const lethe_split* split, const lethe_train_config* config,
                                           lethe_model** out) {
  return call("lethe_random_labels", [&] {
    emit(out, unlearning::random_labels(original->value, train->value, split->value, train_config_of(*config)));
  }, original, train, split, config, out);
}

LETHE_API void lethe_unlearn_config_default(lethe_unlearn_config* config) {
  if (!config) return;
  const unlearning::UnlearnConfig u;
  *config = {u.forget_epochs, u.retain_epochs,      u.lr,           u.batch_size,
             u.tau,           u.mask.ratio,         mask_type_of(u.mask.type), u.mask.gaussian_std,
             u.momentum,      u.weight_decay,       u.seed};
}

LETHE_API lethe_status lethe_unlearn(const lethe_model* original, const lethe_dataset* train,
                                     const lethe_split* split, const lethe_unlearn_config* config,
                                     lethe_unlearn_stats* stats, lethe_model** out) {
  return call("lethe_unlearn", [&] {
    unlearning::UnlearnConfig u;
    u.forget_epochs = config->forget_epochs;
    u.retain_epochs = config->retain_epochs;
    u.lr = config->lr;
    u.batch_size = config->batch_size;
    u.tau = config->tau;
    u.mask = {config->mask_ratio, mask_type_of(config->mask_type), config->gaussian_std};
    u.momentum = config->momentum;
    u.weight_decay = config->weight_decay;
    u.seed = config->seed;
    unlearning::UnlearnStats st;
    auto params = unlearning::unlearn(original->value, train->value, split->value, u, &st);
    if (stats) {
      *stats = {st.cos_pos_start, st.cos_pos_after_first, st.cos_neg_start,  st.cos_neg_after_first,
                st.forget_steps,  st.retain_steps,        st.forget_seconds, st.retain_seconds};
    }
    emit(out, std::move(params));
  }, original, train, split, config, out);
}

LETHE_API lethe_status lethe_evaluate(const lethe_model* model, const lethe_dataset* train, const lethe_split* split,
                                      lethe_metrics* out) {
  return call("lethe_evaluate", [&] {
    const auto r = eval::evaluate(model->value, train->value, split->value, "", 0);
    *out = {r.fa, r.ra, r.ta, r.mia};
  }, model, train, split, out);
}

LETHE_API lethe_status lethe_average_gap(const lethe_metrics* method, const lethe_metrics* retrain, lethe_gap* out) {
  return call("lethe_average_gap", [&] {
    const auto g = eval::average_gap(report_of(*method), report_of(*retrain));
    *out = {g.fa, g.ra, g.ta, g.mia, g.ag};
  }, method, retrain, out);
}

LETHE_API lethe_status lethe_masking_sweep(const lethe_model* model, const lethe_dataset* train,
                                           const lethe_split* split, const double* ratios, size_t ratio_count,
                                           const lethe_mask_type* types, size_t type_count, double gaussian_std,
                                           uint64_t seed, lethe_sweep_row* rows) {
  return call("lethe_masking_sweep", [&] {
    std::vector<masking::MaskType> ts;
    for (size_t i = 0; i < type_count; ++i) ts.push_back(mask_type_of(types[i]));
    const auto& s = split->value;
    const auto result =
        eval::masking_sweep(model->value, train->value.subset(s.forget), train->value.subset(s.retain), s.test,
                            std::span<const double>(ratios, ratio_count), ts, gaussian_std, seed);
    for (size_t i = 0; i < result.size(); ++i) {
      rows[i] = {result[i].ratio, mask_type_of(result[i].type), result[i].ta, result[i].mia};
    }
  }, model, train, split, ratios, types, rows);
}

}  // extern "C"
