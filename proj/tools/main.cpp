#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lethe/lethe.h"
#include "run_config.hpp"

namespace fs = std::filesystem;
using lethe::cli::RunConfig;
using lethe::cli::RunError;
using lethe::cli::UsageError;
using Json = nlohmann::ordered_json;

namespace {

struct DatasetFree {
  void operator()(lethe_dataset* p) const { lethe_dataset_free(p); }
};
struct SplitFree {
  void operator()(lethe_split* p) const { lethe_split_free(p); }
};
struct ModelFree {
  void operator()(lethe_model* p) const { lethe_model_free(p); }
};
using Dataset = std::unique_ptr<lethe_dataset, DatasetFree>;
using Split = std::unique_ptr<lethe_split, SplitFree>;
using Model = std::unique_ptr<lethe_model, ModelFree>;

const std::vector<std::string> kMethods{"lethevit", "retrain", "ft", "ga", "rl"};
const std::set<std::string> kScopes{"train", "lethevit", "retrain", "ft", "ga", "rl", "sweep"};
const std::set<std::string> kKeys{
    "seed",        "classes",        "per_class",    "test_per_class", "image_size",   "channels",
    "noise_std",   "amplitude_min",  "amplitude_max", "hard_fraction", "hard_amplitude", "base_frequency",
    "marks_min",   "marks_max",      "forget_ratio", "test_seed",      "split_seed",   "patch_size",
    "depth",       "heads",          "dim",          "mlp_ratio",      "epochs",       "lr",
    "batch",       "momentum",       "weight_decay", "ef",             "er",           "tau",
    "ratio",       "mask_type",      "gaussian_std", "ratios",         "mask_types"};

// Library failures: config errors are the caller's fault (exit 2), the rest
// are runtime failures (exit 1).
void check(lethe_status status, const std::string& what) {
  if (status == LETHE_OK) return;
  const std::string msg = what + ": " + lethe_last_error();
  if (status == LETHE_ERR_CONFIG) throw UsageError(msg);
  throw RunError(msg);
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    for (const auto& s : sets) cfg.set(s);
    for (const auto& key : cfg.keys()) {
      const auto dot = key.find('.');
      const bool scoped = dot != std::string::npos;
      if (scoped && !kScopes.count(key.substr(0, dot))) throw UsageError("unknown config scope in key: " + key);
      if (!kKeys.count(scoped ? key.substr(dot + 1) : key)) throw UsageError("unknown config key: " + key);
    }
    return cfg;
  }

  fs::path out_dir() const {
    fs::create_directories(out);
    return out;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string short_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

lethe_mask_type parse_mask(const std::string& name) {
  if (name == "zero") return LETHE_MASK_ZERO;
  if (name == "gaussian") return LETHE_MASK_GAUSSIAN;
  throw UsageError("unknown mask type " + name + " (valid: zero, gaussian)");
}

const char* mask_name(lethe_mask_type t) { return t == LETHE_MASK_ZERO ? "zero" : "gaussian"; }

Dataset load_dataset(const fs::path& path) {
  lethe_dataset* d = nullptr;
  check(lethe_dataset_load(path.c_str(), &d), "loading " + path.string());
  return Dataset(d);
}

Model load_model(const fs::path& path) {
  lethe_model* m = nullptr;
  check(lethe_model_load(path.c_str(), &m), "loading " + path.string());
  return Model(m);
}

struct DataDir {
  Dataset train, test;
  Split split;
};

DataDir load_data_dir(const fs::path& dir) {
  DataDir d;
  d.train = load_dataset(dir / "train.ltds");
  d.test = load_dataset(dir / "test.ltds");
  lethe_split* s = nullptr;
  check(lethe_split_load((dir / "split.json").c_str(), d.train.get(), d.test.get(), &s),
        "loading " + (dir / "split.json").string());
  d.split.reset(s);
  return d;
}

Json output_entry(const fs::path& path) { return Json{{"path", path.string()}, {"sha256", lethe::cli::file_sha256(path)}}; }

Json checkpoint_entry(const fs::path& path, const lethe_model* model) {
  std::uint64_t sum = 0;
  check(lethe_model_checksum(model, &sum), "checksum");
  auto e = output_entry(path);
  e["checkpoint_checksum"] = sum;
  return e;
}

void save_model(const lethe_model* model, const fs::path& path) {
  check(lethe_model_save(model, path.c_str()), "saving " + path.string());
}

lethe_vit_config model_config(RunConfig& cfg, const lethe_dataset* train) {
  lethe_vit_config c;
  lethe_vit_config_default(&c);
  check(lethe_dataset_info(train, nullptr, &c.num_classes, &c.image_size, &c.channels), "dataset info");
  c.patch_size = cfg.count("patch_size", c.patch_size);
  c.depth = cfg.count("depth", c.depth);
  c.heads = cfg.count("heads", c.heads);
  c.dim = cfg.count("dim", c.dim);
  c.mlp_ratio = cfg.real("mlp_ratio", c.mlp_ratio);
  return c;
}

lethe_train_config train_config(RunConfig& cfg, std::uint64_t seed) {
  lethe_train_config t;
  lethe_train_config_default(&t);
  t.epochs = cfg.count("epochs");
  t.lr = cfg.real("lr");
  t.batch_size = cfg.count("batch");
  t.momentum = cfg.real("momentum", 0.0);
  t.weight_decay = cfg.real("weight_decay", 0.0);
  t.seed = seed;
  return t;
}

Json base_record(const std::string& command, const RunConfig& cfg) {
  return Json{{"command", command}, {"status", "ok"}, {"config", cfg.resolved()}};
}

int cmd_gen_data(const Common& common) {
  auto cfg = common.load();
  const auto t0 = std::chrono::steady_clock::now();
  lethe_toy_spec spec;
  lethe_toy_spec_default(&spec);
  spec.classes = cfg.count("classes", spec.classes);
  spec.per_class = cfg.count("per_class", spec.per_class);
  spec.image_size = cfg.count("image_size", spec.image_size);
  spec.channels = cfg.count("channels", spec.channels);
  spec.noise_std = cfg.real("noise_std", spec.noise_std);
  spec.amplitude_min = cfg.real("amplitude_min", spec.amplitude_min);
  spec.amplitude_max = cfg.real("amplitude_max", spec.amplitude_max);
  spec.hard_fraction = cfg.real("hard_fraction", spec.hard_fraction);
  spec.hard_amplitude = cfg.real("hard_amplitude", spec.hard_amplitude);
  spec.base_frequency = cfg.real("base_frequency", spec.base_frequency);
  spec.marks_min = cfg.count("marks_min", spec.marks_min);
  spec.marks_max = cfg.count("marks_max", spec.marks_max);
  const std::size_t test_per_class = cfg.count("test_per_class", 50);
  const double forget_ratio = cfg.real("forget_ratio", 0.1);
  const std::uint64_t seed = cfg.seed(common.seed);
  const std::uint64_t test_seed = cfg.count("test_seed", seed + 1);
  const std::uint64_t split_seed = cfg.count("split_seed", seed + 2);

  lethe_dataset *train = nullptr, *test = nullptr;
  check(lethe_dataset_generate(&spec, seed, &train), "generating training set");
  Dataset train_h(train);
  spec.per_class = test_per_class;
  check(lethe_dataset_generate(&spec, test_seed, &test), "generating test set");
  Dataset test_h(test);
  lethe_split* split = nullptr;
  check(lethe_split_random(train, test, forget_ratio, split_seed, &split), "splitting");
  Split split_h(split);

  const auto out = common.out_dir();
  check(lethe_dataset_save(train, (out / "train.ltds").c_str()), "saving training set");
  check(lethe_dataset_save(test, (out / "test.ltds").c_str()), "saving test set");
  check(lethe_split_save(split, (out / "split.json").c_str()), "saving split");

  std::size_t n_forget = 0, n_retain = 0, n_test = 0;
  check(lethe_split_sizes(split, &n_forget, &n_retain, &n_test), "split sizes");
  auto rec = base_record("gen-data", cfg);
  rec["seed"] = seed;
  rec["sizes"] = Json{{"forget", n_forget}, {"retain", n_retain}, {"test", n_test}};
  rec["outputs"] = Json::array(
      {output_entry(out / "train.ltds"), output_entry(out / "test.ltds"), output_entry(out / "split.json")});
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::printf("wrote %s: %zu forget, %zu retain, %zu test\n", out.c_str(), n_forget, n_retain, n_test);
  return 0;
}

int cmd_train(const Common& common, const std::string& data_dir) {
  auto cfg = common.load();
  cfg.set_scope("train");
  const auto t0 = std::chrono::steady_clock::now();
  auto train = load_dataset(fs::path(data_dir) / "train.ltds");
  const auto model_cfg = model_config(cfg, train.get());
  const auto seed = cfg.seed(common.seed);
  const auto tc = train_config(cfg, seed);
  lethe_model* m = nullptr;
  check(lethe_train_original(&model_cfg, train.get(), &tc, &m), "training");
  Model model(m);
  const double train_seconds = seconds_since(t0);

  const auto out = common.out_dir();
  save_model(model.get(), out / "original.ltvt");
  auto rec = base_record("train", cfg);
  rec["seed"] = seed;
  rec["inputs"] = Json{{"data", data_dir}};
  rec["outputs"] = Json::array({checkpoint_entry(out / "original.ltvt", model.get())});
  rec["phases"] = Json{{"train_seconds", train_seconds}};
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::printf("wrote %s\n", (out / "original.ltvt").c_str());
  return 0;
}

int cmd_unlearn(const Common& common, const std::string& method, const std::string& data_dir,
                const std::string& original_path) {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end()) {
    throw UsageError("unknown method " + method + " (valid: lethevit, retrain, ft, ga, rl)");
  }
  if (method != "retrain" && original_path.empty()) throw UsageError("--original is required for " + method);
  auto cfg = common.load();
  cfg.set_scope(method);
  const auto t0 = std::chrono::steady_clock::now();
  auto data = load_data_dir(data_dir);
  Model original;
  if (!original_path.empty()) original = load_model(original_path);
  const auto seed = cfg.seed(common.seed);

  Json phases = Json::object();
  Json extra = Json::object();
  lethe_model* m = nullptr;
  const auto tp = std::chrono::steady_clock::now();
  if (method == "lethevit") {
    lethe_unlearn_config u;
    lethe_unlearn_config_default(&u);
    u.forget_epochs = cfg.count("ef");
    u.retain_epochs = cfg.count("er");
    u.lr = cfg.real("lr");
    u.batch_size = cfg.count("batch");
    u.tau = cfg.real("tau", u.tau);
    u.mask_ratio = cfg.real("ratio", u.mask_ratio);
    u.mask_type = parse_mask(cfg.text("mask_type", mask_name(u.mask_type)));
    u.gaussian_std = cfg.real("gaussian_std", u.gaussian_std);
    u.momentum = cfg.real("momentum", 0.0);
    u.weight_decay = cfg.real("weight_decay", 0.0);
    u.seed = seed;
    lethe_unlearn_stats st;
    check(lethe_unlearn(original.get(), data.train.get(), data.split.get(), &u, &st, &m), "unlearning");
    phases = Json{{"forget_seconds", st.forget_seconds}, {"retain_seconds", st.retain_seconds}};
    extra = Json{{"forget_steps", st.forget_steps},
                 {"retain_steps", st.retain_steps},
                 {"cos_pos_start", st.cos_pos_start},
                 {"cos_pos_after_first_epoch", st.cos_pos_after_first},
                 {"cos_neg_start", st.cos_neg_start},
                 {"cos_neg_after_first_epoch", st.cos_neg_after_first}};
  } else if (method == "retrain") {
    lethe_vit_config mc;
    if (original) {
      check(lethe_model_config(original.get(), &mc), "model config");
    } else {
      mc = model_config(cfg, data.train.get());
    }
    const auto tc = train_config(cfg, seed);
    check(lethe_retrain(&mc, data.train.get(), data.split.get(), &tc, &m), "retraining");
    phases = Json{{"retain_seconds", seconds_since(tp)}};
  } else {
    const auto tc = train_config(cfg, seed);
    if (method == "ft") {
      check(lethe_fine_tune(original.get(), data.train.get(), data.split.get(), &tc, &m), "fine-tuning");
      phases = Json{{"retain_seconds", seconds_since(tp)}};
    } else if (method == "ga") {
      check(lethe_gradient_ascent(original.get(), data.train.get(), data.split.get(), &tc, &m), "gradient ascent");
      phases = Json{{"forget_seconds", seconds_since(tp)}};
    } else {
      check(lethe_random_labels(original.get(), data.train.get(), data.split.get(), &tc, &m), "random labels");
      phases = Json{{"relabel_seconds", seconds_since(tp)}};
    }
  }
  Model model(m);

  const auto out = common.out_dir();
  const auto path = out / (method + ".ltvt");
  save_model(model.get(), path);
  auto rec = base_record("unlearn", cfg);
  rec["method"] = method;
  rec["seed"] = seed;
  rec["inputs"] = Json{{"data", data_dir}, {"original", original_path}};
  rec["outputs"] = Json::array({checkpoint_entry(path, model.get())});
  rec["phases"] = phases;
  if (!extra.empty()) rec["stats"] = extra;
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

struct NamedModel {
  std::string name;
  std::string path;
};

NamedModel parse_named_model(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw UsageError("--model expects NAME=PATH, got \"" + spec + "\"");
  }
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

bool is_retrain(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  return name == "retrain";
}

int cmd_evaluate(const Common& common, const std::string& data_dir, const std::vector<std::string>& model_specs) {
  auto cfg = common.load();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<NamedModel> models;
  for (const auto& s : model_specs) models.push_back(parse_named_model(s));
  const auto retrain_count = std::count_if(models.begin(), models.end(), [](const auto& m) { return is_retrain(m.name); });
  if (retrain_count != 1) throw UsageError("evaluate needs exactly one --model retrain=PATH");
  std::stable_partition(models.begin(), models.end(), [](const auto& m) { return is_retrain(m.name); });
  const auto seed = cfg.seed(common.seed);
  auto data = load_data_dir(data_dir);

  std::vector<lethe_metrics> metrics(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto model = load_model(models[i].path);
    check(lethe_evaluate(model.get(), data.train.get(), data.split.get(), &metrics[i]), "evaluating " + models[i].name);
  }
  std::ostringstream csv;
  csv << "method,seed,FA,RA,TA,MIA,dFA,dRA,dTA,dMIA,AG\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    lethe_gap g;
    check(lethe_average_gap(&metrics[i], &metrics[0], &g), "average gap");
    const auto& m = metrics[i];
    csv << models[i].name << ',' << seed;
    for (double v : {m.fa, m.ra, m.ta, m.mia, g.fa, g.ra, g.ta, g.mia, g.ag}) csv << ',' << fixed(v, 6);
    csv << '\n';
  }
  const auto out = common.out_dir();
  lethe::cli::write_text(out / "metrics.csv", csv.str());

  auto rec = base_record("evaluate", cfg);
  rec["seed"] = seed;
  Json inputs = Json{{"data", data_dir}};
  for (const auto& m : models) inputs[m.name] = m.path;
  rec["inputs"] = inputs;
  rec["outputs"] = Json::array({output_entry(out / "metrics.csv")});
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::cout << csv.str();
  return 0;
}

int cmd_sweep(const Common& common, const std::string& data_dir, const std::string& model_path) {
  auto cfg = common.load();
  cfg.set_scope("sweep");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ratios;
  for (const auto& r : cfg.list("ratios", "0,0.05,0.1,0.2,0.3")) {
    try {
      std::size_t used = 0;
      ratios.push_back(std::stod(r, &used));
      if (used != r.size()) throw std::invalid_argument(r);
    } catch (const std::exception&) {
      throw UsageError("config key ratios: not a number: \"" + r + "\"");
    }
  }
  std::vector<lethe_mask_type> types;
  for (const auto& t : cfg.list("mask_types", "zero,gaussian")) types.push_back(parse_mask(t));
  const double gaussian_std = cfg.real("gaussian_std", 1.0);
  const auto seed = cfg.seed(common.seed);
  auto data = load_data_dir(data_dir);
  auto model = load_model(model_path);

  std::vector<lethe_sweep_row> rows(ratios.size() * types.size());
  check(lethe_masking_sweep(model.get(), data.train.get(), data.split.get(), ratios.data(), ratios.size(),
                            types.data(), types.size(), gaussian_std, seed, rows.data()),
        "masking sweep");
  std::ostringstream csv;
  csv << "ratio,mask_type,ta,mia\n";
  for (const auto& r : rows) {
    csv << short_real(r.ratio) << ',' << mask_name(r.mask_type) << ',' << fixed(r.ta, 6) << ',' << fixed(r.mia, 6)
        << '\n';
  }
  const auto out = common.out_dir();
  lethe::cli::write_text(out / "sweep.csv", csv.str());

  auto rec = base_record("sweep-mask", cfg);
  rec["seed"] = seed;
  rec["inputs"] = Json{{"data", data_dir}, {"model", model_path}};
  rec["outputs"] = Json::array({output_entry(out / "sweep.csv")});
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::cout << csv.str();
  return 0;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  std::istringstream in(lethe::cli::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw UsageError(path.string() + ": expected header \"" + header + "\"");
  }
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) throw UsageError(path.string() + ": malformed row \"" + line + "\"");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double cell_number(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(path.string() + ": not a number: \"" + s + "\"");
}

int cmd_report(const Common& common, const std::vector<std::string>& metric_files,
               const std::vector<std::string>& sweep_files) {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream md;
  md << "# Unlearning report\n\n## Metrics\n\n";
  md << "| Method | Seed | FA | RA | TA | MIA | AG |\n|---|---:|---:|---:|---:|---:|---:|\n";

  struct Mean {
    std::string method;
    std::size_t n = 0;
    double sums[5] = {0, 0, 0, 0, 0};
  };
  std::vector<Mean> means;
  for (const auto& f : metric_files) {
    for (const auto& row : read_csv(f, "method,seed,FA,RA,TA,MIA,dFA,dRA,dTA,dMIA,AG")) {
      const double v[5] = {cell_number(row[2], f), cell_number(row[3], f), cell_number(row[4], f),
                           cell_number(row[5], f), cell_number(row[10], f)};
      md << "| " << row[0] << " | " << row[1];
      for (double x : v) md << " | " << fixed(x, 2);
      md << " |\n";
      auto it = std::find_if(means.begin(), means.end(), [&](const Mean& m) { return m.method == row[0]; });
      if (it == means.end()) {
        means.push_back({row[0]});
        it = means.end() - 1;
      }
      ++it->n;
      for (int k = 0; k < 5; ++k) it->sums[k] += v[k];
    }
  }
  md << "\n## Mean over runs\n\n";
  md << "| Method | Runs | FA | RA | TA | MIA | AG |\n|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& m : means) {
    md << "| " << m.method << " | " << m.n;
    for (double s : m.sums) md << " | " << fixed(s / static_cast<double>(m.n), 2);
    md << " |\n";
  }
  if (!sweep_files.empty()) {
    md << "\n## Masking sweep\n\n| Ratio | Mask | TA | MIA |\n|---:|---|---:|---:|\n";
    for (const auto& f : sweep_files) {
      for (const auto& row : read_csv(f, "ratio,mask_type,ta,mia")) {
        md << "| " << fixed(cell_number(row[0], f), 2) << " | " << row[1] << " | "
           << fixed(cell_number(row[2], f), 2) << " | " << fixed(cell_number(row[3], f), 2) << " |\n";
      }
    }
  }
  const auto out = common.out_dir();
  lethe::cli::write_text(out / "report.md", md.str());

  Json rec{{"command", "report"}, {"status", "ok"}};
  rec["inputs"] = Json{{"metrics", metric_files}, {"sweeps", sweep_files}};
  rec["outputs"] = Json::array({output_entry(out / "report.md")});
  rec["wall_seconds"] = seconds_since(t0);
  lethe::cli::append_manifest(out, rec);
  std::cout << md.str();
  return 0;
}

// Reports a failed run and records it in the manifest when the output
// directory already exists.
int fail(const Common& common, const std::string& command, const std::string& message, int code) {
  std::cerr << "error: " << message << '\n';
  std::error_code ec;
  if (!common.out.empty() && fs::is_directory(common.out, ec)) {
    try {
      lethe::cli::append_manifest(
          common.out, Json{{"command", command}, {"status", "error"}, {"exit_code", code}, {"message", message}});
    } catch (const std::exception&) {
    }
  }
  return code;
}

void add_common(CLI::App* cmd, Common& common, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", common.config_path, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", common.sets, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", common.seed, "seed; falls back to the config, then LETHE_SEED");
  }
  cmd->add_option("--out", common.out, "output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided contrastive unlearning for vision transformers"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, method, original, model_path;
  std::vector<std::string> models, metric_files, sweep_files;

  auto* gen = app.add_subcommand("gen-data", "generate the toy train/test sets and a forget split");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "train the original model on the full training set");
  add_common(train, common);
  train->add_option("--data", data_dir, "directory written by gen-data")->required()->check(CLI::ExistingDirectory);

  auto* unlearn = app.add_subcommand("unlearn", "produce an unlearned model");
  add_common(unlearn, common);
  unlearn->add_option("--method", method, "lethevit, retrain, ft, ga or rl")->required();
  unlearn->add_option("--data", data_dir, "directory written by gen-data")->required()->check(CLI::ExistingDirectory);
  unlearn->add_option("--original", original, "checkpoint of the original model")->check(CLI::ExistingFile);

  auto* evaluate = app.add_subcommand("evaluate", "FA, RA, TA, MIA and gaps against retrain as CSV");
  add_common(evaluate, common);
  evaluate->add_option("--data", data_dir, "directory written by gen-data")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--model", models, "NAME=PATH, repeatable; one must be retrain")->required();

  auto* sweep = app.add_subcommand("sweep-mask", "TA and MIA of a model under attention-guided masking");
  add_common(sweep, common);
  sweep->add_option("--data", data_dir, "directory written by gen-data")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--model", model_path, "checkpoint, normally the retrained model")
      ->required()
      ->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "markdown summary of metrics and sweep CSVs");
  add_common(report, common, false);
  report->add_option("--metrics", metric_files, "metrics CSV, repeatable")->required()->check(CLI::ExistingFile);
  report->add_option("--sweep", sweep_files, "sweep CSV, repeatable")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen-data") return cmd_gen_data(common);
    if (command == "train") return cmd_train(common, data_dir);
    if (command == "unlearn") return cmd_unlearn(common, method, data_dir, original);
    if (command == "evaluate") return cmd_evaluate(common, data_dir, models);
    if (command == "sweep-mask") return cmd_sweep(common, data_dir, model_path);
    return cmd_report(common, metric_files, sweep_files);
  } catch (const UsageError& e) {
    return fail(common, command, e.what(), 2);
  } catch (const std::exception& e) {
    return fail(common, command, e.what(), 1);
  }
}
