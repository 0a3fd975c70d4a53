#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <json.hpp>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace lethe::data {

void LabeledDataset::validate() const {
  if (labels.empty()) throw ContractError("dataset: empty set");
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(2) != images.dim(3)) {
    throw DimensionError("dataset: images " + shape_string(images.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels of square images");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw LabelError("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.images = take(images, indices);
  out.class_count = class_count;
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

LabeledDataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.per_class == 0 || spec.image_size < 4 || spec.channels == 0 ||
      spec.marks_min > spec.marks_max || !(spec.amplitude_min <= spec.amplitude_max) || spec.noise_std < 0.0 ||
      !(spec.hard_fraction >= 0.0 && spec.hard_fraction <= 1.0) || spec.hard_amplitude < 0.0) {
    throw ConfigError("toy dataset: need >= 2 classes, >= 1 sample per class, image size >= 4, "
                      "marks_min <= marks_max, amplitude_min <= amplitude_max, noise_std >= 0 and "
                      "hard_fraction in [0, 1]");
  }
  const std::size_t n = spec.classes * spec.per_class, s = spec.image_size, c = spec.channels;
  const double pi = std::numbers::pi;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::uniform_real_distribution<double> amplitude(spec.amplitude_min, spec.amplitude_max);
  std::uniform_real_distribution<double> hard_amplitude(0.0, spec.hard_amplitude);
  std::bernoulli_distribution hard(spec.hard_fraction);
  std::uniform_int_distribution<std::size_t> mark_count(spec.marks_min, spec.marks_max);
  std::uniform_int_distribution<std::size_t> mark_pos(0, s - 3);
  std::bernoulli_distribution mark_sign(0.5);

  LabeledDataset ds;
  ds.class_count = spec.classes;
  ds.labels.resize(n);
  std::vector<double> px(n * c * s * s);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = i % spec.classes;
    ds.labels[i] = static_cast<int>(cls);
    const double angle = pi * static_cast<double>(cls) / static_cast<double>(spec.classes);
    const double freq = spec.base_frequency + static_cast<double>(cls % 2);
    const double phase = 0.7 * static_cast<double>(cls) + jitter(rng);
    const double amp = hard(rng) ? hard_amplitude(rng) : amplitude(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    double* img = px.data() + i * c * s * s;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double u = (static_cast<double>(x) * ca + static_cast<double>(y) * sa) / static_cast<double>(s);
          img[(ch * s + y) * s + x] = amp * std::sin(2.0 * pi * freq * u + phase + 0.5 * static_cast<double>(ch)) + noise(rng);
        }
    const auto marks = mark_count(rng);
    for (std::size_t m = 0; m < marks; ++m) {
      const auto y0 = mark_pos(rng), x0 = mark_pos(rng);
      const double v = mark_sign(rng) ? 2.5 : -2.5;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = y0; y < y0 + 3; ++y)
          for (std::size_t x = x0; x < x0 + 3; ++x) img[(ch * s + y) * s + x] = v;
    }
  }
  for (auto& v : px) v = static_cast<double>(static_cast<float>(v));
  ds.images = Tensor({n, c, s, s}, std::move(px));
  return ds;
}

void DataSplit::validate(std::size_t n) const {
  if (forget.size() + retain.size() != n) {
    throw ContractError("split: forget (" + std::to_string(forget.size()) + ") + retain (" +
                        std::to_string(retain.size()) + ") does not cover " + std::to_string(n) + " samples");
  }
  std::vector<bool> seen(n, false);
  for (const auto* list : {&forget, &retain}) {
    for (std::size_t j = 0; j < list->size(); ++j) {
      const auto i = (*list)[j];
      if (i >= n) throw ContractError("split: index " + std::to_string(i) + " out of range");
      if (seen[i]) throw ContractError("split: index " + std::to_string(i) + " appears twice");
      if (j > 0 && (*list)[j - 1] >= i) throw ContractError("split: index lists must be sorted ascending");
      seen[i] = true;
    }
  }
}

DataSplit split_random_forget(const LabeledDataset& train, const LabeledDataset& test, double ratio,
                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split: forget ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the result does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  DataSplit split;
  split.forget.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  split.retain.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(split.forget.begin(), split.forget.end());
  std::sort(split.retain.begin(), split.retain.end());
  split.test = test;
  split.validate(n);
  return split;
}

namespace {

constexpr std::string_view kMagic = "LTDS";

void add_bytes(std::uint64_t& sum, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) sum += (v >> (8 * i)) & 0xFFu;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  if (ds.class_count > 65536) throw FormatError("dataset: class count does not fit u16 labels");
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  w.u32(static_cast<std::uint32_t>(ds.image_size()));
  w.u32(static_cast<std::uint32_t>(ds.channels()));
  std::uint64_t sum = 0;
  for (double v : ds.images.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    add_bytes(sum, bits, 4);
    w.u32(bits);
  }
  for (int label : ds.labels) {
    add_bytes(sum, static_cast<std::uint16_t>(label), 2);
    w.u16(static_cast<std::uint16_t>(label));
  }
  w.u64(sum);
  return w.take();
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  if (r.bytes(kMagic.size()) != kMagic) r.fail_at(0, "bad magic, expected \"LTDS\"");
  const auto version_offset = r.offset();
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    r.fail_at(version_offset, "unsupported format version " + std::to_string(version) + " (this build reads " +
                                  std::to_string(kDatasetVersion) + ")");
  }
  const std::size_t n = r.u32(), classes = r.u32(), s = r.u32(), c = r.u32();
  const std::size_t pixels = n * c * s * s;
  if (r.remaining() / 4 < pixels) r.fail("truncated pixel block");
  std::uint64_t sum = 0;
  std::vector<double> px(pixels);
  for (auto& v : px) {
    const auto bits = r.u32();
    add_bytes(sum, bits, 4);
    v = static_cast<double>(std::bit_cast<float>(bits));
  }
  LabeledDataset ds;
  ds.class_count = classes;
  ds.labels.resize(n);
  for (auto& label : ds.labels) {
    const auto v = r.u16();
    add_bytes(sum, v, 2);
    label = v;
  }
  const auto trailer_offset = r.offset();
  const auto stored = r.u64();
  if (stored != sum) {
    r.fail_at(trailer_offset, "checksum mismatch (stored " + std::to_string(stored) + ", computed " +
                                  std::to_string(sum) + ")");
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checksum");
  try {
    ds.images = Tensor({n, c, s, s}, std::move(px));
    ds.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("dataset: invalid contents: ") + e.what());
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  io::write_file(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

std::string split_to_json(const DataSplit& split, double ratio, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["ratio"] = ratio;
  j["seed"] = seed;
  j["forget"] = split.forget;
  j["retain"] = split.retain;
  return j.dump() + "\n";
}

void save_split(const std::filesystem::path& path, const DataSplit& split, double ratio, std::uint64_t seed) {
  const auto text = split_to_json(split, ratio, seed);
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DataSplit load_split(const std::filesystem::path& path, LabeledDataset test, std::size_t n_train, double* ratio,
                     std::uint64_t* seed) {
  const auto bytes = io::read_file(path);
  DataSplit split;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    split.forget = j.at("forget").get<std::vector<std::size_t>>();
    split.retain = j.at("retain").get<std::vector<std::size_t>>();
    if (ratio) *ratio = j.at("ratio").get<double>();
    if (seed) *seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("split " + path.string() + ": " + e.what());
  }
  split.test = std::move(test);
  split.validate(n_train);
  return split;
}

}  // namespace lethe::data
