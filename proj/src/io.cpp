// Copyright 2026 The kktrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "kktrecon/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "kktrecon/error.hpp"

namespace kktrecon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used, 16);
  if (used != s.size()) throw ParseError("bad hex value '" + s + "'");
  return v;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

// ---------------------------------------------------------------------------
// float-32 payloads and JSON

void write_f32_blob(const fs::path& path, std::span<const double> values) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t w = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    words[i] = w;
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

std::vector<double> read_f32_blob(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected_count * 4) {
    throw ParseError("'" + path.string() + "' holds " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected_count * 4),
                     std::min(bytes.size(), expected_count * 4));
  }
  std::vector<double> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t w;
    std::memcpy(&w, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    values[i] = static_cast<double>(std::bit_cast<float>(w));
  }
  return values;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what(), e.byte);
  }
}

void write_json_file(const fs::path& path, const json& value) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << value.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// IDX

RawImageSet parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes) {
  if (image_bytes.size() < 16) throw ParseError("IDX image header truncated", image_bytes.size());
  if (const auto magic = read_be32(image_bytes, 0); magic != 0x00000803) {
    throw ParseError("bad IDX image magic 0x" + hex64(magic), 0);
  }
  const std::size_t count = read_be32(image_bytes, 4);
  const std::size_t rows = read_be32(image_bytes, 8);
  const std::size_t cols = read_be32(image_bytes, 12);
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() - 16 < count * pixels) {
    const std::size_t complete = (image_bytes.size() - 16) / std::max<std::size_t>(pixels, 1);
    throw ParseError("IDX image payload truncated after " + std::to_string(complete) + " of " +
                         std::to_string(count) + " images",
                     image_bytes.size());
  }

  if (label_bytes.size() < 8) throw ParseError("IDX label header truncated", label_bytes.size());
  if (const auto magic = read_be32(label_bytes, 0); magic != 0x00000801) {
    throw ParseError("bad IDX label magic 0x" + hex64(magic), 0);
  }
  const std::size_t label_count = read_be32(label_bytes, 4);
  if (label_count != count) {
    throw ParseError("IDX files disagree: " + std::to_string(count) + " images, " + std::to_string(label_count) +
                         " labels",
                     4);
  }
  if (label_bytes.size() - 8 < count) throw ParseError("IDX label payload truncated", label_bytes.size());

  RawImageSet set;
  set.shape = {rows, cols, 1};
  set.pixels = Matrix(count, pixels);
  double* dst = set.pixels.data();
  for (std::size_t i = 0; i < count * pixels; ++i) dst[i] = image_bytes[16 + i] / 255.0;
  set.labels.assign(label_bytes.begin() + 8, label_bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  return set;
}

RawImageSet load_idx_images(const fs::path& image_path, const fs::path& label_path) {
  const auto images = read_bytes(image_path);
  const auto labels = read_bytes(label_path);
  return parse_idx(images, labels);
}

void write_idx(const fs::path& image_path, const fs::path& label_path, const RawImageSet& images) {
  if (images.shape.channels != 1) throw ConfigError("IDX output supports single-channel images", "channels");
  ensure_parent(image_path);
  ensure_parent(label_path);
  std::ofstream img(image_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(label_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw Error("cannot write IDX files");
  const auto count = static_cast<std::uint32_t>(images.pixels.rows());
  put_be32(img, 0x00000803);
  put_be32(img, count);
  put_be32(img, static_cast<std::uint32_t>(images.shape.height));
  put_be32(img, static_cast<std::uint32_t>(images.shape.width));
  for (double v : images.pixels.values()) {
    img.put(static_cast<char>(static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)));
  }
  put_be32(lab, 0x00000801);
  put_be32(lab, count);
  for (int label : images.labels) lab.put(static_cast<char>(static_cast<std::uint8_t>(label)));
}

// ---------------------------------------------------------------------------
// flat float-32 matrices

RawImageSet load_flat_images(const fs::path& manifest_path) {
  const json manifest = read_json_file(manifest_path);
  const std::string where = manifest_path.string();
  if (field<std::string>(manifest, "format", where) != "f32-matrix") {
    throw ParseError(where + ": format must be 'f32-matrix'");
  }
  RawImageSet set;
  set.shape = {field<std::size_t>(manifest, "height", where), field<std::size_t>(manifest, "width", where),
               field<std::size_t>(manifest, "channels", where)};
  const auto rows = field<std::size_t>(manifest, "rows", where);
  set.labels = field<std::vector<int>>(manifest, "labels", where);
  if (set.labels.size() != rows) throw ParseError(where + ": label count differs from rows");
  const fs::path blob = resolve(manifest_path.parent_path(), field<std::string>(manifest, "data", where));
  set.pixels = Matrix(rows, set.shape.size(), read_f32_blob(blob, rows * set.shape.size()));
  for (double v : set.pixels.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParseError(where + ": pixel values must lie in [0, 1]");
  }
  return set;
}

void save_flat_images(const fs::path& manifest_path, const RawImageSet& images) {
  fs::path blob = manifest_path;
  blob += ".f32";
  write_f32_blob(blob, images.pixels.values());
  write_json_file(manifest_path, {{"format", "f32-matrix"},
                                  {"version", kFormatVersion},
                                  {"rows", images.pixels.rows()},
                                  {"height", images.shape.height},
                                  {"width", images.shape.width},
                                  {"channels", images.shape.channels},
                                  {"data", blob.filename().string()},
                                  {"labels", images.labels}});
}

// ---------------------------------------------------------------------------
// checkpoints

json spec_to_json(const ModelSpec& spec) {
  json bias = json::array();
  for (bool b : spec.bias) bias.push_back(b);
  return {{"widths", spec.widths}, {"bias", bias}};
}

ModelSpec spec_from_json(const json& value) {
  ModelSpec spec;
  spec.widths = field<std::vector<std::size_t>>(value, "widths", "model");
  if (value.contains("bias")) {
    for (const auto& b : value.at("bias")) spec.bias.push_back(b.get<bool>());
  } else {
    spec = ModelSpec::homogeneous(spec.widths);
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  checkpoint.spec.validate();
  if (checkpoint.theta.size() != checkpoint.spec.param_count()) {
    throw DimensionError("checkpoint theta length differs from the spec's parameter count");
  }
  fs::path blob = path;
  blob += ".f32";
  write_f32_blob(blob, checkpoint.theta.values());
  write_json_file(path, {{"format", "kktrecon-checkpoint"},
                         {"version", kFormatVersion},
                         {"spec", spec_to_json(checkpoint.spec)},
                         {"param_count", checkpoint.theta.size()},
                         {"blob", blob.filename().string()},
                         {"seed", checkpoint.seed},
                         {"optimizer", checkpoint.optimizer},
                         {"epochs", checkpoint.epochs},
                         {"final_train_loss", checkpoint.final_loss},
                         {"dataset", {{"fingerprint", hex64(checkpoint.dataset_fingerprint)},
                                      {"name", checkpoint.dataset_name}}}});
}

Checkpoint load_checkpoint(const fs::path& path) {
  const json manifest = read_json_file(path);
  const std::string where = path.string();
  if (field<std::string>(manifest, "format", where) != "kktrecon-checkpoint") {
    throw ParseError(where + ": not a checkpoint manifest");
  }
  if (field<int>(manifest, "version", where) != kFormatVersion) {
    throw ParseError(where + ": unsupported checkpoint version");
  }
  Checkpoint cp;
  try {
    cp.spec = spec_from_json(manifest.at("spec"));
  } catch (const ConfigError& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  const auto count = field<std::size_t>(manifest, "param_count", where);
  if (count != cp.spec.param_count()) {
    throw ParseError(where + ": param_count " + std::to_string(count) + " disagrees with spec (" +
                     std::to_string(cp.spec.param_count()) + ")");
  }
  cp.theta = ParamVector(read_f32_blob(resolve(path.parent_path(), field<std::string>(manifest, "blob", where)), count));
  cp.seed = field<std::uint64_t>(manifest, "seed", where);
  cp.optimizer = manifest.value("optimizer", json::object());
  cp.epochs = field<std::size_t>(manifest, "epochs", where);
  cp.final_loss = field<double>(manifest, "final_train_loss", where);
  const json& ds = manifest.at("dataset");
  cp.dataset_fingerprint = parse_hex64(field<std::string>(ds, "fingerprint", where));
  cp.dataset_name = field<std::string>(ds, "name", where);
  return cp;
}

// ---------------------------------------------------------------------------
// dataset manifests

std::string source_tag(DatasetManifest::Source source) {
  switch (source) {
    case DatasetManifest::Source::Circle2d:
      return "circle2d";
    case DatasetManifest::Source::Idx:
      return "idx";
    case DatasetManifest::Source::FlatF32:
      return "f32-matrix";
  }
  return "circle2d";
}

DatasetManifest::Source parse_source(const std::string& text) {
  if (text == "circle2d") return DatasetManifest::Source::Circle2d;
  if (text == "idx") return DatasetManifest::Source::Idx;
  if (text == "f32-matrix") return DatasetManifest::Source::FlatF32;
  throw ConfigError("unknown dataset source '" + text + "'", "dataset.source");
}

namespace {

std::string rule_key(LabelRule rule) {
  switch (rule) {
    case LabelRule::OddEven:
      return "odd-even";
    case LabelRule::VehiclesAnimals:
      return "vehicles-animals";
    case LabelRule::Custom:
      return "custom";
  }
  return "custom";
}

}  // namespace

void save_dataset_manifest(const fs::path& path, DatasetManifest manifest, std::span<const double> mean) {
  if (!mean.empty()) {
    fs::path blob = path;
    blob += ".mean.f32";
    write_f32_blob(blob, mean);
    manifest.mean_path = blob.filename();
  }
  write_json_file(path, {{"format", "kktrecon-dataset"},
                         {"version", kFormatVersion},
                         {"source", source_tag(manifest.source)},
                         {"images", manifest.images.string()},
                         {"labels", manifest.labels.string()},
                         {"test_images", manifest.test_images.string()},
                         {"test_labels", manifest.test_labels.string()},
                         {"rule", rule_key(manifest.rule)},
                         {"positive_classes", manifest.positive_classes},
                         {"negative_classes", manifest.negative_classes},
                         {"n", manifest.n},
                         {"n_test", manifest.n_test},
                         {"seed", manifest.seed},
                         {"mean", manifest.mean_path.string()},
                         {"dim", mean.size()},
                         {"fingerprint", hex64(manifest.fingerprint)},
                         {"name", manifest.name}});
}

DatasetManifest load_dataset_manifest(const fs::path& path) {
  const json j = read_json_file(path);
  const std::string where = path.string();
  if (field<std::string>(j, "format", where) != "kktrecon-dataset") throw ParseError(where + ": not a dataset manifest");
  DatasetManifest m;
  m.source = parse_source(field<std::string>(j, "source", where));
  m.images = field<std::string>(j, "images", where);
  m.labels = field<std::string>(j, "labels", where);
  m.test_images = field<std::string>(j, "test_images", where);
  m.test_labels = field<std::string>(j, "test_labels", where);
  m.rule = parse_label_rule(field<std::string>(j, "rule", where));
  m.positive_classes = field<std::vector<int>>(j, "positive_classes", where);
  m.negative_classes = field<std::vector<int>>(j, "negative_classes", where);
  m.n = field<std::size_t>(j, "n", where);
  m.n_test = field<std::size_t>(j, "n_test", where);
  m.seed = field<std::uint64_t>(j, "seed", where);
  m.mean_path = field<std::string>(j, "mean", where);
  m.fingerprint = parse_hex64(field<std::string>(j, "fingerprint", where));
  m.name = field<std::string>(j, "name", where);
  return m;
}

namespace {

RawImageSet load_raw(const DatasetManifest& m, const fs::path& images, const fs::path& labels,
                     const fs::path& base) {
  if (m.source == DatasetManifest::Source::Idx) return load_idx_images(resolve(base, images), resolve(base, labels));
  return load_flat_images(resolve(base, images));
}

LabeledDataset to_labeled(const DatasetManifest& m, const RawImageSet& raw, const std::string& name) {
  LabeledDataset ds;
  ds.x = raw.pixels;
  ds.y = binarize_labels(raw.labels, m.rule, m.positive_classes, m.negative_classes);
  ds.mean.assign(raw.pixels.cols(), 0.0);
  ds.name = name + " " + label_rule_tag(m.rule);
  ds.shape = raw.shape;
  return ds;
}

}  // namespace

NormalizedPair materialize_dataset(const DatasetManifest& m, const fs::path& base_dir) {
  if (m.source == DatasetManifest::Source::Circle2d) {
    LabeledDataset train = make_circle_2d(m.n);
    std::vector<double> zeros(train.dim(), 0.0);
    return {train, LabeledDataset{}, zeros};
  }
  const RawImageSet raw = load_raw(m, m.images, m.labels, base_dir);
  LabeledDataset pool = to_labeled(m, raw, m.images.filename().string());
  LabeledDataset train = balanced_subsample(pool, m.n, m.seed);
  LabeledDataset test;
  if (!m.test_images.empty() && m.n_test > 0) {
    const RawImageSet raw_test = load_raw(m, m.test_images, m.test_labels, base_dir);
    LabeledDataset test_pool = to_labeled(m, raw_test, m.test_images.filename().string());
    test = balanced_subsample(test_pool, m.n_test, m.seed + 1);
  }
  return normalize_by_train_mean(train, test);
}

}  // namespace kktrecon
