#include "poolforge/artifact_store.hpp"

#include "poolforge/util.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace poolforge {

namespace {

template <typename T>
T byteswap(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
void write_le_blob(const fs::path& file, const T* data, std::size_t count) {
  std::string bytes(count * sizeof(T), '\0');
  for (std::size_t i = 0; i < count; ++i) {
    T v = data[i];
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    std::memcpy(bytes.data() + i * sizeof(T), &v, sizeof(T));
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(file.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError(file.string(), "write failed");
}

template <typename T>
std::vector<T> read_le_blob(const fs::path& file, std::size_t expected, const std::string& field) {
  if (!fs::exists(file)) throw ValidationError(field, "missing file " + file.filename().string());
  const std::string bytes = read_file(file);
  if (bytes.size() != expected * sizeof(T)) {
    std::ostringstream msg;
    msg << "dimension mismatch: manifest implies " << expected * sizeof(T) << " bytes, blob has "
        << bytes.size();
    throw ValidationError(field, msg.str());
  }
  std::vector<T> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    out[i] = v;
  }
  return out;
}

void check_finite(const RowMatrixf& m, const char* field) {
  if (!m.allFinite()) throw ValidationError(field, "contains NaN or infinity");
}

json blob_entry(const std::string& name, const std::string& dtype, std::vector<Eigen::Index> shape,
                const std::string& file) {
  return json{{"name", name}, {"dtype", dtype}, {"shape", shape}, {"file", file}};
}

const json& find_blob(const json& manifest, const std::string& name) {
  for (const auto& b : manifest.at("blobs"))
    if (b.at("name") == name) return b;
  throw ValidationError(name, "not listed in manifest");
}

RowMatrixf load_matrix(const fs::path& dir, const json& manifest, const std::string& name,
                       Eigen::Index rows, Eigen::Index cols) {
  const json& entry = find_blob(manifest, name);
  const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols)
    throw ValidationError(name, "shape in blob list disagrees with manifest n/d/c");
  if (entry.at("dtype") != "f32") throw ValidationError(name, "expected dtype f32");
  auto data = read_le_blob<float>(dir / entry.at("file").get<std::string>(),
                                  static_cast<std::size_t>(rows * cols), name);
  RowMatrixf m(rows, cols);
  if (!data.empty()) std::memcpy(m.data(), data.data(), data.size() * sizeof(float));
  return m;
}

}  // namespace

void write_f32_blob(const fs::path& file, const float* data, std::size_t count) {
  write_le_blob(file, data, count);
}

std::vector<float> read_f32_blob(const fs::path& file, std::size_t expected, const std::string& field) {
  return read_le_blob<float>(file, expected, field);
}

void PoolArtifacts::validate() {
  const auto n = size();
  if (num_classes() < 2) throw ValidationError("label_words", "need at least 2 classes");
  if (knowledge_features.cols() <= 0) throw ValidationError("knowledge_features", "d must be positive");
  if (knowledge_features.rows() != n) throw ValidationError("knowledge_features", "row count != n");
  if (encoder_features.rows() != n) throw ValidationError("encoder_features", "row count != n");
  if (encoder_features.cols() != knowledge_features.cols())
    throw ValidationError("encoder_features", "column count != d");
  if (word_probs.rows() != n) throw ValidationError("word_probs", "row count != n");
  if (word_probs.cols() != num_classes()) throw ValidationError("word_probs", "column count != c");
  if (!texts.empty() && static_cast<Eigen::Index>(texts.size()) != n)
    throw ValidationError("texts", "line count != n");
  check_finite(knowledge_features, "knowledge_features");
  check_finite(encoder_features, "encoder_features");
  check_finite(word_probs, "word_probs");
  if ((word_probs.array() < 0.0f).any() || (word_probs.array() > 1.0f).any())
    throw ValidationError("word_probs", "entries must lie in [0, 1]");
  if (oracle_labels) {
    if (static_cast<Eigen::Index>(oracle_labels->size()) != n)
      throw ValidationError("oracle_labels", "length != n");
    for (auto y : *oracle_labels)
      if (y < 0 || y >= num_classes()) throw ValidationError("oracle_labels", "label out of range");
  }
  index_.clear();
  index_.reserve(sample_ids.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const SampleId id = sample_ids[static_cast<std::size_t>(i)];
    if (id < 0) throw ValidationError("sample_ids", "negative id " + std::to_string(id));
    if (!index_.emplace(id, i).second)
      throw ValidationError("sample_ids", "duplicate id " + std::to_string(id));
  }
}

Eigen::Index PoolArtifacts::row(SampleId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("sample_ids", "unknown id " + std::to_string(id));
  return it->second;
}

bool operator==(const PoolArtifacts& a, const PoolArtifacts& b) {
  auto same = [](const RowMatrixf& x, const RowMatrixf& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           (x.size() == 0 || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  };
  return a.sample_ids == b.sample_ids && a.texts == b.texts && a.label_words == b.label_words &&
         a.oracle_labels == b.oracle_labels && same(a.knowledge_features, b.knowledge_features) &&
         same(a.encoder_features, b.encoder_features) && same(a.word_probs, b.word_probs);
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::seed: return "seed";
    case Provenance::oracle: return "oracle";
    case Provenance::human: return "human";
  }
  return "?";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "seed") return Provenance::seed;
  if (s == "oracle") return Provenance::oracle;
  if (s == "human") return Provenance::human;
  throw ValidationError("provenance", "unknown value '" + s + "'");
}

void LabeledSet::add(SampleId id, ClassIndex label, Provenance provenance) {
  if (!ids_.emplace(id, entries_.size()).second)
    throw ValidationError("labeled", "id " + std::to_string(id) + " already labeled");
  entries_.push_back({id, label, provenance});
}

std::vector<SampleId> LabeledSet::ids() const {
  std::vector<SampleId> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.id);
  return out;
}

void LabeledSet::validate_against(const PoolArtifacts& pool) const {
  for (const auto& e : entries_) {
    if (!pool.contains(e.id)) throw ValidationError("labeled", "unknown id " + std::to_string(e.id));
    if (e.label < 0 || e.label >= pool.num_classes())
      throw ValidationError("labeled", "label out of range for id " + std::to_string(e.id));
  }
}

PoolArtifacts load_artifacts(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ValidationError("manifest", "missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError("manifest", std::string("unparseable: ") + e.what());
  }

  PoolArtifacts a;
  try {
    const auto n = manifest.at("n").get<Eigen::Index>();
    const auto d = manifest.at("d").get<Eigen::Index>();
    const auto c = manifest.at("c").get<Eigen::Index>();
    if (n < 0) throw ValidationError("n", "negative");
    if (d <= 0) throw ValidationError("d", "must be positive");
    a.label_words = manifest.at("label_words").get<std::vector<std::string>>();
    if (static_cast<Eigen::Index>(a.label_words.size()) != c)
      throw ValidationError("label_words", "length != c");

    const json& ids_entry = find_blob(manifest, "sample_ids");
    if (ids_entry.at("dtype") != "u64") throw ValidationError("sample_ids", "expected dtype u64");
    auto raw_ids = read_le_blob<std::uint64_t>(dir / ids_entry.at("file").get<std::string>(),
                                               static_cast<std::size_t>(n), "sample_ids");
    a.sample_ids.assign(raw_ids.begin(), raw_ids.end());

    a.knowledge_features = load_matrix(dir, manifest, "knowledge_features", n, d);
    a.encoder_features = load_matrix(dir, manifest, "encoder_features", n, d);
    a.word_probs = load_matrix(dir, manifest, "word_probs", n, c);

    if (manifest.at("has_texts").get<bool>()) {
      std::istringstream lines(read_file(dir / "texts.jsonl"));
      std::string line;
      while (std::getline(lines, line)) a.texts.push_back(json::parse(line).get<std::string>());
      if (static_cast<Eigen::Index>(a.texts.size()) != n) throw ValidationError("texts", "line count != n");
    }
    if (manifest.at("has_oracle_labels").get<bool>()) {
      const json& entry = find_blob(manifest, "oracle_labels");
      auto labels = read_le_blob<std::uint32_t>(dir / entry.at("file").get<std::string>(),
                                                static_cast<std::size_t>(n), "oracle_labels");
      std::vector<ClassIndex> out;
      out.reserve(labels.size());
      for (auto y : labels) {
        if (y >= static_cast<std::uint32_t>(c)) throw ValidationError("oracle_labels", "label out of range");
        out.push_back(static_cast<ClassIndex>(y));
      }
      a.oracle_labels = std::move(out);
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
  a.validate();
  return a;
}

void write_artifacts(const PoolArtifacts& a, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError(dir.string(), "unwritable path");

  const auto n = a.size();
  const auto d = a.feature_dim();
  const auto c = a.num_classes();
  json blobs = json::array();
  blobs.push_back(blob_entry("sample_ids", "u64", {n}, "sample_ids.u64"));
  blobs.push_back(blob_entry("knowledge_features", "f32", {n, d}, "knowledge_features.f32"));
  blobs.push_back(blob_entry("encoder_features", "f32", {n, d}, "encoder_features.f32"));
  blobs.push_back(blob_entry("word_probs", "f32", {n, c}, "word_probs.f32"));

  std::vector<std::uint64_t> ids(a.sample_ids.begin(), a.sample_ids.end());
  write_le_blob(dir / "sample_ids.u64", ids.data(), ids.size());
  write_le_blob(dir / "knowledge_features.f32", a.knowledge_features.data(),
                static_cast<std::size_t>(a.knowledge_features.size()));
  write_le_blob(dir / "encoder_features.f32", a.encoder_features.data(),
                static_cast<std::size_t>(a.encoder_features.size()));
  write_le_blob(dir / "word_probs.f32", a.word_probs.data(), static_cast<std::size_t>(a.word_probs.size()));

  const bool has_texts = !a.texts.empty();
  if (has_texts) {
    std::string lines;
    for (const auto& t : a.texts) lines += json(t).dump() + "\n";
    write_file_atomic(dir / "texts.jsonl", lines);
  }
  if (a.oracle_labels) {
    std::vector<std::uint32_t> labels(a.oracle_labels->begin(), a.oracle_labels->end());
    write_le_blob(dir / "oracle_labels.u32", labels.data(), labels.size());
    blobs.push_back(blob_entry("oracle_labels", "u32", {n}, "oracle_labels.u32"));
  }

  json manifest = {{"n", n},
                   {"d", d},
                   {"c", c},
                   {"label_words", a.label_words},
                   {"has_texts", has_texts},
                   {"has_oracle_labels", a.oracle_labels.has_value()},
                   {"blobs", blobs}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

PoolArtifacts subset(const PoolArtifacts& a, const std::vector<SampleId>& ids) {
  std::vector<SampleId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<Eigen::Index> rows;
  rows.reserve(sorted.size());
  for (auto id : sorted) rows.push_back(a.row(id));

  const auto m = static_cast<Eigen::Index>(rows.size());
  PoolArtifacts out;
  out.label_words = a.label_words;
  out.sample_ids = sorted;
  out.knowledge_features.resize(m, a.knowledge_features.cols());
  out.encoder_features.resize(m, a.encoder_features.cols());
  out.word_probs.resize(m, a.word_probs.cols());
  if (a.oracle_labels) out.oracle_labels.emplace();
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)];
    out.knowledge_features.row(i) = a.knowledge_features.row(r);
    out.encoder_features.row(i) = a.encoder_features.row(r);
    out.word_probs.row(i) = a.word_probs.row(r);
    if (!a.texts.empty()) out.texts.push_back(a.texts[static_cast<std::size_t>(r)]);
    if (a.oracle_labels) out.oracle_labels->push_back((*a.oracle_labels)[static_cast<std::size_t>(r)]);
  }
  out.validate();
  return out;
}

RowMatrixd gather_rows(const RowMatrixf& m, const std::vector<Eigen::Index>& rows) {
  RowMatrixd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]).cast<double>();
  return out;
}

}  // namespace poolforge
