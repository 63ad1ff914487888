#pragma once

#include "poolforge/artifact_store.hpp"
#include "poolforge/rng.hpp"

#include <atomic>
#include <cstring>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <unistd.h>

namespace fs = std::filesystem;

namespace testing {

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("poolforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Every regular file under `dir` keyed by relative path.
inline std::map<std::string, std::string> tree_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  return out;
}

/// Small random pool: ids 0..n-1 unless `ids` is given, rows of word_probs in (0, 1).
inline poolforge::PoolArtifacts random_pool(Eigen::Index n, Eigen::Index d, Eigen::Index c, std::uint64_t seed,
                                            bool texts = true) {
  poolforge::Rng rng(seed);
  poolforge::PoolArtifacts a;
  a.knowledge_features.resize(n, d);
  a.encoder_features.resize(n, d);
  a.word_probs.resize(n, c);
  std::vector<poolforge::ClassIndex> labels;
  for (Eigen::Index i = 0; i < n; ++i) {
    a.sample_ids.push_back(i);
    for (Eigen::Index j = 0; j < d; ++j) {
      a.knowledge_features(i, j) = static_cast<float>(rng.normal());
      a.encoder_features(i, j) = static_cast<float>(rng.normal());
    }
    for (Eigen::Index j = 0; j < c; ++j) a.word_probs(i, j) = static_cast<float>(0.01 + 0.98 * rng.uniform());
    labels.push_back(static_cast<poolforge::ClassIndex>(rng.below(static_cast<std::uint64_t>(c))));
    if (texts) a.texts.push_back("sample " + std::to_string(i));
  }
  for (Eigen::Index j = 0; j < c; ++j) a.label_words.push_back("w" + std::to_string(j));
  a.oracle_labels = labels;
  a.validate();
  return a;
}

}  // namespace testing

namespace testing {

struct Mixture {
  poolforge::RowMatrixd points;
  std::vector<int> truth;
};

/// Isotropic Gaussian components with means `separation` apart along distinct axes.
inline Mixture gaussian_mixture(int k, int per, Eigen::Index d, double separation, double spread, std::uint64_t seed) {
  poolforge::Rng rng(seed);
  Mixture m;
  m.points.resize(k * per, d);
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < per; ++i) {
      const Eigen::Index r = c * per + i;
      for (Eigen::Index j = 0; j < d; ++j) m.points(r, j) = spread * rng.normal();
      m.points(r, c % d) += separation * spread * (1 + c / d);
      m.truth.push_back(c);
    }
  return m;
}

}  // namespace testing
