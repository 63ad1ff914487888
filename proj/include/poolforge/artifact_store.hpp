#pragma once

#include "poolforge/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace poolforge {

/// One snapshot of model outputs over the pool. Matrices are stored as
/// 32-bit reals (the on-disk precision); consumers widen to double.
struct PoolArtifacts {
  std::vector<SampleId> sample_ids;
  std::vector<std::string> texts;       // empty when the snapshot has no prose
  RowMatrixf knowledge_features;        // N x d, mask-position hidden vector
  RowMatrixf encoder_features;          // N x d, [CLS] vector
  RowMatrixf word_probs;                // N x C, per-label-word probability
  std::vector<std::string> label_words; // C verbalizer words
  std::optional<std::vector<ClassIndex>> oracle_labels;

  Eigen::Index size() const { return static_cast<Eigen::Index>(sample_ids.size()); }
  Eigen::Index feature_dim() const { return knowledge_features.cols(); }
  Eigen::Index num_classes() const { return static_cast<Eigen::Index>(label_words.size()); }
  bool has_texts() const { return !texts.empty() || sample_ids.empty(); }

  /// Checks every invariant and rebuilds the id -> row map. Throws
  /// ValidationError naming the offending field.
  void validate();

  /// Row of `id`; throws ValidationError for unknown ids. Requires validate().
  Eigen::Index row(SampleId id) const;
  bool contains(SampleId id) const { return index_.count(id) != 0; }

  friend bool operator==(const PoolArtifacts& a, const PoolArtifacts& b);

 private:
  std::unordered_map<SampleId, Eigen::Index> index_;
};

enum class Provenance { seed, oracle, human };
const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct LabeledEntry {
  SampleId id;
  ClassIndex label;
  Provenance provenance;
  friend bool operator==(const LabeledEntry&, const LabeledEntry&) = default;
};

/// Labeled samples in insertion order. Ids are unique.
class LabeledSet {
 public:
  void add(SampleId id, ClassIndex label, Provenance provenance);
  bool contains(SampleId id) const { return ids_.count(id) != 0; }
  const std::vector<LabeledEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<SampleId> ids() const;

  /// Checks ids exist in `pool` and labels are in [0, C).
  void validate_against(const PoolArtifacts& pool) const;

  friend bool operator==(const LabeledSet& a, const LabeledSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<LabeledEntry> entries_;
  std::unordered_map<SampleId, std::size_t> ids_;
};

PoolArtifacts load_artifacts(const std::filesystem::path& dir);
void write_artifacts(const PoolArtifacts& artifacts, const std::filesystem::path& dir);

/// Rows whose id is in `ids`, in ascending id order. Throws on unknown ids.
PoolArtifacts subset(const PoolArtifacts& artifacts, const std::vector<SampleId>& ids);

/// Widened copy of selected rows of a float matrix.
RowMatrixd gather_rows(const RowMatrixf& m, const std::vector<Eigen::Index>& rows);

// Blob helpers shared with the fusion parameter store.
void write_f32_blob(const std::filesystem::path& file, const float* data, std::size_t count);
std::vector<float> read_f32_blob(const std::filesystem::path& file, std::size_t expected,
                                 const std::string& field);

}  // namespace poolforge
