#include "doctest.h"
#include "support.hpp"

#include "poolforge/artifact_store.hpp"
#include "poolforge/util.hpp"

#include "json.hpp"

using namespace poolforge;
using testing::TempDir;

namespace {

PoolArtifacts tiny_pool() {
  PoolArtifacts a;
  a.sample_ids = {10, 11, 12};
  a.knowledge_features.resize(3, 2);
  a.knowledge_features << 1, 2, 3, 4, 5, 6;
  a.encoder_features = a.knowledge_features * 2.0f;
  a.word_probs.resize(3, 2);
  a.word_probs << 0.9f, 0.1f, 0.2f, 0.8f, 0.5f, 0.5f;
  a.label_words = {"bad", "good"};
  a.validate();
  return a;
}

std::string validation_field(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("manifest shape round-trip") {
  TempDir dir("art");
  write_artifacts(tiny_pool(), dir.path());
  const auto a = load_artifacts(dir.path());
  CHECK(a.size() == 3);
  CHECK(a.feature_dim() == 2);
  CHECK(a.num_classes() == 2);
  CHECK(a.sample_ids == std::vector<SampleId>{10, 11, 12});
  CHECK(a.row(12) == 2);
  CHECK_FALSE(a.has_texts());
  CHECK_FALSE(a.oracle_labels.has_value());
}

TEST_CASE("write then load is bit identical, including texts and oracle labels") {
  TempDir dir("art");
  const auto original = testing::random_pool(37, 5, 3, 7);
  write_artifacts(original, dir.path());
  const auto loaded = load_artifacts(dir.path());
  CHECK(loaded == original);
  // byte oracle, independent of operator==
  CHECK(std::memcmp(loaded.knowledge_features.data(), original.knowledge_features.data(), 37 * 5 * sizeof(float)) == 0);
  CHECK(std::memcmp(loaded.word_probs.data(), original.word_probs.data(), 37 * 3 * sizeof(float)) == 0);
  CHECK(loaded.texts == original.texts);
  CHECK(*loaded.oracle_labels == *original.oracle_labels);
}

TEST_CASE("two writes of the same input hash identically") {
  TempDir dir("art");
  const auto a = testing::random_pool(20, 4, 2, 3);
  write_artifacts(a, dir / "x");
  write_artifacts(a, dir / "y");
  CHECK(testing::tree_contents(dir / "x") == testing::tree_contents(dir / "y"));
  CHECK(directory_digest(dir / "x") == directory_digest(dir / "y"));
}

TEST_CASE("blobs are little-endian f32 in row-major order") {
  TempDir dir("art");
  write_artifacts(tiny_pool(), dir.path());
  const auto bytes = testing::slurp(dir / "knowledge_features.f32");
  REQUIRE(bytes.size() == 6 * 4);
  float v[6];
  for (int i = 0; i < 6; ++i) {
    std::uint32_t u = 0;
    for (int b = 3; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(4 * i + b)]);
    std::memcpy(&v[i], &u, 4);
  }
  CHECK(v[0] == 1.0f);
  CHECK(v[1] == 2.0f);
  CHECK(v[5] == 6.0f);
}

TEST_CASE("truncated blob reports the field") {
  TempDir dir("art");
  write_artifacts(tiny_pool(), dir.path());
  const auto file = dir / "word_probs.f32";
  fs::resize_file(file, fs::file_size(file) - 4);
  CHECK(validation_field([&] { load_artifacts(dir.path()); }) == "word_probs");
}

TEST_CASE("load errors name the offending field") {
  TempDir dir("art");
  SUBCASE("missing manifest") { CHECK(validation_field([&] { load_artifacts(dir.path()); }) == "manifest"); }
  SUBCASE("missing blob") {
    write_artifacts(tiny_pool(), dir.path());
    fs::remove(dir / "encoder_features.f32");
    CHECK(validation_field([&] { load_artifacts(dir.path()); }) == "encoder_features");
  }
  SUBCASE("non-finite value") {
    auto a = tiny_pool();
    write_artifacts(a, dir.path());
    const float nan = std::numeric_limits<float>::quiet_NaN();
    a.knowledge_features(1, 1) = nan;
    write_f32_blob(dir / "knowledge_features.f32", a.knowledge_features.data(), 6);
    CHECK(validation_field([&] { load_artifacts(dir.path()); }) == "knowledge_features");
  }
  SUBCASE("duplicate ids") {
    auto a = tiny_pool();
    a.sample_ids = {1, 2, 1};
    CHECK(validation_field([&] { a.validate(); }) == "sample_ids");
  }
  SUBCASE("word_probs outside [0, 1]") {
    auto a = tiny_pool();
    a.word_probs(0, 0) = 1.5f;
    CHECK(validation_field([&] { a.validate(); }) == "word_probs");
  }
  SUBCASE("single class") {
    auto a = tiny_pool();
    a.label_words = {"only"};
    a.word_probs = a.word_probs.leftCols(1).eval();
    CHECK(validation_field([&] { a.validate(); }) == "label_words");
  }
}

TEST_CASE("empty pool round-trips") {
  TempDir dir("art");
  PoolArtifacts a;
  a.knowledge_features.resize(0, 3);
  a.encoder_features.resize(0, 3);
  a.word_probs.resize(0, 2);
  a.label_words = {"a", "b"};
  a.validate();
  write_artifacts(a, dir.path());
  const auto loaded = load_artifacts(dir.path());
  CHECK(loaded.size() == 0);
  CHECK(loaded.feature_dim() == 3);
  CHECK(fs::file_size(dir / "word_probs.f32") == 0);
}

TEST_CASE("subset") {
  const auto a = testing::random_pool(10, 3, 2, 11);
  SUBCASE("all ids") { CHECK(subset(a, a.sample_ids) == a); }
  SUBCASE("no ids") { CHECK(subset(a, {}).size() == 0); }
  SUBCASE("odd ids match original rows") {
    const auto s = subset(a, {9, 1, 5, 3, 7});
    REQUIRE(s.size() == 5);
    CHECK(s.sample_ids == std::vector<SampleId>{1, 3, 5, 7, 9});
    for (Eigen::Index r = 0; r < 5; ++r) {
      const auto src = static_cast<Eigen::Index>(s.sample_ids[static_cast<std::size_t>(r)]);
      CHECK(s.knowledge_features.row(r) == a.knowledge_features.row(src));
      CHECK(s.encoder_features.row(r) == a.encoder_features.row(src));
      CHECK(s.word_probs.row(r) == a.word_probs.row(src));
      CHECK(s.texts[static_cast<std::size_t>(r)] == a.texts[static_cast<std::size_t>(src)]);
      CHECK((*s.oracle_labels)[static_cast<std::size_t>(r)] == (*a.oracle_labels)[static_cast<std::size_t>(src)]);
    }
  }
  SUBCASE("unknown id") { CHECK_THROWS_AS(subset(a, {42}), ValidationError); }
}

TEST_CASE("labeled set bookkeeping") {
  const auto pool = tiny_pool();
  LabeledSet s;
  s.add(10, 1, Provenance::seed);
  s.add(12, 0, Provenance::oracle);
  CHECK(s.size() == 2);
  CHECK(s.contains(12));
  CHECK_FALSE(s.contains(11));
  CHECK_THROWS_AS(s.add(10, 0, Provenance::human), ValidationError);
  CHECK_NOTHROW(s.validate_against(pool));
  s.add(99, 0, Provenance::human);
  CHECK_THROWS_AS(s.validate_against(pool), ValidationError);

  LabeledSet bad;
  bad.add(11, 5, Provenance::seed);
  CHECK_THROWS_AS(bad.validate_against(pool), ValidationError);

  for (auto p : {Provenance::seed, Provenance::oracle, Provenance::human})
    CHECK(provenance_from_string(to_string(p)) == p);
  CHECK_THROWS_AS(provenance_from_string("robot"), ValidationError);
}

TEST_CASE("manifest lists blobs with dtype and shape") {
  TempDir dir("art");
  write_artifacts(testing::random_pool(4, 3, 2, 1), dir.path());
  const auto m = nlohmann::json::parse(testing::slurp(dir / "manifest.json"));
  CHECK(m.at("n") == 4);
  CHECK(m.at("d") == 3);
  CHECK(m.at("c") == 2);
  bool saw_word_probs = false;
  for (const auto& b : m.at("blobs"))
    if (b.at("name") == "word_probs") {
      saw_word_probs = true;
      CHECK(b.at("dtype") == "f32");
      CHECK(b.at("shape") == nlohmann::json::array({4, 2}));
    }
  CHECK(saw_word_probs);
}
