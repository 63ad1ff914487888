#include "poolforge/prompt_fusion.hpp"

#include "poolforge/artifact_store.hpp"
#include "poolforge/util.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace poolforge {

const char* to_string(AttnScale s) { return s == AttnScale::head_d ? "head_d" : "full_d"; }

AttnScale attn_scale_from_string(const std::string& s) {
  if (s == "head_d") return AttnScale::head_d;
  if (s == "full_d") return AttnScale::full_d;
  throw ValidationError("attn_scale", "expected head_d or full_d, got '" + s + "'");
}

namespace {

template <typename M>
void fill_normal(M& m, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
}

struct BlobRef {
  const char* name;
  Eigen::Index rows;
  Eigen::Index cols;
};

}  // namespace

FusionParams<double> random_fusion_params(const FusionDims& dims, Rng& rng, double scale) {
  const auto d = dims.dim;
  FusionParams<double> p;
  p.heads = dims.heads;
  p.task_prompt.resize(dims.task_rows, d);
  p.gen_w1.resize(d, dims.hidden);
  p.gen_b1.resize(dims.hidden);
  p.gen_w2.resize(dims.hidden, dims.sample_rows * d);
  p.gen_b2.resize(dims.sample_rows * d);
  p.w_query.resize(d, d);
  p.w_key.resize(d, d);
  p.w_value.resize(d, d);
  p.out_proj.resize(d, d);
  fill_normal(p.task_prompt, rng, scale);
  fill_normal(p.gen_w1, rng, scale);
  fill_normal(p.gen_b1, rng, scale);
  fill_normal(p.gen_w2, rng, scale);
  fill_normal(p.gen_b2, rng, scale);
  fill_normal(p.w_query, rng, scale);
  fill_normal(p.w_key, rng, scale);
  fill_normal(p.w_value, rng, scale);
  fill_normal(p.out_proj, rng, scale);
  p.validate();
  return p;
}

void write_fusion_params(const FusionParams<double>& p, const fs::path& dir) {
  p.validate();
  fs::create_directories(dir);
  const std::vector<std::pair<BlobRef, const double*>> blobs = {
      {{"task_prompt", p.task_prompt.rows(), p.task_prompt.cols()}, p.task_prompt.data()},
      {{"gen_w1", p.gen_w1.rows(), p.gen_w1.cols()}, p.gen_w1.data()},
      {{"gen_b1", 1, p.gen_b1.size()}, p.gen_b1.data()},
      {{"gen_w2", p.gen_w2.rows(), p.gen_w2.cols()}, p.gen_w2.data()},
      {{"gen_b2", 1, p.gen_b2.size()}, p.gen_b2.data()},
      {{"w_query", p.dim(), p.dim()}, p.w_query.data()},
      {{"w_key", p.dim(), p.dim()}, p.w_key.data()},
      {{"w_value", p.dim(), p.dim()}, p.w_value.data()},
      {{"out_proj", p.dim(), p.dim()}, p.out_proj.data()},
  };
  json list = json::array();
  for (const auto& [ref, data] : blobs) {
    const auto count = static_cast<std::size_t>(ref.rows * ref.cols);
    std::vector<float> f(data, data + count);
    const std::string file = std::string(ref.name) + ".f32";
    write_f32_blob(dir / file, f.data(), f.size());
    list.push_back({{"name", ref.name}, {"dtype", "f32"}, {"shape", {ref.rows, ref.cols}}, {"file", file}});
  }
  json manifest = {{"m", p.task_rows()},   {"n", p.sample_rows()},  {"d", p.dim()},
                   {"l", p.hidden()},      {"heads", p.heads},      {"attn_scale", to_string(p.attn_scale)},
                   {"activation", "tanh"}, {"blobs", list}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

FusionParams<double> load_fusion_params(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ValidationError("fusion", "missing manifest.json");
  FusionParams<double> p;
  try {
    const json manifest = json::parse(read_file(dir / "manifest.json"));
    const auto m = manifest.at("m").get<Eigen::Index>();
    const auto n = manifest.at("n").get<Eigen::Index>();
    const auto d = manifest.at("d").get<Eigen::Index>();
    const auto l = manifest.at("l").get<Eigen::Index>();
    p.heads = manifest.at("heads").get<Eigen::Index>();
    p.attn_scale = attn_scale_from_string(manifest.at("attn_scale").get<std::string>());
    if (m < 1 || n < 1 || d < 1 || l < 1) throw ValidationError("fusion", "m, n, d, l must be positive");

    auto load = [&](const char* name, Eigen::Index rows, Eigen::Index cols) {
      for (const auto& b : manifest.at("blobs")) {
        if (b.at("name") != name) continue;
        const auto shape = b.at("shape").get<std::vector<Eigen::Index>>();
        if (shape != std::vector<Eigen::Index>{rows, cols})
          throw ValidationError(name, "shape disagrees with manifest sizes");
        const auto data = read_f32_blob(dir / b.at("file").get<std::string>(),
                                        static_cast<std::size_t>(rows * cols), name);
        RowMatrixd out(rows, cols);
        for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = data[static_cast<std::size_t>(i)];
        return out;
      }
      throw ValidationError(name, "not listed in fusion manifest");
    };
    p.task_prompt = load("task_prompt", m, d);
    p.gen_w1 = load("gen_w1", d, l);
    p.gen_b1 = load("gen_b1", 1, l);
    p.gen_w2 = load("gen_w2", l, n * d);
    p.gen_b2 = load("gen_b2", 1, n * d);
    p.w_query = load("w_query", d, d);
    p.w_key = load("w_key", d, d);
    p.w_value = load("w_value", d, d);
    p.out_proj = load("out_proj", d, d);
  } catch (const json::exception& e) {
    throw ValidationError("fusion", e.what());
  }
  p.validate();
  return p;
}

}  // namespace poolforge
