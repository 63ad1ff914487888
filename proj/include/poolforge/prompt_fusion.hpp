#pragma once

// Reference forward math of the sample-aware dynamic soft prompt:
//   S(x) = reshape(tanh(E(x) W1 + b1) W2 + b2)            n x d
//   P*   = [T; S(x)]                                       (m+n) x d
//   head_i = softmax(P* Wq_i (P* Wk_i)^T / sqrt(s)) P* Wv_i
//   P(x) = [head_1 ... head_H] Wo                          (m+n) x d
// with s = d/H (head_d) or d (full_d). Head i owns the column block
// [i*d/H, (i+1)*d/H) of the d x d projection matrices.
//
// Everything is templated on the scalar so the same code runs in float,
// double, or an autodiff scalar.

#include "poolforge/common.hpp"
#include "poolforge/rng.hpp"

#include <cmath>
#include <filesystem>
#include <type_traits>
#include <vector>

namespace poolforge {

enum class AttnScale { head_d, full_d };

const char* to_string(AttnScale s);
AttnScale attn_scale_from_string(const std::string& s);

namespace detail {
template <typename S>
double to_double(const S& s) {
  if constexpr (std::is_arithmetic_v<S>)
    return static_cast<double>(s);
  else
    return to_double(s.value());
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(to_double(m(i, j)))) return false;
  return true;
}
}  // namespace detail

/// Sizes of the fusion block. Defaults are the published configuration:
/// 4 task-prompt rows, 1 sample-prompt row, d = 768, l = 256, 4 heads.
struct FusionDims {
  Eigen::Index task_rows = 4;    // m
  Eigen::Index sample_rows = 1;  // n
  Eigen::Index dim = 768;        // d
  Eigen::Index hidden = 256;     // l
  Eigen::Index heads = 4;        // H
};

template <typename Scalar>
struct FusionParams {
  RowMatrix<Scalar> task_prompt;  // m x d
  RowMatrix<Scalar> gen_w1;       // d x l
  RowVector<Scalar> gen_b1;       // l
  RowMatrix<Scalar> gen_w2;       // l x (n*d)
  RowVector<Scalar> gen_b2;       // n*d
  RowMatrix<Scalar> w_query;      // d x d, H column blocks of d/H
  RowMatrix<Scalar> w_key;
  RowMatrix<Scalar> w_value;
  RowMatrix<Scalar> out_proj;     // d x d
  Eigen::Index heads = 1;
  AttnScale attn_scale = AttnScale::head_d;

  Eigen::Index task_rows() const { return task_prompt.rows(); }
  Eigen::Index sample_rows() const { return dim() > 0 ? gen_w2.cols() / dim() : 0; }
  Eigen::Index dim() const { return task_prompt.cols(); }
  Eigen::Index hidden() const { return gen_w1.cols(); }
  Eigen::Index head_dim() const { return dim() / heads; }

  void validate() const {
    const auto d = dim();
    if (task_rows() < 1) throw ValidationError("task_prompt", "need at least one row");
    if (d < 1) throw ValidationError("task_prompt", "d must be positive");
    if (heads < 1 || d % heads != 0) throw ValidationError("heads", "d must be divisible by the head count");
    if (gen_w1.rows() != d || gen_w1.cols() < 1) throw ValidationError("gen_w1", "expected d x l with l >= 1");
    if (gen_b1.size() != gen_w1.cols()) throw ValidationError("gen_b1", "length != l");
    if (gen_w2.rows() != gen_w1.cols() || gen_w2.cols() < d || gen_w2.cols() % d != 0)
      throw ValidationError("gen_w2", "expected l x (n*d) with n >= 1");
    if (gen_b2.size() != gen_w2.cols()) throw ValidationError("gen_b2", "length != n*d");
    for (const auto* w : {&w_query, &w_key, &w_value, &out_proj})
      if (w->rows() != d || w->cols() != d) throw ValidationError("attention", "projections must be d x d");
    if (!detail::all_finite(task_prompt) || !detail::all_finite(gen_w1) || !detail::all_finite(gen_b1) ||
        !detail::all_finite(gen_w2) || !detail::all_finite(gen_b2) || !detail::all_finite(w_query) ||
        !detail::all_finite(w_key) || !detail::all_finite(w_value) || !detail::all_finite(out_proj))
      throw ValidationError("fusion", "parameters contain NaN or infinity");
  }

  template <typename Other>
  FusionParams<Other> cast() const {
    FusionParams<Other> p;
    p.task_prompt = task_prompt.template cast<Other>();
    p.gen_w1 = gen_w1.template cast<Other>();
    p.gen_b1 = gen_b1.template cast<Other>();
    p.gen_w2 = gen_w2.template cast<Other>();
    p.gen_b2 = gen_b2.template cast<Other>();
    p.w_query = w_query.template cast<Other>();
    p.w_key = w_key.template cast<Other>();
    p.w_value = w_value.template cast<Other>();
    p.out_proj = out_proj.template cast<Other>();
    p.heads = heads;
    p.attn_scale = attn_scale;
    return p;
  }
};

template <typename Scalar>
struct DynamicPrompt {
  RowMatrix<Scalar> rows;  // (m+n) x d
};

/// Gaussian parameters with standard deviation `scale`, drawn row-major in
/// member order from `rng`.
FusionParams<double> random_fusion_params(const FusionDims& dims, Rng& rng, double scale = 0.3);

/// S(x): the n x d sample-specific prompt for one encoder feature.
template <typename Scalar, typename Derived>
RowMatrix<Scalar> generate_sample_prompt(const FusionParams<Scalar>& params,
                                         const Eigen::MatrixBase<Derived>& encoder_feature) {
  const auto d = params.dim();
  if (encoder_feature.size() != d) throw ValidationError("encoder_feature", "length != d");
  RowVector<Scalar> x(d);
  for (Eigen::Index j = 0; j < d; ++j) x(j) = Scalar(encoder_feature(j));
  RowVector<Scalar> hidden = x * params.gen_w1 + params.gen_b1;
  for (Eigen::Index j = 0; j < hidden.size(); ++j) {
    using std::tanh;
    hidden(j) = tanh(hidden(j));
  }
  const RowVector<Scalar> flat = hidden * params.gen_w2 + params.gen_b2;
  const auto n = params.sample_rows();
  RowMatrix<Scalar> out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) out.row(r) = flat.segment(r * d, d);
  return out;
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
RowMatrix<Scalar> softmax_rows(const RowMatrix<Scalar>& logits) {
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Scalar peak = logits(i, 0);
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (peak < logits(i, j)) peak = logits(i, j);
    Scalar total(0);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      using std::exp;
      out(i, j) = exp(Scalar(logits(i, j) - peak));
      total += out(i, j);
    }
    for (Eigen::Index j = 0; j < logits.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

/// Multi-head self-attention over an already stacked [T; S] matrix. When
/// `attention` is given it receives one (m+n) x (m+n) weight matrix per head.
template <typename Scalar>
RowMatrix<Scalar> self_attention(const FusionParams<Scalar>& params, const RowMatrix<Scalar>& stacked,
                                 std::vector<RowMatrix<Scalar>>* attention = nullptr) {
  const auto d = params.dim();
  const auto dh = params.head_dim();
  if (stacked.cols() != d) throw ValidationError("fuse", "stacked prompt width != d");
  using std::sqrt;
  const double scale_dim = params.attn_scale == AttnScale::head_d ? static_cast<double>(dh) : static_cast<double>(d);
  const Scalar inv_scale = Scalar(1.0 / std::sqrt(scale_dim));

  RowMatrix<Scalar> concat(stacked.rows(), d);
  if (attention) attention->clear();
  for (Eigen::Index h = 0; h < params.heads; ++h) {
    const RowMatrix<Scalar> q = stacked * params.w_query.middleCols(h * dh, dh);
    const RowMatrix<Scalar> k = stacked * params.w_key.middleCols(h * dh, dh);
    const RowMatrix<Scalar> v = stacked * params.w_value.middleCols(h * dh, dh);
    const RowMatrix<Scalar> logits = (q * k.transpose()) * inv_scale;
    const RowMatrix<Scalar> weights = softmax_rows<Scalar>(logits);
    concat.middleCols(h * dh, dh) = weights * v;
    if (attention) attention->push_back(weights);
  }
  RowMatrix<Scalar> out = concat * params.out_proj;
  if (!detail::all_finite(out)) throw Error("fuse: non-finite intermediate");
  return out;
}

/// P(x) for one encoder feature.
template <typename Scalar, typename Derived>
DynamicPrompt<Scalar> fuse(const FusionParams<Scalar>& params, const Eigen::MatrixBase<Derived>& encoder_feature,
                           std::vector<RowMatrix<Scalar>>* attention = nullptr) {
  const RowMatrix<Scalar> sample = generate_sample_prompt(params, encoder_feature);
  RowMatrix<Scalar> stacked(params.task_rows() + sample.rows(), params.dim());
  stacked << params.task_prompt, sample;
  return {self_attention(params, stacked, attention)};
}

/// [P(x); phi(x); phi(<MASK>)].
template <typename Scalar, typename TokDerived, typename MaskDerived>
RowMatrix<Scalar> assemble_template(const DynamicPrompt<Scalar>& prompt,
                                    const Eigen::MatrixBase<TokDerived>& token_embeddings,
                                    const Eigen::MatrixBase<MaskDerived>& mask_embedding) {
  const auto d = prompt.rows.cols();
  if (token_embeddings.rows() > 0 && token_embeddings.cols() != d)
    throw ValidationError("token_embeddings", "width != d");
  if (mask_embedding.size() != d) throw ValidationError("mask_embedding", "length != d");
  const auto p = prompt.rows.rows();
  const auto len = token_embeddings.rows();
  RowMatrix<Scalar> out(p + len + 1, d);
  out.topRows(p) = prompt.rows;
  for (Eigen::Index i = 0; i < len; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out(p + i, j) = Scalar(token_embeddings(i, j));
  for (Eigen::Index j = 0; j < d; ++j) out(p + len, j) = Scalar(mask_embedding(j));
  return out;
}

/// Toy masked-LM head: softmax(last template row * head_weights).
template <typename Scalar, typename HeadDerived>
Vector<Scalar> synthetic_forward(const RowMatrix<Scalar>& tmpl, const Eigen::MatrixBase<HeadDerived>& head_weights) {
  if (tmpl.rows() == 0) throw ValidationError("template", "empty template");
  if (head_weights.rows() != tmpl.cols()) throw ValidationError("head_weights", "rows != d");
  const RowMatrix<Scalar> w = head_weights.template cast<Scalar>();
  const RowMatrix<Scalar> logits = tmpl.bottomRows(1) * w;
  return softmax_rows<Scalar>(logits).row(0).transpose();
}

/// Stores parameters as f32 blobs plus their own manifest under `dir`.
void write_fusion_params(const FusionParams<double>& params, const std::filesystem::path& dir);
FusionParams<double> load_fusion_params(const std::filesystem::path& dir);

}  // namespace poolforge
