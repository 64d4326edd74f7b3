#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "claims/autodiff.hpp"
#include "claims/errors.hpp"
#include "claims/rng.hpp"

// Network building blocks. Positions are rows: a claim with T rows embeds to
// X in R^{T x d_m}, feature extractors map T x d_m -> T x d_m, pooling maps
// to 1 x d_m. All parameter shapes are independent of T.
namespace claims::layers {

inline constexpr double kLayerNormEps = 1e-5;

// Reserved categorical index for ids outside the vocabulary.
inline constexpr int kUnkIndex = 0;

inline int map_id(int id, int vocab) { return (id >= 0 && id < vocab) ? id : kUnkIndex; }

// Uniform Glorot init: +-sqrt(6 / (fan_in + fan_out)).
template <typename S>
void init_glorot(ag::ParameterT<S>& p, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
void init_zero(ag::ParameterT<S>& p) {
  p.value.setZero();
}

template <typename S>
void init_one(ag::ParameterT<S>& p) {
  p.value.setOnes();
}

// One embedded claim row is [code_embed | factor_embed | scaled_amount]
// projected to d_m by a learned linear map (no bias).
template <typename S>
struct EmbeddingParamsT {
  ag::ParameterT<S> code_table;    // v_code x d_code
  ag::ParameterT<S> factor_table;  // v_factor x d_factor
  ag::ParameterT<S> projection;    // (d_code + d_factor + 1) x d_m

  EmbeddingParamsT() = default;
  EmbeddingParamsT(int v_code, int v_factor, int d_m)
      : code_table("embed.code_table", v_code, code_dim(d_m)),
        factor_table("embed.factor_table", v_factor, kFactorDim),
        projection("embed.projection", code_dim(d_m) + kFactorDim + 1, d_m) {}

  static constexpr int kFactorDim = 4;
  static int code_dim(int d_m) { return std::max(1, d_m / 2); }

  std::vector<ag::ParameterT<S>*> parameters() {
    return {&code_table, &factor_table, &projection};
  }
  void init(Rng& rng) {
    init_glorot(code_table, rng);
    init_glorot(factor_table, rng);
    init_glorot(projection, rng);
  }
};

template <typename S>
struct PffParamsT {
  ag::ParameterT<S> weight;  // d_m x d_m
  ag::ParameterT<S> bias;    // 1 x d_m

  PffParamsT() = default;
  explicit PffParamsT(int d_m) : weight("pff.weight", d_m, d_m), bias("pff.bias", 1, d_m) {}

  std::vector<ag::ParameterT<S>*> parameters() { return {&weight, &bias}; }
  void init(Rng& rng) {
    init_glorot(weight, rng);
    init_zero(bias);
  }
};

template <typename S>
struct AttentionBlockParamsT {
  ag::ParameterT<S> w_query, w_key, w_value;  // d_m x d_m
  ag::ParameterT<S> b_query, b_key, b_value;  // 1 x d_m
  ag::ParameterT<S> ffn_w1;                   // d_m x 2*d_m
  ag::ParameterT<S> ffn_b1;                   // 1 x 2*d_m
  ag::ParameterT<S> ffn_w2;                   // 2*d_m x d_m
  ag::ParameterT<S> ffn_b2;                   // 1 x d_m
  ag::ParameterT<S> norm1_gain, norm1_bias;   // 1 x d_m
  ag::ParameterT<S> norm2_gain, norm2_bias;   // 1 x d_m

  AttentionBlockParamsT() = default;
  explicit AttentionBlockParamsT(int d_m)
      : w_query("attn.w_query", d_m, d_m), w_key("attn.w_key", d_m, d_m),
        w_value("attn.w_value", d_m, d_m), b_query("attn.b_query", 1, d_m),
        b_key("attn.b_key", 1, d_m), b_value("attn.b_value", 1, d_m),
        ffn_w1("attn.ffn_w1", d_m, 2 * d_m), ffn_b1("attn.ffn_b1", 1, 2 * d_m),
        ffn_w2("attn.ffn_w2", 2 * d_m, d_m), ffn_b2("attn.ffn_b2", 1, d_m),
        norm1_gain("attn.norm1_gain", 1, d_m), norm1_bias("attn.norm1_bias", 1, d_m),
        norm2_gain("attn.norm2_gain", 1, d_m), norm2_bias("attn.norm2_bias", 1, d_m) {}

  std::vector<ag::ParameterT<S>*> parameters() {
    return {&w_query, &w_key,   &w_value, &b_query,    &b_key,      &b_value,
            &ffn_w1,  &ffn_b1,  &ffn_w2,  &ffn_b2,     &norm1_gain, &norm1_bias,
            &norm2_gain, &norm2_bias};
  }
  void init(Rng& rng) {
    init_glorot(w_query, rng);
    init_glorot(w_key, rng);
    init_glorot(w_value, rng);
    init_zero(b_query);
    init_zero(b_key);
    init_zero(b_value);
    init_glorot(ffn_w1, rng);
    init_zero(ffn_b1);
    init_glorot(ffn_w2, rng);
    init_zero(ffn_b2);
    init_one(norm1_gain);
    init_zero(norm1_bias);
    init_one(norm2_gain);
    init_zero(norm2_bias);
  }
};

template <typename S>
struct PoolParamsT {
  ag::ParameterT<S> weight;  // d_m x 1
  ag::ParameterT<S> bias;    // 1 x 1

  PoolParamsT() = default;
  explicit PoolParamsT(int d_m) : weight("pool.weight", d_m, 1), bias("pool.bias", 1, 1) {}

  std::vector<ag::ParameterT<S>*> parameters() { return {&weight, &bias}; }
  void init(Rng& rng) {
    init_glorot(weight, rng);
    init_zero(bias);
  }
};

template <typename S>
struct HeadParamsT {
  ag::ParameterT<S> w1;  // d_in x fc_width
  ag::ParameterT<S> b1;  // 1 x fc_width
  ag::ParameterT<S> w2;  // fc_width x 1
  ag::ParameterT<S> b2;  // 1 x 1

  HeadParamsT() = default;
  HeadParamsT(int d_in, int fc_width)
      : w1("head.w1", d_in, fc_width), b1("head.b1", 1, fc_width), w2("head.w2", fc_width, 1),
        b2("head.b2", 1, 1) {}

  std::vector<ag::ParameterT<S>*> parameters() { return {&w1, &b1, &w2, &b2}; }
  void init(Rng& rng) {
    init_glorot(w1, rng);
    init_zero(b1);
    init_glorot(w2, rng);
    init_zero(b2);
  }
};

template <typename S>
struct CnnParamsT {
  std::vector<ag::ParameterT<S>> kernels;  // kernel_width matrices, d_m x d_m
  ag::ParameterT<S> bias;                  // 1 x d_m

  CnnParamsT() = default;
  CnnParamsT(int d_m, int kernel_width) : bias("cnn.bias", 1, d_m) {
    if (kernel_width < 1 || kernel_width % 2 == 0)
      throw ConfigError("cnn: kernel width must be odd and positive, got " +
                        std::to_string(kernel_width));
    kernels.reserve(static_cast<std::size_t>(kernel_width));
    for (int k = 0; k < kernel_width; ++k)
      kernels.emplace_back("cnn.kernel" + std::to_string(k), d_m, d_m);
  }

  std::vector<ag::ParameterT<S>*> parameters() {
    std::vector<ag::ParameterT<S>*> out;
    for (auto& k : kernels) out.push_back(&k);
    out.push_back(&bias);
    return out;
  }
  void init(Rng& rng) {
    for (auto& k : kernels) init_glorot(k, rng);
    init_zero(bias);
  }
};

// ---- forward functions ----

// Preprocessed claim rows ready for embedding/encoding.
struct EncodedRows {
  std::vector<int> code_ids;       // already vocabulary-mapped
  std::vector<int> factor_ids;     // already vocabulary-mapped
  std::vector<double> scaled_amounts;  // in [0, 1]

  std::size_t size() const { return code_ids.size(); }
};

// X row t = [code_embed | factor_embed | amount] * projection. Unknown ids
// were mapped to kUnkIndex upstream; permuting rows permutes X rows.
template <typename S>
ag::VarT<S> embed_rows(ag::TapeT<S>& tape, EmbeddingParamsT<S>& params, const EncodedRows& rows) {
  if (rows.size() == 0) throw InputError("embed_rows: claim has no rows");
  const Eigen::Index t_rows = static_cast<Eigen::Index>(rows.size());
  ag::MatrixX<S> amounts(t_rows, 1);
  for (Eigen::Index t = 0; t < t_rows; ++t)
    amounts(t, 0) = static_cast<S>(rows.scaled_amounts[static_cast<std::size_t>(t)]);
  auto code = tape.gather_rows(tape.param(params.code_table), rows.code_ids);
  auto factor = tape.gather_rows(tape.param(params.factor_table), rows.factor_ids);
  auto features = tape.hconcat(tape.hconcat(code, factor), tape.constant(std::move(amounts)));
  return tape.matmul(features, tape.param(params.projection));
}

// Rowwise affine + relu; output row t depends only on input row t.
template <typename S>
ag::VarT<S> pff_forward(ag::TapeT<S>& tape, PffParamsT<S>& params, ag::VarT<S> x) {
  return tape.relu(
      tape.add_rowvec(tape.matmul(x, tape.param(params.weight)), tape.param(params.bias)));
}

template <typename S>
struct AttentionResult {
  ag::VarT<S> features;   // T x d_m
  ag::VarT<S> attention;  // T x T, rows sum to 1
};

// Single-head scaled dot-product block: attention, residual + layer norm,
// rowwise FFN, residual + layer norm. The attention matrix is exposed for
// inspection.
template <typename S>
AttentionResult<S> attention_block(ag::TapeT<S>& tape, AttentionBlockParamsT<S>& params,
                                   ag::VarT<S> x) {
  const Eigen::Index d_m = x.cols();
  auto q = tape.add_rowvec(tape.matmul(x, tape.param(params.w_query)), tape.param(params.b_query));
  auto k = tape.add_rowvec(tape.matmul(x, tape.param(params.w_key)), tape.param(params.b_key));
  auto v = tape.add_rowvec(tape.matmul(x, tape.param(params.w_value)), tape.param(params.b_value));
  auto scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                           static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_m))));
  auto attention = tape.softmax_rows(scores);
  auto context = tape.matmul(attention, v);
  auto h2 = tape.layer_norm(tape.add(context, x), tape.param(params.norm1_gain),
                            tape.param(params.norm1_bias), static_cast<S>(kLayerNormEps));
  auto hidden = tape.relu(
      tape.add_rowvec(tape.matmul(h2, tape.param(params.ffn_w1)), tape.param(params.ffn_b1)));
  auto h3 =
      tape.add_rowvec(tape.matmul(hidden, tape.param(params.ffn_w2)), tape.param(params.ffn_b2));
  auto h4 = tape.layer_norm(tape.add(h3, h2), tape.param(params.norm2_gain),
                            tape.param(params.norm2_bias), static_cast<S>(kLayerNormEps));
  return {h4, attention};
}

template <typename S>
struct PoolResult {
  ag::VarT<S> pooled;   // 1 x d_m
  ag::VarT<S> weights;  // T x 1, entries in (0, 1)
};

// Per-position sigmoid gates summed without normalization, so the pooled
// vector scales with the sequence length.
template <typename S>
PoolResult<S> sigmoid_pool(ag::TapeT<S>& tape, PoolParamsT<S>& params, ag::VarT<S> h) {
  auto scores = tape.add_rowvec(tape.matmul(h, tape.param(params.weight)),
                                tape.param(params.bias));
  auto weights = tape.sigmoid(scores);
  auto pooled = tape.matmul(tape.transpose(weights), h);
  return {pooled, weights};
}

// Inverted-dropout mask: 1/(1-rate) with probability 1-rate, else 0.
template <typename S>
ag::MatrixX<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  ag::MatrixX<S> mask(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      mask(i, j) = rng.uniform() < rate ? S(0) : keep;
  return mask;
}

// One hidden relu layer with optional training-time dropout, sigmoid output.
template <typename S>
ag::VarT<S> mlp_head(ag::TapeT<S>& tape, HeadParamsT<S>& params, ag::VarT<S> h,
                     double dropout_rate, bool train_mode, Rng* rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("mlp_head: dropout rate must be in [0, 1)");
  auto hidden =
      tape.relu(tape.add_rowvec(tape.matmul(h, tape.param(params.w1)), tape.param(params.b1)));
  if (train_mode && dropout_rate > 0.0) {
    if (rng == nullptr) throw ContractError("mlp_head: dropout in train mode needs an rng");
    hidden = tape.cmul(hidden, dropout_mask<S>(hidden.rows(), hidden.cols(), dropout_rate, *rng));
  }
  return tape.sigmoid(
      tape.add_rowvec(tape.matmul(hidden, tape.param(params.w2)), tape.param(params.b2)));
}

// Same head evaluated on a sparse input row given as (index, value) pairs;
// the first matmul touches only the listed rows of w1. Equivalent to
// mlp_head on the dense vector.
template <typename S>
ag::VarT<S> mlp_head_sparse(ag::TapeT<S>& tape, HeadParamsT<S>& params, std::vector<int> idx,
                            std::vector<S> values, double dropout_rate, bool train_mode,
                            Rng* rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("mlp_head: dropout rate must be in [0, 1)");
  auto pre = tape.add_rowvec(
      tape.rows_weighted_sum(tape.param(params.w1), std::move(idx), std::move(values)),
      tape.param(params.b1));
  auto hidden = tape.relu(pre);
  if (train_mode && dropout_rate > 0.0) {
    if (rng == nullptr) throw ContractError("mlp_head: dropout in train mode needs an rng");
    hidden = tape.cmul(hidden, dropout_mask<S>(hidden.rows(), hidden.cols(), dropout_rate, *rng));
  }
  return tape.sigmoid(
      tape.add_rowvec(tape.matmul(hidden, tape.param(params.w2)), tape.param(params.b2)));
}

// Order-invariant fixed vector: code counts (length v_code), factor counts
// (length v_factor), sum of scaled amounts. Unknown ids land in the
// kUnkIndex bucket.
inline std::vector<double> bow_encode(const EncodedRows& rows, int v_code, int v_factor) {
  std::vector<double> out(static_cast<std::size_t>(v_code + v_factor + 1), 0.0);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    out[static_cast<std::size_t>(map_id(rows.code_ids[t], v_code))] += 1.0;
    out[static_cast<std::size_t>(v_code + map_id(rows.factor_ids[t], v_factor))] += 1.0;
    out[static_cast<std::size_t>(v_code + v_factor)] += rows.scaled_amounts[t];
  }
  return out;
}

// Nonzero entries of bow_encode as (index, value) pairs, for the sparse head
// path. Indices ascend.
template <typename S>
void bow_sparse(const EncodedRows& rows, int v_code, int v_factor, std::vector<int>& idx,
                std::vector<S>& values) {
  std::map<int, double> entries;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    entries[map_id(rows.code_ids[t], v_code)] += 1.0;
    entries[v_code + map_id(rows.factor_ids[t], v_factor)] += 1.0;
    entries[v_code + v_factor] += rows.scaled_amounts[t];
  }
  idx.clear();
  values.clear();
  for (const auto& [i, v] : entries) {
    idx.push_back(i);
    values.push_back(static_cast<S>(v));
  }
}

// 1-D convolution over the position axis (zero padding, odd width) + relu.
// The local-context baseline: not permutation-equivariant for width > 1.
template <typename S>
ag::VarT<S> cnn_encode(ag::TapeT<S>& tape, CnnParamsT<S>& params, ag::VarT<S> x) {
  const int width = static_cast<int>(params.kernels.size());
  const int radius = width / 2;
  ag::VarT<S> acc;
  for (int k = 0; k < width; ++k) {
    const int offset = k - radius;
    // out.row(t) += x.row(t + offset) * kernel_k
    auto term = tape.matmul(tape.shift_rows(x, -offset), tape.param(params.kernels[k]));
    acc = k == 0 ? term : tape.add(acc, term);
  }
  return tape.relu(tape.add_rowvec(acc, tape.param(params.bias)));
}

}  // namespace claims::layers
