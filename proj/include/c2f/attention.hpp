#pragma once

// Multi-head scaled dot-product attention: modality-specific self-attention
// encoders and the cross-attention decoder driven by learnable query tokens.

#include <string>
#include <vector>

#include "c2f/autograd.hpp"
#include "c2f/ops.hpp"
#include "c2f/parameters.hpp"

namespace c2f {

struct AttentionParameters {
  std::size_t model_dim = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::vector<ag::Tensor> query;  // per head, (model_dim, head_dim)
  std::vector<ag::Tensor> key;
  std::vector<ag::Tensor> value;
  ag::Tensor output;  // (heads * head_dim, model_dim)

  // Registers normal(0, stddev) projections under `prefix` in the store;
  // stddev <= 0 uses Glorot scaling sqrt(2 / (fan_in + fan_out)).
  static AttentionParameters create(ParameterStore& store, const std::string& prefix,
                                    const std::string& group, std::size_t model_dim,
                                    std::size_t heads, Rng& rng, double stddev = 0.0);

  // Throws ShapeError unless head_dim == model_dim / heads and all
  // projections have the documented shapes.
  void validate() const;
};

// Learnable additive position table, one row per flattened position.
struct PositionEncoding {
  ag::Tensor table;  // (length, d)
};

ag::Tensor add_position(const ag::Tensor& features, const PositionEncoding& encoding);

// Learnable query tokens used by the decoder, (count, d).
struct SharedTokenSet {
  ag::Tensor tokens;
  std::size_t count() const { return tokens.rows(); }
};

struct CrossAttentionRecord {
  ag::Tensor output;                // (queries, d)
  std::vector<ag::Tensor> weights;  // per head, (queries, sequence)

  std::size_t heads() const { return weights.size(); }
  std::size_t queries() const { return output.rows(); }
  std::size_t sequence_length() const { return weights.empty() ? 0 : weights.front().cols(); }
  // Flattened (heads, queries, sequence) copy of the weights.
  std::vector<double> weight_array() const;
};

// Pre-softmax logits Q_i K_i^T / sqrt(d_h), one (queries, keys) matrix per
// head, with queries projected from `query_source` and keys from `key_source`.
std::vector<ag::Tensor> attention_logits(const ag::Tensor& query_source,
                                         const ag::Tensor& key_source,
                                         const AttentionParameters& params);

// [SA_1(x), ..., SA_n(x)] W^O with keys masked by `mask`.
ag::Tensor mhsa(const ag::Tensor& features, const ag::Mask& mask,
                const AttentionParameters& params,
                std::vector<ag::Tensor>* weights_out = nullptr);

// Encoder: features + mhsa(features).
ag::Tensor encode(const ag::Tensor& features, const ag::Mask& mask,
                  const AttentionParameters& params);

// Decoder: tokens act as queries, memory as keys and values. No residual.
CrossAttentionRecord decode(const ag::Tensor& tokens, const ag::Tensor& memory,
                            const ag::Mask& mask, const AttentionParameters& params);

}  // namespace c2f
