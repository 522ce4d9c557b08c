#include "c2f/attention.hpp"

#include <cmath>

#include "c2f/error.hpp"

namespace c2f {

namespace {

void check_input(const ag::Tensor& x, const AttentionParameters& params, const char* what) {
  if (!x.defined() || x.rank() != 2 || x.rows() == 0)
    throw ShapeError(std::string(what) + " must be a non-empty (seq, d) matrix");
  if (x.cols() != params.model_dim)
    throw ShapeError(std::string(what) + " has feature dim " + std::to_string(x.cols()) +
                     ", attention expects " + std::to_string(params.model_dim));
}

// Shared body of self- and cross-attention.
ag::Tensor multi_head(const ag::Tensor& query_source, const ag::Tensor& memory,
                      const ag::Mask& mask, const AttentionParameters& params,
                      std::vector<ag::Tensor>* weights_out) {
  params.validate();
  check_input(query_source, params, "attention queries");
  check_input(memory, params, "attention memory");
  if (!mask.empty() && mask.size() != memory.rows())
    throw ShapeError("attention mask length " + std::to_string(mask.size()) +
                     " does not match sequence length " + std::to_string(memory.rows()));

  const auto logits = attention_logits(query_source, memory, params);
  std::vector<ag::Tensor> heads;
  heads.reserve(params.heads);
  if (weights_out) weights_out->clear();
  for (std::size_t h = 0; h < params.heads; ++h) {
    ag::Tensor weights = ag::masked_softmax_rows(logits[h], mask);
    ag::Tensor values = ag::matmul(memory, params.value[h]);
    heads.push_back(ag::matmul(weights, values));
    if (weights_out) weights_out->push_back(weights);
  }
  ag::Tensor joined = params.heads == 1 ? heads.front() : ag::concat_cols(heads);
  return ag::matmul(joined, params.output);
}

}  // namespace

AttentionParameters AttentionParameters::create(ParameterStore& store, const std::string& prefix,
                                                const std::string& group, std::size_t model_dim,
                                                std::size_t heads, Rng& rng, double stddev) {
  if (heads == 0 || model_dim % heads != 0)
    throw ConfigError("feature dim " + std::to_string(model_dim) +
                      " is not divisible by head count " + std::to_string(heads));
  AttentionParameters p;
  p.model_dim = model_dim;
  p.heads = heads;
  p.head_dim = model_dim / heads;
  // Non-positive stddev selects Glorot scaling per matrix.
  const auto dims = static_cast<double>(model_dim + p.head_dim);
  const double proj_sd = stddev > 0.0 ? stddev : std::sqrt(2.0 / dims);
  const double out_sd = stddev > 0.0 ? stddev : std::sqrt(2.0 / static_cast<double>(2 * model_dim));
  for (std::size_t h = 0; h < heads; ++h) {
    const auto tag = prefix + ".head" + std::to_string(h);
    p.query.push_back(store.normal(tag + ".wq", group, {model_dim, p.head_dim}, proj_sd, rng));
    p.key.push_back(store.normal(tag + ".wk", group, {model_dim, p.head_dim}, proj_sd, rng));
    p.value.push_back(store.normal(tag + ".wv", group, {model_dim, p.head_dim}, proj_sd, rng));
  }
  p.output = store.normal(prefix + ".wo", group, {heads * p.head_dim, model_dim}, out_sd, rng);
  return p;
}

void AttentionParameters::validate() const {
  if (heads == 0 || head_dim * heads != model_dim)
    throw ShapeError("head dim must equal model dim / heads");
  if (query.size() != heads || key.size() != heads || value.size() != heads)
    throw ShapeError("attention needs one query/key/value projection per head");
  const ag::Shape proj{model_dim, head_dim};
  for (std::size_t h = 0; h < heads; ++h)
    if (query[h].shape() != proj || key[h].shape() != proj || value[h].shape() != proj)
      throw ShapeError("attention projection for head " + std::to_string(h) + " is not " +
                       ag::shape_string(proj));
  if (!output.defined() || output.shape() != ag::Shape{heads * head_dim, model_dim})
    throw ShapeError("attention output projection must be (heads*head_dim, model_dim)");
}

ag::Tensor add_position(const ag::Tensor& features, const PositionEncoding& encoding) {
  if (features.shape() != encoding.table.shape())
    throw ShapeError("position table " + ag::shape_string(encoding.table.shape()) +
                     " does not match features " + ag::shape_string(features.shape()));
  return ag::add(features, encoding.table);
}

std::vector<double> CrossAttentionRecord::weight_array() const {
  std::vector<double> out;
  for (const auto& w : weights) out.insert(out.end(), w.values().begin(), w.values().end());
  return out;
}

std::vector<ag::Tensor> attention_logits(const ag::Tensor& query_source,
                                         const ag::Tensor& key_source,
                                         const AttentionParameters& params) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  std::vector<ag::Tensor> logits;
  logits.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    ag::Tensor q = ag::matmul(query_source, params.query[h]);
    ag::Tensor k = ag::matmul(key_source, params.key[h]);
    logits.push_back(ag::scale(ag::matmul_nt(q, k), inv_sqrt));
  }
  return logits;
}

ag::Tensor mhsa(const ag::Tensor& features, const ag::Mask& mask,
                const AttentionParameters& params, std::vector<ag::Tensor>* weights_out) {
  return multi_head(features, features, mask, params, weights_out);
}

ag::Tensor encode(const ag::Tensor& features, const ag::Mask& mask,
                  const AttentionParameters& params) {
  return ag::add(features, mhsa(features, mask, params));
}

CrossAttentionRecord decode(const ag::Tensor& tokens, const ag::Tensor& memory,
                            const ag::Mask& mask, const AttentionParameters& params) {
  CrossAttentionRecord record;
  record.output = multi_head(tokens, memory, mask, params, &record.weights);
  return record;
}

}  // namespace c2f
