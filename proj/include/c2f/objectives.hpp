#pragma once

// Training objectives: identity classification, bidirectional hardest-negative
// ranking, commonality (normalized entropy of identity scores) and the ranking
// loss whose margin shrinks with commonality.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c2f/autograd.hpp"
#include "c2f/embedding.hpp"
#include "c2f/parameters.hpp"

namespace c2f {

// s(a, b) = a.b / (|a||b|). Throws NumericError on a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct IdentityClassifier {
  std::string slot;
  ag::Tensor weight;  // (d, c), no bias
};

// One classifier per embedding slot (global, coarse_i, fine_j), each used by
// both modalities. With `single_shared`, every slot refers to one classifier.
class ClassifierBank {
 public:
  ClassifierBank(ParameterStore& store, std::size_t dim, std::size_t classes, std::size_t coarse,
                 std::size_t fine, bool single_shared, Rng& rng, double stddev = 0.02);
  // Wraps existing classifiers (used by tests).
  ClassifierBank(IdentityClassifier global, std::vector<IdentityClassifier> coarse,
                 std::vector<IdentityClassifier> fine);

  const IdentityClassifier& global() const { return global_; }
  const IdentityClassifier& coarse(std::size_t i) const { return coarse_.at(i); }
  const IdentityClassifier& fine(std::size_t j) const { return fine_.at(j); }
  std::size_t coarse_count() const { return coarse_.size(); }
  std::size_t fine_count() const { return fine_.size(); }
  std::size_t classes() const { return global_.weight.cols(); }

 private:
  IdentityClassifier global_;
  std::vector<IdentityClassifier> coarse_;
  std::vector<IdentityClassifier> fine_;
};

struct LossConfig {
  double margin = 0.2;  // alpha
  bool use_coarse = true;
  bool use_fine = true;
  bool use_cmr = true;          // fine ranking uses the commonality margin
  bool cmr_on_coarse = false;   // coarse ranking uses it as well
  bool stop_commonality_gradient = true;
};

struct IdLossResult {
  ag::Tensor loss;                   // scalar
  std::vector<double> probabilities;  // c
};

// -log softmax(e W)[label] for one (1, d) embedding.
IdLossResult id_loss(const ag::Tensor& embedding, std::int64_t label,
                     const IdentityClassifier& classifier);

// id(g) + mean_i id(c_i) + mean_j id(f_j); empty coarse/fine sets contribute 0.
ag::Tensor id_loss_set(const EmbeddingTensors& set, std::int64_t label,
                       const ClassifierBank& classifiers, bool use_coarse = true,
                       bool use_fine = true);

// Index of the highest-similarity candidate whose label differs from the
// anchor's; ties go to the lowest index. Throws DataError if none exists.
std::size_t hardest_negative(std::size_t anchor, std::span<const double> similarities,
                             std::span<const std::int64_t> labels);

// Bidirectional hinge over a batch of N matched rows with per-anchor margins:
//   sum_k [m_img[k] - s(v_k, t_k) + s(v_k, t_h)]_+ + [m_txt[k] - s(t_k, v_k) + s(t_k, v_h)]_+
// Margins are (N) tensors; gradients reach them only if they require grad.
ag::Tensor margin_ranking(const ag::Tensor& image, const ag::Tensor& text,
                          std::span<const std::int64_t> labels, const ag::Tensor& image_margins,
                          const ag::Tensor& text_margins);

// Constant margin alpha on every anchor.
ag::Tensor ranking_loss(const ag::Tensor& image, const ag::Tensor& text,
                        std::span<const std::int64_t> labels, double margin);

// -sum p_i log p_i / log c, with 0 log 0 = 0. Throws for c < 2.
double commonality(std::span<const double> probabilities);

// Commonality of softmax(logits[i]) per row, (m). Differentiable.
ag::Tensor commonality_rows(const ag::Tensor& logits);

// Ranking with margins alpha * (1 - C). `image_commonality` / `text_commonality`
// hold C per anchor. Margins are treated as constants.
ag::Tensor cmr_loss(const ag::Tensor& image, const ag::Tensor& text,
                    std::span<const std::int64_t> labels, double margin,
                    std::span<const double> image_commonality,
                    std::span<const double> text_commonality);

struct BatchEmbeddings {
  std::vector<EmbeddingTensors> image;
  std::vector<EmbeddingTensors> text;
  std::vector<std::int64_t> labels;

  std::size_t size() const { return labels.size(); }
};

// Stacks one slot (0 = global, 1..D coarse, D+1.. fine) across the batch.
ag::Tensor stack_slot(std::span<const EmbeddingTensors> sets, std::size_t slot);

// ranking(globals) + mean over coarse slots of ranking(coarse_i).
ag::Tensor ranking_loss_sets(const BatchEmbeddings& batch, double margin);

// Per-slot commonality values substituted for the computed ones (tests use this
// to freeze them across finite-difference evaluations). Indexed [slot][sample].
struct CommonalityOverride {
  std::vector<std::vector<double>> fine_image;
  std::vector<std::vector<double>> fine_text;
  std::vector<std::vector<double>> coarse_image;
  std::vector<std::vector<double>> coarse_text;
};

struct LossBreakdown {
  ag::Tensor total;
  double id_image = 0.0;
  double id_text = 0.0;
  double ranking = 0.0;       // global + coarse ranking
  double fine_ranking = 0.0;  // CMR or plain ranking on fine slots
  // Commonality per fine slot per sample, from this forward pass.
  std::vector<std::vector<double>> fine_commonality_image;
  std::vector<std::vector<double>> fine_commonality_text;
  std::vector<std::vector<double>> coarse_commonality_image;
  std::vector<std::vector<double>> coarse_commonality_text;

  std::vector<double> mean_fine_commonality() const;  // per slot, both modalities
};

// L_ID(S_v) + L_ID(S_t) + L_R(S'_v, S'_t) + fine ranking term, gated by cfg.
LossBreakdown total_loss(const BatchEmbeddings& batch, const ClassifierBank& classifiers,
                         const LossConfig& cfg, const CommonalityOverride* frozen = nullptr);

}  // namespace c2f
