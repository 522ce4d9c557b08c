#include "c2f/objectives.hpp"

#include <cmath>
#include <limits>

#include "c2f/error.hpp"
#include "c2f/ops.hpp"

namespace c2f {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine similarity of a zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------

ClassifierBank::ClassifierBank(ParameterStore& store, std::size_t dim, std::size_t classes,
                               std::size_t coarse, std::size_t fine, bool single_shared, Rng& rng,
                               double stddev) {
  if (classes == 0) throw ConfigError("identity classifier needs at least one class");
  auto make = [&](const std::string& slot) {
    return IdentityClassifier{slot, store.normal("classifier." + slot, "head", {dim, classes}, stddev, rng)};
  };
  global_ = make(single_shared ? "shared" : "global");
  for (std::size_t i = 0; i < coarse; ++i)
    coarse_.push_back(single_shared ? global_ : make("coarse" + std::to_string(i)));
  for (std::size_t j = 0; j < fine; ++j)
    fine_.push_back(single_shared ? global_ : make("fine" + std::to_string(j)));
}

ClassifierBank::ClassifierBank(IdentityClassifier global, std::vector<IdentityClassifier> coarse,
                               std::vector<IdentityClassifier> fine)
    : global_(std::move(global)), coarse_(std::move(coarse)), fine_(std::move(fine)) {}

// ---------------------------------------------------------------------------

IdLossResult id_loss(const ag::Tensor& embedding, std::int64_t label,
                     const IdentityClassifier& classifier) {
  const std::size_t classes = classifier.weight.cols();
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw DataError("identity label " + std::to_string(label) + " outside [0, " +
                    std::to_string(classes) + ")");
  const ag::Tensor row = embedding.rank() == 2 ? embedding : ag::reshape(embedding, {1, embedding.size()});
  IdLossResult out;
  const std::int64_t labels[1] = {label};
  out.loss = ag::cross_entropy_rows(ag::matmul(row, classifier.weight), labels, &out.probabilities);
  return out;
}

ag::Tensor id_loss_set(const EmbeddingTensors& set, std::int64_t label,
                       const ClassifierBank& classifiers, bool use_coarse, bool use_fine) {
  std::vector<ag::Tensor> terms{id_loss(set.global, label, classifiers.global()).loss};
  auto slot_mean = [&](const ag::Tensor& rows, auto classifier_of) {
    const std::size_t n = rows.rows();
    std::vector<ag::Tensor> parts;
    for (std::size_t i = 0; i < n; ++i)
      parts.push_back(id_loss(ag::slice_rows(rows, i, i + 1), label, classifier_of(i)).loss);
    terms.push_back(ag::scale(ag::sum_scalars(parts), 1.0 / static_cast<double>(n)));
  };
  if (use_coarse && set.coarse.defined() && set.coarse.size() > 0)
    slot_mean(set.coarse, [&](std::size_t i) -> const IdentityClassifier& { return classifiers.coarse(i); });
  if (use_fine && set.fine.defined() && set.fine.size() > 0)
    slot_mean(set.fine, [&](std::size_t j) -> const IdentityClassifier& { return classifiers.fine(j); });
  return terms.size() == 1 ? terms.front() : ag::sum_scalars(terms);
}

std::size_t hardest_negative(std::size_t anchor, std::span<const double> similarities,
                             std::span<const std::int64_t> labels) {
  if (similarities.size() != labels.size() || anchor >= labels.size())
    throw ShapeError("hardest_negative: similarity row and labels disagree");
  std::size_t best = labels.size();
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == labels[anchor]) continue;
    if (best == labels.size() || similarities[j] > best_sim) {
      best = j;
      best_sim = similarities[j];
    }
  }
  if (best == labels.size())
    throw DataError("no negative with a different identity in the batch");
  return best;
}

namespace {

struct Normalized {
  std::vector<double> unit;   // (N, d)
  std::vector<double> norms;  // (N)
};

Normalized normalize_rows(const ag::Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Normalized out{std::vector<double>(x.values().begin(), x.values().end()), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += out.unit[i * d + j] * out.unit[i * d + j];
    if (s == 0.0) throw NumericError("cosine similarity of a zero-norm embedding");
    out.norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) out.unit[i * d + j] /= out.norms[i];
  }
  return out;
}

// Gradient of cosine w.r.t. raw rows given gradient w.r.t. unit rows.
void unit_to_raw(const Normalized& z, const std::vector<double>& gunit, std::vector<double>& graw,
                 std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double proj = 0.0;
    for (std::size_t j = 0; j < d; ++j) proj += gunit[i * d + j] * z.unit[i * d + j];
    for (std::size_t j = 0; j < d; ++j)
      graw[i * d + j] += (gunit[i * d + j] - proj * z.unit[i * d + j]) / z.norms[i];
  }
}

ag::Tensor constant_vector(std::size_t n, double value) {
  return ag::Tensor::constant({n}, std::vector<double>(n, value));
}

}  // namespace

ag::Tensor margin_ranking(const ag::Tensor& image, const ag::Tensor& text,
                          std::span<const std::int64_t> labels, const ag::Tensor& image_margins,
                          const ag::Tensor& text_margins) {
  if (image.rank() != 2 || image.shape() != text.shape())
    throw ShapeError("ranking loss needs matching (N, d) image and text matrices");
  const std::size_t n = image.rows(), d = image.cols();
  if (labels.size() != n) throw ShapeError("ranking loss: label count mismatch");
  if (n < 2) throw DataError("ranking loss needs a batch of at least two pairs");
  if (image_margins.size() != n || text_margins.size() != n)
    throw ShapeError("ranking loss: one margin per anchor required");

  const Normalized zv = normalize_rows(image);
  const Normalized zt = normalize_rows(text);
  std::vector<double> sim(n * n, 0.0);  // sim[a * n + b] = s(image_a, text_b)
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += zv.unit[a * d + j] * zt.unit[b * d + j];
      sim[a * n + b] = s;
    }

  const auto mv = image_margins.values();
  const auto mt = text_margins.values();
  std::vector<double> column(n);
  // Active hinge terms: (positive index pair, negative index pair) in sim.
  struct Term {
    std::size_t positive;
    std::size_t negative;
    std::size_t anchor;
    bool image_anchor;
  };
  std::vector<Term> active;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::span<const double> row(sim.data() + k * n, n);
    const std::size_t h = hardest_negative(k, row, labels);
    const double value = mv[k] - sim[k * n + k] + sim[k * n + h];
    if (value > 0.0) {
      total += value;
      active.push_back({k * n + k, k * n + h, k, true});
    }
    for (std::size_t a = 0; a < n; ++a) column[a] = sim[a * n + k];
    const std::size_t hv = hardest_negative(k, column, labels);
    const double value_t = mt[k] - sim[k * n + k] + sim[hv * n + k];
    if (value_t > 0.0) {
      total += value_t;
      active.push_back({k * n + k, hv * n + k, k, false});
    }
  }

  return ag::make_result(
      {}, {total}, {image, text, image_margins, text_margins},
      [zv, zt, active = std::move(active), n, d](ag::Node& self) {
        const double up = self.grad[0];
        std::vector<double> gsim(n * n, 0.0);
        for (const auto& t : active) {
          gsim[t.positive] -= up;
          gsim[t.negative] += up;
        }
        auto& inputs = self.inputs;
        if (inputs[0]->requires_grad) {
          std::vector<double> gunit(n * d, 0.0);
          for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
              const double g = gsim[a * n + b];
              if (g == 0.0) continue;
              for (std::size_t j = 0; j < d; ++j) gunit[a * d + j] += g * zt.unit[b * d + j];
            }
          unit_to_raw(zv, gunit, inputs[0]->ensure_grad(), n, d);
        }
        if (inputs[1]->requires_grad) {
          std::vector<double> gunit(n * d, 0.0);
          for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
              const double g = gsim[a * n + b];
              if (g == 0.0) continue;
              for (std::size_t j = 0; j < d; ++j) gunit[b * d + j] += g * zv.unit[a * d + j];
            }
          unit_to_raw(zt, gunit, inputs[1]->ensure_grad(), n, d);
        }
        for (const auto& t : active) {
          const std::size_t which = t.image_anchor ? 2 : 3;
          if (inputs[which]->requires_grad) inputs[which]->ensure_grad()[t.anchor] += up;
        }
      });
}

ag::Tensor ranking_loss(const ag::Tensor& image, const ag::Tensor& text,
                        std::span<const std::int64_t> labels, double margin) {
  const std::size_t n = image.rank() == 2 ? image.rows() : 0;
  return margin_ranking(image, text, labels, constant_vector(n, margin), constant_vector(n, margin));
}

double commonality(std::span<const double> probabilities) {
  const std::size_t c = probabilities.size();
  if (c < 2) throw ConfigError("commonality needs at least two identities");
  double entropy = 0.0;
  for (double p : probabilities)
    if (p > 0.0) entropy -= p * std::log(p);
  return entropy / std::log(static_cast<double>(c));
}

ag::Tensor commonality_rows(const ag::Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("commonality_rows needs a (m, c) matrix");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (c < 2) throw ConfigError("commonality needs at least two identities");
  const double log_c = std::log(static_cast<double>(c));
  const auto v = logits.values();
  std::vector<double> probs(m * c), out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) peak = std::max(peak, v[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(v[i * c + j] - peak);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(v[i * c + j] - peak) / z;
    out[i] = commonality(std::span<const double>(probs.data() + i * c, c));
  }
  std::vector<double> entropy(out);
  for (auto& e : entropy) e *= log_c;
  return ag::make_result({m}, std::move(out), {logits},
                         [probs = std::move(probs), entropy = std::move(entropy), m, c, log_c](ag::Node& self) {
                           auto& g = self.inputs[0]->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i) {
                             const double up = self.grad[i] / log_c;
                             for (std::size_t j = 0; j < c; ++j) {
                               const double p = probs[i * c + j];
                               if (p <= 0.0) continue;
                               g[i * c + j] -= up * p * (std::log(p) + entropy[i]);
                             }
                           }
                         });
}

ag::Tensor cmr_loss(const ag::Tensor& image, const ag::Tensor& text,
                    std::span<const std::int64_t> labels, double margin,
                    std::span<const double> image_commonality,
                    std::span<const double> text_commonality) {
  const std::size_t n = labels.size();
  if (image_commonality.size() != n || text_commonality.size() != n)
    throw ShapeError("cmr_loss: one commonality value per anchor required");
  std::vector<double> mv(n), mt(n);
  for (std::size_t k = 0; k < n; ++k) {
    mv[k] = margin * (1.0 - image_commonality[k]);
    mt[k] = margin * (1.0 - text_commonality[k]);
  }
  return margin_ranking(image, text, labels, ag::Tensor::constant({n}, std::move(mv)),
                        ag::Tensor::constant({n}, std::move(mt)));
}

// ---------------------------------------------------------------------------

ag::Tensor stack_slot(std::span<const EmbeddingTensors> sets, std::size_t slot) {
  if (sets.empty()) throw ShapeError("stack_slot on an empty batch");
  std::vector<ag::Tensor> rows;
  rows.reserve(sets.size());
  for (const auto& s : sets) {
    const std::size_t coarse = s.coarse.defined() ? s.coarse.rows() : 0;
    const std::size_t fine = s.fine.defined() ? s.fine.rows() : 0;
    if (slot == 0) rows.push_back(s.global);
    else if (slot <= coarse) rows.push_back(ag::slice_rows(s.coarse, slot - 1, slot));
    else if (slot <= coarse + fine) rows.push_back(ag::slice_rows(s.fine, slot - 1 - coarse, slot - coarse));
    else throw ShapeError("embedding slot " + std::to_string(slot) + " out of range");
  }
  return ag::concat_rows(rows);
}

ag::Tensor ranking_loss_sets(const BatchEmbeddings& batch, double margin) {
  std::vector<ag::Tensor> terms{
      ranking_loss(stack_slot(batch.image, 0), stack_slot(batch.text, 0), batch.labels, margin)};
  const std::size_t coarse = batch.image.front().coarse.defined() ? batch.image.front().coarse.rows() : 0;
  if (coarse > 0) {
    std::vector<ag::Tensor> slots;
    for (std::size_t i = 1; i <= coarse; ++i)
      slots.push_back(ranking_loss(stack_slot(batch.image, i), stack_slot(batch.text, i), batch.labels, margin));
    terms.push_back(ag::scale(ag::sum_scalars(slots), 1.0 / static_cast<double>(coarse)));
  }
  return terms.size() == 1 ? terms.front() : ag::sum_scalars(terms);
}

std::vector<double> LossBreakdown::mean_fine_commonality() const {
  std::vector<double> out;
  for (std::size_t j = 0; j < fine_commonality_image.size(); ++j) {
    double s = 0.0;
    std::size_t count = 0;
    for (double v : fine_commonality_image[j]) s += v, ++count;
    for (double v : fine_commonality_text[j]) s += v, ++count;
    out.push_back(count ? s / static_cast<double>(count) : 0.0);
  }
  return out;
}

namespace {

struct SlotId {
  ag::Tensor loss_image;  // mean CE over batch
  ag::Tensor loss_text;
  ag::Tensor logits_image;
  ag::Tensor logits_text;
  std::vector<double> commonality_image;
  std::vector<double> commonality_text;
};

SlotId slot_identity(const ag::Tensor& image, const ag::Tensor& text,
                     std::span<const std::int64_t> labels, const IdentityClassifier& classifier) {
  SlotId out;
  const std::size_t n = labels.size(), c = classifier.weight.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> probs;
  out.logits_image = ag::matmul(image, classifier.weight);
  out.loss_image = ag::scale(ag::cross_entropy_rows(out.logits_image, labels, &probs), inv_n);
  for (std::size_t k = 0; k < n; ++k)
    out.commonality_image.push_back(commonality(std::span<const double>(probs.data() + k * c, c)));
  out.logits_text = ag::matmul(text, classifier.weight);
  out.loss_text = ag::scale(ag::cross_entropy_rows(out.logits_text, labels, &probs), inv_n);
  for (std::size_t k = 0; k < n; ++k)
    out.commonality_text.push_back(commonality(std::span<const double>(probs.data() + k * c, c)));
  return out;
}

// margin * (1 - C) per anchor, C either frozen values or differentiable.
ag::Tensor margins(double margin, const ag::Tensor& logits, const std::vector<double>& values,
                   const std::vector<double>* frozen, bool stop_gradient) {
  const std::size_t n = values.size();
  if (frozen || stop_gradient) {
    const auto& c = frozen ? *frozen : values;
    if (c.size() != n) throw ShapeError("frozen commonality has the wrong batch size");
    std::vector<double> m(n);
    for (std::size_t k = 0; k < n; ++k) m[k] = margin * (1.0 - c[k]);
    return ag::Tensor::constant({n}, std::move(m));
  }
  return ag::add(constant_vector(n, margin), ag::scale(commonality_rows(logits), -margin));
}

const std::vector<double>* frozen_slot(const std::vector<std::vector<double>>* table, std::size_t j) {
  if (!table || table->empty()) return nullptr;
  return &table->at(j);
}

}  // namespace

LossBreakdown total_loss(const BatchEmbeddings& batch, const ClassifierBank& classifiers,
                         const LossConfig& cfg, const CommonalityOverride* frozen) {
  const std::size_t n = batch.size();
  if (batch.image.size() != n || batch.text.size() != n)
    throw ShapeError("batch image/text/label counts differ");
  if (n < 2) throw DataError("a training batch needs at least two pairs");

  const auto& first = batch.image.front();
  const std::size_t coarse = first.coarse.defined() ? first.coarse.rows() : 0;
  const std::size_t fine = first.fine.defined() ? first.fine.rows() : 0;
  const bool use_coarse = cfg.use_coarse && coarse > 0;
  const bool use_fine = cfg.use_fine && fine > 0;
  if (use_coarse && classifiers.coarse_count() < coarse) throw ConfigError("missing coarse classifiers");
  if (use_fine && classifiers.fine_count() < fine) throw ConfigError("missing fine classifiers");

  LossBreakdown out;
  std::vector<ag::Tensor> id_image, id_text, rank_terms, fine_terms;

  const ag::Tensor gv = stack_slot(batch.image, 0);
  const ag::Tensor gt = stack_slot(batch.text, 0);
  const SlotId global = slot_identity(gv, gt, batch.labels, classifiers.global());
  id_image.push_back(global.loss_image);
  id_text.push_back(global.loss_text);
  rank_terms.push_back(ranking_loss(gv, gt, batch.labels, cfg.margin));

  if (use_coarse) {
    const double w = 1.0 / static_cast<double>(coarse);
    std::vector<ag::Tensor> ids_v, ids_t, ranks;
    for (std::size_t i = 0; i < coarse; ++i) {
      const ag::Tensor cv = stack_slot(batch.image, 1 + i);
      const ag::Tensor ct = stack_slot(batch.text, 1 + i);
      SlotId slot = slot_identity(cv, ct, batch.labels, classifiers.coarse(i));
      ids_v.push_back(slot.loss_image);
      ids_t.push_back(slot.loss_text);
      if (cfg.cmr_on_coarse) {
        const auto* fv = frozen ? frozen_slot(&frozen->coarse_image, i) : nullptr;
        const auto* ft = frozen ? frozen_slot(&frozen->coarse_text, i) : nullptr;
        ranks.push_back(margin_ranking(
            cv, ct, batch.labels,
            margins(cfg.margin, slot.logits_image, slot.commonality_image, fv, cfg.stop_commonality_gradient),
            margins(cfg.margin, slot.logits_text, slot.commonality_text, ft, cfg.stop_commonality_gradient)));
      } else {
        ranks.push_back(ranking_loss(cv, ct, batch.labels, cfg.margin));
      }
      out.coarse_commonality_image.push_back(std::move(slot.commonality_image));
      out.coarse_commonality_text.push_back(std::move(slot.commonality_text));
    }
    id_image.push_back(ag::scale(ag::sum_scalars(ids_v), w));
    id_text.push_back(ag::scale(ag::sum_scalars(ids_t), w));
    rank_terms.push_back(ag::scale(ag::sum_scalars(ranks), w));
  }

  if (use_fine) {
    const double w = 1.0 / static_cast<double>(fine);
    std::vector<ag::Tensor> ids_v, ids_t;
    for (std::size_t j = 0; j < fine; ++j) {
      const ag::Tensor fv = stack_slot(batch.image, 1 + coarse + j);
      const ag::Tensor ft = stack_slot(batch.text, 1 + coarse + j);
      SlotId slot = slot_identity(fv, ft, batch.labels, classifiers.fine(j));
      ids_v.push_back(slot.loss_image);
      ids_t.push_back(slot.loss_text);
      if (cfg.use_cmr) {
        const auto* frozen_v = frozen ? frozen_slot(&frozen->fine_image, j) : nullptr;
        const auto* frozen_t = frozen ? frozen_slot(&frozen->fine_text, j) : nullptr;
        fine_terms.push_back(margin_ranking(
            fv, ft, batch.labels,
            margins(cfg.margin, slot.logits_image, slot.commonality_image, frozen_v,
                    cfg.stop_commonality_gradient),
            margins(cfg.margin, slot.logits_text, slot.commonality_text, frozen_t,
                    cfg.stop_commonality_gradient)));
      } else {
        fine_terms.push_back(ranking_loss(fv, ft, batch.labels, cfg.margin));
      }
      out.fine_commonality_image.push_back(std::move(slot.commonality_image));
      out.fine_commonality_text.push_back(std::move(slot.commonality_text));
    }
    id_image.push_back(ag::scale(ag::sum_scalars(ids_v), w));
    id_text.push_back(ag::scale(ag::sum_scalars(ids_t), w));
  }

  const ag::Tensor id_v = ag::sum_scalars(id_image);
  const ag::Tensor id_t = ag::sum_scalars(id_text);
  const ag::Tensor rank = ag::sum_scalars(rank_terms);
  std::vector<ag::Tensor> all{id_v, id_t, rank};
  if (!fine_terms.empty()) {
    const ag::Tensor fine_rank = ag::scale(ag::sum_scalars(fine_terms), 1.0 / static_cast<double>(fine));
    out.fine_ranking = fine_rank.item();
    all.push_back(fine_rank);
  }
  out.id_image = id_v.item();
  out.id_text = id_t.item();
  out.ranking = rank.item();
  out.total = ag::sum_scalars(all);
  return out;
}

}  // namespace c2f
