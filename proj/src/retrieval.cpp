#include "c2f/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "c2f/error.hpp"
#include "c2f/objectives.hpp"

namespace c2f {

SimilarityBreakdown pair_similarity(const EmbeddingSet& image, const EmbeddingSet& text,
                                    const ScoreConfig& score) {
  if (image.dim != text.dim || image.coarse_count != text.coarse_count ||
      image.fine_count != text.fine_count)
    throw ShapeError("embedding sets differ in (d, D, P)");
  SimilarityBreakdown out;
  if (score.global) {
    out.global = cosine_similarity(image.global, text.global);
    out.total += out.global;
  }
  if (score.coarse)
    for (std::size_t i = 0; i < image.coarse_count; ++i) {
      out.coarse.push_back(cosine_similarity(image.coarse_row(i), text.coarse_row(i)));
      out.total += out.coarse.back();
    }
  if (score.fine)
    for (std::size_t j = 0; j < image.fine_count; ++j) {
      out.fine.push_back(cosine_similarity(image.fine_row(j), text.fine_row(j)));
      out.total += out.fine.back();
    }
  return out;
}

GalleryIndex::GalleryIndex(std::vector<EmbeddingRecord> records) : records_(std::move(records)) {
  std::set<std::string> ids;
  for (const auto& r : records_) {
    if (!ids.insert(r.id).second) throw DataError("duplicate gallery id: " + r.id);
    if (r.set.modality != Modality::Image) throw DataError("gallery record " + r.id + " is not an image");
  }
  if (!records_.empty()) {
    dim_ = records_.front().set.dim;
    coarse_ = records_.front().set.coarse_count;
    fine_ = records_.front().set.fine_count;
    for (const auto& r : records_)
      if (r.set.dim != dim_ || r.set.coarse_count != coarse_ || r.set.fine_count != fine_)
        throw ShapeError("gallery records disagree on (d, D, P)");
  }
}

GalleryIndex GalleryIndex::load(const std::filesystem::path& path) {
  return GalleryIndex(read_embedding_file(path));
}

void GalleryIndex::save(const std::filesystem::path& path) const {
  write_embedding_file(path, records_);
}

RetrievalResult rank_gallery(const EmbeddingSet& query, const GalleryIndex& index,
                             std::size_t top_k, const ScoreConfig& score, bool with_breakdown,
                             const std::string& query_id) {
  const auto& records = index.records();
  std::vector<SimilarityBreakdown> all(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) all[i] = pair_similarity(records[i].set, query, score);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (all[a].total != all[b].total) return all[a].total > all[b].total;
    return records[a].id < records[b].id;
  });
  if (top_k > 0 && top_k < order.size()) order.resize(top_k);

  RetrievalResult out;
  out.query_id = query_id;
  for (auto i : order) {
    out.ranked.push_back(i);
    out.ranked_ids.push_back(records[i].id);
    out.scores.push_back(all[i].total);
    if (with_breakdown) out.breakdown.push_back(all[i]);
  }
  return out;
}

std::map<std::size_t, double> recall_at_k(const std::vector<LabeledQuery>& queries,
                                          const GalleryIndex& index,
                                          const std::vector<std::size_t>& ks,
                                          const ScoreConfig& score) {
  std::map<std::size_t, double> out;
  for (auto k : ks) {
    if (k == 0) throw ConfigError("R@K needs K >= 1");
    out[k] = 0.0;
  }
  if (queries.empty()) return out;
  const auto& records = index.records();
  for (const auto& q : queries) {
    const auto result = rank_gallery(q.set, index, 0, score);
    std::size_t first_hit = result.ranked.size();
    for (std::size_t r = 0; r < result.ranked.size(); ++r)
      if (records[result.ranked[r]].label == q.label) {
        first_hit = r;
        break;
      }
    for (auto k : ks)
      if (first_hit < k) out[k] += 1.0;
  }
  for (auto& [k, v] : out) v /= static_cast<double>(queries.size());
  return out;
}

std::string format_recall_table(const std::vector<RecallRow>& rows) {
  std::set<std::size_t> ks;
  std::set<std::string> extras;
  std::size_t name_width = 6;
  for (const auto& r : rows) {
    for (const auto& [k, _] : r.recall) ks.insert(k);
    for (const auto& [e, _] : r.extra) extras.insert(e);
    name_width = std::max(name_width, r.name.size());
  }
  std::string out = fmt::format("{:<{}}", "Config", name_width);
  for (auto k : ks) out += fmt::format(" | {:>7}", fmt::format("R@{}", k));
  for (const auto& e : extras) out += fmt::format(" | {:>12}", e);
  out += '\n';
  out += std::string(out.size() - 1, '-') + '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}", r.name, name_width);
    for (auto k : ks) {
      auto it = r.recall.find(k);
      out += it == r.recall.end() ? fmt::format(" | {:>7}", "-") : fmt::format(" | {:>7.2f}", 100.0 * it->second);
    }
    for (const auto& e : extras) {
      auto it = r.extra.find(e);
      out += it == r.extra.end() ? fmt::format(" | {:>12}", "-") : fmt::format(" | {:>12.4f}", it->second);
    }
    out += '\n';
  }
  return out;
}

std::string recall_rows_jsonl(const std::vector<RecallRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["config"] = r.name;
    for (const auto& [k, v] : r.recall) j["R@" + std::to_string(k)] = v;
    for (const auto& [e, v] : r.extra) j[e] = v;
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace c2f
