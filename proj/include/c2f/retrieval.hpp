#pragma once

// Text-to-image retrieval over multi-granularity embeddings:
//   S(I, T) = s(g_v, g_t) + sum_i s(c_v^i, c_t^i) + sum_j s(f_v^j, f_t^j)
// with cosine similarity s, ranking and Recall@K.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "c2f/embedding.hpp"

namespace c2f {

// Which granularities enter the summed score.
struct ScoreConfig {
  bool global = true;
  bool coarse = true;
  bool fine = true;

  static ScoreConfig global_only() { return {true, false, false}; }
  static ScoreConfig coarse_only() { return {false, true, false}; }
  static ScoreConfig fine_only() { return {false, false, true}; }
};

struct SimilarityBreakdown {
  double total = 0.0;
  double global = 0.0;
  std::vector<double> coarse;
  std::vector<double> fine;
};

SimilarityBreakdown pair_similarity(const EmbeddingSet& image, const EmbeddingSet& text,
                                    const ScoreConfig& score = {});

// Immutable gallery of image embeddings sharing (d, D, P) with unique ids.
class GalleryIndex {
 public:
  GalleryIndex() = default;
  explicit GalleryIndex(std::vector<EmbeddingRecord> records);

  static GalleryIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t coarse_count() const { return coarse_; }
  std::size_t fine_count() const { return fine_; }

 private:
  std::vector<EmbeddingRecord> records_;
  std::size_t dim_ = 0, coarse_ = 0, fine_ = 0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<std::size_t> ranked;  // indices into the gallery
  std::vector<std::string> ranked_ids;
  std::vector<double> scores;       // non-increasing
  std::vector<SimilarityBreakdown> breakdown;  // filled on request
};

// Descending score, ties broken by ascending image id. top_k == 0 keeps all.
RetrievalResult rank_gallery(const EmbeddingSet& query, const GalleryIndex& index,
                             std::size_t top_k = 0, const ScoreConfig& score = {},
                             bool with_breakdown = false, const std::string& query_id = {});

struct LabeledQuery {
  std::string id;
  std::int64_t label = -1;
  EmbeddingSet set;
};

// Fraction of queries with at least one same-identity image in the top K.
std::map<std::size_t, double> recall_at_k(const std::vector<LabeledQuery>& queries,
                                          const GalleryIndex& index,
                                          const std::vector<std::size_t>& ks = {1, 5, 10},
                                          const ScoreConfig& score = {});

struct RecallRow {
  std::string name;
  std::map<std::size_t, double> recall;
  std::map<std::string, double> extra;  // additional numeric columns
};

// Fixed-width text table, R@K shown as percentages.
std::string format_recall_table(const std::vector<RecallRow>& rows);
// One JSON object per row, newline-delimited.
std::string recall_rows_jsonl(const std::vector<RecallRow>& rows);

}  // namespace c2f
