#pragma once

// Multi-granularity embeddings per modality: one global vector (max pooled
// backbone features), D coarse vectors (shared decoder tokens) and P fine
// vectors (horizontal image bands / dedicated text tokens).

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "c2f/attention.hpp"
#include "c2f/backbones.hpp"

namespace c2f {

enum class Modality : std::uint8_t { Image = 0, Text = 1 };

const char* modality_name(Modality m);

// Plain-value embedding set used for retrieval and persistence.
struct EmbeddingSet {
  Modality modality = Modality::Image;
  std::size_t dim = 0;
  std::size_t coarse_count = 0;
  std::size_t fine_count = 0;
  std::vector<double> global;  // d
  std::vector<double> coarse;  // D * d
  std::vector<double> fine;    // P * d

  std::size_t slot_count() const { return 1 + coarse_count + fine_count; }
  // Slot 0 is global, 1..D coarse, D+1..D+P fine.
  std::span<const double> slot(std::size_t k) const;
  std::span<const double> coarse_row(std::size_t i) const;
  std::span<const double> fine_row(std::size_t j) const;
  bool all_finite() const;
};

// Graph-backed embeddings for training.
struct EmbeddingTensors {
  Modality modality = Modality::Image;
  ag::Tensor global;  // (1, d)
  ag::Tensor coarse;  // (D, d)
  ag::Tensor fine;    // (P, d)

  EmbeddingSet values() const;
};

struct TextTokenSet {
  ag::Tensor tokens;  // (P, d)
  std::size_t count() const { return tokens.rows(); }
};

// Global max pooling over unmasked rows; (1, d).
ag::Tensor global_embed(const ag::Tensor& features, const ag::Mask& mask = {});

struct CoarseOutput {
  ag::Tensor coarse;  // (D, d)
  CrossAttentionRecord record;
};

CoarseOutput coarse_embed(const ag::Tensor& memory, const ag::Mask& mask,
                          const SharedTokenSet& tokens, const AttentionParameters& decoder);

// Mean of the decoder weights over heads and tokens, (1, sequence).
ag::Tensor foreground_map(const CrossAttentionRecord& record, bool peak_normalize = false);

// memory + A_avg (broadcast over channels) * memory.
ag::Tensor foreground_attend(const ag::Tensor& visual_memory, const CrossAttentionRecord& record,
                             bool peak_normalize = false);

// Max pools P contiguous row bands of the flattened map; (P, d).
ag::Tensor fine_embed_image(const ag::Tensor& attended, std::size_t parts);

ag::Tensor fine_embed_text(const ag::Tensor& text_memory, const ag::Mask& mask,
                           const TextTokenSet& text_tokens, const AttentionParameters& decoder);

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t heads = 4;         // n
  std::size_t coarse_tokens = 4;  // D
  std::size_t fine_parts = 4;     // P
  bool text_position_encoding = true;
  bool foreground_peak_normalize = false;
  bool separate_decoders = false;
  double init_stddev = 0.02;            // tokens and position tables
  double attention_init_stddev = 0.0;   // <= 0: Glorot

  void validate() const;
};

class CoarseToFineModel {
 public:
  struct ImageForward {
    VisualFeatureMap features;
    ag::Tensor memory;  // encoder output, (r, d)
    CrossAttentionRecord coarse_record;
    ag::Tensor foreground;  // A_avg, (1, r)
    EmbeddingTensors embeddings;
  };
  struct TextForward {
    TokenSequence tokens;
    ag::Tensor memory;  // (l, d)
    CrossAttentionRecord coarse_record;
    CrossAttentionRecord fine_record;
    EmbeddingTensors embeddings;
  };

  // Registers every learnable tensor in `store`. Backbone tensors go to the
  // "backbone_image" / "backbone_text" groups, everything else to "head".
  CoarseToFineModel(const ModelConfig& cfg, ParameterStore& store, Rng& rng);

  ImageForward forward_image(const Image& image) const;
  TextForward forward_text(std::span<const std::int64_t> token_ids) const;

  // Inference helpers: no graph is recorded.
  EmbeddingSet embed_image(const Image& image) const;
  EmbeddingSet embed_text(std::span<const std::int64_t> token_ids) const;

  const ModelConfig& config() const { return cfg_; }
  const SharedTokenSet& shared_tokens(Modality m) const;
  const AttentionParameters& decoder(Modality m) const;
  const AttentionParameters& encoder(Modality m) const;
  const TextTokenSet& text_tokens() const { return text_tokens_; }
  const ImageBackbone& image_backbone() const { return *image_backbone_; }
  const TextBackbone& text_backbone() const { return *text_backbone_; }
  TextExtractionStats& text_stats() const { return *text_stats_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ImageBackbone> image_backbone_;
  std::unique_ptr<TextBackbone> text_backbone_;
  PositionEncoding image_position_;
  PositionEncoding text_position_;
  AttentionParameters image_encoder_;
  AttentionParameters text_encoder_;
  AttentionParameters image_decoder_;
  AttentionParameters text_decoder_;  // same tensors as image_decoder_ unless separated
  SharedTokenSet image_tokens_;
  SharedTokenSet text_side_tokens_;  // same tensor as image_tokens_ unless separated
  TextTokenSet text_tokens_;
  std::unique_ptr<TextExtractionStats> text_stats_;
};

// Persisted embedding record. Binary layout (little-endian):
//   header: "C2FE" magic, u32 version=1, u32 d, u32 D, u32 P, u64 count
//   record: u32 id length, id bytes, u8 modality, i64 label,
//           f32[(1 + D + P) * d] = global, coarse rows, fine rows
struct EmbeddingRecord {
  std::string id;
  std::int64_t label = -1;
  EmbeddingSet set;
};

void write_embedding_file(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> read_embedding_file(const std::filesystem::path& path);

}  // namespace c2f
