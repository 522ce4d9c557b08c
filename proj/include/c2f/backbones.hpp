#pragma once

// Image and text feature extractors behind a shape contract:
//   image (C, H, W)      -> VisualFeatureMap, `grid_height * grid_width` rows of d
//   token ids (<= l ids)  -> TokenSequence, (l, d) with a validity mask
// Extractors are looked up by name in a registry so larger pretrained models
// can be plugged in without touching the rest of the pipeline.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "c2f/attention.hpp"
#include "c2f/autograd.hpp"
#include "c2f/image_io.hpp"
#include "c2f/ops.hpp"
#include "c2f/parameters.hpp"

namespace c2f {

struct BackboneConfig {
  std::size_t feature_dim = 64;  // d
  std::size_t grid_height = 8;   // h
  std::size_t grid_width = 4;    // w
  std::size_t max_words = 32;    // l
  std::size_t vocab_size = 0;
  std::size_t image_channels = 3;
  std::size_t image_height = 64;
  std::size_t image_width = 32;
  std::string image_backbone = "tiny-conv";
  std::string text_backbone = "tiny-transformer";
  std::size_t text_heads = 4;
  bool truncate_long_captions = true;
  bool allow_empty_caption = false;

  std::size_t positions() const { return grid_height * grid_width; }  // r
  // Throws ConfigError on non-positive sizes or d not divisible by `heads`.
  void validate(std::size_t heads) const;
};

// Rows are grid cells flattened top-to-bottom, then left-to-right.
struct VisualFeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  ag::Tensor features;  // (height * width, d)
};

struct TokenSequence {
  ag::Tensor features;  // (l, d); padding rows are zero
  ag::Mask mask;        // l entries, 1 for real words

  std::size_t word_count() const;
};

class ImageBackbone {
 public:
  virtual ~ImageBackbone() = default;
  // image: (C, H, W) -> (positions, d)
  virtual ag::Tensor forward(const ag::Tensor& image) const = 0;
};

class TextBackbone {
 public:
  virtual ~TextBackbone() = default;
  // ids: exactly l entries (padded with 0); returns (l, d) before masking.
  virtual ag::Tensor forward(std::span<const std::int64_t> ids, const ag::Mask& mask) const = 0;
};

struct ConvLayerSpec {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
  bool relu;
};

// Strided convolution stack; the last layer's channels must equal d.
class TinyConvBackbone : public ImageBackbone {
 public:
  TinyConvBackbone(std::size_t in_channels, std::vector<ConvLayerSpec> layers,
                   ParameterStore& store, Rng& rng, const std::string& prefix = "backbone.image");
  static std::vector<ConvLayerSpec> default_layers(std::size_t feature_dim);

  ag::Tensor forward(const ag::Tensor& image) const override;

  std::size_t layer_count() const { return layers_.size(); }
  ag::Tensor weight(std::size_t i) const { return weights_.at(i); }
  ag::Tensor bias(std::size_t i) const { return biases_.at(i); }

 private:
  std::vector<ConvLayerSpec> layers_;
  std::vector<ag::Tensor> weights_;
  std::vector<ag::Tensor> biases_;
};

// Token embedding + learned position embedding + one residual self-attention
// block.
class TinyTextBackbone : public TextBackbone {
 public:
  TinyTextBackbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng,
                   const std::string& prefix = "backbone.text");
  ag::Tensor forward(std::span<const std::int64_t> ids, const ag::Mask& mask) const override;

  ag::Tensor embedding_table() const { return embeddings_; }
  void set_attention_enabled(bool on) { use_attention_ = on; }

 private:
  ag::Tensor embeddings_;
  PositionEncoding positions_;
  AttentionParameters attention_;
  bool use_attention_ = true;
};

// Parameters for image backbones are registered under group "backbone_image",
// text backbones under "backbone_text".
using ImageBackboneFactory = std::function<std::unique_ptr<ImageBackbone>(
    const BackboneConfig&, ParameterStore&, Rng&)>;
using TextBackboneFactory = std::function<std::unique_ptr<TextBackbone>(
    const BackboneConfig&, ParameterStore&, Rng&)>;

void register_image_backbone(const std::string& name, ImageBackboneFactory factory);
void register_text_backbone(const std::string& name, TextBackboneFactory factory);
std::vector<std::string> image_backbone_names();
std::vector<std::string> text_backbone_names();
std::unique_ptr<ImageBackbone> make_image_backbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng);
std::unique_ptr<TextBackbone> make_text_backbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng);

ag::Tensor image_tensor(const Image& image);

// Validates the input size, runs the backbone and checks the output contract
// (shape and finiteness).
VisualFeatureMap extract_visual(const ImageBackbone& backbone, const Image& image,
                                const BackboneConfig& cfg);

struct TextExtractionStats {
  std::atomic<std::size_t> truncated{0};
};

// Pads to l with id 0, builds the mask and zeroes padding rows. Sequences
// longer than l are truncated (counted in `stats`) or rejected, per config.
TokenSequence extract_textual(const TextBackbone& backbone, std::span<const std::int64_t> ids,
                              const BackboneConfig& cfg, TextExtractionStats* stats = nullptr);

// Closed vocabulary with whitespace/lowercase tokenization. Ids 0 and 1 are
// reserved for padding and unknown words.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnknown = 1;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  static std::vector<std::string> tokenize(const std::string& text);
  static Vocabulary from_texts(const std::vector<std::string>& texts);

  std::int64_t id(const std::string& word) const;
  const std::string& word(std::int64_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<std::int64_t> encode(const std::string& text) const;

 private:
  void insert(const std::string& word);
  std::vector<std::string> words_;
  std::map<std::string, std::int64_t> index_;
};

}  // namespace c2f
