#include "c2f/backbones.hpp"

#include <cctype>
#include <cmath>
#include <mutex>

#include "c2f/error.hpp"

namespace c2f {

void BackboneConfig::validate(std::size_t heads) const {
  if (feature_dim == 0 || grid_height == 0 || grid_width == 0 || max_words == 0)
    throw ConfigError("backbone sizes (d, grid, l) must be positive");
  if (image_channels == 0 || image_height == 0 || image_width == 0)
    throw ConfigError("image size must be positive");
  if (heads == 0 || feature_dim % heads != 0)
    throw ConfigError("feature dim " + std::to_string(feature_dim) +
                      " is not divisible by head count " + std::to_string(heads));
  if (text_heads == 0 || feature_dim % text_heads != 0)
    throw ConfigError("feature dim is not divisible by the text backbone head count");
}

std::size_t TokenSequence::word_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------

TinyConvBackbone::TinyConvBackbone(std::size_t in_channels, std::vector<ConvLayerSpec> layers,
                                   ParameterStore& store, Rng& rng, const std::string& prefix)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("conv backbone needs at least one layer");
  std::size_t channels = in_channels;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    if (spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0)
      throw ConfigError("conv layer sizes must be positive");
    const double fan_in = static_cast<double>(channels * spec.kernel * spec.kernel);
    const auto tag = prefix + ".conv" + std::to_string(i);
    weights_.push_back(store.normal(tag + ".weight", "backbone_image",
                                    {spec.out_channels, channels, spec.kernel, spec.kernel},
                                    std::sqrt(2.0 / fan_in), rng));
    biases_.push_back(store.zeros(tag + ".bias", "backbone_image", {spec.out_channels}));
    channels = spec.out_channels;
  }
}

std::vector<ConvLayerSpec> TinyConvBackbone::default_layers(std::size_t feature_dim) {
  return {{16, 3, 2, true}, {32, 3, 2, true}, {64, 3, 2, true}, {feature_dim, 3, 1, false}};
}

ag::Tensor TinyConvBackbone::forward(const ag::Tensor& image) const {
  ag::Tensor x = image;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    x = ag::conv2d(x, weights_[i], biases_[i], spec.stride, spec.kernel / 2);
    if (spec.relu) x = ag::relu(x);
  }
  const std::size_t d = x.dim(0), positions = x.dim(1) * x.dim(2);
  return ag::transpose(ag::reshape(x, {d, positions}));
}

// ---------------------------------------------------------------------------

TinyTextBackbone::TinyTextBackbone(const BackboneConfig& cfg, ParameterStore& store, Rng& rng,
                                   const std::string& prefix) {
  if (cfg.vocab_size < 2) throw ConfigError("text backbone needs a vocabulary (vocab_size >= 2)");
  const double stddev = 1.0;  // unit-variance word and position vectors
  embeddings_ = store.normal(prefix + ".embedding", "backbone_text",
                             {cfg.vocab_size, cfg.feature_dim}, stddev, rng);
  positions_.table = store.normal(prefix + ".position", "backbone_text",
                                  {cfg.max_words, cfg.feature_dim}, stddev, rng);
  attention_ = AttentionParameters::create(store, prefix + ".attention", "backbone_text",
                                           cfg.feature_dim, cfg.text_heads, rng);
}

ag::Tensor TinyTextBackbone::forward(std::span<const std::int64_t> ids, const ag::Mask& mask) const {
  ag::Tensor x = ag::add(ag::embedding_lookup(embeddings_, ids), positions_.table);
  if (!use_attention_) return x;
  return encode(x, mask, attention_);
}

// ---------------------------------------------------------------------------

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, ImageBackboneFactory> image;
  std::map<std::string, TextBackboneFactory> text;

  Registry() {
    image["tiny-conv"] = [](const BackboneConfig& cfg, ParameterStore& store, Rng& rng) {
      return std::make_unique<TinyConvBackbone>(
          cfg.image_channels, TinyConvBackbone::default_layers(cfg.feature_dim), store, rng);
    };
    text["tiny-transformer"] = [](const BackboneConfig& cfg, ParameterStore& store, Rng& rng) {
      return std::make_unique<TinyTextBackbone>(cfg, store, rng);
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + " produced a non-finite value");
}

}  // namespace

void register_image_backbone(const std::string& name, ImageBackboneFactory factory) {
  std::lock_guard lock(registry().mutex);
  registry().image[name] = std::move(factory);
}

void register_text_backbone(const std::string& name, TextBackboneFactory factory) {
  std::lock_guard lock(registry().mutex);
  registry().text[name] = std::move(factory);
}

std::vector<std::string> image_backbone_names() {
  std::lock_guard lock(registry().mutex);
  std::vector<std::string> names;
  for (const auto& [k, _] : registry().image) names.push_back(k);
  return names;
}

std::vector<std::string> text_backbone_names() {
  std::lock_guard lock(registry().mutex);
  std::vector<std::string> names;
  for (const auto& [k, _] : registry().text) names.push_back(k);
  return names;
}

std::unique_ptr<ImageBackbone> make_image_backbone(const BackboneConfig& cfg, ParameterStore& store,
                                                   Rng& rng) {
  ImageBackboneFactory factory;
  {
    std::lock_guard lock(registry().mutex);
    auto it = registry().image.find(cfg.image_backbone);
    if (it == registry().image.end()) throw ConfigError("unknown image backbone: " + cfg.image_backbone);
    factory = it->second;
  }
  return factory(cfg, store, rng);
}

std::unique_ptr<TextBackbone> make_text_backbone(const BackboneConfig& cfg, ParameterStore& store,
                                                 Rng& rng) {
  TextBackboneFactory factory;
  {
    std::lock_guard lock(registry().mutex);
    auto it = registry().text.find(cfg.text_backbone);
    if (it == registry().text.end()) throw ConfigError("unknown text backbone: " + cfg.text_backbone);
    factory = it->second;
  }
  return factory(cfg, store, rng);
}

ag::Tensor image_tensor(const Image& image) {
  return ag::Tensor::constant({image.channels, image.height, image.width}, image.pixels);
}

VisualFeatureMap extract_visual(const ImageBackbone& backbone, const Image& image,
                                const BackboneConfig& cfg) {
  if (image.channels != cfg.image_channels || image.height != cfg.image_height ||
      image.width != cfg.image_width)
    throw ShapeError("image is " + std::to_string(image.channels) + "x" + std::to_string(image.height) +
                     "x" + std::to_string(image.width) + ", backbone expects " +
                     std::to_string(cfg.image_channels) + "x" + std::to_string(cfg.image_height) + "x" +
                     std::to_string(cfg.image_width));
  VisualFeatureMap map;
  map.height = cfg.grid_height;
  map.width = cfg.grid_width;
  map.features = backbone.forward(image_tensor(image));
  const ag::Shape expected{cfg.positions(), cfg.feature_dim};
  if (map.features.shape() != expected)
    throw ShapeError("image backbone returned " + ag::shape_string(map.features.shape()) +
                     ", contract requires " + ag::shape_string(expected));
  check_finite(map.features.values(), "image backbone");
  return map;
}

TokenSequence extract_textual(const TextBackbone& backbone, std::span<const std::int64_t> ids,
                              const BackboneConfig& cfg, TextExtractionStats* stats) {
  std::vector<std::int64_t> padded(ids.begin(), ids.end());
  if (padded.empty()) {
    if (!cfg.allow_empty_caption) throw DataError("caption is empty after tokenization");
    padded.push_back(Vocabulary::kUnknown);
  }
  if (padded.size() > cfg.max_words) {
    if (!cfg.truncate_long_captions)
      throw DataError("caption has " + std::to_string(padded.size()) + " words, limit is " +
                      std::to_string(cfg.max_words));
    padded.resize(cfg.max_words);
    if (stats) ++stats->truncated;
  }
  for (auto id : padded)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(cfg.vocab_size));

  TokenSequence seq;
  seq.mask.assign(cfg.max_words, 0);
  std::fill_n(seq.mask.begin(), padded.size(), 1);
  padded.resize(cfg.max_words, Vocabulary::kPad);

  ag::Tensor raw = backbone.forward(padded, seq.mask);
  const ag::Shape expected{cfg.max_words, cfg.feature_dim};
  if (raw.shape() != expected)
    throw ShapeError("text backbone returned " + ag::shape_string(raw.shape()) +
                     ", contract requires " + ag::shape_string(expected));
  check_finite(raw.values(), "text backbone");
  seq.features = ag::mask_rows(raw, seq.mask);
  return seq;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  insert("<pad>");
  insert("<unk>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>")
    throw DataError("vocabulary must start with <pad>, <unk>");
  for (const auto& w : words) insert(w);
}

void Vocabulary::insert(const std::string& word) {
  if (index_.count(word)) return;
  index_[word] = static_cast<std::int64_t>(words_.size());
  words_.push_back(word);
}

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary Vocabulary::from_texts(const std::vector<std::string>& texts) {
  // Sorted for a stable id assignment independent of caption order.
  std::map<std::string, int> seen;
  for (const auto& t : texts)
    for (auto& w : tokenize(t)) seen[w] = 1;
  Vocabulary vocab;
  for (const auto& [w, _] : seen) vocab.insert(w);
  return vocab;
}

std::int64_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& text) const {
  std::vector<std::int64_t> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

}  // namespace c2f
