#include "c2f/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "c2f/error.hpp"

namespace c2f {

const char* modality_name(Modality m) { return m == Modality::Image ? "image" : "text"; }

std::span<const double> EmbeddingSet::slot(std::size_t k) const {
  if (k == 0) return global;
  if (k <= coarse_count) return coarse_row(k - 1);
  if (k < slot_count()) return fine_row(k - 1 - coarse_count);
  throw ShapeError("embedding slot " + std::to_string(k) + " out of range");
}

std::span<const double> EmbeddingSet::coarse_row(std::size_t i) const {
  if (i >= coarse_count) throw ShapeError("coarse slot out of range");
  return std::span<const double>(coarse).subspan(i * dim, dim);
}

std::span<const double> EmbeddingSet::fine_row(std::size_t j) const {
  if (j >= fine_count) throw ShapeError("fine slot out of range");
  return std::span<const double>(fine).subspan(j * dim, dim);
}

bool EmbeddingSet::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(global) && finite(coarse) && finite(fine);
}

EmbeddingSet EmbeddingTensors::values() const {
  EmbeddingSet s;
  s.modality = modality;
  s.dim = global.size();
  s.coarse_count = coarse.defined() ? coarse.rows() : 0;
  s.fine_count = fine.defined() ? fine.rows() : 0;
  s.global.assign(global.values().begin(), global.values().end());
  if (coarse.defined()) s.coarse.assign(coarse.values().begin(), coarse.values().end());
  if (fine.defined()) s.fine.assign(fine.values().begin(), fine.values().end());
  return s;
}

ag::Tensor global_embed(const ag::Tensor& features, const ag::Mask& mask) {
  if (features.rank() != 2 || features.rows() == 0) throw ShapeError("global_embed needs a (seq, d) matrix");
  return ag::max_pool_rows(features, 0, features.rows(), mask);
}

CoarseOutput coarse_embed(const ag::Tensor& memory, const ag::Mask& mask,
                          const SharedTokenSet& tokens, const AttentionParameters& decoder) {
  CoarseOutput out;
  out.record = decode(tokens.tokens, memory, mask, decoder);
  out.coarse = out.record.output;
  return out;
}

ag::Tensor foreground_map(const CrossAttentionRecord& record, bool peak_normalize) {
  if (record.weights.empty()) throw ShapeError("cross-attention record holds no weights");
  ag::Tensor stacked =
      record.weights.size() == 1 ? record.weights.front() : ag::concat_rows(record.weights);
  ag::Tensor average = ag::mean_rows(stacked);
  if (!peak_normalize) return average;
  const auto v = average.values();
  const double peak = *std::max_element(v.begin(), v.end());
  return peak > 0.0 ? ag::scale(average, 1.0 / peak) : average;
}

ag::Tensor foreground_attend(const ag::Tensor& visual_memory, const CrossAttentionRecord& record,
                             bool peak_normalize) {
  if (visual_memory.rank() != 2) throw ShapeError("foreground_attend needs a (r, d) memory");
  if (record.sequence_length() != visual_memory.rows())
    throw ShapeError("cross-attention record covers " + std::to_string(record.sequence_length()) +
                     " positions, memory has " + std::to_string(visual_memory.rows()));
  ag::Tensor weights = foreground_map(record, peak_normalize);
  return ag::add(visual_memory, ag::scale_rows(visual_memory, weights));
}

ag::Tensor fine_embed_image(const ag::Tensor& attended, std::size_t parts) {
  if (attended.rank() != 2) throw ShapeError("fine_embed_image needs a (r, d) map");
  const std::size_t r = attended.rows();
  if (parts == 0 || r % parts != 0)
    throw ShapeError(std::to_string(r) + " positions cannot be split into " + std::to_string(parts) +
                     " equal bands");
  const std::size_t band = r / parts;
  std::vector<ag::Tensor> rows;
  rows.reserve(parts);
  for (std::size_t j = 0; j < parts; ++j)
    rows.push_back(ag::max_pool_rows(attended, j * band, (j + 1) * band));
  return parts == 1 ? rows.front() : ag::concat_rows(rows);
}

ag::Tensor fine_embed_text(const ag::Tensor& text_memory, const ag::Mask& mask,
                           const TextTokenSet& text_tokens, const AttentionParameters& decoder) {
  return decode(text_tokens.tokens, text_memory, mask, decoder).output;
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  backbone.validate(heads);
  if (coarse_tokens == 0) throw ConfigError("coarse token count D must be at least 1");
  if (fine_parts == 0) throw ConfigError("fine part count P must be at least 1");
  if (backbone.grid_height % fine_parts != 0)
    throw ConfigError("grid height " + std::to_string(backbone.grid_height) +
                      " must be divisible by P = " + std::to_string(fine_parts) +
                      " for clean horizontal bands");
}

CoarseToFineModel::CoarseToFineModel(const ModelConfig& cfg, ParameterStore& store, Rng& rng)
    : cfg_(cfg), text_stats_(std::make_unique<TextExtractionStats>()) {
  cfg_.validate();
  const auto& bb = cfg_.backbone;
  const std::size_t d = bb.feature_dim;
  const double sd = cfg_.init_stddev;
  if (sd <= 0.0) throw ConfigError("init stddev must be positive (zero-initialized tokens collapse)");

  image_backbone_ = make_image_backbone(bb, store, rng);
  text_backbone_ = make_text_backbone(bb, store, rng);

  image_position_.table = store.normal("encoder.image.position", "head", {bb.positions(), d}, sd, rng);
  if (cfg_.text_position_encoding)
    text_position_.table = store.normal("encoder.text.position", "head", {bb.max_words, d}, sd, rng);
  image_encoder_ = AttentionParameters::create(store, "encoder.image", "head", d, cfg_.heads, rng, cfg_.attention_init_stddev);
  text_encoder_ = AttentionParameters::create(store, "encoder.text", "head", d, cfg_.heads, rng, cfg_.attention_init_stddev);

  image_decoder_ = AttentionParameters::create(store, "decoder", "head", d, cfg_.heads, rng, cfg_.attention_init_stddev);
  image_tokens_.tokens = store.normal("tokens.shared", "head", {cfg_.coarse_tokens, d}, sd, rng);
  if (cfg_.separate_decoders) {
    text_decoder_ = AttentionParameters::create(store, "decoder.text", "head", d, cfg_.heads, rng, cfg_.attention_init_stddev);
    text_side_tokens_.tokens = store.normal("tokens.shared.text", "head", {cfg_.coarse_tokens, d}, sd, rng);
  } else {
    text_decoder_ = image_decoder_;
    text_side_tokens_ = image_tokens_;
  }
  text_tokens_.tokens = store.normal("tokens.text_fine", "head", {cfg_.fine_parts, d}, sd, rng);
}

const SharedTokenSet& CoarseToFineModel::shared_tokens(Modality m) const {
  return m == Modality::Image ? image_tokens_ : text_side_tokens_;
}

const AttentionParameters& CoarseToFineModel::decoder(Modality m) const {
  return m == Modality::Image ? image_decoder_ : text_decoder_;
}

const AttentionParameters& CoarseToFineModel::encoder(Modality m) const {
  return m == Modality::Image ? image_encoder_ : text_encoder_;
}

CoarseToFineModel::ImageForward CoarseToFineModel::forward_image(const Image& image) const {
  ImageForward out;
  out.features = extract_visual(*image_backbone_, image, cfg_.backbone);
  const ag::Mask none;
  out.memory = encode(add_position(out.features.features, image_position_), none, image_encoder_);

  auto coarse = coarse_embed(out.memory, none, image_tokens_, image_decoder_);
  out.coarse_record = std::move(coarse.record);
  out.foreground = foreground_map(out.coarse_record, cfg_.foreground_peak_normalize);
  ag::Tensor attended = ag::add(out.memory, ag::scale_rows(out.memory, out.foreground));

  out.embeddings.modality = Modality::Image;
  out.embeddings.global = global_embed(out.features.features);
  out.embeddings.coarse = coarse.coarse;
  out.embeddings.fine = fine_embed_image(attended, cfg_.fine_parts);
  return out;
}

CoarseToFineModel::TextForward CoarseToFineModel::forward_text(
    std::span<const std::int64_t> token_ids) const {
  TextForward out;
  out.tokens = extract_textual(*text_backbone_, token_ids, cfg_.backbone, text_stats_.get());
  ag::Tensor input = out.tokens.features;
  if (cfg_.text_position_encoding) input = add_position(input, text_position_);
  out.memory = encode(input, out.tokens.mask, text_encoder_);

  auto coarse = coarse_embed(out.memory, out.tokens.mask, text_side_tokens_, text_decoder_);
  out.coarse_record = std::move(coarse.record);
  out.fine_record = decode(text_tokens_.tokens, out.memory, out.tokens.mask, text_decoder_);

  out.embeddings.modality = Modality::Text;
  out.embeddings.global = global_embed(out.tokens.features, out.tokens.mask);
  out.embeddings.coarse = coarse.coarse;
  out.embeddings.fine = out.fine_record.output;
  return out;
}

EmbeddingSet CoarseToFineModel::embed_image(const Image& image) const {
  ag::NoGradGuard guard;
  return forward_image(image).embeddings.values();
}

EmbeddingSet CoarseToFineModel::embed_text(std::span<const std::int64_t> token_ids) const {
  ag::NoGradGuard guard;
  return forward_text(token_ids).embeddings.values();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kEmbeddingMagic[4] = {'C', '2', 'F', 'E'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated embedding file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

void put_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

double get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void write_embedding_file(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  std::size_t d = 0, big_d = 0, p = 0;
  if (!records.empty()) {
    d = records.front().set.dim;
    big_d = records.front().set.coarse_count;
    p = records.front().set.fine_count;
  }
  for (const auto& r : records) {
    const auto& s = r.set;
    if (s.dim != d || s.coarse_count != big_d || s.fine_count != p)
      throw ShapeError("embedding records disagree on (d, D, P)");
    if (s.global.size() != d || s.coarse.size() != big_d * d || s.fine.size() != p * d)
      throw ShapeError("embedding record " + r.id + " has inconsistent storage");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kEmbeddingMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(big_d));
  put_u32(out, static_cast<std::uint32_t>(p));
  put_u64(out, records.size());
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.id.size()));
    out.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
    out.put(static_cast<char>(r.set.modality));
    put_u64(out, static_cast<std::uint64_t>(r.label));
    for (double v : r.set.global) put_f32(out, v);
    for (double v : r.set.coarse) put_f32(out, v);
    for (double v : r.set.fine) put_f32(out, v);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<EmbeddingRecord> read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw DataError(path.string() + " is not an embedding file");
  if (get_u32(in) != 1) throw DataError("unsupported embedding file version");
  const std::size_t d = get_u32(in), big_d = get_u32(in), p = get_u32(in);
  const auto count = get_u64(in);
  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    const auto len = get_u32(in);
    r.id.resize(len);
    if (!in.read(r.id.data(), len)) throw DataError("truncated embedding file");
    const int modality = in.get();
    if (modality != 0 && modality != 1) throw DataError("bad modality tag in embedding file");
    r.set.modality = static_cast<Modality>(modality);
    r.label = static_cast<std::int64_t>(get_u64(in));
    r.set.dim = d;
    r.set.coarse_count = big_d;
    r.set.fine_count = p;
    r.set.global.resize(d);
    r.set.coarse.resize(big_d * d);
    r.set.fine.resize(p * d);
    for (auto& v : r.set.global) v = get_f32(in);
    for (auto& v : r.set.coarse) v = get_f32(in);
    for (auto& v : r.set.fine) v = get_f32(in);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace c2f
