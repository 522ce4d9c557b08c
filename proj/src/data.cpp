#include "c2f/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "c2f/error.hpp"

namespace c2f {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split tag: " + s);
}

// ---------------------------------------------------------------------------

Dataset::Dataset(std::filesystem::path root, std::vector<PersonRecord> records)
    : root_(std::move(root)), records_(std::move(records)) {
  std::int64_t max_label = -1;
  for (const auto& r : records_) {
    if (r.label < 0) throw DataError("negative identity label");
    max_label = std::max(max_label, r.label);
  }
  num_classes_ = static_cast<std::size_t>(max_label + 1);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::string> Dataset::captions() const {
  std::vector<std::string> out;
  for (const auto& r : records_) out.push_back(r.caption);
  return out;
}

const Image& Dataset::image(const PersonRecord& record) const {
  if (record.image) return *record.image;
  auto it = cache_.find(record.image_path);
  if (it != cache_.end()) return *it->second;
  auto img = std::make_shared<const Image>(read_ppm(root_ / record.image_path));
  return *cache_.emplace(record.image_path, std::move(img)).first->second;
}

// ---------------------------------------------------------------------------

Dataset load_annotations(const std::filesystem::path& json_file, const LoadOptions& options) {
  std::ifstream in(json_file);
  if (!in) throw DataError("cannot open annotations " + json_file.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError(json_file.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw DataError(json_file.string() + ": expected a list of records");
  const auto root = json_file.parent_path();

  std::vector<PersonRecord> records;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& entry = doc[i];
    for (const char* field : {"split", "id", "file_path", "captions"})
      if (!entry.contains(field))
        throw DataError(fmt::format("{}: record {} is missing field '{}'", json_file.string(), i, field));
    const auto path = entry["file_path"].get<std::string>();
    if (!std::filesystem::exists(root / path)) {
      if (options.missing_images == MissingImagePolicy::Skip) {
        ++skipped;
        continue;
      }
      throw DataError(fmt::format("{}: record {} points at missing image {}", json_file.string(), i, path));
    }
    const Split split = parse_split(entry["split"].get<std::string>());
    const auto id = entry["id"].get<std::int64_t>();
    for (const auto& caption : entry["captions"]) {
      PersonRecord r;
      r.image_path = path;
      r.caption = caption.get<std::string>();
      r.source_id = id;
      r.split = split;
      records.push_back(std::move(r));
    }
  }

  // Dense relabeling in order of first appearance.
  std::map<std::pair<int, std::int64_t>, std::int64_t> dense;
  std::map<int, std::int64_t> next;
  for (auto& r : records) {
    const int scope = options.identities == IdentityPolicy::Global ? 0 : static_cast<int>(r.split);
    auto [it, inserted] = dense.try_emplace({scope, r.source_id}, next[scope]);
    if (inserted) ++next[scope];
    r.label = it->second;
  }
  Dataset ds(root, std::move(records));
  ds.set_skipped(skipped);
  return ds;
}

void write_annotations(const std::filesystem::path& json_file, const std::vector<PersonRecord>& records) {
  json doc = json::array();
  std::map<std::tuple<std::string, int, std::int64_t>, std::size_t> slot;
  for (const auto& r : records) {
    const auto key = std::make_tuple(r.image_path, static_cast<int>(r.split), r.source_id);
    auto it = slot.find(key);
    if (it == slot.end()) {
      it = slot.emplace(key, doc.size()).first;
      doc.push_back({{"split", split_name(r.split)},
                     {"id", r.source_id},
                     {"file_path", r.image_path},
                     {"captions", json::array()}});
    }
    doc[it->second]["captions"].push_back(r.caption);
  }
  std::ofstream out(json_file);
  if (!out) throw DataError("cannot write " + json_file.string());
  out << doc.dump(1) << '\n';
}

// ---------------------------------------------------------------------------

std::vector<NamedColor> SyntheticSpec::default_colors() {
  return {{"red", {0.85, 0.10, 0.10}},   {"green", {0.10, 0.65, 0.15}}, {"blue", {0.10, 0.20, 0.90}},
          {"yellow", {0.95, 0.90, 0.10}}, {"black", {0.05, 0.05, 0.05}}, {"white", {0.95, 0.95, 0.95}},
          {"orange", {1.00, 0.55, 0.00}}, {"purple", {0.55, 0.10, 0.70}}, {"pink", {1.00, 0.55, 0.75}},
          {"brown", {0.50, 0.30, 0.10}},  {"gray", {0.50, 0.50, 0.50}},  {"cyan", {0.10, 0.85, 0.90}}};
}

std::vector<NamedColor> SyntheticSpec::default_backgrounds() {
  return {{"beige", {0.85, 0.80, 0.65}},
          {"olive", {0.45, 0.45, 0.20}},
          {"navy", {0.10, 0.10, 0.35}},
          {"maroon", {0.40, 0.10, 0.15}}};
}

std::size_t SyntheticManifest::part_popularity(std::size_t part, std::int64_t id) const {
  const auto& who = identities.at(static_cast<std::size_t>(id));
  std::size_t n = 0;
  for (const auto& other : identities) n += other.parts[part] == who.parts[part] ? 1 : 0;
  return n;
}

std::string SyntheticManifest::describe(std::size_t part, const PartValue& v) const {
  (void)part;
  return spec.colors.at(v.color).name + " " + spec.patterns.at(v.pattern);
}

namespace {

const std::array<std::vector<std::string>, 4> kItemWords = {
    std::vector<std::string>{"hat", "cap"},
    std::vector<std::string>{"shirt", "top"},
    std::vector<std::string>{"pants", "trousers"},
    std::vector<std::string>{"shoes", "sneakers"}};

std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_identities < 2) throw ConfigError("synthetic data needs at least two identities");
  if (spec.images_per_identity == 0 || spec.captions_per_image == 0)
    throw ConfigError("images_per_identity and captions_per_image must be positive");
  if (spec.colors.empty() || spec.patterns.empty() || spec.backgrounds.empty())
    throw ConfigError("synthetic vocabularies must be non-empty");
  if (spec.canvas_height < 8 || spec.canvas_height % 4 != 0 || spec.canvas_width < 16)
    throw ConfigError("canvas must be at least 8x16 with height divisible by 4");
  for (double r : spec.sharing_rate)
    if (r < 0.0 || r > 1.0) throw ConfigError("sharing rate must lie in [0, 1]");
  if (spec.shared_values_per_part == 0) throw ConfigError("shared_values_per_part must be positive");
  const double combos = std::pow(static_cast<double>(spec.values_per_part()), 4.0) * 2.0;
  if (static_cast<double>(spec.num_identities) > combos)
    throw ConfigError("more identities than attribute combinations");
}

std::array<double, 3> alternate_shade(const std::array<double, 3>& c) {
  const double luminance = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
  const double target = luminance < 0.5 ? 1.0 : 0.0;
  return {0.5 * c[0] + 0.5 * target, 0.5 * c[1] + 0.5 * target, 0.5 * c[2] + 0.5 * target};
}

}  // namespace

SyntheticManifest draw_identities(const SyntheticSpec& spec) {
  validate_spec(spec);
  const std::size_t count = spec.num_identities;
  const std::size_t values = spec.values_per_part();
  for (std::size_t p = 0; p < 4; ++p) {
    const auto shared = static_cast<std::size_t>(std::llround(spec.sharing_rate[p] * static_cast<double>(count)));
    const std::size_t pool = shared > 0 ? std::min(spec.shared_values_per_part, values) : 0;
    if (count - shared + pool > values)
      throw ConfigError(fmt::format("part '{}' needs {} distinct values but only {} exist", kPartNames[p],
                                    count - shared + pool, values));
  }

  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(spec.seed * 1000003ULL + attempt);
    SyntheticManifest m;
    m.spec = spec;
    m.identities.resize(count);
    for (std::size_t i = 0; i < count; ++i) m.identities[i].id = static_cast<std::int64_t>(i);
    for (std::size_t p = 0; p < 4; ++p) {
      std::vector<PartValue> all;
      for (std::size_t c = 0; c < spec.colors.size(); ++c)
        for (std::size_t q = 0; q < spec.patterns.size(); ++q) all.push_back({c, q});
      std::shuffle(all.begin(), all.end(), rng);
      const auto shared = static_cast<std::size_t>(std::llround(spec.sharing_rate[p] * static_cast<double>(count)));
      const std::size_t pool = shared > 0 ? std::min(spec.shared_values_per_part, values) : 0;
      std::vector<std::size_t> order(count);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::size_t next_unique = pool;
      for (std::size_t k = 0; k < count; ++k) {
        auto& who = m.identities[order[k]];
        who.parts[p] = k < shared ? all[k % pool] : all[next_unique++];
      }
    }
    std::bernoulli_distribution bag(spec.bag_rate);
    for (auto& who : m.identities) who.bag = bag(rng);

    std::set<std::pair<std::array<PartValue, 4>, bool>> seen;
    bool unique = true;
    for (const auto& who : m.identities) unique = unique && seen.insert({who.parts, who.bag}).second;
    if (unique) return m;
  }
  throw ConfigError("could not draw unique attribute combinations for every identity");
}

Image render_person(const SyntheticManifest& manifest, const IdentityAttributes& who,
                    std::size_t background, Rng& rng) {
  const auto& spec = manifest.spec;
  const std::size_t height = spec.canvas_height, width = spec.canvas_width;
  Image img = Image::blank(3, height, width);
  const auto& bg = spec.backgrounds.at(background).rgb;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) img.at(c, y, x) = bg[c];

  std::uniform_int_distribution<int> shift(-2, 2);
  std::uniform_int_distribution<int> lift(-1, 1);
  std::uniform_real_distribution<double> brightness(0.85, 1.15);
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  const int body_width = static_cast<int>(width / 2);
  const int x0 = static_cast<int>(width / 4) + shift(rng);
  const int dy = lift(rng);
  const double gain = brightness(rng);
  const std::size_t band = height / 4;

  for (std::size_t y = 0; y < height; ++y) {
    const int src_y = std::clamp(static_cast<int>(y) - dy, 0, static_cast<int>(height) - 1);
    const std::size_t part = static_cast<std::size_t>(src_y) / band;
    const auto& value = who.parts[part];
    const auto& base = spec.colors.at(value.color).rgb;
    const auto alt = alternate_shade(base);
    for (int x = x0; x < x0 + body_width; ++x) {
      if (x < 0 || x >= static_cast<int>(width)) continue;
      bool use_alt = false;
      const auto& pattern = spec.patterns.at(value.pattern);
      if (pattern == "striped") use_alt = (src_y / 2) % 2 == 1;
      else if (pattern == "checked") use_alt = ((src_y / 2) + (x - x0) / 2) % 2 == 1;
      const auto& rgb = use_alt ? alt : base;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, static_cast<std::size_t>(x)) = rgb[c] * gain;
    }
  }
  if (who.bag) {
    const std::array<double, 3> bag_rgb = {0.30, 0.18, 0.05};
    for (std::size_t y = band + 2; y < 2 * band - 2; ++y)
      for (int x = x0 + body_width; x < x0 + body_width + 4; ++x) {
        if (x < 0 || x >= static_cast<int>(width)) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, static_cast<std::size_t>(x)) = bag_rgb[c];
      }
  }
  for (auto& v : img.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

std::string compose_caption(const SyntheticManifest& manifest, const IdentityAttributes& who,
                            std::size_t background, Rng& rng) {
  const auto& spec = manifest.spec;
  std::array<std::string, 4> phrase;
  for (std::size_t p = 0; p < 4; ++p) {
    const auto& v = who.parts[p];
    phrase[p] = spec.colors.at(v.color).name + " " + spec.patterns.at(v.pattern) + " " +
                kItemWords[p][pick(rng, kItemWords[p].size())];
  }
  const auto& [hat, top, bottom, shoes] = phrase;
  std::string text;
  switch (pick(rng, 4)) {
    case 0: text = "a person wearing " + hat + " , " + top + " , " + bottom + " and " + shoes; break;
    case 1:
      text = "the pedestrian has " + hat + " on the head and wears " + top + " with " + bottom + " and " + shoes;
      break;
    case 2: text = "this person is dressed in " + top + " and " + bottom + " with " + hat + " and " + shoes; break;
    default: text = top + " , " + bottom + " , " + shoes + " and " + hat + " on a walking person"; break;
  }
  if (who.bag) text += " , carrying a bag";
  std::bernoulli_distribution distractor(spec.distractor_rate);
  if (distractor(rng)) text += " , standing in front of a " + spec.backgrounds.at(background).name + " wall";
  return text;
}

namespace {

json color_list(const std::vector<NamedColor>& colors) {
  json out = json::array();
  for (const auto& c : colors) out.push_back({{"name", c.name}, {"rgb", c.rgb}});
  return out;
}

std::vector<NamedColor> parse_colors(const json& j) {
  std::vector<NamedColor> out;
  for (const auto& c : j) out.push_back({c.at("name").get<std::string>(), c.at("rgb").get<std::array<double, 3>>()});
  return out;
}

Split caption_split(std::size_t index, std::size_t captions_per_image) {
  if (index + 1 == captions_per_image && captions_per_image >= 2) return Split::Test;
  if (index + 2 == captions_per_image && captions_per_image >= 3) return Split::Val;
  return Split::Train;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const SyntheticManifest& manifest) {
  const auto& spec = manifest.spec;
  json j;
  j["spec"] = {{"num_identities", spec.num_identities},
               {"images_per_identity", spec.images_per_identity},
               {"captions_per_image", spec.captions_per_image},
               {"sharing_rate", spec.sharing_rate},
               {"shared_values_per_part", spec.shared_values_per_part},
               {"distractor_rate", spec.distractor_rate},
               {"bag_rate", spec.bag_rate},
               {"canvas_height", spec.canvas_height},
               {"canvas_width", spec.canvas_width},
               {"seed", spec.seed},
               {"colors", color_list(spec.colors)},
               {"patterns", spec.patterns},
               {"backgrounds", color_list(spec.backgrounds)}};
  json ids = json::array();
  for (const auto& who : manifest.identities) {
    json parts = json::object();
    for (std::size_t p = 0; p < 4; ++p)
      parts[kPartNames[p]] = {{"color", spec.colors[who.parts[p].color].name},
                              {"pattern", spec.patterns[who.parts[p].pattern]},
                              {"color_index", who.parts[p].color},
                              {"pattern_index", who.parts[p].pattern},
                              {"shared", manifest.part_is_shared(p, who.id)}};
    ids.push_back({{"id", who.id}, {"parts", parts}, {"bag", who.bag}});
  }
  j["identities"] = ids;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

namespace {

// Reads spec fields present in `s`, leaving the rest untouched.
void merge_spec(SyntheticSpec& spec, const json& s) {
  auto take = [&](const char* key, auto& field) {
    if (s.contains(key)) field = s.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("num_identities", spec.num_identities);
  take("images_per_identity", spec.images_per_identity);
  take("captions_per_image", spec.captions_per_image);
  if (s.contains("sharing_rate")) {
    if (s["sharing_rate"].is_number()) spec.set_sharing(s["sharing_rate"].get<double>());
    else spec.sharing_rate = s["sharing_rate"].get<std::array<double, 4>>();
  }
  take("shared_values_per_part", spec.shared_values_per_part);
  take("distractor_rate", spec.distractor_rate);
  take("bag_rate", spec.bag_rate);
  take("canvas_height", spec.canvas_height);
  take("canvas_width", spec.canvas_width);
  take("seed", spec.seed);
  if (s.contains("colors")) spec.colors = parse_colors(s["colors"]);
  take("patterns", spec.patterns);
  if (s.contains("backgrounds")) spec.backgrounds = parse_colors(s["backgrounds"]);
}

}  // namespace

SyntheticSpec read_synthetic_spec(const std::filesystem::path& spec_json) {
  std::ifstream in(spec_json);
  if (!in) throw ConfigError("cannot open synthetic spec " + spec_json.string());
  SyntheticSpec spec;
  try {
    json j;
    in >> j;
    merge_spec(spec, j.contains("spec") ? j["spec"] : j);
  } catch (const json::exception& e) {
    throw ConfigError(spec_json.string() + ": " + e.what());
  }
  return spec;
}

SyntheticManifest read_manifest(const std::filesystem::path& manifest_json) {
  std::ifstream in(manifest_json);
  if (!in) throw DataError("cannot open manifest " + manifest_json.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(manifest_json.string() + ": " + e.what());
  }
  SyntheticManifest m;
  merge_spec(m.spec, j.at("spec"));
  for (const auto& entry : j.at("identities")) {
    IdentityAttributes who;
    who.id = entry.at("id");
    who.bag = entry.at("bag");
    for (std::size_t p = 0; p < 4; ++p) {
      const auto& part = entry.at("parts").at(kPartNames[p]);
      who.parts[p] = {part.at("color_index").get<std::size_t>(), part.at("pattern_index").get<std::size_t>()};
    }
    m.identities.push_back(who);
  }
  return m;
}

SyntheticManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  SyntheticManifest manifest = draw_identities(spec);
  std::filesystem::create_directories(dir / "images");
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<PersonRecord> records;
  for (const auto& who : manifest.identities) {
    for (std::size_t k = 0; k < spec.images_per_identity; ++k) {
      const std::size_t background = pick(rng, spec.backgrounds.size());
      const auto rel = fmt::format("images/{:04d}_{:02d}.ppm", who.id, k);
      write_ppm(dir / rel, render_person(manifest, who, background, rng));
      for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
        PersonRecord r;
        r.image_path = rel;
        r.caption = compose_caption(manifest, who, background, rng);
        r.source_id = who.id;
        r.label = who.id;
        r.split = caption_split(c, spec.captions_per_image);
        records.push_back(std::move(r));
      }
    }
  }
  write_annotations(dir / "annotations.json", records);
  write_manifest(dir / "manifest.json", manifest);
  std::vector<std::string> captions;
  for (const auto& r : records) captions.push_back(r.caption);
  const Vocabulary vocab = Vocabulary::from_texts(captions);
  std::ofstream(dir / "vocab.json") << json(vocab.words()).dump() << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(const Dataset& dataset, std::vector<std::size_t> pool, BatchSpec spec)
    : dataset_(&dataset), pool_(std::move(pool)), spec_(spec) {
  if (spec_.identities_per_batch == 0 || spec_.samples_per_identity == 0)
    throw ConfigError("batch spec sizes must be positive");
  if (spec_.distinct_identities) {
    std::set<std::int64_t> ids;
    for (auto i : pool_) ids.insert(dataset.records().at(i).label);
    if (spec_.identities_per_batch > ids.size())
      throw ConfigError(fmt::format("batch asks for {} distinct identities but the pool has {}",
                                    spec_.identities_per_batch, ids.size()));
  }
}

std::vector<std::vector<std::size_t>> BatchSampler::epoch(std::size_t epoch) const {
  Rng rng(spec_.seed * 0x100000001b3ULL + epoch + 1);
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t n = spec_.batch_size();
  if (!spec_.distinct_identities) {
    auto order = pool_;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + n <= order.size(); start += n)
      batches.emplace_back(order.begin() + start, order.begin() + start + n);
    return batches;
  }

  std::map<std::int64_t, std::vector<std::size_t>> by_identity;
  for (auto i : pool_) by_identity[dataset_->records()[i].label].push_back(i);
  std::vector<std::pair<std::int64_t, std::vector<std::size_t>>> queues(by_identity.begin(), by_identity.end());
  for (auto& [_, q] : queues) std::shuffle(q.begin(), q.end(), rng);

  const std::size_t need = spec_.samples_per_identity;
  while (true) {
    // Identities with the most remaining samples go first; random tie order.
    std::vector<std::size_t> eligible;
    for (std::size_t q = 0; q < queues.size(); ++q)
      if (queues[q].second.size() >= need) eligible.push_back(q);
    if (eligible.size() < spec_.identities_per_batch) break;
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
      return queues[a].second.size() > queues[b].second.size();
    });
    eligible.resize(spec_.identities_per_batch);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::vector<std::size_t> batch;
    for (auto q : eligible)
      for (std::size_t s = 0; s < need; ++s) {
        batch.push_back(queues[q].second.back());
        queues[q].second.pop_back();
      }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::uint64_t batch_sequence_hash(const std::vector<std::vector<std::size_t>>& batches) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& b : batches) {
    mix(b.size());
    for (auto i : b) mix(i);
  }
  return h;
}

}  // namespace c2f
