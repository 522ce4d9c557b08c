#include "c2f/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "c2f/error.hpp"

namespace c2f {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (samples_per_identity == 0 || batch_size % samples_per_identity != 0)
    fail("batch_size must be a multiple of samples_per_identity");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(lr_decay > 0.0)) fail("lr_decay must be positive");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) fail("decay_epochs must be strictly increasing");
    if (decay_epochs[i] >= epochs) fail(fmt::format("decay epoch {} is not below epochs={}", decay_epochs[i], epochs));
  }
  if (image_backbone_lr_scale < 0.0 || text_backbone_lr_scale < 0.0) fail("learning-rate scales must be >= 0");
  if (use_coarse && coarse_tokens == 0) fail("coarse_tokens must be >= 1 when use_coarse is on");
  if (use_fine && fine_parts == 0) fail("fine_parts must be >= 1 when use_fine is on");
  if (use_cmr && !use_fine) fail("use_cmr requires use_fine");
  if (cmr_on_coarse && !use_coarse) fail("cmr_on_coarse requires use_coarse");
  if (!(margin >= 0.0)) fail("margin must be >= 0");
  model_config(2).validate();
}

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.backbone.feature_dim = feature_dim;
  m.backbone.grid_height = grid_height;
  m.backbone.grid_width = grid_width;
  m.backbone.max_words = max_words;
  m.backbone.vocab_size = vocab_size;
  m.backbone.image_height = image_height;
  m.backbone.image_width = image_width;
  m.backbone.image_backbone = image_backbone;
  m.backbone.text_backbone = text_backbone;
  m.backbone.text_heads = text_heads;
  m.heads = heads;
  m.coarse_tokens = std::max<std::size_t>(coarse_tokens, 1);
  m.fine_parts = std::max<std::size_t>(fine_parts, 1);
  m.text_position_encoding = text_position_encoding;
  m.foreground_peak_normalize = foreground_peak_normalize;
  m.separate_decoders = separate_decoders;
  m.init_stddev = init_stddev;
  m.attention_init_stddev = attention_init_stddev;
  return m;
}

LossConfig TrainConfig::loss_config() const {
  LossConfig l;
  l.margin = margin;
  l.use_coarse = use_coarse;
  l.use_fine = use_fine;
  l.use_cmr = use_cmr;
  l.cmr_on_coarse = cmr_on_coarse;
  l.stop_commonality_gradient = stop_commonality_gradient;
  return l;
}

ScoreConfig TrainConfig::score_config() const { return {true, use_coarse, use_fine}; }

std::map<std::string, double> TrainConfig::group_lr_scales() const {
  return {{"backbone_image", image_backbone_lr_scale},
          {"backbone_text", freeze_text_backbone ? 0.0 : text_backbone_lr_scale},
          {"head", 1.0}};
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (auto e : decay_epochs)
    if (epoch >= e) lr *= lr_decay;
  return lr;
}

// ---------------------------------------------------------------------------

namespace {

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  }
}

bool parse_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

template <typename T>
Field size_field(std::string key, T TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member, key](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_size(key, v)); }};
}

Field double_field(std::string key, double TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return fmt_double(c.*member); },
          [member, key](TrainConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

Field bool_field(std::string key, bool TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

Field string_field(std::string key, std::string TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return c.*member; },
          [member](TrainConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("name", &TrainConfig::name));
    f.push_back(string_field("preset", &TrainConfig::preset));
    f.push_back(size_field("epochs", &TrainConfig::epochs));
    f.push_back(size_field("batch_size", &TrainConfig::batch_size));
    f.push_back(size_field("samples_per_identity", &TrainConfig::samples_per_identity));
    f.push_back(double_field("learning_rate", &TrainConfig::learning_rate));
    f.push_back(double_field("lr_decay", &TrainConfig::lr_decay));
    f.push_back({"decay_epochs",
                 [](const TrainConfig& c) { return fmt::format("{}", fmt::join(c.decay_epochs, ",")); },
                 [](TrainConfig& c, const std::string& v) {
                   c.decay_epochs.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (!item.empty()) c.decay_epochs.push_back(parse_size("decay_epochs", item));
                   }
                 }});
    f.push_back(double_field("image_backbone_lr_scale", &TrainConfig::image_backbone_lr_scale));
    f.push_back(double_field("text_backbone_lr_scale", &TrainConfig::text_backbone_lr_scale));
    f.push_back(bool_field("freeze_text_backbone", &TrainConfig::freeze_text_backbone));
    f.push_back(double_field("adam_beta1", &TrainConfig::adam_beta1));
    f.push_back(double_field("adam_beta2", &TrainConfig::adam_beta2));
    f.push_back(double_field("adam_epsilon", &TrainConfig::adam_epsilon));
    f.push_back(size_field("max_steps", &TrainConfig::max_steps));
    f.push_back(bool_field("horizontal_flip", &TrainConfig::horizontal_flip));
    f.push_back(size_field("seed", &TrainConfig::seed));
    f.push_back(size_field("eval_every", &TrainConfig::eval_every));
    f.push_back(size_field("feature_dim", &TrainConfig::feature_dim));
    f.push_back(size_field("heads", &TrainConfig::heads));
    f.push_back(size_field("coarse_tokens", &TrainConfig::coarse_tokens));
    f.push_back(size_field("fine_parts", &TrainConfig::fine_parts));
    f.push_back(size_field("max_words", &TrainConfig::max_words));
    f.push_back(size_field("grid_height", &TrainConfig::grid_height));
    f.push_back(size_field("grid_width", &TrainConfig::grid_width));
    f.push_back(size_field("image_height", &TrainConfig::image_height));
    f.push_back(size_field("image_width", &TrainConfig::image_width));
    f.push_back(string_field("image_backbone", &TrainConfig::image_backbone));
    f.push_back(string_field("text_backbone", &TrainConfig::text_backbone));
    f.push_back(size_field("text_heads", &TrainConfig::text_heads));
    f.push_back(bool_field("text_position_encoding", &TrainConfig::text_position_encoding));
    f.push_back(bool_field("foreground_peak_normalize", &TrainConfig::foreground_peak_normalize));
    f.push_back(double_field("init_stddev", &TrainConfig::init_stddev));
    f.push_back(double_field("attention_init_stddev", &TrainConfig::attention_init_stddev));
    f.push_back(double_field("margin", &TrainConfig::margin));
    f.push_back(bool_field("use_coarse", &TrainConfig::use_coarse));
    f.push_back(bool_field("use_fine", &TrainConfig::use_fine));
    f.push_back(bool_field("use_cmr", &TrainConfig::use_cmr));
    f.push_back(bool_field("cmr_on_coarse", &TrainConfig::cmr_on_coarse));
    f.push_back(bool_field("separate_decoders", &TrainConfig::separate_decoders));
    f.push_back(bool_field("single_shared_classifier", &TrainConfig::single_shared_classifier));
    f.push_back(bool_field("stop_commonality_gradient", &TrainConfig::stop_commonality_gradient));
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

std::string get_config_value(const TrainConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", origin, line_no));
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
}

void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::vector<std::string> apply_env_overrides(TrainConfig& cfg) {
  std::vector<std::string> applied;
  for (const auto& f : fields()) {
    std::string var = kEnvPrefix;
    for (char c : f.key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = std::getenv(var.c_str())) {
      try {
        f.set(cfg, trim(v));
      } catch (const ConfigError& e) {
        throw ConfigError(var + ": " + e.what());
      }
      applied.push_back(f.key);
    }
  }
  return applied;
}

// ---------------------------------------------------------------------------

namespace {

// Presets are plain key=value documents layered over the struct defaults.
const std::map<std::string, std::string>& preset_table() {
  static const std::map<std::string, std::string> table = {
      {"paper",
       "preset = paper\n"
       "epochs = 60\n"
       "batch_size = 32\n"
       "learning_rate = 5e-4\n"
       "lr_decay = 0.1\n"
       "decay_epochs = 20,40,50,55\n"
       "image_backbone_lr_scale = 0.1\n"
       "freeze_text_backbone = true\n"
       "coarse_tokens = 4\n"
       "fine_parts = 4\n"
       "margin = 0.2\n"},
      {"desk",
       "preset = desk\n"
       "epochs = 30\n"
       "batch_size = 32\n"
       "learning_rate = 3e-3\n"
       "lr_decay = 0.1\n"
       "decay_epochs = 20\n"
       "image_backbone_lr_scale = 1.0\n"
       "freeze_text_backbone = false\n"
       "feature_dim = 64\n"
       "heads = 4\n"
       "coarse_tokens = 4\n"
       "fine_parts = 4\n"
       "max_words = 40\n"
       "margin = 0.2\n"},
  };
  return table;
}

}  // namespace

TrainConfig make_preset(const std::string& name) {
  const auto& table = preset_table();
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown preset: " + name);
  TrainConfig cfg;
  apply_config_text(cfg, it->second, "preset:" + name);
  return cfg;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : preset_table()) out.push_back(k);
  return out;
}

}  // namespace c2f
