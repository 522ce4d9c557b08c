#pragma once

// Datasets of (image, caption, identity) records: a synthetic generator with
// controlled sharing of body-part attributes between identities, a loader for
// the split/id/file_path/captions annotation layout, and identity-aware batch
// sampling.

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c2f/backbones.hpp"
#include "c2f/image_io.hpp"

namespace c2f {

enum class Split { Train, Val, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct PersonRecord {
  std::string image_path;  // relative to the dataset root, doubles as image id
  std::shared_ptr<const Image> image;  // optional in-memory source
  std::string caption;
  std::int64_t label = 0;  // dense identity label
  std::int64_t source_id = 0;  // identity as written in the annotation file
  Split split = Split::Train;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::filesystem::path root, std::vector<PersonRecord> records);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<PersonRecord>& records() const { return records_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t skipped() const { return skipped_; }
  void set_skipped(std::size_t n) { skipped_ = n; }

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::string> captions() const;

  // Loads (and caches) the image behind a record.
  const Image& image(const PersonRecord& record) const;

 private:
  std::filesystem::path root_;
  std::vector<PersonRecord> records_;
  std::size_t num_classes_ = 0;
  std::size_t skipped_ = 0;
  mutable std::map<std::string, std::shared_ptr<const Image>> cache_;
};

enum class IdentityPolicy { Global, PerSplit };
enum class MissingImagePolicy { Error, Skip };

struct LoadOptions {
  IdentityPolicy identities = IdentityPolicy::Global;
  MissingImagePolicy missing_images = MissingImagePolicy::Error;
};

// JSON list of {"split", "id", "file_path", "captions": [...]}; one record per
// (image, caption). Paths are resolved against the file's directory.
Dataset load_annotations(const std::filesystem::path& json_file, const LoadOptions& options = {});
// Inverse of load_annotations; groups records by (file_path, split, id).
void write_annotations(const std::filesystem::path& json_file, const std::vector<PersonRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic persons: four stacked body bands, each with a (color, pattern)
// attribute, plus an optional bag.

inline constexpr std::array<const char*, 4> kPartNames = {"hat", "top", "bottom", "shoes"};

struct NamedColor {
  std::string name;
  std::array<double, 3> rgb;
};

struct SyntheticSpec {
  std::size_t num_identities = 32;
  std::size_t images_per_identity = 4;
  std::size_t captions_per_image = 3;
  // Fraction of identities whose value for a part comes from the shared pool.
  std::array<double, 4> sharing_rate = {0.0, 0.0, 0.0, 0.0};
  std::size_t shared_values_per_part = 1;
  double distractor_rate = 0.5;
  double bag_rate = 0.3;
  std::size_t canvas_height = 64;
  std::size_t canvas_width = 32;
  std::uint64_t seed = 7;
  std::vector<NamedColor> colors = default_colors();
  std::vector<std::string> patterns = {"plain", "striped", "checked"};
  std::vector<NamedColor> backgrounds = default_backgrounds();

  static std::vector<NamedColor> default_colors();
  static std::vector<NamedColor> default_backgrounds();
  void set_sharing(double rate) { sharing_rate.fill(rate); }
  std::size_t values_per_part() const { return colors.size() * patterns.size(); }
};

struct PartValue {
  std::size_t color = 0;
  std::size_t pattern = 0;
  bool operator==(const PartValue&) const = default;
  auto operator<=>(const PartValue&) const = default;
};

struct IdentityAttributes {
  std::int64_t id = 0;
  std::array<PartValue, 4> parts;
  bool bag = false;
};

struct SyntheticManifest {
  SyntheticSpec spec;
  std::vector<IdentityAttributes> identities;

  // Number of identities using identity `id`'s value for `part`.
  std::size_t part_popularity(std::size_t part, std::int64_t id) const;
  bool part_is_shared(std::size_t part, std::int64_t id) const { return part_popularity(part, id) > 1; }
  std::string describe(std::size_t part, const PartValue& v) const;
};

// Draws identity attributes; throws ConfigError if the spec cannot produce
// unique attribute combinations.
SyntheticManifest draw_identities(const SyntheticSpec& spec);
Image render_person(const SyntheticManifest& manifest, const IdentityAttributes& who,
                    std::size_t background, Rng& rng);
std::string compose_caption(const SyntheticManifest& manifest, const IdentityAttributes& who,
                            std::size_t background, Rng& rng);

// Writes images/, annotations.json, manifest.json and vocab.json into `dir`.
SyntheticManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);
// JSON object with any subset of the SyntheticSpec fields; "sharing_rate" may
// be a single number or one per part.
SyntheticSpec read_synthetic_spec(const std::filesystem::path& spec_json);
SyntheticManifest read_manifest(const std::filesystem::path& manifest_json);
void write_manifest(const std::filesystem::path& path, const SyntheticManifest& manifest);

// ---------------------------------------------------------------------------

struct BatchSpec {
  std::size_t identities_per_batch = 32;
  std::size_t samples_per_identity = 1;
  std::uint64_t seed = 0;
  bool distinct_identities = true;

  std::size_t batch_size() const { return identities_per_batch * samples_per_identity; }
};

// Deterministic epoch-wise batching over a subset of dataset records.
class BatchSampler {
 public:
  BatchSampler(const Dataset& dataset, std::vector<std::size_t> pool, BatchSpec spec);

  // Batches of record indices for `epoch`. Every record appears at most once;
  // under distinct mode no identity repeats beyond samples_per_identity.
  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch) const;

 private:
  const Dataset* dataset_;
  std::vector<std::size_t> pool_;
  BatchSpec spec_;
};

// Order-sensitive FNV-1a digest of a batch sequence.
std::uint64_t batch_sequence_hash(const std::vector<std::vector<std::size_t>>& batches);

}  // namespace c2f
