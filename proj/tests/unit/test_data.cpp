#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "c2f/data.hpp"
#include "c2f/error.hpp"

using namespace c2f;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("c2f_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.num_identities = 6;
  spec.images_per_identity = 2;
  spec.captions_per_image = 3;
  spec.seed = 3;
  return spec;
}

// Item words the caption templates use per part.
const std::array<std::vector<std::string>, 4> kItems = {std::vector<std::string>{"hat", "cap"},
                                                        std::vector<std::string>{"shirt", "top"},
                                                        std::vector<std::string>{"pants", "trousers"},
                                                        std::vector<std::string>{"shoes", "sneakers"}};

bool names_part(const std::string& caption, const std::string& value, std::size_t part) {
  for (const auto& item : kItems[part])
    if (caption.find(value + " " + item) != std::string::npos) return true;
  return false;
}

Dataset in_memory(const std::vector<std::int64_t>& labels) {
  std::vector<PersonRecord> records;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    PersonRecord r;
    r.image_path = "img" + std::to_string(i);
    r.label = r.source_id = labels[i];
    records.push_back(r);
  }
  return Dataset("", records);
}

std::multiset<std::tuple<std::string, std::string, std::int64_t, int>> record_multiset(const Dataset& ds) {
  std::multiset<std::tuple<std::string, std::string, std::int64_t, int>> out;
  for (const auto& r : ds.records()) out.emplace(r.image_path, r.caption, r.source_id, static_cast<int>(r.split));
  return out;
}

}  // namespace

TEST(Data, GeneratedDatasetLayoutAndSplits) {
  const auto dir = scratch("layout");
  const auto manifest = generate_synthetic(small_spec(), dir);
  for (const char* f : {"annotations.json", "manifest.json", "vocab.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto ds = load_annotations(dir / "annotations.json");
  EXPECT_EQ(ds.records().size(), 6u * 2u * 3u);
  EXPECT_EQ(ds.num_classes(), 6u);
  EXPECT_EQ(ds.indices(Split::Train).size(), 12u);
  EXPECT_EQ(ds.indices(Split::Val).size(), 12u);
  EXPECT_EQ(ds.indices(Split::Test).size(), 12u);
  const auto& img = ds.image(ds.records().front());
  EXPECT_EQ(img.height, 64u);
  EXPECT_EQ(img.width, 32u);
  for (const auto& r : ds.records()) {
    EXPECT_GE(r.label, 0);
    EXPECT_LT(r.label, 6);
  }
  const auto back = read_manifest(dir / "manifest.json");
  ASSERT_EQ(back.identities.size(), manifest.identities.size());
  for (std::size_t i = 0; i < back.identities.size(); ++i) EXPECT_EQ(back.identities[i].parts, manifest.identities[i].parts);
}

TEST(Data, CaptionsAreFaithfulAndRecountMatchesManifest) {
  const auto dir = scratch("faithful");
  auto spec = small_spec();
  spec.num_identities = 12;
  spec.set_sharing(0.5);
  const auto manifest = generate_synthetic(spec, dir);
  const auto ds = load_annotations(dir / "annotations.json");

  std::map<std::pair<std::size_t, std::string>, std::set<std::int64_t>> named_by;
  for (const auto& r : ds.records()) {
    const auto& who = manifest.identities.at(static_cast<std::size_t>(r.source_id));
    for (std::size_t p = 0; p < 4; ++p) {
      EXPECT_TRUE(names_part(r.caption, manifest.describe(p, who.parts[p]), p)) << r.caption;
      named_by[{p, manifest.describe(p, who.parts[p])}].insert(r.source_id);
    }
    EXPECT_EQ(r.caption.find("carrying a bag") != std::string::npos, who.bag) << r.caption;
  }
  for (std::size_t p = 0; p < 4; ++p)
    for (const auto& who : manifest.identities)
      EXPECT_EQ(named_by[std::make_pair(p, manifest.describe(p, who.parts[p]))].size(),
                manifest.part_popularity(p, who.id));
}

TEST(Data, FullSharingUsesOneValue) {
  auto spec = small_spec();
  spec.sharing_rate = {0.0, 1.0, 0.0, 0.0};
  const auto manifest = draw_identities(spec);
  std::set<PartValue> tops;
  std::set<std::pair<std::array<PartValue, 4>, bool>> combos;
  for (const auto& who : manifest.identities) {
    tops.insert(who.parts[1]);
    combos.insert({who.parts, who.bag});
  }
  EXPECT_EQ(tops.size(), 1u);
  EXPECT_EQ(combos.size(), spec.num_identities);
  EXPECT_TRUE(manifest.part_is_shared(1, 0));
}

TEST(Data, PantColorOnlyChangesOneWord) {
  SyntheticManifest manifest;
  manifest.spec = small_spec();
  IdentityAttributes a;
  a.id = 0;
  a.parts = {PartValue{0, 0}, PartValue{1, 0}, PartValue{2, 0}, PartValue{3, 0}};
  IdentityAttributes b = a;
  b.id = 1;
  b.parts[2].color = 5;
  manifest.identities = {a, b};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r1(seed), r2(seed);
    std::istringstream ca(compose_caption(manifest, a, 0, r1)), cb(compose_caption(manifest, b, 0, r2));
    std::vector<std::string> wa{std::istream_iterator<std::string>(ca), {}}, wb{std::istream_iterator<std::string>(cb), {}};
    ASSERT_EQ(wa.size(), wb.size());
    std::size_t differing = 0;
    for (std::size_t i = 0; i < wa.size(); ++i)
      if (wa[i] != wb[i]) {
        ++differing;
        EXPECT_EQ(wa[i], manifest.spec.colors[2].name);
        EXPECT_EQ(wb[i], manifest.spec.colors[5].name);
      }
    EXPECT_EQ(differing, 1u);
  }
}

TEST(Data, InfeasibleSpecIsRejected) {
  auto spec = small_spec();
  spec.colors.resize(1);
  spec.patterns.resize(1);
  spec.num_identities = 5;
  EXPECT_THROW(draw_identities(spec), ConfigError);
}

TEST(Data, RenderingIsDeterministic) {
  const auto manifest = draw_identities(small_spec());
  Rng r1(9), r2(9);
  const auto a = render_person(manifest, manifest.identities[0], 1, r1);
  const auto b = render_person(manifest, manifest.identities[0], 1, r2);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.channels, 3u);
}

TEST(Data, AnnotationRoundTrip) {
  const auto dir = scratch("roundtrip");
  generate_synthetic(small_spec(), dir);
  const auto ds = load_annotations(dir / "annotations.json");
  write_annotations(dir / "again.json", ds.records());
  const auto again = load_annotations(dir / "again.json");
  EXPECT_EQ(record_multiset(ds), record_multiset(again));
  for (std::size_t i = 0; i < ds.records().size(); ++i) EXPECT_EQ(ds.records()[i].label, again.records()[i].label);
}

TEST(Data, LoaderEdgeCases) {
  const auto dir = scratch("loader");
  write_ppm(dir / "a.ppm", Image::blank(3, 4, 2, 0.5));
  std::ofstream(dir / "two.json") << R"([{"split": "train", "id": 40, "file_path": "a.ppm", "captions": ["one", "two"]},
    {"split": "test", "id": 7, "file_path": "a.ppm", "captions": ["three"]}])";
  const auto ds = load_annotations(dir / "two.json");
  ASSERT_EQ(ds.records().size(), 3u);
  EXPECT_EQ(ds.records()[0].image_path, ds.records()[1].image_path);
  EXPECT_EQ(ds.records()[0].label, 0);
  EXPECT_EQ(ds.records()[1].label, 0);
  EXPECT_EQ(ds.records()[2].label, 1);
  EXPECT_EQ(ds.records()[2].source_id, 7);
  const auto per_split = load_annotations(dir / "two.json", {IdentityPolicy::PerSplit, MissingImagePolicy::Error});
  EXPECT_EQ(per_split.records()[2].label, 0);

  std::ofstream(dir / "empty.json") << "[]";
  EXPECT_TRUE(load_annotations(dir / "empty.json").records().empty());

  std::ofstream(dir / "missing_field.json") << R"([{"split": "train", "file_path": "a.ppm", "captions": ["x"]}])";
  EXPECT_THROW(load_annotations(dir / "missing_field.json"), DataError);

  std::ofstream(dir / "dangling.json") << R"([{"split": "train", "id": 1, "file_path": "nope.ppm", "captions": ["x"]},
    {"split": "train", "id": 2, "file_path": "a.ppm", "captions": ["y"]}])";
  EXPECT_THROW(load_annotations(dir / "dangling.json"), DataError);
  const auto skipped = load_annotations(dir / "dangling.json", {IdentityPolicy::Global, MissingImagePolicy::Skip});
  EXPECT_EQ(skipped.records().size(), 1u);
  EXPECT_EQ(skipped.skipped(), 1u);
}

TEST(Data, SyntheticSpecFile) {
  const auto dir = scratch("spec");
  std::ofstream(dir / "spec.json") << R"({"num_identities": 10, "sharing_rate": [0.1, 0.2, 0.3, 0.4], "seed": 99})";
  const auto spec = read_synthetic_spec(dir / "spec.json");
  EXPECT_EQ(spec.num_identities, 10u);
  EXPECT_EQ(spec.sharing_rate[3], 0.4);
  EXPECT_EQ(spec.seed, 99u);
  EXPECT_EQ(spec.images_per_identity, SyntheticSpec{}.images_per_identity);
  std::ofstream(dir / "scalar.json") << R"({"sharing_rate": 0.5})";
  EXPECT_EQ(read_synthetic_spec(dir / "scalar.json").sharing_rate[0], 0.5);
}

TEST(Data, BatchesArePermutationsOfIdentities) {
  std::vector<std::int64_t> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(i);
  const auto ds = in_memory(labels);
  BatchSpec spec{8, 1, 5, true};
  BatchSampler sampler(ds, ds.indices(Split::Train), spec);
  const auto batches = sampler.epoch(0);
  ASSERT_EQ(batches.size(), 1u);
  std::set<std::size_t> seen(batches[0].begin(), batches[0].end());
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Data, BatchesAreDeterministicAndDistinct) {
  std::vector<std::int64_t> labels;
  for (int id = 0; id < 10; ++id)
    for (int k = 0; k < 3 + id % 3; ++k) labels.push_back(id);
  const auto ds = in_memory(labels);
  BatchSpec spec{4, 1, 11, true};
  BatchSampler sampler(ds, ds.indices(Split::Train), spec);
  const auto e0 = sampler.epoch(0);
  EXPECT_EQ(batch_sequence_hash(e0), batch_sequence_hash(BatchSampler(ds, ds.indices(Split::Train), spec).epoch(0)));
  EXPECT_NE(batch_sequence_hash(e0), batch_sequence_hash(sampler.epoch(1)));
  std::set<std::size_t> used;
  for (const auto& b : e0) {
    EXPECT_EQ(b.size(), 4u);
    std::set<std::int64_t> ids;
    for (auto i : b) {
      EXPECT_TRUE(used.insert(i).second);
      ids.insert(ds.records()[i].label);
    }
    EXPECT_EQ(ids.size(), b.size());
  }

  BatchSpec pairs{3, 2, 1, true};
  for (const auto& b : BatchSampler(ds, ds.indices(Split::Train), pairs).epoch(0)) {
    std::map<std::int64_t, int> count;
    for (auto i : b) ++count[ds.records()[i].label];
    for (const auto& [_, c] : count) EXPECT_EQ(c, 2);
  }

  BatchSpec too_many{11, 1, 0, true};
  EXPECT_THROW(BatchSampler(ds, ds.indices(Split::Train), too_many), ConfigError);
}
