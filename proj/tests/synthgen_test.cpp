#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "omlab/error.hpp"
#include "omlab/hash.hpp"
#include "omlab/random.hpp"
#include "omlab/synthgen.hpp"

namespace omlab {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omlab_synthgen_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

TEST(Synthgen, SameSeedSameScene) {
  const GenConfig cfg;
  const Scene a = generate_scene(99, cfg), b = generate_scene(99, cfg);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.annotations, b.annotations);
  EXPECT_NE(generate_scene(100, cfg).image, a.image);
}

TEST(Synthgen, NoObjectsGivesBackgroundOnly) {
  GenConfig cfg;
  cfg.max_objects = 0;
  const Scene s = generate_scene(5, cfg);
  EXPECT_TRUE(s.annotations.empty());
  EXPECT_EQ(s.image.shape, (Shape{3, 64, 64}));
}

TEST(Synthgen, ThousandScenesImbalanceAndClassCoverage) {
  const GenConfig cfg;
  std::vector<std::size_t> counts(cfg.classes(), 0);
  double fg = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const SceneRender r = generate_scene_detailed(mix_seed(2024, i), cfg);
    fg += foreground_fraction(r);
    for (const auto& a : r.scene.annotations) ++counts[static_cast<std::size_t>(a.class_id)];
  }
  const double mean_fg = fg / 1000.0;
  EXPECT_GE(mean_fg, 0.02);
  EXPECT_LE(mean_fg, 0.15);
  for (std::size_t c = 0; c < counts.size(); ++c) EXPECT_GE(counts[c], 20u) << "class " << c;
}

TEST(Synthgen, ScenePropertiesHoldOnSeededScenes) {
  const GenConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = generate_scene(mix_seed(7, seed), cfg);
    EXPECT_LE(s.annotations.size(), cfg.max_objects);
    for (double v : s.image.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (std::size_t c = 1; c < 3; ++c) {
      // Grayscale replicated into three channels.
      for (std::size_t i = 0; i < 64 * 64; ++i) ASSERT_EQ(s.image[c * 4096 + i], s.image[i]);
    }
    for (const auto& a : s.annotations) {
      EXPECT_GE(a.box.x1, 0.0);
      EXPECT_GE(a.box.y1, 0.0);
      EXPECT_LE(a.box.x2, 64.0);
      EXPECT_LE(a.box.y2, 64.0);
      EXPECT_GE(a.box.width(), 4.0);
      EXPECT_GE(a.box.height(), 4.0);
      EXPECT_LE(a.box.width(), 24.0);
      EXPECT_LE(a.box.height(), 24.0);
      EXPECT_EQ(a.family_id, a.class_id / static_cast<int>(cfg.subclasses));
    }
  }
}

TEST(Synthgen, BoxesTightlyBoundCoverage) {
  GenConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SceneRender r = generate_scene_detailed(seed, cfg);
    ASSERT_EQ(r.scene.annotations.size(), 1u);
    const Box& b = r.scene.annotations[0].box;
    double x1 = 64, y1 = 64, x2 = 0, y2 = 0;
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        if (r.coverage[y * 64 + x] <= 0.0) continue;
        x1 = std::min(x1, static_cast<double>(x));
        y1 = std::min(y1, static_cast<double>(y));
        x2 = std::max(x2, static_cast<double>(x + 1));
        y2 = std::max(y2, static_cast<double>(y + 1));
      }
    }
    EXPECT_NEAR(x1, b.x1, 1.0) << seed;
    EXPECT_NEAR(y1, b.y1, 1.0) << seed;
    EXPECT_NEAR(x2, b.x2, 1.0) << seed;
    EXPECT_NEAR(y2, b.y2, 1.0) << seed;
  }
}

TEST(Synthgen, ConfusabilityMonotoneInDelta) {
  // Above ~0.2 the stripe contrast and notch angle saturate for the top subclass.
  const std::vector<double> deltas{0.16, 0.12, 0.08, 0.04, 0.02};
  for (std::size_t fam = 0; fam < kShapeKinds; ++fam) {
    double prev = 1e300;
    for (double d : deltas) {
      double dist = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = a + 1; b < 3; ++b) {
          const Array ta = render_template(fam, a, d), tb = render_template(fam, b, d);
          double sq = 0.0;
          for (std::size_t i = 0; i < ta.size(); ++i) sq += (ta[i] - tb[i]) * (ta[i] - tb[i]);
          dist += std::sqrt(sq) / 3.0;
        }
      }
      EXPECT_LT(dist, prev) << "family " << fam << " delta " << d;
      prev = dist;
    }
  }
}

TEST(Synthgen, ConfigJsonRejectsUnknownKeys) {
  EXPECT_THROW(GenConfig::from_json(nlohmann::json{{"colour", 1}}), ContractError);
  const GenConfig c = GenConfig::from_json(nlohmann::json{{"delta", 0.2}});
  EXPECT_EQ(c.delta, 0.2);
  EXPECT_EQ(c.max_objects, GenConfig{}.max_objects);
  EXPECT_THROW(GenConfig::for_classes(10), ContractError);
  EXPECT_EQ(GenConfig::for_classes(12).subclasses, 4u);
}

TEST(Dataset, WriteReadRoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  const Dataset ds = generate_dataset(GenConfig{}, 3, 12, 40);
  const DatasetManifest m = write_dataset(ds, dir.string());
  const Dataset back = read_dataset(dir.string());
  ASSERT_EQ(back.scenes.size(), 12u);
  EXPECT_EQ(back.manifest.content_hash, m.content_hash);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(back.scenes[i].id, 40 + i);
    EXPECT_EQ(back.scenes[i].annotations, ds.scenes[i].annotations);
    // In-memory pixels are already float32-representable.
    EXPECT_EQ(back.scenes[i].image, ds.scenes[i].image);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ManifestHashEqualsRecomputedHash) {
  const fs::path dir = scratch_dir("hash");
  const Dataset ds = generate_dataset(GenConfig{}, 8, 5);
  const DatasetManifest m = write_dataset(ds, dir.string());
  Sha256 h;
  for (std::size_t i = 0; i < 5; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%06zu.omds", i);
    h.update(slurp(dir / "images" / name));
  }
  h.update(slurp(dir / "annotations.jsonl"));
  EXPECT_EQ(h.hex_digest(), m.content_hash);
  fs::remove_all(dir);
}

TEST(Dataset, DeterministicBytes) {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  EXPECT_EQ(write_dataset(generate_dataset(GenConfig{}, 1, 6), a.string()).content_hash,
            write_dataset(generate_dataset(GenConfig{}, 1, 6), b.string()).content_hash);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

FormatError::Code read_error_code(const fs::path& dir) {
  try {
    read_dataset(dir.string());
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "read_dataset accepted a corrupted dataset";
  return FormatError::Code::kParse;
}

class CorruptedDataset : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    write_dataset(generate_dataset(GenConfig{}, 2, 3), dir_.string());
    image_ = dir_ / "images" / "scene_000001.omds";
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_, image_;
};

TEST_F(CorruptedDataset, BadMagic) {
  std::string bytes = slurp(image_);
  bytes[0] = 'X';
  spit(image_, bytes);
  EXPECT_EQ(read_error_code(dir_), FormatError::Code::kBadMagic);
}

TEST_F(CorruptedDataset, Truncated) {
  const std::string bytes = slurp(image_);
  spit(image_, bytes.substr(0, bytes.size() - 10));
  EXPECT_EQ(read_error_code(dir_), FormatError::Code::kTruncated);
}

TEST_F(CorruptedDataset, Checksum) {
  std::string bytes = slurp(image_);
  bytes[bytes.size() - 1] ^= 0x01;
  spit(image_, bytes);
  EXPECT_EQ(read_error_code(dir_), FormatError::Code::kChecksum);
}

TEST_F(CorruptedDataset, VersionMismatch) {
  auto j = nlohmann::json::parse(slurp(dir_ / "manifest.json"));
  j["version"] = 99;
  spit(dir_ / "manifest.json", j.dump());
  EXPECT_EQ(read_error_code(dir_), FormatError::Code::kVersionMismatch);
}

TEST(Dataset, MissingDirectoryIsIoError) { EXPECT_THROW(read_dataset("/nonexistent/omlab"), IoError); }

}  // namespace
}  // namespace omlab
