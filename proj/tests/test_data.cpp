#include "tfuse/data.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

namespace tfuse {
namespace {

namespace fs = std::filesystem;

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.num_identities = 6;
  cfg.frames_per_tracklet = 8;
  return cfg;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("tfuse_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

double max_abs_diff(const double* a, const double* b, Index n) {
  double m = 0.0;
  for (Index i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Generate, ShapesAndCameras) {
  const SyntheticConfig cfg = small_config();
  Dataset d = generate(cfg);
  ASSERT_EQ(d.size(), 6u * 2 * 2);
  std::map<int, std::set<int>> cams;
  std::set<std::string> ids;
  for (const TrackletRecord& t : d) {
    EXPECT_EQ(t.frames.shape(), (Shape{8, 3, 32, 16}));
    EXPECT_EQ(t.flags.size(), 8u);
    EXPECT_GE(t.frames.values().minCoeff(), 0.0);
    EXPECT_LE(t.frames.values().maxCoeff(), 1.0);
    cams[t.identity].insert(t.camera);
    ids.insert(t.id);
  }
  EXPECT_EQ(ids.size(), d.size());
  for (const auto& [id, c] : cams) EXPECT_GE(c.size(), 2u) << id;
}

TEST(Generate, DeterministicPerSeed) {
  Dataset a = generate(small_config());
  Dataset b = generate(small_config());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].frames, b[i].frames);
  }
  SyntheticConfig other = small_config();
  other.seed = 8;
  EXPECT_NE(generate(other)[0].frames, a[0].frames);
}

TEST(Generate, DegenerateRenderIsConstant) {
  SyntheticConfig cfg = small_config();
  cfg.num_views = 2;  // one view per camera
  cfg.noise_sigma = 0;
  cfg.duplicate_prob = 0;
  cfg.occlusion_prob = 0;
  for (const TrackletRecord& t : generate(cfg)) {
    const Index per = 3 * 32 * 16;
    for (Index l = 1; l < t.length(); ++l) {
      EXPECT_EQ(max_abs_diff(t.frames.data(), t.frames.data() + l * per, per), 0.0);
    }
  }
}

TEST(Generate, ImpossibleConfig) {
  SyntheticConfig cfg = small_config();
  cfg.num_views = 1;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.num_cameras = 1;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.image = {2, 32, 16};
  EXPECT_THROW(generate(cfg), std::invalid_argument);
}

TEST(Generate, FullDuplicateRunLeavesOneDistinctFrame) {
  SyntheticConfig cfg = small_config();
  cfg.duplicate_prob = 1.0;
  cfg.duplicate_run = cfg.frames_per_tracklet - 1;
  for (const TrackletRecord& t : generate(cfg)) {
    int distinct = 0, duplicate = 0;
    for (const FrameFlags& f : t.flags) {
      distinct += f.distinct_view;
      duplicate += f.duplicate;
    }
    EXPECT_EQ(distinct, 1) << t.id;
    EXPECT_EQ(duplicate, cfg.frames_per_tracklet - 1) << t.id;
  }
}

TEST(Generate, DuplicatesStayWithinSigma) {
  SyntheticConfig cfg = small_config();
  cfg.duplicate_prob = 0.6;
  const Index per = 3 * 32 * 16;
  int seen = 0;
  for (const TrackletRecord& t : generate(cfg)) {
    for (Index l = 1; l < t.length(); ++l) {
      if (!t.flags[static_cast<std::size_t>(l)].duplicate) continue;
      ++seen;
      EXPECT_LT(max_abs_diff(t.frames.data() + (l - 1) * per, t.frames.data() + l * per, per), cfg.duplicate_sigma);
    }
  }
  EXPECT_GT(seen, 0);
}

TEST(Generate, GrayscaleImages) {
  SyntheticConfig cfg = small_config();
  cfg.image = {1, 16, 8};
  EXPECT_EQ(generate(cfg)[0].frames.shape(), (Shape{8, 1, 16, 8}));
}

TEST(RedundancyProbe, LayoutAndFlags) {
  SyntheticWorld world(small_config());
  Rng rng(3);
  for (int k : {2, 4, 8}) {
    Index odd = -1;
    TrackletRecord t = world.redundancy_probe(1, 0, k, rng, &odd);
    ASSERT_EQ(t.length(), k + 1);
    ASSERT_GE(odd, 0);
    ASSERT_LE(odd, k);
    const Index per = 3 * 32 * 16;
    const Index first = odd == 0 ? 1 : 0;
    for (Index l = 0; l <= k; ++l) {
      if (l == odd || l == first) continue;
      EXPECT_LT(max_abs_diff(t.frames.data() + first * per, t.frames.data() + l * per, per), 0.01);
    }
    EXPECT_GT(max_abs_diff(t.frames.data() + first * per, t.frames.data() + odd * per, per), 0.1);
    EXPECT_TRUE(t.flags[static_cast<std::size_t>(odd)].distinct_view);
  }
}

TEST(Manifest, RoundTripWithinQuantization) {
  TempDir dir("roundtrip");
  Dataset d = generate(small_config());
  d.resize(3);
  export_dataset(d, dir.path());
  Dataset back = load_manifest(dir.path() / "manifest.tsv", {3, 32, 16});
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back[i].id, d[i].id);
    EXPECT_EQ(back[i].identity, d[i].identity);
    EXPECT_EQ(back[i].camera, d[i].camera);
    ASSERT_EQ(back[i].frames.shape(), d[i].frames.shape());
    EXPECT_LE(max_abs_diff(back[i].frames.data(), d[i].frames.data(), d[i].frames.size()), 0.5 / 255.0 + 1e-12);
    EXPECT_EQ(back[i].flags.size(), static_cast<std::size_t>(back[i].length()));
  }
}

TEST(Manifest, ResizesToConfiguredShape) {
  TempDir dir("resize");
  Dataset d = generate(small_config());
  d.resize(1);
  export_dataset(d, dir.path());
  Dataset back = load_manifest(dir.path() / "manifest.tsv", {1, 16, 8});
  EXPECT_EQ(back[0].frames.shape(), (Shape{8, 1, 16, 8}));
}

TEST(Manifest, EmptyFileGivesEmptyDataset) {
  TempDir dir("empty");
  std::ofstream(dir.path() / "manifest.tsv").close();
  EXPECT_TRUE(load_manifest(dir.path() / "manifest.tsv", {3, 32, 16}).empty());
}

TEST(Manifest, SingleFrameTracklet) {
  TempDir dir("single");
  Dataset d = generate(small_config());
  d.resize(1);
  export_dataset(d, dir.path());
  std::ofstream(dir.path() / "one.tsv") << "solo\t4\t1\tframes/" << d[0].id << "/0.png\n";
  Dataset back = load_manifest(dir.path() / "one.tsv", {3, 32, 16});
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].length(), 1);
  EXPECT_EQ(back[0].identity, 4);
}

TEST(Manifest, Errors) {
  TempDir dir("errors");
  EXPECT_THROW(load_manifest(dir.path() / "missing.tsv", {3, 32, 16}), std::runtime_error);

  std::ofstream(dir.path() / "bad.tsv") << "\n\nonly\ttwo\n";
  try {
    load_manifest(dir.path() / "bad.tsv", {3, 32, 16});
    FAIL() << "malformed line accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }

  std::ofstream(dir.path() / "fmt.tsv") << "t\t0\t0\tframe.jpg\n";
  try {
    load_manifest(dir.path() / "fmt.tsv", {3, 32, 16});
    FAIL() << "jpeg accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos) << e.what();
  }

  std::ofstream(dir.path() / "gone.tsv") << "t\t0\t0\tnope.png\n";
  EXPECT_THROW(load_manifest(dir.path() / "gone.tsv", {3, 32, 16}), std::runtime_error);

  std::ofstream(dir.path() / "label.tsv") << "t\tx\t0\tnope.png\n";
  EXPECT_THROW(load_manifest(dir.path() / "label.tsv", {3, 32, 16}), std::runtime_error);
}

TEST(Split, HalfOfTenIdentities) {
  SyntheticConfig cfg = small_config();
  cfg.num_identities = 10;
  Dataset d = generate(cfg);
  Split s = split(d, 0.5, 1);
  EXPECT_EQ(s.train_identities.size(), 5u);
  EXPECT_EQ(s.test_identities.size(), 5u);
  EXPECT_EQ(s.train.size() + s.query.size() + s.gallery.size(), d.size());
}

TEST(Split, IdentityDisjointAndCrossCamera) {
  Dataset d = generate(small_config());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Split s = split(d, 0.5, seed);
    std::set<int> train, test;
    for (std::size_t i : s.train) train.insert(d[i].identity);
    for (std::size_t i : s.query) test.insert(d[i].identity);
    for (std::size_t i : s.gallery) test.insert(d[i].identity);
    for (int id : train) EXPECT_EQ(test.count(id), 0u);
    std::map<int, std::set<int>> qcam, gcam;
    for (std::size_t i : s.query) qcam[d[i].identity].insert(d[i].camera);
    for (std::size_t i : s.gallery) gcam[d[i].identity].insert(d[i].camera);
    for (const auto& [id, cams] : qcam) {
      EXPECT_EQ(cams.size(), 1u);
      for (int c : gcam[id]) EXPECT_EQ(cams.count(c), 0u);
    }
  }
}

TEST(Split, Deterministic) {
  Dataset d = generate(small_config());
  Split a = split(d, 0.5, 3), b = split(d, 0.5, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.query, b.query);
  EXPECT_EQ(a.gallery, b.gallery);
}

TEST(Split, FullTrainFractionLeavesEmptyTest) {
  Split s = split(generate(small_config()), 1.0, 0);
  EXPECT_TRUE(s.query.empty());
  EXPECT_TRUE(s.gallery.empty());
  EXPECT_TRUE(s.test_identities.empty());
}

TEST(Split, SingleCameraIdentityExcluded) {
  Dataset d = generate(small_config());
  for (TrackletRecord& t : d) {
    if (t.identity == 0) t.camera = 0;
  }
  Split s = split(d, 0.0, 0);
  EXPECT_EQ(std::count(s.test_identities.begin(), s.test_identities.end(), 0), 0);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("identity 0"), std::string::npos);
}

TEST(Split, NeedsTwoIdentities) {
  SyntheticConfig cfg = small_config();
  cfg.num_identities = 1;
  EXPECT_THROW(split(generate(cfg), 0.5, 0), std::invalid_argument);
}

TEST(FrameSampling, ChunksAndEvenSpacing) {
  TrackletRecord t;
  t.frames = Tensor({10, 1, 1, 1});
  for (Index i = 0; i < 10; ++i) t.frames[i] = static_cast<double>(i);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor c = sample_chunk(t, 4, rng);
    ASSERT_EQ(c.dim(0), 4);
    for (Index i = 1; i < 4; ++i) EXPECT_EQ(c[i], c[0] + static_cast<double>(i));
  }
  Tensor e = evenly_spaced(t, 5);
  EXPECT_EQ(e, Tensor({5, 1, 1, 1}, {0, 2, 4, 6, 8}));
  EXPECT_EQ(evenly_spaced(t, 20).dim(0), 10);
  EXPECT_EQ(sample_chunk(t, 20, rng).dim(0), 10);

  TrackletRecord empty;
  EXPECT_THROW(evenly_spaced(empty, 3), std::invalid_argument);
}

}  // namespace
}  // namespace tfuse
