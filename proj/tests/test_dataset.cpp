#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vilad/dataset.hpp"

using namespace vilad;
using namespace vilad::dataset;

namespace {

sim::ScenarioSpec scen1() { return sim::load_scenario(std::filesystem::path(VILAD_SCENARIO_DIR) / "scen1.json"); }

std::vector<std::uint8_t> bytes(const std::filesystem::path& p) { return binary::read_file(p); }

/// Constant annotation; counts calls.
class FixedOracle final : public annotate::AnnotationOracle {
 public:
  annotate::FrontierAnnotation annotate(const annotate::AnnotationRequest& r) override {
    ++calls;
    EXPECT_NE(r.frame, nullptr);
    EXPECT_NE(r.prompt, nullptr);
    return {0.2, 0.7, 0.4, "fixed"};
  }
  [[nodiscard]] std::string name() const override { return "fixed"; }
  int calls = 0;
};

Source synthetic_source(const std::vector<std::size_t>& episodes) {
  Source s;
  s.description = "synthetic";
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    RgbImage img(24, 16);
    for (auto& c : img.rgb) c = static_cast<std::uint8_t>(10 * k);
    s.frames.push_back({{img, 0.1 * k, k}, std::nullopt,
                        AttentionMap(6, 4, std::vector<float>(24, 0.25f), MapRole::Pretrained, MapFrame::Image),
                        episodes[k]});
  }
  return s;
}

BuildConfig small(int n, std::size_t m) {
  BuildConfig c;
  c.history = n;
  c.count = m;
  c.grid_width = 6;
  c.grid_height = 4;
  return c;
}

}  // namespace

TEST(Dataset, TenMockRecordsFromScenarioValidate) {
  test::TempDir dir;
  ReplayConfig rc;
  const auto src = replay_source(scen1(), 10, 2, rc);
  annotate::MockOracle oracle;
  BuildConfig bc;
  bc.count = 10;
  const auto d = build_dataset(src, oracle, bc, dir.path());
  ASSERT_EQ(d.records.size(), 10u);
  const auto back = load_dataset(dir.path());
  EXPECT_NO_THROW(validate(back));
  EXPECT_EQ(back.oracle, "mock");
  EXPECT_EQ(back.history, 2);
  EXPECT_EQ(back.grid_width, 32u);
  EXPECT_EQ(back.grid_height, 24u);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto& r = back.records[k];
    EXPECT_EQ(r.history.size(), 2u);
    EXPECT_EQ(r.sha256, d.records[k].sha256);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / ("frames/" + r.id + ".png")));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / ("maps/" + r.id + ".agrid")));
    // The supervision map is the band rendering of the stored likelihoods.
    const auto m = load_grid(dir.path() / r.map);
    const auto expect = annotate::likelihood_to_map(r.annotation, 32, 24);
    EXPECT_TRUE(std::ranges::equal(m.values(), expect.values()));
    EXPECT_EQ(m.role(), MapRole::Vlm);
    EXPECT_EQ(load_grid(dir.path() / r.pretrained).role(), MapRole::Pretrained);
  }
}

TEST(Dataset, MockAnnotationsFollowTheReplayedTruth) {
  test::TempDir dir;
  const auto src = replay_source(scen1(), 6, 1, ReplayConfig{});
  annotate::MockOracle oracle;
  const auto d = build_dataset(src, oracle, [] { BuildConfig c; c.history = 1; c.count = 6; return c; }(), dir.path());
  for (std::size_t k = 0; k < d.records.size(); ++k) {
    const auto expect = oracle.score(*src.frames[k + 1].truth, k);
    EXPECT_EQ(d.records[k].annotation.p_left, expect.p_left);
    EXPECT_EQ(d.records[k].annotation.p_center, expect.p_center);
    EXPECT_EQ(d.records[k].annotation.p_right, expect.p_right);
  }
}

TEST(Dataset, ZeroHistoryAblation) {
  test::TempDir dir;
  FixedOracle oracle;
  const auto d = build_dataset(synthetic_source({0, 0, 0}), oracle, small(0, 3), dir.path());
  ASSERT_EQ(d.records.size(), 3u);
  for (const auto& r : d.records) EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(oracle.calls, 3);
  EXPECT_NO_THROW(validate(load_dataset(dir.path())));
  distill::ModelConfig mc;
  mc.history = 0;
  mc.grid_width = 6;
  mc.grid_height = 4;
  const auto samples = training_samples(load_dataset(dir.path()), mc);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].input.dim, mc.input_dim());
  EXPECT_EQ(samples[0].a_vlm.width(), 6u);
}

TEST(Dataset, RebuildIsByteIdentical) {
  test::TempDir a, b;
  ReplayConfig rc;
  rc.seed = 9;
  BuildConfig bc;
  bc.count = 5;
  annotate::MockOracleConfig oc;
  oc.seed = 4;
  annotate::MockOracle o1(oc), o2(oc);
  const auto d1 = build_dataset(replay_source(scen1(), 5, 2, rc), o1, bc, a.path());
  const auto d2 = build_dataset(replay_source(scen1(), 5, 2, rc), o2, bc, b.path());
  for (std::size_t k = 0; k < d1.records.size(); ++k) {
    EXPECT_EQ(d1.records[k].sha256, d2.records[k].sha256);
    EXPECT_EQ(bytes(a.path() / d1.records[k].map), bytes(b.path() / d2.records[k].map));
    EXPECT_EQ(bytes(a.path() / d1.records[k].pretrained), bytes(b.path() / d2.records[k].pretrained));
  }
  EXPECT_EQ(bytes(a.path() / "index.json"), bytes(b.path() / "index.json"));
}

TEST(Dataset, HistoryWindowsStayInsideOneEpisode) {
  test::TempDir dir;
  FixedOracle oracle;
  // Episodes 0 0 | 1 1 1: with n = 1 only frames 1, 3, 4 can end a window.
  const auto d = build_dataset(synthetic_source({0, 0, 1, 1, 1}), oracle, small(1, 3), dir.path());
  ASSERT_EQ(d.records.size(), 3u);
  EXPECT_EQ(d.records[0].id, "000001");
  EXPECT_EQ(d.records[1].id, "000003");
  EXPECT_EQ(d.records[1].history, std::vector<std::string>{"frames/000002.png"});
  EXPECT_EQ(d.records[2].id, "000004");
  EXPECT_THROW(build_dataset(synthetic_source({0, 0, 1, 1, 1}), oracle, small(1, 4), dir.path()), SourceError);
}

TEST(Dataset, InsufficientFramesIsASourceError) {
  test::TempDir dir;
  FixedOracle oracle;
  EXPECT_THROW(build_dataset(synthetic_source({0, 0}), oracle, small(2, 1), dir.path()), SourceError);
  sim::ScenarioSpec s = scen1();
  s.time_limit = 0.2;
  ReplayConfig rc;
  rc.max_trials = 2;
  EXPECT_THROW(replay_source(s, 50, 2, rc), SourceError);
}

TEST(Dataset, TamperingIsDetected) {
  test::TempDir dir;
  FixedOracle oracle;
  const auto d = build_dataset(synthetic_source({0, 0, 0, 0}), oracle, small(1, 3), dir.path());
  EXPECT_NO_THROW(validate(load_dataset(dir.path())));
  const auto map = dir.path() / d.records[1].map;
  const auto original = bytes(map);
  auto grid = original;
  grid[kGridHeaderBytes] ^= 0x01;  // lowest mantissa bit of the first value: still a valid grid
  binary::write_file(map, grid);
  EXPECT_NO_THROW(load_grid(map));
  EXPECT_THROW(validate(load_dataset(dir.path())), ValidationError);
  grid = original;
  grid.back() = 0xFF;  // NaN: no longer decodes
  binary::write_file(map, grid);
  EXPECT_THROW(validate(load_dataset(dir.path())), ValidationError);
  EXPECT_THROW(load_dataset(dir.path() / "nowhere"), SourceError);
  binary::write_text(dir.path() / "index.json", "{\"format\": \"other\"}");
  EXPECT_THROW(load_dataset(dir.path()), ValidationError);
}

TEST(Dataset, ModelMustMatchHistoryAndGrid) {
  test::TempDir dir;
  FixedOracle oracle;
  build_dataset(synthetic_source({0, 0, 0}), oracle, small(1, 2), dir.path());
  const auto d = load_dataset(dir.path());
  distill::ModelConfig mc;
  mc.grid_width = 6;
  mc.grid_height = 4;
  mc.history = 2;
  EXPECT_THROW(training_samples(d, mc), ConfigError);
  mc.history = 1;
  mc.grid_width = 8;
  EXPECT_THROW(training_samples(d, mc), ConfigError);
  mc.grid_width = 6;
  EXPECT_EQ(training_samples(d, mc).size(), 2u);
}

TEST(Dataset, ImageDirectorySource) {
  test::TempDir dir;
  const auto src = synthetic_source({0, 0, 0});
  for (std::size_t k = 0; k < 3; ++k) {
    write_png(src.frames[k].frame.image, dir.path() / ("img" + std::to_string(k) + ".png"));
    save_grid(src.frames[k].a_pre, dir.path() / ("img" + std::to_string(k) + ".agrid"));
  }
  const auto loaded = directory_source(dir.path());
  ASSERT_EQ(loaded.frames.size(), 3u);
  EXPECT_EQ(loaded.frames[2].frame.image.rgb, src.frames[2].frame.image.rgb);
  EXPECT_FALSE(loaded.frames[0].truth);

  // Plain images carry no ground truth, so the offline oracle cannot score them.
  test::TempDir out;
  annotate::MockOracle mock;
  EXPECT_THROW(build_dataset(loaded, mock, small(1, 1), out.path()), SourceError);

  std::filesystem::remove(dir.path() / "img1.agrid");
  EXPECT_THROW(directory_source(dir.path()), SourceError);
  EXPECT_THROW(directory_source(dir.path() / "missing"), SourceError);
}

TEST(Dataset, MergedSourcesKeepEpisodesApart) {
  test::TempDir dir;
  auto a = synthetic_source({0, 0, 1});
  a.scene_context = "first";
  auto b = synthetic_source({0, 0});
  b.scene_context = "second";
  const auto m = merge_sources({a, b});
  ASSERT_EQ(m.frames.size(), 5u);
  std::vector<std::size_t> episodes;
  for (const auto& f : m.frames) episodes.push_back(f.episode);
  EXPECT_EQ(episodes, (std::vector<std::size_t>{0, 0, 1, 2, 2}));
  EXPECT_EQ(m.frames[1].scene_context, "first");
  EXPECT_EQ(m.frames[4].scene_context, "second");
  // n = 1: windows end at frames 1 and 4 only; frame 3 would pair across the seam.
  FixedOracle oracle;
  const auto d = build_dataset(m, oracle, small(1, 2), dir.path());
  EXPECT_EQ(d.records[0].id, "000001");
  EXPECT_EQ(d.records[1].id, "000004");
  EXPECT_THROW(build_dataset(m, oracle, small(1, 3), dir.path()), SourceError);
}
