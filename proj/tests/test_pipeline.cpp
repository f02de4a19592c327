#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "fixfit/pipeline.hpp"

using namespace fixfit;
using namespace fixfit::pipeline;
namespace fs = std::filesystem;

namespace {

json tiny_kepler() {
  return json::parse(R"({
    "pipeline": "kepler", "seed": 3,
    "sampling": {"n_raw": 400},
    "network": {"encoder": [6], "decoder": [8]},
    "train": {"max_epochs": 20, "patience": 5, "batch_size": 32},
    "sweep": {"k_values": [1, 2], "replicates": 2},
    "fit": {"n_hops": 5, "restarts": 2}
  })");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).generic_string()] = ss.str();
  }
  return files;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("fixfit_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  Workdir wd() const { return {root_}; }

  fs::path root_;
  std::ostringstream log_;
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  PipelineConfig cfg(json{{"pipeline", "kepler"}});
  EXPECT_EQ(cfg.n_raw(), 4000u);
  EXPECT_EQ(cfg.section("sweep")["replicates"], 10);
  cfg.set("train.lr=0.005");
  EXPECT_DOUBLE_EQ(cfg.train().adam.lr, 0.005);
  cfg.set("sweep.k_values=[1,3]");
  EXPECT_EQ(cfg.sweep(1).k_values, (std::vector<std::size_t>{1, 3}));
  cfg.set("network.activation=relu");
  EXPECT_EQ(cfg.section("network")["activation"], "relu");
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(PipelineConfig(json{{"pipeline", "orbit"}}), ConfigError);
  EXPECT_THROW(PipelineConfig(json{{"pipeline", "kepler"}, {"trian", json::object()}}), ConfigError);
  PipelineConfig cfg;
  EXPECT_THROW(cfg.set("train.learning_rate=1"), ConfigError);
  EXPECT_THROW(cfg.set("train.lr=fast"), ConfigError);
  EXPECT_THROW(cfg.set("pipeline=larter_breakspear"), ConfigError);
  EXPECT_THROW(cfg.set("noequals"), ConfigError);
  // A failed validation leaves the config unchanged.
  EXPECT_THROW(cfg.set("sweep.replicates=0"), ConfigError);
  EXPECT_EQ(cfg.section("sweep")["replicates"], 10);
}

TEST(Config, StageHashesFollowTheirSections) {
  PipelineConfig a(tiny_kepler()), b(tiny_kepler());
  b.set("fit.n_hops=7");
  EXPECT_EQ(a.stage_hash("generate"), b.stage_hash("generate"));
  EXPECT_EQ(a.stage_hash("sweep"), b.stage_hash("sweep"));
  EXPECT_NE(a.stage_hash("fit"), b.stage_hash("fit"));
  b.set("seed=4");
  EXPECT_NE(a.stage_hash("generate"), b.stage_hash("generate"));
}

TEST(Config, LarterBreakspearFreeSubset) {
  PipelineConfig cfg(json{{"pipeline", "larter_breakspear"}});
  EXPECT_EQ(cfg.space().dimension(), 11u);
  cfg.set(R"(sampling.free=["c","g_Ca"])");
  EXPECT_EQ(cfg.space().dimension(), 2u);
  EXPECT_THROW(cfg.set(R"(sampling.free=["nope"])"), ConfigError);
}

TEST_F(PipelineTest, GenerateIsDeterministic) {
  PipelineConfig cfg(tiny_kepler());
  const auto s = cmd_generate(cfg, wd(), 1, log_);
  EXPECT_GT(s.retained, 50u);
  const auto first = snapshot(wd().dataset());
  fs::remove_all(root_);
  cmd_generate(cfg, wd(), 1, log_);
  EXPECT_EQ(first, snapshot(wd().dataset()));
  EXPECT_TRUE(fs::exists(wd().config()));
}

TEST_F(PipelineTest, GenerateRefusesForeignDataset) {
  PipelineConfig cfg(tiny_kepler());
  cmd_generate(cfg, wd(), 1, log_);
  cfg.set("seed=9");
  EXPECT_THROW(cmd_generate(cfg, wd(), 1, log_), ConfigError);
}

TEST_F(PipelineTest, ZeroRawSamplesFails) {
  PipelineConfig cfg(tiny_kepler());
  EXPECT_THROW(cfg.set("sampling.n_raw=0"), ConfigError);
  EXPECT_EQ(cfg.n_raw(), 400u);
}

TEST_F(PipelineTest, SweepNeedsDataset) {
  PipelineConfig cfg(tiny_kepler());
  try {
    cmd_sweep(cfg, wd(), 1, log_);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
}

TEST_F(PipelineTest, FullChainAndReport) {
  PipelineConfig cfg(tiny_kepler());
  cmd_generate(cfg, wd(), 1, log_);
  const auto sr = cmd_sweep(cfg, wd(), 2, log_);
  EXPECT_EQ(sr.replicates.size(), 4u);
  EXPECT_TRUE(fs::exists(wd().sweep() / "sweep.json"));
  EXPECT_TRUE(fs::exists(wd().sweep() / "sweep.svg"));

  // Resume: a second sweep reuses every weight file and gives the same summary.
  const auto sweep_bytes = snapshot(wd().sweep());
  cmd_sweep(cfg, wd(), 1, log_);
  EXPECT_EQ(sweep_bytes, snapshot(wd().sweep()));

  const auto sm = cmd_sensitivity(cfg, wd(), std::nullopt, log_);
  EXPECT_EQ(sm.s_unc.rows(), 4);
  EXPECT_EQ(static_cast<std::size_t>(sm.s_unc.cols()), sr.selected_k);
  std::ifstream csv(wd().sensitivity() / "sensitivity.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("parameter,L1", 0), 0u);
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) rows += line.empty() ? 0 : 1;
  EXPECT_EQ(rows, 4u);
  const auto sens_bytes = snapshot(wd().sensitivity());
  cmd_sensitivity(cfg, wd(), std::nullopt, log_);
  EXPECT_EQ(sens_bytes, snapshot(wd().sensitivity()));

  const auto fs_ = cmd_fit(cfg, wd(), std::nullopt, FitTarget{std::nullopt, 0}, 1, log_);
  EXPECT_EQ(fs_.runs.size(), 2u);
  EXPECT_TRUE(fs::exists(wd().fit() / "trace.csv"));

  const auto rs = cmd_report(wd(), log_);
  EXPECT_FALSE(rs.empty);
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(wd().report())) svgs += e.path().extension() == ".svg" ? 1 : 0;
  EXPECT_EQ(svgs, 4u);
  EXPECT_TRUE(rs.missing.empty());
  const auto report_bytes = snapshot(wd().report());
  cmd_report(wd(), log_);
  EXPECT_EQ(report_bytes, snapshot(wd().report()));
  for (const auto& [name, text] : report_bytes)
    if (name.ends_with(".svg")) EXPECT_EQ(text.find("href"), std::string::npos) << name;
}

TEST_F(PipelineTest, SingleKSweep) {
  auto j = tiny_kepler();
  j["sweep"]["k_values"] = {2};
  PipelineConfig cfg(j);
  cmd_generate(cfg, wd(), 1, log_);
  const auto sr = cmd_sweep(cfg, wd(), 1, log_);
  EXPECT_EQ(sr.selected_k, 2u);
}

TEST_F(PipelineTest, MissingWeightsAreNamed) {
  PipelineConfig cfg(tiny_kepler());
  cmd_generate(cfg, wd(), 1, log_);
  const auto path = root_ / "nowhere.weights.json";
  try {
    cmd_sensitivity(cfg, wd(), path, log_);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere.weights.json"), std::string::npos);
  }
}

TEST_F(PipelineTest, FitTargetChecks) {
  auto j = tiny_kepler();
  j["sweep"]["k_values"] = {2};
  PipelineConfig cfg(j);
  cmd_generate(cfg, wd(), 1, log_);
  cmd_sweep(cfg, wd(), 1, log_);
  const auto target = root_ / "target.json";
  {
    std::ofstream(target) << "[1, 2, 3]";
  }
  EXPECT_THROW(cmd_fit(cfg, wd(), std::nullopt, FitTarget{target, std::nullopt}, 1, log_), ShapeError);
  EXPECT_THROW(cmd_fit(cfg, wd(), std::nullopt, FitTarget{std::nullopt, 100000}, 1, log_), DataError);
  EXPECT_THROW(cmd_fit(cfg, wd(), std::nullopt, FitTarget{}, 1, log_), ConfigError);

  // A raw orbit (positive radii) in a text file is accepted and transformed.
  const auto curve = kepler::kepler_orbit({0.5, 0.5, 0.8, 0.7, 0.5}, 100);
  {
    std::ofstream out(root_ / "orbit.csv");
    for (double r : curve.radii) out << r << "\n";
  }
  const auto s = cmd_fit(cfg, wd(), std::nullopt, FitTarget{root_ / "orbit.csv", std::nullopt}, 1, log_);
  EXPECT_TRUE(std::isfinite(s.decoded_rss));

  // Without the stored transform the raw target cannot be mapped.
  auto manifest = nn::read_json_file(wd().dataset() / "manifest.json");
  manifest.erase("transform");
  write_json(wd().dataset() / "manifest.json", manifest);
  EXPECT_THROW(cmd_fit(cfg, wd(), std::nullopt, FitTarget{root_ / "orbit.csv", std::nullopt}, 1, log_), DataError);
}

TEST_F(PipelineTest, EmptyReport) {
  fs::create_directories(root_);
  const auto rs = cmd_report(wd(), log_);
  EXPECT_TRUE(rs.empty);
  EXPECT_NE(log_.str().find("empty report"), std::string::npos);
}
