#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "viewmetric/experiment.hpp"
#include "viewmetric/manifest.hpp"

using namespace viewmetric;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

/// Small and fast: enough for the table writers, not for meaningful accuracy.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.gen.n_ids = 16;
  cfg.test_fraction = 0.5;
  cfg.vp_epochs = 50;
  cfg.trunk_widths = {8};
  cfg.branch_widths = {8};
  cfg.d_e = 4;
  cfg.train.epochs = 1;
  cfg.train.steps_per_epoch = 3;
  cfg.train.ids_per_batch = 4;
  cfg.train.lr_decay_epochs = {};
  cfg.trials = 2;
  cfg.hist_bins = 5;
  cfg.n_seeds = 2;
  return cfg;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("viewmetric_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(ConfigFile, ParsesKeysCommentsAndLists) {
  const ExperimentConfig cfg = parse(
      "# comment\n"
      "\n"
      "n_ids = 40\n"
      "trunk_widths = 16, 8\n"
      "lr_decay_epochs = 10,20\n"
      "epochs = 30   # trailing\n"
      "variant = vanet_no_cross\n"
      "use_ce_head = false\n"
      "sigmas = 0, 0.5\n"
      "master_seed = 77\n");
  EXPECT_EQ(cfg.gen.n_ids, 40);
  EXPECT_EQ(cfg.trunk_widths, (std::vector<int>{16, 8}));
  EXPECT_EQ(cfg.train.lr_decay_epochs, (std::vector<int>{10, 20}));
  EXPECT_EQ(cfg.train.epochs, 30);
  EXPECT_EQ(cfg.train.variant, Variant::vanet_no_cross);
  EXPECT_FALSE(cfg.use_ce_head);
  EXPECT_EQ(cfg.sigmas, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(cfg.master_seed, 77u);
}

TEST(ConfigFile, EchoParsesBackToTheSameSettings) {
  ExperimentConfig cfg = tiny_config();
  cfg.train.lambda_ce = 0.25;
  cfg.train.alpha = 0.3;
  cfg.normalize_embeddings = true;
  cfg.sigmas = {0.0, 0.125};
  const std::string text = echo_config(cfg);
  EXPECT_EQ(echo_config(parse(text)), text);
  EXPECT_NE(text.find("lambda_ce = 0.25\n"), std::string::npos);
  EXPECT_NE(text.find("normalize_embeddings = true\n"), std::string::npos);
}

TEST(ConfigFile, DefaultsEchoUnchanged) { EXPECT_EQ(echo_config(parse("")), echo_config(ExperimentConfig{})); }

TEST(ConfigFile, UnknownKeyReportsLine) {
  const std::string msg = error_of("n_ids = 40\n\nlearning_rate = 3\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("learning_rate"), std::string::npos) << msg;
}

TEST(ConfigFile, MalformedLinesAndValues) {
  EXPECT_NE(error_of("n_ids 40\n").find("line 1"), std::string::npos);
  const std::string bad_value = error_of("epochs = ten\n");
  EXPECT_NE(bad_value.find("epochs"), std::string::npos) << bad_value;
  EXPECT_NE(error_of("use_ce_head = maybe\n").find("use_ce_head"), std::string::npos);
}

TEST(ConfigFile, InvalidSettingNamesTheField) {
  const std::string msg = error_of("imgs_per_id = 1\n");
  EXPECT_NE(msg.find("imgs_per_id"), std::string::npos) << msg;
  EXPECT_NE(error_of("test_fraction = 1.5\n").find("test_fraction"), std::string::npos);
  EXPECT_NE(error_of("branch_counts = 1,2\n").find("branch_counts"), std::string::npos);
  EXPECT_NE(error_of("sigma = 2\n").find("sigma"), std::string::npos);
}

TEST(Seeds, RunSeedsAreDistinctAndStable) {
  EXPECT_EQ(run_seed(5, 0), 5u);
  EXPECT_EQ(run_seed(5, 2), 2005u);
  const RunSeeds s = RunSeeds::from(100);
  const std::set<std::uint64_t> all{s.split, s.classifier, s.init, s.train, s.trials, s.errors};
  EXPECT_EQ(all.size(), 6u);
}

TEST(Manifest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_THROW(sha256_file("/nonexistent/viewmetric/file"), ConfigError);
}

TEST(Manifest, JsonRoundTripAndVerify) {
  const auto dir = scratch_dir("manifest");
  {
    std::ofstream(dir / "a.csv") << "x\n1\n";
  }
  ExperimentManifest m;
  m.command = "eval";
  m.config = "n_ids = 80\n";
  m.seeds = {{"run", 1}, {"trials", 6}};
  m.inputs = {record_file((dir / "a.csv").string(), (dir / "a.csv").string())};
  m.outputs = {record_file((dir / "a.csv").string(), "a.csv")};
  const ExperimentManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.tool_version, kToolVersion);
  EXPECT_EQ(back.seeds, m.seeds);
  EXPECT_TRUE(verify_manifest(back, dir.string()).empty());
  {
    std::ofstream(dir / "a.csv") << "x\n2\n";
  }
  // The input and the output record point at the same file.
  EXPECT_EQ(verify_manifest(back, dir.string()).size(), 2u);
  EXPECT_THROW(manifest_from_json("{not json"), ConfigError);
}

TEST(Tables, AblationSigmaAndBranchLayouts) {
  ExperimentConfig cfg = tiny_config();
  cfg.gen.seed = cfg.master_seed;
  const Dataset full = generate_dataset(cfg.gen);

  const auto ablation = run_ablation(full, cfg);
  EXPECT_EQ(ablation.size(), 8u);
  std::ostringstream a;
  write_ablation_csv(a, ablation);
  EXPECT_EQ(a.str().rfind("variant,top1,top5,top20,mAP,top1_s,top1_d,top1_s_star,top1_d_star,overlap,seeds\n", 0),
            0u);
  EXPECT_EQ(count_lines(a.str()), 5);
  for (Variant v : kAllVariants) EXPECT_NE(a.str().find("\n" + std::string(variant_name(v)) + ","), std::string::npos);

  cfg.n_seeds = 1;
  const auto sigma = run_sigma_sweep(full, cfg);
  std::ostringstream s;
  write_sigma_csv(s, sigma);
  EXPECT_EQ(count_lines(s.str()), 1 + 2 * 4);

  const auto branches = run_branch_sweep(full, cfg);
  std::ostringstream b;
  write_branch_csv(b, branches);
  EXPECT_EQ(count_lines(b.str()), 1 + 3);
  EXPECT_EQ(b.str().rfind("n_branches,top1,top5,seeds\n2,", 0), 0u);
}

TEST(Tables, AblationIsReproducible) {
  ExperimentConfig cfg = tiny_config();
  cfg.n_seeds = 1;
  const Dataset full = generate_dataset(cfg.gen);
  std::ostringstream first;
  std::ostringstream second;
  write_ablation_csv(first, run_ablation(full, cfg));
  write_ablation_csv(second, run_ablation(full, cfg));
  EXPECT_EQ(first.str(), second.str());
}
