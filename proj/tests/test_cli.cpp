#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "moldgan/cli.hpp"
#include "moldgan/dmd.hpp"
#include "moldgan/metrics.hpp"

using namespace moldgan;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "moldgan");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p);
  return {b.begin(), b.end()};
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Every regular file under `dir`, relative path to bytes.
std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> m;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) m[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  return m;
}

class Cli : public ::testing::Test {
 protected:
  fs::path root;
  void SetUp() override {
    root = fs::temp_directory_path() / ("moldgan_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }

  void small_synth(const std::string& out, const std::string& seed = "7") {
    const auto r = run({"synth", "--seed", seed, "--grid", "16", "--k-active", "6", "--basis-k", "20", "--n-train",
                        "4", "--n-val", "6", "--out", p(out)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

}  // namespace

TEST(ParseConfig, LinesAndErrors) {
  const auto kv = cli::parse_config("# note\n\n seed = 4 \nout=x=y\n");
  EXPECT_EQ(kv.at("seed"), "4");
  EXPECT_EQ(kv.at("out"), "x=y");
  EXPECT_THROW(cli::parse_config("novalue\n"), Error);
  EXPECT_THROW(cli::parse_config("=3\n"), Error);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"basis", "--k", "many"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"basis", "--help"}).code, cli::kExitOk);
  EXPECT_EQ(run({"train", "--data", p("nowhere"), "--out", p("t")}).code, cli::kExitData);
}

TEST_F(Cli, BasisRoundTripAndDeterminism) {
  const auto r = run({"basis", "--h", "64", "--w", "64", "--k", "50", "--out", p("b1.dmdb")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(dmd::load_basis(p("b1.dmdb")) == dmd::build_basis(64, 64, 50));
  ASSERT_EQ(run({"basis", "--h", "64", "--w", "64", "--k", "50", "--out", p("b2.dmdb")}).code, 0);
  EXPECT_EQ(read_file(p("b1.dmdb")), read_file(p("b2.dmdb")));
  const auto manifest = slurp(p("b1.dmdb.manifest.txt"));
  EXPECT_EQ(manifest.substr(0, manifest.find('\n')), "# command=basis");
  EXPECT_NE(manifest.find("\nk=50\n"), std::string::npos);
  EXPECT_NE(manifest.find("# artifact b1.dmdb fnv1a64="), std::string::npos);
  const auto big = run({"basis", "--h", "4", "--w", "4", "--k", "17", "--out", p("b3.dmdb")});
  EXPECT_EQ(big.code, cli::kExitUsage);
  EXPECT_NE(big.err.find("exceeds"), std::string::npos);
}

TEST_F(Cli, SynthSameSeedIdenticalDataset) {
  ASSERT_EQ(run({"synth", "--seed", "7", "--out", p("a")}).code, 0);
  ASSERT_EQ(run({"synth", "--seed", "7", "--out", p("b")}).code, 0);
  const auto a = snapshot(p("a")), b = snapshot(p("b"));
  EXPECT_EQ(a.size(), 37u * 3 + 2);
  EXPECT_EQ(a, b);
  ASSERT_EQ(run({"synth", "--seed", "8", "--out", p("c")}).code, 0);
  EXPECT_NE(snapshot(p("c")), a);
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
  write_text(p("cfg.txt"), "# synth settings\nseed=3\nn-train=2\nn-val=3\ngrid=16\nbasis-k=10\nk-active=4\n");
  ASSERT_EQ(run({"synth", "--config", p("cfg.txt"), "--n-train", "5", "--out", p("d")}).code, 0);
  int train = 0;
  for (const auto& e : fs::directory_iterator(p("d/train"))) train += e.path().string().ends_with("_thermo.pgm");
  EXPECT_EQ(train, 5);
  const auto manifest = slurp(p("d/manifest.txt"));
  EXPECT_NE(manifest.find("\nn-train=5\n"), std::string::npos);
  EXPECT_NE(manifest.find("\nseed=3\n"), std::string::npos);

  write_text(p("bad.txt"), "seed=3\nepochs=4\n");
  const auto bad = run({"synth", "--config", p("bad.txt"), "--out", p("e")});
  EXPECT_EQ(bad.code, cli::kExitUsage);
  EXPECT_NE(bad.err.find("epochs"), std::string::npos);
  EXPECT_EQ(run({"synth", "--config", p("missing.txt"), "--out", p("e")}).code, cli::kExitUsage);
}

TEST_F(Cli, ManifestReplayReproducesArtifacts) {
  small_synth("data");
  ASSERT_EQ(run({"synth", "--config", p("data/manifest.txt"), "--out", p("replay")}).code, 0);
  EXPECT_EQ(snapshot(p("data")), snapshot(p("replay")));

  const std::vector<std::string> train = {"train", "--data", p("data"), "--epochs", "2", "--base", "2",
                                          "--d-layers", "2", "--d-base", "2", "--seed", "5"};
  auto t1 = train;
  t1.insert(t1.end(), {"--out", p("run1")});
  ASSERT_EQ(run(t1).code, 0);
  ASSERT_EQ(run({"train", "--config", p("run1/manifest.txt"), "--out", p("run2")}).code, 0);
  EXPECT_EQ(snapshot(p("run1")), snapshot(p("run2")));
  EXPECT_EQ(parse_csv(slurp(p("run1/loss_curve.csv"))).size(), 3u);

  ASSERT_EQ(run({"infer", "--checkpoint", p("run1/checkpoint.p2pw"), "--in", p("data/val"), "--out", p("gen1")}).code, 0);
  ASSERT_EQ(run({"infer", "--config", p("gen1/manifest.txt"), "--out", p("gen2")}).code, 0);
  EXPECT_EQ(snapshot(p("gen1")), snapshot(p("gen2")));
  EXPECT_TRUE(fs::exists(p("gen1/pair_test01_geom.pgm")));

  const std::vector<std::string> ev = {"evaluate", "--real-dir", p("data/val"), "--gen-dir", p("gen1"),
                                       "--settings", p("data/settings.csv"), "--k", "20"};
  auto e1 = ev;
  e1.insert(e1.end(), {"--out", p("rep1")});
  ASSERT_EQ(run(e1).code, 0);
  ASSERT_EQ(run({"evaluate", "--config", p("rep1/manifest.txt"), "--out", p("rep2")}).code, 0);
  EXPECT_EQ(snapshot(p("rep1")), snapshot(p("rep2")));
  EXPECT_TRUE(fs::exists(p("rep1/images_similarity_heldout.csv")));
  EXPECT_EQ(parse_csv(slurp(p("rep1/images_similarity.csv"))).size(), 1u + 4 + 2);
}

TEST_F(Cli, EvaluateSelfComparison) {
  small_synth("data");
  const auto r = run({"evaluate", "--real-dir", p("data/val"), "--gen-dir", p("data/val"), "--k", "20", "--out",
                      p("rep")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto img = parse_csv(slurp(p("rep/images_similarity.csv")));
  ASSERT_EQ(img.size(), 1u + 6 + 2);
  for (std::size_t i = 1; i <= 6; ++i) {
    EXPECT_NEAR(std::stod(img[i][1]), 1.0, 1e-12);
    EXPECT_NEAR(std::stod(img[i][2]), 1.0, 1e-12);
    EXPECT_EQ(img[i][3], "inf");
    EXPECT_NEAR(std::stod(img[i][4]), 1.0, 1e-12);
  }
  const auto spec = parse_csv(slurp(p("rep/spectrum_similarity.csv")));
  for (std::size_t i = 1; i <= 6; ++i) {
    EXPECT_NEAR(std::stod(spec[i][1]), 1.0, 1e-12);
    EXPECT_NEAR(std::stod(spec[i][2]), 1.0, 1e-12);
  }
  for (const auto& row : parse_csv(slurp(p("rep/per_mode_error.csv"))))
    if (row[0] != "part_id") {
      EXPECT_EQ(std::stod(row[2]), 0.0);
    }
  for (const auto& row : parse_csv(slurp(p("rep/features.csv"))))
    if (row[0] != "part_id" && row[4] != "nan") {
      EXPECT_EQ(std::stod(row[4]), 0.0);
    }
}

TEST_F(Cli, ReportColumnLabelsAndAggregates) {
  small_synth("data");
  small_synth("other", "9");
  ASSERT_EQ(run({"evaluate", "--real-dir", p("data/val"), "--gen-dir", p("other/val"), "--k", "20", "--holdout",
                 "heldout01,heldout02", "--out", p("rep")})
                .code,
            0);
  const auto img = parse_csv(slurp(p("rep/images_similarity.csv")));
  const auto spec = parse_csv(slurp(p("rep/spectrum_similarity.csv")));
  EXPECT_EQ(img[0], (std::vector<std::string>{"part_id", "cosine", "correlation", "psnr_db", "ssim"}));
  EXPECT_EQ(spec[0], (std::vector<std::string>{"part_id", "cosine", "r_squared"}));
  ASSERT_EQ(img.size(), 7u);
  EXPECT_EQ(img[5][0], "MEDIAN 4 parts");
  EXPECT_EQ(img[6][0], "STD 4 parts");
  EXPECT_EQ(spec[5][0], "MEDIAN 4 parts");
  EXPECT_EQ(spec[6][0], "STD 4 parts");
  // Aggregates equal a recomputation from the per-part rows.
  for (std::size_t c = 1; c < img[0].size(); ++c) {
    std::vector<double> col;
    for (std::size_t r = 1; r <= 4; ++r) col.push_back(std::stod(img[r][c]));
    EXPECT_NEAR(std::stod(img[5][c]), metrics::median(col), 1e-12);
    EXPECT_NEAR(std::stod(img[6][c]), metrics::population_std(col), 1e-12);
  }
  const auto held = parse_csv(slurp(p("rep/spectrum_similarity_heldout.csv")));
  EXPECT_EQ(held[1][0], "heldout01");
  EXPECT_EQ(held[3][0], "MEDIAN 2 parts");
  const auto base = parse_csv(slurp(p("rep/spectrum_baseline.csv")));
  EXPECT_EQ(base[0], (std::vector<std::string>{"pairing", "median_spectrum_cosine"}));
  EXPECT_EQ(base[1][0], "matched");
  EXPECT_EQ(base[2][0], "shuffled");
  const auto tests = parse_csv(slurp(p("rep/feature_tests.csv")));
  EXPECT_EQ(tests[0], (std::vector<std::string>{"feature_name", "parts", "p_value"}));
  EXPECT_EQ(tests.size(), 23u);
}

TEST_F(Cli, EvaluateListsUnmatchedFiles) {
  small_synth("data");
  fs::create_directories(p("gen"));
  fs::copy_file(p("data/val/pair_test01_geom.pgm"), p("gen/pair_test01_geom.pgm"));
  fs::copy_file(p("data/val/pair_test01_geom.pgm"), p("gen/pair_extra_geom.pgm"));
  const auto r = run({"evaluate", "--real-dir", p("data/val"), "--gen-dir", p("gen"), "--out", p("rep")});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("pair_test02_geom.pgm (missing in gen-dir)"), std::string::npos);
  EXPECT_NE(r.err.find("pair_extra_geom.pgm (missing in real-dir)"), std::string::npos);
}

TEST_F(Cli, PreprocessCsvFrames) {
  fs::create_directories(p("frames"));
  for (int f = 0; f < 3; ++f) {
    std::string csv;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        const double dx = x - 24 - f, dy = y - 24 + f;
        csv += (x ? "," : "") + format_double(20 + 50 * std::exp(-(dx * dx + dy * dy) / 40.0));
      }
      csv += "\n";
    }
    write_text(p("frames/frame" + std::to_string(f) + ".csv"), csv);
  }
  const std::vector<std::string> args = {"preprocess", "--in", p("frames"), "--crop-w", "32", "--crop-h", "32",
                                         "--size", "32", "--window", "12"};
  auto a = args;
  a.insert(a.end(), {"--out", p("pre1")});
  const auto r = run(a);
  ASSERT_EQ(r.code, 0) << r.err;
  auto b = args;
  b.insert(b.end(), {"--out", p("pre2")});
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(snapshot(p("pre1")), snapshot(p("pre2")));
  const auto shifts = parse_csv(slurp(p("pre1/shifts.csv")));
  ASSERT_EQ(shifts.size(), 4u);
  EXPECT_EQ(shifts[0], (std::vector<std::string>{"file", "dx", "dy"}));
  EXPECT_NEAR(std::abs(std::stod(shifts[2][1])), 1.0, 0.1);
  EXPECT_NEAR(std::abs(std::stod(shifts[3][2])), 2.0, 0.1);
  EXPECT_EQ(load_pgm(p("pre1/frame0.pgm")).width, 32);

  write_text(p("frames/bad.csv"), "1,2\n3\n");
  EXPECT_EQ(run({"preprocess", "--in", p("frames"), "--out", p("pre3")}).code, cli::kExitData);
}
