#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "commands.hpp"
#include "test_support.hpp"

using namespace mbu;
using namespace mbu::cli;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes a random PGM of the given extent.
void write_pgm(const std::filesystem::path& p, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int i = 0; i < h * w; ++i) s += static_cast<char>(rng() & 0xff);
  write_text(p, s);
}

}  // namespace

TEST(Table, TextAndCsv) {
  Table t{{"name", "value"}, {{"a", "1"}, {"with,comma", "22"}}};
  EXPECT_EQ(t.csv(), "name,value\na,1\n\"with,comma\",22\n");
  const auto text = t.text();
  EXPECT_NE(text.find("name        value"), std::string::npos) << text;
  EXPECT_NE(text.find("a               1"), std::string::npos) << text;
}

TEST(LoadConfig, Options) {
  EXPECT_EQ(load_config({}), UNetConfig{});
  EXPECT_EQ(load_config({"", 16, 64}), UNetConfig::scaled(16, 64));
  const auto dir = test::scratch_dir("cli_config");
  write_text(dir / "c.cfg", "base = 8\nextent = 32\n");
  EXPECT_EQ(load_config({(dir / "c.cfg").string(), std::nullopt, 64}).height, 64);
  EXPECT_THROW(load_config({(dir / "c.cfg").string(), 8, std::nullopt}), Error);
  EXPECT_THROW(load_config({"", std::nullopt, 50}), Error);
  EXPECT_THROW(load_config({"", 0, std::nullopt}), Error);
}

TEST(Plan, DefaultRanksTransposedFirst) {
  std::ostringstream os;
  EXPECT_EQ(cmd_plan(PlanOptions{}, os), 0);
  const auto s = os.str();
  EXPECT_TRUE(std::regex_search(s, std::regex("\n1 +up-CT4 "))) << s;
  EXPECT_NE(s.find("plan k=4: config_id 240 masked [up-CT4, up-CT3, up-CT2, up-CT1]"), std::string::npos) << s;
  EXPECT_NE(s.find("normalization min-max"), std::string::npos);
}

TEST(Plan, CsvOutput) {
  PlanOptions o;
  o.out.format = Format::Csv;
  o.normalization = planner::Normalization::DivideByMax;
  const auto dir = test::scratch_dir("cli_plan");
  o.out.csv_path = (dir / "plan.csv").string();
  std::ostringstream os;
  cmd_plan(o, os);
  EXPECT_EQ(os.str().rfind("rank,layer,ops,params,ops_norm,params_norm,score,state\n1,up-CT4,", 0), 0u) << os.str();
  EXPECT_EQ(slurp(dir / "plan.csv"), os.str());
  std::istringstream lines(os.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 13);
}

TEST(Profile, TotalsRow) {
  std::ostringstream os;
  ProfileOptions o;
  o.out.format = Format::Csv;
  cmd_profile(o, os);
  const auto s = os.str();
  EXPECT_NE(s.find("total," + std::to_string(planner::total_ops(UNetConfig{}, 512, 512)) + "," +
                   std::to_string(planner::total_params(UNetConfig{}))),
            std::string::npos)
      << s;
  EXPECT_NE(s.find("up-CT4,1073741824,8288"), std::string::npos) << s;
}

TEST(Analyze, PlantedGains) {
  const auto dir = test::scratch_dir("cli_analyze");
  std::string csv = "config_id,dice\n";
  for (int id : planner::enumerate_configs_below(5)) {
    double d = 0.125;
    for (int l = 0; l < 12; ++l) {
      if (id >> l & 1) d += (l + 1) / 256.0;
    }
    std::ostringstream v;
    v.precision(17);
    v << d;
    csv += std::to_string(id) + "," + v.str() + "\n";
  }
  write_text(dir / "r.csv", csv);
  AnalyzeOptions o;
  o.results_path = (dir / "r.csv").string();
  o.out.format = Format::Csv;
  std::ostringstream os;
  EXPECT_EQ(cmd_analyze(o, os), 0);
  EXPECT_NE(os.str().find("down-C1,0.00390625,232,0\n"), std::string::npos) << os.str();
  EXPECT_NE(os.str().find("up-C4,0.046875,232,0\n"), std::string::npos) << os.str();

  write_text(dir / "one.csv", "config_id,dice\n0,0.5\n");
  o.results_path = (dir / "one.csv").string();
  o.out.format = Format::Text;
  std::ostringstream os2;
  cmd_analyze(o, os2);
  EXPECT_NE(os2.str().find("undefined"), std::string::npos);
  o.max_masked = 0;
  EXPECT_THROW(cmd_analyze(o, os2), Error);
}

TEST(Pipeline, SynthQuantizeInfer) {
  const auto dir = test::scratch_dir("cli_pipeline");
  write_text(dir / "small.cfg", "base = 8\nextent = 32\nin_channels = 1\nmasked = up-CT1, down-C2\n");
  std::ostringstream log;
  SynthCmdOptions so;
  so.config.path = (dir / "small.cfg").string();
  so.seed = 3;
  so.out_dir = (dir / "bundle").string();
  so.config_out = (dir / "used.cfg").string();
  EXPECT_EQ(cmd_synth(so, log), 0);
  EXPECT_EQ(read_config((dir / "used.cfg").string()), read_config((dir / "small.cfg").string()));

  QuantizeOptions qo;
  qo.bundle_dir = so.out_dir;
  qo.config.path = so.config.path;
  qo.out_path = (dir / "m.mbun").string();
  EXPECT_EQ(cmd_quantize(qo, log), 0);
  EXPECT_NE(log.str().find("down-C2/conv1"), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("up-CT1"), std::string::npos);

  write_pgm(dir / "in.pgm", 32, 32, 4);
  InferOptions io;
  io.model_path = qo.out_path;
  io.image_path = (dir / "in.pgm").string();
  io.mask_path = (dir / "mask.pgm").string();
  io.logits_path = (dir / "logits.rten").string();
  io.threads = 2;
  EXPECT_EQ(cmd_infer(io, log), 0);

  // same result in memory
  const auto model = read_model(qo.out_path);
  const auto image = read_image(io.image_path);
  const auto want = forward(model, image);
  EXPECT_EQ(to_float_tensor(read_tensor(io.logits_path)), want.logits);
  const auto mask = read_image(io.mask_path);
  for (std::size_t i = 0; i < want.mask.size(); ++i) ASSERT_EQ(mask.data[i], want.mask[i] ? 1.0 : 0.0);
}

TEST(Pipeline, ZeroWeightModelGivesConstantMask) {
  const auto dir = test::scratch_dir("cli_zero");
  auto c = UNetConfig::scaled(8, 32);
  c.in_channels = 1;
  auto bundle = synthesize_bundle(c, 1);
  for (auto& e : bundle.entries) std::fill(e.weights.begin(), e.weights.end(), 0.0);
  bundle.entries.back().bias = {0.5};
  write_model((dir / "z.mbun").string(), build(c, bundle));
  write_pgm(dir / "in.pgm", 32, 32, 9);
  InferOptions io{(dir / "z.mbun").string(), (dir / "in.pgm").string(), (dir / "mask.pgm").string(), "", 1};
  std::ostringstream os;
  cmd_infer(io, os);
  EXPECT_NE(os.str().find("1024 foreground pixels"), std::string::npos) << os.str();
  for (double v : read_image(io.mask_path).data) ASSERT_EQ(v, 1.0);
}

TEST(Pipeline, ShapeErrorNamesTheProblem) {
  const auto dir = test::scratch_dir("cli_shape");
  auto c = UNetConfig::scaled(8, 32);
  write_model((dir / "m.mbun").string(), build(c, synthesize_bundle(c, 1)));
  write_pgm(dir / "in.pgm", 16, 16, 2);
  InferOptions io{(dir / "m.mbun").string(), (dir / "in.pgm").string(), (dir / "mask.pgm").string(), "", 1};
  std::ostringstream os;
  try {
    cmd_infer(io, os);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    EXPECT_NE(std::string(e.what()).find("16x16x1"), std::string::npos) << e.what();
  }
}

TEST(Verify, SmallRunIsExact) {
  VerifyOptions o;
  o.config.base = 8;
  o.config.extent = 32;
  o.trials = 3;
  std::ostringstream os;
  EXPECT_EQ(cmd_verify(o, os), 0);
  EXPECT_NE(os.str().find("3/3 exact"), std::string::npos) << os.str();
}

TEST(Bench, ReportsAllPaths) {
  BenchOptions o;
  o.channels = 64;
  o.extent = 8;
  o.reps = 1;
  const auto r = run_conv_bench(o);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) EXPECT_GT(row.seconds, 0.0) << row.name;
  EXPECT_EQ(r.macs, 8.0 * 8 * 64 * 64 * 9);
  std::ostringstream os;
  o.oracle = false;
  cmd_bench(o, os);
  EXPECT_NE(os.str().find("bit masked conv"), std::string::npos);
  EXPECT_EQ(os.str().find("oracle conv"), std::string::npos);
  o.channels = 0;
  EXPECT_THROW(cmd_bench(o, os), Error);
}
