#include <gtest/gtest.h>

#include <ssbd/cli.hpp>
#include <ssbd/io.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ssbd");
  std::ostringstream out, err;
  const int code = ssbd::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("ssbd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(CliTest, GenThenDeconv) {
  ASSERT_EQ(run({"gen", "--k", "10", "--m", "4096", "--theta", "0.1", "--seed", "7", "-o", p("y.txt")}).code, 0);
  EXPECT_TRUE(fs::exists(p("a0.txt")));
  EXPECT_TRUE(fs::exists(p("gen.meta")));
  EXPECT_EQ(ssbd::io::read_vector(p("y.txt")).size(), 4096);
  const Result r = run({"deconv", "-i", p("y.txt"), "--k", "10", "--truth", p("a0.txt"), "--outdir", p("out"), "--trace"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "out" / "deconv.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "seed,k,m,status,iters,escapes,err,best_shift,sign,psi_final");
  std::istringstream rows(csv);
  std::string header, row;
  std::getline(rows, header);
  std::getline(rows, row);
  std::vector<std::string> cells;
  std::stringstream rs(row);
  for (std::string c; std::getline(rs, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 10u);
  const double err = std::stod(cells[6]);
  EXPECT_GE(err, 0.0);
  EXPECT_LE(err, 1.0);
  EXPECT_EQ(ssbd::io::read_vector((dir / "out" / "a_bar.txt").string()).size(), 10);
  EXPECT_TRUE(fs::exists(dir / "out" / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "deconv.meta"));
}

TEST_F(CliTest, DeconvWithoutTruthLeavesScoreEmpty) {
  ASSERT_EQ(run({"gen", "--k", "6", "--m", "1024", "--theta", "0.1", "--seed", "2", "-o", p("y.txt")}).code, 0);
  ASSERT_EQ(run({"deconv", "-i", p("y.txt"), "--k", "6", "--outdir", p("o"), "--activation"}).code, 0);
  const std::string csv = slurp(dir / "o" / "deconv.csv");
  EXPECT_NE(csv.find(",,,"), std::string::npos);
  EXPECT_EQ(ssbd::io::read_vector((dir / "o" / "x_hat.txt").string()).size(), 1024);
}

TEST_F(CliTest, ParamsByteIdentical) {
  ASSERT_EQ(run({"params", "--k", "10,20", "--trials", "3", "--seed", "1", "--outdir", p("a")}).code, 0);
  ASSERT_EQ(run({"params", "--k", "10,20", "--trials", "3", "--seed", "1", "--outdir", p("b")}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "params.csv"), slurp(dir / "b" / "params.csv"));
  EXPECT_EQ(slurp(dir / "a" / "params_pred.csv"), slurp(dir / "b" / "params_pred.csv"));
  EXPECT_TRUE(fs::exists(dir / "a" / "params.meta"));
}

TEST_F(CliTest, UsageErrors) {
  Result r = run({"deconv", "--bogus", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"gen", "--k", "abc"}).code, 1);
  r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("deconv"), std::string::npos);
}

TEST_F(CliTest, MalformedInputIsUsageError) {
  ssbd::io::write_text(p("bad.txt"), "1.0\nnot-a-number\n");
  const Result r = run({"deconv", "-i", p("bad.txt"), "--k", "3", "--outdir", p("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("not a number"), std::string::npos);
  EXPECT_EQ(run({"deconv", "-i", p("missing.txt"), "--k", "3"}).code, 1);
  ssbd::io::write_text(p("short.txt"), "1\n2\n3\n");
  EXPECT_EQ(run({"deconv", "-i", p("short.txt"), "--k", "3"}).code, 1);
}

TEST_F(CliTest, SingularInputIsNumericalError) {
  std::string zeros;
  for (int i = 0; i < 64; ++i) zeros += "0\n";
  ssbd::io::write_text(p("zero.txt"), zeros);
  const Result r = run({"deconv", "-i", p("zero.txt"), "--k", "4", "--outdir", p("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("inv_sqrt"), std::string::npos);
}

TEST_F(CliTest, ConfigFileAndOverride) {
  ssbd::io::write_text(p("gen.cfg"), "k = 5\nm = 200\ntheta = 0.2\nseed = 3\n");
  ASSERT_EQ(run({"gen", "--config", p("gen.cfg"), "-o", p("a/y.txt")}).code, 0);
  EXPECT_EQ(ssbd::io::read_vector(p("a/y.txt")).size(), 200);
  ASSERT_EQ(run({"gen", "--config", p("gen.cfg"), "--m", "300", "-o", p("b/y.txt")}).code, 0);
  EXPECT_EQ(ssbd::io::read_vector(p("b/y.txt")).size(), 300);
  ssbd::io::write_text(p("bad.cfg"), "k = 5\nwidth = 3\n");
  const Result r = run({"gen", "--config", p("bad.cfg"), "-o", p("c/y.txt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("width"), std::string::npos);
}

TEST_F(CliTest, MetaReproducesRun) {
  ASSERT_EQ(run({"conc", "--k", "5", "--m", "128,256", "--samples", "3", "--q-sampling", "sphere", "--seed", "4", "--outdir", p("a")}).code, 0);
  const Result r = run({"conc", "--config", (dir / "a" / "conc.meta").string(), "--outdir", p("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "a" / "conc.csv"), slurp(dir / "b" / "conc.csv"));
  EXPECT_EQ(slurp(dir / "a" / "conc_summary.csv"), slurp(dir / "b" / "conc_summary.csv"));
  const ssbd::io::Config meta = ssbd::io::read_config((dir / "a" / "conc.meta").string());
  EXPECT_EQ(meta.at("seed"), "4");
  EXPECT_EQ(meta.count("artifact_version"), 1u);
}

TEST_F(CliTest, LandscapeCsv) {
  ASSERT_EQ(run({"gen", "--k", "4", "--m", "256", "--theta", "0.2", "--seed", "5", "-o", p("y.txt")}).code, 0);
  ssbd::io::write_text(p("pts.txt"), "1 0 0 0\n0.5, 0.5, 0.5, 0.5\n");
  Result r = run({"landscape", "-i", p("y.txt"), "--k", "4", "--points", p("pts.txt"), "--truth", p("a0.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "point,psi,grad_norm,lambda_min,lhs,rhs_R,rhs_Rhat,in_R,in_Rhat,classification");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_NE(line.find("not_stationary"), std::string::npos);
  }
  EXPECT_EQ(rows, 2);
  r = run({"landscape", "-i", p("y.txt"), "--k", "4", "--samples", "3", "--outdir", p("l")});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(slurp(dir / "l" / "landscape.csv").find("no_truth"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "l" / "landscape.meta"));
  ssbd::io::write_text(p("bad_pts.txt"), "1 0 0\n");
  EXPECT_EQ(run({"landscape", "-i", p("y.txt"), "--k", "4", "--points", p("bad_pts.txt")}).code, 1);
}

TEST_F(CliTest, GridAndInitrateWriteMeta) {
  Result r = run({"grid", "--k", "6", "--theta", "0.1", "--theta-rule", "values", "--m", "256", "--trials", "2", "--outdir", p("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "g" / "grid.csv"));
  EXPECT_TRUE(fs::exists(dir / "g" / "grid_summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "g" / "grid.meta"));
  r = run({"grid", "--config", (dir / "g" / "grid.meta").string(), "--outdir", p("g2")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "g" / "grid.csv"), slurp(dir / "g2" / "grid.csv"));
  r = run({"grid", "--m", "131072", "--trials", "50", "--outdir", p("g3")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("flops"), std::string::npos);
  r = run({"initrate", "--k", "6", "--m", "256", "--trials", "5", "--family", "bandpass", "--outdir", p("i")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "i" / "initrate.meta"));
  r = run({"initrate", "--config", (dir / "i" / "initrate.meta").string(), "--outdir", p("i2")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "i" / "initrate.csv"), slurp(dir / "i2" / "initrate.csv"));
}

TEST_F(CliTest, BinaryExitCodes) {
  const std::string bin = SSBD_CLI_PATH;
  auto code = [](const std::string& cmd) {
    const int s = std::system(cmd.c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(code(bin + " --help > /dev/null"), 0);
  EXPECT_EQ(code(bin + " gen --nope 2> /dev/null"), 1);
  EXPECT_EQ(code(bin + " gen --k 5 --m 100 --theta 0.2 -o " + p("y.txt")), 0);
  EXPECT_EQ(code(bin + " deconv -i " + p("y.txt") + " --k 5 --outdir " + p("o")), 0);
}
