#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qafel/experiment.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "qafel_cli_test";

const char* kSmall =
    " --set data.samples=400 data.features=20 data.groups=4 data.clients=10"
    " sim.pool_size=10 K=3 analysis.probes=1";

struct Outcome {
  int code;
  std::string out;
};

Outcome cli(const std::string& args) {
  fs::create_directories(kWork);
  const auto log = kWork / "stdout.txt";
  const std::string cmd = std::string(QAFEL_CLI_PATH) + " " + args + " > " + log.string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Cli, RunWritesOneRowPerStep) {
  const auto dir = kWork / "run";
  const auto r = cli("run --out-dir " + dir.string() + kSmall + " T=10 output.name=ten");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(dir / "ten.csv"), 11u);  // header + 10 rows
  EXPECT_TRUE(fs::exists(dir / "ten.json"));
  EXPECT_TRUE(fs::exists(dir / "ten.cfg"));
  // The emitted config reproduces the run byte for byte.
  const auto again =
      cli("run --config " + (dir / "ten.cfg").string() + " --set output.name=again");
  ASSERT_EQ(again.code, 0);
  std::ifstream a(dir / "ten.csv"), b(dir / "again.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Cli, SweepOverLocalSteps) {
  const auto dir = kWork / "sweep";
  const auto r = cli("sweep --axis P=1,4,16 --out-dir " + dir.string() + kSmall +
                     " T=8 output.name=psweep");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(dir / "psweep_sweep.csv"), 4u);
  EXPECT_TRUE(fs::exists(dir / "psweep_P-16_seed-1.csv"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("run --config /nonexistent/file.cfg").code, 2);
  EXPECT_EQ(cli("run --set data.source=libsvm data.path=nowhere data.fallback=false "
                "--dataset-dir " + kWork.string())
                .code,
            2);
  EXPECT_EQ(cli("run --set K=abc").code, 3);
  EXPECT_EQ(cli("run --set protocol.K=0").code, 3);
  EXPECT_EQ(cli("sweep --axis bogus=1,2").code, 4);
  EXPECT_EQ(cli("sweep --axis P=").code, 4);
  EXPECT_NE(cli("frobnicate").code, 0);
}

TEST(Cli, ConstantsAndSuggestPrintJson) {
  const auto c = cli(std::string("constants") + kSmall);
  ASSERT_EQ(c.code, 0);
  const auto jc = qafel::Json::parse(c.out);
  EXPECT_GT(jc["L"].get<double>(), 0.0);
  EXPECT_EQ(jc["dimension"], 20);
  const auto s = cli(std::string("suggest --tau 3") + kSmall + " T=1000");
  ASSERT_EQ(s.code, 0);
  const auto js = qafel::Json::parse(s.out);
  EXPECT_EQ(js["tau_max"], 3);
  EXPECT_GT(js["eta_l"].get<double>(), 0.0);
  EXPECT_TRUE(js["conditions"]["all_pass"].get<bool>());
}
