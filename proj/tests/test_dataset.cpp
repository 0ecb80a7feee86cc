#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "qafel/dataset.hpp"

using namespace qafel;

namespace {

Dataset parse(const std::string& text, std::size_t d = 0) {
  std::istringstream in(text);
  return parse_libsvm(in, d);
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const DatasetError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Libsvm, ParsesRowsLabelsAndComments) {
  const auto ds = parse(
      "# header\n"
      "1 1:1 3:0.5\n"
      "\n"
      "2 2:1   # mushrooms uses 1/2\n"
      "-1 1:2 2:-1 3:4\n"
      "0 3:1\n");
  ASSERT_EQ(ds.rows(), 4u);
  EXPECT_EQ(ds.n_features, 3u);
  EXPECT_EQ(ds.nnz(), 7u);
  EXPECT_EQ(ds.labels, (std::vector<double>{1, -1, -1, -1}));
  EXPECT_EQ(std::vector<std::uint32_t>(ds.row_cols(0).begin(), ds.row_cols(0).end()),
            (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(ds.row_vals(2)[2], 4.0);
  const std::vector<double> x = {1.0, 2.0, 3.0};
  EXPECT_EQ(ds.row_dot(2, std::span<const double>(x)), 2.0 - 2.0 + 12.0);
}

TEST(Libsvm, DeclaredDimension) {
  EXPECT_EQ(parse("1 1:1\n", 112).n_features, 112u);
  EXPECT_THROW(parse("1 5:1\n", 4), DatasetError);
}

TEST(Libsvm, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("1 1:1\n3 1:1\n"), 2u);
  EXPECT_EQ(error_line("1 1:1\n1 0:1\n"), 2u);
  EXPECT_EQ(error_line("1 2:1 1:1\n"), 1u);
  EXPECT_EQ(error_line("1 1:1\n\n1 1:x\n"), 3u);
  EXPECT_EQ(error_line("1 1\n"), 1u);
  EXPECT_EQ(error_line("1\n"), 1u);
  EXPECT_EQ(error_line("one 1:1\n"), 1u);
  EXPECT_EQ(error_line("1 1:inf\n"), 1u);
}

TEST(Libsvm, MissingFileNamesPath) {
  try {
    load_libsvm("/nonexistent/mushrooms");
    FAIL();
  } catch (const DatasetMissing& e) {
    EXPECT_EQ(e.path(), "/nonexistent/mushrooms");
  }
}

TEST(Libsvm, LoadsFromDisk) {
  const auto p = std::filesystem::temp_directory_path() / "qafel_libsvm_test.txt";
  {
    std::ofstream out(p);
    out << "1 1:1 2:1\n2 2:1\n";
  }
  const auto ds = load_libsvm(p.string());
  EXPECT_EQ(ds.rows(), 2u);
  EXPECT_EQ(ds.fingerprint(), parse("1 1:1 2:1\n2 2:1\n").fingerprint());
  EXPECT_NE(ds.fingerprint(), parse("1 1:1 2:1\n1 2:1\n").fingerprint());
  std::filesystem::remove(p);
}

TEST(Partition, UniformSizes) {
  EXPECT_EQ(uniform_sizes(10, 3), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_THROW(uniform_sizes(2, 3), ConfigError);
}

TEST(Partition, DirichletSizesSumAndFloor) {
  Rng rng(3, StreamTag::kPartition);
  for (double alpha : {0.1, 1.0, 100.0}) {
    const auto s = dirichlet_sizes(1000, 50, alpha, rng);
    EXPECT_EQ(std::accumulate(s.begin(), s.end(), std::size_t{0}), 1000u);
    for (auto v : s) EXPECT_GE(v, 1u);
  }
  EXPECT_THROW(dirichlet_sizes(10, 5, 0.0, rng), ConfigError);
}

TEST(Partition, IsAPartitionWithWeights) {
  Rng rng(5);
  for (auto scheme : {PartitionScheme::kUniform, PartitionScheme::kDirichlet}) {
    PartitionParams pp;
    pp.scheme = scheme;
    pp.n_clients = 37;
    const auto shards = make_partition(1001, pp, rng);
    std::set<std::uint32_t> seen;
    double w = 0.0;
    for (const auto& s : shards) {
      EXPECT_FALSE(s.rows.empty());
      EXPECT_TRUE(std::is_sorted(s.rows.begin(), s.rows.end()));
      for (auto r : s.rows) EXPECT_TRUE(seen.insert(r).second);
      EXPECT_DOUBLE_EQ(s.weight, double(s.rows.size()) / 1001.0);
      w += s.weight;
    }
    EXPECT_EQ(seen.size(), 1001u);
    EXPECT_NEAR(w, 1.0, 1e-12);
  }
}

TEST(Partition, UniformWeights) {
  Partition p(4);
  p[0].rows = {0, 1, 2};
  p[1].rows = {3};
  p[2].rows = {4};
  p[3].rows = {5};
  assign_weights(p, WeightScheme::kUniform);
  for (const auto& s : p) EXPECT_EQ(s.weight, 0.25);
}

TEST(Synthetic, LogisticIsOneHotPerGroup) {
  SynthParams sp;
  sp.samples = 500;
  PartitionParams pp;
  pp.n_clients = 10;
  const auto r = synthesize(sp, pp, 9);
  EXPECT_EQ(r.data.rows(), 500u);
  EXPECT_EQ(r.data.n_features, 112u);
  for (std::size_t i = 0; i < r.data.rows(); ++i) {
    EXPECT_EQ(r.data.row_cols(i).size(), sp.groups);
    for (double v : r.data.row_vals(i)) EXPECT_EQ(v, 1.0);
    EXPECT_TRUE(r.data.labels[i] == 1.0 || r.data.labels[i] == -1.0);
  }
  EXPECT_EQ(r.shards.size(), 10u);
}

TEST(Synthetic, DeterministicInSeed) {
  SynthParams sp;
  sp.samples = 300;
  PartitionParams pp;
  pp.n_clients = 10;
  EXPECT_EQ(synthesize(sp, pp, 4).data.fingerprint(),
            synthesize(sp, pp, 4).data.fingerprint());
  EXPECT_NE(synthesize(sp, pp, 4).data.fingerprint(),
            synthesize(sp, pp, 5).data.fingerprint());
  // Changing the partition does not change the logistic rows.
  PartitionParams other = pp;
  other.scheme = PartitionScheme::kDirichlet;
  EXPECT_EQ(synthesize(sp, pp, 4).data.fingerprint(),
            synthesize(sp, other, 4).data.fingerprint());
}

TEST(Synthetic, QuadraticRowsAreDense) {
  SynthParams sp;
  sp.kind = SynthKind::kQuadratic;
  sp.samples = 200;
  sp.features = 6;
  PartitionParams pp;
  pp.n_clients = 5;
  const auto r = synthesize(sp, pp, 2);
  EXPECT_EQ(r.data.n_features, 6u);
  EXPECT_EQ(r.data.nnz(), 1200u);
}
