#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "qafel/config.hpp"

using namespace qafel;

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(serialize_config(parse_config(serialize_config(c))), serialize_config(c));
}

TEST(Config, RandomizedRoundTrip) {
  Rng rng(13);
  const char* modes[] = {"qafel", "naive_direct", "unquantized"};
  const char* quants[] = {"identity", "qsgd:3", "qsgd:8", "topk:0.01", "topk:0.37"};
  for (int i = 0; i < 200; ++i) {
    RunConfig c;
    c.objective.l2 = std::ldexp(rng.uniform(), -int(rng.index(20)));
    c.protocol.mode = parse_protocol_mode(modes[rng.index(3)]);
    c.protocol.server_quantizer = QuantizerSpec::parse(quants[rng.index(5)]);
    c.protocol.client_quantizer = QuantizerSpec::parse(quants[rng.index(5)]);
    c.protocol.K = 1 + int(rng.index(50));
    c.protocol.eta_g = rng.uniform(0.001, 3.0);
    c.protocol.eta_l = rng.uniform(0.001, 3.0);
    c.protocol.staleness_scaling = rng.index(2) == 1;
    c.delay.scale = rng.uniform(0.1, 5.0);
    c.arrival.arrival_rate = rng.uniform(1.0, 500.0);
    c.synth.concentration = rng.uniform(0.1, 50.0);
    c.T = 1 + std::int64_t(rng.index(100000));
    c.seed = rng.next_u64();
    c.output_name = "run_" + std::to_string(i);
    const auto back = parse_config(serialize_config(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.objective.l2, c.objective.l2);
    EXPECT_EQ(back.protocol.eta_g, c.protocol.eta_g);
    EXPECT_EQ(back.seed, c.seed);
  }
}

TEST(Config, SectionsCommentsAndFractions) {
  const auto c = parse_config(
      "# figure config\n"
      "[objective]\n"
      "kind = logistic_l2\n"
      "l2 = 1/8124   # lambda\n"
      "\n"
      "[protocol]\n"
      "mode = naive\n"
      "K = 10\n"
      "server_quantizer = topk:0.5\n"
      "[run]\n"
      "T = 600\n");
  EXPECT_EQ(c.objective.l2, 1.0 / 8124.0);
  EXPECT_EQ(c.protocol.mode, ProtocolMode::kNaiveDirect);
  EXPECT_EQ(c.protocol.server_quantizer, QuantizerSpec::topk(0.5));
  EXPECT_EQ(c.T, 600);
}

TEST(Config, DottedKeysOutsideSections) {
  const auto c = parse_config("protocol.P = 4\nrun.seed = 9\ndata.clients = 50\n");
  EXPECT_EQ(c.protocol.P, 4);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.partition.n_clients, 50u);
}

TEST(Config, ErrorsNameTheLine) {
  try {
    parse_config("protocol.K = 10\n\nprotocol.bogus = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("protocol.K = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("protocol.K 10\n"), ConfigError);
  EXPECT_THROW(parse_config("[protocol\n"), ConfigError);
  EXPECT_THROW(parse_config("data.fallback = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("protocol.server_quantizer = qsgd:1\n"), ConfigError);
}

TEST(Config, AliasesAndBitKeys) {
  RunConfig c;
  set_config_value(c, "P", "16");
  set_config_value(c, "server_bits", "4");
  set_config_value(c, "client_bits", "2");
  EXPECT_EQ(c.protocol.P, 16);
  EXPECT_EQ(c.protocol.server_quantizer, QuantizerSpec::qsgd(4));
  EXPECT_EQ(get_config_value(c, "client_bits"), "2");
  EXPECT_EQ(get_config_value(c, "T"), "500");
  EXPECT_TRUE(config_has_key("eta_l"));
  EXPECT_TRUE(config_has_key("data.concentration"));
  EXPECT_FALSE(config_has_key("protocol.Q"));
  EXPECT_THROW(set_config_value(c, "nope", "1"), ConfigError);
}

TEST(Config, ValidationReportsInfeasibleValues) {
  RunConfig c;
  c.protocol.K = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.T = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.partition.n_clients = 10000;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.partition.scheme = PartitionScheme::kDirichlet;
  c.partition.dirichlet_alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(RunConfig{}.validate());
}

TEST(Config, PoolSizeZeroMeansOnePerClient) {
  RunConfig c;
  c.arrival.pool_size = 0;
  c.partition.n_clients = 37;
  EXPECT_EQ(c.sim_config().arrival.pool_size, 37);
}

TEST(Config, LoadFromFile) {
  const auto p = std::filesystem::temp_directory_path() / "qafel_config_test.cfg";
  {
    std::ofstream out(p);
    out << "T = 12\n";
  }
  EXPECT_EQ(load_config(p.string()).T, 12);
  std::filesystem::remove(p);
  EXPECT_THROW(load_config(p.string()), ConfigFileMissing);
}
