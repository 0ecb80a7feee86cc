#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "qafel/quantizers.hpp"

using namespace qafel;

namespace {

ModelVector gaussian(std::size_t d, Rng& rng) {
  ModelVector x(d);
  for (auto& v : x) v = static_cast<Scalar>(rng.normal());
  return x;
}

bool bit_equal(const ModelVector& a, const ModelVector& b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](Scalar x, Scalar y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

}  // namespace

TEST(QuantizerSpec, ParseAndPrint) {
  EXPECT_EQ(QuantizerSpec::parse("identity"), QuantizerSpec::identity());
  EXPECT_EQ(QuantizerSpec::parse("none"), QuantizerSpec::identity());
  EXPECT_EQ(QuantizerSpec::parse("qsgd:4"), QuantizerSpec::qsgd(4));
  EXPECT_EQ(QuantizerSpec::parse("topk:0.01"), QuantizerSpec::topk(0.01));
  for (const char* s : {"identity", "qsgd:2", "qsgd:8", "topk:0.5", "topk:1"})
    EXPECT_EQ(QuantizerSpec::parse(s).to_string(), s);
  for (const char* s : {"qsgd:1", "qsgd:17", "qsgd:", "qsgd:3x", "topk:0", "topk:1.5",
                        "topk:", "identity:3", "rand", ""})
    EXPECT_THROW(QuantizerSpec::parse(s), ConfigError) << s;
}

TEST(QuantizerSpec, KeepCount) {
  EXPECT_EQ(QuantizerSpec::topk(0.5).keep_count(112), 56u);
  EXPECT_EQ(QuantizerSpec::topk(0.01).keep_count(112), 2u);
  EXPECT_EQ(QuantizerSpec::topk(0.01).keep_count(16), 1u);
  EXPECT_EQ(QuantizerSpec::topk(0.01).keep_count(1024), 11u);
  EXPECT_EQ(QuantizerSpec::topk(0.01).keep_count(100), 1u);
  EXPECT_EQ(QuantizerSpec::topk(1.0).keep_count(29282), 29282u);
  EXPECT_EQ(QuantizerSpec::qsgd(3).levels(), 3);
  EXPECT_EQ(QuantizerSpec::qsgd(8).levels(), 127);
}

// Byte-level oracles computed independently by packing the documented fields.
TEST(Wire, TopkPayloadBytes) {
  const ModelVector x = {0.0f, -2.0f, 1.0f, 0.5f};
  Rng rng(1);
  const auto m = encode(QuantizerSpec::topk(0.5), x, rng);
  EXPECT_EQ(m.encoded_size_bits, 68u);
  EXPECT_EQ(m.parameter, 2u);
  EXPECT_EQ(m.payload, (std::vector<std::uint8_t>{1, 0, 0, 0, 11, 0, 0, 248, 3}));
  EXPECT_TRUE(bit_equal(decode(m), {0.0f, -2.0f, 1.0f, 0.0f}));
}

TEST(Wire, QsgdPayloadBytesAtFullScale) {
  // Every |x_i| is 0 or the scale, so rounding is deterministic.
  const ModelVector x = {1.0f, -1.0f, 0.0f, 1.0f};
  Rng rng(1);
  const auto m = encode(QuantizerSpec::qsgd(3), x, rng);
  EXPECT_EQ(m.encoded_size_bits, 44u);
  EXPECT_EQ(m.payload, (std::vector<std::uint8_t>{0, 0, 128, 63, 198, 12}));
  EXPECT_TRUE(bit_equal(decode(m), x));
}

TEST(Wire, IdentityPayloadBytes) {
  const ModelVector x = {1.5f, -0.25f};
  Rng rng(1);
  const auto m = encode(QuantizerSpec::identity(), x, rng);
  EXPECT_EQ(m.payload, (std::vector<std::uint8_t>{0, 0, 192, 63, 0, 0, 128, 190}));
}

TEST(Wire, SerializeRoundTripAndCorruption) {
  Rng rng(4);
  for (const auto& spec : {QuantizerSpec::identity(), QuantizerSpec::qsgd(5),
                           QuantizerSpec::topk(0.3)}) {
    const auto x = gaussian(37, rng);
    const auto m = encode(spec, x, rng);
    const auto wire = serialize(m);
    EXPECT_EQ(wire.size(), 17u + m.payload.size());
    EXPECT_EQ(deserialize(wire), m);
    auto truncated = wire;
    truncated.pop_back();
    EXPECT_THROW(deserialize(truncated), Error);
    auto bad_kind = wire;
    bad_kind[0] = 9;
    EXPECT_THROW(deserialize(bad_kind), Error);
  }
  EXPECT_THROW(deserialize({1, 2, 3}), Error);
}

TEST(Wire, TopkIndexOutOfRangeRejected) {
  QuantizedMessage m;
  m.kind = QuantizerKind::kTopk;
  m.dimension = 5;  // index field is 3 bits, so index 7 is representable
  m.parameter = 1;
  BitWriter w;
  w.write(7, 3);
  w.write_f32(1.0f);
  m.encoded_size_bits = w.bit_count();
  m.payload = std::move(w).take();
  EXPECT_THROW(decode(m), Error);
}

class SizeCase
    : public ::testing::TestWithParam<std::tuple<std::string, std::size_t>> {};

TEST_P(SizeCase, EncodedSizeMatchesClosedForm) {
  const auto spec = QuantizerSpec::parse(std::get<0>(GetParam()));
  const std::size_t d = std::get<1>(GetParam());
  Rng rng(d);
  const auto m = encode(spec, gaussian(d, rng), rng);
  std::uint64_t expected = 0;
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      expected = 32 * d;
      break;
    case QuantizerKind::kQsgd:
      expected = 32 + d * spec.bits_per_coord;
      break;
    case QuantizerKind::kTopk:
      expected = spec.keep_count(d) * (32 + static_cast<std::uint64_t>(
                                               std::ceil(std::log2(double(d)))));
      break;
  }
  EXPECT_EQ(m.encoded_size_bits, expected);
  EXPECT_EQ(encoded_size_bits(spec, d), expected);
  EXPECT_EQ(m.payload.size(), (expected + 7) / 8);
}

INSTANTIATE_TEST_SUITE_P(
    All, SizeCase,
    ::testing::Combine(::testing::Values("identity", "qsgd:2", "qsgd:3", "qsgd:4",
                                         "qsgd:8", "topk:0.01", "topk:0.5", "topk:1"),
                       ::testing::Values(std::size_t{16}, std::size_t{112},
                                         std::size_t{1024}, std::size_t{29282})));

TEST(Sizes, PinnedValues) {
  EXPECT_EQ(encoded_size_bits(QuantizerSpec::qsgd(3), 112), 368u);
  EXPECT_EQ(encoded_size_bits(QuantizerSpec::topk(0.01), 112), 78u);
  EXPECT_EQ(encoded_size_bits(QuantizerSpec::identity(), 29282), 937024u);
  EXPECT_EQ(encoded_size_bits(QuantizerSpec::qsgd(4), 29282), 117160u);
}

TEST(Qsgd, LevelsStayOnGridAndSignsMatch) {
  Rng rng(8);
  for (int b : {2, 3, 4, 8}) {
    const auto spec = QuantizerSpec::qsgd(b);
    const int s = spec.levels();
    for (int t = 0; t < 50; ++t) {
      const auto x = gaussian(64, rng);
      const auto q = quantize(spec, x, rng);
      BitReader rd(q.message.payload, q.message.encoded_size_bits);
      const float scale = rd.read_f32();
      double m = 0;
      for (auto v : x) m = std::max(m, std::abs(double(v)));
      EXPECT_GE(double(scale), m);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto level = static_cast<int>(rd.read(b)) - s;
        EXPECT_LE(std::abs(level), s);
        if (level != 0) {
          EXPECT_EQ(level > 0, x[i] > 0);
        }
        // Rounds to one of the two neighbouring levels.
        const double r = s * std::abs(double(x[i])) / double(scale);
        EXPECT_LE(std::abs(std::abs(level) - r), 1.0 + 1e-9);
      }
    }
  }
}

TEST(Qsgd, ZeroVectorEncodesZeros) {
  Rng rng(1);
  const ModelVector z(10, 0.0f);
  EXPECT_TRUE(bit_equal(quantize(QuantizerSpec::qsgd(4), z, rng).decoded, z));
}

TEST(Qsgd, EncodeIsDeterministicGivenStream) {
  const ModelVector x = {0.3f, -0.7f, 0.1f, 0.9f, -0.2f};
  Rng a(5, StreamTag::kClientQuantizer, 2, 3), b(5, StreamTag::kClientQuantizer, 2, 3);
  EXPECT_EQ(encode(QuantizerSpec::qsgd(3), x, a), encode(QuantizerSpec::qsgd(3), x, b));
}

TEST(Topk, KeepsLargestMagnitudesWithLowIndexTies) {
  const ModelVector x = {1.0f, -3.0f, 3.0f, 2.0f, -1.0f};
  Rng rng(1);
  const auto q = quantize(QuantizerSpec::topk(0.4), x, rng).decoded;
  EXPECT_TRUE(bit_equal(q, {0.0f, -3.0f, 3.0f, 0.0f, 0.0f}));
  const ModelVector ties = {1.0f, 1.0f, 1.0f, 1.0f};
  const auto t = quantize(QuantizerSpec::topk(0.5), ties, rng).decoded;
  EXPECT_TRUE(bit_equal(t, {1.0f, 1.0f, 0.0f, 0.0f}));
}

TEST(Topk, DeterministicContractionEverySample) {
  Rng rng(12);
  for (double f : {0.01, 0.1, 0.5, 1.0}) {
    const auto spec = QuantizerSpec::topk(f);
    for (int t = 0; t < 200; ++t) {
      const auto x = gaussian(112, rng);
      const auto q = quantize(spec, x, rng).decoded;
      const double ratio = distance_sq(x, q) / norm_sq(x);
      EXPECT_LE(ratio, 1.0 - double(spec.keep_count(112)) / 112 + 1e-12);
    }
  }
}

TEST(Identity, LosslessAndRatioZero) {
  Rng rng(3);
  const auto x = gaussian(100, rng);
  EXPECT_TRUE(bit_equal(quantize(QuantizerSpec::identity(), x, rng).decoded, x));
  const auto rep = verify_contraction(QuantizerSpec::identity(), 1000, 16, rng, 100);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.max_ratio, 0.0);
  EXPECT_EQ(rep.delta, 1.0);
}

TEST(Encode, RejectsNonFinite) {
  Rng rng(1);
  const ModelVector x = {1.0f, std::numeric_limits<float>::infinity()};
  EXPECT_THROW(encode(QuantizerSpec::qsgd(4), x, rng), Error);
}

TEST(Delta, ClosedFormsAndCertification) {
  EXPECT_EQ(effective_delta(QuantizerSpec::identity()).value, 1.0);
  EXPECT_EQ(effective_delta(QuantizerSpec::topk(0.01)).value, 0.01);
  EXPECT_THROW(effective_delta(QuantizerSpec::qsgd(4)), Error);  // needs d
  const double d8 = effective_delta(QuantizerSpec::qsgd(8), 112).value;
  const double d4 = effective_delta(QuantizerSpec::qsgd(4), 112).value;
  EXPECT_GT(d8, d4);
  EXPECT_GT(d8, 0.99);
  EXPECT_LT(d8, 1.0);
  EXPECT_THROW(DeltaParam(0.0), Error);
  EXPECT_THROW(DeltaParam(1.5), Error);
}

TEST(Delta, TwoBitQsgdDoesNotContractInHighDimension) {
  // One level per sign: for Gaussian inputs E||x - Q(x)||^2 / ||x||^2 is about
  // max|x| * ||x||_1 / ||x||^2 - 1, which exceeds 1 once d is moderately large.
  EXPECT_FALSE(try_effective_delta(QuantizerSpec::qsgd(2), 1024).has_value());
  EXPECT_FALSE(try_effective_delta(QuantizerSpec::qsgd(2), 112).has_value());
  EXPECT_TRUE(try_effective_delta(QuantizerSpec::qsgd(2), 16).has_value());
}

TEST(Unbiasedness, QsgdMeanMatchesInput) {
  Rng rng(21);
  const auto x = gaussian(16, rng);
  const auto rep = check_unbiasedness(QuantizerSpec::qsgd(3), x, 20000, rng);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_abs_z, 4.5);
}

TEST(Unbiasedness, TopkIsBiasedAndDetected) {
  Rng rng(22);
  const auto x = gaussian(16, rng);
  EXPECT_FALSE(check_unbiasedness(QuantizerSpec::topk(0.25), x, 200, rng).passed);
}

TEST(Contraction, Qsgd4SumBound) {
  Rng rng(31);
  const auto rep = verify_contraction(QuantizerSpec::qsgd(4), 2000, 112, rng, 500);
  EXPECT_TRUE(rep.contraction_ok);
  EXPECT_TRUE(rep.sum_bound_checked);
  EXPECT_TRUE(rep.sum_bound_ok);
  EXPECT_THROW(verify_contraction(QuantizerSpec::qsgd(4), 10, 112, rng), Error);
}
