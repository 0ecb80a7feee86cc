#pragma once

// Quantizers Q : R^d -> R^d satisfying E||x - Q(x)||^2 <= (1 - delta)||x||^2.
//
// Three kinds are supported:
//   identity  lossless; d float32 values.
//   qsgd      unbiased stochastic rounding to 2s+1 signed levels, with
//             s = 2^(b-1) - 1. One float32 scale (the max-norm, rounded up)
//             then d levels of b bits each, stored offset-binary (level + s).
//   topk      keeps the k = ceil(keep_fraction * d) largest magnitudes,
//             ties to the lower index. k entries of (index, float32 value)
//             in ascending index order, indices on ceil(log2 d) bits.
//
// encoded_size_bits counts payload bits only:
//   identity 32*d, qsgd 32 + d*b, topk k*(ceil(log2 d) + 32).
//
// Randomness is consumed at encode time only; decode is a pure function of
// the message, and quantize() returns the decode of its own message so the
// sender and receiver reconstructions are bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qafel/bits.hpp"
#include "qafel/core.hpp"
#include "qafel/format.hpp"
#include "qafel/random.hpp"

namespace qafel {

enum class QuantizerKind : std::uint8_t { kIdentity = 0, kQsgd = 1, kTopk = 2 };

struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::kIdentity;
  int bits_per_coord = 0;     // qsgd only
  double keep_fraction = 1.0; // topk only

  static QuantizerSpec identity() { return {}; }
  static QuantizerSpec qsgd(int bits) {
    return {QuantizerKind::kQsgd, bits, 1.0};
  }
  static QuantizerSpec topk(double fraction) {
    return {QuantizerKind::kTopk, 0, fraction};
  }

  bool unbiased() const { return kind != QuantizerKind::kTopk; }

  void validate() const {
    switch (kind) {
      case QuantizerKind::kIdentity:
        return;
      case QuantizerKind::kQsgd:
        if (bits_per_coord < 2 || bits_per_coord > 16)
          throw ConfigError("qsgd bits_per_coord must be in [2, 16], got " +
                            std::to_string(bits_per_coord));
        return;
      case QuantizerKind::kTopk:
        if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
          throw ConfigError("topk keep_fraction must be in (0, 1]");
        return;
    }
    throw ConfigError("unknown quantizer kind");
  }

  // k for a d-dimensional input. The product is snapped to the nearest
  // integer first so that e.g. 0.5 * 112 cannot round up to 57.
  std::size_t keep_count(std::size_t d) const {
    const double raw = keep_fraction * static_cast<double>(d);
    const double snapped = std::round(raw);
    const double k = std::abs(raw - snapped) < 1e-9 * std::max(1.0, raw)
                         ? snapped
                         : std::ceil(raw);
    return static_cast<std::size_t>(k);
  }

  int levels() const { return (1 << (bits_per_coord - 1)) - 1; }

  std::string to_string() const;
  static QuantizerSpec parse(const std::string& text);

  friend bool operator==(const QuantizerSpec&, const QuantizerSpec&) = default;
};

inline std::string QuantizerSpec::to_string() const {
  switch (kind) {
    case QuantizerKind::kIdentity:
      return "identity";
    case QuantizerKind::kQsgd:
      return "qsgd:" + std::to_string(bits_per_coord);
    case QuantizerKind::kTopk:
      return "topk:" + format_double(keep_fraction);
  }
  return "?";
}

inline QuantizerSpec QuantizerSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  QuantizerSpec spec;
  try {
    if (head == "identity" || head == "none") {
      if (!arg.empty()) throw ConfigError("identity takes no argument");
      spec = identity();
    } else if (head == "qsgd") {
      std::size_t used = 0;
      const int bits = std::stoi(arg, &used);
      if (used != arg.size()) throw ConfigError("bad qsgd bits");
      spec = qsgd(bits);
    } else if (head == "topk") {
      std::size_t used = 0;
      const double f = std::stod(arg, &used);
      if (used != arg.size()) throw ConfigError("bad topk fraction");
      spec = topk(f);
    } else {
      throw ConfigError("unknown quantizer '" + text + "'");
    }
  } catch (const std::logic_error&) {
    throw ConfigError("malformed quantizer '" + text + "'");
  }
  spec.validate();
  return spec;
}

inline std::uint64_t encoded_size_bits(const QuantizerSpec& spec,
                                       std::size_t d) {
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return 32ull * d;
    case QuantizerKind::kQsgd:
      return 32ull + static_cast<std::uint64_t>(d) * spec.bits_per_coord;
    case QuantizerKind::kTopk:
      return static_cast<std::uint64_t>(spec.keep_count(d)) *
             (index_bits(d) + 32ull);
  }
  return 0;
}

struct QuantizedMessage {
  QuantizerKind kind = QuantizerKind::kIdentity;
  std::uint32_t dimension = 0;
  // bits_per_coord for qsgd, k for topk, 0 for identity.
  std::uint32_t parameter = 0;
  std::vector<std::uint8_t> payload;
  std::uint64_t encoded_size_bits = 0;

  std::uint64_t encoded_size_bytes() const { return (encoded_size_bits + 7) / 8; }

  friend bool operator==(const QuantizedMessage&,
                         const QuantizedMessage&) = default;
};

struct Quantized {
  QuantizedMessage message;
  ModelVector decoded;
};

namespace detail {

inline float max_abs_rounded_up(std::span<const Scalar> x) {
  double m = 0.0;
  for (Scalar v : x) m = std::max(m, std::abs(static_cast<double>(v)));
  float mf = static_cast<float>(m);
  if (static_cast<double>(mf) < m)
    mf = std::nextafter(mf, std::numeric_limits<float>::infinity());
  return mf;
}

inline std::vector<std::size_t> topk_indices(std::span<const Scalar> x,
                                             std::size_t k) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const float ma = std::abs(x[a]), mb = std::abs(x[b]);
    return ma != mb ? ma > mb : a < b;
  };
  if (k < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                     idx.end(), before);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline ModelVector decode(const QuantizedMessage& msg) {
  const std::size_t d = msg.dimension;
  ModelVector out(d, 0.0f);
  BitReader in(msg.payload, msg.encoded_size_bits);
  switch (msg.kind) {
    case QuantizerKind::kIdentity:
      for (std::size_t i = 0; i < d; ++i) out[i] = in.read_f32();
      break;
    case QuantizerKind::kQsgd: {
      const unsigned bits = msg.parameter;
      const int s = (1 << (bits - 1)) - 1;
      const float scale = in.read_f32();
      const float step = scale / static_cast<float>(s);
      for (std::size_t i = 0; i < d; ++i) {
        const int level = static_cast<int>(in.read(bits)) - s;
        out[i] = static_cast<float>(level) * step;
      }
      break;
    }
    case QuantizerKind::kTopk: {
      const unsigned ib = index_bits(d);
      for (std::uint32_t j = 0; j < msg.parameter; ++j) {
        const std::size_t i = in.read(ib);
        if (i >= d) throw Error("topk index out of range");
        out[i] = in.read_f32();
      }
      break;
    }
  }
  if (in.position() != msg.encoded_size_bits)
    throw Error("message has trailing bits");
  return out;
}

inline QuantizedMessage encode(const QuantizerSpec& spec,
                               std::span<const Scalar> x, Rng& rng) {
  if (!all_finite(x)) throw Error("quantize: non-finite input");
  const std::size_t d = x.size();
  QuantizedMessage msg;
  msg.kind = spec.kind;
  msg.dimension = static_cast<std::uint32_t>(d);
  BitWriter out;
  out.reserve_bits(encoded_size_bits(spec, d));
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      for (Scalar v : x) out.write_f32(v);
      break;
    case QuantizerKind::kQsgd: {
      const int s = spec.levels();
      const unsigned bits = static_cast<unsigned>(spec.bits_per_coord);
      msg.parameter = bits;
      const float scale = detail::max_abs_rounded_up(x);
      out.write_f32(scale);
      for (Scalar v : x) {
        int level = 0;
        if (scale > 0.0f && v != 0.0f) {
          const double r = s * std::abs(static_cast<double>(v)) /
                           static_cast<double>(scale);
          level = static_cast<int>(r);  // r >= 0, so this is floor
          if (rng.uniform() < r - level) ++level;
          level = std::min(level, s);
          if (v < 0.0f) level = -level;
        }
        out.write(static_cast<std::uint64_t>(level + s), bits);
      }
      break;
    }
    case QuantizerKind::kTopk: {
      const std::size_t k = spec.keep_count(d);
      if (k > d) throw Error("topk: k exceeds dimension");
      if (k == 0) throw Error("topk: k must be at least 1");
      msg.parameter = static_cast<std::uint32_t>(k);
      const unsigned ib = index_bits(d);
      for (std::size_t i : detail::topk_indices(x, k)) {
        out.write(i, ib);
        out.write_f32(x[i]);
      }
      break;
    }
  }
  msg.encoded_size_bits = out.bit_count();
  msg.payload = std::move(out).take();
  return msg;
}

inline Quantized quantize(const QuantizerSpec& spec, std::span<const Scalar> x,
                          Rng& rng) {
  Quantized q;
  q.message = encode(spec, x, rng);
  q.decoded = decode(q.message);
  return q;
}

// Wire form: [kind:u8][dimension:u32][parameter:u32][payload bits:u64]
// followed by the payload bytes. All integers little-endian.
inline std::vector<std::uint8_t> serialize(const QuantizedMessage& msg) {
  BitWriter w;
  w.write(static_cast<std::uint8_t>(msg.kind), 8);
  w.write(msg.dimension, 32);
  w.write(msg.parameter, 32);
  w.write(msg.encoded_size_bits, 64);
  std::vector<std::uint8_t> out = std::move(w).take();
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

inline QuantizedMessage deserialize(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeaderBytes = 17;
  if (bytes.size() < kHeaderBytes) throw Error("message header truncated");
  BitReader r(bytes, kHeaderBytes * 8);
  QuantizedMessage msg;
  const auto kind = r.read(8);
  if (kind > 2) throw Error("unknown quantizer kind in message");
  msg.kind = static_cast<QuantizerKind>(kind);
  msg.dimension = static_cast<std::uint32_t>(r.read(32));
  msg.parameter = static_cast<std::uint32_t>(r.read(32));
  msg.encoded_size_bits = r.read(64);
  msg.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  if (msg.payload.size() != (msg.encoded_size_bits + 7) / 8)
    throw Error("payload length does not match header");
  return msg;
}

// ---------------------------------------------------------------------------
// Contraction checks and delta certification.

struct DeltaParam {
  double value = 1.0;

  explicit DeltaParam(double v = 1.0) : value(v) {
    if (!(v > 0.0 && v <= 1.0))
      throw Error("delta must lie in (0, 1], got " + std::to_string(v));
  }
};

struct FamilyStats {
  std::string family;
  std::size_t trials = 0;
  double mean_ratio = 0.0;
  double std_error = 0.0;
  double max_ratio = 0.0;
};

namespace detail {

inline void normalize(ModelVector& x) {
  const double n = std::sqrt(norm_sq(x));
  if (n > 0)
    for (auto& v : x) v = static_cast<Scalar>(v / n);
}

// Test vectors: standard normal directions plus the adversarial shapes.
inline ModelVector test_vector(const std::string& family, std::size_t d,
                               Rng& rng) {
  ModelVector x(d, 0.0f);
  if (family == "gaussian") {
    for (auto& v : x) v = static_cast<Scalar>(rng.normal());
  } else if (family == "one_hot") {
    x[rng.index(d)] = 1.0f;
  } else if (family == "constant") {
    std::fill(x.begin(), x.end(), 1.0f);
  } else {  // geometric
    double v = 1.0;
    for (auto& e : x) {
      e = static_cast<Scalar>(v);
      v *= 0.8;
    }
  }
  normalize(x);
  return x;
}

inline const std::vector<std::string>& families() {
  static const std::vector<std::string> f = {"gaussian", "one_hot", "constant",
                                             "geometric"};
  return f;
}

inline FamilyStats measure_family(const QuantizerSpec& spec,
                                  const std::string& family, std::size_t d,
                                  std::size_t trials, Rng& rng,
                                  double* worst_sample = nullptr) {
  FamilyStats st;
  st.family = family;
  st.trials = trials;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const ModelVector x = test_vector(family, d, rng);
    const ModelVector q = quantize(spec, x, rng).decoded;
    const double ratio = distance_sq(x, q) / norm_sq(x);
    sum += ratio;
    sum_sq += ratio * ratio;
    st.max_ratio = std::max(st.max_ratio, ratio);
  }
  const double n = static_cast<double>(trials);
  st.mean_ratio = sum / n;
  const double var = std::max(0.0, sum_sq / n - st.mean_ratio * st.mean_ratio);
  st.std_error = trials > 1 ? std::sqrt(var * n / (n - 1) / n) : 0.0;
  if (worst_sample) *worst_sample = std::max(*worst_sample, st.max_ratio);
  return st;
}

}  // namespace detail

struct DeltaCertificate {
  double delta = 0.0;     // may be <= 0 when no contraction holds
  bool valid = false;
  double worst_mean_ratio = 0.0;
  double worst_std_error = 0.0;
};

// Conservative empirical delta for an unbiased stochastic quantizer:
// min over test families of (1 - mean ratio - 3 standard errors).
inline DeltaCertificate certify_delta(const QuantizerSpec& spec, std::size_t d,
                                      std::size_t trials = 10000) {
  Rng rng(0x51A7E5EEDull, StreamTag::kCertification,
          static_cast<std::uint64_t>(spec.bits_per_coord), d);
  DeltaCertificate cert;
  cert.delta = 1.0;
  for (const auto& fam : detail::families()) {
    const FamilyStats st = detail::measure_family(spec, fam, d, trials, rng);
    const double lower = 1.0 - st.mean_ratio - 3.0 * st.std_error;
    if (lower < cert.delta) {
      cert.delta = lower;
      cert.worst_mean_ratio = st.mean_ratio;
      cert.worst_std_error = st.std_error;
    }
  }
  cert.delta = std::min(cert.delta, 1.0);
  cert.valid = cert.delta > 0.0;
  return cert;
}

inline DeltaCertificate cached_certificate(const QuantizerSpec& spec,
                                           std::size_t d) {
  static std::mutex mu;
  static std::map<std::pair<int, std::size_t>, DeltaCertificate> cache;
  const auto key = std::make_pair(spec.bits_per_coord, d);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const DeltaCertificate cert = certify_delta(spec, d);
  std::lock_guard lock(mu);
  cache.emplace(key, cert);
  return cert;
}

// Delta used by the convergence analysis. For qsgd it depends on d and is
// certified empirically; throws when the scheme does not contract at all.
inline DeltaParam effective_delta(const QuantizerSpec& spec, std::size_t d = 0) {
  spec.validate();
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return DeltaParam(1.0);
    case QuantizerKind::kTopk:
      return DeltaParam(spec.keep_fraction);
    case QuantizerKind::kQsgd: {
      if (d == 0) throw Error("qsgd delta needs the vector dimension");
      const DeltaCertificate cert = cached_certificate(spec, d);
      if (!cert.valid)
        throw Error(spec.to_string() + " at d=" + std::to_string(d) +
                    " does not contract (mean ratio " +
                    std::to_string(cert.worst_mean_ratio) + ")");
      return DeltaParam(cert.delta);
    }
  }
  throw Error("unknown quantizer kind");
}

inline std::optional<double> try_effective_delta(const QuantizerSpec& spec,
                                                 std::size_t d) {
  try {
    return effective_delta(spec, d).value;
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct ContractionReport {
  QuantizerSpec spec;
  std::size_t dimension = 0;
  bool delta_valid = false;
  double delta = 0.0;
  std::vector<FamilyStats> families;
  double max_ratio = 0.0;  // max over families of the mean ratio
  bool contraction_ok = false;
  // Sum bound for unbiased quantizers over random N-tuples:
  // E||sum Q(x_n)||^2 <= ||sum x_n||^2 + (1 - delta) sum ||x_n||^2.
  bool sum_bound_checked = false;
  double sum_bound_mean_excess = 0.0;  // normalized by the right-hand side
  double sum_bound_std_error = 0.0;
  bool sum_bound_ok = true;
  bool passed = false;
};

// Estimates E||x - Q(x)||^2 / ||x||^2 on each test family and checks it
// against 1 - delta. For deterministic quantizers every single sample must
// satisfy the bound; for stochastic ones the family mean must, within four
// standard errors. delta comes from effective_delta (certified with an
// independent stream for qsgd).
inline ContractionReport verify_contraction(const QuantizerSpec& spec,
                                            std::size_t trials, std::size_t d,
                                            Rng& rng, std::size_t tuples = 1000,
                                            std::size_t tuple_size = 5) {
  if (trials < 1000) throw Error("verify_contraction needs >= 1000 trials");
  spec.validate();
  ContractionReport rep;
  rep.spec = spec;
  rep.dimension = d;
  if (auto delta = try_effective_delta(spec, d)) {
    rep.delta_valid = true;
    rep.delta = *delta;
  } else {
    rep.delta = cached_certificate(spec, d).delta;
  }
  const double bound = 1.0 - rep.delta;
  const bool deterministic = spec.kind != QuantizerKind::kQsgd;
  // For topk the realized k/d can only exceed keep_fraction.
  const double sample_bound =
      spec.kind == QuantizerKind::kTopk
          ? 1.0 - static_cast<double>(spec.keep_count(d)) / static_cast<double>(d)
          : bound;

  rep.contraction_ok = rep.delta_valid;
  for (const auto& fam : detail::families()) {
    double worst = 0.0;
    FamilyStats st = detail::measure_family(spec, fam, d, trials, rng, &worst);
    rep.max_ratio = std::max(rep.max_ratio, st.mean_ratio);
    if (deterministic) {
      if (worst > sample_bound + 1e-12 || worst > bound + 1e-12)
        rep.contraction_ok = false;
    } else if (st.mean_ratio > bound + 4.0 * st.std_error) {
      rep.contraction_ok = false;
    }
    rep.families.push_back(std::move(st));
  }

  if (spec.unbiased()) {
    rep.sum_bound_checked = true;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t t = 0; t < tuples; ++t) {
      std::vector<double> xs(d, 0.0), qs(d, 0.0);
      double norms = 0.0;
      for (std::size_t n = 0; n < tuple_size; ++n) {
        ModelVector x = detail::test_vector("gaussian", d, rng);
        const double scale = std::exp(rng.normal());
        for (auto& v : x) v = static_cast<Scalar>(v * scale);
        const ModelVector q = quantize(spec, x, rng).decoded;
        for (std::size_t i = 0; i < d; ++i) {
          xs[i] += x[i];
          qs[i] += q[i];
        }
        norms += norm_sq(x);
      }
      const double rhs = norm_sq(xs) + bound * norms;
      const double excess = (norm_sq(qs) - rhs) / rhs;
      sum += excess;
      sum_sq += excess * excess;
    }
    const double n = static_cast<double>(tuples);
    rep.sum_bound_mean_excess = sum / n;
    const double var =
        std::max(0.0, sum_sq / n - rep.sum_bound_mean_excess * rep.sum_bound_mean_excess);
    rep.sum_bound_std_error = std::sqrt(var / std::max(1.0, n - 1.0));
    rep.sum_bound_ok = rep.delta_valid && rep.sum_bound_mean_excess <=
                                              4.0 * rep.sum_bound_std_error;
  }
  rep.passed = rep.contraction_ok && rep.sum_bound_ok;
  return rep;
}

struct UnbiasednessReport {
  std::size_t trials = 0;
  double max_abs_z = 0.0;  // worst per-coordinate |mean - x| / standard error
  bool passed = false;
};

// Per-coordinate empirical mean of Q(x) against x, in standard errors.
// Coordinates whose reconstruction never varies must match exactly.
inline UnbiasednessReport check_unbiasedness(const QuantizerSpec& spec,
                                             std::span<const Scalar> x,
                                             std::size_t trials, Rng& rng) {
  const std::size_t d = x.size();
  std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const ModelVector q = quantize(spec, x, rng).decoded;
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += q[i];
      sum_sq[i] += static_cast<double>(q[i]) * q[i];
    }
  }
  UnbiasednessReport rep;
  rep.trials = trials;
  rep.passed = true;
  const double n = static_cast<double>(trials);
  for (std::size_t i = 0; i < d; ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, sum_sq[i] / n - mean * mean) * n / (n - 1);
    const double se = std::sqrt(var / n);
    const double err = std::abs(mean - x[i]);
    // Float reconstruction can be off by an ulp of the level step.
    const double floor_tol = 1e-6 * std::abs(static_cast<double>(x[i])) + 1e-30;
    if (se == 0.0) {
      if (err > floor_tol) rep.passed = false;
      continue;
    }
    const double z = err / se;
    rep.max_abs_z = std::max(rep.max_abs_z, z);
    if (z > 4.0) rep.passed = false;
  }
  return rep;
}

}  // namespace qafel
