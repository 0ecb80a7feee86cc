#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qafel/core.hpp"
#include "qafel/format.hpp"
#include "qafel/random.hpp"

namespace qafel {

enum class DataSource { kLibsvmFile, kSynthetic };

// Row-compressed sparse features with one label per row.
struct Dataset {
  std::size_t n_features = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<double> labels;
  DataSource source = DataSource::kSynthetic;

  std::size_t rows() const { return labels.size(); }
  std::size_t nnz() const { return col.size(); }

  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return {col.data() + row_ptr[i], row_ptr[i + 1] - row_ptr[i]};
  }
  std::span<const double> row_vals(std::size_t i) const {
    return {val.data() + row_ptr[i], row_ptr[i + 1] - row_ptr[i]};
  }

  void push_row(std::span<const std::uint32_t> cols,
                std::span<const double> vals, double label) {
    col.insert(col.end(), cols.begin(), cols.end());
    val.insert(val.end(), vals.begin(), vals.end());
    row_ptr.push_back(col.size());
    labels.push_back(label);
  }

  template <typename T>
  double row_dot(std::size_t i, std::span<const T> x) const {
    double s = 0.0;
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      s += val[k] * static_cast<double>(x[col[k]]);
    return s;
  }

  // FNV-1a over the canonical content; identifies a dataset in caches.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    mix(&n_features, sizeof n_features);
    mix(row_ptr.data(), row_ptr.size() * sizeof(std::size_t));
    mix(col.data(), col.size() * sizeof(std::uint32_t));
    mix(val.data(), val.size() * sizeof(double));
    mix(labels.data(), labels.size() * sizeof(double));
    return h;
  }

  void require_nonempty_rows() const {
    for (std::size_t i = 0; i < rows(); ++i)
      if (row_ptr[i + 1] == row_ptr[i])
        throw DatasetError("row " + std::to_string(i) + " has no features");
  }
};

struct ClientShard {
  int client_id = 0;
  std::vector<std::uint32_t> rows;
  double weight = 0.0;
};

using Partition = std::vector<ClientShard>;

enum class WeightScheme { kSizeProportional, kUniform };

inline void assign_weights(Partition& shards, WeightScheme scheme) {
  std::size_t total = 0;
  for (const auto& s : shards) total += s.rows.size();
  for (auto& s : shards) {
    s.weight = scheme == WeightScheme::kUniform
                   ? 1.0 / static_cast<double>(shards.size())
                   : static_cast<double>(s.rows.size()) /
                         static_cast<double>(total);
  }
}

// ---------------------------------------------------------------------------
// LIBSVM text format: "label idx:val idx:val ...", 1-based indices.
// Labels +1/1 map to +1; -1, 0 and 2 map to -1 (mushrooms uses 1/2).

inline double map_binary_label(const std::string& tok, std::size_t line) {
  double v;
  try {
    v = parse_double(tok);
  } catch (const ConfigError&) {
    throw DatasetError("malformed label '" + tok + "'", line);
  }
  if (v == 1.0) return 1.0;
  if (v == -1.0 || v == 0.0 || v == 2.0) return -1.0;
  throw DatasetError("unknown label '" + tok + "'", line);
}

inline Dataset parse_libsvm(std::istream& in, std::size_t n_features = 0) {
  Dataset ds;
  ds.source = DataSource::kLibsvmFile;
  std::string line;
  std::size_t lineno = 0, max_col = 0;
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank or comment-only
    const double label = map_binary_label(tok, lineno);
    cols.clear();
    vals.clear();
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw DatasetError("malformed feature '" + tok + "'", lineno);
      long long idx;
      double v;
      try {
        std::size_t used = 0;
        idx = std::stoll(tok.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("idx");
        v = parse_double(tok.substr(colon + 1));
      } catch (const std::exception&) {
        throw DatasetError("malformed feature '" + tok + "'", lineno);
      }
      if (idx < 1) throw DatasetError("feature index must be >= 1", lineno);
      if (!cols.empty() && static_cast<std::uint32_t>(idx - 1) <= cols.back())
        throw DatasetError("feature indices must increase", lineno);
      if (!std::isfinite(v)) throw DatasetError("non-finite value", lineno);
      cols.push_back(static_cast<std::uint32_t>(idx - 1));
      vals.push_back(v);
      max_col = std::max<std::size_t>(max_col, static_cast<std::size_t>(idx));
    }
    if (cols.empty()) throw DatasetError("row has no features", lineno);
    ds.push_row(cols, vals, label);
  }
  if (n_features != 0 && max_col > n_features)
    throw DatasetError("feature index " + std::to_string(max_col) +
                       " exceeds declared dimension " +
                       std::to_string(n_features));
  ds.n_features = n_features ? n_features : max_col;
  return ds;
}

inline Dataset load_libsvm(const std::string& path, std::size_t n_features = 0) {
  std::ifstream in(path);
  if (!in) throw DatasetMissing(path);
  return parse_libsvm(in, n_features);
}

// ---------------------------------------------------------------------------
// Synthetic data.

enum class SynthKind { kLogistic, kQuadratic };

struct SynthParams {
  SynthKind kind = SynthKind::kLogistic;
  std::size_t samples = 8000;
  std::size_t features = 112;
  // logistic: number of one-hot categorical groups the columns are split into
  std::size_t groups = 11;
  // logistic: Gamma shape of category popularity; large is near-uniform
  double concentration = 20.0;
  // logistic: probability of flipping a label
  double label_noise = 0.1;
  // quadratic: spread of client centers and of samples around them
  double center_scale = 1.0;
  double sample_scale = 1.0;
};

namespace detail {

// Splits n columns into g groups of near-equal size.
inline std::vector<std::size_t> group_sizes(std::size_t n, std::size_t g) {
  g = std::clamp<std::size_t>(g, 1, n);
  std::vector<std::size_t> sizes(g, n / g);
  for (std::size_t i = 0; i < n % g; ++i) ++sizes[i];
  return sizes;
}

}  // namespace detail

// Logistic data mimics one-hot encoded categorical records: every row holds
// exactly one active column per group, so rows are binary with `groups`
// nonzeros. Labels follow a planted linear model with flip noise, which
// keeps the problem separable-plus-noise. Quadratic data: sample rows are
// dense points scattered around per-client centers; see synthesize().
inline Dataset synthesize_rows(const SynthParams& p, Rng& rng,
                               std::span<const int> row_client = {},
                               std::size_t n_clients = 1) {
  Dataset ds;
  ds.source = DataSource::kSynthetic;
  ds.n_features = p.features;
  if (p.samples == 0 || p.features == 0)
    throw ConfigError("synthetic data needs positive samples and features");
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  if (p.kind == SynthKind::kLogistic) {
    const auto sizes = detail::group_sizes(p.features, p.groups);
    std::vector<std::size_t> offset(sizes.size(), 0);
    for (std::size_t g = 1; g < sizes.size(); ++g)
      offset[g] = offset[g - 1] + sizes[g - 1];
    // Per-group category popularity, so columns have unequal frequencies.
    std::vector<std::vector<double>> popularity(sizes.size());
    for (std::size_t g = 0; g < sizes.size(); ++g) {
      auto& pg = popularity[g];
      double total = 0.0;
      for (std::size_t c = 0; c < sizes[g]; ++c) {
        pg.push_back(rng.gamma(p.concentration));
        total += pg.back();
      }
      double acc = 0.0;
      for (auto& v : pg) v = (acc += v / total);
    }
    std::vector<double> planted(p.features);
    for (auto& w : planted) w = rng.normal();
    for (std::size_t i = 0; i < p.samples; ++i) {
      cols.clear();
      vals.clear();
      double z = 0.0;
      for (std::size_t g = 0; g < sizes.size(); ++g) {
        const double u = rng.uniform();
        const auto& pg = popularity[g];
        std::size_t c = static_cast<std::size_t>(
            std::lower_bound(pg.begin(), pg.end(), u) - pg.begin());
        c = std::min(c, sizes[g] - 1);
        cols.push_back(static_cast<std::uint32_t>(offset[g] + c));
        vals.push_back(1.0);
        z += planted[offset[g] + c];
      }
      double label = z >= 0.0 ? 1.0 : -1.0;
      if (rng.uniform() < p.label_noise) label = -label;
      ds.push_row(cols, vals, label);
    }
    return ds;
  }
  // Quadratic: a_i = center[client(i)] + noise.
  std::vector<std::vector<double>> centers(n_clients,
                                           std::vector<double>(p.features));
  for (auto& c : centers)
    for (auto& v : c) v = p.center_scale * rng.normal();
  for (std::size_t i = 0; i < p.samples; ++i) {
    const int client = row_client.empty() ? 0 : row_client[i];
    cols.clear();
    vals.clear();
    for (std::size_t j = 0; j < p.features; ++j) {
      cols.push_back(static_cast<std::uint32_t>(j));
      vals.push_back(centers[client][j] + p.sample_scale * rng.normal());
    }
    ds.push_row(cols, vals, 0.0);
  }
  return ds;
}

// Shard sizes proportional to a symmetric Dirichlet(alpha) draw, every
// client keeping at least one row. Large alpha approaches equal sizes.
inline std::vector<std::size_t> dirichlet_sizes(std::size_t m,
                                                std::size_t n_clients,
                                                double alpha, Rng& rng) {
  if (n_clients == 0 || m < n_clients)
    throw ConfigError("need at least one row per client");
  if (!(alpha > 0.0)) throw ConfigError("dirichlet alpha must be positive");
  std::vector<double> p(n_clients);
  double total = 0.0;
  for (auto& v : p) total += (v = rng.gamma(alpha));
  // Largest-remainder rounding of (m - n) spare rows on top of one each.
  const std::size_t spare = m - n_clients;
  std::vector<std::size_t> sizes(n_clients, 1);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n_clients; ++i) {
    const double exact = p[i] / total * static_cast<double>(spare);
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    sizes[i] += whole;
    assigned += whole;
    rem.emplace_back(exact - static_cast<double>(whole), i);
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t j = 0; assigned < spare; ++j, ++assigned)
    ++sizes[rem[j % n_clients].second];
  return sizes;
}

inline std::vector<std::size_t> uniform_sizes(std::size_t m,
                                              std::size_t n_clients) {
  if (n_clients == 0 || m < n_clients)
    throw ConfigError("need at least one row per client");
  std::vector<std::size_t> sizes(n_clients, m / n_clients);
  for (std::size_t i = 0; i < m % n_clients; ++i) ++sizes[i];
  return sizes;
}

// Shuffles row ids and cuts them into consecutive shards of the given sizes.
inline Partition partition_rows(std::size_t m,
                                const std::vector<std::size_t>& sizes,
                                Rng& rng, bool shuffle = true) {
  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);
  if (shuffle)
    for (std::size_t i = m; i > 1; --i)
      std::swap(order[i - 1], order[rng.index(i)]);
  Partition shards(sizes.size());
  std::size_t pos = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    shards[c].client_id = static_cast<int>(c);
    shards[c].rows.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                          order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[c]));
    std::sort(shards[c].rows.begin(), shards[c].rows.end());
    pos += sizes[c];
  }
  return shards;
}

enum class PartitionScheme { kUniform, kDirichlet };

struct PartitionParams {
  PartitionScheme scheme = PartitionScheme::kUniform;
  std::size_t n_clients = 100;
  double dirichlet_alpha = 1.0;
  WeightScheme weights = WeightScheme::kSizeProportional;
};

inline Partition make_partition(std::size_t m, const PartitionParams& pp,
                                Rng& rng) {
  const auto sizes = pp.scheme == PartitionScheme::kUniform
                         ? uniform_sizes(m, pp.n_clients)
                         : dirichlet_sizes(m, pp.n_clients, pp.dirichlet_alpha, rng);
  Partition shards = partition_rows(m, sizes, rng);
  assign_weights(shards, pp.weights);
  return shards;
}

struct SynthResult {
  Dataset data;
  Partition shards;
};

// Fully determined by (params, partition, seed). For quadratic data the
// shard layout is drawn first, because sample rows depend on their client.
inline SynthResult synthesize(const SynthParams& p, const PartitionParams& pp,
                              std::uint64_t seed) {
  Rng data_rng(seed, StreamTag::kDataSynthesis);
  Rng part_rng(seed, StreamTag::kPartition);
  SynthResult out;
  if (p.kind == SynthKind::kLogistic) {
    out.data = synthesize_rows(p, data_rng);
    out.data.require_nonempty_rows();
    out.shards = make_partition(out.data.rows(), pp, part_rng);
    return out;
  }
  out.shards = make_partition(p.samples, pp, part_rng);
  std::vector<int> owner(p.samples, 0);
  for (const auto& s : out.shards)
    for (auto r : s.rows) owner[r] = s.client_id;
  out.data = synthesize_rows(p, data_rng, owner, pp.n_clients);
  return out;
}

}  // namespace qafel
