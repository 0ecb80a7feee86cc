#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "qafel/core.hpp"
#include "qafel/dataset.hpp"
#include "qafel/random.hpp"

namespace qafel {

enum class ObjectiveKind { kLogisticL2, kQuadratic };

inline std::string to_string(ObjectiveKind k) {
  return k == ObjectiveKind::kLogisticL2 ? "logistic_l2" : "quadratic";
}

inline ObjectiveKind parse_objective_kind(const std::string& s) {
  if (s == "logistic_l2" || s == "logistic") return ObjectiveKind::kLogisticL2;
  if (s == "quadratic") return ObjectiveKind::kQuadratic;
  throw ConfigError("unknown objective kind '" + s + "'");
}

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kLogisticL2;
  double l2 = 0.0;

  void validate() const {
    if (!(l2 >= 0.0) || !std::isfinite(l2))
      throw ConfigError("l2 strength must be finite and >= 0");
  }
};

// log(1 + exp(-t)) without overflow for either sign of t.
inline double log1p_exp_neg(double t) {
  return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

// 1 / (1 + exp(t)), the derivative factor of log1p_exp_neg.
inline double sigmoid_neg(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

// The objective f = Σ_n w_n F_n over client shards. F_n is the mean per-sample
// loss on shard n plus (λ/2)‖x‖².
//   logistic_l2: log(1 + exp(-y ⟨a, x⟩))
//   quadratic:   ½‖x − a‖²
// The problem borrows the dataset and shards; both must outlive it.
class Problem {
 public:
  Problem(ObjectiveSpec spec, const Dataset& data, const Partition& shards)
      : spec_(spec), data_(&data), shards_(&shards) {
    spec_.validate();
    if (shards.empty()) throw ConfigError("problem needs at least one shard");
    for (const auto& s : shards)
      for (auto r : s.rows)
        if (r >= data.rows()) throw ConfigError("shard row out of range");
  }

  const ObjectiveSpec& spec() const { return spec_; }
  const Dataset& data() const { return *data_; }
  const Partition& shards() const { return *shards_; }
  std::size_t dim() const { return data_->n_features; }
  std::size_t n_clients() const { return shards_->size(); }

  template <typename T>
  double sample_loss(std::size_t row, std::span<const T> x) const {
    const double z = data_->row_dot(row, x);
    if (spec_.kind == ObjectiveKind::kLogisticL2)
      return log1p_exp_neg(data_->labels[row] * z);
    double a2 = 0.0;
    for (double v : data_->row_vals(row)) a2 += v * v;
    return 0.5 * (norm_sq(x) - 2.0 * z + a2);
  }

  // out += scale * ∇(data term of sample `row`), regularizer excluded.
  template <typename T>
  void add_sample_gradient(std::size_t row, std::span<const T> x, double scale,
                           std::span<double> out) const {
    const auto cols = data_->row_cols(row);
    const auto vals = data_->row_vals(row);
    if (spec_.kind == ObjectiveKind::kLogisticL2) {
      const double y = data_->labels[row];
      const double c = -y * sigmoid_neg(y * data_->row_dot(row, x)) * scale;
      for (std::size_t k = 0; k < cols.size(); ++k) out[cols[k]] += c * vals[k];
      return;
    }
    for (std::size_t j = 0; j < x.size(); ++j)
      out[j] += scale * static_cast<double>(x[j]);
    for (std::size_t k = 0; k < cols.size(); ++k) out[cols[k]] -= scale * vals[k];
  }

  // Sample loss; also adds scale * its data-term gradient to out.
  template <typename T>
  double add_sample_loss_gradient(std::size_t row, std::span<const T> x,
                                  double scale, std::vector<double>& out) const {
    if (spec_.kind != ObjectiveKind::kLogisticL2) {
      add_sample_gradient(row, x, scale, std::span<double>(out));
      return sample_loss(row, x);
    }
    const double y = data_->labels[row];
    const double m = y * data_->row_dot(row, x);
    // One exp serves both the loss and the sigmoid.
    const double e = std::exp(-std::abs(m));
    const double sig = m >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
    const double c = -y * sig * scale;
    const auto cols = data_->row_cols(row);
    const auto vals = data_->row_vals(row);
    for (std::size_t k = 0; k < cols.size(); ++k) out[cols[k]] += c * vals[k];
    return std::max(-m, 0.0) + std::log1p(e);
  }

  template <typename T>
  double shard_loss(std::size_t n, std::span<const T> x) const {
    check_dim(x.size());
    const auto& rows = shard(n).rows;
    double s = 0.0;
    for (auto r : rows) s += sample_loss(r, x);
    return s / static_cast<double>(rows.size()) + 0.5 * spec_.l2 * norm_sq(x);
  }

  template <typename T>
  std::vector<double> shard_gradient(std::size_t n, std::span<const T> x) const {
    check_dim(x.size());
    const auto& rows = shard(n).rows;
    std::vector<double> g(x.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (auto r : rows) add_sample_gradient(r, x, inv, std::span<double>(g));
    add_regularizer(x, g);
    return g;
  }

  template <typename T>
  double global_loss(std::span<const T> x) const {
    double s = 0.0;
    for (std::size_t n = 0; n < n_clients(); ++n)
      s += shard(n).weight * shard_loss(n, x);
    return s;
  }

  template <typename T>
  std::vector<double> global_gradient(std::span<const T> x) const {
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t n = 0; n < n_clients(); ++n) {
      const auto gn = shard_gradient(n, x);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += shard(n).weight * gn[j];
    }
    return g;
  }

  // f(x) and ∇f(x) in one pass over the data; same values as global_loss
  // and global_gradient.
  template <typename T>
  double global_loss_and_gradient(std::span<const T> x,
                                  std::vector<double>& grad) const {
    check_dim(x.size());
    grad.assign(x.size(), 0.0);
    std::vector<double> gn(x.size());
    const double reg = 0.5 * spec_.l2 * norm_sq(x);
    double f = 0.0;
    for (std::size_t n = 0; n < n_clients(); ++n) {
      const auto& rows = shard(n).rows;
      const double inv = 1.0 / static_cast<double>(rows.size());
      std::fill(gn.begin(), gn.end(), 0.0);
      double loss = 0.0;
      for (auto r : rows) loss += add_sample_loss_gradient(r, x, inv, gn);
      add_regularizer(x, gn);
      const double w = shard(n).weight;
      f += w * (loss * inv + reg);
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += w * gn[j];
    }
    return f;
  }

  // Minibatch of `batch_size` rows drawn uniformly with replacement from the
  // shard. batch_size == 0 means a deterministic full pass over the shard.
  template <typename T>
  std::vector<double> stochastic_gradient(std::size_t n, std::span<const T> x,
                                          std::size_t batch_size,
                                          Rng& rng) const {
    if (batch_size == 0) return shard_gradient(n, x);
    check_dim(x.size());
    const auto& rows = shard(n).rows;
    std::vector<double> g(x.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b)
      add_sample_gradient(rows[rng.index(rows.size())], x, inv,
                          std::span<double>(g));
    add_regularizer(x, g);
    return g;
  }

  // Variance of a single uniformly drawn sample gradient on shard n:
  // (1/m_n) Σ_i ‖g_i − ∇F_n‖². A with-replacement batch of b has this / b.
  template <typename T>
  double sample_gradient_variance(std::size_t n, std::span<const T> x) const {
    const auto mean = shard_gradient(n, x);
    const auto& rows = shard(n).rows;
    std::vector<double> gi(x.size());
    double acc = 0.0;
    for (auto r : rows) {
      std::fill(gi.begin(), gi.end(), 0.0);
      add_sample_gradient(r, x, 1.0, std::span<double>(gi));
      add_regularizer(x, gi);
      acc += distance_sq(gi, mean);
    }
    return acc / static_cast<double>(rows.size());
  }

 private:
  const ClientShard& shard(std::size_t n) const {
    const auto& s = (*shards_)[n];
    if (s.rows.empty()) throw ConfigError("empty shard");
    return s;
  }

  void check_dim(std::size_t d) const {
    if (d != dim())
      throw ConfigError("model dimension " + std::to_string(d) +
                        " does not match data dimension " +
                        std::to_string(dim()));
  }

  template <typename T>
  void add_regularizer(std::span<const T> x, std::vector<double>& g) const {
    if (spec_.l2 == 0.0) return;
    for (std::size_t j = 0; j < g.size(); ++j)
      g[j] += spec_.l2 * static_cast<double>(x[j]);
  }

  ObjectiveSpec spec_;
  const Dataset* data_;
  const Partition* shards_;
};

// ---------------------------------------------------------------------------
// Deterministic full-batch minimizer: L-BFGS directions with Armijo
// backtracking, falling back to steepest descent whenever the direction is
// not a descent direction.

struct OracleResult {
  std::vector<double> x_star;
  double f_star = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline OracleResult minimize_oracle(const Problem& prob,
                                    std::vector<double> x0, double tol = 1e-8,
                                    std::size_t max_iter = 20000,
                                    std::size_t memory = 12) {
  if (x0.size() != prob.dim()) throw ConfigError("x0 dimension mismatch");
  const std::size_t d = x0.size();
  std::vector<double> x = std::move(x0);
  auto fx = prob.global_loss(std::span<const double>(x));
  auto g = prob.global_gradient(std::span<const double>(x));
  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;
  OracleResult best{x, fx, std::sqrt(norm_sq(g)), 0, false};
  std::vector<double> dir(d), xn(d);
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    const double gnorm = std::sqrt(norm_sq(g));
    if (gnorm < best.grad_norm) best = {x, fx, gnorm, it, false};
    if (gnorm <= tol) {
      return {x, fx, gnorm, it, true};
    }
    // Two-loop recursion.
    for (std::size_t j = 0; j < d; ++j) dir[j] = -g[j];
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alpha[k] = rho[k] * dot(std::span<const double>(S[k]),
                              std::span<const double>(dir));
      for (std::size_t j = 0; j < d; ++j) dir[j] -= alpha[k] * Y[k][j];
    }
    if (!S.empty()) {
      const double gamma = dot(std::span<const double>(S.back()),
                               std::span<const double>(Y.back())) /
                           norm_sq(Y.back());
      for (auto& v : dir) v *= gamma;
    } else {
      const double scale = 1.0 / std::max(gnorm, 1.0);
      for (auto& v : dir) v *= scale;
    }
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * dot(std::span<const double>(Y[k]),
                                       std::span<const double>(dir));
      for (std::size_t j = 0; j < d; ++j) dir[j] += S[k][j] * (alpha[k] - beta);
    }
    double slope = dot(std::span<const double>(g), std::span<const double>(dir));
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t j = 0; j < d; ++j) dir[j] = -g[j];
      slope = -gnorm * gnorm;
    }
    double step = 1.0, fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      for (std::size_t j = 0; j < d; ++j) xn[j] = x[j] + step * dir[j];
      fn = prob.global_loss(std::span<const double>(xn));
      if (fn <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    auto gn = prob.global_gradient(std::span<const double>(xn));
    if (!accepted) {
      // Line search stalled in floating point; the gradient test decides.
      if (std::sqrt(norm_sq(gn)) >= gnorm) break;
      fn = prob.global_loss(std::span<const double>(xn));
    }
    std::vector<double> s(d), y(d);
    for (std::size_t j = 0; j < d; ++j) {
      s[j] = xn[j] - x[j];
      y[j] = gn[j] - g[j];
    }
    const double sy = dot(std::span<const double>(s), std::span<const double>(y));
    if (sy > 1e-300) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    fx = fn;
  }
  const double gnorm = std::sqrt(norm_sq(g));
  if (gnorm <= best.grad_norm) best = {x, fx, gnorm, it, false};
  best.iterations = it;
  best.converged = best.grad_norm <= tol;
  return best;
}

// ---------------------------------------------------------------------------
// Analysis constants.

struct ConstantEstimates {
  double L = 0.0;              // smoothness of f
  double L_max_client = 0.0;   // largest per-shard smoothness (logistic only)
  double sigma_sq_sample = 0.0;  // max per-sample gradient variance
  double B_mean = 0.0;         // max over probes of (1/N) Σ_n ‖∇f − ∇F_n‖²
  double B_max = 0.0;          // max over probes and n of ‖∇f − ∇F_n‖²
  double f_star = 0.0;
  double oracle_grad_norm = 0.0;
  bool oracle_converged = false;
  std::vector<double> x_star;

  // Variance of a minibatch of size b drawn with replacement; b == 0 is a
  // full pass and has none.
  double sigma_sq(std::size_t batch_size) const {
    return batch_size == 0 ? 0.0
                           : sigma_sq_sample / static_cast<double>(batch_size);
  }
};

// λ_max(XᵀX / (4 m)) over the given rows, by power iteration.
inline double logistic_curvature(const Dataset& data,
                                 std::span<const std::uint32_t> rows,
                                 double tol = 1e-6, std::size_t max_iter = 10000) {
  const std::size_t d = data.n_features;
  if (d == 0 || rows.empty()) return 0.0;
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d))), w(d);
  double lambda = 0.0;
  const double inv = 1.0 / (4.0 * static_cast<double>(rows.size()));
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::fill(w.begin(), w.end(), 0.0);
    for (auto r : rows) {
      const double z = data.row_dot(r, std::span<const double>(v));
      const auto cols = data.row_cols(r);
      const auto vals = data.row_vals(r);
      for (std::size_t k = 0; k < cols.size(); ++k) w[cols[k]] += z * vals[k];
    }
    for (auto& x : w) x *= inv;
    const double next = dot(std::span<const double>(v), std::span<const double>(w));
    const double n = std::sqrt(norm_sq(w));
    if (n == 0.0) return 0.0;
    for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / n;
    if (it > 0 && std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

// Probe 0 is the origin, probe 1 the minimizer, the rest are random points
// t·x* + noise with t ~ U[0, 1.5] and per-coordinate noise of the size of
// x*'s rms coordinate.
inline ConstantEstimates estimate_constants(const Problem& prob,
                                            std::size_t probes, Rng& rng,
                                            double oracle_tol = 1e-8) {
  if (probes < 1) throw ConfigError("need at least one probe");
  ConstantEstimates c;
  const std::size_t d = prob.dim();
  const auto& spec = prob.spec();
  if (spec.kind == ObjectiveKind::kQuadratic) {
    c.L = 1.0 + spec.l2;
    c.L_max_client = c.L;
  } else {
    std::vector<std::uint32_t> all(prob.data().rows());
    std::iota(all.begin(), all.end(), 0u);
    c.L = spec.l2 + logistic_curvature(prob.data(), all);
    for (const auto& s : prob.shards())
      c.L_max_client = std::max(c.L_max_client,
                                spec.l2 + logistic_curvature(prob.data(), s.rows));
  }
  const auto oracle = minimize_oracle(prob, std::vector<double>(d, 0.0), oracle_tol);
  c.x_star = oracle.x_star;
  c.f_star = oracle.f_star;
  c.oracle_grad_norm = oracle.grad_norm;
  c.oracle_converged = oracle.converged;

  const double rms = std::sqrt(norm_sq(c.x_star) / static_cast<double>(d));
  std::vector<double> x(d);
  for (std::size_t p = 0; p < probes; ++p) {
    if (p == 0) {
      std::fill(x.begin(), x.end(), 0.0);
    } else if (p == 1) {
      x = c.x_star;
    } else {
      const double t = rng.uniform(0.0, 1.5);
      for (std::size_t j = 0; j < d; ++j)
        x[j] = t * c.x_star[j] + rms * rng.normal();
    }
    const std::span<const double> xs(x);
    const auto gf = prob.global_gradient(xs);
    double b_sum = 0.0;
    for (std::size_t n = 0; n < prob.n_clients(); ++n) {
      const auto gn = prob.shard_gradient(n, xs);
      const double diff = distance_sq(gf, gn);
      b_sum += diff;
      c.B_max = std::max(c.B_max, diff);
      c.sigma_sq_sample =
          std::max(c.sigma_sq_sample, prob.sample_gradient_variance(n, xs));
    }
    c.B_mean = std::max(c.B_mean, b_sum / static_cast<double>(prob.n_clients()));
  }
  return c;
}

}  // namespace qafel
