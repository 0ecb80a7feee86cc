#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qafel {

// Models travel on the wire as 32-bit floats, so the in-memory model uses
// the same precision. Objective math accumulates in double.
using Scalar = float;
using ModelVector = std::vector<Scalar>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed configurations or inputs that can never run.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  DatasetError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DatasetMissing : public Error {
 public:
  explicit DatasetMissing(std::string path)
      : Error("dataset not found: " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

template <typename T>
double norm_sq(std::span<const T> x) {
  double s = 0.0;
  for (T v : x) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <typename T>
double norm_sq(const std::vector<T>& x) {
  return norm_sq(std::span<const T>(x));
}

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename A, typename B>
double distance_sq(const std::vector<A>& a, const std::vector<B>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

template <typename T>
bool all_finite(std::span<const T> x) {
  for (T v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline std::vector<double> to_double(std::span<const Scalar> x) {
  return {x.begin(), x.end()};
}

inline ModelVector to_model(std::span<const double> x) {
  ModelVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<Scalar>(x[i]);
  return out;
}

}  // namespace qafel
