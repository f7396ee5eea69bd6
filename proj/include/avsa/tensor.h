#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace avsa {

// Dense row-major parameter block.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s, double fill = 0.0);

  size_t size() const { return data.size(); }
  size_t dim(size_t i) const { return shape.at(i); }
  double& operator[](size_t i) { return data[i]; }
  const double& operator[](size_t i) const { return data[i]; }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  void fill(double v);
  bool all_finite() const;
  std::string shape_string() const;
};

size_t shape_size(const std::vector<size_t>& shape);

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

// Normal(0, stddev) initialization.
void init_normal(Tensor& t, double stddev, std::mt19937_64& rng);
// Uniform(-bound, bound) initialization.
void init_uniform(Tensor& t, double bound, std::mt19937_64& rng);

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace avsa
