#include "avsa/tensor.h"

#include <cmath>

namespace avsa {

size_t shape_size(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<size_t> s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void init_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
}

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
}

}  // namespace avsa
