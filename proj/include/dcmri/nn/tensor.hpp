#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace dcmri::nn {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  bool operator==(const Tensor&) const = default;
};

enum class Init { kaiming_normal, uniform_fan_in, ones, zeros };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Init init = Init::zeros;
  int fan_in = 1;
  // Buffers (running statistics) are saved and transferred but never optimised.
  bool buffer = false;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape, Init i, int fan = 1, bool is_buffer = false)
      : name(std::move(n)), value(shape), grad(shape), init(i), fan_in(fan), buffer(is_buffer) {}
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

enum class Mode { train, eval };

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace dcmri::nn
