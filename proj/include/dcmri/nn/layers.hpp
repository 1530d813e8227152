#pragma once

// Layers operate on [batch, channel, z, y, x] tensors (Linear on [batch, features]).
// Each layer caches what its backward pass needs from the most recent forward,
// so one instance serves one forward/backward sequence at a time.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcmri/errors.hpp"
#include "dcmri/nn/tensor.hpp"

namespace dcmri::nn {

namespace detail {

template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(std::size_t n, const T* __restrict x, const T* __restrict y) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

inline int out_size(int n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }

}  // namespace detail

template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in, int out, int kernel, int stride, bool bias = false)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(kernel / 2), has_bias_(bias),
        weight_(name + ".weight", {out, in, kernel, kernel, kernel}, Init::kaiming_normal,
                in * kernel * kernel * kernel) {
    if (bias) bias_ = Parameter<T>(name + ".bias", {out}, Init::zeros);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape.size() != 5 || x.shape[1] != in_) {
      throw ShapeError(weight_.name + ": expected [B," + std::to_string(in_) + ",Z,Y,X] input, got " +
                       shape_string(x.shape));
    }
    in_shape_ = x.shape;
    const int b = x.shape[0];
    for (int a = 0; a < 3; ++a) out_sp_[a] = detail::out_size(x.shape[2 + a], k_, stride_, pad_);
    const std::size_t n = static_cast<std::size_t>(out_sp_[0]) * out_sp_[1] * out_sp_[2];
    const std::size_t kk = static_cast<std::size_t>(in_) * k_ * k_ * k_;
    Tensor<T> y({b, out_, out_sp_[0], out_sp_[1], out_sp_[2]});
    cols_.resize(b);
    for (int s = 0; s < b; ++s) {
      im2col(x, s, cols_[s]);
      T* ys = y.ptr() + static_cast<std::size_t>(s) * out_ * n;
      for (int co = 0; co < out_; ++co) {
        T* yr = ys + co * n;
        if (has_bias_) std::fill(yr, yr + n, bias_.value.data[co]);
        const T* w = weight_.value.ptr() + co * kk;
        for (std::size_t k = 0; k < kk; ++k) {
          if (w[k] != T(0)) detail::axpy(n, w[k], cols_[s].data() + k * n, yr);
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
    const int b = in_shape_[0];
    const std::size_t n = static_cast<std::size_t>(out_sp_[0]) * out_sp_[1] * out_sp_[2];
    const std::size_t kk = static_cast<std::size_t>(in_) * k_ * k_ * k_;
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>(in_shape_);
    std::vector<T> gcol;
    for (int s = 0; s < b; ++s) {
      const T* gs = gy.ptr() + static_cast<std::size_t>(s) * out_ * n;
      for (int co = 0; co < out_; ++co) {
        const T* gr = gs + co * n;
        T* gw = weight_.grad.ptr() + co * kk;
        for (std::size_t k = 0; k < kk; ++k) gw[k] += detail::dot(n, gr, cols_[s].data() + k * n);
        if (has_bias_) {
          T acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += gr[i];
          bias_.grad.data[co] += acc;
        }
      }
      if (!need_input_grad) continue;
      gcol.assign(kk * n, T(0));
      for (std::size_t k = 0; k < kk; ++k) {
        T* gc = gcol.data() + k * n;
        for (int co = 0; co < out_; ++co) {
          const T w = weight_.value.data[co * kk + k];
          if (w != T(0)) detail::axpy(n, w, gs + co * n, gc);
        }
      }
      col2im(gcol, s, gx);
    }
    return gx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }
  Parameter<T>& weight() { return weight_; }
  int out_channels() const { return out_; }

 private:
  // col[(ci, kz, ky, kx)][output voxel]; zero where the window leaves the input.
  void im2col(const Tensor<T>& x, int s, std::vector<T>& col) const {
    const int Z = x.shape[2], Y = x.shape[3], X = x.shape[4];
    const std::size_t n = static_cast<std::size_t>(out_sp_[0]) * out_sp_[1] * out_sp_[2];
    col.assign(static_cast<std::size_t>(in_) * k_ * k_ * k_ * n, T(0));
    const T* xs = x.ptr() + static_cast<std::size_t>(s) * in_ * Z * Y * X;
    std::size_t row = 0;
    for (int ci = 0; ci < in_; ++ci) {
      const T* xc = xs + static_cast<std::size_t>(ci) * Z * Y * X;
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx, ++row) {
            T* dst = col.data() + row * n;
            for (int oz = 0; oz < out_sp_[0]; ++oz) {
              const int iz = oz * stride_ - pad_ + kz;
              if (iz < 0 || iz >= Z) continue;
              for (int oy = 0; oy < out_sp_[1]; ++oy) {
                const int iy = oy * stride_ - pad_ + ky;
                if (iy < 0 || iy >= Y) continue;
                const T* src = xc + (static_cast<std::size_t>(iz) * Y + iy) * X;
                T* d = dst + (static_cast<std::size_t>(oz) * out_sp_[1] + oy) * out_sp_[2];
                for (int ox = 0; ox < out_sp_[2]; ++ox) {
                  const int ix = ox * stride_ - pad_ + kx;
                  if (ix >= 0 && ix < X) d[ox] = src[ix];
                }
              }
            }
          }
    }
  }

  void col2im(const std::vector<T>& col, int s, Tensor<T>& gx) const {
    const int Z = in_shape_[2], Y = in_shape_[3], X = in_shape_[4];
    const std::size_t n = static_cast<std::size_t>(out_sp_[0]) * out_sp_[1] * out_sp_[2];
    T* xs = gx.ptr() + static_cast<std::size_t>(s) * in_ * Z * Y * X;
    std::size_t row = 0;
    for (int ci = 0; ci < in_; ++ci) {
      T* xc = xs + static_cast<std::size_t>(ci) * Z * Y * X;
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx, ++row) {
            const T* src = col.data() + row * n;
            for (int oz = 0; oz < out_sp_[0]; ++oz) {
              const int iz = oz * stride_ - pad_ + kz;
              if (iz < 0 || iz >= Z) continue;
              for (int oy = 0; oy < out_sp_[1]; ++oy) {
                const int iy = oy * stride_ - pad_ + ky;
                if (iy < 0 || iy >= Y) continue;
                T* d = xc + (static_cast<std::size_t>(iz) * Y + iy) * X;
                const T* c = src + (static_cast<std::size_t>(oz) * out_sp_[1] + oy) * out_sp_[2];
                for (int ox = 0; ox < out_sp_[2]; ++ox) {
                  const int ix = ox * stride_ - pad_ + kx;
                  if (ix >= 0 && ix < X) d[ix] += c[ox];
                }
              }
            }
          }
    }
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::vector<int> in_shape_;
  int out_sp_[3] = {0, 0, 0};
  std::vector<std::vector<T>> cols_;
};

enum class NormKind { instance, batch };

/// Instance norm normalises each (sample, channel); batch norm each channel
/// across the batch, with running statistics used in eval mode.
template <typename T>
class Norm {
 public:
  Norm() = default;
  Norm(std::string name, int channels, NormKind kind)
      : c_(channels), kind_(kind), gamma_(name + ".weight", {channels}, Init::ones),
        beta_(name + ".bias", {channels}, Init::zeros) {
    if (kind == NormKind::batch) {
      running_mean_ = Parameter<T>(name + ".running_mean", {channels}, Init::zeros, 1, true);
      running_var_ = Parameter<T>(name + ".running_var", {channels}, Init::ones, 1, true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const int b = x.shape[0];
    const std::size_t sp = x.numel() / (static_cast<std::size_t>(b) * c_);
    shape_ = x.shape;
    xhat_ = Tensor<T>(x.shape);
    Tensor<T> y(x.shape);
    use_batch_stats_ = !(kind_ == NormKind::batch && mode == Mode::eval);
    const int groups = kind_ == NormKind::instance ? b * c_ : c_;
    inv_std_.assign(groups, T(0));
    auto idx = [&](int bi, int ci) { return (static_cast<std::size_t>(bi) * c_ + ci) * sp; };
    for (int g = 0; g < groups; ++g) {
      const int ci = kind_ == NormKind::instance ? g % c_ : g;
      const int b0 = kind_ == NormKind::instance ? g / c_ : 0;
      const int b1 = kind_ == NormKind::instance ? b0 + 1 : b;
      T mean = 0, var = 0;
      if (use_batch_stats_) {
        double m = 0;
        for (int bi = b0; bi < b1; ++bi)
          for (std::size_t i = 0; i < sp; ++i) m += x.data[idx(bi, ci) + i];
        const double cnt = static_cast<double>(sp) * (b1 - b0);
        m /= cnt;
        double v = 0;
        for (int bi = b0; bi < b1; ++bi)
          for (std::size_t i = 0; i < sp; ++i) {
            const double d = x.data[idx(bi, ci) + i] - m;
            v += d * d;
          }
        v /= cnt;
        mean = static_cast<T>(m);
        var = static_cast<T>(v);
        if (kind_ == NormKind::batch && mode == Mode::train) {
          const double unbiased = cnt > 1 ? v * cnt / (cnt - 1) : v;
          T& rm = running_mean_.value.data[ci];
          T& rv = running_var_.value.data[ci];
          rm = static_cast<T>((1 - kMomentum) * rm + kMomentum * m);
          rv = static_cast<T>((1 - kMomentum) * rv + kMomentum * unbiased);
        }
      } else {
        mean = running_mean_.value.data[ci];
        var = running_var_.value.data[ci];
      }
      const T inv = T(1) / std::sqrt(var + T(kEps));
      inv_std_[g] = inv;
      const T ga = gamma_.value.data[ci], be = beta_.value.data[ci];
      for (int bi = b0; bi < b1; ++bi) {
        const std::size_t o = idx(bi, ci);
        for (std::size_t i = 0; i < sp; ++i) {
          const T h = (x.data[o + i] - mean) * inv;
          xhat_.data[o + i] = h;
          y.data[o + i] = ga * h + be;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const int b = shape_[0];
    const std::size_t sp = gy.numel() / (static_cast<std::size_t>(b) * c_);
    Tensor<T> gx(shape_);
    const int groups = kind_ == NormKind::instance ? b * c_ : c_;
    auto idx = [&](int bi, int ci) { return (static_cast<std::size_t>(bi) * c_ + ci) * sp; };
    for (int g = 0; g < groups; ++g) {
      const int ci = kind_ == NormKind::instance ? g % c_ : g;
      const int b0 = kind_ == NormKind::instance ? g / c_ : 0;
      const int b1 = kind_ == NormKind::instance ? b0 + 1 : b;
      const T ga = gamma_.value.data[ci];
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int bi = b0; bi < b1; ++bi) {
        const std::size_t o = idx(bi, ci);
        for (std::size_t i = 0; i < sp; ++i) {
          sum_dy += gy.data[o + i];
          sum_dy_xhat += gy.data[o + i] * xhat_.data[o + i];
        }
      }
      gamma_.grad.data[ci] += sum_dy_xhat;
      beta_.grad.data[ci] += sum_dy;
      const T inv = inv_std_[g];
      const T cnt = static_cast<T>(sp * (b1 - b0));
      for (int bi = b0; bi < b1; ++bi) {
        const std::size_t o = idx(bi, ci);
        for (std::size_t i = 0; i < sp; ++i) {
          if (use_batch_stats_) {
            gx.data[o + i] = ga * inv / cnt *
                             (cnt * gy.data[o + i] - sum_dy - xhat_.data[o + i] * sum_dy_xhat);
          } else {
            gx.data[o + i] = ga * inv * gy.data[o + i];
          }
        }
      }
    }
    return gx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    if (kind_ == NormKind::batch) {
      out.push_back(&running_mean_);
      out.push_back(&running_var_);
    }
  }

 private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  int c_ = 0;
  NormKind kind_ = NormKind::instance;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  std::vector<int> shape_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool use_batch_stats_ = true;
};

/// Leaky ReLU; slope 0 gives plain ReLU.
template <typename T>
class Activation {
 public:
  explicit Activation(T slope = T(0.01)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    Tensor<T> y = x;
    for (T& v : y.data) v = v > 0 ? v : slope_ * v;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (!(x_.data[i] > 0)) gx.data[i] *= slope_;
    }
    return gx;
  }

 private:
  T slope_;
  Tensor<T> x_;
};

/// 3x3x3 max pooling, stride 2, padding 1.
template <typename T>
class MaxPool3d {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape;
    const int b = x.shape[0], c = x.shape[1];
    const int Z = x.shape[2], Y = x.shape[3], X = x.shape[4];
    int o[3];
    for (int a = 0; a < 3; ++a) o[a] = detail::out_size(x.shape[2 + a], 3, 2, 1);
    Tensor<T> y({b, c, o[0], o[1], o[2]});
    argmax_.assign(y.numel(), 0);
    std::size_t out_i = 0;
    for (int p = 0; p < b * c; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * Z * Y * X;
      for (int oz = 0; oz < o[0]; ++oz)
        for (int oy = 0; oy < o[1]; ++oy)
          for (int ox = 0; ox < o[2]; ++ox, ++out_i) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t arg = 0;
            for (int kz = 0; kz < 3; ++kz) {
              const int iz = oz * 2 - 1 + kz;
              if (iz < 0 || iz >= Z) continue;
              for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * 2 - 1 + ky;
                if (iy < 0 || iy >= Y) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  const int ix = ox * 2 - 1 + kx;
                  if (ix < 0 || ix >= X) continue;
                  const std::size_t j = base + (static_cast<std::size_t>(iz) * Y + iy) * X + ix;
                  if (x.data[j] > best) {
                    best = x.data[j];
                    arg = j;
                  }
                }
              }
            }
            y.data[out_i] = best;
            argmax_[out_i] = arg;
          }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(in_shape_);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx.data[argmax_[i]] += gy.data[i];
    return gx;
  }

 private:
  std::vector<int> in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Squeeze-and-excitation: y = x * sigmoid(W2 relu(W1 mean(x) + b1) + b2),
/// one gate per (sample, channel).
template <typename T>
class SEBlock {
 public:
  SEBlock() = default;
  SEBlock(std::string name, int channels, int reduction)
      : c_(channels), h_(std::max(1, channels / reduction)),
        w1_(name + ".fc1.weight", {h_, channels}, Init::kaiming_normal, channels),
        b1_(name + ".fc1.bias", {h_}, Init::zeros),
        w2_(name + ".fc2.weight", {channels, h_}, Init::kaiming_normal, h_),
        b2_(name + ".fc2.bias", {channels}, Init::zeros) {}

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    const int b = x.shape[0];
    const std::size_t sp = x.numel() / (static_cast<std::size_t>(b) * c_);
    squeeze_.assign(static_cast<std::size_t>(b) * c_, T(0));
    hidden_.assign(static_cast<std::size_t>(b) * h_, T(0));
    gate_.assign(static_cast<std::size_t>(b) * c_, T(0));
    Tensor<T> y(x.shape);
    for (int bi = 0; bi < b; ++bi) {
      T* s = &squeeze_[bi * c_];
      for (int c = 0; c < c_; ++c) {
        const T* xc = x.ptr() + (static_cast<std::size_t>(bi) * c_ + c) * sp;
        T acc = 0;
        for (std::size_t i = 0; i < sp; ++i) acc += xc[i];
        s[c] = acc / static_cast<T>(sp);
      }
      T* hd = &hidden_[bi * h_];
      for (int j = 0; j < h_; ++j) {
        T a = b1_.value.data[j] + detail::dot(c_, w1_.value.ptr() + j * c_, s);
        hd[j] = a > 0 ? a : T(0);
      }
      T* g = &gate_[bi * c_];
      for (int c = 0; c < c_; ++c) {
        T a = b2_.value.data[c] + detail::dot(h_, w2_.value.ptr() + c * h_, hd);
        g[c] = T(1) / (T(1) + std::exp(-a));
        const std::size_t o = (static_cast<std::size_t>(bi) * c_ + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) y.data[o + i] = x.data[o + i] * g[c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const int b = x_.shape[0];
    const std::size_t sp = x_.numel() / (static_cast<std::size_t>(b) * c_);
    Tensor<T> gx(x_.shape);
    std::vector<T> dpre2(c_), dh(h_), dpre1(h_), ds(c_);
    for (int bi = 0; bi < b; ++bi) {
      const T* g = &gate_[bi * c_];
      const T* hd = &hidden_[bi * h_];
      const T* s = &squeeze_[bi * c_];
      for (int c = 0; c < c_; ++c) {
        const std::size_t o = (static_cast<std::size_t>(bi) * c_ + c) * sp;
        const T dg = detail::dot(sp, gy.ptr() + o, x_.ptr() + o);
        dpre2[c] = dg * g[c] * (T(1) - g[c]);
        for (std::size_t i = 0; i < sp; ++i) gx.data[o + i] = gy.data[o + i] * g[c];
      }
      std::fill(dh.begin(), dh.end(), T(0));
      for (int c = 0; c < c_; ++c) {
        b2_.grad.data[c] += dpre2[c];
        for (int j = 0; j < h_; ++j) {
          w2_.grad.data[c * h_ + j] += dpre2[c] * hd[j];
          dh[j] += w2_.value.data[c * h_ + j] * dpre2[c];
        }
      }
      std::fill(ds.begin(), ds.end(), T(0));
      for (int j = 0; j < h_; ++j) {
        dpre1[j] = hd[j] > 0 ? dh[j] : T(0);
        b1_.grad.data[j] += dpre1[j];
        for (int c = 0; c < c_; ++c) {
          w1_.grad.data[j * c_ + c] += dpre1[j] * s[c];
          ds[c] += w1_.value.data[j * c_ + c] * dpre1[j];
        }
      }
      for (int c = 0; c < c_; ++c) {
        const std::size_t o = (static_cast<std::size_t>(bi) * c_ + c) * sp;
        const T share = ds[c] / static_cast<T>(sp);
        for (std::size_t i = 0; i < sp; ++i) gx.data[o + i] += share;
      }
    }
    return gx;
  }

  // Test hook: zero excitation weights and saturate the bias so every gate is 1.
  void force_unit_gate() {
    w2_.value.zero();
    std::fill(b2_.value.data.begin(), b2_.value.data.end(), T(50));
  }
  const std::vector<T>& last_gates() const { return gate_; }

  void collect(ParamList<T>& out) {
    out.push_back(&w1_);
    out.push_back(&b1_);
    out.push_back(&w2_);
    out.push_back(&b2_);
  }

 private:
  int c_ = 0, h_ = 0;
  Parameter<T> w1_, b1_, w2_, b2_;
  Tensor<T> x_;
  std::vector<T> squeeze_, hidden_, gate_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}, Init::uniform_fan_in, in),
        bias_(name + ".bias", {out}, Init::zeros) {}

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    const int b = x.shape[0];
    Tensor<T> y({b, out_});
    for (int bi = 0; bi < b; ++bi)
      for (int o = 0; o < out_; ++o)
        y.data[bi * out_ + o] =
            bias_.value.data[o] + detail::dot(in_, weight_.value.ptr() + o * in_, x.ptr() + bi * in_);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    const int b = x_.shape[0];
    Tensor<T> gx({b, in_});
    for (int bi = 0; bi < b; ++bi)
      for (int o = 0; o < out_; ++o) {
        const T g = gy.data[bi * out_ + o];
        bias_.grad.data[o] += g;
        detail::axpy(in_, g, x_.ptr() + bi * in_, weight_.grad.ptr() + o * in_);
        detail::axpy(in_, g, weight_.value.ptr() + o * in_, gx.ptr() + bi * in_);
      }
    return gx;
  }
  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_ = 0, out_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> x_;
};

/// [B, C, Z, Y, X] -> [B, C]
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    shape_ = x.shape;
    const int b = x.shape[0], c = x.shape[1];
    const std::size_t sp = x.numel() / (static_cast<std::size_t>(b) * c);
    Tensor<T> y({b, c});
    for (int i = 0; i < b * c; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < sp; ++j) acc += x.data[i * sp + j];
      y.data[i] = acc / static_cast<T>(sp);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(shape_);
    const std::size_t bc = static_cast<std::size_t>(shape_[0]) * shape_[1];
    const std::size_t sp = gx.numel() / bc;
    for (std::size_t i = 0; i < bc; ++i) {
      const T g = gy.data[i] / static_cast<T>(sp);
      std::fill(gx.ptr() + i * sp, gx.ptr() + (i + 1) * sp, g);
    }
    return gx;
  }

 private:
  std::vector<int> shape_;
};

/// Inverted dropout driven by an internally seeded generator.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double p = 0.0, std::uint64_t seed = 0) : p_(p), rng_(seed) {}
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    active_ = mode == Mode::train && p_ > 0.0;
    if (!active_) return x;
    keep_.assign(x.numel(), T(0));
    std::bernoulli_distribution keep(1.0 - p_);
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      keep_[i] = keep(rng_) ? scale : T(0);
      y.data[i] *= keep_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    if (!active_) return gy;
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] *= keep_[i];
    return gx;
  }

 private:
  double p_;
  std::mt19937_64 rng_;
  bool active_ = false;
  std::vector<T> keep_;
};

/// Nearest-neighbour upsampling by an integer factor per spatial axis.
template <typename T>
class Upsample {
 public:
  explicit Upsample(int factor = 2) : f_(factor) {}
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape;
    const int Z = x.shape[2], Y = x.shape[3], X = x.shape[4];
    Tensor<T> y({x.shape[0], x.shape[1], Z * f_, Y * f_, X * f_});
    const int bc = x.shape[0] * x.shape[1];
    std::size_t o = 0;
    for (int p = 0; p < bc; ++p)
      for (int z = 0; z < Z * f_; ++z)
        for (int yy = 0; yy < Y * f_; ++yy)
          for (int xx = 0; xx < X * f_; ++xx, ++o)
            y.data[o] = x.data[((static_cast<std::size_t>(p) * Z + z / f_) * Y + yy / f_) * X + xx / f_];
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(in_shape_);
    const int Z = in_shape_[2], Y = in_shape_[3], X = in_shape_[4];
    const int bc = in_shape_[0] * in_shape_[1];
    std::size_t o = 0;
    for (int p = 0; p < bc; ++p)
      for (int z = 0; z < Z * f_; ++z)
        for (int yy = 0; yy < Y * f_; ++yy)
          for (int xx = 0; xx < X * f_; ++xx, ++o)
            gx.data[((static_cast<std::size_t>(p) * Z + z / f_) * Y + yy / f_) * X + xx / f_] += gy.data[o];
    return gx;
  }

 private:
  int f_;
  std::vector<int> in_shape_;
};

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) {
    throw ShapeError("add: shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
  for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
}

}  // namespace dcmri::nn
