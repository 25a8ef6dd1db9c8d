#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambapupil/gemm.hpp"
#include "mambapupil/ops.hpp"
#include "mambapupil/tensor.hpp"

// Network layers built on the tensor core. Each layer is a free function
// that records its own backward rule.
namespace mambapupil {

enum class Mode { train, eval };

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t out_area() const { return out_h * out_w; }
};

// col (C*k*k, out_h*out_w) from one image (C, H, W).
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T(0)
                                                                             : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation over (B, Cin, H, W) with a square odd kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
  if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError("conv2d expects (B,C,H,W) input, (Cout,Cin,k,k) weight, (Cout) bias");
  }
  const int k = weight.dim(2);
  if (weight.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d kernel must be square and odd");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()));
  }
  if (bias.dim(0) != weight.dim(0)) throw ShapeError("conv2d bias size mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d stride/padding out of range");
  const int span_h = input.dim(2) + 2 * padding - k;
  const int span_w = input.dim(3) + 2 * padding - k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d output size is not integral for input " + shape_str(input.shape()));
  }
  detail::ConvGeometry g{static_cast<std::size_t>(input.dim(1)),
                         static_cast<std::size_t>(input.dim(2)),
                         static_cast<std::size_t>(input.dim(3)),
                         static_cast<std::size_t>(k),
                         static_cast<std::size_t>(stride),
                         static_cast<std::size_t>(padding),
                         static_cast<std::size_t>(span_h / stride + 1),
                         static_cast<std::size_t>(span_w / stride + 1)};
  const std::size_t batch = static_cast<std::size_t>(input.dim(0));
  const std::size_t cout = static_cast<std::size_t>(weight.dim(0));
  Tensor<T> out = detail::make_result<T>(
      Shape{input.dim(0), weight.dim(0), static_cast<int>(g.out_h), static_cast<int>(g.out_w)},
      {&input, &weight, &bias});

  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = cout * g.out_area();
  std::vector<T> col(g.patch() * g.out_area());
  for (std::size_t n = 0; n < batch; ++n) {
    T* dst = out.data().data() + n * out_stride;
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(dst + o * g.out_area(), g.out_area(), bias[o]);
    detail::im2col(g, input.data().data() + n * in_stride, col.data());
    gemm::nn(cout, g.out_area(), g.patch(), weight.data().data(), col.data(), dst);
  }

  if (out.requires_grad()) {
    out.node()->backward = [g, batch, cout, in_stride, out_stride](TensorNode<T>& self) {
      auto& nx = *self.inputs[0];
      auto& nw = *self.inputs[1];
      auto& nb = *self.inputs[2];
      std::vector<T> col(g.patch() * g.out_area());
      std::vector<T> dcol(nx.requires_grad ? g.patch() * g.out_area() : 0);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gout = self.grad.data() + n * out_stride;
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t o = 0; o < cout; ++o) {
            T acc = 0;
            for (std::size_t i = 0; i < g.out_area(); ++i) acc += gout[o * g.out_area() + i];
            gb[o] += acc;
          }
        }
        if (nw.requires_grad) {
          detail::im2col(g, nx.data.data() + n * in_stride, col.data());
          // dW (cout, patch) += gout (cout, area) * col^T
          gemm::nt(cout, g.patch(), g.out_area(), gout, col.data(), nw.ensure_grad().data());
        }
        if (nx.requires_grad) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm::tn(g.patch(), g.out_area(), cout, nw.data.data(), gout, dcol.data());
          detail::col2im(g, dcol.data(), nx.ensure_grad().data() + n * in_stride);
        }
      }
    };
  }
  return out;
}

/// Running statistics for batch normalization. `batches_tracked` is zero until
/// the first train-mode call.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> batches_tracked;  // shape (1)
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(int channels = 1)
      : running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))),
        batches_tracked(Tensor<T>::zeros({1})) {}
};

/// Per-channel normalization over (B, C, H, W). Train mode normalizes with
/// biased batch statistics and folds the unbiased variance into the running
/// estimate; eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, Mode mode) {
  if (input.rank() != 4) throw ShapeError("batchnorm2d expects (B,C,H,W)");
  const std::size_t B = static_cast<std::size_t>(input.dim(0));
  const std::size_t C = static_cast<std::size_t>(input.dim(1));
  const std::size_t area = static_cast<std::size_t>(input.dim(2)) * static_cast<std::size_t>(input.dim(3));
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.numel() != C) {
    throw ShapeError("batchnorm2d channel mismatch for input " + shape_str(input.shape()));
  }
  const std::size_t count = B * area;
  const T* px = input.data().data();

  std::vector<T> mu(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      T m = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = px + (b * C + c) * area;
        for (std::size_t i = 0; i < area; ++i) m += p[i];
      }
      m /= static_cast<T>(count);
      T v = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = px + (b * C + c) * area;
        for (std::size_t i = 0; i < area; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<T>(count);
      mu[c] = m;
      inv_std[c] = T(1) / std::sqrt(v + stats.eps);
      const T unbiased = count > 1 ? v * static_cast<T>(count) / static_cast<T>(count - 1) : v;
      stats.running_mean[c] = (T(1) - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
      stats.running_var[c] = (T(1) - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
    stats.batches_tracked[0] += T(1);
  } else {
    if (stats.batches_tracked[0] == T(0)) {
      throw std::logic_error("batchnorm2d: eval mode before any training step (running stats uninitialized)");
    }
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }

  Tensor<T> out = detail::make_result<T>(input.shape(), {&input, &gamma, &beta});
  std::vector<T> xhat(input.numel());
  T* po = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const T xh = (px[base + i] - mu[c]) * inv_std[c];
        xhat[base + i] = xh;
        po[base + i] = gamma[c] * xh + beta[c];
      }
    }
  }

  if (out.requires_grad()) {
    const bool batch_stats = mode == Mode::train;
    out.node()->backward = [B, C, area, count, batch_stats, inv_std,
                            xhat = std::move(xhat)](TensorNode<T>& self) {
      auto& nx = *self.inputs[0];
      auto& ng = *self.inputs[1];
      auto& nbeta = *self.inputs[2];
      const T* g = self.grad.data();
      for (std::size_t c = 0; c < C; ++c) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * area;
          for (std::size_t i = 0; i < area; ++i) {
            sum_g += g[base + i];
            sum_gx += g[base + i] * xhat[base + i];
          }
        }
        if (ng.requires_grad) ng.ensure_grad()[c] += sum_gx;
        if (nbeta.requires_grad) nbeta.ensure_grad()[c] += sum_g;
        if (!nx.requires_grad) continue;
        auto& gx = nx.ensure_grad();
        const T gamma_c = ng.data[c];
        const T n = static_cast<T>(count);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * area;
          for (std::size_t i = 0; i < area; ++i) {
            if (batch_stats) {
              gx[base + i] += gamma_c * inv_std[c] / n *
                              (n * g[base + i] - sum_g - xhat[base + i] * sum_gx);
            } else {
              gx[base + i] += gamma_c * inv_std[c] * g[base + i];
            }
          }
        }
      }
    };
  }
  return out;
}

/// Max pooling with a square window; trailing rows/columns that do not fill
/// a window are dropped (floor).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int kernel = 2, int stride = 2) {
  if (input.rank() != 4) throw ShapeError("maxpool2d expects (B,C,H,W)");
  const int oh = (input.dim(2) - kernel) / stride + 1;
  const int ow = (input.dim(3) - kernel) / stride + 1;
  if (input.dim(2) < kernel || input.dim(3) < kernel) {
    throw ShapeError("maxpool2d input " + shape_str(input.shape()) + " smaller than window");
  }
  const std::size_t planes = static_cast<std::size_t>(input.dim(0)) * static_cast<std::size_t>(input.dim(1));
  const std::size_t H = static_cast<std::size_t>(input.dim(2)), W = static_cast<std::size_t>(input.dim(3));
  Tensor<T> out = detail::make_result<T>(Shape{input.dim(0), input.dim(1), oh, ow}, {&input});
  std::vector<std::size_t> argmax(out.numel());
  const T* px = input.data().data();
  T* po = out.data().data();
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++o) {
        std::size_t best = p * H * W + static_cast<std::size_t>(y * stride) * W + static_cast<std::size_t>(x * stride);
        for (int dy = 0; dy < kernel; ++dy) {
          for (int dx = 0; dx < kernel; ++dx) {
            const std::size_t idx = p * H * W + static_cast<std::size_t>(y * stride + dy) * W +
                                    static_cast<std::size_t>(x * stride + dx);
            if (px[idx] > px[best]) best = idx;
          }
        }
        argmax[o] = best;
        po[o] = px[best];
      }
    }
  }
  if (out.requires_grad()) {
    out.node()->backward = [argmax = std::move(argmax)](TensorNode<T>& self) {
      auto& gi = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += self.grad[i];
    };
  }
  return out;
}

/// (B, C, H, W) -> (B, C) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool expects (B,C,H,W)");
  const std::size_t area = static_cast<std::size_t>(input.dim(2)) * static_cast<std::size_t>(input.dim(3));
  return mean_last(reshape(input, Shape{input.dim(0), input.dim(1), static_cast<int>(area)}));
}

/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& input, const Tensor<T>& gain, T eps = T(1e-5)) {
  const std::size_t D = static_cast<std::size_t>(input.dim(-1));
  if (gain.numel() != D) throw ShapeError("rmsnorm gain size mismatch");
  const std::size_t rows = input.numel() / D;
  Tensor<T> out = detail::make_result<T>(input.shape(), {&input, &gain});
  std::vector<T> inv_rms(rows);
  const T* px = input.data().data();
  T* po = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = 0;
    for (std::size_t i = 0; i < D; ++i) ms += px[r * D + i] * px[r * D + i];
    ms /= static_cast<T>(D);
    const T denom = std::sqrt(ms + eps);
    inv_rms[r] = denom > T(0) ? T(1) / denom : T(0);
    for (std::size_t i = 0; i < D; ++i) po[r * D + i] = px[r * D + i] / denom * gain[i];
    if (denom == T(0)) std::fill_n(po + r * D, D, T(0));
  }
  if (out.requires_grad()) {
    out.node()->backward = [D, rows, inv_rms = std::move(inv_rms)](TensorNode<T>& self) {
      auto& nx = *self.inputs[0];
      auto& ng = *self.inputs[1];
      const T* g = self.grad.data();
      const T* x = nx.data.data();
      const T* w = ng.data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T ir = inv_rms[r];
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t i = 0; i < D; ++i) gg[i] += g[r * D + i] * x[r * D + i] * ir;
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          T dot = 0;
          for (std::size_t i = 0; i < D; ++i) dot += g[r * D + i] * w[i] * x[r * D + i];
          const T coef = ir * ir * ir * dot / static_cast<T>(D);
          for (std::size_t i = 0; i < D; ++i) {
            gx[r * D + i] += ir * w[i] * g[r * D + i] - x[r * D + i] * coef;
          }
        }
      }
    };
  }
  return out;
}

/// Zeroes whole channels in train mode with probability `rate` and rescales
/// survivors by 1/(1-rate). The mask is drawn per (index along axis 0,
/// index along `channel_axis`) and broadcast over every other axis. Eval mode
/// returns the input unchanged.
template <typename T, typename Rng>
Tensor<T> spatial_dropout(const Tensor<T>& input, T rate, Mode mode, Rng& rng, int channel_axis = 1) {
  if (rate < T(0) || rate >= T(1)) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (mode == Mode::eval || rate == T(0)) return input;
  channel_axis = detail::normalize_axis(channel_axis, input.rank());
  if (channel_axis == 0) throw ShapeError("spatial_dropout channel axis must not be the batch axis");
  Shape mask_shape(input.shape().size(), 1);
  mask_shape[0] = input.dim(0);
  mask_shape[static_cast<std::size_t>(channel_axis)] = input.dim(channel_axis);
  Tensor<T> mask(mask_shape);
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T kept = T(1) / (T(1) - rate);
  for (auto& m : mask.data()) m = keep(rng) ? kept : T(0);
  return mul(input, mask);
}

}  // namespace mambapupil
